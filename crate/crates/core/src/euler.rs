//! Pseudo-spectral solver for the 2D incompressible Euler equation in
//! vorticity form, with the pressure diagnostics needed by the modulated
//! energy: u, p, the corrector U = d_a u^b d_b u^a = -lap p, and d_t p.
//!
//! Velocity is recovered by Biot-Savart u = grad^perp (-lap)^{-1} omega with
//! grad^perp f = (d_y f, -d_x f), so div u = 0 and curl u = omega hold
//! spectrally by construction.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::spectral::{PeriodicGrid, ScalarField, VectorField};
use crate::torus::Dim;
use std::io::{BufRead, BufReader, Read, Write};

/// Vorticity-form state of the 2D Euler solution.
#[derive(Clone, Debug)]
pub struct EulerState<T> {
    time: T,
    omega: ScalarField<T>,
}

/// Fields derived from the velocity at one instant.
#[derive(Clone, Debug)]
pub struct EulerDiagnostics<T> {
    pub u: VectorField<T>,
    pub p: ScalarField<T>,
    pub corrector: ScalarField<T>,
    pub dt_p: ScalarField<T>,
}

impl<T: Real> EulerState<T> {
    pub fn new(omega: ScalarField<T>) -> Result<Self> {
        if omega.grid().dim() != Dim::Two {
            return Err(Error::InvalidParameter("Euler dynamics are two-dimensional".into()));
        }
        let mut omega = omega;
        omega.set_mean(T::zero());
        Ok(EulerState { time: T::zero(), omega })
    }

    #[inline]
    pub fn time(&self) -> T {
        self.time
    }

    #[inline]
    pub fn omega(&self) -> &ScalarField<T> {
        &self.omega
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.omega.grid()
    }

    /// Biot-Savart velocity u = grad^perp (-lap)^{-1} omega.
    pub fn velocity(&self) -> VectorField<T> {
        velocity_from_omega(&self.omega)
    }

    /// One classical RK4 step of d_t omega = -u . grad omega with 2/3-rule
    /// dealiasing of the advection product. Rejects steps violating the CFL
    /// condition u_max dt m <= 1/2.
    pub fn step(&mut self, dt: T) -> Result<()> {
        if dt == T::zero() {
            return Err(Error::InvalidParameter("dt must be nonzero".into()));
        }
        let u = self.velocity();
        let u_max = u.linf_norm();
        let cfl = (u_max * dt.abs() * lit::<T>(self.grid().m() as f64)).to_f64().unwrap();
        if cfl > 0.5 {
            return Err(Error::CflViolation { cfl });
        }
        let k1 = advection_rhs(&self.omega);
        let k2 = advection_rhs(&self.omega.axpy(dt / lit::<T>(2.0), &k1));
        let k3 = advection_rhs(&self.omega.axpy(dt / lit::<T>(2.0), &k2));
        let k4 = advection_rhs(&self.omega.axpy(dt, &k3));
        let sixth = dt / lit::<T>(6.0);
        let third = dt / lit::<T>(3.0);
        let mut next = self.omega.axpy(sixth, &k1);
        next = next.axpy(third, &k2);
        next = next.axpy(third, &k3);
        next = next.axpy(sixth, &k4);
        next.set_mean(T::zero());
        self.omega = next;
        self.time += dt;
        Ok(())
    }

    /// All velocity-derived diagnostic fields at the current time.
    pub fn diagnostics(&self) -> EulerDiagnostics<T> {
        let u = self.velocity();
        let corrector = compute_corrector(&u);
        let p = corrector.inverse_laplacian();
        let dt_p = dt_pressure(&u);
        EulerDiagnostics { u, p, corrector, dt_p }
    }

    /// Checkpoint: one text header line "t m dt", then the binary field
    /// layout of omega.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, dt: T) -> Result<()> {
        writeln!(
            w,
            "{:.17e} {} {:.17e}",
            self.time.to_f64().unwrap(),
            self.grid().m(),
            dt.to_f64().unwrap()
        )?;
        self.omega.write_binary(&mut w)
    }

    pub fn read_checkpoint<R: Read>(r: R) -> Result<(Self, T)> {
        let mut reader = BufReader::new(r);
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::InvalidParameter("bad checkpoint header".into()));
        }
        let t: f64 = parts[0]
            .parse()
            .map_err(|_| Error::InvalidParameter("bad checkpoint time".into()))?;
        let dt: f64 = parts[2]
            .parse()
            .map_err(|_| Error::InvalidParameter("bad checkpoint dt".into()))?;
        let omega = ScalarField::read_binary(&mut reader)?;
        let mut state = EulerState::new(omega)?;
        state.time = lit::<T>(t);
        Ok((state, lit::<T>(dt)))
    }
}

/// u = grad^perp (-lap)^{-1} omega with grad^perp f = (d_y f, -d_x f).
pub fn velocity_from_omega<T: Real>(omega: &ScalarField<T>) -> VectorField<T> {
    let psi = omega.inverse_laplacian();
    let grad = psi.gradient();
    VectorField::new(vec![grad.component(1).clone(), grad.component(0).scaled(-T::one())])
}

fn advection_rhs<T: Real>(omega: &ScalarField<T>) -> ScalarField<T> {
    let u = velocity_from_omega(omega);
    let grad_w = omega.gradient();
    let ux_wx = u.component(0).multiply_dealiased(grad_w.component(0));
    let uy_wy = u.component(1).multiply_dealiased(grad_w.component(1));
    let mut rhs = ux_wx.axpy(T::one(), &uy_wy).scaled(-T::one());
    rhs.set_mean(T::zero());
    rhs
}

/// The corrector U = d_a u^b d_b u^a (= -lap p), with dealiased products and
/// the mean pinned to zero (it vanishes analytically for div-free u).
pub fn compute_corrector<T: Real>(u: &VectorField<T>) -> ScalarField<T> {
    let grid = u.grid();
    let grads: Vec<VectorField<T>> = u.components().iter().map(|c| c.gradient()).collect();
    let mut out = ScalarField::zeros(grid);
    for alpha in 0..2 {
        for beta in 0..2 {
            let term = grads[beta].component(alpha).multiply_dealiased(grads[alpha].component(beta));
            out = out.axpy(T::one(), &term);
        }
    }
    out.set_mean(T::zero());
    out
}

/// Pressure p = (-lap)^{-1} U, zero mean.
pub fn pressure<T: Real>(u: &VectorField<T>) -> ScalarField<T> {
    compute_corrector(u).inverse_laplacian()
}

/// Time derivative of the pressure for the Euler flow, derived by
/// differentiating U = d_a u^b d_b u^a along d_t u = -(u.grad)u - grad p:
///
///   d_t p = -2 (-lap)^{-1} [ d_a(u^c d_c u^b) d_b u^a ]
///           -2 (-lap)^{-1} [ d_a d_b p . d_b u^a ].
pub fn dt_pressure<T: Real>(u: &VectorField<T>) -> ScalarField<T> {
    let grid = u.grid();
    let grads: Vec<VectorField<T>> = u.components().iter().map(|c| c.gradient()).collect();
    let p = pressure(u);
    let grad_p = p.gradient();

    // first term: d_a (u^c d_c u^b) contracted with d_b u^a
    let mut first = ScalarField::zeros(grid);
    for beta in 0..2 {
        // advective derivative (u . grad) u^beta
        let mut adv = ScalarField::zeros(grid);
        for gamma in 0..2 {
            let term = u.component(gamma).multiply_dealiased(grads[beta].component(gamma));
            adv = adv.axpy(T::one(), &term);
        }
        let grad_adv = adv.gradient();
        for alpha in 0..2 {
            let prod = grad_adv.component(alpha).multiply_dealiased(grads[alpha].component(beta));
            first = first.axpy(T::one(), &prod);
        }
    }

    // second term: d_a d_b p . d_b u^a
    let mut second = ScalarField::zeros(grid);
    for alpha in 0..2 {
        let hess_row = grad_p.component(alpha).gradient();
        for beta in 0..2 {
            let prod = hess_row.component(beta).multiply_dealiased(grads[alpha].component(beta));
            second = second.axpy(T::one(), &prod);
        }
    }

    first.axpy(T::one(), &second).scaled(-lit::<T>(2.0)).inverse_laplacian()
}

/// Named initial vorticity fields.
pub mod presets {
    use super::*;

    /// Steady Taylor-Green cell: omega_0 = -4 pi sin(2 pi x) sin(2 pi y),
    /// whose Biot-Savart velocity is (-sin(2pix)cos(2piy), cos(2pix)sin(2piy)).
    pub fn taylor_green<T: Real>(grid: PeriodicGrid) -> ScalarField<T> {
        ScalarField::from_fn(grid, |x: &[T]| {
            -lit::<T>(4.0)
                * T::PI()
                * (lit::<T>(2.0) * T::PI() * x[0]).sin()
                * (lit::<T>(2.0) * T::PI() * x[1]).sin()
        })
    }

    /// Steady shear u = (cos 2 pi y, 0): omega_0 = 2 pi sin(2 pi y).
    pub fn shear<T: Real>(grid: PeriodicGrid) -> ScalarField<T> {
        ScalarField::from_fn(grid, |x: &[T]| {
            lit::<T>(2.0) * T::PI() * (lit::<T>(2.0) * T::PI() * x[1]).sin()
        })
    }

    /// Random band-limited vorticity: independent Gaussian-ish coefficients
    /// on modes 0 < |k|_inf <= max_mode, Hermitian-symmetrized, zero mean,
    /// normalized so the velocity has unit sup norm scale.
    pub fn random_bandlimited<T: Real>(
        grid: PeriodicGrid,
        seed: u64,
        max_mode: i64,
    ) -> ScalarField<T> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut modes = Vec::new();
        for kx in -max_mode..=max_mode {
            for ky in -max_mode..=max_mode {
                if (kx, ky) <= (0, 0) {
                    continue; // half space; conjugates added by the cosine form
                }
                let amp: f64 = rng.gen_range(-1.0..1.0);
                let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                modes.push((kx, ky, amp, phase));
            }
        }
        let omega = ScalarField::from_fn(grid, |x: &[T]| {
            let mut s = T::zero();
            for &(kx, ky, amp, ph) in &modes {
                let arg = lit::<T>(2.0) * T::PI()
                    * (lit::<T>(kx as f64) * x[0] + lit::<T>(ky as f64) * x[1])
                    + lit::<T>(ph);
                s += lit::<T>(amp) * arg.cos();
            }
            s
        });
        // normalize: |u| ~ |omega| / (2 pi |k|); target unit-order velocity
        let u = velocity_from_omega(&omega);
        let scale = u.linf_norm();
        if scale > T::zero() {
            omega.scaled(scale.recip())
        } else {
            omega
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn grid(m: usize) -> PeriodicGrid {
        PeriodicGrid::new(Dim::Two, m).unwrap()
    }

    fn taylor_green_velocity(g: PeriodicGrid) -> VectorField<f64> {
        // the spec's sign convention for the corrector test
        VectorField::new(vec![
            ScalarField::from_fn(g, |x: &[f64]| {
                (std::f64::consts::TAU * x[0]).sin() * (std::f64::consts::TAU * x[1]).cos()
            }),
            ScalarField::from_fn(g, |x: &[f64]| {
                -(std::f64::consts::TAU * x[0]).cos() * (std::f64::consts::TAU * x[1]).sin()
            }),
        ])
    }

    #[test]
    fn velocity_is_divergence_free_with_matching_curl() {
        let g = grid(64);
        let omega = presets::random_bandlimited::<f64>(g, 3, 6);
        let u = velocity_from_omega(&omega);
        assert!(u.divergence().l2_norm() < 1e-12);
        // curl u = d_x u_y - d_y u_x = omega
        let curl = u.component(1).gradient().component(0).axpy(
            -1.0,
            u.component(0).gradient().component(1),
        );
        let diff = curl.axpy(-1.0, &omega);
        assert!(diff.l2_norm() < 1e-10, "curl mismatch {}", diff.l2_norm());
    }

    #[test]
    fn corrector_vanishes_for_shear() {
        let g = grid(32);
        let u = VectorField::new(vec![
            ScalarField::from_fn(g, |x: &[f64]| (std::f64::consts::TAU * x[1]).cos()),
            ScalarField::zeros(g),
        ]);
        assert!(compute_corrector(&u).l2_norm() < 1e-12);
        assert!(pressure(&u).l2_norm() < 1e-12);
        assert!(compute_corrector(&VectorField::<f64>::zeros(g)).l2_norm() < 1e-15);
    }

    #[test]
    fn corrector_taylor_green_closed_form() {
        let g = grid(64);
        let u = taylor_green_velocity(g);
        let corr = compute_corrector(&u);
        let want = ScalarField::from_fn(g, |x: &[f64]| {
            4.0 * std::f64::consts::PI.powi(2)
                * ((2.0 * std::f64::consts::TAU * x[0]).cos()
                    + (2.0 * std::f64::consts::TAU * x[1]).cos())
        });
        let diff = corr.axpy(-1.0, &want);
        assert!(diff.l2_norm() < 1e-9, "U mismatch {}", diff.l2_norm());
        // brute-force pointwise check of the contraction at a few nodes
        let samples = corr.to_samples();
        let m = g.m();
        for &(i, j) in &[(3usize, 11usize), (17, 29), (40, 5)] {
            let x = i as f64 / m as f64;
            let y = j as f64 / m as f64;
            let tau = std::f64::consts::TAU;
            let du = [
                [tau * (tau * x).cos() * (tau * y).cos(), -tau * (tau * x).sin() * (tau * y).sin()],
                [tau * (tau * x).sin() * (tau * y).sin(), -tau * (tau * x).cos() * (tau * y).cos()],
            ];
            let mut brute = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    brute += du[b][a] * du[a][b];
                }
            }
            assert_relative_eq!(samples[i * m + j], brute, max_relative = 1e-10);
        }
    }

    #[test]
    fn pressure_taylor_green_closed_form() {
        let g = grid(64);
        let u = taylor_green_velocity(g);
        let p = pressure(&u);
        let want = ScalarField::from_fn(g, |x: &[f64]| {
            ((2.0 * std::f64::consts::TAU * x[0]).cos()
                + (2.0 * std::f64::consts::TAU * x[1]).cos())
                / 4.0
        });
        let diff = p.axpy(-1.0, &want);
        assert!(diff.l2_norm() < 1e-10);
        // -lap p = U spectrally
        let residual = p.laplacian().scaled(-1.0).axpy(-1.0, &compute_corrector(&u));
        assert!(residual.l2_norm() < 1e-12);
    }

    #[test]
    fn inverse_laplacian_of_tg_corrector_is_tg_pressure() {
        let g = grid(64);
        let u = taylor_green_velocity(g);
        let p = compute_corrector(&u).inverse_laplacian();
        let want = ScalarField::from_fn(g, |x: &[f64]| {
            ((2.0 * std::f64::consts::TAU * x[0]).cos()
                + (2.0 * std::f64::consts::TAU * x[1]).cos())
                / 4.0
        });
        assert!(p.axpy(-1.0, &want).l2_norm() < 1e-10);
    }

    #[test]
    fn taylor_green_is_steady() {
        let g = grid(128);
        let mut state = EulerState::new(presets::taylor_green::<f64>(g)).unwrap();
        let omega0 = state.omega().clone();
        let dt = 1e-3;
        for _ in 0..1000 {
            state.step(dt).unwrap();
        }
        let norm0 = omega0.linf_norm();
        let err = state.omega().axpy(-1.0, &omega0).linf_norm() / norm0;
        assert!(err < 1e-6, "Taylor-Green drift {err:e}");
    }

    #[test]
    fn shear_is_steady() {
        let g = grid(128);
        let mut state = EulerState::new(presets::shear::<f64>(g)).unwrap();
        let omega0 = state.omega().clone();
        for _ in 0..1000 {
            state.step(1e-3).unwrap();
        }
        let err = state.omega().axpy(-1.0, &omega0).linf_norm() / omega0.linf_norm();
        assert!(err < 1e-6, "shear drift {err:e}");
    }

    #[test]
    fn energy_and_enstrophy_conserved() {
        let g = grid(128);
        let omega = presets::random_bandlimited::<f64>(g, 11, 8).scaled(0.25);
        let mut state = EulerState::new(omega).unwrap();
        let u0 = state.velocity();
        let energy0: f64 =
            u0.component(0).l2_norm().powi(2) + u0.component(1).l2_norm().powi(2);
        let enstrophy0 = state.omega().l2_norm().powi(2);
        let dt = 1e-3;
        for _ in 0..1000 {
            state.step(dt).unwrap();
        }
        let u1 = state.velocity();
        let energy1: f64 =
            u1.component(0).l2_norm().powi(2) + u1.component(1).l2_norm().powi(2);
        let enstrophy1 = state.omega().l2_norm().powi(2);
        assert!((energy1 - energy0).abs() / energy0 < 1e-8, "energy drift");
        assert!((enstrophy1 - enstrophy0).abs() / enstrophy0 < 1e-8, "enstrophy drift");
    }

    #[test]
    fn time_reversal_recovers_initial_state() {
        let g = grid(128);
        let omega = presets::random_bandlimited::<f64>(g, 5, 8).scaled(0.25);
        let mut state = EulerState::new(omega).unwrap();
        let omega0 = state.omega().clone();
        let dt = 1e-3;
        for _ in 0..200 {
            state.step(dt).unwrap();
        }
        for _ in 0..200 {
            state.step(-dt).unwrap();
        }
        let err = state.omega().axpy(-1.0, &omega0).linf_norm();
        assert!(err < 1e-9, "reversal error {err:e}");
    }

    #[test]
    fn cfl_violation_rejected() {
        let g = grid(128);
        let mut state = EulerState::new(presets::taylor_green::<f64>(g)).unwrap();
        match state.step(0.1) {
            Err(Error::CflViolation { .. }) => {}
            other => panic!("expected CFL rejection, got {other:?}"),
        }
    }

    #[test]
    fn spatial_convergence_is_spectral() {
        // one coarse advection step of an analytically known steady state:
        // the m=64 residual must beat m=16 by a huge factor
        let err_at = |m: usize| {
            let g = grid(m);
            let mut state = EulerState::new(presets::taylor_green::<f64>(g)).unwrap();
            let omega0 = state.omega().clone();
            for _ in 0..10 {
                state.step(1e-4).unwrap();
            }
            state.omega().axpy(-1.0, &omega0).l2_norm() / omega0.l2_norm()
        };
        // Taylor-Green is exactly band-limited, so instead perturb it with a
        // higher mode to exercise truncation
        let err_pert = |m: usize| {
            let g = grid(m);
            let omega = presets::taylor_green::<f64>(g)
                .axpy(0.5, &presets::random_bandlimited::<f64>(g, 2, 5));
            let mut state = EulerState::new(omega).unwrap();
            let mut reference = EulerState::new(
                ScalarField::from_samples(
                    grid(128),
                    &upsample(state.omega(), 128),
                ),
            )
            .unwrap();
            for _ in 0..20 {
                state.step(5e-4).unwrap();
                reference.step(5e-4).unwrap();
            }
            let coarse_up = ScalarField::from_samples(grid(128), &upsample(state.omega(), 128));
            coarse_up.axpy(-1.0, reference.omega()).l2_norm() / reference.omega().l2_norm()
        };
        let e64 = err_at(64);
        assert!(e64 < 1e-10, "band-limited steady state should be near-exact, got {e64:e}");
        let (c32, c64) = (err_pert(32), err_pert(64));
        assert!(
            c32 / c64.max(1e-15) > 1e3 || c64 < 1e-12,
            "expected spectral decay, got {c32:e} -> {c64:e}"
        );
    }

    fn upsample(f: &ScalarField<f64>, m: usize) -> Vec<f64> {
        let factor = m / f.grid().m();
        f.to_samples_oversampled(factor).1
    }

    #[test]
    fn dt_pressure_zero_for_steady_states() {
        let g = grid(64);
        for omega in [presets::taylor_green::<f64>(g), presets::shear::<f64>(g)] {
            let u = velocity_from_omega(&omega);
            let dtp = dt_pressure(&u);
            assert!(dtp.l2_norm() < 1e-8, "steady dt_p = {:e}", dtp.l2_norm());
        }
        assert!(dt_pressure(&VectorField::<f64>::zeros(g)).l2_norm() < 1e-14);
    }

    #[test]
    fn dt_pressure_matches_finite_difference() {
        let g = grid(64);
        let mut state = EulerState::new(presets::random_bandlimited::<f64>(g, 21, 8)).unwrap();
        // move off the initial time to avoid special structure
        for _ in 0..10 {
            state.step(1e-3).unwrap();
        }
        let dtp = dt_pressure(&state.velocity());
        let h = 1e-4;
        let mut fwd = state.clone();
        fwd.step(h).unwrap();
        let mut bwd = state.clone();
        bwd.step(-h).unwrap();
        let p_plus = pressure(&fwd.velocity());
        let p_minus = pressure(&bwd.velocity());
        let fd = p_plus.axpy(-1.0, &p_minus).scaled(1.0 / (2.0 * h));
        let rel = fd.axpy(-1.0, &dtp).l2_norm() / dtp.l2_norm();
        assert!(rel < 1e-4, "dt_p finite-difference mismatch {rel:e}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = grid(32);
        let mut state = EulerState::new(presets::taylor_green::<f64>(g)).unwrap();
        state.step(1e-3).unwrap();
        let mut buf = Vec::new();
        state.write_checkpoint(&mut buf, 1e-3).unwrap();
        let (restored, dt) = EulerState::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_abs_diff_eq!(dt, 1e-3, epsilon = 1e-18);
        assert_abs_diff_eq!(restored.time(), state.time(), epsilon = 1e-15);
        assert!(restored.omega().axpy(-1.0, state.omega()).l2_norm() < 1e-12);
    }
}
