//! Independent brute-force evaluators backing the validation suites. These
//! deliberately avoid the spectral assembly paths they are used to check:
//! singular integrals are split with a compactly supported radial cutoff and
//! evaluated by grid quadrature away from the singularity plus polar
//! Gauss-Legendre quadrature across it.

use crate::coulomb::{gauss_legendre, EwaldSum};
use crate::energy::BackgroundDensity;
use crate::spectral::{PeriodicGrid, ScalarField, VectorField};
use crate::torus::{Dim, Displacement, TorusPoint};
use rayon::prelude::*;

/// Radius of the smooth cutoff around the kernel singularity.
const CUT_RADIUS: f64 = 0.12;

/// C^8 polynomial step: 0 for t <= 0, 1 for t >= 1 (normalized incomplete
/// beta with p = 8).
fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let p = 8u32;
    // int_0^t s^p (1-s)^p ds / B(p+1, p+1)
    let mut acc = 0.0;
    let mut binom = 1.0;
    for j in 0..=p {
        if j > 0 {
            binom *= (p - j + 1) as f64 / j as f64;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        let e = (p + j + 1) as f64;
        acc += sign * binom * t.powf(e) / e;
    }
    let mut b_full = 0.0;
    let mut binom = 1.0;
    for j in 0..=p {
        if j > 0 {
            binom *= (p - j + 1) as f64 / j as f64;
        }
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        b_full += sign * binom / (p + j + 1) as f64;
    }
    acc / b_full
}

/// Radial cutoff: 1 for r <= delta/2, 0 for r >= delta.
fn cutoff(r: f64) -> f64 {
    1.0 - smooth_step((r - CUT_RADIUS / 2.0) / (CUT_RADIUS / 2.0))
}

/// K_v(x, y) = (v(x) - v(y)) . grad g(x - y) for given v values.
fn kernel_value(
    ewald: &EwaldSum<f64>,
    v_x: &[f64; 3],
    v_y: &[f64; 3],
    disp: &Displacement<f64>,
) -> f64 {
    let grad = ewald.grad_g(disp).expect("kernel evaluated away from the diagonal");
    let mut acc = 0.0;
    for ax in 0..2 {
        acc += (v_x[ax] - v_y[ax]) * grad[ax];
    }
    acc
}

/// int K_v(x, y) mu(y) dy by cutoff splitting: grid quadrature of the smooth
/// complement plus polar quadrature across the singularity at y = x.
fn field_integral_at(
    ewald: &EwaldSum<f64>,
    x: &TorusPoint<f64>,
    v_x: &[f64; 3],
    v: &VectorField<f64>,
    mu: &BackgroundDensity<f64>,
    grid_m: usize,
    v_samples: &[Vec<f64>; 2],
    mu_samples: &[f64],
) -> f64 {
    let h2 = 1.0 / (grid_m * grid_m) as f64;
    let mut far = 0.0;
    for iy in 0..grid_m {
        for jy in 0..grid_m {
            let y = TorusPoint::new(
                &[iy as f64 / grid_m as f64, jy as f64 / grid_m as f64],
                Dim::Two,
            );
            let disp = x.displacement_to(&y);
            let w = 1.0 - cutoff(disp.norm());
            if w == 0.0 {
                continue;
            }
            let flat = iy * grid_m + jy;
            let v_y = [v_samples[0][flat], v_samples[1][flat], 0.0];
            far += w * kernel_value(ewald, v_x, &v_y, &disp) * mu_samples[flat];
        }
    }
    far *= h2;

    // polar part over the cutoff disk
    let (r_nodes, r_weights) = gauss_legendre::<f64>(32);
    let n_theta = 64;
    let mut near = 0.0;
    for (rn, rw) in r_nodes.iter().zip(&r_weights) {
        let r = CUT_RADIUS * 0.5 * (rn + 1.0);
        let jac = CUT_RADIUS * 0.5 * rw * r;
        let w = cutoff(r);
        if w == 0.0 {
            continue;
        }
        for jt in 0..n_theta {
            let theta = std::f64::consts::TAU * jt as f64 / n_theta as f64;
            let y = x.translated(&[r * theta.cos(), r * theta.sin()]);
            let disp = x.displacement_to(&y);
            if disp.norm() == 0.0 {
                continue;
            }
            let vy3 = v.evaluate_at(&[y]);
            let muy = mu.field().evaluate_at(&[y])[0];
            near += jac * w * kernel_value(ewald, v_x, &vy3[0], &disp) * muy
                * (std::f64::consts::TAU / n_theta as f64);
        }
    }
    far + near
}

/// Brute-force renormalized commutator: O(N^2) pair sum plus grid/polar
/// quadrature of the particle-field and field-field integrals. `grid_m` is
/// the quadrature grid (256 is adequate for band-limited v, mu);
/// `field_grid_m` the coarse grid for the outer field-field integral (exact
/// once it resolves the combined bandwidth of v and mu).
pub fn commutator_brute_force(
    ewald: &EwaldSum<f64>,
    v: &VectorField<f64>,
    positions: &[TorusPoint<f64>],
    mu: &BackgroundDensity<f64>,
    grid_m: usize,
    field_grid_m: usize,
) -> f64 {
    let n = positions.len();
    let nf = n as f64;
    let quad_grid = PeriodicGrid::new(Dim::Two, grid_m).unwrap();
    let v_samples = [
        resample(v.component(0), quad_grid),
        resample(v.component(1), quad_grid),
    ];
    let mu_samples = resample(mu.field(), quad_grid);

    // pair part
    let v_at = v.evaluate_at(positions);
    let mut pair = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let disp = positions[i].displacement_to(&positions[j]);
            pair += kernel_value(ewald, &v_at[i], &v_at[j], &disp);
        }
    }
    pair /= nf * nf;

    // particle-field part
    let cross: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            field_integral_at(
                ewald,
                &positions[i],
                &v_at[i],
                v,
                mu,
                grid_m,
                &v_samples,
                &mu_samples,
            )
        })
        .sum::<f64>()
        * 2.0
        / nf;

    // field-field part: w(x) = int K_v(x, y) mu(y) dy is band-limited in x
    // (bandwidth of v plus mu), so a coarse exact quadrature suffices
    let mx = field_grid_m;
    let v_field_at: Vec<[f64; 3]> = {
        let pts: Vec<TorusPoint<f64>> = (0..mx * mx)
            .map(|f| {
                TorusPoint::new(
                    &[(f / mx) as f64 / mx as f64, (f % mx) as f64 / mx as f64],
                    Dim::Two,
                )
            })
            .collect();
        v.evaluate_at(&pts)
    };
    let mu_field_at: Vec<f64> = {
        let pts: Vec<TorusPoint<f64>> = (0..mx * mx)
            .map(|f| {
                TorusPoint::new(
                    &[(f / mx) as f64 / mx as f64, (f % mx) as f64 / mx as f64],
                    Dim::Two,
                )
            })
            .collect();
        mu.field().evaluate_at(&pts)
    };
    let background: f64 = (0..mx * mx)
        .into_par_iter()
        .map(|f| {
            let x = TorusPoint::new(
                &[(f / mx) as f64 / mx as f64, (f % mx) as f64 / mx as f64],
                Dim::Two,
            );
            let w = field_integral_at(
                ewald,
                &x,
                &v_field_at[f],
                v,
                mu,
                grid_m,
                &v_samples,
                &mu_samples,
            );
            w * mu_field_at[f]
        })
        .sum::<f64>()
        / (mx * mx) as f64;

    pair - cross + background
}

fn resample(f: &ScalarField<f64>, grid: PeriodicGrid) -> Vec<f64> {
    if f.grid() == grid {
        return f.to_samples();
    }
    let factor = grid.m() / f.grid().m();
    if factor >= 1 && factor.is_power_of_two() && f.grid().m() * factor == grid.m() {
        return f.to_samples_oversampled(factor).1;
    }
    let pts: Vec<TorusPoint<f64>> = (0..grid.len())
        .map(|flat| {
            TorusPoint::new(
                &[
                    (flat / grid.m()) as f64 / grid.m() as f64,
                    (flat % grid.m()) as f64 / grid.m() as f64,
                ],
                Dim::Two,
            )
        })
        .collect();
    f.evaluate_at(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_step_is_a_step() {
        assert_eq!(smooth_step(-1.0), 0.0);
        assert_eq!(smooth_step(2.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-9, "odd symmetry about 1/2");
        assert!(smooth_step(0.25) < smooth_step(0.75));
    }

    #[test]
    fn cutoff_partition() {
        assert_eq!(cutoff(0.0), 1.0);
        assert_eq!(cutoff(CUT_RADIUS / 2.0 - 1e-9), 1.0);
        assert!(cutoff(CUT_RADIUS) < 1e-15);
    }
}
