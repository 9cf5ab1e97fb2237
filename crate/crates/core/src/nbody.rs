//! Newtonian particle dynamics on the torus with weak Coulomb coupling:
//!
//!   dot x_i = v_i,
//!   dot v_i = -(1 / eps^2 N) sum_{j != i} grad g(x_i - x_j),
//!
//! integrated by velocity Verlet (kick-drift-kick). Pair sums use the Ewald
//! split with the reciprocal part accumulated through structure factors, so
//! a force evaluation costs O(N^2) short-range work plus O(N K) reciprocal
//! work. Summation order is fixed (particles in index order, images nearest
//! first, modes in table order), making results bit-reproducible across
//! thread counts.

use crate::coulomb::EwaldSum;
use crate::error::{Error, Result};
use crate::scalar::{lit, Real};
use crate::spectral::VectorField;
use crate::torus::{Dim, TorusPoint};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Phase-space state of the N-particle system plus its scaling parameters.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble<T> {
    positions: Vec<TorusPoint<T>>,
    velocities: Vec<[T; 3]>,
    epsilon: T,
    theta: T,
    time: T,
    dim: Dim,
}

impl<T: Real> ParticleEnsemble<T> {
    /// Build with eps derived from the supercritical scaling eps^2 N = N^theta.
    pub fn from_theta(
        positions: Vec<TorusPoint<T>>,
        velocities: Vec<[T; 3]>,
        theta: T,
    ) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::InvalidParameter("need at least two particles".into()));
        }
        let nf = lit::<T>(n as f64);
        let epsilon = nf.powf((theta - T::one()) / lit::<T>(2.0));
        Self::with_epsilon_theta(positions, velocities, epsilon, theta)
    }

    /// Build with eps given directly (quasineutral-style runs); theta is
    /// recorded from eps^2 N = N^theta.
    pub fn with_epsilon(
        positions: Vec<TorusPoint<T>>,
        velocities: Vec<[T; 3]>,
        epsilon: T,
    ) -> Result<Self> {
        let n = positions.len();
        let nf = lit::<T>(n as f64);
        let theta = (epsilon * epsilon * nf).ln() / nf.ln();
        Self::with_epsilon_theta(positions, velocities, epsilon, theta)
    }

    fn with_epsilon_theta(
        positions: Vec<TorusPoint<T>>,
        velocities: Vec<[T; 3]>,
        epsilon: T,
        theta: T,
    ) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(Error::InvalidParameter("need at least two particles".into()));
        }
        if velocities.len() != n {
            return Err(Error::InvalidParameter("positions/velocities length mismatch".into()));
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        let dim = positions[0].dim();
        if positions.iter().any(|p| p.dim() != dim) {
            return Err(Error::InvalidParameter("mixed dimensions in ensemble".into()));
        }
        Ok(ParticleEnsemble { positions, velocities, epsilon, theta, time: T::zero(), dim })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> Dim {
        self.dim
    }

    #[inline]
    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    #[inline]
    pub fn theta(&self) -> T {
        self.theta
    }

    #[inline]
    pub fn time(&self) -> T {
        self.time
    }

    #[inline]
    pub fn positions(&self) -> &[TorusPoint<T>] {
        &self.positions
    }

    #[inline]
    pub fn velocities(&self) -> &[[T; 3]] {
        &self.velocities
    }

    pub fn velocities_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.velocities
    }

    /// Total momentum sum_i v_i.
    pub fn momentum(&self) -> [T; 3] {
        let mut p = [T::zero(); 3];
        for v in &self.velocities {
            for (ax, pv) in p.iter_mut().enumerate() {
                *pv += v[ax];
            }
        }
        p
    }

    /// JSONL trajectory record {t, positions, velocities}.
    pub fn write_jsonl_record<W: Write>(&self, mut w: W) -> Result<()> {
        let record = TrajectoryRecord {
            t: self.time.to_f64().unwrap(),
            positions: self
                .positions
                .iter()
                .map(|p| p.coords().iter().map(|c| c.to_f64().unwrap()).collect())
                .collect(),
            velocities: self
                .velocities
                .iter()
                .map(|v| v[..self.dim.as_usize()].iter().map(|c| c.to_f64().unwrap()).collect())
                .collect(),
        };
        serde_json::to_writer(&mut w, &record)
            .map_err(|e| Error::InvalidParameter(format!("jsonl encode: {e}")))?;
        writeln!(w)?;
        Ok(())
    }

    /// Binary snapshot: u32 d, u64 N, f64 t, eps, theta, then positions and
    /// velocities as little-endian f64 triples truncated to d lanes.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim.as_usize() as u32).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for v in [self.time, self.epsilon, self.theta] {
            w.write_all(&v.to_f64().unwrap().to_le_bytes())?;
        }
        for p in &self.positions {
            for c in p.coords() {
                w.write_all(&c.to_f64().unwrap().to_le_bytes())?;
            }
        }
        for v in &self.velocities {
            for c in &v[..self.dim.as_usize()] {
                w.write_all(&c.to_f64().unwrap().to_le_bytes())?;
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct TrajectoryRecord {
    t: f64,
    positions: Vec<Vec<f64>>,
    velocities: Vec<Vec<f64>>,
}

/// How initial data is sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    IidUniform,
    PerturbedLattice,
}

/// Paper-conformant initial data: positions iid uniform (or a jittered
/// lattice), velocities v_i = u0(x_i) + eta_N xi_i with xi_i uniform in the
/// unit ball.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct InitialDataSpec {
    pub mode: InitMode,
    pub velocity_noise: f64,
    pub rng_seed: u64,
}

/// Sample an ensemble; deterministic given the seed. Coincident positions
/// (measure zero) are resampled.
pub fn sample_initial<T: Real>(
    spec: &InitialDataSpec,
    n: usize,
    theta: T,
    u0: &VectorField<T>,
) -> Result<ParticleEnsemble<T>> {
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two particles".into()));
    }
    if spec.velocity_noise < 0.0 || !spec.velocity_noise.is_finite() {
        return Err(Error::InvalidParameter("velocity noise must be finite and >= 0".into()));
    }
    let dim = u0.grid().dim();
    let d = dim.as_usize();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let positions = loop {
        let pts: Vec<TorusPoint<T>> = match spec.mode {
            InitMode::IidUniform => (0..n)
                .map(|_| {
                    let c: Vec<T> = (0..d).map(|_| lit::<T>(rng.gen_range(0.0..1.0))).collect();
                    TorusPoint::new(&c, dim)
                })
                .collect(),
            InitMode::PerturbedLattice => {
                let side = (n as f64).powf(1.0 / d as f64).round() as usize;
                if side.pow(d as u32) != n {
                    return Err(Error::InvalidParameter(format!(
                        "perturbed lattice needs N = side^{d}, got {n}"
                    )));
                }
                let jitter = 0.25 / side as f64;
                let mut pts = Vec::with_capacity(n);
                let mut idx = vec![0usize; d];
                for flat in 0..n {
                    let mut rem = flat;
                    for ax in (0..d).rev() {
                        idx[ax] = rem % side;
                        rem /= side;
                    }
                    let c: Vec<T> = idx
                        .iter()
                        .map(|&i| {
                            lit::<T>(
                                (i as f64 + 0.5) / side as f64
                                    + rng.gen_range(-jitter..jitter),
                            )
                        })
                        .collect();
                    pts.push(TorusPoint::new(&c, dim));
                }
                pts
            }
        };
        if min_pair_distance(&pts).0 > T::zero() {
            break pts;
        }
    };
    let base = u0.evaluate_at(&positions);
    let noise = lit::<T>(spec.velocity_noise);
    let velocities: Vec<[T; 3]> = base
        .into_iter()
        .map(|mut v| {
            if spec.velocity_noise > 0.0 {
                // uniform in the unit ball by rejection
                let xi: [f64; 3] = loop {
                    let mut c = [0.0; 3];
                    for lane in c.iter_mut().take(d) {
                        *lane = rng.gen_range(-1.0..1.0);
                    }
                    if c.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                        break c;
                    }
                };
                for ax in 0..d {
                    v[ax] += noise * lit::<T>(xi[ax]);
                }
            }
            v
        })
        .collect();
    ParticleEnsemble::from_theta(positions, velocities, theta)
}

/// Minimum pairwise minimum-image distance and per-particle nearest-neighbor
/// distances (O(N^2) scan).
pub fn min_pair_distance<T: Real>(positions: &[TorusPoint<T>]) -> (T, Vec<T>) {
    let n = positions.len();
    let nn: Vec<T> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = T::infinity();
            for j in 0..n {
                if j != i {
                    best = best.min(positions[i].displacement_to(&positions[j]).norm());
                }
            }
            best
        })
        .collect();
    let global = nn.iter().fold(T::infinity(), |a, &b| a.min(b));
    (global, nn)
}

/// Per-particle pair sums over the Ewald kernel. `grad[i] = sum_{j != i}
/// grad g(x_i - x_j)` and `potential[i] = sum_{j != i} g(x_i - x_j)`.
pub struct PairSums<T> {
    pub potential: Vec<T>,
    pub grad: Vec<[T; 3]>,
    pub min_dist: T,
}

/// Structure factors S(k) = sum_j e^{2 pi i k.x_j} over the Ewald
/// reciprocal table.
fn structure_factors<T: Real>(
    ewald: &EwaldSum<T>,
    positions: &[TorusPoint<T>],
) -> Vec<Complex<T>> {
    let two_pi = lit::<T>(2.0) * T::PI();
    ewald
        .recip_modes()
        .par_iter()
        .map(|mode| {
            let mut acc = Complex { re: T::zero(), im: T::zero() };
            for p in positions {
                let x = p.coords();
                let mut phase = T::zero();
                for (ax, &c) in x.iter().enumerate() {
                    phase += lit::<T>(mode.k[ax] as f64) * c;
                }
                let (s, c) = (two_pi * phase).sin_cos();
                acc = acc + Complex { re: c, im: s };
            }
            acc
        })
        .collect()
}

/// Compute the per-particle pair sums (potential, gradient, minimum
/// distance) in one pass.
pub fn pair_sums<T: Real>(ewald: &EwaldSum<T>, positions: &[TorusPoint<T>]) -> Result<PairSums<T>> {
    let n = positions.len();
    let d = ewald.dim().as_usize();
    let two_pi = lit::<T>(2.0) * T::PI();
    let sf = structure_factors(ewald, positions);
    let self_const = {
        // per-pair constant of the Ewald form: g = real + recip - 1/(4 a^2)
        let alpha = lit::<T>(ewald.params().alpha);
        (lit::<T>(4.0) * alpha * alpha).recip()
    };

    struct Row<T> {
        potential: T,
        grad: [T; 3],
        min_dist: T,
    }

    let rows: Vec<Row<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = &positions[i];
            let mut pot = T::zero();
            let mut grad = [T::zero(); 3];
            let mut min_d = T::infinity();
            // short-range: direct pair loop, minimum image plus near shells
            for (j, xj) in positions.iter().enumerate() {
                if j == i {
                    continue;
                }
                let disp = xi.displacement_to(xj);
                min_d = min_d.min(disp.norm());
                let (g_real, grad_real) = ewald_real_part(ewald, disp.vector(), d);
                pot += g_real;
                for ax in 0..d {
                    grad[ax] += grad_real[ax];
                }
            }
            // reciprocal: structure factors
            let x = xi.coords();
            for (mode, s) in ewald.recip_modes().iter().zip(&sf) {
                let mut phase = T::zero();
                for (ax, &c) in x.iter().enumerate() {
                    phase += lit::<T>(mode.k[ax] as f64) * c;
                }
                let (sp, cp) = (two_pi * phase).sin_cos();
                // e^{i phi} conj(S): Re = cp S.re + sp S.im, Im = sp S.re - cp S.im
                let re = cp * s.re + sp * s.im;
                let im = sp * s.re - cp * s.im;
                let wc = mode.weight * mode.coeff;
                pot += wc * (re - T::one()); // subtract the j = i term
                let f = wc * im * two_pi;
                for ax in 0..d {
                    grad[ax] -= f * lit::<T>(mode.k[ax] as f64);
                }
            }
            pot -= lit::<T>((n - 1) as f64) * self_const;
            Row { potential: pot, grad, min_dist: min_d }
        })
        .collect();

    let min_dist = rows.iter().fold(T::infinity(), |a, r| a.min(r.min_dist));
    if !(min_dist > T::zero()) {
        return Err(Error::Singularity);
    }
    Ok(PairSums {
        potential: rows.iter().map(|r| r.potential).collect(),
        grad: rows.iter().map(|r| r.grad).collect(),
        min_dist,
    })
}

/// Short-range (screened) part of g and grad g for one pair, summed over the
/// image shells that can contribute at the configured alpha.
#[inline]
fn ewald_real_part<T: Real>(ewald: &EwaldSum<T>, v: &[T], d: usize) -> (T, [T; 3]) {
    let alpha = lit::<T>(ewald.params().alpha);
    let cut2 = lit::<T>(45.0) / (alpha * alpha); // screened kernel < 1e-19 beyond
    let shells = ewald.params().real_cutoff;
    let mut g = T::zero();
    let mut grad = [T::zero(); 3];
    let four_pi = lit::<T>(4.0) * T::PI();
    let two_pi = lit::<T>(2.0) * T::PI();
    let mut body = |img: [T; 3], r2: T| {
        let a2r2 = alpha * alpha * r2;
        match d {
            2 => {
                g += a2r2.exp_int_e1() / four_pi;
                let s = -(-a2r2).exp() / (two_pi * r2);
                grad[0] += s * img[0];
                grad[1] += s * img[1];
            }
            _ => {
                let r = r2.sqrt();
                let e = (alpha * r).erfc();
                g += e / (four_pi * r);
                let s = -(e / (r2 * r)
                    + lit::<T>(2.0) * alpha * (-a2r2).exp() / (T::PI().sqrt() * r2))
                    / four_pi;
                grad[0] += s * img[0];
                grad[1] += s * img[1];
                grad[2] += s * img[2];
            }
        }
    };
    if d == 2 {
        for nx in -shells..=shells {
            for ny in -shells..=shells {
                let ix = v[0] + lit::<T>(nx as f64);
                let iy = v[1] + lit::<T>(ny as f64);
                let r2 = ix * ix + iy * iy;
                if r2 <= cut2 {
                    body([ix, iy, T::zero()], r2);
                }
            }
        }
    } else {
        for nx in -shells..=shells {
            for ny in -shells..=shells {
                for nz in -shells..=shells {
                    let ix = v[0] + lit::<T>(nx as f64);
                    let iy = v[1] + lit::<T>(ny as f64);
                    let iz = v[2] + lit::<T>(nz as f64);
                    let r2 = ix * ix + iy * iy + iz * iz;
                    if r2 <= cut2 {
                        body([ix, iy, iz], r2);
                    }
                }
            }
        }
    }
    (g, grad)
}

/// Forces F_i = -(1 / eps^2 N) sum_{j != i} grad g(x_i - x_j).
pub fn total_force<T: Real>(
    ewald: &EwaldSum<T>,
    ensemble: &ParticleEnsemble<T>,
) -> Result<Vec<[T; 3]>> {
    let sums = pair_sums(ewald, ensemble.positions())?;
    Ok(force_from_sums(ensemble, &sums))
}

fn force_from_sums<T: Real>(ensemble: &ParticleEnsemble<T>, sums: &PairSums<T>) -> Vec<[T; 3]> {
    let scale =
        -(ensemble.epsilon * ensemble.epsilon * lit::<T>(ensemble.len() as f64)).recip();
    sums.grad
        .iter()
        .map(|g| {
            let mut f = [T::zero(); 3];
            for ax in 0..ensemble.dim.as_usize() {
                f[ax] = scale * g[ax];
            }
            f
        })
        .collect()
}

/// Conserved energy per particle:
/// (1/2N) sum |v_i|^2 + (1 / 2 eps^2 N^2) sum_{i != j} g(x_i - x_j).
pub fn total_energy<T: Real>(ewald: &EwaldSum<T>, ensemble: &ParticleEnsemble<T>) -> Result<T> {
    let sums = pair_sums(ewald, ensemble.positions())?;
    Ok(energy_from_sums(ewald, ensemble, &sums))
}

fn energy_from_sums<T: Real>(
    _ewald: &EwaldSum<T>,
    ensemble: &ParticleEnsemble<T>,
    sums: &PairSums<T>,
) -> T {
    let n = lit::<T>(ensemble.len() as f64);
    let kinetic = ensemble
        .velocities
        .iter()
        .map(|v| v.iter().map(|&c| c * c).sum::<T>())
        .sum::<T>()
        / (lit::<T>(2.0) * n);
    let pair: T = sums.potential.iter().copied().sum();
    let eps2 = ensemble.epsilon * ensemble.epsilon;
    kinetic + pair / (lit::<T>(2.0) * eps2 * n * n)
}

/// One velocity-Verlet step (kick-drift-kick). `entry_force`, when given,
/// must be the force at the current positions; the force at the new
/// positions is returned for reuse. Steps that bring particles within
/// `collision_floor` are rejected without mutating the ensemble.
pub fn leapfrog_step<T: Real>(
    ensemble: &mut ParticleEnsemble<T>,
    ewald: &EwaldSum<T>,
    dt: T,
    collision_floor: T,
    entry_force: Option<Vec<[T; 3]>>,
) -> Result<Vec<[T; 3]>> {
    if dt == T::zero() {
        return Err(Error::InvalidParameter("dt must be nonzero".into()));
    }
    let d = ensemble.dim.as_usize();
    let force0 = match entry_force {
        Some(f) => f,
        None => total_force(ewald, ensemble)?,
    };
    let half = dt / lit::<T>(2.0);
    let mut velocities = ensemble.velocities.clone();
    for (v, f) in velocities.iter_mut().zip(&force0) {
        for ax in 0..d {
            v[ax] += half * f[ax];
        }
    }
    let positions: Vec<TorusPoint<T>> = ensemble
        .positions
        .iter()
        .zip(&velocities)
        .map(|(p, v)| {
            let shift: Vec<T> = (0..d).map(|ax| v[ax] * dt).collect();
            p.translated(&shift)
        })
        .collect();
    let sums = pair_sums(ewald, &positions)?;
    if sums.min_dist < collision_floor {
        return Err(Error::Collision {
            t: ensemble.time.to_f64().unwrap(),
            min_dist: sums.min_dist.to_f64().unwrap(),
            floor: collision_floor.to_f64().unwrap(),
        });
    }
    let tmp = ParticleEnsemble {
        positions,
        velocities,
        epsilon: ensemble.epsilon,
        theta: ensemble.theta,
        time: ensemble.time + dt,
        dim: ensemble.dim,
    };
    let force1 = force_from_sums(&tmp, &sums);
    *ensemble = tmp;
    for (v, f) in ensemble.velocities.iter_mut().zip(&force1) {
        for ax in 0..d {
            v[ax] += half * f[ax];
        }
    }
    Ok(force1)
}

/// Advance with the rejection policy: a collision-rejected step is retried
/// once as two half steps, then aborts. Returns the exit force.
pub fn advance<T: Real>(
    ensemble: &mut ParticleEnsemble<T>,
    ewald: &EwaldSum<T>,
    dt: T,
    collision_floor: T,
    entry_force: Option<Vec<[T; 3]>>,
) -> Result<Vec<[T; 3]>> {
    match leapfrog_step(ensemble, ewald, dt, collision_floor, entry_force.clone()) {
        Ok(f) => Ok(f),
        Err(Error::Collision { .. }) => {
            let half = dt / lit::<T>(2.0);
            let f = leapfrog_step(ensemble, ewald, half, collision_floor, entry_force)?;
            leapfrog_step(ensemble, ewald, half, collision_floor, Some(f))
        }
        Err(e) => Err(e),
    }
}

/// Default floor below which a step is treated as a collision.
pub const COLLISION_FLOOR: f64 = 1e-9;
