//! Weak-* convergence metrics: the discrepancy
//! | (1/N) sum phi(x_i, v_i) - int phi(x, u(x)) dx |
//! over a battery of smooth phase-space test functions.

use mflab_core::nbody::ParticleEnsemble;
use mflab_core::spectral::VectorField;
use mflab_core::Scalar;

/// One phase-space test function phi(x, v).
#[derive(Clone, Debug)]
pub enum TestFunction {
    /// phi = 1 (a probability-mass check: the metric is exactly zero).
    One,
    /// cos(2 pi k . x) exp(-|v - c|^2 / 2).
    CosGauss { k: [i64; 2], c: [f64; 2] },
}

impl TestFunction {
    pub fn label(&self) -> String {
        match self {
            TestFunction::One => "one".into(),
            TestFunction::CosGauss { k, c } => {
                format!("cos({},{})_gauss({},{})", k[0], k[1], c[0], c[1])
            }
        }
    }

    fn eval(&self, x: &[Scalar], v: &[Scalar]) -> Scalar {
        match self {
            TestFunction::One => 1.0,
            TestFunction::CosGauss { k, c } => {
                let phase =
                    std::f64::consts::TAU * (k[0] as f64 * x[0] + k[1] as f64 * x[1]);
                let dv2 = (v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2);
                phase.cos() * (-dv2 / 2.0).exp()
            }
        }
    }
}

/// The default battery: phi = 1 plus cos(2 pi k.x) Gaussians for
/// k in {(1,0), (0,1), (1,1)} and velocity centers c in {0, (1,0)}.
pub fn default_battery() -> Vec<TestFunction> {
    let mut battery = vec![TestFunction::One];
    for k in [[1i64, 0i64], [0, 1], [1, 1]] {
        for c in [[0.0, 0.0], [1.0, 0.0]] {
            battery.push(TestFunction::CosGauss { k, c });
        }
    }
    battery
}

/// Evaluate the battery discrepancies. The field-side integral
/// int phi(x, u(x)) dx is computed by quadrature on a 4x oversampled grid
/// (the integrand is smooth and periodic, so this converges
/// superalgebraically).
pub fn weak_star_metric(
    ensemble: &ParticleEnsemble<Scalar>,
    u: &VectorField<Scalar>,
    battery: &[TestFunction],
) -> Vec<Scalar> {
    assert!(!battery.is_empty(), "battery must be nonempty");
    let n = ensemble.len() as f64;
    let (big, ux) = u.component(0).to_samples_oversampled(4);
    let (_, uy) = u.component(1).to_samples_oversampled(4);
    let m = big.m();
    battery
        .iter()
        .map(|phi| {
            let emp: f64 = ensemble
                .positions()
                .iter()
                .zip(ensemble.velocities())
                .map(|(p, v)| phi.eval(p.coords(), &v[..2]))
                .sum::<f64>()
                / n;
            let mut quad = 0.0;
            for i in 0..m {
                for j in 0..m {
                    let x = [i as f64 / m as f64, j as f64 / m as f64];
                    let v = [ux[i * m + j], uy[i * m + j]];
                    quad += phi.eval(&x, &v);
                }
            }
            quad /= (m * m) as f64;
            (emp - quad).abs()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use mflab_core::euler::{presets, velocity_from_omega};
    use mflab_core::nbody::{sample_initial, InitMode, InitialDataSpec};
    use mflab_core::spectral::PeriodicGrid;
    use mflab_core::Dim;

    #[test]
    fn unit_test_function_is_exact() {
        let grid = PeriodicGrid::new(Dim::Two, 32).unwrap();
        let u = velocity_from_omega(&presets::taylor_green::<f64>(grid));
        let spec = InitialDataSpec { mode: InitMode::IidUniform, velocity_noise: 0.1, rng_seed: 3 };
        let ens = sample_initial(&spec, 64, 0.5, &u).unwrap();
        let metrics = weak_star_metric(&ens, &u, &default_battery());
        assert!(metrics[0] < 1e-14, "phi = 1 must give zero, got {}", metrics[0]);
        assert_eq!(metrics.len(), 7);
    }

    #[test]
    fn monokinetic_lattice_is_accurate() {
        // dense jittered lattice, monokinetic: the empirical sum is a good
        // quadrature of the field integral
        let grid = PeriodicGrid::new(Dim::Two, 32).unwrap();
        let u = velocity_from_omega(&presets::taylor_green::<f64>(grid));
        let spec =
            InitialDataSpec { mode: InitMode::PerturbedLattice, velocity_noise: 0.0, rng_seed: 5 };
        let small = sample_initial(&spec, 16 * 16, 0.5, &u).unwrap();
        let large = sample_initial(&spec, 64 * 64, 0.5, &u).unwrap();
        let battery = default_battery();
        let ms = weak_star_metric(&small, &u, &battery);
        let ml = weak_star_metric(&large, &u, &battery);
        for i in 1..battery.len() {
            assert!(
                ml[i] < ms[i],
                "metric {} should shrink with N: {} vs {}",
                battery[i].label(),
                ms[i],
                ml[i]
            );
            assert!(ml[i] < 0.05, "large-N metric should be small, got {}", ml[i]);
        }
    }
}
