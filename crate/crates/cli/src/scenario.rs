//! Experiment orchestration: co-advance the particle system and the Euler
//! solution on a shared clock and sample the modulated-energy diagnostics.
//! The two systems are dynamically uncoupled (the particles do not feel u);
//! the coupling is diagnostic only.

use crate::config::{ScenarioConfig, VorticityConfig};
use crate::report::{Report, ReportRow};
use crate::weakstar::{default_battery, weak_star_metric, TestFunction};
use anyhow::{bail, Context, Result};
use mflab_core::calib::CalibrationConstants;
use mflab_core::energy::{
    default_epsilon_cap, gronwall_rhs, modulated_h_with, terms_1_to_4_with, BackgroundDensity,
    UNormSample,
};
use mflab_core::euler::{presets, EulerDiagnostics, EulerState};
use mflab_core::nbody::{advance, min_pair_distance, pair_sums, sample_initial, COLLISION_FLOOR};
use mflab_core::spectral::{PeriodicGrid, ScalarField};
use mflab_core::{Dim, EwaldSum, Scalar};
use std::time::Instant;

/// The Euler trajectory sampled at the configured stride, shared by every
/// (N, theta) cell of a sweep.
pub struct EulerTimeline {
    pub times: Vec<Scalar>,
    pub diags: Vec<EulerDiagnostics<Scalar>>,
    pub u_history: Vec<UNormSample<Scalar>>,
    /// min over the grid of the corrector (for min(mu) bookkeeping).
    pub corrector_min: Vec<Scalar>,
}

pub fn initial_vorticity(config: &ScenarioConfig) -> Result<ScalarField<Scalar>> {
    let grid = PeriodicGrid::new(Dim::Two, config.grid_m)?;
    let omega = match config.vorticity {
        VorticityConfig::TaylorGreen => presets::taylor_green::<Scalar>(grid),
        VorticityConfig::Shear => presets::shear::<Scalar>(grid),
        VorticityConfig::RandomBandlimited { seed, max_mode } => {
            presets::random_bandlimited::<Scalar>(grid, seed, max_mode)
        }
    };
    Ok(omega.scaled(config.velocity_amplitude))
}

/// Advance the Euler solution over the horizon, recording diagnostics at
/// every sample time.
pub fn build_timeline(config: &ScenarioConfig) -> Result<EulerTimeline> {
    let omega = initial_vorticity(config)?;
    let mut state = EulerState::new(omega)?;
    let steps = (config.horizon / config.dt).round() as usize;
    let holder_exponent = 0.5;
    let mut timeline = EulerTimeline {
        times: Vec::new(),
        diags: Vec::new(),
        u_history: Vec::new(),
        corrector_min: Vec::new(),
    };
    let record = |state: &EulerState<Scalar>, timeline: &mut EulerTimeline| {
        let diag = state.diagnostics();
        let grad_u_linf = diag.u.grad_linf_norm();
        let c1s = diag.u.c1s_surrogate(holder_exponent);
        let (_, samples) = diag.corrector.to_samples_oversampled(4);
        let cmin = samples.into_iter().fold(f64::INFINITY, f64::min);
        timeline.times.push(state.time());
        timeline.u_history.push(UNormSample { t: state.time(), grad_u_linf, c1s });
        timeline.corrector_min.push(cmin);
        timeline.diags.push(diag);
    };
    record(&state, &mut timeline);
    for step in 1..=steps {
        state.step(config.dt).with_context(|| format!("Euler step {step}"))?;
        if step % config.sample_stride == 0 {
            record(&state, &mut timeline);
        }
    }
    Ok(timeline)
}

/// Run one (N, theta, seed) cell against a prebuilt timeline.
pub fn run_cell(
    config: &ScenarioConfig,
    timeline: &EulerTimeline,
    n: usize,
    theta: Scalar,
    seed: u64,
    battery: &[TestFunction],
    constants: Option<&CalibrationConstants>,
) -> Result<Vec<ReportRow>> {
    let started = Instant::now();
    let ewald = EwaldSum::with_defaults(Dim::Two);
    let spec = config.initial_data.to_spec(Some(seed));
    let mut ensemble = sample_initial(&spec, n, theta, &timeline.diags[0].u)?;
    let eps = ensemble.epsilon();
    let steps = (config.horizon / config.dt).round() as usize;
    let mut rows = Vec::new();
    let mut h0_abs = 0.0;
    let mut force = None;

    let sample =
        |ensemble: &mflab_core::ParticleEnsemble, idx: usize, h0_abs: &mut Scalar, rows: &mut Vec<ReportRow>| -> Result<()> {
            let diag = &timeline.diags[idx];
            let sums = pair_sums(&ewald, ensemble.positions())?;
            let mut breakdown = modulated_h_with(ensemble, &diag.u, &diag.corrector, &sums)?;
            breakdown.terms = terms_1_to_4_with(ensemble, diag, &sums)?;
            if idx == 0 {
                *h0_abs = breakdown.total_h.abs();
            }
            let bound = match constants {
                Some(c) => *gronwall_rhs(
                    *h0_abs,
                    &timeline.u_history[..=idx],
                    n,
                    eps,
                    c.c_gronwall,
                    Dim::Two,
                )
                .last()
                .unwrap(),
                None => Scalar::NAN,
            };
            breakdown.bound_rhs = bound;
            let metrics = weak_star_metric(ensemble, &diag.u, battery);
            let (min_dist, _) = min_pair_distance(ensemble.positions());
            let min_mu = 1.0 + eps * eps * timeline.corrector_min[idx];
            rows.push(ReportRow {
                n,
                theta,
                seed,
                t: timeline.times[idx],
                kinetic: breakdown.kinetic,
                f_n: breakdown.potential_fn,
                h: breakdown.total_h,
                term1: breakdown.terms[0],
                term2: breakdown.terms[1],
                term3: breakdown.terms[2],
                term4: breakdown.terms[3],
                gronwall_rhs: breakdown.bound_rhs,
                min_dist,
                min_mu,
                metrics,
                wall_clock_s: started.elapsed().as_secs_f64(),
            });
            Ok(())
        };

    sample(&ensemble, 0, &mut h0_abs, &mut rows)?;
    for step in 1..=steps {
        force = Some(advance(&mut ensemble, &ewald, config.dt, COLLISION_FLOOR, force.take())?);
        if step % config.sample_stride == 0 {
            let idx = step / config.sample_stride;
            sample(&ensemble, idx, &mut h0_abs, &mut rows)?;
        }
    }
    Ok(rows)
}

/// Run a single-cell scenario (the `run` subcommand): requires singleton N
/// and theta lists.
pub fn run_scenario(
    config: &ScenarioConfig,
    seed_override: Option<u64>,
    constants: Option<&CalibrationConstants>,
) -> Result<Report> {
    if config.n.len() != 1 || config.theta.len() != 1 {
        bail!("`run` needs exactly one N and one theta; use `sweep` for lists");
    }
    let battery = default_battery();
    let timeline = build_timeline(config)?;
    let seed = seed_override.unwrap_or(config.initial_data.rng_seed);
    let rows = run_cell(config, &timeline, config.n[0], config.theta[0], seed, &battery, constants)?;
    Ok(Report::new(battery.iter().map(|b| b.label()).collect(), rows, Vec::new()))
}

/// Cartesian (N, theta, seed) sweep sharing one Euler trajectory per grid.
/// Per-cell failures are recorded and the sweep continues.
pub fn sweep(config: &ScenarioConfig, constants: Option<&CalibrationConstants>) -> Result<Report> {
    let battery = default_battery();
    let timeline = build_timeline(config)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &n in &config.n {
        for &theta in &config.theta {
            for &seed in &config.seeds() {
                match run_cell(config, &timeline, n, theta, seed, &battery, constants) {
                    Ok(mut cell_rows) => rows.append(&mut cell_rows),
                    Err(e) => {
                        failures.push(crate::report::CellFailure {
                            n,
                            theta,
                            seed,
                            error: format!("{e:#}"),
                        });
                    }
                }
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.n, a.theta, a.seed)
            .partial_cmp(&(b.n, b.theta, b.seed))
            .unwrap()
            .then(a.t.partial_cmp(&b.t).unwrap())
    });
    Ok(Report::new(battery.iter().map(|b| b.label()).collect(), rows, failures))
}

/// min(mu) over the run start (diagnostic convenience).
pub fn initial_min_mu(timeline: &EulerTimeline, epsilon: Scalar) -> Scalar {
    1.0 + epsilon * epsilon * timeline.corrector_min[0]
}

/// Background density at a sampled time (used by the inequality suites).
pub fn background_at(
    timeline: &EulerTimeline,
    idx: usize,
    epsilon: Scalar,
) -> Result<BackgroundDensity<Scalar>> {
    Ok(BackgroundDensity::from_corrector(&timeline.diags[idx].corrector, epsilon)?)
}

/// Default truncation cap for a cell.
pub fn cell_epsilon_cap(config: &ScenarioConfig, n: usize) -> Scalar {
    config.epsilon_cap.unwrap_or_else(|| default_epsilon_cap(n, Dim::Two))
}
