//! Subcommand implementations behind the binary. Each returns a process
//! exit code: 0 success, 1 error, 2 non-convergence, 3 advisory-only
//! validation findings.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::beetle::{finite_difference_consistency, ConsistencyReport};
use crate::config::{parse_config, RunConfig, RunSetup};
use crate::driver::{fixed_point_solve, InitialP, SolutionBundle};
use crate::error::{Error, Result};
use crate::fp::{particle_oracle, wasserstein1};
use crate::gene_ode::solve_initial_p;
use crate::model::{validate_assumptions, AssumptionReport, HamiltonianModel, ProbeGrid};
use crate::output::{
    self, write_json, write_oracle_csv, write_p_path, write_scan_csv, write_scan_svg,
    write_snapshots, ReportDocument, ScanRow,
};

/// Environment variable capping the worker pool for scans.
pub const THREADS_ENV: &str = "GENEMFG_THREADS";

fn fail(e: impl std::fmt::Display) -> i32 {
    eprintln!("error: {e}");
    1
}

fn load(config_path: &Path) -> Result<(RunConfig, RunSetup)> {
    let config = parse_config(config_path)?;
    let setup = config.build()?;
    Ok((config, setup))
}

/// The anchored initial probability for a non-scan run.
fn resolve_p0(setup: &RunSetup) -> Result<f64> {
    match setup.initial_p {
        InitialP::Solve => solve_initial_p(
            (&setup.models.0, &setup.models.1),
            (&setup.boundary.initial_m[0], &setup.boundary.initial_m[1]),
            setup.boundary.q[0],
            &setup.grid,
        ),
        InitialP::Value(v) => Ok(v),
        InitialP::Scan(_) => Err(Error::Config(
            "driver.initial_p: a scan range needs the scan subcommand".into(),
        )),
    }
}

fn run_fixed_point(setup: &RunSetup, p0: f64) -> Result<SolutionBundle> {
    fixed_point_solve(
        (&setup.models.0, &setup.models.1),
        &setup.grid,
        &setup.boundary,
        &setup.driver,
        &setup.ode,
        setup.drift_sign,
        p0,
    )
}

fn assumption_report(setup: &RunSetup) -> Result<AssumptionReport> {
    let probe = ProbeGrid::lattice(&setup.grid, setup.params.delta, ProbeGrid::DEFAULT_RESOLUTION)?;
    validate_assumptions(
        &[&setup.models.0, &setup.models.1],
        &setup.grid,
        &setup.boundary,
        setup.params.delta,
        &probe,
    )
}

fn write_solution(
    config: &RunConfig,
    setup: &RunSetup,
    bundle: &SolutionBundle,
    p0: f64,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_p_path(&dir.join("p_path.csv"), &bundle.p, &bundle.theta, &bundle.constraint)?;
    let stride = setup.snapshot_stride;
    write_snapshots(&dir.join("u1.csv"), &setup.grid, &bundle.u1.field.values, stride)?;
    write_snapshots(&dir.join("u2.csv"), &setup.grid, &bundle.u2.field.values, stride)?;
    write_snapshots(&dir.join("m1.csv"), &setup.grid, &bundle.m1.values, stride)?;
    write_snapshots(&dir.join("m2.csv"), &setup.grid, &bundle.m2.values, stride)?;

    let assumptions = assumption_report(setup)?;
    let snapshot_times = output::snapshot_indices(setup.grid.n_t, stride)
        .into_iter()
        .map(|j| setup.grid.t(j))
        .collect();
    let report = ReportDocument {
        version: env!("CARGO_PKG_VERSION"),
        config,
        anchored_p0: p0,
        iteration: &bundle.report,
        assumptions: &assumptions,
        snapshot_times,
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(())
}

pub fn run_solve(config_path: &Path, out_override: Option<PathBuf>) -> i32 {
    let (config, mut setup) = match load(config_path) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    if let Some(dir) = out_override {
        setup.output_dir = dir;
    }
    let p0 = match resolve_p0(&setup) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let bundle = match run_fixed_point(&setup, p0) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    if let Err(e) = write_solution(&config, &setup, &bundle, p0, &setup.output_dir.clone()) {
        return fail(e);
    }
    if bundle.report.converged {
        0
    } else {
        eprintln!(
            "did not converge in {} sweeps (best residual {:.3e}); best iterate written",
            bundle.report.iterations,
            bundle
                .report
                .residuals
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min)
        );
        2
    }
}

pub fn run_scan(config_path: &Path) -> i32 {
    let (_, setup) = match load(config_path) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let range = match setup.initial_p {
        InitialP::Scan(range) => range,
        _ => return fail("driver.initial_p: the scan subcommand needs a scan range"),
    };
    let values = range.values();

    let sweep = || -> Vec<ScanRow> {
        values
            .par_iter()
            .map(|&p0| match run_fixed_point(&setup, p0) {
                Ok(bundle) => ScanRow {
                    p0,
                    p_t: *bundle.p.values.last().unwrap(),
                    converged: bundle.report.converged,
                    iterations: bundle.report.iterations,
                    max_residual: bundle.report.constraint_residual_max,
                },
                Err(e) => {
                    log::error!("scan value {p0}: {e}");
                    ScanRow {
                        p0,
                        p_t: f64::NAN,
                        converged: false,
                        iterations: 0,
                        max_residual: f64::NAN,
                    }
                }
            })
            .collect()
    };

    // Optional cap on worker threads; the per-value map runs in this pool.
    let rows = match thread_cap() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(sweep),
            Err(e) => return fail(e),
        },
        None => sweep(),
    };

    if let Err(e) = std::fs::create_dir_all(&setup.output_dir) {
        return fail(e);
    }
    if let Err(e) = write_scan_csv(&setup.output_dir.join("scan.csv"), &rows) {
        return fail(e);
    }
    if setup.emit_svg {
        if let Err(e) = write_scan_svg(&setup.output_dir.join("scan.svg"), &rows) {
            return fail(e);
        }
    }

    let converged = rows.iter().filter(|r| r.converged).count();
    if 10 * converged >= 9 * rows.len() {
        0
    } else {
        eprintln!("only {converged} of {} scan runs converged", rows.len());
        2
    }
}

fn thread_cap() -> Option<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Some(n),
            _ => {
                log::warn!("ignoring {THREADS_ENV}={text:?}: not a positive integer");
                None
            }
        },
        Err(_) => None,
    }
}

#[derive(Serialize)]
struct ValidationDocument {
    assumptions: AssumptionReport,
    consistency: [ConsistencyReport; 2],
}

pub fn run_validate(config_path: &Path) -> i32 {
    let (_, setup) = match load(config_path) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    run_validate_with_models(&setup, (&setup.models.0, &setup.models.1))
}

/// Validation core, with the models injectable so a deliberately corrupted
/// implementation can be driven through the same path.
pub fn run_validate_with_models(
    setup: &RunSetup,
    models: (&dyn HamiltonianModel, &dyn HamiltonianModel),
) -> i32 {
    let probe =
        match ProbeGrid::lattice(&setup.grid, setup.params.delta, ProbeGrid::DEFAULT_RESOLUTION) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
    let consistency = [
        finite_difference_consistency(models.0, &probe),
        finite_difference_consistency(models.1, &probe),
    ];
    let assumptions = match validate_assumptions(
        &[models.0, models.1],
        &setup.grid,
        &setup.boundary,
        setup.params.delta,
        &probe,
    ) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };

    if let Err(e) = std::fs::create_dir_all(&setup.output_dir) {
        return fail(e);
    }
    let document = ValidationDocument {
        assumptions,
        consistency,
    };
    if let Err(e) = write_json(&setup.output_dir.join("assumptions.json"), &document) {
        return fail(e);
    }

    let hard = document.assumptions.hard_failures()
        + document.consistency.iter().filter(|c| !c.pass()).count();
    if hard > 0 {
        eprintln!("{hard} hard validation failure(s)");
        1
    } else if document.assumptions.advisory_failures() > 0 {
        3
    } else {
        0
    }
}

pub fn run_oracle(config_path: &Path, particles: usize, seed: u64) -> i32 {
    let (_, setup) = match load(config_path) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let p0 = match resolve_p0(&setup) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let bundle = match run_fixed_point(&setup, p0) {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    if !bundle.report.converged {
        eprintln!("solve did not converge; oracle comparison skipped");
        return 2;
    }

    // Populations get decorrelated seeds; determinism per population comes
    // from per-particle RNG streams.
    let run = |model: &dyn HamiltonianModel, initial: &[f64], seed: u64| -> Result<Vec<f64>> {
        particle_oracle(
            model,
            &setup.grid,
            initial,
            &bundle.p,
            particles,
            seed,
            setup.drift_sign,
        )
    };
    let terminal = setup.grid.n_t - 1;
    let w1 = (|| -> Result<[f64; 2]> {
        let h1 = run(&setup.models.0, &setup.boundary.initial_m[0], seed)?;
        let h2 = run(
            &setup.models.1,
            &setup.boundary.initial_m[1],
            seed.wrapping_add(1),
        )?;
        Ok([
            wasserstein1(bundle.m1.slice(terminal), &h1, setup.grid.dx)?,
            wasserstein1(bundle.m2.slice(terminal), &h2, setup.grid.dx)?,
        ])
    })();
    let w1 = match w1 {
        Ok(v) => v,
        Err(e) => return fail(e),
    };

    if let Err(e) = std::fs::create_dir_all(&setup.output_dir) {
        return fail(e);
    }
    if let Err(e) = write_oracle_csv(&setup.output_dir.join("oracle.csv"), w1) {
        return fail(e);
    }
    println!(
        "population 1 W1 {:.6e}, population 2 W1 {:.6e}",
        w1[0], w1[1]
    );
    0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beetle::BeetleModel;
    use std::io::Write;

    fn write_config(dir: &Path, body: &str) -> PathBuf {
        let path = dir.join("config.json");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        path
    }

    #[test]
    fn validate_exit_codes_reflect_check_severity() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = write_config(
            dir.path(),
            &format!(r#"{{"output": {{"directory": {:?}}}}}"#, out.to_str().unwrap()),
        );
        // Default parameters trip the advisory checks only.
        assert_eq!(run_validate(&cfg), 3);
        assert!(out.join("assumptions.json").exists());
    }

    #[test]
    fn corrupted_model_fails_validation_hard() {
        struct Corrupted(BeetleModel);
        impl HamiltonianModel for Corrupted {
            fn hamiltonian(&self, x: f64, p: f64, h: f64) -> f64 {
                self.0.hamiltonian(x, p, h)
            }
            fn optimized_gain(&self, p: f64) -> f64 {
                self.0.optimized_gain(p)
            }
            fn d_h(&self, x: f64, p: f64) -> f64 {
                self.0.d_h(x, p)
            }
            fn d_p(&self, x: f64, p: f64, h: f64) -> f64 {
                // Deliberately wrong scale.
                1.01 * self.0.d_p(x, p, h)
            }
            fn d_pp(&self, x: f64, p: f64, h: f64) -> f64 {
                self.0.d_pp(x, p, h)
            }
            fn d_hx(&self) -> f64 {
                self.0.d_hx()
            }
            fn d_hp(&self, p: f64) -> f64 {
                self.0.d_hp(p)
            }
            fn optimal_control(&self, p: f64) -> f64 {
                self.0.optimal_control(p)
            }
            fn lipschitz_p(&self) -> f64 {
                self.0.lipschitz_p()
            }
            fn decay_rate(&self, x: f64) -> f64 {
                self.0.decay_rate(x)
            }
            fn decay_slope(&self) -> f64 {
                self.0.decay_slope()
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let cfg = write_config(
            dir.path(),
            &format!(r#"{{"output": {{"directory": {:?}}}}}"#, out.to_str().unwrap()),
        );
        let (_, setup) = load(&cfg).unwrap();
        let bad = Corrupted(setup.models.0);
        assert_eq!(run_validate_with_models(&setup, (&bad, &setup.models.1)), 1);
    }

    #[test]
    fn thread_cap_parses_defensively() {
        // Unset in tests by default; the parser itself is what matters.
        assert!(thread_cap().is_none() || thread_cap().unwrap() >= 1);
    }
}
