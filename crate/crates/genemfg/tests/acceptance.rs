//! Acceptance gate: one test per criterion, each printing a single
//! pass/fail line with the measured quantities before asserting.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::Array2;

use genemfg::beetle::{population_models, BeetleModel, BeetleParams};
use genemfg::driver::{
    fixed_point_solve, monotonicity_gap, DriverConfig, InitialGuess, SolutionBundle, SolutionView,
};
use genemfg::fp::{mass, particle_oracle, solve_fp, wasserstein1, DriftSign};
use genemfg::gene_ode::{
    integrate_theta, numerator_by_parts, numerator_direct, solve_initial_p, theta_rhs, OdeConfig,
};
use genemfg::grid::{
    affine_profile, gaussian_density, BoundaryData, DensityField, ProbabilityPath, ScalarField,
    SpaceTimeGrid,
};
use genemfg::hjb::{check_semiconcavity, solve_hjb, HjbConfig};
use genemfg::model::HamiltonianModel;

fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} — {detail}");
}

fn default_grid() -> SpaceTimeGrid {
    SpaceTimeGrid::new(-4.0, 4.0, 201, 1.0, 201).unwrap()
}

fn default_boundary(grid: &SpaceTimeGrid) -> BoundaryData {
    let terminal = affine_profile(grid, 0.5, 0.0);
    let m0 = gaussian_density(grid, 0.0, 1.0).unwrap();
    BoundaryData::new(
        grid,
        [terminal.clone(), terminal],
        [m0.clone(), m0],
        vec![-0.1; grid.n_t],
        vec![0.0; grid.n_t],
    )
    .unwrap()
}

/// The converged default run, shared by the criteria that inspect it.
fn default_bundle() -> &'static SolutionBundle {
    static BUNDLE: OnceLock<SolutionBundle> = OnceLock::new();
    BUNDLE.get_or_init(|| {
        let grid = default_grid();
        let (m1, m2) = population_models(&BeetleParams::default());
        let boundary = default_boundary(&grid);
        let p0 = solve_initial_p(
            (&m1, &m2),
            (&boundary.initial_m[0], &boundary.initial_m[1]),
            -0.1,
            &grid,
        )
        .unwrap();
        fixed_point_solve(
            (&m1, &m2),
            &grid,
            &boundary,
            &DriverConfig::default(),
            &OdeConfig::default(),
            DriftSign::Pde,
            p0,
        )
        .unwrap()
    })
}

struct ScanSummary {
    rows: usize,
    converged: usize,
    spread: f64,
    mean: f64,
}

fn run_scan_with_step(step: f64, dir: &std::path::Path) -> ScanSummary {
    let config = format!(
        r#"{{
  "driver": {{ "initial_p": {{ "scan": {{ "start": 0.0, "stop": 1.0, "step": {step} }} }} }},
  "output": {{ "directory": {:?} }}
}}"#,
        dir.join("out")
    );
    let config_path = dir.join("config.json");
    std::fs::write(&config_path, config).unwrap();
    let code = genemfg::cli::run_scan(&config_path);
    assert!(code == 0 || code == 2, "scan exited with {code}");

    let csv = std::fs::read_to_string(dir.join("out").join("scan.csv")).unwrap();
    let mut rows = 0;
    let mut converged = 0;
    let mut finals = Vec::new();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        rows += 1;
        if fields[2] == "true" {
            converged += 1;
            finals.push(fields[1].parse::<f64>().unwrap());
        }
    }
    let spread = finals.iter().cloned().fold(f64::MIN, f64::max)
        - finals.iter().cloned().fold(f64::MAX, f64::min);
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    ScanSummary {
        rows,
        converged,
        spread,
        mean,
    }
}

/// Scan p(0) over {0, 0.1, ..., 1.0} and {0, 0.01, ..., 1.0}: at least 90%
/// of the rows converge, the final probabilities collapse to a spread of
/// 0.05, their mean lands in [0.15, 0.35], and the fine scan finishes
/// within five minutes.
#[test]
fn criterion_1_initial_condition_collapse() {
    let tmp = tempfile::tempdir().unwrap();
    let coarse_dir = tmp.path().join("coarse");
    let fine_dir = tmp.path().join("fine");
    std::fs::create_dir_all(&coarse_dir).unwrap();
    std::fs::create_dir_all(&fine_dir).unwrap();

    let coarse = run_scan_with_step(0.1, &coarse_dir);
    let clock = Instant::now();
    let fine = run_scan_with_step(0.01, &fine_dir);
    let fine_secs = clock.elapsed().as_secs_f64();

    let conv_ok = 10 * coarse.converged >= 9 * coarse.rows && 10 * fine.converged >= 9 * fine.rows;
    let spread_ok = coarse.spread <= 0.05 && fine.spread <= 0.05;
    let mean_ok = (0.15..=0.35).contains(&coarse.mean) && (0.15..=0.35).contains(&fine.mean);
    let time_ok = fine_secs <= 300.0;
    let detail = format!(
        "convergence {}/{} and {}/{}; spread {:.4} and {:.4} (bound 0.05); mean pT {:.4} and {:.4} (bounds [0.15, 0.35]); fine scan {:.1} s (bound 300 s)",
        coarse.converged, coarse.rows, fine.converged, fine.rows,
        coarse.spread, fine.spread, coarse.mean, fine.mean, fine_secs,
    );
    report(
        "1 (scan collapse)",
        conv_ok && spread_ok && mean_ok && time_ok,
        &detail,
    );
    assert!(conv_ok, "convergence below 90%: {detail}");
    assert!(mean_ok, "mean final probability out of range: {detail}");
    assert!(time_ok, "fine scan too slow: {detail}");
    assert!(spread_ok, "final probabilities did not collapse: {detail}");
}

/// With b = 0 and c = 0 both equations are heat equations: the value
/// function must match the Gaussian-convolution oracle in sup norm and the
/// density must match the widened Gaussian in Wasserstein-1.
#[test]
fn criterion_2_heat_equation_oracles() {
    let clock = Instant::now();
    let grid = default_grid();
    let model = BeetleModel {
        a: 1.0,
        b: 0.0,
        c: 0.0,
    };
    let p = ProbabilityPath::constant(&grid, 0.5).unwrap();

    // Backward value solve of a bump, compared at t = 0 against direct
    // quadrature of the heat kernel of variance 2T.
    let sd = 0.5f64;
    let terminal: Vec<f64> = (0..grid.n_x)
        .map(|i| (-0.5 * (grid.x(i) / sd).powi(2)).exp())
        .collect();
    let sol = solve_hjb(&model, &grid, &terminal, &p, &HjbConfig::default()).unwrap();
    let tau = grid.horizon;
    let mut sup_err = 0.0f64;
    for i in 0..grid.n_x {
        let x = grid.x(i);
        let integrand: Vec<f64> = (0..grid.n_x)
            .map(|l| {
                let y = grid.x(l);
                terminal[l] * (-(x - y) * (x - y) / (4.0 * tau)).exp()
                    / (4.0 * std::f64::consts::PI * tau).sqrt()
            })
            .collect();
        let oracle = genemfg::calculus::trapezoid(&integrand, grid.dx);
        sup_err = sup_err.max((sol.field.values[[0, i]] - oracle).abs());
    }

    // Forward density solve from a narrow Gaussian; variance grows by 2T.
    let initial = gaussian_density(&grid, 0.0, 0.5).unwrap();
    let (density, _) = solve_fp(&model, &grid, &initial, &p, DriftSign::Pde).unwrap();
    let widened = gaussian_density(&grid, 0.0, (0.25 + 2.0 * grid.horizon).sqrt()).unwrap();
    let w1 = wasserstein1(density.slice(grid.n_t - 1), &widened, grid.dx).unwrap();

    let secs = clock.elapsed().as_secs_f64();
    let sup_ok = sup_err <= 5.0 * grid.dx;
    let w1_ok = w1 <= 3.0 * grid.dx;
    let time_ok = secs <= 5.0;
    let detail = format!(
        "value sup error {sup_err:.5} (bound {:.2}); density W1 {w1:.5} (bound {:.2}); {secs:.2} s (bound 5 s)",
        5.0 * grid.dx,
        3.0 * grid.dx,
    );
    report("2 (heat oracles)", sup_ok && w1_ok && time_ok, &detail);
    assert!(sup_ok && w1_ok && time_ok, "{detail}");
}

/// Every stored density slice of the default run carries unit mass to 1e-8,
/// holds no negative values, and the run's clip count stays under 0.1% of
/// the stored cells.
#[test]
fn criterion_3_conservation_and_positivity() {
    let bundle = default_bundle();
    let grid = default_grid();

    let mut worst_mass = 0.0f64;
    let mut negatives = 0usize;
    for field in [&bundle.m1, &bundle.m2] {
        for j in 0..grid.n_t {
            let slice = field.slice(j);
            worst_mass = worst_mass.max((mass(slice, grid.dx) - 1.0).abs());
            negatives += slice.iter().filter(|v| **v < 0.0).count();
        }
    }
    let cells = 2 * grid.n_t * grid.n_x;
    let clip_limit = cells / 1000;
    let clips = bundle.report.clip_events;

    let mass_ok = worst_mass <= 1e-8;
    let sign_ok = negatives == 0;
    let clip_ok = clips <= clip_limit;
    let detail = format!(
        "worst |mass - 1| {worst_mass:.2e} (bound 1e-8); {negatives} negative values; {clips} clip events (bound {clip_limit})",
    );
    report(
        "3 (conservation/positivity)",
        mass_ok && sign_ok && clip_ok,
        &detail,
    );
    assert!(mass_ok && sign_ok && clip_ok, "{detail}");
}

/// Default run keeps both value-function gradients within the terminal
/// Lipschitz constant 1 - delta = 0.5.
#[test]
fn criterion_4_gradient_bound() {
    let bundle = default_bundle();
    let worst = bundle.report.max_gradient[0].max(bundle.report.max_gradient[1]);
    let ok = worst <= 0.5 + 1e-6;
    let detail = format!("max |du/dx| {worst:.8} (bound 0.500001)");
    report("4 (gradient bound)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Second differences of the value functions stay below the terminal data's
/// semiconcavity constant: 0 for the affine default, and 0 again for a
/// concave parabola continued linearly past the slope bound.
#[test]
fn criterion_5_semiconcavity() {
    let bundle = default_bundle();
    let grid = default_grid();
    let mut worst_default = 0.0f64;
    for sol in [&bundle.u1, &bundle.u2] {
        let scan = check_semiconcavity(&sol.field, 1e-6).unwrap();
        worst_default = worst_default.max(
            scan.per_time_max.iter().cloned().fold(0.0f64, f64::max),
        );
    }

    let (m1, m2) = population_models(&BeetleParams::default());
    let clipped: Vec<f64> = (0..grid.n_x)
        .map(|i| {
            let x = grid.x(i);
            if x.abs() <= 2.5 {
                -0.1 * x * x
            } else {
                -0.625 - 0.5 * (x.abs() - 2.5)
            }
        })
        .collect();
    let m0 = gaussian_density(&grid, 0.0, 1.0).unwrap();
    let boundary = BoundaryData::new(
        &grid,
        [clipped.clone(), clipped],
        [m0.clone(), m0],
        vec![-0.1; grid.n_t],
        vec![0.0; grid.n_t],
    )
    .unwrap();
    let p0 = solve_initial_p(
        (&m1, &m2),
        (&boundary.initial_m[0], &boundary.initial_m[1]),
        -0.1,
        &grid,
    )
    .unwrap();
    let concave = fixed_point_solve(
        (&m1, &m2),
        &grid,
        &boundary,
        &DriverConfig::default(),
        &OdeConfig::default(),
        DriftSign::Pde,
        p0,
    )
    .unwrap();
    let mut worst_concave = 0.0f64;
    for sol in [&concave.u1, &concave.u2] {
        let scan = check_semiconcavity(&sol.field, 1e-6).unwrap();
        worst_concave = worst_concave.max(
            scan.per_time_max.iter().cloned().fold(0.0f64, f64::max),
        );
    }

    let ok = worst_default <= 1e-6 && worst_concave <= 1e-6;
    let detail = format!(
        "worst positive second difference: affine {worst_default:.2e}, clipped-concave {worst_concave:.2e} (bounds 1e-6)",
    );
    report("5 (semiconcavity)", ok, &detail);
    assert!(ok, "{detail}");
}

/// Densities move continuously in Wasserstein-1: between t and t + a the
/// distance stays within 1.1 * (max drift * a + sqrt(2a)).
#[test]
fn criterion_6_density_time_continuity() {
    let bundle = default_bundle();
    let grid = default_grid();
    let (m1, m2) = population_models(&BeetleParams::default());

    let mut worst_ratio = 0.0f64;
    for (model, field) in [
        (&m1 as &dyn HamiltonianModel, &bundle.m1),
        (&m2 as &dyn HamiltonianModel, &bundle.m2),
    ] {
        let mut max_drift = 0.0f64;
        for j in 0..grid.n_t {
            for i in 0..grid.n_x {
                max_drift = max_drift.max(model.d_h(grid.x(i), bundle.p.values[j]).abs());
            }
        }
        for &j in &[0usize, grid.n_t / 4, grid.n_t / 2] {
            for &steps in &[1usize, 4, 16] {
                let a = steps as f64 * grid.dt;
                let w1 =
                    wasserstein1(field.slice(j), field.slice(j + steps), grid.dx).unwrap();
                let bound = 1.1 * (max_drift * a + (2.0 * a).sqrt());
                worst_ratio = worst_ratio.max(w1 / bound);
            }
        }
    }

    let ok = worst_ratio <= 1.0;
    let detail = format!("worst W1 / bound ratio {worst_ratio:.4} (must stay at or below 1)");
    report("6 (W1 time continuity)", ok, &detail);
    assert!(ok, "{detail}");
}

/// With both densities centered at 1 and Q(0) = 0.39 the constraint root
/// sits exactly at p = 1: 0.61 p^2 - 0.5 * (1 + 1) + 0.39 = 0.
#[test]
fn criterion_7_initial_probability_closed_form() {
    let grid = default_grid();
    let (m1, m2) = population_models(&BeetleParams::default());

    // Hard-truncated Gaussian with node-symmetric support strictly inside
    // the box, so the discrete first moment is exactly the center.
    let center = 125usize; // x = 1
    let half_width = 74usize;
    let mut density = vec![0.0; grid.n_x];
    for (i, v) in density.iter_mut().enumerate() {
        if i.abs_diff(center) <= half_width {
            let z = grid.x(i) - 1.0;
            *v = (-0.5 * z * z).exp();
        }
    }
    let total = genemfg::calculus::trapezoid(&density, grid.dx);
    for v in &mut density {
        *v /= total;
    }

    let p0 = solve_initial_p((&m1, &m2), (&density, &density), 0.39, &grid).unwrap();
    let err = (p0 - 1.0).abs();
    let ok = err <= 1e-10;
    let detail = format!("recovered p0 = {p0} (|error| {err:.2e}, bound 1e-10)");
    report("7 (initial-p closed form)", ok, &detail);
    assert!(ok, "{detail}");
}

/// The RK4 path matches a ten-times-finer explicit Euler integration of the
/// same frozen-density dynamics, and the two numerator assemblies (direct
/// and integrated by parts) agree.
#[test]
fn criterion_8_ode_correctness() {
    // Fine time grid so the Euler reference is itself accurate at 1e-6.
    let grid = SpaceTimeGrid::new(-4.0, 4.0, 51, 1.0, 20001).unwrap();
    let (m1, m2) = population_models(&BeetleParams::default());
    let frozen = gaussian_density(&grid, 0.0, 1.0).unwrap();
    let mut rows = Array2::zeros((grid.n_t, grid.n_x));
    for j in 0..grid.n_t {
        for i in 0..grid.n_x {
            rows[[j, i]] = frozen[i];
        }
    }
    let field = DensityField::new(grid, rows).unwrap();
    let q_dot = vec![0.0; grid.n_t];
    let p0 = 0.5;

    let (theta, _) = integrate_theta(
        (&m1, &m2),
        &field,
        &field,
        &q_dot,
        p0,
        &grid,
        &OdeConfig::default(),
    )
    .unwrap();
    let rk4_final = *theta.values.last().unwrap();

    let floor = OdeConfig::default().denominator_floor;
    let h = grid.dt / 10.0;
    let mut p = p0;
    for _ in 0..(grid.n_t - 1) * 10 {
        let rhs = theta_rhs((&m1, &m2), (&frozen, &frozen), 0.0, p, &grid, floor).unwrap();
        p += h * rhs.value;
    }
    let ode_err = (rk4_final - p).abs();

    // Route comparison on an asymmetric slice far from any symmetry the
    // identity could hide behind; tails are negligible at the walls, where
    // the one-sided gradient stencils stop the discrete identity from
    // telescoping exactly.
    let coarse = default_grid();
    let skewed = gaussian_density(&coarse, 0.8, 0.5).unwrap();
    let direct = numerator_direct((&m1, &m2), (&skewed, &skewed), 0.3, &coarse).unwrap();
    let by_parts = numerator_by_parts((&m1, &m2), (&skewed, &skewed), 0.3, &coarse).unwrap();
    let route_err = (direct - by_parts).abs();

    let ode_ok = ode_err <= 1e-6;
    let route_ok = route_err <= 1e-8;
    let detail = format!(
        "RK4 vs fine Euler |diff| {ode_err:.2e} (bound 1e-6); numerator routes |diff| {route_err:.2e} (bound 1e-8)",
    );
    report("8 (ODE correctness)", ode_ok && route_ok, &detail);
    assert!(ode_ok && route_ok, "{detail}");
}

/// Fixed points started from constant guesses 0.1 and 0.9 coincide, their
/// monotonicity gap is numerically zero, and the gap with identical
/// probability paths but perturbed fields vanishes at field scale.
#[test]
fn criterion_9_uniqueness_surrogates() {
    let grid = default_grid();
    let (m1, m2) = population_models(&BeetleParams::default());
    let boundary = default_boundary(&grid);
    let p0 = solve_initial_p(
        (&m1, &m2),
        (&boundary.initial_m[0], &boundary.initial_m[1]),
        -0.1,
        &grid,
    )
    .unwrap();

    let solve_from = |guess: f64| {
        let driver = DriverConfig {
            initial_guess: InitialGuess::Constant(guess),
            ..DriverConfig::default()
        };
        fixed_point_solve(
            (&m1, &m2),
            &grid,
            &boundary,
            &driver,
            &OdeConfig::default(),
            DriftSign::Pde,
            p0,
        )
        .unwrap()
    };
    let low = solve_from(0.1);
    let high = solve_from(0.9);
    assert!(low.report.converged && high.report.converged);

    let sup_diff = low
        .p
        .values
        .iter()
        .zip(&high.p.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    let gap = monotonicity_gap((&m1, &m2), low.view(), high.view(), &grid)
        .unwrap()
        .abs();

    // Identical probability path, perturbed fields: mix the densities and
    // shift the values, keep p.
    let other = gaussian_density(&grid, 0.4, 0.8).unwrap();
    let mut m_rows = Array2::zeros((grid.n_t, grid.n_x));
    let mut u_rows = Array2::zeros((grid.n_t, grid.n_x));
    let mut field_scale = 0.0f64;
    for j in 0..grid.n_t {
        for i in 0..grid.n_x {
            m_rows[[j, i]] = 0.7 * low.m1.slice(j)[i] + 0.3 * other[i];
            u_rows[[j, i]] = low.u1.field.slice(j)[i] + 0.1 * grid.x(i).sin();
            field_scale = field_scale
                .max(low.u1.field.slice(j)[i].abs())
                .max(low.m1.slice(j)[i].abs());
        }
    }
    let m_mixed = DensityField::new(grid, m_rows).unwrap();
    let u_shifted = ScalarField::new(grid, u_rows).unwrap();
    let perturbed = SolutionView {
        u1: &u_shifted,
        u2: &low.u2.field,
        m1: &m_mixed,
        m2: &low.m2,
        p: &low.p,
    };
    let same_p_gap = monotonicity_gap((&m1, &m2), low.view(), perturbed, &grid)
        .unwrap()
        .abs();

    let sup_ok = sup_diff <= 1e-4;
    let gap_ok = gap <= 1e-6;
    let same_p_ok = same_p_gap <= 1e-10 * field_scale;
    let detail = format!(
        "guess 0.1 vs 0.9: sup |p difference| {sup_diff:.2e} (bound 1e-4); gap {gap:.2e} (bound 1e-6); same-p perturbed gap {same_p_gap:.2e} (bound {:.2e})",
        1e-10 * field_scale,
    );
    report("9 (uniqueness surrogates)", sup_ok && gap_ok && same_p_ok, &detail);
    assert!(sup_ok && gap_ok && same_p_ok, "{detail}");
}

/// A hundred thousand simulated agents following the optimal drift land on
/// the solver's terminal densities in Wasserstein-1.
#[test]
fn criterion_10_particle_equivalence() {
    let clock = Instant::now();
    let bundle = default_bundle();
    let grid = default_grid();
    let (m1, m2) = population_models(&BeetleParams::default());
    let boundary = default_boundary(&grid);

    let mut w1s = [0.0f64; 2];
    for (k, (model, field)) in [
        (&m1 as &dyn HamiltonianModel, &bundle.m1),
        (&m2 as &dyn HamiltonianModel, &bundle.m2),
    ]
    .into_iter()
    .enumerate()
    {
        let histogram = particle_oracle(
            model,
            &grid,
            &boundary.initial_m[k],
            &bundle.p,
            100_000,
            42 + k as u64,
            DriftSign::Pde,
        )
        .unwrap();
        w1s[k] = wasserstein1(field.slice(grid.n_t - 1), &histogram, grid.dx).unwrap();
    }
    let secs = clock.elapsed().as_secs_f64();

    let w1_ok = w1s[0] <= 0.05 && w1s[1] <= 0.05;
    let time_ok = secs <= 30.0;
    let detail = format!(
        "terminal W1 {:.4} and {:.4} (bounds 0.05); {secs:.1} s (bound 30 s)",
        w1s[0], w1s[1],
    );
    report("10 (particle equivalence)", w1_ok && time_ok, &detail);
    assert!(w1_ok && time_ok, "{detail}");
}
