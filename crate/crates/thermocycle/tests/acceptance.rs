//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use thermocycle::cli::{phase_transition_cocycle, ExperimentConfig};
use thermocycle::cocycle::Matrix;
use thermocycle::ergodic::{ldp_tail_rates, lyapunov_exact, variational_witness, LdpMeasure, LdpMode, MarkovChainSpec, McOptions};
use thermocycle::potential::{gibbs_markov_measure, rpf_solve, Potential};
use thermocycle::pressure::truncated_pressure;
use thermocycle::projective::{bq_inequalities_check, ProjPoint};
use thermocycle::sft::{Subshift, Word};
use thermocycle::transfer::{
    derivative_consistency, eta_dimension_estimate, exchange_identity_check, g_t_rowsum_check, gibbs_ratio_report,
    leading_eigen, mu_t_cylinders, EtaMeasure, OperatorGrid,
};
use thermocycle::typicality::{certify, TypicalityOutcome};
use thermocycle::Result;

fn preset(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.json"));
    ExperimentConfig::from_path(&path).expect("preset parses").0
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn t_zero_consistency() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = preset("golden-mean");
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let sd = leading_eigen(s, c, &g, 0.0, 1024)?;
    let rho_err = (sd.rho - 1.0).abs();
    let h_err = sd.h.values().iter().fold(0.0f64, |m, x| m.max((x - 1.0).abs()));
    let mu = mu_t_cylinders(&sd, s, c, &g, 6)?;
    let markov = gibbs_markov_measure(s, &g, 6);
    let mut cyl_err: f64 = 0.0;
    for (w, x) in markov.iter() {
        cyl_err = cyl_err.max((mu.measure.mass(w) - x).abs());
    }
    for (w, x) in mu.measure.iter() {
        cyl_err = cyl_err.max((markov.mass(w) - x).abs());
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: rho_err <= 1e-8 && h_err <= 1e-5 && cyl_err <= 1e-8 && within(elapsed, 10.0),
        detail: format!("|rho-1| = {rho_err:.2e}, max|h-1| = {h_err:.2e}, max cylinder error = {cyl_err:.2e}, {elapsed:.1?}"),
    })
}

fn pressure_eigen_cross_check() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = preset("prop-9-1");
    let (s, c, psi) = (&cfg.subshift, &cfg.cocycle, &cfg.psi);
    let g = rpf_solve(s, psi)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for t in [-0.2, -0.1, 0.1, 0.2] {
        let p = truncated_pressure(s, c, psi, t, 12)?.p_n;
        let sd = leading_eigen(s, c, &g, t, 4096)?;
        let err = (p - sd.log_rho() - 2f64.ln()).abs();
        worst = worst.max(err);
        parts.push(format!("t={t:+}: {err:.2e}"));
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: worst <= 5e-3 && within(elapsed, 120.0),
        detail: format!("|p_12 - log rho - log 2| [{}], tolerance 5e-3, {elapsed:.1?}", parts.join(", ")),
    })
}

fn derivative_identity() -> Result<Outcome> {
    let cfg = preset("prop-9-1");
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let sd = leading_eigen(s, c, &g, 0.0, cfg.grid_m)?;
    let slope = derivative_consistency(&sd, s, c, &g, 8)?.lhs;
    let exact = lyapunov_exact(s, c, &gibbs_markov_measure(s, &g, 12))?.lambda1;
    let rel = (slope - exact).abs() / exact.abs();
    Ok(Outcome {
        pass: rel <= 0.02,
        detail: format!("d/dt log rho at 0 = {slope:.6}, lyapunov_exact(n=12) = {exact:.6}, relative gap {rel:.3} (tolerance 0.02)"),
    })
}

fn exchange_identity() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for name in ["prop-9-1", "golden-mean"] {
        let cfg = preset(name);
        let (s, c) = (&cfg.subshift, &cfg.cocycle);
        let g = rpf_solve(s, &cfg.psi)?;
        let f = OperatorGrid::from_fn(s.q(), 256, |j, th| 1.5 + (2.0 * th).cos() + 0.25 * j as f64);
        for n in 1..=4 {
            let r = exchange_identity_check(s, c, &g, -0.3, 0.7, n, &f, 25, n as u64)?;
            worst = worst.max(r.max_error);
        }
    }
    Ok(Outcome { pass: worst <= 1e-10, detail: format!("100 samples per cocycle over n = 1..4, max error {worst:.2e}") })
}

fn bq_inequalities() -> Result<Outcome> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = f64::INFINITY;
    for i in 0..1000 {
        let d = 2 + i % 2;
        let a = Matrix::new(d, (0..d * d).map(|_| rng.gen_range(-2.0..2.0)).collect())?;
        let u = ProjPoint::new(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())?;
        let v = ProjPoint::new(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>())?;
        worst = worst.min(bq_inequalities_check(&a, &u, &v)?.min_slack());
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: worst >= -1e-10 && within(elapsed, 1.0),
        detail: format!("1000 triples in d = 2, 3, min slack {worst:.3e}, {elapsed:.1?}"),
    })
}

fn phase_transition() -> Result<Outcome> {
    let start = Instant::now();
    let cfg = preset("prop-9-2");
    let s = Subshift::full_shift(3);
    let c = phase_transition_cocycle(2.0, cfg.theta.expect("theta"))?;
    let psi = Potential::zero(3);
    let g = rpf_solve(&s, &psi)?;

    let mut words_ok = true;
    for n in 1..=50 {
        let ones = Word::new(vec![0; n]);
        let diag = c.product(&ones).to_matrix();
        words_ok &= diag.norm() == 2f64.powi(n as i32);
        let j = ones.concat(&Word::new(vec![1])).concat(&ones);
        words_ok &= c.product(&j).to_matrix().norm() == 1.0;
    }

    let witness = MarkovChainSpec::bernoulli(&s, &[0.0, 0.5, 0.5])?;
    let mut brackets_ok = true;
    let mut tested = 0;
    for &t in cfg.t_grid.iter().filter(|&&t| t < 0.0) {
        let mut est = truncated_pressure(&s, &c, &psi, t, cfg.n)?;
        est.raise_lower(variational_witness(&s, &c, &psi, t, &witness, McOptions::default())?.value);
        brackets_ok &= est.lower >= 2f64.ln() - 1e-9 && est.upper <= 3f64.ln() + 1e-9;
        tested += 1;
    }

    let cold = gibbs_ratio_report(&leading_eigen(&s, &c, &g, -4.0, cfg.grid_m)?, &s, &c, &g, 12)?;
    let warm = gibbs_ratio_report(&leading_eigen(&s, &c, &g, -0.1, cfg.grid_m)?, &s, &c, &g, 10)?;
    let in_range = |rows: &[thermocycle::transfer::GibbsRow], lo: usize, hi: usize| {
        rows.iter().filter(move |r| r.n >= lo && r.n <= hi).flat_map(|r| [r.growth_factor, r.spread_growth]).collect::<Vec<_>>()
    };
    let cold_g = in_range(&cold.rows, 6, 12);
    let warm_g = in_range(&warm.rows, 6, 10);
    let cold_min = cold_g.iter().map(|x| x.unwrap_or(f64::NAN)).fold(f64::INFINITY, f64::min);
    let warm_lo = warm_g.iter().map(|x| x.unwrap_or(f64::NAN)).fold(f64::INFINITY, f64::min);
    let warm_hi = warm_g.iter().map(|x| x.unwrap_or(f64::NAN)).fold(f64::NEG_INFINITY, f64::max);
    let blowup = cold_g.len() == 14 && cold_g.iter().all(|x| x.is_some_and(|v| v >= 1.5));
    let stable = warm_g.len() == 10 && warm_g.iter().all(|x| x.is_some_and(|v| (0.9..=1.1).contains(&v)));
    let elapsed = start.elapsed();
    Ok(Outcome {
        pass: words_ok && brackets_ok && tested > 0 && blowup && stable && within(elapsed, 300.0),
        detail: format!(
            "word facts {words_ok}, brackets {brackets_ok} ({tested} t < 0), t=-4 min growth {cold_min:.3}, t=-0.1 growth in [{warm_lo:.4}, {warm_hi:.4}], {elapsed:.1?}"
        ),
    })
}

fn typicality() -> Result<Outcome> {
    let start = Instant::now();
    let a = preset("prop-9-1");
    let b = preset("rotation-only");
    let (cert, _) = certify(&a.subshift, &a.cocycle, a.max_period, a.max_connect)?;
    let (rot, _) = certify(&b.subshift, &b.cocycle, b.max_period, b.max_connect)?;
    let (ok_a, da) = match &cert {
        TypicalityOutcome::Certified(c) => (
            c.modulus_margin > 1e-3 && c.min_independence_sv > 1e-3,
            format!("p = {}, z = {}, margins {:.3e} / {:.3e}", c.p, c.z, c.modulus_margin, c.min_independence_sv),
        ),
        TypicalityOutcome::Inconclusive(r) => (false, format!("prop-9-1 inconclusive: {}", r.reason)),
    };
    let (ok_b, db) = match &rot {
        TypicalityOutcome::Inconclusive(r) => (r.structural, format!("rotation-only inconclusive, structural = {}", r.structural)),
        TypicalityOutcome::Certified(c) => (false, format!("rotation-only unexpectedly certified by {}", c.p)),
    };
    let elapsed = start.elapsed();
    Ok(Outcome { pass: ok_a && ok_b && within(elapsed, 30.0), detail: format!("{da}; {db}; {elapsed:.1?}") })
}

fn ldp_sign() -> Result<Outcome> {
    let cfg = preset("prop-9-1");
    let g = rpf_solve(&cfg.subshift, &cfg.psi)?;
    let n: Vec<usize> = (4..=14).collect();
    let r = ldp_tail_rates(&cfg.subshift, &cfg.cocycle, &g, 0.2, &n, &LdpMode::Norm, LdpMeasure::Gibbs, None)?;
    Ok(Outcome {
        pass: r.slope.is_some_and(|b| b < -0.01),
        detail: format!("epsilon 0.2, n = 4..14, fitted slope {:?}", r.slope),
    })
}

fn dimension_positivity() -> Result<Outcome> {
    let cfg = preset("prop-9-1");
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let levels = [512, 1024, 2048]
        .iter()
        .map(|&m| leading_eigen(s, c, &g, 0.0, m).map(|sd| sd.eta()))
        .collect::<Result<Vec<_>>>()?;
    let s_grid: Vec<f64> = (1..=20).map(|i| 0.05 * i as f64).collect();
    let v_grid: Vec<f64> = (0..256).map(|k| k as f64 * PI / 256.0).collect();
    let est = eta_dimension_estimate(&levels, &s_grid, &v_grid)?.estimate;
    let points: Vec<EtaMeasure> = [512, 1024, 2048].iter().map(|&m| EtaMeasure::point_mass(m, 0.3)).collect();
    let control = eta_dimension_estimate(&points, &s_grid, &v_grid)?.estimate;
    Ok(Outcome {
        pass: est >= 0.05 && control == 0.0,
        detail: format!("estimate {est:.2} at M = 512/1024/2048, point-mass control {control}"),
    })
}

fn row_sums() -> Result<Outcome> {
    let cfg = preset("prop-9-1");
    let (s, c) = (&cfg.subshift, &cfg.cocycle);
    let g = rpf_solve(s, &cfg.psi)?;
    let sd = leading_eigen(s, c, &g, -0.1, cfg.grid_m)?;
    let r = g_t_rowsum_check(&sd, s, c, &g, 40, 50, cfg.seed)?;
    Ok(Outcome {
        pass: r.max_deviation <= 0.02,
        detail: format!("t = -0.1, 50 samples, window 40, max |sum - 1| = {:.2e}", r.max_deviation),
    })
}

fn main() {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("AC1 t=0 consistency", t_zero_consistency),
        ("AC2 pressure/eigenvalue cross-check", pressure_eigen_cross_check),
        ("AC3 derivative identity", derivative_identity),
        ("AC4 exchange identity", exchange_identity),
        ("AC5 comparison inequalities", bq_inequalities),
        ("AC6 phase transition reproduction", phase_transition),
        ("AC7 typicality", typicality),
        ("AC8 LDP sign", ldp_sign),
        ("AC9 dimension positivity", dimension_positivity),
        ("AC10 g_t row sums", row_sums),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let (pass, detail) = match run() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failures += 1;
        }
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failures} failed", 10 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
