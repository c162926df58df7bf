//! Markov measures, Lyapunov exponents, entropy, variational witnesses and LDP tail tables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{singular, OneStepCocycle, ScaledMatrix};
use crate::error::{Error, Result};
use crate::potential::{gibbs_markov_measure, CylinderMeasure, GFunction, Potential};
use crate::pressure::check_cap;
use crate::projective::estimate_xi_star;
use crate::report::{fmt17, Table};
use crate::sft::{Subshift, Word};
use crate::transfer::{mu_t_cylinders, sample_index, SpectralData};

pub const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MarkovChainSpec {
    pub initial: Vec<f64>,
    pub transitions: Vec<Vec<f64>>,
}

impl MarkovChainSpec {
    pub fn new(s: &Subshift, initial: Vec<f64>, transitions: Vec<Vec<f64>>) -> Result<Self> {
        let q = s.q();
        if initial.len() != q || transitions.len() != q || transitions.iter().any(|r| r.len() != q) {
            return Err(Error::InvalidInput(format!("chain must be over {q} symbols")));
        }
        if initial.iter().any(|&x| !(x >= 0.0)) || (initial.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidInput("initial distribution must be a probability vector".into()));
        }
        for (a, row) in transitions.iter().enumerate() {
            if row.iter().any(|&x| !(x >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!("transition row {} is not stochastic", a + 1)));
            }
            for (b, &p) in row.iter().enumerate() {
                if p > 0.0 && !s.allowed(a, b) {
                    return Err(Error::InvalidInput(format!(
                        "transition {}->{} has positive probability but is not allowed",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(MarkovChainSpec { initial, transitions })
    }

    /// Independent symbols with the given weights.
    pub fn bernoulli(s: &Subshift, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        let p: Vec<f64> = weights.iter().map(|w| w / total).collect();
        MarkovChainSpec::new(s, p.clone(), vec![p; s.q()])
    }

    /// The stationary chain of the Gibbs measure of `g`.
    pub fn from_gfunction(s: &Subshift, g: &GFunction) -> Result<Self> {
        let mut rows = g.forward_transitions();
        for row in rows.iter_mut() {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= total);
        }
        let total: f64 = g.stationary.iter().sum();
        MarkovChainSpec::new(s, g.stationary.iter().map(|x| x / total).collect(), rows)
    }

    pub fn q(&self) -> usize {
        self.initial.len()
    }

    /// States reachable from the support of the initial distribution.
    pub fn support(&self) -> Vec<usize> {
        let q = self.q();
        let mut seen = vec![false; q];
        let mut stack: Vec<usize> = (0..q).filter(|&a| self.initial[a] > 0.0).collect();
        stack.iter().for_each(|&a| seen[a] = true);
        while let Some(a) = stack.pop() {
            for b in 0..q {
                if self.transitions[a][b] > 0.0 && !seen[b] {
                    seen[b] = true;
                    stack.push(b);
                }
            }
        }
        (0..q).filter(|&a| seen[a]).collect()
    }

    fn check_irreducible(&self) -> Result<Vec<usize>> {
        let support = self.support();
        for &start in &support {
            let mut seen = vec![false; self.q()];
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(a) = stack.pop() {
                for b in 0..self.q() {
                    if self.transitions[a][b] > 0.0 && !seen[b] {
                        seen[b] = true;
                        stack.push(b);
                    }
                }
            }
            if support.iter().any(|&b| !seen[b]) {
                return Err(Error::Reducible);
            }
        }
        Ok(support)
    }

    /// Stationary vector of the chain restricted to its support.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let support = self.check_irreducible()?;
        let q = self.q();
        let mut pi = vec![0.0; q];
        support.iter().for_each(|&a| pi[a] = 1.0 / support.len() as f64);
        // Lazy chain: same stationary vector, no periodicity.
        for _ in 0..1_000_000 {
            let mut next = vec![0.0; q];
            for a in 0..q {
                next[a] += 0.5 * pi[a];
                for b in 0..q {
                    next[b] += 0.5 * pi[a] * self.transitions[a][b];
                }
            }
            let diff: f64 = next.iter().zip(&pi).map(|(x, y)| (x - y).abs()).sum();
            pi = next;
            if diff < 1e-15 {
                break;
            }
        }
        let total: f64 = pi.iter().sum();
        Ok(pi.into_iter().map(|x| x / total).collect())
    }

    /// Masses initial(i_0) p(i_0, i_1) ... p(i_{n-2}, i_{n-1}) of all admissible n-cylinders.
    pub fn cylinder_measure(&self, s: &Subshift, n: usize) -> Result<CylinderMeasure> {
        check_cap(s, n)?;
        let words: Vec<Word> = s.enumerate_words(n).collect();
        let masses = words.iter().map(|w| self.word_mass(w)).collect();
        Ok(CylinderMeasure::new(n, words, masses))
    }

    pub fn word_mass(&self, w: &Word) -> f64 {
        let sym = w.symbols();
        let mut m = self.initial[sym[0] as usize];
        for p in sym.windows(2) {
            m *= self.transitions[p[0] as usize][p[1] as usize];
        }
        m
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng, n: usize) -> Word {
        let mut w = Word::empty();
        let mut state = sample_index(rng, &self.initial);
        w.push(state);
        for _ in 1..n {
            state = sample_index(rng, &self.transitions[state]);
            w.push(state);
        }
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LyapunovMethod {
    ExactCylinder,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovReport {
    pub lambda1: f64,
    pub lambda2: f64,
    pub n: usize,
    pub method: LyapunovMethod,
    pub stderr: Option<f64>,
}

/// (1/n) sum_I mu(I) log|A^n(I)| and the matching second exponent from the wedge norm.
pub fn lyapunov_exact(s: &Subshift, c: &OneStepCocycle, mu: &CylinderMeasure) -> Result<LyapunovReport> {
    c.check_alphabet(s)?;
    check_cap(s, mu.n)?;
    let n = mu.n;
    let mut first = Vec::with_capacity(mu.words.len());
    let mut second = Vec::with_capacity(mu.words.len());
    c.for_each_word(s, n, |w, p| {
        let m = mu.mass(w);
        if m > 0.0 {
            let l1 = p.log_norm();
            first.push(m * l1);
            second.push(if c.dim() > 1 { m * (p.wedge_log_norm() - l1) } else { m * l1 });
        }
    });
    Ok(LyapunovReport {
        lambda1: crate::potential::pairwise_sum(&first) / n as f64,
        lambda2: crate::potential::pairwise_sum(&second) / n as f64,
        n,
        method: LyapunovMethod::ExactCylinder,
        stderr: None,
    })
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let k = v.len() as f64;
    let mean = v.iter().sum::<f64>() / k;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Average of (1/n) log|A^n(x)| over `reps` trajectories. Trajectory r uses stream r of the
/// generator seeded with `seed`, so the result does not depend on scheduling.
pub fn lyapunov_mc(c: &OneStepCocycle, chain: &MarkovChainSpec, n: usize, reps: usize, seed: u64) -> Result<LyapunovReport> {
    if n == 0 || reps == 0 {
        return Err(Error::InvalidInput("trajectory length and repetitions must be positive".into()));
    }
    if chain.q() != c.q() {
        return Err(Error::InvalidInput("chain and cocycle alphabets differ".into()));
    }
    let samples: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut p = ScaledMatrix::identity(c.dim());
            let mut state = sample_index(&mut rng, &chain.initial);
            for k in 0..n {
                if k > 0 {
                    state = sample_index(&mut rng, &chain.transitions[state]);
                }
                p.left_mul(c.generator(state), c.generator_log_abs_det(state));
            }
            let l1 = p.log_norm();
            let l2 = if c.dim() > 1 { p.wedge_log_norm() - l1 } else { l1 };
            (l1 / n as f64, l2 / n as f64)
        })
        .collect();
    let (l1, e1) = mean_and_stderr(&samples.iter().map(|x| x.0).collect::<Vec<_>>());
    let (l2, _) = mean_and_stderr(&samples.iter().map(|x| x.1).collect::<Vec<_>>());
    Ok(LyapunovReport { lambda1: l1, lambda2: l2, n, method: LyapunovMethod::MonteCarlo, stderr: Some(e1) })
}

/// Entropy -sum_i pi_i sum_j p_ij log p_ij of the stationary chain.
pub fn markov_entropy(chain: &MarkovChainSpec) -> Result<f64> {
    let pi = chain.stationary()?;
    let mut h = 0.0;
    for (a, row) in chain.transitions.iter().enumerate() {
        if pi[a] == 0.0 {
            continue;
        }
        let row_h: f64 = row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        h += pi[a] * row_h;
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug)]
pub struct McOptions {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions { n: 2000, reps: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WitnessReport {
    pub value: f64,
    pub entropy: f64,
    pub potential_mean: f64,
    pub lambda1: f64,
    pub stderr: f64,
    /// True when the Lyapunov term is exact (t = 0 or orthogonal generators on the support).
    pub exact: bool,
}

fn is_orthogonal(m: &crate::cocycle::Matrix) -> bool {
    singular(m).values.iter().all(|s| (s - 1.0).abs() < 1e-12)
}

/// h(chain) + integral of psi + t lambda_1, a lower bound for the pressure of S_n psi + t log|A^n|.
pub fn variational_witness(
    s: &Subshift,
    c: &OneStepCocycle,
    psi: &Potential,
    t: f64,
    chain: &MarkovChainSpec,
    mc: McOptions,
) -> Result<WitnessReport> {
    psi.check_depth_one(s)?;
    c.check_alphabet(s)?;
    let pi = chain.stationary()?;
    let entropy = markov_entropy(chain)?;
    let potential_mean: f64 = pi.iter().enumerate().map(|(a, p)| p * psi.at(a)).sum();
    let support = chain.support();
    let orthogonal = support.iter().all(|&a| is_orthogonal(c.generator(a)));
    let (lambda1, stderr, exact) = if t == 0.0 || orthogonal {
        (0.0, 0.0, true)
    } else {
        let stationary_chain = MarkovChainSpec { initial: pi, transitions: chain.transitions.clone() };
        let r = lyapunov_mc(c, &stationary_chain, mc.n, mc.reps, mc.seed)?;
        (r.lambda1, r.stderr.unwrap_or(0.0), false)
    };
    let lyap_term = if t == 0.0 { 0.0 } else { t * lambda1 };
    Ok(WitnessReport { value: entropy + potential_mean + lyap_term, entropy, potential_mean, lambda1, stderr: (t * stderr).abs(), exact })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LdpMode {
    /// (1/n) log|A^n(x)| against lambda_1.
    Norm,
    /// (1/n) log|A^n(x) v| against lambda_1, worst case over the listed angles of v.
    VectorNorm { angles: Vec<f64> },
    /// (1/n) log(sigma_2/sigma_1)(A^n(x)) against lambda_2 - lambda_1.
    Gap,
    /// (1/n) log|A^[n](x) xi(sigma^n x)| against lambda_1, with xi estimated from the next
    /// `window` symbols.
    XiStarNorm { window: usize },
}

impl LdpMode {
    pub fn name(&self) -> &'static str {
        match self {
            LdpMode::Norm => "norm",
            LdpMode::VectorNorm { .. } => "vector-norm",
            LdpMode::Gap => "gap",
            LdpMode::XiStarNorm { .. } => "xi-star-norm",
        }
    }
}

/// Which measure the deviation masses are taken under.
#[derive(Clone, Copy)]
pub enum LdpMeasure<'a> {
    Gibbs,
    Equilibrium(&'a SpectralData),
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpRow {
    pub n: usize,
    pub mass: f64,
    /// (1/n) log mass, -inf for an empty deviation set.
    pub empirical_rate: f64,
    pub zero_mass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LdpReport {
    pub mode: String,
    pub epsilon: f64,
    pub reference: f64,
    pub rows: Vec<LdpRow>,
    /// Least-squares slope of log mass against n over the nonzero rows.
    pub slope: Option<f64>,
    pub negative: bool,
    /// Mass of cylinders whose direction estimate was degenerate, per n (xi-star mode).
    pub undetermined_mass: Vec<f64>,
    /// Largest singular-gap bound of the direction estimates (xi-star mode).
    pub xi_err_bound: Option<f64>,
}

impl LdpReport {
    /// Columns mode, epsilon, n, mass, rate_fit, empirical_rate, flag.
    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["mode", "epsilon", "n", "mass", "rate_fit", "empirical_rate", "flag"]);
        for r in &self.rows {
            table.push(vec![
                self.mode.clone(),
                fmt17(self.epsilon),
                r.n.to_string(),
                fmt17(r.mass),
                self.slope.map_or_else(|| "nan".into(), fmt17),
                fmt17(r.empirical_rate),
                if r.zero_mass { "zero-mass".into() } else { String::new() },
            ]);
        }
        table
    }
}

fn masses(s: &Subshift, c: &OneStepCocycle, g: &GFunction, measure: LdpMeasure, n: usize) -> Result<CylinderMeasure> {
    match measure {
        LdpMeasure::Gibbs => {
            check_cap(s, n)?;
            Ok(gibbs_markov_measure(s, g, n))
        }
        LdpMeasure::Equilibrium(sd) => Ok(mu_t_cylinders(sd, s, c, g, n)?.measure),
    }
}

/// Least-squares slope of y against x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx)
}

/// Richardson-extrapolated (lambda_1, lambda_2 - lambda_1) of `measure` from depths n and n/2.
pub fn lyapunov_reference(s: &Subshift, c: &OneStepCocycle, g: &GFunction, measure: LdpMeasure, n: usize) -> Result<(f64, f64)> {
    let full = lyapunov_exact(s, c, &masses(s, c, g, measure, n)?)?;
    let half = lyapunov_exact(s, c, &masses(s, c, g, measure, (n / 2).max(1))?)?;
    let l1 = 2.0 * full.lambda1 - half.lambda1;
    let gap = 2.0 * (full.lambda2 - full.lambda1) - (half.lambda2 - half.lambda1);
    Ok((l1, gap))
}

/// Exact masses of the deviation sets for every n in `n_range`, with the fitted exponential rate.
///
/// `reference` overrides the limit the functional is compared with; by default it is the
/// Richardson extrapolation from the largest n of the range.
pub fn ldp_tail_rates(
    s: &Subshift,
    c: &OneStepCocycle,
    g: &GFunction,
    epsilon: f64,
    n_range: &[usize],
    mode: &LdpMode,
    measure: LdpMeasure,
    reference: Option<f64>,
) -> Result<LdpReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if n_range.is_empty() || n_range.contains(&0) {
        return Err(Error::InvalidInput("n range must be nonempty with positive entries".into()));
    }
    c.check_alphabet(s)?;
    let n_max = *n_range.iter().max().unwrap();
    let extra = match mode {
        LdpMode::XiStarNorm { window } if *window == 0 => {
            return Err(Error::InvalidInput("xi-star window must be positive".into()))
        }
        LdpMode::XiStarNorm { window } => *window,
        _ => 0,
    };
    check_cap(s, n_max + extra)?;
    let reference = match reference {
        Some(r) => r,
        None => {
            let (l1, gap) = lyapunov_reference(s, c, g, measure, n_max)?;
            if *mode == LdpMode::Gap { gap } else { l1 }
        }
    };

    let xi_table: Vec<(Word, Option<[f64; 2]>)> = if extra > 0 {
        s.enumerate_words(extra)
            .map(|w| {
                let dir = estimate_xi_star(c, &w, extra).ok().map(|e| [e.dir.rep()[0], e.dir.rep()[1]]);
                (w, dir)
            })
            .collect()
    } else {
        Vec::new()
    };
    let xi_err_bound = (extra > 0).then(|| {
        xi_table
            .iter()
            .filter_map(|(w, d)| d.map(|_| estimate_xi_star(c, w, extra).map(|e| e.err_bound).unwrap_or(1.0)))
            .fold(0.0, f64::max)
    });

    let mut rows = Vec::new();
    let mut undetermined_mass = Vec::new();
    for &n in n_range {
        let mu = masses(s, c, g, measure, n + extra)?;
        let nf = n as f64;
        let mut dev = Vec::new();
        let mut undetermined = 0.0;
        c.for_each_word(s, n, |w, p| {
            match mode {
                LdpMode::Norm => {
                    if (p.log_norm() / nf - reference).abs() > epsilon {
                        dev.push(mu.mass(w));
                    }
                }
                LdpMode::Gap => {
                    let sv = p.log_singular_values();
                    if sv.len() > 1 && ((sv[1] - sv[0]) / nf - reference).abs() > epsilon {
                        dev.push(mu.mass(w));
                    }
                }
                LdpMode::VectorNorm { angles } => {
                    // A^n(I) v = (adjoint product)^T v
                    let fwd = p.transpose();
                    let hit = angles.iter().any(|th| {
                        let v = [th.cos(), th.sin()];
                        (fwd.log_norm_of(&v) / nf - reference).abs() > epsilon
                    });
                    if hit {
                        dev.push(mu.mass(w));
                    }
                }
                LdpMode::XiStarNorm { .. } => {
                    let last = w.last().unwrap();
                    for (tail, dir) in &xi_table {
                        if !s.allowed(last, tail.first().unwrap()) {
                            continue;
                        }
                        let m = mu.mass(&w.concat(tail));
                        match dir {
                            Some(v) => {
                                if (p.log_norm_of(v) / nf - reference).abs() > epsilon {
                                    dev.push(m);
                                }
                            }
                            None => undetermined += m,
                        }
                    }
                }
            }
        });
        let mass = crate::potential::pairwise_sum(&dev);
        rows.push(LdpRow { n, mass, empirical_rate: if mass > 0.0 { mass.ln() / nf } else { f64::NEG_INFINITY }, zero_mass: mass <= 0.0 });
        undetermined_mass.push(undetermined);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| !r.zero_mass).map(|r| (r.n as f64, r.mass.ln())).unzip();
    let slope = ls_slope(&xs, &ys);
    Ok(LdpReport {
        mode: mode.name().into(),
        epsilon,
        reference,
        rows,
        slope,
        negative: slope.is_some_and(|b| b < 0.0),
        undetermined_mass,
        xi_err_bound,
    })
}

/// Draws `count` words of length n from the chain; a convenience for tests and examples.
pub fn sample_words(chain: &MarkovChainSpec, n: usize, count: usize, seed: u64) -> Vec<Word> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| chain.sample(&mut rng, n)).collect()
}
