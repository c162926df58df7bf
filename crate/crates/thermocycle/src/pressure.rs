//! Truncated pressure of the potentials S_n psi + t log||A^n|| with rigorous brackets,
//! pressure curves, convexity diagnostics and Legendre transforms.

use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{singular, OneStepCocycle, ScaledMatrix};
use crate::error::{Error, Result};
use crate::potential::{additive_pressure, Potential};
use crate::report::{fmt17, Table};
use crate::sft::{Subshift, Word};

/// Largest number of n-words summed by full enumeration.
pub const ENUMERATION_CAP: u128 = 20_000_000;
pub const CONVEXITY_TOL: f64 = 1e-6;

pub fn check_cap(s: &Subshift, n: usize) -> Result<()> {
    let count = s.count_words(n);
    if count > ENUMERATION_CAP {
        return Err(Error::EnumerationCap { count, cap: ENUMERATION_CAP });
    }
    Ok(())
}

/// Streaming log-sum-exp; the result depends only on the order of the pushed values.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl LogSumExp {
    pub fn push(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    pub fn merge(&mut self, other: &LogSumExp) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.sum = self.sum * (self.max - other.max).exp() + other.sum;
            self.max = other.max;
        } else {
            self.sum += other.sum * (other.max - self.max).exp();
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Per-depth data collected in one enumeration pass.
#[derive(Clone, Debug)]
pub struct DepthSums {
    /// log s_m for m = 1..=n (index m - 1).
    pub log_sums: Vec<f64>,
    /// max |phi_{t,m}| over C_m for m = 1..=n.
    pub sup_abs: Vec<f64>,
}

/// log of sum over C_m of e^{phi_{t,m}}, for every m up to n.
pub fn depth_sums(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t: f64, n: usize) -> Result<DepthSums> {
    psi.check_depth_one(s)?;
    c.check_alphabet(s)?;
    if n == 0 {
        return Err(Error::InvalidInput("depth must be at least 1".into()));
    }
    check_cap(s, n)?;
    // The partition by first symbol is fixed, so the result does not depend on the thread count.
    let branches: Vec<(Vec<LogSumExp>, Vec<f64>)> = (0..s.q())
        .into_par_iter()
        .map(|root| {
            let mut acc = vec![LogSumExp::default(); n];
            let mut sup = vec![0.0f64; n];
            c.visit_subtree(s, root, n, &mut |w: &Word, p: &ScaledMatrix| {
                let m = w.len();
                let mut v = psi.birkhoff(w);
                if t != 0.0 {
                    v += t * p.log_norm();
                }
                acc[m - 1].push(v);
                sup[m - 1] = sup[m - 1].max(v.abs());
                true
            });
            (acc, sup)
        })
        .collect();
    let mut total = vec![LogSumExp::default(); n];
    let mut sup_abs = vec![0.0f64; n];
    for (acc, sup) in &branches {
        for m in 0..n {
            total[m].merge(&acc[m]);
            sup_abs[m] = sup_abs[m].max(sup[m]);
        }
    }
    Ok(DepthSums { log_sums: total.iter().map(LogSumExp::value).collect(), sup_abs })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PressureEstimate {
    pub t: f64,
    pub n: usize,
    pub p_n: f64,
    pub lower: f64,
    pub upper: f64,
}

impl PressureEstimate {
    /// Raises the lower bracket with an externally certified value (for example a variational witness).
    pub fn raise_lower(&mut self, witness: f64) {
        if witness > self.lower {
            self.lower = witness;
        }
    }
}

/// Pressures of the additive potentials psi + t log||A_a||, psi + t log sigma_d(A_a)
/// and psi + (t/d) log|det A_a|.
fn additive_family(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t: f64) -> Result<(f64, f64, f64)> {
    let d = c.dim() as f64;
    let mut top = Vec::with_capacity(s.q());
    let mut bottom = Vec::with_capacity(s.q());
    let mut det = Vec::with_capacity(s.q());
    for a in 0..s.q() {
        let sv = singular(c.generator(a));
        let base = psi.at(a);
        top.push(base + t * sv.values[0].ln());
        bottom.push(base + t * sv.values[sv.values.len() - 1].ln());
        det.push(base + t / d * c.generator_log_abs_det(a));
    }
    Ok((additive_pressure(s, &top)?, additive_pressure(s, &bottom)?, additive_pressure(s, &det)?))
}

fn brackets_from(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t: f64, sums: &DepthSums) -> Result<(f64, f64)> {
    let n = sums.log_sums.len();
    let (p_top, p_bottom, p_det) = additive_family(s, c, psi, t)?;
    if t < 0.0 {
        // a_m = e^{-|phi_k|} s_{m-k} is supermultiplicative, so sup_m (1/m) log a_m is a lower bound.
        let k = s.mixing_gap();
        let phi_k = if k == 0 { 0.0 } else { sums.sup_abs[k - 1] };
        let mut lower = p_top;
        for m in (k + 1)..=n {
            lower = lower.max((sums.log_sums[m - k - 1] - phi_k) / m as f64);
        }
        let upper = p_bottom.min(p_det);
        Ok((lower, upper))
    } else {
        // s_m is submultiplicative, so every (1/m) log s_m bounds the limit from above.
        let mut upper = p_top;
        for m in 1..=n {
            upper = upper.min(sums.log_sums[m - 1] / m as f64);
        }
        let lower = p_bottom.max(p_det);
        Ok((lower, upper))
    }
}

/// Lower and upper bounds for the pressure of S_n psi + t log||A^n||, using words up to length n.
pub fn bracket_bounds(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t: f64, n: usize) -> Result<(f64, f64)> {
    let sums = depth_sums(s, c, psi, t, n)?;
    brackets_from(s, c, psi, t, &sums)
}

pub fn truncated_pressure(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t: f64, n: usize) -> Result<PressureEstimate> {
    let sums = depth_sums(s, c, psi, t, n)?;
    let (lower, upper) = brackets_from(s, c, psi, t, &sums)?;
    Ok(PressureEstimate { t, n, p_n: sums.log_sums[n - 1] / n as f64, lower, upper })
}

#[derive(Clone, Debug, Serialize)]
pub struct PressureCurve {
    pub grid: Vec<f64>,
    pub estimates: Vec<PressureEstimate>,
    /// Central differences of p_n inside the grid, one-sided at the ends; empty slots for a single point.
    pub derivative_at: Vec<Option<f64>>,
}

pub fn pressure_curve(s: &Subshift, c: &OneStepCocycle, psi: &Potential, t_grid: &[f64], n: usize) -> Result<PressureCurve> {
    if t_grid.is_empty() {
        return Err(Error::InvalidInput("t grid is empty".into()));
    }
    if t_grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(Error::InvalidInput("t grid must be strictly increasing".into()));
    }
    let estimates = t_grid
        .iter()
        .map(|&t| truncated_pressure(s, c, psi, t, n))
        .collect::<Result<Vec<_>>>()?;
    let p: Vec<f64> = estimates.iter().map(|e| e.p_n).collect();
    Ok(PressureCurve {
        grid: t_grid.to_vec(),
        derivative_at: slopes(t_grid, &p),
        estimates,
    })
}

pub fn slopes(t: &[f64], p: &[f64]) -> Vec<Option<f64>> {
    let k = t.len();
    (0..k)
        .map(|i| {
            if k < 2 {
                None
            } else if i == 0 {
                Some((p[1] - p[0]) / (t[1] - t[0]))
            } else if i == k - 1 {
                Some((p[k - 1] - p[k - 2]) / (t[k - 1] - t[k - 2]))
            } else {
                Some((p[i + 1] - p[i - 1]) / (t[i + 1] - t[i - 1]))
            }
        })
        .collect()
}

impl PressureCurve {
    pub fn values(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.p_n).collect()
    }

    /// Rows t, n, p_n, lower, upper, slope, plus optional named extra columns.
    pub fn to_table(&self, extra: &[(&str, Vec<f64>)]) -> Table {
        let mut header = vec!["t", "n", "p_n", "lower", "upper", "slope"];
        header.extend(extra.iter().map(|(h, _)| *h));
        let mut table = Table::new(&header);
        for (i, e) in self.estimates.iter().enumerate() {
            let mut row = vec![
                fmt17(e.t),
                e.n.to_string(),
                fmt17(e.p_n),
                fmt17(e.lower),
                fmt17(e.upper),
                self.derivative_at[i].map_or_else(|| "nan".into(), fmt17),
            ];
            row.extend(extra.iter().map(|(_, v)| fmt17(v[i])));
            table.push(row);
        }
        table
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum CurveShape {
    Linear,
    /// Longest run of interior grid points whose second differences all exceed the tolerance.
    StrictlyConvexWindow { t_start: f64, t_end: f64 },
    /// Neither linear nor containing a strictly convex run.
    Indeterminate,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityReport {
    pub tol: f64,
    /// (t, p(t-) - 2p(t) + p(t+)) at interior grid points.
    pub second_differences: Vec<(f64, f64)>,
    pub shape: CurveShape,
    /// Interior points where the second difference is below -tol.
    pub violations: Vec<(f64, f64)>,
    /// Interior point with the largest second difference, a proxy for where the curve bends most.
    pub kink: Option<(f64, f64)>,
}

pub fn convexity_report(grid: &[f64], values: &[f64], tol: f64) -> Result<ConvexityReport> {
    if grid.len() < 3 || values.len() != grid.len() {
        return Err(Error::InsufficientGrid { points: grid.len().min(values.len()) });
    }
    let sd: Vec<(f64, f64)> = (1..grid.len() - 1)
        .map(|i| (grid[i], values[i - 1] - 2.0 * values[i] + values[i + 1]))
        .collect();
    let violations: Vec<(f64, f64)> = sd.iter().copied().filter(|(_, v)| *v < -tol).collect();
    let kink = sd.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1));
    let shape = if sd.iter().all(|(_, v)| v.abs() < tol) {
        CurveShape::Linear
    } else {
        let mut best: Option<(usize, usize)> = None;
        let mut start = None;
        for i in 0..=sd.len() {
            let convex = i < sd.len() && sd[i].1 > tol;
            match (convex, start) {
                (true, None) => start = Some(i),
                (false, Some(st)) => {
                    if best.map_or(true, |(a, b)| i - st > b - a) {
                        best = Some((st, i));
                    }
                    start = None;
                }
                _ => {}
            }
        }
        match best {
            Some((a, b)) => CurveShape::StrictlyConvexWindow { t_start: sd[a].0, t_end: sd[b - 1].0 },
            None => CurveShape::Indeterminate,
        }
    };
    Ok(ConvexityReport { tol, second_differences: sd, shape, violations, kink })
}

impl PressureCurve {
    pub fn convexity(&self, tol: f64) -> Result<ConvexityReport> {
        convexity_report(&self.grid, &self.values(), tol)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LegendreEntry {
    pub alpha: f64,
    /// inf over the grid of p(t) - t alpha, reported only when attained inside the grid.
    pub value: Option<f64>,
    /// The grid infimum itself, always present; an upper estimate of the transform.
    pub grid_inf: f64,
    pub argmin_t: f64,
    pub attained: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LegendreTable {
    pub entries: Vec<LegendreEntry>,
    /// Grid infimum of p(t) at alpha = 0.
    pub plateau_at_zero: f64,
}

pub fn legendre_spectrum(grid: &[f64], values: &[f64], alpha_grid: &[f64], tol: f64) -> Result<LegendreTable> {
    let report = convexity_report(grid, values, tol)?;
    if let Some(&(t, value)) = report.violations.first() {
        return Err(Error::NonConvexInput { t, value });
    }
    let k = grid.len();
    let evaluate = |alpha: f64| {
        let vals: Vec<f64> = (0..k).map(|i| values[i] - grid[i] * alpha).collect();
        let (imin, &vmin) = vals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("grid is nonempty");
        let slack = 1e-12 * vmin.abs().max(1.0);
        let attained = (1..k - 1).any(|i| vals[i] <= vmin + slack);
        (vmin, grid[imin], attained)
    };
    let entries = alpha_grid
        .iter()
        .map(|&alpha| {
            let (grid_inf, argmin_t, attained) = evaluate(alpha);
            LegendreEntry { alpha, value: attained.then_some(grid_inf), grid_inf, argmin_t, attained }
        })
        .collect();
    Ok(LegendreTable { entries, plateau_at_zero: evaluate(0.0).0 })
}
