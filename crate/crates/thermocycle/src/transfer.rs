//! Transfer operator on functions of (first symbol, line in the plane), discretized on an angle grid.
//!
//! A function is tabulated at the nodes theta_m = m pi / M for every symbol and evaluated between
//! nodes by periodic linear interpolation. The operator acts by
//!
//!   (L_t f)(j, u) = sum over a -> j of g(a -> j) |A_a^T u|^t f(a, A_a^T u),
//!
//! and its leading eigenfunction, eigenmeasure and eigenvalue are found by power iteration.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{OneStepCocycle, ScaledMatrix};
use crate::error::{Error, Result};
use crate::potential::{CylinderMeasure, GFunction};
use crate::pressure::check_cap;
use crate::projective::{angle_of, dist, estimate_xi_star, top_direction_scaled, ProjPoint};
use crate::report::{fmt17, Table};
use crate::sft::{Subshift, Word};

pub const DEFAULT_M: usize = 2048;
pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 100_000;
pub const DEFECT_WARN: f64 = 1e-6;

/// Values indexed by (symbol, angle node).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OperatorGrid {
    q: usize,
    m: usize,
    values: Vec<f64>,
}

/// Grid coordinate of an angle: lower node, upper node and the weight of the upper node.
#[inline]
fn locate(theta: f64, m: usize) -> (usize, usize, f64) {
    let pos = theta * m as f64 / PI;
    let fl = pos.floor();
    let i0 = (fl as usize) % m;
    (i0, (i0 + 1) % m, pos - fl)
}

impl OperatorGrid {
    pub fn constant(q: usize, m: usize, value: f64) -> Self {
        OperatorGrid { q, m, values: vec![value; q * m] }
    }

    pub fn from_fn<F: Fn(usize, f64) -> f64>(q: usize, m: usize, f: F) -> Self {
        let mut values = Vec::with_capacity(q * m);
        for j in 0..q {
            for k in 0..m {
                values.push(f(j, node(k, m)));
            }
        }
        OperatorGrid { q, m, values }
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.m + k]
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.values[j * self.m..(j + 1) * self.m]
    }

    /// Linear interpolation in the angle, periodic with period pi.
    #[inline]
    pub fn interpolate(&self, j: usize, theta: f64) -> f64 {
        let (i0, i1, fr) = locate(theta, self.m);
        let r = self.row(j);
        (1.0 - fr) * r[i0] + fr * r[i1]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scale(&self, c: f64) -> OperatorGrid {
        OperatorGrid { q: self.q, m: self.m, values: self.values.iter().map(|v| v * c).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum of self * other over all entries.
    pub fn pair(&self, other: &OperatorGrid) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &OperatorGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |a, (x, y)| a.max((x - y).abs()))
    }
}

/// theta_k = k pi / M.
#[inline]
pub fn node(k: usize, m: usize) -> f64 {
    k as f64 * PI / m as f64
}

#[derive(Clone, Copy, Debug)]
struct Pullback {
    weight: f64,
    i0: u32,
    i1: u32,
    frac: f64,
}

/// The discretized operator at a fixed t and grid size.
pub struct TransferOperator {
    q: usize,
    m: usize,
    t: f64,
    /// (a, j, g(a -> j)) for every allowed transition.
    edges: Vec<(usize, usize, f64)>,
    /// pull[a][k]: weight |A_a^T u_k|^t and interpolation data of the angle of A_a^T u_k.
    pull: Vec<Vec<Pullback>>,
}

fn require_plane(c: &OneStepCocycle) -> Result<()> {
    if c.dim() != 2 {
        return Err(Error::DimensionUnsupported { d: c.dim() });
    }
    Ok(())
}

impl TransferOperator {
    pub fn new(s: &Subshift, c: &OneStepCocycle, g: &GFunction, t: f64, m: usize) -> Result<Self> {
        require_plane(c)?;
        c.check_alphabet(s)?;
        if m < 2 {
            return Err(Error::InvalidInput("grid size must be at least 2".into()));
        }
        let q = s.q();
        let mut edges = Vec::new();
        for j in 0..q {
            for a in s.predecessors(j) {
                edges.push((a, j, g.g(a, j)));
            }
        }
        let pull = (0..q)
            .map(|a| {
                let [p, r, u, v] = c.generator_transpose(a).as2();
                (0..m)
                    .map(|k| {
                        let (sn, cs) = node(k, m).sin_cos();
                        let (x, y) = (p * cs + r * sn, u * cs + v * sn);
                        let (i0, i1, frac) = locate(angle_of(x, y), m);
                        let weight = if t == 0.0 { 1.0 } else { x.hypot(y).powf(t) };
                        Pullback { weight, i0: i0 as u32, i1: i1 as u32, frac }
                    })
                    .collect()
            })
            .collect();
        Ok(TransferOperator { q, m, t, edges, pull })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn check_grid(&self, f: &OperatorGrid) -> Result<()> {
        if f.q != self.q || f.m != self.m {
            return Err(Error::InvalidInput(format!(
                "grid is {}x{}, operator expects {}x{}",
                f.q, f.m, self.q, self.m
            )));
        }
        Ok(())
    }

    pub fn apply(&self, f: &OperatorGrid) -> Result<OperatorGrid> {
        self.check_grid(f)?;
        let m = self.m;
        // term[a][k] = |A_a^T u_k|^t f(a, A_a^T u_k)
        let terms: Vec<Vec<f64>> = (0..self.q)
            .into_par_iter()
            .map(|a| {
                let row = f.row(a);
                self.pull[a]
                    .iter()
                    .map(|p| p.weight * ((1.0 - p.frac) * row[p.i0 as usize] + p.frac * row[p.i1 as usize]))
                    .collect()
            })
            .collect();
        let mut out = vec![0.0; self.q * m];
        for &(a, j, w) in &self.edges {
            let dst = &mut out[j * m..(j + 1) * m];
            for (o, x) in dst.iter_mut().zip(&terms[a]) {
                *o += w * x;
            }
        }
        Ok(OperatorGrid { q: self.q, m, values: out })
    }

    /// Transpose action on weights over grid atoms: (nu L)(a, i) = sum_{j,k} nu(j, k) L[(j,k), (a,i)].
    pub fn apply_adjoint(&self, nu: &OperatorGrid) -> Result<OperatorGrid> {
        self.check_grid(nu)?;
        let m = self.m;
        // Mass flowing into symbol a before interpolation: sum_j g(a -> j) nu(j, k).
        let mut inflow = vec![0.0; self.q * m];
        for &(a, j, w) in &self.edges {
            let src = nu.row(j);
            for (o, x) in inflow[a * m..(a + 1) * m].iter_mut().zip(src) {
                *o += w * x;
            }
        }
        let mut out = vec![0.0; self.q * m];
        for a in 0..self.q {
            let dst = &mut out[a * m..(a + 1) * m];
            for (k, p) in self.pull[a].iter().enumerate() {
                let x = inflow[a * m + k] * p.weight;
                dst[p.i0 as usize] += (1.0 - p.frac) * x;
                dst[p.i1 as usize] += p.frac * x;
            }
        }
        Ok(OperatorGrid { q: self.q, m, values: out })
    }
}

pub fn apply_operator(s: &Subshift, c: &OneStepCocycle, g: &GFunction, t: f64, f: &OperatorGrid) -> Result<OperatorGrid> {
    TransferOperator::new(s, c, g, t, f.m())?.apply(f)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectralData {
    pub t: f64,
    pub rho: f64,
    /// Eigenfunction, normalized so that its pairing with `nu_tilde` is 1.
    pub h: OperatorGrid,
    /// Eigenmeasure weights on grid atoms, summing to 1.
    pub nu_tilde: OperatorGrid,
    /// Estimated ratio of the subleading to the leading eigenvalue.
    pub gap_est: f64,
    pub m: usize,
    pub iterations: usize,
    pub adjoint_iterations: usize,
    /// |L h - rho h|_sup / |rho h|_sup.
    pub residual: f64,
    /// |nu L - rho nu|_1 / rho.
    pub adjoint_residual: f64,
}

impl SpectralData {
    pub fn log_rho(&self) -> f64 {
        self.rho.ln()
    }

    /// Angle marginal of h * nu_tilde, normalized to total mass 1.
    pub fn eta(&self) -> EtaMeasure {
        let mut w = vec![0.0; self.m];
        for j in 0..self.h.q() {
            for (k, x) in w.iter_mut().enumerate() {
                *x += self.h.get(j, k) * self.nu_tilde.get(j, k);
            }
        }
        EtaMeasure::new(w)
    }

    /// JSON object with t, rho, log_rho, gap_est, M and iterations.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "t": self.t,
            "rho": self.rho,
            "log_rho": self.log_rho(),
            "gap_est": self.gap_est,
            "M": self.m,
            "iterations": self.iterations,
        })
    }
}

fn decay_rate(increments: &[f64]) -> f64 {
    let tail: Vec<f64> = increments
        .windows(2)
        .rev()
        .take(10)
        .filter(|p| p[0] > 0.0 && p[1] > 0.0)
        .map(|p| (p[1] / p[0]).ln())
        .collect();
    if tail.is_empty() {
        0.0
    } else {
        (tail.iter().sum::<f64>() / tail.len() as f64).exp().min(1.0)
    }
}

/// Leading eigenvalue, eigenfunction and eigenmeasure by power iteration.
pub fn leading_eigen(s: &Subshift, c: &OneStepCocycle, g: &GFunction, t: f64, m: usize) -> Result<SpectralData> {
    let op = TransferOperator::new(s, c, g, t, m)?;
    leading_eigen_with(&op)
}

pub fn leading_eigen_with(op: &TransferOperator) -> Result<SpectralData> {
    let (q, m) = (op.q, op.m);
    let mut f = OperatorGrid::constant(q, m, 1.0);
    let mut rho = f64::NAN;
    let mut increments = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < EIGEN_MAX_ITER {
        iterations += 1;
        let y = op.apply(&f)?;
        let new_rho = y.sup_norm();
        if !(new_rho > 0.0) || !new_rho.is_finite() {
            return Err(Error::NoConvergence { iterations, last_increment: f64::NAN });
        }
        let next = y.scale(1.0 / new_rho);
        let inc = next.max_abs_diff(&f);
        increments.push(inc);
        let settled = (new_rho - rho).abs() < EIGEN_TOL * new_rho.max(1.0) && inc < EIGEN_TOL;
        f = next;
        rho = new_rho;
        if settled {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations, last_increment: *increments.last().unwrap_or(&f64::NAN) });
    }
    let gap_est = decay_rate(&increments);

    let mut nu = OperatorGrid::constant(q, m, 1.0 / (q * m) as f64);
    let mut adjoint_iterations = 0;
    loop {
        adjoint_iterations += 1;
        let y = op.apply_adjoint(&nu)?;
        let next = y.scale(1.0 / y.sum());
        let inc: f64 = next.values.iter().zip(&nu.values).map(|(a, b)| (a - b).abs()).sum();
        nu = next;
        if inc < EIGEN_TOL {
            break;
        }
        if adjoint_iterations >= EIGEN_MAX_ITER {
            return Err(Error::NoConvergence { iterations: adjoint_iterations, last_increment: inc });
        }
    }

    let pairing = nu.pair(&f);
    let h = f.scale(1.0 / pairing);
    let lh = op.apply(&h)?;
    let residual = lh.max_abs_diff(&h.scale(rho)) / (rho * h.sup_norm());
    let nl = op.apply_adjoint(&nu)?;
    let adjoint_residual = nl.values.iter().zip(&nu.values).map(|(a, b)| (a - rho * b).abs()).sum::<f64>() / rho;
    Ok(SpectralData {
        t: op.t,
        rho,
        h,
        nu_tilde: nu,
        gap_est,
        m,
        iterations,
        adjoint_iterations,
        residual,
        adjoint_residual,
    })
}

/// Visits every atom of the n-step expansion of the eigenmeasure of h * nu_tilde.
///
/// For a word I of length n and a node u_k, the visitor receives I, the adjoint product
/// A^[n](I), the image vector w = mantissa * u_k, log|A^[n](I) u_k|, and the weight
/// rho^{-n} G(I) c_{last}(k) |A^[n](I) u_k|^t h(i_0, w), where G is the product of the g-factors
/// internal to I and c_a(k) = sum_j g(a -> j) nu_tilde(j, k). Summing the weights over k gives
/// the mass of [I]; summing over all atoms gives 1 up to discretization error.
fn for_each_atom<F>(sd: &SpectralData, s: &Subshift, c: &OneStepCocycle, g: &GFunction, n: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&Word, &ScaledMatrix, [f64; 2], f64, f64),
{
    require_plane(c)?;
    c.check_alphabet(s)?;
    if n == 0 {
        return Err(Error::InvalidInput("depth must be at least 1".into()));
    }
    check_cap(s, n)?;
    let (q, m) = (s.q(), sd.m);
    let mut cvec = vec![vec![0.0; m]; q];
    for (a, ca) in cvec.iter_mut().enumerate() {
        for j in s.successors(a) {
            let w = g.g(a, j);
            for (k, x) in ca.iter_mut().enumerate() {
                *x += w * sd.nu_tilde.get(j, k);
            }
        }
    }
    let nodes: Vec<(f64, f64)> = (0..m).map(|k| node(k, m).sin_cos()).map(|(s, c)| (c, s)).collect();
    let log_rho_n = n as f64 * sd.rho.ln();
    let t = sd.t;
    c.for_each_word(s, n, |w, p| {
        let first = w.first().unwrap();
        let last = w.last().unwrap();
        let base = g.internal_product(w);
        let [a, b, cc, d] = p.mantissa().as2();
        let ls = p.log_scale();
        let h_row = sd.h.row(first);
        for (k, &(x, y)) in nodes.iter().enumerate() {
            let ck = cvec[last][k];
            if ck == 0.0 {
                continue;
            }
            let (u, v) = (a * x + b * y, cc * x + d * y);
            let log_norm = 0.5 * (u * u + v * v).ln() + ls;
            let (i0, i1, fr) = locate(angle_of(u, v), m);
            let hv = (1.0 - fr) * h_row[i0] + fr * h_row[i1];
            let weight = base * ck * hv * (t * log_norm - log_rho_n).exp();
            visit(w, p, [u, v], log_norm, weight);
        }
    });
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct MuT {
    pub measure: CylinderMeasure,
    /// |total mass before renormalization - 1|.
    pub defect: f64,
    pub warning: Option<String>,
}

/// Masses of the n-cylinders under the equilibrium candidate at the parameter of `sd`.
pub fn mu_t_cylinders(sd: &SpectralData, s: &Subshift, c: &OneStepCocycle, g: &GFunction, n: usize) -> Result<MuT> {
    let mut words: Vec<Word> = Vec::new();
    let mut masses: Vec<f64> = Vec::new();
    for_each_atom(sd, s, c, g, n, |w, _, _, _, weight| {
        if words.last() != Some(w) {
            words.push(w.clone());
            masses.push(0.0);
        }
        *masses.last_mut().unwrap() += weight;
    })?;
    let total: f64 = crate::potential::pairwise_sum(&masses);
    masses.iter_mut().for_each(|x| *x /= total);
    let defect = (total - 1.0).abs();
    let warning = (defect > DEFECT_WARN).then(|| {
        format!("renormalization defect {defect:.3e} exceeds {DEFECT_WARN:e}; consider a finer grid")
    });
    Ok(MuT { measure: CylinderMeasure::new(n, words, masses), defect, warning })
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsRow {
    pub n: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    /// max_ratio(n) / max_ratio(n - 1).
    pub growth_factor: Option<f64>,
    /// (max/min)(n) / (max/min)(n - 1).
    pub spread_growth: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GibbsRatioReport {
    pub t: f64,
    pub rows: Vec<GibbsRow>,
    pub max_defect: f64,
}

/// For each n, the range over points x of mu_t([x]_n) / (rho^{-n} g^(n)(x) |A^n(x)|^t).
///
/// On [I] the denominator depends on x only through the symbol following I, so the range is
/// taken over all words I of length n and all admissible successors of I.
pub fn gibbs_ratio_report(sd: &SpectralData, s: &Subshift, c: &OneStepCocycle, g: &GFunction, n_max: usize) -> Result<GibbsRatioReport> {
    let mut rows: Vec<GibbsRow> = Vec::new();
    let mut max_defect: f64 = 0.0;
    for n in 1..=n_max {
        let mu = mu_t_cylinders(sd, s, c, g, n)?;
        max_defect = max_defect.max(mu.defect);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        let mut idx = 0;
        c.for_each_word(s, n, |w, p| {
            let mass = mu.measure.masses[idx];
            idx += 1;
            let last = w.last().unwrap();
            let log_base = sd.t * p.log_norm() - n as f64 * sd.rho.ln() + g.internal_product(w).ln();
            for j in s.successors(last) {
                let r = mass / (log_base + g.g(last, j).ln()).exp();
                lo = lo.min(r);
                hi = hi.max(r);
            }
        });
        let (growth_factor, spread_growth) = match rows.last() {
            Some(prev) => (Some(hi / prev.max_ratio), Some((hi / lo) / (prev.max_ratio / prev.min_ratio))),
            None => (None, None),
        };
        rows.push(GibbsRow { n, min_ratio: lo, max_ratio: hi, growth_factor, spread_growth });
    }
    Ok(GibbsRatioReport { t: sd.t, rows, max_defect })
}

impl GibbsRatioReport {
    /// Rows n, min_ratio, max_ratio, growth_factor.
    pub fn to_table(&self) -> Table {
        let mut table = Table::new(&["n", "min_ratio", "max_ratio", "growth_factor"]);
        for r in &self.rows {
            table.push(vec![
                r.n.to_string(),
                fmt17(r.min_ratio),
                fmt17(r.max_ratio),
                r.growth_factor.map_or_else(|| "nan".into(), fmt17),
            ]);
        }
        table
    }
}

/// A probability measure on the angle grid.
#[derive(Clone, Debug, Serialize)]
pub struct EtaMeasure {
    pub weights: Vec<f64>,
}

impl EtaMeasure {
    pub fn new(mut weights: Vec<f64>) -> Self {
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|x| *x /= total);
        EtaMeasure { weights }
    }

    pub fn uniform(m: usize) -> Self {
        EtaMeasure::new(vec![1.0; m])
    }

    /// Unit mass at the node nearest to `theta`.
    pub fn point_mass(m: usize, theta: f64) -> Self {
        let (i0, i1, fr) = locate(theta.rem_euclid(PI), m);
        let mut w = vec![0.0; m];
        w[if fr < 0.5 { i0 } else { i1 }] = 1.0;
        EtaMeasure::new(w)
    }

    pub fn m(&self) -> usize {
        self.weights.len()
    }

    /// sum_k eta(k) max(|cos(theta_k - v)|, pi/M)^{-s}
    pub fn floored_moment(&self, s: f64, v: f64) -> f64 {
        let m = self.m();
        let floor = PI / m as f64;
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(k, w)| w * (node(k, m) - v).cos().abs().max(floor).powf(-s))
            .sum()
    }

    /// Angles of the `k` heaviest nodes.
    pub fn heaviest_nodes(&self, k: usize) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..self.m()).collect();
        idx.sort_by(|&a, &b| self.weights[b].total_cmp(&self.weights[a]).then(a.cmp(&b)));
        idx.into_iter().take(k).map(|i| node(i, self.m())).collect()
    }

    pub fn sup_moment(&self, s: f64, v_grid: &[f64]) -> f64 {
        v_grid.iter().map(|&v| self.floored_moment(s, v)).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DimensionReport {
    /// Always true: the estimate is a finite-resolution heuristic.
    pub heuristic: bool,
    pub estimate: f64,
    pub levels: Vec<usize>,
    pub s_grid: Vec<f64>,
    /// sup_moments[i][l]: sup over v of the floored moment at s_grid[i] and level l.
    pub sup_moments: Vec<Vec<f64>>,
    /// Largest growth factor between consecutive levels, per s.
    pub max_growth: Vec<f64>,
    pub thresholds: Vec<f64>,
}

/// Directions orthogonal to this many of the heaviest atoms of each level are added to `v_grid`.
pub const ORTHOGONAL_PROBES: usize = 16;

/// Largest s in the increasing `s_grid`, together with all smaller grid values, whose floored
/// sup-moment grows by less than 2^{s/2} each time the grid is refined. Zero if none qualifies.
///
/// A point mass gives growth exactly 2^s at every refinement; a measure with finite s-moments
/// gives growth near 1.
pub fn eta_dimension_estimate(levels: &[EtaMeasure], s_grid: &[f64], v_grid: &[f64]) -> Result<DimensionReport> {
    if levels.len() < 2 {
        return Err(Error::InvalidInput("at least two refinement levels are needed".into()));
    }
    if s_grid.windows(2).any(|p| !(p[1] > p[0])) || s_grid.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidInput("s grid must be positive and strictly increasing".into()));
    }
    let mut v_all = v_grid.to_vec();
    for eta in levels {
        v_all.extend(eta.heaviest_nodes(ORTHOGONAL_PROBES).into_iter().map(|th| th + PI / 2.0));
    }
    let sup_moments: Vec<Vec<f64>> = s_grid
        .par_iter()
        .map(|&s| levels.iter().map(|eta| eta.sup_moment(s, &v_all)).collect())
        .collect();
    let thresholds: Vec<f64> = s_grid.iter().map(|s| 2f64.powf(s / 2.0)).collect();
    let max_growth: Vec<f64> = sup_moments
        .iter()
        .map(|row| row.windows(2).map(|p| p[1] / p[0]).fold(0.0, f64::max))
        .collect();
    let mut estimate = 0.0;
    for (i, &s) in s_grid.iter().enumerate() {
        if max_growth[i] < thresholds[i] {
            estimate = s;
        } else {
            break;
        }
    }
    Ok(DimensionReport {
        heuristic: true,
        estimate,
        levels: levels.iter().map(EtaMeasure::m).collect(),
        s_grid: s_grid.to_vec(),
        sup_moments,
        max_growth,
        thresholds,
    })
}

// Exact n-fold expansion of the operator at (x0, u), with f read through interpolation.
// `factor` supplies an extra multiplicative term per preimage word.
fn expanded_apply<F>(s: &Subshift, c: &OneStepCocycle, g: &GFunction, t: f64, n: usize, f: &OperatorGrid, x0: usize, u: [f64; 2], factor: F) -> f64
where
    F: Fn(&Word, [f64; 2]) -> f64,
{
    let mut total = 0.0;
    c.for_each_word(s, n, |w, p| {
        let last = w.last().unwrap();
        if !s.allowed(last, x0) {
            return;
        }
        let m = p.to_matrix();
        let v = m.mul_vec(&u);
        let norm = v[0].hypot(v[1]);
        let gw = g.internal_product(w) * g.g(last, x0);
        let fv = f.interpolate(w.first().unwrap(), angle_of(v[0], v[1]));
        total += gw * norm.powf(t) * fv * factor(w, [v[0] / norm, v[1] / norm]);
    });
    total
}

#[derive(Clone, Debug, Serialize)]
pub struct ExchangeReport {
    pub max_error: f64,
    pub max_relative_error: f64,
    pub samples: usize,
}

/// Compares L_t^n(f |A_*^{-n}(x) u|^{-s}) with L_{t+s}^n f at random (x0, angle) points.
/// The inverse-adjoint factor is computed from the preimage word by its own chain of inverse
/// transposes, independently of the forward product.
pub fn exchange_identity_check(
    s: &Subshift,
    c: &OneStepCocycle,
    g: &GFunction,
    t: f64,
    s_shift: f64,
    n: usize,
    f: &OperatorGrid,
    samples: usize,
    seed: u64,
) -> Result<ExchangeReport> {
    require_plane(c)?;
    if n == 0 || n > 6 {
        return Err(Error::InvalidInput("exchange check supports 1 <= n <= 6".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_error: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for _ in 0..samples {
        let x0 = rng.gen_range(0..s.q());
        let (sn, cs) = rng.gen_range(0.0..PI).sin_cos();
        let u = [cs, sn];
        let lhs = expanded_apply(s, c, g, t, n, f, x0, u, |w, unit| {
            let inv = c.inv_adjoint_chain(w).to_matrix();
            let r = inv.mul_vec(&unit);
            r[0].hypot(r[1]).powf(-s_shift)
        });
        let rhs = expanded_apply(s, c, g, t + s_shift, n, f, x0, u, |_, _| 1.0);
        let err = (lhs - rhs).abs();
        max_error = max_error.max(err);
        max_rel = max_rel.max(err / rhs.abs().max(f64::MIN_POSITIVE));
    }
    Ok(ExchangeReport { max_error, max_relative_error: max_rel, samples })
}

#[derive(Clone, Debug, Serialize)]
pub struct DerivativeReport {
    pub t: f64,
    pub n: usize,
    /// Central difference of log rho over +-1e-4.
    pub lhs: f64,
    /// Atom sum of (1/n) log|A^[n](I) u| against the expanded eigenmeasure.
    pub rhs: f64,
    /// Same sum evaluated as -(1/n) log|A_*^{-n}(Ix) w| with the explicit inverse.
    pub rhs_inverse_form: f64,
    pub rel_gap: f64,
    /// Mean projective distance between expanded atoms and the top direction of A^[n](I).
    pub graph_distance: f64,
}

pub const DERIVATIVE_STEP: f64 = 1e-4;

/// Checks d/dt log rho_t against the integral of -(1/n) log|A_*^{-n}(x) u| under h * nu_tilde.
pub fn derivative_consistency(sd: &SpectralData, s: &Subshift, c: &OneStepCocycle, g: &GFunction, n: usize) -> Result<DerivativeReport> {
    let plus = leading_eigen(s, c, g, sd.t + DERIVATIVE_STEP, sd.m)?;
    let minus = leading_eigen(s, c, g, sd.t - DERIVATIVE_STEP, sd.m)?;
    let lhs = (plus.rho.ln() - minus.rho.ln()) / (2.0 * DERIVATIVE_STEP);
    let mut total = 0.0;
    let mut direct = 0.0;
    let mut inverse_form = 0.0;
    let mut graph = 0.0;
    let mut cache: Option<(Word, [f64; 4], ProjPoint, f64)> = None;
    for_each_atom(sd, s, c, g, n, |w, p, v, log_norm, weight| {
        if cache.as_ref().map_or(true, |(cw, ..)| cw != w) {
            let inv = c.inv_adjoint_chain(w);
            let top = top_direction_scaled(p).unwrap_or_else(|_| ProjPoint::from_angle(0.0));
            cache = Some((w.clone(), inv.mantissa().as2(), top, inv.log_scale()));
        }
        let (_, im, top, ils) = cache.as_ref().unwrap();
        total += weight;
        direct += weight * log_norm / n as f64;
        let nv = v[0].hypot(v[1]);
        let (a, b) = (v[0] / nv, v[1] / nv);
        let r = [im[0] * a + im[1] * b, im[2] * a + im[3] * b];
        inverse_form += weight * -(r[0].hypot(r[1]).ln() + ils) / n as f64;
        if let Ok(pp) = ProjPoint::new(&[a, b]) {
            graph += weight * dist(&pp, top);
        }
    })?;
    let rhs = direct / total;
    Ok(DerivativeReport {
        t: sd.t,
        n,
        lhs,
        rhs,
        rhs_inverse_form: inverse_form / total,
        rel_gap: (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE),
        graph_distance: graph / total,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RowSumReport {
    pub samples: usize,
    pub window: usize,
    pub max_deviation: f64,
    pub sums: Vec<f64>,
    /// Largest singular-gap bound among the direction estimates used.
    pub worst_err_bound: f64,
}

/// Sums over preimages y = a x of g(y) e^{t phi(y)} h_t(y, xi(y)) / (rho h_t(x, xi(x))), where
/// phi(y) = -log|A_a^{-T} xi(y)| and xi is the window estimate of the slowest direction.
/// The sample points are drawn from the Markov chain of `g`.
pub fn g_t_rowsum_check(
    sd: &SpectralData,
    s: &Subshift,
    c: &OneStepCocycle,
    g: &GFunction,
    window: usize,
    samples: usize,
    seed: u64,
) -> Result<RowSumReport> {
    require_plane(c)?;
    let chain = g.forward_transitions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = Vec::with_capacity(samples);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = sample_path(&mut rng, &g.stationary, &chain, window);
        let xi_x = estimate_xi_star(c, &x, window)?;
        worst = worst.max(xi_x.err_bound);
        let x0 = x.first().unwrap();
        let denom = sd.rho * sd.h.interpolate(x0, xi_x.dir.angle());
        let mut total = 0.0;
        for a in s.predecessors(x0) {
            let y = Word::new(vec![a as u8]).concat(&x.prefix(window - 1));
            let xi_y = estimate_xi_star(c, &y, window)?;
            worst = worst.max(xi_y.err_bound);
            let r = c.generator_inv_transpose(a).mul_vec(xi_y.dir.rep());
            let phi = -r[0].hypot(r[1]).ln();
            total += g.g(a, x0) * (sd.t * phi).exp() * sd.h.interpolate(a, xi_y.dir.angle()) / denom;
        }
        sums.push(total);
    }
    let max_deviation = sums.iter().fold(0.0, |m: f64, v| m.max((v - 1.0).abs()));
    Ok(RowSumReport { samples, window, max_deviation, sums, worst_err_bound: worst })
}

/// A path of the stationary Markov chain with the given transitions.
pub fn sample_path(rng: &mut ChaCha8Rng, initial: &[f64], transitions: &[Vec<f64>], len: usize) -> Word {
    let mut w = Word::empty();
    let mut state = sample_index(rng, initial);
    w.push(state);
    for _ in 1..len {
        state = sample_index(rng, &transitions[state]);
        w.push(state);
    }
    w
}

pub fn sample_index(rng: &mut ChaCha8Rng, p: &[f64]) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if r < acc {
            return i;
        }
    }
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}
