//! Locally constant potentials, Perron eigendata, g-functions and cylinder measures.

use std::collections::HashMap;

use serde::Serialize;

use crate::cocycle::{Matrix, OneStepCocycle};
use crate::error::{Error, Result};
use crate::sft::{Subshift, Word};

pub const PERRON_TOL: f64 = 1e-14;
pub const PERRON_MAX_ITER: usize = 1_000_000;

/// A potential depending on the first `depth` symbols.
#[derive(Clone, Debug, PartialEq)]
pub struct Potential {
    depth: usize,
    words: Vec<Word>,
    values: Vec<f64>,
}

impl Potential {
    pub fn per_symbol(values: Vec<f64>) -> Self {
        let words = (0..values.len()).map(|a| Word::new(vec![a as u8])).collect();
        Potential { depth: 1, words, values }
    }

    pub fn zero(q: usize) -> Self {
        Potential::per_symbol(vec![0.0; q])
    }

    /// A depth-k table; it must cover exactly the admissible k-words of `s`.
    pub fn block(s: &Subshift, depth: usize, table: &HashMap<Word, f64>) -> Result<Self> {
        let words: Vec<Word> = s.enumerate_words(depth).collect();
        if table.len() != words.len() {
            return Err(Error::InvalidInput(format!(
                "potential table has {} entries, expected {}",
                table.len(),
                words.len()
            )));
        }
        let values = words
            .iter()
            .map(|w| {
                table
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::InvalidInput(format!("no potential value for word {w}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Potential { depth, words, values })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value on the symbol `a` of a depth-1 potential.
    pub fn at(&self, a: usize) -> f64 {
        debug_assert_eq!(self.depth, 1);
        self.values[a]
    }

    pub fn check_depth_one(&self, s: &Subshift) -> Result<()> {
        if self.depth != 1 {
            return Err(Error::InvalidInput(format!(
                "expected a depth-1 potential, got depth {}; recode with `reduce_to_depth_one`",
                self.depth
            )));
        }
        if self.values.len() != s.q() {
            return Err(Error::InvalidInput(format!(
                "potential has {} values but the alphabet has {} symbols",
                self.values.len(),
                s.q()
            )));
        }
        Ok(())
    }

    pub fn birkhoff(&self, w: &Word) -> f64 {
        debug_assert_eq!(self.depth, 1);
        w.symbols().iter().map(|&a| self.values[a as usize]).sum()
    }
}

/// Depth-1 form of a depth-k potential on the k-block presentation.
/// The block symbol u stands for the k-word `blocks[u]`.
pub fn reduce_to_depth_one(s: &Subshift, psi: &Potential) -> Result<(Subshift, Potential, Vec<Word>)> {
    if psi.depth == 1 {
        return Ok((s.clone(), psi.clone(), psi.words.clone()));
    }
    let (b, blocks) = s.higher_block(psi.depth)?;
    Ok((b, Potential::per_symbol(psi.values.clone()), blocks))
}

/// Cocycle on the block presentation: each block acts by the generator of its first symbol.
pub fn recode_cocycle(c: &OneStepCocycle, blocks: &[Word]) -> Result<OneStepCocycle> {
    OneStepCocycle::new(
        blocks
            .iter()
            .map(|w| c.generator(w.first().expect("blocks are nonempty")).clone())
            .collect::<Vec<Matrix>>(),
    )
}

/// Normalized transition weights g(a -> j) with the Perron data they come from.
#[derive(Clone, Debug, Serialize)]
pub struct GFunction {
    q: usize,
    /// weights[a][j] = g(a -> j), zero where the transition is forbidden.
    pub weights: Vec<Vec<f64>>,
    /// Pressure of the potential (log of the Perron value).
    pub log_lambda: f64,
    /// Left Perron vector h, summing to 1.
    pub h_table: Vec<f64>,
    /// Right Perron vector r, summing to 1.
    pub right: Vec<f64>,
    /// Symbol marginal of the Gibbs measure, proportional to h * r.
    pub stationary: Vec<f64>,
}

fn normalize_sum(v: &mut [f64]) -> f64 {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    s
}

// Perron value and vector of x <- x B (left = true) or x <- B x.
fn perron(b: &[Vec<f64>], left: bool) -> Result<(f64, Vec<f64>)> {
    let q = b.len();
    let mut x = vec![1.0 / q as f64; q];
    let mut lambda = 0.0;
    let mut last = f64::INFINITY;
    for it in 0..PERRON_MAX_ITER {
        let mut y = vec![0.0; q];
        for a in 0..q {
            for j in 0..q {
                if left {
                    y[j] += x[a] * b[a][j];
                } else {
                    y[a] += b[a][j] * x[j];
                }
            }
        }
        let new_lambda = normalize_sum(&mut y);
        let change = x
            .iter()
            .zip(&y)
            .map(|(p, n)| ((p - n) / n).abs())
            .fold(0.0, f64::max);
        let settled = change < PERRON_TOL && (new_lambda - lambda).abs() <= PERRON_TOL * new_lambda;
        x = y;
        lambda = new_lambda;
        last = change;
        if settled && it > 0 {
            return Ok((lambda, x));
        }
    }
    Err(Error::NoConvergence { iterations: PERRON_MAX_ITER, last_increment: last })
}

/// Perron eigendata of B[a][j] = T[a][j] e^{psi(a)} and the g-function it defines.
pub fn rpf_solve(s: &Subshift, psi: &Potential) -> Result<GFunction> {
    psi.check_depth_one(s)?;
    let q = s.q();
    // Shift psi so the largest weight is 1; this changes only log_lambda.
    let shift = psi.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let b: Vec<Vec<f64>> = (0..q)
        .map(|a| {
            let w = (psi.values[a] - shift).exp();
            (0..q).map(|j| if s.allowed(a, j) { w } else { 0.0 }).collect()
        })
        .collect();
    let (lambda, h) = perron(&b, true)?;
    let (_, r) = perron(&b, false)?;
    let mut weights = vec![vec![0.0; q]; q];
    for a in 0..q {
        for j in 0..q {
            if s.allowed(a, j) {
                weights[a][j] = b[a][j] * h[a] / (lambda * h[j]);
            }
        }
    }
    let mut stationary: Vec<f64> = h.iter().zip(&r).map(|(x, y)| x * y).collect();
    normalize_sum(&mut stationary);
    let g = GFunction {
        q,
        weights,
        log_lambda: lambda.ln() + shift,
        h_table: h,
        right: r,
        stationary,
    };
    let worst = g.max_column_defect();
    if worst > 1e-12 {
        return Err(Error::NoConvergence { iterations: PERRON_MAX_ITER, last_increment: worst });
    }
    Ok(g)
}

/// Pressure of a depth-1 potential given as per-symbol values.
pub fn additive_pressure(s: &Subshift, values: &[f64]) -> Result<f64> {
    Ok(rpf_solve(s, &Potential::per_symbol(values.to_vec()))?.log_lambda)
}

impl GFunction {
    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    pub fn g(&self, a: usize, j: usize) -> f64 {
        self.weights[a][j]
    }

    /// max_j |sum_a g(a -> j) - 1|.
    pub fn max_column_defect(&self) -> f64 {
        (0..self.q)
            .map(|j| ((0..self.q).map(|a| self.weights[a][j]).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Product of the n factors g(i_k -> i_{k+1}) over a word of length n+1.
    pub fn g_product(&self, w: &Word) -> f64 {
        w.symbols()
            .windows(2)
            .map(|p| self.weights[p[0] as usize][p[1] as usize])
            .product()
    }

    /// Product of the factors internal to a word: g(i_0 -> i_1) ... g(i_{n-2} -> i_{n-1}).
    pub fn internal_product(&self, w: &Word) -> f64 {
        self.g_product(w)
    }

    /// Forward transition matrix P[a][b] = stationary(b) g(a -> b) / stationary(a).
    pub fn forward_transitions(&self) -> Vec<Vec<f64>> {
        (0..self.q)
            .map(|a| {
                (0..self.q)
                    .map(|b| self.stationary[b] * self.weights[a][b] / self.stationary[a])
                    .collect()
            })
            .collect()
    }

    /// Gibbs measure of the cylinder [w].
    pub fn cylinder_mass(&self, w: &Word) -> f64 {
        match w.last() {
            Some(l) => self.stationary[l] * self.g_product(w),
            None => 1.0,
        }
    }
}

/// Masses of all admissible n-cylinders, stored in lexicographic word order.
#[derive(Clone, Debug, Serialize)]
pub struct CylinderMeasure {
    pub n: usize,
    pub words: Vec<Word>,
    pub masses: Vec<f64>,
}

impl CylinderMeasure {
    pub fn new(n: usize, words: Vec<Word>, masses: Vec<f64>) -> Self {
        debug_assert!(words.windows(2).all(|p| p[0] < p[1]));
        CylinderMeasure { n, words, masses }
    }

    pub fn mass(&self, w: &Word) -> f64 {
        self.words.binary_search(w).map_or(0.0, |i| self.masses[i])
    }

    pub fn total(&self) -> f64 {
        pairwise_sum(&self.masses)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.words.iter().zip(self.masses.iter().copied())
    }

    /// Push-forward to cylinders of length k < n taken from the front.
    pub fn marginal_prefix(&self, k: usize) -> CylinderMeasure {
        self.marginal(k, |w| w.prefix(k))
    }

    /// Push-forward under the shift to cylinders of length n - 1.
    pub fn marginal_shifted(&self) -> CylinderMeasure {
        self.marginal(self.n - 1, |w| w.suffix_from(1))
    }

    fn marginal<F: Fn(&Word) -> Word>(&self, k: usize, f: F) -> CylinderMeasure {
        let mut acc: std::collections::BTreeMap<Word, Vec<f64>> = std::collections::BTreeMap::new();
        for (w, m) in self.iter() {
            acc.entry(f(w)).or_default().push(m);
        }
        let (words, masses) = acc.into_iter().map(|(w, v)| (w, pairwise_sum(&v))).unzip();
        CylinderMeasure::new(k, words, masses)
    }
}

/// Pairwise summation in a fixed order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

/// The Gibbs-Markov measure of `g` on n-cylinders.
pub fn gibbs_markov_measure(s: &Subshift, g: &GFunction, n: usize) -> CylinderMeasure {
    let words: Vec<Word> = s.enumerate_words(n).collect();
    let masses = words.iter().map(|w| g.cylinder_mass(w)).collect();
    CylinderMeasure::new(n, words, masses)
}

/// S_n psi(I) + t log ||A^n(I)|| on the cylinder [I].
pub fn phi_t(s: &Subshift, c: &OneStepCocycle, psi: &Potential, w: &Word, t: f64) -> Result<f64> {
    psi.check_depth_one(s)?;
    if w.is_empty() {
        return Err(Error::InvalidInput("phi_t needs a nonempty word".into()));
    }
    let birkhoff = psi.birkhoff(w);
    if t == 0.0 {
        return Ok(birkhoff);
    }
    Ok(birkhoff + t * c.product(w).log_norm())
}
