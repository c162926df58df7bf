//! Finite search for a pinching periodic word and a twisting connection.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::cocycle::{Matrix, OneStepCocycle};
use crate::error::{Error, Result};
use crate::sft::{Subshift, Word};

pub const TOL_EIG: f64 = 1e-8;
pub const TOL_RANK: f64 = 1e-8;
pub const DEFAULT_MAX_PERIOD: usize = 8;
pub const DEFAULT_MAX_CONNECT: usize = 8;

#[derive(Clone, Debug, Serialize)]
pub struct EigenData {
    /// Eigenvalue moduli of the period product, in decreasing order.
    pub moduli: Vec<f64>,
    /// Smallest relative gap (m_i - m_{i+1}) / m_i between consecutive moduli.
    pub min_relative_gap: f64,
    /// Unit eigenvectors matching `moduli`, present only when the moduli are distinct.
    pub eigenvectors: Option<Vec<Vec<f64>>>,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.dim(), m.dim(), m.data())
}

/// Smallest singular value of the matrix with the given columns, divided by the geometric
/// mean of the column norms.
pub fn relative_min_sv(columns: &[Vec<f64>]) -> f64 {
    let d = columns[0].len();
    let k = columns.len();
    let m = DMatrix::from_fn(d, k, |i, j| columns[j][i]);
    let sv = m.clone().svd(false, false).singular_values;
    let smallest = if k > d { 0.0 } else { sv.iter().cloned().fold(f64::INFINITY, f64::min) };
    let log_mean = columns.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt().ln()).sum::<f64>() / k as f64;
    smallest / log_mean.exp()
}

/// Eigenvalues of A^n(p) and, if their moduli are pairwise distinct, a real eigenbasis.
pub fn check_condition1(s: &Subshift, c: &OneStepCocycle, p: &Word) -> Result<(bool, EigenData)> {
    c.check_alphabet(s)?;
    if p.is_empty() || !s.is_admissible(p) || !s.is_cyclically_admissible(p) {
        return Err(Error::InvalidInput(format!("{p} is not a cyclically admissible word")));
    }
    let prod = c.product(p);
    let mantissa = to_dmatrix(prod.mantissa());
    let scale = prod.log_scale().exp();
    let mut eig: Vec<(f64, nalgebra::Complex<f64>)> =
        mantissa.complex_eigenvalues().iter().map(|z| (z.norm(), *z)).collect();
    eig.sort_by(|a, b| b.0.total_cmp(&a.0));
    let moduli: Vec<f64> = eig.iter().map(|e| e.0 * scale).collect();
    let min_relative_gap = eig
        .windows(2)
        .map(|w| (w[0].0 - w[1].0) / w[0].0)
        .fold(f64::INFINITY, f64::min);
    let min_relative_gap = if eig.len() < 2 { f64::INFINITY } else { min_relative_gap };
    let ok = min_relative_gap > TOL_EIG;
    let eigenvectors = ok.then(|| {
        let d = c.dim();
        eig.iter()
            .map(|(_, z)| {
                let shifted = &mantissa - DMatrix::<f64>::identity(d, d) * z.re;
                let svd = shifted.svd(false, true);
                let v_t = svd.v_t.expect("requested");
                let (imin, _) = svd
                    .singular_values
                    .iter()
                    .enumerate()
                    .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
                let v: Vec<f64> = v_t.row(imin).iter().cloned().collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect()
    });
    Ok((ok, EigenData { moduli, min_relative_gap, eigenvectors }))
}

/// All nonempty families (I, J) of index subsets with |I| + |J| <= d.
fn families(d: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let subsets: Vec<Vec<usize>> = (0u32..1 << d)
        .map(|mask| (0..d).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    let mut out = Vec::new();
    for i in &subsets {
        for j in &subsets {
            if !i.is_empty() || !j.is_empty() {
                if i.len() + j.len() <= d {
                    out.push((i.clone(), j.clone()));
                }
            }
        }
    }
    out
}

/// Linear independence of {A^l(p)^{-1} A^l(z) v_i : i in I} together with {v_j : j in J}
/// for every family; returns the smallest relative singular value over all families.
pub fn check_twisting(s: &Subshift, c: &OneStepCocycle, p: &Word, z: &Word, eigvecs: &[Vec<f64>]) -> Result<(bool, f64)> {
    if z.is_empty() || !s.is_admissible(z) {
        return Err(Error::InvalidInput(format!("{z} is not an admissible word")));
    }
    if !s.allowed(p.last().unwrap(), z.first().unwrap()) || !s.allowed(z.last().unwrap(), p.first().unwrap()) {
        return Err(Error::InvalidInput(format!("{p} and {z} do not connect")));
    }
    let l = z.len();
    let periodic = p.repeat(l.div_ceil(p.len())).prefix(l);
    let ap = c.product(&periodic);
    let az = c.product(z);
    // Powers of two cancel between the two products up to the difference of their exponents.
    let q = &ap.mantissa().inverse()? * az.mantissa();
    let q = q.scale((az.log_scale() - ap.log_scale()).exp());
    let moved: Vec<Vec<f64>> = eigvecs.iter().map(|v| q.mul_vec(v)).collect();
    let mut min_sv = f64::INFINITY;
    for (i, j) in families(c.dim()) {
        let cols: Vec<Vec<f64>> = i.iter().map(|&k| moved[k].clone()).chain(j.iter().map(|&k| eigvecs[k].clone())).collect();
        min_sv = min_sv.min(relative_min_sv(&cols));
    }
    Ok((min_sv > TOL_RANK, min_sv))
}

#[derive(Clone, Debug, Serialize)]
pub struct TypicalityCertificate {
    pub p: String,
    pub period: usize,
    pub z: String,
    pub l: usize,
    pub eigen_moduli: Vec<f64>,
    pub modulus_margin: f64,
    pub min_independence_sv: f64,
    pub tol_eig: f64,
    pub tol_rank: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SearchBounds {
    pub max_period: usize,
    pub max_connect: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct InconclusiveReport {
    pub reason: String,
    /// True when no periodic word passed condition 1, i.e. the failure has a structural cause.
    pub structural: bool,
    /// Largest min_relative_gap seen over periodic words.
    pub max_modulus_gap: f64,
    pub best_periodic: Option<String>,
    /// Best (p, z, min_sv) among pinching words, if any passed condition 1.
    pub best_twisting: Option<(String, String, f64)>,
    pub periodic_words_tested: usize,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TypicalityOutcome {
    Certified(TypicalityCertificate),
    Inconclusive(InconclusiveReport),
}

/// Cyclically admissible words of period 1..=max_period, one per rotation class, with the
/// class represented by its lexicographically least rotation; ordered by period, then word.
pub fn periodic_candidates(s: &Subshift, max_period: usize) -> Vec<Word> {
    let mut out = Vec::new();
    for n in 1..=max_period {
        for w in s.enumerate_words(n) {
            if s.is_cyclically_admissible(&w) && (1..n).all(|k| w <= w.rotate(k)) {
                out.push(w);
            }
        }
    }
    out
}

/// Searches periodic words p and connecting words z in order and returns the first pair
/// satisfying both conditions. A failed search is inconclusive, never a refutation.
pub fn certify(s: &Subshift, c: &OneStepCocycle, max_period: usize, max_connect: usize) -> Result<(TypicalityOutcome, SearchBounds)> {
    if max_period == 0 || max_connect == 0 {
        return Err(Error::InvalidInput("search bounds must be at least 1".into()));
    }
    c.check_alphabet(s)?;
    let bounds = SearchBounds { max_period, max_connect };
    let candidates = periodic_candidates(s, max_period);
    let checked: Vec<(Word, EigenData)> = candidates
        .par_iter()
        .map(|p| check_condition1(s, c, p).map(|(_, e)| (p.clone(), e)))
        .collect::<Result<_>>()?;
    let connectors: Vec<Word> = (1..=max_connect).flat_map(|l| s.enumerate_words(l)).collect();

    let mut max_gap: f64 = 0.0;
    let mut best_periodic = None;
    let mut best_twisting: Option<(String, String, f64)> = None;
    for (p, eig) in &checked {
        if eig.min_relative_gap > max_gap || best_periodic.is_none() {
            max_gap = max_gap.max(eig.min_relative_gap);
            best_periodic = Some(p.to_string());
        }
        let Some(vecs) = &eig.eigenvectors else { continue };
        for z in &connectors {
            if !s.allowed(p.last().unwrap(), z.first().unwrap()) || !s.allowed(z.last().unwrap(), p.first().unwrap()) {
                continue;
            }
            let (ok, min_sv) = check_twisting(s, c, p, z, vecs)?;
            if ok {
                let cert = TypicalityCertificate {
                    p: p.to_string(),
                    period: p.len(),
                    z: z.to_string(),
                    l: z.len(),
                    eigen_moduli: eig.moduli.clone(),
                    modulus_margin: eig.min_relative_gap,
                    min_independence_sv: min_sv,
                    tol_eig: TOL_EIG,
                    tol_rank: TOL_RANK,
                };
                return Ok((TypicalityOutcome::Certified(cert), bounds));
            }
            if best_twisting.as_ref().map_or(true, |b| min_sv > b.2) {
                best_twisting = Some((p.to_string(), z.to_string(), min_sv));
            }
        }
    }
    let structural = checked.iter().all(|(_, e)| e.eigenvectors.is_none());
    let reason = if structural {
        format!(
            "every periodic word up to period {max_period} has eigenvalues of equal modulus (largest relative gap {max_gap:.3e}); \
             no pinching word exists within the bounds"
        )
    } else {
        format!("pinching words exist but no connecting word up to length {max_connect} twists their eigenbasis")
    };
    Ok((
        TypicalityOutcome::Inconclusive(InconclusiveReport {
            reason,
            structural,
            max_modulus_gap: max_gap,
            best_periodic,
            best_twisting,
            periodic_words_tested: checked.len(),
        }),
        bounds,
    ))
}

/// typicality.json: status, p, z, l, eigen_moduli, min_independence_sv, search_bounds.
pub fn outcome_json(outcome: &TypicalityOutcome, bounds: &SearchBounds) -> serde_json::Value {
    let mut v = match outcome {
        TypicalityOutcome::Certified(c) => serde_json::json!({
            "status": "certified",
            "p": c.p,
            "z": c.z,
            "l": c.l,
            "eigen_moduli": c.eigen_moduli,
            "min_independence_sv": c.min_independence_sv,
            "modulus_margin": c.modulus_margin,
            "tol_eig": c.tol_eig,
            "tol_rank": c.tol_rank,
        }),
        TypicalityOutcome::Inconclusive(r) => serde_json::json!({
            "status": "inconclusive",
            "p": serde_json::Value::Null,
            "z": serde_json::Value::Null,
            "l": serde_json::Value::Null,
            "eigen_moduli": serde_json::Value::Null,
            "min_independence_sv": serde_json::Value::Null,
            "reason": r.reason,
            "structural": r.structural,
            "max_modulus_gap": r.max_modulus_gap,
            "best_periodic": r.best_periodic,
            "best_twisting": r.best_twisting,
            "periodic_words_tested": r.periodic_words_tested,
        }),
    };
    v["search_bounds"] = serde_json::to_value(bounds).expect("plain struct");
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn prop91() -> (Subshift, OneStepCocycle) {
        let c = OneStepCocycle::new(vec![Matrix::diag(&[2.0, 0.5]), Matrix::rotation(2.0 * PI / 2f64.sqrt())]).unwrap();
        (Subshift::full_shift(2), c)
    }

    #[test]
    fn condition1_examples() {
        let (s, c) = prop91();
        let (ok, e) = check_condition1(&s, &c, &Word::parse("1").unwrap()).unwrap();
        assert!(ok);
        assert!((e.moduli[0] - 2.0).abs() < 1e-14 && (e.moduli[1] - 0.5).abs() < 1e-14);
        let (ok, _) = check_condition1(&s, &c, &Word::parse("2").unwrap()).unwrap();
        assert!(!ok);
        let id = OneStepCocycle::new(vec![Matrix::identity(2), Matrix::rotation(1.0)]).unwrap();
        assert!(!check_condition1(&s, &id, &Word::parse("1").unwrap()).unwrap().0);
    }

    #[test]
    fn twisting_by_rotation() {
        let (s, c) = prop91();
        let p = Word::parse("1").unwrap();
        let (_, e) = check_condition1(&s, &c, &p).unwrap();
        let vecs = e.eigenvectors.unwrap();
        let (ok, sv) = check_twisting(&s, &c, &p, &Word::parse("2").unwrap(), &vecs).unwrap();
        assert!(ok);
        // Closed form over the 2x2 families with Q = A_1^{-1} R_phi and eigenvectors e_1, e_2.
        let phi = 2.0 * PI / 2f64.sqrt();
        let qe = [[0.5 * phi.cos(), 2.0 * phi.sin()], [-0.5 * phi.sin(), 2.0 * phi.cos()]];
        let e = [[1.0, 0.0], [0.0, 1.0]];
        let pair = |a: [f64; 2], b: [f64; 2]| {
            let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
            let det = (a[0] * b[1] - a[1] * b[0]).abs();
            let sum = na * na + nb * nb;
            ((sum - (sum * sum - 4.0 * det * det).sqrt()) / 2.0).sqrt() / (na * nb).sqrt()
        };
        let oracle = [pair(qe[0], e[1]), pair(qe[1], e[0]), pair(qe[0], e[0]), pair(qe[1], e[1]), pair(qe[0], qe[1])]
            .into_iter()
            .fold(1.0, f64::min);
        assert!((sv - oracle).abs() < 1e-12, "{sv} {oracle}");
        assert!(sv > 1e-3);
        // A diagonal connection maps eigenvectors to eigenvectors.
        let diag = OneStepCocycle::new(vec![Matrix::diag(&[2.0, 0.5]), Matrix::diag(&[3.0, 1.0])]).unwrap();
        let (ok, _) = check_twisting(&s, &diag, &p, &Word::parse("2").unwrap(), &vecs).unwrap();
        assert!(!ok);
    }

    #[test]
    fn rotation_classes_are_deduplicated() {
        let s = Subshift::full_shift(2);
        let words: Vec<String> = periodic_candidates(&s, 3).iter().map(|w| w.to_string()).collect();
        assert_eq!(words, ["1", "2", "11", "12", "22", "111", "112", "122", "222"]);
    }

    #[test]
    fn rotations_are_inconclusive() {
        let s = Subshift::full_shift(2);
        let c = OneStepCocycle::new(vec![Matrix::rotation(0.5), Matrix::rotation(1.3)]).unwrap();
        let (out, _) = certify(&s, &c, 4, 2).unwrap();
        match out {
            TypicalityOutcome::Inconclusive(r) => assert!(r.structural),
            _ => panic!("rotations cannot pinch"),
        }
    }
}
