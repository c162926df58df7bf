//! Dense small matrices, singular value decompositions and one-step cocycle products.

use std::f64::consts::LN_2;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sft::{Subshift, Word};

/// Products are rescaled by a power of two every this many factors.
pub const RENORM_EVERY: usize = 64;
/// Largest condition number accepted before an explicit inversion.
pub const COND_LIMIT: f64 = 1e14;
/// Generators must satisfy sigma_min > INVERTIBLE_TOL * sigma_max.
pub const INVERTIBLE_TOL: f64 = 1e-12;
const JACOBI_TOL: f64 = 1e-15;
const JACOBI_SWEEPS: usize = 60;

/// Square real matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    d: usize,
    a: Vec<f64>,
}

impl Matrix {
    pub fn new(d: usize, data: Vec<f64>) -> Result<Self> {
        if d == 0 || data.len() != d * d {
            return Err(Error::InvalidInput(format!(
                "expected {} entries for a {d}x{d} matrix, got {}",
                d * d,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("matrix entries must be finite".into()));
        }
        Ok(Matrix { d, a: data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidInput("matrix rows must form a square".into()));
        }
        Matrix::new(d, rows.concat())
    }

    pub fn identity(d: usize) -> Self {
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            a[i * d + i] = 1.0;
        }
        Matrix { d, a }
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Matrix::identity(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.a[i * m.d + i] = v;
        }
        m
    }

    /// Counterclockwise rotation of the plane by `phi` radians.
    pub fn rotation(phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        Matrix { d: 2, a: vec![c, -s, s, c] }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn data(&self) -> &[f64] {
        &self.a
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.d + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.d + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.a.chunks(self.d).map(|r| r.to_vec()).collect()
    }

    /// Entries of a 2x2 matrix as [a, b, c, d].
    pub fn as2(&self) -> [f64; 4] {
        debug_assert_eq!(self.d, 2);
        [self.a[0], self.a[1], self.a[2], self.a[3]]
    }

    pub fn transpose(&self) -> Matrix {
        let d = self.d;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[j * d + i] = self.a[i * d + j];
            }
        }
        Matrix { d, a }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let d = self.d;
        (0..d)
            .map(|i| (0..d).map(|j| self.a[i * d + j] * v[j]).sum())
            .collect()
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { d: self.d, a: self.a.iter().map(|v| v * c).collect() }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        Matrix {
            d: self.d,
            a: self.a.iter().zip(&other.a).map(|(x, y)| x - y).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.a.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn frobenius(&self) -> f64 {
        self.a.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Spectral norm.
    pub fn norm(&self) -> f64 {
        singular(self).values[0]
    }

    pub fn det(&self) -> f64 {
        match self.d {
            1 => self.a[0],
            2 => self.a[0] * self.a[3] - self.a[1] * self.a[2],
            _ => {
                let (lu, sign) = match self.lu() {
                    Some(x) => x,
                    None => return 0.0,
                };
                (0..self.d).fold(sign, |p, i| p * lu.a[i * self.d + i])
            }
        }
    }

    // Partial-pivot LU packed in one matrix, with the permutation sign.
    fn lu(&self) -> Option<(Matrix, f64)> {
        let d = self.d;
        let mut m = self.clone();
        let mut sign = 1.0;
        for k in 0..d {
            let p = (k..d).max_by(|&x, &y| m.a[x * d + k].abs().total_cmp(&m.a[y * d + k].abs()))?;
            if m.a[p * d + k] == 0.0 {
                return None;
            }
            if p != k {
                for j in 0..d {
                    m.a.swap(p * d + j, k * d + j);
                }
                sign = -sign;
            }
            for i in k + 1..d {
                let f = m.a[i * d + k] / m.a[k * d + k];
                m.a[i * d + k] = f;
                for j in k + 1..d {
                    m.a[i * d + j] -= f * m.a[k * d + j];
                }
            }
        }
        Some((m, sign))
    }

    /// Gauss-Jordan inverse with partial pivoting.
    pub fn inverse(&self) -> Result<Matrix> {
        let d = self.d;
        if d == 2 {
            let det = self.det();
            if det == 0.0 || !det.is_finite() {
                return Err(Error::NotInvertible { index: 0, ratio: 0.0 });
            }
            let [a, b, c, e] = self.as2();
            return Ok(Matrix { d, a: vec![e / det, -b / det, -c / det, a / det] });
        }
        let mut m = self.clone();
        let mut inv = Matrix::identity(d);
        for k in 0..d {
            let p = (k..d)
                .max_by(|&x, &y| m.a[x * d + k].abs().total_cmp(&m.a[y * d + k].abs()))
                .unwrap();
            let piv = m.a[p * d + k];
            if piv == 0.0 {
                return Err(Error::NotInvertible { index: 0, ratio: 0.0 });
            }
            for j in 0..d {
                m.a.swap(p * d + j, k * d + j);
                inv.a.swap(p * d + j, k * d + j);
            }
            for j in 0..d {
                m.a[k * d + j] /= piv;
                inv.a[k * d + j] /= piv;
            }
            for i in 0..d {
                if i != k {
                    let f = m.a[i * d + k];
                    if f != 0.0 {
                        for j in 0..d {
                            m.a[i * d + j] -= f * m.a[k * d + j];
                            inv.a[i * d + j] -= f * inv.a[k * d + j];
                        }
                    }
                }
            }
        }
        Ok(inv)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.d, rhs.d, "dimension mismatch");
        let d = self.d;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let x = self.a[i * d + k];
                if x != 0.0 {
                    for j in 0..d {
                        a[i * d + j] += x * rhs.a[k * d + j];
                    }
                }
            }
        }
        Matrix { d, a }
    }
}

/// Singular values in descending order with left and right singular vectors.
///
/// `left[i]` and `right[i]` are unit vectors with `A right[i] = values[i] left[i]`.
#[derive(Clone, Debug)]
pub struct SingularData {
    pub values: Vec<f64>,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
}

impl SingularData {
    /// sigma_2 / sigma_1, or 1 in dimension one.
    pub fn gap(&self) -> f64 {
        if self.values.len() < 2 || self.values[0] == 0.0 {
            1.0
        } else {
            self.values[1] / self.values[0]
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// One-sided Jacobi SVD.
pub fn singular(m: &Matrix) -> SingularData {
    let d = m.d;
    // Columns of A are rotated until mutually orthogonal: A V = W.
    let mut w: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|i| m.get(i, j)).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..d {
            for q in p + 1..d {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..d {
                    let (x, y) = (w[p][k], w[q][k]);
                    w[p][k] = c * x - s * y;
                    w[q][k] = s * x + c * y;
                    let (x, y) = (v[p][k], v[q][k]);
                    v[p][k] = c * x - s * y;
                    v[q][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut idx: Vec<usize> = (0..d).collect();
    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    idx.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let values: Vec<f64> = idx.iter().map(|&i| norms[i]).collect();
    let right: Vec<Vec<f64>> = idx.iter().map(|&i| v[i].clone()).collect();
    let mut left: Vec<Vec<f64>> = Vec::with_capacity(d);
    for (k, &i) in idx.iter().enumerate() {
        if norms[i] > 0.0 {
            left.push(w[i].iter().map(|x| x / norms[i]).collect());
        } else {
            left.push(complete_frame(&left, d, k));
        }
    }
    SingularData { values, left, right }
}

// A unit vector orthogonal to the given ones (Gram-Schmidt on basis vectors).
fn complete_frame(frame: &[Vec<f64>], d: usize, start: usize) -> Vec<f64> {
    for e in (start..d).chain(0..start) {
        let mut x: Vec<f64> = (0..d).map(|i| if i == e { 1.0 } else { 0.0 }).collect();
        for f in frame {
            let c = dot(&x, f);
            for (xi, fi) in x.iter_mut().zip(f) {
                *xi -= c * fi;
            }
        }
        let n = dot(&x, &x).sqrt();
        if n > 1e-8 {
            return x.iter().map(|v| v / n).collect();
        }
    }
    unreachable!("a frame of fewer than d vectors can always be completed")
}

/// log sigma_1 + log sigma_2.
pub fn wedge_log_norm(m: &Matrix) -> Result<f64> {
    if m.d < 2 {
        return Err(Error::DimensionUnsupported { d: m.d });
    }
    if m.d == 2 {
        return Ok(m.det().abs().ln());
    }
    let sv = singular(m);
    Ok(sv.values[0].ln() + sv.values[1].ln())
}

/// Singular values of a 2x2 matrix [a b; c d], largest first.
#[inline]
pub fn sv2(m: [f64; 4]) -> (f64, f64) {
    let [a, b, c, d] = m;
    let e = 0.5 * (a + d);
    let f = 0.5 * (a - d);
    let g = 0.5 * (c + b);
    let h = 0.5 * (c - b);
    let s1 = e.hypot(h) + f.hypot(g);
    let det = (a * d - b * c).abs();
    let s2 = if s1 > 0.0 { det / s1 } else { 0.0 };
    (s1, s2)
}

/// A matrix value `2^exp2 * m`, with the log of its absolute determinant tracked separately.
#[derive(Clone, Debug)]
pub struct ScaledMatrix {
    m: Matrix,
    exp2: i64,
    log_abs_det: f64,
    pending: usize,
}

impl ScaledMatrix {
    pub fn identity(d: usize) -> Self {
        ScaledMatrix { m: Matrix::identity(d), exp2: 0, log_abs_det: 0.0, pending: 0 }
    }

    pub fn from_matrix(m: Matrix) -> Self {
        let log_abs_det = m.det().abs().ln();
        let mut s = ScaledMatrix { m, exp2: 0, log_abs_det, pending: 0 };
        s.renormalize();
        s
    }

    /// The normalized factor `m`.
    pub fn mantissa(&self) -> &Matrix {
        &self.m
    }

    /// Natural log of the carried scale factor.
    pub fn log_scale(&self) -> f64 {
        self.exp2 as f64 * LN_2
    }

    pub fn log_abs_det(&self) -> f64 {
        self.log_abs_det
    }

    /// Moves the binary exponent of the largest entry into the carried scale.
    pub fn renormalize(&mut self) {
        let mx = self.m.max_abs();
        if mx > 0.0 && mx.is_finite() {
            let e = mx.log2().floor() as i32;
            if e != 0 {
                let f = 2f64.powi(-e);
                for v in self.m.a.iter_mut() {
                    *v *= f;
                }
                self.exp2 += e as i64;
            }
        }
        self.pending = 0;
    }

    fn tick(&mut self) {
        self.pending += 1;
        if self.pending >= RENORM_EVERY {
            self.renormalize();
        }
    }

    /// self <- a * self, where `log_abs_det_a` is log|det a|.
    pub fn left_mul(&mut self, a: &Matrix, log_abs_det_a: f64) {
        self.m = a * &self.m;
        self.log_abs_det += log_abs_det_a;
        self.tick();
    }

    /// self <- self * a.
    pub fn right_mul(&mut self, a: &Matrix, log_abs_det_a: f64) {
        self.m = &self.m * a;
        self.log_abs_det += log_abs_det_a;
        self.tick();
    }

    pub fn transpose(&self) -> ScaledMatrix {
        ScaledMatrix {
            m: self.m.transpose(),
            exp2: self.exp2,
            log_abs_det: self.log_abs_det,
            pending: self.pending,
        }
    }

    /// Explicit value; entries overflow to infinity when the scale is out of range.
    pub fn to_matrix(&self) -> Matrix {
        let e = self.exp2.clamp(-4000, 4000) as i32;
        // Split the power so that intermediate factors stay representable.
        let half = e / 2;
        self.m.scale(2f64.powi(half)).scale(2f64.powi(e - half))
    }

    /// Logs of the singular values, largest first.
    pub fn log_singular_values(&self) -> Vec<f64> {
        let ls = self.log_scale();
        if self.m.d == 2 {
            let (s1, _) = sv2(self.m.as2());
            let l1 = s1.ln() + ls;
            return vec![l1, self.log_abs_det - l1];
        }
        singular(&self.m).values.iter().map(|v| v.ln() + ls).collect()
    }

    pub fn log_norm(&self) -> f64 {
        if self.m.d == 2 {
            sv2(self.m.as2()).0.ln() + self.log_scale()
        } else {
            self.m.norm().ln() + self.log_scale()
        }
    }

    /// log sigma_2 - log sigma_1 (log of the singular gap).
    pub fn log_gap(&self) -> f64 {
        let l = self.log_singular_values();
        if l.len() < 2 {
            0.0
        } else {
            l[1] - l[0]
        }
    }

    pub fn wedge_log_norm(&self) -> f64 {
        let l = self.log_singular_values();
        l[0] + l[1]
    }

    /// log ||self v|| for a vector v.
    pub fn log_norm_of(&self, v: &[f64]) -> f64 {
        let w = self.m.mul_vec(v);
        dot(&w, &w).sqrt().ln() + self.log_scale()
    }

    /// Inverse, refusing products with condition number above `COND_LIMIT`.
    pub fn inverse(&self) -> Result<ScaledMatrix> {
        let l = self.log_singular_values();
        let log_cond = l[0] - l[l.len() - 1];
        if !(log_cond <= COND_LIMIT.ln()) {
            return Err(Error::IllConditioned { cond: log_cond.exp() });
        }
        Ok(ScaledMatrix {
            m: self.m.inverse()?,
            exp2: -self.exp2,
            log_abs_det: -self.log_abs_det,
            pending: 0,
        })
    }
}

/// Locally constant matrix cocycle: one invertible generator per symbol.
#[derive(Clone, Debug)]
pub struct OneStepCocycle {
    d: usize,
    mats: Vec<Matrix>,
    transposes: Vec<Matrix>,
    inv_transposes: Vec<Matrix>,
    log_abs_dets: Vec<f64>,
}

impl OneStepCocycle {
    pub fn new(mats: Vec<Matrix>) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::InvalidInput("a cocycle needs at least one generator".into()));
        }
        let d = mats[0].dim();
        for (i, m) in mats.iter().enumerate() {
            if m.dim() != d {
                return Err(Error::InvalidInput(format!(
                    "generator {} is {}x{}, expected {d}x{d}",
                    i + 1,
                    m.dim(),
                    m.dim()
                )));
            }
            let sv = singular(m);
            let ratio = sv.values[d - 1] / sv.values[0];
            if !(ratio > INVERTIBLE_TOL) {
                return Err(Error::NotInvertible { index: i + 1, ratio });
            }
        }
        let transposes = mats.iter().map(Matrix::transpose).collect();
        let inv_transposes = mats
            .iter()
            .map(|m| m.inverse().map(|x| x.transpose()))
            .collect::<Result<Vec<_>>>()?;
        let log_abs_dets = mats.iter().map(|m| m.det().abs().ln()).collect();
        Ok(OneStepCocycle { d, mats, transposes, inv_transposes, log_abs_dets })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.mats.len()
    }

    pub fn generator(&self, a: usize) -> &Matrix {
        &self.mats[a]
    }

    pub fn generator_transpose(&self, a: usize) -> &Matrix {
        &self.transposes[a]
    }

    pub fn generator_inv_transpose(&self, a: usize) -> &Matrix {
        &self.inv_transposes[a]
    }

    pub fn generator_log_abs_det(&self, a: usize) -> f64 {
        self.log_abs_dets[a]
    }

    pub fn generators(&self) -> &[Matrix] {
        &self.mats
    }

    pub fn check_alphabet(&self, s: &Subshift) -> Result<()> {
        if s.q() != self.q() {
            return Err(Error::InvalidInput(format!(
                "cocycle has {} generators but the alphabet has {} symbols",
                self.q(),
                s.q()
            )));
        }
        Ok(())
    }

    /// A_{i_{n-1}} ... A_{i_0}.
    pub fn product(&self, word: &Word) -> ScaledMatrix {
        let mut p = ScaledMatrix::identity(self.d);
        for &a in word.symbols() {
            p.left_mul(&self.mats[a as usize], self.log_abs_dets[a as usize]);
        }
        p
    }

    /// A_{i_0}^T ... A_{i_{n-1}}^T, accumulated directly.
    pub fn adjoint_product(&self, word: &Word) -> ScaledMatrix {
        let mut p = ScaledMatrix::identity(self.d);
        for &a in word.symbols() {
            p.right_mul(&self.transposes[a as usize], self.log_abs_dets[a as usize]);
        }
        p
    }

    /// Inverse of `adjoint_product`, by explicit inversion under the condition guard.
    pub fn inv_adjoint_product(&self, word: &Word) -> Result<ScaledMatrix> {
        self.adjoint_product(word).inverse()
    }

    /// A_{i_{n-1}}^{-T} ... A_{i_0}^{-T}: the same matrix as `inv_adjoint_product`,
    /// accumulated factor by factor without inversion of the product.
    pub fn inv_adjoint_chain(&self, word: &Word) -> ScaledMatrix {
        let mut p = ScaledMatrix::identity(self.d);
        for &a in word.symbols() {
            p.left_mul(&self.inv_transposes[a as usize], -self.log_abs_dets[a as usize]);
        }
        p
    }

    /// Depth-first visit of every admissible word starting with `root`, up to length `n_max`,
    /// with its adjoint product. Words of equal length are visited in lexicographic order.
    /// The visitor returns false to prune the subtree below a word.
    pub fn visit_subtree<F>(&self, s: &Subshift, root: usize, n_max: usize, visit: &mut F)
    where
        F: FnMut(&Word, &ScaledMatrix) -> bool,
    {
        if n_max == 0 {
            return;
        }
        let mut word = Word::new(vec![root as u8]);
        let mut p = ScaledMatrix::identity(self.d);
        p.right_mul(&self.transposes[root], self.log_abs_dets[root]);
        self.visit_rec(s, n_max, &mut word, &p, visit);
    }

    fn visit_rec<F>(&self, s: &Subshift, n_max: usize, word: &mut Word, p: &ScaledMatrix, visit: &mut F)
    where
        F: FnMut(&Word, &ScaledMatrix) -> bool,
    {
        if !visit(word, p) || word.len() == n_max {
            return;
        }
        let last = word.last().unwrap();
        for b in s.successors(last) {
            let mut next = p.clone();
            next.right_mul(&self.transposes[b], self.log_abs_dets[b]);
            word.push(b);
            self.visit_rec(s, n_max, word, &next, visit);
            let mut v = word.symbols().to_vec();
            v.pop();
            *word = Word::new(v);
        }
    }

    /// Every admissible word of length exactly `n` with its adjoint product, in lexicographic order.
    pub fn for_each_word<F>(&self, s: &Subshift, n: usize, mut f: F)
    where
        F: FnMut(&Word, &ScaledMatrix),
    {
        for root in 0..s.q() {
            self.visit_subtree(s, root, n, &mut |w: &Word, p: &ScaledMatrix| {
                if w.len() == n {
                    f(w, p);
                }
                true
            });
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_matrix(rng: &mut ChaCha8Rng, d: usize) -> Matrix {
        Matrix::new(d, (0..d * d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    pub(crate) fn random_sl2(rng: &mut ChaCha8Rng) -> Matrix {
        loop {
            let m = random_matrix(rng, 2);
            let det = m.det();
            if det.abs() > 0.1 {
                let m = if det < 0.0 { &Matrix::diag(&[1.0, -1.0]) * &m } else { m };
                return m.scale(1.0 / m.det().sqrt());
            }
        }
    }

    fn prop92() -> OneStepCocycle {
        OneStepCocycle::new(vec![
            Matrix::diag(&[2.0, 0.5]),
            Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap(),
            Matrix::rotation(2.0 * std::f64::consts::PI / 2f64.sqrt()),
        ])
        .unwrap()
    }

    #[test]
    fn swap_word_is_exact() {
        let c = prop92();
        for n in 0..=50 {
            let w = Word::new([vec![0u8; n], vec![1], vec![0u8; n]].concat());
            let m = c.product(&w).to_matrix();
            assert_eq!(m.data(), &[0.0, 1.0, 1.0, 0.0]);
            let p = Word::new(vec![0u8; n.max(1)]);
            let d = c.product(&p).to_matrix();
            let k = n.max(1) as i32;
            assert_eq!(d.data(), &[2f64.powi(k), 0.0, 0.0, 2f64.powi(-k)]);
        }
    }

    #[test]
    fn single_symbol_product() {
        let c = prop92();
        for a in 0..3 {
            let m = c.product(&Word::new(vec![a as u8])).to_matrix();
            assert_eq!(&m, c.generator(a));
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let c = prop92();
        let w = Word::parse("1321233112").unwrap();
        let p = c.product(&w).to_matrix().transpose();
        let q = c.adjoint_product(&w).to_matrix();
        assert!(p.sub(&q).max_abs() <= 1e-12 * p.max_abs());
    }

    #[test]
    fn inverse_adjoint_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gens: Vec<Matrix> = (0..3).map(|_| random_sl2(&mut rng)).collect();
        let c = OneStepCocycle::new(gens).unwrap();
        let w = Word::new((0..6).map(|_| rng.gen_range(0..3u8)).collect());
        let a = c.adjoint_product(&w).to_matrix();
        let inv = c.inv_adjoint_product(&w).unwrap().to_matrix();
        let r = (&inv * &a).sub(&Matrix::identity(2)).max_abs();
        assert!(r <= 1e-10, "residual {r}");
        let chain = c.inv_adjoint_chain(&w).to_matrix();
        assert!(chain.sub(&inv).max_abs() <= 1e-10 * inv.max_abs());
    }

    #[test]
    fn orthogonal_inverse_adjoint_is_product() {
        let c = OneStepCocycle::new(vec![Matrix::rotation(0.3), Matrix::rotation(1.1)]).unwrap();
        let w = Word::parse("12212").unwrap();
        let a = c.inv_adjoint_product(&w).unwrap().to_matrix();
        let b = c.product(&w).to_matrix();
        assert!(a.sub(&b).max_abs() < 1e-12);
    }

    #[test]
    fn ill_conditioned_refused() {
        let c = prop92();
        let w = Word::new(vec![0u8; 40]);
        assert!(matches!(c.inv_adjoint_product(&w), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn svd_examples() {
        let s = singular(&Matrix::diag(&[2.0, 1.0]));
        assert_eq!(s.values, vec![2.0, 1.0]);
        assert_eq!(s.gap(), 0.5);
        let r = singular(&Matrix::rotation(0.7));
        assert!((r.values[0] - 1.0).abs() < 1e-14 && (r.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_and_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in 2..=3 {
            for _ in 0..200 {
                let m = random_matrix(&mut rng, d);
                let s = singular(&m);
                for i in 0..d {
                    let av = m.mul_vec(&s.right[i]);
                    for k in 0..d {
                        assert!((av[k] - s.values[i] * s.left[i][k]).abs() < 1e-10);
                    }
                    for j in 0..d {
                        let e = if i == j { 1.0 } else { 0.0 };
                        assert!((dot(&s.left[i], &s.left[j]) - e).abs() < 1e-10);
                        assert!((dot(&s.right[i], &s.right[j]) - e).abs() < 1e-10);
                    }
                }
                assert!(s.values.windows(2).all(|p| p[0] >= p[1]));
            }
        }
    }

    #[test]
    fn gap_of_transpose_matches() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d = rng.gen_range(2..=3);
            let m = random_matrix(&mut rng, d);
            let a = singular(&m).gap();
            let b = singular(&m.transpose()).gap();
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_form_matches_jacobi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let m = random_matrix(&mut rng, 2);
            let (s1, s2) = sv2(m.as2());
            let s = singular(&m);
            assert!((s1 - s.values[0]).abs() < 1e-12 * s1);
            assert!((s2 - s.values[1]).abs() < 1e-10 * s1);
        }
    }

    #[test]
    fn wedge_examples() {
        assert!((wedge_log_norm(&Matrix::diag(&[4.0, 2.0])).unwrap() - 8f64.ln()).abs() < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gens: Vec<Matrix> = (0..2).map(|_| random_sl2(&mut rng)).collect();
        let c = OneStepCocycle::new(gens).unwrap();
        for n in 1..30 {
            let w = Word::new((0..n).map(|_| rng.gen_range(0..2u8)).collect());
            assert!(c.product(&w).wedge_log_norm().abs() < 1e-10);
            assert!(wedge_log_norm(&c.product(&w).to_matrix()).unwrap().abs() < 1e-10);
        }
        let d3 = Matrix::diag(&[4.0, 2.0, 0.5]);
        assert!((wedge_log_norm(&d3).unwrap() - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn renormalized_long_products() {
        let c = prop92();
        let w = Word::new(vec![0u8; 5000]);
        let l = c.product(&w).log_singular_values();
        assert!((l[0] - 5000.0 * LN_2).abs() < 1e-9);
        assert!((l[1] + 5000.0 * LN_2).abs() < 1e-9);
    }

    #[test]
    fn non_invertible_generator_rejected() {
        let e = OneStepCocycle::new(vec![Matrix::diag(&[1.0, 0.0])]).unwrap_err();
        assert!(matches!(e, Error::NotInvertible { index: 1, .. }));
    }

    #[test]
    fn visitor_order_is_lexicographic() {
        let s = Subshift::golden_mean();
        let c = OneStepCocycle::new(vec![Matrix::diag(&[2.0, 0.5]), Matrix::rotation(0.4)]).unwrap();
        let mut seen = Vec::new();
        c.for_each_word(&s, 4, |w, _| seen.push(w.clone()));
        let direct: Vec<Word> = s.enumerate_words(4).collect();
        assert_eq!(seen, direct);
    }
}
