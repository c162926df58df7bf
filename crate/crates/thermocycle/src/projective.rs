//! Lines through the origin: projective distance, alignment, actions and dominant directions.

use std::f64::consts::PI;

use crate::cocycle::{singular, Matrix, OneStepCocycle, ScaledMatrix};
use crate::error::{Error, Result};
use crate::sft::Word;

/// Relative singular gap below which the top direction is undefined.
pub const DEGENERATE_GAP: f64 = 1e-10;
pub const XI_DEFAULT_WINDOW: usize = 30;
pub const XI_TARGET: f64 = 1e-6;
pub const XI_MAX_WINDOW: usize = 2000;

/// A point of projective space stored as a unit vector whose first nonzero coordinate is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjPoint {
    rep: Vec<f64>,
}

impl ProjPoint {
    pub fn new(v: &[f64]) -> Result<Self> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::InvalidInput("a projective point needs a nonzero finite vector".into()));
        }
        let sign = v.iter().find(|x| **x != 0.0).map_or(1.0, |x| x.signum());
        Ok(ProjPoint { rep: v.iter().map(|x| sign * x / n).collect() })
    }

    /// The line through (cos theta, sin theta).
    pub fn from_angle(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        ProjPoint::new(&[c, s]).expect("unit vector")
    }

    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        ProjPoint { rep: v }
    }

    pub fn rep(&self) -> &[f64] {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.len()
    }

    /// Angle in [0, pi) for planar points.
    pub fn angle(&self) -> f64 {
        debug_assert_eq!(self.rep.len(), 2);
        angle_of(self.rep[0], self.rep[1])
    }
}

/// Angle of the line through (x, y), in [0, pi).
#[inline]
pub fn angle_of(x: f64, y: f64) -> f64 {
    let a = y.atan2(x);
    let a = if a < 0.0 { a + PI } else { a };
    if a >= PI {
        0.0
    } else {
        a
    }
}

fn inner(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn wedge_norm(u: &[f64], v: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            let w = u[i] * v[j] - u[j] * v[i];
            total += w * w;
        }
    }
    total.sqrt()
}

/// ||u ^ v|| / (||u|| ||v||), from the 2x2 minors.
pub fn dist(u: &ProjPoint, v: &ProjPoint) -> f64 {
    wedge_norm(&u.rep, &v.rep).min(1.0)
}

/// |<u, v>| / (||u|| ||v||).
pub fn align(u: &ProjPoint, v: &ProjPoint) -> f64 {
    inner(&u.rep, &v.rep).abs().min(1.0)
}

/// Same quantities for raw vectors.
pub fn align_vec(u: &[f64], v: &[f64]) -> f64 {
    let c = inner(u, v) / (inner(u, u) * inner(v, v)).sqrt();
    c.abs().min(1.0)
}

pub fn dist_vec(u: &[f64], v: &[f64]) -> f64 {
    (wedge_norm(u, v) / (inner(u, u) * inner(v, v)).sqrt()).min(1.0)
}

pub fn act(a: &Matrix, u: &ProjPoint) -> ProjPoint {
    ProjPoint::new(&a.mul_vec(&u.rep)).expect("invertible matrices map lines to lines")
}

fn relative_gap(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    (values[0] - values[1]) / values[0]
}

/// Left singular direction of the largest singular value.
pub fn top_direction(a: &Matrix) -> Result<ProjPoint> {
    let s = singular(a);
    let gap = relative_gap(&s.values);
    if !(gap > DEGENERATE_GAP) {
        return Err(Error::DegenerateGap { gap });
    }
    ProjPoint::new(&s.left[0])
}

/// `top_direction` for a scaled product; the gap is read from the tracked logs.
pub fn top_direction_scaled(a: &ScaledMatrix) -> Result<ProjPoint> {
    let gap = -(a.log_gap().exp_m1());
    if !(gap > DEGENERATE_GAP) {
        return Err(Error::DegenerateGap { gap });
    }
    let s = singular(a.mantissa());
    ProjPoint::new(&s.left[0])
}

/// Slacks of the three comparison inequalities; each is nonnegative when the inequality holds.
#[derive(Clone, Debug)]
pub struct BqReport {
    pub i_lower: f64,
    pub i_upper: f64,
    pub ii_lower: f64,
    pub ii_upper: f64,
    pub iii: f64,
}

impl BqReport {
    pub fn min_slack(&self) -> f64 {
        [self.i_lower, self.i_upper, self.ii_lower, self.ii_upper, self.iii]
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn bq_inequalities_check(a: &Matrix, u: &ProjPoint, v: &ProjPoint) -> Result<BqReport> {
    let at = a.transpose();
    let s = singular(a);
    let norm = s.values[0];
    let gamma = s.gap();
    let up_a = top_direction(a)?;
    let up_at = top_direction(&at)?;

    let r1 = norm_of(&a.mul_vec(v.rep())) / norm;
    let d1 = align(&up_at, v);
    let r2 = norm_of(&at.mul_vec(u.rep())) / norm;
    let d2 = align(u, &up_a);
    let pushed = act(&at, u);
    Ok(BqReport {
        i_lower: r1 - d1,
        i_upper: d1 + gamma - r1,
        ii_lower: r2 - d2,
        ii_upper: d2 + gamma - r2,
        iii: gamma - dist(&pushed, &up_at) * d2,
    })
}

fn norm_of(v: &[f64]) -> f64 {
    inner(v, v).sqrt()
}

/// Window estimate of the slowest Oseledets direction at a point with the given prefix.
#[derive(Clone, Debug)]
pub struct XiEstimate {
    pub dir: ProjPoint,
    pub window: usize,
    /// sigma_2 / sigma_1 of the adjoint product over the window, floored at the smallest positive double.
    pub err_bound: f64,
    pub log_err_bound: f64,
}

/// Top direction of the adjoint product over the first `m` symbols of `prefix`.
pub fn estimate_xi_star(c: &OneStepCocycle, prefix: &Word, m: usize) -> Result<XiEstimate> {
    if m == 0 || prefix.len() < m {
        return Err(Error::InvalidInput(format!(
            "window {m} needs a prefix of at least that length (got {})",
            prefix.len()
        )));
    }
    let p = c.adjoint_product(&prefix.prefix(m));
    let dir = top_direction_scaled(&p)?;
    let log_err_bound = p.log_gap();
    Ok(XiEstimate {
        dir,
        window: m,
        err_bound: log_err_bound.exp().max(f64::MIN_POSITIVE),
        log_err_bound,
    })
}

/// Doubles the window from `XI_DEFAULT_WINDOW` until the bound drops below `XI_TARGET`,
/// the window passes `XI_MAX_WINDOW`, or the prefix runs out; returns the last estimate.
pub fn estimate_xi_star_adaptive(c: &OneStepCocycle, prefix: &Word) -> Result<XiEstimate> {
    let mut m = XI_DEFAULT_WINDOW.min(prefix.len());
    let mut est = estimate_xi_star(c, prefix, m)?;
    while est.err_bound >= XI_TARGET && m <= XI_MAX_WINDOW && 2 * m <= prefix.len() {
        m *= 2;
        est = estimate_xi_star(c, prefix, m)?;
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cocycle::tests::random_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(rng: &mut ChaCha8Rng, d: usize) -> ProjPoint {
        ProjPoint::new(&(0..d).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn basic_distances() {
        let e1 = ProjPoint::basis(2, 0);
        let e2 = ProjPoint::basis(2, 1);
        assert_eq!(dist(&e1, &e2), 1.0);
        assert_eq!(dist(&e1, &e1), 0.0);
        assert_eq!(align(&e1, &e2), 0.0);
        assert_eq!(align(&e1, &e1), 1.0);
        for (a, b) in [(0.1, 2.0), (1.3, 0.2), (3.0, 0.01)] {
            let d = dist(&ProjPoint::from_angle(a), &ProjPoint::from_angle(b));
            assert!((d - (a - b).sin().abs()).abs() < 1e-12);
        }
    }

    #[test]
    fn random_pairs_and_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let d = rng.gen_range(2..=3);
            let (u, v, w) = (random_point(&mut rng, d), random_point(&mut rng, d), random_point(&mut rng, d));
            assert!((align(&u, &v).powi(2) + dist(&u, &v).powi(2) - 1.0).abs() < 1e-12);
            assert_eq!(dist(&u, &v), dist(&v, &u));
            assert!(dist(&u, &v) + dist(&v, &w) - dist(&u, &w) >= -1e-10);
        }
    }

    #[test]
    fn canonical_sign() {
        let p = ProjPoint::new(&[-1.0, 2.0]).unwrap();
        assert!(p.rep()[0] > 0.0);
        let z = ProjPoint::new(&[0.0, -3.0, 1.0]).unwrap();
        assert!(z.rep()[1] > 0.0 && z.rep()[2] < 0.0);
    }

    #[test]
    fn actions() {
        let u = ProjPoint::from_angle(0.4);
        assert!(dist(&act(&Matrix::identity(2), &u), &u) < 1e-15);
        let e2 = ProjPoint::basis(2, 1);
        assert!(dist(&act(&Matrix::diag(&[2.0, 1.0]), &e2), &e2) < 1e-15);
        let r = act(&Matrix::rotation(2.9), &u);
        assert!((r.angle() - (0.4 + 2.9) % PI).abs() < 1e-12);
    }

    #[test]
    fn top_direction_examples() {
        let t = top_direction(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert!(dist(&t, &ProjPoint::basis(2, 0)) < 1e-15);
        assert!(matches!(top_direction(&Matrix::rotation(0.3)), Err(Error::DegenerateGap { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let a = random_matrix(&mut rng, 2);
            let u = top_direction(&a).unwrap();
            let n = norm_of(&a.transpose().mul_vec(u.rep()));
            assert!((n - a.norm()).abs() < 1e-10);
        }
    }

    #[test]
    fn bq_diagonal_lower_bound_is_tight() {
        let a = Matrix::diag(&[2.0, 1.0]);
        let e1 = ProjPoint::basis(2, 0);
        let r = bq_inequalities_check(&a, &e1, &e1).unwrap();
        assert!(r.i_lower.abs() < 1e-15);
    }

    #[test]
    fn bq_rejects_orthogonal() {
        let u = ProjPoint::basis(2, 0);
        assert!(bq_inequalities_check(&Matrix::rotation(1.0), &u, &u).is_err());
    }

    #[test]
    fn xi_star_on_diagonal_prefix() {
        let c = OneStepCocycle::new(vec![Matrix::diag(&[2.0, 0.5]), Matrix::rotation(1.0)]).unwrap();
        let x = Word::new(vec![0; 100]);
        for m in [5, 20, 60] {
            let e = estimate_xi_star(&c, &x, m).unwrap();
            assert!(dist(&e.dir, &ProjPoint::basis(2, 0)) < 1e-15);
            assert!((e.log_err_bound + 2.0 * m as f64 * 2f64.ln()).abs() < 1e-9);
        }
        let rot = Word::new(vec![1; 50]);
        assert!(matches!(estimate_xi_star(&c, &rot, 30), Err(Error::DegenerateGap { .. })));
    }
}
