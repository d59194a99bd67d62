//! Schur complements, determinant bounds for inverses, and empirical checks
//! of the matrix-valued Cartan estimate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::PointSet;
use crate::linalg;
use crate::model::{assemble_restricted, ModelConfig, Phase};
use crate::sampling::{estimate_measure, MeasureEstimate, SamplingMethod};

fn complement(n: usize, v: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = v.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != v.len() || sorted.last().is_some_and(|&i| i >= n) {
        return Err(Error::input("V must be distinct indices inside the matrix"));
    }
    Ok((0..n).filter(|i| sorted.binary_search(i).is_err()).collect())
}

fn sorted(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

#[derive(Clone, Debug)]
pub struct SchurComplement {
    /// `T3 − T2ᵗ T1^{-1} T2` on `V` (indices in increasing order).
    pub s: DMatrix<f64>,
    /// `‖T1^{-1}‖`, zero when `V` is everything.
    pub t1_inv_norm: f64,
    pub v: Vec<usize>,
    pub v_complement: Vec<usize>,
}

/// Schur complement of the block `T1 = T|_{V^c}`.
pub fn schur_complement(t: &DMatrix<f64>, v: &[usize]) -> Result<SchurComplement> {
    let n = t.nrows();
    if n != t.ncols() {
        return Err(Error::input("T must be square"));
    }
    let vc = complement(n, v)?;
    let v = sorted(v);
    let t3 = linalg::submatrix(t, &v, &v);
    if vc.is_empty() {
        return Ok(SchurComplement {
            s: t3,
            t1_inv_norm: 0.0,
            v,
            v_complement: vc,
        });
    }
    let t1 = linalg::submatrix(t, &vc, &vc);
    let t2 = linalg::submatrix(t, &vc, &v);
    let t1_inv = linalg::checked_inverse(&t1, true)?.matrix;
    let s = &t3 - t2.transpose() * &t1_inv * &t2;
    let s = (&s + s.transpose()) * 0.5;
    Ok(SchurComplement {
        s,
        t1_inv_norm: linalg::operator_norm(&t1_inv),
        v,
        v_complement: vc,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Sandwich {
    pub s_inv_norm: f64,
    pub t_inv_norm: f64,
    pub t1_inv_norm: f64,
    /// `‖S^{-1}‖ ≤ ‖T^{-1}‖`.
    pub left_ok: bool,
    /// Smallest `C` with `‖T^{-1}‖ ≤ C (1+‖T1^{-1}‖)^2 (1+‖S^{-1}‖)`.
    pub c_min: f64,
    /// `max |(T^{-1})_{V×V} − S^{-1}|`.
    pub block_consistency: f64,
}

/// Check `‖S^{-1}‖ ≤ ‖T^{-1}‖ ≤ C(1+‖T1^{-1}‖)^2(1+‖S^{-1}‖)`.
pub fn sandwich_check(t: &DMatrix<f64>, v: &[usize]) -> Result<Sandwich> {
    let sc = schur_complement(t, v)?;
    let t_inv = linalg::checked_inverse(t, true)?.matrix;
    let s_inv = linalg::checked_inverse(&sc.s, true)?.matrix;
    let s_inv_norm = linalg::operator_norm(&s_inv);
    let t_inv_norm = linalg::operator_norm(&t_inv);
    let block = linalg::submatrix(&t_inv, &sc.v, &sc.v);
    Ok(Sandwich {
        s_inv_norm,
        t_inv_norm,
        t1_inv_norm: sc.t1_inv_norm,
        left_ok: s_inv_norm <= t_inv_norm * (1.0 + 1e-12),
        c_min: t_inv_norm / ((1.0 + sc.t1_inv_norm).powi(2) * (1.0 + s_inv_norm)),
        block_consistency: linalg::max_abs_diff(&block, &s_inv),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetBound {
    pub lhs: f64,
    /// `ln(‖S‖^{M−1} / |det S|)`.
    pub rhs_log: f64,
    pub holds: bool,
}

/// Check `‖S^{-1}‖ ≤ ‖S‖^{M−1} / |det S|` for a symmetric `M×M` matrix.
pub fn det_inverse_bound(s: &DMatrix<f64>) -> Result<DetBound> {
    let m = s.nrows();
    if m == 0 || m != s.ncols() {
        return Err(Error::input("S must be square and nonempty"));
    }
    let (log_det, _) = linalg::log_abs_det(s).ok_or(Error::Singular { condition: f64::INFINITY })?;
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let norm = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lhs = 1.0 / min;
    let rhs_log = (m as f64 - 1.0) * norm.ln() - log_det;
    Ok(DetBound {
        lhs,
        rhs_log,
        holds: lhs.ln() <= rhs_log + 1e-10,
    })
}

type Evaluator = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// `y ↦ T(y)` on `[−δ, δ]^J`, symmetric for real `y`, with a bound `B1` on
/// the complex polydisc-like domain of width `δ`.
#[derive(Clone)]
pub struct AnalyticMatrixFamily {
    evaluator: Evaluator,
    pub j: usize,
    pub delta: f64,
    pub b1: f64,
    pub size: usize,
    pub label: String,
}

impl fmt::Debug for AnalyticMatrixFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyticMatrixFamily")
            .field("label", &self.label)
            .field("j", &self.j)
            .field("delta", &self.delta)
            .field("b1", &self.b1)
            .field("size", &self.size)
            .finish()
    }
}

impl AnalyticMatrixFamily {
    pub fn new(
        label: &str,
        j: usize,
        delta: f64,
        b1: f64,
        size: usize,
        evaluator: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Result<Self> {
        if j == 0 || !(delta > 0.0) || size == 0 {
            return Err(Error::input("family needs J >= 1, delta > 0 and a nonempty matrix"));
        }
        Ok(AnalyticMatrixFamily {
            evaluator: Arc::new(evaluator),
            j,
            delta,
            b1: b1.max(1.0),
            size,
            label: label.to_string(),
        })
    }

    /// `T(y) = (y)`, one variable.
    pub fn scalar(delta: f64) -> Result<Self> {
        Self::new("scalar", 1, delta, 2f64.sqrt() * delta, 1, |y| DMatrix::from_element(1, 1, y[0]))
    }

    /// `T(y) = A`.
    pub fn constant(a: DMatrix<f64>, j: usize, delta: f64) -> Result<Self> {
        let b1 = linalg::operator_norm(&a);
        let n = a.nrows();
        Self::new("constant", j, delta, b1, n, move |_| a.clone())
    }

    /// `T(y) = Σ_k A_k y^k` with symmetric coefficients.
    pub fn polynomial(coeffs: Vec<DMatrix<f64>>, delta: f64) -> Result<Self> {
        let n = coeffs.first().map(|a| a.nrows()).unwrap_or(0);
        let r = 2f64.sqrt() * delta;
        let b1 = coeffs
            .iter()
            .enumerate()
            .map(|(k, a)| linalg::operator_norm(a) * r.powi(k as i32))
            .sum();
        Self::new("polynomial", 1, delta, b1, n, move |y| {
            let mut out = DMatrix::zeros(n, n);
            let mut p = 1.0;
            for a in &coeffs {
                out += a * p;
                p *= y[0];
            }
            out
        })
    }

    /// `T(y) = λ^{-1} H_Λ(x + y e_block) − E`, moving one phase block.
    pub fn restricted_operator(
        cfg: &ModelConfig,
        region: &PointSet,
        anchor: &Phase,
        e: f64,
        block: usize,
        delta: f64,
    ) -> Result<Self> {
        if block >= cfg.d() {
            return Err(Error::input("phase block out of range"));
        }
        let j = cfg.blocks.sizes()[block];
        let range = cfg.blocks.range(block);
        let b1 = cfg.potential.complex_strip_bound(delta) + cfg.kernel.row_sum() / cfg.lambda + e.abs();
        let (cfg, region, anchor) = (cfg.clone(), region.clone(), anchor.clone());
        assemble_restricted(&cfg, &region, &anchor, e)?;
        let n = region.len();
        Self::new("restricted_operator", j, delta, b1, n, move |y| {
            let mut x = anchor.clone();
            for (k, i) in range.clone().enumerate() {
                x.0[i] = (x.0[i] + y[k]).rem_euclid(1.0);
            }
            assemble_restricted(&cfg, &region, &x, e).expect("validated at construction")
        })
    }

    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        (self.evaluator)(y)
    }

    /// `‖T(y)^{-1}‖`, infinite on singular points.
    pub fn inverse_norm(&self, y: &[f64]) -> f64 {
        let eig = SymmetricEigen::new(self.eval(y)).eigenvalues;
        let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if min > 0.0 {
            1.0 / min
        } else {
            f64::INFINITY
        }
    }

    /// Largest central-difference estimate of `‖∂_i T‖` at the anchor and the
    /// Cauchy bound `4 B1 / δ`.
    pub fn cauchy_check(&self) -> (f64, f64) {
        let h = self.delta * 1e-4;
        let zero = vec![0.0; self.j];
        let worst = (0..self.j)
            .map(|i| {
                let mut p = zero.clone();
                let mut m = zero.clone();
                p[i] = h;
                m[i] = -h;
                linalg::operator_norm(&((self.eval(&p) - self.eval(&m)) / (2.0 * h)))
            })
            .fold(0.0, f64::max);
        (worst, 4.0 * self.b1 / self.delta)
    }
}

/// Pivot set `V` and the bounds `B2` (on `‖(T|_{V^c})^{-1}‖`) and `B3`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PivotData {
    pub v: Vec<usize>,
    pub b2: f64,
    pub b3: f64,
}

impl PivotData {
    pub fn new(v: Vec<usize>, b2: f64, b3: f64) -> Result<Self> {
        if !(b2 >= 1.0) || !(b3 >= 1.0) {
            return Err(Error::input("B2 and B3 must be at least 1"));
        }
        Ok(PivotData { v, b2, b3 })
    }

    /// Take `B2 = max(1, 2‖(T(0)|_{V^c})^{-1}‖)` from the anchor.
    pub fn from_anchor(family: &AnalyticMatrixFamily, v: Vec<usize>, b3: f64) -> Result<Self> {
        let observed = complement_inverse_norm(family, &v, &vec![0.0; family.j])?;
        Self::new(v, (2.0 * observed).max(1.0), b3.max(1.0))
    }

    pub fn m(&self) -> usize {
        self.v.len().max(1)
    }
}

fn complement_inverse_norm(family: &AnalyticMatrixFamily, v: &[usize], y: &[f64]) -> Result<f64> {
    let vc = complement(family.size, v)?;
    if vc.is_empty() {
        return Ok(0.0);
    }
    let t = family.eval(y);
    let t1 = linalg::submatrix(&t, &vc, &vc);
    let eig = SymmetricEigen::new(t1).eigenvalues;
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    Ok(if min > 0.0 { 1.0 / min } else { f64::INFINITY })
}

/// The constants `C`, `c` of the Cartan bound, fitted rather than derived.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartanConstants {
    pub log_c_big: f64,
    pub c_small: f64,
}

impl CartanConstants {
    pub const UNIT: Self = CartanConstants {
        log_c_big: 0.0,
        c_small: 1.0,
    };
}

/// `(ln ε^{-1} / (M ln(B2+B3)))^{1/J}`.
pub fn cartan_exponent(pivot: &PivotData, j: usize, epsilon: f64) -> f64 {
    ((1.0 / epsilon).ln() / (pivot.m() as f64 * (pivot.b2 + pivot.b3).ln())).powf(1.0 / j as f64)
}

/// `ln(C δ^J e^{−c u})` with `u` from [`cartan_exponent`].
pub fn cartan_bound_log(family: &AnalyticMatrixFamily, pivot: &PivotData, epsilon: f64, k: CartanConstants) -> f64 {
    k.log_c_big + family.j as f64 * family.delta.ln() - k.c_small * cartan_exponent(pivot, family.j, epsilon)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CartanFlags {
    /// `ε ≤ (1+B1+B2)^{−10M}`.
    pub epsilon_small: bool,
    /// `‖(T|_{V^c})^{-1}‖ ≤ B2` at every sampled point checked.
    pub complement_bounded: bool,
    /// Sampled measure of `{‖T^{-1}‖ ≥ B3}` on `[−δ,δ]^J`.
    pub large_inverse_measure: f64,
    pub large_inverse_allowed: f64,
    pub large_inverse_rare: bool,
    pub cauchy: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CartanRecord {
    pub epsilon: f64,
    /// Lebesgue measure of `{y ∈ [−δ/2, δ/2]^J : ‖T^{-1}(y)‖ ≥ ε^{-1}}`.
    pub empirical: MeasureEstimate,
    pub bound_log: f64,
    pub pass: bool,
    pub flags: CartanFlags,
}

/// Sample the bad set of the family and compare with the Cartan bound.
/// The lemma's hypotheses are reported as flags, not enforced, so that
/// desk-scale families outside their range can still be measured.
pub fn cartan_bad_measure(
    family: &AnalyticMatrixFamily,
    pivot: &PivotData,
    epsilon: f64,
    constants: CartanConstants,
    samples: u64,
    seed: u64,
) -> Result<CartanRecord> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::input("epsilon must lie in (0, 1)"));
    }
    let j = family.j;
    let vol = family.delta.powi(j as i32);
    let threshold = 1.0 / epsilon;
    let frac = estimate_measure(
        j,
        |u| {
            let y: Vec<f64> = u.iter().map(|t| (t - 0.5) * family.delta).collect();
            family.inverse_norm(&y) >= threshold
        },
        samples,
        seed,
        SamplingMethod::MonteCarlo,
    )?;
    let empirical = MeasureEstimate {
        value: frac.value * vol,
        half_width: frac.half_width * vol,
        ..frac
    };
    let flags = cartan_flags(family, pivot, epsilon, samples.min(20_000), seed ^ 0x9e37_79b9)?;
    let bound_log = cartan_bound_log(family, pivot, epsilon, constants);
    Ok(CartanRecord {
        epsilon,
        pass: empirical.value <= bound_log.exp(),
        empirical,
        bound_log,
        flags,
    })
}

fn cartan_flags(
    family: &AnalyticMatrixFamily,
    pivot: &PivotData,
    epsilon: f64,
    samples: u64,
    seed: u64,
) -> Result<CartanFlags> {
    let j = family.j as i32;
    let m = pivot.m() as f64;
    let epsilon_small = epsilon.ln() <= -10.0 * m * (1.0 + family.b1 + pivot.b2).ln();
    let probes = [vec![0.0; family.j], vec![family.delta; family.j], vec![-family.delta; family.j]];
    let mut complement_bounded = true;
    for y in &probes {
        complement_bounded &= complement_inverse_norm(family, &pivot.v, y)? <= pivot.b2;
    }
    let frac = estimate_measure(
        family.j,
        |u| {
            let y: Vec<f64> = u.iter().map(|t| (2.0 * t - 1.0) * family.delta).collect();
            family.inverse_norm(&y) >= pivot.b3
        },
        samples,
        seed,
        SamplingMethod::MonteCarlo,
    )?;
    let large_inverse_measure = frac.value * (2.0 * family.delta).powi(j);
    let large_inverse_allowed = (1e-3 / family.j as f64 * family.delta / ((1.0 + family.b1) * (1.0 + pivot.b2))).powi(j);
    let (deriv, cauchy_bound) = family.cauchy_check();
    Ok(CartanFlags {
        epsilon_small,
        complement_bounded,
        large_inverse_measure,
        large_inverse_allowed,
        large_inverse_rare: large_inverse_measure <= large_inverse_allowed,
        cauchy: deriv <= cauchy_bound,
    })
}

/// Fit `C`, `c` so that `ln C − c u_i` dominates `ln(upper_i / δ^J)` on a
/// ladder: `c` is the least-squares decay slope (at least 0), `ln C` the
/// smallest intercept covering every point.
pub fn calibrate_cartan(family: &AnalyticMatrixFamily, pivot: &PivotData, records: &[CartanRecord]) -> CartanConstants {
    let vol_log = family.j as f64 * family.delta.ln();
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.empirical.upper() > 0.0)
        .map(|r| (cartan_exponent(pivot, family.j, r.epsilon), r.empirical.upper().ln() - vol_log))
        .collect();
    let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let c_small = linalg::linear_fit(&xs, &ys).map(|(s, _, _)| (-s).max(0.0)).unwrap_or(0.0);
    let log_c_big = pts.iter().map(|(u, y)| y + c_small * u).fold(f64::NEG_INFINITY, f64::max);
    CartanConstants {
        log_c_big: if log_c_big.is_finite() { log_c_big } else { 0.0 },
        c_small,
    }
}

/// Spearman rank correlation, average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut k = i;
            while k + 1 < idx.len() && v[idx[k + 1]] == v[idx[i]] {
                k += 1;
            }
            let avg = (i + k) as f64 / 2.0;
            for &t in &idx[i..=k] {
                r[t] = avg;
            }
            i = k + 1;
        }
        r
    }
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}
