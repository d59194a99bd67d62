//! The large-coupling first step: sublevel sets `{|v − E| < δ}`, the shifted
//! bad set `X_N`, sectionwise measure fits and Neumann-series bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::compute_greens;
use crate::lattice::{sup_dist_raw, IBox, PointSet};
use crate::linalg;
use crate::model::{shift_raw, BlockStructure, Frequency, ModelConfig, Phase, TrigPotential};
use crate::sampling::{estimate_measure, MeasureEstimate, SamplingMethod};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SublevelSpec {
    pub potential: TrigPotential,
    pub energy: f64,
    pub delta: f64,
}

impl SublevelSpec {
    pub fn new(potential: TrigPotential, energy: f64, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() || !energy.is_finite() {
            return Err(Error::input("sublevel set needs finite E and delta >= 0"));
        }
        Ok(SublevelSpec {
            potential,
            energy,
            delta,
        })
    }

    /// `|v(x) − E| < δ`.
    pub fn contains(&self, x: &[f64]) -> bool {
        (self.potential.eval(x) - self.energy).abs() < self.delta
    }
}

/// Whether `x + nω ∈ X` for some `|n| ≤ N`.
pub fn in_bad_set(
    spec: &SublevelSpec,
    x: &Phase,
    n: u64,
    omega: &Frequency,
    blocks: &BlockStructure,
) -> Result<bool> {
    check_phase(spec, x, omega, blocks)?;
    let cube = IBox::cube(&vec![0; blocks.d()], n);
    Ok(cube
        .points()
        .iter()
        .any(|k| spec.contains(&shift_raw(&x.0, &omega.0, k, blocks).0)))
}

fn check_phase(spec: &SublevelSpec, x: &Phase, omega: &Frequency, blocks: &BlockStructure) -> Result<()> {
    let b = blocks.b();
    if spec.potential.dim() != b || x.0.len() != b || omega.0.len() != b {
        return Err(Error::DimensionMismatch {
            expected: b,
            got: x.0.len(),
        });
    }
    Ok(())
}

/// `mes{θ ∈ T^{b_j} : |v(x) − E| < δ}` with `x` assembled from `θ` and the
/// section.
pub fn section_measure(
    spec: &SublevelSpec,
    blocks: &BlockStructure,
    j: usize,
    section: &[f64],
    method: SamplingMethod,
    samples: u64,
    seed: u64,
) -> Result<MeasureEstimate> {
    if j >= blocks.d() {
        return Err(Error::input(format!("block index {j} out of range")));
    }
    let bj = blocks.sizes()[j];
    if section.len() != blocks.b() - bj {
        return Err(Error::DimensionMismatch {
            expected: blocks.b() - bj,
            got: section.len(),
        });
    }
    if spec.delta == 0.0 {
        return Ok(MeasureEstimate {
            value: 0.0,
            half_width: 0.0,
            samples: 0,
            method,
            seed,
        });
    }
    let method = if bj > 2 && method == SamplingMethod::Quadrature {
        SamplingMethod::MonteCarlo
    } else {
        method
    };
    estimate_measure(
        bj,
        |th| spec.contains(&Phase::from_section(blocks, j, th, section).0),
        samples,
        seed,
        method,
    )
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LojasiewiczFit {
    pub exponent_a: f64,
    pub constant_c: f64,
    /// RMS residual of the log-log fit.
    pub residual: f64,
    /// `(δ, sup over sampled sections of the measure)`.
    pub points: Vec<(f64, f64)>,
    pub sections_sampled: usize,
}

/// Fit `sup_{sections} mes X(x_j^¬) ≈ C δ^a` by least squares in log-log.
pub fn lojasiewicz_fit(
    potential: &TrigPotential,
    energy: f64,
    blocks: &BlockStructure,
    deltas: &[f64],
    sections: &[(usize, Vec<f64>)],
    method: SamplingMethod,
    samples: u64,
    seed: u64,
) -> Result<LojasiewiczFit> {
    let (lo, hi) = deltas
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    if !(lo > 0.0) || hi / lo < 100.0 {
        return Err(Error::input("delta grid must be positive and span at least two decades"));
    }
    if sections.is_empty() {
        return Err(Error::input("at least one section is needed"));
    }
    let mut points = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let spec = SublevelSpec::new(potential.clone(), energy, delta)?;
        let mut sup = 0.0f64;
        for (j, sec) in sections {
            sup = sup.max(section_measure(&spec, blocks, *j, sec, method, samples, seed)?.value);
        }
        points.push((delta, sup));
    }
    if let Some((d, _)) = points.iter().find(|p| p.1 <= 0.0) {
        return Err(Error::input(format!("degenerate fit: zero measure at delta = {d:e}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (a, c, residual) =
        linalg::linear_fit(&xs, &ys).ok_or_else(|| Error::input("degenerate fit"))?;
    if !(a > 0.0) {
        return Err(Error::input(format!("fitted exponent {a} is not positive")));
    }
    Ok(LojasiewiczFit {
        exponent_a: a,
        constant_c: c.exp(),
        residual,
        points,
        sections_sampled: sections.len(),
    })
}

/// `min_{n ∈ Q} |v(x+nω) − E|`.
fn min_potential_gap(cfg: &ModelConfig, region: &PointSet, x: &Phase, e: f64) -> f64 {
    region
        .iter()
        .map(|n| (cfg.potential_at(x, n.coords()) - e).abs())
        .fold(f64::INFINITY, f64::min)
}

fn neumann_preconditions(cfg: &ModelConfig, region: &PointSet, x: &Phase, e: f64, delta: f64) -> Result<()> {
    if !(delta > 0.0) {
        return Err(Error::input("delta must be positive"));
    }
    let gap = min_potential_gap(cfg, region, x, e);
    if gap < delta {
        return Err(Error::hypothesis(
            "x not in X_N",
            format!("min |v(x+nω) − E| = {gap:.3e} < δ = {delta}"),
        ));
    }
    if cfg.kernel.amplitude() > 1.0 + 1e-12 {
        return Err(Error::hypothesis(
            "kernel decay",
            format!("|S(k)| e^(ρ|k|) reaches {:.3} > 1", cfg.kernel.amplitude()),
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeumannReport {
    pub size: u64,
    pub norm: f64,
    /// `2/δ`.
    pub bound: f64,
    /// `max |G(n,n')| e^{ρ|n−n'|} / (2/δ)`.
    pub decay_ratio: f64,
    pub decay_ok: bool,
    pub lambda_ok: bool,
    pub min_gap: f64,
}

/// Verify `‖G_Q‖ ≤ 2δ^{-1}` and `|G_Q(n,n')| ≤ 2δ^{-1}e^{−ρ|n−n'|}` for a
/// region of size `N` once `x ∉ X_N` and `λ ≥ 2δ^{-1}(2N+1)^d`.
pub fn neumann_bound_check(
    cfg: &ModelConfig,
    region: &PointSet,
    size: u64,
    e: f64,
    x: &Phase,
    delta: f64,
) -> Result<NeumannReport> {
    neumann_preconditions(cfg, region, x, e, delta)?;
    let d = cfg.d() as i32;
    let need = 2.0 / delta * ((2 * size + 1) as f64).powi(d);
    if cfg.lambda < need {
        return Err(Error::hypothesis(
            "lambda",
            format!("λ = {} < 2δ^-1 (2N+1)^d = {need}", cfg.lambda),
        ));
    }
    if region.diameter() > 2 * size {
        return Err(Error::input("region is larger than its stated size"));
    }
    let g = compute_greens(cfg, region, e, x)?;
    let bound = 2.0 / delta;
    let norm = g.norm();
    let rho = cfg.kernel.rho();
    let pts = region.points();
    let mut decay_ratio = 0.0f64;
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let r = sup_dist_raw(pts[i].coords(), pts[j].coords()) as f64;
            decay_ratio = decay_ratio.max(g.entries[(i, j)].abs() * (rho * r).exp() / bound);
        }
    }
    let tol = 1.0 + 1e-12;
    if norm > bound * tol {
        return Err(Error::InvariantViolation(format!("‖G‖ = {norm:.6e} > 2/δ = {bound}")));
    }
    if decay_ratio > tol {
        return Err(Error::InvariantViolation(format!(
            "off-diagonal decay exceeds 2δ^-1 e^(-ρr) by a factor {decay_ratio:.6}"
        )));
    }
    Ok(NeumannReport {
        size,
        norm,
        bound,
        decay_ratio,
        decay_ok: true,
        lambda_ok: true,
        min_gap: min_potential_gap(cfg, region, x, e),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeumannSeries {
    /// `max(row, column)` Schur bound of `AB^{-1}`.
    pub contraction: f64,
    /// Max-entry residual after `0..=terms` terms.
    pub residuals: Vec<f64>,
    /// Contract `2δ^{-1} 2^{-terms} + 1e−10`.
    pub allowed: f64,
}

impl NeumannSeries {
    pub fn residual(&self) -> f64 {
        *self.residuals.last().expect("at least one partial sum")
    }
}

/// Compare `B^{-1} Σ_{s ≤ terms} (−AB^{-1})^s` with the direct inverse, where
/// `B = diag(v(x+nω) − E)` and `A = λ^{-1} R S R`.
pub fn neumann_series_compare(
    cfg: &ModelConfig,
    region: &PointSet,
    e: f64,
    x: &Phase,
    delta: f64,
    terms: usize,
) -> Result<NeumannSeries> {
    neumann_preconditions(cfg, region, x, e, delta)?;
    let m = crate::model::assemble_restricted(cfg, region, x, e)?;
    let n = m.nrows();
    let diag: Vec<f64> = region
        .iter()
        .map(|p| cfg.potential_at(x, p.coords()) - e)
        .collect();
    let b_inv = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, diag.iter().map(|v| 1.0 / v)));
    let mut a = m.clone();
    for i in 0..n {
        a[(i, i)] -= diag[i];
    }
    let ab = &a * &b_inv;
    let contraction = linalg::schur_test_bound(&ab).max(linalg::norm_one(&ab));
    if contraction > 0.5 {
        return Err(Error::hypothesis(
            "contraction",
            format!("Schur bound of AB^-1 is {contraction:.4} > 1/2"),
        ));
    }
    let direct = linalg::checked_inverse(&m, true)?.matrix;
    let step = -ab;
    let mut term = b_inv.clone();
    let mut partial = b_inv;
    let mut residuals = vec![linalg::max_abs_diff(&partial, &direct)];
    for _ in 0..terms {
        term = &term * &step;
        partial += &term;
        residuals.push(linalg::max_abs_diff(&partial, &direct));
    }
    let allowed = 2.0 / delta * 0.5f64.powi(terms as i32) + 1e-10;
    Ok(NeumannSeries {
        contraction,
        residuals,
        allowed,
    })
}
