//! Resolvent-identity gluing: the exact identity, the norm-pasting bound for
//! window covers, and off-diagonal decay propagation.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::greens::{compute_greens, decay_scan, goodness_with, DecayViolation, GoodnessConstants};
use crate::lattice::{find_window, sup_dist_raw, ElementaryRegion, LatticePoint, PointSet};
use crate::linalg;
use crate::model::{assemble_restricted, KernelFamily, ModelConfig, Phase};

/// `max |G_Λ − (G_1 ⊕ G_2) + (G_1 ⊕ G_2) Γ G_Λ|` where `Γ = λ^{-1}(H_Λ − H_{Λ1} − H_{Λ2})`.
pub fn resolvent_residual(
    cfg: &ModelConfig,
    l1: &PointSet,
    l2: &PointSet,
    e: f64,
    x: &Phase,
) -> Result<f64> {
    if !l1.is_disjoint(l2) {
        return Err(Error::input("resolvent identity needs disjoint regions"));
    }
    let whole = l1.union(l2);
    let m = assemble_restricted(cfg, &whole, x, e)?;
    let g = linalg::checked_inverse(&m, true)?.matrix;
    let n = whole.len();
    let idx1: Vec<usize> = l1.iter().map(|p| whole.index_of(p).unwrap()).collect();
    let idx2: Vec<usize> = l2.iter().map(|p| whole.index_of(p).unwrap()).collect();
    let g1 = linalg::checked_inverse(&assemble_restricted(cfg, l1, x, e)?, true)?.matrix;
    let g2 = linalg::checked_inverse(&assemble_restricted(cfg, l2, x, e)?, true)?.matrix;
    let mut g12 = DMatrix::<f64>::zeros(n, n);
    let mut gamma = m.clone();
    for (a, &i) in idx1.iter().enumerate() {
        for (b, &j) in idx1.iter().enumerate() {
            g12[(i, j)] = g1[(a, b)];
            gamma[(i, j)] = 0.0;
        }
    }
    for (a, &i) in idx2.iter().enumerate() {
        for (b, &j) in idx2.iter().enumerate() {
            g12[(i, j)] = g2[(a, b)];
            gamma[(i, j)] = 0.0;
        }
    }
    let rhs = &g12 - &g12 * &gamma * &g;
    Ok(linalg::max_abs_diff(&g, &rhs))
}

/// `Σ_{j≥0} (2j+1)^d e^{−ρj/2}`, summed until past the peak and below 1e−18.
pub fn ml_tail_sum(rho: f64, d: usize) -> f64 {
    let peak = 2.0 * d as f64 / rho;
    let mut sum = 0.0;
    let mut j = 0u64;
    loop {
        let term = ((2 * j + 1) as f64).powi(d as i32) * (-rho * j as f64 / 2.0).exp();
        sum += term;
        if j as f64 > peak && term < 1e-18 {
            return sum;
        }
        j += 1;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PasteBound {
    /// `ln(4 (2M1+1)^d e^{√M1})`.
    pub bound_log: f64,
    /// Supremum over `M ∈ [M0, M1]` of the (ml) expression.
    pub ml_margin: f64,
    pub ml_margin_log: f64,
    /// The `M` attaining the supremum.
    pub worst_m: u64,
    pub feasible: bool,
}

/// Evaluate `sup_M 2λ^{-1} e^{√M} (2M+1)^d e^{−3ρM/20} Σ_j (2j+1)^d e^{−ρj/2} ≤ 1/2`.
pub fn ml_condition(m0: u64, m1: u64, lambda: f64, rho: f64, d: usize) -> Result<PasteBound> {
    if m0 > m1 || m0 == 0 {
        return Err(Error::input("ml condition needs 1 <= M0 <= M1"));
    }
    if !(rho > 0.0) || !(lambda > 1.0) {
        return Err(Error::input("ml condition needs rho > 0 and lambda > 1"));
    }
    let tail_log = ml_tail_sum(rho, d).ln();
    let (worst_m, ml_log) = (m0..=m1)
        .map(|m| {
            let mf = m as f64;
            let l = 2f64.ln() - lambda.ln() + mf.sqrt() + d as f64 * (2.0 * mf + 1.0).ln()
                - 0.15 * rho * mf
                + tail_log;
            (m, l)
        })
        .fold((m0, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
    let m1f = m1 as f64;
    Ok(PasteBound {
        bound_log: 4f64.ln() + d as f64 * (2.0 * m1f + 1.0).ln() + m1f.sqrt(),
        ml_margin: ml_log.exp(),
        ml_margin_log: ml_log,
        worst_m,
        feasible: ml_log <= 0.5f64.ln(),
    })
}

/// A window `W(k)` for every point `k` of a domain.
#[derive(Clone, Debug)]
pub struct WindowCover {
    pub domain: PointSet,
    /// Aligned with `domain.points()`.
    pub windows: Vec<ElementaryRegion>,
}

impl WindowCover {
    /// Cover by the first window [`find_window`] returns for each point.
    pub fn by_search(domain: &PointSet, m: u64) -> Result<Self> {
        let windows: Vec<Option<ElementaryRegion>> =
            domain.points().par_iter().map(|k| find_window(k, domain, m)).collect();
        let mut out = Vec::with_capacity(windows.len());
        for (k, w) in domain.iter().zip(windows) {
            out.push(w.ok_or_else(|| {
                Error::hypothesis("window", format!("no window of size {m} for {k}"))
            })?);
        }
        Ok(WindowCover {
            domain: domain.clone(),
            windows: out,
        })
    }

    pub fn min_size(&self) -> u64 {
        self.windows.iter().map(|w| w.size).min().unwrap_or(0)
    }

    pub fn max_size(&self) -> u64 {
        self.windows.iter().map(|w| w.size).max().unwrap_or(0)
    }

    /// Check `k ∈ W(k) ⊆ domain` and `dist(k, domain∖W(k)) ≥ M/2` by
    /// exhaustive scans; the error names the first offending point.
    pub fn validate(&self) -> Result<()> {
        if self.windows.len() != self.domain.len() {
            return Err(Error::input("cover must list one window per domain point"));
        }
        for (k, w) in self.domain.iter().zip(&self.windows) {
            let pts = w.points();
            if !pts.contains(k) {
                return Err(Error::hypothesis("window", format!("{k} is not in its window")));
            }
            if !pts.is_subset_of(&self.domain) {
                return Err(Error::hypothesis(
                    "window",
                    format!("window of {k} leaves the domain"),
                ));
            }
            if let Some(q) = self
                .domain
                .iter()
                .find(|q| !pts.contains(q) && 2 * sup_dist_raw(q.coords(), k.coords()) < w.size)
            {
                return Err(Error::hypothesis(
                    "window",
                    format!("dist({k}, domain \\ W) < M/2 = {}: {q} is outside W", w.size as f64 / 2.0),
                ));
            }
        }
        Ok(())
    }
}

/// Check every distinct window of `cover` for goodness at its own size.
fn verify_windows(
    cfg: &ModelConfig,
    cover: &WindowCover,
    e: f64,
    x: &Phase,
    rho_bar: f64,
    constants: GoodnessConstants,
) -> Result<usize> {
    let mut distinct: HashMap<&ElementaryRegion, &LatticePoint> = HashMap::new();
    for (k, w) in cover.domain.iter().zip(&cover.windows) {
        distinct.entry(w).or_insert(k);
    }
    let mut list: Vec<(&ElementaryRegion, &LatticePoint)> = distinct.into_iter().collect();
    list.sort_by(|a, b| a.1.cmp(b.1));
    let results: Vec<Result<()>> = list
        .par_iter()
        .map(|(w, k)| {
            let g = compute_greens(cfg, &w.points(), e, x).map_err(|err| {
                Error::hypothesis("window goodness", format!("window of {k}: {err}"))
            })?;
            let rep = goodness_with(&g, w.size, rho_bar, constants)?;
            if rep.pass {
                Ok(())
            } else {
                Err(Error::hypothesis(
                    "window goodness",
                    format!(
                        "window of {k} (size {}): norm {:.3e} vs {:.3e}, {} decay violations",
                        w.size, rep.norm, rep.norm_bound, rep.violation_count
                    ),
                ))
            }
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(list.len())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PasteReport {
    pub bound_log: f64,
    pub empirical_norm: f64,
    pub certified: bool,
    pub ml: PasteBound,
    /// Whether `M0 ≥ (ln N)^2` holds; informational at desk scale.
    pub m0_log_condition: bool,
    pub windows_checked: usize,
}

fn half_diameter_scale(region: &PointSet) -> u64 {
    // smallest N with diam ≤ 2N + 1
    region.diameter().saturating_sub(1).div_ceil(2).max(1)
}

/// Certify `‖G_Λ‖ ≤ 4 (2M1+1)^d e^{√M1}` from a cover by windows that are
/// good with doubled constants, and compare with the direct norm.
pub fn paste_norm(
    cfg: &ModelConfig,
    region: &PointSet,
    e: f64,
    x: &Phase,
    cover: &WindowCover,
    rho_bar: f64,
) -> Result<PasteReport> {
    let rho = cfg.kernel.rho();
    if cover.domain != *region {
        return Err(Error::input("cover domain differs from the region"));
    }
    if rho_bar < rho / 2.0 || rho_bar > rho {
        return Err(Error::hypothesis("rho_bar", format!("{rho_bar} outside [ρ/2, ρ] = [{}, {rho}]", rho / 2.0)));
    }
    cover.validate()?;
    let (m0, m1) = (cover.min_size(), cover.max_size());
    let n = half_diameter_scale(region).max(m1);
    let ml = ml_condition(m0, m1, cfg.lambda, rho, cfg.d())?;
    if !ml.feasible {
        return Err(Error::hypothesis(
            "ml",
            format!("sup over M of the pasting series is {:.3e} > 1/2 (at M = {})", ml.ml_margin, ml.worst_m),
        ));
    }
    let windows_checked = verify_windows(cfg, cover, e, x, rho_bar, GoodnessConstants::DOUBLED)?;
    let g = compute_greens(cfg, region, e, x)?;
    let empirical_norm = g.norm();
    if empirical_norm.ln() > ml.bound_log + 1e-12 {
        return Err(Error::InvariantViolation(format!(
            "‖G_Λ‖ = {empirical_norm:.6e} exceeds the certified {:.6e}",
            ml.bound_log.exp()
        )));
    }
    Ok(PasteReport {
        bound_log: ml.bound_log,
        empirical_norm,
        certified: true,
        m0_log_condition: m0 as f64 >= (n as f64).ln().powi(2),
        ml,
        windows_checked,
    })
}

/// Inputs of [`propagate_decay`].
#[derive(Clone, Debug)]
pub struct DecayProblem<'a> {
    pub region: &'a PointSet,
    /// `Λ1`, the set the windows avoid.
    pub excluded: &'a PointSet,
    /// Windows for every point of `Λ ∖ Λ1`.
    pub cover: &'a WindowCover,
    pub m0: u64,
    /// Rate the windows are good with.
    pub rho_bar: f64,
    pub degrade_constant: f64,
    /// Allowed `diam(Λ1)`; `None` means `N^{1/(2d)}`.
    pub excluded_diam_limit: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DecayReport {
    pub scale: u64,
    pub effective_rate: f64,
    pub norm: f64,
    pub pairs_checked: usize,
    pub violations: Vec<DecayViolation>,
    pub violation_count: usize,
    /// Smallest degrade constant that would have produced no violation.
    pub required_constant: f64,
    pub m0_log_condition: bool,
}

/// Check `|G_Λ(n,n')| ≤ e^{−(ρ̄ − c/√M0)|n−n'|}` for `|n−n'| ≥ N/10` after
/// verifying the hypotheses of the decay-propagation theorem.
pub fn propagate_decay(cfg: &ModelConfig, e: f64, x: &Phase, p: &DecayProblem) -> Result<DecayReport> {
    let rho = cfg.kernel.rho();
    let d = cfg.d();
    let n = half_diameter_scale(p.region);
    if !p.excluded.is_subset_of(p.region) {
        return Err(Error::input("excluded set must lie inside the region"));
    }
    if p.rho_bar < rho / 2.0 - 1e-12 || p.rho_bar > 0.8 * rho + 1e-12 {
        return Err(Error::hypothesis(
            "rho_bar",
            format!("{} outside [ρ/2, 4ρ/5] = [{}, {}]", p.rho_bar, rho / 2.0, 0.8 * rho),
        ));
    }
    let limit = p
        .excluded_diam_limit
        .unwrap_or_else(|| (n as f64).powf(1.0 / (2.0 * d as f64)));
    if !p.excluded.is_empty() && p.excluded.diameter() as f64 > limit {
        return Err(Error::hypothesis(
            "excluded diameter",
            format!("diam(Λ1) = {} > {limit:.3}", p.excluded.diameter()),
        ));
    }
    let rest = p.region.difference(p.excluded);
    if p.cover.domain != rest {
        return Err(Error::input("cover must be indexed by Λ \\ Λ1"));
    }
    p.cover.validate()?;
    if p.cover.min_size() < p.m0 {
        return Err(Error::hypothesis(
            "window size",
            format!("a window has size {} < M0 = {}", p.cover.min_size(), p.m0),
        ));
    }
    verify_windows(cfg, p.cover, e, x, p.rho_bar, GoodnessConstants::STRICT)?;
    let g = compute_greens(cfg, p.region, e, x)?;
    let norm = g.norm();
    if norm.ln() > (n as f64).sqrt() {
        return Err(Error::hypothesis(
            "norm",
            format!("‖G_Λ‖ = {norm:.3e} > e^√N = {:.3e}", (n as f64).sqrt().exp()),
        ));
    }
    let effective_rate = p.rho_bar - p.degrade_constant / (p.m0 as f64).sqrt();
    let far = |a: &[i64], b: &[i64]| 10 * sup_dist_raw(a, b) >= n;
    let (violations, count, _) = decay_scan(&g, effective_rate, 0.0, far);
    let (pairs, worst) = worst_rate_deficit(&g, n, p.rho_bar);
    Ok(DecayReport {
        scale: n,
        effective_rate,
        norm,
        pairs_checked: pairs,
        violations,
        violation_count: count,
        required_constant: worst * (p.m0 as f64).sqrt(),
        m0_log_condition: p.m0 as f64 >= (n as f64).ln().powi(2),
    })
}

/// `max(0, max_{pairs} ρ̄ − (−ln|G(n,n')|/|n−n'|))` over `|n−n'| ≥ N/10`.
fn worst_rate_deficit(g: &crate::greens::GreensMatrix, n: u64, rho_bar: f64) -> (usize, f64) {
    let pts = g.region.points();
    let mut pairs = 0;
    let mut worst: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let r = sup_dist_raw(pts[i].coords(), pts[j].coords());
            if 10 * r < n || r == 0 {
                continue;
            }
            pairs += 1;
            let v = g.entries[(i, j)].abs();
            if v > 0.0 {
                worst = worst.max(rho_bar + v.ln() / r as f64);
            }
        }
    }
    (pairs, worst)
}

/// Committed calibration table for the decay-propagation constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeCalibration {
    pub version: u32,
    pub description: String,
    pub constants: Vec<DegradeEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradeEntry {
    pub family: KernelFamily,
    pub rho: f64,
    pub constant: f64,
    /// Largest constant any accepted sweep instance required.
    pub max_required: f64,
    pub instances: usize,
    pub safety_factor: f64,
}

const CALIBRATION_JSON: &str = include_str!("../data/degrade_calibration.json");

pub fn calibration_table() -> DegradeCalibration {
    serde_json::from_str(CALIBRATION_JSON).expect("committed calibration table parses")
}

/// Calibrated degrade constant for a kernel family.
pub fn default_degrade_constant(family: KernelFamily) -> Option<f64> {
    calibration_table()
        .constants
        .iter()
        .find(|c| c.family == family)
        .map(|c| c.constant)
}

/// One instance of the calibration sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub lambda: f64,
    pub energy: f64,
    pub phase: f64,
    pub accepted: bool,
    pub required_constant: Option<f64>,
    pub reason: Option<String>,
}

/// Sweep `λ × E × x` on `[−N, N]` (d = 1) with cube windows of size `m0`
/// and record the constant each instance requires. Instances whose
/// hypotheses fail are kept with the reason and excluded from the maximum.
pub fn calibration_sweep(
    cfg: &ModelConfig,
    n: u64,
    m0: u64,
    rho_bar: f64,
    lambdas: &[f64],
    energies: &[f64],
    phases: &[f64],
) -> Result<Vec<CalibrationSample>> {
    if cfg.d() != 1 || cfg.b() != 1 {
        return Err(Error::input("calibration sweep runs on d = b = 1 models"));
    }
    let region = PointSet::interval(-(n as i64), n as i64);
    let cover = WindowCover::by_search(&region, m0)?;
    let empty = PointSet::empty(1);
    let mut jobs = Vec::new();
    for &l in lambdas {
        for &e in energies {
            for &x in phases {
                jobs.push((l, e, x));
            }
        }
    }
    let out = jobs
        .par_iter()
        .map(|&(l, e, x)| {
            let run = || -> Result<DecayReport> {
                let c = cfg.with_lambda(l)?;
                let problem = DecayProblem {
                    region: &region,
                    excluded: &empty,
                    cover: &cover,
                    m0,
                    rho_bar,
                    degrade_constant: 0.0,
                    excluded_diam_limit: None,
                };
                propagate_decay(&c, e, &Phase::new(vec![x]), &problem)
            };
            match run() {
                Ok(rep) => CalibrationSample {
                    lambda: l,
                    energy: e,
                    phase: x,
                    accepted: true,
                    required_constant: Some(rep.required_constant),
                    reason: None,
                },
                Err(err) => CalibrationSample {
                    lambda: l,
                    energy: e,
                    phase: x,
                    accepted: false,
                    required_constant: None,
                    reason: Some(err.to_string()),
                },
            }
        })
        .collect();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockStructure, Frequency, ToeplitzKernel, TrigPotential, GOLDEN_MEAN};

    fn cfg(kernel: ToeplitzKernel, lambda: f64) -> ModelConfig {
        ModelConfig::new(
            kernel,
            TrigPotential::cosine(),
            BlockStructure::scalar(1),
            lambda,
            Frequency::new(vec![GOLDEN_MEAN]),
        )
        .unwrap()
    }

    #[test]
    fn tail_sum_closed_form() {
        // Σ (2j+1) q^j = (1+q)/(1−q)^2
        for rho in [0.5, 1.0, 3.0] {
            let q: f64 = (-rho / 2.0f64).exp();
            let want = (1.0 + q) / (1.0 - q).powi(2);
            assert!((ml_tail_sum(rho, 1) - want).abs() < 1e-12 * want);
        }
        // Σ (2j+1)^2 q^j = (1 + 6q + q^2)/(1−q)^3
        let q: f64 = (-0.5f64).exp();
        let want = (1.0 + 6.0 * q + q * q) / (1.0 - q).powi(3);
        assert!((ml_tail_sum(1.0, 2) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn ml_examples() {
        let big = ml_condition(400, 400, 10.0, 1.0, 1).unwrap();
        assert!(big.feasible);
        let small = ml_condition(4, 4, 10.0, 1.0, 1).unwrap();
        assert!(!small.feasible);
        // 2/10 · e^2 · 9 · e^{−0.6} · 10.375...
        let q: f64 = (-0.5f64).exp();
        let want = 0.2 * 2f64.exp() * 9.0 * (-0.6f64).exp() * (1.0 + q) / (1.0 - q).powi(2);
        assert!((small.ml_margin - want).abs() < 1e-10 * want);
        assert!(ml_condition(4, 4, 1e9, 1.0, 1).unwrap().feasible);
        let b = ml_condition(5, 5, 220.0, 3.0, 1).unwrap();
        assert!((b.bound_log - (4.0 * 11.0 * 5f64.sqrt().exp()).ln()).abs() < 1e-12);
    }

    #[test]
    fn decoupled_residual_is_zero() {
        let c = cfg(ToeplitzKernel::zero(1), 3.0);
        let r = resolvent_residual(&c, &PointSet::interval(-5, 0), &PointSet::interval(1, 5), 0.3, &Phase::new(vec![0.1]))
            .unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn coupled_residual_is_small() {
        for lambda in [2.0, 50.0, 1e6] {
            let c = cfg(ToeplitzKernel::exp_decay(1, 1.0).unwrap(), lambda);
            let r = resolvent_residual(&c, &PointSet::interval(-5, 0), &PointSet::interval(1, 5), 0.37, &Phase::new(vec![0.29]))
                .unwrap();
            assert!(r < 1e-8, "λ={lambda}: {r}");
        }
    }

    #[test]
    fn overlapping_split_is_rejected() {
        let c = cfg(ToeplitzKernel::zero(1), 3.0);
        assert!(resolvent_residual(&c, &PointSet::interval(0, 3), &PointSet::interval(3, 5), 0.0, &Phase::zero(1)).is_err());
    }

    #[test]
    fn bad_cover_names_the_point() {
        let region = PointSet::interval(-10, 10);
        let mut cover = WindowCover::by_search(&region, 4).unwrap();
        cover.validate().unwrap();
        // a window that puts its own point on the edge
        cover.windows[10] = ElementaryRegion::cube(LatticePoint::new(vec![4]), 4);
        let err = cover.validate().unwrap_err();
        assert!(err.to_string().contains("(0)"), "{err}");
        let c = cfg(ToeplitzKernel::exp_decay(1, 3.0).unwrap(), 220.0);
        let err = paste_norm(&c, &region, 1.3, &Phase::new(vec![0.2]), &cover, 2.0).unwrap_err();
        assert!(matches!(err, Error::Hypothesis { .. }));
    }

    #[test]
    fn decoupled_paste_and_decay() {
        let c = cfg(ToeplitzKernel::zero(1), 1e3);
        let region = PointSet::interval(-8, 8);
        let cover = WindowCover::by_search(&region, 1).unwrap();
        let x = Phase::new(vec![0.2]);
        let rep = paste_norm(&c, &region, 2.5, &x, &cover, 0.75).unwrap();
        assert!(rep.certified && rep.empirical_norm.ln() <= rep.bound_log);
        let empty = PointSet::empty(1);
        let p = DecayProblem {
            region: &region,
            excluded: &empty,
            cover: &cover,
            m0: 1,
            rho_bar: 0.6,
            degrade_constant: 0.0,
            excluded_diam_limit: None,
        };
        let d = propagate_decay(&c, 2.5, &x, &p).unwrap();
        assert_eq!(d.violation_count, 0);
        assert_eq!(d.required_constant, 0.0);
    }

    #[test]
    fn calibration_table_is_loadable() {
        let t = calibration_table();
        assert!(t.version >= 1);
        for e in &t.constants {
            assert!(e.constant >= e.max_required);
        }
    }
}
