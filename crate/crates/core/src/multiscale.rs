//! Orbit hit counts and an executable small-scale run of one induction step:
//! region adjustment, window goodness, the Cartan-shape measure, decay
//! propagation and norm pasting, with a stage-by-stage trace.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cartan::{cartan_bad_measure, AnalyticMatrixFamily, CartanConstants, PivotData};
use crate::error::{Error, Result};
use crate::gluing::{paste_norm, propagate_decay, DecayProblem, WindowCover};
use crate::greens::{compute_greens, goodness};
use crate::initial::SublevelSpec;
use crate::lattice::{
    adjust_region_with_floor, check_region_pair, inner_scale, scale_root, ElementaryRegion, IBox,
    LatticePoint, PointSet,
};
use crate::model::{shift_raw, ModelConfig, Phase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HitCount {
    pub count: u64,
    /// `|Λ ∖ Λ̄|`.
    pub cap: u64,
}

/// Number of `k ∈ [−N̄,N̄]^d ∖ [−r,r]^d`, `r = ceil(N̄^{1/(10d)})`, with
/// `x + kω ∈ X_{N1}`.
pub fn hit_count(cfg: &ModelConfig, spec: &SublevelSpec, x: &Phase, n1: u64, n_bar: u64) -> Result<HitCount> {
    let d = cfg.d();
    if x.0.len() != cfg.b() || spec.potential.dim() != cfg.b() {
        return Err(Error::DimensionMismatch {
            expected: cfg.b(),
            got: x.0.len(),
        });
    }
    let r = scale_root(n_bar, d);
    let reach = (n_bar + n1) as i64;
    let side = (2 * reach + 1) as usize;
    // membership of every orbit point x + mω, |m| ≤ N̄ + N1, in X
    let big = IBox::cube(&vec![0; d], n_bar + n1);
    let in_x: Vec<bool> = big
        .points()
        .iter()
        .map(|m| spec.contains(&shift_raw(&x.0, &cfg.omega.0, m, &cfg.blocks).0))
        .collect();
    let index = |m: &[i64]| m.iter().fold(0usize, |acc, &c| acc * side + (c + reach) as usize);
    let inner = IBox::cube(&vec![0; d], r);
    let mut count = 0;
    let mut cap = 0;
    for k in IBox::cube(&vec![0; d], n_bar).points() {
        if inner.contains(&k) {
            continue;
        }
        cap += 1;
        let hit = IBox::cube(&k, n1).points().iter().any(|m| in_x[index(m)]);
        count += hit as u64;
    }
    Ok(HitCount { count, cap })
}

/// Hit counts for every `N̄` in `[lo, hi]` and the fraction with no hit.
pub fn hit_scan(
    cfg: &ModelConfig,
    spec: &SublevelSpec,
    x: &Phase,
    n1: u64,
    lo: u64,
    hi: u64,
) -> Result<(Vec<(u64, HitCount)>, f64)> {
    if lo == 0 || lo > hi {
        return Err(Error::input("scan window must satisfy 1 <= lo <= hi"));
    }
    let rows: Vec<(u64, HitCount)> = (lo..=hi)
        .into_par_iter()
        .map(|nb| hit_count(cfg, spec, x, n1, nb).map(|h| (nb, h)))
        .collect::<Result<_>>()?;
    let zero = rows.iter().filter(|r| r.1.count == 0).count();
    Ok((rows.clone(), zero as f64 / rows.len() as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyMsaParams {
    pub n1: u64,
    pub n: u64,
    /// Window of admissible `N̄`; the smallest hit-free one is used per point.
    pub n_bar_lo: u64,
    pub n_bar_hi: u64,
    /// Sublevel threshold defining `X`.
    pub delta: f64,
    /// Rate the `N1`-windows must be good with.
    pub rho_bar: f64,
    pub degrade_constant: f64,
    /// Half-width of the phase neighbourhood in the Cartan stage; default
    /// `max(e^{−ρN1}, 10^{−4/b_j})`.
    pub sigma: Option<f64>,
    pub cartan_samples: u64,
    /// Exponent of the final measure target `e^{−N^{c1}}`.
    pub c1: f64,
    pub seed: u64,
}

impl ToyMsaParams {
    /// Lower bound on the adjusted sizes: `max(ceil(N̄/4), 2 N1)`.
    pub fn size_floor(&self, n_bar: u64) -> u64 {
        n_bar.div_ceil(4).max(2 * self.n1)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub x: Vec<f64>,
    pub energy: f64,
    pub stage: String,
    pub point: Option<LatticePoint>,
    pub pass: bool,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellSummary {
    pub x: Vec<f64>,
    pub energy: f64,
    pub all_pass: bool,
    pub first_failure: Option<String>,
    /// Direct `‖G_{Q_N}‖`, when the paste stage ran.
    pub glued_norm: Option<f64>,
    pub paste_bound_log: Option<f64>,
    /// Goodness of `G_{Q_N}` at the final rate, whatever the stage outcomes.
    pub final_good: bool,
    pub final_rate: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyMsaReport {
    pub params: ToyMsaParams,
    pub cells: Vec<CellSummary>,
    pub trace: Vec<TraceRecord>,
    /// Fraction of cells whose final goodness failed.
    pub bad_fraction: f64,
    /// `e^{−N^{c1}}`.
    pub target: f64,
}

impl ToyMsaReport {
    /// The trace as JSON lines.
    pub fn trace_jsonl(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace serializes") + "\n")
            .collect()
    }
}

fn error_json(err: &Error) -> serde_json::Value {
    json!({ "error": err.to_string(), "kind": err.kind() })
}

struct Cell<'a> {
    cfg: &'a ModelConfig,
    x: &'a Phase,
    e: f64,
    trace: Vec<TraceRecord>,
    first_failure: Option<String>,
}

impl Cell<'_> {
    fn record(&mut self, stage: &str, point: Option<&LatticePoint>, pass: bool, detail: serde_json::Value) -> bool {
        if !pass && self.first_failure.is_none() {
            self.first_failure = Some(match point {
                Some(n) => format!("{stage} at {n}"),
                None => stage.to_string(),
            });
        }
        self.trace.push(TraceRecord {
            x: self.x.0.clone(),
            energy: self.e,
            stage: stage.to_string(),
            point: point.cloned(),
            pass,
            detail,
        });
        pass
    }
}

/// Output of the per-point stages for one `n ∈ Q_N`.
struct PointResult {
    window: Option<ElementaryRegion>,
    records: Vec<(String, bool, serde_json::Value)>,
}

fn point_stages(cfg: &ModelConfig, p: &ToyMsaParams, q: &ElementaryRegion, x: &Phase, e: f64, n: &LatticePoint) -> PointResult {
    let d = cfg.d();
    let mut records = Vec::new();
    let mut push = |s: &str, ok: bool, v: serde_json::Value| {
        records.push((s.to_string(), ok, v));
        ok
    };
    let fail = |records: Vec<(String, bool, serde_json::Value)>| PointResult { window: None, records };

    // hits: smallest N̄ in the window with x + kω ∉ X_{N1} off the inner cube
    let spec = match SublevelSpec::new(cfg.potential.clone(), e, p.delta) {
        Ok(s) => s,
        Err(err) => {
            push("hits", false, error_json(&err));
            return fail(records);
        }
    };
    let shifted = shift_raw(&x.0, &cfg.omega.0, n.coords(), &cfg.blocks);
    let mut chosen = None;
    for nb in p.n_bar_lo..=p.n_bar_hi {
        match hit_count(cfg, &spec, &shifted, p.n1, nb) {
            Ok(h) if h.count == 0 => {
                chosen = Some(nb);
                break;
            }
            Ok(_) => {}
            Err(err) => {
                push("hits", false, error_json(&err));
                return fail(records);
            }
        }
    }
    let Some(n_bar) = chosen else {
        push("hits", false, json!({ "window": [p.n_bar_lo, p.n_bar_hi] }));
        return fail(records);
    };
    push("hits", true, json!({ "n_bar": n_bar }));

    // geometry
    let floor = p.size_floor(n_bar);
    let adj = match adjust_region_with_floor(n, q, n_bar, p.n1, floor) {
        Ok(a) => a,
        Err(err) => {
            push("geometry", false, error_json(&err));
            return fail(records);
        }
    };
    let violations = check_region_pair(n, q, n_bar, p.n1, &adj);
    let ok = push(
        "geometry",
        violations.is_empty(),
        json!({
            "case": adj.case,
            "size": adj.size,
            "outer": adj.pair.outer.descriptor(),
            "inner_diameter": adj.pair.inner.diameter(),
            "violations": violations,
        }),
    );
    if !ok {
        return fail(records);
    }
    let outer_pts = adj.pair.outer.points();
    let annulus = outer_pts.difference(&adj.pair.inner);

    // window goodness on Λ_new ∖ Λ̄_new
    let cover = match WindowCover::by_search(&annulus, p.n1) {
        Ok(c) => c,
        Err(err) => {
            push("windows", false, error_json(&err));
            return fail(records);
        }
    };
    let mut worst = None;
    let mut distinct: Vec<&ElementaryRegion> = cover.windows.iter().collect();
    distinct.sort_by(|a, b| a.center.cmp(&b.center));
    distinct.dedup();
    for w in &distinct {
        let good = compute_greens(cfg, &w.points(), e, x).and_then(|g| goodness(&g, p.n1, p.rho_bar));
        match good {
            Ok(r) if r.pass => {}
            Ok(r) => {
                worst = Some(json!({ "window": w.center, "norm": r.norm, "violations": r.violation_count }));
                break;
            }
            Err(err) => {
                worst = Some(json!({ "window": w.center, "error": err.to_string(), "kind": err.kind() }));
                break;
            }
        }
    }
    if let Some(v) = worst {
        push("windows", false, v);
        return fail(records);
    }
    push("windows", true, json!({ "windows": distinct.len() }));

    // Cartan shape on the moving phase block
    let bj = cfg.blocks.sizes()[0];
    let sigma = p
        .sigma
        .unwrap_or_else(|| (-cfg.kernel.rho() * p.n1 as f64).exp().max(10f64.powf(-4.0 / bj as f64)));
    let size = adj.size as f64;
    let cartan = (|| -> Result<serde_json::Value> {
        let fam = AnalyticMatrixFamily::restricted_operator(cfg, &outer_pts, x, e, 0, 2.0 * sigma)?;
        let v: Vec<usize> = adj.pair.inner.iter().filter_map(|k| outer_pts.index_of(k)).collect();
        let b3 = 4.0 * ((2.0 * size + 1.0).powi(d as i32)) * size.sqrt().exp();
        let pivot = PivotData::from_anchor(&fam, v, b3)?;
        let eps = (-size.sqrt()).exp();
        let rec = cartan_bad_measure(&fam, &pivot, eps, CartanConstants::UNIT, p.cartan_samples, p.seed)?;
        let target = (-size.powf(1.0 / (3.0 * bj as f64))).exp();
        Ok(json!({
            "sigma": sigma,
            "epsilon": eps,
            "measure": rec.empirical.value,
            "half_width": rec.empirical.half_width,
            "fraction": rec.empirical.value / (2.0 * sigma).powi(bj as i32),
            "target": target,
            "pass": rec.empirical.value <= target,
            "flags": rec.flags,
        }))
    })();
    match cartan {
        Ok(v) => {
            let ok = v["pass"].as_bool().unwrap_or(false);
            if !push("cartan", ok, v) {
                return fail(records);
            }
        }
        Err(err) => {
            push("cartan", false, error_json(&err));
            return fail(records);
        }
    }

    // decay inside Λ_new from the windows, Λ1 = Λ̄_new
    let problem = DecayProblem {
        region: &outer_pts,
        excluded: &adj.pair.inner,
        cover: &cover,
        m0: p.n1,
        rho_bar: p.rho_bar,
        degrade_constant: p.degrade_constant,
        excluded_diam_limit: Some(4.0 * inner_scale(adj.size, p.n1, d) as f64),
    };
    match propagate_decay(cfg, e, x, &problem) {
        Ok(rep) if rep.violation_count == 0 => {
            push(
                "inner_decay",
                true,
                json!({ "rate": rep.effective_rate, "norm": rep.norm, "required_constant": rep.required_constant }),
            );
        }
        Ok(rep) => {
            push(
                "inner_decay",
                false,
                json!({ "rate": rep.effective_rate, "violations": rep.violation_count, "required_constant": rep.required_constant }),
            );
            return fail(records);
        }
        Err(err) => {
            push("inner_decay", false, error_json(&err));
            return fail(records);
        }
    }
    PointResult {
        window: Some(adj.pair.outer),
        records,
    }
}

fn run_cell(cfg: &ModelConfig, p: &ToyMsaParams, x: &Phase, e: f64) -> (CellSummary, Vec<TraceRecord>) {
    let d = cfg.d();
    let q = ElementaryRegion::cube(LatticePoint::origin(d), p.n);
    let q_pts = q.points();
    let mut cell = Cell {
        cfg,
        x,
        e,
        trace: Vec::new(),
        first_failure: None,
    };
    let results: Vec<PointResult> = q_pts
        .points()
        .par_iter()
        .map(|n| point_stages(cfg, p, &q, x, e, n))
        .collect();
    let mut windows = Vec::with_capacity(results.len());
    for (n, r) in q_pts.iter().zip(results) {
        for (stage, ok, detail) in r.records {
            cell.record(&stage, Some(n), ok, detail);
        }
        windows.push(r.window);
    }
    let inner_rate = p.rho_bar - p.degrade_constant / (p.n1 as f64).sqrt();
    let mut glued_norm = None;
    let mut paste_bound_log = None;
    let mut final_rate = inner_rate;
    if windows.iter().all(Option::is_some) {
        let cover = WindowCover {
            domain: q_pts.clone(),
            windows: windows.into_iter().map(Option::unwrap).collect(),
        };
        match paste_norm(cell.cfg, &q_pts, e, x, &cover, inner_rate) {
            Ok(rep) => {
                glued_norm = Some(rep.empirical_norm);
                paste_bound_log = Some(rep.bound_log);
                cell.record(
                    "paste",
                    None,
                    true,
                    json!({
                        "norm": rep.empirical_norm,
                        "bound_log": rep.bound_log,
                        "ml_margin": rep.ml.ml_margin,
                        "m0_log_condition": rep.m0_log_condition,
                    }),
                );
            }
            Err(err) => {
                cell.record("paste", None, false, error_json(&err));
            }
        }
        if glued_norm.is_some() {
            let empty = PointSet::empty(d);
            let m0 = cover.min_size();
            let problem = DecayProblem {
                region: &q_pts,
                excluded: &empty,
                cover: &cover,
                m0,
                rho_bar: inner_rate,
                degrade_constant: p.degrade_constant,
                excluded_diam_limit: None,
            };
            final_rate = inner_rate - p.degrade_constant / (m0 as f64).sqrt();
            match propagate_decay(cell.cfg, e, x, &problem) {
                Ok(rep) => {
                    cell.record(
                        "outer_decay",
                        None,
                        rep.violation_count == 0,
                        json!({ "rate": rep.effective_rate, "violations": rep.violation_count, "required_constant": rep.required_constant }),
                    );
                }
                Err(err) => {
                    cell.record("outer_decay", None, false, error_json(&err));
                }
            }
        }
    } else {
        cell.record("paste", None, false, json!({ "skipped": "a point stage failed" }));
    }
    let final_good = compute_greens(cfg, &q_pts, e, x)
        .and_then(|g| goodness(&g, p.n, final_rate))
        .map(|r| r.pass)
        .unwrap_or(false);
    cell.record("final", None, final_good, json!({ "rate": final_rate }));
    let summary = CellSummary {
        x: x.0.clone(),
        energy: e,
        all_pass: cell.first_failure.is_none(),
        first_failure: cell.first_failure.clone(),
        glued_norm,
        paste_bound_log,
        final_good,
        final_rate,
    };
    (summary, cell.trace)
}

/// Run the pipeline on every `(x, E)` cell of the grids.
pub fn toy_msa_run(cfg: &ModelConfig, params: &ToyMsaParams, xs: &[Phase], energies: &[f64]) -> Result<ToyMsaReport> {
    if params.n > 40 || cfg.d() > 2 {
        return Err(Error::input("toy pipeline is limited to N <= 40 and d <= 2"));
    }
    if params.n1 == 0 || params.n_bar_lo == 0 || params.n_bar_lo > params.n_bar_hi || params.n_bar_hi > params.n {
        return Err(Error::input("scales must satisfy 1 <= N1, 1 <= N̄_lo <= N̄_hi <= N"));
    }
    if xs.iter().any(|x| x.0.len() != cfg.b()) {
        return Err(Error::DimensionMismatch {
            expected: cfg.b(),
            got: xs.iter().map(|x| x.0.len()).find(|&l| l != cfg.b()).unwrap_or(0),
        });
    }
    let jobs: Vec<(&Phase, f64)> = energies.iter().flat_map(|&e| xs.iter().map(move |x| (x, e))).collect();
    let out: Vec<(CellSummary, Vec<TraceRecord>)> =
        jobs.par_iter().map(|(x, e)| run_cell(cfg, params, x, *e)).collect();
    let bad = out.iter().filter(|c| !c.0.final_good).count();
    let (cells, traces): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok(ToyMsaReport {
        params: params.clone(),
        bad_fraction: bad as f64 / cells.len().max(1) as f64,
        target: (-(params.n as f64).powf(params.c1)).exp(),
        cells,
        trace: traces.into_iter().flatten().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockStructure, Frequency, ToeplitzKernel, TrigPotential, GOLDEN_MEAN};

    fn cfg(kernel: ToeplitzKernel, lambda: f64, omega: f64) -> ModelConfig {
        ModelConfig::new(kernel, TrigPotential::cosine(), BlockStructure::scalar(1), lambda, Frequency::new(vec![omega]))
            .unwrap()
    }

    #[test]
    fn empty_x_has_no_hits() {
        let c = cfg(ToeplitzKernel::zero(1), 10.0, GOLDEN_MEAN);
        let spec = SublevelSpec::new(TrigPotential::cosine(), 3.0, 0.5).unwrap();
        for nb in [1, 5, 20] {
            let h = hit_count(&c, &spec, &Phase::new(vec![0.1]), 3, nb).unwrap();
            assert_eq!(h.count, 0);
            assert_eq!(h.cap, 2 * nb - 2 * scale_root(nb, 1));
        }
    }

    #[test]
    fn frozen_orbit_hits_everything() {
        let c = cfg(ToeplitzKernel::zero(1), 10.0, 0.0);
        let spec = SublevelSpec::new(TrigPotential::cosine(), 0.0, 0.1).unwrap();
        let h = hit_count(&c, &spec, &Phase::new(vec![0.25]), 2, 12).unwrap();
        assert_eq!(h.count, h.cap);
    }

    #[test]
    fn golden_orbit_scan_finds_clean_scales() {
        let c = cfg(ToeplitzKernel::zero(1), 10.0, GOLDEN_MEAN);
        let spec = SublevelSpec::new(TrigPotential::cosine(), 0.0, 0.002).unwrap();
        let (rows, frac) = hit_scan(&c, &spec, &Phase::new(vec![0.05]), 1, 2, 40).unwrap();
        assert_eq!(rows.len(), 39);
        assert!(frac > 0.0);
        assert!(rows.iter().all(|(_, h)| h.count <= h.cap));
    }

    fn params(n1: u64, n: u64, lo: u64, hi: u64) -> ToyMsaParams {
        ToyMsaParams {
            n1,
            n,
            n_bar_lo: lo,
            n_bar_hi: hi,
            delta: 0.27,
            rho_bar: 2.0,
            degrade_constant: 0.0,
            sigma: None,
            cartan_samples: 64,
            c1: 0.5,
            seed: 1,
        }
    }

    #[test]
    fn strong_disorder_pipeline_passes() {
        let c = cfg(ToeplitzKernel::exp_decay(1, 3.0).unwrap(), 1e4, GOLDEN_MEAN);
        let rep = toy_msa_run(&c, &params(3, 16, 12, 16), &[Phase::new(vec![0.2])], &[1.3]).unwrap();
        let failed: Vec<_> = rep.trace.iter().filter(|t| !t.pass).collect();
        assert!(rep.cells[0].all_pass, "{:?}", failed.first());
        assert_eq!(rep.bad_fraction, 0.0);
    }

    #[test]
    fn moderate_coupling_reports_a_stage() {
        let c = cfg(ToeplitzKernel::exp_decay(1, 3.0).unwrap(), 1.5, GOLDEN_MEAN);
        let rep = toy_msa_run(&c, &params(2, 12, 8, 12), &[Phase::new(vec![0.2])], &[0.0]).unwrap();
        let cell = &rep.cells[0];
        if !cell.all_pass {
            assert!(cell.first_failure.is_some());
        }
        assert!(!rep.trace_jsonl().is_empty());
    }
}
