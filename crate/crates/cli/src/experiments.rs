use std::path::{Path, PathBuf};

use qplab_core::cartan::{
    calibrate_cartan, cartan_bad_measure, cartan_bound_log, spearman, AnalyticMatrixFamily, CartanConstants,
    CartanRecord, PivotData,
};
use qplab_core::gluing::{calibration_sweep, DegradeCalibration, DegradeEntry};
use qplab_core::greens::{compute_greens, goodness, GreensMatrix};
use qplab_core::initial::{lojasiewicz_fit, neumann_bound_check, section_measure, SublevelSpec};
use qplab_core::lattice::{sup_dist_raw, ElementaryRegion, LatticePoint, PointSet};
use qplab_core::localization::localization_profile;
use qplab_core::logscale::LogScale;
use qplab_core::model::{ModelConfig, Phase};
use qplab_core::multiscale::{hit_scan, toy_msa_run, ToyMsaParams};
use qplab_core::sampling::uniform_points;
use qplab_core::schedule::{
    g_threshold, omega_threshold_ln, property_p_ledger, rho_threshold, ScaleConstants,
};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{default_energies, phase_grid, CartanFamilyKind, ExperimentFile};
use crate::CliError;

/// Verdict of a run, mapped onto the exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Ok,
    Hypothesis,
    Invariant,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Hypothesis => 2,
            Status::Invariant => 3,
        }
    }
}

pub struct Outcome {
    pub status: Status,
    pub files: Vec<PathBuf>,
    pub summary: String,
}

pub struct Context {
    pub file: ExperimentFile,
    pub seed: u64,
    pub out: PathBuf,
}

/// Shortest round-trip text; scientific outside `[1e-4, 1e6)`.
pub fn fmt(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e6).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn fmt_phase(x: &[f64]) -> String {
    x.iter().map(|c| fmt(*c)).collect::<Vec<_>>().join(" ")
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn model(&self) -> Result<ModelConfig, CliError> {
        self.file.model()
    }
}

pub fn goodness_scan(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.goodness_scan;
    let rho_bar = p.rho_bar.unwrap_or(cfg.kernel.rho() / 2.0);
    let xs = phase_grid(cfg.b(), p.x_count);
    let es = match &p.energies {
        Some(g) => g.values(),
        None => default_energies(&cfg, p.e_count),
    };
    let cube = ElementaryRegion::cube(LatticePoint::origin(cfg.d()), p.n);
    let region = cube.points();
    let region_id = cube.descriptor().points_hash[..16].to_string();
    let jobs: Vec<(&Phase, f64)> = xs.iter().flat_map(|x| es.iter().map(move |&e| (x, e))).collect();
    let results: Vec<Result<Option<(GreensMatrix, qplab_core::greens::GoodnessReport)>, CliError>> = jobs
        .par_iter()
        .map(|&(x, e)| match compute_greens(&cfg, &region, e, x) {
            Ok(g) => {
                let rep = goodness(&g, p.n, rho_bar)?;
                Ok(Some((g, rep)))
            }
            Err(qplab_core::Error::Singular { .. }) => Ok(None),
            Err(err) => Err(err.into()),
        })
        .collect();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut good = 0;
    let mut profile = None;
    for (i, (r, (x, e))) in results.into_iter().zip(&jobs).enumerate() {
        let r = r?;
        let (norm, rate, verdict, violations) = match &r {
            Some((_, rep)) => {
                good += rep.pass as usize;
                (
                    fmt(rep.norm),
                    fmt_opt(rep.fitted_rate),
                    if rep.pass { "good" } else { "bad" },
                    rep.violation_count.to_string(),
                )
            }
            None => (String::new(), String::new(), "singular", String::new()),
        };
        if i == p.profile_cell {
            profile = r.map(|(g, _)| g);
        }
        rows.push(vec![
            fmt_phase(&x.0),
            fmt(*e),
            p.n.to_string(),
            region_id.clone(),
            norm,
            rate,
            verdict.to_string(),
            violations,
        ]);
    }
    let csv_path = ctx.path("goodness_scan.csv");
    write_csv(
        &csv_path,
        &["x", "E", "N", "region_id", "norm", "fitted_rate", "verdict", "violations"],
        &rows,
    )?;
    let mut files = vec![csv_path];
    if let Some(g) = profile {
        let path = ctx.path("decay_profile.csv");
        write_csv(&path, &["r", "max_abs_g", "log_max_abs_g", "reference_log"], &decay_profile(&g, rho_bar))?;
        files.push(path);
    }
    let json_path = ctx.path("goodness_scan.json");
    write_json(
        &json_path,
        &json!({
            "n": p.n,
            "rho_bar": rho_bar,
            "region": cube.descriptor(),
            "rows": rows.len(),
            "good": good,
            "profile_cell": p.profile_cell,
        }),
    )?;
    files.push(json_path);
    Ok(Outcome {
        status: Status::Ok,
        files,
        summary: format!("{} cells, {good} good at rho_bar = {rho_bar}", rows.len()),
    })
}

/// `max |G(n,n')|` over pairs at each sup-distance `r`.
fn decay_profile(g: &GreensMatrix, rho_bar: f64) -> Vec<Vec<String>> {
    let pts = g.region.points();
    let diam = g.region.diameter() as usize;
    let mut best = vec![0.0f64; diam + 1];
    for i in 0..pts.len() {
        for j in 0..pts.len() {
            let r = sup_dist_raw(pts[i].coords(), pts[j].coords()) as usize;
            best[r] = best[r].max(g.entries[(i, j)].abs());
        }
    }
    best.iter()
        .enumerate()
        .map(|(r, &v)| vec![r.to_string(), fmt(v), fmt(v.ln()), fmt(-rho_bar * r as f64)])
        .collect()
}

pub fn ldt_scan(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.ldt_scan;
    let mut rows = Vec::new();
    for &delta in &p.deltas {
        let spec = SublevelSpec::new(cfg.potential.clone(), p.energy, delta)?;
        for (sid, sec) in p.sections.iter().enumerate() {
            let m = section_measure(&spec, &cfg.blocks, p.block, sec, p.method, p.samples, ctx.seed)?;
            rows.push(vec![fmt(delta), p.block.to_string(), sid.to_string(), fmt(m.value), fmt(m.half_width)]);
        }
    }
    let csv_path = ctx.path("lojasiewicz.csv");
    write_csv(&csv_path, &["delta", "j", "section_id", "measure", "half_width"], &rows)?;
    let sections: Vec<(usize, Vec<f64>)> = p.sections.iter().map(|s| (p.block, s.clone())).collect();
    let fit = lojasiewicz_fit(
        &cfg.potential,
        p.energy,
        &cfg.blocks,
        &p.deltas,
        &sections,
        p.method,
        p.samples,
        ctx.seed,
    )?;
    let json_path = ctx.path("lojasiewicz_fit.json");
    write_json(
        &json_path,
        &json!({
            "C": fit.constant_c,
            "a": fit.exponent_a,
            "residual": fit.residual,
            "energy": p.energy,
            "sections": fit.sections_sampled,
            "method": p.method,
            "samples": p.samples,
            "seed": ctx.seed,
        }),
    )?;
    Ok(Outcome {
        status: Status::Ok,
        files: vec![csv_path, json_path],
        summary: format!("fitted a = {:.4}, C = {:.4}", fit.exponent_a, fit.constant_c),
    })
}

pub fn neumann_check(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.neumann_check;
    let region = PointSet::cube(&LatticePoint::origin(cfg.d()), p.n);
    let candidates = uniform_points(cfg.b(), p.max_draws, ctx.seed);
    let spec = SublevelSpec::new(cfg.potential.clone(), p.energy, p.delta)?;
    let accepted: Vec<Phase> = candidates
        .into_iter()
        .map(Phase::new)
        .filter(|x| region.iter().all(|n| !spec.contains(&cfg_shift(&cfg, x, n))))
        .take(p.samples)
        .collect();
    if accepted.len() < p.samples {
        return Err(CliError::Core(qplab_core::Error::Hypothesis {
            name: "x not in X_N".into(),
            detail: format!("only {} of {} draws avoid X_N", accepted.len(), p.max_draws),
        }));
    }
    let reports: Vec<_> = accepted
        .par_iter()
        .map(|x| neumann_bound_check(&cfg, &region, p.n, p.energy, x, p.delta))
        .collect::<Result<_, _>>()?;
    let rows: Vec<Vec<String>> = accepted
        .iter()
        .zip(&reports)
        .enumerate()
        .map(|(i, (x, r))| {
            vec![
                i.to_string(),
                fmt_phase(&x.0),
                fmt(r.min_gap),
                fmt(r.norm),
                fmt(r.bound),
                fmt(r.decay_ratio),
            ]
        })
        .collect();
    let path = ctx.path("neumann_check.csv");
    write_csv(&path, &["sample", "x", "min_gap", "norm", "bound", "decay_ratio"], &rows)?;
    let worst = reports.iter().map(|r| r.norm).fold(0.0, f64::max);
    Ok(Outcome {
        status: Status::Ok,
        files: vec![path],
        summary: format!("{} phases, max norm {worst:.4} <= {}", rows.len(), 2.0 / p.delta),
    })
}

fn cfg_shift(cfg: &ModelConfig, x: &Phase, n: &LatticePoint) -> Vec<f64> {
    qplab_core::model::shift_raw(&x.0, &cfg.omega.0, n.coords(), &cfg.blocks).0
}

pub fn cartan_sweep(ctx: &Context) -> Result<Outcome, CliError> {
    let p = &ctx.file.cartan_sweep;
    let (family, pivot) = match p.family {
        CartanFamilyKind::Scalar => (AnalyticMatrixFamily::scalar(p.delta)?, PivotData::new(vec![0], 1.0, 1.0)?),
        CartanFamilyKind::Restricted => {
            let cfg = ctx.model()?;
            if cfg.d() != 1 {
                return Err(CliError::Usage("the restricted family is built on d = 1 models".into()));
            }
            let region = PointSet::interval(0, p.sites as i64 - 1);
            let fam = AnalyticMatrixFamily::restricted_operator(&cfg, &region, &Phase::new(p.anchor.clone()), p.energy, 0, p.delta)?;
            let v = p
                .pivot
                .clone()
                .unwrap_or_else(|| (p.sites / 3..2 * p.sites / 3).collect());
            let piv = PivotData::from_anchor(&fam, v, p.b3)?;
            (fam, piv)
        }
    };
    let records: Vec<CartanRecord> = p
        .epsilons
        .iter()
        .map(|&eps| cartan_bad_measure(&family, &pivot, eps, CartanConstants::UNIT, p.samples, ctx.seed))
        .collect::<Result<_, _>>()?;
    let constants = calibrate_cartan(&family, &pivot, &records);
    let mut rows = Vec::new();
    let mut all_pass = true;
    for r in &records {
        let bound_log = cartan_bound_log(&family, &pivot, r.epsilon, constants);
        let pass = r.empirical.value <= bound_log.exp() * (1.0 + 1e-12);
        all_pass &= pass;
        rows.push(vec![
            fmt(r.epsilon),
            fmt(r.empirical.value),
            fmt(r.empirical.half_width),
            fmt(bound_log),
            pass.to_string(),
        ]);
    }
    let logs: Vec<f64> = records.iter().map(|r| (1.0 / r.epsilon).ln()).collect();
    let measures: Vec<f64> = records.iter().map(|r| r.empirical.value).collect();
    let rho = spearman(&logs, &measures);
    let csv_path = ctx.path("cartan_sweep.csv");
    write_csv(&csv_path, &["epsilon", "empirical", "half_width", "bound_log", "pass"], &rows)?;
    let json_path = ctx.path("cartan_sweep.json");
    write_json(
        &json_path,
        &json!({
            "family": family.label,
            "j": family.j,
            "delta": family.delta,
            "pivot": pivot,
            "constants": constants,
            "spearman": rho,
            "flags": records.iter().map(|r| json!({ "epsilon": r.epsilon, "flags": r.flags })).collect::<Vec<_>>(),
        }),
    )?;
    Ok(Outcome {
        status: if all_pass { Status::Ok } else { Status::Invariant },
        files: vec![csv_path, json_path],
        summary: format!(
            "{} epsilons, spearman {}, C = e^{:.3}, c = {:.3}",
            records.len(),
            rho.map(fmt).unwrap_or_else(|| "n/a".into()),
            constants.log_c_big,
            constants.c_small
        ),
    })
}

pub fn msa_toy(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.msa_toy;
    let degrade = match p.degrade_constant {
        Some(c) => c,
        None => qplab_core::gluing::default_degrade_constant(cfg.kernel.family()).ok_or_else(|| {
            CliError::Usage(format!(
                "no calibrated degrade constant for kernel family {}; set msa_toy.degrade_constant",
                cfg.kernel.family().name()
            ))
        })?,
    };
    let params = ToyMsaParams {
        n1: p.n1,
        n: p.n,
        n_bar_lo: p.n_bar_lo,
        n_bar_hi: p.n_bar_hi,
        delta: p.delta,
        rho_bar: p.rho_bar,
        degrade_constant: degrade,
        sigma: p.sigma,
        cartan_samples: p.cartan_samples,
        c1: p.c1,
        seed: ctx.seed,
    };
    let xs: Vec<Phase> = p.phases.iter().cloned().map(Phase::new).collect();
    let rep = toy_msa_run(&cfg, &params, &xs, &p.energies)?;
    let trace_path = ctx.path("msa_trace.jsonl");
    std::fs::write(&trace_path, rep.trace_jsonl())?;
    let summary_path = ctx.path("msa_summary.json");
    write_json(
        &summary_path,
        &json!({
            "params": rep.params,
            "cells": rep.cells,
            "bad_fraction": rep.bad_fraction,
            "target": rep.target,
        }),
    )?;
    let mut status = Status::Ok;
    for r in rep.trace.iter().filter(|r| !r.pass) {
        let s = match r.detail.get("kind").and_then(|k| k.as_str()) {
            Some("invariant") => Status::Invariant,
            _ => Status::Hypothesis,
        };
        status = status.max(s);
    }
    let passed = rep.cells.iter().filter(|c| c.all_pass).count();
    Ok(Outcome {
        status,
        files: vec![trace_path, summary_path],
        summary: format!(
            "{passed}/{} cells passed every stage; bad fraction {} vs target {}",
            rep.cells.len(),
            fmt(rep.bad_fraction),
            fmt(rep.target)
        ),
    })
}

pub fn schedule_table(ctx: &Context) -> Result<Outcome, CliError> {
    let p = &ctx.file.schedule_table;
    let k = ScaleConstants::new(p.c3, p.c4, p.b_tilde).map_err(|e| CliError::Usage(e.to_string()))?;
    let threshold = rho_threshold(p.rho, p.degrade, &k)?;
    let ln_n1 = p.ln_n1.unwrap_or(threshold + 1.0);
    let ledger = property_p_ledger(p.rho, LogScale::from_ln(ln_n1), p.degrade, &k, p.blocks)?;
    let rows: Vec<Vec<String>> = ledger
        .iter()
        .map(|r| {
            vec![
                r.block.to_string(),
                r.n_from.to_string(),
                r.n_to.to_string(),
                fmt(r.rho_param),
                r.log_measure_target.to_string(),
                fmt(r.omega_excluded),
            ]
        })
        .collect();
    let csv_path = ctx.path("schedule_table.csv");
    write_csv(
        &csv_path,
        &["block", "n_from", "n_to", "rho", "log_measure_target", "omega_excluded"],
        &rows,
    )?;
    let json_path = ctx.path("schedule.json");
    write_json(
        &json_path,
        &json!({
            "c1": k.c1,
            "c2": k.c2,
            "c3": p.c3,
            "c4": p.c4,
            "b_tilde": p.b_tilde,
            "g_threshold": g_threshold(k.c1),
            "rho_threshold_ln_n1": threshold,
            "omega_threshold_ln_n": omega_threshold_ln(&k)?,
            "ln_n1": ln_n1,
        }),
    )?;
    let status = if ledger.iter().all(|r| r.rho_param >= p.rho / 2.0) || ln_n1 < threshold {
        Status::Ok
    } else {
        Status::Invariant
    };
    Ok(Outcome {
        status,
        files: vec![csv_path, json_path],
        summary: format!("c1 = {}, c2 = {}, ln N1 threshold {threshold:.4}", fmt(k.c1), fmt(k.c2)),
    })
}

pub fn hit_count(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.hit_count;
    let spec = SublevelSpec::new(cfg.potential.clone(), p.energy, p.delta)?;
    let (rows, frac) = hit_scan(&cfg, &spec, &Phase::new(p.phase.clone()), p.n1, p.n_bar_lo, p.n_bar_hi)?;
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|(nb, h)| vec![nb.to_string(), h.count.to_string(), h.cap.to_string()])
        .collect();
    let path = ctx.path("hit_count.csv");
    write_csv(&path, &["n_bar", "count", "cap"], &rows)?;
    Ok(Outcome {
        status: Status::Ok,
        files: vec![path],
        summary: format!("{} scales, fraction with no hit {}", rows.len(), fmt(frac)),
    })
}

pub fn localization(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.localization_profile;
    let region = PointSet::cube(&LatticePoint::origin(cfg.d()), p.n);
    let prof = localization_profile(&cfg, &region, &Phase::new(p.phase.clone()))?;
    let rows: Vec<Vec<String>> = prof
        .fits
        .iter()
        .enumerate()
        .map(|(i, f)| {
            vec![
                i.to_string(),
                fmt(f.eigenvalue),
                f.center.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
                fmt_opt(f.rate),
                f.rate.is_none().to_string(),
                fmt(f.participation_ratio),
                fmt(f.residual),
            ]
        })
        .collect();
    let csv_path = ctx.path("localization_profile.csv");
    write_csv(
        &csv_path,
        &["index", "eigenvalue", "center", "rate", "rate_unbounded", "participation_ratio", "residual"],
        &rows,
    )?;
    let median = prof.median_rate();
    let json_path = ctx.path("localization_profile.json");
    write_json(
        &json_path,
        &json!({
            "n": p.n,
            "lambda": cfg.lambda,
            "median_rate": if median.is_finite() { json!(median) } else { json!("inf") },
            "max_residual": prof.max_residual,
            "operator_norm": prof.operator_norm,
            "residuals_ok": prof.residuals_ok(),
            "spectral_bound": prof.spectral_bound,
            "spectrum_within_bound": prof.spectrum_within_bound,
        }),
    )?;
    let status = if prof.residuals_ok() && prof.spectrum_within_bound {
        Status::Ok
    } else {
        Status::Invariant
    };
    Ok(Outcome {
        status,
        files: vec![csv_path, json_path],
        summary: format!("{} eigenvectors, median decay rate {}", rows.len(), fmt(median)),
    })
}

pub fn calibrate(ctx: &Context) -> Result<Outcome, CliError> {
    let cfg = ctx.model()?;
    let p = &ctx.file.calibrate;
    let rho = cfg.kernel.rho();
    let rho_bar = p.rho_bar.unwrap_or(0.8 * rho);
    let energies = &p.energies;
    let phases: Vec<f64> = (0..p.x_count).map(|i| i as f64 / p.x_count as f64).collect();
    let samples = calibration_sweep(&cfg, p.n, p.m0, rho_bar, &p.lambdas, energies, &phases)?;
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            vec![
                fmt(s.lambda),
                fmt(s.energy),
                fmt(s.phase),
                s.accepted.to_string(),
                fmt_opt(s.required_constant),
                s.reason.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let csv_path = ctx.path("calibration_samples.csv");
    write_csv(
        &csv_path,
        &["lambda", "E", "x", "accepted", "required_constant", "reason"],
        &rows,
    )?;
    let accepted: Vec<f64> = samples.iter().filter_map(|s| s.required_constant).collect();
    if accepted.is_empty() {
        return Err(CliError::Core(qplab_core::Error::Hypothesis {
            name: "calibration".into(),
            detail: "no instance met the decay-propagation hypotheses".into(),
        }));
    }
    let max_required = accepted.iter().copied().fold(0.0, f64::max);
    let table = DegradeCalibration {
        version: 1,
        description: format!(
            "required constant = sqrt(M0) times the worst rate deficit below rho_bar over instances meeting the hypotheses; d = 1, Q_{} with cube windows of size {}, rho_bar = {rho_bar}, lambda in {:?}, E in {:?}, {} phases i/{}",
            p.n, p.m0, p.lambdas, p.energies, p.x_count, p.x_count
        ),
        constants: vec![DegradeEntry {
            family: cfg.kernel.family(),
            rho,
            constant: max_required * p.safety_factor,
            max_required,
            instances: accepted.len(),
            safety_factor: p.safety_factor,
        }],
    };
    let json_path = ctx.path("degrade_calibration.json");
    write_json(&json_path, &serde_json::to_value(&table).expect("table serializes"))?;
    Ok(Outcome {
        status: Status::Ok,
        files: vec![csv_path, json_path],
        summary: format!(
            "{} of {} instances accepted, max required constant {}",
            accepted.len(),
            samples.len(),
            fmt(max_required)
        ),
    })
}
