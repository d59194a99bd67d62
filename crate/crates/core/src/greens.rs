//! Restricted Green's functions `G_Λ(E;x) = (λ^{-1}H_Λ(x) − E)^{-1}` and the
//! `(ρ̄, N)`-goodness test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{sup_dist_raw, LatticePoint, PointSet};
use crate::linalg::{self, checked_inverse};
use crate::model::{assemble_restricted, shift_phase, ModelConfig, Phase};

#[derive(Clone, Debug)]
pub struct GreensMatrix {
    pub region: PointSet,
    pub energy: f64,
    pub phase: Phase,
    /// Indexed by the lexicographic order of `region`.
    pub entries: DMatrix<f64>,
    pub condition_estimate: f64,
    pub defect: f64,
}

impl GreensMatrix {
    /// `G(n, n')` by lattice points; `None` if either is outside the region.
    pub fn get(&self, n: &LatticePoint, np: &LatticePoint) -> Option<f64> {
        Some(self.entries[(self.region.index_of(n)?, self.region.index_of(np)?)])
    }

    pub fn norm(&self) -> f64 {
        linalg::operator_norm(&self.entries)
    }
}

/// Invert the restricted operator; fails with [`Error::Singular`] when the
/// condition estimate exceeds [`linalg::SINGULAR_CONDITION`].
pub fn compute_greens(cfg: &ModelConfig, region: &PointSet, e: f64, x: &Phase) -> Result<GreensMatrix> {
    let m = assemble_restricted(cfg, region, x, e)?;
    let inv = checked_inverse(&m, true)?;
    Ok(GreensMatrix {
        region: region.clone(),
        energy: e,
        phase: x.clone(),
        entries: inv.matrix,
        condition_estimate: inv.condition,
        defect: inv.defect,
    })
}

/// Multiplicative slack on the two goodness bounds, as log offsets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoodnessConstants {
    pub norm_log_offset: f64,
    pub decay_log_offset: f64,
}

impl GoodnessConstants {
    /// `‖G‖ ≤ e^{√N}` and `|G(n,n')| ≤ e^{−ρ̄|n−n'|}`.
    pub const STRICT: Self = GoodnessConstants {
        norm_log_offset: 0.0,
        decay_log_offset: 0.0,
    };
    /// Both bounds with a factor 2, as required of gluing windows.
    pub const DOUBLED: Self = GoodnessConstants {
        norm_log_offset: std::f64::consts::LN_2,
        decay_log_offset: std::f64::consts::LN_2,
    };
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayViolation {
    pub n: LatticePoint,
    pub n_prime: LatticePoint,
    pub abs_value: f64,
    pub allowed: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GoodnessReport {
    pub size: u64,
    pub rho_bar: f64,
    pub norm: f64,
    /// `e^{√N}` times the norm slack.
    pub norm_bound: f64,
    pub norm_ok: bool,
    /// First violations found (at most [`MAX_LISTED_VIOLATIONS`]).
    pub decay_violations: Vec<DecayViolation>,
    pub violation_count: usize,
    /// `−slope` of `ln|G(n,n')|` against `|n−n'|` over `|n−n'| ≥ N/10`;
    /// `None` when every such entry vanishes.
    pub fitted_rate: Option<f64>,
    pub pass: bool,
}

pub const MAX_LISTED_VIOLATIONS: usize = 64;

/// (ρ̄, N)-goodness with the plain constants.
pub fn goodness(g: &GreensMatrix, n: u64, rho_bar: f64) -> Result<GoodnessReport> {
    goodness_with(g, n, rho_bar, GoodnessConstants::STRICT)
}

/// Norm bound `‖G‖ ≤ e^{√N + a}` and decay `|G(n,n')| ≤ e^{b − ρ̄|n−n'|}` for
/// `|n−n'| ≥ N/10`, all compared in log space.
pub fn goodness_with(
    g: &GreensMatrix,
    n: u64,
    rho_bar: f64,
    k: GoodnessConstants,
) -> Result<GoodnessReport> {
    if n == 0 {
        return Err(Error::input("goodness needs N >= 1"));
    }
    let diam = g.region.diameter();
    if diam > 2 * n {
        return Err(Error::input(format!(
            "region of diameter {diam} is not an elementary region of size {n}"
        )));
    }
    if !(rho_bar > 0.0) {
        return Err(Error::input("rho_bar must be positive"));
    }
    let norm = g.norm();
    let log_bound = (n as f64).sqrt() + k.norm_log_offset;
    let norm_ok = norm.ln() <= log_bound;
    let (violations, count, fitted_rate) = decay_scan(g, rho_bar, k.decay_log_offset, |p, q| {
        // only the decay regime |n−n'| ≥ N/10 counts
        10 * sup_dist_raw(p, q) >= n
    });
    Ok(GoodnessReport {
        size: n,
        rho_bar,
        norm,
        norm_bound: log_bound.exp(),
        norm_ok,
        decay_violations: violations,
        violation_count: count,
        fitted_rate,
        pass: norm_ok && count == 0,
    })
}

/// Scan pairs accepted by `select` against `|G| ≤ e^{offset − rate·r}` and fit
/// the decay slope over the same pairs.
pub(crate) fn decay_scan(
    g: &GreensMatrix,
    rate: f64,
    offset: f64,
    select: impl Fn(&[i64], &[i64]) -> bool,
) -> (Vec<DecayViolation>, usize, Option<f64>) {
    let pts = g.region.points();
    let mut listed = Vec::new();
    let mut count = 0;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..pts.len() {
        for j in i..pts.len() {
            let (p, q) = (pts[i].coords(), pts[j].coords());
            if !select(p, q) {
                continue;
            }
            let r = sup_dist_raw(p, q) as f64;
            let v = g.entries[(i, j)].abs();
            if v > 0.0 {
                xs.push(r);
                ys.push(v.ln());
                if v.ln() > offset - rate * r {
                    count += 1;
                    if listed.len() < MAX_LISTED_VIOLATIONS {
                        listed.push(DecayViolation {
                            n: pts[i].clone(),
                            n_prime: pts[j].clone(),
                            abs_value: v,
                            allowed: (offset - rate * r).exp(),
                        });
                    }
                }
            }
        }
    }
    let fitted = linalg::linear_fit(&xs, &ys).map(|(s, _, _)| -s);
    (listed, count, fitted)
}

/// `max |G_{n+Λ}(E;x)(p+n, q+n) − G_Λ(E;x+nω)(p, q)|`.
pub fn shift_covariance_check(
    cfg: &ModelConfig,
    region: &PointSet,
    e: f64,
    x: &Phase,
    n: &LatticePoint,
) -> Result<f64> {
    let moved = region.translate(n);
    let g1 = compute_greens(cfg, &moved, e, x)?;
    let y = shift_phase(x, &cfg.omega, n, &cfg.blocks)?;
    let g2 = compute_greens(cfg, region, e, &y)?;
    // translation preserves lexicographic order, so indices line up
    Ok(linalg::max_abs_diff(&g1.entries, &g2.entries))
}
