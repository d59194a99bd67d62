//! Eigenvector localization diagnostic for `λ^{-1} H_Λ(x)` on a cube.

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, PointSet};
use crate::linalg::{linear_fit, spectral_norm};
use crate::model::{assemble_restricted, ModelConfig, Phase};

/// Largest box the dense eigensolver accepts.
pub const MAX_SITES: usize = 20_000;

/// Amplitudes below this fraction of the peak are treated as round-off.
pub const AMPLITUDE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenvectorFit {
    pub eigenvalue: f64,
    pub center: LatticePoint,
    /// Fitted decay rate; `None` when the vector drops below the floor
    /// before two distinct distances are resolved (rate `+∞`).
    pub rate: Option<f64>,
    pub participation_ratio: f64,
    pub fit_points: usize,
    /// `‖Hψ − Eψ‖`.
    pub residual: f64,
}

impl EigenvectorFit {
    /// The rate with `+∞` for unresolved decay.
    pub fn rate_or_inf(&self) -> f64 {
        self.rate.unwrap_or(f64::INFINITY)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalizationProfile {
    pub eigenvalues: Vec<f64>,
    pub fits: Vec<EigenvectorFit>,
    /// `‖λ^{-1} H_Λ‖`.
    pub operator_norm: f64,
    pub max_residual: f64,
    /// Bound `C` on the spectrum.
    pub spectral_bound: f64,
    pub spectrum_within_bound: bool,
}

impl LocalizationProfile {
    /// Median decay rate, counting unresolved decay as `+∞`.
    pub fn median_rate(&self) -> f64 {
        let mut r: Vec<f64> = self.fits.iter().map(EigenvectorFit::rate_or_inf).collect();
        r.sort_by(f64::total_cmp);
        let m = r.len();
        if m % 2 == 1 {
            r[m / 2]
        } else {
            0.5 * (r[m / 2 - 1] + r[m / 2])
        }
    }

    /// Whether every pair satisfies `‖Hψ − Eψ‖ ≤ 1e-8 ‖H‖`.
    pub fn residuals_ok(&self) -> bool {
        self.max_residual <= 1e-8 * self.operator_norm.max(f64::MIN_POSITIVE)
    }
}

/// Decay fit of one normalized eigenvector.
///
/// The slope of `ln|ψ(n)|` against `|n − c|` is fitted over the points whose
/// distance from the peak `c` lies in the outer half `[R/2, R]` of the resolved
/// range, `R` being the largest distance at which `|ψ|` is above the floor.
fn fit_vector(points: &[LatticePoint], psi: &[f64]) -> (LatticePoint, Option<f64>, usize) {
    let (imax, peak) = psi
        .iter()
        .enumerate()
        .map(|(i, v)| (i, v.abs()))
        .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let center = points[imax].clone();
    let floor = AMPLITUDE_FLOOR * peak;
    let dist: Vec<u64> = points.iter().map(|p| p.offset_from(&center).norm()).collect();
    let reach = dist
        .iter()
        .zip(psi)
        .filter(|(_, v)| v.abs() >= floor)
        .map(|(r, _)| *r)
        .max()
        .unwrap_or(0);
    let lo = reach.div_ceil(2);
    let (xs, ys): (Vec<f64>, Vec<f64>) = dist
        .iter()
        .zip(psi)
        .filter(|(r, v)| **r >= lo && **r <= reach && v.abs() >= floor)
        .map(|(r, v)| (*r as f64, v.abs().ln()))
        .unzip();
    let rate = linear_fit(&xs, &ys).map(|(slope, _, _)| -slope);
    (center, rate, xs.len())
}

/// Full eigendecomposition of `λ^{-1} H_Λ(x)` with per-vector decay fits.
pub fn localization_profile(cfg: &ModelConfig, region: &PointSet, x: &Phase) -> Result<LocalizationProfile> {
    if region.len() > MAX_SITES {
        return Err(Error::input(format!("region has {} sites, limit is {MAX_SITES}", region.len())));
    }
    let h = assemble_restricted(cfg, region, x, 0.0)?;
    let op_norm = spectral_norm(&h);
    let eig = SymmetricEigen::new(h.clone());
    let pts = region.points();
    let mut order: Vec<usize> = (0..pts.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut fits = Vec::with_capacity(pts.len());
    let mut max_residual: f64 = 0.0;
    for &k in &order {
        let psi = eig.eigenvectors.column(k);
        let e = eig.eigenvalues[k];
        let residual = (&h * psi - psi * e).norm();
        max_residual = max_residual.max(residual);
        let v: Vec<f64> = psi.iter().copied().collect();
        let s2: f64 = v.iter().map(|a| a * a).sum();
        let s4: f64 = v.iter().map(|a| a.powi(4)).sum();
        let (center, rate, fit_points) = fit_vector(pts, &v);
        fits.push(EigenvectorFit {
            eigenvalue: e,
            center,
            rate,
            participation_ratio: s2 * s2 / s4,
            fit_points,
            residual,
        });
    }
    let eigenvalues: Vec<f64> = fits.iter().map(|f| f.eigenvalue).collect();
    let c = cfg.spectral_bound();
    let tol = 1e-12 * c.max(1.0);
    Ok(LocalizationProfile {
        spectrum_within_bound: eigenvalues.iter().all(|e| e.abs() <= c + tol),
        eigenvalues,
        fits,
        operator_norm: op_norm,
        max_residual,
        spectral_bound: c,
    })
}
