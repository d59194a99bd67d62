use std::path::Path;

use qplab_core::model::{
    KernelFamily, KernelFile, ModelConfig, ModelFile, Phase, PotentialFile, TrigTerm, GOLDEN_MEAN,
};
use qplab_core::sampling::{rd_point, SamplingMethod};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Experiment file: a model plus one optional table per experiment.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub seed: Option<u64>,
    pub model: Option<ModelFile>,
    #[serde(default)]
    pub goodness_scan: GoodnessScan,
    #[serde(default)]
    pub ldt_scan: LdtScan,
    #[serde(default)]
    pub neumann_check: NeumannCheck,
    #[serde(default)]
    pub cartan_sweep: CartanSweep,
    #[serde(default)]
    pub msa_toy: MsaToy,
    #[serde(default)]
    pub schedule_table: ScheduleTable,
    #[serde(default)]
    pub hit_count: HitCountScan,
    #[serde(default)]
    pub localization_profile: LocalizationRun,
    #[serde(default)]
    pub calibrate: Calibrate,
}

impl ExperimentFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(m) = &file.model {
            m.build().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(file)
    }

    pub fn model(&self) -> Result<ModelConfig, CliError> {
        self.model
            .clone()
            .unwrap_or_else(default_model)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))
    }
}

/// `v = cos 2πθ`, golden-mean frequency, `S(k) = e^{−3|k|}`, `λ = 220` on `Z`.
pub fn default_model() -> ModelFile {
    ModelFile {
        lambda: 220.0,
        blocks: vec![1],
        omega: vec![GOLDEN_MEAN],
        kernel: KernelFile {
            family: KernelFamily::ExpDecay,
            rho: 3.0,
            radius: None,
            symbol: None,
        },
        potential: PotentialFile {
            terms: vec![TrigTerm {
                k: vec![1],
                cos: 1.0,
                sin: 0.0,
            }],
        },
    }
}

/// Evenly spaced values on `[lo, hi]`, endpoints included.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => vec![],
            1 => vec![self.lo],
            c => (0..c)
                .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (c - 1) as f64)
                .collect(),
        }
    }
}

/// `count` phases: `i/count` on `T`, the `R_d` sequence on `T^b`.
pub fn phase_grid(b: usize, count: usize) -> Vec<Phase> {
    (0..count)
        .map(|i| {
            if b == 1 {
                Phase::new(vec![i as f64 / count as f64])
            } else {
                Phase::new(rd_point(i as u64, &vec![0.0; b]))
            }
        })
        .collect()
}

/// Energies spanning the spectral bound `±1.1 C`.
pub fn default_energies(cfg: &ModelConfig, count: usize) -> Vec<f64> {
    let c = 1.1 * cfg.spectral_bound();
    Grid { lo: -c, hi: c, count }.values()
}

fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    Grid {
        lo: lo.ln(),
        hi: hi.ln(),
        count,
    }
    .values()
    .into_iter()
    .map(f64::exp)
    .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GoodnessScan {
    pub n: u64,
    /// Defaults to `ρ/2`.
    pub rho_bar: Option<f64>,
    pub x_count: usize,
    /// Defaults to `±1.1 C` with `e_count` points.
    pub energies: Option<Grid>,
    pub e_count: usize,
    /// Grid cell (row index) whose decay profile is written.
    pub profile_cell: usize,
}

impl Default for GoodnessScan {
    fn default() -> Self {
        GoodnessScan {
            n: 20,
            rho_bar: None,
            x_count: 32,
            energies: None,
            e_count: 32,
            profile_cell: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdtScan {
    pub energy: f64,
    pub deltas: Vec<f64>,
    /// Phase block whose torus is sampled.
    pub block: usize,
    /// Values of the remaining coordinates; one empty section when `b = b_j`.
    pub sections: Vec<Vec<f64>>,
    pub method: SamplingMethod,
    pub samples: u64,
}

impl Default for LdtScan {
    fn default() -> Self {
        LdtScan {
            energy: 0.0,
            deltas: log_grid(1e-4, 1e-1, 13),
            block: 0,
            sections: vec![vec![]],
            method: SamplingMethod::Quadrature,
            samples: 1 << 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeumannCheck {
    pub n: u64,
    pub energy: f64,
    pub delta: f64,
    /// Accepted phases `x ∉ X_N` to test.
    pub samples: usize,
    /// Upper limit on drawn candidates.
    pub max_draws: usize,
}

impl Default for NeumannCheck {
    fn default() -> Self {
        NeumannCheck {
            n: 5,
            energy: 0.0,
            delta: 0.1,
            samples: 500,
            max_draws: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CartanFamilyKind {
    /// `T(x) = x` on `[−δ, δ]`.
    Scalar,
    /// `λ^{-1} H_Λ(x + y) − E` on an interval `Λ`.
    Restricted,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartanSweep {
    pub family: CartanFamilyKind,
    pub epsilons: Vec<f64>,
    pub delta: f64,
    pub samples: u64,
    /// Sites of the restricted family, `[0, sites)`.
    pub sites: usize,
    pub energy: f64,
    pub anchor: Vec<f64>,
    /// Pivot indices; defaults to the middle third.
    pub pivot: Option<Vec<usize>>,
    pub b3: f64,
}

impl Default for CartanSweep {
    fn default() -> Self {
        CartanSweep {
            family: CartanFamilyKind::Scalar,
            epsilons: vec![1e-2, 1e-3, 1e-4],
            delta: 0.5,
            samples: 1 << 16,
            sites: 30,
            energy: 0.0,
            anchor: vec![0.0],
            pivot: None,
            b3: 1e4,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MsaToy {
    pub n1: u64,
    pub n: u64,
    pub n_bar_lo: u64,
    pub n_bar_hi: u64,
    pub delta: f64,
    pub rho_bar: f64,
    /// Defaults to the committed calibration for the kernel family.
    pub degrade_constant: Option<f64>,
    pub sigma: Option<f64>,
    pub cartan_samples: u64,
    pub c1: f64,
    pub phases: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
}

impl Default for MsaToy {
    fn default() -> Self {
        MsaToy {
            n1: 4,
            n: 24,
            n_bar_lo: 16,
            n_bar_hi: 24,
            delta: 0.27,
            rho_bar: 2.4,
            degrade_constant: None,
            sigma: None,
            cartan_samples: 256,
            c1: 0.5,
            phases: vec![vec![0.0]],
            energies: vec![1.3],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleTable {
    pub c3: f64,
    pub c4: f64,
    pub b_tilde: usize,
    pub rho: f64,
    pub degrade: f64,
    /// `ln N1`, i.e. `ln ln ln λ`; defaults to just above the computed threshold.
    pub ln_n1: Option<f64>,
    pub blocks: usize,
}

impl Default for ScheduleTable {
    fn default() -> Self {
        ScheduleTable {
            c3: 0.04,
            c4: 0.2,
            b_tilde: 1,
            rho: 1.0,
            degrade: 1.0,
            ln_n1: None,
            blocks: 6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HitCountScan {
    pub energy: f64,
    pub delta: f64,
    pub n1: u64,
    pub n_bar_lo: u64,
    pub n_bar_hi: u64,
    pub phase: Vec<f64>,
}

impl Default for HitCountScan {
    fn default() -> Self {
        HitCountScan {
            energy: 0.0,
            delta: 0.01,
            n1: 2,
            n_bar_lo: 2,
            n_bar_hi: 60,
            phase: vec![0.05],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LocalizationRun {
    pub n: u64,
    pub phase: Vec<f64>,
}

impl Default for LocalizationRun {
    fn default() -> Self {
        LocalizationRun {
            n: 50,
            phase: vec![0.0],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Calibrate {
    pub n: u64,
    pub m0: u64,
    /// Defaults to `4ρ/5`.
    pub rho_bar: Option<f64>,
    pub lambdas: Vec<f64>,
    /// Energies off the range of `v`, where windows can be good.
    pub energies: Vec<f64>,
    pub x_count: usize,
    pub safety_factor: f64,
}

impl Default for Calibrate {
    fn default() -> Self {
        Calibrate {
            n: 24,
            m0: 5,
            rho_bar: None,
            lambdas: vec![1.2, 1.5, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 220.0, 1000.0],
            energies: [-1.6, -1.45, -1.3, -1.2, -1.12, 1.12, 1.2, 1.3, 1.45, 1.6].to_vec(),
            x_count: 24,
            safety_factor: 1.5,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(Grid { lo: 0.0, hi: 1.0, count: 3 }.values(), vec![0.0, 0.5, 1.0]);
        assert_eq!(Grid { lo: 2.0, hi: 5.0, count: 1 }.values(), vec![2.0]);
        let l = log_grid(1e-4, 1e-1, 4);
        assert!((l[1] - 1e-3).abs() < 1e-15 && (l[3] - 1e-1).abs() < 1e-15);
        assert_eq!(phase_grid(1, 4)[2].0, vec![0.5]);
    }

    #[test]
    fn empty_file_uses_defaults() {
        let f = ExperimentFile::parse("").unwrap();
        assert_eq!(f.goodness_scan.x_count, 32);
        assert_eq!(f.model().unwrap().lambda, 220.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentFile::parse("[goodness_scan]\nsize = 3\n").is_err());
    }
}
