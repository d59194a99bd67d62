//! The operator family `H(x) = S + λ v(x + nω) δ_{nn'}`: Toeplitz kernels,
//! block phase structure, trigonometric potentials and restricted matrices.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{LatticePoint, PointSet};

/// Block sizes `(b_1, …, b_d)`; lattice axis `j` rotates phase block `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockStructure(Vec<usize>);

impl TryFrom<Vec<usize>> for BlockStructure {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        BlockStructure::new(v)
    }
}

impl From<BlockStructure> for Vec<usize> {
    fn from(b: BlockStructure) -> Self {
        b.0
    }
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::input("block sizes must be a nonempty list of positive integers"));
        }
        Ok(BlockStructure(sizes))
    }

    /// One phase coordinate per lattice axis.
    pub fn scalar(d: usize) -> Self {
        BlockStructure(vec![1; d])
    }

    pub fn sizes(&self) -> &[usize] {
        &self.0
    }

    /// Lattice dimension `d`.
    pub fn d(&self) -> usize {
        self.0.len()
    }

    /// Torus dimension `b = Σ b_i`.
    pub fn b(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn b_tilde(&self) -> usize {
        *self.0.iter().max().unwrap()
    }

    /// Coordinate range of block `j`.
    pub fn range(&self, j: usize) -> std::ops::Range<usize> {
        let start: usize = self.0[..j].iter().sum();
        start..start + self.0[j]
    }
}

fn reduce(t: f64) -> f64 {
    let r = t.rem_euclid(1.0);
    // rem_euclid can return 1.0 for tiny negative inputs
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A point of `T^b`, coordinates in `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Phase(pub Vec<f64>);

impl Phase {
    pub fn new(coords: Vec<f64>) -> Self {
        Phase(coords.into_iter().map(reduce).collect())
    }

    pub fn zero(b: usize) -> Self {
        Phase(vec![0.0; b])
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// `x_j^¬`: the coordinates of every block except `j`.
    pub fn section(&self, blocks: &BlockStructure, j: usize) -> Vec<f64> {
        let r = blocks.range(j);
        self.0
            .iter()
            .enumerate()
            .filter(|(i, _)| !r.contains(i))
            .map(|(_, v)| *v)
            .collect()
    }

    /// Reassemble a phase from block `j` and a section.
    pub fn from_section(blocks: &BlockStructure, j: usize, theta: &[f64], section: &[f64]) -> Phase {
        let r = blocks.range(j);
        let mut out = Vec::with_capacity(blocks.b());
        out.extend_from_slice(&section[..r.start]);
        out.extend_from_slice(theta);
        out.extend_from_slice(&section[r.start..]);
        Phase::new(out)
    }
}

/// Frequency vector `ω ∈ T^b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Frequency(pub Vec<f64>);

impl Frequency {
    pub fn new(coords: Vec<f64>) -> Self {
        Frequency(coords.into_iter().map(reduce).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }
}

/// `(√5 − 1)/2`.
pub const GOLDEN_MEAN: f64 = 0.618_033_988_749_894_9;

/// `x + nω mod 1`, block `j` advanced by `n_j` times block `j` of `ω`.
pub fn shift_phase(
    x: &Phase,
    omega: &Frequency,
    n: &LatticePoint,
    blocks: &BlockStructure,
) -> Result<Phase> {
    let b = blocks.b();
    if x.0.len() != b || omega.0.len() != b {
        return Err(Error::input(format!(
            "phase/frequency length ({}, {}) does not match block structure b = {b}",
            x.0.len(),
            omega.0.len()
        )));
    }
    if n.dim() != blocks.d() {
        return Err(Error::DimensionMismatch {
            expected: blocks.d(),
            got: n.dim(),
        });
    }
    Ok(shift_raw(&x.0, &omega.0, n.coords(), blocks))
}

/// `x + nω` blockwise, reduced to `[0, 1)`; lengths are not checked.
pub fn shift_raw(x: &[f64], omega: &[f64], n: &[i64], blocks: &BlockStructure) -> Phase {
    let mut out = x.to_vec();
    for (j, nj) in n.iter().enumerate() {
        for i in blocks.range(j) {
            out[i] = reduce(out[i] + *nj as f64 * omega[i]);
        }
    }
    Phase(out)
}

// ---------------------------------------------------------------------------
// Trigonometric potentials
// ---------------------------------------------------------------------------

/// `a cos(2π k·x) + b sin(2π k·x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Real trigonometric polynomial on `T^b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigPotential {
    pub terms: Vec<TrigTerm>,
}

impl TrigPotential {
    pub fn new(terms: Vec<TrigTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::input("a potential needs at least one term"));
        }
        let dim = terms[0].k.len();
        if terms.iter().any(|t| t.k.len() != dim) {
            return Err(Error::input("potential terms disagree on the torus dimension"));
        }
        if terms.iter().any(|t| !t.cos.is_finite() || !t.sin.is_finite()) {
            return Err(Error::input("potential coefficients must be finite"));
        }
        Ok(TrigPotential { terms })
    }

    /// `cos 2πθ` on `T^1`.
    pub fn cosine() -> Self {
        Self::sum_of_cosines(1)
    }

    /// `Σ_i cos 2πx_i` on `T^b`.
    pub fn sum_of_cosines(b: usize) -> Self {
        let terms = (0..b)
            .map(|i| {
                let mut k = vec![0; b];
                k[i] = 1;
                TrigTerm { k, cos: 1.0, sin: 0.0 }
            })
            .collect();
        TrigPotential { terms }
    }

    pub fn constant(b: usize, c: f64) -> Self {
        TrigPotential {
            terms: vec![TrigTerm {
                k: vec![0; b],
                cos: c,
                sin: 0.0,
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.terms[0].k.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let arg: f64 = t.k.iter().zip(x).map(|(k, v)| *k as f64 * v).sum::<f64>();
                // reduce before scaling so large k·x keeps full precision
                let arg = TAU * reduce(arg);
                let mut s = 0.0;
                if t.cos != 0.0 {
                    s += t.cos * arg.cos();
                }
                if t.sin != 0.0 {
                    s += t.sin * arg.sin();
                }
                s
            })
            .sum()
    }

    /// `Σ |a| + |b|`, a bound on `sup |v|`.
    pub fn sup_bound(&self) -> f64 {
        self.terms.iter().map(|t| t.cos.abs() + t.sin.abs()).sum()
    }

    /// Bound on `|v(x + iy)|` for `|y_i| ≤ r`: `Σ (|a|+|b|) cosh(2π |k|_1 r)`.
    pub fn complex_strip_bound(&self, r: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let k1: i64 = t.k.iter().map(|k| k.abs()).sum();
                (t.cos.abs() + t.sin.abs()) * (TAU * k1 as f64 * r).cosh()
            })
            .sum()
    }

    /// `max_j |k_j|` restricted to the coordinates in `range`.
    pub fn degree_in(&self, range: std::ops::Range<usize>) -> i64 {
        self.terms
            .iter()
            .filter(|t| t.cos != 0.0 || t.sin != 0.0)
            .map(|t| t.k[range.clone()].iter().map(|k| k.abs()).sum::<i64>())
            .max()
            .unwrap_or(0)
    }
}

/// `v(x + nω)` for every `n`.
pub fn evaluate_potential(v: &TrigPotential, x: &Phase) -> Result<f64> {
    if x.0.len() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: x.0.len(),
        });
    }
    Ok(v.eval(&x.0))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionOscillation {
    pub block: usize,
    /// Minimum over sampled sections of `max_θ v − min_θ v`.
    pub min_oscillation: f64,
    /// Section achieving the minimum.
    pub witness: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NondegeneracyReport {
    pub blocks: Vec<SectionOscillation>,
    pub tolerance: f64,
    pub nondegenerate: bool,
}

fn grid_points(dim: usize, per_axis: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![]];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|pre| {
                (0..per_axis).map(move |i| {
                    let mut v = pre.clone();
                    v.push(i as f64 / per_axis as f64);
                    v
                })
            })
            .collect();
    }
    out
}

/// Sample each block's sections on a `grid^{b−b_j}` lattice and measure the
/// oscillation of `θ ↦ v(…, θ, …)` on a `grid^{b_j}` lattice.
pub fn check_nondegeneracy(
    v: &TrigPotential,
    blocks: &BlockStructure,
    grid: usize,
) -> Result<NondegeneracyReport> {
    if grid < 8 {
        return Err(Error::input("non-degeneracy grid needs at least 8 points per axis"));
    }
    if v.dim() != blocks.b() {
        return Err(Error::DimensionMismatch {
            expected: blocks.b(),
            got: v.dim(),
        });
    }
    let tolerance = 1e-9;
    let mut out = Vec::new();
    for j in 0..blocks.d() {
        let bj = blocks.sizes()[j];
        let thetas = grid_points(bj, grid);
        let mut best = (f64::INFINITY, Vec::new());
        for sec in grid_points(blocks.b() - bj, grid) {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for th in &thetas {
                let x = Phase::from_section(blocks, j, th, &sec);
                let val = v.eval(&x.0);
                lo = lo.min(val);
                hi = hi.max(val);
            }
            if hi - lo < best.0 {
                best = (hi - lo, sec);
            }
        }
        out.push(SectionOscillation {
            block: j,
            min_oscillation: best.0,
            witness: best.1,
        });
    }
    let nondegenerate = out.iter().all(|s| s.min_oscillation > tolerance);
    Ok(NondegeneracyReport {
        blocks: out,
        tolerance,
        nondegenerate,
    })
}

// ---------------------------------------------------------------------------
// Toeplitz kernels
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Nearest neighbours in the ℓ1 sense.
    LaplacianL1,
    /// Nearest neighbours in the sup-norm sense.
    LaplacianSup,
    /// `S(k) = e^{−ρ|k|}` off the diagonal.
    ExpDecay,
    /// Fourier coefficients of a trigonometric symbol.
    FourierSymbol,
    /// `S = 0`.
    Zero,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::LaplacianL1 => "laplacian_l1",
            KernelFamily::LaplacianSup => "laplacian_sup",
            KernelFamily::ExpDecay => "exp_decay",
            KernelFamily::FourierSymbol => "fourier_symbol",
            KernelFamily::Zero => "zero",
        }
    }
}

/// Translation-invariant symmetric kernel, stored densely on `[−R, R]^d`.
///
/// Every entry satisfies `|S(k)| ≤ amplitude · e^{−ρ|k|}`; `amplitude` is
/// computed on construction and equals 1 for `exp_decay`.
#[derive(Clone, Debug)]
pub struct ToeplitzKernel {
    family: KernelFamily,
    dim: usize,
    rho: f64,
    radius: u64,
    amplitude: f64,
    table: Vec<f64>,
}

/// Smallest `R` with `e^{−ρR} < 1e−14`.
pub fn default_truncation(rho: f64) -> u64 {
    (14.0 * std::f64::consts::LN_10 / rho).floor() as u64 + 1
}

impl ToeplitzKernel {
    fn from_fn(
        family: KernelFamily,
        dim: usize,
        rho: f64,
        radius: u64,
        f: impl Fn(&[i64]) -> f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::input("kernel dimension must be positive"));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::input("kernel decay rate rho must be positive"));
        }
        let side = 2 * radius as usize + 1;
        let len = side
            .checked_pow(dim as u32)
            .filter(|l| *l <= 50_000_000)
            .ok_or_else(|| Error::input("kernel table too large; raise rho"))?;
        let mut table = vec![0.0; len];
        let mut amplitude: f64 = 0.0;
        let mut off = vec![-(radius as i64); dim];
        for slot in table.iter_mut() {
            let val = f(&off);
            *slot = val;
            let k = off.iter().map(|c| c.unsigned_abs()).max().unwrap() as f64;
            amplitude = amplitude.max(val.abs() * (rho * k).exp());
            for a in (0..dim).rev() {
                if off[a] < radius as i64 {
                    off[a] += 1;
                    break;
                }
                off[a] = -(radius as i64);
            }
        }
        let kernel = ToeplitzKernel {
            family,
            dim,
            rho,
            radius,
            amplitude,
            table,
        };
        kernel.verify_symmetric()?;
        Ok(kernel)
    }

    fn verify_symmetric(&self) -> Result<()> {
        let r = self.radius as i64;
        for (i, v) in self.table.iter().enumerate() {
            let off = self.offset_of(i);
            let neg: Vec<i64> = off.iter().map(|c| -c).collect();
            if self.value(&neg) != *v {
                return Err(Error::input(format!(
                    "kernel is not symmetric at offset {:?} (radius {r})",
                    off
                )));
            }
        }
        Ok(())
    }

    fn offset_of(&self, mut idx: usize) -> Vec<i64> {
        let side = 2 * self.radius as usize + 1;
        let mut off = vec![0; self.dim];
        for a in (0..self.dim).rev() {
            off[a] = (idx % side) as i64 - self.radius as i64;
            idx /= side;
        }
        off
    }

    pub fn laplacian_l1(dim: usize, rho: f64) -> Result<Self> {
        Self::from_fn(KernelFamily::LaplacianL1, dim, rho, 1, |k| {
            if k.iter().map(|c| c.abs()).sum::<i64>() == 1 {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn laplacian_sup(dim: usize, rho: f64) -> Result<Self> {
        Self::from_fn(KernelFamily::LaplacianSup, dim, rho, 1, |k| {
            if k.iter().any(|c| *c != 0) {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn exp_decay(dim: usize, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::input("kernel decay rate rho must be positive"));
        }
        Self::exp_decay_truncated(dim, rho, default_truncation(rho))
    }

    pub fn exp_decay_truncated(dim: usize, rho: f64, radius: u64) -> Result<Self> {
        Self::from_fn(KernelFamily::ExpDecay, dim, rho, radius, |k| {
            let n = k.iter().map(|c| c.unsigned_abs()).max().unwrap();
            if n == 0 {
                0.0
            } else {
                (-rho * n as f64).exp()
            }
        })
    }

    pub fn zero(dim: usize) -> Self {
        ToeplitzKernel {
            family: KernelFamily::Zero,
            dim,
            rho: 1.0,
            radius: 0,
            amplitude: 0.0,
            table: vec![0.0],
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn radius(&self) -> u64 {
        self.radius
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// `S(k)`, zero outside the truncation cube.
    pub fn value(&self, k: &[i64]) -> f64 {
        let r = self.radius as i64;
        let side = 2 * r + 1;
        let mut idx = 0i64;
        for c in k {
            if c.abs() > r {
                return 0.0;
            }
            idx = idx * side + c + r;
        }
        self.table[idx as usize]
    }

    /// `S(n, n')`.
    pub fn entry(&self, n: &LatticePoint, np: &LatticePoint) -> f64 {
        let k: Vec<i64> = n.coords().iter().zip(np.coords()).map(|(a, b)| a - b).collect();
        self.value(&k)
    }

    /// Nonzero entries `(k, S(k))` in lexicographic order of `k`.
    pub fn nonzero(&self) -> Vec<(Vec<i64>, f64)> {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (self.offset_of(i), *v))
            .collect()
    }

    /// `Σ_k |S(k)|`, the row sum that bounds `‖S‖` by the Schur test.
    pub fn row_sum(&self) -> f64 {
        self.table.iter().map(|v| v.abs()).sum()
    }
}

/// `(S(k) + S(−k))` pairs only differ in sign convention; the symbol keeps one
/// representative per pair with the doubled coefficient.
fn positive_representative(k: &[i64]) -> bool {
    match k.iter().find(|c| **c != 0) {
        None => true,
        Some(c) => *c > 0,
    }
}

/// The trigonometric symbol `Σ_k S(k) e^{2πi k·θ}` written as a cosine sum.
pub fn symbol_of_kernel(kernel: &ToeplitzKernel) -> TrigPotential {
    let terms: Vec<TrigTerm> = kernel
        .nonzero()
        .into_iter()
        .filter(|(k, _)| positive_representative(k))
        .map(|(k, v)| {
            let zero = k.iter().all(|c| *c == 0);
            TrigTerm {
                k,
                cos: if zero { v } else { 2.0 * v },
                sin: 0.0,
            }
        })
        .collect();
    if terms.is_empty() {
        TrigPotential::constant(kernel.dim(), 0.0)
    } else {
        TrigPotential { terms }
    }
}

/// Kernel of Fourier coefficients `F(k) = ŝ(k)` of a real trig polynomial.
///
/// Sine terms produce imaginary coefficients and are rejected.
pub fn dual_kernel_from_symbol(s: &TrigPotential, rho: f64) -> Result<ToeplitzKernel> {
    let mut coeffs: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for t in &s.terms {
        let zero = t.k.iter().all(|c| *c == 0);
        if t.sin != 0.0 && !zero {
            return Err(Error::input(
                "symbol has sine terms; its kernel would not be symmetric",
            ));
        }
        if zero {
            *coeffs.entry(t.k.clone()).or_default() += t.cos;
        } else {
            let neg: Vec<i64> = t.k.iter().map(|c| -c).collect();
            *coeffs.entry(t.k.clone()).or_default() += t.cos / 2.0;
            *coeffs.entry(neg).or_default() += t.cos / 2.0;
        }
    }
    let radius = coeffs
        .keys()
        .map(|k| k.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0))
        .max()
        .unwrap_or(0);
    ToeplitzKernel::from_fn(KernelFamily::FourierSymbol, s.dim(), rho, radius, |k| {
        coeffs.get(k).copied().unwrap_or(0.0)
    })
}

// ---------------------------------------------------------------------------
// Model configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub kernel: ToeplitzKernel,
    pub potential: TrigPotential,
    pub blocks: BlockStructure,
    pub lambda: f64,
    pub omega: Frequency,
}

impl ModelConfig {
    pub fn new(
        kernel: ToeplitzKernel,
        potential: TrigPotential,
        blocks: BlockStructure,
        lambda: f64,
        omega: Frequency,
    ) -> Result<Self> {
        if !(lambda > 1.0) || !lambda.is_finite() {
            return Err(Error::Config("lambda must exceed 1".into()));
        }
        if kernel.dim() != blocks.d() {
            return Err(Error::Config(format!(
                "kernel dimension {} does not match the {} blocks",
                kernel.dim(),
                blocks.d()
            )));
        }
        if potential.dim() != blocks.b() || omega.0.len() != blocks.b() {
            return Err(Error::Config(format!(
                "potential and omega must live on T^{}",
                blocks.b()
            )));
        }
        Ok(ModelConfig {
            kernel,
            potential,
            blocks,
            lambda,
            omega,
        })
    }

    pub fn d(&self) -> usize {
        self.blocks.d()
    }

    pub fn b(&self) -> usize {
        self.blocks.b()
    }

    /// Same model with a different coupling.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ModelConfig::new(
            self.kernel.clone(),
            self.potential.clone(),
            self.blocks.clone(),
            lambda,
            self.omega.clone(),
        )
    }

    pub fn with_omega(&self, omega: Frequency) -> Result<Self> {
        ModelConfig::new(
            self.kernel.clone(),
            self.potential.clone(),
            self.blocks.clone(),
            self.lambda,
            omega,
        )
    }

    /// `v(x + nω)`.
    pub fn potential_at(&self, x: &Phase, n: &[i64]) -> f64 {
        self.potential
            .eval(&shift_raw(&x.0, &self.omega.0, n, &self.blocks).0)
    }

    /// Bound `C` on the spectrum of `λ^{-1} H`: `sup|v| + λ^{-1} Σ_k |S(k)|`.
    pub fn spectral_bound(&self) -> f64 {
        self.potential.sup_bound() + self.kernel.row_sum() / self.lambda
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.build()
    }

    pub fn to_file(&self) -> ModelFile {
        let family = self.kernel.family();
        ModelFile {
            lambda: self.lambda,
            blocks: self.blocks.sizes().to_vec(),
            omega: self.omega.0.clone(),
            kernel: KernelFile {
                family,
                rho: self.kernel.rho(),
                radius: matches!(family, KernelFamily::ExpDecay).then_some(self.kernel.radius()),
                symbol: matches!(family, KernelFamily::FourierSymbol)
                    .then(|| symbol_of_kernel(&self.kernel).terms),
            },
            potential: PotentialFile {
                terms: self.potential.terms.clone(),
            },
        }
    }
}

/// On-disk shape of a model configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub lambda: f64,
    pub blocks: Vec<usize>,
    pub omega: Vec<f64>,
    pub kernel: KernelFile,
    pub potential: PotentialFile,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub family: KernelFamily,
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Truncation radius for `exp_decay`; default from [`default_truncation`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<u64>,
    /// Symbol terms for `fourier_symbol`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol: Option<Vec<TrigTerm>>,
}

fn default_rho() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialFile {
    pub terms: Vec<TrigTerm>,
}

impl ModelFile {
    pub fn build(&self) -> Result<ModelConfig> {
        if !(self.lambda > 1.0) {
            return Err(Error::Config("lambda must exceed 1".into()));
        }
        let blocks = BlockStructure::new(self.blocks.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let d = blocks.d();
        let cfg = |e: Error| Error::Config(e.to_string());
        let kernel = match self.kernel.family {
            KernelFamily::LaplacianL1 => ToeplitzKernel::laplacian_l1(d, self.kernel.rho).map_err(cfg)?,
            KernelFamily::LaplacianSup => ToeplitzKernel::laplacian_sup(d, self.kernel.rho).map_err(cfg)?,
            KernelFamily::ExpDecay => match self.kernel.radius {
                Some(r) => ToeplitzKernel::exp_decay_truncated(d, self.kernel.rho, r).map_err(cfg)?,
                None => ToeplitzKernel::exp_decay(d, self.kernel.rho).map_err(cfg)?,
            },
            KernelFamily::FourierSymbol => {
                let terms = self
                    .kernel
                    .symbol
                    .clone()
                    .ok_or_else(|| Error::Config("fourier_symbol kernel needs kernel.symbol".into()))?;
                let s = TrigPotential::new(terms).map_err(cfg)?;
                dual_kernel_from_symbol(&s, self.kernel.rho).map_err(cfg)?
            }
            KernelFamily::Zero => ToeplitzKernel::zero(d),
        };
        let potential = TrigPotential::new(self.potential.terms.clone()).map_err(cfg)?;
        ModelConfig::new(kernel, potential, blocks, self.lambda, Frequency::new(self.omega.clone()))
    }
}

/// The matrix of `λ^{-1} H_Λ(x) − E`: `M(n,n) = v(x+nω) − E + λ^{-1}S(0)`,
/// `M(n,n') = λ^{-1} S(n−n')`. Rows follow the lexicographic order of `Λ`.
pub fn assemble_restricted(cfg: &ModelConfig, region: &PointSet, x: &Phase, e: f64) -> Result<DMatrix<f64>> {
    if region.is_empty() {
        return Err(Error::input("cannot assemble on an empty region"));
    }
    if region.dim() != cfg.d() {
        return Err(Error::DimensionMismatch {
            expected: cfg.d(),
            got: region.dim(),
        });
    }
    if x.0.len() != cfg.b() {
        return Err(Error::DimensionMismatch {
            expected: cfg.b(),
            got: x.0.len(),
        });
    }
    let pts = region.points();
    let n = pts.len();
    let inv = 1.0 / cfg.lambda;
    let radius = cfg.kernel.radius() as i64;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut off = vec![0i64; cfg.d()];
    for i in 0..n {
        let pi = pts[i].coords();
        m[(i, i)] = cfg.potential_at(x, pi) - e + inv * cfg.kernel.value(&vec![0; cfg.d()]);
        for j in i + 1..n {
            let pj = pts[j].coords();
            let mut far = false;
            for a in 0..off.len() {
                off[a] = pi[a] - pj[a];
                far |= off[a].abs() > radius;
            }
            if far {
                continue;
            }
            let s = cfg.kernel.value(&off);
            if s != 0.0 {
                let v = inv * s;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
    }
    Ok(m)
}

/// The coupling block `λ^{-1} S` between two disjoint regions (rows `a`, columns `b`).
pub fn coupling_block(cfg: &ModelConfig, a: &PointSet, b: &PointSet) -> DMatrix<f64> {
    let inv = 1.0 / cfg.lambda;
    let mut m = DMatrix::<f64>::zeros(a.len(), b.len());
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            let s = cfg.kernel.entry(p, q);
            if s != 0.0 {
                m[(i, j)] = inv * s;
            }
        }
    }
    m
}
