//! Scale bookkeeping of the induction: constants, scale maps, the decaying
//! rate sequence, frequency-measure budgets and the initial coupling, all in
//! [`LogScale`] arithmetic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logscale::LogScale;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstants {
    pub c1: f64,
    pub c2: f64,
    /// `None` for toy constants given directly by `c1`.
    pub c3: Option<f64>,
    pub c4: Option<f64>,
    pub b_tilde: Option<usize>,
}

impl ScaleConstants {
    /// `c1 = c3/(4 b̃)`, `c2 = c1²/2`, with `0 < c3 < c4 < 1`, `b̃ ≥ 1`.
    pub fn new(c3: f64, c4: f64, b_tilde: usize) -> Result<Self> {
        if !(0.0 < c3 && c3 < c4 && c4 < 1.0) || b_tilde == 0 {
            return Err(Error::Config(format!(
                "scale constants need 0 < c3 < c4 < 1 and b_tilde >= 1 (got c3 = {c3}, c4 = {c4}, b_tilde = {b_tilde})"
            )));
        }
        let c1 = c3 / (4.0 * b_tilde as f64);
        Ok(ScaleConstants {
            c1,
            c2: c1 * c1 / 2.0,
            c3: Some(c3),
            c4: Some(c4),
            b_tilde: Some(b_tilde),
        })
    }

    /// Constants for executable toy schedules, fixed by `c1 ∈ (0, 1)` alone.
    pub fn toy(c1: f64) -> Result<Self> {
        if !(0.0 < c1 && c1 < 1.0) {
            return Err(Error::Config("toy c1 must lie in (0, 1)".into()));
        }
        Ok(ScaleConstants {
            c1,
            c2: c1 * c1 / 2.0,
            c3: None,
            c4: None,
            b_tilde: None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStep {
    pub n2: LogScale,
    pub n3: LogScale,
}

/// `N2 = N1^{2/c1}`, `N3 = e^{N2^{c2}}`.
pub fn scale_step(n1: LogScale, k: &ScaleConstants) -> Result<ScaleStep> {
    if !(n1 > LogScale::new(1.0)) {
        return Err(Error::input("scale step needs N1 > 1"));
    }
    let n2 = n1.powf(2.0 / k.c1);
    Ok(ScaleStep {
        n2,
        n3: n2.powf(k.c2).exp(),
    })
}

/// `f(x) = e^{x^{c1}}`.
pub fn f_map(x: LogScale, c1: f64) -> LogScale {
    x.powf(c1).exp()
}

/// `g(x) = f(x)^2 = e^{2 x^{c1}}`.
pub fn g_map(x: LogScale, c1: f64) -> LogScale {
    x.powf(c1).mul(2.0).exp()
}

/// `f^{(n)}(x)`.
pub fn f_iterate(x: LogScale, c1: f64, n: usize) -> LogScale {
    (0..n).fold(x, |acc, _| f_map(acc, c1))
}

/// Smallest `x > 0` from which `g(x) ≥ f(x+1)`: `2x^{c1} ≥ (x+1)^{c1}` iff
/// `x ≥ 1/(2^{1/c1} − 1)`.
pub fn g_threshold(c1: f64) -> f64 {
    1.0 / (2f64.powf(1.0 / c1) - 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMaps {
    pub f: LogScale,
    pub g: LogScale,
    pub threshold: f64,
    /// `false` flags an `x` below the threshold.
    pub above_threshold: bool,
}

pub fn schedule_maps(x: LogScale, k: &ScaleConstants) -> ScheduleMaps {
    let threshold = g_threshold(k.c1);
    ScheduleMaps {
        f: f_map(x, k.c1),
        g: g_map(x, k.c1),
        threshold,
        above_threshold: x >= LogScale::new(threshold),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoSequence {
    /// `ρ_0 = 4ρ/5, ρ_1, …, ρ_steps`.
    pub values: Vec<f64>,
    /// `4ρ/5 − Σ_{j≥1}` of every term, i.e. the infimum.
    pub infimum: f64,
    pub target: f64,
    pub holds: bool,
    /// Whether the full series was summed (false if it diverged or the
    /// iteration cap was hit).
    pub converged: bool,
}

const RHO_ITER_CAP: usize = 100_000;

/// Terms `c/√f^{(j)}(N)` for `j ≥ 1`, stopping once they vanish against the
/// running sum, once the sum exceeds `stop_above`, or at the cap.
fn rho_terms(n_start: LogScale, degrade: f64, c1: f64, stop_above: f64) -> (Vec<f64>, bool) {
    let mut terms = Vec::new();
    let mut sum = 0.0;
    // L = ln f^{(j)}(N)
    let mut l = n_start.powf(c1);
    for _ in 0..RHO_ITER_CAP {
        let t = if l.level() == 0 { degrade * (-l.value() / 2.0).exp() } else { 0.0 };
        terms.push(t);
        sum += t;
        if sum > stop_above {
            return (terms, false);
        }
        let prev = terms.len().checked_sub(2).map(|i| terms[i]);
        let shrinking = prev.is_none_or(|p| t <= 0.5 * p);
        if t == 0.0 || (shrinking && t <= 1e-18 * sum) {
            return (terms, true);
        }
        l = l.mul(c1).exp();
    }
    (terms, false)
}

/// `ρ_i = 4ρ/5 − Σ_{j=1}^{i} c/f^{(j)}(N_start)^{1/2}` and whether
/// `inf_i ρ_i ≥ ρ/2`.
pub fn rho_sequence(
    rho: f64,
    n_start: LogScale,
    degrade: f64,
    k: &ScaleConstants,
    steps: usize,
) -> Result<RhoSequence> {
    if !(rho > 0.0) || degrade < 0.0 {
        return Err(Error::input("rho must be positive and the degrade constant nonnegative"));
    }
    let start = 0.8 * rho;
    let target = rho / 2.0;
    let (terms, converged) = if degrade == 0.0 {
        (vec![0.0], true)
    } else {
        rho_terms(n_start, degrade, k.c1, start - target + 1.0)
    };
    let mut values = vec![start];
    let mut acc = 0.0;
    for i in 0..steps {
        acc += terms.get(i).copied().unwrap_or(0.0);
        values.push(start - acc);
    }
    let total: f64 = terms.iter().sum();
    let infimum = if converged { start - total } else { f64::NEG_INFINITY };
    Ok(RhoSequence {
        values,
        infimum,
        target,
        holds: converged && infimum >= target,
        converged,
    })
}

/// Smallest `ln N_start` (to `1e−9` relative) with `inf ρ_i ≥ ρ/2`, by
/// bisection; the condition is monotone since every `f^{(j)}` increases.
pub fn rho_threshold(rho: f64, degrade: f64, k: &ScaleConstants) -> Result<f64> {
    let ok = |t: f64| -> Result<bool> { Ok(rho_sequence(rho, LogScale::from_ln(t), degrade, k, 0)?.holds) };
    let mut hi = 1.0;
    while !ok(hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::input("no threshold below exp(1e12)"));
        }
    }
    let mut lo = 0.0;
    if ok(lo)? {
        return Ok(lo);
    }
    while hi - lo > 1e-9 * hi {
        let mid = 0.5 * (lo + hi);
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `Σ_{n ≥ a} n^{−5}`: exact partial sums up to `a + 1000`, then
/// Euler–Maclaurin with three correction terms.
pub fn inverse_fifth_tail(a: u64) -> f64 {
    let a = a.max(1);
    let m = a + 1000;
    let head: f64 = (a..m).rev().map(|n| (n as f64).powi(-5)).sum();
    let x = m as f64;
    let em = x.powi(-4) / 4.0 + x.powi(-5) / 2.0 + 5.0 / 12.0 * x.powi(-6) - 7.0 / 24.0 * x.powi(-8)
        + 0.5 * x.powi(-10);
    head + em
}

/// `Σ_{n=a}^{b} n^{−5}` for `1 ≤ a`, `b` possibly astronomically large.
pub fn inverse_fifth_sum(a: u64, b: LogScale) -> f64 {
    if b < LogScale::new(a as f64) {
        return 0.0;
    }
    let upper = if b.to_f64() < 1e15 {
        inverse_fifth_tail(b.to_f64().floor() as u64 + 1)
    } else {
        // the tail beyond 1e15 is below 2.5e−61
        0.0
    };
    inverse_fifth_tail(a) - upper
}

/// Larger root in `t = ln N` of `c3 e^{c1 t} = 5t`, above which
/// `f(N)^{c3} ≥ N^5`.
pub fn omega_threshold_ln(k: &ScaleConstants) -> Result<f64> {
    let c3 = k.c3.ok_or_else(|| Error::input("omega budget needs c3"))?;
    let h = |t: f64| c3.ln() + k.c1 * t - (5.0 * t).ln();
    // h is convex in t with minimum at t = 1/c1
    let mut lo = 1.0 / k.c1;
    if h(lo) >= 0.0 {
        return Ok(0.0);
    }
    let mut hi = 2.0 * lo;
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaBudget {
    /// `Σ_{N=a}^{b} N^{−5}`.
    pub excluded: f64,
    pub threshold_ln: f64,
    /// `f(N)^{c3} ≥ N^5` over the whole range.
    pub comparison_ok: bool,
}

/// Excluded frequency measure of one induction block `[a, b]`.
pub fn omega_budget(a: u64, b: LogScale, k: &ScaleConstants) -> Result<OmegaBudget> {
    let threshold_ln = omega_threshold_ln(k)?;
    let empty = b < LogScale::new(a as f64);
    Ok(OmegaBudget {
        excluded: if empty { 0.0 } else { inverse_fifth_sum(a, b) },
        threshold_ln,
        comparison_ok: empty || (a as f64).ln() >= threshold_ln,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialCoupling {
    pub log_lambda_min: f64,
    pub delta: f64,
    pub log_delta: f64,
}

/// `λ ≥ 4 e^{√N̄} (2N̄+1)^d` and `δ = ½ e^{−√N̄}`.
pub fn initial_lambda(n_bar: LogScale, d: usize) -> InitialCoupling {
    let sqrt_n = n_bar.powf(0.5).to_f64();
    let log_two_n = n_bar.mul(2.0).add(1.0).ln_f64();
    let log_delta = -(2f64.ln()) - sqrt_n;
    InitialCoupling {
        log_lambda_min: 4f64.ln() + sqrt_n + d as f64 * log_two_n,
        delta: log_delta.exp(),
        log_delta,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub block: usize,
    /// Scales `[g(f^{(i−1)}(N1)), g(f^{(i)}(N1))]` covered by the block.
    pub n_from: LogScale,
    pub n_to: LogScale,
    pub rho_param: f64,
    /// `ln` of the measure target `e^{−N^{c1}}` at `n_from`, i.e. `−n_from^{c1}`.
    pub log_measure_target: LogScale,
    pub omega_excluded: f64,
}

/// Per-block records of the induction from `N1 = ln ln λ`.
pub fn property_p_ledger(
    rho: f64,
    n1: LogScale,
    degrade: f64,
    k: &ScaleConstants,
    blocks: usize,
) -> Result<Vec<LedgerRecord>> {
    let rhos = rho_sequence(rho, n1, degrade, k, blocks)?;
    let mut out = Vec::with_capacity(blocks);
    let mut lo = n1;
    for i in 1..=blocks {
        let hi = f_map(lo, k.c1);
        let start = lo.to_f64();
        let excluded = if start < 1e15 {
            inverse_fifth_sum(start.floor() as u64 + (i > 1) as u64, hi)
        } else {
            0.0
        };
        out.push(LedgerRecord {
            block: i,
            n_from: g_map(lo, k.c1),
            n_to: g_map(hi, k.c1),
            rho_param: rhos.values[i],
            log_measure_target: g_map(lo, k.c1).powf(k.c1),
            omega_excluded: excluded,
        });
        lo = hi;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paper_constants() {
        let k = ScaleConstants::new(0.04, 0.2, 1).unwrap();
        assert_eq!(k.c1, 0.01);
        assert_eq!(k.c2, 5e-5);
        assert!(ScaleConstants::new(0.3, 0.2, 1).is_err());
        assert!(ScaleConstants::new(0.1, 0.2, 0).is_err());
    }

    #[test]
    fn toy_step() {
        let k = ScaleConstants::toy(0.5).unwrap();
        let s = scale_step(LogScale::new(100.0), &k).unwrap();
        assert!((s.n2.to_f64() - 1e8).abs() < 1e-12 * 1e8);
        assert!((s.n3.ln_f64() - 10.0).abs() < 1e-12 * 10.0);
        let m = schedule_maps(LogScale::new(100.0), &k);
        assert!((m.f.to_f64() - 10f64.exp()).abs() < 1e-12 * 22026.47);
        assert!((m.f.to_f64() - 22026.465_794_806_718).abs() < 1e-8);
        assert!(m.above_threshold);
        assert!((g_threshold(0.5) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn g_dominates_shifted_f_above_threshold() {
        for c1 in [0.01, 0.1, 0.5, 0.9] {
            let x0 = g_threshold(c1);
            for i in 0..400 {
                let x = LogScale::new(x0 * (1.0 + 1e-9) + i as f64 * 0.37 + (i as f64).powi(3));
                assert!(g_map(x, c1) >= f_map(x.add(1.0), c1), "c1 = {c1}, x = {x}");
            }
            if x0 > 1e-6 {
                let below = LogScale::new(x0 * 0.5);
                assert!(g_map(below, c1) < f_map(below.add(1.0), c1));
            }
        }
    }

    #[test]
    fn rho_examples() {
        let k = ScaleConstants::toy(0.5).unwrap();
        let r = rho_sequence(1.0, LogScale::new(50.0), 0.0, &k, 5).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.8) && r.holds);
        // f(N) ≥ 100 once N^{1/2} ≥ ln 100
        let n = LogScale::new(100f64.ln().powi(2));
        let r = rho_sequence(1.0, n, 1.0, &k, 6).unwrap();
        let first = 0.8 - r.values[1];
        assert!((first - 0.1).abs() < 1e-12);
        assert!(0.8 - r.infimum < 0.3 && r.holds);
        // the increments shrink doubly exponentially
        let d: Vec<f64> = r.values.windows(2).map(|w| w[0] - w[1]).collect();
        assert!(d[1] / d[0] < 0.1 && d[2] / d[1] < 1e-10);
    }

    #[test]
    fn paper_rho_threshold() {
        let k = ScaleConstants::new(0.04, 0.2, 1).unwrap();
        let t = rho_threshold(1.0, 1.0, &k).unwrap();
        // the upper fixed point of L ↦ e^{c1 L} sits near 647.3
        assert!(t > 640.0 && t < 660.0, "{t}");
        for s in [1.0001, 1.01, 1.5, 10.0] {
            let n1 = LogScale::from_ln(t * s);
            let r = rho_sequence(1.0, n1, 1.0, &k, 50).unwrap();
            assert!(r.holds && r.values.iter().all(|&v| v >= 0.5));
        }
        assert!(!rho_sequence(1.0, LogScale::from_ln(t * 0.99), 1.0, &k, 50).unwrap().holds);
    }

    #[test]
    fn fifth_power_tail() {
        // ζ(5) minus the first nine terms
        let zeta5 = 1.036_927_755_143_369_9;
        let head: f64 = (1..10).map(|n| (n as f64).powi(-5)).sum();
        let tail = inverse_fifth_tail(10);
        assert!((tail - (zeta5 - head)).abs() < 1e-15);
        assert!((tail - 3.0414e-5).abs() < 1e-8);
        let brute: f64 = (10..2_000_000u64).rev().map(|n| (n as f64).powi(-5)).sum();
        assert!((tail - brute).abs() < 1e-10);
        assert_eq!(inverse_fifth_sum(10, LogScale::new(9.0)), 0.0);
        let block: f64 = (10..=50).map(|n| (n as f64).powi(-5)).sum();
        assert!((inverse_fifth_sum(10, LogScale::new(50.0)) - block).abs() < 1e-17);
    }

    #[test]
    fn omega_threshold_for_paper_constants() {
        let k = ScaleConstants::new(0.04, 0.2, 1).unwrap();
        let t = omega_threshold_ln(&k).unwrap();
        assert!((0.04 * (0.01 * t).exp() - 5.0 * t).abs() < 1e-6 * t);
        assert!((t - 1190.0).abs() < 2.0, "{t}");
        let b = omega_budget(10, LogScale::new(100.0), &k).unwrap();
        assert!(!b.comparison_ok);
        let e = omega_budget(10, LogScale::new(5.0), &k).unwrap();
        assert_eq!(e.excluded, 0.0);
    }

    #[test]
    fn initial_coupling() {
        let c = initial_lambda(LogScale::new(100.0), 1);
        let want = 4.0 * 10f64.exp() * 201.0;
        assert!((c.log_lambda_min.exp() - want).abs() < 1e-9 * want);
        assert!((c.log_lambda_min.exp() - 1.771e7).abs() < 1e4);
        assert!((c.delta - 0.5 * (-10f64).exp()).abs() < 1e-18);
        // (ibc) at every N ≤ N̄
        for n in 1..=100u64 {
            let need = (2.0 / c.delta).ln() + ((2 * n + 1) as f64).ln();
            assert!(need <= c.log_lambda_min + 1e-12);
        }
        assert!(initial_lambda(LogScale::new(100.0), 2).log_lambda_min > c.log_lambda_min);
        assert!(initial_lambda(LogScale::new(101.0), 1).log_lambda_min > c.log_lambda_min);
    }

    #[test]
    fn ledger_is_monotone() {
        let k = ScaleConstants::toy(0.5).unwrap();
        let l = property_p_ledger(1.0, LogScale::new(30.0), 1.0, &k, 4).unwrap();
        for w in l.windows(2) {
            assert!(w[1].rho_param <= w[0].rho_param);
            assert!(w[1].log_measure_target > w[0].log_measure_target);
            assert!(w[1].n_from >= w[0].n_to || w[1].n_from == w[0].n_to);
        }
        assert!(l[0].omega_excluded > 0.0);
    }

    proptest! {
        #[test]
        fn derived_constants_are_ordered(c3 in 0.001f64..0.9, gap in 0.001f64..0.09, bt in 1usize..6) {
            let k = ScaleConstants::new(c3, (c3 + gap).min(0.999), bt).unwrap();
            prop_assert!(k.c2 < k.c1 && k.c1 < c3);
        }

        #[test]
        fn step_is_monotone(a in 1.5f64..1e6, b in 1.5f64..1e6) {
            let k = ScaleConstants::new(0.04, 0.2, 1).unwrap();
            let (sa, sb) = (scale_step(LogScale::new(a), &k).unwrap(), scale_step(LogScale::new(b), &k).unwrap());
            if a < b {
                prop_assert!(sa.n3 < sb.n3 || sa.n3 == sb.n3);
            }
            prop_assert!(f_map(LogScale::new(a.min(b)), 0.3) <= f_map(LogScale::new(a.max(b)), 0.3));
        }

        #[test]
        fn f_matches_direct_evaluation(x in 1.0f64..1e4, c1 in 0.05f64..0.6) {
            let direct = x.powf(c1).exp();
            prop_assume!(direct.is_finite());
            let v = f_map(LogScale::new(x), c1).to_f64();
            prop_assert!((v - direct).abs() <= 1e-12 * direct);
        }
    }
}
