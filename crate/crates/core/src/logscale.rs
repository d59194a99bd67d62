//! Towers of exponentials for scales far beyond `f64`.
//!
//! A [`LogScale`] is `exp^level(value)`. It is kept canonical: the level is
//! the smallest one at which the value is finite, so values at level 0 are
//! ordinary reals and every level ≥ 1 value exceeds `ln(f64::MAX)`.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// `ln(f64::MAX)`.
const LN_MAX: f64 = 709.782_712_893_384;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogScale {
    level: u32,
    value: f64,
}

impl LogScale {
    pub fn new(value: f64) -> Self {
        assert!(value.is_finite(), "LogScale needs a finite value");
        LogScale { level: 0, value }
    }

    /// `exp^level(value)`, canonicalized.
    pub fn tower(level: u32, value: f64) -> Self {
        assert!(value.is_finite(), "LogScale needs a finite value");
        let mut s = LogScale { level, value };
        while s.level > 0 && s.value <= LN_MAX {
            s.value = s.value.exp();
            s.level -= 1;
        }
        s
    }

    /// The number whose natural logarithm is `l`.
    pub fn from_ln(l: f64) -> Self {
        Self::tower(1, l)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// As an `f64`; `+∞` above the representable range.
    pub fn to_f64(&self) -> f64 {
        if self.level == 0 {
            self.value
        } else {
            f64::INFINITY
        }
    }

    pub fn ln(&self) -> LogScale {
        if self.level == 0 {
            assert!(self.value > 0.0, "logarithm of a non-positive value");
            LogScale::new(self.value.ln())
        } else {
            LogScale {
                level: self.level - 1,
                value: self.value,
            }
        }
    }

    /// `ln` as an `f64`; `+∞` at level 2 and above.
    pub fn ln_f64(&self) -> f64 {
        self.ln().to_f64()
    }

    pub fn exp(&self) -> LogScale {
        Self::tower(self.level + 1, self.value)
    }

    /// `p · self` for `p > 0`.
    pub fn mul(&self, p: f64) -> LogScale {
        assert!(p > 0.0, "scaling needs a positive factor");
        if self.level == 0 {
            let v = self.value * p;
            if v.is_finite() {
                return LogScale::new(v);
            }
            return LogScale::from_ln(self.value.ln() + p.ln());
        }
        self.ln().add(p.ln()).exp()
    }

    /// `self + a`. Above level 0 the shift is below the working precision and
    /// the value is unchanged unless it is level 1 and `a` is comparable.
    pub fn add(&self, a: f64) -> LogScale {
        match self.level {
            0 => {
                let v = self.value + a;
                if v.is_finite() {
                    LogScale::new(v)
                } else {
                    LogScale::from_ln(self.value.ln() + (1.0 + a / self.value).ln())
                }
            }
            1 => LogScale::from_ln(self.value + (a * (-self.value).exp()).ln_1p()),
            _ => *self,
        }
    }

    /// `self^p` for `self > 0`, `p > 0`.
    pub fn powf(&self, p: f64) -> LogScale {
        let l = self.ln();
        if l.level == 0 {
            LogScale::from_ln(l.value * p)
        } else {
            l.mul(p).exp()
        }
    }
}

impl From<f64> for LogScale {
    fn from(v: f64) -> Self {
        LogScale::new(v)
    }
}

impl PartialOrd for LogScale {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.level.cmp(&other.level) {
            Ordering::Equal => self.value.partial_cmp(&other.value),
            o => Some(o),
        }
    }
}

impl fmt::Display for LogScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.level {
            0 => write!(f, "{}", self.value),
            1 => write!(f, "exp({})", self.value),
            k => write!(f, "exp^{k}({})", self.value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonical_form() {
        assert_eq!(LogScale::from_ln(2.0), LogScale::new(2f64.exp()));
        let big = LogScale::from_ln(1000.0);
        assert_eq!((big.level(), big.value()), (1, 1000.0));
        assert_eq!(LogScale::tower(2, 3.0), LogScale::new(3f64.exp().exp()));
        assert!(big > LogScale::new(f64::MAX));
        assert!(LogScale::tower(2, 800.0) > LogScale::from_ln(1e300));
        assert_eq!(big.to_f64(), f64::INFINITY);
    }

    #[test]
    fn arithmetic_round_trips() {
        let x = LogScale::from_ln(5000.0);
        assert_eq!(x.ln_f64(), 5000.0);
        assert_eq!(x.mul(2.0).ln_f64(), 5000.0 + 2f64.ln());
        assert_eq!(x.powf(0.5).ln_f64(), 2500.0);
        assert_eq!(LogScale::new(1e300).mul(1e10).ln_f64(), (1e300f64).ln() + (1e10f64).ln());
        assert_eq!(x.add(3.0), x);
        let y = LogScale::tower(3, 720.0);
        assert_eq!(y.ln().ln().ln().to_f64(), 720.0);
    }

    #[test]
    fn representable_powers_match_f64() {
        let x = LogScale::new(100.0);
        let p = x.powf(4.0).to_f64();
        assert!((p - 1e8).abs() <= 1e-12 * 1e8);
    }

    proptest! {
        #[test]
        fn order_matches_logs(a in -50.0f64..5000.0, b in -50.0f64..5000.0) {
            let (x, y) = (LogScale::from_ln(a), LogScale::from_ln(b));
            prop_assert_eq!(x.partial_cmp(&y), a.partial_cmp(&b));
        }

        #[test]
        fn powers_compose(l in 1.0f64..3000.0, p in 0.01f64..4.0, q in 0.01f64..4.0) {
            let x = LogScale::from_ln(l);
            let a = x.powf(p).powf(q).ln_f64();
            let b = x.powf(p * q).ln_f64();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }
}
