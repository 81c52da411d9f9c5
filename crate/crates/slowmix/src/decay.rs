//! Dependency-decay profiles.
//!
//! A decay profile is a nonnegative sequence `d(1), d(2), ...` bounding how
//! much the conditional output law of a channel can change when a symbol `i`
//! steps back in the past is replaced: multiplicative ratios of conditional
//! probabilities differ from one by at most `d(i)`.  The estimation and
//! coupling certificates consume the summed tails
//!
//! ```text
//! delta_j     = sum_{i >= j} d(i)
//! big_delta_j = sum_{i >= j} delta_i
//! ```
//!
//! and the coalescence horizon `ell(n) = min { ell >= 1 : big_delta_ell <= 1/n }`.
//!
//! Three profile families are supported: exponential `d(i) = gamma^i` (tails
//! in closed form), polynomial `d(i) = i^-r` (tails as certified upper
//! bounds from partial sums plus integral brackets), and finite tables with
//! a declared tail bound beyond the last entry.  A table *must* declare its
//! tail (zero, geometric, or polynomial); tails are what every certificate
//! rests on, so an open-ended table would be unusable and the schema rejects
//! it.  All bounds returned here are upper bounds with relative slack below
//! `1e-9`, so consuming certificates stay conservative.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecayError {
    #[error("decay parameter {name} = {value} outside {range}")]
    BadParameter {
        name: &'static str,
        value: f64,
        range: &'static str,
    },
    #[error("tail sum diverges: {0}")]
    NotSummable(&'static str),
}

/// Certified bound on table entries beyond the stored prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TailBound {
    /// `d(i) = 0` beyond the table.
    Zero,
    /// `d(i) <= coeff * ratio^(i - m)` for `i > m` (table length `m`).
    Geometric { coeff: f64, ratio: f64 },
    /// `d(i) <= coeff * i^-power` for `i > m`.
    Polynomial { coeff: f64, power: f64 },
}

/// A dependency-decay profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DecayProfile {
    /// `d(i) = gamma^i`, `0 < gamma < 1`.
    Exponential { gamma: f64 },
    /// `d(i) = i^-r`, `r > 0`; tails require `r > 1` (delta) and `r > 2`
    /// (big_delta).
    Polynomial { r: f64 },
    /// Explicit `d(1..=m)` plus a declared tail beyond.
    Table {
        values: Vec<f64>,
        tail: TailBound,
    },
}

/// Relative slack target for the certified polynomial tail brackets.
const REL_TOL: f64 = 1e-10;

impl DecayProfile {
    pub fn exponential(gamma: f64) -> Result<Self, DecayError> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(DecayError::BadParameter {
                name: "gamma",
                value: gamma,
                range: "(0, 1)",
            });
        }
        Ok(DecayProfile::Exponential { gamma })
    }

    pub fn polynomial(r: f64) -> Result<Self, DecayError> {
        if !(r > 0.0) {
            return Err(DecayError::BadParameter {
                name: "r",
                value: r,
                range: "(0, inf)",
            });
        }
        Ok(DecayProfile::Polynomial { r })
    }

    pub fn table(values: Vec<f64>, tail: TailBound) -> Result<Self, DecayError> {
        for &v in &values {
            if !(v >= 0.0) {
                return Err(DecayError::BadParameter {
                    name: "values[]",
                    value: v,
                    range: "[0, inf)",
                });
            }
        }
        match tail {
            TailBound::Zero => {}
            TailBound::Geometric { coeff, ratio } => {
                if !(coeff >= 0.0) {
                    return Err(DecayError::BadParameter {
                        name: "tail.coeff",
                        value: coeff,
                        range: "[0, inf)",
                    });
                }
                if !(ratio >= 0.0 && ratio < 1.0) {
                    return Err(DecayError::BadParameter {
                        name: "tail.ratio",
                        value: ratio,
                        range: "[0, 1)",
                    });
                }
            }
            TailBound::Polynomial { coeff, power } => {
                if !(coeff >= 0.0) {
                    return Err(DecayError::BadParameter {
                        name: "tail.coeff",
                        value: coeff,
                        range: "[0, inf)",
                    });
                }
                if !(power > 0.0) {
                    return Err(DecayError::BadParameter {
                        name: "tail.power",
                        value: power,
                        range: "(0, inf)",
                    });
                }
            }
        }
        Ok(DecayProfile::Table { values, tail })
    }

    /// The all-zero profile: no dependence on the remote past at all.
    pub fn zero() -> Self {
        DecayProfile::Table {
            values: Vec::new(),
            tail: TailBound::Zero,
        }
    }

    /// Validate parameters of a deserialized profile.
    pub fn validated(self) -> Result<Self, DecayError> {
        match self {
            DecayProfile::Exponential { gamma } => DecayProfile::exponential(gamma),
            DecayProfile::Polynomial { r } => DecayProfile::polynomial(r),
            DecayProfile::Table { values, tail } => DecayProfile::table(values, tail),
        }
    }

    /// `d(i)` for `i >= 1`.
    pub fn d(&self, i: u64) -> f64 {
        assert!(i >= 1, "decay profile is indexed from 1");
        match self {
            DecayProfile::Exponential { gamma } => gamma.powi(i as i32),
            DecayProfile::Polynomial { r } => (i as f64).powf(-r),
            DecayProfile::Table { values, tail } => {
                if (i as usize) <= values.len() {
                    values[i as usize - 1]
                } else {
                    let m = values.len() as u64;
                    match tail {
                        TailBound::Zero => 0.0,
                        TailBound::Geometric { coeff, ratio } => {
                            coeff * ratio.powf((i - m) as f64)
                        }
                        TailBound::Polynomial { coeff, power } => {
                            coeff * (i as f64).powf(-power)
                        }
                    }
                }
            }
        }
    }

    /// `delta_j = sum_{i >= j} d(i)` (certified upper bound), `j >= 1`.
    pub fn delta(&self, j: u64) -> Result<f64, DecayError> {
        assert!(j >= 1);
        match self {
            DecayProfile::Exponential { gamma } => {
                Ok(gamma.powf(j as f64) / (1.0 - gamma))
            }
            DecayProfile::Polynomial { r } => {
                if *r <= 1.0 {
                    return Err(DecayError::NotSummable("polynomial tail needs r > 1"));
                }
                Ok(zeta_tail(*r, j).1)
            }
            DecayProfile::Table { values, tail } => {
                let m = values.len() as u64;
                let tail_from = |t: u64| -> Result<f64, DecayError> {
                    // Sum of tail entries from index t > m onward.
                    match tail {
                        TailBound::Zero => Ok(0.0),
                        TailBound::Geometric { coeff, ratio } => {
                            if *coeff == 0.0 {
                                return Ok(0.0);
                            }
                            Ok(coeff * ratio.powf((t - m) as f64) / (1.0 - ratio))
                        }
                        TailBound::Polynomial { coeff, power } => {
                            if *coeff == 0.0 {
                                return Ok(0.0);
                            }
                            if *power <= 1.0 {
                                return Err(DecayError::NotSummable(
                                    "polynomial table tail needs power > 1",
                                ));
                            }
                            Ok(coeff * zeta_tail(*power, t).1)
                        }
                    }
                };
                if j > m {
                    tail_from(j)
                } else {
                    let head: f64 = values[j as usize - 1..].iter().sum();
                    Ok(head + tail_from(m + 1)?)
                }
            }
        }
    }

    /// `big_delta_j = sum_{i >= j} delta_i` (certified upper bound), `j >= 1`.
    pub fn big_delta(&self, j: u64) -> Result<f64, DecayError> {
        assert!(j >= 1);
        match self {
            DecayProfile::Exponential { gamma } => {
                Ok(gamma.powf(j as f64) / ((1.0 - gamma) * (1.0 - gamma)))
            }
            DecayProfile::Polynomial { r } => {
                if *r <= 2.0 {
                    return Err(DecayError::NotSummable(
                        "iterated polynomial tail needs r > 2",
                    ));
                }
                // sum_{i>=j} sum_{l>=i} l^-r = sum_{l>=j} (l - j + 1) l^-r
                //                            = S_{r-1}(j) - (j - 1) S_r(j).
                let (_, upper1) = zeta_tail(*r - 1.0, j);
                let (lower2, _) = zeta_tail(*r, j);
                Ok(upper1 - (j as f64 - 1.0) * lower2)
            }
            DecayProfile::Table { values, tail } => {
                let m = values.len() as u64;
                let tail_from = |t: u64| -> Result<f64, DecayError> {
                    match tail {
                        TailBound::Zero => Ok(0.0),
                        TailBound::Geometric { coeff, ratio } => {
                            if *coeff == 0.0 {
                                return Ok(0.0);
                            }
                            let one_minus = 1.0 - ratio;
                            Ok(coeff * ratio.powf((t - m) as f64) / (one_minus * one_minus))
                        }
                        TailBound::Polynomial { coeff, power } => {
                            if *coeff == 0.0 {
                                return Ok(0.0);
                            }
                            if *power <= 2.0 {
                                return Err(DecayError::NotSummable(
                                    "iterated polynomial table tail needs power > 2",
                                ));
                            }
                            let (_, upper1) = zeta_tail(*power - 1.0, t);
                            let (lower2, _) = zeta_tail(*power, t);
                            Ok(coeff * (upper1 - (t as f64 - 1.0) * lower2))
                        }
                    }
                };
                if j > m {
                    tail_from(j)
                } else {
                    let mut acc = 0.0;
                    for i in j..=m {
                        acc += self.delta(i)?;
                    }
                    Ok(acc + tail_from(m + 1)?)
                }
            }
        }
    }

    /// `ell(n)`: smallest `ell >= 1` with `big_delta_ell <= 1/n`.
    ///
    /// Closed forms seed the search for exponential and polynomial profiles
    /// (`ceil(log(n / (1-gamma)^2) / log(1/gamma))` and
    /// `ceil(2 + (n / ((r-1)(r-2)))^(1/(r-2)))` respectively); a local scan
    /// against [`DecayProfile::big_delta`] then pins down the exact minimum,
    /// which absorbs any floating-point boundary effects.
    pub fn coalescence_horizon(&self, n: u64) -> Result<u64, DecayError> {
        assert!(n >= 1);
        let target = 1.0 / n as f64;
        let seed: u64 = match self {
            DecayProfile::Exponential { gamma } => {
                let raw =
                    ((n as f64).ln() - 2.0 * (1.0 - gamma).ln()) / (1.0 / gamma).ln();
                raw.ceil().max(1.0) as u64
            }
            DecayProfile::Polynomial { r } => {
                if *r <= 2.0 {
                    return Err(DecayError::NotSummable(
                        "iterated polynomial tail needs r > 2",
                    ));
                }
                let raw = 2.0 + (n as f64 / ((r - 1.0) * (r - 2.0))).powf(1.0 / (r - 2.0));
                raw.ceil().max(1.0) as u64
            }
            DecayProfile::Table { values, tail } => {
                let m = values.len() as u64;
                match tail {
                    TailBound::Zero => m + 1,
                    TailBound::Geometric { coeff, ratio } => {
                        if *coeff == 0.0 {
                            m + 1
                        } else {
                            // coeff * ratio^(t-m) / (1-ratio)^2 <= 1/n
                            let one_minus = 1.0 - ratio;
                            let rhs = one_minus * one_minus / (coeff * n as f64);
                            let steps = (rhs.ln() / ratio.ln()).ceil().max(1.0);
                            m + steps as u64
                        }
                    }
                    TailBound::Polynomial { coeff, power } => {
                        if *coeff == 0.0 {
                            m + 1
                        } else {
                            if *power <= 2.0 {
                                return Err(DecayError::NotSummable(
                                    "iterated polynomial table tail needs power > 2",
                                ));
                            }
                            let raw = 2.0
                                + (coeff * n as f64 / ((power - 1.0) * (power - 2.0)))
                                    .powf(1.0 / (power - 2.0));
                            (m + 1).max(raw.ceil() as u64)
                        }
                    }
                }
            }
        };
        // Local correction: grow until the bound holds, then shrink to the
        // first index where it holds.
        let mut ell = seed.max(1);
        while self.big_delta(ell)? > target {
            ell += 1;
        }
        while ell > 1 && self.big_delta(ell - 1)? <= target {
            ell -= 1;
        }
        Ok(ell)
    }

    /// First index `i <= upto` where `delta_i > 1/i`, if any.  The block
    /// constant derivation assumes `delta_k <= 1/k` at the working depth;
    /// profiles violating it are flagged rather than rejected, since the
    /// resulting certificates merely weaken.
    pub fn reciprocal_warning(&self, upto: u64) -> Result<Option<u64>, DecayError> {
        for i in 1..=upto {
            if self.delta(i)? * i as f64 > 1.0 {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }
}

/// Certified bracket `(lower, upper)` for the tail `S_p(j) = sum_{i>=j} i^-p`
/// with `p > 1`.  Partial sums are extended until the integral bracket
/// `[int_M^inf, int_{M-1}^inf] x^-p dx` is narrower than `REL_TOL` of the
/// accumulated value.
fn zeta_tail(p: f64, j: u64) -> (f64, f64) {
    debug_assert!(p > 1.0);
    let mut acc = 0.0f64;
    let mut i = j;
    loop {
        // Sum a chunk, then test the bracket width.
        let chunk_end = i + 4096;
        while i < chunk_end {
            acc += (i as f64).powf(-p);
            i += 1;
        }
        let m = i as f64;
        let lower = m.powf(1.0 - p) / (p - 1.0);
        let upper = (m - 1.0).powf(1.0 - p) / (p - 1.0);
        if upper - lower <= REL_TOL * (acc + lower) || i - j > 50_000_000 {
            return (acc + lower, acc + upper);
        }
    }
}
