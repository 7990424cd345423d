//! Exact rational arithmetic for clock constants and zone bounds.
//!
//! Guard and invariant constants are produced by floating-point bound
//! computations; every finite `f64` is an exact dyadic rational, so the
//! conversion loses nothing and the zone engine stays bit-reproducible.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, ToPrimitive, Zero};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::ops::{Add, Neg, Sub};
use std::str::FromStr;

/// Exact rational number, serialized as `"p/q"` (or `"p"` when integral).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Rat(BigRational);

impl Rat {
    pub fn zero() -> Self {
        Rat(BigRational::zero())
    }

    pub fn one() -> Self {
        Rat(BigRational::one())
    }

    pub fn new(numer: i64, denom: i64) -> Self {
        Rat(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_int(v: i64) -> Self {
        Rat(BigRational::from_integer(BigInt::from(v)))
    }

    pub fn from_bigint(v: BigInt) -> Self {
        Rat(BigRational::from_integer(v))
    }

    /// Exact conversion; every finite float is a dyadic rational.
    pub fn from_f64(v: f64) -> Option<Self> {
        BigRational::from_float(v).map(Rat)
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn inner(&self) -> &BigRational {
        &self.0
    }

    pub fn mul(&self, other: &Rat) -> Rat {
        Rat(&self.0 * &other.0)
    }

    /// Largest multiple of `1/denom` that is `<= self`.
    pub fn floor_to_denom(&self, denom: u64) -> Rat {
        let d = BigInt::from(denom);
        let scaled = (&self.0 * BigRational::from_integer(d.clone())).floor();
        Rat(scaled / BigRational::from_integer(d))
    }

    /// Smallest multiple of `1/denom` that is `>= self`.
    pub fn ceil_to_denom(&self, denom: u64) -> Rat {
        let d = BigInt::from(denom);
        let scaled = (&self.0 * BigRational::from_integer(d.clone())).ceil();
        Rat(scaled / BigRational::from_integer(d))
    }
}

impl Add for &Rat {
    type Output = Rat;
    fn add(self, rhs: &Rat) -> Rat {
        Rat(&self.0 + &rhs.0)
    }
}

impl Sub for &Rat {
    type Output = Rat;
    fn sub(self, rhs: &Rat) -> Rat {
        Rat(&self.0 - &rhs.0)
    }
}

impl Neg for &Rat {
    type Output = Rat;
    fn neg(self) -> Rat {
        Rat(-&self.0)
    }
}

impl fmt::Display for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl fmt::Debug for Rat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl FromStr for Rat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_int = |t: &str| {
            BigInt::from_str(t.trim()).map_err(|e| format!("bad rational `{s}`: {e}"))
        };
        match s.split_once('/') {
            Some((p, q)) => {
                let numer = parse_int(p)?;
                let denom = parse_int(q)?;
                if denom.is_zero() {
                    return Err(format!("bad rational `{s}`: zero denominator"));
                }
                Ok(Rat(BigRational::new(numer, denom)))
            }
            None => Ok(Rat(BigRational::from_integer(parse_int(s)?))),
        }
    }
}

impl Serialize for Rat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Rat::from_str(&s).map_err(D::Error::custom)
    }
}

/// Least common multiple of the denominators of the given rationals.
pub fn denominator_lcm<'a>(values: impl Iterator<Item = &'a Rat>) -> BigInt {
    let mut acc = BigInt::one();
    for v in values {
        acc = num::integer::lcm(acc, v.denom().clone());
    }
    acc
}
