//! Exact rationals and their `"p/q"` string form.

use crate::error::{Error, Result};
use num_rational::Ratio;
use num_traits::CheckedMul;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;

pub type Rat = Ratio<i64>;

/// Largest numerator or denominator accepted from text. Keeps every product
/// formed by the geometry code well inside `i64`.
pub const MAX_COMPONENT: i64 = 1 << 31;

/// Parses `"p/q"` or `"p"`. The result is reduced; `q` must be positive.
pub fn parse_rat(s: &str) -> Result<Rat> {
    let bad = || Error::Parse(format!("not a rational: {s:?}"));
    let (num, den) = match s.split_once('/') {
        Some((p, q)) => (parse_int(p).ok_or_else(bad)?, parse_int(q).ok_or_else(bad)?),
        None => (parse_int(s).ok_or_else(bad)?, 1),
    };
    if den <= 0 {
        return Err(Error::Parse(format!("denominator must be positive: {s:?}")));
    }
    if num.abs() > MAX_COMPONENT || den > MAX_COMPONENT {
        return Err(Error::Parse(format!("rational out of range: {s:?}")));
    }
    Ok(Rat::new(num, den))
}

fn parse_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || digits.len() > 18 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    i64::from_str(s).ok()
}

/// Canonical text form: always `"p/q"` in lowest terms, so that
/// `parse_rat(&format_rat(r)) == r` and the text itself round-trips.
pub fn format_rat(r: &Rat) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// Serde wrapper that reads a rational from a string or an integer and
/// always writes the canonical string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RatStr(pub Rat);

impl fmt::Display for RatStr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_rat(&self.0))
    }
}

impl Serialize for RatStr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format_rat(&self.0))
    }
}

impl<'de> Deserialize<'de> for RatStr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) => parse_rat(&s).map(RatStr).map_err(D::Error::custom),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) if i.abs() <= MAX_COMPONENT => Ok(RatStr(Rat::from_integer(i))),
                _ => Err(D::Error::custom(format!("expected an integer or \"p/q\" string, got {n}"))),
            },
            other => Err(D::Error::custom(format!("expected a rational, got {other}"))),
        }
    }
}

/// `r` as an exact multiple of `1/n`, if it is one.
pub fn to_lattice(r: &Rat, n: i64) -> Option<i64> {
    let scaled = r.checked_mul(&Rat::from_integer(n))?;
    scaled.is_integer().then(|| *scaled.numer())
}

pub fn from_lattice(k: i64, n: i64) -> Rat {
    Rat::new(k, n)
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
