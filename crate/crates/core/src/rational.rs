//! Exact rationals and their "p/q" text form.
//!
//! Every price, probability and LP coefficient in the crate is a
//! [`Rational`]: an arbitrary-precision fraction kept in lowest terms with a
//! positive denominator. Nothing is ever rounded.

use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

pub type Rational = BigRational;

/// Builds `num/den` in lowest terms. Panics on a zero denominator.
pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

/// `base^exp` for a non-negative exponent.
pub fn pow(base: &Rational, exp: usize) -> Rational {
    let mut acc = Rational::one();
    let mut sq = base.clone();
    let mut e = exp;
    while e > 0 {
        if e & 1 == 1 {
            acc *= &sq;
        }
        e >>= 1;
        if e > 0 {
            sq = &sq * &sq;
        }
    }
    acc
}

pub fn min(a: &Rational, b: &Rational) -> Rational {
    if a <= b {
        a.clone()
    } else {
        b.clone()
    }
}

pub fn max(a: &Rational, b: &Rational) -> Rational {
    if a >= b {
        a.clone()
    } else {
        b.clone()
    }
}

/// Smallest integer strictly greater than `x`.
pub fn floor_plus_one(x: &Rational) -> BigInt {
    x.floor().to_integer() + BigInt::one()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseRationalError {
    #[error("empty rational literal")]
    Empty,
    #[error("floating-point literal {0:?} is not accepted; write it as \"p/q\"")]
    Float(String),
    #[error("malformed rational literal {0:?}")]
    Malformed(String),
    #[error("zero denominator in {0:?}")]
    ZeroDenominator(String),
}

fn parse_integer(s: &str, whole: &str) -> Result<BigInt, ParseRationalError> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(ParseRationalError::Malformed(whole.to_string()));
    }
    s.parse::<BigInt>()
        .map_err(|_| ParseRationalError::Malformed(whole.to_string()))
}

/// Parses `"p/q"` or a bare integer `"p"`. Decimal points and exponents are
/// rejected so that no value ever passes through floating point.
pub fn parse_rational(s: &str) -> Result<Rational, ParseRationalError> {
    let s = s.trim();
    if s.is_empty() {
        return Err(ParseRationalError::Empty);
    }
    if s.contains(['.', 'e', 'E']) || s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("nan")
    {
        return Err(ParseRationalError::Float(s.to_string()));
    }
    match s.split_once('/') {
        None => Ok(Rational::from_integer(parse_integer(s, s)?)),
        Some((n, d)) => {
            let num = parse_integer(n, s)?;
            if d.starts_with('-') {
                return Err(ParseRationalError::Malformed(s.to_string()));
            }
            let den = parse_integer(d, s)?;
            if den.is_zero() {
                return Err(ParseRationalError::ZeroDenominator(s.to_string()));
            }
            Ok(Rational::new(num, den))
        }
    }
}

/// Canonical `"p/q"` text, always with an explicit denominator.
pub fn format_rational(x: &Rational) -> String {
    format!("{}/{}", x.numer(), x.denom())
}

/// Display adapter that prints `p/q`, or `p` when the value is an integer.
pub struct Exact<'a>(pub &'a Rational);

impl fmt::Display for Exact<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_integer() {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

/// Serde adapter storing a [`Rational`] as its `"p/q"` string.
pub mod serde_rational {
    use super::*;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_rational(x))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        let raw = StringOnly::deserialize(d)?;
        parse_rational(&raw.0).map_err(D::Error::custom)
    }

    /// Accepts only JSON strings, so bare JSON numbers (which may be floats)
    /// are rejected at the type level.
    pub(crate) struct StringOnly(pub String);

    impl<'de> Deserialize<'de> for StringOnly {
        fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
            struct V;
            impl serde::de::Visitor<'_> for V {
                type Value = StringOnly;
                fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                    f.write_str("a rational written as a \"p/q\" string")
                }
                fn visit_str<E: Error>(self, v: &str) -> Result<StringOnly, E> {
                    Ok(StringOnly(v.to_string()))
                }
            }
            d.deserialize_str(V)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_fractions_and_integers() {
        assert_eq!(parse_rational("3/6").unwrap(), rat(1, 2));
        assert_eq!(parse_rational("-7").unwrap(), int(-7));
        assert_eq!(parse_rational(" -2/4 ").unwrap(), rat(-1, 2));
    }

    #[test]
    fn rejects_floats_and_garbage() {
        assert!(matches!(parse_rational("0.25"), Err(ParseRationalError::Float(_))));
        assert!(matches!(parse_rational("1e3"), Err(ParseRationalError::Float(_))));
        assert!(matches!(parse_rational("1/0"), Err(ParseRationalError::ZeroDenominator(_))));
        assert!(matches!(parse_rational("1/-2"), Err(ParseRationalError::Malformed(_))));
        assert!(matches!(parse_rational("a/2"), Err(ParseRationalError::Malformed(_))));
        assert!(matches!(parse_rational(""), Err(ParseRationalError::Empty)));
    }

    #[test]
    fn pow_matches_repeated_product() {
        let x = rat(26, 25);
        let mut acc = int(1);
        for e in 0..9 {
            assert_eq!(pow(&x, e), acc);
            acc *= &x;
        }
    }

    #[test]
    fn format_is_canonical() {
        assert_eq!(format_rational(&rat(4, 8)), "1/2");
        assert_eq!(format_rational(&int(3)), "3/1");
        assert_eq!(Exact(&int(3)).to_string(), "3");
    }

    #[test]
    fn json_numbers_are_rejected() {
        #[derive(serde::Deserialize)]
        struct W {
            #[serde(with = "serde_rational")]
            #[allow(dead_code)]
            x: Rational,
        }
        assert!(serde_json::from_str::<W>(r#"{"x": 0.5}"#).is_err());
        assert!(serde_json::from_str::<W>(r#"{"x": "1/2"}"#).is_ok());
    }
}
