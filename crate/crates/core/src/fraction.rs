//! Exact rationals for weights, shares and game payoffs.
//!
//! Configuration files may write a rational as `"3/20"`, `"0.15"` or a bare
//! JSON number; it is always parsed exactly and serialized as `"n/d"`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Rational = BigRational;

pub fn ratio(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub fn int(n: u64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub fn zero() -> Rational {
    Rational::zero()
}

pub fn one() -> Rational {
    Rational::one()
}

/// Parses `"a/b"`, a decimal such as `"-0.125"`, or an integer.
pub fn parse(s: &str) -> Result<Rational, String> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
        let d: BigInt = d.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
        if d.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(Rational::new(n, d));
    }
    let (mantissa, exp) = match s.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i32>().map_err(|_| format!("bad exponent in {s:?}"))?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("not a number: {s:?}"));
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(format!("not a number: {s:?}"));
    }
    let all: BigInt = format!("0{int_part}{frac_part}").parse().expect("digits");
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10);
    let mut r = Rational::from_integer(all);
    if scale >= 0 {
        r *= Rational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        r /= Rational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -r } else { r })
}

pub fn format(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn to_f64(r: &Rational) -> f64 {
    num_traits::ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
}

pub fn in_unit_interval(r: &Rational) -> bool {
    !r.is_negative() && *r <= one()
}

/// Floor of a non-negative rational as u128.
pub fn floor_u128(r: &Rational) -> u128 {
    let f = r.floor().to_integer();
    num_traits::ToPrimitive::to_u128(&f).unwrap_or(0)
}

/// `#[serde(with = "crate::fraction::serde_rational")]`
pub mod serde_rational {
    use super::*;
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format(r))
    }

    struct RationalVisitor;

    impl Visitor<'_> for RationalVisitor {
        type Value = Rational;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a rational as \"n/d\", a decimal string, or a number")
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<Rational, E> {
            parse(v).map_err(E::custom)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<Rational, E> {
            Ok(int(v))
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<Rational, E> {
            Ok(Rational::from_integer(BigInt::from(v)))
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<Rational, E> {
            // shortest round-trip decimal, parsed exactly
            parse(&format!("{v}")).map_err(E::custom)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        d.deserialize_any(RationalVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_forms_exactly() {
        assert_eq!(parse("3/20").unwrap(), ratio(3, 20));
        assert_eq!(parse("0.15").unwrap(), ratio(3, 20));
        assert_eq!(parse("0.95").unwrap(), ratio(19, 20));
        assert_eq!(parse("-2.1").unwrap(), ratio(-21, 10));
        assert_eq!(parse("5").unwrap(), int(5));
        assert_eq!(parse("1e-2").unwrap(), ratio(1, 100));
        assert_eq!(parse(".5").unwrap(), ratio(1, 2));
        assert!(parse("1/0").is_err());
        assert!(parse("abc").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn format_round_trip() {
        for r in [ratio(4, 29), int(7), ratio(-1, 3)] {
            assert_eq!(parse(&format(&r)).unwrap(), r);
        }
    }

    #[test]
    fn json_numbers_are_exact() {
        #[derive(serde::Deserialize)]
        struct W {
            #[serde(with = "serde_rational")]
            x: Rational,
        }
        let w: W = serde_json::from_str(r#"{"x": 0.1}"#).unwrap();
        assert_eq!(w.x, ratio(1, 10));
        let w: W = serde_json::from_str(r#"{"x": "1/4"}"#).unwrap();
        assert_eq!(w.x, ratio(1, 4));
        let w: W = serde_json::from_str(r#"{"x": 3}"#).unwrap();
        assert_eq!(w.x, int(3));
    }
}
