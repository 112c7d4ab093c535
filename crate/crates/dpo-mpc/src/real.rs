//! Lossless JSON encoding of `f64`.
//!
//! Finite values are JSON numbers written with the shortest round-trip
//! representation; `inf`, `-inf` and `nan` are strings.

use std::fmt;

use dpo_mpc_core::{Mat, Vector};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Real(pub f64);

impl Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            s.serialize_f64(v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }
}

struct RealVisitor;

impl Visitor<'_> for RealVisitor {
    type Value = Real;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Real, E> {
        Ok(Real(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Real, E> {
        Ok(Real(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Real, E> {
        Ok(Real(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Real, E> {
        match v {
            "inf" => Ok(Real(f64::INFINITY)),
            "-inf" => Ok(Real(f64::NEG_INFINITY)),
            "nan" => Ok(Real(f64::NAN)),
            _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
        }
    }
}

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Real, D::Error> {
        d.deserialize_any(RealVisitor)
    }
}

/// Equality that treats every NaN as equal to every other NaN.
pub fn same(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

pub fn reals(v: &[f64]) -> Vec<Real> {
    v.iter().map(|&x| Real(x)).collect()
}

pub fn floats(v: &[Real]) -> Vec<f64> {
    v.iter().map(|r| r.0).collect()
}

pub fn vector_out(v: &Vector) -> Vec<Real> {
    v.iter().map(|&x| Real(x)).collect()
}

pub fn vector_in(v: &[Real]) -> Vector {
    Vector::from_vec(floats(v))
}

/// Row-major nested rows.
pub fn matrix_out(m: &Mat) -> Vec<Vec<Real>> {
    m.row_iter().map(|r| r.iter().map(|&x| Real(x)).collect()).collect()
}

pub fn matrix_in(what: &str, rows: &[Vec<Real>]) -> Result<Mat, String> {
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != c) {
        return Err(format!("{what} has rows of different lengths"));
    }
    let flat: Vec<f64> = rows.iter().flatten().map(|r| r.0).collect();
    Ok(Mat::from_row_slice(rows.len(), c, &flat))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_values_survive_json() {
        let v = vec![Real(0.1), Real(-0.0), Real(f64::INFINITY), Real(f64::NEG_INFINITY), Real(f64::NAN), Real(1e-300)];
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"[0.1,-0.0,"inf","-inf","nan",1e-300]"#);
        let back: Vec<Real> = serde_json::from_str(&text).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| same(a.0, b.0) && a.0.is_sign_negative() == b.0.is_sign_negative()));
    }

    #[test]
    fn awkward_decimals_round_trip_exactly() {
        for x in [1.0 / 3.0, std::f64::consts::PI, 0.1 + 0.2, 2.225e-308, f64::MAX] {
            let back: Real = serde_json::from_str(&serde_json::to_string(&Real(x)).unwrap()).unwrap();
            assert_eq!(back.0.to_bits(), x.to_bits());
        }
    }

    #[test]
    fn unknown_strings_are_rejected() {
        assert!(serde_json::from_str::<Real>("\"infinity\"").is_err());
    }
}
