//! Serde helpers for extended reals.
//!
//! JSON has no infinity literal, so `+inf` is written as the string `"inf"`
//! and `-inf` as `"-inf"`. Finite values are plain numbers. NaN is written as
//! `null`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Str(String),
    Null(()),
}

fn to_repr(v: f64) -> serde_json::Value {
    if v.is_nan() {
        serde_json::Value::Null
    } else if v == f64::INFINITY {
        serde_json::Value::String("inf".into())
    } else if v == f64::NEG_INFINITY {
        serde_json::Value::String("-inf".into())
    } else {
        serde_json::json!(v)
    }
}

fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Num(x) => Ok(x),
        Repr::Null(()) => Ok(f64::NAN),
        Repr::Str(s) => match s.as_str() {
            "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
            "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
            other => other
                .parse::<f64>()
                .map_err(|_| E::custom(format!("expected a number or \"inf\", got {other:?}"))),
        },
    }
}

/// Serializes an extended real.
pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    to_repr(*v).serialize(s)
}

/// Deserializes an extended real.
pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    from_repr(Repr::deserialize(d)?)
}

/// Serde helpers for sequences of extended reals.
pub mod vec {
    use super::*;

    /// Serializes a sequence of extended reals.
    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| to_repr(*x)).collect::<Vec<_>>().serialize(s)
    }

    /// Deserializes a sequence of extended reals.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<Repr>::deserialize(d)?
            .into_iter()
            .map(from_repr)
            .collect()
    }
}

/// Serde helpers for optional extended reals.
pub mod option {
    use super::*;

    /// Serializes an optional extended real.
    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => to_repr(*x).serialize(s),
            None => s.serialize_none(),
        }
    }

    /// Deserializes an optional extended real.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "super")]
        x: f64,
        #[serde(with = "super::vec")]
        xs: Vec<f64>,
    }

    #[test]
    fn infinity_round_trips_as_string() {
        let h = Holder {
            x: f64::INFINITY,
            xs: vec![1.5, f64::INFINITY, f64::NEG_INFINITY],
        };
        let s = serde_json::to_string(&h).unwrap();
        assert_eq!(s, r#"{"x":"inf","xs":[1.5,"inf","-inf"]}"#);
        let back: Holder = serde_json::from_str(&s).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn rejects_garbage_strings() {
        assert!(serde_json::from_str::<Holder>(r#"{"x":"lots","xs":[]}"#).is_err());
    }
}
