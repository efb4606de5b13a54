//! Local decoding of the max variables and exact scoring of decodings.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{oracle, BoundState, DiscreteModel, InferenceQuery};

/// Score `Q(x_B)` of a decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Score {
    Value(f64),
    /// The decoding has zero probability.
    NegInfinity,
    /// The sum over the summed variables was too large to evaluate exactly.
    Unevaluated,
}

impl Score {
    pub fn from_log(v: f64) -> Self {
        if v == f64::NEG_INFINITY {
            Score::NegInfinity
        } else {
            Score::Value(v)
        }
    }

    /// The log-domain value, if evaluated.
    pub fn value(&self) -> Option<f64> {
        match *self {
            Score::Value(v) => Some(v),
            Score::NegInfinity => Some(f64::NEG_INFINITY),
            Score::Unevaluated => None,
        }
    }

    /// True if `self` is evaluated and strictly better than `other`.
    pub(crate) fn beats(&self, other: Option<Score>) -> bool {
        match (self.value(), other.and_then(|s| s.value())) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(a), Some(b)) => a > b,
        }
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Score::Value(v) => write!(f, "{v}"),
            Score::NegInfinity => f.write_str("-inf"),
            Score::Unevaluated => f.write_str("unevaluated"),
        }
    }
}

impl Serialize for Score {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Score::Value(v) => s.serialize_f64(*v),
            Score::NegInfinity => s.serialize_str("-inf"),
            Score::Unevaluated => s.serialize_str("unevaluated"),
        }
    }
}

impl<'de> Deserialize<'de> for Score {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Score;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number, \"-inf\" or \"unevaluated\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Score, E> {
                Ok(Score::from_log(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Score, E> {
                Ok(Score::Value(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Score, E> {
                match v {
                    "-inf" => Ok(Score::NegInfinity),
                    "unevaluated" => Ok(Score::Unevaluated),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

/// For every max variable in ascending order, the state maximizing its
/// shift sum `Σ_{α∈N_i} δ_i^α`. Variables in no clique decode to state 0.
pub fn decode_local(state: &BoundState) -> Vec<usize> {
    state
        .query()
        .max_set()
        .into_iter()
        .map(|i| argmax(&state.shift_sum(i)))
        .collect()
}

/// Exact `Q(x_B)` when the summed variables have at most `limit` joint
/// states, otherwise [`Score::Unevaluated`].
pub fn score_decoding(model: &DiscreteModel, query: &InferenceQuery, x_b: &[usize], limit: u64) -> Score {
    match oracle::exact_q(model, query, x_b, limit) {
        Ok(v) => Score::from_log(v),
        Err(_) => Score::Unevaluated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_examples() {
        assert_eq!(argmax(&[0.2, 1.5]), 1);
        assert_eq!(argmax(&[0.7, 0.7]), 0);
        assert_eq!(argmax(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), 0);
    }

    #[test]
    fn score_serialization() {
        let v = vec![Score::Value(1.25), Score::NegInfinity, Score::Unevaluated];
        let s = serde_json::to_string(&v).unwrap();
        assert_eq!(s, r#"[1.25,"-inf","unevaluated"]"#);
        let back: Vec<Score> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn ordering_of_scores() {
        assert!(Score::Value(-5.0).beats(Some(Score::NegInfinity)));
        assert!(Score::NegInfinity.beats(None));
        assert!(!Score::Unevaluated.beats(None));
        assert!(!Score::Value(1.0).beats(Some(Score::Value(1.0))));
    }
}
