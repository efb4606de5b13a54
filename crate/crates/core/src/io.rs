//! UAI model files, query files and optimizer traces.
//!
//! Models use the UAI `MARKOV` format: the keyword, the number of variables,
//! their cardinalities, the number of factors, one scope per factor (arity
//! followed by variable indices) and one table per factor (entry count
//! followed by nonnegative linear-domain values, last scope variable
//! fastest). Tokens are separated by arbitrary whitespace. Tables are
//! converted to the log domain on input; a zero becomes `-inf`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::Score;
use crate::{DiscreteModel, Error, Factor, InferenceQuery, Result};

/// A UAI file as written, with tables in the linear domain.
#[derive(Debug, Clone, PartialEq)]
pub struct UaiDocument {
    pub kind: String,
    pub cards: Vec<usize>,
    pub scopes: Vec<Vec<usize>>,
    pub tables: Vec<Vec<f64>>,
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    next: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(k, line)| line.split_whitespace().map(move |t| (k + 1, t)))
            .collect();
        Self { items, next: 0 }
    }

    fn error(&self, line: usize, token: &str, message: impl Into<String>) -> Error {
        Error::Parse {
            line,
            token: token.to_string(),
            message: message.into(),
        }
    }

    fn take(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let line = self.items.last().map_or(1, |t| t.0);
        let t = self
            .items
            .get(self.next)
            .copied()
            .ok_or_else(|| self.error(line, "", format!("unexpected end of input, expected {what}")))?;
        self.next += 1;
        Ok(t)
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let (line, tok) = self.take(what)?;
        tok.parse()
            .map_err(|_| self.error(line, tok, format!("expected {what}")))
    }

    fn value(&mut self) -> Result<f64> {
        let (line, tok) = self.take("a table entry")?;
        let v: f64 = tok
            .parse()
            .map_err(|_| self.error(line, tok, "expected a table entry"))?;
        if !v.is_finite() {
            return Err(self.error(line, tok, "table entries must be finite"));
        }
        if v < 0.0 {
            return Err(self.error(line, tok, "negative potential"));
        }
        Ok(v)
    }
}

/// Parses a UAI `MARKOV` file without interpreting the tables.
pub fn parse_uai_document(text: &str) -> Result<UaiDocument> {
    let mut t = Tokens::new(text);
    let (line, kind) = t.take("the MARKOV keyword")?;
    if !kind.eq_ignore_ascii_case("MARKOV") {
        return Err(t.error(line, kind, "only MARKOV networks are supported"));
    }
    let n = t.usize("the number of variables")?;
    let mut cards = Vec::with_capacity(n);
    for _ in 0..n {
        let (line, tok) = t.take("a cardinality")?;
        match tok.parse::<usize>() {
            Ok(d) if d > 0 => cards.push(d),
            _ => return Err(t.error(line, tok, "expected a positive cardinality")),
        }
    }
    let m = t.usize("the number of factors")?;
    let mut scopes = Vec::with_capacity(m);
    for _ in 0..m {
        let k = t.usize("a factor arity")?;
        let mut scope = Vec::with_capacity(k);
        for _ in 0..k {
            let (line, tok) = t.take("a variable index")?;
            match tok.parse::<usize>() {
                Ok(v) if v < n => scope.push(v),
                _ => return Err(t.error(line, tok, format!("expected a variable index below {n}"))),
            }
        }
        scopes.push(scope);
    }
    let mut tables = Vec::with_capacity(m);
    for scope in &scopes {
        let (line, tok) = t.take("a table size")?;
        let size: usize = tok
            .parse()
            .map_err(|_| t.error(line, tok, "expected a table size"))?;
        let expected: usize = scope.iter().map(|&v| cards[v]).product();
        if size != expected {
            return Err(t.error(line, tok, format!("table size {size} does not match scope size {expected}")));
        }
        tables.push((0..size).map(|_| t.value()).collect::<Result<Vec<f64>>>()?);
    }
    if let Some(&(line, tok)) = t.items.get(t.next) {
        return Err(t.error(line, tok, "unexpected trailing token"));
    }
    Ok(UaiDocument {
        kind: kind.to_string(),
        cards,
        scopes,
        tables,
    })
}

impl UaiDocument {
    pub fn to_model(&self) -> Result<DiscreteModel> {
        let factors = self
            .scopes
            .iter()
            .zip(&self.tables)
            .map(|(s, t)| Factor::new(s.clone(), t.iter().map(|v| v.ln()).collect()))
            .collect::<Result<Vec<_>>>()?;
        DiscreteModel::new(self.cards.clone(), factors)
    }

    pub fn from_model(model: &DiscreteModel) -> Self {
        Self {
            kind: "MARKOV".into(),
            cards: model.cards().to_vec(),
            scopes: model.factors().iter().map(|f| f.scope().to_vec()).collect(),
            tables: model
                .factors()
                .iter()
                .map(|f| f.table().iter().map(|v| v.exp()).collect())
                .collect(),
        }
    }

    pub fn write(&self) -> String {
        let mut out = String::new();
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(out, "{}", self.kind);
        let _ = writeln!(out, "{}", self.cards.len());
        let _ = writeln!(out, "{}", join(&self.cards));
        let _ = writeln!(out, "{}", self.scopes.len());
        for s in &self.scopes {
            let _ = writeln!(out, "{} {}", s.len(), join(s));
        }
        for t in &self.tables {
            let _ = writeln!(out);
            let _ = writeln!(out, "{}", t.len());
            let vals: Vec<String> = t.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, " {}", vals.join(" "));
        }
        out
    }
}

/// Parses a UAI `MARKOV` model.
pub fn parse_uai(text: &str) -> Result<DiscreteModel> {
    parse_uai_document(text)?.to_model()
}

pub fn read_uai(path: impl AsRef<Path>) -> Result<DiscreteModel> {
    parse_uai(&std::fs::read_to_string(path)?)
}

/// Writes a model in UAI `MARKOV` format.
pub fn write_uai(model: &DiscreteModel) -> String {
    UaiDocument::from_model(model).write()
}

/// Parses a query file `k i_1 … i_k` listing the max variables.
pub fn parse_query(text: &str, model: &DiscreteModel) -> Result<InferenceQuery> {
    let mut t = Tokens::new(text);
    let k = t.usize("the number of max variables")?;
    let mut max_vars = Vec::with_capacity(k);
    for _ in 0..k {
        let (line, tok) = t.take("a variable index")?;
        let v: usize = tok
            .parse()
            .map_err(|_| t.error(line, tok, "expected a variable index"))?;
        max_vars.push(v);
    }
    if let Some(&(line, tok)) = t.items.get(t.next) {
        return Err(t.error(line, tok, "unexpected trailing token"));
    }
    InferenceQuery::marginal_map(model.num_vars(), &max_vars)
}

/// One optimizer iteration. Iteration 0 is the initial state; iteration `t`
/// follows the `t`-th full sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    #[serde(with = "extended_f64")]
    pub bound: f64,
    /// States of the max variables in ascending variable order.
    pub decoded_config: Vec<usize>,
    pub decoded_score: Score,
    /// Seconds since the start of the run.
    pub elapsed: f64,
    pub line_search_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceFormat {
    Csv,
    Json,
}

/// Header of the CSV trace.
pub const CSV_HEADER: [&str; 5] = ["iter", "bound", "score", "elapsed_s", "config"];

fn fmt_f64(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == f64::INFINITY {
        "inf".into()
    } else {
        v.to_string()
    }
}

/// Renders a trace as CSV or JSON.
pub fn write_trace(records: &[TraceRecord], format: TraceFormat) -> Result<String> {
    match format {
        TraceFormat::Json => Ok(serde_json::to_string_pretty(records)? + "\n"),
        TraceFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let row_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
            w.write_record(CSV_HEADER).map_err(row_err)?;
            for r in records {
                let config = r
                    .decoded_config
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("-");
                w.write_record([
                    r.iteration.to_string(),
                    fmt_f64(r.bound),
                    r.decoded_score.to_string(),
                    fmt_f64(r.elapsed),
                    config,
                ])
                .map_err(row_err)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

/// Parses a JSON trace written by [`write_trace`].
pub fn read_trace_json(text: &str) -> Result<Vec<TraceRecord>> {
    Ok(serde_json::from_str(text)?)
}

/// Serde adapter for `f64` that writes non-finite values as the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub mod extended_f64 {
    use serde::de::{self, Deserializer, Visitor};
    use serde::Serializer;
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = f64;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or one of \"inf\", \"-inf\", \"nan\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
                Ok(v)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
                Ok(v as f64)
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
                match v {
                    "inf" => Ok(f64::INFINITY),
                    "-inf" => Ok(f64::NEG_INFINITY),
                    "nan" => Ok(f64::NAN),
                    _ => Err(E::invalid_value(de::Unexpected::Str(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: &str = "MARKOV\n2\n2 2\n1\n2 0 1\n4\n 1.0 2.718281828 2.718281828 1.0";

    #[test]
    fn parses_golden_model() {
        let m = parse_uai(GOLDEN).unwrap();
        assert_eq!(m.cards(), &[2, 2]);
        let t = m.factors()[0].table();
        for (a, b) in t.iter().zip([0.0, 1.0, 1.0, 0.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn keyword_is_case_insensitive_and_layout_free() {
        let m = parse_uai("MARKov 2 2 2 1 2 0 1 4 1.0 2.718281828 2.718281828 1.0").unwrap();
        assert_eq!(m.factors().len(), 1);
    }

    #[test]
    fn zero_entries_become_neg_infinity() {
        let m = parse_uai("MARKOV 1 2 1 1 0 2 0.0 1.0").unwrap();
        assert_eq!(m.factors()[0].table(), &[f64::NEG_INFINITY, 0.0]);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let e = parse_uai("MARKOV\n1\n2\n1\n1 0\n2\n0.5 -1").unwrap_err();
        match e {
            Error::Parse { line, token, .. } => assert_eq!((line, token.as_str()), (7, "-1")),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_uai("BAYES 1 2 0"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_uai("MARKOV 1 2 1 1 0 3 1 1 1").is_err());
        assert!(parse_uai("MARKOV 1 2 1 1 0 2 1 1 7").is_err());
        assert!(parse_uai("MARKOV 1 2 1 1 0 2 1").is_err());
        assert!(parse_uai("MARKOV 1 2 1 1 4 2 1 1").is_err());
    }

    #[test]
    fn query_examples() {
        let m = parse_uai(GOLDEN).unwrap();
        assert_eq!(parse_query("1 1", &m).unwrap().tau(), &[1.0, 0.0]);
        assert_eq!(parse_query("0", &m).unwrap().tau(), &[1.0, 1.0]);
        assert!(matches!(parse_query("1 2", &m), Err(Error::Query(_))));
        assert!(matches!(parse_query("2 1 1", &m), Err(Error::Query(_))));
        assert!(parse_query("2 1", &m).is_err());
    }

    fn record() -> TraceRecord {
        TraceRecord {
            iteration: 0,
            bound: 2.0064089,
            decoded_config: vec![0],
            decoded_score: Score::NegInfinity,
            elapsed: 0.001,
            line_search_failures: 0,
        }
    }

    #[test]
    fn csv_trace() {
        let out = write_trace(&[record()], TraceFormat::Csv).unwrap();
        assert_eq!(out, "iter,bound,score,elapsed_s,config\n0,2.0064089,-inf,0.001,0\n");
        let mut r = record();
        r.decoded_config.clear();
        r.decoded_score = Score::Unevaluated;
        let out = write_trace(&[r], TraceFormat::Csv).unwrap();
        assert_eq!(out.lines().nth(1), Some("0,2.0064089,unevaluated,0.001,"));
    }

    #[test]
    fn json_trace_round_trip() {
        let mut b = record();
        b.iteration = 1;
        b.bound = 1.0 / 3.0;
        b.decoded_score = Score::Value(-0.1 - 0.2);
        b.decoded_config = vec![2, 0, 1];
        let recs = vec![record(), b];
        let text = write_trace(&recs, TraceFormat::Json).unwrap();
        assert_eq!(read_trace_json(&text).unwrap(), recs);
    }

    #[test]
    fn writer_round_trip() {
        let m = parse_uai("MARKOV 3 2 3 2 2 1 0 2 1 2 2 0.5 2.0 6 1 0 3 0.25 1e-3 7").unwrap();
        let back = parse_uai(&write_uai(&m)).unwrap();
        assert_eq!(back.cards(), m.cards());
        for (f, g) in m.factors().iter().zip(back.factors()) {
            assert_eq!(f.scope(), g.scope());
            for (a, b) in f.table().iter().zip(g.table()) {
                assert!(a == b || (a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}
