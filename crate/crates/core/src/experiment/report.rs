//! The JSON report envelope.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use serde_json::Value;

use super::generate::ExperimentConfig;
use crate::error::Result;
use crate::qsim::LedgerSnapshot;

pub const REPORT_KEYS: [&str; 5] = ["config", "metrics", "bounds", "ledger", "seed"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub metrics: Value,
    pub bounds: Value,
    pub ledger: LedgerSnapshot,
    pub seed: u64,
}

impl Report {
    /// Pretty JSON with every float written to 17 significant digits.
    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigFormatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// Sums ledgers in order; float totals are therefore independent of how the
/// trials were scheduled.
pub fn merge_ledgers<'a>(parts: impl IntoIterator<Item = &'a LedgerSnapshot>) -> LedgerSnapshot {
    let mut total = LedgerSnapshot::default();
    for p in parts {
        total.classical_row_queries_qk += p.classical_row_queries_qk;
        total.classical_row_queries_v += p.classical_row_queries_v;
        total.kernel_evals += p.kernel_evals;
        total.modeled_quantum_queries += p.modeled_quantum_queries;
        for (k, v) in &p.modeled_breakdown {
            *total.modeled_breakdown.entry(k.clone()).or_insert(0.0) += v;
        }
    }
    total
}

struct SigFormatter<'a>(PrettyFormatter<'a>);

impl Formatter for SigFormatter<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_array(writer)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array(writer)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(writer, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_array_value(writer)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object(writer)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object(writer)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(writer, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.begin_object_value(writer)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        self.0.end_object_value(writer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_have_seventeen_digits_and_round_trip() {
        let xs = [0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5];
        let s = to_json_string(&xs).unwrap();
        assert!(s.contains("1.0000000000000001e-1"), "{s}");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, xs);
        assert_eq!(to_json_string(&json!({"a": 3})).unwrap(), "{\n  \"a\": 3\n}\n");
    }

    #[test]
    fn merge_sums_in_order() {
        let mut a = LedgerSnapshot::default();
        a.kernel_evals = 3;
        a.modeled_quantum_queries = 1.5;
        a.modeled_breakdown.insert("x".into(), 1.5);
        let mut b = a.clone();
        b.classical_row_queries_v = 2;
        b.modeled_breakdown.insert("y".into(), 0.0);
        let m = merge_ledgers([&a, &b]);
        assert_eq!(m.kernel_evals, 6);
        assert_eq!(m.classical_row_queries_v, 2);
        assert_eq!(m.modeled_quantum_queries, 3.0);
        assert_eq!(m.modeled_breakdown["x"], 3.0);
        assert!(m.modeled_breakdown.contains_key("y"));
    }
}
