use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Time series of scalar diagnostics with run metadata.
///
/// CSV layout: `# key=value` metadata lines, then a header `t,<columns...>`,
/// then one row per sample. Floats use the shortest round-trip form, so
/// both CSV and JSON round-trip bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLedger {
    pub columns: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub metadata: BTreeMap<String, String>,
}

fn ledger_err(reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name: "ledger",
        reason: reason.into(),
    }
}

impl RunLedger {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        let mut metadata = BTreeMap::new();
        metadata.insert("version".into(), env!("CARGO_PKG_VERSION").into());
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            times: Vec::new(),
            rows: Vec::new(),
            metadata,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "ledger row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if !t.is_finite() || row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(last) = self.times.last() {
            if !(t > *last) {
                return Err(ledger_err(format!("time {t} does not follow {last}")));
            }
        }
        self.times.push(t);
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            if k.contains(['=', '\n']) || v.contains('\n') {
                return Err(ledger_err(format!("metadata entry {k:?} cannot be written")));
            }
            let _ = writeln!(out, "# {k}={v}");
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> = std::iter::once("t").chain(self.columns.iter().map(String::as_str)).collect();
        w.write_record(&header).map_err(csv_err)?;
        for (t, row) in self.times.iter().zip(&self.rows) {
            let rec: Vec<String> = std::iter::once(t).chain(row).map(|v| v.to_string()).collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        let body = w.into_inner().map_err(|e| ledger_err(e.to_string()))?;
        out.push_str(&String::from_utf8(body).map_err(|e| ledger_err(e.to_string()))?);
        Ok(out)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut metadata = BTreeMap::new();
        let mut rest = text;
        while let Some(line) = rest.strip_prefix("# ") {
            let (line, tail) = line.split_once('\n').unwrap_or((line, ""));
            let (k, v) = line.split_once('=').ok_or_else(|| ledger_err("bad metadata line"))?;
            metadata.insert(k.to_string(), v.to_string());
            rest = tail;
        }
        let mut r = csv::Reader::from_reader(rest.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.get(0) != Some("t") {
            return Err(ledger_err("first column must be t"));
        }
        let mut ledger = RunLedger {
            columns: header.iter().skip(1).map(String::from).collect(),
            times: Vec::new(),
            rows: Vec::new(),
            metadata,
        };
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let vals = rec
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| ledger_err(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            ledger.push(vals[0], vals[1..].to_vec())?;
        }
        Ok(ledger)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| ledger_err(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RunLedger = serde_json::from_str(text).map_err(|e| ledger_err(e.to_string()))?;
        // re-push to enforce the invariants
        let mut ledger = RunLedger {
            columns: raw.columns,
            times: Vec::new(),
            rows: Vec::new(),
            metadata: raw.metadata,
        };
        for (t, row) in raw.times.into_iter().zip(raw.rows) {
            ledger.push(t, row)?;
        }
        Ok(ledger)
    }
}

fn csv_err(e: csv::Error) -> Error {
    ledger_err(e.to_string())
}

/// Lowercase hex SHA-256.
pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample() -> RunLedger {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut l = RunLedger::new(["mass", "energy"]).with_meta("config_hash", config_hash(b"x"));
        for k in 0..50 {
            let t = 0.1 * k as f64 + rng.random_range(0.0..1e-3);
            l.push(t, vec![rng.random::<f64>() * 1e-7, (rng.random::<f64>() - 0.5) * 1e9]).unwrap();
        }
        l
    }

    #[test]
    fn csv_and_json_round_trip_bit_exactly() {
        let l = sample();
        let c = RunLedger::from_csv(&l.to_csv().unwrap()).unwrap();
        let j = RunLedger::from_json(&l.to_json().unwrap()).unwrap();
        for other in [&c, &j] {
            assert_eq!(other.columns, l.columns);
            assert_eq!(other.metadata, l.metadata);
            for (a, b) in other.rows.iter().flatten().zip(l.rows.iter().flatten()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            for (a, b) in other.times.iter().zip(&l.times) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn push_enforces_invariants() {
        let mut l = RunLedger::new(["a"]);
        l.push(0.0, vec![1.0]).unwrap();
        assert!(l.push(0.0, vec![1.0]).is_err());
        assert!(l.push(1.0, vec![]).is_err());
        assert!(l.push(1.0, vec![f64::NAN]).is_err());
        assert_eq!(l.column("a"), Some(vec![1.0]));
        assert_eq!(l.column("b"), None);
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
