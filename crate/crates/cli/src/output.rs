use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// What every artifact records about its origin.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn footer(&self) -> String {
        format!("# config_sha256={} seed={} version={VERSION}\n", self.config_sha256, self.seed)
    }
}

/// Output directory plus the list of files written so far.
#[derive(Debug)]
pub struct Sink {
    pub dir: PathBuf,
    pub provenance: Provenance,
    pub written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, provenance: Provenance) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            provenance,
            written: Vec::new(),
        })
    }

    /// CSV with a header row (also when empty) and the provenance footer.
    pub fn csv<T: Serialize>(&mut self, name: &str, header: &[&str], rows: &[T]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut buf = Vec::new();
        {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        buf.extend_from_slice(self.provenance.footer().as_bytes());
        std::fs::write(&path, buf)?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(&mut w, value)?;
        w.write_all(b"\n")?;
        w.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }
}

/// `(model_id, n, quantity, value, err_bound)`.
pub const ORACLE_HEADER: [&str; 5] = ["model_id", "n", "quantity", "value", "err_bound"];
/// `(test, model_id, n, R, statistic, pvalue, alpha, pass, past_id)`.
pub const STATS_HEADER: [&str; 9] = ["test", "model_id", "n", "R", "statistic", "pvalue", "alpha", "pass", "past_id"];
/// `(condition, classification, N, partial_sum, certified)`.
pub const VERDICT_HEADER: [&str; 5] = ["condition", "classification", "N", "partial_sum", "certified"];
/// `(model_id, functional, n, value, se, method, past_id, trunc_N)`.
pub const APPROX_HEADER: [&str; 8] = ["model_id", "functional", "n", "value", "se", "method", "past_id", "trunc_N"];
/// `(model_id, n, replicate, S_n, max_S, max_absdev, seed_hi, seed_lo)`.
pub const PATHS_HEADER: [&str; 8] = ["model_id", "n", "replicate", "S_n", "max_S", "max_absdev", "seed_hi", "seed_lo"];

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub model_id: String,
    pub n: usize,
    pub quantity: String,
    pub value: f64,
    pub err_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsRow {
    pub test: String,
    pub model_id: String,
    pub n: usize,
    #[serde(rename = "R")]
    pub r: usize,
    pub statistic: f64,
    pub pvalue: Option<f64>,
    pub alpha: f64,
    pub pass: bool,
    pub past_id: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PathRow {
    pub model_id: String,
    pub n: usize,
    pub replicate: usize,
    #[serde(rename = "S_n")]
    pub s_n: f64,
    #[serde(rename = "max_S")]
    pub max_s: f64,
    pub max_absdev: Option<f64>,
    pub seed_hi: u64,
    pub seed_lo: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_footer() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = Sink::new(
            dir.path(),
            Provenance {
                config_sha256: sha256_hex(b"{}"),
                seed: 3,
            },
        )
        .unwrap();
        let rows = vec![OracleRow {
            model_id: "m".into(),
            n: 2,
            quantity: "var".into(),
            value: 2.0,
            err_bound: 0.0,
        }];
        let p = sink.csv("o.csv", &ORACLE_HEADER, &rows).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "model_id,n,quantity,value,err_bound");
        assert_eq!(lines[1], "m,2,var,2.0,0.0");
        assert!(lines[2].starts_with("# config_sha256=44136fa355b3678a1146ad16f7e8649e94fb4fc21fe77e8310c060f61caaff8a seed=3"));
    }
}
