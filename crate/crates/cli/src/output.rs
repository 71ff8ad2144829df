//! CSV and JSON artifacts. Every CSV starts with `# config_hash=<hex>`
//! and writes reals with 17 significant digits, which round-trips `f64`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crossdiff::state::DiagnosticsRecord;
use crossdiff::{Mesh1D, State};
use serde::Serialize;

use crate::error::{io, CliError, Result};

/// Fixed 17-significant-digit form.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV file with a comment header, flushed after every row so a failed
/// run keeps everything written up to the failure.
pub struct CsvSink {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvSink {
    pub fn create(path: &Path, comments: &[(&str, String)], columns: &[&str]) -> Result<Self> {
        let mut file = BufWriter::new(io(path, File::create(path))?);
        for (key, value) in comments {
            io(path, writeln!(file, "# {key}={value}"))?;
        }
        let mut inner = csv::Writer::from_writer(file);
        let sink_err = |source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        };
        inner.write_record(columns).map_err(sink_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            inner,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let path = &self.path;
        self.inner.write_record(fields).map_err(|source| CliError::Csv {
            path: path.clone(),
            source,
        })?;
        io(path, self.inner.flush())
    }
}

pub fn snapshot_name(k: usize) -> String {
    format!("snapshot_{k:05}.csv")
}

/// Columns `x_center, rho, eta`; the time is a header comment.
pub fn write_snapshot(path: &Path, state: &State, mesh: &Mesh1D, hash: &str) -> Result<()> {
    let comments = [("config_hash", hash.to_string()), ("time", real(state.time))];
    let mut sink = CsvSink::create(path, &comments, &["x_center", "rho", "eta"])?;
    for (i, x) in mesh.centers().iter().enumerate() {
        sink.row([real(*x), real(state.rho[i]), real(state.eta[i])])?;
    }
    Ok(())
}

pub const DIAGNOSTIC_COLUMNS: [&str; 9] = [
    "time",
    "mass_rho",
    "mass_eta",
    "min_rho",
    "min_eta",
    "entropy",
    "dissipation",
    "energy_residual",
    "overlap",
];

/// One diagnostics row; an undefined energy residual is an empty field.
pub fn diagnostics_row(d: &DiagnosticsRecord) -> [String; 9] {
    [
        real(d.time),
        real(d.mass_rho),
        real(d.mass_eta),
        real(d.min_rho),
        real(d.min_eta),
        real(d.entropy),
        real(d.dissipation),
        d.energy_residual.map(real).unwrap_or_default(),
        real(d.overlap),
    ]
}

/// A snapshot read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub config_hash: Option<String>,
    pub time: Option<f64>,
    pub x: Vec<f64>,
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
}

fn malformed(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Malformed {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_snapshot(path: &Path) -> Result<Snapshot> {
    let text = io(path, fs::read_to_string(path))?;
    let mut snap = Snapshot {
        config_hash: None,
        time: None,
        x: Vec::new(),
        rho: Vec::new(),
        eta: Vec::new(),
    };
    for line in text.lines().take_while(|l| l.starts_with('#')) {
        match line[1..].trim().split_once('=') {
            Some(("config_hash", v)) => snap.config_hash = Some(v.to_string()),
            Some(("time", v)) => {
                snap.time = Some(v.parse().map_err(|_| malformed(path, format!("bad time {v:?}")))?);
            }
            _ => {}
        }
    }
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    })?;
    if headers != vec!["x_center", "rho", "eta"] {
        return Err(malformed(path, format!("unexpected columns {headers:?}")));
    }
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|source| CliError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let parse = |k: usize| -> Result<f64> {
            record[k]
                .parse()
                .map_err(|_| malformed(path, format!("row {}: bad number {:?}", line + 1, &record[k])))
        };
        snap.x.push(parse(0)?);
        snap.rho.push(parse(1)?);
        snap.eta.push(parse(2)?);
    }
    Ok(snap)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    io(path, fs::write(path, text + "\n"))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn create_dir(path: &Path) -> Result<()> {
    io(path, fs::create_dir_all(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            assert_eq!(real(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(real(0.5), "5.0000000000000000e-1");
    }

    #[test]
    fn snapshots_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh1D::uniform(0.0, 1.0, 3).unwrap();
        let mut state = State::new(&mesh, vec![0.1, 0.2, 1.0 / 3.0], vec![0.0, 1e-300, 7.0]).unwrap();
        state.time = 0.05;
        let path = dir.path().join(snapshot_name(1));
        write_snapshot(&path, &state, &mesh, "abc").unwrap();
        let snap = read_snapshot(&path).unwrap();
        assert_eq!(snap.config_hash.as_deref(), Some("abc"));
        assert_eq!(snap.time, Some(0.05));
        assert_eq!(snap.x, mesh.centers());
        assert_eq!(snap.rho, state.rho);
        assert_eq!(snap.eta, state.eta);
    }

    #[test]
    fn malformed_snapshots_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x,rho\n1,2\n").unwrap();
        assert!(matches!(read_snapshot(&path), Err(CliError::Malformed { .. })));
        fs::write(&path, "x_center,rho,eta\n1,two,3\n").unwrap();
        assert!(matches!(read_snapshot(&path), Err(CliError::Malformed { .. })));
    }
}
