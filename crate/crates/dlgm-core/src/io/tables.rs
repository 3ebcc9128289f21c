//! CSV tables with a `#`-prefixed reproducibility header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::model_file::FORMAT_VERSION;
use crate::trainer::MetricRow;

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// `# seed=…`, `# config_sha256=…`, `# format_version=…` lines.
pub fn reproducibility_stanza(seed: u64, config_json: &str) -> Vec<String> {
    let hash: String = Sha256::digest(config_json.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    vec![
        format!("seed={seed}"),
        format!("config_sha256={hash}"),
        format!("format_version={FORMAT_VERSION}"),
    ]
}

fn write_stanza(out: &mut impl Write, stanza: &[String]) -> Result<()> {
    for line in stanza {
        writeln!(out, "# {line}")?;
    }
    Ok(())
}

pub fn write_csv(path: impl AsRef<Path>, stanza: &[String], header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    write_stanza(&mut file, stanza)?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        if row.len() != header.len() {
            return Err(Error::DimensionMismatch {
                context: "csv row",
                expected: header.len(),
                got: row.len(),
            });
        }
        w.write_record(row.iter().map(|&x| fmt_f64(x)))?;
    }
    w.flush()?;
    Ok(())
}

/// Header and numeric rows, skipping `#` lines.
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::Data(format!("non-numeric CSV field {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Streaming training log, flushed after every row.
pub struct MetricLog {
    w: csv::Writer<BufWriter<File>>,
}

impl MetricLog {
    pub const HEADER: [&'static str; 6] = ["step", "total", "recon", "latent_kl", "param_reg", "wall_ms"];

    pub fn create(path: impl AsRef<Path>, stanza: &[String]) -> Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        write_stanza(&mut file, stanza)?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(Self::HEADER)?;
        Ok(MetricLog { w })
    }

    pub fn append(&mut self, row: &MetricRow) -> Result<()> {
        self.w.write_record([
            row.step.to_string(),
            fmt_f64(row.total),
            fmt_f64(row.recon),
            fmt_f64(row.latent_kl),
            fmt_f64(row.param_reg),
            fmt_f64(row.wall_ms),
        ])?;
        self.w.flush()?;
        Ok(())
    }
}
