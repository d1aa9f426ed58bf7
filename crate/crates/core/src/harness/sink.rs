use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use super::config::ExperimentConfig;
use crate::metrics::MetricRecord;

pub const CSV_HEADER: [&str; 7] = ["run_id", "seed", "task", "algorithm", "step", "metric", "value"];

/// Append-only CSV of metric rows for one run, headed by the config echo.
pub struct MetricsWriter {
    out: csv::Writer<BufWriter<File>>,
    run_id: String,
    seed: String,
    task: String,
    algorithm: String,
}

impl MetricsWriter {
    pub fn create(path: &Path, config: &ExperimentConfig, seed: u64) -> io::Result<Self> {
        let mut file = BufWriter::new(File::create(path)?);
        for line in config.to_toml().lines() {
            writeln!(file, "# {line}")?;
        }
        let mut out = csv::Writer::from_writer(file);
        out.write_record(CSV_HEADER)?;
        Ok(Self {
            out,
            run_id: config.run_id(seed),
            seed: seed.to_string(),
            task: config.task(),
            algorithm: config.algorithm.to_string(),
        })
    }

    pub fn write(&mut self, step: u64, metric: &str, value: f64) -> io::Result<()> {
        let step = step.to_string();
        let value = value.to_string();
        self.out
            .write_record([&self.run_id, &self.seed, &self.task, &self.algorithm, &step, metric, &value])?;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Reads every row of a metrics CSV, skipping `#` lines.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, csv::Error> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    reader.deserialize().collect()
}

/// The config echo at the top of a metrics CSV, with `# ` stripped.
pub fn read_config_echo(path: &Path) -> io::Result<String> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.strip_prefix("# ").unwrap_or(&l[1..]))
        .collect::<Vec<_>>()
        .join("\n"))
}
