//! Per-step metric CSVs and the test results table.

use std::fs;
use std::path::Path;

use flowbench_core::models::ModelKind;
use flowbench_core::train::MetricsRecord;

use crate::error::{io_at, Error, Result};

pub const METRICS_HEADER: [&str; 4] = ["step", "FlowTransformerValues", "FlowConvValues", "FlowAutoencoderValues"];
pub const LOSS_CSV: &str = "Train_step_loss.csv";
pub const PSNR_CSV: &str = "PSNR_training.csv";
pub const SSIM_CSV: &str = "SSIM_training.csv";
pub const TEST_RESULTS_CSV: &str = "test_results.csv";

/// `%g`-style rendering with six significant digits; `inf`, `-inf` and
/// `nan` for non-finite values.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        trim_zeros(format!("{:.*}", (5 - exp) as usize, v))
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa.to_owned()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

/// Which metric of a record a CSV column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Loss,
    Psnr,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Loss, Metric::Psnr, Metric::Ssim];

    pub fn file_name(self) -> &'static str {
        match self {
            Metric::Loss => LOSS_CSV,
            Metric::Psnr => PSNR_CSV,
            Metric::Ssim => SSIM_CSV,
        }
    }

    pub fn of(self, r: &MetricsRecord) -> f64 {
        match self {
            Metric::Loss => r.mse,
            Metric::Psnr => r.psnr,
            Metric::Ssim => r.ssim,
        }
    }
}

/// Per-step records of up to three models, held in CSV column order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    columns: [Option<Vec<MetricsRecord>>; 3],
}

fn column(kind: ModelKind) -> usize {
    ModelKind::CSV_ORDER.iter().position(|&k| k == kind).expect("every kind has a column")
}

impl MetricsTable {
    pub fn insert(&mut self, kind: ModelKind, records: Vec<MetricsRecord>) {
        self.columns[column(kind)] = Some(records);
    }

    pub fn records(&self, kind: ModelKind) -> Option<&[MetricsRecord]> {
        self.columns[column(kind)].as_deref()
    }

    pub fn rows(&self) -> usize {
        self.columns.iter().flatten().map(Vec::len).max().unwrap_or(0)
    }

    /// CSV text for one metric; columns of models that did not run are
    /// left empty.
    pub fn to_csv(&self, metric: Metric) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(METRICS_HEADER)?;
        for i in 0..self.rows() {
            let mut row = vec![(i + 1).to_string()];
            for col in &self.columns {
                row.push(col.as_ref().and_then(|c| c.get(i)).map(|r| format_value(metric.of(r))).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("ASCII output"))
    }

    /// Writes the three metric files into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        for metric in Metric::ALL {
            let path = dir.as_ref().join(metric.file_name());
            fs::write(&path, self.to_csv(metric)?).map_err(io_at(&path))?;
        }
        Ok(())
    }
}

/// One parsed metric CSV row: the step and each model's value, if present.
pub type MetricRow = (usize, [Option<f64>; 3]);

/// Parses a metric CSV, insisting on the exact header.
pub fn parse_metric_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().ne(METRICS_HEADER) {
        return Err(Error::Format(format!("unexpected metrics header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse().map_err(|_| Error::Format(format!("bad {what} value {s:?}")))
    };
    r.records()
        .map(|rec| {
            let rec = rec?;
            let step = rec[0].parse().map_err(|_| Error::Format(format!("bad step {:?}", &rec[0])))?;
            let mut values = [None; 3];
            for (i, v) in values.iter_mut().enumerate() {
                let s = &rec[i + 1];
                if !s.is_empty() {
                    *v = Some(parse(s, METRICS_HEADER[i + 1])?);
                }
            }
            Ok((step, values))
        })
        .collect()
}

pub fn read_metric_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let path = path.as_ref();
    parse_metric_csv(&fs::read_to_string(path).map_err(io_at(path))?)
}

/// `model,test_loss,psnr,ssim`, one row per evaluated model.
pub fn test_results_csv(results: &[MetricsRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "test_loss", "psnr", "ssim"])?;
    for r in results {
        w.write_record([r.model.name().to_owned(), format_value(r.mse), format_value(r.psnr), format_value(r.ssim)])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("ASCII output"))
}

pub fn write_test_results(path: impl AsRef<Path>, results: &[MetricsRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, test_results_csv(results)?).map_err(io_at(path))
}

/// Parses `test_results.csv` into `(model, test_loss, psnr, ssim)` rows.
pub fn read_test_results(path: impl AsRef<Path>) -> Result<Vec<(ModelKind, f64, f64, f64)>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            let num = |i: usize| rec[i].parse::<f64>().map_err(|_| Error::Format(format!("bad value {:?}", &rec[i])));
            Ok((rec[0].parse()?, num(1)?, num(2)?, num(3)?))
        })
        .collect()
}
