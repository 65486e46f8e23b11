//! Sample CSV files and evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::checkpoint::write_atomic;
use crate::tensor::{Element, Tensor};

/// Metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub sample_count: usize,
    pub seed: u64,
    /// Network evaluations per sample, when known.
    pub nfe: Option<usize>,
    /// Seconds per generated sample; absent when timing is disabled.
    pub wall_clock_per_sample: Option<f64>,
}

impl EvalReport {
    pub fn new(sample_count: usize, seed: u64) -> Self {
        EvalReport {
            metrics: BTreeMap::new(),
            sample_count,
            seed,
            nfe: None,
            wall_clock_per_sample: None,
        }
    }

    pub fn with_metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    fn check_finite(&self) -> Result<()> {
        let bad = self
            .metrics
            .iter()
            .map(|(k, &v)| (k.as_str(), v))
            .chain(self.wall_clock_per_sample.map(|v| ("wall_clock_per_sample", v)))
            .find(|(_, v)| !v.is_finite());
        match bad {
            Some((k, v)) => Err(Error::InvalidArgument(format!("report value {k} = {v} is not finite"))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        self.check_finite()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvalReport = serde_json::from_str(text)?;
        report.check_finite()?;
        Ok(report)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Samples with the class each was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub labels: Vec<usize>,
    /// Flattened rows, `labels.len() × dim`.
    pub values: Vec<f32>,
    pub dim: usize,
}

impl SampleSet {
    pub fn from_tensor<T: Element>(samples: &Tensor<T>, labels: &[usize]) -> Result<Self> {
        let n = labels.len();
        if samples.shape().first() != Some(&n) {
            return Err(Error::shape(samples.shape(), &[n]));
        }
        let dim = if n == 0 { samples.shape()[1..].iter().product() } else { samples.numel() / n };
        Ok(SampleSet {
            labels: labels.to_vec(),
            values: samples.data().iter().map(|x| x.as_f64() as f32).collect(),
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[n × dim]` tensor of the sample rows.
    pub fn tensor<T: Element>(&self) -> Result<Tensor<T>> {
        Tensor::new(self.values.iter().map(|&x| T::of(x as f64)).collect(), &[self.len(), self.dim])
    }

    /// CSV with header `class,dim0,dim1,...`, one row per sample.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["class".to_string()];
        header.extend((0..self.dim).map(|i| format!("dim{i}")));
        w.write_record(&header)?;
        for (row, &c) in self.values.chunks(self.dim.max(1)).zip(&self.labels) {
            let mut rec = vec![c.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::Reader::from_reader(bytes);
        let header = r.headers()?.clone();
        let dim = header.len().saturating_sub(1);
        let expected = std::iter::once("class".to_string()).chain((0..dim).map(|i| format!("dim{i}")));
        if !header.iter().map(str::to_string).eq(expected) {
            return Err(Error::InvalidArgument(format!("unexpected sample header {header:?}")));
        }
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse_err = |field: &str| Error::InvalidArgument(format!("bad sample field {field:?}"));
            labels.push(rec[0].parse().map_err(|_| parse_err(&rec[0]))?);
            for f in rec.iter().skip(1) {
                values.push(f.parse::<f32>().map_err(|_| parse_err(f))?);
            }
        }
        Ok(SampleSet { labels, values, dim })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_csv()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&bytes)
    }
}
