use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::attribution::FunctionKind;
use crate::explainer::SampleSize;
use crate::scene::DatasetKind;

/// One CSV line: `sample_id,function,dataset,sample_size,emd,kl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sample_id: String,
    pub function: FunctionKind,
    pub dataset: DatasetKind,
    pub sample_size: SampleSize,
    pub emd: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub function: FunctionKind,
    pub dataset: DatasetKind,
    pub sample_size: SampleSize,
    pub n: usize,
    pub emd_mean: f64,
    pub emd_median: f64,
    pub emd_std: f64,
    pub kl_mean: f64,
    pub kl_median: f64,
    pub kl_std: f64,
}

/// How well the predictor reproduces the stored labels on unperturbed images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub function: FunctionKind,
    pub dataset: DatasetKind,
    pub n: usize,
    pub mae: f64,
    /// Label agreement for classifiers (logits thresholded at 0 when raw).
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub experiment: u8,
    pub bins: usize,
    /// Worst-case EMD shift introduced by binning, as a fraction of the diagonal.
    pub binning_error_bound: f64,
    #[serde(skip)]
    pub rows: Vec<ReportRow>,
    pub aggregates: Vec<Aggregate>,
    /// Minimal-sample-size aggregates, the reference point for KL values.
    pub baseline: Vec<Aggregate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub agreement: Vec<Agreement>,
}

impl MetricReport {
    pub fn aggregate_for(&self, function: FunctionKind, dataset: DatasetKind, size: SampleSize) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.function == function && a.dataset == dataset && a.sample_size == size)
    }

    pub fn baseline_for(&self, function: FunctionKind, dataset: DatasetKind) -> Option<&Aggregate> {
        self.baseline.iter().find(|a| a.function == function && a.dataset == dataset)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Sample standard deviation (n - 1 denominator; 0 for a single value).
fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Groups rows by (dataset, function, sample size) in first-seen order.
pub fn aggregate(rows: &[ReportRow]) -> Vec<Aggregate> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(DatasetKind, FunctionKind, SampleSize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in rows {
        let key = (r.dataset, r.function, r.sample_size);
        let entry = groups.entry(key).or_insert_with(|| {
            order.push(key);
            Default::default()
        });
        entry.0.push(r.emd);
        entry.1.push(r.kl);
    }
    order
        .into_iter()
        .map(|key| {
            let (emd, kl) = &groups[&key];
            Aggregate {
                dataset: key.0,
                function: key.1,
                sample_size: key.2,
                n: emd.len(),
                emd_mean: mean(emd),
                emd_median: median(emd),
                emd_std: std_dev(emd),
                kl_mean: mean(kl),
                kl_median: median(kl),
                kl_std: std_dev(kl),
            }
        })
        .collect()
}

pub fn write_rows_csv(path: &Path, rows: &[ReportRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}

/// One line per (function, dataset, metric) with a mean column per size.
pub fn write_curve_csv(path: &Path, aggregates: &[Aggregate], sizes: &[SampleSize]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["function".to_string(), "dataset".to_string(), "metric".to_string()];
    header.extend(sizes.iter().map(ToString::to_string));
    w.write_record(&header)?;
    let mut seen = Vec::new();
    for a in aggregates {
        if !seen.contains(&(a.function, a.dataset)) {
            seen.push((a.function, a.dataset));
        }
    }
    for (function, dataset) in seen {
        for metric in ["emd", "kl"] {
            let mut rec = vec![function.to_string(), dataset.to_string(), metric.to_string()];
            for &size in sizes {
                let value = aggregates
                    .iter()
                    .find(|a| a.function == function && a.dataset == dataset && a.sample_size == size)
                    .map(|a| if metric == "emd" { a.emd_mean } else { a.kl_mean });
                rec.push(value.map(|v| v.to_string()).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))?;
    Ok(())
}
