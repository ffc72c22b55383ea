use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{aggregate, write_curve_csv, write_rows_csv, Agreement, MetricReport, ReportRow};
use super::{ExperimentConfig, HarnessError};
use crate::attribution::{ground_truth_map, pattern_counts, AttributionFunction, FunctionKind};
use crate::datagen::{derive_seed, load_dataset, sample_scene, GenConfig};
use crate::explainer::{explain, RenderMode, SampleSize};
use crate::metrics::{emd, kl_div, to_signature, SaliencyMap};
use crate::predictor::{BridgeOptions, ExternalPredictor, OraclePredictor, Predictor};
use crate::scene::{render_scene, DatasetKind, Image, Scene};

pub const CHECKPOINT_FILE: &str = "checkpoint.jsonl";
/// Regression predictions this close to the label count as agreeing.
pub const REGRESSION_AGREEMENT_TOLERANCE: f64 = 0.05;

const EVAL_STREAM: u64 = 3;
const PLAN_STREAM: u64 = 4;

/// One scene ready for explanation, with its labels and ground truth.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub sample_id: String,
    pub dataset: DatasetKind,
    pub scene: Scene,
    pub image: Image,
    pub labels: BTreeMap<FunctionKind, f64>,
    pub gt_maps: BTreeMap<FunctionKind, SaliencyMap>,
    pub plan_seed: u64,
}

/// Reads up to `n_samples` evaluation records from `data_dir`, or samples
/// fresh scenes per dataset kind from `master_seed` when no directory is set.
pub fn load_samples(config: &ExperimentConfig) -> Result<Vec<EvalSample>, HarnessError> {
    let plan_seed = |ordinal: usize| derive_seed(config.master_seed, PLAN_STREAM, ordinal as u64);
    if let Some(dir) = &config.data_dir {
        let dataset = load_dataset(dir)?;
        let kind = dataset.manifest.config.dataset_kind;
        let records: Vec<_> = dataset.evaluation_records().into_iter().take(config.n_samples).collect();
        return records
            .par_iter()
            .enumerate()
            .map(|(ordinal, record)| {
                let loaded = dataset.load_record(record)?;
                for f in &config.functions {
                    if !loaded.gt_maps.contains_key(f) {
                        return Err(HarnessError::Config(format!(
                            "{} has no {f} ground truth in {}",
                            record.sample_id(),
                            dir.display()
                        )));
                    }
                }
                Ok(EvalSample {
                    sample_id: record.sample_id(),
                    dataset: kind,
                    scene: loaded.record.scene,
                    image: loaded.image,
                    labels: loaded.record.labels,
                    gt_maps: loaded.gt_maps,
                    plan_seed: plan_seed(ordinal),
                })
            })
            .collect();
    }
    let jobs: Vec<(DatasetKind, usize)> =
        config.datasets.iter().flat_map(|&k| (0..config.n_samples).map(move |i| (k, i))).collect();
    jobs.par_iter()
        .enumerate()
        .map(|(ordinal, &(kind, i))| {
            let stream = EVAL_STREAM + 16 * kind as u64;
            let scene = sample_scene(&GenConfig::new(kind), derive_seed(config.master_seed, stream, i as u64))?;
            let counts = pattern_counts(&scene);
            let mut labels = BTreeMap::new();
            let mut gt_maps = BTreeMap::new();
            for f in FunctionKind::ALL {
                let func = AttributionFunction::new(f);
                labels.insert(f, func.eval(&counts).map_err(crate::predictor::PredictError::from)?);
                gt_maps.insert(f, ground_truth_map(&scene, &func));
            }
            Ok(EvalSample {
                sample_id: format!("{}_{i:05}", kind.name()),
                dataset: kind,
                image: render_scene(&scene),
                scene,
                labels,
                gt_maps,
                plan_seed: plan_seed(ordinal),
            })
        })
        .collect()
}

/// EMD and KL of `explanation` against `gt`, both normalized first.
pub fn score(gt: &SaliencyMap, explanation: &SaliencyMap, bins: usize, eps: f64) -> Result<(f64, f64), HarnessError> {
    let p = gt.normalize()?;
    let q = explanation.normalize()?;
    let d = emd(&to_signature(&p, bins)?, &to_signature(&q, bins)?)?;
    Ok((d, kl_div(&p, &q, eps)?))
}

/// Result of explaining one sample for one function at every size.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Unit {
    dataset: DatasetKind,
    function: FunctionKind,
    sample_id: String,
    rows: Vec<ReportRow>,
    baseline: ReportRow,
    /// Predictor output on the unperturbed image.
    prediction: f64,
}

type UnitKey = (DatasetKind, FunctionKind, String);

impl Unit {
    fn key(&self) -> UnitKey {
        (self.dataset, self.function, self.sample_id.clone())
    }
}

enum Source {
    Oracle,
    Bridge(ExternalPredictor),
}

fn evaluate_unit(
    config: &ExperimentConfig,
    source: &Source,
    sample: &EvalSample,
    function: FunctionKind,
    sizes: &[SampleSize],
) -> Result<Unit, HarnessError> {
    let oracle;
    let predictor: &dyn Predictor = match source {
        Source::Oracle => {
            oracle = OraclePredictor::new(sample.scene.clone(), AttributionFunction::new(function));
            &oracle
        }
        Source::Bridge(p) => p,
    };
    let gt = &sample.gt_maps[&function];
    let render = config.render.unwrap_or(RenderMode::for_function(function));
    let row_for = |size: SampleSize| -> Result<(ReportRow, f64), HarnessError> {
        let wrap = |e: HarnessError| HarnessError::Sample {
            sample_id: sample.sample_id.clone(),
            function,
            sample_size: size,
            source: Box::new(e),
        };
        let ex = explain(&sample.image, &sample.scene, predictor, size, sample.plan_seed, render)
            .map_err(|e| wrap(e.into()))?;
        let (emd, kl) = score(gt, &ex.map, config.bins, config.eps).map_err(wrap)?;
        let row = ReportRow {
            sample_id: sample.sample_id.clone(),
            function,
            dataset: sample.dataset,
            sample_size: size,
            emd,
            kl,
        };
        // every plan starts with the unperturbed image
        Ok((row, ex.outputs[0]))
    };
    let mut rows = Vec::with_capacity(sizes.len());
    let mut prediction = None;
    for &size in sizes {
        let (row, out) = row_for(size)?;
        prediction.get_or_insert(out);
        rows.push(row);
    }
    let baseline = match rows.iter().find(|r| r.sample_size == SampleSize::Minimal) {
        Some(r) => r.clone(),
        None => row_for(SampleSize::Minimal)?.0,
    };
    Ok(Unit {
        dataset: sample.dataset,
        function,
        sample_id: sample.sample_id.clone(),
        rows,
        baseline,
        prediction: prediction.expect("at least one sample size"),
    })
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct CheckpointHeader {
    checkpoint: ExperimentConfig,
}

/// Append-only record of finished units so an aborted run can resume.
struct Checkpoint {
    path: PathBuf,
    file: File,
}

impl Checkpoint {
    fn open(config: &ExperimentConfig, out_dir: &Path) -> Result<(Self, HashMap<UnitKey, Unit>), HarnessError> {
        let path = out_dir.join(CHECKPOINT_FILE);
        // transport settings may change across a restart of the model process
        let mut fingerprint = config.clone();
        fingerprint.out_dir = None;
        fingerprint.resume = false;
        fingerprint.bridge_cmd = None;
        fingerprint.bridge_timeout_secs = 0;
        let header = CheckpointHeader { checkpoint: fingerprint };
        let mut done = HashMap::new();
        if path.exists() {
            if !config.resume {
                return Err(HarnessError::Config(format!(
                    "{} exists from an earlier run; resume it or remove the file",
                    path.display()
                )));
            }
            let f = File::open(&path).map_err(|e| HarnessError::io(&path, e))?;
            let mut lines = BufReader::new(f).lines();
            let first = lines.next().transpose().map_err(|e| HarnessError::io(&path, e))?.unwrap_or_default();
            match serde_json::from_str::<CheckpointHeader>(&first) {
                Ok(h) if h == header => {}
                _ => {
                    return Err(HarnessError::Config(format!(
                        "{} was written by a different experiment configuration",
                        path.display()
                    )))
                }
            }
            for line in lines {
                let line = line.map_err(|e| HarnessError::io(&path, e))?;
                // a crash can leave the last line half written
                let Ok(unit) = serde_json::from_str::<Unit>(&line) else { break };
                done.insert(unit.key(), unit);
            }
            log::info!("resuming from {} with {} finished units", path.display(), done.len());
        }
        fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
        let mut cp = Checkpoint {
            file: OpenOptions::new().create(true).write(true).truncate(true).open(&path).map_err(|e| HarnessError::io(&path, e))?,
            path,
        };
        cp.write_line(&serde_json::to_string(&header)?)?;
        let mut units: Vec<&Unit> = done.values().collect();
        units.sort_by(|a, b| a.key().cmp(&b.key()));
        for unit in units {
            cp.append(unit)?;
        }
        Ok((cp, done))
    }

    fn write_line(&mut self, line: &str) -> Result<(), HarnessError> {
        writeln!(self.file, "{line}").and_then(|_| self.file.flush()).map_err(|e| HarnessError::io(&self.path, e))
    }

    fn append(&mut self, unit: &Unit) -> Result<(), HarnessError> {
        self.write_line(&serde_json::to_string(unit)?)
    }
}

fn binning_error_bound(width: usize, height: usize, bins: usize) -> f64 {
    let bin = width.max(height).div_ceil(bins.max(1)) as f64;
    let diag = (((width - 1).pow(2) + (height - 1).pow(2)) as f64).sqrt();
    if diag == 0.0 {
        0.0
    } else {
        std::f64::consts::SQRT_2 * (bin - 1.0) / diag
    }
}

fn agreement(units: &[Unit], samples: &HashMap<String, &EvalSample>, raw_logit: bool) -> Vec<Agreement> {
    let mut groups: Vec<((FunctionKind, DatasetKind), Vec<(f64, f64)>)> = Vec::new();
    for u in units {
        let label = samples[&u.sample_id].labels[&u.function];
        let key = (u.function, u.dataset);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((u.prediction, label)),
            None => groups.push((key, vec![(u.prediction, label)])),
        }
    }
    groups
        .into_iter()
        .map(|((function, dataset), pairs)| {
            let n = pairs.len();
            let hits = pairs
                .iter()
                .filter(|&&(pred, label)| {
                    if function.is_classifier() {
                        let threshold = if raw_logit { 0.0 } else { 0.5 };
                        (pred >= threshold) == (label >= 0.5)
                    } else {
                        (pred - label).abs() <= REGRESSION_AGREEMENT_TOLERANCE
                    }
                })
                .count();
            Agreement {
                function,
                dataset,
                n,
                mae: pairs.iter().map(|(p, l)| (p - l).abs()).sum::<f64>() / n as f64,
                accuracy: Some(hits as f64 / n as f64),
            }
        })
        .collect()
}

/// Runs whichever experiment `config.experiment` names and, when `out_dir`
/// is set, writes `exp<N>_rows.csv`, `exp<N>_summary.json` and, for
/// experiment 1, `exp1_curve.csv`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<MetricReport, HarnessError> {
    config.validate()?;
    let samples = load_samples(config)?;
    if samples.is_empty() {
        return Err(HarnessError::Config("no samples to evaluate".into()));
    }
    let source = match &config.bridge_cmd {
        Some(cmd) => {
            let options = BridgeOptions { timeout: Duration::from_secs(config.bridge_timeout_secs), ..Default::default() };
            let p = ExternalPredictor::spawn(cmd, options)?;
            let expected = config.functions[0].is_classifier();
            if p.meta().is_classifier != expected {
                log::warn!(
                    "bridge model `{}` reports is_classifier={} but {} expects {expected}",
                    p.meta().name,
                    p.meta().is_classifier,
                    config.functions[0]
                );
            }
            Source::Bridge(p)
        }
        None => Source::Oracle,
    };
    let sizes = config.effective_sizes();

    let (mut checkpoint, mut done) = match &config.out_dir {
        Some(dir) => {
            let (cp, done) = Checkpoint::open(config, dir)?;
            (Some(cp), done)
        }
        None => (None, HashMap::new()),
    };

    let mut work: Vec<(&EvalSample, FunctionKind)> = Vec::new();
    for &dataset in &config.datasets_in(&samples) {
        for &function in &config.functions {
            work.extend(samples.iter().filter(|s| s.dataset == dataset).map(|s| (s, function)));
        }
    }
    let pending: Vec<_> =
        work.iter().filter(|(s, f)| !done.contains_key(&(s.dataset, *f, s.sample_id.clone()))).copied().collect();
    // the bridge serializes requests anyway; one unit at a time keeps error context precise
    let chunk = match source {
        Source::Oracle => rayon::current_num_threads().max(1) * 4,
        Source::Bridge(_) => 1,
    };
    for batch in pending.chunks(chunk) {
        let results: Vec<Result<Unit, HarnessError>> =
            batch.par_iter().map(|&(s, f)| evaluate_unit(config, &source, s, f, &sizes)).collect();
        let mut failure = None;
        for r in results {
            match r {
                Ok(unit) => {
                    if let Some(cp) = checkpoint.as_mut() {
                        cp.append(&unit)?;
                    }
                    done.insert(unit.key(), unit);
                }
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
    }

    let units: Vec<Unit> =
        work.iter().map(|(s, f)| done.remove(&(s.dataset, *f, s.sample_id.clone())).expect("every unit finished")).collect();
    let rows: Vec<ReportRow> = units.iter().flat_map(|u| u.rows.iter().cloned()).collect();
    let baseline_rows: Vec<ReportRow> = units.iter().map(|u| u.baseline.clone()).collect();
    let agreement = match &source {
        Source::Bridge(p) => {
            let by_id: HashMap<String, &EvalSample> = samples.iter().map(|s| (s.sample_id.clone(), s)).collect();
            agreement(&units, &by_id, p.meta().raw_logit)
        }
        Source::Oracle => Vec::new(),
    };
    let report = MetricReport {
        experiment: config.experiment,
        bins: config.bins,
        binning_error_bound: binning_error_bound(samples[0].image.width, samples[0].image.height, config.bins),
        aggregates: aggregate(&rows),
        baseline: aggregate(&baseline_rows),
        rows,
        agreement,
    };

    if let Some(dir) = &config.out_dir {
        let n = config.experiment;
        write_rows_csv(&dir.join(format!("exp{n}_rows.csv")), &report.rows)?;
        let summary = dir.join(format!("exp{n}_summary.json"));
        fs::write(&summary, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| HarnessError::io(&summary, e))?;
        if n == 1 {
            write_curve_csv(&dir.join("exp1_curve.csv"), &report.aggregates, &sizes)?;
        }
        if let Some(cp) = checkpoint.take() {
            drop(cp.file);
            fs::remove_file(&cp.path).map_err(|e| HarnessError::io(&cp.path, e))?;
        }
    }
    Ok(report)
}

impl ExperimentConfig {
    /// Dataset kinds present among the samples, in config order.
    fn datasets_in(&self, samples: &[EvalSample]) -> Vec<DatasetKind> {
        if self.data_dir.is_some() {
            let mut kinds: Vec<DatasetKind> = Vec::new();
            for s in samples {
                if !kinds.contains(&s.dataset) {
                    kinds.push(s.dataset);
                }
            }
            kinds
        } else {
            self.datasets.clone()
        }
    }
}

fn with_experiment(config: &ExperimentConfig, n: u8) -> Result<MetricReport, HarnessError> {
    if config.experiment != n {
        return Err(HarnessError::Config(format!("config is for experiment {}, not {n}", config.experiment)));
    }
    run_experiment(config)
}

/// Sample-size sweep with the oracle predictor.
pub fn run_experiment1(config: &ExperimentConfig) -> Result<MetricReport, HarnessError> {
    with_experiment(config, 1)
}

/// Full enumeration with the oracle predictor.
pub fn run_experiment2(config: &ExperimentConfig) -> Result<MetricReport, HarnessError> {
    with_experiment(config, 2)
}

/// Full enumeration with a bridge predictor; also records label agreement.
pub fn run_experiment3(config: &ExperimentConfig) -> Result<MetricReport, HarnessError> {
    with_experiment(config, 3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: u8, n: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(experiment);
        c.n_samples = n;
        c
    }

    #[test]
    fn single_size_sweep_rejected() {
        let mut c = small(1, 3);
        c.sample_sizes = vec![SampleSize::Full];
        assert!(matches!(run_experiment1(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn experiment3_needs_bridge() {
        let mut c = small(3, 3);
        c.functions = vec![FunctionKind::Suum];
        c.datasets = vec![DatasetKind::Shape];
        assert!(matches!(run_experiment3(&c), Err(HarnessError::Config(_))));
    }

    #[test]
    fn row_count_is_samples_times_sizes() {
        let mut c = small(1, 4);
        c.datasets = vec![DatasetKind::Color];
        c.functions = vec![FunctionKind::Ssin];
        c.sample_sizes = vec![SampleSize::Count(8), SampleSize::Count(16), SampleSize::Full];
        let r = run_experiment1(&c).unwrap();
        assert_eq!(r.rows.len(), 4 * 3);
        assert_eq!(r.aggregates.len(), 3);
        assert_eq!(r.baseline.len(), 1);
        assert_eq!(r.baseline[0].sample_size, SampleSize::Minimal);
        for a in &r.aggregates {
            let mean: f64 = r.rows.iter().filter(|x| x.sample_size == a.sample_size).map(|x| x.emd).sum::<f64>() / 4.0;
            assert!((a.emd_mean - mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn identical_maps_score_zero() {
        let mut m = SaliencyMap::zeros(8, 8);
        m.set(2, 3, 1.0);
        m.set(5, 5, 3.0);
        let (d, kl) = score(&m, &m, 4, 1e-10).unwrap();
        assert_eq!(d, 0.0);
        assert!(kl.abs() < 1e-6);
    }

    #[test]
    fn binning_bound_for_default_grid() {
        assert!((binning_error_bound(128, 128, 32) - 3.0 / 127.0).abs() < 1e-12);
        assert_eq!(binning_error_bound(128, 128, 128), 0.0);
    }

    #[test]
    fn resume_skips_finished_units_and_cleans_up() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small(2, 3);
        c.datasets = vec![DatasetKind::Shape];
        c.functions = vec![FunctionKind::Suum];
        c.out_dir = Some(dir.path().to_path_buf());
        let fresh = run_experiment2(&c).unwrap();
        assert!(!dir.path().join(CHECKPOINT_FILE).exists());
        let csv = fs::read(dir.path().join("exp2_rows.csv")).unwrap();

        // a leftover checkpoint is refused without resume
        fs::write(dir.path().join(CHECKPOINT_FILE), "").unwrap();
        assert!(matches!(run_experiment2(&c), Err(HarnessError::Config(_))));

        // a partial checkpoint from this config is picked up
        let mut partial = c.clone();
        partial.out_dir = None;
        let header = CheckpointHeader { checkpoint: ExperimentConfig { bridge_timeout_secs: 0, ..partial.clone() } };
        let samples = load_samples(&partial).unwrap();
        let unit = evaluate_unit(&partial, &Source::Oracle, &samples[0], FunctionKind::Suum, &[SampleSize::Full]).unwrap();
        let text = format!("{}\n{}\n{{\"trunc", serde_json::to_string(&header).unwrap(), serde_json::to_string(&unit).unwrap());
        fs::write(dir.path().join(CHECKPOINT_FILE), text).unwrap();
        c.resume = true;
        let resumed = run_experiment2(&c).unwrap();
        assert_eq!(resumed.rows, fresh.rows);
        assert_eq!(fs::read(dir.path().join("exp2_rows.csv")).unwrap(), csv);
    }
}
