//! End-to-end runs: recording -> features -> labels -> split -> train ->
//! held-out report.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::{segment_and_align, AudioSignal, PowerTrace};
use crate::error::{Error, Result};
use crate::eval::{self, class_counts, EvalReport, Split, SplitSpec};
use crate::labeling::{BoundsPolicy, BoundsSource, ClassBounds, ClassLabel};
use crate::mlp::{self, MlpModel, TrainConfig, TrainingSummary, OUTPUTS};
use crate::spectral::{Approach, ExtractionConfig, FeatureVector, MinMaxScaler};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub extraction: ExtractionConfig,
    pub train: TrainConfig,
    pub split: SplitSpec,
    pub bounds_policy: BoundsPolicy,
    pub bounds_source: BoundsSource,
    pub offset_s: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extraction: ExtractionConfig::default(),
            train: TrainConfig::default(),
            split: SplitSpec::default(),
            bounds_policy: BoundsPolicy::default(),
            bounds_source: BoundsSource::default(),
            offset_s: 0.0,
        }
    }
}

/// Per-segment features paired with their wattage.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub sample_rate_hz: u32,
    pub segment_len: usize,
    pub extraction: ExtractionConfig,
    pub features: Vec<FeatureVector>,
    pub watts: Vec<f64>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

pub fn extract_dataset(
    signal: &AudioSignal,
    trace: &PowerTrace,
    extraction: &ExtractionConfig,
    offset_s: f64,
) -> Result<FeatureSet> {
    let pairs = segment_and_align(signal, trace, offset_s)?;
    let segment_len = pairs[0].0.len();
    let features = pairs
        .par_iter()
        .map(|(seg, _)| extraction.extract(seg))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSet {
        sample_rate_hz: signal.sample_rate_hz(),
        segment_len,
        extraction: *extraction,
        features,
        watts: pairs.iter().map(|(_, w)| *w).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: MlpModel,
    pub history: Vec<f64>,
    pub split: Split,
    pub report: EvalReport,
}

fn labels_for(watts: &[f64], bounds: &ClassBounds) -> Result<Vec<ClassLabel>> {
    watts.iter().map(|&w| bounds.classify(w)).collect()
}

/// Fits the class bounds the way `config` asks, returning them with the
/// split and every sample's label.
pub fn label_and_split(
    watts: &[f64],
    config: &PipelineConfig,
) -> Result<(ClassBounds, Split, Vec<ClassLabel>)> {
    let global = ClassBounds::fit(watts, config.bounds_policy)?;
    let labels = labels_for(watts, &global)?;
    let split = eval::split(&labels, &config.split)?;
    match config.bounds_source {
        BoundsSource::All => Ok((global, split, labels)),
        BoundsSource::Train => {
            let train_watts: Vec<f64> = split.train.iter().map(|&i| watts[i]).collect();
            let bounds = ClassBounds::fit(&train_watts, config.bounds_policy)?;
            let labels = labels_for(watts, &bounds)?;
            Ok((bounds, split, labels))
        }
    }
}

impl PipelineConfig {
    /// Settings a model was trained with, for reproducing its split.
    pub fn from_model(model: &MlpModel) -> Option<Self> {
        let t = model.training.as_ref()?;
        Some(Self {
            extraction: model.extraction,
            train: t.config,
            split: t.split,
            bounds_policy: t.bounds_policy,
            bounds_source: t.bounds_source,
            offset_s: t.offset_s,
        })
    }
}

/// Trains on the training part of `data` and scores the held-out part.
pub fn run(data: &FeatureSet, config: &PipelineConfig) -> Result<RunOutcome> {
    if data.extraction != config.extraction {
        return Err(Error::InvalidInput(
            "feature set was extracted with a different configuration".into(),
        ));
    }
    let (bounds, split, labels) = label_and_split(&data.watts, config)?;
    if split.test.is_empty() {
        return Err(Error::EmptyInput("split left no test samples".into()));
    }

    let scaler = MinMaxScaler::fit(
        split
            .train
            .iter()
            .map(|&i| data.features[i].values.as_slice()),
    )?;
    let inputs = split
        .train
        .iter()
        .map(|&i| scaler.apply(&data.features[i].values))
        .collect::<Result<Vec<_>>>()?;
    let targets: Vec<_> = split.train.iter().map(|&i| labels[i].encode()).collect();
    let outcome = mlp::train(&inputs, &targets, &config.train)?;

    let mut model = MlpModel::new(
        data.sample_rate_hz,
        data.segment_len,
        data.extraction,
        scaler,
        bounds,
        outcome.network.clone(),
    )?;
    model.training = Some(TrainingSummary {
        config: config.train,
        epochs: outcome.epochs(),
        final_mse: outcome.final_mse(),
        stop: outcome.stop,
        train_samples: split.train.len(),
        split: config.split,
        bounds_policy: config.bounds_policy,
        bounds_source: config.bounds_source,
        offset_s: config.offset_s,
    });

    let test_set: Vec<(Vec<f64>, ClassLabel)> = split
        .test
        .iter()
        .map(|&i| (data.features[i].values.clone(), labels[i]))
        .collect();
    let train_counts = class_counts(split.train.iter().map(|&i| labels[i]));
    let shape = model.shape;
    let report = eval::evaluate(&model, &test_set)?
        .with_train_counts(train_counts)
        .echo("approach", config.extraction.approach)
        .echo("band", config.extraction.band)
        .echo("taper", config.extraction.taper)
        .echo("sample_rate_hz", data.sample_rate_hz)
        .echo("segment_len", data.segment_len)
        .echo("segments", data.len())
        .echo("train", config.train)
        .echo("split", config.split)
        .echo("bounds", bounds)
        .echo("bounds_policy", config.bounds_policy)
        .echo("bounds_source", config.bounds_source)
        .echo("offset_s", config.offset_s)
        .echo("shape", shape)
        .echo("epochs_run", outcome.epochs())
        .echo("final_mse", outcome.final_mse());

    Ok(RunOutcome {
        model,
        history: outcome.history,
        split,
        report,
    })
}

/// A recording with its power log.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub signal: AudioSignal,
    pub trace: PowerTrace,
}

/// One cell of the approach x noise-condition grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub approach: Approach,
    pub condition: String,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMatrix {
    pub cells: Vec<MatrixCell>,
}

impl ExperimentMatrix {
    pub fn accuracy(&self, approach: Approach, condition: &str) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.approach == approach && c.condition == condition)
            .map(|c| c.report.accuracy)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("approach  condition   accuracy\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{:<9} {:<11} {:>7.2}%\n",
                c.approach.to_string(),
                c.condition,
                100.0 * c.report.accuracy
            ));
        }
        out
    }
}

pub const CLEAN: &str = "clean";
pub const NOISY: &str = "noisy";

/// Runs both feature approaches on both recordings, in the order
/// (full, clean), (full, noisy), (reduced, clean), (reduced, noisy).
pub fn run_experiment_matrix(
    clean: &Recording,
    noisy: &Recording,
    config: &PipelineConfig,
) -> Result<ExperimentMatrix> {
    let mut cells = Vec::with_capacity(4);
    for approach in [Approach::Full, Approach::Reduced] {
        let mut cfg = *config;
        cfg.extraction.approach = approach;
        for (condition, rec) in [(CLEAN, clean), (NOISY, noisy)] {
            let data = extract_dataset(&rec.signal, &rec.trace, &cfg.extraction, cfg.offset_s)?;
            let outcome = run(&data, &cfg)?;
            cells.push(MatrixCell {
                approach,
                condition: condition.to_string(),
                report: outcome.report.echo("condition", condition),
            });
        }
    }
    Ok(ExperimentMatrix { cells })
}

/// Input width and hidden widths a run on `data` would use.
pub fn planned_shape(data: &FeatureSet) -> Option<mlp::NetworkShape> {
    data.features
        .first()
        .map(|f| mlp::NetworkShape::for_inputs(f.len(), OUTPUTS))
}
