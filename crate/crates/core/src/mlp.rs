//! Two-hidden-layer tansig network trained by full-batch gradient descent.
//!
//! Layer sizes follow `m -> k1 -> k2 -> p` with
//! `k1 = sqrt(m (p + 2)) + 2 sqrt(p / (p + 2))` and `k2 = p sqrt(m / (p + 2))`,
//! each rounded to the nearest integer. Every layer, including the output,
//! applies tansig; the sign threshold that turns outputs into a class code
//! lives outside the network.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioSegment;
use crate::error::{Error, Result};
use crate::eval::SplitSpec;
use crate::labeling::{BoundsPolicy, BoundsSource, ClassBounds, ClassLabel, TargetCode};
use crate::spectral::{ExtractionConfig, MinMaxScaler};

/// Number of output neurons: one per sign of the target code.
pub const OUTPUTS: usize = 2;

pub const MODEL_FORMAT: &str = "fanpower-mlp";
pub const MODEL_VERSION: u32 = 1;

/// Samples per gradient partial sum. Fixed so that the reduction order, and
/// therefore every bit of the result, does not depend on the thread count.
const GRADIENT_CHUNK: usize = 16;

/// `2 / (1 + e^(-2x)) - 1`.
pub fn tansig(x: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * x).exp()) - 1.0
}

/// First and second hidden-layer widths for `m` inputs and `p` outputs.
pub fn hidden_sizes(m: usize, p: usize) -> (usize, usize) {
    let (m, p) = (m as f64, p as f64);
    let k1 = (m * (p + 2.0)).sqrt() + 2.0 * (p / (p + 2.0)).sqrt();
    let k2 = p * (m / (p + 2.0)).sqrt();
    ((k1.round() as usize).max(1), (k2.round() as usize).max(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub inputs: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub outputs: usize,
}

impl NetworkShape {
    /// Shape with hidden widths from [`hidden_sizes`].
    pub fn for_inputs(inputs: usize, outputs: usize) -> Self {
        let (hidden1, hidden2) = hidden_sizes(inputs, outputs);
        Self {
            inputs,
            hidden1,
            hidden2,
            outputs,
        }
    }

    fn widths(&self) -> [usize; 4] {
        [self.inputs, self.hidden1, self.hidden2, self.outputs]
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }
}

/// Fully connected layer; `weights` is row-major `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LayerRepr", try_from = "LayerRepr")]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerRepr {
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl From<Layer> for LayerRepr {
    fn from(l: Layer) -> Self {
        LayerRepr {
            weights: l.weights.chunks(l.inputs).map(|r| r.to_vec()).collect(),
            biases: l.biases,
        }
    }
}

impl TryFrom<LayerRepr> for Layer {
    type Error = String;

    fn try_from(r: LayerRepr) -> std::result::Result<Self, String> {
        let outputs = r.weights.len();
        let inputs = r.weights.first().map_or(0, Vec::len);
        if outputs == 0 || inputs == 0 {
            return Err("layer has an empty weight matrix".into());
        }
        if r.weights.iter().any(|row| row.len() != inputs) {
            return Err("weight matrix rows differ in length".into());
        }
        if r.biases.len() != outputs {
            return Err(format!(
                "{} biases for {outputs} weight rows",
                r.biases.len()
            ));
        }
        Ok(Layer {
            inputs,
            outputs,
            weights: r.weights.concat(),
            biases: r.biases,
        })
    }
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn from_parts(inputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        let outputs = biases.len();
        if weights.len() != inputs * outputs {
            return Err(Error::Dimension {
                expected: inputs * outputs,
                actual: weights.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    fn activate(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.biases)
                .map(|(row, b)| tansig(dot(row, x) + b)),
        );
    }

    fn add_scaled(&mut self, other: &Layer, scale: f64) {
        for (w, g) in self.weights.iter_mut().zip(&other.weights) {
            *w += scale * g;
        }
        for (b, g) in self.biases.iter_mut().zip(&other.biases) {
            *b += scale * g;
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The three weight layers `m -> k1 -> k2 -> p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    shape: NetworkShape,
    layers: Vec<Layer>,
}

impl Network {
    pub fn zeros(shape: NetworkShape) -> Self {
        let w = shape.widths();
        Self {
            shape,
            layers: w.windows(2).map(|p| Layer::zeros(p[0], p[1])).collect(),
        }
    }

    /// Weights and biases drawn uniformly from `[-range, range]`.
    pub fn random<R: Rng>(shape: NetworkShape, range: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(shape);
        for layer in &mut net.layers {
            for w in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                *w = rng.random_range(-range..=range);
            }
        }
        net
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() != 3 {
            return Err(Error::InvalidInput(format!(
                "expected 3 weight layers, got {}",
                layers.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Dimension {
                    expected: pair[0].outputs,
                    actual: pair[1].inputs,
                });
            }
        }
        let shape = NetworkShape {
            inputs: layers[0].inputs,
            hidden1: layers[0].outputs,
            hidden2: layers[1].outputs,
            outputs: layers[2].outputs,
        };
        Ok(Self { shape, layers })
    }

    pub fn shape(&self) -> NetworkShape {
        self.shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_consistent(&self) -> Result<()> {
        let rebuilt = Network::from_layers(self.layers.clone())?;
        if rebuilt.shape != self.shape {
            return Err(Error::Parse(
                "recorded shape disagrees with weight matrices".into(),
            ));
        }
        if self.parameters().iter().any(|p| !p.is_finite()) {
            return Err(Error::Parse("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.shape.inputs {
            return Err(Error::Dimension {
                expected: self.shape.inputs,
                actual: input.len(),
            });
        }
        Ok(self.activations(input).pop().unwrap_or_default())
    }

    /// Outputs of every layer for one input, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.activate(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        acts
    }

    /// All parameters flattened: per layer, weights (row-major) then biases.
    pub fn parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        let expected = self.shape.parameter_count();
        if params.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: params.len(),
            });
        }
        let mut rest = params;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            layer.weights.copy_from_slice(w);
            let (b, tail) = tail.split_at(layer.biases.len());
            layer.biases.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    fn check_batch(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<()> {
        if inputs.is_empty() {
            return Err(Error::EmptyInput("empty training batch".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Dimension {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        for x in inputs {
            if x.len() != self.shape.inputs {
                return Err(Error::Dimension {
                    expected: self.shape.inputs,
                    actual: x.len(),
                });
            }
        }
        for t in targets {
            if t.len() != self.shape.outputs {
                return Err(Error::Dimension {
                    expected: self.shape.outputs,
                    actual: t.len(),
                });
            }
        }
        Ok(())
    }

    /// Mean squared error over all samples and outputs.
    pub fn mse(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
        self.check_batch(inputs, targets)?;
        let sum: f64 = inputs
            .iter()
            .zip(targets)
            .map(|(x, t)| {
                let y = self.activations(x).pop().unwrap();
                y.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum();
        Ok(sum / (inputs.len() * self.shape.outputs) as f64)
    }

    /// Adds the squared-error gradient of one sample into `grad` and returns
    /// its squared error.
    fn accumulate_sample(&self, x: &[f64], t: &[f64], grad: &mut [Layer]) -> f64 {
        let acts = self.activations(x);
        let out = acts.last().unwrap();
        let mut sq = 0.0;
        // delta = dE/d(pre-activation), with tansig' = 1 - y^2
        let mut delta: Vec<f64> = out
            .iter()
            .zip(t)
            .map(|(y, t)| {
                sq += (y - t) * (y - t);
                2.0 * (y - t) * (1.0 - y * y)
            })
            .collect();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &acts[l];
            let g = &mut grad[l];
            for (j, &d) in delta.iter().enumerate() {
                g.biases[j] += d;
                let row = &mut g.weights[j * layer.inputs..(j + 1) * layer.inputs];
                for (gw, &xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for (j, &d) in delta.iter().enumerate() {
                let row = &layer.weights[j * layer.inputs..(j + 1) * layer.inputs];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, &a) in prev.iter_mut().zip(input) {
                *p *= 1.0 - a * a;
            }
            delta = prev;
        }
        sq
    }

    fn zero_grad(&self) -> Vec<Layer> {
        self.layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect()
    }

    /// MSE and its gradient with respect to every parameter, laid out like
    /// [`Network::parameters`].
    pub fn loss_and_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>)> {
        let (loss, grad) = self.batch_gradient(inputs, targets)?;
        let flat = grad
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect();
        Ok((loss, flat))
    }

    fn batch_gradient(
        &self,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
    ) -> Result<(f64, Vec<Layer>)> {
        self.check_batch(inputs, targets)?;
        let partials: Vec<(f64, Vec<Layer>)> = inputs
            .par_chunks(GRADIENT_CHUNK)
            .zip(targets.par_chunks(GRADIENT_CHUNK))
            .map(|(xs, ts)| {
                let mut grad = self.zero_grad();
                let mut sq = 0.0;
                for (x, t) in xs.iter().zip(ts) {
                    sq += self.accumulate_sample(x, t, &mut grad);
                }
                (sq, grad)
            })
            .collect();
        let mut total = self.zero_grad();
        let mut sq = 0.0;
        for (s, g) in &partials {
            sq += s;
            for (acc, part) in total.iter_mut().zip(g) {
                acc.add_scaled(part, 1.0);
            }
        }
        let scale = 1.0 / (inputs.len() * self.shape.outputs) as f64;
        for layer in &mut total {
            layer.weights.iter_mut().for_each(|w| *w *= scale);
            layer.biases.iter_mut().for_each(|b| *b *= scale);
        }
        Ok((sq * scale, total))
    }
}

/// Sign threshold: negative -> -1, otherwise +1.
pub fn threshold(output: &[f64]) -> Result<TargetCode> {
    if output.len() != OUTPUTS {
        return Err(Error::Dimension {
            expected: OUTPUTS,
            actual: output.len(),
        });
    }
    if output.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("network output is not finite".into()));
    }
    let sign = |x: f64| if x < 0.0 { -1 } else { 1 };
    TargetCode::new(sign(output[0]), sign(output[1]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub goal_error: f64,
    pub learning_rate: f64,
    pub seed: u64,
    pub init_range: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1000,
            goal_error: 1e-4,
            learning_rate: 0.01,
            seed: 0,
            init_range: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 {
            return Err(Error::InvalidInput("max_epochs must be positive".into()));
        }
        for (name, v) in [
            ("goal_error", self.goal_error),
            ("init_range", self.init_range),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    GoalReached,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub network: Network,
    /// `history[e]` is the training MSE after `e` updates.
    pub history: Vec<f64>,
    pub stop: StopReason,
}

impl TrainOutcome {
    pub fn epochs(&self) -> usize {
        self.history.len() - 1
    }

    pub fn final_mse(&self) -> f64 {
        *self.history.last().unwrap()
    }
}

/// Trains a fresh network on scaled features and their target codes.
pub fn train(
    inputs: &[Vec<f64>],
    targets: &[TargetCode],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let m = inputs
        .first()
        .ok_or_else(|| Error::EmptyInput("empty training set".into()))?
        .len();
    let shape = NetworkShape::for_inputs(m, OUTPUTS);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network = Network::random(shape, config.init_range, &mut rng);
    let targets: Vec<Vec<f64>> = targets.iter().map(|t| t.as_f64().to_vec()).collect();
    train_network(network, inputs, &targets, config)
}

/// Runs gradient descent from the given starting weights.
pub fn train_network(
    mut network: Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut history = Vec::with_capacity(config.max_epochs + 1);
    let mut epoch = 0;
    loop {
        let (loss, grad) = network.batch_gradient(inputs, targets)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
        if loss <= config.goal_error {
            return Ok(TrainOutcome {
                network,
                history,
                stop: StopReason::GoalReached,
            });
        }
        if epoch == config.max_epochs {
            return Ok(TrainOutcome {
                network,
                history,
                stop: StopReason::MaxEpochs,
            });
        }
        for (layer, g) in network.layers.iter_mut().zip(&grad) {
            layer.add_scaled(g, -config.learning_rate);
        }
        epoch += 1;
        log::debug!("epoch {epoch} mse {loss}");
    }
}

/// Summary of the training run stored alongside the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub config: TrainConfig,
    pub epochs: usize,
    pub final_mse: f64,
    pub stop: StopReason,
    pub train_samples: usize,
    pub split: SplitSpec,
    pub bounds_policy: BoundsPolicy,
    pub bounds_source: BoundsSource,
    pub offset_s: f64,
}

/// A trained classifier with everything needed to go from raw audio to a
/// class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub format: String,
    pub version: u32,
    pub sample_rate_hz: u32,
    /// Samples per segment (`N`).
    pub segment_len: usize,
    pub extraction: ExtractionConfig,
    pub scaler: MinMaxScaler,
    pub bounds: ClassBounds,
    pub shape: NetworkShape,
    pub network: Network,
    pub training: Option<TrainingSummary>,
}

impl MlpModel {
    pub fn new(
        sample_rate_hz: u32,
        segment_len: usize,
        extraction: ExtractionConfig,
        scaler: MinMaxScaler,
        bounds: ClassBounds,
        network: Network,
    ) -> Result<Self> {
        if scaler.dim() != network.shape().inputs {
            return Err(Error::Dimension {
                expected: network.shape().inputs,
                actual: scaler.dim(),
            });
        }
        Ok(Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            sample_rate_hz,
            segment_len,
            extraction,
            scaler,
            bounds,
            shape: network.shape(),
            network,
            training: None,
        })
    }

    /// Raw (unscaled) features to class label.
    pub fn predict(&self, raw_features: &[f64]) -> Result<ClassLabel> {
        Ok(threshold(&self.output(raw_features)?)?.decode())
    }

    /// Network output pair for raw features.
    pub fn output(&self, raw_features: &[f64]) -> Result<Vec<f64>> {
        let scaled = self.scaler.apply(raw_features)?;
        self.network.forward(&scaled)
    }

    pub fn predict_segment(&self, segment: &AudioSegment) -> Result<ClassLabel> {
        if segment.sample_rate_hz != self.sample_rate_hz {
            return Err(Error::InvalidInput(format!(
                "segment sampled at {} Hz, model expects {} Hz",
                segment.sample_rate_hz, self.sample_rate_hz
            )));
        }
        if segment.len() != self.segment_len {
            return Err(Error::Dimension {
                expected: self.segment_len,
                actual: segment.len(),
            });
        }
        let features = self.extraction.extract(segment)?;
        self.predict(&features.values)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        let header: Header =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        if header.format != MODEL_FORMAT {
            return Err(Error::IncompatibleModel(format!(
                "format '{}' is not '{MODEL_FORMAT}'",
                header.format
            )));
        }
        if header.version != MODEL_VERSION {
            return Err(Error::IncompatibleModel(format!(
                "version {} (this build reads version {MODEL_VERSION})",
                header.version
            )));
        }
        let model: MlpModel =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model file: {e}")))?;
        model.network.check_consistent()?;
        if model.shape != model.network.shape() {
            return Err(Error::Parse(
                "shape field disagrees with the weights".into(),
            ));
        }
        if model.scaler.dim() != model.shape.inputs || model.scaler.max.len() != model.scaler.dim()
        {
            return Err(Error::Parse(
                "scaler width disagrees with the input layer".into(),
            ));
        }
        Ok(model)
    }
}

pub fn save_model(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MlpModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    MlpModel::from_json(&text)
}
