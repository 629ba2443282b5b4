//! Model weights, deterministic SGD training, evaluation, weighted
//! aggregation, and Frobenius-norm distance.

mod gradient_check;
mod layers;
mod weights;

pub use gradient_check::{gradient_check, gradient_check_at, layer_gradient_check};
pub use weights::{ModelWeights, Tensor};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use layers::Layer;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("aggregation needs at least one candidate")]
    NoCandidates,
    #[error("evaluation weights must be finite and non-negative, got {0}")]
    NegativeEvaluation(f64),
    #[error("all candidate evaluations are zero")]
    ZeroEvaluations,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: u32, batch: usize },
    #[error("tensor {0} holds non-finite values")]
    NonFiniteWeights(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("invalid training settings: {0}")]
    InvalidSettings(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("malformed weight blob: {0}")]
    MalformedBlob(String),
}

/// Local training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub epochs: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
    pub optimizer: String,
    /// Caps the number of gradient steps; `Some(0)` runs none at all.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_limit: Option<u64>,
}

impl TrainingSettings {
    pub fn sgd(epochs: u32, learning_rate: f64, batch_size: u32, seed: u64) -> Self {
        Self {
            epochs,
            learning_rate,
            batch_size,
            seed,
            optimizer: "sgd".into(),
            step_limit: None,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs < 1 {
            return Err(ModelError::InvalidSettings("epochs must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ModelError::InvalidSettings("learning rate must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(ModelError::InvalidSettings("batch size must be >= 1".into()));
        }
        if self.optimizer != "sgd" {
            return Err(ModelError::InvalidSettings(format!("unknown optimizer {:?}", self.optimizer)));
        }
        Ok(())
    }

    /// Length-prefixed canonical bytes, used inside node encodings.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64);
        out.extend_from_slice(&self.epochs.to_le_bytes());
        out.extend_from_slice(&self.learning_rate.to_le_bytes());
        out.extend_from_slice(&self.batch_size.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.optimizer.len() as u32).to_le_bytes());
        out.extend_from_slice(self.optimizer.as_bytes());
        match self.step_limit {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                out.extend_from_slice(&s.to_le_bytes());
            }
        }
        out
    }
}

impl Default for TrainingSettings {
    fn default() -> Self {
        Self::sgd(5, 0.002, 100, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputShape {
    pub fn flat(dim: usize) -> Self {
        Self {
            channels: 1,
            height: 1,
            width: dim,
        }
    }

    pub fn image(height: usize, width: usize) -> Self {
        Self {
            channels: 1,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense { units: usize },
    Relu,
    Tanh,
    Conv { filters: usize, kernel: usize },
    MaxPool { size: usize },
}

/// Hidden layers followed by an implicit dense output layer of width
/// `classes` and a softmax cross-entropy loss.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: InputShape,
    pub hidden: Vec<LayerSpec>,
    pub classes: usize,
}

impl Architecture {
    pub fn mlp(input_dim: usize, hidden_units: &[usize], classes: usize) -> Self {
        let mut hidden = Vec::new();
        for &u in hidden_units {
            hidden.push(LayerSpec::Dense { units: u });
            hidden.push(LayerSpec::Relu);
        }
        Self {
            input: InputShape::flat(input_dim),
            hidden,
            classes,
        }
    }

    /// Dense layers with tanh activations. Replay of a smooth network moves
    /// continuously with input noise, unlike ReLU, whose kinks flip.
    pub fn tanh_mlp(input_dim: usize, hidden_units: &[usize], classes: usize) -> Self {
        let mut a = Self::mlp(input_dim, hidden_units, classes);
        for l in a.hidden.iter_mut() {
            if *l == LayerSpec::Relu {
                *l = LayerSpec::Tanh;
            }
        }
        a
    }

    /// One hidden layer of 64 ReLU units.
    pub fn default_for(input_dim: usize, classes: usize) -> Self {
        Self::mlp(input_dim, &[64], classes)
    }

    /// Small convolutional net for 8x8 inputs.
    pub fn small_cnn(side: usize, classes: usize) -> Self {
        Self {
            input: InputShape::image(side, side),
            hidden: vec![
                LayerSpec::Conv { filters: 8, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { units: 32 },
                LayerSpec::Relu,
            ],
            classes,
        }
    }

    /// The 28x28 MNIST-style CNN: 32 filters of 5x5, 2x2 pooling, a dense
    /// hidden layer. Too slow for the default experiments.
    pub fn mnist_cnn(classes: usize) -> Self {
        Self {
            input: InputShape::image(28, 28),
            hidden: vec![
                LayerSpec::Conv { filters: 32, kernel: 5 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { units: 256 },
                LayerSpec::Relu,
            ],
            classes,
        }
    }

    /// Resolves a config tag (`mlp`, `tanh-mlp`, `cnn`) against a dataset.
    pub fn for_dataset(tag: &str, data: &Dataset) -> Result<Self, ModelError> {
        let classes = data.classes() as usize;
        match tag {
            "mlp" => Ok(Self::default_for(data.dim(), classes)),
            "tanh-mlp" => Ok(Self::tanh_mlp(data.dim(), &[64], classes)),
            "cnn" => match data.image_shape() {
                Some(s) if s.height == s.width => Ok(Self::small_cnn(s.height, classes)),
                _ => Err(ModelError::InvalidArchitecture("cnn needs square image-shaped features".into())),
            },
            other => Err(ModelError::InvalidArchitecture(format!("unknown architecture {other:?}"))),
        }
    }
}

/// A compiled architecture: resolved layer shapes and parameter layout.
#[derive(Debug, Clone)]
pub struct Network {
    architecture: Architecture,
    layers: Vec<Layer>,
    params: Vec<(String, Vec<usize>, usize)>,
}

impl Network {
    pub fn new(architecture: &Architecture) -> Result<Self, ModelError> {
        let arch = architecture.clone();
        if arch.input.is_empty() || arch.classes == 0 {
            return Err(ModelError::InvalidArchitecture("empty input or output".into()));
        }
        let mut layers = Vec::new();
        let mut params = Vec::new();
        // (channels, height, width); dense layers collapse to (1, 1, n).
        let (mut c, mut h, mut w) = (arch.input.channels, arch.input.height, arch.input.width);
        let specs = arch
            .hidden
            .iter()
            .copied()
            .chain(std::iter::once(LayerSpec::Dense { units: arch.classes }));
        for (i, spec) in specs.enumerate() {
            match spec {
                LayerSpec::Dense { units } => {
                    if units == 0 {
                        return Err(ModelError::InvalidArchitecture("zero-width dense layer".into()));
                    }
                    let input = c * h * w;
                    params.push((format!("l{i}.dense.weight"), vec![units, input], input));
                    params.push((format!("l{i}.dense.bias"), vec![units], input));
                    layers.push(Layer::Dense {
                        input,
                        output: units,
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    });
                    (c, h, w) = (1, 1, units);
                }
                LayerSpec::Relu => layers.push(Layer::Relu { size: c * h * w }),
                LayerSpec::Tanh => layers.push(Layer::Tanh { size: c * h * w }),
                LayerSpec::Conv { filters, kernel } => {
                    if kernel == 0 || kernel > h || kernel > w || filters == 0 {
                        return Err(ModelError::InvalidArchitecture(format!(
                            "conv kernel {kernel} does not fit {h}x{w}"
                        )));
                    }
                    let fan_in = c * kernel * kernel;
                    params.push((format!("l{i}.conv.weight"), vec![filters, c, kernel, kernel], fan_in));
                    params.push((format!("l{i}.conv.bias"), vec![filters], fan_in));
                    layers.push(Layer::Conv {
                        channels: c,
                        height: h,
                        width: w,
                        filters,
                        kernel,
                        weight: params.len() - 2,
                        bias: params.len() - 1,
                    });
                    (c, h, w) = (filters, h - kernel + 1, w - kernel + 1);
                }
                LayerSpec::MaxPool { size } => {
                    if size == 0 || size > h || size > w {
                        return Err(ModelError::InvalidArchitecture(format!("pool size {size} does not fit {h}x{w}")));
                    }
                    layers.push(Layer::MaxPool {
                        channels: c,
                        height: h,
                        width: w,
                        size,
                    });
                    (h, w) = (h / size, w / size);
                }
            }
        }
        Ok(Self {
            architecture: arch,
            layers,
            params,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.architecture
    }

    pub fn input_len(&self) -> usize {
        self.architecture.input.len()
    }

    pub fn classes(&self) -> usize {
        self.architecture.classes
    }

    pub fn zero_weights(&self) -> ModelWeights {
        let tensors = self
            .params
            .iter()
            .map(|(name, shape, _)| Tensor::zeros(name.clone(), shape.clone()))
            .collect();
        ModelWeights::new(tensors).expect("zero tensors are valid")
    }

    /// He-uniform weights, zero biases.
    pub fn init_weights(&self, seed: u64) -> ModelWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = self.zero_weights();
        for (t, (name, _, fan_in)) in w.tensors_mut().iter_mut().zip(&self.params) {
            if name.ends_with(".weight") {
                let limit = (6.0 / *fan_in as f64).sqrt();
                for v in t.values.iter_mut() {
                    *v = rng.gen_range(-limit..limit);
                }
            }
        }
        w
    }

    pub fn check_weights(&self, w: &ModelWeights) -> Result<(), ModelError> {
        let ok = w.tensors().len() == self.params.len() && w.tensors().iter().zip(&self.params).all(|(t, (_, shape, _))| &t.shape == shape);
        if ok {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch("weights do not match the architecture".into()))
        }
    }

    fn workspace(&self) -> Workspace {
        let mut acts = vec![vec![0.0; self.input_len()]];
        let mut argmax = Vec::new();
        for l in &self.layers {
            acts.push(vec![0.0; l.output_len()]);
            argmax.push(match l {
                Layer::MaxPool { .. } => vec![0; l.output_len()],
                _ => Vec::new(),
            });
        }
        let deltas = acts.clone();
        Workspace { acts, deltas, argmax }
    }

    fn forward(&self, w: &ModelWeights, x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        for (i, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(i + 1);
            layer.forward(w, &head[i], &mut tail[0], &mut ws.argmax[i]);
        }
    }

    pub fn logits(&self, w: &ModelWeights, x: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.forward(w, x, &mut ws);
        ws.acts.pop().expect("at least one layer")
    }

    /// Predicted class; ties resolve to the lowest class index.
    pub fn predict(&self, w: &ModelWeights, x: &[f64]) -> u32 {
        argmax(&self.logits(w, x))
    }

    /// Forward + backward for one sample. Adds the loss gradient into
    /// `grads` and returns the loss.
    fn accumulate(&self, w: &ModelWeights, x: &[f64], label: u32, ws: &mut Workspace, grads: &mut ModelWeights) -> f64 {
        self.forward(w, x, ws);
        let n = self.layers.len();
        let loss = softmax_xent(&ws.acts[n], label as usize, &mut ws.deltas[n]);
        for i in (0..n).rev() {
            let (dlo, dhi) = ws.deltas.split_at_mut(i + 1);
            let dx = if i > 0 { Some(&mut dlo[i][..]) } else { None };
            self.layers[i].backward(w, &ws.acts[i], &dhi[0], &ws.argmax[i], grads, dx);
        }
        loss
    }

    /// Mean loss over `batch` and its gradient.
    pub fn loss_and_gradient(&self, w: &ModelWeights, batch: &Dataset) -> (f64, ModelWeights) {
        let mut ws = self.workspace();
        let mut grads = w.zeros_like();
        let mut loss = 0.0;
        for i in 0..batch.len() {
            loss += self.accumulate(w, batch.features(i), batch.label(i), &mut ws, &mut grads);
        }
        let n = batch.len().max(1) as f64;
        for t in grads.tensors_mut() {
            for v in t.values.iter_mut() {
                *v /= n;
            }
        }
        (loss / n, grads)
    }

    pub fn loss(&self, w: &ModelWeights, batch: &Dataset) -> f64 {
        let mut ws = self.workspace();
        let n = self.layers.len();
        let mut total = 0.0;
        for i in 0..batch.len() {
            self.forward(w, batch.features(i), &mut ws);
            total += softmax_xent(&ws.acts[n], batch.label(i) as usize, &mut ws.deltas[n]);
        }
        total / batch.len().max(1) as f64
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    argmax: Vec<Vec<usize>>,
}

fn argmax(v: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best as u32
}

/// Writes `softmax(z) - onehot(label)` into `dz` and returns the loss.
fn softmax_xent(z: &[f64], label: usize, dz: &mut [f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (d, &v) in dz.iter_mut().zip(z) {
        *d = (v - m).exp();
        s += *d;
    }
    for d in dz.iter_mut() {
        *d /= s;
    }
    dz[label] -= 1.0;
    -(z[label] - m - s.ln())
}

/// Plain minibatch SGD. Batch order comes from a per-epoch shuffle seeded
/// by `settings.seed`, so equal inputs give bit-identical outputs.
pub fn train(net: &Network, start: &ModelWeights, settings: &TrainingSettings, data: &Dataset) -> Result<ModelWeights, ModelError> {
    settings.validate()?;
    net.check_weights(start)?;
    if data.is_empty() {
        return Err(ModelError::EmptyData);
    }
    if data.dim() != net.input_len() {
        return Err(ModelError::ShapeMismatch(format!(
            "data has {} features, network expects {}",
            data.dim(),
            net.input_len()
        )));
    }
    let mut w = start.clone();
    let mut grads = w.zeros_like();
    let mut ws = net.workspace();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let limit = settings.step_limit.unwrap_or(u64::MAX);
    let mut steps = 0u64;
    for epoch in 0..settings.epochs {
        order.shuffle(&mut rng);
        for (batch, chunk) in order.chunks(settings.batch_size as usize).enumerate() {
            if steps >= limit {
                return Ok(w);
            }
            for t in grads.tensors_mut() {
                t.values.fill(0.0);
            }
            let mut loss = 0.0;
            for &i in chunk {
                loss += net.accumulate(&w, data.features(i), data.label(i), &mut ws, &mut grads);
            }
            if !loss.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch, batch });
            }
            let scale = settings.learning_rate / chunk.len() as f64;
            for (t, g) in w.tensors_mut().iter_mut().zip(grads.tensors()) {
                for (v, &d) in t.values.iter_mut().zip(&g.values) {
                    *v -= scale * d;
                }
            }
            steps += 1;
        }
    }
    if !w.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: settings.epochs.saturating_sub(1),
            batch: 0,
        });
    }
    Ok(w)
}

/// Fraction of correctly classified samples. Empty data scores 0.
pub fn evaluate(net: &Network, w: &ModelWeights, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let mut ws = net.workspace();
    let last = net.layers.len();
    let mut correct = 0usize;
    for i in 0..data.len() {
        net.forward(w, data.features(i), &mut ws);
        if argmax(&ws.acts[last]) == data.label(i) {
            correct += 1;
        }
    }
    correct as f64 / data.len() as f64
}

/// Evaluation-weighted average: each candidate contributes `E_p / sum(E)`.
pub fn aggregate(candidates: &[(&ModelWeights, f64)]) -> Result<ModelWeights, ModelError> {
    let (first, _) = candidates.first().ok_or(ModelError::NoCandidates)?;
    let mut total = 0.0;
    for &(w, e) in candidates {
        if !(e.is_finite() && e >= 0.0) {
            return Err(ModelError::NegativeEvaluation(e));
        }
        if !w.same_shape(first) {
            return Err(ModelError::ShapeMismatch("aggregation candidates differ in shape".into()));
        }
        total += e;
    }
    if total <= 0.0 {
        return Err(ModelError::ZeroEvaluations);
    }
    let mut out = first.zeros_like();
    for &(w, e) in candidates {
        let coef = e / total;
        for (o, t) in out.tensors_mut().iter_mut().zip(w.tensors()) {
            for (a, &v) in o.values.iter_mut().zip(&t.values) {
                *a += coef * v;
            }
        }
    }
    Ok(out)
}

/// Square root of the summed squared elementwise difference.
pub fn fnorm_distance(a: &ModelWeights, b: &ModelWeights) -> Result<f64, ModelError> {
    if !a.same_shape(b) {
        return Err(ModelError::ShapeMismatch("distance between differently shaped models".into()));
    }
    let mut s = 0.0;
    for (x, y) in a.values().zip(b.values()) {
        let d = x - y;
        s += d * d;
    }
    Ok(s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::digits;

    fn tiny_data() -> Dataset {
        digits().subset(&(0..60).collect::<Vec<_>>())
    }

    #[test]
    fn test_aggregate_two_point() {
        let a = ModelWeights::from_flat(vec![1.0, 0.0]);
        let b = ModelWeights::from_flat(vec![0.0, 1.0]);
        let out = aggregate(&[(&a, 0.6), (&b, 0.2)]).unwrap();
        let v: Vec<f64> = out.values().collect();
        assert!((v[0] - 0.75).abs() < 1e-15 && (v[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn test_aggregate_single_identity() {
        let a = ModelWeights::from_flat(vec![0.3, -7.25, 1e-3]);
        assert_eq!(aggregate(&[(&a, 0.42)]).unwrap(), a);
    }

    #[test]
    fn test_aggregate_errors() {
        let a = ModelWeights::from_flat(vec![1.0]);
        let b = ModelWeights::from_flat(vec![1.0, 2.0]);
        assert_eq!(aggregate(&[]), Err(ModelError::NoCandidates));
        assert_eq!(aggregate(&[(&a, 0.0)]), Err(ModelError::ZeroEvaluations));
        assert!(matches!(aggregate(&[(&a, 1.0), (&b, 1.0)]), Err(ModelError::ShapeMismatch(_))));
        assert!(matches!(aggregate(&[(&a, -1.0)]), Err(ModelError::NegativeEvaluation(_))));
    }

    #[test]
    fn test_fnorm_345() {
        let a = ModelWeights::from_flat(vec![3.0, 0.0]);
        let b = ModelWeights::from_flat(vec![0.0, 4.0]);
        assert_eq!(fnorm_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(fnorm_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn test_train_zero_steps_identity() {
        let data = tiny_data();
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let start = net.init_weights(1);
        let mut s = TrainingSettings::sgd(5, 0.1, 10, 3);
        s.step_limit = Some(0);
        assert_eq!(train(&net, &start, &s, &data).unwrap(), start);
    }

    #[test]
    fn test_train_deterministic_and_learns() {
        let data = tiny_data();
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let start = net.init_weights(1);
        let s = TrainingSettings::sgd(20, 0.1, 10, 3);
        let a = train(&net, &start, &s, &data).unwrap();
        let b = train(&net, &start, &s, &data).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(evaluate(&net, &a, &data) > 0.9);
        let c = train(&net, &start, &s.with_seed(4), &data).unwrap();
        assert_ne!(a.to_bytes(), c.to_bytes());
    }

    #[test]
    fn test_one_step_matches_hand_gradient() {
        // 1 input, 2 classes: logits z = W x + b.
        let net = Network::new(&Architecture::mlp(1, &[], 2)).unwrap();
        let start = ModelWeights::new(vec![
            Tensor {
                name: "w".into(),
                shape: vec![2, 1],
                values: vec![0.5, -0.25],
            },
            Tensor {
                name: "b".into(),
                shape: vec![2],
                values: vec![0.1, 0.0],
            },
        ])
        .unwrap();
        let data = Dataset::new(1, 2, vec![2.0], vec![1]).unwrap();
        let s = TrainingSettings::sgd(1, 0.3, 1, 0);
        let out = train(&net, &start, &s, &data).unwrap();

        let (z0, z1) = (0.5 * 2.0 + 0.1, -0.25 * 2.0);
        let p0 = f64::exp(z0) / (f64::exp(z0) + f64::exp(z1));
        let p1 = 1.0 - p0;
        let expect = [
            0.5 - 0.3 * p0 * 2.0,
            -0.25 - 0.3 * (p1 - 1.0) * 2.0,
            0.1 - 0.3 * p0,
            0.0 - 0.3 * (p1 - 1.0),
        ];
        for (got, want) in out.values().zip(expect) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn test_train_rejects_bad_input() {
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let w = net.init_weights(0);
        let empty = tiny_data().subset(&[]);
        assert_eq!(train(&net, &w, &TrainingSettings::default(), &empty), Err(ModelError::EmptyData));
        let s = TrainingSettings {
            epochs: 0,
            ..TrainingSettings::default()
        };
        assert!(matches!(train(&net, &w, &s, &tiny_data()), Err(ModelError::InvalidSettings(_))));
    }

    #[test]
    fn test_train_reports_non_finite_loss() {
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let w = net.init_weights(0);
        let s = TrainingSettings::sgd(3, 1e300, 5, 0);
        match train(&net, &w, &s, &tiny_data()) {
            Err(ModelError::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite loss, got {other:?}"),
        }
    }

    #[test]
    fn test_constant_logits_accuracy() {
        let net = Network::new(&Architecture::default_for(64, 10)).unwrap();
        let w = net.zero_weights();
        let labels: Vec<u32> = (0..100).map(|i| i % 10).collect();
        let data = Dataset::new(64, 10, vec![0.5; 6400], labels).unwrap();
        assert_eq!(evaluate(&net, &w, &data), 0.1);
    }

    #[test]
    fn test_cnn_trains() {
        let data = tiny_data();
        let net = Network::new(&Architecture::small_cnn(8, 10)).unwrap();
        let start = net.init_weights(2);
        let out = train(&net, &start, &TrainingSettings::sgd(15, 0.1, 10, 1), &data).unwrap();
        assert!(evaluate(&net, &out, &data) > 0.8);
    }

    #[test]
    fn test_architecture_validation() {
        let bad = Architecture {
            input: InputShape::image(4, 4),
            hidden: vec![LayerSpec::Conv { filters: 2, kernel: 5 }],
            classes: 2,
        };
        assert!(Network::new(&bad).is_err());
        assert!(Network::new(&Architecture::mnist_cnn(10)).is_ok());
    }
}
