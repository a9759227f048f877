//! Baseline intention classifiers: feed-forward, stacked GRU and a
//! transformer encoder, all implemented directly over flat f64 parameter
//! arrays with hand-written backpropagation.
//!
//! Every architecture maps a feature window (slots x input_dim) to two
//! logits (crossing, not-crossing) per prediction head; multi-task
//! configurations carry one head per future horizon.

mod ffnn;
mod gru;
mod linalg;
mod train;
mod transformer;

pub use train::{
    evaluate, train, Optimizer, TrainConfig, TrainDataset, TrainError, TrainExample,
};

use crate::features::FeatureWindow;
use crate::scene_model::CrossingState;
use linalg::softmax2;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite activation")]
    NonFinite,
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
}

/// Network architecture of a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Ffnn,
    Gru,
    TransformerEncoder,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::Ffnn,
        Architecture::Gru,
        Architecture::TransformerEncoder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Architecture::Ffnn => "ffnn",
            Architecture::Gru => "gru",
            Architecture::TransformerEncoder => "transformer",
        }
    }

    pub fn parse(s: &str) -> Option<Architecture> {
        match s {
            "ffnn" => Some(Architecture::Ffnn),
            "gru" => Some(Architecture::Gru),
            "transformer" | "transformer_encoder" => Some(Architecture::TransformerEncoder),
            _ => None,
        }
    }
}

/// Classifier architecture and shape configuration.
///
/// Layer-count conventions: for the FFNN `n_layers` counts all affine
/// layers including the output head (so 2 layers = one hidden layer); for
/// the GRU it counts stacked recurrent layers; for the transformer it counts
/// encoder blocks. Prediction heads are extra in the recurrent and
/// transformer cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub architecture: Architecture,
    pub n_layers: usize,
    pub n_hidden: usize,
    /// Attention heads (transformer only).
    pub n_heads: usize,
    pub input_dim: usize,
    pub context_slots: usize,
    /// Future horizons predicted, one output head each.
    pub heads: Vec<f64>,
    pub seed: u64,
}

impl ClassifierConfig {
    pub fn new(architecture: Architecture, n_layers: usize, n_hidden: usize) -> Self {
        ClassifierConfig {
            architecture,
            n_layers,
            n_hidden,
            n_heads: 4,
            input_dim: 50,
            context_slots: 8,
            heads: vec![1.5],
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifierError> {
        if self.n_layers == 0 {
            return Err(ClassifierError::InvalidConfig("n_layers must be >= 1".into()));
        }
        if self.n_hidden == 0 || self.input_dim == 0 || self.context_slots == 0 {
            return Err(ClassifierError::InvalidConfig(
                "n_hidden, input_dim and context_slots must be positive".into(),
            ));
        }
        if self.heads.is_empty() {
            return Err(ClassifierError::InvalidConfig(
                "at least one prediction head required".into(),
            ));
        }
        if self.architecture == Architecture::TransformerEncoder {
            if self.n_heads == 0 || self.n_hidden % self.n_heads != 0 {
                return Err(ClassifierError::InvalidConfig(format!(
                    "n_hidden {} not divisible by n_heads {}",
                    self.n_hidden, self.n_heads
                )));
            }
        }
        Ok(())
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }
}

/// One named slice of the flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSegment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// How a segment is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum InitKind {
    /// Uniform in (-1/sqrt(fan_in), 1/sqrt(fan_in)).
    UniformFanIn(usize),
    Ones,
    Zeros,
}

/// Internal layout entry.
#[derive(Debug, Clone)]
pub(crate) struct LayoutSeg {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub init: InitKind,
}

pub(crate) struct LayoutBuilder {
    segs: Vec<LayoutSeg>,
    cursor: usize,
}

impl LayoutBuilder {
    pub fn new() -> Self {
        LayoutBuilder {
            segs: Vec::new(),
            cursor: 0,
        }
    }

    pub fn seg(&mut self, name: String, len: usize, fan_in: usize) -> usize {
        self.seg_init(name, len, InitKind::UniformFanIn(fan_in))
    }

    pub fn seg_init(&mut self, name: String, len: usize, init: InitKind) -> usize {
        let idx = self.segs.len();
        self.segs.push(LayoutSeg {
            name,
            offset: self.cursor,
            len,
            init,
        });
        self.cursor += len;
        idx
    }

    pub fn finish(self) -> Vec<LayoutSeg> {
        self.segs
    }
}

pub(crate) fn layout_of(cfg: &ClassifierConfig) -> Vec<LayoutSeg> {
    match cfg.architecture {
        Architecture::Ffnn => ffnn::layout(cfg),
        Architecture::Gru => gru::layout(cfg),
        Architecture::TransformerEncoder => transformer::layout(cfg),
    }
}

/// Analytic parameter count for a configuration.
pub fn count_parameters(cfg: &ClassifierConfig) -> usize {
    layout_of(cfg).iter().map(|s| s.len).sum()
}

/// Named views into a flat parameter or gradient array.
pub(crate) struct Segments<'a> {
    layout: &'a [LayoutSeg],
    data: &'a [f64],
}

impl<'a> Segments<'a> {
    pub fn new(layout: &'a [LayoutSeg], data: &'a [f64]) -> Self {
        Segments { layout, data }
    }

    pub fn get(&self, idx: usize) -> &'a [f64] {
        let s = &self.layout[idx];
        &self.data[s.offset..s.offset + s.len]
    }
}

pub(crate) fn grad_seg<'a>(layout: &[LayoutSeg], grad: &'a mut [f64], idx: usize) -> &'a mut [f64] {
    let s = &layout[idx];
    &mut grad[s.offset..s.offset + s.len]
}

pub(crate) enum Cache {
    Ffnn(ffnn::Cache),
    Gru(gru::Cache),
    Transformer(transformer::Cache),
}

/// Raw logits per head plus the cache needed for backprop.
pub(crate) fn forward_cached(
    cfg: &ClassifierConfig,
    params: &[f64],
    x: &[Vec<f64>],
    mask: &[bool],
) -> Result<(Vec<[f64; 2]>, Cache), ClassifierError> {
    let (logits, cache) = match cfg.architecture {
        Architecture::Ffnn => {
            let (l, c) = ffnn::forward(cfg, params, x, mask)?;
            (l, Cache::Ffnn(c))
        }
        Architecture::Gru => {
            let (l, c) = gru::forward(cfg, params, x, mask)?;
            (l, Cache::Gru(c))
        }
        Architecture::TransformerEncoder => {
            let (l, c) = transformer::forward(cfg, params, x, mask)?;
            (l, Cache::Transformer(c))
        }
    };
    for pair in &logits {
        if !pair[0].is_finite() || !pair[1].is_finite() {
            return Err(ClassifierError::NonFinite);
        }
    }
    Ok((logits, cache))
}

/// Accumulates parameter gradients given per-head logit gradients.
pub(crate) fn backward(
    cfg: &ClassifierConfig,
    params: &[f64],
    cache: &Cache,
    dlogits: &[[f64; 2]],
    grad: &mut [f64],
) {
    match (cfg.architecture, cache) {
        (Architecture::Ffnn, Cache::Ffnn(c)) => ffnn::backward(cfg, params, c, dlogits, grad),
        (Architecture::Gru, Cache::Gru(c)) => gru::backward(cfg, params, c, dlogits, grad),
        (Architecture::TransformerEncoder, Cache::Transformer(c)) => {
            transformer::backward(cfg, params, c, dlogits, grad)
        }
        _ => unreachable!("cache/architecture mismatch"),
    }
}

/// Deterministic uniform draw in [lo, hi) from the raw RNG stream.
pub(crate) fn uniform(rng: &mut ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    use rand::RngCore;
    let unit = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
    lo + (hi - lo) * unit
}

/// Fan-in-scaled uniform initialization of the full parameter array.
pub(crate) fn init_params(cfg: &ClassifierConfig, rng: &mut ChaCha12Rng) -> Vec<f64> {
    let layout = layout_of(cfg);
    let total: usize = layout.iter().map(|s| s.len).sum();
    let mut params = vec![0.0; total];
    for seg in &layout {
        let dst = &mut params[seg.offset..seg.offset + seg.len];
        match seg.init {
            InitKind::UniformFanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                for v in dst.iter_mut() {
                    *v = uniform(rng, -bound, bound);
                }
            }
            InitKind::Ones => dst.fill(1.0),
            InitKind::Zeros => dst.fill(0.0),
        }
    }
    params
}

/// Per-epoch training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLogEntry {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// A trained classifier: config, flat parameters and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub params: Vec<f64>,
    pub training_log: Vec<TrainingLogEntry>,
}

/// Decision of one prediction head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadPrediction {
    pub horizon: f64,
    pub decision: CrossingState,
    pub p_crossing: f64,
    pub p_not_crossing: f64,
}

impl TrainedClassifier {
    /// Randomly initialized, untrained classifier.
    pub fn init(cfg: ClassifierConfig) -> Result<Self, ClassifierError> {
        cfg.validate()?;
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let params = init_params(&cfg, &mut rng);
        Ok(TrainedClassifier {
            config: cfg,
            params,
            training_log: Vec::new(),
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn segments(&self) -> Vec<ParamSegment> {
        layout_of(&self.config)
            .into_iter()
            .map(|s| ParamSegment {
                name: s.name,
                offset: s.offset,
                len: s.len,
            })
            .collect()
    }

    fn check_window(&self, window: &FeatureWindow) -> Result<(), ClassifierError> {
        if window.slots() != self.config.context_slots {
            return Err(ClassifierError::DimensionMismatch(format!(
                "window has {} slots, model expects {}",
                window.slots(),
                self.config.context_slots
            )));
        }
        if window.presence_mask.len() != window.slots() {
            return Err(ClassifierError::DimensionMismatch(
                "presence mask length mismatch".into(),
            ));
        }
        for v in &window.vectors {
            if v.len() != self.config.input_dim {
                return Err(ClassifierError::DimensionMismatch(format!(
                    "feature dim {} != model input dim {}",
                    v.len(),
                    self.config.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Per-head (crossing, not-crossing) probabilities; each pair sums to 1.
    pub fn forward(&self, window: &FeatureWindow) -> Result<Vec<[f64; 2]>, ClassifierError> {
        self.check_window(window)?;
        let (logits, _) = forward_cached(
            &self.config,
            &self.params,
            &window.vectors,
            &window.presence_mask,
        )?;
        Ok(logits.into_iter().map(softmax2).collect())
    }

    /// Argmax decision per head; exact ties resolve to not-crossing.
    pub fn predict_intention(
        &self,
        window: &FeatureWindow,
    ) -> Result<Vec<HeadPrediction>, ClassifierError> {
        let probs = self.forward(window)?;
        Ok(probs
            .iter()
            .zip(&self.config.heads)
            .map(|(p, horizon)| HeadPrediction {
                horizon: *horizon,
                decision: if p[0] > p[1] {
                    CrossingState::Crossing
                } else {
                    CrossingState::NotCrossing
                },
                p_crossing: p[0],
                p_not_crossing: p[1],
            })
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClassifierError> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            segments: self.segments(),
            params: self.params.clone(),
            training_log: self.training_log.clone(),
        };
        let text = serde_json::to_string(&file)
            .map_err(|e| ClassifierError::MalformedCheckpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| ClassifierError::MalformedCheckpoint(e.to_string()))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(ClassifierError::MalformedCheckpoint(format!(
                "unknown format `{}`",
                file.format
            )));
        }
        file.config.validate()?;
        let expected = count_parameters(&file.config);
        if file.params.len() != expected {
            return Err(ClassifierError::MalformedCheckpoint(format!(
                "parameter array length {} does not match config ({expected})",
                file.params.len()
            )));
        }
        if !file.params.iter().all(|p| p.is_finite()) {
            return Err(ClassifierError::MalformedCheckpoint(
                "non-finite parameter".into(),
            ));
        }
        Ok(TrainedClassifier {
            config: file.config,
            params: file.params,
            training_log: file.training_log,
        })
    }
}

const CHECKPOINT_FORMAT: &str = "p2cws-classifier-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: ClassifierConfig,
    segments: Vec<ParamSegment>,
    params: Vec<f64>,
    training_log: Vec<TrainingLogEntry>,
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::SeedableRng;

    /// Central-difference gradient check against the analytic backward pass.
    ///
    /// Checks `n_coords` deterministically chosen coordinates and returns the
    /// worst relative error.
    pub fn gradient_check(cfg: &ClassifierConfig, n_coords: usize, seed: u64) -> f64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let params = init_params(cfg, &mut rng);

        // Random window and labels.
        let x: Vec<Vec<f64>> = (0..cfg.context_slots)
            .map(|_| {
                (0..cfg.input_dim)
                    .map(|_| uniform(&mut rng, -1.0, 1.0))
                    .collect()
            })
            .collect();
        let mask: Vec<bool> = (0..cfg.context_slots)
            .map(|i| i % 5 != 3) // one masked slot in five
            .collect();
        let labels: Vec<usize> = (0..cfg.head_count())
            .map(|_| (uniform(&mut rng, 0.0, 1.0) > 0.5) as usize)
            .collect();

        let loss_of = |p: &[f64]| -> f64 {
            let (logits, _) = forward_cached(cfg, p, &x, &mask).expect("forward");
            logits
                .iter()
                .zip(&labels)
                .map(|(z, y)| {
                    let m = z[0].max(z[1]);
                    let lse = m + ((z[0] - m).exp() + (z[1] - m).exp()).ln();
                    lse - z[*y]
                })
                .sum()
        };

        // Analytic gradient.
        let (logits, cache) = forward_cached(cfg, &params, &x, &mask).expect("forward");
        let dlogits: Vec<[f64; 2]> = logits
            .iter()
            .zip(&labels)
            .map(|(z, y)| {
                let p = softmax2(*z);
                let mut d = [p[0], p[1]];
                d[*y] -= 1.0;
                d
            })
            .collect();
        let mut grad = vec![0.0; params.len()];
        backward(cfg, &params, &cache, &dlogits, &mut grad);

        // Central differences on a deterministic coordinate sample.
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        let stride = (params.len() / n_coords).max(1);
        let mut checked = 0;
        let mut idx = 0;
        while checked < n_coords && idx < params.len() {
            let mut plus = params.clone();
            plus[idx] += eps;
            let mut minus = params.clone();
            minus[idx] -= eps;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * eps);
            let ana = grad[idx];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            worst = worst.max((num - ana).abs() / denom);
            checked += 1;
            idx += stride;
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ffnn_degenerate_count() {
        // Input 50 straight to 2 logits: 50 * 2 + 2.
        let mut cfg = ClassifierConfig::new(Architecture::Ffnn, 1, 32);
        cfg.input_dim = 50;
        cfg.context_slots = 1;
        assert_eq!(count_parameters(&cfg), 102);
    }

    #[test]
    fn ffnn_count_monotone_in_hidden() {
        let mut small = ClassifierConfig::new(Architecture::Ffnn, 2, 32);
        small.context_slots = 8;
        let mut big = small.clone();
        big.n_hidden = 64;
        assert!(count_parameters(&big) > count_parameters(&small));
    }

    #[test]
    fn gru_count_matches_gate_formula() {
        // 3 * (h * (x + h) + 2h) per layer plus the output head.
        let mut cfg = ClassifierConfig::new(Architecture::Gru, 2, 32);
        cfg.input_dim = 51;
        let h = 32;
        let per_layer = |x: usize| 3 * (h * (x + h) + 2 * h);
        let expected = per_layer(51) + per_layer(32) + (2 * h + 2);
        assert_eq!(count_parameters(&cfg), expected);
        let model = TrainedClassifier::init(cfg).unwrap();
        assert_eq!(model.param_count(), expected);
    }

    #[test]
    fn gru_counts_for_reference_shapes() {
        // With input 51 and the double-bias gate convention these match the
        // classical stacked-GRU parameter formulas.
        for (layers, hidden, expected) in [(2usize, 32usize, 14_562usize), (2, 64, 47_554), (3, 128, 267_906)] {
            let mut cfg = ClassifierConfig::new(Architecture::Gru, layers, hidden);
            cfg.input_dim = 51;
            assert_eq!(count_parameters(&cfg), expected, "{layers}x{hidden}");
        }
    }

    #[test]
    fn transformer_rejects_indivisible_heads() {
        let mut cfg = ClassifierConfig::new(Architecture::TransformerEncoder, 2, 30);
        cfg.n_heads = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn segments_tile_parameter_array() {
        for arch in Architecture::ALL {
            let mut cfg = ClassifierConfig::new(arch, 2, 32);
            cfg.input_dim = 50;
            cfg.context_slots = 8;
            cfg.heads = vec![1.0, 1.5];
            let model = TrainedClassifier::init(cfg.clone()).unwrap();
            let segs = model.segments();
            let mut cursor = 0;
            for s in &segs {
                assert_eq!(s.offset, cursor, "{arch:?} segment {}", s.name);
                cursor += s.len;
            }
            assert_eq!(cursor, model.param_count());
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = std::env::temp_dir().join("p2cws_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let mut cfg = ClassifierConfig::new(Architecture::Gru, 2, 16);
        cfg.input_dim = 50;
        cfg.context_slots = 8;
        let model = TrainedClassifier::init(cfg).unwrap();
        model.save(&path).unwrap();
        let loaded = TrainedClassifier::load(&path).unwrap();
        assert_eq!(model, loaded);
        std::fs::remove_file(&path).ok();
    }
}

#[cfg(test)]
mod gradient_tests {
    use super::test_support::gradient_check;
    use super::*;

    fn tiny(arch: Architecture) -> ClassifierConfig {
        let mut cfg = ClassifierConfig::new(arch, 2, 8);
        cfg.input_dim = 10;
        cfg.context_slots = 6;
        cfg.seed = 3;
        cfg
    }

    #[test]
    fn ffnn_gradients_match_finite_differences() {
        let worst = gradient_check(&tiny(Architecture::Ffnn), 60, 11);
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let worst = gradient_check(&tiny(Architecture::Gru), 60, 12);
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn transformer_gradients_match_finite_differences() {
        let worst = gradient_check(&tiny(Architecture::TransformerEncoder), 60, 13);
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn multihead_gradients_match_finite_differences() {
        let mut cfg = tiny(Architecture::Gru);
        cfg.heads = vec![0.5, 1.0, 1.5, 2.0];
        let worst = gradient_check(&cfg, 60, 14);
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn zero_params_give_uniform_probabilities() {
        for arch in Architecture::ALL {
            let cfg = tiny(arch);
            let mut model = TrainedClassifier::init(cfg.clone()).unwrap();
            model.params.fill(0.0);
            // LayerNorm gains of zero are legal parameters here; the logits
            // collapse to zero either way.
            let window = crate::features::FeatureWindow {
                t_end: 0.0,
                context_length: 0.5,
                vectors: vec![vec![0.3; cfg.input_dim]; cfg.context_slots],
                presence_mask: vec![true; cfg.context_slots],
            };
            let probs = model.forward(&window).unwrap();
            for p in probs {
                assert!((p[0] - 0.5).abs() < 1e-12, "{arch:?}");
                assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gru_ignores_masked_slots() {
        let cfg = tiny(Architecture::Gru);
        let model = TrainedClassifier::init(cfg.clone()).unwrap();
        let base = crate::features::FeatureWindow {
            t_end: 0.0,
            context_length: 0.5,
            vectors: vec![vec![0.2; cfg.input_dim]; cfg.context_slots],
            presence_mask: vec![true, true, false, true, false, true],
        };
        let mut garbage = base.clone();
        garbage.vectors[2] = vec![123.0; cfg.input_dim];
        garbage.vectors[4] = vec![-55.0; cfg.input_dim];
        assert_eq!(model.forward(&base).unwrap(), model.forward(&garbage).unwrap());
    }
}

