//! Streaming warning pipeline: consumes a time-ordered track-record stream,
//! maintains per-pedestrian 15 Hz sliding windows, and emits collision
//! warnings when the predicted crossing probability crosses a threshold for
//! a pedestrian that is not yet crossing.
//!
//! A slot is processed once the stream watermark (latest timestamp seen,
//! minus the reorder buffer) has passed the slot time plus the sampling
//! tolerance, so slightly late records from other entities still land in the
//! right window. Windows are produced by the same per-slot builder as batch
//! extraction, which makes online and offline probabilities bit-identical.

use crate::classifiers::TrainedClassifier;
use crate::features::{
    closest_approaching_vehicle_with_tol, prediction_window_at, slot_index_ceil,
    slot_index_floor, slot_count, slot_time, FeatureConfig, FeatureError,
};
use crate::scene_model::{
    parse_record, CrossingState, EntityTrack, SceneBundle, SceneError, SemanticGrid,
    SemanticLabel, TrackRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error("classifier: {0}")]
    Classifier(#[from] crate::classifiers::ClassifierError),
    #[error("stream has no meta record")]
    MissingMeta,
    #[error("checkpoint context ({model} slots) incompatible with stream config")]
    ContextMismatch { model: usize },
}

/// A collision warning for one pedestrian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarningMessage {
    pub pedestrian_id: u64,
    pub t_emit: f64,
    pub horizon: f64,
    pub p_cross: f64,
    pub current_state: CrossingState,
    pub nearest_vehicle_id: Option<u64>,
}

/// Per-slot model output (logged for online/offline comparison).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub pedestrian_id: u64,
    pub t_end: f64,
    /// Per-head (crossing, not-crossing) probabilities.
    pub probabilities: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    /// Warning threshold on the crossing probability.
    pub threshold: f64,
    /// Seconds a later warning for the same pedestrian is suppressed...
    pub rewarn_interval: f64,
    /// ...unless its probability rose by at least this much.
    pub rewarn_delta: f64,
    /// Lateness tolerated before out-of-order records are dropped (seconds).
    pub reorder_buffer: f64,
    pub feature: FeatureConfig,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            threshold: 0.5,
            rewarn_interval: 1.0,
            rewarn_delta: 0.1,
            reorder_buffer: 0.2,
            feature: FeatureConfig::default(),
        }
    }
}

/// Output accumulated by a processing step.
#[derive(Debug, Default, Clone)]
pub struct StreamOutput {
    pub predictions: Vec<SlotPrediction>,
    pub warnings: Vec<WarningMessage>,
    pub dropped_records: usize,
}

impl StreamOutput {
    fn absorb(&mut self, mut other: StreamOutput) {
        self.predictions.append(&mut other.predictions);
        self.warnings.append(&mut other.warnings);
        self.dropped_records += other.dropped_records;
    }
}

/// Wall-clock per-frame processing latency summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub frames: usize,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

struct PedState {
    next_slot: i64,
    last_warning: Option<(f64, f64)>, // (t_emit, p_cross)
}

/// Incremental stream processor; feed records in arrival order, then call
/// [`StreamProcessor::finish`] to flush the tail.
pub struct StreamProcessor {
    model: TrainedClassifier,
    config: StreamConfig,
    context_length: f64,
    head_index: usize,
    scene: SceneBundle,
    has_meta: bool,
    /// Track id -> index into `scene.tracks`.
    track_index: BTreeMap<u64, usize>,
    ped_states: BTreeMap<u64, PedState>,
    max_seen_t: f64,
    frame_latencies_ms: Vec<f64>,
}

impl StreamProcessor {
    pub fn new(model: TrainedClassifier, config: StreamConfig) -> Result<Self, StreamError> {
        let slots = model.config.context_slots;
        // Recover the context length from the slot count: the checkpoint
        // stores slots, the window grid wants one of the supported context
        // lengths.
        let context_length = (1..=6)
            .map(|k| k as f64 * 0.5)
            .find(|c| slot_count(*c) == slots)
            .ok_or(StreamError::ContextMismatch { model: slots })?;
        // Warnings use the 1.5 s head when present, else the first head.
        let head_index = model
            .config
            .heads
            .iter()
            .position(|h| (h - 1.5).abs() < 1e-9)
            .unwrap_or(0);
        Ok(StreamProcessor {
            model,
            config,
            context_length,
            head_index,
            scene: SceneBundle {
                tracks: Vec::new(),
                crosswalks: Vec::new(),
                semantics: SemanticGrid::filled(0, 0, SemanticLabel::Other),
                camera: None,
                frame_rate: 30.0,
            },
            has_meta: false,
            track_index: BTreeMap::new(),
            ped_states: BTreeMap::new(),
            max_seen_t: f64::NEG_INFINITY,
            frame_latencies_ms: Vec::new(),
        })
    }

    /// Parses and ingests one stream line, returning anything it emitted.
    pub fn push_line(&mut self, line: &str, line_no: usize) -> Result<StreamOutput, StreamError> {
        if line.trim().is_empty() {
            return Ok(StreamOutput::default());
        }
        let record = parse_record(line, line_no)?;
        self.push_record(record, line_no)
    }

    /// Ingests one parsed record.
    pub fn push_record(
        &mut self,
        record: TrackRecord,
        line_no: usize,
    ) -> Result<StreamOutput, StreamError> {
        let started = Instant::now();
        let mut out = StreamOutput::default();
        match record {
            TrackRecord::Meta(meta) => {
                self.scene.crosswalks = meta.crosswalks;
                self.scene.semantics = meta.semantics;
                self.scene.camera = meta.camera;
                self.scene.frame_rate = meta.frame_rate;
                self.has_meta = true;
            }
            TrackRecord::Det {
                id,
                class,
                detection,
            } => {
                if !self.has_meta {
                    return Err(StreamError::MissingMeta);
                }
                let t = detection.timestamp;
                if t < self.max_seen_t - self.config.reorder_buffer {
                    // Too late to affect any still-pending slot.
                    out.dropped_records += 1;
                    self.frame_latencies_ms
                        .push(started.elapsed().as_secs_f64() * 1e3);
                    return Ok(out);
                }
                let _ = line_no;
                let idx = *self.track_index.entry(id).or_insert_with(|| {
                    self.scene.tracks.push(EntityTrack::new(id, class));
                    self.scene.tracks.len() - 1
                });
                let track = &mut self.scene.tracks[idx];
                let rewinds = track
                    .detections
                    .last()
                    .is_some_and(|last| t <= last.timestamp);
                if track.class != class || rewinds {
                    // Out-of-order within one entity (or an id reused for a
                    // different class): unusable, dropped with a count.
                    out.dropped_records += 1;
                    self.frame_latencies_ms
                        .push(started.elapsed().as_secs_f64() * 1e3);
                    return Ok(out);
                }
                track.detections.push(detection);
                if class == crate::scene_model::ObjectClass::Person {
                    self.ped_states.entry(id).or_insert_with(|| PedState {
                        next_slot: slot_index_ceil(t) + slot_count(self.context_length) as i64
                            - 1,
                        last_warning: None,
                    });
                }
                self.max_seen_t = self.max_seen_t.max(t);
                out.absorb(self.process_ready(false)?);
            }
        }
        self.frame_latencies_ms
            .push(started.elapsed().as_secs_f64() * 1e3);
        Ok(out)
    }

    /// Flushes every remaining slot at end of stream.
    pub fn finish(&mut self) -> Result<StreamOutput, StreamError> {
        self.process_ready(true)
    }

    pub fn latency_report(&self) -> Option<LatencyReport> {
        if self.frame_latencies_ms.is_empty() {
            return None;
        }
        let mut sorted = self.frame_latencies_ms.clone();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let q = |q: f64| sorted[((sorted.len() as f64 - 1.0) * q).round() as usize];
        Some(LatencyReport {
            frames: sorted.len(),
            p50_ms: q(0.5),
            p95_ms: q(0.95),
            max_ms: *sorted.last().unwrap(),
        })
    }

    /// Runs every pedestrian slot whose data horizon has passed (or all
    /// remaining ones on flush), in (time, id) order.
    fn process_ready(&mut self, flush: bool) -> Result<StreamOutput, StreamError> {
        let tol = self.config.feature.sample_tolerance;
        let watermark = self.max_seen_t - self.config.reorder_buffer;

        let mut ready: Vec<(i64, u64)> = Vec::new();
        for (id, state) in &self.ped_states {
            let Some(track) = self.track(*id) else { continue };
            let Some(last_t) = track.last_timestamp() else { continue };
            let m_max = slot_index_floor(last_t);
            let mut m = state.next_slot;
            while m <= m_max && (flush || slot_time(m) + tol < watermark) {
                ready.push((m, *id));
                m += 1;
            }
        }
        ready.sort();

        let mut out = StreamOutput::default();
        for (m, id) in ready {
            let prediction = self.predict_slot(id, m)?;
            self.ped_states.get_mut(&id).unwrap().next_slot = m + 1;
            if let Some(p) = prediction {
                if let Some(w) = self.maybe_warn(id, &p)? {
                    out.warnings.push(w);
                }
                out.predictions.push(p);
            }
        }
        Ok(out)
    }

    fn track(&self, id: u64) -> Option<&EntityTrack> {
        self.track_index.get(&id).map(|i| &self.scene.tracks[*i])
    }

    fn predict_slot(&self, id: u64, m_end: i64) -> Result<Option<SlotPrediction>, StreamError> {
        let track = self.track(id).expect("slot scheduled for known track");
        let window = prediction_window_at(
            track,
            &self.scene,
            m_end,
            self.context_length,
            &self.config.feature,
        )?;
        let probabilities = self.model.forward(&window)?;
        Ok(Some(SlotPrediction {
            pedestrian_id: id,
            t_end: slot_time(m_end),
            probabilities,
        }))
    }

    fn maybe_warn(
        &mut self,
        id: u64,
        prediction: &SlotPrediction,
    ) -> Result<Option<WarningMessage>, StreamError> {
        let p_cross = prediction.probabilities[self.head_index][0];
        if p_cross < self.config.threshold {
            return Ok(None);
        }
        // State gate: warnings are only useful before the pedestrian crosses.
        // An unlabeled stream is treated as not yet crossing.
        let current_state = self
            .track(id)
            .expect("warning for known track")
            .state_at(prediction.t_end, self.config.feature.sample_tolerance)
            .unwrap_or(CrossingState::NotCrossing);
        if current_state == CrossingState::Crossing {
            return Ok(None);
        }
        // Re-warn suppression.
        let state = self.ped_states.get_mut(&id).unwrap();
        if let Some((t_last, p_last)) = state.last_warning {
            let elapsed = prediction.t_end - t_last;
            if elapsed < self.config.rewarn_interval
                && p_cross < p_last + self.config.rewarn_delta
            {
                return Ok(None);
            }
        }
        state.last_warning = Some((prediction.t_end, p_cross));

        let track = self.track(id).expect("warning for known track");
        let nearest_vehicle_id = closest_approaching_vehicle_with_tol(
            track,
            &self.scene,
            prediction.t_end,
            self.config.feature.lookback,
            &self.config.feature.knowledge_base,
            self.config.feature.sample_tolerance,
        )
        .ok()
        .flatten()
        .map(|v| v.id);

        Ok(Some(WarningMessage {
            pedestrian_id: id,
            t_emit: prediction.t_end,
            horizon: self.model.config.heads[self.head_index],
            p_cross,
            current_state,
            nearest_vehicle_id,
        }))
    }
}

/// Runs a full record stream (e.g. the lines of a track file) through a
/// processor and returns everything it emitted.
pub fn stream_predict(
    lines: impl IntoIterator<Item = String>,
    model: TrainedClassifier,
    config: StreamConfig,
) -> Result<(StreamOutput, Option<LatencyReport>), StreamError> {
    let mut processor = StreamProcessor::new(model, config)?;
    let mut out = StreamOutput::default();
    for (idx, line) in lines.into_iter().enumerate() {
        out.absorb(processor.push_line(&line, idx + 1)?);
    }
    out.absorb(processor.finish()?);
    let latency = processor.latency_report();
    Ok((out, latency))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{Architecture, ClassifierConfig};
    use crate::features::{build_prediction_windows, FEATURE_DIM};
    use crate::synthetic::{generate_scene, ScenarioSpec, Script};

    fn scene_lines(scene: &SceneBundle) -> Vec<String> {
        crate::scene_model::scene_to_string(scene)
            .unwrap()
            .lines()
            .map(|l| l.to_string())
            .collect()
    }

    fn test_model(with_state: bool, seed: u64) -> TrainedClassifier {
        let mut cfg = ClassifierConfig::new(Architecture::Gru, 2, 16);
        cfg.input_dim = if with_state { FEATURE_DIM + 1 } else { FEATURE_DIM };
        cfg.context_slots = 8;
        cfg.seed = seed;
        TrainedClassifier::init(cfg).unwrap()
    }

    #[test]
    fn online_equals_offline_bit_exact() {
        let (scene, _) = generate_scene(&ScenarioSpec {
            script: Script::ApproachWaitCross,
            n_pedestrians: 3,
            n_vehicles: 3,
            duration: 9.0,
            noise: 0.3,
            seed: 17,
        })
        .unwrap();
        let model = test_model(false, 4);
        let config = StreamConfig::default();

        let (out, _) = stream_predict(scene_lines(&scene), model.clone(), config.clone()).unwrap();

        // Offline: enumerate windows per pedestrian and predict.
        let mut offline: Vec<SlotPrediction> = Vec::new();
        for track in scene.pedestrians() {
            let windows =
                build_prediction_windows(track, &scene, 0.5, &config.feature).unwrap();
            for w in windows {
                offline.push(SlotPrediction {
                    pedestrian_id: track.id,
                    t_end: w.t_end,
                    probabilities: model.forward(&w).unwrap(),
                });
            }
        }
        offline.sort_by(|a, b| {
            a.t_end
                .total_cmp(&b.t_end)
                .then(a.pedestrian_id.cmp(&b.pedestrian_id))
        });

        assert_eq!(out.predictions.len(), offline.len());
        for (a, b) in out.predictions.iter().zip(&offline) {
            assert_eq!(a.pedestrian_id, b.pedestrian_id);
            assert_eq!(a.t_end, b.t_end);
            assert_eq!(a.probabilities, b.probabilities, "t={}", a.t_end);
        }
    }

    #[test]
    fn unattainable_threshold_emits_no_warnings() {
        let (scene, _) = generate_scene(&ScenarioSpec {
            script: Script::CrossImmediately,
            n_pedestrians: 2,
            n_vehicles: 2,
            duration: 7.0,
            noise: 0.0,
            seed: 3,
        })
        .unwrap();
        let model = test_model(false, 4);
        let config = StreamConfig {
            threshold: 1.01,
            ..StreamConfig::default()
        };
        let (out, _) = stream_predict(scene_lines(&scene), model, config).unwrap();
        assert!(out.warnings.is_empty());
        assert!(!out.predictions.is_empty());
    }

    #[test]
    fn warnings_monotone_in_threshold() {
        let (scene, _) = generate_scene(&ScenarioSpec {
            script: Script::ApproachWaitCross,
            n_pedestrians: 2,
            n_vehicles: 2,
            duration: 9.0,
            noise: 0.0,
            seed: 29,
        })
        .unwrap();
        let model = test_model(false, 11);
        let mut counts = Vec::new();
        for threshold in [0.0, 0.3, 0.5, 0.7, 1.01] {
            let config = StreamConfig {
                threshold,
                ..StreamConfig::default()
            };
            let (out, _) = stream_predict(scene_lines(&scene), model.clone(), config).unwrap();
            counts.push(out.warnings.len());
        }
        for pair in counts.windows(2) {
            assert!(pair[1] <= pair[0], "counts {counts:?}");
        }
    }

    #[test]
    fn already_crossing_pedestrian_not_warned() {
        let (scene, truth) = generate_scene(&ScenarioSpec {
            script: Script::CrossImmediately,
            n_pedestrians: 1,
            n_vehicles: 1,
            duration: 7.0,
            noise: 0.0,
            seed: 5,
        })
        .unwrap();
        let model = test_model(false, 6);
        let config = StreamConfig {
            threshold: 0.0, // every slot qualifies on probability
            ..StreamConfig::default()
        };
        let (out, _) = stream_predict(scene_lines(&scene), model, config).unwrap();
        let (onset, exit) = truth.tracks[&truth.protagonist].crossing.unwrap();
        for w in &out.warnings {
            assert_eq!(w.current_state, CrossingState::NotCrossing);
            assert!(
                w.t_emit < onset || w.t_emit > exit,
                "warning at {} inside crossing interval [{onset}, {exit}]",
                w.t_emit
            );
        }
    }

    #[test]
    fn out_of_order_record_dropped() {
        let (scene, _) = generate_scene(&ScenarioSpec {
            script: Script::WalkThrough,
            n_pedestrians: 1,
            n_vehicles: 0,
            duration: 6.0,
            noise: 0.0,
            seed: 1,
        })
        .unwrap();
        let mut lines = scene_lines(&scene);
        // Replay an early record at the end of the stream: far older than the
        // reorder buffer allows.
        let early = lines[1].clone();
        lines.push(early);
        let model = test_model(false, 2);
        let (out, _) = stream_predict(lines, model, StreamConfig::default()).unwrap();
        assert_eq!(out.dropped_records, 1);
    }
}
