//! Line-delimited track-file ingestion and canonical serialization.
//!
//! A track file holds one header record (crosswalks, semantic grid, camera,
//! frame rate) followed by one detection record per entity per frame.
//! Serialization is canonical: fixed key order, detections sorted by
//! (timestamp, id), shortest round-trip float formatting.

use super::*;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Meta(MetaRecord),
    Det(DetRecord),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetaRecord {
    frame_rate: f64,
    crosswalks: Vec<CrosswalkRecord>,
    semantic: SemanticRecord,
    camera: Option<CameraRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CrosswalkRecord {
    a: [f64; 2],
    b: [f64; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SemanticRecord {
    width: usize,
    height: usize,
    rle: Vec<(u8, usize)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraRecord {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetRecord {
    id: u64,
    class: String,
    t: f64,
    bbox: [f64; 4],
    anchor: [f64; 2],
    pose: Option<BTreeMap<String, [f64; 3]>>,
    toes: Option<[[f64; 2]; 2]>,
    state: Option<String>,
}

fn schema_err(line: usize, field: &str, message: impl Into<String>) -> SceneError {
    SceneError::Schema {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

/// Loads and fully validates a scene from a track file.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneBundle, SceneError> {
    let file = std::fs::File::open(path)?;
    scene_from_reader(BufReader::new(file))
}

/// Static scene context parsed from a header record.
#[derive(Debug, Clone)]
pub struct SceneMeta {
    pub frame_rate: f64,
    pub crosswalks: Vec<CrosswalkEntrance>,
    pub semantics: SemanticGrid,
    pub camera: Option<CameraModel>,
}

/// One parsed and validated track-file record.
#[derive(Debug, Clone)]
pub enum TrackRecord {
    Meta(SceneMeta),
    Det {
        id: u64,
        class: ObjectClass,
        detection: Detection,
    },
}

/// Parses and validates a single track-file line; `line_no` is used in
/// diagnostics only.
pub fn parse_record(line: &str, line_no: usize) -> Result<TrackRecord, SceneError> {
    let record: Record = serde_json::from_str(line).map_err(|source| SceneError::Parse {
        line: line_no,
        source,
    })?;
    match record {
        Record::Meta(m) => Ok(TrackRecord::Meta(parse_meta(line_no, m)?)),
        Record::Det(d) => {
            let (id, class, detection) = parse_det(line_no, d)?;
            Ok(TrackRecord::Det {
                id,
                class,
                detection,
            })
        }
    }
}

/// Loads a scene from any reader of track-file lines.
pub fn scene_from_reader(reader: impl Read) -> Result<SceneBundle, SceneError> {
    let reader = BufReader::new(reader);
    let mut meta: Option<SceneMeta> = None;
    let mut tracks: BTreeMap<u64, EntityTrack> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, line_no)? {
            TrackRecord::Meta(m) => {
                if meta.is_some() {
                    return Err(schema_err(line_no, "type", "duplicate meta record"));
                }
                if !tracks.is_empty() {
                    return Err(schema_err(line_no, "type", "meta record after det records"));
                }
                meta = Some(m);
            }
            TrackRecord::Det {
                id,
                class,
                detection,
            } => {
                if meta.is_none() {
                    return Err(schema_err(line_no, "type", "det record before meta record"));
                }
                append_detection(&mut tracks, id, class, detection, line_no)?;
            }
        }
    }

    let meta = meta.ok_or_else(|| schema_err(1, "type", "missing meta record"))?;
    let scene = SceneBundle {
        tracks: tracks.into_values().collect(),
        crosswalks: meta.crosswalks,
        semantics: meta.semantics,
        camera: meta.camera,
        frame_rate: meta.frame_rate,
    };
    scene.validate()?;
    Ok(scene)
}

/// Appends a detection to its track, enforcing class consistency and
/// strictly increasing per-track timestamps.
pub fn append_detection(
    tracks: &mut BTreeMap<u64, EntityTrack>,
    id: u64,
    class: ObjectClass,
    detection: Detection,
    line_no: usize,
) -> Result<(), SceneError> {
    let entry = tracks
        .entry(id)
        .or_insert_with(|| EntityTrack::new(id, class));
    if entry.class != class {
        return Err(SceneError::ClassMismatch {
            track: id,
            line: line_no,
        });
    }
    if let Some(last) = entry.detections.last() {
        if detection.timestamp <= last.timestamp {
            return Err(SceneError::NonMonotoneTimestamps {
                track: id,
                timestamp: detection.timestamp,
            });
        }
    }
    entry.detections.push(detection);
    Ok(())
}

fn parse_det(
    line: usize,
    rec: DetRecord,
) -> Result<(u64, ObjectClass, Detection), SceneError> {
    let class = ObjectClass::parse(&rec.class).ok_or(SceneError::UnknownClass {
        line,
        value: rec.class.clone(),
    })?;

    let bbox = BoundingBox {
        u_min: rec.bbox[0],
        v_min: rec.bbox[1],
        u_max: rec.bbox[2],
        v_max: rec.bbox[3],
    };
    if !bbox.is_valid() {
        return Err(schema_err(
            line,
            "bbox",
            "requires finite coordinates with u_max > u_min and v_max > v_min",
        ));
    }
    if !rec.t.is_finite() {
        return Err(schema_err(line, "t", "non-finite timestamp"));
    }

    let pose = match rec.pose {
        None => None,
        Some(map) => {
            let mut pose = Pose3D::new(rec.t);
            for (name, coords) in map {
                let joint = JointName::parse(&name)
                    .ok_or_else(|| schema_err(line, "pose", format!("unknown joint `{name}`")))?;
                if !coords.iter().all(|c| c.is_finite()) {
                    return Err(schema_err(
                        line,
                        "pose",
                        format!("non-finite coordinates for joint `{name}`"),
                    ));
                }
                pose.joints
                    .insert(joint, Vector3::new(coords[0], coords[1], coords[2]));
            }
            Some(pose)
        }
    };

    let state = match rec.state {
        None => None,
        Some(s) => Some(
            CrossingState::parse(&s)
                .ok_or_else(|| schema_err(line, "state", format!("unknown state `{s}`")))?,
        ),
    };

    let det = Detection {
        timestamp: rec.t,
        bbox,
        anchor: Vector2::new(rec.anchor[0], rec.anchor[1]),
        pose,
        toes: rec
            .toes
            .map(|t| [Vector2::new(t[0][0], t[0][1]), Vector2::new(t[1][0], t[1][1])]),
        state,
    };
    det.validate().map_err(|m| schema_err(line, "det", m))?;
    Ok((rec.id, class, det))
}

fn parse_meta(meta_line: usize, meta: MetaRecord) -> Result<SceneMeta, SceneError> {
    if !(meta.frame_rate.is_finite() && meta.frame_rate > 0.0) {
        return Err(schema_err(meta_line, "frame_rate", "must be positive"));
    }

    let mut crosswalks = Vec::with_capacity(meta.crosswalks.len());
    for cw in &meta.crosswalks {
        crosswalks.push(
            CrosswalkEntrance::new(
                Vector2::new(cw.a[0], cw.a[1]),
                Vector2::new(cw.b[0], cw.b[1]),
            )
            .map_err(|e| schema_err(meta_line, "crosswalks", e.to_string()))?,
        );
    }

    let mut labels = Vec::with_capacity(meta.semantic.width * meta.semantic.height);
    for &(code, count) in &meta.semantic.rle {
        let label = SemanticLabel::from_code(code).ok_or_else(|| {
            schema_err(meta_line, "semantic.rle", format!("unknown label code {code}"))
        })?;
        if count == 0 {
            return Err(schema_err(meta_line, "semantic.rle", "zero-length run"));
        }
        labels.resize(labels.len() + count, label);
    }
    let semantics = SemanticGrid::new(meta.semantic.width, meta.semantic.height, labels)
        .map_err(|e| schema_err(meta_line, "semantic", e.to_string()))?;

    let camera = match meta.camera {
        None => None,
        Some(c) => Some(
            CameraModel::new(
                Matrix3::from_row_slice(&c.k),
                Matrix3::from_row_slice(&c.r),
                Vector3::new(c.t[0], c.t[1], c.t[2]),
            )
            .map_err(|e| schema_err(meta_line, "camera", e.to_string()))?,
        ),
    };

    Ok(SceneMeta {
        frame_rate: meta.frame_rate,
        crosswalks,
        semantics,
        camera,
    })
}

/// Serializes a scene in canonical track-file form.
pub fn scene_to_string(scene: &SceneBundle) -> Result<String, SceneError> {
    scene.validate()?;

    let meta = MetaRecord {
        frame_rate: scene.frame_rate,
        crosswalks: scene
            .crosswalks
            .iter()
            .map(|cw| CrosswalkRecord {
                a: [cw.endpoints[0].x, cw.endpoints[0].y],
                b: [cw.endpoints[1].x, cw.endpoints[1].y],
            })
            .collect(),
        semantic: SemanticRecord {
            width: scene.semantics.width(),
            height: scene.semantics.height(),
            rle: rle_encode(scene.semantics.labels()),
        },
        camera: scene.camera.as_ref().map(|cam| CameraRecord {
            k: matrix_row_major(cam.intrinsic()),
            r: matrix_row_major(cam.rotation()),
            t: [
                cam.translation().x,
                cam.translation().y,
                cam.translation().z,
            ],
        }),
    };

    let mut out = String::new();
    push_record(&mut out, &Record::Meta(meta))?;

    // Canonical body order: by timestamp, then id.
    let mut dets: Vec<(&EntityTrack, &Detection)> = scene
        .tracks
        .iter()
        .flat_map(|track| track.detections.iter().map(move |d| (track, d)))
        .collect();
    dets.sort_by(|(ta, da), (tb, db)| {
        da.timestamp
            .total_cmp(&db.timestamp)
            .then(ta.id.cmp(&tb.id))
    });

    for (track, det) in dets {
        let rec = DetRecord {
            id: track.id,
            class: track.class.as_str().to_string(),
            t: det.timestamp,
            bbox: [det.bbox.u_min, det.bbox.v_min, det.bbox.u_max, det.bbox.v_max],
            anchor: [det.anchor.x, det.anchor.y],
            pose: det.pose.as_ref().map(|p| {
                p.joints
                    .iter()
                    .map(|(name, v)| (name.as_str().to_string(), [v.x, v.y, v.z]))
                    .collect()
            }),
            toes: det
                .toes
                .map(|t| [[t[0].x, t[0].y], [t[1].x, t[1].y]]),
            state: det.state.map(|s| s.as_str().to_string()),
        };
        push_record(&mut out, &Record::Det(rec))?;
    }
    Ok(out)
}

/// Writes the canonical track-file form of a scene to `path`.
pub fn save_scene(scene: &SceneBundle, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let text = scene_to_string(scene)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

fn push_record(out: &mut String, record: &Record) -> Result<(), SceneError> {
    let line = serde_json::to_string(record)
        .map_err(|e| SceneError::Invalid(format!("serialization failed: {e}")))?;
    out.push_str(&line);
    out.push('\n');
    Ok(())
}

fn matrix_row_major(m: &Matrix3<f64>) -> [f64; 9] {
    [
        m[(0, 0)],
        m[(0, 1)],
        m[(0, 2)],
        m[(1, 0)],
        m[(1, 1)],
        m[(1, 2)],
        m[(2, 0)],
        m[(2, 1)],
        m[(2, 2)],
    ]
}

fn rle_encode(labels: &[SemanticLabel]) -> Vec<(u8, usize)> {
    let mut runs: Vec<(u8, usize)> = Vec::new();
    for label in labels {
        match runs.last_mut() {
            Some((code, count)) if *code == label.code() => *count += 1,
            _ => runs.push((label.code(), 1)),
        }
    }
    runs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_file() -> String {
        concat!(
            r#"{"type":"meta","frame_rate":30.0,"crosswalks":[{"a":[10.0,20.0],"b":[30.0,20.0]}],"semantic":{"width":2,"height":2,"rle":[[1,4]]},"camera":null}"#,
            "\n",
            r#"{"type":"det","id":1,"class":"Person","t":0.0,"bbox":[0.0,0.0,10.0,20.0],"anchor":[5.0,20.0],"pose":null,"toes":null,"state":"not_crossing"}"#,
            "\n",
            r#"{"type":"det","id":2,"class":"Car","t":0.0,"bbox":[50.0,0.0,80.0,15.0],"anchor":[50.0,7.5],"pose":null,"toes":null,"state":null}"#,
            "\n",
        )
        .to_string()
    }

    #[test]
    fn loads_minimal_scene() {
        let scene = scene_from_reader(minimal_file().as_bytes()).expect("load");
        assert_eq!(scene.tracks.len(), 2);
        assert_eq!(scene.tracks[0].class, ObjectClass::Person);
        assert_eq!(scene.tracks[1].class, ObjectClass::Car);
        assert_eq!(scene.crosswalks.len(), 1);
        assert_eq!(scene.semantics.width(), 2);
    }

    #[test]
    fn rejects_non_monotone_timestamps() {
        let text = minimal_file()
            + r#"{"type":"det","id":1,"class":"Person","t":0.0,"bbox":[0.0,0.0,10.0,20.0],"anchor":[5.0,20.0],"pose":null,"toes":null,"state":null}"#;
        let err = scene_from_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(
            err,
            SceneError::NonMonotoneTimestamps { track: 1, .. }
        ));
    }

    #[test]
    fn rejects_unknown_class() {
        let text = minimal_file().replace("\"Car\"", "\"Scooter\"");
        let err = scene_from_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SceneError::UnknownClass { line: 3, .. }));
    }

    #[test]
    fn rejects_rle_size_mismatch() {
        let text = minimal_file().replace("[[1,4]]", "[[1,3]]");
        let err = scene_from_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SceneError::Schema { .. }));
    }

    #[test]
    fn rejects_class_change_mid_track() {
        let text = minimal_file()
            + r#"{"type":"det","id":2,"class":"Bus","t":0.1,"bbox":[50.0,0.0,80.0,15.0],"anchor":[50.0,7.5],"pose":null,"toes":null,"state":null}"#;
        let err = scene_from_reader(text.as_bytes()).unwrap_err();
        assert!(matches!(err, SceneError::ClassMismatch { track: 2, .. }));
    }

    #[test]
    fn round_trip_is_byte_identical_on_canonical_form() {
        let scene = scene_from_reader(minimal_file().as_bytes()).expect("load");
        let first = scene_to_string(&scene).expect("save");
        let reloaded = scene_from_reader(first.as_bytes()).expect("reload");
        let second = scene_to_string(&reloaded).expect("save again");
        assert_eq!(first, second);
        assert_eq!(scene, reloaded);
    }

    #[test]
    fn empty_track_list_round_trips() {
        let scene = SceneBundle {
            tracks: vec![],
            crosswalks: vec![],
            semantics: SemanticGrid::filled(0, 0, SemanticLabel::Other),
            camera: None,
            frame_rate: 30.0,
        };
        let text = scene_to_string(&scene).expect("save");
        let reloaded = scene_from_reader(text.as_bytes()).expect("load");
        assert!(reloaded.tracks.is_empty());
    }
}
