//! Detection and ground-truth record ingestion.
//!
//! Detection JSONL keys: `frame`, optional `t`, `cls`, `score`, `x`, `y`, `z`,
//! `dx`, `dy`, `dz`, `yaw` (radians). Ground truth adds `gt_id` and omits `score`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::format::{self, check_version, FormatError};
use crate::geometry::{BevPose, BoxDims};

pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectClass {
    Car,
    Truck,
    Pedestrian,
    Bicycle,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; 4] = [
        ObjectClass::Car,
        ObjectClass::Truck,
        ObjectClass::Pedestrian,
        ObjectClass::Bicycle,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectClass::Car => "car",
            ObjectClass::Truck => "truck",
            ObjectClass::Pedestrian => "pedestrian",
            ObjectClass::Bicycle => "bicycle",
        }
    }

    /// Ordering used to pick the heavy participant of a pair.
    pub fn mass_rank(&self) -> u8 {
        match self {
            ObjectClass::Truck => 3,
            ObjectClass::Car => 2,
            ObjectClass::Bicycle => 1,
            ObjectClass::Pedestrian => 0,
        }
    }
}

impl fmt::Display for ObjectClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectClass {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "car" => Ok(ObjectClass::Car),
            "truck" => Ok(ObjectClass::Truck),
            "pedestrian" => Ok(ObjectClass::Pedestrian),
            "bicycle" => Ok(ObjectClass::Bicycle),
            other => Err(IngestError::UnknownClass(other.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("line {line}: {message}")]
    Record { line: usize, message: String },
    #[error("unknown class {0:?} (expected car, truck, pedestrian or bicycle)")]
    UnknownClass(String),
    #[error("dt must be finite and > 0, got {0}")]
    InvalidDt(f64),
    #[error("ground truth {gt_id} has more than one point at frame {frame}")]
    DuplicateGtFrame { gt_id: String, frame: u64 },
}

/// One per-frame 3D box observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: u64,
    pub timestamp: f64,
    pub class: ObjectClass,
    pub score: f64,
    pub pose: BevPose,
    pub dims: BoxDims,
}

/// Detections grouped by frame, frames strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    dt: f64,
    frames: BTreeMap<u64, Vec<Detection>>,
}

impl FrameStream {
    pub fn new(dt: f64) -> Result<Self, IngestError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(IngestError::InvalidDt(dt));
        }
        Ok(FrameStream {
            dt,
            frames: BTreeMap::new(),
        })
    }

    pub fn from_detections(dt: f64, detections: Vec<Detection>) -> Result<Self, IngestError> {
        let mut stream = FrameStream::new(dt)?;
        for d in detections {
            stream.push(d);
        }
        Ok(stream)
    }

    pub fn push(&mut self, det: Detection) {
        self.frames.entry(det.frame_id).or_default().push(det);
    }

    /// Registers a frame with no detections so frame gaps stay visible.
    pub fn ensure_frame(&mut self, frame_id: u64) {
        self.frames.entry(frame_id).or_default();
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frames(&self) -> impl Iterator<Item = (u64, &[Detection])> {
        self.frames.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn frame_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.frames.keys().copied()
    }

    pub fn detections(&self) -> impl Iterator<Item = &Detection> {
        self.frames.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.frames.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wire format of a detection line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub cls: String,
    pub score: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub yaw: f64,
}

impl DetectionRecord {
    pub fn into_detection(self, dt: f64) -> Result<Detection, String> {
        let class: ObjectClass = self.cls.parse().map_err(|e: IngestError| e.to_string())?;
        if !(self.score.is_finite() && (0.0..=1.0).contains(&self.score)) {
            return Err(format!("score {} outside [0, 1]", self.score));
        }
        let pose = BevPose::try_new(self.x, self.y, self.z, self.yaw).map_err(|e| e.to_string())?;
        let dims = BoxDims::new(self.dx, self.dy, self.dz).map_err(|e| e.to_string())?;
        let timestamp = match self.t {
            Some(t) if t.is_finite() => t,
            Some(t) => return Err(format!("timestamp {t} is not finite")),
            None => self.frame as f64 * dt,
        };
        Ok(Detection {
            frame_id: self.frame,
            timestamp,
            class,
            score: self.score,
            pose,
            dims,
        })
    }

    pub fn from_detection(d: &Detection) -> Self {
        DetectionRecord {
            format_version: Some(format::FORMAT_VERSION),
            frame: d.frame_id,
            t: Some(d.timestamp),
            cls: d.class.to_string(),
            score: d.score,
            x: d.pose.x,
            y: d.pose.y,
            z: d.pose.z,
            dx: d.dims.dx(),
            dy: d.dims.dy(),
            dz: d.dims.dz(),
            yaw: d.pose.yaw(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMode {
    /// Abort on the first bad record.
    #[default]
    Strict,
    /// Skip bad records and count them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub stream: FrameStream,
    pub rejected: Vec<RejectedLine>,
}

#[derive(Deserialize)]
struct Probe {
    format_version: Option<u32>,
}

/// Loads a detection JSONL file into a sorted [`FrameStream`].
pub fn load_detections(path: &Path, dt: f64, mode: LoadMode) -> Result<LoadReport, IngestError> {
    let mut stream = FrameStream::new(dt)?;
    let mut rejected = Vec::new();
    for (line, text) in format::read_lines(path)? {
        if let Ok(p) = serde_json::from_str::<Probe>(&text) {
            check_version(path, p.format_version)?;
        }
        let parsed = serde_json::from_str::<DetectionRecord>(&text)
            .map_err(|e| e.to_string())
            .and_then(|r| r.into_detection(dt));
        match parsed {
            Ok(det) => stream.push(det),
            Err(message) => match mode {
                LoadMode::Strict => return Err(IngestError::Record { line, message }),
                LoadMode::Lenient => {
                    log::warn!("{}:{line}: skipped: {message}", path.display());
                    rejected.push(RejectedLine { line, message });
                }
            },
        }
    }
    Ok(LoadReport { stream, rejected })
}

pub fn save_detections(path: &Path, stream: &FrameStream) -> Result<(), IngestError> {
    let records: Vec<DetectionRecord> = stream.detections().map(DetectionRecord::from_detection).collect();
    format::write_jsonl(path, &records)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtPoint {
    pub frame_id: u64,
    pub class: ObjectClass,
    pub pose: BevPose,
    pub dims: BoxDims,
}

/// A stitched ground-truth trajectory; at most one point per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthTrack {
    pub gt_id: String,
    pub points: Vec<GtPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format_version: Option<u32>,
    pub gt_id: String,
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub cls: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub yaw: f64,
}

/// Groups points by `gt_id` (sorted), each sorted by frame.
pub fn assemble_ground_truth(
    records: Vec<GroundTruthRecord>,
) -> Result<Vec<GroundTruthTrack>, IngestError> {
    let mut by_id: BTreeMap<String, BTreeMap<u64, GtPoint>> = BTreeMap::new();
    for (idx, r) in records.into_iter().enumerate() {
        let line = idx + 1;
        let class: ObjectClass = r.cls.parse()?;
        let pose = BevPose::try_new(r.x, r.y, r.z, r.yaw).map_err(|e| IngestError::Record {
            line,
            message: e.to_string(),
        })?;
        let dims = BoxDims::new(r.dx, r.dy, r.dz).map_err(|e| IngestError::Record {
            line,
            message: e.to_string(),
        })?;
        let entry = by_id.entry(r.gt_id.clone()).or_default();
        if entry.contains_key(&r.frame) {
            return Err(IngestError::DuplicateGtFrame {
                gt_id: r.gt_id,
                frame: r.frame,
            });
        }
        entry.insert(
            r.frame,
            GtPoint {
                frame_id: r.frame,
                class,
                pose,
                dims,
            },
        );
    }
    Ok(by_id
        .into_iter()
        .map(|(gt_id, pts)| GroundTruthTrack {
            gt_id,
            points: pts.into_values().collect(),
        })
        .collect())
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthTrack>, IngestError> {
    let records: Vec<GroundTruthRecord> = format::read_jsonl(path)?;
    assemble_ground_truth(records)
}

pub fn ground_truth_records(gts: &[GroundTruthTrack], dt: f64) -> Vec<GroundTruthRecord> {
    let mut out: Vec<GroundTruthRecord> = gts
        .iter()
        .flat_map(|g| {
            g.points.iter().map(move |p| GroundTruthRecord {
                format_version: Some(format::FORMAT_VERSION),
                gt_id: g.gt_id.clone(),
                frame: p.frame_id,
                t: Some(p.frame_id as f64 * dt),
                cls: p.class.to_string(),
                x: p.pose.x,
                y: p.pose.y,
                z: p.pose.z,
                dx: p.dims.dx(),
                dy: p.dims.dy(),
                dz: p.dims.dz(),
                yaw: p.pose.yaw(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.frame.cmp(&b.frame).then_with(|| a.gt_id.cmp(&b.gt_id)));
    out
}

pub fn save_ground_truth(path: &Path, gts: &[GroundTruthTrack], dt: f64) -> Result<(), IngestError> {
    format::write_jsonl(path, &ground_truth_records(gts, dt))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn line(frame: u64, score: f64) -> String {
        format!(
            r#"{{"frame":{frame},"cls":"car","score":{score},"x":1.0,"y":2.0,"z":0.5,"dx":4.0,"dy":2.0,"dz":1.5,"yaw":0.1}}"#
        )
    }

    fn write_file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_valid_lines() {
        let f = write_file(&[line(0, 0.9), line(0, 0.8), line(1, 0.7)]);
        let rep = load_detections(f.path(), 0.1, LoadMode::Strict).unwrap();
        assert_eq!(rep.stream.len(), 3);
        assert_eq!(rep.stream.frame_ids().collect::<Vec<_>>(), vec![0, 1]);
        assert!(rep.rejected.is_empty());
        let d = rep.stream.detections().nth(2).unwrap();
        assert!((d.timestamp - 0.1).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_score() {
        let f = write_file(&[line(0, 0.9), line(1, 1.3)]);
        let err = load_detections(f.path(), 0.1, LoadMode::Strict).unwrap_err();
        assert!(matches!(err, IngestError::Record { line: 2, .. }), "{err}");
        let rep = load_detections(f.path(), 0.1, LoadMode::Lenient).unwrap();
        assert_eq!(rep.stream.len(), 1);
        assert_eq!(rep.rejected.len(), 1);
        assert_eq!(rep.rejected[0].line, 2);
    }

    #[test]
    fn sorts_frames() {
        let f = write_file(&[line(5, 0.5), line(2, 0.5), line(9, 0.5)]);
        let rep = load_detections(f.path(), 0.1, LoadMode::Strict).unwrap();
        assert_eq!(rep.stream.frame_ids().collect::<Vec<_>>(), vec![2, 5, 9]);
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let f = write_file(&[]);
        let rep = load_detections(f.path(), 0.1, LoadMode::Strict).unwrap();
        assert!(rep.stream.is_empty());
    }

    #[test]
    fn unknown_class_and_malformed() {
        let bad = line(0, 0.5).replace("car", "bus");
        let f = write_file(&[bad, "{not json".into()]);
        let rep = load_detections(f.path(), 0.1, LoadMode::Lenient).unwrap();
        assert_eq!(rep.rejected.len(), 2);
        assert!(rep.rejected[0].message.contains("unknown class"));
    }

    #[test]
    fn version_mismatch_is_hard_error() {
        let l = line(0, 0.5).replacen('{', r#"{"format_version":99,"#, 1);
        let f = write_file(&[l]);
        let err = load_detections(f.path(), 0.1, LoadMode::Lenient).unwrap_err();
        assert!(matches!(err, IngestError::Format(FormatError::Version { found: 99, .. })));
    }

    #[test]
    fn invalid_dt() {
        assert!(matches!(FrameStream::new(0.0), Err(IngestError::InvalidDt(_))));
    }

    #[test]
    fn duplicate_gt_frame_rejected() {
        let rec = GroundTruthRecord {
            format_version: None,
            gt_id: "a".into(),
            frame: 3,
            t: None,
            cls: "car".into(),
            x: 0.0,
            y: 0.0,
            z: 0.0,
            dx: 1.0,
            dy: 1.0,
            dz: 1.0,
            yaw: 0.0,
        };
        let err = assemble_ground_truth(vec![rec.clone(), rec]).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateGtFrame { frame: 3, .. }));
    }

    fn arb_detection() -> impl Strategy<Value = Detection> {
        (
            0u64..500,
            0usize..4,
            0.0f64..=1.0,
            prop::array::uniform4(-1e3f64..1e3),
            prop::array::uniform3(0.01f64..20.0),
            -10.0f64..10.0,
        )
            .prop_map(|(frame, c, score, [x, y, z, yaw], [dx, dy, dz], t)| Detection {
                frame_id: frame,
                timestamp: t,
                class: ObjectClass::ALL[c],
                score,
                pose: BevPose::new(x, y, z, yaw),
                dims: BoxDims::new(dx, dy, dz).unwrap(),
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn save_load_round_trip_is_bit_exact(dets in prop::collection::vec(arb_detection(), 0..30)) {
            let stream = FrameStream::from_detections(0.1, dets).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            save_detections(f.path(), &stream).unwrap();
            let back = load_detections(f.path(), 0.1, LoadMode::Strict).unwrap().stream;
            prop_assert_eq!(back, stream);
        }
    }
}
