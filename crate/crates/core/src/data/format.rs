//! On-disk dataset layout: `manifest.json` plus `clips/<id>/frames.ctb`
//! (CTB1, `[V, N, 3, W, H]`) and `clips/<id>/features.jsonl` (one frame per
//! line).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::behavior::{BehaviorState, FrameFeatures};
use super::dataset::{densify, ClipSample, Dataset, DatasetMeta, Split};
use super::rule::Label;
use crate::error::{Error, Result};
use crate::feature::ObjectBox;
use crate::tensor::{read_ctb, write_ctb};

pub const MANIFEST: &str = "manifest.json";
pub const FRAMES_FILE: &str = "frames.ctb";
pub const FEATURES_FILE: &str = "features.jsonl";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandsRecord {
    left: Vec<f64>,
    right: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    t: usize,
    head: Vec<f64>,
    body: Vec<f64>,
    hands: HandsRecord,
    #[serde(default)]
    objects: Vec<Vec<f64>>,
    valid: bool,
}

fn exact<const N: usize>(v: &[f64], field: &str) -> std::result::Result<[f64; N], String> {
    <[f64; N]>::try_from(v).map_err(|_| format!("field `{field}` has {} values, expected {N}", v.len()))
}

fn check_box(b: &ObjectBox, field: &str) -> std::result::Result<(), String> {
    if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(format!("field `{field}` has coordinates outside [0, 1]"));
    }
    if b[0] > b[2] || b[1] > b[3] {
        return Err(format!("field `{field}` has a top-left corner below or right of its bottom-right corner"));
    }
    Ok(())
}

impl FeatureRecord {
    fn from_frame(t: usize, f: &FrameFeatures) -> Self {
        Self {
            t,
            head: f.head.to_vec(),
            body: f.body.to_vec(),
            hands: HandsRecord {
                left: f.left.to_vec(),
                right: f.right.to_vec(),
            },
            objects: f.objects.iter().map(|b| b.to_vec()).collect(),
            valid: f.valid,
        }
    }

    fn into_frame(self, index: usize) -> std::result::Result<FrameFeatures, String> {
        if self.t != index {
            return Err(format!("field `t` is {}, expected frame index {index}", self.t));
        }
        let head: [f64; 3] = exact(&self.head, "head")?;
        if head.iter().any(|a| !(-180.0..=180.0).contains(a)) {
            return Err("field `head` has angles outside [-180, 180]".into());
        }
        let body: [f64; 34] = exact(&self.body, "body")?;
        if body.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("field `body` has coordinates outside [0, 1]".into());
        }
        let left: ObjectBox = exact(&self.hands.left, "hands.left")?;
        let right: ObjectBox = exact(&self.hands.right, "hands.right")?;
        check_box(&left, "hands.left")?;
        check_box(&right, "hands.right")?;
        let mut objects = Vec::with_capacity(self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            let field = format!("objects[{i}]");
            let b: ObjectBox = exact(o, &field)?;
            check_box(&b, &field)?;
            objects.push(b);
        }
        Ok(FrameFeatures {
            head,
            body,
            left,
            right,
            objects,
            valid: self.valid,
        })
    }
}

pub fn write_features<W: Write>(w: &mut W, frames: &[FrameFeatures]) -> Result<()> {
    for (t, f) in frames.iter().enumerate() {
        serde_json::to_writer(&mut *w, &FeatureRecord::from_frame(t, f))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses and validates JSON-lines feature records. Errors carry the
/// 1-based line number. Blank lines are skipped.
pub fn read_features<R: BufRead>(r: R) -> Result<Vec<FrameFeatures>> {
    let mut frames = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |detail: String| Error::Parse { line: i + 1, detail };
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        frames.push(rec.into_frame(frames.len()).map_err(parse)?);
    }
    Ok(frames)
}

/// Reads externally extracted features and fills frames without detections
/// from their predecessors so the sequence is dense.
pub fn ingest_features(path: &Path) -> Result<Vec<FrameFeatures>> {
    let mut frames = read_features(BufReader::new(File::open(path)?))?;
    densify(&mut frames)?;
    Ok(frames)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFiles {
    pub frames: String,
    pub features: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clip_id: String,
    pub fps: u32,
    pub n_frames: usize,
    pub label: Label,
    pub split: Split,
    pub files: ClipFiles,
    pub state_trace: Vec<BehaviorState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    #[serde(flatten)]
    pub meta: DatasetMeta,
    pub clips: Vec<ClipManifest>,
}

fn clip_manifest(c: &ClipSample) -> ClipManifest {
    let dir = format!("clips/{}", c.clip_id);
    ClipManifest {
        clip_id: c.clip_id.clone(),
        fps: c.fps,
        n_frames: c.n_frames(),
        label: c.label,
        split: c.split,
        files: ClipFiles {
            frames: format!("{dir}/{FRAMES_FILE}"),
            features: format!("{dir}/{FEATURES_FILE}"),
        },
        state_trace: c.state_trace.clone(),
    }
}

pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    fs::create_dir_all(dir.join("clips"))?;
    let mut clips = Vec::with_capacity(ds.clips.len());
    for c in &ds.clips {
        let m = clip_manifest(c);
        fs::create_dir_all(dir.join("clips").join(&c.clip_id))?;
        let mut w = BufWriter::new(File::create(dir.join(&m.files.frames))?);
        write_ctb(&mut w, &c.frames)?;
        w.flush()?;
        let mut w = BufWriter::new(File::create(dir.join(&m.files.features))?);
        write_features(&mut w, &c.features)?;
        w.flush()?;
        clips.push(m);
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        meta: ds.meta.clone(),
        clips,
    };
    let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST);
    let file = File::open(&path).map_err(|e| Error::Format(format!("cannot open {}: {e}", path.display())))?;
    let m: DatasetManifest = serde_json::from_reader(BufReader::new(file))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported dataset format version {}", m.format_version)));
    }
    Ok(m)
}

/// Loads a dataset and checks every clip's shapes and label.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let mut clips = Vec::with_capacity(manifest.clips.len());
    for m in manifest.clips {
        let frames = read_ctb(&mut BufReader::new(File::open(dir.join(&m.files.frames))?))?;
        let features = read_features(BufReader::new(File::open(dir.join(&m.files.features))?))
            .map_err(|e| Error::Format(format!("{}: {e}", m.files.features)))?;
        if features.len() != m.n_frames {
            return Err(Error::Format(format!(
                "clip {} lists {} frames but has {} feature records",
                m.clip_id,
                m.n_frames,
                features.len()
            )));
        }
        let clip = ClipSample {
            clip_id: m.clip_id,
            fps: m.fps,
            frames,
            features,
            label: m.label,
            split: m.split,
            state_trace: m.state_trace,
        };
        clip.validate(&manifest.meta.rule)?;
        clips.push(clip);
    }
    Ok(Dataset {
        meta: manifest.meta,
        clips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = r#"{"t":0,"head":[1.5,-2,0.25],"body":[0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5,0.5],"hands":{"left":[0.1,0.2,0.3,0.4],"right":[0.5,0.5,0.6,0.6]},"objects":[[0.1,0.1,0.2,0.2]],"valid":true}"#;

    #[test]
    fn parses_a_valid_record() {
        let frames = read_features(GOOD.as_bytes()).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].head, [1.5, -2.0, 0.25]);
        assert_eq!(frames[0].objects.len(), 1);
    }

    #[test]
    fn short_body_names_field_and_line() {
        let bad = GOOD.replace("[0.5,0.5,0.5,0.5,", "[0.5,0.5,0.5,").replace("\"t\":0", "\"t\":1");
        let text = format!("{GOOD}\n{bad}\n");
        let err = read_features(text.as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, detail } => {
                assert_eq!(line, 2);
                assert!(detail.contains("body") && detail.contains("33"), "{detail}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_and_inverted_fields_rejected() {
        let no_hands = GOOD.replace(r#""hands":{"left":[0.1,0.2,0.3,0.4],"right":[0.5,0.5,0.6,0.6]},"#, "");
        let e = read_features(no_hands.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("hands"), "{e}");

        let inverted = GOOD.replace("[0.1,0.2,0.3,0.4]", "[0.3,0.2,0.1,0.4]");
        let e = read_features(inverted.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("hands.left"), "{e}");

        let skipped = GOOD.replace("\"t\":0", "\"t\":3");
        assert!(read_features(skipped.as_bytes()).is_err());
    }

    #[test]
    fn label_keywords() {
        let l: Label = serde_json::from_str("\"ready\"").unwrap();
        assert_eq!(l, Label::Ready);
        assert_eq!(serde_json::to_string(&Label::NotReady).unwrap(), "\"not_ready\"");
        assert!(serde_json::from_str::<Label>("\"maybe\"").is_err());
    }
}
