//! The labelling function: readiness over the final window of a clip.

use serde::{Deserialize, Serialize};

use super::behavior::FrameFeatures;
use crate::error::{Error, Result};
use crate::feature::ObjectBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NotReady,
    Ready,
}

impl Label {
    /// Class index used by the classifier; "ready" is the positive class 1.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        if i == 1 {
            Label::Ready
        } else {
            Label::NotReady
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Ready => "ready",
            Label::NotReady => "not_ready",
        }
    }
}

/// Normalized rectangle in which a hand-box centre counts as on the wheel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Region {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleConfig {
    pub window: usize,
    pub max_yaw: f64,
    pub max_pitch: f64,
    pub max_lean: f64,
    pub min_fraction: f64,
    pub wheel: Region,
}

impl Default for RuleConfig {
    fn default() -> Self {
        Self {
            window: 16,
            max_yaw: 20.0,
            max_pitch: 15.0,
            max_lean: 15.0,
            min_fraction: 0.8,
            wheel: Region {
                x0: 0.28,
                y0: 0.30,
                x1: 0.72,
                y1: 0.62,
            },
        }
    }
}

/// Torso lean in degrees: angle of the hip-mid to shoulder-mid segment from
/// vertical, positive towards +x, with image y pointing down.
pub fn torso_lean(body: &[f64; 34]) -> f64 {
    let sx = 0.5 * (body[10] + body[12]);
    let sy = 0.5 * (body[11] + body[13]);
    let hx = 0.5 * (body[22] + body[24]);
    let hy = 0.5 * (body[23] + body[25]);
    (sx - hx).atan2(hy - sy).to_degrees()
}

fn centre(b: &ObjectBox) -> (f64, f64) {
    (0.5 * (b[0] + b[2]), 0.5 * (b[1] + b[3]))
}

impl RuleConfig {
    pub fn head_ok(&self, f: &FrameFeatures) -> bool {
        f.head[0].abs() <= self.max_yaw && f.head[1].abs() <= self.max_pitch
    }

    pub fn hands_ok(&self, f: &FrameFeatures) -> bool {
        [f.left, f.right].iter().any(|b| {
            let (x, y) = centre(b);
            self.wheel.contains(x, y)
        })
    }

    pub fn torso_ok(&self, f: &FrameFeatures) -> bool {
        torso_lean(&f.body).abs() <= self.max_lean
    }

    /// Fraction of frames in the final window meeting each cue, in the
    /// order head, hands, torso.
    pub fn cue_fractions(&self, frames: &[FrameFeatures]) -> Result<[f64; 3]> {
        if self.window == 0 || frames.len() < self.window {
            return Err(Error::Contract(format!(
                "readiness needs at least {} frames, clip has {}",
                self.window.max(1),
                frames.len()
            )));
        }
        let tail = &frames[frames.len() - self.window..];
        let frac = |ok: &dyn Fn(&FrameFeatures) -> bool| tail.iter().filter(|f| ok(f)).count() as f64 / self.window as f64;
        Ok([
            frac(&|f| self.head_ok(f)),
            frac(&|f| self.hands_ok(f)),
            frac(&|f| self.torso_ok(f)),
        ])
    }

    /// Ready iff every cue holds in at least `min_fraction` of the window.
    pub fn label(&self, frames: &[FrameFeatures]) -> Result<Label> {
        let fr = self.cue_fractions(frames)?;
        // fractions are k/window; compare with a little slack so 0.8 is inclusive
        let ok = fr.iter().all(|&f| f >= self.min_fraction - 1e-12);
        Ok(if ok { Label::Ready } else { Label::NotReady })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::behavior::KEYPOINTS;

    fn nominal() -> FrameFeatures {
        let mut body = [0.0; 34];
        for (k, p) in KEYPOINTS.iter().enumerate() {
            body[2 * k] = p[0];
            body[2 * k + 1] = p[1];
        }
        FrameFeatures {
            head: [0.0, 0.0, 0.0],
            body,
            left: [0.34, 0.40, 0.42, 0.50],
            right: [0.58, 0.40, 0.66, 0.50],
            objects: vec![],
            valid: true,
        }
    }

    fn lean(f: &mut FrameFeatures, deg: f64) {
        let (s, c) = deg.to_radians().sin_cos();
        let (hx, hy) = (0.5, 0.82);
        for k in 0..11 {
            let (dx, dy) = (f.body[2 * k] - hx, f.body[2 * k + 1] - hy);
            f.body[2 * k] = hx + dx * c - dy * s;
            f.body[2 * k + 1] = hy + dx * s + dy * c;
        }
    }

    #[test]
    fn nominal_window_is_ready() {
        let rule = RuleConfig::default();
        assert!(torso_lean(&nominal().body).abs() < 1e-12);
        assert_eq!(rule.label(&vec![nominal(); 16]).unwrap(), Label::Ready);
    }

    #[test]
    fn sideways_gaze_is_not_ready() {
        let rule = RuleConfig::default();
        let mut f = nominal();
        f.head[0] = 90.0;
        assert_eq!(rule.label(&vec![f; 16]).unwrap(), Label::NotReady);
    }

    #[test]
    fn eighty_percent_boundary_is_inclusive() {
        let rule = RuleConfig {
            window: 5,
            ..RuleConfig::default()
        };
        let mut bad = nominal();
        bad.head[1] = -40.0;
        bad.left = [0.0, 0.9, 0.1, 1.0];
        bad.right = [0.9, 0.9, 1.0, 1.0];
        lean(&mut bad, 30.0);
        let mut frames = vec![nominal(); 4];
        frames.insert(2, bad.clone());
        assert_eq!(rule.cue_fractions(&frames).unwrap(), [0.8, 0.8, 0.8]);
        assert_eq!(rule.label(&frames).unwrap(), Label::Ready);
        frames[0] = bad;
        assert_eq!(rule.label(&frames).unwrap(), Label::NotReady);
    }

    #[test]
    fn each_cue_alone_can_fail_the_rule() {
        let rule = RuleConfig::default();
        let mut f = nominal();
        f.left = [0.0, 0.0, 0.05, 0.05];
        f.right = [0.95, 0.95, 1.0, 1.0];
        assert_eq!(rule.label(&vec![f; 16]).unwrap(), Label::NotReady);
        let mut f = nominal();
        lean(&mut f, -20.0);
        assert!((torso_lean(&f.body) + 20.0).abs() < 1e-9);
        assert_eq!(rule.label(&vec![f; 16]).unwrap(), Label::NotReady);
        let mut f = nominal();
        f.right = [0.9, 0.9, 1.0, 1.0];
        assert_eq!(rule.label(&vec![f; 16]).unwrap(), Label::Ready);
    }

    #[test]
    fn short_clip_is_rejected() {
        let rule = RuleConfig::default();
        assert!(rule.label(&vec![nominal(); 15]).is_err());
    }
}
