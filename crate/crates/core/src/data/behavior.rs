//! Latent driver behaviour and the per-frame feature emissions it drives.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::feature::ObjectBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorState {
    Attentive,
    MirrorCheck,
    PhoneText,
    PhoneCall,
    ReachObject,
    LeanRest,
}

impl BehaviorState {
    pub const ALL: [BehaviorState; 6] = [
        BehaviorState::Attentive,
        BehaviorState::MirrorCheck,
        BehaviorState::PhoneText,
        BehaviorState::PhoneCall,
        BehaviorState::ReachObject,
        BehaviorState::LeanRest,
    ];

    fn index(self) -> usize {
        self as usize
    }

    pub fn head(self) -> HeadRegime {
        match self {
            BehaviorState::MirrorCheck => HeadRegime::Mirror,
            BehaviorState::PhoneText => HeadRegime::Down,
            _ => HeadRegime::Road,
        }
    }

    pub fn hands(self) -> HandRegime {
        match self {
            BehaviorState::PhoneText => HandRegime::Phone,
            BehaviorState::PhoneCall => HandRegime::Call,
            BehaviorState::ReachObject => HandRegime::Reach,
            _ => HandRegime::Wheel,
        }
    }

    pub fn torso(self) -> TorsoRegime {
        match self {
            BehaviorState::ReachObject => TorsoRegime::Reaching,
            BehaviorState::LeanRest => TorsoRegime::Leaning,
            _ => TorsoRegime::Upright,
        }
    }

    /// Whether the head, hand and torso cues of this state satisfy the
    /// readiness rule on their own.
    pub fn cues(self) -> [bool; 3] {
        [
            self.head() == HeadRegime::Road,
            self.hands() == HandRegime::Wheel,
            self.torso() == TorsoRegime::Upright,
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadRegime {
    Road,
    Mirror,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HandRegime {
    Wheel,
    Phone,
    Call,
    Reach,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TorsoRegime {
    Upright,
    Leaning,
    Reaching,
}

/// Dwell-biased chain over [`BehaviorState`]. On leaving a distracted state
/// the driver returns to `Attentive` with probability `to_attentive`,
/// otherwise moves uniformly to another state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub stay: f64,
    pub to_attentive: f64,
    pub initial: [f64; 6],
}

impl Default for MarkovChain {
    fn default() -> Self {
        Self {
            stay: 0.92,
            to_attentive: 0.5,
            initial: [0.45, 0.11, 0.11, 0.11, 0.11, 0.11],
        }
    }
}

impl MarkovChain {
    pub fn row(&self, from: BehaviorState) -> [f64; 6] {
        let mut p = [0.0; 6];
        let leave = 1.0 - self.stay;
        p[from.index()] = self.stay;
        if from == BehaviorState::Attentive {
            for q in p.iter_mut().skip(1) {
                *q = leave / 5.0;
            }
        } else {
            p[0] = leave * self.to_attentive;
            let rest = leave * (1.0 - self.to_attentive) / 4.0;
            for (i, q) in p.iter_mut().enumerate() {
                if i != 0 && i != from.index() {
                    *q = rest;
                }
            }
        }
        p
    }

    fn draw<R: Rng + ?Sized>(p: &[f64; 6], rng: &mut R) -> BehaviorState {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, q) in p.iter().enumerate() {
            acc += q;
            if u < acc {
                return BehaviorState::ALL[i];
            }
        }
        BehaviorState::ALL[5]
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<BehaviorState> {
        let mut trace = Vec::with_capacity(n);
        let mut s = Self::draw(&self.initial, rng);
        for i in 0..n {
            if i > 0 {
                s = Self::draw(&self.row(s), rng);
            }
            trace.push(s);
        }
        trace
    }
}

/// Extracted features of one frame, in the units of the JSON-lines format.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// yaw, pitch, roll in degrees
    pub head: [f64; 3],
    /// 17 keypoints as (x, y) pairs in normalized image coordinates
    pub body: [f64; 34],
    pub left: ObjectBox,
    pub right: ObjectBox,
    pub objects: Vec<ObjectBox>,
    pub valid: bool,
}

/// COCO keypoint template of an upright driver, (x, y) with y pointing down.
pub const KEYPOINTS: [[f64; 2]; 17] = [
    [0.50, 0.22],
    [0.53, 0.19],
    [0.47, 0.19],
    [0.56, 0.21],
    [0.44, 0.21],
    [0.62, 0.40],
    [0.38, 0.40],
    [0.68, 0.58],
    [0.32, 0.58],
    [0.60, 0.70],
    [0.40, 0.70],
    [0.58, 0.82],
    [0.42, 0.82],
    [0.60, 0.93],
    [0.40, 0.93],
    [0.60, 0.98],
    [0.40, 0.98],
];

/// Keypoints 0..=10 (head, shoulders, arms) rotate with the torso.
const UPPER_BODY: usize = 11;

/// Normal draw redrawn until it lies within `±2.5σ` of the mean, so every
/// regime stays on its own side of the readiness thresholds.
pub fn truncated<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    let dist = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let z: f64 = dist.sample(rng);
        if z.abs() <= 2.5 {
            return mean + sd * z;
        }
    }
}

/// Per-clip constants that keep a behaviour consistent across its frames.
#[derive(Clone, Copy, Debug)]
pub struct ClipStyle {
    pub mirror_side: f64,
    pub lean_side: f64,
}

impl ClipStyle {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let side = |rng: &mut R| if rng.random::<bool>() { 1.0 } else { -1.0 };
        Self {
            mirror_side: side(rng),
            lean_side: side(rng),
        }
    }
}

fn hand_box(cx: f64, cy: f64, rng: &mut (impl Rng + ?Sized)) -> ObjectBox {
    let x = truncated(cx, 0.015, rng);
    let y = truncated(cy, 0.015, rng);
    let w = truncated(0.08, 0.004, rng) / 2.0;
    let h = truncated(0.10, 0.004, rng) / 2.0;
    clamp_box([x - w, y - h, x + w, y + h])
}

fn clamp_box(b: ObjectBox) -> ObjectBox {
    b.map(|v| v.clamp(0.0, 1.0))
}

fn centered(cx: f64, cy: f64, w: f64, h: f64) -> ObjectBox {
    clamp_box([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0])
}

/// Samples the features of one frame in `state`.
pub fn emit<R: Rng + ?Sized>(state: BehaviorState, style: ClipStyle, rng: &mut R) -> FrameFeatures {
    let head = match state.head() {
        HeadRegime::Road => [truncated(0.0, 6.0, rng), truncated(-2.0, 4.0, rng), truncated(0.0, 4.0, rng)],
        HeadRegime::Mirror => [
            style.mirror_side * truncated(45.0, 6.0, rng),
            truncated(-2.0, 4.0, rng),
            truncated(0.0, 4.0, rng),
        ],
        HeadRegime::Down => [truncated(0.0, 6.0, rng), truncated(-35.0, 6.0, rng), truncated(0.0, 4.0, rng)],
    };

    let (lc, rc) = match state.hands() {
        HandRegime::Wheel => ((0.38, 0.45), (0.62, 0.45)),
        HandRegime::Phone => ((0.44, 0.82), (0.56, 0.82)),
        HandRegime::Call => ((0.30, 0.12), (0.62, 0.85)),
        HandRegime::Reach => ((0.40, 0.84), (0.90, 0.55)),
    };
    let left = hand_box(lc.0, lc.1, rng);
    let right = hand_box(rc.0, rc.1, rng);

    let lean = match state.torso() {
        TorsoRegime::Upright => truncated(0.0, 3.0, rng),
        TorsoRegime::Leaning => style.lean_side * truncated(28.0, 4.0, rng),
        TorsoRegime::Reaching => truncated(32.0, 4.0, rng),
    };
    let (sin, cos) = lean.to_radians().sin_cos();
    let hip = [0.5 * (KEYPOINTS[11][0] + KEYPOINTS[12][0]), 0.5 * (KEYPOINTS[11][1] + KEYPOINTS[12][1])];
    let mut body = [0.0; 34];
    for (k, p) in KEYPOINTS.iter().enumerate() {
        let (mut x, mut y) = (p[0], p[1]);
        if k < UPPER_BODY {
            let (dx, dy) = (x - hip[0], y - hip[1]);
            x = hip[0] + dx * cos - dy * sin;
            y = hip[1] + dx * sin + dy * cos;
        }
        body[2 * k] = (x + truncated(0.0, 0.004, rng)).clamp(0.0, 1.0);
        body[2 * k + 1] = (y + truncated(0.0, 0.004, rng)).clamp(0.0, 1.0);
    }

    let objects = match state {
        BehaviorState::PhoneText => vec![centered(0.5, 0.80, 0.08, 0.12)],
        BehaviorState::PhoneCall => vec![centered(0.30, 0.14, 0.06, 0.10)],
        BehaviorState::ReachObject => vec![centered(0.88, 0.52, 0.10, 0.10)],
        _ => Vec::new(),
    };

    FrameFeatures {
        head,
        body,
        left,
        right,
        objects,
        valid: true,
    }
}
