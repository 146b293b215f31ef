//! Glyph rendering of frame features into three camera views.
//!
//! View 0 shows the head as a bar displaced by yaw and pitch and rotated by
//! roll. View 1 shows body keypoints as dots with the torso axis. View 2
//! shows hand boxes, the wheel outline, and detected objects.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::behavior::FrameFeatures;
use super::rule::Region;
use crate::feature::ObjectBox;

pub const VIEWS: usize = 3;
pub const CHANNELS: usize = 3;

enum Shape {
    Disk { cx: f64, cy: f64, r: f64 },
    Segment { a: (f64, f64), b: (f64, f64), half_width: f64 },
    Rect(ObjectBox),
    Outline { rect: Region, width: f64 },
}

impl Shape {
    fn covers(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { cx, cy, r } => (x - cx).powi(2) + (y - cy).powi(2) <= r * r,
            Shape::Segment { a, b, half_width } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let (px, py) = (a.0 + t * dx - x, a.1 + t * dy - y);
                px * px + py * py <= half_width * half_width
            }
            Shape::Rect(r) => x >= r[0] && x <= r[2] && y >= r[1] && y <= r[3],
            Shape::Outline { rect, width } => {
                let outer = x >= rect.x0 - width && x <= rect.x1 + width && y >= rect.y0 - width && y <= rect.y1 + width;
                let inner = x > rect.x0 + width && x < rect.x1 - width && y > rect.y0 + width && y < rect.y1 - width;
                outer && !inner
            }
        }
    }
}

/// Adds `shape` to a `size × size` channel with 2×2 supersampled coverage.
/// Pixel `(i, j)` spans x in `[i, i+1)/size` and y in `[j, j+1)/size`.
fn draw(channel: &mut [f64], size: usize, shape: &Shape) {
    let s = size as f64;
    for i in 0..size {
        for j in 0..size {
            let mut hits = 0;
            for (ox, oy) in [(0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)] {
                if shape.covers((i as f64 + ox) / s, (j as f64 + oy) / s) {
                    hits += 1;
                }
            }
            let px = &mut channel[i * size + j];
            *px = px.max(hits as f64 / 4.0);
        }
    }
}

fn head_view(f: &FrameFeatures) -> [Vec<Shape>; CHANNELS] {
    let [yaw, pitch, roll] = f.head;
    let cx = 0.5 + 0.4 * (yaw / 60.0).clamp(-1.0, 1.0);
    let cy = 0.5 - 0.4 * (pitch / 60.0).clamp(-1.0, 1.0);
    let (s, c) = roll.to_radians().sin_cos();
    let half = 0.25;
    let bar = Shape::Segment {
        a: (cx - half * c, cy - half * s),
        b: (cx + half * c, cy + half * s),
        half_width: 0.07,
    };
    [vec![bar], vec![Shape::Disk { cx, cy, r: 0.1 }], Vec::new()]
}

fn body_view(f: &FrameFeatures) -> [Vec<Shape>; CHANNELS] {
    let kp = |k: usize| (f.body[2 * k], f.body[2 * k + 1]);
    let dots = (0..17)
        .map(|k| {
            let (cx, cy) = kp(k);
            Shape::Disk { cx, cy, r: 0.05 }
        })
        .collect();
    let mid = |a: usize, b: usize| {
        let (p, q) = (kp(a), kp(b));
        (0.5 * (p.0 + q.0), 0.5 * (p.1 + q.1))
    };
    let torso = Shape::Segment {
        a: mid(5, 6),
        b: mid(11, 12),
        half_width: 0.06,
    };
    [dots, vec![torso], Vec::new()]
}

fn hand_view(f: &FrameFeatures, wheel: Region) -> [Vec<Shape>; CHANNELS] {
    let hands = vec![Shape::Rect(f.left), Shape::Rect(f.right)];
    let objects = f.objects.iter().map(|&b| Shape::Rect(b)).collect();
    let outline = Shape::Outline { rect: wheel, width: 0.03 };
    [hands, objects, vec![outline]]
}

/// Renders every view of one frame as `[V, 3, W, H]` with additive
/// Gaussian pixel noise of standard deviation `noise`.
pub fn render_frame<R: Rng + ?Sized>(f: &FrameFeatures, wheel: Region, size: usize, noise: f64, rng: &mut R) -> Vec<f64> {
    let plane = size * size;
    let mut out = vec![0.0; VIEWS * CHANNELS * plane];
    let views = [head_view(f), body_view(f), hand_view(f, wheel)];
    for (v, channels) in views.iter().enumerate() {
        for (c, shapes) in channels.iter().enumerate() {
            let start = (v * CHANNELS + c) * plane;
            let channel = &mut out[start..start + plane];
            for shape in shapes {
                draw(channel, size, shape);
            }
        }
    }
    if noise > 0.0 {
        let dist = Normal::new(0.0, noise).expect("positive noise");
        for px in &mut out {
            *px += dist.sample(rng);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::data::behavior::{emit, BehaviorState, ClipStyle};
    use crate::data::rule::RuleConfig;

    fn frame(state: BehaviorState, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let style = ClipStyle { mirror_side: 1.0, lean_side: 1.0 };
        let f = emit(state, style, &mut rng);
        render_frame(&f, RuleConfig::default().wheel, 16, 0.0, &mut rng)
    }

    fn view(img: &[f64], v: usize) -> &[f64] {
        let n = CHANNELS * 256;
        &img[v * n..(v + 1) * n]
    }

    fn diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
    }

    #[test]
    fn coverage_is_bounded() {
        let img = frame(BehaviorState::PhoneText, 1);
        assert_eq!(img.len(), 3 * 3 * 256);
        assert!(img.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!(img.iter().any(|&p| p > 0.9));
    }

    #[test]
    fn each_view_reflects_its_cue() {
        let base = frame(BehaviorState::Attentive, 2);
        let mirror = frame(BehaviorState::MirrorCheck, 2);
        let lean = frame(BehaviorState::LeanRest, 2);
        let call = frame(BehaviorState::PhoneCall, 2);
        assert!(diff(view(&base, 0), view(&mirror, 0)) > 10.0);
        assert!(diff(view(&base, 1), view(&lean, 1)) > 10.0);
        assert!(diff(view(&base, 2), view(&call, 2)) > 5.0);
    }

    #[test]
    fn disk_coverage_counts_subpixels() {
        let mut ch = vec![0.0; 4];
        draw(&mut ch, 2, &Shape::Disk { cx: 0.125, cy: 0.125, r: 0.01 });
        assert_eq!(ch, vec![0.25, 0.0, 0.0, 0.0]);
    }
}
