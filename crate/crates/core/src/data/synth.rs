//! Deterministic synthetic dataset generation.

use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::behavior::{emit, ClipStyle, MarkovChain};
use super::dataset::{ClipSample, Dataset, DatasetMeta, Split};
use super::render::{render_frame, CHANNELS, VIEWS};
use super::rule::{Label, RuleConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub clips: usize,
    pub seed: u64,
    pub frames: usize,
    pub frame_size: usize,
    pub fps: u32,
    pub test_fraction: f64,
    pub noise: f64,
    pub chain: MarkovChain,
    pub rule: RuleConfig,
    /// Attempts per clip before giving up on its target label.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips: 600,
            seed: 42,
            frames: 16,
            frame_size: 32,
            fps: 10,
            test_fraction: 0.25,
            noise: 0.02,
            chain: MarkovChain::default(),
            rule: RuleConfig::default(),
            max_attempts: 10_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips < 2 {
            return Err(Error::Config(format!("need at least 2 clips, got {}", self.clips)));
        }
        if self.frames < self.rule.window {
            return Err(Error::Config(format!(
                "clips of {} frames are shorter than the {}-frame readiness window",
                self.frames, self.rule.window
            )));
        }
        if self.frame_size < 2 {
            return Err(Error::Config("frames must be at least 2×2 pixels".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test fraction {} outside [0, 1)", self.test_fraction)));
        }
        Ok(())
    }

    fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            seed: self.seed,
            fps: self.fps,
            frames: self.frames,
            frame_size: self.frame_size,
            views: VIEWS,
            rule: self.rule.clone(),
        }
    }
}

pub fn clip_id(index: usize) -> String {
    format!("clip_{index:05}")
}

/// Generates clip `index`. Even indices are drawn until they are ready,
/// odd ones until they are not, each from its own random stream, so the
/// result does not depend on which other clips are generated.
pub fn generate_clip(cfg: &SynthConfig, index: usize) -> Result<ClipSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let target = if index.is_multiple_of(2) { Label::Ready } else { Label::NotReady };
    for _ in 0..cfg.max_attempts {
        let trace = cfg.chain.sample(cfg.frames, &mut rng);
        let style = ClipStyle::sample(&mut rng);
        let features: Vec<_> = trace.iter().map(|&s| emit(s, style, &mut rng)).collect();
        if cfg.rule.label(&features)? != target {
            continue;
        }
        let n = cfg.frames;
        let plane = cfg.frame_size * cfg.frame_size;
        let mut pixels = vec![0.0; VIEWS * n * CHANNELS * plane];
        for (t, f) in features.iter().enumerate() {
            let img = render_frame(f, cfg.rule.wheel, cfg.frame_size, cfg.noise, &mut rng);
            for v in 0..VIEWS {
                let dst = (v * n + t) * CHANNELS * plane;
                let src = v * CHANNELS * plane;
                pixels[dst..dst + CHANNELS * plane].copy_from_slice(&img[src..src + CHANNELS * plane]);
            }
        }
        let frames = Tensor::new(&[VIEWS, n, CHANNELS, cfg.frame_size, cfg.frame_size], pixels)?;
        return Ok(ClipSample {
            clip_id: clip_id(index),
            fps: cfg.fps,
            frames,
            features,
            label: target,
            split: Split::Train,
            state_trace: trace,
        });
    }
    Err(Error::Config(format!(
        "clip {index}: no {} sample within {} attempts",
        target.as_str(),
        cfg.max_attempts
    )))
}

/// Stratified, seeded train/test assignment: the same fraction of each
/// class goes to the test split.
fn assign_splits(clips: &mut [ClipSample], fraction: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    for label in [Label::NotReady, Label::Ready] {
        let mut idx: Vec<usize> = (0..clips.len()).filter(|&i| clips[i].label == label).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        let n_test = (idx.len() as f64 * fraction).round() as usize;
        for (k, &i) in idx.iter().enumerate() {
            clips[i].split = if k < n_test { Split::Test } else { Split::Train };
        }
    }
}

const SPLIT_SALT: u64 = 0x0005_eed5_0000_7e57;

/// Generates the whole dataset with up to `jobs` worker threads; the output
/// is identical for any job count.
pub fn generate_dataset(cfg: &SynthConfig, jobs: usize) -> Result<Dataset> {
    cfg.validate()?;
    let jobs = jobs.clamp(1, cfg.clips);
    let mut clips: Vec<Option<ClipSample>> = vec![None; cfg.clips];
    let chunk = cfg.clips.div_ceil(jobs);
    thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = clips
            .chunks_mut(chunk)
            .enumerate()
            .map(|(c, slot)| {
                scope.spawn(move || -> Result<()> {
                    for (k, s) in slot.iter_mut().enumerate() {
                        *s = Some(generate_clip(cfg, c * chunk + k)?);
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().map_err(|_| Error::State("generator thread panicked".into()))??;
        }
        Ok(())
    })?;
    let mut clips: Vec<ClipSample> = clips.into_iter().map(|c| c.expect("every clip generated")).collect();
    assign_splits(&mut clips, cfg.test_fraction, cfg.seed);
    Ok(Dataset { meta: cfg.meta(), clips })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::behavior::BehaviorState;
    use crate::data::format::{read_dataset, write_dataset};

    fn small(clips: usize) -> SynthConfig {
        SynthConfig {
            clips,
            frame_size: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes_any_job_count() {
        let cfg = small(12);
        let a = generate_dataset(&cfg, 1).unwrap();
        let b = generate_dataset(&cfg, 4).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SynthConfig { seed: 43, ..cfg }, 1).unwrap();
        assert_ne!(a.clips[0].frames, c.clips[0].frames);
    }

    #[test]
    fn clip_does_not_depend_on_dataset_size() {
        let a = generate_dataset(&small(6), 1).unwrap();
        let b = generate_clip(&small(100), 5).unwrap();
        assert_eq!(a.clips[5].features, b.features);
        assert_eq!(a.clips[5].frames, b.frames);
    }

    #[test]
    fn balanced_labels_and_stratified_split() {
        let ds = generate_dataset(&small(200), 2).unwrap();
        let f = ds.ready_fraction();
        assert!((0.48..=0.52).contains(&f), "{f}");
        let test = ds.split_indices(Split::Test);
        assert_eq!(test.len(), 50);
        let ready = test.iter().filter(|&&i| ds.clips[i].label == Label::Ready).count();
        assert_eq!(ready, 25);
    }

    #[test]
    fn stored_labels_agree_with_rule() {
        let ds = generate_dataset(&small(100), 2).unwrap();
        for c in &ds.clips {
            assert_eq!(ds.meta.rule.label(&c.features).unwrap(), c.label, "{}", c.clip_id);
            c.validate(&ds.meta.rule).unwrap();
        }
    }

    #[test]
    fn clips_that_stay_attentive_are_ready() {
        let ds = generate_dataset(&small(100), 2).unwrap();
        let mut seen = 0;
        for c in &ds.clips {
            if c.state_trace.iter().all(|&s| s == BehaviorState::Attentive) {
                seen += 1;
                assert_eq!(c.label, Label::Ready);
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn disk_round_trip_is_exact() {
        let ds = generate_dataset(&small(6), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        assert_eq!(read_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate_dataset(&SynthConfig { clips: 1, ..small(1) }, 1).is_err());
        assert!(generate_dataset(&SynthConfig { frames: 8, ..small(4) }, 1).is_err());
        assert!(generate_dataset(&SynthConfig { test_fraction: 1.0, ..small(4) }, 1).is_err());
    }
}
