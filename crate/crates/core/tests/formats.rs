use std::io::Cursor;

use drivernet::data::{generate_dataset, read_dataset, read_features, write_dataset, write_features, Split, SynthConfig};
use drivernet::tensor::{read_ctb, write_ctb};
use drivernet::train::checkpoint::{read_checkpoint, write_checkpoint};
use drivernet::train::trainer::logits;
use drivernet::train::{load_checkpoint, save_checkpoint, train, TrainConfig};
use drivernet::{ModelConfig, Network, Tensor};
use proptest::prelude::*;

fn hundred_clips() -> drivernet::data::Dataset {
    let cfg = SynthConfig { clips: 100, seed: 2024, frame_size: 8, ..SynthConfig::default() };
    generate_dataset(&cfg, 2).unwrap()
}

#[test]
fn hundred_clips_survive_both_formats() {
    let ds = hundred_clips();
    for clip in &ds.clips {
        let mut buf = Vec::new();
        write_features(&mut buf, &clip.features).unwrap();
        assert_eq!(read_features(Cursor::new(&buf)).unwrap(), clip.features, "{}", clip.clip_id);

        let mut buf = Vec::new();
        write_ctb(&mut buf, &clip.frames).unwrap();
        let back = read_ctb(&mut Cursor::new(&buf)).unwrap();
        assert_eq!(back.shape(), clip.frames.shape());
        assert!(back.data().iter().zip(clip.frames.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    assert_eq!(read_dataset(dir.path()).unwrap(), ds);
}

#[test]
fn checkpoint_reload_reproduces_logits_bit_for_bit() {
    let ds = generate_dataset(&SynthConfig { clips: 24, seed: 5, frame_size: 8, ..SynthConfig::default() }, 1).unwrap();
    let train_idx = ds.split_indices(Split::Train);
    let test_idx = ds.split_indices(Split::Test);
    for cfg in [ModelConfig::compact(), ModelConfig::compact().with_fusion(drivernet::FusionStrategy::Caf)] {
        let mut net = Network::new(cfg.with_seed(9)).unwrap();
        train(&mut net, &ds, &train_idx, &TrainConfig { epochs: 1, seed: 9, ..TrainConfig::default() }).unwrap();
        let before = logits(&net, &ds, &test_idx).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &net).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let after = logits(&loaded, &ds, &test_idx).unwrap();
        assert!(before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()));

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &loaded).unwrap();
        assert_eq!(buf, std::fs::read(&path).unwrap());
        assert!(read_checkpoint(&mut Cursor::new(&buf[..buf.len() - 1])).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ctb_round_trips_arbitrary_tensors(
        shape in proptest::collection::vec(1usize..5, 0..4),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| f64::from_bits(rng.random::<u64>() >> 2)).collect();
        let t = Tensor::new(&shape, data).unwrap();
        let mut buf = Vec::new();
        write_ctb(&mut buf, &t).unwrap();
        let back = read_ctb(&mut Cursor::new(&buf)).unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
