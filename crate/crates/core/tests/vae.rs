use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rvqmotion::checks::{check_f32, check_f64, VaeObjective};
use rvqmotion::rvq::CommitmentMode;
use rvqmotion::tensor::{Tape, Tensor};
use rvqmotion::vae::{Normalizer, VaeConfig, VaeModel, VaeTrainConfig, VaeTrainer};

fn toy_config(levels: usize) -> VaeConfig {
    VaeConfig {
        levels,
        channels: 4,
        dilation: 1,
        codebook_size: 4,
        code_dim: 3,
        depth: 2,
        reset_every: 0,
        ..VaeConfig::desk()
    }
}

fn random_clip(frames: usize, width: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let data = (0..frames * width).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(vec![frames, width], data).unwrap()
}

#[test]
fn encoder_and_decoder_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = VaeConfig {
        channels: 8,
        code_dim: 6,
        codebook_size: 8,
        ..VaeConfig::desk()
    };
    let model = VaeModel::<f32>::new(cfg, &mut rng).unwrap();
    for (frames, rows) in [(32, 4), (196, 24), (8, 1), (15, 1)] {
        let clip = random_clip(frames, 15, &mut rng).cast::<f32>();
        let z = model.encode_normalized(&clip).unwrap();
        assert_eq!(z.shape(), &[rows, 6], "T={frames}");
        let res = model.tokenize(&clip).unwrap();
        assert_eq!((res.codes.rows(), res.codes.depth()), (rows, 8));
        let back = model.reconstruct(&res.codes).unwrap();
        assert_eq!(back.shape(), &[rows * 8, 15]);
        assert!(back.all_finite());
    }
    assert!(model.encode_normalized(&random_clip(7, 15, &mut rng).cast()).is_err());
    assert!(model.encode_normalized(&random_clip(16, 14, &mut rng).cast()).is_err());
}

#[test]
fn full_loss_gradient_two_frame_single_level() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = VaeModel::<f64>::new(toy_config(1), &mut rng).unwrap();
    let f = VaeObjective::new(model, random_clip(2, 15, &mut rng)).unwrap();
    let report = check_f64(&f, &f.params()).unwrap();
    assert!(report.passed(), "{report}");
}

#[test]
fn full_loss_gradient_four_frames_both_commitment_modes() {
    for mode in [CommitmentMode::Cumulative, CommitmentMode::PerCode] {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = VaeConfig {
            commitment: mode,
            beta_commit: 0.5,
            ..toy_config(2)
        };
        let model = VaeModel::<f64>::new(cfg, &mut rng).unwrap();
        let f = VaeObjective::new(model, random_clip(4, 15, &mut rng)).unwrap();
        let report = check_f64(&f, &f.params()).unwrap();
        assert!(report.passed(), "{mode:?}\n{report}");
        let report = check_f32(&f, &f.params()).unwrap();
        assert!(report.passed(), "{mode:?} f32\n{report}");
    }
}

#[test]
fn normalizer_round_trip_and_unit_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut clips: Vec<Tensor<f64>> = (0..3).map(|i| random_clip(10 + i, 4, &mut rng)).collect();
    // a constant column keeps unit scale
    for c in &mut clips {
        for row in c.data_mut().chunks_mut(4) {
            row[2] = 7.0;
        }
    }
    let norm = Normalizer::fit(&clips).unwrap();
    assert_eq!(norm.std[2], 1.0);
    let applied: Vec<_> = clips.iter().map(|c| norm.apply(c).unwrap()).collect();
    let refit = Normalizer::fit(&applied).unwrap();
    for j in [0, 1, 3] {
        assert!(refit.mean[j].abs() < 1e-12 && (refit.std[j] - 1.0).abs() < 1e-12);
    }
    for (c, a) in clips.iter().zip(&applied) {
        assert!(norm.invert(a).unwrap().max_abs_diff(c) < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = VaeModel::<f32>::new(toy_config(2), &mut rng).unwrap();
    model.normalizer = Normalizer {
        mean: (0..15).map(|i| i as f64 * 0.1).collect(),
        std: (0..15).map(|i| 1.0 + i as f64).collect(),
    };
    let bytes = model.to_container().unwrap().to_bytes();
    let back = VaeModel::<f32>::from_container(&rvqmotion::io::Container::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.normalizer, model.normalizer);
    for ((na, a), (nb, b)) in model.params.iter().zip(back.params.iter()) {
        assert_eq!(na, nb);
        assert!(a.bit_eq(b));
    }
    assert!(back.codebook.entries().bit_eq(model.codebook.entries()));
    assert_eq!(back.to_container().unwrap().to_bytes(), bytes);
}

#[test]
fn training_reduces_loss_and_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = VaeConfig {
            channels: 16,
            code_dim: 8,
            codebook_size: 16,
            depth: 4,
            levels: 2,
            ..VaeConfig::desk()
        };
        let model = VaeModel::<f32>::new(cfg, &mut rng).unwrap();
        let clips: Vec<Tensor<f32>> = (0..2)
            .map(|_| {
                // smooth curves, so the kinematic terms are meaningful
                let phase: f64 = rng.random_range(0.0..6.0);
                let data = (0..16 * 15).map(|i| ((i / 15) as f64 * 0.3 + phase + (i % 15) as f64).sin()).collect::<Vec<_>>();
                Tensor::from_f64(&[16, 15], &data).unwrap()
            })
            .collect();
        let train = VaeTrainConfig {
            steps: 60,
            batch_size: 2,
            crop_len: 16,
            lr: 3e-3,
            warmup_steps: 0,
            hold_steps: 60,
            seed: 9,
            ..Default::default()
        };
        let mut trainer = VaeTrainer::new(model, train).unwrap();
        let mut losses = vec![];
        trainer.fit(&clips, |r| losses.push(r.recon_loss)).unwrap();
        (losses, trainer.model.to_container().unwrap().to_bytes())
    };
    let (losses, bytes) = run();
    assert!(losses.iter().all(|l| l.is_finite()));
    let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = losses[losses.len() - 5..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "recon {head} -> {tail}");
    let (losses2, bytes2) = run();
    assert_eq!(losses, losses2);
    assert_eq!(bytes, bytes2);
}

#[test]
fn forward_values_match_between_tape_and_inference_paths() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = VaeModel::<f64>::new(toy_config(2), &mut rng).unwrap();
    let clip = random_clip(8, 15, &mut rng);
    let mut tape = Tape::new();
    let p = model.params.bind(&mut tape, false);
    let mut q = model.live_quantizer();
    let out = model.forward_with(&mut tape, &p, &clip, &mut q).unwrap();
    let res = model.tokenize(&clip).unwrap();
    assert_eq!(out.quantization.codes, res.codes);
    let recon = model.reconstruct(&res.codes).unwrap();
    assert!(recon.bit_eq(tape.value(out.reconstruction)));
}
