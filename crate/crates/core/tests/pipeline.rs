use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rvqmotion::data::{synth_generate, SyntheticTask, TEMPLATES};
use rvqmotion::pipeline::{
    bench_attention, bench_csv, code_usage, default_sweep, encode_dataset, eval_model, exact_match_fraction, fit_vae, mpjpe,
    read_code_archive, recon_smooth_l1, residual_curve, write_code_archive, BenchPoint,
};
use rvqmotion::rvq::CodeMatrix;
use rvqmotion::sampling::GenerationConfig;
use rvqmotion::tensor::Tensor;
use rvqmotion::vae::{Normalizer, SkeletonSpec, VaeConfig, VaeModel, VaeTrainConfig};

fn small_vae() -> VaeConfig {
    VaeConfig {
        levels: 2,
        channels: 16,
        dilation: 2,
        codebook_size: 16,
        code_dim: 8,
        depth: 4,
        ..VaeConfig::desk()
    }
}

fn motions(count: usize) -> Vec<Tensor<f32>> {
    (0..count)
        .map(|i| synth_generate(&SyntheticTask::new(TEMPLATES[i % TEMPLATES.len()].id, i as u64)).unwrap().motion)
        .collect()
}

fn untrained(seed: u64) -> VaeModel<f32> {
    let mut model = VaeModel::new(small_vae(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    model.normalizer = Normalizer::fit(&motions(4)).unwrap();
    model
}

#[test]
fn metrics_vanish_on_identical_inputs() {
    let m = &motions(1)[0];
    let skeleton = SkeletonSpec::synthetic();
    assert_eq!(recon_smooth_l1(m, m, &Normalizer::identity(15)).unwrap(), 0.0);
    assert_eq!(mpjpe(m, m, &skeleton).unwrap(), 0.0);

    // one joint moved by a fixed offset: every frame contributes |offset| / joints
    let mut shifted = m.clone();
    let (frames, d) = shifted.dims2().unwrap();
    for f in 0..frames {
        shifted.data_mut()[f * d + 6] += 0.3;
    }
    assert!((mpjpe(m, &shifted, &skeleton).unwrap() - 0.3 / 5.0).abs() < 1e-6);
    // smooth-L1 below the threshold is quadratic: 0.5·0.3² on one of 15 features
    let want = 0.5 * 0.09 / 15.0;
    let got = recon_smooth_l1(m, &shifted, &Normalizer::identity(15)).unwrap();
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn reconstruction_shorter_than_target_is_compared_on_its_frames() {
    let m = &motions(1)[0];
    let cut = Tensor::new(vec![8, 15], m.data()[..8 * 15].to_vec()).unwrap();
    assert_eq!(mpjpe(m, &cut, &SkeletonSpec::synthetic()).unwrap(), 0.0);
    assert!(mpjpe(&cut, m, &SkeletonSpec::synthetic()).is_err());
}

#[test]
fn code_statistics() {
    let a = CodeMatrix::new(2, 2, vec![0, 1, 1, 3]).unwrap();
    let b = CodeMatrix::new(1, 2, vec![0, 1]).unwrap();
    assert_eq!(code_usage(&[a.clone(), b.clone()], 8), 3.0 / 8.0);
    assert_eq!(exact_match_fraction(&[a.clone(), b.clone()], &[a.clone(), a.clone()]), 0.5);
    assert_eq!(exact_match_fraction(&[], &[]), 0.0);
}

#[test]
fn residual_curve_is_non_increasing_for_a_trained_codebook() {
    let data = motions(4);
    let train = VaeTrainConfig {
        steps: 30,
        batch_size: 4,
        crop_len: 32,
        lr: 1e-3,
        warmup_steps: 5,
        hold_steps: 15,
        seed: 2,
        ..Default::default()
    };
    let model = fit_vae(&data, small_vae(), train, |_| {}).unwrap();
    let results = encode_dataset(&model, &data, 1).unwrap();
    let curve = residual_curve(&results);
    assert_eq!(curve.len(), 4);
    // averages of per-frame curves; each frame's curve may rise, so compare
    // against the start only
    assert!(curve.iter().all(|&v| v <= curve[0] + 1e-9), "{curve:?}");
    assert!(curve[3] < curve[0]);

    let report = eval_model(&model, None, &data_clips(&data), &GenerationConfig::default(), 2).unwrap();
    assert!(report.is_valid());
    assert_eq!(report.clips, 4);
    assert!(report.generation.is_none());
    assert_eq!(report.residual_curve, curve);
    assert!(report.to_text().contains("recon_smooth_l1="));
}

fn data_clips(data: &[Tensor<f32>]) -> Vec<rvqmotion::data::Clip> {
    data.iter()
        .map(|m| rvqmotion::data::Clip {
            motion: m.clone(),
            embedding: Tensor::zeros(&[4]),
            caption: String::new(),
        })
        .collect()
}

#[test]
fn encoding_does_not_depend_on_worker_count() {
    let model = untrained(3);
    let data = motions(7);
    let one = encode_dataset(&model, &data, 1).unwrap();
    for workers in [2, 3, 8, 32] {
        let many = encode_dataset(&model, &data, workers).unwrap();
        assert_eq!(many.len(), one.len());
        for (a, b) in one.iter().zip(&many) {
            assert_eq!(a.codes, b.codes);
            assert!(a.quantized.bit_eq(&b.quantized));
        }
    }
}

#[test]
fn code_archive_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("codes.ckpt");
    let model = untrained(4);
    let codes: Vec<CodeMatrix> = encode_dataset(&model, &motions(3), 2).unwrap().into_iter().map(|r| r.codes).collect();
    write_code_archive(&path, &codes).unwrap();
    assert_eq!(read_code_archive(&path).unwrap(), codes);
    write_code_archive(&path, &[]).unwrap();
    assert!(read_code_archive(&path).unwrap().is_empty());
}

#[test]
fn bench_rows_follow_the_closed_forms() {
    let points = [BenchPoint { layers: 2, n: 3, depth: 2 }, BenchPoint { layers: 4, n: 1, depth: 1 }];
    let rows = bench_attention(&points, 0).unwrap();
    // H/2·n² + H/2·n·(R+1)² and H·(nR)²
    assert_eq!(rows[0].double_counted, 9 + 27);
    assert_eq!(rows[0].flat_counted, 2 * 36);
    assert_eq!(rows[0].flat_with_prefix, 2 * 49);
    assert_eq!(rows[1].double_counted, 2 + 2 * 4);
    assert_eq!(rows[1].flat_counted, 4);
    assert!(rows.iter().all(|r| r.double_counted == r.double_closed_form && r.flat_counted == r.flat_closed_form));

    let csv = bench_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("layers,n,depth,"));
    assert!(lines[1].starts_with("2,3,2,36,36,72,72,98,"));
    assert!(!csv.contains('\r'));

    assert!(bench_attention(&[BenchPoint { layers: 3, n: 2, depth: 2 }], 0).is_err());
    assert_eq!(default_sweep()[0], BenchPoint { layers: 18, n: 24, depth: 8 });
}
