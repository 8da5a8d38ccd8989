use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::gpt::cost::{double_tier_pairs, flattened_pairs};
use crate::gpt::{GptConfig, GptModel};
use crate::rvq::CodeMatrix;
use crate::tensor::Tensor;

/// One swept configuration: `layers` blocks in total, split evenly between
/// the tiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchPoint {
    pub layers: usize,
    pub n: usize,
    pub depth: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub point: BenchPoint,
    /// Pairs counted on the tape during a teacher-forced two-tier pass.
    pub double_counted: u64,
    pub double_closed_form: u64,
    /// Pairs counted for one causal stack over `n·R` tokens with the same blocks.
    pub flat_counted: u64,
    pub flat_closed_form: u64,
    /// Flattened count with the condition token prepended, `H·(nR + 1)²`.
    pub flat_with_prefix: u64,
    pub ratio: f64,
    pub double_ms: f64,
    pub flat_ms: f64,
}

/// Default sweep: the reference `H = 18, n = 24, R = 8` plus small grids.
pub fn default_sweep() -> Vec<BenchPoint> {
    let mut points = vec![BenchPoint { layers: 18, n: 24, depth: 8 }];
    for layers in [2, 4] {
        for n in [1, 2, 4, 8] {
            for depth in [1, 2, 4, 8] {
                points.push(BenchPoint { layers, n, depth });
            }
        }
    }
    points
}

/// Counts and times both layouts on toy models (`d_model = 16`, two heads,
/// `K = 8`) that share one set of blocks, so parameters match up to the
/// embedding tables.
pub fn bench_attention(points: &[BenchPoint], seed: u64) -> Result<Vec<BenchRow>> {
    points.iter().map(|&p| bench_point(p, seed)).collect()
}

fn bench_point(point: BenchPoint, seed: u64) -> Result<BenchRow> {
    let BenchPoint { layers, n, depth } = point;
    if layers < 2 || layers % 2 != 0 || n == 0 || depth == 0 {
        return invalid(format!("bench point needs an even layer count >= 2 and n, R >= 1: {point:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = GptConfig {
        layers_temporal: layers / 2,
        layers_residual: layers / 2,
        d_model: 16,
        heads: 2,
        codebook_size: 8,
        depth,
        code_dim: 4,
        cond_dim: 8,
        n_max: n,
        dropout: 0.0,
        beta_stop: 1.0,
    };
    let codebook = Tensor::new(vec![8, 4], (0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
    let model = GptModel::new(config, codebook, &mut rng)?;
    let cond = Tensor::new(vec![8], (0..8).map(|_| rng.random_range(-1.0f32..1.0)).collect())?;
    let codes = CodeMatrix::new(n, depth, (0..n * depth).map(|_| rng.random_range(0..8)).collect())?;

    let start = Instant::now();
    let double_counted = model.teacher_forced_pairs(&cond, &codes)?;
    let double_ms = start.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();
    let flat_counted = model.flattened_forward(n * depth)?;
    let flat_ms = start.elapsed().as_secs_f64() * 1e3;
    let flat_len = (n * depth + 1) as u64;
    Ok(BenchRow {
        point,
        double_counted,
        double_closed_form: double_tier_pairs(layers / 2, layers / 2, n, depth),
        flat_counted,
        flat_closed_form: flattened_pairs(layers, n, depth),
        flat_with_prefix: layers as u64 * flat_len * flat_len,
        ratio: flat_counted as f64 / double_counted as f64,
        double_ms,
        flat_ms,
    })
}

/// CSV with a header row, `.` decimals and LF line endings.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "layers,n,depth,double_counted,double_closed_form,flat_counted,flat_closed_form,flat_with_prefix,ratio,double_ms,flat_ms\n",
    );
    for r in rows {
        let p = r.point;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.4},{:.3},{:.3}",
            p.layers, p.n, p.depth, r.double_counted, r.double_closed_form, r.flat_counted, r.flat_closed_form, r.flat_with_prefix, r.ratio, r.double_ms, r.flat_ms
        );
    }
    s
}
