use rand::seq::index::sample;
use rand::Rng;

use crate::error::{invalid, Result};
use crate::rvq::CodeMatrix;
use crate::tensor::{Real, Tensor};

/// Which cells of the teacher-forcing input get replaced by random codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CorruptionMode {
    None,
    /// `⌊τ·n·R⌋` individual cells.
    PerCode,
    /// `⌊τ·n⌋` whole rows, every depth.
    #[default]
    PerTime,
}

impl CorruptionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(CorruptionMode::None),
            "per-code" => Ok(CorruptionMode::PerCode),
            "per-time" => Ok(CorruptionMode::PerTime),
            other => invalid(format!("unknown corruption mode `{other}` (none, per-code, per-time)")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CorruptionMode::None => "none",
            CorruptionMode::PerCode => "per-code",
            CorruptionMode::PerTime => "per-time",
        }
    }
}

/// Input augmentation applied during GPT training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainAugConfig {
    /// Corruption fraction `τ`.
    pub tau: f64,
    pub mode: CorruptionMode,
    /// Probability of replacing the condition by the NULL (zero) vector.
    pub p_drop: f64,
}

impl Default for TrainAugConfig {
    fn default() -> Self {
        TrainAugConfig {
            tau: 0.5,
            mode: CorruptionMode::PerTime,
            p_drop: 0.1,
        }
    }
}

impl TrainAugConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.p_drop) {
            return invalid("tau and p_drop must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Corrupted copy of `codes` plus, per timestep, whether any of its cells
/// was replaced. Replacements are independent uniform draws over `0..k`
/// (they may coincide with the original code). The input is not touched,
/// so callers keep it as the loss target.
pub fn corrupt_codes<R: Rng + ?Sized>(
    codes: &CodeMatrix,
    tau: f64,
    mode: CorruptionMode,
    k: usize,
    rng: &mut R,
) -> Result<(CodeMatrix, Vec<bool>)> {
    if !(0.0..=1.0).contains(&tau) {
        return invalid(format!("tau {tau} outside [0, 1]"));
    }
    let (n, r) = (codes.rows(), codes.depth());
    let mut out = codes.clone();
    let mut touched = vec![false; n];
    match mode {
        CorruptionMode::None => {}
        CorruptionMode::PerTime => {
            let count = (tau * n as f64).floor() as usize;
            for t in sample(rng, n, count).into_vec() {
                for w in 0..r {
                    out.set(t, w, rng.random_range(0..k));
                }
                touched[t] = true;
            }
        }
        CorruptionMode::PerCode => {
            let count = (tau * (n * r) as f64).floor() as usize;
            for cell in sample(rng, n * r, count).into_vec() {
                out.set(cell / r, cell % r, rng.random_range(0..k));
                touched[cell / r] = true;
            }
        }
    }
    Ok((out, touched))
}

/// With probability `p_drop` the zero vector, otherwise `cond` unchanged.
/// Returns whether the condition was dropped.
pub fn dropout_condition<T: Real, R: Rng + ?Sized>(cond: &Tensor<T>, p_drop: f64, rng: &mut R) -> (Tensor<T>, bool) {
    if rng.random::<f64>() < p_drop {
        (Tensor::zeros(cond.shape()), true)
    } else {
        (cond.clone(), false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize, r: usize) -> CodeMatrix {
        CodeMatrix::new(n, r, (0..n * r).map(|i| i % 7).collect()).unwrap()
    }

    #[test]
    fn zero_tau_and_none_mode_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = grid(5, 3);
        for mode in [CorruptionMode::None, CorruptionMode::PerCode, CorruptionMode::PerTime] {
            let (c, mask) = corrupt_codes(&s, 0.0, mode, 7, &mut rng).unwrap();
            assert_eq!(c, s);
            assert!(mask.iter().all(|m| !m));
        }
        let (c, _) = corrupt_codes(&s, 1.0, CorruptionMode::None, 7, &mut rng).unwrap();
        assert_eq!(c, s);
    }

    #[test]
    fn per_code_touches_floor_tau_n_r_cells_at_most() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = grid(4, 3);
        let (c, mask) = corrupt_codes(&s, 0.5, CorruptionMode::PerCode, 1000, &mut rng).unwrap();
        let changed = s.indices().iter().zip(c.indices()).filter(|(a, b)| a != b).count();
        assert!(changed <= 6);
        assert!(mask.iter().any(|&m| m));
    }

    #[test]
    fn condition_dropout_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = Tensor::<f64>::from_f64(&[3], &[1.0, -2.0, 3.0]).unwrap();
        for _ in 0..100 {
            assert!(dropout_condition(&e, 0.0, &mut rng).0.bit_eq(&e));
            let (z, dropped) = dropout_condition(&e, 1.0, &mut rng);
            assert!(dropped && z.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [CorruptionMode::None, CorruptionMode::PerCode, CorruptionMode::PerTime] {
            assert_eq!(CorruptionMode::parse(m.name()).unwrap(), m);
        }
        assert!(CorruptionMode::parse("sometimes").is_err());
    }
}
