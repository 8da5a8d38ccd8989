use super::SkeletonSpec;
use crate::error::{invalid, shape_err, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Weights of the velocity, acceleration and bone terms relative to the
/// plain frame term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub vel: f64,
    pub acc: f64,
    pub bone: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            vel: 0.5,
            acc: 0.5,
            bone: 1.0,
        }
    }
}

/// Finite-difference motion quantities of a `T×D` sequence.
#[derive(Clone, Debug)]
pub struct Kinematics<T> {
    /// `(T−1)×D`, `x_{i+1} − x_i`.
    pub velocity: Tensor<T>,
    /// `(T−2)×D`, `x_{i+2} + x_i − 2·x_{i+1}`.
    pub acceleration: Tensor<T>,
    /// One `T×3` tensor per bone pair `(u, v)`: `X(u) − X(v)`.
    pub bones: Vec<Tensor<T>>,
}

pub fn kinematics<T: Real>(x: &Tensor<T>, skeleton: &SkeletonSpec) -> Result<Kinematics<T>> {
    let (t, d) = x.dims2()?;
    if t < 3 {
        return invalid(format!("kinematics needs at least 3 frames, got {t}"));
    }
    if d != skeleton.feature_width {
        return shape_err("kinematics", format!("{d} features, skeleton expects {}", skeleton.feature_width));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let v = velocity(&mut tape, xv)?;
    let a = acceleration(&mut tape, xv)?;
    let bones = skeleton
        .bone_pairs
        .iter()
        .map(|&pair| bone(&mut tape, xv, skeleton, pair).map(|b| tape.value(b).clone()))
        .collect::<Result<_>>()?;
    Ok(Kinematics {
        velocity: tape.value(v).clone(),
        acceleration: tape.value(a).clone(),
        bones,
    })
}

fn velocity<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let t = tape.shape(x)[0];
    let next = tape.slice(x, 0, 1, t - 1)?;
    let prev = tape.slice(x, 0, 0, t - 1)?;
    tape.sub(next, prev)
}

fn acceleration<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let t = tape.shape(x)[0];
    let ahead = tape.slice(x, 0, 2, t - 2)?;
    let behind = tape.slice(x, 0, 0, t - 2)?;
    let mid = tape.slice(x, 0, 1, t - 2)?;
    let outer = tape.add(ahead, behind)?;
    let twice = tape.scale(mid, 2.0)?;
    tape.sub(outer, twice)
}

fn bone<T: Real>(tape: &mut Tape<T>, x: Var, skeleton: &SkeletonSpec, (u, v): (usize, usize)) -> Result<Var> {
    let su = &skeleton.position_slices[u];
    let sv = &skeleton.position_slices[v];
    let pu = tape.slice(x, 1, su.start, 3)?;
    let pv = tape.slice(x, 1, sv.start, 3)?;
    tape.sub(pu, pv)
}

/// Per-term values of the last [`recon_loss`] call.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReconTerms {
    pub frames: f64,
    pub vel: f64,
    pub acc: f64,
    pub bone: f64,
}

/// `LS(X, X̂) + α_v·LS(V, V̂) + α_a·LS(A, Â) + α_b·Σ_bones LS(B, B̂)` over the
/// first `min`-aligned frames of both `T×D` inputs, where `LS` is mean
/// smooth-L1. The velocity term needs 2 frames and the acceleration term 3;
/// shorter inputs skip them.
pub fn recon_loss<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    x_re: Var,
    skeleton: &SkeletonSpec,
    weights: LossWeights,
) -> Result<(Var, ReconTerms)> {
    let (tx, dx) = tape.value(x).dims2()?;
    let (tr, dr) = tape.value(x_re).dims2()?;
    if dx != dr || dx != skeleton.feature_width {
        return shape_err("recon_loss", format!("feature widths {dx}, {dr}, skeleton {}", skeleton.feature_width));
    }
    if tr > tx {
        return shape_err("recon_loss", format!("reconstruction has {tr} frames, target {tx}"));
    }
    let x = if tr < tx { tape.slice(x, 0, 0, tr)? } else { x };
    let mut terms = ReconTerms::default();
    let mut total = tape.smooth_l1(x, x_re)?;
    terms.frames = tape.value(total).item().as_f64();
    let add_term = |tape: &mut Tape<T>, total: &mut Var, a: Var, b: Var, w: f64| -> Result<f64> {
        let l = tape.smooth_l1(a, b)?;
        let value = tape.value(l).item().as_f64();
        if w != 0.0 {
            let scaled = tape.scale(l, w)?;
            *total = tape.add(*total, scaled)?;
        }
        Ok(value)
    };
    if tr >= 2 {
        let (a, b) = (velocity(tape, x)?, velocity(tape, x_re)?);
        terms.vel = add_term(tape, &mut total, a, b, weights.vel)?;
    }
    if tr >= 3 {
        let (a, b) = (acceleration(tape, x)?, acceleration(tape, x_re)?);
        terms.acc = add_term(tape, &mut total, a, b, weights.acc)?;
    }
    for &pair in &skeleton.bone_pairs {
        let (a, b) = (bone(tape, x, skeleton, pair)?, bone(tape, x_re, skeleton, pair)?);
        terms.bone += add_term(tape, &mut total, a, b, weights.bone)?;
    }
    Ok((total, terms))
}
