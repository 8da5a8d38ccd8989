use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::tensor::{Real, Tensor};

/// Width of the built-in condition embeddings.
pub const EMBED_DIM: usize = 512;

/// Motion template of the synthetic five-joint chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Template {
    pub id: &'static str,
    pub caption: &'static str,
    /// Root speed along the heading, units per frame.
    speed: f64,
    /// Heading change, radians per frame.
    turn: f64,
    /// Arm swing amplitude (radians) and frequency (cycles per frame).
    arm: (f64, f64),
    leg: (f64, f64),
    /// Vertical root oscillation amplitude and frequency.
    bob: (f64, f64),
    /// Frame fraction after which a walk switches to waving.
    switch_at: Option<f64>,
}

const WAVE: (f64, f64) = (1.2, 0.09);

/// The default template set.
pub const TEMPLATES: [Template; 8] = [
    Template { id: "walk-forward", caption: "a person walks forward", speed: 0.05, turn: 0.0, arm: (0.5, 0.04), leg: (0.6, 0.04), bob: (0.03, 0.08), switch_at: None },
    Template { id: "turn-left", caption: "a person turns to the left while walking", speed: 0.03, turn: 0.04, arm: (0.3, 0.04), leg: (0.4, 0.04), bob: (0.02, 0.08), switch_at: None },
    Template { id: "turn-right", caption: "a person turns to the right while walking", speed: 0.03, turn: -0.04, arm: (0.3, 0.04), leg: (0.4, 0.04), bob: (0.02, 0.08), switch_at: None },
    Template { id: "wave", caption: "a person stands still and waves", speed: 0.0, turn: 0.0, arm: WAVE, leg: (0.0, 0.0), bob: (0.0, 0.0), switch_at: None },
    Template { id: "squat", caption: "a person squats down and stands up", speed: 0.0, turn: 0.0, arm: (0.2, 0.03), leg: (0.9, 0.03), bob: (-0.35, 0.03), switch_at: None },
    Template { id: "jump", caption: "a person jumps in place", speed: 0.0, turn: 0.0, arm: (0.8, 0.05), leg: (0.3, 0.05), bob: (0.4, 0.05), switch_at: None },
    Template { id: "run", caption: "a person runs forward", speed: 0.12, turn: 0.0, arm: (0.9, 0.08), leg: (1.0, 0.08), bob: (0.06, 0.16), switch_at: None },
    Template { id: "walk-then-wave", caption: "a person walks forward and then waves", speed: 0.05, turn: 0.0, arm: (0.5, 0.04), leg: (0.6, 0.04), bob: (0.03, 0.08), switch_at: Some(0.5) },
];

pub fn template(id: &str) -> Result<&'static Template> {
    TEMPLATES
        .iter()
        .find(|t| t.id == id)
        .map_or_else(|| invalid(format!("unknown template `{id}`")), Ok)
}

/// One synthetic task instance.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticTask {
    pub template: String,
    /// Frame-count range; the drawn length is rounded down to a multiple of
    /// `frame_multiple` so clips tokenize without a remainder.
    pub min_frames: usize,
    pub max_frames: usize,
    pub frame_multiple: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticTask {
    pub fn new(template: &str, seed: u64) -> Self {
        SyntheticTask {
            template: template.to_string(),
            min_frames: 32,
            max_frames: 64,
            frame_multiple: 8,
            noise: 0.005,
            seed,
        }
    }
}

/// A generated clip with its condition.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticClip {
    /// `T × 15` joint positions, joints in the order root, spine, head, arm, leg.
    pub motion: Tensor<f32>,
    pub embedding: Tensor<f32>,
    pub caption: String,
}

/// Root path plus limb phases; joint noise never touches the root so its
/// forward progress stays monotone.
pub fn synth_generate(task: &SyntheticTask) -> Result<SyntheticClip> {
    let tpl = template(&task.template)?;
    if task.min_frames == 0 || task.min_frames > task.max_frames || task.frame_multiple == 0 {
        return invalid("need 0 < min_frames <= max_frames and frame_multiple >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed ^ key_seed(tpl.id));
    let drawn = rng.random_range(task.min_frames..=task.max_frames);
    let frames = (drawn / task.frame_multiple * task.frame_multiple).max(task.frame_multiple);
    let phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, task.noise.max(0.0)).map_err(|e| crate::Error::InvalidArgument(e.to_string()))?;

    let mut data = Vec::with_capacity(frames * 15);
    let (mut x, mut z, mut heading) = (0.0f64, 0.0f64, 0.0f64);
    for f in 0..frames {
        let s = f as f64;
        let waving = tpl.switch_at.is_some_and(|at| s >= at * frames as f64);
        let (speed, arm) = if waving { (0.0, WAVE) } else { (tpl.speed, tpl.arm) };
        let leg = if waving { (0.0, 0.0) } else { tpl.leg };
        heading += tpl.turn;
        x += speed * heading.cos();
        z += speed * heading.sin();
        let bob = tpl.bob.0 * (2.0 * PI * tpl.bob.1 * s + phase).sin();
        let y = 1.0 + if tpl.bob.0 < 0.0 { -bob.abs() } else { bob.abs() };
        let root = [x, y, z];
        let spine = [x, y + 0.5, z];
        let head = [x, y + 0.8, z];
        let arm_angle = arm.0 * (2.0 * PI * arm.1 * s + phase).sin();
        let arm_len = 0.6;
        let hand = [
            spine[0] + arm_len * arm_angle.sin() * heading.cos(),
            spine[1] - arm_len * arm_angle.cos() * if waving { -1.0 } else { 1.0 },
            spine[2] + arm_len * arm_angle.sin() * heading.sin(),
        ];
        let leg_angle = leg.0 * (2.0 * PI * leg.1 * s + phase + PI).sin();
        let foot = [
            root[0] + 0.9 * leg_angle.sin() * heading.cos(),
            root[1] - 0.9 * leg_angle.cos(),
            root[2] + 0.9 * leg_angle.sin() * heading.sin(),
        ];
        data.extend(root.iter().map(|&v| v as f32));
        for joint in [spine, head, hand, foot] {
            data.extend(joint.iter().map(|&v| (v + noise.sample(&mut rng)) as f32));
        }
    }
    Ok(SyntheticClip {
        motion: Tensor::new(vec![frames, 15], data)?,
        embedding: hash_embedding(tpl.id, EMBED_DIM),
        caption: tpl.caption.to_string(),
    })
}

fn key_seed(key: &str) -> u64 {
    let digest = Sha256::digest(key.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Deterministic unit vector keyed by `key`: Gaussian draws from a stream
/// seeded with the key's SHA-256, normalized.
pub fn hash_embedding<T: Real>(key: &str, width: usize) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(key_seed(key));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let v: Vec<f64> = (0..width).map(|_| normal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Tensor::from_parts(vec![width], v.iter().map(|x| T::from_f64(x / norm)).collect())
}

/// Embedding for a caption or template id: a known template id or caption
/// maps to that template's vector, anything else is hashed as text.
pub fn embed_caption<T: Real>(caption: &str, width: usize) -> Tensor<T> {
    let key = TEMPLATES
        .iter()
        .find(|t| t.id == caption || t.caption == caption)
        .map_or(caption, |t| t.id);
    hash_embedding(key, width)
}
