//! Synthetic caption-motion pairs, condition embeddings and dataset loading.

mod synth;

use std::fs;
use std::path::Path;

pub use synth::{embed_caption, hash_embedding, synth_generate, template, SyntheticClip, SyntheticTask, Template, EMBED_DIM, TEMPLATES};

use crate::error::{shape_err, Result};
use crate::io::{read_tensor, write_tensor, Manifest, ManifestRecord};
use crate::tensor::Tensor;
use crate::vae::SkeletonSpec;

/// One loaded manifest record.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub motion: Tensor<f32>,
    pub embedding: Tensor<f32>,
    pub caption: String,
}

/// Reads every record of `manifest`, checking motions are `T×D` for the
/// skeleton's `D` and embeddings are vectors of `embed_width`.
pub fn load_clips(manifest: &Manifest, skeleton: &SkeletonSpec, embed_width: usize) -> Result<Vec<Clip>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let motion: Tensor<f32> = read_tensor(&r.motion_path)?;
            let (_, d) = motion.dims2()?;
            if d != skeleton.feature_width {
                return shape_err(
                    "load_clips",
                    format!("{}: {d} features, skeleton `{}` has {}", r.motion_path.display(), skeleton.name, skeleton.feature_width),
                );
            }
            let embedding: Tensor<f32> = read_tensor(&r.embedding_path)?;
            if embedding.shape() != [embed_width] {
                return shape_err(
                    "load_clips",
                    format!("{}: embedding shape {:?}, expected [{embed_width}]", r.embedding_path.display(), embedding.shape()),
                );
            }
            Ok(Clip {
                motion,
                embedding,
                caption: r.caption.clone(),
            })
        })
        .collect()
}

/// Writes `count` clips cycling through `templates` into `dir` (motions
/// under `motions/`, embeddings under `embeddings/`) plus `manifest.tsv`
/// with relative paths. Clip `i` uses template `i mod len` and seed
/// `seed + i`.
pub fn write_synthetic(dir: &Path, templates: &[&str], count: usize, seed: u64, task: &SyntheticTask) -> Result<Manifest> {
    if templates.is_empty() {
        return crate::error::invalid("no templates given");
    }
    fs::create_dir_all(dir.join("motions"))?;
    fs::create_dir_all(dir.join("embeddings"))?;
    let mut manifest = Manifest {
        split: Some("train".into()),
        records: Vec::with_capacity(count),
    };
    for i in 0..count {
        let id = templates[i % templates.len()];
        let clip = synth_generate(&SyntheticTask {
            template: id.to_string(),
            seed: seed.wrapping_add(i as u64),
            ..task.clone()
        })?;
        let motion_rel = format!("motions/{i:04}.mtnf");
        let emb_rel = format!("embeddings/{id}.mtnf");
        write_tensor(dir.join(&motion_rel), &clip.motion)?;
        write_tensor(dir.join(&emb_rel), &clip.embedding)?;
        manifest.records.push(ManifestRecord {
            motion_path: motion_rel.into(),
            embedding_path: emb_rel.into(),
            caption: clip.caption,
        });
    }
    manifest.write(dir.join("manifest.tsv"))?;
    Ok(manifest)
}
