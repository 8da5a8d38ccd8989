//! Closed-form cost accounting for the two-tier layout against a single
//! causal stack over all `n·R` codes.

use super::GptConfig;

/// Pairs attended in one teacher-forced pass: the temporal tier sees `n`
/// positions (condition plus rows `1..n−1`), the residual tier `R + 1` per
/// row (context plus all `R` codes).
pub fn double_tier_pairs(layers_temporal: usize, layers_residual: usize, n: usize, depth: usize) -> u64 {
    let (n, r) = (n as u64, depth as u64);
    layers_temporal as u64 * n * n + layers_residual as u64 * n * (r + 1) * (r + 1)
}

/// Pairs of a single stack of `layers` blocks over the flattened `n·R` codes.
pub fn flattened_pairs(layers: usize, n: usize, depth: usize) -> u64 {
    let len = (n * depth) as u64;
    layers as u64 * len * len
}

fn block_params(dm: usize) -> usize {
    // four dm×dm projections (no key bias), two norms, dm→4dm→dm MLP
    4 * dm * dm + 3 * dm + 4 * dm + (dm * 4 * dm + 4 * dm) + (4 * dm * dm + dm)
}

/// Parameter count of [`super::GptModel`] for `config`, computed in closed form.
pub fn double_tier_params(c: &GptConfig) -> usize {
    let dm = c.d_model;
    let code_proj = if c.code_dim != dm { c.code_dim * dm } else { 0 };
    (c.cond_dim * dm + dm)
        + code_proj
        + (c.n_max + 1) * dm
        + (c.depth + 1) * dm
        + (c.layers_temporal + c.layers_residual) * block_params(dm)
        + 2 * dm
        + (dm * c.codebook_size + c.codebook_size)
        + 2 * dm
        + (dm + 1)
}

/// A single-tier model with the same blocks, a learned `K`-token embedding
/// and a positional table covering the condition plus `n_max·R` codes.
pub fn single_tier_params(c: &GptConfig) -> usize {
    let dm = c.d_model;
    (c.cond_dim * dm + dm)
        + c.codebook_size * dm
        + (c.n_max * c.depth + 1) * dm
        + (c.layers_temporal + c.layers_residual) * block_params(dm)
        + 2 * dm
        + (dm * c.codebook_size + c.codebook_size)
        + 2 * dm
        + (dm + 1)
}
