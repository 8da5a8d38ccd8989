//! Independent reference computations shared by the integration tests and
//! the acceptance gate. Nothing here calls into the code under test beyond
//! reading its outputs.
#![allow(dead_code)]

/// Exhaustive nearest entry to `v` among `entries` (row-major `K×d`) by
/// Euclidean norm; the first minimum wins.
pub fn brute_force_nearest(v: &[f64], entries: &[f64], d: usize) -> usize {
    entries
        .chunks(d)
        .map(|c| v.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap()
        .0
}

/// Replays greedy selection: at depth `w` the residual is `z` minus the
/// entries the implementation already chose, and the choice must equal the
/// exhaustive argmin of that residual. Returns the first mismatch.
pub fn check_greedy_choices(z: &[f64], entries: &[f64], d: usize, chosen: &[usize]) -> Option<(usize, usize, usize)> {
    let mut resid = z.to_vec();
    for (w, &k) in chosen.iter().enumerate() {
        let want = brute_force_nearest(&resid, entries, d);
        if want != k {
            return Some((w, k, want));
        }
        for j in 0..d {
            resid[j] -= entries[k * d + j];
        }
    }
    None
}

/// Mean of `samples` (row-major `m×d`) grouped by `labels`.
pub fn centroids(samples: &[f64], labels: &[usize], groups: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sum = vec![vec![0.0; d]; groups];
    let mut count = vec![0usize; groups];
    for (row, &l) in samples.chunks(d).zip(labels) {
        count[l] += 1;
        for j in 0..d {
            sum[l][j] += row[j];
        }
    }
    sum.into_iter()
        .zip(count)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect()
}

/// Every `rows × depth` grid over `0..k`, in lexicographic order.
pub fn all_code_grids(k: usize, rows: usize, depth: usize) -> Vec<Vec<usize>> {
    let cells = rows * depth;
    let total = k.pow(cells as u32);
    (0..total)
        .map(|mut idx| {
            let mut g = vec![0; cells];
            for c in (0..cells).rev() {
                g[c] = idx % k;
                idx /= k;
            }
            g
        })
        .collect()
}

/// Double-tier attention pairs summed over layers: the temporal tier
/// attends causally over `n` positions and the residual tier over `R + 1`
/// positions at each of `n` timesteps, with half the layers in each tier.
pub fn double_tier_pairs_closed_form(layers: u64, n: u64, depth: u64) -> u64 {
    layers / 2 * n * n + layers / 2 * n * (depth + 1) * (depth + 1)
}

/// Single-tier baseline over the flattened `n·R` sequence.
pub fn flattened_pairs_closed_form(layers: u64, n: u64, depth: u64) -> u64 {
    layers * (n * depth) * (n * depth)
}

/// Two-sided bound on a multinomial cell count deviating from its mean.
pub fn within_sigma(observed: usize, p: f64, draws: usize, sigmas: f64) -> bool {
    let mean = p * draws as f64;
    let sd = (draws as f64 * p * (1.0 - p)).sqrt();
    (observed as f64 - mean).abs() <= sigmas * sd + 1e-9
}

/// Probability that the sequence ends at each step given per-step stop
/// probabilities, counting from `n_min` and forcing the end at the last
/// step. Entries before `n_min` are zero.
pub fn end_distribution(stop_probs: &[f64], n_min: usize) -> Vec<f64> {
    let mut out = vec![0.0; stop_probs.len()];
    let mut alive = 1.0;
    for t in n_min..=stop_probs.len() {
        let p = if t == stop_probs.len() { 1.0 } else { stop_probs[t - 1] };
        out[t - 1] = alive * p;
        alive *= 1.0 - p;
    }
    out
}
