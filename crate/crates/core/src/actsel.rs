//! Greedy seed-and-grow clustering of the embedding field.
//!
//! Each round takes the highest-scoring unclaimed cell as a seed, gathers
//! unclaimed cells within embedding distance 1 of the seed, re-centres on
//! their mean, and claims every unclaimed cell within distance 1 of that
//! mean as the proposal's mask. The same routine picks interaction points
//! during training and produces proposals at test time.

use rand::Rng;

use crate::headgrads::sigmoid;
use crate::imaging::BinaryMask;
use crate::predictor::HeadMaps;

pub const DEFAULT_THETA: f64 = 0.0;
pub const EMBED_THRESHOLD: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ActionProposal {
    /// Seed cell at output resolution.
    pub point: (usize, usize),
    pub force_class: usize,
    pub mask: BinaryMask,
    pub confidence: f64,
    /// False in the degenerate case where the re-centred mean moved more
    /// than the threshold away from the seed.
    pub seed_in_mask: bool,
}

impl ActionProposal {
    /// Centre of the seed's preimage at `factor` times the output resolution.
    pub fn input_point(&self, factor: usize) -> (usize, usize) {
        (self.point.0 * factor + factor / 2, self.point.1 * factor + factor / 2)
    }
}

fn sq_dist(maps: &HeadMaps, p: usize, centre: &[f64]) -> f64 {
    maps.e.iter().zip(centre).map(|(g, c)| (g.data[p] - c).powi(2)).sum()
}

pub fn select_actions(maps: &HeadMaps, n: usize, theta: f64) -> Vec<ActionProposal> {
    let (h, w) = (maps.s.height, maps.s.width);
    let cells = h * w;
    let mut taken = vec![false; cells];
    let mut out = Vec::new();
    let t2 = EMBED_THRESHOLD * EMBED_THRESHOLD;
    while out.len() < n {
        let mut seed: Option<usize> = None;
        for p in 0..cells {
            if !taken[p] && seed.is_none_or(|q| maps.s.data[p] > maps.s.data[q]) {
                seed = Some(p);
            }
        }
        let Some(seed) = seed else { break };
        let score = maps.s.data[seed];
        if score < theta || score.is_nan() {
            break;
        }
        let (row, col) = (seed / w, seed % w);
        let e_seed: Vec<f64> = maps.e.iter().map(|g| g.data[seed]).collect();
        let mut mean = vec![0.0; maps.e.len()];
        let mut count = 0usize;
        for p in 0..cells {
            if !taken[p] && sq_dist(maps, p, &e_seed) < t2 {
                count += 1;
                for (m, g) in mean.iter_mut().zip(&maps.e) {
                    *m += g.data[p];
                }
            }
        }
        // the seed itself is always in the neighbourhood, so count >= 1
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut mask = BinaryMask::empty(h, w);
        for p in 0..cells {
            if !taken[p] && sq_dist(maps, p, &mean) < t2 {
                mask.data[p] = true;
            }
        }
        let seed_in_mask = mask.data[seed];
        if !seed_in_mask {
            log::warn!("seed ({row}, {col}) fell outside its own mask");
        }
        for p in 0..cells {
            taken[p] |= mask.data[p];
        }
        taken[seed] = true;
        out.push(ActionProposal {
            point: (row, col),
            force_class: maps.force_class(row, col),
            mask,
            confidence: sigmoid(score),
            seed_in_mask,
        });
    }
    out
}

/// Uniform exploration actions: cells of a `res x res` grid and force classes.
pub fn random_actions<R: Rng>(n: usize, res: usize, rng: &mut R) -> Vec<((usize, usize), usize)> {
    (0..n)
        .map(|_| ((rng.random_range(0..res), rng.random_range(0..res)), rng.random_range(0..3)))
        .collect()
}
