//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use sigmine_core::analysis::{bias_test, category_summary};
use sigmine_core::ingest::{Grouping, PerplexityMatrix};
use sigmine_core::overlap::{build_performance_matrix, build_signature_matrix, PoolMode};
use sigmine_core::pipeline::benchmark_seed;
use sigmine_core::rng::SplitMix64;
use sigmine_core::screening::ScreeningOptions;
use sigmine_core::selection::mine_signature;
use sigmine_core::synth::{generate_world, WorldConfig};

/// 1-based rank with ties averaged, by direct counting.
pub fn count_rank(v: &[f64], k: usize) -> f64 {
    let less = v.iter().filter(|&&p| p < v[k]).count() as f64;
    let eq = v.iter().filter(|&&p| p == v[k]).count() as f64;
    less + (eq + 1.0) / 2.0
}

pub fn thrush_oracle(ppl: &[f64], perf: &[f64]) -> f64 {
    let m = ppl.len();
    let mut total = 0.0;
    for k in 0..m {
        for l in k + 1..m {
            let s = if perf[k] > perf[l] {
                1.0
            } else if perf[k] < perf[l] {
                -1.0
            } else {
                0.0
            };
            total += s * (count_rank(ppl, k) - count_rank(ppl, l));
        }
    }
    total
}

/// Fraction of pairs where the better model has strictly higher perplexity.
pub fn preselect_oracle(ppl: &[f64], perf: &[f64]) -> f64 {
    let m = ppl.len();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| perf[a].partial_cmp(&perf[b]).unwrap());
    let mut count = 0;
    for k in 0..m {
        for l in k + 1..m {
            if ppl[idx[k]] < ppl[idx[l]] {
                count += 1;
            }
        }
    }
    count as f64 / (m * (m - 1) / 2) as f64
}

/// Textbook Spearman for tie-free data.
pub fn spearman_no_ties(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let d2: f64 = (0..a.len()).map(|k| (count_rank(a, k) - count_rank(b, k)).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Largest clique by checking all 2^n subsets; among maximum cliques the
/// lexicographically smallest sorted index list.
pub fn brute_force_clique(n: usize, adj: &[Vec<bool>]) -> Vec<usize> {
    let mut best: Vec<usize> = Vec::new();
    for mask in 0u32..(1u32 << n) {
        let members: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let complete = members
            .iter()
            .enumerate()
            .all(|(a, &i)| members[a + 1..].iter().all(|&j| adj[i][j]));
        if !complete {
            continue;
        }
        if members.len() > best.len() || (members.len() == best.len() && members < best) {
            best = members;
        }
    }
    best
}

/// Two-sided p by enumerating every assignment of the pooled values to
/// a sample of size `x.len()`.
pub fn mann_whitney_enumeration(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let n = pooled.len();
    let nx = x.len();
    let doubled_u = |xs: &[f64], ys: &[f64]| -> i64 {
        xs.iter()
            .flat_map(|a| ys.iter().map(move |b| if a > b { 2 } else if a == b { 1 } else { 0 }))
            .sum()
    };
    let centre = (nx * (n - nx)) as i64;
    let obs = (doubled_u(x, y) - centre).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for mask in 0u32..(1u32 << n) {
        if mask.count_ones() as usize != nx {
            continue;
        }
        let xs: Vec<f64> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pooled[i]).collect();
        let ys: Vec<f64> = (0..n).filter(|i| mask & (1 << i) == 0).map(|i| pooled[i]).collect();
        total += 1;
        if (doubled_u(&xs, &ys) - centre).abs() >= obs {
            hit += 1;
        }
    }
    hit as f64 / total as f64
}

pub fn normal(rng: &mut SplitMix64) -> f64 {
    StandardNormal.sample(rng)
}

/// Perplexity matrix with two signatures of `k` columns each plus a block of
/// background noise columns. With `shared` both signatures fall with one
/// hidden skill; otherwise every column is independent noise.
pub fn two_signature_matrix(m: usize, k: usize, shared: bool, seed: u64) -> (PerplexityMatrix, Vec<String>, Vec<String>) {
    let background = 200;
    let d = 2 * k + background;
    let mut rng = SplitMix64::new(seed);
    let skill: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let mut values = vec![0.0; m * d];
    for j in 0..d {
        for i in 0..m {
            let log_ppl = if shared && j < 2 * k {
                2.0 - skill[i] + 0.3 * normal(&mut rng)
            } else {
                2.0 + normal(&mut rng)
            };
            values[i * d + j] = log_ppl.exp();
        }
    }
    let ids: Vec<String> = (0..d).map(|j| format!("t{j:03}")).collect();
    let models = (0..m).map(|i| format!("m{i:02}")).collect();
    let a = ids[..k].to_vec();
    let b = ids[k..2 * k].to_vec();
    (PerplexityMatrix::new(models, ids, values).unwrap(), a, b)
}

/// Outcome of the planted-population analysis for one seed.
#[derive(Debug, Clone, Copy)]
pub struct WorldOutcome {
    pub within: f64,
    pub cross: f64,
    pub p_perf_family: f64,
    pub p_sig_family: f64,
}

impl WorldOutcome {
    pub fn passes(&self) -> bool {
        self.within - self.cross >= 0.1 && self.p_perf_family < 0.01 && self.p_sig_family > 0.1
    }
}

pub fn world_outcome(seed: u64) -> WorldOutcome {
    let w = generate_world(&WorldConfig::default(), seed).unwrap();
    let ids = w.panel.benchmark_ids().to_vec();
    let sigs: Vec<(String, Vec<String>)> = ids
        .iter()
        .map(|b| {
            let perf = w.panel.column_by_id(b).unwrap();
            let opts = ScreeningOptions {
                seed: benchmark_seed(seed, b),
                ..ScreeningOptions::default()
            };
            let s = mine_signature(&w.matrix, &perf, b, opts, 0.0).unwrap();
            (b.clone(), s.context_ids().iter().map(|c| c.to_string()).collect())
        })
        .collect();
    let o_sig = build_signature_matrix(&w.matrix, &sigs, PoolMode::Session).unwrap().matrix;
    let o_perf = build_performance_matrix(&w.panel, &ids).unwrap().matrix;
    let cs = category_summary(&o_sig, &w.meta, Grouping::Category).unwrap();
    let bp = bias_test(&o_perf, &w.meta, Grouping::Family).unwrap();
    let bs = bias_test(&o_sig, &w.meta, Grouping::Family).unwrap();
    WorldOutcome {
        within: cs.within_overall.unwrap(),
        cross: cs.cross.unwrap(),
        p_perf_family: bp.test.unwrap().p_two_sided,
        p_sig_family: bs.test.unwrap().p_two_sided,
    }
}

/// Random symmetric adjacency with edge probability `p`.
pub fn random_graph(rng: &mut SplitMix64, n: usize, p: f64) -> Vec<Vec<bool>> {
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let e = rng.random::<f64>() < p;
            adj[i][j] = e;
            adj[j][i] = e;
        }
    }
    adj
}
