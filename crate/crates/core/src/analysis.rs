//! Group summaries, maximum cliques and group-bias tests over overlap
//! matrices.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ingest::{Grouping, MetaTable};
use crate::overlap::{Level, OverlapMatrix};

/// Largest graph handed to the exact clique search.
pub const MAX_EXACT_CLIQUE: usize = 200;
/// Mann–Whitney uses the exact null distribution up to this many observations.
pub const EXACT_MW_LIMIT: usize = 12;

fn labels_of(o: &OverlapMatrix, meta: &MetaTable, grouping: Grouping) -> Result<Vec<String>> {
    o.benchmark_ids()
        .iter()
        .map(|b| meta.label_of(b, grouping).map(str::to_string))
        .collect()
}

fn mean_of(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    /// Mean over same-group pairs; `None` for groups with fewer than two
    /// members (or only failed pairs).
    pub within: BTreeMap<String, Option<f64>>,
    /// Mean of the defined per-group means.
    pub within_overall: Option<f64>,
    /// Mean of the per-group-pair means; `None` with fewer than two groups.
    pub cross: Option<f64>,
}

/// Within- and cross-group means with every group pair weighted equally.
/// NaN entries (failed pairs) are left out.
pub fn category_summary(o: &OverlapMatrix, meta: &MetaTable, grouping: Grouping) -> Result<CategorySummary> {
    let labels = labels_of(o, meta, grouping)?;
    let mut cells: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
    let mut groups: BTreeMap<&str, ()> = BTreeMap::new();
    for (i, li) in labels.iter().enumerate() {
        groups.insert(li, ());
        for (j, lj) in labels.iter().enumerate().skip(i + 1) {
            let v = o.get(i, j);
            let key = if li <= lj { (li.as_str(), lj.as_str()) } else { (lj.as_str(), li.as_str()) };
            let entry = cells.entry(key).or_default();
            if !v.is_nan() {
                entry.push(v);
            }
        }
    }
    let within: BTreeMap<String, Option<f64>> = groups
        .keys()
        .map(|g| (g.to_string(), cells.get(&(*g, *g)).and_then(|v| mean_of(v))))
        .collect();
    let defined: Vec<f64> = within.values().flatten().copied().collect();
    let cross_means: Vec<f64> = cells
        .iter()
        .filter(|((a, b), _)| a != b)
        .filter_map(|(_, v)| mean_of(v))
        .collect();
    Ok(CategorySummary {
        within_overall: mean_of(&defined),
        cross: mean_of(&cross_means),
        within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clique {
    pub members: Vec<String>,
    pub threshold: f64,
    /// True when found by the greedy fallback rather than exact search.
    pub greedy: bool,
}

#[derive(Clone)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Self {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn clear(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn and(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & b).collect())
    }

    fn and_not(&self, other: &Bits) -> Bits {
        Bits(self.0.iter().zip(&other.0).map(|(a, b)| a & !b).collect())
    }

    fn is_empty(&self) -> bool {
        self.0.iter().all(|w| *w == 0)
    }

    fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                (w != 0).then(|| {
                    let t = w.trailing_zeros() as usize;
                    w &= w - 1;
                    k * 64 + t
                })
            })
        })
    }
}

struct CliqueSearch<'a> {
    adj: &'a [Bits],
    best: Vec<usize>,
}

impl CliqueSearch<'_> {
    fn offer(&mut self, r: &[usize]) {
        let mut cand = r.to_vec();
        cand.sort_unstable();
        if cand.len() > self.best.len() || (cand.len() == self.best.len() && cand < self.best) {
            self.best = cand;
        }
    }

    // Bron–Kerbosch with Tomita pivoting; branches that cannot reach the
    // current best size are cut.
    fn expand(&mut self, r: &mut Vec<usize>, p: Bits, x: Bits) {
        if p.is_empty() {
            if x.is_empty() {
                self.offer(r);
            }
            return;
        }
        if r.len() + p.count() < self.best.len() {
            return;
        }
        let pivot = p
            .iter()
            .chain(x.iter())
            .max_by_key(|&u| (p.and(&self.adj[u]).count(), std::cmp::Reverse(u)))
            .expect("p is non-empty");
        let mut p = p;
        let mut x = x;
        let branch: Vec<usize> = p.and_not(&self.adj[pivot]).iter().collect();
        for v in branch {
            r.push(v);
            self.expand(r, p.and(&self.adj[v]), x.and(&self.adj[v]));
            r.pop();
            p.clear(v);
            x.set(v);
        }
    }
}

/// Builds the thresholded graph over benchmarks in sorted-id order.
fn threshold_graph(o: &OverlapMatrix, threshold: f64) -> (Vec<usize>, Vec<Bits>) {
    let n = o.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| o.benchmark_ids()[a].cmp(&o.benchmark_ids()[b]));
    let mut adj = vec![Bits::empty(n); n];
    for (a, &i) in order.iter().enumerate() {
        for (b, &j) in order.iter().enumerate().skip(a + 1) {
            if o.get(i, j) >= threshold {
                adj[a].set(b);
                adj[b].set(a);
            }
        }
    }
    (order, adj)
}

/// Exact maximum clique of the graph with an edge wherever the overlap is
/// at least `threshold`. Among maximum cliques the one whose sorted id list
/// is lexicographically smallest wins.
pub fn max_clique(o: &OverlapMatrix, threshold: f64) -> Result<Clique> {
    if !threshold.is_finite() {
        return Err(Error::Invalid(format!("clique threshold must be finite, got {threshold}")));
    }
    if o.len() > MAX_EXACT_CLIQUE {
        return Err(Error::Invalid(format!(
            "exact clique search is limited to {MAX_EXACT_CLIQUE} benchmarks ({} given); set clique_greedy = true to use the greedy fallback",
            o.len()
        )));
    }
    let (order, adj) = threshold_graph(o, threshold);
    let n = o.len();
    let mut p = Bits::empty(n);
    (0..n).for_each(|i| p.set(i));
    let mut search = CliqueSearch { adj: &adj, best: Vec::new() };
    search.expand(&mut Vec::new(), p, Bits::empty(n));
    Ok(Clique {
        members: search.best.iter().map(|&k| o.benchmark_ids()[order[k]].clone()).collect(),
        threshold,
        greedy: false,
    })
}

/// Greedy clique for graphs too large for exact search: from every start
/// node, repeatedly add the candidate with the most remaining neighbours.
pub fn greedy_clique(o: &OverlapMatrix, threshold: f64) -> Result<Clique> {
    if !threshold.is_finite() {
        return Err(Error::Invalid(format!("clique threshold must be finite, got {threshold}")));
    }
    let (order, adj) = threshold_graph(o, threshold);
    let mut best: Vec<usize> = Vec::new();
    for start in 0..o.len() {
        let mut clique = vec![start];
        let mut cand = adj[start].clone();
        while !cand.is_empty() {
            let v = cand
                .iter()
                .max_by_key(|&u| (cand.and(&adj[u]).count(), std::cmp::Reverse(u)))
                .expect("non-empty");
            clique.push(v);
            cand = cand.and(&adj[v]);
        }
        clique.sort_unstable();
        if clique.len() > best.len() || (clique.len() == best.len() && clique < best) {
            best = clique;
        }
    }
    Ok(Clique {
        members: best.iter().map(|&k| o.benchmark_ids()[order[k]].clone()).collect(),
        threshold,
        greedy: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    pub u: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

fn check_samples(x: &[f64], y: &[f64]) -> Result<i64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("Mann-Whitney needs at least one observation per sample".into()));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("Mann-Whitney of non-finite values".into()));
    }
    let mut u2: i64 = 0;
    for a in x {
        for b in y {
            u2 += match a.partial_cmp(b).expect("finite") {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    Ok(u2)
}

/// Two-sided Mann–Whitney U test; `u` counts pairs with `x > y` plus half
/// the ties. Exact up to [`EXACT_MW_LIMIT`] pooled observations, normal
/// approximation above.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    if x.len() + y.len() <= EXACT_MW_LIMIT {
        mann_whitney_exact(x, y)
    } else {
        mann_whitney_normal(x, y)
    }
}

/// Exact permutation p-value; cost grows with the pooled rank sum.
pub fn mann_whitney_exact(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    let u2 = check_samples(x, y)?;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    Ok(MannWhitney {
        u: u2 as f64 / 2.0,
        p_two_sided: exact_p(&pooled, x.len(), u2),
        exact: true,
    })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn mann_whitney_normal(x: &[f64], y: &[f64]) -> Result<MannWhitney> {
    let u2 = check_samples(x, y)?;
    let (nx, ny) = (x.len(), y.len());
    let n = nx + ny;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let u = u2 as f64 / 2.0;
    let mu = (nx * ny) as f64 / 2.0;
    let ranks = crate::stats::doubled_ranks(&pooled);
    let mut tie_sizes: BTreeMap<i64, usize> = BTreeMap::new();
    ranks.iter().for_each(|r| *tie_sizes.entry(*r).or_default() += 1);
    let ties: f64 = tie_sizes.values().map(|&t| (t * t * t - t) as f64).sum();
    let nf = n as f64;
    let var = if n < 2 {
        0.0
    } else {
        (nx * ny) as f64 / 12.0 * ((nf + 1.0) - ties / (nf * (nf - 1.0)))
    };
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mu).abs() - 0.5).max(0.0) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    };
    Ok(MannWhitney {
        u,
        p_two_sided: p,
        exact: false,
    })
}

/// Exact two-sided p under random relabelling of the pooled values:
/// the share of labellings with `|U - mu| >= |U_obs - mu|`.
fn exact_p(pooled: &[f64], nx: usize, u2_obs: i64) -> f64 {
    let n = pooled.len();
    let ny = n - nx;
    let ranks = crate::stats::doubled_ranks(pooled);
    let max_sum: usize = ranks.iter().map(|&r| r as usize).sum();
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0u64; max_sum + 1]; nx + 1];
    ways[0][0] = 1;
    for &r in &ranks {
        let r = r as usize;
        for k in (1..=nx).rev() {
            for s in (r..=max_sum).rev() {
                ways[k][s] += ways[k - 1][s - r];
            }
        }
    }
    // doubled U = doubled rank sum - nx (nx + 1)
    let offset = (nx * (nx + 1)) as i64;
    let centre = (nx * ny) as i64;
    let obs = (u2_obs - centre).abs();
    let (mut hit, mut total) = (0u64, 0u64);
    for (s, &w) in ways[nx].iter().enumerate() {
        if w == 0 {
            continue;
        }
        total += w;
        if (s as i64 - offset - centre).abs() >= obs {
            hit += w;
        }
    }
    (hit as f64 / total as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasTest {
    pub n_within: usize,
    pub n_cross: usize,
    pub within_mean: Option<f64>,
    pub cross_mean: Option<f64>,
    /// `None` when either side has no pairs.
    pub test: Option<MannWhitney>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Within,
    Cross,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub a: String,
    pub b: String,
    pub group_a: String,
    pub group_b: String,
    pub relation: Relation,
    pub overlap: f64,
}

/// Every off-diagonal pair with its group relation; NaN pairs included.
pub fn pair_records(o: &OverlapMatrix, meta: &MetaTable, grouping: Grouping) -> Result<Vec<PairRecord>> {
    let labels = labels_of(o, meta, grouping)?;
    let ids = o.benchmark_ids();
    let mut out = Vec::new();
    for i in 0..o.len() {
        for j in i + 1..o.len() {
            out.push(PairRecord {
                a: ids[i].clone(),
                b: ids[j].clone(),
                group_a: labels[i].clone(),
                group_b: labels[j].clone(),
                relation: if labels[i] == labels[j] { Relation::Within } else { Relation::Cross },
                overlap: o.get(i, j),
            });
        }
    }
    Ok(out)
}

/// Within-group versus cross-group pair overlaps of one matrix.
pub fn bias_test(o: &OverlapMatrix, meta: &MetaTable, grouping: Grouping) -> Result<BiasTest> {
    let pairs = pair_records(o, meta, grouping)?;
    let pick = |rel: Relation| -> Vec<f64> {
        pairs
            .iter()
            .filter(|p| p.relation == rel && !p.overlap.is_nan())
            .map(|p| p.overlap)
            .collect()
    };
    let within = pick(Relation::Within);
    let cross = pick(Relation::Cross);
    let test = if within.is_empty() || cross.is_empty() {
        None
    } else {
        Some(mann_whitney_u(&within, &cross)?)
    };
    Ok(BiasTest {
        n_within: within.len(),
        n_cross: cross.len(),
        within_mean: mean_of(&within),
        cross_mean: mean_of(&cross),
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasComparison {
    pub grouping: Grouping,
    pub performance: BiasTest,
    pub signature: BiasTest,
}

/// Runs the same within/cross test on the performance and signature
/// matrices side by side.
pub fn group_bias_report(
    o_perf: &OverlapMatrix,
    o_sig: &OverlapMatrix,
    meta: &MetaTable,
    grouping: Grouping,
) -> Result<BiasComparison> {
    let mut a: Vec<&String> = o_perf.benchmark_ids().iter().collect();
    let mut b: Vec<&String> = o_sig.benchmark_ids().iter().collect();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::Invalid("performance and signature matrices cover different benchmarks".into()));
    }
    Ok(BiasComparison {
        grouping,
        performance: bias_test(o_perf, meta, grouping)?,
        signature: bias_test(o_sig, meta, grouping)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CliqueOptions {
    pub threshold: f64,
    pub greedy: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAnalysis {
    pub level: Level,
    pub grouping: Grouping,
    pub summary: CategorySummary,
    pub clique: Clique,
    pub bias_test: BiasTest,
    pub failed_pairs: usize,
}

pub fn analyze_level(o: &OverlapMatrix, meta: &MetaTable, grouping: Grouping, clique: CliqueOptions) -> Result<LevelAnalysis> {
    let clique = if clique.greedy {
        greedy_clique(o, clique.threshold)?
    } else {
        max_clique(o, clique.threshold)?
    };
    let n = o.len();
    let failed = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .filter(|&(i, j)| o.get(i, j).is_nan())
        .count();
    Ok(LevelAnalysis {
        level: o.level,
        grouping,
        summary: category_summary(o, meta, grouping)?,
        clique,
        bias_test: bias_test(o, meta, grouping)?,
        failed_pairs: failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hash: Option<String>,
    pub clique_threshold: f64,
    pub levels: Vec<LevelAnalysis>,
    pub bias: Vec<BiasComparison>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

pub fn write_pair_records(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("a\tb\tgroup_a\tgroup_b\trelation\toverlap\n");
    for r in records {
        let rel = match r.relation {
            Relation::Within => "within",
            Relation::Cross => "cross",
        };
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{rel}\t{}\n",
            r.a, r.b, r.group_a, r.group_b, r.overlap
        ));
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::BenchmarkMeta;

    fn meta(rows: &[(&str, &str, &str)]) -> MetaTable {
        MetaTable::from_records(
            rows.iter()
                .map(|(b, c, f)| BenchmarkMeta {
                    benchmark_id: b.to_string(),
                    category: c.to_string(),
                    family: f.to_string(),
                    question_format: "multi_choice".into(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn matrix(ids: &[&str], f: impl Fn(usize, usize) -> f64) -> OverlapMatrix {
        let n = ids.len();
        let mut pairs = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                pairs.push(f(i, j));
            }
        }
        OverlapMatrix::from_pairs(Level::Signature, ids.iter().map(|s| s.to_string()).collect(), &pairs).unwrap()
    }

    #[test]
    fn hand_aggregation() {
        let o = matrix(&["a", "b", "c", "d"], |i, j| match (i, j) {
            (0, 1) => 0.8,
            (2, 3) => 0.6,
            _ => 0.1,
        });
        let m = meta(&[("a", "x", "f"), ("b", "x", "f"), ("c", "y", "f"), ("d", "y", "f")]);
        let s = category_summary(&o, &m, Grouping::Category).unwrap();
        assert_eq!(s.within["x"], Some(0.8));
        assert_eq!(s.within["y"], Some(0.6));
        assert!((s.cross.unwrap() - 0.1).abs() < 1e-15);
        let single = category_summary(&o, &m, Grouping::Family).unwrap();
        assert_eq!(single.cross, None);
    }

    #[test]
    fn singleton_group_has_no_within_mean() {
        let o = matrix(&["a", "b", "c"], |_, _| 0.3);
        let m = meta(&[("a", "x", "f"), ("b", "x", "f"), ("c", "y", "f")]);
        let s = category_summary(&o, &m, Grouping::Category).unwrap();
        assert_eq!(s.within["y"], None);
        assert_eq!(s.within_overall, Some(0.3));
    }

    #[test]
    fn missing_label_is_an_error() {
        let o = matrix(&["a", "b"], |_, _| 0.3);
        let m = meta(&[("a", "x", "f")]);
        assert!(category_summary(&o, &m, Grouping::Category).is_err());
        assert!(bias_test(&o, &m, Grouping::Family).is_err());
    }

    #[test]
    fn clique_fixtures() {
        // triangle 1-2-3 plus 4 hanging off 1
        let o = matrix(&["1", "2", "3", "4"], |i, j| if j < 3 || (i, j) == (0, 3) { 0.9 } else { 0.0 });
        assert_eq!(max_clique(&o, 0.5).unwrap().members, ["1", "2", "3"]);
        let full = matrix(&["a", "b", "c", "d", "e"], |_, _| 0.7);
        assert_eq!(max_clique(&full, 0.5).unwrap().members.len(), 5);
        let empty = matrix(&["q", "b", "z"], |_, _| 0.0);
        assert_eq!(max_clique(&empty, 0.5).unwrap().members, ["b"]);
    }

    #[test]
    fn clique_tie_breaks_on_sorted_ids() {
        // two disjoint edges: {c, d} and {a, z}
        let o = matrix(&["c", "d", "z", "a"], |i, j| if (i, j) == (0, 1) || (i, j) == (2, 3) { 1.0 } else { 0.0 });
        assert_eq!(max_clique(&o, 0.5).unwrap().members, ["a", "z"]);
    }

    #[test]
    fn clique_size_limit_advises_greedy() {
        let ids: Vec<String> = (0..201).map(|k| format!("b{k:03}")).collect();
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let o = matrix(&refs, |i, j| if (i + j) % 3 == 0 { 0.9 } else { 0.0 });
        let err = max_clique(&o, 0.5).unwrap_err();
        assert!(err.to_string().contains("greedy"));
        let g = greedy_clique(&o, 0.5).unwrap();
        assert!(g.greedy && g.members.len() >= 2);
    }

    #[test]
    fn mann_whitney_fixtures() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!(r.exact);
        assert!((r.p_two_sided - 1.0 / 3.0).abs() < 1e-15);
        let same = mann_whitney_u(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(same.u, 4.5);
        assert_eq!(same.p_two_sided, 1.0);
        let y: Vec<f64> = (0..20).map(|k| k as f64 * 0.37).collect();
        let x: Vec<f64> = y.iter().map(|v| v + 10.0).collect();
        let shifted = mann_whitney_u(&x, &y).unwrap();
        assert!(!shifted.exact && shifted.u == 400.0 && shifted.p_two_sided < 0.001);
    }

    #[test]
    fn mann_whitney_degenerate_variance() {
        let r = mann_whitney_u(&[5.0; 8], &[5.0; 9]).unwrap();
        assert_eq!((r.u, r.p_two_sided), (36.0, 1.0));
    }

    #[test]
    fn pair_records_label_relations() {
        let o = matrix(&["a", "b", "c"], |_, j| j as f64 / 10.0);
        let m = meta(&[("a", "x", "f"), ("b", "x", "g"), ("c", "y", "g")]);
        let recs = pair_records(&o, &m, Grouping::Family).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].relation, Relation::Cross);
        assert_eq!(recs[2].relation, Relation::Within);
    }
}
