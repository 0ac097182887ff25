//! Clustering quality metrics, classification metrics and the two classical
//! baseline clusterers (Lloyd's k-means and Louvain modularity search).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("AUROC is undefined: labels contain a single class")]
    SingleClass,
}

pub type Result<T> = std::result::Result<T, EvalError>;

const MAX_LLOYD_ITERS: usize = 300;

/// Hard assignment of nodes to clusters with dense ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_clusters: usize,
}

impl Partition {
    /// Relabels arbitrary ids densely, in order of first appearance.
    pub fn new(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let labels = raw
            .iter()
            .map(|&r| {
                let next = map.len();
                *map.entry(r).or_insert(next)
            })
            .collect();
        Self {
            labels,
            n_clusters: map.len(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_clusters(&self) -> usize {
        self.n_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.n_clusters];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Cluster-by-truth count table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Contingency {
    pub counts: Vec<Vec<usize>>,
    pub cluster_sizes: Vec<usize>,
    pub truth_sizes: Vec<usize>,
    pub n: usize,
}

pub fn contingency(c: &Partition, t: &Partition) -> Result<Contingency> {
    if c.len() != t.len() {
        return Err(EvalError::Contract(format!(
            "partitions cover different node sets ({} vs {} nodes)",
            c.len(),
            t.len()
        )));
    }
    if c.is_empty() {
        return Err(EvalError::Contract("partitions are empty".into()));
    }
    let mut counts = vec![vec![0; t.n_clusters()]; c.n_clusters()];
    for (&a, &b) in c.labels().iter().zip(t.labels()) {
        counts[a][b] += 1;
    }
    Ok(Contingency {
        counts,
        cluster_sizes: c.sizes(),
        truth_sizes: t.sizes(),
        n: c.len(),
    })
}

fn entropy_of(sizes: &[usize], n: usize) -> f64 {
    let n = n as f64;
    sizes
        .iter()
        .filter(|&&s| s > 0)
        .map(|&s| {
            let p = s as f64 / n;
            -p * p.ln()
        })
        .sum()
}

impl Contingency {
    pub fn purity(&self) -> f64 {
        let hits: usize = self.counts.iter().map(|row| row.iter().copied().max().unwrap_or(0)).sum();
        hits as f64 / self.n as f64
    }

    pub fn cluster_entropy(&self) -> f64 {
        entropy_of(&self.cluster_sizes, self.n)
    }

    pub fn truth_entropy(&self) -> f64 {
        entropy_of(&self.truth_sizes, self.n)
    }

    pub fn joint_entropy(&self) -> f64 {
        let n = self.n as f64;
        self.counts
            .iter()
            .flatten()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    pub fn mutual_information(&self) -> f64 {
        let n = self.n as f64;
        let mut mi = 0.0;
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c > 0 {
                    let c = c as f64;
                    mi += c / n * (n * c / (self.cluster_sizes[i] as f64 * self.truth_sizes[j] as f64)).ln();
                }
            }
        }
        mi.max(0.0)
    }

    /// Expected mutual information of two random partitions with these
    /// marginals under the permutation (hypergeometric) model.
    pub fn expected_mutual_information(&self) -> f64 {
        let n = self.n;
        let lf = log_factorials(n);
        let nf = n as f64;
        let mut emi = 0.0;
        for &a in &self.cluster_sizes {
            for &b in &self.truth_sizes {
                let lo = (a + b).saturating_sub(n).max(1);
                let hi = a.min(b);
                for k in lo..=hi {
                    let kf = k as f64;
                    let term = kf / nf * (nf * kf / (a as f64 * b as f64)).ln();
                    let log_p = lf[a] + lf[b] + lf[n - a] + lf[n - b]
                        - lf[n]
                        - lf[k]
                        - lf[a - k]
                        - lf[b - k]
                        - lf[n + k - a - b];
                    emi += term * log_p.exp();
                }
            }
        }
        emi
    }
}

fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    out.push(0.0);
    for i in 1..=n {
        out.push(out[i - 1] + (i as f64).ln());
    }
    out
}

pub fn purity(c: &Partition, t: &Partition) -> Result<f64> {
    Ok(contingency(c, t)?.purity())
}

/// Mutual information normalised by the arithmetic mean of both entropies.
/// Two single-cluster partitions score 1.
pub fn nmi(c: &Partition, t: &Partition) -> Result<f64> {
    let ct = contingency(c, t)?;
    Ok(nmi_from(&ct))
}

fn nmi_from(ct: &Contingency) -> f64 {
    let (hc, ht) = (ct.cluster_entropy(), ct.truth_entropy());
    if hc == 0.0 && ht == 0.0 {
        return 1.0;
    }
    (ct.mutual_information() / (0.5 * (hc + ht))).clamp(0.0, 1.0)
}

/// Unnormalised chance-corrected form `H(C) - H(C|T) - E[H(C) - H(C|T)]`,
/// i.e. MI minus its permutation-model expectation.
pub fn nmi_literal(c: &Partition, t: &Partition) -> Result<f64> {
    let ct = contingency(c, t)?;
    Ok(ct.mutual_information() - ct.expected_mutual_information())
}

/// `1 - H(C|T) / H(C)`; 1 when `C` is a single cluster.
pub fn homogeneity(c: &Partition, t: &Partition) -> Result<f64> {
    Ok(homogeneity_from(&contingency(c, t)?))
}

fn homogeneity_from(ct: &Contingency) -> f64 {
    let hc = ct.cluster_entropy();
    if hc == 0.0 {
        return 1.0;
    }
    let h_c_given_t = ct.joint_entropy() - ct.truth_entropy();
    (1.0 - h_c_given_t / hc).clamp(0.0, 1.0)
}

/// Conventional homogeneity `1 - H(T|C) / H(T)`; 1 when `T` is a single class.
pub fn homogeneity_standard(c: &Partition, t: &Partition) -> Result<f64> {
    Ok(homogeneity_standard_from(&contingency(c, t)?))
}

fn homogeneity_standard_from(ct: &Contingency) -> f64 {
    let ht = ct.truth_entropy();
    if ht == 0.0 {
        return 1.0;
    }
    let h_t_given_c = ct.joint_entropy() - ct.cluster_entropy();
    (1.0 - h_t_given_c / ht).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterReport {
    pub purity: f64,
    pub nmi: f64,
    pub nmi_literal: f64,
    pub homogeneity: f64,
    pub homogeneity_std: f64,
    /// Set when the clustering has a single cluster and homogeneity fell
    /// back to its by-convention value of 1.
    pub single_cluster: bool,
    pub contingency: Contingency,
}

pub fn cluster_report(c: &Partition, t: &Partition) -> Result<ClusterReport> {
    let ct = contingency(c, t)?;
    Ok(ClusterReport {
        purity: ct.purity(),
        nmi: nmi_from(&ct),
        nmi_literal: ct.mutual_information() - ct.expected_mutual_information(),
        homogeneity: homogeneity_from(&ct),
        homogeneity_std: homogeneity_standard_from(&ct),
        single_cluster: c.n_clusters() == 1,
        contingency: ct,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    pub partition: Partition,
    /// Raw cluster index per point, aligned with `centroids`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Lloyd's k-means on the rows of `points` with k-means++ seeding.
pub fn lloyd(points: &Tensor, k: usize, seed: u64) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(EvalError::Contract(format!("need 1 <= k <= {n} points, got k = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = |i: usize| points.row_slice(i);

    let mut centroids: Vec<Vec<f64>> = vec![row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.push(row(pick).to_vec());
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), centroids.last().unwrap()));
        }
    }

    let nearest = |centroids: &[Vec<f64>], i: usize| {
        let mut best = (0, f64::INFINITY);
        for (c, cen) in centroids.iter().enumerate() {
            let d = sq_dist(row(i), cen);
            if d < best.1 {
                best = (c, d);
            }
        }
        best
    };

    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        let mut changed = false;
        for i in 0..n {
            let (c, _) = nearest(&centroids, i);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its own centroid.
        let mut counts = vec![0usize; k];
        for &a in &assignment {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| {
                    let da = sq_dist(row(a), &centroids[assignment[a]]);
                    let db = sq_dist(row(b), &centroids[assignment[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                });
            if let Some(i) = far {
                counts[assignment[i]] -= 1;
                assignment[i] = c;
                counts[c] = 1;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; points.cols()]; k];
        for i in 0..n {
            for (s, v) in sums[assignment[i]].iter_mut().zip(row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            converged = true;
            break;
        }
    }
    let inertia = (0..n).map(|i| sq_dist(row(i), &centroids[assignment[i]])).sum();
    Ok(KMeansResult {
        partition: Partition::new(&assignment),
        assignment,
        centroids,
        inertia,
        iterations,
        converged,
    })
}

#[derive(Clone, Debug)]
pub struct LouvainResult {
    pub partition: Partition,
    pub modularity: f64,
    /// Modularity on the input graph after each aggregation phase.
    pub phase_modularity: Vec<f64>,
    /// Number of negative entries clipped to zero.
    pub clipped: usize,
}

/// Weighted Newman modularity of `partition` on a symmetric nonnegative graph.
pub fn modularity(adj: &Tensor, partition: &Partition) -> f64 {
    let n = adj.rows();
    let degree: Vec<f64> = (0..n).map(|i| adj.row_slice(i).iter().sum()).collect();
    let two_m: f64 = degree.iter().sum();
    if two_m <= 0.0 {
        return 0.0;
    }
    let k = partition.n_clusters();
    let mut inside = vec![0.0; k];
    let mut total = vec![0.0; k];
    let labels = partition.labels();
    for i in 0..n {
        total[labels[i]] += degree[i];
        for j in 0..n {
            if labels[i] == labels[j] {
                inside[labels[i]] += adj.get(i, j);
            }
        }
    }
    (0..k).map(|c| inside[c] / two_m - (total[c] / two_m).powi(2)).sum()
}

/// Louvain community detection. Negative weights are clipped to zero; the
/// graph is symmetrised as `(W + W^T) / 2`.
pub fn louvain(adj: &Tensor, seed: u64) -> Result<LouvainResult> {
    let n = adj.rows();
    if n == 0 || adj.cols() != n {
        return Err(EvalError::Contract(format!(
            "louvain needs a non-empty square matrix, got {}x{}",
            adj.rows(),
            adj.cols()
        )));
    }
    let mut clipped = 0;
    let graph = Tensor::from_fn(n, n, |i, j| {
        let v = 0.5 * (adj.get(i, j) + adj.get(j, i));
        if v < 0.0 || adj.get(i, j) < 0.0 {
            clipped += 1;
        }
        v.max(0.0)
    });
    if graph.data().iter().all(|&v| v == 0.0) {
        return Err(EvalError::Contract("louvain on a graph with no positive edges".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut membership: Vec<usize> = (0..n).collect();
    let mut level = graph.clone();
    let mut phase_modularity = vec![modularity(&graph, &Partition::new(&membership))];
    loop {
        let (local, moved) = local_moves(&level, &mut rng);
        if !moved {
            break;
        }
        let part = Partition::new(&local);
        for m in membership.iter_mut() {
            *m = part.labels()[*m];
        }
        let q = modularity(&graph, &Partition::new(&membership));
        assert!(
            q >= phase_modularity.last().unwrap() - 1e-12,
            "louvain modularity decreased across a phase"
        );
        phase_modularity.push(q);
        level = aggregate(&level, &part);
        if part.n_clusters() == 1 {
            break;
        }
    }
    let partition = Partition::new(&membership);
    Ok(LouvainResult {
        modularity: modularity(&graph, &partition),
        partition,
        phase_modularity,
        clipped,
    })
}

fn local_moves(g: &Tensor, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = g.rows();
    let degree: Vec<f64> = (0..n).map(|i| g.row_slice(i).iter().sum()).collect();
    let two_m: f64 = degree.iter().sum();
    let mut comm: Vec<usize> = (0..n).collect();
    let mut tot = degree.clone();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut moved_any = false;
    let mut links = vec![0.0; n];
    loop {
        let mut moved = false;
        for &i in &order {
            let own = comm[i];
            tot[own] -= degree[i];
            links.iter_mut().for_each(|l| *l = 0.0);
            for j in 0..n {
                if j != i && g.get(i, j) > 0.0 {
                    links[comm[j]] += g.get(i, j);
                }
            }
            let gain = |c: usize| links[c] - tot[c] * degree[i] / two_m;
            let mut best = (own, gain(own));
            for j in 0..n {
                let c = comm[j];
                if j != i && g.get(i, j) > 0.0 && c != best.0 {
                    let gc = gain(c);
                    if gc > best.1 + 1e-12 {
                        best = (c, gc);
                    }
                }
            }
            comm[i] = best.0;
            tot[best.0] += degree[i];
            if best.0 != own {
                moved = true;
                moved_any = true;
            }
        }
        if !moved {
            break;
        }
    }
    (comm, moved_any)
}

fn aggregate(g: &Tensor, part: &Partition) -> Tensor {
    let k = part.n_clusters();
    let labels = part.labels();
    let mut out = Tensor::zeros(k, k);
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            let (a, b) = (labels[i], labels[j]);
            out.set(a, b, out.get(a, b) + g.get(i, j));
        }
    }
    out
}

/// Rank-based AUROC with half credit for ties. Label 1 is positive.
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(EvalError::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::Contract("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&t| labels[t] == 1).count() as f64 * mid;
        i = j + 1;
    }
    let (p, q) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * q))
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(EvalError::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(preds.iter().zip(labels).filter(|(a, b)| a == b).count() as f64 / preds.len() as f64)
}

/// Scores of one hierarchy level or of the flattened assignment.
#[derive(Clone, Debug, Serialize)]
pub struct LevelReport {
    pub level: String,
    pub truth: &'static str,
    pub clusters: usize,
    pub report: ClusterReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct HierarchyReport {
    pub levels: Vec<LevelReport>,
    /// `(level, cluster, node, truth label)` rows for composition plots.
    pub memberships: Vec<(String, usize, usize, usize)>,
}

/// Node-level hard partition per layer: layer `i` composes the argmax
/// assignments of layers `0..=i`.
pub fn compose_hard(stack: &[Tensor]) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity(stack.len());
    let mut current: Vec<usize> = Vec::new();
    for (i, a) in stack.iter().enumerate() {
        let step = a.argmax_rows();
        current = if i == 0 {
            step
        } else {
            current.iter().map(|&c| step[c]).collect()
        };
        out.push(current.clone());
    }
    out
}

/// Scores the first level against `fine`, deeper levels and the flattened
/// product `flat` against `coarse`.
pub fn hierarchy_report(stack: &[Tensor], flat: &Tensor, fine: &Partition, coarse: &Partition) -> Result<HierarchyReport> {
    if stack.is_empty() {
        return Err(EvalError::Contract("empty assignment stack".into()));
    }
    let v = stack[0].rows();
    if fine.len() != v || coarse.len() != v || flat.rows() != v {
        return Err(EvalError::Contract(format!(
            "assignment covers {v} nodes but truths cover {}/{} and the flat assignment {}",
            fine.len(),
            coarse.len(),
            flat.rows()
        )));
    }
    for w in stack.windows(2) {
        if w[0].cols() != w[1].rows() {
            return Err(EvalError::Contract(format!(
                "assignment levels do not chain: {} clusters feed a {}-row matrix",
                w[0].cols(),
                w[1].rows()
            )));
        }
    }
    if fine.n_clusters() < coarse.n_clusters() {
        return Err(EvalError::Contract(format!(
            "fine truth has {} groups, fewer than coarse truth's {}",
            fine.n_clusters(),
            coarse.n_clusters()
        )));
    }
    let hard = compose_hard(stack);
    let mut levels = Vec::new();
    let mut memberships = Vec::new();
    for (i, h) in hard.iter().enumerate() {
        let (truth, name) = if i == 0 { (fine, "fine") } else { (coarse, "coarse") };
        let level = format!("{}", i + 1);
        levels.push(LevelReport {
            level: level.clone(),
            truth: name,
            clusters: stack[i].cols(),
            report: cluster_report(&Partition::new(h), truth)?,
        });
        memberships.extend(h.iter().enumerate().map(|(node, &c)| (level.clone(), c, node, truth.labels()[node])));
    }
    let flat_hard = flat.argmax_rows();
    levels.push(LevelReport {
        level: "flat".into(),
        truth: "coarse",
        clusters: flat.cols(),
        report: cluster_report(&Partition::new(&flat_hard), coarse)?,
    });
    memberships.extend(
        flat_hard
            .iter()
            .enumerate()
            .map(|(node, &c)| ("flat".to_string(), c, node, coarse.labels()[node])),
    );
    Ok(HierarchyReport { levels, memberships })
}

/// One `report.csv` row.
#[derive(Clone, Debug, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub level: String,
    pub purity: f64,
    pub nmi: f64,
    pub nmi_literal: f64,
    pub homogeneity: f64,
    pub homogeneity_std: f64,
}

impl ReportRow {
    pub fn new(method: &str, level: &str, r: &ClusterReport) -> Self {
        Self {
            method: method.into(),
            level: level.into(),
            purity: r.purity,
            nmi: r.nmi,
            nmi_literal: r.nmi_literal,
            homogeneity: r.homogeneity,
            homogeneity_std: r.homogeneity_std,
        }
    }
}

pub fn write_report_csv<W: Write>(rows: &[ReportRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_clusters_csv<W: Write>(rows: &[(String, usize, usize, usize)], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["level", "cluster", "node", "truth"])?;
    for (level, c, node, t) in rows {
        w.write_record([level.clone(), c.to_string(), node.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_entropy(labels: &[usize]) -> f64 {
        let n = labels.len() as f64;
        let mut seen: Vec<usize> = labels.to_vec();
        seen.sort();
        seen.dedup();
        seen.iter()
            .map(|&l| {
                let p = labels.iter().filter(|&&x| x == l).count() as f64 / n;
                -p * p.ln()
            })
            .sum()
    }

    fn brute_joint(c: &[usize], t: &[usize]) -> f64 {
        let pairs: Vec<usize> = c.iter().zip(t).map(|(&a, &b)| a * 1000 + b).collect();
        brute_entropy(&pairs)
    }

    fn brute_purity(c: &[usize], t: &[usize]) -> f64 {
        let n = c.len();
        let mut total = 0;
        for cl in 0..n {
            let members: Vec<usize> = (0..n).filter(|&i| c[i] == cl).collect();
            total += (0..n).map(|tl| members.iter().filter(|&&i| t[i] == tl).count()).max().unwrap_or(0);
        }
        total as f64 / n as f64
    }

    #[test]
    fn identical_partitions_score_one() {
        let t = Partition::new(&[0, 0, 1, 1, 2, 2, 2]);
        let r = cluster_report(&t, &t).unwrap();
        assert_eq!(r.purity, 1.0);
        assert!((r.nmi - 1.0).abs() < 1e-12);
        assert!((r.homogeneity - 1.0).abs() < 1e-12);
        assert!((r.homogeneity_std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn giant_cluster_purity_is_one_over_q() {
        let t = Partition::new(&[0, 0, 1, 1, 2, 2, 3, 3]);
        let c = Partition::new(&[0; 8]);
        assert_eq!(purity(&c, &t).unwrap(), 0.25);
        let r = cluster_report(&c, &t).unwrap();
        assert!(r.single_cluster);
        assert_eq!(r.homogeneity, 1.0);
        assert_eq!(r.nmi, 0.0);
    }

    #[test]
    fn mismatched_sizes_are_contract_errors() {
        let a = Partition::new(&[0, 1]);
        let b = Partition::new(&[0, 1, 1]);
        assert!(matches!(purity(&a, &b), Err(EvalError::Contract(_))));
    }

    #[test]
    fn independent_partitions_have_near_zero_nmi() {
        // Product-of-marginals layout: every (c, t) cell has the same count.
        let mut c = Vec::new();
        let mut t = Vec::new();
        for i in 0..4 {
            for j in 0..5 {
                for _ in 0..50 {
                    c.push(i);
                    t.push(j);
                }
            }
        }
        let n = nmi(&Partition::new(&c), &Partition::new(&t)).unwrap();
        assert!(n.abs() < 1e-12, "{n}");
    }

    #[test]
    fn entropies_match_brute_force_on_twenty_nodes() {
        let c = [0, 1, 2, 0, 1, 2, 3, 3, 0, 0, 1, 4, 4, 2, 2, 1, 0, 3, 4, 1];
        let t = [0, 0, 1, 1, 1, 2, 2, 2, 0, 1, 0, 2, 2, 1, 1, 0, 0, 2, 1, 0];
        let ct = contingency(&Partition::new(&c), &Partition::new(&t)).unwrap();
        assert!((ct.cluster_entropy() - brute_entropy(&c)).abs() < 1e-12);
        assert!((ct.truth_entropy() - brute_entropy(&t)).abs() < 1e-12);
        assert!((ct.joint_entropy() - brute_joint(&c, &t)).abs() < 1e-12);
    }

    #[test]
    fn expected_mi_matches_enumeration() {
        // Average MI over all distinct relabelings of a 6-node partition.
        let c = Partition::new(&[0, 0, 0, 1, 1, 2]);
        let t = Partition::new(&[0, 0, 1, 1, 1, 1]);
        let ct = contingency(&c, &t).unwrap();
        let mut perm: Vec<usize> = (0..6).collect();
        let mut total = 0.0;
        let mut count = 0;
        permute(&mut perm, 0, &mut |p| {
            let shuffled: Vec<usize> = p.iter().map(|&i| t.labels()[i]).collect();
            total += contingency(&c, &Partition::new(&shuffled)).unwrap().mutual_information();
            count += 1;
        });
        assert!((ct.expected_mutual_information() - total / count as f64).abs() < 1e-12);
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn lloyd_single_cluster_inertia_is_total_variance() {
        let p = Tensor::from_rows(&[vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, -1.0], vec![1.0, 1.0]]).unwrap();
        let r = lloyd(&p, 1, 7).unwrap();
        let mean = [7.0 / 4.0, 1.0];
        let var: f64 = (0..4).map(|i| sq_dist(p.row_slice(i), &mean)).sum();
        assert!((r.inertia - var).abs() < 1e-12);
        assert_eq!(r.partition.n_clusters(), 1);
    }

    #[test]
    fn lloyd_matches_exhaustive_optimum_on_nine_points() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.3, 0.1],
            vec![0.1, 0.4],
            vec![5.0, 5.0],
            vec![5.2, 4.7],
            vec![4.8, 5.3],
            vec![9.0, 0.0],
            vec![9.4, 0.2],
            vec![8.9, -0.3],
        ];
        let p = Tensor::from_rows(&pts).unwrap();
        let mut best = f64::INFINITY;
        let mut labels = [0usize; 9];
        for code in 0..3usize.pow(9) {
            let mut x = code;
            for l in labels.iter_mut() {
                *l = x % 3;
                x /= 3;
            }
            let mut inertia = 0.0;
            for c in 0..3 {
                let members: Vec<&Vec<f64>> = (0..9).filter(|&i| labels[i] == c).map(|i| &pts[i]).collect();
                if members.is_empty() {
                    continue;
                }
                let m = members.len() as f64;
                let mean = [members.iter().map(|v| v[0]).sum::<f64>() / m, members.iter().map(|v| v[1]).sum::<f64>() / m];
                inertia += members.iter().map(|v| sq_dist(v, &mean)).sum::<f64>();
            }
            best = best.min(inertia);
        }
        let r = (0..5).map(|s| lloyd(&p, 3, s).unwrap().inertia).fold(f64::INFINITY, f64::min);
        assert!((r - best).abs() < 1e-9, "{r} vs {best}");
    }

    #[test]
    fn lloyd_repairs_empty_clusters() {
        // Duplicate points force k-means++ to seed coincident centroids.
        let p = Tensor::from_rows(&[vec![1.0], vec![1.0], vec![1.0], vec![2.0]]).unwrap();
        let r = lloyd(&p, 3, 0).unwrap();
        assert_eq!(r.partition.n_clusters(), 3);
    }

    fn clique_pair(a: usize, b: usize) -> Tensor {
        Tensor::from_fn(a + b, a + b, |i, j| {
            if i != j && ((i < a) == (j < a)) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn louvain_separates_disconnected_cliques() {
        let r = louvain(&clique_pair(4, 5), 3).unwrap();
        assert_eq!(r.partition.n_clusters(), 2);
        let l = r.partition.labels();
        assert!(l[..4].iter().all(|&x| x == l[0]));
        assert!(l[4..].iter().all(|&x| x == l[4]));
        assert_ne!(l[0], l[4]);
    }

    #[test]
    fn louvain_keeps_single_clique_whole() {
        let g = Tensor::from_fn(6, 6, |i, j| if i != j { 1.0 } else { 0.0 });
        assert_eq!(louvain(&g, 1).unwrap().partition.n_clusters(), 1);
    }

    #[test]
    fn louvain_beats_planted_truth_on_two_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = {
            let mut m = Tensor::zeros(16, 16);
            for i in 0..16 {
                for j in (i + 1)..16 {
                    let p = if (i < 8) == (j < 8) { 0.8 } else { 0.15 };
                    let w = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                    m.set(i, j, w);
                    m.set(j, i, w);
                }
            }
            m
        };
        let truth = Partition::new(&(0..16).map(|i| i / 8).collect::<Vec<_>>());
        let r = louvain(&g, 0).unwrap();
        assert!(r.modularity >= modularity(&g, &truth) - 1e-9);
        assert!(r.phase_modularity.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn louvain_rejects_empty_graphs_and_counts_clips() {
        assert!(louvain(&Tensor::zeros(3, 3), 0).is_err());
        let mut g = clique_pair(3, 3);
        g.set(0, 5, -1.0);
        g.set(5, 0, -1.0);
        assert_eq!(louvain(&g, 0).unwrap().clipped, 2);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass));
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let s = [0.3, 0.7, 0.7, 0.1, 0.9, 0.3, 0.5, 0.2, 0.7, 0.4];
        let y = [0, 1, 0, 0, 1, 1, 0, 1, 1, 0];
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for i in 0..10 {
            for j in 0..10 {
                if y[i] == 1 && y[j] == 0 {
                    pairs += 1.0;
                    credit += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!((auroc(&s, &y).unwrap() - credit / pairs).abs() < 1e-15);
    }

    #[test]
    fn accuracy_counts_matches() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]).unwrap(), 0.75);
    }

    #[test]
    fn hierarchy_of_truth_equal_assignments_scores_one() {
        // 6 nodes, fine {01}{23}{45}, coarse {0123}{45}
        let a1 = Tensor::from_fn(6, 3, |i, j| if i / 2 == j { 1.0 } else { 0.0 });
        let a2 = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let flat = a1.matmul(&a2).unwrap();
        let fine = Partition::new(&[0, 0, 1, 1, 2, 2]);
        let coarse = Partition::new(&[0, 0, 0, 0, 1, 1]);
        let h = hierarchy_report(&[a1, a2], &flat, &fine, &coarse).unwrap();
        assert_eq!(h.levels.len(), 3);
        for l in &h.levels {
            assert_eq!(l.report.purity, 1.0);
            assert!((l.report.nmi - 1.0).abs() < 1e-12);
        }
        assert_eq!(h.memberships.len(), 18);
    }

    #[test]
    fn hierarchy_rejects_granularity_mismatch() {
        let a1 = Tensor::filled(6, 3, 1.0 / 3.0);
        let a2 = Tensor::filled(2, 2, 0.5);
        let fine = Partition::new(&[0, 0, 1, 1, 2, 2]);
        let flat = Tensor::filled(6, 2, 0.5);
        assert!(hierarchy_report(&[a1, a2], &flat, &fine, &fine).is_err());
    }

    #[test]
    fn report_csv_has_expected_header() {
        let t = Partition::new(&[0, 1, 1]);
        let r = cluster_report(&t, &t).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&[ReportRow::new("thc", "1", &r)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("method,level,purity,nmi,nmi_literal,homogeneity,homogeneity_std\n"));
    }

    proptest! {
        #[test]
        fn metrics_match_brute_force(
            (c, t) in (2usize..=25).prop_flat_map(|n| (
                proptest::collection::vec(0usize..6, n),
                proptest::collection::vec(0usize..5, n),
            ))
        ) {
            let (pc, pt) = (Partition::new(&c), Partition::new(&t));
            let r = cluster_report(&pc, &pt).unwrap();
            prop_assert!((r.purity - brute_purity(pc.labels(), pt.labels())).abs() < 1e-12);
            let (hc, ht, hj) = (brute_entropy(&c), brute_entropy(&t), brute_joint(&c, &t));
            let mi = hc + ht - hj;
            let nmi = if hc == 0.0 && ht == 0.0 { 1.0 } else { (mi / (0.5 * (hc + ht))).clamp(0.0, 1.0) };
            prop_assert!((r.nmi - nmi).abs() < 1e-12);
            let hom = if hc == 0.0 { 1.0 } else { 1.0 - (hj - ht) / hc };
            prop_assert!((r.homogeneity - hom.clamp(0.0, 1.0)).abs() < 1e-12);
            for s in [r.purity, r.nmi, r.homogeneity, r.homogeneity_std] {
                prop_assert!((0.0..=1.0).contains(&s));
            }
            prop_assert!(r.purity >= 1.0 / pt.n_clusters() as f64 - 1e-12);
        }

        #[test]
        fn metrics_are_permutation_invariant(
            c in proptest::collection::vec(0usize..5, 12),
            t in proptest::collection::vec(0usize..4, 12),
            shift in 1usize..7,
        ) {
            let relabeled: Vec<usize> = c.iter().map(|&x| (x + shift) * 3 % 97).collect();
            let a = cluster_report(&Partition::new(&c), &Partition::new(&t)).unwrap();
            let b = cluster_report(&Partition::new(&relabeled), &Partition::new(&t)).unwrap();
            prop_assert!((a.purity - b.purity).abs() < 1e-12);
            prop_assert!((a.nmi - b.nmi).abs() < 1e-12);
            prop_assert!((a.nmi_literal - b.nmi_literal).abs() < 1e-12);
            prop_assert!((a.homogeneity - b.homogeneity).abs() < 1e-12);
            prop_assert!((a.homogeneity_std - b.homogeneity_std).abs() < 1e-12);
        }
    }
}
