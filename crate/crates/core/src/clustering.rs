//! Node profiles `Z_i = (√n W_i; √n H_i; δ_i)` and their partition into clusters.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SisError};
use crate::nmf::FactorPair;
use crate::rng::{derive_indexed, rng_from_seed};

/// Column `i` is `(√n W_i; √n H_i; δ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeProfiles {
    pub k: usize,
    pub z: DMatrix<f64>,
}

impl NodeProfiles {
    pub fn new(fp: &FactorPair, curing: &[f64]) -> Result<Self> {
        let n = fp.n();
        if curing.len() != n {
            return Err(SisError::validation(format!(
                "factors cover {n} nodes but {} curing rates were given",
                curing.len()
            )));
        }
        let k = fp.k;
        let s = (n as f64).sqrt();
        let z = DMatrix::from_fn(2 * k + 1, n, |row, i| {
            if row < k {
                s * fp.w[(row, i)]
            } else if row < 2 * k {
                s * fp.h[(row - k, i)]
            } else {
                curing[i]
            }
        });
        Ok(NodeProfiles { k, z })
    }

    pub fn n(&self) -> usize {
        self.z.ncols()
    }

    /// Euclidean norm of the infectiousness block of node `i`.
    pub fn w_norm(&self, i: usize) -> f64 {
        self.z.view((0, i), (self.k, 1)).norm()
    }
}

/// A partition of the nodes with per-cluster mean profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub n: usize,
    pub k: usize,
    /// Cluster index of every node, in `0..r`.
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    /// `k × r`; column `j` is `Y_{w,j}`.
    pub yw: DMatrix<f64>,
    /// `k × r`; column `j` is `Y_{h,j}`.
    pub yh: DMatrix<f64>,
    pub ydelta: Vec<f64>,
}

impl Clustering {
    pub fn r(&self) -> usize {
        self.sizes.len()
    }

    /// Build clusters from a labeling; centers are the exact per-cluster means.
    pub fn from_assignment(profiles: &NodeProfiles, assignment: Vec<usize>, r: usize) -> Result<Self> {
        let n = profiles.n();
        let k = profiles.k;
        if assignment.len() != n {
            return Err(SisError::validation("assignment length differs from the node count"));
        }
        let mut sizes = vec![0usize; r];
        for &c in &assignment {
            if c >= r {
                return Err(SisError::validation(format!("cluster label {c} outside [0, {r})")));
            }
            sizes[c] += 1;
        }
        if let Some(j) = sizes.iter().position(|&s| s == 0) {
            return Err(SisError::validation(format!("cluster {j} is empty")));
        }
        let d = 2 * k + 1;
        let mut sums = DMatrix::<f64>::zeros(d, r);
        for (i, &c) in assignment.iter().enumerate() {
            let mut col = sums.column_mut(c);
            col += profiles.z.column(i);
        }
        for j in 0..r {
            let mut col = sums.column_mut(j);
            col /= sizes[j] as f64;
        }
        Ok(Clustering {
            n,
            k,
            assignment,
            sizes,
            yw: sums.rows(0, k).into_owned(),
            yh: sums.rows(k, k).into_owned(),
            ydelta: sums.row(2 * k).iter().copied().collect(),
        })
    }

    /// `G[(j, l)] = Y_{w,l}ᵀ Y_{h,j}`: the rate factor with which cluster `l` infects cluster `j`.
    pub fn coupling(&self) -> DMatrix<f64> {
        self.yh.transpose() * &self.yw
    }

    /// `G x` without forming `G`.
    pub fn coupling_apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.yw * nalgebra::DVector::from_column_slice(x);
        (self.yh.transpose() * v).iter().copied().collect()
    }

    pub fn sizes_f64(&self) -> Vec<f64> {
        self.sizes.iter().map(|&s| s as f64).collect()
    }

    /// Merge cluster `b` into cluster `a`; clusters above `b` shift down by one.
    pub fn merge(&self, a: usize, b: usize) -> Result<Clustering> {
        let r = self.r();
        if a >= r || b >= r || a == b {
            return Err(SisError::validation("merge needs two distinct existing clusters"));
        }
        let (na, nb) = (self.sizes[a] as f64, self.sizes[b] as f64);
        let mix = |m: &DMatrix<f64>| {
            let mut out = m.clone();
            let merged = (m.column(a) * na + m.column(b) * nb) / (na + nb);
            out.set_column(a, &merged);
            out.remove_column(b)
        };
        let mut ydelta = self.ydelta.clone();
        ydelta[a] = (self.ydelta[a] * na + self.ydelta[b] * nb) / (na + nb);
        ydelta.remove(b);
        let mut sizes = self.sizes.clone();
        sizes[a] += sizes[b];
        sizes.remove(b);
        let relabel = |c: usize| {
            let c = if c == b { a } else { c };
            if c > b {
                c - 1
            } else {
                c
            }
        };
        Ok(Clustering {
            n: self.n,
            k: self.k,
            assignment: self.assignment.iter().map(|&c| relabel(c)).collect(),
            sizes,
            yw: mix(&self.yw),
            yh: mix(&self.yh),
            ydelta,
        })
    }

    /// Relabel: old cluster `j` becomes cluster `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Clustering> {
        let r = self.r();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(SisError::validation("not a permutation of the cluster labels"));
        }
        let mut out = self.clone();
        for j in 0..r {
            let p = perm[j];
            out.sizes[p] = self.sizes[j];
            out.ydelta[p] = self.ydelta[j];
            out.yw.set_column(p, &self.yw.column(j));
            out.yh.set_column(p, &self.yh.column(j));
        }
        out.assignment = self.assignment.iter().map(|&c| perm[c]).collect();
        Ok(out)
    }
}

/// Every node is its own cluster.
pub fn singleton_clustering(profiles: &NodeProfiles) -> Clustering {
    let n = profiles.n();
    Clustering::from_assignment(profiles, (0..n).collect(), n).expect("singletons are a valid partition")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPolicy {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    /// Nodes with the largest infectiousness norm placed in their own clusters;
    /// `None` means `min(10, r / 10)`.
    pub outlier_singletons: Option<usize>,
}

impl Default for ClusterPolicy {
    fn default() -> Self {
        ClusterPolicy { seed: 0, restarts: 10, max_iter: 300, outlier_singletons: None }
    }
}

fn sq_dist(z: &DMatrix<f64>, i: usize, c: &DMatrix<f64>, j: usize) -> f64 {
    z.column(i).iter().zip(c.column(j).iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

struct KMeans {
    labels: Vec<usize>,
    inertia: f64,
}

/// Lloyd iterations on the columns of `z` from a k-means++ start.
fn kmeans(z: &DMatrix<f64>, groups: usize, seed: u64, max_iter: usize) -> KMeans {
    let m = z.ncols();
    let d = z.nrows();
    let mut rng = rng_from_seed(seed);
    let mut centers = DMatrix::<f64>::zeros(d, groups);
    let mut chosen = vec![false; m];
    let first = rng.random_range(0..m);
    centers.set_column(0, &z.column(first));
    chosen[first] = true;
    let mut best: Vec<f64> = (0..m).map(|i| sq_dist(z, i, &centers, 0)).collect();
    for g in 1..groups {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut p = m - 1;
            for (i, b) in best.iter().enumerate() {
                acc += b;
                if acc > u && *b > 0.0 {
                    p = i;
                    break;
                }
            }
            p
        } else {
            (0..m).find(|&i| !chosen[i]).unwrap_or(0)
        };
        chosen[pick] = true;
        centers.set_column(g, &z.column(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq_dist(z, i, &centers, g));
        }
    }

    let assign = |centers: &DMatrix<f64>| -> Vec<(usize, f64)> {
        (0..m)
            .into_par_iter()
            .map(|i| {
                let mut arg = 0;
                let mut dist = f64::INFINITY;
                for g in 0..groups {
                    let dg = sq_dist(z, i, centers, g);
                    if dg < dist {
                        dist = dg;
                        arg = g;
                    }
                }
                (arg, dist)
            })
            .collect()
    };

    let mut labels: Vec<usize> = vec![usize::MAX; m];
    let mut inertia = f64::INFINITY;
    for _ in 0..max_iter {
        let ad = assign(&centers);
        let mut next: Vec<usize> = ad.iter().map(|x| x.0).collect();
        let mut dist: Vec<f64> = ad.iter().map(|x| x.1).collect();
        repair_empty(z, &mut next, &mut dist, groups, &centers);
        let changed = next != labels;
        labels = next;
        centers = means(z, &labels, groups);
        inertia = (0..m).map(|i| sq_dist(z, i, &centers, labels[i])).sum();
        if !changed {
            break;
        }
    }
    KMeans { labels, inertia }
}

/// Fill empty cells by moving the member of the largest cluster farthest from its center.
fn repair_empty(z: &DMatrix<f64>, labels: &mut [usize], dist: &mut [f64], groups: usize, centers: &DMatrix<f64>) {
    loop {
        let mut sizes = vec![0usize; groups];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let largest = (0..groups).fold(0, |b, g| if sizes[g] > sizes[b] { g } else { b });
        let mut far = usize::MAX;
        for i in 0..labels.len() {
            if labels[i] == largest && (far == usize::MAX || dist[i] > dist[far]) {
                far = i;
            }
        }
        labels[far] = empty;
        dist[far] = sq_dist(z, far, centers, empty);
    }
}

fn means(z: &DMatrix<f64>, labels: &[usize], groups: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::<f64>::zeros(z.nrows(), groups);
    let mut counts = vec![0usize; groups];
    for (i, &l) in labels.iter().enumerate() {
        let mut c = sums.column_mut(l);
        c += z.column(i);
        counts[l] += 1;
    }
    for g in 0..groups {
        if counts[g] > 0 {
            let mut c = sums.column_mut(g);
            c /= counts[g] as f64;
        }
    }
    sums
}

/// Partition nodes into `r` clusters: the strongest spreaders become singletons and the rest
/// are grouped by k-means on the raw profiles.
pub fn cluster_nodes(profiles: &NodeProfiles, r: usize, policy: &ClusterPolicy) -> Result<Clustering> {
    let n = profiles.n();
    if r == 0 || r > n {
        return Err(SisError::validation(format!("cluster count r={r} must lie in [1, {n}]")));
    }
    let outliers = policy.outlier_singletons.unwrap_or((r / 10).min(10));
    if outliers >= r {
        return Err(SisError::validation(format!("{outliers} outlier singletons leave no room among {r} clusters")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|i| profiles.w_norm(i)).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let mut assignment = vec![usize::MAX; n];
    for (c, &i) in order.iter().take(outliers).enumerate() {
        assignment[i] = c;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| assignment[i] == usize::MAX).collect();
    let groups = r - outliers;
    let z = DMatrix::from_fn(profiles.z.nrows(), rest.len(), |row, c| profiles.z[(row, rest[c])]);
    let mut best: Option<KMeans> = None;
    for t in 0..policy.restarts.max(1) {
        let run = kmeans(&z, groups, derive_indexed(policy.seed, "kmeans", t as u64), policy.max_iter);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let labels = best.expect("at least one restart").labels;
    for (c, &i) in rest.iter().enumerate() {
        assignment[i] = outliers + labels[c];
    }
    Clustering::from_assignment(profiles, assignment, r)
}

/// Serializable centers of a [`Clustering`]; the labels go to a separate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterCenters {
    pub n: usize,
    pub k: usize,
    pub sizes: Vec<usize>,
    /// One inner vector per cluster.
    pub yw: Vec<Vec<f64>>,
    pub yh: Vec<Vec<f64>>,
    pub ydelta: Vec<f64>,
}

impl Clustering {
    pub fn centers(&self) -> ClusterCenters {
        let cols = |m: &DMatrix<f64>| (0..m.ncols()).map(|j| m.column(j).iter().copied().collect()).collect();
        ClusterCenters {
            n: self.n,
            k: self.k,
            sizes: self.sizes.clone(),
            yw: cols(&self.yw),
            yh: cols(&self.yh),
            ydelta: self.ydelta.clone(),
        }
    }

    pub fn from_centers(c: &ClusterCenters, assignment: Vec<usize>) -> Result<Self> {
        let r = c.sizes.len();
        if c.yw.len() != r || c.yh.len() != r || c.ydelta.len() != r {
            return Err(SisError::validation("center arrays disagree on the cluster count"));
        }
        if c.yw.iter().chain(&c.yh).any(|v| v.len() != c.k) {
            return Err(SisError::validation("center vectors disagree with k"));
        }
        if assignment.len() != c.n || c.sizes.iter().sum::<usize>() != c.n {
            return Err(SisError::validation("cluster sizes do not add up to n"));
        }
        let mut counts = vec![0usize; r];
        for &a in &assignment {
            if a >= r {
                return Err(SisError::validation("cluster label out of range"));
            }
            counts[a] += 1;
        }
        if counts != c.sizes {
            return Err(SisError::validation("assignment disagrees with stored sizes"));
        }
        let mat = |v: &Vec<Vec<f64>>| DMatrix::from_fn(c.k, r, |a, j| v[j][a]);
        Ok(Clustering {
            n: c.n,
            k: c.k,
            assignment,
            sizes: c.sizes.clone(),
            yw: mat(&c.yw),
            yh: mat(&c.yh),
            ydelta: c.ydelta.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn profiles(cols: &[[f64; 3]]) -> NodeProfiles {
        NodeProfiles { k: 1, z: DMatrix::from_fn(3, cols.len(), |r, c| cols[c][r]) }
    }

    fn pair(w: Vec<f64>, h: Vec<f64>) -> FactorPair {
        let n = w.len();
        FactorPair {
            k: 1,
            w: DMatrix::from_row_slice(1, n, &w),
            h: DMatrix::from_row_slice(1, n, &h),
            lambda: 0.0,
            objective: 0.0,
            iterations: 0,
            seed: 0,
            symmetric: false,
        }
    }

    #[test]
    fn complete_graph_profiles() {
        let p = NodeProfiles::new(&pair(vec![1.0; 10], vec![1.0; 10]), &[4.0; 10]).unwrap();
        let s = 10f64.sqrt();
        for i in 0..10 {
            assert_eq!(p.z.column(i).iter().copied().collect::<Vec<_>>(), vec![s, s, 4.0]);
        }
        let c = cluster_nodes(&p, 1, &ClusterPolicy::default()).unwrap();
        assert!((c.coupling()[(0, 0)] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn single_node_profile_is_unscaled() {
        let p = NodeProfiles::new(&pair(vec![0.3], vec![0.7]), &[2.0]).unwrap();
        assert_eq!(p.z.column(0).iter().copied().collect::<Vec<_>>(), vec![0.3, 0.7, 2.0]);
        assert!(NodeProfiles::new(&pair(vec![0.3], vec![0.7]), &[2.0, 1.0]).is_err());
    }

    #[test]
    fn identical_profiles_form_one_cluster() {
        let p = profiles(&[[1.0, 2.0, 3.0]; 5]);
        let c = cluster_nodes(&p, 1, &ClusterPolicy::default()).unwrap();
        assert_eq!(c.sizes, vec![5]);
        assert_eq!((c.yw[(0, 0)], c.yh[(0, 0)], c.ydelta[0]), (1.0, 2.0, 3.0));
        // identical points split into several clusters still yield non-empty cells
        let c = cluster_nodes(&p, 3, &ClusterPolicy::default()).unwrap();
        assert!(c.sizes.iter().all(|&s| s >= 1));
        assert_eq!(c.sizes.iter().sum::<usize>(), 5);
    }

    #[test]
    fn separated_groups_are_recovered() {
        let mut cols = vec![];
        for i in 0..6 {
            cols.push([0.0 + 0.01 * i as f64, 0.0, 1.0]);
            cols.push([5.0 + 0.01 * i as f64, 5.0, 1.0]);
        }
        let p = profiles(&cols);
        let c = cluster_nodes(&p, 2, &ClusterPolicy { outlier_singletons: Some(0), ..Default::default() }).unwrap();
        assert_eq!(c.sizes, vec![6, 6]);
        for i in (0..12).step_by(2) {
            assert_eq!(c.assignment[i], c.assignment[0]);
            assert_ne!(c.assignment[i + 1], c.assignment[0]);
        }
    }

    #[test]
    fn outliers_become_singletons() {
        let mut cols: Vec<[f64; 3]> = (0..20).map(|i| [1.0 + 0.01 * i as f64, 1.0, 1.0]).collect();
        cols[7] = [50.0, 1.0, 1.0];
        cols[13] = [40.0, 1.0, 1.0];
        let p = profiles(&cols);
        let c = cluster_nodes(&p, 4, &ClusterPolicy { outlier_singletons: Some(2), ..Default::default() }).unwrap();
        assert_eq!(c.assignment[7], 0);
        assert_eq!(c.assignment[13], 1);
        assert_eq!(&c.sizes[..2], &[1, 1]);
    }

    #[test]
    fn invalid_cluster_counts() {
        let p = profiles(&[[1.0, 1.0, 1.0]; 3]);
        assert!(cluster_nodes(&p, 4, &ClusterPolicy::default()).is_err());
        assert!(cluster_nodes(&p, 0, &ClusterPolicy::default()).is_err());
        assert!(cluster_nodes(&p, 2, &ClusterPolicy { outlier_singletons: Some(2), ..Default::default() }).is_err());
    }

    #[test]
    fn clustering_is_deterministic() {
        let cols: Vec<[f64; 3]> = (0..40).map(|i| [((i * 37) % 11) as f64, ((i * 17) % 7) as f64, 1.0]).collect();
        let p = profiles(&cols);
        let pol = ClusterPolicy { seed: 9, ..Default::default() };
        assert_eq!(cluster_nodes(&p, 5, &pol).unwrap(), cluster_nodes(&p, 5, &pol).unwrap());
    }

    #[test]
    fn singletons_copy_profiles() {
        let p = profiles(&[[1.0, 2.0, 3.0], [0.5, 0.1, 2.0], [0.0, 4.0, 1.5]]);
        let c = singleton_clustering(&p);
        assert_eq!(c.r(), 3);
        for j in 0..3 {
            assert_eq!(c.yw[(0, j)], p.z[(0, j)]);
            assert_eq!(c.yh[(0, j)], p.z[(1, j)]);
            assert_eq!(c.ydelta[j], p.z[(2, j)]);
        }
    }

    #[test]
    fn singleton_coupling_reproduces_rates() {
        let fp = pair(vec![0.2, 0.5, 0.9], vec![0.4, 0.3, 0.1]);
        let p = NodeProfiles::new(&fp, &[1.0; 3]).unwrap();
        let g = singleton_clustering(&p).coupling();
        for l in 0..3 {
            for j in 0..3 {
                assert!((g[(j, l)] / 3.0 - fp.reconstruct(l, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn merge_and_permute_preserve_totals() {
        let p = profiles(&[[1.0, 2.0, 3.0], [0.5, 0.1, 2.0], [0.0, 4.0, 1.5], [2.0, 2.0, 2.0]]);
        let c = Clustering::from_assignment(&p, vec![0, 1, 2, 1], 3).unwrap();
        let m = c.merge(0, 1).unwrap();
        let direct = Clustering::from_assignment(&p, vec![0, 0, 1, 0], 2).unwrap();
        assert_eq!(m.assignment, direct.assignment);
        assert!((m.yw.clone() - direct.yw).abs().max() < 1e-15);
        assert!((m.ydelta[0] - direct.ydelta[0]).abs() < 1e-15);
        let q = c.permute(&[2, 0, 1]).unwrap();
        assert_eq!(q.assignment, vec![2, 0, 1, 0]);
        assert_eq!(q.sizes, vec![2, 1, 1]);
        assert!(c.permute(&[0, 0, 1]).is_err());
    }

    #[test]
    fn centers_round_trip() {
        let p = profiles(&[[1.0, 2.0, 3.0], [0.5, 0.1, 2.0], [0.0, 4.0, 1.5]]);
        let c = Clustering::from_assignment(&p, vec![1, 0, 1], 2).unwrap();
        let back = Clustering::from_centers(&c.centers(), c.assignment.clone()).unwrap();
        assert_eq!(back, c);
    }
}
