//! Pearson correlation between filters and grouping of redundant ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor3};

/// Standard deviations below this count as constant vectors.
pub const DEGENERATE_STD: f64 = 1e-12;

/// Default grouping threshold.
pub const DEFAULT_THRESHOLD: f64 = 0.97;

/// Pearson correlation coefficient of two equal-length vectors.
///
/// When either vector is constant the coefficient is undefined; it is then
/// taken as 1 if the vectors agree elementwise within [`DEGENERATE_STD`] and
/// 0 otherwise, so dead filters correlate only with each other.
pub fn pcc<T: Scalar>(x: &[T], y: &[T]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    let a = Centered::new(x);
    let b = Centered::new(y);
    Ok(a.correlate(&b))
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("pcc of vectors with lengths {a} and {b}")));
    }
    if a < 2 {
        return Err(Error::Invalid(format!("pcc needs at least 2 values, got {a}")));
    }
    Ok(())
}

struct Centered {
    raw: Vec<f64>,
    dev: Vec<f64>,
    norm: f64,
    std: f64,
}

impl Centered {
    fn new<T: Scalar>(v: &[T]) -> Self {
        let raw: Vec<f64> = v.iter().map(|x| x.as_f64()).collect();
        let n = raw.len() as f64;
        let mean = raw.iter().sum::<f64>() / n;
        let dev: Vec<f64> = raw.iter().map(|x| x - mean).collect();
        let ss: f64 = dev.iter().map(|d| d * d).sum();
        Centered {
            raw,
            dev,
            norm: ss.sqrt(),
            std: (ss / n).sqrt(),
        }
    }

    fn correlate(&self, other: &Centered) -> f64 {
        if self.std < DEGENERATE_STD || other.std < DEGENERATE_STD {
            let equal = self
                .raw
                .iter()
                .zip(&other.raw)
                .all(|(a, b)| (a - b).abs() <= DEGENERATE_STD);
            return if equal { 1.0 } else { 0.0 };
        }
        let num: f64 = self.dev.iter().zip(&other.dev).map(|(a, b)| a * b).sum();
        (num / (self.norm * other.norm)).clamp(-1.0, 1.0)
    }
}

/// All-pairs PCC between the flattened windows of `summed`.
///
/// The upper triangle is computed and mirrored, so the result is exactly
/// symmetric; the diagonal is exactly 1.
pub fn pcc_matrix<T: Scalar>(summed: &Tensor3<T>) -> Result<Matrix<f64>> {
    let [h, w, f] = summed.shape();
    if f < 2 {
        return Err(Error::Invalid(format!("pcc matrix needs at least 2 filters, got {f}")));
    }
    check_lengths(h * w, h * w)?;
    let windows: Vec<Centered> = (0..f)
        .map(|k| summed.window(k).map(|v| Centered::new(&v)))
        .collect::<Result<_>>()?;
    let mut m = Matrix::zeros(f, f);
    for i in 0..f {
        m.set(i, i, 1.0);
        for j in i + 1..f {
            let r = windows[i].correlate(&windows[j]);
            m.set(i, j, r);
            m.set(j, i, r);
        }
    }
    Ok(m)
}

/// A set of mutually redundant filters; `keep` is the smallest member.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub members: Vec<usize>,
    pub keep: usize,
}

/// Connected components of the graph with an edge wherever
/// `matrix[i][j] >= threshold`, keeping components of two or more filters.
///
/// Groups are ordered by their smallest member.
pub fn group_filters(matrix: &Matrix<f64>, threshold: f64) -> Vec<Group> {
    let f = matrix.rows().min(matrix.cols());
    let mut parent: Vec<usize> = (0..f).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..f {
        for j in i + 1..f {
            if matrix.get(i, j) >= threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    // the smaller index becomes the root so roots are group minima
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); f];
    for i in 0..f {
        let root = find(&mut parent, i);
        members[root].push(i);
    }
    members
        .into_iter()
        .filter(|m| m.len() >= 2)
        .map(|m| Group { keep: m[0], members: m })
        .collect()
}

/// Similarity of one layer's filters at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub step: u64,
    pub layer_id: usize,
    pub matrix: Vec<Vec<f64>>,
    pub threshold: f64,
    pub groups: Vec<Group>,
}

impl SimilarityReport {
    pub fn new(step: u64, layer_id: usize, matrix: &Matrix<f64>, threshold: f64, groups: Vec<Group>) -> Self {
        SimilarityReport {
            step,
            layer_id,
            matrix: (0..matrix.rows()).map(|r| matrix.row(r).to_vec()).collect(),
            threshold,
            groups,
        }
    }

    /// Computes the matrix and groups for `summed` in one go.
    pub fn compute<T: Scalar>(step: u64, layer_id: usize, summed: &Tensor3<T>, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::Invalid(format!("pcc threshold {threshold} outside (0, 1]")));
        }
        let m = pcc_matrix(summed)?;
        let groups = group_filters(&m, threshold);
        Ok(SimilarityReport::new(step, layer_id, &m, threshold, groups))
    }

    pub fn filters(&self) -> usize {
        self.matrix.len()
    }

    /// 1-based group number of every filter, 0 for ungrouped filters.
    pub fn group_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.filters()];
        for (g, group) in self.groups.iter().enumerate() {
            for &m in &group.members {
                if m < ids.len() {
                    ids[m] = g + 1;
                }
            }
        }
        ids
    }

    /// Smallest PCC over all member pairs of `group`.
    pub fn min_within(&self, group: &Group) -> f64 {
        let mut min = 1.0f64;
        for (a, &i) in group.members.iter().enumerate() {
            for &j in &group.members[a + 1..] {
                min = min.min(self.matrix[i][j]);
            }
        }
        min
    }

    /// Largest off-diagonal PCC.
    pub fn max_off_diagonal(&self) -> f64 {
        let mut max = f64::NEG_INFINITY;
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j {
                    max = max.max(v);
                }
            }
        }
        max
    }

    /// The matrix as `f` comma-separated rows of full-precision values.
    pub fn heatmap_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.matrix {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeSet, VecDeque};

    fn formula(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx.sqrt() * syy.sqrt())
    }

    #[test]
    fn pcc_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pcc(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pcc(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let y = [1.0, 2.0, 3.05];
        assert!((pcc(&x, &y).unwrap() - formula(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn pcc_degenerate_rule() {
        let zero = [0.0; 5];
        let ramp = [0.0, 1.0, 2.0, 3.0, 4.0];
        assert_eq!(pcc(&zero, &zero).unwrap(), 1.0);
        assert_eq!(pcc(&zero, &ramp).unwrap(), 0.0);
        assert_eq!(pcc(&[2.0; 4], &[3.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn pcc_rejects_bad_lengths() {
        assert!(matches!(pcc(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::Shape(_))));
        assert!(pcc(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn matrix_matches_pairwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor3::from_fn([4, 4, 3], |_| rng.random_range(0.0..1.0));
        let m = pcc_matrix(&t).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j {
                    1.0
                } else {
                    formula(&t.window(i).unwrap(), &t.window(j).unwrap())
                };
                assert!((m.get(i, j) - want).abs() < 1e-12);
                assert_eq!(m.get(i, j).to_bits(), m.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn identical_maps_correlate_exactly() {
        let t = Tensor3::from_fn([3, 3, 2], |[i, j, _]| (i * 3 + j) as f64);
        let m = pcc_matrix(&t).unwrap();
        assert!((m.get(0, 1) - 1.0).abs() < 1e-12);
        assert!(pcc_matrix(&Tensor3::<f64>::zeros([3, 3, 1])).is_err());
    }

    fn matrix_with_edges(f: usize, edges: &[(usize, usize)], v: f64) -> Matrix<f64> {
        let mut m = Matrix::zeros(f, f);
        for i in 0..f {
            m.set(i, i, 1.0);
        }
        for &(a, b) in edges {
            m.set(a, b, v);
            m.set(b, a, v);
        }
        m
    }

    #[test]
    fn grouping_examples() {
        assert!(group_filters(&matrix_with_edges(16, &[], 0.0), 0.97).is_empty());
        let m = matrix_with_edges(16, &[(3, 4), (4, 9), (6, 11)], 0.98);
        let groups = group_filters(&m, 0.97);
        assert_eq!(
            groups,
            vec![
                Group { members: vec![3, 4, 9], keep: 3 },
                Group { members: vec![6, 11], keep: 6 },
            ]
        );
        assert!(group_filters(&m, 0.99).is_empty());
    }

    fn bfs_components(m: &Matrix<f64>, threshold: f64) -> BTreeSet<Vec<usize>> {
        let f = m.rows();
        let mut seen = vec![false; f];
        let mut out = BTreeSet::new();
        for start in 0..f {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(u) = queue.pop_front() {
                for v in 0..f {
                    if v != u && !seen[v] && m.get(u.min(v), u.max(v)) >= threshold {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            if comp.len() >= 2 {
                out.insert(comp);
            }
        }
        out
    }

    #[test]
    fn report_helpers() {
        let m = matrix_with_edges(4, &[(0, 2)], 0.985);
        let r = SimilarityReport::new(7, 0, &m, 0.97, group_filters(&m, 0.97));
        assert_eq!(r.group_ids(), vec![1, 0, 1, 0]);
        assert_eq!(r.min_within(&r.groups[0]), 0.985);
        assert_eq!(r.max_off_diagonal(), 0.985);
        let csv = r.heatmap_csv();
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(csv.lines().next().unwrap(), "1,0,0.985,0");
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<SimilarityReport>(&json).unwrap(), r);
    }

    proptest! {
        #[test]
        fn grouping_matches_bfs(seed in any::<u64>(), f in 2usize..20, threshold in 0.5f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut m = Matrix::zeros(f, f);
            for i in 0..f {
                m.set(i, i, 1.0);
                for j in i + 1..f {
                    let v = rng.random_range(0.0..1.0);
                    m.set(i, j, v);
                    m.set(j, i, v);
                }
            }
            let groups = group_filters(&m, threshold);
            let got: BTreeSet<Vec<usize>> = groups.iter().map(|g| g.members.clone()).collect();
            prop_assert_eq!(got, bfs_components(&m, threshold));
            for g in &groups {
                prop_assert_eq!(g.keep, g.members[0]);
            }
            prop_assert!(groups.windows(2).all(|w| w[0].keep < w[1].keep));
        }

        #[test]
        fn pcc_is_affine_invariant(
            x in proptest::collection::vec(-10.0f64..10.0, 3..40),
            a in 0.1f64..10.0,
            b in -10.0f64..10.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let base = pcc(&x, &y).unwrap();
            let moved: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            prop_assert!((pcc(&moved, &y).unwrap() - base).abs() < 1e-9);
            prop_assert!((-1.0..=1.0).contains(&base));
        }
    }
}
