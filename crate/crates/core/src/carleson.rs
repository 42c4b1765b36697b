//! Carleson sequences, testing constants, the exact embedding constant and the
//! stopping-time decomposition behind the maximal-function proof of the
//! embedding.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::linalg::{self, Mat};
use crate::maximal::{GridScalarFn, MaximalKind, MaximalOperator};
use crate::weights::{from_row_major, row_major, GridVectorFn, MatrixWeight};

/// Smallest eigenvalue allowed for a stored PSD matrix, relative to its norm.
pub const PSD_TOLERANCE: f64 = 1e-12;

/// Finitely supported map from dyadic intervals to PSD `d×d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CarlesonSequence {
    tree: DyadicTree,
    dim: usize,
    entries: BTreeMap<DyadicIndex, Mat>,
}

impl CarlesonSequence {
    pub fn new(depth: u32, dim: usize, entries: BTreeMap<DyadicIndex, Mat>) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        let mut clean = BTreeMap::new();
        for (index, m) in entries {
            tree.check(&index)?;
            if m.nrows() != dim || m.ncols() != dim {
                return Err(LabError::DimensionMismatch(format!(
                    "entry {index} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) || !linalg::is_symmetric(&m) {
                return Err(LabError::NotSpd(format!(
                    "entry {index} is not a finite symmetric matrix"
                )));
            }
            let eig = linalg::sym_eigen(&m);
            let scale = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if eig.eigenvalues.min() < -PSD_TOLERANCE * scale {
                return Err(LabError::NotSpd(format!(
                    "entry {index} has eigenvalue {:e}",
                    eig.eigenvalues.min()
                )));
            }
            clean.insert(index, linalg::symmetrize(&m));
        }
        Ok(Self {
            tree,
            dim,
            entries: clean,
        })
    }

    pub fn empty(depth: u32, dim: usize) -> Result<Self> {
        Self::new(depth, dim, BTreeMap::new())
    }

    /// Scalar sequence from `(index, a_I)` pairs.
    pub fn scalar(depth: u32, entries: &[(DyadicIndex, f64)]) -> Result<Self> {
        Self::new(
            depth,
            1,
            entries
                .iter()
                .map(|(i, a)| (*i, Mat::from_element(1, 1, *a)))
                .collect(),
        )
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tree(&self) -> &DyadicTree {
        &self.tree
    }

    pub fn get(&self, index: &DyadicIndex) -> Option<&Mat> {
        self.entries.get(index)
    }

    pub fn entries(&self) -> &BTreeMap<DyadicIndex, Mat> {
        &self.entries
    }

    pub fn to_file(&self) -> SequenceFile {
        SequenceFile::from_entries(self.depth(), self.dim, &self.entries)
    }

    pub fn from_file(file: &SequenceFile) -> Result<Self> {
        Self::new(file.depth, file.dim, file.to_entries()?)
    }

    fn check_weight(&self, weight: &MatrixWeight) -> Result<()> {
        if weight.depth() != self.depth() || weight.dim() != self.dim {
            return Err(LabError::DimensionMismatch(format!(
                "sequence has depth {} dim {}, weight has depth {} dim {}",
                self.depth(),
                self.dim,
                weight.depth(),
                weight.dim()
            )));
        }
        Ok(())
    }
}

/// `{ "depth": N, "dim": d, "entries": [ {"index": "k:p", "matrix": [row-major]} ] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceFile {
    pub depth: u32,
    pub dim: usize,
    pub entries: Vec<SequenceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub index: DyadicIndex,
    pub matrix: Vec<f64>,
}

impl SequenceFile {
    pub(crate) fn from_entries(
        depth: u32,
        dim: usize,
        entries: &BTreeMap<DyadicIndex, Mat>,
    ) -> Self {
        Self {
            depth,
            dim,
            entries: entries
                .iter()
                .map(|(index, m)| SequenceEntry {
                    index: *index,
                    matrix: row_major(m),
                })
                .collect(),
        }
    }

    pub(crate) fn to_entries(&self) -> Result<BTreeMap<DyadicIndex, Mat>> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let m = from_row_major(self.dim, &e.matrix)?;
            if out.insert(e.index, m).is_some() {
                return Err(LabError::InvalidSpec(format!(
                    "duplicate entry {}",
                    e.index
                )));
            }
        }
        Ok(out)
    }
}

/// Sums `values` over the subtree of every interval (flat order), bottom-up.
fn subtree_sums(tree: &DyadicTree, values: &mut [f64]) {
    for flat in (1..tree.num_intervals()).rev() {
        let parent = (flat - 1) / 2;
        values[parent] += values[flat];
    }
}

/// `C2 = sup_J (1/|J|) Σ_{I⊆J} ‖⟨W⟩_I^{1/2} A_I ⟨W⟩_I^{1/2}‖`.
pub fn testing_constant_norm(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<f64> {
    a.check_weight(weight)?;
    let tree = *weight.tree();
    let avg = weight.averages();
    let mut terms = vec![0.0; tree.num_intervals()];
    for (index, m) in a.entries() {
        let r = linalg::spd_power(&avg[index.flat()], 0.5)?;
        terms[index.flat()] = linalg::sym_spectral_norm(&(&r * m * &r));
    }
    subtree_sums(&tree, &mut terms);
    Ok(tree
        .intervals()
        .map(|j| terms[j.flat()] / j.measure())
        .fold(0.0, f64::max))
}

/// Least `C2` with `(1/|J|) Σ_{I⊆J} ⟨W⟩_I A_I ⟨W⟩_I ⪯ C2 ⟨W⟩_J` for all `J`.
pub fn testing_constant_matrix(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<f64> {
    a.check_weight(weight)?;
    let tree = *weight.tree();
    let d = weight.dim();
    let avg = weight.averages();
    let mut sums = vec![Mat::zeros(d, d); tree.num_intervals()];
    for (index, m) in a.entries() {
        let w = &avg[index.flat()];
        sums[index.flat()] = w * m * w;
    }
    for flat in (1..tree.num_intervals()).rev() {
        let child = sums[flat].clone();
        sums[(flat - 1) / 2] += child;
    }
    let mut best = 0.0f64;
    for j in tree.intervals() {
        let s = &sums[j.flat()];
        if s.iter().all(|&x| x == 0.0) {
            continue;
        }
        let r = linalg::spd_power(&avg[j.flat()], -0.5)?;
        best = best.max(linalg::lambda_max(&(&r * s * &r)) / j.measure());
    }
    Ok(best)
}

/// The symmetric matrix of `f ↦ Σ_I ⟨A_I ⟨W^{1/2}f⟩_I, ⟨W^{1/2}f⟩_I⟩` in the
/// orthonormal cell basis `x_c = 2^{-N/2} f_c` (cell-major, `d` entries per cell).
pub fn embedding_form(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<Mat> {
    a.check_weight(weight)?;
    let tree = *weight.tree();
    let d = weight.dim();
    let n = tree.num_cells() * d;
    let roots = weight.power(0.5)?;
    let mut q = Mat::zeros(n, n);
    for (index, m) in a.entries() {
        if m.iter().all(|&x| x == 0.0) {
            continue;
        }
        let range = tree.cell_range(index);
        let cells = range.len();
        let mut stacked = Mat::zeros(cells * d, d);
        for (row, c) in range.clone().enumerate() {
            stacked.view_mut((row * d, 0), (d, d)).copy_from(&roots[c]);
        }
        // 2^{-N} / |I|^2 with |I| = cells 2^{-N}
        let scale = tree.num_cells() as f64 / (cells * cells) as f64;
        let block = &stacked * m * stacked.transpose() * scale;
        let start = range.start * d;
        let mut view = q.view_mut((start, start), (cells * d, cells * d));
        view += block;
    }
    Ok(linalg::symmetrize(&q))
}

/// Exact least `C1` with `Σ_I ⟨A_I ⟨W^{1/2}f⟩_I, ⟨W^{1/2}f⟩_I⟩ <= C1 ‖f‖²_{L²}`:
/// the largest eigenvalue of [`embedding_form`].
pub fn embedding_constant(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<f64> {
    let q = embedding_form(weight, a)?;
    let eig = linalg::sym_eigen(&q);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Numeric(
            "eigenvalue solver returned non-finite values".into(),
        ));
    }
    Ok(eig.eigenvalues.max().max(0.0))
}

/// Scalar testing constant `sup_J (1/|J|) Σ_{I⊆J} a_I ⟨w⟩_I² / ⟨w⟩_J`.
pub fn scalar_testing_constant(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<f64> {
    require_scalar(weight, a)?;
    let tree = *weight.tree();
    let avg: Vec<f64> = weight.averages().iter().map(|m| m[(0, 0)]).collect();
    let mut terms = vec![0.0; tree.num_intervals()];
    for (index, m) in a.entries() {
        terms[index.flat()] = m[(0, 0)] * avg[index.flat()].powi(2);
    }
    subtree_sums(&tree, &mut terms);
    Ok(tree
        .intervals()
        .map(|j| terms[j.flat()] / j.measure() / avg[j.flat()])
        .fold(0.0, f64::max))
}

fn require_scalar(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<()> {
    if weight.dim() != 1 || a.dim() != 1 {
        return Err(LabError::DimensionMismatch(
            "scalar embedding requires d = 1".into(),
        ));
    }
    a.check_weight(weight)
}

/// `C1 / C2` for scalar data; `1` when both vanish.
pub fn scalar_cet_ratio(weight: &MatrixWeight, a: &CarlesonSequence) -> Result<f64> {
    require_scalar(weight, a)?;
    let c2 = scalar_testing_constant(weight, a)?;
    let c1 = embedding_constant(weight, a)?;
    if c2 == 0.0 {
        return if c1 == 0.0 {
            Ok(1.0)
        } else {
            Err(LabError::Numeric(format!(
                "embedding constant {c1:e} with vanishing testing constant"
            )))
        };
    }
    Ok(c1 / c2)
}

/// Level sets of `‖⟨W⟩_I^{-1/2}⟨W^{1/2}f⟩_I‖` by dyadic band.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingDecomposition {
    /// Maximal intervals of each band `k` (the band is `(2^{k-1}, 2^k]`).
    pub levels: BTreeMap<i32, Vec<DyadicIndex>>,
    /// Largest `k` such that the interval lies inside a member of `levels[k]`.
    pub star_assignment: BTreeMap<DyadicIndex, i32>,
    pub g: GridScalarFn,
    /// Band value of every interval, flat order.
    pub values: Vec<f64>,
}

/// `k` with `2^{k-1} < value <= 2^k`; an exact power of two `2^k` goes to band `k`.
pub fn band_of(value: f64) -> i32 {
    debug_assert!(value > 0.0 && value.is_finite());
    let mut k = value.log2().ceil() as i32;
    while (k as f64).exp2() < value {
        k += 1;
    }
    while ((k - 1) as f64).exp2() >= value {
        k -= 1;
    }
    k
}

pub fn stopping_time(weight: &MatrixWeight, f: &GridVectorFn) -> Result<StoppingDecomposition> {
    weight.check_compatible(f)?;
    let tree = *weight.tree();
    let values = MaximalOperator::new(MaximalKind::Mw, weight)?.interval_values(f)?;
    let bands: Vec<Option<i32>> = values
        .iter()
        .map(|&v| (v > 0.0).then(|| band_of(v)))
        .collect();

    let mut levels: BTreeMap<i32, Vec<DyadicIndex>> = BTreeMap::new();
    let mut is_stop = vec![false; tree.num_intervals()];
    let mut star_assignment = BTreeMap::new();
    for i in tree.intervals() {
        let Some(k) = bands[i.flat()] else { continue };
        let ancestors = (0..i.level()).map(|l| i.ancestor_at(l).flat());
        let mut star = k;
        let mut maximal = true;
        for a in ancestors {
            if let Some(ka) = bands[a] {
                star = star.max(ka);
                if ka == k {
                    maximal = false;
                }
            }
        }
        if maximal {
            levels.entry(k).or_default().push(i);
            is_stop[i.flat()] = true;
        }
        star_assignment.insert(i, star);
    }

    let g: Vec<f64> = (0..tree.num_cells())
        .map(|c| {
            tree.cell_ancestors_flat(c)
                .filter(|&a| is_stop[a])
                .map(|a| values[a])
                .sum()
        })
        .collect();

    Ok(StoppingDecomposition {
        levels,
        star_assignment,
        g: GridScalarFn::from_parts(tree, g),
        values,
    })
}

/// `max_x g(x) / M_W f(x)` over cells where `M_W f > 0`; `0` if there are none.
pub fn check_g_domination(weight: &MatrixWeight, f: &GridVectorFn) -> Result<f64> {
    let dec = stopping_time(weight, f)?;
    let mw = crate::maximal::path_maxima(weight.tree(), &dec.values, weight.depth());
    Ok(dec
        .g
        .cells()
        .iter()
        .zip(&mw)
        .filter(|(_, &m)| m > 0.0)
        .map(|(g, m)| g / m)
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Vector;

    fn idx(k: u32, p: u64) -> DyadicIndex {
        DyadicIndex::new(k, p).unwrap()
    }

    fn sample_weight(depth: u32, dim: usize, salt: u64) -> MatrixWeight {
        let tree = DyadicTree::new(depth).unwrap();
        let cells = (0..tree.num_cells())
            .map(|j| {
                let g = Mat::from_fn(dim, dim, |r, c| {
                    ((salt as f64 * 2.3 + j as f64 * 1.1 + r as f64 * 0.7 + c as f64 * 0.29) * 5.3)
                        .sin()
                });
                &g * g.transpose() + Mat::identity(dim, dim) * 0.15
            })
            .collect();
        MatrixWeight::new(depth, dim, cells).unwrap()
    }

    fn sample_sequence(depth: u32, dim: usize, salt: u64) -> CarlesonSequence {
        let tree = DyadicTree::new(depth).unwrap();
        let entries = tree
            .intervals()
            .filter(|i| !(i.flat() as u64 + salt).is_multiple_of(3))
            .map(|i| {
                let g = Mat::from_fn(dim, dim, |r, c| {
                    ((salt as f64 + i.flat() as f64 * 0.61 + r as f64 * 1.3 + c as f64) * 3.7).cos()
                });
                (i, &g * g.transpose() * i.measure())
            })
            .collect();
        CarlesonSequence::new(depth, dim, entries).unwrap()
    }

    #[test]
    fn zero_sequence() {
        let w = sample_weight(3, 2, 1);
        let a = CarlesonSequence::empty(3, 2).unwrap();
        assert_eq!(testing_constant_norm(&w, &a).unwrap(), 0.0);
        assert_eq!(testing_constant_matrix(&w, &a).unwrap(), 0.0);
        assert_eq!(embedding_constant(&w, &a).unwrap(), 0.0);
    }

    #[test]
    fn identity_root_examples() {
        let w = MatrixWeight::identity(3, 2).unwrap();
        let mut e = BTreeMap::new();
        e.insert(DyadicIndex::ROOT, Mat::identity(2, 2));
        let a = CarlesonSequence::new(3, 2, e).unwrap();
        assert!((testing_constant_norm(&w, &a).unwrap() - 1.0).abs() < 1e-14);
        assert!((testing_constant_matrix(&w, &a).unwrap() - 1.0).abs() < 1e-14);

        let w1 = MatrixWeight::identity(3, 1).unwrap();
        let a1 = CarlesonSequence::scalar(3, &[(DyadicIndex::ROOT, 1.0)]).unwrap();
        assert!((embedding_constant(&w1, &a1).unwrap() - 1.0).abs() < 1e-12);
        assert!((scalar_cet_ratio(&w1, &a1).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_testing_constant_brute_force() {
        for salt in 0..4 {
            let w = sample_weight(3, 2, salt);
            let a = sample_sequence(3, 2, salt);
            let tree = *w.tree();
            let mut best = 0.0f64;
            for j in tree.intervals() {
                let mut s = 0.0;
                for i in tree.intervals() {
                    if !j.contains(&i) {
                        continue;
                    }
                    if let Some(m) = a.get(&i) {
                        let r = linalg::spd_power(&w.average(&i).unwrap(), 0.5).unwrap();
                        s += linalg::spectral_norm(&(&r * m * &r));
                    }
                }
                best = best.max(s / j.measure());
            }
            let got = testing_constant_norm(&w, &a).unwrap();
            assert!((got - best).abs() <= 1e-12 * best.max(1.0));
        }
    }

    #[test]
    fn matrix_testing_constant_scalar_cross_check() {
        for salt in 0..5 {
            let w = sample_weight(4, 1, salt);
            let a = sample_sequence(4, 1, salt);
            let tree = *w.tree();
            let mut best = 0.0f64;
            for j in tree.intervals() {
                let mut s = 0.0;
                for i in tree.descendants(j, 4) {
                    if let Some(m) = a.get(&i) {
                        s += m[(0, 0)] * w.average(&i).unwrap()[(0, 0)].powi(2);
                    }
                }
                best = best.max(s / j.measure() / w.average(&j).unwrap()[(0, 0)]);
            }
            let m = testing_constant_matrix(&w, &a).unwrap();
            let s = scalar_testing_constant(&w, &a).unwrap();
            assert!((m - best).abs() <= 1e-12 * best);
            assert!((s - best).abs() <= 1e-12 * best);
        }
    }

    /// Q(f) evaluated directly from averages, independent of the assembled form.
    fn quadratic_form(w: &MatrixWeight, a: &CarlesonSequence, f: &GridVectorFn) -> f64 {
        let roots = w.power(0.5).unwrap();
        let mut total = 0.0;
        for (i, m) in a.entries() {
            let r = w.tree().cell_range(i);
            let count = r.len() as f64;
            let mut u = Vector::zeros(w.dim());
            for c in r {
                u += &roots[c] * f.cell(c);
            }
            u /= count;
            total += (m * &u).dot(&u);
        }
        total
    }

    #[test]
    fn embedding_form_matches_direct_evaluation() {
        let w = sample_weight(3, 2, 3);
        let a = sample_sequence(3, 2, 3);
        let q = embedding_form(&w, &a).unwrap();
        let flat: Vec<f64> = (0..16).map(|i| ((i as f64) * 0.77).sin()).collect();
        let f = GridVectorFn::from_flat(3, 2, &flat).unwrap();
        let x = Vector::from_vec(flat) * (-(3.0f64)).exp2().sqrt();
        let via_form = (&q * &x).dot(&x);
        let direct = quadratic_form(&w, &a, &f);
        assert!((via_form - direct).abs() <= 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn ordering_and_scalar_ratio() {
        for salt in 0..6 {
            let w = sample_weight(3, 2, salt);
            let a = sample_sequence(3, 2, salt);
            let c2 = testing_constant_matrix(&w, &a).unwrap();
            let c1 = embedding_constant(&w, &a).unwrap();
            assert!(c2 <= c1 + 1e-9);

            let w1 = sample_weight(4, 1, salt);
            let a1 = sample_sequence(4, 1, salt);
            let r = scalar_cet_ratio(&w1, &a1).unwrap();
            assert!((1.0 - 1e-9..=4.0 + 1e-9).contains(&r), "ratio {r}");
        }
        let w = MatrixWeight::identity(2, 1).unwrap();
        let a = CarlesonSequence::empty(2, 1).unwrap();
        assert_eq!(scalar_cet_ratio(&w, &a).unwrap(), 1.0);
    }

    #[test]
    fn embedding_monotone_in_sequence() {
        let w = sample_weight(3, 2, 2);
        let a = sample_sequence(3, 2, 2);
        let base = embedding_constant(&w, &a).unwrap();
        let mut bigger = a.entries().clone();
        let extra = Mat::from_row_slice(2, 2, &[0.3, 0.1, 0.1, 0.2]);
        bigger
            .entry(idx(2, 1))
            .and_modify(|m| *m += &extra)
            .or_insert(extra.clone());
        let b = CarlesonSequence::new(3, 2, bigger).unwrap();
        assert!(embedding_constant(&w, &b).unwrap() >= base - 1e-12);
    }

    #[test]
    fn rejects_non_psd_entries() {
        let mut e = BTreeMap::new();
        e.insert(
            DyadicIndex::ROOT,
            Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]),
        );
        assert!(matches!(
            CarlesonSequence::new(2, 2, e),
            Err(LabError::NotSpd(_))
        ));
        let mut e = BTreeMap::new();
        e.insert(idx(3, 0), Mat::identity(1, 1));
        assert!(CarlesonSequence::new(2, 1, e).is_err());
    }

    #[test]
    fn band_rule() {
        assert_eq!(band_of(1.0), 0);
        assert_eq!(band_of(2.0), 1);
        assert_eq!(band_of(2.0000001), 2);
        assert_eq!(band_of(0.5), -1);
        assert_eq!(band_of(0.75), 0);
        assert_eq!(band_of(1e-300), (1e-300f64).log2().ceil() as i32);
    }

    #[test]
    fn stopping_time_examples() {
        let w = MatrixWeight::identity(3, 2).unwrap();
        let zero = GridVectorFn::zeros(3, 2).unwrap();
        let dec = stopping_time(&w, &zero).unwrap();
        assert!(dec.levels.is_empty());
        assert!(dec.star_assignment.is_empty());
        assert!(dec.g.cells().iter().all(|&v| v == 0.0));
        assert_eq!(check_g_domination(&w, &zero).unwrap(), 0.0);

        let e = Vector::from_vec(vec![0.6, 0.8]);
        let f = GridVectorFn::constant(3, &e).unwrap();
        let dec = stopping_time(&w, &f).unwrap();
        assert_eq!(dec.levels.len(), 1);
        assert_eq!(dec.levels[&0], vec![DyadicIndex::ROOT]);
        assert!(dec.g.cells().iter().all(|&v| (v - 1.0).abs() < 1e-14));
        assert!(dec.star_assignment.values().all(|&k| k == 0));
        assert_eq!(dec.star_assignment.len(), 15);
        assert!((check_g_domination(&w, &f).unwrap() - 1.0).abs() < 1e-14);

        // value exactly 2 sits in band 1
        let f2 = GridVectorFn::constant(2, &Vector::from_vec(vec![2.0])).unwrap();
        let w1 = MatrixWeight::identity(2, 1).unwrap();
        let dec = stopping_time(&w1, &f2).unwrap();
        assert_eq!(dec.levels.keys().copied().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn stopping_time_structure() {
        for salt in 0..10 {
            let w = sample_weight(4, 2, salt);
            let flat: Vec<f64> = (0..32)
                .map(|i| ((i as f64 + salt as f64) * 1.37).sin() * 3.0)
                .collect();
            let f = GridVectorFn::from_flat(4, 2, &flat).unwrap();
            let dec = stopping_time(&w, &f).unwrap();
            for members in dec.levels.values() {
                for (x, a) in members.iter().enumerate() {
                    for b in &members[x + 1..] {
                        assert!(a.is_disjoint(b));
                    }
                }
            }
            for i in w.tree().intervals() {
                let nonzero = dec.values[i.flat()] > 0.0;
                assert_eq!(dec.star_assignment.contains_key(&i), nonzero);
                if let Some(&k) = dec.star_assignment.get(&i) {
                    let holder = dec.levels[&k].iter().any(|m| m.contains(&i));
                    assert!(holder);
                    for (&kk, members) in &dec.levels {
                        if kk > k {
                            assert!(!members.iter().any(|m| m.contains(&i)));
                        }
                    }
                }
            }
            assert!(check_g_domination(&w, &f).unwrap() <= 4.0 + 1e-9);
        }
    }
}
