//! The H¹-type and BMO-type spaces of matrix sequences indexed by dyadic
//! intervals, their trace pairing, and the level-set decomposition used to
//! bound that pairing.

use std::collections::BTreeMap;

use crate::carleson::SequenceFile;
use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::linalg::{self, Mat};
use crate::maximal::GridScalarFn;

/// Finitely supported map from dyadic intervals to arbitrary real `d×d` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSequence {
    tree: DyadicTree,
    dim: usize,
    entries: BTreeMap<DyadicIndex, Mat>,
}

impl MatrixSequence {
    pub fn new(depth: u32, dim: usize, entries: BTreeMap<DyadicIndex, Mat>) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        for (index, m) in &entries {
            tree.check(index)?;
            if m.nrows() != dim || m.ncols() != dim {
                return Err(LabError::DimensionMismatch(format!(
                    "entry {index} is {}x{}, expected {dim}x{dim}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(LabError::InvalidSpec(format!(
                    "entry {index} is not finite"
                )));
            }
        }
        Ok(Self { tree, dim, entries })
    }

    pub fn empty(depth: u32, dim: usize) -> Result<Self> {
        Self::new(depth, dim, BTreeMap::new())
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

    pub fn entries(&self) -> &BTreeMap<DyadicIndex, Mat> {
        &self.entries
    }

    pub fn get(&self, index: &DyadicIndex) -> Option<&Mat> {
        self.entries.get(index)
    }

    pub fn scaled(&self, c: f64) -> MatrixSequence {
        MatrixSequence {
            tree: self.tree,
            dim: self.dim,
            entries: self.entries.iter().map(|(i, m)| (*i, m * c)).collect(),
        }
    }

    pub fn try_add(&self, other: &MatrixSequence) -> Result<MatrixSequence> {
        self.check_same_shape(other)?;
        let mut entries = self.entries.clone();
        for (i, m) in &other.entries {
            entries
                .entry(*i)
                .and_modify(|x| *x += m)
                .or_insert_with(|| m.clone());
        }
        Ok(MatrixSequence {
            tree: self.tree,
            dim: self.dim,
            entries,
        })
    }

    fn check_same_shape(&self, other: &MatrixSequence) -> Result<()> {
        if self.depth() != other.depth() || self.dim != other.dim {
            return Err(LabError::DimensionMismatch(format!(
                "sequences of depth {} dim {} and depth {} dim {}",
                self.depth(),
                self.dim,
                other.depth(),
                other.dim
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> SequenceFile {
        SequenceFile::from_entries(self.depth(), self.dim, &self.entries)
    }

    pub fn from_file(file: &SequenceFile) -> Result<Self> {
        Self::new(file.depth, file.dim, file.to_entries()?)
    }
}

/// `S(x) = (Σ_{I ∋ x} ‖S_I‖² / |I|)^{1/2}` with the spectral norm.
pub fn square_function(s: &MatrixSequence) -> GridScalarFn {
    let tree = *s.tree();
    let mut acc = vec![0.0f64; tree.num_intervals()];
    for (i, m) in s.entries() {
        acc[i.flat()] = linalg::spectral_norm(m).powi(2) / i.measure();
    }
    for flat in 1..tree.num_intervals() {
        acc[flat] += acc[(flat - 1) / 2];
    }
    let cells = acc
        .split_off(tree.num_cells() - 1)
        .into_iter()
        .map(f64::sqrt)
        .collect();
    GridScalarFn::from_parts(tree, cells)
}

/// `‖{S_I}‖_𝒮 = ‖S‖_{L¹}`.
pub fn s_norm(s: &MatrixSequence) -> f64 {
    square_function(s).l1_norm()
}

/// `‖{T_I}‖_𝒯 = sup_J ‖(1/|J|) Σ_{I⊆J} T_I T_Iᵀ‖^{1/2}`.
pub fn t_norm(t: &MatrixSequence) -> f64 {
    let tree = *t.tree();
    let d = t.dim();
    let mut sums = vec![Mat::zeros(d, d); tree.num_intervals()];
    for (i, m) in t.entries() {
        sums[i.flat()] = m * m.transpose();
    }
    for flat in (1..tree.num_intervals()).rev() {
        let child = sums[flat].clone();
        sums[(flat - 1) / 2] += child;
    }
    tree.intervals()
        .map(|j| linalg::sym_spectral_norm(&sums[j.flat()]) / j.measure())
        .fold(0.0, f64::max)
        .sqrt()
}

/// `Σ_I Tr(S_I T_Iᵀ)`.
pub fn pairing(s: &MatrixSequence, t: &MatrixSequence) -> Result<f64> {
    s.check_same_shape(t)?;
    Ok(s.entries()
        .iter()
        .filter_map(|(i, a)| t.get(i).map(|b| a.dot(b)))
        .sum())
}

/// One band `k` of the level-set decomposition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OmegaBand {
    /// Cells with `S(x) > 2^k`.
    pub omega: Vec<usize>,
    /// Cells where the dyadic maximal function of `1_{Ω_k}` exceeds `1/2`.
    pub enlarged: Vec<usize>,
    /// Intervals more than half covered by `Ω_k` and at most half by `Ω_{k+1}`.
    pub b: Vec<DyadicIndex>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OmegaDecomposition {
    pub depth: u32,
    pub bands: BTreeMap<i32, OmegaBand>,
}

impl OmegaDecomposition {
    /// The band whose `B_k` contains `index`, if any.
    pub fn band_of(&self, index: &DyadicIndex) -> Vec<i32> {
        self.bands
            .iter()
            .filter(|(_, band)| band.b.contains(index))
            .map(|(k, _)| *k)
            .collect()
    }

    pub fn enlarged_measure(&self, k: i32) -> f64 {
        let cell = (-(self.depth as f64)).exp2();
        self.bands
            .get(&k)
            .map_or(0.0, |b| b.enlarged.len() as f64 * cell)
    }
}

/// `k`-range `floor(log2 min⁺ S) - 1 ..= ceil(log2 max S)`; empty for `S ≡ 0`.
fn band_range(values: &[f64]) -> Option<(i32, i32)> {
    let min_pos = values
        .iter()
        .copied()
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return None;
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    Some((min_pos.log2().floor() as i32 - 1, max.log2().ceil() as i32))
}

/// Number of cells of every interval lying in `set` (flat order).
fn covered_counts(tree: &DyadicTree, in_set: &[bool]) -> Vec<usize> {
    let mut counts = vec![0usize; tree.num_intervals()];
    let first = tree.num_cells() - 1;
    for (j, &inside) in in_set.iter().enumerate() {
        counts[first + j] = inside as usize;
    }
    for flat in (1..tree.num_intervals()).rev() {
        counts[(flat - 1) / 2] += counts[flat];
    }
    counts
}

pub fn omega_decomposition(s: &MatrixSequence) -> OmegaDecomposition {
    let tree = *s.tree();
    let sq = square_function(s);
    let values = sq.cells();
    let mut out = OmegaDecomposition {
        depth: tree.depth(),
        bands: BTreeMap::new(),
    };
    let Some((lo, hi)) = band_range(values) else {
        return out;
    };
    let cells_in = |i: &DyadicIndex| tree.cell_range(i).len();
    let more_than_half = |count: usize, total: usize| 2 * count > total;

    let level_set = |k: i32| -> Vec<bool> {
        let t = (k as f64).exp2();
        values.iter().map(|&v| v > t).collect()
    };
    let mut current = level_set(lo);
    let mut current_counts = covered_counts(&tree, &current);
    for k in lo..=hi {
        let next = level_set(k + 1);
        let next_counts = covered_counts(&tree, &next);

        let omega: Vec<usize> = (0..tree.num_cells()).filter(|&j| current[j]).collect();
        let enlarged: Vec<usize> = (0..tree.num_cells())
            .filter(|&j| {
                tree.cell_ancestors_flat(j).any(|f| {
                    let i = DyadicIndex::from_flat(f);
                    more_than_half(current_counts[f], cells_in(&i))
                })
            })
            .collect();
        let b: Vec<DyadicIndex> = tree
            .intervals()
            .filter(|i| {
                let total = cells_in(i);
                more_than_half(current_counts[i.flat()], total)
                    && !more_than_half(next_counts[i.flat()], total)
            })
            .collect();
        out.bands.insert(k, OmegaBand { omega, enlarged, b });
        current = next;
        current_counts = next_counts;
    }
    out
}

/// `max_k Σ_{I∈B_k} ‖S_I‖² / (2^{2k+3} |Ω̃_k|)`, skipping empty `Ω̃_k`.
pub fn check_sest(s: &MatrixSequence) -> f64 {
    let dec = omega_decomposition(s);
    let mut worst = 0.0f64;
    for (&k, band) in &dec.bands {
        if band.enlarged.is_empty() {
            continue;
        }
        let mass: f64 = band
            .b
            .iter()
            .filter_map(|i| s.get(i))
            .map(|m| linalg::spectral_norm(m).powi(2))
            .sum();
        let bound = ((2 * k + 3) as f64).exp2() * dec.enlarged_measure(k);
        worst = worst.max(mass / bound);
    }
    worst
}

/// `|Σ Tr(S_I T_Iᵀ)| / (‖T‖_𝒯 ‖S‖_𝒮)`, `0` when the pairing vanishes.
pub fn duality_ratio(s: &MatrixSequence, t: &MatrixSequence) -> Result<f64> {
    let p = pairing(s, t)?;
    if p == 0.0 {
        return Ok(0.0);
    }
    let denom = t_norm(t) * s_norm(s);
    if denom == 0.0 {
        return Err(LabError::Numeric(format!(
            "pairing {p:e} with a vanishing norm"
        )));
    }
    Ok(p.abs() / denom)
}
