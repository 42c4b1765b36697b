//! Sparse families of dyadic intervals and the sparse averaging operators
//! `S f = Σ_{I∈𝔖} ⟨f⟩_I 1_I`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::carleson::{embedding_constant, testing_constant_norm, CarlesonSequence};
use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::experiments::seeded_rng;
use crate::linalg::{self, Mat, Vector};
use crate::weights::{tower_means, GridVectorFn, MatrixWeight};

/// Default sparsity constant: children may cover at most half of a member.
pub const DEFAULT_SPARSITY: f64 = 0.5;

/// Largest cell-space dimension `d·2^N` handled by a dense SVD.
pub const DENSE_NORM_LIMIT: usize = 4096;
pub const POWER_ITERATION_TOL: f64 = 1e-10;
pub const POWER_ITERATION_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseFamily {
    tree: DyadicTree,
    members: BTreeSet<DyadicIndex>,
}

/// Result of [`is_sparse`]: on failure, the first violating member and the
/// total measure of its sparse children.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityCheck {
    pub sparse: bool,
    pub witness: Option<(DyadicIndex, f64)>,
}

impl SparseFamily {
    /// Validates the sparsity condition with constant `1/2`.
    pub fn new(depth: u32, members: BTreeSet<DyadicIndex>) -> Result<Self> {
        Self::with_constant(depth, members, DEFAULT_SPARSITY)
    }

    pub fn with_constant(depth: u32, members: BTreeSet<DyadicIndex>, c: f64) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        for m in &members {
            tree.check(m)?;
        }
        let check = is_sparse_with(&members, c)?;
        if let Some((i, mass)) = check.witness {
            return Err(LabError::InvalidSpec(format!(
                "family is not sparse: children of {i} cover {mass} > {c} x {}",
                i.measure()
            )));
        }
        Ok(Self { tree, members })
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    pub fn tree(&self) -> &DyadicTree {
        &self.tree
    }

    pub fn members(&self) -> &BTreeSet<DyadicIndex> {
        &self.members
    }

    pub fn contains(&self, i: &DyadicIndex) -> bool {
        self.members.contains(i)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_file(&self) -> SparseFamilyFile {
        SparseFamilyFile {
            depth: self.depth(),
            members: self.members.iter().copied().collect(),
        }
    }

    pub fn from_file(file: &SparseFamilyFile) -> Result<Self> {
        Self::new(file.depth, file.members.iter().copied().collect())
    }
}

/// `{ "depth": N, "members": ["k:p", ...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFamilyFile {
    pub depth: u32,
    pub members: Vec<DyadicIndex>,
}

/// Maximal elements of `members` strictly inside `i`.
fn children_in(members: &BTreeSet<DyadicIndex>, i: &DyadicIndex) -> Vec<DyadicIndex> {
    members
        .iter()
        .filter(|j| i.strictly_contains(j))
        .filter(|j| ((i.level() + 1)..j.level()).all(|l| !members.contains(&j.ancestor_at(l))))
        .copied()
        .collect()
}

pub fn sparse_children(family: &SparseFamily, i: &DyadicIndex) -> Result<Vec<DyadicIndex>> {
    if !family.contains(i) {
        return Err(LabError::NotAMember(i.to_string()));
    }
    Ok(children_in(&family.members, i))
}

/// Sparsity with the default constant `1/2`.
pub fn is_sparse(members: &BTreeSet<DyadicIndex>) -> SparsityCheck {
    is_sparse_with(members, DEFAULT_SPARSITY).expect("default constant is valid")
}

/// `Σ_{J ∈ ch(I)} |J| <= c |I|` for every member `I`.
pub fn is_sparse_with(members: &BTreeSet<DyadicIndex>, c: f64) -> Result<SparsityCheck> {
    if !(c > 0.0 && c < 1.0) {
        return Err(LabError::InvalidSpec(format!(
            "sparsity constant must lie in (0, 1), got {c}"
        )));
    }
    for i in members {
        let mass: f64 = children_in(members, i).iter().map(|j| j.measure()).sum();
        if mass > c * i.measure() {
            return Ok(SparsityCheck {
                sparse: false,
                witness: Some((*i, mass)),
            });
        }
    }
    Ok(SparsityCheck {
        sparse: true,
        witness: None,
    })
}

/// `max_{J∈𝔖} (1/|J|) Σ_{I∈𝔖, I⊆J} |I|`; `0` for the empty family.
pub fn packing_constant(family: &SparseFamily) -> f64 {
    let members: Vec<_> = family.members.iter().collect();
    members
        .iter()
        .map(|j| {
            members
                .iter()
                .filter(|i| j.contains(i))
                .map(|i| i.measure())
                .sum::<f64>()
                / j.measure()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseStrategy {
    /// `{(k, 0) : 0 <= k <= N}`.
    Chain,
    /// Top-down random draws of disjoint descendants within the budget.
    Random,
    /// A random root-to-cell path: every member has one half-measure child.
    GreedyMaximal,
}

impl std::str::FromStr for SparseStrategy {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chain" => Ok(Self::Chain),
            "random" => Ok(Self::Random),
            "greedy-maximal" => Ok(Self::GreedyMaximal),
            other => Err(LabError::InvalidSpec(format!(
                "unknown sparse strategy {other:?} (chain, random, greedy-maximal)"
            ))),
        }
    }
}

pub fn generate_sparse(depth: u32, strategy: SparseStrategy, seed: u64) -> Result<SparseFamily> {
    generate_sparse_with(depth, strategy, seed, DEFAULT_SPARSITY)
}

pub fn generate_sparse_with(
    depth: u32,
    strategy: SparseStrategy,
    seed: u64,
    c: f64,
) -> Result<SparseFamily> {
    let tree = DyadicTree::new(depth)?;
    let mut rng = seeded_rng(seed, 0x5eed_5a25);
    let mut members = BTreeSet::new();
    match strategy {
        SparseStrategy::Chain => {
            members.extend((0..=depth).map(|k| DyadicIndex::new(k, 0).expect("in range")));
        }
        SparseStrategy::GreedyMaximal => {
            let mut cur = DyadicIndex::ROOT;
            members.insert(cur);
            while cur.level() < depth {
                let (a, b) = cur.halves();
                cur = if rng.random_bool(0.5) { a } else { b };
                members.insert(cur);
            }
        }
        SparseStrategy::Random => {
            let mut queue = vec![DyadicIndex::ROOT];
            members.insert(DyadicIndex::ROOT);
            while let Some(parent) = queue.pop() {
                if parent.level() == depth {
                    continue;
                }
                let budget = c * parent.measure();
                let mut used = 0.0;
                let mut chosen: Vec<DyadicIndex> = Vec::new();
                for _ in 0..16 {
                    if rng.random_bool(0.2) {
                        break;
                    }
                    let level = rng.random_range(parent.level() + 1..=depth);
                    let shift = level - parent.level();
                    let offset = rng.random_range(0..(1u64 << shift));
                    let cand = DyadicIndex::new(level, (parent.position() << shift) + offset)?;
                    if chosen.iter().any(|c| !c.is_disjoint(&cand)) {
                        continue;
                    }
                    if used + cand.measure() > budget {
                        break;
                    }
                    used += cand.measure();
                    chosen.push(cand);
                }
                for ch in chosen {
                    members.insert(ch);
                    queue.push(ch);
                }
            }
        }
    }
    tree.check(&DyadicIndex::ROOT)?;
    SparseFamily::with_constant(depth, members, c)
}

/// `S f(x) = Σ_{I∈𝔖, I∋x} ⟨f⟩_I`.
pub fn apply_sparse(family: &SparseFamily, f: &GridVectorFn) -> Result<GridVectorFn> {
    if f.depth() != family.depth() {
        return Err(LabError::DimensionMismatch(format!(
            "function depth {} vs family depth {}",
            f.depth(),
            family.depth()
        )));
    }
    let tree = family.tree;
    let avg = f.averages();
    let cells = (0..tree.num_cells())
        .map(|c| {
            let mut acc = Vector::zeros(f.dim());
            for flat in tree.cell_ancestors_flat(c) {
                if family.contains(&DyadicIndex::from_flat(flat)) {
                    acc += &avg[flat];
                }
            }
            acc
        })
        .collect();
    GridVectorFn::new(f.depth(), f.dim(), cells)
}

/// How a weighted norm was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMethod {
    Exact,
    Estimated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub value: f64,
    pub method: NormMethod,
}

/// Dense matrix of `x ↦ W^{1/2} S (W^{-1/2} x)` on the cell space (cell-major).
pub fn weighted_sparse_matrix(family: &SparseFamily, weight: &MatrixWeight) -> Result<Mat> {
    check_family_weight(family, weight)?;
    let tree = family.tree;
    let d = weight.dim();
    let n = tree.num_cells() * d;
    let left = weight.power(0.5)?;
    let right = weight.power(-0.5)?;
    let mut m = Mat::zeros(n, n);
    for i in &family.members {
        let range = tree.cell_range(i);
        let cells = range.len();
        let mut l = Mat::zeros(cells * d, d);
        let mut r = Mat::zeros(cells * d, d);
        for (row, c) in range.clone().enumerate() {
            l.view_mut((row * d, 0), (d, d)).copy_from(&left[c]);
            r.view_mut((row * d, 0), (d, d)).copy_from(&right[c]);
        }
        let block = &l * r.transpose() / cells as f64;
        let start = range.start * d;
        let mut view = m.view_mut((start, start), (cells * d, cells * d));
        view += block;
    }
    Ok(m)
}

fn check_family_weight(family: &SparseFamily, weight: &MatrixWeight) -> Result<()> {
    if family.depth() != weight.depth() {
        return Err(LabError::DimensionMismatch(format!(
            "family depth {} vs weight depth {}",
            family.depth(),
            weight.depth()
        )));
    }
    Ok(())
}

/// `‖S‖_{L²(W)→L²(W)}`: exact (dense SVD) up to `d·2^N = 4096`, otherwise a
/// power-iteration estimate.
pub fn sparse_weighted_norm(family: &SparseFamily, weight: &MatrixWeight) -> Result<NormEstimate> {
    check_family_weight(family, weight)?;
    let n = weight.tree().num_cells() * weight.dim();
    if n <= DENSE_NORM_LIMIT {
        let m = weighted_sparse_matrix(family, weight)?;
        let value = linalg::spectral_norm(&m);
        if !value.is_finite() {
            return Err(LabError::Numeric("singular value solver failed".into()));
        }
        return Ok(NormEstimate {
            value,
            method: NormMethod::Exact,
        });
    }
    let value = power_iteration_norm(family, weight)?;
    Ok(NormEstimate {
        value,
        method: NormMethod::Estimated,
    })
}

/// Matrix-free `x ↦ outer_c · S(inner_c · x)` on the cell space.
fn apply_conjugated(
    family: &SparseFamily,
    outer: &[Mat],
    inner: &[Mat],
    x: &[f64],
    d: usize,
) -> Vec<f64> {
    let tree = family.tree;
    let mapped: Vec<Vector> = inner
        .iter()
        .enumerate()
        .map(|(c, m)| m * Vector::from_column_slice(&x[c * d..(c + 1) * d]))
        .collect();
    let avg = tower_means(&tree, &mapped);
    let mut out = Vec::with_capacity(x.len());
    for (c, o) in outer.iter().enumerate() {
        let mut acc = Vector::zeros(d);
        for flat in tree.cell_ancestors_flat(c) {
            if family.contains(&DyadicIndex::from_flat(flat)) {
                acc += &avg[flat];
            }
        }
        out.extend((o * acc).iter());
    }
    out
}

fn power_iteration_norm(family: &SparseFamily, weight: &MatrixWeight) -> Result<f64> {
    let d = weight.dim();
    let left = weight.power(0.5)?;
    let right = weight.power(-0.5)?;
    let n = weight.tree().num_cells() * d;
    let mut rng = seeded_rng(0x0b5e_55ed, n as u64);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut prev = 0.0f64;
    for _ in 0..POWER_ITERATION_CAP {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = apply_conjugated(family, &left, &right, &x, d);
        // adjoint of W^{1/2} S W^{-1/2} is W^{-1/2} S W^{1/2}
        let z = apply_conjugated(family, &right, &left, &y, d);
        let sigma = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        x = z;
        if (sigma - prev).abs() <= POWER_ITERATION_TOL * sigma {
            return Ok(sigma);
        }
        prev = sigma;
    }
    Ok(prev)
}

/// `A_I = ⟨V⟩_I^{-1} |I|` on the members of the family.
pub fn induced_sequence(family: &SparseFamily, v: &MatrixWeight) -> Result<CarlesonSequence> {
    let avg = v.averages();
    let entries = family
        .members
        .iter()
        .map(|i| Ok((*i, linalg::spd_inverse(&avg[i.flat()])? * i.measure())))
        .collect::<Result<BTreeMap<_, _>>>()?;
    CarlesonSequence::new(family.depth(), v.dim(), entries)
}

/// The quantities along the Carleson-embedding bound for sparse operators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProofChain {
    /// Norm testing constant of `⟨W⁻¹⟩_I^{-1}|I|` against `W⁻¹`; at most 2.
    pub testing_inverse: f64,
    /// Norm testing constant of `⟨W⟩_I^{-1}|I|` against `W`; at most 2.
    pub testing_direct: f64,
    /// Exact embedding constants of the two sequences.
    pub embedding_inverse: f64,
    pub embedding_direct: f64,
    pub a2: f64,
    /// `[W]^{1/2} (C1_inverse C1_direct)^{1/2}`, an upper bound for the norm.
    pub bound: f64,
    pub norm: NormEstimate,
}

pub fn proof_chain_diagnostic(family: &SparseFamily, weight: &MatrixWeight) -> Result<ProofChain> {
    check_family_weight(family, weight)?;
    let inv = weight.inverse()?;
    let seq_inv = induced_sequence(family, &inv)?;
    let seq_dir = induced_sequence(family, weight)?;
    let testing_inverse = testing_constant_norm(&inv, &seq_inv)?;
    let testing_direct = testing_constant_norm(weight, &seq_dir)?;
    let embedding_inverse = embedding_constant(&inv, &seq_inv)?;
    let embedding_direct = embedding_constant(weight, &seq_dir)?;
    let a2 = weight.a2_characteristic()?;
    let bound = a2.sqrt() * (embedding_inverse * embedding_direct).sqrt();
    Ok(ProofChain {
        testing_inverse,
        testing_direct,
        embedding_inverse,
        embedding_direct,
        a2,
        bound,
        norm: sparse_weighted_norm(family, weight)?,
    })
}

/// `‖S‖_{L²(W)} / [W]_{A2}^{3/2}`.
pub fn bound_ratio(family: &SparseFamily, weight: &MatrixWeight) -> Result<f64> {
    let norm = sparse_weighted_norm(family, weight)?.value;
    Ok(norm / weight.a2_characteristic()?.powf(1.5))
}
