//! Weighted dyadic maximal functions.
//!
//! * `M_W f(x) = sup_{I ∋ x} ‖⟨W⟩_I^{-1/2} ⟨W^{1/2} f⟩_I‖`
//! * `M̃_V f(x) = sup_{I ∋ x} (1/|I|) ∫_I ‖⟨V⟩_I^{1/2} V^{-1/2}(y) f(y)‖ dy`
//!
//! Both suprema run over the `N+1` dyadic ancestors of a cell (the cell
//! included); finer intervals add nothing for piecewise-constant data.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::experiments::seeded_rng;
use crate::linalg::{self, Mat, Vector};
use crate::weights::{tower_means, GridVectorFn, MatrixWeight};

/// Nonnegative piecewise-constant scalar function on the cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridScalarFn {
    tree: DyadicTree,
    cells: Vec<f64>,
}

impl GridScalarFn {
    pub fn new(depth: u32, cells: Vec<f64>) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        if cells.len() != tree.num_cells() {
            return Err(LabError::DimensionMismatch(format!(
                "depth {depth} needs {} cells, got {}",
                tree.num_cells(),
                cells.len()
            )));
        }
        if let Some(j) = cells.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(LabError::InvalidSpec(format!(
                "cell {j} value {} is not a finite nonnegative number",
                cells[j]
            )));
        }
        Ok(Self { tree, cells })
    }

    pub(crate) fn from_parts(tree: DyadicTree, cells: Vec<f64>) -> Self {
        Self { tree, cells }
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.cells.iter().map(|v| v * v).sum();
        (s * self.tree.cell_measure()).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.cells.iter().sum::<f64>() * self.tree.cell_measure()
    }

    pub fn max(&self) -> f64 {
        self.cells.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaximalKind {
    /// `M_W`
    Mw,
    /// `M̃_V`
    Aux,
}

/// Precomputed matrices for repeated evaluation of one maximal operator.
///
/// For `Mw` the cell maps are `W_c^{1/2}` and the interval maps `⟨W⟩_I^{-1/2}`;
/// for `Aux` they are `V_c^{-1/2}` and `⟨V⟩_I^{1/2}`.
#[derive(Debug, Clone)]
pub struct MaximalOperator {
    kind: MaximalKind,
    tree: DyadicTree,
    dim: usize,
    cell_maps: Vec<Mat>,
    interval_maps: Vec<Mat>,
}

impl MaximalOperator {
    pub fn new(kind: MaximalKind, weight: &MatrixWeight) -> Result<Self> {
        let (cell_exp, interval_exp) = match kind {
            MaximalKind::Mw => (0.5, -0.5),
            MaximalKind::Aux => (-0.5, 0.5),
        };
        let cell_maps = weight.power(cell_exp)?;
        let interval_maps = weight
            .averages()
            .iter()
            .map(|a| linalg::spd_power(a, interval_exp))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kind,
            tree: *weight.tree(),
            dim: weight.dim(),
            cell_maps,
            interval_maps,
        })
    }

    pub fn kind(&self) -> MaximalKind {
        self.kind
    }

    fn check(&self, f: &GridVectorFn) -> Result<()> {
        if f.depth() != self.tree.depth() || f.dim() != self.dim {
            return Err(LabError::DimensionMismatch(format!(
                "function has depth {} dim {}, operator has depth {} dim {}",
                f.depth(),
                f.dim(),
                self.tree.depth(),
                self.dim
            )));
        }
        Ok(())
    }

    /// The quantity under the supremum, for every interval (flat order).
    pub fn interval_values(&self, f: &GridVectorFn) -> Result<Vec<f64>> {
        self.check(f)?;
        let mapped: Vec<Vector> = self
            .cell_maps
            .iter()
            .zip(f.cells())
            .map(|(m, v)| m * v)
            .collect();
        Ok(match self.kind {
            MaximalKind::Mw => tower_means(&self.tree, &mapped)
                .iter()
                .zip(&self.interval_maps)
                .map(|(u, b)| (b * u).norm())
                .collect(),
            MaximalKind::Aux => self
                .tree
                .intervals()
                .map(|i| {
                    let b = &self.interval_maps[i.flat()];
                    let range = self.tree.cell_range(&i);
                    let count = range.len() as f64;
                    range.map(|j| (b * &mapped[j]).norm()).sum::<f64>() / count
                })
                .collect(),
        })
    }

    pub fn apply(&self, f: &GridVectorFn) -> Result<GridScalarFn> {
        self.apply_truncated(f, self.tree.depth())
    }

    /// Supremum restricted to ancestors of level at most `max_level`.
    pub fn apply_truncated(&self, f: &GridVectorFn, max_level: u32) -> Result<GridScalarFn> {
        let values = self.interval_values(f)?;
        Ok(GridScalarFn::from_parts(
            self.tree,
            path_maxima(&self.tree, &values, max_level),
        ))
    }
}

/// Per cell, the maximum of `values` over its ancestors with level `<= max_level`.
pub(crate) fn path_maxima(tree: &DyadicTree, values: &[f64], max_level: u32) -> Vec<f64> {
    let mut best = vec![0.0f64; tree.num_intervals()];
    for flat in 0..tree.num_intervals() {
        let own = if DyadicIndex::from_flat(flat).level() <= max_level {
            values[flat]
        } else {
            0.0
        };
        best[flat] = if flat == 0 {
            own
        } else {
            own.max(best[(flat - 1) / 2])
        };
    }
    best.split_off(tree.num_cells() - 1)
}

pub fn maximal_mw(weight: &MatrixWeight, f: &GridVectorFn) -> Result<GridScalarFn> {
    weight.check_compatible(f)?;
    MaximalOperator::new(MaximalKind::Mw, weight)?.apply(f)
}

pub fn maximal_aux(weight: &MatrixWeight, f: &GridVectorFn) -> Result<GridScalarFn> {
    weight.check_compatible(f)?;
    MaximalOperator::new(MaximalKind::Aux, weight)?.apply(f)
}

/// `max_x (M_W f(x) - M̃_{W⁻¹} f(x))`; the pointwise bound makes this `<= 0`
/// up to rounding.
pub fn check_domination(weight: &MatrixWeight, f: &GridVectorFn) -> Result<f64> {
    let mw = maximal_mw(weight, f)?;
    let aux = maximal_aux(&weight.inverse()?, f)?;
    Ok(mw
        .cells()
        .iter()
        .zip(aux.cells())
        .map(|(a, b)| a - b)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Outcome of the operator-norm search.
#[derive(Debug, Clone)]
pub struct NormLowerBound {
    /// Best `‖M f‖ / ‖f‖` found, recomputed from scratch on the witness.
    pub ratio: f64,
    /// Final ratio of every trial, in trial order.
    pub trial_ratios: Vec<f64>,
    /// Ratio of every trial's random start.
    pub start_ratios: Vec<f64>,
    pub witness: GridVectorFn,
}

pub const ASCENT_MAX_SWEEPS: usize = 50;
pub const ASCENT_STALL: f64 = 1e-9;

/// Lower bound on `‖M‖_{L²→L²}` for `M = M_W` or `M̃_W`: random Gaussian
/// starts refined by coordinate ascent.
pub fn maximal_norm_lower_bound(
    kind: MaximalKind,
    weight: &MatrixWeight,
    trials: usize,
    seed: u64,
) -> Result<NormLowerBound> {
    if trials == 0 {
        return Err(LabError::InvalidSpec("trials must be >= 1".into()));
    }
    let op = MaximalOperator::new(kind, weight)?;
    let results = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeded_rng(seed, t as u64);
            let n = op.tree.num_cells() * op.dim;
            let start: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let f0 = GridVectorFn::from_flat(op.tree.depth(), op.dim, &start)?;
            let r0 = ratio(&op, &f0)?;
            let f = coordinate_ascent(&op, &start);
            let f = GridVectorFn::from_flat(op.tree.depth(), op.dim, &f)?;
            let r = ratio(&op, &f)?;
            if r >= r0 {
                Ok((r0, r, f))
            } else {
                Ok((r0, r0, f0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (t, res) in results.iter().enumerate() {
        if res.1 > results[best].1 {
            best = t;
        }
    }
    Ok(NormLowerBound {
        ratio: results[best].1,
        trial_ratios: results.iter().map(|r| r.1).collect(),
        start_ratios: results.iter().map(|r| r.0).collect(),
        witness: results[best].2.clone(),
    })
}

fn ratio(op: &MaximalOperator, f: &GridVectorFn) -> Result<f64> {
    let norm = f.l2_norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    Ok(op.apply(f)?.l2_norm() / norm)
}

/// Incrementally updatable interval data for the ascent.
struct AscentState<'a> {
    op: &'a MaximalOperator,
    f: Vec<f64>,
    /// `Mw`: running means `⟨W^{1/2} f⟩_I`; `Aux`: unused.
    means: Vec<Vector>,
    /// Supremum candidates per interval.
    values: Vec<f64>,
    norm_sq: f64,
}

impl<'a> AscentState<'a> {
    fn new(op: &'a MaximalOperator, f: &[f64]) -> Self {
        let g = GridVectorFn::from_flat(op.tree.depth(), op.dim, f).expect("finite start");
        let values = op.interval_values(&g).expect("shapes match");
        let means = match op.kind {
            MaximalKind::Mw => {
                let mapped: Vec<Vector> = op
                    .cell_maps
                    .iter()
                    .zip(g.cells())
                    .map(|(m, v)| m * v)
                    .collect();
                tower_means(&op.tree, &mapped)
            }
            MaximalKind::Aux => Vec::new(),
        };
        let norm_sq = f.iter().map(|x| x * x).sum();
        Self {
            op,
            f: f.to_vec(),
            means,
            values,
            norm_sq,
        }
    }

    fn cell(&self, c: usize) -> Vector {
        let d = self.op.dim;
        Vector::from_column_slice(&self.f[c * d..(c + 1) * d])
    }

    fn set(&mut self, c: usize, j: usize, value: f64) {
        let d = self.op.dim;
        let n = self.op.tree.depth();
        let old_cell = self.cell(c);
        let old = self.f[c * d + j];
        self.f[c * d + j] = value;
        self.norm_sq += value * value - old * old;
        let new_cell = self.cell(c);
        let map = &self.op.cell_maps[c];
        match self.op.kind {
            MaximalKind::Mw => {
                let delta = map.column(j) * (value - old);
                for (k, flat) in self.op.tree.cell_ancestors_flat(c).enumerate() {
                    let w = (-((n - k as u32) as f64)).exp2();
                    self.means[flat] += &delta * w;
                    self.values[flat] = (&self.op.interval_maps[flat] * &self.means[flat]).norm();
                }
            }
            MaximalKind::Aux => {
                let q_old = map * old_cell;
                let q_new = map * new_cell;
                for (k, flat) in self.op.tree.cell_ancestors_flat(c).enumerate() {
                    let w = (-((n - k as u32) as f64)).exp2();
                    let b = &self.op.interval_maps[flat];
                    let change = (b * &q_new).norm() - (b * &q_old).norm();
                    self.values[flat] = (self.values[flat] + change * w).max(0.0);
                }
            }
        }
    }

    fn objective(&self) -> f64 {
        if self.norm_sq <= 0.0 {
            return 0.0;
        }
        let tree = &self.op.tree;
        let sum: f64 = path_maxima(tree, &self.values, tree.depth())
            .iter()
            .map(|v| v * v)
            .sum();
        (sum / self.norm_sq).sqrt()
    }
}

/// Single-entry perturbations with a doubling line search; the step halves
/// whenever a sweep stalls.
fn coordinate_ascent(op: &MaximalOperator, start: &[f64]) -> Vec<f64> {
    let mut state = AscentState::new(op, start);
    let rms = (start.iter().map(|x| x * x).sum::<f64>() / start.len() as f64).sqrt();
    let mut step = 0.5 * rms.max(1e-3);
    let mut current = state.objective();
    let mut stalls = 0;
    for _ in 0..ASCENT_MAX_SWEEPS {
        let before = current;
        for idx in 0..state.f.len() {
            let (c, j) = (idx / op.dim, idx % op.dim);
            for dir in [1.0, -1.0] {
                let base = state.f[idx];
                let mut h = step * dir;
                state.set(c, j, base + h);
                let mut trial = state.objective();
                if trial <= current {
                    state.set(c, j, base);
                    continue;
                }
                current = trial;
                loop {
                    let accepted = state.f[idx];
                    h *= 2.0;
                    state.set(c, j, base + h);
                    trial = state.objective();
                    if trial > current {
                        current = trial;
                    } else {
                        state.set(c, j, accepted);
                        break;
                    }
                }
                break;
            }
        }
        if current - before <= ASCENT_STALL * before.abs() {
            stalls += 1;
            if stalls >= 2 {
                break;
            }
            step *= 0.5;
        } else {
            stalls = 0;
        }
    }
    state.f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_weight(depth: u32, dim: usize, salt: u64) -> MatrixWeight {
        let tree = DyadicTree::new(depth).unwrap();
        let cells = (0..tree.num_cells())
            .map(|j| {
                let g = Mat::from_fn(dim, dim, |r, c| {
                    ((salt as f64 * 3.1 + j as f64 * 1.7 + r as f64 * 0.9 + c as f64 * 0.3) * 7.77)
                        .sin()
                });
                &g * g.transpose() + Mat::identity(dim, dim) * 0.1
            })
            .collect();
        MatrixWeight::new(depth, dim, cells).unwrap()
    }

    fn sample_fn(depth: u32, dim: usize, salt: u64) -> GridVectorFn {
        let n = (1usize << depth) * dim;
        let v: Vec<f64> = (0..n)
            .map(|i| ((i as f64 + 0.5) * (salt as f64 + 1.9) * 4.3).cos() * 2.0)
            .collect();
        GridVectorFn::from_flat(depth, dim, &v).unwrap()
    }

    #[test]
    fn identity_weight_constant_function() {
        let e = Vector::from_vec(vec![1.0, 2.0, 2.0]);
        let f = GridVectorFn::constant(3, &e).unwrap();
        let w = MatrixWeight::identity(3, 3).unwrap();
        for v in maximal_mw(&w, &f).unwrap().cells() {
            assert!((v - 3.0).abs() < 1e-14);
        }
        for v in maximal_aux(&w, &f).unwrap().cells() {
            assert!((v - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_weight_matches_scalar_dyadic_maximal() {
        let f = sample_fn(4, 2, 3);
        let w = MatrixWeight::identity(4, 2).unwrap();
        let got = maximal_mw(&w, &f).unwrap();
        let tree = DyadicTree::new(4).unwrap();
        for j in 0..16 {
            let mut best = 0.0f64;
            for i in tree.ancestors(&tree.cell(j)).unwrap() {
                let r = tree.cell_range(&i);
                let count = r.len() as f64;
                let mut s = Vector::zeros(2);
                for c in r {
                    s += f.cell(c);
                }
                best = best.max((s / count).norm());
            }
            assert!((got.cells()[j] - best).abs() < 1e-13);
        }
    }

    #[test]
    fn hand_example() {
        let w = MatrixWeight::scalar(1, &[1.0, 1.0]).unwrap();
        let f = GridVectorFn::scalar(1, &[0.0, 2.0]).unwrap();
        let m = maximal_mw(&w, &f).unwrap();
        assert!((m.cells()[0] - 1.0).abs() < 1e-15);
        assert!((m.cells()[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn aux_scalar_hand_example() {
        let v = MatrixWeight::scalar(1, &[1.0, 4.0]).unwrap();
        let f = GridVectorFn::scalar(1, &[1.0, 1.0]).unwrap();
        let op = MaximalOperator::new(MaximalKind::Aux, &v).unwrap();
        let vals = op.interval_values(&f).unwrap();
        let root = 2.5f64.sqrt() * 0.5 * (1.0 + 0.5);
        assert!((vals[DyadicIndex::ROOT.flat()] - root).abs() < 1e-14);
        assert!((root - 1.185_854).abs() < 1e-6);
        let m = maximal_aux(&v, &f).unwrap();
        for (j, val) in m.cells().iter().enumerate() {
            assert!(*val >= f.cell(j).norm() - 1e-14);
        }
    }

    #[test]
    fn domination_holds() {
        let w = MatrixWeight::identity(3, 2).unwrap();
        let f = sample_fn(3, 2, 1);
        assert!(check_domination(&w, &f).unwrap() <= 1e-12);
        for salt in 0..30 {
            let w = sample_weight(4, 2, salt);
            let f = sample_fn(4, 2, salt + 100);
            assert!(check_domination(&w, &f).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn sublinear_and_homogeneous() {
        let w = sample_weight(3, 2, 4);
        let f = sample_fn(3, 2, 5);
        let g = sample_fn(3, 2, 6);
        let mf = maximal_mw(&w, &f).unwrap();
        let mg = maximal_mw(&w, &g).unwrap();
        let msum = maximal_mw(&w, &f.try_add(&g).unwrap()).unwrap();
        let mscaled = maximal_mw(&w, &f.scaled(-2.5)).unwrap();
        for j in 0..8 {
            assert!(msum.cells()[j] <= mf.cells()[j] + mg.cells()[j] + 1e-12);
            assert!(
                (mscaled.cells()[j] - 2.5 * mf.cells()[j]).abs() <= 1e-12 * mf.cells()[j].max(1.0)
            );
        }
    }

    #[test]
    fn truncation_is_monotone() {
        let w = sample_weight(5, 2, 8);
        let f = sample_fn(5, 2, 9);
        let op = MaximalOperator::new(MaximalKind::Mw, &w).unwrap();
        let mut prev = vec![0.0; 32];
        for m in 0..=5 {
            let cur = op.apply_truncated(&f, m).unwrap();
            for (a, b) in prev.iter().zip(cur.cells()) {
                assert!(b >= a);
            }
            prev = cur.cells().to_vec();
        }
    }

    #[test]
    fn incremental_state_matches_recompute() {
        for kind in [MaximalKind::Mw, MaximalKind::Aux] {
            let w = sample_weight(3, 2, 2);
            let op = MaximalOperator::new(kind, &w).unwrap();
            let f = sample_fn(3, 2, 7).to_flat();
            let mut st = AscentState::new(&op, &f);
            st.set(3, 1, 5.0);
            st.set(0, 0, -1.0);
            let g = GridVectorFn::from_flat(3, 2, &st.f).unwrap();
            let fresh = op.interval_values(&g).unwrap();
            for (a, b) in st.values.iter().zip(&fresh) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lower_bound_identity_at_least_one() {
        let w = MatrixWeight::identity(3, 1).unwrap();
        let lb = maximal_norm_lower_bound(MaximalKind::Mw, &w, 2, 1).unwrap();
        assert!(lb.ratio >= 1.0 - 1e-12);
        let best = lb.trial_ratios.iter().copied().fold(0.0, f64::max);
        assert_eq!(lb.ratio, best);
        for (s, t) in lb.start_ratios.iter().zip(&lb.trial_ratios) {
            assert!(t >= s);
        }
    }

    #[test]
    fn ascent_beats_random_search() {
        let w = MatrixWeight::scalar(2, &[1.0, 1.0, 1.0, 4.0]).unwrap();
        let op = MaximalOperator::new(MaximalKind::Mw, &w).unwrap();
        let mut rng = seeded_rng(99, 0);
        let mut best = 0.0f64;
        for _ in 0..10_000 {
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let f = GridVectorFn::from_flat(2, 1, &v).unwrap();
            best = best.max(ratio(&op, &f).unwrap());
        }
        let lb = maximal_norm_lower_bound(MaximalKind::Mw, &w, 4, 5).unwrap();
        assert!(lb.ratio >= best - 1e-12, "{} < {}", lb.ratio, best);
    }

    #[test]
    fn zero_trials_rejected() {
        let w = MatrixWeight::identity(1, 1).unwrap();
        assert!(maximal_norm_lower_bound(MaximalKind::Aux, &w, 0, 0).is_err());
    }
}
