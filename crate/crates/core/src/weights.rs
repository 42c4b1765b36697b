//! Matrix weights on the cells of a finite dyadic tree.
//!
//! A [`MatrixWeight`] stores one symmetric positive definite `d×d` matrix per
//! finest cell. Averages over a dyadic interval are exact cell means, so
//! `⟨W⟩_I`, `⟨W⁻¹⟩_I` and everything built from them carry no quadrature error.

use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};

use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::linalg::{self, Mat, Vector};

/// A symmetric positive definite matrix, validated at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(Mat);

impl SpdMatrix {
    pub fn new(m: Mat) -> Result<Self> {
        linalg::check_spd(&m)?;
        Ok(Self(linalg::symmetrize(&m)))
    }

    pub fn identity(dim: usize) -> Self {
        Self(Mat::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn power(&self, s: f64) -> Result<SpdMatrix> {
        spd_power(self, s)
    }
}

/// `M^s` through the eigendecomposition of `M`.
pub fn spd_power(m: &SpdMatrix, s: f64) -> Result<SpdMatrix> {
    linalg::spd_power(&m.0, s).map(SpdMatrix)
}

/// Exact means of per-cell values over every interval of the tree, indexed by
/// flat interval index. Built bottom-up: a parent mean is the mean of its two
/// children.
pub(crate) fn tower_means<T>(tree: &DyadicTree, cells: &[T]) -> Vec<T>
where
    T: Clone + Add<T, Output = T> + Mul<f64, Output = T>,
{
    let n = tree.depth();
    let first_cell = tree.num_cells() - 1;
    let mut table: Vec<Option<T>> = vec![None; tree.num_intervals()];
    for (j, c) in cells.iter().enumerate() {
        table[first_cell + j] = Some(c.clone());
    }
    for level in (0..n).rev() {
        let start = (1usize << level) - 1;
        for p in 0..(1usize << level) {
            let flat = start + p;
            let left = table[2 * flat + 1].clone().expect("child filled");
            let right = table[2 * flat + 2].clone().expect("child filled");
            table[flat] = Some((left + right) * 0.5);
        }
    }
    table.into_iter().map(|t| t.expect("filled")).collect()
}

/// `a^{1/2} ⟨V⁻¹⟩ a^{1/2}` as the mean of `Y Yᵀ`, `Y = a^{1/2} V_c^{-1/2}`.
/// Working with `V_c^{-1/2}` instead of an explicit `⟨V⁻¹⟩` keeps the rounding
/// error near `√cond · ε` rather than `cond · ε`.
fn gram(a: &Mat, inv_roots: &[Mat]) -> Result<Mat> {
    let r = linalg::spd_power(a, 0.5)?;
    let mut b = Mat::zeros(a.nrows(), a.ncols());
    for s in inv_roots {
        let y = &r * s;
        b += &y * y.transpose();
    }
    Ok(linalg::symmetrize(&(b / inv_roots.len() as f64)))
}

/// Smallest and largest eigenvalue of a symmetric matrix.
fn sym_eigen_range(m: &Mat) -> (f64, f64) {
    let e = linalg::sym_eigen(m).eigenvalues;
    (e.min(), e.max())
}

/// Piecewise-constant field of SPD matrices on the `2^N` cells of depth `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixWeight {
    tree: DyadicTree,
    dim: usize,
    cells: Vec<Mat>,
}

impl MatrixWeight {
    pub fn new(depth: u32, dim: usize, cells: Vec<Mat>) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        if dim == 0 {
            return Err(LabError::InvalidSpec(
                "weight dimension must be >= 1".into(),
            ));
        }
        if cells.len() != tree.num_cells() {
            return Err(LabError::DimensionMismatch(format!(
                "depth {depth} needs {} cells, got {}",
                tree.num_cells(),
                cells.len()
            )));
        }
        let mut out = Vec::with_capacity(cells.len());
        for (j, c) in cells.into_iter().enumerate() {
            if c.nrows() != dim || c.ncols() != dim {
                return Err(LabError::DimensionMismatch(format!(
                    "cell {j} is {}x{}, expected {dim}x{dim}",
                    c.nrows(),
                    c.ncols()
                )));
            }
            linalg::check_spd(&c).map_err(|e| LabError::NotSpd(format!("cell {j}: {e}")))?;
            out.push(linalg::symmetrize(&c));
        }
        Ok(Self {
            tree,
            dim,
            cells: out,
        })
    }

    pub fn constant(depth: u32, m: &SpdMatrix) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        Ok(Self {
            tree,
            dim: m.dim(),
            cells: vec![m.as_matrix().clone(); tree.num_cells()],
        })
    }

    pub fn identity(depth: u32, dim: usize) -> Result<Self> {
        Self::constant(depth, &SpdMatrix::identity(dim))
    }

    /// A `1×1` weight from positive cell values.
    pub fn scalar(depth: u32, values: &[f64]) -> Result<Self> {
        Self::new(
            depth,
            1,
            values.iter().map(|&v| Mat::from_element(1, 1, v)).collect(),
        )
    }

    pub fn tree(&self) -> &DyadicTree {
        &self.tree
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[Mat] {
        &self.cells
    }

    pub fn cell(&self, j: usize) -> &Mat {
        &self.cells[j]
    }

    pub fn is_scalar(&self) -> bool {
        self.dim == 1
    }

    /// `⟨W⟩_I`, summed directly over the cells of `I`.
    pub fn average(&self, interval: &DyadicIndex) -> Result<Mat> {
        self.tree.check(interval)?;
        let range = self.tree.cell_range(interval);
        let count = range.len() as f64;
        let mut sum = Mat::zeros(self.dim, self.dim);
        for j in range {
            sum += &self.cells[j];
        }
        Ok(sum / count)
    }

    /// `⟨W⟩_I` for every interval, by flat index.
    pub fn averages(&self) -> Vec<Mat> {
        tower_means(&self.tree, &self.cells)
    }

    /// Cell-wise inverse `W⁻¹`.
    pub fn inverse(&self) -> Result<MatrixWeight> {
        let cells = self
            .cells
            .iter()
            .map(linalg::spd_inverse)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree: self.tree,
            dim: self.dim,
            cells,
        })
    }

    /// Cell-wise `W^s`.
    pub fn power(&self, s: f64) -> Result<Vec<Mat>> {
        self.cells.iter().map(|c| linalg::spd_power(c, s)).collect()
    }

    /// `‖⟨W⟩_I^{1/2} ⟨W⁻¹⟩_I^{1/2}‖²` for every interval, by flat index.
    pub fn a2_profile(&self) -> Result<Vec<f64>> {
        Ok(self
            .interval_grams()?
            .iter()
            .map(|b| sym_eigen_range(b).1)
            .collect())
    }

    /// `B_I = ⟨W⟩_I^{1/2} ⟨W⁻¹⟩_I ⟨W⟩_I^{1/2}` for every interval. Its largest
    /// eigenvalue is the A2 quantity of `I`, its smallest is the squared
    /// reciprocal of the contraction quantity.
    fn interval_grams(&self) -> Result<Vec<Mat>> {
        let inv_roots = self.power(-0.5)?;
        self.averages()
            .iter()
            .enumerate()
            .map(|(flat, a)| {
                gram(
                    a,
                    &inv_roots[self.tree.cell_range(&DyadicIndex::from_flat(flat))],
                )
            })
            .collect()
    }
    /// `[W]_{A2}`: the largest value of [`Self::a2_profile`].
    pub fn a2_characteristic(&self) -> Result<f64> {
        Ok(self
            .a2_profile()?
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// `‖⟨W⟩_I^{-1/2} ⟨W⁻¹⟩_I^{-1/2}‖`, which never exceeds one.
    pub fn contraction_check(&self, interval: &DyadicIndex) -> Result<f64> {
        self.tree.check(interval)?;
        let inv_roots = self.cells[self.tree.cell_range(interval)]
            .iter()
            .map(|c| linalg::spd_power(c, -0.5))
            .collect::<Result<Vec<_>>>()?;
        let b = gram(&self.average(interval)?, &inv_roots)?;
        Ok(sym_eigen_range(&b).0.powf(-0.5))
    }

    /// [`Self::contraction_check`] over all intervals at once.
    pub fn contraction_profile(&self) -> Result<Vec<f64>> {
        Ok(self
            .interval_grams()?
            .iter()
            .map(|b| sym_eigen_range(b).0.powf(-0.5))
            .collect())
    }

    /// `(1/|I|) ∫_I ‖V^{-1/2}(y) ⟨V⟩_I^{1/2}‖^{2+2ε} dy`.
    pub fn reverse_holder_integral(&self, interval: &DyadicIndex, eps: f64) -> Result<f64> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(LabError::InvalidSpec(format!(
                "reverse Hölder exponent must be positive, got {eps}"
            )));
        }
        self.reverse_holder_power(interval, 2.0 + 2.0 * eps)
    }

    /// Same integrand with a free exponent `r`; `r = 2` is the `ε → 0` limit.
    pub fn reverse_holder_power(&self, interval: &DyadicIndex, r: f64) -> Result<f64> {
        let avg_sqrt = linalg::spd_power(&self.average(interval)?, 0.5)?;
        let range = self.tree.cell_range(interval);
        let count = range.len() as f64;
        let mut sum = 0.0;
        for j in range {
            let m = linalg::spd_power(&self.cells[j], -0.5)? * &avg_sqrt;
            sum += linalg::spectral_norm(&m).powf(r);
        }
        Ok(sum / count)
    }

    /// `‖f‖_{L²(W)} = (∫ ⟨W f, f⟩)^{1/2}`.
    pub fn weighted_l2_norm(&self, f: &GridVectorFn) -> Result<f64> {
        self.check_compatible(f)?;
        let sum: f64 = self
            .cells
            .iter()
            .zip(&f.cells)
            .map(|(w, v)| (w * v).dot(v))
            .sum();
        Ok((sum * self.tree.cell_measure()).sqrt())
    }

    pub(crate) fn check_compatible(&self, f: &GridVectorFn) -> Result<()> {
        if f.depth() != self.depth() || f.dim() != self.dim {
            return Err(LabError::DimensionMismatch(format!(
                "function has depth {} dim {}, weight has depth {} dim {}",
                f.depth(),
                f.dim(),
                self.depth(),
                self.dim
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> WeightFile {
        WeightFile {
            depth: self.depth(),
            dim: self.dim,
            cells: self.cells.iter().map(row_major).collect(),
        }
    }

    pub fn from_file(file: &WeightFile) -> Result<Self> {
        let cells = file
            .cells
            .iter()
            .enumerate()
            .map(|(j, c)| from_row_major(file.dim, c).map_err(|e| tag_cell(j, e)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.depth, file.dim, cells)
    }
}

fn tag_cell(j: usize, e: LabError) -> LabError {
    LabError::DimensionMismatch(format!("cell {j}: {e}"))
}

pub(crate) fn row_major(m: &Mat) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn from_row_major(dim: usize, values: &[f64]) -> Result<Mat> {
    if values.len() != dim * dim {
        return Err(LabError::DimensionMismatch(format!(
            "expected {} entries, got {}",
            dim * dim,
            values.len()
        )));
    }
    if values.iter().any(|x| !x.is_finite()) {
        return Err(LabError::InvalidSpec("non-finite matrix entry".into()));
    }
    Ok(Mat::from_row_slice(dim, dim, values))
}

/// On-disk weight: `{ "depth": N, "dim": d, "cells": [[row-major d·d], ...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub depth: u32,
    pub dim: usize,
    pub cells: Vec<Vec<f64>>,
}

/// Piecewise-constant `ℝᵈ`-valued function on the cells of depth `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridVectorFn {
    tree: DyadicTree,
    dim: usize,
    cells: Vec<Vector>,
}

impl GridVectorFn {
    pub fn new(depth: u32, dim: usize, cells: Vec<Vector>) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        if cells.len() != tree.num_cells() {
            return Err(LabError::DimensionMismatch(format!(
                "depth {depth} needs {} cells, got {}",
                tree.num_cells(),
                cells.len()
            )));
        }
        for (j, c) in cells.iter().enumerate() {
            if c.len() != dim {
                return Err(LabError::DimensionMismatch(format!(
                    "cell {j} has length {}, expected {dim}",
                    c.len()
                )));
            }
            if c.iter().any(|x| !x.is_finite()) {
                return Err(LabError::InvalidSpec(format!("cell {j} is not finite")));
            }
        }
        Ok(Self { tree, dim, cells })
    }

    pub fn zeros(depth: u32, dim: usize) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        Ok(Self {
            tree,
            dim,
            cells: vec![Vector::zeros(dim); tree.num_cells()],
        })
    }

    pub fn constant(depth: u32, value: &Vector) -> Result<Self> {
        let tree = DyadicTree::new(depth)?;
        Self::new(depth, value.len(), vec![value.clone(); tree.num_cells()])
    }

    /// Scalar function (`d = 1`).
    pub fn scalar(depth: u32, values: &[f64]) -> Result<Self> {
        Self::new(
            depth,
            1,
            values.iter().map(|&v| Vector::from_element(1, v)).collect(),
        )
    }

    /// Flat layout: cell-major, `d` consecutive entries per cell.
    pub fn from_flat(depth: u32, dim: usize, values: &[f64]) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(LabError::DimensionMismatch(format!(
                "{} values do not split into cells of dimension {dim}",
                values.len()
            )));
        }
        Self::new(
            depth,
            dim,
            values.chunks(dim).map(Vector::from_column_slice).collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.cells.iter().flat_map(|c| c.iter().copied()).collect()
    }

    pub fn tree(&self) -> &DyadicTree {
        &self.tree
    }

    pub fn depth(&self) -> u32 {
        self.tree.depth()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> &[Vector] {
        &self.cells
    }

    pub fn cell(&self, j: usize) -> &Vector {
        &self.cells[j]
    }

    /// Unweighted `‖f‖_{L²}`.
    pub fn l2_norm(&self) -> f64 {
        let s: f64 = self.cells.iter().map(|c| c.norm_squared()).sum();
        (s * self.tree.cell_measure()).sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.cells.iter().all(|c| c.iter().all(|&x| x == 0.0))
    }

    pub fn scaled(&self, c: f64) -> GridVectorFn {
        GridVectorFn {
            tree: self.tree,
            dim: self.dim,
            cells: self.cells.iter().map(|v| v * c).collect(),
        }
    }

    pub fn try_add(&self, other: &GridVectorFn) -> Result<GridVectorFn> {
        if other.depth() != self.depth() || other.dim != self.dim {
            return Err(LabError::DimensionMismatch(
                "adding functions of different shape".into(),
            ));
        }
        Ok(GridVectorFn {
            tree: self.tree,
            dim: self.dim,
            cells: self
                .cells
                .iter()
                .zip(&other.cells)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    /// `⟨f⟩_I` for every interval, by flat index.
    pub fn averages(&self) -> Vec<Vector> {
        tower_means(&self.tree, &self.cells)
    }

    pub fn to_file(&self) -> VectorFnFile {
        VectorFnFile {
            depth: self.depth(),
            dim: self.dim,
            cells: self
                .cells
                .iter()
                .map(|c| c.iter().copied().collect())
                .collect(),
        }
    }

    pub fn from_file(file: &VectorFnFile) -> Result<Self> {
        Self::new(
            file.depth,
            file.dim,
            file.cells
                .iter()
                .map(|c| Vector::from_column_slice(c))
                .collect(),
        )
    }
}

/// On-disk vector function: `{ "depth": N, "dim": d, "cells": [[d reals], ...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFnFile {
    pub depth: u32,
    pub dim: usize,
    pub cells: Vec<Vec<f64>>,
}
