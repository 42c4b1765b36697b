//! Generators, per-instance invariant checks and reproducible sweeps.
//!
//! All randomness comes from [`seeded_rng`]: ChaCha8 (the `rand_chacha`
//! implementation) keyed by `seed_from_u64(seed)` with the 64-bit stream id
//! set to `stream`. Identical `(seed, stream)` pairs give identical streams on
//! every platform.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_4;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::carleson::{
    check_g_domination, embedding_constant, scalar_cet_ratio, stopping_time,
    testing_constant_matrix, testing_constant_norm, CarlesonSequence, SequenceFile,
    StoppingDecomposition,
};
use crate::dyadic::{DyadicIndex, DyadicTree};
use crate::error::{LabError, Result};
use crate::io::write_json;
use crate::linalg::{self, Mat, Vector};
use crate::maximal::{check_domination, maximal_aux, maximal_norm_lower_bound, MaximalKind};
use crate::seqspaces::{check_sest, duality_ratio, MatrixSequence};
use crate::sparse::{
    generate_sparse, packing_constant, proof_chain_diagnostic, NormMethod, SparseFamily,
    SparseFamilyFile, SparseStrategy,
};
use crate::weights::{GridVectorFn, MatrixWeight, VectorFnFile, WeightFile};

pub const SCHEMA_VERSION: &str = "v1";

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-instance seed derived from a run seed.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    seeded_rng(seed, id).next_u64()
}

/// Weight families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum WeightSpec {
    Identity,
    /// `|x - center|^alpha` on the diagonal.
    ScalarPower {
        alpha: f64,
        #[serde(default)]
        center: f64,
    },
    /// `R(θ) diag(p^α, p^{-α}) R(θ)ᵀ` in the first two coordinates, `p` the
    /// cell average of `|x|`.
    RotatedPair {
        alpha: f64,
        theta: f64,
    },
    /// `exp(H_j)` with `H` a random walk of symmetric matrices with step `sigma`.
    LogWalk {
        sigma: f64,
        seed: u64,
    },
}

impl WeightSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        let alpha_ok = |a: f64| {
            if a.is_finite() && a > -1.0 && a < 1.0 {
                Ok(())
            } else {
                Err(LabError::InvalidSpec(format!(
                    "power exponent {a} outside (-1, 1)"
                )))
            }
        };
        match *self {
            WeightSpec::Identity => Ok(()),
            WeightSpec::ScalarPower { alpha, center } => {
                alpha_ok(alpha)?;
                if !center.is_finite() {
                    return Err(LabError::InvalidSpec(format!(
                        "center {center} is not finite"
                    )));
                }
                Ok(())
            }
            WeightSpec::RotatedPair { alpha, theta } => {
                alpha_ok(alpha)?;
                if !theta.is_finite() {
                    return Err(LabError::InvalidSpec(format!(
                        "angle {theta} is not finite"
                    )));
                }
                if dim < 2 {
                    return Err(LabError::InvalidSpec("rotated-pair needs dim >= 2".into()));
                }
                Ok(())
            }
            WeightSpec::LogWalk { sigma, .. } => {
                if sigma.is_finite() && sigma >= 0.0 {
                    Ok(())
                } else {
                    Err(LabError::InvalidSpec(format!(
                        "step {sigma} must be finite and >= 0"
                    )))
                }
            }
        }
    }

    /// Short comma-free description used in reports.
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Identity => "identity".into(),
            WeightSpec::ScalarPower { alpha, center } => {
                format!("scalar-power(alpha={alpha};center={center})")
            }
            WeightSpec::RotatedPair { alpha, theta } => {
                format!("rotated-pair(alpha={alpha};theta={theta})")
            }
            WeightSpec::LogWalk { sigma, seed } => format!("log-walk(sigma={sigma};seed={seed})"),
        }
    }
}

/// `∫_a^b |x - c|^α dx` for `α > -1`.
fn power_integral(a: f64, b: f64, c: f64, alpha: f64) -> f64 {
    let e = alpha + 1.0;
    // ∫_u^{u+h} t^α dt, u >= 0, without cancellation for small h/u
    let one_side = |u: f64, h: f64| {
        if u == 0.0 {
            h.powf(e) / e
        } else {
            u.powf(e) * (e * (h / u).ln_1p()).exp_m1() / e
        }
    };
    if c <= a {
        one_side(a - c, b - a)
    } else if c >= b {
        one_side(c - b, b - a)
    } else {
        one_side(0.0, c - a) + one_side(0.0, b - c)
    }
}

/// Exact cell averages of `|x - center|^alpha` on the `2^N` cells.
pub fn power_cell_values(depth: u32, alpha: f64, center: f64) -> Result<Vec<f64>> {
    WeightSpec::ScalarPower { alpha, center }.validate(1)?;
    let tree = DyadicTree::new(depth)?;
    let h = tree.cell_measure();
    Ok((0..tree.num_cells())
        .map(|j| {
            if alpha == 0.0 {
                return 1.0;
            }
            let cell = tree.cell(j);
            power_integral(cell.left(), cell.right(), center, alpha) / h
        })
        .collect())
}

fn rotation(dim: usize, theta: f64) -> Mat {
    let mut r = Mat::identity(dim, dim);
    let (s, c) = theta.sin_cos();
    r[(0, 0)] = c;
    r[(0, 1)] = -s;
    r[(1, 0)] = s;
    r[(1, 1)] = c;
    r
}

fn symmetric_gaussian(rng: &mut impl Rng, dim: usize) -> Mat {
    let g = Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    (&g + g.transpose()) * 0.5
}

/// Instantiates a weight family. `seed` selects the stream of random
/// families and is ignored by deterministic ones.
pub fn gen_weight(spec: &WeightSpec, depth: u32, dim: usize, seed: u64) -> Result<MatrixWeight> {
    spec.validate(dim)?;
    if dim == 0 {
        return Err(LabError::InvalidSpec("dim must be >= 1".into()));
    }
    match *spec {
        WeightSpec::Identity => MatrixWeight::identity(depth, dim),
        WeightSpec::ScalarPower { alpha, center } => {
            let p = power_cell_values(depth, alpha, center)?;
            MatrixWeight::new(
                depth,
                dim,
                p.iter().map(|&v| Mat::identity(dim, dim) * v).collect(),
            )
        }
        WeightSpec::RotatedPair { alpha, theta } => {
            let tree = DyadicTree::new(depth)?;
            let r = rotation(dim, theta);
            let cells = (0..tree.num_cells())
                .map(|j| {
                    let cell = tree.cell(j);
                    let mean_abs =
                        power_integral(cell.left(), cell.right(), 0.0, 1.0) / tree.cell_measure();
                    let mut d = Mat::identity(dim, dim);
                    d[(0, 0)] = mean_abs.powf(alpha);
                    d[(1, 1)] = mean_abs.powf(-alpha);
                    linalg::symmetrize(&(&r * d * r.transpose()))
                })
                .collect();
            MatrixWeight::new(depth, dim, cells)
        }
        WeightSpec::LogWalk {
            sigma,
            seed: walk_seed,
        } => {
            let tree = DyadicTree::new(depth)?;
            let mut rng = seeded_rng(walk_seed, seed);
            let mut h = Mat::zeros(dim, dim);
            let mut cells = Vec::with_capacity(tree.num_cells());
            for j in 0..tree.num_cells() {
                if j > 0 {
                    h += symmetric_gaussian(&mut rng, dim) * sigma;
                }
                cells.push(linalg::sym_apply(&h, f64::exp));
            }
            MatrixWeight::new(depth, dim, cells)
        }
    }
}

/// A random weight from one of three shapes: i.i.d. `exp(σ G)`, a log-walk,
/// or `G Gᵀ + εI`.
pub fn random_weight(rng: &mut impl Rng, depth: u32, dim: usize) -> Result<MatrixWeight> {
    let tree = DyadicTree::new(depth)?;
    let n = tree.num_cells();
    let cells: Vec<Mat> = match rng.random_range(0..3) {
        0 => {
            let sigma = rng.random_range(0.1..1.5);
            (0..n)
                .map(|_| linalg::sym_apply(&(symmetric_gaussian(rng, dim) * sigma), f64::exp))
                .collect()
        }
        1 => {
            let sigma = rng.random_range(0.05..0.6);
            let mut h = symmetric_gaussian(rng, dim);
            (0..n)
                .map(|_| {
                    h += symmetric_gaussian(rng, dim) * sigma;
                    linalg::sym_apply(&h, f64::exp)
                })
                .collect()
        }
        _ => {
            let eps = rng.random_range(0.01..1.0);
            (0..n)
                .map(|_| {
                    let g = Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
                    &g * g.transpose() + Mat::identity(dim, dim) * eps
                })
                .collect()
        }
    };
    MatrixWeight::new(depth, dim, cells)
}

/// Gaussian vector function with some cells zeroed and a random overall scale.
pub fn random_vector_fn(rng: &mut impl Rng, depth: u32, dim: usize) -> Result<GridVectorFn> {
    let tree = DyadicTree::new(depth)?;
    let scale = 10f64.powf(rng.random_range(-1.0..1.0));
    let zero_rate = rng.random_range(0.0..0.4);
    let cells = (0..tree.num_cells())
        .map(|_| {
            if rng.random_bool(zero_rate) {
                Vector::zeros(dim)
            } else {
                Vector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal) * scale)
            }
        })
        .collect();
    GridVectorFn::new(depth, dim, cells)
}

/// `A_I = |I| e^{Z} B Bᵀ` with `B` a Gaussian `d×r` block of random rank,
/// present on a random subset of intervals.
pub fn random_carleson(rng: &mut impl Rng, depth: u32, dim: usize) -> Result<CarlesonSequence> {
    let tree = DyadicTree::new(depth)?;
    let density = rng.random_range(0.2..1.0);
    let mut entries = BTreeMap::new();
    for i in tree.intervals() {
        if !rng.random_bool(density) {
            continue;
        }
        let rank = rng.random_range(1..=dim);
        let b = Mat::from_fn(dim, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z: f64 = rng.sample(StandardNormal);
        entries.insert(
            i,
            linalg::symmetrize(&(&b * b.transpose())) * (i.measure() * z.exp()),
        );
    }
    CarlesonSequence::new(depth, dim, entries)
}

/// `S_I = |I|^{1/2} e^{Z} G` on a random subset of intervals.
pub fn random_matrix_sequence(
    rng: &mut impl Rng,
    depth: u32,
    dim: usize,
) -> Result<MatrixSequence> {
    let tree = DyadicTree::new(depth)?;
    let density = rng.random_range(0.1..1.0);
    let mut entries = BTreeMap::new();
    for i in tree.intervals() {
        if !rng.random_bool(density) {
            continue;
        }
        let z: f64 = rng.sample(StandardNormal);
        let g = Mat::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        entries.insert(i, g * (i.measure().sqrt() * z.exp()));
    }
    MatrixSequence::new(depth, dim, entries)
}

/// `T_I = ⟨W⟩_I^{1/2} A_I^{1/2}`.
pub fn weighted_root_sequence(
    weight: &MatrixWeight,
    a: &CarlesonSequence,
) -> Result<MatrixSequence> {
    let avg = weight.averages();
    let entries = a
        .entries()
        .iter()
        .map(|(i, m)| {
            let w_half = linalg::spd_power(&avg[i.flat()], 0.5)?;
            Ok((*i, w_half * linalg::sym_apply(m, |x| x.max(0.0).sqrt())))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    MatrixSequence::new(weight.depth(), weight.dim(), entries)
}

/// The scalar weight and sequence formed by the `(0,0)` entries.
pub fn leading_scalar_parts(
    weight: &MatrixWeight,
    a: &CarlesonSequence,
) -> Result<(MatrixWeight, CarlesonSequence)> {
    let w: Vec<f64> = weight.cells().iter().map(|m| m[(0, 0)]).collect();
    let entries: Vec<(DyadicIndex, f64)> = a
        .entries()
        .iter()
        .map(|(i, m)| (*i, m[(0, 0)].max(0.0)))
        .collect();
    Ok((
        MatrixWeight::scalar(weight.depth(), &w)?,
        CarlesonSequence::scalar(a.depth(), &entries)?,
    ))
}

/// Maximal stopping intervals of each band are pairwise disjoint, and every
/// interval with a nonzero value is assigned the largest band of a stopping
/// interval containing it.
pub fn stopping_structure_holds(dec: &StoppingDecomposition, tree: &DyadicTree) -> bool {
    for members in dec.levels.values() {
        for (a, x) in members.iter().enumerate() {
            if members[a + 1..].iter().any(|y| !x.is_disjoint(y)) {
                return false;
            }
        }
    }
    tree.intervals().all(|i| {
        let assigned = dec.star_assignment.get(&i).copied();
        if dec.values[i.flat()] == 0.0 {
            return assigned.is_none();
        }
        let best = dec
            .levels
            .iter()
            .filter(|(_, members)| members.iter().any(|j| j.contains(&i)))
            .map(|(k, _)| *k)
            .max();
        best.is_some() && assigned == best
    })
}

/// One invariant evaluated on an instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub holds: bool,
}

impl InvariantCheck {
    fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            holds: value <= bound,
        }
    }

    fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound,
            holds: value >= bound,
        }
    }

    fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: ok as u8 as f64,
            bound: 1.0,
            holds: ok,
        }
    }
}

/// A fully materialized instance; replaying it needs no generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: usize,
    /// Seed of the maximal-norm search.
    pub seed: u64,
    pub maximal_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<WeightSpec>,
    pub weight: WeightFile,
    pub f: VectorFnFile,
    pub carleson: SequenceFile,
    pub sequence: SequenceFile,
    pub family: SparseFamilyFile,
}

impl Instance {
    /// Random instance: weight from `spec` (random when `None`), all other
    /// objects drawn from `seed`.
    pub fn generate(
        id: usize,
        spec: Option<&WeightSpec>,
        depth: u32,
        dim: usize,
        strategy: SparseStrategy,
        maximal_trials: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = seeded_rng(seed, 1);
        let weight = match spec {
            Some(s) => gen_weight(s, depth, dim, seed)?,
            None => random_weight(&mut rng, depth, dim)?,
        };
        let f = random_vector_fn(&mut rng, depth, dim)?;
        let a = random_carleson(&mut rng, depth, dim)?;
        let s = random_matrix_sequence(&mut rng, depth, dim)?;
        let family = generate_sparse(depth, strategy, seed)?;
        Ok(Self {
            id,
            seed,
            maximal_trials,
            spec: spec.cloned(),
            weight: weight.to_file(),
            f: f.to_file(),
            carleson: a.to_file(),
            sequence: s.to_file(),
            family: family.to_file(),
        })
    }

    pub fn label(&self) -> String {
        self.spec
            .as_ref()
            .map_or_else(|| "random".into(), WeightSpec::label)
    }
}

/// One report line. Column order is the v1 CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub schema: &'static str,
    pub id: usize,
    pub family: String,
    pub a2: f64,
    pub c2_norm: f64,
    pub c2_matrix: f64,
    pub c1: f64,
    pub scalar_ratio: f64,
    pub maximal_lower_bound: f64,
    pub sparse_norm: f64,
    pub sparse_norm_method: NormMethod,
    pub packing: f64,
    pub bound_ratio: f64,
    pub duality_ratio: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub row: ReportRow,
    pub checks: Vec<InvariantCheck>,
}

impl InstanceReport {
    pub fn first_violation(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

/// Slack `1e-9 · max(1, scale)` used for comparisons between computed constants.
fn slack(tol: f64, scale: f64) -> f64 {
    tol * scale.abs().max(1.0)
}

/// Computes a report row and re-checks every assertable inequality.
pub fn check_instance(inst: &Instance) -> Result<InstanceReport> {
    let w = MatrixWeight::from_file(&inst.weight)?;
    let f = GridVectorFn::from_file(&inst.f)?;
    let a = CarlesonSequence::from_file(&inst.carleson)?;
    let s = MatrixSequence::from_file(&inst.sequence)?;
    let family = SparseFamily::from_file(&inst.family)?;
    let tree = *w.tree();
    let mut checks = Vec::new();

    let a2 = w.a2_characteristic()?;
    checks.push(InvariantCheck::at_least("a2_at_least_one", a2, 1.0 - 1e-10));
    let contraction = w.contraction_profile()?.into_iter().fold(0.0, f64::max);
    checks.push(InvariantCheck::at_most(
        "contraction",
        contraction,
        1.0 + 1e-10,
    ));

    let c2_norm = testing_constant_norm(&w, &a)?;
    let c2_matrix = testing_constant_matrix(&w, &a)?;
    let c1 = embedding_constant(&w, &a)?;
    checks.push(InvariantCheck::at_most(
        "testing_matrix_below_embedding",
        c2_matrix,
        c1 + slack(1e-9, c1),
    ));
    let (ws, as_) = leading_scalar_parts(&w, &a)?;
    let scalar_ratio = scalar_cet_ratio(&ws, &as_)?;
    checks.push(InvariantCheck::at_least(
        "scalar_ratio_lower",
        scalar_ratio,
        1.0 - 1e-9,
    ));
    checks.push(InvariantCheck::at_most(
        "scalar_ratio_upper",
        scalar_ratio,
        4.0 + 1e-9,
    ));

    let aux_max = maximal_aux(&w.inverse()?, &f)?.max();
    let dom = check_domination(&w, &f)?;
    checks.push(InvariantCheck::at_most(
        "maximal_domination",
        dom,
        slack(1e-10, aux_max),
    ));
    checks.push(InvariantCheck::at_most(
        "g_domination",
        check_g_domination(&w, &f)?,
        4.0 + 1e-9,
    ));
    checks.push(InvariantCheck::flag(
        "stopping_structure",
        stopping_structure_holds(&stopping_time(&w, &f)?, &tree),
    ));
    checks.push(InvariantCheck::at_most("sest", check_sest(&s), 1.0 + 1e-9));

    let packing = packing_constant(&family);
    checks.push(InvariantCheck::at_most("packing", packing, 2.0 + 1e-12));
    let chain = proof_chain_diagnostic(&family, &w)?;
    checks.push(InvariantCheck::at_most(
        "testing_inverse_sequence",
        chain.testing_inverse,
        2.0 + 1e-9,
    ));
    checks.push(InvariantCheck::at_most(
        "testing_direct_sequence",
        chain.testing_direct,
        2.0 + 1e-9,
    ));
    checks.push(InvariantCheck::at_least(
        "sparse_bound",
        chain.bound,
        chain.norm.value - slack(1e-9, chain.norm.value),
    ));
    let bound_ratio = chain.norm.value / a2.powf(1.5);
    checks.push(InvariantCheck::flag(
        "bound_ratio_finite",
        bound_ratio.is_finite(),
    ));

    let t = weighted_root_sequence(&w, &a)?;
    let duality = duality_ratio(&s, &t)?;
    checks.push(InvariantCheck::flag(
        "duality_ratio_finite",
        duality.is_finite(),
    ));

    let maximal = maximal_norm_lower_bound(MaximalKind::Mw, &w, inst.maximal_trials, inst.seed)?;

    Ok(InstanceReport {
        row: ReportRow {
            schema: SCHEMA_VERSION,
            id: inst.id,
            family: inst.label(),
            a2,
            c2_norm,
            c2_matrix,
            c1,
            scalar_ratio,
            maximal_lower_bound: maximal.ratio,
            sparse_norm: chain.norm.value,
            sparse_norm_method: chain.norm.method,
            packing,
            bound_ratio,
            duality_ratio: duality,
            wall_time_s: 0.0,
        },
        checks,
    })
}

fn default_per_weight() -> usize {
    1
}

fn default_trials() -> usize {
    2
}

fn default_strategy() -> SparseStrategy {
    SparseStrategy::Random
}

/// Sweep configuration. Instance `id` uses weight spec `weights[id / instances_per_weight]`
/// and seed `derive_seed(seed, id)`; an empty `weights` list means random weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub depth: u32,
    pub dim: usize,
    pub seed: u64,
    #[serde(default)]
    pub weights: Vec<WeightSpec>,
    #[serde(default = "default_per_weight")]
    pub instances_per_weight: usize,
    #[serde(default = "default_strategy")]
    pub sparse_strategy: SparseStrategy,
    #[serde(default = "default_trials")]
    pub maximal_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quarantine_dir: Option<PathBuf>,
    /// Record wall times; off by default so reports are byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    pub fn new(depth: u32, dim: usize, seed: u64) -> Self {
        Self {
            depth,
            dim,
            seed,
            weights: Vec::new(),
            instances_per_weight: 1,
            sparse_strategy: SparseStrategy::Random,
            maximal_trials: 2,
            csv_out: None,
            json_out: None,
            quarantine_dir: None,
            timing: false,
        }
    }

    /// Rotated-pair weights at `α = 0.1, …, 0.9`, `θ = π/4`, chain families.
    pub fn alpha_sweep(depth: u32, dim: usize, seed: u64) -> Self {
        Self {
            weights: (1..=9)
                .map(|k| WeightSpec::RotatedPair {
                    alpha: k as f64 / 10.0,
                    theta: FRAC_PI_4,
                })
                .collect(),
            sparse_strategy: SparseStrategy::Chain,
            maximal_trials: 1,
            ..Self::new(depth, dim, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        DyadicTree::new(self.depth)?;
        if self.dim == 0 {
            return Err(LabError::InvalidSpec("dim must be >= 1".into()));
        }
        if self.instances_per_weight == 0 || self.maximal_trials == 0 {
            return Err(LabError::InvalidSpec("counts must be >= 1".into()));
        }
        for spec in &self.weights {
            spec.validate(self.dim)?;
        }
        Ok(())
    }

    pub fn num_instances(&self) -> usize {
        self.weights.len().max(1) * self.instances_per_weight
    }

    pub fn instance(&self, id: usize) -> Result<Instance> {
        let spec = self.weights.get(id / self.instances_per_weight);
        Instance::generate(
            id,
            spec,
            self.depth,
            self.dim,
            self.sparse_strategy,
            self.maximal_trials,
            derive_seed(self.seed, id as u64),
        )
    }
}

/// Least-squares slopes of `log y` against `log [W]_{A2}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slopes {
    pub maximal_lower_bound: Option<f64>,
    pub c1_over_c2: Option<f64>,
    pub sparse_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub instances: usize,
    pub max_a2: f64,
    pub max_bound_ratio: f64,
    pub max_duality_ratio: f64,
    pub max_scalar_ratio: f64,
    pub log_log_slopes_vs_a2: Slopes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceRecord {
    pub id: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<WeightSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema: &'static str,
    pub config: ExperimentConfig,
    pub instances: Vec<InstanceRecord>,
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

/// `None` unless at least two points with distinct `x` exist.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn summarize(rows: &[ReportRow]) -> Summary {
    let max = |f: fn(&ReportRow) -> f64| rows.iter().map(f).fold(0.0, f64::max);
    let against = |f: fn(&ReportRow) -> f64| -> Vec<(f64, f64)> {
        rows.iter().map(|r| (r.a2, f(r))).collect()
    };
    Summary {
        instances: rows.len(),
        max_a2: max(|r| r.a2),
        max_bound_ratio: max(|r| r.bound_ratio),
        max_duality_ratio: max(|r| r.duality_ratio),
        max_scalar_ratio: max(|r| r.scalar_ratio),
        log_log_slopes_vs_a2: Slopes {
            maximal_lower_bound: log_log_slope(&against(|r| r.maximal_lower_bound)),
            c1_over_c2: log_log_slope(&against(|r| {
                if r.c2_norm > 0.0 {
                    r.c1 / r.c2_norm
                } else {
                    0.0
                }
            })),
            sparse_norm: log_log_slope(&against(|r| r.sparse_norm)),
        },
    }
}

impl SweepReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| LabError::Numeric(format!("csv serialization failed: {e}")))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| LabError::Numeric(format!("csv serialization failed: {e}")))?;
        String::from_utf8(bytes).map_err(|e| LabError::Numeric(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| LabError::Numeric(format!("json serialization failed: {e}")))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| LabError::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| LabError::io(path, e))
}

fn quarantine_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .quarantine_dir
        .clone()
        .or_else(|| {
            config
                .csv_out
                .as_ref()
                .or(config.json_out.as_ref())
                .and_then(|p| p.parent().map(Path::to_path_buf))
        })
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Runs every instance in parallel, re-checks invariants, and writes the
/// configured reports. Rows are in instance order. The first violating
/// instance is written to `quarantine-<id>.json` and the run fails.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let n = config.num_instances();
    let instances = (0..n)
        .map(|id| config.instance(id))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<InstanceReport>> = instances
        .par_iter()
        .map(|inst| {
            let start = Instant::now();
            let mut report = check_instance(inst)?;
            if config.timing {
                report.row.wall_time_s = start.elapsed().as_secs_f64();
            }
            Ok(report)
        })
        .collect();

    let mut rows = Vec::with_capacity(n);
    for (inst, result) in instances.iter().zip(results) {
        let report = result?;
        if let Some(v) = report.first_violation() {
            let path = quarantine_dir(config).join(format!("quarantine-{}.json", inst.id));
            write_json(&path, inst)?;
            return Err(LabError::InvariantViolation {
                id: inst.id,
                check: format!("{} = {} against bound {}", v.name, v.value, v.bound),
                quarantine: Some(path),
            });
        }
        rows.push(report.row);
    }

    let report = SweepReport {
        schema: SCHEMA_VERSION,
        config: config.clone(),
        instances: instances
            .iter()
            .map(|i| InstanceRecord {
                id: i.id,
                seed: i.seed,
                spec: i.spec.clone(),
            })
            .collect(),
        summary: summarize(&rows),
        rows,
    };
    if let Some(path) = &config.csv_out {
        write_text(path, &report.to_csv()?)?;
    }
    if let Some(path) = &config.json_out {
        write_text(path, &report.to_json()?)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_streams() {
        let a: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(seeded_rng(7, 3), |r, _| Some(r.next_u64()))
            .collect();
        let b: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(seeded_rng(7, 3), |r, _| Some(r.next_u64()))
            .collect();
        let c: Vec<u64> = (0..4)
            .map(|_| 0)
            .scan(seeded_rng(7, 4), |r, _| Some(r.next_u64()))
            .collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
    }

    #[test]
    fn power_integrals() {
        // ∫_0^1 x^{1/2} = 2/3
        assert!((power_integral(0.0, 1.0, 0.0, 0.5) - 2.0 / 3.0).abs() < 1e-15);
        // split at the center: ∫_{-1/2}^{1/2} |x|^{-1/2} = 2·2·(1/2)^{1/2}
        assert!((power_integral(0.0, 1.0, 0.5, -0.5) - 4.0 * 0.5f64.sqrt()).abs() < 1e-14);
        // center to the right
        let got = power_integral(0.25, 0.5, 1.0, 0.5);
        let want = (0.75f64.powf(1.5) - 0.5f64.powf(1.5)) / 1.5;
        assert!((got - want).abs() < 1e-15);
        // tiny cells far from the center keep full precision
        let b = 0.5 + 1e-9;
        let got = power_integral(0.5, b, 0.0, 0.3) / (b - 0.5);
        assert!((got - 0.5f64.powf(0.3)).abs() < 1e-9 * 0.5f64.powf(0.3));
    }

    #[test]
    fn power_cells_average_to_integral() {
        let p = power_cell_values(6, 0.4, 0.3).unwrap();
        let total = p.iter().sum::<f64>() / p.len() as f64;
        let want = power_integral(0.0, 1.0, 0.3, 0.4);
        assert!((total - want).abs() < 1e-13);
    }

    #[test]
    fn gen_weight_examples() {
        let id = gen_weight(&WeightSpec::Identity, 4, 3, 0).unwrap();
        assert_eq!(id.a2_characteristic().unwrap(), 1.0);
        for c in [0.0, 0.37, 2.0] {
            let w = gen_weight(
                &WeightSpec::ScalarPower {
                    alpha: 0.0,
                    center: c,
                },
                4,
                2,
                0,
            )
            .unwrap();
            assert_eq!(w, MatrixWeight::identity(4, 2).unwrap());
        }
        let bad = [
            WeightSpec::ScalarPower {
                alpha: 1.0,
                center: 0.0,
            },
            WeightSpec::ScalarPower {
                alpha: -1.0,
                center: 0.0,
            },
            WeightSpec::ScalarPower {
                alpha: f64::NAN,
                center: 0.0,
            },
            WeightSpec::LogWalk {
                sigma: -0.1,
                seed: 0,
            },
        ];
        for spec in bad {
            assert!(matches!(
                gen_weight(&spec, 3, 2, 0),
                Err(LabError::InvalidSpec(_))
            ));
        }
        let rp = WeightSpec::RotatedPair {
            alpha: 0.3,
            theta: 0.2,
        };
        assert!(gen_weight(&rp, 3, 1, 0).is_err());
        let w = gen_weight(&rp, 3, 3, 0).unwrap();
        assert_eq!(w.cell(0)[(2, 2)], 1.0);
    }

    #[test]
    fn rotated_pair_a2_matches_scalar_parts() {
        // a constant rotation does not change the characteristic
        let depth = 6;
        let w = gen_weight(
            &WeightSpec::RotatedPair {
                alpha: 0.5,
                theta: 0.9,
            },
            depth,
            2,
            0,
        )
        .unwrap();
        let tree = DyadicTree::new(depth).unwrap();
        let p: Vec<f64> = (0..tree.num_cells())
            .map(|j| {
                let c = tree.cell(j);
                (c.left() + c.right()) / 2.0
            })
            .collect();
        let up = MatrixWeight::scalar(depth, &p.iter().map(|x| x.powf(0.5)).collect::<Vec<_>>())
            .unwrap();
        let down = MatrixWeight::scalar(depth, &p.iter().map(|x| x.powf(-0.5)).collect::<Vec<_>>())
            .unwrap();
        let want = up
            .a2_characteristic()
            .unwrap()
            .max(down.a2_characteristic().unwrap());
        assert!((w.a2_characteristic().unwrap() - want).abs() < 1e-10 * want);
    }

    #[test]
    fn log_walk_is_reproducible() {
        let spec = WeightSpec::LogWalk {
            sigma: 0.3,
            seed: 11,
        };
        let a = gen_weight(&spec, 4, 2, 5).unwrap();
        assert_eq!(a, gen_weight(&spec, 4, 2, 5).unwrap());
        assert_ne!(a, gen_weight(&spec, 4, 2, 6).unwrap());
        let flat = gen_weight(
            &WeightSpec::LogWalk {
                sigma: 0.0,
                seed: 1,
            },
            3,
            2,
            0,
        )
        .unwrap();
        assert_eq!(flat.a2_characteristic().unwrap(), 1.0);
    }

    #[test]
    fn spec_json_shape() {
        let spec: WeightSpec =
            serde_json::from_str(r#"{"family":"scalar-power","alpha":0.5}"#).unwrap();
        assert_eq!(
            spec,
            WeightSpec::ScalarPower {
                alpha: 0.5,
                center: 0.0
            }
        );
        let cfg: ExperimentConfig = serde_json::from_str(
            r#"{"depth":3,"dim":2,"seed":1,"weights":[{"family":"identity"}],"sparse_strategy":"greedy-maximal"}"#,
        )
        .unwrap();
        assert_eq!(cfg.sparse_strategy, SparseStrategy::GreedyMaximal);
        assert_eq!(cfg.instances_per_weight, 1);
    }

    #[test]
    fn identity_row() {
        let mut cfg = ExperimentConfig::new(3, 2, 5);
        cfg.weights = vec![WeightSpec::Identity];
        let report = run_sweep(&cfg).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.a2, 1.0);
        assert!((row.bound_ratio - row.sparse_norm).abs() < 1e-15);
        assert_eq!(row.wall_time_s, 0.0);
        assert!(row.maximal_lower_bound >= 1.0 - 1e-12);
    }

    #[test]
    fn sweep_rows_are_ordered_and_reproducible() {
        let mut cfg = ExperimentConfig::new(3, 2, 9);
        cfg.instances_per_weight = 6;
        let a = run_sweep(&cfg).unwrap();
        let b = run_sweep(&cfg).unwrap();
        assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
        assert_eq!(
            a.rows.iter().map(|r| r.id).collect::<Vec<_>>(),
            (0..6).collect::<Vec<_>>()
        );
        let csv = a.to_csv().unwrap();
        assert!(csv.starts_with("schema,id,family,a2,"));
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1.5, 2.0, 4.0, 9.0]
            .iter()
            .map(|&x: &f64| (x, 3.0 * x.powf(1.5)))
            .collect();
        assert!((log_log_slope(&pts).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&[(2.0, 1.0)]), None);
        assert_eq!(log_log_slope(&[(2.0, 1.0), (2.0, 3.0)]), None);
    }

    #[test]
    fn stopping_structure_on_random_instances() {
        let mut rng = seeded_rng(3, 0);
        for _ in 0..20 {
            let w = random_weight(&mut rng, 4, 2).unwrap();
            let f = random_vector_fn(&mut rng, 4, 2).unwrap();
            let dec = stopping_time(&w, &f).unwrap();
            assert!(stopping_structure_holds(&dec, w.tree()));
        }
    }
}
