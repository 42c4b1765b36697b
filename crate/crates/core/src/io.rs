//! JSON persistence for weights, functions, sequences and sparse families.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::carleson::{CarlesonSequence, SequenceFile};
use crate::error::{LabError, Result};
use crate::seqspaces::MatrixSequence;
use crate::sparse::{SparseFamily, SparseFamilyFile};
use crate::weights::{GridVectorFn, MatrixWeight, VectorFnFile, WeightFile};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| LabError::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| LabError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

pub fn load_weight(path: &Path) -> Result<MatrixWeight> {
    MatrixWeight::from_file(&read_json::<WeightFile>(path)?)
}

pub fn save_weight(path: &Path, w: &MatrixWeight) -> Result<()> {
    write_json(path, &w.to_file())
}

pub fn load_vector_fn(path: &Path) -> Result<GridVectorFn> {
    GridVectorFn::from_file(&read_json::<VectorFnFile>(path)?)
}

pub fn save_vector_fn(path: &Path, f: &GridVectorFn) -> Result<()> {
    write_json(path, &f.to_file())
}

pub fn load_carleson(path: &Path) -> Result<CarlesonSequence> {
    CarlesonSequence::from_file(&read_json::<SequenceFile>(path)?)
}

pub fn save_carleson(path: &Path, a: &CarlesonSequence) -> Result<()> {
    write_json(path, &a.to_file())
}

pub fn load_matrix_sequence(path: &Path) -> Result<MatrixSequence> {
    MatrixSequence::from_file(&read_json::<SequenceFile>(path)?)
}

pub fn save_matrix_sequence(path: &Path, s: &MatrixSequence) -> Result<()> {
    write_json(path, &s.to_file())
}

pub fn load_sparse_family(path: &Path) -> Result<SparseFamily> {
    SparseFamily::from_file(&read_json::<SparseFamilyFile>(path)?)
}

pub fn save_sparse_family(path: &Path, f: &SparseFamily) -> Result<()> {
    write_json(path, &f.to_file())
}
