//! Atomic file output, hash manifests and JSON records for states and density matrices.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fock::{DensityMatrix, FockBasis, StateVector};
use crate::linalg::{CMatrix, CVector, C64};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write through a temporary file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::domain(format!("{} has no file name", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())?;
    Ok(sha256_hex(text.as_bytes()))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

/// Serialize rows to CSV text with a header.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(format!("csv: {e}")))
}

/// Files produced by one stage with their SHA-256 digests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Manifest {
    pub stage: String,
    pub config_sha256: String,
    /// Digests of the predecessor manifests this stage consumed.
    pub inputs: BTreeMap<String, String>,
    /// Paths relative to the output directory.
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config_sha256: &str) -> Self {
        Manifest {
            stage: stage.into(),
            config_sha256: config_sha256.into(),
            ..Default::default()
        }
    }

    pub fn path(root: &Path, stage: &str) -> PathBuf {
        root.join(stage).join("manifest.json")
    }

    pub fn write(&self, root: &Path) -> Result<String> {
        write_json(&Self::path(root, &self.stage), self)
    }

    /// Load a stage manifest and return it with its own digest.
    pub fn load(root: &Path, stage: &str) -> Result<(Self, String)> {
        let path = Self::path(root, stage);
        let bytes = read_bytes(&path)?;
        Ok((serde_json::from_slice(&bytes)?, sha256_hex(&bytes)))
    }

    /// Read a listed file and check its digest.
    pub fn read_verified(&self, root: &Path, rel: &str) -> Result<Vec<u8>> {
        let expected = self.files.get(rel).ok_or_else(|| {
            Error::io(
                root.join(rel),
                std::io::Error::new(std::io::ErrorKind::NotFound, "not listed in manifest"),
            )
        })?;
        let bytes = read_bytes(&root.join(rel))?;
        let got = sha256_hex(&bytes);
        if &got != expected {
            return Err(Error::Consistency(format!(
                "{rel}: digest {got} does not match manifest {expected}"
            )));
        }
        Ok(bytes)
    }
}

fn pairs(v: impl Iterator<Item = C64>) -> Vec<[f64; 2]> {
    v.map(|z| [z.re, z.im]).collect()
}

/// A state vector over a number sector of the full chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub n_modes: usize,
    pub particles: Option<usize>,
    pub amplitudes: Vec<[f64; 2]>,
}

impl StateRecord {
    pub fn new(psi: &StateVector) -> Self {
        StateRecord {
            n_modes: psi.basis().mode_count(),
            particles: psi.basis().sector(),
            amplitudes: pairs(psi.amplitudes().iter().copied()),
        }
    }

    pub fn decode(&self) -> Result<StateVector> {
        let basis = Arc::new(FockBasis::new(self.n_modes, self.particles)?);
        if basis.dim() != self.amplitudes.len() {
            return Err(Error::Format(format!(
                "{} amplitudes for a basis of dimension {}",
                self.amplitudes.len(),
                basis.dim()
            )));
        }
        let amps = CVector::from_iterator(self.amplitudes.len(), self.amplitudes.iter().map(|p| C64::new(p[0], p[1])));
        StateVector::new(basis, amps)
    }
}

/// A density matrix over the full Fock space of `n_modes` modes, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRecord {
    pub n_modes: usize,
    pub elements: Vec<Vec<[f64; 2]>>,
}

impl DensityRecord {
    pub fn new(rho: &DensityMatrix) -> Self {
        let m = rho.elements();
        DensityRecord {
            n_modes: rho.basis().mode_count(),
            elements: (0..m.nrows()).map(|i| pairs(m.row(i).iter().copied())).collect(),
        }
    }

    pub fn decode(&self) -> Result<DensityMatrix> {
        let basis = FockBasis::shared(self.n_modes, None)?;
        let d = basis.dim();
        if self.elements.len() != d || self.elements.iter().any(|r| r.len() != d) {
            return Err(Error::Format(format!("density matrix is not {d} x {d}")));
        }
        let m = CMatrix::from_fn(d, d, |i, j| C64::new(self.elements[i][j][0], self.elements[i][j][1]));
        DensityMatrix::new(basis, m)
    }
}
