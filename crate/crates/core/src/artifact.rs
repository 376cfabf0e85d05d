//! Plain-text storage of trained bases.
//!
//! Layout, one token per line after the header:
//!
//! ```text
//! strb-artifact 1
//! N ell L
//! Ψ entries, column-major (N·ell values)
//! Φ entries, column-major (N·L values)
//! interpolation indices (L values)
//! ```
//!
//! Floats use Rust's shortest round-trip representation, so a save/load
//! cycle is bitwise exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::deim::DeimData;
use crate::discretization::FEOperators;
use crate::error::{Error, Result};
use crate::reduction::RBBasis;

const MAGIC: &str = "strb-artifact 1";

/// Trained bases as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub psi: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub indices: Vec<usize>,
}

impl Artifact {
    pub fn new(basis: &RBBasis, deim: &DeimData) -> Result<Self> {
        if basis.n_dofs() != deim.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: basis.n_dofs(),
                found: deim.n_dofs(),
            });
        }
        Ok(Self {
            psi: basis.psi().clone(),
            phi: deim.phi().clone(),
            indices: deim.indices().to_vec(),
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.psi.nrows()
    }

    /// Rebuilds the bases, checking `V`-orthonormality of `Ψ` and
    /// solvability of the interpolation.
    pub fn into_bases(self, ops: &FEOperators) -> Result<(RBBasis, DeimData)> {
        if self.n_dofs() != ops.n_dofs() {
            return Err(Error::DimensionMismatch {
                expected: ops.n_dofs(),
                found: self.n_dofs(),
            });
        }
        let basis = RBBasis::from_orthonormal(ops, self.psi)?;
        let deim = DeimData::from_parts(self.phi, self.indices)?;
        Ok((basis, deim))
    }

    pub fn to_text(&self) -> String {
        let n = self.psi.nrows();
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "{} {} {}", n, self.psi.ncols(), self.indices.len());
        for v in self.psi.iter().chain(self.phi.iter()) {
            let _ = writeln!(s, "{v:?}");
        }
        for i in &self.indices {
            let _ = writeln!(s, "{i}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(MAGIC) {
            return Err(Error::Format("missing artifact header".into()));
        }
        let dims: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::Format("missing dimension line".into()))?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::Format(format!("bad dimension {t:?}")))
            })
            .collect::<Result<_>>()?;
        let [n, ell, l] = dims[..] else {
            return Err(Error::Format("dimension line needs N ell L".into()));
        };
        let mut floats = |count: usize| -> Result<Vec<f64>> {
            (0..count)
                .map(|_| {
                    let t = lines
                        .next()
                        .ok_or_else(|| Error::Format("truncated artifact".into()))?;
                    let v: f64 = t
                        .parse()
                        .map_err(|_| Error::Format(format!("bad number {t:?}")))?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Format(format!("non-finite entry {t:?}")))
                    }
                })
                .collect()
        };
        let psi = DMatrix::from_vec(n, ell, floats(n * ell)?);
        let phi = DMatrix::from_vec(n, l, floats(n * l)?);
        let indices = (0..l)
            .map(|_| {
                let t = lines
                    .next()
                    .ok_or_else(|| Error::Format("truncated artifact".into()))?;
                t.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad index {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if lines.next().is_some() {
            return Err(Error::Format("trailing data after indices".into()));
        }
        Ok(Self { psi, phi, indices })
    }
}

pub fn save_artifact(path: &Path, basis: &RBBasis, deim: &DeimData) -> Result<()> {
    fs::write(path, Artifact::new(basis, deim)?.to_text())?;
    Ok(())
}

pub fn load_artifact(path: &Path) -> Result<Artifact> {
    Artifact::from_text(&fs::read_to_string(path)?)
}
