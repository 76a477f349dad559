//! Versioned JSON file format `fmo-inst/1` for problem instances and material states.
//!
//! Instance document:
//!
//! ```text
//! {
//!   "format": "fmo-inst/1",
//!   "kind": "instance",
//!   "k": 3, "n": 4, "m": 1, "loads": 1,
//!   "params": { "r": .., "gamma": .., "eta": .., "nu": .. },
//!   "rho_l": [..m], "rho_u": [..m],
//!   "elements": [ [ [[row, col, value], ..], .. nig operators ], .. m elements ],
//!   "load_vectors": [ [..n], .. ]
//! }
//! ```
//!
//! Every operator lists all `k * width` entries of its local block, zeros
//! included, so the column support is preserved. Columns are global free-DOF
//! indices; the generated meshes number free DOFs node-major, `x` before `y`.
//!
//! Material document: `{"format": "fmo-inst/1", "kind": "material", "k": 3,
//! "blocks": [[packed upper triangle, row-major], ..]}`.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so
//! reading back a written file reproduces every value bit for bit.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};
use crate::model::{Element, LocalOperator, MaterialState, ProblemInstance, SymBlock};

pub const FORMAT_VERSION: &str = "fmo-inst/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub r: f64,
    pub gamma: f64,
    pub eta: f64,
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDocument {
    pub format: String,
    pub kind: String,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub loads: usize,
    pub params: Params,
    pub rho_l: Vec<f64>,
    pub rho_u: Vec<f64>,
    pub elements: Vec<Vec<Vec<(usize, usize, f64)>>>,
    pub load_vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialDocument {
    pub format: String,
    pub kind: String,
    pub k: usize,
    pub blocks: Vec<Vec<f64>>,
}

fn format_err(e: impl std::fmt::Display) -> FmoError {
    FmoError::Format(e.to_string())
}

fn check_header(format: &str, kind: &str, expected: &str) -> Result<()> {
    if format != FORMAT_VERSION {
        return Err(FmoError::Format(format!(
            "unsupported format {format:?}, expected {FORMAT_VERSION:?}"
        )));
    }
    if kind != expected {
        return Err(FmoError::Format(format!("expected a {expected} document, found {kind:?}")));
    }
    Ok(())
}

impl InstanceDocument {
    pub fn from_instance(inst: &ProblemInstance) -> Self {
        let k = inst.k;
        let elements = inst
            .elements
            .iter()
            .map(|el| {
                el.operators
                    .iter()
                    .map(|op| {
                        let nc = op.width();
                        (0..k)
                            .flat_map(|row| {
                                op.cols
                                    .iter()
                                    .enumerate()
                                    .map(move |(c, &col)| (row, col, op.vals[row * nc + c]))
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        InstanceDocument {
            format: FORMAT_VERSION.to_string(),
            kind: "instance".to_string(),
            k,
            n: inst.n,
            m: inst.m(),
            loads: inst.num_loads(),
            params: Params {
                r: inst.r,
                gamma: inst.gamma,
                eta: inst.eta,
                nu: inst.nu,
            },
            rho_l: inst.rho_l.clone(),
            rho_u: inst.rho_u.clone(),
            elements,
            load_vectors: inst.loads.clone(),
        }
    }

    pub fn into_instance(self) -> Result<ProblemInstance> {
        check_header(&self.format, &self.kind, "instance")?;
        let k = self.k;
        let mut elements = Vec::with_capacity(self.elements.len());
        for (i, ops) in self.elements.into_iter().enumerate() {
            let mut operators = Vec::with_capacity(ops.len());
            for (l, triplets) in ops.into_iter().enumerate() {
                let cols: Vec<usize> = triplets
                    .iter()
                    .map(|t| t.1)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                let nc = cols.len();
                if triplets.len() != k * nc {
                    return Err(FmoError::Format(format!(
                        "element {i} operator {l}: {} entries for a {k} x {nc} block",
                        triplets.len()
                    )));
                }
                let mut vals = vec![0.0; k * nc];
                let mut seen = vec![false; k * nc];
                for (row, col, v) in triplets {
                    let c = cols.binary_search(&col).unwrap();
                    if row >= k || seen[row * nc + c] {
                        return Err(FmoError::Format(format!(
                            "element {i} operator {l}: bad or repeated entry ({row}, {col})"
                        )));
                    }
                    seen[row * nc + c] = true;
                    vals[row * nc + c] = v;
                }
                operators.push(LocalOperator::new(k, cols, vals)?);
            }
            elements.push(Element { operators });
        }
        let inst = ProblemInstance {
            k,
            n: self.n,
            elements,
            loads: self.load_vectors,
            rho_l: self.rho_l,
            rho_u: self.rho_u,
            r: self.params.r,
            gamma: self.params.gamma,
            eta: self.params.eta,
            nu: self.params.nu,
        };
        if inst.m() != self.m || inst.num_loads() != self.loads {
            return Err(FmoError::Format(format!(
                "header declares m = {}, L = {} but body has m = {}, L = {}",
                self.m,
                self.loads,
                inst.m(),
                inst.num_loads()
            )));
        }
        inst.validate()?;
        Ok(inst)
    }
}

impl MaterialDocument {
    pub fn from_state(e: &MaterialState) -> Self {
        MaterialDocument {
            format: FORMAT_VERSION.to_string(),
            kind: "material".to_string(),
            k: e.blocks.first().map_or(0, |b| b.order()),
            blocks: e.blocks.iter().map(|b| b.packed().to_vec()).collect(),
        }
    }

    pub fn into_state(self) -> Result<MaterialState> {
        check_header(&self.format, &self.kind, "material")?;
        let blocks = self
            .blocks
            .into_iter()
            .map(|p| SymBlock::from_packed(self.k, p))
            .collect::<Result<Vec<_>>>()?;
        Ok(MaterialState::new(blocks))
    }
}

pub fn instance_to_string(inst: &ProblemInstance) -> Result<String> {
    serde_json::to_string(&InstanceDocument::from_instance(inst)).map_err(format_err)
}

pub fn instance_from_str(s: &str) -> Result<ProblemInstance> {
    serde_json::from_str::<InstanceDocument>(s)
        .map_err(format_err)?
        .into_instance()
}

pub fn material_to_string(e: &MaterialState) -> Result<String> {
    serde_json::to_string(&MaterialDocument::from_state(e)).map_err(format_err)
}

pub fn material_from_str(s: &str) -> Result<MaterialState> {
    serde_json::from_str::<MaterialDocument>(s)
        .map_err(format_err)?
        .into_state()
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> FmoError + '_ {
    move |e| FmoError::Format(format!("{}: {e}", path.display()))
}

pub fn write_instance(path: &Path, inst: &ProblemInstance) -> Result<()> {
    std::fs::write(path, instance_to_string(inst)?).map_err(io_error(path))
}

pub fn read_instance(path: &Path) -> Result<ProblemInstance> {
    instance_from_str(&std::fs::read_to_string(path).map_err(io_error(path))?)
}

pub fn write_material(path: &Path, e: &MaterialState) -> Result<()> {
    std::fs::write(path, material_to_string(e)?).map_err(io_error(path))
}

pub fn read_material(path: &Path) -> Result<MaterialState> {
    material_from_str(&std::fs::read_to_string(path).map_err(io_error(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem2d::{build_instance, MeshSpec};

    #[test]
    fn instance_round_trip_is_bit_exact() {
        let mut inst =
            build_instance(&MeshSpec::cantilever(3, 2, 3.0, 2.0), 0.3, 2.0, 0.01, 1.7, 3.0, 0.5).unwrap();
        inst.loads[0][1] = 0.1 + 0.2;
        inst.loads[0][2] = -0.0;
        let back = instance_from_str(&instance_to_string(&inst).unwrap()).unwrap();
        assert_eq!(back, inst);
        for (a, b) in back.loads[0].iter().zip(&inst.loads[0]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn material_round_trip() {
        let e = MaterialState::new(vec![SymBlock::from_diagonal(&[1.0 / 3.0, 2.0, 1e-300])]);
        assert_eq!(material_from_str(&material_to_string(&e).unwrap()).unwrap(), e);
    }

    #[test]
    fn wrong_version_rejected() {
        let inst = build_instance(&MeshSpec::cantilever(1, 1, 1.0, 1.0), 0.3, 2.0, 0.01, 1.0, 1.0, 0.0).unwrap();
        let s = instance_to_string(&inst).unwrap().replace(FORMAT_VERSION, "fmo-inst/0");
        assert!(matches!(instance_from_str(&s), Err(FmoError::Format(_))));
    }
}
