//! Rectangular bilinear-quad meshes with a 2x2 Gauss rule, producing the
//! strain operators `B_il` of a plane problem (`k = 3`, `nig = 4`).
//!
//! Nodes are numbered `iy * (nx + 1) + ix`; element nodes run counterclockwise
//! from the lower-left corner. Free degrees of freedom are numbered node-major,
//! `x` before `y`, skipping the nodes of the fixed edge.

use serde::{Deserialize, Serialize};

use crate::error::{FmoError, Result};
use crate::model::{Element, LocalOperator, MaterialState, ProblemInstance};
use crate::penalty::DenseStiffness;

const GAUSS: f64 = 0.577_350_269_189_625_8;

/// Reference coordinates of the four Gauss points.
pub const GAUSS_POINTS: [[f64; 2]; 4] = [[-GAUSS, -GAUSS], [GAUSS, -GAUSS], [GAUSS, GAUSS], [-GAUSS, GAUSS]];

const CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeSelector {
    Node { ix: usize, iy: usize },
    /// Every node on an edge.
    Edge { edge: Edge },
    /// The middle node of an edge (lower of the two when the count is even).
    EdgeMidpoint { edge: Edge },
}

/// One load case: a force spread evenly over the selected nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub nodes: NodeSelector,
    pub force: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub fixed_edge: Edge,
    pub loads: Vec<LoadSpec>,
}

impl MeshSpec {
    /// Left edge clamped, unit downward force at the midpoint of the right edge.
    pub fn cantilever(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        MeshSpec {
            nx,
            ny,
            lx,
            ly,
            fixed_edge: Edge::Left,
            loads: vec![LoadSpec {
                nodes: NodeSelector::EdgeMidpoint { edge: Edge::Right },
                force: [0.0, -1.0],
            }],
        }
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn node_id(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    fn edge_nodes(&self, edge: Edge) -> Vec<usize> {
        match edge {
            Edge::Left => (0..=self.ny).map(|iy| self.node_id(0, iy)).collect(),
            Edge::Right => (0..=self.ny).map(|iy| self.node_id(self.nx, iy)).collect(),
            Edge::Bottom => (0..=self.nx).map(|ix| self.node_id(ix, 0)).collect(),
            Edge::Top => (0..=self.nx).map(|ix| self.node_id(ix, self.ny)).collect(),
        }
    }

    fn select(&self, sel: &NodeSelector) -> Result<Vec<usize>> {
        match *sel {
            NodeSelector::Node { ix, iy } => {
                if ix > self.nx || iy > self.ny {
                    return Err(FmoError::InvalidMesh(format!(
                        "load node ({ix}, {iy}) outside the {}x{} grid",
                        self.nx, self.ny
                    )));
                }
                Ok(vec![self.node_id(ix, iy)])
            }
            NodeSelector::Edge { edge } => Ok(self.edge_nodes(edge)),
            NodeSelector::EdgeMidpoint { edge } => {
                let nodes = self.edge_nodes(edge);
                Ok(vec![nodes[(nodes.len() - 1) / 2]])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(FmoError::InvalidMesh(format!(
                "need nx, ny >= 1, got {}x{}",
                self.nx, self.ny
            )));
        }
        if !(self.lx > 0.0 && self.ly > 0.0 && self.lx.is_finite() && self.ly.is_finite()) {
            return Err(FmoError::InvalidMesh(format!(
                "dimensions must be positive, got {} x {}",
                self.lx, self.ly
            )));
        }
        if self.loads.is_empty() {
            return Err(FmoError::InvalidMesh("at least one load case is required".into()));
        }
        let fixed = self.edge_nodes(self.fixed_edge);
        for (j, load) in self.loads.iter().enumerate() {
            if load.force.iter().any(|f| !f.is_finite()) {
                return Err(FmoError::InvalidMesh(format!("load {j} has a non-finite force")));
            }
            for node in self.select(&load.nodes)? {
                if fixed.contains(&node) {
                    return Err(FmoError::InvalidMesh(format!(
                        "load {j} touches node {node} on the fixed edge"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Bilinear shape-function gradients in physical coordinates at a reference point.
/// `coords` are the four element corners, counterclockwise.
pub fn shape_gradients(coords: &[[f64; 2]; 4], xi: f64, eta: f64) -> std::result::Result<[[f64; 2]; 4], f64> {
    let mut dref = [[0.0; 2]; 4];
    for (a, c) in CORNERS.iter().enumerate() {
        dref[a][0] = 0.25 * c[0] * (1.0 + eta * c[1]);
        dref[a][1] = 0.25 * c[1] * (1.0 + xi * c[0]);
    }
    // J = [[dx/dxi, dy/dxi], [dx/deta, dy/deta]]
    let mut j = [[0.0; 2]; 2];
    for a in 0..4 {
        for r in 0..2 {
            j[r][0] += dref[a][r] * coords[a][0];
            j[r][1] += dref[a][r] * coords[a][1];
        }
    }
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let scale = j.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    if !(det > 1e-14 * scale * scale) {
        return Err(det);
    }
    let inv = [[j[1][1] / det, -j[0][1] / det], [-j[1][0] / det, j[0][0] / det]];
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        g[a][0] = inv[0][0] * dref[a][0] + inv[0][1] * dref[a][1];
        g[a][1] = inv[1][0] * dref[a][0] + inv[1][1] * dref[a][1];
    }
    Ok(g)
}

/// The four strain operators of one element, with `dofs[a]` the global
/// `(x, y)` columns of corner `a` (`None` when that node is fixed).
pub fn element_operators(
    element: usize,
    coords: &[[f64; 2]; 4],
    dofs: &[Option<(usize, usize)>; 4],
) -> Result<Vec<LocalOperator>> {
    let mut ops = Vec::with_capacity(4);
    for gp in &GAUSS_POINTS {
        let g = shape_gradients(coords, gp[0], gp[1])
            .map_err(|det| FmoError::DegenerateElement { element, det })?;
        let mut cols: Vec<(usize, [f64; 3])> = Vec::with_capacity(8);
        for a in 0..4 {
            if let Some((cx, cy)) = dofs[a] {
                let [gx, gy] = g[a];
                cols.push((cx, [gx, 0.0, 0.5 * gy]));
                cols.push((cy, [0.0, gy, 0.5 * gx]));
            }
        }
        cols.sort_by_key(|c| c.0);
        let nc = cols.len();
        let mut vals = vec![0.0; 3 * nc];
        for (ci, (_, col)) in cols.iter().enumerate() {
            for r in 0..3 {
                vals[r * nc + ci] = col[r];
            }
        }
        ops.push(LocalOperator::new(3, cols.iter().map(|c| c.0).collect(), vals)?);
    }
    Ok(ops)
}

/// Free-DOF numbering of a mesh: `Some(first column)` per node.
pub fn dof_map(spec: &MeshSpec) -> Vec<Option<usize>> {
    let fixed = spec.edge_nodes(spec.fixed_edge);
    let mut next = 0;
    (0..spec.num_nodes())
        .map(|node| {
            if fixed.contains(&node) {
                None
            } else {
                next += 2;
                Some(next - 2)
            }
        })
        .collect()
}

/// Builds the instance for a mesh with uniform bounds.
#[allow(clippy::too_many_arguments)]
pub fn build_instance(
    spec: &MeshSpec,
    rho_l: f64,
    rho_u: f64,
    r: f64,
    gamma: f64,
    eta: f64,
    nu: f64,
) -> Result<ProblemInstance> {
    spec.validate()?;
    let map = dof_map(spec);
    let n = map.iter().flatten().count() * 2;
    let hx = spec.lx / spec.nx as f64;
    let hy = spec.ly / spec.ny as f64;
    let mut elements = Vec::with_capacity(spec.nx * spec.ny);
    for ey in 0..spec.ny {
        for ex in 0..spec.nx {
            let corners = [(ex, ey), (ex + 1, ey), (ex + 1, ey + 1), (ex, ey + 1)];
            let coords = corners.map(|(ix, iy)| [ix as f64 * hx, iy as f64 * hy]);
            let dofs = corners.map(|(ix, iy)| map[spec.node_id(ix, iy)].map(|c| (c, c + 1)));
            let id = ey * spec.nx + ex;
            elements.push(Element {
                operators: element_operators(id, &coords, &dofs)?,
            });
        }
    }
    let mut loads = Vec::with_capacity(spec.loads.len());
    for load in &spec.loads {
        let nodes = spec.select(&load.nodes)?;
        let share = 1.0 / nodes.len() as f64;
        let mut f = vec![0.0; n];
        for node in nodes {
            let c = map[node].expect("validated: loads avoid fixed nodes");
            f[c] += load.force[0] * share;
            f[c + 1] += load.force[1] * share;
        }
        loads.push(f);
    }
    let m = elements.len();
    let inst = ProblemInstance {
        k: 3,
        n,
        elements,
        loads,
        rho_l: vec![rho_l; m],
        rho_u: vec![rho_u; m],
        r,
        gamma,
        eta,
        nu,
    };
    inst.validate()?;
    Ok(inst)
}

/// Exact compliances `<A(E)^{-1} f_j, f_j>` by dense factorization.
pub fn reference_compliance(
    instance: &ProblemInstance,
    e: &MaterialState,
    dense_threshold: usize,
) -> Result<Vec<f64>> {
    let dense = DenseStiffness::factor(instance, e, dense_threshold, None)?;
    Ok(dense.compliances(instance))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_gradients() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let g = shape_gradients(&coords, -GAUSS, -GAUSS).unwrap();
        let p = 0.5 * (1.0 + GAUSS);
        let q = 0.5 * (1.0 - GAUSS);
        // physical point (q, q); N_a = products of 1-x or x and 1-y or y
        let expect = [[-p, -p], [p, -q], [q, q], [-q, p]];
        for a in 0..4 {
            for d in 0..2 {
                assert!((g[a][d] - expect[a][d]).abs() < 1e-15, "a = {a}");
            }
        }
    }

    #[test]
    fn single_element_dimensions() {
        let inst = build_instance(&MeshSpec::cantilever(1, 1, 1.0, 1.0), 1.0, 2.0, 0.1, 1.0, 1.0, 0.0).unwrap();
        assert_eq!((inst.n, inst.m(), inst.nig()), (4, 1, 4));
        for op in &inst.elements[0].operators {
            assert_eq!(op.cols, vec![0, 1, 2, 3]);
            assert_eq!(op.rows(), 3);
        }
    }

    #[test]
    fn collapsed_element_is_rejected() {
        let coords = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        let dofs = [Some((0, 1)), Some((2, 3)), Some((4, 5)), Some((6, 7))];
        assert!(matches!(
            element_operators(7, &coords, &dofs),
            Err(FmoError::DegenerateElement { element: 7, .. })
        ));
    }

    #[test]
    fn load_on_fixed_edge_is_rejected() {
        let mut spec = MeshSpec::cantilever(2, 2, 1.0, 1.0);
        spec.loads[0].nodes = NodeSelector::Node { ix: 0, iy: 1 };
        assert!(matches!(spec.validate(), Err(FmoError::InvalidMesh(_))));
    }

    #[test]
    fn edge_load_is_spread() {
        let mut spec = MeshSpec::cantilever(2, 2, 2.0, 1.0);
        spec.loads[0].nodes = NodeSelector::Edge { edge: Edge::Right };
        let inst = build_instance(&spec, 1.0, 2.0, 0.1, 1.0, 1.0, 0.0).unwrap();
        let f = &inst.loads[0];
        let total: f64 = f.iter().skip(1).step_by(2).sum();
        assert!((total + 1.0).abs() < 1e-15);
        assert_eq!(f.iter().filter(|v| **v != 0.0).count(), 3);
    }
}
