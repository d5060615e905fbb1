//! Interface-aligned structured meshes of the unit interval and unit square.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Region {
    Damped,
    Elastic,
}

/// Shape of the damped region ω.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum OmegaDescriptor {
    Interval {
        a: f64,
        b: f64,
    },
    Rectangle {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    /// ω = Ω. Violates interiority; only for analytic test configurations.
    Whole,
}

impl OmegaDescriptor {
    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::Interval { .. } => Some(1),
            Self::Rectangle { .. } => Some(2),
            Self::Whole => None,
        }
    }

    /// Strict containment test on the first `dim` coordinates.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Self::Interval { a, b } => a < p[0] && p[0] < b,
            Self::Rectangle { x0, x1, y0, y1 } => x0 < p[0] && p[0] < x1 && y0 < p[1] && p[1] < y1,
            Self::Whole => true,
        }
    }

    /// Axis-aligned bounding box `[lo, hi]` (unit square/interval for `Whole`).
    pub fn bounding_box(&self) -> ([f64; 2], [f64; 2]) {
        match *self {
            Self::Interval { a, b } => ([a, 0.0], [b, 0.0]),
            Self::Rectangle { x0, x1, y0, y1 } => ([x0, y0], [x1, y1]),
            Self::Whole => ([0.0, 0.0], [1.0, 1.0]),
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            Self::Interval { a, b } => b - a,
            Self::Rectangle { x0, x1, y0, y1 } => (x1 - x0) * (y1 - y0),
            Self::Whole => 1.0,
        }
    }
}

/// a(x) = d·1_ω(x).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DampingField {
    pub d: f64,
    pub omega: OmegaDescriptor,
}

impl DampingField {
    pub fn new(d: f64, omega: OmegaDescriptor) -> Result<Self> {
        if !d.is_finite() || d < 0.0 {
            return Err(Error::Damping(format!(
                "d must be finite and nonnegative, got {d}"
            )));
        }
        Ok(Self { d, omega })
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    /// Cells per axis.
    pub n_cells: usize,
    /// Node coordinates; the second entry is 0 in 1D.
    pub nodes: Vec<[f64; 2]>,
    /// Node indices, 2 per element in 1D and 3 (counter-clockwise) in 2D.
    pub elements: Vec<Vec<usize>>,
    pub element_region: Vec<Region>,
    pub boundary_nodes: Vec<usize>,
    /// Facets on I = ∂ω: single nodes in 1D, node pairs in 2D.
    pub interface_facets: Vec<Vec<usize>>,
    pub h: f64,
    pub omega: OmegaDescriptor,
    dof_of_node: Vec<Option<usize>>,
    node_of_dof: Vec<usize>,
}

fn snap(x: f64, n: usize) -> usize {
    (x * n as f64).round() as usize
}

fn check_interval(a: f64, b: f64, n: usize, what: &str) -> Result<(usize, usize)> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::Geometry(format!("{what} bounds must be finite")));
    }
    if a >= b {
        return Err(Error::Geometry(format!(
            "{what}: lower bound {a} is not below upper bound {b}"
        )));
    }
    if a <= 0.0 || b >= 1.0 {
        return Err(Error::Geometry(format!(
            "{what} ({a}, {b}) touches the outer boundary"
        )));
    }
    let (ia, ib) = (snap(a, n), snap(b, n));
    if ia == 0 || ib >= n || ia >= ib {
        return Err(Error::Geometry(format!(
            "{n} cells are too few to place ({a}, {b}) on distinct interior nodes"
        )));
    }
    Ok((ia, ib))
}

/// Uniform mesh of (0,1); ω = (a,b) is snapped to the nearest nodes.
pub fn build_interval_mesh(n_cells: usize, a: f64, b: f64) -> Result<Mesh> {
    if n_cells < 4 {
        return Err(Error::Geometry(format!(
            "need at least 4 cells, got {n_cells}"
        )));
    }
    let (ia, ib) = check_interval(a, b, n_cells, "omega")?;
    let n = n_cells as f64;
    let omega = OmegaDescriptor::Interval {
        a: ia as f64 / n,
        b: ib as f64 / n,
    };
    Ok(interval_mesh(n_cells, omega))
}

/// Fully damped interval (ω = Ω). Bypasses the interiority requirement.
pub fn build_fully_damped_interval(n_cells: usize) -> Result<Mesh> {
    if n_cells < 4 {
        return Err(Error::Geometry(format!(
            "need at least 4 cells, got {n_cells}"
        )));
    }
    Ok(interval_mesh(n_cells, OmegaDescriptor::Whole))
}

fn interval_mesh(n_cells: usize, omega: OmegaDescriptor) -> Mesh {
    let n = n_cells as f64;
    let nodes: Vec<[f64; 2]> = (0..=n_cells).map(|i| [i as f64 / n, 0.0]).collect();
    let elements: Vec<Vec<usize>> = (0..n_cells).map(|e| vec![e, e + 1]).collect();
    let element_region = elements
        .iter()
        .map(|el| {
            let mid = 0.5 * (nodes[el[0]][0] + nodes[el[1]][0]);
            if omega.contains([mid, 0.0]) {
                Region::Damped
            } else {
                Region::Elastic
            }
        })
        .collect();
    finish(
        1,
        n_cells,
        nodes,
        elements,
        element_region,
        vec![0, n_cells],
        1.0 / n,
        omega,
    )
}

/// Structured triangulation of the unit square with `n` cells per axis.
pub fn build_square_mesh(n: usize, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Mesh> {
    if n < 8 {
        return Err(Error::Geometry(format!(
            "need at least 8 cells per axis, got {n}"
        )));
    }
    let (ix0, ix1) = check_interval(x0, x1, n, "omega x-range")?;
    let (iy0, iy1) = check_interval(y0, y1, n, "omega y-range")?;
    let nf = n as f64;
    let omega = OmegaDescriptor::Rectangle {
        x0: ix0 as f64 / nf,
        x1: ix1 as f64 / nf,
        y0: iy0 as f64 / nf,
        y1: iy1 as f64 / nf,
    };
    Ok(square_mesh(n, omega))
}

fn square_mesh(n: usize, omega: OmegaDescriptor) -> Mesh {
    let nf = n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let mut elements = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            elements.push(vec![n00, n10, n11]);
            elements.push(vec![n00, n11, n01]);
        }
    }
    let element_region = elements
        .iter()
        .map(|el| {
            let c = centroid(&nodes, el);
            if omega.contains(c) {
                Region::Damped
            } else {
                Region::Elastic
            }
        })
        .collect();
    let boundary: Vec<usize> = (0..nodes.len())
        .filter(|&k| {
            let (i, j) = (k % (n + 1), k / (n + 1));
            i == 0 || j == 0 || i == n || j == n
        })
        .collect();
    finish(
        2,
        n,
        nodes,
        elements,
        element_region,
        boundary,
        2f64.sqrt() / nf,
        omega,
    )
}

fn centroid(nodes: &[[f64; 2]], el: &[usize]) -> [f64; 2] {
    let k = el.len() as f64;
    let sx: f64 = el.iter().map(|&v| nodes[v][0]).sum();
    let sy: f64 = el.iter().map(|&v| nodes[v][1]).sum();
    [sx / k, sy / k]
}

#[allow(clippy::too_many_arguments)]
fn finish(
    dim: usize,
    n_cells: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Vec<usize>>,
    element_region: Vec<Region>,
    boundary_nodes: Vec<usize>,
    h: f64,
    omega: OmegaDescriptor,
) -> Mesh {
    // A facet lies on I when its two neighbouring elements carry different tags.
    let mut facets: BTreeMap<Vec<usize>, Vec<Region>> = BTreeMap::new();
    for (el, &r) in elements.iter().zip(&element_region) {
        let m = el.len();
        for skip in 0..m {
            let mut f: Vec<usize> = (0..m).filter(|&q| q != skip).map(|q| el[q]).collect();
            f.sort_unstable();
            facets.entry(f).or_default().push(r);
        }
    }
    let interface_facets = facets
        .into_iter()
        .filter(|(_, rs)| rs.len() == 2 && rs[0] != rs[1])
        .map(|(f, _)| f)
        .collect();

    let mut on_boundary = vec![false; nodes.len()];
    for &b in &boundary_nodes {
        on_boundary[b] = true;
    }
    let mut dof_of_node = vec![None; nodes.len()];
    let mut node_of_dof = Vec::new();
    for (k, &b) in on_boundary.iter().enumerate() {
        if !b {
            dof_of_node[k] = Some(node_of_dof.len());
            node_of_dof.push(k);
        }
    }
    Mesh {
        dim,
        n_cells,
        nodes,
        elements,
        element_region,
        boundary_nodes,
        interface_facets,
        h,
        omega,
        dof_of_node,
        node_of_dof,
    }
}

impl Mesh {
    /// Number of interior (free) nodes.
    pub fn n_dof(&self) -> usize {
        self.node_of_dof.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn node_of_dof(&self, dof: usize) -> usize {
        self.node_of_dof[dof]
    }

    pub fn is_fully_damped(&self) -> bool {
        self.omega == OmegaDescriptor::Whole
    }

    pub fn element_measure(&self, e: usize) -> f64 {
        let el = &self.elements[e];
        let p = |k: usize| self.nodes[el[k]];
        match self.dim {
            1 => (p(1)[0] - p(0)[0]).abs(),
            _ => {
                let (a, b, c) = (p(0), p(1), p(2));
                0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs()
            }
        }
    }

    pub fn element_centroid(&self, e: usize) -> [f64; 2] {
        centroid(&self.nodes, &self.elements[e])
    }

    pub fn count_region(&self, r: Region) -> usize {
        self.element_region.iter().filter(|&&t| t == r).count()
    }

    pub fn region_measure(&self, r: Region) -> f64 {
        (0..self.elements.len())
            .filter(|&e| self.element_region[e] == r)
            .map(|e| self.element_measure(e))
            .sum()
    }

    /// Nodes touched by at least one element of region `r`.
    pub fn region_nodes(&self, r: Region) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for (el, &t) in self.elements.iter().zip(&self.element_region) {
            if t == r {
                for &v in el {
                    mark[v] = true;
                }
            }
        }
        mark
    }

    /// Nodes on I (shared by a DAMPED and an ELASTIC element).
    pub fn interface_nodes(&self) -> Vec<usize> {
        let d = self.region_nodes(Region::Damped);
        let e = self.region_nodes(Region::Elastic);
        (0..self.nodes.len()).filter(|&k| d[k] && e[k]).collect()
    }

    /// Element containing `p` (closed cells, ties broken toward lower index).
    pub fn locate(&self, p: [f64; 2]) -> Option<usize> {
        let n = self.n_cells;
        let cell = |x: f64| -> Option<usize> {
            if !(0.0..=1.0).contains(&x) {
                return None;
            }
            Some(((x * n as f64).floor() as usize).min(n - 1))
        };
        let i = cell(p[0])?;
        if self.dim == 1 {
            return Some(i);
        }
        let j = cell(p[1])?;
        let (lx, ly) = (p[0] * n as f64 - i as f64, p[1] * n as f64 - j as f64);
        // Lower triangle lies below the diagonal n00 -> n11.
        let lower = ly <= lx;
        Some(2 * (j * n + i) + usize::from(!lower))
    }

    /// Checks the structural invariants; returns a description of the first violation.
    pub fn validate(&self) -> Result<()> {
        let total: f64 = (0..self.elements.len())
            .map(|e| self.element_measure(e))
            .sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Geometry(format!(
                "elements cover measure {total}, expected 1"
            )));
        }
        let damped = self.region_measure(Region::Damped);
        if (damped - self.omega.measure()).abs() > 1e-12 {
            return Err(Error::Geometry(format!(
                "damped measure {damped} differs from |omega| = {}",
                self.omega.measure()
            )));
        }
        if !self.is_fully_damped() {
            let dn = self.region_nodes(Region::Damped);
            if let Some(&b) = self.boundary_nodes.iter().find(|&&b| dn[b]) {
                return Err(Error::Geometry(format!(
                    "damped element touches boundary node {b}"
                )));
            }
        }
        Ok(())
    }

    /// Plain-text listing: `node k x y` and `elem e v0 v1 [v2] REGION` records.
    pub fn write_dump<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# dim={} n_cells={} h={}",
            self.dim, self.n_cells, self.h
        )?;
        for (k, p) in self.nodes.iter().enumerate() {
            writeln!(w, "node {k} {} {}", p[0], p[1])?;
        }
        for (e, (el, r)) in self.elements.iter().zip(&self.element_region).enumerate() {
            let vs: Vec<String> = el.iter().map(|v| v.to_string()).collect();
            writeln!(w, "elem {e} {} {r:?}", vs.join(" "))?;
        }
        for b in &self.boundary_nodes {
            writeln!(w, "boundary {b}")?;
        }
        for f in &self.interface_facets {
            let vs: Vec<String> = f.iter().map(|v| v.to_string()).collect();
            writeln!(w, "interface {}", vs.join(" "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_tags_by_midpoint() {
        let m = build_interval_mesh(10, 0.3, 0.7).unwrap();
        assert_eq!(m.elements.len(), 10);
        let damped: Vec<usize> = (0..10)
            .filter(|&e| m.element_region[e] == Region::Damped)
            .collect();
        assert_eq!(damped, vec![3, 4, 5, 6]);
        assert_eq!(m.interface_facets, vec![vec![3], vec![7]]);
        assert_eq!(m.boundary_nodes, vec![0, 10]);
        assert_eq!(m.n_dof(), 9);
        m.validate().unwrap();
    }

    #[test]
    fn interval_exact_alignment() {
        let m = build_interval_mesh(4, 0.25, 0.75).unwrap();
        assert_eq!(
            m.element_region,
            vec![
                Region::Elastic,
                Region::Damped,
                Region::Damped,
                Region::Elastic
            ]
        );
        assert_eq!(m.boundary_nodes, vec![0, 4]);
    }

    #[test]
    fn interval_rejections() {
        assert!(build_interval_mesh(10, 0.0, 0.5).is_err());
        assert!(build_interval_mesh(10, 0.5, 1.0).is_err());
        assert!(build_interval_mesh(10, 0.6, 0.4).is_err());
        assert!(build_interval_mesh(3, 0.3, 0.7).is_err());
        // both ends snap to the same node
        assert!(build_interval_mesh(4, 0.3, 0.35).is_err());
        // snaps onto the boundary
        assert!(build_interval_mesh(4, 0.05, 0.5).is_err());
    }

    #[test]
    fn square_counts() {
        let m = build_square_mesh(16, 0.25, 0.75, 0.25, 0.75).unwrap();
        assert_eq!(m.elements.len(), 512);
        assert_eq!(m.count_region(Region::Damped), 128);
        assert_eq!(m.count_region(Region::Elastic), 384);
        m.validate().unwrap();
    }

    #[test]
    fn square_interface_edges_by_enumeration() {
        let n = 16;
        let m = build_square_mesh(n, 0.25, 0.75, 0.25, 0.75).unwrap();
        // grid edges lying on the boundary of [4,12]^2 in index space
        let mut count = 0;
        for j in 0..=n {
            for i in 0..=n {
                let on = |a: usize, b: usize| (4..=12).contains(&a) && (b == 4 || b == 12);
                if i < n && on(i, j) && on(i + 1, j) {
                    count += 1;
                }
                if j < n && on(j, i) && on(j + 1, i) {
                    count += 1;
                }
            }
        }
        assert_eq!(count, 32);
        assert_eq!(m.interface_facets.len(), count);
        assert_eq!(m.interface_nodes().len(), 32);
    }

    #[test]
    fn square_rejections() {
        assert!(build_square_mesh(16, 0.0, 0.5, 0.0, 0.5).is_err());
        assert!(build_square_mesh(7, 0.25, 0.75, 0.25, 0.75).is_err());
    }

    #[test]
    fn damped_nodes_avoid_boundary() {
        let m = build_square_mesh(8, 0.125, 0.875, 0.125, 0.5).unwrap();
        let dn = m.region_nodes(Region::Damped);
        assert!(m.boundary_nodes.iter().all(|&b| !dn[b]));
    }

    #[test]
    fn refinement_preserves_tags() {
        let coarse = build_square_mesh(8, 0.25, 0.625, 0.375, 0.75).unwrap();
        let fine = build_square_mesh(16, 0.25, 0.625, 0.375, 0.75).unwrap();
        for e in 0..fine.elements.len() {
            let c = fine.element_centroid(e);
            let parent = coarse.locate(c).unwrap();
            assert_eq!(fine.element_region[e], coarse.element_region[parent]);
        }
        let c1 = build_interval_mesh(10, 0.3, 0.7).unwrap();
        let f1 = build_interval_mesh(20, 0.3, 0.7).unwrap();
        for e in 0..f1.elements.len() {
            let parent = c1.locate(f1.element_centroid(e)).unwrap();
            assert_eq!(f1.element_region[e], c1.element_region[parent]);
        }
    }

    #[test]
    fn locate_finds_containing_triangle() {
        let m = build_square_mesh(8, 0.25, 0.75, 0.25, 0.75).unwrap();
        for e in 0..m.elements.len() {
            assert_eq!(m.locate(m.element_centroid(e)), Some(e));
        }
        assert_eq!(m.locate([1.5, 0.5]), None);
    }

    #[test]
    fn fully_damped_bypass() {
        let m = build_fully_damped_interval(8).unwrap();
        assert_eq!(m.count_region(Region::Damped), 8);
        assert!(m.interface_facets.is_empty());
        m.validate().unwrap();
    }

    #[test]
    fn dump_has_one_record_per_line() {
        let m = build_interval_mesh(4, 0.25, 0.75).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().filter(|l| l.starts_with("node")).count(), 5);
        assert_eq!(s.lines().filter(|l| l.starts_with("elem")).count(), 4);
        assert!(s.contains("elem 1 1 2 Damped"));
    }

    #[test]
    fn damping_field_rejects_negative() {
        assert!(DampingField::new(-1.0, OmegaDescriptor::Whole).is_err());
        assert!(DampingField::new(f64::NAN, OmegaDescriptor::Whole).is_err());
    }
}
