//! Degenerate mode without a center: the classical two-square Markov
//! partition of a symmetric hyperbolic automorphism of `T²`, refined to
//! one-step cylinders so that every transition is a single edge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region_algebra::{BoxUnion, ChartRectangle};
use crate::refinement::{Edge, MarkovGraph};
use crate::torus_model::{AffinePHSystem, SystemSpec, TorusPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZeroCenterError {
    #[error("zero-center mode needs a 2-torus automorphism with u = s = 1, c = 0: {0}")]
    Unsupported(String),
    #[error("squares do not fill a fundamental domain (area {0})")]
    NotTiling(f64),
    #[error("square {0} has no outgoing transition")]
    Dead(usize),
}

/// One-step cylinder `R_μ ∩ φ_e⁻¹(R_ν)` of the square graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cylinder {
    pub square: usize,
    pub next: usize,
    /// Lattice vector subtracted after applying the map, in integer coordinates.
    pub lattice: [i64; 2],
    pub rect: ChartRectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassicalPartition {
    pub system: SystemSpec,
    pub lambda_u: f64,
    pub lambda_s: f64,
    /// Adapted coordinates of the standard basis vectors.
    pub lattice: [[f64; 2]; 2],
    pub squares: Vec<ChartRectangle>,
    pub cylinders: Vec<Cylinder>,
}

const SEARCH: i64 = 6;

impl ClassicalPartition {
    pub fn build(system: &AffinePHSystem) -> Result<Self, ZeroCenterError> {
        let d = system.dims();
        if d.u != 1 || d.c != 0 || d.s != 1 {
            return Err(ZeroCenterError::Unsupported(format!("dims ({}, {}, {})", d.u, d.c, d.s)));
        }
        if system.translation().iter().any(|t| t.abs() > 0.0) {
            return Err(ZeroCenterError::Unsupported("nonzero translation".into()));
        }
        let sp = system.splitting();
        let w: Vec<[f64; 2]> = (0..2)
            .map(|k| {
                let c = sp.inverse().column(k);
                [c[0], c[1]]
            })
            .collect();
        let dot = w[0][0] * w[1][0] + w[0][1] * w[1][1];
        let n0 = w[0][0].hypot(w[0][1]);
        let n1 = w[1][0].hypot(w[1][1]);
        if dot.abs() > 1e-9 || (n0 - 1.0).abs() > 1e-9 || (n1 - 1.0).abs() > 1e-9 {
            return Err(ZeroCenterError::Unsupported("lattice is not square in the eigenbasis".into()));
        }
        let lambda_u = system.unstable_multiplier().ok_or_else(|| ZeroCenterError::Unsupported("no unstable multiplier".into()))?;
        let lambda_s = system.stable_multiplier().ok_or_else(|| ZeroCenterError::Unsupported("no stable multiplier".into()))?;
        if lambda_u <= 0.0 || lambda_s <= 0.0 {
            return Err(ZeroCenterError::Unsupported("orientation-reversing eigenvalues".into()));
        }
        // Lattice vector (p, ±q) with p >= q >= 0.
        let v = [w[0], w[1], [-w[0][0], -w[0][1]], [-w[1][0], -w[1][1]]]
            .into_iter()
            .filter(|v| v[0] >= v[1].abs())
            .max_by(|a, b| a[0].total_cmp(&b[0]))
            .expect("some rotation of a unit vector lies in the cone");
        let (p, q, sign) = (v[0], v[1].abs(), if v[1] >= 0.0 { 1.0 } else { -1.0 });
        let span = |lo: f64, hi: f64| {
            let (a, b) = (sign * lo, sign * hi);
            BoxUnion::closed(a.min(b), a.max(b))
        };
        let squares = vec![
            ChartRectangle::new(0, BoxUnion::closed(0.0, p), span(0.0, p)),
            ChartRectangle::new(0, BoxUnion::closed(p, p + q), span(0.0, q)),
        ];
        let area: f64 = squares.iter().map(|r| r.area()).sum();
        if (area - 1.0).abs() > 1e-9 {
            return Err(ZeroCenterError::NotTiling(area));
        }
        let mut part = Self {
            system: system.spec().clone(),
            lambda_u,
            lambda_s,
            lattice: [w[0], w[1]],
            squares,
            cylinders: Vec::new(),
        };
        let g = part.square_graph();
        for k in 0..part.squares.len() {
            if !g.edges.iter().any(|e| e.from == k) {
                return Err(ZeroCenterError::Dead(k));
            }
        }
        let labels = part.square_labels();
        part.cylinders = g
            .edges
            .iter()
            .zip(labels)
            .map(|(e, lattice)| {
                let to = &part.squares[e.to];
                let pulled = ChartRectangle::new(
                    0,
                    to.u.affine_image(1.0 / lambda_u, -e.offset_u / lambda_u),
                    to.s.affine_image(1.0 / lambda_s, -e.offset_s / lambda_s),
                );
                let rect = part.squares[e.from].intersect(&pulled).expect("one chart");
                Cylinder { square: e.from, next: e.to, lattice, rect }
            })
            .collect();
        Ok(part)
    }

    fn lattice_point(&self, m: [i64; 2]) -> [f64; 2] {
        let [w0, w1] = self.lattice;
        [m[0] as f64 * w0[0] + m[1] as f64 * w1[0], m[0] as f64 * w0[1] + m[1] as f64 * w1[1]]
    }

    fn square_edges(&self) -> Vec<(Edge, [i64; 2])> {
        let mut g = MarkovGraph { lambda_u: self.lambda_u, lambda_s: self.lambda_s, cells: self.squares.clone(), edges: Vec::new() };
        let mut out = Vec::new();
        for from in 0..self.squares.len() {
            for to in 0..self.squares.len() {
                for m0 in -SEARCH..=SEARCH {
                    for m1 in -SEARCH..=SEARCH {
                        let l = self.lattice_point([m0, m1]);
                        let e = Edge { from, to, offset_u: -l[0], offset_s: -l[1], label: out.len() };
                        if g.edge_is_live(&e) {
                            out.push((e, [m0, m1]));
                        }
                    }
                }
            }
        }
        g.edges = out.iter().map(|x| x.0).collect();
        out
    }

    /// Transitions between the two squares; several edges may join a pair.
    pub fn square_graph(&self) -> MarkovGraph {
        MarkovGraph {
            lambda_u: self.lambda_u,
            lambda_s: self.lambda_s,
            cells: self.squares.clone(),
            edges: self.square_edges().into_iter().map(|x| x.0).collect(),
        }
    }

    fn square_labels(&self) -> Vec<[i64; 2]> {
        self.square_edges().into_iter().map(|x| x.1).collect()
    }

    pub fn len(&self) -> usize {
        self.cylinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cylinders.is_empty()
    }

    /// Graph on cylinders; each ordered pair has at most one edge.
    pub fn graph(&self) -> MarkovGraph {
        let mut g = MarkovGraph {
            lambda_u: self.lambda_u,
            lambda_s: self.lambda_s,
            cells: self.cylinders.iter().map(|c| c.rect.clone()).collect(),
            edges: Vec::new(),
        };
        for (a, ca) in self.cylinders.iter().enumerate() {
            let l = self.lattice_point(ca.lattice);
            for (b, cb) in self.cylinders.iter().enumerate() {
                if cb.square != ca.next {
                    continue;
                }
                let e = Edge { from: a, to: b, offset_u: -l[0], offset_s: -l[1], label: a };
                if g.edge_is_live(&e) {
                    g.edges.push(e);
                }
            }
        }
        g
    }

    /// Torus point of chart coordinates `(u, s)`.
    pub fn torus_point(&self, system: &AffinePHSystem, u: f64, s: f64) -> TorusPoint {
        let v = system.splitting().vector(&nalgebra::DVector::from_vec(vec![u, s]));
        TorusPoint::from_vector(&v)
    }

    /// Cylinder containing the torus point, with its chart coordinates.
    pub fn locate(&self, system: &AffinePHSystem, x: &TorusPoint) -> Option<(usize, f64, f64)> {
        let y = system.splitting().coordinates(&x.to_vector());
        for m0 in -2..=2 {
            for m1 in -2..=2 {
                let l = self.lattice_point([m0, m1]);
                let (u, s) = (y[0] + l[0], y[1] + l[1]);
                if let Some(k) = self.cylinders.iter().position(|c| c.rect.contains(u, s)) {
                    return Some((k, u, s));
                }
            }
        }
        None
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
