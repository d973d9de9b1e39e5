//! The subshift `Σ_S`, the coding maps `hˢ`, `hᵘ`, `h` and the pseudo-group
//! generated by the transition maps.
//!
//! Everything here works on a [`MarkovGraph`]: cells in affine charts and
//! edges carrying the chart map of each transition.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region_algebra::{BoxUnion, ChartRectangle, TIE};
use crate::refinement::{Edge, MarkovGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CodingError {
    #[error("string not admissible at position {position}: no transition from {from} to {to}")]
    NotAdmissible { position: usize, from: usize, to: usize },
    #[error("nested domain became empty at step {step}")]
    EmptyDomain { step: usize },
    #[error("malformed string: {0}")]
    Malformed(String),
}

/// A finite window `a[l..l']` of a sequence in `Σ_S` together with the
/// edges realizing each transition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolString {
    pub cells: Vec<usize>,
    pub edges: Vec<usize>,
    /// Index of time 0.
    pub zero: usize,
}

impl SymbolString {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `σa` on the same window.
    pub fn shifted(&self) -> Self {
        Self { zero: self.zero + 1, ..self.clone() }
    }
}

/// `Wˢ(x, R_a0)` as a fiber descriptor: the cell and the unstable
/// coordinate, with the width of the nested intersection at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableFiber {
    pub cell: usize,
    pub u: f64,
    pub set: Segments,
    pub diameters: Vec<f64>,
}

/// `Wᵘ(x, R_a0)` as the cell and the stable coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnstableFiber {
    pub cell: usize,
    pub s: f64,
    pub set: Segments,
    pub diameters: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coded {
    pub cell: usize,
    pub u: f64,
    pub s: f64,
    pub stable: StableFiber,
    pub unstable: UnstableFiber,
    /// Whether both nested widths fell below the tolerance.
    pub converged: bool,
}

/// Closed segments without the snapping tolerance of [`BoxUnion`]; nested
/// coding sets get far narrower than that tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segments(pub Vec<[f64; 2]>);

impl Segments {
    pub fn closure_of(b: &BoxUnion) -> Self {
        Self(b.parts().iter().map(|p| [p.lo, p.hi]).collect())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.0.iter().any(|p| p[0] <= x && x <= p[1])
    }

    pub fn min(&self) -> Option<f64> {
        self.0.first().map(|p| p[0])
    }

    pub fn max(&self) -> Option<f64> {
        self.0.last().map(|p| p[1])
    }

    pub fn width(&self) -> f64 {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Width at the floating-point resolution of the endpoints, or of
    /// `scale` when the set sits near zero.
    pub fn resolved(&self, scale: f64) -> bool {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) => b - a <= 8.0 * f64::EPSILON * a.abs().max(b.abs()).max(scale),
            _ => false,
        }
    }

    pub fn midpoint(&self) -> f64 {
        match (self.min(), self.max()) {
            (Some(a), Some(b)) => 0.5 * (a + b),
            _ => f64::NAN,
        }
    }

    /// Image under `x -> a x + b`, `a > 0`.
    pub fn affine(&self, a: f64, b: f64) -> Self {
        Self(self.0.iter().map(|p| [a * p[0] + b, a * p[1] + b]).collect())
    }

    pub fn intersect(&self, other: &Self) -> Self {
        let mut out = Vec::new();
        for p in &self.0 {
            for q in &other.0 {
                let (lo, hi) = (p[0].max(q[0]), p[1].min(q[1]));
                if lo <= hi {
                    out.push([lo, hi]);
                }
            }
        }
        out.sort_by(|a, b| a[0].total_cmp(&b[0]));
        Self(out)
    }
}

/// Graph with adjacency lists.
#[derive(Clone, Debug)]
pub struct CodingSystem {
    pub graph: MarkovGraph,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemiconjugacyReport {
    pub equivariance_samples: usize,
    pub equivariance_max_error: f64,
    pub surjectivity_samples: usize,
    pub surjectivity_failures: usize,
    pub surjectivity_max_error: f64,
    /// Largest distance between `h` values of strings agreeing on `[-n, n]`.
    pub envelope: Vec<f64>,
    pub envelope_monotone: bool,
    pub tolerance: f64,
    pub surjectivity_tolerance: f64,
}

impl SemiconjugacyReport {
    pub fn passed(&self) -> bool {
        self.equivariance_max_error < self.tolerance
            && self.surjectivity_failures == 0
            && self.surjectivity_max_error < self.surjectivity_tolerance
            && self.envelope_monotone
    }
}

impl CodingSystem {
    pub fn new(graph: MarkovGraph) -> Self {
        let out = graph.out_edges();
        let inc = graph.in_edges();
        Self { graph, out, inc }
    }

    pub fn cells(&self) -> usize {
        self.graph.cells.len()
    }

    pub fn out_edges(&self, cell: usize) -> &[usize] {
        &self.out[cell]
    }

    pub fn in_edges(&self, cell: usize) -> &[usize] {
        &self.inc[cell]
    }

    /// 0-1 matrix `S`.
    pub fn matrix_s(&self) -> Vec<Vec<u8>> {
        self.graph.matrix()
    }

    /// Reads a string of cells, choosing for each pair the first edge.
    pub fn string_from_cells(&self, cells: &[usize], zero: usize) -> Result<SymbolString, CodingError> {
        if cells.is_empty() || zero >= cells.len() {
            return Err(CodingError::Malformed("empty string or time 0 outside".into()));
        }
        if let Some(&c) = cells.iter().find(|&&c| c >= self.cells()) {
            return Err(CodingError::Malformed(format!("unknown cell {c}")));
        }
        let mut edges = Vec::with_capacity(cells.len() - 1);
        for n in 0..cells.len() - 1 {
            let e = self.out[cells[n]]
                .iter()
                .copied()
                .find(|&e| self.graph.edges[e].to == cells[n + 1])
                .ok_or(CodingError::NotAdmissible { position: n, from: cells[n], to: cells[n + 1] })?;
            edges.push(e);
        }
        Ok(SymbolString { cells: cells.to_vec(), edges, zero })
    }

    pub fn check(&self, a: &SymbolString) -> Result<(), CodingError> {
        if a.cells.is_empty() || a.edges.len() + 1 != a.cells.len() || a.zero >= a.cells.len() {
            return Err(CodingError::Malformed("window shape".into()));
        }
        for (n, &e) in a.edges.iter().enumerate() {
            let edge = self.graph.edges.get(e).ok_or_else(|| CodingError::Malformed(format!("unknown edge {e}")))?;
            if edge.from != a.cells[n] || edge.to != a.cells[n + 1] {
                return Err(CodingError::NotAdmissible { position: n, from: a.cells[n], to: a.cells[n + 1] });
            }
        }
        Ok(())
    }

    /// `hˢ(a)`: nested intersection of the pullbacks of the future cells'
    /// unstable parts, read on `R_a0`.
    pub fn h_s(&self, a: &SymbolString) -> Result<StableFiber, CodingError> {
        self.check(a)?;
        let g = &self.graph;
        let z = a.zero;
        let mut set = Segments::closure_of(&g.cells[a.cells[z]].u);
        let mut diameters = vec![set.width()];
        // Composite u-map from time 0 to time n: u -> scale u + shift.
        let (mut scale, mut shift) = (1.0, 0.0);
        for n in z..a.edges.len() {
            if set.resolved(diameters[0]) {
                break;
            }
            let e = &g.edges[a.edges[n]];
            scale *= g.lambda_u;
            shift = g.lambda_u * shift + e.offset_u;
            let pulled = Segments::closure_of(&g.cells[a.cells[n + 1]].u).affine(1.0 / scale, -shift / scale);
            set = set.intersect(&pulled);
            if set.is_empty() {
                return Err(CodingError::EmptyDomain { step: n + 1 - z });
            }
            diameters.push(set.width());
        }
        Ok(StableFiber { cell: a.cells[z], u: set.midpoint(), set, diameters })
    }

    /// `hᵘ(a)`: nested intersection of the images of the past cells'
    /// stable parts, read on `R_a0`.
    pub fn h_u(&self, a: &SymbolString) -> Result<UnstableFiber, CodingError> {
        self.check(a)?;
        let g = &self.graph;
        let z = a.zero;
        let mut set = Segments::closure_of(&g.cells[a.cells[z]].s);
        let mut diameters = vec![set.width()];
        // Composite s-map from time -n to time 0.
        let (mut scale, mut shift) = (1.0, 0.0);
        for n in (0..z).rev() {
            if set.resolved(diameters[0]) {
                break;
            }
            let e = &g.edges[a.edges[n]];
            shift += scale * e.offset_s;
            scale *= g.lambda_s;
            let pushed = Segments::closure_of(&g.cells[a.cells[n]].s).affine(scale, shift);
            set = set.intersect(&pushed);
            if set.is_empty() {
                return Err(CodingError::EmptyDomain { step: z - n });
            }
            diameters.push(set.width());
        }
        Ok(UnstableFiber { cell: a.cells[z], s: set.midpoint(), set, diameters })
    }

    /// `h(a) = hˢ(a) ∩ hᵘ(a)`.
    pub fn h(&self, a: &SymbolString, tol: f64) -> Result<Coded, CodingError> {
        let stable = self.h_s(a)?;
        let unstable = self.h_u(a)?;
        let converged = (stable.set.width() < tol || stable.set.resolved(stable.diameters[0]))
            && (unstable.set.width() < tol || unstable.set.resolved(unstable.diameters[0]));
        if !converged {
            log::debug!("coding window too short for tolerance {tol}");
        }
        Ok(Coded { cell: a.cells[a.zero], u: stable.u, s: unstable.s, stable, unstable, converged })
    }

    /// Random admissible window `[-back, ahead]` around `first`.
    pub fn random_string(&self, rng: &mut impl Rng, first: usize, back: usize, ahead: usize) -> Option<SymbolString> {
        let mut cells = vec![first];
        let mut edges = Vec::new();
        for _ in 0..ahead {
            let out = &self.out[*cells.last()?];
            if out.is_empty() {
                return None;
            }
            let e = out[rng.gen_range(0..out.len())];
            edges.push(e);
            cells.push(self.graph.edges[e].to);
        }
        let mut pcells = Vec::new();
        let mut pedges = Vec::new();
        let mut cur = first;
        for _ in 0..back {
            let inc = &self.inc[cur];
            if inc.is_empty() {
                return None;
            }
            let e = inc[rng.gen_range(0..inc.len())];
            pedges.push(e);
            cur = self.graph.edges[e].from;
            pcells.push(cur);
        }
        pcells.reverse();
        pedges.reverse();
        pcells.extend(cells);
        pedges.extend(edges);
        Some(SymbolString { cells: pcells, edges: pedges, zero: back })
    }

    /// Coding of a chart point of cell `cell`: each step takes the edge
    /// whose image keeps the point deepest inside the next cell.
    pub fn encode(&self, cell: usize, u: f64, s: f64, horizon: usize) -> Option<SymbolString> {
        let g = &self.graph;
        let depth = |r: &ChartRectangle, u: f64, s: f64| depth_in(&r.u, u).min(depth_in(&r.s, s));
        let mut cells = vec![cell];
        let mut edges = Vec::new();
        let (mut cu, mut cs) = (u, s);
        let mut cur = cell;
        for _ in 0..horizon {
            let (best, _) = self.out[cur]
                .iter()
                .map(|&e| {
                    let (fu, fs) = g.phi(&g.edges[e], cu, cs);
                    (e, depth(&g.cells[g.edges[e].to], fu, fs))
                })
                .filter(|x| x.1 >= -1e-12)
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            (cu, cs) = g.phi(&g.edges[best], cu, cs);
            cur = g.edges[best].to;
            edges.push(best);
            cells.push(cur);
        }
        let mut pcells = Vec::new();
        let mut pedges = Vec::new();
        let (mut cu, mut cs) = (u, s);
        let mut cur = cell;
        for _ in 0..horizon {
            let (best, _) = self.inc[cur]
                .iter()
                .map(|&e| {
                    let (bu, bs) = g.phi_inv(&g.edges[e], cu, cs);
                    (e, depth(&g.cells[g.edges[e].from], bu, bs))
                })
                .filter(|x| x.1 >= -1e-12)
                .max_by(|a, b| a.1.total_cmp(&b.1))?;
            (cu, cs) = g.phi_inv(&g.edges[best], cu, cs);
            cur = g.edges[best].from;
            pedges.push(best);
            pcells.push(cur);
        }
        pcells.reverse();
        pedges.reverse();
        let zero = pcells.len();
        pcells.extend(cells);
        pedges.extend(edges);
        Some(SymbolString { cells: pcells, edges: pedges, zero })
    }

    /// Checks `h∘σ = φ∘h` with the transition maps evaluated by `generator`,
    /// surjectivity onto samples of the cells, and the continuity envelope.
    #[allow(clippy::too_many_arguments)]
    pub fn verify_semiconjugacy(
        &self,
        rng: &mut impl Rng,
        strings: usize,
        horizon: usize,
        points: usize,
        tol: f64,
        surjectivity_tol: f64,
        generator: &mut dyn FnMut(&Edge, f64, f64) -> (f64, f64),
    ) -> Result<SemiconjugacyReport, CodingError> {
        let n = self.cells();
        let mut eq_err: f64 = 0.0;
        for k in 0..strings {
            let first = k % n;
            let Some(a) = self.random_string(rng, first, horizon, horizon + 1) else {
                return Err(CodingError::Malformed(format!("cell {first} has no admissible window")));
            };
            let x = self.h(&a, tol)?;
            let y = self.h(&a.shifted(), tol)?;
            let e = &self.graph.edges[a.edges[a.zero]];
            let (gu, gs) = generator(e, x.u, x.s);
            eq_err = eq_err.max((gu - y.u).abs().max((gs - y.s).abs()));
        }
        let mut failures = 0;
        let mut sur_err: f64 = 0.0;
        for k in 0..points {
            let cell = k % n;
            let r = &self.graph.cells[cell];
            let (Some(u), Some(s)) = (sample_in(&r.u, rng), sample_in(&r.s, rng)) else {
                failures += 1;
                continue;
            };
            match self.encode(cell, u, s, horizon).map(|a| self.h(&a, tol)) {
                Some(Ok(c)) => sur_err = sur_err.max((c.u - u).abs().max((c.s - s).abs())),
                _ => failures += 1,
            }
        }
        let envelope = self.continuity_envelope(rng, horizon.min(20), 20, tol)?;
        let envelope_monotone = envelope.windows(2).all(|w| w[1] <= w[0] + 1e-15);
        Ok(SemiconjugacyReport {
            equivariance_samples: strings,
            equivariance_max_error: eq_err,
            surjectivity_samples: points,
            surjectivity_failures: failures,
            surjectivity_max_error: sur_err,
            envelope,
            envelope_monotone,
            tolerance: tol,
            surjectivity_tolerance: surjectivity_tol,
        })
    }

    /// For each `n`, the largest distance between `h(a)` and `h(b)` over
    /// random pairs agreeing on `[-n, n]`.
    pub fn continuity_envelope(&self, rng: &mut impl Rng, max_n: usize, pairs: usize, tol: f64) -> Result<Vec<f64>, CodingError> {
        let total = max_n + 30;
        let mut env = vec![0.0f64; max_n + 1];
        for k in 0..pairs {
            let first = k % self.cells();
            let Some(a) = self.random_string(rng, first, total, total) else { continue };
            let ha = self.h(&a, tol)?;
            for (m, slot) in env.iter_mut().enumerate() {
                // Keep a[-m..m], resample outside.
                let core = &a.cells[a.zero - m..=a.zero + m];
                let Some(b) = self.extend(rng, core, &a.edges[a.zero - m..a.zero + m], total - m, total - m) else {
                    continue;
                };
                let hb = self.h(&b, tol)?;
                *slot = slot.max((ha.u - hb.u).abs().max((ha.s - hb.s).abs()));
            }
        }
        // Running maximum from the right makes the envelope a bound for
        // every larger agreement window.
        for m in (0..max_n).rev() {
            env[m] = env[m].max(env[m + 1]);
        }
        Ok(env)
    }

    fn extend(&self, rng: &mut impl Rng, core: &[usize], core_edges: &[usize], back: usize, ahead: usize) -> Option<SymbolString> {
        let mut cells = core.to_vec();
        let mut edges = core_edges.to_vec();
        for _ in 0..ahead {
            let out = &self.out[*cells.last()?];
            let e = *out.get(rng.gen_range(0..out.len().max(1)))?;
            edges.push(e);
            cells.push(self.graph.edges[e].to);
        }
        let mut pc = Vec::new();
        let mut pe = Vec::new();
        let mut cur = core[0];
        for _ in 0..back {
            let inc = &self.inc[cur];
            let e = *inc.get(rng.gen_range(0..inc.len().max(1)))?;
            pe.push(e);
            cur = self.graph.edges[e].from;
            pc.push(cur);
        }
        pc.reverse();
        pe.reverse();
        let zero = pc.len() + core.len() / 2;
        pc.extend(cells);
        pe.extend(edges);
        Some(SymbolString { cells: pc, edges: pe, zero })
    }

    /// Least-squares rate of the stable nested widths, `width_n ≈ c kⁿ`,
    /// over steps `1..=max_n` of random strings.
    pub fn stable_decay_rate(&self, rng: &mut impl Rng, strings: usize, max_n: usize) -> Option<f64> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in 0..strings {
            let a = self.random_string(rng, k % self.cells(), 0, max_n)?;
            let f = self.h_s(&a).ok()?;
            for (n, &w) in f.diameters.iter().enumerate().skip(1) {
                if w > 0.0 {
                    xs.push(n as f64);
                    ys.push(w.ln());
                }
            }
        }
        let m = xs.len() as f64;
        if m < 2.0 {
            return None;
        }
        let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        Some((sxy / sxx).exp())
    }
}

fn depth_in(set: &BoxUnion, x: f64) -> f64 {
    set.parts()
        .iter()
        .map(|p| (x - p.lo).min(p.hi - x))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn sample_in(set: &BoxUnion, rng: &mut impl Rng) -> Option<f64> {
    let total = set.measure();
    if total <= TIE {
        return None;
    }
    let mut t = rng.gen_range(0.0..total);
    for p in set.parts() {
        if t < p.length() {
            return Some(p.lo + t);
        }
        t -= p.length();
    }
    set.max()
}

/// A generator of the pseudo-group: a transition map or its inverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    Plus(usize),
    Minus(usize),
}

/// A word in the generators, acting on chart points: the affine map
/// `(u, s) -> (a_u u + b_u, a_s s + b_s)` restricted to `domain`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoGroupElement {
    pub word: Vec<Generator>,
    pub source: usize,
    pub target: usize,
    pub domain: ChartRectangle,
    pub map: [f64; 4],
}

impl PseudoGroupElement {
    pub fn identity(graph: &MarkovGraph, cell: usize) -> Self {
        Self { word: Vec::new(), source: cell, target: cell, domain: graph.cells[cell].clone(), map: [1.0, 0.0, 1.0, 0.0] }
    }

    pub fn generator(graph: &MarkovGraph, g: Generator) -> Self {
        let (e, plus) = match g {
            Generator::Plus(e) => (graph.edges[e], true),
            Generator::Minus(e) => (graph.edges[e], false),
        };
        let fwd = [graph.lambda_u, e.offset_u, graph.lambda_s, e.offset_s];
        let map = if plus { fwd } else { invert(fwd) };
        let (src, dst) = if plus { (e.from, e.to) } else { (e.to, e.from) };
        let inv = invert(map);
        let pulled = image_rect(&graph.cells[dst], inv);
        let domain = graph.cells[src].intersect(&pulled).expect("same chart");
        Self { word: vec![g], source: src, target: dst, domain, map }
    }

    pub fn apply(&self, u: f64, s: f64) -> Option<(f64, f64)> {
        self.domain
            .contains(u, s)
            .then(|| (self.map[0] * u + self.map[1], self.map[2] * s + self.map[3]))
    }

    /// `self ∘ other`, defined where `other` lands in `self`'s domain.
    pub fn compose(&self, other: &Self) -> Option<Self> {
        if other.target != self.source {
            return None;
        }
        let pulled = image_rect(&self.domain, invert(other.map));
        let mut domain = other.domain.intersect(&pulled).ok()?;
        domain.disc = other.domain.disc;
        let m = [
            self.map[0] * other.map[0],
            self.map[0] * other.map[1] + self.map[1],
            self.map[2] * other.map[2],
            self.map[2] * other.map[3] + self.map[3],
        ];
        let mut word = other.word.clone();
        word.extend(self.word.iter().copied());
        Some(Self { word, source: other.source, target: self.target, domain, map: m })
    }

    pub fn inverse(&self) -> Self {
        let word = self
            .word
            .iter()
            .rev()
            .map(|g| match *g {
                Generator::Plus(e) => Generator::Minus(e),
                Generator::Minus(e) => Generator::Plus(e),
            })
            .collect();
        let mut domain = image_rect(&self.domain, self.map);
        domain.disc = self.target;
        Self { word, source: self.target, target: self.source, domain, map: invert(self.map) }
    }

    /// Restriction to a sub-rectangle of the domain.
    pub fn restrict(&self, region: &ChartRectangle) -> Option<Self> {
        let mut domain = self.domain.intersect(region).ok()?;
        domain.disc = self.domain.disc;
        Some(Self { domain, ..self.clone() })
    }
}

fn invert(m: [f64; 4]) -> [f64; 4] {
    [1.0 / m[0], -m[1] / m[0], 1.0 / m[2], -m[3] / m[2]]
}

fn image_rect(r: &ChartRectangle, m: [f64; 4]) -> ChartRectangle {
    ChartRectangle::new(r.disc, r.u.affine_image(m[0], m[1]), r.s.affine_image(m[2], m[3]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refinement::MarkovFamily;
    use crate::symbolic_cover::{subdivide, DEFAULT_MAX_DEPTH};
    use crate::torus_model::AffinePHSystem;
    use crate::transversal::{AdaptedFamily, FamilyParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn system() -> CodingSystem {
        let fam = AdaptedFamily::build(&AffinePHSystem::skew3(0.41421356), &FamilyParams::default()).unwrap();
        let table = subdivide(&fam, DEFAULT_MAX_DEPTH).unwrap();
        CodingSystem::new(MarkovFamily::build(&fam, &table).unwrap().graph())
    }

    /// Toy graph: one cell `[0,1]²` mapped onto itself by a doubling and a
    /// halving; its fixed point is the origin.
    fn toy() -> CodingSystem {
        let g = MarkovGraph {
            lambda_u: 2.0,
            lambda_s: 0.5,
            cells: vec![ChartRectangle::closed_box(0, 0.0, 1.0, 0.0, 1.0)],
            edges: vec![
                Edge { from: 0, to: 0, offset_u: 0.0, offset_s: 0.0, label: 0 },
                Edge { from: 0, to: 0, offset_u: -1.0, offset_s: 0.5, label: 1 },
            ],
        };
        CodingSystem::new(g)
    }

    #[test]
    fn fixed_point_string() {
        let cs = toy();
        let a = SymbolString { cells: vec![0; 81], edges: vec![0; 80], zero: 40 };
        let c = cs.h(&a, 1e-10).unwrap();
        assert!(c.u.abs() < 1e-10 && c.s.abs() < 1e-10 && c.converged);
        assert!(c.stable.set.contains(c.u) && c.unstable.set.contains(c.s));
    }

    #[test]
    fn periodic_point_on_a_cell_corner() {
        // 2-cycle through the origin, a corner of cell 0, and 0.3, a corner
        // of cell 1.
        let (l, o) = ((3.0 + 5f64.sqrt()) / 2.0, 0.3);
        let cs = CodingSystem::new(MarkovGraph {
            lambda_u: l,
            lambda_s: 1.0 / l,
            cells: vec![ChartRectangle::closed_box(0, -1.0, 0.0, 0.0, 1.0), ChartRectangle::closed_box(1, o, o + 1.0, 0.0, 1.0)],
            edges: vec![
                Edge { from: 0, to: 1, offset_u: o, offset_s: o, label: 0 },
                Edge { from: 1, to: 0, offset_u: -l * o, offset_s: -o / l, label: 1 },
            ],
        });
        let cells: Vec<usize> = (0..401).map(|k| k % 2).collect();
        let h = cs.h(&cs.string_from_cells(&cells, 200).unwrap(), 1e-12).unwrap();
        assert!(h.u.abs() < 1e-15 && h.s.abs() < 1e-15 && h.converged, "{h:?}");
    }

    #[test]
    fn binary_digits_are_decoded() {
        let cs = toy();
        // u = 0.101 in binary after three steps of the second, first and
        // second edges.
        let a = SymbolString { cells: vec![0; 4], edges: vec![1, 0, 1], zero: 0 };
        let f = cs.h_s(&a).unwrap();
        assert!((f.set.min().unwrap() - 0.625).abs() < 1e-15 && (f.set.max().unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(f.diameters, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn nested_widths_do_not_increase() {
        let cs = system();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for k in 0..50 {
            let a = cs.random_string(&mut rng, k % cs.cells(), 30, 30).unwrap();
            let c = cs.h(&a, 1e-8).unwrap();
            assert!(c.stable.diameters.windows(2).all(|w| w[1] <= w[0] + 1e-18));
            assert!(c.unstable.diameters.windows(2).all(|w| w[1] <= w[0] + 1e-18));
            assert!(c.converged);
        }
    }

    #[test]
    fn chart_semiconjugacy() {
        let cs = system();
        let g = cs.graph.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut gen = |e: &Edge, u: f64, s: f64| g.phi(e, u, s);
        let rep = cs.verify_semiconjugacy(&mut rng, 200, 40, 200, 1e-8, 1e-6, &mut gen).unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn inadmissible_pair_is_named() {
        let cs = system();
        let m = cs.matrix_s();
        let (a, b) = (0..cs.cells())
            .flat_map(|a| (0..cs.cells()).map(move |b| (a, b)))
            .find(|&(a, b)| m[a][b] == 0)
            .expect("S is not full");
        assert_eq!(
            cs.string_from_cells(&[a, b], 0),
            Err(CodingError::NotAdmissible { position: 0, from: a, to: b })
        );
    }

    #[test]
    fn pseudo_group_axioms() {
        let cs = system();
        let g = &cs.graph;
        let id = PseudoGroupElement::identity(g, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = cs.out_edges(0)[0];
        let p = PseudoGroupElement::generator(g, Generator::Plus(e));
        let q = p.inverse();
        for _ in 0..100 {
            let r = &p.domain;
            let (u, s) = (sample_in(&r.u, &mut rng).unwrap(), sample_in(&r.s, &mut rng).unwrap());
            assert_eq!(id.apply(u, s), Some((u, s)));
            let (fu, fs) = p.apply(u, s).unwrap();
            let (bu, bs) = q.apply(fu, fs).unwrap();
            assert!((bu - u).abs() < 1e-15 && (bs - s).abs() < 1e-15);
            let pq = q.compose(&p).unwrap();
            let (cu, cs_) = pq.apply(u, s).unwrap();
            assert!((cu - u).abs() < 1e-15 && (cs_ - s).abs() < 1e-15);
        }
        let minus = PseudoGroupElement::generator(g, Generator::Minus(e));
        assert_eq!(minus.map, q.map);
        let small = ChartRectangle::closed_box(0, -1e-4, 1e-4, -1e-4, 1e-4);
        let r = p.restrict(&small).unwrap();
        assert!(r.domain.is_subset(&p.domain));
    }
}
