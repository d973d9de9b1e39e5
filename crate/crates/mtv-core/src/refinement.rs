//! Base rectangles `C_α = θ[x_α]`, the Bowen refinement into cells with
//! disjoint interiors, and the Markov family with its verification.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region_algebra::{BoxUnion, ChartRectangle, Interval, RegionError, TIE};
use crate::symbolic_cover::{CoverError, SymbolTable};
use crate::torus_model::SystemSpec;
use crate::transversal::{AdaptedFamily, ChartPoint, FamilyError, LatticeMode, TransitionClass};

/// Slack for dynamic containments.
pub const DEFAULT_MARGIN: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RefineError {
    #[error("sampled θ-images leave the computed rectangle by {deviation:.3e}")]
    InsufficientSamples { deviation: f64 },
    #[error("the {factor} attractor has a gap near {at}")]
    AttractorGap { factor: &'static str, at: f64 },
    #[error("rectangles do not intersect")]
    EmptyIntersection,
    #[error("refinement cell is not a product: {0}")]
    NotARectangle(String),
    #[error("class {class} is not an allowed transition of rectangle {cell}")]
    NotAllowed { cell: usize, class: usize },
    #[error("refinement produced no rectangles")]
    Empty,
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// `C_α` for every piece with future set `futures`; all discs share it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseRectangle {
    pub pieces: Vec<usize>,
    pub futures: Vec<usize>,
    pub rect: ChartRectangle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSet {
    pub u_attractor: Interval,
    pub s_attractor: Interval,
    pub bases: Vec<BaseRectangle>,
}

/// Smallest interval invariant under the maps `x -> a x + b`, and whether
/// the images cover it.
fn attractor(maps: &[(f64, f64)], factor: &'static str) -> Result<Interval, RefineError> {
    let (a0, b0) = maps[0];
    let x0 = b0 / (1.0 - a0);
    let (mut lo, mut hi) = (x0, x0);
    for _ in 0..2000 {
        let (mut nlo, mut nhi) = (lo, hi);
        for &(a, b) in maps {
            let (p, q) = (a * lo + b, a * hi + b);
            nlo = nlo.min(p.min(q));
            nhi = nhi.max(p.max(q));
        }
        let done = (nlo - lo).abs() <= 1e-19 && (nhi - hi).abs() <= 1e-19;
        lo = nlo;
        hi = nhi;
        if done {
            break;
        }
    }
    let hull = BoxUnion::closed(lo, hi);
    let images = BoxUnion::from_intervals(maps.iter().map(|&(a, b)| closed_image(lo, hi, a, b)).collect());
    let gaps = hull.subtract(&images);
    if let Some(g) = gaps.parts().iter().find(|g| g.length() > TIE) {
        return Err(RefineError::AttractorGap { factor, at: 0.5 * (g.lo + g.hi) });
    }
    Ok(Interval::closed(lo, hi))
}

fn closed_image(lo: f64, hi: f64, a: f64, b: f64) -> Interval {
    let (p, q) = (a * lo + b, a * hi + b);
    Interval::closed(p.min(q), p.max(q))
}

/// `C_α = U(F_α) × S`: the unstable part is the union of the images of
/// the unstable attractor under the inverse chart maps of `F_α`, the
/// stable part is the stable attractor of all futures.
pub fn base_rectangles(table: &SymbolTable) -> Result<BaseSet, RefineError> {
    let all = table.all_futures();
    let (lu, ls) = (table.lambda_u, table.lambda_s);
    let umaps: Vec<(f64, f64)> = all.iter().map(|&r| (1.0 / lu, -table.classes[r].offset_u / lu)).collect();
    let smaps: Vec<(f64, f64)> = all.iter().map(|&r| (ls, table.classes[r].offset_s)).collect();
    let ua = attractor(&umaps, "unstable")?;
    let sa = attractor(&smaps, "stable")?;
    let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
    for (alpha, fut) in table.futures.iter().enumerate() {
        groups.entry(fut.clone()).or_default().push(alpha);
    }
    let s_part = BoxUnion::from_interval(sa);
    let bases = groups
        .into_iter()
        .map(|(futures, pieces)| {
            let u = BoxUnion::from_intervals(
                futures
                    .iter()
                    .map(|&r| closed_image(ua.lo, ua.hi, 1.0 / lu, -table.classes[r].offset_u / lu))
                    .collect(),
            );
            BaseRectangle { pieces, futures, rect: ChartRectangle::new(0, u, s_part.clone()) }
        })
        .collect();
    Ok(BaseSet { u_attractor: ua, s_attractor: sa, bases })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub samples: usize,
    /// Largest distance of a sampled θ value outside its rectangle.
    pub outside: f64,
    /// Hausdorff distance between sampled and computed hulls, at `samples`
    /// and at twice as many.
    pub hausdorff: f64,
    pub hausdorff_doubled: f64,
}

/// Samples `θ` on random cylinder words of each base group.
pub fn sample_bases(
    table: &SymbolTable,
    set: &BaseSet,
    constant: f64,
    samples: usize,
    rng: &mut impl Rng,
) -> Result<SampleReport, RefineError> {
    let horizon = table.horizon_for(constant, 1e-13);
    let mut outside: f64 = 0.0;
    let mut hd = [0.0f64; 2];
    for (k, n) in [samples, 2 * samples].into_iter().enumerate() {
        for base in &set.bases {
            let (mut ulo, mut uhi, mut slo, mut shi) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            let per = n.div_ceil(set.bases.len()).max(2);
            for _ in 0..per {
                let first = base.pieces[rng.gen_range(0..base.pieces.len())];
                let word = table.random_word(rng, first, horizon, horizon);
                let (u, s) = table.theta_chart(&word);
                outside = outside.max(distance_to(&base.rect.u, u)).max(distance_to(&base.rect.s, s));
                ulo = ulo.min(u);
                uhi = uhi.max(u);
                slo = slo.min(s);
                shi = shi.max(s);
            }
            let uh = base.rect.u.hull().expect("non-empty");
            let sh = base.rect.s.hull().expect("non-empty");
            let h = (ulo - uh.lo).abs().max((uhi - uh.hi).abs()).max((slo - sh.lo).abs()).max((shi - sh.hi).abs());
            hd[k] = hd[k].max(h);
        }
    }
    if outside > 1e-10 {
        return Err(RefineError::InsufficientSamples { deviation: outside });
    }
    Ok(SampleReport { samples, outside, hausdorff: hd[0], hausdorff_doubled: hd[1] })
}

fn distance_to(set: &BoxUnion, x: f64) -> f64 {
    set.parts()
        .iter()
        .map(|p| if x < p.lo { p.lo - x } else if x > p.hi { x - p.hi } else { 0.0 })
        .fold(f64::INFINITY, f64::min)
}

/// Bowen's four pieces of `C_α` relative to `C_β`, in the order
/// (both fibers meet, only the stable fiber meets, only the unstable
/// fiber meets, neither).
pub fn bowen_split(ca: &ChartRectangle, cb: &ChartRectangle) -> Result<[ChartRectangle; 4], RefineError> {
    let meet = ca.intersect(cb)?;
    if meet.is_empty() {
        return Err(RefineError::EmptyIntersection);
    }
    let (ui, ud) = (ca.u.intersect(&cb.u), ca.u.subtract(&cb.u));
    let (si, sd) = (ca.s.intersect(&cb.s), ca.s.subtract(&cb.s));
    let d = ca.disc;
    Ok([
        ChartRectangle::new(d, ui.clone(), si.clone()),
        ChartRectangle::new(d, ui, sd.clone()),
        ChartRectangle::new(d, ud.clone(), si),
        ChartRectangle::new(d, ud, sd),
    ])
}

/// A refinement cell `R = cl P(x)` and the rectangles `J(x)` containing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedCell {
    pub rect: ChartRectangle,
    pub members: Vec<usize>,
}

fn cuts(parts: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = parts.collect();
    v.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(v.len());
    for x in v {
        if out.last().is_none_or(|&y| x - y > TIE) {
            out.push(x);
        }
    }
    out
}

fn closed_union(cuts: &[f64], cells: &[usize]) -> BoxUnion {
    BoxUnion::from_intervals(cells.iter().map(|&i| Interval::closed(cuts[i], cuts[i + 1])).collect())
}

/// Common refinement of rectangles on one disc. Cells are the closures of
/// the sets `P(x)`: points with the same rectangles `J(x)` and the same
/// position relative to every rectangle meeting one of them.
pub fn refine(bases: &[ChartRectangle]) -> Result<Vec<RefinedCell>, RefineError> {
    let Some(first) = bases.first() else {
        return Ok(Vec::new());
    };
    let disc = first.disc;
    if let Some(b) = bases.iter().find(|b| b.disc != disc) {
        return Err(RegionError::DiscMismatch(disc, b.disc).into());
    }
    let n = bases.len();
    let mut overlaps = vec![Vec::new(); n];
    for a in 0..n {
        for b in 0..n {
            if !bases[a].intersect(&bases[b])?.is_empty() {
                overlaps[a].push(b);
            }
        }
    }
    let ucuts = cuts(bases.iter().flat_map(|b| b.u.parts().iter().flat_map(|p| [p.lo, p.hi])));
    let scuts = cuts(bases.iter().flat_map(|b| b.s.parts().iter().flat_map(|p| [p.lo, p.hi])));
    type Key = Vec<(usize, bool, bool)>;
    let mut groups: BTreeMap<Key, Vec<(usize, usize)>> = BTreeMap::new();
    for i in 0..ucuts.len().saturating_sub(1) {
        let mu = 0.5 * (ucuts[i] + ucuts[i + 1]);
        for j in 0..scuts.len().saturating_sub(1) {
            let ms = 0.5 * (scuts[j] + scuts[j + 1]);
            let members: Vec<usize> = (0..n).filter(|&b| bases[b].contains(mu, ms)).collect();
            if members.is_empty() {
                continue;
            }
            let mut star: Vec<usize> = members.iter().flat_map(|&a| overlaps[a].iter().copied()).collect();
            star.sort_unstable();
            star.dedup();
            let key: Key = star.iter().map(|&b| (b, bases[b].u.contains(mu), bases[b].s.contains(ms))).collect();
            groups.entry(key).or_default().push((i, j));
        }
    }
    let mut cells = Vec::with_capacity(groups.len());
    for (key, boxes) in groups {
        let mut ui: Vec<usize> = boxes.iter().map(|b| b.0).collect();
        let mut si: Vec<usize> = boxes.iter().map(|b| b.1).collect();
        ui.sort_unstable();
        ui.dedup();
        si.sort_unstable();
        si.dedup();
        if ui.len() * si.len() != boxes.len() {
            return Err(RefineError::NotARectangle(format!("{} boxes over a {}×{} grid", boxes.len(), ui.len(), si.len())));
        }
        let rect = ChartRectangle::new(disc, closed_union(&ucuts, &ui), closed_union(&scuts, &si));
        if !rect.has_interior() {
            log::warn!("dropping refinement cell without interior");
            continue;
        }
        let members = key.iter().filter(|k| k.1 && k.2).map(|k| k.0).collect();
        cells.push(RefinedCell { rect, members });
    }
    cells.sort_by(|a, b| {
        let ka = (a.rect.u.min().unwrap_or(0.0), a.rect.s.min().unwrap_or(0.0));
        let kb = (b.rect.u.min().unwrap_or(0.0), b.rect.s.min().unwrap_or(0.0));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });
    Ok(cells)
}

/// A transition between cells: the chart map
/// `(u, s) -> (λ_u u + offset_u, λ_s s + offset_s)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub offset_u: f64,
    pub offset_s: f64,
    /// Transition class, or lattice translate in the zero-center case.
    pub label: usize,
}

/// Cells with affine chart transitions: the data behind the matrix `S`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovGraph {
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub cells: Vec<ChartRectangle>,
    pub edges: Vec<Edge>,
}

/// Outcome of the Markov property checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub triples: usize,
    pub samples_per_triple: usize,
    pub margin: f64,
    /// Stable fibers map into stable fibers.
    pub stable_violations: usize,
    pub stable_worst: f64,
    /// Pullbacks of unstable fibers land in unstable fibers.
    pub unstable_violations: usize,
    pub unstable_worst: f64,
    /// Forward images of unstable fibers cover unstable fibers.
    pub forward_unstable_violations: usize,
    /// Triples failing exactly, listed by `(from, label, to)`.
    pub failing: Vec<(usize, usize, usize)>,
}

impl MarkovReport {
    pub fn passed(&self) -> bool {
        self.stable_violations == 0 && self.unstable_violations == 0
    }
}

fn interiors_meet(a: &BoxUnion, b: &BoxUnion) -> bool {
    a.interior().intersect(&b.interior()).has_interior()
}

impl MarkovGraph {
    pub fn phi(&self, e: &Edge, u: f64, s: f64) -> (f64, f64) {
        (self.lambda_u * u + e.offset_u, self.lambda_s * s + e.offset_s)
    }

    pub fn phi_inv(&self, e: &Edge, u: f64, s: f64) -> (f64, f64) {
        ((u - e.offset_u) / self.lambda_u, (s - e.offset_s) / self.lambda_s)
    }

    /// Image of cell `from` under the map of `e`.
    pub fn image(&self, e: &Edge) -> ChartRectangle {
        let c = &self.cells[e.from];
        ChartRectangle::new(
            self.cells[e.to].disc,
            c.u.affine_image(self.lambda_u, e.offset_u),
            c.s.affine_image(self.lambda_s, e.offset_s),
        )
    }

    /// Whether the image of `int R_from` meets `int R_to`.
    pub fn edge_is_live(&self, e: &Edge) -> bool {
        let img = self.image(e);
        let to = &self.cells[e.to];
        interiors_meet(&img.u, &to.u) && interiors_meet(&img.s, &to.s)
    }

    pub fn out_edges(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.cells.len()];
        for (k, e) in self.edges.iter().enumerate() {
            out[e.from].push(k);
        }
        out
    }

    pub fn in_edges(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.cells.len()];
        for (k, e) in self.edges.iter().enumerate() {
            inc[e.to].push(k);
        }
        inc
    }

    /// 0-1 matrix over cells.
    pub fn matrix(&self) -> Vec<Vec<u8>> {
        let n = self.cells.len();
        let mut m = vec![vec![0u8; n]; n];
        for e in &self.edges {
            m[e.from][e.to] = 1;
        }
        m
    }

    /// Checks the stable and unstable containments for every edge, exactly
    /// on the factor sets and on random interior samples.
    pub fn verify_markov(&self, samples: usize, margin: f64, rng: &mut impl Rng) -> MarkovReport {
        let mut rep = MarkovReport {
            triples: self.edges.len(),
            samples_per_triple: samples,
            margin,
            stable_violations: 0,
            stable_worst: 0.0,
            unstable_violations: 0,
            unstable_worst: 0.0,
            forward_unstable_violations: 0,
            failing: Vec::new(),
        };
        for e in &self.edges {
            let (rm, rn) = (&self.cells[e.from], &self.cells[e.to]);
            let s_img = rm.s.affine_image(self.lambda_s, e.offset_s);
            let u_img = rm.u.affine_image(self.lambda_u, e.offset_u);
            let u_pull = rn.u.affine_image(1.0 / self.lambda_u, -e.offset_u / self.lambda_u);
            let exact_a = s_img.is_subset_tol(&rn.s, margin);
            let exact_b = u_pull.is_subset_tol(&rm.u, margin);
            if !rn.u.is_subset_tol(&u_img, margin) {
                rep.forward_unstable_violations += 1;
            }
            // Interior points of R_from whose image lies in int R_to.
            let dom_u = rm.u.interior().intersect(&u_pull.interior());
            let dom_s = rm.s.interior().intersect(&rn.s.affine_image(1.0 / self.lambda_s, -e.offset_s / self.lambda_s).interior());
            let mut bad_a = !exact_a;
            let mut bad_b = !exact_b;
            if let (Some(du), Some(ds)) = (sample_interior(&dom_u), sample_interior(&dom_s)) {
                for _ in 0..samples {
                    let u = du(rng);
                    let s = ds(rng);
                    let (fu, fs) = self.phi(e, u, s);
                    // Stable fiber {u} × S_from, sampled with its endpoints.
                    for t in fiber_points(&rm.s, rng) {
                        let (gu, gs) = self.phi(e, u, t);
                        let miss = distance_to(&rn.s, gs).max((gu - fu).abs());
                        rep.stable_worst = rep.stable_worst.max(miss);
                        if miss > margin {
                            bad_a = true;
                        }
                    }
                    // Unstable fiber U_to × {fs} pulled back.
                    for t in fiber_points(&rn.u, rng) {
                        let (gu, gs) = self.phi_inv(e, t, fs);
                        let miss = distance_to(&rm.u, gu).max((gs - s).abs());
                        rep.unstable_worst = rep.unstable_worst.max(miss);
                        if miss > margin {
                            bad_b = true;
                        }
                    }
                }
            }
            rep.stable_violations += bad_a as usize;
            rep.unstable_violations += bad_b as usize;
            if (bad_a || bad_b) && rep.failing.len() < 32 {
                rep.failing.push((e.from, e.label, e.to));
            }
        }
        rep
    }
}

/// Uniform sampler on the interior of a box union, weighted by length.
fn sample_interior(set: &BoxUnion) -> Option<impl Fn(&mut dyn rand::RngCore) -> f64 + '_> {
    let total = set.measure();
    if total <= TIE {
        return None;
    }
    Some(move |rng: &mut dyn rand::RngCore| {
        let mut t = rng.gen_range(0.0..total);
        for p in set.parts() {
            let len = p.length();
            if t < len {
                let x = p.lo + t;
                return x.clamp(p.lo + 0.25 * len * 1e-9, p.hi - 0.25 * len * 1e-9);
            }
            t -= len;
        }
        let last = set.parts().last().expect("non-empty");
        0.5 * (last.lo + last.hi)
    })
}

fn fiber_points(set: &BoxUnion, rng: &mut impl Rng) -> Vec<f64> {
    let mut pts: Vec<f64> = set.parts().iter().flat_map(|p| [p.lo, p.hi]).collect();
    if let Some(h) = set.hull() {
        for _ in 0..2 {
            let x = rng.gen_range(h.lo..=h.hi);
            if set.contains(x) {
                pts.push(x);
            }
        }
    }
    pts
}

/// A refinement cell of the family with its transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub rect: ChartRectangle,
    /// Base groups containing the cell.
    pub members: Vec<usize>,
    /// Allowed futures, as transition classes.
    pub futures: Vec<usize>,
    /// Allowed pasts, as transition classes.
    pub pasts: Vec<usize>,
}

/// The Markov family. Every disc carries the same cells; rectangle
/// `disc * cells.len() + μ` is cell `μ` on `disc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovFamily {
    pub system: SystemSpec,
    pub epsilon: f64,
    pub delta: f64,
    pub lattice: u32,
    pub mode: LatticeMode,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub u_attractor: Interval,
    pub s_attractor: Interval,
    pub classes: Vec<TransitionClass>,
    pub bases: Vec<BaseRectangle>,
    pub cells: Vec<CellRecord>,
}

impl MarkovFamily {
    pub fn build(family: &AdaptedFamily, table: &SymbolTable) -> Result<Self, RefineError> {
        let set = base_rectangles(table)?;
        let rects: Vec<ChartRectangle> = set.bases.iter().map(|b| b.rect.clone()).collect();
        let refined = refine(&rects)?;
        if refined.is_empty() {
            return Err(RefineError::Empty);
        }
        let mut cells: Vec<CellRecord> = refined
            .into_iter()
            .map(|c| {
                let mut futures: Vec<usize> = c.members.iter().flat_map(|&g| set.bases[g].futures.iter().copied()).collect();
                futures.sort_unstable();
                futures.dedup();
                CellRecord { rect: c.rect, members: c.members, futures, pasts: Vec::new() }
            })
            .collect();
        let mut mf = Self {
            system: family.system().spec().clone(),
            epsilon: family.epsilon(),
            delta: family.delta(),
            lattice: family.lattice(),
            mode: family.mode(),
            lambda_u: table.lambda_u,
            lambda_s: table.lambda_s,
            u_attractor: set.u_attractor,
            s_attractor: set.s_attractor,
            classes: table.classes.clone(),
            bases: set.bases,
            cells: Vec::new(),
        };
        std::mem::swap(&mut mf.cells, &mut cells);
        let graph = mf.graph();
        let mut pasts = vec![Vec::new(); mf.cells.len()];
        for e in &graph.edges {
            pasts[e.to].push(e.label);
        }
        for (c, mut p) in mf.cells.iter_mut().zip(pasts) {
            p.sort_unstable();
            p.dedup();
            c.pasts = p;
        }
        Ok(mf)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Edges `(μ, r, ν)` with `r ∈ af(μ)` and `φ_r(int R_μ) ∩ int R_ν ≠ ∅`.
    pub fn graph(&self) -> MarkovGraph {
        let mut g = MarkovGraph {
            lambda_u: self.lambda_u,
            lambda_s: self.lambda_s,
            cells: self.cells.iter().map(|c| c.rect.clone()).collect(),
            edges: Vec::new(),
        };
        let mut edges = Vec::new();
        for (mu, c) in self.cells.iter().enumerate() {
            for &r in &c.futures {
                let Some(class) = self.classes.get(r) else { continue };
                for nu in 0..self.cells.len() {
                    let e = Edge { from: mu, to: nu, offset_u: class.offset_u, offset_s: class.offset_s, label: r };
                    if g.edge_is_live(&e) {
                        edges.push(e);
                    }
                }
            }
        }
        g.edges = edges;
        g
    }

    /// Cell `μ` placed on a disc.
    pub fn rectangle(&self, disc: usize, mu: usize) -> ChartRectangle {
        let mut r = self.cells[mu].rect.clone();
        r.disc = disc;
        r
    }

    /// Sup-norm-free ambient diameter bound of each cell.
    pub fn diameters(&self, family: &AdaptedFamily) -> Vec<f64> {
        let sp = family.system().splitting();
        let d = family.dim();
        let (eu, es) = (sp.basis_vector(0), sp.basis_vector(d - 1));
        self.cells
            .iter()
            .map(|c| {
                let (hu, hs) = (c.rect.u.hull().expect("cell"), c.rect.s.hull().expect("cell"));
                let (a, b) = (hu.length(), hs.length());
                (&eu * a + &es * b).norm().max((&eu * a - &es * b).norm())
            })
            .collect()
    }

    /// Number of concrete rectangles.
    pub fn num_rectangles(&self, family: &AdaptedFamily) -> usize {
        family.num_discs() * self.cells.len()
    }

    /// Disc and cell of a concrete rectangle index.
    pub fn split_index(&self, index: usize) -> (usize, usize) {
        (index / self.cells.len(), index % self.cells.len())
    }

    pub fn join_index(&self, disc: usize, mu: usize) -> usize {
        disc * self.cells.len() + mu
    }

    /// Discs that are allowed futures of `μ` on `disc`, with their class.
    pub fn allowed_futures(&self, family: &AdaptedFamily, disc: usize, mu: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &r in &self.cells[mu].futures {
            for (t, _) in family.targets(disc, &self.classes[r], family.delta()) {
                out.push((t, r));
            }
        }
        out
    }

    /// Discs that are allowed pasts of `μ` on `disc`, with their class.
    pub fn allowed_pasts(&self, family: &AdaptedFamily, disc: usize, mu: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &r in &self.cells[mu].pasts {
            for (k, _) in family.sources(disc, &self.classes[r], family.delta()) {
                out.push((k, r));
            }
        }
        out
    }

    /// `φ⁺_{μ,i'}(x) = proj_{D_i'}(f x)` on the torus.
    pub fn phi_plus(&self, family: &AdaptedFamily, mu: usize, target: usize, x: ChartPoint) -> Result<ChartPoint, RefineError> {
        if !self.allowed_futures(family, x.disc, mu).iter().any(|t| t.0 == target) {
            return Err(RefineError::NotAllowed { cell: mu, class: usize::MAX });
        }
        let sys = family.system();
        Ok(family.proj_disc(target, &sys.apply(&family.point(x)), sys.r0())?)
    }

    /// `φ⁻_{μ,k}(x) = proj_{D_k}(f⁻¹ x)` on the torus.
    pub fn phi_minus(&self, family: &AdaptedFamily, mu: usize, source: usize, x: ChartPoint) -> Result<ChartPoint, RefineError> {
        if !self.allowed_pasts(family, x.disc, mu).iter().any(|t| t.0 == source) {
            return Err(RefineError::NotAllowed { cell: mu, class: usize::MAX });
        }
        let sys = family.system();
        Ok(family.proj_disc(source, &sys.apply_inverse(&family.point(x)), sys.r0())?)
    }

    /// Whether a chart point lies in the union of the cells.
    pub fn covers(&self, u: f64, s: f64) -> bool {
        self.cells.iter().any(|c| c.rect.contains(u, s))
    }

    /// Pairs of distinct cells whose interiors meet.
    pub fn overlapping_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.cells.len() {
            for b in a + 1..self.cells.len() {
                if self.cells[a].rect.interiors_meet(&self.cells[b].rect) {
                    out.push((a, b));
                }
            }
        }
        out
    }

    /// Whether every cell equals the closure of its interior.
    pub fn regular_closed(&self) -> bool {
        self.cells.iter().all(|c| c.rect.interior().closure() == c.rect)
    }

    /// Recomputes allowed futures from the base groups.
    pub fn expected_futures(&self, mu: usize) -> Vec<usize> {
        let mut f: Vec<usize> = self.cells[mu]
            .members
            .iter()
            .filter_map(|&g| self.bases.get(g))
            .flat_map(|b| b.futures.iter().copied())
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Compares the chart form of random concrete transitions with the
    /// torus computation `proj(f x)`; returns the largest discrepancy.
    pub fn concrete_check(&self, family: &AdaptedFamily, trials: usize, rng: &mut impl Rng) -> f64 {
        let g = self.graph();
        let sys = family.system();
        let mut worst: f64 = 0.0;
        if g.edges.is_empty() {
            return worst;
        }
        for _ in 0..trials {
            let e = g.edges[rng.gen_range(0..g.edges.len())];
            let disc = rng.gen_range(0..family.num_discs());
            let class = &self.classes[e.label];
            let Some(&(target, _)) = family.targets(disc, class, family.delta()).first() else {
                worst = f64::INFINITY;
                continue;
            };
            let c = &g.cells[e.from];
            let (hu, hs) = (c.u.hull().expect("cell"), c.s.hull().expect("cell"));
            let (u, s) = (rng.gen_range(hu.lo..=hu.hi), rng.gen_range(hs.lo..=hs.hi));
            let (fu, fs) = g.phi(&e, u, s);
            match family.proj_disc(target, &sys.apply(&family.point(ChartPoint { disc, u, s })), sys.r0()) {
                Ok(p) => worst = worst.max((p.u - fu).abs().max((p.s - fs).abs())),
                Err(_) => worst = f64::INFINITY,
            }
        }
        worst
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("family serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region_algebra::union_contains;
    use crate::symbolic_cover::{subdivide, DEFAULT_MAX_DEPTH};
    use crate::torus_model::AffinePHSystem;
    use crate::transversal::FamilyParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sq(a: f64, b: f64) -> ChartRectangle {
        ChartRectangle::closed_box(0, a, b, a, b)
    }

    #[test]
    fn bowen_split_of_overlapping_squares() {
        let [c1, c2, c3, c4] = bowen_split(&sq(0.0, 2.0), &sq(1.0, 3.0)).unwrap();
        assert_eq!(c1, ChartRectangle::closed_box(0, 1.0, 2.0, 1.0, 2.0));
        assert_eq!(c2, ChartRectangle::new(0, BoxUnion::closed(1.0, 2.0), BoxUnion::half_open(0.0, 1.0)));
        assert_eq!(c3, ChartRectangle::new(0, BoxUnion::half_open(0.0, 1.0), BoxUnion::closed(1.0, 2.0)));
        assert_eq!(c4, ChartRectangle::new(0, BoxUnion::half_open(0.0, 1.0), BoxUnion::half_open(0.0, 1.0)));
        let far = ChartRectangle::closed_box(0, 5.0, 6.0, 0.0, 2.0);
        assert_eq!(bowen_split(&sq(0.0, 2.0), &far), Err(RefineError::EmptyIntersection));
    }

    #[test]
    fn split_of_contained_rectangle() {
        let [c1, c2, c3, c4] = bowen_split(&sq(1.0, 2.0), &sq(0.0, 3.0)).unwrap();
        assert_eq!(c1, sq(1.0, 2.0));
        assert!(c2.is_empty() && c3.is_empty() && c4.is_empty());
    }

    #[test]
    fn single_rectangle_refines_to_itself() {
        let cells = refine(&[sq(0.0, 1.0)]).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].rect, sq(0.0, 1.0));
    }

    #[test]
    fn overlapping_squares_refine_into_disjoint_cells() {
        let bases = [sq(0.0, 2.0), sq(1.0, 3.0)];
        let cells = refine(&bases).unwrap();
        // The intersection, two pieces of each square's remainder and the
        // two corners away from the overlap.
        assert_eq!(cells.len(), 7);
        for a in 0..cells.len() {
            for b in a + 1..cells.len() {
                assert!(!cells[a].rect.interiors_meet(&cells[b].rect));
            }
        }
        let rects: Vec<ChartRectangle> = cells.iter().map(|c| c.rect.clone()).collect();
        for i in 0..=60 {
            for j in 0..=60 {
                let (u, s) = (i as f64 * 0.05, j as f64 * 0.05);
                assert_eq!(union_contains(&rects, u, s), union_contains(&bases, u, s), "at ({u}, {s})");
            }
        }
    }

    #[test]
    fn attractor_of_contractions() {
        let iv = attractor(&[(0.5, 0.0), (0.5, 0.5)], "test").unwrap();
        assert!((iv.lo - 0.0).abs() < 1e-15 && (iv.hi - 1.0).abs() < 1e-15);
        assert!(matches!(attractor(&[(0.3, 0.0), (0.3, 0.7)], "test"), Err(RefineError::AttractorGap { .. })));
    }

    fn family(alpha: f64) -> (AdaptedFamily, SymbolTable, MarkovFamily) {
        let fam = AdaptedFamily::build(&AffinePHSystem::skew3(alpha), &FamilyParams::default()).unwrap();
        let table = subdivide(&fam, DEFAULT_MAX_DEPTH).unwrap();
        let mf = MarkovFamily::build(&fam, &table).unwrap();
        (fam, table, mf)
    }

    #[test]
    fn base_rectangles_hold_theta_samples() {
        let (fam, table, _) = family(0.41421356);
        let set = base_rectangles(&table).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rep = sample_bases(&table, &set, fam.constant(), 400, &mut rng).unwrap();
        assert!(rep.outside <= 1e-10);
        let b = BoxUnion::closed(-fam.delta(), fam.delta());
        let u_all = set.bases.iter().fold(BoxUnion::empty(), |acc, x| acc.union(&x.rect.u));
        assert!(b.is_subset(&u_all) && b.is_subset(&BoxUnion::from_interval(set.s_attractor)));
    }

    #[test]
    fn family_is_markov_and_proper() {
        let (fam, _table, mf) = family(0.0);
        assert!(mf.overlapping_pairs().is_empty());
        assert!(mf.regular_closed());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = mf.graph().verify_markov(50, DEFAULT_MARGIN, &mut rng);
        assert!(rep.passed(), "{rep:?}");
        assert!(mf.concrete_check(&fam, 50, &mut rng) < 1e-10);
    }

    #[test]
    fn json_round_trip() {
        let (_, _, mf) = family(0.0);
        let back = MarkovFamily::from_json(&mf.to_json()).unwrap();
        assert_eq!(back, mf);
    }
}
