//! Subdivision of the `B` boxes, the transition matrix `A` and the coding
//! map `θ`.
//!
//! All discs of an [`AdaptedFamily`] share one chart geometry, so pieces,
//! future sets and forward/backward choices are computed once and indexed
//! by [`TransitionClass`]. A symbol of `Σ_A` is a pair (disc, piece); a row
//! of `A` is constant on all pieces of a target disc, so it is stored as
//! the set of classes `fut(α)` leading to the target discs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::region_algebra::ChartRectangle;
use crate::shadowing::{shadow, OrbitKind, PseudoOrbit, ShadowError};
use crate::torus_model::TorusPoint;
use crate::transversal::{AdaptedFamily, ChartPoint, FamilyError, TransitionClass};

pub const DEFAULT_MAX_DEPTH: u32 = 24;
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoverError {
    #[error("subdivision exceeded depth {depth}")]
    SubdivisionOverflow { depth: u32 },
    #[error("dead symbol: {0}")]
    DeadSymbol(String),
    #[error("sequence not admissible at position {position}: {reason}")]
    NotAdmissible { position: usize, reason: String },
    #[error("truncation bound {bound:.3e} exceeds tolerance {tolerance:.3e}; use a horizon of at least {needed}")]
    HorizonTooShort { bound: f64, tolerance: f64, needed: usize },
    #[error("no piece available at step {step}")]
    ChoiceExhausted { step: isize },
    #[error(transparent)]
    Shadow(#[from] ShadowError),
    #[error(transparent)]
    Family(#[from] FamilyError),
}

/// Half-open chart box `[u0, u1) × [s0, s1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub u: [f64; 2],
    pub s: [f64; 2],
}

impl Piece {
    pub fn anchor(&self) -> (f64, f64) {
        (0.5 * (self.u[0] + self.u[1]), 0.5 * (self.s[0] + self.s[1]))
    }

    pub fn contains(&self, u: f64, s: f64) -> bool {
        self.u[0] <= u && u < self.u[1] && self.s[0] <= s && s < self.s[1]
    }

    pub fn rectangle(&self, disc: usize) -> ChartRectangle {
        use crate::region_algebra::BoxUnion;
        ChartRectangle::new(
            disc,
            BoxUnion::half_open(self.u[0], self.u[1]),
            BoxUnion::half_open(self.s[0], self.s[1]),
        )
    }
}

/// Image of a half-open interval `[lo, hi)` under `x -> a x + b`, as
/// `(lo, hi, lo_closed)`; the upper end is closed exactly when the lower
/// one is open.
fn image(iv: [f64; 2], a: f64, b: f64) -> (f64, f64, bool) {
    if a > 0.0 {
        (a * iv[0] + b, a * iv[1] + b, true)
    } else {
        (a * iv[1] + b, a * iv[0] + b, false)
    }
}

/// Whether an image interval lies in `[-w, w)`.
fn image_inside(img: (f64, f64, bool), w: f64) -> bool {
    let (lo, hi, lo_closed) = img;
    lo >= -w && if lo_closed { hi <= w } else { hi < w }
}

/// Whether an image interval meets the half-open `[lo, hi)`.
fn image_meets(img: (f64, f64, bool), iv: [f64; 2]) -> bool {
    let (lo, hi, lo_closed) = img;
    let hi_closed = !lo_closed;
    let l = lo.max(iv[0]);
    let r = hi.min(iv[1]);
    if l < r {
        return true;
    }
    if l > r {
        return false;
    }
    // Degenerate: a single point l == r must belong to both.
    let in_img = (l > lo || lo_closed) && (l < hi || hi_closed);
    let in_iv = l >= iv[0] && l < iv[1];
    in_img && in_iv
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Node {
    piece: Piece,
    /// Split axis (0 = u, 1 = s), midpoint and children.
    split: Option<(u8, f64, usize, usize)>,
    leaf: Option<usize>,
}

/// The subdivision of `B`, shared by all discs, and the transition data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SymbolTable {
    pub delta: f64,
    pub nu: f64,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub pieces: Vec<Piece>,
    pub classes: Vec<TransitionClass>,
    /// `j(α)`: class whose image of `Δ_α` lies in the target `B`.
    pub forward: Vec<usize>,
    /// `k(α)`: class whose preimage of `Δ_α` lies in the source `B`.
    pub backward: Vec<usize>,
    /// Condition (1) classes per piece.
    pub forward_sets: Vec<Vec<usize>>,
    /// `fut(α)`: classes whose target discs the row of `Δ_α` reaches.
    pub futures: Vec<Vec<usize>>,
    nodes: Vec<Node>,
}

/// An admissible word read at class level: pieces `α_n` and the classes
/// `r_n` leading from step `n` to `n + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassWord {
    pub pieces: Vec<usize>,
    pub classes: Vec<usize>,
    /// Index of time 0 in `pieces`.
    pub zero: usize,
}

/// A concrete finite window of a sequence in `Σ_A`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolSequence {
    pub discs: Vec<usize>,
    pub pieces: Vec<usize>,
    pub zero: usize,
}

/// Result of `θ` with its truncation bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaValue {
    pub point: ChartPoint,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub samples: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.max_error < self.tolerance
    }
}

impl SymbolTable {
    pub fn build(family: &AdaptedFamily, max_depth: u32) -> Result<Self, CoverError> {
        subdivide(family, max_depth)
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn class(&self, index: usize) -> &TransitionClass {
        &self.classes[index]
    }

    /// Chart map of a class: `φ_r(u, s) = (λ_u u + o_u, λ_s s + o_s)`.
    pub fn forward_map(&self, class: usize, u: f64, s: f64) -> (f64, f64) {
        let c = &self.classes[class];
        (self.lambda_u * u + c.offset_u, self.lambda_s * s + c.offset_s)
    }

    pub fn backward_map(&self, class: usize, u: f64, s: f64) -> (f64, f64) {
        let c = &self.classes[class];
        ((u - c.offset_u) / self.lambda_u, (s - c.offset_s) / self.lambda_s)
    }

    fn forward_contains(&self, piece: &Piece, class: &TransitionClass) -> bool {
        image_inside(image(piece.u, self.lambda_u, class.offset_u), self.delta)
            && image_inside(image(piece.s, self.lambda_s, class.offset_s), self.delta)
    }

    fn backward_image(&self, piece: &Piece, class: &TransitionClass) -> ((f64, f64, bool), (f64, f64, bool)) {
        (
            image(piece.u, 1.0 / self.lambda_u, -class.offset_u / self.lambda_u),
            image(piece.s, 1.0 / self.lambda_s, -class.offset_s / self.lambda_s),
        )
    }

    fn backward_contains(&self, piece: &Piece, class: &TransitionClass) -> bool {
        let (iu, is) = self.backward_image(piece, class);
        image_inside(iu, self.delta) && image_inside(is, self.delta)
    }

    /// Piece containing a chart point of `B`.
    pub fn locate(&self, u: f64, s: f64) -> Option<usize> {
        let root = &self.nodes[0].piece;
        if !root.contains(u, s) {
            return None;
        }
        let mut k = 0;
        loop {
            let node = &self.nodes[k];
            match node.split {
                None => return node.leaf,
                Some((axis, mid, lo, hi)) => {
                    let x = if axis == 0 { u } else { s };
                    k = if x < mid { lo } else { hi };
                }
            }
        }
    }

    /// Pieces meeting the image box given as two interval images.
    fn pieces_meeting(&self, iu: (f64, f64, bool), is: (f64, f64, bool), out: &mut Vec<usize>) {
        let mut stack = vec![0usize];
        while let Some(k) = stack.pop() {
            let node = &self.nodes[k];
            if !(image_meets(iu, node.piece.u) && image_meets(is, node.piece.s)) {
                continue;
            }
            match node.split {
                None => out.extend(node.leaf),
                Some((_, _, lo, hi)) => {
                    stack.push(lo);
                    stack.push(hi);
                }
            }
        }
    }

    /// Whether condition (2) holds for the pair (α, class) through `β`.
    pub fn condition_two_witness(&self, alpha: usize, class: usize) -> Option<usize> {
        let c = &self.classes[class];
        let target = &self.pieces[alpha];
        (0..self.pieces.len()).find(|&beta| {
            let p = &self.pieces[beta];
            if !self.backward_contains(p, c) {
                return false;
            }
            let (iu, is) = self.backward_image(p, c);
            image_meets(iu, target.u) && image_meets(is, target.s)
        })
    }

    /// Union of all future sets.
    pub fn all_futures(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.futures.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Checks rows and columns of `A` at class level: every row reaches the
    /// forward target, and every piece is reached from the backward source.
    pub fn check_matrix(&self) -> Result<(), CoverError> {
        for (alpha, fut) in self.futures.iter().enumerate() {
            if fut.is_empty() {
                return Err(CoverError::DeadSymbol(format!("piece {alpha} has no future")));
            }
            if !fut.contains(&self.forward[alpha]) {
                return Err(CoverError::DeadSymbol(format!("piece {alpha} misses its forward class")));
            }
        }
        for alpha in 0..self.pieces.len() {
            let k = self.backward[alpha];
            let (iu, is) = self.backward_image(&self.pieces[alpha], &self.classes[k]);
            let mut hits = Vec::new();
            self.pieces_meeting(iu, is, &mut hits);
            if !hits.iter().any(|&b| self.futures[b].contains(&k)) {
                return Err(CoverError::DeadSymbol(format!("piece {alpha} has no predecessor")));
            }
        }
        Ok(())
    }

    /// Whether `A` has a 1 from (disc, α) to (target, any piece).
    pub fn allows(&self, family: &AdaptedFamily, disc: usize, alpha: usize, target: usize) -> Option<usize> {
        self.futures[alpha].iter().copied().find(|&r| {
            family
                .targets(disc, &self.classes[r], family.delta())
                .iter()
                .any(|t| t.0 == target)
        })
    }

    /// Class-level reading of a concrete sequence.
    pub fn class_word(&self, family: &AdaptedFamily, seq: &SymbolSequence) -> Result<ClassWord, CoverError> {
        if seq.discs.len() != seq.pieces.len() || seq.pieces.is_empty() || seq.zero >= seq.pieces.len() {
            return Err(CoverError::NotAdmissible { position: 0, reason: "malformed window".into() });
        }
        let mut classes = Vec::with_capacity(seq.pieces.len() - 1);
        for n in 0..seq.pieces.len() - 1 {
            if seq.pieces[n] >= self.len() || seq.pieces[n + 1] >= self.len() {
                return Err(CoverError::NotAdmissible { position: n, reason: "unknown piece".into() });
            }
            let r = self
                .allows(family, seq.discs[n], seq.pieces[n], seq.discs[n + 1])
                .ok_or_else(|| CoverError::NotAdmissible {
                    position: n,
                    reason: format!("A has no transition from disc {} to disc {}", seq.discs[n], seq.discs[n + 1]),
                })?;
            classes.push(r);
        }
        Ok(ClassWord { pieces: seq.pieces.clone(), classes, zero: seq.zero })
    }

    pub fn check_word(&self, word: &ClassWord) -> Result<(), CoverError> {
        if word.pieces.is_empty() || word.classes.len() + 1 != word.pieces.len() || word.zero >= word.pieces.len() {
            return Err(CoverError::NotAdmissible { position: 0, reason: "malformed word".into() });
        }
        for (n, &r) in word.classes.iter().enumerate() {
            if !self.futures[word.pieces[n]].contains(&r) {
                return Err(CoverError::NotAdmissible {
                    position: n,
                    reason: format!("class {r} is not a future of piece {}", word.pieces[n]),
                });
            }
        }
        Ok(())
    }

    /// Decay rate of the truncation error per step.
    pub fn rate(&self) -> f64 {
        self.lambda_s.abs().max(1.0 / self.lambda_u.abs())
    }

    /// Smallest symmetric horizon with truncation bound below `tol`.
    pub fn horizon_for(&self, constant: f64, tol: f64) -> usize {
        let scale = constant * self.delta;
        if scale <= tol {
            return 0;
        }
        ((tol / scale).ln() / self.rate().ln()).ceil() as usize
    }

    fn truncation(&self, constant: f64, back: usize, ahead: usize) -> f64 {
        constant * self.delta * self.rate().powi(back.min(ahead) as i32)
    }

    /// `θ` read directly in chart coordinates: the shadow of a class word
    /// is the unique chart orbit of the `φ_r`, truncated at both ends.
    pub fn theta_chart(&self, word: &ClassWord) -> (f64, f64) {
        let mut u = 0.0;
        for n in (word.zero..word.classes.len()).rev() {
            u = (u - self.classes[word.classes[n]].offset_u) / self.lambda_u;
        }
        let mut s = 0.0;
        for n in 0..word.zero {
            s = self.lambda_s * s + self.classes[word.classes[n]].offset_s;
        }
        (u, s)
    }

    /// `θ` by shadowing the pseudo-orbit of anchors on the torus.
    pub fn theta(&self, family: &AdaptedFamily, seq: &SymbolSequence, tol: f64) -> Result<ThetaValue, CoverError> {
        self.class_word(family, seq)?;
        let back = seq.zero;
        let ahead = seq.pieces.len() - 1 - seq.zero;
        let bound = self.truncation(family.constant(), back, ahead);
        if bound > tol {
            return Err(CoverError::HorizonTooShort {
                bound,
                tolerance: tol,
                needed: self.horizon_for(family.constant(), tol),
            });
        }
        let system = family.system();
        let points: Vec<TorusPoint> = seq
            .discs
            .iter()
            .zip(&seq.pieces)
            .map(|(&d, &p)| {
                let (u, s) = self.pieces[p].anchor();
                family.point(ChartPoint { disc: d, u, s })
            })
            .collect();
        let orbit = PseudoOrbit::new(points, OrbitKind::BiInfinite { zero: seq.zero });
        let eta = (3.0 + system.rates().lambda_c_plus) * family.delta();
        let sh = shadow(system, &orbit, eta)?;
        let disc = seq.discs[seq.zero];
        let c = family.constant() * family.delta();
        let point = family.proj_disc(disc, &sh.points[seq.zero], c)?;
        Ok(ThetaValue { point, bound })
    }

    /// Symbolic coding of a point of `B_disc`: forward by the forward
    /// classes, backward by the backward classes, on the torus.
    pub fn encode_point(&self, family: &AdaptedFamily, x: ChartPoint, horizon: usize) -> Result<SymbolSequence, CoverError> {
        let system = family.system();
        let r0 = system.r0();
        let delta = family.delta();
        let first = self.locate(x.u, x.s).ok_or(CoverError::ChoiceExhausted { step: 0 })?;
        let mut fwd_discs = vec![x.disc];
        let mut fwd_pieces = vec![first];
        let mut cur = x;
        let mut piece = first;
        for step in 1..=horizon {
            let r = self.forward[piece];
            let (target, _) = *family
                .targets(cur.disc, &self.classes[r], delta)
                .first()
                .ok_or(CoverError::ChoiceExhausted { step: step as isize })?;
            let img = system.apply(&family.point(cur));
            cur = family.proj_disc(target, &img, r0)?;
            piece = self
                .locate(cur.u, cur.s)
                .ok_or(CoverError::ChoiceExhausted { step: step as isize })?;
            fwd_discs.push(target);
            fwd_pieces.push(piece);
        }
        let mut back_discs = Vec::new();
        let mut back_pieces = Vec::new();
        let mut cur = x;
        let mut piece = first;
        for step in 1..=horizon {
            let k = self.backward[piece];
            let (source, _) = *family
                .sources(cur.disc, &self.classes[k], delta)
                .first()
                .ok_or(CoverError::ChoiceExhausted { step: -(step as isize) })?;
            let pre = system.apply_inverse(&family.point(cur));
            cur = family.proj_disc(source, &pre, r0)?;
            piece = self
                .locate(cur.u, cur.s)
                .ok_or(CoverError::ChoiceExhausted { step: -(step as isize) })?;
            if !self.futures[piece].contains(&k) {
                return Err(CoverError::ChoiceExhausted { step: -(step as isize) });
            }
            back_discs.push(source);
            back_pieces.push(piece);
        }
        back_discs.reverse();
        back_pieces.reverse();
        let zero = back_pieces.len();
        back_discs.extend(fwd_discs);
        back_pieces.extend(fwd_pieces);
        Ok(SymbolSequence { discs: back_discs, pieces: back_pieces, zero })
    }

    /// Class-level coding of a chart point of `B`.
    pub fn encode_chart(&self, u: f64, s: f64, horizon: usize) -> Result<ClassWord, CoverError> {
        let first = self.locate(u, s).ok_or(CoverError::ChoiceExhausted { step: 0 })?;
        let mut fwd = vec![first];
        let mut fwd_classes = Vec::new();
        let (mut cu, mut cs) = (u, s);
        let mut piece = first;
        for step in 1..=horizon {
            let r = self.forward[piece];
            (cu, cs) = self.forward_map(r, cu, cs);
            piece = self.locate(cu, cs).ok_or(CoverError::ChoiceExhausted { step: step as isize })?;
            fwd.push(piece);
            fwd_classes.push(r);
        }
        let mut back = Vec::new();
        let mut back_classes = Vec::new();
        let (mut cu, mut cs) = (u, s);
        let mut piece = first;
        for step in 1..=horizon {
            let k = self.backward[piece];
            (cu, cs) = self.backward_map(k, cu, cs);
            piece = self.locate(cu, cs).ok_or(CoverError::ChoiceExhausted { step: -(step as isize) })?;
            if !self.futures[piece].contains(&k) {
                return Err(CoverError::ChoiceExhausted { step: -(step as isize) });
            }
            back.push(piece);
            back_classes.push(k);
        }
        back.reverse();
        back_classes.reverse();
        let zero = back.len();
        back.extend(fwd);
        back_classes.extend(fwd_classes);
        Ok(ClassWord { pieces: back, classes: back_classes, zero })
    }

    /// `θ(⟨a, b⟩)` against `⟨θa, θb⟩_D` for windows with equal time-0
    /// symbol and equal shape.
    pub fn check_bracket_preserving(
        &self,
        family: &AdaptedFamily,
        pairs: &[(SymbolSequence, SymbolSequence)],
        tol: f64,
    ) -> Result<CheckReport, CoverError> {
        let mut worst: f64 = 0.0;
        for (a, b) in pairs {
            if a.zero != b.zero
                || a.pieces.len() != b.pieces.len()
                || a.discs[a.zero] != b.discs[b.zero]
                || a.pieces[a.zero] != b.pieces[b.zero]
            {
                return Err(CoverError::NotAdmissible { position: a.zero, reason: "time-0 symbols differ".into() });
            }
            let z = a.zero;
            let mut c = a.clone();
            c.discs[..z].copy_from_slice(&b.discs[..z]);
            c.pieces[..z].copy_from_slice(&b.pieces[..z]);
            let ta = self.theta(family, a, tol)?.point;
            let tb = self.theta(family, b, tol)?.point;
            let tc = self.theta(family, &c, tol)?.point;
            let br = family.bracket(ta, tb)?;
            worst = worst.max((br.u - tc.u).abs().max((br.s - tc.s).abs()));
        }
        Ok(CheckReport { samples: pairs.len(), max_error: worst, tolerance: tol })
    }

    /// `proj(f θ(a))` against `θ(σ a)`. The window of `σa` is the same
    /// window read with time 0 moved one step ahead.
    pub fn shift_compatibility(&self, family: &AdaptedFamily, seqs: &[SymbolSequence], tol: f64) -> Result<CheckReport, CoverError> {
        let system = family.system();
        let mut worst: f64 = 0.0;
        for a in seqs {
            let x = self.theta(family, a, tol)?.point;
            let shifted = SymbolSequence { discs: a.discs.clone(), pieces: a.pieces.clone(), zero: a.zero + 1 };
            let y = self.theta(family, &shifted, tol)?.point;
            let img = family.proj_disc(y.disc, &system.apply(&family.point(x)), system.r0())?;
            worst = worst.max((img.u - y.u).abs().max((img.s - y.s).abs()));
        }
        Ok(CheckReport { samples: seqs.len(), max_error: worst, tolerance: tol })
    }

    /// The map `x -> W^c_δ(f x) ∩ B_j` through the forward class. Kept as a
    /// diagnostic; the coding does not use it.
    pub fn phi_diagnostic(&self, family: &AdaptedFamily, x: ChartPoint) -> Option<ChartPoint> {
        let alpha = self.locate(x.u, x.s)?;
        let r = self.forward[alpha];
        let (target, _) = *family.targets(x.disc, &self.classes[r], family.delta()).first()?;
        let img = family.system().apply(&family.point(x));
        family.proj_disc(target, &img, family.delta()).ok()
    }

    /// Random admissible class word with time 0 in the middle.
    pub fn random_word(&self, rng: &mut impl rand::Rng, first: usize, back: usize, ahead: usize) -> ClassWord {
        // Sample the past by choosing any piece with the needed class,
        // which is always possible since every class appearing at time 0
        // comes from some future set.
        let len = back + ahead + 1;
        let mut pieces = vec![0; len];
        let mut classes = vec![0; len - 1];
        pieces[back] = first;
        for n in back..len - 1 {
            let fut = &self.futures[pieces[n]];
            classes[n] = fut[rng.gen_range(0..fut.len())];
            pieces[n + 1] = rng.gen_range(0..self.len());
        }
        for n in (0..back).rev() {
            let p = rng.gen_range(0..self.len());
            pieces[n] = p;
            let fut = &self.futures[p];
            classes[n] = fut[rng.gen_range(0..fut.len())];
        }
        ClassWord { pieces, classes, zero: back }
    }

    /// Concrete sequence following a class word from a given disc at
    /// time 0; past discs are taken among the sources.
    pub fn realize(&self, family: &AdaptedFamily, word: &ClassWord, disc: usize) -> Option<SymbolSequence> {
        let delta = family.delta();
        let len = word.pieces.len();
        let mut discs = vec![0; len];
        discs[word.zero] = disc;
        for n in word.zero..len - 1 {
            discs[n + 1] = family.targets(discs[n], &self.classes[word.classes[n]], delta).first()?.0;
        }
        for n in (0..word.zero).rev() {
            discs[n] = family.sources(discs[n + 1], &self.classes[word.classes[n]], delta).first()?.0;
        }
        Some(SymbolSequence { discs, pieces: word.pieces.clone(), zero: word.zero })
    }
}

/// Ambient diameter of a chart box with widths `a` along `e_u`, `b` along
/// `e_s`.
fn box_diameter(family: &AdaptedFamily, a: f64, b: f64) -> f64 {
    let sp = family.system().splitting();
    let d = family.dim();
    let eu = sp.basis_vector(0);
    let es = sp.basis_vector(d - 1);
    (&eu * a + &es * b).norm().max((&eu * a - &es * b).norm())
}

/// Bisects `B` until every piece has forward and backward containments and
/// small images, then computes the future sets.
pub fn subdivide(family: &AdaptedFamily, max_depth: u32) -> Result<SymbolTable, CoverError> {
    subdivide_with(family, default_nu(family), max_depth)
}

/// Largest piece diameter allowed by `3 Lip(f) ν < δ`, less a hair.
pub fn default_nu(family: &AdaptedFamily) -> f64 {
    family.delta() / (3.0 * family.system().lipschitz()) * (1.0 - 1e-9)
}

/// [`subdivide`] with an explicit piece diameter `nu`.
pub fn subdivide_with(family: &AdaptedFamily, nu: f64, max_depth: u32) -> Result<SymbolTable, CoverError> {
    let delta = family.delta();
    let lu = family.lambda_u();
    let ls = family.lambda_s();
    let classes = family.transition_classes((lu.abs() + 1.0) * delta, (ls.abs() + 1.0) * delta);
    let mut table = SymbolTable {
        delta,
        nu,
        lambda_u: lu,
        lambda_s: ls,
        pieces: Vec::new(),
        classes,
        forward: Vec::new(),
        backward: Vec::new(),
        forward_sets: Vec::new(),
        futures: Vec::new(),
        nodes: vec![Node { piece: Piece { u: [-delta, delta], s: [-delta, delta] }, split: None, leaf: None }],
    };
    let grow_u = lu.abs().max(1.0 / lu.abs()).max(1.0);
    let grow_s = ls.abs().max(1.0 / ls.abs()).max(1.0);
    let mut stack = vec![(0usize, 0u32)];
    while let Some((k, depth)) = stack.pop() {
        let p = table.nodes[k].piece;
        let (a, b) = (p.u[1] - p.u[0], p.s[1] - p.s[0]);
        let diam_ok = box_diameter(family, a, b) <= nu
            && box_diameter(family, lu.abs() * a, ls.abs() * b) <= nu
            && box_diameter(family, a / lu.abs(), b / ls.abs()) <= nu;
        let fwd = table.classes.iter().position(|c| table.forward_contains(&p, c));
        let bwd = table.classes.iter().position(|c| table.backward_contains(&p, c));
        let axis = match (diam_ok, fwd, bwd) {
            (false, _, _) => {
                if grow_u * a >= grow_s * b { 0 } else { 1 }
            }
            (true, None, _) => 0,
            (true, Some(_), None) => 1,
            (true, Some(fk), Some(bk)) => {
                let leaf = table.pieces.len();
                table.pieces.push(p);
                table.forward.push(fk);
                table.backward.push(bk);
                table.nodes[k].leaf = Some(leaf);
                continue;
            }
        };
        if depth >= max_depth {
            return Err(CoverError::SubdivisionOverflow { depth: max_depth });
        }
        let (lo, hi) = if axis == 0 {
            let m = 0.5 * (p.u[0] + p.u[1]);
            (Piece { u: [p.u[0], m], s: p.s }, Piece { u: [m, p.u[1]], s: p.s })
        } else {
            let m = 0.5 * (p.s[0] + p.s[1]);
            (Piece { u: p.u, s: [p.s[0], m] }, Piece { u: p.u, s: [m, p.s[1]] })
        };
        let mid = if axis == 0 { lo.u[1] } else { lo.s[1] };
        let (il, ih) = (table.nodes.len(), table.nodes.len() + 1);
        table.nodes.push(Node { piece: lo, split: None, leaf: None });
        table.nodes.push(Node { piece: hi, split: None, leaf: None });
        table.nodes[k].split = Some((axis as u8, mid, il, ih));
        // Depth-first with the lower half first keeps leaf order stable.
        stack.push((ih, depth + 1));
        stack.push((il, depth + 1));
    }
    let np = table.pieces.len();
    let mut forward_sets = vec![Vec::new(); np];
    let mut futures = vec![Vec::new(); np];
    for (alpha, p) in table.pieces.iter().enumerate() {
        for (r, c) in table.classes.iter().enumerate() {
            if table.forward_contains(p, c) {
                forward_sets[alpha].push(r);
                futures[alpha].push(r);
            }
        }
    }
    let mut hits = Vec::new();
    for (r, c) in table.classes.iter().enumerate() {
        for beta in 0..np {
            let p = &table.pieces[beta];
            if !table.backward_contains(p, c) {
                continue;
            }
            let (iu, is) = table.backward_image(p, c);
            hits.clear();
            table.pieces_meeting(iu, is, &mut hits);
            for &alpha in &hits {
                futures[alpha].push(r);
            }
        }
    }
    for f in &mut futures {
        f.sort_unstable();
        f.dedup();
    }
    table.forward_sets = forward_sets;
    table.futures = futures;
    table.check_matrix()?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_model::AffinePHSystem;
    use crate::transversal::FamilyParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(alpha: f64) -> (AdaptedFamily, SymbolTable) {
        let fam = AdaptedFamily::build(&AffinePHSystem::skew3(alpha), &FamilyParams::default()).unwrap();
        let table = subdivide(&fam, DEFAULT_MAX_DEPTH).unwrap();
        (fam, table)
    }

    #[test]
    fn interval_image_semantics() {
        assert!(image_inside(image([0.0, 1.0], 1.0, -1.0), 1.0));
        assert!(!image_inside(image([0.0, 1.0], 1.0, 0.5), 1.0));
        // Negative slope turns [0, 1) into (-1, 0].
        let img = image([0.0, 1.0], -1.0, 0.0);
        assert_eq!(img, (-1.0, 0.0, false));
        assert!(!image_meets(img, [-2.0, -1.0]));
        assert!(image_meets(img, [0.0, 1.0]));
        assert!(!image_meets(image([0.0, 1.0], 1.0, 0.0), [1.0, 2.0]));
    }

    #[test]
    fn pieces_tile_b() {
        let (fam, t) = setup(0.0);
        let area: f64 = t.pieces.iter().map(|p| (p.u[1] - p.u[0]) * (p.s[1] - p.s[0])).sum();
        let d = fam.delta();
        assert!((area - 4.0 * d * d).abs() < 1e-18);
        assert!(3.0 * fam.system().lipschitz() * t.nu < d);
        for (i, p) in t.pieces.iter().enumerate() {
            let (u, s) = p.anchor();
            assert_eq!(t.locate(u, s), Some(i));
        }
    }

    #[test]
    fn forward_and_backward_choices_contain() {
        let (_fam, t) = setup(0.0);
        let d = t.delta;
        for (i, p) in t.pieces.iter().enumerate() {
            for (u, s) in [(p.u[0], p.s[0]), (p.u[1] - 1e-15, p.s[1] - 1e-15)] {
                let (fu, fs) = t.forward_map(t.forward[i], u, s);
                assert!(fu.abs() <= d * (1.0 + 1e-12) && fs.abs() <= d * (1.0 + 1e-12));
                let (bu, bs) = t.backward_map(t.backward[i], u, s);
                assert!(bu.abs() <= d * (1.0 + 1e-12) && bs.abs() <= d * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn condition_two_transitions_exist() {
        let (_fam, t) = setup(0.41421356);
        let extra = (0..t.len()).any(|a| t.futures[a].len() > t.forward_sets[a].len());
        assert!(extra, "expected transitions from condition (2) alone");
        for a in (0..t.len()).step_by(97) {
            for &r in &t.futures[a] {
                if !t.forward_sets[a].contains(&r) {
                    assert!(t.condition_two_witness(a, r).is_some());
                }
            }
        }
    }

    #[test]
    fn theta_chart_matches_shadowing() {
        let (fam, t) = setup(0.41421356);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = t.horizon_for(fam.constant(), 1e-9);
        for _ in 0..5 {
            let word = t.random_word(&mut rng, 17, l, l);
            let seq = t.realize(&fam, &word, 12345).unwrap();
            let th = t.theta(&fam, &seq, 1e-9).unwrap();
            let (u, s) = t.theta_chart(&word);
            assert!((th.point.u - u).abs() < 1e-9 && (th.point.s - s).abs() < 1e-9);
            assert!(u.abs() < 0.05 && s.abs() < 0.05);
        }
    }

    #[test]
    fn short_horizon_is_rejected() {
        let (fam, t) = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let word = t.random_word(&mut rng, 0, 3, 3);
        let seq = t.realize(&fam, &word, 0).unwrap();
        assert!(matches!(t.theta(&fam, &seq, 1e-8), Err(CoverError::HorizonTooShort { .. })));
    }

    #[test]
    fn encode_round_trip() {
        let (fam, t) = setup(0.41421356);
        let l = t.horizon_for(fam.constant(), 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = fam.delta();
        for _ in 0..10 {
            let x = ChartPoint { disc: rng.gen_range(0..fam.num_discs()), u: rng.gen_range(-d..d), s: rng.gen_range(-d..d) };
            let seq = t.encode_point(&fam, x, l).unwrap();
            let th = t.theta(&fam, &seq, 1e-8).unwrap();
            assert_eq!(th.point.disc, x.disc);
            assert!((th.point.u - x.u).abs() < 1e-8 && (th.point.s - x.s).abs() < 1e-8);
            let w = t.encode_chart(x.u, x.s, l).unwrap();
            t.check_word(&w).unwrap();
            let (u, s) = t.theta_chart(&w);
            assert!((u - x.u).abs() < 1e-9 && (s - x.s).abs() < 1e-9);
        }
    }

    use rand::Rng;
}
