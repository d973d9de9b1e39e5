//! Set algebra for rectangles in disc charts.
//!
//! A [`BoxUnion`] is a finite union of intervals of one chart factor, each
//! end carrying its own open/closed flag. A [`ChartRectangle`] is the product
//! of an unstable and a stable [`BoxUnion`] in the chart of one disc.
//!
//! All operations work on the arrangement of endpoints: every elementary
//! piece (an endpoint or an open gap between consecutive endpoints) is
//! classified once, so results are exact up to the tie tolerance used to
//! identify endpoints.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Endpoints closer than this are identified.
pub const TIE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RegionError {
    #[error("rectangles live on different discs ({0} and {1})")]
    DiscMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: true, hi_closed: true }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: false, hi_closed: false }
    }

    /// `[lo, hi)`.
    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self { lo, hi, lo_closed: true, hi_closed: false }
    }

    pub fn point(x: f64) -> Self {
        Self::closed(x, x)
    }

    pub fn is_empty(&self) -> bool {
        if self.hi - self.lo > TIE {
            false
        } else if (self.hi - self.lo).abs() <= TIE {
            !(self.lo_closed && self.hi_closed)
        } else {
            true
        }
    }

    pub fn length(&self) -> f64 {
        (self.hi - self.lo).max(0.0)
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if (x - self.lo).abs() <= TIE { self.lo_closed } else { x > self.lo };
        let below = if (x - self.hi).abs() <= TIE { self.hi_closed } else { x < self.hi };
        above && below
    }
}

/// Finite union of intervals in canonical form: sorted, pairwise disjoint
/// and not touching.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxUnion {
    parts: Vec<Interval>,
}

#[derive(Clone, Copy)]
enum Piece {
    At(f64),
    Between(f64, f64),
}

impl BoxUnion {
    pub fn empty() -> Self {
        Self { parts: Vec::new() }
    }

    pub fn from_interval(iv: Interval) -> Self {
        Self::from_intervals(vec![iv])
    }

    pub fn from_intervals(parts: Vec<Interval>) -> Self {
        let raw = Self { parts: parts.into_iter().filter(|p| !p.is_empty()).collect() };
        raw.rebuild(|x| raw.contains_raw(x), &[])
    }

    pub fn closed(lo: f64, hi: f64) -> Self {
        Self::from_interval(Interval::closed(lo, hi))
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self::from_interval(Interval::open(lo, hi))
    }

    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self::from_interval(Interval::half_open(lo, hi))
    }

    pub fn parts(&self) -> &[Interval] {
        &self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Whether the set contains an open interval.
    pub fn has_interior(&self) -> bool {
        self.parts.iter().any(|p| p.hi - p.lo > TIE)
    }

    pub fn measure(&self) -> f64 {
        self.parts.iter().map(Interval::length).sum()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.contains_raw(x)
    }

    fn contains_raw(&self, x: f64) -> bool {
        self.parts.iter().any(|p| p.contains(x))
    }

    /// Smallest closed interval containing the set.
    pub fn hull(&self) -> Option<Interval> {
        Some(Interval::closed(self.parts.first()?.lo, self.parts.last()?.hi))
    }

    pub fn min(&self) -> Option<f64> {
        self.parts.first().map(|p| p.lo)
    }

    pub fn max(&self) -> Option<f64> {
        self.parts.last().map(|p| p.hi)
    }

    fn endpoints(&self, out: &mut Vec<f64>) {
        for p in &self.parts {
            out.push(p.lo);
            out.push(p.hi);
        }
    }

    /// Rebuild a canonical union from a membership oracle over the
    /// arrangement generated by `self`'s endpoints plus `extra`.
    fn rebuild(&self, member: impl Fn(f64) -> bool, extra: &[f64]) -> Self {
        let mut pts = Vec::new();
        self.endpoints(&mut pts);
        pts.extend_from_slice(extra);
        Self::from_arrangement(pts, |piece| match piece {
            Piece::At(x) => member(x),
            Piece::Between(a, b) => member(0.5 * (a + b)),
        })
    }

    fn from_arrangement(mut pts: Vec<f64>, member: impl Fn(Piece) -> bool) -> Self {
        pts.retain(|x| x.is_finite());
        pts.sort_by(f64::total_cmp);
        let mut uniq: Vec<f64> = Vec::with_capacity(pts.len());
        for x in pts {
            if uniq.last().is_none_or(|&y| x - y > TIE) {
                uniq.push(x);
            }
        }
        let mut parts: Vec<Interval> = Vec::new();
        // Open run start: (value, closed flag).
        let mut run: Option<(f64, bool)> = None;
        for (i, &x) in uniq.iter().enumerate() {
            let at = member(Piece::At(x));
            let after = i + 1 < uniq.len() && member(Piece::Between(x, uniq[i + 1]));
            match run {
                Some((lo, lo_closed)) => {
                    if !at {
                        parts.push(Interval { lo, hi: x, lo_closed, hi_closed: false });
                        run = None;
                        if after {
                            run = Some((x, false));
                        }
                    } else if !after {
                        parts.push(Interval { lo, hi: x, lo_closed, hi_closed: true });
                        run = None;
                    }
                }
                None => {
                    if at && after {
                        run = Some((x, true));
                    } else if at {
                        parts.push(Interval::point(x));
                    } else if after {
                        run = Some((x, false));
                    }
                }
            }
        }
        Self { parts }
    }

    fn combine(&self, other: &Self, op: impl Fn(bool, bool) -> bool) -> Self {
        let mut pts = Vec::new();
        other.endpoints(&mut pts);
        self.rebuild(|x| op(self.contains_raw(x), other.contains_raw(x)), &pts)
    }

    pub fn union(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a && b)
    }

    pub fn subtract(&self, other: &Self) -> Self {
        self.combine(other, |a, b| a && !b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.subtract(other).is_empty()
    }

    /// Subset test allowing every endpoint of `self` to move by `tol`.
    pub fn is_subset_tol(&self, other: &Self, tol: f64) -> bool {
        self.parts.iter().all(|p| {
            other
                .parts
                .iter()
                .any(|q| q.lo <= p.lo + tol && p.hi <= q.hi + tol)
        })
    }

    pub fn closure(&self) -> Self {
        let closed = Self {
            parts: self
                .parts
                .iter()
                .map(|p| Interval { lo_closed: true, hi_closed: true, ..*p })
                .collect(),
        };
        closed.rebuild(|x| closed.contains_raw(x), &[])
    }

    pub fn interior(&self) -> Self {
        let open = Self {
            parts: self
                .parts
                .iter()
                .filter(|p| p.hi - p.lo > TIE)
                .map(|p| Interval { lo_closed: false, hi_closed: false, ..*p })
                .collect(),
        };
        open.rebuild(|x| open.contains_raw(x), &[])
    }

    pub fn boundary(&self) -> Self {
        self.closure().subtract(&self.interior())
    }

    /// Image under `x -> a x + b`.
    pub fn affine_image(&self, a: f64, b: f64) -> Self {
        let parts = self
            .parts
            .iter()
            .map(|p| {
                if a >= 0.0 {
                    Interval { lo: a * p.lo + b, hi: a * p.hi + b, ..*p }
                } else {
                    Interval {
                        lo: a * p.hi + b,
                        hi: a * p.lo + b,
                        lo_closed: p.hi_closed,
                        hi_closed: p.lo_closed,
                    }
                }
            })
            .collect();
        Self::from_intervals(parts)
    }

    /// Connected components that contain interior points.
    pub fn components(&self) -> impl Iterator<Item = &Interval> {
        self.parts.iter()
    }
}

/// Product of an unstable and a stable set in the chart of disc `disc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartRectangle {
    pub disc: usize,
    pub u: BoxUnion,
    pub s: BoxUnion,
}

impl ChartRectangle {
    pub fn new(disc: usize, u: BoxUnion, s: BoxUnion) -> Self {
        Self { disc, u, s }
    }

    /// Closed box `[u0,u1] x [s0,s1]`.
    pub fn closed_box(disc: usize, u0: f64, u1: f64, s0: f64, s1: f64) -> Self {
        Self::new(disc, BoxUnion::closed(u0, u1), BoxUnion::closed(s0, s1))
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty() || self.s.is_empty()
    }

    pub fn has_interior(&self) -> bool {
        self.u.has_interior() && self.s.has_interior()
    }

    pub fn contains(&self, u: f64, s: f64) -> bool {
        self.u.contains(u) && self.s.contains(s)
    }

    pub fn area(&self) -> f64 {
        self.u.measure() * self.s.measure()
    }

    fn check(&self, other: &Self) -> Result<(), RegionError> {
        if self.disc == other.disc {
            Ok(())
        } else {
            Err(RegionError::DiscMismatch(self.disc, other.disc))
        }
    }

    pub fn intersect(&self, other: &Self) -> Result<Self, RegionError> {
        self.check(other)?;
        Ok(Self::new(self.disc, self.u.intersect(&other.u), self.s.intersect(&other.s)))
    }

    /// `self \ other` as at most two disjoint products.
    pub fn subtract(&self, other: &Self) -> Result<Vec<Self>, RegionError> {
        self.check(other)?;
        let a = Self::new(self.disc, self.u.subtract(&other.u), self.s.clone());
        let b = Self::new(self.disc, self.u.intersect(&other.u), self.s.subtract(&other.s));
        Ok([a, b].into_iter().filter(|r| !r.is_empty()).collect())
    }

    /// `self ∪ other` as disjoint products.
    pub fn union(&self, other: &Self) -> Result<Vec<Self>, RegionError> {
        let mut out = vec![self.clone()];
        out.extend(other.subtract(self)?);
        out.retain(|r| !r.is_empty());
        Ok(out)
    }

    pub fn closure(&self) -> Self {
        Self::new(self.disc, self.u.closure(), self.s.closure())
    }

    pub fn interior(&self) -> Self {
        Self::new(self.disc, self.u.interior(), self.s.interior())
    }

    /// Boundary as disjoint products: `∂u × cl s` and `int u × ∂s`.
    pub fn boundary(&self) -> Vec<Self> {
        let a = Self::new(self.disc, self.u.boundary(), self.s.closure());
        let b = Self::new(self.disc, self.u.interior(), self.s.boundary());
        [a, b].into_iter().filter(|r| !r.is_empty()).collect()
    }

    /// Whether the interiors meet.
    pub fn interiors_meet(&self, other: &Self) -> bool {
        self.disc == other.disc
            && self.u.interior().intersect(&other.u.interior()).has_interior()
            && self.s.interior().intersect(&other.s.interior()).has_interior()
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.disc == other.disc && (self.is_empty() || (self.u.is_subset(&other.u) && self.s.is_subset(&other.s)))
    }
}

/// Whether a point lies in a list of rectangles.
pub fn union_contains(rects: &[ChartRectangle], u: f64, s: f64) -> bool {
    rects.iter().any(|r| r.contains(u, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sq(a: f64, b: f64) -> ChartRectangle {
        ChartRectangle::closed_box(0, a, b, a, b)
    }

    #[test]
    fn overlapping_squares() {
        let r1 = sq(0.0, 2.0);
        let r2 = sq(1.0, 3.0);
        assert_eq!(r1.intersect(&r2).unwrap(), sq(1.0, 2.0));
        let d = r1.subtract(&r2).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].u, BoxUnion::half_open(0.0, 1.0));
        assert_eq!(d[0].s, BoxUnion::closed(0.0, 2.0));
        assert_eq!(d[1].u, BoxUnion::closed(1.0, 2.0));
        assert_eq!(d[1].s, BoxUnion::half_open(0.0, 1.0));
    }

    #[test]
    fn disc_mismatch() {
        let r1 = sq(0.0, 1.0);
        let mut r2 = sq(0.0, 1.0);
        r2.disc = 1;
        assert_eq!(r1.intersect(&r2), Err(RegionError::DiscMismatch(0, 1)));
    }

    #[test]
    fn union_merges_touching() {
        let a = BoxUnion::half_open(0.0, 1.0);
        let b = BoxUnion::closed(1.0, 2.0);
        assert_eq!(a.union(&b), BoxUnion::closed(0.0, 2.0));
        let c = BoxUnion::open(1.0, 2.0);
        let gap = a.union(&c);
        assert_eq!(gap.parts().len(), 2);
    }

    #[test]
    fn tie_tolerance_identifies_endpoints() {
        let a = BoxUnion::closed(0.0, 1.0);
        let b = BoxUnion::closed(1.0 + 1e-14, 2.0);
        assert_eq!(a.union(&b), BoxUnion::closed(0.0, 2.0));
    }

    #[test]
    fn closure_interior_boundary() {
        let a = BoxUnion::from_intervals(vec![Interval::half_open(0.0, 1.0), Interval::point(3.0)]);
        assert_eq!(a.closure(), BoxUnion::from_intervals(vec![Interval::closed(0.0, 1.0), Interval::point(3.0)]));
        assert_eq!(a.interior(), BoxUnion::open(0.0, 1.0));
        let b = a.boundary();
        assert_eq!(b.parts().len(), 3);
        let r = sq(0.0, 1.0);
        let area: f64 = r.boundary().iter().map(ChartRectangle::area).sum();
        assert_eq!(area, 0.0);
    }

    #[test]
    fn affine_image_flips() {
        let a = BoxUnion::half_open(0.0, 1.0);
        let b = a.affine_image(-2.0, 1.0);
        assert_eq!(b, BoxUnion::from_interval(Interval { lo: -1.0, hi: 1.0, lo_closed: false, hi_closed: true }));
    }

    #[test]
    fn json_round_trip() {
        let r = ChartRectangle::new(3, BoxUnion::half_open(0.0, 0.5), BoxUnion::closed(-1.0, 1.0));
        let text = serde_json::to_string(&r).unwrap();
        let back: ChartRectangle = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    fn arb_union() -> impl Strategy<Value = BoxUnion> {
        proptest::collection::vec((0i32..20, 0i32..6, any::<bool>(), any::<bool>()), 0..5).prop_map(|v| {
            BoxUnion::from_intervals(
                v.into_iter()
                    .map(|(a, w, lc, hc)| {
                        let lo = a as f64 * 0.25;
                        Interval { lo, hi: lo + w as f64 * 0.25, lo_closed: lc, hi_closed: hc }
                    })
                    .collect(),
            )
        })
    }

    fn probes() -> Vec<f64> {
        (-2..=110).map(|k| k as f64 * 0.0625).collect()
    }

    proptest! {
        #[test]
        fn set_ops_pointwise(a in arb_union(), b in arb_union()) {
            let (u, i, d) = (a.union(&b), a.intersect(&b), a.subtract(&b));
            for x in probes() {
                prop_assert_eq!(u.contains(x), a.contains(x) || b.contains(x));
                prop_assert_eq!(i.contains(x), a.contains(x) && b.contains(x));
                prop_assert_eq!(d.contains(x), a.contains(x) && !b.contains(x));
            }
        }

        #[test]
        fn canonical_form_is_idempotent(a in arb_union(), b in arb_union()) {
            let u = a.union(&b);
            prop_assert_eq!(BoxUnion::from_intervals(u.parts().to_vec()), u.clone());
            for w in u.parts().windows(2) {
                prop_assert!(w[0].hi < w[1].lo || (w[0].hi == w[1].lo && !w[0].hi_closed && !w[1].lo_closed));
            }
        }

        #[test]
        fn rectangle_subtract_partitions(a in arb_union(), b in arb_union(), c in arb_union(), d in arb_union()) {
            let r1 = ChartRectangle::new(0, a, b);
            let r2 = ChartRectangle::new(0, c, d);
            let diff = r1.subtract(&r2).unwrap();
            let inter = r1.intersect(&r2).unwrap();
            for &x in probes().iter().step_by(3) {
                for &y in probes().iter().step_by(5) {
                    let in_diff = diff.iter().filter(|r| r.contains(x, y)).count();
                    prop_assert!(in_diff <= 1);
                    prop_assert_eq!(in_diff == 1, r1.contains(x, y) && !r2.contains(x, y));
                    prop_assert_eq!(inter.contains(x, y), r1.contains(x, y) && r2.contains(x, y));
                }
            }
        }

        #[test]
        fn closure_contains_interior(a in arb_union()) {
            prop_assert!(a.interior().is_subset(&a));
            prop_assert!(a.is_subset(&a.closure()));
            prop_assert!(a.boundary().measure() == 0.0);
        }
    }
}
