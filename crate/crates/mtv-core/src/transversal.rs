//! Families of discs transverse to the center foliation.
//!
//! Disc centers sit on the lattice `(1/n) Z^d`, which `L` maps onto itself.
//! Every disc is a translate of the same box in `E^u ⊕ E^s`, so the chart
//! map between a disc and any disc near its image depends only on the
//! integer offset between the two sites. Those offsets are collected into
//! [`TransitionClass`]es.
//!
//! When the center is a coordinate axis with an invariant complementary
//! coordinate plane (a product `T^{d-1} × T^1`), sites above the same
//! transverse point form a column and each column is lifted by its own
//! height in `[0, 1/n)` so that no two discs share a plane. Otherwise all
//! heights are zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shadowing::{delta0, shadowing_constant};
use crate::torus_model::{wrap_centered, AffinePHSystem, TorusPoint};

/// Default `ε` of the family.
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Default factor between the lattice covering radius and `δ`.
pub const DEFAULT_MARGIN: f64 = 1.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FamilyError {
    #[error("parameter violation: {0}")]
    ParameterViolation(String),
    #[error("coverage failure: {0}")]
    CoverageFailure(String),
    #[error("unsupported system: {0}")]
    Unsupported(String),
    #[error("point is not in the center saturation of disc {disc}")]
    NotInSaturation { disc: usize },
    #[error("point is outside the chart of disc {disc}")]
    OutOfChart { disc: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyParams {
    pub epsilon: f64,
    /// `None` picks the largest `δ` allowed by `16 C δ <= ε`.
    pub delta: Option<f64>,
    /// `None` picks the coarsest lattice that covers.
    pub lattice: Option<u32>,
    pub margin: f64,
}

impl Default for FamilyParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            delta: None,
            lattice: None,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LatticeMode {
    /// Product with a circle along coordinate `axis`.
    Column { axis: usize },
    /// All heights zero.
    Free,
}

/// A point of a disc in chart coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub disc: usize,
    pub u: f64,
    pub s: f64,
}

/// One disc of the family.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedDisc {
    pub index: usize,
    pub site: Vec<i64>,
    pub center: TorusPoint,
    /// Half-width of the chart box of `D`.
    pub half_width: f64,
    /// Half-width of `B`.
    pub inner: f64,
    /// Half-width of `E`.
    pub outer: f64,
}

/// Chart maps leading from a site to sites near its image: the site
/// offset `r` and the chart translation it induces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionClass {
    pub shift: Vec<i64>,
    pub offset_u: f64,
    pub offset_s: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptedFamily {
    system: AffinePHSystem,
    epsilon: f64,
    delta: f64,
    n: u32,
    mode: LatticeMode,
    constant: f64,
    delta0: f64,
    lambda_u: f64,
    lambda_s: f64,
    row_u: Vec<f64>,
    row_s: Vec<f64>,
    row_c: Vec<f64>,
    e_u: DVector<f64>,
    e_s: DVector<f64>,
    e_c: DVector<f64>,
}

/// Result of a grid covering check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub pitch: f64,
    /// Grid points accounted for.
    pub points: u64,
    /// Grid points actually evaluated.
    pub evaluated: u64,
    pub uncovered: u64,
    pub first_uncovered: Option<Vec<f64>>,
}

impl AdaptedFamily {
    pub fn build(system: &AffinePHSystem, params: &FamilyParams) -> Result<Self, FamilyError> {
        let dims = system.dims();
        if dims.u != 1 || dims.s != 1 {
            return Err(FamilyError::Unsupported(format!(
                "disc charts need one unstable and one stable direction, got u={} s={}",
                dims.u, dims.s
            )));
        }
        if dims.c == 0 {
            return Err(FamilyError::ParameterViolation(
                "no center direction: use the zero-center construction".into(),
            ));
        }
        let d = system.dim();
        let constant = shadowing_constant(system);
        let d0 = delta0(system);
        let epsilon = params.epsilon;
        let delta = params.delta.unwrap_or(epsilon / (16.0 * constant));
        if !(epsilon > 0.0 && delta > 0.0) {
            return Err(FamilyError::ParameterViolation("ε and δ must be positive".into()));
        }
        if 16.0 * constant * delta > epsilon * (1.0 + 1e-12) {
            return Err(FamilyError::ParameterViolation(format!(
                "16Cδ = {:.4e} exceeds ε = {epsilon}",
                16.0 * constant * delta
            )));
        }
        let rates = system.rates();
        if (3.0 + rates.lambda_c_plus) * delta > d0 {
            return Err(FamilyError::ParameterViolation(format!(
                "(3+λc+)δ = {:.4e} exceeds δ0 = {d0:.4e}",
                (3.0 + rates.lambda_c_plus) * delta
            )));
        }
        let sp = system.splitting();
        let inv = sp.inverse();
        let row = |i: usize| -> Vec<f64> { (0..d).map(|j| inv[(i, j)]).collect() };
        let (row_u, row_c, row_s) = (row(0), row(1), row(d - 1));
        let e_u = sp.basis_vector(0);
        let e_c = sp.basis_vector(1);
        let e_s = sp.basis_vector(d - 1);
        let mode = detect_mode(system);
        let lambda_u = system.unstable_multiplier().expect("u = 1");
        let lambda_s = system.stable_multiplier().expect("s = 1");
        let margin = params.margin.max(1.0);
        let n = match params.lattice {
            Some(n) if n > 0 => n,
            Some(_) => return Err(FamilyError::ParameterViolation("lattice size must be positive".into())),
            None => {
                let rho = covering_radius(system, mode);
                let mut n = (rho * margin / delta).ceil();
                if let LatticeMode::Column { .. } = mode {
                    n = n.max((margin / (2.0 * delta)).ceil());
                }
                if n > 1e6 {
                    return Err(FamilyError::ParameterViolation(format!("lattice size {n} too large")));
                }
                n as u32
            }
        };
        let fam = Self {
            system: system.clone(),
            epsilon,
            delta,
            n,
            mode,
            constant,
            delta0: d0,
            lambda_u,
            lambda_s,
            row_u,
            row_s,
            row_c,
            e_u,
            e_s,
            e_c,
        };
        fam.check_geometry()?;
        Ok(fam)
    }

    fn check_geometry(&self) -> Result<(), FamilyError> {
        let cond = self.system.splitting().condition();
        // A center plaque of radius Cδ through a point near B must cross E.
        if self.outer() < (1.0 + self.constant * cond) * self.delta {
            return Err(FamilyError::ParameterViolation(format!(
                "E half-width {:.4e} is smaller than (1+C)δ = {:.4e}",
                self.outer(),
                (1.0 + self.constant * cond) * self.delta
            )));
        }
        let d = self.dim();
        // No disc meets a lattice translate of itself within reach of a
        // local center plaque.
        for m in small_vectors(d, 2) {
            if m.iter().all(|&x| x == 0) {
                continue;
            }
            let v: Vec<f64> = m.iter().map(|&x| x as f64).collect();
            let (u, c, s) = (dot(&self.row_u, &v), dot(&self.row_c, &v), dot(&self.row_s, &v));
            if u.abs() <= self.epsilon && s.abs() <= self.epsilon && c.abs() < 2.0 * self.system.r0() {
                return Err(FamilyError::ParameterViolation(format!(
                    "disc of size ε = {} is not embedded (lattice vector {m:?})",
                    self.epsilon
                )));
            }
        }
        if let LatticeMode::Column { .. } = self.mode {
            if 1.0 / self.n as f64 >= 2.0 * self.delta {
                return Err(FamilyError::CoverageFailure(format!(
                    "level spacing 1/{} is not below 2δ",
                    self.n
                )));
            }
        } else {
            // Distinct discs must not share a plane.
            let reach = self.epsilon * self.n as f64;
            for r in self.lattice_vectors_within(reach, reach, 1e-9) {
                if r.iter().all(|&x| x == 0) {
                    continue;
                }
                return Err(FamilyError::ParameterViolation(format!(
                    "discs at sites differing by {r:?} overlap"
                )));
            }
        }
        Ok(())
    }

    pub fn system(&self) -> &AffinePHSystem {
        &self.system
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn lattice(&self) -> u32 {
        self.n
    }

    pub fn mode(&self) -> LatticeMode {
        self.mode
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn lambda_u(&self) -> f64 {
        self.lambda_u
    }

    pub fn lambda_s(&self) -> f64 {
        self.lambda_s
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    /// Half-width of the chart box of `D`.
    pub fn half_width(&self) -> f64 {
        self.epsilon / 2.0
    }

    /// Half-width of `E`.
    pub fn outer(&self) -> f64 {
        self.epsilon / 2.0
    }

    /// Half-width of `B`.
    pub fn inner(&self) -> f64 {
        self.delta
    }

    pub fn num_discs(&self) -> usize {
        (self.n as usize).pow(self.dim() as u32)
    }

    pub fn site(&self, index: usize) -> Vec<i64> {
        let n = self.n as usize;
        let mut rest = index;
        (0..self.dim())
            .map(|_| {
                let k = rest % n;
                rest /= n;
                k as i64
            })
            .collect()
    }

    pub fn index(&self, site: &[i64]) -> usize {
        let n = self.n as i64;
        site.iter().rev().fold(0usize, |acc, &k| acc * n as usize + k.rem_euclid(n) as usize)
    }

    /// Height of a site's column in `[0, 1/n)`.
    pub fn height(&self, site: &[i64]) -> f64 {
        match self.mode {
            LatticeMode::Free => 0.0,
            LatticeMode::Column { axis } => {
                let n = self.n as i64;
                let mut code = 0i64;
                for (i, &k) in site.iter().enumerate().rev() {
                    if i != axis {
                        code = code * n + k.rem_euclid(n);
                    }
                }
                let nf = self.n as f64;
                code as f64 / nf.powi(self.dim() as i32)
            }
        }
    }

    /// Center of disc `index` as an ambient vector, before reduction mod 1.
    fn center_vector(&self, site: &[i64]) -> DVector<f64> {
        let nf = self.n as f64;
        let h = self.height(site);
        DVector::from_iterator(self.dim(), site.iter().map(|&k| k.rem_euclid(self.n as i64) as f64 / nf)) + &self.e_c * h
    }

    pub fn center(&self, index: usize) -> TorusPoint {
        TorusPoint::from_vector(&self.center_vector(&self.site(index)))
    }

    pub fn disc(&self, index: usize) -> AdaptedDisc {
        AdaptedDisc {
            index,
            site: self.site(index),
            center: self.center(index),
            half_width: self.half_width(),
            inner: self.inner(),
            outer: self.outer(),
        }
    }

    pub fn point(&self, p: ChartPoint) -> TorusPoint {
        let c = self.center_vector(&self.site(p.disc));
        TorusPoint::from_vector(&(c + &self.e_u * p.u + &self.e_s * p.s))
    }

    /// Adapted coordinates `(u, c, s)` of every lift of `x` relative to the
    /// center of `disc` that lies within `(reach_us, reach_c)`.
    fn lifts(&self, disc: usize, x: &TorusPoint, reach_us: f64, reach_c: f64) -> Vec<(f64, f64, f64)> {
        let c = self.center(disc);
        let w: Vec<f64> = c
            .coords()
            .iter()
            .zip(x.coords())
            .map(|(a, b)| wrap_centered(b - a))
            .collect();
        let mut out = Vec::new();
        for m in small_vectors(self.dim(), 1) {
            let v: Vec<f64> = w.iter().zip(&m).map(|(a, &b)| a + b as f64).collect();
            let (u, cc, s) = (dot(&self.row_u, &v), dot(&self.row_c, &v), dot(&self.row_s, &v));
            if u.abs() <= reach_us && s.abs() <= reach_us && cc.abs() < reach_c {
                out.push((u, cc, s));
            }
        }
        out
    }

    /// Projection along local center plaques of radius `r` onto `D_disc`.
    pub fn proj_disc(&self, disc: usize, x: &TorusPoint, r: f64) -> Result<ChartPoint, FamilyError> {
        let lifts = self.lifts(disc, x, self.half_width() + 1e-12, r);
        let best = lifts
            .into_iter()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .ok_or(FamilyError::NotInSaturation { disc })?;
        Ok(ChartPoint { disc, u: best.0, s: best.2 })
    }

    /// Center offset of `x` from `D_disc` together with its projection.
    pub fn proj_with_offset(&self, disc: usize, x: &TorusPoint, r: f64) -> Option<(ChartPoint, f64)> {
        self.lifts(disc, x, self.half_width() + 1e-12, r)
            .into_iter()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(u, c, s)| (ChartPoint { disc, u, s }, c))
    }

    /// Number of crossings of `W^c_r(x)` with `E_disc`.
    pub fn crossings(&self, disc: usize, x: &TorusPoint, r: f64) -> usize {
        self.lifts(disc, x, self.outer(), r).len()
    }

    /// `Ψ_x(y) = (y^u, y^s)`: the points of the unstable and stable slices
    /// through `x` that bracket to `y`.
    pub fn disc_coordinates(&self, x: ChartPoint, y: ChartPoint, r: f64) -> Result<(ChartPoint, ChartPoint), FamilyError> {
        let disc = x.disc;
        let w = self.half_width();
        let inside = |p: ChartPoint| p.disc == disc && p.u.abs() <= w && p.s.abs() <= w;
        if !inside(x) || !inside(y) || (x.u - y.u).abs() > r || (x.s - y.s).abs() > r {
            return Err(FamilyError::OutOfChart { disc });
        }
        Ok((ChartPoint { disc, u: y.u, s: x.s }, ChartPoint { disc, u: x.u, s: y.s }))
    }

    /// `⟨x, y⟩_D`: unstable coordinate of `x`, stable coordinate of `y`.
    pub fn bracket(&self, x: ChartPoint, y: ChartPoint) -> Result<ChartPoint, FamilyError> {
        if x.disc != y.disc {
            return Err(FamilyError::OutOfChart { disc: y.disc });
        }
        Ok(ChartPoint { disc: x.disc, u: x.u, s: y.s })
    }

    /// Integer vectors `r` whose chart offset `P(r/n)` (without translation)
    /// lies in the given window; the center window only applies in free mode.
    fn lattice_vectors_within(&self, reach_u: f64, reach_s: f64, reach_c: f64) -> Vec<Vec<i64>> {
        let d = self.dim();
        let nf = self.n as f64;
        let basis = self.system.splitting().basis();
        let axis = match self.mode {
            LatticeMode::Column { axis } => Some(axis),
            LatticeMode::Free => None,
        };
        let reach = [reach_u / nf, reach_c / nf, reach_s / nf];
        let bound: Vec<i64> = (0..d)
            .map(|i| {
                if Some(i) == axis {
                    return 0;
                }
                let b = basis[(i, 0)].abs() * reach[0]
                    + basis[(i, d - 1)].abs() * reach[2]
                    + if axis.is_none() { (1..d - 1).map(|j| basis[(i, j)].abs()).sum::<f64>() * reach[1] } else { 0.0 };
                (b * nf).ceil() as i64 + 1
            })
            .collect();
        let mut out = Vec::new();
        for r in boxed_vectors(&bound) {
            let v: Vec<f64> = r.iter().map(|&x| x as f64 / nf).collect();
            let (u, c, s) = (dot(&self.row_u, &v), dot(&self.row_c, &v), dot(&self.row_s, &v));
            let center_ok = axis.is_some() || c.abs() < reach_c;
            if u.abs() <= reach_u && s.abs() <= reach_s && center_ok {
                out.push(r);
            }
        }
        out
    }

    /// Chart translation induced by the site offset `r`: `P(r/n + t)`.
    pub fn class_offsets(&self, shift: &[i64]) -> (f64, f64, f64) {
        let nf = self.n as f64;
        let t = self.system.translation();
        let mut v: Vec<f64> = shift.iter().enumerate().map(|(i, &x)| x as f64 / nf + wrap_centered(t[i])).collect();
        if let LatticeMode::Column { axis } = self.mode {
            v[axis] = 0.0;
        }
        (dot(&self.row_u, &v), dot(&self.row_c, &v), dot(&self.row_s, &v))
    }

    /// Transition classes with chart offsets `|o_u| <= reach_u` and
    /// `|o_s| <= reach_s`. In free mode the center offset must also be
    /// below `δ`.
    pub fn transition_classes(&self, reach_u: f64, reach_s: f64) -> Vec<TransitionClass> {
        let nf = self.n as f64;
        let shift_bound = |reach: f64| reach + 1.0 / nf;
        let mut out: Vec<TransitionClass> = Vec::new();
        // Translation moves the window; enumerate with slack and filter.
        let (tu, tc, ts) = self.class_offsets(&vec![0; self.dim()]);
        let cands = self.lattice_vectors_within(
            shift_bound(reach_u + tu.abs()),
            shift_bound(reach_s + ts.abs()),
            self.delta + tc.abs() + 1.0 / nf,
        );
        for r in cands {
            let (ou, oc, os) = self.class_offsets(&r);
            if ou.abs() > reach_u || os.abs() > reach_s {
                continue;
            }
            if self.mode == LatticeMode::Free && oc.abs() >= self.delta {
                continue;
            }
            out.push(TransitionClass { shift: r, offset_u: ou, offset_s: os });
        }
        out.sort_by(|a, b| {
            let ka = a.offset_u.abs().max(a.offset_s.abs());
            let kb = b.offset_u.abs().max(b.offset_s.abs());
            ka.total_cmp(&kb).then_with(|| a.shift.cmp(&b.shift))
        });
        out
    }

    /// Concrete discs reached from `disc` through `class`, each with the
    /// center offset of `f(D_disc)` from it; only offsets below `window`.
    pub fn targets(&self, disc: usize, class: &TransitionClass, window: f64) -> Vec<(usize, f64)> {
        let k = self.site(disc);
        let lk = self.system.apply_int(&k);
        let mut base: Vec<i64> = lk.iter().zip(&class.shift).map(|(a, b)| a - b).collect();
        match self.mode {
            LatticeMode::Free => {
                let (_, oc, _) = self.class_offsets(&class.shift);
                if oc.abs() < window {
                    vec![(self.index(&base), oc)]
                } else {
                    Vec::new()
                }
            }
            LatticeMode::Column { axis } => {
                let nf = self.n as f64;
                let lc = self.system.matrix()[(axis, axis)];
                let t = self.system.translation()[axis];
                // Height of f(p_k) along the axis, measured in level units.
                let image = lk[axis] as f64 / nf + lc * self.height(&k) + t;
                let h_target = {
                    base[axis] = 0;
                    self.height(&base)
                };
                let center = ((image - h_target) * nf).round() as i64;
                let mut out = Vec::new();
                for level in center - 1..=center + 1 {
                    let off = wrap_centered(image - level as f64 / nf - h_target);
                    if off.abs() < window {
                        base[axis] = level;
                        out.push((self.index(&base), off));
                    }
                }
                out.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
                out.dedup_by_key(|x| x.0);
                out
            }
        }
    }

    /// Discs `k` such that `disc` is among [`Self::targets`] of `k`.
    pub fn sources(&self, disc: usize, class: &TransitionClass, window: f64) -> Vec<(usize, f64)> {
        let k = self.site(disc);
        let plus: Vec<i64> = k.iter().zip(&class.shift).map(|(a, b)| a + b).collect();
        let mut pre = self.system.apply_inverse_int(&plus);
        match self.mode {
            LatticeMode::Free => {
                let src = self.index(&pre);
                self.targets(src, class, window).into_iter().filter(|t| t.0 == disc).map(|t| (src, t.1)).collect()
            }
            LatticeMode::Column { axis } => {
                let n = self.n as i64;
                let lc = self.system.matrix()[(axis, axis)].round() as i64;
                let mut out = Vec::new();
                // The level of the source is free; try those whose image
                // height lands near the target level.
                let nf = self.n as f64;
                pre[axis] = 0;
                let h_src = self.height(&pre);
                let t = self.system.translation()[axis];
                let target_height = k[axis] as f64 / nf + self.height(&k);
                let guess = ((target_height - lc as f64 * h_src - t) * nf).round() as i64 * lc;
                for level in guess - 2..=guess + 2 {
                    pre[axis] = level.rem_euclid(n);
                    let src = self.index(&pre);
                    for (tg, off) in self.targets(src, class, window) {
                        if tg == disc {
                            out.push((src, off));
                        }
                    }
                }
                out.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
                out.dedup_by_key(|x| x.0);
                out
            }
        }
    }

    /// Checks a grid of the given pitch: every point must lie within center
    /// distance `δ` of some disc, at a chart position accepted by `inside`.
    /// `extent` bounds `|u|` and `|s|` on the accepted set.
    ///
    /// In column mode the check runs over the transverse grid and treats
    /// each column of levels exactly, which accounts for the full grid. In
    /// free mode the family is invariant under `(1/n) Z^d`, and only a
    /// fundamental cell is evaluated.
    pub fn covering_check(&self, pitch: f64, extent: f64, inside: impl Fn(f64, f64) -> bool) -> CoverReport {
        let d = self.dim();
        let nf = self.n as f64;
        let per_axis = (1.0 / pitch).ceil() as u64;
        let reach = extent * nf;
        let mut uncovered = 0u64;
        let mut evaluated = 0u64;
        let mut first = None;
        // Offsets from the base site, in chart coordinates per unit of z.
        let (free_axes, axis): (Vec<usize>, Option<usize>) = match self.mode {
            LatticeMode::Column { axis } => ((0..d).filter(|&i| i != axis).collect(), Some(axis)),
            LatticeMode::Free => ((0..d).collect(), None),
        };
        let windows = self.neighbour_window(reach, axis);
        let steps = match self.mode {
            LatticeMode::Column { .. } => per_axis,
            LatticeMode::Free => ((1.0 / nf) / pitch).ceil() as u64,
        };
        let levels_ok = axis.is_none() || 1.0 / nf < 2.0 * self.delta;
        let k = free_axes.len();
        let mut idx = vec![0u64; k];
        let mut z = vec![0.0; k];
        let mut fr = vec![0.0; k];
        'grid: loop {
            let in_range = idx.iter().all(|&i| (i as f64 * pitch) < 1.0) || axis.is_none();
            if in_range {
                evaluated += 1;
                for t in 0..k {
                    z[t] = idx[t] as f64 * pitch * nf;
                    fr[t] = z[t] - z[t].floor();
                }
                let hit = windows.iter().any(|j| {
                    let (mut u, mut s, mut c) = (0.0, 0.0, 0.0);
                    for (t, &i) in free_axes.iter().enumerate() {
                        let v = (fr[t] - j[t] as f64) / nf;
                        u += self.row_u[i] * v;
                        s += self.row_s[i] * v;
                        c += self.row_c[i] * v;
                    }
                    (axis.is_some() || c.abs() < self.delta) && inside(u, s)
                });
                if !(hit && levels_ok) {
                    uncovered += if axis.is_some() { per_axis } else { 1 };
                    if first.is_none() {
                        first = Some(idx.iter().map(|&i| i as f64 * pitch).collect());
                    }
                }
            }
            for i in idx.iter_mut() {
                *i += 1;
                if *i < steps {
                    continue 'grid;
                }
                *i = 0;
            }
            break;
        }
        let points = match self.mode {
            LatticeMode::Column { .. } => per_axis.pow(d as u32),
            LatticeMode::Free => evaluated,
        };
        CoverReport { pitch, points, evaluated, uncovered, first_uncovered: first }
    }

    /// Integer site offsets (in units of sites) that can reach a point
    /// within chart distance `reach` (in units of `1/n`).
    fn neighbour_window(&self, reach: f64, axis: Option<usize>) -> Vec<Vec<i64>> {
        let d = self.dim();
        let basis = self.system.splitting().basis();
        let bound: Vec<i64> = (0..d)
            .filter(|&i| Some(i) != axis)
            .map(|i| {
                let b: f64 = match axis {
                    Some(_) => basis[(i, 0)].abs() * reach + basis[(i, d - 1)].abs() * reach,
                    None => (0..d).map(|j| basis[(i, j)].abs()).sum::<f64>() * reach.max(self.delta * self.n as f64),
                };
                b.ceil() as i64 + 1
            })
            .collect();
        boxed_vectors(&bound)
    }

    /// Exhaustive covering check over the whole grid, for small lattices.
    pub fn covering_check_brute(&self, pitch: f64, inside: impl Fn(f64, f64) -> bool) -> CoverReport {
        let d = self.dim();
        let per_axis = (1.0 / pitch).ceil() as u64;
        let total = per_axis.pow(d as u32);
        let mut uncovered = 0;
        let mut first = None;
        let reach = self.half_width();
        for flat in 0..total {
            let mut rest = flat;
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let i = rest % per_axis;
                    rest /= per_axis;
                    i as f64 * pitch
                })
                .collect();
            let p = TorusPoint::new(x.clone());
            let hit = (0..self.num_discs()).any(|k| {
                self.lifts(k, &p, reach, self.delta)
                    .iter()
                    .any(|&(u, _, s)| inside(u, s))
            });
            if !hit {
                uncovered += 1;
                if first.is_none() {
                    first = Some(x);
                }
            }
        }
        CoverReport { pitch, points: total, evaluated: total, uncovered, first_uncovered: first }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All integer vectors in `[-b_i, b_i]`.
fn boxed_vectors(bound: &[i64]) -> Vec<Vec<i64>> {
    let mut out = vec![Vec::new()];
    for &b in bound {
        let mut next = Vec::with_capacity(out.len() * (2 * b as usize + 1));
        for v in &out {
            for x in -b..=b {
                let mut w = v.clone();
                w.push(x);
                next.push(w);
            }
        }
        out = next;
    }
    out
}

fn small_vectors(d: usize, b: i64) -> Vec<Vec<i64>> {
    boxed_vectors(&vec![b; d])
}

fn detect_mode(system: &AffinePHSystem) -> LatticeMode {
    let dims = system.dims();
    let d = system.dim();
    if dims.c != 1 {
        return LatticeMode::Free;
    }
    let ec = system.splitting().basis_vector(1);
    let inv = system.splitting().inverse();
    for axis in 0..d {
        let unit = (0..d).all(|i| if i == axis { ec[i].abs() == 1.0 } else { ec[i] == 0.0 });
        let complement = inv[(0, axis)] == 0.0 && inv[(d - 1, axis)] == 0.0;
        let l = system.matrix_int();
        let block = (0..d).all(|i| i == axis || (l[i][axis] == 0 && l[axis][i] == 0));
        if unit && complement && block {
            return LatticeMode::Column { axis };
        }
    }
    LatticeMode::Free
}

/// Sup-norm covering radius of the unit-scale site lattice in chart
/// coordinates: the transverse lattice in column mode, the full lattice
/// (with the center measured in the same norm) in free mode.
pub fn covering_radius(system: &AffinePHSystem, mode: LatticeMode) -> f64 {
    let d = system.dim();
    let inv = system.splitting().inverse();
    let (coords, gens): (Vec<usize>, Vec<usize>) = match mode {
        LatticeMode::Column { axis } => (vec![0, d - 1], (0..d).filter(|&i| i != axis).collect()),
        LatticeMode::Free => ((0..d).collect(), (0..d).collect()),
    };
    let m = coords.len();
    let g = DMatrix::from_fn(m, gens.len(), |i, j| inv[(coords[i], gens[j])]);
    // Sample the fundamental cell of the generators and find the farthest
    // point from the lattice.
    let steps: usize = if m == 2 { 240 } else { 40 };
    let near = boxed_vectors(&vec![3; gens.len()]);
    let near_pts: Vec<DVector<f64>> = near
        .iter()
        .map(|z| &g * DVector::from_iterator(z.len(), z.iter().map(|&x| x as f64)))
        .collect();
    let mut worst: f64 = 0.0;
    let total = steps.pow(gens.len() as u32);
    for flat in 0..total {
        let mut rest = flat;
        let frac = DVector::from_iterator(
            gens.len(),
            (0..gens.len()).map(|_| {
                let i = rest % steps;
                rest /= steps;
                (i as f64 + 0.5) / steps as f64
            }),
        );
        let p = &g * frac;
        let best = near_pts
            .iter()
            .map(|q| (&p - q).amax())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    // Sampling error is at most half a cell diagonal in sup norm.
    let cell = g.column_iter().map(|c| c.amax()).sum::<f64>() / steps as f64;
    worst + cell
}
