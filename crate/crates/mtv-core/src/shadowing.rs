//! Plaque shadowing of pseudo-orbits.
//!
//! For an affine map the shadow is found exactly: with jumps
//! `e_n = x_{n+1} - f(x_n)` the unstable correction is summed from the
//! future and the stable correction from the past, while the center
//! component is left alone. The resulting sequence satisfies
//! `f(W^c(y_n)) ⊂ W^c(y_{n+1})` on the whole window.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::torus_model::{AffinePHSystem, TorusPoint};

/// Decay residual accepted for the correction series.
pub const SERIES_TOL: f64 = 1e-12;
/// Slack used when checking a certificate against its bound.
pub const CERTIFICATE_TOL: f64 = 1e-10;
/// Multiplier in front of the rate term of the shadowing constant.
pub const KAPPA: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShadowError {
    #[error("defect {defect:.3e} exceeds the admissible {limit:.3e}")]
    DefectTooLarge { defect: f64, limit: f64 },
    #[error("correction series did not converge (residual {residual:.3e})")]
    NonConvergent { residual: f64 },
    #[error("pseudo-orbits have different kinds or lengths")]
    KindMismatch,
    #[error("pseudo-orbit is empty")]
    Empty,
}

/// Which part of a bi-infinite orbit a finite window represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrbitKind {
    Forward,
    Backward,
    /// Window of a bi-infinite sequence whose time 0 sits at `zero`.
    BiInfinite { zero: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoOrbit {
    pub points: Vec<TorusPoint>,
    pub kind: OrbitKind,
}

impl PseudoOrbit {
    pub fn new(points: Vec<TorusPoint>, kind: OrbitKind) -> Self {
        Self { points, kind }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Reads an array of coordinate arrays; the window is read as forward.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: Vec<Vec<f64>> = serde_json::from_str(text)?;
        Ok(Self::new(raw.into_iter().map(TorusPoint::new).collect(), OrbitKind::Forward))
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<&[f64]> = self.points.iter().map(|p| p.coords()).collect();
        serde_json::to_string(&raw).expect("coordinates serialize")
    }

    /// Orbit segment of a point.
    pub fn orbit(system: &AffinePHSystem, start: TorusPoint, len: usize) -> Self {
        let mut points = Vec::with_capacity(len);
        let mut x = start;
        for _ in 0..len {
            let next = system.apply(&x);
            points.push(x);
            x = next;
        }
        Self::new(points, OrbitKind::Forward)
    }
}

/// `max_n d(f(x_n), x_{n+1})`.
pub fn defect(system: &AffinePHSystem, orbit: &PseudoOrbit) -> f64 {
    orbit
        .points
        .windows(2)
        .map(|w| system.apply(&w[0]).distance(&w[1]))
        .fold(0.0, f64::max)
}

/// Shadowing constant `C` such that every `η`-pseudo-orbit is
/// `Cη`-plaque-shadowed.
///
/// The rate part is `max(1/(1-λ_s), λ_u/(λ_u-1))`; it is multiplied by
/// `KAPPA` times the condition number of the adapted basis, which is one
/// when the bundles are orthogonal.
pub fn shadowing_constant(system: &AffinePHSystem) -> f64 {
    let r = system.rates();
    let rate = (1.0 / (1.0 - r.lambda_s)).max(r.lambda_u / (r.lambda_u - 1.0));
    KAPPA * system.splitting().condition().max(1.0) * rate
}

/// Largest defect for which shadows stay inside the local product
/// structure: `r0 / (4C)`.
pub fn delta0(system: &AffinePHSystem) -> f64 {
    system.r0() / (4.0 * shadowing_constant(system))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadowingCertificate {
    pub defect: f64,
    pub constant: f64,
    /// `C · defect`.
    pub bound: f64,
    /// Largest `d(x_n, y_n)` over the window.
    pub max_distance: f64,
    /// Largest transverse part of `f(y_n) - y_{n+1}`.
    pub plaque_residual: f64,
    pub length: usize,
}

impl ShadowingCertificate {
    pub fn holds(&self) -> bool {
        self.max_distance <= self.bound + CERTIFICATE_TOL && self.plaque_residual <= CERTIFICATE_TOL
    }
}

#[derive(Clone, Debug)]
pub struct Shadow {
    pub points: Vec<TorusPoint>,
    pub kind: OrbitKind,
    pub certificate: ShadowingCertificate,
}

/// Transverse part (unstable plus stable) of a vector.
pub fn transverse_norm(system: &AffinePHSystem, v: &DVector<f64>) -> f64 {
    let y = system.splitting().coordinates(v);
    let mut w = y.clone();
    for i in system.splitting().center_range() {
        w[i] = 0.0;
    }
    system.splitting().vector(&w).norm()
}

/// Plaque shadow of a pseudo-orbit with defect at most `delta <= δ0`.
pub fn shadow(system: &AffinePHSystem, orbit: &PseudoOrbit, delta: f64) -> Result<Shadow, ShadowError> {
    if orbit.is_empty() {
        return Err(ShadowError::Empty);
    }
    let limit = delta0(system);
    let eta = defect(system, orbit);
    if eta > delta || delta > limit {
        return Err(ShadowError::DefectTooLarge {
            defect: eta.max(delta),
            limit: limit.min(delta),
        });
    }
    let sp = system.splitting();
    let dims = system.dims();
    let a = system.adapted_matrix();
    let (ur, sr) = (sp.unstable_range(), sp.stable_range());
    let a_u = a.view((ur.start, ur.start), (dims.u, dims.u)).into_owned();
    let a_s = a.view((sr.start, sr.start), (dims.s, dims.s)).into_owned();
    let a_u_inv = a_u.try_inverse().ok_or(ShadowError::NonConvergent { residual: f64::INFINITY })?;
    let n = orbit.len();
    // Jumps in adapted coordinates.
    let jumps: Vec<DVector<f64>> = orbit
        .points
        .windows(2)
        .map(|w| sp.coordinates(&system.apply(&w[0]).displacement_to(&w[1])))
        .collect();
    let part = |y: &DVector<f64>, r: &std::ops::Range<usize>| DVector::from_iterator(r.len(), r.clone().map(|i| y[i]));
    let mut wu = vec![DVector::zeros(dims.u); n];
    for k in (0..n.saturating_sub(1)).rev() {
        wu[k] = &a_u_inv * (&wu[k + 1] + part(&jumps[k], &ur));
    }
    let mut ws = vec![DVector::zeros(dims.s); n];
    for k in 0..n.saturating_sub(1) {
        ws[k + 1] = &a_s * &ws[k] - part(&jumps[k], &sr);
    }
    let mut points = Vec::with_capacity(n);
    let mut max_distance: f64 = 0.0;
    for k in 0..n {
        let mut y = DVector::zeros(dims.total());
        for (j, i) in ur.clone().enumerate() {
            y[i] = wu[k][j];
        }
        for (j, i) in sr.clone().enumerate() {
            y[i] = ws[k][j];
        }
        let w = sp.vector(&y);
        max_distance = max_distance.max(w.norm());
        points.push(orbit.points[k].translate(&w));
    }
    let plaque_residual = points
        .windows(2)
        .map(|w| transverse_norm(system, &system.apply(&w[0]).displacement_to(&w[1])))
        .fold(0.0, f64::max);
    if !plaque_residual.is_finite() || plaque_residual > SERIES_TOL.max(1e3 * f64::EPSILON * max_distance.max(1.0)) {
        return Err(ShadowError::NonConvergent { residual: plaque_residual });
    }
    let constant = shadowing_constant(system);
    Ok(Shadow {
        points,
        kind: orbit.kind,
        certificate: ShadowingCertificate {
            defect: eta,
            constant,
            bound: constant * eta,
            max_distance,
            plaque_residual,
            length: n,
        },
    })
}

/// Evidence that two close pseudo-orbits follow the same center plaques.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansiveWitness {
    /// Largest `d(x_n, y_n)`.
    pub max_distance: f64,
    /// Transverse gap between `x_0` and `y_0`.
    pub gap_at_zero: f64,
    /// What the gap may be if the orbits stay `ε`-close on the window.
    pub allowed_gap: f64,
    pub stays_close: bool,
    pub same_plaque: bool,
}

/// Checks the plaque expansivity statement on finite windows: if the two
/// pseudo-orbits stay `epsilon`-close, the transverse gap at time zero must
/// have decayed geometrically from both ends of the window.
pub fn plaque_expansive_witness(
    system: &AffinePHSystem,
    x: &PseudoOrbit,
    y: &PseudoOrbit,
    epsilon: f64,
) -> Result<ExpansiveWitness, ShadowError> {
    if x.kind != y.kind || x.len() != y.len() {
        return Err(ShadowError::KindMismatch);
    }
    if x.is_empty() {
        return Err(ShadowError::Empty);
    }
    let zero = match x.kind {
        OrbitKind::BiInfinite { zero } => zero.min(x.len() - 1),
        OrbitKind::Forward => 0,
        OrbitKind::Backward => x.len() - 1,
    };
    let max_distance = x
        .points
        .iter()
        .zip(&y.points)
        .map(|(a, b)| a.distance(b))
        .fold(0.0, f64::max);
    let gap_at_zero = transverse_norm(system, &x.points[zero].displacement_to(&y.points[zero]));
    let r = system.rates();
    let k = r.lambda_s.max(1.0 / r.lambda_u);
    let reach = zero.min(x.len() - 1 - zero) as i32;
    let allowed_gap = 2.0 * shadowing_constant(system) * epsilon * k.powi(reach);
    let stays_close = max_distance <= epsilon;
    Ok(ExpansiveWitness {
        max_distance,
        gap_at_zero,
        allowed_gap,
        stays_close,
        same_plaque: !stays_close || gap_at_zero <= allowed_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(system: &AffinePHSystem, seed: u64, len: usize, eta: f64) -> PseudoOrbit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = system.dim();
        let mut x = TorusPoint::new((0..d).map(|_| rng.gen()).collect());
        let mut pts = vec![x.clone()];
        for _ in 1..len {
            let mut v = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            v *= rng.gen_range(0.0..eta) / v.norm();
            x = system.apply(&x).translate(&v);
            pts.push(x.clone());
        }
        PseudoOrbit::new(pts, OrbitKind::Forward)
    }

    #[test]
    fn constant_for_cat() {
        let f = AffinePHSystem::cat_id3();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((shadowing_constant(&f) - 2.0 * phi).abs() < 1e-9);
        assert!((delta0(&f) - 0.125 / (8.0 * phi)).abs() < 1e-9);
    }

    #[test]
    fn true_orbit_shadows_itself() {
        let f = AffinePHSystem::skew3(0.41421356);
        let orbit = PseudoOrbit::orbit(&f, TorusPoint::new(vec![0.1, 0.2, 0.3]), 20);
        assert!(defect(&f, &orbit) < 1e-14);
        let sh = shadow(&f, &orbit, delta0(&f)).unwrap();
        assert!(sh.certificate.max_distance < 1e-13);
    }

    #[test]
    fn too_large_defect() {
        let f = AffinePHSystem::cat_id3();
        let orbit = perturbed(&f, 3, 10, 0.05);
        let eta = defect(&f, &orbit);
        assert!(eta > delta0(&f));
        assert!(matches!(
            shadow(&f, &orbit, delta0(&f)),
            Err(ShadowError::DefectTooLarge { .. })
        ));
    }

    #[test]
    fn center_jumps_are_not_corrected() {
        // A pure center jump keeps every point on its own center plaque.
        let f = AffinePHSystem::cat_id3();
        let x0 = TorusPoint::new(vec![0.2, 0.4, 0.5]);
        let x1 = f.apply(&x0).translate(&DVector::from_vec(vec![0.0, 0.0, 1e-3]));
        let orbit = PseudoOrbit::new(vec![x0.clone(), x1.clone()], OrbitKind::Forward);
        let sh = shadow(&f, &orbit, delta0(&f)).unwrap();
        assert!(sh.points[0].distance(&x0) < 1e-15);
        assert!(sh.points[1].distance(&x1) < 1e-15);
    }

    #[test]
    fn expansive_witness_kinds() {
        let f = AffinePHSystem::cat_id3();
        let a = PseudoOrbit::orbit(&f, TorusPoint::origin(3), 5);
        let mut b = a.clone();
        b.kind = OrbitKind::BiInfinite { zero: 2 };
        assert!(matches!(
            plaque_expansive_witness(&f, &a, &b, 0.01),
            Err(ShadowError::KindMismatch)
        ));
    }

    #[test]
    fn expansive_witness_center_offset() {
        let f = AffinePHSystem::cat_id3();
        let a = PseudoOrbit::orbit(&f, TorusPoint::new(vec![0.3, 0.3, 0.3]), 21);
        let b = PseudoOrbit::orbit(&f, TorusPoint::new(vec![0.3, 0.3, 0.301]), 21);
        let mut a = a;
        let mut b = b;
        a.kind = OrbitKind::BiInfinite { zero: 10 };
        b.kind = OrbitKind::BiInfinite { zero: 10 };
        let w = plaque_expansive_witness(&f, &a, &b, 0.01).unwrap();
        assert!(w.stays_close && w.same_plaque);
        assert!(w.gap_at_zero < 1e-14);
    }

    #[test]
    fn json_round_trip() {
        let f = AffinePHSystem::cat2();
        let orbit = PseudoOrbit::orbit(&f, TorusPoint::new(vec![0.1, 0.7]), 4);
        let back = PseudoOrbit::from_json(&orbit.to_json()).unwrap();
        assert_eq!(back, orbit);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn shadow_within_bound(seed in 0u64..10_000, len in 2usize..60, frac in 0.01f64..1.0) {
            let f = AffinePHSystem::skew3(0.41421356);
            let eta = frac * delta0(&f);
            let orbit = perturbed(&f, seed, len, eta);
            let sh = shadow(&f, &orbit, delta0(&f)).unwrap();
            prop_assert!(sh.certificate.holds(), "{:?}", sh.certificate);
        }

        #[test]
        fn shadow_is_plaque_orbit(seed in 0u64..10_000) {
            let f = AffinePHSystem::cat_id3();
            let orbit = perturbed(&f, seed, 30, 0.5 * delta0(&f));
            let sh = shadow(&f, &orbit, delta0(&f)).unwrap();
            for w in sh.points.windows(2) {
                let v = f.apply(&w[0]).displacement_to(&w[1]);
                prop_assert!(transverse_norm(&f, &v) < 1e-12);
            }
        }
    }
}
