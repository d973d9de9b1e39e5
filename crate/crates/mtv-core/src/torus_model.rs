//! Affine maps of the flat torus `T^d = R^d / Z^d` with a partially
//! hyperbolic splitting `E^u ⊕ E^c ⊕ E^s`.
//!
//! Points are stored by their representative in `[0,1)^d`. Displacements
//! between points always use the nearest lift, so the quotient metric is the
//! Euclidean norm of [`TorusPoint::displacement_to`].

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default radius of the local product structure.
pub const DEFAULT_R0: f64 = 0.125;

/// Entries of a computed eigenbasis smaller than this are set to zero.
const SNAP: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TorusError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("system is not partially hyperbolic for the requested dimensions: {0}")]
    NotPartiallyHyperbolic(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("points are {distance:.3e} apart but the bracket radius is {radius:.3e}")]
    DistanceTooLarge { distance: f64, radius: f64 },
    #[error("local plaques do not intersect")]
    NoIntersection,
}

/// Wrap a real number into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Representative of `x` modulo 1 in `[-1/2, 1/2]`.
pub fn wrap_centered(x: f64) -> f64 {
    x - x.round()
}

/// A point of the torus, stored in `[0,1)^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TorusPoint {
    coords: Vec<f64>,
}

impl TorusPoint {
    pub fn new(coords: Vec<f64>) -> Self {
        Self {
            coords: coords.into_iter().map(wrap_unit).collect(),
        }
    }

    pub fn origin(dim: usize) -> Self {
        Self {
            coords: vec![0.0; dim],
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self::new(v.iter().copied().collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coords)
    }

    /// Nearest lift of `other - self`.
    pub fn displacement_to(&self, other: &TorusPoint) -> DVector<f64> {
        debug_assert_eq!(self.dim(), other.dim());
        DVector::from_iterator(
            self.dim(),
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| wrap_centered(b - a)),
        )
    }

    /// Flat quotient distance.
    pub fn distance(&self, other: &TorusPoint) -> f64 {
        self.displacement_to(other).norm()
    }

    pub fn translate(&self, v: &DVector<f64>) -> TorusPoint {
        TorusPoint::new(self.coords.iter().zip(v.iter()).map(|(a, b)| a + b).collect())
    }
}

/// Dimensions of the unstable, center and stable bundles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub u: usize,
    pub c: usize,
    pub s: usize,
}

impl Dims {
    pub fn total(&self) -> usize {
        self.u + self.c + self.s
    }
}

/// JSON description of a system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub matrix: Vec<Vec<f64>>,
    pub translation: Vec<f64>,
    pub dims: Dims,
    #[serde(default = "default_r0")]
    pub r0: f64,
}

fn default_r0() -> f64 {
    DEFAULT_R0
}

/// Contraction and expansion rates of the splitting.
///
/// `lambda_s` bounds `|Lv|` from above on `E^s`, `lambda_u` from below on
/// `E^u`, and the center block lies between `lambda_c_minus` and
/// `lambda_c_plus`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub lambda_s: f64,
    pub lambda_c_minus: f64,
    pub lambda_c_plus: f64,
    pub lambda_u: f64,
}

/// Adapted basis: columns are unstable vectors, then center, then stable.
/// Each bundle's columns are orthonormal.
#[derive(Clone, Debug)]
pub struct Splitting {
    dims: Dims,
    basis: DMatrix<f64>,
    inverse: DMatrix<f64>,
}

impl Splitting {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Coordinates of `v` in the adapted basis.
    pub fn coordinates(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.inverse * v
    }

    /// Ambient vector with adapted coordinates `y`.
    pub fn vector(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.basis * y
    }

    pub fn unstable_range(&self) -> std::ops::Range<usize> {
        0..self.dims.u
    }

    pub fn center_range(&self) -> std::ops::Range<usize> {
        self.dims.u..self.dims.u + self.dims.c
    }

    pub fn stable_range(&self) -> std::ops::Range<usize> {
        self.dims.u + self.dims.c..self.dims.total()
    }

    /// Unit vector `index` of the adapted basis.
    pub fn basis_vector(&self, index: usize) -> DVector<f64> {
        self.basis.column(index).into_owned()
    }

    /// Condition number of the adapted basis in the 2-norm.
    pub fn condition(&self) -> f64 {
        operator_norm(&self.basis) * operator_norm(&self.inverse)
    }
}

/// A vector decomposed along the splitting. Each part holds adapted
/// coordinates; use [`SplitVector::ambient`] to recover vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitVector {
    pub u: DVector<f64>,
    pub c: DVector<f64>,
    pub s: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bundle {
    Unstable,
    Center,
    Stable,
}

impl SplitVector {
    /// Ambient vector of one bundle component.
    pub fn ambient(&self, splitting: &Splitting, bundle: Bundle) -> DVector<f64> {
        let d = splitting.dims.total();
        let mut y = DVector::zeros(d);
        let (range, part) = match bundle {
            Bundle::Unstable => (splitting.unstable_range(), &self.u),
            Bundle::Center => (splitting.center_range(), &self.c),
            Bundle::Stable => (splitting.stable_range(), &self.s),
        };
        for (k, i) in range.enumerate() {
            y[i] = part[k];
        }
        splitting.vector(&y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlaqueKind {
    Stable,
    Center,
    Unstable,
    CenterStable,
    CenterUnstable,
}

impl PlaqueKind {
    fn bundles(self) -> &'static [Bundle] {
        match self {
            PlaqueKind::Stable => &[Bundle::Stable],
            PlaqueKind::Center => &[Bundle::Center],
            PlaqueKind::Unstable => &[Bundle::Unstable],
            PlaqueKind::CenterStable => &[Bundle::Center, Bundle::Stable],
            PlaqueKind::CenterUnstable => &[Bundle::Center, Bundle::Unstable],
        }
    }

    fn is_split(self) -> bool {
        matches!(self, PlaqueKind::CenterStable | PlaqueKind::CenterUnstable)
    }
}

/// Local leaf `W^kind_radius(base)`: an affine disc through `base` tangent
/// to the chosen bundles.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafPlaque {
    pub kind: PlaqueKind,
    pub base: TorusPoint,
    pub radius: f64,
}

impl LeafPlaque {
    /// Whether `p` lies on the plaque up to `tol`.
    pub fn contains(&self, system: &AffinePHSystem, p: &TorusPoint, tol: f64) -> bool {
        let v = self.base.displacement_to(p);
        let split = system.split_vector(&v);
        let mut along = DVector::zeros(v.len());
        let mut across = DVector::zeros(v.len());
        for bundle in [Bundle::Unstable, Bundle::Center, Bundle::Stable] {
            let part = split.ambient(system.splitting(), bundle);
            if self.kind.bundles().contains(&bundle) {
                along += part;
            } else {
                across += part;
            }
        }
        across.norm() <= tol && along.norm() <= self.radius + tol
    }
}

/// `f(x) = Lx + t (mod Z^d)` with `L` unimodular and integer.
#[derive(Clone, Debug)]
pub struct AffinePHSystem {
    spec: SystemSpec,
    matrix: DMatrix<f64>,
    matrix_int: Vec<Vec<i64>>,
    inverse_int: Vec<Vec<i64>>,
    inverse: DMatrix<f64>,
    translation: DVector<f64>,
    splitting: Splitting,
    adapted: DMatrix<f64>,
    rates: Rates,
    lipschitz: f64,
}

impl AffinePHSystem {
    pub fn from_spec(spec: SystemSpec) -> Result<Self, TorusError> {
        let d = spec.matrix.len();
        if d == 0 {
            return Err(TorusError::InvalidSystem("empty matrix".into()));
        }
        if spec.matrix.iter().any(|row| row.len() != d) {
            return Err(TorusError::InvalidSystem("matrix is not square".into()));
        }
        if spec.translation.len() != d {
            return Err(TorusError::DimensionMismatch {
                expected: d,
                actual: spec.translation.len(),
            });
        }
        if spec.dims.total() != d {
            return Err(TorusError::DimensionMismatch {
                expected: d,
                actual: spec.dims.total(),
            });
        }
        if spec.dims.u == 0 || spec.dims.s == 0 {
            return Err(TorusError::NotPartiallyHyperbolic(
                "unstable and stable bundles must be non-trivial".into(),
            ));
        }
        if !(spec.r0 > 0.0 && spec.r0 < 0.5) {
            return Err(TorusError::InvalidSystem(format!("r0 = {} outside (0, 1/2)", spec.r0)));
        }
        let mut matrix_int = vec![vec![0i64; d]; d];
        for (i, row) in spec.matrix.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if !x.is_finite() || x.fract() != 0.0 || x.abs() > 1e6 {
                    return Err(TorusError::InvalidSystem(format!(
                        "entry ({i},{j}) = {x} is not an integer"
                    )));
                }
                matrix_int[i][j] = x as i64;
            }
        }
        if spec.translation.iter().any(|x| !x.is_finite()) {
            return Err(TorusError::InvalidSystem("translation is not finite".into()));
        }
        let matrix = DMatrix::from_fn(d, d, |i, j| matrix_int[i][j] as f64);
        let inverse = matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| TorusError::InvalidSystem("matrix is singular".into()))?;
        let inverse_int = integer_inverse(&matrix_int, &inverse)?;
        let translation = DVector::from_iterator(d, spec.translation.iter().map(|&x| wrap_unit(x)));
        let (splitting, adapted, rates) = compute_splitting(&matrix, spec.dims)?;
        let lipschitz = operator_norm(&matrix);
        Ok(Self {
            spec,
            matrix,
            matrix_int,
            inverse_int,
            inverse,
            translation,
            splitting,
            adapted,
            rates,
            lipschitz,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, TorusError> {
        let spec: SystemSpec =
            serde_json::from_str(text).map_err(|e| TorusError::InvalidSystem(e.to_string()))?;
        Self::from_spec(spec)
    }

    /// The cat map `[[2,1],[1,1]]` on `T^2`.
    pub fn cat2() -> Self {
        Self::from_spec(SystemSpec {
            matrix: vec![vec![2.0, 1.0], vec![1.0, 1.0]],
            translation: vec![0.0, 0.0],
            dims: Dims { u: 1, c: 0, s: 1 },
            r0: DEFAULT_R0,
        })
        .expect("cat map is hyperbolic")
    }

    /// Cat map times the identity on `T^3`.
    pub fn cat_id3() -> Self {
        Self::skew3(0.0)
    }

    /// Cat map times the rotation `z -> z + alpha`.
    pub fn skew3(alpha: f64) -> Self {
        Self::from_spec(SystemSpec {
            matrix: vec![
                vec![2.0, 1.0, 0.0],
                vec![1.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            translation: vec![0.0, 0.0, alpha],
            dims: Dims { u: 1, c: 1, s: 1 },
            r0: DEFAULT_R0,
        })
        .expect("cat times rotation is partially hyperbolic")
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dims(&self) -> Dims {
        self.spec.dims
    }

    pub fn r0(&self) -> f64 {
        self.spec.r0
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn matrix_int(&self) -> &[Vec<i64>] {
        &self.matrix_int
    }

    pub fn inverse_int(&self) -> &[Vec<i64>] {
        &self.inverse_int
    }

    pub fn translation(&self) -> &DVector<f64> {
        &self.translation
    }

    pub fn splitting(&self) -> &Splitting {
        &self.splitting
    }

    /// `B^{-1} L B` in the adapted basis; block diagonal.
    pub fn adapted_matrix(&self) -> &DMatrix<f64> {
        &self.adapted
    }

    pub fn rates(&self) -> Rates {
        self.rates
    }

    /// Operator norm of `L`, the Lipschitz constant of `f`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Scalar unstable multiplier when `dim E^u = 1`.
    pub fn unstable_multiplier(&self) -> Option<f64> {
        (self.spec.dims.u == 1).then(|| self.adapted[(0, 0)])
    }

    /// Scalar stable multiplier when `dim E^s = 1`.
    pub fn stable_multiplier(&self) -> Option<f64> {
        let d = self.dim();
        (self.spec.dims.s == 1).then(|| self.adapted[(d - 1, d - 1)])
    }

    pub fn linear(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    pub fn linear_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.inverse * v
    }

    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        let v = &self.matrix * x.to_vector() + &self.translation;
        TorusPoint::from_vector(&v)
    }

    pub fn apply_inverse(&self, x: &TorusPoint) -> TorusPoint {
        let v = &self.inverse * (x.to_vector() - &self.translation);
        TorusPoint::from_vector(&v)
    }

    /// Integer image `L k` of a lattice vector.
    pub fn apply_int(&self, k: &[i64]) -> Vec<i64> {
        mat_vec_int(&self.matrix_int, k)
    }

    pub fn apply_inverse_int(&self, k: &[i64]) -> Vec<i64> {
        mat_vec_int(&self.inverse_int, k)
    }

    pub fn split_vector(&self, v: &DVector<f64>) -> SplitVector {
        let y = self.splitting.coordinates(v);
        let take = |r: std::ops::Range<usize>| DVector::from_iterator(r.len(), r.map(|i| y[i]));
        SplitVector {
            u: take(self.splitting.unstable_range()),
            c: take(self.splitting.center_range()),
            s: take(self.splitting.stable_range()),
        }
    }

    /// Center plaque `W^c_r(z)` contained in `H_x ∩ V_y`, where `H_x` is the
    /// local center-unstable set of `x` and `V_y` the local center-stable set
    /// of `y` (each of radius `2r`).
    ///
    /// `z` takes its unstable coordinate from `y`, its stable coordinate
    /// from `x` and the midpoint of their center coordinates.
    pub fn local_bracket(
        &self,
        x: &TorusPoint,
        y: &TorusPoint,
        r: f64,
    ) -> Result<LeafPlaque, TorusError> {
        let v = x.displacement_to(y);
        let distance = v.norm();
        if !(r > 0.0) || r > self.r0() || distance >= r {
            return Err(TorusError::DistanceTooLarge { distance, radius: r });
        }
        let split = self.split_vector(&v);
        let vu = split.ambient(&self.splitting, Bundle::Unstable);
        let vc = split.ambient(&self.splitting, Bundle::Center);
        let vs = split.ambient(&self.splitting, Bundle::Stable);
        let half_c = &vc * 0.5;
        // z - x = vu + vc/2 must fit in H_x, z - y = -vs - vc/2 in V_y, and
        // the center window of radius r around z must fit both.
        if vu.norm() > 2.0 * r || vs.norm() > 2.0 * r || half_c.norm() + r > 2.0 * r {
            return Err(TorusError::NoIntersection);
        }
        let z = x.translate(&(vu + half_c));
        Ok(LeafPlaque {
            kind: PlaqueKind::Center,
            base: z,
            radius: r,
        })
    }

    /// Local plaque of a given kind. Center-stable and center-unstable
    /// plaques may have radius up to `2 r0`, the others up to `r0`.
    pub fn plaque(&self, kind: PlaqueKind, base: TorusPoint, radius: f64) -> Result<LeafPlaque, TorusError> {
        let limit = if kind.is_split() { 2.0 * self.r0() } else { self.r0() };
        if !(radius > 0.0) || radius > limit {
            return Err(TorusError::InvalidSystem(format!(
                "plaque radius {radius} outside (0, {limit}]"
            )));
        }
        Ok(LeafPlaque { kind, base, radius })
    }
}

fn mat_vec_int(m: &[Vec<i64>], k: &[i64]) -> Vec<i64> {
    m.iter()
        .map(|row| row.iter().zip(k).map(|(a, b)| a * b).sum())
        .collect()
}

fn integer_inverse(m: &[Vec<i64>], inverse: &DMatrix<f64>) -> Result<Vec<Vec<i64>>, TorusError> {
    let d = m.len();
    let inv: Vec<Vec<i64>> = (0..d)
        .map(|i| (0..d).map(|j| inverse[(i, j)].round() as i64).collect())
        .collect();
    for (i, row) in m.iter().enumerate() {
        for j in 0..d {
            let x: i64 = row.iter().zip(&inv).map(|(a, r)| a * r[j]).sum();
            if x != i64::from(i == j) {
                return Err(TorusError::InvalidSystem(
                    "matrix is not unimodular over the integers".into(),
                ));
            }
        }
    }
    Ok(inv)
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn smallest_singular(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.min()
}

fn compute_splitting(matrix: &DMatrix<f64>, dims: Dims) -> Result<(Splitting, DMatrix<f64>, Rates), TorusError> {
    let d = matrix.nrows();
    let mut eig: Vec<Complex<f64>> = matrix.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| a.norm().total_cmp(&b.norm()).then(a.im.total_cmp(&b.im)));
    let stable = &eig[..dims.s];
    let center = &eig[dims.s..dims.s + dims.c];
    let unstable = &eig[dims.s + dims.c..];
    let gap = |lo: &[Complex<f64>], hi: &[Complex<f64>]| match (lo.last(), hi.first()) {
        (Some(a), Some(b)) => b.norm() - a.norm() > 1e-9,
        _ => true,
    };
    if !gap(stable, center) || !gap(center, unstable) || !gap(stable, unstable) {
        return Err(TorusError::NotPartiallyHyperbolic(format!(
            "eigenvalue moduli {:?} do not separate into {}+{}+{}",
            eig.iter().map(|z| z.norm()).collect::<Vec<_>>(),
            dims.s,
            dims.c,
            dims.u
        )));
    }
    if stable.last().is_none_or(|z| z.norm() >= 1.0) || unstable.first().is_none_or(|z| z.norm() <= 1.0) {
        return Err(TorusError::NotPartiallyHyperbolic(
            "no contraction and expansion at the extremes".into(),
        ));
    }
    let eu = invariant_subspace(matrix, unstable)?;
    let ec = invariant_subspace(matrix, center)?;
    let es = invariant_subspace(matrix, stable)?;
    let mut basis = DMatrix::zeros(d, d);
    let mut col = 0;
    for block in [&eu, &ec, &es] {
        for j in 0..block.ncols() {
            basis.set_column(col, &block.column(j));
            col += 1;
        }
    }
    let mut inverse = basis
        .clone()
        .try_inverse()
        .ok_or_else(|| TorusError::NotPartiallyHyperbolic("bundles are not transverse".into()))?;
    snap(&mut inverse);
    let mut adapted = &inverse * matrix * &basis;
    let splitting = Splitting { dims, basis, inverse };
    let ranges = [
        splitting.unstable_range(),
        splitting.center_range(),
        splitting.stable_range(),
    ];
    let scale = operator_norm(matrix);
    for (bi, ri) in ranges.iter().enumerate() {
        for (bj, rj) in ranges.iter().enumerate() {
            if bi == bj {
                continue;
            }
            for i in ri.clone() {
                for j in rj.clone() {
                    if adapted[(i, j)].abs() > 1e-9 * scale {
                        return Err(TorusError::NotPartiallyHyperbolic(
                            "computed splitting is not invariant".into(),
                        ));
                    }
                    adapted[(i, j)] = 0.0;
                }
            }
        }
    }
    let block = |r: &std::ops::Range<usize>| adapted.view((r.start, r.start), (r.len(), r.len())).into_owned();
    let a_u = block(&ranges[0]);
    let a_s = block(&ranges[2]);
    let lambda_u = smallest_singular(&a_u);
    let lambda_s = operator_norm(&a_s);
    let (lambda_c_minus, lambda_c_plus) = if dims.c == 0 {
        (1.0, 1.0)
    } else {
        let a_c = block(&ranges[1]);
        (smallest_singular(&a_c), operator_norm(&a_c))
    };
    if !(lambda_s < 1.0 && lambda_u > 1.0 && lambda_s < lambda_c_minus && lambda_c_plus < lambda_u) {
        return Err(TorusError::NotPartiallyHyperbolic(format!(
            "rates s={lambda_s:.4} c=[{lambda_c_minus:.4},{lambda_c_plus:.4}] u={lambda_u:.4} are not dominated"
        )));
    }
    Ok((
        splitting,
        adapted,
        Rates {
            lambda_s,
            lambda_c_minus,
            lambda_c_plus,
            lambda_u,
        },
    ))
}

fn snap(m: &mut DMatrix<f64>) {
    let scale = m.amax().max(1.0);
    for x in m.iter_mut() {
        if x.abs() < SNAP * scale {
            *x = 0.0;
        }
    }
}

/// Orthonormal basis of `ker p(L)` where `p` has the given roots.
fn invariant_subspace(matrix: &DMatrix<f64>, roots: &[Complex<f64>]) -> Result<DMatrix<f64>, TorusError> {
    let d = matrix.nrows();
    if roots.is_empty() {
        return Ok(DMatrix::zeros(d, 0));
    }
    let lc: DMatrix<Complex<f64>> = matrix.map(|x| Complex::new(x, 0.0));
    let mut p = DMatrix::<Complex<f64>>::identity(d, d);
    for &z in roots {
        let shifted = &lc - DMatrix::<Complex<f64>>::identity(d, d) * z;
        p = shifted * p;
    }
    if p.iter().any(|z| z.im.abs() > 1e-8 * (1.0 + z.re.abs())) {
        return Err(TorusError::NotPartiallyHyperbolic(
            "bundle boundary splits a complex conjugate pair".into(),
        ));
    }
    let real = p.map(|z| z.re);
    let svd = real.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let k = roots.len();
    let mut basis = DMatrix::zeros(d, k);
    for (j, &row) in order.iter().take(k).enumerate() {
        let mut v: DVector<f64> = v_t.row(row).transpose().into_owned();
        for x in v.iter_mut() {
            if x.abs() < SNAP {
                *x = 0.0;
            }
        }
        v /= v.norm();
        basis.set_column(j, &v);
    }
    let mut basis = basis.qr().q();
    snap(&mut basis);
    if k == 1 {
        let mut v: DVector<f64> = basis.column(0).into_owned();
        v /= v.norm();
        let lead = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap_or(0);
        if v[lead] < 0.0 {
            v = -v;
        }
        basis.set_column(0, &v);
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const ALPHA: f64 = 0.41421356;

    #[test]
    fn cat_id3_fixes_origin() {
        let f = AffinePHSystem::cat_id3();
        let y = f.apply(&TorusPoint::origin(3));
        assert_abs_diff_eq!(TorusPoint::origin(3).distance(&y), 0.0);
    }

    #[test]
    fn cat2_half_point() {
        let f = AffinePHSystem::cat2();
        let y = f.apply(&TorusPoint::new(vec![0.5, 0.5]));
        assert!(y.distance(&TorusPoint::new(vec![0.5, 0.0])) < 1e-15);
    }

    #[test]
    fn skew3_rotates_origin() {
        let f = AffinePHSystem::skew3(ALPHA);
        let y = f.apply(&TorusPoint::origin(3));
        assert!(y.distance(&TorusPoint::new(vec![0.0, 0.0, ALPHA])) < 1e-15);
    }

    #[test]
    fn cat_rates() {
        let f = AffinePHSystem::cat_id3();
        let phi2 = (3.0 + 5f64.sqrt()) / 2.0;
        let r = f.rates();
        assert_abs_diff_eq!(r.lambda_u, phi2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lambda_s, 1.0 / phi2, epsilon = 1e-12);
        assert_abs_diff_eq!(r.lambda_c_plus, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(f.lipschitz(), phi2, epsilon = 1e-12);
    }

    #[test]
    fn center_is_vertical_axis() {
        let f = AffinePHSystem::cat_id3();
        let ec = f.splitting().basis_vector(1);
        assert_eq!(ec.as_slice(), &[0.0, 0.0, 1.0]);
        let inv = f.splitting().inverse();
        assert_eq!(inv[(0, 2)], 0.0);
        assert_eq!(inv[(2, 2)], 0.0);
    }

    #[test]
    fn split_center_vector() {
        let f = AffinePHSystem::cat_id3();
        let v = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let sv = f.split_vector(&v);
        assert_abs_diff_eq!(sv.u.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sv.s.norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sv.c.norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn split_eigenvector() {
        let f = AffinePHSystem::cat_id3();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let v = DVector::from_vec(vec![phi, 1.0, 0.0]);
        let sv = f.split_vector(&v);
        assert_abs_diff_eq!(sv.s.norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sv.c.norm(), 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sv.u[0].abs(), v.norm(), epsilon = 1e-14);
    }

    #[test]
    fn rejects_non_integer_and_singular() {
        let bad = SystemSpec {
            matrix: vec![vec![2.5, 1.0], vec![1.0, 1.0]],
            translation: vec![0.0, 0.0],
            dims: Dims { u: 1, c: 0, s: 1 },
            r0: DEFAULT_R0,
        };
        assert!(matches!(AffinePHSystem::from_spec(bad), Err(TorusError::InvalidSystem(_))));
        let sing = SystemSpec {
            matrix: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            translation: vec![0.0, 0.0],
            dims: Dims { u: 1, c: 0, s: 1 },
            r0: DEFAULT_R0,
        };
        assert!(AffinePHSystem::from_spec(sing).is_err());
    }

    #[test]
    fn rejects_wrong_dims() {
        let spec = SystemSpec {
            matrix: vec![vec![2.0, 1.0, 0.0], vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            translation: vec![0.0; 3],
            dims: Dims { u: 2, c: 0, s: 1 },
            r0: DEFAULT_R0,
        };
        assert!(matches!(
            AffinePHSystem::from_spec(spec),
            Err(TorusError::NotPartiallyHyperbolic(_))
        ));
    }

    #[test]
    fn json_round_trip() {
        let text = r#"{"matrix": [[2,1,0],[1,1,0],[0,0,1]], "translation": [0,0,0.41421356],
                        "dims": {"u":1,"c":1,"s":1}, "r0": 0.125}"#;
        let f = AffinePHSystem::from_json(text).unwrap();
        assert_eq!(f.dims(), Dims { u: 1, c: 1, s: 1 });
        let back = serde_json::to_string(f.spec()).unwrap();
        let g = AffinePHSystem::from_json(&back).unwrap();
        assert_eq!(f.spec(), g.spec());
    }

    #[test]
    fn bracket_of_point_with_itself() {
        let f = AffinePHSystem::cat_id3();
        let x = TorusPoint::new(vec![0.3, 0.7, 0.1]);
        let p = f.local_bracket(&x, &x, 0.05).unwrap();
        assert!(p.base.distance(&x) < 1e-15);
        assert_eq!(p.kind, PlaqueKind::Center);
    }

    #[test]
    fn bracket_with_stable_offset() {
        // y differs from x along E^s only, so H_x ∩ V_y is the center
        // plaque through x.
        let f = AffinePHSystem::cat_id3();
        let x = TorusPoint::new(vec![0.3, 0.7, 0.1]);
        let es = f.splitting().basis_vector(2);
        let y = x.translate(&(es * 0.01));
        let p = f.local_bracket(&x, &y, 0.05).unwrap();
        assert!(p.base.distance(&x) < 1e-15);
    }

    #[test]
    fn bracket_generic_lies_on_both_sets() {
        let f = AffinePHSystem::skew3(ALPHA);
        let x = TorusPoint::new(vec![0.91, 0.02, 0.98]);
        let y = TorusPoint::new(vec![0.93, 0.99, 0.01]);
        let p = f.local_bracket(&x, &y, 0.1).unwrap();
        let z = &p.base;
        let hx = LeafPlaque { kind: PlaqueKind::CenterUnstable, base: x.clone(), radius: 0.2 };
        let vy = LeafPlaque { kind: PlaqueKind::CenterStable, base: y.clone(), radius: 0.2 };
        assert!(hx.contains(&f, z, 1e-12));
        assert!(vy.contains(&f, z, 1e-12));
    }

    #[test]
    fn bracket_far_points() {
        let f = AffinePHSystem::cat_id3();
        let x = TorusPoint::new(vec![0.0, 0.0, 0.0]);
        let y = TorusPoint::new(vec![0.4, 0.0, 0.0]);
        assert!(matches!(
            f.local_bracket(&x, &y, 0.125),
            Err(TorusError::DistanceTooLarge { .. })
        ));
        assert!(matches!(
            f.local_bracket(&x, &x, 0.2),
            Err(TorusError::DistanceTooLarge { .. })
        ));
    }

    #[test]
    fn integer_inverse_round_trip() {
        let f = AffinePHSystem::cat_id3();
        let k = vec![3, -7, 11];
        assert_eq!(f.apply_inverse_int(&f.apply_int(&k)), k);
    }

    #[test]
    fn generic_splitting_is_invariant() {
        let spec = SystemSpec {
            matrix: vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 1.0], vec![0.0, 1.0, 1.0]],
            translation: vec![0.0; 3],
            dims: Dims { u: 1, c: 1, s: 1 },
            r0: DEFAULT_R0,
        };
        let f = AffinePHSystem::from_spec(spec).unwrap();
        for j in 0..3 {
            let e = f.splitting().basis_vector(j);
            let le = f.linear(&e);
            let lam = f.adapted_matrix()[(j, j)];
            assert!((le - e * lam).norm() < 1e-10);
        }
    }
}
