//! Primitives for SO(n) and its Lie algebra so(n).
//!
//! `n(n-1)/2` coordinate planes are ordered lexicographically by their axis
//! pair `(k, ℓ)`, `1 ≤ k < ℓ ≤ n`; all public indices are 1-based. A plane
//! rotation by θ acts on rows k and ℓ only, so left multiplication is an
//! O(n) update. The skew matrices `a_i = (E_kℓ − E_ℓk)/√2` form an
//! orthonormal basis of so(n) under the Hilbert–Schmidt inner product
//! ⟨A,B⟩ = Tr(AᵀB), and the plane rotations satisfy
//! `R(i,θ) = exp(√2 θ a_i)`.
//!
//! Angles live on the torus: they are stored in [0, 2π) and compared with
//! the torus metric.

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng;
use ndarray::{Array2, ArrayView2};
use rand_core::RngCore;

/// Walk states are considered valid while ‖XᵀX − I‖_F stays below this.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Rotation count after which a walk state is re-orthonormalized. At n ≤ 30
/// the drift after 10⁴ sparse rotations is ~1e-13, so this cadence keeps
/// the defect far below [`ORTHOGONALITY_TOL`] over arbitrarily long runs.
pub const REORTH_INTERVAL: u64 = 10_000;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Number of two-coordinate planes, N = n(n−1)/2.
pub fn plane_count(n: usize) -> usize {
    n * (n - 1) / 2
}

/// Reduce an angle to [0, 2π).
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TWO_PI);
    if r == TWO_PI {
        0.0
    } else {
        r
    }
}

/// Distance between two angles on the torus.
pub fn torus_distance(a: f64, b: f64) -> f64 {
    let d = (normalize_angle(a) - normalize_angle(b)).abs();
    d.min(TWO_PI - d)
}

/// A coordinate plane, addressable by 1-based ordinal or by its axis pair.
///
/// The ordinal enumerates pairs in lexicographic order:
/// (1,2), (1,3), …, (1,n), (2,3), …
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneIndex {
    ordinal: usize,
    axes: (usize, usize),
}

impl PlaneIndex {
    /// Plane with 1-based ordinal `i` in dimension `n`.
    pub fn from_ordinal(n: usize, i: usize) -> Result<Self> {
        let count = plane_count(n);
        if n < 2 || i < 1 || i > count {
            return Err(Error::Domain(format!(
                "plane ordinal {i} out of range 1..={count} for n = {n}"
            )));
        }
        let mut rem = i - 1;
        for k in 1..n {
            let row = n - k;
            if rem < row {
                return Ok(Self {
                    ordinal: i,
                    axes: (k, k + 1 + rem),
                });
            }
            rem -= row;
        }
        unreachable!("ordinal was range-checked above")
    }

    /// Plane spanned by axes `k < ℓ` in dimension `n`.
    pub fn from_axes(n: usize, k: usize, l: usize) -> Result<Self> {
        if n < 2 || k < 1 || l <= k || l > n {
            return Err(Error::Domain(format!(
                "axis pair ({k}, {l}) invalid for n = {n}"
            )));
        }
        let ordinal = (k - 1) * n - k * (k - 1) / 2 + (l - k);
        Ok(Self {
            ordinal,
            axes: (k, l),
        })
    }

    /// 1-based ordinal.
    pub fn ordinal(&self) -> usize {
        self.ordinal
    }

    /// 1-based axis pair (k, ℓ) with k < ℓ.
    pub fn axes(&self) -> (usize, usize) {
        self.axes
    }
}

/// The i-th plane's axis pair, 1-based.
pub fn plane_to_axes(n: usize, i: usize) -> Result<(usize, usize)> {
    Ok(PlaneIndex::from_ordinal(n, i)?.axes())
}

/// Inverse of [`plane_to_axes`].
pub fn axes_to_plane(n: usize, k: usize, l: usize) -> Result<usize> {
    Ok(PlaneIndex::from_axes(n, k, l)?.ordinal())
}

/// A real skew-symmetric matrix, A = −Aᵀ exactly.
///
/// Construction symmetrizes, storing entry (j,i) as the IEEE negation of
/// entry (i,j), so the invariant holds bit-for-bit.
#[derive(Clone, Debug)]
pub struct SkewMatrix {
    m: Array2<f64>,
}

impl SkewMatrix {
    /// Zero element of so(n).
    pub fn zero(n: usize) -> Self {
        Self {
            m: Array2::zeros((n, n)),
        }
    }

    /// Build from the strict upper triangle of `g`; the lower triangle is
    /// the exact negation.
    pub fn from_upper(g: ArrayView2<f64>) -> Result<Self> {
        let n = g.nrows();
        if g.ncols() != n {
            return Err(Error::Domain("skew matrix must be square".into()));
        }
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                m[[i, j]] = g[[i, j]];
                m[[j, i]] = -g[[i, j]];
            }
        }
        Ok(Self { m })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.m.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.m
    }

    /// Scalar multiple, still skew.
    pub fn scaled(&self, c: f64) -> Self {
        Self { m: &self.m * c }
    }

    /// Hilbert–Schmidt norm.
    pub fn hs_norm(&self) -> f64 {
        linalg::fro_norm(self.m.view())
    }
}

/// The orthonormal basis element a_i = (E_kℓ − E_ℓk)/√2 of so(n).
pub fn basis_element(n: usize, plane: &PlaneIndex) -> SkewMatrix {
    let (k, l) = plane.axes();
    let mut m = Array2::zeros((n, n));
    let v = 1.0 / std::f64::consts::SQRT_2;
    m[[k - 1, l - 1]] = v;
    m[[l - 1, k - 1]] = -v;
    SkewMatrix { m }
}

/// Hilbert–Schmidt inner product Tr(AᵀB).
pub fn hs_inner(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::Domain(format!(
            "hs_inner dimension mismatch: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.iter().zip(b.iter()).map(|(x, y)| x * y).sum())
}

/// Orthogonal projection of a square matrix onto so(n): (G − Gᵀ)/2.
pub fn project_skew(g: ArrayView2<f64>) -> Result<SkewMatrix> {
    let n = g.nrows();
    if g.ncols() != n {
        return Err(Error::Domain("project_skew needs a square matrix".into()));
    }
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (g[[i, j]] - g[[j, i]]) / 2.0;
            m[[i, j]] = v;
            m[[j, i]] = -v;
        }
    }
    Ok(SkewMatrix { m })
}

/// An element of SO(n): orthogonal with determinant +1, plus a counter of
/// sparse rotations applied since the last re-orthonormalization.
#[derive(Clone, Debug)]
pub struct SoMatrix {
    m: Array2<f64>,
    drift_steps: u64,
}

impl SoMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            m: Array2::eye(n),
            drift_steps: 0,
        }
    }

    /// Validate and wrap a matrix claimed to lie in SO(n).
    pub fn from_array(m: Array2<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() < 1 {
            return Err(Error::Domain("SO(n) element must be square".into()));
        }
        let defect = linalg::orthogonality_defect(m.view());
        if !defect.is_finite() || defect > ORTHOGONALITY_TOL {
            return Err(Error::Domain(format!(
                "matrix is not orthogonal within {ORTHOGONALITY_TOL:.0e}: defect {defect:.3e}"
            )));
        }
        if linalg::determinant(m.view()) < 0.0 {
            return Err(Error::Domain("matrix has determinant -1".into()));
        }
        Ok(Self { m, drift_steps: 0 })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.m.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.m
    }

    /// Rotations applied since the last re-orthonormalization.
    pub fn drift_steps(&self) -> u64 {
        self.drift_steps
    }

    /// ‖XᵀX − I‖_F.
    pub fn orthogonality_error(&self) -> f64 {
        linalg::orthogonality_defect(self.m.view())
    }

    /// The inverse, which for an orthogonal matrix is the transpose.
    pub fn inverse(&self) -> Self {
        Self {
            m: self.m.t().to_owned(),
            drift_steps: self.drift_steps,
        }
    }

    /// Dense product `self · rhs`.
    pub fn mul(&self, rhs: &Self) -> Self {
        Self {
            m: self.m.dot(&rhs.m),
            drift_steps: self.drift_steps + rhs.drift_steps,
        }
    }

    /// Left-multiply by R(plane, θ) in place: an O(n) update of rows k, ℓ.
    pub fn rotate_left_in_place(&mut self, plane: &PlaneIndex, theta: f64) {
        let (k, l) = plane.axes();
        let (k, l) = (k - 1, l - 1);
        let (c, s) = (theta.cos(), theta.sin());
        let n = self.dim();
        for j in 0..n {
            let xk = self.m[[k, j]];
            let xl = self.m[[l, j]];
            self.m[[k, j]] = c * xk + s * xl;
            self.m[[l, j]] = -s * xk + c * xl;
        }
        self.drift_steps += 1;
    }

    /// Re-orthonormalize in place if the drift counter passed the cadence.
    pub fn maybe_reorthonormalize(&mut self) -> Result<()> {
        if self.drift_steps >= REORTH_INTERVAL {
            *self = reorthonormalize(self.m.view())?;
        }
        Ok(())
    }
}

/// Hilbert–Schmidt distance ‖X − Y‖ between two group elements.
pub fn hs_distance(x: &SoMatrix, y: &SoMatrix) -> f64 {
    let mut s = 0.0;
    for (a, b) in x.view().iter().zip(y.view().iter()) {
        let d = a - b;
        s += d * d;
    }
    s.sqrt()
}

/// The rotation R(i, θ): cos θ at (k,k) and (ℓ,ℓ), sin θ at (k,ℓ),
/// −sin θ at (ℓ,k), identity elsewhere.
pub fn rotation_matrix(n: usize, plane: &PlaneIndex, theta: f64) -> SoMatrix {
    let mut x = SoMatrix::identity(n);
    x.rotate_left_in_place(plane, theta);
    x.drift_steps = 0;
    x
}

/// R(plane, θ) · X as a new value.
pub fn apply_rotation_left(x: &SoMatrix, plane: &PlaneIndex, theta: f64) -> SoMatrix {
    let mut out = x.clone();
    out.rotate_left_in_place(plane, theta);
    out
}

/// Matrix exponential of a skew matrix by scaling and squaring with a
/// machine-precision Taylor core; the result is orthogonal to ~1e-12 for
/// ‖A‖_HS up to 10.
pub fn mat_exp_skew(a: &SkewMatrix) -> Result<SoMatrix> {
    if !a.view().iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("mat_exp_skew: non-finite entries".into()));
    }
    let n = a.dim();
    let norm = a.hs_norm();
    let squarings = if norm > 0.5 {
        ((norm / 0.5).log2().ceil() as u32).min(60)
    } else {
        0
    };
    let b = a.view().to_owned() / f64::powi(2.0, squarings as i32);
    let mut sum = Array2::eye(n);
    let mut term: Array2<f64> = Array2::eye(n);
    for k in 1..=40 {
        term = term.dot(&b) / k as f64;
        sum += &term;
        if linalg::fro_norm(term.view()) < 1e-17 {
            break;
        }
    }
    let mut result = sum;
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    Ok(SoMatrix {
        m: result,
        drift_steps: 0,
    })
}

/// Haar-distributed element of SO(n): QR of an i.i.d. Gaussian matrix with
/// the R-diagonal sign correction, then the last column negated if the
/// determinant came out negative.
pub fn haar_sample(n: usize, rng: &mut impl RngCore) -> SoMatrix {
    assert!(n >= 2, "haar_sample needs n >= 2");
    loop {
        let g = Array2::from_shape_fn((n, n), |_| rng::standard_normal(rng));
        let (mut q, r) = linalg::qr_square(g.view());
        let mut degenerate = false;
        for j in 0..n {
            let d = r[[j, j]];
            if d == 0.0 {
                degenerate = true;
                break;
            }
            if d < 0.0 {
                for i in 0..n {
                    q[[i, j]] = -q[[i, j]];
                }
            }
        }
        if degenerate {
            continue; // probability-zero Gaussian degeneracy: resample
        }
        if linalg::determinant(q.view()) < 0.0 {
            for i in 0..n {
                q[[i, n - 1]] = -q[[i, n - 1]];
            }
        }
        return SoMatrix {
            m: q,
            drift_steps: 0,
        };
    }
}

/// Normalization ∫_{-1}^{1} (1-x²)^{(n-3)/2} dx via the Wallis recurrence:
/// substituting x = sin t it equals W_m = ∫ cos^m t dt over a half period
/// with m = n-2, and W_0 = π, W_1 = 2, W_m = (m-1)/m · W_{m-2}.
fn sphere_marginal_normalizer(n: usize) -> f64 {
    let m = n - 2;
    let mut w = if m % 2 == 0 {
        std::f64::consts::PI
    } else {
        2.0
    };
    let start = if m % 2 == 0 { 2 } else { 3 };
    let mut k = start;
    while k <= m {
        w = w * (k as f64 - 1.0) / k as f64;
        k += 2;
    }
    w
}

/// Density of a single entry of a Haar matrix on SO(n), equivalently of the
/// first coordinate of a uniform point on the sphere S^{n-1}:
/// c_n (1 − x²)^{(n−3)/2} on [−1, 1].
pub fn haar_marginal_density(n: usize, x: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain(format!(
            "haar_marginal_density needs n >= 3, got {n}"
        )));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!(
            "marginal density argument {x} outside [-1, 1]"
        )));
    }
    let z = sphere_marginal_normalizer(n);
    let e = (n as f64 - 3.0) / 2.0;
    Ok((1.0 - x * x).max(0.0).powf(e) / z)
}

/// CDF of [`haar_marginal_density`], computed by Simpson integration of
/// cos^{n-2} after the substitution x = sin t (the integrand is then
/// smooth, so the rule converges at full order).
pub fn haar_marginal_cdf(n: usize, x: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain(format!(
            "haar_marginal_cdf needs n >= 3, got {n}"
        )));
    }
    if x <= -1.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let z = sphere_marginal_normalizer(n);
    let a = -std::f64::consts::FRAC_PI_2;
    let b = x.asin();
    let m = n as i32 - 2;
    let f = |t: f64| t.cos().powi(m);
    let panels = 4096;
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for i in 1..panels {
        let t = a + i as f64 * h;
        s += f(t) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    Ok((s * h / 3.0 / z).clamp(0.0, 1.0))
}

/// A group element at (approximately) the requested Hilbert–Schmidt
/// distance from `x0`, displaced along a uniformly random tangent
/// direction: exp(d·K)·X₀ with K a random unit skew matrix. The realized
/// distance differs from `distance` only at second order.
pub fn displaced_from(x0: &SoMatrix, distance: f64, rng: &mut impl RngCore) -> Result<SoMatrix> {
    if distance < 0.0 {
        return Err(Error::Domain(format!(
            "displacement distance {distance} negative"
        )));
    }
    if distance == 0.0 {
        return Ok(x0.clone());
    }
    let n = x0.dim();
    let direction = loop {
        let g = Array2::from_shape_fn((n, n), |_| rng::standard_normal(rng));
        let k = project_skew(g.view())?;
        if k.hs_norm() > 1e-8 {
            break k.scaled(distance / k.hs_norm());
        }
    };
    let moved = mat_exp_skew(&direction)?.view().dot(&x0.view());
    SoMatrix::from_array(moved)
}

/// Nearest SO(n) element to a slightly non-orthogonal matrix, via the
/// Newton polar iteration. Pre-condition: ‖XᵀX − I‖_F < 0.1.
///
/// Policy for inputs on the wrong component: a determinant −1 input is not
/// drift from SO(n) but a reflection, so it is rejected as a numeric error
/// rather than silently sign-corrected.
pub fn reorthonormalize(m: ArrayView2<f64>) -> Result<SoMatrix> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric(
            "reorthonormalize: non-finite entries".into(),
        ));
    }
    let defect = linalg::orthogonality_defect(m);
    if defect >= 0.1 {
        return Err(Error::Numeric(format!(
            "reorthonormalize: defect {defect:.3e} exceeds 0.1"
        )));
    }
    let q = linalg::polar_orthogonal(m)
        .ok_or_else(|| Error::Numeric("reorthonormalize: polar iteration failed".into()))?;
    if linalg::determinant(q.view()) < 0.0 {
        return Err(Error::Numeric(
            "reorthonormalize: input lies on the determinant -1 component".into(),
        ));
    }
    Ok(SoMatrix {
        m: q,
        drift_steps: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};

    fn plane(n: usize, i: usize) -> PlaneIndex {
        PlaneIndex::from_ordinal(n, i).unwrap()
    }

    fn random_so(n: usize, rng: &mut Stream) -> SoMatrix {
        haar_sample(n, rng)
    }

    #[test]
    fn plane_ordinal_examples() {
        assert_eq!(plane_to_axes(3, 1).unwrap(), (1, 2));
        assert_eq!(plane_to_axes(3, 3).unwrap(), (2, 3));
        assert_eq!(plane_to_axes(4, 4).unwrap(), (2, 3));
        assert!(plane_to_axes(3, 4).is_err());
        assert!(plane_to_axes(3, 0).is_err());
    }

    #[test]
    fn plane_round_trip_all_ordinals() {
        for n in 2..=9 {
            for i in 1..=plane_count(n) {
                let (k, l) = plane_to_axes(n, i).unwrap();
                assert_eq!(axes_to_plane(n, k, l).unwrap(), i, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn rotation_matrix_quarter_turn_entries() {
        let r = rotation_matrix(3, &plane(3, 1), std::f64::consts::FRAC_PI_2);
        let expected = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (r.view()[[i, j]] - expected[i][j]).abs() < 1e-15,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn rotation_matrix_zero_angle_is_identity() {
        let r = rotation_matrix(5, &plane(5, 7), 0.0);
        assert!(hs_distance(&r, &SoMatrix::identity(5)) == 0.0);
    }

    #[test]
    fn rotation_matrix_half_turn_in_dimension_two() {
        let r = rotation_matrix(2, &plane(2, 1), std::f64::consts::PI);
        assert!((r.view()[[0, 0]] + 1.0).abs() < 1e-15);
        assert!((r.view()[[1, 1]] + 1.0).abs() < 1e-15);
        assert!(r.view()[[0, 1]].abs() < 1e-15);
    }

    #[test]
    fn apply_rotation_matches_dense_product() {
        let mut r = rng::stream(10, "son-apply", 0);
        for trial in 0..200 {
            let n = 2 + (trial % 5);
            let x = random_so(n, &mut r);
            let pl = plane(n, 1 + rng::uniform_index(&mut r, plane_count(n)));
            let theta = rng::uniform_angle(&mut r);
            let fast = apply_rotation_left(&x, &pl, theta);
            let dense = rotation_matrix(n, &pl, theta).view().dot(&x.view());
            let worst = fast
                .view()
                .iter()
                .zip(dense.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(worst < 1e-12, "entrywise gap {worst} at n={n}");
        }
    }

    #[test]
    fn basis_element_definition_and_orthonormality() {
        let a = basis_element(2, &plane(2, 1));
        let v = 1.0 / std::f64::consts::SQRT_2;
        assert_eq!(a.view()[[0, 1]], v);
        assert_eq!(a.view()[[1, 0]], -v);
        let n = 4;
        for i in 1..=plane_count(n) {
            for j in 1..=plane_count(n) {
                let ai = basis_element(n, &plane(n, i));
                let aj = basis_element(n, &plane(n, j));
                let ip = hs_inner(ai.view(), aj.view()).unwrap();
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-14, "({i},{j}) -> {ip}");
            }
        }
    }

    #[test]
    fn rotation_equals_exponential_of_scaled_basis() {
        let mut r = rng::stream(11, "son-exp", 0);
        for trial in 0..50 {
            let n = 2 + (trial % 4);
            let i = 1 + rng::uniform_index(&mut r, plane_count(n));
            let theta = rng::uniform_angle(&mut r);
            let pl = plane(n, i);
            let a = basis_element(n, &pl).scaled(std::f64::consts::SQRT_2 * theta);
            let via_exp = mat_exp_skew(&a).unwrap();
            let direct = rotation_matrix(n, &pl, theta);
            assert!(hs_distance(&via_exp, &direct) < 1e-10);
        }
    }

    #[test]
    fn hs_inner_examples_and_elementwise_oracle() {
        let id3 = Array2::<f64>::eye(3);
        assert_eq!(hs_inner(id3.view(), id3.view()).unwrap(), 3.0);
        let mut r = rng::stream(12, "son-hs", 0);
        for _ in 0..50 {
            let a = Array2::from_shape_fn((4, 4), |_| rng::uniform_in(&mut r, -2.0, 2.0));
            let b = Array2::from_shape_fn((4, 4), |_| rng::uniform_in(&mut r, -2.0, 2.0));
            let oracle: f64 = (0..4)
                .flat_map(|p| (0..4).map(move |q| (p, q)))
                .map(|(p, q)| a[[p, q]] * b[[p, q]])
                .sum();
            assert!((hs_inner(a.view(), b.view()).unwrap() - oracle).abs() < 1e-12);
        }
        let wrong = Array2::<f64>::eye(3);
        let other = Array2::<f64>::eye(4);
        assert!(hs_inner(wrong.view(), other.view()).is_err());
    }

    #[test]
    fn project_skew_examples_and_basis_expansion_oracle() {
        // Symmetric input projects to zero.
        let mut r = rng::stream(13, "son-proj", 0);
        let g = Array2::from_shape_fn((4, 4), |_| rng::uniform_in(&mut r, -1.0, 1.0));
        let sym = &g + &g.t();
        assert!(project_skew(sym.view()).unwrap().hs_norm() < 1e-15);

        let mut g2 = Array2::zeros((2, 2));
        g2[[0, 1]] = 2.0;
        let p = project_skew(g2.view()).unwrap();
        assert_eq!(p.view()[[0, 1]], 1.0);
        assert_eq!(p.view()[[1, 0]], -1.0);

        // Expansion over the orthonormal basis is the same projection.
        for _ in 0..20 {
            let n = 4;
            let g = Array2::from_shape_fn((n, n), |_| rng::uniform_in(&mut r, -1.0, 1.0));
            let p = project_skew(g.view()).unwrap();
            let mut expansion = Array2::<f64>::zeros((n, n));
            for i in 1..=plane_count(n) {
                let a = basis_element(n, &plane(n, i));
                let c = hs_inner(g.view(), a.view()).unwrap();
                expansion += &(&a.view() * c);
            }
            let gap = linalg::fro_norm((&expansion - &p.view()).view());
            assert!(gap < 1e-12, "basis expansion gap {gap}");
        }
    }

    #[test]
    fn mat_exp_skew_zero_and_taylor_oracle() {
        let z = SkewMatrix::zero(4);
        let e = mat_exp_skew(&z).unwrap();
        assert!(hs_distance(&e, &SoMatrix::identity(4)) == 0.0);

        let mut r = rng::stream(14, "son-taylor", 0);
        for _ in 0..30 {
            let n = 3 + rng::uniform_index(&mut r, 3);
            let g = Array2::from_shape_fn((n, n), |_| rng::uniform_in(&mut r, -0.3, 0.3));
            let a = project_skew(g.view()).unwrap();
            let a = a.scaled(1.0 / a.hs_norm().max(1.0)); // ‖A‖ ≤ 1
                                                          // 30-term plain Taylor series as the independent oracle.
            let mut oracle = Array2::<f64>::eye(n);
            let mut term = Array2::<f64>::eye(n);
            for k in 1..=30 {
                term = term.dot(&a.view()) / k as f64;
                oracle += &term;
            }
            let got = mat_exp_skew(&a).unwrap();
            let gap = linalg::fro_norm((&oracle - &got.view()).view());
            assert!(gap < 1e-10, "Taylor oracle gap {gap}");
        }
    }

    #[test]
    fn mat_exp_skew_is_orthogonal_up_to_large_norms() {
        let mut r = rng::stream(15, "son-exp-orth", 0);
        for _ in 0..20 {
            let g = Array2::from_shape_fn((5, 5), |_| rng::uniform_in(&mut r, -3.0, 3.0));
            let a = project_skew(g.view()).unwrap();
            let a = a.scaled(10.0 / a.hs_norm());
            let e = mat_exp_skew(&a).unwrap();
            assert!(e.orthogonality_error() <= 1e-10);
        }
        let mut bad = Array2::<f64>::zeros((2, 2));
        bad[[0, 1]] = f64::NAN;
        bad[[1, 0]] = f64::NAN;
        let nonfinite = SkewMatrix { m: bad };
        assert!(mat_exp_skew(&nonfinite).is_err());
    }

    #[test]
    fn haar_sample_entry_moments() {
        let n = 3;
        let draws = 100_000;
        let mut r = rng::stream(16, "son-haar", 0);
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..draws {
            let x = haar_sample(n, &mut r);
            let v = x.view()[[0, 0]];
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / draws as f64;
        let mean_sq = s2 / draws as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(
            (mean_sq - 1.0 / n as f64).abs() < 0.005,
            "mean square {mean_sq}"
        );
    }

    #[test]
    fn haar_sample_matches_marginal_cdf() {
        let n = 6;
        let draws = 10_000;
        let mut r = rng::stream(17, "son-haar-ks", 0);
        let mut xs: Vec<f64> = (0..draws)
            .map(|_| haar_sample(n, &mut r).view()[[0, 0]])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = xs.len() as f64;
        let mut ks: f64 = 0.0;
        for (idx, &x) in xs.iter().enumerate() {
            let f = haar_marginal_cdf(n, x).unwrap();
            ks = ks.max(((idx + 1) as f64 / m - f).abs());
            ks = ks.max((f - idx as f64 / m).abs());
        }
        assert!(ks < 0.02, "KS against marginal CDF: {ks}");
    }

    #[test]
    fn marginal_density_examples() {
        assert!((haar_marginal_density(3, 0.37).unwrap() - 0.5).abs() < 1e-14);
        assert!((haar_marginal_density(5, 0.0).unwrap() - 0.75).abs() < 1e-12);
        assert!(haar_marginal_density(5, 1.2).is_err());
        assert!(haar_marginal_density(2, 0.0).is_err());
        // Normalization: Simpson integral of the density itself.
        for n in [3, 4, 5, 6, 9] {
            let panels = 1 << 16;
            let h = 2.0 / panels as f64;
            let mut s =
                haar_marginal_density(n, -1.0).unwrap() + haar_marginal_density(n, 1.0).unwrap();
            for i in 1..panels {
                let x = -1.0 + i as f64 * h;
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                s += w * haar_marginal_density(n, x).unwrap();
            }
            let integral = s * h / 3.0;
            // Simpson converges slowly at the square-root endpoints for even
            // n; the CDF route (smooth substitution) is the precise one and
            // is checked against 1 below.
            assert!((integral - 1.0).abs() < 1e-4, "n={n}: integral {integral}");
            let total = haar_marginal_cdf(n, 1.0).unwrap();
            assert!((total - 1.0).abs() < 1e-8, "n={n}: cdf(1) = {total}");
            let mid = haar_marginal_cdf(n, 0.0).unwrap();
            assert!((mid - 0.5).abs() < 1e-12, "n={n}: cdf(0) = {mid}");
        }
    }

    #[test]
    fn reorthonormalize_fixed_point_and_drift_repair() {
        let mut r = rng::stream(18, "son-reorth", 0);
        let x = random_so(5, &mut r);
        let fixed = reorthonormalize(x.view()).unwrap();
        assert!(hs_distance(&fixed, &x) < 1e-14, "fixed point moved");

        let perturbation = Array2::from_shape_fn((5, 5), |_| rng::uniform_in(&mut r, -1e-6, 1e-6));
        let drifted = &x.view() + &perturbation;
        let repaired = reorthonormalize(drifted.view()).unwrap();
        assert!(repaired.orthogonality_error() < 1e-13);

        // Reflection component is a policy error, not silently corrected.
        let mut reflected = x.view().to_owned();
        for i in 0..5 {
            reflected[[i, 0]] = -reflected[[i, 0]];
        }
        assert!(reorthonormalize(reflected.view()).is_err());

        // Too-far-from-orthogonal input is a numeric error.
        let far = &x.view() * 2.0;
        assert!(reorthonormalize(far.view()).is_err());
    }

    #[test]
    fn so_matrix_from_array_validates() {
        assert!(SoMatrix::from_array(Array2::eye(3)).is_ok());
        let mut refl = Array2::<f64>::eye(3);
        refl[[0, 0]] = -1.0;
        assert!(SoMatrix::from_array(refl).is_err());
        assert!(SoMatrix::from_array(Array2::eye(3) * 1.5).is_err());
    }

    #[test]
    fn skew_from_upper_mirrors_exactly() {
        let mut g = Array2::<f64>::zeros((3, 3));
        g[[0, 1]] = 0.25;
        g[[0, 2]] = -1.5;
        g[[1, 2]] = 3.0;
        g[[1, 0]] = 99.0; // lower triangle is ignored
        let s = SkewMatrix::from_upper(g.view()).unwrap();
        assert_eq!(s.view()[[1, 0]], -0.25);
        assert_eq!(s.view()[[2, 0]], 1.5);
        assert_eq!(s.view()[[2, 1]], -3.0);
        assert_eq!(s.view()[[0, 0]], 0.0);
        assert!(SkewMatrix::from_upper(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn angle_helpers_reduce_to_torus() {
        assert!((normalize_angle(-0.5) - (TWO_PI - 0.5)).abs() < 1e-15);
        assert!(normalize_angle(TWO_PI) == 0.0);
        assert!((torus_distance(0.1, TWO_PI - 0.1) - 0.2).abs() < 1e-12);
    }
}
