//! The induced perturbation map and its derivative structure.
//!
//! For a spec 𝒜 = (X, T, S, I, η, c) the map f(x) multiplies the walk's
//! rotations in time order, adding x_ℓ to the angle at marked time s_ℓ.
//! Writing W_t for the partial product up to time t (including the base
//! point), the partial derivative at x is
//!
//!   ∂f/∂x_ℓ = f(x) · √2 S̃_ℓ,   S̃_ℓ = W_{s_ℓ}ᵀ a_{i_{s_ℓ}} W_{s_ℓ},
//!
//! a transported copy of the unit generator of the marked plane. The N×N
//! matrix D is the Gram matrix of the transported generators at x = 0:
//! D[i,j] = ⟨S̃_i, S̃_j⟩, with unit diagonal and all entries in [−1, 1];
//! consequently ⟨df₀(e_i), df₀(e_j)⟩ = 2·D[i,j], the factor 2 coming from
//! the √2 scaling that makes exp((θ+x)·√2 a) the actual plane rotation.
//! D∞ replaces the between-mark partial products by independent
//! Haar-distributed rotations.

use crate::coupling::InducedMapSpec;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::Stream;
use crate::son_core::{
    basis_element, haar_sample, hs_inner, plane_count, PlaneIndex, SkewMatrix, SoMatrix,
};
use ndarray::{Array1, Array2};
use std::io::Write;

/// Symmetric Gram-type matrix with exact unit diagonal.
#[derive(Clone, Debug)]
pub struct JacobianMatrix {
    m: Array2<f64>,
}

impl JacobianMatrix {
    /// Assemble from the strict upper triangle; diagonal is exactly 1 and
    /// the lower triangle is the bitwise mirror.
    fn from_upper<F: FnMut(usize, usize) -> f64>(order: usize, mut entry: F) -> Self {
        let mut m = Array2::eye(order);
        for i in 0..order {
            for j in (i + 1)..order {
                let v = entry(i, j);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
        Self { m }
    }

    pub fn order(&self) -> usize {
        self.m.nrows()
    }

    pub fn view(&self) -> ndarray::ArrayView2<'_, f64> {
        self.m.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.m
    }

    /// Row-major CSV, one matrix row per line.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        for i in 0..self.order() {
            let row: Vec<String> = (0..self.order())
                .map(|j| format!("{:.16e}", self.m[[i, j]]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// JSON envelope carrying the ambient dimension, the order N, the
    /// sampling seed, the digest of the generating spec (when there is
    /// one), and the entries row-major.
    pub fn json_envelope(
        &self,
        n: usize,
        seed: Option<u64>,
        spec_hash: Option<&str>,
    ) -> serde_json::Value {
        let rows: Vec<Vec<f64>> = (0..self.order())
            .map(|i| (0..self.order()).map(|j| self.m[[i, j]]).collect())
            .collect();
        serde_json::json!({
            "n": n,
            "N": self.order(),
            "seed": seed,
            "spec_hash": spec_hash,
            "rows": rows,
        })
    }
}

fn locate_marks(spec: &InducedMapSpec) -> Vec<Option<usize>> {
    let mut marks = vec![None; spec.horizon];
    for (l, &s) in spec.marked_times.iter().enumerate() {
        marks[s] = Some(l);
    }
    marks
}

/// Evaluate the induced map without the box check (the Newton solver walks
/// through a slightly inflated box).
pub(crate) fn induced_map_eval_unchecked(spec: &InducedMapSpec, x: &[f64]) -> Result<SoMatrix> {
    if x.len() != spec.perturbation_dim() {
        return Err(Error::Domain(format!(
            "induced map: point length {} vs perturbation dimension {}",
            x.len(),
            spec.perturbation_dim()
        )));
    }
    let n = spec.n();
    let marks = locate_marks(spec);
    let mut acc = spec.base.clone();
    for t in 0..spec.horizon {
        let plane = PlaneIndex::from_ordinal(n, spec.planes[t])?;
        let mut angle = spec.base_angles[t];
        if let Some(l) = marks[t] {
            angle += x[l];
        }
        acc.rotate_left_in_place(&plane, angle);
        acc.maybe_reorthonormalize()?;
    }
    Ok(acc)
}

/// f_{𝒜,c}(x): the walk endpoint with x_ℓ added to the marked angles.
/// The point must lie in the box [−c, c]^{|S|}.
pub fn induced_map_eval(spec: &InducedMapSpec, x: &[f64]) -> Result<SoMatrix> {
    spec.validate()?;
    let c = spec.half_width;
    if x.iter().any(|v| v.abs() > c) {
        return Err(Error::Domain(format!(
            "induced map: point outside [−{c}, {c}]^{}",
            spec.perturbation_dim()
        )));
    }
    induced_map_eval_unchecked(spec, x)
}

/// One marked block of the factorized induced map.
#[derive(Clone, Debug)]
pub struct FactorBlock {
    /// Product of the unmarked rotations strictly between the previous
    /// marked time and this one (applied before the marked rotation).
    pub prefix: SoMatrix,
    /// Base angle θ_k at the marked time.
    pub theta: f64,
    /// Generator b_k = √2·a_{i_{s_k}}, so exp((θ_k + x_k)·b_k) is the
    /// marked rotation itself.
    pub generator: SkewMatrix,
    /// Plane ordinal at the marked time.
    pub plane: usize,
}

/// The induced map regrouped into marked blocks:
/// f(x) = tail · ∏_{k=N..1} [exp((θ_k + x_k) b_k) · prefix_k] · base.
#[derive(Clone, Debug)]
pub struct BlockFactorization {
    pub blocks: Vec<FactorBlock>,
    /// Rotations after the last marked time (identity when T = s_N + 1).
    pub tail: SoMatrix,
    pub base: SoMatrix,
}

impl BlockFactorization {
    pub fn n(&self) -> usize {
        self.base.dim()
    }

    /// Recompose the map at a perturbation point.
    pub fn eval(&self, x: &[f64]) -> Result<SoMatrix> {
        if x.len() != self.blocks.len() {
            return Err(Error::Domain(
                "block eval: wrong perturbation length".into(),
            ));
        }
        let n = self.n();
        let mut acc = self.base.clone();
        for (k, block) in self.blocks.iter().enumerate() {
            acc = block.prefix.mul(&acc);
            let plane = PlaneIndex::from_ordinal(n, block.plane)?;
            acc.rotate_left_in_place(&plane, block.theta + x[k]);
        }
        Ok(self.tail.mul(&acc))
    }
}

/// Regroup an induced map into marked blocks with their interleaved
/// unmarked products.
pub fn block_factorize(spec: &InducedMapSpec) -> Result<BlockFactorization> {
    spec.validate()?;
    let n = spec.n();
    let marks = locate_marks(spec);
    let mut blocks = Vec::with_capacity(spec.perturbation_dim());
    let mut segment = SoMatrix::identity(n);
    for t in 0..spec.horizon {
        let plane = PlaneIndex::from_ordinal(n, spec.planes[t])?;
        if let Some(_l) = marks[t] {
            let generator = basis_element(n, &plane).scaled(std::f64::consts::SQRT_2);
            blocks.push(FactorBlock {
                prefix: segment,
                theta: spec.base_angles[t],
                generator,
                plane: spec.planes[t],
            });
            segment = SoMatrix::identity(n);
        } else {
            segment.rotate_left_in_place(&plane, spec.base_angles[t]);
        }
    }
    Ok(BlockFactorization {
        blocks,
        tail: segment,
        base: spec.base.clone(),
    })
}

/// Transported unit generators S̃_ℓ(x) = W_{s_ℓ}ᵀ a_{i_{s_ℓ}} W_{s_ℓ},
/// where W_t is the partial product of rotations before time t (times the
/// base point). The derivative of the induced map is
/// df_x(h) = f(x) · √2 Σ_ℓ h_ℓ S̃_ℓ(x).
pub(crate) fn transported_generators(spec: &InducedMapSpec, x: &[f64]) -> Result<Vec<Array2<f64>>> {
    if x.len() != spec.perturbation_dim() {
        return Err(Error::Domain(
            "transported generators: wrong point length".into(),
        ));
    }
    let n = spec.n();
    let marks = locate_marks(spec);
    let mut w = spec.base.clone();
    let mut out = Vec::with_capacity(spec.perturbation_dim());
    let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
    for t in 0..spec.horizon {
        let plane = PlaneIndex::from_ordinal(n, spec.planes[t])?;
        let mut angle = spec.base_angles[t];
        if let Some(l) = marks[t] {
            angle += x[l];
            let (k, lax) = plane.axes();
            let wv = w.view();
            let u = wv.row(k - 1);
            let v = wv.row(lax - 1);
            // S̃ = Wᵀ a W = (u vᵀ − v uᵀ)/√2 with u, v the rows of W.
            let mut s = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    s[[i, j]] = inv_sqrt2 * (u[i] * v[j] - v[i] * u[j]);
                }
            }
            out.push(s);
        }
        w.rotate_left_in_place(&plane, angle);
        w.maybe_reorthonormalize()?;
    }
    Ok(out)
}

/// Derivative of the induced map at x in direction h, as a tangent matrix
/// at f(x).
pub fn derivative_map(spec: &InducedMapSpec, x: &[f64], h: &[f64]) -> Result<Array2<f64>> {
    spec.validate()?;
    if h.len() != spec.perturbation_dim() {
        return Err(Error::Domain(
            "derivative_map: direction length mismatch".into(),
        ));
    }
    let n = spec.n();
    let gens = transported_generators(spec, x)?;
    let fx = induced_map_eval_unchecked(spec, x)?;
    let mut tangent = Array2::<f64>::zeros((n, n));
    for (l, s) in gens.iter().enumerate() {
        if h[l] != 0.0 {
            tangent += &(s * (h[l] * std::f64::consts::SQRT_2));
        }
    }
    Ok(fx.view().dot(&tangent))
}

/// Gram entries ⟨S̃_i, S̃_j⟩ specialised to the rank-two structure of the
/// transported generators: with S = (u vᵀ − v uᵀ)/√2 per generator,
/// ⟨S_i, S_j⟩ = (u_i·u_j)(v_i·v_j) − (u_i·v_j)(u_j·v_i).
fn generator_rows(spec: &InducedMapSpec) -> Result<Vec<(Array1<f64>, Array1<f64>)>> {
    let n = spec.n();
    let marks = locate_marks(spec);
    let mut w = spec.base.clone();
    let mut rows = Vec::with_capacity(spec.perturbation_dim());
    for t in 0..spec.horizon {
        let plane = PlaneIndex::from_ordinal(n, spec.planes[t])?;
        if marks[t].is_some() {
            let (k, l) = plane.axes();
            rows.push((
                w.view().row(k - 1).to_owned(),
                w.view().row(l - 1).to_owned(),
            ));
        }
        w.rotate_left_in_place(&plane, spec.base_angles[t]);
        w.maybe_reorthonormalize()?;
    }
    Ok(rows)
}

fn gram_entry(a: &(Array1<f64>, Array1<f64>), b: &(Array1<f64>, Array1<f64>)) -> f64 {
    let (u1, v1) = a;
    let (u2, v2) = b;
    u1.dot(u2) * v1.dot(v2) - u1.dot(v2) * u2.dot(v1)
}

/// The matrix D: Gram matrix of the transported unit generators at x = 0.
/// Symmetric with exact unit diagonal, entries in [−1, 1], and
/// ⟨df₀(e_i), df₀(e_j)⟩ = 2·D[i,j].
pub fn d_matrix(spec: &InducedMapSpec) -> Result<JacobianMatrix> {
    spec.validate()?;
    let rows = generator_rows(spec)?;
    Ok(JacobianMatrix::from_upper(rows.len(), |i, j| {
        gram_entry(&rows[i], &rows[j])
    }))
}

/// The Haar idealization D∞: the between-mark products are replaced by
/// independent Haar rotations, so D∞[i,j] = ⟨a_i, P_{i,j} a_j P_{i,j}⁻¹⟩
/// with P_{i,j} the product of the intervening Haar factors. Sampling
/// draws N−1 Haar matrices; the diagonal is exactly 1.
pub fn d_infinity(n: usize, rng: &mut Stream) -> JacobianMatrix {
    let count = plane_count(n);
    let mut cumulative = SoMatrix::identity(n);
    let mut rows: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(count);
    for ordinal in 1..=count {
        if ordinal > 1 {
            cumulative = cumulative.mul(&haar_sample(n, rng));
        }
        let (k, l) = PlaneIndex::from_ordinal(n, ordinal)
            .expect("valid ordinal")
            .axes();
        // Columns of the cumulative product play the role the rows played
        // for D: V = C a Cᵀ has the same rank-two form with u, v the
        // columns of C.
        let cv = cumulative.view();
        rows.push((cv.column(k - 1).to_owned(), cv.column(l - 1).to_owned()));
    }
    JacobianMatrix::from_upper(count, |i, j| gram_entry(&rows[i], &rows[j]))
}

/// √det of the derivative's Gram matrix at x: the density volume factor of
/// the pushforward of a uniform box draw.
pub fn gram_volume(spec: &InducedMapSpec, x: &[f64]) -> Result<f64> {
    spec.validate()?;
    let c = spec.half_width;
    if x.iter().any(|v| v.abs() > c) {
        return Err(Error::Domain("gram_volume: point outside the box".into()));
    }
    let gens = transported_generators(spec, x)?;
    let dim = gens.len();
    let mut g = Array2::zeros((dim, dim));
    for i in 0..dim {
        for j in i..dim {
            let v = 2.0 * hs_inner(gens[i].view(), gens[j].view())?;
            g[[i, j]] = v;
            g[[j, i]] = v;
        }
    }
    let det = linalg::determinant(g.view());
    if !(det.is_finite() && det > 0.0) {
        return Err(Error::DegenerateVolume(format!(
            "Gram determinant {det:.3e} not positive"
        )));
    }
    Ok(det.sqrt())
}

/// Numerical rank of the t-step derivative of the walk endpoint with every
/// angle treated as a coordinate: columns are the a-basis coordinates of
/// the left-translated partials, and the rank counts singular values above
/// 1e-8 of the largest.
pub fn numerical_rank(x0: &SoMatrix, planes: &[usize], angles: &[f64]) -> Result<usize> {
    if planes.len() != angles.len() {
        return Err(Error::Domain(
            "numerical_rank: planes/angles length mismatch".into(),
        ));
    }
    if planes.is_empty() {
        return Ok(0);
    }
    let n = x0.dim();
    let count = plane_count(n);
    let basis: Vec<SkewMatrix> = (1..=count)
        .map(|i| basis_element(n, &PlaneIndex::from_ordinal(n, i).expect("valid")))
        .collect();
    let mut w = x0.clone();
    let mut cols = Array2::<f64>::zeros((count, planes.len()));
    for (s, (&p, &theta)) in planes.iter().zip(angles).enumerate() {
        let plane = PlaneIndex::from_ordinal(n, p)?;
        let (k, l) = plane.axes();
        let wv = w.view();
        let u = wv.row(k - 1);
        let v = wv.row(l - 1);
        let inv_sqrt2 = 1.0 / std::f64::consts::SQRT_2;
        let mut gen = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                gen[[i, j]] = inv_sqrt2 * (u[i] * v[j] - v[i] * u[j]);
            }
        }
        for i in 0..count {
            cols[[i, s]] = std::f64::consts::SQRT_2 * hs_inner(gen.view(), basis[i].view())?;
        }
        w.rotate_left_in_place(&plane, theta);
    }
    let sv = linalg::singular_values(cols.view());
    let max = sv.last().copied().unwrap_or(0.0);
    if max <= 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > 1e-8 * max).count())
}
