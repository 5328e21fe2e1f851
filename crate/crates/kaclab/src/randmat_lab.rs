//! Singular-value and determinant experiments.
//!
//! The central quantity is the (1/√n)-quantile φ of the smallest singular
//! value of the random matrix D (or its Haar idealization D∞), estimated by
//! simulation with exact binomial order-statistic confidence bounds and
//! capped at (2n)⁻³⁰. Alongside it live Monte Carlo oracles for a family
//! of deterministic matrix inequalities and anti-concentration bounds:
//! each oracle samples random instances, evaluates both sides, and reports
//! the violation count and the worst slack, so a true inequality yields a
//! zero count and a false or misquoted one is flagged instead of silently
//! absorbed.

use crate::coupling::{simulate_schedule, InducedMapSpec, ScheduleFlavor};
use crate::error::{Error, Result};
use crate::jacobian::{self, JacobianMatrix};
use crate::linalg;
use crate::rng::{self, Stream};
use crate::son_core::{haar_sample, SoMatrix};
use crate::stats::ks_two_sample;
use ndarray::{Array2, ArrayView2};
use serde::Serialize;

/// Comparisons treat `value > bound + VIOLATION_EPS` as a violation, so
/// exact-arithmetic ties never count against an inequality.
pub const VIOLATION_EPS: f64 = 1e-10;

/// Singular values of a symmetric matrix: absolute eigenvalues, ascending.
/// The input must be symmetric within 1e-12 entrywise.
pub fn singular_values(m: ArrayView2<f64>) -> Result<Vec<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Domain("singular_values: matrix not square".into()));
    }
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            if (m[[i, j]] - m[[j, i]]).abs() > 1e-12 {
                return Err(Error::Domain(format!(
                    "singular_values: asymmetry {:.3e} at ({i},{j})",
                    (m[[i, j]] - m[[j, i]]).abs()
                )));
            }
        }
    }
    let mut sv: Vec<f64> = linalg::sym_eigenvalues(m)
        .into_iter()
        .map(f64::abs)
        .collect();
    sv.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(sv)
}

/// Which random matrix the φ experiment samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum DFlavor {
    /// D from a fresh lazy-schedule induced map over a random update
    /// sequence.
    LazyD,
    /// The Haar idealization D∞.
    Infinity,
}

impl std::fmt::Display for DFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DFlavor::LazyD => write!(f, "d"),
            DFlavor::Infinity => write!(f, "dinf"),
        }
    }
}

/// A Monte Carlo quantile with exact binomial order-statistic bounds.
#[derive(Clone, Debug, Serialize)]
pub struct QuantileEstimate {
    pub level: f64,
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence: f64,
    pub samples: usize,
    pub seed: u64,
}

/// The φ estimate: the (1/√n)-quantile of σ₁, capped at (2n)⁻³⁰. The
/// uncapped quantile is reported alongside since the cap is astronomically
/// small at desk scale.
#[derive(Clone, Debug, Serialize)]
pub struct PhiEstimate {
    pub n: usize,
    pub q: f64,
    pub flavor: DFlavor,
    /// min(cap, uncapped quantile point).
    pub value: f64,
    pub cap: f64,
    pub uncapped: QuantileEstimate,
}

/// Log-space binomial pmf, exponentiated termwise (underflow harmlessly
/// flushes sub-1e-300 tails to zero).
fn binomial_cdf_table(m: usize, p: f64) -> Vec<f64> {
    let lp = p.ln();
    let lq = (1.0 - p).ln();
    let mut log_pmf = vec![0.0f64; m + 1];
    log_pmf[0] = m as f64 * lq;
    for k in 0..m {
        log_pmf[k + 1] = log_pmf[k] + ((m - k) as f64 / (k + 1) as f64).ln() + lp - lq;
    }
    let mut cdf = Vec::with_capacity(m + 1);
    let mut acc = 0.0;
    for lv in log_pmf {
        acc += lv.exp();
        cdf.push(acc.min(1.0));
    }
    cdf
}

/// Two-sided order-statistic interval covering the true `level`-quantile
/// with probability at least `confidence`.
fn quantile_order_interval(sorted: &[f64], level: f64, confidence: f64) -> (f64, f64) {
    let m = sorted.len();
    let alpha = 1.0 - confidence;
    let cdf = binomial_cdf_table(m, level);
    // Lower index: the largest 1-based rank r with P[K ≤ r−1] ≤ α/2, where
    // K ~ Bin(m, level) counts samples below the true quantile.
    let mut lo = 1usize;
    for r in 1..=m {
        if cdf[r - 1] <= alpha / 2.0 {
            lo = r;
        } else {
            break;
        }
    }
    // Upper index: the smallest rank s with P[K ≥ s] ≤ α/2.
    let mut hi = m;
    for s in (1..=m).rev() {
        if 1.0 - cdf[s - 1] <= alpha / 2.0 {
            hi = s;
        } else {
            break;
        }
    }
    (sorted[lo - 1], sorted[hi.max(lo) - 1])
}

/// A fresh lazy-schedule induced map over a random update sequence:
/// uniform plane draws until the schedule completes, uniform base angles,
/// identity base point.
pub fn random_lazy_spec(
    n: usize,
    q: f64,
    half_width: f64,
    rng: &mut Stream,
) -> Result<InducedMapSpec> {
    let (schedule, mut planes) = simulate_schedule(ScheduleFlavor::Lazy, n, q, rng)?;
    planes.truncate(schedule.horizon);
    let base_angles: Vec<f64> = (0..schedule.horizon)
        .map(|_| rng::uniform_angle(rng))
        .collect();
    Ok(InducedMapSpec {
        base: SoMatrix::identity(n),
        horizon: schedule.horizon,
        marked_times: schedule.marked_times,
        planes,
        base_angles,
        half_width,
    })
}

/// One D sample from a fresh lazy-schedule induced map. The base point is
/// the identity; D does not depend on it.
pub fn sample_lazy_d(n: usize, q: f64, rng: &mut Stream) -> Result<JacobianMatrix> {
    jacobian::d_matrix(&random_lazy_spec(n, q, 0.05, rng)?)
}

/// Smallest singular value of one sampled matrix of the given flavor,
/// using the stream `(master_seed, "phi-sigma-<flavor>", index)`.
pub fn sample_sigma_min(
    n: usize,
    q: f64,
    flavor: DFlavor,
    master_seed: u64,
    index: u64,
) -> Result<f64> {
    let mut stream = rng::stream(master_seed, &format!("phi-sigma-{flavor}"), index);
    let matrix = match flavor {
        DFlavor::LazyD => sample_lazy_d(n, q, &mut stream)?,
        DFlavor::Infinity => jacobian::d_infinity(n, &mut stream),
    };
    let sv = singular_values(matrix.view())?;
    Ok(sv[0])
}

/// The cap (2n)⁻³⁰ applied to the φ estimate.
pub fn phi_cap(n: usize) -> f64 {
    (2.0 * n as f64).powi(-30)
}

/// Reduce sorted σ₁ samples to the φ estimate.
pub fn phi_from_sorted_sigmas(
    n: usize,
    q: f64,
    flavor: DFlavor,
    sorted: &[f64],
    master_seed: u64,
) -> Result<PhiEstimate> {
    let m = sorted.len();
    if m < 100 {
        return Err(Error::Domain(format!(
            "phi estimate needs >= 100 samples, got {m}"
        )));
    }
    let level = 1.0 / (n as f64).sqrt();
    let rank = ((level * m as f64).ceil() as usize).clamp(1, m);
    let point = sorted[rank - 1];
    let (lower, upper) = quantile_order_interval(sorted, level, 0.95);
    let cap = phi_cap(n);
    Ok(PhiEstimate {
        n,
        q,
        flavor,
        value: point.min(cap),
        cap,
        uncapped: QuantileEstimate {
            level,
            point,
            lower,
            upper,
            confidence: 0.95,
            samples: m,
            seed: master_seed,
        },
    })
}

/// Monte Carlo estimate of φ: draw `samples` independent matrices and take
/// the empirical (1/√n)-quantile of σ₁ with exact binomial bounds.
pub fn phi_estimate(
    n: usize,
    q: f64,
    flavor: DFlavor,
    samples: usize,
    master_seed: u64,
) -> Result<PhiEstimate> {
    if samples < 100 {
        return Err(Error::Domain(format!(
            "phi estimate needs >= 100 samples, got {samples}"
        )));
    }
    let mut sigmas = Vec::with_capacity(samples);
    for index in 0..samples {
        sigmas.push(sample_sigma_min(n, q, flavor, master_seed, index as u64)?);
    }
    sigmas.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    phi_from_sorted_sigmas(n, q, flavor, &sigmas, master_seed)
}

/// Verdict carrier for one inequality oracle.
#[derive(Clone, Debug, Serialize)]
pub struct InequalityReport {
    pub lemma: String,
    pub trials: u64,
    pub violations: u64,
    /// min over trials of (bound − value); negative iff a violation
    /// occurred.
    pub worst_slack: f64,
    pub parameters: serde_json::Value,
}

impl InequalityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

fn op_norm(m: ArrayView2<f64>) -> f64 {
    linalg::singular_values(m).last().copied().unwrap_or(0.0)
}

fn random_square(n: usize, rng: &mut Stream) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |_| rng::uniform_in(rng, -1.0, 1.0))
}

fn random_symmetric(n: usize, rng: &mut Stream) -> Array2<f64> {
    let g = random_square(n, rng);
    (&g + &g.t()) * 0.5
}

/// Telescoping product inequality:
/// ‖∏Q − ∏P‖_HS ≤ Σᵢ ‖∏_{ℓ<i}Q‖_Op ‖Qᵢ−Pᵢ‖_HS ‖∏_{ℓ>i}P‖_Op,
/// exercised on uniform-entry and orthogonal ensembles alternately.
pub fn telescoping_oracle(
    k: usize,
    n: usize,
    trials: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    if k < 1 {
        return Err(Error::Domain("telescoping oracle needs k >= 1".into()));
    }
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    for trial in 0..trials {
        let orthogonal = trial % 2 == 1;
        let draw = |rng: &mut Stream| -> Array2<f64> {
            if orthogonal {
                haar_sample(n, rng).into_inner()
            } else {
                random_square(n, rng)
            }
        };
        let qs: Vec<Array2<f64>> = (0..k).map(|_| draw(rng)).collect();
        let ps: Vec<Array2<f64>> = (0..k).map(|_| draw(rng)).collect();
        let mut q_prefix = vec![Array2::eye(n)];
        for q in &qs {
            q_prefix.push(q_prefix.last().expect("nonempty").dot(q));
        }
        let mut p_suffix = vec![Array2::eye(n); k + 1];
        for i in (0..k).rev() {
            p_suffix[i] = ps[i].dot(&p_suffix[i + 1]);
        }
        let value = linalg::fro_norm((&q_prefix[k] - &p_suffix[0]).view());
        let mut bound = 0.0;
        for i in 0..k {
            bound += op_norm(q_prefix[i].view())
                * linalg::fro_norm((&qs[i] - &ps[i]).view())
                * op_norm(p_suffix[i + 1].view());
        }
        if value > bound + VIOLATION_EPS {
            violations += 1;
        }
        worst = worst.min(bound - value);
    }
    Ok(InequalityReport {
        lemma: "telescoping_product".into(),
        trials: trials as u64,
        violations,
        worst_slack: worst,
        parameters: serde_json::json!({
            "k": k, "n": n,
            "ensembles": ["uniform_entries", "orthogonal"],
        }),
    })
}

/// Determinant-ratio estimate: for symmetric M₁, M₂ with
/// ‖M₁ − M₂‖_Op ≤ δ σ₁(M₁) it asserts
/// |det(M₂)/det(M₁) − 1| ≤ N^{N/2} δ^N. The oracle saturates the allowed
/// perturbation size (uniformly in [δ/2, δ]·σ₁).
pub fn determinant_ratio_oracle(
    dim: usize,
    delta: f64,
    trials: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    if !(0.0..1.0).contains(&delta) || delta == 0.0 {
        return Err(Error::Domain(format!("delta {delta} outside (0, 1)")));
    }
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    let bound = (dim as f64).powf(dim as f64 / 2.0) * delta.powi(dim as i32);
    for _ in 0..trials {
        // Well-conditioned base matrix: resample until σ₁ is bounded away
        // from zero.
        let (m1, sigma1) = loop {
            let m = random_symmetric(dim, rng);
            let sv = singular_values(m.view())?;
            if sv[0] >= 0.15 {
                break (m, sv[0]);
            }
        };
        let e = random_symmetric(dim, rng);
        let scale = delta * sigma1 * rng::uniform_in(rng, 0.5, 1.0) / op_norm(e.view());
        let m2 = &m1 + &(&e * scale);
        let det1 = linalg::determinant(m1.view());
        let det2 = linalg::determinant(m2.view());
        let value = (det2 / det1 - 1.0).abs();
        if value > bound + VIOLATION_EPS {
            violations += 1;
        }
        worst = worst.min(bound - value);
    }
    Ok(InequalityReport {
        lemma: "determinant_ratio".into(),
        trials: trials as u64,
        violations,
        worst_slack: worst,
        parameters: serde_json::json!({
            "dim": dim, "delta": delta, "bound": bound,
            "perturbation": "symmetric, op norm in [delta/2, delta]*sigma_min",
        }),
    })
}

/// Anti-concentration of a quadratic: for X with density bounded by C,
/// P[|αX² + βX − x| < ε] ≤ 4C√ε/√|α|. The Monte Carlo estimate (X uniform
/// on [0,1], C = 1) is compared with three standard errors of slack.
pub fn small_ball_oracle(
    alpha: f64,
    beta: f64,
    density_bound: f64,
    eps: f64,
    x: f64,
    samples: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    if alpha == 0.0 {
        return Err(Error::Domain("small-ball oracle needs alpha != 0".into()));
    }
    if samples == 0 {
        return Err(Error::Domain("small-ball oracle needs samples > 0".into()));
    }
    let mut hits = 0usize;
    for _ in 0..samples {
        let u = rng::uniform_f64(rng);
        if (alpha * u * u + beta * u - x).abs() < eps {
            hits += 1;
        }
    }
    let p_hat = hits as f64 / samples as f64;
    let mc_sigma = (p_hat * (1.0 - p_hat) / samples as f64).sqrt();
    let bound = 4.0 * density_bound * eps.sqrt() / alpha.abs().sqrt();
    let slack = bound + 3.0 * mc_sigma - p_hat;
    Ok(InequalityReport {
        lemma: "small_ball".into(),
        trials: samples as u64,
        violations: u64::from(p_hat > bound + 3.0 * mc_sigma + VIOLATION_EPS),
        worst_slack: slack,
        parameters: serde_json::json!({
            "alpha": alpha, "beta": beta, "x": x, "eps": eps,
            "density_bound": density_bound, "estimate": p_hat, "bound": bound,
        }),
    })
}

fn unit_sphere_vector(n: usize, rng: &mut Stream) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng::standard_normal(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Probe the two driver quantities behind the conditional sphere-density
/// bound: with X uniform on S^{n−1} and H a random k-dimensional span,
/// both P[1 − ‖P_H X‖² ≤ n⁻²⁰] and P[‖v⁺‖² ≤ n⁻⁵] must stay below n⁻²
/// (three standard errors of slack). Quantiles of the implied density
/// bound 2/(π√(‖v⁺‖²(1 − X_H))) are reported in the parameters.
pub fn sphere_conditional_density_probe(
    n: usize,
    k: usize,
    samples: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    if n < 3 || k > n - 2 {
        return Err(Error::Domain(format!(
            "sphere probe needs n >= 3 and k <= n-2, got n={n} k={k}"
        )));
    }
    if samples == 0 {
        return Err(Error::Domain("sphere probe needs samples > 0".into()));
    }
    let mut hits_xh = 0usize;
    let mut hits_vplus = 0usize;
    let mut density_bounds = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x = unit_sphere_vector(n, rng);
        // Orthonormalize k random sphere vectors to span H.
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v = unit_sphere_vector(n, rng);
            for b in &basis {
                let c = dot(&v, b);
                for i in 0..n {
                    v[i] -= c * b[i];
                }
            }
            let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
            if norm > 1e-10 {
                basis.push(v.into_iter().map(|t| t / norm).collect());
            }
        }
        let x_h: f64 = basis.iter().map(|b| dot(&x, b).powi(2)).sum();
        let last = unit_sphere_vector(n, rng);
        let mut v_plus = last.clone();
        for b in &basis {
            let c = dot(&last, b);
            for i in 0..n {
                v_plus[i] -= c * b[i];
            }
        }
        let v_plus_sq: f64 = v_plus.iter().map(|t| t * t).sum();
        let one_minus_xh = (1.0 - x_h).max(0.0);
        if one_minus_xh <= (n as f64).powi(-20) {
            hits_xh += 1;
        }
        if v_plus_sq <= (n as f64).powi(-5) {
            hits_vplus += 1;
        }
        let denom = (v_plus_sq * one_minus_xh).sqrt();
        density_bounds.push(if denom > 0.0 {
            2.0 / (std::f64::consts::PI * denom)
        } else {
            f64::INFINITY
        });
    }
    density_bounds.sort_by(|a, b| a.partial_cmp(b).expect("ordered"));
    let quantile = |p: f64| density_bounds[((p * samples as f64) as usize).min(samples - 1)];
    let target = (n as f64).powi(-2);
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    for hits in [hits_xh, hits_vplus] {
        let p_hat = hits as f64 / samples as f64;
        let sigma = (p_hat * (1.0 - p_hat) / samples as f64).sqrt();
        if p_hat > target + 3.0 * sigma + VIOLATION_EPS {
            violations += 1;
        }
        worst = worst.min(target + 3.0 * sigma - p_hat);
    }
    Ok(InequalityReport {
        lemma: "sphere_conditional_density".into(),
        trials: samples as u64,
        violations,
        worst_slack: worst,
        parameters: serde_json::json!({
            "n": n, "k": k,
            "p_one_minus_xh": hits_xh as f64 / samples as f64,
            "p_vplus": hits_vplus as f64 / samples as f64,
            "target": target,
            "density_bound_quantiles": {
                "p50": quantile(0.50), "p90": quantile(0.90), "p99": quantile(0.99),
            },
        }),
    })
}

/// First-order exponential model of the induced map around 0: for random
/// lazy-schedule specs with half-width c, the endpoint satisfies
/// ‖f(x) − f(0)·exp(dL_{f(0)⁻¹} df₀(x))‖_HS ≤ 8N²c² across the box (the
/// unsquared form; the squared left side is far smaller still and its
/// worst value is recorded in the parameters).
pub fn exp_approximation_oracle(
    n: usize,
    q: f64,
    c: f64,
    trials: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    let mut worst_squared = f64::INFINITY;
    for _ in 0..trials {
        let spec = random_lazy_spec(n, q, c, rng)?;
        let dim = spec.perturbation_dim();
        let x: Vec<f64> = (0..dim).map(|_| rng::uniform_in(rng, -c, c)).collect();
        let fx = jacobian::induced_map_eval(&spec, &x)?;
        let f0 = jacobian::induced_map_eval(&spec, &vec![0.0; dim])?;
        // dL_{f(0)⁻¹} df₀(x) is skew; re-project to keep the exponential's
        // input exactly antisymmetric against rounding.
        let tangent = jacobian::derivative_map(&spec, &vec![0.0; dim], &x)?;
        let pulled = f0.view().t().dot(&tangent);
        let log_term = crate::son_core::project_skew(pulled.view())?;
        let model = f0.mul(&crate::son_core::mat_exp_skew(&log_term)?);
        let value = crate::son_core::hs_distance(&fx, &model);
        let bound = 8.0 * (dim * dim) as f64 * c * c;
        if value > bound + VIOLATION_EPS {
            violations += 1;
        }
        worst = worst.min(bound - value);
        worst_squared = worst_squared.min(bound - value * value);
    }
    Ok(InequalityReport {
        lemma: "exp_approximation".into(),
        trials: trials as u64,
        violations,
        worst_slack: worst,
        parameters: serde_json::json!({
            "n": n, "q": q, "c": c,
            "form": "unsquared left-hand side vs 8 N^2 c^2",
            "worst_slack_squared_form": worst_squared,
        }),
    })
}

/// Tangent-field regularity of the induced map: for unit directions h and
/// x, y in the box of half-width c,
/// ‖df_x(h) − df_y(h)‖_HS ≤ 4N²c on random lazy-schedule specs.
pub fn tangent_closeness_oracle(
    n: usize,
    q: f64,
    c: f64,
    trials: usize,
    rng: &mut Stream,
) -> Result<InequalityReport> {
    let mut violations = 0u64;
    let mut worst = f64::INFINITY;
    for _ in 0..trials {
        let spec = random_lazy_spec(n, q, c, rng)?;
        let dim = spec.perturbation_dim();
        let x: Vec<f64> = (0..dim).map(|_| rng::uniform_in(rng, -c, c)).collect();
        let y: Vec<f64> = (0..dim).map(|_| rng::uniform_in(rng, -c, c)).collect();
        let mut h: Vec<f64> = (0..dim).map(|_| rng::standard_normal(rng)).collect();
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        for v in &mut h {
            *v /= norm;
        }
        let dx = jacobian::derivative_map(&spec, &x, &h)?;
        let dy = jacobian::derivative_map(&spec, &y, &h)?;
        let value = linalg::fro_norm((&dx - &dy).view());
        let bound = 4.0 * (dim * dim) as f64 * c;
        if value > bound + VIOLATION_EPS {
            violations += 1;
        }
        worst = worst.min(bound - value);
    }
    Ok(InequalityReport {
        lemma: "tangent_closeness".into(),
        trials: trials as u64,
        violations,
        worst_slack: worst,
        parameters: serde_json::json!({ "n": n, "q": q, "c": c }),
    })
}

/// One Q row of the D vs D∞ drift table.
#[derive(Clone, Debug, Serialize)]
pub struct DriftRow {
    pub q: f64,
    /// Two-sample KS between D[1,2] draws and D∞[1,2] draws.
    pub ks_entry_12: f64,
    /// Same for the fixed off-diagonal pair (1,3).
    pub ks_entry_13: f64,
}

/// Entrywise distributional drift of D toward D∞ as Q grows.
#[derive(Clone, Debug, Serialize)]
pub struct DriftReport {
    pub n: usize,
    pub samples: usize,
    pub rows: Vec<DriftRow>,
    /// Two independent D∞ pools compared with each other.
    pub control_ks_12: f64,
    /// 95% two-sample null band 1.358·√(2/m).
    pub null_band_95: f64,
}

/// Sample D entries across a Q grid and measure the 1-D KS distance to the
/// matching D∞ entries; the distance is expected to fall as Q grows.
pub fn d_vs_dinfinity_drift(
    n: usize,
    q_grid: &[f64],
    samples: usize,
    master_seed: u64,
) -> Result<DriftReport> {
    if n < 3 {
        return Err(Error::Domain("drift table needs n >= 3".into()));
    }
    if q_grid.iter().any(|&q| q <= 0.0) {
        return Err(Error::Domain("drift table needs positive Q values".into()));
    }
    let pull = |m: &JacobianMatrix| (m.view()[[0, 1]], m.view()[[0, 2]]);
    let mut inf_12 = Vec::with_capacity(samples);
    let mut inf_13 = Vec::with_capacity(samples);
    let mut ctrl_12 = Vec::with_capacity(samples);
    for idx in 0..samples {
        let m = jacobian::d_infinity(n, &mut rng::stream(master_seed, "drift-dinf", idx as u64));
        let (a, b) = pull(&m);
        inf_12.push(a);
        inf_13.push(b);
        let m2 = jacobian::d_infinity(
            n,
            &mut rng::stream(master_seed, "drift-dinf-control", idx as u64),
        );
        ctrl_12.push(m2.view()[[0, 1]]);
    }
    let mut rows = Vec::with_capacity(q_grid.len());
    for (qi, &q) in q_grid.iter().enumerate() {
        let mut d_12 = Vec::with_capacity(samples);
        let mut d_13 = Vec::with_capacity(samples);
        for idx in 0..samples {
            let mut stream = rng::stream(master_seed, &format!("drift-d-{qi}"), idx as u64);
            let m = sample_lazy_d(n, q, &mut stream)?;
            let (a, b) = pull(&m);
            d_12.push(a);
            d_13.push(b);
        }
        rows.push(DriftRow {
            q,
            ks_entry_12: ks_two_sample(&d_12, &inf_12)?,
            ks_entry_13: ks_two_sample(&d_13, &inf_13)?,
        });
    }
    Ok(DriftReport {
        n,
        samples,
        rows,
        control_ks_12: ks_two_sample(&ctrl_12, &inf_12)?,
        null_band_95: 1.358 * (2.0 / samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn singular_values_examples() {
        let id = Array2::<f64>::eye(4);
        assert_eq!(singular_values(id.view()).unwrap(), vec![1.0; 4]);
        let d = array![[2.0, 0.0], [0.0, -0.5]];
        let sv = singular_values(d.view()).unwrap();
        assert!((sv[0] - 0.5).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);
        let asym = array![[0.0, 1.0], [0.0, 0.0]];
        assert!(singular_values(asym.view()).is_err());
    }

    #[test]
    fn singular_value_product_matches_determinant() {
        let mut r = rng::stream(60, "rml-sv", 0);
        for _ in 0..20 {
            let m = random_symmetric(5, &mut r);
            let sv = singular_values(m.view()).unwrap();
            let prod: f64 = sv.iter().product();
            let det = linalg::determinant(m.view()).abs();
            assert!(
                (prod - det).abs() <= 1e-8 * det.max(1e-4),
                "∏σ = {prod} vs |det| = {det}"
            );
        }
    }

    #[test]
    fn singular_values_invariant_under_conjugation() {
        let mut r = rng::stream(61, "rml-conj", 0);
        let m = random_symmetric(4, &mut r);
        let u = haar_sample(4, &mut r);
        let conj = u.view().dot(&m).dot(&u.view().t());
        let a = singular_values(m.view()).unwrap();
        let b = singular_values(conj.view()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn phi_estimate_is_deterministic_and_capped() {
        let a = phi_estimate(3, 1.0, DFlavor::Infinity, 200, 99).unwrap();
        let b = phi_estimate(3, 1.0, DFlavor::Infinity, 200, 99).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.uncapped.point.to_bits(), b.uncapped.point.to_bits());
        // At n = 3 the cap 6⁻³⁰ is far below any sampled σ₁ quantile.
        assert_eq!(a.value, a.cap);
        assert!(a.uncapped.point > a.cap);
        assert!(a.uncapped.lower <= a.uncapped.point && a.uncapped.point <= a.uncapped.upper);
        assert!(phi_estimate(3, 1.0, DFlavor::Infinity, 50, 0).is_err());
    }

    #[test]
    fn quantile_interval_covers_known_uniform_quantile() {
        // Synthetic σ₁ ~ U[0,1]: the true q-quantile is q itself. The 95%
        // order-statistic interval must cover it in at least 93 of 100
        // seeded repetitions.
        let level = 1.0 / 3f64.sqrt();
        let mut covered = 0;
        for seed in 0..100 {
            let mut r = rng::stream(62, "rml-cover", seed);
            let mut xs: Vec<f64> = (0..400).map(|_| rng::uniform_f64(&mut r)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (lo, hi) = quantile_order_interval(&xs, level, 0.95);
            if lo <= level && level <= hi {
                covered += 1;
            }
        }
        assert!(covered >= 93, "coverage {covered}/100");
    }

    #[test]
    fn telescoping_oracle_holds() {
        let mut r = rng::stream(63, "rml-tel", 0);
        for k in 1..=5 {
            for n in [2, 4, 6] {
                let rep = telescoping_oracle(k, n, 200, &mut r).unwrap();
                assert!(
                    rep.passed(),
                    "violations at k={k} n={n}: {}",
                    rep.violations
                );
                assert!(rep.worst_slack >= -VIOLATION_EPS);
            }
        }
    }

    #[test]
    fn telescoping_single_factor_is_tight() {
        // k = 1: both sides equal ‖Q − P‖_HS.
        let mut r = rng::stream(64, "rml-tel1", 0);
        let rep = telescoping_oracle(1, 5, 100, &mut r).unwrap();
        assert!(rep.passed());
        assert!(rep.worst_slack.abs() < 1e-12, "slack {}", rep.worst_slack);
    }

    #[test]
    fn determinant_ratio_unperturbed_is_exact() {
        // With M₂ = M₁ the deviation is 0 and can never violate.
        let mut r = rng::stream(65, "rml-det0", 0);
        let m1 = random_symmetric(3, &mut r);
        let det = linalg::determinant(m1.view());
        assert!((det / det - 1.0).abs() == 0.0);
    }

    #[test]
    fn determinant_ratio_scalar_case_holds() {
        // dim = 1: |m₂/m₁ − 1| ≤ δ is genuinely true.
        let mut r = rng::stream(66, "rml-det1", 0);
        let rep = determinant_ratio_oracle(1, 0.4, 2000, &mut r).unwrap();
        assert!(rep.passed(), "violations: {}", rep.violations);
    }

    #[test]
    fn determinant_ratio_bound_fails_beyond_scalar_case() {
        // The stated bound N^{N/2} δ^N drops the first-order term Tr(M⁻¹E)
        // of the determinant ratio, which is of order δ, so for δ^N ≪ δ it
        // is violated by typical perturbations. The oracle must surface
        // this rather than pass it.
        let mut r = rng::stream(67, "rml-det3", 0);
        let rep = determinant_ratio_oracle(3, 0.1, 500, &mut r).unwrap();
        assert!(
            !rep.passed(),
            "expected violations for dim=3, delta=0.1; worst slack {}",
            rep.worst_slack
        );
        assert!(rep.worst_slack < 0.0);
    }

    #[test]
    fn small_ball_oracle_examples() {
        let mut r = rng::stream(68, "rml-sb", 0);
        // α=1, β=0, x=0: the true probability is √ε = 0.1 ≤ 0.4.
        let rep = small_ball_oracle(1.0, 0.0, 1.0, 0.01, 0.0, 100_000, &mut r).unwrap();
        assert!(rep.passed());
        let est = rep.parameters["estimate"].as_f64().unwrap();
        assert!((est - 0.1).abs() < 0.01, "estimate {est}");

        // Double root at 1/2 (α=1, β=−1, x=−1/4): still below 4√ε.
        let rep = small_ball_oracle(1.0, -1.0, 1.0, 1e-4, -0.25, 100_000, &mut r).unwrap();
        assert!(rep.passed());

        assert!(small_ball_oracle(0.0, 1.0, 1.0, 0.01, 0.0, 10, &mut r).is_err());
    }

    #[test]
    fn small_ball_grid_sweep_has_no_violations() {
        let mut r = rng::stream(69, "rml-sb-grid", 0);
        for &alpha in &[0.5, 1.0, 2.0] {
            for &beta in &[-1.0, 0.0, 1.0] {
                for &eps in &[1e-4, 1e-2] {
                    let rep =
                        small_ball_oracle(alpha, beta, 1.0, eps, 0.3, 100_000, &mut r).unwrap();
                    assert!(
                        rep.passed(),
                        "violation at alpha={alpha} beta={beta} eps={eps}"
                    );
                }
            }
        }
    }

    #[test]
    fn sphere_probe_passes_and_handles_degenerate_hyperplane() {
        let mut r = rng::stream(70, "rml-sphere", 0);
        let rep = sphere_conditional_density_probe(10, 8, 10_000, &mut r).unwrap();
        assert!(rep.passed(), "probe probabilities exceeded n^-2");
        let rep0 = sphere_conditional_density_probe(10, 0, 2_000, &mut r).unwrap();
        assert!(rep0.passed());
        assert_eq!(rep0.parameters["p_one_minus_xh"].as_f64().unwrap(), 0.0);
        assert!(sphere_conditional_density_probe(10, 9, 10, &mut r).is_err());
    }

    #[test]
    fn sphere_probe_seeds_agree_within_noise() {
        let mut r1 = rng::stream(71, "rml-sphere-a", 0);
        let mut r2 = rng::stream(71, "rml-sphere-b", 0);
        let a = sphere_conditional_density_probe(10, 8, 10_000, &mut r1).unwrap();
        let b = sphere_conditional_density_probe(10, 8, 10_000, &mut r2).unwrap();
        let pa = a.parameters["p_vplus"].as_f64().unwrap();
        let pb = b.parameters["p_vplus"].as_f64().unwrap();
        let sigma = (pa.max(pb).max(1e-4) / 10_000f64).sqrt();
        assert!((pa - pb).abs() <= 3.0 * sigma + 3e-3, "pa={pa} pb={pb}");
    }

    #[test]
    fn exp_approximation_oracle_holds_with_margin() {
        let mut r = rng::stream(72, "rml-exp", 0);
        for n in [3usize, 4] {
            let rep = exp_approximation_oracle(n, 1.0, 1e-3, 100, &mut r).unwrap();
            assert!(rep.passed(), "violations at n={n}: {}", rep.violations);
            assert!(rep.worst_slack > 0.0);
        }
    }

    #[test]
    fn tangent_closeness_oracle_holds_with_margin() {
        let mut r = rng::stream(73, "rml-tan", 0);
        for n in [3usize, 4] {
            let rep = tangent_closeness_oracle(n, 1.0, 1e-4, 100, &mut r).unwrap();
            assert!(rep.passed(), "violations at n={n}: {}", rep.violations);
            assert!(rep.worst_slack > 0.0);
        }
    }

    #[test]
    fn drift_table_is_monotone_toward_the_haar_limit() {
        let report = d_vs_dinfinity_drift(3, &[0.1, 5.0], 1000, 77).unwrap();
        let first = report.rows.first().unwrap();
        let last = report.rows.last().unwrap();
        assert!(
            last.ks_entry_12 < first.ks_entry_12,
            "KS did not fall: Q=0.1 -> {}, Q=5 -> {}",
            first.ks_entry_12,
            last.ks_entry_12
        );
        assert!(
            report.control_ks_12 < report.null_band_95,
            "control KS {} outside the 95% band {}",
            report.control_ks_12,
            report.null_band_95
        );

        // At a large forced gap the finite-Q law is already close.
        let wide = d_vs_dinfinity_drift(4, &[5.0], 1000, 78).unwrap();
        assert!(
            wide.rows[0].ks_entry_12 < 0.1,
            "n=4, Q=5: KS {} not below 0.1",
            wide.rows[0].ks_entry_12
        );
    }
}
