//! Couplings of two Kac walks.
//!
//! Two constructions are provided. The *locally contractive* coupling runs
//! both chains on a shared plane sequence and steers the second chain's
//! angle so that the component of the discrepancy along the rotating plane
//! is cancelled; under it the Hilbert–Schmidt distance contracts in
//! expectation by a factor (1 − 1/N) per step while each chain remains a
//! faithful Kac walk (a uniform angle plus an independent shift is still
//! uniform on the torus).
//!
//! The *non-Markovian* coupling uses the contractive pair only as a
//! scaffold: it picks N marked times (greedy or lazy schedule), views each
//! endpoint as an induced map of the N perturbation coordinates inserted at
//! the marked times, and then couples the two perturbation vectors so that
//! the endpoints collide with the largest probability the two pushforward
//! laws allow. Coalescence is realized numerically: a Newton inversion of
//! the induced map plus a two-sided rejection against Gram-volume density
//! ratios.

use crate::error::{Error, Result};
use crate::jacobian;
use crate::kac_walk::{run_walk, Update, UpdateSequence, WalkState};
use crate::rng::{self, Stream};
use crate::son_core::{
    basis_element, hs_distance, hs_inner, normalize_angle, plane_count, project_skew, PlaneIndex,
    SoMatrix,
};
use std::io::Write;

/// Marked-time selection strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleFlavor {
    /// Mark the first occurrence of each new plane index.
    Greedy,
    /// Mark plane ℓ at the first time at least ⌈Q n² log n⌉ after the
    /// previous mark.
    Lazy,
}

impl std::fmt::Display for ScheduleFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScheduleFlavor::Greedy => write!(f, "greedy"),
            ScheduleFlavor::Lazy => write!(f, "lazy"),
        }
    }
}

/// Marked times s_1 < … < s_N with horizon T = s_N + 1.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub marked_times: Vec<usize>,
    pub horizon: usize,
    pub flavor: ScheduleFlavor,
    /// Lazy-gap constant Q (unused for greedy).
    pub q: f64,
}

/// The forced lazy gap ⌈Q n² log n⌉ between consecutive marked times.
pub fn lazy_gap(n: usize, q: f64) -> usize {
    (q * (n * n) as f64 * (n as f64).ln()).ceil() as usize
}

/// Greedy schedule over a plane-index sequence: s_ℓ is the (0-based) time
/// of the ℓ-th first occurrence of a new plane, so s_1 = 0 and
/// T = s_N + 1. Because the plane generators are orthonormal, the spanned
/// subspace grows exactly at first occurrences.
pub fn greedy_schedule<I>(planes: I, n: usize) -> Result<Schedule>
where
    I: IntoIterator<Item = usize>,
{
    let count = plane_count(n);
    let mut seen = vec![false; count + 1];
    let mut marked = Vec::with_capacity(count);
    for (t, plane) in planes.into_iter().enumerate() {
        if plane < 1 || plane > count {
            return Err(Error::Domain(format!(
                "plane {plane} out of range at time {t}"
            )));
        }
        if !seen[plane] {
            seen[plane] = true;
            marked.push(t);
            if marked.len() == count {
                let horizon = t + 1;
                return Ok(Schedule {
                    marked_times: marked,
                    horizon,
                    flavor: ScheduleFlavor::Greedy,
                    q: 0.0,
                });
            }
        }
    }
    Err(Error::InsufficientCoverage(format!(
        "greedy schedule saw {} of {count} planes before the sequence ended",
        marked.len()
    )))
}

/// Lazy schedule: s_1 is the first time plane 1 appears; s_{ℓ+1} is the
/// first time ≥ s_ℓ + ⌈Q n² log n⌉ at which plane ℓ+1 appears.
pub fn lazy_schedule<I>(planes: I, n: usize, q: f64) -> Result<Schedule>
where
    I: IntoIterator<Item = usize>,
{
    if q <= 0.0 {
        return Err(Error::Domain(format!("lazy schedule needs Q > 0, got {q}")));
    }
    let count = plane_count(n);
    let gap = lazy_gap(n, q);
    let mut marked: Vec<usize> = Vec::with_capacity(count);
    let mut next_admissible = 0usize;
    for (t, plane) in planes.into_iter().enumerate() {
        if plane < 1 || plane > count {
            return Err(Error::Domain(format!(
                "plane {plane} out of range at time {t}"
            )));
        }
        let target = marked.len() + 1;
        if t >= next_admissible && plane == target {
            marked.push(t);
            if marked.len() == count {
                let horizon = t + 1;
                return Ok(Schedule {
                    marked_times: marked,
                    horizon,
                    flavor: ScheduleFlavor::Lazy,
                    q,
                });
            }
            next_admissible = t + gap;
        }
    }
    Err(Error::InsufficientCoverage(format!(
        "lazy schedule marked {} of {count} planes before the sequence ended",
        marked.len()
    )))
}

/// Draw a fresh uniform plane sequence until the schedule completes.
pub fn simulate_schedule(
    flavor: ScheduleFlavor,
    n: usize,
    q: f64,
    rng: &mut Stream,
) -> Result<(Schedule, Vec<usize>)> {
    let count = plane_count(n);
    // Generous cap: beyond it the draw is astronomically unlikely and
    // indicates a logic error rather than bad luck.
    let cap = match flavor {
        ScheduleFlavor::Greedy => 200 * count * ((count as f64).ln().ceil() as usize + 2) + 1000,
        ScheduleFlavor::Lazy => (count + 1) * (lazy_gap(n, q) + 200 * count) + 1000,
    };
    let mut planes = Vec::new();
    let draw = |planes: &mut Vec<usize>, rng: &mut Stream| {
        let p = 1 + rng::uniform_index(rng, count);
        planes.push(p);
        p
    };
    match flavor {
        ScheduleFlavor::Greedy => {
            let mut seen = vec![false; count + 1];
            let mut marked = Vec::with_capacity(count);
            for t in 0..cap {
                let p = draw(&mut planes, rng);
                if !seen[p] {
                    seen[p] = true;
                    marked.push(t);
                    if marked.len() == count {
                        return Ok((
                            Schedule {
                                marked_times: marked,
                                horizon: t + 1,
                                flavor,
                                q: 0.0,
                            },
                            planes,
                        ));
                    }
                }
            }
        }
        ScheduleFlavor::Lazy => {
            if q <= 0.0 {
                return Err(Error::Domain(format!("lazy schedule needs Q > 0, got {q}")));
            }
            let gap = lazy_gap(n, q);
            let mut marked: Vec<usize> = Vec::with_capacity(count);
            let mut next_admissible = 0usize;
            for t in 0..cap {
                let p = draw(&mut planes, rng);
                if t >= next_admissible && p == marked.len() + 1 {
                    marked.push(t);
                    if marked.len() == count {
                        return Ok((
                            Schedule {
                                marked_times: marked,
                                horizon: t + 1,
                                flavor,
                                q,
                            },
                            planes,
                        ));
                    }
                    next_admissible = t + gap;
                }
            }
        }
    }
    Err(Error::InsufficientCoverage(format!(
        "schedule did not complete within {cap} draws"
    )))
}

/// The tuple defining an induced perturbation map: a base point X, a
/// horizon T, marked times S, the plane sequence I, the base angles η, and
/// the perturbation half-width c. The map sends x ∈ [−c, c]^{|S|} to the
/// walk endpoint obtained by adding x_ℓ to the angle at marked time s_ℓ.
#[derive(Clone, Debug)]
pub struct InducedMapSpec {
    pub base: SoMatrix,
    pub horizon: usize,
    pub marked_times: Vec<usize>,
    pub planes: Vec<usize>,
    pub base_angles: Vec<f64>,
    pub half_width: f64,
}

impl InducedMapSpec {
    pub fn n(&self) -> usize {
        self.base.dim()
    }

    /// Number of perturbation coordinates, |S|.
    pub fn perturbation_dim(&self) -> usize {
        self.marked_times.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let t = self.horizon;
        if self.planes.len() != t || self.base_angles.len() != t {
            return Err(Error::Domain(format!(
                "induced map: planes/angles length {}/{} vs horizon {t}",
                self.planes.len(),
                self.base_angles.len()
            )));
        }
        if self.marked_times.is_empty() {
            return Err(Error::Domain("induced map: no marked times".into()));
        }
        for w in self.marked_times.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Domain(
                    "induced map: marked times not increasing".into(),
                ));
            }
        }
        if *self.marked_times.last().expect("nonempty") >= t {
            return Err(Error::Domain(
                "induced map: marked time beyond horizon".into(),
            ));
        }
        let count = plane_count(n);
        if self.planes.iter().any(|&p| p < 1 || p > count) {
            return Err(Error::Domain(
                "induced map: plane ordinal out of range".into(),
            ));
        }
        if !(self.half_width > 0.0 && self.half_width < std::f64::consts::PI) {
            return Err(Error::Domain(format!(
                "induced map: half-width {} outside (0, π)",
                self.half_width
            )));
        }
        Ok(())
    }

    /// Do two specs describe perturbations of the same walk skeleton?
    pub fn compatible_with(&self, other: &Self) -> bool {
        self.n() == other.n()
            && self.horizon == other.horizon
            && self.marked_times == other.marked_times
            && self.planes == other.planes
            && self.half_width == other.half_width
    }

    /// JSON envelope: base point row-major plus (n, T, S, I, eta, c).
    pub fn to_json(&self) -> serde_json::Value {
        let n = self.n();
        let base: Vec<f64> = self.base.view().iter().copied().collect();
        serde_json::json!({
            "n": n,
            "T": self.horizon,
            "S": self.marked_times,
            "I": self.planes,
            "eta": self.base_angles,
            "c": self.half_width,
            "base": base,
        })
    }

    /// SHA-256 digest of the JSON envelope, for tagging derived artifacts.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(&self.to_json()).expect("spec serializes");
        format!("{:x}", Sha256::digest(bytes))
    }

    /// Parse the envelope written by [`Self::to_json`].
    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let bad = |what: &str| Error::Domain(format!("induced map json: bad field {what}"));
        let n = v["n"].as_u64().ok_or_else(|| bad("n"))? as usize;
        let horizon = v["T"].as_u64().ok_or_else(|| bad("T"))? as usize;
        let marked_times: Vec<usize> = v["S"]
            .as_array()
            .ok_or_else(|| bad("S"))?
            .iter()
            .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| bad("S")))
            .collect::<Result<_>>()?;
        let planes: Vec<usize> = v["I"]
            .as_array()
            .ok_or_else(|| bad("I"))?
            .iter()
            .map(|x| x.as_u64().map(|u| u as usize).ok_or_else(|| bad("I")))
            .collect::<Result<_>>()?;
        let base_angles: Vec<f64> = v["eta"]
            .as_array()
            .ok_or_else(|| bad("eta"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("eta")))
            .collect::<Result<_>>()?;
        let half_width = v["c"].as_f64().ok_or_else(|| bad("c"))?;
        let base_flat: Vec<f64> = v["base"]
            .as_array()
            .ok_or_else(|| bad("base"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| bad("base")))
            .collect::<Result<_>>()?;
        if base_flat.len() != n * n {
            return Err(bad("base length"));
        }
        let base = SoMatrix::from_array(
            ndarray::Array2::from_shape_vec((n, n), base_flat)
                .map_err(|e| Error::Domain(e.to_string()))?,
        )?;
        let spec = Self {
            base,
            horizon,
            marked_times,
            planes,
            base_angles,
            half_width,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Distances along a coupling run; once a pair coalesces the remaining
/// distances are exactly zero by construction (shared randomness onward).
#[derive(Clone, Debug, Default)]
pub struct CouplingTrace {
    pub dist_main: Vec<f64>,
    pub dist_scaffold: Vec<f64>,
    pub coalesced: bool,
    pub coalescence_step: Option<usize>,
}

impl CouplingTrace {
    /// CSV with columns (t, dist_main, dist_scaffold).
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,dist_main,dist_scaffold")?;
        for (t, (dm, ds)) in self.dist_main.iter().zip(&self.dist_scaffold).enumerate() {
            writeln!(w, "{t},{dm:.16e},{ds:.16e}")?;
        }
        Ok(())
    }
}

/// The second chain's angle under the locally contractive coupling.
///
/// With h = 𝒫(YXᵀ − Id) the returned angle is
/// η_y = η_x − (1/√2)⟨h, a_i⟩, which cancels the discrepancy component
/// along a_i to first order: the expected squared distance contracts by
/// (1 − 1/N) per uniformly chosen plane.
pub fn contractive_step(x: &SoMatrix, y: &SoMatrix, plane: &PlaneIndex, eta_x: f64) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::Domain("contractive_step: dimension mismatch".into()));
    }
    let n = x.dim();
    let mut g = y.view().dot(&x.view().t());
    for i in 0..n {
        g[[i, i]] -= 1.0;
    }
    let h = project_skew(g.view())?;
    let a = basis_element(n, plane);
    let shift = hs_inner(h.view(), a.view())? / std::f64::consts::SQRT_2;
    Ok(normalize_angle(eta_x - shift))
}

/// Outcome of a contractive coupling run over T steps.
#[derive(Clone, Debug)]
pub struct ContractiveRun {
    pub planes: Vec<usize>,
    pub eta_x: Vec<f64>,
    pub eta_y: Vec<f64>,
    pub trace: CouplingTrace,
    pub x_final: SoMatrix,
    pub y_final: SoMatrix,
}

fn contractive_run_on_planes(
    x0: &SoMatrix,
    y0: &SoMatrix,
    planes: &[usize],
    rng: &mut Stream,
) -> Result<ContractiveRun> {
    if x0.dim() != y0.dim() {
        return Err(Error::Domain("coupling: dimension mismatch".into()));
    }
    let n = x0.dim();
    let mut x = x0.clone();
    let mut y = y0.clone();
    let mut eta_x = Vec::with_capacity(planes.len());
    let mut eta_y = Vec::with_capacity(planes.len());
    let mut dist = Vec::with_capacity(planes.len() + 1);
    dist.push(hs_distance(&x, &y));
    for &p in planes {
        let plane = PlaneIndex::from_ordinal(n, p)?;
        let ex = rng::uniform_angle(rng);
        let ey = contractive_step(&x, &y, &plane, ex)?;
        x.rotate_left_in_place(&plane, ex);
        y.rotate_left_in_place(&plane, ey);
        x.maybe_reorthonormalize()?;
        y.maybe_reorthonormalize()?;
        eta_x.push(ex);
        eta_y.push(ey);
        dist.push(hs_distance(&x, &y));
    }
    let trace = CouplingTrace {
        dist_main: dist.clone(),
        dist_scaffold: dist,
        coalesced: false,
        coalescence_step: None,
    };
    Ok(ContractiveRun {
        planes: planes.to_vec(),
        eta_x,
        eta_y,
        trace,
        x_final: x,
        y_final: y,
    })
}

/// Run the locally contractive coupling for `t` steps on a shared uniform
/// plane sequence.
pub fn run_contractive_coupling(
    x0: &SoMatrix,
    y0: &SoMatrix,
    t: usize,
    rng: &mut Stream,
) -> Result<ContractiveRun> {
    let count = plane_count(x0.dim());
    let planes: Vec<usize> = (0..t).map(|_| 1 + rng::uniform_index(rng, count)).collect();
    contractive_run_on_planes(x0, y0, &planes, rng)
}

/// The assembled two-stage coupling: induced-map specs for both chains plus
/// the scaffold trace.
#[derive(Clone, Debug)]
pub struct NmCoupling {
    pub spec_a: InducedMapSpec,
    pub spec_b: InducedMapSpec,
    pub schedule: Schedule,
    pub trace: CouplingTrace,
}

/// Build the non-Markovian coupling scaffold: draw a shared plane sequence,
/// choose marked times per the schedule flavor, couple the scaffold chains
/// contractively, and package both endpoints as induced maps over the
/// perturbation box [−ε, ε]^N.
pub fn build_nm_coupling(
    x0: &SoMatrix,
    y0: &SoMatrix,
    q: f64,
    epsilon: f64,
    flavor: ScheduleFlavor,
    rng: &mut Stream,
) -> Result<NmCoupling> {
    if x0.dim() != y0.dim() {
        return Err(Error::Domain(
            "build_nm_coupling: dimension mismatch".into(),
        ));
    }
    if !(epsilon > 0.0 && epsilon < std::f64::consts::PI) {
        return Err(Error::Domain(format!("epsilon {epsilon} outside (0, π)")));
    }
    let (schedule, mut planes) = simulate_schedule(flavor, x0.dim(), q, rng)?;
    planes.truncate(schedule.horizon);
    let run = contractive_run_on_planes(x0, y0, &planes, rng)?;
    let spec_a = InducedMapSpec {
        base: x0.clone(),
        horizon: schedule.horizon,
        marked_times: schedule.marked_times.clone(),
        planes: planes.clone(),
        base_angles: run.eta_x.clone(),
        half_width: epsilon,
    };
    let spec_b = InducedMapSpec {
        base: y0.clone(),
        horizon: schedule.horizon,
        marked_times: schedule.marked_times.clone(),
        planes,
        base_angles: run.eta_y.clone(),
        half_width: epsilon,
    };
    Ok(NmCoupling {
        spec_a,
        spec_b,
        schedule,
        trace: run.trace,
    })
}

/// Result of a Newton inversion of an induced map.
#[derive(Clone, Debug)]
pub struct Inversion {
    pub x: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Convergence target for the inversion: ‖f(x) − target‖_HS at or below
/// this declares success.
pub const INVERSION_TOL: f64 = 1e-10;

const INVERSION_MAX_ITER: usize = 50;
const JACOBIAN_SINGULAR_TOL: f64 = 1e-12;

/// Solve f(x) = target for x in the perturbation box by Gauss–Newton on
/// the skew coordinates of the first-order log-discrepancy
/// 𝒫(f(x)ᵀ·target − Id).
///
/// Returns `converged = false` when the iteration budget runs out or an
/// iterate leaves the box inflated by 10%; a rank-deficient Jacobian is a
/// distinct [`Error::SingularJacobian`] failure.
pub fn invert_induced_map(
    spec: &InducedMapSpec,
    target: &SoMatrix,
    x0: &[f64],
) -> Result<Inversion> {
    spec.validate()?;
    let dim = spec.perturbation_dim();
    if x0.len() != dim {
        return Err(Error::Domain(format!(
            "invert: initial guess length {} vs perturbation dimension {dim}",
            x0.len()
        )));
    }
    let c = spec.half_width;
    if x0.iter().any(|v| v.abs() > c) {
        return Err(Error::Domain(
            "invert: initial guess outside the box".into(),
        ));
    }
    if target.dim() != spec.n() {
        return Err(Error::Domain("invert: target dimension mismatch".into()));
    }
    let n = spec.n();
    let full = plane_count(n);
    let basis: Vec<_> = (1..=full)
        .map(|i| basis_element(n, &PlaneIndex::from_ordinal(n, i).expect("valid")))
        .collect();
    let mut x = x0.to_vec();
    for iter in 0..=INVERSION_MAX_ITER {
        let fx = jacobian::induced_map_eval_unchecked(spec, &x)?;
        if hs_distance(&fx, target) <= INVERSION_TOL {
            return Ok(Inversion {
                x,
                converged: true,
                iterations: iter,
            });
        }
        if iter == INVERSION_MAX_ITER {
            break;
        }
        // Residual: skew coordinates of F − Id with F = f(x)ᵀ·target.
        let f_mat = fx.view().t().dot(&target.view());
        let mut g = f_mat.clone();
        for i in 0..n {
            g[[i, i]] -= 1.0;
        }
        let resid_skew = project_skew(g.view())?;
        let r = ndarray::Array1::from_shape_fn(full, |i| {
            hs_inner(resid_skew.view(), basis[i].view()).expect("same dims")
        });
        // Jacobian of the residual: column ℓ holds the coordinates of
        // −√2 𝒫(S̃_ℓ F) where S̃_ℓ is the transported unit generator.
        let gens = jacobian::transported_generators(spec, &x)?;
        let mut jac = ndarray::Array2::zeros((full, dim));
        for (l, s) in gens.iter().enumerate() {
            let m = s.dot(&f_mat) * (-std::f64::consts::SQRT_2);
            let sk = project_skew(m.view())?;
            for i in 0..full {
                jac[[i, l]] = hs_inner(sk.view(), basis[i].view()).expect("same dims");
            }
        }
        let sv = crate::linalg::singular_values(jac.view());
        if sv.first().copied().unwrap_or(0.0) < JACOBIAN_SINGULAR_TOL {
            return Err(Error::SingularJacobian {
                sigma_min: sv.first().copied().unwrap_or(0.0),
            });
        }
        // Normal equations JᵀJ Δ = −Jᵀ r (square when |S| = N).
        let jt = jac.t();
        let jtj = jt.dot(&jac);
        let jtr = jt.dot(&r);
        let step = crate::linalg::solve(jtj.view(), jtr.view())
            .ok_or(Error::SingularJacobian { sigma_min: sv[0] })?;
        for l in 0..dim {
            x[l] -= step[l];
        }
        if x.iter().any(|v| v.abs() > 1.1 * c) {
            return Ok(Inversion {
                x,
                converged: false,
                iterations: iter + 1,
            });
        }
    }
    Ok(Inversion {
        x,
        converged: false,
        iterations: INVERSION_MAX_ITER,
    })
}

/// Outcome of one coalescence attempt.
#[derive(Clone, Debug)]
pub struct Coalescence {
    pub delta_x: Vec<f64>,
    pub delta_y: Vec<f64>,
    pub coalesced: bool,
    /// Rejection-stage draws consumed (0 when the first stage accepted).
    pub stage_two_draws: usize,
}

const COALESCE_RETRY_BUDGET: usize = 100;

/// Maximally couple the two perturbation vectors.
///
/// δx is uniform on the box. The matching candidate δy* = f_B⁻¹(f_A(δx))
/// is accepted with probability min(1, J_A(δx)/J_B(δy*)), the ratio of
/// Gram-volume density factors; acceptance means the endpoints collide.
/// On rejection, fresh uniform candidates δy′ are accepted with probability
/// max(0, 1 − J_B(δy′)/J_A(f_A⁻¹(f_B(δy′)))), with an unsolvable inversion
/// counting as ratio 0. Both marginals are exactly uniform on the box and
/// the collision probability equals the overlap of the two pushforward
/// laws, up to solver failures, which are counted and surfaced as errors
/// past a retry budget rather than silently miscounted.
pub fn coalesce_attempt(
    spec_a: &InducedMapSpec,
    spec_b: &InducedMapSpec,
    rng: &mut Stream,
) -> Result<Coalescence> {
    spec_a.validate()?;
    spec_b.validate()?;
    if !spec_a.compatible_with(spec_b) {
        return Err(Error::Domain(
            "coalesce_attempt: specs differ in (n, T, S, I, c)".into(),
        ));
    }
    let dim = spec_a.perturbation_dim();
    let c = spec_a.half_width;
    let mut failures = 0usize;
    let mut failure_note = String::new();

    // Stage 1: push δx through f_A and try to match it under f_B.
    let delta_x: Vec<f64> = (0..dim).map(|_| rng::uniform_in(rng, -c, c)).collect();
    let p = jacobian::induced_map_eval(spec_a, &delta_x)?;
    let candidate = match invert_induced_map(spec_b, &p, &delta_x) {
        Ok(inv) => Some(inv),
        Err(e) => {
            failures += 1;
            failure_note = e.to_string();
            None
        }
    };
    if let Some(inv) = candidate {
        if inv.converged && inv.x.iter().all(|v| v.abs() <= c) {
            let vol_a = jacobian::gram_volume(spec_a, &delta_x)?;
            let vol_b = jacobian::gram_volume(spec_b, &inv.x)?;
            let accept = (vol_a / vol_b).min(1.0);
            if rng::uniform_f64(rng) < accept {
                return Ok(Coalescence {
                    delta_x,
                    delta_y: inv.x,
                    coalesced: true,
                    stage_two_draws: 0,
                });
            }
        }
    }

    // Stage 2: sample δy from the residual by rejection.
    for attempt in 1..=COALESCE_RETRY_BUDGET {
        let delta_y: Vec<f64> = (0..dim).map(|_| rng::uniform_in(rng, -c, c)).collect();
        let q_point = jacobian::induced_map_eval(spec_b, &delta_y)?;
        let back = match invert_induced_map(spec_a, &q_point, &delta_y) {
            Ok(inv) => inv,
            Err(e) => {
                failures += 1;
                failure_note = e.to_string();
                if failures >= COALESCE_RETRY_BUDGET {
                    return Err(Error::CouplingExhausted {
                        attempts: attempt,
                        details: format!("{failures} solver failures, last: {failure_note}"),
                    });
                }
                continue;
            }
        };
        let density_ratio = if back.converged && back.x.iter().all(|v| v.abs() <= c) {
            let vol_b = jacobian::gram_volume(spec_b, &delta_y)?;
            let vol_a = jacobian::gram_volume(spec_a, &back.x)?;
            vol_b / vol_a
        } else {
            0.0 // target outside the image of f_A: no mass to subtract
        };
        let accept = (1.0 - density_ratio).max(0.0);
        if rng::uniform_f64(rng) < accept {
            return Ok(Coalescence {
                delta_x,
                delta_y,
                coalesced: false,
                stage_two_draws: attempt,
            });
        }
    }
    Err(Error::CouplingExhausted {
        attempts: COALESCE_RETRY_BUDGET,
        details: format!(
            "rejection stage exhausted ({failures} solver failures{})",
            if failure_note.is_empty() {
                String::new()
            } else {
                format!(", last: {failure_note}")
            }
        ),
    })
}

/// Realize the main chains from a coupled perturbation draw: add δ_ℓ to the
/// base angle at marked time s_ℓ and run a plain walk.
pub fn realize_perturbed_walk(spec: &InducedMapSpec, delta: &[f64]) -> Result<WalkState> {
    spec.validate()?;
    if delta.len() != spec.perturbation_dim() {
        return Err(Error::Domain(
            "realize: perturbation length mismatch".into(),
        ));
    }
    let mut angles = spec.base_angles.clone();
    for (l, &s) in spec.marked_times.iter().enumerate() {
        angles[s] = normalize_angle(angles[s] + delta[l]);
    }
    let items: Vec<Update> = spec
        .planes
        .iter()
        .zip(&angles)
        .map(|(&plane, &angle)| Update { plane, angle })
        .collect();
    let seq = UpdateSequence::new(spec.n(), items)?;
    run_walk(WalkState::from_matrix(spec.base.clone()), &seq)
}
