//! Statistical post-processing: Kolmogorov–Smirnov distances, contraction
//! fits, schedule-time statistics, a total-variation proxy for walk mixing,
//! and the mixing-bound arithmetic.

use crate::coupling::{simulate_schedule, CouplingTrace, ScheduleFlavor};
use crate::error::{Error, Result};
use crate::kac_walk::{random_update_sequence, run_walk, WalkState};
use crate::randmat_lab::PhiEstimate;
use crate::rng;
use crate::son_core::{haar_marginal_cdf, plane_count};
use serde::Serialize;

/// Sup-norm distance between the empirical CDF of the samples and a
/// reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("ks_statistic: empty sample".into()));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let m = xs.len() as f64;
    let mut ks: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        ks = ks.max((i + 1) as f64 / m - f).max(f - i as f64 / m);
    }
    Ok(ks.clamp(0.0, 1.0))
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("ks_two_sample: empty sample".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite"));
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut ks: f64 = 0.0;
    // Advance both pointers through ties before comparing the CDFs.
    while i < xs.len() && j < ys.len() {
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= v {
            i += 1;
        }
        while j < ys.len() && ys[j] <= v {
            j += 1;
        }
        ks = ks.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(ks)
}

/// Least-squares fit of log distance against step index.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ContractionFit {
    pub slope: f64,
    pub r_squared: f64,
}

/// Fit log d_t over the positive-distance prefix of a slice.
pub fn log_linear_fit(distances: &[f64]) -> Result<ContractionFit> {
    let prefix: Vec<f64> = distances.iter().copied().take_while(|&d| d > 0.0).collect();
    if prefix.len() < 10 {
        return Err(Error::Domain(format!(
            "contraction fit needs >= 10 positive-distance entries, got {}",
            prefix.len()
        )));
    }
    let m = prefix.len() as f64;
    let ys: Vec<f64> = prefix.iter().map(|d| d.ln()).collect();
    let mean_t = (m - 1.0) / 2.0;
    let mean_y = ys.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut var_t = 0.0;
    let mut var_y = 0.0;
    for (t, &y) in ys.iter().enumerate() {
        let dt = t as f64 - mean_t;
        let dy = y - mean_y;
        cov += dt * dy;
        var_t += dt * dt;
        var_y += dy * dy;
    }
    let slope = cov / var_t;
    // An (up to rounding) constant trace carries no trend to explain.
    let flat = var_y <= m * (1e-12 * (1.0 + mean_y.abs())).powi(2);
    let r_squared = if flat {
        1.0
    } else {
        (cov * cov) / (var_t * var_y)
    };
    Ok(ContractionFit { slope, r_squared })
}

/// Contraction fit of a coupling trace (scaffold distances).
pub fn contraction_fit(trace: &CouplingTrace) -> Result<ContractionFit> {
    if trace.dist_scaffold.iter().all(|&d| d == 0.0) {
        return Err(Error::Domain("contraction fit: all distances zero".into()));
    }
    log_linear_fit(&trace.dist_scaffold)
}

/// One grid point of the centered-scaled schedule-time CDF.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CdfPoint {
    pub c: f64,
    pub empirical: f64,
    pub reference: f64,
}

/// Summary statistics of the marked-time horizon s_N over fresh uniform
/// plane sequences.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleTimeStats {
    pub flavor: String,
    pub n: usize,
    pub q: f64,
    pub trials: usize,
    pub mean: f64,
    pub variance: f64,
    /// Greedy only: P[(s_N − N log N)/N ≤ c] on a c grid against the
    /// extreme-value limit exp(−exp(−c)).
    pub cdf_grid: Vec<CdfPoint>,
}

impl ScheduleTimeStats {
    /// CSV of the centered-scaled CDF grid: columns (c, empirical,
    /// reference).
    pub fn write_cdf_csv(&self, mut w: impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "c,empirical,reference")?;
        for p in &self.cdf_grid {
            writeln!(w, "{},{:.16e},{:.16e}", p.c, p.empirical, p.reference)?;
        }
        Ok(())
    }
}

/// Simulate schedules and summarize s_N; for the greedy flavor the
/// centered-scaled empirical CDF is tabulated for comparison with the
/// coupon-collector limit law.
pub fn schedule_time_stats(
    flavor: ScheduleFlavor,
    n: usize,
    q: f64,
    trials: usize,
    master_seed: u64,
) -> Result<ScheduleTimeStats> {
    if trials < 100 {
        return Err(Error::Domain(format!(
            "schedule stats need >= 100 trials, got {trials}"
        )));
    }
    let count = plane_count(n) as f64;
    let mut times = Vec::with_capacity(trials);
    for idx in 0..trials {
        let mut stream = rng::stream(master_seed, "schedule-stats", idx as u64);
        let (schedule, _) = simulate_schedule(flavor, n, q, &mut stream)?;
        times.push(*schedule.marked_times.last().expect("nonempty") as f64);
    }
    let m = trials as f64;
    let mean = times.iter().sum::<f64>() / m;
    let variance = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (m - 1.0);
    let mut cdf_grid = Vec::new();
    if flavor == ScheduleFlavor::Greedy {
        for step in -4..=8 {
            let c = step as f64 * 0.5;
            let threshold = count * count.ln() + c * count;
            let empirical = times.iter().filter(|&&t| t < threshold).count() as f64 / m;
            cdf_grid.push(CdfPoint {
                c,
                empirical,
                reference: (-(-c).exp()).exp(),
            });
        }
    }
    Ok(ScheduleTimeStats {
        flavor: flavor.to_string(),
        n,
        q,
        trials,
        mean,
        variance,
        cdf_grid,
    })
}

/// A lower-bound proxy for the total-variation distance to the rotation-
/// invariant law, plus the exact dimension-counting flag.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TvProxy {
    pub n: usize,
    pub t: usize,
    pub replicates: usize,
    /// KS distance of the (1,1) entry against its stationary marginal; a
    /// lower bound for the total-variation distance, never an upper bound.
    pub ks: f64,
    /// True when t < N = n(n−1)/2: the chain is then supported on a set of
    /// measure zero, so the total-variation distance is exactly 1.
    pub rank_deficient: bool,
}

/// The (1,1) entry of one replicate walk of `t` steps from the identity.
pub fn tv_proxy_sample(n: usize, t: usize, master_seed: u64, index: u64) -> Result<f64> {
    let mut stream = rng::stream(master_seed, "tv-proxy", index);
    let seq = random_update_sequence(n, t, &mut stream);
    let state = run_walk(WalkState::identity(n), &seq)?;
    Ok(state.x.view()[[0, 0]])
}

/// Reduce replicate entries to the proxy report.
pub fn tv_proxy_from_entries(n: usize, t: usize, entries: &[f64]) -> Result<TvProxy> {
    let ks = ks_statistic(entries, |x| haar_marginal_cdf(n, x).unwrap_or(f64::NAN))?;
    Ok(TvProxy {
        n,
        t,
        replicates: entries.len(),
        ks,
        rank_deficient: t < plane_count(n),
    })
}

/// Run `replicates` independent walks from the identity for `t` steps and
/// compare the pooled (1,1) entries with the stationary marginal.
pub fn tv_proxy(n: usize, t: usize, replicates: usize, master_seed: u64) -> Result<TvProxy> {
    if replicates < 100 {
        return Err(Error::Domain(format!(
            "tv proxy needs >= 100 replicates, got {replicates}"
        )));
    }
    if n < 3 {
        return Err(Error::Domain(
            "tv proxy needs n >= 3 for the entry marginal".into(),
        ));
    }
    let mut entries = Vec::with_capacity(replicates);
    for idx in 0..replicates {
        entries.push(tv_proxy_sample(n, t, master_seed, idx as u64)?);
    }
    tv_proxy_from_entries(n, t, &entries)
}

/// Mixing-time arithmetic around a φ estimate. Three step counts are
/// reported: the exact dimension-counting lower bound N, the established
/// 10⁷·n⁴·log n upper bound, and a φ-based upper C·n²·log(n/φ) whose
/// constant C is a recorded reporting choice, not a proved value.
#[derive(Clone, Debug, Serialize)]
pub struct MixingBoundReport {
    pub n: usize,
    /// Capped φ ∈ (0, 1) used in the φ-based bound.
    pub phi: f64,
    pub phi_uncapped: f64,
    pub phi_cap: f64,
    pub lower_bound_steps: u64,
    pub quartic_upper_steps: f64,
    pub phi_based_upper_steps: f64,
    pub c_constant: f64,
    pub log_convention: String,
    pub notes: Vec<String>,
}

/// Reporting constant for the φ-based bound.
pub const MIXING_BOUND_C: f64 = 1000.0;

/// Assemble the mixing-bound report for a φ estimate.
pub fn mixing_bound_report(n: usize, phi: &PhiEstimate) -> Result<MixingBoundReport> {
    if n < 2 {
        return Err(Error::Domain("mixing bounds need n >= 2".into()));
    }
    let phi_value = phi.value;
    if !(phi_value > 0.0 && phi_value < 1.0) {
        return Err(Error::Domain(format!("phi {phi_value} outside (0, 1)")));
    }
    let nf = n as f64;
    Ok(MixingBoundReport {
        n,
        phi: phi_value,
        phi_uncapped: phi.uncapped.point,
        phi_cap: phi.cap,
        lower_bound_steps: plane_count(n) as u64,
        quartic_upper_steps: 1e7 * nf.powi(4) * nf.ln(),
        phi_based_upper_steps: MIXING_BOUND_C * nf.powi(2) * (nf / phi_value).ln(),
        c_constant: MIXING_BOUND_C,
        log_convention: "natural logarithm; phi-based bound uses ln(n/phi)".into(),
        notes: vec![
            "lower_bound_steps = n(n-1)/2: with fewer steps the chain lives on a measure-zero set"
                .into(),
            "quartic_upper_steps = 1e7 * n^4 * ln(n): proved asymptotic upper bound".into(),
            "phi_based_upper_steps = C * n^2 * ln(n/phi): the asymptotic statement fixes no \
             constant; C = 1000 is a recorded reporting choice"
                .into(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randmat_lab::{phi_estimate, DFlavor};
    use crate::son_core::haar_sample;

    #[test]
    fn ks_statistic_examples() {
        // Constant sample against the uniform CDF on [0,1].
        let ks = ks_statistic(&[0.5; 100], |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((ks - 0.5).abs() < 1e-12);
        // Samples entirely below the reference support.
        let ks = ks_statistic(&[-3.0, -2.0], |x| x.clamp(0.0, 1.0)).unwrap();
        assert!((ks - 1.0).abs() < 1e-12);
        assert!(ks_statistic(&[], |x| x).is_err());
    }

    #[test]
    fn ks_statistic_null_distribution() {
        // Uniform samples against the uniform CDF: the scaled statistic
        // stays below 1.5·1.36/√m in at least 95 of 100 seeded runs.
        let m = 10_000;
        let mut ok = 0;
        for seed in 0..100 {
            let mut r = rng::stream(80, "stats-ks", seed);
            let xs: Vec<f64> = (0..m).map(|_| rng::uniform_f64(&mut r)).collect();
            let ks = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
            if ks < 1.5 * 1.36 / (m as f64).sqrt() {
                ok += 1;
            }
        }
        assert!(ok >= 95, "null KS small in only {ok}/100 runs");
    }

    #[test]
    fn ks_statistic_invariant_under_monotone_reparametrization() {
        let mut r = rng::stream(81, "stats-ks-mono", 0);
        let xs: Vec<f64> = (0..500).map(|_| rng::uniform_f64(&mut r)).collect();
        let direct = ks_statistic(&xs, |x| x.clamp(0.0, 1.0)).unwrap();
        // Push both samples and reference through x ↦ x³ (increasing).
        let cubed: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
        let transformed = ks_statistic(&cubed, |y| y.clamp(0.0, 1.0).cbrt()).unwrap();
        assert!((direct - transformed).abs() < 1e-12);
    }

    #[test]
    fn two_sample_ks_on_identical_pools_is_zero() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 1.0, 4.0, 3.0];
        assert!(ks_two_sample(&a, &b).unwrap() == 0.0);
        let c = [10.0, 11.0];
        assert!((ks_two_sample(&a, &c).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contraction_fit_recovers_exact_geometric_decay() {
        let d: Vec<f64> = (0..200).map(|t| 0.9f64.powi(t)).collect();
        let fit = log_linear_fit(&d).unwrap();
        assert!(
            (fit.slope - 0.9f64.ln()).abs() < 1e-9,
            "slope {}",
            fit.slope
        );
        assert!((fit.r_squared - 1.0).abs() < 1e-9);

        let flat = vec![0.25; 50];
        let fit = log_linear_fit(&flat).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(
            (fit.r_squared - 1.0).abs() < 1e-12,
            "constant trace convention"
        );

        assert!(
            log_linear_fit(&[1.0, 0.5, 0.25]).is_err(),
            "needs >= 10 entries"
        );
        let trace = CouplingTrace {
            dist_main: vec![0.0; 20],
            dist_scaffold: vec![0.0; 20],
            coalesced: true,
            coalescence_step: Some(0),
        };
        assert!(
            contraction_fit(&trace).is_err(),
            "all-zero trace is a domain error"
        );
    }

    #[test]
    fn contractive_traces_fit_cleanly() {
        // Decaying coupled walks: negative slope with high R² in ≥ 90% of
        // seeds (distances truncated at the 1e-9 scale where rounding noise
        // takes over).
        let n = 6;
        let t = 15 * n * n;
        let mut good = 0;
        for seed in 0..20 {
            let mut r = rng::stream(82, "stats-contract", seed);
            let x0 = haar_sample(n, &mut r);
            let g = ndarray::Array2::from_shape_fn((n, n), |_| rng::uniform_in(&mut r, -1.0, 1.0));
            let k = crate::son_core::project_skew(g.view()).unwrap();
            let k = k.scaled(1e-3 / k.hs_norm());
            let y0 = crate::son_core::SoMatrix::from_array(
                crate::son_core::mat_exp_skew(&k)
                    .unwrap()
                    .view()
                    .dot(&x0.view()),
            )
            .unwrap();
            let run = crate::coupling::run_contractive_coupling(&x0, &y0, t, &mut r).unwrap();
            let decaying: Vec<f64> = run
                .trace
                .dist_scaffold
                .iter()
                .copied()
                .take_while(|&d| d > 1e-9)
                .collect();
            let fit = log_linear_fit(&decaying).unwrap();
            if fit.slope < 0.0 && fit.r_squared > 0.9 {
                good += 1;
            }
        }
        assert!(good >= 18, "clean fits in only {good}/20 runs");
    }

    #[test]
    fn greedy_schedule_means_match_coupon_collector() {
        // E[s_N] = N·H_N − 1 within 3 standard errors.
        for (n, trials) in [(3usize, 10_000usize), (4, 10_000), (5, 10_000)] {
            let stats = schedule_time_stats(ScheduleFlavor::Greedy, n, 0.0, trials, 83).unwrap();
            let count = plane_count(n) as f64;
            let harmonic: f64 = (1..=count as usize).map(|k| 1.0 / k as f64).sum();
            let expected = count * harmonic - 1.0;
            let sem = (stats.variance / trials as f64).sqrt();
            assert!(
                (stats.mean - expected).abs() <= 3.0 * sem + 1e-9,
                "n={n}: mean {} vs {expected} (sem {sem})",
                stats.mean
            );
        }
    }

    #[test]
    fn greedy_single_plane_case_is_degenerate() {
        let stats = schedule_time_stats(ScheduleFlavor::Greedy, 2, 0.0, 200, 84).unwrap();
        assert_eq!(stats.mean, 0.0);
        assert_eq!(stats.variance, 0.0);
    }

    #[test]
    fn cdf_grid_serializes_to_csv() {
        let stats = schedule_time_stats(ScheduleFlavor::Greedy, 3, 0.0, 200, 89).unwrap();
        let mut buf = Vec::new();
        stats.write_cdf_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("c,empirical,reference\n"));
        assert_eq!(text.lines().count(), stats.cdf_grid.len() + 1);
    }

    #[test]
    fn lazy_schedule_mean_matches_geometric_waits() {
        // N waits of mean N−1 beyond the forced gaps:
        // E[s_N] = (N−1)·gap + N(N−1).
        let n = 4;
        let stats = schedule_time_stats(ScheduleFlavor::Lazy, n, 1.0, 10_000, 85).unwrap();
        let count = plane_count(n) as f64;
        let gap = crate::coupling::lazy_gap(n, 1.0) as f64;
        let expected = (count - 1.0) * gap + count * (count - 1.0);
        let sem = (stats.variance / stats.trials as f64).sqrt();
        assert!(
            (stats.mean - expected).abs() <= 3.0 * sem,
            "mean {} vs {expected} (sem {sem})",
            stats.mean
        );
    }

    #[test]
    fn tv_proxy_point_mass_and_flags() {
        // T = 0: every replicate sits at the identity, so the entry sample
        // is the constant 1 and the KS distance is 1.
        let proxy = tv_proxy(4, 0, 200, 86).unwrap();
        assert!((proxy.ks - 1.0).abs() < 1e-9, "ks {}", proxy.ks);
        assert!(proxy.rank_deficient);

        let proxy = tv_proxy(4, plane_count(4), 200, 86).unwrap();
        assert!(!proxy.rank_deficient, "t = N is not rank deficient");
    }

    #[test]
    fn tv_proxy_ks_decreases_with_time_in_the_median() {
        let n = 4;
        let grid = [2usize, 20, 200];
        let mut medians = Vec::new();
        for &t in &grid {
            let mut kss: Vec<f64> = (0..20)
                .map(|seed| tv_proxy(n, t, 400, 870 + seed).unwrap().ks)
                .collect();
            kss.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(kss[kss.len() / 2]);
        }
        let mut inversions = 0;
        for w in medians.windows(2) {
            if w[1] > w[0] {
                inversions += 1;
            }
        }
        assert!(
            inversions <= 1,
            "medians not mostly decreasing: {medians:?}"
        );
    }

    #[test]
    fn mixing_bound_arithmetic() {
        let phi = phi_estimate(3, 1.0, DFlavor::Infinity, 200, 88).unwrap();
        let report = mixing_bound_report(10, &phi).unwrap();
        assert_eq!(report.lower_bound_steps, 45);
        let expected_quartic = 1e7 * 10f64.powi(4) * 10f64.ln();
        assert!((report.quartic_upper_steps - expected_quartic).abs() < 1.0);
        // Ordering invariant for all n ≥ 3 with φ at its cap.
        for n in 3..=30 {
            let mut capped = phi.clone();
            capped.value = crate::randmat_lab::phi_cap(n);
            let r = mixing_bound_report(n, &capped).unwrap();
            assert!(
                (r.lower_bound_steps as f64) < r.phi_based_upper_steps,
                "n={n}: lower vs phi-based"
            );
            assert!(
                r.phi_based_upper_steps < r.quartic_upper_steps,
                "n={n}: phi-based vs quartic"
            );
        }
        let mut bad = phi.clone();
        bad.value = 1.5;
        assert!(mixing_bound_report(10, &bad).is_err());
    }
}
