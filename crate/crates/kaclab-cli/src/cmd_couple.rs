//! `kaclab couple`: the full two-stage coupling pipeline per replicate:
//! scaffold, induced-map specs, coalescence attempt, realized main chains.

use crate::manifest::ManifestBuilder;
use crate::{numeric_error, usage_error, FlavorArg};
use kaclab::coupling::{build_nm_coupling, coalesce_attempt, CouplingTrace};
use kaclab::rng;
use kaclab::son_core::{displaced_from, haar_sample, hs_distance, normalize_angle, PlaneIndex};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

struct Replicate {
    trace: CouplingTrace,
    delta_x: Vec<f64>,
    delta_y: Vec<f64>,
    stage_two_draws: usize,
    failure: Option<String>,
}

fn run_replicate(
    n: usize,
    flavor: FlavorArg,
    q: f64,
    eps: f64,
    init_distance: f64,
    seed: u64,
    idx: u64,
) -> kaclab::Result<Replicate> {
    let mut stream = rng::stream(seed, "couple", idx);
    let x0 = haar_sample(n, &mut stream);
    let y0 = displaced_from(&x0, init_distance, &mut stream)?;
    let nm = build_nm_coupling(&x0, &y0, q, eps, flavor.to_flavor(), &mut stream)?;
    let dim = nm.spec_a.perturbation_dim();
    let (delta_x, delta_y, coalesced, stage_two_draws, failure) =
        match coalesce_attempt(&nm.spec_a, &nm.spec_b, &mut stream) {
            Ok(c) => (c.delta_x, c.delta_y, c.coalesced, c.stage_two_draws, None),
            Err(e) => (
                vec![0.0; dim],
                vec![0.0; dim],
                false,
                0,
                Some(e.to_string()),
            ),
        };

    // Realize the main chains with the coupled perturbations and record
    // their distances alongside the scaffold's.
    let marks = {
        let mut m = vec![None; nm.spec_a.horizon];
        for (l, &s) in nm.spec_a.marked_times.iter().enumerate() {
            m[s] = Some(l);
        }
        m
    };
    let mut x = nm.spec_a.base.clone();
    let mut y = nm.spec_b.base.clone();
    let mut dist_main = Vec::with_capacity(nm.spec_a.horizon + 1);
    dist_main.push(hs_distance(&x, &y));
    for t in 0..nm.spec_a.horizon {
        let plane = PlaneIndex::from_ordinal(n, nm.spec_a.planes[t])?;
        let (ax, ay) = match marks[t] {
            Some(l) => (
                normalize_angle(nm.spec_a.base_angles[t] + delta_x[l]),
                normalize_angle(nm.spec_b.base_angles[t] + delta_y[l]),
            ),
            None => (nm.spec_a.base_angles[t], nm.spec_b.base_angles[t]),
        };
        x.rotate_left_in_place(&plane, ax);
        y.rotate_left_in_place(&plane, ay);
        x.maybe_reorthonormalize()?;
        y.maybe_reorthonormalize()?;
        dist_main.push(hs_distance(&x, &y));
    }
    if coalesced {
        // From the coupling's viewpoint the chains are equal from T on and
        // share all later randomness.
        let last = dist_main.len() - 1;
        dist_main[last] = 0.0;
    }
    let trace = CouplingTrace {
        dist_main,
        dist_scaffold: nm.trace.dist_scaffold.clone(),
        coalesced,
        coalescence_step: if coalesced {
            Some(nm.spec_a.horizon)
        } else {
            None
        },
    };
    Ok(Replicate {
        trace,
        delta_x,
        delta_y,
        stage_two_draws,
        failure,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn run(
    n: usize,
    flavor: FlavorArg,
    q: f64,
    eps: f64,
    replicates: usize,
    init_distance: f64,
    seed: u64,
    threads: usize,
    out: &Path,
) -> ExitCode {
    if n < 2 {
        return usage_error("couple needs --n >= 2");
    }
    if !(eps > 0.0 && eps < std::f64::consts::PI) {
        return usage_error("couple needs 0 < --eps < pi");
    }
    if matches!(flavor, FlavorArg::Lazy) && q <= 0.0 {
        return usage_error("lazy coupling needs --q > 0");
    }
    if replicates < 1 {
        return usage_error("couple needs --replicates >= 1");
    }
    if init_distance < 0.0 {
        return usage_error("couple needs --init-distance >= 0");
    }
    let params = serde_json::json!({
        "n": n, "flavor": flavor.to_flavor().to_string(), "q": q, "eps": eps,
        "replicates": replicates, "init_distance": init_distance,
    });
    let mut manifest = match ManifestBuilder::new(out, "couple", params, seed, threads) {
        Ok(m) => m,
        Err(e) => return numeric_error(&e),
    };

    let results: Result<Vec<Replicate>, kaclab::Error> = (0..replicates)
        .into_par_iter()
        .map(|idx| run_replicate(n, flavor, q, eps, init_distance, seed, idx as u64))
        .collect();
    let results = match results {
        Ok(r) => r,
        Err(e) => return numeric_error(&e),
    };

    let mut traces = String::from("replicate,t,dist_main,dist_scaffold\n");
    for (idx, rep) in results.iter().enumerate() {
        for (t, (dm, ds)) in rep
            .trace
            .dist_main
            .iter()
            .zip(&rep.trace.dist_scaffold)
            .enumerate()
        {
            let _ = writeln!(traces, "{idx},{t},{dm:.16e},{ds:.16e}");
        }
    }
    if let Err(e) = manifest.emit("couple_traces.csv", traces.as_bytes()) {
        return numeric_error(&e);
    }

    let dim = results.first().map(|r| r.delta_x.len()).unwrap_or(0);
    let mut coal = String::from("replicate,coalesced,coalescence_step,stage_two_draws,failed");
    for l in 1..=dim {
        let _ = write!(coal, ",delta_x_{l}");
    }
    for l in 1..=dim {
        let _ = write!(coal, ",delta_y_{l}");
    }
    coal.push('\n');
    let mut coalesced_count = 0usize;
    let mut failures = 0usize;
    for (idx, rep) in results.iter().enumerate() {
        if rep.trace.coalesced {
            coalesced_count += 1;
        }
        if rep.failure.is_some() {
            failures += 1;
        }
        let _ = write!(
            coal,
            "{idx},{},{},{},{}",
            rep.trace.coalesced,
            rep.trace
                .coalescence_step
                .map(|s| s.to_string())
                .unwrap_or_default(),
            rep.stage_two_draws,
            rep.failure.is_some()
        );
        for v in rep.delta_x.iter().chain(&rep.delta_y) {
            let _ = write!(coal, ",{v:.16e}");
        }
        coal.push('\n');
    }
    if let Err(e) = manifest.emit("couple_coalescence.csv", coal.as_bytes()) {
        return numeric_error(&e);
    }

    let rates = serde_json::json!({
        "schema_version": crate::manifest::SCHEMA_VERSION,
        "replicates": replicates,
        "coalesced": coalesced_count,
        "rate": coalesced_count as f64 / replicates as f64,
        "solver_failures": failures,
        "failure_details": results
            .iter()
            .enumerate()
            .filter_map(|(i, r)| r.failure.as_ref().map(|f| format!("replicate {i}: {f}")))
            .collect::<Vec<_>>(),
    });
    let bytes = match serde_json::to_vec_pretty(&rates) {
        Ok(b) => b,
        Err(e) => return numeric_error(&e),
    };
    if let Err(e) = manifest.emit("couple_rates.json", &bytes) {
        return numeric_error(&e);
    }
    if let Err(e) = manifest.finish() {
        return numeric_error(&e);
    }
    println!(
        "coalescence rate {}/{replicates}{}",
        coalesced_count,
        if failures > 0 {
            format!(" ({failures} replicates failed)")
        } else {
            String::new()
        }
    );
    if failures > 0 {
        return numeric_error(&format!("{failures} of {replicates} replicates failed"));
    }
    ExitCode::SUCCESS
}
