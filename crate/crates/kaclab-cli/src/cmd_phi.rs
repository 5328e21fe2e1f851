//! `kaclab phi`: the φ quantile experiment plus the mixing-bound report.

use crate::manifest::ManifestBuilder;
use crate::{numeric_error, usage_error, DFlavorArg};
use kaclab::randmat_lab::{phi_from_sorted_sigmas, sample_sigma_min};
use kaclab::stats::mixing_bound_report;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

#[allow(clippy::too_many_arguments)]
pub fn run(
    n: usize,
    flavor: DFlavorArg,
    q: f64,
    samples: usize,
    seed: u64,
    dump_samples: bool,
    threads: usize,
    out: &Path,
) -> ExitCode {
    if n < 2 {
        return usage_error("phi needs --n >= 2");
    }
    if samples < 100 {
        return usage_error("phi needs --samples >= 100");
    }
    if matches!(flavor, DFlavorArg::D) && q <= 0.0 {
        return usage_error("phi with --flavor d needs --q > 0");
    }
    let params = serde_json::json!({
        "n": n, "flavor": flavor.to_flavor().to_string(), "q": q, "samples": samples,
    });
    let mut manifest = match ManifestBuilder::new(out, "phi", params, seed, threads) {
        Ok(m) => m,
        Err(e) => return numeric_error(&e),
    };

    let sigmas: Result<Vec<f64>, kaclab::Error> = (0..samples)
        .into_par_iter()
        .map(|idx| sample_sigma_min(n, q, flavor.to_flavor(), seed, idx as u64))
        .collect();
    let sigmas = match sigmas {
        Ok(s) => s,
        Err(e) => return numeric_error(&e),
    };
    if dump_samples {
        let mut csv = String::from("index,sigma_min\n");
        for (idx, s) in sigmas.iter().enumerate() {
            let _ = writeln!(csv, "{idx},{s:.16e}");
        }
        if let Err(e) = manifest.emit("phi_sigma_samples.csv", csv.as_bytes()) {
            return numeric_error(&e);
        }
    }
    let mut sorted = sigmas;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite sigma"));
    let phi = match phi_from_sorted_sigmas(n, q, flavor.to_flavor(), &sorted, seed) {
        Ok(p) => p,
        Err(e) => return numeric_error(&e),
    };
    let bounds = match mixing_bound_report(n, &phi) {
        Ok(b) => b,
        Err(e) => return numeric_error(&e),
    };
    let report = serde_json::json!({
        "schema_version": crate::manifest::SCHEMA_VERSION,
        "phi": phi,
        "mixing_bounds": bounds,
    });
    let bytes = match serde_json::to_vec_pretty(&report) {
        Ok(b) => b,
        Err(e) => return numeric_error(&e),
    };
    if let Err(e) = manifest.emit("phi_report.json", &bytes) {
        return numeric_error(&e);
    }
    if let Err(e) = manifest.finish() {
        return numeric_error(&e);
    }
    println!(
        "phi (capped) = {:.6e}, uncapped quantile = {:.6e} [{:.6e}, {:.6e}]",
        phi.value, phi.uncapped.point, phi.uncapped.lower, phi.uncapped.upper
    );
    ExitCode::SUCCESS
}
