//! `kaclab walk`: replicate walks plus the entry-marginal mixing table.

use crate::manifest::ManifestBuilder;
use crate::{numeric_error, usage_error};
use kaclab::kac_walk::{random_update_sequence, run_walk, WalkState};
use kaclab::rng;
use kaclab::son_core::plane_count;
use kaclab::stats::{tv_proxy_from_entries, tv_proxy_sample};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;
use std::process::ExitCode;

pub fn run(
    n: usize,
    steps: usize,
    replicates: usize,
    seed: u64,
    threads: usize,
    out: &Path,
) -> ExitCode {
    if n < 2 {
        return usage_error("walk needs --n >= 2");
    }
    if replicates < 1 {
        return usage_error("walk needs --replicates >= 1");
    }
    let params = serde_json::json!({
        "n": n, "steps": steps, "replicates": replicates,
    });
    let mut manifest = match ManifestBuilder::new(out, "walk", params, seed, threads) {
        Ok(m) => m,
        Err(e) => return numeric_error(&e),
    };

    // Per-replicate endpoint summaries, ordered by replicate index.
    let summaries: Result<Vec<(f64, f64)>, kaclab::Error> = (0..replicates)
        .into_par_iter()
        .map(|idx| {
            let mut stream = rng::stream(seed, "walk", idx as u64);
            let seq = random_update_sequence(n, steps, &mut stream);
            let state = run_walk(WalkState::identity(n), &seq)?;
            Ok((state.x.view()[[0, 0]], state.x.orthogonality_error()))
        })
        .collect();
    let summaries = match summaries {
        Ok(s) => s,
        Err(e) => return numeric_error(&e),
    };
    let mut summary_csv = String::from("replicate,steps,entry11,orthogonality_error\n");
    for (idx, (entry, orth)) in summaries.iter().enumerate() {
        let _ = writeln!(summary_csv, "{idx},{steps},{entry:.16e},{orth:.16e}");
    }
    if let Err(e) = manifest.emit("walk_summary.csv", summary_csv.as_bytes()) {
        return numeric_error(&e);
    }

    // Mixing table over a step grid (needs n >= 3 for the entry marginal).
    if n >= 3 {
        let count = plane_count(n);
        let mut grid = vec![
            0,
            count.saturating_sub(1),
            count,
            steps / 10,
            steps / 4,
            steps / 2,
            steps,
        ];
        grid.retain(|&t| t <= steps);
        grid.sort_unstable();
        grid.dedup();
        let mut table = String::from("t,ks,rank_deficient,replicates\n");
        for &t in &grid {
            let entries: Result<Vec<f64>, kaclab::Error> = (0..replicates)
                .into_par_iter()
                .map(|idx| tv_proxy_sample(n, t, seed, idx as u64))
                .collect();
            let entries = match entries {
                Ok(v) => v,
                Err(e) => return numeric_error(&e),
            };
            match tv_proxy_from_entries(n, t, &entries) {
                Ok(proxy) => {
                    let _ = writeln!(
                        table,
                        "{t},{:.16e},{},{replicates}",
                        proxy.ks, proxy.rank_deficient
                    );
                }
                Err(e) => return numeric_error(&e),
            }
        }
        if let Err(e) = manifest.emit("tv_proxy.csv", table.as_bytes()) {
            return numeric_error(&e);
        }
    }

    match manifest.finish() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => numeric_error(&e),
    }
}
