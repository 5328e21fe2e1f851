//! `kaclab verify`: the inequality-oracle suite. Exit 0 iff every selected
//! oracle reports zero violations; otherwise exit 1 listing the failures.

use crate::manifest::ManifestBuilder;
use crate::{numeric_error, usage_error};
use kaclab::randmat_lab::{
    determinant_ratio_oracle, exp_approximation_oracle, small_ball_oracle,
    sphere_conditional_density_probe, tangent_closeness_oracle, telescoping_oracle,
    InequalityReport,
};
use kaclab::rng;
use std::path::Path;
use std::process::ExitCode;

const LEMMAS: [&str; 6] = [
    "telescoping",
    "determinant-ratio",
    "exp-approximation",
    "tangent-closeness",
    "small-ball",
    "sphere-density",
];

fn merge(lemma: &str, reports: Vec<InequalityReport>) -> InequalityReport {
    let trials = reports.iter().map(|r| r.trials).sum();
    let violations = reports.iter().map(|r| r.violations).sum();
    let worst_slack = reports
        .iter()
        .map(|r| r.worst_slack)
        .fold(f64::INFINITY, f64::min);
    InequalityReport {
        lemma: lemma.to_string(),
        trials,
        violations,
        worst_slack,
        parameters: serde_json::json!({
            "cells": reports.iter().map(|r| r.parameters.clone()).collect::<Vec<_>>(),
        }),
    }
}

fn build_report(lemma: &str, trials: usize, seed: u64) -> kaclab::Result<InequalityReport> {
    let mut stream = rng::stream(seed, &format!("verify-{lemma}"), 0);
    match lemma {
        "telescoping" => {
            let mut cells = Vec::new();
            let per_cell = trials.div_ceil(15).max(10);
            for k in 1..=5 {
                for n in [2usize, 4, 6] {
                    cells.push(telescoping_oracle(k, n, per_cell, &mut stream)?);
                }
            }
            Ok(merge(lemma, cells))
        }
        "determinant-ratio" => {
            let per_cell = trials.div_ceil(2).max(100);
            let cells = vec![
                determinant_ratio_oracle(3, 0.1, per_cell, &mut stream)?,
                determinant_ratio_oracle(2, 0.5, per_cell, &mut stream)?,
            ];
            Ok(merge(lemma, cells))
        }
        "exp-approximation" => {
            let per_cell = trials.div_ceil(2).max(50);
            let cells = vec![
                exp_approximation_oracle(3, 1.0, 1e-3, per_cell, &mut stream)?,
                exp_approximation_oracle(4, 1.0, 1e-3, per_cell, &mut stream)?,
            ];
            Ok(merge(lemma, cells))
        }
        "tangent-closeness" => {
            let per_cell = trials.div_ceil(2).max(50);
            let cells = vec![
                tangent_closeness_oracle(3, 1.0, 1e-4, per_cell, &mut stream)?,
                tangent_closeness_oracle(4, 1.0, 1e-4, per_cell, &mut stream)?,
            ];
            Ok(merge(lemma, cells))
        }
        "small-ball" => {
            let samples = trials.max(10_000);
            let mut cells = Vec::new();
            for &alpha in &[0.5, 1.0, 2.0] {
                for &beta in &[-1.0, 0.0, 1.0] {
                    for &eps in &[1e-4, 1e-2] {
                        for &x in &[0.0, 0.3] {
                            cells.push(small_ball_oracle(
                                alpha,
                                beta,
                                1.0,
                                eps,
                                x,
                                samples,
                                &mut stream,
                            )?);
                        }
                    }
                }
            }
            // The double-root configuration.
            cells.push(small_ball_oracle(
                1.0,
                -1.0,
                1.0,
                1e-4,
                -0.25,
                samples,
                &mut stream,
            )?);
            Ok(merge(lemma, cells))
        }
        "sphere-density" => {
            let samples = trials.max(10_000);
            let cells = vec![
                sphere_conditional_density_probe(10, 0, samples, &mut stream)?,
                sphere_conditional_density_probe(10, 4, samples, &mut stream)?,
                sphere_conditional_density_probe(10, 8, samples, &mut stream)?,
            ];
            Ok(merge(lemma, cells))
        }
        other => Err(kaclab::Error::Domain(format!("unknown lemma {other}"))),
    }
}

pub fn run(
    only: Option<&str>,
    trials: usize,
    seed: u64,
    self_test_negate: bool,
    out: &Path,
) -> ExitCode {
    if trials < 10 {
        return usage_error("verify needs --trials >= 10");
    }
    let selected: Vec<&str> = match only {
        Some(name) => {
            if !LEMMAS.contains(&name) {
                return usage_error(&format!(
                    "unknown lemma {name}; choose one of {}",
                    LEMMAS.join(", ")
                ));
            }
            vec![LEMMAS
                .iter()
                .copied()
                .find(|&l| l == name)
                .expect("checked")]
        }
        None => LEMMAS.to_vec(),
    };
    let params = serde_json::json!({
        "only": only, "trials": trials, "self_test_negate": self_test_negate,
    });
    let mut manifest = match ManifestBuilder::new(out, "verify", params, seed, 1) {
        Ok(m) => m,
        Err(e) => return numeric_error(&e),
    };

    let mut failing: Vec<String> = Vec::new();
    for lemma in &selected {
        let mut report = match build_report(lemma, trials, seed) {
            Ok(r) => r,
            Err(e) => return numeric_error(&e),
        };
        if self_test_negate {
            // Test fixture: invert the verdict to prove the harness turns
            // violations into a nonzero exit.
            report.violations = report.trials - report.violations;
        }
        let bytes = match serde_json::to_vec_pretty(&report) {
            Ok(b) => b,
            Err(e) => return numeric_error(&e),
        };
        let file = format!("verify_{}.json", lemma.replace('-', "_"));
        if let Err(e) = manifest.emit(&file, &bytes) {
            return numeric_error(&e);
        }
        println!(
            "{lemma}: {} violations={}/{} worst_slack={:.3e}",
            if report.passed() { "PASS" } else { "FAIL" },
            report.violations,
            report.trials,
            report.worst_slack
        );
        if !report.passed() {
            failing.push(lemma.to_string());
        }
    }
    if let Err(e) = manifest.finish() {
        return numeric_error(&e);
    }
    if failing.is_empty() {
        ExitCode::SUCCESS
    } else {
        eprintln!("violations in: {}", failing.join(", "));
        ExitCode::from(1)
    }
}
