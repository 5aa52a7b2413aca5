//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//! Scale: d = 2 fixtures, N = 10^4 trajectories, dt = 10^-3, t in [0, 1].

use std::process::ExitCode;
use std::time::Instant;

use qinstr::harness::{criteria, Check, Scale};

fn main() -> ExitCode {
    let full = Scale::Full;
    type Criterion = fn(Scale) -> Vec<Check>;
    let suite: Vec<(u32, &str, Criterion)> = vec![
        (1, "generator consistency", criteria::generator_consistency),
        (2, "semigroup trace, positivity, decay", |_| criteria::semigroup_properties()),
        (3, "factorization of the characteristic functional", |_| criteria::factorization()),
        (4, "martingale E_Q||sigma_t|| = 1", criteria::martingale),
        (5, "characteristic functional from trajectories", criteria::gphi),
        (6, "demixture E_P[rho_t] = eta_t", criteria::demixture),
        (7, "D2 spectral vs integral form", criteria::d2_oracle),
        (8, "entropy-rate identity", criteria::entropy_rate_identity),
        (9, "purity-rate identity", criteria::purity_rate_identity),
        (10, "classical relative entropies", criteria::classical_relative_entropies),
        (11, "mutual-entropy report", criteria::mutual_entropy),
        (12, "null model MODEL-I", criteria::null_model),
        (13, "reproducibility across workers", criteria::reproducibility),
    ];
    let verbose = std::env::var_os("ACCEPTANCE_VERBOSE").is_some();
    let mut all = true;
    for (id, name, run) in suite {
        let start = Instant::now();
        let checks = run(full);
        let passed = !checks.is_empty() && checks.iter().all(|c| c.passed);
        all &= passed;
        let worst = checks
            .iter()
            .filter(|c| c.threshold > 0.0)
            .map(|c| c.statistic / c.threshold)
            .fold(f64::NEG_INFINITY, f64::max);
        let ratio = if worst.is_finite() { format!(", worst statistic/threshold {worst:.3}") } else { String::new() };
        println!(
            "criterion {id:>2} {}: {name} ({} checks{ratio}, {:.1}s)",
            if passed { "PASS" } else { "FAIL" },
            checks.len(),
            start.elapsed().as_secs_f64()
        );
        for c in &checks {
            if verbose || !c.passed {
                println!(
                    "    {} {}: statistic {:.6e} threshold {:.6e} {:?}",
                    if c.passed { "ok  " } else { "FAIL" },
                    c.name,
                    c.statistic,
                    c.threshold,
                    c.details
                );
            }
        }
    }
    println!("acceptance: {}", if all { "all criteria pass" } else { "FAILURES" });
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
