//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! The default run covers everything that finishes in a few minutes:
//! clustering quality, the property checks, determinism and the smoke runs.
//! The two training comparisons take tens of minutes on one core and only run
//! with `--full` (or `CCRL_ACCEPTANCE_FULL=1`):
//!
//! ```text
//! cargo test --release -p ccrl --test acceptance -- --full
//! ```
//!
//! The process exits nonzero if any criterion that ran failed.

use std::path::Path;
use std::time::{Duration, Instant};

use ccrl::harness::{self, check, ExperimentConfig, PipelineMode, RunArtifacts};

struct Outcome {
    name: String,
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Outcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn print(&self) {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        println!("{tag} {}: {}", self.name, self.detail);
    }
}

fn preset_in(name: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = harness::preset(name).expect("preset parses");
    cfg.out_dir = out.to_path_buf();
    cfg
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn within(budget_min: u64, elapsed: Duration) -> (bool, String) {
    let ok = elapsed <= Duration::from_secs(budget_min * 60);
    (ok, format!("{:.1}s of {budget_min} min budget", elapsed.as_secs_f64()))
}

fn failed(name: &str, e: ccrl::Error) -> Outcome {
    Outcome::new(name, false, format!("error: {e}"))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Standard error of the difference of two means under a pooled variance.
fn pooled_se(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let sp2 = ((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0);
    (sp2 * (1.0 / na + 1.0 / nb)).sqrt()
}

fn final_means(art: &RunArtifacts, label: &str) -> Vec<f64> {
    art.seeds
        .iter()
        .map(|s| s.run(label).expect("run present").log.final_mean(0.1))
        .collect()
}

fn clustering() -> Outcome {
    let name = "1 clustering ARI (AR 3x20)";
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_in("fig3", dir.path());
    let (res, elapsed) = timed(|| harness::run_pipeline(&cfg, PipelineMode::Extract));
    let art = match res {
        Ok(a) => a,
        Err(e) => return failed(name, e),
    };
    let aris: Vec<f64> = art
        .seeds
        .iter()
        .map(|s| s.extraction.as_ref().map_or(0.0, |e| e.quality.ari))
        .collect();
    let good = aris.iter().filter(|&&a| a >= 0.9).count();
    let (in_budget, t) = within(15, elapsed);
    Outcome::new(
        name,
        good >= 2 && in_budget,
        format!("ARI per seed {aris:.3?}, {good}/{} >= 0.9, {t}", aris.len()),
    )
}

fn sharing_beats_baselines() -> Outcome {
    let name = "2 similarity beats none and global (AR 3x4)";
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = preset_in("fig2", dir.path());
    cfg.schemes.retain(|s| s.name() != "seed_sampling");
    let (res, elapsed) = timed(|| harness::run_pipeline(&cfg, PipelineMode::Train));
    let art = match res {
        Ok(a) => a,
        Err(e) => return failed(name, e),
    };
    let sim = final_means(&art, "similarity");
    let mut ok = true;
    let mut parts = vec![format!("similarity {sim:.2?}")];
    for base in ["none", "global"] {
        let b = final_means(&art, base);
        let diff = mean(&sim) - mean(&b);
        let se = pooled_se(&sim, &b);
        ok &= diff >= se;
        parts.push(format!("{base} {b:.2?} (diff {diff:.2}, pooled SE {se:.2})"));
    }
    let (in_budget, t) = within(30, elapsed);
    parts.push(t);
    Outcome::new(name, ok && in_budget, parts.join("; "))
}

fn sparse_coordination() -> Outcome {
    let name = "3 sparse reward coordination (AR 2x4, +-20)";
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_in("fig4", dir.path());
    let peak = 100.0 * cfg.task.spec().horizon as f64;
    let (res, elapsed) = timed(|| harness::run_pipeline(&cfg, PipelineMode::Train));
    let art = match res {
        Ok(a) => a,
        Err(e) => return failed(name, e),
    };
    let coord: Vec<f64> = final_means(&art, "similarity").iter().map(|v| v / peak).collect();
    let unco: Vec<f64> = final_means(&art, "similarity_uncoordinated").iter().map(|v| v / peak).collect();
    let good = coord.iter().filter(|&&f| f >= 0.5).count();
    let quiet = unco.iter().all(|&f| f < 0.1);
    let (in_budget, t) = within(30, elapsed);
    Outcome::new(
        name,
        good >= 2 && quiet && in_budget,
        format!("fraction of peak: coordinated {coord:.3?} ({good} >= 0.5), uncoordinated {unco:.3?}; {t}"),
    )
}

fn property(n: &str, r: check::CheckResult) -> Outcome {
    Outcome::new(n, r.passed, r.detail)
}

fn determinism() -> Outcome {
    let name = "9 fig3 theta.csv byte-identical across runs";
    let read = || -> ccrl::Result<Vec<u8>> {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = preset_in("fig3", dir.path());
        cfg.seeds = vec![7];
        harness::run_pipeline(&cfg, PipelineMode::Extract)?;
        Ok(std::fs::read(dir.path().join("seed_7").join("theta.csv"))?)
    };
    match (read(), read()) {
        (Ok(a), Ok(b)) => Outcome::new(name, !a.is_empty() && a == b, format!("{} bytes, identical: {}", a.len(), a == b)),
        (Err(e), _) | (_, Err(e)) => failed(name, e),
    }
}

fn smoke(preset: &str) -> Outcome {
    let name = format!("smoke {preset} (2x2 agents, 30 epochs)");
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset_in(preset, dir.path());
    let art = match harness::run_pipeline(&cfg, PipelineMode::Train) {
        Ok(a) => a,
        Err(e) => return failed(&name, e),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for s in &art.seeds {
        for r in &s.runs {
            let first = r.log.epoch_means()[0];
            let last = r.log.final_mean(0.1);
            ok &= last > first;
            parts.push(format!("seed {} {}: first epoch {first:.2}, final {last:.2}", s.seed, r.label));
        }
    }
    Outcome::new(&name, ok && !parts.is_empty(), parts.join("; "))
}

fn main() {
    let full = std::env::args().any(|a| a == "--full")
        || std::env::var("CCRL_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome| {
        o.print();
        outcomes.push(o);
    };

    record(clustering());
    if full {
        record(sharing_beats_baselines());
        record(sparse_coordination());
    } else {
        println!("SKIP 2 similarity beats none and global: needs --full");
        println!("SKIP 3 sparse reward coordination: needs --full");
    }
    record(property("4 HSIC oracle", check::hsic_oracle(20, 0)));
    let grads = [check::joint_loss_gradient(5, 0), check::ddpg_gradient(5, 0)];
    record(Outcome::new(
        "5 finite-difference gradients",
        grads.iter().all(|g| g.passed),
        grads.iter().map(|g| format!("{}: {}", g.name, g.detail)).collect::<Vec<_>>().join("; "),
    ));
    record(property("6 EM monotone", check::em_monotone(100, 0)));
    record(property("7 allocation exact", check::allocation_exact(1000, 0)));
    record(property("8 environment invariants", check::env_invariants(100, 0)));
    record(determinism());
    record(smoke("fig5_smoke"));
    record(smoke("fig6_smoke"));

    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name.as_str()).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
