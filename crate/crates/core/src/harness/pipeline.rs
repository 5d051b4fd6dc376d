use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use super::data::generate_cause_effect;
use super::io::{atomic_write, fmt_f64, write_csv};
use super::metrics::{clustering_quality, ClusteringQuality};
use crate::agents::{agent_seed, make_slots, train_concurrent, SchemeKind, ShareScheme, TrainingLog};
use crate::anm_mm::{self, AnmMmFit, CauseEffectDataset};
use crate::clustering::{fit_components, responsibilities, GmmFit, ResponsibilityMatrix, SimilarityAllocation};
use crate::envs::{sample_env_group, LabeledEnv};
use crate::error::{Error, Result};
use crate::par;

// stream tags for per-stage seeds
const CAUSE_EFFECT_STREAM: usize = 1 << 20;
const ANM_STREAM: usize = CAUSE_EFFECT_STREAM + 1;
const GMM_STREAM: usize = CAUSE_EFFECT_STREAM + 2;
const SEED_NOISE_STREAM: usize = CAUSE_EFFECT_STREAM + 3;
const TRAIN_STREAM: usize = CAUSE_EFFECT_STREAM + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PipelineMode {
    /// Stop after the similarity allocation.
    Extract,
    /// Extraction (when a scheme needs it) followed by training.
    Train,
}

/// Output of the mechanism-extraction stages for one seed.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub dataset: CauseEffectDataset,
    pub fit: AnmMmFit,
    pub gmm: GmmFit,
    pub responsibilities: ResponsibilityMatrix,
    pub allocation: SimilarityAllocation,
    pub quality: ClusteringQuality,
}

/// One training run: a scheme, with or without coordinated exploration.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub label: String,
    pub scheme: SchemeKind,
    pub coordinated: bool,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub envs: Vec<LabeledEnv>,
    pub extraction: Option<Extraction>,
    pub runs: Vec<RunLog>,
    pub warnings: Vec<String>,
}

impl SeedRun {
    pub fn group_labels(&self) -> Vec<usize> {
        self.envs.iter().map(|e| e.group).collect()
    }

    pub fn run(&self, label: &str) -> Option<&RunLog> {
        self.runs.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub seeds: Vec<SeedRun>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn run_label(scheme: SchemeKind, coordinated: bool) -> String {
    if coordinated {
        scheme.name().to_string()
    } else {
        format!("{}_uncoordinated", scheme.name())
    }
}

/// Sampling of environments through the similarity allocation.
pub fn run_extraction(cfg: &ExperimentConfig, seed: u64, envs: &[LabeledEnv]) -> Result<Extraction> {
    let ex = &cfg.extraction;
    let specs: Vec<_> = envs.iter().map(|e| e.spec).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(seed, CAUSE_EFFECT_STREAM));
    let dataset = generate_cause_effect(
        &specs,
        ex.samples,
        ex.interval,
        ex.effect,
        ex.rollout_factor,
        ex.cause_jitter_sd,
        &mut rng,
    )
    .map_err(|e| e.at_stage("cause_effect"))?;
    let mut anm_cfg = ex.anm_mm.clone();
    anm_cfg.seed = agent_seed(seed ^ ex.anm_mm.seed, ANM_STREAM);
    let fit = anm_mm::fit(&dataset, &anm_cfg).map_err(|e| e.at_stage("anm_mm"))?;
    let gmm = fit_components(&fit.theta, ex.components, agent_seed(seed, GMM_STREAM))
        .map_err(|e| e.at_stage("gmm"))?;
    let resp = responsibilities(&gmm.model, &fit.theta).map_err(|e| e.at_stage("gmm"))?;
    let allocation = SimilarityAllocation::from_responsibilities(&resp, cfg.training.batch_size)
        .map_err(|e| e.at_stage("allocation"))?;
    let truth: Vec<usize> = envs.iter().map(|e| e.group).collect();
    let quality =
        clustering_quality(&fit.theta, &resp.hard_labels(), &truth).map_err(|e| e.at_stage("quality"))?;
    Ok(Extraction {
        dataset,
        fit,
        gmm,
        responsibilities: resp,
        allocation,
        quality,
    })
}

fn build_scheme(
    cfg: &ExperimentConfig,
    kind: SchemeKind,
    seed: u64,
    extraction: Option<&Extraction>,
) -> Result<(ShareScheme, usize)> {
    let n = cfg.agents();
    Ok(match kind {
        SchemeKind::Similarity => {
            let ex = extraction.ok_or_else(|| Error::invalid("similarity scheme needs an extraction"))?;
            (ShareScheme::Similarity(ex.allocation.clone()), cfg.training.batch_size)
        }
        SchemeKind::Global => (ShareScheme::Global, cfg.training.batch_size),
        SchemeKind::None => (ShareScheme::None, cfg.none_batch_size),
        SchemeKind::SeedSampling => {
            let sd = cfg.seed_noise_scale * cfg.task.kind.reward_scale().sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(agent_seed(seed, SEED_NOISE_STREAM));
            (ShareScheme::seed_sampling(n, sd, &mut rng)?, cfg.training.batch_size)
        }
    })
}

/// Runs every stage for one seed without touching the filesystem.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, mode: PipelineMode) -> Result<SeedRun> {
    let envs = sample_env_group(&cfg.task.spec(), &cfg.groups, seed).map_err(|e| e.at_stage("envs"))?;
    let mut warnings = Vec::new();
    let extraction = if mode == PipelineMode::Extract || cfg.needs_extraction() {
        let ex = run_extraction(cfg, seed, &envs)?;
        if ex.fit.hsic_clamped {
            warnings.push(format!("seed {seed}: HSIC was clamped at its floor during extraction"));
        }
        if !ex.gmm.reseeds.is_empty() {
            warnings.push(format!("seed {seed}: GMM re-seeded empty components {} times", ex.gmm.reseeds.len()));
        }
        Some(ex)
    } else {
        None
    };
    let mut runs = Vec::new();
    if mode == PipelineMode::Train {
        let specs: Vec<_> = envs.iter().map(|e| e.spec).collect();
        let mut variants = vec![true];
        if cfg.compare_uncoordinated {
            variants.push(false);
        }
        for &kind in &cfg.schemes {
            for &coordinated in &variants {
                let (scheme, batch) = build_scheme(cfg, kind, seed, extraction.as_ref()).map_err(|e| e.at_stage("train"))?;
                let mut tc = cfg.training.clone();
                tc.batch_size = batch;
                tc.coordinated = coordinated && tc.coordinated;
                tc.execution = cfg.execution;
                let label = run_label(kind, coordinated);
                // every scheme starts from the same agents and streams
                let mut slots = make_slots(&specs, &tc.ddpg, agent_seed(seed, TRAIN_STREAM))
                    .map_err(|e| e.at_stage("train"))?;
                let log = train_concurrent(&mut slots, &scheme, &tc).map_err(|e| e.at_stage("train"))?;
                if log.reallocated > 0 {
                    warnings.push(format!(
                        "seed {seed} {label}: {} quota entries drawn from the own buffer",
                        log.reallocated
                    ));
                }
                let skipped: usize = log.divergences.iter().sum();
                if skipped > 0 {
                    warnings.push(format!("seed {seed} {label}: {skipped} non-finite updates skipped"));
                }
                log::info!("seed {seed} {label}: final mean return {:.4}", log.final_mean(0.1));
                runs.push(RunLog {
                    label,
                    scheme: kind,
                    coordinated,
                    log,
                });
            }
        }
    }
    Ok(SeedRun {
        seed,
        envs,
        extraction,
        runs,
        warnings,
    })
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn curve_rows(run: &SeedRun) -> Vec<Vec<String>> {
    let labels = run.group_labels();
    let mut rows = Vec::new();
    for r in &run.runs {
        for (epoch, returns) in r.log.returns.iter().enumerate() {
            for (agent, ret) in returns.iter().enumerate() {
                rows.push(vec![
                    epoch.to_string(),
                    agent.to_string(),
                    labels[agent].to_string(),
                    fmt_f64(*ret),
                    r.label.clone(),
                    run.seed.to_string(),
                ]);
            }
        }
    }
    rows
}

const CURVE_HEADER: [&str; 6] = ["epoch", "agent_id", "group_label", "episode_return", "scheme", "seed"];

fn write_seed(dir: &Path, run: &SeedRun, files: &mut Vec<PathBuf>) -> Result<()> {
    let labels = run.group_labels();
    if let Some(ex) = &run.extraction {
        let theta = ex.fit.theta.matrix();
        let mut h = header(&["agent_id", "group_label"]);
        h.extend((0..theta.cols()).map(|q| format!("theta_{q}")));
        let p = dir.join("theta.csv");
        write_csv(
            &p,
            &h,
            (0..theta.rows()).map(|i| {
                let mut row = vec![i.to_string(), labels[i].to_string()];
                row.extend(theta.row(i).iter().map(|v| fmt_f64(*v)));
                row
            }),
        )?;
        files.push(p);

        let n = ex.allocation.agents();
        let p = dir.join("allocation.csv");
        write_csv(
            &p,
            &(0..n).map(|q| format!("agent_{q}")).collect::<Vec<_>>(),
            ex.allocation.k_bar.iter().map(|row| row.iter().map(|c| c.to_string()).collect::<Vec<_>>()),
        )?;
        files.push(p);

        let m = &ex.gmm.model;
        let mut h = header(&["component", "weight"]);
        h.extend((0..m.dim()).map(|q| format!("mean_{q}")));
        h.extend((0..m.dim()).map(|q| format!("var_{q}")));
        let p = dir.join("gmm.csv");
        write_csv(
            &p,
            &h,
            (0..m.components()).map(|c| {
                let mut row = vec![c.to_string(), fmt_f64(m.weights[c])];
                row.extend(m.means.row(c).iter().map(|v| fmt_f64(*v)));
                row.extend(m.variances.row(c).iter().map(|v| fmt_f64(*v)));
                row
            }),
        )?;
        files.push(p);

        let resp = ex.responsibilities.matrix();
        let mut h = header(&["agent_id", "group_label", "hard_label"]);
        h.extend((0..resp.cols()).map(|c| format!("v_{c}")));
        let hard = ex.responsibilities.hard_labels();
        let p = dir.join("responsibilities.csv");
        write_csv(
            &p,
            &h,
            (0..resp.rows()).map(|i| {
                let mut row = vec![i.to_string(), labels[i].to_string(), hard[i].to_string()];
                row.extend(resp.row(i).iter().map(|v| fmt_f64(*v)));
                row
            }),
        )?;
        files.push(p);

        let p = dir.join("quality.csv");
        write_csv(
            &p,
            &header(&["ari", "silhouette", "initial_loss", "final_loss", "iterations"]),
            [vec![
                fmt_f64(ex.quality.ari),
                fmt_f64(ex.quality.silhouette),
                fmt_f64(ex.fit.initial_loss),
                fmt_f64(ex.fit.final_loss),
                ex.fit.iterations.to_string(),
            ]],
        )?;
        files.push(p);
    }
    if !run.runs.is_empty() {
        let p = dir.join("curves.csv");
        write_csv(&p, &header(&CURVE_HEADER), curve_rows(run))?;
        files.push(p);
        let mut traj = Vec::new();
        for r in &run.runs {
            for et in &r.log.trajectories {
                for (agent, states) in et.states.iter().enumerate() {
                    for (t, s) in states.iter().enumerate() {
                        traj.push(vec![
                            r.label.clone(),
                            et.epoch.to_string(),
                            agent.to_string(),
                            labels[agent].to_string(),
                            t.to_string(),
                            fmt_f64(*s),
                        ]);
                    }
                }
            }
        }
        if !traj.is_empty() {
            let p = dir.join("trajectories.csv");
            write_csv(&p, &header(&["scheme", "epoch", "agent_id", "group_label", "t", "state"]), traj)?;
            files.push(p);
        }
    }
    Ok(())
}

/// Runs every seed and writes all artifacts under `cfg.out_dir`.
///
/// On failure an `INCOMPLETE` marker holding the diagnostic is left in the
/// output directory next to whatever was already written.
pub fn run_pipeline(cfg: &ExperimentConfig, mode: PipelineMode) -> Result<RunArtifacts> {
    cfg.validate().map_err(|e| e.at_stage("config"))?;
    let out = cfg.out_dir.clone();
    let marker = out.join("INCOMPLETE");
    let result = run_and_write(cfg, mode);
    match &result {
        Ok(_) => {
            if marker.exists() {
                std::fs::remove_file(&marker)?;
            }
        }
        Err(e) => {
            let _ = atomic_write(&marker, format!("{e}\n").as_bytes());
        }
    }
    result
}

fn run_and_write(cfg: &ExperimentConfig, mode: PipelineMode) -> Result<RunArtifacts> {
    let out = cfg.out_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::from(e).at_stage("output"))?;
    let mut files = Vec::new();
    let echo = out.join("config.toml");
    atomic_write(&echo, cfg.to_toml()?.as_bytes()).map_err(|e| e.at_stage("output"))?;
    files.push(echo);

    // seeds share nothing; agents inside each seed are parallel as well
    let results = par::map(cfg.execution, &cfg.seeds, |_, &seed| run_seed(cfg, seed, mode));
    let mut seeds = Vec::with_capacity(results.len());
    for r in results {
        seeds.push(r?);
    }
    let mut warnings = Vec::new();
    for run in &seeds {
        let dir = out.join(format!("seed_{}", run.seed));
        write_seed(&dir, run, &mut files).map_err(|e| e.at_stage("output"))?;
        warnings.extend(run.warnings.iter().cloned());
    }
    if mode == PipelineMode::Train {
        let p = out.join("curves.csv");
        write_csv(&p, &header(&CURVE_HEADER), seeds.iter().flat_map(curve_rows))
            .map_err(|e| e.at_stage("output"))?;
        files.push(p);
        let p = out.join("summary.csv");
        let rows = seeds.iter().flat_map(|s| {
            s.runs.iter().map(move |r| {
                let means = r.log.epoch_means();
                vec![
                    r.label.clone(),
                    s.seed.to_string(),
                    fmt_f64(means.first().copied().unwrap_or(f64::NAN)),
                    fmt_f64(r.log.final_mean(0.1)),
                ]
            })
        });
        write_csv(&p, &header(&["scheme", "seed", "first_epoch_mean", "final_mean_return"]), rows)
            .map_err(|e| e.at_stage("output"))?;
        files.push(p);
    }
    let p = out.join("warnings.log");
    let mut text = warnings.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    atomic_write(&p, text.as_bytes()).map_err(|e| e.at_stage("output"))?;
    files.push(p);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(RunArtifacts {
        out_dir: out,
        seeds,
        files,
        warnings,
    })
}
