use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use evidar_core::agent::{
    collect_stage1, evaluate_matrix, write_eval_csv, write_step_csv, AgentKind, EvalReport, PolicyNet, PolicyTrainer,
    Recognizer, UpdateStats,
};
use evidar_core::bench::{generate_test_set, Level, TestSet};
use evidar_core::edl::{train_recognizer, write_metrics_csv, EvidentialClassifier, TrainStatus};
use evidar_core::numerics::Checkpoint;
use evidar_core::world::World;

use crate::config::ExperimentConfig;
use crate::{CliError, Stage};

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const RECOGNIZER_FILE: &str = "recognizer.json";
pub const RECOGNIZER_CSV: &str = "recognizer_metrics.csv";
pub const POLICY_FILE: &str = "policy.json";
pub const POLICY_CSV: &str = "policy_updates.csv";
pub const EVAL_CSV: &str = "evaluation.csv";
pub const STEP_CSV: &str = "steps.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

fn write_csv(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> Result<(), CliError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Run metadata that is allowed to differ between otherwise identical runs.
struct Sidecar {
    command: String,
    started: SystemTime,
    clock: Instant,
}

impl Sidecar {
    fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            started: SystemTime::now(),
            clock: Instant::now(),
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let started = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = serde_json::json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix_s": started,
            "elapsed_s": self.clock.elapsed().as_secs_f64(),
        });
        write_text(&dir.join(RUN_FILE), &format!("{meta:#}\n"))
    }
}

fn prepare_dir(dir: &Path, config: &ExperimentConfig) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_text(&dir.join(CONFIG_FILE), &config.to_json())
}

pub fn level_table(test_set: &TestSet) -> String {
    let counts = test_set.level_counts();
    let mut out = format!("{:<10}{:>8}\n", "level", "count");
    for level in Level::ALL {
        out += &format!("{:<10}{:>8}\n", level.name(), counts[level.index()]);
    }
    out += &format!("{:<10}{:>8}\n", "total", test_set.len());
    out
}

pub fn gen_dataset(config: Option<&Path>, n: Option<usize>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut config = ExperimentConfig::load_or_default(config)?;
    if let Some(n) = n {
        config.dataset.n = n;
    }
    if let Some(s) = seed {
        config.dataset.seed = s;
    }
    config.bench.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if config.dataset.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    let ts = generate_test_set(config.dataset.n, config.dataset.seed, &config.bench)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    // The file header carries the bench config and seed, so the dataset is
    // its own resolved config.
    ts.save(out).map_err(|e| io_err(out, e))?;
    print!("{}", level_table(&ts));
    Ok(())
}

fn load_recognizer(path: &Path) -> Result<EvidentialClassifier, CliError> {
    let ck = Checkpoint::load(path).map_err(|e| io_err(path, e))?;
    EvidentialClassifier::from_checkpoint(&ck).map_err(|e| io_err(path, e))
}

fn train_recognizer_stage(config: &ExperimentConfig, world: &World, dir: &Path) -> Result<EvidentialClassifier, CliError> {
    prepare_dir(dir, config)?;
    let data = collect_stage1(world, &config.bench, &config.stage1).map_err(|e| CliError::Compute(e.to_string()))?;
    if data.is_empty() {
        return Err(CliError::Compute("stage 1 collected no observations".into()));
    }
    eprintln!("stage 1: {} labelled observations", data.len());
    let trained = train_recognizer(&data, world.config().class_count, &config.recognizer)
        .map_err(|e| CliError::Compute(e.to_string()))?;
    write_csv(&dir.join(RECOGNIZER_CSV), |w| write_metrics_csv(w, &trained.metrics))?;
    if let TrainStatus::Diverged { epoch, seed } = trained.status {
        return Err(CliError::Compute(format!("recognizer diverged at epoch {epoch} (seed {seed})")));
    }
    if let Some(m) = trained.final_metrics() {
        eprintln!(
            "recognizer: val top-1 {:.4}, mean u in-distribution {:.3}, noise probes {:.3}",
            m.val_acc, m.mean_u_id, m.mean_u_ood
        );
    }
    let path = dir.join(RECOGNIZER_FILE);
    trained.model.to_checkpoint().save(&path).map_err(|e| io_err(&path, e))?;
    Ok(trained.model)
}

fn train_policy_stage(
    config: &ExperimentConfig,
    world: &World,
    recognizer: &EvidentialClassifier,
    dir: &Path,
    resume: bool,
    checkpoint_every: usize,
) -> Result<(), CliError> {
    let path = dir.join(POLICY_FILE);
    let mut trainer = if resume {
        let ck = Checkpoint::load(&path).map_err(|e| io_err(&path, e))?;
        PolicyTrainer::resume(world, &config.bench, recognizer, config.policy.clone(), &ck)
            .map_err(|e| CliError::Usage(format!("cannot resume from {}: {e}", path.display())))?
    } else {
        PolicyTrainer::new(world, &config.bench, recognizer, config.policy.clone())
            .map_err(|e| CliError::Usage(e.to_string()))?
    };
    prepare_dir(dir, config)?;
    let total = config.policy.updates;
    trainer
        .run(|t, s| {
            if t.update % 10 == 0 || t.is_done() {
                eprintln!(
                    "update {}/{total}: return {:.3}, final belief {:.3}, entropy {:.3}",
                    t.update, s.mean_return, s.mean_final_belief, s.entropy
                );
            }
            if t.update % checkpoint_every == 0 || t.is_done() {
                t.to_checkpoint()
                    .save(&path)
                    .map_err(|e| evidar_core::agent::AgentError::Config(format!("{}: {e}", path.display())))?;
            }
            Ok(())
        })
        .map_err(|e| CliError::Compute(e.to_string()))?;
    // A resumed run that was already complete still gets its final files.
    trainer.to_checkpoint().save(&path).map_err(|e| io_err(&path, e))?;
    write_csv(&dir.join(POLICY_CSV), |w| UpdateStats::write_csv(w, &trainer.history))
}

pub fn train(stage: Stage, config: Option<&Path>, out: &Path, resume: bool, checkpoint_every: usize) -> Result<(), CliError> {
    let sidecar = Sidecar::start("train");
    let config = ExperimentConfig::load_or_default(config)?;
    config.validate()?;
    if checkpoint_every == 0 {
        return Err(CliError::Usage("--checkpoint-every must be positive".into()));
    }
    if resume && stage == Stage::Recognizer {
        return Err(CliError::Usage("--resume applies to policy training only".into()));
    }
    let world = World::new(config.bench.world.clone()).map_err(|e| CliError::Usage(e.to_string()))?;
    let rec_path = out.join(RECOGNIZER_FILE);
    if stage == Stage::Policy && !rec_path.exists() {
        return Err(CliError::Usage(format!(
            "policy training needs a recognizer checkpoint at {}; run `train --stage recognizer` first",
            rec_path.display()
        )));
    }
    if resume && !out.join(POLICY_FILE).exists() {
        return Err(CliError::Usage(format!("nothing to resume: {} is missing", out.join(POLICY_FILE).display())));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;

    let recognizer = if stage == Stage::Policy || resume {
        load_recognizer(&rec_path)?
    } else {
        train_recognizer_stage(&config, &world, out)?
    };
    if recognizer.feature_dim() != world.config().feature_dim || recognizer.class_count() != world.config().class_count {
        return Err(CliError::Usage(format!("{} does not match the configured world", rec_path.display())));
    }
    if stage != Stage::Recognizer {
        let before = recognizer.fingerprint();
        train_policy_stage(&config, &world, &recognizer, out, resume, checkpoint_every)?;
        assert_eq!(before, recognizer.fingerprint(), "recognizer changed during policy training");
    }
    sidecar.write(out)
}

fn pct(x: f64) -> String {
    if x.is_finite() {
        format!("{:.2}", 100.0 * x)
    } else {
        "-".into()
    }
}

/// Per-level top-1/top-3 and the change in top-1 from the first to the last
/// step, one block per evaluated cell.
pub fn summary_table(reports: &[EvalReport]) -> String {
    let mut out = format!(
        "{:<11}{:<11}{:>6}  {:<9}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
        "agent", "fusion", "sigma", "level", "n", "top1", "top3", "t1", "tT", "change"
    );
    for r in reports {
        let rows = std::iter::once(("overall", &r.overall)).chain(Level::ALL.iter().map(|l| (l.name(), r.level(*l))));
        for (name, m) in rows {
            let first = m.step_top1.first().copied().unwrap_or(f64::NAN);
            let last = m.step_top1.last().copied().unwrap_or(f64::NAN);
            let change = if (last - first).is_finite() {
                format!("{:+.2}", 100.0 * (last - first))
            } else {
                "-".into()
            };
            out += &format!(
                "{:<11}{:<11}{:>6}  {:<9}{:>6}{:>8}{:>8}{:>8}{:>8}{:>8}\n",
                r.agent.name(),
                r.fusion.name(),
                r.sigma,
                name,
                m.n,
                pct(m.top1),
                pct(m.top3),
                pct(first),
                pct(last),
                change
            );
        }
    }
    out
}

pub fn evaluate(config: &ExperimentConfig, testset: &Path, ckpt: &Path, out: &Path) -> Result<(), CliError> {
    let sidecar = Sidecar::start("evaluate");
    config.validate()?;
    let ev = &config.evaluation;
    let ts = TestSet::load(testset).map_err(|e| io_err(testset, e))?;
    let recognizer = load_recognizer(&ckpt.join(RECOGNIZER_FILE))?;
    let policy = if ev.agents.contains(&AgentKind::Ours) {
        let path = ckpt.join(POLICY_FILE);
        let ck = Checkpoint::load(&path).map_err(|e| io_err(&path, e))?;
        Some(PolicyNet::from_checkpoint(&ck).map_err(|e| io_err(&path, e))?)
    } else {
        None
    };
    prepare_dir(out, config)?;

    let mut reports = Vec::new();
    for &agent in &ev.agents {
        let r = evaluate_matrix(
            agent,
            policy.as_ref(),
            &recognizer,
            &ts,
            &ev.fusions,
            &ev.sigmas,
            ev.horizon,
            ev.seed,
        )
        .map_err(|e| CliError::Compute(e.to_string()))?;
        reports.extend(r);
    }
    write_csv(&out.join(EVAL_CSV), |w| write_eval_csv(w, &reports))?;
    write_csv(&out.join(STEP_CSV), |w| write_step_csv(w, &reports))?;
    let summary = summary_table(&reports);
    write_text(&out.join(SUMMARY_FILE), &summary)?;
    print!("{summary}");
    let conflicts: usize = reports.iter().map(|r| r.conflict_episodes).sum();
    if conflicts > 0 {
        eprintln!("note: {conflicts} episode evaluations skipped a totally conflicting combination");
    }
    sidecar.write(out)
}
