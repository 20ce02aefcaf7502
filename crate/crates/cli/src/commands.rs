use std::path::{Path, PathBuf};
use std::time::Instant;

use dropattack::analysis::{
    scan_landscape, sharpness, verify_first_order, write_equivalence_csv, write_landscape_csv, LandscapeMeta,
};
use dropattack::data::{write_csv, Dataset};
use dropattack::experiment::ExperimentConfig;
use dropattack::gradcheck::run_suite;
use dropattack::models::{build_seeded, evaluate, load_checkpoint, model_for, save_checkpoint};
use dropattack::perturb::AttackConfig;
use dropattack::rng::streams;
use dropattack::train::{scaling_study, sweep as run_sweep, write_metrics_csv, write_scaling_csv, write_sweep_csv, SweepGrid};
use dropattack::Rng;
use serde_json::json;

use crate::manifest::Manifest;
use crate::{CliError, Common};

/// Batch size for evaluation-only passes; it does not change the result.
const EVAL_BATCH: usize = 256;
const GRADCHECK_TOL: f64 = 1e-4;

struct Session {
    cfg: ExperimentConfig,
    out: PathBuf,
    manifest: Manifest,
    start: Instant,
}

impl Session {
    fn open(common: &Common, command: &str) -> Result<Self, CliError> {
        let start = Instant::now();
        let cfg = ExperimentConfig::load(&common.config).map_err(|e| CliError::Config(e.to_string()))?;
        let out = match (&common.out, &cfg.out_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => cfg.base_dir.join(o),
            (None, None) => PathBuf::from("out"),
        };
        std::fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
        let mut manifest = Manifest::new(command);
        manifest.input(&common.config)?;
        manifest.workers = common.workers;
        Ok(Self {
            cfg,
            out,
            manifest,
            start,
        })
    }

    fn attack(&self, command: &str) -> Result<AttackConfig, CliError> {
        self.cfg
            .attack
            .clone()
            .ok_or_else(|| CliError::Config(format!("{command}: the config needs an [attack] section")))
    }

    fn emit(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn finish(mut self) -> Result<(), CliError> {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        self.manifest.write(&self.out.join("manifest.json"))?;
        println!("wrote {} files to {}", self.manifest.outputs.len() + 1, self.out.display());
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> dropattack::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

pub fn train(common: &Common, seed: Option<u64>, timing: bool) -> Result<(), CliError> {
    let mut s = Session::open(common, "train")?;
    let seeds = seed.map_or_else(|| s.cfg.seeds.clone(), |v| vec![v]);
    let exp = s.cfg.experiment()?;
    let mut results = Vec::new();
    for &seed in &seeds {
        let reg = s.cfg.train_config(seed).regularizer;
        let outcome = exp.run(&reg, seed)?;
        let csv = csv_bytes(|b| write_metrics_csv(b, &outcome.metrics, timing))?;
        s.emit(&format!("metrics_seed{seed}.csv"), &csv)?;
        let ck = format!("checkpoint_seed{seed}.json");
        save_checkpoint(s.out.join(&ck), &s.cfg.model_spec(seed), &outcome.params)?;
        s.manifest.outputs.push(ck);
        let last = outcome.metrics.last();
        println!(
            "seed {seed}: best epoch {:?}, test loss {:.4}, test acc {:.4}, fb_count {}",
            outcome.best_epoch, outcome.test_loss, outcome.test_acc, outcome.fb_count
        );
        results.push(json!({
            "seed": seed,
            "best_epoch": outcome.best_epoch,
            "test_loss": outcome.test_loss,
            "test_acc": outcome.test_acc,
            "fb_count": outcome.fb_count,
            "final_train_acc": last.map(|m| m.train_acc),
            "final_val_acc": last.map(|m| m.val_acc),
        }));
    }
    s.manifest.seeds = seeds;
    s.manifest.results = json!(results);
    s.finish()
}

pub fn sweep(common: &Common, grid_path: &Path) -> Result<(), CliError> {
    let mut s = Session::open(common, "sweep")?;
    let text = std::fs::read_to_string(grid_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", grid_path.display())))?;
    let grid: SweepGrid =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", grid_path.display())))?;
    s.manifest.input(grid_path)?;
    let attack = s.attack("sweep")?;
    let rows = run_sweep(&s.cfg.experiment()?, &attack, &grid, &s.cfg.seeds, common.workers)?;
    let csv = csv_bytes(|b| write_sweep_csv(b, &rows))?;
    s.emit("sweep.csv", &csv)?;
    s.manifest.seeds = s.cfg.seeds.clone();
    s.manifest.results = json!({ "rows": rows.len() });
    s.finish()
}

pub fn scaling(common: &Common, sizes: &[usize]) -> Result<(), CliError> {
    let mut s = Session::open(common, "scaling")?;
    let attack = s.attack("scaling")?;
    let rows = scaling_study(&s.cfg.experiment()?, sizes, &attack, &s.cfg.seeds, common.workers)?;
    for r in &rows {
        println!(
            "size {}: standard {:.4}, dropattack {:.4}, improvement {:+.4}",
            r.size, r.standard_acc, r.dropattack_acc, r.improvement
        );
    }
    let csv = csv_bytes(|b| write_scaling_csv(b, &rows))?;
    s.emit("scaling.csv", &csv)?;
    s.manifest.seeds = s.cfg.seeds.clone();
    s.finish()
}

pub fn landscape(common: &Common, checkpoint: &Path) -> Result<(), CliError> {
    let mut s = Session::open(common, "landscape")?;
    let section = s
        .cfg
        .landscape
        .clone()
        .ok_or_else(|| CliError::Config("landscape: the config needs a [landscape] section".into()))?;
    let ck = load_checkpoint(checkpoint)?;
    s.manifest.input(checkpoint)?;
    let mut test = s.cfg.load_splits()?.test;
    if let Some(n) = section.test_subset {
        test = test.select(&(0..n.min(test.len())).collect::<Vec<_>>());
    }
    let model = model_for(&ck.spec)?;
    let grid = scan_landscape(
        model.as_ref(),
        &ck.params,
        &test,
        &section.grid,
        section.seed,
        EVAL_BATCH,
        common.workers,
    )?;
    let (direct, _) = evaluate(model.as_ref(), &ck.params, &test, EVAL_BATCH)?;
    let name = checkpoint.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    let meta = LandscapeMeta::new(&name, "test", &section.grid, &grid)?;
    let score = sharpness(&grid)?;
    println!(
        "center loss {:.6} (checkpoint {:.6}), sharpness {:.6}, {} flagged cells",
        grid.center(),
        direct,
        score.score,
        grid.flagged.len()
    );
    let csv = csv_bytes(|b| write_landscape_csv(b, &grid))?;
    s.emit("landscape.csv", &csv)?;
    let meta_text = serde_json::to_string_pretty(&meta).map_err(|e| CliError::Other(e.to_string()))? + "\n";
    s.emit("landscape.json", meta_text.as_bytes())?;
    s.manifest.seeds = vec![section.seed];
    s.manifest.results = json!({
        "center_loss": grid.center(),
        "checkpoint_loss": direct,
        "sharpness": score.score,
        "test_rows": test.len(),
    });
    s.finish()
}

pub fn verify_theory(common: &Common) -> Result<(), CliError> {
    let mut s = Session::open(common, "verify-theory")?;
    let section = s
        .cfg
        .verify
        .clone()
        .ok_or_else(|| CliError::Config("verify-theory: the config needs a [verify] section".into()))?;
    let attack = s.attack("verify-theory")?;
    let train = s.cfg.load_splits()?.train;
    let batch = train.batch(&(0..section.batch.min(train.len())).collect::<Vec<_>>());
    let mut summary = String::from("model,slope\n");
    let mut slopes = Vec::new();
    for i in 0..section.models as u64 {
        let (params, model) = build_seeded(&s.cfg.model_spec(i))?;
        let mut rng = Rng::with_stream(i, streams::ATTACK);
        let report = verify_first_order(
            model.as_ref(),
            &params,
            &batch,
            &attack,
            &section.epsilons,
            section.form,
            &mut rng,
        )?;
        let csv = csv_bytes(|b| write_equivalence_csv(b, &report))?;
        s.emit(&format!("equivalence_model{i}.csv"), &csv)?;
        let slope = report.slope.map_or_else(|| "nan".to_string(), |v| v.to_string());
        println!("model {i}: slope {slope}");
        summary += &format!("{i},{slope}\n");
        slopes.push(report.slope);
    }
    s.emit("slopes.csv", summary.as_bytes())?;
    s.manifest.seeds = (0..section.models as u64).collect();
    s.manifest.results = json!({ "form": section.form, "slopes": slopes });
    s.finish()
}

pub fn gradcheck(seeds: u64, step: f64, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let rows = run_suite(seeds, step)?;
    let mut csv = String::from("name,max_error,checked,skipped\n");
    println!("{:<24} {:>12} {:>8} {:>8}", "name", "max_error", "checked", "skipped");
    for r in &rows {
        println!("{:<24} {:>12.3e} {:>8} {:>8}", r.name, r.max_error, r.checked, r.skipped);
        csv += &format!("{},{},{},{}\n", r.name, r.max_error, r.checked, r.skipped);
    }
    let path = out.join("gradcheck.csv");
    std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
    let failing: Vec<&str> = rows
        .iter()
        .filter(|r| !(r.max_error < GRADCHECK_TOL))
        .map(|r| r.name.as_str())
        .collect();
    let mut manifest = Manifest::new("gradcheck");
    manifest.seeds = (0..seeds).collect();
    manifest.outputs = vec!["gradcheck.csv".into()];
    manifest.results = json!({ "step": step, "tolerance": GRADCHECK_TOL, "failing": failing });
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    manifest.write(&out.join("manifest.json"))?;
    if failing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Other(format!(
            "gradcheck: {} exceed {GRADCHECK_TOL:e}",
            failing.join(", ")
        )))
    }
}

pub fn data_gen(data: &Dataset, out: &Path, seed: u64) -> Result<(), CliError> {
    let start = Instant::now();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    write_csv(data, out)?;
    let mut manifest = Manifest::new("data gen");
    manifest.seeds = vec![seed];
    manifest.outputs = vec![out.display().to_string()];
    manifest.results = json!({ "rows": data.len(), "classes": data.classes, "provenance": data.provenance });
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    manifest.write(Path::new(&name))?;
    println!("wrote {} rows to {}", data.len(), out.display());
    Ok(())
}
