use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use htnet_core::flow::{write_flow_file, CompositeFlowMap};
use htnet_core::model::write_checkpoint;
use htnet_core::pipeline::{extract_entry, flow_file_path, load_samples, spot_entry, FlowStats, RunConfig};
use htnet_core::synth::{write_corpus, SynthConfig};
use htnet_core::train::{evaluate_loso, fit, Class, HtNetLearner, LosoReport, Manifest, MetricSummary};
use htnet_core::HtNet;
use rayon::prelude::*;
use serde_json::json;

/// Per-sample failures of a batch command.
#[derive(Debug)]
pub struct EntryFailures {
    pub command: &'static str,
    pub total: usize,
    pub failures: Vec<(String, htnet_core::Error)>,
}

impl EntryFailures {
    pub fn is_numerical(&self) -> bool {
        self.failures.iter().any(|(_, e)| e.is_numerical())
    }
}

impl fmt::Display for EntryFailures {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed for {} of {} samples:", self.command, self.failures.len(), self.total)?;
        for (id, e) in &self.failures {
            write!(f, "\n  {id}: {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for EntryFailures {}

fn resolve_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.train.seed = cfg.seed;
    Ok(cfg)
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    Ok(Manifest::load(path)?)
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} directory {} does not exist", path.display());
    }
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Provenance block embedded in every run artifact.
fn provenance(cfg: &RunConfig, manifest: &Path) -> serde_json::Value {
    json!({
        "seed": cfg.seed,
        "manifest": manifest,
        "config": cfg,
    })
}

pub fn init_config(out: Option<&Path>) -> Result<()> {
    let value = serde_json::to_value(RunConfig::default())?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("config.json");
            write_json(&path, &value)?;
            log::info!("wrote {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(&value)?),
    }
    Ok(())
}

pub fn make_synth(out: &Path, seed: Option<u64>, subjects: Option<usize>, per_class: Option<usize>) -> Result<()> {
    let mut cfg = SynthConfig::default();
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.subjects = subjects.unwrap_or(cfg.subjects);
    cfg.samples_per_class = per_class.unwrap_or(cfg.samples_per_class);
    let manifest = write_corpus(&cfg, out)?;
    write_json(&out.join("synth_config.json"), &json!({ "seed": cfg.seed, "synth": cfg }))?;
    let missing = manifest.entries.iter().filter(|e| e.apex.is_none()).count();
    log::info!(
        "wrote {} samples from {} subjects to {} ({missing} without apex)",
        manifest.len(),
        manifest.subjects().len(),
        out.display()
    );
    Ok(())
}

pub fn spot(manifest_path: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let cfg = resolve_config(config, None)?;
    let mut manifest = load_manifest(manifest_path)?;
    let stem = manifest_path.file_stem().and_then(|s| s.to_str()).unwrap_or("manifest");
    let out_dir = match out {
        Some(d) => {
            fs::create_dir_all(d)?;
            d.to_path_buf()
        }
        None => manifest.base_dir.clone(),
    };
    let target = out_dir.join(format!("{stem}.spotted.csv"));
    if target == manifest_path {
        bail!("refusing to overwrite the input manifest {}", manifest_path.display());
    }
    let pending: Vec<usize> = (0..manifest.len()).filter(|&i| manifest.entries[i].apex.is_none()).collect();
    let moved = fs::canonicalize(&out_dir).ok() != fs::canonicalize(&manifest.base_dir).ok();
    if pending.is_empty() && !moved {
        fs::copy(manifest_path, &target)?;
        log::info!("all apex indices present; copied to {}", target.display());
        return Ok(());
    }
    let mut failures = Vec::new();
    for &i in &pending {
        let entry = &manifest.entries[i];
        match spot_entry(&manifest, entry, &cfg.spot) {
            Ok(apex) => {
                log::debug!("{}: apex {apex}", entry.sample_id);
                manifest.entries[i].apex = Some(apex);
            }
            Err(e) => failures.push((entry.sample_id.clone(), e)),
        }
    }
    if !failures.is_empty() {
        return Err(EntryFailures {
            command: "spot",
            total: pending.len(),
            failures,
        }
        .into());
    }
    if moved {
        // Keep relative paths valid from the new location.
        for e in &mut manifest.entries {
            e.frames_dir = absolute(&manifest.base_dir, &e.frames_dir)?;
            e.landmarks_path = absolute(&manifest.base_dir, &e.landmarks_path)?;
        }
    }
    manifest.save(&target)?;
    log::info!("spotted {} apex frames; wrote {}", pending.len(), target.display());
    Ok(())
}

fn absolute(base: &Path, path: &Path) -> Result<PathBuf> {
    let joined = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
    fs::canonicalize(&joined).with_context(|| format!("resolving {}", joined.display()))
}

pub fn extract(manifest_path: &Path, config: Option<&Path>, out: &Path, jobs: usize) -> Result<()> {
    let cfg = resolve_config(config, None)?;
    let manifest = load_manifest(manifest_path)?;
    fs::create_dir_all(out)?;
    let size = cfg.model.image_size;
    let work = |e: &htnet_core::train::ManifestEntry| extract_entry(&manifest, e, &cfg.flow, size);
    let results: Vec<htnet_core::Result<CompositeFlowMap>> = if jobs <= 1 {
        manifest.entries.iter().map(work).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()?
            .install(|| manifest.entries.par_iter().map(work).collect())
    };

    let mut log_csv = csv::Writer::from_path(out.join("extract_log.csv"))?;
    log_csv.write_record(["sample_id", "status", "mean_abs_u", "mean_abs_v", "max_strain", "error"])?;
    let mut failures = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(results) {
        let id = &entry.sample_id;
        match result.and_then(|map| write_flow_file(&map, &flow_file_path(out, id)).map(|_| map)) {
            Ok(map) => {
                let s = FlowStats::of(&map);
                log_csv.write_record([
                    id.as_str(),
                    "ok",
                    &s.mean_abs_u.to_string(),
                    &s.mean_abs_v.to_string(),
                    &s.max_strain.to_string(),
                    "",
                ])?;
            }
            Err(e) => {
                log_csv.write_record([id.as_str(), "error", "", "", "", &e.to_string()])?;
                failures.push((id.clone(), e));
            }
        }
    }
    log_csv.flush()?;
    write_json(&out.join("extract_run.json"), &provenance(&cfg, manifest_path))?;
    log::info!(
        "extracted {} of {} samples into {}",
        manifest.len() - failures.len(),
        manifest.len(),
        out.display()
    );
    if !failures.is_empty() {
        return Err(EntryFailures {
            command: "extract",
            total: manifest.len(),
            failures,
        }
        .into());
    }
    Ok(())
}

pub fn train(manifest_path: &Path, config: Option<&Path>, features: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let cfg = resolve_config(config, seed)?;
    let manifest = load_manifest(manifest_path)?;
    require_dir(features, "features")?;
    let samples = load_samples(&manifest, features, cfg.model.image_size)?;
    let net = HtNet::new(cfg.model.clone())?;
    let maps: Vec<&CompositeFlowMap> = samples.iter().map(|s| &s.map).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.class.index()).collect();
    log::info!("training on {} samples for {} epochs", samples.len(), cfg.train.epochs);
    let outcome = fit(&net, net.init_params(cfg.seed), &maps, &labels, &cfg.train)?;

    fs::create_dir_all(out)?;
    write_checkpoint(&out.join("model.htck"), &cfg.model, &outcome.params)?;
    let mut curve = csv::Writer::from_path(out.join("loss_curve.csv"))?;
    curve.write_record(["epoch", "loss"])?;
    for (i, l) in outcome.loss_curve.iter().enumerate() {
        curve.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    curve.flush()?;
    let mut run = provenance(&cfg, manifest_path);
    run["samples"] = json!(samples.len());
    run["final_loss"] = json!(outcome.loss_curve.last());
    write_json(&out.join("train_run.json"), &run)?;
    log::info!("wrote {}", out.join("model.htck").display());
    Ok(())
}

pub fn eval_loso(
    manifest_path: &Path,
    config: Option<&Path>,
    features: &Path,
    out: &Path,
    seed: Option<u64>,
    jobs: usize,
) -> Result<()> {
    let cfg = resolve_config(config, seed)?;
    let manifest = load_manifest(manifest_path)?;
    require_dir(features, "features")?;
    let samples = load_samples(&manifest, features, cfg.model.image_size)?;
    let learner = HtNetLearner {
        net: HtNet::new(cfg.model.clone())?,
        train: cfg.train.clone(),
    };
    log::info!("evaluating {} samples from {} subjects", samples.len(), manifest.subjects().len());
    let mut report = evaluate_loso(&samples, &learner, cfg.seed, jobs)?;
    report.config = provenance(&cfg, manifest_path);

    fs::create_dir_all(out)?;
    write_json(&out.join("report.json"), &serde_json::to_value(&report)?)?;
    let file = fs::File::create(out.join("confusion.csv"))?;
    report.write_confusion_csv(std::io::BufWriter::new(file))?;
    log::info!(
        "pooled UF1 {:.4} UAR {:.4}; wrote {}",
        report.pooled.uf1,
        report.pooled.uar,
        out.join("report.json").display()
    );
    Ok(())
}

fn print_summary(w: &mut impl Write, scope: &str, s: &MetricSummary) -> std::io::Result<()> {
    writeln!(w, "{scope}: UF1 {:.4}  UAR {:.4}  ({} samples)", s.uf1, s.uar, s.samples)?;
    write!(w, "  {:<10}", "true\\pred")?;
    for c in Class::ALL {
        write!(w, "{:>10}", c.name())?;
    }
    writeln!(w)?;
    let rows = s.confusion.row_normalized();
    for c in Class::ALL {
        let mark = if s.empty_classes.contains(&c) { "*" } else { "" };
        write!(w, "  {:<10}", format!("{}{mark}", c.name()))?;
        for v in rows[c.index()] {
            write!(w, "{v:>10.3}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn report(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let report: LosoReport =
        serde_json::from_str(&text).with_context(|| format!("{} is not an evaluation report", path.display()))?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if let Some(seed) = report.config.get("seed") {
        writeln!(w, "seed {seed}, {} folds", report.folds.len())?;
    }
    print_summary(&mut w, "pooled", &report.pooled)?;
    for (d, s) in &report.per_dataset {
        print_summary(&mut w, d.tag(), s)?;
    }
    let flagged = !report.pooled.empty_classes.is_empty()
        || report.per_dataset.values().any(|s| !s.empty_classes.is_empty());
    if flagged {
        writeln!(
            w,
            "* F1 or recall undefined for this class (no true or predicted samples); scored as 0"
        )?;
    }
    for note in &report.notes {
        writeln!(w, "note: {note}")?;
    }
    Ok(())
}
