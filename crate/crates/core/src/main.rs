use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use gapaudit::curate::{apply_filters, read_curated, write_curated};
use gapaudit::features::elements::ElementTable;
use gapaudit::features::build_matrix;
use gapaudit::ingest::write_jsonl;
use gapaudit::integrity::integrity_report;
use gapaudit::learn::{make_split, preset_or_err, train_and_evaluate, FittedModel};
use gapaudit::matrix::{FeatureMatrix, MatrixMeta, Phase};
use gapaudit::pipeline::{
    audit_inputs, config_hash, emit_parity_and_residuals, ingest_sources, read_json, read_source,
    run_pipeline, select_features, shap_report, Bundle, PipelineConfig, SplitReport,
};
use gapaudit::synth::{synth_matrix, synth_records, SynthRecordsSpec, SynthSpec};
use gapaudit::{Error, Result};

/// Leakage-aware bandgap regression: curation, descriptors, tree models, SHAP and leakage audit.
///
/// Precedence for every setting: command-line flag, then `--config` file, then built-in default.
#[derive(Parser)]
#[command(name = "gapaudit", version)]
struct Cli {
    /// TOML or JSON config; stage subcommands read their section from it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse one or two record sources, merge them and deduplicate compositions.
    Ingest {
        #[arg(long = "input", required = true, num_args = 1)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the physical-validity filters and derive is_3D / max_efg.
    Curate {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// K-S test, PCA variance and range preservation between raw and curated sets.
    Integrity {
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        curated: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build one phase's feature matrix from curated records.
    Features {
        #[arg(long)]
        curated: PathBuf,
        #[arg(long, value_parser = parse_phase)]
        phase: Phase,
        #[arg(long)]
        out: PathBuf,
    },
    /// Variance and correlation filters, importance ranking and the subset sweep.
    Select {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one preset on the seeded 4:1 split and report test metrics.
    Train {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        n_estimators: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// TreeSHAP explanations of a saved model on the test rows of a matrix.
    Shap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        max_instances: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Leakage audit on the complete-effective-mass subset of curated records.
    Audit {
        #[arg(long)]
        curated: PathBuf,
        #[arg(long)]
        n_estimators: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage into one output directory.
    Pipeline {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Input sources; replace the config's `inputs` when given.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Generate synthetic records (JSONL) or, with --matrix, a leak-planted matrix (CSV).
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Leak noise as a fraction of the target std.
        #[arg(long, default_value_t = 0.05)]
        leak: f64,
        #[arg(long)]
        matrix: bool,
        #[arg(long, default_value_t = 10)]
        p_clean: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_phase(s: &str) -> std::result::Result<Phase, String> {
    Phase::parse(s).ok_or_else(|| format!("unknown phase `{s}`; expected I, II or III"))
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Stage { .. } | Error::Config(_) => e,
        other => Error::Stage {
            stage: name,
            source: Box::new(other),
        },
    })
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Bundle for a single stage, stamped with the hash of `cfg` over `inputs`.
fn stage_bundle(cfg: &PipelineConfig, inputs: &[&Path], out: &Path) -> Result<Bundle> {
    let mut c = cfg.clone();
    c.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
    Bundle::open(out, &config_hash(&c)?, c.seed)
}

fn read_matrix(path: &Path) -> Result<FeatureMatrix> {
    let sidecar = path.with_extension("meta.json");
    let meta: Option<MatrixMeta> = if sidecar.is_file() {
        Some(read_json(&sidecar)?)
    } else {
        None
    };
    FeatureMatrix::read_csv(BufReader::new(File::open(path)?), meta.as_ref())
}

fn write_matrix(bundle: &mut Bundle, stem: &str, m: &FeatureMatrix) -> Result<()> {
    let mut csv = Vec::new();
    m.write_csv(&mut csv)?;
    bundle.write_bytes(&format!("{stem}.csv"), &csv)?;
    bundle.write_json(&format!("{stem}.meta.json"), &m.meta())?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let table = ElementTable::embedded();
    match &cli.command {
        Command::Ingest { inputs, out } => {
            let ins: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
            let mut b = stage_bundle(&cfg, &ins, out)?;
            let (records, report) = stage("ingest", ingest_sources(inputs))?;
            let mut buf = Vec::new();
            write_jsonl(&mut buf, &records)?;
            b.write_bytes("records.jsonl", &buf)?;
            b.write_json("merge_report.json", &report)?;
            println!("{} records", records.len());
        }
        Command::Curate { input, out } => {
            let mut b = stage_bundle(&cfg, &[input], out)?;
            cfg.filter.validate()?;
            let raw = stage("curate", read_source(input))?;
            let (curated, funnel) = apply_filters(raw, &cfg.filter);
            let mut buf = Vec::new();
            write_curated(&mut buf, &curated)?;
            b.write_bytes("curated.jsonl", &buf)?;
            b.write_json("funnel.json", &funnel)?;
            println!("{} of {} records kept", curated.len(), funnel.stages.first().map_or(0, |s| s.records_in));
        }
        Command::Integrity { raw, curated, out } => {
            let mut b = stage_bundle(&cfg, &[raw, curated], out)?;
            let report = stage("integrity", (|| {
                let r = read_source(raw)?;
                let c = read_curated(BufReader::new(File::open(curated)?))?;
                integrity_report(&r, &c, &cfg.integrity)
            })())?;
            b.write_json("integrity.json", &report)?;
            println!("ks d = {:.4}, p = {:.4}", report.ks.d_statistic, report.ks.p_value);
        }
        Command::Features { curated, phase, out } => {
            let mut b = stage_bundle(&cfg, &[curated], out)?;
            cfg.features.validate()?;
            let m = stage("features", (|| {
                let c = read_curated(BufReader::new(File::open(curated)?))?;
                build_matrix(&c, *phase, &cfg.features, table)
            })())?;
            write_matrix(&mut b, &format!("phase_{}", phase.label()), &m)?;
            println!("{} x {}", m.n_rows(), m.n_cols());
        }
        Command::Select { matrix, out } => {
            let mut b = stage_bundle(&cfg, &[matrix], out)?;
            cfg.select.validate()?;
            let (chosen, report) = stage("select", (|| {
                let m = read_matrix(matrix)?;
                let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed)?;
                select_features(&m, &split, &cfg.select, cfg.seed)
            })())?;
            b.write_json("selection.json", &report)?;
            write_matrix(&mut b, "selected", &chosen)?;
            println!("best subset size {}", report.sweep.best_size);
        }
        Command::Train { matrix, model, n_estimators, out } => {
            let mut spec = preset_or_err(model)?.with_seed(cfg.seed);
            if let Some(n) = n_estimators {
                spec = spec.with_estimators(*n);
            }
            let mut b = stage_bundle(&cfg, &[matrix], out)?;
            let (m, split, fitted, metrics, pred) = stage("train", (|| {
                let m = read_matrix(matrix)?;
                let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed)?;
                let (f, metrics, pred) = train_and_evaluate(&spec, &m, &split)?;
                Ok((m, split, f, metrics, pred))
            })())?;
            let ids: Vec<String> = split.test.iter().map(|&i| m.row_ids()[i].clone()).collect();
            let y: Vec<f64> = split.test.iter().map(|&i| m.target()[i]).collect();
            let (csv, residuals) = emit_parity_and_residuals(&ids, &y, &pred)?;
            b.write_bytes("parity.csv", &csv)?;
            b.write_json("metrics.json", &serde_json::json!({ "model": spec.name, "metrics": metrics, "residuals": residuals }))?;
            b.write_json("split.json", &SplitReport::new(&split, m.row_ids()))?;
            b.write_json("model.json", &fitted.to_json())?;
            println!("r2 = {:.4}, mae = {:.4}", metrics.r2, metrics.mae);
        }
        Command::Shap { model, matrix, max_instances, out } => {
            let mut b = stage_bundle(&cfg, &[model, matrix], out)?;
            let report = stage("shap", (|| {
                let fitted = FittedModel::from_json(read_json(model)?)?;
                let m = read_matrix(matrix)?;
                let split = make_split(m.n_rows(), cfg.train_fraction, cfg.seed)?;
                let test = m.select_rows(&split.test);
                let phase = m.phase().unwrap_or(Phase::III);
                shap_report(&fitted, &test, phase, max_instances.unwrap_or(cfg.shap.max_instances))
            })())?;
            b.write_json("shap.json", &report)?;
            println!("top features: {}", report.global.top(3).join(", "));
        }
        Command::Audit { curated, n_estimators, out } => {
            let mut audit_cfg = cfg.audit.clone();
            if n_estimators.is_some() {
                audit_cfg.n_estimators = *n_estimators;
            }
            audit_cfg.model_specs(cfg.seed)?;
            let mut b = stage_bundle(&cfg, &[curated], out)?;
            let registry = cfg.registry();
            let (base, report) = stage("audit", (|| {
                let c = read_curated(BufReader::new(File::open(curated)?))?;
                let (base, cands) = audit_inputs(&c, &registry, &audit_cfg.candidates, &cfg.features, table)?;
                let split = make_split(base.n_rows(), cfg.train_fraction, cfg.seed)?;
                let r = gapaudit::audit::run_audit(&base, &cands, &registry, &audit_cfg, &split, cfg.seed)?;
                Ok((base, r))
            })())?;
            b.write_json("audit.json", &serde_json::json!({ "subset_rows": base.n_rows(), "report": report }))?;
            for c in &report.candidates {
                println!("{}: {:?}", c.feature, c.verdict);
            }
        }
        Command::Pipeline { out, inputs } => {
            let mut cfg = cfg;
            if !inputs.is_empty() {
                cfg.inputs = inputs.clone();
            }
            let out = out
                .clone()
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set output_dir".into()))?;
            let summary = run_pipeline(&cfg, &out)?;
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            serde_json::to_writer_pretty(&mut w, &summary)?;
            writeln!(w)?;
        }
        Command::Synth { n, leak, matrix, p_clean, out } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            if *matrix {
                let s = synth_matrix(&SynthSpec::new(*n, *p_clean, *leak, cfg.seed))?;
                s.with_leak().write_csv(BufWriter::new(File::create(out)?))?;
            } else {
                let records = synth_records(&SynthRecordsSpec::new(*n, *leak, cfg.seed))?;
                write_jsonl(BufWriter::new(File::create(out)?), &records)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GAPAUDIT_LOG", "warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
