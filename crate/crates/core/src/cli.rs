//! Command-line front end: `run`, `generate` and `validate`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::ablation::{run_ablation, AblationResult, Comparison, ScenarioReport};
use crate::cohort::{generate_cohort, CohortSpec};
use crate::config::{InputPaths, RunConfig, SCHEMA_VERSION};
use crate::error::{Result, UpmiError};
use crate::gmm::ClassMixtures;
use crate::meta::{FoldPlan, InnerScheme, LabeledMeta, LeakageAudit, MetaFeatureVector, ProvenanceEvent, META_NAMES};
use crate::stats::{validate_vectors, SynthQualityReport};
use crate::table::{load_feature_table, pair_datasets, save_feature_table, PairedDataset};

#[derive(Debug, Parser)]
#[command(name = "upmi", version, about = "Meta-feature stacking with Gaussian-mixture augmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the synthetic-dose ablation and write all reports.
    Run(RunArgs),
    /// Write a synthetic two-modality cohort as CSV.
    Generate(GenerateArgs),
    /// Compare real and synthetic meta-feature CSVs with per-dimension KS tests.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, requires = "t2")]
    pub t1: Option<PathBuf>,
    #[arg(long, requires = "t1")]
    pub t2: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated synthetic percentages, e.g. `0,25,50,100,200`.
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<u32>>,
    #[arg(long)]
    pub allow_custom_scenarios: bool,
    #[arg(long)]
    pub outer_folds: Option<usize>,
    #[arg(long, conflicts_with = "loo")]
    pub inner_folds: Option<usize>,
    /// Leave-one-out inner loop instead of k-fold.
    #[arg(long)]
    pub loo: bool,
    #[arg(long)]
    pub n_trees: Option<usize>,
    #[arg(long)]
    pub n_boot: Option<usize>,
    /// Defaults to `$UPMI_OUTPUT_DIR`, then `./upmi-out`.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// JSON cohort spec; flags below override it.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub n_subjects: Option<usize>,
    #[arg(long)]
    pub class1_fraction: Option<f64>,
    #[arg(long)]
    pub n_features: Option<usize>,
    #[arg(long)]
    pub n_informative: Option<usize>,
    #[arg(long)]
    pub effect_size: Option<f64>,
    #[arg(long)]
    pub redundancy: Option<f64>,
    #[arg(long)]
    pub noise_correlation: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub real: PathBuf,
    #[arg(long)]
    pub synth: PathBuf,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// JSON envelope written for every artifact.
#[derive(Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    pub kind: String,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySummary {
    pub folds: Vec<SynthQualityReport>,
    pub mean_p: f64,
    pub mean_similar_dimensions: f64,
}

/// Files written by `run`, each tagged with the artifact kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub status: String,
    pub kind: String,
    pub message: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> UpmiError + '_ {
    move |source| UpmiError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Sequential artifact writer; JSON is re-read and checked after writing.
struct ArtifactWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ArtifactWriter {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(ArtifactWriter {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                artifacts: BTreeMap::new(),
            },
        })
    }

    fn json<T: Serialize + DeserializeOwned>(&mut self, name: &str, kind: &str, data: &T) -> Result<()> {
        let doc = Versioned {
            schema_version: SCHEMA_VERSION,
            kind: kind.to_string(),
            data,
        };
        let text = serde_json::to_string_pretty(&doc)? + "\n";
        let path = self.dir.join(name);
        fs::write(&path, &text).map_err(io_err(&path))?;
        let back = fs::read_to_string(&path).map_err(io_err(&path))?;
        let parsed: Versioned<T> = serde_json::from_str(&back)
            .map_err(|e| UpmiError::Schema(format!("{} failed to re-read as {kind}: {e}", path.display())))?;
        let again = serde_json::to_string_pretty(&Versioned {
            schema_version: parsed.schema_version,
            kind: parsed.kind.clone(),
            data: &parsed.data,
        })? + "\n";
        if parsed.schema_version != SCHEMA_VERSION || parsed.kind != kind || again != text {
            return Err(UpmiError::Schema(format!("{} did not round-trip", path.display())));
        }
        self.manifest.artifacts.insert(name.to_string(), kind.to_string());
        Ok(())
    }

    fn csv(&mut self, name: &str, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.dir.join(name);
        let csv_err = |source| UpmiError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        w.write_record(header).map_err(csv_err)?;
        for r in rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(&path))?;
        self.manifest.artifacts.insert(name.to_string(), kind.to_string());
        Ok(())
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn meta_cells(m: &MetaFeatureVector) -> Vec<String> {
    m.to_array().iter().map(|v| v.to_string()).collect()
}

/// Applies command-line overrides on top of the file (or default) config.
pub fn resolve_run_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let (Some(t1), Some(t2)) = (&args.t1, &args.t2) {
        let schema = config.input.as_ref().map(|i| i.schema.clone()).unwrap_or_default();
        config.input = Some(InputPaths {
            t1: t1.clone(),
            t2: t2.clone(),
            schema,
        });
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(s) = &args.scenarios {
        config.scenarios = s.clone();
    }
    if args.allow_custom_scenarios {
        config.allow_custom_scenarios = true;
    }
    if let Some(k) = args.outer_folds {
        config.outer_folds = k;
    }
    if let Some(k) = args.inner_folds {
        config.inner = InnerScheme::KFold(k);
    }
    if args.loo {
        config.inner = InnerScheme::LeaveOneOut;
    }
    if let Some(t) = args.n_trees {
        config.forest.n_trees = t;
    }
    if let Some(b) = args.n_boot {
        config.n_boot = b;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = Some(dir.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn load_dataset(config: &RunConfig) -> Result<PairedDataset> {
    match &config.input {
        Some(input) => pair_datasets(
            load_feature_table(&input.t1, &input.schema)?,
            load_feature_table(&input.t2, &input.schema)?,
        ),
        None => generate_cohort(&config.cohort),
    }
}

/// Modal per-fold synthetic count of a scenario.
fn typical_n_synth(report: &ScenarioReport) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &n in &report.n_synth_per_fold {
        *counts.entry(n).or_default() += 1;
    }
    counts.iter().max_by_key(|(n, c)| (**c, std::cmp::Reverse(**n))).map_or(0, |(n, _)| *n)
}

fn meta_rows_for(fold: usize, metas: &[LabeledMeta], partition: &str) -> Vec<Vec<String>> {
    metas
        .iter()
        .map(|m| {
            let mut row = vec![fold.to_string(), partition.to_string(), m.subject_id.clone(), m.label.to_string()];
            row.extend(meta_cells(&m.meta));
            row
        })
        .collect()
}

/// Writes every artifact of an ablation run.
pub fn write_run_artifacts(dir: &Path, config: &RunConfig, result: &AblationResult) -> Result<Manifest> {
    let mut w = ArtifactWriter::new(dir)?;
    w.json("config.json", "run_config", config)?;
    w.json::<FoldPlan>("fold_plan.json", "fold_plan", &result.plan)?;
    for report in &result.reports {
        w.json::<ScenarioReport>(&format!("scenario_{}.json", report.scenario_pct), "scenario_report", report)?;
        let mut rows = Vec::new();
        for f in &report.folds {
            rows.extend(
                f.roc_points
                    .iter()
                    .map(|p| vec![format!("fold_{}", f.fold_id), p.fpr.to_string(), p.tpr.to_string()]),
            );
        }
        rows.extend(report.mean_roc.iter().map(|p| vec!["mean".to_string(), p.fpr.to_string(), p.tpr.to_string()]));
        w.csv(&format!("roc_{}.csv", report.scenario_pct), "roc_points", &["curve", "fpr", "tpr"], &rows)?;
    }
    let table1: Vec<Vec<String>> = result
        .reports
        .iter()
        .map(|r| {
            vec![
                r.scenario_pct.to_string(),
                typical_n_synth(r).to_string(),
                r.auc_mean.to_string(),
                r.auc_std.to_string(),
                fmt_opt(r.f1_mean),
                fmt_opt(r.f1_std),
            ]
        })
        .collect();
    w.csv(
        "table1.csv",
        "scenario_table",
        &["scenario", "n_synth", "auc_mean", "auc_std", "f1_mean", "f1_std"],
        &table1,
    )?;

    let mut header = vec!["fold", "partition", "subject_id", "label"];
    header.extend(META_NAMES);
    for art in &result.folds {
        let k = art.oof.fold;
        let mut rows = meta_rows_for(k, &art.oof.train, "train");
        rows.extend(meta_rows_for(k, &art.oof.test, "test"));
        w.csv(&format!("meta_fold_{k}.csv"), "oof_meta_features", &header, &rows)?;
    }

    let quality: Vec<SynthQualityReport> = result.folds.iter().filter_map(|f| f.quality.clone()).collect();
    if !quality.is_empty() {
        let n = quality.len() as f64;
        let summary = QualitySummary {
            mean_p: quality.iter().map(|q| q.mean_p).sum::<f64>() / n,
            mean_similar_dimensions: quality.iter().map(|q| q.n_similar() as f64).sum::<f64>() / n,
            folds: quality,
        };
        w.json("synth_quality.json", "synth_quality", &summary)?;

        let mixtures: Vec<Option<ClassMixtures>> = result.folds.iter().map(|f| f.mixtures.clone()).collect();
        w.json("gmm.json", "class_mixtures", &mixtures)?;

        let mut sample_header = vec!["source", "fold", "label"];
        sample_header.extend(META_NAMES);
        let mut rows = Vec::new();
        for art in &result.folds {
            let k = art.oof.fold.to_string();
            for m in &art.oof.train {
                let mut row = vec!["real".to_string(), k.clone(), m.label.to_string()];
                row.extend(meta_cells(&m.meta));
                rows.push(row);
            }
            if let Some(b) = &art.largest_batch {
                for (v, y) in b.vectors.iter().zip(&b.class_labels) {
                    let mut row = vec!["synthetic".to_string(), k.clone(), y.to_string()];
                    row.extend(meta_cells(v));
                    rows.push(row);
                }
            }
        }
        w.csv("meta_samples.csv", "meta_feature_samples", &sample_header, &rows)?;
    }
    w.json::<Option<Comparison>>("stats.json", "comparison", &result.comparison)?;
    w.json::<Vec<ProvenanceEvent>>("provenance.json", "provenance", &result.provenance)?;
    w.json::<LeakageAudit>("leakage_audit.json", "leakage_audit", &result.audit)?;
    let manifest = w.manifest.clone();
    w.json("manifest.json", "manifest", &manifest)?;
    Ok(manifest)
}

/// Loads or generates the data, runs the ablation and writes the reports.
pub fn cmd_run(config: &RunConfig) -> Result<(AblationResult, PathBuf)> {
    config.validate()?;
    let data = load_dataset(config)?;
    log::info!(
        "{} paired subjects, {} + {} features, scenarios {:?}",
        data.len(),
        data.t1().n_features(),
        data.t2().n_features(),
        config.scenarios
    );
    let result = run_ablation(&data, &config.scenarios, config, config.seed)?;
    if !result.audit.is_clean() {
        return Err(UpmiError::NumericalFailure(format!(
            "leakage audit failed: {}",
            result.audit.violations.join("; ")
        )));
    }
    let dir = config.resolved_output_dir();
    write_run_artifacts(&dir, config, &result)?;
    Ok((result, dir))
}

pub fn resolve_cohort_spec(args: &GenerateArgs) -> Result<CohortSpec> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            serde_json::from_str(&text).map_err(|e| UpmiError::Config(format!("{}: {e}", path.display())))?
        }
        None => CohortSpec::default(),
    };
    let CohortSpec {
        n_subjects,
        class1_fraction,
        n_features_per_modality,
        n_informative,
        effect_size,
        cross_modality_redundancy,
        noise_correlation,
        seed,
    } = &mut spec;
    args.n_subjects.inspect(|&v| *n_subjects = v);
    args.class1_fraction.inspect(|&v| *class1_fraction = v);
    args.n_features.inspect(|&v| *n_features_per_modality = v);
    args.n_informative.inspect(|&v| *n_informative = v);
    args.effect_size.inspect(|&v| *effect_size = v);
    args.redundancy.inspect(|&v| *cross_modality_redundancy = v);
    args.noise_correlation.inspect(|&v| *noise_correlation = v);
    args.seed.inspect(|&v| *seed = v);
    spec.validate()?;
    Ok(spec)
}

/// Writes `t1.csv`, `t2.csv` and `cohort_spec.json` into `out`.
pub fn cmd_generate(spec: &CohortSpec, out: &Path) -> Result<()> {
    let data = generate_cohort(spec)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    save_feature_table(data.t1(), &out.join("t1.csv"))?;
    save_feature_table(data.t2(), &out.join("t2.csv"))?;
    let doc = Versioned {
        schema_version: SCHEMA_VERSION,
        kind: "cohort_spec".to_string(),
        data: spec,
    };
    let path = out.join("cohort_spec.json");
    fs::write(&path, serde_json::to_string_pretty(&doc)? + "\n").map_err(io_err(&path))?;
    Ok(())
}

/// Reads meta-feature vectors from a CSV holding the seven named columns.
pub fn read_meta_csv(path: &Path) -> Result<Vec<MetaFeatureVector>> {
    let csv_err = |source| UpmiError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let idx: Vec<usize> = META_NAMES
        .iter()
        .map(|name| {
            headers.iter().position(|h| h.trim() == *name).ok_or_else(|| {
                UpmiError::Schema(format!("{}: missing meta-feature column '{name}'", path.display()))
            })
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut a = [0.0; 7];
        for (k, &i) in idx.iter().enumerate() {
            let cell = rec.get(i).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| UpmiError::NonNumeric {
                row: row + 1,
                column: META_NAMES[k].to_string(),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(UpmiError::NonFinite {
                    row: row + 1,
                    column: META_NAMES[k].to_string(),
                    value: cell.to_string(),
                });
            }
            a[k] = v;
        }
        out.push(MetaFeatureVector::from_array_unchecked(a));
    }
    if out.is_empty() {
        return Err(UpmiError::Schema(format!("{}: no meta-feature rows", path.display())));
    }
    Ok(out)
}

pub fn cmd_validate(real: &Path, synth: &Path) -> Result<SynthQualityReport> {
    validate_vectors(&read_meta_csv(real)?, &read_meta_csv(synth)?)
}

/// Plain-text KS table with the mean p-value and flagged dimensions.
pub fn format_quality(report: &SynthQualityReport) -> String {
    let mut s = format!("{:<16} {:>8} {:>8}  flag\n", "feature", "D", "p");
    for d in &report.dimensions {
        s += &format!(
            "{:<16} {:>8.4} {:>8.4}  {}\n",
            d.feature,
            d.d,
            d.p,
            if d.flagged { "*" } else { "" }
        );
    }
    s += &format!(
        "{}/{} dimensions with p > {}; mean p = {:.4}\n",
        report.n_similar(),
        report.dimensions.len(),
        report.alpha,
        report.mean_p
    );
    if !report.flagged.is_empty() {
        s += &format!("flagged: {}\n", report.flagged.join(", "));
    }
    s
}

fn format_table(result: &AblationResult) -> String {
    let mut s = format!("{:>8} {:>7} {:>15} {:>15}\n", "scenario", "n_synth", "AUC", "F1");
    for r in &result.reports {
        let f1 = match (r.f1_mean, r.f1_std) {
            (Some(m), Some(sd)) => format!("{m:.3} ± {sd:.3}"),
            _ => "NA".to_string(),
        };
        s += &format!(
            "{:>7}% {:>7} {:>15} {:>15}\n",
            r.scenario_pct,
            typical_n_synth(r),
            format!("{:.3} ± {:.3}", r.auc_mean, r.auc_std),
            f1
        );
    }
    if let Some(c) = &result.comparison {
        s += &format!(
            "best {}% vs real-only: mean ΔAUC {:+.4}, {}/{} folds improved",
            c.best_pct,
            c.mean_diff,
            c.folds_improved,
            c.auc_diffs.len()
        );
        if let Some(t) = &c.t_test {
            s += &format!(", t = {:.3}, p = {:.4}", t.t, t.p);
        }
        if let Some(d) = c.cohens_d {
            s += &format!(", d = {d:.2}");
        }
        if let Some((lo, hi)) = c.ci {
            s += &format!(", {:.0}% CI [{lo:.4}, {hi:.4}]", c.ci_level * 100.0);
        }
        s += "\n";
    }
    s
}

fn exit_code(e: &UpmiError) -> i32 {
    match e {
        UpmiError::Config(_) | UpmiError::InvalidScenario(_) | UpmiError::InvalidArgument(_) => 2,
        _ => 1,
    }
}

fn report_error(e: &UpmiError, dir: Option<&Path>) -> i32 {
    let report = ErrorReport {
        schema_version: SCHEMA_VERSION,
        status: "error".to_string(),
        kind: e.kind().to_string(),
        message: e.to_string(),
    };
    let text = serde_json::to_string_pretty(&report).unwrap_or_else(|_| format!("{{\"message\": {:?}}}", e.to_string()));
    eprintln!("{text}");
    if let Some(dir) = dir {
        if dir.is_dir() {
            let _ = fs::write(dir.join("error.json"), text + "\n");
        }
    }
    exit_code(e)
}

/// Runs a parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let config = match resolve_run_config(&args) {
                Ok(c) => c,
                Err(e) => return report_error(&e, None),
            };
            match cmd_run(&config) {
                Ok((result, dir)) => {
                    print!("{}", format_table(&result));
                    println!("reports written to {}", dir.display());
                    0
                }
                Err(e) => report_error(&e, Some(&config.resolved_output_dir())),
            }
        }
        Command::Generate(args) => match resolve_cohort_spec(&args).and_then(|spec| cmd_generate(&spec, &args.out)) {
            Ok(()) => {
                println!("cohort written to {}", args.out.display());
                0
            }
            Err(e) => report_error(&e, None),
        },
        Command::Validate(args) => match cmd_validate(&args.real, &args.synth) {
            Ok(report) => {
                print!("{}", format_quality(&report));
                if let Some(out) = &args.out {
                    let doc = Versioned {
                        schema_version: SCHEMA_VERSION,
                        kind: "synth_quality".to_string(),
                        data: &report,
                    };
                    let written = serde_json::to_string_pretty(&doc)
                        .map_err(UpmiError::from)
                        .and_then(|t| fs::write(out, t + "\n").map_err(io_err(out)));
                    if let Err(e) = written {
                        return report_error(&e, None);
                    }
                }
                0
            }
            Err(e) => report_error(&e, None),
        },
    }
}

pub fn main_entry() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    execute(Cli::parse())
}
