//! `repro-audit`: audit the computational reproducibility of R projects.
//!
//! Each subcommand runs one pipeline stage from cached artifacts;
//! `pipeline` composes them end to end.

use clap::{Parser, Subcommand, ValueEnum};
use repro_audit_core::pipeline::{
    self, parse_project_entry, parse_projects_file, PipelineConfig, PipelineError,
};
use repro_audit_core::report::ReportFormat;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "repro-audit",
    version,
    about = "Batch audit of the computational reproducibility of R projects"
)]
struct Cli {
    /// Plain-text key=value config file; flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Comma-separated project ids or local paths (entry|a.R,b.R adds
    /// expected scripts).
    #[arg(long, global = true, value_delimiter = ',')]
    projects: Vec<String>,

    /// File with one project entry per line.
    #[arg(long, global = true)]
    projects_file: Option<PathBuf>,

    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    #[arg(long, global = true)]
    staging_dir: Option<PathBuf>,

    /// Output directory for reports and stage artifacts.
    #[arg(long = "out", global = true)]
    out: Option<PathBuf>,

    /// Per-script wall-clock limit in seconds.
    #[arg(long, global = true)]
    timeout: Option<u64>,

    /// Maximum concurrent projects (fetch/build) and containers.
    #[arg(long, global = true)]
    parallel: Option<usize>,

    /// Use the synthetic executor; no container runtime required.
    #[arg(long, global = true)]
    dry_run: bool,

    /// Scripted outcomes for the dry-run executor (JSON file).
    #[arg(long, global = true)]
    dry_run_outcomes: Option<PathBuf>,

    /// Disallow remote fetching.
    #[arg(long, global = true)]
    offline: bool,

    /// Error pattern table (TSV) replacing the built-in one.
    #[arg(long, global = true)]
    pattern_table: Option<PathBuf>,

    /// Dump per-script tokens and calls as line-delimited JSON.
    #[arg(long, global = true)]
    dump_analysis: bool,

    /// Report format printed to stdout by `report` and `pipeline`.
    #[arg(long, global = true, value_enum, default_value_t = CliFormat::Json)]
    format: CliFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFormat {
    Json,
    Csv,
    Md,
}

impl From<CliFormat> for ReportFormat {
    fn from(value: CliFormat) -> Self {
        match value {
            CliFormat::Json => ReportFormat::Json,
            CliFormat::Csv => ReportFormat::Csv,
            CliFormat::Md => ReportFormat::Markdown,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Retrieve project files into the cache and verify referenced scripts.
    Fetch,
    /// Scan fetched projects for reproducibility-related files.
    Scan,
    /// Tokenize and extract calls; print a summary (dump with --dump-analysis).
    Analyze,
    /// Infer package dependencies and portability lints per project.
    Infer,
    /// Generate DESCRIPTION / install.R / runtime.txt and stage projects.
    Spec,
    /// Build one container image per staged project.
    Build,
    /// Execute every script in its project's container (or dry-run).
    Exec,
    /// Classify failure logs into error categories.
    Classify,
    /// Aggregate artifacts into report.json / report.csv / report.md.
    Report,
    /// Run every stage end to end.
    Pipeline,
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.apply_config_file(&text).map_err(PipelineError::Config)?;
    }
    if let Some(path) = &cli.projects_file {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        cfg.projects.extend(parse_projects_file(&text));
    }
    for entry in &cli.projects {
        cfg.projects.push(parse_project_entry(entry));
    }
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = dir.clone();
    }
    if let Some(dir) = &cli.staging_dir {
        cfg.staging_dir = dir.clone();
    }
    if let Some(dir) = &cli.out {
        cfg.output_dir = dir.clone();
    }
    if let Some(timeout) = cli.timeout {
        cfg.limits.timeout_s = timeout;
    }
    if let Some(parallel) = cli.parallel {
        cfg.limits.parallel_projects = parallel;
        cfg.limits.parallel_containers = parallel;
    }
    if cli.dry_run {
        cfg.dry_run = true;
    }
    if let Some(path) = &cli.dry_run_outcomes {
        cfg.dry_run_outcomes = Some(path.clone());
    }
    if cli.offline {
        cfg.offline = true;
    }
    if let Some(path) = &cli.pattern_table {
        cfg.pattern_table_path = Some(path.clone());
    }
    if cli.dump_analysis {
        cfg.dump_analysis = true;
    }
    cfg.validate().map_err(PipelineError::Config)?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    match cli.command {
        Command::Fetch => {
            let out = pipeline::stage_fetch(cfg)?;
            println!(
                "fetched {} project(s); {} unretrievable",
                out.manifests.len(),
                out.unretrievable.len()
            );
            for m in &out.manifests {
                println!(
                    "  {}: {} files, {} R script(s), {} missing ref(s)",
                    m.project_ref.project_id,
                    m.files.len(),
                    m.r_scripts.len(),
                    m.missing_refs.len()
                );
            }
            for u in &out.unretrievable {
                println!("  {}: unretrievable ({})", u.project_id, u.reason);
            }
        }
        Command::Scan => {
            let fetched = pipeline::load_fetched(cfg)?;
            let inventories = pipeline::stage_scan(cfg, &fetched.manifests)?;
            for inv in &inventories {
                let found: Vec<String> = inv
                    .present
                    .iter()
                    .filter(|(_, v)| !v.is_empty())
                    .map(|(k, v)| format!("{k} ({})", v.len()))
                    .collect();
                println!(
                    "  {}: {}",
                    inv.project_id,
                    if found.is_empty() {
                        "no reproducibility files".to_string()
                    } else {
                        found.join(", ")
                    }
                );
            }
        }
        Command::Analyze => {
            let fetched = pipeline::load_fetched(cfg)?;
            let layout = pipeline::Layout::new(cfg);
            for m in &fetched.manifests {
                let id = &m.project_ref.project_id;
                for script in &m.r_scripts {
                    let bytes = fs::read(layout.project_cache(id).join(script))
                        .unwrap_or_default();
                    let analysis = repro_audit_core::analyzer::analyze_source(&bytes);
                    println!(
                        "  {id}/{script}: {} tokens, {} calls, {} issue(s){}",
                        analysis.tokens.len(),
                        analysis.calls.len(),
                        analysis.issues.len(),
                        if analysis.encoding_suspect {
                            ", encoding suspect"
                        } else {
                            ""
                        }
                    );
                }
            }
            if cfg.dump_analysis {
                pipeline::stage_infer(cfg, &fetched.manifests)?;
                println!("analysis dump written under {}", cfg.output_dir.display());
            }
        }
        Command::Infer => {
            let fetched = pipeline::load_fetched(cfg)?;
            let out = pipeline::stage_infer(cfg, &fetched.manifests)?;
            for (id, set) in &out.merged {
                let pkgs: Vec<&str> = set.packages.iter().map(String::as_str).collect();
                println!(
                    "  {id}: {} package(s) [{}], {} rejected, {} dynamic miss(es)",
                    set.packages.len(),
                    pkgs.join(", "),
                    set.rejected.len(),
                    set.dynamic_misses.len()
                );
            }
        }
        Command::Spec => {
            let fetched = pipeline::load_fetched(cfg)?;
            let inferred = pipeline::stage_infer(cfg, &fetched.manifests)?;
            pipeline::stage_spec(cfg, &fetched.manifests, &inferred.merged)?;
            println!(
                "staged {} project(s) under {}",
                fetched.manifests.len(),
                cfg.staging_dir.display()
            );
        }
        Command::Build => {
            let fetched = pipeline::load_fetched(cfg)?;
            let builds = pipeline::stage_build(cfg, &fetched.manifests)?;
            for b in &builds {
                println!(
                    "  {}: {:?}{}",
                    b.project_id,
                    b.status,
                    b.image_tag
                        .as_deref()
                        .map(|t| format!(" ({t})"))
                        .unwrap_or_default()
                );
            }
        }
        Command::Exec => {
            let fetched = pipeline::load_fetched(cfg)?;
            let builds = pipeline::load_builds(cfg)?;
            let records = pipeline::stage_exec(cfg, &fetched.manifests, &builds)?;
            for r in &records {
                println!("  {}/{}: {:?}", r.project_id, r.script, r.status);
            }
        }
        Command::Classify => {
            let records = pipeline::load_executions(cfg)?;
            let classifications = pipeline::stage_classify(cfg, &records)?;
            for c in &classifications {
                println!("  {}: {} -> {:?}", c.script, c.initial_type, c.category);
            }
        }
        Command::Report => {
            let fetched = pipeline::load_fetched(cfg)?;
            let inventories = pipeline::stage_scan(cfg, &fetched.manifests)?;
            let inferred = pipeline::stage_infer(cfg, &fetched.manifests)?;
            let builds = pipeline::load_builds(cfg)?;
            let records = pipeline::load_executions(cfg)?;
            let classifications = pipeline::load_classifications(cfg)?;
            let report = pipeline::stage_report(
                cfg,
                &fetched.manifests,
                &fetched.unretrievable,
                &builds,
                &records,
                &classifications,
                &inventories,
                &inferred.lints,
                pipeline::EPOCH_TIMESTAMP.to_string(),
            )?;
            print_report(&report, cli.format)?;
        }
        Command::Pipeline => {
            let report = pipeline::run_pipeline(cfg)?;
            print_report(&report, cli.format)?;
        }
    }
    Ok(())
}

fn print_report(
    report: &repro_audit_core::report::AuditReport,
    format: CliFormat,
) -> Result<(), PipelineError> {
    let rendered = repro_audit_core::report::emit_report(report, format.into())
        .map_err(|e| PipelineError::Stage {
            stage: "report",
            message: e.to_string(),
        })?;
    print!("{rendered}");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("repro-audit: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(&cli, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("repro-audit: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
