use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use feddp::dataset::{categorize_clients, CsvSchema, Manifest, ProjectDataset};
use feddp::experiment::suite::{
    ablation_variants, efficiency_table, run_suite, sweep_variants, SuiteReport, SweepParam, Variant,
};
use feddp::experiment::{
    compare_methods, emit_report, load_datasets, read_report, run_experiment_logged, scenario::build_scenario,
    ExperimentConfig, Method, Metric, Pairing, Precision, ProjectRuns,
};
use feddp::synth;
use feddp::{Error, Scalar};

#[derive(Parser)]
#[command(name = "feddp", version, about = "Federated cross-project defect prediction simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Centralized,
    Flr,
    Openflr,
    Feddp,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Centralized => Method::Centralized,
            MethodArg::Flr => Method::Flr,
            MethodArg::Openflr => Method::OpenFlr,
            MethodArg::Feddp => Method::FedDp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Precision,
    Recall,
    F1,
    Auc,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Precision => Metric::Precision,
            MetricArg::Recall => Metric::Recall,
            MetricArg::F1 => Metric::F1,
            MetricArg::Auc => Metric::Auc,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    R,
    N,
    P,
}

#[derive(Clone, Copy, ValueEnum)]
enum CorpusArg {
    Promise,
    Softlab,
}

#[derive(clap::Args)]
struct Selection {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Test projects; defaults to the config's `test_project`.
    #[arg(long, value_delimiter = ',')]
    projects: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more methods on one or more test projects and write reports.
    Run {
        #[command(flatten)]
        sel: Selection,
        /// Methods to run; defaults to the config's `method`.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<MethodArg>,
        /// Also stream every round as NDJSON to `<results>/rounds.ndjson`.
        #[arg(long)]
        log_rounds: bool,
    },
    /// Vary R, N or p and report F1 per value.
    Sweep {
        #[command(flatten)]
        sel: Selection,
        #[arg(long, value_enum)]
        param: SweepArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Full FedDP versus uniform weights versus no distillation.
    Ablate {
        #[command(flatten)]
        sel: Selection,
    },
    /// Significance table from report files written by `run`.
    Compare {
        /// Label of the method under test, e.g. `FedDP/FedProx`.
        #[arg(long)]
        ours: String,
        #[arg(long, value_enum, default_value = "f1")]
        metric: MetricArg,
        #[arg(long, value_enum, default_value = "repeats")]
        pairing: PairingArg,
        /// Report JSON files.
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Rounds needed to stably reach F1 targets, per method.
    Efficiency {
        #[command(flatten)]
        sel: Selection,
        #[arg(long, value_delimiter = ',', default_value = "flr,openflr,feddp")]
        methods: Vec<MethodArg>,
        #[arg(long, value_delimiter = ',', default_value = "0.525,0.55")]
        targets: Vec<f64>,
    },
    /// Scale/balance category of every client in a manifest.
    Categorize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "promise")]
        schema: String,
        /// Projects left out of the client pool (e.g. the distillation project).
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<String>,
    },
    /// Write a synthetic corpus shaped like the public collections.
    Synth {
        #[arg(long, value_enum)]
        corpus: CorpusArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PairingArg {
    Repeats,
    Rounds,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> feddp::Result<()> {
    match command {
        Command::Run { sel, methods, log_rounds } => {
            let cfg = ExperimentConfig::load(&sel.config)?;
            match cfg.precision {
                Precision::F64 => run::<f64>(&cfg, &sel.projects, &methods, log_rounds),
                Precision::F32 => run::<f32>(&cfg, &sel.projects, &methods, log_rounds),
            }
        }
        Command::Sweep { sel, param, values } => {
            let cfg = ExperimentConfig::load(&sel.config)?;
            let param = match param {
                SweepArg::R => SweepParam::ParticipationRatio,
                SweepArg::N => SweepParam::DistillSteps,
                SweepArg::P => SweepParam::SampleSize,
            };
            let variants = sweep_variants(&cfg, param, &values)?;
            suite(&cfg, &sel.projects, &variants, "sweep")
        }
        Command::Ablate { sel } => {
            let cfg = ExperimentConfig::load(&sel.config)?;
            suite(&cfg, &sel.projects, &ablation_variants(&cfg), "ablation")
        }
        Command::Compare { ours, metric, pairing, reports } => {
            let pairing = match pairing {
                PairingArg::Repeats => Pairing::Repeats,
                PairingArg::Rounds => Pairing::Rounds,
            };
            compare(&ours, metric.into(), pairing, &reports)
        }
        Command::Efficiency { sel, methods, targets } => {
            let cfg = ExperimentConfig::load(&sel.config)?;
            let variants: Vec<Variant> = methods
                .iter()
                .map(|&m| Variant::labelled(ExperimentConfig { method: m.into(), ..cfg.clone() }))
                .collect();
            let projects = projects_or_default(&cfg, &sel.projects);
            let report = with_datasets(&cfg, |data| run_suite(&variants, &projects, data))?;
            let dir = cfg.resolved_results_dir();
            let mut text = String::new();
            for runs in &report.projects {
                let table = efficiency_table(runs, &targets);
                text.push_str(&table.to_markdown());
                text.push('\n');
                write(&dir.join(format!("efficiency_{}.json", runs.project)), &to_json(&table))?;
            }
            write(&dir.join("efficiency.md"), &text)?;
            print!("{text}");
            Ok(())
        }
        Command::Categorize { manifest, schema, exclude } => {
            let schema = CsvSchema::preset(&schema)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown schema {schema:?}")))?;
            let datasets: Vec<ProjectDataset<f64>> = Manifest::load(&manifest)?.load_datasets(&schema)?;
            let clients: Vec<_> = datasets
                .into_iter()
                .filter(|d| !exclude.iter().any(|e| e == d.project()))
                .collect();
            let categories = categorize_clients(&clients);
            for c in &clients {
                println!(
                    "{}\t{}\t{:.2}\t{}",
                    c.name(),
                    c.len(),
                    100.0 * c.defect_rate(),
                    categories[&c.name()]
                );
            }
            Ok(())
        }
        Command::Synth { corpus, out, seed } => {
            let (data, schema) = match corpus {
                CorpusArg::Promise => (synth::promise_corpus::<f64>(seed), CsvSchema::promise()),
                CorpusArg::Softlab => (synth::softlab_corpus::<f64>(seed), CsvSchema::softlab()),
            };
            let manifest = synth::write_corpus(&data, &schema, &out)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn projects_or_default(cfg: &ExperimentConfig, projects: &[String]) -> Vec<String> {
    if projects.is_empty() {
        vec![cfg.test_project.clone()]
    } else {
        projects.to_vec()
    }
}

fn with_datasets<R>(
    cfg: &ExperimentConfig,
    f: impl FnOnce(&[ProjectDataset<f64>]) -> feddp::Result<R>,
) -> feddp::Result<R> {
    let data = load_datasets::<f64>(cfg)?;
    f(&data)
}

fn write(path: &Path, contents: &str) -> feddp::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<S: serde::Serialize>(value: &S) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

fn run<T: Scalar>(
    cfg: &ExperimentConfig,
    projects: &[String],
    methods: &[MethodArg],
    log_rounds: bool,
) -> feddp::Result<()> {
    let datasets = load_datasets::<T>(cfg)?;
    let dir = cfg.resolved_results_dir();
    let methods: Vec<Method> = if methods.is_empty() {
        vec![cfg.method]
    } else {
        methods.iter().map(|&m| m.into()).collect()
    };
    let mut log = if log_rounds {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join("rounds.ndjson");
        Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
    } else {
        None
    };
    for project in projects_or_default(cfg, projects) {
        for &method in &methods {
            let run_cfg = ExperimentConfig {
                method,
                test_project: project.clone(),
                ..cfg.clone()
            };
            let scenario = build_scenario(&feddp::experiment::runner::scenario_spec(&run_cfg), &datasets)?;
            let mut io_result = Ok(());
            let report = run_experiment_logged(&run_cfg, &scenario, |entry| {
                if let (Some((w, path)), Ok(())) = (log.as_mut(), &io_result) {
                    let line = serde_json::to_string(entry).expect("serializable");
                    io_result = writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e));
                }
            })?;
            io_result?;
            let files = emit_report(&report, &dir)?;
            print!("{}", report.summary_markdown());
            println!("\nwrote {}\n", files.json.display());
        }
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn suite(cfg: &ExperimentConfig, projects: &[String], variants: &[Variant], name: &str) -> feddp::Result<()> {
    let projects = projects_or_default(cfg, projects);
    let report: SuiteReport = with_datasets(cfg, |data| run_suite(variants, &projects, data))?;
    let dir = cfg.resolved_results_dir();
    let table = report.f1_markdown();
    write(&dir.join(format!("{name}.md")), &table)?;
    write(&dir.join(format!("{name}.json")), &to_json(&report))?;
    print!("{table}");
    Ok(())
}

fn compare(ours: &str, metric: Metric, pairing: Pairing, paths: &[PathBuf]) -> feddp::Result<()> {
    let mut by_project: BTreeMap<String, Vec<_>> = BTreeMap::new();
    let mut order = Vec::new();
    for path in paths {
        let report = read_report(path)?;
        if !by_project.contains_key(&report.test_project) {
            order.push(report.test_project.clone());
        }
        by_project.entry(report.test_project.clone()).or_default().push(report);
    }
    let projects: Vec<ProjectRuns> = order
        .into_iter()
        .map(|p| ProjectRuns {
            reports: by_project.remove(&p).unwrap_or_default(),
            project: p,
        })
        .collect();
    let table = compare_methods(ours, &projects, metric, pairing)?;
    print!("{}", table.to_markdown());
    Ok(())
}
