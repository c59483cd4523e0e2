use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use featreplay::continual::{run_experiment, ExperimentConfig, Report};
use featreplay::diagnostics::{memcheck_bank, memcheck_bytes, run_gradcheck, synthetic_bank, Fault};
use featreplay::memory::codec::parse;
use featreplay::memory::BankConfig;

use crate::config::{CliConfig, ReportFormat, SweepAxis};
use crate::Failure;

const DEFAULT_OUT: &str = "featreplay-out";

fn load(config: Option<&Path>) -> Result<CliConfig, Failure> {
    config.map_or_else(|| Ok(CliConfig::default()), CliConfig::load)
}

fn out_dir(cfg: &CliConfig, out: Option<PathBuf>) -> PathBuf {
    out.or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(runtime(e)),
        _ => Ok(()),
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::runtime(e.to_string())
}

/// Files a run writes, relative to its directory.
fn report_files(format: ReportFormat) -> Vec<&'static str> {
    let mut files = vec!["config.toml", "bank.bin"];
    if format.text() {
        files.push("report.txt");
    }
    if format.csv() {
        files.extend(["metrics.csv", "memory_trace.csv", "losses.csv"]);
    }
    files
}

fn refuse_overwrite(paths: &[PathBuf], force: bool) -> Result<(), Failure> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Failure::usage(format!(
            "{} exists; pass --force to overwrite",
            p.display()
        ))),
        None => Ok(()),
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::runtime(format!("cannot write {}: {e}", path.display())))
}

fn write_report(dir: &Path, report: &Report, cli: &CliConfig) -> Result<(), Failure> {
    let resolved = CliConfig {
        experiment: report.config.clone(),
        output: cli.output.clone(),
        sweep: Vec::new(),
    };
    write(&dir.join("config.toml"), toml::to_string(&resolved).map_err(runtime)?)?;
    write(&dir.join("bank.bin"), &report.bank_file)?;
    let format = cli.output.format;
    if format.text() {
        write(&dir.join("report.txt"), report.to_text())?;
    }
    if format.csv() {
        write(&dir.join("metrics.csv"), report.to_csv())?;
        write(&dir.join("memory_trace.csv"), report.memory_trace_csv())?;
        write(&dir.join("losses.csv"), report.losses_csv())?;
    }
    Ok(())
}

pub fn run(config: Option<&Path>, out: Option<PathBuf>, seed: Option<u64>, force: bool) -> Result<(), Failure> {
    let mut cli = load(config)?;
    if let Some(s) = seed {
        cli.experiment.seed = s;
    }
    let dir = out_dir(&cli, out);
    let targets: Vec<PathBuf> = report_files(cli.output.format).iter().map(|f| dir.join(f)).collect();
    refuse_overwrite(&targets, force)?;
    let report = run_experiment(&cli.experiment).map_err(runtime)?;
    write_report(&dir, &report, &cli)?;
    emit(&format!("{}\nwrote {}\n", report.to_text(), dir.display()))?;
    Ok(())
}

struct SweepRun {
    label: String,
    seed: u64,
    config: ExperimentConfig,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sweep(
    config: Option<&Path>,
    axis: Option<&str>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    force: bool,
) -> Result<(), Failure> {
    let config = config.ok_or_else(|| Failure::usage("sweep needs --config with a [[sweep]] axis"))?;
    let cli = load(Some(config))?;
    let axis = cli.axis(axis)?;
    let seeds = match (seed, axis.seeds.is_empty()) {
        (Some(s), _) => vec![s],
        (None, true) => vec![cli.experiment.seed],
        (None, false) => axis.seeds.clone(),
    };
    let mut runs = Vec::new();
    for value in &axis.values {
        let base = axis.apply(&cli.experiment, value)?;
        for &s in &seeds {
            runs.push(SweepRun {
                label: SweepAxis::label(value),
                seed: s,
                config: ExperimentConfig {
                    seed: s,
                    ..base.clone()
                },
            });
        }
    }
    let dir = out_dir(&cli, out);
    let run_dir = |r: &SweepRun| {
        dir.join(format!("{}={}", axis.param, r.label))
            .join(format!("seed{}", r.seed))
    };
    let mut targets = vec![dir.join("sweep.csv"), dir.join("sweep_summary.csv")];
    for r in &runs {
        targets.extend(report_files(cli.output.format).iter().map(|f| run_dir(r).join(f)));
    }
    refuse_overwrite(&targets, force)?;

    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut reports = Vec::with_capacity(runs.len());
    for chunk in runs.chunks(workers) {
        let done: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|r| s.spawn(|| run_experiment(&r.config))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        });
        for (r, report) in chunk.iter().zip(done) {
            let report =
                report.map_err(|e| Failure::runtime(format!("{}={} seed {}: {e}", axis.param, r.label, r.seed)))?;
            write_report(&run_dir(r), &report, &cli)?;
            reports.push(report);
        }
    }

    let mut csv = String::from("param,value,seed,final_accuracy,forgetting,peak_memory_bytes,bank_bytes\n");
    for (r, rep) in runs.iter().zip(&reports) {
        let f = rep.forgetting.map_or_else(String::new, |f| f.to_string());
        let _ = writeln!(
            csv,
            "{},{},{},{},{f},{},{}",
            axis.param,
            r.label,
            r.seed,
            rep.final_accuracy,
            rep.peak_memory_bytes(),
            rep.bank_bytes
        );
    }
    write(&dir.join("sweep.csv"), &csv)?;

    let mut summary = String::from("param,value,seeds,mean_final_accuracy,mean_forgetting\n");
    let mut table = format!(
        "{:<24} {:>6} {:>10} {:>11}\n",
        axis.param, "seeds", "accuracy", "forgetting"
    );
    for (label, group) in runs
        .iter()
        .zip(&reports)
        .collect::<Vec<_>>()
        .chunks(seeds.len())
        .map(|g| (&g[0].0.label, g))
    {
        let acc = mean(group.iter().map(|(_, r)| r.final_accuracy));
        let forget = group
            .iter()
            .all(|(_, r)| r.forgetting.is_some())
            .then(|| mean(group.iter().filter_map(|(_, r)| r.forgetting)));
        let f = forget.map_or_else(String::new, |f| f.to_string());
        let _ = writeln!(summary, "{},{label},{},{acc},{f}", axis.param, group.len());
        let _ = writeln!(
            table,
            "{label:<24} {:>6} {acc:>10.4} {:>11}",
            group.len(),
            forget.map_or_else(|| "n/a".into(), |f| format!("{f:.4}"))
        );
    }
    write(&dir.join("sweep_summary.csv"), &summary)?;
    let _ = writeln!(table, "\nwrote {} runs under {}", runs.len(), dir.display());
    emit(&table)?;
    Ok(())
}

pub fn gradcheck(seed: u64, fault: Option<&str>) -> Result<(), Failure> {
    let fault = fault
        .map(str::parse::<Fault>)
        .transpose()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let report = run_gradcheck(seed, fault).map_err(runtime)?;
    emit(&report.to_text())?;
    let failed = report.failures();
    if failed.is_empty() {
        return Ok(());
    }
    let names: Vec<String> = failed
        .iter()
        .map(|c| format!("{} (rel err {:.3e} > {:.0e})", c.name, c.worst_rel_err, c.tolerance))
        .collect();
    Err(Failure::runtime(format!("gradient check failed: {}", names.join(", "))))
}

pub fn memcheck(bank: Option<&Path>, config: Option<&Path>) -> Result<(), Failure> {
    let bank_config = match config {
        Some(p) => CliConfig::load(p)?.experiment.bank_config(),
        None => BankConfig::default(),
    };
    let report = match bank {
        Some(path) => {
            let bytes =
                std::fs::read(path).map_err(|e| Failure::runtime(format!("cannot read {}: {e}", path.display())))?;
            memcheck_bytes(&bytes, bank_config)
        }
        None => {
            let inserts = 2 * bank_config.budget_records().max(1);
            memcheck_bank(&synthetic_bank(bank_config, inserts, 0).map_err(runtime)?)
        }
    };
    emit(&report.to_text())?;
    match report.violations.first() {
        None => Ok(()),
        Some(v) => Err(Failure::runtime(format!("memcheck failed: {v}"))),
    }
}

pub fn dump(bank: &Path) -> Result<(), Failure> {
    let bytes = std::fs::read(bank).map_err(|e| Failure::runtime(format!("cannot read {}: {e}", bank.display())))?;
    let file = parse(&bytes).map_err(runtime)?;
    let mut s = format!(
        "code_dim {}  short-term {}  long-term {}  bytes {}\n",
        file.code_dim,
        file.stm.len(),
        file.ltm.len(),
        bytes.len()
    );
    let _ = writeln!(
        s,
        "{:>5} {:>5} {:>6} {:>5} {:>8} {:>6} {:>6} {:>6}  code",
        "idx", "store", "class", "task", "import", "unc", "diff", "age"
    );
    for (i, r) in file.stm.iter().chain(&file.ltm).enumerate() {
        let store = if i < file.stm.len() { "stm" } else { "ltm" };
        let code: Vec<String> = r.code.iter().map(|v| format!("{v:.4}")).collect();
        let _ = writeln!(
            s,
            "{i:>5} {store:>5} {:>6} {:>5} {:>8.4} {:>6.3} {:>6.3} {:>6}  [{}]",
            r.class_id,
            r.task_id,
            r.importance,
            r.uncertainty,
            r.difficulty,
            r.age,
            code.join(", ")
        );
    }
    emit(&s)
}
