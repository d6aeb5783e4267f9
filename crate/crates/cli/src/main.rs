mod config;
mod render;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vocabpipe::cost::{cost_ratios, CostOptions};
use vocabpipe::schedule::{analyze_block, building_block, build_program_with, redistribute, redistribute_layers};
use vocabpipe::sim::{metrics, simulate, MachineModel, MetricsOptions};
use vocabpipe::vocab::{verify, Fault, Pipeline, VerifyDims};
use vocabpipe::{DeviceProgram, Method, ModelConfig};

use config::Settings;

#[derive(Parser)]
#[command(name = "vocabpipe", version, about = "Pipeline schedules with vocabulary parallelism: analysis, simulation and numerical checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lifespan, interval and peak microbatches of building blocks.
    Analyze(RunArgs),
    /// Build and simulate a schedule; writes metrics, timeline and pictures.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Simulate this program file instead of building one.
        #[arg(long)]
        program: Option<PathBuf>,
        #[arg(long)]
        no_svg: bool,
    },
    /// Check the sharded output and input layers against the reference.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Break one pipeline on purpose (naive, alg1 or alg2).
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Output-layer to transformer-layer compute and memory ratios.
    Ratio(RunArgs),
    /// Layer counts per stage that minimize the longest stage.
    Redistribute(RunArgs),
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    devices: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    vocab: Option<usize>,
    #[arg(long)]
    microbatches: Option<usize>,
    /// Microbatch size in sequences.
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Collective latency as a fraction of a stage forward.
    #[arg(long)]
    collective: Option<f64>,
    /// Activation bytes per layer in units of b·s·h.
    #[arg(long)]
    act_bytes: Option<f64>,
    #[arg(long)]
    bytes_per_param: Option<f64>,
    /// Comma-separated vocabulary sizes for `ratio`.
    #[arg(long, value_delimiter = ',')]
    vocab_sweep: Option<Vec<usize>>,
    /// Output layer cost in transformer layers for `redistribute`.
    #[arg(long)]
    ratio: Option<f64>,
}

impl RunArgs {
    fn settings(&self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let method = match &self.method {
            Some(name) => Some(name.parse::<Method>()?),
            None => None,
        };
        let flags = Settings {
            method,
            batch: self.batch,
            seq_len: self.seq_len,
            hidden: self.hidden,
            vocab: self.vocab,
            layers: self.layers,
            devices: self.devices,
            microbatches: self.microbatches,
            seed: self.seed,
            out: self.out.clone(),
            collective: self.collective,
            act_bytes: self.act_bytes,
            bytes_per_param: self.bytes_per_param,
            vocab_sweep: self.vocab_sweep.clone(),
            ratio: self.ratio,
        };
        Ok(file.overridden_by(flags))
    }
}

enum Outcome {
    Ok,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

// A closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing to stdout"),
        _ => Ok(()),
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Analyze(a) => analyze(&a.settings()?),
        Command::Simulate { run, program, no_svg } => simulate_cmd(&run.settings()?, program.as_deref(), !no_svg),
        Command::Verify { run, inject_fault } => verify_cmd(&run.settings()?, inject_fault.as_deref()),
        Command::Ratio(a) => ratio(&a.settings()?),
        Command::Redistribute(a) => redistribute_cmd(&a.settings()?),
    }
}

/// Writes through a temporary file in the target directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn analyze(s: &Settings) -> Result<Outcome> {
    let p = s.devices.unwrap_or(ModelConfig::default().p);
    let methods = match s.method {
        Some(m) => vec![m],
        None => Method::ALL.to_vec(),
    };
    let mut out = String::from("method,p,lifespan,interval,peak_microbatches\n");
    for m in methods {
        let a = analyze_block(&building_block(m, p)?)?;
        let _ = writeln!(out, "{m},{p},{},{},{}", a.lifespan, a.interval, a.peak_microbatches);
    }
    emit(&out)?;
    if let Some(dir) = &s.out {
        write_atomic(&dir.join("analyze.csv"), &out)?;
    }
    Ok(Outcome::Ok)
}

fn simulate_cmd(s: &Settings, program_file: Option<&Path>, svg: bool) -> Result<Outcome> {
    let opts = CostOptions {
        bytes_per_param: s.bytes_per_param.unwrap_or(CostOptions::default().bytes_per_param),
        collective_fraction: s.collective.unwrap_or(CostOptions::default().collective_fraction),
    };
    let (program, machine) = match program_file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let program = DeviceProgram::from_text(&text).with_context(|| format!("parsing {}", path.display()))?;
            let machine = MachineModel::with_options(program.method, &program.cfg, &opts)?;
            (program, machine)
        }
        None => {
            let Some(method) = s.method else { bail!("--method is required") };
            let cfg = s.model(ModelConfig::default())?;
            let machine = MachineModel::with_options(method, &cfg, &opts)?;
            (build_program_with(method, &cfg, &machine)?, machine)
        }
    };
    let cfg = program.cfg;
    let timeline = simulate(&program, &machine)?;
    let mut mopts = MetricsOptions::for_config(&cfg);
    mopts.bytes_per_param = opts.bytes_per_param;
    if let Some(k) = s.act_bytes {
        mopts.act_bytes_per_layer = k * (cfg.b * cfg.s * cfg.h) as f64;
    }
    let m = metrics(&timeline, &machine.layout, &cfg, &mopts);
    let csv = m.to_csv();

    let dir = s.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_atomic(&dir.join("metrics.csv"), &csv)?;
    write_atomic(&dir.join("timeline.txt"), &timeline.to_text())?;
    write_atomic(&dir.join("program.txt"), &program.to_text())?;
    let resolution = ((timeline.makespan / 240.0 / 0.25).ceil() * 0.25).max(0.25);
    write_atomic(&dir.join("timeline_grid.txt"), &render::grid(&timeline, resolution))?;
    if svg {
        write_atomic(&dir.join("timeline.svg"), &render::svg(&timeline))?;
    }
    let effective = Settings {
        method: Some(program.method),
        batch: Some(cfg.b),
        seq_len: Some(cfg.s),
        hidden: Some(cfg.h),
        vocab: Some(cfg.v),
        layers: Some(cfg.l),
        devices: Some(cfg.p),
        microbatches: Some(cfg.n),
        collective: Some(opts.collective_fraction),
        act_bytes: Some(mopts.act_bytes_per_layer / (cfg.b * cfg.s * cfg.h) as f64),
        bytes_per_param: Some(opts.bytes_per_param),
        out: Some(dir.clone()),
        ..Settings::default()
    };
    write_atomic(&dir.join("run.cfg"), &effective.to_text())?;

    emit(&format!(
        "method={} p={} n={} makespan={:.6} mfu={:.6} peak_inflight={}\n{csv}",
        program.method,
        cfg.p,
        cfg.n,
        m.makespan,
        m.mfu,
        m.max_peak_inflight()
    ))?;
    Ok(Outcome::Ok)
}

fn verify_cmd(s: &Settings, fault: Option<&str>) -> Result<Outcome> {
    let base = VerifyDims::default();
    let dims = VerifyDims {
        b: s.batch.unwrap_or(base.b),
        s: s.seq_len.unwrap_or(base.s),
        h: s.hidden.unwrap_or(base.h),
        v: s.vocab.unwrap_or(base.v),
        p: s.devices.unwrap_or(base.p),
    };
    if [dims.b, dims.s, dims.h, dims.v, dims.p].contains(&0) {
        bail!("verify dimensions must be at least 1");
    }
    let fault = match fault {
        None => None,
        Some(name) => match Pipeline::ALL.into_iter().find(|p| p.name() == name) {
            Some(p) => Some(Fault::DropMaxCorrection(p)),
            None => bail!("unknown pipeline `{name}`"),
        },
    };
    let report = verify(dims, s.seed.unwrap_or(0), fault)?;
    emit(&format!("{report}\n"))?;
    if report.passed() {
        Ok(Outcome::Ok)
    } else {
        eprintln!("failed: {}", report.failures().join(", "));
        Ok(Outcome::VerifyFailed)
    }
}

fn ratio(s: &Settings) -> Result<Outcome> {
    let base = s.model(ModelConfig::default())?;
    let sweep = match (&s.vocab_sweep, s.vocab) {
        (Some(list), _) => list.clone(),
        (None, Some(v)) => vec![v],
        (None, None) => vec![32_000, 64_000, 128_000, 256_000],
    };
    if sweep.is_empty() {
        bail!("vocabulary sweep is empty");
    }
    let mut out = String::from("V,compute_ratio,memory_ratio\n");
    for v in sweep {
        let cfg = ModelConfig { v, ..base };
        cfg.validate()?;
        let r = cost_ratios(&cfg);
        let _ = writeln!(out, "{v},{:.6},{:.6}", r.compute, r.memory);
    }
    emit(&out)?;
    if let Some(dir) = &s.out {
        write_atomic(&dir.join("ratios.csv"), &out)?;
    }
    Ok(Outcome::Ok)
}

fn redistribute_cmd(s: &Settings) -> Result<Outcome> {
    let cfg = s.model(ModelConfig::default())?;
    let a = match s.ratio {
        Some(r) => redistribute(cfg.l, cfg.p, r, 0.0),
        None => redistribute_layers(&cfg),
    };
    let counts: Vec<String> = a.layers_per_stage.iter().map(|c| c.to_string()).collect();
    emit(&format!("layers_per_stage {}\nobjective {:.6}\n", counts.join(","), a.objective))?;
    Ok(Outcome::Ok)
}
