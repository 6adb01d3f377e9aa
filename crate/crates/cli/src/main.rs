use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dynprec::engine::{simulate_trace, Msp2Source};
use dynprec::profiler::{self, PrecisionProfile, ProfileMode, Target};
use dynprec::trace::{self, gen_synthetic, ActivationTrace, NetConfig, SyntheticSpec, TinyNet};
use dynprec::{ArchConfig, EngineKind, ShifterReach};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

mod output;

use output::{Format, ReportDoc, RunSettings, TraceInfo};

#[derive(Parser)]
#[command(
    name = "dynprec",
    version,
    about = "Bit-serial accelerator cycle simulator"
)]
struct Cli {
    /// Directory for outputs written without an explicit --out.
    #[arg(long, global = true, env = "DYNPREC_OUT_DIR")]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write an activation trace from a network config or a synthetic spec.
    GenTrace(GenTraceArgs),
    /// Search per-layer precisions for a network.
    Profile(ProfileArgs),
    /// Run engines over traces and report cycles and speedups.
    Simulate(SimulateArgs),
    /// Merge simulate reports and recompute the geometric means.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenTraceArgs {
    /// Network config (TOML).
    #[arg(
        long,
        conflicts_with = "synthetic",
        required_unless_present = "synthetic"
    )]
    net: Option<PathBuf>,
    /// Synthetic span spec (TOML).
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Fixed,
    Msp2,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    net: PathBuf,
    #[arg(long, value_enum, default_value = "fixed")]
    mode: Mode,
    /// `exact` or a top-1 agreement fraction in [0, 1].
    #[arg(long, default_value = "exact")]
    target: Target,
    /// Fixed-point profile the msp2 search runs on top of.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace file; repeat for several networks.
    #[arg(long = "trace", required = true)]
    traces: Vec<PathBuf>,
    /// Engine to report; repeatable. Defaults to all four.
    #[arg(long = "engine")]
    engines: Vec<EngineKind>,
    /// Fixed-point profile: one for all traces or one per trace. Without it
    /// the per-layer envelope of each trace is used.
    #[arg(long = "profile")]
    profiles: Vec<PathBuf>,
    /// MSP2 budget profile for the essential-bit engine: one for all traces
    /// or one per trace.
    #[arg(long = "msp2-profile")]
    msp2_profiles: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    subgroup_size: usize,
    /// Defaults to the width recorded in each trace.
    #[arg(long)]
    base_width: Option<u8>,
    /// `full` or a shifter width in bits.
    #[arg(long, default_value = "full")]
    shifter_reach: ShifterReach,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report written by `simulate`; repeatable.
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTrace(a) => gen_trace(a, cli.out_dir.as_deref()),
        Command::Profile(a) => profile(a, cli.out_dir.as_deref()),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynprec: error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_text(path: &Path, what: &str) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {what} `{}`", path.display()))
}

fn load_net(path: &Path, seed: Option<u64>) -> Result<TinyNet> {
    let bad = || format!("invalid net config `{}`", path.display());
    let mut cfg = NetConfig::from_toml(&read_text(path, "net config")?).with_context(bad)?;
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.eval.seed = s;
    }
    TinyNet::from_config(&cfg).with_context(bad)
}

fn load_profile(path: &Path, mode: ProfileMode) -> Result<PrecisionProfile> {
    let p = PrecisionProfile::from_toml(&read_text(path, "profile")?)
        .with_context(|| format!("invalid profile `{}`", path.display()))?;
    if p.mode != mode {
        bail!(
            "profile `{}` has mode {:?}, expected {:?}",
            path.display(),
            p.mode,
            mode
        );
    }
    Ok(p)
}

fn default_path(out: Option<PathBuf>, out_dir: Option<&Path>, file: String) -> PathBuf {
    out.unwrap_or_else(|| out_dir.unwrap_or(Path::new(".")).join(file))
}

fn refuse_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("`{}` exists; pass --force to overwrite", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8], force: bool) -> Result<()> {
    refuse_overwrite(path, force)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory `{}`", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing `{}`", path.display()))
}

fn gen_trace(a: GenTraceArgs, out_dir: Option<&Path>) -> Result<()> {
    let (name, trace) = match (&a.net, &a.synthetic) {
        (Some(path), _) => {
            let net = load_net(path, a.seed)?;
            let (trace, _) = trace::run_reference(&net, &net.eval_inputs())
                .with_context(|| format!("running net `{}`", path.display()))?;
            (net.name.clone(), trace)
        }
        (None, Some(path)) => {
            let bad = || format!("invalid synthetic spec `{}`", path.display());
            let mut spec =
                SyntheticSpec::from_toml(&read_text(path, "synthetic spec")?).with_context(bad)?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            let name = path
                .file_stem()
                .map_or("synthetic".into(), |s| s.to_string_lossy().into_owned());
            (name, gen_synthetic(&spec).with_context(bad)?.trace)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let path = default_path(a.out, out_dir, format!("{name}.dsta"));
    write_file(&path, &trace.to_bytes()?, a.force)?;
    println!(
        "{}\t{} layers\tsha256 {}",
        path.display(),
        trace.layers.len(),
        trace.checksum()?
    );
    Ok(())
}

fn profile(a: ProfileArgs, out_dir: Option<&Path>) -> Result<()> {
    let net = load_net(&a.net, a.seed)?;
    let inputs = net.eval_inputs();
    let ctx = || format!("profiling net `{}`", a.net.display());
    let (p, suffix) = match (a.mode, &a.base) {
        (Mode::Fixed, Some(_)) => bail!("--base only applies to --mode msp2"),
        (Mode::Fixed, None) => (
            profiler::profile_fixedpoint(&net, &inputs, a.target).with_context(ctx)?,
            "fixed",
        ),
        (Mode::Msp2, None) => (
            profiler::profile_msp2(&net, &inputs, a.target).with_context(ctx)?,
            "msp2",
        ),
        (Mode::Msp2, Some(base)) => {
            let base = load_profile(base, ProfileMode::FixedPoint)?;
            (
                profiler::profile_msp2_over(&net, &inputs, a.target, &base).with_context(ctx)?,
                "msp2",
            )
        }
    };
    let path = default_path(a.out, out_dir, format!("{}.{suffix}.toml", net.name));
    write_file(&path, p.to_toml()?.as_bytes(), a.force)?;
    println!(
        "{}\t{} layers\taccuracy {:.4} (baseline {:.4}, target {})",
        path.display(),
        p.layers.len(),
        p.accuracy,
        p.baseline_accuracy,
        p.target
    );
    Ok(())
}

/// Matches profile paths to traces: none, one shared, or one per trace.
fn per_trace(
    paths: &[PathBuf],
    traces: usize,
    mode: ProfileMode,
    flag: &str,
) -> Result<Vec<Option<(PathBuf, PrecisionProfile)>>> {
    let load = |p: &PathBuf| -> Result<_> { Ok(Some((p.clone(), load_profile(p, mode)?))) };
    match paths.len() {
        0 => Ok(vec![None; traces]),
        1 => Ok(vec![load(&paths[0])?; traces]),
        n if n == traces => paths.iter().map(load).collect(),
        n => bail!("{n} {flag} values given for {traces} traces; pass one or one per trace"),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let engines = if a.engines.is_empty() {
        EngineKind::ALL.to_vec()
    } else {
        a.engines.clone()
    };
    if let Some(out) = &a.out {
        refuse_overwrite(out, a.force)?;
    }
    let fixed = per_trace(
        &a.profiles,
        a.traces.len(),
        ProfileMode::FixedPoint,
        "--profile",
    )?;
    let msp2 = per_trace(
        &a.msp2_profiles,
        a.traces.len(),
        ProfileMode::Msp2,
        "--msp2-profile",
    )?;
    let base = ArchConfig {
        subgroup_size: a.subgroup_size,
        shifter_reach: a.shifter_reach,
        base_width: a.base_width.unwrap_or(16),
        ..ArchConfig::default()
    };
    base.validate().context("invalid simulation settings")?;

    let mut loaded = Vec::with_capacity(a.traces.len());
    for path in &a.traces {
        let t = trace::read_trace(path)
            .with_context(|| format!("reading trace `{}`", path.display()))?;
        loaded.push(t);
    }
    let mut names = std::collections::BTreeSet::new();
    for path in &a.traces {
        if !names.insert(network_name(path)) {
            bail!("two traces are named `{}`", network_name(path));
        }
    }

    // Baselines are always simulated so both speedup columns exist.
    let mut kinds = engines.clone();
    for b in [EngineKind::BitParallel, EngineKind::StripesPerLayer] {
        if !kinds.contains(&b) {
            kinds.push(b);
        }
    }

    let mut runs = Vec::with_capacity(loaded.len());
    let mut infos = Vec::with_capacity(loaded.len());
    for (i, (path, t)) in a.traces.iter().zip(&loaded).enumerate() {
        let fail = || format!("simulating trace `{}`", path.display());
        let cfg = ArchConfig {
            base_width: a.base_width.unwrap_or(t.base_width),
            msp2_budget_source: if msp2[i].is_some() {
                Msp2Source::Profile
            } else {
                Msp2Source::None
            },
            ..base
        };
        let envelope;
        let fixed_profile = match &fixed[i] {
            Some((_, p)) => p,
            None => {
                envelope = PrecisionProfile::envelope(t);
                &envelope
            }
        };
        let mut run = dynprec::report::NetworkRun {
            network: network_name(path),
            engines: Default::default(),
        };
        for &kind in &kinds {
            let reports = simulate_trace(
                t,
                &cfg.with_kind(kind),
                Some(fixed_profile),
                msp2[i].as_ref().map(|(_, p)| p),
            )
            .with_context(fail)?;
            run.engines.insert(kind, reports);
        }
        infos.push(trace_info(path, t, &fixed[i], &msp2[i])?);
        runs.push(run);
    }

    let mut rows = dynprec::report::build_rows(&runs);
    rows.retain(|r| engines.contains(&r.engine));
    let doc = ReportDoc {
        settings: RunSettings {
            subgroup_size: base.subgroup_size,
            base_width: a.base_width,
            shifter_reach: a.shifter_reach,
            engines,
        },
        traces: infos,
        rows,
    };
    emit(&doc, a.format, a.out.as_deref(), a.force)
}

fn network_name(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn trace_info(
    path: &Path,
    t: &ActivationTrace,
    fixed: &Option<(PathBuf, PrecisionProfile)>,
    msp2: &Option<(PathBuf, PrecisionProfile)>,
) -> Result<TraceInfo> {
    Ok(TraceInfo {
        network: network_name(path),
        path: path.display().to_string(),
        sha256: t.checksum()?,
        profile: fixed
            .as_ref()
            .map_or_else(|| "envelope".into(), |(p, _)| p.display().to_string()),
        msp2_profile: msp2.as_ref().map(|(p, _)| p.display().to_string()),
    })
}

fn report(a: ReportArgs) -> Result<()> {
    if let Some(out) = &a.out {
        refuse_overwrite(out, a.force)?;
    }
    let mut docs = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        let doc: ReportDoc = serde_json::from_str(&read_text(path, "report")?)
            .with_context(|| format!("invalid report `{}`", path.display()))?;
        docs.push((path, doc));
    }
    let merged = output::merge(docs)?;
    emit(&merged, a.format, a.out.as_deref(), a.force)
}

fn emit(doc: &ReportDoc, format: Format, out: Option<&Path>, force: bool) -> Result<()> {
    let text = output::render(doc, format)?;
    match out {
        Some(path) => write_file(path, text.as_bytes(), force),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
