use std::path::{Path, PathBuf};
use std::process::ExitCode;

use afe_rpb::analysis::{self, render_svg, spectrum, standard_panels, Limits, Metrics, Trace, Window};
use afe_rpb::config::AppConfig;
use afe_rpb::io::write_atomic;
use afe_rpb::neural::Checkpoint;
use afe_rpb::scenarios::{sample_scenario, test_scenario_paper, FaultScenario};
use afe_rpb::trainer::{train, Profile, TrainIo, CHECKPOINT_FILE, LOG_FILE};
use afe_rpb::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

/// Active-front-end drive simulator with a trainable performance-boosting
/// controller.
#[derive(Parser, Debug)]
#[command(name = "afe-rpb", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML configuration file (sections: plant, gains, references, bases, rpb, loss, train).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for parameter initialisation and sampled scenarios.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Desk-scale training profile (default).
    #[arg(long, global = true, conflicts_with = "paper_scale")]
    desk_scale: bool,
    /// Paper-scale training profile (hours of runtime).
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out a scenario and write its trace and metrics.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train the operator and write a checkpoint and log.
    Train,
    /// Compare a checkpoint against the base controller on a scenario.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Amplitude spectrum of a trace column.
    Spectrum {
        /// Trace CSV.
        trace: PathBuf,
        /// Column name (e.g. i_a, i_b, v_dc).
        #[arg(long, default_value = "i_a")]
        column: String,
        /// Window start (s); defaults to the start of the selected fault.
        #[arg(long)]
        from: Option<f64>,
        /// Window end (s); defaults to the end of the selected fault.
        #[arg(long)]
        to: Option<f64>,
        /// Fault whose interval is the default window.
        #[arg(long, default_value_t = 0)]
        fault: usize,
        /// none or hann.
        #[arg(long, default_value = "hann")]
        window: String,
    },
    /// Render traces as SVG panels (v_dc with band, ‖i_g‖ with limit, ‖m_g‖).
    Plot {
        /// Trace CSVs, drawn in order.
        #[arg(required = true)]
        traces: Vec<PathBuf>,
        /// Legend labels, one per trace (defaults to the file stems).
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        /// Output file name inside --out.
        #[arg(long, default_value = "plot.svg")]
        name: String,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// `paper`, `nominal`, `random` (sampled from --seed) or a scenario TOML file.
    #[arg(long, default_value = "paper")]
    scenario: String,
    /// Parameter checkpoint for the operator.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Run the base controller alone.
    #[arg(long)]
    no_rpb: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let profile = if c.paper_scale { Profile::Paper } else { Profile::Desk };
    let cfg = AppConfig::load(c.config.as_deref(), profile)?;
    match &cli.cmd {
        Command::Simulate { run } => simulate(&cfg, c, run),
        Command::Train => train_cmd(&cfg, c),
        Command::Evaluate { run } => evaluate(&cfg, c, run),
        Command::Spectrum {
            trace,
            column,
            from,
            to,
            fault,
            window,
        } => spectrum_cmd(&cfg, c, trace, column, *from, *to, *fault, window),
        Command::Plot { traces, labels, name } => plot(&cfg, c, traces, labels, name),
    }
}

fn scenario(cfg: &AppConfig, seed: u64, name: &str) -> Result<FaultScenario> {
    let h = cfg.plant.h;
    let mut sc = match name {
        "paper" => test_scenario_paper(),
        "nominal" => FaultScenario::nominal((1.0 / h).round() as usize),
        "random" => sample_scenario(&cfg.train.sampling, h, seed, 0),
        path => FaultScenario::from_toml(
            &std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read scenario {path}: {e}")))?,
        )?,
    };
    if matches!(name, "paper" | "nominal") {
        let duration = sc.duration();
        sc.h = h;
        sc.horizon = (duration / h).round() as usize;
        sc.freq = cfg.gains.grid_freq;
    }
    sc.validate()?;
    Ok(sc)
}

fn load_checkpoint(cfg: &AppConfig, path: &Path) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot load checkpoint {}: {e}", path.display())))?;
    if ck.bases != cfg.bases {
        return Err(Error::InvalidConfig("checkpoint per-unit bases differ from the configuration".into()));
    }
    Ok(ck)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    write_atomic(path, format!("{s}\n").as_bytes())
}

fn simulate(cfg: &AppConfig, c: &Common, run: &RunArgs) -> Result<()> {
    let sc = scenario(cfg, c.seed, &run.scenario)?;
    let ck = match (&run.checkpoint, run.no_rpb) {
        (Some(p), false) => Some(load_checkpoint(cfg, p)?),
        _ => None,
    };
    let sys = cfg.system()?;
    let (trace, metrics) = analysis::evaluate(&sys, ck.as_ref().map(|k| &k.params), &sc)?;
    trace.write(&c.out.join("trace.csv"))?;
    write_json(&c.out.join("metrics.json"), &metrics)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

#[derive(Serialize)]
struct Comparison {
    base: Metrics,
    rpb: Metrics,
    base_loss: f64,
    rpb_loss: f64,
}

fn evaluate(cfg: &AppConfig, c: &Common, run: &RunArgs) -> Result<()> {
    let path = run
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("evaluate requires --checkpoint".into()))?;
    let ck = load_checkpoint(cfg, path)?;
    let sc = scenario(cfg, c.seed, &run.scenario)?;
    let sys = cfg.system()?;
    let (tb, mb) = analysis::evaluate(&sys, None, &sc)?;
    let (tr, mr) = analysis::evaluate(&sys, Some(&ck.params), &sc)?;
    let loss = |t: &Trace| {
        t.rows
            .iter()
            .map(|r| r[analysis::col::LOSS_NOM] + r[analysis::col::LOSS_VDC] + r[analysis::col::LOSS_IG])
            .sum::<f64>()
    };
    let cmp = Comparison {
        base: mb,
        rpb: mr,
        base_loss: loss(&tb),
        rpb_loss: loss(&tr),
    };
    tb.write(&c.out.join("trace_base.csv"))?;
    tr.write(&c.out.join("trace_rpb.csv"))?;
    write_json(&c.out.join("comparison.json"), &cmp)?;
    println!("{}", serde_json::to_string_pretty(&cmp)?);
    Ok(())
}

fn train_cmd(cfg: &AppConfig, c: &Common) -> Result<()> {
    let sys = cfg.system()?;
    std::fs::create_dir_all(&c.out)?;
    write_atomic(&c.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let io = TrainIo {
        out_dir: Some(c.out.clone()),
        dataset_cache: Some(c.out.join("dataset")),
    };
    let epochs = cfg.train.epochs;
    let out = train(&sys, &cfg.rpb.net, &cfg.train, c.seed, &io, |l| {
        if l.epoch % 10 == 0 || l.epoch + 1 == epochs {
            eprintln!(
                "epoch {:>5}  loss {:.6e}  min v_dc {:.1}  violations {}",
                l.epoch, l.mean_loss, l.min_v_dc, l.violation_steps
            );
        }
    })?;
    let last = out.history.last().map_or(f64::NAN, |l| l.mean_loss);
    println!(
        "trained {} epochs, final mean loss {last:.6e}; wrote {} and {}",
        out.history.len(),
        c.out.join(CHECKPOINT_FILE).display(),
        c.out.join(LOG_FILE).display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn spectrum_cmd(
    cfg: &AppConfig,
    c: &Common,
    path: &Path,
    column: &str,
    from: Option<f64>,
    to: Option<f64>,
    fault: usize,
    window: &str,
) -> Result<()> {
    let trace = Trace::read(path)?;
    let window: Window = window.parse()?;
    let x = trace.column_by_name(column)?;
    let f = trace.faults.get(fault);
    let need = |v: Option<f64>, d: Option<f64>| {
        v.or(d)
            .ok_or_else(|| Error::InvalidConfig("no fault in trace; give --from and --to".into()))
    };
    let t_a = need(from, f.map(|f| f.t_start))?;
    let t_b = need(to, f.map(|f| f.t_end))?;
    let s = spectrum(&x, trace.h, t_a, t_b, window, cfg.gains.grid_freq)?;
    let out = c.out.join(format!("spectrum_{column}.csv"));
    write_atomic(&out, s.to_csv()?.as_bytes())?;
    let (fp, mp) = s.peak();
    println!("peak {fp} Hz amplitude {mp}; wrote {}", out.display());
    Ok(())
}

fn plot(cfg: &AppConfig, c: &Common, paths: &[PathBuf], labels: &[String], name: &str) -> Result<()> {
    if !labels.is_empty() && labels.len() != paths.len() {
        return Err(Error::InvalidConfig("give one label per trace".into()));
    }
    let mut traces = Vec::with_capacity(paths.len());
    for (k, p) in paths.iter().enumerate() {
        let label = labels.get(k).cloned().unwrap_or_else(|| {
            p.file_stem()
                .map_or_else(|| format!("trace {k}"), |s| s.to_string_lossy().into_owned())
        });
        traces.push((label, Trace::read(p)?));
    }
    let limits = Limits::new(&cfg.references, &cfg.loss);
    let svg = render_svg(&standard_panels(&traces, &limits), 900.0, 240.0);
    let out = c.out.join(name);
    write_atomic(&out, svg.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
