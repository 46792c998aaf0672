use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use safecruise::pcc::{self, OcpSpec, SolverSettings};
use safecruise::plant::TruckParams;
use safecruise::road::{
    ingest_elevation_csv, write_elevation_csv, RoadConfig, SpeedLimit, SpeedLimits, SyntheticRoad,
    DEFAULT_GRID_SPACING, DEFAULT_SMOOTHING_WINDOW,
};
use safecruise::sim::{saving_pct, summarize, RunLog, Scenario};

const EXIT_INVALID: u8 = 1;
const EXIT_COLLISION: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "safecruise", version, about = "Safe cruise control and energy-optimal speed planning for trucks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the energy-optimal speed profile over a road.
    Solve {
        /// Elevation CSV with columns `s,E`.
        #[arg(long)]
        road: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        v0: f64,
        #[arg(long)]
        vf: f64,
        /// Travel time budget [s].
        #[arg(long)]
        t_f_max: f64,
        /// Speed limit segment `s_start,v_min,v_max`; repeatable.
        #[arg(long = "limit", value_parser = parse_limit)]
        limits: Vec<SpeedLimit>,
        #[arg(long, default_value_t = DEFAULT_SMOOTHING_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = SolverSettings::default().ds)]
        ds: f64,
        #[arg(long, default_value_t = SolverSettings::default().v_grid_step)]
        v_grid_step: f64,
    },
    /// Run a scenario and write its log and summary.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: PathBuf,
        /// Run log to report the energy saving against.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Compare two run logs.
    Compare { baseline: PathBuf, candidate: PathBuf },
    /// Write a synthetic elevation profile.
    GenRoad {
        #[arg(long)]
        kind: SyntheticRoad,
        #[arg(long, default_value_t = 3000.0)]
        length: f64,
        #[arg(long, default_value_t = DEFAULT_GRID_SPACING)]
        ds: f64,
        /// Hill height [m].
        #[arg(long, default_value_t = 20.0)]
        height: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_limit(text: &str) -> Result<SpeedLimit, String> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [s, lo, hi] => Ok(SpeedLimit::new(s, lo, hi)),
        _ => Err("expected s_start,v_min,v_max".into()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, String> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| format!("cannot create {}: {e}", path.display()))
}

fn open(path: &Path) -> Result<File, String> {
    File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))
}

fn read_log(path: &Path) -> Result<RunLog, String> {
    RunLog::read_csv(open(path)?).map_err(|e| format!("{}: {e}", path.display()))
}

fn execute(command: Command) -> Result<u8, String> {
    match command {
        Command::Solve {
            road,
            out,
            v0,
            vf,
            t_f_max,
            limits,
            window,
            ds,
            v_grid_step,
        } => {
            let speed_limits = if limits.is_empty() {
                SpeedLimits::default()
            } else {
                SpeedLimits::new(limits).map_err(|e| e.to_string())?
            };
            let config = RoadConfig {
                smoothing_window: window,
                grid_spacing: ds,
                speed_limits,
            };
            let road = ingest_elevation_csv(open(&road)?, &config).map_err(|e| e.to_string())?;
            let params = TruckParams::default();
            let settings = SolverSettings {
                ds,
                v_grid_step,
                ..SolverSettings::default()
            };
            let spec = OcpSpec {
                road: &road,
                params: &params,
                v0,
                vf,
                t_f_max,
                settings,
            };
            let profile = pcc::solve(&spec).map_err(|e| e.to_string())?;
            profile.write_csv(create(&out)?).map_err(|e| e.to_string())?;
            eprintln!(
                "energy {:.3} J/kg, travel time {:.2} s",
                profile.cost(),
                profile.travel_time
            );
            Ok(0)
        }
        Command::Run {
            scenario,
            out,
            summary,
            baseline,
        } => {
            let baseline = baseline.map(|p| read_log(&p)).transpose()?;
            let world = Scenario::load(&scenario).map_err(|e| e.to_string())?;
            let log = world.run().map_err(|e| e.to_string())?;
            log.write_csv(create(&out)?).map_err(|e| e.to_string())?;
            let record = summarize(&log, baseline.as_ref());
            let mut writer = create(&summary)?;
            serde_json::to_writer_pretty(&mut writer, &record).map_err(|e| e.to_string())?;
            writeln!(writer).and_then(|_| writer.flush()).map_err(|e| e.to_string())?;
            if record.collision {
                eprintln!("collision: minimum headway {:?} m", record.min_headway);
                Ok(EXIT_COLLISION)
            } else {
                Ok(0)
            }
        }
        Command::Compare { baseline, candidate } => {
            let base = read_log(&baseline)?;
            let cand = read_log(&candidate)?;
            let (a, b) = (summarize(&base, None), summarize(&cand, Some(&base)));
            let fmt_opt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.2}"));
            let stdout = io::stdout();
            let mut out = stdout.lock();
            let rows = [
                ("final energy [J/kg]", format!("{:.2}", a.final_energy), format!("{:.2}", b.final_energy)),
                ("min headway [m]", fmt_opt(a.min_headway), fmt_opt(b.min_headway)),
                ("finish time [s]", format!("{:.2}", a.finish_time), format!("{:.2}", b.finish_time)),
                ("switch count", a.switch_count.to_string(), b.switch_count.to_string()),
                ("collision", a.collision.to_string(), b.collision.to_string()),
            ];
            let io_err = |e: io::Error| e.to_string();
            writeln!(out, "{:<22}{:>14}{:>14}", "metric", "baseline", "candidate").map_err(io_err)?;
            for (name, x, y) in rows {
                writeln!(out, "{name:<22}{x:>14}{y:>14}").map_err(io_err)?;
            }
            let saving = saving_pct(b.final_energy, a.final_energy);
            writeln!(out, "{:<22}{:>28}", "energy saving [%]", fmt_opt(saving)).map_err(io_err)?;
            Ok(0)
        }
        Command::GenRoad {
            kind,
            length,
            ds,
            height,
            out,
        } => {
            if !(length > 0.0 && ds > 0.0 && ds <= length) {
                return Err(format!("need 0 < ds <= length, got ds {ds}, length {length}"));
            }
            let samples = kind.generate(length, ds, height);
            write_elevation_csv(create(&out)?, &samples).map_err(|e| e.to_string())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_INVALID),
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
