//! Batch front end: abstract, reach, validate, refine, export.
//!
//! Exit codes: 0 success, 2 usage or problem-document errors, 3 build
//! errors, 4 validation failures.

use clap::{Parser, Subcommand, ValueEnum};
use lyapta::bounds::Mode;
use lyapta::error::Error;
use lyapta::export::{
    integer_scale, render_summary, to_xml, AutomatonFile, ReachReport, AUTOMATON_FORMAT,
};
use lyapta::oracle::{mc_soundness_check, refinement_experiment};
use lyapta::partition::RegionId;
use lyapta::problem::{build, build_with, parse_problem, Abstraction};
use lyapta::rat::Rat;
use lyapta::reach::{reach, InitMode};
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "lyapta",
    about = "Abstract dynamical systems into timed automata via Lyapunov level sets",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sound,
    Complete,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sound => Mode::Sound,
            ModeArg::Complete => Mode::Complete,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Native,
    Xml,
}

#[derive(Subcommand)]
enum Command {
    /// Build the abstraction and write the native automaton file.
    Abstract {
        /// Problem document (TOML).
        spec: PathBuf,
        /// Output automaton file (JSON).
        #[arg(short, long)]
        output: PathBuf,
        /// Override the document's mode.
        #[arg(long)]
        mode: Option<ModeArg>,
        /// Override the document's grid step.
        #[arg(long)]
        grid_step: Option<f64>,
        /// Round sound-mode constants outward to multiples of 1/D.
        #[arg(long)]
        snap_denominator: Option<u64>,
        /// Also write the run-length-encoded partition dump.
        #[arg(long)]
        dump_partition: Option<PathBuf>,
        /// Build even when the bisimilarity condition fails (the cell
        /// automaton stays sound; extended-cell equivalence is lost).
        #[arg(long)]
        allow_non_bisimilar: bool,
    },
    /// Reachable locations of an automaton file over a time window.
    Reach {
        /// Automaton file produced by `abstract`.
        automaton: PathBuf,
        /// Time window `t1,t2`.
        #[arg(long)]
        window: String,
        /// Also report the concretized state-space volume.
        #[arg(long)]
        concretize: bool,
        /// Treat the time already spent in initial cells as unknown
        /// (the sound semantics for volume initial sets).
        #[arg(long)]
        phase_unknown: bool,
        /// Write the JSON report here (text goes to stdout regardless).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Monte-Carlo soundness check of an automaton against simulation.
    Validate {
        spec: PathBuf,
        automaton: PathBuf,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        times: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Rebuild at increasing refinement depths and tabulate reach volumes.
    Refine {
        spec: PathBuf,
        /// Comma-separated depths, e.g. `0,1,2` (default: the document's
        /// refine.depths, or 0,1,2).
        #[arg(long)]
        depths: Option<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-emit an automaton file (native JSON or model-checker XML).
    Export {
        automaton: PathBuf,
        #[arg(long, value_enum, default_value_t = FormatArg::Native)]
        format: FormatArg,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(Error::from)
}

fn parse_window(s: &str) -> Result<(Rat, Rat), Error> {
    let (a, b) = s.split_once(',').ok_or(Error::InvalidWindow)?;
    let t1: f64 = a.trim().parse().map_err(|_| Error::InvalidWindow)?;
    let t2: f64 = b.trim().parse().map_err(|_| Error::InvalidWindow)?;
    if !(0.0..=f64::INFINITY).contains(&t1) || t1 > t2 || !t2.is_finite() {
        return Err(Error::InvalidWindow);
    }
    Ok((
        Rat::from_f64(t1).ok_or(Error::InvalidWindow)?,
        Rat::from_f64(t2).ok_or(Error::InvalidWindow)?,
    ))
}

fn automaton_file_of(built: &Abstraction, mode: Mode) -> AutomatonFile {
    let volumes: Vec<f64> = (0..built.ta.locations.len())
        .map(|l| {
            built
                .map
                .region_of(l)
                .and_then(|id| built.partition.region_index_of(id))
                .map(|idx| built.partition.region_volume(idx))
                .unwrap_or(0.0)
        })
        .collect();
    let points: Vec<usize> = (0..built.ta.locations.len())
        .map(|l| {
            built
                .map
                .region_of(l)
                .and_then(|id| built.partition.region_index_of(id))
                .map(|idx| built.partition.region(idx).mask.len())
                .unwrap_or(0)
        })
        .collect();
    AutomatonFile {
        format: AUTOMATON_FORMAT.into(),
        name: built.spec.name.clone(),
        fingerprint: built.partition.fingerprint().into(),
        mode,
        automaton: built.ta.clone(),
        map: built.map.clone(),
        bounds: built.bounds.clone(),
        location_volumes: volumes,
        location_grid_points: points,
        summary: built.summary.clone(),
    }
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Abstract {
            spec,
            output,
            mode,
            grid_step,
            snap_denominator,
            dump_partition,
            allow_non_bisimilar,
        } => {
            let doc = parse_problem(&read(&spec)?)?;
            let mode = mode.map(Mode::from).unwrap_or(doc.mode);
            let built = build_with(
                &doc,
                Some(mode),
                grid_step,
                snap_denominator,
                allow_non_bisimilar,
            )?;
            let file = automaton_file_of(&built, mode);
            std::fs::write(&output, file.to_json()?)?;
            if let Some(dump) = dump_partition {
                std::fs::write(&dump, built.partition.dump_rle())?;
            }
            print!(
                "{}",
                render_summary(&doc.name, &file.fingerprint, mode, &built.summary)
            );
            println!(
                "locations        : {}",
                built.ta.locations.len()
            );
            let thin = built.partition.thin_cell_count();
            if thin > 0 {
                println!("note: {thin} cell(s) thinner than 3 grid cells; their connectivity is unreliable at this resolution");
            }
            for w in &doc.query.windows {
                let (t1, t2) = (
                    Rat::from_f64(w[0]).ok_or(Error::InvalidWindow)?,
                    Rat::from_f64(w[1]).ok_or(Error::InvalidWindow)?,
                );
                let res = reach(&built.ta, &built.ta.initial, &t1, &t2, InitMode::ZeroClocks)?;
                println!(
                    "window [{}, {}]  : {} locations",
                    w[0],
                    w[1],
                    res.locations.len()
                );
            }
            println!("wrote {}", output.display());
            Ok(0)
        }
        Command::Reach {
            automaton,
            window,
            concretize: want_conc,
            phase_unknown,
            output,
        } => {
            let file = AutomatonFile::from_json(&read(&automaton)?)?;
            let (t1, t2) = parse_window(&window)?;
            let init = if phase_unknown {
                InitMode::PhaseUnknown
            } else {
                InitMode::ZeroClocks
            };
            let result = reach(&file.automaton, &file.automaton.initial, &t1, &t2, init)?;
            let conc = if want_conc {
                let (volume, grid_points) = file.volume_of(result.locations.iter().copied());
                Some(lyapta::reach::Concretization {
                    regions: result
                        .locations
                        .iter()
                        .filter_map(|&l| file.map.region_of(l).cloned())
                        .collect(),
                    grid_points,
                    volume,
                })
            } else {
                None
            };
            let report = ReachReport::new(&file, &result, conc);
            print!("{}", report.render_text());
            if let Some(out) = output {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(0)
        }
        Command::Validate {
            spec,
            automaton,
            trajectories,
            horizon,
            seed,
            dt,
            times,
            output,
        } => {
            let doc = parse_problem(&read(&spec)?)?;
            let file = AutomatonFile::from_json(&read(&automaton)?)?;
            let built = build(&doc, Some(file.mode), None, None)?;
            if built.partition.fingerprint() != file.fingerprint {
                return Err(Error::FingerprintMismatch {
                    expected: file.fingerprint.clone(),
                    got: built.partition.fingerprint().into(),
                });
            }
            let x0: BTreeSet<RegionId> = file
                .automaton
                .initial
                .iter()
                .filter_map(|&l| file.map.region_of(l).cloned())
                .collect();
            let v = &doc.validate;
            let report = mc_soundness_check(
                &built.field,
                &built.partition,
                &file.automaton,
                &file.map,
                &x0,
                horizon.unwrap_or(v.horizon),
                trajectories.unwrap_or(v.trajectories),
                dt.unwrap_or(v.dt),
                times.unwrap_or(v.times_per_trajectory),
                seed.unwrap_or(v.seed),
            )?;
            println!(
                "validate `{}` seed {}: {} samples, {} checks, {} violations, {} modeling gaps",
                doc.name, report.seed, report.samples, report.checks, report.violations,
                report.modeling_gaps
            );
            for w in report.witnesses.iter().take(5) {
                println!(
                    "  witness: sample {} at t = {} in {} (state {:?})",
                    w.sample, w.time, w.region, w.state
                );
            }
            if let Some(out) = output {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.passed() { 0 } else { 4 })
        }
        Command::Refine {
            spec,
            depths,
            horizon,
            samples,
            seed,
            output,
        } => {
            let doc = parse_problem(&read(&spec)?)?;
            let depths: Vec<usize> = match depths {
                Some(list) => list
                    .split(',')
                    .map(|d| d.trim().parse().map_err(|_| Error::Spec("bad depth".into())))
                    .collect::<Result<_, _>>()?,
                None if !doc.refine.depths.is_empty() => doc.refine.depths.clone(),
                None => vec![0, 1, 2],
            };
            if depths.is_empty() {
                return Err(Error::Spec("no refinement depths given".into()));
            }
            let built = build(&doc, None, None, None)?;
            let horizon = horizon
                .or(doc.refine.horizon)
                .unwrap_or(doc.validate.horizon);
            let report = refinement_experiment(
                &built.field,
                built.partition.families(),
                &doc.domain_box()?,
                doc.grid_step()?,
                &doc.initial_box()?,
                horizon,
                &depths,
                doc.mode,
                samples,
                doc.validate.dt,
                seed,
            )?;
            println!("refine `{}` horizon {horizon} seed {seed}", doc.name);
            println!("depth  levels  locations  volume");
            for row in &report.rows {
                println!(
                    "{:<6} {:<7} {:<10} {}",
                    row.depth,
                    row.levels_per_family
                        .iter()
                        .map(|l| l.to_string())
                        .collect::<Vec<_>>()
                        .join("/"),
                    row.locations_reached,
                    row.volume
                );
            }
            println!("mc-floor: {}", report.mc_floor);
            println!(
                "non-increasing: {}; above-floor: {}",
                report.non_increasing(),
                report.above_floor()
            );
            if let Some(out) = output {
                std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            }
            Ok(if report.non_increasing() && report.above_floor() {
                0
            } else {
                4
            })
        }
        Command::Export {
            automaton,
            format,
            output,
        } => {
            let file = AutomatonFile::from_json(&read(&automaton)?)?;
            match format {
                FormatArg::Native => {
                    std::fs::write(&output, file.to_json()?)?;
                }
                FormatArg::Xml => {
                    let d = integer_scale(&file.automaton);
                    std::fs::write(&output, to_xml(&file))?;
                    println!("scale: 1/{d}");
                }
            }
            println!("wrote {}", output.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
