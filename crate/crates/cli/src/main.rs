use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use platoon_core::scenario::Scenario;
use platoon_core::sim::{run_scenario, SimOutput};
use platoon_core::trace::{messages_to_jsonl, write_file};

#[derive(Parser)]
#[command(name = "platoon", version, about = "Run CACC platooning scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its trace, summary and message log.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and check a scenario and its map without running it.
    Validate { scenario: PathBuf },
    /// Run a scenario once per value of one parameter.
    Sweep {
        scenario: PathBuf,
        /// `dotted.path=v1,v2,...`, e.g. `leader.speed_scale=0.8,1.0`.
        /// Array elements are addressed by index: `vehicles.1.gains.kp=2,3`.
        #[arg(long)]
        param: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Do not print the summary.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

fn execute(cmd: Command) -> AnyResult<()> {
    match cmd {
        Command::Run { scenario, common } => {
            let mut sc = Scenario::load_file(&scenario)?;
            if let Some(seed) = common.seed {
                sc.seed = seed;
            }
            let out = run_scenario(&sc)?;
            write_outputs(&sc, &out, &common.out)?;
            if !common.quiet {
                print!("{}", out.summary.to_text());
            }
        }
        Command::Validate { scenario } => {
            let sc = Scenario::load_file(&scenario)?;
            let map = sc.load_map()?;
            sc.validate_against(&map)?;
            println!(
                "ok: {} ({} vehicles, {} ticks, map {} points)",
                sc.name,
                sc.vehicles.len(),
                sc.ticks(),
                map.len()
            );
        }
        Command::Sweep {
            scenario,
            param,
            common,
        } => {
            let (path, values) = param
                .split_once('=')
                .ok_or("--param must look like path=v1,v2,...")?;
            let text = std::fs::read_to_string(&scenario)
                .map_err(|e| format!("{}: {e}", scenario.display()))?;
            let base: toml::Value = toml::from_str(&text)?;
            if !common.quiet {
                println!("{path}\ttime_gap_mean\ttime_gap_std\tmax_abs_e\tapprox_range_max_diff\tswitches");
            }
            for raw in values.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                let mut doc = base.clone();
                set_path(&mut doc, path, raw)?;
                let mut sc = Scenario::from_value(doc, scenario.parent())?;
                if let Some(seed) = common.seed {
                    sc.seed = seed;
                }
                let out = run_scenario(&sc)?;
                write_outputs(&sc, &out, &common.out.join(format!("{path}={raw}")))?;
                if !common.quiet {
                    let f = out.summary.followers.first();
                    let fmt = |v: Option<f64>| {
                        v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "n/a".into())
                    };
                    println!(
                        "{raw}\t{}\t{}\t{}\t{}\t{}",
                        fmt(f.and_then(|f| f.time_gap_mean)),
                        fmt(f.and_then(|f| f.time_gap_std)),
                        fmt(f.and_then(|f| f.max_abs_e)),
                        fmt(f.and_then(|f| f.approx_range_max_diff)),
                        f.map_or(0, |f| f.switches.len()),
                    );
                }
            }
        }
    }
    Ok(())
}

fn write_outputs(sc: &Scenario, out: &SimOutput, dir: &Path) -> AnyResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    out.trace.save_csv(dir.join(&sc.output.trace))?;
    write_file(dir.join(&sc.output.summary), &out.summary.to_json())?;
    write_file(
        dir.join(&sc.output.messages),
        &messages_to_jsonl(&out.messages),
    )?;
    Ok(())
}

/// Sets a dotted path inside a TOML document. The new value keeps the type
/// of the value it replaces where the text allows it.
fn set_path(doc: &mut toml::Value, path: &str, raw: &str) -> AnyResult<()> {
    let mut node = doc;
    let keys: Vec<&str> = path.split('.').collect();
    let (last, parents) = keys.split_last().ok_or("empty parameter path")?;
    for key in parents {
        node = match node {
            toml::Value::Table(t) => t
                .entry(key.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default())),
            toml::Value::Array(a) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| format!("{key:?} is not an array index"))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or(format!("index {i} out of range (len {len})"))?
            }
            _ => return Err(format!("cannot descend into {key:?}").into()),
        };
    }
    let old = match &*node {
        toml::Value::Table(t) => t.get(*last),
        toml::Value::Array(a) => last.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    };
    let value = parse_value(raw, old)?;
    match node {
        toml::Value::Table(t) => {
            t.insert(last.to_string(), value);
        }
        toml::Value::Array(a) => {
            let i: usize = last
                .parse()
                .map_err(|_| format!("{last:?} is not an array index"))?;
            let len = a.len();
            *a.get_mut(i)
                .ok_or(format!("index {i} out of range (len {len})"))? = value;
        }
        _ => return Err(format!("cannot set {path}").into()),
    }
    Ok(())
}

fn parse_value(raw: &str, old: Option<&toml::Value>) -> AnyResult<toml::Value> {
    use toml::Value;
    Ok(match old {
        Some(Value::Float(_)) => Value::Float(raw.parse()?),
        Some(Value::Integer(_)) => Value::Integer(raw.parse()?),
        Some(Value::Boolean(_)) => Value::Boolean(raw.parse()?),
        Some(Value::String(_)) => Value::String(raw.to_string()),
        _ => {
            if let Ok(i) = raw.parse::<i64>() {
                Value::Integer(i)
            } else if let Ok(f) = raw.parse::<f64>() {
                Value::Float(f)
            } else if let Ok(b) = raw.parse::<bool>() {
                Value::Boolean(b)
            } else {
                Value::String(raw.to_string())
            }
        }
    })
}
