use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use maser_cli::ablate::{run_ablation, VARIANTS};
use maser_cli::config::{flag_name, is_switch, parse_config};
use maser_cli::train::{default_run_name, run_eval, run_train};
use maser_cli::{exit_code, output_root, OUTPUT_ROOT_VAR};
use maser_core::config::CONFIG_KEYS;
use maser_core::{MaserError, Result};

/// `--config` plus one flag per config key.
fn with_config_flags(cmd: Command) -> Command {
    let mut cmd = cmd.arg(Arg::new("config").long("config").value_name("FILE").help("TOML config file"));
    for &key in CONFIG_KEYS {
        let mut arg = Arg::new(key).long(flag_name(key));
        arg = if is_switch(key) {
            arg.action(ArgAction::SetTrue)
        } else {
            arg.value_name("VALUE")
        };
        if key == "max_env_steps" {
            arg = arg.visible_alias("steps");
        }
        cmd = cmd.arg(arg);
    }
    cmd.arg(
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .help(format!("output directory (default: under ${OUTPUT_ROOT_VAR} or ./runs)")),
    )
}

fn cli() -> Command {
    Command::new("maser")
        .about("Multi-agent Q-learning with replay-buffer subgoals")
        .subcommand_required(true)
        .subcommand(with_config_flags(Command::new("train").about("Train one run")))
        .subcommand(
            Command::new("eval")
                .about("Greedy evaluation of a checkpoint")
                .arg(Arg::new("checkpoint").long("checkpoint").value_name("PATH").required(true))
                .arg(Arg::new("episodes").long("episodes").value_name("N").default_value("32"))
                .arg(Arg::new("seed").long("seed").value_name("N").default_value("0")),
        )
        .subcommand(
            with_config_flags(Command::new("ablate").about("Run the ablation matrix over seeds"))
                .arg(Arg::new("seeds").long("seeds").value_name("A,B,C").required(true))
                .arg(
                    Arg::new("variants")
                        .long("variants")
                        .value_name("LIST")
                        .help(format!("subset of: {}", VARIANTS.join(","))),
                ),
        )
}

fn overrides(m: &ArgMatches) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for &key in CONFIG_KEYS {
        if is_switch(key) {
            if m.get_flag(key) {
                out.push((key.to_string(), "true".to_string()));
            }
        } else if let Some(v) = m.get_one::<String>(key) {
            out.push((key.to_string(), v.clone()));
        }
    }
    out
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|_| MaserError::Config(format!("invalid {what} `{s}`"))))
        .collect()
}

fn parse_num<T: std::str::FromStr>(m: &ArgMatches, key: &str) -> Result<T> {
    let raw = m.get_one::<String>(key).expect("has default");
    raw.parse().map_err(|_| MaserError::Config(format!("--{key} expects a non-negative integer, got `{raw}`")))
}

fn run(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("train", m)) => {
            let cfg = parse_config(m.get_one::<String>("config").map(PathBuf::from).as_deref(), &overrides(m))?;
            let out = m
                .get_one::<String>("out")
                .map_or_else(|| output_root().join(default_run_name(&cfg)), PathBuf::from);
            let s = run_train(&cfg, &out)?;
            println!(
                "finished: {} env steps, {} episodes, final win rate {:.3}, outputs in {}",
                s.env_steps,
                s.episodes,
                s.final_win_rate,
                s.out_dir.display()
            );
        }
        Some(("eval", m)) => {
            let path = PathBuf::from(m.get_one::<String>("checkpoint").expect("required"));
            let r = run_eval(&path, parse_num(m, "episodes")?, parse_num(m, "seed")?)?;
            println!(
                "episodes {} wins {} win_rate {:.4} mean_return {:.4}",
                r.episodes, r.wins, r.win_rate, r.mean_return
            );
        }
        Some(("ablate", m)) => {
            let base = parse_config(m.get_one::<String>("config").map(PathBuf::from).as_deref(), &overrides(m))?;
            let seeds: Vec<u64> = parse_list(m.get_one::<String>("seeds").expect("required"), "seed")?;
            if seeds.is_empty() {
                return Err(MaserError::Config("--seeds needs at least one seed".into()));
            }
            let variants: Vec<String> = match m.get_one::<String>("variants") {
                Some(v) => parse_list(v, "variant")?,
                None => VARIANTS.iter().map(|s| s.to_string()).collect(),
            };
            let out = m.get_one::<String>("out").map_or_else(|| output_root().join("ablation"), PathBuf::from);
            let rows = run_ablation(&base, &variants, &seeds, &out)?;
            for r in rows.iter().filter(|r| r.kind == "aggregate") {
                println!(
                    "{:<16} {} runs  win rate {} +- {}  {}",
                    r.variant,
                    r.runs,
                    r.win_rate.map_or("n/a".into(), |v| format!("{v:.3}")),
                    r.win_rate_std.map_or("n/a".into(), |v| format!("{v:.3}")),
                    r.status
                );
            }
            println!("table written to {}", out.join(maser_cli::ablate::ABLATION_FILE).display());
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
