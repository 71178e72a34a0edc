use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};

use cdag_core::config::{SimConfig, ENV_PREFIX, KEYS};
use cdag_core::harness::{csv_string, execute, replay, ExperimentPlan, Manifest};
use cdag_core::ledger::{ledger_to_dot, ledger_to_json};
use cdag_core::sim::{run, RunOptions};

fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase())
}

/// One flag per configuration key, each also read from `CDAG_<KEY>`.
fn with_keys(mut cmd: Command) -> Command {
    cmd = cmd
        .arg(
            Arg::new("config-file")
                .long("config-file")
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf))
                .help("configuration file, TOML or key = value lines"),
        )
        .arg(
            Arg::new("preset")
                .long("preset")
                .value_name("1|2|3")
                .value_parser(value_parser!(u8))
                .help("block size and slot length of a standard configuration"),
        )
        .arg(
            Arg::new("seeds")
                .long("seeds")
                .env(env_name("seeds"))
                .value_delimiter(',')
                .value_parser(value_parser!(u64))
                .help("comma-separated seeds, one run each"),
        );
    for (key, help) in KEYS {
        let mut arg = Arg::new(*key)
            .long(*key)
            .env(env_name(key))
            .value_name("VALUE")
            .help(*help)
            .help_heading("Configuration");
        if key.contains('_') {
            arg = arg.alias(key.replace('_', "-"));
        }
        cmd = cmd.arg(arg);
    }
    cmd
}

fn cli() -> Command {
    let out = || {
        Arg::new("out")
            .long("out")
            .value_name("DIR")
            .value_parser(value_parser!(PathBuf))
    };
    let plan = || {
        Arg::new("plan")
            .long("plan")
            .value_name("PATH")
            .value_parser(value_parser!(PathBuf))
            .help("experiment plan (TOML); configuration flags override its base")
    };
    Command::new("cdag")
        .about("Deterministic simulator for the CDAG ledger and its tournament proposer election")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(with_keys(
            Command::new("run")
                .about("Run one configuration over one or more seeds and print the results CSV")
                .arg(plan())
                .arg(out().help("write results.csv, reports.json, manifest.json and traces here"))
                .arg(
                    Arg::new("trace")
                        .long("trace")
                        .action(ArgAction::SetTrue)
                        .help("record an event trace per run (needs --out)"),
                ),
        ))
        .subcommand(with_keys(
            Command::new("sweep")
                .about("Run every point of an experiment plan")
                .arg(plan().required(true))
                .arg(out().help("write results.csv, reports.json, manifest.json and traces here"))
                .arg(Arg::new("trace").long("trace").action(ArgAction::SetTrue)),
        ))
        .subcommand(with_keys(
            Command::new("export")
                .about("Run once and write the main ledger as JSON or Graphviz DOT")
                .arg(
                    Arg::new("format")
                        .long("format")
                        .value_parser(["json", "dot"])
                        .default_value("json"),
                )
                .arg(out().value_name("FILE").help("output file, stdout if absent")),
        ))
        .subcommand(
            Command::new("replay")
                .about("Re-run a results directory from its manifest and compare outputs byte for byte")
                .arg(
                    Arg::new("dir")
                        .required(true)
                        .value_parser(value_parser!(PathBuf))
                        .help("directory written by run or sweep"),
                )
                .arg(out().required(true).help("where the replayed outputs go")),
        )
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Defaults, then the file or plan base, then the preset, then flags and environment.
fn resolve(m: &ArgMatches, plan: Option<&ExperimentPlan>) -> Result<SimConfig> {
    let mut cfg = match (plan, m.get_one::<PathBuf>("config-file")) {
        (Some(_), Some(_)) => bail!("--plan and --config-file are exclusive"),
        (Some(p), None) => p.base.clone(),
        (None, Some(f)) => SimConfig::from_text(&read(f)?)?,
        (None, None) => SimConfig::default(),
    };
    if let Some(&p) = m.get_one::<u8>("preset") {
        cfg = cfg.with_preset(p)?;
    }
    for (key, _) in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn seeds(m: &ArgMatches) -> Option<Vec<u64>> {
    m.get_many::<u64>("seeds").map(|s| s.copied().collect())
}

fn load_plan(m: &ArgMatches) -> Result<Option<ExperimentPlan>> {
    match m.get_one::<PathBuf>("plan") {
        Some(p) => Ok(Some(
            ExperimentPlan::from_toml(&read(p)?).with_context(|| p.display().to_string())?,
        )),
        None => Ok(None),
    }
}

fn run_cmd(m: &ArgMatches) -> Result<()> {
    let plan = load_plan(m)?;
    let base = resolve(m, plan.as_ref())?;
    let trace = m.get_flag("trace") || plan.as_ref().is_some_and(|p| p.trace);
    let manifest = match plan {
        Some(p) => {
            let seeds = seeds(m).unwrap_or_else(|| p.seeds.clone());
            let plan = ExperimentPlan { base, seeds, ..p };
            Manifest {
                name: plan.name.clone(),
                trace,
                runs: plan.expand()?,
            }
        }
        None => {
            let runs = seeds(m)
                .unwrap_or_else(|| vec![base.seed])
                .into_iter()
                .map(|seed| SimConfig { seed, ..base.clone() })
                .collect::<Vec<_>>();
            for r in &runs {
                r.validate()?;
            }
            Manifest {
                name: String::new(),
                trace,
                runs,
            }
        }
    };
    let reports: Vec<_> = match m.get_one::<PathBuf>("out") {
        Some(dir) => execute(&manifest, dir)?.into_iter().map(|o| o.report).collect(),
        None => {
            if trace {
                bail!("--trace needs --out");
            }
            manifest
                .runs
                .iter()
                .map(|c| run(c, &RunOptions::default()).map(|o| o.report))
                .collect::<Result<_, _>>()?
        }
    };
    print!("{}", csv_string(&reports)?);
    Ok(())
}

fn export_cmd(m: &ArgMatches) -> Result<()> {
    let mut cfg = resolve(m, None)?;
    if let Some(s) = seeds(m) {
        cfg.seed = *s.first().context("--seeds is empty")?;
    }
    let out = run(&cfg, &RunOptions::default())?;
    let text = match m.get_one::<String>("format").map(String::as_str) {
        Some("dot") => ledger_to_dot(&out.ledger),
        _ => ledger_to_json(&out.ledger)?,
    };
    match m.get_one::<PathBuf>("out") {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn replay_cmd(m: &ArgMatches) -> Result<bool> {
    let dir = m.get_one::<PathBuf>("dir").expect("required");
    let out = m.get_one::<PathBuf>("out").expect("required");
    let check = replay(dir, out)?;
    if check.is_identical() {
        println!("identical");
    } else {
        if !check.csv_identical {
            println!("results.csv differs");
        }
        for i in &check.trace_mismatches {
            println!("trace-{i}.ndjson differs");
        }
    }
    Ok(check.is_identical())
}

fn main() -> ExitCode {
    let m = cli().get_matches();
    let result = match m.subcommand() {
        Some(("run", sub)) | Some(("sweep", sub)) => run_cmd(sub).map(|_| true),
        Some(("export", sub)) => export_cmd(sub).map(|_| true),
        Some(("replay", sub)) => replay_cmd(sub),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
