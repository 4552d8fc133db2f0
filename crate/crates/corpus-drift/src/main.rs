use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, ArgMatches, Command};
use corpus_drift::config::{Kind, Layered, PipelineConfig, KEYS};
use corpus_drift::pipeline::{self, Stage, StageError};

const EXIT_STAGE_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

fn cli() -> Command {
    let mut cmd = Command::new("corpus-drift")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Measures year-over-year homogeneity of a web-text corpus and forecasts its saturation")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .global(true)
                .help("TOML config file (falls back to $CORPUS_DRIFT_CONFIG)"),
        )
        .arg(Arg::new("verbose").short('v').long("verbose").action(ArgAction::Count).global(true).help("more logging"));
    for spec in KEYS {
        let mut arg = Arg::new(spec.key).long(spec.key).global(true).help(spec.help);
        if let Some(flag) = spec.flag {
            arg = arg.visible_alias(flag);
        }
        arg = match spec.kind {
            Kind::PathList => arg.value_name("PATH").num_args(1..).action(ArgAction::Append),
            Kind::Years => arg.value_name("MIN..MAX"),
            Kind::FloatList => arg.value_name("X,Y,..."),
            Kind::Backend => arg.value_name("hash|remote"),
            Kind::Method => arg.value_name("exact|sampled"),
            Kind::Int | Kind::OptInt => arg.value_name("N"),
            _ => arg.value_name("VALUE"),
        };
        cmd = cmd.arg(arg);
    }
    cmd.subcommand(Command::new("ingest").about("parse WET files, filter by domain, year and language"))
        .subcommand(Command::new("embed").about("embed accepted documents into the embedding store"))
        .subcommand(Command::new("analyze").about("per-year mean pairwise similarity and diversity"))
        .subcommand(Command::new("fit").about("fit the saturation model and compute the saturation table"))
        .subcommand(Command::new("report").about("write similarity.csv, trend.svg and report.json"))
        .subcommand(Command::new("pipeline").about("run every stage in order"))
}

fn flags(matches: &ArgMatches) -> Vec<(String, Vec<String>)> {
    KEYS.iter()
        .filter(|s| matches.value_source(s.key) == Some(ValueSource::CommandLine))
        .map(|s| (s.key.to_string(), matches.get_many::<String>(s.key).into_iter().flatten().cloned().collect()))
        .collect()
}

fn load(matches: &ArgMatches) -> Result<(Layered, PipelineConfig), String> {
    let explicit = matches.get_one::<String>("config").map(PathBuf::from);
    let layered = Layered::resolve(explicit.as_deref(), &flags(matches)).map_err(|e| e.to_string())?;
    let config = layered.to_config().map_err(|e| e.to_string())?;
    Ok((layered, config))
}

fn report_failure(e: &StageError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(if e.stage == Stage::Config { EXIT_USAGE } else { EXIT_STAGE_FAILED })
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    let level = match matches.get_count("verbose") {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (layered, config) = match load(&matches) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let started = pipeline::now();
    let result = match matches.subcommand_name() {
        Some("ingest") => pipeline::run_ingest(&config).map(|o| {
            println!("accepted {} documents in {} years", o.counters.accepted, o.cohorts.len());
            true
        }),
        Some("embed") => pipeline::run_embed(&config).map(|n| {
            println!("embedded {n} documents");
            true
        }),
        Some("analyze") => pipeline::run_analyze(&config).map(|a| {
            for s in &a.similarity {
                println!("{}\t{:.6}", s.year, s.mean_similarity);
            }
            true
        }),
        Some("fit") => pipeline::run_fit(&config).map(|f| {
            let m = &f.model;
            println!(
                "h0={} y0={} a={:.6} b={:.6} loss={:.3e} converged={}",
                m.h0, m.y0, m.a, m.b, m.final_loss, m.converged
            );
            for row in &f.saturation {
                println!("{:.0}%\t{:.2}\t{}", row.level * 100.0, row.exact_year, row.reported_year);
            }
            m.converged
        }),
        Some("report") => pipeline::run_report(&config, &layered, &started).map(|r| {
            println!("wrote report for {} years to {}", r.similarity.len(), config.out_dir.display());
            true
        }),
        Some("pipeline") => pipeline::run_pipeline(&config, &layered).map(|r| {
            for s in &r.similarity {
                println!("{}\t{:.6}", s.year, s.mean_similarity);
            }
            if let Some(m) = &r.fit.model {
                println!("fit: a={:.6} b={:.6} converged={}", m.a, m.b, m.converged);
            }
            for row in &r.saturation {
                println!("{:.0}%\t{}", row.level * 100.0, row.reported_year);
            }
            pipeline::succeeded(&r)
        }),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("fit did not converge");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
        Err(e) => report_failure(&e),
    }
}
