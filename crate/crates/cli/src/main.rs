use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use saf_lab::pipeline::*;
use saf_lab_cli::args::{parse_sweep_spec, ConfigArgs};
use saf_lab_cli::server::{serve, LabelSession};

#[derive(Parser, Debug)]
#[command(
    name = "saf-lab",
    version,
    about = "Weakly-supervised tool instance segmentation lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset
    Simulate,
    /// Produce fields and extract instances
    Instantiate,
    /// Build instance tubes
    Track,
    /// Train the projection head and embed all instances
    Features,
    /// Cluster embeddings and write the labelling session
    Prototypes,
    /// Serve the labelling session over HTTP
    ServeLabels {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Directory of frontend assets served at `/`
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Train the teacher on propagated prototype labels
    Teach,
    /// Match instances to weak labels with the teacher
    Match,
    /// Train the student on matched labels
    Student,
    /// Evaluate on the test split
    Eval,
    /// Run every stage and write the report
    Run {
        /// Reuse stages whose summary exists
        #[arg(long)]
        resume: bool,
        /// Also run an inference sweep, e.g. "grid=8,16,32 eps=1,5"
        #[arg(long)]
        sweep: Option<String>,
    },
    /// AP@0.5 over a grid of inference settings on stored fields
    Sweep {
        #[arg(long)]
        sweep: Option<String>,
    },
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializable"));
}

fn stages(cfg: &PipelineConfig, names: &[&str]) -> saf_lab::Result<()> {
    let ws = prepare_workspace(cfg, false)?;
    for name in names {
        let summary = run_stage_checked(name, cfg, &ws)?;
        print_json(&serde_json::json!({ *name: summary }));
    }
    Ok(())
}

fn sweep(cfg: &PipelineConfig, spec: Option<&str>) -> saf_lab::Result<()> {
    let (mut grids, mut eps) = (SWEEP_GRIDS.to_vec(), SWEEP_EPS.to_vec());
    if let Some(s) = spec {
        parse_sweep_spec(s, &mut grids, &mut eps)?;
    }
    let ws = prepare_workspace(cfg, true)?;
    for name in [STAGE_DATASET, STAGE_FIELDS] {
        if !ws.summary(name).is_file() {
            run_stage_checked(name, cfg, &ws)?;
        }
    }
    let report = run_sweep(cfg, &grids, &eps)?;
    print!("{:>6}", "grid");
    for e in &eps {
        print!(" eps={e:<5}");
    }
    println!();
    for g in &grids {
        print!("{g:>6}");
        for e in &eps {
            let ap = report.get(*g, *e).map_or(f64::NAN, |p| p.ap50);
            print!(" {ap:<9.3}");
        }
        println!();
    }
    Ok(())
}

fn run(cli: Cli) -> saf_lab::Result<()> {
    let cfg = cli.config.resolve()?;
    match cli.command {
        Command::Simulate => stages(&cfg, &[STAGE_DATASET]),
        Command::Instantiate => stages(&cfg, &[STAGE_FIELDS, STAGE_INSTANCES]),
        Command::Track => stages(&cfg, &[STAGE_TUBES]),
        Command::Features => stages(&cfg, &[STAGE_FEATURES]),
        Command::Prototypes => stages(&cfg, &[STAGE_PROTOTYPES]),
        Command::Teach => stages(&cfg, &[STAGE_TEACHER]),
        Command::Match => stages(&cfg, &[STAGE_MATCH]),
        Command::Student => stages(&cfg, &[STAGE_STUDENT]),
        Command::Eval => stages(&cfg, &[STAGE_EVAL]),
        Command::ServeLabels { bind, static_dir } => {
            let ws = Workspace::new(&cfg.output_dir);
            let session = Arc::new(LabelSession::open(&cfg, &ws)?);
            let rt =
                tokio::runtime::Runtime::new().map_err(|e| saf_lab::Error::io("<runtime>", e))?;
            rt.block_on(serve(session, bind, static_dir.as_deref()))
                .map_err(|e| saf_lab::Error::io(bind.to_string(), e))?;
            println!("session written to {}", ws.session().display());
            Ok(())
        }
        Command::Run {
            resume,
            sweep: spec,
        } => {
            let report = run_pipeline(&cfg, RunOptions { resume })?;
            print_json(&report.metrics);
            if let Some(s) = spec {
                sweep(&cfg, Some(&s))?;
            }
            Ok(())
        }
        Command::Sweep { sweep: spec } => sweep(&cfg, spec.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
