use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bev2ego_cli::commands::{self, *};
use bev2ego_cli::serve::{self, AppState};
use bev2ego_cli::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "bev2ego", version, about = "Synthesize BEV traffic scenes and mine detector failure groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw random scenes from the attribute grid.
    SampleScenes(SampleArgs),
    /// Print the projected geometry of a scene.
    Preview(PreviewArgs),
    /// Write the images, masks and sidecars of every scene and seed.
    Realize(RealizeArgs),
    /// Score every detector on every scene.
    Evaluate(EvaluateArgs),
    /// Rank scene groups by how much a detector underperforms on them.
    Mine(MineArgs),
    /// Regenerate the reports of a run from its result log.
    Report(RunDirArgs),
    /// Compare outpainting methods on shape, colour and prompt fidelity.
    BenchmarkOutpaint(BenchmarkArgs),
    /// Correlate synthetic occlusion curves with real-frame ones.
    Sim2real(Sim2RealArgs),
    /// Serve the composer API.
    Serve(ServeArgs),
}

#[derive(Debug, clap::Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Directory holding scenes and the result log.
    #[arg(long, default_value = "bev2ego-store")]
    store: PathBuf,
    /// Also expose the configured services under /v1/*.
    #[arg(long)]
    model_host: bool,
    #[command(flatten)]
    service: ServiceArgs,
}

fn serve(args: &ServeArgs) -> CliResult<()> {
    let (_, services) = args.service.services()?;
    let (_, mms) = args.service.prepare(Vec::new())?;
    let mms = bev2ego::metrics::MmsConfig { seeds_per_scene: args.service.seeds.unwrap_or(9), ..mms };
    let state = AppState::new(args.store.clone(), services, mms)?;
    serve::run(args.addr, state, args.model_host, |a| {
        // the port line is machine-read by wrappers that bind port 0
        println!("listening on http://{a}");
    })?;
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SampleScenes(a) => {
            let n = sample_scenes(&a)?;
            println!("wrote {n} scenes to {}", a.out.display());
        }
        Command::Preview(a) => print_json(&preview(&a)?),
        Command::Realize(a) => {
            let n = realize(&a)?;
            println!("wrote {n} images to {}", a.out.display());
        }
        Command::Evaluate(a) => {
            let run = commands::evaluate(&a)?;
            print!("{}", bev2ego::pipeline::summary_table(&run));
            check_failures(&run, a.max_failure_rate)?;
        }
        Command::Mine(a) => print!("{}", mine(&a)?),
        Command::Report(a) => print!("{}", report(&a)?),
        Command::BenchmarkOutpaint(a) => print!("{}", benchmark(&a)?),
        Command::Sim2real(a) => print!("{}", sim2real(&a)?),
        Command::Serve(a) => serve(&a)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Other(inner) = &e {
                for cause in inner.chain().skip(1) {
                    eprintln!("  caused by: {cause}");
                }
            }
            e.exit_code()
        }
    }
}
