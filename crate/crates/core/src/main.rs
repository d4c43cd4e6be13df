use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use scorerl::envs::EnvKind;
use scorerl::metrics::analyze_run;
use scorerl::sampling::PairScheme;
use scorerl::service::{self, ServiceState, DEFAULT_PORT};
use scorerl::trainer::{run_ablation, Arm, RunConfig, TeacherMode, Trainer};

#[derive(Parser)]
#[command(name = "scorerl", about = "Reinforcement learning from global trajectory scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum TeacherArg {
    Scripted,
    Human,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON run config; unknown keys are rejected.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the desk-scale preset for this environment instead of the defaults.
    #[arg(long)]
    desk: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, value_enum)]
    teacher: Option<TeacherArg>,
    /// uniform, entropy or priority
    #[arg(long)]
    pair_sampler: Option<String>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, Box<dyn std::error::Error>> {
        let mut cfg = match (&self.config, &self.desk) {
            (Some(path), _) => RunConfig::from_json(&fs::read_to_string(path)?)?,
            (None, Some(env)) => RunConfig::desk(EnvKind::from_name(env)?),
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(t) = self.teacher {
            cfg.teacher.mode = match t {
                TeacherArg::Scripted => TeacherMode::Scripted,
                TeacherArg::Human => TeacherMode::Human,
            };
        }
        if let Some(name) = &self.pair_sampler {
            cfg.sampler.scheme = PairScheme::from_name(name).ok_or(format!("unknown pair sampler `{name}`"))?;
        }
        if let Some(v) = self.noise_var {
            cfg.teacher.noise_variance = v;
        }
        if let Some(b) = self.budget {
            cfg.budget = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent and write metrics, checkpoints and the scoring buffer.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Port of the scoring service in human mode.
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        /// Directory with the scoring UI bundle to serve.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
    /// Compare sampling schemes or label-smoothing modes over several seeds.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Comma-separated: uniform, entropy, priority, adaptive, constant, hard.
        #[arg(long, value_delimiter = ',', default_value = "uniform,entropy,priority")]
        arms: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reward-extrapolation statistics for a finished run directory.
    Analyze {
        #[arg(long)]
        run: PathBuf,
    },
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run {
            cfg,
            out,
            port,
            static_dir,
        } => {
            let cfg = cfg.build()?;
            let artifacts = if cfg.teacher.mode == TeacherMode::Human {
                let (trainer_link, service_link) = service::link();
                let state = ServiceState::new(service_link, cfg.teacher.scoring_range);
                let server = service::spawn(state, SocketAddr::from(([0, 0, 0, 0], port)), static_dir)?;
                println!("scoring service at http://{}", server.addr());
                let artifacts = Trainer::with_link(cfg, trainer_link)?.run()?;
                server.shutdown()?;
                artifacts
            } else {
                Trainer::new(cfg)?.run()?
            };
            artifacts.write_to_dir(&out)?;
            println!("{}", serde_json::to_string_pretty(&artifacts.report)?);
        }
        Command::Ablate { cfg, arms, seeds, out } => {
            let cfg = cfg.build()?;
            let arms = arms
                .iter()
                .map(|a| Arm::from_name(a).ok_or(format!("unknown arm `{a}`")))
                .collect::<Result<Vec<_>, _>>()?;
            let results = run_ablation(&cfg, &arms, &seeds)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("ablation.json"), serde_json::to_string_pretty(&results)?)?;
            for r in &results {
                println!("{:9} mean {:.3} ± {:.3}  {:?}", r.arm.name(), r.mean, r.std, r.final_performance);
            }
        }
        Command::Analyze { run } => {
            let summary = analyze_run(&run)?;
            println!(
                "kendall tau_b {:.3}  pearson {:.3}  scale {:.4}  aligned MAE {:.4} (true std {:.4}) over {} trajectories",
                summary.correlation.kendall_tau_b,
                summary.correlation.pearson_r,
                summary.correlation.scale,
                summary.alignment.mae,
                summary.alignment.true_std,
                summary.trajectories
            );
        }
    }
    Ok(())
}
