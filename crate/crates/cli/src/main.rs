use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use jumpflow::env::{collect_offline, read_dataset, write_dataset, BehaviorSpec, DatasetHeader, EnvName, Transition};
use jumpflow::harness::{
    check_theory, evaluate_flow, evaluate_greedy, load_agent, offline_dataset, phase_after, run_ablation, run_dqn,
    run_finetune, run_pretrain, save_dqn_agent, save_flow_agent, write_ablation, write_metrics, AblationAxis,
    EvalSummary, FlowAgent, RunConfig, Seeds, StoredAgent, TheoryCheck,
};
use jumpflow::nn::CheckpointMeta;

#[derive(Parser)]
#[command(name = "jumpflow", version, about = "Offline-to-online fine-tuning of CTMC action policies")]
struct Cli {
    /// TOML file layered over the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Environment (overrides the config file).
    #[arg(long, global = true)]
    env: Option<EnvName>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum AgentArg {
    Flow,
    Dqn,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect the offline dataset with the env's behavior policy.
    CollectData {
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Train critics and the reference generator on offline data.
    Pretrain {
        /// Dataset file; collected on the fly when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Online fine-tuning from a pretrained checkpoint.
    Finetune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Start from untrained networks instead of a checkpoint.
        #[arg(long)]
        cold_start: bool,
        #[arg(long)]
        steps: Option<u64>,
        /// `dqn` runs the baseline (offline TD phase, then online).
        #[arg(long, value_enum, default_value = "flow")]
        agent: AgentArg,
    },
    /// Evaluate a checkpoint directory.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        /// Goal-Switch phase to evaluate in (1 or 2).
        #[arg(long, default_value_t = 1)]
        phase: u8,
    },
    /// Sweep one hyperparameter, one fine-tuning run per value and seed.
    Ablate {
        #[arg(long)]
        axis: AblationAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
    },
    /// Run the property suites; exits nonzero on any failure.
    CheckTheory {
        /// One of mass, coverage, stability, kl, euler, or all.
        #[arg(long, default_value = "all")]
        which: String,
        #[arg(long)]
        trials: Option<usize>,
    },
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => String::new(),
    };
    Ok(RunConfig::resolve_with(&text, cli.env, cli.seed)?)
}

fn prepare_out(out: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    cfg.write(&out.join("config.toml"))?;
    Ok(())
}

fn dataset(cfg: &RunConfig, path: Option<&Path>) -> Result<Vec<Transition>> {
    match path {
        Some(p) => {
            let (header, data) = read_dataset(p)?;
            if header.env != cfg.env_name()? {
                bail!("dataset {} was collected on {}, config uses {}", p.display(), header.env, cfg.env);
            }
            Ok(data)
        }
        None => Ok(offline_dataset(cfg)?),
    }
}

fn write_eval(path: &Path, e: &EvalSummary) -> Result<()> {
    std::fs::write(path, toml::to_string(e)?)?;
    Ok(())
}

fn print_eval(label: &str, e: &EvalSummary) {
    println!(
        "{label}: return {:.3} +- {:.3}, goals {:?}, success {:.2}, success length {}",
        e.mean_return,
        e.std_return,
        e.goal_visits,
        e.success_rate,
        e.mean_success_length.map_or("-".to_string(), |l| format!("{l:.2}"))
    );
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.clone();
    match &cli.cmd {
        Cmd::CollectData { episodes } => {
            let cfg = config(&cli)?;
            prepare_out(&out, &cfg)?;
            let name = cfg.env_name()?;
            let mut behavior = BehaviorSpec::default_for(name);
            if let Some(n) = episodes {
                behavior.episodes = *n;
            }
            let seed = Seeds::new(cfg.seed).derive(jumpflow::harness::seeds::DATA);
            let data = collect_offline(&cfg.env_spec()?, &behavior, seed)?;
            let path = out.join("dataset.csv");
            write_dataset(&path, DatasetHeader { env: name, seed }, &data)?;
            println!("{} transitions -> {}", data.len(), path.display());
        }
        Cmd::Pretrain { data } => {
            let cfg = config(&cli)?;
            prepare_out(&out, &cfg)?;
            let data = dataset(&cfg, data.as_deref())?;
            let pre = run_pretrain(&cfg, &data)?;
            let dir = out.join("pretrained");
            save_flow_agent(&dir, &pre.agent, &cfg.env, CheckpointMeta { seed: cfg.seed, step: 0 })?;
            let e = evaluate_flow(
                &pre.agent.actor,
                &cfg.env_spec()?,
                cfg.budget.eval_episodes,
                Seeds::new(cfg.seed).derive(jumpflow::harness::seeds::EVAL),
                1,
                cfg.hyper.substeps,
            )?;
            write_eval(&out.join("eval_pretrained.toml"), &e)?;
            println!(
                "critic loss {:.4e}, value loss {:.4e}, generator loss {:.4e} -> {}",
                pre.critic_log.final_q_loss,
                pre.critic_log.final_v_loss,
                pre.generator_loss,
                dir.display()
            );
            print_eval("pretrained", &e);
        }
        Cmd::Finetune {
            checkpoint,
            data,
            cold_start,
            steps,
            agent,
        } => {
            let mut cfg = config(&cli)?;
            if let Some(s) = steps {
                cfg.budget.online_steps = *s;
            }
            cfg.budget.cold_start |= *cold_start;
            prepare_out(&out, &cfg)?;
            let data = Arc::new(dataset(&cfg, data.as_deref())?);
            let meta = CheckpointMeta {
                seed: cfg.seed,
                step: cfg.budget.online_steps,
            };
            match agent {
                AgentArg::Dqn => {
                    let o = run_dqn(&cfg, data)?;
                    write_metrics(&out.join("metrics.csv"), &o.rows)?;
                    save_dqn_agent(&out.join("agent"), &o.agent, &cfg.env, meta)?;
                    write_eval(&out.join("eval.toml"), &o.final_eval)?;
                    print_eval("offline", &o.offline_eval);
                    print_eval("final", &o.final_eval);
                }
                AgentArg::Flow => {
                    let start = match (checkpoint, cfg.budget.cold_start) {
                        (Some(dir), _) => match load_agent(dir, cfg.hyper.lr_q, cfg.hyper.lr_v)?.1 {
                            StoredAgent::Flow(a) => a,
                            StoredAgent::Dqn(_) => bail!("{} holds a DQN agent", dir.display()),
                        },
                        (None, true) => jumpflow::harness::fresh_agent(&cfg)?,
                        (None, false) => bail!("finetune needs --checkpoint (or --cold-start)"),
                    };
                    let o = run_finetune(&cfg, start, data)?;
                    write_metrics(&out.join("metrics.csv"), &o.rows)?;
                    save_flow_agent(&out.join("agent"), &o.agent, &cfg.env, meta)?;
                    write_eval(&out.join("eval.toml"), &o.final_eval)?;
                    print_eval("offline", &o.offline_eval);
                    print_eval("final", &o.final_eval);
                    println!("refreshes {}, clamped Euler steps {}", o.refresh_steps.len(), o.euler.clamped);
                }
            }
        }
        Cmd::Eval {
            checkpoint,
            episodes,
            phase,
        } => {
            let (manifest, agent) = load_agent(checkpoint, 3e-4, 3e-4)?;
            let env: EnvName = manifest.env.parse()?;
            let mut cfg = config(&cli)?;
            if cli.env.is_none() {
                cfg = RunConfig::resolve_with(&cfg.to_toml(), Some(env), None)?;
            }
            let spec = cfg.env_spec()?;
            let n = episodes.unwrap_or(cfg.budget.eval_episodes);
            let seed = Seeds::new(cfg.seed).derive(jumpflow::harness::seeds::EVAL);
            let phase = if spec.switch_step.is_some() { *phase } else { phase_after(&spec, 0) };
            let e = match agent {
                StoredAgent::Flow(FlowAgent { actor, .. }) => evaluate_flow(&actor, &spec, n, seed, phase, cfg.hyper.substeps)?,
                StoredAgent::Dqn(q) => evaluate_greedy(&q, &spec, n, seed, phase)?,
            };
            std::fs::create_dir_all(&out)?;
            write_eval(&out.join("eval.toml"), &e)?;
            print_eval("eval", &e);
        }
        Cmd::Ablate { axis, values, seeds } => {
            let cfg = config(&cli)?;
            prepare_out(&out, &cfg)?;
            let records = run_ablation(&cfg, *axis, values, seeds)?;
            write_ablation(&out.join("ablation.csv"), &records)?;
            for (v, r) in jumpflow::harness::mean_by_value(&records) {
                println!("{axis}={v}: mean final return {r:.3}");
            }
        }
        Cmd::CheckTheory { which, trials } => {
            let seed = cli.seed.unwrap_or(0);
            let checks: Vec<TheoryCheck> = if which == "all" {
                TheoryCheck::ALL.to_vec()
            } else {
                vec![which.parse()?]
            };
            let mut ok = true;
            for c in checks {
                let report = check_theory(c, trials.unwrap_or_else(|| c.default_trials()), seed)?;
                println!("{report}");
                ok &= report.passed();
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
