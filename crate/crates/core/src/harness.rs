//! Configuration, seeding, metrics, checkpoints and the training entry points.

pub mod ablate;
pub mod config;
pub mod metrics;
pub mod run;
pub mod seeds;
pub mod store;
pub mod theory;

pub use ablate::{apply_axis, mean_by_value, run_ablation, write_ablation, AblationAxis, AblationRecord};
pub use config::{budget_split, Budget, DqnConfig, Hyper, RunConfig, DEFAULT_CONFIG};
pub use metrics::{read_metrics, write_metrics, MetricsRow, METRICS_SCHEMA};
pub use run::{
    evaluate, evaluate_flow, evaluate_greedy, fresh_agent, offline_dataset, phase_after, run_dqn, run_dqn_experiment,
    run_finetune, run_flow_experiment, run_pretrain, DqnOutcome, EvalSummary, FinetuneOutcome, PretrainOutcome,
};
pub use seeds::Seeds;
pub use store::{load_agent, save_dqn_agent, save_flow_agent, AgentKind, AgentManifest, FlowAgent, StoredAgent};
pub use theory::{check_theory, TheoryCheck, TheoryReport};
