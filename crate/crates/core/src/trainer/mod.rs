//! Training orchestration: run configuration, the staged pipeline and the
//! actor-critic phase.

mod config;
mod pipeline;
mod rl;

pub use config::RunConfig;
pub use pipeline::{
    extractor_pretrain_config, generate_headlines, new_critic, popularity_by_doc, prepare_corpus, pretrain_abstractor,
    pretrain_extractor, read_generations, rl_settings, run_pipeline, run_rl, train_predictor, write_generations,
    GenerationRecord, PipelineOutput, PreparedCorpus, GENERATIONS_FILE, REWARD_LOG_FILE,
};
pub use rl::{
    a2c_update, abstractor_update, collect_episode, compute_reward, evaluate_reward, policy_loss, read_reward_log, train_rl,
    Critic, Reward, RewardLog, RewardRow, RlExample, RlModels, RlSettings, Trajectory, UpdateDiagnostics, CRITIC_NETWORK,
};
