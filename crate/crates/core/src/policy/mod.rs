//! Observations, reward shaping and the PPO learner.

pub mod adam;
pub mod gae;
pub mod mlp;
pub mod net;
pub mod obs;
pub mod ppo;
pub mod reward;
pub mod train;

pub use net::{ActionSample, PolicyParams};
pub use obs::{build_observation, ObsInputs, ObsMode, Observation};
pub use ppo::{loss_and_gradients, ppo_update, LossStats, PpoConfig, Sample};
pub use reward::{shaped_reward, RewardParams};
pub use train::{
    evaluate, init_policy, rl_train, train_policy, Bandit, EnvStep, Environment, EpisodeTrace, IterationStats,
    PolicyCheckpoint, StepInfo, TrainOutcome,
};
