//! DDPG agents, replay buffers, coordinated exploration noise, minibatch
//! sharing schemes and the concurrent training loop.

pub mod buffer;
pub mod ddpg;
pub mod noise;
pub mod sharing;
pub mod train;

pub use buffer::{Batch, ReplayBuffer, TransitionTuple};
pub use ddpg::{ddpg_update, select_action, DdpgAgent, DdpgConfig, UpdateStats};
pub use noise::{anneal, sample_episode_means, OuNoise};
pub use sharing::{build_minibatch, Minibatch, SchemeKind, ShareScheme};
pub use train::{agent_seed, make_slots, train_concurrent, AgentSlot, EpochTrajectories, TrainConfig, TrainingLog};
