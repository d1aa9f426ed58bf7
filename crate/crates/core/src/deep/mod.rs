//! Deep value-based agents: independent learners, additive and monotonic
//! value decomposition, each either with a target network or as an ensemble
//! with optimistic exploration and ensemble-mean targets.

mod learner;
mod loss;
mod mixer;
mod net;
mod replay;
mod schedule;

pub use learner::{DeepAlgorithm, DeepConfig, DeepError, DeepLearner, EvalPolicy, UpdateStats};
pub use loss::{build_loss, member_prefix, Batch, InputLayout, LossOutput, LossSetup, TargetKind, MIXER_PREFIX, TARGET_PREFIX};
pub use mixer::{vdn_graph, MixerKind, QmixSpec};
pub use net::{init_mlp, mlp_forward, mlp_graph, MlpSpec};
pub use replay::{ReplayBuffer, ReplayTooSmall, Transition};
pub use schedule::{EpsilonSchedule, RewardStandardizer};
