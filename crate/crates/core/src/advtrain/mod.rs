//! Joint training of the HyperNet against an attack network.

mod adam;
mod attack_net;
mod losses;
mod surrogate;
mod train;

pub use adam::Adam;
pub use attack_net::{apply_perturbation, attack_forward, AttackCache, AttackNet};
pub use losses::{
    attack_objective, composite_grad, diversity, diversity_grad, loss_adversarial, loss_classification,
    loss_diversity, weight_variance, CompositeGrad,
};
pub use surrogate::{train_surrogate, SurrogateConfig};
pub use train::{train, write_log_csv, Checkpoint, LogRow, TrainConfig, TrainOutcome};
