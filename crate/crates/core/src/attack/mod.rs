//! Momentum iterative sign-gradient attack with transformation-averaged gradients.

mod engine;
mod plugin;

pub use engine::{
    attack, attack_batch, attack_with_rng, averaged_gradient, averaged_gradient_with_loss, mifgsm_step, write_log_csv,
    AttackConfig, AttackState, IterationLog,
};
pub use plugin::{Plugin, Trace};
