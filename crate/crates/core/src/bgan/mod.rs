//! Bias-oriented GAN: a generator that predicts per-sample logit biases and
//! a critic that compares them with constructed correction biases.

mod loss;
mod nets;
mod train;

pub use loss::{loss_d, loss_g, regression_loss, CriticLoss, GenLoss};
pub use nets::{Critic, CriticTrace, GenTrace, Generator, NetArch, NetShape};
pub use train::{
    train_bgan, train_gradual, train_integrated, train_iteration, train_iteration_observed, BganHyper,
    BganRun, BganState, BiasAudit, CorrectionSetup, GenObjective, IterationRecord, SubStep,
};
