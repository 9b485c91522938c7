//! Spring-system dynamics: ground truth, datasets, learned vector fields and
//! their training through RK4.
//!
//! States are packed per system as `[q (N x d, body-major), p (N x d)]` and
//! systems are concatenated, so a batch of `B` systems is one flat vector of
//! length `B * 2Nd`.

mod conservation;
mod data;
mod integrate;
mod models;
mod spring;
mod train;

pub use conservation::{conservation_report, max_drift, ConservationReport};
pub use data::{generate_spring_dataset, DataConfig, Manifest, Segments, SpringDataset, Split};
pub use integrate::{integrate_to_tolerance, rk4_integrate, rk4_step};
pub use models::{
    build_model, Direct, DirectModel, DynModelConfig, EnergyModel, FcField, FieldModel, HLieConv, Hamiltonian,
    Invariance, LieConvField, ModelKind, TrueSpring,
};
pub use spring::{angular_momentum, linear_momentum, spring_field, spring_hamiltonian, Systems};
pub use train::{
    cosine_lr, loss_and_grad, rollout, scaled_epochs, smoothed, split_mse, train, trajectory_loss, Adam, TrainConfig,
    TrainReport,
};

use crate::error::Result;

/// Integrates a model from `z0` for `steps` intervals of `dt`, halving the
/// step until the endpoint is stable to `rtol`. Returns the trajectory and
/// the substeps used.
pub fn model_rollout(
    model: &dyn FieldModel,
    z0: &[f64],
    sys: &Systems,
    dt: f64,
    steps: usize,
    rtol: f64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    let field = |z: &[f64]| model.field(z, sys);
    integrate_to_tolerance(&field, z0, dt, steps, 1, rtol)
}
