use super::TrainError;
use crate::data::{MultiViewSet, VoxelGrid};
use crate::losses::{objective_on, LossBreakdown, LossWeights, ObjectiveVars};
use crate::model::{
    decode_on, image_encode_on, switch_on, voxel_encode_on, BranchVars, Modality, ModelError, SwitchVae,
};
use crate::numerics::{BoundParams, ParamGrads, Tape, Var};
use crate::scalar::Scalar;

/// Tape handles of one sample's training forward pass.
#[derive(Debug, Clone, Copy)]
pub struct SampleForward {
    pub objective: ObjectiveVars,
    pub active: BranchVars,
    pub prediction: Var,
}

/// Records encoders, switch, decoder and objective for one sample.
///
/// An encoder whose flag is off is skipped; its latent is then replaced by the
/// active one inside the contrastive term (which must carry zero weight).
#[allow(clippy::too_many_arguments)]
pub fn sample_forward<T: Scalar>(
    tape: &mut Tape<'_, T>,
    bound: &BoundParams,
    model: &SwitchVae<T>,
    grid: &VoxelGrid<T>,
    views: Option<&MultiViewSet<T>>,
    alpha: Modality,
    eps_img: Vec<T>,
    eps_vox: Vec<T>,
    weights: &LossWeights,
    run_img: bool,
    run_vox: bool,
) -> Result<SampleForward, ModelError> {
    let cfg = model.config();
    let img = if run_img || alpha == Modality::Img {
        let views = views.ok_or_else(|| ModelError::Config("image encoder needs views".into()))?;
        let xs = model.view_inputs(tape, views)?;
        let (mean, log_var) = image_encode_on(tape, bound, cfg, &xs)?;
        let z = tape.reparameterize(mean, log_var, eps_img)?;
        Some(BranchVars { mean, log_var, z })
    } else {
        None
    };
    let vox = if run_vox || alpha == Modality::Vox {
        let x = model.voxel_input(tape, grid)?;
        let (mean, log_var) = voxel_encode_on(tape, bound, x)?;
        let z = tape.reparameterize(mean, log_var, eps_vox)?;
        Some(BranchVars { mean, log_var, z })
    } else {
        None
    };
    let (img, vox) = match (img, vox) {
        (Some(i), Some(v)) => (i, v),
        (Some(i), None) => (i, i),
        (None, Some(v)) => (v, v),
        (None, None) => unreachable!("the active encoder always runs"),
    };
    let sw = switch_on(tape, alpha, img, vox, cfg.contrastive_policy);
    let prediction = decode_on(tape, bound, cfg, sw.active.z)?;
    let objective = objective_on(
        tape,
        grid.values().to_vec(),
        prediction,
        (sw.active.mean, sw.active.log_var),
        sw.z_img,
        sw.z_vox,
        weights,
    )?;
    Ok(SampleForward {
        objective,
        active: sw.active,
        prediction,
    })
}

#[derive(Debug, Clone)]
pub struct SampleResult<T> {
    pub grads: ParamGrads<T>,
    pub loss: LossBreakdown,
    pub mu_active: Vec<T>,
}

/// Forward and backward for one sample.
#[allow(clippy::too_many_arguments)]
pub fn sample_step<T: Scalar>(
    model: &SwitchVae<T>,
    grid: &VoxelGrid<T>,
    views: Option<&MultiViewSet<T>>,
    alpha: Modality,
    eps_img: Vec<T>,
    eps_vox: Vec<T>,
    weights: &LossWeights,
    run_img: bool,
    run_vox: bool,
) -> Result<SampleResult<T>, TrainError> {
    let mut tape = Tape::new();
    let bound = tape.bind(model.params());
    let f = sample_forward(
        &mut tape, &bound, model, grid, views, alpha, eps_img, eps_vox, weights, run_img, run_vox,
    )?;
    let loss = f.objective.breakdown(&tape, weights);
    let grads = tape.backward(f.objective.total)?;
    Ok(SampleResult {
        grads: bound.collect(&grads),
        loss,
        mu_active: tape.value(f.active.mean).to_vec(),
    })
}
