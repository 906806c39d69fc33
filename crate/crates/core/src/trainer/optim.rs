use std::collections::BTreeMap;

use super::TrainError;
use crate::numerics::{NumericsError, ParamGrads, ParamGroup};
use crate::scalar::Scalar;

/// `lr0 · 0.96^⌊max(0, epoch − 50) / 10⌋`, epochs counted from 0.
pub fn lr_schedule(epoch: usize, lr0: f64) -> f64 {
    lr0 * 0.96f64.powi((epoch.saturating_sub(50) / 10) as i32)
}

/// Per-parameter momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    velocities: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamGroup<T>) -> Self {
        Self {
            velocities: params
                .iter()
                .map(|(id, t)| (id.to_string(), vec![T::zero(); t.len()]))
                .collect(),
        }
    }

    pub fn from_velocities(params: &ParamGroup<T>, velocities: BTreeMap<String, Vec<T>>) -> Result<Self, TrainError> {
        let fresh = Self::new(params);
        for (id, v) in &fresh.velocities {
            match velocities.get(id) {
                Some(w) if w.len() == v.len() => {}
                _ => return Err(TrainError::Config(format!("velocity for {id} missing or misshapen"))),
            }
        }
        if velocities.len() != fresh.velocities.len() {
            return Err(TrainError::Config("velocity ids do not match parameters".into()));
        }
        Ok(Self { velocities })
    }

    pub fn velocities(&self) -> &BTreeMap<String, Vec<T>> {
        &self.velocities
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.velocities.get(id).map(Vec::as_slice)
    }
}

/// Nesterov SGD in the lookahead-in-update form:
///
/// ```text
/// v ← m·v − lr·g
/// p ← p + m·v − lr·g
/// ```
///
/// Parameters absent from `grads` (never reached by the loss) are left
/// untouched, velocity included.
pub fn sgd_nesterov_step<T: Scalar>(
    params: &mut ParamGroup<T>,
    grads: &ParamGrads<T>,
    state: &mut OptimizerState<T>,
    lr: T,
    momentum: T,
) -> Result<(), NumericsError> {
    for (id, g) in grads.iter() {
        let p = params
            .get_mut(id)
            .ok_or_else(|| NumericsError::MissingParam(id.to_string()))?;
        let v = state
            .velocities
            .get_mut(id)
            .ok_or_else(|| NumericsError::MissingParam(id.to_string()))?;
        if g.len() != p.len() || v.len() != p.len() {
            return Err(NumericsError::shape("sgd_nesterov_step", p.shape(), &[g.len()]));
        }
        for ((pi, vi), &gi) in p.values_mut().iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = momentum * *vi - lr * gi;
            *pi += momentum * *vi - lr * gi;
        }
    }
    Ok(())
}
