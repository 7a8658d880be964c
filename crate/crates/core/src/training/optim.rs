use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamKind, ParamStore, Tensor};

/// `base_lr * gamma^(number of milestones <= epoch)`.
pub fn lr_at_epoch(base_lr: f64, milestones: &[usize], gamma: f64, epoch: usize) -> f64 {
    let passed = milestones.iter().filter(|&&m| m <= epoch).count();
    base_lr * gamma.powi(passed as i32)
}

pub fn validate_schedule(milestones: &[usize], gamma: f64) -> Result<()> {
    if milestones.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config(format!("milestones {milestones:?} must be strictly increasing")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("gamma {gamma} must lie in (0, 1)")));
    }
    Ok(())
}

/// SGD with Nesterov momentum:
///
/// ```text
/// g' = g + wd * θ
/// v  = μ * v + g'
/// θ  = θ - lr * (g' + μ * v)
/// ```
///
/// Frozen parameters and buffers are skipped entirely, so their velocity stays zero.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<f32>>>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: vec![None; store.len()] }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&[f32]> {
        self.velocity.get(id.index()).and_then(|v| v.as_deref())
    }

    /// Applies one update. Trainable weights without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor<f32>)], lr: f64) {
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let mut by_id: Vec<Option<&Tensor<f32>>> = vec![None; store.len()];
        for (id, g) in grads {
            by_id[id.index()] = Some(g);
        }
        let (mu, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        for (i, p) in store.iter_mut().enumerate() {
            if p.frozen || p.kind != ParamKind::Weight {
                continue;
            }
            let theta = p.value.data_mut();
            let v = self.velocity[i].get_or_insert_with(|| vec![0.0; theta.len()]);
            let g = by_id[i].map(|g| g.data());
            for j in 0..theta.len() {
                let gj = g.map_or(0.0, |g| g[j]) + wd * theta[j];
                v[j] = mu * v[j] + gj;
                theta[j] -= lr * (gj + mu * v[j]);
            }
        }
    }
}
