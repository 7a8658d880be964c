//! Parameterised building blocks shared by the spatial and temporal layers.

use rand::Rng as _;

use crate::error::Result;
use crate::rng::Rng;
use crate::tensor::{ConvSpec, ParamId, ParamStore, Scalar, Session, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Uniform draw in `±sqrt(6 / fan_in)`.
pub fn he_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Uniform draw in `±1 / sqrt(fan_in)`.
pub fn lecun_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = (1.0 / fan_in as f64).sqrt() as f32;
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

/// Per-channel batch normalisation over axis 1.
///
/// Runs on batch statistics when the session is in training mode and `gamma`
/// is trainable; otherwise it uses the running buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.weight(format!("{prefix}.gamma"), Tensor::full(&[channels], 1.0))?,
            beta: store.weight(format!("{prefix}.beta"), Tensor::zeros(&[channels]))?,
            running_mean: store.buffer(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]))?,
            running_var: store.buffer(format!("{prefix}.running_var"), Tensor::full(&[channels], 1.0))?,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = sess.param(self.gamma);
        let b = sess.param(self.beta);
        if sess.is_train() && !sess.store().get(self.gamma).frozen {
            let (y, stats) = sess.tape.batch_norm_train(x, g, b, BN_EPS)?;
            sess.record_stats(self.running_mean, self.running_var, stats);
            Ok(y)
        } else {
            let store = sess.store();
            let mean = store.value(self.running_mean).data().to_vec();
            let var = store.value(self.running_var).data().to_vec();
            sess.tape.batch_norm_infer(x, g, b, &mean, &var, BN_EPS)
        }
    }
}

/// Temporal `K x 1` convolution with bias. `K = 1` gives a (possibly strided)
/// pointwise map.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub kernel: usize,
}

impl Conv {
    /// Weight shape `[c_out, c_in, kernel, 1]`, or `[c_out, c_in]` when `kernel == 1`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Result<Self> {
        let shape: Vec<usize> = if kernel == 1 { vec![c_out, c_in] } else { vec![c_out, c_in, kernel, 1] };
        let weight = store.weight(format!("{name}.weight"), he_uniform(rng, &shape, c_in * kernel))?;
        let bias = if bias { Some(store.weight(format!("{name}.bias"), Tensor::zeros(&[c_out]))?) } else { None };
        Ok(Self { weight, bias, spec, kernel })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = sess.param(self.weight);
        let b = self.bias.map(|b| sess.param(b));
        if self.kernel == 1 {
            sess.tape.pointwise_strided(x, w, b, self.spec.stride)
        } else {
            sess.tape.temporal_conv(x, w, b, self.spec)
        }
    }
}

/// 1x1 convolution followed by batch norm, used where a residual path must
/// change channel count or frame rate.
#[derive(Clone, Debug)]
pub struct Projection {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl Projection {
    pub fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv::new(store, rng, &format!("{name}.conv"), c_in, c_out, 1, ConvSpec::same(stride, 1), true)?,
            bn: BatchNorm::new(store, &format!("{name}.bn"), c_out)?,
        })
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(sess, x)?;
        self.bn.forward(sess, y)
    }
}
