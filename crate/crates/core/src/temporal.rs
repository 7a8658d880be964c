//! Temporal modelling: single-scale (SST), multi-scale (MST) and the additive
//! fusion variant (ESP-MST).
//!
//! MST and ESP-MST share four branches of `C_out / 4` channels each:
//!
//! 1. 1x1 reduce, BN, relu, 3x1 conv with dilation 1, BN
//! 2. 1x1 reduce, BN, relu, 3x1 conv with dilation 2, BN
//! 3. 1x1 reduce, BN, relu, 3x1 max-pool, BN
//! 4. strided 1x1 conv, BN
//!
//! MST concatenates `(b1, b2, b3, b4)`; ESP-MST concatenates `(b1, b1 + b2, b3, b4)`.
//! Both then add a residual and apply relu.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv, Projection};
use crate::rng::Rng;
use crate::tensor::{ConvSpec, ParamStore, Scalar, Session, Var};

pub const SST_KERNEL: usize = 9;
pub const BRANCH_KERNEL: usize = 3;
pub const DILATIONS: [usize; 2] = [1, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemporalVariant {
    Sst,
    Mst,
    EspMst,
}

impl TemporalVariant {
    pub fn name(self) -> &'static str {
        match self {
            TemporalVariant::Sst => "sst",
            TemporalVariant::Mst => "mst",
            TemporalVariant::EspMst => "espmst",
        }
    }

    pub fn is_multi_scale(self) -> bool {
        self != TemporalVariant::Sst
    }
}

impl fmt::Display for TemporalVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemporalVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sst" => Ok(TemporalVariant::Sst),
            "mst" => Ok(TemporalVariant::Mst),
            "espmst" => Ok(TemporalVariant::EspMst),
            _ => Err(Error::config(format!("unknown temporal variant '{s}' (expected sst, mst or espmst)"))),
        }
    }
}

#[derive(Clone, Debug)]
struct ConvBranch {
    reduce: Conv,
    reduce_bn: BatchNorm,
    conv: Conv,
    bn: BatchNorm,
}

#[derive(Clone, Debug)]
struct PoolBranch {
    reduce: Conv,
    reduce_bn: BatchNorm,
    stride: usize,
    bn: BatchNorm,
}

#[derive(Clone, Debug)]
enum Body {
    Sst { conv: Conv, bn: BatchNorm },
    Multi { dilated: [ConvBranch; 2], pool: PoolBranch, point: Projection },
}

#[derive(Clone, Debug)]
enum Residual {
    None,
    Identity,
    Project(Projection),
}

#[derive(Clone, Debug)]
pub struct TemporalLayer {
    pub variant: TemporalVariant,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    body: Body,
    residual: Residual,
}

/// Output length of a same-padded layer: `ceil(T / stride)`.
pub fn output_frames(t: usize, stride: usize) -> usize {
    t.div_ceil(stride)
}

impl TemporalLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        variant: TemporalVariant,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::config("temporal stride must be >= 1"));
        }
        let matched = stride == 1 && c_in == c_out;
        let (body, residual) = match variant {
            TemporalVariant::Sst => {
                let conv = Conv::new(store, rng, &format!("{prefix}.conv"), c_in, c_out, SST_KERNEL, ConvSpec::same(stride, 1), true)?;
                let bn = BatchNorm::new(store, &format!("{prefix}.bn"), c_out)?;
                let residual = if matched { Residual::Identity } else { Residual::None };
                (Body::Sst { conv, bn }, residual)
            }
            TemporalVariant::Mst | TemporalVariant::EspMst => {
                if c_out % 4 != 0 {
                    return Err(Error::config(format!(
                        "multi-scale temporal layer needs output channels divisible by 4, got {c_out}"
                    )));
                }
                let cb = c_out / 4;
                let dilated = [0, 1].map(|i| -> Result<ConvBranch> {
                    let name = format!("{prefix}.branch{}", i + 1);
                    Ok(ConvBranch {
                        reduce: Conv::new(store, rng, &format!("{name}.reduce"), c_in, cb, 1, ConvSpec::same(1, 1), true)?,
                        reduce_bn: BatchNorm::new(store, &format!("{name}.reduce_bn"), cb)?,
                        conv: Conv::new(
                            store,
                            rng,
                            &format!("{name}.conv"),
                            cb,
                            cb,
                            BRANCH_KERNEL,
                            ConvSpec::same(stride, DILATIONS[i]),
                            true,
                        )?,
                        bn: BatchNorm::new(store, &format!("{name}.bn"), cb)?,
                    })
                });
                let [d1, d2] = dilated;
                let pool = PoolBranch {
                    reduce: Conv::new(store, rng, &format!("{prefix}.branch3.reduce"), c_in, cb, 1, ConvSpec::same(1, 1), true)?,
                    reduce_bn: BatchNorm::new(store, &format!("{prefix}.branch3.reduce_bn"), cb)?,
                    stride,
                    bn: BatchNorm::new(store, &format!("{prefix}.branch3.bn"), cb)?,
                };
                let point = Projection::new(store, rng, &format!("{prefix}.branch4"), c_in, cb, stride)?;
                let residual = if matched {
                    Residual::Identity
                } else {
                    Residual::Project(Projection::new(store, rng, &format!("{prefix}.residual"), c_in, c_out, stride)?)
                };
                (Body::Multi { dilated: [d1?, d2?], pool, point }, residual)
            }
        };
        Ok(Self { variant, c_in, c_out, stride, body, residual })
    }

    /// Channel outputs of the four branches before concatenation, for MST and
    /// ESP-MST layers.
    pub fn branches<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<[Var; 4]> {
        let Body::Multi { dilated, pool, point } = &self.body else {
            return Err(Error::contract("single-scale layers have no branches"));
        };
        let mut out = Vec::with_capacity(4);
        for br in dilated {
            let r = br.reduce.forward(sess, x)?;
            let r = br.reduce_bn.forward(sess, r)?;
            let r = sess.tape.relu(r);
            let c = br.conv.forward(sess, r)?;
            out.push(br.bn.forward(sess, c)?);
        }
        let r = pool.reduce.forward(sess, x)?;
        let r = pool.reduce_bn.forward(sess, r)?;
        let r = sess.tape.relu(r);
        let p = sess.tape.max_pool_time(r, pool.stride)?;
        out.push(pool.bn.forward(sess, p)?);
        out.push(point.forward(sess, x)?);
        Ok([out[0], out[1], out[2], out[3]])
    }

    /// The four channel slots that are concatenated: `[b1, b2, b3, b4]` for
    /// MST and `[b1, b1 + b2, b3, b4]` for ESP-MST.
    pub fn slots<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<[Var; 4]> {
        let [b1, b2, b3, b4] = self.branches(sess, x)?;
        let slot2 = if self.variant == TemporalVariant::EspMst { sess.tape.add(b1, b2)? } else { b2 };
        Ok([b1, slot2, b3, b4])
    }

    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let sx = sess.tape.shape(x);
        if sx.len() != 4 || sx[1] != self.c_in {
            return Err(Error::dim(format!("temporal layer expects [B, {}, T, N], got {sx:?}", self.c_in)));
        }
        let body = match &self.body {
            Body::Sst { conv, bn } => {
                let y = conv.forward(sess, x)?;
                bn.forward(sess, y)?
            }
            Body::Multi { .. } => {
                let slots = self.slots(sess, x)?;
                sess.tape.concat_channels(&slots)?
            }
        };
        let with_res = match &self.residual {
            Residual::None => return Ok(body),
            Residual::Identity => sess.tape.add(body, x)?,
            Residual::Project(p) => {
                let r = p.forward(sess, x)?;
                sess.tape.add(body, r)?
            }
        };
        Ok(if self.variant.is_multi_scale() { sess.tape.relu(with_res) } else { with_res })
    }
}
