//! Spatial graph convolutions: ST-GC, AGC and TC-AGC.
//!
//! All variants share `f_out = Σ_k W_k · aggregate(f_in, mix_k)` where row `i` of
//! `mix_k` holds the weights joint `i` gathers from the other joints:
//!
//! * ST-GC: `mix_k = A_k ⊙ M_k`
//! * AGC: `mix_k = A_k + B_k + C_k(f_in)`
//! * TC-AGC: `mix_k = A_k + B_k + C_k(f_in) + D_k(f_in)`
//!
//! `C_k` and `D_k` are row-softmaxed bilinear similarities of two embeddings of
//! the input; `D_k` embeds with 9-frame temporal convolutions instead of 1x1 maps.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, K_V};
use crate::nn::{BatchNorm, Conv, Projection};
use crate::rng::Rng;
use crate::tensor::{ConvSpec, ParamId, ParamStore, Scalar, Session, Tape, Tensor, Var};

pub const TEMPORAL_EMBED_KERNEL: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpatialVariant {
    Stgc,
    Agc,
    TcAgc,
}

impl SpatialVariant {
    pub fn name(self) -> &'static str {
        match self {
            SpatialVariant::Stgc => "stgc",
            SpatialVariant::Agc => "agc",
            SpatialVariant::TcAgc => "tcagc",
        }
    }
}

impl fmt::Display for SpatialVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SpatialVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "stgc" => Ok(SpatialVariant::Stgc),
            "agc" => Ok(SpatialVariant::Agc),
            "tcagc" => Ok(SpatialVariant::TcAgc),
            _ => Err(Error::config(format!("unknown spatial variant '{s}' (expected stgc, agc or tcagc)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedKind {
    Pointwise,
    Temporal9,
}

/// Embedding channel count: a quarter of the output width, at least 4.
pub fn embed_channels(c_out: usize) -> usize {
    (c_out / 4).max(4)
}

/// Parameters of one embedding map (weight plus bias).
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub weight: Var,
    pub bias: Var,
}

fn embed<T: Scalar>(tape: &mut Tape<T>, x: Var, e: Embedding, kind: EmbedKind) -> Result<Var> {
    match kind {
        EmbedKind::Pointwise => tape.pointwise(x, e.weight, Some(e.bias)),
        EmbedKind::Temporal9 => tape.temporal_conv(x, e.weight, Some(e.bias), ConvSpec::same(1, 1)),
    }
}

/// `softmax_rows(θ(x)ᵀ φ(x) / (C_e·T))` per sample: `[B, C, T, N] -> [B, N, N]`.
pub fn compute_affinity<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    theta: Embedding,
    phi: Embedding,
    kind: EmbedKind,
) -> Result<Var> {
    let t_in = tape.shape(x)[2];
    let a = embed(tape, x, theta, kind)?;
    let b = embed(tape, x, phi, kind)?;
    if tape.shape(a)[2] != t_in || tape.shape(b)[2] != t_in {
        return Err(Error::contract("affinity embedding changed the number of frames"));
    }
    let s = tape.gram(a, b)?;
    let s = scale_similarity(tape, s, a);
    Ok(tape.softmax_rows(s))
}

/// Divides the similarity by the embedding length `C_e * T`.
fn scale_similarity<T: Scalar>(tape: &mut Tape<T>, s: Var, embedded: Var) -> Var {
    let shape = tape.shape(embedded);
    let len = shape[1] * shape[2];
    tape.scale(s, T::of(1.0 / len as f64))
}

#[derive(Clone, Debug)]
struct EmbeddingIds {
    weight: ParamId,
    bias: ParamId,
}

impl EmbeddingIds {
    fn new(store: &mut ParamStore, rng: &mut Rng, name: &str, c_in: usize, c_e: usize, kind: EmbedKind) -> Result<Self> {
        let kernel = match kind {
            EmbedKind::Pointwise => 1,
            EmbedKind::Temporal9 => TEMPORAL_EMBED_KERNEL,
        };
        let conv = Conv::new(store, rng, name, c_in, c_e, kernel, ConvSpec::same(1, 1), true)?;
        Ok(Self { weight: conv.weight, bias: conv.bias.expect("embedding has a bias") })
    }

    fn bind<T: Scalar>(&self, sess: &mut Session<'_, T>) -> Embedding {
        Embedding { weight: sess.param(self.weight), bias: sess.param(self.bias) }
    }
}

/// All `θ, φ` embeddings of one kind computed by a single convolution whose
/// kernel stacks the individual embedding kernels, then split per subset.
fn fused_affinities<T: Scalar>(
    sess: &mut Session<'_, T>,
    x: Var,
    theta: &[EmbeddingIds],
    phi: &[EmbeddingIds],
    c_e: usize,
    kind: EmbedKind,
) -> Result<Vec<Var>> {
    let maps: Vec<&EmbeddingIds> = theta.iter().zip(phi).flat_map(|(t, p)| [t, p]).collect();
    let mut weights = Vec::with_capacity(maps.len());
    let mut biases = Vec::with_capacity(maps.len());
    for e in &maps {
        let e = e.bind(sess);
        let len = sess.tape.value(e.weight).len();
        weights.push(sess.tape.reshape(e.weight, &[1, len])?);
        biases.push(sess.tape.reshape(e.bias, &[1, c_e])?);
    }
    let total = maps.len() * c_e;
    let mut w_shape = sess.store().value(maps[0].weight).shape().to_vec();
    w_shape[0] = total;
    let w = sess.tape.concat_channels(&weights)?;
    let w = sess.tape.reshape(w, &w_shape)?;
    let b = sess.tape.concat_channels(&biases)?;
    let b = sess.tape.reshape(b, &[total])?;
    let z = embed(&mut sess.tape, x, Embedding { weight: w, bias: b }, kind)?;
    let mut out = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let a = sess.tape.slice_channels(z, 2 * k * c_e, c_e)?;
        let b = sess.tape.slice_channels(z, (2 * k + 1) * c_e, c_e)?;
        let s = sess.tape.gram(a, b)?;
        let s = scale_similarity(&mut sess.tape, s, a);
        out.push(sess.tape.softmax_rows(s));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SpatialLayer {
    pub variant: SpatialVariant,
    pub c_in: usize,
    pub c_out: usize,
    pub c_e: usize,
    adjacency: Vec<Tensor<f64>>,
    w: Vec<ParamId>,
    m: Vec<ParamId>,
    b: Vec<ParamId>,
    theta: Vec<EmbeddingIds>,
    phi: Vec<EmbeddingIds>,
    theta_t: Vec<EmbeddingIds>,
    phi_t: Vec<EmbeddingIds>,
    bn: BatchNorm,
    down: Option<Projection>,
}

impl SpatialLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut Rng,
        prefix: &str,
        variant: SpatialVariant,
        adjacency: &PartitionedAdjacency,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        let n = adjacency.joint_count();
        let c_e = embed_channels(c_out);
        let mut layer = SpatialLayer {
            variant,
            c_in,
            c_out,
            c_e,
            adjacency: adjacency.subsets.clone(),
            w: Vec::new(),
            m: Vec::new(),
            b: Vec::new(),
            theta: Vec::new(),
            phi: Vec::new(),
            theta_t: Vec::new(),
            phi_t: Vec::new(),
            bn: BatchNorm::new(store, &format!("{prefix}.bn"), c_out)?,
            down: None,
        };
        for k in 0..K_V {
            let w = crate::nn::he_uniform(rng, &[c_out, c_in], c_in);
            layer.w.push(store.weight(format!("{prefix}.W.{k}"), w)?);
            match variant {
                SpatialVariant::Stgc => layer.m.push(store.weight(format!("{prefix}.M.{k}"), Tensor::full(&[n, n], 1.0))?),
                SpatialVariant::Agc | SpatialVariant::TcAgc => {
                    layer.b.push(store.weight(format!("{prefix}.B.{k}"), Tensor::zeros(&[n, n]))?);
                    layer.theta.push(EmbeddingIds::new(store, rng, &format!("{prefix}.theta.{k}"), c_in, c_e, EmbedKind::Pointwise)?);
                    layer.phi.push(EmbeddingIds::new(store, rng, &format!("{prefix}.phi.{k}"), c_in, c_e, EmbedKind::Pointwise)?);
                }
            }
            if variant == SpatialVariant::TcAgc {
                layer.theta_t.push(EmbeddingIds::new(store, rng, &format!("{prefix}.theta_t.{k}"), c_in, c_e, EmbedKind::Temporal9)?);
                layer.phi_t.push(EmbeddingIds::new(store, rng, &format!("{prefix}.phi_t.{k}"), c_in, c_e, EmbedKind::Temporal9)?);
            }
        }
        if c_in != c_out {
            layer.down = Some(Projection::new(store, rng, &format!("{prefix}.down"), c_in, c_out, 1)?);
        }
        Ok(layer)
    }

    pub fn joint_count(&self) -> usize {
        self.adjacency[0].shape()[0]
    }

    /// `C_k` affinity of subset `k` for input `x`.
    pub fn affinity<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, k: usize, kind: EmbedKind) -> Result<Var> {
        let (theta, phi) = match kind {
            EmbedKind::Pointwise => (&self.theta, &self.phi),
            EmbedKind::Temporal9 => (&self.theta_t, &self.phi_t),
        };
        if theta.is_empty() {
            return Err(Error::contract(format!("{} layers have no {kind:?} affinity", self.variant)));
        }
        let (t, p) = (theta[k].bind(sess), phi[k].bind(sess));
        compute_affinity(&mut sess.tape, x, t, p, kind)
    }

    /// Mixing matrices of every subset: `[N, N]` for ST-GC, `[B, N, N]` otherwise.
    pub fn mixing_matrices<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, with_temporal: bool) -> Result<Vec<Var>> {
        let (c, d) = match self.variant {
            SpatialVariant::Stgc => (Vec::new(), Vec::new()),
            SpatialVariant::Agc | SpatialVariant::TcAgc => {
                let c = fused_affinities(sess, x, &self.theta, &self.phi, self.c_e, EmbedKind::Pointwise)?;
                let d = if self.variant == SpatialVariant::TcAgc && with_temporal {
                    fused_affinities(sess, x, &self.theta_t, &self.phi_t, self.c_e, EmbedKind::Temporal9)?
                } else {
                    Vec::new()
                };
                (c, d)
            }
        };
        let mut mixes = Vec::with_capacity(K_V);
        for k in 0..K_V {
            let a = sess.tape.constant(self.adjacency[k].cast());
            let mix = match self.variant {
                SpatialVariant::Stgc => {
                    let m = sess.param(self.m[k]);
                    sess.tape.mul(a, m)?
                }
                SpatialVariant::Agc | SpatialVariant::TcAgc => {
                    let b = sess.param(self.b[k]);
                    let ab = sess.tape.add(a, b)?;
                    let mix = sess.tape.add_broadcast(c[k], ab)?;
                    match d.get(k) {
                        Some(&dk) => sess.tape.add(mix, dk)?,
                        None => mix,
                    }
                }
            };
            mixes.push(mix);
        }
        Ok(mixes)
    }

    /// The bare graph convolution `Σ_k W_k · aggregate(x, mix_k)` without
    /// normalisation, residual or activation. `with_temporal = false` drops the
    /// `D_k` term of TC-AGC.
    pub fn graph_conv<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var, with_temporal: bool) -> Result<Var> {
        let sx = sess.tape.shape(x).to_vec();
        if sx.len() != 4 || sx[3] != self.joint_count() {
            return Err(Error::dim(format!(
                "spatial layer over {} joints got input {sx:?}",
                self.joint_count()
            )));
        }
        if sx[1] != self.c_in {
            return Err(Error::dim(format!("spatial layer expects {} channels, got {}", self.c_in, sx[1])));
        }
        let mixes = self.mixing_matrices(sess, x, with_temporal)?;
        let mut gathered = Vec::with_capacity(K_V);
        let mut weights = Vec::with_capacity(K_V);
        for (k, mix) in mixes.into_iter().enumerate() {
            gathered.push(sess.tape.joint_aggregate(x, mix)?);
            weights.push(sess.param(self.w[k]));
        }
        // One channel-mixing product over the stacked subsets.
        let stacked = sess.tape.concat_channels(&gathered)?;
        let w = sess.tape.concat_channels(&weights)?;
        sess.tape.pointwise(stacked, w, None)
    }

    /// `relu(BN(graph_conv(x)) + residual(x))`.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let y = self.graph_conv(sess, x, true)?;
        let y = self.bn.forward(sess, y)?;
        let res = match &self.down {
            Some(p) => p.forward(sess, x)?,
            None => x,
        };
        let sum = sess.tape.add(y, res)?;
        Ok(sess.tape.relu(sum))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SkeletonGraph;
    use crate::rng;

    #[test]
    fn variant_parsing() {
        assert_eq!("TC-AGC".parse::<SpatialVariant>().unwrap(), SpatialVariant::TcAgc);
        assert_eq!("st_gc".parse::<SpatialVariant>().unwrap(), SpatialVariant::Stgc);
        assert!("gcn".parse::<SpatialVariant>().is_err());
    }

    #[test]
    fn embed_channel_floor() {
        assert_eq!(embed_channels(8), 4);
        assert_eq!(embed_channels(64), 16);
        assert_eq!(embed_channels(256), 64);
    }

    #[test]
    fn zero_input_gives_zero_graph_conv() {
        let g = SkeletonGraph::custom(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], 2).unwrap();
        let adj = PartitionedAdjacency::build(&g);
        for variant in [SpatialVariant::Stgc, SpatialVariant::Agc, SpatialVariant::TcAgc] {
            let mut store = ParamStore::new();
            let layer = SpatialLayer::new(&mut store, &mut rng::stream(1, rng::INIT, 0), "s", variant, &adj, 3, 8).unwrap();
            let mut sess = Session::new(&store, false);
            let x = sess.tape.constant(Tensor::zeros(&[2, 3, 6, 5]));
            let y = layer.graph_conv(&mut sess, x, true).unwrap();
            assert_eq!(sess.tape.shape(y), &[2, 8, 6, 5]);
            assert!(sess.tape.value(y).data().iter().all(|&v| v == 0.0));
        }
    }
}
