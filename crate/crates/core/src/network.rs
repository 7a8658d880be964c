//! The ten-block spatial/temporal network with input normalisation and a
//! linear classifier.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{PartitionedAdjacency, SkeletonGraph};
use crate::nn::{lecun_uniform, BatchNorm};
use crate::rng::{self, Rng};
use crate::spatial::{SpatialLayer, SpatialVariant};
use crate::temporal::{TemporalLayer, TemporalVariant};
use crate::tensor::{ParamId, ParamStore, Scalar, Session, Tensor, Var};

pub const BLOCK_COUNT: usize = 10;
pub const DEFAULT_WIDTHS: [usize; BLOCK_COUNT] = [64, 64, 64, 64, 128, 128, 128, 256, 256, 256];
pub const DEFAULT_STRIDES: [usize; BLOCK_COUNT] = [1, 1, 1, 1, 2, 1, 1, 2, 1, 1];
/// Quarter-width schedule used for CPU-scale experiments.
pub const DESK_WIDTHS: [usize; BLOCK_COUNT] = [16, 16, 16, 16, 32, 32, 32, 64, 64, 64];

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub spatial: SpatialVariant,
    pub temporal: TemporalVariant,
    pub block_channels: Vec<usize>,
    pub block_strides: Vec<usize>,
    pub in_channels: usize,
    pub persons: usize,
    pub class_count: usize,
}

impl NetworkConfig {
    pub fn canonical(spatial: SpatialVariant, temporal: TemporalVariant, class_count: usize) -> Self {
        Self {
            spatial,
            temporal,
            block_channels: DEFAULT_WIDTHS.to_vec(),
            block_strides: DEFAULT_STRIDES.to_vec(),
            in_channels: 3,
            persons: 1,
            class_count,
        }
    }

    pub fn desk(spatial: SpatialVariant, temporal: TemporalVariant, class_count: usize) -> Self {
        Self { block_channels: DESK_WIDTHS.to_vec(), ..Self::canonical(spatial, temporal, class_count) }
    }

    pub fn depth(&self) -> usize {
        self.block_channels.len()
    }

    pub fn final_channels(&self) -> usize {
        *self.block_channels.last().expect("at least one block")
    }

    fn validate(&self, reduced: bool) -> Result<()> {
        if self.block_channels.len() != self.block_strides.len() {
            return Err(Error::config("block_channels and block_strides differ in length"));
        }
        if self.block_channels.is_empty() || (!reduced && self.block_channels.len() != BLOCK_COUNT) {
            return Err(Error::config(format!(
                "the network has exactly {BLOCK_COUNT} blocks, got {}",
                self.block_channels.len()
            )));
        }
        if self.block_channels.contains(&0) || self.block_strides.contains(&0) {
            return Err(Error::config("block widths and strides must be positive"));
        }
        if self.temporal.is_multi_scale() {
            if let Some(c) = self.block_channels.iter().find(|&&c| c % 4 != 0) {
                return Err(Error::config(format!(
                    "{} needs block widths divisible by 4, got {c}",
                    self.temporal
                )));
            }
        }
        if self.in_channels == 0 || self.persons == 0 || self.class_count == 0 {
            return Err(Error::config("in_channels, persons and class_count must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over everything that determines parameter names and shapes,
    /// except the class count.
    pub fn fingerprint(&self, graph: &SkeletonGraph) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut put = |v: u64| h.update(v.to_le_bytes());
        put(self.spatial as u64);
        put(self.temporal as u64);
        put(self.block_channels.len() as u64);
        self.block_channels.iter().for_each(|&c| put(c as u64));
        self.block_strides.iter().for_each(|&s| put(s as u64));
        put(self.in_channels as u64);
        put(self.persons as u64);
        put(graph.joint_count as u64);
        put(graph.center as u64);
        put(graph.edges.len() as u64);
        for &(a, b) in &graph.edges {
            put(a as u64);
            put(b as u64);
        }
        h.finalize().into()
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub spatial: SpatialLayer,
    pub temporal: TemporalLayer,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub config: NetworkConfig,
    pub graph: SkeletonGraph,
    pub store: ParamStore,
    input_bn: BatchNorm,
    pub blocks: Vec<Block>,
    fc_weight: ParamId,
    fc_bias: ParamId,
}

/// Parameter-name prefix of block `i` (1-based).
pub fn block_prefix(i: usize) -> String {
    format!("block{i}.")
}

impl Network {
    /// Full ten-block network. Initialisation draws from the `init` stream of `seed`.
    pub fn build(config: &NetworkConfig, graph: &SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate(false)?;
        Self::assemble(config, graph, seed)
    }

    /// Same construction with any positive block count, for small test builds.
    pub fn build_reduced(config: &NetworkConfig, graph: &SkeletonGraph, seed: u64) -> Result<Self> {
        config.validate(true)?;
        Self::assemble(config, graph, seed)
    }

    fn assemble(config: &NetworkConfig, graph: &SkeletonGraph, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, rng::INIT, 0);
        let mut store = ParamStore::new();
        let adjacency = PartitionedAdjacency::build(graph);
        let n = graph.joint_count;
        let input_bn = BatchNorm::new(&mut store, "input_bn", config.in_channels * n * config.persons)?;
        let mut blocks = Vec::with_capacity(config.depth());
        let mut c_in = config.in_channels;
        for (i, (&c_out, &stride)) in config.block_channels.iter().zip(&config.block_strides).enumerate() {
            let p = format!("block{}", i + 1);
            let spatial = SpatialLayer::new(&mut store, &mut rng, &format!("{p}.spatial"), config.spatial, &adjacency, c_in, c_out)?;
            let temporal =
                TemporalLayer::new(&mut store, &mut rng, &format!("{p}.temporal"), config.temporal, c_out, c_out, stride)?;
            blocks.push(Block { spatial, temporal });
            c_in = c_out;
        }
        let (w, b) = classifier_init(&mut rng, config.final_channels(), config.class_count);
        let fc_weight = store.weight("fc.weight", w)?;
        let fc_bias = store.weight("fc.bias", b)?;
        Ok(Self { config: config.clone(), graph: graph.clone(), store, input_bn, blocks, fc_weight, fc_bias })
    }

    pub fn fingerprint(&self) -> [u8; 32] {
        self.config.fingerprint(&self.graph)
    }

    pub fn parameter_count(&self) -> usize {
        self.store.weight_count()
    }

    pub fn fc_ids(&self) -> (ParamId, ParamId) {
        (self.fc_weight, self.fc_bias)
    }

    /// Re-initialises the classifier for `class_count` outputs from stream
    /// `init/1` of `seed`, leaving the backbone untouched.
    pub fn replace_classifier(&mut self, class_count: usize, seed: u64) -> Result<()> {
        if class_count == 0 {
            return Err(Error::config("class_count must be positive"));
        }
        let mut rng = rng::stream(seed, rng::INIT, 1);
        let (w, b) = classifier_init(&mut rng, self.config.final_channels(), class_count);
        self.store.get_mut(self.fc_weight).value = w;
        self.store.get_mut(self.fc_bias).value = b;
        self.config.class_count = class_count;
        Ok(())
    }

    /// Expected input shape `[B, C, T, N, M]` for a given batch and frame count.
    pub fn input_shape(&self, batch: usize, frames: usize) -> [usize; 5] {
        [batch, self.config.in_channels, frames, self.graph.joint_count, self.config.persons]
    }

    /// Logits `[B, K]` for input `[B, C, T, N, M]`. Parameters are read from
    /// the session's store, which must have this network's layout.
    pub fn forward<T: Scalar>(&self, sess: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let sx = sess.tape.shape(x).to_vec();
        let (c, n, m) = (self.config.in_channels, self.graph.joint_count, self.config.persons);
        if sx.len() != 5 || sx[1] != c || sx[3] != n || sx[4] != m {
            return Err(Error::dim(format!("network expects input [B, {c}, T, {n}, {m}], got {sx:?}")));
        }
        let (b, t) = (sx[0], sx[2]);
        // [B, C, T, N, M] -> [B, M, N, C, T] so the norm sees M*N*C feature channels
        let y = sess.tape.permute(x, &[0, 4, 3, 1, 2])?;
        let y = sess.tape.reshape(y, &[b, m * n * c, t])?;
        let y = self.input_bn.forward(sess, y)?;
        let y = sess.tape.reshape(y, &[b, m, n, c, t])?;
        let y = sess.tape.permute(y, &[0, 1, 3, 4, 2])?;
        let mut y = sess.tape.reshape(y, &[b * m, c, t, n])?;
        for block in &self.blocks {
            y = block.spatial.forward(sess, y)?;
            y = block.temporal.forward(sess, y)?;
        }
        let pooled = sess.tape.global_avg_pool(y, m)?;
        let w = sess.param(self.fc_weight);
        let bias = sess.param(self.fc_bias);
        let logits = sess.tape.matmul(pooled, w)?;
        sess.tape.add_broadcast(logits, bias)
    }

    /// Inference-mode logits.
    pub fn infer(&self, input: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut sess = Session::new(&self.store, false);
        let x = sess.tape.constant(input.clone());
        let y = self.forward(&mut sess, x)?;
        Ok(sess.tape.value(y).clone())
    }

    /// Frame count after the last block for an input of `t` frames.
    pub fn output_frames(&self, t: usize) -> usize {
        self.config.block_strides.iter().fold(t, |t, &s| t.div_ceil(s))
    }
}

fn classifier_init(rng: &mut Rng, c_final: usize, classes: usize) -> (Tensor<f32>, Tensor<f32>) {
    (lecun_uniform(rng, &[c_final, classes], c_final), Tensor::zeros(&[classes]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_skeleton_graph, Layout};

    fn tiny(spatial: SpatialVariant, temporal: TemporalVariant) -> NetworkConfig {
        NetworkConfig {
            block_channels: vec![8, 8],
            block_strides: vec![1, 2],
            ..NetworkConfig::canonical(spatial, temporal, 4)
        }
    }

    #[test]
    fn canonical_requires_ten_blocks() {
        let g = build_skeleton_graph(Layout::Kinetics18);
        let cfg = tiny(SpatialVariant::Stgc, TemporalVariant::Sst);
        assert!(matches!(Network::build(&cfg, &g, 0), Err(Error::Config(_))));
        assert!(Network::build_reduced(&cfg, &g, 0).is_ok());
    }

    #[test]
    fn multi_scale_needs_divisible_widths() {
        let g = build_skeleton_graph(Layout::Kinetics18);
        let mut cfg = tiny(SpatialVariant::Agc, TemporalVariant::Mst);
        cfg.block_channels = vec![8, 10];
        assert!(matches!(Network::build_reduced(&cfg, &g, 0), Err(Error::Config(_))));
    }

    #[test]
    fn logits_shape_and_zero_input() {
        let g = build_skeleton_graph(Layout::Kinetics18);
        let net = Network::build_reduced(&tiny(SpatialVariant::TcAgc, TemporalVariant::EspMst), &g, 5).unwrap();
        let x = Tensor::zeros(&net.input_shape(2, 8));
        let logits = net.infer(&x).unwrap();
        assert_eq!(logits.shape(), &[2, 4]);
        let bias = net.store.value(net.fc_ids().1);
        for row in logits.data().chunks(4) {
            assert_eq!(row, bias.data());
        }
        assert_eq!(net.output_frames(40), 20);
    }

    #[test]
    fn wrong_joint_count_is_dimension_error() {
        let g = build_skeleton_graph(Layout::Kinetics18);
        let net = Network::build_reduced(&tiny(SpatialVariant::Stgc, TemporalVariant::Sst), &g, 5).unwrap();
        let x = Tensor::zeros(&[1, 3, 8, 17, 1]);
        assert!(matches!(net.infer(&x), Err(Error::Dimension(_))));
    }

    #[test]
    fn deterministic_init() {
        let g = build_skeleton_graph(Layout::Kinetics18);
        let cfg = tiny(SpatialVariant::TcAgc, TemporalVariant::Mst);
        let a = Network::build_reduced(&cfg, &g, 9).unwrap();
        let b = Network::build_reduced(&cfg, &g, 9).unwrap();
        for ((_, p), (_, q)) in a.store.iter().zip(b.store.iter()) {
            assert_eq!(p.name, q.name);
            assert!(p.value.bit_eq(&q.value));
        }
    }
}
