//! Finite-difference gradient checks over every layer type, used by the
//! `gradcheck` subcommand.

use rand::Rng as _;

use crate::error::Result;
use crate::graph::{PartitionedAdjacency, SkeletonGraph};
use crate::network::{Network, NetworkConfig};
use crate::nn::{lecun_uniform, BatchNorm};
use crate::rng;
use crate::spatial::{SpatialLayer, SpatialVariant};
use crate::temporal::{TemporalLayer, TemporalVariant};
use crate::tensor::{gradient_check_params, GradCheckReport, ParamStore, Session, Tensor, Var};

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

const JOINTS: usize = 5;
const FRAMES: usize = 8;
const CHANNELS: usize = 8;
const COORDS_PER_PARAM: usize = 32;

/// Five joints in a chain, centred on the middle joint.
pub fn chain_graph() -> SkeletonGraph {
    SkeletonGraph::custom(JOINTS, &[(0, 1), (1, 2), (2, 3), (3, 4)], 2).expect("valid chain")
}

fn uniform(shape: &[usize], seed: u64, tag: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, "gradcheck", tag);
    Tensor::from_fn(shape, |_| r.random_range(-1.0f32..1.0))
}

/// Replaces every parameter whose name contains `fragment` with small random
/// values, so zero- or one-initialised terms are probed at a generic point.
fn randomize(store: &mut ParamStore, fragment: &str, seed: u64) {
    for (i, p) in store.iter_mut().enumerate() {
        if p.name.contains(fragment) {
            let shape = p.value.shape().to_vec();
            p.value = uniform(&shape, seed, 1000 + i as u64);
            p.value.data_mut().iter_mut().for_each(|v| *v *= 0.3);
        }
    }
}

/// Checks `loss(forward(input))` against finite differences with respect to
/// every weight in `store` and the input.
fn check(
    mut store: ParamStore,
    input: Tensor<f32>,
    max_coords: usize,
    loss: impl Fn(&mut Session<'_, f64>, Var) -> Result<Var>,
) -> Result<GradCheckReport> {
    let x = store.weight("input", input)?;
    let store = store.cast::<f64>();
    gradient_check_params(
        &store,
        |sess| {
            let xv = sess.param(x);
            loss(sess, xv)
        },
        GRADCHECK_STEP,
        max_coords,
    )
}

fn weighted_sum(sess: &mut Session<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = sess.tape.shape(y).to_vec();
    let w = sess.tape.constant(uniform(&shape, seed, 7).cast());
    let p = sess.tape.mul(y, w)?;
    Ok(sess.tape.sum(p))
}

/// One report per layer type: the three spatial variants, the three temporal
/// variants at stride 2, batch norm, the classifier, and a two-block network
/// under cross-entropy.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let graph = chain_graph();
    let adjacency = PartitionedAdjacency::build(&graph);
    let mut out = Vec::new();

    for variant in [SpatialVariant::Stgc, SpatialVariant::Agc, SpatialVariant::TcAgc] {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, rng::INIT, 0);
        let layer = SpatialLayer::new(&mut store, &mut r, "s", variant, &adjacency, 3, CHANNELS)?;
        randomize(&mut store, ".B.", seed);
        randomize(&mut store, ".M.", seed);
        let input = uniform(&[2, 3, FRAMES, JOINTS], seed, 1);
        let report = check(store, input, COORDS_PER_PARAM, |sess, x| {
            let y = layer.forward(sess, x)?;
            weighted_sum(sess, y, seed)
        })?;
        out.push((variant.name().to_string(), report));
    }

    for variant in [TemporalVariant::Sst, TemporalVariant::Mst, TemporalVariant::EspMst] {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, rng::INIT, 0);
        let layer = TemporalLayer::new(&mut store, &mut r, "t", variant, CHANNELS, CHANNELS, 2)?;
        let input = uniform(&[2, CHANNELS, FRAMES, JOINTS], seed, 2);
        let report = check(store, input, COORDS_PER_PARAM, |sess, x| {
            let y = layer.forward(sess, x)?;
            weighted_sum(sess, y, seed)
        })?;
        out.push((variant.name().to_string(), report));
    }

    let mut store = ParamStore::new();
    let bn = BatchNorm::new(&mut store, "bn", 4)?;
    randomize(&mut store, "bn.", seed);
    let report = check(store, uniform(&[2, 4, FRAMES, JOINTS], seed, 3), COORDS_PER_PARAM, |sess, x| {
        let y = bn.forward(sess, x)?;
        weighted_sum(sess, y, seed)
    })?;
    out.push(("batchnorm".to_string(), report));

    let mut store = ParamStore::new();
    let mut r = rng::stream(seed, rng::INIT, 1);
    let w = store.weight("fc.weight", lecun_uniform(&mut r, &[CHANNELS, 4], CHANNELS))?;
    let b = store.weight("fc.bias", uniform(&[4], seed, 4))?;
    let report = check(store, uniform(&[3, CHANNELS], seed, 5), COORDS_PER_PARAM, |sess, x| {
        let (wv, bv) = (sess.param(w), sess.param(b));
        let logits = sess.tape.matmul(x, wv)?;
        let logits = sess.tape.add_broadcast(logits, bv)?;
        sess.tape.cross_entropy(logits, &[0, 3, 1])
    })?;
    out.push(("classifier".to_string(), report));

    let config = NetworkConfig {
        block_channels: vec![CHANNELS, CHANNELS],
        block_strides: vec![1, 2],
        ..NetworkConfig::canonical(SpatialVariant::TcAgc, TemporalVariant::EspMst, 4)
    };
    let mut net = Network::build_reduced(&config, &graph, seed)?;
    randomize(&mut net.store, ".B.", seed);
    randomize(&mut net.store, "fc.bias", seed);
    let input = uniform(&[2, 3, FRAMES, JOINTS, 1], seed, 6);
    let store = std::mem::take(&mut net.store);
    let report = check(store, input, 12, |sess, x| {
        let logits = net.forward(sess, x)?;
        sess.tape.cross_entropy(logits, &[1, 3])
    })?;
    out.push(("network-2block".to_string(), report));
    Ok(out)
}
