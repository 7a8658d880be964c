//! Parameter counts and shape contracts of the full ten-block network.

use skefi::graph::{build_skeleton_graph, Layout};
use skefi::network::{Network, NetworkConfig, DEFAULT_STRIDES, DEFAULT_WIDTHS};
use skefi::spatial::SpatialVariant;
use skefi::temporal::TemporalVariant;
use skefi::tensor::Tensor;

/// Layer-by-layer weight count of an ST-GC + SST network written out from the
/// documented shapes: three `[C_out, C_in]` W_k and three `[N, N]` M_k per
/// spatial layer, a batch norm after it, a 1x1 projection with bias and batch
/// norm when widths change, then a biased 9x1 temporal convolution and its
/// batch norm.
fn stgc_sst_oracle(widths: &[usize], c0: usize, n: usize, persons: usize, classes: usize) -> usize {
    let bn = |c: usize| 2 * c;
    let mut total = bn(c0 * n * persons);
    let mut c_in = c0;
    for &c in widths {
        total += 3 * c * c_in + 3 * n * n + bn(c);
        if c_in != c {
            total += c * c_in + c + bn(c);
        }
        total += c * c * 9 + c + bn(c);
        c_in = c;
    }
    total + c_in * classes + classes
}

#[test]
fn stgc_sst_parameter_count_matches_oracle() {
    let g = build_skeleton_graph(Layout::Kinetics18);
    for (classes, persons) in [(27, 1), (400, 2)] {
        let cfg = NetworkConfig { persons, ..NetworkConfig::canonical(SpatialVariant::Stgc, TemporalVariant::Sst, classes) };
        let net = Network::build(&cfg, &g, 0).unwrap();
        assert_eq!(net.parameter_count(), stgc_sst_oracle(&DEFAULT_WIDTHS, 3, 18, persons, classes));
    }
}

#[test]
fn default_config_forward_shape() {
    let g = build_skeleton_graph(Layout::Kinetics18);
    let net = Network::build(&NetworkConfig::canonical(SpatialVariant::TcAgc, TemporalVariant::EspMst, 27), &g, 1).unwrap();
    assert_eq!(net.config.block_strides, DEFAULT_STRIDES);
    assert_eq!(net.output_frames(40), 10);
    let mut r = skefi::rng::stream(0, "test", 0);
    let x = Tensor::from_fn(&net.input_shape(1, 40), |_| rand::Rng::random_range(&mut r, -1.0f32..1.0));
    let logits = net.infer(&x).unwrap();
    assert_eq!(logits.shape(), &[1, 27]);
    assert!(logits.is_finite());
}

#[test]
fn esp_fusion_changes_neither_count_nor_shape() {
    let g = build_skeleton_graph(Layout::Kinetics18);
    for spatial in [SpatialVariant::Stgc, SpatialVariant::Agc, SpatialVariant::TcAgc] {
        let mst = Network::build(&NetworkConfig::canonical(spatial, TemporalVariant::Mst, 10), &g, 0).unwrap();
        let esp = Network::build(&NetworkConfig::canonical(spatial, TemporalVariant::EspMst, 10), &g, 0).unwrap();
        assert_eq!(mst.parameter_count(), esp.parameter_count());
        let names = |n: &Network| n.store.iter().map(|(_, p)| (p.name.clone(), p.value.shape().to_vec())).collect::<Vec<_>>();
        assert_eq!(names(&mst), names(&esp));
    }
}
