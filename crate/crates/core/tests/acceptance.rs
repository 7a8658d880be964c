//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! failure status if any criterion fails.
//!
//! Run a subset with `cargo test --test acceptance -- 3 7`.

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skefi::data::{
    load_dataset, mirror_clip, mmfi_preprocess, pad_frames, save_dataset, segment_and_mirror, synth_generate,
    SkeletonDataset, SynthConfig,
};
use skefi::diagnostics::gradcheck_suite;
use skefi::graph::{build_skeleton_graph, Layout, PartitionedAdjacency, EPSILON, K_V};
use skefi::network::{Network, NetworkConfig, DEFAULT_WIDTHS};
use skefi::spatial::{EmbedKind, SpatialLayer, SpatialVariant};
use skefi::temporal::TemporalVariant;
use skefi::tensor::{ParamKind, ParamStore, Session, Tensor};
use skefi::training::{
    evaluate_topk, load_checkpoint, save_checkpoint, train, transfer_setup, Checkpoint, TrainConfig, TrainMode,
};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fmt_duration(d: Duration) -> String {
    let s = d.as_secs_f64();
    if s < 60.0 {
        format!("{s:.1}s")
    } else {
        format!("{}m{:02}s", (s / 60.0) as u64, (s % 60.0) as u64)
    }
}

/// Runs one criterion, prints its line and returns whether it passed. A
/// panic or an exceeded runtime budget counts as a failure.
fn criterion(id: usize, title: &str, budget: Duration, body: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let took = start.elapsed();
    let within = took <= budget;
    let (pass, detail) = match result {
        Ok(d) => (within, d),
        Err(d) => (false, d),
    };
    let time = format!("{} of {} budget", fmt_duration(took), fmt_duration(budget));
    let time = if within { time } else { format!("{time}, over budget") };
    println!("[{}] {id:>2}. {title}: {detail} ({time})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn graph18() -> skefi::graph::SkeletonGraph {
    build_skeleton_graph(Layout::Kinetics18)
}

fn desk(spatial: SpatialVariant, temporal: TemporalVariant, classes: usize) -> NetworkConfig {
    NetworkConfig::desk(spatial, temporal, classes)
}

fn synth(classes: usize, per_class: usize, seed: u64, sigma: f64, drop_prob: f64) -> SkeletonDataset {
    synth_generate(&SynthConfig { class_count: classes, samples_per_class: per_class, sigma, drop_prob, seed, ..Default::default() })
        .expect("valid synth config")
}

fn schedule(lr: f64, milestones: Vec<usize>, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { base_lr: lr, milestones, batch_size: 16, max_epochs: epochs, seed, ..TrainConfig::pretrain() }
}

// 1 ----------------------------------------------------------------------

fn gradient_oracle() -> Verdict {
    let mut worst = (0.0f64, String::new());
    let mut layers = Vec::new();
    for seed in [0, 1] {
        for (name, r) in gradcheck_suite(seed).map_err(|e| e.to_string())? {
            if r.coordinates == 0 {
                return Err(format!("{name} probed no coordinates"));
            }
            if r.max_rel_error >= worst.0 {
                worst = (r.max_rel_error, name.clone());
            }
            if !layers.contains(&name) {
                layers.push(name);
            }
        }
    }
    check(
        worst.0 < 1e-4,
        format!("max relative error {:.2e} ({}) over {} < 1e-4", worst.0, worst.1, layers.join(", ")),
    )
}

// 2 ----------------------------------------------------------------------

/// OpenPose-18 tree written out independently of the library tables.
const OPENPOSE18: [(usize, usize); 17] = [
    (1, 0), (1, 2), (2, 3), (3, 4), (1, 5), (5, 6), (6, 7), (2, 8), (8, 9),
    (9, 10), (5, 11), (11, 12), (12, 13), (0, 14), (14, 16), (0, 15), (15, 17),
];

fn adjacency_oracle() -> Verdict {
    let n = 18;
    let center = 1;
    let mut adj = vec![vec![false; n]; n];
    for &(a, b) in &OPENPOSE18 {
        adj[a][b] = true;
        adj[b][a] = true;
    }
    // hop distances by repeated relaxation
    let mut hop = vec![usize::MAX; n];
    hop[center] = 0;
    for _ in 0..n {
        for i in 0..n {
            for j in 0..n {
                if adj[i][j] && hop[j] != usize::MAX {
                    hop[i] = hop[i].min(hop[j] + 1);
                }
            }
        }
    }
    let mut bars = vec![vec![vec![0u64; n]; n]; K_V];
    for i in 0..n {
        bars[0][i][i] = 1;
        for j in 0..n {
            if adj[i][j] {
                bars[if hop[j] <= hop[i] { 1 } else { 2 }][i][j] = 1;
            }
        }
    }
    // Λ_ii = d_i + 1/1000, so A_ij = 1000 a_ij / sqrt((1000 d_i + 1)(1000 d_j + 1)) with an exact integer radicand
    let scale = (1.0 / EPSILON).round() as u64;
    let built = PartitionedAdjacency::build(&graph18());
    let mut max_err = 0.0f64;
    for (k, bar) in bars.iter().enumerate() {
        let deg: Vec<u64> = bar.iter().map(|r| r.iter().sum()).collect();
        for i in 0..n {
            for j in 0..n {
                let radicand = (scale * deg[i] + 1) * (scale * deg[j] + 1);
                let expect = (bar[i][j] * scale) as f64 / (radicand as f64).sqrt();
                let got = built.subsets[k].at(&[i, j]);
                if bar[i][j] == 0 && got != 0.0 {
                    return Err(format!("A_{k}[{i},{j}] = {got} where the partition is empty"));
                }
                max_err = max_err.max((got - expect).abs());
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            let count: u64 = bars.iter().map(|b| b[i][j]).sum();
            let want = u64::from(i == j || adj[i][j]);
            let have = built.subsets.iter().filter(|s| s.at(&[i, j]) != 0.0).count() as u64;
            if count != want || have != want {
                return Err(format!("support at ({i},{j}): oracle {count}, library {have}, expected {want}"));
            }
        }
    }
    check(max_err <= 1e-9, format!("max |A_k - oracle| {max_err:.1e} <= 1e-9; subsets disjoint, union = adjacency + I"))
}

// 3 ----------------------------------------------------------------------

fn affinity_normalization() -> Verdict {
    let adjacency = PartitionedAdjacency::build(&graph18());
    let mut store = ParamStore::new();
    let mut r = skefi::rng::stream(3, skefi::rng::INIT, 0);
    let layer = SpatialLayer::new(&mut store, &mut r, "s", SpatialVariant::TcAgc, &adjacency, 3, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut max_dev = 0.0f64;
    for trial in 0..100 {
        let scale = [0.1f32, 1.0, 5.0][trial % 3];
        let x = Tensor::from_fn(&[2, 3, 8, 18], |_| rng.random_range(-scale..scale));
        let mut sess = Session::new(&store, false);
        let xv = sess.tape.constant(x);
        for kind in [EmbedKind::Pointwise, EmbedKind::Temporal9] {
            for k in 0..K_V {
                let a = layer.affinity(&mut sess, xv, k, kind).unwrap();
                for row in sess.tape.value(a).data().chunks(18) {
                    let s: f64 = row.iter().map(|&v| v as f64).sum();
                    max_dev = max_dev.max((s - 1.0).abs());
                }
            }
        }
    }
    for p in store.iter_mut() {
        if [".theta.", ".phi.", ".theta_t.", ".phi_t."].iter().any(|f| p.name.contains(f)) {
            p.value.data_mut().fill(0.0);
        }
    }
    let mut sess = Session::new(&store, false);
    let xv = sess.tape.constant(Tensor::from_fn(&[2, 3, 8, 18], |_| rng.random_range(-1.0f32..1.0)));
    let mut max_uniform = 0.0f64;
    for kind in [EmbedKind::Pointwise, EmbedKind::Temporal9] {
        for k in 0..K_V {
            let a = layer.affinity(&mut sess, xv, k, kind).unwrap();
            for &v in sess.tape.value(a).data() {
                max_uniform = max_uniform.max((v as f64 - 1.0 / 18.0).abs());
            }
        }
    }
    check(
        max_dev <= 1e-6 && max_uniform <= 1e-7,
        format!("max |row sum - 1| {max_dev:.1e} <= 1e-6 over 100 inputs; zero embeddings max |a - 1/N| {max_uniform:.1e} <= 1e-7"),
    )
}

// 4 ----------------------------------------------------------------------

/// Parameters added by the temporal-correlation term: per block and subset,
/// two biased 9x1 embeddings from C_in to C_e = max(C_out / 4, 4) channels.
fn temporal_embedding_oracle(widths: &[usize], c0: usize) -> usize {
    let mut c_in = c0;
    let mut total = 0;
    for &c in widths {
        let c_e = (c / 4).max(4);
        total += K_V * 2 * (c_e * c_in * 9 + c_e);
        c_in = c;
    }
    total
}

fn parameter_counts() -> Verdict {
    let g = graph18();
    let count = |s, t| Network::build(&NetworkConfig::canonical(s, t, 400), &g, 0).unwrap().parameter_count();
    let mut notes = Vec::new();
    for s in [SpatialVariant::Stgc, SpatialVariant::Agc, SpatialVariant::TcAgc] {
        let (mst, esp) = (count(s, TemporalVariant::Mst), count(s, TemporalVariant::EspMst));
        if mst != esp {
            return Err(format!("{s}: MST {mst} != ESP-MST {esp}"));
        }
        notes.push(format!("{s} {mst}"));
    }
    let oracle = temporal_embedding_oracle(&DEFAULT_WIDTHS, 3);
    for t in [TemporalVariant::Sst, TemporalVariant::Mst, TemporalVariant::EspMst] {
        let diff = count(SpatialVariant::TcAgc, t) - count(SpatialVariant::Agc, t);
        if diff != oracle {
            return Err(format!("{t}: TC-AGC - AGC = {diff}, oracle {oracle}"));
        }
    }
    Ok(format!("MST == ESP-MST ({}); TC-AGC - AGC = {oracle} = oracle for sst, mst, espmst", notes.join(", ")))
}

// 5 ----------------------------------------------------------------------

fn freezing_contract() -> Verdict {
    let g = graph18();
    let cfg = desk(SpatialVariant::TcAgc, TemporalVariant::EspMst, 8);
    let mut source = Network::build(&cfg, &g, 50).unwrap();
    let warm = TrainConfig { max_epochs: 1, ..schedule(0.05, vec![], 1, 50) };
    train(&mut source, &synth(8, 4, 51, 0.02, 0.0), None, &warm, TrainMode::Pretrain, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("source.skck");
    save_checkpoint(&source, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    let mut net = transfer_setup(&loaded, &cfg, &g, 4, 6, 52).unwrap();
    let target = synth(4, 10, 53, 0.04, 0.2);
    let tune = TrainConfig { batch_size: 8, ..schedule(0.05, vec![], 10, 53) };
    let steps = tune.max_epochs * target.len().div_ceil(tune.batch_size);
    train(&mut net, &target, None, &tune, TrainMode::Finetune, |_| {}).unwrap();

    let block = |name: &str| -> Option<usize> { name.strip_prefix("block")?.split('.').next()?.parse().ok() };
    let (mut frozen_same, mut late_changed, mut late_stats_changed) = (0, 0, 0);
    for (_, p) in net.store.iter() {
        let Some(b) = block(&p.name) else { continue };
        let before = &loaded.entry(&p.name).unwrap().value;
        let same = p.value.bit_eq(before);
        if b <= 6 {
            if !same {
                return Err(format!("{} changed during fine-tuning", p.name));
            }
            frozen_same += 1;
        } else if !same {
            if p.kind == ParamKind::Buffer {
                late_stats_changed += 1;
            } else {
                late_changed += 1;
            }
        }
    }
    for b in 7..=10 {
        let prefix = format!("block{b}.");
        let changed = net.store.iter().any(|(_, p)| {
            p.name.starts_with(&prefix) && p.kind == ParamKind::Weight && !p.value.bit_eq(&loaded.entry(&p.name).unwrap().value)
        });
        if !changed {
            return Err(format!("block {b} did not change"));
        }
    }
    let fc = net.store.by_name("fc.weight").unwrap();
    let fresh = transfer_setup(&loaded, &cfg, &g, 4, 6, 52).unwrap();
    if fc.value.bit_eq(&fresh.store.by_name("fc.weight").unwrap().value) {
        return Err("classifier did not change".into());
    }
    Ok(format!(
        "{steps} steps: {frozen_same} block 1-6 tensors bit-identical (weights and running stats); \
         {late_changed} block 7-10 weights and {late_stats_changed} running stats changed; classifier changed"
    ))
}

// 6 ----------------------------------------------------------------------

fn overfit_probe() -> Verdict {
    let g = graph18();
    let data = synth(4, 10, 60, 0.02, 0.0);
    let mut net = Network::build(&desk(SpatialVariant::TcAgc, TemporalVariant::EspMst, 4), &g, 60).unwrap();
    let cfg = TrainConfig { batch_size: 8, weight_decay: 0.0, stop_at_top1: Some(1.0), ..schedule(0.05, vec![], 200, 60) };
    // without a validation set each epoch is scored on the training set in inference mode
    let out = train(&mut net, &data, None, &cfg, TrainMode::Scratch, |_| {}).unwrap();
    let last = out.log.last().unwrap();
    check(
        last.val_top1 == 1.0,
        if last.val_top1 == 1.0 {
            format!("100% train top-1 on 40 samples / 4 classes at epoch {} of at most 200", last.epoch + 1)
        } else {
            format!("best train top-1 {:.3} after 200 epochs", out.best_log().val_top1)
        },
    )
}

// 7 ----------------------------------------------------------------------

fn synthetic_generalization() -> Verdict {
    let g = graph18();
    let (train_ds, val_ds, test_ds) = (synth(8, 50, 700, 0.02, 0.0), synth(8, 8, 701, 0.02, 0.0), synth(8, 20, 702, 0.02, 0.0));
    let cfg = desk(SpatialVariant::TcAgc, TemporalVariant::EspMst, 8);
    let mut net = Network::build(&cfg, &g, 7).unwrap();
    let out = train(&mut net, &train_ds, Some(&val_ds), &schedule(0.05, vec![20, 25], 30, 7), TrainMode::Scratch, |_| {}).unwrap();
    let mut best = Network::build(&cfg, &g, 0).unwrap();
    out.best.apply(&mut best).unwrap();
    let acc = evaluate_topk(&best, &test_ds, &[1, 5], 64).unwrap();
    check(
        acc[0] >= 0.90,
        format!(
            "test top-1 {:.3} >= 0.90 (top-5 {:.3}; 400 train / 160 test, checkpoint from epoch {} of 30 chosen on a separate validation set)",
            acc[0],
            acc[1],
            out.best_epoch + 1
        ),
    )
}

// 8 ----------------------------------------------------------------------

fn robustness_direction() -> Verdict {
    let g = graph18();
    let mut deltas = Vec::new();
    let (mut tc_sum, mut agc_sum) = (0.0, 0.0);
    for seed in 0..5u64 {
        let train_ds = synth(8, 20, 500 + seed, 0.04, 0.2);
        let test_ds = synth(8, 20, 600 + seed, 0.04, 0.2);
        let cfg = schedule(0.05, vec![10], 15, seed);
        let mut acc = [0.0; 2];
        for (i, s) in [SpatialVariant::TcAgc, SpatialVariant::Agc].into_iter().enumerate() {
            let mut net = Network::build(&desk(s, TemporalVariant::Mst, 8), &g, seed).unwrap();
            train(&mut net, &train_ds, None, &cfg, TrainMode::Scratch, |_| {}).unwrap();
            acc[i] = evaluate_topk(&net, &test_ds, &[1], 64).unwrap()[0];
        }
        tc_sum += acc[0];
        agc_sum += acc[1];
        deltas.push(format!("{:+.1}", 100.0 * (acc[0] - acc[1])));
    }
    let (tc, agc) = (tc_sum / 5.0, agc_sum / 5.0);
    check(
        tc >= agc - 0.01,
        format!(
            "20% burst loss: mean top-1 TC-AGC+MST {:.1}% vs AGC+MST {:.1}% (>= -1.0 pp); per-seed deltas [{}] pp",
            100.0 * tc,
            100.0 * agc,
            deltas.join(", ")
        ),
    )
}

// 9 ----------------------------------------------------------------------

fn domain_b(per_class: usize, seed: u64) -> SkeletonDataset {
    synth_generate(&SynthConfig {
        class_count: 6,
        samples_per_class: per_class,
        class_offset: 8,
        sigma: 0.04,
        drop_prob: 0.2,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn transfer_benefit() -> Verdict {
    let g = graph18();
    let cfg = desk(SpatialVariant::TcAgc, TemporalVariant::EspMst, 8);
    // domain A: 8 classes at sigma 0.02, with the same burst frame loss as the target sensor
    let a_train = synth(8, 40, 100, 0.02, 0.2);
    let a_val = synth(8, 8, 101, 0.02, 0.2);
    let mut source = Network::build(&cfg, &g, 0).unwrap();
    let pre = train(&mut source, &a_train, Some(&a_val), &schedule(0.05, vec![10, 14], 16, 0), TrainMode::Pretrain, |_| {})
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pretrained.skck");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    pre.best.write(&mut w).unwrap();
    drop(w);
    let ckpt = load_checkpoint(&path).unwrap();

    let (mut t_sum, mut s_sum) = (0.0, 0.0);
    let mut rows = Vec::new();
    for seed in 0..5u64 {
        let b_train = domain_b(10, 200 + seed);
        let b_test = domain_b(20, 300 + seed);
        let budget = TrainConfig { batch_size: 16, seed, ..TrainConfig::transfer() };
        let mut transferred = transfer_setup(&ckpt, &cfg, &g, 6, 6, seed).unwrap();
        train(&mut transferred, &b_train, None, &budget, TrainMode::Finetune, |_| {}).unwrap();
        let t = evaluate_topk(&transferred, &b_test, &[1], 64).unwrap()[0];
        let mut scratch = Network::build(&NetworkConfig { class_count: 6, ..cfg.clone() }, &g, seed).unwrap();
        train(&mut scratch, &b_train, None, &budget, TrainMode::Scratch, |_| {}).unwrap();
        let s = evaluate_topk(&scratch, &b_test, &[1], 64).unwrap()[0];
        t_sum += t;
        s_sum += s;
        rows.push(format!("{:.0}/{:.0}", 100.0 * t, 100.0 * s));
    }
    let (t, s) = (t_sum / 5.0, s_sum / 5.0);
    check(
        t - s >= 0.05,
        format!(
            "domain B (6 new classes, sigma 0.04, 20% loss, 10/class): transfer {:.1}% vs scratch {:.1}% = {:+.1} pp >= +5 pp; \
             per seed transfer/scratch [{}]; source val top-1 {:.3}",
            100.0 * t,
            100.0 * s,
            100.0 * (t - s),
            rows.join(", "),
            pre.best_log().val_top1
        ),
    )
}

// 10 ---------------------------------------------------------------------

fn data_pipeline_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let raw = Tensor::from_fn(&[3, 297, 17], |_| rng.random_range(-1.0f32..1.0));
    let seq = mmfi_preprocess(&raw).unwrap();
    for c in 0..3 {
        for t in 0..297 {
            if seq.at(&[c, t, 17]) != (raw.at(&[c, t, 0]) + raw.at(&[c, t, 7])) / 2.0 {
                return Err(format!("midpoint mismatch at channel {c}, frame {t}"));
            }
        }
    }
    let swap = Layout::Kinetics18.mirror_pairs();
    let clips = segment_and_mirror(&seq, 30, swap).unwrap();
    if clips.len() != 20 || clips.iter().any(|c| c.shape() != [3, 30, 18]) {
        return Err(format!("300 frames gave {} clips", clips.len()));
    }
    for c in &clips {
        if !mirror_clip(&mirror_clip(c, swap).unwrap(), swap).unwrap().bit_eq(c) {
            return Err("mirror is not an involution".into());
        }
    }
    let padded = pad_frames(&clips[0], 40).unwrap();
    let zero_frame = |t: usize| (0..3).all(|c| (0..18).all(|n| padded.at(&[c, t, n]) == 0.0));
    let lead = (0..40).take_while(|&t| zero_frame(t)).count();
    let trail = (0..40).rev().take_while(|&t| zero_frame(t)).count();
    if (lead, trail) != (5, 5) {
        return Err(format!("pad 30 -> 40 split {lead} + {trail}"));
    }

    let dir = tempfile::tempdir().unwrap();
    let ds = synth(3, 2, 10, 0.02, 0.2);
    let ds_path = dir.path().join("d.skds");
    save_dataset(&ds, &ds_path).unwrap();
    let back = load_dataset(&ds_path).unwrap();
    let ds_exact = back.labels() == ds.labels() && back.samples.iter().zip(&ds.samples).all(|(a, b)| a.data.bit_eq(&b.data));
    let net = Network::build(&desk(SpatialVariant::TcAgc, TemporalVariant::EspMst, 3), &graph18(), 10).unwrap();
    let ck_path = dir.path().join("n.skck");
    save_checkpoint(&net, &ck_path).unwrap();
    let ck_exact = load_checkpoint(&ck_path).unwrap() == Checkpoint::from_network(&net);
    let bytes_exact = {
        let mut again = Vec::new();
        load_checkpoint(&ck_path).unwrap().write(&mut again).unwrap();
        again == std::fs::read(&ck_path).unwrap()
    };
    check(
        ds_exact && ck_exact && bytes_exact,
        format!(
            "midpoint exact; 300 frames -> 20 clips; mirror involution exact; pad 30 -> 40 = 5 + 5; SKDS round trip {}; SKCK round trip {}",
            if ds_exact { "exact" } else { "differs" },
            if ck_exact && bytes_exact { "exact" } else { "differs" }
        ),
    )
}

// 11 ---------------------------------------------------------------------

fn padding_sweep() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let d = |p: &Path| p.to_str().unwrap().to_string();
    let data = d(&dir.path().join("ds.skds"));
    let out = dir.path().join("sweep");
    let synth_args = ["skefi", "synth", "--classes", "4", "--per-class", "4", "--frames", "30", "--seed", "11", "-o", &data];
    if skefi::cli::run(synth_args) != 0 {
        return Err("synth failed".into());
    }
    let out_s = d(&out);
    let args = [
        "skefi", "train", "--data", &data, "--widths", "desk", "--epochs", "2", "--batch-size", "8", "--pad-frames", "30,35,40,50",
        "-o", &out_s,
    ];
    let code = skefi::cli::run(args);
    if code != 0 {
        return Err(format!("train exited with {code}"));
    }
    let csv = std::fs::read_to_string(out.join(skefi::cli::PAD_SWEEP_CSV)).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = csv.lines().collect();
    if lines.first() != Some(&skefi::cli::PAD_SWEEP_HEADER) || lines.len() != 5 {
        return Err(format!("malformed sweep CSV: {csv:?}"));
    }
    for (line, pad) in lines[1..].iter().zip([30, 35, 40, 50]) {
        let f: Vec<&str> = line.split(',').collect();
        let acc: Vec<f64> = f[2..4].iter().filter_map(|v| v.parse().ok()).collect();
        if f.len() != 5 || f[0] != pad.to_string() || acc.len() != 2 || acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(format!("bad row {line:?}"));
        }
    }
    Ok(format!("one command wrote {} with rows for pad 30, 35, 40, 50", skefi::cli::PAD_SWEEP_CSV))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let want = |id: usize| selected.is_empty() || selected.contains(&id);
    let min = |m: u64| Duration::from_secs(60 * m);
    type Criterion = (usize, &'static str, Duration, fn() -> Verdict);
    let all: [Criterion; 11] = [
        (1, "gradient oracle", min(2), gradient_oracle),
        (2, "adjacency oracle", min(1), adjacency_oracle),
        (3, "affinity normalization", min(1), affinity_normalization),
        (4, "parameter-count equality", min(1), parameter_counts),
        (5, "freezing contract", min(1), freezing_contract),
        (6, "overfit probe", min(5), overfit_probe),
        (7, "synthetic generalization", min(15), synthetic_generalization),
        (8, "robustness direction", min(90), robustness_direction),
        (9, "transfer benefit direction", min(60), transfer_benefit),
        (10, "data-pipeline exactness", min(1), data_pipeline_exactness),
        (11, "frame-padding study hook", min(5), padding_sweep),
    ];
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, title, budget, f) in all {
        if want(id) {
            ran += 1;
            if !criterion(id, title, budget, f) {
                failed.push(id);
            }
        }
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failed.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
