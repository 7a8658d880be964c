//! Parametric noisy-skeleton generator on the kinetics18 layout.
//!
//! Each class family animates the limbs of a fixed rest pose with sinusoidal
//! displacements. A family has one dominant limb whose motion frequency and
//! direction come from the family index, plus weaker motions of the other body
//! groups drawn from a stream keyed by the family alone. Samples of one class
//! differ only by a random phase, then receive Gaussian jitter and burst frame
//! loss.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::{inject_frame_loss, Provenance, SkeletonDataset};
use crate::error::{Error, Result};
use crate::graph::Layout;
use crate::rng;
use crate::tensor::Tensor;

const FAMILY_SEED: u64 = 0x5eed_c1a5_5e5;

/// Rest pose `(x, y)` of the 18 joints, roughly unit body height.
const REST: [(f64, f64); 18] = [
    (0.0, 0.90),
    (0.0, 0.75),
    (-0.15, 0.75),
    (-0.20, 0.55),
    (-0.22, 0.38),
    (0.15, 0.75),
    (0.20, 0.55),
    (0.22, 0.38),
    (-0.10, 0.35),
    (-0.11, 0.18),
    (-0.12, 0.00),
    (0.10, 0.35),
    (0.11, 0.18),
    (0.12, 0.00),
    (-0.03, 0.93),
    (0.03, 0.93),
    (-0.06, 0.91),
    (0.06, 0.91),
];

/// Body groups as `(joint, weight)` lists: right arm, left arm, right leg,
/// left leg, head and trunk.
const GROUPS: [&[(usize, f64)]; 5] = [
    &[(2, 0.1), (3, 0.5), (4, 1.0)],
    &[(5, 0.1), (6, 0.5), (7, 1.0)],
    &[(8, 0.1), (9, 0.5), (10, 1.0)],
    &[(11, 0.1), (12, 0.5), (13, 1.0)],
    &[(0, 1.0), (1, 0.7), (14, 1.0), (15, 1.0), (16, 1.0), (17, 1.0), (2, 0.4), (5, 0.4)],
];

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub class_count: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    /// Standard deviation of the Gaussian coordinate jitter.
    pub sigma: f64,
    pub drop_prob: f64,
    pub burst_len: usize,
    pub seed: u64,
    /// Index of the first class family, so disjoint class sets can be drawn.
    pub class_offset: usize,
    /// Amplitude of the dominant limb motion.
    pub primary_amplitude: f64,
    /// Upper bound on the amplitude of the secondary body-group motions.
    pub secondary_amplitude: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 8,
            samples_per_class: 50,
            frames: 30,
            sigma: 0.02,
            drop_prob: 0.0,
            burst_len: 5,
            seed: 0,
            class_offset: 0,
            primary_amplitude: 0.25,
            secondary_amplitude: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 || self.frames == 0 {
            return Err(Error::config("class_count and frames must be positive"));
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::config(format!("drop probability {} outside [0, 1]", self.drop_prob)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be a finite value >= 0, got {}", self.sigma)));
        }
        if self.burst_len == 0 {
            return Err(Error::config("burst_len must be >= 1"));
        }
        if !(self.primary_amplitude >= 0.0 && self.secondary_amplitude >= 0.0) {
            return Err(Error::config("motion amplitudes must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct GroupMotion {
    amplitude: f64,
    cycles: f64,
    phase: f64,
    direction: f64,
    ellipticity: f64,
}

fn family_motion(family: usize, cfg: &SynthConfig) -> Vec<GroupMotion> {
    let mut r = rng::stream(FAMILY_SEED, "family", family as u64);
    let primary = family % 4;
    let base_cycles = 1.0 + (family / 4) as f64;
    (0..GROUPS.len())
        .map(|g| {
            if g == primary {
                GroupMotion {
                    amplitude: cfg.primary_amplitude,
                    cycles: base_cycles,
                    phase: 0.0,
                    direction: PI / 2.0 * ((family / 4) % 2) as f64 + r.random_range(-0.2..0.2),
                    ellipticity: r.random_range(0.0..0.5),
                }
            } else {
                GroupMotion {
                    amplitude: r.random_range(0.0..=cfg.secondary_amplitude),
                    cycles: r.random_range(0.5..3.0),
                    phase: r.random_range(0.0..2.0 * PI),
                    direction: r.random_range(0.0..PI),
                    ellipticity: r.random_range(0.0..1.0),
                }
            }
        })
        .collect()
}

/// Noise-free `[3, T, 18, 1]` clip of `family` with phase `psi`.
fn render(motion: &[GroupMotion], frames: usize, psi: f64) -> Tensor<f32> {
    let n = REST.len();
    let mut pos = vec![[0f64; 2]; frames * n];
    for t in 0..frames {
        for (j, &(x, y)) in REST.iter().enumerate() {
            pos[t * n + j] = [x, y];
        }
    }
    for (g, m) in GROUPS.iter().zip(motion) {
        let (dc, ds) = (m.direction.cos(), m.direction.sin());
        for t in 0..frames {
            let theta = 2.0 * PI * m.cycles * t as f64 / 30.0 + m.phase + psi;
            let along = m.amplitude * theta.sin();
            let across = m.amplitude * m.ellipticity * theta.cos();
            let (ox, oy) = (along * dc - across * ds, along * ds + across * dc);
            for &(j, w) in g.iter() {
                pos[t * n + j][0] += w * ox;
                pos[t * n + j][1] += w * oy;
            }
        }
    }
    let mut out = Tensor::zeros(&[3, frames, n, 1]);
    for t in 0..frames {
        for j in 0..n {
            out.set(&[0, t, j, 0], pos[t * n + j][0] as f32);
            out.set(&[1, t, j, 0], pos[t * n + j][1] as f32);
            out.set(&[2, t, j, 0], 1.0);
        }
    }
    out
}

/// Generates `class_count * samples_per_class` samples, interleaving classes.
/// A pure function of `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SkeletonDataset> {
    cfg.validate()?;
    let motions: Vec<Vec<GroupMotion>> =
        (0..cfg.class_count).map(|c| family_motion(cfg.class_offset + c, cfg)).collect();
    let total = cfg.class_count * cfg.samples_per_class;
    let noise = Normal::new(0.0, cfg.sigma).map_err(|e| Error::config(e.to_string()))?;
    let samples: Vec<Tensor<f32>> = (0..total)
        .into_par_iter()
        .map(|i| {
            let label = i % cfg.class_count;
            let mut r = rng::stream(cfg.seed, rng::SYNTH, i as u64);
            let psi = r.random_range(0.0..2.0 * PI);
            let mut clip = render(&motions[label], cfg.frames, psi);
            if cfg.sigma > 0.0 {
                let d = clip.data_mut();
                let coords = 2 * cfg.frames * REST.len();
                for v in &mut d[..coords] {
                    *v += noise.sample(&mut r) as f32;
                }
            }
            inject_frame_loss(&clip, cfg.drop_prob, cfg.burst_len, &mut r)
        })
        .collect::<Result<_>>()?;
    let mut ds = SkeletonDataset::new(cfg.class_count, Layout::Kinetics18, [3, cfg.frames, REST.len(), 1], Provenance::Synthetic);
    for (i, s) in samples.into_iter().enumerate() {
        ds.push(i % cfg.class_count, s)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig { class_count: 8, samples_per_class: 50, seed: 3, ..Default::default() };
        let a = synth_generate(&cfg).unwrap();
        assert_eq!(a.len(), 400);
        assert_eq!(a.dims, [3, 30, 18, 1]);
        let b = synth_generate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&SynthConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.samples[0].data, c.samples[0].data);
    }

    #[test]
    fn noiseless_same_class_differs_only_by_phase() {
        let cfg = SynthConfig { sigma: 0.0, samples_per_class: 2, class_count: 3, ..Default::default() };
        let ds = synth_generate(&cfg).unwrap();
        let motion = family_motion(1, &cfg);
        let s = &ds.samples[1];
        assert_eq!(s.label, 1);
        let mut r = rng::stream(cfg.seed, rng::SYNTH, 1);
        let psi = r.random_range(0.0..2.0 * PI);
        assert!(render(&motion, cfg.frames, psi).bit_eq(&s.data));
    }

    #[test]
    fn families_are_distinct() {
        let cfg = SynthConfig::default();
        let a = render(&family_motion(0, &cfg), 30, 0.0);
        let b = render(&family_motion(4, &cfg), 30, 0.0);
        assert!(a.max_abs_diff(&b) > 0.05);
    }

    #[test]
    fn invalid_config() {
        assert!(synth_generate(&SynthConfig { drop_prob: 1.5, ..Default::default() }).is_err());
        assert!(synth_generate(&SynthConfig { sigma: -1.0, ..Default::default() }).is_err());
    }
}
