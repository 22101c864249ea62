//! Supervision and optimization: target maps, granularity labels,
//! augmentation, the masked stack loss and the training loop.

pub mod augment;
pub mod cache;
pub mod granularity;
pub mod targets;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, VolrigError};
use crate::features::{FeatureConfig, VoxelGrid, NUM_CHANNELS};
use crate::net::{Granularity, Network, NetworkConfig, Pass, StackOutputs};
use crate::skeleton::RiggedCharacter;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor, Var};

pub use augment::{augment, rotate_subtree, scale_character};
pub use cache::{cache_dir_from_env, cached_features, feature_key, CachedFeatures, CACHE_ENV};
pub use granularity::{compute_granularity_label, granularity_from_diameters, percentile_nearest_rank};
pub use targets::{make_target_maps, TargetMaps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub resolution: usize,
    pub num_modules: usize,
    /// Extra augmented variants per character, at most five.
    pub augmentations: usize,
    /// Target heatmap standard deviation, voxels.
    pub heatmap_sigma: f64,
    /// Bone sample spacing for the bone targets, voxels.
    pub bone_spacing: f64,
    /// Surface samples used for curvature and diameter features.
    pub samples: usize,
    pub dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 1000,
            seed: 0,
            lr: 1e-4,
            batch_size: 1,
            resolution: 88,
            num_modules: 4,
            augmentations: 0,
            heatmap_sigma: 1.0,
            bone_spacing: 0.5,
            samples: 10_000,
            dropout: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.samples == 0 {
            return Err(VolrigError::Config("batch size and sample count must be positive".into()));
        }
        if self.augmentations > augment::MAX_AUGMENTATIONS {
            return Err(VolrigError::Config(format!(
                "at most {} augmentations per character",
                augment::MAX_AUGMENTATIONS
            )));
        }
        if !(self.heatmap_sigma > 0.0 && self.bone_spacing > 0.0 && self.lr > 0.0) {
            return Err(VolrigError::Config("sigma, bone spacing and lr must be positive".into()));
        }
        self.network().validate()
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            resolution: self.resolution,
            num_modules: self.num_modules,
            dropout: self.dropout,
            ..NetworkConfig::default()
        }
    }

    pub fn features(&self) -> FeatureConfig {
        FeatureConfig {
            resolution: self.resolution,
            samples: self.samples,
            seed: self.seed,
        }
    }
}

/// One featurized, labelled training shape.
#[derive(Debug, Clone)]
pub struct Example {
    pub name: String,
    pub grid: VoxelGrid,
    pub input: Tensor<f32>,
    pub mask: Vec<bool>,
    pub joints: Tensor<f32>,
    pub bones: Tensor<f32>,
    pub granularity: Granularity,
}

pub fn prepare_example(
    name: &str,
    c: &RiggedCharacter,
    cfg: &TrainConfig,
    cache: Option<&Path>,
) -> Result<Example> {
    let f = cached_features(&c.mesh, &cfg.features(), cache)?;
    let t = make_target_maps(&c.skeleton, &f.grid, cfg.heatmap_sigma, cfg.bone_spacing)?;
    let r = cfg.resolution;
    let granularity = granularity_from_diameters(&f.lsd)?;
    Ok(Example {
        name: name.to_string(),
        grid: f.grid,
        input: Tensor::new(vec![r, r, r, NUM_CHANNELS], f.channels)?,
        mask: f.mask,
        joints: Tensor::new(vec![r, r, r, 1], t.joints)?,
        bones: Tensor::new(vec![r, r, r, 1], t.bones)?,
        granularity,
    })
}

/// Characters plus their augmented variants, featurized.
pub fn prepare_dataset(
    characters: &[(String, RiggedCharacter)],
    cfg: &TrainConfig,
    cache: Option<&Path>,
) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, (name, c)) in characters.iter().enumerate() {
        out.push(prepare_example(name, c, cfg, cache)?);
        let vars = augment(c, cfg.seed.wrapping_add(i as u64), cfg.augmentations)?;
        for (k, v) in vars.iter().enumerate() {
            out.push(prepare_example(&format!("{name}~{k}"), v, cfg, cache)?);
        }
    }
    Ok(out)
}

/// Masked cross-entropy of every module's joint and bone maps, summed.
/// Returns the total and the per-module values.
pub fn stack_loss(
    g: &Graph<f32>,
    out: &StackOutputs<f32>,
    joints: &Tensor<f32>,
    bones: &Tensor<f32>,
    mask: &[bool],
) -> Result<(Var<f32>, Vec<f64>)> {
    let mut total: Option<Var<f32>> = None;
    let mut per_module = Vec::with_capacity(out.joints.len());
    for (pj, pb) in out.joints.iter().zip(&out.bones) {
        let l = g.add(&g.masked_bce(pj, joints, mask)?, &g.masked_bce(pb, bones, mask)?)?;
        per_module.push(l.value().item() as f64);
        total = Some(match total {
            Some(t) => g.add(&t, &l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| VolrigError::Invalid("network has no modules".into()))?;
    Ok((total, per_module))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub examples: Vec<String>,
    pub loss: f64,
    pub per_module: Vec<f64>,
}

/// Adam over shuffled epochs; a batch accumulates gradients over several
/// shapes. Each record is also written to `log` as one JSON line.
pub fn train(
    net: &mut Network<f32>,
    data: &[Example],
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(VolrigError::Invalid("empty training set".into()));
    }
    if net.config.resolution != cfg.resolution {
        return Err(VolrigError::Config("network and training resolution differ".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut order: Vec<usize> = Vec::new();
    let mut records = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut names = Vec::with_capacity(cfg.batch_size);
        let mut loss_sum = 0.0;
        let mut module_sum = vec![0.0; cfg.num_modules];
        for _ in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut order_rng);
                order.reverse();
            }
            let ex = &data[order.pop().expect("refilled above")];
            let g = Graph::with_grad();
            let mut pass = Pass::train(&mut drop_rng);
            let out = net.forward(&g, &ex.input, ex.granularity, &mut pass)?;
            let (loss, per) = stack_loss(&g, &out, &ex.joints, &ex.bones, &ex.mask)?;
            let value = loss.value().item() as f64;
            if !value.is_finite() {
                return Err(VolrigError::NonFinite(format!("loss at iteration {it} on {}", ex.name)));
            }
            g.backward(&loss, &mut net.params)?;
            let updates = std::mem::take(&mut pass.updates);
            net.apply_updates(updates)?;
            loss_sum += value;
            for (a, b) in module_sum.iter_mut().zip(per) {
                *a += b;
            }
            names.push(ex.name.clone());
        }
        let b = cfg.batch_size as f64;
        if cfg.batch_size > 1 {
            net.params.scale_grad(1.0 / b as f32);
        }
        adam.step(&mut net.params)?;
        net.params.zero_grad();
        let rec = LossRecord {
            iteration: it,
            examples: names,
            loss: loss_sum / b,
            per_module: module_sum.iter().map(|v| v / b).collect(),
        };
        if let Some(w) = log.as_mut() {
            let line = serde_json::to_string(&rec)?;
            writeln!(w, "{line}").map_err(|e| VolrigError::io("<loss log>", e))?;
        }
        records.push(rec);
    }
    Ok(records)
}

/// Mean loss over the first and last `window` records.
pub fn loss_trend(records: &[LossRecord], window: usize) -> Option<(f64, f64)> {
    if records.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(records.len());
    let mean = |r: &[LossRecord]| r.iter().map(|x| x.loss).sum::<f64>() / r.len() as f64;
    Some((mean(&records[..w]), mean(&records[records.len() - w..])))
}
