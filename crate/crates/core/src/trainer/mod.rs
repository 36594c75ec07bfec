//! The optimization loop: view scheduling at the configured ground-truth to
//! pseudo-label ratio, render / decode / loss / backward, Adam updates on
//! the six attribute groups plus the decoder, and periodic densify / prune.

mod adam;
mod densify;

pub use adam::AdamState;
pub use densify::DensifyStats;

use std::io::Write;
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{SparsePoint, View};
use crate::cloud::{self, CloudError, GaussianCloud};
use crate::decoder::{decode, decode_backward, DecoderError, SemanticDecoder};
use crate::image::Image;
use crate::losses::{
    agg2d_loss, agg3d_loss, ce_loss, dssim_loss, l1_loss, total_loss, LossError, LossReport,
    LossWeights,
};
use crate::math::{mix_seed, norm3, sub3};
use crate::rasterizer::{render, render_backward, RasterError, RenderOptions};
use crate::spatial::{SpatialError, SpatialIndex};
use crate::Scalar;

const SALT_DECODER: u64 = 0xDEC0;
const SALT_CLOUD: u64 = 0xC10D;
const SALT_VIEW: u64 = 0x51EB;
const SALT_AGG2D: u64 = 0xA662;
const SALT_AGG3D: u64 = 0xA663;
const SALT_DENSIFY: u64 = 0xDE45;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no {pool} views available for the configured schedule")]
    EmptyPool { pool: &'static str },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("scene has no views")]
    NoViews,
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Decoder(#[from] DecoderError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything `run` needs: views (some labeled, some pseudo-labeled), the
/// initialization point cloud, and the class count.
#[derive(Debug, Clone)]
pub struct Scene<T> {
    pub views: Vec<View<T>>,
    pub init_points: Vec<SparsePoint>,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub densify_interval: usize,
    pub max_points: usize,
    /// Ground-truth draws per schedule block.
    pub gt_per_block: usize,
    /// Pseudo-label draws per schedule block (0 disables pseudo training).
    pub pseudo_per_block: usize,
    /// Neighbor count for both aggregation losses.
    pub k_neighbors: usize,
    pub agg_samples_2d: usize,
    pub agg_samples_3d: usize,
    pub loss_weights: LossWeights,
    pub lr_positions: f64,
    /// Position learning rate decays exponentially to `lr_positions * factor`
    /// over the run.
    pub lr_positions_final_factor: f64,
    pub lr_rotations: f64,
    pub lr_log_scales: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_features: f64,
    pub lr_decoder: f64,
    pub seed: u64,
    /// Densify points whose mean screen-space positional gradient norm
    /// (NDC units) exceeds this.
    pub tau_grad: f64,
    /// Prune points whose opacity falls below this.
    pub eps_prune: f64,
    pub split_scale_divisor: f64,
    /// Clone-vs-split size threshold in world units; derived from the scene
    /// extent when absent.
    pub size_threshold: Option<f64>,
    pub percent_dense: f64,
    pub sh_degree: usize,
    pub feature_dim: usize,
    /// Hidden width of the decoder MLP; `None` gives a single linear layer.
    pub decoder_hidden: Option<usize>,
    pub threads: usize,
    pub tile_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 30_000,
            densify_interval: 2_000,
            max_points: cloud::MAX_POINTS,
            gt_per_block: 1,
            pseudo_per_block: 8,
            k_neighbors: 5,
            agg_samples_2d: 4096,
            agg_samples_3d: 4096,
            loss_weights: LossWeights::default(),
            lr_positions: 1.6e-4,
            lr_positions_final_factor: 0.01,
            lr_rotations: 1e-3,
            lr_log_scales: 5e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            lr_features: 2.5e-3,
            lr_decoder: 1e-3,
            seed: 0,
            tau_grad: 2e-4,
            eps_prune: 0.005,
            split_scale_divisor: 1.6,
            size_threshold: None,
            percent_dense: 0.01,
            sh_degree: cloud::DEFAULT_SH_DEGREE,
            feature_dim: cloud::DEFAULT_FEATURE_DIM,
            decoder_hidden: Some(32),
            threads: 0,
            tile_size: 16,
        }
    }
}

impl TrainConfig {
    pub fn block_len(&self) -> usize {
        (self.gt_per_block + self.pseudo_per_block).max(1)
    }

    pub fn render_options(&self) -> RenderOptions {
        RenderOptions {
            threads: self.threads,
            tile_size: self.tile_size,
        }
    }

    fn position_lr_at(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_positions;
        }
        let t = step as f64 / self.total_steps as f64;
        self.lr_positions * self.lr_positions_final_factor.powf(t)
    }
}

/// Deterministic view schedule: the first `gt_per_block` slots of every
/// block draw uniformly from the ground-truth pool, the remaining slots from
/// the pseudo pool. Any window of whole blocks therefore contains exactly
/// the configured ratio.
pub fn sample_view<'a, T>(
    views: &'a [View<T>],
    step: usize,
    seed: u64,
    gt_per_block: usize,
    pseudo_per_block: usize,
) -> Result<&'a View<T>, TrainError> {
    let gt_pool: Vec<usize> = views
        .iter()
        .enumerate()
        .filter(|(_, v)| v.label.is_some())
        .map(|(i, _)| i)
        .collect();
    let pseudo_pool: Vec<usize> = views
        .iter()
        .enumerate()
        .filter(|(_, v)| v.label.is_none() && v.pseudo.is_some())
        .map(|(i, _)| i)
        .collect();

    let block = gt_per_block + pseudo_per_block;
    let slot = if block == 0 { 0 } else { step % block };
    let wants_gt = slot < gt_per_block || pseudo_per_block == 0;
    let pool = if wants_gt { &gt_pool } else { &pseudo_pool };
    if pool.is_empty() {
        return Err(TrainError::EmptyPool {
            pool: if wants_gt { "ground-truth" } else { "pseudo-labeled" },
        });
    }
    let mut rng = StdRng::seed_from_u64(mix_seed(seed, SALT_VIEW ^ (step as u64)));
    Ok(&views[pool[rng.gen_range(0..pool.len())]])
}

/// Mutable optimization state.
pub struct Trainer<T> {
    pub cloud: GaussianCloud<T>,
    pub decoder: SemanticDecoder<T>,
    pub config: TrainConfig,
    num_classes: usize,
    index: SpatialIndex<T>,
    adam_positions: AdamState<T>,
    adam_rotations: AdamState<T>,
    adam_log_scales: AdamState<T>,
    adam_opacity: AdamState<T>,
    adam_sh: AdamState<T>,
    adam_features: AdamState<T>,
    adam_decoder_w: Vec<AdamState<T>>,
    adam_decoder_b: Vec<AdamState<T>>,
    /// Per-point accumulated screen-space gradient norms (NDC units) and the
    /// number of steps each point was projected, since the last densify.
    grad_norm_accum: Vec<f64>,
    visible_count: Vec<u32>,
    scene_extent: f64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(scene: &Scene<T>, config: &TrainConfig) -> Result<Self, TrainError> {
        if scene.views.is_empty() {
            return Err(TrainError::NoViews);
        }
        let cloud = cloud::init_from_points::<T>(
            &scene.init_points,
            config.sh_degree,
            config.feature_dim,
            mix_seed(config.seed, SALT_CLOUD),
        )?;
        let decoder = SemanticDecoder::new(
            config.feature_dim,
            config.decoder_hidden,
            scene.num_classes,
            mix_seed(config.seed, SALT_DECODER),
        );
        let index = SpatialIndex::build(&cloud.positions)?;
        let scene_extent = scene_extent(&scene.init_points);
        let n = cloud.len();
        Ok(Self {
            adam_positions: AdamState::new(n * 3),
            adam_rotations: AdamState::new(n * 4),
            adam_log_scales: AdamState::new(n * 3),
            adam_opacity: AdamState::new(n),
            adam_sh: AdamState::new(cloud.sh_coeffs.len()),
            adam_features: AdamState::new(cloud.features.len()),
            adam_decoder_w: decoder
                .layers
                .iter()
                .map(|l| AdamState::new(l.weight.len()))
                .collect(),
            adam_decoder_b: decoder
                .layers
                .iter()
                .map(|l| AdamState::new(l.bias.len()))
                .collect(),
            grad_norm_accum: vec![0.0; n],
            visible_count: vec![0; n],
            num_classes: scene.num_classes,
            scene_extent,
            index,
            cloud,
            decoder,
            config: config.clone(),
        })
    }

    /// One optimization step on one view. Returns the loss breakdown.
    pub fn train_step(&mut self, view: &View<T>, step: usize) -> Result<LossReport, TrainError> {
        let cfg = &self.config;
        let opts = cfg.render_options();
        let out = render(&self.cloud, &view.intrinsics, &view.pose, &opts);
        let logits = decode(&out.features, &self.decoder, cfg.threads)?;

        let (l1, d_l1) = l1_loss(&out.color, &view.image)?;
        // Images below the SSIM window have no valid windows; the structural
        // term simply drops out for them.
        let (dssim, d_dssim) = if out.color.h >= 11 && out.color.w >= 11 {
            dssim_loss(&out.color, &view.image)?
        } else {
            (T::zero(), Image::zeros(out.color.h, out.color.w, 3))
        };
        let (ce, d_ce) = match (&view.label, &view.pseudo) {
            (Some(label), _) => ce_loss(&logits, label, None)?,
            (None, Some((pseudo, boundary))) => ce_loss(&logits, pseudo, Some(boundary))?,
            (None, None) => (T::zero(), Image::zeros(logits.h, logits.w, logits.c)),
        };

        let pixels = out.features.h * out.features.w;
        let k = cfg.k_neighbors;
        let m2d = cfg.agg_samples_2d.min(pixels / (k + 1));
        let agg2d = if cfg.loss_weights.a != 0.0 && m2d >= 1 {
            Some(agg2d_loss(
                &out.features,
                m2d,
                k,
                mix_seed(cfg.seed, SALT_AGG2D ^ (step as u64)),
            )?)
        } else {
            None
        };
        let agg3d = if cfg.loss_weights.b != 0.0 && self.cloud.len() > k {
            let m3d = cfg.agg_samples_3d.min(self.cloud.len());
            Some(agg3d_loss(
                &self.cloud,
                &self.index,
                m3d,
                k,
                mix_seed(cfg.seed, SALT_AGG3D ^ (step as u64)),
            )?)
        } else {
            None
        };

        let agg2d_val = agg2d.as_ref().map_or(0.0, |(v, _)| v.as_f64());
        let agg3d_val = agg3d.as_ref().map_or(0.0, |(v, _)| v.as_f64());
        let report = total_loss(
            l1.as_f64(),
            dssim.as_f64(),
            ce.as_f64(),
            agg2d_val,
            agg3d_val,
            &cfg.loss_weights,
        )
        .map_err(|e| TrainError::NonFiniteLoss {
            step,
            detail: e.to_string(),
        })?;

        // Backward: decoder first, then fold everything into the rasterizer
        // adjoints.
        let (d_feat_ce, dec_grads) = decode_backward(&out.features, &self.decoder, &d_ce, cfg.threads)?;

        let mut d_color = d_l1;
        for (a, b) in d_color.data.iter_mut().zip(&d_dssim.data) {
            *a += *b;
        }
        let mut d_features = d_feat_ce;
        if let Some((_, d_agg2d)) = &agg2d {
            let a = T::from_f64(cfg.loss_weights.a).unwrap();
            for (g, da) in d_features.data.iter_mut().zip(&d_agg2d.data) {
                *g += a * *da;
            }
        }

        let mut bundle = render_backward(
            &self.cloud,
            &view.intrinsics,
            &view.pose,
            &out,
            &d_color,
            &d_features,
            &opts,
        )?;
        if let Some((_, d_agg3d)) = &agg3d {
            let b = T::from_f64(cfg.loss_weights.b).unwrap();
            for (g, da) in bundle.features.iter_mut().zip(d_agg3d) {
                *g += b * *da;
            }
        }

        // Densification statistics in NDC units so the canonical threshold
        // keeps its meaning at any resolution.
        let half_w = view.intrinsics.width as f64 * 0.5;
        let half_h = view.intrinsics.height as f64 * 0.5;
        for splat in &out.splats {
            let j = splat.source_index;
            let g = bundle.mean2d[j];
            let gx = g[0].as_f64() * half_w;
            let gy = g[1].as_f64() * half_h;
            self.grad_norm_accum[j] += (gx * gx + gy * gy).sqrt();
            self.visible_count[j] += 1;
        }

        // Parameter updates.
        let lr_pos = cfg.position_lr_at(step);
        self.adam_positions.step(
            flatten3_mut(&mut self.cloud.positions),
            flatten3(&bundle.positions),
            lr_pos,
        );
        self.adam_rotations.step(
            flatten4_mut(&mut self.cloud.rotations),
            flatten4(&bundle.rotations),
            cfg.lr_rotations,
        );
        self.adam_log_scales.step(
            flatten3_mut(&mut self.cloud.log_scales),
            flatten3(&bundle.log_scales),
            cfg.lr_log_scales,
        );
        self.adam_opacity.step(
            &mut self.cloud.opacity_logits,
            &bundle.opacity_logits,
            cfg.lr_opacity,
        );
        self.adam_sh
            .step(&mut self.cloud.sh_coeffs, &bundle.sh_coeffs, cfg.lr_sh);
        self.adam_features
            .step(&mut self.cloud.features, &bundle.features, cfg.lr_features);
        for (li, layer) in self.decoder.layers.iter_mut().enumerate() {
            self.adam_decoder_w[li].step(&mut layer.weight, &dec_grads.weights[li], cfg.lr_decoder);
            self.adam_decoder_b[li].step(&mut layer.bias, &dec_grads.biases[li], cfg.lr_decoder);
        }

        Ok(report)
    }

    /// Runs the whole schedule; densify/prune fires every
    /// `densify_interval` steps (except right at the end of the run).
    pub fn run(&mut self, views: &[View<T>]) -> Result<Vec<(usize, LossReport)>, TrainError> {
        let cfg = self.config.clone();
        let mut log = Vec::with_capacity(cfg.total_steps);
        for step in 0..cfg.total_steps {
            let view = sample_view(views, step, cfg.seed, cfg.gt_per_block, cfg.pseudo_per_block)?;
            let report = self.train_step(view, step)?;
            log.push((step, report));
            let done = step + 1;
            if cfg.densify_interval > 0 && done % cfg.densify_interval == 0 && done < cfg.total_steps
            {
                self.densify_and_prune(done)?;
            }
        }
        Ok(log)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn scene_extent(&self) -> f64 {
        self.scene_extent
    }

    /// Spatial-index snapshot currently used by the 3D aggregation loss.
    pub fn spatial_index(&self) -> &SpatialIndex<T> {
        &self.index
    }
}

/// Bounding-sphere radius of the initialization points.
fn scene_extent(points: &[SparsePoint]) -> f64 {
    if points.is_empty() {
        return 1.0;
    }
    let mut center = [0.0f64; 3];
    for p in points {
        for a in 0..3 {
            center[a] += p.position[a];
        }
    }
    center.iter_mut().for_each(|v| *v /= points.len() as f64);
    points
        .iter()
        .map(|p| norm3(sub3(p.position, center)))
        .fold(0.0, f64::max)
        .max(1e-6)
}

/// Builds a `Scene` and runs the full loop, returning the trainer (cloud +
/// decoder) and the per-step loss log.
pub fn run<T: Scalar>(
    scene: &Scene<T>,
    config: &TrainConfig,
) -> Result<(Trainer<T>, Vec<(usize, LossReport)>), TrainError> {
    let mut trainer = Trainer::new(scene, config)?;
    let log = trainer.run(&scene.views)?;
    Ok((trainer, log))
}

/// One CSV row per step: `step,l1,dssim,ce,agg2d,agg3d,total`.
pub fn write_loss_csv(path: &Path, log: &[(usize, LossReport)]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "step,l1,dssim,ce,agg2d,agg3d,total")?;
    for (step, r) in log {
        writeln!(
            f,
            "{},{},{},{},{},{},{}",
            step, r.l1, r.dssim, r.ce, r.agg2d, r.agg3d, r.total
        )?;
    }
    f.flush()
}

fn flatten3<T: Scalar>(v: &[[T; 3]]) -> &[T] {
    v.as_flattened()
}

fn flatten3_mut<T: Scalar>(v: &mut [[T; 3]]) -> &mut [T] {
    v.as_flattened_mut()
}

fn flatten4<T: Scalar>(v: &[[T; 4]]) -> &[T] {
    v.as_flattened()
}

fn flatten4_mut<T: Scalar>(v: &mut [[T; 4]]) -> &mut [T] {
    v.as_flattened_mut()
}
