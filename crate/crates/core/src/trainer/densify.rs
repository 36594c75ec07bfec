//! Adaptive density control: clone small high-gradient Gaussians, split
//! large ones into two children sampled inside the parent ellipsoid, prune
//! near-transparent points, and keep the total under the point cap.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::{Trainer, SALT_DENSIFY};
use crate::math::{mat33_vec3, mix_seed, quat_normalize, quat_to_rot, sc};
use crate::spatial::SpatialIndex;
use crate::trainer::TrainError;
use crate::Scalar;

/// Outcome counts of one densify/prune event.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensifyStats {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub points_after: usize,
}

impl<T: Scalar> Trainer<T> {
    /// Runs one densify/prune event, remaps the Adam moments, resets the
    /// gradient statistics, and rebuilds the spatial index snapshot.
    pub fn densify_and_prune(&mut self, step: usize) -> Result<DensifyStats, TrainError> {
        let cfg = &self.config;
        let n0 = self.cloud.len();
        let size_threshold = cfg
            .size_threshold
            .unwrap_or(cfg.percent_dense * self.scene_extent);

        let mut keep = vec![true; n0];
        let mut pruned = 0usize;
        for i in 0..n0 {
            if self.cloud.opacity(i).as_f64() < cfg.eps_prune {
                keep[i] = false;
                pruned += 1;
            }
        }

        // High-gradient candidates, strongest first; the cap is enforced by
        // dropping the weakest candidates.
        let mut candidates: Vec<(f64, usize)> = (0..n0)
            .filter(|&i| keep[i] && self.visible_count[i] > 0)
            .map(|i| {
                (
                    self.grad_norm_accum[i] / self.visible_count[i] as f64,
                    i,
                )
            })
            .filter(|&(mean, _)| mean > cfg.tau_grad)
            .collect();
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

        let mut budget = cfg.max_points.saturating_sub(n0 - pruned);
        let mut rng = StdRng::seed_from_u64(mix_seed(cfg.seed, SALT_DENSIFY ^ (step as u64)));
        let mut cloned = 0usize;
        let mut split = 0usize;
        let log_div = sc::<T>(cfg.split_scale_divisor.ln());

        for &(_, i) in &candidates {
            if budget == 0 {
                break;
            }
            let scale = self.cloud.scale(i);
            let max_scale = scale[0].max(scale[1]).max(scale[2]).as_f64();
            if max_scale <= size_threshold {
                self.cloud.push_copy_of(i);
                cloned += 1;
            } else {
                // Two children drawn from the parent Gaussian, scales shrunk.
                let rot = quat_to_rot(quat_normalize(self.cloud.rotations[i]));
                for _ in 0..2 {
                    let xi = [
                        sc::<T>(gauss(&mut rng)) * scale[0],
                        sc::<T>(gauss(&mut rng)) * scale[1],
                        sc::<T>(gauss(&mut rng)) * scale[2],
                    ];
                    let offset = mat33_vec3(&rot, xi);
                    self.cloud.push_copy_of(i);
                    let new = self.cloud.len() - 1;
                    for a in 0..3 {
                        self.cloud.positions[new][a] += offset[a];
                        self.cloud.log_scales[new][a] -= log_div;
                    }
                }
                keep[i] = false;
                split += 1;
            }
            budget -= 1;
        }

        // Children keep their rows; split parents and pruned points go away.
        let added = self.cloud.len() - n0;
        keep.extend(std::iter::repeat(true).take(added));
        let mapping: Vec<Option<usize>> = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(old, _)| if old < n0 { Some(old) } else { None })
            .collect();
        self.cloud.retain(&keep);
        self.cloud.assert_consistent();

        self.adam_positions.remap(&mapping, 3);
        self.adam_rotations.remap(&mapping, 4);
        self.adam_log_scales.remap(&mapping, 3);
        self.adam_opacity.remap(&mapping, 1);
        self.adam_sh.remap(&mapping, self.cloud.sh_coeffs_per_point());
        self.adam_features.remap(&mapping, self.cloud.feature_dim);

        let n = self.cloud.len();
        self.grad_norm_accum = vec![0.0; n];
        self.visible_count = vec![0; n];
        self.index = SpatialIndex::build(&self.cloud.positions)?;

        Ok(DensifyStats {
            cloned,
            split,
            pruned,
            points_after: n,
        })
    }
}

/// Standard normal sample via Box-Muller.
fn gauss(rng: &mut StdRng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Intrinsics, Pose, SparsePoint, View};
    use crate::image::Image;
    use crate::math::logit;
    use crate::trainer::{Scene, TrainConfig, Trainer};

    fn tiny_scene(n: usize) -> Scene<f64> {
        let mut points = Vec::new();
        for i in 0..n {
            points.push(SparsePoint {
                position: [
                    (i % 5) as f64 * 0.4 - 0.8,
                    (i / 5) as f64 * 0.4 - 0.8,
                    3.0 + (i % 3) as f64 * 0.2,
                ],
                color: [0.3, 0.6, 0.4],
            });
        }
        let intrinsics = Intrinsics::new(40.0, 40.0, 16.0, 16.0, 32, 32).unwrap();
        let view = View {
            id: "v0".to_string(),
            intrinsics,
            pose: Pose::identity(),
            image: Image::zeros(32, 32, 3),
            label: None,
            pseudo: None,
        };
        Scene {
            views: vec![view],
            init_points: points,
            num_classes: 3,
        }
    }

    #[test]
    fn no_candidates_is_a_noop() {
        let scene = tiny_scene(20);
        let mut trainer = Trainer::new(&scene, &TrainConfig::default()).unwrap();
        let before = trainer.cloud.clone();
        let stats = trainer.densify_and_prune(2000).unwrap();
        assert_eq!(stats, DensifyStats {
            cloned: 0,
            split: 0,
            pruned: 0,
            points_after: 20,
        });
        assert_eq!(trainer.cloud, before);
    }

    #[test]
    fn prunes_transparent_points() {
        let scene = tiny_scene(10);
        let mut trainer = Trainer::new(&scene, &TrainConfig::default()).unwrap();
        trainer.cloud.opacity_logits[3] = logit(0.001);
        trainer.cloud.opacity_logits[7] = logit(0.002);
        let stats = trainer.densify_and_prune(2000).unwrap();
        assert_eq!(stats.pruned, 2);
        assert_eq!(trainer.cloud.len(), 8);
        assert_eq!(trainer.adam_opacity.len(), 8);
    }

    #[test]
    fn splits_large_points_and_children_inherit_features() {
        let scene = tiny_scene(6);
        let mut config = TrainConfig::default();
        config.size_threshold = Some(0.05);
        let mut trainer = Trainer::new(&scene, &config).unwrap();
        // Make point 2 large and high-gradient.
        trainer.cloud.log_scales[2] = [0.0, 0.0, 0.0]; // scale 1 > 0.05
        trainer.grad_norm_accum[2] = 1.0;
        trainer.visible_count[2] = 1;
        let parent_features: Vec<f64> = trainer.cloud.feature_of(2).to_vec();
        let parent_ls_minus = trainer.cloud.log_scales[2][0] - 1.6f64.ln();

        let stats = trainer.densify_and_prune(2000).unwrap();
        assert_eq!(stats.split, 1);
        assert_eq!(stats.cloned, 0);
        // 6 - 1 parent + 2 children.
        assert_eq!(trainer.cloud.len(), 7);
        // Children are the last two rows.
        for child in 5..7 {
            assert_eq!(trainer.cloud.feature_of(child), parent_features.as_slice());
            assert!((trainer.cloud.log_scales[child][0] - parent_ls_minus).abs() < 1e-12);
        }
    }

    #[test]
    fn clones_small_points_verbatim() {
        let scene = tiny_scene(6);
        let mut config = TrainConfig::default();
        config.size_threshold = Some(10.0); // everything counts as small
        let mut trainer = Trainer::new(&scene, &config).unwrap();
        trainer.grad_norm_accum[1] = 0.5;
        trainer.visible_count[1] = 1;
        let stats = trainer.densify_and_prune(4000).unwrap();
        assert_eq!(stats.cloned, 1);
        assert_eq!(trainer.cloud.len(), 7);
        assert_eq!(trainer.cloud.positions[6], trainer.cloud.positions[1]);
        assert_eq!(
            trainer.cloud.feature_of(6),
            trainer.cloud.feature_of(1)
        );
    }

    #[test]
    fn cap_is_never_exceeded() {
        let scene = tiny_scene(10);
        let mut config = TrainConfig::default();
        config.max_points = 12;
        config.size_threshold = Some(10.0);
        let mut trainer = Trainer::new(&scene, &config).unwrap();
        for i in 0..10 {
            trainer.grad_norm_accum[i] = 1.0 + i as f64;
            trainer.visible_count[i] = 1;
        }
        let stats = trainer.densify_and_prune(2000).unwrap();
        assert_eq!(stats.points_after, 12);
        assert_eq!(stats.cloned, 2);
        // The strongest-gradient candidates win the budget.
        assert_eq!(trainer.cloud.positions[10], trainer.cloud.positions[9]);
        assert_eq!(trainer.cloud.positions[11], trainer.cloud.positions[8]);
    }
}
