//! Forward-renderer verification against the naive per-pixel oracle, plus
//! the blending-weight invariants and determinism properties.

use semsplat_core::rasterizer::{
    alpha_at, depth_sort, project, render, RenderOptions, EARLY_STOP_TRANSMITTANCE,
};
use semsplat_oracle::blend::reference_render;
use semsplat_oracle::scenes::{random_scene, ScenePreset};

fn opts(threads: usize) -> RenderOptions {
    RenderOptions {
        threads,
        ..Default::default()
    }
}

#[test]
fn tiled_renderer_matches_reference_on_random_scenes() {
    for seed in 0..100u64 {
        let preset = ScenePreset::equivalence(1 + (seed as usize * 7) % 40, 24, 20);
        let (cloud, k, pose) = random_scene(&preset, seed);
        let fast = render(&cloud, &k, &pose, &opts(0));
        let slow = reference_render(&cloud, &k, &pose, Some(EARLY_STOP_TRANSMITTANCE));
        let worst = fast
            .color
            .data
            .iter()
            .zip(&slow.color.data)
            .chain(fast.features.data.iter().zip(&slow.features.data))
            .chain(fast.alpha.data.iter().zip(&slow.alpha.data))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-6, "scene {seed}: max channel deviation {worst}");
    }
}

#[test]
fn renderer_is_identical_across_thread_counts() {
    for seed in [3u64, 42, 77] {
        let preset = ScenePreset::equivalence(30, 32, 24);
        let (cloud, k, pose) = random_scene(&preset, seed);
        let seq = render(&cloud, &k, &pose, &opts(1));
        let par = render(&cloud, &k, &pose, &opts(0));
        assert_eq!(seq.color.data, par.color.data, "seed {seed}");
        assert_eq!(seq.features.data, par.features.data);
        assert_eq!(seq.alpha.data, par.alpha.data);
    }
}

#[test]
fn blending_weights_are_bounded_and_sum_matches_alpha() {
    for seed in 0..100u64 {
        let preset = ScenePreset::equivalence(1 + (seed as usize * 5) % 30, 16, 16);
        let (cloud, k, pose) = random_scene(&preset, 10_000 + seed);
        let out = render(&cloud, &k, &pose, &opts(1));
        for y in 0..out.color.h {
            for x in 0..out.color.w {
                let contributors = out.contributors.pixel(y * out.color.w + x);
                let px = [x as f64 + 0.5, y as f64 + 0.5];
                let mut transmittance = 1.0;
                let mut sum = 0.0;
                for &si in contributors {
                    let alpha = alpha_at(&out.splats[si as usize], px).unwrap();
                    let weight = alpha * transmittance;
                    assert!((0.0..=0.99).contains(&alpha), "alpha {alpha}");
                    assert!(weight >= 0.0 && weight <= 0.99);
                    sum += weight;
                    transmittance *= 1.0 - alpha;
                }
                assert!(sum <= 1.0, "weight sum {sum} > 1");
                let stored = out.alpha.at(y, x, 0);
                assert!(
                    (stored - sum).abs() < 1e-9,
                    "alpha map {stored} vs replay {sum}"
                );
            }
        }
    }
}

#[test]
fn early_termination_error_is_bounded() {
    for seed in 0..20u64 {
        // Stacks of near-opaque splats so termination actually fires.
        let preset = ScenePreset::equivalence(60, 12, 12);
        let (mut cloud, k, pose) = random_scene(&preset, 40_000 + seed);
        cloud.opacity_logits.iter_mut().for_each(|v| *v = 3.0);
        let with_stop = render(&cloud, &k, &pose, &opts(1));
        let no_stop = reference_render(&cloud, &k, &pose, None);
        let worst = with_stop
            .color
            .data
            .iter()
            .zip(&no_stop.color.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(worst < 1e-3, "seed {seed}: early-stop deviation {worst}");
    }
}

#[test]
fn input_order_does_not_change_output() {
    let preset = ScenePreset::equivalence(25, 16, 16);
    let (cloud, k, pose) = random_scene(&preset, 5);
    let sorted_a = depth_sort(project(&cloud, &k, &pose));
    let mut splats = project(&cloud, &k, &pose);
    splats.reverse();
    let sorted_b = depth_sort(splats);
    for (a, b) in sorted_a.iter().zip(&sorted_b) {
        assert_eq!(a.source_index, b.source_index);
        assert_eq!(a.mean2d, b.mean2d);
        assert_eq!(a.depth, b.depth);
    }
}

#[test]
fn uncovered_pixels_are_black_with_zero_features() {
    // One tiny splat in a corner leaves the rest of the frame untouched.
    let preset = ScenePreset::equivalence(1, 32, 32);
    let (mut cloud, k, pose) = random_scene(&preset, 9);
    cloud.log_scales[0] = [-4.0, -4.0, -4.0];
    let out = render(&cloud, &k, &pose, &opts(1));
    let mut uncovered = 0;
    for y in 0..32 {
        for x in 0..32 {
            if out.contributors.pixel(y * 32 + x).is_empty() {
                uncovered += 1;
                assert_eq!(out.color.pixel(y, x), &[0.0, 0.0, 0.0]);
                assert!(out.features.pixel(y, x).iter().all(|&v| v == 0.0));
                assert_eq!(out.alpha.at(y, x, 0), 0.0);
            }
        }
    }
    assert!(uncovered > 500, "expected a mostly-empty frame");
}

#[test]
fn two_splat_blend_hand_case() {
    // Two splats, front alpha 0.5 and back alpha 0.5 at the probe pixel:
    // C = 0.5 c1 + 0.25 c2.
    let preset = ScenePreset::gradient(2);
    let (mut cloud, k, pose) = random_scene(&preset, 77);
    // Opacity 0.5 exactly, huge flat footprints so alpha ~ opacity.
    cloud.opacity_logits = vec![0.0, 0.0];
    cloud.log_scales = vec![[3.0; 3], [3.0; 3]];
    let out = render(&cloud, &k, &pose, &opts(1));
    let splats = depth_sort(project(&cloud, &k, &pose));
    assert_eq!(splats.len(), 2);
    let (y, x) = (4, 4);
    let px = [x as f64 + 0.5, y as f64 + 0.5];
    let a1 = alpha_at(&splats[0], px).unwrap();
    let a2 = alpha_at(&splats[1], px).unwrap();
    let want: Vec<f64> = (0..3)
        .map(|ch| splats[0].color[ch] * a1 + splats[1].color[ch] * a2 * (1.0 - a1))
        .collect();
    for ch in 0..3 {
        assert!((out.color.at(y, x, ch) - want[ch]).abs() < 1e-12);
    }
    // With sigma = 0.5 and the huge footprint the alphas are within a hair
    // of 0.5, making the blend effectively 0.5 c1 + 0.25 c2.
    assert!((a1 - 0.5).abs() < 1e-3 && (a2 - 0.5).abs() < 1e-3);
}
