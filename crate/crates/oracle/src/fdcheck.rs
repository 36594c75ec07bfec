//! Central-finite-difference verification of every analytic gradient in the
//! pipeline. All checks run in f64 with step 1e-5, comparing at relative
//! tolerance 1e-4 with an absolute floor of 1e-7 near zero.

use semsplat_core::cloud::GaussianCloud;
use semsplat_core::decoder::{decode, decode_backward, SemanticDecoder};
use semsplat_core::image::Image;
use semsplat_core::rasterizer::{render, render_backward, RenderOptions};
use semsplat_core::{Intrinsics, Pose};

use crate::close;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;

#[derive(Debug, Default)]
pub struct FdReport {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl FdReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn compare(&mut self, what: String, analytic: f64, fd: f64) {
        self.checked += 1;
        if !close(analytic, fd, REL_TOL, ABS_FLOOR) {
            self.failures
                .push(format!("{what}: analytic {analytic:.9e} vs fd {fd:.9e}"));
        }
    }
}

fn seq_opts() -> RenderOptions {
    RenderOptions {
        threads: 1,
        ..Default::default()
    }
}

/// Scalar probe loss: rendered color and feature maps dotted with fixed
/// adjoint images.
pub fn render_probe_loss(
    cloud: &GaussianCloud<f64>,
    k: &Intrinsics<f64>,
    pose: &Pose<f64>,
    adj_color: &Image<f64>,
    adj_feature: &Image<f64>,
) -> f64 {
    let out = render(cloud, k, pose, &seq_opts());
    let mut acc = 0.0;
    for (v, a) in out.color.data.iter().zip(&adj_color.data) {
        acc += v * a;
    }
    for (v, a) in out.features.data.iter().zip(&adj_feature.data) {
        acc += v * a;
    }
    acc
}

/// Checks the full rasterizer backward pass against finite differences of
/// the probe loss, over every entry of all six attribute groups.
pub fn check_render_gradients(
    cloud: &GaussianCloud<f64>,
    k: &Intrinsics<f64>,
    pose: &Pose<f64>,
    adj_color: &Image<f64>,
    adj_feature: &Image<f64>,
) -> FdReport {
    let opts = seq_opts();
    let out = render(cloud, k, pose, &opts);
    let bundle = render_backward(cloud, k, pose, &out, adj_color, adj_feature, &opts)
        .expect("adjoint shapes match");

    let mut report = FdReport::default();
    let mut work = cloud.clone();
    let h = FD_STEP;

    let probe = |c: &GaussianCloud<f64>| render_probe_loss(c, k, pose, adj_color, adj_feature);

    for i in 0..cloud.len() {
        for a in 0..3 {
            let x0 = work.positions[i][a];
            work.positions[i][a] = x0 + h;
            let fp = probe(&work);
            work.positions[i][a] = x0 - h;
            let fm = probe(&work);
            work.positions[i][a] = x0;
            report.compare(
                format!("position[{i}][{a}]"),
                bundle.positions[i][a],
                (fp - fm) / (2.0 * h),
            );
        }
        for a in 0..4 {
            let x0 = work.rotations[i][a];
            work.rotations[i][a] = x0 + h;
            let fp = probe(&work);
            work.rotations[i][a] = x0 - h;
            let fm = probe(&work);
            work.rotations[i][a] = x0;
            report.compare(
                format!("rotation[{i}][{a}]"),
                bundle.rotations[i][a],
                (fp - fm) / (2.0 * h),
            );
        }
        for a in 0..3 {
            let x0 = work.log_scales[i][a];
            work.log_scales[i][a] = x0 + h;
            let fp = probe(&work);
            work.log_scales[i][a] = x0 - h;
            let fm = probe(&work);
            work.log_scales[i][a] = x0;
            report.compare(
                format!("log_scale[{i}][{a}]"),
                bundle.log_scales[i][a],
                (fp - fm) / (2.0 * h),
            );
        }
        {
            let x0 = work.opacity_logits[i];
            work.opacity_logits[i] = x0 + h;
            let fp = probe(&work);
            work.opacity_logits[i] = x0 - h;
            let fm = probe(&work);
            work.opacity_logits[i] = x0;
            report.compare(
                format!("opacity_logit[{i}]"),
                bundle.opacity_logits[i],
                (fp - fm) / (2.0 * h),
            );
        }
    }
    for idx in 0..cloud.sh_coeffs.len() {
        let x0 = work.sh_coeffs[idx];
        work.sh_coeffs[idx] = x0 + h;
        let fp = probe(&work);
        work.sh_coeffs[idx] = x0 - h;
        let fm = probe(&work);
        work.sh_coeffs[idx] = x0;
        report.compare(
            format!("sh_coeff[{idx}]"),
            bundle.sh_coeffs[idx],
            (fp - fm) / (2.0 * h),
        );
    }
    for idx in 0..cloud.features.len() {
        let x0 = work.features[idx];
        work.features[idx] = x0 + h;
        let fp = probe(&work);
        work.features[idx] = x0 - h;
        let fm = probe(&work);
        work.features[idx] = x0;
        report.compare(
            format!("feature[{idx}]"),
            bundle.features[idx],
            (fp - fm) / (2.0 * h),
        );
    }
    report
}

/// Checks `decode_backward` against finite differences: every decoder
/// parameter and every input feature entry.
pub fn check_decoder_gradients(
    decoder: &SemanticDecoder<f64>,
    features: &Image<f64>,
    adj_logits: &Image<f64>,
) -> FdReport {
    let probe = |d: &SemanticDecoder<f64>, f: &Image<f64>| -> f64 {
        let logits = decode(f, d, 1).expect("shapes match");
        logits.data.iter().zip(&adj_logits.data).map(|(v, a)| v * a).sum()
    };
    let (d_features, grads) =
        decode_backward(features, decoder, adj_logits, 1).expect("shapes match");

    let mut report = FdReport::default();
    let h = FD_STEP;
    let mut dwork = decoder.clone();
    for li in 0..decoder.layers.len() {
        for wi in 0..decoder.layers[li].weight.len() {
            let x0 = dwork.layers[li].weight[wi];
            dwork.layers[li].weight[wi] = x0 + h;
            let fp = probe(&dwork, features);
            dwork.layers[li].weight[wi] = x0 - h;
            let fm = probe(&dwork, features);
            dwork.layers[li].weight[wi] = x0;
            report.compare(
                format!("layer{li}.weight[{wi}]"),
                grads.weights[li][wi],
                (fp - fm) / (2.0 * h),
            );
        }
        for bi in 0..decoder.layers[li].bias.len() {
            let x0 = dwork.layers[li].bias[bi];
            dwork.layers[li].bias[bi] = x0 + h;
            let fp = probe(&dwork, features);
            dwork.layers[li].bias[bi] = x0 - h;
            let fm = probe(&dwork, features);
            dwork.layers[li].bias[bi] = x0;
            report.compare(
                format!("layer{li}.bias[{bi}]"),
                grads.biases[li][bi],
                (fp - fm) / (2.0 * h),
            );
        }
    }
    let mut fwork = features.clone();
    for idx in 0..features.data.len() {
        let x0 = fwork.data[idx];
        fwork.data[idx] = x0 + h;
        let fp = probe(decoder, &fwork);
        fwork.data[idx] = x0 - h;
        let fm = probe(decoder, &fwork);
        fwork.data[idx] = x0;
        report.compare(
            format!("feature_in[{idx}]"),
            d_features.data[idx],
            (fp - fm) / (2.0 * h),
        );
    }
    report
}

/// Checks a loss's adjoint against finite differences over its input image.
/// `eval` must return the scalar loss for the given input.
pub fn check_image_adjoint(
    input: &Image<f64>,
    adjoint: &Image<f64>,
    mut eval: impl FnMut(&Image<f64>) -> f64,
) -> FdReport {
    let mut report = FdReport::default();
    let mut work = input.clone();
    let h = FD_STEP;
    for idx in 0..input.data.len() {
        let x0 = work.data[idx];
        work.data[idx] = x0 + h;
        let fp = eval(&work);
        work.data[idx] = x0 - h;
        let fm = eval(&work);
        work.data[idx] = x0;
        report.compare(
            format!("input[{idx}]"),
            adjoint.data[idx],
            (fp - fm) / (2.0 * h),
        );
    }
    report
}

/// Same as `check_image_adjoint` for flat parameter vectors.
pub fn check_vec_adjoint(
    input: &[f64],
    adjoint: &[f64],
    mut eval: impl FnMut(&[f64]) -> f64,
) -> FdReport {
    let mut report = FdReport::default();
    let mut work = input.to_vec();
    let h = FD_STEP;
    for idx in 0..input.len() {
        let x0 = work[idx];
        work[idx] = x0 + h;
        let fp = eval(&work);
        work[idx] = x0 - h;
        let fm = eval(&work);
        work[idx] = x0;
        report.compare(format!("param[{idx}]"), adjoint[idx], (fp - fm) / (2.0 * h));
    }
    report
}
