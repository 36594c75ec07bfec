//! Direct windowed D-SSIM: one explicit 11x11 pass per window, no separable
//! convolution, no shared code with the fast path.

use semsplat_core::image::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// `(1 - SSIM) / 2` over valid windows, per channel, averaged.
pub fn reference_dssim(rendered: &Image<f64>, target: &Image<f64>) -> f64 {
    assert!(rendered.same_shape(target));
    let mut kernel = [0.0f64; WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in kernel.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    kernel.iter_mut().for_each(|v| *v /= sum);

    let (h, w, channels) = (rendered.h, rendered.w, rendered.c);
    let (ho, wo) = (h - (WINDOW - 1), w - (WINDOW - 1));
    let mut acc = 0.0;
    for ch in 0..channels {
        for y0 in 0..ho {
            for x0 in 0..wo {
                let mut mx = 0.0;
                let mut my = 0.0;
                let mut mxx = 0.0;
                let mut myy = 0.0;
                let mut mxy = 0.0;
                for dy in 0..WINDOW {
                    for dx in 0..WINDOW {
                        let wgt = kernel[dy] * kernel[dx];
                        let xv = rendered.at(y0 + dy, x0 + dx, ch);
                        let yv = target.at(y0 + dy, x0 + dx, ch);
                        mx += wgt * xv;
                        my += wgt * yv;
                        mxx += wgt * xv * xv;
                        myy += wgt * yv * yv;
                        mxy += wgt * xv * yv;
                    }
                }
                let var_x = mxx - mx * mx;
                let var_y = myy - my * my;
                let cov = mxy - mx * my;
                acc += (2.0 * mx * my + C1) * (2.0 * cov + C2)
                    / ((mx * mx + my * my + C1) * (var_x + var_y + C2));
            }
        }
    }
    (1.0 - acc / (ho * wo * channels) as f64) / 2.0
}
