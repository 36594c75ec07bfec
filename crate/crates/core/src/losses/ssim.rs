//! Structural-dissimilarity loss `(1 - SSIM) / 2` with the reference
//! constants: 11x11 Gaussian window (sigma 1.5), C1 = (0.01 L)^2,
//! C2 = (0.03 L)^2, dynamic range L = 1. Statistics are computed per channel
//! over fully interior (valid) windows and averaged.


use super::LossError;
use crate::image::Image;
use crate::math::sc;
use crate::Scalar;

pub const SSIM_WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian_kernel<T: Scalar>() -> [T; SSIM_WINDOW] {
    let mut k = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SIGMA * SIGMA)).exp();
        sum += *v;
    }
    let mut out = [T::zero(); SSIM_WINDOW];
    for (o, v) in out.iter_mut().zip(&k) {
        *o = sc(*v / sum);
    }
    out
}

/// Horizontal valid convolution: `(h, w)` -> `(h, w - 10)`.
fn conv_rows_valid<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let wo = w - (SSIM_WINDOW - 1);
    let mut out = vec![T::zero(); h * wo];
    out.chunks_exact_mut(wo)
        .enumerate()
        .for_each(|(y, orow)| {
            let row = &src[y * w..(y + 1) * w];
            for (x, o) in orow.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (b, kv) in k.iter().enumerate() {
                    acc += *kv * row[x + b];
                }
                *o = acc;
            }
        });

    out
}

/// Vertical valid convolution: `(h, w)` -> `(h - 10, w)`.
fn conv_cols_valid<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let ho = h - (SSIM_WINDOW - 1);
    let mut out = vec![T::zero(); ho * w];
    out.chunks_exact_mut(w).enumerate().for_each(|(y, orow)| {
        for (b, kv) in k.iter().enumerate() {
            let srow = &src[(y + b) * w..(y + b + 1) * w];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += *kv * *s;
            }
        }
    });
    out
}

fn conv_valid<T: Scalar>(src: &[T], h: usize, w: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    let tmp = conv_rows_valid(src, h, w, k);
    conv_cols_valid(&tmp, h, w - (SSIM_WINDOW - 1), k)
}

/// Adjoint of `conv_valid`, written as a gather over output pixels:
/// `out[p] = sum_w K[p - w] * q[w]` over valid windows `w`.
fn scatter_valid<T: Scalar>(q: &[T], ho: usize, wo: usize, k: &[T; SSIM_WINDOW]) -> Vec<T> {
    // Vertical gather: (ho, wo) -> (ho + 10, wo).
    let h = ho + SSIM_WINDOW - 1;
    let mut tmp = vec![T::zero(); h * wo];
    tmp.chunks_exact_mut(wo).enumerate().for_each(|(i, orow)| {
        for (b, kv) in k.iter().enumerate() {
            // Contribution from window row i - b.
            let Some(src_row) = i.checked_sub(b).filter(|r| *r < ho) else {
                continue;
            };
            let srow = &q[src_row * wo..(src_row + 1) * wo];
            for (o, s) in orow.iter_mut().zip(srow) {
                *o += *kv * *s;
            }
        }
    });
    // Horizontal gather: (h, wo) -> (h, wo + 10).
    let w = wo + SSIM_WINDOW - 1;
    let mut out = vec![T::zero(); h * w];
    out.chunks_exact_mut(w).enumerate().for_each(|(y, orow)| {
        let srow = &tmp[y * wo..(y + 1) * wo];
        for (j, o) in orow.iter_mut().enumerate() {
            let mut acc = T::zero();
            for (b, kv) in k.iter().enumerate() {
                let Some(x) = j.checked_sub(b).filter(|x| *x < wo) else {
                    continue;
                };
                acc += *kv * srow[x];
            }
            *o = acc;
        }
    });
    out
}

/// `(1 - SSIM(rendered, target)) / 2` and its adjoint w.r.t. `rendered`.
pub fn dssim_loss<T: Scalar>(
    rendered: &Image<T>,
    target: &Image<T>,
) -> Result<(T, Image<T>), LossError> {
    if !rendered.same_shape(target) {
        return Err(LossError::ShapeMismatch(format!(
            "dssim: {}x{}x{} vs {}x{}x{}",
            rendered.h, rendered.w, rendered.c, target.h, target.w, target.c
        )));
    }
    let (h, w, channels) = (rendered.h, rendered.w, rendered.c);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(LossError::ImageTooSmall {
            h,
            w,
            window: SSIM_WINDOW,
        });
    }
    let kernel = gaussian_kernel::<T>();
    let (ho, wo) = (h - (SSIM_WINDOW - 1), w - (SSIM_WINDOW - 1));
    let n_windows = ho * wo;
    let c1 = sc::<T>(C1);
    let c2 = sc::<T>(C2);
    let two = sc::<T>(2.0);

    let mut adjoint = Image::zeros(h, w, channels);
    let mut ssim_sum = T::zero();
    let mut xplane = vec![T::zero(); h * w];
    let mut yplane = vec![T::zero(); h * w];
    let mut xx = vec![T::zero(); h * w];
    let mut yy = vec![T::zero(); h * w];
    let mut xy = vec![T::zero(); h * w];

    // d(loss)/d(ssim at one window/channel).
    let dloss = -T::one() / (two * T::from_usize(n_windows * channels).unwrap());

    for ch in 0..channels {
        for i in 0..h * w {
            let xv = rendered.data[i * channels + ch];
            let yv = target.data[i * channels + ch];
            xplane[i] = xv;
            yplane[i] = yv;
            xx[i] = xv * xv;
            yy[i] = yv * yv;
            xy[i] = xv * yv;
        }
        let mu_x = conv_valid(&xplane, h, w, &kernel);
        let mu_y = conv_valid(&yplane, h, w, &kernel);
        let m_xx = conv_valid(&xx, h, w, &kernel);
        let m_yy = conv_valid(&yy, h, w, &kernel);
        let m_xy = conv_valid(&xy, h, w, &kernel);

        let mut q0 = vec![T::zero(); n_windows];
        let mut qx = vec![T::zero(); n_windows];
        let mut qy = vec![T::zero(); n_windows];
        for i in 0..n_windows {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = m_xx[i] - mx * mx;
            let var_y = m_yy[i] - my * my;
            let cov = m_xy[i] - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * cov + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = var_x + var_y + c2;
            let denom = b1 * b2;
            let ssim = a1 * a2 / denom;
            ssim_sum += ssim;

            // dssim/dx_k = w_k * (q0 + qy * y_k + qx * x_k), per window.
            q0[i] = dloss
                * (two * my * a2 / denom - two * a1 * my / denom - two * ssim * mx / b1
                    + two * ssim * mx / b2);
            qy[i] = dloss * (two * a1 / denom);
            qx[i] = dloss * (-two * ssim / b2);
        }

        let s0 = scatter_valid(&q0, ho, wo, &kernel);
        let sx = scatter_valid(&qx, ho, wo, &kernel);
        let sy = scatter_valid(&qy, ho, wo, &kernel);
        for i in 0..h * w {
            adjoint.data[i * channels + ch] =
                s0[i] + sx[i] * xplane[i] + sy[i] * yplane[i];
        }
    }

    let mean_ssim = ssim_sum / T::from_usize(n_windows * channels).unwrap();
    let loss = (T::one() - mean_ssim) / two;
    Ok((loss, adjoint))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct per-window SSIM, quadratic cost; the reference the fast path
    /// is checked against.
    pub fn brute_force_dssim(rendered: &Image<f64>, target: &Image<f64>) -> f64 {
        let kernel = gaussian_kernel::<f64>();
        let (h, w, channels) = (rendered.h, rendered.w, rendered.c);
        let (ho, wo) = (h - 10, w - 10);
        let mut sum = 0.0;
        for ch in 0..channels {
            for y0 in 0..ho {
                for x0 in 0..wo {
                    let mut mx = 0.0;
                    let mut my = 0.0;
                    let mut mxx = 0.0;
                    let mut myy = 0.0;
                    let mut mxy = 0.0;
                    for dy in 0..SSIM_WINDOW {
                        for dx in 0..SSIM_WINDOW {
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
                    sum += (2.0 * mx * my + C1) * (2.0 * cov + C2)
                        / ((mx * mx + my * my + C1) * (var_x + var_y + C2));
                }
            }
        }
        (1.0 - sum / (ho * wo * channels) as f64) / 2.0
    }

    fn wavy(h: usize, w: usize, c: usize, phase: f64) -> Image<f64> {
        let mut img = Image::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    *img.at_mut(y, x, ch) = 0.5
                        + 0.4
                            * ((x as f64 * 0.7 + y as f64 * 0.31 + ch as f64 + phase).sin());
                }
            }
        }
        img
    }

    #[test]
    fn identical_images_have_zero_loss() {
        let img = wavy(16, 14, 3, 0.0);
        let (loss, _) = dssim_loss(&img, &img).unwrap();
        assert!(loss.abs() < 1e-12, "{loss}");
    }

    #[test]
    fn constant_contrast_pair_matches_reference_oracle() {
        let a = Image::from_vec(12, 12, 1, vec![0.9; 144]);
        let b = Image::from_vec(12, 12, 1, vec![0.1; 144]);
        let (loss, _) = dssim_loss(&a, &b).unwrap();
        let want = brute_force_dssim(&a, &b);
        assert!((loss - want).abs() < 1e-8, "{loss} vs {want}");
        assert!(loss > 0.0);
    }

    #[test]
    fn random_pair_matches_reference_oracle() {
        let a = wavy(15, 13, 3, 0.0);
        let b = wavy(15, 13, 3, 1.3);
        let (loss, _) = dssim_loss(&a, &b).unwrap();
        let want = brute_force_dssim(&a, &b);
        assert!((loss - want).abs() < 1e-8, "{loss} vs {want}");
    }

    #[test]
    fn image_too_small_is_error() {
        let a = Image::<f64>::zeros(8, 16, 1);
        assert!(matches!(
            dssim_loss(&a, &a),
            Err(LossError::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let a = wavy(12, 12, 2, 0.4);
        let b = wavy(12, 12, 2, 2.0);
        let (_, adjoint) = dssim_loss(&a, &b).unwrap();
        let h = 1e-5;
        // Spot-check a grid of pixels, including borders.
        for &(y, x, ch) in &[(0, 0, 0usize), (5, 6, 1), (11, 11, 0), (3, 0, 1), (6, 11, 0)] {
            let mut ap = a.clone();
            *ap.at_mut(y, x, ch) += h;
            let mut am = a.clone();
            *am.at_mut(y, x, ch) -= h;
            let (lp, _) = dssim_loss(&ap, &b).unwrap();
            let (lm, _) = dssim_loss(&am, &b).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let got = adjoint.at(y, x, ch);
            let diff = (fd - got).abs();
            assert!(
                diff < 1e-7 || diff / fd.abs().max(got.abs()) < 1e-4,
                "({y},{x},{ch}): fd {fd} vs {got}"
            );
        }
    }
}
