//! Per-pixel MLP that maps rendered semantic features to class logits.
//!
//! The default shape is 16 -> 32 (ReLU) -> C; a plain linear 16 -> C variant
//! is available by passing no hidden width. There is no spatial mixing:
//! every pixel goes through the same weights independently.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use thiserror::Error;

use crate::image::Image;
use crate::math::sc;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum DecoderError {
    #[error("decoder shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
}

use crate::math::dot_slices as dot;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    /// `out_dim x in_dim`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> DenseLayer<T> {
    fn init(in_dim: usize, out_dim: usize, rng: &mut StdRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            weight: (0..in_dim * out_dim)
                .map(|_| sc(rng.gen_range(-bound..bound)))
                .collect(),
            bias: vec![T::zero(); out_dim],
            in_dim,
            out_dim,
        }
    }

    #[inline]
    fn apply(&self, input: &[T], out: &mut [T]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim).zip(&self.bias))
        {
            *o = *b + dot(row, input);
        }
    }
}

/// ReLU MLP over feature channels; hidden layers use ReLU, the output layer
/// is affine.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDecoder<T> {
    pub layers: Vec<DenseLayer<T>>,
}

/// Gradients mirroring the decoder's layers.
#[derive(Debug, Clone)]
pub struct DecoderGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> DecoderGrads<T> {
    pub fn zeros_like(decoder: &SemanticDecoder<T>) -> Self {
        Self {
            weights: decoder
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weight.len()])
                .collect(),
            biases: decoder
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        }
    }

    fn add_assign(mut self, other: Self) -> Self {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
        self
    }
}

impl<T: Scalar> SemanticDecoder<T> {
    /// `hidden = Some(width)` builds feature -> hidden (ReLU) -> classes;
    /// `None` builds a single affine layer.
    pub fn new(feature_dim: usize, hidden: Option<usize>, classes: usize, seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let layers = match hidden {
            Some(h) => vec![
                DenseLayer::init(feature_dim, h, &mut rng),
                DenseLayer::init(h, classes, &mut rng),
            ],
            None => vec![DenseLayer::init(feature_dim, classes, &mut rng)],
        };
        Self { layers }
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Runs one feature vector through the MLP; `scratch[li]` ends up holding
    /// layer `li`'s output (post-ReLU for hidden layers).
    pub fn forward_one(&self, input: &[T], scratch: &mut Vec<Vec<T>>) {
        scratch.resize(self.layers.len(), Vec::new());
        for (li, layer) in self.layers.iter().enumerate() {
            let (head, tail) = scratch.split_at_mut(li);
            let buf = &mut tail[0];
            buf.resize(layer.out_dim, T::zero());
            let src: &[T] = if li == 0 { input } else { &head[li - 1] };
            layer.apply(src, buf);
            if li + 1 < self.layers.len() {
                for v in buf.iter_mut() {
                    *v = v.max(T::zero());
                }
            }
        }
    }
}

/// Applies the decoder to every pixel of a feature map.
pub fn decode<T: Scalar>(
    features: &Image<T>,
    decoder: &SemanticDecoder<T>,
    threads: usize,
) -> Result<Image<T>, DecoderError> {
    if features.c != decoder.feature_dim() {
        return Err(DecoderError::ShapeMismatch {
            expected: format!("{} feature channels", decoder.feature_dim()),
            got: format!("{}", features.c),
        });
    }
    let (h, w) = (features.h, features.w);
    let classes = decoder.classes();
    let mut logits = Image::zeros(h, w, classes);

    let run_row = |y: usize, out_row: &mut [T]| {
        let mut scratch: Vec<Vec<T>> = Vec::new();
        for x in 0..w {
            decoder.forward_one(features.pixel(y, x), &mut scratch);
            out_row[x * classes..(x + 1) * classes].copy_from_slice(scratch.last().unwrap());
        }
    };

    if threads == 1 {
        for (y, row) in logits.data.chunks_exact_mut(w * classes).enumerate() {
            run_row(y, row);
        }
    } else {
        logits
            .data
            .par_chunks_exact_mut(w * classes)
            .enumerate()
            .for_each(|(y, row)| run_row(y, row));
    }
    Ok(logits)
}

/// Backward through the per-pixel MLP: gradients w.r.t. the input feature
/// map and the decoder parameters.
pub fn decode_backward<T: Scalar>(
    features: &Image<T>,
    decoder: &SemanticDecoder<T>,
    dl_dlogits: &Image<T>,
    threads: usize,
) -> Result<(Image<T>, DecoderGrads<T>), DecoderError> {
    if features.c != decoder.feature_dim() {
        return Err(DecoderError::ShapeMismatch {
            expected: format!("{} feature channels", decoder.feature_dim()),
            got: format!("{}", features.c),
        });
    }
    if dl_dlogits.h != features.h || dl_dlogits.w != features.w
        || dl_dlogits.c != decoder.classes()
    {
        return Err(DecoderError::ShapeMismatch {
            expected: format!("{}x{}x{}", features.h, features.w, decoder.classes()),
            got: format!("{}x{}x{}", dl_dlogits.h, dl_dlogits.w, dl_dlogits.c),
        });
    }
    let (h, w) = (features.h, features.w);
    let fdim = features.c;
    let mut d_features = Image::zeros(h, w, fdim);

    // d_features rows are written disjointly; parameter gradients are reduced.
    let row_pass = |mut grads: DecoderGrads<T>, (y, d_feat_row): (usize, &mut [T])| {
        let mut scratch: Vec<Vec<T>> = Vec::new();
        let mut deltas: Vec<Vec<T>> = Vec::new();
        for x in 0..w {
            let input = features.pixel(y, x);
            decoder.forward_one(input, &mut scratch);
            backward_one(
                decoder,
                input,
                &scratch,
                dl_dlogits.pixel(y, x),
                &mut grads,
                &mut deltas,
                &mut d_feat_row[x * fdim..(x + 1) * fdim],
            );
        }
        grads
    };

    let grads = if threads == 1 {
        d_features
            .data
            .chunks_exact_mut(w * fdim)
            .enumerate()
            .fold(DecoderGrads::zeros_like(decoder), |g, pair| {
                row_pass(g, pair)
            })
    } else {
        d_features
            .data
            .par_chunks_exact_mut(w * fdim)
            .enumerate()
            .fold(|| DecoderGrads::zeros_like(decoder), |g, pair| row_pass(g, pair))
            .reduce(|| DecoderGrads::zeros_like(decoder), DecoderGrads::add_assign)
    };

    Ok((d_features, grads))
}

/// Backprop for one pixel. `activations[li]` holds layer `li`'s output after
/// its ReLU (hidden layers) or raw (final layer).
fn backward_one<T: Scalar>(
    decoder: &SemanticDecoder<T>,
    input: &[T],
    activations: &[Vec<T>],
    dl_dout: &[T],
    grads: &mut DecoderGrads<T>,
    deltas: &mut Vec<Vec<T>>,
    d_input: &mut [T],
) {
    let n = decoder.layers.len();
    deltas.resize(n, Vec::new());
    deltas[n - 1].clear();
    deltas[n - 1].extend_from_slice(dl_dout);

    for li in (0..n).rev() {
        let layer = &decoder.layers[li];
        let upstream: &[T] = if li == 0 { input } else { &activations[li - 1] };
        // Parameter gradients.
        {
            let delta = &deltas[li];
            let dw = &mut grads.weights[li];
            let db = &mut grads.biases[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                db[o] += *d;
                let row = &mut dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (wgt, x) in row.iter_mut().zip(upstream) {
                    *wgt += *d * *x;
                }
            }
        }
        // Input gradient of this layer (through ReLU gate for hidden layers).
        if li == 0 {
            for v in d_input.iter_mut() {
                *v = T::zero();
            }
            let delta = &deltas[0];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, w) in d_input.iter_mut().zip(row) {
                    *g += *d * *w;
                }
            }
        } else {
            let (lower, upper) = deltas.split_at_mut(li);
            let delta = &upper[0];
            let prev = &mut lower[li - 1];
            prev.clear();
            prev.resize(layer.in_dim, T::zero());
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, w) in prev.iter_mut().zip(row) {
                    *g += *d * *w;
                }
            }
            // ReLU gate: activations[li-1] is post-ReLU.
            for (g, a) in prev.iter_mut().zip(&activations[li - 1]) {
                if *a <= T::zero() {
                    *g = T::zero();
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_yield_bias() {
        let mut dec = SemanticDecoder::<f64>::new(4, None, 3, 0);
        dec.layers[0].weight.iter_mut().for_each(|w| *w = 0.0);
        dec.layers[0].bias = vec![0.1, -0.2, 0.3];
        let features = Image::from_vec(2, 2, 4, (0..16).map(|v| v as f64).collect());
        let logits = decode(&features, &dec, 1).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(logits.pixel(y, x), &[0.1, -0.2, 0.3]);
            }
        }
    }

    #[test]
    fn single_layer_matches_hand_product() {
        let mut dec = SemanticDecoder::<f64>::new(3, None, 2, 0);
        dec.layers[0].weight = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        dec.layers[0].bias = vec![0.25, -0.5];
        let features = Image::from_vec(1, 1, 3, vec![2.0, -1.0, 4.0]);
        let logits = decode(&features, &dec, 1).unwrap();
        // Row 0: 1*2 + 2*(-1) + 3*4 + 0.25 = 12.25
        // Row 1: -1*2 + 0.5*(-1) + 0*4 - 0.5 = -3.0
        assert_eq!(logits.pixel(0, 0), &[12.25, -3.0]);
    }

    #[test]
    fn decode_is_per_pixel() {
        let dec = SemanticDecoder::<f64>::new(4, Some(8), 3, 9);
        let mut features = Image::zeros(2, 3, 4);
        for (i, v) in features.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        let logits = decode(&features, &dec, 1).unwrap();
        // Swap two pixels and check the logits swap identically.
        let mut swapped = features.clone();
        for c in 0..4 {
            let a = swapped.at(0, 1, c);
            let b = swapped.at(1, 2, c);
            *swapped.at_mut(0, 1, c) = b;
            *swapped.at_mut(1, 2, c) = a;
        }
        let logits2 = decode(&swapped, &dec, 1).unwrap();
        assert_eq!(logits.pixel(0, 1), logits2.pixel(1, 2));
        assert_eq!(logits.pixel(1, 2), logits2.pixel(0, 1));
        assert_eq!(logits.pixel(0, 0), logits2.pixel(0, 0));
    }

    #[test]
    fn channel_mismatch_is_error() {
        let dec = SemanticDecoder::<f64>::new(4, None, 2, 0);
        let features = Image::zeros(2, 2, 5);
        assert!(matches!(
            decode(&features, &dec, 1),
            Err(DecoderError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn zero_adjoint_gives_zero_grads() {
        let dec = SemanticDecoder::<f64>::new(4, Some(6), 3, 1);
        let mut features = Image::zeros(3, 3, 4);
        for (i, v) in features.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.11).cos();
        }
        let adj = Image::zeros(3, 3, 3);
        let (dfeat, grads) = decode_backward(&features, &dec, &adj, 1).unwrap();
        assert!(dfeat.data.iter().all(|v| *v == 0.0));
        assert!(grads.weights.iter().flatten().all(|v| *v == 0.0));
        assert!(grads.biases.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_relu_blocks_incoming_weight_grads() {
        let mut dec = SemanticDecoder::<f64>::new(2, Some(2), 1, 2);
        // Hidden unit 0 always dead (large negative bias), unit 1 always live.
        dec.layers[0].weight = vec![0.5, 0.5, 0.5, 0.5];
        dec.layers[0].bias = vec![-100.0, 100.0];
        dec.layers[1].weight = vec![1.0, 1.0];
        dec.layers[1].bias = vec![0.0];
        let features = Image::from_vec(1, 1, 2, vec![1.0, 2.0]);
        let mut adj = Image::zeros(1, 1, 1);
        adj.data[0] = 1.0;
        let (_, grads) = decode_backward(&features, &dec, &adj, 1).unwrap();
        // Incoming weights of the dead unit (row 0) stay zero.
        assert_eq!(&grads.weights[0][0..2], &[0.0, 0.0]);
        // The live unit receives input * delta.
        assert_eq!(&grads.weights[0][2..4], &[1.0, 2.0]);
    }
}
