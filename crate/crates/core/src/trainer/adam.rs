//! Plain Adam with per-attribute-group states. Moments live in flat arrays
//! shaped like the parameters; densification remaps rows (survivors keep
//! their moments, new points start at zero).

use crate::math::sc;
use crate::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One Adam update over a flat parameter slice.
    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1 = sc::<T>(BETA1);
        let b2 = sc::<T>(BETA2);
        let eps = sc::<T>(EPSILON);
        let lr = sc::<T>(lr);
        let bias1 = T::one() - sc::<T>(BETA1.powi(self.t as i32));
        let bias2 = T::one() - sc::<T>(BETA2.powi(self.t as i32));
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = b1 * *m + (T::one() - b1) * *g;
            *v = b2 * *v + (T::one() - b2) * *g * *g;
            let mhat = *m / bias1;
            let vhat = *v / bias2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }

    /// Rebuilds the moment arrays for a new point layout. `mapping[new]` is
    /// the old point index to inherit from, or `None` for a fresh point;
    /// `width` is the number of scalars per point in this group.
    pub fn remap(&mut self, mapping: &[Option<usize>], width: usize) {
        let mut m = vec![T::zero(); mapping.len() * width];
        let mut v = vec![T::zero(); mapping.len() * width];
        for (new, old) in mapping.iter().enumerate() {
            if let Some(old) = old {
                for k in 0..width {
                    m[new * width + k] = self.m[old * width + k];
                    v[new * width + k] = self.v[old * width + k];
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_bitwise_unchanged() {
        let mut adam = AdamState::<f64>::new(3);
        let mut params = vec![1.5, -2.25, 0.0];
        let before = params.clone();
        adam.step(&mut params, &[0.3, -0.1, 7.0], 0.0);
        assert_eq!(params, before);
    }

    #[test]
    fn descends_a_quadratic() {
        let mut adam = AdamState::<f64>::new(1);
        let mut params = vec![3.0];
        for _ in 0..500 {
            let grads = vec![2.0 * params[0]];
            adam.step(&mut params, &grads, 0.05);
        }
        assert!(params[0].abs() < 0.05, "{}", params[0]);
    }

    #[test]
    fn remap_keeps_survivors_and_zeros_children() {
        let mut adam = AdamState::<f64>::new(4);
        let mut params = vec![0.0; 4];
        adam.step(&mut params, &[1.0, 2.0, 3.0, 4.0], 0.1);
        let m_before = adam.m.clone();
        adam.remap(&[Some(1), None, Some(0)], 2);
        assert_eq!(adam.m.len(), 6);
        assert_eq!(&adam.m[0..2], &m_before[2..4]);
        assert_eq!(&adam.m[2..4], &[0.0, 0.0]);
        assert_eq!(&adam.m[4..6], &m_before[0..2]);
    }
}
