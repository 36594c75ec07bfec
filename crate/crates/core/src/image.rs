//! Dense row-major image planes: scalar images with a runtime channel count
//! and single-channel index maps for labels, masks, and instance ids.

use crate::Scalar;

/// H x W x C scalar image, row-major, channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![T::zero(); h * w * c],
        }
    }

    pub fn from_vec(h: usize, w: usize, c: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w * c, "image buffer size mismatch");
        Self { h, w, c, data }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize, ch: usize) -> usize {
        (y * self.w + x) * self.c + ch
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, ch: usize) -> T {
        self.data[self.idx(y, x, ch)]
    }

    #[inline]
    pub fn at_mut(&mut self, y: usize, x: usize, ch: usize) -> &mut T {
        let i = self.idx(y, x, ch);
        &mut self.data[i]
    }

    /// Channel slice of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.w + x) * self.c;
        &self.data[i..i + self.c]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let i = (y * self.w + x) * self.c;
        &mut self.data[i..i + self.c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w && self.c == other.c
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            h: self.h,
            w: self.w,
            c: self.c,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap())
                .collect(),
        }
    }
}

/// Single-channel class/index map. `255` is the ignore value for labels;
/// masks use `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

pub const IGNORE_LABEL: u8 = 255;

impl LabelMap {
    pub fn filled(h: usize, w: usize, value: u8) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), h * w, "label buffer size mismatch");
        Self { h, w, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.h == other.h && self.w == other.w
    }
}

/// Per-view instance-id map; 0 means "no instance", ids are 1..=K and
/// consistent across views of the same scene.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceMap {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u16>,
}

impl InstanceMap {
    pub fn filled(h: usize, w: usize, value: u16) -> Self {
        Self {
            h,
            w,
            data: vec![value; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), h * w, "instance buffer size mismatch");
        Self { h, w, data }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u16) {
        self.data[y * self.w + x] = v;
    }

    pub fn max_id(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}
