use super::Scalar;

/// Dense `N x C x H x W` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![T::ZERO; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data length");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn image_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn image(&self, i: usize) -> &[T] {
        let l = self.image_len();
        &self.data[i * l..(i + 1) * l]
    }

    pub fn image_mut(&mut self, i: usize) -> &mut [T] {
        let l = self.image_len();
        &mut self.data[i * l..(i + 1) * l]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in subtraction");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a - b)
            .collect();
        Tensor::from_vec(self.n, self.c, self.h, self.w, data)
    }

    /// Images `start..start+count` as a new tensor.
    pub fn slice_batch(&self, start: usize, count: usize) -> Tensor<T> {
        let l = self.image_len();
        Tensor::from_vec(
            count,
            self.c,
            self.h,
            self.w,
            self.data[start * l..(start + count) * l].to_vec(),
        )
    }

    /// Stacks tensors of equal image shape along the batch axis.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Tensor<T> {
        let first = parts[0];
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        for p in parts {
            assert_eq!(
                (p.c, p.h, p.w),
                (first.c, first.h, first.w),
                "batch concat shape"
            );
            data.extend_from_slice(&p.data);
        }
        let n = parts.iter().map(|p| p.n).sum();
        Tensor::from_vec(n, first.c, first.h, first.w, data)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_vec(
            self.n,
            self.c,
            self.h,
            self.w,
            self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        )
    }
}

/// Debug-build check that activations stay finite.
#[inline]
pub(crate) fn debug_check_finite<T: Scalar>(t: &Tensor<T>, what: &str) {
    debug_assert!(t.is_finite(), "non-finite values after {what}");
}
