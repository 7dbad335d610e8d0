use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tfr::ComplexSpectrogram;

/// Dense rank-4 array laid out as (batch, channel, frequency-or-scale, time).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!("{} values do not fill shape {shape:?}", data.len())));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn offset(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        ((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn get(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.offset(b, c, h, w)]
    }

    /// One `height × width` plane.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let n = self.shape[2] * self.shape[3];
        let start = (b * self.shape[1] + c) * n;
        &self.data[start..start + n]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.expect_shape(other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn expect_shape(&self, shape: [usize; 4]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!("expected shape {shape:?}, got {:?}", self.shape)));
        }
        Ok(())
    }

    /// Numeric error naming `op` if any value is NaN or infinite.
    pub fn check_finite(&self, op: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric(format!("{op} produced a non-finite value")))
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.data.iter().sum::<f64>() / self.data.len() as f64
        }
    }

    /// Rows `[start, start + len)` of the height axis.
    pub fn slice_height(&self, start: usize, len: usize) -> Result<Tensor4> {
        let [b, c, h, w] = self.shape;
        if start + len > h {
            return Err(Error::shape(format!("rows {start}..{} exceed height {h}", start + len)));
        }
        let mut data = Vec::with_capacity(b * c * len * w);
        for bi in 0..b {
            for ci in 0..c {
                let p = self.plane(bi, ci);
                data.extend_from_slice(&p[start * w..(start + len) * w]);
            }
        }
        Tensor4::new([b, c, len, w], data)
    }

    /// Stack along the height axis; all other dimensions must agree.
    pub fn concat_height(parts: &[Tensor4]) -> Result<Tensor4> {
        let first = parts.first().ok_or_else(|| Error::shape("nothing to concatenate"))?;
        let [b, c, _, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != b || p.shape[1] != c || p.shape[3] != w) {
            return Err(Error::shape("concatenated tensors disagree outside the height axis"));
        }
        let h: usize = parts.iter().map(|p| p.shape[2]).sum();
        let mut data = Vec::with_capacity(b * c * h * w);
        for bi in 0..b {
            for ci in 0..c {
                for p in parts {
                    data.extend_from_slice(p.plane(bi, ci));
                }
            }
        }
        Tensor4::new([b, c, h, w], data)
    }

    /// Stack single-item tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor4]) -> Result<Tensor4> {
        let first = items.first().ok_or_else(|| Error::shape("empty batch"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::shape("batch items have different shapes"));
            }
            data.extend_from_slice(&t.data);
        }
        let b = items.iter().map(|t| t.shape[0]).sum();
        Tensor4::new([b, c, h, w], data)
    }

    /// Item `b` as a batch of one.
    pub fn item(&self, b: usize) -> Tensor4 {
        let n = self.shape[1] * self.shape[2] * self.shape[3];
        Tensor4 {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[b * n..(b + 1) * n].to_vec(),
        }
    }

    /// Real and imaginary parts as two channels of a batch-of-one tensor.
    pub fn from_spectrogram(spec: &ComplexSpectrogram) -> Tensor4 {
        let mut data = Vec::with_capacity(2 * spec.data().len());
        data.extend(spec.data().iter().map(|c| c.re));
        data.extend(spec.data().iter().map(|c| c.im));
        Tensor4 { shape: [1, 2, spec.bins(), spec.frames()], data }
    }

    /// Inverse of [`Tensor4::from_spectrogram`] for item `b` of a gradient.
    pub fn to_complex(&self, b: usize) -> Result<Vec<Complex64>> {
        if self.shape[1] != 2 {
            return Err(Error::shape(format!("need 2 channels, got {}", self.shape[1])));
        }
        let (re, im) = (self.plane(b, 0), self.plane(b, 1));
        Ok(re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Tensor4::new([1, 2, 3, 4], vec![0.0; 24]).is_ok());
        assert!(matches!(Tensor4::new([1, 2, 3, 4], vec![0.0; 23]), Err(Error::Shape(_))));
    }

    #[test]
    fn concat_then_slice_round_trips() {
        let a = Tensor4::new([2, 2, 3, 2], (0..24).map(f64::from).collect()).unwrap();
        let b = Tensor4::new([2, 2, 1, 2], (100..108).map(f64::from).collect()).unwrap();
        let cat = Tensor4::concat_height(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(cat.shape(), [2, 2, 4, 2]);
        assert_eq!(cat.slice_height(0, 3).unwrap(), a);
        assert_eq!(cat.slice_height(3, 1).unwrap(), b);
        assert_eq!(cat.get(1, 1, 3, 1), 107.0);
    }

    #[test]
    fn nan_guard() {
        let t = Tensor4::new([1, 1, 1, 2], vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(t.check_finite("test"), Err(Error::Numeric(_))));
    }

    #[test]
    fn batch_stacking() {
        let a = Tensor4::filled([1, 2, 2, 2], 1.0);
        let b = Tensor4::filled([1, 2, 2, 2], 2.0);
        let s = Tensor4::stack_batch(&[a, b.clone()]).unwrap();
        assert_eq!(s.shape(), [2, 2, 2, 2]);
        assert_eq!(s.item(1), b);
    }
}
