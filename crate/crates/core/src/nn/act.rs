use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Default negative slope of [`LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct LeakyRelu {
    slope: f64,
    input: Option<Tensor4>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, input: None }
    }

    pub fn apply(&self, x: &Tensor4) -> Tensor4 {
        let s = self.slope;
        x.map(|v| if v > 0.0 { v } else { s * v })
    }

    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        self.input = Some(x.clone());
        self.apply(x)
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let x = self.input.as_ref().ok_or_else(|| Error::State("leaky relu backward called before forward".into()))?;
        grad.expect_shape(x.shape())?;
        let data = grad.data().iter().zip(x.data()).map(|(g, v)| if *v > 0.0 { *g } else { self.slope * g }).collect();
        Tensor4::new(grad.shape(), data)
    }

    pub fn clear(&mut self) {
        self.input = None;
    }
}

impl Default for LeakyRelu {
    fn default() -> Self {
        Self::new(LEAKY_SLOPE)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Tensor4>,
}

impl Tanh {
    pub fn forward(&mut self, x: &Tensor4) -> Tensor4 {
        let y = x.map(f64::tanh);
        self.output = Some(y.clone());
        y
    }

    pub fn backward(&mut self, grad: &Tensor4) -> Result<Tensor4> {
        let y = self.output.as_ref().ok_or_else(|| Error::State("tanh backward called before forward".into()))?;
        grad.expect_shape(y.shape())?;
        let data = grad.data().iter().zip(y.data()).map(|(g, v)| g * (1.0 - v * v)).collect();
        Tensor4::new(grad.shape(), data)
    }
}

/// Nearest-neighbour repetition along the time axis.
pub fn upsample_time(x: &Tensor4, factor: usize) -> Tensor4 {
    let [b, c, h, w] = x.shape();
    let mut data = Vec::with_capacity(x.len() * factor);
    for v in x.data() {
        data.extend(std::iter::repeat_n(*v, factor));
    }
    Tensor4::new([b, c, h, w * factor], data).expect("shape follows from construction")
}

/// Transpose of [`upsample_time`]: sums each group of `factor` columns.
pub fn upsample_time_backward(grad: &Tensor4, factor: usize) -> Result<Tensor4> {
    let [b, c, h, w] = grad.shape();
    if factor == 0 || w % factor != 0 {
        return Err(Error::shape(format!("width {w} is not a multiple of {factor}")));
    }
    let data = grad.data().chunks(factor).map(|g| g.iter().sum()).collect();
    Tensor4::new([b, c, h, w / factor], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaky_values_and_slopes() {
        let mut act = LeakyRelu::default();
        let x = Tensor4::new([1, 1, 1, 2], vec![3.0, -2.0]).unwrap();
        let y = act.forward(&x);
        assert_eq!(y.data(), &[3.0, -0.2]);
        let g = act.backward(&Tensor4::filled([1, 1, 1, 2], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.1]);
    }

    #[test]
    fn backward_before_forward() {
        assert!(matches!(LeakyRelu::default().backward(&Tensor4::zeros([1, 1, 1, 1])), Err(Error::State(_))));
        assert!(matches!(Tanh::default().backward(&Tensor4::zeros([1, 1, 1, 1])), Err(Error::State(_))));
    }

    #[test]
    fn upsample_round_trip() {
        let x = Tensor4::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_time(&x, 3);
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 4.0, 4.0, 4.0]);
        let g = upsample_time_backward(&Tensor4::filled([1, 1, 2, 6], 1.0), 3).unwrap();
        assert_eq!(g.data(), &[3.0; 4]);
    }
}
