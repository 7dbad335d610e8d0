use crate::error::{Error, Result};

/// A trainable array with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f64>) -> Result<Self> {
        if shape.iter().product::<usize>() != value.len() {
            return Err(Error::shape(format!("{} values do not fill shape {shape:?}", value.len())));
        }
        let grad = vec![0.0; value.len()];
        Ok(Self { shape, value, grad })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, value: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    /// Replace the value, keeping the shape.
    pub fn assign(&mut self, value: &[f64]) -> Result<()> {
        if value.len() != self.value.len() {
            return Err(Error::shape(format!(
                "cannot assign {} values to a parameter of {}",
                value.len(),
                self.value.len()
            )));
        }
        self.value.copy_from_slice(value);
        Ok(())
    }
}

/// Anything owning trainable parameters, each addressable by a stable name.
pub trait Module {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Prefix `name` with `scope.`, or return it unchanged when `scope` is empty.
pub fn scoped(scope: &str, name: &str) -> String {
    if scope.is_empty() {
        name.to_string()
    } else {
        format!("{scope}.{name}")
    }
}
