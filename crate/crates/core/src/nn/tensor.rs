use super::NnError;

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(NnError::Shape(format!("zero dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NnError::Shape(format!(
                "data length {} does not match shape {shape:?}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self, NnError> {
        Self::new(shape, self.data)
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), NnError> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(NnError::Shape(format!("expected a 4-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize), NnError> {
        match *self.shape.as_slice() {
            [n, d] => Ok((n, d)),
            _ => Err(NnError::Shape(format!("expected a 2-d tensor, got {:?}", self.shape))),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::Shape(format!("{:?} += {:?}", self.shape, other.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}
