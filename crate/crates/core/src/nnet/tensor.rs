use crate::error::{Error, Result};

/// Batch-major `(batch, channels, height, width)` tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let dims = [batch, channels, height, width];
        if dims.contains(&0) {
            return Err(Error::invalid(format!(
                "tensor dimensions must be positive, got {dims:?}"
            )));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "tensor {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tensor contains non-finite values"));
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_raw(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(batch * channels * height * width, data.len());
        Self {
            dims: [batch, channels, height, width],
            data,
        }
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self::from_raw(
            batch,
            channels,
            height,
            width,
            vec![0.0; batch * channels * height * width],
        )
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
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

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Spatial map of channel `c` for sample `i`.
    pub fn channel(&self, i: usize, c: usize) -> &[f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (i * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    /// Flat `(batch, hw)` copy of channel `c` across the batch.
    pub fn channel_samples(&self, c: usize) -> Vec<f64> {
        let hw = self.dims[2] * self.dims[3];
        let mut out = Vec::with_capacity(self.dims[0] * hw);
        for i in 0..self.dims[0] {
            out.extend_from_slice(self.channel(i, c));
        }
        out
    }

    pub fn reshape(self, channels: usize, height: usize, width: usize) -> Result<Self> {
        if channels * height * width != self.sample_len() {
            return Err(Error::invalid(format!(
                "cannot reshape {:?} to per-sample ({channels}, {height}, {width})",
                self.dims
            )));
        }
        Ok(Self::from_raw(
            self.dims[0],
            channels,
            height,
            width,
            self.data,
        ))
    }
}
