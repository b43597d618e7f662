//! Folding inference-mode batch normalization into the preceding convolution.

use crate::error::{Error, Result};
use crate::tensor::{Data, Kernel4D, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
}

impl BatchNormParams {
    /// gamma = 1, beta = 0, mean = 0, var = 1, eps = 0.
    pub fn identity(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: 0.0,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, channels: usize) -> Result<()> {
        for (name, v) in [
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("running_mean", &self.running_mean),
            ("running_var", &self.running_var),
        ] {
            if v.len() != channels {
                return Err(Error::BatchNorm(format!("{name} has {} entries, expected {channels}", v.len())));
            }
        }
        let denom = |v: f32| v as f64 + self.epsilon as f64;
        if let Some(c) = self.running_var.iter().position(|&v| denom(v).is_nan() || denom(v) <= 0.0) {
            return Err(Error::BatchNorm(format!("channel {c}: running_var + epsilon must be positive")));
        }
        Ok(())
    }

    /// Per-channel `(scale, shift)` so that `bn(v) = v * scale + shift`.
    fn affine(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.channels()).map(move |c| {
            let scale = self.gamma[c] as f64 / (self.running_var[c] as f64 + self.epsilon as f64).sqrt();
            (scale, self.beta[c] as f64 - self.running_mean[c] as f64 * scale)
        })
    }
}

/// Returns a float kernel computing `bn(conv(x))` in a single convolution.
pub fn fuse_batchnorm(w: &Kernel4D, bn: &BatchNormParams) -> Result<Kernel4D> {
    if bn.channels() != w.out_channels {
        return Err(Error::ChannelMismatch { expected: w.out_channels, actual: bn.channels() });
    }
    bn.validate(w.out_channels)?;
    let (Data::F32(weights), Data::F32(bias)) = (w.weights(), w.bias()) else {
        return Err(Error::ModeMismatch("batchnorm fusion needs a float kernel".into()));
    };
    let filter = w.in_channels * w.kh * w.kw;
    let mut new_w = Vec::with_capacity(weights.len());
    let mut new_b = Vec::with_capacity(bias.len());
    for ((f, &b), (scale, shift)) in weights.chunks_exact(filter).zip(bias).zip(bn.affine()) {
        new_w.extend(f.iter().map(|&v| (v as f64 * scale) as f32));
        new_b.push((b as f64 * scale + shift) as f32);
    }
    Kernel4D::new(w.out_channels, w.in_channels, w.kh, w.kw, new_w, new_b)
}

/// Inference-mode batch normalization of a float tensor.
pub fn batchnorm_forward(x: &Tensor, bn: &BatchNormParams) -> Result<Tensor> {
    bn.validate(x.channels())?;
    let Some(v) = x.as_f32() else {
        return Err(Error::ModeMismatch("batchnorm needs a float tensor".into()));
    };
    let plane = x.shape().plane();
    let mut out = Vec::with_capacity(v.len());
    for (chunk, (scale, shift)) in v.chunks_exact(plane).zip(bn.affine()) {
        out.extend(chunk.iter().map(|&e| (e as f64 * scale + shift) as f32));
    }
    Tensor::new(x.shape(), out)
}
