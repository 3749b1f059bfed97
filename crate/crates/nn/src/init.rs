//! Seeded parameter creation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::ops::spectral;
use crate::params::{ParamKind, ParamSet};
use crate::tensor::Tensor;

/// Default negative slope given to fresh PReLU units.
pub const PRELU_INIT: f64 = 0.25;

/// Uniform on `±sqrt(6 / fan_in) · scale`.
pub fn kaiming_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize, scale: f64) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt() * scale;
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

/// Builds a [`ParamSet`] layer by layer from one seeded stream, so the same
/// seed and the same call order give bit-identical parameters.
pub struct ParamBuilder {
    rng: ChaCha8Rng,
    params: ParamSet,
    /// Multiplier applied to the Kaiming bound of subsequent layers.
    pub scale: f64,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: ParamSet::new(),
            scale: 1.0,
        }
    }

    pub fn finish(self) -> ParamSet {
        self.params
    }

    pub fn conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Result<()> {
        let w = kaiming_uniform(&mut self.rng, &[cout, cin, k, k], cin * k * k, self.scale);
        self.params.insert(format!("{prefix}.weight"), w, ParamKind::Trainable)?;
        if bias {
            self.params
                .insert(format!("{prefix}.bias"), Tensor::zeros(&[cout]), ParamKind::Trainable)?;
        }
        Ok(())
    }

    /// Convolution plus the persistent power-iteration vectors.
    pub fn sn_conv(&mut self, prefix: &str, cin: usize, cout: usize, k: usize, bias: bool) -> Result<()> {
        self.conv(prefix, cin, cout, k, bias)?;
        let w = self.params.tensor(&format!("{prefix}.weight"))?;
        let mut u: Vec<f64> = (0..cout).map(|_| self.rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        u.iter_mut().for_each(|x| *x /= norm);
        let it = spectral::power_iterate(&w, &u, 0)?;
        self.params
            .insert(format!("{prefix}.sn_u"), Tensor::from_vec(&[cout], it.u)?, ParamKind::Buffer)?;
        let cols = it.v.len();
        self.params
            .insert(format!("{prefix}.sn_v"), Tensor::from_vec(&[cols], it.v)?, ParamKind::Buffer)?;
        Ok(())
    }

    pub fn dense(&mut self, prefix: &str, fin: usize, fout: usize) -> Result<()> {
        let w = kaiming_uniform(&mut self.rng, &[fout, fin], fin, self.scale);
        self.params.insert(format!("{prefix}.weight"), w, ParamKind::Trainable)?;
        self.params
            .insert(format!("{prefix}.bias"), Tensor::zeros(&[fout]), ParamKind::Trainable)
    }

    pub fn batch_norm(&mut self, prefix: &str, c: usize) -> Result<()> {
        let p = &mut self.params;
        p.insert(format!("{prefix}.weight"), Tensor::full(&[c], 1.0), ParamKind::Trainable)?;
        p.insert(format!("{prefix}.bias"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
        p.insert(format!("{prefix}.running_mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?;
        p.insert(format!("{prefix}.running_var"), Tensor::full(&[c], 1.0), ParamKind::Buffer)
    }

    pub fn prelu(&mut self, prefix: &str, c: usize) -> Result<()> {
        self.params
            .insert(format!("{prefix}.weight"), Tensor::full(&[c], PRELU_INIT), ParamKind::Trainable)
    }
}
