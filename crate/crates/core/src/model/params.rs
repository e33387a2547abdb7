use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::ops;
use crate::error::{Error, Result};

/// Named trainable parameters with seeded initialization.
///
/// Names are dotted paths (`backbone.enc1.conv0.weight`) and are kept sorted
/// so that iteration order, and therefore checkpoint layout, is stable.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        if self.vars.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let var = Var::from_vec(data, shape, &self.device)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name, var);
        Ok(t)
    }

    pub fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| self.rng.random_range(-bound..=bound) as f32)
            .collect();
        self.insert(name, data, shape)
    }

    /// Normal samples redrawn until they fall within two standard deviations.
    pub fn trunc_normal(&mut self, name: String, shape: &[usize], std: f64) -> Result<Tensor> {
        let n = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            if z.abs() <= 2.0 {
                data.push((z * std) as f32);
            }
        }
        self.insert(name, data, shape)
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f32) -> Result<Tensor> {
        let n = shape.iter().product();
        self.insert(name, vec![value; n], shape)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Vars whose name starts with any of `prefixes`.
    pub fn select(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn all(&self) -> Vec<(String, Var)> {
        self.select(&[""])
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    padding: usize,
    dilation: usize,
}

impl Conv2d {
    /// Square-kernel convolution, stride 1, "same" padding for odd kernels.
    /// Fan-in uniform init: weights in `±sqrt(6 / fan_in)` (unit-gain under
    /// ReLU), bias in `±1 / sqrt(fan_in)`.
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        dilation: usize,
    ) -> Result<Self> {
        let fan_in = (cin * kernel * kernel) as f64;
        let weight = ps.uniform(format!("{name}.weight"), &[cout, cin, kernel, kernel], (6.0 / fan_in).sqrt())?;
        let bias = ps.uniform(format!("{name}.bias"), &[cout], 1.0 / fan_in.sqrt())?;
        Ok(Self {
            weight,
            bias,
            padding: dilation * (kernel / 2),
            dilation,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let cout = self.bias.dim(0)?;
        let y = x.conv2d(&self.weight, self.padding, 1, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, cout, 1, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// Stored as `(in, out)`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, din: usize, dout: usize) -> Result<Self> {
        let weight = ps.trunc_normal(format!("{name}.weight"), &[din, dout], 0.02)?;
        let bias = ps.constant(format!("{name}.bias"), &[dout], 0.0)?;
        Ok(Self { weight, bias })
    }

    /// Applies to the last axis of an arbitrary-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let din = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / din;
        let dout = self.weight.dim(1)?;
        let y = x
            .contiguous()?
            .reshape((rows, din))?
            .matmul(&self.weight)?
            .broadcast_add(&self.bias)?;
        let mut out_dims = dims;
        *out_dims.last_mut().unwrap() = dout;
        Ok(y.reshape(out_dims)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.constant(format!("{name}.gamma"), &[dim], 1.0)?,
            beta: ps.constant(format!("{name}.beta"), &[dim], 0.0)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        ops::layer_norm(x, &self.gamma, &self.beta, 1e-5)
    }
}

pub(crate) fn ensure_f32(x: &Tensor) -> Result<Tensor> {
    if x.dtype() == DType::F32 {
        Ok(x.clone())
    } else {
        Ok(x.to_dtype(DType::F32)?)
    }
}
