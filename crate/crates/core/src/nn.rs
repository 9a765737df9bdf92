//! Parameter storage and the handful of layers the networks are built from.
//!
//! Parameters are created lazily through a [`Scope`], initialized from a
//! per-name seeded stream so that construction order never changes the
//! values a model starts from.

use std::collections::BTreeMap;
use std::sync::Mutex;

use candle_core::{DType, Device, Shape, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result};

/// How a freshly created parameter is filled.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Const(f64),
    Normal { std: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// Named, trainable parameter arrays.
pub struct ParamStore {
    vars: Mutex<BTreeMap<String, Var>>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: Mutex::new(BTreeMap::new()),
            dtype,
            device: Device::Cpu,
            seed,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    /// Inserts (or replaces) a named tensor, converting it to the store dtype.
    pub fn insert(&self, name: &str, tensor: &Tensor) -> Result<()> {
        let t = tensor.to_dtype(self.dtype)?.to_device(&self.device)?;
        let mut vars = self.vars.lock().expect("param store poisoned");
        match vars.get(name) {
            Some(v) if v.dims() == t.dims() => v.set(&t)?,
            _ => {
                vars.insert(name.to_string(), Var::from_tensor(&t)?);
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.lock().expect("param store poisoned").get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.vars.lock().expect("param store poisoned").keys().cloned().collect()
    }

    /// All parameters whose name starts with one of `prefixes`, in name order.
    pub fn vars_with_prefix(&self, prefixes: &[&str]) -> Vec<(String, Var)> {
        self.vars
            .lock()
            .expect("param store poisoned")
            .iter()
            .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    pub fn all(&self) -> Vec<(String, Var)> {
        self.vars_with_prefix(&[""])
    }

    pub fn num_params(&self, prefix: &str) -> usize {
        self.vars_with_prefix(&[prefix])
            .iter()
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    fn get_or_init(&self, name: &str, shape: &Shape, init: Init) -> Result<Tensor> {
        let mut vars = self.vars.lock().expect("param store poisoned");
        if let Some(v) = vars.get(name) {
            if v.shape() != shape {
                return Err(shape_err(format!(
                    "parameter {name}: stored shape {:?}, requested {:?}",
                    v.dims(),
                    shape.dims()
                )));
            }
            return Ok(v.as_tensor().clone());
        }
        let n = shape.elem_count();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::Normal { std } => (0..n)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            Init::Uniform { lo, hi } => (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        };
        let t = Tensor::from_vec(data, shape.clone(), &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        vars.insert(name.to_string(), var);
        Ok(out)
    }
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// A dotted name prefix into a [`ParamStore`].
#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl AsRef<str>) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.as_ref().to_string()
        } else {
            format!("{}.{}", self.prefix, name.as_ref())
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    pub fn get<S: Into<Shape>>(&self, name: &str, shape: S, init: Init) -> Result<Tensor> {
        let full = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        };
        self.store.get_or_init(&full, &shape.into(), init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }

    pub fn device(&self) -> &Device {
        &self.store.device
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Self> {
        Self::with_bias_init(scope, in_dim, out_dim, Init::Zeros)
    }

    pub fn with_bias_init(scope: &Scope, in_dim: usize, out_dim: usize, bias: Init) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = scope.get(
            "weight",
            (out_dim, in_dim),
            Init::Uniform { lo: -bound, hi: bound },
        )?;
        let bias = scope.get("bias", out_dim, bias)?;
        Ok(Self {
            weight,
            bias: Some(bias),
        })
    }

    pub fn with_weight_init(scope: &Scope, in_dim: usize, out_dim: usize, weight: Init) -> Result<Self> {
        let weight = scope.get("weight", (out_dim, in_dim), weight)?;
        let bias = scope.get("bias", out_dim, Init::Zeros)?;
        Ok(Self {
            weight,
            bias: Some(bias),
        })
    }

    /// `x`: (N, in) -> (N, out).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.t()?)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dim(0).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    weight: Tensor,
    bias: Tensor,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        scope: &Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let bound = (3.0 / fan_in).sqrt();
        Self::with_init(
            scope,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            Init::Uniform { lo: -bound, hi: bound },
        )
    }

    pub fn with_init(
        scope: &Scope,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
    ) -> Result<Self> {
        let weight = scope.get("weight", (out_ch, in_ch, kernel, kernel), init)?;
        let bias = scope.get("bias", out_ch, Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(&self.weight, self.padding, self.stride, 1, 1)?;
        let out_ch = self.bias.dim(0)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}

/// Style-modulated convolution. The per-sample style scales input channels,
/// the convolution weight is shared, and (optionally) the output is
/// demodulated so each output channel has unit expected norm.
#[derive(Debug, Clone)]
pub struct ModConv2d {
    weight: Tensor,
    bias: Tensor,
    affine: Linear,
    padding: usize,
    demodulate: bool,
}

impl ModConv2d {
    pub fn new(
        scope: &Scope,
        w_dim: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
    ) -> Result<Self> {
        let fan_in = (in_ch * kernel * kernel) as f64;
        let weight = scope.get(
            "weight",
            (out_ch, in_ch, kernel, kernel),
            Init::Normal { std: 1.0 / fan_in.sqrt() },
        )?;
        Self::build(scope, weight, w_dim, in_ch, out_ch, kernel, demodulate)
    }

    /// Variant whose convolution weight starts at zero (residual heads).
    pub fn zero_init(
        scope: &Scope,
        w_dim: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
    ) -> Result<Self> {
        let weight = scope.get("weight", (out_ch, in_ch, kernel, kernel), Init::Zeros)?;
        Self::build(scope, weight, w_dim, in_ch, out_ch, kernel, false)
    }

    fn build(
        scope: &Scope,
        weight: Tensor,
        w_dim: usize,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        demodulate: bool,
    ) -> Result<Self> {
        let affine = Linear::with_bias_init(&scope.pp("affine"), w_dim, in_ch, Init::Const(1.0))?;
        let bias = scope.get("bias", out_ch, Init::Zeros)?;
        Ok(Self {
            weight,
            bias,
            affine,
            padding: kernel / 2,
            demodulate,
        })
    }

    /// `x`: (B, in, H, W), `w`: (B, w_dim).
    pub fn forward(&self, x: &Tensor, w: &Tensor) -> Result<Tensor> {
        let (b, in_ch, _, _) = x.dims4()?;
        let style = self.affine.forward(w)?;
        let x = x.broadcast_mul(&style.reshape((b, in_ch, 1, 1))?)?;
        let mut y = x.conv2d(&self.weight, self.padding, 1, 1, 1)?;
        let out_ch = self.bias.dim(0)?;
        if self.demodulate {
            // sum over kernel taps of w^2 -> (out, in)
            let w2 = self.weight.sqr()?.sum(D::Minus1)?.sum(D::Minus1)?;
            let demod = (style.sqr()?.matmul(&w2.t()?)? + 1e-8)?.sqrt()?.recip()?;
            y = y.broadcast_mul(&demod.reshape((b, out_ch, 1, 1))?)?;
        }
        Ok(y.broadcast_add(&self.bias.reshape((1, out_ch, 1, 1))?)?)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::leaky_relu(x, 0.2)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn softplus_scalar(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Exclusive prefix sum along the last dimension, via a strictly
/// upper-triangular matmul so it stays differentiable and batch-shape
/// independent.
pub fn exclusive_cumsum(x: &Tensor) -> Result<Tensor> {
    let n = x.dim(D::Minus1)?;
    let mut tri = vec![0f64; n * n];
    for k in 0..n {
        for j in (k + 1)..n {
            tri[k * n + j] = 1.0;
        }
    }
    let tri = Tensor::from_vec(tri, (n, n), x.device())?.to_dtype(x.dtype())?;
    let dims = x.dims().to_vec();
    let flat = x.reshape(((), n))?;
    Ok(flat.matmul(&tri)?.reshape(dims)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_independent_of_creation_order() {
        let a = ParamStore::new(DType::F64, 7);
        let b = ParamStore::new(DType::F64, 7);
        let ta1 = a.root().get("x", (3, 2), Init::Normal { std: 1.0 }).unwrap();
        let _ = a.root().get("y", 4, Init::Normal { std: 1.0 }).unwrap();
        let _ = b.root().get("y", 4, Init::Normal { std: 1.0 }).unwrap();
        let tb1 = b.root().get("x", (3, 2), Init::Normal { std: 1.0 }).unwrap();
        let da: Vec<f64> = ta1.flatten_all().unwrap().to_vec1().unwrap();
        let db: Vec<f64> = tb1.flatten_all().unwrap().to_vec1().unwrap();
        assert_eq!(da, db);
    }

    #[test]
    fn shape_mismatch_on_reuse_is_an_error() {
        let s = ParamStore::new(DType::F32, 0);
        s.root().get("x", (3, 2), Init::Zeros).unwrap();
        assert!(s.root().get("x", (2, 3), Init::Zeros).is_err());
    }

    #[test]
    fn softplus_matches_scalar() {
        let xs = [-40.0, -3.0, -0.5, 0.0, 0.5, 3.0, 40.0];
        let t = Tensor::new(&xs, &Device::Cpu).unwrap();
        let y: Vec<f64> = softplus(&t).unwrap().to_vec1().unwrap();
        for (x, y) in xs.iter().zip(y) {
            assert!((softplus_scalar(*x) - y).abs() < 1e-12);
        }
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn exclusive_cumsum_small() {
        let t = Tensor::new(&[[1.0f64, 2.0, 3.0], [0.5, 0.5, 0.5]], &Device::Cpu).unwrap();
        let y: Vec<Vec<f64>> = exclusive_cumsum(&t).unwrap().to_vec2().unwrap();
        assert_eq!(y, vec![vec![0.0, 1.0, 3.0], vec![0.0, 0.5, 1.0]]);
    }

    #[test]
    fn demodulated_conv_has_unit_scale() {
        let store = ParamStore::new(DType::F64, 3);
        let conv = ModConv2d::new(&store.root().pp("c"), 4, 2, 3, 1, true).unwrap();
        let x = Tensor::ones((1, 2, 2, 2), DType::F64, &Device::Cpu).unwrap();
        let w = Tensor::zeros((1, 4), DType::F64, &Device::Cpu).unwrap();
        let y = conv.forward(&x, &w).unwrap();
        // with unit style and unit input, output_o = sum_i W_oi / ||W_o||
        assert_eq!(y.dims(), &[1, 3, 2, 2]);
        assert!(y.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| v.is_finite()));
    }
}
