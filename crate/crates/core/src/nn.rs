//! Minimal layer set on top of candle with seeded initialization, a named
//! parameter store and an Adam optimizer whose state can be checkpointed.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::Rng;

use crate::channel::RngState;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone)]
pub struct ParamStore {
    dtype: DType,
    device: Device,
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new(dtype: DType) -> Self {
        Self {
            dtype,
            device: Device::Cpu,
            vars: BTreeMap::new(),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn insert(&mut self, name: String, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        if self.vars.contains_key(&name) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name, var.clone());
        Ok(var)
    }

    /// Glorot-uniform weights.
    pub fn glorot(&mut self, name: String, shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut RngState) -> Result<Var> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
        self.insert(name, values, shape)
    }

    pub fn zeros(&mut self, name: String, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        self.insert(name, vec![0.0; n], shape)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Parameter count of the tensors whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.vars
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.elem_count())
            .sum()
    }

    /// Overwrites every parameter from `tensors`; names and shapes must match.
    pub fn load(&self, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, var) in &self.vars {
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks parameter {name}")))?;
            if t.dims() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint shape {:?}, model shape {:?}",
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Detached copies of all parameters.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Conv2d,
    Conv1d,
    ConvTranspose2d,
}

/// One convolution of any supported kind, with bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    kind: ConvKind,
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvLayer {
    /// A "same"-padded layer; stride 2 halves (or, transposed, doubles)
    /// spatial size exactly.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: ConvKind,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        let padding = kernel / 2;
        let (shape, fan_in, fan_out): (Vec<usize>, usize, usize) = match kind {
            ConvKind::Conv2d => (vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, out_ch * kernel * kernel),
            ConvKind::ConvTranspose2d => {
                (vec![in_ch, out_ch, kernel, kernel], in_ch * kernel * kernel, out_ch * kernel * kernel)
            }
            ConvKind::Conv1d => (vec![out_ch, in_ch, kernel], in_ch * kernel, out_ch * kernel),
        };
        let weight = store.glorot(format!("{name}.weight"), &shape, fan_in, fan_out, rng)?;
        let bias = store.zeros(format!("{name}.bias"), &[out_ch])?;
        // (in - 1) * s - 2p + k + op == in * s
        let output_padding = match kind {
            ConvKind::ConvTranspose2d => stride + 2 * padding - kernel,
            _ => 0,
        };
        Ok(Self {
            kind,
            weight,
            bias,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.as_tensor();
        let y = match self.kind {
            ConvKind::Conv2d => x.conv2d(w, self.padding, self.stride, 1, 1)?,
            // candle's conv1d backward is wrong for these shapes; the
            // equivalent height-1 conv2d differentiates correctly
            ConvKind::Conv1d => x
                .pad_with_zeros(D::Minus1, self.padding, self.padding)?
                .unsqueeze(2)?
                .conv2d(&w.unsqueeze(2)?, 0, self.stride, 1, 1)?
                .squeeze(2)?,
            ConvKind::ConvTranspose2d => x.conv_transpose2d(w, self.padding, self.output_padding, self.stride, 1)?,
        };
        let out_ch = self.bias.dims()[0];
        let b = match self.kind {
            ConvKind::Conv1d => self.bias.reshape((1, out_ch, 1))?,
            _ => self.bias.reshape((1, out_ch, 1, 1))?,
        };
        Ok(y.broadcast_add(&b)?)
    }
}

/// Fully connected layer `y = x Wᵀ + b`.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Var,
    bias: Var,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut RngState) -> Result<Self> {
        Ok(Self {
            weight: store.glorot(format!("{name}.weight"), &[out_dim, in_dim], in_dim, out_dim, rng)?,
            bias: store.zeros(format!("{name}.bias"), &[out_dim])?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.matmul(&self.weight.as_tensor().t()?)?.broadcast_add(self.bias.as_tensor())?)
    }
}

pub fn elu(x: &Tensor) -> Result<Tensor> {
    Ok(x.elu(1.0)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Two ConvLayers with ELU, identity (or 1-tap projection) skip added
/// before the final ELU.
#[derive(Debug, Clone)]
pub struct ResBlock {
    first: ConvLayer,
    second: ConvLayer,
    skip: Option<ConvLayer>,
}

/// Layer settings of one residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResBlockSpec {
    pub kind: ConvKind,
    pub filters: (usize, usize),
    pub kernel: usize,
    pub strides: (usize, usize),
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, in_ch: usize, spec: ResBlockSpec, rng: &mut RngState) -> Result<Self> {
        let (f1, f2) = spec.filters;
        let first = ConvLayer::new(store, &format!("{name}.conv1"), spec.kind, in_ch, f1, spec.kernel, spec.strides.0, rng)?;
        let second = ConvLayer::new(store, &format!("{name}.conv2"), spec.kind, f1, f2, spec.kernel, spec.strides.1, rng)?;
        let total_stride = spec.strides.0 * spec.strides.1;
        let skip = if in_ch != f2 || total_stride != 1 {
            Some(ConvLayer::new(store, &format!("{name}.skip"), spec.kind, in_ch, f2, 1, total_stride, rng)?)
        } else {
            None
        };
        Ok(Self { first, second, skip })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = elu(&self.first.forward(x)?)?;
        let h = self.second.forward(&h)?;
        let s = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        elu(&(h + s)?)
    }
}

/// Scales a `(b, 2n)` real tensor holding `n` complex symbols per row
/// (real parts first) so the mean per-symbol power over the batch is 1.
pub fn power_normalize(x: &Tensor) -> Result<Tensor> {
    let (b, width) = x.dims2()?;
    if width % 2 != 0 {
        return Err(Error::Shape(format!("symbol tensor width {width} is odd")));
    }
    let symbols = (b * width / 2) as f64;
    // accumulate in f64: an f32 sum over a batch drifts past 1e-6
    let wide = x.to_dtype(DType::F64)?;
    let power = (wide.sqr()?.sum_all()? / symbols)?;
    let scale = (power + POWER_EPS)?.sqrt()?;
    Ok(wide.broadcast_div(&scale)?.to_dtype(x.dtype())?)
}

pub const POWER_EPS: f64 = 1e-12;

/// Mean per-symbol power of a `(b, 2n)` real/imag tensor.
pub fn mean_symbol_power(x: &Tensor) -> Result<f64> {
    let (b, width) = x.dims2()?;
    let v = x.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
    Ok(v / (b * width / 2) as f64)
}

/// Splits a `(b, 2n)` tensor into `(re, im)` halves of shape `(b, n)`.
pub fn split_complex(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = x.dim(D::Minus1)? / 2;
    Ok((x.narrow(1, 0, n)?, x.narrow(1, n, n)?))
}

/// Adam with bias correction. State is exposed for checkpointing.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Result<Self> {
        let moments = store
            .vars()
            .iter()
            .map(|(k, v)| Ok((k.clone(), (v.zeros_like()?, v.zeros_like()?))))
            .collect::<Result<_>>()?;
        Ok(Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments,
        })
    }

    pub fn apply(&mut self, store: &ParamStore, grads: &candle_core::backprop::GradStore) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, var) in store.vars() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            // gradients carry their own graph; keep it out of the moments
            let g = g.detach();
            let (m, v) = self.moments.get_mut(name).expect("moments cover every parameter");
            *m = ((&*m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            *v = ((&*v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&*m / c1)?;
            let v_hat = (&*v / c2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.eps)?)?;
            var.set(&(var.as_tensor().detach() - (update * self.lr)?)?)?;
        }
        Ok(())
    }

    pub fn state(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, (m, v)) in &self.moments {
            out.insert(format!("adam.m.{k}"), m.copy()?);
            out.insert(format!("adam.v.{k}"), v.copy()?);
        }
        Ok(out)
    }

    pub fn load_state(&mut self, tensors: &BTreeMap<String, Tensor>, step: u64) -> Result<()> {
        for (k, (m, v)) in self.moments.iter_mut() {
            let get = |p: &str| {
                tensors
                    .get(&format!("adam.{p}.{k}"))
                    .ok_or_else(|| Error::Checkpoint(format!("optimizer state lacks {p} for {k}")))
            };
            *m = get("m")?.to_dtype(m.dtype())?;
            *v = get("v")?.to_dtype(v.dtype())?;
        }
        self.step = step;
        Ok(())
    }
}

/// Host tensor from `f32` data.
pub fn tensor_f32(data: Vec<f32>, shape: &[usize], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_vec(data, shape, &Device::Cpu)?.to_dtype(dtype)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_shapes() {
        let mut store = ParamStore::new(DType::F32);
        let mut rng = RngState::new(1);
        let x = Tensor::zeros((2, 3, 28, 28), DType::F32, &Device::Cpu).unwrap();
        let down = ConvLayer::new(&mut store, "d", ConvKind::Conv2d, 3, 5, 3, 2, &mut rng).unwrap();
        assert_eq!(down.forward(&x).unwrap().dims(), &[2, 5, 14, 14]);
        let up = ConvLayer::new(&mut store, "u", ConvKind::ConvTranspose2d, 3, 4, 3, 2, &mut rng).unwrap();
        assert_eq!(up.forward(&x).unwrap().dims(), &[2, 4, 56, 56]);
        let up1 = ConvLayer::new(&mut store, "u1", ConvKind::ConvTranspose2d, 3, 4, 1, 2, &mut rng).unwrap();
        assert_eq!(up1.forward(&x).unwrap().dims(), &[2, 4, 56, 56]);
        let seq = Tensor::zeros((2, 2, 196), DType::F32, &Device::Cpu).unwrap();
        let c1 = ConvLayer::new(&mut store, "c", ConvKind::Conv1d, 2, 32, 3, 1, &mut rng).unwrap();
        assert_eq!(c1.forward(&seq).unwrap().dims(), &[2, 32, 196]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new(DType::F32);
        store.zeros("a".into(), &[2]).unwrap();
        assert!(store.zeros("a".into(), &[2]).is_err());
    }

    #[test]
    fn normalization() {
        let x = Tensor::new(&[[2.0f64, 2.0, 2.0, 2.0]], &Device::Cpu).unwrap();
        // two symbols 2+2j: power 8 each
        let y = power_normalize(&x).unwrap();
        assert!((mean_symbol_power(&y).unwrap() - 1.0).abs() < 1e-12);
        let z = power_normalize(&Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap()).unwrap();
        assert!(z.flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut store = ParamStore::new(DType::F64);
        let mut rng = RngState::new(2);
        let dense = Dense::new(&mut store, "d", 3, 2, &mut rng).unwrap();
        let before = store.snapshot().unwrap();
        let mut adam = Adam::new(&store, 0.0).unwrap();
        let x = Tensor::new(&[[1.0f64, -2.0, 0.5]], &Device::Cpu).unwrap();
        let loss = dense.forward(&x).unwrap().sqr().unwrap().sum_all().unwrap();
        adam.apply(&store, &loss.backward().unwrap()).unwrap();
        let after = store.snapshot().unwrap();
        for (k, t) in &before {
            let d = (t - &after[k]).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
            assert_eq!(d, 0.0);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::new(DType::F64);
        let w = store.zeros("w".into(), &[1]).unwrap();
        let mut adam = Adam::new(&store, 0.1).unwrap();
        let loss = (w.as_tensor() - 3.0).unwrap().sqr().unwrap().sum_all().unwrap();
        adam.apply(&store, &loss.backward().unwrap()).unwrap();
        let v = w.as_tensor().to_vec1::<f64>().unwrap()[0];
        // bias-corrected first step is lr * sign(-grad)
        assert!((v - 0.1).abs() < 1e-6, "{v}");
    }

    proptest::proptest! {
        #[test]
        fn normalized_power_is_one_and_scale_free(
            rows in 1usize..6,
            vals in proptest::collection::vec(-50.0f64..50.0, 60),
            scale in 1e-3f64..1e3,
        ) {
            proptest::prop_assume!(vals.iter().take(rows * 10).any(|v| v.abs() > 1e-3));
            let x = Tensor::from_vec(vals[..rows * 10].to_vec(), (rows, 10), &Device::Cpu).unwrap();
            let y = power_normalize(&x).unwrap();
            proptest::prop_assert!((mean_symbol_power(&y).unwrap() - 1.0).abs() < 1e-9);
            let z = power_normalize(&(&x * scale).unwrap()).unwrap();
            let diff = (y - z).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
            proptest::prop_assert!(diff < 1e-9, "{}", diff);
        }
    }
}
