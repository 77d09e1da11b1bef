//! Semantic PNC: the jointly trained encoder, relay and decoder networks.

mod model;

use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_container, write_container};
use crate::error::{Error, Result};
use crate::nn::Adam;

pub use model::{
    ChannelDraw, ExchangeOutput, ScpncArch, ScpncNet, SemanticFeatures, SymbolVector, FEATURE_CHANNELS, PARAM_GROUPS,
};

pub const CHECKPOINT_FORMAT: &str = "twrc.scpnc";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Bookkeeping stored next to the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs_completed: usize,
    pub steps: u64,
    pub train_snr_db: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Held-out loss of each completed epoch.
    pub val_losses: Vec<f64>,
    pub config_hash: String,
}

/// Optimizer moments saved for resuming.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn capture(adam: &Adam) -> Result<Self> {
        Ok(Self {
            step: adam.step,
            tensors: adam.state()?,
        })
    }
}

/// Writes parameters, architecture and metadata, plus optimizer state when
/// given.
pub fn save_checkpoint(net: &ScpncNet, meta: &TrainingMeta, optimizer: Option<&OptimizerState>, path: &Path) -> Result<()> {
    let mut tensors = net.params().snapshot()?;
    let mut metadata = BTreeMap::new();
    metadata.insert("arch".to_string(), serde_json::to_string(net.arch())?);
    metadata.insert("meta".to_string(), serde_json::to_string(meta)?);
    metadata.insert("dtype".to_string(), format!("{:?}", net.dtype()));
    if let Some(opt) = optimizer {
        tensors.extend(opt.tensors.iter().map(|(k, v)| (k.clone(), v.clone())));
        metadata.insert("adam_step".to_string(), opt.step.to_string());
    }
    write_container(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, &tensors, metadata)
}

/// A loaded checkpoint.
pub struct ScpncCheckpoint {
    pub net: ScpncNet,
    pub meta: TrainingMeta,
    pub optimizer: Option<OptimizerState>,
}

pub fn load_checkpoint(path: &Path) -> Result<ScpncCheckpoint> {
    let (mut tensors, metadata) = read_container(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    let field = |k: &str| {
        metadata
            .get(k)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing metadata key {k}", path.display())))
    };
    let arch: ScpncArch = serde_json::from_str(field("arch")?)?;
    let meta: TrainingMeta = serde_json::from_str(field("meta")?)?;
    let dtype = match field("dtype")?.as_str() {
        "F64" => DType::F64,
        "F32" => DType::F32,
        other => return Err(Error::Checkpoint(format!("unsupported dtype {other}"))),
    };
    let optimizer = match metadata.get("adam_step") {
        Some(step) => {
            let step = step
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad adam_step {step:?}")))?;
            let opt: BTreeMap<String, Tensor> = tensors
                .iter()
                .filter(|(k, _)| k.starts_with("adam."))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            Some(OptimizerState { step, tensors: opt })
        }
        None => None,
    };
    tensors.retain(|k, _| !k.starts_with("adam."));
    let net = ScpncNet::new(arch, dtype, 0)?;
    net.params().load(&tensors)?;
    Ok(ScpncCheckpoint { net, meta, optimizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::RngState;
    use crate::image::ImageBatch;
    use crate::nn::mean_symbol_power;
    use crate::train::{exchange_loss, scpnc_loss_with_draw, TrainingTriplet};
    use candle_core::{DType, Device, Tensor};
    use rand::Rng;

    fn small_net(dtype: DType) -> ScpncNet {
        ScpncNet::new(ScpncArch::default(), dtype, 11).unwrap()
    }

    fn random_images(rng: &mut RngState, b: usize) -> ImageBatch {
        ImageBatch::new(b, 28, 28, 1, (0..b * 784).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    fn rows_equal(t: &Tensor, i: usize, j: usize) -> bool {
        let a = t.get(i).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = t.get(j).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        a == b
    }

    #[test]
    fn shape_pipeline() {
        let net = small_net(DType::F32);
        let mut rng = RngState::new(1);
        let img = net.image_tensor(&random_images(&mut rng, 3)).unwrap();
        let f = net.semantic_encode(&img).unwrap();
        assert_eq!(f.0.dims(), &[3, 16, 7, 7]);
        let x = net.channel_encode(&f).unwrap();
        assert_eq!(x.0.dims(), &[3, 392]);
        let r = net.semantic_pnc_decode(&x).unwrap();
        assert_eq!(r.0.dims(), &[3, 392]);
        let f_hat = net.channel_decode(&x, &r).unwrap();
        assert_eq!(f_hat.0.dims(), &[3, 16, 7, 7]);
        let out = net.semantic_decode(&f_hat).unwrap();
        assert_eq!(out.dims(), &[3, 1, 28, 28]);
        let v = out.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(net.arch().symbols_per_image(), 196);
    }

    #[test]
    fn shape_errors() {
        let net = small_net(DType::F32);
        let bad = Tensor::zeros((2, 1, 14, 14), DType::F32, &Device::Cpu).unwrap();
        assert!(matches!(net.semantic_encode(&bad), Err(Error::Shape(_))));
        let narrow = SymbolVector(Tensor::zeros((2, 100), DType::F32, &Device::Cpu).unwrap());
        assert!(net.semantic_pnc_decode(&narrow).is_err());
        let x = SymbolVector(Tensor::zeros((2, 392), DType::F32, &Device::Cpu).unwrap());
        let y = SymbolVector(Tensor::zeros((3, 392), DType::F32, &Device::Cpu).unwrap());
        assert!(net.channel_decode(&x, &y).is_err());
        let f = SemanticFeatures(Tensor::zeros((2, 8, 7, 7), DType::F32, &Device::Cpu).unwrap());
        assert!(net.semantic_decode(&f).is_err());
        let wrong = ImageBatch::new(1, 8, 8, 1, vec![0.0; 64]).unwrap();
        assert!(net.image_tensor(&wrong).is_err());
        assert!(ScpncNet::new(ScpncArch { m: 391, ..Default::default() }, DType::F32, 0).is_err());
    }

    #[test]
    fn encoder_rows_are_independent() {
        let net = small_net(DType::F32);
        let mut rng = RngState::new(2);
        let one = random_images(&mut rng, 1);
        let zero = ImageBatch::new(1, 28, 28, 1, vec![0.0; 784]).unwrap();
        let mut pixels = one.pixels().to_vec();
        pixels.extend_from_slice(zero.pixels());
        pixels.extend_from_slice(one.pixels());
        let batch = ImageBatch::new(3, 28, 28, 1, pixels).unwrap();
        let f = net.semantic_encode(&net.image_tensor(&batch).unwrap()).unwrap();
        assert!(rows_equal(&f.0, 0, 2));
        let v = f.0.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn transmitted_power_is_unit() {
        let net = small_net(DType::F32);
        let mut rng = RngState::new(3);
        let img = net.image_tensor(&random_images(&mut rng, 4)).unwrap();
        let f = net.semantic_encode(&img).unwrap();
        let raw = net.channel_encode_raw(&f).unwrap();
        let x = net.channel_encode(&f).unwrap();
        assert!((mean_symbol_power(&x.0).unwrap() - 1.0).abs() < 1e-6);
        let doubled = crate::nn::power_normalize(&(raw * 2.0).unwrap()).unwrap();
        let diff = (doubled - &x.0).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-6, "{diff}");
        let draw = ChannelDraw::sample(4, 392, vec![0.3; 4], 0.2, 0.2, &mut rng).unwrap();
        let out = net.exchange(&img, &img, &draw).unwrap();
        for s in [&out.x_a, &out.x_b, &out.x_r] {
            assert!((mean_symbol_power(&s.0).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn exchange_is_deterministic_and_symmetric() {
        let net = small_net(DType::F32);
        let mut rng = RngState::new(4);
        let a = random_images(&mut rng, 3);
        let b = random_images(&mut rng, 3);
        let phases: Vec<f64> = (0..3).map(|_| rng.uniform() * std::f64::consts::TAU).collect();
        let draw = ChannelDraw::sample(3, 392, phases.clone(), 0.2, 0.1, &mut rng).unwrap();
        let t = TrainingTriplet::new(a.clone(), b.clone(), phases).unwrap();
        let l1 = scpnc_loss_with_draw(&t, &net, &draw).unwrap().to_scalar::<f32>().unwrap();
        let l2 = scpnc_loss_with_draw(&t, &net, &draw).unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());

        // swap data and channel roles: node B now has gain 1 and node A
        // carries the offset
        let swapped = TrainingTriplet {
            m_a: b,
            m_b: a,
            delta_phi: t.delta_phi.clone(),
        };
        let l3 = scpnc_loss_with_draw(&swapped, &net, &draw.swapped()).unwrap().to_scalar::<f32>().unwrap();
        assert!((l1 - l3).abs() <= 1e-6 * l1.abs(), "{l1} vs {l3}");
        // untrained network predicts a near-constant image
        assert!((1e-2..1.0).contains(&l1), "{l1}");
    }

    #[test]
    fn decoder_uses_self_information() {
        let net = small_net(DType::F32);
        let mut rng = RngState::new(5);
        let img = net.image_tensor(&random_images(&mut rng, 2)).unwrap();
        let x = net.channel_encode(&net.semantic_encode(&img).unwrap()).unwrap();
        let r = net.semantic_pnc_decode(&x).unwrap();
        let f1 = net.channel_decode(&x, &r).unwrap();
        let perturbed = SymbolVector((&x.0 + 0.1).unwrap());
        let f2 = net.channel_decode(&perturbed, &r).unwrap();
        let diff = (f1.0 - f2.0).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff > 1e-4);
    }

    #[test]
    fn parameter_groups_and_checkpoint_round_trip() {
        let net = small_net(DType::F32);
        let total: usize = PARAM_GROUPS.iter().map(|g| net.params().count_with_prefix(&format!("{g}."))).sum();
        assert_eq!(total, net.params().num_parameters());
        assert!(PARAM_GROUPS.iter().all(|g| net.params().count_with_prefix(&format!("{g}.")) > 0));
        // same seed, same parameters
        let again = small_net(DType::F32);
        assert_eq!(net.params().num_parameters(), again.params().num_parameters());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.safetensors");
        let meta = TrainingMeta {
            seed: 11,
            epochs_completed: 2,
            steps: 10,
            train_snr_db: 7.0,
            batch_size: 128,
            learning_rate: 1e-3,
            epoch_losses: vec![0.1, 0.05],
            val_losses: vec![0.09, 0.06],
            config_hash: "abc".into(),
        };
        let adam = Adam::new(net.params(), 1e-3).unwrap();
        save_checkpoint(&net, &meta, Some(&OptimizerState::capture(&adam).unwrap()), &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.meta, meta);
        assert_eq!(back.optimizer.unwrap().step, 0);
        let a = net.params().snapshot().unwrap();
        let b = back.net.params().snapshot().unwrap();
        assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
        for (k, t) in &a {
            let d = (t - &b[k]).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
            assert_eq!(d, 0.0, "{k}");
        }
        // a different format is refused
        crate::checkpoint::write_container(&path, "other", 1, &a, Default::default()).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let net = small_net(DType::F64);
        let mut rng = RngState::new(6);
        let a = random_images(&mut rng, 2);
        let b = random_images(&mut rng, 2);
        let phases = vec![0.7, 2.9];
        let draw = ChannelDraw::sample(2, 392, phases.clone(), 0.3, 0.3, &mut rng).unwrap();
        let t = TrainingTriplet::new(a, b, phases).unwrap();
        let loss = scpnc_loss_with_draw(&t, &net, &draw).unwrap();
        let grads = loss.backward().unwrap();
        let eval = || scpnc_loss_with_draw(&t, &net, &draw).unwrap().to_scalar::<f64>().unwrap();

        let names: Vec<String> = net.params().vars().keys().cloned().collect();
        let mut checked = 0;
        let mut attempts = 0;
        while checked < 24 && attempts < 400 {
            attempts += 1;
            let name = &names[rng.random_range(0..names.len())];
            let var = net.params().get(name).unwrap();
            let n = var.elem_count();
            let idx = rng.random_range(0..n);
            let g = grads.get(var.as_tensor()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()[idx];
            if g.abs() < 1e-7 {
                continue;
            }
            let orig = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let shape = var.dims().to_vec();
            let h = 1e-5 * orig[idx].abs().max(1.0);
            let set = |delta: f64| {
                let mut v = orig.clone();
                v[idx] += delta;
                var.set(&Tensor::from_vec(v, shape.as_slice(), &Device::Cpu).unwrap()).unwrap();
            };
            set(h);
            let up = eval();
            set(-h);
            let down = eval();
            set(0.0);
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - g).abs() / fd.abs().max(g.abs());
            assert!(rel < 1e-3, "{name}[{idx}]: backprop {g:e}, finite difference {fd:e}, rel {rel:e}");
            checked += 1;
        }
        assert!(checked >= 20, "only {checked} parameters had usable gradients");
        let _ = exchange_loss;
    }
}
