//! Memory-surface network: a per-pixel encoder-decoder over the time bins of
//! a volume.
//!
//! Every layer is a 1x1 convolution, so the network only mixes the time
//! axis and never the spatial one:
//!
//! ```text
//! encoder: B -> F (sigmoid) -> 1 (sigmoid)   = memory surface
//! decoder: 1 -> F (sigmoid) -> B (linear)    = reconstructed volume
//! ```
//!
//! Training minimizes `mean((vol - vol_hat)^2) + lambda * mean(|ms|)`: the
//! squared error is the Gaussian log-likelihood of the decoder output and
//! the L1 term keeps the surface sparse.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::repr::DiscretizedVolume;
use crate::tensor::{Adam, AdamConfig, Graph, ParamSet, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum MsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("volume has {got} bins, network expects {expected}")]
    BinMismatch { expected: usize, got: usize },
    #[error("volumes in the training set differ in shape")]
    RaggedDataset,
    #[error("loss became non-finite at epoch {epoch}")]
    NonFinite { epoch: usize },
}

pub const LAYERS: [&str; 4] = ["ms.enc1", "ms.enc2", "ms.dec1", "ms.dec2"];

/// Trained (or freshly initialized) network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MsNet {
    bins: usize,
    filters: usize,
    params: ParamSet<f32>,
}

/// `H x W` bottleneck image with entries in `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySurface {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` tensor.
pub(crate) fn uniform_init(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.random_range(-bound..bound) as f32)
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Parameters registered in a graph, looked up by name.
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn bind<T: Scalar>(g: &mut Graph<T>, params: &ParamSet<T>, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(n, t)| {
                let v = if trainable { g.param(t) } else { g.constant(t) };
                (n.to_string(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var, TensorError> {
        self.vars
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    /// Vars in parameter order.
    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(_, v)| *v)
    }

    fn layer(&self, prefix: &str) -> Result<(Var, Var), TensorError> {
        Ok((
            self.var(&format!("{prefix}.w"))?,
            self.var(&format!("{prefix}.b"))?,
        ))
    }
}

/// Encoder on a `[N, B, H, W]` input, returning `[N, 1, H, W]`.
pub fn encode_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    input: Var,
) -> Result<Var, TensorError> {
    let (w1, b1) = p.layer("ms.enc1")?;
    let (w2, b2) = p.layer("ms.enc2")?;
    let h = g.channel_mix(input, w1, Some(b1))?;
    let h = g.sigmoid(h);
    let m = g.channel_mix(h, w2, Some(b2))?;
    Ok(g.sigmoid(m))
}

/// Decoder on a `[N, 1, H, W]` surface, returning `[N, B, H, W]`.
pub fn decode_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    surface: Var,
) -> Result<Var, TensorError> {
    let (w1, b1) = p.layer("ms.dec1")?;
    let (w2, b2) = p.layer("ms.dec2")?;
    let h = g.channel_mix(surface, w1, Some(b1))?;
    let h = g.sigmoid(h);
    g.channel_mix(h, w2, Some(b2))
}

/// Reconstruction error plus L1 sparsity on the surface.
pub fn ms_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    vol: Var,
    vol_hat: Var,
    surface: Var,
    lambda_sparse: f64,
) -> Result<Var, TensorError> {
    let data = g.mse_loss(vol_hat, vol)?;
    if lambda_sparse == 0.0 {
        return Ok(data);
    }
    let l1 = g.l1_norm(surface);
    let sparse = g.scale(l1, T::of(lambda_sparse));
    g.add(data, sparse)
}

/// `mean((vol - vol_hat)^2) + lambda * mean(|ms|)` on plain slices.
pub fn ms_loss(vol: &[f32], vol_hat: &[f32], ms: &[f32], lambda_sparse: f64) -> f64 {
    assert_eq!(vol.len(), vol_hat.len(), "volume shapes differ");
    let data = vol
        .iter()
        .zip(vol_hat)
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        / vol.len() as f64;
    let sparse = if ms.is_empty() {
        0.0
    } else {
        ms.iter().map(|v| f64::from(v.abs())).sum::<f64>() / ms.len() as f64
    };
    data + lambda_sparse * sparse
}

impl MsNet {
    pub fn init(bins: usize, filters: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let dims = [(bins, filters), (filters, 1), (1, filters), (filters, bins)];
        for (name, (fan_in, out)) in LAYERS.iter().zip(dims) {
            params.insert(
                format!("{name}.w"),
                uniform_init(&mut rng, &[out, fan_in], fan_in),
            );
            params.insert(format!("{name}.b"), uniform_init(&mut rng, &[out], fan_in));
        }
        Self {
            bins,
            filters,
            params,
        }
    }

    /// Rebuilds the network from checkpointed tensors, checking shapes.
    pub fn from_params(all: &ParamSet<f32>) -> Result<Self, MsError> {
        let params = all.subset("ms.");
        let enc1 = params.get("ms.enc1.w")?.shape().to_vec();
        if enc1.len() != 2 {
            return Err(TensorError::ShapeMismatch {
                op: "ms.enc1.w",
                left: enc1,
                right: vec![0, 0],
            }
            .into());
        }
        let (filters, bins) = (enc1[0], enc1[1]);
        let expected = MsNet::init(bins, filters, 0);
        for (name, t) in expected.params.iter() {
            let got = params.get(name)?;
            if got.shape() != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "checkpoint",
                    left: t.shape().to_vec(),
                    right: got.shape().to_vec(),
                }
                .into());
            }
        }
        let mut ordered = ParamSet::new();
        for (name, _) in expected.params.iter() {
            ordered.insert(name, params.get(name)?.clone());
        }
        Ok(Self {
            bins,
            filters,
            params: ordered,
        })
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn filters(&self) -> usize {
        self.filters
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn check(&self, vol: &DiscretizedVolume) -> Result<(), MsError> {
        if vol.bins != self.bins {
            return Err(MsError::BinMismatch {
                expected: self.bins,
                got: vol.bins,
            });
        }
        Ok(())
    }

    /// Memory surfaces for a stack of volumes, `[N, 1, H, W]` flattened.
    pub fn encode_batch(&self, vols: &[&DiscretizedVolume]) -> Result<Vec<f32>, MsError> {
        if vols.is_empty() {
            return Ok(Vec::new());
        }
        for v in vols {
            self.check(v)?;
        }
        let mut g = Graph::<f32>::new();
        let p = Bound::bind(&mut g, &self.params, false);
        let input = stack(&mut g, vols)?;
        let ms = encode_graph(&mut g, &p, input)?;
        Ok(g.value(ms).to_vec())
    }

    pub fn encode(&self, vol: &DiscretizedVolume) -> Result<MemorySurface, MsError> {
        let data = self.encode_batch(&[vol])?;
        Ok(MemorySurface {
            height: vol.height,
            width: vol.width,
            data,
        })
    }

    /// `decode(encode(vol))`. No noise is added.
    pub fn reconstruct(&self, vol: &DiscretizedVolume) -> Result<DiscretizedVolume, MsError> {
        self.check(vol)?;
        let mut g = Graph::<f32>::new();
        let p = Bound::bind(&mut g, &self.params, false);
        let input = stack(&mut g, &[vol])?;
        let ms = encode_graph(&mut g, &p, input)?;
        let rec = decode_graph(&mut g, &p, ms)?;
        Ok(DiscretizedVolume {
            data: g.value(rec).to_vec(),
            ..vol.clone()
        })
    }

    /// Mean squared reconstruction error over a dataset.
    pub fn reconstruction_mse(&self, dataset: &[DiscretizedVolume]) -> Result<f64, MsError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for vol in dataset {
            let rec = self.reconstruct(vol)?;
            total += ms_loss(&vol.data, &rec.data, &[], 0.0) * vol.data.len() as f64;
            count += vol.data.len();
        }
        Ok(total / count.max(1) as f64)
    }
}

fn stack<T: Scalar>(g: &mut Graph<T>, vols: &[&DiscretizedVolume]) -> Result<Var, TensorError> {
    let (b, h, w) = (vols[0].bins, vols[0].height, vols[0].width);
    let mut data = Vec::with_capacity(vols.len() * b * h * w);
    for v in vols {
        if (v.bins, v.height, v.width) != (b, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: "stack",
                left: vec![b, h, w],
                right: vec![v.bins, v.height, v.width],
            });
        }
        data.extend(v.data.iter().map(|&x| T::of(f64::from(x))));
    }
    g.constant_from(&[vols.len(), b, h, w], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MsTrainConfig {
    pub filters: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_sparse: f64,
    pub adam: AdamConfig,
}

impl Default for MsTrainConfig {
    fn default() -> Self {
        Self {
            filters: 32,
            epochs: 30,
            batch_size: 4,
            lambda_sparse: 1e-3,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MsTrainReport {
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Smallest and largest bottleneck value seen during training.
    pub surface_range: (f32, f32),
}

/// Trains from a seeded initialization. Inputs should already be normalized.
pub fn train_ms(
    dataset: &[DiscretizedVolume],
    cfg: &MsTrainConfig,
    seed: u64,
) -> Result<(MsNet, MsTrainReport), MsError> {
    let first = dataset.first().ok_or(MsError::EmptyDataset)?;
    if dataset
        .iter()
        .any(|v| (v.bins, v.height, v.width) != (first.bins, first.height, first.width))
    {
        return Err(MsError::RaggedDataset);
    }
    let mut net = MsNet::init(first.bins, cfg.filters, seed);
    let mut adam = Adam::new(cfg.adam, &net.params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut report = MsTrainReport {
        epoch_loss: Vec::with_capacity(cfg.epochs),
        surface_range: (f32::INFINITY, f32::NEG_INFINITY),
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let vols: Vec<&DiscretizedVolume> = chunk.iter().map(|&i| &dataset[i]).collect();
            let mut g = Graph::<f32>::new();
            let p = Bound::bind(&mut g, &net.params, true);
            let input = stack(&mut g, &vols)?;
            let ms = encode_graph(&mut g, &p, input)?;
            let rec = decode_graph(&mut g, &p, ms)?;
            let loss = ms_loss_graph(&mut g, input, rec, ms, cfg.lambda_sparse)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(MsError::NonFinite { epoch });
            }
            for &v in g.value(ms) {
                report.surface_range.0 = report.surface_range.0.min(v);
                report.surface_range.1 = report.surface_range.1.max(v);
            }
            let grads = g.backward(loss)?;
            let grads: Vec<Vec<f32>> = p.vars().map(|v| grads.wrt(v)).collect();
            adam.step(&mut net.params, &grads)?;
            sum += f64::from(value) * chunk.len() as f64;
        }
        let mean = sum / dataset.len() as f64;
        log::debug!("ms epoch {epoch}: loss {mean:.6}");
        report.epoch_loss.push(mean);
    }
    Ok((net, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::repr::VolumeMode;

    fn volume(
        bins: usize,
        h: usize,
        w: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> DiscretizedVolume {
        let mut v = DiscretizedVolume::zeros(bins, h, w, 0, 1, VolumeMode::Bilinear);
        for b in 0..bins {
            for y in 0..h {
                for x in 0..w {
                    v.data[(b * h + y) * w + x] = f(b, y, x);
                }
            }
        }
        v
    }

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_volume_gives_bias_driven_constant_surface() {
        let net = MsNet::init(4, 6, 9);
        let ms = net.encode(&volume(4, 3, 5, |_, _, _| 0.0)).unwrap();
        let p = net.params();
        let b1 = p.get("ms.enc1.b").unwrap().data();
        let w2 = p.get("ms.enc2.w").unwrap().data();
        let b2 = p.get("ms.enc2.b").unwrap().data()[0];
        let pre: f64 = f64::from(b2)
            + w2.iter()
                .zip(b1)
                .map(|(&w, &b)| f64::from(w) * sigmoid(f64::from(b)))
                .sum::<f64>();
        let want = sigmoid(pre);
        for v in &ms.data {
            assert!((f64::from(*v) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn encoder_commutes_with_translation() {
        let net = MsNet::init(3, 5, 1);
        let (h, w) = (6, 7);
        let pattern =
            |b: usize, y: usize, x: usize| ((b * 31 + y * 7 + x * 3) % 11) as f32 / 11.0 - 0.4;
        let a = volume(3, h, w, pattern);
        let shifted = volume(3, h, w, |b, y, x| pattern(b, (y + 2) % h, (x + 3) % w));
        let ma = net.encode(&a).unwrap();
        let ms = net.encode(&shifted).unwrap();
        for y in 0..h {
            for x in 0..w {
                assert_eq!(ms.data[y * w + x], ma.data[((y + 2) % h) * w + (x + 3) % w]);
            }
        }
        assert!(ma.data.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn loss_definition() {
        let vol = vec![0.5f32, -1.0, 2.0];
        assert_eq!(ms_loss(&vol, &vol, &[0.3], 0.0), 0.0);
        let plus: Vec<f32> = vol.iter().map(|v| v + 1.0).collect();
        assert!((ms_loss(&vol, &plus, &[0.3], 0.0) - 1.0).abs() < 1e-12);
        assert!(ms_loss(&vol, &vol, &[0.3], 0.1) > 0.0);
    }

    #[test]
    fn graph_loss_matches_slice_loss() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(&Tensor::new(vec![1, 2, 1, 1], vec![0.2, -0.4]).unwrap());
        let b = g.constant(&Tensor::new(vec![1, 2, 1, 1], vec![0.1, 0.3]).unwrap());
        let m = g.constant(&Tensor::new(vec![1, 1, 1, 1], vec![0.7]).unwrap());
        let l = ms_loss_graph(&mut g, a, b, m, 0.5).unwrap();
        let want = ms_loss(&[0.2, -0.4], &[0.1, 0.3], &[0.7], 0.5);
        assert!((g.scalar(l) - want).abs() < 1e-6);
    }

    #[test]
    fn bin_mismatch_is_reported() {
        let net = MsNet::init(4, 2, 0);
        assert!(matches!(
            net.encode(&volume(3, 2, 2, |_, _, _| 0.0)),
            Err(MsError::BinMismatch {
                expected: 4,
                got: 3
            })
        ));
        assert!(matches!(
            train_ms(&[], &MsTrainConfig::default(), 0),
            Err(MsError::EmptyDataset)
        ));
    }

    #[test]
    fn overfits_a_single_sample() {
        let sample = volume(
            4,
            4,
            4,
            |b, y, x| if (x + y + b) % 3 == 0 { 0.6 } else { 0.0 },
        );
        let cfg = MsTrainConfig {
            filters: 16,
            epochs: 1500,
            batch_size: 1,
            lambda_sparse: 0.0,
            adam: AdamConfig {
                lr: 1e-2,
                ..Default::default()
            },
        };
        let data = vec![sample];
        let before = MsNet::init(4, 16, 4).reconstruction_mse(&data).unwrap();
        let (net, report) = train_ms(&data, &cfg, 4).unwrap();
        let after = net.reconstruction_mse(&data).unwrap();
        assert!(after < 1e-3, "before {before}, after {after}");
        assert!(report.epoch_loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn training_is_deterministic() {
        let data: Vec<DiscretizedVolume> = (0..5)
            .map(|k| {
                volume(3, 4, 4, move |b, y, x| {
                    ((b + y * 2 + x + k) % 4) as f32 * 0.2
                })
            })
            .collect();
        let cfg = MsTrainConfig {
            filters: 4,
            epochs: 3,
            ..Default::default()
        };
        let (a, ra) = train_ms(&data, &cfg, 17).unwrap();
        let (b, rb) = train_ms(&data, &cfg, 17).unwrap();
        assert_eq!(a.params().fingerprint(), b.params().fingerprint());
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
        assert_eq!(MsNet::from_params(a.params()).unwrap(), a);
    }
}
