//! Conditional GAN with two discriminators.
//!
//! The generator maps a memory surface `y` and a noise grid `z` to a
//! predicted next frame. `D_xy` judges (frame, surface) pairs and `D_x`
//! judges frames alone:
//!
//! ```text
//! G:    [y, z] -> 3 x (conv k4 s2) -> 3 x (conv^T k4 s2, skip concat) -> tanh
//! D_xy: [x, y] -> 3 x (conv k4 s2) -> dense -> logit
//! D_x:  [x]    -> 3 x (conv k4 s2) -> dense -> logit
//! ```
//!
//! Losses use the logit form of binary cross-entropy, so they stay finite for
//! any finite input. The generator loss is the non-saturating variant plus an
//! optional L1 term.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::msnet::{uniform_init, Bound, MsError, MsNet};
use crate::repr::WindowSample;
use crate::tensor::{Adam, AdamConfig, Graph, ParamSet, Scalar, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GanError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ms(#[from] MsError),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("frame size {height}x{width} is not divisible by 8")]
    BadGeometry { height: usize, width: usize },
    #[error("non-finite {what} loss at epoch {epoch}; training stopped")]
    DivergenceDetected {
        epoch: usize,
        what: &'static str,
        /// Parameters before the step that diverged.
        last_finite: Box<GanParams>,
    },
}

const KERNEL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanConfig {
    pub height: usize,
    pub width: usize,
    /// Channels after the first down-sampling; later stages use 2x and 4x.
    pub base_channels: usize,
    pub leak: f64,
}

impl GanConfig {
    pub fn new(height: usize, width: usize, base_channels: usize) -> Result<Self, GanError> {
        if height == 0 || width == 0 || height % 8 != 0 || width % 8 != 0 {
            return Err(GanError::BadGeometry { height, width });
        }
        Ok(Self {
            height,
            width,
            base_channels,
            leak: 0.2,
        })
    }

    fn channels(&self) -> [usize; 3] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c]
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// Weights of all three players, kept in separate sets so that each
/// optimizer only ever touches its own player.
#[derive(Debug, Clone, PartialEq)]
pub struct GanParams {
    pub config: GanConfig,
    pub g: ParamSet<f32>,
    pub dxy: ParamSet<f32>,
    pub dx: ParamSet<f32>,
}

fn shapes_g(cfg: &GanConfig) -> Vec<(String, Vec<usize>, usize)> {
    let [c1, c2, c3] = cfg.channels();
    let k2 = KERNEL * KERNEL;
    let mut out = Vec::new();
    let mut layer = |name: &str, w: Vec<usize>, out_ch: usize, fan_in: usize| {
        out.push((format!("g.{name}.w"), w, fan_in));
        out.push((format!("g.{name}.b"), vec![out_ch], fan_in));
    };
    layer("down1", vec![c1, 2, KERNEL, KERNEL], c1, 2 * k2);
    layer("down2", vec![c2, c1, KERNEL, KERNEL], c2, c1 * k2);
    layer("down3", vec![c3, c2, KERNEL, KERNEL], c3, c2 * k2);
    layer("up1", vec![c3, c2, KERNEL, KERNEL], c2, c3 * k2);
    layer("up2", vec![2 * c2, c1, KERNEL, KERNEL], c1, 2 * c2 * k2);
    layer("up3", vec![2 * c1, 1, KERNEL, KERNEL], 1, 2 * c1 * k2);
    out
}

fn shapes_d(cfg: &GanConfig, prefix: &str, in_ch: usize) -> Vec<(String, Vec<usize>, usize)> {
    let [c1, c2, c3] = cfg.channels();
    let k2 = KERNEL * KERNEL;
    let flat = c3 * cfg.plane() / 64;
    let mut out = Vec::new();
    let mut layer = |name: &str, w: Vec<usize>, out_ch: usize, fan_in: usize| {
        out.push((format!("{prefix}.{name}.w"), w, fan_in));
        out.push((format!("{prefix}.{name}.b"), vec![out_ch], fan_in));
    };
    layer("conv1", vec![c1, in_ch, KERNEL, KERNEL], c1, in_ch * k2);
    layer("conv2", vec![c2, c1, KERNEL, KERNEL], c2, c1 * k2);
    layer("conv3", vec![c3, c2, KERNEL, KERNEL], c3, c2 * k2);
    layer("fc", vec![1, flat], 1, flat);
    out
}

fn init_set(rng: &mut ChaCha8Rng, shapes: Vec<(String, Vec<usize>, usize)>) -> ParamSet<f32> {
    let mut p = ParamSet::new();
    for (name, shape, fan_in) in shapes {
        p.insert(name, uniform_init(rng, &shape, fan_in));
    }
    p
}

fn checked_set(
    all: &ParamSet<f32>,
    shapes: Vec<(String, Vec<usize>, usize)>,
) -> Result<ParamSet<f32>, GanError> {
    let mut p = ParamSet::new();
    for (name, shape, _) in shapes {
        let t = all.get(&name)?;
        if t.shape() != shape.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "checkpoint",
                left: shape,
                right: t.shape().to_vec(),
            }
            .into());
        }
        p.insert(name, t.clone());
    }
    Ok(p)
}

impl GanParams {
    pub fn init(config: GanConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            g: init_set(&mut rng, shapes_g(&config)),
            dxy: init_set(&mut rng, shapes_d(&config, "dxy", 2)),
            dx: init_set(&mut rng, shapes_d(&config, "dx", 1)),
            config,
        }
    }

    /// All tensors in one set, as stored in checkpoints.
    pub fn to_param_set(&self) -> ParamSet<f32> {
        let mut all = self.g.clone();
        all.extend(self.dxy.clone());
        all.extend(self.dx.clone());
        all
    }

    /// Restores from checkpoint tensors for the given frame size. The channel
    /// width is read from the first generator layer.
    pub fn from_param_set(
        all: &ParamSet<f32>,
        height: usize,
        width: usize,
    ) -> Result<Self, GanError> {
        let base = all.get("g.down1.w")?.shape()[0];
        let config = GanConfig::new(height, width, base)?;
        Ok(Self {
            g: checked_set(all, shapes_g(&config))?,
            dxy: checked_set(all, shapes_d(&config, "dxy", 2))?,
            dx: checked_set(all, shapes_d(&config, "dx", 1))?,
            config,
        })
    }

    pub fn all_finite(&self) -> bool {
        self.g.all_finite() && self.dxy.all_finite() && self.dx.all_finite()
    }
}

fn layer(p: &Bound, name: &str) -> Result<(Var, Var), TensorError> {
    Ok((p.var(&format!("{name}.w"))?, p.var(&format!("{name}.b"))?))
}

/// Generator on `y, z: [N, 1, H, W]`, returning `[N, 1, H, W]` in `(-1, 1)`.
pub fn generator_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    y: Var,
    z: Var,
    leak: f64,
) -> Result<Var, TensorError> {
    let a = T::of(leak);
    let input = g.concat(&[y, z])?;
    let mut skips = Vec::with_capacity(3);
    let mut h = input;
    for name in ["g.down1", "g.down2", "g.down3"] {
        let (w, b) = layer(p, name)?;
        h = g.conv2d(h, w, Some(b), 2, 1)?;
        h = g.leaky_relu(h, a);
        skips.push(h);
    }
    let (w, b) = layer(p, "g.up1")?;
    h = g.conv_transpose2d(h, w, Some(b), 2, 1)?;
    h = g.leaky_relu(h, a);
    h = g.concat(&[h, skips[1]])?;
    let (w, b) = layer(p, "g.up2")?;
    h = g.conv_transpose2d(h, w, Some(b), 2, 1)?;
    h = g.leaky_relu(h, a);
    h = g.concat(&[h, skips[0]])?;
    let (w, b) = layer(p, "g.up3")?;
    h = g.conv_transpose2d(h, w, Some(b), 2, 1)?;
    Ok(g.tanh(h))
}

/// Discriminator `prefix` (`"dxy"` or `"dx"`) on `[N, C, H, W]`, returning
/// one logit per sample, `[N, 1]`.
pub fn discriminator_graph<T: Scalar>(
    g: &mut Graph<T>,
    p: &Bound,
    prefix: &str,
    input: Var,
    leak: f64,
) -> Result<Var, TensorError> {
    let a = T::of(leak);
    let mut h = input;
    for name in ["conv1", "conv2", "conv3"] {
        let (w, b) = layer(p, &format!("{prefix}.{name}"))?;
        h = g.conv2d(h, w, Some(b), 2, 1)?;
        h = g.leaky_relu(h, a);
    }
    let (w, b) = layer(p, &format!("{prefix}.fc"))?;
    g.dense(h, w, Some(b))
}

fn filled<T: Scalar>(g: &mut Graph<T>, like: Var, v: f64) -> Var {
    let shape = g.shape(like).to_vec();
    let n = shape.iter().product();
    g.constant_from(&shape, vec![T::of(v); n])
        .expect("length matches shape")
}

/// `-mean log sigmoid(real) - mean log(1 - sigmoid(fake))`.
pub fn discriminator_loss<T: Scalar>(
    g: &mut Graph<T>,
    real: Var,
    fake: Var,
) -> Result<Var, TensorError> {
    let ones = filled(g, real, 1.0);
    let zeros = filled(g, fake, 0.0);
    let a = g.bce_with_logits(real, ones)?;
    let b = g.bce_with_logits(fake, zeros)?;
    g.add(a, b)
}

/// `-mean log sigmoid(fake)`, the non-saturating generator term.
pub fn generator_adv_loss<T: Scalar>(g: &mut Graph<T>, fake: Var) -> Result<Var, TensorError> {
    let ones = filled(g, fake, 1.0);
    g.bce_with_logits(fake, ones)
}

/// One mini-batch: surfaces `y`, true next frames `x` and noise `z`, each
/// `n x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GanBatch {
    pub n: usize,
    pub y: Vec<f32>,
    pub x: Vec<f32>,
    pub z: Vec<f32>,
}

/// A conditioning surface and the frame that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct GanSample {
    pub y: Vec<f32>,
    pub x: Vec<f32>,
}

impl GanBatch {
    pub fn new(samples: &[&GanSample], z: Vec<f32>) -> Self {
        let mut y = Vec::new();
        let mut x = Vec::new();
        for s in samples {
            y.extend_from_slice(&s.y);
            x.extend_from_slice(&s.x);
        }
        Self {
            n: samples.len(),
            y,
            x,
            z,
        }
    }

    fn var<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        data: &[f32],
        cfg: &GanConfig,
    ) -> Result<Var, TensorError> {
        g.constant_from(
            &[self.n, 1, cfg.height, cfg.width],
            data.iter().map(|&v| T::of(f64::from(v))).collect(),
        )
    }
}

/// Deterministic prediction for every sample in the batch.
pub fn g_forward(params: &GanParams, y: &[f32], z: &[f32]) -> Result<Vec<f32>, GanError> {
    let cfg = params.config;
    if y.len() != z.len() || y.is_empty() || y.len() % cfg.plane() != 0 {
        return Err(TensorError::ShapeMismatch {
            op: "g_forward",
            left: vec![y.len()],
            right: vec![z.len()],
        }
        .into());
    }
    let batch = GanBatch {
        n: y.len() / cfg.plane(),
        y: y.to_vec(),
        x: Vec::new(),
        z: z.to_vec(),
    };
    let mut g = Graph::<f32>::new();
    let p = Bound::bind(&mut g, &params.g, false);
    let yv = batch.var(&mut g, &batch.y, &cfg)?;
    let zv = batch.var(&mut g, &batch.z, &cfg)?;
    let out = generator_graph(&mut g, &p, yv, zv, cfg.leak)?;
    Ok(g.value(out).to_vec())
}

/// Discriminator losses `(L_Dxy, L_Dx)` for a batch, built in a caller-owned
/// graph so any scalar type can be used. `fake` is a detached prediction.
pub fn d_losses_graph<T: Scalar>(
    g: &mut Graph<T>,
    dxy: &Bound,
    dx: &Bound,
    cfg: &GanConfig,
    batch: &GanBatch,
    fake: &[f32],
) -> Result<(Var, Var), TensorError> {
    let x = batch.var(g, &batch.x, cfg)?;
    let y = batch.var(g, &batch.y, cfg)?;
    let f = batch.var(g, fake, cfg)?;
    let real_pair = g.concat(&[x, y])?;
    let fake_pair = g.concat(&[f, y])?;
    let lr = discriminator_graph(g, dxy, "dxy", real_pair, cfg.leak)?;
    let lf = discriminator_graph(g, dxy, "dxy", fake_pair, cfg.leak)?;
    let l_xy = discriminator_loss(g, lr, lf)?;
    let lr = discriminator_graph(g, dx, "dx", x, cfg.leak)?;
    let lf = discriminator_graph(g, dx, "dx", f, cfg.leak)?;
    let l_x = discriminator_loss(g, lr, lf)?;
    Ok((l_xy, l_x))
}

/// Generator loss on a batch, with discriminator weights bound as given.
/// Weights of the reconstruction terms `mean|x_hat - x|` and
/// `mean (x_hat - x)^2` added to the adversarial generator loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Recon {
    pub l1: f64,
    pub l2: f64,
}

impl Recon {
    pub fn l1(weight: f64) -> Self {
        Self {
            l1: weight,
            l2: 0.0,
        }
    }
}

pub fn g_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    gen: &Bound,
    dxy: &Bound,
    dx: &Bound,
    cfg: &GanConfig,
    batch: &GanBatch,
    recon: Recon,
) -> Result<Var, TensorError> {
    let x = batch.var(g, &batch.x, cfg)?;
    let y = batch.var(g, &batch.y, cfg)?;
    let z = batch.var(g, &batch.z, cfg)?;
    let fake = generator_graph(g, gen, y, z, cfg.leak)?;
    let pair = g.concat(&[fake, y])?;
    let l_xy = discriminator_graph(g, dxy, "dxy", pair, cfg.leak)?;
    let l_x = discriminator_graph(g, dx, "dx", fake, cfg.leak)?;
    let a = generator_adv_loss(g, l_xy)?;
    let b = generator_adv_loss(g, l_x)?;
    let mut loss = g.add(a, b)?;
    if recon.l1 == 0.0 && recon.l2 == 0.0 {
        return Ok(loss);
    }
    let diff = g.sub(fake, x)?;
    if recon.l1 != 0.0 {
        let l1 = g.l1_norm(diff);
        let l1 = g.scale(l1, T::of(recon.l1));
        loss = g.add(loss, l1)?;
    }
    if recon.l2 != 0.0 {
        let sq = g.mul(diff, diff)?;
        let l2 = g.l1_norm(sq);
        let l2 = g.scale(l2, T::of(recon.l2));
        loss = g.add(loss, l2)?;
    }
    Ok(loss)
}

/// `(L_Dxy, L_Dx)` with the generator's prediction detached.
pub fn d_losses(params: &GanParams, batch: &GanBatch) -> Result<(f64, f64), GanError> {
    let fake = g_forward(params, &batch.y, &batch.z)?;
    let mut g = Graph::<f32>::new();
    let dxy = Bound::bind(&mut g, &params.dxy, false);
    let dx = Bound::bind(&mut g, &params.dx, false);
    let (a, b) = d_losses_graph(&mut g, &dxy, &dx, &params.config, batch, &fake)?;
    Ok((f64::from(g.scalar(a)), f64::from(g.scalar(b))))
}

pub fn g_loss(params: &GanParams, batch: &GanBatch, recon: Recon) -> Result<f64, GanError> {
    let mut g = Graph::<f32>::new();
    let gen = Bound::bind(&mut g, &params.g, false);
    let dxy = Bound::bind(&mut g, &params.dxy, false);
    let dx = Bound::bind(&mut g, &params.dx, false);
    let l = g_loss_graph(&mut g, &gen, &dxy, &dx, &params.config, batch, recon)?;
    Ok(f64::from(g.scalar(l)))
}

/// Fraction of real samples scored above 0.5 and fakes below, per
/// discriminator: `(D_xy, D_x)`.
pub fn discriminator_accuracy(
    params: &GanParams,
    batch: &GanBatch,
    fake: &[f32],
) -> Result<(f64, f64), GanError> {
    let cfg = params.config;
    let mut g = Graph::<f32>::new();
    let dxy = Bound::bind(&mut g, &params.dxy, false);
    let dx = Bound::bind(&mut g, &params.dx, false);
    let x = batch.var(&mut g, &batch.x, &cfg)?;
    let y = batch.var(&mut g, &batch.y, &cfg)?;
    let f = batch.var(&mut g, fake, &cfg)?;
    let rp = g.concat(&[x, y])?;
    let fp = g.concat(&[f, y])?;
    let (a, b, c, d) = (
        discriminator_graph(&mut g, &dxy, "dxy", rp, cfg.leak)?,
        discriminator_graph(&mut g, &dxy, "dxy", fp, cfg.leak)?,
        discriminator_graph(&mut g, &dx, "dx", x, cfg.leak)?,
        discriminator_graph(&mut g, &dx, "dx", f, cfg.leak)?,
    );
    let acc = |real: Var, fake: Var| {
        let hits = g.value(real).iter().filter(|&&l| l > 0.0).count()
            + g.value(fake).iter().filter(|&&l| l < 0.0).count();
        hits as f64 / (2 * batch.n) as f64
    };
    Ok((acc(a, b), acc(c, d)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GanTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub adam: AdamConfig,
}

impl Default for GanTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            adam: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
                eps: 1e-8,
            },
        }
    }
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanCurves {
    pub d_xy: Vec<f64>,
    pub d_x: Vec<f64>,
    pub g: Vec<f64>,
}

/// Parameters plus one Adam state per player.
pub struct GanTrainer {
    pub params: GanParams,
    pub train: GanTrainConfig,
    adam_g: Adam<f32>,
    adam_dxy: Adam<f32>,
    adam_dx: Adam<f32>,
}

impl GanTrainer {
    pub fn new(params: GanParams, train: GanTrainConfig) -> Self {
        Self {
            adam_g: Adam::new(train.adam, &params.g),
            adam_dxy: Adam::new(train.adam, &params.dxy),
            adam_dx: Adam::new(train.adam, &params.dx),
            params,
            train,
        }
    }

    /// One update of `D_xy` against a detached prediction. Returns the loss
    /// before the update.
    pub fn d_xy_step(&mut self, batch: &GanBatch, fake: &[f32]) -> Result<f64, GanError> {
        self.d_step(batch, fake, true)
    }

    pub fn d_x_step(&mut self, batch: &GanBatch, fake: &[f32]) -> Result<f64, GanError> {
        self.d_step(batch, fake, false)
    }

    fn d_step(&mut self, batch: &GanBatch, fake: &[f32], pair: bool) -> Result<f64, GanError> {
        let cfg = self.params.config;
        let mut g = Graph::<f32>::new();
        let dxy = Bound::bind(&mut g, &self.params.dxy, pair);
        let dx = Bound::bind(&mut g, &self.params.dx, !pair);
        let (l_xy, l_x) = d_losses_graph(&mut g, &dxy, &dx, &cfg, batch, fake)?;
        let (loss, bound) = if pair { (l_xy, &dxy) } else { (l_x, &dx) };
        let value = f64::from(g.scalar(loss));
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = g.backward(loss)?;
        let grads: Vec<Vec<f32>> = bound.vars().map(|v| grads.wrt(v)).collect();
        if pair {
            self.adam_dxy.step(&mut self.params.dxy, &grads)?;
        } else {
            self.adam_dx.step(&mut self.params.dx, &grads)?;
        }
        Ok(value)
    }

    /// One generator update with both discriminators held fixed.
    pub fn g_step(&mut self, batch: &GanBatch) -> Result<f64, GanError> {
        let cfg = self.params.config;
        let mut g = Graph::<f32>::new();
        let gen = Bound::bind(&mut g, &self.params.g, true);
        let dxy = Bound::bind(&mut g, &self.params.dxy, false);
        let dx = Bound::bind(&mut g, &self.params.dx, false);
        let loss = g_loss_graph(
            &mut g,
            &gen,
            &dxy,
            &dx,
            &cfg,
            batch,
            Recon {
                l1: self.train.lambda_l1,
                l2: self.train.lambda_l2,
            },
        )?;
        let value = f64::from(g.scalar(loss));
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = g.backward(loss)?;
        let grads: Vec<Vec<f32>> = gen.vars().map(|v| grads.wrt(v)).collect();
        self.adam_g.step(&mut self.params.g, &grads)?;
        Ok(value)
    }
}

/// Pairs each window's memory surface with its normalized target frame.
/// Windows must already be normalized.
pub fn gan_samples(windows: &[WindowSample], ms: &MsNet) -> Result<Vec<GanSample>, GanError> {
    const CHUNK: usize = 32;
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let vols: Vec<_> = chunk.iter().map(|w| &w.input).collect();
        let surfaces = ms.encode_batch(&vols)?;
        let plane = surfaces.len() / chunk.len();
        for (w, y) in chunk.iter().zip(surfaces.chunks(plane)) {
            out.push(GanSample {
                y: y.to_vec(),
                x: w.target.clone(),
            });
        }
    }
    Ok(out)
}

pub fn sample_noise(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// Alternating training: per batch one `D_xy` step, one `D_x` step and one
/// generator step. Deterministic for a fixed seed.
pub fn train_gan(
    samples: &[GanSample],
    config: GanConfig,
    train: GanTrainConfig,
    seed: u64,
) -> Result<(GanParams, GanCurves), GanError> {
    if samples.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let plane = config.plane();
    if let Some(bad) = samples
        .iter()
        .find(|s| s.x.len() != plane || s.y.len() != plane)
    {
        return Err(TensorError::ShapeMismatch {
            op: "train_gan",
            left: vec![plane],
            right: vec![bad.x.len(), bad.y.len()],
        }
        .into());
    }
    let mut trainer = GanTrainer::new(GanParams::init(config, seed), train);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_6a4e);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut curves = GanCurves::default();
    for epoch in 0..train.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        for chunk in order.chunks(train.batch_size.max(1)) {
            let picked: Vec<&GanSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let batch = GanBatch::new(&picked, sample_noise(&mut rng, chunk.len() * plane));
            let before = trainer.params.clone();
            let fake = g_forward(&trainer.params, &batch.y, &batch.z)?;
            let losses = [
                ("D_xy", trainer.d_xy_step(&batch, &fake)?),
                ("D_x", trainer.d_x_step(&batch, &fake)?),
                ("G", trainer.g_step(&batch)?),
            ];
            for (k, (what, l)) in losses.iter().enumerate() {
                if !l.is_finite() {
                    return Err(GanError::DivergenceDetected {
                        epoch,
                        what,
                        last_finite: Box::new(before),
                    });
                }
                sums[k] += l * chunk.len() as f64;
            }
            if !trainer.params.all_finite() {
                return Err(GanError::DivergenceDetected {
                    epoch,
                    what: "parameter",
                    last_finite: Box::new(before),
                });
            }
        }
        let n = samples.len() as f64;
        curves.d_xy.push(sums[0] / n);
        curves.d_x.push(sums[1] / n);
        curves.g.push(sums[2] / n);
        log::debug!(
            "gan epoch {epoch}: D_xy {:.4} D_x {:.4} G {:.4}",
            sums[0] / n,
            sums[1] / n,
            sums[2] / n
        );
    }
    Ok((trainer.params, curves))
}

/// Convenience wrapper: encodes normalized windows with a frozen surface
/// network and trains on the result.
pub fn train_gan_on_windows(
    windows: &[WindowSample],
    ms: &MsNet,
    config: GanConfig,
    train: GanTrainConfig,
    seed: u64,
) -> Result<(GanParams, GanCurves), GanError> {
    if windows.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    train_gan(&gan_samples(windows, ms)?, config, train, seed)
}

/// Logit that maps to probability `d` under the sigmoid.
pub fn logit(d: f64) -> f64 {
    (d / (1.0 - d)).ln()
}

/// Wraps a value table as a tensor of shape `[len, 1]`.
pub fn logits_tensor<T: Scalar>(values: &[f64]) -> Tensor<T> {
    Tensor::new(
        vec![values.len(), 1],
        values.iter().map(|&v| T::of(v)).collect(),
    )
    .expect("length matches shape")
}
