//! Pixel-space denoising diffusion: noise schedule, closed-form forward
//! noising, ancestral reverse steps, denoiser training, strength-controlled
//! refinement and staged ×2 upscaling.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::gan::History;
use crate::nets::{self, ArchKind, ArchSpec, Net, NormKind};
use crate::nn::{Adam, Real, Tensor, Var};
use crate::raster::RasterImage;
use crate::rng;

/// Linear β schedule description, stored with denoiser checkpoints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleSpec {
    /// 200 steps with Σβ = 10, so ᾱ_T ≈ e⁻¹⁰.
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.0999,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub spec: ScheduleSpec,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(spec: ScheduleSpec) -> Result<Self> {
        let ScheduleSpec { steps, beta_start, beta_end } = spec;
        if steps == 0 {
            return Err(Error::config("schedule needs at least one step"));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::config(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Ok(Self::from_betas(spec, betas))
    }

    fn from_betas(spec: ScheduleSpec, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Self {
            spec,
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `β_t` for `1 ≤ t ≤ T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// `t* = round(strength · T)`.
    pub fn start_step(&self, strength: f64) -> usize {
        (strength * self.steps() as f64).round() as usize
    }

    fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::structural(format!(
                "timestep {t} outside {min}..={}",
                self.steps()
            )));
        }
        Ok(())
    }
}

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::structural(format!(
            "noise shape {:?} does not match image shape {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(())
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`; `t = 0` returns `x0`.
pub fn forward_diffuse<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, sched: &NoiseSchedule) -> Result<Tensor<T>> {
    sched.check_step(t, 0)?;
    same_shape(x0, eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// One ancestral step `x_t → x_{t−1}` with `σ_t² = β_t`. The final step
/// (`t = 1`) injects no noise; `z` may be `None` there.
pub fn reverse_step<T: Real>(
    x_t: &Tensor<T>,
    t: usize,
    eps_pred: &Tensor<T>,
    sched: &NoiseSchedule,
    z: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    sched.check_step(t, 1)?;
    same_shape(x_t, eps_pred)?;
    let (beta, alpha, ab) = (sched.beta(t), sched.alpha(t), sched.alpha_bar(t));
    let inv = T::lit(1.0 / alpha.sqrt());
    let coef = T::lit(beta / (1.0 - ab).sqrt());
    let mean = x_t.zip_map(eps_pred, |x, e| inv * (x - coef * e));
    if t == 1 {
        return Ok(mean);
    }
    let z = z.ok_or_else(|| Error::structural(format!("reverse step at t={t} needs noise")))?;
    same_shape(x_t, z)?;
    let sigma = T::lit(beta.sqrt());
    Ok(mean.zip_map(z, |m, n| m + sigma * n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub base_width: usize,
    pub depth: usize,
    pub time_embedding_dim: usize,
    pub norm: NormKind,
    pub schedule: ScheduleSpec,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            base_width: 16,
            depth: 2,
            time_embedding_dim: 32,
            norm: NormKind::Instance,
            schedule: ScheduleSpec::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn arch(&self) -> ArchSpec {
        let mut a = ArchSpec::diffusion_unet(3)
            .with_width(self.base_width)
            .with_depth(self.depth)
            .with_norm(self.norm);
        a.time_embedding_dim = self.time_embedding_dim;
        a
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("denoiser config: {e}")))
    }
}

const SCHEDULE_NOTE: &str = "schedule";

/// Schedule recorded in a denoiser checkpoint.
pub fn checkpoint_schedule(ckpt: &Checkpoint) -> Result<NoiseSchedule> {
    let text = ckpt
        .notes
        .get(SCHEDULE_NOTE)
        .ok_or_else(|| Error::structural("checkpoint carries no noise schedule"))?;
    let spec: ScheduleSpec = toml::from_str(text).map_err(|e| Error::data(format!("schedule: {e}")))?;
    NoiseSchedule::new(spec)
}

/// Trains the noise predictor by MSE against the true noise at uniformly
/// drawn timesteps.
pub fn train_denoiser(images: &[RasterImage], config: &DenoiserConfig) -> Result<(Checkpoint, History)> {
    if images.is_empty() {
        return Err(Error::data("denoiser corpus is empty"));
    }
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(Error::config("batch_size and learning_rate must be positive"));
    }
    let sched = NoiseSchedule::new(config.schedule)?;
    let arch = config.arch();
    let size = images[0].width();
    if images.iter().any(|i| i.dims() != (size, size)) {
        return Err(Error::structural("denoiser images must all be square and the same size"));
    }
    arch.output_shape(size, size)?;
    let mut weights = nets::build(&arch, config.seed)?;
    let mut opt = Adam::new(config.learning_rate, 0.9);
    let mut history = History::default();
    let mut r = rng::stream(config.seed, 0xd1ff);
    let tensors: Vec<Tensor<f32>> = images.iter().map(|i| i.to_tensor()).collect();

    for epoch in 1..=config.epochs {
        let order = rng::permutation(&mut r, images.len());
        let (mut sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let x0 = Tensor::stack(&chunk.iter().map(|&i| tensors[i].clone()).collect::<Vec<_>>())?;
            let ts: Vec<usize> = chunk.iter().map(|_| r.gen_range(1..=sched.steps())).collect();
            let eps = rng::normal_tensor::<f32>(&mut r, x0.shape());
            let per = x0.len() / chunk.len();
            let mut xt = x0.clone();
            for (n, &t) in ts.iter().enumerate() {
                let ab = sched.alpha_bar(t);
                let (a, b) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
                let range = n * per..(n + 1) * per;
                let (src, e) = (&x0.data()[range.clone()], &eps.data()[range.clone()]);
                for ((d, &s), &e) in xt.data_mut()[range].iter_mut().zip(src).zip(e) {
                    *d = a * s + b * e;
                }
            }
            let net = Net::<f32>::trainable(&arch, &weights)?;
            let pred = net.forward(&Var::constant(xt), Some(&ts))?;
            let loss = pred.mse_loss(&Var::constant(eps));
            let v = loss.value().item() as f64;
            if !v.is_finite() {
                return Err(Error::Numeric {
                    epoch,
                    term: "eps_mse".into(),
                    value: v,
                });
            }
            loss.backward();
            let grads = net.grads();
            drop(net);
            opt.step(weights.params.values_mut(), &grads);
            sum += v;
            batches += 1;
        }
        history.push(epoch, "eps_mse", sum / batches as f64);
    }
    let mut ckpt = Checkpoint::new(arch, weights);
    ckpt.image_size = Some(size);
    ckpt.notes.insert("task".into(), "denoiser".into());
    ckpt.notes.insert("epochs".into(), config.epochs.to_string());
    ckpt.notes.insert(
        SCHEDULE_NOTE.into(),
        toml::to_string(&config.schedule).expect("schedule serializes"),
    );
    Ok((ckpt, history))
}

/// Mean noise-prediction MSE over `images` at seeded random timesteps.
pub fn denoiser_loss(ckpt: &Checkpoint, images: &[RasterImage], seed: u64) -> Result<f64> {
    let sched = checkpoint_schedule(ckpt)?;
    let mut r = rng::stream(seed, 0xe7a1);
    let mut total = 0.0;
    for img in images {
        let x0: Tensor<f32> = img.to_tensor();
        let t = r.gen_range(1..=sched.steps());
        let eps = rng::normal_tensor::<f32>(&mut r, x0.shape());
        let xt = forward_diffuse(&x0, t, &eps, &sched)?;
        let pred = nets::forward(&ckpt.weights, &ckpt.arch, &xt, Some(&[t]))?;
        total += pred
            .data()
            .iter()
            .zip(eps.data())
            .map(|(p, e)| ((p - e) as f64).powi(2))
            .sum::<f64>()
            / pred.len() as f64;
    }
    Ok(total / images.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    /// Fraction of the schedule the input is noised to before denoising.
    pub strength: f64,
    /// Provenance only; generation is not text-conditioned.
    pub prompt: String,
    pub seed: u64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            strength: 0.3,
            prompt: "urban park, top view".into(),
            seed: 0,
        }
    }
}

fn check_denoiser(ckpt: &Checkpoint, w: usize, h: usize) -> Result<()> {
    if ckpt.arch.kind != ArchKind::DiffusionUnet {
        return Err(Error::structural(format!(
            "refinement needs a denoiser checkpoint, got {:?}",
            ckpt.arch.kind
        )));
    }
    let m = ckpt.arch.size_multiple();
    if w % m != 0 || h % m != 0 {
        return Err(Error::structural(format!(
            "{w}x{h} image does not fit the denoiser: sides must be multiples of {m} (trained on {:?})",
            ckpt.image_size
        )));
    }
    Ok(())
}

/// Noises `img` to `t* = round(strength·T)` and runs the reverse chain back
/// to 0. Strength 0 returns the input; strength 1 starts from pure noise.
pub fn refine(img: &RasterImage, params: &RefineParams, ckpt: &Checkpoint, sched: &NoiseSchedule) -> Result<RasterImage> {
    if !(0.0..=1.0).contains(&params.strength) {
        return Err(Error::config(format!(
            "strength must lie in [0, 1], got {}",
            params.strength
        )));
    }
    let (w, h) = img.dims();
    check_denoiser(ckpt, w, h)?;
    let t_star = sched.start_step(params.strength);
    if t_star == 0 {
        return Ok(img.clone());
    }
    let net = Net::<f32>::frozen(&ckpt.arch, &ckpt.weights)?;
    let mut r: ChaCha8Rng = rng::stream(params.seed, 0x4ef1);
    let x0: Tensor<f32> = img.to_tensor();
    let eps = rng::normal_tensor::<f32>(&mut r, x0.shape());
    let mut x = if t_star == sched.steps() {
        eps
    } else {
        forward_diffuse(&x0, t_star, &eps, sched)?
    };
    for t in (1..=t_star).rev() {
        let pred = net.forward(&Var::constant(x.clone()), Some(&[t]))?;
        let z = (t > 1).then(|| rng::normal_tensor::<f32>(&mut r, x.shape()));
        x = reverse_step(&x, t, pred.value(), sched, z.as_ref())?;
    }
    let mut out = RasterImage::from_tensor(&x, 0)?;
    out.meters_per_pixel = img.meters_per_pixel;
    Ok(out)
}

/// `log2(factor)` stages of nearest ×2 upsampling, each followed by a
/// refine at `stage_strength` (skipped at 0).
pub fn upscale(
    img: &RasterImage,
    factor: usize,
    stage_strength: f64,
    seed: u64,
    ckpt: Option<&Checkpoint>,
    sched: Option<&NoiseSchedule>,
) -> Result<RasterImage> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(Error::structural(format!(
            "upscale factor must be a power of 2, got {factor}"
        )));
    }
    let mut out = img.clone();
    for stage in 0..factor.trailing_zeros() {
        out = out.upsample2x();
        if stage_strength > 0.0 {
            let (ck, sc) = ckpt.zip(sched).ok_or_else(|| {
                Error::structural("refining upscale stages needs a denoiser checkpoint")
            })?;
            let params = RefineParams {
                strength: stage_strength,
                seed: seed.wrapping_add(stage as u64),
                ..Default::default()
            };
            out = refine(&out, &params, ck, sc)?;
        }
    }
    Ok(out)
}

/// Crop rectangle that undoes [`pad_canvas`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasCrop {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CanvasCrop {
    pub fn apply(&self, img: &RasterImage) -> Result<RasterImage> {
        img.crop(self.x, self.y, self.width, self.height)
    }
}

/// Centres `img` on a white canvas with `round(side·margin)` extra pixels
/// on every side.
pub fn pad_canvas(img: &RasterImage, margin_fraction: f64) -> Result<(RasterImage, CanvasCrop)> {
    if !(margin_fraction >= 0.0 && margin_fraction.is_finite()) {
        return Err(Error::config(format!(
            "margin fraction must be ≥ 0, got {margin_fraction}"
        )));
    }
    let (w, h) = img.dims();
    let (mx, my) = (
        (w as f64 * margin_fraction).round() as usize,
        (h as f64 * margin_fraction).round() as usize,
    );
    let mut canvas = RasterImage::filled(w + 2 * mx, h + 2 * my, [1.0, 1.0, 1.0])?;
    canvas.meters_per_pixel = img.meters_per_pixel;
    for y in 0..h {
        for x in 0..w {
            canvas.set_pixel(x + mx, y + my, img.pixel(x, y));
        }
    }
    Ok((
        canvas,
        CanvasCrop {
            x: mx,
            y: my,
            width: w,
            height: h,
        },
    ))
}

pub fn load_denoiser(path: &Path) -> Result<(Checkpoint, NoiseSchedule)> {
    let ck = Checkpoint::load(path)?;
    let sched = checkpoint_schedule(&ck)?;
    Ok((ck, sched))
}
