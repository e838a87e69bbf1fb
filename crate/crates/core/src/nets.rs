//! Network architectures and their shape, parameter and receptive-field
//! calculators.
//!
//! * `UnetGen` — strided-conv encoder, resize-conv decoder with skip links, tanh output.
//! * `ResnetGen` — two downsampling convs, `depth` residual blocks, two upsampling convs.
//! * `PatchDisc` — stack of 4×4 convs emitting one logit per overlapping patch.
//! * `DiffusionUnet` — time-conditioned U-Net predicting the noise in its input.
//!
//! Parameters live in [`Weights`], a name-ordered map of `f32` tensors. A
//! [`Net`] wraps them as autograd leaves in any [`Real`] precision.

use indexmap::IndexMap;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::kernels::conv_out_size;
use crate::nn::{Real, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    UnetGen,
    ResnetGen,
    PatchDisc,
    DiffusionUnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Instance,
    Batch,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    /// Down/up levels (U-Nets), residual blocks (ResNet) or conv layers (disc).
    pub depth: usize,
    pub norm: NormKind,
    /// Width of the timestep embedding; zero unless `DiffusionUnet`.
    pub time_embedding_dim: usize,
}

/// Channel multiplier per level caps at 8.
fn level_width(base: usize, level: usize) -> usize {
    base << level.min(3)
}

impl ArchSpec {
    pub fn unet_gen(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: ArchKind::UnetGen,
            in_channels,
            out_channels,
            base_width: 16,
            depth: 3,
            norm: NormKind::Instance,
            time_embedding_dim: 0,
        }
    }

    pub fn resnet_gen(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: ArchKind::ResnetGen,
            in_channels,
            out_channels,
            base_width: 16,
            depth: 4,
            norm: NormKind::Instance,
            time_embedding_dim: 0,
        }
    }

    /// Four layers at the 64-pixel desk scale: strides 2, 2, 1, 1.
    pub fn patch_disc(in_channels: usize) -> Self {
        Self {
            kind: ArchKind::PatchDisc,
            in_channels,
            out_channels: 1,
            base_width: 16,
            depth: 4,
            norm: NormKind::Instance,
            time_embedding_dim: 0,
        }
    }

    pub fn diffusion_unet(channels: usize) -> Self {
        Self {
            kind: ArchKind::DiffusionUnet,
            in_channels: channels,
            out_channels: channels,
            base_width: 16,
            depth: 2,
            norm: NormKind::Instance,
            time_embedding_dim: 32,
        }
    }

    pub fn with_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn with_norm(mut self, norm: NormKind) -> Self {
        self.norm = norm;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut violated = Vec::new();
        if self.depth == 0 {
            violated.push("depth must be at least 1".to_string());
        }
        if self.base_width == 0 {
            violated.push("base_width must be at least 1".to_string());
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            violated.push("channel counts must be at least 1".to_string());
        }
        if self.kind == ArchKind::PatchDisc && self.out_channels != 1 {
            violated.push("patch discriminator emits exactly 1 channel".to_string());
        }
        match (self.kind, self.time_embedding_dim) {
            (ArchKind::DiffusionUnet, d) if d < 2 || d % 2 == 1 => {
                violated.push(format!("time_embedding_dim must be even and ≥ 2, got {d}"))
            }
            (ArchKind::DiffusionUnet, _) | (_, 0) => {}
            (_, d) => violated.push(format!("time_embedding_dim {d} given for a non-diffusion network")),
        }
        if violated.is_empty() {
            Ok(())
        } else {
            Err(Error::structural(format!(
                "invalid {:?} spec: {}",
                self.kind,
                violated.join("; ")
            )))
        }
    }

    /// Spatial factor the input side must be divisible by.
    pub fn size_multiple(&self) -> usize {
        match self.kind {
            ArchKind::UnetGen | ArchKind::DiffusionUnet => 1 << self.depth,
            ArchKind::ResnetGen => 4,
            ArchKind::PatchDisc => 1,
        }
    }

    fn disc_strides(&self) -> Vec<usize> {
        if self.depth == 1 {
            vec![1]
        } else {
            let mut s = vec![2; self.depth - 2];
            s.extend([1, 1]);
            s
        }
    }

    /// `[C, H, W]` of the output for an `h × w` input.
    pub fn output_shape(&self, h: usize, w: usize) -> Result<[usize; 3]> {
        self.validate()?;
        if self.kind == ArchKind::PatchDisc {
            let (mut oh, mut ow) = (h, w);
            for s in self.disc_strides() {
                match (conv_out_size(oh, 4, s, 1), conv_out_size(ow, 4, s, 1)) {
                    (Some(a), Some(b)) if a > 0 && b > 0 => (oh, ow) = (a, b),
                    _ => {
                        return Err(Error::structural(format!(
                            "{h}x{w} input is too small for a {}-layer patch discriminator",
                            self.depth
                        )))
                    }
                }
            }
            return Ok([1, oh, ow]);
        }
        let m = self.size_multiple();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::structural(format!(
                "{:?} with depth {} needs sides divisible by {m}, got {h}x{w}",
                self.kind, self.depth
            )));
        }
        Ok([self.out_channels, h, w])
    }

    /// Closed-form scalar parameter count.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
        let norm = |c: usize| if self.norm == NormKind::None { 0 } else { 2 * c };
        let w = self.base_width;
        let d = self.depth;
        Ok(match self.kind {
            ArchKind::UnetGen => {
                let ch = |i| level_width(w, i);
                let mut n = conv(self.in_channels, ch(0), 4);
                for i in 1..d {
                    n += conv(ch(i - 1), ch(i), 4) + norm(ch(i));
                }
                for j in (1..d).rev() {
                    let cin = if j == d - 1 { ch(j) } else { 2 * ch(j) };
                    n += conv(cin, ch(j - 1), 3) + norm(ch(j - 1));
                }
                let cin = if d > 1 { 2 * ch(0) } else { ch(0) };
                n + conv(cin, self.out_channels, 3)
            }
            ArchKind::ResnetGen => {
                conv(self.in_channels, w, 7)
                    + norm(w)
                    + conv(w, 2 * w, 3)
                    + norm(2 * w)
                    + conv(2 * w, 4 * w, 3)
                    + norm(4 * w)
                    + d * 2 * (conv(4 * w, 4 * w, 3) + norm(4 * w))
                    + conv(4 * w, 2 * w, 3)
                    + norm(2 * w)
                    + conv(2 * w, w, 3)
                    + norm(w)
                    + conv(w, self.out_channels, 7)
            }
            ArchKind::PatchDisc => {
                let mut n = 0;
                let mut ci = self.in_channels;
                for i in 0..d {
                    let co = if i == d - 1 { 1 } else { level_width(w, i) };
                    n += conv(ci, co, 4);
                    if i > 0 && i < d - 1 {
                        n += norm(co);
                    }
                    ci = co;
                }
                n
            }
            ArchKind::DiffusionUnet => {
                let e = self.time_embedding_dim;
                let res = |ci: usize, co: usize| {
                    norm(ci)
                        + conv(ci, co, 3)
                        + e * co
                        + co
                        + norm(co)
                        + conv(co, co, 3)
                        + if ci == co { 0 } else { conv(ci, co, 1) }
                };
                let ch = |i| level_width(w, i);
                let mut n = e * e + e + conv(self.in_channels, w, 3);
                for i in 0..d {
                    let ci = if i == 0 { w } else { ch(i - 1) };
                    n += res(ci, ch(i)) + conv(ch(i), ch(i), 4);
                }
                n += res(ch(d - 1), ch(d - 1));
                for i in (0..d).rev() {
                    let ci = if i == d - 1 { ch(d - 1) } else { ch(i + 1) };
                    n += conv(ci, ch(i), 3) + res(2 * ch(i), ch(i));
                }
                n + norm(w) + conv(w, self.out_channels, 3)
            }
        })
    }

    /// Side of the input patch seen by one discriminator output.
    pub fn receptive_field(&self) -> Result<usize> {
        if self.kind != ArchKind::PatchDisc {
            return Err(Error::structural(format!(
                "receptive field is defined for patch discriminators only, not {:?}",
                self.kind
            )));
        }
        self.validate()?;
        let (mut rf, mut jump) = (1, 1);
        for s in self.disc_strides() {
            rf += 3 * jump;
            jump *= s;
        }
        Ok(rf)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub params: IndexMap<String, Tensor<f32>>,
    pub seed: u64,
}

impl Weights {
    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(Tensor::all_finite)
    }
}

enum Init {
    /// Conv or linear weight with the given fan-in.
    Weight(usize),
    Zero,
    Gamma,
}

/// Collects parameter names/shapes in a fixed order, then initializes.
struct Plan {
    entries: Vec<(String, Vec<usize>, Init)>,
}

impl Plan {
    fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize) {
        self.entries.push((format!("{name}.w"), vec![co, ci, k, k], Init::Weight(ci * k * k)));
        self.entries.push((format!("{name}.b"), vec![co], Init::Zero));
    }

    fn norm(&mut self, name: &str, c: usize, kind: NormKind) {
        if kind != NormKind::None {
            self.entries.push((format!("{name}.gamma"), vec![c], Init::Gamma));
            self.entries.push((format!("{name}.beta"), vec![c], Init::Zero));
        }
    }

    fn linear(&mut self, name: &str, fi: usize, fo: usize) {
        self.entries.push((format!("{name}.w"), vec![fo, fi], Init::Weight(fi)));
        self.entries.push((format!("{name}.b"), vec![fo], Init::Zero));
    }

    fn resblock(&mut self, name: &str, ci: usize, co: usize, e: usize, norm: NormKind) {
        self.norm(&format!("{name}.n1"), ci, norm);
        self.conv(&format!("{name}.c1"), ci, co, 3);
        self.linear(&format!("{name}.t"), e, co);
        self.norm(&format!("{name}.n2"), co, norm);
        self.conv(&format!("{name}.c2"), co, co, 3);
        if ci != co {
            self.conv(&format!("{name}.skip"), ci, co, 1);
        }
    }
}

fn plan(spec: &ArchSpec) -> Plan {
    let mut p = Plan { entries: Vec::new() };
    let (w, d, nk) = (spec.base_width, spec.depth, spec.norm);
    let ch = |i| level_width(w, i);
    match spec.kind {
        ArchKind::UnetGen => {
            p.conv("enc0", spec.in_channels, ch(0), 4);
            for i in 1..d {
                p.conv(&format!("enc{i}"), ch(i - 1), ch(i), 4);
                p.norm(&format!("enc{i}"), ch(i), nk);
            }
            for j in (1..d).rev() {
                let cin = if j == d - 1 { ch(j) } else { 2 * ch(j) };
                p.conv(&format!("dec{j}"), cin, ch(j - 1), 3);
                p.norm(&format!("dec{j}"), ch(j - 1), nk);
            }
            p.conv("out", if d > 1 { 2 * ch(0) } else { ch(0) }, spec.out_channels, 3);
        }
        ArchKind::ResnetGen => {
            p.conv("stem", spec.in_channels, w, 7);
            p.norm("stem", w, nk);
            p.conv("down1", w, 2 * w, 3);
            p.norm("down1", 2 * w, nk);
            p.conv("down2", 2 * w, 4 * w, 3);
            p.norm("down2", 4 * w, nk);
            for b in 0..d {
                for half in ["a", "b"] {
                    let name = format!("res{b}{half}");
                    p.conv(&name, 4 * w, 4 * w, 3);
                    p.norm(&name, 4 * w, nk);
                }
            }
            p.conv("up1", 4 * w, 2 * w, 3);
            p.norm("up1", 2 * w, nk);
            p.conv("up2", 2 * w, w, 3);
            p.norm("up2", w, nk);
            p.conv("out", w, spec.out_channels, 7);
        }
        ArchKind::PatchDisc => {
            let mut ci = spec.in_channels;
            for i in 0..d {
                let co = if i == d - 1 { 1 } else { ch(i) };
                p.conv(&format!("l{i}"), ci, co, 4);
                if i > 0 && i < d - 1 {
                    p.norm(&format!("l{i}"), co, nk);
                }
                ci = co;
            }
        }
        ArchKind::DiffusionUnet => {
            let e = spec.time_embedding_dim;
            p.linear("temb", e, e);
            p.conv("in", spec.in_channels, w, 3);
            for i in 0..d {
                let ci = if i == 0 { w } else { ch(i - 1) };
                p.resblock(&format!("down{i}"), ci, ch(i), e, nk);
                p.conv(&format!("pool{i}"), ch(i), ch(i), 4);
            }
            p.resblock("mid", ch(d - 1), ch(d - 1), e, nk);
            for i in (0..d).rev() {
                let ci = if i == d - 1 { ch(d - 1) } else { ch(i + 1) };
                p.conv(&format!("upconv{i}"), ci, ch(i), 3);
                p.resblock(&format!("up{i}"), 2 * ch(i), ch(i), e, nk);
            }
            p.norm("out", w, nk);
            p.conv("out", w, spec.out_channels, 3);
        }
    }
    p
}

/// Deterministic initialization: N(0, 0.02) weights for adversarial
/// networks, He-normal for the denoiser; zero biases; unit-centred gains.
pub fn build(spec: &ArchSpec, seed: u64) -> Result<Weights> {
    spec.validate()?;
    let mut r = rng::stream(seed, 0x5eed);
    let gain = Normal::new(1.0f32, 0.02).unwrap();
    let mut params = IndexMap::new();
    for (name, shape, init) in plan(spec).entries {
        let t = match init {
            Init::Zero => Tensor::zeros(&shape),
            Init::Gamma => Tensor::from_fn(&shape, |_| gain.sample(&mut r)),
            Init::Weight(fan_in) => {
                let std = match spec.kind {
                    ArchKind::DiffusionUnet => (2.0 / fan_in as f32).sqrt(),
                    _ => 0.02,
                };
                let dist = Normal::new(0.0f32, std).unwrap();
                Tensor::from_fn(&shape, |_| dist.sample(&mut r))
            }
        };
        params.insert(name, t);
    }
    Ok(Weights { params, seed })
}

/// Weights bound as autograd leaves for one forward/backward pass.
pub struct Net<T: Real = f32> {
    pub spec: ArchSpec,
    vars: IndexMap<String, Var<T>>,
}

impl<T: Real> Net<T> {
    /// Parameters collect gradients.
    pub fn trainable(spec: &ArchSpec, weights: &Weights) -> Result<Self> {
        Self::bind(spec, weights, true)
    }

    /// Parameters are constants; no graph history is kept.
    pub fn frozen(spec: &ArchSpec, weights: &Weights) -> Result<Self> {
        Self::bind(spec, weights, false)
    }

    fn bind(spec: &ArchSpec, weights: &Weights, grad: bool) -> Result<Self> {
        check_weights(spec, weights)?;
        let vars = weights
            .params
            .iter()
            .map(|(k, t)| {
                let t = t.cast::<T>();
                (k.clone(), if grad { Var::param(t) } else { Var::constant(t) })
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            vars,
        })
    }

    /// Gradients in parameter order; zeros where none flowed.
    pub fn grads(&self) -> Vec<Tensor<T>> {
        self.vars
            .values()
            .map(|v| v.grad().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    fn p(&self, name: &str) -> &Var<T> {
        &self.vars[name]
    }

    fn conv(&self, x: &Var<T>, name: &str, stride: usize, pad: usize) -> Var<T> {
        x.conv2d(self.p(&format!("{name}.w")), Some(self.p(&format!("{name}.b"))), stride, pad)
    }

    fn norm(&self, x: &Var<T>, name: &str) -> Var<T> {
        let (g, b) = (format!("{name}.gamma"), format!("{name}.beta"));
        match self.spec.norm {
            NormKind::None => x.clone(),
            NormKind::Instance => x.instance_norm(self.p(&g), self.p(&b)),
            NormKind::Batch => x.batch_norm(self.p(&g), self.p(&b)),
        }
    }

    /// Runs the network on `x: [N, C, H, W]`. `t` holds one timestep per
    /// sample and must be given exactly for the denoiser.
    pub fn forward(&self, x: &Var<T>, t: Option<&[usize]>) -> Result<Var<T>> {
        let [n, c, h, w] = x.value().dims4()?;
        if c != self.spec.in_channels {
            return Err(Error::structural(format!(
                "expected {} input channels, got {c} (input shape {:?})",
                self.spec.in_channels,
                x.shape()
            )));
        }
        let [oc, oh, ow] = self.spec.output_shape(h, w)?;
        let y = match (self.spec.kind, t) {
            (ArchKind::DiffusionUnet, Some(t)) => {
                if t.len() != n {
                    return Err(Error::structural(format!(
                        "got {} timesteps for a batch of {n}",
                        t.len()
                    )));
                }
                self.diffusion(x, t)
            }
            (ArchKind::DiffusionUnet, None) => {
                return Err(Error::structural("the denoiser needs a timestep per sample"))
            }
            (_, Some(_)) => {
                return Err(Error::structural(format!(
                    "{:?} takes no timestep input",
                    self.spec.kind
                )))
            }
            (ArchKind::UnetGen, None) => self.unet(x),
            (ArchKind::ResnetGen, None) => self.resnet(x),
            (ArchKind::PatchDisc, None) => self.disc(x),
        };
        debug_assert_eq!(y.shape(), &[n, oc, oh, ow]);
        Ok(y)
    }

    fn unet(&self, x: &Var<T>) -> Var<T> {
        let d = self.spec.depth;
        let mut skips = vec![self.conv(x, "enc0", 2, 1)];
        for i in 1..d {
            let h = self.conv(&skips[i - 1].leaky_relu(0.2), &format!("enc{i}"), 2, 1);
            skips.push(self.norm(&h, &format!("enc{i}")));
        }
        let mut h = skips.pop().unwrap();
        for j in (1..d).rev() {
            let name = format!("dec{j}");
            let up = self.conv(&h.relu().upsample2x(), &name, 1, 1);
            h = self.norm(&up, &name).concat_channels(&skips[j - 1]);
        }
        self.conv(&h.relu().upsample2x(), "out", 1, 1).tanh()
    }

    fn resnet(&self, x: &Var<T>) -> Var<T> {
        let block = |h: &Var<T>, name: &str, stride: usize, pad: usize| {
            self.norm(&self.conv(h, name, stride, pad), name).relu()
        };
        let mut h = block(x, "stem", 1, 3);
        h = block(&h, "down1", 2, 1);
        h = block(&h, "down2", 2, 1);
        for b in 0..self.spec.depth {
            let a = block(&h, &format!("res{b}a"), 1, 1);
            let name = format!("res{b}b");
            h = h.add(&self.norm(&self.conv(&a, &name, 1, 1), &name));
        }
        h = block(&h.upsample2x(), "up1", 1, 1);
        h = block(&h.upsample2x(), "up2", 1, 1);
        self.conv(&h, "out", 1, 3).tanh()
    }

    fn disc(&self, x: &Var<T>) -> Var<T> {
        let d = self.spec.depth;
        let strides = self.spec.disc_strides();
        let mut h = x.clone();
        for (i, &s) in strides.iter().enumerate() {
            let name = format!("l{i}");
            h = self.conv(&h, &name, s, 1);
            if i == d - 1 {
                break;
            }
            if i > 0 {
                h = self.norm(&h, &name);
            }
            h = h.leaky_relu(0.2);
        }
        h
    }

    fn resblock(&self, x: &Var<T>, temb: &Var<T>, name: &str) -> Var<T> {
        let h = self.norm(x, &format!("{name}.n1")).silu();
        let h = self.conv(&h, &format!("{name}.c1"), 1, 1);
        let tb = temb.linear(self.p(&format!("{name}.t.w")), self.p(&format!("{name}.t.b")));
        let h = h.add_channel_bias(&tb);
        let h = self.norm(&h, &format!("{name}.n2")).silu();
        let h = self.conv(&h, &format!("{name}.c2"), 1, 1);
        let skip_name = format!("{name}.skip");
        let skip = if self.vars.contains_key(&format!("{skip_name}.w")) {
            self.conv(x, &skip_name, 1, 0)
        } else {
            x.clone()
        };
        h.add(&skip)
    }

    fn diffusion(&self, x: &Var<T>, t: &[usize]) -> Var<T> {
        let d = self.spec.depth;
        let emb = Var::constant(timestep_embedding(t, self.spec.time_embedding_dim));
        let temb = emb.linear(self.p("temb.w"), self.p("temb.b")).silu();
        let mut h = self.conv(x, "in", 1, 1);
        let mut skips = Vec::with_capacity(d);
        for i in 0..d {
            h = self.resblock(&h, &temb, &format!("down{i}"));
            skips.push(h.clone());
            h = self.conv(&h, &format!("pool{i}"), 2, 1);
        }
        h = self.resblock(&h, &temb, "mid");
        for i in (0..d).rev() {
            h = self.conv(&h.upsample2x(), &format!("upconv{i}"), 1, 1);
            h = h.concat_channels(&skips[i]);
            h = self.resblock(&h, &temb, &format!("up{i}"));
        }
        self.conv(&self.norm(&h, "out").silu(), "out", 1, 1)
    }
}

/// Sinusoidal features `[sin(t·f_j), cos(t·f_j)]`, `f_j = 10000^(-j/half)`.
pub fn timestep_embedding<T: Real>(t: &[usize], dim: usize) -> Tensor<T> {
    let half = dim / 2;
    let mut out = Tensor::zeros(&[t.len(), dim]);
    for (n, &step) in t.iter().enumerate() {
        for j in 0..half {
            let f = (-(10000f64.ln()) * j as f64 / half as f64).exp();
            let a = step as f64 * f;
            out.data_mut()[n * dim + j] = T::lit(a.sin());
            out.data_mut()[n * dim + half + j] = T::lit(a.cos());
        }
    }
    out
}

fn check_weights(spec: &ArchSpec, weights: &Weights) -> Result<()> {
    spec.validate()?;
    let expected = plan(spec).entries;
    if expected.len() != weights.params.len() {
        return Err(Error::structural(format!(
            "weights hold {} tensors, {:?} spec expects {}",
            weights.params.len(),
            spec.kind,
            expected.len()
        )));
    }
    for ((name, shape, _), (got_name, t)) in expected.iter().zip(&weights.params) {
        if name != got_name || shape.as_slice() != t.shape() {
            return Err(Error::structural(format!(
                "parameter `{got_name}` {:?} does not match expected `{name}` {shape:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Inference on an `f32` batch.
pub fn forward(
    weights: &Weights,
    spec: &ArchSpec,
    x: &Tensor<f32>,
    t: Option<&[usize]>,
) -> Result<Tensor<f32>> {
    let net = Net::<f32>::frozen(spec, weights)?;
    Ok(net.forward(&Var::constant(x.clone()), t)?.value().clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_small_specs() -> Vec<ArchSpec> {
        let mut v = Vec::new();
        for norm in [NormKind::Instance, NormKind::Batch, NormKind::None] {
            for d in 1..=3 {
                v.push(ArchSpec::unet_gen(3, 2).with_width(2).with_depth(d).with_norm(norm));
                v.push(ArchSpec::resnet_gen(2, 3).with_width(2).with_depth(d).with_norm(norm));
                v.push(ArchSpec::diffusion_unet(3).with_width(2).with_depth(d).with_norm(norm));
            }
            for d in 1..=5 {
                v.push(ArchSpec::patch_disc(4).with_width(2).with_depth(d).with_norm(norm));
            }
        }
        v
    }

    /// Independent conv output arithmetic: floor((n + 2p - k) / s) + 1.
    fn out_side(n: usize, strides: &[usize]) -> usize {
        strides.iter().fold(n, |n, &s| (n + 2 - 4) / s + 1)
    }

    #[test]
    fn single_conv_count() {
        let spec = ArchSpec::patch_disc(3).with_depth(1);
        assert_eq!(spec.param_count().unwrap(), 3 * 16 + 1);
        // 3→8 4×4 conv with bias, built as a one-layer disc with an 8-wide last layer
        let conv = |ci: usize, co: usize, k: usize| ci * co * k * k + co;
        assert_eq!(conv(3, 8, 4), 392);
        let two = ArchSpec::patch_disc(3).with_width(8).with_depth(2);
        assert_eq!(two.param_count().unwrap(), 392 + conv(8, 1, 4));
    }

    #[test]
    fn param_count_matches_built_weights() {
        for spec in all_small_specs() {
            let w = build(&spec, 3).unwrap();
            assert_eq!(w.scalar_count(), spec.param_count().unwrap(), "{spec:?}");
            assert!(w.all_finite());
        }
    }

    #[test]
    fn receptive_fields() {
        let std5 = ArchSpec::patch_disc(3).with_depth(5);
        assert_eq!(std5.receptive_field().unwrap(), 70);
        assert_eq!(ArchSpec::patch_disc(3).with_depth(1).receptive_field().unwrap(), 4);
        assert!(ArchSpec::unet_gen(3, 3).receptive_field().is_err());
        assert_eq!(std5.output_shape(256, 256).unwrap(), [1, 30, 30]);
        assert_eq!(out_side(256, &[2, 2, 2, 1, 1]), 30);
    }

    #[test]
    fn shapes_follow_calculator() {
        for spec in all_small_specs() {
            let w = build(&spec, 1).unwrap();
            for side in [8usize, 16] {
                let x = Tensor::from_fn(&[2, spec.in_channels, side, side], |i| ((i % 7) as f32 - 3.0) / 3.0);
                let t = [3usize, 40];
                let tt = (spec.kind == ArchKind::DiffusionUnet).then_some(&t[..]);
                match spec.output_shape(side, side) {
                    Ok([c, h, ww]) => {
                        let y = forward(&w, &spec, &x, tt).unwrap();
                        assert_eq!(y.shape(), &[2, c, h, ww], "{spec:?} {side}");
                        if spec.kind == ArchKind::PatchDisc {
                            assert_eq!(h, out_side(side, &spec.disc_strides()));
                            assert!(h < side);
                        }
                        if matches!(spec.kind, ArchKind::UnetGen | ArchKind::ResnetGen) {
                            assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
                        }
                    }
                    Err(_) => assert!(forward(&w, &spec, &x, tt).is_err()),
                }
            }
        }
    }

    #[test]
    fn divisibility_rule() {
        let spec = ArchSpec::unet_gen(3, 3);
        let w = build(&spec, 0).unwrap();
        assert!(forward(&w, &spec, &Tensor::zeros(&[1, 3, 64, 64]), None).is_ok());
        let err = forward(&w, &spec, &Tensor::zeros(&[1, 3, 60, 60]), None).unwrap_err();
        assert!(err.to_string().contains("60x60"), "{err}");
        let err = forward(&w, &spec, &Tensor::zeros(&[1, 4, 64, 64]), None).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        assert!(build(&spec.clone().with_depth(0), 0).is_err());
        let d = ArchSpec::diffusion_unet(3);
        let dw = build(&d, 0).unwrap();
        assert!(forward(&dw, &d, &Tensor::zeros(&[1, 3, 8, 8]), None).is_err());
        assert!(forward(&w, &spec, &Tensor::zeros(&[1, 3, 64, 64]), Some(&[1])).is_err());
    }

    #[test]
    fn deterministic_build_and_forward() {
        let spec = ArchSpec::unet_gen(3, 3).with_width(4);
        let (a, b) = (build(&spec, 9).unwrap(), build(&spec, 9).unwrap());
        assert_eq!(a, b);
        assert_ne!(a, build(&spec, 10).unwrap());
        let x = Tensor::from_fn(&[1, 3, 16, 16], |i| (i as f32 * 0.37).sin());
        assert_eq!(forward(&a, &spec, &x, None).unwrap(), forward(&b, &spec, &x, None).unwrap());
    }

    #[test]
    fn zero_denoiser_emits_output_bias() {
        let spec = ArchSpec::diffusion_unet(3).with_width(4);
        let mut w = build(&spec, 0).unwrap();
        for t in w.params.values_mut() {
            t.data_mut().fill(0.0);
        }
        w.params["out.b"].data_mut().copy_from_slice(&[0.25, -0.5, 1.5]);
        let x = Tensor::from_fn(&[2, 3, 8, 8], |i| (i as f32).cos());
        let y = forward(&w, &spec, &x, Some(&[0, 99])).unwrap();
        for n in 0..2 {
            for (c, b) in [0.25f32, -0.5, 1.5].iter().enumerate() {
                let plane = &y.sample(n)[c * 64..(c + 1) * 64];
                assert!(plane.iter().all(|v| v == b));
            }
        }
    }

    #[test]
    fn mismatched_weights_rejected() {
        let spec = ArchSpec::patch_disc(3);
        let w = build(&ArchSpec::patch_disc(6), 0).unwrap();
        assert!(Net::<f32>::frozen(&spec, &w).is_err());
    }

    /// Whole-network gradient check in f64 through every block type.
    #[test]
    fn network_gradients_match_finite_differences() {
        let specs = [
            ArchSpec::unet_gen(2, 2).with_width(2).with_depth(2),
            ArchSpec::resnet_gen(1, 1).with_width(1).with_depth(1),
            ArchSpec::patch_disc(2).with_width(2).with_depth(3),
            ArchSpec::diffusion_unet(1).with_width(2).with_depth(1).with_norm(NormKind::None),
        ];
        for (k, spec) in specs.iter().enumerate() {
            let w = build(spec, k as u64).unwrap();
            // enlarge GAN weights so the check is not dominated by rounding
            let w = Weights {
                params: w.params.into_iter().map(|(n, t)| (n, t.map(|v| v * 10.0))).collect(),
                seed: 0,
            };
            let side = 8;
            let x: Tensor<f64> = rng::normal_tensor(&mut rng::stream(k as u64, 1), &[1, spec.in_channels, side, side]);
            let t = [5usize];
            let tt = (spec.kind == ArchKind::DiffusionUnet).then_some(&t[..]);
            let loss_of = |xv: &Tensor<f64>, grad: bool| {
                let net = if grad { Net::<f64>::trainable(spec, &w) } else { Net::<f64>::frozen(spec, &w) }.unwrap();
                let xin = if grad { Var::param(xv.clone()) } else { Var::constant(xv.clone()) };
                let y = net.forward(&xin, tt).unwrap();
                let target = Var::constant(Tensor::full(y.shape(), 0.3));
                (y.mse_loss(&target), xin, net)
            };
            let (loss, xin, _net) = loss_of(&x, true);
            loss.backward();
            let g = xin.grad().unwrap();
            let h = 1e-6;
            let (mut diff, mut sn, mut sg) = (0.0f64, 0.0f64, 0.0f64);
            for j in (0..x.len()).step_by(3) {
                let mut xp = x.clone();
                xp.data_mut()[j] += h;
                let mut xm = x.clone();
                xm.data_mut()[j] -= h;
                let num = (loss_of(&xp, false).0.value().item() - loss_of(&xm, false).0.value().item()) / (2.0 * h);
                diff += (num - g.data()[j]).powi(2);
                sn += num * num;
                sg += g.data()[j].powi(2);
            }
            let rel = diff.sqrt() / (sn.sqrt() + sg.sqrt()).max(1e-12);
            assert!(rel < 1e-3, "{:?}: {rel}", spec.kind);
        }
    }
}
