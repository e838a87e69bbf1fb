//! Conditional (paired) and cycle-consistent (unpaired) adversarial
//! training, loss bookkeeping and generator inference.
//!
//! Losses are computed on network tensors in `[-1, 1]`; images cross the
//! module boundary as [`RasterImage`]s in `[0, 1]`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::legend::{env, Legend};
use crate::metrics;
use crate::nets::{self, ArchKind, ArchSpec, Net, NormKind, Weights};
use crate::nn::{weighted_sum, Adam, Real, Tensor, Var};
use crate::raster::{encode_classmap, quantize_to_classes, ClassMap, RasterImage};
use crate::rng;
use crate::synthcity::{Corpus, SceneQuad};
use crate::tile::{tile, TileSpec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvLoss {
    /// Binary cross-entropy on logits.
    #[default]
    Bce,
    /// Least-squares on raw scores.
    LeastSquares,
}

impl AdvLoss {
    fn apply<T: Real>(self, scores: &Var<T>, real: bool) -> Var<T> {
        let target = if real { 1.0 } else { 0.0 };
        match self {
            AdvLoss::Bce => scores.bce_with_logits(target),
            AdvLoss::LeastSquares => scores.least_squares(target),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pix2PixObjective {
    pub lambda_l1: f64,
}

impl Default for Pix2PixObjective {
    fn default() -> Self {
        Self { lambda_l1: 100.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleGanObjective {
    pub lambda_cycle: f64,
    pub lambda_identity: f64,
}

impl Default for CycleGanObjective {
    fn default() -> Self {
        Self {
            lambda_cycle: 10.0,
            lambda_identity: 5.0,
        }
    }
}

fn check_weight(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("{name} must be a finite value ≥ 0, got {v}")))
    }
}

/// Named loss addends. Totals are sums of their addends.
pub type Terms = IndexMap<String, f64>;

pub struct Pix2PixLosses<T: Real> {
    pub generator: Var<T>,
    pub discriminator: Var<T>,
    pub fake: Var<T>,
    pub terms: Terms,
}

fn aligned<T: Real>(a: &Var<T>, b: &Var<T>, what: &str) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(Error::structural(format!(
            "{what}: batches are not aligned, shapes {sa:?} vs {sb:?}"
        )));
    }
    Ok(())
}

/// `loss_D = ½·[adv(D(x,y),1) + adv(D(x,G(x)),0)]`,
/// `loss_G = adv(D(x,G(x)),1) + λ·mean|G(x) − y|`.
///
/// The discriminator loss sees a detached `G(x)`, so back-propagating it
/// reaches only `D`'s parameters.
pub fn pix2pix_losses<T: Real>(
    g: &Net<T>,
    d: &Net<T>,
    x: &Var<T>,
    y: &Var<T>,
    obj: &Pix2PixObjective,
    adv: AdvLoss,
) -> Result<Pix2PixLosses<T>> {
    aligned(x, y, "pix2pix")?;
    check_weight("lambda_l1", obj.lambda_l1)?;
    let fake = g.forward(x, None)?;
    if fake.shape() != y.shape() {
        return Err(Error::structural(format!(
            "generator emits {:?}, target is {:?}",
            fake.shape(),
            y.shape()
        )));
    }
    let d_real = adv.apply(&d.forward(&x.concat_channels(y), None)?, true);
    let d_fake = adv.apply(&d.forward(&x.concat_channels(&fake.detach()), None)?, false);
    let g_adv = adv.apply(&d.forward(&x.concat_channels(&fake), None)?, true);
    let l1 = fake.l1_loss(y);
    let discriminator = weighted_sum(&[(0.5, &d_real), (0.5, &d_fake)]);
    let generator = weighted_sum(&[(1.0, &g_adv), (obj.lambda_l1, &l1)]);
    let v = |t: &Var<T>| t.value().item().to_f64().unwrap();
    let terms: Terms = [
        ("g_adv", v(&g_adv)),
        ("g_l1", obj.lambda_l1 * v(&l1)),
        ("d_real", 0.5 * v(&d_real)),
        ("d_fake", 0.5 * v(&d_fake)),
    ]
    .into_iter()
    .map(|(k, x)| (k.to_string(), x))
    .collect();
    Ok(Pix2PixLosses {
        generator,
        discriminator,
        fake,
        terms,
    })
}

pub struct CycleGanLosses<T: Real> {
    pub generators: Var<T>,
    pub disc_x: Var<T>,
    pub disc_y: Var<T>,
    pub fake_y: Var<T>,
    pub terms: Terms,
}

/// Generator total = adv(G→Y) + adv(F→X) + λc·(|F(G(x))−x| + |G(F(y))−y|)
/// + λi·(|G(y)−y| + |F(x)−x|); each discriminator gets the unconditional
/// ½·[real + fake] loss on detached fakes.
#[allow(clippy::too_many_arguments)]
pub fn cyclegan_losses<T: Real>(
    g: &Net<T>,
    f: &Net<T>,
    d_x: &Net<T>,
    d_y: &Net<T>,
    x: &Var<T>,
    y: &Var<T>,
    obj: &CycleGanObjective,
    adv: AdvLoss,
) -> Result<CycleGanLosses<T>> {
    aligned(x, y, "cyclegan")?;
    check_weight("lambda_cycle", obj.lambda_cycle)?;
    check_weight("lambda_identity", obj.lambda_identity)?;
    let fake_y = g.forward(x, None)?;
    let fake_x = f.forward(y, None)?;
    let rec_x = f.forward(&fake_y, None)?;
    let rec_y = g.forward(&fake_x, None)?;
    let g_adv = adv.apply(&d_y.forward(&fake_y, None)?, true);
    let f_adv = adv.apply(&d_x.forward(&fake_x, None)?, true);
    let cycle_x = rec_x.l1_loss(x);
    let cycle_y = rec_y.l1_loss(y);
    let (idt_y, idt_x) = if obj.lambda_identity > 0.0 {
        (
            Some(g.forward(y, None)?.l1_loss(y)),
            Some(f.forward(x, None)?.l1_loss(x)),
        )
    } else {
        (None, None)
    };
    let mut gen_terms = vec![
        (1.0, &g_adv),
        (1.0, &f_adv),
        (obj.lambda_cycle, &cycle_x),
        (obj.lambda_cycle, &cycle_y),
    ];
    if let (Some(a), Some(b)) = (&idt_y, &idt_x) {
        gen_terms.push((obj.lambda_identity, a));
        gen_terms.push((obj.lambda_identity, b));
    }
    let generators = weighted_sum(&gen_terms);

    let dx_real = adv.apply(&d_x.forward(x, None)?, true);
    let dx_fake = adv.apply(&d_x.forward(&fake_x.detach(), None)?, false);
    let dy_real = adv.apply(&d_y.forward(y, None)?, true);
    let dy_fake = adv.apply(&d_y.forward(&fake_y.detach(), None)?, false);
    let disc_x = weighted_sum(&[(0.5, &dx_real), (0.5, &dx_fake)]);
    let disc_y = weighted_sum(&[(0.5, &dy_real), (0.5, &dy_fake)]);

    let v = |t: &Var<T>| t.value().item().to_f64().unwrap();
    let idt = |t: &Option<Var<T>>| t.as_ref().map_or(0.0, |t| obj.lambda_identity * v(t));
    let terms: Terms = [
        ("g_adv", v(&g_adv)),
        ("f_adv", v(&f_adv)),
        ("cycle_x", obj.lambda_cycle * v(&cycle_x)),
        ("cycle_y", obj.lambda_cycle * v(&cycle_y)),
        ("idt_y", idt(&idt_y)),
        ("idt_x", idt(&idt_x)),
        ("dx_real", 0.5 * v(&dx_real)),
        ("dx_fake", 0.5 * v(&dx_fake)),
        ("dy_real", 0.5 * v(&dy_real)),
        ("dy_fake", 0.5 * v(&dy_fake)),
    ]
    .into_iter()
    .map(|(k, x)| (k.to_string(), x))
    .collect();
    Ok(CycleGanLosses {
        generators,
        disc_x,
        disc_y,
        fake_y,
        terms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Remote image → encoded environment map (cycle-consistent).
    SegExtract,
    /// Encoded environment → encoded layout, paired objective.
    EnvToLayoutSupervised,
    /// Encoded environment → encoded layout, cycle-consistent.
    EnvToLayoutUnpaired,
    /// Encoded layout → rendered scheme (cycle-consistent).
    LayoutToScheme,
}

impl Task {
    pub const ALL: [Task; 4] = [
        Task::SegExtract,
        Task::EnvToLayoutSupervised,
        Task::EnvToLayoutUnpaired,
        Task::LayoutToScheme,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::SegExtract => "seg_extract",
            Task::EnvToLayoutSupervised => "env_to_layout_supervised",
            Task::EnvToLayoutUnpaired => "env_to_layout_unpaired",
            Task::LayoutToScheme => "layout_to_scheme",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown task `{s}`")))
    }

    pub fn paired(self) -> bool {
        self == Task::EnvToLayoutSupervised
    }

    /// Legend that generator outputs quantize to, if the target is a class map.
    pub fn target_legend(self) -> Option<Legend> {
        match self {
            Task::SegExtract => Some(Legend::environment()),
            Task::EnvToLayoutSupervised | Task::EnvToLayoutUnpaired => Some(Legend::park()),
            Task::LayoutToScheme => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub seed: u64,
    /// Snapshot and evaluate every this many epochs; 0 only at the end.
    pub eval_every: usize,
    pub adversarial: AdvLoss,
    pub pix2pix: Pix2PixObjective,
    pub cyclegan: CycleGanObjective,
    /// Mask environment inputs to the site interior.
    pub interior_only: bool,
    pub gen_width: usize,
    pub unet_depth: usize,
    pub resnet_blocks: usize,
    pub disc_width: usize,
    pub disc_depth: usize,
    pub norm: NormKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 1,
            learning_rate: 2e-4,
            beta1: 0.5,
            seed: 0,
            eval_every: 0,
            adversarial: AdvLoss::Bce,
            pix2pix: Pix2PixObjective::default(),
            cyclegan: CycleGanObjective::default(),
            interior_only: false,
            gen_width: 16,
            unet_depth: 3,
            resnet_blocks: 4,
            disc_width: 16,
            disc_depth: 4,
            norm: NormKind::Instance,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(Error::config(format!("beta1 must lie in [0, 1), got {}", self.beta1)));
        }
        check_weight("lambda_l1", self.pix2pix.lambda_l1)?;
        check_weight("lambda_cycle", self.cyclegan.lambda_cycle)?;
        check_weight("lambda_identity", self.cyclegan.lambda_identity)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_toml(&text)
    }

    pub fn generator_spec(&self, task: Task) -> ArchSpec {
        let base = if task.paired() {
            ArchSpec::unet_gen(3, 3).with_depth(self.unet_depth)
        } else {
            ArchSpec::resnet_gen(3, 3).with_depth(self.resnet_blocks)
        };
        base.with_width(self.gen_width).with_norm(self.norm)
    }

    pub fn discriminator_spec(&self, task: Task) -> ArchSpec {
        let channels = if task.paired() { 6 } else { 3 };
        ArchSpec::patch_disc(channels)
            .with_width(self.disc_width)
            .with_depth(self.disc_depth)
            .with_norm(self.norm)
    }
}

/// Environment map with every pixel outside the site set to Background.
pub fn mask_to_site(environment: &ClassMap) -> Result<ClassMap> {
    let site = environment
        .legend()
        .ids_with_role(crate::legend::Role::Mask)
        .first()
        .copied()
        .ok_or_else(|| Error::structural("environment legend has no site mask class"))?;
    environment.map_classes(|_, _, c| if c == site { c } else { env::BACKGROUND })
}

/// `(input, target)` images for a task, one per scene.
pub fn task_pairs(task: Task, scenes: &[SceneQuad], interior_only: bool) -> Result<Vec<(RasterImage, RasterImage)>> {
    scenes
        .iter()
        .map(|s| {
            let env_img = || -> Result<RasterImage> {
                if interior_only {
                    encode_classmap(&mask_to_site(&s.environment)?)
                } else {
                    encode_classmap(&s.environment)
                }
            };
            Ok(match task {
                Task::SegExtract => (s.remote.clone(), encode_classmap(&s.environment)?),
                Task::EnvToLayoutSupervised | Task::EnvToLayoutUnpaired => {
                    (env_img()?, encode_classmap(&s.layout)?)
                }
                Task::LayoutToScheme => (encode_classmap(&s.layout)?, s.scheme.clone()),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub epoch: usize,
    pub term: String,
    pub value: f64,
}

/// Per-epoch mean of each loss term, plus evaluation metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<HistoryRecord>,
}

impl History {
    pub fn push(&mut self, epoch: usize, term: &str, value: f64) {
        self.records.push(HistoryRecord {
            epoch,
            term: term.to_string(),
            value,
        });
    }

    pub fn epochs(&self) -> usize {
        self.records.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    pub fn last(&self, term: &str) -> Option<f64> {
        self.records.iter().rev().find(|r| r.term == term).map(|r| r.value)
    }

    pub fn series(&self, term: &str) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter(|r| r.term == term)
            .map(|r| (r.epoch, r.value))
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        for r in &self.records {
            w.serialize(r).map_err(|e| Error::data(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let records = r
            .deserialize()
            .collect::<std::result::Result<Vec<HistoryRecord>, _>>()
            .map_err(|e| Error::data(e.to_string()))?;
        Ok(Self { records })
    }

    /// One line per term: first and last value.
    pub fn summary(&self) -> String {
        let mut terms: IndexMap<&str, (f64, f64)> = IndexMap::new();
        for r in &self.records {
            terms
                .entry(r.term.as_str())
                .and_modify(|e| e.1 = r.value)
                .or_insert((r.value, r.value));
        }
        let mut out = format!("epochs: {}\n", self.epochs());
        for (t, (a, b)) in terms {
            out.push_str(&format!("{t}: {a:.6} -> {b:.6}\n"));
        }
        out
    }
}

/// Result of one training run. Unpaired tasks fill `inverse` and `disc_y`.
#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub task: Task,
    pub generator: Checkpoint,
    pub inverse: Option<Checkpoint>,
    pub disc_x: Checkpoint,
    pub disc_y: Option<Checkpoint>,
    pub history: History,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.save_checkpoints(dir)?;
        self.history.write_csv(&dir.join("history.csv"))?;
        write_text(&dir.join("summary.txt"), &self.history.summary())?;
        write_text(
            &dir.join("train_config.toml"),
            &toml::to_string(&self.config).expect("config serializes"),
        )
    }

    fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        self.generator.save(&dir.join("G.ckpt"))?;
        self.disc_x.save(&dir.join(if self.inverse.is_some() { "D_X.ckpt" } else { "D.ckpt" }))?;
        if let Some(f) = &self.inverse {
            f.save(&dir.join("F.ckpt"))?;
        }
        if let Some(d) = &self.disc_y {
            d.save(&dir.join("D_Y.ckpt"))?;
        }
        Ok(())
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Model {
    spec: ArchSpec,
    weights: Weights,
    opt: Adam,
}

impl Model {
    fn new(spec: ArchSpec, seed: u64, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            weights: nets::build(&spec, seed)?,
            spec,
            opt: Adam::new(cfg.learning_rate, cfg.beta1),
        })
    }

    fn trainable(&self) -> Result<Net<f32>> {
        Net::trainable(&self.spec, &self.weights)
    }

    fn step(&mut self, grads: &[Tensor<f32>]) {
        self.opt.step(self.weights.params.values_mut(), grads);
    }

    fn checkpoint(&self, task: Task, role: &str, image_size: usize, epochs: usize) -> Checkpoint {
        let mut c = Checkpoint::new(self.spec.clone(), self.weights.clone());
        c.image_size = Some(image_size);
        c.notes.insert("task".into(), task.name().into());
        c.notes.insert("role".into(), role.into());
        c.notes.insert("epochs".into(), epochs.to_string());
        c
    }
}

fn check_finite(epoch: usize, terms: &Terms) -> Result<()> {
    for (k, &v) in terms {
        if !v.is_finite() {
            return Err(Error::Numeric {
                epoch,
                term: k.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

fn batch(images: &[&RasterImage]) -> Result<Var<f32>> {
    let ts: Vec<Tensor<f32>> = images.iter().map(|i| i.to_tensor()).collect();
    Ok(Var::constant(Tensor::stack(&ts)?))
}

/// Trains `task` on `corpus`. Snapshots go to `out/epoch_NNN` every
/// `eval_every` epochs and the final model to `out` when a directory is
/// given; `eval` scenes feed the held-out metrics recorded in the history.
pub fn train(
    task: Task,
    corpus: &Corpus,
    config: &TrainConfig,
    eval: Option<&Corpus>,
    out: Option<&Path>,
) -> Result<TrainedModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::data("training corpus is empty"));
    }
    let pairs = task_pairs(task, &corpus.scenes, config.interior_only)?;
    let eval_pairs = eval
        .map(|c| task_pairs(task, &c.scenes, config.interior_only))
        .transpose()?;
    let size = pairs[0].0.width();
    if pairs.iter().any(|(a, b)| a.dims() != (size, size) || b.dims() != (size, size)) {
        return Err(Error::structural("training images must all be square and the same size"));
    }
    let g_spec = config.generator_spec(task);
    let d_spec = config.discriminator_spec(task);
    g_spec.output_shape(size, size)?;
    d_spec.output_shape(size, size)?;

    let mut g = Model::new(g_spec.clone(), config.seed, config)?;
    let mut d_x = Model::new(d_spec.clone(), config.seed.wrapping_add(1), config)?;
    let (mut f, mut d_y) = if task.paired() {
        (None, None)
    } else {
        (
            Some(Model::new(g_spec, config.seed.wrapping_add(2), config)?),
            Some(Model::new(d_spec, config.seed.wrapping_add(3), config)?),
        )
    };

    let mut history = History::default();
    let n = pairs.len();
    let snapshot = |g: &Model, f: &Option<Model>, d_x: &Model, d_y: &Option<Model>, epochs: usize, history: &History| {
        TrainedModel {
            task,
            generator: g.checkpoint(task, "G", size, epochs),
            inverse: f.as_ref().map(|m| m.checkpoint(task, "F", size, epochs)),
            disc_x: d_x.checkpoint(task, if f.is_some() { "D_X" } else { "D" }, size, epochs),
            disc_y: d_y.as_ref().map(|m| m.checkpoint(task, "D_Y", size, epochs)),
            history: history.clone(),
            config: config.clone(),
        }
    };

    for epoch in 1..=config.epochs {
        let order = rng::permutation(&mut rng::stream(config.seed, 1000 + epoch as u64), n);
        let partner = rng::permutation(&mut rng::stream(config.seed, 2000 + epoch as u64), n);
        let mut sums: Terms = IndexMap::new();
        let mut batches = 0usize;
        for chunk in (0..n).collect::<Vec<_>>().chunks(config.batch_size) {
            let xs: Vec<&RasterImage> = chunk.iter().map(|&i| &pairs[order[i]].0).collect();
            // unpaired tasks draw targets through an independent permutation
            let ys: Vec<&RasterImage> = chunk
                .iter()
                .map(|&i| if task.paired() { &pairs[order[i]].1 } else { &pairs[partner[i]].1 })
                .collect();
            let (x, y) = (batch(&xs)?, batch(&ys)?);
            let terms = match (&mut f, &mut d_y) {
                (Some(f), Some(d_y)) => {
                    let (gn, fn_, dxn, dyn_) = (g.trainable()?, f.trainable()?, d_x.trainable()?, d_y.trainable()?);
                    let l = cyclegan_losses(&gn, &fn_, &dxn, &dyn_, &x, &y, &config.cyclegan, config.adversarial)?;
                    check_finite(epoch, &l.terms)?;
                    l.disc_x.backward();
                    l.disc_y.backward();
                    let (gdx, gdy) = (dxn.grads(), dyn_.grads());
                    l.generators.backward();
                    let (gg, gf) = (gn.grads(), fn_.grads());
                    drop((gn, fn_, dxn, dyn_));
                    g.step(&gg);
                    f.step(&gf);
                    d_x.step(&gdx);
                    d_y.step(&gdy);
                    l.terms
                }
                _ => {
                    let (gn, dn) = (g.trainable()?, d_x.trainable()?);
                    let l = pix2pix_losses(&gn, &dn, &x, &y, &config.pix2pix, config.adversarial)?;
                    check_finite(epoch, &l.terms)?;
                    l.discriminator.backward();
                    let gd = dn.grads();
                    l.generator.backward();
                    let gg = gn.grads();
                    g.step(&gg);
                    d_x.step(&gd);
                    l.terms
                }
            };
            for (k, v) in terms {
                *sums.entry(k).or_insert(0.0) += v;
            }
            batches += 1;
        }
        for (k, v) in &sums {
            history.push(epoch, k, v / batches as f64);
        }
        let snap_due = config.eval_every > 0 && epoch % config.eval_every == 0;
        if snap_due || epoch == config.epochs {
            if let Some(ep) = &eval_pairs {
                let gen = g.checkpoint(task, "G", size, epoch);
                for (k, v) in evaluate_generator(task, &gen, ep)? {
                    history.push(epoch, &k, v);
                }
            }
        }
        if snap_due && epoch != config.epochs {
            if let Some(dir) = out {
                snapshot(&g, &f, &d_x, &d_y, epoch, &history)
                    .save_checkpoints(&dir.join(format!("epoch_{epoch:03}")))?;
            }
        }
    }

    let model = snapshot(&g, &f, &d_x, &d_y, config.epochs, &history);
    if let Some(dir) = out {
        model.save(dir)?;
    }
    Ok(model)
}

/// Mean image-space L1 to the targets, plus pixel accuracy after
/// quantization when the task predicts a class map.
pub fn evaluate_generator(task: Task, generator: &Checkpoint, pairs: &[(RasterImage, RasterImage)]) -> Result<Terms> {
    let legend = task.target_legend().map(Arc::new);
    let (mut l1, mut acc) = (0.0, 0.0);
    for (x, y) in pairs {
        let out = infer(generator, x)?;
        l1 += out
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / out.data().len() as f64;
        if let Some(lg) = &legend {
            let (p, t) = (quantize_to_classes(&out, lg)?, quantize_to_classes(y, lg)?);
            acc += metrics::confusion(&p, &t)?.accuracy();
        }
    }
    let n = pairs.len().max(1) as f64;
    let mut terms = Terms::new();
    terms.insert("eval_l1".into(), l1 / n);
    if legend.is_some() {
        terms.insert("eval_accuracy".into(), acc / n);
    }
    Ok(terms)
}

/// Runs a generator checkpoint on one image.
pub fn infer(checkpoint: &Checkpoint, img: &RasterImage) -> Result<RasterImage> {
    let spec = &checkpoint.arch;
    if !matches!(spec.kind, ArchKind::UnetGen | ArchKind::ResnetGen) {
        return Err(Error::structural(format!(
            "inference needs a generator checkpoint, got {:?}",
            spec.kind
        )));
    }
    let y = nets::forward(&checkpoint.weights, spec, &img.to_tensor(), None)?;
    let mut out = RasterImage::from_tensor(&y, 0)?;
    out.meters_per_pixel = img.meters_per_pixel;
    Ok(out)
}

/// Tiled inference for images larger than the training size. Overlapping
/// tile outputs are averaged.
pub fn infer_tiled(checkpoint: &Checkpoint, img: &RasterImage, spec: TileSpec) -> Result<RasterImage> {
    if img.dims() == (spec.tile_size, spec.tile_size) {
        return infer(checkpoint, img);
    }
    let (w, h) = img.dims();
    let mut acc = vec![0.0f64; w * h * 3];
    let mut hits = vec![0u32; w * h];
    for (t, o) in tile(img, spec)? {
        let out = infer(checkpoint, &t)?;
        for y in 0..spec.tile_size {
            for x in 0..spec.tile_size {
                let p = (o.y + y) * w + o.x + x;
                hits[p] += 1;
                for (c, v) in out.pixel(x, y).into_iter().enumerate() {
                    acc[p * 3 + c] += v as f64;
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, v)| (v / hits[i / 3] as f64) as f32)
        .collect();
    let mut out = RasterImage::new(w, h, data)?;
    out.meters_per_pixel = img.meters_per_pixel;
    Ok(out)
}

/// Conventional file names inside a trained-model directory.
pub fn generator_path(dir: &Path) -> PathBuf {
    dir.join("G.ckpt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthcity::{generate_corpus, SceneParams};

    type F = f64;

    /// A generator whose output is the constant `tanh⁻¹`-preimage of `value`.
    fn constant_gen(value: f64) -> (ArchSpec, Weights) {
        let spec = ArchSpec::unet_gen(3, 3).with_width(2).with_depth(1).with_norm(NormKind::None);
        let mut w = nets::build(&spec, 0).unwrap();
        for t in w.params.values_mut() {
            t.data_mut().fill(0.0);
        }
        w.params["out.b"].data_mut().fill(value.atanh() as f32);
        (spec, w)
    }

    /// Discriminator with zero weights: every logit is 0, i.e. probability ½.
    fn half_disc(channels: usize) -> (ArchSpec, Weights) {
        let spec = ArchSpec::patch_disc(channels).with_width(2).with_depth(1);
        let mut w = nets::build(&spec, 0).unwrap();
        for t in w.params.values_mut() {
            t.data_mut().fill(0.0);
        }
        (spec, w)
    }

    fn frozen(sw: &(ArchSpec, Weights)) -> Net<F> {
        Net::frozen(&sw.0, &sw.1).unwrap()
    }

    fn constant(v: f64, side: usize) -> Var<F> {
        Var::constant(Tensor::full(&[1, 3, side, side], v))
    }

    #[test]
    fn pix2pix_half_discriminator_gives_ln2() {
        let g = frozen(&constant_gen(0.5));
        let d = frozen(&half_disc(6));
        let x = constant(0.1, 8);
        let y = constant(0.5, 8);
        let obj = Pix2PixObjective { lambda_l1: 0.0 };
        let l = pix2pix_losses(&g, &d, &x, &y, &obj, AdvLoss::Bce).unwrap();
        let ln2 = std::f64::consts::LN_2;
        assert!((l.terms["g_adv"] - ln2).abs() < 1e-9);
        assert!((l.discriminator.value().item() - ln2).abs() < 1e-9);
        assert!((l.generator.value().item() - ln2).abs() < 1e-9);
        // G(x) ≈ y up to f32 weights: the L1 term vanishes
        let obj = Pix2PixObjective::default();
        let l = pix2pix_losses(&g, &d, &x, &y, &obj, AdvLoss::Bce).unwrap();
        assert!(l.terms["g_l1"] < 1e-5);
        let total: f64 = l.terms["g_adv"] + l.terms["g_l1"];
        assert!((total - l.generator.value().item()).abs() < 1e-9);
        let y2 = constant(0.25, 8);
        let l = pix2pix_losses(&g, &d, &x, &y2, &obj, AdvLoss::Bce).unwrap();
        let expected = 100.0 * (0.5 - 0.25);
        assert!((l.terms["g_l1"] - expected).abs() < 1e-5);
        assert!(pix2pix_losses(&g, &d, &x, &constant(0.5, 4), &obj, AdvLoss::Bce).is_err());
    }

    #[test]
    fn least_squares_variant() {
        let g = frozen(&constant_gen(0.5));
        let d = frozen(&half_disc(6));
        let obj = Pix2PixObjective { lambda_l1: 0.0 };
        let l = pix2pix_losses(&g, &d, &constant(0.0, 8), &constant(0.5, 8), &obj, AdvLoss::LeastSquares).unwrap();
        // scores are 0: (0-1)² for the generator, ½(1 + 0) for the discriminator
        assert!((l.generator.value().item() - 1.0).abs() < 1e-12);
        assert!((l.discriminator.value().item() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cyclegan_hand_cases() {
        let half = 0.5f64;
        let g = frozen(&constant_gen(half));
        let f = frozen(&constant_gen(half));
        let (dx, dy) = (frozen(&half_disc(3)), frozen(&half_disc(3)));
        let x = constant(0.2, 2);
        let y = constant(0.5, 2);
        let obj = CycleGanObjective { lambda_cycle: 10.0, lambda_identity: 0.0 };
        let l = cyclegan_losses(&g, &f, &dx, &dy, &x, &y, &obj, AdvLoss::Bce).unwrap();
        // F(G(x)) = 0.5 everywhere, x = 0.2
        assert!((l.terms["cycle_x"] - 0.3 * 10.0).abs() < 1e-6);
        assert!(l.terms["cycle_y"].abs() < 1e-6);
        let ln2 = std::f64::consts::LN_2;
        for k in ["g_adv", "f_adv"] {
            assert!((l.terms[k] - ln2).abs() < 1e-9);
        }
        assert!((l.disc_x.value().item() - ln2).abs() < 1e-9);
        let gen_sum: f64 = ["g_adv", "f_adv", "cycle_x", "cycle_y", "idt_y", "idt_x"]
            .iter()
            .map(|k| l.terms[*k])
            .sum();
        assert!((gen_sum - l.generators.value().item()).abs() < 1e-9);
    }

    /// Identity generators: a depth-1 U-Net cannot be the identity, so the
    /// cycle algebra is checked directly on the loss formula's inputs.
    #[test]
    fn identity_maps_have_zero_cycle_and_identity_terms() {
        let x = constant(0.3, 4);
        assert_eq!(x.l1_loss(&x).value().item(), 0.0);
        // a constant generator equal to the data is the identity on that data
        let g = frozen(&constant_gen(0.3));
        let f = frozen(&constant_gen(0.3));
        let (dx, dy) = (frozen(&half_disc(3)), frozen(&half_disc(3)));
        let y = constant(0.3, 4);
        let l = cyclegan_losses(&g, &f, &dx, &dy, &x, &y, &CycleGanObjective::default(), AdvLoss::Bce).unwrap();
        for k in ["cycle_x", "cycle_y", "idt_x", "idt_y"] {
            assert!(l.terms[k].abs() < 1e-5, "{k}: {}", l.terms[k]);
        }
    }

    #[test]
    fn cyclegan_total_is_symmetric() {
        let nets_a = (ArchSpec::unet_gen(3, 3).with_width(2).with_depth(2), 1u64);
        let build = |s: &ArchSpec, seed| Net::<F>::frozen(s, &nets::build(s, seed).unwrap()).unwrap();
        let g = build(&nets_a.0, 1);
        let f = build(&nets_a.0, 2);
        let ds = ArchSpec::patch_disc(3).with_width(2).with_depth(3);
        let (dx, dy) = (build(&ds, 3), build(&ds, 4));
        let x = Var::constant(rng::normal_tensor(&mut rng::stream(1, 1), &[1, 3, 8, 8]));
        let y = Var::constant(rng::normal_tensor(&mut rng::stream(2, 1), &[1, 3, 8, 8]));
        let obj = CycleGanObjective::default();
        let a = cyclegan_losses(&g, &f, &dx, &dy, &x, &y, &obj, AdvLoss::Bce).unwrap();
        let b = cyclegan_losses(&f, &g, &dy, &dx, &y, &x, &obj, AdvLoss::Bce).unwrap();
        assert!((a.generators.value().item() - b.generators.value().item()).abs() < 1e-9);
        assert!((a.disc_x.value().item() - b.disc_y.value().item()).abs() < 1e-12);
    }

    #[test]
    fn generator_step_descends_on_frozen_discriminator() {
        let gs = ArchSpec::unet_gen(3, 3).with_width(4).with_depth(2);
        let ds = ArchSpec::patch_disc(6).with_width(4).with_depth(3);
        let mut gw = nets::build(&gs, 1).unwrap();
        let dw = nets::build(&ds, 2).unwrap();
        let x = Var::constant(rng::normal_tensor::<f32>(&mut rng::stream(3, 0), &[1, 3, 16, 16]));
        let y = Var::constant(rng::normal_tensor::<f32>(&mut rng::stream(4, 0), &[1, 3, 16, 16]).map(|v| v.tanh()));
        let obj = Pix2PixObjective::default();
        let loss_at = |w: &Weights| {
            let g = Net::<f32>::trainable(&gs, w).unwrap();
            let d = Net::<f32>::frozen(&ds, &dw).unwrap();
            let l = pix2pix_losses(&g, &d, &x, &y, &obj, AdvLoss::Bce).unwrap();
            l.generator.backward();
            (l.generator.value().item(), g.grads())
        };
        let (before, grads) = loss_at(&gw);
        Adam::new(1e-5, 0.5).step(gw.params.values_mut(), &grads);
        let (after, _) = loss_at(&gw);
        assert!(after < before, "{after} !< {before}");
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 1,
            gen_width: 4,
            unet_depth: 2,
            resnet_blocks: 1,
            disc_width: 4,
            disc_depth: 3,
            ..Default::default()
        }
    }

    fn tiny_corpus(n: usize) -> Corpus {
        let p = SceneParams {
            canvas_size: 32,
            road_grid_spacing: 10,
            park_rect: crate::synthcity::Rect { x: 8, y: 8, w: 16, h: 16 },
            park_jitter: 1,
            ..Default::default()
        };
        generate_corpus(n, 0, &p).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let c = tiny_corpus(2);
        let cfg = TrainConfig { epochs: 0, ..tiny_config() };
        let m = train(Task::SegExtract, &c, &cfg, None, None).unwrap();
        assert!(m.history.records.is_empty());
        let init = nets::build(&cfg.generator_spec(Task::SegExtract), cfg.seed).unwrap();
        assert_eq!(m.generator.weights, init);
    }

    #[test]
    fn twin_runs_are_identical_and_persist() {
        let c = tiny_corpus(3);
        let cfg = TrainConfig { epochs: 2, eval_every: 1, ..tiny_config() };
        let dir = tempfile::tempdir().unwrap();
        for task in Task::ALL {
            let a = train(task, &c, &cfg, Some(&c), Some(dir.path())).unwrap();
            let b = train(task, &c, &cfg, Some(&c), None).unwrap();
            assert_eq!(a.history, b.history, "{task:?}");
            assert_eq!(a.generator, b.generator);
            assert_eq!(a.history.epochs(), 2);
            assert!(a.history.last("eval_l1").is_some());
            assert_eq!(a.inverse.is_some(), !task.paired());
            let back = Checkpoint::load(&generator_path(dir.path())).unwrap();
            assert_eq!(back, a.generator);
            assert!(dir.path().join("epoch_001/G.ckpt").exists());
            assert_eq!(History::read_csv(&dir.path().join("history.csv")).unwrap(), a.history);
            let out = infer(&a.generator, &c.scenes[0].remote).unwrap();
            assert_eq!(out.dims(), (32, 32));
            assert_eq!(out, infer(&a.generator, &c.scenes[0].remote).unwrap());
        }
    }

    #[test]
    fn nan_aborts_with_epoch_and_term() {
        let c = tiny_corpus(2);
        let cfg = TrainConfig { learning_rate: 1e30, epochs: 3, ..tiny_config() };
        match train(Task::EnvToLayoutSupervised, &c, &cfg, None, None) {
            Err(Error::Numeric { epoch, term, .. }) => {
                assert!(epoch >= 1);
                assert!(!term.is_empty());
            }
            other => panic!("expected numeric failure, got {:?}", other.map(|m| m.history)),
        }
    }

    #[test]
    fn interior_mask_changes_only_outside() {
        let c = tiny_corpus(2);
        let full = task_pairs(Task::EnvToLayoutUnpaired, &c.scenes, false).unwrap();
        let masked = task_pairs(Task::EnvToLayoutUnpaired, &c.scenes, true).unwrap();
        for (s, (a, b)) in c.scenes.iter().zip(full.iter().zip(&masked)) {
            for y in 0..32 {
                for x in 0..32 {
                    if s.site.contains(x, y) {
                        assert_eq!(a.0.pixel(x, y), b.0.pixel(x, y));
                    } else {
                        assert_eq!(b.0.pixel(x, y), [1.0, 1.0, 1.0]);
                    }
                }
            }
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn tiled_inference_matches_single_tile_and_covers() {
        let (spec, w) = constant_gen(0.5);
        let ck = Checkpoint::new(spec, w);
        let img = RasterImage::filled(40, 40, [0.2, 0.3, 0.4]).unwrap();
        let out = infer_tiled(&ck, &img, TileSpec::square(16)).unwrap();
        assert_eq!(out.dims(), (40, 40));
        assert!(out.data().iter().all(|v| (v - 0.75).abs() < 1e-5));
    }

    #[test]
    fn config_file_round_trip() {
        let cfg = TrainConfig { epochs: 3, interior_only: true, ..Default::default() };
        let back = TrainConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_toml("learning_rate = -1.0").is_err());
        assert_eq!(TrainConfig::from_toml("epochs = 2").unwrap().epochs, 2);
    }
}
