//! Acceptance run: one PASS/FAIL line per criterion. Training-heavy criteria
//! share models through a scratch directory, so they run in order.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;

use parkgen::diffusion::{self, DenoiserConfig, NoiseSchedule, RefineParams, ScheduleSpec};
use parkgen::experiment::{run_experiment, ExperimentConfig, ExperimentId};
use parkgen::gan::{self, cyclegan_losses, pix2pix_losses, AdvLoss, CycleGanObjective, Pix2PixObjective, Task, TrainConfig};
use parkgen::imageio::write_rgb;
use parkgen::metrics::{self, ConfusionMatrix};
use parkgen::nets::{self, ArchKind, ArchSpec, Net, NormKind, Weights};
use parkgen::nn::gradcheck::relative_error;
use parkgen::nn::{Tensor, Var};
use parkgen::pipeline::{load_run, run_pipeline, PipelineConfig, PipelineRun};
use parkgen::{
    encode_classmap, generate_corpus, quantize_to_classes, rng, split_corpus, tile, ClassMap, Corpus, Legend,
    RasterImage, SceneParams, TileSpec,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

// 1 ─ legend and round trip

fn legend_roundtrip() -> Outcome {
    // park element colours as published
    let table = [
        ("Green land", [0u8, 255, 0]),
        ("Water", [0, 255, 255]),
        ("Roads", [241, 145, 73]),
        ("Paving", [255, 255, 0]),
        ("Structures", [255, 0, 255]),
        ("Plant", [0, 152, 67]),
    ];
    let park = Arc::new(Legend::park());
    for (name, rgb) in table {
        let id = park.id_of(name).ok_or(format!("{name} missing"))?;
        check(park.get(id).unwrap().rgb() == rgb, || format!("{name} colour differs"))?;
    }
    let env = Arc::new(Legend::environment());
    let mut r = rng::stream(1, 0);
    for i in 0..1000 {
        let legend = if i % 2 == 0 { &park } else { &env };
        let (w, h) = (r.gen_range(1..40), r.gen_range(1..40));
        let data: Vec<u8> = (0..w * h).map(|_| r.gen_range(0..legend.len() as u8)).collect();
        let map = ClassMap::new(w, h, data, legend.clone()).map_err(e)?;
        let img = encode_classmap(&map).map_err(e)?;
        // every pixel lands exactly on its legend colour
        for y in 0..h {
            for x in 0..w {
                let rgb = legend.get(map.get(x, y)).unwrap().rgb();
                let px = img.pixel(x, y);
                check(
                    (0..3).all(|c| (px[c] * 255.0).round() as u8 == rgb[c]),
                    || format!("map {i} pixel ({x},{y}) encodes wrong"),
                )?;
            }
        }
        let back = quantize_to_classes(&img, legend).map_err(e)?;
        check(back == map, || format!("map {i} ({w}x{h}) did not round trip"))?;
    }
    Ok("6 colours byte-exact; 1000 random maps round trip".into())
}

// 2 ─ tiling

fn tiling() -> Outcome {
    let mut cases = 0;
    for (side, t, s, expected) in [(1024, 512, 512, Some(4)), (700, 512, 512, Some(4)), (512, 512, 512, Some(1))] {
        let img = RasterImage::filled(side, side, [0.0; 3]).map_err(e)?;
        let tiles = tile(&img, TileSpec::new(t, s).map_err(e)?).map_err(e)?;
        check(Some(tiles.len()) == expected, || format!("{side}/{t}: {} tiles", tiles.len()))?;
    }
    let img = RasterImage::filled(700, 700, [0.0; 3]).map_err(e)?;
    let origins: Vec<(usize, usize)> = tile(&img, TileSpec::square(512)).map_err(e)?.iter().map(|(_, o)| (o.x, o.y)).collect();
    check(origins == [(0, 0), (188, 0), (0, 188), (188, 188)], || format!("700 origins {origins:?}"))?;
    for w in (9..=70).step_by(7) {
        for h in (9..=70).step_by(9) {
            for t in [1, 3, 8, 9] {
                for s in 1..=t {
                    let img = RasterImage::filled(w, h, [0.0; 3]).map_err(e)?;
                    let tiles = tile(&img, TileSpec::new(t, s).map_err(e)?).map_err(e)?;
                    let mut hit = vec![false; w * h];
                    for (im, o) in &tiles {
                        check(im.dims() == (t, t) && o.x + t <= w && o.y + t <= h, || format!("{w}x{h} t{t} s{s} overflow"))?;
                        for y in o.y..o.y + t {
                            for x in o.x..o.x + t {
                                hit[y * w + x] = true;
                            }
                        }
                    }
                    check(hit.iter().all(|&b| b), || format!("{w}x{h} t{t} s{s} leaves gaps"))?;
                    // count: ceil((L - t)/s) + 1 per axis
                    let per = |l: usize| (l - t).div_ceil(s) + 1;
                    check(tiles.len() == per(w) * per(h), || format!("{w}x{h} t{t} s{s}: {} tiles", tiles.len()))?;
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("1024→4, 700→4 edge-anchored, {cases} coverage/count cases"))
}

// 3 ─ gradient checks

fn gradients() -> Outcome {
    let rand = |seed: u64, shape: &[usize]| -> Tensor<f64> { rng::normal_tensor(&mut rng::stream(seed, 7), shape) };
    let mut worst = 0.0f64;
    let mut blocks = 0;
    let mut run = |name: &str, errs: Vec<f64>| -> Result<(), String> {
        blocks += 1;
        check(errs.len() >= 5, || format!("{name}: only {} cases", errs.len()))?;
        for err in errs {
            worst = worst.max(err);
            check(err < 1e-3, || format!("{name}: relative error {err:.2e}"))?;
        }
        Ok(())
    };
    let seeds = 1..=5u64;
    let h = 1e-6;
    for (stride, pad, k) in [(1, 1, 3), (2, 1, 4), (1, 0, 1), (1, 3, 7)] {
        run(
            &format!("conv2d k{k} s{stride}"),
            seeds
                .clone()
                .map(|s| {
                    let inputs = [rand(s, &[2, 2, 7, 7]), rand(s + 9, &[3, 2, k, k]), rand(s + 19, &[3])];
                    relative_error(s, &inputs, h, |v| v[0].conv2d(&v[1], Some(&v[2]), stride, pad))
                })
                .collect(),
        )?;
    }
    let norm_in = |s| [rand(s, &[2, 3, 4, 4]), rand(s + 1, &[3]), rand(s + 2, &[3])];
    run("instance_norm", seeds.clone().map(|s| relative_error(s, &norm_in(s), h, |v| v[0].instance_norm(&v[1], &v[2]))).collect())?;
    run("batch_norm", seeds.clone().map(|s| relative_error(s, &norm_in(s), h, |v| v[0].batch_norm(&v[1], &v[2]))).collect())?;
    type Unary = fn(&Var<f64>) -> Var<f64>;
    let unary: [(&str, Unary); 6] = [
        ("leaky_relu", |x| x.leaky_relu(0.2)),
        ("relu", |x| x.relu()),
        ("tanh", |x| x.tanh()),
        ("silu", |x| x.silu()),
        ("upsample2x", |x| x.upsample2x()),
        ("scale", |x| x.scale(-1.7)),
    ];
    for (name, f) in unary {
        run(name, seeds.clone().map(|s| relative_error(s, &[rand(s, &[2, 2, 3, 3])], h, |v| f(&v[0]))).collect())?;
    }
    let pair = |s| [rand(s, &[2, 2, 3, 3]), rand(s + 5, &[2, 2, 3, 3])];
    run("add", seeds.clone().map(|s| relative_error(s, &pair(s), h, |v| v[0].add(&v[1]))).collect())?;
    run("concat_channels", seeds.clone().map(|s| relative_error(s, &pair(s), h, |v| v[0].concat_channels(&v[1]))).collect())?;
    run("l1_loss", seeds.clone().map(|s| relative_error(s, &pair(s), h, |v| v[0].l1_loss(&v[1]))).collect())?;
    run("mse_loss", seeds.clone().map(|s| relative_error(s, &pair(s), h, |v| v[0].mse_loss(&v[1]))).collect())?;
    run("bce_with_logits", seeds.clone().map(|s| relative_error(s, &pair(s)[..1], h, |v| v[0].bce_with_logits(1.0))).collect())?;
    run("least_squares", seeds.clone().map(|s| relative_error(s, &pair(s)[..1], h, |v| v[0].least_squares(0.0))).collect())?;
    run(
        "add_channel_bias",
        seeds.clone().map(|s| relative_error(s, &[rand(s, &[2, 3, 2, 2]), rand(s + 1, &[2, 3])], h, |v| v[0].add_channel_bias(&v[1]))).collect(),
    )?;
    run(
        "linear",
        seeds
            .clone()
            .map(|s| relative_error(s, &[rand(s, &[3, 4]), rand(s + 1, &[5, 4]), rand(s + 2, &[5])], h, |v| v[0].linear(&v[1], &v[2])))
            .collect(),
    )?;
    let specs = [
        ArchSpec::unet_gen(2, 2).with_width(2).with_depth(2),
        ArchSpec::resnet_gen(1, 1).with_width(1).with_depth(1),
        ArchSpec::patch_disc(2).with_width(2).with_depth(3),
        ArchSpec::diffusion_unet(1).with_width(2).with_depth(1).with_norm(NormKind::None),
    ];
    for spec in &specs {
        let errs = seeds
            .clone()
            .map(|s| {
                let w = nets::build(spec, s).unwrap();
                let w = Weights {
                    params: w.params.into_iter().map(|(n, t)| (n, t.map(|v| v * 10.0))).collect(),
                    seed: s,
                };
                let net = Net::<f64>::frozen(spec, &w).unwrap();
                let t = [7usize];
                let tt = (spec.kind == ArchKind::DiffusionUnet).then_some(&t[..]);
                relative_error(s, &[rand(s, &[1, spec.in_channels, 8, 8])], h, |v| net.forward(&v[0], tt).unwrap())
            })
            .collect();
        run(&format!("{:?} network", spec.kind), errs)?;
    }
    Ok(format!("{blocks} blocks × 5 seeds, worst relative error {worst:.2e}"))
}

// 4 ─ loss oracles

/// U-Net whose output is the constant `value` regardless of input.
fn constant_gen(value: f64) -> Net<f64> {
    let spec = ArchSpec::unet_gen(3, 3).with_width(2).with_depth(1).with_norm(NormKind::None);
    let mut w = nets::build(&spec, 0).unwrap();
    for t in w.params.values_mut() {
        t.data_mut().fill(0.0);
    }
    w.params["out.b"].data_mut().fill(value.atanh() as f32);
    Net::frozen(&spec, &w).unwrap()
}

/// Discriminator with zero weights: every logit is 0 (probability ½).
fn half_disc(channels: usize) -> Net<f64> {
    let spec = ArchSpec::patch_disc(channels).with_width(2).with_depth(1);
    let mut w = nets::build(&spec, 0).unwrap();
    for t in w.params.values_mut() {
        t.data_mut().fill(0.0);
    }
    Net::frozen(&spec, &w).unwrap()
}

fn loss_oracles() -> Outcome {
    let ln2 = std::f64::consts::LN_2;
    let c = |v: f64, side| Var::constant(Tensor::<f64>::full(&[1, 3, side, side], v));
    let close = |a: f64, b: f64, tol: f64, what: &str| check((a - b).abs() < tol, || format!("{what}: {a} vs {b}"));

    let (g, d) = (constant_gen(0.5), half_disc(6));
    let l = pix2pix_losses(&g, &d, &c(0.1, 8), &c(0.5, 8), &Pix2PixObjective { lambda_l1: 0.0 }, AdvLoss::Bce).map_err(e)?;
    close(l.discriminator.value().item(), ln2, 1e-9, "pix2pix D at ½")?;
    close(l.generator.value().item(), ln2, 1e-9, "pix2pix G at ½")?;
    let l = pix2pix_losses(&g, &d, &c(0.1, 8), &c(0.5, 8), &Pix2PixObjective::default(), AdvLoss::LeastSquares).map_err(e)?;
    close(l.discriminator.value().item(), 0.5, 1e-9, "LSGAN D")?;
    // the output bias is stored in f32, so G(x) = 0.5 only to ~1e-8
    close(l.terms["g_l1"], 0.0, 1e-5, "pix2pix L1 at G(x) = y")?;

    let (dx, dy) = (half_disc(3), half_disc(3));
    let obj = CycleGanObjective { lambda_cycle: 10.0, lambda_identity: 0.0 };
    let (g, f) = (constant_gen(0.5), constant_gen(0.5));
    let l = cyclegan_losses(&g, &f, &dx, &dy, &c(0.2, 4), &c(0.5, 4), &obj, AdvLoss::Bce).map_err(e)?;
    close(l.terms["g_adv"], ln2, 1e-9, "CycleGAN G adversarial")?;
    close(l.terms["f_adv"], ln2, 1e-9, "CycleGAN F adversarial")?;
    close(l.disc_x.value().item(), ln2, 1e-9, "CycleGAN D_X")?;
    close(l.terms["cycle_x"], 10.0 * 0.3, 1e-6, "cycle term λ·|0.5 − 0.2|")?;

    // identity translators on the data leave cycle and identity terms at zero
    let (g, f) = (constant_gen(0.3), constant_gen(0.3));
    let l = cyclegan_losses(&g, &f, &dx, &dy, &c(0.3, 4), &c(0.3, 4), &CycleGanObjective::default(), AdvLoss::Bce).map_err(e)?;
    for k in ["cycle_x", "cycle_y", "idt_x", "idt_y"] {
        close(l.terms[k], 0.0, 1e-5, k)?;
    }
    // direct loss-primitive fixtures at full precision
    let zero = Var::constant(Tensor::<f64>::zeros(&[1, 1, 2, 2]));
    close(zero.bce_with_logits(1.0).value().item(), ln2, 1e-12, "bce(0, 1)")?;
    close(zero.bce_with_logits(0.0).value().item(), ln2, 1e-12, "bce(0, 0)")?;
    let a = Var::constant(Tensor::new(&[1, 1, 1, 2], vec![0.25, -1.0]).unwrap());
    let b = Var::constant(Tensor::new(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
    close(a.l1_loss(&b).value().item(), 1.125, 1e-12, "l1 fixture")?;
    close(a.mse_loss(&b).value().item(), (0.0625 + 4.0) / 2.0, 1e-12, "mse fixture")?;
    Ok("ln 2 discriminator case, LSGAN ½, cycle λ·0.3, identity zero terms".into())
}

// 5 ─ segmentation learnability

fn small_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        gen_width: 8,
        disc_width: 8,
        resnet_blocks: 3,
        ..Default::default()
    }
}

fn segmentation(work: &Path) -> Outcome {
    let corpus = generate_corpus(200, 1, &SceneParams::default()).map_err(e)?;
    let (train, test) = split_corpus(&corpus, 0.8).map_err(e)?;
    let t = Instant::now();
    let model = gan::train(Task::SegExtract, &train, &small_train(4), None, Some(&work.join("seg_extract"))).map_err(e)?;
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let mut total: Option<ConfusionMatrix> = None;
    for s in &test.scenes {
        let pred = quantize_to_classes(&gan::infer(&model.generator, &s.remote).map_err(e)?, s.environment.legend()).map_err(e)?;
        let cm = metrics::confusion(&pred, &s.environment).map_err(e)?;
        match &mut total {
            Some(t) => t.merge(&cm).map_err(e)?,
            None => total = Some(cm),
        }
    }
    let cm = total.ok_or("no test scenes")?;
    let (acc, base) = (cm.accuracy(), cm.majority_baseline());
    let legend = Legend::environment();
    let worst = cm
        .worst_confusion()
        .map(|(a, b, f)| format!("{} → {} ({:.1}% of {})", legend.entries[a].name, legend.entries[b].name, 100.0 * f, legend.entries[a].name))
        .unwrap_or_else(|| "none".into());
    let detail = format!(
        "held-out accuracy {acc:.3} vs majority {base:.3} (+{:.3}, need +0.15); {minutes:.1} min; worst confusion: {worst}",
        acc - base
    );
    check(acc >= base + 0.15 && minutes <= 30.0, || detail.clone())?;
    Ok(detail)
}

// 6 ─ constraint effect on entrances

fn constraint_effect(work: &Path, corpora: &(Corpus, Corpus)) -> Outcome {
    let (train, test) = corpora;
    check(test.len() >= 20, || format!("only {} test scenes", test.len()))?;
    let t = Instant::now();
    let cfg = ExperimentConfig {
        train: small_train(20),
        ..Default::default()
    };
    let e2 = run_experiment(ExperimentId::E2, train, test, &cfg, Some(&work.join("E2"))).map_err(e)?;
    let e3 = run_experiment(ExperimentId::E3, train, test, &cfg, Some(&work.join("E3"))).map_err(e)?;
    check(e2.scene_seeds() == e3.scene_seeds(), || "E2 and E3 scored different scenes".into())?;
    let (a, b) = (e2.mean("entrance_count").unwrap(), e3.mean("entrance_count").unwrap());
    let truth = e2.mean("true_entrance_count").unwrap();
    let detail = format!(
        "{} scenes: entrances E2 {a:.3}, E3 {b:.3} (reference {truth:.3}), E2 − E3 = {:+.3}; {:.1} min",
        test.len(),
        a - b,
        t.elapsed().as_secs_f64() / 60.0
    );
    check(a - b >= 0.0, || detail.clone())?;
    Ok(detail)
}

// 7 ─ diffusion suite

fn diffusion_suite(work: &Path) -> Outcome {
    let sched = NoiseSchedule::new(ScheduleSpec::default()).map_err(e)?;
    let ab_t = sched.alpha_bar(sched.steps());
    check(ab_t < 1e-4, || format!("ᾱ_T = {ab_t:e}"))?;
    // independent product of (1 − β)
    let mut prod = 1.0f64;
    for i in 0..200 {
        prod *= 1.0 - (1e-4 + (0.0999 - 1e-4) * i as f64 / 199.0);
    }
    check((prod - ab_t).abs() < 1e-15, || "ᾱ_T disagrees with the β product".into())?;

    let mut r = rng::stream(11, 0);
    let shape = [1, 3, 6, 6];
    let x0: Tensor<f64> = rng::normal_tensor(&mut r, &shape);
    let mut worst = 0.0f64;
    for t in [1, 10, 57, 200] {
        let (mut x, mut comp) = (x0.clone(), Tensor::<f64>::zeros(&shape));
        for s in 1..=t {
            let n: Tensor<f64> = rng::normal_tensor(&mut r, &shape);
            let (a, b) = ((1.0 - sched.beta(s)).sqrt(), sched.beta(s).sqrt());
            x = x.zip_map(&n, |v, z| a * v + b * z);
            let wgt = (sched.alpha_bar(t) / sched.alpha_bar(s)).sqrt() * b / (1.0 - sched.alpha_bar(t)).sqrt();
            comp = comp.zip_map(&n, |c, z| c + wgt * z);
        }
        let closed = diffusion::forward_diffuse(&x0, t, &comp, &sched).map_err(e)?;
        worst = worst.max(closed.data().iter().zip(x.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    check(worst < 1e-5, || format!("closed vs iterative {worst:e}"))?;

    let one = NoiseSchedule::new(ScheduleSpec { steps: 1, beta_start: 0.3, beta_end: 0.3 }).map_err(e)?;
    let eps: Tensor<f64> = rng::normal_tensor(&mut r, &shape);
    let x1 = diffusion::forward_diffuse(&x0, 1, &eps, &one).map_err(e)?;
    let back = diffusion::reverse_step(&x1, 1, &eps, &one, None).map_err(e)?;
    let rec = back.data().iter().zip(x0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(rec < 1e-9, || format!("T=1 reconstruction {rec:e}"))?;

    let corpus = generate_corpus(4, 5, &SceneParams::default()).map_err(e)?;
    let imgs: Vec<RasterImage> = corpus.scenes.iter().map(|s| s.scheme.clone()).collect();
    let cfg = DenoiserConfig { epochs: 1, base_width: 4, depth: 2, time_embedding_dim: 8, ..Default::default() };
    let (ck, _) = diffusion::train_denoiser(&imgs, &cfg).map_err(e)?;
    ck.save(&work.join("tiny_denoiser.ckpt")).map_err(e)?;
    let p0 = RefineParams { strength: 0.0, ..Default::default() };
    check(diffusion::refine(&imgs[0], &p0, &ck, &sched).map_err(e)? == imgs[0], || "strength 0 changed the image".into())?;
    let p1 = RefineParams { strength: 1.0, seed: 3, ..Default::default() };
    let (a, b) = (
        diffusion::refine(&imgs[0], &p1, &ck, &sched).map_err(e)?,
        diffusion::refine(&imgs[1], &p1, &ck, &sched).map_err(e)?,
    );
    check(a == b, || "strength 1 output depends on the input".into())?;
    Ok(format!("ᾱ_T = {ab_t:.2e}; closed/iterative {worst:.1e}; T=1 recon {rec:.1e}; strength 0/1 contracts hold"))
}

// 8, 9 ─ pipeline

struct PipelineSetup {
    config: PipelineConfig,
    inputs: Vec<PathBuf>,
}

fn prepare_pipeline(work: &Path, corpora: &(Corpus, Corpus)) -> Result<PipelineSetup, String> {
    let (train, test) = corpora;
    let scheme_dir = work.join("layout_to_scheme");
    gan::train(Task::LayoutToScheme, train, &small_train(3), None, Some(&scheme_dir)).map_err(e)?;
    let imgs: Vec<RasterImage> = train.scenes.iter().map(|s| s.scheme.clone()).collect();
    let dcfg = DenoiserConfig { epochs: 10, base_width: 8, ..Default::default() };
    let (ck, _) = diffusion::train_denoiser(&imgs, &dcfg).map_err(e)?;
    let dpath = work.join("denoiser/denoiser.ckpt");
    ck.save(&dpath).map_err(e)?;
    let inputs = test
        .scenes
        .iter()
        .map(|s| {
            let p = work.join(format!("inputs/remote_{:06}.png", s.seed));
            write_rgb(&p, &s.remote).map(|_| p)
        })
        .collect::<parkgen::Result<Vec<_>>>()
        .map_err(e)?;
    let config = PipelineConfig {
        seg_extract: work.join("seg_extract/G.ckpt"),
        layout_gen: work.join("E2/model/G.ckpt"),
        scheme_gen: scheme_dir.join("G.ckpt"),
        denoiser: dpath,
        ..Default::default()
    };
    Ok(PipelineSetup { config, inputs })
}

fn resolution_expansion(work: &Path, setup: &PipelineSetup) -> Outcome {
    let t = Instant::now();
    let (mut scheme_noise, mut final_noise) = (0.0, 0.0);
    for input in &setup.inputs {
        let run = run_pipeline(input, &setup.config, &work.join("runs")).map_err(e)?;
        let dir = work.join("runs").join(&run.run_id);
        let scheme = parkgen::imageio::read_rgb(&dir.join(&run.stage("scheme_gen").unwrap().file)).map_err(e)?;
        let last = parkgen::imageio::read_rgb(&dir.join(&run.stage("upscale").unwrap().file)).map_err(e)?;
        check(last.pixel_count() == 64 * scheme.pixel_count(), || {
            format!("{}: {} vs {} pixels", input.display(), last.pixel_count(), scheme.pixel_count())
        })?;
        check(last.dims() == (8 * scheme.width(), 8 * scheme.height()), || "final is not 8× per side".into())?;
        scheme_noise += run.metrics["scheme_boundary_noise"].unwrap();
        final_noise += run.metrics["final_boundary_noise"].unwrap();
    }
    let n = setup.inputs.len() as f64;
    let (s, f) = (scheme_noise / n, final_noise / n);
    let detail = format!(
        "{} scenes, 64× pixels each; boundary noise scheme {s:.4} → final {f:.4}; {:.1} min",
        setup.inputs.len(),
        t.elapsed().as_secs_f64() / 60.0
    );
    check(setup.inputs.len() >= 20 && f <= s, || detail.clone())?;
    Ok(detail)
}

fn determinism(work: &Path, setup: &PipelineSetup) -> Outcome {
    let input = &setup.inputs[0];
    let runs: Vec<PipelineRun> = ["twin_a", "twin_b"]
        .iter()
        .map(|d| run_pipeline(input, &setup.config, &work.join(d)))
        .collect::<parkgen::Result<_>>()
        .map_err(e)?;
    check(runs[0].run_id == runs[1].run_id, || "run ids differ".into())?;
    let dirs: Vec<PathBuf> = ["twin_a", "twin_b"].iter().map(|d| work.join(d).join(&runs[0].run_id)).collect();
    for (a, b) in runs[0].stages.iter().zip(&runs[1].stages) {
        let (x, y) = (
            std::fs::read(dirs[0].join(&a.file)).map_err(e)?,
            std::fs::read(dirs[1].join(&b.file)).map_err(e)?,
        );
        check(x == y, || format!("stage {} differs", a.name))?;
    }
    check(runs[0].metrics == runs[1].metrics, || "metrics differ".into())?;
    check(load_run(&dirs[1]).map_err(e)? == runs[1], || "manifest did not reload".into())?;
    Ok(format!("{} stage artifacts bit-identical across twin runs", runs[0].stages.len()))
}

fn main() {
    let work_dir = tempfile::tempdir().expect("scratch dir");
    let work = work_dir.path();
    let mut failures = 0;
    let mut report = |id: &str, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let secs = t.elapsed().as_secs_f64();
        match out {
            Ok(d) => println!("PASS  {id:<3} {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failures += 1;
                println!("FAIL  {id:<3} {name}: {d} [{secs:.1}s]")
            }
        }
    };
    report("1", "legend colours and encode/quantize round trip", &mut legend_roundtrip);
    report("2", "tiling coverage and counts", &mut tiling);
    report("3", "gradient checks", &mut gradients);
    report("4", "loss oracles", &mut loss_oracles);
    report("7", "diffusion suite", &mut || diffusion_suite(work));
    report("5", "segmentation learnability", &mut || segmentation(work));
    let corpora = generate_corpus(120, 1000, &SceneParams::default())
        .and_then(|c| split_corpus(&c, 0.8))
        .expect("experiment corpus");
    report("6", "entrance constraint effect (E2 vs E3)", &mut || constraint_effect(work, &corpora));
    let setup = prepare_pipeline(work, &corpora);
    match &setup {
        Ok(s) => {
            report("8", "resolution expansion", &mut || resolution_expansion(work, s));
            report("9", "pipeline determinism", &mut || determinism(work, s));
        }
        Err(msg) => {
            for id in ["8", "9"] {
                report(id, "pipeline", &mut || Err(format!("model preparation failed: {msg}")));
            }
        }
    }
    println!("SKIP  10  published figures and real-city results: no real imagery is available; 5-8 use the synthetic corpus");
    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
