//! Scratch calibration driver (not part of the product).
//! Phase A: train the backbone (base params, no audio) and measure whether
//! class/image-conditioned generation becomes recognizable (ia/it/fvd).
//! Phase B: train audio adapters on top and measure sync movement.

use std::path::Path;

use syncanim::clips::load_clips;
use syncanim::diffusion::{DropoutPolicy, NoiseSchedule};
use syncanim::model::ConditionBundle;
use syncanim::synth::DatasetManifest;
use syncanim::tensor::checkpoint;
use syncanim_cli::config::{RunConfig, StageConfig};
use syncanim_cli::experiment::eval_model;
use syncanim_cli::train::{prepare_corpus, run_stage, train_backbone};

fn probe(ckpt: &str, t_max: Option<&String>) {
    let mut cfg = RunConfig::default();
    cfg.sampler.n_steps = 10;
    if let Some(t) = t_max {
        cfg.model.t_max = t.parse().unwrap();
    }
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let (model, store) = syncanim_cli::train::load_model(&cfg.model, Path::new(ckpt)).unwrap();
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();

    let clip = &test[0];
    let windows =
        syncanim::clips::extract_windows(clip, cfg.protocol.target_fps, cfg.protocol.n_frames, 1)
            .unwrap();
    let w = &windows[0];
    let class_id = syncanim::synth::class_index(&clip.labels.as_ref().unwrap().class_name).unwrap();
    println!("clip {} class {}", clip.id, class_id);
    let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    let gt: Vec<f64> = w.frames.iter().map(|f| mean(f)).collect();
    println!("gt brightness:  {:?}", gt.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    for (label, scales, steps) in [
        ("default(2,2,4) 10", None, 10usize),
        ("scales(1,1,1) 10", Some((1.0, 1.0, 1.0)), 10),
        ("default(2,2,4) 20", None, 20),
    ] {
        let mut c = cfg.clone();
        c.sampler.n_steps = steps;
        if let Some((i, t, a)) = scales {
            c.sampler.scales.image = i;
            c.sampler.scales.text = t;
            c.sampler.scales.audio = a;
        }
        let frames =
            syncanim_cli::experiment::generate_window(&c, &model, &store, &schedule, w, class_id, 99, None)
                .unwrap();
        let gen: Vec<f64> = frames.iter().map(|f| mean(f)).collect();
        let lo = frames.iter().flat_map(|f| f.iter()).cloned().fold(f64::INFINITY, f64::min);
        let hi = frames.iter().flat_map(|f| f.iter()).cloned().fold(f64::NEG_INFINITY, f64::max);
        let score = c.scorer.score(&frames, &w.audio, c.model.fps);
        println!(
            "{label}: brightness {:?} px[{lo:.2},{hi:.2}] sync {:.4}",
            gen.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            score.prob
        );
    }
    // Class-conditioning sensitivity: same seed, different class id.
    let f0 =
        syncanim_cli::experiment::generate_window(&cfg, &model, &store, &schedule, w, 0, 99, None)
            .unwrap();
    let f2 =
        syncanim_cli::experiment::generate_window(&cfg, &model, &store, &schedule, w, 2, 99, None)
            .unwrap();
    let diff: f64 = f0
        .iter()
        .flatten()
        .zip(f2.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / (f0.len() * f0[0].len()) as f64;
    let mag: f64 = f0.iter().flatten().map(|v| v.abs()).sum::<f64>() / (f0.len() * f0[0].len()) as f64;
    println!("class-swap mean |diff| {diff:.4} (mean |px| {mag:.4})");
    let sig = syncanim::metrics::class_signature(&f0);
    println!("gen signature: {:?}", sig.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
    let gt_sig = syncanim::metrics::class_signature(&w.frames);
    println!("gt  signature: {:?}", gt_sig.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
}

fn tloss(ckpt: &str) {
    let cfg = RunConfig::default();
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let (model, store) = syncanim_cli::train::load_model(&cfg.model, Path::new(ckpt)).unwrap();
    let corpus = prepare_corpus(&model, &store, &test, false).unwrap();
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();
    for t in [1000usize, 900, 700, 500, 300, 100, 50, 10] {
        let mut se = 0.0;
        let mut n = 0.0;
        for (ci, p) in corpus.clips.iter().enumerate() {
            for draw in 0..2u64 {
                let mut rng = syncanim::util::rng_for(123, "tloss", (ci as u64) * 10 + draw);
                let eps = syncanim::tensor::Tensor::randn(&p.x0.shape, 1.0, &mut rng);
                let x_t = schedule.add_noise(&p.x0, &eps, t).unwrap();
                let cond = syncanim::model::ConditionBundle {
                    image: Some(&p.image),
                    text: Some(p.class_id),
                    audio: None,
                };
                let mut tape = syncanim::tensor::Tape::new();
                let pred = model.forward(&mut tape, &store, &x_t, t, &cond).unwrap();
                let v = tape.value(pred);
                let mse: f64 = v
                    .data
                    .iter()
                    .zip(&eps.data)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / eps.data.len() as f64;
                se += mse;
                n += 1.0;
            }
        }
        let ab = schedule.alpha_bar(t);
        println!("t={t:4} alpha_bar={ab:.4} mse={:.4}", se / n);
    }
}

/// At several t: how much does audio conditioning change the clean-video
/// estimate, per frame, on a real noisy window? Shows whether training has
/// bound audio features to event placement.
fn aprobe(ckpt: &str, t_max: Option<&String>) {
    let mut cfg = RunConfig::default();
    if let Some(t) = t_max {
        cfg.model.t_max = t.parse().unwrap();
    }
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let (model, store) = syncanim_cli::train::load_model(&cfg.model, Path::new(ckpt)).unwrap();
    let corpus = prepare_corpus(&model, &store, &test, true).unwrap();
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();
    let p = &corpus.clips[0];
    println!("clip {}", p.id);
    // True per-frame brightness from x0 dc coefficients (16 tokens/frame).
    let s_tokens = syncanim::latent::S_TOKENS;
    let d_latent = syncanim::latent::D_LATENT;
    let n_frames = cfg.model.n_frames;
    let frame_dc = |x: &syncanim::tensor::Tensor| -> Vec<f64> {
        (0..n_frames)
            .map(|f| {
                (0..s_tokens)
                    .map(|s| x.data[(f * s_tokens + s) * d_latent])
                    .sum::<f64>()
                    / s_tokens as f64
            })
            .collect()
    };
    let r2 = |v: Vec<f64>| v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<f64>>();
    println!("x0 dc/frame:   {:?}", r2(frame_dc(&p.x0)));
    for t in [300usize.min(cfg.model.t_max), cfg.model.t_max * 4 / 5, cfg.model.t_max / 2, cfg.model.t_max / 5, cfg.model.t_max / 10] {
        let mut rng = syncanim::util::rng_for(5150, "aprobe", t as u64);
        let eps = syncanim::tensor::Tensor::randn(&p.x0.shape, 1.0, &mut rng);
        let x_t = schedule.add_noise(&p.x0, &eps, t).unwrap();
        let a = schedule.alpha_bar(t);
        let (sa, se) = (a.sqrt(), (1.0 - a).sqrt());
        let audio = p.audio.as_deref();
        let with = ConditionBundle { image: Some(&p.image), text: Some(p.class_id), audio };
        let without = ConditionBundle { image: Some(&p.image), text: Some(p.class_id), audio: None };
        let mut eps_w = None;
        let mut eps_o = None;
        for (slot, cond) in [(&mut eps_w, &with), (&mut eps_o, &without)] {
            let mut tape = syncanim::tensor::Tape::new();
            let node = model.forward(&mut tape, &store, &x_t, t, cond).unwrap();
            *slot = Some(tape.value(node).clone());
        }
        let (eps_w, eps_o) = (eps_w.unwrap(), eps_o.unwrap());
        // x0hat = (x_t - se*eps)/sa; delta_x0 = -se/sa * (eps_w - eps_o).
        let mut delta = eps_w.clone();
        for (d, o) in delta.data.iter_mut().zip(&eps_o.data) {
            *d = -(se / sa) * (*d - o);
        }
        println!("t={t:3} dx0 dc/frame: {:?}", r2(frame_dc(&delta)));
    }
}

/// Full test-set eval, with-audio vs audio-dropped, on identical per-window
/// noise seeds. The paired difference is the aggregate effect of the audio
/// pathway on sync.
fn agg(ckpt: &str, t_max: Option<&String>) {
    let mut cfg = RunConfig::default();
    if let Some(t) = t_max {
        cfg.model.t_max = t.parse().unwrap();
    }
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let (model, store) = syncanim_cli::train::load_model(&cfg.model, Path::new(ckpt)).unwrap();
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();
    for steps in [10usize, 20] {
        let mut c = cfg.clone();
        c.sampler.n_steps = steps;
        let rep = eval_model(&c, &model, &store, &test, 31, None).unwrap();
        let evaluator =
            syncanim::metrics::Evaluator::new(c.protocol.clone(), c.scorer.clone()).unwrap();
        let rep_na = evaluator
            .evaluate(&test, |w, class_id, idx| {
                let s = syncanim::util::derive_seed(31, "eval-window", idx as u64);
                let image = syncanim::latent::encode_video(&w.frames[..1])?.tokens;
                let cond =
                    ConditionBundle { image: Some(&image), text: Some(class_id), audio: None };
                let lv = syncanim::diffusion::sample_video(
                    &model, &store, &schedule, &cond, &c.sampler, s,
                )?;
                syncanim::latent::decode_video(&lv)
            })
            .unwrap();
        println!(
            "steps {steps}: WITH audio sync {:.4} relsync {:.2} align {:.2} fvd {:.2} | NO audio sync {:.4} relsync {:.2} align {:.2} fvd {:.2}",
            rep.mean_sync_prob, rep.relsync, rep.alignsync, rep.fvd_like,
            rep_na.mean_sync_prob, rep_na.relsync, rep_na.alignsync, rep_na.fvd_like
        );
    }
}

/// Instrumented DDIM run on one test window: per step, the frame-dc of the
/// guided clean-video estimate and of the audio guidance term's contribution
/// to it. Shows what the audio pathway does along the real trajectory.
fn trace(ckpt: &str, t_max: Option<&String>) {
    let mut cfg = RunConfig::default();
    if let Some(t) = t_max {
        cfg.model.t_max = t.parse().unwrap();
    }
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let (model, store) = syncanim_cli::train::load_model(&cfg.model, Path::new(ckpt)).unwrap();
    let corpus = prepare_corpus(&model, &store, &test, true).unwrap();
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();
    let p = &corpus.clips[0];
    let s_tokens = syncanim::latent::S_TOKENS;
    let d_latent = syncanim::latent::D_LATENT;
    let n_frames = cfg.model.n_frames;
    let frame_dc = |x: &syncanim::tensor::Tensor| -> Vec<f64> {
        (0..n_frames)
            .map(|f| {
                (0..s_tokens).map(|s| x.data[(f * s_tokens + s) * d_latent]).sum::<f64>()
                    / s_tokens as f64
            })
            .collect()
    };
    let r2 = |v: Vec<f64>| v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect::<Vec<f64>>();
    println!("clip {}  x0 dc: {:?}", p.id, r2(frame_dc(&p.x0)));
    let sc = cfg.sampler.scales.clone();
    let audio = p.audio.as_deref();
    let full = ConditionBundle { image: Some(&p.image), text: Some(p.class_id), audio };
    let noa = ConditionBundle { image: Some(&p.image), text: Some(p.class_id), audio: None };
    let img = ConditionBundle { image: Some(&p.image), text: None, audio: None };
    let unc = ConditionBundle { image: None, text: None, audio: None };
    let mut rng = syncanim::util::rng_for(31, "trace", 0);
    let xt = syncanim::diffusion::ddim_sample(
        &schedule,
        20,
        &p.x0.shape,
        Some(2.0),
        &mut rng,
        |x_t, t| {
            let fwd = |cond: &ConditionBundle| -> syncanim::tensor::Tensor {
                let mut tape = syncanim::tensor::Tape::new();
                let n = model.forward(&mut tape, &store, x_t, t, cond).unwrap();
                tape.value(n).clone()
            };
            let e_full = fwd(&full);
            let e_noa = fwd(&noa);
            let e_img = fwd(&img);
            let e_unc = fwd(&unc);
            let mut g = e_unc.clone();
            for i in 0..g.data.len() {
                g.data[i] = (1.0 - sc.image) * e_unc.data[i]
                    + (sc.image - sc.text) * e_img.data[i]
                    + (sc.text - sc.audio) * e_noa.data[i]
                    + sc.audio * e_full.data[i];
            }
            let a = schedule.alpha_bar(t);
            let (sa, se) = (a.sqrt(), (1.0 - a).sqrt());
            let mut x0 = x_t.clone();
            for i in 0..x0.data.len() {
                x0.data[i] = (x_t.data[i] - se * g.data[i]) / sa;
            }
            let mut dx = e_full.clone();
            for i in 0..dx.data.len() {
                dx.data[i] = -(se / sa) * sc.audio * (e_full.data[i] - e_noa.data[i]);
            }
            println!("t={t:3} x0hat {:?}", r2(frame_dc(&x0)));
            println!("      dxA   {:?}", r2(frame_dc(&dx)));
            Ok(g)
        },
    )
    .unwrap();
    let lv = syncanim::latent::LatentVideo { n_frames, tokens: xt };
    let frames = syncanim::latent::decode_video(&lv).unwrap();
    let mean = |f: &[f64]| f.iter().sum::<f64>() / f.len() as f64;
    let gen: Vec<f64> = frames.iter().map(|f| mean(f)).collect();
    println!("final brightness: {:?}", r2(gen));
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args[1] == "probe" {
        probe(&args[2], args.get(3));
        return;
    }
    if args[1] == "agg" {
        agg(&args[2], args.get(3));
        return;
    }
    if args[1] == "trace" {
        trace(&args[2], args.get(3));
        return;
    }
    if args[1] == "aprobe" {
        aprobe(&args[2], args.get(3));
        return;
    }
    if args[1] == "tloss" {
        tloss(&args[2]);
        return;
    }
    // usage: calib <bb_epochs> <bb_lr> <ad_epochs> <ad_lr> [bb_ckpt_to_reuse]
    let bb_epochs: usize = args[1].parse().unwrap();
    let bb_lr: f64 = args[2].parse().unwrap();
    let ad_epochs: usize = args[3].parse().unwrap();
    let ad_lr: f64 = args[4].parse().unwrap();

    let mut cfg = RunConfig::default();
    cfg.sampler.n_steps = 10;
    if let Some(t) = args.get(5) {
        cfg.model.t_max = t.parse().unwrap();
        println!("[calib] t_max {}", cfg.model.t_max);
    }
    let bench = Path::new("/tmp/smoke/bench");
    let manifest = DatasetManifest::load(&bench.join("manifest.json")).unwrap();
    let test = load_clips(&bench.join("clips"), manifest.split("test").unwrap()).unwrap();
    let dropout = DropoutPolicy::default();

    // ---- Phase A: backbone ----
    let (model, mut store) = if let Some(ck) = args.get(6) {
        let (m, s) = syncanim_cli::train::load_model(&cfg.model, Path::new(ck)).unwrap();
        println!("[calib] reusing backbone {ck}");
        (m, s)
    } else {
        let stage = StageConfig { epochs: bb_epochs, batch_size: 8, lr: bb_lr };
        let (m, s, losses) =
            train_backbone(&cfg.model, &stage, 48, &dropout, 0xBBB).unwrap();
        println!("[calib] backbone losses: first {:.3} last {:.3}", losses[0], losses[losses.len() - 1]);
        checkpoint::save(&s, None, Path::new("/tmp/smoke/ck/backbone.bin")).unwrap();
        (m, s)
    };
    let rep = eval_model(&cfg, &model, &store, &test, 31, None).unwrap();
    println!(
        "[calib] BACKBONE eval: fvd {:.1} ia {:.4} it {:.4} relsync {:.2} align {:.2} sync {:.6}",
        rep.fvd_like, rep.ia, rep.it, rep.relsync, rep.alignsync, rep.mean_sync_prob
    );

    if ad_epochs == 0 {
        return;
    }

    // ---- Phase B: adapters on curated smoke corpus ----
    let cur: Vec<String> = {
        let set = syncanim_cli::records::CuratedSet::load(Path::new("/tmp/smoke/cur/curated.json")).unwrap();
        set.kept_ids
    };
    let clips = load_clips(&bench.join("clips"), &cur).unwrap();
    let corpus = prepare_corpus(&model, &store, &clips, true).unwrap();
    println!("[calib] adapter corpus: {} clips", corpus.clips.len());
    let schedule = NoiseSchedule::linear(cfg.model.t_max).unwrap();
    let stage = StageConfig { epochs: ad_epochs, batch_size: 8, lr: ad_lr };
    run_stage(&model, &mut store, &schedule, &corpus, &stage, &dropout, 77, "adapters").unwrap();
    checkpoint::save(&store, None, Path::new("/tmp/smoke/ck/adapters.bin")).unwrap();
    let rep = eval_model(&cfg, &model, &store, &test, 31, None).unwrap();
    println!(
        "[calib] ADAPTERS eval: fvd {:.1} ia {:.4} it {:.4} relsync {:.2} align {:.2} sync {:.6}",
        rep.fvd_like, rep.ia, rep.it, rep.relsync, rep.alignsync, rep.mean_sync_prob
    );
}
