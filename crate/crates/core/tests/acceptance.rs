//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=1,2,7` runs a subset. The exit status is zero unless a
//! criterion panics or `ACCEPTANCE_STRICT=1` is set and something fails,
//! so that the long-running and hardware-bound criteria report honestly
//! without breaking `cargo test` on small machines.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dsa_splat::camera::{Camera, Orbit};
use dsa_splat::checkpoint::checkpoint_hash;
use dsa_splat::dataset::Split;
use dsa_splat::exec::Exec;
use dsa_splat::loss::{psnr, smooth_loss, ssim_value, PSNR_CAP};
use dsa_splat::math::logit;
use dsa_splat::model::{interp_table, knot_time, opacity_at, Gaussian, GaussianCloud, ParamGroup};
use dsa_splat::optim::{densify, prune_opacity, DensityConfig};
use dsa_splat::phantom::{acquisition_cameras, build_oracle, default_phantom, generate_dataset, render_analytic, RenderMode};
use dsa_splat::raster::{reference, render_backward, render_with, Image, RenderSettings};
use dsa_splat::serve::{Client, Encoding, FrameRequest, Server, ServerConfig, ServerMessage};
use dsa_splat::synthetic::{frontal_camera, random_scene, SceneParams};
use dsa_splat::train::{train, TrainConfig, TrainOutcome};
use dsa_splat::Result;

/// Ablation runs are shortened so that twelve of them fit the time budget.
const ABLATION_ITERATIONS: u64 = 5000;
const ABLATION_INIT: usize = 20_000;
const ABLATION_VIEWS: usize = 10;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Result<Self> {
        Ok(Self { pass, detail: detail.into() })
    }
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Verdict>,
}

fn main() -> ExitCode {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let minutes = |m: u64| Duration::from_secs(60 * m);
    let criteria = [
        Criterion { id: 1, name: "gradient oracle", budget: minutes(2), run: gradient_oracle },
        Criterion { id: 2, name: "rasterizer equivalence", budget: minutes(1), run: rasterizer_equivalence },
        Criterion { id: 3, name: "determinism", budget: minutes(5), run: determinism },
        Criterion { id: 4, name: "oracle recovery", budget: minutes(15), run: oracle_recovery },
        Criterion { id: 5, name: "ablation directions", budget: minutes(45), run: ablation_directions },
        Criterion { id: 6, name: "pruning unit", budget: Duration::from_secs(1), run: pruning_unit },
        Criterion { id: 7, name: "loss and metric units", budget: Duration::from_secs(1), run: loss_units },
        Criterion { id: 8, name: "serving throughput", budget: minutes(2), run: throughput },
        Criterion { id: 9, name: "cross-mode phantom", budget: minutes(1), run: cross_mode },
    ];
    println!("acceptance on {} hardware threads", std::thread::available_parallelism().map_or(1, |n| n.get()));
    let (mut passed, mut ran, mut panicked) = (0, 0, false);
    for c in &criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&c.id)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => {
                panicked = true;
                (false, "panicked".to_owned())
            }
        };
        let in_budget = elapsed <= c.budget;
        let pass = ok && in_budget;
        passed += pass as u32;
        println!(
            "{} {} {}: {} [{:.1} s, budget {} s{}]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs(),
            if in_budget { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    if panicked || (strict && passed < ran) {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn weighted_loss(cloud: &GaussianCloud<f64>, cam: &Camera, t: f64, w: &Image<f64>) -> Result<f64> {
    let img = render_with(cloud, cam, t, RenderSettings::sequential())?;
    Ok(img.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
}

fn gradient_oracle() -> Result<Verdict> {
    const SCENES: u64 = 20;
    const H: f64 = 1e-6;
    let cam = frontal_camera(16, 16);
    let (mut checked, mut failures, mut worst) = (0usize, Vec::new(), 0.0f64);
    let mut groups_seen = [0usize; ParamGroup::ALL.len()];
    for seed in 0..SCENES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let params = SceneParams { count: rng.gen_range(1..=20), ..SceneParams::default() };
        let cloud = random_scene::<f64>(seed, &params);
        let t = rng.gen_range(0.02..0.98);
        let w = Image::from_fn(16, 16, |_, _| rng.gen_range(-1.0..1.0));
        let grads = render_backward(&cloud, &cam, t, &w, RenderSettings::sequential())?;
        for (gi, group) in ParamGroup::ALL.into_iter().enumerate() {
            for j in 0..cloud.params().column(group).len() {
                let mut plus = cloud.clone();
                plus.params_mut().column_mut(group)[j] += H;
                let mut minus = cloud.clone();
                minus.params_mut().column_mut(group)[j] -= H;
                let fd = (weighted_loss(&plus, &cam, t, &w)? - weighted_loss(&minus, &cam, t, &w)?) / (2.0 * H);
                let an = grads.params.column(group)[j];
                if an.abs() < 1e-8 && fd.abs() < 1e-8 {
                    continue;
                }
                let rel = (an - fd).abs() / an.abs().max(fd.abs());
                worst = worst.max(rel);
                checked += 1;
                groups_seen[gi] += 1;
                if rel >= 1e-3 {
                    failures.push(format!("scene {seed} {group:?}[{j}] analytic {an:e} fd {fd:e}"));
                }
            }
        }
    }
    let all_groups = groups_seen.iter().all(|&n| n > 0);
    let mut detail = format!("{SCENES} scenes, {checked} elements, max rel err {worst:.2e}");
    if !all_groups {
        detail.push_str(&format!(", some group never checked {groups_seen:?}"));
    }
    if let Some(first) = failures.first() {
        detail.push_str(&format!(", {} over 1e-3 (first: {first})", failures.len()));
    }
    Verdict::new(failures.is_empty() && all_groups, detail)
}

fn rasterizer_equivalence() -> Result<Verdict> {
    let cam = frontal_camera(64, 64);
    let mut mismatched = Vec::new();
    let mut total = 0;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let params = SceneParams {
            count: rng.gen_range(1..=200),
            spread: 1.2,
            table_amp: 0.3,
            ..SceneParams::default()
        };
        let cloud = random_scene::<f32>(seed, &params);
        total += cloud.len();
        let t: f32 = rng.gen_range(0.0..=1.0);
        let tiled = render_with(&cloud, &cam, t, RenderSettings::sequential())?;
        let naive = reference::render_naive(&cloud, &cam, t)?;
        if !tiled.data().iter().zip(naive.data()).all(|(a, b)| a.to_bits() == b.to_bits()) {
            mismatched.push(seed);
        }
    }
    Verdict::new(
        mismatched.is_empty(),
        format!("50 scenes ({total} Gaussians) at 64x64, {} not bit-identical {mismatched:?}", mismatched.len()),
    )
}

fn determinism() -> Result<Verdict> {
    let spec = default_phantom(0);
    let data = generate_dataset(&spec, RenderMode::Oracle, Exec::Sequential)?;
    let cfg = TrainConfig { total_iterations: 2000, sequential: true, seed: 7, ..TrainConfig::default() };
    let a = checkpoint_hash(&train(&data, &cfg, &mut ())?.cloud);
    let b = checkpoint_hash(&train(&data, &cfg, &mut ())?.cloud);

    let oracle: GaussianCloud<f32> = build_oracle(&spec, spec.acquisition.table_len)?;
    let (cam, _) = acquisition_cameras(&spec)?[7].clone();
    let cam = cam.with_size(256, 256);
    let baseline = render_with(&oracle, &cam, 0.37, RenderSettings::sequential())?;
    let mut differing = Vec::new();
    for threads in [1, 2, 3, 8] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
        let img = pool.install(|| render_with(&oracle, &cam, 0.37, RenderSettings { exec: Exec::Parallel, ..RenderSettings::default() }))?;
        if img.data().iter().zip(baseline.data()).any(|(x, y)| x.to_bits() != y.to_bits()) {
            differing.push(threads);
        }
    }
    Verdict::new(
        a == b && differing.is_empty(),
        format!(
            "2000-iteration hashes {} ({}..), renders at 1/2/3/8 threads {}",
            if a == b { "equal" } else { "differ" },
            &a[..12],
            if differing.is_empty() { "bit-identical".to_owned() } else { format!("differ at {differing:?}") }
        ),
    )
}

fn test_scores(out: &TrainOutcome) -> (f64, f64) {
    out.final_eval(Split::Test).unwrap_or((f64::NAN, f64::NAN))
}

fn oracle_recovery() -> Result<Verdict> {
    let spec = default_phantom(0);
    let data = generate_dataset(&spec, RenderMode::Oracle, Exec::Parallel)?;
    let cfg = TrainConfig { total_iterations: 15_000, ..TrainConfig::default() };
    let out = train(&data, &cfg, &mut ())?;
    let (p, s) = test_scores(&out);
    Verdict::new(
        p >= 30.0 && s >= 0.93,
        format!(
            "{} train / {} test views, held-out PSNR {p:.2} dB (>= 30), SSIM {s:.4} (>= 0.93), {} Gaussians",
            data.train().len(),
            data.test().len(),
            out.cloud.len()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_directions() -> Result<Verdict> {
    let spec = default_phantom(0);
    let data = generate_dataset(&spec, RenderMode::Oracle, Exec::Parallel)?.with_train_views(ABLATION_VIEWS)?;
    let base = TrainConfig { total_iterations: ABLATION_ITERATIONS, init_count: ABLATION_INIT, ..TrainConfig::default() };
    let variants: [(&str, TrainConfig); 4] = [
        ("full", base.clone()),
        ("no table", TrainConfig { disable_table: true, ..base.clone() }),
        ("no smooth", TrainConfig { disable_smooth: true, ..base.clone() }),
        ("no random prune", TrainConfig { disable_random_prune: true, ..base.clone() }),
    ];
    let mut psnrs = Vec::new();
    let mut counts = Vec::new();
    for (_, cfg) in &variants {
        let (mut p, mut n) = (Vec::new(), Vec::new());
        for seed in ABLATION_SEEDS {
            let out = train(&data, &TrainConfig { seed, ..cfg.clone() }, &mut ())?;
            p.push(test_scores(&out).0);
            n.push(out.cloud.len() as f64);
        }
        psnrs.push(median(p));
        counts.push(median(n));
    }
    let a = psnrs[0] > psnrs[1];
    let b = psnrs[0] >= psnrs[2];
    let ratio = counts[3] / counts[0];
    let c = ratio >= 2.0 && psnrs[0] >= psnrs[3] - 0.3;
    let summary: Vec<String> = variants
        .iter()
        .zip(psnrs.iter().zip(&counts))
        .map(|((name, _), (p, n))| format!("{name} {p:.2} dB/{n:.0}"))
        .collect();
    Verdict::new(
        a && b && c,
        format!(
            "medians: {}; (a) {} (b) {} (c) {} count ratio {ratio:.2} (>= 2), PSNR delta {:+.2} dB (>= -0.3)",
            summary.join(", "),
            pass_word(a),
            pass_word(b),
            pass_word(c),
            psnrs[0] - psnrs[3]
        ),
    )
}

fn pass_word(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAILED"
    }
}

fn pruning_unit() -> Result<Verdict> {
    let gaussian = |alpha: f64| {
        let mut g = Gaussian::<f32>::isotropic([0.0, 0.0, 3.0], 0.1, 0.5, 0.5, 5);
        g.opacity_logit = logit(alpha) as f32;
        g.offset_table = vec![-0.01, 0.0, 0.005, 0.002, -0.003];
        g
    };
    let mut cloud = GaussianCloud::from_gaussians(5, &[gaussian(0.01), gaussian(0.5)]);
    let before: Vec<f32> = (0..2).map(|i| cloud.params().opacity_logit[i]).collect();
    let cfg = DensityConfig::default();
    // A density step: densification (no gradient statistics, so a no-op)
    // followed by opacity pruning.
    densify(&mut cloud, &cfg, 1.0, 0)?;
    let removed = prune_opacity(&mut cloud, &cfg);
    let survivor_is_second = cloud.len() == 1 && cloud.params().opacity_logit[0] == before[1];
    Verdict::new(
        removed == 1 && survivor_is_second && cfg.opacity_threshold == 0.018,
        format!("U = {}, removed {removed}, alpha' = 0.5 retained: {survivor_is_second}", cfg.opacity_threshold),
    )
}

fn loss_units() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = Image::<f64>::from_fn(32, 24, |_, _| rng.gen_range(0.0..1.0));
    let s = ssim_value(&img, &img)?;
    let ssim_ok = (s - 1.0).abs() <= 1e-9;
    let p = psnr(&img, &img)?;
    let psnr_ok = p == PSNR_CAP;

    let mut g = Gaussian::<f64>::isotropic([0.0; 3], 0.1, 0.5, 0.5, 5);
    g.offset_table = vec![0.0, 0.2, 0.4, 0.2, 0.0];
    let cloud = GaussianCloud::from_gaussians(5, &[g]);
    let (smooth, _) = smooth_loss(cloud.params());
    let smooth_ok = smooth == 0.8;

    let mut knots_ok = true;
    for len in [5usize, 10] {
        let t64: Vec<f64> = (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let t32: Vec<f32> = t64.iter().map(|&v| v as f32).collect();
        let a = rng.gen_range(-3.0..3.0);
        for k in 0..len {
            knots_ok &= interp_table(&t64, knot_time::<f64>(k, len))? == t64[k];
            knots_ok &= interp_table(&t32, knot_time::<f32>(k, len))? == t32[k];
            let expect = (dsa_splat::math::sigmoid(a) + t64[k]).clamp(0.0, 1.0);
            knots_ok &= opacity_at(a, &t64, knot_time::<f64>(k, len))? == expect;
        }
    }
    Verdict::new(
        ssim_ok && psnr_ok && smooth_ok && knots_ok,
        format!("ssim(I,I) = {s:.12}, psnr(I,I) = {p}, smooth = {smooth}, knot-exact L in {{5, 10}}: {knots_ok}"),
    )
}

/// Frames per second over the raw-bytes protocol, one request in flight.
fn throughput() -> Result<Verdict> {
    const SIZE: u32 = 512;
    const MEASURE: Duration = Duration::from_secs(10);
    let mut spec = default_phantom(0);
    let base = build_oracle::<f32>(&spec, 5)?.len();
    spec.density *= 49_000.0 / base as f64;
    let cloud: GaussianCloud<f32> = build_oracle(&spec, spec.acquisition.table_len)?;
    let count = cloud.len();
    let addr = Server::bind("127.0.0.1:0", cloud, ServerConfig::default())?.spawn()?;
    let mut client = Client::connect(addr)?;
    let orbit = |i: u64| Orbit {
        azimuth_deg: (i * 7 % 360) as f64,
        elevation_deg: 15.0,
        radius: spec.acquisition.radius,
        target: spec.center(),
        fov_y_deg: spec.acquisition.fov_y_deg,
    };
    let mut frame = |i: u64| -> Result<f32> {
        let req = FrameRequest::orbit(i, orbit(i), (i % 101) as f64 / 100.0, SIZE, SIZE).with_encoding(Encoding::Raw);
        match client.request(&req)? {
            ServerMessage::Frame(f) if f.id == i && f.payload.len() == (SIZE * SIZE) as usize => Ok(f.render_ms),
            other => Err(dsa_splat::Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    };
    for i in 0..3 {
        frame(i)?;
    }
    let start = Instant::now();
    let (mut frames, mut render_ms) = (0u64, 0.0f64);
    while start.elapsed() < MEASURE {
        render_ms += frame(100 + frames)? as f64;
        frames += 1;
    }
    let fps = frames as f64 / start.elapsed().as_secs_f64();
    client.close();
    Verdict::new(
        count <= 50_000 && fps >= 30.0,
        format!(
            "{count} Gaussians at {SIZE}x{SIZE}: {fps:.1} FPS round trip (>= 30), mean render {:.1} ms",
            render_ms / frames.max(1) as f64
        ),
    )
}

fn cross_mode() -> Result<Verdict> {
    let spec = default_phantom(0);
    let oracle: GaussianCloud<f32> = build_oracle(&spec, spec.acquisition.table_len)?;
    let mut scores = Vec::new();
    for (cam, t) in acquisition_cameras(&spec)? {
        let a = render_with(&oracle, &cam, t as f32, RenderSettings::default())?;
        let b: Image<f32> = render_analytic(&spec, &cam, t)?.cast();
        scores.push(psnr(&a, &b)?);
    }
    let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    Verdict::new(
        min >= 25.0,
        format!("{} views, min {min:.2} dB (>= 25), mean {mean:.2} dB", scores.len()),
    )
}
