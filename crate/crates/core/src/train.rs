//! The optimization loop: random initialization, one frame per iteration,
//! Adam updates, scheduled density control, evaluation and checkpoints.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::text_hash;
use crate::dataset::{Dataset, Frame, Split};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::loss::{psnr, ssim_value, total_loss, LossTerms, LossWeights};
use crate::math::logit;
use crate::model::{Gaussian, GaussianCloud};
use crate::optim::{accumulate_densify_stats, adam_step, densify, prune_opacity, prune_random, DensityConfig, OptimizerConfig};
use crate::raster::{backward, forward, render_with, RenderSettings};

/// Initial opacity of randomly initialized Gaussians.
pub const INIT_OPACITY: f64 = 0.1;
/// Initial intensity of randomly initialized Gaussians.
pub const INIT_INTENSITY: f64 = 0.5;
const NN_SUBSAMPLE: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub init_count: usize,
    /// Offset table length `L`.
    pub table_len: usize,
    pub seed: u64,
    pub eval_interval: u64,
    pub checkpoint_interval: u64,
    /// Iterations per averaged training-loss log record.
    pub log_interval: u64,
    pub disable_table: bool,
    pub disable_random_prune: bool,
    pub disable_smooth: bool,
    pub disable_ssim: bool,
    /// Run every inner loop on the calling thread.
    pub sequential: bool,
    /// Initialization box `[min, max]`; falls back to the dataset's bounds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<[[f64; 3]; 2]>,
    pub loss: LossWeights,
    pub optimizer: OptimizerConfig,
    pub density: DensityConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iterations: 30_000,
            init_count: 100_000,
            table_len: 5,
            seed: 0,
            eval_interval: 1000,
            checkpoint_interval: 5000,
            log_interval: 100,
            disable_table: false,
            disable_random_prune: false,
            disable_smooth: false,
            disable_ssim: false,
            sequential: false,
            bounds: None,
            loss: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            density: DensityConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.init_count == 0 {
            return Err(Error::InvalidConfig("init_count must be at least 1".into()));
        }
        if self.table_len == 0 {
            return Err(Error::EmptyTable);
        }
        if self.eval_interval == 0 || self.checkpoint_interval == 0 || self.log_interval == 0 {
            return Err(Error::InvalidConfig("eval, checkpoint and log intervals must be positive".into()));
        }
        if let Some(b) = self.bounds {
            check_bounds(&b)?;
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.density.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> Result<String> {
        Ok(text_hash(&self.to_toml()?))
    }

    /// Applies `key=value` overrides, where `key` is a dotted path such as
    /// `density.grad_threshold` and `value` is a TOML literal (bare words are
    /// read as strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override {item:?} is not key=value")))?;
            let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
                Ok(mut t) => t.remove("v").unwrap(),
                Err(_) => toml::Value::String(raw.trim().to_owned()),
            };
            let mut node = &mut root;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, part) in parts.iter().enumerate() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::InvalidConfig(format!("{key}: {part} is not a table")))?;
                if i + 1 == parts.len() {
                    table.insert((*part).to_owned(), value.clone());
                    break;
                }
                node = table
                    .entry((*part).to_owned())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            }
        }
        root.try_into().map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))
    }

    /// Loss weights after applying the ablation toggles.
    pub fn effective_loss(&self) -> LossWeights {
        LossWeights {
            ssim: if self.disable_ssim { 0.0 } else { self.loss.ssim },
            smooth: if self.disable_smooth { 0.0 } else { self.loss.smooth },
        }
    }

    pub fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }
}

fn check_bounds(b: &[[f64; 3]; 2]) -> Result<()> {
    if (0..3).all(|k| b[0][k].is_finite() && b[1][k].is_finite() && b[0][k] < b[1][k]) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("degenerate bounds {b:?}")))
    }
}

/// Half the diagonal of a box.
pub fn scene_extent(bounds: &[[f64; 3]; 2]) -> f64 {
    0.5 * (0..3).map(|k| (bounds[1][k] - bounds[0][k]).powi(2)).sum::<f64>().sqrt()
}

/// Independent seed for a named random stream.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 4);
    rng.gen()
}

/// Uniform random positions in `bounds`, identity rotations, isotropic
/// scales equal to the mean nearest-neighbour distance over a subsample,
/// opacity 0.1, intensity 0.5 and all-zero offset tables.
pub fn init_random_cloud(count: usize, bounds: [[f64; 3]; 2], table_len: usize, seed: u64) -> Result<GaussianCloud<f32>> {
    if count == 0 {
        return Err(Error::InvalidConfig("init_count must be at least 1".into()));
    }
    if table_len == 0 {
        return Err(Error::EmptyTable);
    }
    check_bounds(&bounds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions: Vec<[f64; 3]> = (0..count)
        .map(|_| [0, 1, 2].map(|k| rng.gen_range(bounds[0][k]..bounds[1][k])))
        .collect();
    let scale = if count == 1 {
        0.01 * scene_extent(&bounds)
    } else {
        let m = count.min(NN_SUBSAMPLE);
        let total: f64 = (0..m)
            .map(|i| {
                let p = positions[i];
                positions
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>())
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .sum();
        (total / m as f64).max(1e-7)
    };
    let template = Gaussian::<f32>::isotropic([0.0; 3], scale, INIT_OPACITY, INIT_INTENSITY, table_len);
    let opacity_logit = logit(INIT_OPACITY) as f32;
    let mut cloud = GaussianCloud::new(table_len);
    for p in positions {
        cloud.push(Gaussian {
            position: p.map(|v| v as f32),
            opacity_logit,
            ..template.clone()
        });
    }
    Ok(cloud)
}

/// Density-control event kinds in the training log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityEvent {
    Densify,
    PruneOpacity,
    PruneRandom,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    /// Loss terms averaged over the last `log_interval` iterations.
    Train {
        iteration: u64,
        #[serde(flatten)]
        loss: LossTerms,
        count: usize,
        elapsed_s: f64,
    },
    /// Scores of the current cloud on a whole split.
    Eval {
        iteration: u64,
        split: Split,
        psnr: f64,
        ssim: f64,
        /// Mean weighted objective over the split.
        loss: f64,
        count: usize,
    },
    Density {
        iteration: u64,
        event: DensityEvent,
        before: usize,
        after: usize,
    },
}

impl LogRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn iteration(&self) -> u64 {
        match self {
            LogRecord::Train { iteration, .. } | LogRecord::Eval { iteration, .. } | LogRecord::Density { iteration, .. } => {
                *iteration
            }
        }
    }
}

/// Parses a line-delimited log, skipping blank lines.
pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Hooks invoked by [`train`].
pub trait TrainObserver {
    fn record(&mut self, _record: &LogRecord) -> Result<()> {
        Ok(())
    }

    fn checkpoint(&mut self, _iteration: u64, _cloud: &GaussianCloud<f32>) -> Result<()> {
        Ok(())
    }

    /// Called with the last good cloud when an iteration fails.
    fn aborted(&mut self, _iteration: u64, _cloud: &GaussianCloud<f32>, _error: &Error) {}
}

impl TrainObserver for () {}

#[derive(Clone, Debug)]
pub struct FrameScore {
    pub view: usize,
    pub t: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub frames: Vec<FrameScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Renders each frame at its camera and time and scores it against the
/// ground truth.
pub fn evaluate(cloud: &GaussianCloud<f32>, frames: &[&Frame], exec: Exec) -> Result<Evaluation> {
    if frames.is_empty() {
        return Err(Error::Dataset("nothing to evaluate: no frames".into()));
    }
    let settings = RenderSettings::sequential();
    let scores = exec.map(frames.len(), |i| -> Result<FrameScore> {
        let f = frames[i];
        let img = render_with(cloud, &f.camera, f.t as f32, settings)?;
        let (a, b) = (img.cast::<f64>(), f.image.cast::<f64>());
        Ok(FrameScore {
            view: f.view,
            t: f.t,
            psnr: psnr(&a, &b)?,
            ssim: ssim_value(&a, &b)?,
        })
    });
    let frames: Vec<FrameScore> = scores.into_iter().collect::<Result<_>>()?;
    let n = frames.len() as f64;
    Ok(Evaluation {
        mean_psnr: frames.iter().map(|s| s.psnr).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|s| s.ssim).sum::<f64>() / n,
        frames,
    })
}

/// Mean weighted objective of `cloud` over `frames`.
pub fn mean_loss(cloud: &GaussianCloud<f32>, frames: &[&Frame], weights: LossWeights, exec: Exec) -> Result<f64> {
    if frames.is_empty() {
        return Ok(0.0);
    }
    let settings = RenderSettings::sequential();
    let values = exec.map(frames.len(), |i| -> Result<f64> {
        let f = frames[i];
        let img = render_with(cloud, &f.camera, f.t as f32, settings)?;
        Ok(total_loss(&img, &f.image, cloud.params(), weights)?.terms.total)
    });
    let sum: f64 = values.into_iter().collect::<Result<Vec<_>>>()?.iter().sum();
    Ok(sum / frames.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub cloud: GaussianCloud<f32>,
    pub log: Vec<LogRecord>,
}

impl TrainOutcome {
    /// Last evaluation record for `split`.
    pub fn final_eval(&self, split: Split) -> Option<(f64, f64)> {
        self.log.iter().rev().find_map(|r| match r {
            LogRecord::Eval { split: s, psnr, ssim, .. } if *s == split => Some((*psnr, *ssim)),
            _ => None,
        })
    }
}

/// Trains from a random initialization inside the configured (or dataset)
/// bounds.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    cfg.validate()?;
    let bounds = cfg
        .bounds
        .or(dataset.bounds)
        .ok_or_else(|| Error::InvalidConfig("no scene bounds in the config or the dataset".into()))?;
    let cloud = init_random_cloud(cfg.init_count, bounds, cfg.table_len, derive_seed(cfg.seed, 0, 0))?;
    train_from(cloud, dataset, cfg, observer)
}

/// Runs the optimization loop starting from `cloud`.
pub fn train_from(
    mut cloud: GaussianCloud<f32>,
    dataset: &Dataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dataset.validate()?;
    if cloud.table_len() != cfg.table_len {
        return Err(Error::InvalidConfig(format!(
            "cloud has L = {}, config asks for {}",
            cloud.table_len(),
            cfg.table_len
        )));
    }
    let train_frames = dataset.train();
    if train_frames.is_empty() {
        return Err(Error::Dataset("training split is empty".into()));
    }
    let test_frames = dataset.test();
    let bounds = cfg.bounds.or(dataset.bounds);
    let extent = bounds.map(|b| scene_extent(&b)).unwrap_or(1.0);
    let exec = cfg.exec();
    let settings = RenderSettings { exec, ..RenderSettings::default() };
    let weights = cfg.effective_loss();
    let mut opt = cfg.optimizer.clone();
    if opt.lr_decay_iterations == 0 {
        opt.lr_decay_iterations = cfg.total_iterations;
    }
    let density = &cfg.density;
    let start = Instant::now();
    let mut log = Vec::new();
    let mut emit = |rec: LogRecord, observer: &mut dyn TrainObserver| -> Result<()> {
        observer.record(&rec)?;
        log.push(rec);
        Ok(())
    };

    let eval_all = |cloud: &GaussianCloud<f32>, iteration: u64, observer: &mut dyn TrainObserver, emit: &mut dyn FnMut(LogRecord, &mut dyn TrainObserver) -> Result<()>| -> Result<()> {
        for (split, frames) in [(Split::Train, &train_frames), (Split::Test, &test_frames)] {
            if frames.is_empty() {
                continue;
            }
            let e = evaluate(cloud, frames, exec)?;
            let loss = mean_loss(cloud, frames, weights, exec)?;
            emit(
                LogRecord::Eval {
                    iteration,
                    split,
                    psnr: e.mean_psnr,
                    ssim: e.mean_ssim,
                    loss,
                    count: cloud.len(),
                },
                observer,
            )?;
        }
        Ok(())
    };

    eval_all(&cloud, 0, observer, &mut emit)?;
    let mut order: Vec<usize> = Vec::new();
    let mut window = LossTerms::default();
    let mut window_len = 0u64;

    for iteration in 1..=cfg.total_iterations {
        let slot = ((iteration - 1) % train_frames.len() as u64) as usize;
        if slot == 0 {
            let epoch = (iteration - 1) / train_frames.len() as u64;
            order = (0..train_frames.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1, epoch)));
        }
        let frame = train_frames[order[slot]];
        let step = (|| -> Result<()> {
            let fwd = forward(&cloud, &frame.camera, frame.t as f32, settings)?;
            let loss = total_loss(&fwd.image, &frame.image, cloud.params(), weights)?;
            let mut grads = backward(&cloud, &frame.camera, &fwd, &loss.d_image, settings)?;
            if cfg.disable_table {
                grads.params.offset_table.iter_mut().for_each(|g| *g = 0.0);
            } else {
                for (g, d) in grads.params.offset_table.iter_mut().zip(&loss.d_table) {
                    *g += *d;
                }
            }
            adam_step(&mut cloud, &grads.params, &opt, iteration - 1, extent)?;
            if density.in_window(iteration) {
                let ndc = [0.5 * frame.camera.width as f64, 0.5 * frame.camera.height as f64];
                accumulate_densify_stats(&mut cloud, &grads, ndc);
            }
            window.total += loss.terms.total;
            window.recon += loss.terms.recon;
            window.ssim += loss.terms.ssim;
            window.smooth += loss.terms.smooth;
            window_len += 1;
            Ok(())
        })();
        if let Err(e) = step {
            observer.aborted(iteration, &cloud, &e);
            return Err(e);
        }

        if iteration % cfg.log_interval == 0 || iteration == cfg.total_iterations {
            let n = window_len.max(1) as f64;
            emit(
                LogRecord::Train {
                    iteration,
                    loss: LossTerms {
                        total: window.total / n,
                        recon: window.recon / n,
                        ssim: window.ssim / n,
                        smooth: window.smooth / n,
                    },
                    count: cloud.len(),
                    elapsed_s: start.elapsed().as_secs_f64(),
                },
                observer,
            )?;
            window = LossTerms::default();
            window_len = 0;
        }
        if iteration % cfg.eval_interval == 0 || iteration == cfg.total_iterations {
            eval_all(&cloud, iteration, observer, &mut emit)?;
        }
        if iteration % cfg.checkpoint_interval == 0 {
            observer.checkpoint(iteration, &cloud)?;
        }
        // Density control runs after this iteration's log, eval and checkpoint,
        // and never on the last iteration, whose cloud is the result.
        if iteration == cfg.total_iterations {
            continue;
        }
        if density.densify_due(iteration) {
            let before = cloud.len();
            densify(&mut cloud, density, extent, derive_seed(cfg.seed, 2, iteration))?;
            let mid = cloud.len();
            emit(LogRecord::Density { iteration, event: DensityEvent::Densify, before, after: mid }, observer)?;
            prune_opacity(&mut cloud, density);
            emit(
                LogRecord::Density { iteration, event: DensityEvent::PruneOpacity, before: mid, after: cloud.len() },
                observer,
            )?;
        }
        if !cfg.disable_random_prune && density.random_prune_due(iteration) {
            let before = cloud.len();
            prune_random(&mut cloud, density.random_prune_fraction, derive_seed(cfg.seed, 3, iteration))?;
            emit(
                LogRecord::Density { iteration, event: DensityEvent::PruneRandom, before, after: cloud.len() },
                observer,
            )?;
        }
    }
    Ok(TrainOutcome { cloud, log })
}
