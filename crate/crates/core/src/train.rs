//! Training configuration and the minibatch training loop.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Frame, FrameTriplet, Split};
use crate::error::{Error, Result};
use crate::loss::{mse_encoding, mse_pixel, psnr_from_mse, to_paper_scale};
use crate::nn::{build_interpolator, LayerSpec, Mode, Network, NetworkSpec, FRAME_PAIR_CHANNELS};
use crate::optim::{Hyper, OptimState};
use crate::tensor::{Rng, Tensor};

pub const CURVE_FILE: &str = "curve.csv";
pub const CURVE_HEADER: &str = "epoch,split,mse_internal,mse_paper,psnr_db,seconds";
pub const FINAL_CHECKPOINT: &str = "final.fwck";

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;
const ENCODER_STREAM: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Pixel,
    Encoding,
}

/// Every training hyperparameter. Parsed from TOML; missing keys take the
/// defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    /// SGD only.
    pub momentum: f64,
    pub drop_prob: f64,
    pub leaky_slope: f64,
    pub embed_dim: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub val_fraction: f64,
    /// Progress callback period in epochs; 0 disables it.
    pub log_every: usize,
    /// Periodic checkpoint period in epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub max_grad_norm: Option<f64>,
    /// Record real elapsed seconds in the curve. Off by default, which
    /// writes 0 and keeps the curve byte-identical across runs.
    pub log_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            drop_prob: 0.1,
            leaky_slope: 0.1,
            embed_dim: 32,
            loss: LossKind::Pixel,
            seed: 0,
            val_fraction: 0.1,
            log_every: 1,
            checkpoint_every: 50,
            max_grad_norm: None,
            log_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} must lie in (0, 1)", self.val_fraction));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} must lie in [0, 1)", self.momentum));
        }
        if let Some(c) = self.max_grad_norm {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("max_grad_norm {c} must be positive"));
            }
        }
        self.network_spec().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TrainConfig::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        build_interpolator(FRAME_PAIR_CHANNELS, self.embed_dim, self.leaky_slope, self.drop_prob)
    }

    pub fn hyper(&self) -> Hyper {
        match self.optimizer {
            OptimizerKind::Adam => Hyper::adam(self.lr),
            OptimizerKind::Sgd => Hyper::sgd(self.lr, self.momentum),
        }
    }
}

/// Frozen random encoder used by the encoding loss: a pixel embedding and a
/// 3x3 conv, each followed by LeakyReLU.
pub fn loss_encoder(config: &TrainConfig) -> Result<Network<f32>> {
    let e = config.embed_dim;
    let slope = config.leaky_slope;
    let spec = NetworkSpec::new(
        3,
        vec![
            LayerSpec::conv(3, e, 1),
            LayerSpec::LeakyRelu { slope },
            LayerSpec::conv(e, e, 3),
            LayerSpec::LeakyRelu { slope },
        ],
    )?;
    Network::init(spec, &Rng::with_stream(config.seed, ENCODER_STREAM))
}

/// `(1, 6, h, w)`: `a` in channels 0-2, `b` in channels 3-5.
pub fn model_input(a: &Frame, b: &Frame) -> Result<Tensor<f32>> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("frames differ in size: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Tensor::concat_channels(&[a.pixels(), b.pixels()])
}

pub fn make_model_input(triplet: &FrameTriplet) -> Result<Tensor<f32>> {
    model_input(&triplet.frame_a, &triplet.frame_b)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub epoch: usize,
    pub split: Split,
    pub mse_internal: f64,
    pub mse_paper: f64,
    pub psnr_db: f64,
    pub seconds: f64,
}

impl CurveRow {
    fn new(epoch: usize, split: Split, mse_internal: f64, seconds: f64) -> Self {
        CurveRow {
            epoch,
            split,
            mse_internal,
            mse_paper: to_paper_scale(mse_internal),
            psnr_db: psnr_from_mse(mse_internal),
            seconds,
        }
    }
}

impl fmt::Display for CurveRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let split = match self.split {
            Split::Train => "train",
            Split::Val => "val",
        };
        write!(f, "{},{split},{},{},{},{}", self.epoch, self.mse_internal, self.mse_paper, self.psnr_db, self.seconds)
    }
}

/// One train and one val row per epoch, epochs strictly increasing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LearningCurve {
    pub rows: Vec<CurveRow>,
}

impl LearningCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CURVE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(CURVE_HEADER) {
            return Err(Error::Format("curve CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let bad = || Error::Format(format!("curve CSV line {}: {line:?}", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            rows.push(CurveRow {
                epoch: f[0].parse().map_err(|_| bad())?,
                split: match f[1] {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    _ => return Err(bad()),
                },
                mse_internal: num(f[2])?,
                mse_paper: num(f[3])?,
                psnr_db: num(f[4])?,
                seconds: num(f[5])?,
            });
        }
        Ok(LearningCurve { rows })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &CurveRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&CurveRow> {
        self.split(split).last()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: CurveRow,
    pub val: CurveRow,
}

/// Model, optimizer and rng state of a run in progress.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    network: Network<f32>,
    optimizer: OptimState,
    encoder: Option<Network<f32>>,
    shuffle_rng: Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let network = Network::init(config.network_spec()?, &Rng::with_stream(config.seed, INIT_STREAM))?;
        let mut optimizer = OptimState::new(config.hyper());
        optimizer.max_grad_norm = config.max_grad_norm;
        Ok(Trainer {
            encoder: Self::encoder_for(&config)?,
            shuffle_rng: Rng::with_stream(config.seed, SHUFFLE_STREAM),
            network,
            optimizer,
            config,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.config.validate()?;
        ck.network.spec().check_interpolator()?;
        Ok(Trainer {
            encoder: Self::encoder_for(&ck.config)?,
            shuffle_rng: Rng::from_state(ck.config.seed, SHUFFLE_STREAM, ck.rng_state),
            network: ck.network,
            optimizer: ck.optimizer,
            epoch: ck.epoch as usize,
            config: ck.config,
        })
    }

    fn encoder_for(config: &TrainConfig) -> Result<Option<Network<f32>>> {
        Ok(match config.loss {
            LossKind::Pixel => None,
            LossKind::Encoding => Some(loss_encoder(config)?),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn network(&self) -> &Network<f32> {
        &self.network
    }

    /// Completed epochs.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            network: self.network.clone(),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch as u64,
            rng_state: self.shuffle_rng.counter(),
            config: self.config.clone(),
        }
    }

    fn step(&mut self, dataset: &Dataset, batch: &[usize], dropout_rng: &Rng) -> Result<f64> {
        let triplets: Vec<&FrameTriplet> = batch.iter().map(|&i| &dataset.triplets()[i]).collect();
        let inputs = triplets.iter().map(|t| make_model_input(t)).collect::<Result<Vec<_>>>()?;
        let input = Tensor::stack(&inputs.iter().collect::<Vec<_>>())?;
        let target = Tensor::stack(&triplets.iter().map(|t| t.frame_mid.pixels()).collect::<Vec<_>>())?;

        let (pred, trace) = self.network.forward(&input, Mode::Train, dropout_rng)?;
        let loss = match &self.encoder {
            None => mse_pixel(&pred, &target)?,
            Some(enc) => mse_encoding(&pred, &target, enc)?,
        };
        if !loss.value.is_finite() || !loss.grad.all_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let back = self.network.backward(&trace, &loss.grad)?;
        self.optimizer.step_network(&mut self.network, &back.params)?;
        Ok(loss.value)
    }

    /// One pass over `train` in shuffled minibatches, then an eval-mode pass
    /// over `val`. Returns the mean training objective and the mean
    /// validation pixel MSE.
    pub fn run_epoch(&mut self, dataset: &Dataset, train: &[usize], val: &[usize]) -> Result<(f64, f64)> {
        let epoch = self.epoch + 1;
        let mut order = train.to_vec();
        self.shuffle_rng.shuffle(&mut order);
        let dropout_rng = Rng::with_stream(self.config.seed, DROPOUT_STREAM).split(epoch as u64);

        let mut total = 0.0;
        for (b, batch) in order.chunks(self.config.batch_size).enumerate() {
            let value = self.step(dataset, batch, &dropout_rng.split(b as u64)).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            total += value * batch.len() as f64;
        }
        let train_loss = total / train.len() as f64;

        let mut val_total = 0.0;
        for &i in val {
            let t = &dataset.triplets()[i];
            let pred = self.network.predict(&make_model_input(t)?)?;
            val_total += mse_pixel(&pred, t.frame_mid.pixels())?.value;
        }
        self.epoch = epoch;
        Ok((train_loss, val_total / val.len() as f64))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub curve: LearningCurve,
    pub checkpoint: Checkpoint,
}

pub fn checkpoint_path(out_dir: &Path, epoch: usize) -> PathBuf {
    out_dir.join(format!("checkpoint_{epoch:06}.fwck"))
}

/// Trains from scratch. Writes `curve.csv` (rewritten after every epoch),
/// periodic `checkpoint_NNNNNN.fwck` files and `final.fwck` into `out_dir`.
/// `progress` is called every `log_every` epochs and after the last one.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    out_dir: impl AsRef<Path>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    run(Trainer::new(config.clone())?, LearningCurve::default(), dataset, out_dir.as_ref(), progress)
}

/// Continues a run from `checkpoint` up to `epochs` total (the snapshot's
/// own count when `None`). Rows of an existing `curve.csv` in `out_dir` up
/// to the checkpoint epoch are kept.
pub fn resume(
    checkpoint: Checkpoint,
    epochs: Option<usize>,
    dataset: &Dataset,
    out_dir: impl AsRef<Path>,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let out_dir = out_dir.as_ref();
    let mut trainer = Trainer::from_checkpoint(checkpoint)?;
    if let Some(e) = epochs {
        trainer.config.epochs = e;
        trainer.config.validate()?;
    }
    let done = trainer.epoch();
    let mut curve = match fs::read_to_string(out_dir.join(CURVE_FILE)) {
        Ok(text) => LearningCurve::from_csv(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => LearningCurve::default(),
        Err(e) => return Err(e.into()),
    };
    curve.rows.retain(|r| r.epoch <= done);
    run(trainer, curve, dataset, out_dir, progress)
}

fn run(
    mut trainer: Trainer,
    mut curve: LearningCurve,
    dataset: &Dataset,
    out_dir: &Path,
    progress: &mut dyn FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    let config = trainer.config.clone();
    trainer.network.spec().check_interpolator()?;
    fs::create_dir_all(out_dir)?;
    let (train_idx, val_idx) = dataset.split_indices(config.val_fraction);
    let start = Instant::now();

    while trainer.epoch() < config.epochs {
        let (train_loss, val_loss) = trainer.run_epoch(dataset, &train_idx, &val_idx)?;
        let epoch = trainer.epoch();
        let seconds = if config.log_wallclock { start.elapsed().as_secs_f64() } else { 0.0 };
        let stats = EpochStats {
            epoch,
            train: CurveRow::new(epoch, Split::Train, train_loss, seconds),
            val: CurveRow::new(epoch, Split::Val, val_loss, seconds),
        };
        curve.rows.push(stats.train);
        curve.rows.push(stats.val);
        fs::write(out_dir.join(CURVE_FILE), curve.to_csv())?;
        if config.checkpoint_every > 0 && epoch.is_multiple_of(config.checkpoint_every) {
            trainer.checkpoint().save(checkpoint_path(out_dir, epoch))?;
        }
        if (config.log_every > 0 && epoch.is_multiple_of(config.log_every)) || epoch == config.epochs {
            progress(&stats);
        }
    }
    let checkpoint = trainer.checkpoint();
    checkpoint.save(out_dir.join(FINAL_CHECKPOINT))?;
    Ok(TrainOutcome { curve, checkpoint })
}
