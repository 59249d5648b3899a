//! Alternating frozen-player adversarial training at ratio 1:k, plus the
//! B0/B1 baseline trainers.
//!
//! Every step runs the full forward pass (psi active) so each metrics
//! record carries a complete loss breakdown; the players differ only in
//! which objective is backpropagated and which component prefixes the
//! optimizer touches. M1 and its k following M2 steps consume k+1
//! distinct successive minibatches.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossTerms, LossWeights};
use crate::model::{
    is_m1_param, is_m2_param, noisy_transform, ModelGraph, ModelVariant,
};
use crate::params::AdamConfig;
use crate::rng;
use crate::tensor::Tensor;

/// Everything the training loop needs beyond the model itself.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub weights: LossWeights,
    /// M2 steps per M1 step.
    pub k: u32,
    pub epochs: u32,
    pub batch_size: usize,
    pub lr_m1: f32,
    pub lr_m2: f32,
    pub psi_rate: f32,
    pub seed: u64,
    /// Global gradient-norm cap applied to M1 updates (0 disables).
    pub clip_norm: f32,
    /// Treat the target embeddings of the disentanglement losses as
    /// constants during M1 updates, so the encoder must clean the
    /// disentangler inputs instead of chasing the targets away.
    pub detach_dis_targets: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: LossWeights::paper_defaults(),
            k: 5,
            epochs: 50,
            batch_size: 128,
            lr_m1: 1e-3,
            lr_m2: 1e-3,
            psi_rate: 0.5,
            seed: 0,
            clip_norm: 5.0,
            detach_dis_targets: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.psi_rate) {
            return Err(Error::Config(format!("psi_rate {} outside [0, 1)", self.psi_rate)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Player {
    M1,
    M2,
}

impl Player {
    pub fn name(&self) -> &'static str {
        match self {
            Player::M1 => "m1",
            Player::M2 => "m2",
        }
    }
}

/// One row of training telemetry.
#[derive(Clone, Debug)]
pub struct MetricsRecord {
    pub epoch: u32,
    pub step: u64,
    pub player: Player,
    pub losses: LossBreakdown,
    pub ms: f64,
}

/// Consumer of per-step metrics.
pub trait MetricsSink {
    fn record(&mut self, rec: &MetricsRecord);
}

/// Discards all records.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _rec: &MetricsRecord) {}
}

/// Collects records in memory (tests, sweeps).
#[derive(Default)]
pub struct VecSink(pub Vec<MetricsRecord>);

impl MetricsSink for VecSink {
    fn record(&mut self, rec: &MetricsRecord) {
        self.0.push(rec.clone());
    }
}

pub const METRICS_CSV_HEADER: &str = "epoch,step,player,l_pred,l_dec,l_dis1,l_dis2,j_m1,j_m2,ms";

/// Streams records as CSV rows.
pub struct CsvSink<W: Write> {
    out: W,
}

impl<W: Write> CsvSink<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "{METRICS_CSV_HEADER}")?;
        Ok(CsvSink { out })
    }
}

impl<W: Write> MetricsSink for CsvSink<W> {
    fn record(&mut self, rec: &MetricsRecord) {
        let l = &rec.losses;
        let _ = writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{:.3}",
            rec.epoch,
            rec.step,
            rec.player.name(),
            l.l_pred,
            l.l_dec,
            l.l_dis1,
            l.l_dis2,
            l.j_m1,
            l.j_m2,
            rec.ms
        );
    }
}

/// One minibatch of inputs and class labels.
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub y: Vec<u32>,
}

struct ForwardOutput {
    tape: Tape,
    terms: LossTerms,
    objectives: losses::Objectives,
    binding: crate::params::ParamBinding,
}

/// Full forward pass for the model's variant: prediction always, decoder
/// path (with psi) unless B0, disentanglers only for the full model.
fn forward_full(
    model: &ModelGraph,
    batch: &Batch,
    cfg: &TrainConfig,
    global_step: u64,
    detach_targets: bool,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let x = tape.leaf(batch.x.clone());
    let (e1, e2) = bound.encode(&mut tape, x)?;

    let pred_in = bound.prediction_input(&mut tape, e1, e2)?;
    let probs = bound.predict(&mut tape, pred_in)?;
    let lp = losses::l_pred(&mut tape, probs, &batch.y)?;

    let mut terms = LossTerms { l_pred: Some(lp), l_dec: None, l_dis1: None, l_dis2: None };

    if model.variant != ModelVariant::B0 {
        let mut psi_rng = rng::indexed_stream(cfg.seed, "dropout", global_step);
        let e1_noisy = noisy_transform(&mut tape, e1, cfg.psi_rate, &mut psi_rng, true)?;
        let x_hat = bound.decode(&mut tape, e1_noisy, e2)?;
        terms.l_dec = Some(losses::l_dec(&mut tape, x_hat, x)?);
    }
    if model.variant == ModelVariant::Full {
        let (e2_hat, e1_hat) = bound.disentangle(&mut tape, e1, e2)?;
        let (t2, t1) = if detach_targets {
            (tape.detach(e2), tape.detach(e1))
        } else {
            (e2, e1)
        };
        let (d1, d2) = losses::l_dis(&mut tape, e2_hat, t2, e1_hat, t1)?;
        terms.l_dis1 = Some(d1);
        terms.l_dis2 = Some(d2);
    }

    let objectives = losses::composite_objectives(&mut tape, &terms, &cfg.weights)?;
    let binding = bound.into_binding();
    Ok(ForwardOutput { tape, terms, objectives, binding })
}

fn check_finite(bd: &LossBreakdown, step: u64) -> Result<()> {
    if bd.all_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            step,
            l_pred: bd.l_pred,
            l_dec: bd.l_dec,
            l_dis1: bd.l_dis1,
            l_dis2: bd.l_dis2,
        })
    }
}

/// One M1 step: backprop `j_m1`, clip, Adam on `{enc, pred, dec}` only.
/// Disentangler parameters are bit-identical before and after.
pub fn train_step_m1(
    model: &mut ModelGraph,
    batch: &Batch,
    cfg: &TrainConfig,
    global_step: u64,
) -> Result<LossBreakdown> {
    let mut fwd = forward_full(model, batch, cfg, global_step, cfg.detach_dis_targets)?;
    let bd = losses::breakdown(&fwd.tape, &fwd.terms, &fwd.objectives);
    check_finite(&bd, global_step)?;
    fwd.tape.backward(fwd.objectives.j_m1)?;

    model.store.zero_grads();
    fwd.binding.export_grads(&fwd.tape, &mut model.store);
    model.store.clip_grad_norm(cfg.clip_norm, is_m1_param);
    model.store.adam_step(cfg.lr_m1, &AdamConfig::default(), is_m1_param);
    Ok(bd)
}

/// One M2 step: backprop `j_m2`, Adam on `{dis1, dis2}` only. M1
/// parameters are bit-identical before and after.
pub fn train_step_m2(
    model: &mut ModelGraph,
    batch: &Batch,
    cfg: &TrainConfig,
    global_step: u64,
) -> Result<LossBreakdown> {
    if model.variant != ModelVariant::Full {
        return Err(Error::Contract(format!(
            "M2 steps require the full model, not {}",
            model.variant.name()
        )));
    }
    let mut fwd = forward_full(model, batch, cfg, global_step, false)?;
    let bd = losses::breakdown(&fwd.tape, &fwd.terms, &fwd.objectives);
    check_finite(&bd, global_step)?;
    let j_m2 = fwd.objectives.j_m2.expect("full model has j_m2");
    fwd.tape.backward(j_m2)?;

    model.store.zero_grads();
    fwd.binding.export_grads(&fwd.tape, &mut model.store);
    model.store.adam_step(cfg.lr_m2, &AdamConfig::default(), is_m2_param);
    Ok(bd)
}

/// Training driver owning the schedule counters, so checkpoints can
/// resume mid-run with the schedule intact.
#[derive(Debug)]
pub struct Trainer {
    pub model: ModelGraph,
    pub cfg: TrainConfig,
    pub epoch: u32,
    pub global_step: u64,
}

impl Trainer {
    pub fn new(model: ModelGraph, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Trainer { model, cfg, epoch: 0, global_step: 0 })
    }

    /// Which player the schedule assigns to `step` (cycle of 1 M1 step
    /// followed by k M2 steps). Baselines always take M1 steps.
    pub fn player_for_step(&self, step: u64) -> Player {
        if self.model.variant != ModelVariant::Full {
            return Player::M1;
        }
        if step % (1 + self.cfg.k as u64) == 0 {
            Player::M1
        } else {
            Player::M2
        }
    }

    /// Runs the remaining epochs. Emits one record per step; writes a
    /// checkpoint after every epoch when a path is given (retained as the
    /// last good state if a later step diverges).
    pub fn run(
        &mut self,
        dataset: &Dataset,
        sink: &mut dyn MetricsSink,
        checkpoint_path: Option<&Path>,
    ) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::Data("training dataset is empty".into()));
        }
        if dataset.feature_dim() != self.model.arch.input_dim() {
            return Err(Error::Dimension {
                op: "train",
                left: vec![dataset.len(), dataset.feature_dim()],
                right: vec![self.model.arch.input_dim()],
            });
        }
        while self.epoch < self.cfg.epochs {
            let order = shuffled_indices(dataset.len(), self.cfg.seed, self.epoch);
            for chunk in order.chunks(self.cfg.batch_size) {
                let (x, y, _) = dataset.gather(chunk);
                let batch = Batch { x, y };
                let player = self.player_for_step(self.global_step);
                let start = Instant::now();
                let bd = match player {
                    Player::M1 => {
                        train_step_m1(&mut self.model, &batch, &self.cfg, self.global_step)?
                    }
                    Player::M2 => {
                        train_step_m2(&mut self.model, &batch, &self.cfg, self.global_step)?
                    }
                };
                sink.record(&MetricsRecord {
                    epoch: self.epoch,
                    step: self.global_step,
                    player,
                    losses: bd,
                    ms: start.elapsed().as_secs_f64() * 1e3,
                });
                self.global_step += 1;
            }
            self.epoch += 1;
            if let Some(path) = checkpoint_path {
                crate::checkpoint::save_checkpoint(self, path)?;
            }
        }
        Ok(())
    }
}

/// Deterministic Fisher-Yates shuffle of `0..n` keyed by (seed, epoch).
pub fn shuffled_indices(n: usize, seed: u64, epoch: u32) -> Vec<usize> {
    use rand::Rng;
    let mut rng = rng::indexed_stream(seed, "shuffle", epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Trains a baseline: B0 minimizes `alpha*l_pred` through the unsplit
/// embedding; B1 minimizes `alpha*l_pred + beta*l_dec` with psi and no
/// disentanglers or M2 steps.
pub fn train_baseline(
    variant: ModelVariant,
    arch: crate::model::ArchitectureSpec,
    dataset: &Dataset,
    cfg: &TrainConfig,
    sink: &mut dyn MetricsSink,
) -> Result<ModelGraph> {
    if variant == ModelVariant::Full {
        return Err(Error::Config("train_baseline expects b0 or b1".into()));
    }
    let model = ModelGraph::new(arch, variant, cfg.seed)?;
    let mut trainer = Trainer::new(model, cfg.clone())?;
    trainer.run(dataset, sink, None)?;
    Ok(trainer.model)
}
