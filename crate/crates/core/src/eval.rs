//! Probe-based invariance metrics, embedding export, and the eta sweep.
//!
//! A probe is a fresh two-layer classifier trained post hoc on frozen
//! embeddings; its held-out accuracy measures what information the
//! embedding carries. `A_y` should be high, `A_z` from the prediction
//! embedding should approach chance, and `A_z` from `e2` should be high
//! (the nuisance migrated there).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tape;
use crate::config::write_atomic;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses;
use crate::model::{ArchitectureSpec, ModelGraph, ModelVariant};
use crate::params::{init_dense_layer, AdamConfig, ParamBinding, ParamStore};
use crate::rng;
use crate::tensor::Tensor;
use crate::trainer::{NullSink, TrainConfig, Trainer};

/// Probe training knobs. The encoder is never touched: probes own their
/// parameters and read embeddings as constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: u32,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { hidden: 64, epochs: 30, lr: 1e-3, seed: 0 }
    }
}

/// Embeddings of a whole dataset with its labels carried along.
#[derive(Clone, Debug)]
pub struct Embeddings {
    pub e1: Tensor,
    pub e2: Tensor,
    pub y: Vec<u32>,
    pub z: Option<Vec<u32>>,
}

impl Embeddings {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// `[e1 e2]` concatenated per row.
    pub fn unsplit(&self) -> Tensor {
        let n = self.len();
        let (d1, d2) = (self.e1.cols(), self.e2.cols());
        let mut data = Vec::with_capacity(n * (d1 + d2));
        for i in 0..n {
            data.extend_from_slice(self.e1.row(i));
            data.extend_from_slice(self.e2.row(i));
        }
        Tensor::new(vec![n, d1 + d2], data).expect("unsplit shape")
    }

    pub fn export(&self, path: &Path) -> Result<()> {
        export_embeddings(
            self.e1.cols(),
            self.e2.cols(),
            self.e1.data(),
            self.e2.data(),
            &self.y,
            self.z.as_deref(),
            path,
        )
    }
}

const EMBED_CHUNK: usize = 4096;

/// Encodes every sample (inference mode, no noise); deterministic.
pub fn embed_dataset(model: &ModelGraph, dataset: &Dataset) -> Result<Embeddings> {
    if dataset.feature_dim() != model.arch.input_dim() {
        return Err(Error::Dimension {
            op: "embed_dataset",
            left: vec![dataset.len(), dataset.feature_dim()],
            right: vec![model.arch.input_dim()],
        });
    }
    let n = dataset.len();
    let (d1, d2) = (model.arch.dim_e1, model.arch.dim_e2);
    let mut e1 = vec![0.0f32; n * d1];
    let mut e2 = vec![0.0f32; n * d2];
    let mut start = 0;
    while start < n {
        let end = (start + EMBED_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (x, _, _) = dataset.gather(&indices);
        let emb = model.encode(&x)?;
        e1[start * d1..end * d1].copy_from_slice(emb.e1.data());
        e2[start * d2..end * d2].copy_from_slice(emb.e2.data());
        start = end;
    }
    Ok(Embeddings {
        e1: Tensor::new(vec![n, d1], e1)?,
        e2: Tensor::new(vec![n, d2], e2)?,
        y: dataset.labels().to_vec(),
        z: dataset.nuisance_labels().map(|z| z.to_vec()),
    })
}

/// The embedding the model's predictor consumes: `e1`, or `[e1 e2]`
/// for B0 (whose prediction embedding is unsplit).
pub fn prediction_embedding(model: &ModelGraph, emb: &Embeddings) -> Tensor {
    match model.variant {
        ModelVariant::B0 => emb.unsplit(),
        _ => emb.e1.clone(),
    }
}

/// Trains a fresh two-layer probe on an 80/20 deterministic split of the
/// given embeddings and returns held-out accuracy. The embedding source
/// is read-only throughout.
pub fn train_probe(embeddings: &Tensor, labels: &[u32], cfg: &ProbeConfig) -> Result<f64> {
    let n = embeddings.rows();
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} embeddings", labels.len())));
    }
    if n < 2 {
        return Err(Error::DegenerateData("need at least two samples".into()));
    }
    let classes = labels.iter().max().map_or(0, |&m| m as usize + 1);
    {
        let mut seen = vec![false; classes];
        for &l in labels {
            seen[l as usize] = true;
        }
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::DegenerateData("labels contain a single class".into()));
        }
    }

    let d = embeddings.cols();
    let order = {
        use rand::Rng;
        let mut rng = rng::stream(cfg.seed, "probe-split");
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        order
    };
    let split = (n * 4) / 5;
    let (train_idx, held_idx) = order.split_at(split.max(1).min(n - 1));

    let mut store = ParamStore::new();
    init_dense_layer(&mut store, "probe", 0, d, cfg.hidden, cfg.seed);
    init_dense_layer(&mut store, "probe", 1, cfg.hidden, classes, cfg.seed);

    let gather = |idx: &[usize]| -> (Tensor, Vec<u32>) {
        let mut data = Vec::with_capacity(idx.len() * d);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(embeddings.row(i));
            ys.push(labels[i]);
        }
        (Tensor::new(vec![idx.len(), d], data).expect("gather"), ys)
    };

    let batch_size = 128usize;
    for epoch in 0..cfg.epochs {
        let epoch_order = {
            use rand::Rng;
            let mut rng = rng::indexed_stream(cfg.seed, "probe-shuffle", epoch as u64);
            let mut o: Vec<usize> = train_idx.to_vec();
            for i in (1..o.len()).rev() {
                let j = rng.random_range(0..=i);
                o.swap(i, j);
            }
            o
        };
        for chunk in epoch_order.chunks(batch_size) {
            let (x, y) = gather(chunk);
            let mut tape = Tape::new();
            let binding = ParamBinding::bind_all(&mut tape, &store);
            let xid = tape.leaf(x);
            let h = tape.matmul(xid, binding.node("probe.layer0.weight"))?;
            let h = tape.add_row_bias(h, binding.node("probe.layer0.bias"))?;
            let h = tape.relu(h)?;
            let o = tape.matmul(h, binding.node("probe.layer1.weight"))?;
            let o = tape.add_row_bias(o, binding.node("probe.layer1.bias"))?;
            let p = tape.softmax_rows(o)?;
            let loss = losses::l_pred(&mut tape, p, &y)?;
            tape.backward(loss)?;
            store.zero_grads();
            binding.export_grads(&tape, &mut store);
            store.adam_step(cfg.lr, &AdamConfig::default(), |_| true);
        }
    }

    // Held-out accuracy.
    let (x, y) = gather(held_idx);
    let mut tape = Tape::new();
    let binding = ParamBinding::bind_all(&mut tape, &store);
    let xid = tape.leaf(x);
    let h = tape.matmul(xid, binding.node("probe.layer0.weight"))?;
    let h = tape.add_row_bias(h, binding.node("probe.layer0.bias"))?;
    let h = tape.relu(h)?;
    let o = tape.matmul(h, binding.node("probe.layer1.weight"))?;
    let o = tape.add_row_bias(o, binding.node("probe.layer1.bias"))?;
    let p = tape.softmax_rows(o)?;
    let probs = tape.value(p);
    let mut correct = 0usize;
    for (i, &label) in y.iter().enumerate() {
        let row = probs.row(i);
        let argmax =
            row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty row").0;
        if argmax as u32 == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / y.len() as f64)
}

/// Probe accuracies for one trained model across named test sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    /// Per-condition accuracy of predicting y from the prediction
    /// embedding, keyed by test-set name.
    pub a_y: BTreeMap<String, f64>,
    /// Accuracy of predicting z from the prediction embedding (`e1`, or
    /// the unsplit embedding for B0); absent when no set carries z.
    pub a_z_e1: Option<f64>,
    /// Accuracy of predicting z from `e2`.
    pub a_z_e2: Option<f64>,
    /// 1 / |z classes|.
    pub chance_z: Option<f64>,
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (name, acc) in &self.a_y {
            let _ = writeln!(out, "a_y_{name}={acc}");
        }
        if let Some(v) = self.a_z_e1 {
            let _ = writeln!(out, "a_z_e1={v}");
        }
        if let Some(v) = self.a_z_e2 {
            let _ = writeln!(out, "a_z_e2={v}");
        }
        if let Some(v) = self.chance_z {
            let _ = writeln!(out, "chance_z={v}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }
}

/// Evaluates `a_y` on every named set and `a_z` (from the prediction
/// embedding and from `e2`) on the first set carrying nuisance labels.
pub fn eval_invariance(
    model: &ModelGraph,
    sets: &[(String, &Dataset)],
    probe: &ProbeConfig,
) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for (name, ds) in sets {
        let emb = embed_dataset(model, ds)?;
        let pred_emb = prediction_embedding(model, &emb);
        report.a_y.insert(name.clone(), train_probe(&pred_emb, &emb.y, probe)?);
        if report.a_z_e1.is_none() {
            if let (Some(z), Some(zc)) = (&emb.z, ds.z_classes()) {
                report.a_z_e1 = Some(train_probe(&pred_emb, z, probe)?);
                report.a_z_e2 = Some(train_probe(&emb.e2, z, probe)?);
                report.chance_z = Some(1.0 / zc as f64);
            }
        }
    }
    Ok(report)
}

/// One cell of the eta sweep.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub alpha: f32,
    pub beta: f32,
    pub eta: f64,
    pub a_y: f64,
    pub a_z_e1: f64,
    /// Reconstruction error when decoding from `[0 e2]` only.
    pub recon_mse_e2: f64,
}

pub const SWEEP_CSV_HEADER: &str = "alpha,beta,eta,a_y,a_z_e1,recon_mse_e2";

pub fn sweep_rows_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.alpha, r.beta, r.eta, r.a_y, r.a_z_e1, r.recon_mse_e2
        );
    }
    out
}

/// Trains one full model per (alpha, beta) pair and reports probe metrics
/// plus e2-only reconstruction error on the test set. Rows keep grid order.
pub fn eta_sweep(
    train: &Dataset,
    test: &Dataset,
    grid: &[(f32, f32)],
    arch: &ArchitectureSpec,
    base_cfg: &TrainConfig,
    probe: &ProbeConfig,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("eta sweep grid is empty".into()));
    }
    if test.nuisance_labels().is_none() {
        return Err(Error::Data("eta sweep needs a test set with nuisance labels".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(alpha, beta) in grid {
        let mut cfg = base_cfg.clone();
        cfg.weights.alpha = alpha;
        cfg.weights.beta = beta;
        let model = ModelGraph::new(arch.clone(), ModelVariant::Full, cfg.seed)?;
        let mut trainer = Trainer::new(model, cfg)?;
        trainer.run(train, &mut NullSink, None)?;
        let model = trainer.model;

        let emb = embed_dataset(&model, test)?;
        let a_y = train_probe(&emb.e1, &emb.y, probe)?;
        let a_z_e1 = train_probe(&emb.e1, emb.z.as_ref().expect("z labels"), probe)?;
        let recon_mse_e2 = e2_only_reconstruction_mse(&model, test, &emb)?;
        rows.push(SweepRow {
            alpha,
            beta,
            eta: trainer.cfg.weights.eta(),
            a_y,
            a_z_e1,
            recon_mse_e2,
        });
    }
    Ok(rows)
}

/// MSE of decoding `[0 e2]` against the input (deterministic measurement:
/// the noisy slot is fed zeros, not dropout noise).
pub fn e2_only_reconstruction_mse(
    model: &ModelGraph,
    dataset: &Dataset,
    emb: &Embeddings,
) -> Result<f64> {
    let n = dataset.len();
    let mut total = 0.0f64;
    let mut count = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + EMBED_CHUNK).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let (x, _, _) = dataset.gather(&indices);
        let rows = end - start;
        let zeros = Tensor::zeros(vec![rows, model.arch.dim_e1]);
        let e2_rows = {
            let d2 = model.arch.dim_e2;
            let mut data = Vec::with_capacity(rows * d2);
            for i in start..end {
                data.extend_from_slice(emb.e2.row(i));
            }
            Tensor::new(vec![rows, d2], data)?
        };
        let x_hat = model.decode(&zeros, &e2_rows)?;
        for (a, b) in x_hat.data().iter().zip(x.data()) {
            total += ((a - b) as f64) * ((a - b) as f64);
            count += 1;
        }
        start = end;
    }
    Ok(total / count as f64)
}

/// CSV export: one row per sample with columns
/// `e1_0..e1_{d1-1}, e2_0..e2_{d2-1}, y, z` (z written as -1 when absent).
pub fn export_embeddings(
    dim_e1: usize,
    dim_e2: usize,
    e1: &[f32],
    e2: &[f32],
    y: &[u32],
    z: Option<&[u32]>,
    path: &Path,
) -> Result<()> {
    let n = y.len();
    if e1.len() != n * dim_e1 || e2.len() != n * dim_e2 {
        return Err(Error::Data("embedding buffers disagree with label count".into()));
    }
    let mut out = String::new();
    for j in 0..dim_e1 {
        let _ = write!(out, "e1_{j},");
    }
    for j in 0..dim_e2 {
        let _ = write!(out, "e2_{j},");
    }
    out.push_str("y,z\n");
    for i in 0..n {
        for j in 0..dim_e1 {
            let _ = write!(out, "{},", e1[i * dim_e1 + j]);
        }
        for j in 0..dim_e2 {
            let _ = write!(out, "{},", e2[i * dim_e2 + j]);
        }
        let zi = z.map_or(-1i64, |z| z[i] as i64);
        let _ = writeln!(out, "{},{}", y[i], zi);
    }
    write_atomic(path, out.as_bytes())
}
