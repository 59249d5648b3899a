//! The five networks and their wiring: encoder with split output,
//! predictor, noisy transformer, decoder, and the two adversarial
//! disentanglers.
//!
//! `{enc, pred, dec}` form the composite player M1 and `{dis1, dis2}`
//! form M2; every parameter name carries exactly one of those prefixes.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::params::{init_dense_layer, ParamBinding, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
    Softmax,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
            Activation::Softmax => "softmax",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            "softmax" => Ok(Activation::Softmax),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        LayerSpec { input_dim, output_dim, activation }
    }
}

/// Which networks exist and how they are consumed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelVariant {
    /// All five networks, adversarial training.
    Full,
    /// Encoder + predictor only; the predictor reads the unsplit embedding
    /// `[e1 e2]`, so capacity matches the full model.
    B0,
    /// Encoder + predictor + decoder with the noisy transformer, trained
    /// non-adversarially (no disentanglers).
    B1,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::B0 => "b0",
            ModelVariant::B1 => "b1",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(ModelVariant::Full),
            "b0" => Ok(ModelVariant::B0),
            "b1" => Ok(ModelVariant::B1),
            other => Err(Error::Config(format!("unknown model variant '{other}'"))),
        }
    }
}

/// Layer stacks and embedding widths for every component.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchitectureSpec {
    pub encoder_layers: Vec<LayerSpec>,
    pub dim_e1: usize,
    pub dim_e2: usize,
    pub predictor_layers: Vec<LayerSpec>,
    pub decoder_layers: Vec<LayerSpec>,
    pub dis1_layers: Vec<LayerSpec>,
    pub dis2_layers: Vec<LayerSpec>,
    pub psi_rate: f32,
}

impl ArchitectureSpec {
    /// Builds the standard dense realization: ReLU hidden layers, tanh
    /// encoder output, linear disentangler outputs, softmax predictor
    /// head. `dis_hidden` empty gives the single-layer disentanglers used
    /// in the image experiments; a hidden layer buys the adversary enough
    /// capacity to certify disentanglement of nonlinear codes.
    #[allow(clippy::too_many_arguments)]
    pub fn dense(
        input_dim: usize,
        encoder_hidden: &[usize],
        dim_e1: usize,
        dim_e2: usize,
        predictor_hidden: &[usize],
        num_classes: usize,
        decoder_hidden: &[usize],
        decoder_output: Activation,
        dis_hidden: &[usize],
        psi_rate: f32,
    ) -> Self {
        // Bounded embeddings: an unbounded encoder output lets the
        // minimax game degenerate into inflating the embedding scale to
        // defeat the disentanglers.
        let encoder_layers = stack(input_dim, encoder_hidden, dim_e1 + dim_e2, Activation::Tanh);
        let predictor_layers = stack(dim_e1, predictor_hidden, num_classes, Activation::Softmax);
        let decoder_layers = stack(dim_e1 + dim_e2, decoder_hidden, input_dim, decoder_output);
        ArchitectureSpec {
            encoder_layers,
            dim_e1,
            dim_e2,
            predictor_layers,
            decoder_layers,
            dis1_layers: stack(dim_e1, dis_hidden, dim_e2, Activation::Linear),
            dis2_layers: stack(dim_e2, dis_hidden, dim_e1, Activation::Linear),
            psi_rate,
        }
    }

    /// Realization used for the MNIST-ROT experiments: two-layer encoder
    /// and predictor, three-layer decoder, single-layer disentanglers.
    pub fn mnist() -> Self {
        Self::dense(784, &[512], 128, 128, &[256], 10, &[512], Activation::Sigmoid, &[], 0.5)
    }

    /// Desk-scale realization for the synthetic two-factor dataset: a
    /// tight prediction bottleneck and hidden-layer disentanglers, which
    /// the calibration runs showed are what actually force the nuisance
    /// factor out of e1 on this data.
    pub fn synthetic(input_dim: usize, num_classes: usize) -> Self {
        Self::dense(
            input_dim,
            &[64],
            6,
            16,
            &[32],
            num_classes,
            &[64],
            Activation::Linear,
            &[64],
            0.7,
        )
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_layers.first().map_or(0, |l| l.input_dim)
    }

    pub fn num_classes(&self) -> usize {
        self.predictor_layers.last().map_or(0, |l| l.output_dim)
    }

    /// Width of the embedding the predictor consumes under `variant`.
    pub fn prediction_width(&self, variant: ModelVariant) -> usize {
        match variant {
            ModelVariant::B0 => self.dim_e1 + self.dim_e2,
            _ => self.dim_e1,
        }
    }

    pub fn validate(&self, variant: ModelVariant) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.dim_e1 == 0 || self.dim_e2 == 0 {
            return fail("embedding widths must be positive".into());
        }
        if !(0.0..1.0).contains(&self.psi_rate) {
            return fail(format!("psi_rate {} outside [0, 1)", self.psi_rate));
        }
        check_stack("encoder", &self.encoder_layers)?;
        check_stack("predictor", &self.predictor_layers)?;
        let enc_out = self.encoder_layers.last().unwrap().output_dim;
        if enc_out != self.dim_e1 + self.dim_e2 {
            return fail(format!(
                "encoder final width {enc_out} != dim_e1 + dim_e2 = {}",
                self.dim_e1 + self.dim_e2
            ));
        }
        let pred_in = self.predictor_layers.first().unwrap().input_dim;
        let want_pred_in = self.prediction_width(variant);
        if pred_in != want_pred_in {
            return fail(format!(
                "predictor input width {pred_in} != {want_pred_in} required by variant {}",
                variant.name()
            ));
        }
        if variant != ModelVariant::B0 {
            check_stack("decoder", &self.decoder_layers)?;
            let dec_in = self.decoder_layers.first().unwrap().input_dim;
            if dec_in != self.dim_e1 + self.dim_e2 {
                return fail(format!(
                    "decoder input width {dec_in} != dim_e1 + dim_e2 = {}",
                    self.dim_e1 + self.dim_e2
                ));
            }
            let dec_out = self.decoder_layers.last().unwrap().output_dim;
            if dec_out != self.input_dim() {
                return fail(format!(
                    "decoder output width {dec_out} != input width {}",
                    self.input_dim()
                ));
            }
        }
        if variant == ModelVariant::Full {
            check_stack("dis1", &self.dis1_layers)?;
            check_stack("dis2", &self.dis2_layers)?;
            let (d1_in, d1_out) = (
                self.dis1_layers.first().unwrap().input_dim,
                self.dis1_layers.last().unwrap().output_dim,
            );
            if d1_in != self.dim_e1 || d1_out != self.dim_e2 {
                return fail(format!("dis1 must map dim_e1 -> dim_e2, got {d1_in} -> {d1_out}"));
            }
            let (d2_in, d2_out) = (
                self.dis2_layers.first().unwrap().input_dim,
                self.dis2_layers.last().unwrap().output_dim,
            );
            if d2_in != self.dim_e2 || d2_out != self.dim_e1 {
                return fail(format!("dis2 must map dim_e2 -> dim_e1, got {d2_in} -> {d2_out}"));
            }
        }
        Ok(())
    }

    /// Adapts this spec to a variant (adjusts the predictor input width
    /// for B0's unsplit embedding).
    pub fn for_variant(&self, variant: ModelVariant) -> Self {
        let mut out = self.clone();
        let first = out.predictor_layers.first_mut().expect("predictor layers");
        first.input_dim = self.prediction_width(variant);
        out
    }
}

fn stack(input: usize, hidden: &[usize], output: usize, output_act: Activation) -> Vec<LayerSpec> {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        layers.push(LayerSpec::new(prev, h, Activation::Relu));
        prev = h;
    }
    layers.push(LayerSpec::new(prev, output, output_act));
    layers
}

fn check_stack(name: &str, layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Config(format!("{name} has no layers")));
    }
    for layer in layers {
        if layer.input_dim == 0 || layer.output_dim == 0 {
            return Err(Error::Config(format!("{name} has a zero-width layer")));
        }
    }
    for pair in layers.windows(2) {
        if pair[0].output_dim != pair[1].input_dim {
            return Err(Error::Config(format!(
                "{name} layer widths do not chain: {} -> {}",
                pair[0].output_dim, pair[1].input_dim
            )));
        }
    }
    Ok(())
}

/// The split latent code `e = [e1 e2]` for one batch.
#[derive(Clone, Debug)]
pub struct SplitEmbedding {
    pub e1: Tensor,
    pub e2: Tensor,
}

impl SplitEmbedding {
    pub fn batch(&self) -> usize {
        self.e1.rows()
    }
}

/// Parameters and wiring for the networks of one model instance.
#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub arch: ArchitectureSpec,
    pub variant: ModelVariant,
    pub store: ParamStore,
}

pub const M1_COMPONENTS: [&str; 3] = ["enc", "pred", "dec"];
pub const M2_COMPONENTS: [&str; 2] = ["dis1", "dis2"];

pub fn is_m1_param(name: &str) -> bool {
    M1_COMPONENTS.iter().any(|c| name.starts_with(&format!("{c}.")))
}

pub fn is_m2_param(name: &str) -> bool {
    M2_COMPONENTS.iter().any(|c| name.starts_with(&format!("{c}.")))
}

impl ModelGraph {
    /// Initializes all networks required by `variant` (Glorot weights,
    /// zero biases) from the `init` stream of `seed`.
    pub fn new(arch: ArchitectureSpec, variant: ModelVariant, seed: u64) -> Result<Self> {
        let arch = arch.for_variant(variant);
        arch.validate(variant)?;
        let mut store = ParamStore::new();
        init_stack(&mut store, "enc", &arch.encoder_layers, seed);
        init_stack(&mut store, "pred", &arch.predictor_layers, seed);
        if variant != ModelVariant::B0 {
            init_stack(&mut store, "dec", &arch.decoder_layers, seed);
        }
        if variant == ModelVariant::Full {
            init_stack(&mut store, "dis1", &arch.dis1_layers, seed);
            init_stack(&mut store, "dis2", &arch.dis2_layers, seed);
        }
        Ok(ModelGraph { arch, variant, store })
    }

    /// Binds every parameter onto a fresh tape for one forward/backward.
    pub fn bind<'m>(&'m self, tape: &mut Tape) -> BoundModel<'m> {
        BoundModel { binding: ParamBinding::bind_all(tape, &self.store), model: self }
    }

    // ── Eager (inference-mode) wrappers ──────────────────────────────

    /// Forward through the encoder, splitting the final activation into
    /// the first `dim_e1` columns and the remaining `dim_e2` columns.
    pub fn encode(&self, x: &Tensor) -> Result<SplitEmbedding> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let xid = tape.leaf(x.clone());
        let (e1, e2) = bound.encode(&mut tape, xid)?;
        Ok(SplitEmbedding { e1: tape.value(e1).clone(), e2: tape.value(e2).clone() })
    }

    /// Class-probability rows from a prediction embedding (`e1`, or the
    /// unsplit embedding for B0).
    pub fn predict(&self, embedding: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let e = tape.leaf(embedding.clone());
        let p = bound.predict(&mut tape, e)?;
        Ok(tape.value(p).clone())
    }

    /// Reconstruction from `[e1_noisy e2]`.
    pub fn decode(&self, e1_noisy: &Tensor, e2: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let a = tape.leaf(e1_noisy.clone());
        let b = tape.leaf(e2.clone());
        let x = bound.decode(&mut tape, a, b)?;
        Ok(tape.value(x).clone())
    }

    /// Disentangler forward: `(Dis1(e1), Dis2(e2))`.
    pub fn disentangle(&self, emb: &SplitEmbedding) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let e1 = tape.leaf(emb.e1.clone());
        let e2 = tape.leaf(emb.e2.clone());
        let (e2_hat, e1_hat) = bound.disentangle(&mut tape, e1, e2)?;
        Ok((tape.value(e2_hat).clone(), tape.value(e1_hat).clone()))
    }
}

fn init_stack(store: &mut ParamStore, prefix: &str, layers: &[LayerSpec], seed: u64) {
    for (i, layer) in layers.iter().enumerate() {
        init_dense_layer(store, prefix, i, layer.input_dim, layer.output_dim, seed);
    }
}

/// Dropout applied to `e1` on the decoder path only; identity at inference.
pub fn noisy_transform(
    tape: &mut Tape,
    e1: NodeId,
    psi_rate: f32,
    rng: &mut ChaCha8Rng,
    training: bool,
) -> Result<NodeId> {
    tape.dropout(e1, psi_rate, rng, training)
}

/// One model's parameters bound onto a tape.
pub struct BoundModel<'m> {
    binding: ParamBinding,
    model: &'m ModelGraph,
}

impl<'m> BoundModel<'m> {
    pub fn binding(&self) -> &ParamBinding {
        &self.binding
    }

    /// Releases the binding (it holds no borrow of the model).
    pub fn into_binding(self) -> ParamBinding {
        self.binding
    }

    fn dense_stack(
        &self,
        tape: &mut Tape,
        prefix: &str,
        layers: &[LayerSpec],
        input: NodeId,
    ) -> Result<NodeId> {
        let mut h = input;
        for (i, layer) in layers.iter().enumerate() {
            let w = self.binding.node(&format!("{prefix}.layer{i}.weight"));
            let b = self.binding.node(&format!("{prefix}.layer{i}.bias"));
            let z = tape.matmul(h, w)?;
            let z = tape.add_row_bias(z, b)?;
            h = match layer.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Linear => z,
                Activation::Softmax => tape.softmax_rows(z)?,
            };
        }
        Ok(h)
    }

    /// Encoder forward; returns `(e1, e2)` slices of the final activation.
    pub fn encode(&self, tape: &mut Tape, x: NodeId) -> Result<(NodeId, NodeId)> {
        let (_, e1, e2) = self.encode_with_full(tape, x)?;
        Ok((e1, e2))
    }

    /// Encoder forward that also returns the unsplit final activation.
    pub fn encode_with_full(
        &self,
        tape: &mut Tape,
        x: NodeId,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let arch = &self.model.arch;
        let got = tape.value(x).cols();
        if got != arch.input_dim() {
            return Err(Error::Dimension {
                op: "encode",
                left: tape.value(x).shape().to_vec(),
                right: vec![arch.input_dim()],
            });
        }
        let full = self.dense_stack(tape, "enc", &arch.encoder_layers, x)?;
        let e1 = tape.slice_cols(full, 0, arch.dim_e1)?;
        let e2 = tape.slice_cols(full, arch.dim_e1, arch.dim_e2)?;
        Ok((full, e1, e2))
    }

    /// Predictor forward from the prediction embedding.
    pub fn predict(&self, tape: &mut Tape, embedding: NodeId) -> Result<NodeId> {
        let arch = &self.model.arch;
        let want = arch.prediction_width(self.model.variant);
        if tape.value(embedding).cols() != want {
            return Err(Error::Dimension {
                op: "predict",
                left: tape.value(embedding).shape().to_vec(),
                right: vec![want],
            });
        }
        self.dense_stack(tape, "pred", &arch.predictor_layers, embedding)
    }

    /// The embedding the predictor consumes: `e1`, or `[e1 e2]` for B0.
    pub fn prediction_input(&self, tape: &mut Tape, e1: NodeId, e2: NodeId) -> Result<NodeId> {
        match self.model.variant {
            ModelVariant::B0 => tape.concat_cols(e1, e2),
            _ => Ok(e1),
        }
    }

    /// Decoder forward from `[e1_noisy e2]`.
    pub fn decode(&self, tape: &mut Tape, e1_noisy: NodeId, e2: NodeId) -> Result<NodeId> {
        let arch = &self.model.arch;
        if tape.value(e1_noisy).cols() != arch.dim_e1 || tape.value(e2).cols() != arch.dim_e2 {
            return Err(Error::Dimension {
                op: "decode",
                left: tape.value(e1_noisy).shape().to_vec(),
                right: tape.value(e2).shape().to_vec(),
            });
        }
        let joined = tape.concat_cols(e1_noisy, e2)?;
        self.dense_stack(tape, "dec", &arch.decoder_layers, joined)
    }

    /// `(e2_hat, e1_hat) = (Dis1(e1), Dis2(e2))`.
    pub fn disentangle(&self, tape: &mut Tape, e1: NodeId, e2: NodeId) -> Result<(NodeId, NodeId)> {
        let arch = &self.model.arch;
        if tape.value(e1).cols() != arch.dim_e1 || tape.value(e2).cols() != arch.dim_e2 {
            return Err(Error::Dimension {
                op: "disentangle",
                left: tape.value(e1).shape().to_vec(),
                right: tape.value(e2).shape().to_vec(),
            });
        }
        let e2_hat = self.dense_stack(tape, "dis1", &arch.dis1_layers, e1)?;
        let e1_hat = self.dense_stack(tape, "dis2", &arch.dis2_layers, e2)?;
        Ok((e2_hat, e1_hat))
    }
}
