//! Checkpoint persistence.
//!
//! Layout: magic bytes, a little-endian u32 format version, a u64-length
//! UTF-8 header (flat key=value: variant, schedule counters, train config,
//! architecture), then named raw little-endian f32 arrays with their Adam
//! state. Round-trips are forward-equivalent bit for bit.

use std::collections::BTreeMap;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::config::{format_f32, parse_kv, write_atomic};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::model::{Activation, ArchitectureSpec, LayerSpec, ModelGraph, ModelVariant};
use crate::tensor::Tensor;
use crate::trainer::{TrainConfig, Trainer};

const MAGIC: &[u8; 8] = b"INVFCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(FORMAT_VERSION).expect("vec write");

    let header = header_text(trainer);
    buf.write_u64::<LittleEndian>(header.len() as u64).expect("vec write");
    buf.extend_from_slice(header.as_bytes());

    let store = &trainer.model.store;
    buf.write_u32::<LittleEndian>(store.len() as u32).expect("vec write");
    for (name, entry) in store.iter() {
        buf.write_u32::<LittleEndian>(name.len() as u32).expect("vec write");
        buf.extend_from_slice(name.as_bytes());
        let shape = entry.value.shape();
        buf.push(shape.len() as u8);
        for &d in shape {
            buf.write_u32::<LittleEndian>(d as u32).expect("vec write");
        }
        for &v in entry.value.data() {
            buf.write_f32::<LittleEndian>(v).expect("vec write");
        }
        for &m in &entry.m {
            buf.write_f32::<LittleEndian>(m).expect("vec write");
        }
        for &v in &entry.v {
            buf.write_f32::<LittleEndian>(v).expect("vec write");
        }
        buf.write_u64::<LittleEndian>(entry.t).expect("vec write");
    }
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Trainer> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::CorruptCheckpoint(format!("cannot read {}: {e}", path.display())))?;
    let mut cur = Cursor::new(bytes.as_slice());

    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic).map_err(|_| corrupt("missing magic"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("missing version"))?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    let header_len = cur.read_u64::<LittleEndian>().map_err(|_| corrupt("missing header length"))? as usize;
    let mut header_bytes = vec![0u8; header_len];
    cur.read_exact(&mut header_bytes).map_err(|_| corrupt("truncated header"))?;
    let header = String::from_utf8(header_bytes).map_err(|_| corrupt("header is not UTF-8"))?;
    let kv = parse_kv(&header).map_err(|e| corrupt(&format!("header: {e}")))?;

    let variant = ModelVariant::parse(require(&kv, "variant")?)
        .map_err(|e| corrupt(&e.to_string()))?;
    let epoch: u32 = parse_field(&kv, "epoch")?;
    let global_step: u64 = parse_field(&kv, "global_step")?;
    let cfg = train_config_from_kv(&kv)?;
    let arch = arch_from_kv(&kv)?;

    let mut model = ModelGraph::new(arch, variant, cfg.seed)
        .map_err(|e| corrupt(&format!("architecture: {e}")))?;

    let n_entries = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("missing entry count"))?;
    if n_entries as usize != model.store.len() {
        return Err(corrupt(&format!(
            "{} entries stored but architecture defines {}",
            n_entries,
            model.store.len()
        )));
    }
    for _ in 0..n_entries {
        let name_len = cur.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated entry name"))? as usize;
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes).map_err(|_| corrupt("truncated entry name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| corrupt("entry name not UTF-8"))?;
        let ndim = cur.read_u8().map_err(|_| corrupt("truncated shape"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.read_u32::<LittleEndian>().map_err(|_| corrupt("truncated shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = vec![0f32; numel];
        cur.read_f32_into::<LittleEndian>(&mut values).map_err(|_| corrupt("truncated values"))?;
        let mut m = vec![0f32; numel];
        cur.read_f32_into::<LittleEndian>(&mut m).map_err(|_| corrupt("truncated adam state"))?;
        let mut v = vec![0f32; numel];
        cur.read_f32_into::<LittleEndian>(&mut v).map_err(|_| corrupt("truncated adam state"))?;
        let t = cur.read_u64::<LittleEndian>().map_err(|_| corrupt("truncated step counter"))?;

        let entry = model.store.get_mut(&name).ok_or_else(|| {
            corrupt(&format!("parameter {name} not defined by the stored architecture"))
        })?;
        if entry.value.shape() != shape.as_slice() {
            return Err(corrupt(&format!(
                "shape mismatch for {name}: stored {:?}, architecture wants {:?}",
                shape,
                entry.value.shape()
            )));
        }
        entry.value = Tensor::new(shape, values).map_err(|e| corrupt(&e.to_string()))?;
        entry.m = m;
        entry.v = v;
        entry.t = t;
    }
    if cur.position() as usize != bytes.len() {
        return Err(corrupt("trailing bytes after parameter entries"));
    }

    let mut trainer = Trainer::new(model, cfg)?;
    trainer.epoch = epoch;
    trainer.global_step = global_step;
    Ok(trainer)
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptCheckpoint(msg.to_string())
}

fn require<'m>(kv: &'m BTreeMap<String, String>, key: &str) -> Result<&'m str> {
    kv.get(key).map(String::as_str).ok_or_else(|| corrupt(&format!("header missing '{key}'")))
}

fn parse_field<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    require(kv, key)?
        .parse::<T>()
        .map_err(|_| corrupt(&format!("header field '{key}' is invalid")))
}

fn header_text(trainer: &Trainer) -> String {
    let mut out = String::new();
    out.push_str(&format!("variant={}\n", trainer.model.variant.name()));
    out.push_str(&format!("epoch={}\n", trainer.epoch));
    out.push_str(&format!("global_step={}\n", trainer.global_step));
    let c = &trainer.cfg;
    out.push_str(&format!("train.alpha={}\n", format_f32(c.weights.alpha)));
    out.push_str(&format!("train.beta={}\n", format_f32(c.weights.beta)));
    out.push_str(&format!("train.gamma={}\n", format_f32(c.weights.gamma)));
    out.push_str(&format!("train.k={}\n", c.k));
    out.push_str(&format!("train.epochs={}\n", c.epochs));
    out.push_str(&format!("train.batch_size={}\n", c.batch_size));
    out.push_str(&format!("train.lr_m1={}\n", format_f32(c.lr_m1)));
    out.push_str(&format!("train.lr_m2={}\n", format_f32(c.lr_m2)));
    out.push_str(&format!("train.psi_rate={}\n", format_f32(c.psi_rate)));
    out.push_str(&format!("train.seed={}\n", c.seed));
    out.push_str(&format!("train.clip_norm={}\n", format_f32(c.clip_norm)));
    out.push_str(&format!("train.detach_targets={}\n", c.detach_dis_targets));
    let a = &trainer.model.arch;
    out.push_str(&format!("arch.dim_e1={}\n", a.dim_e1));
    out.push_str(&format!("arch.dim_e2={}\n", a.dim_e2));
    out.push_str(&format!("arch.psi_rate={}\n", format_f32(a.psi_rate)));
    out.push_str(&format!("arch.enc={}\n", layers_to_text(&a.encoder_layers)));
    out.push_str(&format!("arch.pred={}\n", layers_to_text(&a.predictor_layers)));
    out.push_str(&format!("arch.dec={}\n", layers_to_text(&a.decoder_layers)));
    out.push_str(&format!("arch.dis1={}\n", layers_to_text(&a.dis1_layers)));
    out.push_str(&format!("arch.dis2={}\n", layers_to_text(&a.dis2_layers)));
    out
}

fn train_config_from_kv(kv: &BTreeMap<String, String>) -> Result<TrainConfig> {
    Ok(TrainConfig {
        weights: LossWeights {
            alpha: parse_field(kv, "train.alpha")?,
            beta: parse_field(kv, "train.beta")?,
            gamma: parse_field(kv, "train.gamma")?,
        },
        k: parse_field(kv, "train.k")?,
        epochs: parse_field(kv, "train.epochs")?,
        batch_size: parse_field(kv, "train.batch_size")?,
        lr_m1: parse_field(kv, "train.lr_m1")?,
        lr_m2: parse_field(kv, "train.lr_m2")?,
        psi_rate: parse_field(kv, "train.psi_rate")?,
        seed: parse_field(kv, "train.seed")?,
        clip_norm: parse_field(kv, "train.clip_norm")?,
        detach_dis_targets: parse_field(kv, "train.detach_targets")?,
    })
}

fn arch_from_kv(kv: &BTreeMap<String, String>) -> Result<ArchitectureSpec> {
    Ok(ArchitectureSpec {
        encoder_layers: layers_from_text(require(kv, "arch.enc")?)?,
        dim_e1: parse_field(kv, "arch.dim_e1")?,
        dim_e2: parse_field(kv, "arch.dim_e2")?,
        predictor_layers: layers_from_text(require(kv, "arch.pred")?)?,
        decoder_layers: layers_from_text(require(kv, "arch.dec")?)?,
        dis1_layers: layers_from_text(require(kv, "arch.dis1")?)?,
        dis2_layers: layers_from_text(require(kv, "arch.dis2")?)?,
        psi_rate: parse_field(kv, "arch.psi_rate")?,
    })
}

fn layers_to_text(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}x{}:{}", l.input_dim, l.output_dim, l.activation.name()))
        .collect::<Vec<_>>()
        .join(",")
}

fn layers_from_text(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',')
        .map(|part| {
            let bad = || corrupt(&format!("invalid layer spec '{part}'"));
            let (dims, act) = part.split_once(':').ok_or_else(bad)?;
            let (i, o) = dims.split_once('x').ok_or_else(bad)?;
            Ok(LayerSpec::new(
                i.parse().map_err(|_| bad())?,
                o.parse().map_err(|_| bad())?,
                Activation::parse(act).map_err(|_| bad())?,
            ))
        })
        .collect()
}
