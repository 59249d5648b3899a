//! Dataset ingestion and synthesis: IDX container I/O, rotation and
//! morphology variants of image datasets, and a synthetic two-factor
//! generator with ground-truth nuisance labels.

pub mod idx;
pub mod synth;
pub mod transforms;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use idx::{read_idx, write_idx, IdxArray};
pub use synth::{gen_synthetic, SyntheticSpec};
pub use transforms::{morph, rotate_image, DilSpec, RotSpec, RotationMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
}

impl SplitTag {
    pub fn name(&self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
        }
    }
}

/// One sample viewed out of a dataset.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub x: &'a [f32],
    pub y: u32,
    pub z: Option<u32>,
}

/// A labeled dataset stored columnar: features as one `[N x d]` tensor,
/// labels as parallel vectors. The nuisance label `z` is present for all
/// samples or none.
#[derive(Clone, Debug)]
pub struct Dataset {
    x: Tensor,
    y: Vec<u32>,
    z: Option<Vec<u32>>,
    num_classes: u32,
    z_classes: Option<u32>,
    split: SplitTag,
}

impl Dataset {
    pub fn new(
        x: Tensor,
        y: Vec<u32>,
        z: Option<Vec<u32>>,
        num_classes: u32,
        z_classes: Option<u32>,
        split: SplitTag,
    ) -> Result<Self> {
        let n = x.rows();
        if n == 0 {
            return Err(Error::Data("dataset is empty".into()));
        }
        if y.len() != n {
            return Err(Error::Data(format!("{} labels for {} samples", y.len(), n)));
        }
        if let Some(&bad) = y.iter().find(|&&v| v >= num_classes) {
            return Err(Error::Data(format!("label {bad} >= num_classes {num_classes}")));
        }
        match (&z, z_classes) {
            (Some(zv), Some(zc)) => {
                if zv.len() != n {
                    return Err(Error::Data(format!(
                        "{} nuisance labels for {n} samples",
                        zv.len()
                    )));
                }
                if let Some(&bad) = zv.iter().find(|&&v| v >= zc) {
                    return Err(Error::Data(format!("nuisance label {bad} >= cardinality {zc}")));
                }
            }
            (None, None) => {}
            _ => {
                return Err(Error::Data(
                    "nuisance labels and cardinality must be supplied together".into(),
                ))
            }
        }
        if !x.all_finite() {
            return Err(Error::Data("non-finite feature values".into()));
        }
        Ok(Dataset { x, y, z, num_classes, z_classes, split })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes
    }

    pub fn z_classes(&self) -> Option<u32> {
        self.z_classes
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn features(&self) -> &Tensor {
        &self.x
    }

    pub fn labels(&self) -> &[u32] {
        &self.y
    }

    pub fn nuisance_labels(&self) -> Option<&[u32]> {
        self.z.as_deref()
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample { x: self.x.row(i), y: self.y[i], z: self.z.as_ref().map(|z| z[i]) }
    }

    /// Rows `indices` gathered into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<u32>, Option<Vec<u32>>) {
        let d = self.feature_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut ys = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.x.row(i));
            ys.push(self.y[i]);
        }
        let zs = self.z.as_ref().map(|z| indices.iter().map(|&i| z[i]).collect());
        (Tensor::new(vec![indices.len(), d], data).expect("gather shape"), ys, zs)
    }

    /// Copy with the nuisance labels removed (evaluation-only variants).
    pub fn without_z(&self) -> Dataset {
        Dataset {
            x: self.x.clone(),
            y: self.y.clone(),
            z: None,
            num_classes: self.num_classes,
            z_classes: None,
            split: self.split,
        }
    }

    /// Square image side when features are a flattened square image.
    pub fn image_side(&self) -> Result<usize> {
        let d = self.feature_dim();
        let side = (d as f64).sqrt().round() as usize;
        if side * side != d {
            return Err(Error::Data(format!("feature dim {d} is not a square image")));
        }
        Ok(side)
    }
}

// ── Dataset construction ────────────────────────────────────────────

/// Rotates every image by an angle drawn uniformly from `spec.angles`
/// (stream keyed by sample index); when `label_z` is set the angle index
/// becomes the nuisance label.
pub fn build_mnist_rot(
    base: &Dataset,
    spec: &RotSpec,
    seed: u64,
    label_z: bool,
) -> Result<Dataset> {
    spec.validate()?;
    let side = base.image_side()?;
    let d = base.feature_dim();
    let n = base.len();
    let mut data = vec![0.0f32; n * d];
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = rng::indexed_stream(seed, "rot-angle", i as u64);
        let k = rng.random_range(0..spec.angles.len());
        z.push(k as u32);
        let rotated = rotate_image(base.sample(i).x, side, spec.angles[k], spec.mode);
        data[i * d..(i + 1) * d].copy_from_slice(&rotated);
    }
    let x = Tensor::new(vec![n, d], data)?;
    let (z, zc) = if label_z { (Some(z), Some(spec.angles.len() as u32)) } else { (None, None) };
    Dataset::new(x, base.labels().to_vec(), z, base.num_classes(), zc, base.split())
}

/// One eroded/dilated copy of `base` per kernel, keyed by the signed
/// kernel size. Evaluation-only: no nuisance labels.
pub fn build_mnist_dil(base: &Dataset, kernels: &[DilSpec]) -> Result<Vec<(i32, Dataset)>> {
    let side = base.image_side()?;
    let d = base.feature_dim();
    let mut out = Vec::with_capacity(kernels.len());
    for spec in kernels {
        spec.validate()?;
        let n = base.len();
        let mut data = vec![0.0f32; n * d];
        for i in 0..n {
            let morphed = morph(base.sample(i).x, side, *spec);
            data[i * d..(i + 1) * d].copy_from_slice(&morphed);
        }
        let x = Tensor::new(vec![n, d], data)?;
        let ds =
            Dataset::new(x, base.labels().to_vec(), None, base.num_classes(), None, base.split())?;
        out.push((spec.kernel, ds));
    }
    Ok(out)
}

// ── Persistence: IDX pairs + sidecar manifest ───────────────────────

/// Files of one dataset split inside a manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SetEntry {
    pub images: String,
    pub labels: String,
    pub z: Option<String>,
}

/// Sidecar text manifest describing a family of dataset files.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub kind: String,
    pub feature_dim: usize,
    pub num_classes: u32,
    pub z_classes: Option<u32>,
    pub angles: Option<Vec<f32>>,
    pub kernels: Option<Vec<i32>>,
    pub seed: u64,
    pub sets: BTreeMap<String, SetEntry>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("kind={}\n", self.kind));
        out.push_str(&format!("feature_dim={}\n", self.feature_dim));
        out.push_str(&format!("num_classes={}\n", self.num_classes));
        if let Some(zc) = self.z_classes {
            out.push_str(&format!("z_classes={zc}\n"));
        }
        if let Some(angles) = &self.angles {
            let list: Vec<String> = angles.iter().map(|a| format!("{a}")).collect();
            out.push_str(&format!("angles={}\n", list.join(",")));
        }
        if let Some(kernels) = &self.kernels {
            let list: Vec<String> = kernels.iter().map(|k| format!("{k}")).collect();
            out.push_str(&format!("kernels={}\n", list.join(",")));
        }
        out.push_str(&format!("seed={}\n", self.seed));
        for (name, entry) in &self.sets {
            out.push_str(&format!("set.{name}.images={}\n", entry.images));
            out.push_str(&format!("set.{name}.labels={}\n", entry.labels));
            if let Some(z) = &entry.z {
                out.push_str(&format!("set.{name}.z={z}\n"));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Data(format!("manifest line {} is not key=value: {raw}", lineno + 1))
            })?;
            let bad = |what: &str| Error::Data(format!("manifest {key}: invalid {what}: {value}"));
            match key {
                "kind" => m.kind = value.to_string(),
                "feature_dim" => m.feature_dim = value.parse().map_err(|_| bad("integer"))?,
                "num_classes" => m.num_classes = value.parse().map_err(|_| bad("integer"))?,
                "z_classes" => m.z_classes = Some(value.parse().map_err(|_| bad("integer"))?),
                "seed" => m.seed = value.parse().map_err(|_| bad("integer"))?,
                "angles" => {
                    let parsed: std::result::Result<Vec<f32>, _> =
                        value.split(',').map(|v| v.trim().parse()).collect();
                    m.angles = Some(parsed.map_err(|_| bad("angle list"))?);
                }
                "kernels" => {
                    let parsed: std::result::Result<Vec<i32>, _> =
                        value.split(',').map(|v| v.trim().parse()).collect();
                    m.kernels = Some(parsed.map_err(|_| bad("kernel list"))?);
                }
                _ => {
                    if let Some(rest) = key.strip_prefix("set.") {
                        let (name, field) = rest.rsplit_once('.').ok_or_else(|| {
                            Error::Data(format!("manifest key {key} missing set field"))
                        })?;
                        let entry = m.sets.entry(name.to_string()).or_default();
                        match field {
                            "images" => entry.images = value.to_string(),
                            "labels" => entry.labels = value.to_string(),
                            "z" => entry.z = Some(value.to_string()),
                            other => {
                                return Err(Error::Data(format!(
                                    "unknown manifest set field '{other}'"
                                )))
                            }
                        }
                    } else {
                        return Err(Error::Data(format!("unknown manifest key '{key}'")));
                    }
                }
            }
        }
        if m.kind.is_empty() {
            return Err(Error::Data("manifest missing 'kind'".into()));
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::config::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Loads one named set, resolving file paths relative to `base_dir`.
    pub fn load_set(&self, base_dir: &Path, name: &str) -> Result<Dataset> {
        let entry = self
            .sets
            .get(name)
            .ok_or_else(|| Error::Data(format!("manifest has no set '{name}'")))?;
        let x = load_features(&base_dir.join(&entry.images))?;
        let y = load_labels(&base_dir.join(&entry.labels))?;
        let z = match &entry.z {
            Some(p) => Some(load_labels(&base_dir.join(p))?),
            None => None,
        };
        let z_classes = match (&z, self.z_classes) {
            (Some(_), Some(zc)) => Some(zc),
            (Some(zv), None) => Some(zv.iter().max().map_or(1, |&m| m + 1)),
            _ => None,
        };
        let split = if name.starts_with("train") { SplitTag::Train } else { SplitTag::Test };
        Dataset::new(x, y, z, self.num_classes, z_classes, split)
    }

    pub fn set_names(&self) -> impl Iterator<Item = &String> {
        self.sets.keys()
    }
}

/// Reads a feature IDX file: uint8 3-D images are scaled to [0,1] and
/// flattened per sample; float32 2-D matrices are taken as-is.
pub fn load_features(path: &Path) -> Result<Tensor> {
    match read_idx(path)? {
        IdxArray::U8 { dims, data } => {
            if dims.len() != 3 {
                return Err(Error::Data(format!(
                    "expected 3-D uint8 image file, got {} dims in {}",
                    dims.len(),
                    path.display()
                )));
            }
            let (n, d) = (dims[0], dims[1] * dims[2]);
            let scaled: Vec<f32> = data.iter().map(|&b| b as f32 / 255.0).collect();
            Tensor::new(vec![n, d], scaled)
        }
        IdxArray::F32 { dims, data } => {
            if dims.len() != 2 {
                return Err(Error::Data(format!(
                    "expected 2-D float32 feature file, got {} dims in {}",
                    dims.len(),
                    path.display()
                )));
            }
            Tensor::new(dims, data)
        }
    }
}

/// Reads a 1-D uint8 label IDX file.
pub fn load_labels(path: &Path) -> Result<Vec<u32>> {
    match read_idx(path)? {
        IdxArray::U8 { dims, data } => {
            if dims.len() != 1 {
                return Err(Error::Data(format!(
                    "expected 1-D label file, got {} dims in {}",
                    dims.len(),
                    path.display()
                )));
            }
            Ok(data.iter().map(|&b| b as u32).collect())
        }
        IdxArray::F32 { .. } => {
            Err(Error::Data(format!("label file {} must be uint8", path.display())))
        }
    }
}

/// Writes one dataset split as IDX files under `dir` and returns the
/// manifest entry. Image-shaped features become uint8 3-D files
/// (values quantized to 0..=255); other features become float32 2-D.
pub fn save_dataset(dir: &Path, name: &str, ds: &Dataset) -> Result<SetEntry> {
    std::fs::create_dir_all(dir)?;
    let n = ds.len();
    let d = ds.feature_dim();
    let images_name = format!("{name}-images.idx");
    let array = match ds.image_side() {
        Ok(side) if is_quantized_01(ds.features().data()) => IdxArray::U8 {
            dims: vec![n, side, side],
            data: ds
                .features()
                .data()
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
                .collect(),
        },
        _ => IdxArray::F32 { dims: vec![n, d], data: ds.features().data().to_vec() },
    };
    write_idx(&dir.join(&images_name), &array)?;

    let labels_name = format!("{name}-labels.idx");
    let y: Result<Vec<u8>> = ds
        .labels()
        .iter()
        .map(|&v| {
            u8::try_from(v).map_err(|_| Error::Data(format!("label {v} exceeds uint8 range")))
        })
        .collect();
    write_idx(&dir.join(&labels_name), &IdxArray::U8 { dims: vec![n], data: y? })?;

    let z_name = match ds.nuisance_labels() {
        Some(z) => {
            let name = format!("{name}-z.idx");
            let z8: Result<Vec<u8>> = z
                .iter()
                .map(|&v| {
                    u8::try_from(v)
                        .map_err(|_| Error::Data(format!("z label {v} exceeds uint8 range")))
                })
                .collect();
            write_idx(&dir.join(&name), &IdxArray::U8 { dims: vec![n], data: z8? })?;
            Some(name)
        }
        None => None,
    };
    Ok(SetEntry { images: images_name, labels: labels_name, z: z_name })
}

/// True when every value is (a rounding of) k/255 for integer k: such data
/// round-trips bit-exactly through uint8 quantization.
fn is_quantized_01(data: &[f32]) -> bool {
    data.iter().all(|&v| {
        if !(0.0..=1.0).contains(&v) {
            return false;
        }
        let k = (v * 255.0).round();
        (v - k / 255.0).abs() < 1e-7
    })
}

/// Loads the standard four-file MNIST layout from a directory.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let file = |names: &[&str]| -> Result<PathBuf> {
        for n in names {
            let p = dir.join(n);
            if p.exists() {
                return Ok(p);
            }
        }
        Err(Error::Data(format!(
            "missing MNIST file (tried {:?}) in {}",
            names,
            dir.display()
        )))
    };
    let train_x = load_features(&file(&["train-images-idx3-ubyte", "train-images.idx3-ubyte"])?)?;
    let train_y = load_labels(&file(&["train-labels-idx1-ubyte", "train-labels.idx1-ubyte"])?)?;
    let test_x = load_features(&file(&["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])?)?;
    let test_y = load_labels(&file(&["t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"])?)?;
    Ok((
        Dataset::new(train_x, train_y, None, 10, None, SplitTag::Train)?,
        Dataset::new(test_x, test_y, None, 10, None, SplitTag::Test)?,
    ))
}
