//! The `.wds` container shared by datasets, checkpoints and annotators.
//!
//! All integers and floats are little-endian. Every file opens with
//!
//! | bytes | field                                        |
//! |-------|----------------------------------------------|
//! | 4     | magic `WDS\0`                                |
//! | 2     | version, currently 1                         |
//! | 1     | payload kind: 1 dataset, 2 tensors           |
//!
//! A dataset payload continues with `num_classes: u32`, `ndim: u32`,
//! `ndim` dimensions as `u32`, `label_dim: u32`, `count: u64`,
//! `label_kind: u8`, the name as `u32` length plus UTF-8 bytes, then `count`
//! rows of `domain: u8`, the features as `f32` and the label as `label_dim`
//! `f32` values.
//!
//! A tensor payload continues with a UTF-8 JSON metadata block (`u32`
//! length first), `count: u32`, then per tensor its name, `dtype: u8`
//! (1 = `f32`, 2 = `f64`), `ndim: u32`, dimensions as `u64` and the data.
//! Checkpoints and annotators are tensor payloads told apart by metadata.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wal_core::annotate::{AnnotatorKind, AnnotatorModel, CorruptionTable, WeakAnnotator};
use wal_core::data::{Dataset, Domain, LabelKind, Sample};
use wal_core::nets::{ArchConfig, ModelTriple, NamedTensor};
use wal_core::nn::{Dense, Mlp};

pub const MAGIC: [u8; 4] = *b"WDS\0";
pub const VERSION: u16 = 1;
const KIND_DATASET: u8 = 1;
const KIND_TENSORS: u8 = 2;
const DTYPE_F32: u8 = 1;
const DTYPE_F64: u8 = 2;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, FormatError>;

impl From<wal_core::Error> for FormatError {
    fn from(e: wal_core::Error) -> Self {
        FormatError::Schema(e.to_string())
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn header(kind: u8) -> Self {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(&MAGIC);
        w.0.extend_from_slice(&VERSION.to_le_bytes());
        w.u8(kind);
        w
    }

    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("value fits the u32 header field");
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u32(s.len());
        self.0.extend_from_slice(s.as_bytes());
    }

    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(FormatError::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.buf.len() => {
                let out = &self.buf[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => self.err(format!(
                "unexpected end of file reading {what} ({n} bytes wanted, {} left)",
                self.buf.len() - self.pos
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| FormatError::Parse {
            offset: at,
            message: format!("{what} {v} does not fit in memory"),
        })
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)?;
        let at = self.pos;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| FormatError::Parse {
            offset: at,
            message: format!("{what} is not valid UTF-8"),
        })
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.saturating_mul(4), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.saturating_mul(8), what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, want: u8) -> Result<()> {
        if self.take(4, "magic")? != MAGIC {
            self.pos = 0;
            return self.err("bad magic, not a .wds file");
        }
        let version = self.u16("version")?;
        if version != VERSION {
            self.pos -= 2;
            return self.err(format!("unsupported version {version}"));
        }
        let kind = self.u8("payload kind")?;
        if kind != want {
            self.pos -= 1;
            return self.err(format!("payload kind {kind}, expected {want}"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return self.err(format!("{} trailing bytes", self.buf.len() - self.pos));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| FormatError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = Writer::header(KIND_DATASET);
    w.u32(ds.num_classes());
    w.u32(ds.shape().len());
    for &d in ds.shape() {
        w.u32(d);
    }
    w.u32(ds.num_classes());
    w.u64(ds.len());
    w.u8(ds.label_kind().tag());
    w.str(ds.name());
    for s in ds.samples() {
        w.u8(s.domain.tag());
        w.f32s(&s.x);
        w.f32s(&s.y);
    }
    w.0
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    r.header(KIND_DATASET)?;
    let num_classes = r.u32("num_classes")?;
    let ndim = r.u32("ndim")?;
    let shape = (0..ndim)
        .map(|_| r.u32("shape dimension"))
        .collect::<Result<Vec<_>>>()?;
    let label_dim = r.u32("label_dim")?;
    if label_dim != num_classes {
        return Err(FormatError::Schema(format!(
            "header declares {num_classes} classes but labels of length {label_dim}"
        )));
    }
    let count = r.u64("count")?;
    let at = r.pos;
    let kind_tag = r.u8("label kind")?;
    let kind = LabelKind::from_tag(kind_tag).ok_or_else(|| FormatError::Parse {
        offset: at,
        message: format!("unknown label kind {kind_tag}"),
    })?;
    let name = r.str("name")?;
    let dim: usize = shape.iter().product();
    let row = 1 + 4 * (dim + label_dim);
    if count.checked_mul(row).is_none_or(|n| n > buf.len() - r.pos) {
        return r.err(format!(
            "header promises {count} rows of {row} bytes, {} bytes remain",
            buf.len() - r.pos
        ));
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let tag = r.u8("domain")?;
        let domain = Domain::from_tag(tag).ok_or_else(|| FormatError::Parse {
            offset: at,
            message: format!("unknown domain tag {tag}"),
        })?;
        let x = r.f32s(dim, "features")?;
        let y = r.f32s(label_dim, "label")?;
        samples.push(Sample::new(x, y, domain));
    }
    r.finish()?;
    Ok(Dataset::new(name, num_classes, shape, kind, samples)?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?)
}

/// Metadata plus named tensors: the shape of checkpoints and annotators.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

pub fn encode_tensors(file: &TensorFile) -> Vec<u8> {
    let mut w = Writer::header(KIND_TENSORS);
    w.str(&file.meta.to_string());
    w.u32(file.tensors.len());
    for t in &file.tensors {
        w.str(&t.name);
        w.u8(DTYPE_F64);
        w.u32(t.shape.len());
        for &d in &t.shape {
            w.u64(d);
        }
        w.f64s(&t.data);
    }
    w.0
}

pub fn decode_tensors(buf: &[u8]) -> Result<TensorFile> {
    let mut r = Reader { buf, pos: 0 };
    r.header(KIND_TENSORS)?;
    let at = r.pos;
    let meta_text = r.str("metadata")?;
    let meta = serde_json::from_str(&meta_text).map_err(|e| FormatError::Parse {
        offset: at + 4,
        message: format!("metadata is not JSON: {e}"),
    })?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let at = r.pos;
        let dtype = r.u8("dtype")?;
        let ndim = r.u32("tensor ndim")?;
        let shape = (0..ndim)
            .map(|_| r.u64("tensor dimension"))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| FormatError::Parse {
                offset: at,
                message: format!("tensor `{name}` shape overflows"),
            })?;
        let data = match dtype {
            DTYPE_F32 => r.f32s(n, "tensor data")?.into_iter().map(f64::from).collect(),
            DTYPE_F64 => r.f64s(n, "tensor data")?,
            other => {
                r.pos = at;
                return r.err(format!("unknown dtype {other}"));
            }
        };
        tensors.push(NamedTensor { name, shape, data });
    }
    r.finish()?;
    Ok(TensorFile { meta, tensors })
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    arch: ArchConfig,
    input_dim: usize,
    num_classes: usize,
    init_seed: u64,
}

pub fn encode_checkpoint(m: &ModelTriple) -> Vec<u8> {
    let meta = CheckpointMeta {
        format: "checkpoint".into(),
        arch: m.arch.clone(),
        input_dim: m.input_dim,
        num_classes: m.num_classes,
        init_seed: m.init_seed,
    };
    encode_tensors(&TensorFile {
        meta: serde_json::to_value(meta).expect("metadata serialises"),
        tensors: m.named_tensors(),
    })
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ModelTriple> {
    let file = decode_tensors(buf)?;
    let meta: CheckpointMeta = serde_json::from_value(file.meta)
        .map_err(|e| FormatError::Schema(format!("checkpoint metadata: {e}")))?;
    if meta.format != "checkpoint" {
        return Err(FormatError::Schema(format!("expected a checkpoint, found `{}`", meta.format)));
    }
    let mut m = ModelTriple::new(meta.arch, meta.input_dim, meta.num_classes, meta.init_seed)?;
    m.load_named_tensors(&file.tensors)?;
    Ok(m)
}

pub fn save_checkpoint(m: &ModelTriple, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(m))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelTriple> {
    decode_checkpoint(&read_file(path)?)
}

#[derive(Serialize, Deserialize)]
struct AnnotatorMeta {
    format: String,
    kind: AnnotatorKind,
    descriptor: String,
    num_classes: usize,
    input_dim: usize,
    hard: bool,
    model: String,
    #[serde(default)]
    relu_output: bool,
    #[serde(default)]
    sharpness: f64,
}

pub fn encode_annotator(a: &WeakAnnotator) -> Vec<u8> {
    let (model, relu_output, sharpness, tensors) = match &a.model {
        AnnotatorModel::Network(mlp) => {
            let mut tensors = Vec::new();
            for (i, l) in mlp.layers.iter().enumerate() {
                tensors.push(NamedTensor {
                    name: format!("layer.{i}.weight"),
                    shape: vec![l.out_dim, l.in_dim],
                    data: l.weight.clone(),
                });
                tensors.push(NamedTensor {
                    name: format!("layer.{i}.bias"),
                    shape: vec![l.out_dim],
                    data: l.bias.clone(),
                });
            }
            ("network", mlp.relu_output, 0.0, tensors)
        }
        AnnotatorModel::Corruption(t) => {
            let features = NamedTensor {
                name: "features".into(),
                shape: vec![t.features.len(), a.input_dim],
                data: t.features.iter().flatten().map(|&v| f64::from(v)).collect(),
            };
            let classes = NamedTensor {
                name: "classes".into(),
                shape: vec![t.classes.len()],
                data: t.classes.iter().map(|&c| c as f64).collect(),
            };
            ("corruption", false, t.sharpness, vec![features, classes])
        }
        AnnotatorModel::Constant(v) => (
            "constant",
            false,
            0.0,
            vec![NamedTensor {
                name: "output".into(),
                shape: vec![v.len()],
                data: v.clone(),
            }],
        ),
    };
    let meta = AnnotatorMeta {
        format: "annotator".into(),
        kind: a.kind,
        descriptor: a.descriptor.clone(),
        num_classes: a.num_classes,
        input_dim: a.input_dim,
        hard: a.hard,
        model: model.into(),
        relu_output,
        sharpness,
    };
    encode_tensors(&TensorFile {
        meta: serde_json::to_value(meta).expect("metadata serialises"),
        tensors,
    })
}

fn tensor<'a>(tensors: &'a [NamedTensor], name: &str) -> Result<&'a NamedTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| FormatError::Schema(format!("missing tensor `{name}`")))
}

pub fn decode_annotator(buf: &[u8]) -> Result<WeakAnnotator> {
    let file = decode_tensors(buf)?;
    let meta: AnnotatorMeta = serde_json::from_value(file.meta)
        .map_err(|e| FormatError::Schema(format!("annotator metadata: {e}")))?;
    if meta.format != "annotator" {
        return Err(FormatError::Schema(format!("expected an annotator, found `{}`", meta.format)));
    }
    let t = &file.tensors;
    let model = match meta.model.as_str() {
        "network" => {
            let mut layers = Vec::new();
            for i in 0..t.len() / 2 {
                let w = tensor(t, &format!("layer.{i}.weight"))?;
                let b = tensor(t, &format!("layer.{i}.bias"))?;
                let [out_dim, in_dim] = w.shape[..] else {
                    return Err(FormatError::Schema(format!("`{}` is not a matrix", w.name)));
                };
                if b.shape != [out_dim] {
                    return Err(FormatError::Schema(format!("`{}` does not match `{}`", b.name, w.name)));
                }
                layers.push(Dense {
                    in_dim,
                    out_dim,
                    weight: w.data.clone(),
                    bias: b.data.clone(),
                });
            }
            let chained = layers.windows(2).all(|p| p[0].out_dim == p[1].in_dim);
            match (layers.first(), layers.last()) {
                (Some(f), Some(l)) if chained && f.in_dim == meta.input_dim && l.out_dim == meta.num_classes => {}
                _ => return Err(FormatError::Schema("annotator layers do not chain".into())),
            }
            AnnotatorModel::Network(Mlp {
                layers,
                relu_output: meta.relu_output,
            })
        }
        "corruption" => {
            let f = tensor(t, "features")?;
            let c = tensor(t, "classes")?;
            if f.shape.len() != 2 || f.shape[1] != meta.input_dim {
                return Err(FormatError::Schema("corruption features have the wrong width".into()));
            }
            let features = f
                .data
                .chunks_exact(meta.input_dim.max(1))
                .map(|r| r.iter().map(|&v| v as f32).collect())
                .collect();
            let mut classes = Vec::with_capacity(c.data.len());
            for &v in &c.data {
                if v < 0.0 || v.fract() != 0.0 || v as usize >= meta.num_classes {
                    return Err(FormatError::Schema(format!("corruption class {v} out of range")));
                }
                classes.push(v as usize);
            }
            AnnotatorModel::Corruption(CorruptionTable::new(features, classes, meta.sharpness)?)
        }
        "constant" => {
            let o = tensor(t, "output")?;
            if o.data.len() != meta.num_classes {
                return Err(FormatError::Schema("constant output has the wrong width".into()));
            }
            AnnotatorModel::Constant(o.data.clone())
        }
        other => return Err(FormatError::Schema(format!("unknown annotator model `{other}`"))),
    };
    Ok(WeakAnnotator {
        kind: meta.kind,
        descriptor: meta.descriptor,
        num_classes: meta.num_classes,
        input_dim: meta.input_dim,
        hard: meta.hard,
        model,
    })
}

pub fn save_annotator(a: &WeakAnnotator, path: &Path) -> Result<()> {
    write_file(path, &encode_annotator(a))
}

pub fn load_annotator(path: &Path) -> Result<WeakAnnotator> {
    decode_annotator(&read_file(path)?)
}
