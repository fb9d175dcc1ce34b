//! Data ingestion, raw tensor and checkpoint files, and report persistence.
//!
//! Raw tensors and checkpoints are a JSON header next to a flat little-endian payload:
//! `name.json` describes `name.bin`.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use imprint_core::imprint::Activation;
use imprint_core::model::{Batch, Bridge, FrontStage, Head, ImprintLayer, ModelGraph};
use imprint_core::numerics::rand_gaussian;
use imprint_core::pipeline::streams;
use imprint_core::{Real, RngStream, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Core(#[from] imprint_core::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Malformed {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    #[default]
    None,
    /// Per feature to zero mean, unit standard deviation.
    Standardize,
    /// Per feature to `[0, 1]`.
    UnitRange,
}

/// Per-feature affine map `x' = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub kind: NormalizationKind,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalization {
    pub fn fit<T: Real>(kind: NormalizationKind, x: &Tensor<T>) -> Self {
        let (n, m) = (x.rows(), x.cols());
        let col = |j: usize| (0..n).map(move |i| x.get(i, j).to_f64());
        let (shift, scale) = match kind {
            NormalizationKind::None => (vec![0.0; m], vec![1.0; m]),
            NormalizationKind::Standardize => (0..m)
                .map(|j| {
                    let mean = col(j).sum::<f64>() / n as f64;
                    let var = col(j).map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    (mean, if var > 0.0 { var.sqrt() } else { 1.0 })
                })
                .unzip(),
            NormalizationKind::UnitRange => (0..m)
                .map(|j| {
                    let lo = col(j).fold(f64::INFINITY, f64::min);
                    let hi = col(j).fold(f64::NEG_INFINITY, f64::max);
                    (lo, if hi > lo { hi - lo } else { 1.0 })
                })
                .unzip(),
        };
        Self { kind, shift, scale }
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.map(x, |v, s, c| (v - s) / c)
    }

    pub fn invert<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        self.map(x, |v, s, c| v * c + s)
    }

    fn map<T: Real>(&self, x: &Tensor<T>, f: impl Fn(f64, f64, f64) -> f64) -> Tensor<T> {
        if self.kind == NormalizationKind::None {
            return x.clone();
        }
        let m = x.cols();
        let data = x
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| T::from_f64(f(v.to_f64(), self.shift[i % m], self.scale[i % m])))
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("same shape")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    SyntheticGaussian {
        m: usize,
        n: usize,
    },
    Csv {
        path: PathBuf,
        /// Feature columns by header name; all columns except the label when absent.
        #[serde(default)]
        columns: Option<Vec<String>>,
        #[serde(default)]
        label_column: Option<String>,
    },
    RawTensor {
        /// Header path (`.json`); the payload is the sibling `.bin`.
        path: PathBuf,
    },
    TokenSequences {
        vocab: usize,
        dim: usize,
        seq_len: usize,
        n: usize,
        /// Raw tensor holding the `vocab x dim` embedding table; random when absent.
        #[serde(default)]
        embedding: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default)]
    pub normalization: NormalizationKind,
    /// Number of label classes; labels are drawn uniformly when the source has none.
    #[serde(default = "default_labels")]
    pub labels: usize,
}

fn default_labels() -> usize {
    10
}

/// Loaded data plus what is needed to interpret it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub batch: Batch<T>,
    pub normalization: Normalization,
    /// Token ids per sequence, for token data.
    pub tokens: Option<Vec<Vec<usize>>>,
    pub embedding: Option<Tensor<T>>,
}

fn random_labels(n: usize, classes: usize, stream: RngStream) -> Vec<usize> {
    let mut s = stream.sampler();
    (0..n).map(|_| s.below(classes as u64) as usize).collect()
}

/// Load a dataset; randomness comes from `stream` (derived per subsystem).
pub fn load<T: Real>(spec: &DatasetSpec, stream: RngStream) -> Result<Dataset<T>> {
    if spec.labels == 0 {
        return Err(DataError::Dimension("labels must be >= 1".into()));
    }
    let label_stream = stream.derive(streams::LABELS);
    let mut tokens = None;
    let mut embedding = None;
    let (x, labels) = match &spec.kind {
        DatasetKind::SyntheticGaussian { m, n } => {
            if *m == 0 || *n == 0 {
                return Err(DataError::Dimension("synthetic data needs m, n >= 1".into()));
            }
            let x = rand_gaussian::<f64>(stream.derive(streams::DATA), &[*n, *m]).cast();
            (x, random_labels(*n, spec.labels, label_stream))
        }
        DatasetKind::Csv {
            path,
            columns,
            label_column,
        } => {
            let (x, labels) = read_csv(path, columns.as_deref(), label_column.as_deref())?;
            let n = x.rows();
            let labels = match labels {
                Some(l) => {
                    if let Some(bad) = l.iter().find(|&&v| v >= spec.labels) {
                        return Err(malformed(path, format!("label {bad} outside 0..{}", spec.labels)));
                    }
                    l
                }
                None => random_labels(n, spec.labels, label_stream),
            };
            (x, labels)
        }
        DatasetKind::RawTensor { path } => {
            let x: Tensor<T> = load_raw_tensor(path)?;
            if x.shape().len() != 2 {
                return Err(DataError::Dimension(format!("raw tensor must be n x m, got {:?}", x.shape())));
            }
            let n = x.rows();
            (x, random_labels(n, spec.labels, label_stream))
        }
        DatasetKind::TokenSequences {
            vocab,
            dim,
            seq_len,
            n,
            embedding: table_path,
        } => {
            let table: Tensor<T> = match table_path {
                Some(p) => load_raw_tensor(p)?,
                None => rand_gaussian::<f64>(stream.derive(streams::EMBEDDING), &[*vocab, *dim]).cast(),
            };
            if table.shape() != [*vocab, *dim] {
                return Err(DataError::Dimension(format!(
                    "embedding table {:?}, expected [{vocab}, {dim}]",
                    table.shape()
                )));
            }
            let mut s = stream.derive(streams::DATA).sampler();
            let seqs: Vec<Vec<usize>> = (0..*n)
                .map(|_| (0..*seq_len).map(|_| s.below(*vocab as u64) as usize).collect())
                .collect();
            let mut data = Vec::with_capacity(n * seq_len * dim);
            for seq in &seqs {
                for &t in seq {
                    data.extend_from_slice(table.row(t));
                }
            }
            let x = Tensor::new(vec![*n, seq_len * dim], data)?;
            tokens = Some(seqs);
            embedding = Some(table);
            (x, random_labels(*n, spec.labels, label_stream))
        }
    };
    if !x.all_finite() {
        return Err(DataError::Dimension("data contains non-finite values".into()));
    }
    let normalization = Normalization::fit(spec.normalization, &x);
    let x = normalization.apply(&x);
    Ok(Dataset {
        batch: Batch::new(x, Some(labels))?,
        normalization,
        tokens,
        embedding,
    })
}

/// Numeric CSV with a header row. Errors name the 1-based data row and column.
pub fn read_csv<T: Real>(
    path: &Path,
    columns: Option<&[String]>,
    label_column: Option<&str>,
) -> Result<(Tensor<T>, Option<Vec<usize>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| malformed(path, e.to_string()))?;
    let headers = rdr.headers().map_err(|e| malformed(path, e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| malformed(path, format!("no column named '{name}'")))
    };
    let label_idx = label_column.map(find).transpose()?;
    let feature_idx: Vec<usize> = match columns {
        Some(cols) => cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| Some(i) != label_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(malformed(path, "no feature columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| malformed(path, format!("row {}: {e}", r + 1)))?;
        for &j in &feature_idx {
            let cell = rec.get(j).unwrap_or("").trim();
            let v: f64 = cell.parse().map_err(|_| {
                malformed(path, format!("row {}, column '{}': '{cell}' is not a number", r + 1, &headers[j]))
            })?;
            data.push(T::from_f64(v));
        }
        if let Some(j) = label_idx {
            let cell = rec.get(j).unwrap_or("").trim();
            labels.push(cell.parse::<usize>().map_err(|_| {
                malformed(path, format!("row {}, column '{}': '{cell}' is not a label", r + 1, &headers[j]))
            })?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(malformed(path, "no data rows"));
    }
    let x = Tensor::new(vec![rows, feature_idx.len()], data)?;
    Ok((x, label_idx.map(|_| labels)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawHeader {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub endianness: String,
}

fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

fn write_le<T: Real>(data: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * T::BYTES);
    for v in data {
        v.write_le(&mut out);
    }
    out
}

fn read_le<T: Real>(bytes: &[u8], path: &Path) -> Result<Vec<T>> {
    if bytes.len() % T::BYTES != 0 {
        return Err(malformed(path, format!("payload length {} is not a multiple of {}", bytes.len(), T::BYTES)));
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

/// Write `path` (header) and its `.bin` payload.
pub fn save_raw_tensor<T: Real>(t: &Tensor<T>, path: &Path) -> Result<()> {
    let header = RawHeader {
        dtype: T::DTYPE.into(),
        shape: t.shape().to_vec(),
        endianness: "little".into(),
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, text).map_err(io_err(path))?;
    let bin = payload_path(path);
    fs::write(&bin, write_le(t.data())).map_err(io_err(&bin))
}

pub fn load_raw_tensor<T: Real>(path: &Path) -> Result<Tensor<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let header: RawHeader = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if header.endianness != "little" {
        return Err(malformed(path, format!("unsupported endianness '{}'", header.endianness)));
    }
    if header.dtype != T::DTYPE {
        return Err(malformed(path, format!("dtype '{}' but '{}' was requested", header.dtype, T::DTYPE)));
    }
    let bin = payload_path(path);
    let mut bytes = Vec::new();
    fs::File::open(&bin)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(&bin))?;
    let data = read_le::<T>(&bytes, &bin)?;
    let expected: usize = header.shape.iter().product();
    if data.len() != expected {
        return Err(malformed(&bin, format!("{} values for shape {:?}", data.len(), header.shape)));
    }
    Ok(Tensor::new(header.shape, data)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FrontEntry {
    Identity,
    AvgPool(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    id: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    dtype: String,
    endianness: String,
    front: Vec<FrontEntry>,
    /// `relu` or `hard_threshold` when an imprint layer is present.
    imprint: Option<String>,
    bridge: String,
    labels: usize,
    tensors: Vec<TensorEntry>,
}

/// Model checkpoint: header at `path`, all parameters flat in the `.bin` sibling.
pub fn save_checkpoint<T: Real>(model: &ModelGraph<T>, path: &Path) -> Result<()> {
    let params = model.params();
    let mut offset = 0;
    let mut tensors = Vec::new();
    let mut flat = Vec::new();
    for (id, t) in params.iter() {
        tensors.push(TensorEntry {
            id: id.to_string(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        flat.extend_from_slice(t.data());
    }
    let header = CheckpointHeader {
        dtype: T::DTYPE.into(),
        endianness: "little".into(),
        front: model
            .front
            .iter()
            .map(|s| match *s {
                FrontStage::Identity => FrontEntry::Identity,
                FrontStage::AvgPool(f) => FrontEntry::AvgPool(f),
            })
            .collect(),
        imprint: model.imprint.as_ref().map(|l| match l.activation {
            Activation::Relu => "relu".into(),
            Activation::HardThreshold => "hard_threshold".into(),
        }),
        bridge: match model.bridge {
            Bridge::Sum => "sum".into(),
            Bridge::IdenticalRow { .. } => "identical_row".into(),
        },
        labels: model.head.labels,
        tensors,
    };
    let text = serde_json::to_string_pretty(&header).expect("header serializes");
    fs::write(path, text).map_err(io_err(path))?;
    let bin = payload_path(path);
    fs::write(&bin, write_le(&flat)).map_err(io_err(&bin))
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<ModelGraph<T>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let h: CheckpointHeader = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if h.dtype != T::DTYPE || h.endianness != "little" {
        return Err(malformed(path, format!("checkpoint is {} {}-endian", h.dtype, h.endianness)));
    }
    let bin = payload_path(path);
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let flat = read_le::<T>(&bytes, &bin)?;
    let get = |id: &str| -> Result<Tensor<T>> {
        let e = h
            .tensors
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| malformed(path, format!("missing tensor '{id}'")))?;
        let len: usize = e.shape.iter().product();
        let slice = flat
            .get(e.offset..e.offset + len)
            .ok_or_else(|| malformed(&bin, format!("tensor '{id}' runs past the payload")))?;
        Ok(Tensor::new(e.shape.clone(), slice.to_vec())?)
    };
    use imprint_core::model::{BRIDGE_BIAS, BRIDGE_SCALE, HEAD_BIAS, HEAD_WEIGHT, IMPRINT_BIAS, IMPRINT_WEIGHT};
    let imprint = match h.imprint.as_deref() {
        None => None,
        Some(kind) => Some(ImprintLayer {
            weight: get(IMPRINT_WEIGHT)?,
            bias: get(IMPRINT_BIAS)?,
            activation: match kind {
                "relu" => Activation::Relu,
                "hard_threshold" => Activation::HardThreshold,
                other => return Err(malformed(path, format!("unknown imprint '{other}'"))),
            },
        }),
    };
    let bridge = match h.bridge.as_str() {
        "sum" => Bridge::Sum,
        "identical_row" => Bridge::IdenticalRow {
            scale: get(BRIDGE_SCALE)?,
            bias: get(BRIDGE_BIAS)?,
        },
        other => return Err(malformed(path, format!("unknown bridge '{other}'"))),
    };
    let head = Head {
        weight: get(HEAD_WEIGHT)?,
        bias: get(HEAD_BIAS)?,
        labels: h.labels,
    };
    let front = h
        .front
        .iter()
        .map(|f| match *f {
            FrontEntry::Identity => FrontStage::Identity,
            FrontEntry::AvgPool(k) => FrontStage::AvgPool(k),
        })
        .collect();
    Ok(ModelGraph::new(front, imprint, bridge, head)?)
}

/// Write canonical JSON (sorted keys, two-space indent, trailing newline).
pub fn save_report(report: &serde_json::Value, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("value serializes");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}
