//! Condition tokens `[S_c, F_q]` and the per-class average measurement
//! codebook.

use std::fmt::Write as _;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::Linear;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::measurements::{MeasurementVector, NUM_MEASUREMENTS};
use crate::nn::{LayerNorm, ParamStore};

/// Where a measurement embedding's input vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Extracted,
    Codebook,
    /// Ablation: constant vector independent of the image.
    Fixed,
}

/// Encoded measurement token `F_q`, shape `(width,)` or `(N, width)`.
#[derive(Debug, Clone)]
pub struct ConditionEmbedding {
    pub f_q: Tensor,
    pub source: EmbeddingSource,
}

/// `F_q = SiLU(LayerNorm(W v + b))`.
#[derive(Debug, Clone)]
pub struct MeasurementEncoder {
    proj: Linear,
    norm: LayerNorm,
    in_dim: usize,
    width: usize,
}

impl MeasurementEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, in_dim: usize, width: usize) -> Result<Self> {
        Ok(Self {
            proj: store.linear(&format!("{prefix}.proj"), in_dim, width)?,
            norm: store.layer_norm(&format!("{prefix}.norm"), width)?,
            in_dim,
            width,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Batched form: `(N, in_dim)` → `(N, width)`.
    pub fn forward(&self, v: &Tensor) -> Result<Tensor> {
        let (_, d) = v.dims2()?;
        if d != self.in_dim {
            return Err(shape_err!("measurement vector has {d} dims, encoder expects {}", self.in_dim));
        }
        Ok(self.norm.forward(&self.proj.forward(v)?)?.silu()?)
    }

    /// Encode one normalised measurement vector.
    pub fn encode(&self, v: &[f64], source: EmbeddingSource, device: &Device) -> Result<ConditionEmbedding> {
        if v.len() != self.in_dim {
            return Err(shape_err!(
                "measurement vector has {} dims, encoder expects {}",
                v.len(),
                self.in_dim
            ));
        }
        let dtype = self.proj.weight().dtype();
        let t = Tensor::from_vec(v.to_vec(), (1, self.in_dim), device)?.to_dtype(dtype)?;
        Ok(ConditionEmbedding {
            f_q: self.forward(&t)?.squeeze(0)?,
            source,
        })
    }
}

/// Learned class embedding matrix `S` (classes × width).
#[derive(Debug, Clone)]
pub struct ClassEmbeddingTable {
    table: Tensor,
}

impl ClassEmbeddingTable {
    pub fn new(store: &mut ParamStore, name: &str, num_classes: usize, width: usize) -> Result<Self> {
        Ok(Self {
            table: store.normal(name, &[num_classes, width], 0.02)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.table.dims()[1]
    }

    /// Rows for a batch of labels, `(N, width)`.
    pub fn rows(&self, classes: &[usize]) -> Result<Tensor> {
        for &c in classes {
            if c >= self.num_classes() {
                return Err(invalid!("class {c} out of range for {} classes", self.num_classes()));
            }
        }
        let idx: Vec<u32> = classes.iter().map(|&c| c as u32).collect();
        let idx = Tensor::new(idx.as_slice(), self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?)
    }
}

/// The two-token prefix, `(2, width)` for one sample or `(N, 2, width)`.
#[derive(Debug, Clone)]
pub struct ConditionTokens(pub Tensor);

impl ConditionTokens {
    pub fn len(&self) -> usize {
        let dims = self.0.dims();
        dims[dims.len() - 2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_condition_tokens(
    table: &ClassEmbeddingTable,
    class: usize,
    f_q: &ConditionEmbedding,
) -> Result<ConditionTokens> {
    let s = table.rows(&[class])?;
    let f = f_q.f_q.reshape((1, ()))?;
    if f.dims()[1] != table.width() {
        return Err(shape_err!(
            "F_q width {} differs from class embedding width {}",
            f.dims()[1],
            table.width()
        ));
    }
    Ok(ConditionTokens(Tensor::cat(&[&s, &f], 0)?))
}

/// Batched variant: `(N, 2, width)` from labels and `(N, width)` embeddings.
pub fn build_condition_batch(table: &ClassEmbeddingTable, classes: &[usize], f_q: &Tensor) -> Result<ConditionTokens> {
    let s = table.rows(classes)?;
    if s.dims() != f_q.dims() {
        return Err(shape_err!("class rows {:?} vs F_q {:?}", s.dims(), f_q.dims()));
    }
    Ok(ConditionTokens(Tensor::stack(&[&s, f_q], 1)?))
}

/// Per-class running mean of raw (unnormalised) measurement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementCodebook {
    class_names: Vec<String>,
    dim: usize,
    counts: Vec<u64>,
    means: Vec<Vec<f64>>,
}

impl MeasurementCodebook {
    pub fn new(class_names: Vec<String>, dim: usize) -> Self {
        let n = class_names.len();
        Self {
            class_names,
            dim,
            counts: vec![0; n],
            means: vec![vec![0.0; dim]; n],
        }
    }

    /// Codebook over the canonical measurement vector.
    pub fn for_measurements(class_names: Vec<String>) -> Self {
        Self::new(class_names, NUM_MEASUREMENTS)
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn update(&mut self, class: usize, v: &[f64]) -> Result<()> {
        if class >= self.num_classes() {
            return Err(invalid!("class {class} out of range for {} classes", self.num_classes()));
        }
        if v.len() != self.dim {
            return Err(shape_err!("codebook holds {}-dim vectors, got {}", self.dim, v.len()));
        }
        let n = self.counts[class] as f64;
        for (m, &x) in self.means[class].iter_mut().zip(v) {
            *m = (n * *m + x) / (n + 1.0);
        }
        self.counts[class] += 1;
        Ok(())
    }

    pub fn query(&self, class: usize) -> Result<&[f64]> {
        if class >= self.num_classes() {
            return Err(invalid!("class {class} out of range for {} classes", self.num_classes()));
        }
        if self.counts[class] == 0 {
            return Err(Error::EmptyClass(class));
        }
        Ok(&self.means[class])
    }

    pub fn query_measurements(&self, class: usize) -> Result<MeasurementVector> {
        MeasurementVector::from_slice(self.query(class)?)
    }

    /// CSV text: `class,count,m0..m{d-1}` with 17 significant digits so the
    /// values round-trip exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::from("class,count");
        for i in 0..self.dim {
            let _ = write!(s, ",m{i}");
        }
        s.push('\n');
        for ((name, count), mean) in self.class_names.iter().zip(&self.counts).zip(&self.means) {
            let _ = write!(s, "{name},{count}");
            for v in mean {
                let _ = write!(s, ",{v:.16e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "empty codebook file".into()))?;
        let dim = header.split(',').count().saturating_sub(2);
        let mut names = Vec::new();
        let mut counts = Vec::new();
        let mut means = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(parse_err(i + 2, format!("expected {} fields, found {}", dim + 2, fields.len())));
            }
            names.push(fields[0].to_string());
            counts.push(
                fields[1]
                    .parse::<u64>()
                    .map_err(|e| parse_err(i + 2, format!("count: {e}")))?,
            );
            let m = fields[2..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| parse_err(i + 2, format!("{f}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            means.push(m);
        }
        Ok(Self {
            class_names: names,
            dim,
            counts,
            means,
        })
    }
}

/// A standalone encoder + class table, used where the conditioning path is
/// needed outside a full generator (tests, ablation checks).
pub fn standalone_encoder(seed: u64, width: usize, dtype: DType, device: &Device) -> Result<MeasurementEncoder> {
    let mut store = ParamStore::new(seed, dtype, device);
    MeasurementEncoder::new(&mut store, "measure", NUM_MEASUREMENTS, width)
}
