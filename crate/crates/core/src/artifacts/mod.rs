//! On-disk store for per-checkpoint training artifacts.
//!
//! Layout under the store root:
//!
//! ```text
//! manifest.json
//! checkpoints/c000000/gradients.ifas    ragged f32, one len×d matrix per example
//! checkpoints/c000000/layer_grads.ifas  f32 N × P
//! checkpoints/c000000/logits.ifas       f32 N × K
//! checkpoints/c000000/predictions.ifas  u32 N
//! checkpoints/c00000k/moments_mean.ifas    ragged f64 (reduced capture, latest checkpoint only)
//! checkpoints/c00000k/moments_mean_sq.ifas
//! trace.bin                             prediction trace
//! ```
//!
//! `trace.bin` starts with `"IFAT1"` and a u32 example count, followed by one
//! record per logged step: u64 step, then one u32 predicted class per example.
//!
//! A checkpoint is written into a `.tmp` directory, renamed into place, and
//! only then listed in the manifest, which is itself replaced by rename. A
//! checkpoint directory not listed in the manifest is the leftover of an
//! interrupted append and is ignored.

pub mod tensor_file;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::trainer::{GradCapture, LayerRef, ModelConfig, TrainSchedule};
use crate::{Error, Result};
pub use tensor_file::{Ragged, Tensor};
use tensor_file::{read_ragged, read_tensor, write_atomic, write_ragged, write_tensor};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "influence-lab-store/1";
const TRACE: &str = "trace.bin";
const TRACE_MAGIC: &[u8; 5] = b"IFAT1";
pub const DEFAULT_BUDGET_BYTES: u64 = 4 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaptureMode {
    /// Every checkpoint's full per-example G matrices.
    #[default]
    Full,
    /// Only the running per-element mean and mean of squares of G across
    /// checkpoints. Enough for VoG, not for replaying individual checkpoints.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CaptureSettings {
    pub gradients: bool,
    pub layer_grads: bool,
    pub layer: LayerRef,
    pub mode: CaptureMode,
    /// Cap on `N · max_len · d · N_c · 4` bytes of stored gradients.
    pub budget_bytes: u64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        CaptureSettings {
            gradients: true,
            layer_grads: true,
            layer: LayerRef::LastHidden,
            mode: CaptureMode::Full,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub seed: u64,
    pub schedule: TrainSchedule,
    pub model: ModelConfig,
    /// Gold label per example id.
    pub labels: Vec<usize>,
    pub token_lengths: Vec<usize>,
    /// Length of a flattened layer gradient (weight, then bias).
    pub layer_dim: usize,
    pub expected_checkpoints: usize,
}

impl StoreHeader {
    pub fn num_examples(&self) -> usize {
        self.labels.len()
    }

    /// Bytes of full gradient capture: `N · max_len · d · N_c · 4`.
    pub fn full_gradient_bytes(&self) -> u64 {
        let max_len = self.token_lengths.iter().copied().max().unwrap_or(0) as u64;
        self.num_examples() as u64
            * max_len
            * self.model.embed_dim as u64
            * self.expected_checkpoints as u64
            * 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: usize,
    /// Fractional epoch, `step / steps_per_epoch`.
    pub epoch: f64,
    /// Step size in effect at this checkpoint (TracIn's η).
    pub learning_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub index: usize,
    #[serde(flatten)]
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    #[serde(default)]
    pub header: Option<StoreHeader>,
    #[serde(default)]
    pub checkpoints: Vec<CheckpointEntry>,
    #[serde(default)]
    pub trace_steps: Vec<usize>,
    #[serde(default)]
    pub closed: bool,
}

impl Manifest {
    fn empty() -> Self {
        Manifest {
            format: FORMAT.to_string(),
            header: None,
            checkpoints: Vec::new(),
            trace_steps: Vec::new(),
            closed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StoreMode {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Gradients,
    LayerGrads,
    Logits,
    Predictions,
}

impl Field {
    fn file(self) -> &'static str {
        match self {
            Field::Gradients => "gradients.ifas",
            Field::LayerGrads => "layer_grads.ifas",
            Field::Logits => "logits.ifas",
            Field::Predictions => "predictions.ifas",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Gradients(Vec<Array2<f32>>),
    LayerGrads(Array2<f32>),
    Logits(Array2<f32>),
    Predictions(Vec<u32>),
}

/// Per-element first and second moments of G across the checkpoints seen.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Ragged<f64>,
    pub mean_sq: Ragged<f64>,
}

/// Predicted classes at every logged step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub steps: Vec<usize>,
    /// `predicted[t][i]`: class predicted for example `i` at `steps[t]`.
    pub predicted: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
}

impl PredictionTrace {
    pub fn new(steps: Vec<usize>, predicted: Vec<Vec<u32>>, labels: Vec<usize>) -> Result<Self> {
        if steps.len() != predicted.len() {
            return Err(Error::invalid("one prediction row per logged step is required"));
        }
        if steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("trace steps must be strictly increasing"));
        }
        if predicted.iter().any(|r| r.len() != labels.len()) {
            return Err(Error::invalid("every trace row needs one prediction per example"));
        }
        Ok(PredictionTrace {
            steps,
            predicted,
            labels,
        })
    }

    pub fn num_examples(&self) -> usize {
        self.labels.len()
    }

    pub fn correct(&self, t: usize, i: usize) -> bool {
        self.predicted[t][i] as usize == self.labels[i]
    }
}

/// Points where an append can be made to fail, for crash simulation.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailPoint {
    /// After the checkpoint directory is in place and the new manifest is
    /// written to its temp file, before the rename.
    BeforeManifestRename,
}

#[derive(Debug)]
pub struct ArtifactStore {
    root: PathBuf,
    mode: StoreMode,
    manifest: Manifest,
    moments: Option<(Ragged<f64>, Ragged<f64>)>,
    fail: Option<FailPoint>,
}

fn ckpt_name(i: usize) -> String {
    format!("c{i:06}")
}

impl ArtifactStore {
    pub fn open(path: impl AsRef<Path>, mode: StoreMode) -> Result<Self> {
        match mode {
            StoreMode::Read => Self::open_read(path),
            StoreMode::Write => Self::create(path),
        }
    }

    /// Opens a new store for writing. The directory must be absent or empty.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        if root.exists() {
            let mut entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
            if entries.next().is_some() {
                return Err(Error::Store(format!(
                    "{} is not empty; write mode needs an empty or absent directory",
                    root.display()
                )));
            }
        }
        let ck = root.join("checkpoints");
        fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
        let store = ArtifactStore {
            root,
            mode: StoreMode::Write,
            manifest: Manifest::empty(),
            moments: None,
            fail: None,
        };
        store.write_manifest(&store.manifest)?;
        Ok(store)
    }

    pub fn open_read(path: impl AsRef<Path>) -> Result<Self> {
        let root = path.as_ref().to_path_buf();
        let mpath = root.join(MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: mpath.clone(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if manifest.format != FORMAT {
            return Err(Error::Store(format!(
                "{}: unsupported format {:?}",
                mpath.display(),
                manifest.format
            )));
        }
        if !manifest.closed {
            log::warn!("store {} was not closed by its writer", root.display());
        }
        for c in &manifest.checkpoints {
            let dir = root.join("checkpoints").join(ckpt_name(c.index));
            if !dir.is_dir() {
                return Err(Error::Store(format!("missing checkpoint directory {}", dir.display())));
            }
        }
        Ok(ArtifactStore {
            root,
            mode: StoreMode::Read,
            manifest,
            moments: None,
            fail: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn header(&self) -> Result<&StoreHeader> {
        self.manifest
            .header
            .as_ref()
            .ok_or_else(|| Error::Store(format!("{} has no header", self.root.display())))
    }

    pub fn num_checkpoints(&self) -> usize {
        self.manifest.checkpoints.len()
    }

    pub fn checkpoints(&self) -> &[CheckpointEntry] {
        &self.manifest.checkpoints
    }

    pub fn capture(&self) -> Result<&CaptureSettings> {
        Ok(&self.header()?.schedule.capture)
    }

    /// Checkpoint directories present on disk, listed in the manifest or not.
    pub fn checkpoint_dirs_on_disk(&self) -> Result<usize> {
        let ck = self.root.join("checkpoints");
        let mut n = 0;
        for e in fs::read_dir(&ck).map_err(|e| Error::io(&ck, e))? {
            let e = e.map_err(|e| Error::io(&ck, e))?;
            let name = e.file_name();
            let name = name.to_string_lossy();
            if name.starts_with('c') && !name.ends_with(".tmp") && e.path().is_dir() {
                n += 1;
            }
        }
        Ok(n)
    }

    #[doc(hidden)]
    pub fn inject_failure(&mut self, at: Option<FailPoint>) {
        self.fail = at;
    }

    fn writable(&self) -> Result<()> {
        if self.mode != StoreMode::Write {
            return Err(Error::Store("store is open read-only".into()));
        }
        if self.manifest.closed {
            return Err(Error::Store("store is closed".into()));
        }
        Ok(())
    }

    fn write_manifest(&self, m: &Manifest) -> Result<()> {
        let path = self.root.join(MANIFEST);
        let bytes = serde_json::to_vec_pretty(m)?;
        if self.fail == Some(FailPoint::BeforeManifestRename) {
            let tmp = tensor_file::tmp_path(&path);
            fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
            return Err(Error::Store("injected failure before manifest rename".into()));
        }
        write_atomic(&path, &bytes)
    }

    /// Records run metadata and checks the disk budget.
    pub fn initialize(&mut self, header: StoreHeader) -> Result<()> {
        self.writable()?;
        if self.manifest.header.is_some() {
            return Err(Error::Store("store is already initialized".into()));
        }
        if header.token_lengths.len() != header.labels.len() {
            return Err(Error::invalid("token_lengths and labels differ in length"));
        }
        let cap = &header.schedule.capture;
        let bytes = header.full_gradient_bytes();
        if cap.gradients && cap.mode == CaptureMode::Full && bytes > cap.budget_bytes {
            return Err(Error::Config(format!(
                "full gradient capture needs {bytes} bytes (N·max_len·d·N_c·4), over the budget of {} bytes; \
                 use reduced capture mode or raise the budget",
                cap.budget_bytes
            )));
        }
        if cap.gradients && cap.mode == CaptureMode::Reduced {
            let d = header.model.embed_dim;
            let rows = || header.token_lengths.iter().map(|&l| vec![0.0f64; l * d]);
            let zeros: Vec<Vec<f64>> = rows().collect();
            let r = Ragged::from_rows(d, zeros.iter().map(Vec::as_slice));
            self.moments = Some((r.clone(), r));
        }
        let mut m = self.manifest.clone();
        m.header = Some(header);
        self.write_manifest(&m)?;
        self.manifest = m;
        let tpath = self.root.join(TRACE);
        let mut f = fs::File::create(&tpath).map_err(|e| Error::io(&tpath, e))?;
        let mut head = TRACE_MAGIC.to_vec();
        head.extend_from_slice(&(self.header()?.num_examples() as u32).to_le_bytes());
        f.write_all(&head).map_err(|e| Error::io(&tpath, e))?;
        Ok(())
    }

    /// Appends one checkpoint and returns its index.
    pub fn append_checkpoint(&mut self, captures: &[GradCapture<f32>], meta: CheckpointMeta) -> Result<usize> {
        self.writable()?;
        let header = self.header()?.clone();
        let n = header.num_examples();
        if captures.len() != n {
            return Err(Error::Store(format!(
                "checkpoint needs one capture per example: expected {n}, got {}",
                captures.len()
            )));
        }
        let d = header.model.embed_dim;
        let k = header.model.num_classes;
        for (i, c) in captures.iter().enumerate() {
            if c.embed_grad.dim() != (header.token_lengths[i], d) {
                return Err(Error::Store(format!(
                    "capture {i} has G of shape {:?}, expected ({}, {d})",
                    c.embed_grad.dim(),
                    header.token_lengths[i]
                )));
            }
            if c.logits.len() != k || c.layer_grad.len() != header.layer_dim {
                return Err(Error::Store(format!("capture {i} has mismatched logits or layer gradient")));
            }
        }
        let cap = header.schedule.capture.clone();
        let index = self.num_checkpoints();
        let ck = self.root.join("checkpoints");
        let tmp = ck.join(format!("{}.tmp", ckpt_name(index)));
        let dir = ck.join(ckpt_name(index));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let logits: Vec<f32> = captures.iter().flat_map(|c| c.logits.iter().copied()).collect();
        write_tensor(&tmp.join(Field::Logits.file()), &[n, k], &logits)?;
        let preds: Vec<u32> = captures.iter().map(|c| c.predicted as u32).collect();
        write_tensor(&tmp.join(Field::Predictions.file()), &[n], &preds)?;
        if cap.layer_grads {
            let p = header.layer_dim;
            let lg: Vec<f32> = captures.iter().flat_map(|c| c.layer_grad.iter().copied()).collect();
            write_tensor(&tmp.join(Field::LayerGrads.file()), &[n, p], &lg)?;
        }
        if cap.gradients {
            match cap.mode {
                CaptureMode::Full => {
                    let rows: Vec<Vec<f32>> = captures
                        .iter()
                        .map(|c| c.embed_grad.iter().copied().collect())
                        .collect();
                    let r = Ragged::from_rows(d, rows.iter().map(Vec::as_slice));
                    write_ragged(&tmp.join(Field::Gradients.file()), &r)?;
                }
                CaptureMode::Reduced => {
                    let (mean, mean_sq) = self.moments.as_ref().expect("moments set at initialize");
                    let (mut mean, mut mean_sq) = (mean.clone(), mean_sq.clone());
                    let c = (index + 1) as f64;
                    for (i, cap) in captures.iter().enumerate() {
                        let a = mean.offsets[i] * d;
                        for (j, &g) in cap.embed_grad.iter().enumerate() {
                            let g = f64::from(g);
                            mean.data[a + j] += (g - mean.data[a + j]) / c;
                            mean_sq.data[a + j] += (g * g - mean_sq.data[a + j]) / c;
                        }
                    }
                    write_ragged(&tmp.join("moments_mean.ifas"), &mean)?;
                    write_ragged(&tmp.join("moments_mean_sq.ifas"), &mean_sq)?;
                    self.moments = Some((mean, mean_sq));
                }
            }
        }
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;

        let mut m = self.manifest.clone();
        m.checkpoints.push(CheckpointEntry { index, meta });
        self.write_manifest(&m)?;
        self.manifest = m;
        if cap.gradients && cap.mode == CaptureMode::Reduced && index > 0 {
            let prev = ck.join(ckpt_name(index - 1));
            for f in ["moments_mean.ifas", "moments_mean_sq.ifas"] {
                let p = prev.join(f);
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        Ok(index)
    }

    /// Appends one row of predicted classes to the trace.
    pub fn append_predictions(&mut self, step: usize, predicted: &[u32]) -> Result<()> {
        self.writable()?;
        let n = self.header()?.num_examples();
        if predicted.len() != n {
            return Err(Error::Store(format!(
                "prediction row needs {n} entries, got {}",
                predicted.len()
            )));
        }
        if self.manifest.trace_steps.last().is_some_and(|&s| s >= step) {
            return Err(Error::Store(format!("trace step {step} is not increasing")));
        }
        let tpath = self.root.join(TRACE);
        let mut rec = Vec::with_capacity(8 + 4 * n);
        rec.extend_from_slice(&(step as u64).to_le_bytes());
        for &p in predicted {
            rec.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&tpath)
            .map_err(|e| Error::io(&tpath, e))?;
        f.write_all(&rec).map_err(|e| Error::io(&tpath, e))?;
        let mut m = self.manifest.clone();
        m.trace_steps.push(step);
        self.write_manifest(&m)?;
        self.manifest = m;
        Ok(())
    }

    pub fn close(&mut self) -> Result<()> {
        self.writable()?;
        let mut m = self.manifest.clone();
        m.closed = true;
        self.write_manifest(&m)?;
        self.manifest = m;
        Ok(())
    }

    fn ckpt_file(&self, index: usize, field: Field) -> Result<PathBuf> {
        if index >= self.num_checkpoints() {
            return Err(Error::Store(format!(
                "checkpoint {index} out of range ({} stored)",
                self.num_checkpoints()
            )));
        }
        let p = self.root.join("checkpoints").join(ckpt_name(index)).join(field.file());
        if !p.exists() {
            return Err(Error::Store(format!("field {field:?} was not captured ({})", p.display())));
        }
        Ok(p)
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let n = self.header()?.num_examples();
        match ids.iter().find(|&&i| i >= n) {
            Some(i) => Err(Error::Store(format!("unknown example id {i} (store has {n})"))),
            None => Ok(()),
        }
    }

    /// All per-example G matrices at a checkpoint, in id order.
    pub fn read_gradients(&self, index: usize) -> Result<Ragged<f32>> {
        let p = self.ckpt_file(index, Field::Gradients)?;
        let r = read_ragged::<f32>(&p)?;
        let h = self.header()?;
        if r.rows() != h.num_examples() || r.width != h.model.embed_dim {
            return Err(Error::Corrupt {
                path: p,
                offset: 6,
                message: format!("dims ({}, {}) do not match the manifest", r.rows(), r.width),
            });
        }
        for i in 0..r.rows() {
            if r.row_len(i) != h.token_lengths[i] {
                return Err(Error::Store(format!(
                    "{}: example {i} has {} tokens, manifest says {}",
                    p.display(),
                    r.row_len(i),
                    h.token_lengths[i]
                )));
            }
        }
        Ok(r)
    }

    fn read_matrix<T: tensor_file::Element>(&self, index: usize, field: Field, cols: usize) -> Result<Tensor<T>> {
        let p = self.ckpt_file(index, field)?;
        let t = read_tensor::<T>(&p)?;
        let n = self.header()?.num_examples();
        let want = if field == Field::Predictions { vec![n] } else { vec![n, cols] };
        if t.dims != want {
            return Err(Error::Corrupt {
                path: p,
                offset: 6,
                message: format!("dims {:?}, expected {want:?}", t.dims),
            });
        }
        Ok(t)
    }

    pub fn read_logits(&self, index: usize) -> Result<Array2<f32>> {
        let k = self.header()?.model.num_classes;
        let t = self.read_matrix::<f32>(index, Field::Logits, k)?;
        Ok(Array2::from_shape_vec((t.dims[0], k), t.data).expect("checked dims"))
    }

    pub fn read_layer_grads(&self, index: usize) -> Result<Array2<f32>> {
        let p = self.header()?.layer_dim;
        let t = self.read_matrix::<f32>(index, Field::LayerGrads, p)?;
        Ok(Array2::from_shape_vec((t.dims[0], p), t.data).expect("checked dims"))
    }

    pub fn read_predictions(&self, index: usize) -> Result<Vec<u32>> {
        Ok(self.read_matrix::<u32>(index, Field::Predictions, 0)?.data)
    }

    /// Values of `field` at checkpoint `index` for `ids`, in the given order.
    pub fn read(&self, index: usize, field: Field, ids: &[usize]) -> Result<FieldData> {
        self.check_ids(ids)?;
        let select = |m: Array2<f32>| {
            let rows: Vec<f32> = ids.iter().flat_map(|&i| m.row(i).to_vec()).collect();
            Array2::from_shape_vec((ids.len(), m.ncols()), rows).expect("row selection")
        };
        Ok(match field {
            Field::Gradients => {
                let r = self.read_gradients(index)?;
                FieldData::Gradients(
                    ids.iter()
                        .map(|&i| {
                            Array2::from_shape_vec((r.row_len(i), r.width), r.row(i).to_vec())
                                .expect("row shape")
                        })
                        .collect(),
                )
            }
            Field::LayerGrads => FieldData::LayerGrads(select(self.read_layer_grads(index)?)),
            Field::Logits => FieldData::Logits(select(self.read_logits(index)?)),
            Field::Predictions => {
                let p = self.read_predictions(index)?;
                FieldData::Predictions(ids.iter().map(|&i| p[i]).collect())
            }
        })
    }

    /// Running moments of G written by reduced capture.
    pub fn read_moments(&self) -> Result<Moments> {
        let count = self.num_checkpoints();
        if count == 0 {
            return Err(Error::Store("store has no checkpoints".into()));
        }
        let dir = self.root.join("checkpoints").join(ckpt_name(count - 1));
        let (pm, ps) = (dir.join("moments_mean.ifas"), dir.join("moments_mean_sq.ifas"));
        if !pm.exists() {
            return Err(Error::Store(format!("{} holds no reduced-capture moments", self.root.display())));
        }
        Ok(Moments {
            count,
            mean: read_ragged(&pm)?,
            mean_sq: read_ragged(&ps)?,
        })
    }

    pub fn prediction_trace(&self) -> Result<PredictionTrace> {
        let h = self.header()?;
        let n = h.num_examples();
        let path = self.root.join(TRACE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let corrupt = |offset: usize, message: String| Error::Corrupt {
            path: path.clone(),
            offset: offset as u64,
            message,
        };
        if bytes.len() < 9 || &bytes[..5] != TRACE_MAGIC {
            return Err(corrupt(0, "bad trace header".into()));
        }
        let stored_n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        if stored_n != n {
            return Err(corrupt(5, format!("trace has {stored_n} examples, manifest {n}")));
        }
        let rec = 8 + 4 * n;
        let steps = self.manifest.trace_steps.clone();
        let mut predicted = Vec::with_capacity(steps.len());
        for (t, &step) in steps.iter().enumerate() {
            let at = 9 + t * rec;
            if bytes.len() < at + rec {
                return Err(corrupt(bytes.len(), format!("truncated trace record {t}")));
            }
            let s = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
            if s != step {
                return Err(corrupt(at, format!("trace record {t} has step {s}, manifest {step}")));
            }
            predicted.push(
                bytes[at + 8..at + rec]
                    .chunks_exact(4)
                    .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
        }
        PredictionTrace::new(steps, predicted, h.labels.clone())
    }
}
