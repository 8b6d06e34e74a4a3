//! File formats: long-form dataset CSV, labels CSV, feature-matrix CSV,
//! TOML run configuration, JSON-lines sample logs, run manifests,
//! versioned checkpoints, and the generic preprocessing transforms
//! (block-average downsampling and first-difference rescaling).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::driver::{RunConfig, SampleRecord};
use crate::error::{Error, Result};
use crate::model::{Dataset, FeatureMatrix, Hyperparams, SamplerState, TimeSeries};
use crate::num::Scalar;

// ---------------------------------------------------------------------------
// Dataset CSV: header `series_id,t,y1,...,yd`; t strictly increasing per
// series; no missing values.
// ---------------------------------------------------------------------------

pub fn write_dataset_csv<T: Scalar>(path: &Path, dataset: &Dataset<T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = dataset.dim();
    let mut header = vec!["series_id".to_string(), "t".to_string()];
    header.extend((1..=d).map(|j| format!("y{j}")));
    w.write_record(&header)?;
    for s in dataset.series() {
        for t in 0..s.len() {
            let mut rec = vec![s.id.clone(), t.to_string()];
            for j in 0..d {
                rec.push(format!("{:?}", s.observations[(t, j)].to_f64()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset_csv<T: Scalar>(path: &Path, lag: usize) -> Result<Dataset<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "series_id" || &header[1] != "t" {
        return Err(Error::Data(format!(
            "{}: expected header series_id,t,y1,...",
            path.display()
        )));
    }
    let d = header.len() - 2;
    for (j, name) in header.iter().skip(2).enumerate() {
        if name != format!("y{}", j + 1) {
            return Err(Error::Data(format!(
                "{}: column {} should be y{}, found {name}",
                path.display(),
                j + 3,
                j + 1
            )));
        }
    }
    // preserve first-appearance order of series ids
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(i64, Vec<T>)>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Data(format!(
                "{}: row has {} fields, expected {}",
                path.display(),
                rec.len(),
                header.len()
            )));
        }
        let id = rec[0].to_string();
        let t: i64 = rec[1]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad t value {:?}", path.display(), &rec[1])))?;
        let mut y = Vec::with_capacity(d);
        for j in 0..d {
            let v: f64 = rec[2 + j].trim().parse().map_err(|_| {
                Error::Data(format!(
                    "{}: bad numeric value {:?} (series {id}, t={t})",
                    path.display(),
                    &rec[2 + j]
                ))
            })?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}: non-finite value (series {id}, t={t})",
                    path.display()
                )));
            }
            y.push(T::of(v));
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, y));
    }
    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let pts = rows.remove(&id).unwrap();
        for w in pts.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Data(format!(
                    "{}: t not strictly increasing in series {id} (t={} after t={})",
                    path.display(),
                    w[1].0,
                    w[0].0
                )));
            }
        }
        let obs = DMatrix::from_fn(pts.len(), d, |t, j| pts[t].1[j]);
        series.push(TimeSeries::new(id, obs)?);
    }
    if series.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Dataset::new(series, d, lag)
}

// ---------------------------------------------------------------------------
// Labels CSV: `series_id,t,label`. Labels cover the likelihood frames, so
// t starts at the lag order.
// ---------------------------------------------------------------------------

pub fn write_labels_csv(
    path: &Path,
    ids: &[String],
    lag: usize,
    labels: &[Vec<usize>],
) -> Result<()> {
    if ids.len() != labels.len() {
        return Err(Error::InvalidInput("ids and labels length mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series_id", "t", "label"])?;
    for (id, seq) in ids.iter().zip(labels) {
        for (off, &l) in seq.iter().enumerate() {
            w.write_record([id.as_str(), &(lag + off).to_string(), &l.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv(path: &Path) -> Result<Vec<(String, Vec<usize>)>> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.len() != 3 || &header[0] != "series_id" || &header[1] != "t" || &header[2] != "label"
    {
        return Err(Error::Data(format!(
            "{}: expected header series_id,t,label",
            path.display()
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let id = rec[0].to_string();
        let label: usize = rec[2]
            .parse()
            .map_err(|_| Error::Data(format!("{}: bad label {:?}", path.display(), &rec[2])))?;
        if !out.contains_key(&id) {
            order.push(id.clone());
        }
        out.entry(id).or_default().push(label);
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let v = out.remove(&id).unwrap();
            (id, v)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Feature-matrix CSV: `series_id,feature_1,...,feature_K` with 0/1 entries.
// ---------------------------------------------------------------------------

pub fn write_feature_matrix_csv(
    path: &Path,
    ids: &[String],
    features: &FeatureMatrix,
) -> Result<()> {
    if ids.len() != features.num_series() {
        return Err(Error::InvalidInput("ids and feature rows mismatch".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let k = features.num_features();
    let mut header = vec!["series_id".to_string()];
    header.extend((1..=k).map(|j| format!("feature_{j}")));
    w.write_record(&header)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend((0..k).map(|j| if features.get(i, j) { "1" } else { "0" }.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_matrix_csv(path: &Path) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.is_empty() || &header[0] != "series_id" {
        return Err(Error::Data(format!(
            "{}: expected header series_id,feature_1,...",
            path.display()
        )));
    }
    let k = header.len() - 1;
    let mut ids = Vec::new();
    let mut flags = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != k + 1 {
            return Err(Error::Data(format!("{}: ragged row", path.display())));
        }
        ids.push(rec[0].to_string());
        let mut row = Vec::with_capacity(k);
        for j in 0..k {
            row.push(match &rec[1 + j] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Data(format!(
                        "{}: feature entries must be 0 or 1, found {other:?}",
                        path.display()
                    )))
                }
            });
        }
        flags.push(row);
    }
    Ok((ids, FeatureMatrix::from_flags_unchecked(flags)))
}

// ---------------------------------------------------------------------------
// Run configuration: TOML with [model], [run], [priors] sections. Every
// default matches the built-in sampler defaults.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub model: ModelSection,
    pub run: RunSection,
    pub priors: PriorSection,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Autoregressive order.
    pub lag: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub chains: usize,
    pub seed: u64,
    pub block_count: usize,
    pub checkpoint_every: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSection {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub a_kappa: f64,
    pub b_kappa: f64,
    pub sigma_gamma_sq: f64,
    pub sigma_kappa_sq: f64,
    pub mniw_scale_factor: f64,
    pub mniw_col_precision: f64,
    pub mniw_dof_offset: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { lag: 1 }
    }
}

impl Default for RunSection {
    fn default() -> Self {
        let d = RunConfig::<f64>::default();
        RunSection {
            iterations: d.iterations,
            burn_in: d.burn_in,
            thinning: d.thinning,
            chains: d.chains,
            seed: d.seed,
            block_count: d.block_count,
            checkpoint_every: d.checkpoint_every,
        }
    }
}

impl Default for PriorSection {
    fn default() -> Self {
        let h = Hyperparams::<f64>::default();
        let d = RunConfig::<f64>::default();
        PriorSection {
            a_alpha: h.a_alpha,
            b_alpha: h.b_alpha,
            a_gamma: h.a_gamma,
            b_gamma: h.b_gamma,
            a_kappa: h.a_kappa,
            b_kappa: h.b_kappa,
            sigma_gamma_sq: h.sigma_gamma_sq,
            sigma_kappa_sq: h.sigma_kappa_sq,
            mniw_scale_factor: d.mniw_scale_factor,
            mniw_col_precision: d.mniw_col_precision,
            mniw_dof_offset: d.mniw_dof_offset,
        }
    }
}

impl Default for FileConfig {
    fn default() -> Self {
        FileConfig {
            model: ModelSection::default(),
            run: RunSection::default(),
            priors: PriorSection::default(),
        }
    }
}

impl FileConfig {
    pub fn to_run_config(&self) -> RunConfig<f64> {
        let p = &self.priors;
        RunConfig {
            iterations: self.run.iterations,
            burn_in: self.run.burn_in,
            thinning: self.run.thinning,
            chains: self.run.chains,
            seed: self.run.seed,
            block_count: self.run.block_count,
            checkpoint_every: self.run.checkpoint_every,
            hyper: Hyperparams {
                alpha: 1.0,
                a_alpha: p.a_alpha,
                b_alpha: p.b_alpha,
                a_gamma: p.a_gamma,
                b_gamma: p.b_gamma,
                a_kappa: p.a_kappa,
                b_kappa: p.b_kappa,
                sigma_gamma_sq: p.sigma_gamma_sq,
                sigma_kappa_sq: p.sigma_kappa_sq,
            },
            mniw_scale_factor: p.mniw_scale_factor,
            mniw_col_precision: p.mniw_col_precision,
            mniw_dof_offset: p.mniw_dof_offset,
        }
    }

    /// Hex SHA-256 over the canonical (fully populated, sorted-key) JSON
    /// form, so formatting and omitted defaults don't change the hash.
    /// The iteration count is excluded: it is a stopping point, not part of
    /// run identity, so a resumed run may extend it.
    pub fn hash(&self) -> String {
        let mut ident = self.clone();
        ident.run.iterations = 0;
        let canon = serde_json::to_string(&ident).expect("config serializes");
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        hex::encode(h.finalize())
    }
}

pub fn read_config(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: FileConfig = toml::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {}", path.display(), e.message()))
    })?;
    cfg.to_run_config()
        .validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn write_config(path: &Path, cfg: &FileConfig) -> Result<()> {
    let text =
        toml::to_string_pretty(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sample logs: one JSON record per line.
// ---------------------------------------------------------------------------

pub struct SampleLogWriter {
    inner: std::io::BufWriter<std::fs::File>,
}

impl SampleLogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(SampleLogWriter {
            inner: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn append(path: &Path) -> Result<Self> {
        Ok(SampleLogWriter {
            inner: std::io::BufWriter::new(
                std::fs::OpenOptions::new().create(true).append(true).open(path)?,
            ),
        })
    }

    pub fn write<T: Scalar>(&mut self, record: &SampleRecord<T>) -> Result<()> {
        serde_json::to_writer(&mut self.inner, record)?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_sample_log<T: Scalar>(path: &Path) -> Result<Vec<SampleRecord<T>>> {
    let f = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SampleRecord<T> = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{} line {}: {e}", path.display(), ln + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Run manifest.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub chains: usize,
    pub chain_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Checkpoints: a fixed format tag followed by the serialized sampler state
// and the config hash it belongs to.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8] = b"BPARHMM-CKPT-v1\n";

#[derive(Serialize, Deserialize)]
#[serde(bound = "")]
struct CheckpointBody<T: Scalar> {
    config_hash: String,
    state: SamplerState<T>,
}

pub fn write_checkpoint<T: Scalar>(
    path: &Path,
    state: &SamplerState<T>,
    config_hash: &str,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    serde_json::to_writer(
        &mut f,
        &CheckpointBody {
            config_hash: config_hash.to_string(),
            state: state.clone(),
        },
    )?;
    f.flush()?;
    Ok(())
}

/// Reads a checkpoint, verifying the format tag and that it was written
/// under the same configuration.
pub fn read_checkpoint<T: Scalar>(path: &Path, config_hash: &str) -> Result<SamplerState<T>> {
    let mut f = BufReader::new(std::fs::File::open(path)?);
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    f.read_exact(&mut magic)
        .map_err(|_| Error::Data(format!("{}: not a checkpoint file", path.display())))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Data(format!(
            "{}: unrecognized checkpoint format tag",
            path.display()
        )));
    }
    let body: CheckpointBody<T> = serde_json::from_reader(f)?;
    if body.config_hash != config_hash {
        return Err(Error::Config(format!(
            "{}: checkpoint was written under a different configuration \
             (hash {} vs {})",
            path.display(),
            body.config_hash,
            config_hash
        )));
    }
    Ok(body.state)
}

// ---------------------------------------------------------------------------
// Preprocessing transforms.
// ---------------------------------------------------------------------------

/// Parameters needed to undo the preprocessing transforms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformParams {
    pub window: usize,
    /// Per-dimension divisors applied after block averaging.
    pub scales: Vec<f64>,
}

/// Non-overlapping block average with the given window; trailing frames
/// that do not fill a window are dropped.
pub fn block_average<T: Scalar>(dataset: &Dataset<T>, window: usize) -> Result<Dataset<T>> {
    if window == 0 {
        return Err(Error::InvalidInput("window must be >= 1".into()));
    }
    let d = dataset.dim();
    let mut out = Vec::with_capacity(dataset.num_series());
    for s in dataset.series() {
        if window > s.len() {
            return Err(Error::Data(format!(
                "window {window} exceeds length {} of series {}",
                s.len(),
                s.id
            )));
        }
        let t_out = s.len() / window;
        let obs = DMatrix::from_fn(t_out, d, |t, j| {
            let mut acc = T::zero();
            for u in 0..window {
                acc += s.observations[(t * window + u, j)];
            }
            acc / T::of_usize(window)
        });
        out.push(TimeSeries::new(s.id.clone(), obs)?);
    }
    Dataset::new(out, d, dataset.lag())
}

/// Per-dimension divisors that make the pooled first-difference variance
/// equal to one.
pub fn first_difference_scales<T: Scalar>(dataset: &Dataset<T>) -> Result<Vec<f64>> {
    let d = dataset.dim();
    let mut sums = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut n = 0usize;
    for s in dataset.series() {
        for t in 1..s.len() {
            for j in 0..d {
                let diff = (s.observations[(t, j)] - s.observations[(t - 1, j)]).to_f64();
                sums[j] += diff;
                sq[j] += diff * diff;
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Data("no first differences available".into()));
    }
    (0..d)
        .map(|j| {
            let mean = sums[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            if var <= 0.0 {
                Err(Error::Data(format!(
                    "dimension {} has zero first-difference variance",
                    j + 1
                )))
            } else {
                Ok(var.sqrt())
            }
        })
        .collect()
}

pub fn apply_scales<T: Scalar>(dataset: &Dataset<T>, scales: &[f64], invert: bool) -> Result<Dataset<T>> {
    let d = dataset.dim();
    if scales.len() != d {
        return Err(Error::InvalidInput("scale count must match dimension".into()));
    }
    let out = dataset
        .series()
        .iter()
        .map(|s| {
            let obs = DMatrix::from_fn(s.len(), d, |t, j| {
                let sc = T::of(scales[j]);
                if invert {
                    s.observations[(t, j)] * sc
                } else {
                    s.observations[(t, j)] / sc
                }
            });
            TimeSeries::new(s.id.clone(), obs)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(out, d, dataset.lag())
}

/// Full preprocessing pass: optional block average, optional rescale.
pub fn preprocess<T: Scalar>(
    dataset: &Dataset<T>,
    window: usize,
    rescale: bool,
) -> Result<(Dataset<T>, TransformParams)> {
    let averaged = block_average(dataset, window)?;
    if rescale {
        let scales = first_difference_scales(&averaged)?;
        let scaled = apply_scales(&averaged, &scales, false)?;
        Ok((scaled, TransformParams { window, scales }))
    } else {
        let d = dataset.dim();
        Ok((
            averaged,
            TransformParams {
                window,
                scales: vec![1.0; d],
            },
        ))
    }
}
