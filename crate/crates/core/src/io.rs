//! Binary weight and dataset containers, metrics CSV, run configuration and
//! world snapshots. All binary fields are little-endian; tensor data is f32.
//!
//! Weight file:
//!
//! ```text
//! "LPACW1"
//! leaky_slope f32, L u32, K u32, d_0 u32, d_l u32, channel u32, window u32,
//! bn_eps f32, cnn_channels u32, mlp_hidden u32
//! n_tensors u32
//! per tensor: name_len u32, name UTF-8, rank u32, dims u64 × rank, data f32 × Π dims
//! ```
//!
//! Dataset file:
//!
//! ```text
//! "LPACD1", n_samples u64, n_robots u32, channel u32
//! per sample: env_id u32, step u32, flags u32,
//!             maps f32 × (n · 4 · c · c), positions f32 × 2n,
//!             normalized positions f32 × 2n, targets f32 × 2n,
//!             n_edges u32, (i u32, j u32) × n_edges
//! ```
//!
//! `flags` bit 0 marks a sample taken at the converged state.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array, ArrayD, Dimension, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::{MlpWeights, PolicyWeights};
use crate::arch::{Architecture, ShapeError, CNN_BLOCKS, MAP_CHANNELS};
use crate::gnn_comms::{tap_name, GnnWeights};
use crate::harness::Controller;
use crate::perception::CnnWeights;
use crate::voronoi::Partition;
use crate::world::{WorldParams, WorldState};

pub const WEIGHTS_MAGIC: &[u8; 6] = b"LPACW1";
pub const DATASET_MAGIC: &[u8; 6] = b"LPACD1";
pub const SNAPSHOT_MAGIC: &[u8; 6] = b"LPACS1";

pub const FLAG_CONVERGED: u32 = 1;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("file truncated while reading {0}")]
    Truncated(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("malformed record: {0}")]
    Malformed(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn truncated(what: &str) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            FormatError::Truncated(what.to_string())
        } else {
            FormatError::Io(e)
        }
    }
}

fn read_bytes<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N], FormatError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(truncated(what))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32, FormatError> {
    Ok(u32::from_le_bytes(read_bytes(r, what)?))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64, FormatError> {
    Ok(u64::from_le_bytes(read_bytes(r, what)?))
}

fn read_f32(r: &mut impl Read, what: &str) -> Result<f32, FormatError> {
    Ok(f32::from_le_bytes(read_bytes(r, what)?))
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f32>, FormatError> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes).map_err(truncated(what))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn write_f32s(w: &mut impl Write, data: &[f32]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)
}

fn check_magic(r: &mut impl Read, expected: &[u8; 6]) -> Result<(), FormatError> {
    let found: [u8; 6] = read_bytes(r, "magic")?;
    if &found != expected {
        return Err(FormatError::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32, FormatError> {
    u32::try_from(v).map_err(|_| FormatError::InvalidHeader(format!("{what} = {v} does not fit in u32")))
}

/// Named f32 tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn from_array<D: Dimension>(name: impl Into<String>, a: &Array<f32, D>) -> Self {
        Self { name: name.into(), dims: a.shape().to_vec(), data: a.iter().copied().collect() }
    }

    pub fn into_array<D: Dimension>(self) -> Result<Array<f32, D>, ShapeError> {
        let dims = self.dims.clone();
        let bad = |_| ShapeError { tensor: self.name.clone(), expected: vec![], found: dims.clone() };
        let dynamic: ArrayD<f32> = ArrayD::from_shape_vec(IxDyn(&self.dims), self.data.clone()).map_err(bad)?;
        dynamic.into_dimensionality::<D>().map_err(bad)
    }
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<(), FormatError> {
    let name = t.name.as_bytes();
    w.write_all(&to_u32(name.len(), "name length")?.to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&to_u32(t.dims.len(), "rank")?.to_le_bytes())?;
    for d in &t.dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    write_f32s(w, &t.data)?;
    Ok(())
}

/// Reads one tensor; `remaining` bounds the allocation by the bytes left in the file.
fn read_tensor(r: &mut impl Read, remaining: u64) -> Result<Tensor, FormatError> {
    let name_len = read_u32(r, "tensor name length")? as u64;
    if name_len > remaining {
        return Err(FormatError::Truncated("tensor name".into()));
    }
    let mut name = vec![0u8; name_len as usize];
    r.read_exact(&mut name).map_err(truncated("tensor name"))?;
    let name = String::from_utf8(name).map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?;
    let rank = read_u32(r, &name)? as usize;
    if rank as u64 * 8 > remaining {
        return Err(FormatError::Truncated(name));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u64(r, &name)?);
    }
    let count = dims.iter().try_fold(1u64, |acc, d| acc.checked_mul(*d));
    match count {
        Some(c) if c.saturating_mul(4) <= remaining => {
            let data = read_f32s(r, c as usize, &name)?;
            Ok(Tensor { name, dims: dims.into_iter().map(|d| d as usize).collect(), data })
        }
        _ => Err(FormatError::Truncated(name)),
    }
}

/// Container of named tensors behind a magic and an opaque header.
fn write_container(w: &mut impl Write, magic: &[u8; 6], header: &[u8], tensors: &[Tensor]) -> Result<(), FormatError> {
    w.write_all(magic)?;
    w.write_all(header)?;
    w.write_all(&to_u32(tensors.len(), "tensor count")?.to_le_bytes())?;
    for t in tensors {
        write_tensor(w, t)?;
    }
    Ok(())
}

fn read_tensor_table(mut r: &[u8]) -> Result<Vec<Tensor>, FormatError> {
    let n = read_u32(&mut r, "tensor count")?;
    let mut out = Vec::new();
    for _ in 0..n {
        let remaining = r.len() as u64;
        out.push(read_tensor(&mut r, remaining)?);
    }
    if !r.is_empty() {
        return Err(FormatError::Malformed(format!("{} trailing bytes", r.len())));
    }
    Ok(out)
}

fn weights_header(arch: &Architecture) -> Result<Vec<u8>, FormatError> {
    let mut h = Vec::new();
    h.extend_from_slice(&arch.leaky_slope.to_le_bytes());
    for (v, what) in [
        (arch.gnn_layers, "L"),
        (arch.gnn_hops, "K"),
        (arch.gnn_input, "d_0"),
        (arch.gnn_hidden, "d_l"),
        (arch.channel_size, "channel"),
        (arch.window_size, "window"),
    ] {
        h.extend_from_slice(&to_u32(v, what)?.to_le_bytes());
    }
    h.extend_from_slice(&arch.bn_eps.to_le_bytes());
    h.extend_from_slice(&to_u32(arch.cnn_channels, "cnn_channels")?.to_le_bytes());
    h.extend_from_slice(&to_u32(arch.mlp_hidden, "mlp_hidden")?.to_le_bytes());
    Ok(h)
}

fn read_weights_header(r: &mut impl Read) -> Result<Architecture, FormatError> {
    let leaky_slope = read_f32(r, "header")?;
    let mut v = [0usize; 6];
    for x in &mut v {
        *x = read_u32(r, "header")? as usize;
    }
    let bn_eps = read_f32(r, "header")?;
    let cnn_channels = read_u32(r, "header")? as usize;
    let mlp_hidden = read_u32(r, "header")? as usize;
    let arch = Architecture {
        leaky_slope,
        bn_eps,
        gnn_layers: v[0],
        gnn_hops: v[1],
        gnn_input: v[2],
        gnn_hidden: v[3],
        channel_size: v[4],
        window_size: v[5],
        cnn_channels,
        mlp_hidden,
    };
    arch.validate().map_err(FormatError::InvalidHeader)?;
    Ok(arch)
}

/// Tensors of a policy in file order.
pub fn policy_tensors(w: &PolicyWeights) -> Vec<Tensor> {
    let mut out = Vec::new();
    for (b, block) in w.cnn.blocks.iter().enumerate() {
        out.push(Tensor::from_array(format!("cnn.conv{b}.weight"), &block.weight));
        out.push(Tensor::from_array(format!("cnn.conv{b}.bias"), &block.bias));
        out.push(Tensor::from_array(format!("cnn.bn{b}.weight"), &block.bn_gamma));
        out.push(Tensor::from_array(format!("cnn.bn{b}.bias"), &block.bn_beta));
        out.push(Tensor::from_array(format!("cnn.bn{b}.running_mean"), &block.bn_mean));
        out.push(Tensor::from_array(format!("cnn.bn{b}.running_var"), &block.bn_var));
    }
    out.push(Tensor::from_array("cnn.linear.weight", &w.cnn.linear_weight));
    out.push(Tensor::from_array("cnn.linear.bias", &w.cnn.linear_bias));
    for (l, taps) in w.gnn.layers.iter().enumerate() {
        for (k, h) in taps.iter().enumerate() {
            out.push(Tensor::from_array(tap_name(l + 1, k), h));
        }
    }
    let m = &w.mlp;
    out.push(Tensor::from_array("mlp.fc1.weight", &m.fc1_weight));
    out.push(Tensor::from_array("mlp.fc1.bias", &m.fc1_bias));
    out.push(Tensor::from_array("mlp.fc2.weight", &m.fc2_weight));
    out.push(Tensor::from_array("mlp.fc2.bias", &m.fc2_bias));
    out.push(Tensor::from_array("mlp.out.weight", &m.out_weight));
    out.push(Tensor::from_array("mlp.out.bias", &m.out_bias));
    out
}

/// Assembles a policy from named tensors, checking every shape against `arch`.
pub fn policy_from_tensors(arch: Architecture, tensors: Vec<Tensor>) -> Result<PolicyWeights, FormatError> {
    let template = PolicyWeights::zeros(arch);
    let expected: BTreeMap<String, Vec<usize>> = policy_tensors(&template).into_iter().map(|t| (t.name, t.dims)).collect();
    let mut by_name = BTreeMap::new();
    for t in tensors {
        let Some(dims) = expected.get(&t.name) else {
            return Err(FormatError::UnexpectedTensor(t.name));
        };
        ShapeError::check(&t.name, dims, &t.dims)?;
        if by_name.insert(t.name.clone(), t).is_some() {
            return Err(FormatError::Malformed("duplicate tensor".into()));
        }
    }
    let mut take = |name: &str| by_name.remove(name).ok_or_else(|| FormatError::MissingTensor(name.to_string()));

    let mut cnn = CnnWeights::zeros(&arch);
    for b in 0..CNN_BLOCKS {
        let block = &mut cnn.blocks[b];
        block.weight = take(&format!("cnn.conv{b}.weight"))?.into_array()?;
        block.bias = take(&format!("cnn.conv{b}.bias"))?.into_array()?;
        block.bn_gamma = take(&format!("cnn.bn{b}.weight"))?.into_array()?;
        block.bn_beta = take(&format!("cnn.bn{b}.bias"))?.into_array()?;
        block.bn_mean = take(&format!("cnn.bn{b}.running_mean"))?.into_array()?;
        block.bn_var = take(&format!("cnn.bn{b}.running_var"))?.into_array()?;
    }
    cnn.linear_weight = take("cnn.linear.weight")?.into_array()?;
    cnn.linear_bias = take("cnn.linear.bias")?.into_array()?;

    let mut gnn = GnnWeights::zeros(&arch);
    for (l, taps) in gnn.layers.iter_mut().enumerate() {
        for (k, h) in taps.iter_mut().enumerate() {
            *h = take(&tap_name(l + 1, k))?.into_array()?;
        }
    }

    let mlp = MlpWeights {
        fc1_weight: take("mlp.fc1.weight")?.into_array()?,
        fc1_bias: take("mlp.fc1.bias")?.into_array()?,
        fc2_weight: take("mlp.fc2.weight")?.into_array()?,
        fc2_bias: take("mlp.fc2.bias")?.into_array()?,
        out_weight: take("mlp.out.weight")?.into_array()?,
        out_bias: take("mlp.out.bias")?.into_array()?,
    };
    let policy = PolicyWeights { arch, cnn, gnn, mlp };
    policy.validate()?;
    Ok(policy)
}

pub fn write_weights(w: &mut impl Write, policy: &PolicyWeights) -> Result<(), FormatError> {
    policy.validate()?;
    write_container(w, WEIGHTS_MAGIC, &weights_header(&policy.arch)?, &policy_tensors(policy))
}

pub fn parse_weights(bytes: &[u8]) -> Result<PolicyWeights, FormatError> {
    let mut r = bytes;
    check_magic(&mut r, WEIGHTS_MAGIC)?;
    let arch = read_weights_header(&mut r)?;
    let tensors = read_tensor_table(r)?;
    policy_from_tensors(arch, tensors)
}

pub fn save_weights(path: &Path, policy: &PolicyWeights) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, policy)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<PolicyWeights, FormatError> {
    parse_weights(&std::fs::read(path)?)
}

/// One state-action record for imitation learning.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub env_id: u32,
    pub step: u32,
    pub converged: bool,
    /// `[n_robots, 4, c, c]` flattened.
    pub maps: Vec<f32>,
    pub positions: Vec<[f32; 2]>,
    pub normalized_positions: Vec<[f32; 2]>,
    pub targets: Vec<[f32; 2]>,
    pub edges: Vec<(u32, u32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub n_samples: u64,
    pub n_robots: usize,
    pub channel_size: usize,
}

impl DatasetHeader {
    pub fn map_floats(&self) -> usize {
        self.n_robots * MAP_CHANNELS * self.channel_size * self.channel_size
    }

    /// Bytes of one record without its edge pairs.
    pub fn fixed_record_bytes(&self) -> usize {
        4 * 3 + 4 * (self.map_floats() + 6 * self.n_robots) + 4
    }

    fn max_edges(&self) -> usize {
        self.n_robots * self.n_robots.saturating_sub(1) / 2
    }

    fn check(&self, s: &DatasetSample) -> Result<(), ShapeError> {
        let n = self.n_robots;
        ShapeError::check("maps", &[self.map_floats()], &[s.maps.len()])?;
        ShapeError::check("positions", &[n], &[s.positions.len()])?;
        ShapeError::check("normalized_positions", &[n], &[s.normalized_positions.len()])?;
        ShapeError::check("targets", &[n], &[s.targets.len()])?;
        if s.edges.len() > self.max_edges() || s.edges.iter().any(|&(i, j)| i as usize >= n || j as usize >= n) {
            return Err(ShapeError { tensor: "edges".into(), expected: vec![self.max_edges()], found: vec![s.edges.len()] });
        }
        Ok(())
    }
}

/// Streaming dataset writer; the sample count is patched into the header on `finish`.
pub struct DatasetWriter<W: Write + Seek> {
    inner: W,
    header: DatasetHeader,
}

impl DatasetWriter<BufWriter<File>> {
    pub fn create(path: &Path, n_robots: usize, channel_size: usize) -> Result<Self, FormatError> {
        Self::new(BufWriter::new(File::create(path)?), n_robots, channel_size)
    }
}

impl<W: Write + Seek> DatasetWriter<W> {
    pub fn new(mut inner: W, n_robots: usize, channel_size: usize) -> Result<Self, FormatError> {
        let header = DatasetHeader { n_samples: 0, n_robots, channel_size };
        inner.write_all(DATASET_MAGIC)?;
        inner.write_all(&0u64.to_le_bytes())?;
        inner.write_all(&to_u32(n_robots, "n_robots")?.to_le_bytes())?;
        inner.write_all(&to_u32(channel_size, "channel")?.to_le_bytes())?;
        Ok(Self { inner, header })
    }

    pub fn push(&mut self, s: &DatasetSample) -> Result<(), FormatError> {
        self.header.check(s)?;
        let w = &mut self.inner;
        w.write_all(&s.env_id.to_le_bytes())?;
        w.write_all(&s.step.to_le_bytes())?;
        w.write_all(&(if s.converged { FLAG_CONVERGED } else { 0 }).to_le_bytes())?;
        write_f32s(w, &s.maps)?;
        for v in [&s.positions, &s.normalized_positions, &s.targets] {
            write_f32s(w, v.as_flattened())?;
        }
        w.write_all(&to_u32(s.edges.len(), "edge count")?.to_le_bytes())?;
        for &(i, j) in &s.edges {
            w.write_all(&i.to_le_bytes())?;
            w.write_all(&j.to_le_bytes())?;
        }
        self.header.n_samples += 1;
        Ok(())
    }

    pub fn n_samples(&self) -> u64 {
        self.header.n_samples
    }

    /// Writes the final sample count and returns the header and the sink.
    pub fn finish(mut self) -> Result<(DatasetHeader, W), FormatError> {
        self.inner.seek(SeekFrom::Start(DATASET_MAGIC.len() as u64))?;
        self.inner.write_all(&self.header.n_samples.to_le_bytes())?;
        self.inner.seek(SeekFrom::End(0))?;
        self.inner.flush()?;
        Ok((self.header, self.inner))
    }
}

/// Streaming dataset reader.
pub struct DatasetReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    read: u64,
}

impl DatasetReader<BufReader<File>> {
    pub fn open(path: &Path) -> Result<Self, FormatError> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self, FormatError> {
        check_magic(&mut inner, DATASET_MAGIC)?;
        let n_samples = read_u64(&mut inner, "header")?;
        let n_robots = read_u32(&mut inner, "header")? as usize;
        let channel_size = read_u32(&mut inner, "header")? as usize;
        Ok(Self { inner, header: DatasetHeader { n_samples, n_robots, channel_size }, read: 0 })
    }

    pub fn header(&self) -> DatasetHeader {
        self.header
    }

    fn read_sample(&mut self) -> Result<DatasetSample, FormatError> {
        let h = self.header;
        let ctx = format!("sample {}", self.read);
        let r = &mut self.inner;
        let env_id = read_u32(r, &ctx)?;
        let step = read_u32(r, &ctx)?;
        let flags = read_u32(r, &ctx)?;
        if flags & !FLAG_CONVERGED != 0 {
            return Err(FormatError::Malformed(format!("{ctx}: unknown flags {flags:#x}")));
        }
        let maps = read_f32s(r, h.map_floats(), &ctx)?;
        let mut pairs = || -> Result<Vec<[f32; 2]>, FormatError> {
            Ok(read_f32s(r, 2 * h.n_robots, &ctx)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
        };
        let positions = pairs()?;
        let normalized_positions = pairs()?;
        let targets = pairs()?;
        let n_edges = read_u32(r, &ctx)? as usize;
        if n_edges > h.max_edges() {
            return Err(FormatError::Malformed(format!("{ctx}: {n_edges} edges for {} robots", h.n_robots)));
        }
        let mut edges = Vec::with_capacity(n_edges);
        for _ in 0..n_edges {
            let i = read_u32(r, &ctx)?;
            let j = read_u32(r, &ctx)?;
            edges.push((i, j));
        }
        let sample = DatasetSample { env_id, step, converged: flags & FLAG_CONVERGED != 0, maps, positions, normalized_positions, targets, edges };
        h.check(&sample).map_err(|e| FormatError::Malformed(format!("{ctx}: {e}")))?;
        self.read += 1;
        Ok(sample)
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetSample, FormatError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.read >= self.header.n_samples {
            return None;
        }
        let s = self.read_sample();
        if s.is_err() {
            self.read = self.header.n_samples;
        }
        Some(s)
    }
}

pub fn write_dataset(path: &Path, n_robots: usize, channel_size: usize, samples: &[DatasetSample]) -> Result<DatasetHeader, FormatError> {
    let mut w = DatasetWriter::create(path, n_robots, channel_size)?;
    for s in samples {
        w.push(s)?;
    }
    Ok(w.finish()?.0)
}

pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<DatasetSample>), FormatError> {
    let reader = DatasetReader::open(path)?;
    let header = reader.header();
    let samples = reader.collect::<Result<Vec<_>, _>>()?;
    Ok((header, samples))
}

/// One row of a metrics series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub controller: String,
    pub env_id: usize,
    pub cost: f64,
    pub normalized_cost: f64,
    pub observed_area_pct: f64,
}

pub fn write_metrics(w: impl Write, rows: &[MetricsRow]) -> Result<(), FormatError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn metrics_to_string(rows: &[MetricsRow]) -> String {
    let mut buf = Vec::new();
    write_metrics(&mut buf, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is UTF-8")
}

pub fn read_metrics(r: impl Read) -> Result<Vec<MetricsRow>, FormatError> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(FormatError::from)).collect()
}

/// Generic CSV table writer for serializable rows.
pub fn write_csv<T: Serialize>(w: impl Write, rows: &[T]) -> Result<(), FormatError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

/// Everything needed to reproduce one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub world: WorldParams,
    pub controller: Controller,
    pub horizon: usize,
    pub env_id: usize,
    pub n_features: usize,
    /// Standard deviation of position-estimate noise, meters.
    pub noise_sigma: f64,
    /// CSV of feature centers; random features when absent.
    pub features: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    /// Stop CVT controllers once every robot moves less than this.
    pub epsilon: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            world: WorldParams::default(),
            controller: Controller::Clairvoyant,
            horizon: 900,
            env_id: 0,
            n_features: 32,
            noise_sigma: 0.0,
            features: None,
            weights: None,
            epsilon: crate::cvt::DEFAULT_EPSILON,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Grids and robot state of a world, plus an optional partition, as a tensor container.
pub fn write_snapshot(w: &mut impl Write, world: &WorldState, partition: Option<&Partition>) -> Result<(), FormatError> {
    let side = world.params().side_length;
    let grid = |name: &str, data: Vec<f32>| Tensor { name: name.into(), dims: vec![side, side], data };
    let pairs = |name: &str, ps: &[crate::geom::Vec2]| Tensor {
        name: name.into(),
        dims: vec![ps.len(), 2],
        data: ps.iter().flat_map(|p| [p.x as f32, p.y as f32]).collect(),
    };
    let mask = |m: &[bool]| m.iter().map(|b| if *b { 1.0 } else { 0.0 }).collect::<Vec<f32>>();
    let mut tensors = vec![
        grid("idf", world.idf().values().iter().map(|v| *v as f32).collect()),
        grid("team_observed", mask(world.team_mask())),
        pairs("positions", &world.positions()),
        pairs("estimated_positions", world.estimated_positions()),
    ];
    for (i, r) in world.robots().iter().enumerate() {
        tensors.push(grid(&format!("robot{i}.observed"), mask(r.observed_mask())));
    }
    if let Some(p) = partition {
        tensors.push(grid("voronoi.owner", p.assignment().iter().map(|o| *o as f32).collect()));
    }
    write_container(w, SNAPSHOT_MAGIC, &to_u32(side, "side")?.to_le_bytes(), &tensors)
}

pub fn save_snapshot(path: &Path, world: &WorldState, partition: Option<&Partition>) -> Result<(), FormatError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_snapshot(&mut w, world, partition)?;
    w.flush()?;
    Ok(())
}

/// Returns the side length and every tensor of a snapshot.
pub fn parse_snapshot(bytes: &[u8]) -> Result<(usize, Vec<Tensor>), FormatError> {
    let mut r = bytes;
    check_magic(&mut r, SNAPSHOT_MAGIC)?;
    let side = read_u32(&mut r, "header")? as usize;
    Ok((side, read_tensor_table(r)?))
}
