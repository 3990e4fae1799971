//! Binary containers for matrices, frame sets, calibration measurements and
//! checkpoints.
//!
//! A container is the 8-byte magic, a little-endian `u32` header length, a
//! JSON header, then the values of every listed tensor as little-endian
//! `f64` in header order.

use std::path::Path;

use num_complex::Complex64;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::calibration::MeanFieldMeasurement;
use crate::error::{Error, Result};
use crate::model::{TransformerConfig, TransformerParams};
use crate::optics::{CovarianceMatrix, GreenPair, MeanField, PhasematchParams, PixelGrid, SlmPhase};
use crate::pipeline::{FreeS, Source, SourceKind};
use crate::sensing::{Frame, FrameSet, ObjectMask};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"CORRVIS1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    layout: String,
    tensors: Vec<TensorInfo>,
    meta: Map<String, Value>,
}

/// Named tensors plus free-form metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: Map<String, Value>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_meta(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.meta.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn push(&mut self, name: &str, tensor: Tensor) {
        self.tensors.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("container has no tensor '{name}'")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.tensors.iter().any(|(n, _)| n == name)
    }

    pub fn meta_field<T: DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self.meta.get(key).ok_or_else(|| Error::Format(format!("container header lacks '{key}'")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("header field '{key}': {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            dtype: "f64".into(),
            layout: "row-major".into(),
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| TensorInfo { name: name.clone(), shape: t.shape().to_vec() })
                .collect(),
            meta: self.meta.clone(),
        };
        let head = serde_json::to_vec(&header)?;
        let len = u32::try_from(head.len()).map_err(|_| Error::Format("container header too large".into()))?;
        let n_values: usize = self.tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(12 + head.len() + 8 * n_values);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&head);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || bytes[..8] != MAGIC {
            return Err(Error::Format("not a corrvis container".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| Error::Format("truncated container header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(format!("container header: {e}")))?;
        if header.dtype != "f64" || header.layout != "row-major" {
            return Err(Error::Format(format!("unsupported dtype/layout {}/{}", header.dtype, header.layout)));
        }
        let mut data = &bytes[12 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let count = info.shape.iter().try_fold(8usize, |acc, &d| acc.checked_mul(d));
            let raw = count
                .and_then(|c| data.get(..c))
                .ok_or_else(|| Error::Format(format!("tensor '{}' is truncated", info.name)))?;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            data = &data[raw.len()..];
            tensors.push((info.name, Tensor::new(info.shape, values)));
        }
        if !data.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after the last tensor", data.len())));
        }
        Ok(Self { meta: header.meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        let found: String = self.meta_field("kind")?;
        if found != kind {
            return Err(Error::Format(format!("expected a {kind} container, found {found}")));
        }
        Ok(())
    }
}

fn shaped(t: &Tensor, shape: &[usize], what: &str) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Format(format!("{what} has shape {:?}, expected {shape:?}", t.shape())));
    }
    Ok(())
}

fn complex_tensor(values: &[Complex64], rows: usize) -> Tensor {
    let data = values.iter().flat_map(|v| [v.re, v.im]).collect();
    Tensor::new(vec![rows, values.len() / rows.max(1), 2], data)
}

fn complex_values(t: &Tensor) -> Vec<Complex64> {
    t.data().chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect()
}

pub fn mean_field_container(m: &MeanField) -> Result<Container> {
    let mut c = Container::new().with_meta("kind", "mean-field")?.with_meta("n", m.n)?;
    c.push("values", Tensor::matrix(m.n, m.n, m.values.clone()));
    Ok(c)
}

pub fn mean_field_from(c: &Container) -> Result<MeanField> {
    c.expect_kind("mean-field")?;
    let n: usize = c.meta_field("n")?;
    let t = c.get("values")?;
    shaped(t, &[n, n], "mean field")?;
    MeanField::new(n, t.data().to_vec())
}

pub fn covariance_container(cov: &CovarianceMatrix) -> Result<Container> {
    let m = cov.n_modes;
    let mut c = Container::new().with_meta("kind", "covariance")?.with_meta("n", m)?;
    c.push("values", Tensor::matrix(m, m, cov.values.clone()));
    Ok(c)
}

pub fn covariance_from(c: &Container) -> Result<CovarianceMatrix> {
    c.expect_kind("covariance")?;
    let n: usize = c.meta_field("n")?;
    let t = c.get("values")?;
    shaped(t, &[n, n], "covariance")?;
    Ok(CovarianceMatrix { n_modes: n, values: t.data().to_vec() })
}

/// `C` and `S` stored as `[M, M, 2]` (real, imaginary) tensors.
pub fn greens_container(g: &GreenPair) -> Result<Container> {
    let mut c = Container::new().with_meta("kind", "greens")?.with_meta("n", g.n_modes)?;
    c.push("c", complex_tensor(&g.c, g.n_modes));
    c.push("s", complex_tensor(&g.s, g.n_modes));
    Ok(c)
}

pub fn greens_from(c: &Container) -> Result<GreenPair> {
    c.expect_kind("greens")?;
    let n: usize = c.meta_field("n")?;
    let (tc, ts) = (c.get("c")?, c.get("s")?);
    shaped(tc, &[n, n, 2], "C")?;
    shaped(ts, &[n, n, 2], "S")?;
    GreenPair::with_c(n, complex_values(tc), complex_values(ts))
}

/// Frame sets as one `[B, S, n, n]` tensor; header `{n, S, dtype, seed}`.
pub fn frames_container(sets: &[FrameSet], seed: u64) -> Result<Container> {
    let first = sets.first().ok_or_else(|| Error::Empty("no frame sets to store".into()))?;
    let (n, s) = (first.n, first.len());
    if sets.iter().any(|fs| fs.n != n || fs.len() != s) {
        return Err(Error::Dimension("frame sets differ in size".into()));
    }
    let mut c = Container::new()
        .with_meta("kind", "frames")?
        .with_meta("n", n)?
        .with_meta("S", s)?
        .with_meta("seed", seed)?;
    let data = sets.iter().flat_map(|fs| fs.stacked()).collect();
    c.push("frames", Tensor::new(vec![sets.len(), s, n, n], data));
    Ok(c)
}

pub fn frames_from(c: &Container) -> Result<Vec<FrameSet>> {
    c.expect_kind("frames")?;
    let (n, s): (usize, usize) = (c.meta_field("n")?, c.meta_field("S")?);
    let t = c.get("frames")?;
    let b = t.shape().first().copied().unwrap_or(0);
    shaped(t, &[b, s, n, n], "frames")?;
    t.data()
        .chunks_exact((s * n * n).max(1))
        .map(|set| FrameSet::new(n, set.chunks_exact(n * n).map(|f| Frame::new(n, f.to_vec())).collect::<Result<_>>()?))
        .collect()
}

pub fn masks_container(masks: &[&ObjectMask]) -> Result<Container> {
    let n = masks.first().ok_or_else(|| Error::Empty("no masks to store".into()))?.n;
    if masks.iter().any(|m| m.n != n) {
        return Err(Error::Dimension("masks differ in size".into()));
    }
    let mut c = Container::new().with_meta("kind", "masks")?.with_meta("n", n)?;
    let data = masks.iter().flat_map(|m| m.transmittance.iter().copied()).collect();
    c.push("masks", Tensor::new(vec![masks.len(), n, n], data));
    Ok(c)
}

pub fn masks_from(c: &Container) -> Result<Vec<ObjectMask>> {
    c.expect_kind("masks")?;
    let n: usize = c.meta_field("n")?;
    let t = c.get("masks")?;
    shaped(t, &[t.shape().first().copied().unwrap_or(0), n, n], "masks")?;
    t.data().chunks_exact(n * n).map(|m| ObjectMask::new(n, m.to_vec())).collect()
}

/// Modulator patterns with the mean fields they produced.
pub fn measurements_container(grid: &PixelGrid, ms: &[MeanFieldMeasurement]) -> Result<Container> {
    let m = ms.first().ok_or_else(|| Error::Empty("no measurements to store".into()))?.slm.m;
    if ms.iter().any(|x| x.slm.m != m || x.observed.n != grid.n) {
        return Err(Error::Dimension("measurements differ in size".into()));
    }
    let mut c = Container::new()
        .with_meta("kind", "measurements")?
        .with_meta("grid", grid)?
        .with_meta("m", m)?;
    let k = ms.len();
    c.push("phase", Tensor::new(vec![k, m, m], ms.iter().flat_map(|x| x.slm.phase.iter().copied()).collect()));
    c.push("aperture", Tensor::new(vec![k, m, m], ms.iter().flat_map(|x| x.slm.aperture.iter().copied()).collect()));
    c.push(
        "observed",
        Tensor::new(vec![k, grid.n, grid.n], ms.iter().flat_map(|x| x.observed.values.iter().copied()).collect()),
    );
    Ok(c)
}

pub fn measurements_from(c: &Container) -> Result<(PixelGrid, Vec<MeanFieldMeasurement>)> {
    c.expect_kind("measurements")?;
    let grid: PixelGrid = c.meta_field("grid")?;
    grid.validate()?;
    let m: usize = c.meta_field("m")?;
    let (phase, aperture, observed) = (c.get("phase")?, c.get("aperture")?, c.get("observed")?);
    let k = phase.shape().first().copied().unwrap_or(0);
    shaped(phase, &[k, m, m], "phase")?;
    shaped(aperture, &[k, m, m], "aperture")?;
    shaped(observed, &[k, grid.n, grid.n], "observed")?;
    let ms = (0..k)
        .map(|i| {
            let slm_block = |t: &Tensor| t.data()[i * m * m..(i + 1) * m * m].to_vec();
            let nn = grid.n * grid.n;
            Ok(MeanFieldMeasurement {
                slm: SlmPhase::new(m, slm_block(phase), slm_block(aperture))?,
                observed: MeanField::new(grid.n, observed.data()[i * nn..(i + 1) * nn].to_vec())?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((grid, ms))
}

/// Generator bookkeeping needed to resume or reproduce a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub digital_round: u64,
    pub physical_round: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SourceMeta {
    kind: SourceKind,
    grid: PixelGrid,
    pm: PhasematchParams,
    slm_m: usize,
    quantize_levels: Option<usize>,
}

/// Source and classifier parameters of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub source: Source,
    pub model: TransformerParams,
    pub rng_state: RngState,
    pub config_hash: String,
}

impl Checkpoint {
    pub fn to_container(&self) -> Result<Container> {
        let src = &self.source;
        let meta = SourceMeta {
            kind: src.kind,
            grid: src.grid,
            pm: src.pm,
            slm_m: src.slm.m,
            quantize_levels: src.quantize_levels,
        };
        let mut c = Container::new()
            .with_meta("kind", "checkpoint")?
            .with_meta("version", CHECKPOINT_VERSION)?
            .with_meta("source", meta)?
            .with_meta("model", self.model.config)?
            .with_meta("rng_state", self.rng_state)?
            .with_meta("config_hash", &self.config_hash)?;
        let m = src.slm.m;
        c.push("slm.phase", Tensor::matrix(m, m, src.slm.phase.clone()));
        c.push("slm.aperture", Tensor::matrix(m, m, src.slm.aperture.clone()));
        if let Some(fs) = &src.free_s {
            c.push("free_s.re", Tensor::matrix(fs.modes, fs.modes, fs.re.clone()));
            c.push("free_s.im", Tensor::matrix(fs.modes, fs.modes, fs.im.clone()));
        }
        for (i, t) in self.model.tensors().into_iter().enumerate() {
            c.push(&format!("model.{i:02}"), t.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind("checkpoint")?;
        let version: u32 = c.meta_field("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("checkpoint version {version} is not supported")));
        }
        let meta: SourceMeta = c.meta_field("source")?;
        let (phase, aperture) = (c.get("slm.phase")?, c.get("slm.aperture")?);
        shaped(phase, &[meta.slm_m, meta.slm_m], "slm phase")?;
        shaped(aperture, &[meta.slm_m, meta.slm_m], "slm aperture")?;
        let slm = SlmPhase::new(meta.slm_m, phase.data().to_vec(), aperture.data().to_vec())?;
        let mut source = Source::new(meta.kind, meta.grid, meta.pm, slm)?.with_quantization(meta.quantize_levels)?;
        if c.has("free_s.re") {
            let modes = meta.grid.n_pixels();
            let (re, im) = (c.get("free_s.re")?, c.get("free_s.im")?);
            shaped(re, &[modes, modes], "free S")?;
            shaped(im, &[modes, modes], "free S")?;
            source.free_s = Some(FreeS { modes, re: re.data().to_vec(), im: im.data().to_vec() });
            source.mean_field()?;
        }

        let config: TransformerConfig = c.meta_field("model")?;
        let mut model = TransformerParams::init(config, &mut crate::rng::seeded(0))?;
        let slots = model.tensors_mut();
        let n_slots = slots.len();
        for (i, slot) in slots.into_iter().enumerate() {
            let t = c.get(&format!("model.{i:02}"))?;
            shaped(t, &slot.shape().to_vec(), "model tensor")?;
            *slot = t.clone();
        }
        if c.has(&format!("model.{n_slots:02}")) {
            return Err(Error::Format("checkpoint holds more model tensors than the architecture".into()));
        }
        Ok(Self {
            source,
            model,
            rng_state: c.meta_field("rng_state")?,
            config_hash: c.meta_field("config_hash")?,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}

/// Header fields shared by every CLI output.
pub fn provenance(config_hash: &str, seed: u64) -> Value {
    json!({ "config_hash": config_hash, "seed": seed, "version": env!("CARGO_PKG_VERSION") })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{build_greens, covariance, mean_field, pump_spectrum_from_slm};

    fn small_source(kind: SourceKind) -> Source {
        let grid = PixelGrid::unit(3).unwrap();
        let pm = PhasematchParams::new(0.5, 0.1, 0.05, 1.0).unwrap();
        Source::new(kind, grid, pm, SlmPhase::gaussian(5, 2.0)).unwrap()
    }

    #[test]
    fn container_round_trips_bytes() {
        let mut c = Container::new().with_meta("kind", "test").unwrap().with_meta("x", [1, 2]).unwrap();
        c.push("a", Tensor::matrix(2, 3, vec![1.0, -2.5, 3.0, f64::MIN_POSITIVE, 0.0, 1e300]));
        c.push("b", Tensor::vector(vec![]));
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], b"CORRVIS1");
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupt_containers_are_rejected() {
        let mut c = Container::new().with_meta("kind", "test").unwrap();
        c.push("a", Tensor::vector(vec![1.0, 2.0]));
        let bytes = c.to_bytes().unwrap();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Container::from_bytes(&bad).is_err());
    }

    #[test]
    fn optics_matrices_round_trip() {
        let src = small_source(SourceKind::SpdcTrained);
        let g = build_greens(&pump_spectrum_from_slm(&src.slm, &src.grid).unwrap(), &src.pm, &src.grid).unwrap();
        let m = mean_field(&g).unwrap();
        let cov = covariance(&g).unwrap();
        let back = |c: Container| Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(greens_from(&back(greens_container(&g).unwrap())).unwrap(), g);
        assert_eq!(mean_field_from(&back(mean_field_container(&m).unwrap())).unwrap(), m);
        assert_eq!(covariance_from(&back(covariance_container(&cov).unwrap())).unwrap(), cov);
        assert!(covariance_from(&back(mean_field_container(&m).unwrap())).is_err());
    }

    #[test]
    fn frame_sets_round_trip() {
        let sets: Vec<FrameSet> = (0..3)
            .map(|b| {
                let frames = (0..2).map(|s| Frame::new(2, vec![b as f64, s as f64, 1.0, 0.0]).unwrap()).collect();
                FrameSet::new(2, frames).unwrap()
            })
            .collect();
        let c = frames_container(&sets, 42).unwrap();
        assert_eq!(c.meta_field::<usize>("S").unwrap(), 2);
        assert_eq!(c.meta_field::<u64>("seed").unwrap(), 42);
        assert_eq!(frames_from(&Container::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap(), sets);
    }

    #[test]
    fn checkpoints_round_trip() {
        for kind in [SourceKind::SpdcTrained, SourceKind::SpdcIdeal, SourceKind::Coherent] {
            let source = small_source(kind);
            let config = TransformerConfig { d_model: 8, n_heads: 2, head_hidden: 4, ..TransformerConfig::new(9, 3) };
            let model = TransformerParams::init(config, &mut crate::rng::seeded(5)).unwrap();
            let ck = Checkpoint {
                source,
                model,
                rng_state: RngState { seed: 9, digital_round: 3, physical_round: 1 },
                config_hash: "abc".into(),
            };
            let bytes = ck.to_container().unwrap().to_bytes().unwrap();
            let back = Checkpoint::from_container(&Container::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back, ck);
        }
    }

    #[test]
    fn measurements_round_trip() {
        let grid = PixelGrid::unit(3).unwrap();
        let ms = vec![MeanFieldMeasurement {
            slm: SlmPhase::disk(5, 2.0),
            observed: MeanField::new(3, (0..9).map(|v| v as f64).collect()).unwrap(),
        }];
        let (g, back) = measurements_from(&measurements_container(&grid, &ms).unwrap()).unwrap();
        assert_eq!(g, grid);
        assert_eq!(back, ms);
    }
}
