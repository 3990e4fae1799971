//! Experiment configuration: one versioned TOML schema shared by every
//! subcommand. Unknown keys are rejected.

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibration::{FitOptions, GainFitOptions};
use crate::datasets::{generate_shape_dataset, DatasetSpec, ObjectRecord};
use crate::error::{Error, Result};
use crate::optics::{PhasematchParams, PixelGrid, SlmPhase};
use crate::pipeline::{EvalSpec, Source, SourceKind, TrainConfig};
use crate::rng::{self, tag};
use crate::sensing::{CameraModel, ObjectMask};
use crate::toy::default_eps_grid;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d::version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d::grid")]
    pub grid: PixelGrid,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default = "d::phasematch")]
    pub phasematch: PhasematchParams,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default = "d::dataset")]
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub loss_sweep: LossSweepConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub toy: ToyConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

/// Pump amplitude profile on the modulator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase", deny_unknown_fields)]
pub enum Aperture {
    Flat,
    Disk { radius: f64 },
    Gaussian { waist: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default = "d::kind")]
    pub kind: SourceKind,
    #[serde(default = "d::slm_side")]
    pub slm_side: usize,
    #[serde(default = "d::aperture")]
    pub aperture: Aperture,
    /// Half-width of the uniform random starting phase; 0 starts flat.
    #[serde(default)]
    pub initial_phase: f64,
    #[serde(default)]
    pub quantize_levels: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    #[serde(default = "d::em_gain")]
    pub em_gain: f64,
    #[serde(default = "d::electrons_per_count")]
    pub electrons_per_count: f64,
    #[serde(default = "d::quantum_efficiency")]
    pub quantum_efficiency: f64,
    /// Mean of the truncated geometric background, used unless
    /// `background_pmf` is given.
    #[serde(default = "d::background_mean")]
    pub background_mean: f64,
    #[serde(default = "d::background_kmax")]
    pub background_kmax: usize,
    #[serde(default)]
    pub background_pmf: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d::shots")]
    pub shots: Vec<usize>,
    #[serde(default = "d::budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "d::sets_per_object")]
    pub sets_per_object: usize,
    #[serde(default = "d::passes")]
    pub passes: usize,
    /// Side of the central window used for the clicks-per-shot axis;
    /// defaults to the dataset region.
    #[serde(default)]
    pub window: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSweepConfig {
    #[serde(default = "d::transmissions")]
    pub transmissions: Vec<f64>,
    #[serde(default = "d::sets_per_object")]
    pub sets_per_object: usize,
    #[serde(default = "d::sweep_passes")]
    pub passes: usize,
}

/// Object placed in front of the camera by `simulate`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ObjectChoice {
    Open,
    Uniform(f64),
    Instance(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "d::n_events")]
    pub n_events: usize,
    #[serde(default = "d::set_size")]
    pub set_size: usize,
    #[serde(default = "d::object")]
    pub object: ObjectChoice,
    #[serde(default = "d::one")]
    pub transmission: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    #[serde(default = "d::mean_photons")]
    pub mean_photons: f64,
    #[serde(default = "default_eps_grid")]
    pub eps: Vec<f64>,
    #[serde(default = "d::grid_steps")]
    pub grid_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default)]
    pub phasematch: FitOptions,
    #[serde(default)]
    pub gain: GainFitOptions,
    /// Starting point of the phasematching fit; defaults to the
    /// `[phasematch]` block.
    #[serde(default)]
    pub initial: Option<PhasematchParams>,
}

mod d {
    use super::*;

    pub fn version() -> u32 {
        SCHEMA_VERSION
    }
    pub fn grid() -> PixelGrid {
        PixelGrid { n: 16, dq: 1.0 }
    }
    pub fn phasematch() -> PhasematchParams {
        PhasematchParams { mu00: 0.8, alpha_lz: 0.12, delta_lz: 0.02, amplitude: 1.0 }
    }
    pub fn dataset() -> DatasetSpec {
        DatasetSpec::new(5, 5, 10)
    }
    pub fn kind() -> SourceKind {
        SourceKind::SpdcTrained
    }
    pub fn slm_side() -> usize {
        32
    }
    pub fn aperture() -> Aperture {
        Aperture::Gaussian { waist: 12.0 }
    }
    pub fn em_gain() -> f64 {
        1000.0
    }
    pub fn electrons_per_count() -> f64 {
        1.85
    }
    pub fn quantum_efficiency() -> f64 {
        0.905
    }
    pub fn background_mean() -> f64 {
        0.05
    }
    pub fn background_kmax() -> usize {
        5
    }
    pub fn shots() -> Vec<usize> {
        vec![2, 6, 10, 20, 50, 100]
    }
    pub fn budgets() -> Vec<usize> {
        vec![10, 20, 40]
    }
    pub fn sets_per_object() -> usize {
        20
    }
    pub fn passes() -> usize {
        50
    }
    pub fn sweep_passes() -> usize {
        10
    }
    pub fn transmissions() -> Vec<f64> {
        vec![1.0, 0.8, 0.6, 0.4]
    }
    pub fn n_events() -> usize {
        20
    }
    pub fn set_size() -> usize {
        10
    }
    pub fn object() -> ObjectChoice {
        ObjectChoice::Open
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn mean_photons() -> f64 {
        0.1
    }
    pub fn grid_steps() -> usize {
        181
    }
}

macro_rules! default_from_empty {
    ($($t:ty),*) => {$(
        impl Default for $t {
            fn default() -> Self {
                toml::from_str("").expect("all fields have defaults")
            }
        }
    )*};
}

default_from_empty!(ExperimentConfig, SourceConfig, CameraConfig, EvalConfig, LossSweepConfig, SimulateConfig, ToyConfig);

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(canonical).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        check(self.version == SCHEMA_VERSION, || {
            format!("config version {} is not supported (expected {SCHEMA_VERSION})", self.version)
        })?;
        self.grid.validate().map_err(cfg_err)?;
        self.phasematch.validate().map_err(cfg_err)?;
        self.camera().map_err(cfg_err)?;
        self.train.validate().map_err(cfg_err)?;

        let s = &self.source;
        let need = if s.kind.correlated() { self.grid.sum_side() } else { self.grid.n };
        check(s.slm_side >= need, || format!("source.slm_side {} must be at least {need}", s.slm_side))?;
        check(s.initial_phase.is_finite() && s.initial_phase >= 0.0, || "source.initial_phase must be >= 0".into())?;
        check(s.quantize_levels.map_or(true, |l| l >= 2), || "source.quantize_levels must be >= 2".into())?;
        match s.aperture {
            Aperture::Flat => {}
            Aperture::Disk { radius: r } | Aperture::Gaussian { waist: r } => {
                check(r.is_finite() && r > 0.0, || "aperture size must be > 0".into())?
            }
        }

        let ds = &self.dataset;
        check(ds.region >= 3 && ds.region <= self.grid.n, || {
            format!("dataset.region {} must lie in [3, {}]", ds.region, self.grid.n)
        })?;
        check((1..=5).contains(&ds.n_classes), || "dataset.n_classes must lie in [1, 5]".into())?;
        check(ds.per_class >= 2, || "dataset.per_class must be at least 2".into())?;

        let e = &self.eval;
        check(!e.shots.is_empty() && e.shots.iter().all(|&s| s > 0), || "eval.shots must be positive".into())?;
        check(!e.budgets.is_empty() && e.budgets.iter().all(|&b| b > 0), || "eval.budgets must be positive".into())?;
        check(e.sets_per_object > 0 && e.passes > 0, || "eval.sets_per_object and eval.passes must be > 0".into())?;
        check(e.window.map_or(true, |w| w > 0 && w <= self.grid.n), || "eval.window must lie in [1, n]".into())?;

        let l = &self.loss_sweep;
        check(l.transmissions.iter().all(|t| (0.0..=1.0).contains(t)), || {
            "loss_sweep.transmissions must lie in [0, 1]".into()
        })?;
        check(l.sets_per_object > 0 && l.passes > 0, || "loss_sweep sets and passes must be > 0".into())?;

        let sim = &self.simulate;
        check(sim.set_size > 0, || "simulate.set_size must be > 0".into())?;
        check((0.0..=1.0).contains(&sim.transmission), || "simulate.transmission must lie in [0, 1]".into())?;
        if let ObjectChoice::Uniform(t) = sim.object {
            check((0.0..=1.0).contains(&t), || "simulate.object uniform transmittance must lie in [0, 1]".into())?;
        }

        let t = &self.toy;
        check(t.mean_photons.is_finite() && t.mean_photons >= 0.0, || "toy.mean_photons must be >= 0".into())?;
        check(t.eps.iter().all(|e| (0.0..=1.0).contains(e)), || "toy.eps must lie in [0, 1]".into())?;
        check(t.grid_steps >= 2, || "toy.grid_steps must be at least 2".into())?;
        if let Some(pm) = &self.calibration.initial {
            pm.validate().map_err(cfg_err)?;
        }
        Ok(())
    }

    pub fn camera(&self) -> Result<CameraModel> {
        let c = &self.camera;
        let pmf = match &c.background_pmf {
            Some(p) => p.clone(),
            None => {
                check(c.background_mean.is_finite() && c.background_mean >= 0.0, || {
                    "camera.background_mean must be >= 0".into()
                })?;
                CameraModel::geometric_with_mean(c.background_mean, c.background_kmax)
            }
        };
        let cam = CameraModel {
            em_gain: c.em_gain,
            electrons_per_count: c.electrons_per_count,
            quantum_efficiency: c.quantum_efficiency,
            background_pmf: pmf,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Starting modulator: the configured aperture behind a flat or seeded
    /// random phase.
    pub fn slm(&self) -> Result<SlmPhase> {
        let s = &self.source;
        let m = s.slm_side;
        let slm = match s.aperture {
            Aperture::Flat => SlmPhase::flat(m),
            Aperture::Disk { radius } => SlmPhase::disk(m, radius),
            Aperture::Gaussian { waist } => SlmPhase::gaussian(m, waist),
        };
        if s.initial_phase == 0.0 {
            return Ok(slm);
        }
        let a = s.initial_phase;
        let mut r = rng::derive(self.seed, &[tag::INIT, 1]);
        let phase = (0..m * m).map(|_| r.gen_range(-a..a)).collect();
        slm.with_phase(phase)
    }

    pub fn build_source(&self, kind: SourceKind) -> Result<Source> {
        Source::new(kind, self.grid, self.phasematch, self.slm()?)?.with_quantization(self.source.quantize_levels)
    }

    pub fn records(&self) -> Result<Vec<ObjectRecord>> {
        generate_shape_dataset(&self.dataset, self.grid.n, self.seed)
    }

    pub fn window(&self) -> usize {
        self.eval.window.unwrap_or(self.dataset.region)
    }

    pub fn eval_spec(&self) -> EvalSpec {
        EvalSpec {
            n_events: self.train.n_events,
            set_size: self.train.set_size,
            sets_per_object: self.eval.sets_per_object,
            passes: self.eval.passes,
            augment_shift: self.train.augment_shift,
            transmission: 1.0,
        }
    }

    pub fn simulate_mask(&self) -> Result<ObjectMask> {
        match self.simulate.object {
            ObjectChoice::Open => Ok(ObjectMask::open(self.grid.n)),
            ObjectChoice::Uniform(t) => ObjectMask::uniform(self.grid.n, t),
            ObjectChoice::Instance(id) => self
                .records()?
                .into_iter()
                .find(|r| r.instance_id == id)
                .map(|r| r.mask)
                .ok_or_else(|| Error::Config(format!("dataset has no instance {id}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_valid_defaults() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.eval.shots, vec![2, 6, 10, 20, 50, 100]);
        assert_eq!(cfg.train.lr_physical, 0.05);
        assert_eq!(cfg.toy.eps.len(), 11);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["colour = 1", "[grid]\nn = 8\nm = 3", "[train]\nlearning_rate = 1.0", "[source]\naperture = { shape = \"disk\", radius = 2.0, x = 1 }"] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in [
            "version = 2",
            "[grid]\nn = 1",
            "[source]\nslm_side = 8",
            "[dataset]\nregion = 40",
            "[eval]\nshots = []",
            "[loss_sweep]\ntransmissions = [1.5]",
            "[camera]\nbackground_pmf = [0.5]",
            "[train]\nlr_physical = -1.0",
        ] {
            assert!(matches!(ExperimentConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn round_trips_and_hash_tracks_content() {
        let text = "seed = 3\n[source]\nkind = \"spdc-ideal\"\naperture = { shape = \"disk\", radius = 9.0 }\n\
                    initial_phase = 1.0\n[simulate]\nobject = { uniform = 0.0 }\n[camera]\nbackground_pmf = [1.0]\n";
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.source.kind, SourceKind::SpdcIdeal);
        assert_eq!(cfg.simulate.object, ObjectChoice::Uniform(0.0));
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
        let other = ExperimentConfig { seed: 4, ..cfg.clone() };
        assert_ne!(other.hash(), cfg.hash());
    }

    #[test]
    fn random_phase_is_seeded() {
        let cfg = ExperimentConfig::from_toml("[source]\ninitial_phase = 3.0").unwrap();
        let a = cfg.slm().unwrap();
        assert_eq!(a, cfg.slm().unwrap());
        assert!(a.phase.iter().all(|p| p.abs() <= 3.0));
        assert!(a.phase.iter().any(|p| *p != 0.0));
        let flat = ExperimentConfig::default().slm().unwrap();
        assert!(flat.phase.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn simulate_objects_resolve() {
        let cfg = ExperimentConfig::from_toml("[simulate]\nobject = { instance = 3 }").unwrap();
        assert_eq!(cfg.simulate_mask().unwrap(), cfg.records().unwrap()[3].mask);
        let missing = ExperimentConfig::from_toml("[simulate]\nobject = { instance = 999 }").unwrap();
        assert!(matches!(missing.simulate_mask(), Err(Error::Config(_))));
    }
}
