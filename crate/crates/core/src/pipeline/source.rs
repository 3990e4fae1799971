use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{checksum_f64, Graph, NodeId};
use crate::optics::{
    biphoton_jpd, build_greens, far_field_adjoint, far_field_from_slm, pump_spectrum_adjoint, pump_spectrum_from_slm,
    spdc_mean_field, spdc_mean_field_vjp, GreenPair, JointPairDistribution, MeanField, PhasematchParams, PixelGrid,
    SlmPhase,
};
use crate::sensing::{Illumination, PairSampler};
use crate::tensor::Tensor;

/// Illumination taxonomy of the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    /// Phase-modulated laser beam, Poisson statistics.
    Coherent,
    /// Pump-shaped pair source whose modulator stays fixed.
    SpdcUntrained,
    /// Pump-shaped pair source with a trainable modulator phase.
    SpdcTrained,
    /// Pair source with an arbitrary symmetric `S`.
    SpdcIdeal,
}

impl SourceKind {
    pub fn correlated(self) -> bool {
        self != Self::Coherent
    }

    pub fn trainable(self) -> bool {
        self != Self::SpdcUntrained
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Coherent => "coherent",
            Self::SpdcUntrained => "spdc-untrained",
            Self::SpdcTrained => "spdc-trained",
            Self::SpdcIdeal => "spdc-ideal",
        }
    }
}

/// Free pair-creation matrix, stored unsymmetrized; the source uses
/// `S = (P + Pᵀ)/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeS {
    pub modes: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl FreeS {
    pub fn from_greens(g: &GreenPair) -> Self {
        Self {
            modes: g.n_modes,
            re: g.s.iter().map(|v| v.re).collect(),
            im: g.s.iter().map(|v| v.im).collect(),
        }
    }

    fn symmetric(re: &[f64], im: &[f64], modes: usize) -> Vec<Complex64> {
        let mut s = vec![Complex64::new(0.0, 0.0); modes * modes];
        for i in 0..modes {
            for j in 0..modes {
                let (a, b) = (i * modes + j, j * modes + i);
                s[a] = Complex64::new(0.5 * (re[a] + re[b]), 0.5 * (im[a] + im[b]));
            }
        }
        s
    }

    pub fn greens(&self) -> Result<GreenPair> {
        GreenPair::from_s(self.modes, Self::symmetric(&self.re, &self.im, self.modes))
    }
}

fn row_power(s: &[Complex64], modes: usize) -> Vec<f64> {
    s.chunks(modes).map(|row| row.iter().map(|v| v.norm_sqr()).sum()).collect()
}

/// An illumination source together with its trainable parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub kind: SourceKind,
    pub grid: PixelGrid,
    pub pm: PhasematchParams,
    pub slm: SlmPhase,
    pub free_s: Option<FreeS>,
    /// Phase levels used in the forward pass; `None` keeps phases continuous.
    pub quantize_levels: Option<usize>,
}

impl Source {
    pub fn new(kind: SourceKind, grid: PixelGrid, pm: PhasematchParams, slm: SlmPhase) -> Result<Self> {
        grid.validate()?;
        pm.validate()?;
        slm.validate()?;
        let mut src = Self { kind, grid, pm, slm, free_s: None, quantize_levels: None };
        if kind == SourceKind::SpdcIdeal {
            // start from the pump-shaped source so both begin identical
            let g = src.slm_greens()?;
            src.free_s = Some(FreeS::from_greens(&g));
        }
        src.mean_field()?;
        Ok(src)
    }

    pub fn with_quantization(mut self, levels: Option<usize>) -> Result<Self> {
        if levels.is_some_and(|l| l < 2) {
            return Err(Error::InvalidParameter("phase quantization needs at least 2 levels".into()));
        }
        self.quantize_levels = levels;
        Ok(self)
    }

    fn effective_slm(&self) -> SlmPhase {
        match self.quantize_levels {
            Some(l) => SlmPhase { phase: crate::grad::quantize_phase(&self.slm.phase, l), ..self.slm.clone() },
            None => self.slm.clone(),
        }
    }

    fn slm_greens(&self) -> Result<GreenPair> {
        build_greens(&pump_spectrum_from_slm(&self.effective_slm(), &self.grid)?, &self.pm, &self.grid)
    }

    /// Green's functions of a correlated source.
    pub fn greens(&self) -> Result<GreenPair> {
        match (self.kind, &self.free_s) {
            (SourceKind::Coherent, _) => Err(Error::InvalidParameter("a coherent source has no pair matrix".into())),
            (SourceKind::SpdcIdeal, Some(f)) => f.greens(),
            (SourceKind::SpdcIdeal, None) => Err(Error::InvalidParameter("ideal source lacks its free matrix".into())),
            _ => self.slm_greens(),
        }
    }

    pub fn jpd(&self) -> Result<JointPairDistribution> {
        biphoton_jpd(&self.greens()?)
    }

    fn nu_power(&self, slm: &SlmPhase) -> Result<Vec<f64>> {
        Ok(pump_spectrum_from_slm(slm, &self.grid)?.values.iter().map(|v| v.norm_sqr()).collect())
    }

    pub fn mean_field(&self) -> Result<MeanField> {
        let values = match self.kind {
            SourceKind::Coherent => {
                far_field_from_slm(&self.effective_slm(), &self.grid)?.iter().map(|v| v.norm_sqr()).collect()
            }
            SourceKind::SpdcIdeal => {
                let f = self.free_s.as_ref().ok_or_else(|| Error::InvalidParameter("missing free matrix".into()))?;
                row_power(&FreeS::symmetric(&f.re, &f.im, f.modes), f.modes)
            }
            _ => spdc_mean_field(&self.nu_power(&self.effective_slm())?, &self.pm, &self.grid)?,
        };
        let mf = MeanField::new(self.grid.n, values)?;
        if !(mf.total() > 0.0) {
            return Err(Error::Degenerate(format!("{} source emits no light on the grid", self.kind.as_str())));
        }
        Ok(mf)
    }

    pub fn illumination(&self) -> Result<Illumination> {
        if self.kind.correlated() {
            Ok(Illumination::Correlated(PairSampler::new(&self.jpd()?)?))
        } else {
            Ok(Illumination::Coherent(self.mean_field()?))
        }
    }

    /// Flat copy of the trainable physical parameters.
    pub fn physical(&self) -> Vec<f64> {
        match &self.free_s {
            Some(f) if self.kind == SourceKind::SpdcIdeal => f.re.iter().chain(&f.im).copied().collect(),
            _ => self.slm.phase.clone(),
        }
    }

    pub fn set_physical(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.physical().len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("physical parameter update has wrong length or is non-finite".into()));
        }
        match (&mut self.free_s, self.kind) {
            (Some(f), SourceKind::SpdcIdeal) => {
                let half = f.re.len();
                f.re.copy_from_slice(&values[..half]);
                f.im.copy_from_slice(&values[half..]);
            }
            _ => self.slm.phase.copy_from_slice(values),
        }
        Ok(())
    }

    pub fn checksum(&self) -> u64 {
        checksum_f64(&self.physical())
    }

    /// Adds the physical parameters as a leaf and returns `(leaf, mean)` where
    /// `mean` is the differentiable `n²` mean field.
    pub fn mean_field_node(&self, g: &mut Graph) -> Result<(NodeId, NodeId)> {
        let params = self.physical();
        let leaf = g.leaf(Tensor::vector(params));
        let mean = match self.kind {
            SourceKind::SpdcIdeal => self.ideal_node(g, leaf)?,
            _ => {
                let phase = match self.quantize_levels {
                    Some(l) => g.quantize_ste(leaf, l),
                    None => leaf,
                };
                if self.kind == SourceKind::Coherent {
                    self.far_field_node(g, phase)?
                } else {
                    self.spdc_node(g, phase)?
                }
            }
        };
        Ok((leaf, mean))
    }

    fn slm_with(&self, phase: &Tensor) -> SlmPhase {
        SlmPhase { phase: phase.data().to_vec(), ..self.slm.clone() }
    }

    fn spdc_node(&self, g: &mut Graph, phase: NodeId) -> Result<NodeId> {
        let slm = self.slm_with(g.value(phase));
        let spectrum = pump_spectrum_from_slm(&slm, &self.grid)?;
        let power: Vec<f64> = spectrum.values.iter().map(|v| v.norm_sqr()).collect();
        let mean = spdc_mean_field(&power, &self.pm, &self.grid)?;
        let (grid, pm, base) = (self.grid, self.pm, self.slm.clone());
        Ok(g.custom(
            vec![phase],
            Tensor::vector(mean),
            Box::new(move |go, p, _| {
                let (g_power, _) = spdc_mean_field_vjp(&power, &pm, &grid, go.data()).expect("shapes fixed at forward");
                let g_nu: Vec<Complex64> =
                    spectrum.values.iter().zip(&g_power).map(|(v, gp)| v * (2.0 * gp)).collect();
                let slm = SlmPhase { phase: p[0].data().to_vec(), ..base.clone() };
                let g_phase = pump_spectrum_adjoint(&slm, &grid, &g_nu).expect("shapes fixed at forward");
                vec![Some(Tensor::vector(g_phase))]
            }),
        ))
    }

    fn far_field_node(&self, g: &mut Graph, phase: NodeId) -> Result<NodeId> {
        let slm = self.slm_with(g.value(phase));
        let field = far_field_from_slm(&slm, &self.grid)?;
        let intensity: Vec<f64> = field.iter().map(|v| v.norm_sqr()).collect();
        let (grid, base) = (self.grid, self.slm.clone());
        Ok(g.custom(
            vec![phase],
            Tensor::vector(intensity),
            Box::new(move |go, p, _| {
                let g_field: Vec<Complex64> = field.iter().zip(go.data()).map(|(e, gi)| e * (2.0 * gi)).collect();
                let slm = SlmPhase { phase: p[0].data().to_vec(), ..base.clone() };
                vec![Some(Tensor::vector(far_field_adjoint(&slm, &grid, &g_field).expect("shapes fixed at forward")))]
            }),
        ))
    }

    fn ideal_node(&self, g: &mut Graph, leaf: NodeId) -> Result<NodeId> {
        let modes = self.grid.n_pixels();
        let v = g.value(leaf).data();
        if v.len() != 2 * modes * modes {
            return Err(Error::Dimension("free matrix does not match the grid".into()));
        }
        let s = FreeS::symmetric(&v[..modes * modes], &v[modes * modes..], modes);
        let mean = row_power(&s, modes);
        Ok(g.custom(
            vec![leaf],
            Tensor::vector(mean),
            Box::new(move |go, _, _| {
                // dL/dP_ab = (G_a + G_b) S_ab for both real and imaginary parts
                let gm = go.data();
                let mut out = vec![0.0; 2 * modes * modes];
                let (re, im) = out.split_at_mut(modes * modes);
                for a in 0..modes {
                    for b in 0..modes {
                        let k = a * modes + b;
                        let w = gm[a] + gm[b];
                        re[k] = w * s[k].re;
                        im[k] = w * s[k].im;
                    }
                }
                vec![Some(Tensor::vector(out))]
            }),
        ))
    }
}

/// Probability that at least one of `n_events` pairs reaches the camera with
/// both photons through the mask.
pub fn pair_transmission(jpd: &JointPairDistribution, transmittance: &[f64], n_events: usize) -> Result<f64> {
    if transmittance.len() != jpd.n_modes {
        return Err(Error::Dimension("mask does not match the pair distribution".into()));
    }
    let p = jpd.pair_survival(transmittance).clamp(0.0, 1.0);
    Ok(-((n_events as f64) * (-p).ln_1p()).exp_m1())
}
