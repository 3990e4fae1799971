use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rand_distr::Poisson;
use rayon::prelude::*;

use super::{CameraModel, Frame, FrameSet, ObjectMask};
use crate::error::{Error, Result};
use crate::optics::{pair_from_index, JointPairDistribution, MeanField, PixelGrid};
use crate::rng::{self, tag, Rng};

/// Bijection between a flat event index and an ordered pixel pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventIndexer {
    pub n_pixels: usize,
}

impl EventIndexer {
    pub fn new(n_pixels: usize) -> Self {
        Self { n_pixels }
    }

    pub fn n_events(&self) -> usize {
        self.n_pixels * self.n_pixels
    }

    pub fn encode(&self, i: usize, j: usize) -> usize {
        i * self.n_pixels + j
    }

    pub fn decode(&self, index: usize) -> (usize, usize) {
        (index / self.n_pixels, index % self.n_pixels)
    }
}

/// Categorical sampler over the unordered pairs of a joint pair
/// distribution. Building it is the expensive part, so one sampler serves
/// every frame of a mini-batch.
#[derive(Clone, Debug)]
pub struct PairSampler {
    n_modes: usize,
    dist: WeightedIndex<f64>,
}

impl PairSampler {
    pub fn new(jpd: &JointPairDistribution) -> Result<Self> {
        let dist = WeightedIndex::new(&jpd.probs)
            .map_err(|e| Error::Degenerate(format!("cannot sample pair distribution: {e}")))?;
        Ok(Self { n_modes: jpd.n_modes, dist })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn draw(&self, rng: &mut Rng) -> (usize, usize) {
        pair_from_index(self.dist.sample(rng), self.n_modes)
    }

    pub fn draw_many(&self, n_events: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
        (0..n_events).map(|_| self.draw(rng)).collect()
    }
}

/// `n_events` independent pair draws.
pub fn sample_pairs(jpd: &JointPairDistribution, n_events: usize, rng: &mut Rng) -> Result<Vec<(usize, usize)>> {
    Ok(PairSampler::new(jpd)?.draw_many(n_events, rng))
}

/// Accumulates pair events into photon counts.
pub fn events_to_frame(events: &[(usize, usize)], grid: &PixelGrid) -> Result<Frame> {
    let n_pixels = grid.n_pixels();
    let mut counts = vec![0.0; n_pixels];
    for &(i, j) in events {
        for p in [i, j] {
            if p >= n_pixels {
                return Err(Error::PixelOutOfRange { index: p, n_pixels });
            }
            counts[p] += 1.0;
        }
    }
    Ok(Frame { n: grid.n, counts })
}

/// One uniform draw per photon, compared against the transmittance. The
/// stream is consumed identically for every `t`, so survivors at a lower
/// transmittance are a subset of those at a higher one.
fn thin(frame: &Frame, t: impl Fn(usize) -> f64, rng: &mut Rng) -> Result<Frame> {
    let mut out = Frame::zeros(frame.n);
    for p in 0..frame.counts.len() {
        let k = frame.integer_count(p)?;
        let tp = t(p);
        out.counts[p] = (0..k).filter(|_| rng.gen::<f64>() < tp).count() as f64;
    }
    Ok(out)
}

/// Each photon at pixel `p` survives independently with probability
/// `transmittance[p]`.
pub fn apply_mask(frame: &Frame, mask: &ObjectMask, rng: &mut Rng) -> Result<Frame> {
    if mask.n != frame.n {
        return Err(Error::Dimension(format!("mask side {} vs frame side {}", mask.n, frame.n)));
    }
    thin(frame, |p| mask.transmittance[p], rng)
}

/// Uniform photon loss.
pub fn apply_transmission(frame: &Frame, t: f64, rng: &mut Rng) -> Result<Frame> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("transmission {t} outside [0, 1]")));
    }
    thin(frame, |_| t, rng)
}

/// Adds an independent background draw to every pixel.
pub fn add_background(frame: &Frame, cam: &CameraModel, rng: &mut Rng) -> Result<Frame> {
    let mut out = frame.clone();
    if cam.background_pmf.len() == 1 {
        return Ok(out);
    }
    let dist = WeightedIndex::new(&cam.background_pmf)
        .map_err(|e| Error::InvalidParameter(format!("background pmf: {e}")))?;
    for c in &mut out.counts {
        *c += dist.sample(rng) as f64;
    }
    Ok(out)
}

/// Independent Poisson counts with the mean field rescaled to `budget`
/// expected photons.
pub fn coherent_frame(mean: &MeanField, budget: f64, rng: &mut Rng) -> Result<Frame> {
    let total = mean.total();
    if !(total > 0.0) {
        return Err(Error::Degenerate("coherent mean field is identically zero".into()));
    }
    if !(budget.is_finite() && budget >= 0.0) {
        return Err(Error::InvalidParameter(format!("photon budget must be >= 0, got {budget}")));
    }
    let counts = mean
        .values
        .iter()
        .map(|&m| {
            let lambda = m * budget / total;
            if lambda > 0.0 {
                Poisson::new(lambda).expect("positive rate").sample(rng)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Frame { n: mean.n, counts })
}

/// Light source feeding the camera.
#[derive(Clone, Debug)]
pub enum Illumination {
    /// Photon pairs; `n_events` pairs per frame.
    Correlated(PairSampler),
    /// Poisson light with `2·n_events` expected photons per frame.
    Coherent(MeanField),
}

impl Illumination {
    pub fn n_pixels(&self) -> usize {
        match self {
            Self::Correlated(s) => s.n_modes(),
            Self::Coherent(m) => m.n * m.n,
        }
    }
}

/// Per-frame acquisition settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AcquisitionSpec {
    pub n_events: usize,
    pub set_size: usize,
    /// Uniform loss applied after the object; 1 disables it.
    pub transmission: f64,
}

impl AcquisitionSpec {
    pub fn new(n_events: usize, set_size: usize) -> Self {
        Self { n_events, set_size, transmission: 1.0 }
    }
}

fn acquire_frame(
    source: &Illumination,
    grid: &PixelGrid,
    mask: &ObjectMask,
    cam: &CameraModel,
    spec: &AcquisitionSpec,
    seed: u64,
    path: [u64; 2],
) -> Result<Frame> {
    let stream = |t: u64| rng::derive(seed, &[path[0], path[1], t]);
    let raw = match source {
        Illumination::Correlated(sampler) => {
            let events = sampler.draw_many(spec.n_events, &mut stream(tag::EVENTS));
            events_to_frame(&events, grid)?
        }
        Illumination::Coherent(mean) => coherent_frame(mean, 2.0 * spec.n_events as f64, &mut stream(tag::EVENTS))?,
    };
    let masked = apply_mask(&raw, mask, &mut stream(tag::MASK))?;
    let lossy = apply_transmission(&masked, spec.transmission, &mut stream(tag::TRANSMISSION))?;
    add_background(&lossy, cam, &mut stream(tag::BACKGROUND))
}

/// Frames for a mini-batch of objects: `masks.len() × set_size` frames, each
/// drawn from its own derived generator stream so the result does not depend
/// on the thread count.
pub fn acquire_batch(
    source: &Illumination,
    grid: &PixelGrid,
    masks: &[&ObjectMask],
    cam: &CameraModel,
    spec: &AcquisitionSpec,
    seed: u64,
) -> Result<Vec<FrameSet>> {
    if source.n_pixels() != grid.n_pixels() {
        return Err(Error::Dimension("illumination does not match the pixel grid".into()));
    }
    if let Some(m) = masks.iter().find(|m| m.n != grid.n) {
        return Err(Error::Dimension(format!("mask side {} vs grid side {}", m.n, grid.n)));
    }
    let s = spec.set_size;
    let frames: Vec<Frame> = (0..masks.len() * s)
        .into_par_iter()
        .map(|k| acquire_frame(source, grid, masks[k / s], cam, spec, seed, [(k / s) as u64, (k % s) as u64]))
        .collect::<Result<_>>()?;
    let mut it = frames.into_iter();
    Ok((0..masks.len())
        .map(|_| FrameSet { n: grid.n, frames: it.by_ref().take(s).collect() })
        .collect())
}

/// `set_size` frames of one object.
pub fn acquire_set(
    source: &Illumination,
    grid: &PixelGrid,
    mask: &ObjectMask,
    cam: &CameraModel,
    spec: &AcquisitionSpec,
    seed: u64,
) -> Result<FrameSet> {
    Ok(acquire_batch(source, grid, &[mask], cam, spec, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{pair_count, pair_index};

    fn point_jpd(modes: usize, i: usize, j: usize) -> JointPairDistribution {
        let mut probs = vec![0.0; pair_count(modes)];
        probs[pair_index(i, j, modes)] = 1.0;
        JointPairDistribution::new(modes, probs).unwrap()
    }

    #[test]
    fn point_mass_pairs() {
        let jpd = point_jpd(4, 0, 1);
        let ev = sample_pairs(&jpd, 5, &mut rng::seeded(1)).unwrap();
        assert_eq!(ev, vec![(0, 1); 5]);
        assert!(sample_pairs(&jpd, 0, &mut rng::seeded(1)).unwrap().is_empty());
    }

    #[test]
    fn frames_from_events() {
        let grid = PixelGrid::unit(2).unwrap();
        let f = events_to_frame(&[(0, 1), (3, 3)], &grid).unwrap();
        assert_eq!(f.counts, vec![1.0, 1.0, 0.0, 2.0]);
        assert!(matches!(events_to_frame(&[(0, 4)], &grid), Err(Error::PixelOutOfRange { index: 4, .. })));
    }

    #[test]
    fn indexer_round_trip() {
        let ix = EventIndexer::new(9);
        for k in 0..ix.n_events() {
            let (i, j) = ix.decode(k);
            assert_eq!(ix.encode(i, j), k);
        }
    }

    #[test]
    fn deterministic_masks() {
        let f = Frame::new(2, vec![3.0, 1.0, 0.0, 5.0]).unwrap();
        let mut r = rng::seeded(3);
        assert_eq!(apply_mask(&f, &ObjectMask::open(2), &mut r).unwrap(), f);
        assert_eq!(apply_transmission(&f, 0.0, &mut r).unwrap().total(), 0.0);
        let half = ObjectMask::new(2, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(apply_mask(&f, &half, &mut r).unwrap().counts, vec![3.0, 0.0, 0.0, 0.0]);
        assert!(apply_transmission(&f, 1.5, &mut r).is_err());
    }

    #[test]
    fn background_point_masses() {
        let f = Frame::new(2, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let mut r = rng::seeded(4);
        assert_eq!(add_background(&f, &CameraModel::noiseless(), &mut r).unwrap(), f);
        let one = CameraModel::default().with_background(vec![0.0, 1.0]).unwrap();
        assert_eq!(add_background(&f, &one, &mut r).unwrap().counts, vec![2.0, 1.0, 3.0, 1.0]);
    }

    #[test]
    fn coherent_zero_budget_and_zero_mean() {
        let mean = MeanField::new(2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(coherent_frame(&mean, 0.0, &mut rng::seeded(1)).unwrap().total(), 0.0);
        let dark = MeanField::new(2, vec![0.0; 4]).unwrap();
        assert!(coherent_frame(&dark, 1.0, &mut rng::seeded(1)).is_err());
    }

    #[test]
    fn acquisition_conserves_and_repeats() {
        let grid = PixelGrid::unit(3).unwrap();
        let jpd = point_jpd(9, 2, 7);
        let src = Illumination::Correlated(PairSampler::new(&jpd).unwrap());
        let spec = AcquisitionSpec::new(6, 4);
        let cam = CameraModel::noiseless();
        let set = acquire_set(&src, &grid, &ObjectMask::open(3), &cam, &spec, 11).unwrap();
        assert_eq!(set.len(), 4);
        assert!(set.frames.iter().all(|f| f.total() == 12.0));
        let again = acquire_set(&src, &grid, &ObjectMask::open(3), &cam, &spec, 11).unwrap();
        assert_eq!(set, again);
        let empty = acquire_set(&src, &grid, &ObjectMask::open(3), &cam, &AcquisitionSpec::new(6, 0), 11).unwrap();
        assert!(empty.is_empty());
    }
}
