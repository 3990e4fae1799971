//! Synthetic absorptive-object datasets and the frame/object samplers.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};
use crate::sensing::ObjectMask;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Parametric shape families, one per class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Disk,
    Ring,
    Cross,
    Triangle,
    Bar,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 5] = [Self::Disk, Self::Ring, Self::Cross, Self::Triangle, Self::Bar];

    /// Whether the point `(x, y)` of the unit square (shape frame, already
    /// rotated and scaled) lies inside.
    fn contains(self, x: f64, y: f64) -> bool {
        let r = x.hypot(y);
        match self {
            Self::Disk => r <= 0.8,
            Self::Ring => (0.45..=0.85).contains(&r),
            Self::Cross => (x.abs() <= 0.22 && y.abs() <= 0.85) || (y.abs() <= 0.22 && x.abs() <= 0.85),
            Self::Triangle => (0..3).all(|k| {
                let a = PI / 2.0 + k as f64 * TAU / 3.0;
                // inward half-plane of the edge opposite vertex k
                -(x * a.cos() + y * a.sin()) <= 0.425
            }),
            Self::Bar => x.abs() <= 0.85 && y.abs() <= 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub mask: ObjectMask,
    pub class_id: usize,
    pub family: ShapeFamily,
    pub split: Split,
    pub instance_id: usize,
    pub rotation: f64,
    pub scale: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    #[serde(default = "five")]
    pub n_classes: usize,
    #[serde(default = "five")]
    pub per_class: usize,
    /// Side of the central window holding the objects.
    pub region: usize,
}

fn five() -> usize {
    5
}

impl DatasetSpec {
    pub fn new(n_classes: usize, per_class: usize, region: usize) -> Self {
        Self { n_classes, per_class, region }
    }

    /// Training instances per class: three of every five.
    pub fn train_per_class(&self) -> usize {
        ((3 * self.per_class + 2) / 5).max(1)
    }
}

/// Binary shape masks rasterized into the central `region×region` window of
/// an `n×n` frame, with per-instance rotation and scale jitter.
pub fn generate_shape_dataset(spec: &DatasetSpec, n: usize, seed: u64) -> Result<Vec<ObjectRecord>> {
    if spec.region > n {
        return Err(Error::InvalidParameter(format!("object region {} exceeds frame side {n}", spec.region)));
    }
    if spec.region < 3 {
        return Err(Error::InvalidParameter("object region must be at least 3 pixels".into()));
    }
    if spec.n_classes == 0 || spec.n_classes > ShapeFamily::ALL.len() {
        return Err(Error::InvalidParameter(format!("between 1 and 5 classes supported, got {}", spec.n_classes)));
    }
    if spec.per_class == 0 {
        return Err(Error::InvalidParameter("need at least one object per class".into()));
    }
    let off = (n - spec.region) / 2;
    let half = spec.region as f64 / 2.0;
    let n_train = spec.train_per_class();
    let mut out = Vec::with_capacity(spec.n_classes * spec.per_class);
    for (class_id, &family) in ShapeFamily::ALL[..spec.n_classes].iter().enumerate() {
        for inst in 0..spec.per_class {
            let mut r = rng::derive(seed, &[tag::DATASET, class_id as u64, inst as u64]);
            let rotation = r.gen_range(0.0..TAU);
            let scale = r.gen_range(0.75..1.0);
            let (sin, cos) = rotation.sin_cos();
            let mut t = vec![0.0; n * n];
            for row in 0..spec.region {
                for col in 0..spec.region {
                    let x = (col as f64 + 0.5 - half) / half;
                    let y = (row as f64 + 0.5 - half) / half;
                    let (xr, yr) = ((cos * x + sin * y) / scale, (-sin * x + cos * y) / scale);
                    if family.contains(xr, yr) {
                        t[(row + off) * n + col + off] = 1.0;
                    }
                }
            }
            out.push(ObjectRecord {
                mask: ObjectMask::new(n, t)?,
                class_id,
                family,
                split: if inst < n_train { Split::Train } else { Split::Test },
                instance_id: class_id * spec.per_class + inst,
                rotation,
                scale,
            });
        }
    }
    Ok(out)
}

pub fn split_records(records: &[ObjectRecord], split: Split) -> Vec<&ObjectRecord> {
    records.iter().filter(|r| r.split == split).collect()
}

/// Shuffles `0..pool` and cuts it into disjoint sets of `set_size`; the
/// remainder is dropped.
pub fn frame_sampler_without_replacement(pool: usize, set_size: usize, rng: &mut Rng) -> Result<Vec<Vec<usize>>> {
    if set_size == 0 {
        return Err(Error::InvalidParameter("set size must be positive".into()));
    }
    if pool < set_size {
        return Err(Error::InvalidParameter(format!("pool of {pool} frames is smaller than set size {set_size}")));
    }
    let mut idx: Vec<usize> = (0..pool).collect();
    idx.shuffle(rng);
    Ok(idx.chunks_exact(set_size).map(|c| c.to_vec()).collect())
}

/// `b` independent uniform draws over `n_records` objects.
pub fn object_sampler_with_replacement(n_records: usize, b: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    if n_records == 0 {
        return Err(Error::Empty("no records to sample".into()));
    }
    Ok((0..b).map(|_| rng.gen_range(0..n_records)).collect())
}

/// Integer translation by a uniform offset in `[−max_shift, max_shift]²`,
/// zero-filled. Offsets that would push the support out of the frame are
/// clipped to the largest legal shift.
pub fn augment_translate(mask: &ObjectMask, max_shift: usize, rng: &mut Rng) -> ObjectMask {
    let m = max_shift as i64;
    let dx = rng.gen_range(-m..=m);
    let dy = rng.gen_range(-m..=m);
    translate_clipped(mask, dx, dy)
}

pub fn translate_clipped(mask: &ObjectMask, dx: i64, dy: i64) -> ObjectMask {
    let n = mask.n as i64;
    let support = mask.transmittance.iter().enumerate().filter(|(_, &t)| t > 0.0).map(|(k, _)| k as i64);
    let (mut r0, mut r1, mut c0, mut c1) = (n, -1, n, -1);
    for k in support {
        r0 = r0.min(k / n);
        r1 = r1.max(k / n);
        c0 = c0.min(k % n);
        c1 = c1.max(k % n);
    }
    if r1 < 0 {
        return mask.clone();
    }
    let dx = dx.clamp(-c0, n - 1 - c1);
    let dy = dy.clamp(-r0, n - 1 - r1);
    let mut t = vec![0.0; mask.transmittance.len()];
    for r in r0..=r1 {
        for c in c0..=c1 {
            t[((r + dy) * n + c + dx) as usize] = mask.transmittance[(r * n + c) as usize];
        }
    }
    ObjectMask { n: mask.n, transmittance: t }
}
