mod common;

use common::spdc_greens;
use corrvis::optics::{biphoton_jpd, mean_field, pair_index, PixelGrid};
use corrvis::rng;
use corrvis::sensing::{
    acquire_batch, acquire_set, apply_mask, apply_transmission, events_to_frame, AcquisitionSpec, CameraModel, Frame,
    Illumination, ObjectMask, PairSampler,
};
use proptest::prelude::*;
use rand::SeedableRng;

fn chacha(seed: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}

fn sampler(n: usize, seed: u64) -> (PixelGrid, PairSampler, corrvis::optics::JointPairDistribution) {
    let g = spdc_greens(n, &mut chacha(seed));
    let jpd = biphoton_jpd(&g).unwrap();
    (PixelGrid::unit(n).unwrap(), PairSampler::new(&jpd).unwrap(), jpd)
}

#[test]
fn pair_frequencies_within_four_sigma() {
    let (_, s, jpd) = sampler(4, 3);
    let draws = 200_000;
    let mut counts = vec![0usize; jpd.probs.len()];
    for (i, j) in s.draw_many(draws, &mut rng::seeded(5)) {
        counts[pair_index(i, j, jpd.n_modes)] += 1;
    }
    for (c, &p) in counts.iter().zip(&jpd.probs) {
        if p > 1e-4 {
            let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - draws as f64 * p).abs() <= 4.0 * sigma);
        }
    }
}

#[test]
fn empirical_mean_frame_tracks_mean_field() {
    let (grid, s, _) = sampler(3, 9);
    let g = spdc_greens(3, &mut chacha(9));
    let expected = mean_field(&g).unwrap().normalized().unwrap();
    let frame = events_to_frame(&s.draw_many(100_000, &mut rng::seeded(1)), &grid).unwrap();
    let total = frame.total();
    assert_eq!(total, 200_000.0);
    for (c, e) in frame.counts.iter().zip(&expected) {
        let p = c / total;
        assert!((p - e).abs() < 5.0 * (e * (1.0 - e) / 100_000.0).sqrt() + 1e-4);
    }
}

#[test]
fn closed_mask_without_background_is_dark() {
    let (grid, s, _) = sampler(4, 1);
    let masks = [ObjectMask::uniform(4, 0.0).unwrap()];
    let refs: Vec<&ObjectMask> = masks.iter().collect();
    let sets = acquire_batch(
        &Illumination::Correlated(s),
        &grid,
        &refs,
        &CameraModel::noiseless(),
        &AcquisitionSpec::new(50, 6),
        4,
    )
    .unwrap();
    assert!(sets[0].frames.iter().all(|f| f.total() == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn open_frames_hold_two_photons_per_event(seed in any::<u64>(), events in 0usize..200, n in 2usize..=5) {
        let (grid, s, _) = sampler(n, seed % 7);
        let set = acquire_set(
            &Illumination::Correlated(s),
            &grid,
            &ObjectMask::open(n),
            &CameraModel::noiseless(),
            &AcquisitionSpec::new(events, 4),
            seed,
        )
        .unwrap();
        for f in &set.frames {
            prop_assert_eq!(f.total(), 2.0 * events as f64);
        }
    }

    #[test]
    fn thinning_is_nested_in_transmission(seed in any::<u64>(), hi in 0.0f64..=1.0, frac in 0.0f64..=1.0) {
        let counts: Vec<f64> = (0..16).map(|k| ((k * 7 + seed as usize) % 9) as f64).collect();
        let f = Frame::new(4, counts).unwrap();
        let lo = hi * frac;
        let a = apply_transmission(&f, hi, &mut rng::seeded(seed)).unwrap();
        let b = apply_transmission(&f, lo, &mut rng::seeded(seed)).unwrap();
        for ((x, y), z) in a.counts.iter().zip(&b.counts).zip(&f.counts) {
            prop_assert!(y <= x && x <= z);
        }
    }

    #[test]
    fn mask_extremes(seed in any::<u64>()) {
        let counts: Vec<f64> = (0..9).map(|k| (k % 4) as f64).collect();
        let f = Frame::new(3, counts).unwrap();
        prop_assert_eq!(apply_mask(&f, &ObjectMask::open(3), &mut rng::seeded(seed)).unwrap(), f.clone());
        let dark = apply_mask(&f, &ObjectMask::uniform(3, 0.0).unwrap(), &mut rng::seeded(seed)).unwrap();
        prop_assert_eq!(dark.total(), 0.0);
    }

    #[test]
    fn batches_are_deterministic_per_seed(seed in any::<u64>()) {
        let (grid, s, _) = sampler(3, 2);
        let illum = Illumination::Correlated(s);
        let masks = [ObjectMask::open(3), ObjectMask::uniform(3, 0.5).unwrap()];
        let refs: Vec<&ObjectMask> = masks.iter().collect();
        let spec = AcquisitionSpec { n_events: 10, set_size: 3, transmission: 0.7 };
        let cam = CameraModel::default();
        let a = acquire_batch(&illum, &grid, &refs, &cam, &spec, seed).unwrap();
        let b = acquire_batch(&illum, &grid, &refs, &cam, &spec, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
