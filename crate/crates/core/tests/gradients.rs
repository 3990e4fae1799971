mod common;

use common::probes::{all_probes, loss_chain, source_chain, ste_mismatch, transformer_chain};
use common::{central_diff, graph_grad};
use corrvis::datasets::{generate_shape_dataset, DatasetSpec};
use corrvis::grad::{digital_decrease_fraction, ParamGroup};
use corrvis::model::{cross_entropy, forward, TransformerConfig, TransformerParams};
use corrvis::optics::{PhasematchParams, PixelGrid, SlmPhase};
use corrvis::pipeline::{CatTrainer, Source, SourceKind, TrainConfig};
use corrvis::rng;
use corrvis::sensing::{CameraModel, Frame, FrameSet};
use proptest::prelude::*;

fn assert_probes(probes: &[common::probes::Probe]) {
    for p in probes {
        assert!(p.rel_err() < 1e-4, "{} [{}]: analytic {} numeric {}", p.chain, p.index, p.analytic, p.numeric);
    }
}

#[test]
fn slm_chain_matches_finite_differences() {
    assert_probes(&source_chain(SourceKind::SpdcTrained, "slm-spdc", 8, 21));
    assert_probes(&source_chain(SourceKind::Coherent, "slm-coherent", 6, 22));
    assert_probes(&source_chain(SourceKind::SpdcIdeal, "free-s", 6, 23));
}

#[test]
fn transformer_matches_finite_differences() {
    let p = transformer_chain(20, 9);
    assert!(p.len() >= 12);
    assert_probes(&p);
}

#[test]
fn loss_matches_finite_differences() {
    assert_probes(&loss_chain());
}

#[test]
fn suite_has_enough_probes() {
    assert!(all_probes().len() >= 20);
}

#[test]
fn ste_backward_is_exact_mean() {
    assert_eq!(ste_mismatch(), 0.0);
}

#[test]
fn thinning_gate_scales_gradient_by_weights() {
    let w = [0.0, 0.5, 1.0, 0.25];
    let (_, grad) = graph_grad(
        |g, x| {
            let t = g.thinning_gate(x, corrvis::tensor::Tensor::vector(w.to_vec()));
            g.sum(t)
        },
        &[3.0, 1.0, 2.0, 5.0],
        &[4],
    );
    assert_eq!(grad, w.to_vec());
}

fn tiny_trainer(seed: u64) -> CatTrainer {
    let grid = PixelGrid::unit(6).unwrap();
    let slm = SlmPhase::gaussian(12, 4.0);
    let src = Source::new(SourceKind::SpdcTrained, grid, PhasematchParams::new(0.8, 0.12, 0.05, 1.0).unwrap(), slm).unwrap();
    let records = generate_shape_dataset(&DatasetSpec::new(2, 3, 4), 6, seed).unwrap();
    let cfg = TrainConfig {
        n_events: 10,
        set_size: 3,
        batch_size: 2,
        physical_steps: 2,
        pool_frames: 6,
        cycles: 1,
        d_model: 8,
        n_heads: 2,
        test_sets_per_object: 2,
        ..TrainConfig::default()
    };
    CatTrainer::new(src, CameraModel::default(), &records, cfg, seed).unwrap()
}

#[test]
fn training_traces_are_deterministic() {
    let a = tiny_trainer(4).run().unwrap();
    let b = tiny_trainer(4).run().unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!((x.group, x.loss, x.train_acc, x.test_acc), (y.group, y.loss, y.train_acc, y.test_acc));
    }
    assert_eq!(a.iter().filter(|r| r.group == ParamGroup::Physical).count(), 1);
    assert!(digital_decrease_fraction(&a).is_some());
}

#[test]
fn untrained_classifier_loss_is_near_log_k() {
    let cfg = TransformerConfig::new(16, 5);
    let params = TransformerParams::init(cfg, &mut rng::seeded(2)).unwrap();
    let mut r = rng::seeded(3);
    let mut total = 0.0;
    for k in 0..40 {
        let frames = (0..5)
            .map(|_| Frame::new(4, (0..16).map(|_| rand::Rng::gen_range(&mut r, 0..3) as f64).collect()).unwrap())
            .collect();
        let z = forward(&FrameSet::new(4, frames).unwrap(), &params).unwrap();
        total += cross_entropy(&z, k % 5).unwrap();
    }
    let mean = total / 40.0;
    assert!((mean - 5f64.ln()).abs() < 0.5, "mean initial loss {mean}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn softmax_cross_entropy_gradient(z in prop::collection::vec(-5.0f64..5.0, 2..8), pick in any::<usize>()) {
        let label = pick % z.len();
        let (_, grad) = graph_grad(|g, x| g.cross_entropy(x, label), &z, &[z.len()]);
        for k in 0..z.len() {
            let fd = central_diff(|v| cross_entropy(v, label).unwrap(), &z, k, 1e-5);
            prop_assert!((grad[k] - fd).abs() <= 1e-7);
        }
        prop_assert!(grad.iter().sum::<f64>().abs() <= 1e-12);
    }
}
