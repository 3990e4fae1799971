//! Finite-difference check of the gradient from a mean-field loss back to
//! the modulator phase.
//!
//! `cargo run --release --example grad_check`

use corrvis::grad::Graph;
use corrvis::optics::{PhasematchParams, PixelGrid, SlmPhase};
use corrvis::pipeline::{Source, SourceKind};
use corrvis::tensor::Tensor;
use rand::Rng;

fn loss(g: &mut Graph, source: &Source, target: &Tensor) -> corrvis::Result<(corrvis::grad::NodeId, corrvis::grad::NodeId)> {
    let (leaf, mean) = source.mean_field_node(g)?;
    let t = g.constant(target.clone());
    let d = g.sub(mean, t);
    Ok((leaf, g.sum_squares(d)))
}

fn main() -> corrvis::Result<()> {
    let grid = PixelGrid::unit(4)?;
    let pm = PhasematchParams::new(0.8, 0.12, 0.05, 1.0)?;
    let mut rng = corrvis::rng::seeded(2);
    let m = grid.sum_side();
    let phase: Vec<f64> = (0..m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let source = Source::new(SourceKind::SpdcTrained, grid, pm, SlmPhase::gaussian(m, 3.0).with_phase(phase)?)?;
    let target = Tensor::new(vec![grid.n_pixels()], (0..grid.n_pixels()).map(|_| rng.gen_range(0.0..0.1)).collect());

    let mut g = Graph::new();
    let (leaf, l) = loss(&mut g, &source, &target)?;
    g.backward(l)?;
    let grad = g.grad_or_zeros(leaf);

    let h = 1e-5;
    let x0 = source.physical();
    let eval = |x: Vec<f64>| -> corrvis::Result<f64> {
        let mut s = source.clone();
        s.set_physical(&x)?;
        let mut g = Graph::new();
        let (_, l) = loss(&mut g, &s, &target)?;
        Ok(g.value(l).item())
    };
    let mut worst: f64 = 0.0;
    for k in (0..x0.len()).step_by(x0.len() / 12) {
        let (mut up, mut down) = (x0.clone(), x0.clone());
        up[k] += h;
        down[k] -= h;
        let fd = (eval(up)? - eval(down)?) / (2.0 * h);
        let rel = (fd - grad.data()[k]).abs() / fd.abs().max(grad.data()[k].abs()).max(1e-8);
        println!("phase[{k:>3}] analytic {:+.6e} numeric {fd:+.6e}", grad.data()[k]);
        worst = worst.max(rel);
    }
    println!("largest relative error {worst:.1e}");
    Ok(())
}
