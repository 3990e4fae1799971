//! Set classifier over frame sets: class probabilities are unchanged when
//! the frames of a set are reordered.
//!
//! `cargo run --release --example set_transformer`

use corrvis::model::{forward, softmax, TransformerConfig, TransformerParams};
use corrvis::sensing::{Frame, FrameSet};
use rand::seq::SliceRandom;
use rand::Rng;

fn main() -> corrvis::Result<()> {
    let n = 8;
    let mut rng = corrvis::rng::seeded(5);
    let params = TransformerParams::init(TransformerConfig::new(n * n, 4), &mut rng)?;
    println!("{} parameters", params.n_params());

    let frames: Vec<Frame> = (0..10)
        .map(|_| Frame::new(n, (0..n * n).map(|_| rng.gen_range(0..3) as f64).collect()))
        .collect::<corrvis::Result<_>>()?;
    let set = FrameSet::new(n, frames.clone())?;
    let p = softmax(&forward(&set, &params)?);
    println!("probabilities {p:.4?}");

    let mut shuffled = frames;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        shuffled.shuffle(&mut rng);
        let q = softmax(&forward(&FrameSet::new(n, shuffled.clone())?, &params)?);
        worst = p.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    println!("largest change over 20 reorderings {worst:.1e}");
    Ok(())
}
