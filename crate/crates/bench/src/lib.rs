//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use phonescore::{FrameMatrix, InstanceScore, Label, MatrixKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` scores for one phone, correct instances shifted up by `shift`.
pub fn score_set(n: usize, shift: f64, seed: u64) -> Vec<InstanceScore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let correct = rng.random::<bool>();
            InstanceScore {
                utterance_id: format!("u{}", i / 30),
                segment_index: i % 30,
                phone: 0,
                score: rng.random::<f64>() + if correct { shift } else { 0.0 },
                label: if correct { Label::Correct } else { Label::Incorrect },
            }
        })
        .collect()
}

pub fn activations(n_frames: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n_frames, dim), || rng.random_range(-2.0..2.0))
}

/// Random normalized posterior rows.
pub fn posteriors(n_frames: usize, n_senones: usize, seed: u64) -> FrameMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n_frames * n_senones);
    for _ in 0..n_frames {
        let row: Vec<f64> = (0..n_senones).map(|_| rng.random::<f64>()).collect();
        let z: f64 = row.iter().sum();
        values.extend(row.iter().map(|v| (v / z) as f32));
    }
    FrameMatrix::new(MatrixKind::Posteriors, n_frames, n_senones, values).expect("valid posteriors")
}
