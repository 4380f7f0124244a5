#![allow(dead_code)]

use conjrules::binarizer::BitLayout;
use conjrules::conjnet::{init_model, GraftedModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random model on a plain layout. `binary_p` is the probability that a
/// hidden weight is drawn as exactly 0 or 1 instead of uniformly.
pub fn random_model(widths: [usize; 3], hidden: usize, binary_p: f64, seed: u64) -> GraftedModel {
    let layout = BitLayout::plain(widths);
    let mut m = init_model(&layout, hidden, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for s in &mut m.subnets {
        for w in &mut s.weights {
            *w = if rng.gen_bool(binary_p) {
                rng.gen_range(0..2) as f64
            } else {
                rng.gen_range(0.0..1.0)
            };
        }
        for v in &mut s.output_weights {
            *v = rng.gen_range(-3.0..3.0);
        }
        s.output_bias = rng.gen_range(-1.0..1.0);
    }
    for u in &mut m.agg_weights {
        *u = rng.gen_range(-4.0..4.0);
    }
    m.agg_bias = rng.gen_range(-1.0..1.0);
    m
}

pub fn all_inputs(width: usize) -> impl Iterator<Item = Vec<u8>> {
    (0u32..1 << width).map(move |m| (0..width).map(|b| ((m >> b) & 1) as u8).collect())
}

pub fn random_bits(width: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..width).map(|_| rng.gen_range(0..2)).collect()
}

/// `|a - b|` relative to the larger magnitude, never dividing by less
/// than `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Width-14 model whose only informative rule is `b3 AND b7` in the loan
/// subnet; it rejects exactly when both bits are set.
pub fn planted_and_model() -> GraftedModel {
    let layout = BitLayout::plain([10, 2, 2]);
    let mut m = init_model(&layout, 1, 0).unwrap();
    for s in &mut m.subnets {
        s.weights.iter_mut().for_each(|w| *w = 0.0);
        s.output_weights = vec![0.0];
        s.output_bias = 0.0;
    }
    let loan = &mut m.subnets[0];
    loan.weights[3] = 1.0;
    loan.weights[7] = 1.0;
    loan.output_weights = vec![6.0];
    loan.output_bias = -3.0;
    m.agg_weights = [6.0, 0.0, 0.0];
    m.agg_bias = -3.0;
    m
}

pub fn uniform_reference(width: usize, n: usize, seed: u64) -> conjrules::dataset::BinaryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<u8>> = (0..n).map(|_| random_bits(width, &mut rng)).collect();
    conjrules::dataset::BinaryDataset::from_rows(width, &rows, &vec![0; n]).unwrap()
}
