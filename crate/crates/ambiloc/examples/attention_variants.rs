//! Demonstrates two structural properties of the attention layers:
//!
//! 1. The cross-multi-head variant (softmax over all frame/head pairs at
//!    once) collapses to plain multi-head attention when there is a single
//!    head — same parameters, bitwise-comparable outputs.
//! 2. Without positional encodings, shuffling the input frames shuffles the
//!    output rows identically (permutation equivariance).
//!
//! Run with: `cargo run --release --example attention_variants`

use ambiloc::attention::{attention_forward, AttentionParams, AttentionVariant};
use ambiloc::nn::{LinearParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize(linear: &mut LinearParams, rng: &mut impl Rng) {
    for v in linear.weight.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    for v in linear.bias.data_mut() {
        *v = rng.random_range(-0.1..0.1);
    }
}

fn random_attention(
    embed_dim: usize,
    n_heads: usize,
    variant: AttentionVariant,
    rng: &mut impl Rng,
) -> AttentionParams {
    let mut params = AttentionParams::zeros(embed_dim, n_heads, variant).expect("valid dims");
    for head in &mut params.heads {
        randomize(&mut head.query, rng);
        randomize(&mut head.key, rng);
        randomize(&mut head.value, rng);
    }
    randomize(&mut params.output, rng);
    params
}

fn main() -> ambiloc::Result<()> {
    let (frames, embed) = (10, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut input = Tensor::zeros(&[frames, embed]);
    for v in input.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }

    // Property 1: CMH with one head is MH with one head.
    let mh = random_attention(embed, 1, AttentionVariant::MultiHead, &mut rng.clone());
    let mut cmh = random_attention(embed, 1, AttentionVariant::CrossMultiHead, &mut rng.clone());
    cmh.heads = mh.heads.clone();
    cmh.output = mh.output.clone();
    let out_mh = attention_forward(&input, &mh)?;
    let out_cmh = attention_forward(&input, &cmh)?;
    let max_diff = out_mh
        .data()
        .iter()
        .zip(out_cmh.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("single-head CMH vs MH, identical weights: max |diff| = {max_diff:.3e}");
    assert_eq!(max_diff, 0.0, "variants must coincide at one head");

    // Property 2: permuting frames permutes outputs (both variants).
    let mut order: Vec<usize> = (0..frames).collect();
    for i in (1..frames).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for (label, n_heads, variant) in [
        ("MH, 4 heads", 4, AttentionVariant::MultiHead),
        ("CMH, 4 heads", 4, AttentionVariant::CrossMultiHead),
    ] {
        let params = random_attention(embed, n_heads, variant, &mut rng);
        let out = attention_forward(&input, &params)?;
        let mut shuffled = Tensor::zeros(&[frames, embed]);
        for (row, &src) in order.iter().enumerate() {
            for c in 0..embed {
                shuffled.set(&[row, c], input.at(&[src, c]));
            }
        }
        let out_shuffled = attention_forward(&shuffled, &params)?;
        let mut worst = 0.0f64;
        for (row, &src) in order.iter().enumerate() {
            for c in 0..embed {
                worst = worst.max((out_shuffled.at(&[row, c]) - out.at(&[src, c])).abs());
            }
        }
        println!("{label}: permuted-input vs permuted-output max |diff| = {worst:.3e}");
        assert!(worst < 1e-9, "equivariance violated");
    }
    println!("both structural properties hold");
    Ok(())
}
