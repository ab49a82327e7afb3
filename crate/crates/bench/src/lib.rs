//! Shared fixtures for the criterion benchmarks: deterministic small models
//! and data shaped like what the pipeline actually processes.

use rand::Rng;

use neurotext_core::mdlm::{TransformerConfig, TransformerLm, Vocabulary};
use neurotext_core::rng::rng_from_seed;
use neurotext_core::rvq::{LatentSequence, RvqStack};

/// A filled two-stage quantizer stack and a latent sequence to quantize.
pub fn quantizer_fixture(t_len: usize, dim: usize, k: usize) -> (RvqStack, LatentSequence) {
    let mut rng = rng_from_seed(11);
    let mut stack = RvqStack::zeros(2, &[k, k], dim, 0.25);
    for cb in &mut stack.codebooks {
        fill(&mut cb.vectors.w, &mut rng);
    }
    let mut values = vec![0.0; t_len * dim];
    fill(&mut values, &mut rng);
    (stack, LatentSequence { values, t_len, dim })
}

fn fill(buf: &mut [f64], rng: &mut impl Rng) {
    for v in buf.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
}

/// A small language model plus a signal prompt, as seen during decoding.
pub fn lm_fixture(causal: bool) -> (TransformerLm, Vec<Vec<usize>>) {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let vocab = Vocabulary::new(words, vec![64, 64]).unwrap();
    let model = TransformerLm::new(
        TransformerConfig { layers: 3, dim: 64, heads: 4, context: 64 },
        vocab,
        causal,
        3,
    )
    .unwrap();
    let mut rng = rng_from_seed(4);
    let prompt: Vec<Vec<usize>> = (0..8)
        .map(|_| vec![rng.gen_range(0..64), 64 + rng.gen_range(0..64)])
        .collect();
    (model, prompt)
}

/// Reference/hypothesis sentence pairs for metric benchmarks.
pub fn transcript_fixture(pairs: usize) -> Vec<(String, String)> {
    let mut rng = rng_from_seed(9);
    let word = |rng: &mut neurotext_core::rng::SeedRng| format!("w{}", rng.gen_range(0..30));
    (0..pairs)
        .map(|_| {
            let len = rng.gen_range(6..12);
            let reference: Vec<String> = (0..len).map(|_| word(&mut rng)).collect();
            let mut hypothesis = reference.clone();
            for w in hypothesis.iter_mut() {
                if rng.gen_bool(0.3) {
                    *w = word(&mut rng);
                }
            }
            (reference.join(" "), hypothesis.join(" "))
        })
        .collect()
}
