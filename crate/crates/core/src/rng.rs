//! Uniform random streams.
//!
//! Every random decision in the decoder is made from a single uniform draw on
//! `[0, 1)`. The order in which draws are consumed is part of the reproducibility
//! contract, so the streams also count how many draws have been taken.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A source of uniform draws on `[0, 1)`.
pub trait UniformSource {
    fn next_uniform(&mut self) -> f64;

    /// Number of draws consumed so far.
    fn draws(&self) -> u64;
}

/// Seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    draws: u64,
}

impl RandomStream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
        }
    }

    /// Independent stream `stream` under `seed`.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, draws: 0 }
    }

    /// Raw 64-bit output, used to derive child seeds. Not counted as a draw.
    pub fn next_seed(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

impl UniformSource for RandomStream {
    #[inline]
    fn next_uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }

    fn draws(&self) -> u64 {
        self.draws
    }
}

/// Replays a fixed list of draws. Panics when exhausted.
#[derive(Debug, Clone)]
pub struct ScriptedUniforms {
    values: Vec<f64>,
    cursor: usize,
}

impl ScriptedUniforms {
    pub fn new(values: impl Into<Vec<f64>>) -> Self {
        Self {
            values: values.into(),
            cursor: 0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.values.len() - self.cursor
    }
}

impl UniformSource for ScriptedUniforms {
    fn next_uniform(&mut self) -> f64 {
        let v = *self
            .values
            .get(self.cursor)
            .unwrap_or_else(|| panic!("scripted stream exhausted after {} draws", self.cursor));
        self.cursor += 1;
        v
    }

    fn draws(&self) -> u64 {
        self.cursor as u64
    }
}
