//! Block Gibbs sampling with reproducible per-chain random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Rbm;
use crate::spins::SpinDataset;

/// Sampling schedule shared by all chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GibbsSchedule {
    pub burn_in: usize,
    pub n_samples: usize,
    /// Block updates between recorded samples (at least one is always taken).
    pub thin: usize,
    pub chains: usize,
}

impl Default for GibbsSchedule {
    fn default() -> Self {
        Self {
            burn_in: 200,
            n_samples: 10_000,
            thin: 2,
            chains: 8,
        }
    }
}

/// Random stream of one chain: the seed picks the key, the chain index the stream.
pub(crate) fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

#[inline]
pub(crate) fn draw_spin<R: Rng>(rng: &mut R, mean: f64) -> i8 {
    if rng.random::<f64>() < 0.5 * (1.0 + mean) {
        1
    } else {
        -1
    }
}

struct Chain<'a> {
    model: &'a Rbm,
    x: Vec<i8>,
    h: Vec<i8>,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    fn new(model: &'a Rbm, mut rng: ChaCha8Rng) -> Self {
        let x = (0..model.n_visible()).map(|_| draw_spin(&mut rng, 0.0)).collect();
        Self {
            model,
            x,
            h: vec![1; model.n_hidden()],
            rng,
        }
    }

    fn step(&mut self) {
        for j in 0..self.model.n_hidden() {
            let mean = self.model.hidden_field(j, &self.x).tanh();
            self.h[j] = draw_spin(&mut self.rng, mean);
        }
        for i in 0..self.model.n_visible() {
            let mean = self.model.visible_field(i, &self.h).tanh();
            self.x[i] = draw_spin(&mut self.rng, mean);
        }
    }

    fn run(mut self, burn_in: usize, n_samples: usize, thin: usize) -> Vec<i8> {
        for _ in 0..burn_in {
            self.step();
        }
        let mut out = Vec::with_capacity(n_samples * self.x.len());
        for _ in 0..n_samples {
            for _ in 0..thin.max(1) {
                self.step();
            }
            out.extend_from_slice(&self.x);
        }
        out
    }
}

/// Single-chain block Gibbs sampler.
pub fn gibbs_sample(model: &Rbm, burn_in: usize, n_samples: usize, thin: usize, seed: u64) -> SpinDataset {
    gibbs_sample_chains(
        model,
        GibbsSchedule {
            burn_in,
            n_samples,
            thin,
            chains: 1,
        },
        seed,
    )
}

/// Runs independent chains in parallel and concatenates their samples in chain order.
/// Chain `c` contributes `n_samples / chains` rows, plus one when `c < n_samples % chains`.
pub fn gibbs_sample_chains(model: &Rbm, schedule: GibbsSchedule, seed: u64) -> SpinDataset {
    let chains = schedule.chains.max(1);
    let base = schedule.n_samples / chains;
    let extra = schedule.n_samples % chains;
    let parts: Vec<Vec<i8>> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let count = base + usize::from(c < extra);
            Chain::new(model, chain_rng(seed, c)).run(schedule.burn_in, count, schedule.thin)
        })
        .collect();
    SpinDataset::new(model.n_visible(), parts.concat(), None).expect("sampler emits spins")
}
