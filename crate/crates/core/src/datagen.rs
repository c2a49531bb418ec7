//! Seeded synthetic problems: Gaussian sensing matrices, block-sparse signals
//! with a common row support, and SNR-calibrated noise.
//!
//! Every generator draws from a ChaCha8 stream keyed by the spec seed. The
//! sensing matrix, the signal and the noise use separate stream ids so that
//! changing one knob (e.g. the SNR) leaves the other draws untouched.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::ProblemInstance;

const STREAM_PHI: u64 = 1;
const STREAM_SIGNAL: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Rejected block placements tolerated before packing blocks left to right.
const MAX_PLACEMENT_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub m: usize,
    pub n: usize,
    pub l: usize,
    /// Number of nonzero rows.
    pub k: usize,
    pub num_blocks: usize,
    /// `None` means noiseless.
    pub snr_db: Option<f64>,
    pub normalize_columns: bool,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            m: 25,
            n: 50,
            l: 3,
            k: 16,
            num_blocks: 4,
            snr_db: None,
            normalize_columns: false,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.l == 0 {
            return Err(Error::invalid("m, n and l must be positive"));
        }
        if self.k == 0 || self.num_blocks == 0 {
            return Err(Error::invalid("k and num_blocks must be positive"));
        }
        if self.k > self.n {
            return Err(Error::invalid(format!("k = {} exceeds n = {}", self.k, self.n)));
        }
        if self.num_blocks > self.k {
            return Err(Error::invalid(format!(
                "num_blocks = {} exceeds k = {}",
                self.num_blocks, self.k
            )));
        }
        if self.k + self.num_blocks - 1 > self.n {
            return Err(Error::invalid(format!(
                "cannot place {} separated blocks covering {} rows in n = {}",
                self.num_blocks, self.k, self.n
            )));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::invalid("snr_db must be finite"));
            }
        }
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// I.i.d. standard normal `M x N` matrix, optionally with unit-norm columns.
pub fn gen_sensing_matrix(spec: &GenSpec) -> DMatrix<f64> {
    let mut rng = rng_for(spec.seed, STREAM_PHI);
    // row-major draw order so the stream maps onto the matrix as printed
    let mut phi = DMatrix::zeros(spec.m, spec.n);
    for r in 0..spec.m {
        for c in 0..spec.n {
            phi[(r, c)] = rng.sample(StandardNormal);
        }
    }
    if spec.normalize_columns {
        for mut col in phi.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
    }
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparseSignal {
    /// `N x L` signal, zero outside the support.
    pub x: DMatrix<f64>,
    /// Sorted nonzero row indices.
    pub support: Vec<usize>,
    /// `(start, length)` of each block, sorted by start.
    pub blocks: Vec<(usize, usize)>,
}

/// Uniform composition of `k` into `parts` positive integers.
fn random_composition<R: Rng>(rng: &mut R, k: usize, parts: usize) -> Vec<usize> {
    let mut cuts: Vec<usize> = index::sample(rng, k - 1, parts - 1)
        .into_iter()
        .map(|c| c + 1)
        .collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(parts);
    let mut prev = 0;
    for c in cuts.into_iter().chain(std::iter::once(k)) {
        lengths.push(c - prev);
        prev = c;
    }
    lengths
}

fn separated(blocks: &[(usize, usize)]) -> bool {
    let mut sorted = blocks.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).all(|w| w[0].0 + w[0].1 < w[1].0)
}

pub fn gen_block_sparse_signal(spec: &GenSpec) -> Result<BlockSparseSignal> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_SIGNAL);
    let lengths = random_composition(&mut rng, spec.k, spec.num_blocks);

    let mut blocks = Vec::new();
    let mut placed = false;
    for _ in 0..MAX_PLACEMENT_REJECTIONS {
        blocks = lengths
            .iter()
            .map(|&len| (rng.random_range(0..=spec.n - len), len))
            .collect();
        if separated(&blocks) {
            placed = true;
            break;
        }
    }
    if !placed {
        let mut start = 0;
        blocks = lengths
            .iter()
            .map(|&len| {
                let b = (start, len);
                start += len + 1;
                b
            })
            .collect();
    }
    blocks.sort_unstable();

    let support: Vec<usize> = blocks.iter().flat_map(|&(s, len)| s..s + len).collect();
    let mut x = DMatrix::zeros(spec.n, spec.l);
    for &row in &support {
        for col in 0..spec.l {
            x[(row, col)] = rng.sample(StandardNormal);
        }
    }
    Ok(BlockSparseSignal { x, support, blocks })
}

/// Adds i.i.d. Gaussian noise with `sigma^2 = ||y||_F^2 / (M L 10^(snr/10))`.
/// Returns the noisy matrix and `sigma^2`.
pub fn add_noise(y_clean: &DMatrix<f64>, snr_db: Option<f64>, seed: u64) -> Result<(DMatrix<f64>, f64)> {
    let Some(snr) = snr_db else {
        return Ok((y_clean.clone(), 0.0));
    };
    if !snr.is_finite() {
        return Err(Error::invalid("snr_db must be finite"));
    }
    let energy = linalg::frobenius_sq(y_clean);
    if energy == 0.0 {
        return Err(Error::invalid("cannot calibrate noise against an all-zero signal"));
    }
    let sigma2 = energy / (y_clean.len() as f64 * 10f64.powf(snr / 10.0));
    let sigma = sigma2.sqrt();
    let mut rng = rng_for(seed, STREAM_NOISE);
    let mut noisy = y_clean.clone();
    for r in 0..noisy.nrows() {
        for c in 0..noisy.ncols() {
            let v: f64 = rng.sample(StandardNormal);
            noisy[(r, c)] += sigma * v;
        }
    }
    Ok((noisy, sigma2))
}

/// Full problem (`Phi`, `Y = Phi X + V`, truth `X`) from one spec.
pub fn gen_instance(spec: &GenSpec) -> Result<(ProblemInstance, BlockSparseSignal)> {
    let signal = gen_block_sparse_signal(spec)?;
    let phi = gen_sensing_matrix(spec);
    let clean = &phi * &signal.x;
    let (y, _) = add_noise(&clean, spec.snr_db, spec.seed)?;
    let inst = ProblemInstance::new(phi, y, Some(signal.x.clone()))?;
    Ok((inst, signal))
}

/// Maximal runs of consecutive indices in a sorted index list.
pub fn runs(sorted: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &i in sorted {
        match out.last_mut() {
            Some((s, len)) if *s + *len == i => *len += 1,
            _ => out.push((i, 1)),
        }
    }
    out
}
