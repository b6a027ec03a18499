// SPDX-License-Identifier: Apache-2.0
//! `bench urs`: wall-clock medians over repetitions. Only ratios between
//! the numbers are meant to carry across machines.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use pollring::urs::{self, batch_verify, keygen, signature_len, Ring, UrsKeyPair, UrsParams, UrsSignature};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{emit, CliError, RunManifest};

const PID: &[u8] = b"benchpol";

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    /// Ring sizes.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 64, 128])]
    pub ring_sizes: Vec<usize>,
    /// Batch sizes; 0 stands for the ring size.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 8, 0])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    /// Signatures timed per repetition for sign and serial verify.
    #[arg(long, default_value_t = 4)]
    pub ops: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub median_ms: f64,
    /// Median absolute deviation.
    pub mad_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn stats(mut v: Vec<f64>) -> Stats {
    let m = median(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - m).abs()).collect();
    Stats {
        median_ms: m,
        mad_ms: median(&mut dev),
        min_ms: v[0],
        max_ms: v[v.len() - 1],
        samples: v.len(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub batch: usize,
    /// Batch time divided by the batch size.
    pub per_signature: Stats,
    /// Median serial verify over median per-signature batch time.
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingRow {
    pub ring_size: usize,
    pub signature_bytes: usize,
    pub sign: Stats,
    pub verify: Stats,
    pub batches: Vec<BatchRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrsBench {
    pub reps: usize,
    pub rows: Vec<RingRow>,
}

fn time_ms<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

pub fn bench_ring(params: &UrsParams, n: usize, batch_sizes: &[usize], reps: usize, ops: usize, seed: u64) -> RingRow {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ (n as u64).rotate_left(32));
    let keys: Vec<UrsKeyPair> = (0..n).map(|_| keygen(params, &mut rng)).collect();
    let ring = Ring::new(keys.iter().map(|k| k.pk)).expect("ring of at least two");
    let mut batches: Vec<usize> = batch_sizes.iter().map(|&b| if b == 0 { n } else { b }).collect();
    batches.sort_unstable();
    batches.dedup();
    let most = batches.iter().copied().max().unwrap_or(1).max(ops);
    let votes: Vec<Vec<u8>> = (0..most).map(|i| format!("vote {i}").into_bytes()).collect();
    let sign_one = |i: usize, rng: &mut ChaCha20Rng| {
        urs::sign(params, PID, &votes[i], &ring, &keys[i % n].sk, rng).expect("member signs")
    };
    let sigs: Vec<UrsSignature> = (0..most).map(|i| sign_one(i, &mut rng)).collect();
    let ops = ops.max(1);
    let mut sign_t = Vec::new();
    let mut verify_t = Vec::new();
    for _ in 0..reps {
        let (_, t) = time_ms(|| (0..ops).map(|i| sign_one(i, &mut rng)).count());
        sign_t.push(t / ops as f64);
        let (ok, t) = time_ms(|| (0..ops).all(|i| urs::verify(params, PID, &votes[i], &ring, &sigs[i]).is_ok()));
        assert!(ok, "benchmark signature failed to verify");
        verify_t.push(t / ops as f64);
    }
    let verify = stats(verify_t);
    let batches = batches
        .into_iter()
        .map(|b| {
            let items: Vec<(&[u8], &UrsSignature)> = (0..b).map(|i| (votes[i].as_slice(), &sigs[i])).collect();
            let per: Vec<f64> = (0..reps)
                .map(|r| {
                    let mut seed = [0u8; 32];
                    seed[..8].copy_from_slice(&(r as u64).to_le_bytes());
                    let (v, t) = time_ms(|| batch_verify(params, PID, &ring, &items, seed));
                    assert!(v.iter().all(|&x| x), "benchmark batch rejected");
                    t / b as f64
                })
                .collect();
            let per_signature = stats(per);
            BatchRow { batch: b, speedup: verify.median_ms / per_signature.median_ms, per_signature }
        })
        .collect();
    RingRow { ring_size: n, signature_bytes: signature_len(n), sign: stats(sign_t), verify, batches }
}

pub fn run(a: &BenchArgs) -> Result<(), CliError> {
    if a.reps == 0 || a.ring_sizes.iter().any(|&n| n < 2) {
        return Err(CliError::Usage("need --reps >= 1 and ring sizes >= 2".into()));
    }
    let params = UrsParams::default();
    let rows: Vec<RingRow> = a
        .ring_sizes
        .iter()
        .map(|&n| {
            let row = bench_ring(&params, n, &a.batch_sizes, a.reps, a.ops, a.seed);
            eprintln!(
                "N={n}: sign {:.3} ms, verify {:.3} ms, {}",
                row.sign.median_ms,
                row.verify.median_ms,
                row.batches
                    .iter()
                    .map(|b| format!("batch {} {:.3} ms/sig ({:.2}x)", b.batch, b.per_signature.median_ms, b.speedup))
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            row
        })
        .collect();
    let manifest = RunManifest::new("bench urs", None, Some(a.seed), &[&a.out]);
    emit(&manifest, &UrsBench { reps: a.reps, rows }, &a.out)
}
