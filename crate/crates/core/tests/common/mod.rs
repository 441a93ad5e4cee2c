//! Random model generators shared by the integration suites.
#![allow(dead_code)] // not every suite uses every generator

use lumpkit::aggregation::{AlphaWeights, Partition};
use lumpkit::chain::{DistVector, GeneratorMatrix, TransitionMatrix};
use lumpkit::sparse::SparseMatrix;
use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Dense strictly positive transition matrix (hence irreducible).
pub fn random_dtmc(rng: &mut ChaCha12Rng, n: usize) -> TransitionMatrix {
    let mut data = vec![0.0; n * n];
    for r in 0..n {
        let mut sum = 0.0;
        for c in 0..n {
            let v = rng.random::<f64>() + 1e-3;
            data[r * n + c] = v;
            sum += v;
        }
        for c in 0..n {
            data[r * n + c] /= sum;
        }
    }
    TransitionMatrix::from_rows(n, &data)
}

/// Generator with strictly positive off-diagonal rates.
pub fn random_ctmc(rng: &mut ChaCha12Rng, n: usize) -> GeneratorMatrix {
    let mut triplets = Vec::new();
    for r in 0..n {
        let mut sum = 0.0;
        for c in 0..n {
            if r != c {
                let v = rng.random::<f64>() + 1e-3;
                triplets.push((r, c, v));
                sum += v;
            }
        }
        triplets.push((r, r, -sum));
    }
    GeneratorMatrix::new_unchecked(SparseMatrix::from_triplets(n, n, triplets).unwrap()).unwrap()
}

/// Surjective random partition into exactly `m` aggregates.
pub fn random_partition(rng: &mut ChaCha12Rng, n: usize, m: usize) -> Partition {
    assert!(m <= n);
    let mut omega: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    // Pin one state per aggregate so every index occurs.
    let mut stamp: Vec<usize> = (0..n).collect();
    for a in 0..m {
        let pick = rng.random_range(0..stamp.len());
        omega[stamp.swap_remove(pick)] = a;
    }
    Partition::from_omega(omega).unwrap()
}

pub fn random_p0(rng: &mut ChaCha12Rng, n: usize) -> DistVector {
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-6).collect();
    let total: f64 = raw.iter().sum();
    DistVector::probability(
        DVector::from_iterator(n, raw.iter().map(|v| v / total)),
        1e-9,
    )
    .unwrap()
}

/// Strictly positive weights, normalized within each aggregate.
pub fn random_alpha(rng: &mut ChaCha12Rng, partition: &Partition) -> AlphaWeights {
    let n = partition.n();
    let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let mut sums = vec![0.0; partition.m()];
    for (s, &v) in raw.iter().enumerate() {
        sums[partition.aggregate_of(s)] += v;
    }
    let values = DVector::from_iterator(
        n,
        raw.iter()
            .enumerate()
            .map(|(s, &v)| v / sums[partition.aggregate_of(s)]),
    );
    AlphaWeights::new(values, partition, 1e-9).unwrap()
}
