//! Discrete state identity for the temperature table: an exact 64-bit byte
//! hash for noise-free observations, and SimHash over a (rounded) learned
//! embedding for noisy ones.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::Observation;
use crate::nn::{Network, NnError};

/// Key scheme tag. Schemes never mix within a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Exact,
    SimHash,
}

/// Discrete state key: either an exact byte hash or a k-bit SimHash
/// signature. Equality is bitwise and scheme-tagged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey {
    pub scheme: Scheme,
    pub bits: u64,
    /// Signature width; 64 for the exact scheme.
    pub width: u8,
}

impl StateKey {
    pub fn exact(bits: u64) -> StateKey {
        StateKey {
            scheme: Scheme::Exact,
            bits,
            width: 64,
        }
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }
}

/// FNV-1a over the observation's stable byte serialization. Any fixed
/// 64-bit byte hash works here; FNV keeps the scheme dependency-free and
/// stable across platforms and releases.
pub fn exact_key(obs: &Observation) -> StateKey {
    StateKey::exact(fnv1a64(&obs.key_bytes()))
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x1000_0000_01b3;
    let mut hash = OFFSET;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

#[derive(Debug, Error, PartialEq)]
pub enum HashError {
    #[error("embedding length {got} does not match projection dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("hash width must lie in 1..=64, got {0}")]
    BadWidth(usize),
}

/// Fixed k x D Gaussian projection used by SimHash.
#[derive(Debug, Clone)]
pub struct ProjectionMatrix {
    entries: Vec<f64>,
    pub rows: usize,
    pub dim: usize,
    pub seed: u64,
}

impl ProjectionMatrix {
    /// Draws i.i.d. standard-Gaussian entries from a seeded generator;
    /// immutable afterwards.
    pub fn new(rows: usize, dim: usize, seed: u64) -> Result<ProjectionMatrix, HashError> {
        if rows == 0 || rows > 64 {
            return Err(HashError::BadWidth(rows));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = (0..rows * dim)
            .map(|_| rng.sample(StandardNormal))
            .collect();
        Ok(ProjectionMatrix {
            entries,
            rows,
            dim,
            seed,
        })
    }

    fn row(&self, r: usize) -> &[f64] {
        &self.entries[r * self.dim..(r + 1) * self.dim]
    }
}

/// Signs the projection of an embedding: bit `i` is 1 iff
/// `row_i(A) . embedding > 0`. The sign of an exact zero resolves to 0,
/// so the all-zero embedding maps to the all-zero key.
pub fn simhash_key(embedding: &[f64], projection: &ProjectionMatrix) -> Result<StateKey, HashError> {
    if embedding.len() != projection.dim {
        return Err(HashError::DimensionMismatch {
            expected: projection.dim,
            got: embedding.len(),
        });
    }
    let mut bits = 0u64;
    for r in 0..projection.rows {
        let dot: f64 = projection
            .row(r)
            .iter()
            .zip(embedding)
            .map(|(a, e)| a * e)
            .sum();
        if dot > 0.0 {
            bits |= 1 << r;
        }
    }
    Ok(StateKey {
        scheme: Scheme::SimHash,
        bits,
        width: projection.rows as u8,
    })
}

/// Runs the observation through the encoder half of a frozen autoencoder
/// and rounds each sigmoid code unit to 0 or 1.
pub fn embed(
    obs: &Observation,
    encoder: &Network,
    params: &[f64],
    code_layer: usize,
) -> Result<Vec<f64>, NnError> {
    let mut code = encoder.layer_output(params, obs.as_slice(), code_layer)?;
    for v in code.iter_mut() {
        *v = if *v >= 0.5 { 1.0 } else { 0.0 };
    }
    Ok(code)
}

/// The key scheme an agent runs with: exact byte hashing for noise-free
/// observations, or SimHash over a frozen autoencoder code.
#[derive(Debug, Clone)]
pub enum StateHasher {
    Exact,
    Sim {
        projection: ProjectionMatrix,
        encoder: Network,
        /// Frozen encoder parameters.
        params: Vec<f64>,
        code_layer: usize,
    },
}

impl StateHasher {
    pub fn scheme(&self) -> Scheme {
        match self {
            StateHasher::Exact => Scheme::Exact,
            StateHasher::Sim { .. } => Scheme::SimHash,
        }
    }

    pub fn key(&self, obs: &Observation) -> StateKey {
        match self {
            StateHasher::Exact => exact_key(obs),
            StateHasher::Sim {
                projection,
                encoder,
                params,
                code_layer,
            } => {
                let code = embed(obs, encoder, params, *code_layer)
                    .expect("frozen encoder accepts observations");
                simhash_key(&code, projection).expect("projection matches code width")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(values: Vec<f64>) -> Observation {
        Observation::from_vec(2, 2, false, values)
    }

    #[test]
    fn exact_key_is_deterministic_and_sensitive() {
        let a = obs(vec![0.0, 0.2, 0.6, 1.0]);
        let b = obs(vec![0.0, 0.2, 0.6, 1.0]);
        let c = obs(vec![0.0, 0.2, 0.8, 1.0]);
        assert_eq!(exact_key(&a), exact_key(&b));
        assert_ne!(exact_key(&a), exact_key(&c));
        assert_eq!(exact_key(&a).scheme, Scheme::Exact);
    }

    #[test]
    fn simhash_zero_embedding_gives_zero_bits() {
        let proj = ProjectionMatrix::new(64, 16, 1).unwrap();
        let key = simhash_key(&vec![0.0; 16], &proj).unwrap();
        assert_eq!(key.bits, 0);
        assert_eq!(key.scheme, Scheme::SimHash);
        assert_eq!(key.width, 64);
    }

    #[test]
    fn simhash_scale_invariance() {
        let proj = ProjectionMatrix::new(64, 32, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let e: Vec<f64> = (0..32).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let doubled: Vec<f64> = e.iter().map(|v| v * 2.0).collect();
            assert_eq!(
                simhash_key(&e, &proj).unwrap(),
                simhash_key(&doubled, &proj).unwrap()
            );
        }
    }

    #[test]
    fn simhash_dimension_mismatch() {
        let proj = ProjectionMatrix::new(8, 16, 1).unwrap();
        assert_eq!(
            simhash_key(&vec![0.0; 15], &proj).unwrap_err(),
            HashError::DimensionMismatch {
                expected: 16,
                got: 15
            }
        );
    }

    #[test]
    fn simhash_angle_governs_bit_disagreement() {
        // For unit vectors at angle theta, each hyperplane separates them
        // with probability theta / pi.
        let theta: f64 = 0.4;
        let dim = 24;
        let mut total_bits = 0u32;
        let mut differing = 0u32;
        for seed in 0..200 {
            let proj = ProjectionMatrix::new(64, dim, seed).unwrap();
            // Two fixed vectors at the target angle in a 2D subspace.
            let mut a = vec![0.0; dim];
            let mut b = vec![0.0; dim];
            a[0] = 1.0;
            b[0] = theta.cos();
            b[1] = theta.sin();
            let ka = simhash_key(&a, &proj).unwrap();
            let kb = simhash_key(&b, &proj).unwrap();
            differing += (ka.bits ^ kb.bits).count_ones();
            total_bits += 64;
        }
        let frac = differing as f64 / total_bits as f64;
        let expected = theta / std::f64::consts::PI;
        assert!(
            (frac - expected).abs() < 0.01,
            "fraction {frac} vs expected {expected}"
        );
    }

    #[test]
    fn simhash_bits_are_balanced_over_random_embeddings() {
        let dim = 64;
        let proj = ProjectionMatrix::new(64, dim, 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let samples = 10_000;
        let mut counts = [0u32; 64];
        for _ in 0..samples {
            let e: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let key = simhash_key(&e, &proj).unwrap();
            for (b, count) in counts.iter_mut().enumerate() {
                if key.bits >> b & 1 == 1 {
                    *count += 1;
                }
            }
        }
        for (b, &count) in counts.iter().enumerate() {
            let freq = count as f64 / samples as f64;
            assert!((freq - 0.5).abs() < 0.02, "bit {b} frequency {freq}");
        }
    }

    #[test]
    fn embed_rounds_to_binary() {
        use crate::nn::{autoencoder_sized, Parameters, AUTOENCODER_CODE_LAYER};
        let spec = autoencoder_sized(8, 8, 32, 4, 8, 64);
        let net = Network::new(spec.clone());
        let params = Parameters::init(&spec, 5);
        let observation = Observation::from_vec(8, 8, false, vec![0.5; 64]);
        let code = embed(&observation, &net, &params.online, AUTOENCODER_CODE_LAYER).unwrap();
        assert_eq!(code.len(), 32);
        assert!(code.iter().all(|&v| v == 0.0 || v == 1.0));
        // Frozen encoder: identical observation, identical embedding.
        let again = embed(&observation, &net, &params.online, AUTOENCODER_CODE_LAYER).unwrap();
        assert_eq!(code, again);
    }
}
