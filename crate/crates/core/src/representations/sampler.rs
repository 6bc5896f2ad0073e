use rand::distr::Distribution;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;

use crate::error::{Error, Result};

/// Noise distribution over feature ids proportional to `count^0.75`,
/// one table per template.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    tables: Vec<WeightedAliasIndex<f64>>,
    probabilities: Vec<Vec<f64>>,
}

pub const NOISE_EXPONENT: f64 = 0.75;

impl NegativeSampler {
    /// `counts[t][id]` is the frequency of feature `id` in template `t`.
    pub fn new<C: AsRef<[u64]>>(counts: &[C]) -> Result<Self> {
        let mut tables = Vec::with_capacity(counts.len());
        let mut probabilities = Vec::with_capacity(counts.len());
        for (t, c) in counts.iter().enumerate() {
            let weights: Vec<f64> = c.as_ref().iter().map(|&n| (n as f64).powf(NOISE_EXPONENT)).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                return Err(Error::Empty(format!("no feature counts for template {t}")));
            }
            probabilities.push(weights.iter().map(|w| w / total).collect());
            tables.push(
                WeightedAliasIndex::new(weights)
                    .map_err(|e| Error::InvalidArgument(format!("noise table for template {t}: {e}")))?,
            );
        }
        Ok(NegativeSampler { tables, probabilities })
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, template: usize, rng: &mut R) -> u32 {
        self.tables[template].sample(rng) as u32
    }

    pub fn probability(&self, template: usize, id: u32) -> f64 {
        self.probabilities[template][id as usize]
    }

    pub fn probabilities(&self, template: usize) -> &[f64] {
        &self.probabilities[template]
    }

    pub fn templates(&self) -> usize {
        self.tables.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn probabilities_sum_to_one() {
        let s = NegativeSampler::new(&[vec![1u64, 16, 81], vec![5]]).unwrap();
        for t in 0..2 {
            assert!((s.probabilities(t).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // 1 : 8 : 27 after the exponent
        assert!((s.probability(0, 1) / s.probability(0, 0) - 8.0).abs() < 1e-9);
        assert!(NegativeSampler::new(&[Vec::<u64>::new()]).is_err());
    }

    #[test]
    fn empirical_frequencies_within_three_standard_errors() {
        let counts = vec![vec![1u64, 3, 7, 20, 50, 120, 400, 1000]];
        let s = NegativeSampler::new(&counts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mut hits = vec![0u64; counts[0].len()];
        for _ in 0..n {
            hits[s.sample(0, &mut rng) as usize] += 1;
        }
        // Expected frequencies computed directly from the raw counts.
        let w: Vec<f64> = counts[0].iter().map(|&c| (c as f64).powf(0.75)).collect();
        let z: f64 = w.iter().sum();
        for (i, &h) in hits.iter().enumerate() {
            let p = w[i] / z;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = h as f64 / n as f64;
            assert!((freq - p).abs() <= 3.0 * se, "id {i}: {freq} vs {p}");
        }
    }
}
