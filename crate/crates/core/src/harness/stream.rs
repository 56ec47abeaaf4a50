//! Binary regression data: integers in binary, with a rare large spike.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const N_BITS: usize = 16;
pub const NORMAL_MAX: u32 = (1 << 10) - 1;
pub const SPIKE_PERIOD: u64 = 1000;
pub const SPIKE_VALUE: u32 = (1 << 16) - 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// 1-based index in the stream.
    pub step: u64,
    pub input: [f64; N_BITS],
    pub target: f64,
}

/// Least significant bit first.
pub fn encode_bits(value: u32) -> [f64; N_BITS] {
    let mut bits = [0.0; N_BITS];
    for (i, b) in bits.iter_mut().enumerate() {
        *b = f64::from((value >> i) & 1);
    }
    bits
}

/// Every [`SPIKE_PERIOD`]-th sample encodes [`SPIKE_VALUE`]; all others encode
/// a uniform integer in `0..=NORMAL_MAX`.
#[derive(Debug, Clone)]
pub struct BinRegStream {
    rng: Xoshiro256PlusPlus,
    step: u64,
}

impl BinRegStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn generate_sample(&mut self) -> Sample {
        self.step += 1;
        let value = if self.step.is_multiple_of(SPIKE_PERIOD) {
            SPIKE_VALUE
        } else {
            self.rng.random_range(0..=NORMAL_MAX)
        };
        Sample {
            step: self.step,
            input: encode_bits(value),
            target: f64::from(value),
        }
    }
}

impl Iterator for BinRegStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        Some(self.generate_sample())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_low_bits_first() {
        let bits = encode_bits(5);
        assert_eq!(&bits[..4], &[1.0, 0.0, 1.0, 0.0]);
        assert!(bits[4..].iter().all(|&b| b == 0.0));
        assert_eq!(encode_bits(SPIKE_VALUE), [1.0; N_BITS]);
    }

    #[test]
    fn spikes_on_schedule() {
        let mut s = BinRegStream::new(3);
        for sample in s.by_ref().take(3000) {
            let spike = sample.step % 1000 == 0;
            assert_eq!(sample.target == 65535.0, spike, "step {}", sample.step);
            if spike {
                assert_eq!(sample.input, [1.0; N_BITS]);
            } else {
                assert!(sample.target <= 1023.0);
                assert!(sample.input[10..].iter().all(|&b| b == 0.0));
                let decoded: f64 = sample
                    .input
                    .iter()
                    .enumerate()
                    .map(|(i, b)| b * (1u32 << i) as f64)
                    .sum();
                assert_eq!(decoded, sample.target);
            }
        }
        assert_eq!(s.step(), 3000);
    }

    #[test]
    fn deterministic_per_seed() {
        let a: Vec<_> = BinRegStream::new(9).take(50).collect();
        let b: Vec<_> = BinRegStream::new(9).take(50).collect();
        let c: Vec<_> = BinRegStream::new(10).take(50).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
