use rand::Rng;

use crate::nn::Real;

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform samples on `[-bound, bound]` with the Glorot bound.
pub fn glorot_init<T: Real, R: Rng + ?Sized>(
    len: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Vec<T> {
    let bound = glorot_bound(fan_in, fan_out);
    (0..len)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bound_formula() {
        assert_eq!(glorot_bound(3, 3), 1.0);
    }

    #[test]
    fn support_and_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bound = glorot_bound(40, 20);
        let v: Vec<f64> = glorot_init(100_000, 40, 20, &mut rng);
        assert!(v.iter().all(|x| x.abs() <= bound));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        let expected = bound * bound / 3.0;
        assert!((var - expected).abs() / expected < 0.05);
    }

    #[test]
    fn seeded_determinism() {
        let a: Vec<f32> = glorot_init(50, 5, 5, &mut ChaCha8Rng::seed_from_u64(9));
        let b: Vec<f32> = glorot_init(50, 5, 5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
