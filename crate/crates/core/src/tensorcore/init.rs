use ndarray::{Array, Dimension, ShapeBuilder};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// Gaussian with standard deviation √(2 / fan_in).
pub fn kaiming_normal<Sh, D, R>(shape: Sh, fan_in: usize, rng: &mut R) -> Array<f64, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
    R: Rng + ?Sized,
{
    assert!(fan_in > 0, "fan_in must be positive");
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    Array::from_shape_simple_fn(shape, || normal.sample(rng))
}

/// Uniform on `[-bound, bound]`.
pub fn uniform<Sh, D, R>(shape: Sh, bound: f64, rng: &mut R) -> Array<f64, D>
where
    Sh: ShapeBuilder<Dim = D>,
    D: Dimension,
    R: Rng + ?Sized,
{
    if bound == 0.0 {
        return Array::zeros(shape);
    }
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array::from_shape_simple_fn(shape, || u.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kaiming_std_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Array1<f64> = kaiming_normal(1_000_000, 8, &mut rng);
        let mean = a.mean().unwrap();
        let sd = a.mapv(|v| (v - mean).powi(2)).mean().unwrap().sqrt();
        let want = (2.0f64 / 8.0).sqrt();
        assert!((sd - want).abs() / want < 0.01);

        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let b: Array1<f64> = uniform(50, 0.3, &mut r1);
        let c: Array1<f64> = uniform(50, 0.3, &mut r2);
        assert_eq!(b, c);
        assert!(b.iter().all(|v| v.abs() <= 0.3));
    }
}
