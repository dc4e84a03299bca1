use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

/// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-limit..=limit))
}

/// Random `n × n` orthogonal matrix: modified Gram-Schmidt on the columns
/// of a standard normal draw.
pub fn orthogonal(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    loop {
        let mut q = Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(StandardNormal));
        let mut ok = true;
        for j in 0..n {
            for k in 0..j {
                let dot = q.column(j).dot(&q.column(k));
                let qk = q.column(k).to_owned();
                q.column_mut(j).scaled_add(-dot, &qk);
            }
            let norm = q.column(j).dot(&q.column(j)).sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.column_mut(j).mapv_inplace(|v| v / norm);
        }
        if ok {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding;

    #[test]
    fn orthogonal_is_orthonormal() {
        let mut rng = seeding::rng(0, "orth");
        for n in [1, 4, 17] {
            let q = orthogonal(n, &mut rng);
            let qtq = q.t().dot(&q);
            for ((i, j), v) in qtq.indexed_iter() {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn glorot_respects_limit() {
        let mut rng = seeding::rng(0, "glorot");
        let w = glorot_uniform(10, 20, &mut rng);
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= limit));
        assert!(w.iter().any(|v| v.abs() > limit * 0.9));
    }
}
