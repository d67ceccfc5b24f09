//! Small dense-vector helpers shared by the head, the memory and the trainer.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// Arithmetic mean of a non-empty set of equal-length vectors.
pub fn mean_of<V: AsRef<[f64]>>(vs: &[V]) -> Vec<f64> {
    let d = vs.first().map_or(0, |v| v.as_ref().len());
    let mut out = vec![0.0; d];
    for v in vs {
        for (o, x) in out.iter_mut().zip(v.as_ref()) {
            *o += x;
        }
    }
    let n = vs.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// Mean of the rows of `vs` selected by `idx`.
pub fn mean_of_subset<V: AsRef<[f64]>>(vs: &[V], idx: &[usize]) -> Vec<f64> {
    let d = vs.first().map_or(0, |v| v.as_ref().len());
    let mut out = vec![0.0; d];
    for &i in idx {
        for (o, x) in out.iter_mut().zip(vs[i].as_ref()) {
            *o += x;
        }
    }
    let n = idx.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_sum_exp_is_stable_for_large_inputs() {
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn subset_mean() {
        let vs = vec![vec![0.0], vec![2.0], vec![4.0], vec![6.0]];
        assert_eq!(mean_of_subset(&vs, &[0, 3]), vec![3.0]);
        assert_eq!(mean_of(&vs), vec![3.0]);
    }
}
