//! Central finite-difference gradient checking in `f64`.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of [`check_gradients`].
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Error over all sampled coordinates of all inputs.
    pub overall: f64,
    /// Error per input, over that input's sampled coordinates.
    pub per_input: Vec<f64>,
    pub coords: usize,
}

/// `‖a − n‖₂ / max(‖a‖₂, ‖n‖₂)`, 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = na.max(nn);
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Fixed, non-constant probe weights so that `sum(y ⊙ probe)` exercises
/// every output element with a different sensitivity.
fn probe(shape: &[usize]) -> Tensor<f64> {
    let n = crate::tensor::numel(shape);
    let data = (0..n).map(|i| (0.37 * i as f64 + 0.5).sin() + 0.1).collect();
    Tensor::new(shape, data).expect("probe shape")
}

/// Evenly spaced coordinate sample of size at most `max`.
fn sample(n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let step = n as f64 / max as f64;
    (0..max).map(|i| ((i as f64 + 0.5) * step) as usize).collect()
}

/// Compares tape gradients of `sum(f(inputs) ⊙ probe)` against central
/// differences with step `h`, on at most `max_coords` coordinates per input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, h: f64, max_coords: usize) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let loss_of = |values: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let y = f(&tape, &vars)?;
        let p = probe(&y.shape());
        Ok(y.value().data().iter().zip(p.data()).map(|(a, b)| a * b).sum())
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let y = f(&tape, &vars)?;
    let p = tape.constant(probe(&y.shape()));
    let loss = y.mul(p)?.sum_all();
    let grads = tape.backward(loss)?;

    let mut all_a = Vec::new();
    let mut all_n = Vec::new();
    let mut per_input = Vec::new();
    let mut values = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let g = grads.get_or_zeros(*var);
        let mut a = Vec::new();
        let mut n = Vec::new();
        for idx in sample(inputs[k].numel(), max_coords) {
            let orig = values[k].data()[idx];
            values[k].data_mut()[idx] = orig + h;
            let up = loss_of(&values)?;
            values[k].data_mut()[idx] = orig - h;
            let down = loss_of(&values)?;
            values[k].data_mut()[idx] = orig;
            a.push(g.data()[idx]);
            n.push((up - down) / (2.0 * h));
        }
        per_input.push(relative_error(&a, &n));
        all_a.extend(a);
        all_n.extend(n);
    }
    Ok(GradReport {
        overall: relative_error(&all_a, &all_n),
        per_input,
        coords: all_a.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[0.0], &[0.0]), 0.0);
        assert!((relative_error(&[1.0, 0.0], &[0.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!(relative_error(&[3.0, 4.0], &[3.0, 4.0]) == 0.0);
    }

    #[test]
    fn sample_is_bounded_and_unique() {
        let s = sample(1000, 64);
        assert_eq!(s.len(), 64);
        assert!(s.windows(2).all(|w| w[0] < w[1]) && *s.last().unwrap() < 1000);
        assert_eq!(sample(5, 64), vec![0, 1, 2, 3, 4]);
    }
}
