//! Central finite-difference gradient checker, the oracle every
//! differentiable op and the end-to-end CTIM loss are validated against.

use rand::Rng;

use super::graph::{Graph, Var};
use super::{Tensor, TensorError};
use crate::scalar::Scalar;
use crate::util::stream_rng;

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub components_checked: usize,
}

/// Compares reverse-mode gradients of a scalar-valued graph function with
/// central finite differences. `samples_per_input` limits how many
/// components of each input are perturbed (None checks all of them);
/// components with gradient magnitude under 1e-3 are measured on that
/// absolute scale.
pub fn finite_diff_check<S, F>(
    f: &F,
    inputs: &[Tensor<S>],
    h: f64,
    samples_per_input: Option<usize>,
    seed: u64,
) -> Result<FdReport, TensorError>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |points: &[Tensor<S>]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = points.iter().map(|t| g.leaf(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        if g.value(loss).numel() != 1 {
            return Err(TensorError::InvalidInput(
                "finite_diff_check requires a scalar-valued function".into(),
            ));
        }
        Ok(g.value(loss).item().to_f64())
    };

    // Analytic gradients.
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<S>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_component: 0,
        analytic: 0.0,
        numeric: 0.0,
        components_checked: 0,
    };
    let mut rng = stream_rng(seed, 0);
    let mut work: Vec<Tensor<S>> = inputs.to_vec();

    for (ti, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let components: Vec<usize> = match samples_per_input {
            Some(k) if k < n => (0..k).map(|_| rng.gen_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        for ci in components {
            let orig = input.data()[ci];
            work[ti].data_mut()[ci] = orig + S::from_f64(h);
            let up = eval(&work)?;
            work[ti].data_mut()[ci] = orig - S::from_f64(h);
            let down = eval(&work)?;
            work[ti].data_mut()[ci] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti].data()[ci].to_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-3);
            let rel = (a - numeric).abs() / denom;
            report.components_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = ti;
                report.worst_component = ci;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_at_three_is_six() {
        // f(x) = sum(x * x), so df/dx = 2x = 6 at x = 3.
        let x = Tensor::<f64>::full(&[1], 3.0);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let sq = g.mul(vars[0], vars[0])?;
            Ok(g.sum_all(sq))
        };
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let loss = f(&mut g, &[v]).unwrap();
        g.backward(loss).unwrap();
        assert!((g.grad(v).unwrap().data()[0] - 6.0).abs() < 1e-12);

        let report = finite_diff_check(&f, &[x], 1e-5, None, 0).unwrap();
        assert!((report.analytic - report.numeric).abs() < 1e-9 || report.max_rel_err < 1e-9);
        assert!(report.max_rel_err < 1e-9, "{report:?}");
    }

    #[test]
    fn constant_function_has_zero_gradients() {
        let x = Tensor::<f64>::full(&[4], 1.5);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let zero = g.leaf(Tensor::zeros(&[4]));
            let masked = g.mul(vars[0], zero)?;
            Ok(g.sum_all(masked))
        };
        let report = finite_diff_check(&f, &[x], 1e-5, None, 0).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }
}
