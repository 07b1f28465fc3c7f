use super::mlp::{GradientSet, TwoHeadMlp};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central finite differences of `loss` with respect to every model parameter.
pub fn finite_difference_grad<F>(loss: F, model: &TwoHeadMlp, eps: f64) -> GradientSet
where
    F: Fn(&TwoHeadMlp) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut grads = GradientSet::zeros_like(model);
    let mut probe = model.clone();
    let n_tensors = model.tensors().count();
    for t in 0..n_tensors {
        let len = model.tensors().nth(t).unwrap().as_slice().len();
        for k in 0..len {
            let orig = model.tensors().nth(t).unwrap().as_slice()[k];
            probe.tensors_mut().nth(t).unwrap().as_mut_slice()[k] = orig + eps;
            let plus = loss(&probe);
            probe.tensors_mut().nth(t).unwrap().as_mut_slice()[k] = orig - eps;
            let minus = loss(&probe);
            probe.tensors_mut().nth(t).unwrap().as_mut_slice()[k] = orig;
            grads.tensors_mut().nth(t).unwrap().as_mut_slice()[k] = (plus - minus) / (2.0 * eps);
        }
    }
    grads
}

/// Relative error with an absolute floor: `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst element-wise score `|a - b| / max(rel * max(|a|, |b|), floor)`.
///
/// Every entry agrees within relative tolerance `rel` or absolute tolerance
/// `floor` exactly when the returned score is below 1.
pub fn max_gradient_mismatch(a: &GradientSet, b: &GradientSet, rel: f64, floor: f64) -> f64 {
    a.tensors()
        .zip(b.tensors())
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
        .map(|(&p, &q)| (p - q).abs() / (rel * p.abs().max(q.abs())).max(floor))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndmath::{Activation, Matrix};

    fn scalar_model(w: f64) -> TwoHeadMlp {
        // No trunk; the variance head holds the single weight of interest.
        TwoHeadMlp::from_layers(
            vec![],
            Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap(),
            Matrix::from_vec(1, 2, vec![w, 0.0]).unwrap(),
            Activation::Tanh,
        )
        .unwrap()
    }

    #[test]
    fn quadratic_gradient() {
        let model = scalar_model(3.0);
        let g = finite_difference_grad(
            |m| 0.5 * m.var_head().get(0, 0).powi(2),
            &model,
            DEFAULT_FD_EPS,
        );
        assert!((g.var_head.get(0, 0) - 3.0).abs() < 1e-6);
        assert_eq!(g.var_head.get(0, 1), 0.0);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let model = scalar_model(1.0);
        let g = finite_difference_grad(|_| 4.2, &model, DEFAULT_FD_EPS);
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0, 1e-8), 0.0);
        assert!((relative_error(1.0, 1.1, 1e-8) - 0.1 / 1.1).abs() < 1e-15);
    }
}
