use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor on the relative-error denominator so exact-zero gradients compare
/// by absolute error.
const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central-difference check of a taped scalar function.
///
/// `f` receives leaves for `point` (in order) and returns the scalar output.
/// Returns the worst relative error across every coordinate of every input.
pub fn grad_check<F>(f: F, point: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = leaves.iter().map(|&v| grads.get(v)).collect();
    let value = |p: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves: Vec<Var> = p.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        Ok(tape.value(out).item())
    };
    grad_check_with(value, &analytic, point, epsilon)
}

/// Compares a supplied gradient against central differences of `value`.
pub fn grad_check_with<F>(value: F, analytic: &[Tensor], point: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<f64>,
{
    if analytic.len() != point.len() {
        return Err(Error::Contract(format!(
            "{} gradients for {} inputs",
            analytic.len(),
            point.len()
        )));
    }
    let mut worst = 0.0_f64;
    let mut probe: Vec<Tensor> = point.to_vec();
    for (which, grad) in analytic.iter().enumerate() {
        if grad.shape() != point[which].shape() {
            return Err(Error::shape("grad_check", grad.shape(), point[which].shape()));
        }
        for k in 0..point[which].len() {
            let x0 = point[which].values()[k];
            probe[which].values_mut()[k] = x0 + epsilon;
            let up = value(&probe)?;
            probe[which].values_mut()[k] = x0 - epsilon;
            let down = value(&probe)?;
            probe[which].values_mut()[k] = x0;
            let numeric = (up - down) / (2.0 * epsilon);
            worst = worst.max(relative_error(grad.values()[k], numeric));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let p = vec![Tensor::column(vec![0.3, -1.2, 2.0]).unwrap()];
        let err = grad_check(
            |t, v| {
                let s = t.scale(v[0], 2.5);
                Ok(t.sum(s))
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn quadratic_at_one() {
        let p = vec![Tensor::scalar(1.0).unwrap()];
        let err = grad_check(|t, v| t.mul(v[0], v[0]), &p, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let p = vec![Tensor::scalar(1.0).unwrap()];
        // true derivative of x² at 1 is 2; inject 3
        let wrong = vec![Tensor::scalar(3.0).unwrap()];
        let err = grad_check_with(|x| Ok(x[0].item().powi(2)), &wrong, &p, 1e-5).unwrap();
        assert!(err > 0.3, "{err}");
    }
}
