use std::collections::BTreeMap;

use super::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst relative error per parameter between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub per_param: BTreeMap<String, f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param.values().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1e-8, analytic.abs() + numeric.abs())
}

/// Compares the gradients stored in `params` against central differences of `loss_fn`.
pub fn grad_check<F>(loss_fn: F, params: &ParamSet, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamSet) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!("grad_check eps must be positive, got {eps}")));
    }
    let eval = |p: &ParamSet| -> Result<f64> {
        let v = loss_fn(p)?;
        if !v.is_finite() {
            return Err(Error::Divergence(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };
    eval(params)?;

    let mut probe = params.clone();
    let mut per_param = BTreeMap::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic = params.grad(&name)?.clone();
        let n = params.get(&name)?.len();
        let mut worst = 0.0f64;
        for k in 0..n {
            let orig = params.get(&name)?.data()[k];
            probe.get_mut(&name)?.data_mut()[k] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[k] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(&name)?.data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
        }
        per_param.insert(name, worst);
    }
    Ok(GradCheckReport { per_param })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{sigmoid, Tensor};

    fn one(name: &str, value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.insert(name, Tensor::scalar(value));
        ps.set_grad(name, Tensor::scalar(grad)).unwrap();
        ps
    }

    #[test]
    fn square_at_three() {
        let ps = one("p", 3.0, 6.0);
        let r = grad_check(|p| Ok(p.get("p")?.data()[0].powi(2)), &ps, DEFAULT_EPS).unwrap();
        assert!(r.max_rel_error() < 1e-9, "{r:?}");
    }

    #[test]
    fn constant_loss() {
        let ps = one("p", 1.5, 0.0);
        let r = grad_check(|_| Ok(4.0), &ps, DEFAULT_EPS).unwrap();
        assert_eq!(r.max_rel_error(), 0.0);
    }

    #[test]
    fn sigmoid_at_zero() {
        let ps = one("p", 0.0, 0.25);
        let r = grad_check(|p| Ok(sigmoid(p.get("p")?.data()[0])), &ps, DEFAULT_EPS).unwrap();
        assert!(r.max_rel_error() < 1e-9);
    }

    #[test]
    fn flags_wrong_gradient() {
        let ps = one("p", 3.0, 5.0);
        let r = grad_check(|p| Ok(p.get("p")?.data()[0].powi(2)), &ps, DEFAULT_EPS).unwrap();
        assert!(!r.passes(1e-4));
    }

    #[test]
    fn non_finite_loss_is_error() {
        let ps = one("p", 0.0, 0.0);
        assert!(grad_check(|_| Ok(f64::NAN), &ps, DEFAULT_EPS).is_err());
    }
}
