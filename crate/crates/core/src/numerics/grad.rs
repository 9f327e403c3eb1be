//! Gradient evaluation and the finite-difference gate that validates it.
//!
//! Analytic gradients come from an [`Objective`]'s own backward pass. The
//! finite-difference routines here only ever call [`Objective::value`], so
//! they stay an independent check on whatever the backward pass computes.

use serde::Serialize;

use super::ParamSet;
use crate::error::{Error, Result};

/// A scalar loss over a parameter set with an analytic gradient.
pub trait Objective {
    fn value(&self, params: &ParamSet) -> Result<f64>;

    fn value_and_grad(&self, params: &ParamSet) -> Result<(f64, ParamSet)>;
}

/// `∂loss/∂p` for every parameter, rejecting non-finite losses or gradients.
pub fn grad<O: Objective + ?Sized>(objective: &O, params: &ParamSet) -> Result<ParamSet> {
    let (loss, grads) = objective.value_and_grad(params)?;
    if !loss.is_finite() {
        let culprit = params
            .iter()
            .find(|(_, t)| !t.is_finite())
            .map_or("<loss>", |(n, _)| n);
        return Err(Error::numeric(format!(
            "loss is {loss} (offending parameter: {culprit})"
        )));
    }
    params.check_compatible(&grads)?;
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::numeric(format!(
            "non-finite gradient for parameter `{name}`"
        )));
    }
    Ok(grads)
}

/// Central-difference estimate of the full gradient.
pub fn finite_difference<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamSet,
    h: f64,
) -> Result<ParamSet> {
    let mut out = params.zeros_like();
    let mut work = params.clone();
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for name in &names {
        let n = params.get(name).map_or(0, |t| t.len());
        for i in 0..n {
            let d = central(objective, &mut work, name, i, h)?;
            out.get_mut(name).unwrap().data_mut()[i] = d;
        }
    }
    Ok(out)
}

fn central<O: Objective + ?Sized>(
    objective: &O,
    work: &mut ParamSet,
    name: &str,
    i: usize,
    h: f64,
) -> Result<f64> {
    let x0 = work.get(name).unwrap().data()[i];
    work.get_mut(name).unwrap().data_mut()[i] = x0 + h;
    let up = objective.value(work)?;
    work.get_mut(name).unwrap().data_mut()[i] = x0 - h;
    let down = objective.value(work)?;
    work.get_mut(name).unwrap().data_mut()[i] = x0;
    Ok((up - down) / (2.0 * h))
}

/// Worst coordinate of one parameter tensor.
#[derive(Debug, Clone, Serialize)]
pub struct GroupCheck {
    pub name: String,
    pub coords: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Coordinates where the step had to be refined because the loss is
    /// not smooth at scale `h` (absolute-value kinks).
    pub refined: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.max_rel_error))
    }
}

/// Relative error used by the gate: `|a − n| / (|a| + 1e-8)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + 1e-8)
}

/// Compares every analytic gradient coordinate against central differences.
///
/// When a coordinate disagrees, the difference is re-taken with a step of
/// `h / 64`. If the two numeric estimates disagree with each other the loss
/// has a kink inside the original stencil and the finer estimate is used;
/// if they agree the original disagreement stands.
pub fn gradcheck<O: Objective + ?Sized>(
    objective: &O,
    params: &ParamSet,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let (loss, analytic) = objective.value_and_grad(params)?;
    let analytic = {
        params.check_compatible(&analytic)?;
        analytic
    };
    let mut work = params.clone();
    let mut groups = Vec::new();
    for (name, a) in analytic.iter() {
        let mut g = GroupCheck {
            name: name.to_owned(),
            coords: a.len(),
            max_rel_error: 0.0,
            worst_index: 0,
            refined: 0,
        };
        for (i, &ai) in a.data().iter().enumerate() {
            let coarse = central(objective, &mut work, name, i, h)?;
            let mut err = rel_error(ai, coarse);
            if err >= tolerance {
                let fine = central(objective, &mut work, name, i, h / 64.0)?;
                if rel_error(fine, coarse) >= tolerance {
                    g.refined += 1;
                    err = rel_error(ai, fine);
                }
            }
            if err > g.max_rel_error || !err.is_finite() {
                g.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
                g.worst_index = i;
            }
        }
        groups.push(g);
    }
    Ok(GradCheckReport {
        loss,
        tolerance,
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    struct SumSquares;

    impl Objective for SumSquares {
        fn value(&self, p: &ParamSet) -> Result<f64> {
            Ok(p.get("w").unwrap().data().iter().map(|x| x * x).sum())
        }

        fn value_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet)> {
            let mut g = p.zeros_like();
            g.get_mut("w").unwrap().data_mut().copy_from_slice(
                &p.get("w").unwrap().map(|x| 2.0 * x).into_data(),
            );
            Ok((self.value(p)?, g))
        }
    }

    fn quadratic_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap())
            .unwrap();
        p.insert("unused", Tensor::new(vec![1], vec![3.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn quadratic_gradient() {
        let g = grad(&SumSquares, &quadratic_params()).unwrap();
        assert_eq!(g.get("w").unwrap().data(), &[2.0, -4.0]);
        assert_eq!(g.get("unused").unwrap().data(), &[0.0]);
        let report = gradcheck(&SumSquares, &quadratic_params(), 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    struct Broken;

    impl Objective for Broken {
        fn value(&self, p: &ParamSet) -> Result<f64> {
            SumSquares.value(p)
        }

        fn value_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet)> {
            let (v, mut g) = SumSquares.value_and_grad(p)?;
            g.get_mut("w").unwrap().data_mut()[1] *= 1.01;
            Ok((v, g))
        }
    }

    #[test]
    fn gate_catches_wrong_gradient() {
        let report = gradcheck(&Broken, &quadratic_params(), 1e-5, 1e-4).unwrap();
        assert!(!report.passed());
        let w = report.groups.iter().find(|g| g.name == "w").unwrap();
        assert_eq!(w.worst_index, 1);
    }

    struct Infinite;

    impl Objective for Infinite {
        fn value(&self, _: &ParamSet) -> Result<f64> {
            Ok(f64::INFINITY)
        }

        fn value_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet)> {
            Ok((f64::INFINITY, p.zeros_like()))
        }
    }

    #[test]
    fn non_finite_loss_names_parameter() {
        let mut p = quadratic_params();
        p.get_mut("w").unwrap().data_mut()[0] = f64::NAN;
        let err = grad(&Infinite, &p).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("`w`") || m.contains("w)")));
    }

    struct AbsKink;

    impl Objective for AbsKink {
        fn value(&self, p: &ParamSet) -> Result<f64> {
            Ok(p.get("w").unwrap().data()[0].abs())
        }

        fn value_and_grad(&self, p: &ParamSet) -> Result<(f64, ParamSet)> {
            let x = p.get("w").unwrap().data()[0];
            let mut g = p.zeros_like();
            g.get_mut("w").unwrap().data_mut()[0] = x.signum();
            Ok((x.abs(), g))
        }
    }

    #[test]
    fn kink_inside_stencil_is_refined() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![1], vec![3e-6]).unwrap())
            .unwrap();
        let report = gradcheck(&AbsKink, &p, 1e-5, 1e-4).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.groups[0].refined, 1);
    }
}
