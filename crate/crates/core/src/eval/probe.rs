use nalgebra::{DMatrix, DVector};

use crate::baselines::pricing::{demand_feature, ridge_predict};
use crate::domain::{Context, History};
use crate::error::{Error, Result};

/// Ridge fit with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Mean squared error on the held-out samples.
    pub mse: f64,
}

impl ProbeFit {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }
}

/// Fit `y ~ X` by ridge regression on centered data and score it on the
/// held-out set.
pub fn linear_probe(
    train_x: &[Vec<f64>],
    train_y: &[f64],
    test_x: &[Vec<f64>],
    test_y: &[f64],
    lambda: f64,
) -> Result<ProbeFit> {
    let n = train_x.len();
    if n < 2 || n != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::InvalidShape(format!(
            "probe needs at least two matched training samples, got {n} inputs and {} targets",
            train_y.len()
        )));
    }
    let d = train_x[0].len();
    if train_x.iter().chain(test_x).any(|x| x.len() != d) {
        return Err(Error::InvalidShape("embedding dimensions differ".into()));
    }
    let mx: Vec<f64> = (0..d).map(|j| train_x.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let my = train_y.iter().sum::<f64>() / n as f64;
    let xm = DMatrix::from_fn(n, d, |i, j| train_x[i][j] - mx[j]);
    let yv = DVector::from_iterator(n, train_y.iter().map(|y| y - my));
    let lhs = xm.transpose() * &xm + DMatrix::identity(d, d) * lambda.max(0.0);
    let rhs = xm.transpose() * yv;
    let beta = lhs
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| lhs.lu().solve(&rhs))
        .ok_or_else(|| Error::InvalidShape("probe system is singular; use a positive ridge".into()))?;
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = my - coefficients.iter().zip(&mx).map(|(c, m)| c * m).sum::<f64>();
    let mut fit = ProbeFit {
        coefficients,
        intercept,
        mse: 0.0,
    };
    if !test_x.is_empty() {
        fit.mse = test_x
            .iter()
            .zip(test_y)
            .map(|(x, y)| (fit.predict(x) - y).powi(2))
            .sum::<f64>()
            / test_x.len() as f64;
    }
    Ok(fit)
}

/// Affine map of `v` onto `[0, 1]`; constant input maps to zeros.
pub fn min_max_normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Replace the current context of `h`.
pub fn manipulate_context(h: &History, new_context: Context) -> Result<History> {
    h.with_context(new_context)
}

/// Ridge prediction of the demand at `(x, price)` from the pricing history,
/// regressing demand on `(x, price * x)`.
pub fn ridge_demand_baseline(h: &History, x: &[f64], price: f64, lambda: f64) -> Result<f64> {
    let mut feats = Vec::with_capacity(h.steps().len());
    let mut ys = Vec::with_capacity(h.steps().len());
    for s in h.steps() {
        let a = s
            .action
            .as_scalar()
            .ok_or_else(|| Error::InvalidAction(format!("{:?} is not a price", s.action)))?;
        feats.push(demand_feature(s.context.values(), a));
        ys.push(
            *s.observation
                .values()
                .get(1)
                .ok_or_else(|| Error::InvalidShape("pricing observations carry (revenue, demand)".into()))?,
        );
    }
    Ok(ridge_predict(&feats, &ys, &demand_feature(x, price), lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Action, Observation};
    use crate::envs::{EnvParams, EnvState, TaskSpec};
    use crate::rng::RngStream;

    #[test]
    fn realizable_targets_have_zero_error() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, (i * i) as f64 % 5.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x[0] - x[1]).collect();
        let fit = linear_probe(&xs, &ys, &xs, &ys, 0.0).unwrap();
        assert!(fit.mse < 1e-18);
        assert!((fit.intercept - 1.0).abs() < 1e-9);
    }

    #[test]
    fn heavy_ridge_predicts_the_mean() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64]).collect();
        let ys = vec![1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        let fit = linear_probe(&xs, &ys, &xs, &ys, 1e12).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-9);
        assert!((fit.predict(&[100.0]) - 3.5).abs() < 1e-6);
    }

    #[test]
    fn five_point_instance_matches_normal_equations() {
        let xs = [vec![1.0, 0.5], vec![2.0, -1.0], vec![0.0, 2.0], vec![3.0, 1.0], vec![-1.0, 0.0]];
        let ys = [2.0, 0.5, 3.0, 4.5, -0.5];
        let lambda = 0.3;
        let fit = linear_probe(&xs, &ys, &[], &[], lambda).unwrap();
        // oracle: augmented system with an unpenalized intercept column
        let z = DMatrix::from_fn(5, 3, |i, j| if j == 0 { 1.0 } else { xs[i][j - 1] });
        let mut pen = DMatrix::identity(3, 3) * lambda;
        pen[(0, 0)] = 0.0;
        let sol = (z.transpose() * &z + pen)
            .lu()
            .solve(&(z.transpose() * DVector::from_column_slice(&ys)))
            .unwrap();
        assert!((fit.intercept - sol[0]).abs() < 1e-9);
        assert!((fit.coefficients[0] - sol[1]).abs() < 1e-9);
        assert!((fit.coefficients[1] - sol[2]).abs() < 1e-9);
    }

    #[test]
    fn probe_rejects_tiny_inputs() {
        assert!(linear_probe(&[vec![1.0]], &[1.0], &[], &[], 0.1).is_err());
    }

    #[test]
    fn normalization_maps_extremes() {
        assert_eq!(min_max_normalize(&[2.0, 4.0, 3.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(min_max_normalize(&[1.0, 1.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn manipulation_touches_only_the_current_context() {
        let mut rng = RngStream::new(2, 0);
        let task = TaskSpec::pricing(2);
        let params = task.sample_params(5, &mut rng);
        let state = EnvState::initial(&params, 5);
        let mut h = History::new(params.sample_context(&state, &mut rng));
        h.push(Action::Scalar(1.0), Observation(vec![1.0, 1.0]), Context(vec![1.0, 1.0])).unwrap();
        let same = manipulate_context(&h, h.current_context().clone()).unwrap();
        assert_eq!(same, h);
        let moved = manipulate_context(&h, Context(vec![2.5, 0.1])).unwrap();
        assert_eq!(moved.steps(), h.steps());
        let EnvParams::Pricing(p) = &params else { unreachable!() };
        let a0 = p.optimal_action(2, h.current_context()).unwrap();
        let a1 = p.optimal_action(2, moved.current_context()).unwrap();
        assert_ne!(a0, a1);
        assert!(manipulate_context(&h, Context(vec![1.0])).is_err());
    }

    #[test]
    fn demand_baseline_cases() {
        let h = History::new(Context(vec![1.0, 2.0]));
        assert_eq!(ridge_demand_baseline(&h, &[1.0, 2.0], 3.0, 0.1).unwrap(), 0.0);
        let (alpha, beta) = ([1.2, 0.7], [0.3, 0.1]);
        let mut rng = RngStream::new(4, 4);
        let mut h = History::new(Context(vec![rng.uniform_range(0.0, 2.5), rng.uniform_range(0.0, 2.5)]));
        for _ in 0..6 {
            let x = h.current_context().values().to_vec();
            let a = rng.uniform_range(0.0, 5.0);
            let d = alpha[0] * x[0] + alpha[1] * x[1] - (beta[0] * x[0] + beta[1] * x[1]) * a;
            let next = Context(vec![rng.uniform_range(0.0, 2.5), rng.uniform_range(0.0, 2.5)]);
            h.push(Action::Scalar(a), Observation(vec![a * d, d]), next).unwrap();
        }
        let (x, a) = ([1.0, 2.0], 2.0);
        let want = alpha[0] + 2.0 * alpha[1] - (beta[0] + 2.0 * beta[1]) * a;
        assert!((ridge_demand_baseline(&h, &x, a, 1e-12).unwrap() - want).abs() < 1e-6);
        // lambda = 0.1 against the direct normal-equation solve
        let z: Vec<Vec<f64>> = h.steps().iter().map(|s| demand_feature(s.context.values(), s.action.as_scalar().unwrap())).collect();
        let zm = DMatrix::from_fn(z.len(), 4, |i, j| z[i][j]);
        let y = DVector::from_iterator(z.len(), h.steps().iter().map(|s| s.observation.0[1]));
        let theta = (zm.transpose() * &zm + DMatrix::identity(4, 4) * 0.1).lu().solve(&(zm.transpose() * y)).unwrap();
        let q = DVector::from_vec(demand_feature(&x, a));
        assert!((ridge_demand_baseline(&h, &x, a, 0.1).unwrap() - theta.dot(&q)).abs() < 1e-9);
    }
}
