//! Newsvendor baselines: pinball-loss regression (ERM) and an online
//! gradient rule (FAI).

use nalgebra::{DMatrix, DVector};

use crate::domain::{Action, History};
use crate::envs::ACTION_MAX;
use crate::error::{Error, Result};
use crate::eval::PolicyHandle;
use crate::rng::RngStream;

pub const ERM_ITERATIONS: usize = 500;
const MM_EPS: f64 = 1e-9;

/// Splits a newsvendor context into `(inventory, holding cost, features)`.
fn split_context(x: &[f64], perishable: bool) -> Result<(f64, f64, &[f64])> {
    let off = if perishable { 1 } else { 2 };
    if x.len() <= off {
        return Err(Error::InvalidShape(format!("newsvendor context {x:?} is too short")));
    }
    let inv = if perishable { 0.0 } else { x[0] };
    Ok((inv, x[off - 1], &x[off..]))
}

fn project_order(a: f64, inventory: f64, perishable: bool) -> f64 {
    if perishable {
        a.clamp(0.0, ACTION_MAX)
    } else {
        a.clamp(inventory, inventory + ACTION_MAX)
    }
}

pub fn pinball(q: f64, residual: f64) -> f64 {
    if residual >= 0.0 {
        q * residual
    } else {
        (q - 1.0) * residual
    }
}

pub fn pinball_objective(features: &[Vec<f64>], targets: &[f64], q: f64, theta: &[f64]) -> f64 {
    let n = targets.len().max(1) as f64;
    features
        .iter()
        .zip(targets)
        .map(|(z, y)| pinball(q, y - dot(z, theta)))
        .sum::<f64>()
        / n
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

/// Linear quantile regression at level `q` by majorize-minimize: each
/// iteration solves the weighted least-squares problem that majorizes the
/// pinball loss at the current residuals. The best iterate is kept.
pub fn fit_quantile(features: &[Vec<f64>], targets: &[f64], q: f64) -> Vec<f64> {
    let d = features.first().map_or(1, Vec::len);
    let mut theta = vec![0.0; d];
    if targets.is_empty() {
        return theta;
    }
    theta[0] = empirical_quantile(targets, q);
    let mut best = (pinball_objective(features, targets, q, &theta), theta.clone());
    for _ in 0..ERM_ITERATIONS {
        let mut lhs = DMatrix::<f64>::identity(d, d) * MM_EPS;
        let mut rhs = DVector::<f64>::zeros(d);
        for (z, y) in features.iter().zip(targets) {
            let zv = DVector::from_column_slice(z);
            let w = 1.0 / (MM_EPS + (y - dot(z, &theta)).abs());
            lhs += &zv * zv.transpose() * w;
            rhs += zv * (w * y + 2.0 * q - 1.0);
        }
        let Some(next) = lhs.cholesky().map(|c| c.solve(&rhs)) else { break };
        let next: Vec<f64> = next.iter().copied().collect();
        let step = next.iter().zip(&theta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        theta = next;
        let obj = pinball_objective(features, targets, q, &theta);
        if obj < best.0 {
            best = (obj, theta.clone());
        }
        if step < 1e-12 {
            break;
        }
    }
    best.1
}

/// Order quantity from a quantile regression of observed demand on
/// `(1, features)` at level `1 / (1 + h)`.
pub fn erm_quantile(h: &History, perishable: bool) -> Result<f64> {
    let (inv, hold, x) = split_context(h.current_context().values(), perishable)?;
    if h.steps().is_empty() {
        return Ok(project_order(0.5 * ACTION_MAX, inv, perishable));
    }
    let mut feats = Vec::with_capacity(h.steps().len());
    let mut ys = Vec::with_capacity(h.steps().len());
    for s in h.steps() {
        let (_, _, z) = split_context(s.context.values(), perishable)?;
        let mut row = vec![1.0];
        row.extend_from_slice(z);
        feats.push(row);
        ys.push(*s.observation.values().get(1).ok_or_else(|| {
            Error::InvalidShape("newsvendor observations carry (reward, demand)".into())
        })?);
    }
    let q = 1.0 / (1.0 + hold);
    let theta = fit_quantile(&feats, &ys, q);
    let pred = theta[0] + dot(&theta[1..], x);
    Ok(project_order(pred, inv, perishable))
}

#[derive(Debug, Clone)]
pub struct Erm {
    pub perishable: bool,
}

impl Erm {
    pub fn new(perishable: bool) -> Self {
        Self { perishable }
    }
}

impl PolicyHandle for Erm {
    fn name(&self) -> &str {
        "ERM"
    }

    fn act(&mut self, h: &History, _rng: &mut RngStream) -> Result<Action> {
        Ok(Action::Scalar(erm_quantile(h, self.perishable)?))
    }

    fn reset(&mut self) {}
}

/// One FAI update: step down along `x` after an overage, up otherwise.
pub fn fai_update(w: &mut [f64], x: &[f64], observed: f64, ordered: f64, t: usize, hold: f64, lost: f64) {
    let rate = 1.0 / (t as f64).sqrt();
    let g = if observed < ordered { -hold } else { lost };
    for (wi, xi) in w.iter_mut().zip(x) {
        *wi += g * rate * xi;
    }
}

/// Replays the FAI weights over `h` from `w0` and returns the next order.
pub fn fai_order(w0: &[f64], h: &History, perishable: bool, lost: f64) -> Result<f64> {
    let mut w = w0.to_vec();
    for (j, s) in h.steps().iter().enumerate() {
        let (_, hold, x) = split_context(s.context.values(), perishable)?;
        let ordered = s
            .action
            .as_scalar()
            .ok_or_else(|| Error::InvalidAction(format!("{:?} is not an order", s.action)))?;
        let observed = *s.observation.values().get(1).ok_or_else(|| {
            Error::InvalidShape("newsvendor observations carry (reward, demand)".into())
        })?;
        fai_update(&mut w, x, observed, ordered, j + 2, hold, lost);
    }
    let (inv, _, x) = split_context(h.current_context().values(), perishable)?;
    Ok(project_order(dot(&w, x), inv, perishable))
}

#[derive(Debug, Clone)]
pub struct Fai {
    pub perishable: bool,
    pub lost_sale_cost: f64,
    w0: Option<Vec<f64>>,
}

impl Fai {
    pub fn new(perishable: bool, lost_sale_cost: f64) -> Self {
        Self {
            perishable,
            lost_sale_cost,
            w0: None,
        }
    }

    pub fn with_initial_weights(mut self, w0: Vec<f64>) -> Self {
        self.w0 = Some(w0);
        self
    }
}

impl PolicyHandle for Fai {
    fn name(&self) -> &str {
        "FAI"
    }

    fn act(&mut self, h: &History, rng: &mut RngStream) -> Result<Action> {
        let (_, _, x) = split_context(h.current_context().values(), self.perishable)?;
        if self.w0.as_ref().is_none_or(|w| w.len() != x.len()) {
            self.w0 = Some((0..x.len()).map(|_| rng.uniform()).collect());
        }
        let w0 = self.w0.as_deref().unwrap_or_default();
        Ok(Action::Scalar(fai_order(w0, h, self.perishable, self.lost_sale_cost)?))
    }

    fn reset(&mut self) {
        self.w0 = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Context, Observation};
    use proptest::prelude::*;

    /// Exact quantile regression on `(1, x)`: an optimum interpolates two
    /// points, so enumerate all pairs (plus horizontal lines through each
    /// point).
    fn exact_two_param(xs: &[f64], ys: &[f64], q: f64) -> f64 {
        let feats: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x]).collect();
        let mut best = f64::INFINITY;
        for i in 0..xs.len() {
            best = best.min(pinball_objective(&feats, ys, q, &[ys[i], 0.0]));
            for j in i + 1..xs.len() {
                if (xs[i] - xs[j]).abs() < 1e-12 {
                    continue;
                }
                let b = (ys[j] - ys[i]) / (xs[j] - xs[i]);
                best = best.min(pinball_objective(&feats, ys, q, &[ys[i] - b * xs[i], b]));
            }
        }
        best
    }

    #[test]
    fn constant_demand_is_reproduced() {
        let feats = vec![vec![1.0]; 8];
        let theta = fit_quantile(&feats, &[7.0; 8], 0.4);
        assert!((theta[0] - 7.0).abs() < 1e-9);
    }

    #[test]
    fn single_sample_passes_through_point() {
        let theta = fit_quantile(&[vec![1.0, 2.0]], &[5.0], 0.5);
        assert!((theta[0] + 2.0 * theta[1] - 5.0).abs() < 0.05);
    }

    #[test]
    fn subgradient_fit_matches_exact_lp_objective() {
        let mut rng = RngStream::new(77, 0);
        for case in 0..20 {
            let n = 5 + case % 16;
            let q = [0.5, 1.0 / 1.5, 1.0 / 3.0][case % 3];
            let xs: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 3.0)).collect();
            let ys: Vec<f64> = xs.iter().map(|x| 1.0 + 2.0 * x + rng.uniform_range(-2.0, 2.0)).collect();
            let feats: Vec<Vec<f64>> = xs.iter().map(|x| vec![1.0, *x]).collect();
            let theta = fit_quantile(&feats, &ys, q);
            let got = pinball_objective(&feats, &ys, q, &theta);
            let exact = exact_two_param(&xs, &ys, q);
            assert!(got >= exact - 1e-9);
            assert!(got - exact < 1e-6, "case {case}: {got} vs {exact}");
        }
    }

    #[test]
    fn erm_policy_uses_midpoint_without_data() {
        let h = History::new(Context(vec![1.0, 0.5, 0.5]));
        assert_eq!(erm_quantile(&h, true).unwrap(), 15.0);
        let h = History::new(Context(vec![4.0, 1.0, 0.5]));
        assert_eq!(erm_quantile(&h, false).unwrap(), 15.0);
        let h = History::new(Context(vec![20.0, 1.0, 0.5]));
        assert_eq!(erm_quantile(&h, false).unwrap(), 20.0);
    }

    #[test]
    fn fai_two_step_trace() {
        // h = 1, l = 1, w0 = (0.5), contexts (1, x)
        let mut h = History::new(Context(vec![1.0, 2.0]));
        let w0 = [0.5];
        let a1 = fai_order(&w0, &h, true, 1.0).unwrap();
        assert_eq!(a1, 1.0);
        // overage at t=1: w = 0.5 - 1/sqrt(2) * 2
        h.push(Action::Scalar(a1), Observation(vec![0.0, 0.4]), Context(vec![1.0, 1.0])).unwrap();
        let w1 = 0.5 - 2.0 / 2f64.sqrt();
        let a2 = fai_order(&w0, &h, true, 1.0).unwrap();
        assert_eq!(a2, w1.clamp(0.0, 30.0));
        // shortage (O = a) at t=2: w = w1 + 1/sqrt(3) * 1
        h.push(Action::Scalar(a2), Observation(vec![0.0, a2]), Context(vec![1.0, 3.0])).unwrap();
        let w2 = w1 + 1.0 / 3f64.sqrt();
        let a3 = fai_order(&w0, &h, true, 1.0).unwrap();
        assert!((a3 - (3.0 * w2).clamp(0.0, 30.0)).abs() < 1e-12);
    }

    #[test]
    fn fai_zero_context_keeps_weights() {
        let mut w = vec![0.3, 0.7];
        fai_update(&mut w, &[0.0, 0.0], 1.0, 2.0, 2, 1.0, 1.0);
        assert_eq!(w, vec![0.3, 0.7]);
        fai_update(&mut w, &[1.0, 1.0], 1.0, 2.0, 4, 1.0, 1.0);
        assert!(w[0] < 0.3 && w[1] < 0.7);
    }

    #[test]
    fn fai_reset_redraws_weights() {
        let h = History::new(Context(vec![1.0, 1.0, 1.0]));
        let mut p = Fai::new(true, 1.0);
        let mut rng = RngStream::new(3, 0);
        let a = p.act(&h, &mut rng).unwrap();
        assert_eq!(p.act(&h, &mut rng).unwrap(), a);
        p.reset();
        assert_ne!(p.act(&h, &mut rng).unwrap(), a);
    }

    proptest! {
        #[test]
        fn orders_stay_in_action_space(inv in 0.0f64..40.0, hold in 0.5f64..2.0, x in 0.0f64..3.0, d in 0.0f64..40.0) {
            let mut h = History::new(Context(vec![inv, hold, x]));
            h.push(Action::Scalar(inv + 1.0), Observation(vec![0.0, d]), Context(vec![inv, hold, x])).unwrap();
            let a = erm_quantile(&h, false).unwrap();
            prop_assert!(a >= inv && a <= inv + ACTION_MAX);
            let a = fai_order(&[0.5], &h, false, 1.0).unwrap();
            prop_assert!(a >= inv && a <= inv + ACTION_MAX);
        }
    }
}
