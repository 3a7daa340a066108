//! Minimal dense autodiff: tensors, a reverse-mode tape, AdamW and a binary
//! checkpoint format.

mod checkpoint;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, TensorEntry};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::Result;

/// Worst disagreement between analytic and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub failures: usize,
    pub max_abs_err: f64,
    pub worst: Option<String>,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compare the gradients of `loss_fn` against central differences with step
/// `h`, for every scalar of every parameter (or at most `max_per_param`
/// evenly spaced scalars per parameter). An entry passes when
/// `|analytic - numeric| <= max(abs_tol, rel_tol * max(|analytic|, |numeric|))`.
pub fn check_gradients<F>(
    store: &ParamStore,
    loss_fn: F,
    h: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_per_param: Option<usize>,
) -> Result<GradCheck>
where
    F: Fn(&ParamStore) -> Result<(Graph, Var)>,
{
    let (g, loss) = loss_fn(store)?;
    let analytic = g.backward(loss, store)?;
    let mut probe = store.clone();
    let mut report = GradCheck {
        checked: 0,
        failures: 0,
        max_abs_err: 0.0,
        worst: None,
    };
    let ids: Vec<_> = store.iter().map(|(id, p)| (id, p.name.clone(), p.value.numel())).collect();
    for (id, name, n) in ids {
        let stride = match max_per_param {
            Some(k) if k > 0 && n > k => n.div_ceil(k),
            _ => 1,
        };
        for i in (0..n).step_by(stride) {
            let orig = probe.value(id).data[i];
            probe.value_mut(id).data[i] = orig + h;
            let (gp, lp) = loss_fn(&probe)?;
            probe.value_mut(id).data[i] = orig - h;
            let (gm, lm) = loss_fn(&probe)?;
            probe.value_mut(id).data[i] = orig;
            let numeric = (gp.value(lp).data[0] - gm.value(lm).data[0]) / (2.0 * h);
            let a = analytic.get(id)[i];
            let err = (a - numeric).abs();
            let tol = abs_tol.max(rel_tol * a.abs().max(numeric.abs()));
            report.checked += 1;
            if err > report.max_abs_err {
                report.max_abs_err = err;
            }
            if !(err <= tol) {
                report.failures += 1;
                report.worst = Some(format!("{name}[{i}]: analytic {a}, numeric {numeric}"));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    const H: f64 = 1e-4;

    fn store_with(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParamStore {
        let mut rng = RngStream::new(seed, 0);
        let mut s = ParamStore::new();
        for (name, shape) in shapes {
            s.add_normal(name, shape.clone(), 1.0, &mut rng).unwrap();
        }
        s
    }

    fn assert_grads<F>(store: &ParamStore, f: F)
    where
        F: Fn(&ParamStore) -> Result<(Graph, Var)>,
    {
        let r = check_gradients(store, f, H, 1e-6, 1e-3, None).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    /// Weighted sum so that every output entry gets a distinct upstream
    /// gradient.
    fn probe_loss(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
        let t = g.value(y).clone();
        let mut rng = RngStream::new(seed, 99);
        let w = Tensor::new(t.shape.clone(), (0..t.numel()).map(|_| rng.normal(0.0, 1.0)).collect())?;
        let w = g.input(w);
        let p = g.mul(y, w)?;
        Ok(g.sum(p))
    }

    #[test]
    fn elementwise_and_matrix_ops() {
        for seed in 0..5 {
            let s = store_with(&[("a", vec![3, 4]), ("b", vec![4, 2]), ("c", vec![3, 4]), ("r", vec![4])], seed);
            assert_grads(&s, |s| {
                let mut g = Graph::new();
                let (a, b, c, r) = (
                    g.param(s, s.id("a")?),
                    g.param(s, s.id("b")?),
                    g.param(s, s.id("c")?),
                    g.param(s, s.id("r")?),
                );
                let x = g.add(a, c)?;
                let x = g.mul(x, a)?;
                let x = g.add_row(x, r)?;
                let x = g.scale(x, 0.7);
                let y = g.matmul(x, b)?;
                let yt = g.transpose(y);
                let z = g.matmul_nt(c, a)?;
                let l1 = probe_loss(&mut g, yt, seed)?;
                let l2 = probe_loss(&mut g, z, seed + 1)?;
                let l = g.add(l1, l2)?;
                Ok((g, l))
            });
        }
    }

    #[test]
    fn structural_ops() {
        for seed in 0..5 {
            let s = store_with(&[("a", vec![4, 3]), ("b", vec![4, 2]), ("c", vec![2, 3])], seed);
            assert_grads(&s, |s| {
                let mut g = Graph::new();
                let (a, b, c) = (g.param(s, s.id("a")?), g.param(s, s.id("b")?), g.param(s, s.id("c")?));
                let ab = g.concat_cols(&[a, b])?;
                let ac = g.concat_rows(&[a, c])?;
                let sc = g.slice_cols(ab, 1, 4)?;
                let sr = g.slice_rows(ac, 2, 6)?;
                let gr = g.gather_rows(sr, &[3, 0, 3, 1])?;
                let l1 = probe_loss(&mut g, sc, seed)?;
                let l2 = probe_loss(&mut g, gr, seed + 7)?;
                let m = g.mean(ab);
                let l = g.add(l1, l2)?;
                let l = g.add(l, m)?;
                Ok((g, l))
            });
        }
    }

    #[test]
    fn nonlinear_ops() {
        for seed in 0..5 {
            let s = store_with(&[("x", vec![5, 5]), ("gain", vec![5]), ("bias", vec![5])], seed);
            for causal in [false, true] {
                assert_grads(&s, |s| {
                    let mut g = Graph::new();
                    let (x, gain, bias) = (g.param(s, s.id("x")?), g.param(s, s.id("gain")?), g.param(s, s.id("bias")?));
                    let sm = g.softmax_rows(x, causal);
                    let ge = g.gelu(x);
                    let ln = g.layer_norm(x, gain, bias)?;
                    let l1 = probe_loss(&mut g, sm, seed)?;
                    let l2 = probe_loss(&mut g, ge, seed + 1)?;
                    let l3 = probe_loss(&mut g, ln, seed + 2)?;
                    let l = g.add(l1, l2)?;
                    let l = g.add(l, l3)?;
                    Ok((g, l))
                });
            }
        }
    }

    #[test]
    fn loss_ops() {
        for seed in 0..5 {
            let s = store_with(&[("z", vec![3, 4])], seed);
            assert_grads(&s, |s| {
                let mut g = Graph::new();
                let z = g.param(s, s.id("z")?);
                let ce = g.cross_entropy(z, &[0, 3, 2])?;
                let se = g.squared_error(z, &[0.5; 12])?;
                let l = g.add(ce, se)?;
                Ok((g, l))
            });
            // absolute error away from its kinks
            assert_grads(&s, |s| {
                let mut g = Graph::new();
                let z = g.param(s, s.id("z")?);
                let ae = g.absolute_error(z, &[10.0; 12])?;
                Ok((g, ae))
            });
        }
    }

    #[test]
    fn dropout_with_fixed_mask() {
        let s = store_with(&[("x", vec![6, 6])], 3);
        assert_grads(&s, |s| {
            let mut g = Graph::new();
            let x = g.param(s, s.id("x")?);
            let mut rng = RngStream::new(5, 5);
            let d = g.dropout(x, 0.3, &mut rng)?;
            let l = probe_loss(&mut g, d, 1)?;
            Ok((g, l))
        });
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 20000], vec![1.0; 20000]).unwrap());
        let mut rng = RngStream::new(1, 1);
        let d = g.dropout(x, 0.25, &mut rng).unwrap();
        let vals = &g.value(d).data;
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - 1.0).abs() < 0.03);
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
        assert_eq!(g.dropout(x, 0.0, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn causal_softmax_masks_the_future() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 3], vec![1.0, 50.0, 9.0, 2.0, 3.0, 1e3, 0.0, 0.0, 0.0]).unwrap());
        let y = g.softmax_rows(x, true);
        let v = &g.value(y).data;
        assert_eq!(&v[..3], &[1.0, 0.0, 0.0]);
        assert_eq!(v[5], 0.0);
        assert!((v[3] + v[4] - 1.0).abs() < 1e-15);
        assert!((v[6] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 3], vec![1e308, 1e308, -1e308]).unwrap());
        let y = g.softmax_rows(x, false);
        assert_eq!(g.value(y).data, vec![0.5, 0.5, 0.0]);
        let ce = g.cross_entropy(x, &[0]).unwrap();
        assert!((g.value(ce).data[0] - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 10.0]).unwrap());
        let one = g.input(Tensor::new(vec![4], vec![1.0; 4]).unwrap());
        let zero = g.input(Tensor::zeros(vec![4]));
        let y = g.layer_norm(x, one, zero).unwrap();
        let v = &g.value(y).data;
        let mean: f64 = v.iter().sum::<f64>() / 4.0;
        let var: f64 = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn gelu_reference_values() {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3], vec![0.0, 1.0, -1.0]).unwrap());
        let y = g.gelu(x);
        let v = &g.value(y).data;
        assert_eq!(v[0], 0.0);
        // tanh form evaluated independently
        let r = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * 1.044715f64).tanh());
        assert!((v[1] - r).abs() < 1e-15);
        assert!((v[2] + (1.0 - r)).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let s = store_with(&[("x", vec![2, 2])], 0);
        let mut g = Graph::new();
        let x = g.param(&s, s.id("x").unwrap());
        match g.backward(x, &s) {
            Err(Error::InvalidLoss(shape)) => assert_eq!(shape, vec![2, 2]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shape_mismatches_are_reported() {
        let mut g = Graph::new();
        let a = g.input(Tensor::zeros(vec![2, 3]));
        let b = g.input(Tensor::zeros(vec![2, 3]));
        assert!(g.matmul(a, b).is_err());
        let c = g.input(Tensor::zeros(vec![3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.slice_cols(a, 1, 4).is_err());
        assert!(g.gather_rows(a, &[2]).is_err());
        assert!(g.cross_entropy(a, &[0]).is_err());
    }

    #[test]
    fn gradients_accumulate_across_backward_calls() {
        let s = store_with(&[("x", vec![3])], 1);
        let mut g = Graph::new();
        let x = g.param(&s, s.id("x").unwrap());
        let l = g.sum(x);
        let mut acc = g.backward(l, &s).unwrap();
        g.backward_into(l, &mut acc).unwrap();
        assert_eq!(acc.get(s.id("x").unwrap()), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn decay_only_step_shrinks_weights() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![2], vec![2.0, -4.0]).unwrap(), false).unwrap();
        let b = s.add("b", Tensor::new(vec![1], vec![3.0]).unwrap(), true).unwrap();
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamWConfig::default()
        };
        let mut st = AdamWState::new(&s);
        let zero = Gradients::zeros(&s);
        adamw_step(&mut s, &zero, &mut st, &cfg).unwrap();
        assert_eq!(s.value(w).data, vec![2.0 * 0.95, -4.0 * 0.95]);
        assert_eq!(s.value(b).data, vec![3.0]);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap(), false).unwrap();
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut grads = Gradients::zeros(&s);
        grads.accumulate(w, &[3.0, -0.5]);
        let mut st = AdamWState::new(&s);
        adamw_step(&mut s, &grads, &mut st, &cfg).unwrap();
        let v = &s.value(w).data;
        assert!((v[0] - 0.99).abs() < 1e-8);
        assert!((v[1] - 1.01).abs() < 1e-8);
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(vals in proptest::collection::vec(-30.0f64..30.0, 16)) {
            let mut g = Graph::new();
            let x = g.input(Tensor::new(vec![4, 4], vals).unwrap());
            for causal in [false, true] {
                let y = g.softmax_rows(x, causal);
                let t = g.value(y).clone();
                for i in 0..4 {
                    let s: f64 = t.row(i).iter().sum();
                    prop_assert!((s - 1.0).abs() < 1e-12);
                    prop_assert!(t.row(i).iter().all(|p| (0.0..=1.0).contains(p)));
                }
            }
        }

        #[test]
        fn matmul_matches_naive(a in proptest::collection::vec(-5.0f64..5.0, 6), b in proptest::collection::vec(-5.0f64..5.0, 6)) {
            let mut g = Graph::new();
            let va = g.input(Tensor::new(vec![2, 3], a.clone()).unwrap());
            let vb = g.input(Tensor::new(vec![3, 2], b.clone()).unwrap());
            let c = g.matmul(va, vb).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let want: f64 = (0..3).map(|k| a[i * 3 + k] * b[k * 2 + j]).sum();
                    prop_assert!((g.value(c).get(i, j) - want).abs() < 1e-12);
                }
            }
        }
    }
}
