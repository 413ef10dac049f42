use proptest::prelude::*;
use rewe::diff::{grad_check, Graph, Primitive};
use rewe::selfcheck::{full_gradcheck, model_gradcheck, primitive_gradchecks, STEP, TOLERANCE};
use rewe::{LossKind, Tensor};

#[test]
fn every_primitive_over_twenty_instances() {
    for seed in [1, 2] {
        let lines = primitive_gradchecks(seed, 20).unwrap();
        assert_eq!(lines.len(), Primitive::ALL.len());
        for l in &lines {
            assert!(l.passed, "{} failed with {}", l.name, l.max_rel_error);
            assert!(l.coordinates >= 20);
        }
    }
}

#[test]
fn full_objective_under_every_loss() {
    for kind in [LossKind::None, LossKind::Mse, LossKind::Cel, LossKind::ContrastiveA] {
        for lambda in [0.0, 1.0, 20.0] {
            let line = model_gradcheck(5, kind, lambda).unwrap();
            assert!(line.passed, "{kind} lambda {lambda}: {}", line.max_rel_error);
        }
    }
}

#[test]
fn report_aggregates() {
    let r = full_gradcheck(3, 2).unwrap();
    assert!(r.passed);
    assert_eq!(r.lines.len(), Primitive::ALL.len() + 2);
    assert!(r.max_rel_error < TOLERANCE);
}

#[test]
fn names_round_trip() {
    for p in Primitive::ALL {
        assert_eq!(p.name().parse::<Primitive>().unwrap(), p);
    }
    assert!("conv2d".parse::<Primitive>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tanh_composite_matches_differences(xs in prop::collection::vec(-2.0f64..2.0, 1..8)) {
        let n = xs.len();
        let t = Tensor::new(vec![1, n], xs);
        let r = grad_check(
            |g: &mut Graph, x| {
                let y = g.tanh(x)?;
                let z = g.mul(y, x)?;
                let s = g.softmax_rows(z)?;
                let l = g.log(s, 1e-12)?;
                g.sum(l)
            },
            &t,
            STEP,
            TOLERANCE,
        )
        .unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error);
    }

    #[test]
    fn backward_twice_gives_same_gradient(xs in prop::collection::vec(-2.0f64..2.0, 4)) {
        let mut g = Graph::new(0);
        let a = g.param(Tensor::new(vec![2, 2], xs));
        let b = g.matmul(a, a).unwrap();
        let c = g.sigmoid(b).unwrap();
        let s = g.mean(c).unwrap();
        g.backward(s).unwrap();
        let first = g.grad(a).to_vec();
        g.backward(s).unwrap();
        prop_assert_eq!(first, g.grad(a).to_vec());
    }
}
