use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tdsnn_core::losses::{one_hot, EnsembleTarget, LossGraph};
use tdsnn_core::snn::{surrogate_heaviside, LifState};
use tdsnn_core::{LifConfig, LossMode, LossWeights, Parameterized, SnnNetwork, Tape, Tensor};

fn fixed_net() -> SnnNetwork {
    let mut net = SnnNetwork::zeros(&[2, 4, 3], LifConfig::default()).unwrap();
    net.hidden[0].weight = Tensor::new(&[2, 4], vec![0.9, -0.4, 1.3, 0.2, 0.5, 0.8, -0.7, 1.1]).unwrap();
    net.hidden[0].bias = Tensor::new(&[4], vec![0.1, 0.2, 0.0, -0.1]).unwrap();
    net.readout.weight = Tensor::new(
        &[4, 3],
        vec![0.5, -1.0, 0.3, 0.2, 0.4, -0.6, -0.3, 0.7, 0.9, 1.2, 0.1, -0.2],
    )
    .unwrap();
    net.readout.bias = Tensor::new(&[3], vec![0.05, -0.05, 0.0]).unwrap();
    net
}

#[test]
fn tiny_network_matches_scripted_recurrence() {
    let x = Tensor::new(&[2, 2], vec![1.0, 0.5, -0.8, 1.5]).unwrap();
    let trace = fixed_net().forward_unroll(&x, 4).unwrap();
    // Step-by-step NumPy recurrence of the same network.
    let oracle: [[f64; 6]; 4] = [
        [0.55, -1.05, 0.3, 1.45, 0.45, -0.8],
        [0.25, -0.35000000000000003, 1.2, 1.45, 0.45, -0.8],
        [1.75, -0.9500000000000001, 0.09999999999999998, 1.45, 0.45, -0.8],
        [0.25, -0.35000000000000003, 1.2, 1.45, 0.45, -0.8],
    ];
    for (z, want) in trace.logits.iter().zip(oracle) {
        for (a, b) in z.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn surrogate_examples() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(&[3], vec![-0.3, 0.0, 0.5]).unwrap());
    let s = surrogate_heaviside(&mut tape, x, 4.0);
    assert_eq!(tape.value(s).data(), &[0.0, 1.0, 1.0]);
    let root = tape.sum(s);
    let g = tape.backward(root).unwrap();
    let d = g.get(x).unwrap().data();
    assert!((d[1] - 1.0).abs() < 1e-15);
    // 4·σ'(2) from a scalar reference evaluation.
    assert!((d[2] - 0.41997434161402647).abs() < 1e-15);
}

#[test]
fn lif_constant_input_sequence() {
    let cfg = LifConfig::default();
    let input = Tensor::full(&[1], 0.6);
    let mut st = LifState::zeros(&[1]);
    let mut seen = Vec::new();
    for _ in 0..4 {
        st = st.step(&input, &cfg).unwrap();
        seen.push((st.v.data()[0], st.s.data()[0]));
    }
    let want = [(0.6, 0.0), (0.9, 0.0), (1.05, 1.0), (0.6, 0.0)];
    for ((v, s), (wv, ws)) in seen.iter().zip(want) {
        assert!((v - wv).abs() < 1e-12);
        assert_eq!(*s, ws);
    }
}

#[test]
fn single_step_equals_stateless_pass() {
    let net = fixed_net();
    let x = Tensor::new(&[1, 2], vec![0.4, -0.2]).unwrap();
    let z = &net.forward_unroll(&x, 1).unwrap().logits[0];
    let current = x.matmul(&net.hidden[0].weight).unwrap().add_row(&net.hidden[0].bias).unwrap();
    let spikes = current.map(|v| if v >= 1.0 { 1.0 } else { 0.0 });
    let want = spikes.matmul(&net.readout.weight).unwrap().add_row(&net.readout.bias).unwrap();
    assert_eq!(z, &want);
}

#[test]
fn unroll_rejects_zero_timesteps() {
    let x = Tensor::zeros(&[1, 2]);
    assert!(fixed_net().forward_unroll(&x, 0).is_err());
    assert!(fixed_net().forward_unroll(&Tensor::zeros(&[1, 3]), 2).is_err());
}

#[test]
fn first_layer_receives_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = SnnNetwork::new(&[2, 16, 16, 3], LifConfig::default(), &mut rng).unwrap();
    let x = Tensor::uniform(&[8, 2], 2.0, &mut rng);
    let y = one_hot(&[0, 1, 2, 0, 1, 2, 0, 1], 3).unwrap();
    let teacher = Tensor::uniform(&[8, 3], 2.0, &mut rng);
    let w = LossWeights::default();
    let mut tape = Tape::new();
    let params = net.bind(&mut tape);
    let xv = tape.constant(x);
    let u = net.unroll(&mut tape, &params, xv, 2).unwrap();
    let g = LossGraph::build(&mut tape, &u.logits, &teacher, &y, &w, EnsembleTarget::Detached).unwrap();
    let root = g.objective(&mut tape, LossMode::TemporalKdFull, &w).unwrap();
    let grads = tape.backward(root).unwrap();
    assert!(grads.wrt(params[0], tape.value(params[0])).max_abs() > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn spikes_are_binary_and_calls_repeatable(seed in 0u64..5000, steps in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SnnNetwork::new(&[3, 8, 5, 4], LifConfig::default(), &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 3], 3.0, &mut rng);
        let a = net.forward_unroll(&x, steps).unwrap();
        let b = net.forward_unroll(&x, steps).unwrap();
        prop_assert_eq!(&a.logits, &b.logits);
        for layer in a.spikes.iter().flatten() {
            prop_assert!(layer.data().iter().all(|&s| s == 0.0 || s == 1.0));
        }
    }

    #[test]
    fn membrane_stays_bounded(inputs in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let cfg = LifConfig::default();
        let bound = 3.0 / (1.0 - cfg.decay);
        let mut st = LifState::zeros(&[1]);
        for i in inputs {
            st = st.step(&Tensor::full(&[1], i), &cfg).unwrap();
            prop_assert!(st.v.data()[0].abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn zero_weights_emit_the_bias(bias in prop::collection::vec(-2.0f64..2.0, 3), steps in 1usize..5) {
        let mut net = SnnNetwork::zeros(&[2, 4, 3], LifConfig::default()).unwrap();
        net.readout.bias = Tensor::new(&[3], bias).unwrap();
        let x = Tensor::full(&[2, 2], 0.7);
        for z in net.forward_unroll(&x, steps).unwrap().logits {
            prop_assert_eq!(z.row(0), net.readout.bias.data());
            prop_assert_eq!(z.row(1), net.readout.bias.data());
        }
    }
}
