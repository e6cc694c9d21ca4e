use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdsnn_core::losses::{
    ce_loss, compute_all, ensemble_logits, kl_soft_loss, kl_soft_on, one_hot, scaled_entropy, softmax, EnsembleTarget,
    LossGraph,
};
use tdsnn_core::{LossMode, LossWeights, Tape, Tensor};

fn t(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

fn fixture() -> (Vec<Tensor>, Tensor, Tensor) {
    let zs = vec![
        t(&[&[1.0, 2.0, 0.5], &[-1.0, 0.0, 2.0]]),
        t(&[&[0.3, -0.2, 1.1], &[2.0, 1.0, -1.0]]),
        t(&[&[0.0, 0.0, 0.0], &[0.5, 0.5, 3.0]]),
    ];
    let teacher = t(&[&[2.0, 1.0, 0.0], &[0.0, -1.0, 1.5]]);
    (zs, teacher, one_hot(&[1, 2], 3).unwrap())
}

// Plain-loop reference, independent of the tape.
mod reference {
    pub fn log_softmax(z: &[f64]) -> Vec<f64> {
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        z.iter().map(|v| v - lse).collect()
    }

    pub fn ce(z: &[Vec<f64>], labels: &[usize]) -> f64 {
        z.iter().zip(labels).map(|(r, &y)| -log_softmax(r)[y]).sum::<f64>() / z.len() as f64
    }

    pub fn kl(s: &[Vec<f64>], t: &[Vec<f64>], tau: f64) -> f64 {
        let mut total = 0.0;
        for (sr, tr) in s.iter().zip(t) {
            let ls: Vec<f64> = log_softmax(&sr.iter().map(|v| v / tau).collect::<Vec<_>>());
            let lt: Vec<f64> = log_softmax(&tr.iter().map(|v| v / tau).collect::<Vec<_>>());
            total -= tau * tau * lt.iter().zip(&ls).map(|(a, b)| a.exp() * b).sum::<f64>();
        }
        total / s.len() as f64
    }

    pub fn mean(zs: &[Vec<Vec<f64>>], k: usize) -> Vec<Vec<f64>> {
        let (b, n) = (zs[0].len(), zs[0][0].len());
        let mut out = vec![vec![0.0; n]; b];
        for z in &zs[..k] {
            for i in 0..b {
                for j in 0..n {
                    out[i][j] += z[i][j];
                }
            }
        }
        out.iter().map(|r| r.iter().map(|v| v / k as f64).collect()).collect()
    }
}

fn rows(x: &Tensor) -> Vec<Vec<f64>> {
    (0..x.rows()).map(|i| x.row(i).to_vec()).collect()
}

#[test]
fn softmax_oracle_and_edge_cases() {
    let p = softmax(&t(&[&[1.0, 2.0, 3.0]]));
    let oracle = [0.09003057317038043, 0.24472847105479764, 0.6652409557748218];
    for (a, b) in p.data().iter().zip(oracle) {
        assert!((a - b).abs() < 1e-15);
    }
    assert_eq!(softmax(&t(&[&[0.0; 4]])).data(), &[0.25; 4]);
    assert_eq!(softmax(&t(&[&[1000.0, 1000.0]])).data(), &[0.5, 0.5]);
}

#[test]
fn ensemble_examples() {
    let e = ensemble_logits(&[t(&[&[1.0, 3.0]]), t(&[&[3.0, 1.0]])], None).unwrap();
    assert_eq!(e.data(), &[2.0, 2.0]);
    let z1 = t(&[&[0.7, -0.1]]);
    assert_eq!(ensemble_logits(&[z1.clone(), t(&[&[5.0, 5.0]])], Some(1)).unwrap(), z1);
    assert!(ensemble_logits(&[z1.clone()], Some(2)).is_err());
    assert!(ensemble_logits(&[z1], Some(0)).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let zs: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[3, 5], 5.0, &mut rng)).collect();
    let expect = reference::mean(&zs.iter().map(rows).collect::<Vec<_>>(), 3);
    let got = ensemble_logits(&zs, Some(3)).unwrap();
    for (g, e) in rows(&got).iter().flatten().zip(expect.iter().flatten()) {
        assert!((g - e).abs() < 1e-14);
    }
}

#[test]
fn ce_examples() {
    let y = one_hot(&[0], 2).unwrap();
    assert!((ce_loss(&t(&[&[0.3, 0.3]]), &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(ce_loss(&t(&[&[40.0, 0.0]]), &y).unwrap() < 1e-6);
    let bad = t(&[&[0.5, 0.5]]);
    assert!(ce_loss(&t(&[&[0.0, 0.0]]), &bad).is_err());
}

#[test]
fn kl_examples() {
    let z = t(&[&[0.0, 0.0]]);
    assert!((kl_soft_loss(&z, &z, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((kl_soft_loss(&z, &z, 2.0).unwrap() - 2.772588722239781).abs() < 1e-12);
    assert!(kl_soft_loss(&z, &z, 0.0).is_err());
}

#[test]
fn compute_all_matches_oracle_values() {
    let (zs, teacher, y) = fixture();
    let b = compute_all(&zs, &teacher, &y, &LossWeights::default()).unwrap();
    // From a NumPy script evaluating each formula directly.
    let oracle = [
        ("sce", 0.8243373251103079),
        ("skl", 17.442148635680496),
        ("skd", 4.312767052246407),
        ("twce", 1.1795422058512817),
        ("twkl", 17.83707217394616),
        ("twsd", 17.93133641067011),
        ("twkd", 4.746956640640514),
        ("final", 13.712624845975569),
    ];
    for ((name, got), (oname, want)) in b.named().iter().zip(oracle) {
        assert_eq!(*name, oname);
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{name}: {got} vs {want}");
    }
}

#[test]
fn single_timestep_collapses() {
    let (zs, teacher, y) = fixture();
    let w = LossWeights { alpha: 0.2, beta: 0.0, tau: 4.0 };
    let b = compute_all(&zs[..1], &teacher, &y, &w).unwrap();
    assert_eq!(b.twce, b.sce);
    assert_eq!(b.twkl, b.skl);
    assert!((b.twsd - scaled_entropy(&zs[0], 4.0)).abs() < 1e-12);
    assert!((b.final_loss - b.skd).abs() < 1e-12);
}

#[test]
fn teacher_side_gets_no_gradient() {
    let mut tape = Tape::new();
    let s = tape.param(t(&[&[0.2, -0.3, 1.0]]));
    let teacher = tape.param(t(&[&[1.0, 0.0, -1.0]]));
    let l = kl_soft_on(&mut tape, s, teacher, 4.0).unwrap();
    let g = tape.backward(l).unwrap();
    assert!(g.get(teacher).is_none_or(|g| g.data().iter().all(|&v| v == 0.0)));
    assert!(g.get(s).unwrap().max_abs() > 0.0);
}

fn objective_grads(w: &LossWeights, mode: LossMode) -> Vec<Tensor> {
    let (zs, teacher, y) = fixture();
    let mut tape = Tape::new();
    let vars: Vec<_> = zs.into_iter().map(|z| tape.param(z)).collect();
    let g = LossGraph::build(&mut tape, &vars, &teacher, &y, w, EnsembleTarget::Detached).unwrap();
    let root = g.objective(&mut tape, mode, w).unwrap();
    let grads = tape.backward(root).unwrap();
    vars.iter().map(|&v| grads.wrt(v, tape.value(v))).collect()
}

#[test]
fn twce_only_ignores_distillation_weights() {
    let base = objective_grads(&LossWeights::default(), LossMode::TwceOnly);
    let heavy = objective_grads(&LossWeights { alpha: 999.0, beta: 999.0, tau: 4.0 }, LossMode::TwceOnly);
    assert_eq!(base, heavy);
}

#[test]
fn detached_and_tracked_targets_differ_only_in_gradient() {
    let (zs, teacher, y) = fixture();
    let w = LossWeights::default();
    let mut values = Vec::new();
    let mut grads = Vec::new();
    for target in [EnsembleTarget::Detached, EnsembleTarget::Tracked] {
        let mut tape = Tape::new();
        let vars: Vec<_> = zs.iter().map(|z| tape.param(z.clone())).collect();
        let g = LossGraph::build(&mut tape, &vars, &teacher, &y, &w, target).unwrap();
        let root = g.objective(&mut tape, LossMode::TwceTwsd, &w).unwrap();
        values.push(tape.value(root).data()[0]);
        grads.push(tape.backward(root).unwrap().wrt(vars[0], &zs[0]));
    }
    assert!((values[0] - values[1]).abs() < 1e-12);
    assert_ne!(grads[0], grads[1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compute_all_matches_loop_reference(seed in 0u64..10_000, tau in 0.5f64..6.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (b, n, steps) = (rng.random_range(1..4), rng.random_range(2..7), 4);
        let zs: Vec<Tensor> = (0..steps).map(|_| Tensor::uniform(&[b, n], 5.0, &mut rng)).collect();
        let teacher = Tensor::uniform(&[b, n], 5.0, &mut rng);
        let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..n)).collect();
        let w = LossWeights { alpha: 0.2, beta: 0.5, tau };
        let got = compute_all(&zs, &teacher, &one_hot(&labels, n).unwrap(), &w).unwrap();

        let zr: Vec<_> = zs.iter().map(rows).collect();
        let tr = rows(&teacher);
        let ens = reference::mean(&zr, steps);
        let avg = |f: &dyn Fn(&Vec<Vec<f64>>) -> f64| zr.iter().map(f).sum::<f64>() / steps as f64;
        let sce = reference::ce(&ens, &labels);
        let skl = reference::kl(&ens, &tr, tau);
        let twce = avg(&|z| reference::ce(z, &labels));
        let twkl = avg(&|z| reference::kl(z, &tr, tau));
        let twsd = avg(&|z| reference::kl(z, &ens, tau));
        let want = [sce, skl, sce + 0.2 * skl, twce, twkl, twsd, twce + 0.2 * twkl, twce + 0.2 * twkl + 0.5 * twsd];
        for ((name, g), w) in got.named().iter().zip(want) {
            prop_assert!((g - w).abs() < 1e-10 * w.abs().max(1.0), "{}: {} vs {}", name, g, w);
        }
        prop_assert!((got.skd - (got.sce + 0.2 * got.skl)).abs() < 1e-12);
        prop_assert!((got.twkd - (got.twce + 0.2 * got.twkl)).abs() < 1e-12);
        prop_assert!((got.final_loss - (got.twce + 0.2 * got.twkl + 0.5 * got.twsd)).abs() < 1e-12);
        prop_assert!(got.twsd >= 0.0);
    }

    #[test]
    fn self_kl_is_scaled_entropy(z in prop::collection::vec(-8.0f64..8.0, 2..9), tau in 0.5f64..6.0) {
        let z = Tensor::new(&[1, z.len()], z).unwrap();
        let kl = kl_soft_loss(&z, &z, tau).unwrap();
        prop_assert!((kl - scaled_entropy(&z, tau)).abs() < 1e-10);
    }
}
