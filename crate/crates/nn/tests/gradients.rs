//! Analytic gradients against central finite differences (eps = 1e-6).

use coheq_nn::optim::mse_loss;
use coheq_nn::{build_model, BiLstm, Conv1d, EqArch, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn fill(t: &mut Tensor, rng: &mut ChaCha8Rng, scale: f64) {
    t.data = random_vec(rng, t.len(), scale);
}

/// Relative error with a floor of 1e-3 (gradients here are of order one),
/// so near-zero entries are not judged against the ~1e-10 rounding noise
/// of the difference quotient.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Largest relative error of `analytic` against central differences of
/// `loss_at(i, delta)`, the loss with element `i` shifted by `delta`.
fn check<F>(analytic: &[f64], n: usize, mut loss_at: F) -> f64
where
    F: FnMut(usize, f64) -> f64,
{
    assert_eq!(analytic.len(), n);
    (0..n)
        .map(|i| {
            let numeric = (loss_at(i, EPS) - loss_at(i, -EPS)) / (2.0 * EPS);
            rel_err(analytic[i], numeric)
        })
        .fold(0.0, f64::max)
}

fn conv_case(padding: Padding, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (batch, t, c_in, c_out, k) = (2, 8, 3, 2, 3);
    let mut conv = Conv1d::new(c_in, c_out, k, padding);
    fill(&mut conv.weight, &mut rng, 1.0);
    fill(&mut conv.bias, &mut rng, 1.0);
    let x = random_vec(&mut rng, batch * t * c_in, 1.0);
    let (y, cache) = conv.forward(&x, batch, t).unwrap();
    let r = random_vec(&mut rng, y.len(), 1.0);
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    let dx = conv.backward(&cache, &r, true).unwrap();

    let loss = |c: &Conv1d, x: &[f64]| dot(&c.forward(x, batch, t).unwrap().0, &r);
    let mut worst = 0.0_f64;
    let gw = conv.weight.grad().unwrap().to_vec();
    let mut probe = conv.clone();
    worst = worst.max(check(&gw, gw.len(), |i, d| {
        let keep = probe.weight.data[i];
        probe.weight.data[i] = keep + d;
        let l = loss(&probe, &x);
        probe.weight.data[i] = keep;
        l
    }));
    let gb = conv.bias.grad().unwrap().to_vec();
    worst = worst.max(check(&gb, gb.len(), |i, d| {
        let keep = probe.bias.data[i];
        probe.bias.data[i] = keep + d;
        let l = loss(&probe, &x);
        probe.bias.data[i] = keep;
        l
    }));
    let mut xp = x.clone();
    worst.max(check(&dx, dx.len(), |i, d| {
        xp[i] = x[i] + d;
        let l = loss(&conv, &xp);
        xp[i] = x[i];
        l
    }))
}

#[test]
fn conv1d_valid_gradients() {
    for seed in 0..4 {
        let e = conv_case(Padding::Valid, seed);
        assert!(e < 1e-6, "valid conv relative error {e:e}");
    }
}

#[test]
fn conv1d_same_gradients() {
    for seed in 10..14 {
        let e = conv_case(Padding::Same, seed);
        assert!(e < 1e-6, "same conv relative error {e:e}");
    }
}

fn pick(m: &mut BiLstm, dir: usize, which: usize) -> &mut Tensor {
    let d = &mut m.dirs[dir];
    match which {
        0 => &mut d.w,
        1 => &mut d.u,
        _ => &mut d.b,
    }
}

#[test]
fn bilstm_bptt_gradients() {
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (batch, t, c_in, h) = (2, 5, 2, 3);
        let mut lstm = BiLstm::new(c_in, h);
        for d in &mut lstm.dirs {
            fill(&mut d.w, &mut rng, 0.8);
            fill(&mut d.u, &mut rng, 0.8);
            fill(&mut d.b, &mut rng, 0.5);
        }
        let x = random_vec(&mut rng, batch * t * c_in, 1.0);
        let (y, cache) = lstm.forward(&x, batch, t).unwrap();
        let r = random_vec(&mut rng, y.len(), 1.0);
        for d in &mut lstm.dirs {
            d.w.zero_grad();
            d.u.zero_grad();
            d.b.zero_grad();
        }
        let dx = lstm.backward(&cache, &r, true).unwrap();
        let loss = |m: &BiLstm, x: &[f64]| dot(&m.forward(x, batch, t).unwrap().0, &r);

        let mut worst = 0.0_f64;
        for d in 0..2 {
            for which in 0..3 {
                let g = pick(&mut lstm, d, which).grad().unwrap().to_vec();
                let mut probe = lstm.clone();
                worst = worst.max(check(&g, g.len(), |i, e| {
                    let keep = pick(&mut probe, d, which).data[i];
                    pick(&mut probe, d, which).data[i] = keep + e;
                    let l = loss(&probe, &x);
                    pick(&mut probe, d, which).data[i] = keep;
                    l
                }));
            }
        }
        let mut xp = x.clone();
        worst = worst.max(check(&dx, dx.len(), |i, e| {
            xp[i] = x[i] + e;
            let l = loss(&lstm, &xp);
            xp[i] = x[i];
            l
        }));
        assert!(worst < 1e-5, "biLSTM relative error {worst:e}");
    }
}

#[test]
fn mse_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let target = random_vec(&mut rng, 61 * 2, 1.0);
    let pred = random_vec(&mut rng, 61 * 2, 1.0);
    let (_, g) = mse_loss(&pred, &target).unwrap();
    let mut p = pred.clone();
    let e = check(&g, g.len(), |i, d| {
        p[i] = pred[i] + d;
        let l = mse_loss(&p, &target).unwrap().0;
        p[i] = pred[i];
        l
    });
    assert!(e < 1e-6, "mse relative error {e:e}");
}

#[test]
fn whole_model_gradients() {
    let small = |arch: EqArch| EqArch {
        n_in_symbols: 9,
        n_out_symbols: 5,
        out_kernel: 5,
        n_hidden: 3,
        hidden_filters: [3, 2],
        hidden_kernel: 3,
        ..arch
    };
    for arch in [small(EqArch::bilstm()), small(EqArch::deep_cnn())] {
        let mut model = build_model(arch, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_vec(&mut rng, 2 * 9 * 4, 1.0);
        let target = random_vec(&mut rng, 2 * 5 * 2, 1.0);
        model.zero_grad();
        let (y, cache) = model.forward_train(&x, 2).unwrap();
        let (_, g) = mse_loss(&y, &target).unwrap();
        model.backward(&cache, &g).unwrap();
        let grads: Vec<Vec<f64>> = model.params().iter().map(|t| t.grad().unwrap().to_vec()).collect();
        let mut probe = model.clone();
        for (ti, ga) in grads.iter().enumerate() {
            let e = check(ga, ga.len(), |i, d| {
                let keep = probe.params()[ti].data[i];
                probe.params_mut()[ti].data[i] = keep + d;
                let l = mse_loss(&probe.forward(&x, 2).unwrap(), &target).unwrap().0;
                probe.params_mut()[ti].data[i] = keep;
                l
            });
            assert!(e < 1e-5, "{:?} tensor {ti}: relative error {e:e}", arch.kind);
        }
    }
}

#[test]
#[allow(clippy::excessive_precision)]
fn scalar_lstm_cell_matches_hand_trace() {
    let mut lstm = BiLstm::new(1, 1);
    let params = [
        ([0.5, -0.3, 0.8, 0.2], [0.1, 0.4, -0.6, 0.3], [0.0, 1.0, -0.1, 0.05]),
        ([-0.4, 0.6, 0.3, -0.7], [0.2, -0.5, 0.9, 0.1], [0.1, 0.9, 0.0, -0.2]),
    ];
    for (dir, (w, u, b)) in lstm.dirs.iter_mut().zip(params) {
        dir.w.data.copy_from_slice(&w);
        dir.u.data.copy_from_slice(&u);
        dir.b.data.copy_from_slice(&b);
    }
    let (y, _) = lstm.forward(&[0.7, -1.2], 1, 2).unwrap();
    // [h_fwd(0), h_bwd(0), h_fwd(1), h_bwd(1)], reference values to 20 digits
    let expect = [
        0.135_238_242_341_463_155_21,
        -0.046_250_333_130_565_054_801,
        -0.040_749_723_000_301_318_431,
        -0.142_580_406_303_655_164_47,
    ];
    for (a, e) in y.iter().zip(expect) {
        assert!((a - e).abs() < 1e-15, "{a} vs {e}");
    }
}
