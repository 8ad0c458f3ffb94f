//! Central finite-difference checks of full-model gradients in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subband_core::layers::{softmax_xent_batch, Mode};
use subband_core::model::{zoo, ArchitectureConfig, Model};
use subband_core::optim::gaussian_fill;
use subband_core::Tensor4;

const STEP: f64 = 1e-5;

fn loss(model: &Model<f64>, x: &Tensor4<f64>, labels: &[usize]) -> f64 {
    softmax_xent_batch(&model.forward(x).unwrap(), labels).unwrap().loss
}

fn scrambled(cfg: &ArchitectureConfig, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::build(cfg, seed).unwrap();
    for (i, p) in m.params_mut().into_iter().enumerate() {
        gaussian_fill(p, 0.4, seed + 1, i as u64);
    }
    m
}

/// Worst per-tensor relative error `|g - g_fd| / max(|g|, |g_fd|)` (L2 norms).
fn worst_relative_error(cfg: &ArchitectureConfig, seed: u64) -> (f64, String) {
    let model = scrambled(cfg, seed);
    let [h, w, c] = cfg.input_shape;
    let n = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::from_vec([n, h, w, c], (0..n * h * w * c).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
        .unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.classes)).collect();

    let (logits, tape) = model.forward_recorded(&x, Mode::Eval, &mut rng).unwrap();
    let bl = softmax_xent_batch(&logits, &labels).unwrap();
    let grads = model.backward(&tape, &bl.grad).unwrap();
    let names = model.param_names();
    assert_eq!(grads.tensors.len(), names.len());

    let mut worst = (0.0, String::new());
    for (pi, name) in names.iter().enumerate() {
        let len = model.params()[pi].len();
        let mut num = 0.0;
        let mut den_a = 0.0;
        let mut den_b = 0.0;
        for e in 0..len {
            let mut plus = model.clone();
            plus.params_mut()[pi].data_mut()[e] += STEP;
            let mut minus = model.clone();
            minus.params_mut()[pi].data_mut()[e] -= STEP;
            let fd = (loss(&plus, &x, &labels) - loss(&minus, &x, &labels)) / (2.0 * STEP);
            let an = grads.tensors[pi].data()[e];
            num += (an - fd).powi(2);
            den_a += an * an;
            den_b += fd * fd;
        }
        let rel = num.sqrt() / den_a.sqrt().max(den_b.sqrt()).max(1e-12);
        if rel > worst.0 {
            worst = (rel, name.clone());
        }
    }
    worst
}

#[test]
fn tiny_srcnn_gradients() {
    for seed in [1, 2] {
        let (rel, name) = worst_relative_error(&zoo::tiny_srcnn(), seed);
        assert!(rel <= 1e-4, "seed {seed}: {name} relative error {rel:e}");
    }
}

#[test]
fn tiny_tcnn_and_bcnn_gradients() {
    use subband_core::model::{Family, FcSpec, LayerSpec};
    let mut tcnn = zoo::tiny_srcnn();
    tcnn.family = Family::Tcnn;
    tcnn.subband_stack[0] = LayerSpec::Conv { c_in: 4, c_out: 2, kernel: 3 };
    tcnn.fc_stack[0] = FcSpec { d_in: 16, d_out: 8, dropout: 0.0 };
    let (rel, name) = worst_relative_error(&tcnn, 3);
    assert!(rel <= 1e-4, "tcnn {name}: {rel:e}");

    let mut bcnn = zoo::tiny_srcnn();
    bcnn.family = Family::Bcnn;
    bcnn.dwt_levels = 0;
    bcnn.fc_stack[0] = FcSpec { d_in: 64, d_out: 8, dropout: 0.0 };
    let (rel, name) = worst_relative_error(&bcnn, 4);
    assert!(rel <= 1e-4, "bcnn {name}: {rel:e}");
}
