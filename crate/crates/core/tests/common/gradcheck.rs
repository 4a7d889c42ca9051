//! Central finite differences against every analytic backward pass.
//!
//! Each case compares the whole gradient vector of one random
//! configuration: ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖).
//! The functions below return the worst error over `CONFIGS` draws.

use bimonn::bise::{Bise, BiseParams};
use bimonn::data::SamplePair;
use bimonn::grid::{Grid, KernelWindow};
use bimonn::loss::{dice_loss, mse_loss, LossKind, LossMask};
use bimonn::lui::{lui_backward, lui_forward, Bisel, BiselParams, LuiParams};
use bimonn::morpho::{MorphOp, StructuringElement};
use bimonn::net::{Bimonn, Layer, ParamRole};
use bimonn::train::batch_gradient;
use bimonn::BinaryImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
pub const CONFIGS: u64 = 20;

pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    assert_eq!(a.len(), n.len());
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn numeric(params: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + H;
            let up = f(&p);
            p[i] = orig - H;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Grid<f64> {
    Grid::from_fn(h, w, |_, _| rng.gen_range(0.0..1.0))
}

fn dot(a: &Grid<f64>, b: &Grid<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Weights, bias, scale and input of a single neuron.
pub fn bise() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=2);
        let (h, w) = (rng.gen_range(5..=9), rng.gen_range(5..=9));
        let x = random_grid(&mut rng, h, w);
        let g = Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0));
        let side = 2 * n + 1;
        let mut theta: Vec<f64> = (0..side * side).map(|_| rng.gen_range(-1.5..1.5)).collect();
        theta.push(rng.gen_range(-1.0..2.0));
        theta.push(rng.gen_range(0.5..3.0));

        let build = |v: &[f64]| {
            let k = v.len() - 2;
            Bise::new(BiseParams::new(KernelWindow::new(n, v[..k].to_vec()).unwrap(), v[k], v[k + 1]))
        };
        let neuron = build(&theta);
        let (_, cache) = neuron.forward(&x).unwrap();
        let grads = neuron.backward(&g, &cache, true).unwrap();
        let mut analytic = grads.w_raw.values().to_vec();
        analytic.push(grads.b_raw);
        analytic.push(grads.p);
        let num = numeric(&theta, |v| dot(&build(v).forward(&x).unwrap().0, &g));
        worst = worst.max(rel_err(&analytic, &num));

        let num_x = numeric(x.data(), |xv| {
            let xg = Grid::new(h, w, xv.to_vec()).unwrap();
            dot(&neuron.forward(&xg).unwrap().0, &g)
        });
        worst = worst.max(rel_err(grads.input.unwrap().data(), &num_x));
    }
    worst
}

/// Coefficients, bias, scale and channels of one LUI.
pub fn lui() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let c = rng.gen_range(1..=4);
        let (h, w) = (rng.gen_range(3..=6), rng.gen_range(3..=6));
        let xs: Vec<Grid<f64>> = (0..c).map(|_| random_grid(&mut rng, h, w)).collect();
        let g = Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0));
        let mut theta: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.5..1.5)).collect();
        theta.push(rng.gen_range(-1.0..1.5));
        theta.push(rng.gen_range(0.5..3.0));
        let build = |v: &[f64]| LuiParams::new(v[..c].to_vec(), v[c], v[c + 1]);

        let params = build(&theta);
        let (_, cache) = lui_forward(&xs, &params).unwrap();
        let grads = lui_backward(&g, &cache, &params).unwrap();
        let mut analytic = grads.beta_raw.clone();
        analytic.push(grads.b_raw);
        analytic.push(grads.p);
        let num = numeric(&theta, |v| dot(&lui_forward(&xs, &build(v)).unwrap().0, &g));
        worst = worst.max(rel_err(&analytic, &num));

        let flat: Vec<f64> = xs.iter().flat_map(|x| x.data().to_vec()).collect();
        let num_x = numeric(&flat, |v| {
            let chans: Vec<Grid<f64>> = v.chunks(h * w).map(|d| Grid::new(h, w, d.to_vec()).unwrap()).collect();
            dot(&lui_forward(&chans, &params).unwrap().0, &g)
        });
        let analytic_x: Vec<f64> = grads.channels.iter().flat_map(|x| x.data().to_vec()).collect();
        worst = worst.max(rel_err(&analytic_x, &num_x));
    }
    worst
}

/// Dice and MSE with respect to the prediction.
pub fn losses() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let (h, w) = (rng.gen_range(5..=10), rng.gen_range(5..=10));
        let target = BinaryImage::from_fn(h, w, |_, _| rng.gen_bool(0.4));
        let pred = Grid::from_fn(h, w, |_, _| rng.gen_range(0.01..0.99));
        let mask = LossMask::new(rng.gen_range(0..=1));
        for kind in [LossKind::Dice, LossKind::Mse] {
            let eval = |p: &Grid<f64>| match kind {
                LossKind::Dice => dice_loss(p, &target, &mask).unwrap(),
                LossKind::Mse => mse_loss(p, &target, &mask).unwrap(),
            };
            let (_, g) = eval(&pred);
            let num = numeric(pred.data(), |v| eval(&Grid::new(h, w, v.to_vec()).unwrap()).0);
            worst = worst.max(rel_err(g.data(), &num));
        }
    }
    worst
}

/// Every parameter of a BiSEL layer under a random linear objective.
pub fn bisel() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (h, w) = (6, 7);
        let xs: Vec<Grid<f64>> = (0..cin).map(|_| random_grid(&mut rng, h, w)).collect();
        let gs: Vec<Grid<f64>> = (0..cout)
            .map(|_| Grid::from_fn(h, w, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let bises = (0..cin * cout)
            .map(|_| {
                BiseParams::new(
                    KernelWindow::from_fn(1, |_, _| rng.gen_range(-1.5..1.5)),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..3.0),
                )
            })
            .collect();
        let luis = (0..cout)
            .map(|_| {
                LuiParams::new(
                    (0..cin).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..3.0),
                )
            })
            .collect();
        let layer = Bisel::new(BiselParams {
            in_channels: cin,
            out_channels: cout,
            bises,
            luis,
        })
        .unwrap();
        let net = Bimonn::new(vec![Layer::Bisel(layer)]).unwrap();
        let theta = net.parameters();
        let (_, cache) = net.forward(&xs).unwrap();
        let analytic = net.backward(&gs, &cache).unwrap();
        let mut probe = net.clone();
        let num = numeric(&theta, |v| {
            probe.set_parameters(v).unwrap();
            let (out, _) = probe.forward(&xs).unwrap();
            out.iter().zip(&gs).map(|(o, g)| dot(o, g)).sum::<f64>()
        });
        worst = worst.max(rel_err(&analytic, &num));
    }
    worst
}

/// Masked Dice loss of two stacked 3×3 neurons on a 9×9 pair.
pub fn two_layer_network() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..CONFIGS {
        let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
        let input = BinaryImage::from_fn(9, 9, |_, _| rng.gen_bool(0.5));
        let target = BinaryImage::from_fn(9, 9, |_, _| rng.gen_bool(0.5));
        let batch = [SamplePair {
            input,
            target,
            op: MorphOp::Opening,
            se: StructuringElement::full(1),
        }];
        let mut net = Bimonn::<f64>::chain(2, 1, 1.0).unwrap();
        let theta: Vec<f64> = net
            .roles()
            .iter()
            .map(|r| match r {
                // larger scales saturate both layers and push the gradient
                // below the roundoff of the difference quotient
                ParamRole::Scale => rng.gen_range(0.1..0.6),
                _ => rng.gen_range(-1.0..1.0),
            })
            .collect();
        net.set_parameters(&theta).unwrap();
        let (_, analytic) = batch_gradient(&net, &batch, LossKind::Dice).unwrap();
        let mut probe = net.clone();
        let num = numeric(&theta, |v| {
            probe.set_parameters(v).unwrap();
            batch_gradient(&probe, &batch, LossKind::Dice).unwrap().0
        });
        worst = worst.max(rel_err(&analytic, &num));
    }
    worst
}
