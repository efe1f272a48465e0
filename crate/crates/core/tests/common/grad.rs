//! Central finite-difference checks of every hand-written backward pass, run in f64 on
//! miniature specs. Each family takes a seed and returns its worst relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sardino::advtrain::{attack_objective, composite_grad, diversity_grad, loss_classification, AttackNet};
use sardino::hypernet::{HyperNetParams, HyperNetSpec};
use sardino::nncore::{
    cross_entropy, target_backward, target_forward_batch, ImageShape, MlpParams, MlpSpec, TargetNetSpec, TargetWeights,
};

const H: f64 = 1e-6;
pub const TOL: f64 = 1e-3;
/// Magnitudes below this are compared absolutely; the FD round-off floor sits well below it.
const FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Compare `analytic[i]` against `(f(+h) - f(-h)) / 2h` for a sample of indices, where
/// `eval(i, d)` evaluates the loss with element `i` shifted by `d`.
fn fd_check(
    what: &str,
    analytic: &[f64],
    mut eval: impl FnMut(usize, f64) -> f64,
    max_checks: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64, String> {
    let n = analytic.len();
    let idx: Vec<usize> = if n <= max_checks { (0..n).collect() } else { (0..max_checks).map(|_| rng.random_range(0..n)).collect() };
    let mut worst = 0.0f64;
    for i in idx {
        let num = (eval(i, H) - eval(i, -H)) / (2.0 * H);
        let e = rel_err(analytic[i], num);
        if !(e <= TOL) {
            return Err(format!("{what}: element {i} analytic {} numeric {num} rel err {e}", analytic[i]));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

fn mini_target(rng: &mut ChaCha8Rng) -> TargetNetSpec {
    let channels = rng.random_range(1..=2);
    let side = [10, 12, 14][rng.random_range(0..3)];
    TargetNetSpec::new(
        ImageShape { channels, height: side, width: side },
        [rng.random_range(2..=4), rng.random_range(2..=4)],
        3,
        rng.random_range(2..=5),
    )
    .unwrap()
}

fn images(spec: &TargetNetSpec, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let x = (0..n * spec.input.len()).map(|_| rng.random::<f64>()).collect();
    let y = (0..n).map(|_| rng.random_range(0..spec.classes) as u8).collect();
    (x, y)
}

fn flat_w(w: &TargetWeights<f64>) -> Vec<f64> {
    w.flatten()
}

fn set_w(w: &mut TargetWeights<f64>, i: usize, d: f64) {
    let mut at = 0;
    for l in &mut w.layers {
        for t in [&mut l.weight, &mut l.bias] {
            if i < at + t.len() {
                t.data_mut()[i - at] += d;
                return;
            }
            at += t.len();
        }
    }
    panic!("index out of range");
}

fn mean_ce(spec: &TargetNetSpec, w: &TargetWeights<f64>, x: &[f64], y: &[u8]) -> f64 {
    let (logits, _) = target_forward_batch(spec, w, x, y.len()).unwrap();
    logits
        .data()
        .chunks_exact(spec.classes)
        .zip(y)
        .map(|(r, &t)| cross_entropy(r, t as usize).unwrap())
        .sum::<f64>()
        / y.len() as f64
}

pub fn target_net(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = mini_target(&mut rng);
    let w = TargetWeights::<f64>::random(&spec, &mut rng).unwrap();
    let mut w = w;
    for l in &mut w.layers {
        l.bias.data_mut().iter_mut().for_each(|b| *b = rng.random_range(-0.1..0.1));
    }
    let (x, y) = images(&spec, 3, &mut rng);
    let (logits, cache) = target_forward_batch(&spec, &w, &x, 3).unwrap();
    let mut dl = Vec::new();
    for (r, &t) in logits.data().chunks_exact(spec.classes).zip(&y) {
        dl.extend(sardino::nncore::cross_entropy_grad(r, t as usize).unwrap().into_iter().map(|g| g / 3.0));
    }
    let g = target_backward(&spec, &w, &cache, &dl, true, true).unwrap();
    let gw = flat_w(g.weights.as_ref().unwrap());
    worst = worst.max(fd_check(
        &format!("seed {seed} dCE/dθ"),
        &gw,
        |i, d| {
            let mut w2 = w.clone();
            set_w(&mut w2, i, d);
            mean_ce(&spec, &w2, &x, &y)
        },
        400,
        &mut rng,
    )?);
    let gi = g.input.unwrap().into_data();
    worst = worst.max(fd_check(
        &format!("seed {seed} dCE/dx"),
        &gi,
        |i, d| {
            let mut x2 = x.clone();
            x2[i] += d;
            mean_ce(&spec, &w, &x2, &y)
        },
        400,
        &mut rng,
    )?);
    Ok(worst)
}

pub fn mlp(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=16)];
    widths.extend((0..depth).map(|_| rng.random_range(1..=16)));
    widths.push(rng.random_range(1..=16));
    let spec = MlpSpec::new(widths).unwrap();
    let mut p = MlpParams::<f64>::random(&spec, 1.0, &mut rng);
    p.for_each_param_mut(|v| *v += rng.random_range(-0.05..0.05));
    let batch = 3;
    let x: Vec<f64> = (0..batch * spec.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..batch * spec.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Loss: <c, f(x)>.
    let loss = |p: &MlpParams<f64>, x: &[f64]| -> f64 {
        let (y, _) = p.forward(&spec, x, batch).unwrap();
        y.iter().zip(&c).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = p.forward(&spec, &x, batch).unwrap();
    let (g, gx) = p.backward(&spec, &cache, &c).unwrap();
    worst = worst.max(fd_check(
        &format!("seed {seed} mlp dθ"),
        &g.flatten(),
        |i, d| {
            let mut p2 = p.clone();
            let mut k = 0;
            p2.for_each_param_mut(|v| {
                if k == i {
                    *v += d;
                }
                k += 1;
            });
            loss(&p2, &x)
        },
        400,
        &mut rng,
    )?);
    worst = worst.max(fd_check(
        &format!("seed {seed} mlp dx"),
        &gx,
        |i, d| {
            let mut x2 = x.clone();
            x2[i] += d;
            loss(&p, &x2)
        },
        400,
        &mut rng,
    )?);
    Ok(worst)
}

fn mini_hyper(rng: &mut ChaCha8Rng) -> HyperNetSpec {
    HyperNetSpec {
        target: mini_target(rng),
        latent_dim: rng.random_range(2..=8),
        code_dim: rng.random_range(2..=6),
        encoder_hidden: vec![rng.random_range(2..=8)],
        generator_hidden: vec![rng.random_range(2..=8)],
    }
}

fn hyper_flat(p: &HyperNetParams<f64>) -> Vec<f64> {
    p.param_slices().concat()
}

fn hyper_shift(p: &HyperNetParams<f64>, i: usize, d: f64) -> HyperNetParams<f64> {
    let mut q = p.clone();
    let mut at = 0;
    for s in q.param_slices_mut() {
        if i < at + s.len() {
            s[i - at] += d;
            break;
        }
        at += s.len();
    }
    q
}

pub fn hypernet_losses(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = mini_hyper(&mut rng);
    let mut p = HyperNetParams::<f64>::init(&spec, 0.5, &mut rng).unwrap();
    p.encoder.for_each_param_mut(|v| *v += rng.random_range(-0.05..0.05));
    let (x, y) = images(&spec.target, 2, &mut rng);
    let zb = 3;
    let z: Vec<f64> = (0..zb * spec.latent_dim).map(|_| rng.random_range(-1.0..1.0)).collect();

    let j1 = composite_grad(&p, &x, &y, &z, zb, 1.0, 0.0).unwrap();
    assert!((j1.j1 - loss_classification(&p, &x, &y, &z, zb).unwrap()).abs() < 1e-12);
    worst = worst.max(fd_check(
        &format!("seed {seed} dJ1/dφ"),
        &hyper_flat(&j1.grads),
        |i, d| loss_classification(&hyper_shift(&p, i, d), &x, &y, &z, zb).unwrap(),
        300,
        &mut rng,
    )?);

    let j2 = composite_grad(&p, &x, &y, &z, zb, 0.0, 1.0).unwrap();
    worst = worst.max(fd_check(
        &format!("seed {seed} dJ2/dφ"),
        &hyper_flat(&j2.grads),
        |i, d| sardino::advtrain::loss_diversity(&hyper_shift(&p, i, d), &z, zb).unwrap(),
        300,
        &mut rng,
    )?);

    // J2 with respect to the generated weights directly.
    let (members, _) = p.generate_batch(&z, zb).unwrap();
    let (_, g) = diversity_grad(&members).unwrap();
    let g0 = flat_w(&g[1]);
    worst = worst.max(fd_check(
        &format!("seed {seed} dJ2/dθ"),
        &g0,
        |i, d| {
            let mut m = members.clone();
            set_w(&mut m[1], i, d);
            sardino::advtrain::diversity(&m).unwrap()
        },
        200,
        &mut rng,
    )?);
    Ok(worst)
}

pub fn attack_net(seed: u64) -> Result<f64, String> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = mini_target(&mut rng);
    let members: Vec<_> = (0..2).map(|_| TargetWeights::<f64>::random(&spec, &mut rng).unwrap()).collect();
    let noise = rng.random_range(2..=6);
    let net = AttackNet::<f64>::init(spec.input, noise, &[rng.random_range(2..=8)], 0.3, &mut rng).unwrap();
    let mut net = net;
    net.params.for_each_param_mut(|v| *v *= 5.0);
    let (x, y) = images(&spec, 3, &mut rng);
    let za = net.sample_noise(3, &mut rng);
    let (_, g) = attack_objective(&spec, &members, &net, &x, &y, &za, true).unwrap();
    let g = g.unwrap();
    worst = worst.max(fd_check(
        &format!("seed {seed} dJ3/dθ_A"),
        &g.flatten(),
        |i, d| {
            let mut n2 = net.clone();
            let mut k = 0;
            n2.params.for_each_param_mut(|v| {
                if k == i {
                    *v += d;
                }
                k += 1;
            });
            attack_objective(&spec, &members, &n2, &x, &y, &za, false).unwrap().0
        },
        300,
        &mut rng,
    )?);
    Ok(worst)
}
