//! The three training objectives and their analytic gradients.
//!
//! * `J1`: mean cross-entropy over every (image, z_H) pair.
//! * `J2 = exp(-Var)`: Var is the mean over parameters of the population variance
//!   across the generated batch.
//! * `J3 = F(x')_y - max_{i≠y} F(x')_i + ‖δ‖₂`, averaged over (image, member) pairs.

use super::attack_net::{apply_perturbation, AttackNet};
use crate::error::{Error, Result};
use crate::hypernet::HyperNetParams;
use crate::nncore::{
    cross_entropy, cross_entropy_grad, target_backward, target_forward_batch, MlpParams, Real, TargetNetSpec,
    TargetWeights,
};

/// Images per forward chunk; keeps the im2col buffers cache-resident.
const CHUNK: usize = 16;

pub(crate) fn axpy<T: Real>(dst: &mut TargetWeights<T>, a: T, src: &TargetWeights<T>) {
    for (d, s) in dst.layers.iter_mut().zip(&src.layers) {
        for (x, &y) in d.weight.data_mut().iter_mut().zip(s.weight.data()) {
            *x += a * y;
        }
        for (x, &y) in d.bias.data_mut().iter_mut().zip(s.bias.data()) {
            *x += a * y;
        }
    }
}

fn check_batch<T: Real>(spec: &TargetNetSpec, images: &[T], labels: &[u8]) -> Result<usize> {
    let n = labels.len();
    if n == 0 {
        return Err(Error::arg("empty image batch"));
    }
    if images.len() != n * spec.input.len() {
        return Err(Error::mismatch(format!("{} pixels for {n} images", images.len())));
    }
    Ok(n)
}

/// Summed cross-entropy of one member over a batch and, if `scale` is given, the
/// weight gradient of `scale * Σ CE`.
fn member_ce<T: Real>(
    spec: &TargetNetSpec,
    w: &TargetWeights<T>,
    images: &[T],
    labels: &[u8],
    scale: Option<T>,
) -> Result<(f64, Option<TargetWeights<T>>)> {
    let px = spec.input.len();
    let classes = spec.classes;
    let mut total = 0.0;
    let mut grad = match scale {
        Some(_) => Some(TargetWeights::zeros(spec)?),
        None => None,
    };
    for (xs, ys) in images.chunks(CHUNK * px).zip(labels.chunks(CHUNK)) {
        let (logits, cache) = target_forward_batch(spec, w, xs, ys.len())?;
        let mut dlogits = Vec::with_capacity(logits.len());
        for (row, &y) in logits.data().chunks_exact(classes).zip(ys) {
            total += cross_entropy(row, y as usize)?;
            if let Some(s) = scale {
                dlogits.extend(cross_entropy_grad(row, y as usize)?.into_iter().map(|g| g * s));
            }
        }
        if let Some(g) = grad.as_mut() {
            let part = target_backward(spec, w, &cache, &dlogits, true, false)?;
            axpy(g, T::one(), part.weights.as_ref().expect("requested"));
        }
    }
    Ok((total, grad))
}

/// `J1` for the members a HyperNet generates from `z` (`[z_batch][latent]`).
pub fn loss_classification<T: Real>(
    params: &HyperNetParams<T>,
    images: &[T],
    labels: &[u8],
    z: &[T],
    z_batch: usize,
) -> Result<f64> {
    let spec = &params.spec.target;
    let n = check_batch(spec, images, labels)?;
    if z_batch == 0 {
        return Err(Error::arg("empty z_H batch"));
    }
    let (members, _) = params.generate_batch(z, z_batch)?;
    let mut total = 0.0;
    for m in &members {
        total += member_ce(spec, m, images, labels, None)?.0;
    }
    Ok(total / (n * z_batch) as f64)
}

/// Mean per-parameter population variance across generated members.
pub fn weight_variance<T: Real>(members: &[TargetWeights<T>]) -> Result<f64> {
    if members.len() < 2 {
        return Err(Error::arg("variance needs at least two members"));
    }
    Ok(crate::hypernet::mean_weight_variance(members))
}

/// `J2` of an explicit member set.
pub fn diversity<T: Real>(members: &[TargetWeights<T>]) -> Result<f64> {
    Ok((-weight_variance(members)?).exp())
}

/// `J2` and its gradient with respect to every member's weights:
/// `∂J2/∂θ_bp = -J2 · 2/(B·P) · (θ_bp - mean_p)`.
pub fn diversity_grad<T: Real>(members: &[TargetWeights<T>]) -> Result<(f64, Vec<TargetWeights<T>>)> {
    let j2 = diversity(members)?;
    let b = members.len();
    let flats: Vec<Vec<T>> = members.iter().map(TargetWeights::flatten).collect();
    let p = flats[0].len();
    let mut mean = vec![0.0f64; p];
    for f in &flats {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v.f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let coef = -j2 * 2.0 / (b * p) as f64;
    let mut grads = Vec::with_capacity(b);
    for (f, template) in flats.iter().zip(members) {
        let g: Vec<T> = f.iter().zip(&mean).map(|(v, m)| T::of(coef * (v.f64() - m))).collect();
        let mut out = template.clone();
        let mut at = 0;
        for l in &mut out.layers {
            let (w, rest) = g[at..].split_at(l.weight.len());
            l.weight.data_mut().copy_from_slice(w);
            let nb = l.bias.len();
            l.bias.data_mut().copy_from_slice(&rest[..nb]);
            at += l.weight.len() + nb;
        }
        grads.push(out);
    }
    Ok((j2, grads))
}

/// `J2` for the members a HyperNet generates from `z`.
pub fn loss_diversity<T: Real>(params: &HyperNetParams<T>, z: &[T], z_batch: usize) -> Result<f64> {
    if z_batch < 2 {
        return Err(Error::arg("diversity needs a z_H batch of at least two"));
    }
    let (members, _) = params.generate_batch(z, z_batch)?;
    diversity(&members)
}

/// `w1·J1 + w2·J2` on one generated batch, with the HyperNet gradient.
pub struct CompositeGrad<T = f32> {
    pub j1: f64,
    pub j2: f64,
    pub grads: HyperNetParams<T>,
}

pub fn composite_grad<T: Real>(
    params: &HyperNetParams<T>,
    images: &[T],
    labels: &[u8],
    z: &[T],
    z_batch: usize,
    j1_weight: f64,
    j2_weight: f64,
) -> Result<CompositeGrad<T>> {
    let spec = &params.spec.target;
    let n = check_batch(spec, images, labels)?;
    if z_batch == 0 || (j2_weight != 0.0 && z_batch < 2) {
        return Err(Error::arg("z_H batch too small"));
    }
    let (members, cache) = params.generate_batch(z, z_batch)?;
    let scale = T::of(j1_weight / (n * z_batch) as f64);
    let mut total = 0.0;
    let mut d_members = Vec::with_capacity(z_batch);
    for m in &members {
        let (ce, g) = member_ce(spec, m, images, labels, Some(scale))?;
        total += ce;
        d_members.push(g.expect("requested"));
    }
    let j2 = if z_batch >= 2 {
        let (j2, g2) = diversity_grad(&members)?;
        if j2_weight != 0.0 {
            for (d, g) in d_members.iter_mut().zip(&g2) {
                axpy(d, T::of(j2_weight), g);
            }
        }
        j2
    } else {
        1.0
    };
    let grads = params.backward(&cache, &d_members)?;
    Ok(CompositeGrad { j1: total / (n * z_batch) as f64, j2, grads })
}

/// `J3` for one pair given the logits on `x'` and `‖δ‖₂`.
pub fn loss_adversarial<T: Real>(logits: &[T], y: usize, delta_norm: f64) -> Result<f64> {
    let (margin, _) = margin_and_rival(logits, y)?;
    Ok(margin + delta_norm)
}

/// `F_y - max_{i≠y} F_i` and the rival index (first maximum).
fn margin_and_rival<T: Real>(logits: &[T], y: usize) -> Result<(f64, usize)> {
    if logits.len() < 2 {
        return Err(Error::mismatch("the adversarial margin needs at least two classes"));
    }
    if y >= logits.len() {
        return Err(Error::BadLabel { label: y, classes: logits.len() });
    }
    let mut rival = usize::MAX;
    for (i, v) in logits.iter().enumerate() {
        if i != y && (rival == usize::MAX || *v > logits[rival]) {
            rival = i;
        }
    }
    Ok((logits[y].f64() - logits[rival].f64(), rival))
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Mean `J3` of the attack network over `(image, member)` pairs, one `z_A` row per
/// image, and optionally its gradient with respect to `θ_A`.
pub fn attack_objective<T: Real>(
    spec: &TargetNetSpec,
    members: &[TargetWeights<T>],
    net: &AttackNet<T>,
    images: &[T],
    labels: &[u8],
    z_a: &[T],
    want_grad: bool,
) -> Result<(f64, Option<MlpParams<T>>)> {
    let n = check_batch(spec, images, labels)?;
    if members.is_empty() {
        return Err(Error::arg("attack objective needs at least one member"));
    }
    if net.image != spec.input {
        return Err(Error::mismatch("attack net image shape differs from the target input"));
    }
    let px = spec.input.len();
    let (delta, acache) = net.forward(z_a, n)?;
    let x_adv = apply_perturbation(images, &delta);
    let norms: Vec<f64> = delta
        .chunks_exact(px)
        .map(|d| l2(&d.iter().map(|v| v.f64()).collect::<Vec<_>>()))
        .collect();
    let pairs = (n * members.len()) as f64;
    let mut margin_sum = 0.0;
    let mut dx = vec![T::zero(); images.len()];
    let g_scale = T::of(1.0 / pairs);
    for w in members {
        for (ci, (xs, ys)) in x_adv.chunks(CHUNK * px).zip(labels.chunks(CHUNK)).enumerate() {
            let (logits, cache) = target_forward_batch(spec, w, xs, ys.len())?;
            let mut dlogits = vec![T::zero(); logits.len()];
            for (r, (row, &y)) in logits.data().chunks_exact(spec.classes).zip(ys).enumerate() {
                let (m, rival) = margin_and_rival(row, y as usize)?;
                margin_sum += m;
                dlogits[r * spec.classes + y as usize] = g_scale;
                dlogits[r * spec.classes + rival] = -g_scale;
            }
            if want_grad {
                let g = target_backward(spec, w, &cache, &dlogits, false, true)?;
                let gi = g.input.expect("requested");
                for (d, &v) in dx[ci * CHUNK * px..].iter_mut().zip(gi.data()) {
                    *d += v;
                }
            }
        }
    }
    let j3 = margin_sum / pairs + norms.iter().sum::<f64>() / n as f64;
    if !j3.is_finite() {
        return Err(Error::NonFinite("attack objective"));
    }
    if !want_grad {
        return Ok((j3, None));
    }
    // Through the clamp (pass-through strictly inside the box) and the norm term.
    let mut d_delta = vec![T::zero(); delta.len()];
    for i in 0..n {
        let inv = if norms[i] > 0.0 { 1.0 / (norms[i] * n as f64) } else { 0.0 };
        for p in i * px..(i + 1) * px {
            let s = images[p] + delta[p];
            let pass = s > T::zero() && s < T::one();
            let mut g = if pass { dx[p] } else { T::zero() };
            g += T::of(delta[p].f64() * inv);
            d_delta[p] = g;
        }
    }
    Ok((j3, Some(net.backward(&acache, &d_delta)?)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adversarial_loss_examples() {
        assert!((loss_adversarial(&[2.0f32, 1.0, 0.5], 0, 0.3).unwrap() - 1.3).abs() < 1e-9);
        assert!((loss_adversarial(&[1.0f32, 3.0, 0.0], 0, 0.5).unwrap() + 1.5).abs() < 1e-9);
        assert_eq!(loss_adversarial(&[1.0f32, 1.0, 0.0], 0, 0.0).unwrap(), 0.0);
        assert!(loss_adversarial(&[1.0f32], 0, 0.0).is_err());
        assert!(matches!(loss_adversarial(&[1.0f32, 2.0], 2, 0.0), Err(Error::BadLabel { .. })));
    }

    #[test]
    fn rival_is_first_max_excluding_label() {
        assert_eq!(margin_and_rival(&[5.0f32, 1.0, 3.0, 3.0], 0).unwrap().1, 2);
        assert_eq!(margin_and_rival(&[5.0f32, 1.0, 3.0], 2).unwrap().1, 0);
    }
}
