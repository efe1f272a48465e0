//! Attack oracles and the evaluation harness for adversarial and out-of-distribution
//! inputs.

mod curves;

use serde::{Deserialize, Serialize};

pub use curves::{auc_from_scores, roc_auc, write_defense_csv, write_roc_csv, DefenseCurvePoint, RocPoint};

use crate::ensemble::{classify_many, decide_with_classes, max_softmax_many};
use crate::error::{Error, Result};
use crate::hypernet::{generate_ensemble, split_seed, HyperNetParams};
use crate::nncore::{argmax, cross_entropy_grad, target_backward, target_forward_batch, TargetNetSpec, TargetWeights};
use crate::pipeline::Dataset;

/// Images per gradient chunk in batched attacks.
const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Vec<f32>,
    pub linf: f64,
    pub l2: f64,
    /// Majority label of the attacked (surrogate) model(s) differs from the true label.
    pub fooled: bool,
}

fn sign(v: f32) -> f32 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of the member-mean cross-entropy with respect to each of `n` images.
fn mean_ce_input_grad(spec: &TargetNetSpec, members: &[TargetWeights<f32>], x: &[f32], labels: &[usize]) -> Result<Vec<f32>> {
    let px = spec.input.len();
    let scale = 1.0 / members.len() as f32;
    let mut g = vec![0.0f32; x.len()];
    for w in members {
        for (ci, (xs, ys)) in x.chunks(CHUNK * px).zip(labels.chunks(CHUNK)).enumerate() {
            let (logits, cache) = target_forward_batch(spec, w, xs, ys.len())?;
            let mut dl = Vec::with_capacity(logits.len());
            for (row, &y) in logits.data().chunks_exact(spec.classes).zip(ys) {
                dl.extend(cross_entropy_grad(row, y)?.into_iter().map(|v| v * scale));
            }
            let gi = target_backward(spec, w, &cache, &dl, false, true)?.input.expect("requested");
            for (d, &v) in g[ci * CHUNK * px..].iter_mut().zip(gi.data()) {
                *d += v;
            }
        }
    }
    Ok(g)
}

fn majority(spec: &TargetNetSpec, members: &[TargetWeights<f32>], x: &[f32], n: usize) -> Result<Vec<usize>> {
    let votes = classify_many(spec, members, x, n)?;
    votes.iter().map(|v| Ok(decide_with_classes(v, spec.classes, 0.5)?.label)).collect()
}

fn finish(spec: &TargetNetSpec, members: &[TargetWeights<f32>], x: &[f32], x_adv: Vec<f32>, labels: &[usize]) -> Result<Vec<AttackResult>> {
    let px = spec.input.len();
    let pred = majority(spec, members, &x_adv, labels.len())?;
    Ok((0..labels.len())
        .map(|i| {
            let (a, b) = (&x[i * px..(i + 1) * px], &x_adv[i * px..(i + 1) * px]);
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| (q - p) as f64).collect();
            AttackResult {
                x_adv: b.to_vec(),
                linf: d.iter().fold(0.0, |m, v| m.max(v.abs())),
                l2: d.iter().map(|v| v * v).sum::<f64>().sqrt(),
                fooled: pred[i] != labels[i],
            }
        })
        .collect())
}

/// Iterative sign-gradient ascent on the surrogate-mean cross-entropy for a batch of
/// images, projected onto the `eps` ball around each image and the `[0, 1]` box.
pub fn surrogate_attack_batch(
    spec: &TargetNetSpec,
    surrogate: &[TargetWeights<f32>],
    x: &[f32],
    labels: &[usize],
    eps: f64,
    steps: usize,
    step_size: f64,
) -> Result<Vec<AttackResult>> {
    if surrogate.is_empty() {
        return Err(Error::arg("surrogate ensemble is empty"));
    }
    if eps < 0.0 || step_size < 0.0 {
        return Err(Error::arg("eps and step size must be non-negative"));
    }
    if x.len() != labels.len() * spec.input.len() {
        return Err(Error::mismatch("image and label counts differ"));
    }
    let (eps, step) = (eps as f32, step_size as f32);
    let mut adv = x.to_vec();
    for _ in 0..steps {
        let g = mean_ce_input_grad(spec, surrogate, &adv, labels)?;
        for ((a, &g), &x0) in adv.iter_mut().zip(&g).zip(x) {
            let v = *a + step * sign(g);
            *a = v.clamp(x0 - eps, x0 + eps).clamp(0.0, 1.0);
        }
    }
    finish(spec, surrogate, x, adv, labels)
}

pub fn surrogate_ensemble_attack(
    spec: &TargetNetSpec,
    surrogate: &[TargetWeights<f32>],
    x: &[f32],
    y: usize,
    eps: f64,
    steps: usize,
    step_size: f64,
) -> Result<AttackResult> {
    Ok(surrogate_attack_batch(spec, surrogate, x, &[y], eps, steps, step_size)?.remove(0))
}

/// Fast gradient sign method on one surrogate network.
pub fn fgsm(spec: &TargetNetSpec, w: &TargetWeights<f32>, x: &[f32], y: usize, eps: f64) -> Result<AttackResult> {
    fgsm_batch(spec, w, x, &[y], eps).map(|mut v| v.remove(0))
}

pub fn fgsm_batch(spec: &TargetNetSpec, w: &TargetWeights<f32>, x: &[f32], labels: &[usize], eps: f64) -> Result<Vec<AttackResult>> {
    if eps < 0.0 {
        return Err(Error::arg("eps must be non-negative"));
    }
    if x.len() != labels.len() * spec.input.len() {
        return Err(Error::mismatch("image and label counts differ"));
    }
    let members = std::slice::from_ref(w);
    let g = mean_ce_input_grad(spec, members, x, labels)?;
    let adv = x.iter().zip(&g).map(|(&a, &g)| (a + eps as f32 * sign(g)).clamp(0.0, 1.0)).collect();
    finish(spec, members, x, adv, labels)
}

/// How the defender picks the ensemble for each input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Renewal {
    /// A fresh ensemble per input, seeded independently of anything the attacker sees.
    Mtd,
    /// One ensemble for every input (and, in the threat model, known to the attacker).
    Static,
}

pub struct Defender<'a> {
    pub hypernet: &'a HyperNetParams<f32>,
    pub n: usize,
    pub thresholds: Vec<f64>,
    pub renewal: Renewal,
    pub base_seed: u64,
}

/// `T_s` sweep 0.50, 0.55, …, 1.00.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

impl Defender<'_> {
    /// The ensemble a static defender uses for every input.
    pub fn static_members(&self) -> Result<Vec<TargetWeights<f32>>> {
        Ok(generate_ensemble(self.hypernet, 0, self.base_seed, self.n)?.0)
    }

    fn members_for(&self, index: usize) -> Result<Vec<TargetWeights<f32>>> {
        let seed = split_seed(self.base_seed ^ 0xA5A5_5A5A_0F0F_F0F0, index as u64 + 1);
        Ok(generate_ensemble(self.hypernet, index as u64, seed, self.n)?.0)
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.thresholds.is_empty() {
            return Err(Error::arg("defender needs N >= 1 and at least one threshold"));
        }
        if self.thresholds.iter().any(|t| !(0.5..=1.0).contains(t)) {
            return Err(Error::arg("thresholds must lie in [0.5, 1.0]"));
        }
        Ok(())
    }
}

/// Per-input votes of the defender on clean and adversarial copies, in input order.
pub struct DefenseVotes {
    pub clean: Vec<Vec<usize>>,
    pub adversarial: Vec<Vec<usize>>,
    pub labels: Vec<usize>,
}

/// Collect defender votes; `adversarial` holds one `x'` per clean image, same order.
pub fn defense_votes(defender: &Defender<'_>, clean: &Dataset, adversarial: &[f32]) -> Result<DefenseVotes> {
    defender.check()?;
    let spec = &defender.hypernet.spec.target;
    let px = spec.input.len();
    if adversarial.len() != clean.images.len() {
        return Err(Error::mismatch("one adversarial image per clean image is required"));
    }
    let labels: Vec<usize> = clean.labels.iter().map(|&y| y as usize).collect();
    let (clean_votes, adv_votes) = match defender.renewal {
        Renewal::Static => {
            let m = defender.static_members()?;
            (classify_many(spec, &m, &clean.images, clean.len())?, classify_many(spec, &m, adversarial, clean.len())?)
        }
        Renewal::Mtd => {
            let mut cv = Vec::with_capacity(clean.len());
            let mut av = Vec::with_capacity(clean.len());
            for i in 0..clean.len() {
                let m = defender.members_for(i)?;
                let pair = [clean.image(i), &adversarial[i * px..(i + 1) * px]].concat();
                let mut v = classify_many(spec, &m, &pair, 2)?;
                av.push(v.pop().expect("two rows"));
                cv.push(v.pop().expect("two rows"));
            }
            (cv, av)
        }
    };
    Ok(DefenseVotes { clean: clean_votes, adversarial: adv_votes, labels })
}

/// SDR and FPR per threshold from collected votes.
pub fn defense_curve(votes: &DefenseVotes, classes: usize, thresholds: &[f64]) -> Result<Vec<DefenseCurvePoint>> {
    let n = votes.labels.len();
    if n == 0 {
        return Err(Error::arg("no samples"));
    }
    thresholds
        .iter()
        .map(|&t_s| {
            let mut defended = 0;
            let mut false_pos = 0;
            for i in 0..n {
                let a = decide_with_classes(&votes.adversarial[i], classes, t_s)?;
                if a.is_flagged() || a.label == votes.labels[i] {
                    defended += 1;
                }
                if decide_with_classes(&votes.clean[i], classes, t_s)?.is_flagged() {
                    false_pos += 1;
                }
            }
            Ok(DefenseCurvePoint { t_s, sdr: defended as f64 / n as f64, fpr: false_pos as f64 / n as f64 })
        })
        .collect()
}

/// SDR/FPR sweep: `attack(i, x, y)` supplies `x'` for clean sample `i`.
pub fn evaluate_defense<F>(defender: &Defender<'_>, clean: &Dataset, mut attack: F) -> Result<Vec<DefenseCurvePoint>>
where
    F: FnMut(usize, &[f32], usize) -> Result<Vec<f32>>,
{
    let px = clean.shape.len();
    let mut adv = Vec::with_capacity(clean.images.len());
    for i in 0..clean.len() {
        let xa = attack(i, clean.image(i), clean.label(i))?;
        if xa.len() != px {
            return Err(Error::mismatch("attack returned an image of the wrong size"));
        }
        adv.extend(xa);
    }
    let votes = defense_votes(defender, clean, &adv)?;
    defense_curve(&votes, defender.hypernet.spec.target.classes, &defender.thresholds)
}

/// Out-of-distribution scores: consistency per input for the in-distribution and OOD sets.
pub struct OodScores {
    pub in_dist: Vec<f64>,
    pub ood: Vec<f64>,
}

fn consistencies(spec: &TargetNetSpec, members: &[TargetWeights<f32>], data: &Dataset) -> Result<Vec<f64>> {
    classify_many(spec, members, &data.images, data.len())?
        .iter()
        .map(|v| Ok(decide_with_classes(v, spec.classes, 0.5)?.consistency))
        .collect()
}

pub fn ensemble_ood_scores(spec: &TargetNetSpec, members: &[TargetWeights<f32>], in_dist: &Dataset, ood: &Dataset) -> Result<OodScores> {
    if in_dist.is_empty() || ood.is_empty() {
        return Err(Error::arg("both sets must be non-empty"));
    }
    Ok(OodScores { in_dist: consistencies(spec, members, in_dist)?, ood: consistencies(spec, members, ood)? })
}

pub fn softmax_ood_scores(spec: &TargetNetSpec, w: &TargetWeights<f32>, in_dist: &Dataset, ood: &Dataset) -> Result<OodScores> {
    if in_dist.is_empty() || ood.is_empty() {
        return Err(Error::arg("both sets must be non-empty"));
    }
    Ok(OodScores {
        in_dist: max_softmax_many(spec, w, &in_dist.images, in_dist.len())?,
        ood: max_softmax_many(spec, w, &ood.images, ood.len())?,
    })
}

/// ROC points: an input is flagged when its score is `<= t` (consistency, strict accept)
/// or `< t` (softmax baseline, accept at equality), per `strict`.
pub fn roc_points(scores: &OodScores, thresholds: &[f64], strict: bool) -> Vec<RocPoint> {
    let flagged = |s: &[f64], t: f64| s.iter().filter(|&&v| if strict { v <= t } else { v < t }).count() as f64 / s.len() as f64;
    thresholds
        .iter()
        .map(|&t| RocPoint { threshold: t, tpr: flagged(&scores.ood, t), fpr: flagged(&scores.in_dist, t) })
        .collect()
}

/// Ensemble ROC over the `T_s` sweep, one static ensemble for all inputs.
pub fn evaluate_ood(spec: &TargetNetSpec, members: &[TargetWeights<f32>], in_dist: &Dataset, ood: &Dataset, thresholds: &[f64]) -> Result<Vec<RocPoint>> {
    Ok(roc_points(&ensemble_ood_scores(spec, members, in_dist, ood)?, thresholds, true))
}

/// Softmax-baseline threshold sweep 0.90, 0.91, …, 1.00.
pub fn baseline_thresholds() -> Vec<f64> {
    (0..=10).map(|i| 0.9 + 0.01 * i as f64).collect()
}

/// Share of `x` correctly classified by `w` whose FGSM copy `w` misclassifies.
pub fn fgsm_fooling_rate(spec: &TargetNetSpec, w: &TargetWeights<f32>, data: &Dataset, eps: f64) -> Result<f64> {
    let labels: Vec<usize> = data.labels.iter().map(|&y| y as usize).collect();
    let px = spec.input.len();
    let mut correct = 0;
    let mut fooled = 0;
    for (ci, (xs, ys)) in data.images.chunks(256 * px).zip(labels.chunks(256)).enumerate() {
        let res = fgsm_batch(spec, w, xs, ys, eps)?;
        let (logits, _) = target_forward_batch(spec, w, xs, ys.len())?;
        for (j, (row, r)) in logits.data().chunks_exact(spec.classes).zip(&res).enumerate() {
            if argmax(row) == labels[ci * 256 + j] {
                correct += 1;
                if r.fooled {
                    fooled += 1;
                }
            }
        }
    }
    if correct == 0 {
        return Err(Error::arg("surrogate classifies nothing correctly"));
    }
    Ok(fooled as f64 / correct as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_cover_stated_domains() {
        let t = default_thresholds();
        assert_eq!(t.len(), 11);
        assert!((t[0] - 0.5).abs() < 1e-12 && (t[10] - 1.0).abs() < 1e-12);
        let b = baseline_thresholds();
        assert!((b[0] - 0.9).abs() < 1e-12 && (b[10] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn curve_counts_match_manual_tally() {
        // 4 samples, 4 members, label 0 everywhere.
        let votes = DefenseVotes {
            clean: vec![vec![0; 4], vec![0, 0, 0, 1], vec![0, 0, 1, 1], vec![0; 4]],
            adversarial: vec![vec![1; 4], vec![0, 1, 1, 1], vec![0; 4], vec![2, 2, 2, 0]],
            labels: vec![0; 4],
        };
        let c = defense_curve(&votes, 3, &[0.5, 0.8, 1.0]).unwrap();
        // T_s 0.5: adv flagged/correct: s0 no (1 accepted), s1 no (1 at .75), s2 yes (correct), s3 no.
        assert_eq!((c[0].sdr, c[0].fpr), (0.25, 0.25));
        // T_s 0.8: s1 flagged (.75), s3 flagged (.75); clean s1 and s2 flagged.
        assert_eq!((c[1].sdr, c[1].fpr), (0.75, 0.5));
        // T_s 1.0 flags everything.
        assert_eq!((c[2].sdr, c[2].fpr), (1.0, 1.0));
    }

    #[test]
    fn roc_strictness() {
        let s = OodScores { in_dist: vec![1.0, 0.9, 0.5], ood: vec![0.5, 0.6] };
        let p = roc_points(&s, &[0.5, 1.0], true);
        assert_eq!((p[0].tpr, p[0].fpr), (0.5, 1.0 / 3.0));
        assert_eq!((p[1].tpr, p[1].fpr), (1.0, 1.0));
        let q = roc_points(&s, &[0.5], false);
        assert_eq!((q[0].tpr, q[0].fpr), (0.0, 0.0));
    }
}
