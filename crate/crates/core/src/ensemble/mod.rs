//! Run generated members on an input, measure how much they agree, and accept the
//! majority label or flag the input.

mod queue;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use queue::{OperatorQueue, QueueEntry};

use crate::error::{Error, Result};
use crate::nncore::{argmax, softmax, target_forward_batch, TargetNetSpec, TargetWeights};
use crate::pipeline::Dataset;

/// Images per forward chunk when scoring many inputs.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictKind {
    Accept,
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleVerdict {
    pub kind: VerdictKind,
    /// Majority label (lowest index on ties); kept for flagged inputs too.
    pub label: usize,
    pub consistency: f64,
    pub histogram: Vec<u32>,
}

impl EnsembleVerdict {
    pub fn is_flagged(&self) -> bool {
        self.kind == VerdictKind::Flagged
    }
}

fn check_members(members: &[TargetWeights<f32>]) -> Result<()> {
    if members.is_empty() {
        return Err(Error::arg("ensemble has no members"));
    }
    Ok(())
}

/// One argmax label per member for a single image, member order preserved.
pub fn ensemble_classify(spec: &TargetNetSpec, members: &[TargetWeights<f32>], x: &[f32]) -> Result<Vec<usize>> {
    check_members(members)?;
    members
        .iter()
        .map(|w| Ok(argmax(target_forward_batch(spec, w, x, 1)?.0.data())))
        .collect()
}

/// [`ensemble_classify`] with members spread over the rayon pool.
pub fn ensemble_classify_par(spec: &TargetNetSpec, members: &[TargetWeights<f32>], x: &[f32]) -> Result<Vec<usize>> {
    check_members(members)?;
    members
        .par_iter()
        .map(|w| Ok(argmax(target_forward_batch(spec, w, x, 1)?.0.data())))
        .collect()
}

/// Predicted labels of one member on `n` images.
pub fn member_labels(spec: &TargetNetSpec, w: &TargetWeights<f32>, images: &[f32], n: usize) -> Result<Vec<usize>> {
    let px = spec.input.len();
    if images.len() != n * px {
        return Err(Error::mismatch(format!("{} pixels for {n} images", images.len())));
    }
    let mut out = Vec::with_capacity(n);
    for xs in images.chunks(CHUNK * px) {
        let (logits, _) = target_forward_batch(spec, w, xs, xs.len() / px)?;
        out.extend(logits.data().chunks_exact(spec.classes).map(argmax));
    }
    Ok(out)
}

/// `labels[image][member]` for a fixed ensemble over `n` images.
pub fn classify_many(spec: &TargetNetSpec, members: &[TargetWeights<f32>], images: &[f32], n: usize) -> Result<Vec<Vec<usize>>> {
    check_members(members)?;
    let per_member = members
        .par_iter()
        .map(|w| member_labels(spec, w, images, n))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..n).map(|i| per_member.iter().map(|m| m[i]).collect()).collect())
}

/// Per-class vote counts, sized to `classes`.
pub fn histogram(labels: &[usize], classes: usize) -> Result<Vec<u32>> {
    let mut h = vec![0u32; classes];
    for &l in labels {
        *h.get_mut(l).ok_or(Error::BadLabel { label: l, classes })? += 1;
    }
    Ok(h)
}

/// Share of members voting for the majority label.
pub fn consistency(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::arg("consistency of an empty label list"));
    }
    let classes = labels.iter().max().copied().unwrap_or(0) + 1;
    let h = histogram(labels, classes)?;
    Ok(*h.iter().max().expect("non-empty") as f64 / labels.len() as f64)
}

/// Accept iff consistency strictly exceeds `t_s`, with a histogram of `classes` bins.
pub fn decide_with_classes(labels: &[usize], classes: usize, t_s: f64) -> Result<EnsembleVerdict> {
    if !(0.5..=1.0).contains(&t_s) {
        return Err(Error::arg(format!("T_s {t_s} outside [0.5, 1.0]")));
    }
    if labels.is_empty() {
        return Err(Error::arg("no labels to decide on"));
    }
    let histogram = histogram(labels, classes)?;
    let mut label = 0;
    for (i, &c) in histogram.iter().enumerate() {
        if c > histogram[label] {
            label = i;
        }
    }
    let consistency = histogram[label] as f64 / labels.len() as f64;
    let kind = if consistency > t_s { VerdictKind::Accept } else { VerdictKind::Flagged };
    Ok(EnsembleVerdict { kind, label, consistency, histogram })
}

/// [`decide_with_classes`] with bins up to the largest label seen.
pub fn decide(labels: &[usize], t_s: f64) -> Result<EnsembleVerdict> {
    let classes = labels.iter().max().map_or(1, |m| m + 1);
    decide_with_classes(labels, classes, t_s)
}

pub fn accuracy(spec: &TargetNetSpec, w: &TargetWeights<f32>, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("accuracy on an empty set"));
    }
    let pred = member_labels(spec, w, &data.images, data.len())?;
    let hits = pred.iter().zip(&data.labels).filter(|(p, &y)| **p == y as usize).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Majority-vote accuracy (majority ties to the lowest label).
pub fn majority_accuracy(spec: &TargetNetSpec, members: &[TargetWeights<f32>], data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::arg("accuracy on an empty set"));
    }
    let votes = classify_many(spec, members, &data.images, data.len())?;
    let mut hits = 0;
    for (v, &y) in votes.iter().zip(&data.labels) {
        if decide_with_classes(v, spec.classes, 0.5)?.label == y as usize {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub passed: bool,
    pub accuracy: f64,
}

/// Gate an ensemble on its majority-vote accuracy before it is commissioned.
pub fn validate_ensemble(
    spec: &TargetNetSpec,
    members: &[TargetWeights<f32>],
    val: &Dataset,
    min_accuracy: f64,
) -> Result<Validation> {
    let accuracy = majority_accuracy(spec, members, val)?;
    Ok(Validation { passed: accuracy >= min_accuracy, accuracy })
}

/// Softmax-confidence baseline detector: accept iff the top probability ≥ `threshold`.
pub fn baseline_softmax_detect(spec: &TargetNetSpec, w: &TargetWeights<f32>, x: &[f32], threshold: f64) -> Result<VerdictKind> {
    let (logits, _) = target_forward_batch(spec, w, x, 1)?;
    softmax_verdict(logits.data(), threshold)
}

pub fn softmax_verdict(logits: &[f32], threshold: f64) -> Result<VerdictKind> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg(format!("softmax threshold {threshold} outside [0, 1]")));
    }
    let top = softmax(logits).into_iter().fold(0.0, f64::max);
    Ok(if top >= threshold { VerdictKind::Accept } else { VerdictKind::Flagged })
}

/// Largest softmax probability of one member on each of `n` images.
pub fn max_softmax_many(spec: &TargetNetSpec, w: &TargetWeights<f32>, images: &[f32], n: usize) -> Result<Vec<f64>> {
    let px = spec.input.len();
    if images.len() != n * px {
        return Err(Error::mismatch(format!("{} pixels for {n} images", images.len())));
    }
    let mut out = Vec::with_capacity(n);
    for xs in images.chunks(CHUNK * px) {
        let (logits, _) = target_forward_batch(spec, w, xs, xs.len() / px)?;
        out.extend(logits.data().chunks_exact(spec.classes).map(|r| softmax(r).into_iter().fold(0.0, f64::max)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency(&[0, 0, 0, 1]).unwrap(), 0.75);
        assert_eq!(consistency(&[4; 20]).unwrap(), 1.0);
        assert_eq!(consistency(&[0, 0, 1, 1]).unwrap(), 0.5);
        assert!(consistency(&[]).is_err());
    }

    #[test]
    fn decide_examples() {
        let v = decide(&[0, 0, 0, 1], 0.6).unwrap();
        assert_eq!((v.kind, v.label, v.consistency), (VerdictKind::Accept, 0, 0.75));
        let v = decide(&[0, 0, 1, 1], 0.5).unwrap();
        assert_eq!((v.kind, v.consistency), (VerdictKind::Flagged, 0.5));
        assert_eq!(v.label, 0);
        let v = decide(&[3, 3, 1, 1], 0.5).unwrap();
        assert_eq!(v.label, 1, "ties break to the lowest class");
        assert!(decide(&[0], 0.49).is_err());
        assert!(decide(&[0], 1.01).is_err());
        assert!(decide(&[], 0.5).is_err());
    }

    #[test]
    fn decide_boundary_at_one() {
        assert_eq!(decide(&[2; 5], 1.0).unwrap().kind, VerdictKind::Flagged);
        assert_eq!(decide(&[2; 5], 0.95).unwrap().kind, VerdictKind::Accept);
    }

    #[test]
    fn softmax_baseline_examples() {
        assert_eq!(softmax_verdict(&[0.0; 10], 0.2).unwrap(), VerdictKind::Flagged);
        let mut l = [-50.0f32; 10];
        l[3] = 50.0;
        assert_eq!(softmax_verdict(&l, 0.99).unwrap(), VerdictKind::Accept);
        assert!(softmax_verdict(&l, 1.5).is_err());
    }

    #[test]
    fn histogram_rejects_out_of_range_label() {
        assert!(matches!(histogram(&[0, 10], 10), Err(Error::BadLabel { label: 10, classes: 10 })));
    }
}
