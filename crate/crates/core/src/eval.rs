//! Zero-shot classification by cosine similarity, top-1 accuracy, macro F1
//! and the ID/OOD robustness gap. Percent-valued metrics are in `[0, 100]`.

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::models::{DualEncoder, VisionClassifier};
use crate::numerics::{argmax, normalize_rows, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub top1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub n_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustnessGap {
    pub id_metric: f64,
    pub ood_metric: f64,
    pub gap: f64,
}

/// Index of the caption whose embedding is most cosine-similar to the
/// image embedding; ties go to the lowest index.
pub fn zero_shot_classify(model: &DualEncoder, image: &Tensor, captions: &[Tensor]) -> Result<usize> {
    if captions.is_empty() {
        return Err(Error::Empty("zero_shot_classify captions"));
    }
    let text = model.encode_texts(&Tensor::from_rows(&captions.iter().map(|c| c.data()).collect::<Vec<_>>())?)?;
    let img = model.encode_image(image)?;
    let img = Tensor::matrix(1, img.len(), img.into_data())?;
    Ok(classify_embeddings(&img, &text)?[0])
}

/// Argmax of cosine similarity for every row of `images` against `classes`.
pub fn classify_embeddings(images: &Tensor, classes: &Tensor) -> Result<Vec<usize>> {
    let (u, _) = normalize_rows(images, "image embedding")?;
    let (v, _) = normalize_rows(classes, "class embedding")?;
    let sims = u.matmul_t(&v)?;
    let rows = sims.shape()[0];
    Ok((0..rows).map(|r| argmax(sims.row(r)).expect("at least one class")).collect())
}

/// Zero-shot predictions for a whole split.
pub fn zero_shot_predict(model: &DualEncoder, samples: &[Sample], captions: &[Tensor]) -> Result<Vec<usize>> {
    if captions.is_empty() {
        return Err(Error::Empty("zero_shot_predict captions"));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let text = model.encode_texts(&Tensor::from_rows(&captions.iter().map(|c| c.data()).collect::<Vec<_>>())?)?;
    let images = Tensor::from_rows(&samples.iter().map(|s| s.image_vector.data()).collect::<Vec<_>>())?;
    classify_embeddings(&model.encode_images(&images)?, &text)
}

pub fn classifier_predict(model: &VisionClassifier, samples: &[Sample]) -> Result<Vec<usize>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let images = Tensor::from_rows(&samples.iter().map(|s| s.image_vector.data()).collect::<Vec<_>>())?;
    let logits = model.logits_batch(&images)?;
    Ok((0..samples.len()).map(|r| argmax(logits.row(r)).expect("num_classes >= 1")).collect())
}

fn check_lengths(predictions: &[usize], truths: &[usize]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Empty("metric"));
    }
    Ok(())
}

pub fn top1_accuracy(predictions: &[usize], truths: &[usize]) -> Result<f64> {
    check_lengths(predictions, truths)?;
    let hits = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / truths.len() as f64)
}

/// Per-class F1 in `[0, 1]` (0 when precision + recall is 0).
pub fn per_class_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<Vec<f64>> {
    check_lengths(predictions, truths)?;
    let mut tp = vec![0usize; num_classes];
    let mut fp = vec![0usize; num_classes];
    let mut fn_ = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::OutOfRange { index: p.max(t), len: num_classes });
        }
        if p == t {
            tp[t] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    Ok((0..num_classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if tp[c] == 0 || denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect())
}

/// Mean per-class F1 over classes present in `truths`, in percent.
pub fn macro_f1(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<f64> {
    let f1 = per_class_f1(predictions, truths, num_classes)?;
    let mut present = vec![false; num_classes];
    truths.iter().for_each(|&t| present[t] = true);
    let (sum, n) = f1
        .iter()
        .zip(&present)
        .filter(|(_, &p)| p)
        .fold((0.0, 0usize), |(s, n), (f, _)| (s + f, n + 1));
    Ok(100.0 * sum / n as f64)
}

pub fn metric_report(predictions: &[usize], truths: &[usize], num_classes: usize) -> Result<MetricReport> {
    Ok(MetricReport {
        top1: top1_accuracy(predictions, truths)?,
        macro_f1: macro_f1(predictions, truths, num_classes)?,
        per_class_f1: per_class_f1(predictions, truths, num_classes)?,
        n_samples: truths.len(),
    })
}

/// Expected accuracy of uniform guessing, in percent.
pub fn random_baseline(num_classes: usize) -> Result<f64> {
    if num_classes == 0 {
        return Err(Error::invalid("num_classes must be >= 1"));
    }
    Ok(100.0 / num_classes as f64)
}

pub fn robustness_gap(id: f64, ood: f64) -> RobustnessGap {
    RobustnessGap { id_metric: id, ood_metric: ood, gap: id - ood }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;
    use crate::models::{Activation, DualEncoderSpec, EncoderSpec};
    use crate::numerics::cosine_similarity;
    use crate::rng::rng_for;

    fn identity_model(d: usize) -> DualEncoder {
        let enc = |seed| EncoderSpec { input_dim: d, hidden_dims: vec![], output_dim: d, activation: Activation::Relu, seed };
        let mut m = DualEncoder::new(DualEncoderSpec {
            image: enc(1),
            text: enc(2),
            embed_dim: d,
            temperature: 0.07,
            learn_temperature: false,
        })
        .unwrap();
        m.set_identity().unwrap();
        m
    }

    fn captions() -> Vec<Tensor> {
        vec![
            Tensor::vector(vec![1.0, 0.0, 0.0]),
            Tensor::vector(vec![0.6, 0.8, 0.0]),
            Tensor::vector(vec![0.0, 0.3, 1.0]),
        ]
    }

    #[test]
    fn self_similarity_wins() {
        let m = identity_model(3);
        let caps = captions();
        assert_eq!(zero_shot_classify(&m, &caps[2], &caps).unwrap(), 2);
        let scaled = Tensor::vector(caps[2].data().iter().map(|v| v * 7.5).collect());
        assert_eq!(zero_shot_classify(&m, &scaled, &caps).unwrap(), 2);
    }

    #[test]
    fn matches_similarity_table_oracle() {
        let m = identity_model(3);
        let caps = captions();
        let mut rng = rng_for(11, &[]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let table: Vec<f64> = caps.iter().map(|c| cosine_similarity(&x, c.data()).unwrap()).collect();
            let mut best = 0;
            for c in 1..table.len() {
                if table[c] > table[best] {
                    best = c;
                }
            }
            assert_eq!(zero_shot_classify(&m, &Tensor::vector(x), &caps).unwrap(), best);
        }
    }

    #[test]
    fn zero_shot_errors() {
        let m = identity_model(3);
        assert!(zero_shot_classify(&m, &Tensor::vector(vec![1.0, 0.0, 0.0]), &[]).is_err());
        assert!(matches!(
            zero_shot_classify(&m, &Tensor::vector(vec![0.0; 3]), &captions()),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let m = identity_model(2);
        let caps = vec![Tensor::vector(vec![1.0, 0.0]), Tensor::vector(vec![2.0, 0.0])];
        assert_eq!(zero_shot_classify(&m, &Tensor::vector(vec![1.0, 1.0]), &caps).unwrap(), 0);
    }

    #[test]
    fn top1_examples() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 100.0);
        assert_eq!(top1_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(top1_accuracy(&[1, 2, 3, 0], &[1, 2, 3, 3]).unwrap(), 75.0);
        assert!(top1_accuracy(&[1], &[1, 2]).is_err());
        assert!(top1_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn macro_f1_examples() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 100.0);
        // class 0: P = 1, R = 1/2 → 2/3; class 1: P = 2/3, R = 1 → 0.8
        let f1 = per_class_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f1[1] - 0.8).abs() < 1e-15);
        let m = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert!((m - 100.0 * (2.0 / 3.0 + 0.8) / 2.0).abs() < 1e-12);
        assert!((m - 73.333_333).abs() < 1e-5);
        assert!(macro_f1(&[0, 1], &[0], 2).is_err());
        assert!(macro_f1(&[5], &[0], 2).is_err());
    }

    #[test]
    fn macro_f1_ignores_absent_classes() {
        // class 2 never appears in truths; its F1 (0) is not averaged in
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 100.0);
    }

    #[test]
    fn random_guessing_on_imbalanced_truths_scores_lower_f1_than_accuracy() {
        let mut rng = rng_for(5, &[]);
        let classes = 20;
        // class c has weight 0.8^c
        let weights: Vec<f64> = (0..classes).map(|c| 0.8f64.powi(c)).collect();
        let total: f64 = weights.iter().sum();
        let truths: Vec<usize> = (0..20_000)
            .map(|_| {
                let mut u = rng.random::<f64>() * total;
                weights.iter().position(|w| {
                    u -= w;
                    u <= 0.0
                }).unwrap_or(classes as usize - 1)
            })
            .collect();
        let preds: Vec<usize> = (0..truths.len()).map(|_| rng.random_range(0..classes as usize)).collect();
        let top1 = top1_accuracy(&preds, &truths).unwrap();
        let f1 = macro_f1(&preds, &truths, classes as usize).unwrap();
        assert!(f1 < top1, "macro F1 {f1} vs top1 {top1}");
    }

    #[test]
    fn baseline_and_gap() {
        assert!((random_baseline(62).unwrap() - 1.612_903).abs() < 1e-6);
        assert_eq!(random_baseline(1).unwrap(), 100.0);
        assert_eq!(random_baseline(200).unwrap(), 0.5);
        assert!(random_baseline(0).is_err());
        assert_eq!(robustness_gap(40.0, 40.0).gap, 0.0);
        assert!((robustness_gap(36.7, 31.8).gap - 4.9).abs() < 1e-12);
        assert!((robustness_gap(55.0, 49.2).gap - 5.8).abs() < 1e-12);
        assert!(robustness_gap(30.0, 31.0).gap < 0.0);
    }

    #[test]
    fn symmetric_confusion_balanced_support_gives_equal_metrics() {
        // 3 classes, 4 samples each; each class confuses one sample into the next class
        let truths: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat(c).take(4)).collect();
        let preds: Vec<usize> = truths
            .iter()
            .enumerate()
            .map(|(i, &t)| if i % 4 == 0 { (t + 1) % 3 } else { t })
            .collect();
        let top1 = top1_accuracy(&preds, &truths).unwrap();
        let f1 = macro_f1(&preds, &truths, 3).unwrap();
        assert!((top1 - f1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_permutation_invariant(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60),
            rot in 0usize..60,
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let n = p.len();
            let pp: Vec<usize> = (0..n).map(|i| p[(i + rot) % n]).collect();
            let tt: Vec<usize> = (0..n).map(|i| t[(i + rot) % n]).collect();
            prop_assert_eq!(top1_accuracy(&p, &t).unwrap(), top1_accuracy(&pp, &tt).unwrap());
            prop_assert!((macro_f1(&p, &t, 5).unwrap() - macro_f1(&pp, &tt, 5).unwrap()).abs() < 1e-12);
            let r = metric_report(&p, &t, 5).unwrap();
            prop_assert!((0.0..=100.0).contains(&r.top1) && (0.0..=100.0).contains(&r.macro_f1));
            prop_assert!(r.per_class_f1.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }
}
