//! Multi-label concept prediction: a small convolutional classifier with
//! a sigmoid output per concept, its cross-entropy training loss, and
//! the thresholded concept-set matrix consumed by the attention network.

use datn_core::{Graph, NodeId, Tensor};
use datn_core::rng::ChaCha8Rng;

use crate::error::ModelError;
use crate::params::{glorot_conv, glorot_matrix, Bound, ModelDims, ParamSet};
use crate::Result;

/// Concept probabilities plus the derived concept-set matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptState {
    /// Per-concept probability vector, entries in (0, 1).
    pub probabilities: Vec<f64>,
    /// c x c matrix whose column i is the basis vector e_i when
    /// `probabilities[i] >= threshold`, all-zero otherwise.
    pub concept_matrix: Tensor,
    pub threshold: f64,
}

/// Column-thresholded concept matrix. The comparison is inclusive:
/// a probability exactly at the threshold activates its column.
pub fn concept_set(probabilities: &[f64], threshold: f64) -> Result<Tensor> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(ModelError::InvalidThreshold(threshold));
    }
    let c = probabilities.len();
    let mut data = vec![0.0; c * c];
    for (i, &p) in probabilities.iter().enumerate() {
        if p >= threshold {
            data[i * c + i] = 1.0;
        }
    }
    Ok(Tensor::matrix(c, c, data).expect("square"))
}

impl ConceptState {
    pub fn new(probabilities: Vec<f64>, threshold: f64) -> Result<Self> {
        let concept_matrix = concept_set(&probabilities, threshold)?;
        Ok(ConceptState {
            probabilities,
            concept_matrix,
            threshold,
        })
    }

    /// Indices of the active concepts.
    pub fn active(&self) -> Vec<usize> {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(_, &p)| p >= self.threshold)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Two stride-2 convolution stages and a dense layer to `c` sigmoid
/// outputs.
pub struct ConceptPredictor;

const CONV1_CHANNELS: usize = 8;
const CONV2_CHANNELS: usize = 16;

impl ConceptPredictor {
    pub fn register(params: &mut ParamSet, rng: &mut ChaCha8Rng, dims: &ModelDims) {
        let grid = dims.grid();
        params.insert("concept.conv1.w", glorot_conv(rng, CONV1_CHANNELS, 3, 2));
        params.insert("concept.conv1.b", Tensor::zeros(&[CONV1_CHANNELS]));
        params.insert(
            "concept.conv2.w",
            glorot_conv(rng, CONV2_CHANNELS, CONV1_CHANNELS, 2),
        );
        params.insert("concept.conv2.b", Tensor::zeros(&[CONV2_CHANNELS]));
        params.insert(
            "concept.out.w",
            glorot_matrix(rng, dims.concepts, CONV2_CHANNELS * grid * grid),
        );
        params.insert("concept.out.b", Tensor::zeros(&[dims.concepts]));
    }

    /// Canvas `[3, G, G]` to concept probabilities `(0,1)^c`.
    pub fn predict(g: &mut Graph, bound: &Bound, canvas: NodeId) -> Result<NodeId> {
        let c1 = g.conv2d(
            canvas,
            bound.id("concept.conv1.w"),
            bound.id("concept.conv1.b"),
            2,
        )?;
        let a1 = g.tanh(c1);
        let c2 = g.conv2d(a1, bound.id("concept.conv2.w"), bound.id("concept.conv2.b"), 2)?;
        let a2 = g.tanh(c2);
        let flat = g.reshape_vec(a2);
        let logits_w = g.matmul(bound.id("concept.out.w"), flat)?;
        let logits = g.add(logits_w, bound.id("concept.out.b"))?;
        Ok(g.sigmoid(logits))
    }
}

/// Mean over the batch of the summed per-concept binary cross entropies:
/// `-(1/N) sum_i sum_j [y log v + (1-y) log(1-v)]`. Normalized by the
/// batch size only, not by the concept count.
pub fn multilabel_loss(
    g: &mut Graph,
    predictions: &[NodeId],
    targets: &[Vec<u8>],
) -> Result<NodeId> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(ModelError::Dimensions(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut acc: Option<NodeId> = None;
    for (&pred, target) in predictions.iter().zip(targets) {
        let values = g.value(pred);
        if values.numel() != target.len() {
            return Err(ModelError::Dimensions(format!(
                "prediction width {} vs target width {}",
                values.numel(),
                target.len()
            )));
        }
        for &v in values.data() {
            if !(0.0 < v && v < 1.0) {
                return Err(ModelError::ProbabilityOutOfRange { value: v });
            }
        }
        let y: Vec<f64> = target.iter().map(|&b| f64::from(b)).collect();
        let y_not: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        let y_node = g.input(Tensor::vector(y));
        let y_not_node = g.input(Tensor::vector(y_not));

        let log_p = g.log(pred)?;
        let one_minus = g.affine(pred, -1.0, 1.0);
        let log_q = g.log(one_minus)?;
        let pos = g.matmul(y_node, log_p)?;
        let neg = g.matmul(y_not_node, log_q)?;
        let item = g.add(pos, neg)?;
        acc = Some(match acc {
            Some(a) => g.add(a, item)?,
            None => item,
        });
    }
    let n = predictions.len() as f64;
    Ok(g.affine(acc.expect("non-empty batch"), -1.0 / n, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use datn_core::rng::{seeded, uniform_tensor};

    fn toy_dims() -> ModelDims {
        ModelDims {
            canvas_side: 16,
            feature_width: 6,
            concepts: 3,
            attention_width: 4,
            hidden: 8,
            question_hidden: 4,
            multimodal_width: 4,
            vocab: 12,
            answers: 4,
        }
    }

    #[test]
    fn concept_set_thresholds_inclusively() {
        let t = concept_set(&[0.7, 0.3, 0.9], 0.6).unwrap();
        assert_eq!(
            t.data(),
            &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
        );
        // Inclusive boundary: exactly at the threshold counts.
        let b = concept_set(&[0.6], 0.6).unwrap();
        assert_eq!(b.data(), &[1.0]);
    }

    #[test]
    fn concept_set_extremes() {
        let zero = concept_set(&[0.1, 0.2], 0.6).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let eye = concept_set(&[0.9, 0.8], 0.6).unwrap();
        assert_eq!(eye.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn raising_threshold_never_adds_columns() {
        let mut rng = seeded(12);
        for _ in 0..100 {
            let probs = uniform_tensor(&mut rng, &[6], 0.01, 0.99).data().to_vec();
            let low = concept_set(&probs, 0.3).unwrap();
            let high = concept_set(&probs, 0.7).unwrap();
            for (l, h) in low.data().iter().zip(high.data()) {
                assert!(h <= l, "raising the threshold activated a column");
            }
        }
    }

    #[test]
    fn uniform_half_prediction_loss_is_two_ln_two() {
        let mut g = Graph::new();
        let pred = g.input(Tensor::vector(vec![0.5, 0.5]));
        let loss = multilabel_loss(&mut g, &[pred], &[vec![1, 0]]).unwrap();
        assert!((g.value(loss).item() - 2.0 * (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_prediction_drives_loss_to_zero() {
        let mut g = Graph::new();
        let pred = g.input(Tensor::vector(vec![1.0 - 1e-12, 1e-12]));
        let loss = multilabel_loss(&mut g, &[pred], &[vec![1, 0]]).unwrap();
        assert!(g.value(loss).item() < 1e-10);
        assert!(g.value(loss).item() >= 0.0);
    }

    #[test]
    fn random_batch_matches_double_loop_oracle() {
        let mut rng = seeded(31);
        let mut g = Graph::new();
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        let mut oracle = 0.0;
        let n = 4;
        for i in 0..n {
            let p = uniform_tensor(&mut rng, &[5], 0.05, 0.95);
            let y: Vec<u8> = (0..5).map(|j| ((i + j) % 2) as u8).collect();
            for j in 0..5 {
                let (pj, yj) = (p.data()[j], f64::from(y[j]));
                oracle += yj * pj.ln() + (1.0 - yj) * (1.0 - pj).ln();
            }
            preds.push(g.input(p));
            targets.push(y);
        }
        oracle *= -1.0 / n as f64;
        let loss = multilabel_loss(&mut g, &preds, &targets).unwrap();
        assert!((g.value(loss).item() - oracle).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let mut g = Graph::new();
        let pred = g.input(Tensor::vector(vec![0.5, 1.0]));
        let err = multilabel_loss(&mut g, &[pred], &[vec![1, 0]]).unwrap_err();
        assert!(matches!(err, ModelError::ProbabilityOutOfRange { .. }));
    }

    #[test]
    fn zero_final_layer_predicts_one_half_everywhere() {
        let mut rng = seeded(8);
        let dims = toy_dims();
        let mut params = ParamSet::new();
        ConceptPredictor::register(&mut params, &mut rng, &dims);
        params.set("concept.out.w", Tensor::zeros(&[3, 16 * 16]));
        params.set("concept.out.b", Tensor::zeros(&[3]));

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let canvas = g.input(uniform_tensor(&mut rng, &[3, 16, 16], 0.0, 1.0));
        let probs = ConceptPredictor::predict(&mut g, &bound, canvas).unwrap();
        for &v in g.value(probs).data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn predictions_stay_strictly_inside_unit_interval() {
        let mut rng = seeded(14);
        let dims = toy_dims();
        let mut params = ParamSet::new();
        ConceptPredictor::register(&mut params, &mut rng, &dims);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let canvas = g.input(uniform_tensor(&mut rng, &[3, 16, 16], 0.0, 1.0));
        let probs = ConceptPredictor::predict(&mut g, &bound, canvas).unwrap();
        for &v in g.value(probs).data() {
            assert!(0.0 < v && v < 1.0);
        }
    }
}
