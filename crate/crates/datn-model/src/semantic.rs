//! Dual semantic attention between context-aware region features and the
//! active concept columns: similarity matrices in both directions,
//! max-pooled attention weights over regions and over concepts, the two
//! attended representations and their fused concatenation.

use datn_core::{Graph, NodeId, Tensor};
use datn_core::rng::ChaCha8Rng;

use crate::error::ModelError;
use crate::params::{glorot_matrix, Bound, ModelDims, ParamSet};
use crate::region::RegionGrid;
use crate::Result;

/// How a score matrix turns into attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionWeightMode {
    /// Softmax over the row-wise maxima. Weights are positive and sum
    /// to one, so the attended vectors are convex combinations.
    #[default]
    Softmax,
    /// `exp(max_j S_ij - sum_k S_ik)` per row, kept for comparison.
    /// These weights do not normalize to one.
    UnnormalizedRatio,
}

/// Intermediate and final nodes of one semantic-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct SemanticOutput {
    /// Region-to-concept similarity, `C x c`.
    pub region_concept: NodeId,
    /// Concept-to-region similarity, `c x C`.
    pub concept_region: NodeId,
    /// Weights over regions, length `C`.
    pub region_weights: NodeId,
    /// Weights over concepts, length `c`.
    pub concept_weights: NodeId,
    /// Attended region representation, length `D`.
    pub attended_regions: NodeId,
    /// Attended concept representation, length `c`.
    pub attended_concepts: NodeId,
    /// Concatenation `[attended_regions; attended_concepts]`, length `D + c`.
    pub fused: NodeId,
}

/// The eight projection tensors of the semantic attention network. The
/// two projection widths are kept equal by construction.
pub struct SemanticAttention;

impl SemanticAttention {
    pub fn register(params: &mut ParamSet, rng: &mut ChaCha8Rng, dims: &ModelDims) {
        let (d, dd, c) = (dims.attention_width, dims.feature_width, dims.concepts);
        params.insert("sem.region.w", glorot_matrix(rng, d, dd));
        params.insert("sem.region.b", Tensor::zeros(&[d]));
        params.insert("sem.concept.w", glorot_matrix(rng, d, c));
        params.insert("sem.concept.b", Tensor::zeros(&[d]));
        params.insert("sem.concept2.w", glorot_matrix(rng, d, c));
        params.insert("sem.concept2.b", Tensor::zeros(&[d]));
        params.insert("sem.region2.w", glorot_matrix(rng, d, dd));
        params.insert("sem.region2.b", Tensor::zeros(&[d]));
    }

    /// Runs the full pass over context-stage region rows and a concept
    /// matrix node (`c x c`, thresholded one-hot columns).
    pub fn forward(
        g: &mut Graph,
        bound: &Bound,
        grid: &RegionGrid,
        concept_matrix: NodeId,
        mode: AttentionWeightMode,
    ) -> Result<SemanticOutput> {
        let (region_concept, concept_region) =
            similarity_matrices(g, bound, grid, concept_matrix)?;
        let region_weights = attention_weights(g, region_concept, mode)?;
        let concept_weights = attention_weights(g, concept_region, mode)?;
        let (attended_regions, attended_concepts) = attended_representations(
            g,
            region_weights,
            grid,
            concept_weights,
            concept_matrix,
        )?;
        let fused = fuse(g, attended_regions, attended_concepts)?;
        Ok(SemanticOutput {
            region_concept,
            concept_region,
            region_weights,
            concept_weights,
            attended_regions,
            attended_concepts,
            fused,
        })
    }
}

/// Both similarity matrices. With region columns `V` (`D x C`) and the
/// concept matrix `Vc` (`c x c`):
/// `P  = (Wl V  (+) bl)^T (Wc Vc  (+) bc)`  -> `C x c`
/// `P' = (Wc' Vc (+) bc')^T (Wl' V (+) bl')` -> `c x C`
/// where `(+)` adds the bias vector to every column.
pub fn similarity_matrices(
    g: &mut Graph,
    bound: &Bound,
    grid: &RegionGrid,
    concept_matrix: NodeId,
) -> Result<(NodeId, NodeId)> {
    let cm_shape = g.value(concept_matrix).shape().to_vec();
    if cm_shape.len() != 2 || cm_shape[0] != cm_shape[1] {
        return Err(ModelError::Dimensions(format!(
            "concept matrix must be square, got {cm_shape:?}"
        )));
    }
    let region_cols = g.transpose(grid.node)?; // D x C

    let lp = g.matmul(bound.id("sem.region.w"), region_cols)?;
    let left = g.add_col_vec(lp, bound.id("sem.region.b"))?;
    let cp = g.matmul(bound.id("sem.concept.w"), concept_matrix)?;
    let right = g.add_col_vec(cp, bound.id("sem.concept.b"))?;
    let left_t = g.transpose(left)?;
    let region_concept = g.matmul(left_t, right)?;

    let cp2 = g.matmul(bound.id("sem.concept2.w"), concept_matrix)?;
    let left2 = g.add_col_vec(cp2, bound.id("sem.concept2.b"))?;
    let lp2 = g.matmul(bound.id("sem.region2.w"), region_cols)?;
    let right2 = g.add_col_vec(lp2, bound.id("sem.region2.b"))?;
    let left2_t = g.transpose(left2)?;
    let concept_region = g.matmul(left2_t, right2)?;

    Ok((region_concept, concept_region))
}

/// Attention weights from a score matrix: one weight per row, driven by
/// that row's maximum score.
pub fn attention_weights(
    g: &mut Graph,
    scores: NodeId,
    mode: AttentionWeightMode,
) -> Result<NodeId> {
    let maxima = g.row_max(scores)?;
    match mode {
        AttentionWeightMode::Softmax => Ok(g.softmax_vec(maxima)?),
        AttentionWeightMode::UnnormalizedRatio => {
            let sums = g.row_sum(scores)?;
            let diff = g.sub(maxima, sums)?;
            Ok(g.exp(diff))
        }
    }
}

/// Weighted sums: regions weighted into a `D` vector, concept columns
/// weighted into a `c` vector.
pub fn attended_representations(
    g: &mut Graph,
    region_weights: NodeId,
    grid: &RegionGrid,
    concept_weights: NodeId,
    concept_matrix: NodeId,
) -> Result<(NodeId, NodeId)> {
    let region_cols = g.transpose(grid.node)?; // D x C
    let attended_regions = g.matmul(region_cols, region_weights)?;
    let attended_concepts = g.matmul(concept_matrix, concept_weights)?;
    Ok((attended_regions, attended_concepts))
}

/// Concatenates the two attended vectors, regions first.
pub fn fuse(g: &mut Graph, attended_regions: NodeId, attended_concepts: NodeId) -> Result<NodeId> {
    Ok(g.concat(&[attended_regions, attended_concepts])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::RegionStage;
    use datn_core::rng::{seeded, uniform_tensor};

    fn dims(c_regions: usize, d_feat: usize, c_concepts: usize, d_attn: usize) -> ModelDims {
        let _ = c_regions;
        ModelDims {
            canvas_side: 16,
            feature_width: d_feat,
            concepts: c_concepts,
            attention_width: d_attn,
            hidden: 8,
            question_hidden: 4,
            multimodal_width: 4,
            vocab: 10,
            answers: 4,
        }
    }

    fn grid_of(g: &mut Graph, t: Tensor) -> RegionGrid {
        let (r, w) = (t.shape()[0], t.shape()[1]);
        RegionGrid {
            node: g.input(t),
            regions: r,
            width: w,
            stage: RegionStage::Context,
        }
    }

    fn zero_params(d_feat: usize, c: usize, d: usize) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("sem.region.w", Tensor::zeros(&[d, d_feat]));
        p.insert("sem.region.b", Tensor::zeros(&[d]));
        p.insert("sem.concept.w", Tensor::zeros(&[d, c]));
        p.insert("sem.concept.b", Tensor::zeros(&[d]));
        p.insert("sem.concept2.w", Tensor::zeros(&[d, c]));
        p.insert("sem.concept2.b", Tensor::zeros(&[d]));
        p.insert("sem.region2.w", Tensor::zeros(&[d, d_feat]));
        p.insert("sem.region2.b", Tensor::zeros(&[d]));
        p
    }

    fn random_params(rng: &mut ChaCha8Rng, dm: &ModelDims) -> ParamSet {
        let mut p = ParamSet::new();
        SemanticAttention::register(&mut p, rng, dm);
        p
    }

    #[test]
    fn zero_parameters_zero_similarities() {
        let dm = dims(3, 4, 2, 5);
        let params = zero_params(4, 2, 5);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let grid = grid_of(&mut g, uniform_tensor(&mut seeded(1), &[3, 4], -1.0, 1.0));
        let vc = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let out = SemanticAttention::forward(&mut g, &bound, &grid, vc, Default::default()).unwrap();
        assert!(g.value(out.region_concept).data().iter().all(|&v| v == 0.0));
        assert!(g.value(out.concept_region).data().iter().all(|&v| v == 0.0));
        // All-equal scores give uniform weights.
        for &w in g.value(out.region_weights).data() {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        let _ = dm;
    }

    #[test]
    fn scalar_case_matches_hand_expansion() {
        // Single region, single concept, width-1 projections:
        // P = (wl*v + bl) * (wc*vc + bc).
        let mut p = ParamSet::new();
        p.insert("sem.region.w", Tensor::matrix(1, 1, vec![0.8]).unwrap());
        p.insert("sem.region.b", Tensor::vector(vec![0.25]));
        p.insert("sem.concept.w", Tensor::matrix(1, 1, vec![-1.2]).unwrap());
        p.insert("sem.concept.b", Tensor::vector(vec![0.4]));
        p.insert("sem.concept2.w", Tensor::matrix(1, 1, vec![0.6]).unwrap());
        p.insert("sem.concept2.b", Tensor::vector(vec![-0.1]));
        p.insert("sem.region2.w", Tensor::matrix(1, 1, vec![1.5]).unwrap());
        p.insert("sem.region2.b", Tensor::vector(vec![0.0]));

        let (v, vc) = (0.7, 1.0);
        let mut g = Graph::new();
        let bound = p.bind(&mut g, false);
        let grid = grid_of(&mut g, Tensor::matrix(1, 1, vec![v]).unwrap());
        let vcn = g.input(Tensor::matrix(1, 1, vec![vc]).unwrap());
        let (rc, cr) = similarity_matrices(&mut g, &bound, &grid, vcn).unwrap();
        let expect_rc = (0.8 * v + 0.25) * (-1.2 * vc + 0.4);
        let expect_cr = (0.6 * vc - 0.1) * (1.5 * v + 0.0);
        assert!((g.value(rc).item() - expect_rc).abs() < 1e-12);
        assert!((g.value(cr).item() - expect_cr).abs() < 1e-12);
    }

    #[test]
    fn random_similarities_match_double_loop_oracle() {
        let mut rng = seeded(40);
        let dm = dims(4, 3, 5, 6);
        let params = random_params(&mut rng, &dm);
        let regions = uniform_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let probs = uniform_tensor(&mut rng, &[5], 0.0, 1.0);
        let vc = crate::concept::concept_set(probs.data(), 0.5).unwrap();

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let grid = grid_of(&mut g, regions.clone());
        let vcn = g.input(vc.clone());
        let (rc, cr) = similarity_matrices(&mut g, &bound, &grid, vcn).unwrap();

        // Oracle: explicit loops over the definition.
        let (d, dd, c, cc) = (6usize, 3usize, 4usize, 5usize);
        let wl = params.get("sem.region.w").unwrap();
        let bl = params.get("sem.region.b").unwrap();
        let wc = params.get("sem.concept.w").unwrap();
        let bc = params.get("sem.concept.b").unwrap();
        let mut left = vec![0.0; d * c]; // d x C
        for k in 0..d {
            for i in 0..c {
                let mut acc = bl.data()[k];
                for j in 0..dd {
                    acc += wl.at2(k, j) * regions.at2(i, j);
                }
                left[k * c + i] = acc;
            }
        }
        let mut right = vec![0.0; d * cc];
        for k in 0..d {
            for i in 0..cc {
                let mut acc = bc.data()[k];
                for j in 0..cc {
                    acc += wc.at2(k, j) * vc.at2(j, i);
                }
                right[k * cc + i] = acc;
            }
        }
        for i in 0..c {
            for j in 0..cc {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += left[k * c + i] * right[k * cc + j];
                }
                assert!((g.value(rc).at2(i, j) - acc).abs() < 1e-12);
            }
        }
        // Spot-check the reverse direction's shape and a corner value.
        assert_eq!(g.value(cr).shape(), &[5, 4]);
    }

    #[test]
    fn softmax_weights_from_row_maxima() {
        let mut g = Graph::new();
        // Row maxima ln 2 and 0 give weights 2/3 and 1/3.
        let s = g.input(Tensor::matrix(2, 2, vec![(2.0f64).ln(), -1.0, 0.0, -3.0]).unwrap());
        let w = attention_weights(&mut g, s, AttentionWeightMode::Softmax).unwrap();
        let vals = g.value(w).data();
        assert!((vals[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_weight_is_one() {
        let mut g = Graph::new();
        let s = g.input(Tensor::matrix(1, 3, vec![0.3, -2.0, 1.4]).unwrap());
        let w = attention_weights(&mut g, s, AttentionWeightMode::Softmax).unwrap();
        assert_eq!(g.value(w).data(), &[1.0]);
    }

    #[test]
    fn unnormalized_ratio_matches_printed_form() {
        let mut g = Graph::new();
        let rows = vec![0.5, -0.25, 1.0, 0.75];
        let s = g.input(Tensor::matrix(2, 2, rows.clone()).unwrap());
        let w = attention_weights(&mut g, s, AttentionWeightMode::UnnormalizedRatio).unwrap();
        let expect0 = (0.5f64.max(-0.25) - (0.5 - 0.25)).exp();
        let expect1 = (1.0f64.max(0.75) - (1.0 + 0.75)).exp();
        assert!((g.value(w).data()[0] - expect0).abs() < 1e-12);
        assert!((g.value(w).data()[1] - expect1).abs() < 1e-12);
    }

    #[test]
    fn one_hot_weights_select_a_region() {
        let mut g = Graph::new();
        let regions = uniform_tensor(&mut seeded(3), &[4, 3], -1.0, 1.0);
        let grid = grid_of(&mut g, regions.clone());
        let alpha = g.input(Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]));
        let beta = g.input(Tensor::vector(vec![1.0, 0.0]));
        let vc = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let (vr, _) = attended_representations(&mut g, alpha, &grid, beta, vc).unwrap();
        assert_eq!(g.value(vr).data(), &regions.data()[6..9]);
    }

    #[test]
    fn uniform_weights_average_regions() {
        let mut g = Graph::new();
        let regions = Tensor::matrix(2, 2, vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let grid = grid_of(&mut g, regions);
        let alpha = g.input(Tensor::vector(vec![0.5, 0.5]));
        let beta = g.input(Tensor::vector(vec![0.5, 0.5]));
        let vc = g.input(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let (vr, vcw) = attended_representations(&mut g, alpha, &grid, beta, vc).unwrap();
        assert_eq!(g.value(vr).data(), &[3.0, 5.0]);
        assert_eq!(g.value(vcw).data(), &[0.5, 0.5]);
    }

    #[test]
    fn random_attended_sums_match_loop_oracle() {
        let mut rng = seeded(77);
        let regions = uniform_tensor(&mut rng, &[5, 4], -2.0, 2.0);
        let alpha = uniform_tensor(&mut rng, &[5], 0.0, 1.0);
        let probs = uniform_tensor(&mut rng, &[3], 0.0, 1.0);
        let vc = crate::concept::concept_set(probs.data(), 0.4).unwrap();
        let beta = uniform_tensor(&mut rng, &[3], 0.0, 1.0);

        let mut oracle_r = vec![0.0; 4];
        for i in 0..5 {
            for k in 0..4 {
                oracle_r[k] += alpha.data()[i] * regions.at2(i, k);
            }
        }
        let mut oracle_c = vec![0.0; 3];
        for i in 0..3 {
            for k in 0..3 {
                oracle_c[k] += beta.data()[i] * vc.at2(k, i);
            }
        }

        let mut g = Graph::new();
        let grid = grid_of(&mut g, regions);
        let a = g.input(alpha);
        let b = g.input(beta);
        let vcn = g.input(vc);
        let (vr, vcw) = attended_representations(&mut g, a, &grid, b, vcn).unwrap();
        for (got, want) in g.value(vr).data().iter().zip(&oracle_r) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in g.value(vcw).data().iter().zip(&oracle_c) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fuse_concatenates_regions_then_concepts() {
        let mut g = Graph::new();
        let a = g.input(Tensor::vector(vec![1.0, 2.0]));
        let b = g.input(Tensor::vector(vec![3.0]));
        let f = fuse(&mut g, a, b).unwrap();
        assert_eq!(g.value(f).data(), &[1.0, 2.0, 3.0]);
        // Splitting at the region width recovers both parts.
        let (head, tail) = g.value(f).data().split_at(2);
        assert_eq!(head, g.value(a).data());
        assert_eq!(tail, g.value(b).data());
    }

    #[test]
    fn weights_are_positive_and_normalized() {
        let mut rng = seeded(50);
        let dm = dims(6, 4, 5, 3);
        let params = random_params(&mut rng, &dm);
        for trial in 0..50 {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let grid = grid_of(
                &mut g,
                uniform_tensor(&mut seeded(trial), &[6, 4], -2.0, 2.0),
            );
            let probs = uniform_tensor(&mut seeded(trial + 1000), &[5], 0.0, 1.0);
            let vc = g.input(crate::concept::concept_set(probs.data(), 0.5).unwrap());
            let out =
                SemanticAttention::forward(&mut g, &bound, &grid, vc, Default::default()).unwrap();
            for weights in [out.region_weights, out.concept_weights] {
                let vals = g.value(weights).data();
                assert!(vals.iter().all(|&v| v > 0.0));
                assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
            // The attended concept vector lies in the span of selected
            // basis vectors: inactive concepts contribute zero entries.
            let vc_vals = crate::concept::concept_set(probs.data(), 0.5).unwrap();
            let attended = g.value(out.attended_concepts).data();
            for i in 0..5 {
                if vc_vals.at2(i, i) == 0.0 {
                    assert_eq!(attended[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn permuting_concept_columns_permutes_concept_weights_only() {
        let mut rng = seeded(71);
        let dm = dims(4, 3, 4, 5);
        let params = random_params(&mut rng, &dm);
        let regions = uniform_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let probs = [0.9, 0.2, 0.8, 0.7];
        let vc = crate::concept::concept_set(&probs, 0.5).unwrap();

        // Reorder the columns of the concept matrix: new column perm[j]
        // is old column j.
        let perm = [2usize, 0, 3, 1];
        let mut vc_perm_data = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                vc_perm_data[i * 4 + perm[j]] = vc.at2(i, j);
            }
        }

        let run = |vc_data: Tensor| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let grid = grid_of(&mut g, regions.clone());
            let vcn = g.input(vc_data);
            let out =
                SemanticAttention::forward(&mut g, &bound, &grid, vcn, Default::default()).unwrap();
            (
                g.value(out.region_weights).data().to_vec(),
                g.value(out.concept_weights).data().to_vec(),
                g.value(out.attended_regions).data().to_vec(),
                g.value(out.attended_concepts).data().to_vec(),
            )
        };
        let (rw, cw, vr, vcw) = run(vc.clone());
        let (rw_p, cw_p, vr_p, vcw_p) = run(Tensor::matrix(4, 4, vc_perm_data).unwrap());

        // Row maxima of the region-to-concept scores are column-order
        // invariant, so region weights and attended regions match.
        for (a, b) in rw.iter().zip(&rw_p) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in vr.iter().zip(&vr_p) {
            assert!((a - b).abs() < 1e-12);
        }
        // Concept weights follow the permutation; the weighted column
        // sum cancels it out.
        for i in 0..4 {
            assert!((cw[i] - cw_p[perm[i]]).abs() < 1e-12);
        }
        for (a, b) in vcw.iter().zip(&vcw_p) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
