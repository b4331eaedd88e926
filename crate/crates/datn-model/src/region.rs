//! Region features: a small trainable convolutional encoder turns the
//! scene canvas into a grid feature map, which is flattened into region
//! rows and enriched by a bidirectional GRU scan.

use datn_core::{Graph, NodeId, Tensor};
use datn_core::rng::ChaCha8Rng;

use crate::error::ModelError;
use crate::gru::{gru_cell, register_gru};
use crate::params::{glorot_conv, Bound, ModelDims, ParamSet};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionStage {
    Raw,
    Context,
}

/// `C` region feature rows of width `D` living on a graph.
#[derive(Debug, Clone, Copy)]
pub struct RegionGrid {
    pub node: NodeId,
    pub regions: usize,
    pub width: usize,
    pub stage: RegionStage,
}

/// Two stride-2 convolutions: `[3, G, G] -> [D, G/4, G/4]`. Each region
/// sees exactly its own 4x4 pixel cell.
pub struct SceneEncoder;

pub const ENCODER_MID_CHANNELS: usize = 16;

impl SceneEncoder {
    pub fn register(params: &mut ParamSet, rng: &mut ChaCha8Rng, dims: &ModelDims) {
        params.insert("feat.conv1.w", glorot_conv(rng, ENCODER_MID_CHANNELS, 3, 2));
        params.insert("feat.conv1.b", Tensor::zeros(&[ENCODER_MID_CHANNELS]));
        params.insert(
            "feat.conv2.w",
            glorot_conv(rng, dims.feature_width, ENCODER_MID_CHANNELS, 2),
        );
        params.insert("feat.conv2.b", Tensor::zeros(&[dims.feature_width]));
    }

    /// Canvas tensor `[3, G, G]` to feature map `[D, G/4, G/4]`.
    pub fn feature_map(g: &mut Graph, bound: &Bound, canvas: NodeId) -> Result<NodeId> {
        let c1 = g.conv2d(canvas, bound.id("feat.conv1.w"), bound.id("feat.conv1.b"), 2)?;
        let a1 = g.tanh(c1);
        let c2 = g.conv2d(a1, bound.id("feat.conv2.w"), bound.id("feat.conv2.b"), 2)?;
        Ok(g.tanh(c2))
    }
}

/// Flattens a channels-first feature map into raw region rows, scanning
/// the grid row by row, left to right.
pub fn flatten_grid(g: &mut Graph, feature_map: NodeId) -> Result<RegionGrid> {
    let shape = g.value(feature_map).shape().to_vec();
    if shape.len() != 3 {
        return Err(ModelError::Dimensions(format!(
            "feature map must be rank 3, got {shape:?}"
        )));
    }
    let node = g.flatten_map(feature_map)?;
    Ok(RegionGrid {
        node,
        regions: shape[1] * shape[2],
        width: shape[0],
        stage: RegionStage::Raw,
    })
}

/// Registers forward and backward scan GRUs. The hidden width equals the
/// region feature width so the two scans can be summed per region.
pub fn register_bidirectional(params: &mut ParamSet, rng: &mut ChaCha8Rng, dims: &ModelDims) {
    register_gru(params, rng, "enc.fwd", dims.feature_width, dims.feature_width);
    register_gru(params, rng, "enc.bwd", dims.feature_width, dims.feature_width);
}

/// Context-aware region rows: a forward scan over regions 1..C and a
/// backward scan over C..1 from zero states, summed elementwise.
pub fn bidirectional_encode(
    g: &mut Graph,
    bound: &Bound,
    grid: &RegionGrid,
) -> Result<RegionGrid> {
    bidirectional_encode_with(g, bound, "enc.fwd", "enc.bwd", grid)
}

pub fn bidirectional_encode_with(
    g: &mut Graph,
    bound: &Bound,
    fwd_prefix: &str,
    bwd_prefix: &str,
    grid: &RegionGrid,
) -> Result<RegionGrid> {
    let c = grid.regions;
    let rows: Vec<NodeId> = (0..c)
        .map(|i| g.row(grid.node, i))
        .collect::<datn_core::Result<_>>()?;

    let zero = Tensor::zeros(&[grid.width]);
    let mut forward = Vec::with_capacity(c);
    let mut h = g.input(zero.clone());
    for &x in &rows {
        h = gru_cell(g, bound, fwd_prefix, x, h)?;
        forward.push(h);
    }
    let mut backward = vec![None; c];
    let mut h = g.input(zero);
    for i in (0..c).rev() {
        h = gru_cell(g, bound, bwd_prefix, rows[i], h)?;
        backward[i] = Some(h);
    }

    let mut context = Vec::with_capacity(c);
    for i in 0..c {
        context.push(g.add(forward[i], backward[i].expect("filled"))?);
    }
    let node = g.stack_rows(&context)?;
    Ok(RegionGrid {
        node,
        regions: c,
        width: grid.width,
        stage: RegionStage::Context,
    })
}

/// Mean over region rows: `[C, D] -> [D]`. Used by the no-attention
/// ablation as its single global feature.
pub fn mean_pool(g: &mut Graph, grid: &RegionGrid) -> Result<NodeId> {
    let sum = g.col_sum(grid.node)?;
    Ok(g.affine(sum, 1.0 / grid.regions as f64, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use datn_core::rng::{seeded, uniform_tensor};

    fn toy_dims() -> ModelDims {
        ModelDims {
            canvas_side: 16,
            feature_width: 6,
            concepts: 5,
            attention_width: 4,
            hidden: 8,
            question_hidden: 4,
            multimodal_width: 4,
            vocab: 12,
            answers: 4,
        }
    }

    fn raw_grid(g: &mut Graph, rows: usize, width: usize, seed: u64) -> RegionGrid {
        let t = uniform_tensor(&mut seeded(seed), &[rows, width], -1.0, 1.0);
        let node = g.input(t);
        RegionGrid {
            node,
            regions: rows,
            width,
            stage: RegionStage::Raw,
        }
    }

    #[test]
    fn paper_scale_flatten_shape() {
        // 14x14 map of width 512 flattens to 196 regions of width 512.
        let mut g = Graph::new();
        let map = g.input(Tensor::zeros(&[512, 14, 14]));
        let grid = flatten_grid(&mut g, map).unwrap();
        assert_eq!(grid.regions, 196);
        assert_eq!(grid.width, 512);
        assert_eq!(g.value(grid.node).shape(), &[196, 512]);
    }

    #[test]
    fn one_by_one_map_is_identity() {
        let mut g = Graph::new();
        let map = g.input(Tensor::new(vec![3, 1, 1], vec![5.0, -1.0, 2.0]).unwrap());
        let grid = flatten_grid(&mut g, map).unwrap();
        assert_eq!(g.value(grid.node).data(), &[5.0, -1.0, 2.0]);
    }

    #[test]
    fn single_region_context_is_sum_of_both_cells() {
        let mut rng = seeded(4);
        let dims = ModelDims {
            feature_width: 3,
            ..toy_dims()
        };
        let mut params = ParamSet::new();
        register_bidirectional(&mut params, &mut rng, &dims);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let grid = raw_grid(&mut g, 1, 3, 8);
        let ctx = bidirectional_encode(&mut g, &bound, &grid).unwrap();

        // Oracle: one forward cell + one backward cell from zero states.
        let x = g.row(grid.node, 0).unwrap();
        let z = g.input(Tensor::zeros(&[3]));
        let hf = gru_cell(&mut g, &bound, "enc.fwd", x, z).unwrap();
        let z2 = g.input(Tensor::zeros(&[3]));
        let hb = gru_cell(&mut g, &bound, "enc.bwd", x, z2).unwrap();
        let expect = g.add(hf, hb).unwrap();
        assert_eq!(g.value(ctx.node).data(), g.value(expect).data());
    }

    #[test]
    fn three_region_scan_matches_hand_unroll() {
        let mut rng = seeded(21);
        let dims = ModelDims {
            feature_width: 4,
            ..toy_dims()
        };
        let mut params = ParamSet::new();
        register_bidirectional(&mut params, &mut rng, &dims);

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let grid = raw_grid(&mut g, 3, 4, 13);
        let ctx = bidirectional_encode(&mut g, &bound, &grid).unwrap();

        // Manual three-step unroll in both directions.
        let rows: Vec<NodeId> = (0..3).map(|i| g.row(grid.node, i).unwrap()).collect();
        let mut h = g.input(Tensor::zeros(&[4]));
        let mut fwd = Vec::new();
        for &x in &rows {
            h = gru_cell(&mut g, &bound, "enc.fwd", x, h).unwrap();
            fwd.push(h);
        }
        let mut h = g.input(Tensor::zeros(&[4]));
        let mut bwd = vec![None, None, None];
        for i in [2usize, 1, 0] {
            h = gru_cell(&mut g, &bound, "enc.bwd", rows[i], h).unwrap();
            bwd[i] = Some(h);
        }
        for i in 0..3 {
            let expect = g.add(fwd[i], bwd[i].unwrap()).unwrap();
            let expect_vals = g.value(expect).data().to_vec();
            let got = g.row(ctx.node, i).unwrap();
            let got_vals = g.value(got).data();
            for (a, b) in got_vals.iter().zip(&expect_vals) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reversing_regions_and_swapping_scans_reverses_output() {
        let mut rng = seeded(33);
        let dims = ModelDims {
            feature_width: 4,
            ..toy_dims()
        };
        let mut params = ParamSet::new();
        register_bidirectional(&mut params, &mut rng, &dims);

        let values = uniform_tensor(&mut seeded(5), &[4, 4], -1.0, 1.0);
        let reversed_rows: Vec<f64> = (0..4)
            .rev()
            .flat_map(|i| values.data()[i * 4..(i + 1) * 4].to_vec())
            .collect();

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let fwd_grid = RegionGrid {
            node: g.input(values.clone()),
            regions: 4,
            width: 4,
            stage: RegionStage::Raw,
        };
        let out = bidirectional_encode(&mut g, &bound, &fwd_grid).unwrap();
        let rev_grid = RegionGrid {
            node: g.input(Tensor::matrix(4, 4, reversed_rows).unwrap()),
            regions: 4,
            width: 4,
            stage: RegionStage::Raw,
        };
        let swapped =
            bidirectional_encode_with(&mut g, &bound, "enc.bwd", "enc.fwd", &rev_grid).unwrap();

        for i in 0..4 {
            let a = g.value(out.node).data()[i * 4..(i + 1) * 4].to_vec();
            let b = g.value(swapped.node).data()[(3 - i) * 4..(4 - i) * 4].to_vec();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn every_region_influences_every_context_row() {
        // Nonzero sensitivity of each output row to a perturbation of
        // region j, via forward differences on the input grid.
        let mut rng = seeded(55);
        let dims = ModelDims {
            feature_width: 3,
            ..toy_dims()
        };
        let mut params = ParamSet::new();
        register_bidirectional(&mut params, &mut rng, &dims);

        let base = uniform_tensor(&mut seeded(6), &[3, 3], -1.0, 1.0);
        let run = |input: &Tensor| -> Vec<f64> {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, false);
            let grid = RegionGrid {
                node: g.input(input.clone()),
                regions: 3,
                width: 3,
                stage: RegionStage::Raw,
            };
            let ctx = bidirectional_encode(&mut g, &bound, &grid).unwrap();
            g.value(ctx.node).data().to_vec()
        };
        let baseline = run(&base);
        for j in 0..3 {
            let mut bumped = base.clone();
            bumped.data_mut()[j * 3] += 0.1;
            let out = run(&bumped);
            for i in 0..3 {
                let delta: f64 = (0..3)
                    .map(|k| (out[i * 3 + k] - baseline[i * 3 + k]).abs())
                    .sum();
                assert!(delta > 1e-9, "region {j} does not reach context row {i}");
            }
        }
    }

    #[test]
    fn scene_encoder_output_shape() {
        let mut rng = seeded(2);
        let dims = toy_dims();
        let mut params = ParamSet::new();
        SceneEncoder::register(&mut params, &mut rng, &dims);
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let canvas = g.input(Tensor::zeros(&[3, 16, 16]));
        let map = SceneEncoder::feature_map(&mut g, &bound, canvas).unwrap();
        assert_eq!(g.value(map).shape(), &[6, 4, 4]);
        let grid = flatten_grid(&mut g, map).unwrap();
        assert_eq!((grid.regions, grid.width), (16, 6));
    }
}
