//! Caption head: word embedding, word-guided soft attention over the
//! context-aware regions, a scalar gate deciding how much of the fused
//! semantic vector enters each step, GRU decoding with a vocabulary
//! softmax, the teacher-forced loss, and greedy/beam inference.

use datn_core::{Graph, NodeId, Tensor};
use datn_core::rng::ChaCha8Rng;

use crate::error::ModelError;
use crate::gru::{gru_cell, register_gru};
use crate::params::{glorot_matrix, Bound, ModelDims, ParamSet};
use crate::region::{
    bidirectional_encode, flatten_grid, mean_pool, register_bidirectional, RegionGrid,
    SceneEncoder,
};
use crate::semantic::{AttentionWeightMode, SemanticAttention, SemanticOutput};
use crate::Result;

/// Caption-task ablations, from bare decoder to the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionAblation {
    /// Mean-pooled raw region feature only; no attention networks.
    NoneAtt,
    /// Word-guided attention only.
    WordAttention,
    /// Word- plus semantic-guided attention with the gate pinned to 1.
    WordSemantic,
    /// Both attentions with the learned gate.
    Full,
}

impl CaptionAblation {
    pub const ALL: [CaptionAblation; 4] = [
        CaptionAblation::NoneAtt,
        CaptionAblation::WordAttention,
        CaptionAblation::WordSemantic,
        CaptionAblation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CaptionAblation::NoneAtt => "none-att",
            CaptionAblation::WordAttention => "wa",
            CaptionAblation::WordSemantic => "wsa",
            CaptionAblation::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none-att" | "none_att" => Some(CaptionAblation::NoneAtt),
            "wa" => Some(CaptionAblation::WordAttention),
            "wsa" => Some(CaptionAblation::WordSemantic),
            "full" => Some(CaptionAblation::Full),
            _ => None,
        }
    }

    fn uses_regions(self) -> bool {
        self != CaptionAblation::NoneAtt
    }

    fn uses_semantic(self) -> bool {
        matches!(self, CaptionAblation::WordSemantic | CaptionAblation::Full)
    }

    fn uses_gate(self) -> bool {
        self == CaptionAblation::Full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Per-step record of one decoded token.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    pub token: usize,
    /// Word-guided region weights, absent for the no-attention variant.
    pub region_weights: Option<Vec<f64>>,
    /// Gate value, present only for the full model.
    pub gate: Option<f64>,
    pub log_prob: f64,
}

/// Trace of a full decode: per-step records plus the per-scene semantic
/// weights when the semantic pathway is active.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeTrace {
    pub steps: Vec<DecodeStep>,
    pub semantic_region_weights: Option<Vec<f64>>,
    pub semantic_concept_weights: Option<Vec<f64>>,
}

/// On-graph scene state shared by every decode step.
pub struct SceneContext {
    pub raw: RegionGrid,
    pub context: Option<RegionGrid>,
    pub semantic: Option<SemanticOutput>,
    pub pooled: Option<NodeId>,
}

/// One training or decoding item.
pub struct CaptionItem<'a> {
    /// Scene canvas `[3, G, G]`.
    pub canvas: &'a Tensor,
    /// Thresholded concept matrix `c x c`.
    pub concepts: &'a Tensor,
    /// Token ids including the framing start/end tokens.
    pub caption: &'a [usize],
}

pub struct DecoderStep {
    pub hidden: NodeId,
    pub logits: NodeId,
    pub region_weights: Option<NodeId>,
    pub gate: Option<NodeId>,
}

pub struct CaptionModel {
    pub dims: ModelDims,
    pub ablation: CaptionAblation,
    pub weight_mode: AttentionWeightMode,
    pub params: ParamSet,
}

impl CaptionModel {
    pub fn new(
        dims: ModelDims,
        ablation: CaptionAblation,
        weight_mode: AttentionWeightMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        SceneEncoder::register(&mut params, rng, &dims);
        if ablation.uses_regions() {
            register_bidirectional(&mut params, rng, &dims);
            params.insert(
                "dec.attn.w",
                glorot_matrix(rng, dims.feature_width, 1), // stored [D,1], used as a vector
            );
            params.insert(
                "dec.attn.u",
                glorot_matrix(rng, dims.regions(), dims.hidden),
            );
            params.insert("dec.attn.b", Tensor::zeros(&[dims.regions()]));
        }
        if ablation.uses_semantic() {
            SemanticAttention::register(&mut params, rng, &dims);
        }
        if ablation.uses_gate() {
            params.insert("dec.gate.w", glorot_matrix(rng, 1, dims.hidden));
            params.insert("dec.gate.b", Tensor::zeros(&[]));
        }
        params.insert("dec.emb", glorot_matrix(rng, dims.vocab, dims.hidden));
        let input_width = Self::input_width_for(&dims, ablation);
        register_gru(&mut params, rng, "dec.gru", input_width, dims.hidden);
        params.insert("dec.out.w", glorot_matrix(rng, dims.vocab, dims.hidden));
        params.insert("dec.out.b", Tensor::zeros(&[dims.vocab]));
        Ok(CaptionModel {
            dims,
            ablation,
            weight_mode,
            params,
        })
    }

    fn input_width_for(dims: &ModelDims, ablation: CaptionAblation) -> usize {
        let base = dims.hidden + dims.feature_width;
        if ablation.uses_semantic() {
            base + dims.fused_width()
        } else {
            base
        }
    }

    /// Encodes a scene once; the result feeds every decode step.
    pub fn prepare_scene(
        &self,
        g: &mut Graph,
        bound: &Bound,
        canvas: &Tensor,
        concepts: &Tensor,
    ) -> Result<SceneContext> {
        let canvas_node = g.input(canvas.clone());
        let map = SceneEncoder::feature_map(g, bound, canvas_node)?;
        let raw = flatten_grid(g, map)?;
        if !self.ablation.uses_regions() {
            let pooled = mean_pool(g, &raw)?;
            return Ok(SceneContext {
                raw,
                context: None,
                semantic: None,
                pooled: Some(pooled),
            });
        }
        let context = bidirectional_encode(g, bound, &raw)?;
        let semantic = if self.ablation.uses_semantic() {
            let vc = g.input(concepts.clone());
            Some(SemanticAttention::forward(
                g,
                bound,
                &context,
                vc,
                self.weight_mode,
            )?)
        } else {
            None
        };
        Ok(SceneContext {
            raw,
            context: Some(context),
            semantic,
            pooled: None,
        })
    }

    fn embed(&self, g: &mut Graph, bound: &Bound, token: usize) -> Result<NodeId> {
        if token >= self.dims.vocab {
            return Err(ModelError::TokenOutOfRange {
                token,
                vocab: self.dims.vocab,
            });
        }
        Ok(g.row(bound.id("dec.emb"), token)?)
    }

    /// Soft attention over context regions driven by the previous hidden
    /// state: `softmax(tanh(V w + U h + b))` and the weighted region sum.
    fn word_attention(
        &self,
        g: &mut Graph,
        bound: &Bound,
        grid: &RegionGrid,
        h_prev: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let w_vec = g.reshape_vec(bound.id("dec.attn.w"));
        let content = g.matmul(grid.node, w_vec)?; // [C]
        let recur = g.matmul(bound.id("dec.attn.u"), h_prev)?; // [C]
        let sum = g.add(content, recur)?;
        let pre = g.add(sum, bound.id("dec.attn.b"))?;
        let scores = g.tanh(pre);
        let alpha = g.softmax_vec(scores)?;
        let cols = g.transpose(grid.node)?;
        let attended = g.matmul(cols, alpha)?;
        Ok((alpha, attended))
    }

    fn context_gate(&self, g: &mut Graph, bound: &Bound, h_prev: NodeId) -> Result<NodeId> {
        let w_vec = g.reshape_vec(bound.id("dec.gate.w"));
        let dot = g.matmul(w_vec, h_prev)?;
        let pre = g.add(dot, bound.id("dec.gate.b"))?;
        Ok(g.sigmoid(pre))
    }

    /// One decode step: consumes the previous token and hidden state,
    /// yields the new hidden state and vocabulary logits.
    pub fn step(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ctx: &SceneContext,
        prev_token: usize,
        h_prev: NodeId,
    ) -> Result<DecoderStep> {
        let embedded = self.embed(g, bound, prev_token)?;
        let mut region_weights = None;
        let mut gate = None;
        let input = match self.ablation {
            CaptionAblation::NoneAtt => {
                let pooled = ctx.pooled.expect("pooled feature for none-att");
                g.concat(&[embedded, pooled])?
            }
            CaptionAblation::WordAttention => {
                let grid = ctx.context.as_ref().expect("context regions");
                let (alpha, attended) = self.word_attention(g, bound, grid, h_prev)?;
                region_weights = Some(alpha);
                g.concat(&[embedded, attended])?
            }
            CaptionAblation::WordSemantic => {
                let grid = ctx.context.as_ref().expect("context regions");
                let semantic = ctx.semantic.as_ref().expect("semantic output");
                let (alpha, attended) = self.word_attention(g, bound, grid, h_prev)?;
                region_weights = Some(alpha);
                g.concat(&[embedded, attended, semantic.fused])?
            }
            CaptionAblation::Full => {
                let grid = ctx.context.as_ref().expect("context regions");
                let semantic = ctx.semantic.as_ref().expect("semantic output");
                let (alpha, attended) = self.word_attention(g, bound, grid, h_prev)?;
                region_weights = Some(alpha);
                let gate_value = self.context_gate(g, bound, h_prev)?;
                gate = Some(gate_value);
                let gated = g.scalar_mul(gate_value, semantic.fused)?;
                g.concat(&[embedded, attended, gated])?
            }
        };
        let hidden = gru_cell(g, bound, "dec.gru", input, h_prev)?;
        let projected = g.matmul(bound.id("dec.out.w"), hidden)?;
        let logits = g.add(projected, bound.id("dec.out.b"))?;
        Ok(DecoderStep {
            hidden,
            logits,
            region_weights,
            gate,
        })
    }

    pub fn zero_state(&self, g: &mut Graph) -> NodeId {
        g.input(Tensor::zeros(&[self.dims.hidden]))
    }

    /// Teacher-forced negative log-likelihood, averaged over items only.
    /// Returns the loss node and the total predicted-token count.
    pub fn teacher_forced_loss(
        &self,
        g: &mut Graph,
        bound: &Bound,
        items: &[CaptionItem],
    ) -> Result<(NodeId, usize)> {
        if items.is_empty() {
            return Err(ModelError::EmptyCaption);
        }
        let mut acc: Option<NodeId> = None;
        let mut tokens = 0usize;
        for item in items {
            if item.caption.len() < 2 {
                return Err(ModelError::EmptyCaption);
            }
            let ctx = self.prepare_scene(g, bound, item.canvas, item.concepts)?;
            let mut h = self.zero_state(g);
            for t in 1..item.caption.len() {
                let step = self.step(g, bound, &ctx, item.caption[t - 1], h)?;
                h = step.hidden;
                let target = item.caption[t];
                if target >= self.dims.vocab {
                    return Err(ModelError::TokenOutOfRange {
                        token: target,
                        vocab: self.dims.vocab,
                    });
                }
                let log_probs = g.log_softmax_vec(step.logits)?;
                let picked = g.select(log_probs, target)?;
                acc = Some(match acc {
                    Some(a) => g.add(a, picked)?,
                    None => picked,
                });
                tokens += 1;
            }
        }
        let n = items.len() as f64;
        let loss = g.affine(acc.expect("at least one token"), -1.0 / n, 0.0);
        Ok((loss, tokens))
    }

    /// Decodes a token sequence from a prepared scene. Returns the
    /// content tokens (start/end excluded) and the per-step trace.
    pub fn generate(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ctx: &SceneContext,
        mode: DecodeMode,
        start: usize,
        end: usize,
        max_len: usize,
    ) -> Result<(Vec<usize>, DecodeTrace)> {
        let beam_width = match mode {
            DecodeMode::Greedy => 1,
            DecodeMode::Beam(k) => k.max(1),
        };
        let tokens = self.beam_search(g, bound, ctx, beam_width, start, end, max_len)?;
        let trace = self.forced_trace(g, bound, ctx, &tokens, start, end, max_len)?;
        Ok((tokens, trace))
    }

    fn beam_search(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ctx: &SceneContext,
        beam_width: usize,
        start: usize,
        end: usize,
        max_len: usize,
    ) -> Result<Vec<usize>> {
        struct Hypothesis {
            tokens: Vec<usize>,
            log_prob: f64,
            hidden: NodeId,
            finished: bool,
        }

        let h0 = self.zero_state(g);
        let mut beams = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            hidden: h0,
            finished: false,
        }];

        for _ in 0..max_len {
            if beams.iter().all(|b| b.finished) {
                break;
            }
            let mut pool: Vec<Hypothesis> = Vec::new();
            for beam in beams {
                if beam.finished {
                    pool.push(beam);
                    continue;
                }
                let prev = *beam.tokens.last().unwrap_or(&start);
                let step = self.step(g, bound, ctx, prev, beam.hidden)?;
                let log_probs = g.log_softmax_vec(step.logits)?;
                let values = g.value(log_probs).data().to_vec();
                for (token, &lp) in values.iter().enumerate() {
                    let mut tokens = beam.tokens.clone();
                    let finished = token == end;
                    if !finished {
                        tokens.push(token);
                    }
                    pool.push(Hypothesis {
                        tokens,
                        log_prob: beam.log_prob + lp,
                        hidden: step.hidden,
                        finished,
                    });
                }
            }
            // Highest joint log-probability first; ties resolve to the
            // lexicographically smaller token sequence so beam(1) matches
            // greedy argmax with first-index tie breaking.
            pool.sort_by(|a, b| {
                b.log_prob
                    .total_cmp(&a.log_prob)
                    .then_with(|| a.tokens.cmp(&b.tokens))
            });
            pool.truncate(beam_width);
            beams = pool;
        }

        let best = beams
            .into_iter()
            .max_by(|a, b| {
                a.log_prob
                    .total_cmp(&b.log_prob)
                    .then_with(|| b.tokens.cmp(&a.tokens))
            })
            .expect("at least one hypothesis");
        Ok(best.tokens)
    }

    /// Teacher-forces a token sequence and records weights, gates and
    /// per-step log-probabilities. The end token's emission is included
    /// when the sequence terminated before `max_len`.
    pub fn forced_trace(
        &self,
        g: &mut Graph,
        bound: &Bound,
        ctx: &SceneContext,
        tokens: &[usize],
        start: usize,
        end: usize,
        max_len: usize,
    ) -> Result<DecodeTrace> {
        let mut trace = DecodeTrace::default();
        if let Some(semantic) = &ctx.semantic {
            trace.semantic_region_weights = Some(g.value(semantic.region_weights).data().to_vec());
            trace.semantic_concept_weights =
                Some(g.value(semantic.concept_weights).data().to_vec());
        }
        let mut h = self.zero_state(g);
        let mut emitted: Vec<usize> = tokens.to_vec();
        if emitted.len() < max_len {
            emitted.push(end);
        }
        let mut prev = start;
        for &token in &emitted {
            let step = self.step(g, bound, ctx, prev, h)?;
            h = step.hidden;
            let log_probs = g.log_softmax_vec(step.logits)?;
            trace.steps.push(DecodeStep {
                token,
                region_weights: step
                    .region_weights
                    .map(|id| g.value(id).data().to_vec()),
                gate: step.gate.map(|id| g.value(id).item()),
                log_prob: g.value(log_probs).data()[token],
            });
            prev = token;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::RegionStage;
    use datn_core::rng::{seeded, uniform_tensor};

    pub(crate) fn toy_dims() -> ModelDims {
        ModelDims {
            canvas_side: 16,
            feature_width: 5,
            concepts: 4,
            attention_width: 3,
            hidden: 6,
            question_hidden: 4,
            multimodal_width: 4,
            vocab: 9,
            answers: 4,
        }
    }

    fn toy_model(ablation: CaptionAblation, seed: u64) -> CaptionModel {
        CaptionModel::new(toy_dims(), ablation, Default::default(), &mut seeded(seed)).unwrap()
    }

    fn toy_inputs(seed: u64) -> (Tensor, Tensor) {
        let canvas = uniform_tensor(&mut seeded(seed), &[3, 16, 16], 0.0, 1.0);
        let concepts = crate::concept::concept_set(&[0.9, 0.1, 0.8, 0.3], 0.6).unwrap();
        (canvas, concepts)
    }

    #[test]
    fn zero_attention_params_give_uniform_weights_and_mean_region() {
        let mut model = toy_model(CaptionAblation::WordAttention, 1);
        let c = model.dims.regions();
        model.params.set("dec.attn.w", Tensor::zeros(&[5, 1]));
        model
            .params
            .set("dec.attn.u", Tensor::zeros(&[c, 6]));
        model.params.set("dec.attn.b", Tensor::zeros(&[c]));

        let (canvas, concepts) = toy_inputs(2);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
        let h = model.zero_state(&mut g);
        let grid = ctx.context.as_ref().unwrap();
        let (alpha, attended) = model.word_attention(&mut g, &bound, grid, h).unwrap();
        for &w in g.value(alpha).data() {
            assert!((w - 1.0 / c as f64).abs() < 1e-12);
        }
        // The attended vector equals the mean region row.
        let vals = g.value(grid.node).clone();
        for k in 0..5 {
            let mean: f64 = (0..c).map(|i| vals.at2(i, k)).sum::<f64>() / c as f64;
            assert!((g.value(attended).data()[k] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn single_region_attention_is_degenerate() {
        let model = toy_model(CaptionAblation::WordAttention, 3);
        // Attention parameters sized for a single region.
        let mut params = ParamSet::new();
        let mut rng = seeded(3);
        params.insert("dec.attn.w", glorot_matrix(&mut rng, 5, 1));
        params.insert("dec.attn.u", glorot_matrix(&mut rng, 1, 6));
        params.insert("dec.attn.b", Tensor::zeros(&[1]));

        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let single = RegionGrid {
            node: g.input(uniform_tensor(&mut seeded(4), &[1, 5], -1.0, 1.0)),
            regions: 1,
            width: 5,
            stage: RegionStage::Context,
        };
        let h = g.input(Tensor::zeros(&[6]));
        let (alpha, attended) = model.word_attention(&mut g, &bound, &single, h).unwrap();
        assert_eq!(g.value(alpha).data(), &[1.0]);
        assert_eq!(
            g.value(attended).data(),
            g.value(single.node).data()
        );
    }

    #[test]
    fn word_attention_matches_loop_oracle() {
        let model = toy_model(CaptionAblation::WordAttention, 7);
        let (canvas, concepts) = toy_inputs(8);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
        let h_vals = uniform_tensor(&mut seeded(9), &[6], -1.0, 1.0);
        let h = g.input(h_vals.clone());
        let grid = ctx.context.as_ref().unwrap();
        let (alpha, attended) = model.word_attention(&mut g, &bound, grid, h).unwrap();

        let c = model.dims.regions();
        let regions = g.value(grid.node).clone();
        let w = model.params.get("dec.attn.w").unwrap();
        let u = model.params.get("dec.attn.u").unwrap();
        let b = model.params.get("dec.attn.b").unwrap();
        let mut scores = vec![0.0; c];
        for i in 0..c {
            let mut acc = b.data()[i];
            for k in 0..5 {
                acc += regions.at2(i, k) * w.data()[k];
            }
            for k in 0..6 {
                acc += u.at2(i, k) * h_vals.data()[k];
            }
            scores[i] = acc.tanh();
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let expect_alpha: Vec<f64> = scores.iter().map(|s| (s - max).exp() / denom).collect();
        for (a, e) in g.value(alpha).data().iter().zip(&expect_alpha) {
            assert!((a - e).abs() < 1e-12);
        }
        let mut expect_z = vec![0.0; 5];
        for i in 0..c {
            for k in 0..5 {
                expect_z[k] += expect_alpha[i] * regions.at2(i, k);
            }
        }
        for (a, e) in g.value(attended).data().iter().zip(&expect_z) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_of_zero_params_is_one_half() {
        let mut model = toy_model(CaptionAblation::Full, 11);
        model.params.set("dec.gate.w", Tensor::zeros(&[1, 6]));
        model.params.set("dec.gate.b", Tensor::zeros(&[]));
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let h = g.input(uniform_tensor(&mut seeded(12), &[6], -2.0, 2.0));
        let gate = model.context_gate(&mut g, &bound, h).unwrap();
        assert_eq!(g.value(gate).item(), 0.5);
    }

    #[test]
    fn saturated_negative_bias_closes_the_gate() {
        let mut model = toy_model(CaptionAblation::Full, 13);
        model.params.set("dec.gate.w", Tensor::zeros(&[1, 6]));
        model.params.set("dec.gate.b", Tensor::scalar(-50.0));
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let h = g.input(uniform_tensor(&mut seeded(14), &[6], -2.0, 2.0));
        let gate = model.context_gate(&mut g, &bound, h).unwrap();
        assert!(g.value(gate).item() < 1e-20);
    }

    #[test]
    fn gate_stays_inside_open_unit_interval() {
        let model = toy_model(CaptionAblation::Full, 15);
        for trial in 0..50 {
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g, false);
            let h = g.input(uniform_tensor(&mut seeded(trial), &[6], -10.0, 10.0));
            let gate = model.context_gate(&mut g, &bound, h).unwrap();
            let v = g.value(gate).item();
            assert!(0.0 < v && v < 1.0);
        }
    }

    #[test]
    fn step_distribution_is_normalized_and_uniform_under_zero_projection() {
        let mut model = toy_model(CaptionAblation::Full, 17);
        model.params.set("dec.out.w", Tensor::zeros(&[9, 6]));
        model.params.set("dec.out.b", Tensor::zeros(&[9]));
        let (canvas, concepts) = toy_inputs(18);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
        let h = model.zero_state(&mut g);
        let step = model.step(&mut g, &bound, &ctx, 0, h).unwrap();
        let probs = g.softmax_vec(step.logits).unwrap();
        let vals = g.value(probs).data();
        assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for &p in vals {
            assert!((p - 1.0 / 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_distribution_loss_is_log_vocab_per_token() {
        let mut model = toy_model(CaptionAblation::Full, 19);
        model.params.set("dec.out.w", Tensor::zeros(&[9, 6]));
        model.params.set("dec.out.b", Tensor::zeros(&[9]));
        let (canvas, concepts) = toy_inputs(20);
        let caption = vec![0usize, 4, 5, 6, 1];
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let items = [CaptionItem {
            canvas: &canvas,
            concepts: &concepts,
            caption: &caption,
        }];
        let (loss, tokens) = model.teacher_forced_loss(&mut g, &bound, &items).unwrap();
        assert_eq!(tokens, 4);
        let expected = 4.0 * (9.0f64).ln();
        assert!((g.value(loss).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn near_certain_gold_token_drives_loss_to_zero() {
        let mut model = toy_model(CaptionAblation::Full, 21);
        let mut bias = vec![0.0; 9];
        bias[4] = 60.0;
        model.params.set("dec.out.w", Tensor::zeros(&[9, 6]));
        model.params.set("dec.out.b", Tensor::vector(bias));
        let (canvas, concepts) = toy_inputs(22);
        let caption = vec![0usize, 4];
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let items = [CaptionItem {
            canvas: &canvas,
            concepts: &concepts,
            caption: &caption,
        }];
        let (loss, _) = model.teacher_forced_loss(&mut g, &bound, &items).unwrap();
        assert!(g.value(loss).item() < 1e-10);
    }

    #[test]
    fn loss_matches_per_token_nll_summation_oracle() {
        let model = toy_model(CaptionAblation::Full, 23);
        let (canvas, concepts) = toy_inputs(24);
        let captions = [vec![0usize, 4, 7, 1], vec![0usize, 5, 1]];

        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let items: Vec<CaptionItem> = captions
            .iter()
            .map(|c| CaptionItem {
                canvas: &canvas,
                concepts: &concepts,
                caption: c,
            })
            .collect();
        let (loss, _) = model.teacher_forced_loss(&mut g, &bound, &items).unwrap();

        // Oracle: replay the steps, turn logits into probabilities with
        // plain exp/sum arithmetic and sum the negative logs.
        let mut oracle = 0.0;
        for caption in &captions {
            let mut g2 = Graph::new();
            let bound2 = model.params.bind(&mut g2, false);
            let ctx = model
                .prepare_scene(&mut g2, &bound2, &canvas, &concepts)
                .unwrap();
            let mut h = model.zero_state(&mut g2);
            for t in 1..caption.len() {
                let step = model.step(&mut g2, &bound2, &ctx, caption[t - 1], h).unwrap();
                h = step.hidden;
                let logits = g2.value(step.logits).data().to_vec();
                let denom: f64 = logits.iter().map(|v| v.exp()).sum();
                let p = logits[caption[t]].exp() / denom;
                oracle -= p.ln();
            }
        }
        oracle /= captions.len() as f64;
        assert!((g.value(loss).item() - oracle).abs() < 1e-10);
    }

    #[test]
    fn loss_is_invariant_to_item_order() {
        let model = toy_model(CaptionAblation::Full, 25);
        let (canvas_a, concepts) = toy_inputs(26);
        let canvas_b = uniform_tensor(&mut seeded(27), &[3, 16, 16], 0.0, 1.0);
        let cap_a = vec![0usize, 4, 6, 1];
        let cap_b = vec![0usize, 8, 1];

        let run = |order: [usize; 2]| {
            let canvases = [&canvas_a, &canvas_b];
            let caps = [&cap_a, &cap_b];
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g, false);
            let items: Vec<CaptionItem> = order
                .iter()
                .map(|&i| CaptionItem {
                    canvas: canvases[i],
                    concepts: &concepts,
                    caption: caps[i],
                })
                .collect();
            let (loss, _) = model.teacher_forced_loss(&mut g, &bound, &items).unwrap();
            g.value(loss).item()
        };
        assert!((run([0, 1]) - run([1, 0])).abs() < 1e-12);
    }

    #[test]
    fn empty_caption_is_rejected() {
        let model = toy_model(CaptionAblation::Full, 29);
        let (canvas, concepts) = toy_inputs(30);
        let caption = vec![0usize];
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let items = [CaptionItem {
            canvas: &canvas,
            concepts: &concepts,
            caption: &caption,
        }];
        assert!(matches!(
            model.teacher_forced_loss(&mut g, &bound, &items),
            Err(ModelError::EmptyCaption)
        ));
    }

    #[test]
    fn beam_one_equals_greedy() {
        for seed in [31, 37, 41] {
            let model = toy_model(CaptionAblation::Full, seed);
            let (canvas, concepts) = toy_inputs(seed + 1);
            let mut g = Graph::new();
            let bound = model.params.bind(&mut g, false);
            let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
            let (greedy, _) = model
                .generate(&mut g, &bound, &ctx, DecodeMode::Greedy, 0, 1, 10)
                .unwrap();
            let (beam, _) = model
                .generate(&mut g, &bound, &ctx, DecodeMode::Beam(1), 0, 1, 10)
                .unwrap();
            assert_eq!(greedy, beam);
        }
    }

    #[test]
    fn generated_length_respects_max_len() {
        let model = toy_model(CaptionAblation::WordAttention, 43);
        let (canvas, concepts) = toy_inputs(44);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
        for max_len in [1, 3, 7] {
            let (tokens, trace) = model
                .generate(&mut g, &bound, &ctx, DecodeMode::Beam(3), 0, 1, max_len)
                .unwrap();
            assert!(tokens.len() <= max_len);
            assert!(trace.steps.len() <= max_len);
        }
    }

    #[test]
    fn trace_weights_are_normalized_and_gated() {
        let model = toy_model(CaptionAblation::Full, 47);
        let (canvas, concepts) = toy_inputs(48);
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let ctx = model.prepare_scene(&mut g, &bound, &canvas, &concepts).unwrap();
        let (_, trace) = model
            .generate(&mut g, &bound, &ctx, DecodeMode::Greedy, 0, 1, 8)
            .unwrap();
        assert!(!trace.steps.is_empty());
        for step in &trace.steps {
            let alpha = step.region_weights.as_ref().unwrap();
            assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let gate = step.gate.unwrap();
            assert!(0.0 < gate && gate < 1.0);
            assert!(step.log_prob <= 0.0);
        }
        assert!(trace.semantic_region_weights.is_some());
    }

    #[test]
    fn closed_gate_reduces_full_model_to_word_attention() {
        // With the gate saturated shut, the fused semantic vector is
        // scaled by exactly zero: the loss equals a word-attention model
        // sharing the same weights, and no semantic parameter receives
        // gradient.
        let dims = toy_dims();
        let mut full = toy_model(CaptionAblation::Full, 51);
        full.params.set("dec.gate.w", Tensor::zeros(&[1, 6]));
        full.params.set("dec.gate.b", Tensor::scalar(-800.0));

        let mut wa = CaptionModel::new(
            dims.clone(),
            CaptionAblation::WordAttention,
            Default::default(),
            &mut seeded(51),
        )
        .unwrap();
        // Copy every shared tensor; slice the decoder GRU input weights
        // down to the embedding+attended columns.
        let shared_in = dims.hidden + dims.feature_width;
        for name in wa.params.names().to_vec() {
            let source = full.params.get(&name).unwrap().clone();
            let target_shape = wa.params.get(&name).unwrap().shape().to_vec();
            if source.shape() == target_shape.as_slice() {
                wa.params.set(&name, source);
            } else {
                // dec.gru.w{z,r,h}: [hidden, full_in] -> [hidden, shared_in]
                let full_in = source.shape()[1];
                let mut sliced = Vec::with_capacity(dims.hidden * shared_in);
                for r in 0..dims.hidden {
                    sliced.extend_from_slice(
                        &source.data()[r * full_in..r * full_in + shared_in],
                    );
                }
                wa.params
                    .set(&name, Tensor::matrix(dims.hidden, shared_in, sliced).unwrap());
            }
        }

        let (canvas, concepts) = toy_inputs(52);
        let caption = vec![0usize, 4, 3, 1];

        let mut g_full = Graph::new();
        let bound_full = full.params.bind(&mut g_full, true);
        let items = [CaptionItem {
            canvas: &canvas,
            concepts: &concepts,
            caption: &caption,
        }];
        let (loss_full, _) = full
            .teacher_forced_loss(&mut g_full, &bound_full, &items)
            .unwrap();
        g_full.backward(loss_full).unwrap();

        let mut g_wa = Graph::new();
        let bound_wa = wa.params.bind(&mut g_wa, false);
        let (loss_wa, _) = wa.teacher_forced_loss(&mut g_wa, &bound_wa, &items).unwrap();

        assert!(
            (g_full.value(loss_full).item() - g_wa.value(loss_wa).item()).abs() < 1e-12,
            "gated-shut full model should match the word-attention model"
        );

        let grads = full.params.collect_grads(&g_full, &bound_full);
        for (name, grad) in full.params.names().iter().zip(&grads) {
            if name.starts_with("sem.") {
                let flat = grad.as_ref().map(|t| t.data().to_vec()).unwrap_or_default();
                assert!(
                    flat.iter().all(|&v| v == 0.0),
                    "{name} received gradient through a closed gate"
                );
            }
        }
    }
}
