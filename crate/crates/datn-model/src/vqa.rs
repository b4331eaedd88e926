//! Answer-classification head: GRU question encoding, question-guided
//! attention over the context regions with a bounded inner-product
//! score, joint embedding of the fused semantic vector with the
//! question-region vector, and the answer cross-entropy loss.

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

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VqaAblation {
    /// Mean-pooled raw region feature plus the question vector.
    NoneAtt,
    /// Question-guided attention only.
    QuestionAttention,
    /// Semantic attention only; the question enters the joint layer raw.
    SemanticAttention,
    /// Both attention networks.
    Full,
}

impl VqaAblation {
    pub const ALL: [VqaAblation; 4] = [
        VqaAblation::NoneAtt,
        VqaAblation::QuestionAttention,
        VqaAblation::SemanticAttention,
        VqaAblation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VqaAblation::NoneAtt => "none-att",
            VqaAblation::QuestionAttention => "qa",
            VqaAblation::SemanticAttention => "sa",
            VqaAblation::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none-att" | "none_att" => Some(VqaAblation::NoneAtt),
            "qa" => Some(VqaAblation::QuestionAttention),
            "sa" => Some(VqaAblation::SemanticAttention),
            "full" => Some(VqaAblation::Full),
            _ => None,
        }
    }

    fn uses_question_attention(self) -> bool {
        matches!(self, VqaAblation::QuestionAttention | VqaAblation::Full)
    }

    fn uses_semantic(self) -> bool {
        matches!(self, VqaAblation::SemanticAttention | VqaAblation::Full)
    }

    fn uses_regions(self) -> bool {
        self != VqaAblation::NoneAtt
    }
}

/// Forward outputs for one question.
pub struct VqaOutput {
    /// Question-guided region weights, when that pathway is active.
    pub region_weights: Option<NodeId>,
    /// Semantic attention outputs, when that pathway is active.
    pub semantic: Option<SemanticOutput>,
    /// Pre-softmax joint embedding, width A.
    pub joint: NodeId,
    /// Answer distribution, width A.
    pub distribution: NodeId,
}

impl VqaOutput {
    /// Deterministic argmax (first index on ties).
    pub fn predicted(&self, g: &Graph) -> usize {
        let vals = g.value(self.distribution).data();
        let mut best = 0;
        for (i, &v) in vals.iter().enumerate() {
            if v > vals[best] {
                best = i;
            }
        }
        best
    }
}

pub struct VqaItem<'a> {
    pub canvas: &'a Tensor,
    pub concepts: &'a Tensor,
    pub question: &'a [usize],
    pub answer: usize,
}

pub struct VqaModel {
    pub dims: ModelDims,
    pub ablation: VqaAblation,
    pub weight_mode: AttentionWeightMode,
    pub params: ParamSet,
}

impl VqaModel {
    pub fn new(
        dims: ModelDims,
        ablation: VqaAblation,
        weight_mode: AttentionWeightMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        dims.validate()?;
        let mut params = ParamSet::new();
        SceneEncoder::register(&mut params, rng, &dims);
        if ablation.uses_regions() {
            register_bidirectional(&mut params, rng, &dims);
        }
        if ablation.uses_semantic() {
            SemanticAttention::register(&mut params, rng, &dims);
        }
        params.insert(
            "vqa.qemb",
            glorot_matrix(rng, dims.vocab, dims.question_hidden),
        );
        register_gru(
            &mut params,
            rng,
            "vqa.qgru",
            dims.question_hidden,
            dims.question_hidden,
        );
        let (q, d, a) = (dims.question_hidden, dims.feature_width, dims.answers);
        if ablation.uses_question_attention() {
            params.insert(
                "vqa.attn.q",
                glorot_matrix(rng, dims.multimodal_width, q),
            );
            params.insert(
                "vqa.attn.l",
                glorot_matrix(rng, dims.multimodal_width, d),
            );
            params.insert("vqa.joint.u", glorot_matrix(rng, a, q + d));
        } else {
            params.insert("vqa.joint.uq", glorot_matrix(rng, a, q));
        }
        match ablation {
            VqaAblation::NoneAtt => {
                params.insert("vqa.joint.wi", glorot_matrix(rng, a, d));
            }
            VqaAblation::SemanticAttention | VqaAblation::Full => {
                params.insert("vqa.joint.w", glorot_matrix(rng, a, dims.fused_width()));
            }
            VqaAblation::QuestionAttention => {}
        }
        params.insert("vqa.joint.b", Tensor::zeros(&[a]));
        Ok(VqaModel {
            dims,
            ablation,
            weight_mode,
            params,
        })
    }

    /// Final hidden state of the question GRU over embedded tokens,
    /// scanning from a zero state.
    pub fn encode_question(
        &self,
        g: &mut Graph,
        bound: &Bound,
        tokens: &[usize],
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        let mut h = g.input(Tensor::zeros(&[self.dims.question_hidden]));
        for &token in tokens {
            if token >= self.dims.vocab {
                return Err(ModelError::TokenOutOfRange {
                    token,
                    vocab: self.dims.vocab,
                });
            }
            let x = g.row(bound.id("vqa.qemb"), token)?;
            h = gru_cell(g, bound, "vqa.qgru", x, h)?;
        }
        Ok(h)
    }

    /// Region weights from bounded inner products between the projected
    /// question and each projected region, then the weighted region sum
    /// and its concatenation with the question vector.
    pub fn question_attention(
        &self,
        g: &mut Graph,
        bound: &Bound,
        question: NodeId,
        grid: &RegionGrid,
    ) -> Result<(NodeId, NodeId, NodeId)> {
        let pq = g.matmul(bound.id("vqa.attn.q"), question)?; // [h']
        let region_cols = g.transpose(grid.node)?; // [D, C]
        let pl = g.matmul(bound.id("vqa.attn.l"), region_cols)?; // [h', C]
        let inner = g.matmul(pq, pl)?; // [C]
        let bounded = g.sigmoid(inner);
        let alpha = g.softmax_vec(bounded)?;
        let attended = g.matmul(region_cols, alpha)?; // [D]
        let joint_vec = g.concat(&[question, attended])?; // [q + D]
        Ok((alpha, attended, joint_vec))
    }

    /// Full forward pass for one (scene, question) pair.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        canvas: &Tensor,
        concepts: &Tensor,
        question_tokens: &[usize],
    ) -> Result<VqaOutput> {
        let canvas_node = g.input(canvas.clone());
        let map = SceneEncoder::feature_map(g, bound, canvas_node)?;
        let raw = flatten_grid(g, map)?;
        let question = self.encode_question(g, bound, question_tokens)?;

        let context = if self.ablation.uses_regions() {
            Some(bidirectional_encode(g, bound, &raw)?)
        } else {
            None
        };
        let semantic = if self.ablation.uses_semantic() {
            let vc = g.input(concepts.clone());
            Some(SemanticAttention::forward(
                g,
                bound,
                context.as_ref().expect("context regions"),
                vc,
                self.weight_mode,
            )?)
        } else {
            None
        };

        let mut region_weights = None;
        let joint = match self.ablation {
            VqaAblation::NoneAtt => {
                let pooled = mean_pool(g, &raw)?;
                let wi = g.matmul(bound.id("vqa.joint.wi"), pooled)?;
                let uq = g.matmul(bound.id("vqa.joint.uq"), question)?;
                let sum = g.add(wi, uq)?;
                g.add(sum, bound.id("vqa.joint.b"))?
            }
            VqaAblation::QuestionAttention => {
                let grid = context.as_ref().expect("context regions");
                let (alpha, _, joint_vec) = self.question_attention(g, bound, question, grid)?;
                region_weights = Some(alpha);
                let u = g.matmul(bound.id("vqa.joint.u"), joint_vec)?;
                g.add(u, bound.id("vqa.joint.b"))?
            }
            VqaAblation::SemanticAttention => {
                let semantic = semantic.as_ref().expect("semantic output");
                let w = g.matmul(bound.id("vqa.joint.w"), semantic.fused)?;
                let uq = g.matmul(bound.id("vqa.joint.uq"), question)?;
                let sum = g.add(w, uq)?;
                g.add(sum, bound.id("vqa.joint.b"))?
            }
            VqaAblation::Full => {
                let grid = context.as_ref().expect("context regions");
                let semantic_out = semantic.as_ref().expect("semantic output");
                let (alpha, _, joint_vec) = self.question_attention(g, bound, question, grid)?;
                region_weights = Some(alpha);
                let w = g.matmul(bound.id("vqa.joint.w"), semantic_out.fused)?;
                let u = g.matmul(bound.id("vqa.joint.u"), joint_vec)?;
                let sum = g.add(w, u)?;
                g.add(sum, bound.id("vqa.joint.b"))?
            }
        };
        let joint = g.tanh(joint);
        let distribution = g.softmax_vec(joint)?;
        Ok(VqaOutput {
            region_weights,
            semantic,
            joint,
            distribution,
        })
    }

    /// Mean negative log-probability of the gold answers.
    pub fn loss(&self, g: &mut Graph, bound: &Bound, items: &[VqaItem]) -> Result<(NodeId, Vec<VqaOutput>)> {
        if items.is_empty() {
            return Err(ModelError::EmptyQuestion);
        }
        let mut acc: Option<NodeId> = None;
        let mut outputs = Vec::with_capacity(items.len());
        for item in items {
            if item.answer >= self.dims.answers {
                return Err(ModelError::AnswerOutOfRange {
                    answer: item.answer,
                    classes: self.dims.answers,
                });
            }
            let out = self.forward(g, bound, item.canvas, item.concepts, item.question)?;
            let log_probs = g.log_softmax_vec(out.joint)?;
            let picked = g.select(log_probs, item.answer)?;
            acc = Some(match acc {
                Some(a) => g.add(a, picked)?,
                None => picked,
            });
            outputs.push(out);
        }
        let n = items.len() as f64;
        let loss = g.affine(acc.expect("non-empty batch"), -1.0 / n, 0.0);
        Ok((loss, outputs))
    }
}
