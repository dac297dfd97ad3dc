//! The scoring network: multi-head graph attention, the contrastive pass over
//! the whole graph, stacked hierarchical layers, the sentence scoring head,
//! and the training objective.

mod params;

pub use params::{GatHead, GatLayer, HierLayer, ModelParams, ScoreHead};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check_steps, GradCheckReport, Mask, Matrix, Tape, Var};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::graph::{hpe_matrix, EmbeddingProvider, HashProvider, HierGraph};
use crate::oracle::imbalance_ratio;

/// Probability clamp used by the weighted cross entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Finite-difference steps of the end-to-end check.
pub const TOY_GRADCHECK_STEPS: [f64; 4] = [1e-6, 1e-5, 1e-4, 1e-3];

/// Architecture and objective hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Dimension of the incoming sentence embeddings.
    pub input_dim: usize,
    /// Node embedding dimension.
    pub d: usize,
    /// Hidden width of the scoring head.
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    pub leaky_slope: f64,
    pub dropout: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Weight of the contrastive loss.
    pub lambda: f64,
    /// When false the hierarchical stack is skipped and the head reads the
    /// contrastive pass outputs directly.
    pub use_hierarchical: bool,
    /// When false section-level nodes attend only to themselves in the
    /// inter-section step.
    pub inter_section_edges: bool,
    /// Adds the input of the whole-graph and intra-section attention blocks
    /// to their output, so sentence identity survives averaging over
    /// section cliques.
    pub residual: bool,
    /// Rescales every nonzero sentence embedding to L2 norm `sqrt(input_dim)`,
    /// the typical norm of a position encoding row, so positions do not
    /// drown out content.
    pub normalize_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 64,
            d: 64,
            d_h: 128,
            heads: 8,
            layers: 2,
            leaky_slope: 0.2,
            dropout: 0.1,
            tau: 0.1,
            lambda: 0.5,
            use_hierarchical: true,
            inter_section_edges: true,
            residual: true,
            normalize_embeddings: true,
        }
    }
}

impl ModelConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_owned()));
        if self.d == 0 || !self.d.is_multiple_of(2) {
            return fail("d must be a positive even number");
        }
        if self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return fail("heads must divide d");
        }
        if self.input_dim == 0 || self.d_h == 0 {
            return fail("input_dim and d_h must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        if !(self.tau > 0.0) {
            return fail("tau must be positive");
        }
        if !(self.lambda >= 0.0) {
            return fail("lambda must be non-negative");
        }
        if !self.leaky_slope.is_finite() {
            return fail("leaky_slope must be finite");
        }
        Ok(())
    }
}

/// Per-document constants: graph, masks, embeddings and position encodings.
#[derive(Debug, Clone)]
pub struct DocInput {
    pub graph: HierGraph,
    /// `n × input_dim` frozen sentence embeddings.
    pub x: Matrix,
    /// `n × d` hierarchical position embeddings.
    pub hpe: Matrix,
    pub labels: Option<Vec<u8>>,
    full_mask: Mask,
    intra_mask: Mask,
    sen2sec_mask: Mask,
    inter_mask: Mask,
    inter_isolated: Mask,
}

impl DocInput {
    pub fn prepare(
        doc: &Document,
        provider: &dyn EmbeddingProvider,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        if provider.dim() != cfg.input_dim {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_dim,
                actual: provider.dim(),
            });
        }
        let mut x = provider.embed(doc)?;
        if x.shape() != (doc.n(), cfg.input_dim) {
            return Err(Error::DimensionMismatch {
                expected: cfg.input_dim,
                actual: x.cols(),
            });
        }
        if cfg.normalize_embeddings {
            normalize_rows(&mut x);
        }
        let graph = HierGraph::build(doc);
        Ok(Self {
            hpe: hpe_matrix(doc, cfg.d)?,
            x,
            labels: doc.labels.clone(),
            full_mask: graph.full_mask(),
            intra_mask: graph.intra_mask(),
            sen2sec_mask: graph.sen_to_sec_mask(),
            inter_mask: graph.inter_mask(true),
            inter_isolated: graph.inter_mask(false),
            graph,
        })
    }

    pub fn n(&self) -> usize {
        self.graph.n_sen
    }

    fn positives(&self) -> Result<(&[u8], Vec<usize>)> {
        let labels = self.labels.as_deref().ok_or(Error::NoPositives)?;
        if labels.len() != self.n() {
            return Err(Error::LengthMismatch(self.n(), labels.len()));
        }
        let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
        if pos.is_empty() {
            return Err(Error::NoPositives);
        }
        Ok((labels, pos))
    }
}

/// Multi-head graph attention returning the output and each head's attention matrix.
///
/// Per head, `e_ij = LeakyReLU(a·[W_in h_i ‖ W_in h_j])` over allowed `j`,
/// `α` is the masked row softmax, and the head output is `α · (H W_v)`.
/// Heads are concatenated and passed through ELU.
pub fn gat_forward_traced(
    tape: &mut Tape,
    h: Var,
    mask: &Mask,
    layer: &GatLayer<Var>,
    slope: f64,
) -> Result<(Var, Vec<Var>)> {
    let mut outs = Vec::with_capacity(layer.heads.len());
    let mut attn = Vec::with_capacity(layer.heads.len());
    for head in &layer.heads {
        let dh = tape.shape(head.w_in).1;
        let p = tape.matmul(h, head.w_in)?;
        let a_src = tape.slice_rows(head.w_a, 0, dh)?;
        let a_dst = tape.slice_rows(head.w_a, dh, dh)?;
        let s = tape.matmul(p, a_src)?;
        let t = tape.matmul(p, a_dst)?;
        let e = tape.pairwise_sum(s, t)?;
        let e = tape.leaky_relu(e, slope);
        let alpha = tape.row_softmax_masked(e, mask)?;
        let v = tape.matmul(h, head.w_v)?;
        outs.push(tape.matmul(alpha, v)?);
        attn.push(alpha);
    }
    let cat = tape.concat_cols(&outs)?;
    Ok((tape.elu(cat), attn))
}

pub fn gat_forward(
    tape: &mut Tape,
    h: Var,
    mask: &Mask,
    layer: &GatLayer<Var>,
    slope: f64,
) -> Result<Var> {
    gat_forward_traced(tape, h, mask, layer, slope).map(|(out, _)| out)
}

/// Scales each nonzero row to norm `sqrt(cols)`; zero rows stay zero.
pub fn normalize_rows(x: &mut Matrix) {
    let target = (x.cols() as f64).sqrt();
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v *= target / norm);
        }
    }
}

/// Dropout on the input, then one attention layer, plus the undropped input
/// when `residual` is set.
#[allow(clippy::too_many_arguments)]
fn attention_block(
    tape: &mut Tape,
    h: Var,
    mask: &Mask,
    layer: &GatLayer<Var>,
    cfg: &ModelConfig,
    residual: bool,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<Var> {
    let x = tape.dropout(h, cfg.dropout, train, rng);
    let out = gat_forward(tape, x, mask, layer, cfg.leaky_slope)?;
    if residual {
        tape.add(h, out)
    } else {
        Ok(out)
    }
}

/// Initial node features: projected embeddings plus position encodings for
/// sentences, section means, and the mean of sections for the supernode.
/// Returns `(n × d, (m + 1) × d)`.
pub fn node_features(tape: &mut Tape, proj: Option<Var>, input: &DocInput) -> Result<(Var, Var)> {
    let x = tape.constant(input.x.clone());
    let x = match proj {
        Some(p) => tape.matmul(x, p)?,
        None => x,
    };
    let hpe = tape.constant(input.hpe.clone());
    let h_sen = tape.add(x, hpe)?;
    let avg = tape.constant(input.graph.section_mean_matrix());
    let sections = tape.matmul(avg, h_sen)?;
    let doc = tape.mean_rows(sections);
    let h_sec = tape.concat_rows(&[sections, doc])?;
    Ok((h_sen, h_sec))
}

/// Outputs of the contrastive graph-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct GclOutput {
    /// `n × d` updated sentence rows.
    pub h_c: Var,
    /// `(m + 1) × d` updated section rows, supernode last.
    pub h_sec: Var,
    /// `1 × d` updated supernode.
    pub h_doc: Var,
}

/// One graph-attention pass over the whole graph (all edge sets plus self-loops).
#[allow(clippy::too_many_arguments)]
pub fn gcl_forward(
    tape: &mut Tape,
    layer: &GatLayer<Var>,
    h_sen: Var,
    h_sec: Var,
    input: &DocInput,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<GclOutput> {
    let n = input.n();
    let k = input.graph.n_section_nodes();
    let all = tape.concat_rows(&[h_sen, h_sec])?;
    let out = attention_block(
        tape,
        all,
        &input.full_mask,
        layer,
        cfg,
        cfg.residual,
        train,
        rng,
    )?;
    Ok(GclOutput {
        h_c: tape.slice_rows(out, 0, n)?,
        h_sec: tape.slice_rows(out, n, k)?,
        h_doc: tape.slice_rows(out, n + input.graph.doc_node, 1)?,
    })
}

/// Mean over `positives` of `-log softmax_i(cos(h_doc, h_j) / τ)`, the
/// softmax running over all rows of `h`.
pub fn contrastive_loss(
    tape: &mut Tape,
    h_doc: Var,
    h: Var,
    positives: &[usize],
    tau: f64,
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::NoPositives);
    }
    let cos = tape.cosine_sim(h, h_doc)?;
    // Shifting by the largest attainable logit keeps exp bounded; it cancels exactly.
    let logits = tape.affine(cos, 1.0 / tau, -1.0 / tau);
    let e = tape.exp(logits);
    let z = tape.sum(e);
    let log_z = tape.log(z);
    let pos = tape.gather_rows(logits, positives)?;
    let pos_mean = tape.mean_rows(pos);
    let neg = tape.scale(pos_mean, -1.0);
    tape.add(log_z, neg)
}

/// One hierarchical layer: intra-section attention, sentence-to-section
/// attention, inter-section attention, then fusion of each sentence with its
/// updated section.
#[allow(clippy::too_many_arguments)]
pub fn hier_layer(
    tape: &mut Tape,
    layer: &HierLayer<Var>,
    h_sen: Var,
    h_sec: Var,
    input: &DocInput,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<(Var, Var)> {
    let n = input.n();
    let k = input.graph.n_section_nodes();
    let sen = attention_block(
        tape,
        h_sen,
        &input.intra_mask,
        &layer.intra,
        cfg,
        cfg.residual,
        train,
        rng,
    )?;

    let stacked = tape.concat_rows(&[sen, h_sec])?;
    let up = attention_block(
        tape,
        stacked,
        &input.sen2sec_mask,
        &layer.sen2sec,
        cfg,
        false,
        train,
        rng,
    )?;
    let sec = tape.slice_rows(up, n, k)?;

    let inter_mask = if cfg.inter_section_edges {
        &input.inter_mask
    } else {
        &input.inter_isolated
    };
    let sec_next = attention_block(tape, sec, inter_mask, &layer.inter, cfg, false, train, rng)?;

    let own = tape.gather_rows(sec_next, &input.graph.sec_of)?;
    let cat = tape.concat_cols(&[sen, own])?;
    let fused = tape.matmul(cat, layer.fuse)?;
    Ok((tape.elu(fused), sec_next))
}

/// `ŷ_i = sigmoid(W_o2 · LeakyReLU(W_o1 · [h_i ‖ h_sec(i)]))` as an `n × 1` column.
pub fn score_head(
    tape: &mut Tape,
    head: &ScoreHead<Var>,
    h_sen: Var,
    h_sec: Var,
    sec_of: &[usize],
    slope: f64,
) -> Result<Var> {
    let own = tape.gather_rows(h_sec, sec_of)?;
    let cat = tape.concat_cols(&[h_sen, own])?;
    let z = tape.matmul(cat, head.w_o1)?;
    let z = tape.leaky_relu(z, slope);
    let logit = tape.matmul(z, head.w_o2)?;
    Ok(tape.sigmoid(logit))
}

/// `-(1/n) Σ [η y log ŷ + (1 - y) log(1 - ŷ)]` with `ŷ` clamped to `[ε, 1 - ε]`.
pub fn weighted_bce(tape: &mut Tape, y_hat: Var, labels: &[u8], eta: f64) -> Result<Var> {
    let (n, cols) = tape.shape(y_hat);
    if cols != 1 || n != labels.len() {
        return Err(Error::LengthMismatch(n * cols, labels.len()));
    }
    let p = tape.clamp(y_hat, BCE_EPS, 1.0 - BCE_EPS);
    let log_p = tape.log(p);
    let q = tape.affine(p, -1.0, 1.0);
    let log_q = tape.log(q);
    let w_pos = tape.constant(Matrix::column(
        labels.iter().map(|&y| eta * f64::from(y)).collect(),
    ));
    let w_neg = tape.constant(Matrix::column(
        labels.iter().map(|&y| 1.0 - f64::from(y)).collect(),
    ));
    let a = tape.mul(log_p, w_pos)?;
    let b = tape.mul(log_q, w_neg)?;
    let ab = tape.add(a, b)?;
    let s = tape.sum(ab);
    Ok(tape.scale(s, -1.0 / n.max(1) as f64))
}

/// `L_s + λ·L_c`; with `λ = 0` this is `L_s` itself.
pub fn total_loss(tape: &mut Tape, l_s: Var, l_c: Var, lambda: f64) -> Result<Var> {
    if lambda == 0.0 {
        return Ok(l_s);
    }
    let w = tape.scale(l_c, lambda);
    tape.add(l_s, w)
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    /// `n × 1` sentence confidences.
    pub scores: Var,
    pub gcl: GclOutput,
}

/// Full network: features, contrastive pass, hierarchical stack (unless
/// disabled), scoring head.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    input: &DocInput,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<ForwardOutput> {
    let (h_sen, h_sec) = node_features(tape, params.input_proj, input)?;
    let gcl = gcl_forward(tape, &params.gcl, h_sen, h_sec, input, cfg, train, rng)?;
    let (mut s, mut c) = (gcl.h_c, gcl.h_sec);
    if cfg.use_hierarchical {
        for layer in &params.hier {
            (s, c) = hier_layer(tape, layer, s, c, input, cfg, train, rng)?;
        }
    }
    let s = tape.dropout(s, cfg.dropout, train, rng);
    let scores = score_head(
        tape,
        &params.head,
        s,
        c,
        &input.graph.sec_of,
        cfg.leaky_slope,
    )?;
    Ok(ForwardOutput { scores, gcl })
}

#[derive(Debug, Clone, Copy)]
pub struct LossOutput {
    pub total: Var,
    pub l_s: Var,
    pub l_c: Var,
    pub scores: Var,
}

/// Forward pass plus the combined objective; the document must carry labels
/// with at least one positive.
pub fn document_loss(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    input: &DocInput,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<LossOutput> {
    let (labels, positives) = input.positives()?;
    let eta = imbalance_ratio(labels)?;
    let out = forward(tape, params, input, cfg, train, rng)?;
    let l_s = weighted_bce(tape, out.scores, labels, eta)?;
    let l_c = contrastive_loss(tape, out.gcl.h_doc, out.gcl.h_c, &positives, cfg.tau)?;
    let total = total_loss(tape, l_s, l_c, cfg.lambda)?;
    Ok(LossOutput {
        total,
        l_s,
        l_c,
        scores: out.scores,
    })
}

/// Scalar loss values of one document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub total: f64,
    pub l_s: f64,
    pub l_c: f64,
}

/// Sentence confidences without dropout.
pub fn predict(params: &ModelParams, input: &DocInput, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.to_constants(&mut tape);
    // Unused without dropout.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = forward(&mut tape, &vars, input, cfg, false, &mut rng)?;
    Ok(tape.value(out.scores).data().to_vec())
}

/// Loss values and gradients for every tensor in [`ModelParams::tensors`] order.
pub fn loss_and_grads(
    params: &ModelParams,
    input: &DocInput,
    cfg: &ModelConfig,
    train: bool,
    rng: &mut dyn RngCore,
) -> Result<(LossValues, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let out = document_loss(&mut tape, &vars, input, cfg, train, rng)?;
    let grads = tape.backward(out.total)?;
    let flat = vars
        .tensors()
        .into_iter()
        .zip(params.tensors())
        .map(|(&v, m)| grads.get_or_zeros(v, m.shape()))
        .collect();
    let value = |v: Var| tape.value(v).get(0, 0);
    Ok((
        LossValues {
            total: value(out.total),
            l_s: value(out.l_s),
            l_c: value(out.l_c),
        },
        flat,
    ))
}

/// A two-section, six-sentence labeled document used for gradient checks.
pub fn toy_document() -> Document {
    Document::from_sections(
        "toy",
        vec![
            (
                "introduction",
                vec![
                    "graph networks model long documents",
                    "we study section structure",
                    "prior work ignores hierarchy",
                ],
            ),
            (
                "method",
                vec![
                    "sentences attend within their section",
                    "sections exchange information globally",
                    "a contrastive loss sharpens salience",
                ],
            ),
        ],
        vec![
            "graph networks model long documents",
            "sections exchange information globally",
        ],
    )
    .and_then(|d| d.with_labels(vec![1, 0, 0, 0, 1, 0]))
    .expect("toy document is valid")
}

/// Configuration of the end-to-end gradient check: d = 8, two heads, two
/// hierarchical layers, no dropout.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        input_dim: 8,
        d: 8,
        d_h: 8,
        heads: 2,
        layers: 2,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

/// Finite-difference check of the full objective on [`toy_document`] with
/// parameters and embeddings drawn from `seed`.
pub fn toy_gradcheck(seed: u64) -> Result<GradCheckReport> {
    toy_gradcheck_steps(seed, &TOY_GRADCHECK_STEPS)
}

pub fn toy_gradcheck_steps(seed: u64, steps: &[f64]) -> Result<GradCheckReport> {
    let cfg = toy_config();
    let doc = toy_document();
    let input = DocInput::prepare(&doc, &HashProvider::new(cfg.input_dim, seed), &cfg)?;
    let params = ModelParams::init(&cfg, seed);
    let flat: Vec<Matrix> = params.tensors().into_iter().cloned().collect();
    grad_check_steps(
        |tape, vars| {
            let p = params.with_values(vars);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Ok(document_loss(tape, &p, &input, &cfg, false, &mut rng)?.total)
        },
        &flat,
        steps,
    )
}
