//! Siamese aligner network with hand-derived gradients.
//!
//! Both sequences go through one shared encoder: token features (phoneme
//! embeddings plus a phoneme-category embedding, or pooled character
//! convolutions for words), learned position embeddings and
//! `context_layers` rounds of single-head self-attention with residual
//! connections, each sequence attending only to itself. The encoded
//! sequences are laid out as `[ref rows][SEP][dys rows]`, tagged with a
//! learned side embedding and passed through `joint_layers` blocks of
//! attention over the whole layout followed by a ReLU feed-forward layer.
//! A 1D convolution with ReLU, a ReLU hidden layer and a 3-way output layer
//! then score every row.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{EncoderConfig, NUM_CLASSES};
use super::tokenizer::{EncodedSeq, TokenizerSpec, NUM_CATEGORY_IDS};
use super::ModelError;
use crate::phoneme::{Level, TokenSequence};
use crate::scalar::Scalar;

/// Additive logit mask for classes a side may not emit.
pub const LOGIT_MASK: f64 = -1e9;

const CHAR_KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Reference,
    Separator,
    Dysfluent,
}

impl Side {
    pub fn allows(self, class: usize) -> bool {
        match self {
            Side::Reference => class == 1 || class == 2,
            Side::Dysfluent => class == 0 || class == 1,
            Side::Separator => false,
        }
    }
}

/// Which sequence an encoder pass is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Reference,
    Dysfluent,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenLayout {
    Embedding { table: usize, category: usize },
    Chars { table: usize, conv_w: usize, conv_b: usize },
}

/// Indices of one attention block's `wq, wk, wv, wo`.
type AttnIdx = [usize; 4];
/// Indices of one feed-forward block's `w1, b1, w2, b2`.
type FfnIdx = [usize; 4];

/// Tensor indices into the flat parameter list.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamLayout {
    pub token: TokenLayout,
    pub pos: usize,
    pub layers: Vec<AttnIdx>,
    pub side: usize,
    pub sep: usize,
    pub joint: Vec<(AttnIdx, FfnIdx)>,
    pub conv_w: usize,
    pub conv_b: usize,
    pub mlp_w: usize,
    pub mlp_b: usize,
    pub out_w: usize,
    pub out_b: usize,
    pub encoder: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Embedding,
    Linear,
    Zero,
}

type Spec = (String, (usize, usize), Init);

impl ParamLayout {
    fn build(config: &EncoderConfig, tokenizer: &TokenizerSpec) -> (ParamLayout, Vec<Spec>) {
        let d = config.embed_dim;
        let mut specs: Vec<Spec> = Vec::new();
        let mut push = |name: String, shape: (usize, usize), init: Init| {
            specs.push((name, shape, init));
            specs.len() - 1
        };
        let token = match tokenizer.level {
            Level::Phoneme => TokenLayout::Embedding {
                table: push("embed".into(), (tokenizer.vocab_size(), d), Init::Embedding),
                category: push("category_embed".into(), (NUM_CATEGORY_IDS, d), Init::Embedding),
            },
            Level::Word => TokenLayout::Chars {
                table: push("char_embed".into(), (tokenizer.char_vocab_size(), d), Init::Embedding),
                conv_w: push("char_conv_w".into(), (CHAR_KERNEL * d, d), Init::Linear),
                conv_b: push("char_conv_b".into(), (1, d), Init::Zero),
            },
        };
        let pos = push("pos".into(), (config.max_positions, d), Init::Embedding);
        let attn = |prefix: String, push: &mut dyn FnMut(String, (usize, usize), Init) -> usize| -> AttnIdx {
            ["wq", "wk", "wv", "wo"].map(|w| push(format!("{prefix}.{w}"), (d, d), Init::Linear))
        };
        let layers: Vec<AttnIdx> = (0..config.context_layers).map(|l| attn(format!("attn{l}"), &mut push)).collect();
        let encoder_end = layers.last().map_or(pos, |l| l[3]) + 1;
        let side = push("side".into(), (2, d), Init::Embedding);
        let sep = push("sep".into(), (1, d), Init::Embedding);
        let joint = (0..config.joint_layers)
            .map(|l| {
                let a = attn(format!("joint{l}"), &mut push);
                let f = [
                    push(format!("joint{l}.ffn_w1"), (d, config.ffn_hidden), Init::Linear),
                    push(format!("joint{l}.ffn_b1"), (1, config.ffn_hidden), Init::Zero),
                    push(format!("joint{l}.ffn_w2"), (config.ffn_hidden, d), Init::Linear),
                    push(format!("joint{l}.ffn_b2"), (1, d), Init::Zero),
                ];
                (a, f)
            })
            .collect();
        let conv_w = push("conv_w".into(), (config.conv_kernel * d, config.conv_channels), Init::Linear);
        let conv_b = push("conv_b".into(), (1, config.conv_channels), Init::Zero);
        let mlp_w = push("mlp_w".into(), (config.conv_channels, config.mlp_hidden), Init::Linear);
        let mlp_b = push("mlp_b".into(), (1, config.mlp_hidden), Init::Zero);
        let out_w = push("out_w".into(), (config.mlp_hidden, NUM_CLASSES), Init::Linear);
        let out_b = push("out_b".into(), (1, NUM_CLASSES), Init::Zero);
        let layout = ParamLayout {
            token,
            pos,
            layers,
            side,
            sep,
            joint,
            conv_w,
            conv_b,
            mlp_w,
            mlp_b,
            out_w,
            out_b,
            encoder: 0..encoder_end,
        };
        (layout, specs)
    }
}


/// Trainable siamese aligner over scalar type `F`.
#[derive(Debug, Clone)]
pub struct NeuralAligner<F: Scalar> {
    pub(crate) config: EncoderConfig,
    pub(crate) tokenizer: TokenizerSpec,
    pub(crate) layout: ParamLayout,
    pub(crate) names: Vec<String>,
    pub(crate) params: Vec<Array2<F>>,
}

impl<F: Scalar> NeuralAligner<F> {
    pub fn new(config: EncoderConfig, tokenizer: TokenizerSpec, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = ParamLayout::build(&config, &tokenizer);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, (rows, cols), init) in specs {
            let bound = match init {
                Init::Embedding => 0.1,
                Init::Linear => 1.0 / (rows as f64).sqrt(),
                Init::Zero => 0.0,
            };
            let tensor = Array2::from_shape_fn((rows, cols), |_| {
                if bound == 0.0 {
                    F::zero()
                } else {
                    F::of(rng.random_range(-bound..bound))
                }
            });
            names.push(name);
            params.push(tensor);
        }
        Ok(NeuralAligner { config, tokenizer, layout, names, params })
    }

    /// Rebuilds a model from named tensors, checking every shape.
    pub fn from_tensors(
        config: EncoderConfig,
        tokenizer: TokenizerSpec,
        tensors: Vec<(String, Array2<F>)>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, specs) = ParamLayout::build(&config, &tokenizer);
        if specs.len() != tensors.len() {
            return Err(ModelError::ShapeMismatch(format!("expected {} tensors, got {}", specs.len(), tensors.len())));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, shape, _), (got_name, tensor)) in specs.into_iter().zip(tensors) {
            if name != got_name || tensor.dim() != shape {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor `{got_name}` {:?} does not match `{name}` {:?}",
                    tensor.dim(),
                    shape
                )));
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(NeuralAligner { config, tokenizer, layout, names, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn tokenizer(&self) -> &TokenizerSpec {
        &self.tokenizer
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<F>] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<F>] {
        &mut self.params
    }

    pub fn tensor(&self, name: &str) -> Option<&Array2<F>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<F>> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Array2::len).sum()
    }

    /// Encoder tensors used for `branch`. Both branches get the same slice.
    pub fn encoder_params(&self, _branch: Branch) -> &[Array2<F>] {
        &self.params[self.layout.encoder.clone()]
    }

    pub fn cast<G: Scalar>(&self) -> NeuralAligner<G> {
        NeuralAligner {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            layout: self.layout.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(|t| t.mapv(|v| G::of(v.as_f64()))).collect(),
        }
    }

    pub fn encode_sequences(
        &self,
        reference: &TokenSequence,
        dysfluent: &TokenSequence,
    ) -> Result<(EncodedSeq, EncodedSeq), ModelError> {
        let r = self.tokenizer.encode(reference)?;
        let d = self.tokenizer.encode(dysfluent)?;
        let longest = r.len().max(d.len());
        if longest > self.config.max_positions {
            return Err(ModelError::SequenceTooLong { len: longest, max: self.config.max_positions });
        }
        Ok((r, d))
    }


    /// Encoder features laid out `[ref][SEP][dys]`, before the joint blocks.
    pub fn encode_pair(&self, reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<Array2<F>, ModelError> {
        let pair = self.encode_sequences(reference, dysfluent)?;
        Ok(self.forward(std::slice::from_ref(&pair)).joint)
    }

    /// Class probabilities for every joint row (the SEP row is all zeros).
    pub fn probabilities(&self, reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<Array2<F>, ModelError> {
        let pair = self.encode_sequences(reference, dysfluent)?;
        Ok(self.forward(std::slice::from_ref(&pair)).probs)
    }

    pub(crate) fn forward(&self, batch: &[(EncodedSeq, EncodedSeq)]) -> Forward<F> {
        let p = &self.params;
        let d = self.config.embed_dim;
        let heads = self.config.heads;

        let mut segs = Vec::with_capacity(2 * batch.len());
        let mut rows = 0;
        for (r, y) in batch {
            for s in [r, y] {
                segs.push(rows..rows + s.len());
                rows += s.len();
            }
        }
        let mut positions = Vec::with_capacity(rows);
        for seg in &segs {
            positions.extend(0..seg.len());
        }

        // Token features.
        let mut x = Array2::<F>::zeros((rows, d));
        let token = match &self.layout.token {
            TokenLayout::Embedding { table, category } => {
                let mut ids = Vec::with_capacity(rows);
                for (r, y) in batch {
                    for s in [r, y] {
                        if let EncodedSeq::Ids(v) = s {
                            ids.extend_from_slice(v);
                        }
                    }
                }
                for (row, &id) in ids.iter().enumerate() {
                    x.row_mut(row).assign(&p[*table].row(id));
                    let cat = self.tokenizer.category_id(id);
                    x.row_mut(row).zip_mut_with(&p[*category].row(cat), |a, &b| *a += b);
                }
                TokenCache::Ids(ids)
            }
            TokenLayout::Chars { table, conv_w, conv_b } => {
                let mut char_ids = Vec::new();
                let mut spans = Vec::with_capacity(rows);
                for (r, y) in batch {
                    for s in [r, y] {
                        if let EncodedSeq::Chars(words) = s {
                            for w in words {
                                let start = char_ids.len();
                                if w.is_empty() {
                                    char_ids.push(super::tokenizer::CHAR_UNK_ID);
                                } else {
                                    char_ids.extend_from_slice(w);
                                }
                                spans.push(start..char_ids.len());
                            }
                        }
                    }
                }
                let col = char_columns(&p[*table], &char_ids, &spans, d);
                let mut pre = col.dot(&p[*conv_w]);
                pre += &p[*conv_b];
                for (row, span) in spans.iter().enumerate() {
                    let inv = F::one() / F::of(span.len() as f64);
                    let mut acc = x.row_mut(row);
                    for c in span.clone() {
                        acc.zip_mut_with(&pre.row(c), |a, &v| *a += relu(v) * inv);
                    }
                }
                TokenCache::Chars { char_ids, spans, col, pre }
            }
        };
        for (row, &pos) in positions.iter().enumerate() {
            x.row_mut(row).zip_mut_with(&p[self.layout.pos].row(pos), |a, &b| *a += b);
        }

        // Per-sequence self-attention.
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for idx in &self.layout.layers {
            let (next, cache) = attn_forward(x, idx, &segs, p, heads);
            layers.push(cache);
            x = next;
        }

        // Joint layout [ref][SEP][dys].
        let mut joint_of_row = vec![0usize; rows];
        let mut records = Vec::with_capacity(batch.len());
        let mut sides = Vec::with_capacity(rows + batch.len());
        let mut jrows = 0;
        for r in 0..batch.len() {
            let (a, b) = (&segs[2 * r], &segs[2 * r + 1]);
            let start = jrows;
            for (i, row) in a.clone().enumerate() {
                joint_of_row[row] = start + i;
            }
            for (j, row) in b.clone().enumerate() {
                joint_of_row[row] = start + a.len() + 1 + j;
            }
            sides.extend(std::iter::repeat_n(Side::Reference, a.len()));
            sides.push(Side::Separator);
            sides.extend(std::iter::repeat_n(Side::Dysfluent, b.len()));
            jrows += a.len() + 1 + b.len();
            records.push(JointRecord { start, ref_len: a.len(), dys_len: b.len() });
        }
        let mut joint = Array2::<F>::zeros((jrows, d));
        for row in 0..rows {
            joint.row_mut(joint_of_row[row]).assign(&x.row(row));
        }
        let mut z = joint.clone();
        for (row, side) in sides.iter().enumerate() {
            match side {
                Side::Reference => z.row_mut(row).zip_mut_with(&p[self.layout.side].row(0), |a, &b| *a += b),
                Side::Dysfluent => z.row_mut(row).zip_mut_with(&p[self.layout.side].row(1), |a, &b| *a += b),
                Side::Separator => z.row_mut(row).assign(&p[self.layout.sep].row(0)),
            }
        }

        // Joint blocks over each whole record.
        let record_segs: Vec<Range<usize>> = records.iter().map(|r| r.start..r.start + r.len()).collect();
        let mut joint_layers = Vec::with_capacity(self.layout.joint.len());
        for (aidx, fidx) in &self.layout.joint {
            let (mid, attn) = attn_forward(z, aidx, &record_segs, p, heads);
            let (next, ffn) = ffn_forward(mid, fidx, p);
            joint_layers.push((attn, ffn));
            z = next;
        }

        // Convolution over the joint layout, then the classifier head.
        let kernel = self.config.conv_kernel;
        let col = conv_columns(&z, &records, kernel);
        let mut conv_pre = col.dot(&p[self.layout.conv_w]);
        conv_pre += &p[self.layout.conv_b];
        let conv_act = conv_pre.mapv(relu);
        let mut mlp_pre = conv_act.dot(&p[self.layout.mlp_w]);
        mlp_pre += &p[self.layout.mlp_b];
        let mlp_act = mlp_pre.mapv(relu);
        let mut logits = mlp_act.dot(&p[self.layout.out_w]);
        logits += &p[self.layout.out_b];
        let probs = masked_softmax(&logits, &sides);

        Forward {
            segs,
            positions,
            token,
            layers,
            joint_of_row,
            sides,
            record_segs,
            joint_layers,
            records,
            joint,
            col,
            conv_pre,
            conv_act,
            mlp_pre,
            mlp_act,
            probs,
        }
    }

    /// Gradients of the loss for every parameter, given its gradient with
    /// respect to the logits of `fwd`.
    pub(crate) fn backward(&self, fwd: &Forward<F>, dlogits: &Array2<F>) -> Vec<Array2<F>> {
        let p = &self.params;
        let lay = &self.layout;
        let d = self.config.embed_dim;
        let heads = self.config.heads;
        let mut g: Vec<Array2<F>> = p.iter().map(|t| Array2::zeros(t.dim())).collect();

        // Head.
        general_mat_mul(F::one(), &fwd.mlp_act.t(), dlogits, F::one(), &mut g[lay.out_w]);
        g[lay.out_b] += &dlogits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dmlp = dlogits.dot(&p[lay.out_w].t());
        relu_backward(&mut dmlp, &fwd.mlp_pre);
        general_mat_mul(F::one(), &fwd.conv_act.t(), &dmlp, F::one(), &mut g[lay.mlp_w]);
        g[lay.mlp_b] += &dmlp.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut dconv = dmlp.dot(&p[lay.mlp_w].t());
        relu_backward(&mut dconv, &fwd.conv_pre);
        general_mat_mul(F::one(), &fwd.col.t(), &dconv, F::one(), &mut g[lay.conv_w]);
        g[lay.conv_b] += &dconv.sum_axis(Axis(0)).insert_axis(Axis(0));
        let dcol = dconv.dot(&p[lay.conv_w].t());
        let mut dz = conv_columns_backward(&dcol, &fwd.records, self.config.conv_kernel, d);

        // Joint blocks, last to first.
        for ((aidx, fidx), (attn, ffn)) in lay.joint.iter().zip(&fwd.joint_layers).rev() {
            dz = ffn_backward(ffn, fidx, dz, p, &mut g);
            dz = attn_backward(attn, aidx, &fwd.record_segs, dz, p, &mut g, heads);
        }
        for (row, side) in fwd.sides.iter().enumerate() {
            let (idx, r) = match side {
                Side::Reference => (lay.side, 0),
                Side::Dysfluent => (lay.side, 1),
                Side::Separator => (lay.sep, 0),
            };
            g[idx].row_mut(r).zip_mut_with(&dz.row(row), |a, &b| *a += b);
        }
        let rows = fwd.joint_of_row.len();
        let mut dx = Array2::<F>::zeros((rows, d));
        for row in 0..rows {
            dx.row_mut(row).assign(&dz.row(fwd.joint_of_row[row]));
        }

        // Self-attention layers, last to first.
        for (idx, cache) in lay.layers.iter().zip(&fwd.layers).rev() {
            dx = attn_backward(cache, idx, &fwd.segs, dx, p, &mut g, heads);
        }

        // Positions and token features.
        for (row, &pos) in fwd.positions.iter().enumerate() {
            g[lay.pos].row_mut(pos).zip_mut_with(&dx.row(row), |a, &b| *a += b);
        }
        match (&lay.token, &fwd.token) {
            (TokenLayout::Embedding { table, category }, TokenCache::Ids(ids)) => {
                for (row, &id) in ids.iter().enumerate() {
                    g[*table].row_mut(id).zip_mut_with(&dx.row(row), |a, &b| *a += b);
                    let cat = self.tokenizer.category_id(id);
                    g[*category].row_mut(cat).zip_mut_with(&dx.row(row), |a, &b| *a += b);
                }
            }
            (TokenLayout::Chars { table, conv_w, conv_b }, TokenCache::Chars { char_ids, spans, col, pre }) => {
                let mut dpre = Array2::<F>::zeros(pre.dim());
                for (row, span) in spans.iter().enumerate() {
                    let inv = F::one() / F::of(span.len() as f64);
                    for c in span.clone() {
                        let mut target = dpre.row_mut(c);
                        target.zip_mut_with(&dx.row(row), |a, &b| *a = b * inv);
                    }
                }
                relu_backward(&mut dpre, pre);
                general_mat_mul(F::one(), &col.t(), &dpre, F::one(), &mut g[*conv_w]);
                g[*conv_b] += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dcol = dpre.dot(&p[*conv_w].t());
                char_columns_backward(&dcol, char_ids, spans, d, &mut g[*table]);
            }
            _ => unreachable!("token cache matches layout"),
        }
        g
    }
}

pub(crate) struct AttnCache<F> {
    input: Array2<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    attn: Vec<Array2<F>>,
    ctx: Array2<F>,
}

pub(crate) struct FfnCache<F> {
    input: Array2<F>,
    pre: Array2<F>,
    act: Array2<F>,
}

/// Residual single-head attention where rows attend within their segment.
fn head_ranges(width: usize, heads: usize) -> impl Iterator<Item = Range<usize>> {
    let dh = width / heads;
    (0..heads).map(move |h| h * dh..(h + 1) * dh)
}

fn attn_forward<F: Scalar>(
    x: Array2<F>,
    idx: &AttnIdx,
    segs: &[Range<usize>],
    p: &[Array2<F>],
    heads: usize,
) -> (Array2<F>, AttnCache<F>) {
    let [wq, wk, wv, wo] = *idx;
    let q = x.dot(&p[wq]);
    let k = x.dot(&p[wk]);
    let v = x.dot(&p[wv]);
    let scale = F::one() / F::of((x.ncols() / heads) as f64).sqrt();
    let mut ctx = Array2::<F>::zeros(x.dim());
    let mut attn = Vec::with_capacity(segs.len() * heads);
    for seg in segs {
        for cols in head_ranges(x.ncols(), heads) {
            let a = attention(q.slice(s![seg.clone(), cols.clone()]), k.slice(s![seg.clone(), cols.clone()]), scale);
            ctx.slice_mut(s![seg.clone(), cols.clone()]).assign(&a.dot(&v.slice(s![seg.clone(), cols])));
            attn.push(a);
        }
    }
    let mut out = x.clone();
    general_mat_mul(F::one(), &ctx, &p[wo], F::one(), &mut out);
    (out, AttnCache { input: x, q, k, v, attn, ctx })
}

fn attn_backward<F: Scalar>(
    cache: &AttnCache<F>,
    idx: &AttnIdx,
    segs: &[Range<usize>],
    mut dx: Array2<F>,
    p: &[Array2<F>],
    g: &mut [Array2<F>],
    heads: usize,
) -> Array2<F> {
    let [wq, wk, wv, wo] = *idx;
    general_mat_mul(F::one(), &cache.ctx.t(), &dx, F::one(), &mut g[wo]);
    let dctx = dx.dot(&p[wo].t());
    let width = dx.ncols();
    let scale = F::one() / F::of((width / heads) as f64).sqrt();
    let mut dq = Array2::<F>::zeros(dx.dim());
    let mut dk = Array2::<F>::zeros(dx.dim());
    let mut dv = Array2::<F>::zeros(dx.dim());
    let mut attn = cache.attn.iter();
    for seg in segs {
        for cols in head_ranges(width, heads) {
            let a = attn.next().expect("one attention map per segment and head");
            let (rows, c) = (seg.clone(), cols.clone());
            let dctx_s = dctx.slice(s![rows.clone(), c.clone()]);
            dv.slice_mut(s![rows.clone(), c.clone()]).assign(&a.t().dot(&dctx_s));
            let da = dctx_s.dot(&cache.v.slice(s![rows.clone(), c.clone()]).t());
            let ds = softmax_backward(a, &da);
            let mut dq_s = dq.slice_mut(s![rows.clone(), c.clone()]);
            general_mat_mul(scale, &ds, &cache.k.slice(s![rows.clone(), c.clone()]), F::zero(), &mut dq_s);
            let mut dk_s = dk.slice_mut(s![rows.clone(), c.clone()]);
            general_mat_mul(scale, &ds.t(), &cache.q.slice(s![rows, c]), F::zero(), &mut dk_s);
        }
    }
    // The residual path keeps dx; projections add into it.
    linear_backward(&cache.input, &dq, &p[wq], &mut g[wq], &mut dx);
    linear_backward(&cache.input, &dk, &p[wk], &mut g[wk], &mut dx);
    linear_backward(&cache.input, &dv, &p[wv], &mut g[wv], &mut dx);
    dx
}

/// `x + relu(x W1 + b1) W2 + b2`.
fn ffn_forward<F: Scalar>(x: Array2<F>, idx: &FfnIdx, p: &[Array2<F>]) -> (Array2<F>, FfnCache<F>) {
    let [w1, b1, w2, b2] = *idx;
    let mut pre = x.dot(&p[w1]);
    pre += &p[b1];
    let act = pre.mapv(relu);
    let mut out = x.clone();
    general_mat_mul(F::one(), &act, &p[w2], F::one(), &mut out);
    out += &p[b2];
    (out, FfnCache { input: x, pre, act })
}

fn ffn_backward<F: Scalar>(
    cache: &FfnCache<F>,
    idx: &FfnIdx,
    mut dx: Array2<F>,
    p: &[Array2<F>],
    g: &mut [Array2<F>],
) -> Array2<F> {
    let [w1, b1, w2, b2] = *idx;
    general_mat_mul(F::one(), &cache.act.t(), &dx, F::one(), &mut g[w2]);
    g[b2] += &dx.sum_axis(Axis(0)).insert_axis(Axis(0));
    let mut dpre = dx.dot(&p[w2].t());
    relu_backward(&mut dpre, &cache.pre);
    g[b1] += &dpre.sum_axis(Axis(0)).insert_axis(Axis(0));
    linear_backward(&cache.input, &dpre, &p[w1], &mut g[w1], &mut dx);
    dx
}

pub(crate) enum TokenCache<F> {
    Ids(Vec<usize>),
    Chars { char_ids: Vec<usize>, spans: Vec<Range<usize>>, col: Array2<F>, pre: Array2<F> },
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct JointRecord {
    pub start: usize,
    pub ref_len: usize,
    pub dys_len: usize,
}

impl JointRecord {
    pub fn len(&self) -> usize {
        self.ref_len + 1 + self.dys_len
    }
}

/// Cached activations of one forward pass.
pub(crate) struct Forward<F> {
    segs: Vec<Range<usize>>,
    positions: Vec<usize>,
    token: TokenCache<F>,
    layers: Vec<AttnCache<F>>,
    joint_of_row: Vec<usize>,
    sides: Vec<Side>,
    record_segs: Vec<Range<usize>>,
    joint_layers: Vec<(AttnCache<F>, FfnCache<F>)>,
    pub records: Vec<JointRecord>,
    pub joint: Array2<F>,
    col: Array2<F>,
    conv_pre: Array2<F>,
    conv_act: Array2<F>,
    mlp_pre: Array2<F>,
    mlp_act: Array2<F>,
    pub probs: Array2<F>,
}

impl<F: Scalar> Forward<F> {
    /// Sign pattern of every ReLU input, for detecting kinks in finite differences.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let TokenCache::Chars { pre, .. } = &self.token {
            out.extend(pre.iter().map(|v| *v > F::zero()));
        }
        for (_, ffn) in &self.joint_layers {
            out.extend(ffn.pre.iter().map(|v| *v > F::zero()));
        }
        out.extend(self.conv_pre.iter().map(|v| *v > F::zero()));
        out.extend(self.mlp_pre.iter().map(|v| *v > F::zero()));
        out
    }
}

fn relu<F: Scalar>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

fn relu_backward<F: Scalar>(grad: &mut Array2<F>, pre: &Array2<F>) {
    grad.zip_mut_with(pre, |g, &x| {
        if x <= F::zero() {
            *g = F::zero();
        }
    });
}

/// `dx += dy W^T`, `dW += x^T dy`.
fn linear_backward<F: Scalar>(x: &Array2<F>, dy: &Array2<F>, w: &Array2<F>, dw: &mut Array2<F>, dx: &mut Array2<F>) {
    general_mat_mul(F::one(), &x.t(), dy, F::one(), dw);
    general_mat_mul(F::one(), dy, &w.t(), F::one(), dx);
}

fn attention<F: Scalar>(q: ArrayView2<'_, F>, k: ArrayView2<'_, F>, scale: F) -> Array2<F> {
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|v| v * scale);
    softmax_rows(&mut scores);
    scores
}

pub(crate) fn softmax_rows<F: Scalar>(m: &mut Array2<F>) {
    for mut row in m.rows_mut() {
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut total = F::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            total += e;
            e
        });
        row.mapv_inplace(|v| v / total);
    }
}

/// Gradient through a row softmax: `A * (dA - rowsum(dA * A))`.
fn softmax_backward<F: Scalar>(a: &Array2<F>, da: &Array2<F>) -> Array2<F> {
    let mut out = Array2::<F>::zeros(a.dim());
    for ((mut o, ar), dr) in out.rows_mut().into_iter().zip(a.rows()).zip(da.rows()) {
        let dot = ar.iter().zip(dr.iter()).fold(F::zero(), |acc, (&x, &y)| acc + x * y);
        for ((o, &x), &y) in o.iter_mut().zip(ar.iter()).zip(dr.iter()) {
            *o = x * (y - dot);
        }
    }
    out
}

fn masked_softmax<F: Scalar>(logits: &Array2<F>, sides: &[Side]) -> Array2<F> {
    let mask = F::of(LOGIT_MASK);
    let mut probs = logits.clone();
    for (mut row, side) in probs.rows_mut().into_iter().zip(sides) {
        if *side == Side::Separator {
            row.fill(F::zero());
            continue;
        }
        for (c, v) in row.iter_mut().enumerate() {
            if !side.allows(c) {
                *v += mask;
            }
        }
    }
    for (mut row, side) in probs.rows_mut().into_iter().zip(sides) {
        if *side == Side::Separator {
            continue;
        }
        let max = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let mut total = F::zero();
        row.mapv_inplace(|v| {
            let e = (v - max).exp();
            total += e;
            e
        });
        row.mapv_inplace(|v| v / total);
    }
    probs
}

fn conv_columns<F: Scalar>(joint: &Array2<F>, records: &[JointRecord], kernel: usize) -> Array2<F> {
    let width = joint.ncols();
    let pad = (kernel - 1) / 2;
    let mut col = Array2::<F>::zeros((joint.nrows(), kernel * width));
    for rec in records {
        let end = rec.start + rec.len();
        for t in rec.start..end {
            for k in 0..kernel {
                let src = t as isize + k as isize - pad as isize;
                if src >= rec.start as isize && src < end as isize {
                    col.slice_mut(s![t, k * width..(k + 1) * width]).assign(&joint.row(src as usize));
                }
            }
        }
    }
    col
}

fn conv_columns_backward<F: Scalar>(dcol: &Array2<F>, records: &[JointRecord], kernel: usize, width: usize) -> Array2<F> {
    let pad = (kernel - 1) / 2;
    let mut out = Array2::<F>::zeros((dcol.nrows(), width));
    for rec in records {
        let end = rec.start + rec.len();
        for t in rec.start..end {
            for k in 0..kernel {
                let src = t as isize + k as isize - pad as isize;
                if src >= rec.start as isize && src < end as isize {
                    let piece = dcol.slice(s![t, k * width..(k + 1) * width]);
                    out.row_mut(src as usize).zip_mut_with(&piece, |a, &b| *a += b);
                }
            }
        }
    }
    out
}

fn char_columns<F: Scalar>(table: &Array2<F>, char_ids: &[usize], spans: &[Range<usize>], d: usize) -> Array2<F> {
    let mut col = Array2::<F>::zeros((char_ids.len(), CHAR_KERNEL * d));
    for span in spans {
        for t in span.clone() {
            for k in 0..CHAR_KERNEL {
                let src = t as isize + k as isize - 1;
                if src >= span.start as isize && src < span.end as isize {
                    col.slice_mut(s![t, k * d..(k + 1) * d]).assign(&table.row(char_ids[src as usize]));
                }
            }
        }
    }
    col
}

fn char_columns_backward<F: Scalar>(
    dcol: &Array2<F>,
    char_ids: &[usize],
    spans: &[Range<usize>],
    d: usize,
    dtable: &mut Array2<F>,
) {
    for span in spans {
        for t in span.clone() {
            for k in 0..CHAR_KERNEL {
                let src = t as isize + k as isize - 1;
                if src >= span.start as isize && src < span.end as isize {
                    let piece = dcol.slice(s![t, k * d..(k + 1) * d]);
                    dtable.row_mut(char_ids[src as usize]).zip_mut_with(&piece, |a, &b| *a += b);
                }
            }
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::phoneme::Level;

    fn seq(s: &str) -> TokenSequence {
        TokenSequence::parse(Level::Phoneme, s).unwrap()
    }

    fn model() -> NeuralAligner<f64> {
        NeuralAligner::new(EncoderConfig::tiny(), TokenizerSpec::phoneme(), 11).unwrap()
    }

    #[test]
    fn both_branches_read_the_same_tensors() {
        let m = model();
        let a = m.encoder_params(Branch::Reference);
        let b = m.encoder_params(Branch::Dysfluent);
        assert!(std::ptr::eq(a, b));
        assert!(!a.is_empty());
    }

    #[test]
    fn swapping_sides_mirrors_the_encoder_features() {
        // Encoder features are identical whichever side a sequence is on.
        let m = model();
        let (x, y) = (seq("P EH N"), seq("K AE T S"));
        let xy = m.encode_pair(&x, &y).unwrap();
        let yx = m.encode_pair(&y, &x).unwrap();
        for i in 0..3 {
            assert_eq!(xy.row(i), yx.row(4 + 1 + i));
        }
    }

    #[test]
    fn distant_tokens_reach_position_zero() {
        let m = model();
        let dys = seq("P EH N");
        let a = m.encode_pair(&seq("AH B K D EH F"), &dys).unwrap();
        let b = m.encode_pair(&seq("AH B K D EH Z"), &dys).unwrap();
        let d = m.config.embed_dim;
        let delta: f64 = (0..d).map(|c| (a[(0, c)] - b[(0, c)]).abs()).sum();
        assert!(delta > 1e-9, "self-attention features unchanged");
        // The dysfluent encoder features do not depend on the reference; its scores do.
        assert_eq!(a.row(7), b.row(7));
        let pa = m.probabilities(&seq("AH B K D EH F"), &dys).unwrap();
        let pb = m.probabilities(&seq("AH B K D EH Z"), &dys).unwrap();
        assert!((pa[(7, 0)] - pb[(7, 0)]).abs() > 1e-12);
    }

    #[test]
    fn zero_head_gives_uniform_allowed_classes() {
        let mut m = model();
        m.tensor_mut("out_w").unwrap().fill(0.0);
        m.tensor_mut("out_b").unwrap().fill(0.0);
        let probs = m.probabilities(&seq("P EH"), &seq("P P EH")).unwrap();
        assert_eq!(probs.row(0).to_vec(), vec![0.0, 0.5, 0.5]);
        assert_eq!(probs.row(2).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(probs.row(3).to_vec(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn rows_are_distributions_with_masked_classes_at_zero() {
        let m = model();
        let probs = m.probabilities(&seq("DH AH K AE T"), &seq("DH AH AH K T")).unwrap();
        for (i, row) in probs.rows().into_iter().enumerate() {
            if i == 5 {
                continue;
            }
            assert!((row.sum() - 1.0).abs() < 1e-9);
            let masked = if i < 5 { 0 } else { 2 };
            assert_eq!(row[masked], 0.0);
        }
    }

    #[test]
    fn batching_does_not_change_results() {
        let m = model();
        let pairs = [(seq("P EH N"), seq("P P EH N")), (seq("AH B"), seq("AH"))];
        let enc: Vec<_> = pairs.iter().map(|(r, d)| m.encode_sequences(r, d).unwrap()).collect();
        let joint = m.forward(&enc).probs;
        let first = m.forward(&enc[..1]).probs;
        let second = m.forward(&enc[1..]).probs;
        for (i, row) in first.rows().into_iter().chain(second.rows()).enumerate() {
            for (a, b) in row.iter().zip(joint.row(i).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradients_from_both_branches_accumulate_in_shared_tensors() {
        let m = model();
        let enc = vec![m.encode_sequences(&seq("P EH"), &seq("K")).unwrap()];
        let fwd = m.forward(&enc);
        // Loss only on the dysfluent row: the shared embedding still collects gradient for P and EH
        // (through the joint blocks) and for K (own branch).
        let mut dlogits = Array2::zeros(fwd.probs.dim());
        dlogits[(3, 0)] = 1.0;
        dlogits[(3, 1)] = -1.0;
        let g = m.backward(&fwd, &dlogits);
        let embed = &g[0];
        let id = |s: &str| m.tokenizer.token_id(&crate::phoneme::Token::parse(Level::Phoneme, s).unwrap());
        for s in ["P", "EH", "K"] {
            assert!(embed.row(id(s)).iter().any(|v| v.abs() > 0.0), "{s}");
        }
        assert!(embed.row(id("S")).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn long_sequences_are_rejected() {
        let m = model();
        let long = seq(&vec!["P"; 9].join(" "));
        assert!(matches!(m.encode_pair(&long, &seq("P")), Err(ModelError::SequenceTooLong { .. })));
        let empty = TokenSequence::parse(Level::Phoneme, "").unwrap();
        assert!(matches!(m.encode_pair(&empty, &seq("P")), Err(ModelError::EmptySequence)));
    }
}
