//! Attentional encoder-decoder with a categorical generator and an
//! embedding-regression head sharing the same decoder state.
//!
//! Layout conventions used throughout:
//! * weight matrices are stored `[fan_in, fan_out]` so a layer is `x @ W + b`;
//! * encoder states are position-major, row `t * B + b`;
//! * teacher-forced outputs are step-major, row `j * B + b`.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::Checkpoint;

use crate::diff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::text::{Batch, EmbeddingTable};

const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub rewe_mid: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            emb_dim: 300,
            hidden: 1024,
            rewe_mid: 200,
            dropout: 0.2,
        }
    }
}

/// Every trainable array, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamId {
    SrcEmbed,
    TgtEmbed,
    EncFwdW,
    EncFwdB,
    EncBwdW,
    EncBwdB,
    BridgeHW,
    BridgeHB,
    BridgeCW,
    BridgeCB,
    AttnW,
    AttnU,
    AttnV,
    DecW,
    DecB,
    GenW,
    GenB,
    ReweW1,
    ReweB1,
    ReweW2,
    ReweB2,
}

impl ParamId {
    pub const ALL: [ParamId; 21] = [
        ParamId::SrcEmbed,
        ParamId::TgtEmbed,
        ParamId::EncFwdW,
        ParamId::EncFwdB,
        ParamId::EncBwdW,
        ParamId::EncBwdB,
        ParamId::BridgeHW,
        ParamId::BridgeHB,
        ParamId::BridgeCW,
        ParamId::BridgeCB,
        ParamId::AttnW,
        ParamId::AttnU,
        ParamId::AttnV,
        ParamId::DecW,
        ParamId::DecB,
        ParamId::GenW,
        ParamId::GenB,
        ParamId::ReweW1,
        ParamId::ReweB1,
        ParamId::ReweW2,
        ParamId::ReweB2,
    ];

    pub const REWE_HEAD: [ParamId; 4] = [ParamId::ReweW1, ParamId::ReweB1, ParamId::ReweW2, ParamId::ReweB2];

    pub fn name(self) -> &'static str {
        match self {
            ParamId::SrcEmbed => "src_embed",
            ParamId::TgtEmbed => "tgt_embed",
            ParamId::EncFwdW => "enc_fwd.w",
            ParamId::EncFwdB => "enc_fwd.b",
            ParamId::EncBwdW => "enc_bwd.w",
            ParamId::EncBwdB => "enc_bwd.b",
            ParamId::BridgeHW => "bridge_h.w",
            ParamId::BridgeHB => "bridge_h.b",
            ParamId::BridgeCW => "bridge_c.w",
            ParamId::BridgeCB => "bridge_c.b",
            ParamId::AttnW => "attn.w",
            ParamId::AttnU => "attn.u",
            ParamId::AttnV => "attn.v",
            ParamId::DecW => "dec.w",
            ParamId::DecB => "dec.b",
            ParamId::GenW => "generator.w",
            ParamId::GenB => "generator.b",
            ParamId::ReweW1 => "rewe.w1",
            ParamId::ReweB1 => "rewe.b1",
            ParamId::ReweW2 => "rewe.w2",
            ParamId::ReweB2 => "rewe.b2",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn shape(self, c: &ModelConfig) -> Vec<usize> {
        let (e, h, m) = (c.emb_dim, c.hidden, c.rewe_mid);
        match self {
            ParamId::SrcEmbed => vec![c.src_vocab, e],
            ParamId::TgtEmbed => vec![c.tgt_vocab, e],
            ParamId::EncFwdW | ParamId::EncBwdW => vec![e + h, 4 * h],
            ParamId::EncFwdB | ParamId::EncBwdB | ParamId::DecB => vec![4 * h],
            ParamId::BridgeHW | ParamId::BridgeCW => vec![2 * h, h],
            ParamId::BridgeHB | ParamId::BridgeCB => vec![h],
            ParamId::AttnW => vec![2 * h, h],
            ParamId::AttnU => vec![h, h],
            ParamId::AttnV => vec![h, 1],
            ParamId::DecW => vec![e + 2 * h + h, 4 * h],
            ParamId::GenW => vec![h, c.tgt_vocab],
            ParamId::GenB => vec![c.tgt_vocab],
            ParamId::ReweW1 => vec![h, m],
            ParamId::ReweB1 => vec![m],
            ParamId::ReweW2 => vec![m, e],
            ParamId::ReweB2 => vec![e],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2SeqModel {
    config: ModelConfig,
    params: Vec<Tensor>,
    /// Frozen copy of the target embeddings that the regression head is
    /// trained towards. Never updated by the optimizer.
    rewe_target: EmbeddingTable,
    pub tgt_embed_trainable: bool,
}

/// The model's parameters as nodes of one graph.
#[derive(Debug, Clone, Copy)]
pub struct Bound<'m> {
    model: &'m Seq2SeqModel,
    nodes: [NodeId; 21],
}

/// Encoder output for one batch.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `[L * B, 2H]`, position-major.
    pub states: NodeId,
    /// `states @ attn.w`, precomputed once per sentence.
    pub keys: NodeId,
    /// `[B, L]`, true at real source tokens.
    pub mask: Vec<bool>,
    pub batch: usize,
    pub len: usize,
    pub init: DecoderState,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: NodeId,
    pub c: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub state: DecoderState,
    /// Decoder output after dropout: the shared input of both heads.
    pub out: NodeId,
    pub context: NodeId,
    /// `[B, L]` attention weights.
    pub attn: NodeId,
}

/// Values of one decoder step for a single sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepOutput {
    pub state: Vec<f64>,
    pub probs: Vec<f64>,
    pub rewe_vec: Vec<f64>,
    pub attn_weights: Vec<f64>,
}

/// Nodes produced by a teacher-forced pass over a batch.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// `[T * B, V]`, step-major.
    pub probs: NodeId,
    /// `[T * B, E]`, present when the regression head was evaluated.
    pub rewe: Option<NodeId>,
    /// One `[B, L]` node per step.
    pub attn: Vec<NodeId>,
    /// Gold next token per row of `probs`.
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
    pub steps: usize,
    pub batch: usize,
}

impl TeacherForced {
    /// Rearranges a step-major node into `[B, T, width]`.
    pub fn batch_major(&self, g: &Graph, node: NodeId) -> Tensor {
        let v = g.value(node);
        let width = v.len() / (self.steps * self.batch);
        let mut out = vec![0.0; v.len()];
        for j in 0..self.steps {
            for b in 0..self.batch {
                let src = &v[(j * self.batch + b) * width..(j * self.batch + b + 1) * width];
                out[(b * self.steps + j) * width..(b * self.steps + j + 1) * width].copy_from_slice(src);
            }
        }
        Tensor::new(vec![self.batch, self.steps, width], out)
    }

    pub fn token_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
    Tensor::new(shape, data)
}

impl Seq2SeqModel {
    /// Uniform [-0.1, 0.1] initialization with LSTM forget-gate biases at 1.
    /// The frozen regression target starts as a copy of the target embeddings.
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params: Vec<Tensor> = ParamId::ALL
            .iter()
            .map(|p| uniform(&mut rng, p.shape(&config)))
            .collect();
        let h = config.hidden;
        for b in [ParamId::EncFwdB, ParamId::EncBwdB, ParamId::DecB] {
            params[b.index()].data_mut()[h..2 * h].fill(1.0);
        }
        let rewe_target = EmbeddingTable::new(params[ParamId::TgtEmbed.index()].clone(), false).expect("finite");
        Self {
            config,
            params,
            rewe_target,
            tgt_embed_trainable: true,
        }
    }

    /// Installs pretrained tables. The target table seeds both the decoder
    /// input embeddings and the frozen regression target.
    pub fn set_embeddings(&mut self, src: Option<&EmbeddingTable>, tgt: Option<&EmbeddingTable>) -> Result<()> {
        if let Some(s) = src {
            self.check_table(ParamId::SrcEmbed, s)?;
            self.params[ParamId::SrcEmbed.index()] = s.tensor().clone();
        }
        if let Some(t) = tgt {
            self.check_table(ParamId::TgtEmbed, t)?;
            self.params[ParamId::TgtEmbed.index()] = t.tensor().clone();
            self.rewe_target = EmbeddingTable::new(t.tensor().clone(), false)?;
        }
        Ok(())
    }

    fn check_table(&self, p: ParamId, t: &EmbeddingTable) -> Result<()> {
        let want = p.shape(&self.config);
        if t.tensor().shape() != want.as_slice() {
            return Err(Error::Data(format!(
                "{} expects shape {want:?}, table has {:?}",
                p.name(),
                t.tensor().shape()
            )));
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        params: Vec<Tensor>,
        rewe_target: EmbeddingTable,
        tgt_embed_trainable: bool,
    ) -> Result<Self> {
        if params.len() != ParamId::ALL.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter arrays, found {}",
                ParamId::ALL.len(),
                params.len()
            )));
        }
        for (p, t) in ParamId::ALL.iter().zip(&params) {
            if t.shape() != p.shape(&config).as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, config implies {:?}",
                    p.name(),
                    t.shape(),
                    p.shape(&config)
                )));
            }
        }
        if rewe_target.rows() != config.tgt_vocab || rewe_target.dim() != config.emb_dim {
            return Err(Error::Checkpoint("regression target table has the wrong shape".into()));
        }
        Ok(Self {
            config,
            params,
            rewe_target,
            tgt_embed_trainable,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, p: ParamId) -> &Tensor {
        &self.params[p.index()]
    }

    pub fn param_mut(&mut self, p: ParamId) -> &mut Tensor {
        &mut self.params[p.index()]
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn rewe_target(&self) -> &EmbeddingTable {
        &self.rewe_target
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Whether the optimizer should update `p`.
    pub fn is_trainable(&self, p: ParamId) -> bool {
        p != ParamId::TgtEmbed || self.tgt_embed_trainable
    }

    /// Copies every parameter into `g` as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound<'_> {
        let nodes: Vec<NodeId> = ParamId::ALL
            .iter()
            .map(|&p| {
                let t = self.params[p.index()].clone();
                if self.is_trainable(p) {
                    g.param(t)
                } else {
                    g.constant(t)
                }
            })
            .collect();
        Bound {
            model: self,
            nodes: nodes.try_into().expect("one node per parameter"),
        }
    }
}

impl Seq2SeqModel {
    /// Uses existing nodes, one per [`ParamId::ALL`] entry, as the
    /// parameters. Only the frozen regression target is read from `self`.
    pub fn bind_nodes(&self, g: &Graph, nodes: &[NodeId]) -> Result<Bound<'_>> {
        let nodes: [NodeId; 21] = nodes
            .try_into()
            .map_err(|_| Error::Data(format!("expected {} parameter nodes", ParamId::ALL.len())))?;
        for (p, n) in ParamId::ALL.iter().zip(&nodes) {
            if g.shape(*n) != p.shape(&self.config).as_slice() {
                return Err(Error::Data(format!("node for {} has the wrong shape", p.name())));
            }
        }
        Ok(Bound { model: self, nodes })
    }
}

fn column(mask: &[bool]) -> Tensor {
    Tensor::new(
        vec![mask.len(), 1],
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )
}

impl<'m> Bound<'m> {
    pub fn node(&self, p: ParamId) -> NodeId {
        self.nodes[p.index()]
    }

    pub fn model(&self) -> &'m Seq2SeqModel {
        self.model
    }

    /// Gradient of every parameter after `g.backward`; zeros for frozen ones.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        ParamId::ALL
            .iter()
            .map(|&p| {
                let n = self.node(p);
                Tensor::new(g.shape(n).to_vec(), g.grad(n).to_vec())
            })
            .collect()
    }

    fn keep_prob(&self, train: bool) -> Option<f64> {
        let p = self.model.config.dropout;
        (train && p > 0.0).then_some(1.0 - p)
    }

    fn maybe_dropout(&self, g: &mut Graph, x: NodeId, train: bool) -> Result<NodeId> {
        match self.keep_prob(train) {
            Some(k) => Ok(g.dropout(x, k)?),
            None => Ok(x),
        }
    }

    fn lstm_cell(&self, g: &mut Graph, w: ParamId, b: ParamId, x: NodeId, state: DecoderState) -> Result<DecoderState> {
        let h = self.model.config.hidden;
        let xh = g.concat(&[x, state.h], 1)?;
        let z = g.matmul(xh, self.node(w))?;
        let z = g.add(z, self.node(b))?;
        let zi = g.slice(z, 1, 0, h)?;
        let zf = g.slice(z, 1, h, 2 * h)?;
        let zg = g.slice(z, 1, 2 * h, 3 * h)?;
        let zo = g.slice(z, 1, 3 * h, 4 * h)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let keep = g.mul(f, state.c)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c)?;
        let hn = g.mul(o, tc)?;
        Ok(DecoderState { h: hn, c })
    }

    /// `mask ? new : old`, row-wise.
    fn select(&self, g: &mut Graph, mask: &[bool], new: DecoderState, old: DecoderState) -> Result<DecoderState> {
        if mask.iter().all(|m| *m) {
            return Ok(new);
        }
        let on = g.constant(column(mask));
        let inv: Vec<bool> = mask.iter().map(|m| !m).collect();
        let off = g.constant(column(&inv));
        let mut pick = |a: NodeId, b: NodeId| -> Result<NodeId> {
            let x = g.mul(a, on)?;
            let y = g.mul(b, off)?;
            Ok(g.add(x, y)?)
        };
        Ok(DecoderState {
            h: pick(new.h, old.h)?,
            c: pick(new.c, old.c)?,
        })
    }

    fn zeros(&self, g: &mut Graph, batch: usize) -> DecoderState {
        let h = self.model.config.hidden;
        let z = g.constant(Tensor::zeros(vec![batch, h]));
        DecoderState { h: z, c: z }
    }

    /// Bidirectional encoder over a `[batch, len]` id matrix.
    pub fn encode(
        &self,
        g: &mut Graph,
        src_ids: &[usize],
        src_mask: &[bool],
        batch: usize,
        len: usize,
        train: bool,
    ) -> Result<Encoded> {
        if len == 0 || batch == 0 || src_ids.len() != batch * len || src_mask.len() != batch * len {
            return Err(Error::Data(format!(
                "source batch of {} ids does not form [{batch}, {len}]",
                src_ids.len()
            )));
        }
        let vs = self.model.config.src_vocab;
        if let Some(bad) = src_ids.iter().find(|&&i| i >= vs) {
            return Err(Error::Data(format!(
                "source id {bad} out of range for vocabulary of {vs}"
            )));
        }
        if (0..batch).any(|b| !src_mask[b * len..(b + 1) * len].iter().any(|m| *m)) {
            return Err(Error::Data("every source sentence needs at least one token".into()));
        }
        let mut inputs = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = (0..batch).map(|b| src_ids[b * len + t]).collect();
            let x = g.embedding(self.node(ParamId::SrcEmbed), ids)?;
            inputs.push(self.maybe_dropout(g, x, train)?);
            masks.push((0..batch).map(|b| src_mask[b * len + t]).collect::<Vec<bool>>());
        }

        let mut fwd = Vec::with_capacity(len);
        let mut st = self.zeros(g, batch);
        for t in 0..len {
            let new = self.lstm_cell(g, ParamId::EncFwdW, ParamId::EncFwdB, inputs[t], st)?;
            st = self.select(g, &masks[t], new, st)?;
            fwd.push(st);
        }
        let fwd_final = st;

        let mut bwd = vec![st; len];
        let mut st = self.zeros(g, batch);
        for t in (0..len).rev() {
            let new = self.lstm_cell(g, ParamId::EncBwdW, ParamId::EncBwdB, inputs[t], st)?;
            st = self.select(g, &masks[t], new, st)?;
            bwd[t] = st;
        }
        let bwd_final = st;

        let per_pos: Vec<NodeId> = (0..len)
            .map(|t| g.concat(&[fwd[t].h, bwd[t].h], 1))
            .collect::<std::result::Result<_, _>>()?;
        let states = if len == 1 { per_pos[0] } else { g.concat(&per_pos, 0)? };
        let keys = g.matmul(states, self.node(ParamId::AttnW))?;

        let hcat = g.concat(&[fwd_final.h, bwd_final.h], 1)?;
        let h0 = g.matmul(hcat, self.node(ParamId::BridgeHW))?;
        let h0 = g.add(h0, self.node(ParamId::BridgeHB))?;
        let h0 = g.tanh(h0)?;
        let ccat = g.concat(&[fwd_final.c, bwd_final.c], 1)?;
        let c0 = g.matmul(ccat, self.node(ParamId::BridgeCW))?;
        let c0 = g.add(c0, self.node(ParamId::BridgeCB))?;
        let c0 = g.tanh(c0)?;

        Ok(Encoded {
            states,
            keys,
            mask: src_mask.to_vec(),
            batch,
            len,
            init: DecoderState { h: h0, c: c0 },
        })
    }

    /// Additive attention of decoder state `s_prev` (`[B, H]`) over `enc`.
    pub fn attend(&self, g: &mut Graph, enc: &Encoded, s_prev: NodeId) -> Result<(NodeId, NodeId)> {
        let query = g.matmul(s_prev, self.node(ParamId::AttnU))?;
        let query = if enc.len > 1 { g.tile(query, enc.len)? } else { query };
        let e = g.add(enc.keys, query)?;
        let e = g.tanh(e)?;
        let scores = g.matmul(e, self.node(ParamId::AttnV))?;
        let scores = g.reshape(scores, vec![enc.len, enc.batch])?;
        let scores = g.transpose(scores)?;
        let weights = g.masked_softmax_rows(scores, enc.mask.clone())?;
        let context = g.weighted_sum(weights, enc.states)?;
        Ok((context, weights))
    }

    /// One decoder step: attention from the previous state, then the LSTM
    /// update on `[embed(y_prev), context]`.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        prev: DecoderState,
        y_prev: &[usize],
        train: bool,
    ) -> Result<StepNodes> {
        let vt = self.model.config.tgt_vocab;
        if let Some(bad) = y_prev.iter().find(|&&i| i >= vt) {
            return Err(Error::Data(format!(
                "target id {bad} out of range for vocabulary of {vt}"
            )));
        }
        if y_prev.len() != enc.batch {
            return Err(Error::Data(format!(
                "{} previous tokens for a batch of {}",
                y_prev.len(),
                enc.batch
            )));
        }
        let emb = g.embedding(self.node(ParamId::TgtEmbed), y_prev.to_vec())?;
        self.decode_step_embedded(g, enc, prev, emb, train)
    }

    /// [`Bound::decode_step`] with the previous-token embedding given
    /// directly as a `[B, E]` node.
    pub fn decode_step_embedded(
        &self,
        g: &mut Graph,
        enc: &Encoded,
        prev: DecoderState,
        emb: NodeId,
        train: bool,
    ) -> Result<StepNodes> {
        let (context, attn) = self.attend(g, enc, prev.h)?;
        let emb = self.maybe_dropout(g, emb, train)?;
        let x = g.concat(&[emb, context], 1)?;
        let state = self.lstm_cell(g, ParamId::DecW, ParamId::DecB, x, prev)?;
        let out = self.maybe_dropout(g, state.h, train)?;
        Ok(StepNodes {
            state,
            out,
            context,
            attn,
        })
    }

    /// `softmax(s W + b)` row-wise.
    pub fn generator(&self, g: &mut Graph, s: NodeId) -> Result<NodeId> {
        let logits = g.matmul(s, self.node(ParamId::GenW))?;
        let logits = g.add(logits, self.node(ParamId::GenB))?;
        Ok(g.softmax_rows(logits)?)
    }

    /// `W2 relu(W1 s + b1) + b2` row-wise.
    pub fn rewe_head(&self, g: &mut Graph, s: NodeId) -> Result<NodeId> {
        let hdn = g.matmul(s, self.node(ParamId::ReweW1))?;
        let hdn = g.add(hdn, self.node(ParamId::ReweB1))?;
        let hdn = g.relu(hdn)?;
        let out = g.matmul(hdn, self.node(ParamId::ReweW2))?;
        Ok(g.add(out, self.node(ParamId::ReweB2))?)
    }

    /// Feeds the gold previous token at every step and applies both heads
    /// to the stacked decoder outputs.
    pub fn forward_teacher_forced(
        &self,
        g: &mut Graph,
        batch: &Batch,
        train: bool,
        with_rewe: bool,
    ) -> Result<TeacherForced> {
        let enc = self.encode(g, &batch.src_ids, &batch.src_mask, batch.size, batch.src_len, train)?;
        let steps = batch.steps();
        let b = batch.size;
        let mut state = enc.init;
        let mut outs = Vec::with_capacity(steps);
        let mut attn = Vec::with_capacity(steps);
        let mut targets = Vec::with_capacity(steps * b);
        let mut mask = Vec::with_capacity(steps * b);
        for j in 0..steps {
            let prev: Vec<usize> = (0..b).map(|i| batch.tgt_ids[i * batch.tgt_len + j]).collect();
            let step = self.decode_step(g, &enc, state, &prev, train)?;
            state = step.state;
            outs.push(step.out);
            attn.push(step.attn);
            for i in 0..b {
                targets.push(batch.tgt_ids[i * batch.tgt_len + j + 1]);
                mask.push(batch.tgt_mask[i * batch.tgt_len + j + 1]);
            }
        }
        let stacked = if steps == 1 { outs[0] } else { g.concat(&outs, 0)? };
        let probs = self.generator(g, stacked)?;
        let rewe = if with_rewe {
            Some(self.rewe_head(g, stacked)?)
        } else {
            None
        };
        Ok(TeacherForced {
            probs,
            rewe,
            attn,
            targets,
            mask,
            steps,
            batch: b,
        })
    }
}

impl Seq2SeqModel {
    /// Runs the encoder on one sentence and a single decoder step from the
    /// initial state, returning plain values.
    pub fn first_step(&self, src: &[usize], y_prev: usize, train: bool, seed: u64) -> Result<DecoderStepOutput> {
        let mut g = Graph::new(seed);
        let m = self.bind(&mut g);
        let mask = vec![true; src.len()];
        let enc = m.encode(&mut g, src, &mask, 1, src.len(), train)?;
        let step = m.decode_step(&mut g, &enc, enc.init, &[y_prev], train)?;
        let probs = m.generator(&mut g, step.out)?;
        let rewe = m.rewe_head(&mut g, step.out)?;
        Ok(DecoderStepOutput {
            state: g.value(step.out).to_vec(),
            probs: g.value(probs).to_vec(),
            rewe_vec: g.value(rewe).to_vec(),
            attn_weights: g.value(step.attn).to_vec(),
        })
    }
}
