//! Convolutional encoder, document-level LSTM decoder and sentence-level
//! convolutional decoder.
//!
//! The same graph builders serve training (on a [`Tape`] that is then
//! differentiated) and inference (the per-op methods below, which run a small
//! throwaway tape over constants).

mod checkpoint;
mod hyper;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::corpus::{EncodedExample, EOD, EOS, PAD, SOS};
use crate::error::{Error, Result};
use crate::nn::{ConvPadding, Gradients, ParamId, ParamStore, Segments, Tape, Var};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use hyper::{Hyperparams, Mode};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Clone, Debug, PartialEq)]
struct Ids {
    src_emb: ParamId,
    src_pos: ParamId,
    enc_conv: Vec<(ParamId, ParamId)>,
    lstm_ih: Option<ParamId>,
    lstm_hh: Option<ParamId>,
    lstm_b: Option<ParamId>,
    w_s: Option<ParamId>,
    w_k: Option<ParamId>,
    tgt_emb: ParamId,
    tgt_pos: ParamId,
    sent_pos: Option<ParamId>,
    dec_conv: Vec<(ParamId, ParamId)>,
    dec_attn: Vec<(ParamId, ParamId)>,
    w_y: ParamId,
}

/// Model parameters together with their architecture.
#[derive(Clone, Debug)]
pub struct Model {
    hp: Hyperparams,
    params: ParamStore,
    ids: Ids,
}

/// Per-token and per-topic negative log-likelihood of one example.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Loss {
    /// Mean over all target tokens.
    pub token: f64,
    /// Mean over document-decoder steps; zero without topic supervision.
    pub topic: f64,
    pub tokens: usize,
}

impl Loss {
    pub fn total(&self) -> f64 {
        self.token + self.topic
    }
}

/// Encoder states for one source.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// Top-layer states `z`, one row per source token.
    pub z: Array2<f64>,
    /// Token plus position embeddings `e`.
    pub embedded: Array2<f64>,
    /// Attention values `z + e`.
    pub values: Array2<f64>,
}

/// Document-decoder recurrent state before producing sentence `t` (from 1).
#[derive(Clone, Debug, PartialEq)]
pub struct DocState {
    pub h: Array2<f64>,
    pub c: Array2<f64>,
    /// Previous sentence vector (zeros before the first step).
    pub s_prev: Array2<f64>,
    pub t: usize,
}

/// Outputs of one sentence-decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerOutput {
    /// Gated convolution output.
    pub o: Array2<f64>,
    /// Attention context.
    pub c: Array2<f64>,
    /// Attention weights over source positions.
    pub attention: Array2<f64>,
    /// Input to the next layer, `o + s_t + c`.
    pub out: Array2<f64>,
}

/// Dropout source; `None` disables it.
pub struct Dropout<'r> {
    rate: f64,
    rng: Option<&'r mut ChaCha8Rng>,
}

impl<'r> Dropout<'r> {
    pub fn off() -> Self {
        Dropout { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Self {
        Dropout { rate, rng: Some(rng) }
    }

    fn apply(&mut self, tape: &mut Tape<'_>, x: Var) -> Var {
        let Some(rng) = self.rng.as_deref_mut() else { return x };
        if self.rate <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.rate;
        let mask = tape
            .value(x)
            .mapv(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        tape.mask(x, mask)
    }
}

/// Packed decoder inputs and targets.
#[derive(Clone, Debug, PartialEq)]
struct DecoderRows {
    tokens: Vec<usize>,
    positions: Vec<usize>,
    /// Row of the sentence-vector matrix for each token (structured modes).
    sentence: Vec<usize>,
    segments: Segments,
    targets: Vec<usize>,
}

struct EncVars {
    z: Var,
    values: Var,
}

struct LayerVars {
    o: Var,
    c: Var,
    attention: Var,
    out: Var,
}

impl Model {
    pub fn new(hp: Hyperparams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::default();
        let d = hp.dim();
        let v = hp.vocab_size;
        let k = hp.kernel_width;
        let keep = 1.0 - hp.dropout;

        let embedding = |params: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, rows: usize, pad: bool| {
            let mut w = normal(rng, rows, d, 0.1);
            if pad {
                w.row_mut(PAD as usize).fill(0.0);
            }
            params.insert(name, w)
        };
        let src_emb = embedding(&mut params, &mut rng, "encoder.embed_tokens", v, true);
        let src_pos = embedding(&mut params, &mut rng, "encoder.embed_positions", hp.max_source_positions, false);
        let tgt_emb = embedding(&mut params, &mut rng, "decoder.embed_tokens", v, true);
        let tgt_pos = embedding(&mut params, &mut rng, "decoder.embed_positions", hp.max_token_positions, false);
        let sent_pos = hp
            .mode
            .is_structured()
            .then(|| embedding(&mut params, &mut rng, "decoder.embed_sentences", hp.max_sentence_positions, false));

        let conv_std = (4.0 * keep / (k * d) as f64).sqrt();
        let conv = |params: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: String| {
            let w = params.insert(format!("{prefix}.weight"), normal(rng, k * d, 2 * d, conv_std));
            let b = params.insert(format!("{prefix}.bias"), Array2::zeros((1, 2 * d)));
            (w, b)
        };
        let enc_conv = (0..hp.enc_layers)
            .map(|l| conv(&mut params, &mut rng, format!("encoder.conv.{l}")))
            .collect();
        let dec_conv = (0..hp.dec_layers)
            .map(|l| conv(&mut params, &mut rng, format!("decoder.conv.{l}")))
            .collect();
        let linear_std = |fan_in: usize| (keep / fan_in as f64).sqrt();
        let dec_attn = (0..hp.dec_layers)
            .map(|l| {
                let w = params.insert(format!("decoder.attention.{l}.weight"), normal(&mut rng, d, d, linear_std(d)));
                let b = params.insert(format!("decoder.attention.{l}.bias"), Array2::zeros((1, d)));
                (w, b)
            })
            .collect();
        let w_y = params.insert("decoder.output", normal(&mut rng, d, v, linear_std(d)));

        let (mut lstm_ih, mut lstm_hh, mut lstm_b, mut w_s, mut w_k) = (None, None, None, None, None);
        if hp.mode.is_structured() {
            let u = Uniform::new_inclusive(-0.1, 0.1).expect("valid range");
            let mut uniform = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || u.sample(&mut rng));
            lstm_ih = Some(params.insert("document.lstm.weight_ih", uniform(d, 4 * d)));
            lstm_hh = Some(params.insert("document.lstm.weight_hh", uniform(d, 4 * d)));
            lstm_b = Some(params.insert("document.lstm.bias", uniform(1, 4 * d)));
            w_s = Some(params.insert("document.sentence", normal(&mut rng, 2 * d, d, linear_std(2 * d))));
            if hp.mode.has_topics() {
                w_k = Some(params.insert("document.topic", normal(&mut rng, d, hp.topic_count, linear_std(d))));
            }
        }

        let ids = Ids {
            src_emb,
            src_pos,
            enc_conv,
            lstm_ih,
            lstm_hh,
            lstm_b,
            w_s,
            w_k,
            tgt_emb,
            tgt_pos,
            sent_pos,
            dec_conv,
            dec_attn,
            w_y,
        };
        Ok(Model { hp, params, ids })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn mode(&self) -> Mode {
        self.hp.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn check_tokens(&self, tokens: &[u32], what: &str) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.hp.vocab_size) {
            Some(t) => Err(Error::InvalidInput(format!(
                "{what} token id {t} outside vocabulary of {}",
                self.hp.vocab_size
            ))),
            None => Ok(()),
        }
    }

    fn check_source(&self, src: &[u32]) -> Result<()> {
        if src.is_empty() || src.iter().all(|&t| t == PAD) {
            return Err(Error::InvalidInput("empty source".into()));
        }
        if src.len() > self.hp.max_source_positions {
            return Err(Error::InvalidInput(format!(
                "source of {} tokens exceeds {} positions",
                src.len(),
                self.hp.max_source_positions
            )));
        }
        self.check_tokens(src, "source")
    }

    fn structured_ids(&self) -> Result<(ParamId, ParamId, ParamId, ParamId)> {
        match (self.ids.lstm_ih, self.ids.lstm_hh, self.ids.lstm_b, self.ids.w_s) {
            (Some(a), Some(b), Some(c), Some(d)) => Ok((a, b, c, d)),
            _ => Err(Error::InvalidInput("flat model has no document decoder".into())),
        }
    }

    // ---- graph builders ----

    fn encode_graph(&self, tape: &mut Tape<'_>, src: &[u32], drop: &mut Dropout<'_>) -> Result<EncVars> {
        self.check_source(src)?;
        let n = src.len();
        let rows: Vec<usize> = src.iter().map(|&t| t as usize).collect();
        let table = tape.param(self.ids.src_emb);
        let tok = tape.gather_rows(table, &rows);
        let pos_table = tape.param(self.ids.src_pos);
        let pos = tape.gather_rows(pos_table, &(0..n).collect::<Vec<_>>());
        let e = tape.add(tok, pos);
        let seg = Segments::single(n);
        let mut h = drop.apply(tape, e);
        for &(w, b) in &self.ids.enc_conv {
            let inp = drop.apply(tape, h);
            let (w, b) = (tape.param(w), tape.param(b));
            let y = tape.conv1d(inp, w, b, &seg, ConvPadding::Same);
            let y = tape.glu(y);
            let r = tape.add(y, h);
            h = tape.scale(r, SQRT_HALF);
        }
        let values = tape.add(h, e);
        Ok(EncVars { z: h, values })
    }

    fn lstm_graph(&self, tape: &mut Tape<'_>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let (ih, hh, b, _) = self.structured_ids()?;
        let d = self.hp.dim();
        let (ih, hh, b) = (tape.param(ih), tape.param(hh), tape.param(b));
        let gx = tape.matmul(x, ih);
        let gh = tape.matmul(h, hh);
        let g = tape.add(gx, gh);
        let g = tape.add_row(g, b);
        let gate = |tape: &mut Tape<'_>, i: usize| tape.slice_cols(g, i * d, (i + 1) * d);
        let (i, f, cand, o) = (gate(tape, 0), gate(tape, 1), gate(tape, 2), gate(tape, 3));
        let (i, f, cand, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(cand), tape.sigmoid(o));
        let keep = tape.mul(f, c);
        let write = tape.mul(i, cand);
        let c = tape.add(keep, write);
        let tc = tape.tanh(c);
        let h = tape.mul(o, tc);
        Ok((h, c))
    }

    fn doc_attend_graph(tape: &mut Tape<'_>, h: Var, z: Var) -> (Var, Var) {
        let scores = tape.matmul_nt(h, z);
        let alpha = tape.softmax_rows(scores);
        (tape.matmul(alpha, z), alpha)
    }

    fn sentence_vector_graph(&self, tape: &mut Tape<'_>, h: Var, ctx: Var) -> Result<Var> {
        let (_, _, _, w_s) = self.structured_ids()?;
        let hc = tape.concat_cols(h, ctx);
        let w = tape.param(w_s);
        let s = tape.matmul(hc, w);
        Ok(tape.tanh(s))
    }

    fn topic_logits_graph(&self, tape: &mut Tape<'_>, s: Var) -> Result<Var> {
        let w_k = self
            .ids
            .w_k
            .ok_or_else(|| Error::InvalidInput(format!("{} model does not predict topics", self.hp.mode)))?;
        let w = tape.param(w_k);
        Ok(tape.matmul(s, w))
    }

    /// Sentence vectors `s_1 .. s_steps`.
    fn doc_graph(&self, tape: &mut Tape<'_>, z: Var, steps: usize) -> Result<Vec<Var>> {
        let d = self.hp.dim();
        let mut h = tape.mean_rows(z);
        let mut c = tape.constant(Array2::zeros((1, d)));
        let mut s_prev = tape.constant(Array2::zeros((1, d)));
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            (h, c) = self.lstm_graph(tape, s_prev, h, c)?;
            let (ctx, _) = Self::doc_attend_graph(tape, h, z);
            s_prev = self.sentence_vector_graph(tape, h, ctx)?;
            out.push(s_prev);
        }
        Ok(out)
    }

    fn embed_graph(&self, tape: &mut Tape<'_>, rows: &DecoderRows) -> Var {
        let table = tape.param(self.ids.tgt_emb);
        let tok = tape.gather_rows(table, &rows.tokens);
        let pos_table = tape.param(self.ids.tgt_pos);
        let pos = tape.gather_rows(pos_table, &rows.positions);
        let w = tape.add(tok, pos);
        match self.ids.sent_pos {
            Some(id) => {
                let table = tape.param(id);
                let sp = tape.gather_rows(table, &rows.sentence);
                tape.add(w, sp)
            }
            None => w,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn dec_layer_graph(
        &self,
        tape: &mut Tape<'_>,
        layer: usize,
        x: Var,
        s_rows: Option<Var>,
        g: Var,
        enc: &EncVars,
        seg: &Segments,
        drop: &mut Dropout<'_>,
    ) -> LayerVars {
        let (cw, cb) = self.ids.dec_conv[layer];
        let (aw, ab) = self.ids.dec_attn[layer];
        let inp = drop.apply(tape, x);
        let (cw, cb) = (tape.param(cw), tape.param(cb));
        let y = tape.conv1d(inp, cw, cb, seg, ConvPadding::Causal);
        let o = tape.glu(y);
        let os = match s_rows {
            Some(s) => tape.add(o, s),
            None => o,
        };
        let (aw, ab) = (tape.param(aw), tape.param(ab));
        let dq = tape.matmul(os, aw);
        let dq = tape.add_row(dq, ab);
        let dq = tape.add(dq, g);
        let scores = tape.matmul_nt(dq, enc.z);
        let attention = tape.softmax_rows(scores);
        let c = tape.matmul(attention, enc.values);
        let out = tape.add(os, c);
        LayerVars { o, c, attention, out }
    }

    /// Top decoder states for packed rows; `s_mat` holds one sentence vector
    /// per row index referenced by `rows.sentence`.
    fn decoder_graph(
        &self,
        tape: &mut Tape<'_>,
        enc: &EncVars,
        s_mat: Option<Var>,
        rows: &DecoderRows,
        drop: &mut Dropout<'_>,
    ) -> Var {
        let g = self.embed_graph(tape, rows);
        let s_rows = s_mat.map(|s| tape.gather_rows(s, &rows.sentence));
        let mut x = drop.apply(tape, g);
        for l in 0..self.hp.dec_layers {
            x = self.dec_layer_graph(tape, l, x, s_rows, g, enc, &rows.segments, drop).out;
        }
        x
    }

    fn output_graph(&self, tape: &mut Tape<'_>, top: Var) -> Var {
        let w = tape.param(self.ids.w_y);
        tape.matmul(top, w)
    }

    // ---- training ----

    fn decoder_rows(&self, ex: &EncodedExample) -> Result<DecoderRows> {
        let n = ex.sentences.len();
        if n == 0 {
            return Err(Error::InvalidInput("summary has no sentences".into()));
        }
        for s in &ex.sentences {
            self.check_tokens(s, "summary")?;
        }
        let terminal = |i: usize| if i + 1 == n { EOD } else { EOS } as usize;
        let mut rows = DecoderRows {
            tokens: Vec::new(),
            positions: Vec::new(),
            sentence: Vec::new(),
            segments: Segments::single(0),
            targets: Vec::new(),
        };
        if self.hp.mode.is_structured() {
            if n > self.hp.max_sentence_positions {
                return Err(Error::InvalidInput(format!(
                    "summary of {n} sentences exceeds {} sentence positions",
                    self.hp.max_sentence_positions
                )));
            }
            let mut lengths = Vec::with_capacity(n);
            for (i, sent) in ex.sentences.iter().enumerate() {
                rows.tokens.push(SOS as usize);
                rows.tokens.extend(sent.iter().map(|&t| t as usize));
                rows.targets.extend(sent.iter().map(|&t| t as usize));
                rows.targets.push(terminal(i));
                rows.positions.extend(0..=sent.len());
                rows.sentence.extend(std::iter::repeat_n(i, sent.len() + 1));
                lengths.push(sent.len() + 1);
            }
            rows.segments = Segments::from_lengths(lengths);
        } else {
            for (i, sent) in ex.sentences.iter().enumerate() {
                rows.targets.extend(sent.iter().map(|&t| t as usize));
                rows.targets.push(terminal(i));
            }
            rows.tokens.push(SOS as usize);
            rows.tokens.extend_from_slice(&rows.targets[..rows.targets.len() - 1]);
            rows.positions = (0..rows.tokens.len()).collect();
            rows.sentence = vec![0; rows.tokens.len()];
            rows.segments = Segments::single(rows.tokens.len());
        }
        if let Some(&p) = rows.positions.iter().max() {
            if p >= self.hp.max_token_positions {
                return Err(Error::InvalidInput(format!(
                    "summary needs {} token positions, model has {}",
                    p + 1,
                    self.hp.max_token_positions
                )));
            }
        }
        Ok(rows)
    }

    fn topic_targets(&self, ex: &EncodedExample) -> Result<Option<Vec<usize>>> {
        if !self.hp.mode.has_topics() {
            return Ok(None);
        }
        let labels = ex
            .topic_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("topic mode needs topic labels".into()))?;
        if labels.len() != ex.sentences.len() + 1 {
            return Err(Error::InvalidInput(format!(
                "{} topic labels for {} sentences (expected one per sentence plus end-of-topic)",
                labels.len(),
                ex.sentences.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l as usize >= self.hp.topic_count) {
            return Err(Error::InvalidInput(format!(
                "topic label {l} outside {} labels",
                self.hp.topic_count
            )));
        }
        Ok(Some(labels.iter().map(|&l| l as usize).collect()))
    }

    /// Builds the full loss graph; returns the root and its parts.
    fn loss_graph(&self, tape: &mut Tape<'_>, ex: &EncodedExample, drop: &mut Dropout<'_>) -> Result<(Var, Loss)> {
        let rows = self.decoder_rows(ex)?;
        let topics = self.topic_targets(ex)?;
        let enc = self.encode_graph(tape, &ex.source, drop)?;
        let mut topic_loss = None;
        let s_mat = if self.hp.mode.is_structured() {
            let n = ex.sentences.len();
            let steps = n + usize::from(topics.is_some());
            let s = self.doc_graph(tape, enc.z, steps)?;
            if let Some(targets) = &topics {
                let all = tape.concat_rows(&s);
                let logits = self.topic_logits_graph(tape, all)?;
                topic_loss = Some(tape.cross_entropy(logits, targets));
            }
            Some(tape.concat_rows(&s[..n]))
        } else {
            None
        };
        let top = self.decoder_graph(tape, &enc, s_mat, &rows, drop);
        let logits = self.output_graph(tape, top);
        let token = tape.cross_entropy(logits, &rows.targets);
        let mut loss = Loss {
            token: tape.scalar(token),
            topic: 0.0,
            tokens: rows.targets.len(),
        };
        let root = match topic_loss {
            Some(t) => {
                loss.topic = tape.scalar(t);
                tape.add(token, t)
            }
            None => token,
        };
        Ok((root, loss))
    }

    /// Loss without dropout.
    pub fn forward_loss(&self, ex: &EncodedExample) -> Result<Loss> {
        let mut tape = Tape::new(&self.params);
        Ok(self.loss_graph(&mut tape, ex, &mut Dropout::off())?.1)
    }

    /// Loss and its gradient, accumulated into `grads`.
    pub fn loss_and_grad(&self, ex: &EncodedExample, drop: &mut Dropout<'_>, grads: &mut Gradients) -> Result<Loss> {
        let mut tape = Tape::new(&self.params);
        let (root, loss) = self.loss_graph(&mut tape, ex, drop)?;
        if !loss.total().is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss (token {}, topic {})",
                loss.token, loss.topic
            )));
        }
        tape.backward(root, grads);
        Ok(loss)
    }

    /// Log-probabilities over the vocabulary at every decoder position under
    /// teacher forcing: one row per target, sentence by sentence.
    pub fn teacher_forced_distributions(&self, ex: &EncodedExample) -> Result<Array2<f64>> {
        let rows = self.decoder_rows(ex)?;
        let mut tape = Tape::new(&self.params);
        let drop = &mut Dropout::off();
        let enc = self.encode_graph(&mut tape, &ex.source, drop)?;
        let s_mat = if self.hp.mode.is_structured() {
            let s = self.doc_graph(&mut tape, enc.z, ex.sentences.len())?;
            Some(tape.concat_rows(&s))
        } else {
            None
        };
        let top = self.decoder_graph(&mut tape, &enc, s_mat, &rows, drop);
        let logits = self.output_graph(&mut tape, top);
        let mut lv = tape.value(logits).to_owned();
        for mut row in lv.rows_mut() {
            let lse = crate::nn::log_sum_exp(row.iter().copied());
            row -= lse;
        }
        Ok(lv)
    }

    /// Log-probability of every target token under teacher forcing, in
    /// target order (sentence by sentence, terminals included).
    pub fn teacher_forced_log_probs(&self, ex: &EncodedExample) -> Result<Vec<f64>> {
        let targets = self.decoder_rows(ex)?.targets;
        let dist = self.teacher_forced_distributions(ex)?;
        Ok(targets.iter().enumerate().map(|(i, &t)| dist[[i, t]]).collect())
    }

    /// Sentence vectors of the training graph, one row per document step
    /// (one extra step for the end-of-topic label in topic mode).
    pub fn sentence_vectors(&self, ex: &EncodedExample) -> Result<Array2<f64>> {
        if !self.hp.mode.is_structured() {
            return Err(Error::InvalidInput(format!("mode {} has no sentence vectors", self.hp.mode)));
        }
        let steps = ex.sentences.len() + usize::from(self.hp.mode.has_topics());
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_graph(&mut tape, &ex.source, &mut Dropout::off())?;
        let s = self.doc_graph(&mut tape, enc.z, steps)?;
        let all = tape.concat_rows(&s);
        Ok(tape.value(all).to_owned())
    }

    // ---- inference ----

    pub fn encode(&self, src: &[u32]) -> Result<EncoderOutput> {
        let mut tape = Tape::new(&self.params);
        let enc = self.encode_graph(&mut tape, src, &mut Dropout::off())?;
        let z = tape.value(enc.z).to_owned();
        let values = tape.value(enc.values).to_owned();
        let embedded = &values - &z;
        Ok(EncoderOutput { z, embedded, values })
    }

    pub fn doc_init(&self, enc: &EncoderOutput) -> DocState {
        let d = self.hp.dim();
        DocState {
            h: enc.z.mean_axis(Axis(0)).expect("non-empty source").insert_axis(Axis(0)),
            c: Array2::zeros((1, d)),
            s_prev: Array2::zeros((1, d)),
            t: 1,
        }
    }

    /// Document-level attention of state `h` over the encoder states:
    /// returns the context and the weights.
    pub fn doc_attend(&self, h: &Array2<f64>, enc: &EncoderOutput) -> (Array2<f64>, Array2<f64>) {
        let mut tape = Tape::new(&self.params);
        let h = tape.constant(h.clone());
        let z = tape.constant(enc.z.clone());
        let (ctx, alpha) = Self::doc_attend_graph(&mut tape, h, z);
        (tape.value(ctx).to_owned(), tape.value(alpha).to_owned())
    }

    /// One document-decoder step; returns the next state and the sentence
    /// vector `s_t`. One step past the sentence limit is allowed so the topic
    /// head can predict end-of-topic after a full-length summary.
    pub fn doc_step(&self, state: &DocState, enc: &EncoderOutput) -> Result<(DocState, Array2<f64>)> {
        if state.t == 0 || state.t > self.hp.max_sentence_positions + 1 {
            return Err(Error::InvalidInput("document decoder ran past its sentence limit".into()));
        }
        let mut tape = Tape::new(&self.params);
        let x = tape.constant(state.s_prev.clone());
        let h = tape.constant(state.h.clone());
        let c = tape.constant(state.c.clone());
        let z = tape.constant(enc.z.clone());
        let (h, c) = self.lstm_graph(&mut tape, x, h, c)?;
        let (ctx, _) = Self::doc_attend_graph(&mut tape, h, z);
        let s = self.sentence_vector_graph(&mut tape, h, ctx)?;
        let s = tape.value(s).to_owned();
        let next = DocState {
            h: tape.value(h).to_owned(),
            c: tape.value(c).to_owned(),
            s_prev: s.clone(),
            t: state.t + 1,
        };
        Ok((next, s))
    }

    /// Topic distribution predicted from sentence vector `s`.
    pub fn topic_probs(&self, s: &Array2<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.params);
        let s = tape.constant(s.clone());
        let logits = self.topic_logits_graph(&mut tape, s)?;
        let p = tape.softmax_rows(logits);
        Ok(tape.value(p).row(0).to_vec())
    }

    /// Decoder input embedding of `token` at `position` of sentence `sentence`.
    pub fn embed_target(&self, token: u32, position: usize, sentence: Option<usize>) -> Result<Array2<f64>> {
        self.check_tokens(&[token], "target")?;
        if position >= self.hp.max_token_positions {
            return Err(Error::InvalidInput(format!("token position {position} out of range")));
        }
        let sentence = self.sentence_index(sentence)?;
        let rows = DecoderRows {
            tokens: vec![token as usize],
            positions: vec![position],
            sentence: vec![sentence],
            segments: Segments::single(1),
            targets: Vec::new(),
        };
        let mut tape = Tape::new(&self.params);
        let w = self.embed_graph(&mut tape, &rows);
        Ok(tape.value(w).to_owned())
    }

    fn sentence_index(&self, sentence: Option<usize>) -> Result<usize> {
        match (self.hp.mode.is_structured(), sentence) {
            (true, Some(t)) if t < self.hp.max_sentence_positions => Ok(t),
            (true, Some(t)) => Err(Error::InvalidInput(format!("sentence index {t} out of range"))),
            (true, None) => Err(Error::InvalidInput("structured decoder needs a sentence index".into())),
            (false, _) => Ok(0),
        }
    }

    /// Sentence-level attention with queries built from conv output `o`,
    /// sentence vector `s` and target embeddings `g`; returns context and weights.
    pub fn sent_attend(
        &self,
        layer: usize,
        o: &Array2<f64>,
        s: Option<&Array2<f64>>,
        g: &Array2<f64>,
        enc: &EncoderOutput,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let (aw, ab) = *self
            .ids
            .dec_attn
            .get(layer)
            .ok_or_else(|| Error::InvalidInput(format!("no decoder layer {layer}")))?;
        let a = &self.params;
        let os = match s {
            Some(s) => o + s,
            None => o.clone(),
        };
        let dq = os.dot(a.get(aw)) + a.get(ab) + g;
        let attention = crate::nn::softmax_rows(dq.dot(&enc.z.t()).view());
        let c = attention.dot(&enc.values);
        Ok((c, attention))
    }

    /// One sentence-decoder layer over a single causal sequence `x` with
    /// target embeddings `g`.
    pub fn sent_decode_layer(
        &self,
        layer: usize,
        x: &Array2<f64>,
        s: Option<&Array2<f64>>,
        g: &Array2<f64>,
        enc: &EncoderOutput,
    ) -> Result<LayerOutput> {
        if layer >= self.hp.dec_layers {
            return Err(Error::InvalidInput(format!("no decoder layer {layer}")));
        }
        if self.hp.mode.is_structured() != s.is_some() {
            return Err(Error::InvalidInput("sentence vector must be given exactly in structured modes".into()));
        }
        let mut tape = Tape::new(&self.params);
        let n = x.nrows();
        let xv = tape.constant(x.clone());
        let gv = tape.constant(g.clone());
        let s_rows = s.map(|s| {
            let sv = tape.constant(s.clone());
            tape.gather_rows(sv, &vec![0; n])
        });
        let enc_vars = EncVars {
            z: tape.constant(enc.z.clone()),
            values: tape.constant(enc.values.clone()),
        };
        let lv = self.dec_layer_graph(&mut tape, layer, xv, s_rows, gv, &enc_vars, &Segments::single(n), &mut Dropout::off());
        Ok(LayerOutput {
            o: tape.value(lv.o).to_owned(),
            c: tape.value(lv.c).to_owned(),
            attention: tape.value(lv.attention).to_owned(),
            out: tape.value(lv.out).to_owned(),
        })
    }

    /// Next-token distribution from a top-layer state row.
    pub fn token_probs(&self, top: &Array2<f64>) -> Vec<f64> {
        let logits = top.dot(self.params.get(self.ids.w_y));
        crate::nn::softmax_rows(logits.view()).row(0).to_vec()
    }

    /// Next-token log-probabilities after each prefix.
    ///
    /// Every prefix is read as `<s> context prefix`, with positions counted
    /// from the `<s>`. Only the last `receptive_field` inputs can influence
    /// the final position, so the decoder runs on that window alone.
    pub fn next_token_log_probs(
        &self,
        enc: &EncoderOutput,
        s: Option<&Array2<f64>>,
        sentence: Option<usize>,
        context: &[u32],
        prefixes: &[&[u32]],
    ) -> Result<Vec<Vec<f64>>> {
        self.next_token_log_probs_window(enc, s, sentence, context, prefixes, self.hp.receptive_field())
    }

    fn next_token_log_probs_window(
        &self,
        enc: &EncoderOutput,
        s: Option<&Array2<f64>>,
        sentence: Option<usize>,
        context: &[u32],
        prefixes: &[&[u32]],
        window: usize,
    ) -> Result<Vec<Vec<f64>>> {
        if self.hp.mode.is_structured() != s.is_some() {
            return Err(Error::InvalidInput("sentence vector must be given exactly in structured modes".into()));
        }
        if prefixes.is_empty() {
            return Ok(Vec::new());
        }
        let sentence = self.sentence_index(sentence)?;
        self.check_tokens(context, "context")?;
        let mut rows = DecoderRows {
            tokens: Vec::new(),
            positions: Vec::new(),
            sentence: Vec::new(),
            segments: Segments::single(0),
            targets: Vec::new(),
        };
        let mut lengths = Vec::with_capacity(prefixes.len());
        let mut last = Vec::with_capacity(prefixes.len());
        for p in prefixes {
            self.check_tokens(p, "prefix")?;
            let full_len = 1 + context.len() + p.len();
            if full_len > self.hp.max_token_positions {
                return Err(Error::InvalidInput(format!(
                    "decoder input of {full_len} tokens exceeds {} positions",
                    self.hp.max_token_positions
                )));
            }
            let start = full_len.saturating_sub(window);
            for pos in start..full_len {
                let tok = if pos == 0 {
                    SOS
                } else if pos <= context.len() {
                    context[pos - 1]
                } else {
                    p[pos - 1 - context.len()]
                };
                rows.tokens.push(tok as usize);
                rows.positions.push(pos);
            }
            lengths.push(full_len - start);
            last.push(rows.tokens.len() - 1);
        }
        rows.sentence = vec![sentence; rows.tokens.len()];
        rows.segments = Segments::from_lengths(lengths);

        let mut tape = Tape::new(&self.params);
        let enc_vars = EncVars {
            z: tape.constant(enc.z.clone()),
            values: tape.constant(enc.values.clone()),
        };
        let s_mat = s.map(|s| {
            let mut m = Array2::zeros((sentence + 1, s.ncols()));
            m.row_mut(sentence).assign(&s.row(0));
            tape.constant(m)
        });
        let top = self.decoder_graph(&mut tape, &enc_vars, s_mat, &rows, &mut Dropout::off());
        let top = tape.gather_rows(top, &last);
        let logits = self.output_graph(&mut tape, top);
        let lv = tape.value(logits);
        Ok(lv
            .rows()
            .into_iter()
            .map(|row| {
                let lse = crate::nn::log_sum_exp(row.iter().copied());
                row.iter().map(|&x| x - lse).collect()
            })
            .collect())
    }

    /// Per-position log-probability of each target token under teacher
    /// forcing, for a single sentence decoded after `context`.
    pub fn score_tokens(
        &self,
        enc: &EncoderOutput,
        s: Option<&Array2<f64>>,
        sentence: Option<usize>,
        context: &[u32],
        tokens: &[u32],
    ) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            let lp = self.next_token_log_probs(enc, s, sentence, context, &[&tokens[..i]])?;
            out.push(lp[0][tokens[i] as usize]);
        }
        Ok(out)
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}
