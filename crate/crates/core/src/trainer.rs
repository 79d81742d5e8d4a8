//! Optimization loop with dev-set model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedExample, Vocab};
use crate::error::{Error, Result};
use crate::inference::{generate, DecodeConfig};
use crate::metrics::{rouge_l, rouge_n, rouge_tokens};
use crate::model::{Dropout, Model};
use crate::nn::{Gradients, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    /// Learning rate multiplier after a dev evaluation without dev-loss
    /// improvement. Without a dev set the rate stays fixed.
    pub lr_decay: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Evaluate on the dev set every this many epochs.
    pub eval_every: usize,
    /// Stop once the epoch's mean training token loss falls below this.
    pub target_train_loss: Option<f64>,
    pub seed: u64,
    pub dev_decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.25,
            momentum: 0.99,
            clip_norm: 0.1,
            lr_decay: 0.1,
            min_lr: 1e-5,
            batch_size: 32,
            max_epochs: 50,
            eval_every: 1,
            target_train_loss: None,
            seed: 1,
            dev_decode: DecodeConfig::greedy(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        self.dev_decode.validate()
    }
}

/// Nesterov momentum SGD.
#[derive(Clone, Debug)]
pub struct Nesterov {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<ndarray::Array2<f64>>,
}

impl Nesterov {
    pub fn new(params: &ParamStore, lr: f64, momentum: f64) -> Self {
        let velocity = params.iter().map(|(_, v)| ndarray::Array2::zeros(v.raw_dim())).collect();
        Nesterov { lr, momentum, velocity }
    }

    /// `v ← μv + g; p ← p − lr (g + μv)`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        let mu = self.momentum;
        for (id, g) in grads.iter() {
            let v = &mut self.velocity[id.0];
            v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
            let p = params.get_mut(id);
            ndarray::Zip::from(p).and(g).and(&*v).for_each(|p, &g, &v| *p -= self.lr * (g + mu * v));
        }
    }
}

/// Dev-set loss and greedy-decoding ROUGE F scores.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DevScores {
    pub loss: f64,
    pub r1: f64,
    pub r2: f64,
    pub rl: f64,
}

/// Mean loss and ROUGE of decoded summaries against the references.
pub fn evaluate_dev(model: &Model, dev: &[EncodedExample], vocab: &Vocab, decode: &DecodeConfig) -> Result<DevScores> {
    let mut s = DevScores::default();
    if dev.is_empty() {
        return Ok(s);
    }
    for ex in dev {
        s.loss += model.forward_loss(ex)?.total();
        let out = generate(model, &ex.source, decode)?;
        let sys = rouge_tokens(&vocab.decode(&out.tokens()));
        let refr = rouge_tokens(&vocab.decode(&ex.summary_tokens()));
        s.r1 += rouge_n(&sys, &refr, 1, false).f;
        s.r2 += rouge_n(&sys, &refr, 2, false).f;
        s.rl += rouge_l(&sys, &refr, false).f;
    }
    let n = dev.len() as f64;
    s.loss /= n;
    s.r1 /= n;
    s.r2 /= n;
    s.rl /= n;
    Ok(s)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    /// Token part of `train_loss`, in nats per token.
    pub train_token_loss: f64,
    pub dev_loss: Option<f64>,
    #[serde(rename = "dev_R1")]
    pub dev_r1: Option<f64>,
    #[serde(rename = "dev_R2")]
    pub dev_r2: Option<f64>,
    #[serde(rename = "dev_RL")]
    pub dev_rl: Option<f64>,
    pub lr: f64,
}

pub struct TrainOutcome {
    /// Best model by dev ROUGE-L (ties: lower dev loss); the final model
    /// when there is no dev set.
    pub best: Model,
    pub best_epoch: usize,
    pub last: Model,
    pub log: Vec<LogRecord>,
}

/// Shuffles `order`, sorts each window of `BUCKET_BATCHES` batches by source
/// length, cuts batches and shuffles the batches.
fn bucketed_batches(order: &mut [usize], data: &[EncodedExample], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    const BUCKET_BATCHES: usize = 8;
    order.shuffle(rng);
    let mut batches = Vec::new();
    for window in order.chunks_mut(size * BUCKET_BATCHES) {
        window.sort_by_key(|&i| data[i].source.len());
        batches.extend(window.chunks(size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    batches
}

fn is_better(new: &DevScores, old: &DevScores) -> bool {
    new.rl > old.rl || (new.rl == old.rl && new.loss < old.loss)
}

/// Trains `model` on `train`, selecting on `dev`. Every log record is also
/// passed to `on_record` as soon as it exists.
pub fn train(
    mut model: Model,
    train: &[EncodedExample],
    dev: &[EncodedExample],
    vocab: &Vocab,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&LogRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD50F);
    let dropout = model.hyperparams().dropout;
    let mut opt = Nesterov::new(model.params(), cfg.lr, cfg.momentum);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(DevScores, Model, usize)> = None;
    let mut best_loss = f64::INFINITY;
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        let batches = bucketed_batches(&mut order, train, cfg.batch_size, &mut rng);
        let (mut loss_sum, mut token_sum) = (0.0, 0.0);
        for batch in &batches {
            let mut grads = Gradients::new(model.params());
            for &i in batch.iter() {
                let mut drop = Dropout::new(dropout, &mut drop_rng);
                let loss = model.loss_and_grad(&train[i], &mut drop, &mut grads).map_err(|e| {
                    Error::Numeric(format!(
                        "epoch {epoch} step {step}: example {i} ({}): {e}",
                        train[i].title.join(" ")
                    ))
                })?;
                loss_sum += loss.total();
                token_sum += loss.token;
            }
            grads.scale(1.0 / batch.len() as f64);
            let norm = grads.clip_global_norm(cfg.clip_norm);
            if !norm.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch} step {step}: gradient norm {norm} for examples {batch:?}"
                )));
            }
            opt.step(model.params_mut(), &grads);
            step += 1;
        }
        let train_loss = loss_sum / train.len() as f64;
        let token_loss = token_sum / train.len() as f64;
        let mut rec = LogRecord {
            epoch,
            step,
            train_loss,
            train_token_loss: token_loss,
            dev_loss: None,
            dev_r1: None,
            dev_r2: None,
            dev_rl: None,
            lr: opt.lr,
        };
        let converged = cfg.target_train_loss.is_some_and(|t| token_loss < t);
        if !dev.is_empty() && (epoch % cfg.eval_every == 0 || epoch == cfg.max_epochs || converged) {
            let scores = evaluate_dev(&model, dev, vocab, &cfg.dev_decode)?;
            rec.dev_loss = Some(scores.loss);
            rec.dev_r1 = Some(scores.r1);
            rec.dev_r2 = Some(scores.r2);
            rec.dev_rl = Some(scores.rl);
            if scores.loss < best_loss {
                best_loss = scores.loss;
            } else {
                opt.lr *= cfg.lr_decay;
            }
            if best.as_ref().is_none_or(|(b, _, _)| is_better(&scores, b)) {
                best = Some((scores, model.clone(), epoch));
            }
        }
        on_record(&rec)?;
        log.push(rec);
        if converged || opt.lr < cfg.min_lr {
            break;
        }
    }
    let last_epoch = log.last().map_or(0, |r| r.epoch);
    let (best, best_epoch) = match best {
        Some((_, m, e)) => (m, e),
        None => (model.clone(), last_epoch),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Checkpoint, Hyperparams, Mode};
    use crate::synth::{encoded_corpus, SynthConfig};

    fn corpus(n: usize) -> (Vec<EncodedExample>, Vocab) {
        encoded_corpus(&SynthConfig { instances: n, ..Default::default() }).unwrap()
    }

    fn hp(vocab: &Vocab, mode: Mode) -> Hyperparams {
        Hyperparams {
            emb_dim: 16,
            hidden_dim: 16,
            enc_layers: 1,
            dec_layers: 2,
            kernel_width: 3,
            dropout: 0.0,
            max_source_positions: 200,
            max_token_positions: 120,
            max_sentence_positions: 15,
            vocab_size: vocab.len(),
            topic_count: 6,
            mode,
        }
    }

    #[test]
    fn buckets_cover_every_example_once() {
        let (data, _) = corpus(30);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = bucketed_batches(&mut order, &data, 4, &mut rng);
        assert!(batches.iter().all(|b| !b.is_empty() && b.len() <= 4));
        let mut all: Vec<usize> = batches.concat();
        all.sort();
        assert_eq!(all, (0..30).collect::<Vec<_>>());
        for b in &batches {
            assert!(b.windows(2).all(|w| data[w[0]].source.len() <= data[w[1]].source.len()));
        }
    }

    #[test]
    fn nesterov_matches_hand_update() {
        let mut store = ParamStore::default();
        let id = store.insert("w", ndarray::arr2(&[[1.0]]));
        let mut opt = Nesterov::new(&store, 0.1, 0.9);
        let mut g = Gradients::new(&store);
        g.accumulate(id, &ndarray::arr2(&[[2.0]]));
        opt.step(&mut store, &g);
        // v = 2, p = 1 - 0.1 (2 + 1.8)
        assert!((store.get(id)[[0, 0]] - 0.62).abs() < 1e-15);
        opt.step(&mut store, &g);
        // v = 3.8, p = 0.62 - 0.1 (2 + 3.42)
        assert!((store.get(id)[[0, 0]] - 0.078).abs() < 1e-12);
    }

    #[test]
    fn small_steps_decrease_a_fixed_batch_loss() {
        let (data, vocab) = corpus(4);
        let mut model = Model::new(hp(&vocab, Mode::StructuredTopic), 1).unwrap();
        let mut opt = Nesterov::new(model.params(), 0.05, 0.0);
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let mut grads = Gradients::new(model.params());
            let mut total = 0.0;
            for ex in &data {
                total += model.loss_and_grad(ex, &mut Dropout::off(), &mut grads).unwrap().total();
            }
            assert!(total < prev, "{total} !< {prev}");
            prev = total;
            grads.scale(1.0 / data.len() as f64);
            opt.step(model.params_mut(), &grads);
        }
    }

    #[test]
    fn same_seed_same_log() {
        let (data, vocab) = corpus(12);
        let cfg = TrainConfig { max_epochs: 2, batch_size: 4, ..Default::default() };
        let run = || {
            let model = Model::new(hp(&vocab, Mode::Structured), 3).unwrap();
            train(model, &data[..8], &data[8..], &vocab, &cfg, |_| Ok(())).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.log.len(), 2);
        assert!(a.log.iter().all(|r| r.dev_rl.is_some_and(|x| (0.0..=1.0).contains(&x))));
        assert!(a.best.params().iter().zip(b.best.params().iter()).all(|(x, y)| x.1 == y.1));
    }

    #[test]
    fn memorized_dev_set_scores_full_rouge() {
        let (data, vocab) = corpus(6);
        let cfg = TrainConfig {
            momentum: 0.95,
            max_epochs: 300,
            batch_size: 2,
            eval_every: 10,
            target_train_loss: Some(0.002),
            ..Default::default()
        };
        let model = Model::new(hp(&vocab, Mode::Structured), 5).unwrap();
        let out = train(model, &data, &data, &vocab, &cfg, |_| Ok(())).unwrap();
        let best = out.log.iter().filter_map(|r| r.dev_r1).fold(0.0, f64::max);
        assert_eq!(best, 1.0, "{:?}", out.log.last());
        let d = evaluate_dev(&out.best, &data, &vocab, &cfg.dev_decode).unwrap();
        assert_eq!((d.r1, d.r2, d.rl), (1.0, 1.0, 1.0));
    }

    #[test]
    fn reloaded_checkpoint_gives_identical_dev_scores() {
        let (data, vocab) = corpus(6);
        let cfg = TrainConfig { max_epochs: 1, batch_size: 3, ..Default::default() };
        let model = Model::new(hp(&vocab, Mode::StructuredTopic), 2).unwrap();
        let out = train(model, &data[..4], &data[4..], &vocab, &cfg, |_| Ok(())).unwrap();
        let ck = Checkpoint { model: out.best, vocab_fingerprint: vocab.fingerprint() };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        let a = evaluate_dev(&ck.model, &data[4..], &vocab, &cfg.dev_decode).unwrap();
        let b = evaluate_dev(&back.model, &data[4..], &vocab, &cfg.dev_decode).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a, b);
        assert_eq!(Some(a.loss), out.log[0].dev_loss);
    }

    #[test]
    fn invalid_config_and_empty_data() {
        let (data, vocab) = corpus(2);
        let model = Model::new(hp(&vocab, Mode::Flat), 0).unwrap();
        let bad = TrainConfig { lr: 0.0, ..Default::default() };
        assert!(train(model.clone(), &data, &[], &vocab, &bad, |_| Ok(())).is_err());
        assert!(train(model.clone(), &[], &[], &vocab, &TrainConfig::default(), |_| Ok(())).is_err());
        let empty = evaluate_dev(&model, &[], &vocab, &DecodeConfig::greedy()).unwrap();
        assert_eq!(empty, DevScores::default());
    }

    #[test]
    fn diverging_training_reports_numeric_error() {
        let (data, vocab) = corpus(2);
        let mut model = Model::new(hp(&vocab, Mode::Flat), 0).unwrap();
        let id = model.params().find("decoder.output").unwrap();
        model.params_mut().get_mut(id)[[0, 5]] = f64::NAN;
        let err = train(model, &data, &[], &vocab, &TrainConfig::default(), |_| Ok(())).err().unwrap();
        assert!(matches!(err, Error::Numeric(_)), "{err}");
        assert!(err.to_string().contains("epoch 1"));
    }
}
