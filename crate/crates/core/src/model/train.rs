use serde::{Deserialize, Serialize};

use super::{lm_loss, sequence_nll, ModelConfig, TransformerLM};
use crate::corpus::{Batch, BatchMode, BatchStream, Lang, PerLang};
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, substream, AdamW, AdamWConfig, Float, Rng, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub micro_batch: usize,
    /// Micro-batches per optimizer step; the virtual batch is
    /// `micro_batch · accumulation` sequences.
    pub accumulation: usize,
    pub optimizer: AdamWConfig,
    /// Validation interval in optimizer steps; `0` evaluates only at the end.
    pub eval_every: usize,
    /// Cap on validation sequences per language; `0` uses all of them.
    pub eval_sequences: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            micro_batch: 8,
            accumulation: 4,
            optimizer: AdamWConfig {
                lr: 1e-3,
                warmup_steps: 50,
                ..AdamWConfig::default()
            },
            eval_every: 100,
            eval_sequences: 64,
        }
    }
}

impl TrainConfig {
    pub fn virtual_batch(&self) -> usize {
        self.micro_batch * self.accumulation
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    /// `(step, mean training loss of the virtual batch)`.
    pub train: Vec<(usize, f64)>,
    /// `(step, language, validation cross-entropy)`.
    pub val: Vec<(usize, Lang, f64)>,
}

impl TrainLog {
    pub fn train_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (step, loss) in &self.train {
            s.push_str(&format!("{step},{loss}\n"));
        }
        s
    }

    pub fn val_csv(&self) -> String {
        let mut s = String::from("step,lang,eval_ce\n");
        for (step, lang, loss) in &self.val {
            s.push_str(&format!("{step},{lang},{loss}\n"));
        }
        s
    }
}

/// Runs forward and backward on one batch, adding `scale ×` the gradient of
/// its mean next-token loss into the model's gradient buffers. Returns the
/// unscaled loss.
pub fn accumulate_step<F: Float>(model: &mut TransformerLM<F>, batch: &Batch, scale: F) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, true);
    let logits = model.forward(&mut tape, &vars, None, &batch.tokens, batch.batch_size, batch.context_len)?;
    let loss = lm_loss(&mut tape, logits, &batch.tokens, &batch.mask, batch.batch_size, batch.context_len)?;
    let value = tape.value(loss)[0].as_f64();
    let scaled = tape.scale(loss, scale);
    tape.backward(scaled)?;
    model.params.accumulate_grads(&tape, &vars)?;
    Ok(value)
}

/// Token-weighted negative log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CeSum {
    pub nll: f64,
    pub tokens: usize,
}

impl CeSum {
    pub fn add(&mut self, other: CeSum) {
        self.nll += other.nll;
        self.tokens += other.tokens;
    }

    /// Mean cross-entropy in nats per token.
    pub fn mean(&self) -> f64 {
        self.nll / self.tokens as f64
    }
}

/// Cross-entropy of `model` over whole sequences, evaluated one sequence at
/// a time.
pub fn evaluate_ce<F: Float>(model: &TransformerLM<F>, shared_wte: Option<&Tensor<F>>, seqs: &[Vec<u32>]) -> Result<CeSum> {
    let mut sum = CeSum::default();
    for s in seqs {
        let logits = model.logits(shared_wte, s, 1, s.len())?;
        sum.add(CeSum {
            nll: sequence_nll(&logits, model.config.vocab_size, s),
            tokens: s.len() - 1,
        });
    }
    Ok(sum)
}

/// Mean validation cross-entropy per language; `None` where a language has
/// no sequences.
pub fn evaluate_per_lang<F: Float>(
    model: &TransformerLM<F>,
    shared_wte: Option<&Tensor<F>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    limit: usize,
) -> Result<PerLang<Option<f64>>> {
    let mut out = PerLang::default();
    for l in Lang::ALL {
        let seqs = &eval[l];
        if seqs.is_empty() {
            continue;
        }
        let take = if limit == 0 { seqs.len() } else { limit.min(seqs.len()) };
        out[l] = Some(evaluate_ce(model, shared_wte, &seqs[..take])?.mean());
    }
    Ok(out)
}

/// Trains a language model from scratch on mixed-language batches with
/// gradient accumulation, global-norm clipping and AdamW.
pub fn train_teacher(
    config: &ModelConfig,
    train: PerLang<Vec<Vec<u32>>>,
    eval: &PerLang<Vec<Vec<u32>>>,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<(TransformerLM<f32>, TrainLog)> {
    if hyper.accumulation == 0 || hyper.micro_batch == 0 {
        return Err(Error::Config("micro_batch and accumulation must be positive".into()));
    }
    let mut model = TransformerLM::new(*config, true, &mut Rng::derive(seed, "init"))?;
    let mut stream = BatchStream::new(
        train,
        config.context_len,
        hyper.micro_batch,
        BatchMode::Mixed,
        substream(seed, "batching"),
    )?;
    let mut opt = AdamW::new(hyper.optimizer, &model.params);
    let mut log = TrainLog::default();
    let inv = 1.0 / hyper.accumulation as f32;
    for step in 0..hyper.steps {
        let mut loss = 0.0;
        for _ in 0..hyper.accumulation {
            let batch = stream.next_batch();
            loss += accumulate_step(&mut model, &batch, inv)?;
        }
        loss /= hyper.accumulation as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        clip_grad_norm(&mut [&mut model.params], hyper.optimizer.max_grad_norm)?;
        opt.step(&mut model.params, hyper.optimizer.lr_at(step, hyper.steps))?;
        log.train.push((step, loss));
        let done = step + 1;
        if (hyper.eval_every > 0 && done % hyper.eval_every == 0) || done == hyper.steps {
            for (l, ce) in evaluate_per_lang(&model, None, eval, hyper.eval_sequences)?.iter() {
                if let Some(ce) = ce {
                    log.val.push((done, l, *ce));
                }
            }
        }
    }
    Ok((model, log))
}
