//! A small randomly initialized encoder-decoder used for tests, oracles and
//! smoke runs. Pre-norm transformer blocks with RMS norm, gated-GELU
//! feed-forward layers and learned absolute positions.

use ndarray::{s, Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::autodiff::{Tape, Var};
use crate::backend::tokenizer::{TokenId, Tokenizer, ToyTokenizer};
use crate::backend::{Seq2SeqBackend, SoftTokenBank};
use crate::error::{Error, Result};
use crate::markup::{Element, RenderedPrompt};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub context_budget: usize,
    pub max_decode_len: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 1024,
            d_model: 64,
            heads: 4,
            d_ff: 128,
            encoder_layers: 2,
            decoder_layers: 2,
            context_budget: 512,
            max_decode_len: 16,
            seed: 0,
        }
    }
}

const EMBED_STD: f64 = 1.0;
const POSITION_STD: f64 = 0.3;

struct Attention {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    o: Array2<f64>,
}

struct FeedForward {
    gate: Array2<f64>,
    up: Array2<f64>,
    down: Array2<f64>,
}

struct EncoderLayer {
    attn_norm: Array1<f64>,
    attn: Attention,
    ff_norm: Array1<f64>,
    ff: FeedForward,
}

struct DecoderLayer {
    self_norm: Array1<f64>,
    self_attn: Attention,
    cross_norm: Array1<f64>,
    cross_attn: Attention,
    ff_norm: Array1<f64>,
    ff: FeedForward,
}

pub struct ToyBackend {
    config: ToyConfig,
    tokenizer: ToyTokenizer,
    embed: Array2<f64>,
    encoder_positions: Array2<f64>,
    decoder_positions: Array2<f64>,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Array1<f64>,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Array1<f64>,
    lm_head: Array2<f64>,
    causal_mask: Array2<f64>,
    digest: String,
}

struct Init {
    rng: Rng,
}

impl Init {
    fn matrix(&mut self, rows: usize, cols: usize, std: f64) -> Array2<f64> {
        let normal = Normal::new(0.0, std).expect("finite std");
        Array2::from_shape_simple_fn((rows, cols), || normal.sample(&mut self.rng))
    }

    fn projection(&mut self, fan_in: usize, fan_out: usize) -> Array2<f64> {
        self.matrix(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt())
    }

    fn attention(&mut self, d: usize) -> Attention {
        Attention {
            q: self.projection(d, d),
            k: self.projection(d, d),
            v: self.projection(d, d),
            o: self.projection(d, d),
        }
    }

    fn feed_forward(&mut self, d: usize, ff: usize) -> FeedForward {
        FeedForward {
            gate: self.projection(d, ff),
            up: self.projection(d, ff),
            down: self.projection(ff, d),
        }
    }
}

impl ToyBackend {
    pub fn new(config: ToyConfig) -> Result<Self> {
        if config.heads == 0 || config.d_model % config.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                config.d_model, config.heads
            )));
        }
        if config.max_decode_len == 0 || config.context_budget == 0 {
            return Err(Error::Config("toy backend needs non-zero position tables".into()));
        }
        let tokenizer = ToyTokenizer::new(config.vocab_size)?;
        let d = config.d_model;
        let mut init = Init {
            rng: seed::rng(config.seed),
        };
        let embed = init.matrix(config.vocab_size, d, EMBED_STD);
        let encoder_positions = init.matrix(config.context_budget, d, POSITION_STD);
        let decoder_positions = init.matrix(config.max_decode_len + 1, d, POSITION_STD);
        let ones = || Array1::ones(d);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayer {
                attn_norm: ones(),
                attn: init.attention(d),
                ff_norm: ones(),
                ff: init.feed_forward(d, config.d_ff),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayer {
                self_norm: ones(),
                self_attn: init.attention(d),
                cross_norm: ones(),
                cross_attn: init.attention(d),
                ff_norm: ones(),
                ff: init.feed_forward(d, config.d_ff),
            })
            .collect();
        let lm_head = init.projection(d, config.vocab_size);
        let n = config.max_decode_len + 1;
        let causal_mask = Array2::from_shape_fn((n, n), |(i, j)| if j > i { -1e9 } else { 0.0 });

        let mut backend = Self {
            config,
            tokenizer,
            embed,
            encoder_positions,
            decoder_positions,
            encoder,
            encoder_norm: ones(),
            decoder,
            decoder_norm: ones(),
            lm_head,
            causal_mask,
            digest: String::new(),
        };
        backend.digest = backend.compute_digest();
        Ok(backend)
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn parameters(&self) -> Vec<&[f64]> {
        fn slice<'a, D: ndarray::Dimension>(a: &'a ndarray::Array<f64, D>) -> &'a [f64] {
            a.as_slice().expect("parameters are contiguous")
        }
        let mut out = vec![
            slice(&self.embed),
            slice(&self.encoder_positions),
            slice(&self.decoder_positions),
        ];
        fn attn(a: &Attention) -> [&[f64]; 4] {
            [slice(&a.q), slice(&a.k), slice(&a.v), slice(&a.o)]
        }
        fn ff(f: &FeedForward) -> [&[f64]; 3] {
            [slice(&f.gate), slice(&f.up), slice(&f.down)]
        }
        for l in &self.encoder {
            out.push(slice(&l.attn_norm));
            out.extend(attn(&l.attn));
            out.push(slice(&l.ff_norm));
            out.extend(ff(&l.ff));
        }
        out.push(slice(&self.encoder_norm));
        for l in &self.decoder {
            out.push(slice(&l.self_norm));
            out.extend(attn(&l.self_attn));
            out.push(slice(&l.cross_norm));
            out.extend(attn(&l.cross_attn));
            out.push(slice(&l.ff_norm));
            out.extend(ff(&l.ff));
        }
        out.push(slice(&self.decoder_norm));
        out.push(slice(&self.lm_head));
        out
    }

    /// Hashes the current parameter values, not a cached copy.
    pub fn compute_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for p in self.parameters() {
            hasher.update((p.len() as u64).to_le_bytes());
            for v in p {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    fn attention<'t>(
        &'t self,
        tape: &mut Tape<'t>,
        queries: Var,
        keys: Var,
        w: &'t Attention,
        mask: Option<Var>,
    ) -> Var {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let q = tape.linear(queries, &w.q);
        let k = tape.linear(keys, &w.k);
        let v = tape.linear(keys, &w.v);
        let scale = 1.0 / (dh as f64).sqrt();
        let outs = (0..heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let scores = tape.matmul_t(qh, kh);
                let mut scores = tape.scale(scores, scale);
                if let Some(m) = mask {
                    scores = tape.add(scores, m);
                }
                let p = tape.softmax(scores);
                tape.matmul(p, vh)
            })
            .collect();
        let joined = tape.concat_cols(outs);
        tape.linear(joined, &w.o)
    }

    fn feed_forward<'t>(&'t self, tape: &mut Tape<'t>, x: Var, w: &'t FeedForward) -> Var {
        let gate = tape.linear(x, &w.gate);
        let gate = tape.gelu(gate);
        let up = tape.linear(x, &w.up);
        let h = tape.mul(gate, up);
        tape.linear(h, &w.down)
    }

    fn encode<'t>(&'t self, tape: &mut Tape<'t>, bank: &SoftTokenBank, prompt: &RenderedPrompt) -> Result<(Var, Var)> {
        self.check_budget(prompt)?;
        let len = prompt.len();
        if len == 0 {
            return Err(Error::Input("empty prompt".into()));
        }
        if bank.embedding_dim() != self.config.d_model {
            return Err(Error::Config(format!(
                "bank dimension {} does not match the backend's {}",
                bank.embedding_dim(),
                self.config.d_model
            )));
        }
        let mut base = self.encoder_positions.slice(s![..len, ..]).to_owned();
        let mut soft_rows = Vec::new();
        for (i, element) in prompt.elements.iter().enumerate() {
            match element {
                Element::Base { id } => {
                    let id = *id as usize;
                    if id >= self.config.vocab_size {
                        return Err(Error::Tokenizer(format!("token id {id} outside the vocabulary")));
                    }
                    let mut row = base.row_mut(i);
                    row += &self.embed.row(id);
                }
                Element::Soft { tag, position } => soft_rows.push((i, bank.row_index(tag, *position)?)),
            }
        }
        let bank_var = tape.variable(bank.rows().clone());
        let mut x = tape.scatter(base, bank_var, soft_rows);
        for layer in &self.encoder {
            let h = tape.rms_norm(x, &layer.attn_norm);
            let a = self.attention(tape, h, h, &layer.attn, None);
            x = tape.add(x, a);
            let h = tape.rms_norm(x, &layer.ff_norm);
            let f = self.feed_forward(tape, h, &layer.ff);
            x = tape.add(x, f);
        }
        Ok((tape.rms_norm(x, &self.encoder_norm), bank_var))
    }

    /// Decoder logits for every position of `inputs` (which starts with the pad token).
    fn decode<'t>(&'t self, tape: &mut Tape<'t>, encoded: Var, inputs: &[TokenId]) -> Result<Var> {
        let n = inputs.len();
        if n > self.decoder_positions.nrows() {
            return Err(Error::Config(format!(
                "decoder length {n} exceeds the toy limit of {}",
                self.decoder_positions.nrows()
            )));
        }
        let mut emb = self.decoder_positions.slice(s![..n, ..]).to_owned();
        for (i, &id) in inputs.iter().enumerate() {
            let id = id as usize;
            if id >= self.config.vocab_size {
                return Err(Error::Tokenizer(format!("token id {id} outside the vocabulary")));
            }
            let mut row = emb.row_mut(i);
            row += &self.embed.row(id);
        }
        let mut x = tape.constant(emb);
        let mask = tape.constant(self.causal_mask.slice(s![..n, ..n]).to_owned());
        for layer in &self.decoder {
            let h = tape.rms_norm(x, &layer.self_norm);
            let a = self.attention(tape, h, h, &layer.self_attn, Some(mask));
            x = tape.add(x, a);
            let h = tape.rms_norm(x, &layer.cross_norm);
            let c = self.attention(tape, h, encoded, &layer.cross_attn, None);
            x = tape.add(x, c);
            let h = tape.rms_norm(x, &layer.ff_norm);
            let f = self.feed_forward(tape, h, &layer.ff);
            x = tape.add(x, f);
        }
        let x = tape.rms_norm(x, &self.decoder_norm);
        Ok(tape.linear(x, &self.lm_head))
    }
}

impl Seq2SeqBackend for ToyBackend {
    fn model_id(&self) -> String {
        let c = &self.config;
        format!(
            "toy-encdec-v{}-d{}-h{}-ff{}-e{}-d{}-s{}",
            c.vocab_size, c.d_model, c.heads, c.d_ff, c.encoder_layers, c.decoder_layers, c.seed
        )
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        &self.tokenizer
    }

    fn embedding_dim(&self) -> usize {
        self.config.d_model
    }

    fn context_budget(&self) -> usize {
        self.config.context_budget
    }

    fn param_digest(&self) -> String {
        self.digest.clone()
    }

    fn token_embedding(&self, id: TokenId) -> Array1<f64> {
        self.embed.row(id as usize).to_owned()
    }

    fn sample_embedding(&self, rng: &mut Rng) -> Array1<f64> {
        let normal = Normal::new(0.0, EMBED_STD).expect("finite std");
        Array1::from_shape_simple_fn(self.config.d_model, || normal.sample(rng))
    }

    fn loss_and_grad(
        &self,
        bank: &SoftTokenBank,
        prompt: &RenderedPrompt,
        target: &[TokenId],
    ) -> Result<(f64, Array2<f64>)> {
        let mut tape = Tape::new();
        let (encoded, bank_var) = self.encode(&mut tape, bank, prompt)?;
        let mut inputs = vec![self.tokenizer.pad_id()];
        inputs.extend_from_slice(&target[..target.len() - 1]);
        let logits = self.decode(&mut tape, encoded, &inputs)?;
        let loss = tape.cross_entropy(logits, target.iter().map(|&t| t as usize).collect());
        let value = tape.value(loss)[[0, 0]];
        let grads = tape.backward(loss);
        let grad = grads
            .get(bank_var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(bank.rows().raw_dim()));
        Ok((value, grad))
    }

    fn next_token_logits(
        &self,
        bank: &SoftTokenBank,
        prompt: &RenderedPrompt,
        generated: &[TokenId],
    ) -> Result<Array1<f64>> {
        let mut tape = Tape::new();
        let (encoded, _) = self.encode(&mut tape, bank, prompt)?;
        let mut inputs = vec![self.tokenizer.pad_id()];
        inputs.extend_from_slice(generated);
        let logits = self.decode(&mut tape, encoded, &inputs)?;
        Ok(tape.value(logits).row(inputs.len() - 1).to_owned())
    }
}
