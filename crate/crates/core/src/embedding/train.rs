//! Negative-sampling word2vec (CBOW and skip-gram) with the relational
//! context variants: circular windows, uniform in-window influence, the row
//! key as a neighbour of every token, and per-column gradient weights.
//!
//! Weights live in flat `f32` arrays accessed through [`Weights`]. The
//! single-threaded path uses `Cell`s and is bit-reproducible; the hogwild path
//! shares `AtomicU32` bit patterns between workers without locking, so
//! concurrent updates may overwrite each other exactly as in the reference
//! tool.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use crate::embedding::config::{Architecture, TrainingConfig};
use crate::embedding::model::EmbeddingModel;
use crate::embedding::vocab::{build_vocab, count_tokens, ranked, Vocab};
use crate::error::{Error, Result};
use crate::textify::text::column_token;
use crate::textify::TokenSentence;

const TABLE_SIZE: usize = 1_000_000;
const MIN_LR_FRACTION: f64 = 1e-4;

/// The reference tool's linear congruential generator.
#[derive(Debug, Clone)]
pub(crate) struct Lcg(u64);

impl Lcg {
    pub(crate) fn new(seed: u64) -> Self {
        Lcg(seed)
    }

    pub(crate) fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_mul(25_214_903_917).wrapping_add(11);
        self.0
    }

    fn unit(&mut self) -> f32 {
        (self.next() & 0xFFFF) as f32 / 65536.0
    }
}

/// Window flags that decide which positions form a context set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContextRule {
    pub window: usize,
    pub circular: bool,
    pub uniform: bool,
    pub pk_always_neighbor: bool,
}

impl From<&TrainingConfig> for ContextRule {
    fn from(c: &TrainingConfig) -> Self {
        ContextRule {
            window: c.window,
            circular: c.circular_window,
            uniform: c.uniform_influence,
            pk_always_neighbor: c.pk_always_neighbor,
        }
    }
}

impl ContextRule {
    /// Context positions of `pos` in a sentence of length `len`. `shrink` is
    /// the random window reduction in `0..window`, ignored under uniform
    /// influence. Each position appears at most once; the row key at
    /// `key_pos` is added when `pk_always_neighbor` is set.
    pub fn positions(
        &self,
        len: usize,
        pos: usize,
        key_pos: Option<usize>,
        shrink: usize,
    ) -> Vec<usize> {
        let w = if self.uniform {
            self.window
        } else {
            self.window - shrink.min(self.window - 1)
        };
        let mut out = Vec::with_capacity(2 * w + 1);
        for off in 1..=w {
            for dir in [-1i64, 1] {
                let raw = pos as i64 + dir * off as i64;
                let p = if self.circular {
                    raw.rem_euclid(len as i64) as usize
                } else if raw < 0 || raw >= len as i64 {
                    continue;
                } else {
                    raw as usize
                };
                if p != pos && !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        if self.pk_always_neighbor {
            if let Some(k) = key_pos {
                if k != pos && !out.contains(&k) {
                    out.push(k);
                }
            }
        }
        out
    }
}

/// Context token lists of every position of `sentence` under `cfg` with the
/// full window (no random shrink). This is the enumeration the trainer uses.
pub fn sentence_contexts<'a>(
    sentence: &'a TokenSentence,
    cfg: &TrainingConfig,
) -> Vec<Vec<&'a str>> {
    let rule = ContextRule::from(cfg);
    let key_pos = sentence
        .row_key
        .as_ref()
        .and_then(|k| sentence.tokens.iter().position(|t| t == k));
    (0..sentence.tokens.len())
        .map(|pos| {
            rule.positions(sentence.tokens.len(), pos, key_pos, 0)
                .into_iter()
                .map(|p| sentence.tokens[p].as_str())
                .collect()
        })
        .collect()
}

pub(crate) trait Weights {
    fn get(&self, i: usize) -> f32;
    fn set(&self, i: usize, v: f32);
    fn add(&self, i: usize, v: f32) {
        self.set(i, self.get(i) + v);
    }
}

impl Weights for [Cell<f32>] {
    fn get(&self, i: usize) -> f32 {
        self[i].get()
    }
    fn set(&self, i: usize, v: f32) {
        self[i].set(v)
    }
}

impl Weights for [AtomicU32] {
    fn get(&self, i: usize) -> f32 {
        f32::from_bits(self[i].load(Ordering::Relaxed))
    }
    fn set(&self, i: usize, v: f32) {
        self[i].store(v.to_bits(), Ordering::Relaxed)
    }
}

struct Encoded {
    ids: Vec<u32>,
    key: Option<u32>,
}

struct Plan<'a> {
    cfg: &'a TrainingConfig,
    rule: ContextRule,
    dim: usize,
    counts: Vec<u64>,
    table: Vec<u32>,
    token_weight: Vec<f32>,
    train_words: u64,
}

fn unigram_table(counts: &[u64]) -> Vec<u32> {
    let powered: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = powered.iter().sum();
    if total == 0.0 {
        return Vec::new();
    }
    let next_nonzero = |from: usize| (from..powered.len()).find(|&j| powered[j] > 0.0);
    let mut table = Vec::with_capacity(TABLE_SIZE);
    let mut i = next_nonzero(0).expect("total > 0");
    let mut cum = powered[i] / total;
    for a in 0..TABLE_SIZE {
        table.push(i as u32);
        if (a + 1) as f64 / TABLE_SIZE as f64 > cum {
            if let Some(j) = next_nonzero(i + 1) {
                i = j;
                cum += powered[i] / total;
            }
        }
    }
    table
}

/// Gradient multiplier per vocabulary word: the weight of the longest
/// configured column whose `<column>_` prefix the token carries.
fn token_weights(
    words: &[String],
    column_weights: &std::collections::BTreeMap<String, f64>,
) -> Vec<f32> {
    let prefixes: Vec<(String, f32)> = column_weights
        .iter()
        .map(|(c, w)| (format!("{}_", column_token(c)), *w as f32))
        .collect();
    words
        .iter()
        .map(|w| {
            prefixes
                .iter()
                .filter(|(p, _)| w.starts_with(p.as_str()))
                .max_by_key(|(p, _)| p.len())
                .map_or(1.0, |(_, wt)| *wt)
        })
        .collect()
}

fn encode(corpus: &[TokenSentence], index: &HashMap<&str, u32>) -> Vec<Encoded> {
    corpus
        .iter()
        .map(|s| {
            let ids: Vec<u32> = s
                .tokens
                .iter()
                .filter_map(|t| index.get(t.as_str()).copied())
                .collect();
            let key = s.row_key.as_deref().and_then(|k| index.get(k).copied());
            Encoded { ids, key }
        })
        .filter(|e| !e.ids.is_empty())
        .collect()
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct Worker<'a, W: Weights + ?Sized> {
    plan: &'a Plan<'a>,
    syn0: &'a W,
    syn1: &'a W,
    rng: Lcg,
    neu1: Vec<f32>,
    neu1e: Vec<f32>,
}

impl<W: Weights + ?Sized> Worker<'_, W> {
    /// One negative-sampling step for input vector `l1` (or `neu1` when
    /// `l1` is `None`) against `target`; accumulates into `neu1e`.
    fn ns_update(&mut self, input: Option<usize>, target: u32, alpha: f32, scale: f32) {
        let dim = self.plan.dim;
        for d in 0..=self.plan.cfg.negative_samples {
            let (word, label) = if d == 0 {
                (target, 1.0f32)
            } else {
                if self.plan.table.is_empty() {
                    break;
                }
                let r = (self.rng.next() >> 16) as usize % self.plan.table.len();
                let w = self.plan.table[r];
                if w == target {
                    continue;
                }
                (w, 0.0f32)
            };
            let l2 = word as usize * dim;
            let mut f = 0.0f32;
            for c in 0..dim {
                let x = match input {
                    Some(l1) => self.syn0.get(l1 + c),
                    None => self.neu1[c],
                };
                f += x * self.syn1.get(l2 + c);
            }
            let g = (label - sigmoid(f)) * alpha * scale;
            for c in 0..dim {
                self.neu1e[c] += g * self.syn1.get(l2 + c);
            }
            for c in 0..dim {
                let x = match input {
                    Some(l1) => self.syn0.get(l1 + c),
                    None => self.neu1[c],
                };
                self.syn1.add(l2 + c, g * x);
            }
        }
    }

    fn train_sentence(&mut self, ids: &[u32], key_pos: Option<usize>, alpha: f32) {
        let dim = self.plan.dim;
        for pos in 0..ids.len() {
            let shrink = if self.plan.rule.uniform {
                0
            } else {
                (self.rng.next() % self.plan.rule.window as u64) as usize
            };
            let ctx = self.plan.rule.positions(ids.len(), pos, key_pos, shrink);
            if ctx.is_empty() {
                continue;
            }
            let center = ids[pos];
            match self.plan.cfg.architecture {
                Architecture::Cbow => {
                    self.neu1.iter_mut().for_each(|x| *x = 0.0);
                    self.neu1e.iter_mut().for_each(|x| *x = 0.0);
                    for &p in &ctx {
                        let l1 = ids[p] as usize * dim;
                        for c in 0..dim {
                            self.neu1[c] += self.syn0.get(l1 + c);
                        }
                    }
                    let n = ctx.len() as f32;
                    self.neu1.iter_mut().for_each(|x| *x /= n);
                    self.ns_update(None, center, alpha, 1.0);
                    for &p in &ctx {
                        let word = ids[p] as usize;
                        let wt = self.plan.token_weight[word];
                        if wt == 0.0 {
                            continue;
                        }
                        for c in 0..dim {
                            self.syn0.add(word * dim + c, self.neu1e[c] * wt);
                        }
                    }
                }
                Architecture::Skipgram => {
                    for &p in &ctx {
                        let word = ids[p] as usize;
                        let wt = self.plan.token_weight[word];
                        if wt == 0.0 {
                            continue;
                        }
                        self.neu1e.iter_mut().for_each(|x| *x = 0.0);
                        self.ns_update(Some(word * dim), center, alpha, wt);
                        for c in 0..dim {
                            self.syn0.add(word * dim + c, self.neu1e[c]);
                        }
                    }
                }
            }
        }
    }

    fn keep(&mut self, id: u32) -> bool {
        let t = self.plan.cfg.subsample_threshold;
        if t <= 0.0 {
            return true;
        }
        let cn = self.plan.counts[id as usize] as f64;
        let st = t * self.plan.train_words as f64;
        let ran = ((cn / st).sqrt() + 1.0) * st / cn;
        ran as f32 >= self.rng.unit()
    }

    fn run(&mut self, sentences: &[Encoded], progress: &AtomicU64) {
        let total = (self.plan.cfg.epochs as u64 * self.plan.train_words + 1) as f64;
        let lr = self.plan.cfg.learning_rate;
        let mut ids = Vec::new();
        for _ in 0..self.plan.cfg.epochs {
            for s in sentences {
                let done = progress.fetch_add(s.ids.len() as u64, Ordering::Relaxed) as f64;
                let alpha = (lr * (1.0 - done / total).max(MIN_LR_FRACTION)) as f32;
                ids.clear();
                for &id in &s.ids {
                    if Some(id) == s.key || self.keep(id) {
                        ids.push(id);
                    }
                }
                let key_pos = s.key.and_then(|k| ids.iter().position(|&i| i == k));
                self.train_sentence(&ids, key_pos, alpha);
            }
        }
    }
}

fn init_syn0(rows: std::ops::Range<usize>, dim: usize, rng: &mut Lcg, out: &mut Vec<f32>) {
    for _ in rows {
        for _ in 0..dim {
            out.push((rng.unit() - 0.5) / dim as f32);
        }
    }
}

fn check_pk(corpus: &[TokenSentence], cfg: &TrainingConfig) -> Result<()> {
    if cfg.pk_always_neighbor && corpus.iter().all(|s| s.row_key.is_none()) {
        return Err(Error::Config(
            "pk_always_neighbor requires sentences carrying a row key".into(),
        ));
    }
    Ok(())
}

/// Run the training loops over prepared weights and return the updated
/// `(syn0, syn1)`.
fn run_training(
    plan: &Plan<'_>,
    sentences: &[Encoded],
    syn0: Vec<f32>,
    syn1: Vec<f32>,
) -> (Vec<f32>, Vec<f32>) {
    let threads = plan.cfg.threads.min(sentences.len()).max(1);
    let progress = AtomicU64::new(0);
    let worker_seed = |t: usize| plan.cfg.seed.wrapping_add(t as u64);

    #[cfg(feature = "parallel")]
    if threads > 1 {
        use rayon::prelude::*;
        let a0: Vec<AtomicU32> = syn0
            .into_iter()
            .map(|x| AtomicU32::new(x.to_bits()))
            .collect();
        let a1: Vec<AtomicU32> = syn1
            .into_iter()
            .map(|x| AtomicU32::new(x.to_bits()))
            .collect();
        let n = sentences.len();
        (0..threads).into_par_iter().for_each(|t| {
            let chunk = &sentences[t * n / threads..(t + 1) * n / threads];
            let mut w = Worker {
                plan,
                syn0: a0.as_slice(),
                syn1: a1.as_slice(),
                rng: Lcg::new(worker_seed(t)),
                neu1: vec![0.0; plan.dim],
                neu1e: vec![0.0; plan.dim],
            };
            w.run(chunk, &progress);
        });
        let back = |v: Vec<AtomicU32>| {
            v.into_iter()
                .map(|a| f32::from_bits(a.into_inner()))
                .collect()
        };
        return (back(a0), back(a1));
    }
    #[cfg(not(feature = "parallel"))]
    if threads > 1 {
        log::warn!("event=train_threads_ignored threads={threads} reason=built_without_parallel");
    }

    let mut syn0 = syn0;
    let mut syn1 = syn1;
    {
        let c0 = Cell::from_mut(syn0.as_mut_slice()).as_slice_of_cells();
        let c1 = Cell::from_mut(syn1.as_mut_slice()).as_slice_of_cells();
        let mut w = Worker {
            plan,
            syn0: c0,
            syn1: c1,
            rng: Lcg::new(worker_seed(0)),
            neu1: vec![0.0; plan.dim],
            neu1e: vec![0.0; plan.dim],
        };
        w.run(sentences, &progress);
    }
    (syn0, syn1)
}

fn finish(
    words: Vec<String>,
    syn0: Vec<f32>,
    syn1: Vec<f32>,
    dim: usize,
) -> Result<EmbeddingModel> {
    if syn0.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data(
            "training diverged: non-finite vector components".into(),
        ));
    }
    let mut model = EmbeddingModel::from_parts(words, syn0, dim)?;
    model.output = Some(syn1);
    model.normalize();
    Ok(model)
}

fn make_plan<'a>(
    cfg: &'a TrainingConfig,
    words: &[String],
    counts: Vec<u64>,
    sentences: &[Encoded],
) -> Plan<'a> {
    // the sentinel is never drawn as a negative
    let mut table_counts = counts.clone();
    table_counts[0] = 0;
    Plan {
        cfg,
        rule: ContextRule::from(cfg),
        dim: cfg.dimension,
        table: unigram_table(&table_counts),
        token_weight: token_weights(words, &cfg.column_weights),
        train_words: sentences.iter().map(|s| s.ids.len() as u64).sum(),
        counts,
    }
}

/// Train a fresh model. Vectors are L2-normalized on return.
pub fn train(corpus: &[TokenSentence], cfg: &TrainingConfig) -> Result<EmbeddingModel> {
    cfg.validate()?;
    check_pk(corpus, cfg)?;
    let vocab = build_vocab(corpus, cfg)?;
    train_with_vocab(corpus, &vocab, cfg)
}

pub fn train_with_vocab(
    corpus: &[TokenSentence],
    vocab: &Vocab,
    cfg: &TrainingConfig,
) -> Result<EmbeddingModel> {
    cfg.validate()?;
    check_pk(corpus, cfg)?;
    let index: HashMap<&str, u32> = vocab
        .words()
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();
    let sentences = encode(corpus, &index);
    let dim = cfg.dimension;
    let plan = make_plan(cfg, vocab.words(), vocab.counts().to_vec(), &sentences);

    let mut rng = Lcg::new(cfg.seed);
    let mut syn0 = Vec::with_capacity(vocab.len() * dim);
    init_syn0(0..vocab.len(), dim, &mut rng, &mut syn0);
    let syn1 = vec![0.0f32; vocab.len() * dim];

    log::info!(
        "event=train vocab={} sentences={} words={} args=\"{}\"",
        vocab.len(),
        sentences.len(),
        plan.train_words,
        cfg.as_tool_args()
    );
    let (syn0, syn1) = run_training(&plan, &sentences, syn0, syn1);
    finish(vocab.words().to_vec(), syn0, syn1, dim)
}

/// Continue training `model` on `new_corpus`. Unseen tokens are appended to
/// the vocabulary with fresh random vectors; existing vectors keep training
/// from their current values.
pub fn train_incremental(
    model: &EmbeddingModel,
    new_corpus: &[TokenSentence],
    cfg: &TrainingConfig,
) -> Result<EmbeddingModel> {
    if model.dim() != cfg.dimension {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: cfg.dimension,
        });
    }
    cfg.validate()?;
    if new_corpus.iter().all(|s| s.tokens.is_empty()) {
        let mut m = model.clone();
        m.normalize();
        return Ok(m);
    }
    check_pk(new_corpus, cfg)?;

    let dim = cfg.dimension;
    let old_len = model.len();
    let token_counts = count_tokens(new_corpus);
    let mut words: Vec<String> = model.words().to_vec();
    // base tokens keep a floor count of 1 so negatives still cover the whole
    // vocabulary rather than only the new sentences' tokens
    let mut counts: Vec<u64> = words
        .iter()
        .map(|w| token_counts.get(w.as_str()).copied().unwrap_or(0).max(1))
        .collect();
    for (w, c) in ranked(token_counts.iter().map(|(w, c)| (*w, *c))) {
        if !model.contains(w) && c >= cfg.min_count {
            words.push(w.to_string());
            counts.push(c);
        }
    }
    if counts.is_empty() {
        return Err(Error::EmptyCorpus);
    }

    let index: HashMap<&str, u32> = words
        .iter()
        .enumerate()
        .map(|(i, w)| (w.as_str(), i as u32))
        .collect();
    let sentences = encode(new_corpus, &index);
    let mut plan = make_plan(cfg, &words, counts.clone(), &sentences);
    if model.index_of(super::model::SENTINEL) != Some(0) {
        plan.table = unigram_table(&counts);
    }

    let (_, old_vectors, old_output) = model.clone().into_parts();
    let mut syn0 = old_vectors;
    let mut rng = Lcg::new(cfg.seed);
    init_syn0(old_len..words.len(), dim, &mut rng, &mut syn0);
    let mut syn1 = match old_output {
        Some(o) if o.len() == old_len * dim => o,
        _ => vec![0.0; old_len * dim],
    };
    syn1.resize(words.len() * dim, 0.0);

    log::info!(
        "event=train_incremental base_vocab={} new_tokens={} sentences={}",
        old_len,
        words.len() - old_len,
        sentences.len()
    );
    let (syn0, syn1) = run_training(&plan, &sentences, syn0, syn1);
    finish(words, syn0, syn1, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(key: Option<&str>, tokens: &[&str]) -> TokenSentence {
        TokenSentence {
            row_key: key.map(String::from),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            table: "t".into(),
        }
    }

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            dimension: 8,
            window: 2,
            negative_samples: 3,
            subsample_threshold: 0.0,
            epochs: 3,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn circular_window_wraps_to_first_token() {
        let rule = ContextRule {
            window: 1,
            circular: true,
            uniform: true,
            pk_always_neighbor: false,
        };
        assert_eq!(rule.positions(5, 4, None, 0), vec![3, 0]);
        let plain = ContextRule {
            circular: false,
            ..rule
        };
        assert_eq!(plain.positions(5, 4, None, 0), vec![3]);
    }

    #[test]
    fn pk_joins_every_context() {
        let cfg = TrainingConfig {
            window: 1,
            pk_always_neighbor: true,
            ..small_cfg()
        };
        let sent = s(Some("k"), &["k", "a", "b", "c", "d"]);
        let ctx = sentence_contexts(&sent, &cfg);
        for (pos, c) in ctx.iter().enumerate().skip(1) {
            assert!(c.contains(&"k"), "position {pos}: {c:?}");
        }
        assert_eq!(ctx[4], vec!["c", "k"]);
    }

    #[test]
    fn shrink_reduces_window_unless_uniform() {
        let rule = ContextRule {
            window: 3,
            circular: false,
            uniform: false,
            pk_always_neighbor: false,
        };
        assert_eq!(rule.positions(10, 5, None, 2), vec![4, 6]);
        let uniform = ContextRule {
            uniform: true,
            ..rule
        };
        assert_eq!(uniform.positions(10, 5, None, 2).len(), 6);
    }

    #[test]
    fn trained_vectors_are_unit_and_deterministic() {
        let corpus = vec![
            s(Some("r1"), &["r1", "x", "y"]),
            s(Some("r2"), &["r2", "y", "z"]),
        ];
        let a = train(&corpus, &small_cfg()).unwrap();
        let b = train(&corpus, &small_cfg()).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert!(a.is_normalized());
        assert!(a.contains("</s>"));
        for w in ["r1", "x", "y", "z"] {
            assert!(a.contains(w));
        }
    }

    #[test]
    fn pk_flag_without_keys_is_config_error() {
        let cfg = TrainingConfig {
            pk_always_neighbor: true,
            ..small_cfg()
        };
        let err = train(&[s(None, &["a", "b"])], &cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn column_weight_prefix_match() {
        let mut w = std::collections::BTreeMap::new();
        w.insert("Amount".to_string(), 2.0);
        w.insert("amount_usd".to_string(), 3.0);
        let words = ["amount_5", "amount_usd_7", "other"].map(String::from);
        assert_eq!(token_weights(&words, &w), vec![2.0, 3.0, 1.0]);
    }

    #[test]
    fn unigram_table_skips_zero_counts() {
        let t = unigram_table(&[0, 5, 0, 5]);
        assert!(t.iter().all(|&i| i == 1 || i == 3));
    }
}
