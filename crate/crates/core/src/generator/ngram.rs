//! Character/word n-gram language model with add-k smoothing and backoff.
//!
//! Counts are accumulated over the concatenated (input, answer) token stream
//! but only at positions inside the answer, the counting analogue of masking
//! the loss to the answer span. Fine-tuning adds counts onto a copy of the
//! base model scaled by a merge weight.

use std::sync::Arc;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::vocab::{TokenId, Vocab};

use super::{Generator, GeneratorError, GeneratorSession};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainStage {
    Pretrain,
    Finetune,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    counts: BTreeMap<TokenId, f64>,
    total: f64,
}

/// Trained n-gram model. Immutable once built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "RawModel", from = "RawModel")]
pub struct NGramModel {
    order: usize,
    k: f64,
    vocab: Vocab,
    /// `tables[m]` maps contexts of length `m` to target counts.
    tables: Vec<BTreeMap<Vec<TokenId>, ContextCounts>>,
}

impl NGramModel {
    /// Train a fresh model of the given order with add-k constant `k`.
    pub fn train(
        vocab: Vocab,
        examples: &[(String, String)],
        order: usize,
        k: f64,
    ) -> Result<NGramModel, GeneratorError> {
        assert!(order >= 1, "order must be at least 1");
        assert!(k > 0.0, "smoothing constant must be positive");
        if examples.is_empty() {
            return Err(GeneratorError::EmptyTrainingSet);
        }
        let mut model = NGramModel {
            order,
            k,
            vocab,
            tables: vec![BTreeMap::new(); order],
        };
        model.add_examples(examples);
        Ok(model)
    }

    /// Fine-tune: counts become `weight * base + finetune`. Contexts whose
    /// scaled total vanishes are dropped so a zero weight reproduces a
    /// fresh fine-tune-only model.
    pub fn finetune(
        &self,
        examples: &[(String, String)],
        weight: f64,
    ) -> Result<NGramModel, GeneratorError> {
        if examples.is_empty() {
            return Err(GeneratorError::EmptyTrainingSet);
        }
        let mut model = NGramModel {
            order: self.order,
            k: self.k,
            vocab: self.vocab.clone(),
            tables: vec![BTreeMap::new(); self.order],
        };
        if weight > 0.0 {
            for (m, table) in self.tables.iter().enumerate() {
                for (ctx, cc) in table {
                    let scaled = ContextCounts {
                        counts: cc
                            .counts
                            .iter()
                            .map(|(&t, &c)| (t, c * weight))
                            .collect(),
                        total: cc.total * weight,
                    };
                    model.tables[m].insert(ctx.clone(), scaled);
                }
            }
        }
        model.add_examples(examples);
        Ok(model)
    }

    fn add_examples(&mut self, examples: &[(String, String)]) {
        for (input, answer) in examples {
            let mut stream = self.vocab.tokenize(input);
            let answer_start = stream.len();
            stream.extend(self.vocab.tokenize(answer));
            for i in answer_start..stream.len() {
                for m in 0..self.order {
                    if i < m {
                        continue;
                    }
                    let ctx = stream[i - m..i].to_vec();
                    let cc = self.tables[m].entry(ctx).or_default();
                    *cc.counts.entry(stream[i]).or_insert(0.0) += 1.0;
                    cc.total += 1.0;
                }
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Raw count for a (context, target) cell at order `ctx.len() + 1`.
    pub fn count(&self, ctx: &[TokenId], target: TokenId) -> f64 {
        self.tables
            .get(ctx.len())
            .and_then(|t| t.get(ctx))
            .and_then(|cc| cc.counts.get(&target))
            .copied()
            .unwrap_or(0.0)
    }

    /// Smoothed log-distribution over the vocabulary given a context,
    /// backing off to shorter contexts until one has been observed.
    pub fn log_scores(&self, context: &[TokenId]) -> Vec<f64> {
        for m in (0..self.order).rev() {
            if context.len() < m {
                continue;
            }
            let ctx = &context[context.len() - m..];
            if let Some(cc) = self.tables[m].get(ctx) {
                return self.smoothed(cc);
            }
        }
        // Untrained fallback: uniform.
        let p = -(self.vocab.len() as f64).ln();
        vec![p; self.vocab.len()]
    }

    fn smoothed(&self, cc: &ContextCounts) -> Vec<f64> {
        let v = self.vocab.len() as f64;
        let denom = cc.total + self.k * v;
        (0..self.vocab.len())
            .map(|i| {
                let c = cc.counts.get(&TokenId(i as u32)).copied().unwrap_or(0.0);
                ((c + self.k) / denom).ln()
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<NGramModel, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Two-stage entry point: pretraining trains from scratch, fine-tuning
/// merges onto the required base model scaled by `weight`.
pub fn train_ngram(
    vocab: Vocab,
    examples: &[(String, String)],
    order: usize,
    k: f64,
    stage: TrainStage,
    base: Option<&NGramModel>,
    weight: f64,
) -> Result<NGramModel, GeneratorError> {
    match stage {
        TrainStage::Pretrain => NGramModel::train(vocab, examples, order, k),
        TrainStage::Finetune => base
            .ok_or(GeneratorError::MissingBaseModel)?
            .finetune(examples, weight),
    }
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    order: usize,
    k: f64,
    vocab: Vocab,
    tables: Vec<Vec<(Vec<u32>, Vec<(u32, f64)>)>>,
}

impl From<NGramModel> for RawModel {
    fn from(m: NGramModel) -> RawModel {
        RawModel {
            order: m.order,
            k: m.k,
            vocab: m.vocab,
            tables: m
                .tables
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|(ctx, cc)| {
                            (
                                ctx.into_iter().map(|t| t.0).collect(),
                                cc.counts.into_iter().map(|(t, c)| (t.0, c)).collect(),
                            )
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

impl From<RawModel> for NGramModel {
    fn from(raw: RawModel) -> NGramModel {
        let mut vocab = raw.vocab;
        vocab.reindex();
        NGramModel {
            order: raw.order,
            k: raw.k,
            vocab,
            tables: raw
                .tables
                .into_iter()
                .map(|t| {
                    t.into_iter()
                        .map(|(ctx, counts)| {
                            let counts: BTreeMap<TokenId, f64> =
                                counts.into_iter().map(|(t, c)| (TokenId(t), c)).collect();
                            let total = counts.values().sum();
                            (
                                ctx.into_iter().map(TokenId).collect::<Vec<_>>(),
                                ContextCounts { counts, total },
                            )
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// [`Generator`] wrapper sharing one immutable model across sessions.
pub struct NGramGenerator {
    model: Arc<NGramModel>,
}

impl NGramGenerator {
    pub fn new(model: NGramModel) -> Self {
        NGramGenerator {
            model: Arc::new(model),
        }
    }
}

impl Generator for NGramGenerator {
    fn vocab(&self) -> &Vocab {
        self.model.vocab()
    }

    fn open(&self, input_text: &str) -> Result<Box<dyn GeneratorSession>, GeneratorError> {
        let context = self.model.vocab().tokenize(input_text);
        Ok(Box::new(NGramSession {
            model: Arc::clone(&self.model),
            context,
        }))
    }
}

#[derive(Clone)]
struct NGramSession {
    model: Arc<NGramModel>,
    context: Vec<TokenId>,
}

impl GeneratorSession for NGramSession {
    fn score_next(&mut self) -> Result<Vec<f64>, GeneratorError> {
        Ok(self.model.log_scores(&self.context))
    }

    fn push(&mut self, token: TokenId) -> Result<(), GeneratorError> {
        self.context.push(token);
        Ok(())
    }

    fn fork(&self) -> Box<dyn GeneratorSession> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::TokenizeMode;

    fn tiny_vocab() -> Vocab {
        // Tokens: ["#", "[UNK]", "a", "b"] so |V| = 4.
        Vocab::build(TokenizeMode::Character, &[], "#", ["ab"])
    }

    #[test]
    fn unigram_add_k_matches_hand_formula() {
        let vocab = tiny_vocab();
        let k = 0.5;
        let model =
            NGramModel::train(vocab.clone(), &[(String::new(), "aab".into())], 1, k).unwrap();
        let scores = model.log_scores(&[]);
        // counts: a=2, b=1, total=3, |V|=4.
        let denom = 3.0 + k * 4.0;
        let p = |id: &str| scores[vocab.lookup(id).unwrap().idx()].exp();
        assert!((p("a") - (2.0 + k) / denom).abs() < 1e-12);
        assert!((p("b") - (1.0 + k) / denom).abs() < 1e-12);
        assert!((p("#") - k / denom).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(
            NGramModel::train(tiny_vocab(), &[], 2, 0.1),
            Err(GeneratorError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn finetune_weight_zero_equals_fresh_model() {
        let vocab = tiny_vocab();
        let pre = NGramModel::train(vocab.clone(), &[(String::new(), "aa".into())], 2, 0.1).unwrap();
        let ft_examples = vec![(String::new(), "bb".to_string())];
        let merged = pre.finetune(&ft_examples, 0.0).unwrap();
        let fresh = NGramModel::train(vocab, &ft_examples, 2, 0.1).unwrap();
        assert_eq!(merged, fresh);
    }

    #[test]
    fn finetune_merges_counts_cell_wise() {
        let vocab = tiny_vocab();
        let w = 2.5;
        let pre_examples = vec![(String::new(), "aa".to_string())];
        let ft_examples = vec![(String::new(), "bb".to_string())];
        let pre = NGramModel::train(vocab.clone(), &pre_examples, 2, 0.1).unwrap();
        let merged = pre.finetune(&ft_examples, w).unwrap();

        // Independent recount over both corpora.
        let recount = |examples: &[(String, String)], ctx: &[&str], target: &str| -> f64 {
            let ctx: Vec<TokenId> = ctx.iter().map(|t| vocab.lookup(t).unwrap()).collect();
            let target = vocab.lookup(target).unwrap();
            let mut n = 0.0;
            for (input, answer) in examples {
                let mut stream = vocab.tokenize(input);
                let start = stream.len();
                stream.extend(vocab.tokenize(answer));
                for i in start.max(ctx.len())..stream.len() {
                    if stream[i] == target && stream[i - ctx.len()..i] == ctx[..] {
                        n += 1.0;
                    }
                }
            }
            n
        };
        for (ctx, target) in [(vec![], "a"), (vec![], "b"), (vec!["a"], "a"), (vec!["b"], "b"), (vec!["a"], "b")] {
            let ids: Vec<TokenId> = ctx.iter().map(|t| vocab.lookup(t).unwrap()).collect();
            let expected = w * recount(&pre_examples, &ctx, target) + recount(&ft_examples, &ctx, target);
            assert_eq!(merged.count(&ids, vocab.lookup(target).unwrap()), expected, "cell ({ctx:?}, {target})");
        }
    }

    #[test]
    fn finetune_without_base_is_rejected() {
        let vocab = tiny_vocab();
        let err = train_ngram(
            vocab,
            &[(String::new(), "a".into())],
            2,
            0.1,
            TrainStage::Finetune,
            None,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, GeneratorError::MissingBaseModel));
    }

    #[test]
    fn training_is_deterministic() {
        let examples = vec![
            ("q1".to_string(), "ab".to_string()),
            ("q2".to_string(), "ba".to_string()),
        ];
        let a = NGramModel::train(tiny_vocab(), &examples, 3, 0.2).unwrap();
        let b = NGramModel::train(tiny_vocab(), &examples, 3, 0.2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn model_round_trips_through_json() {
        let examples = vec![("in".to_string(), "ab".to_string())];
        let model = NGramModel::train(tiny_vocab(), &examples, 2, 0.1).unwrap();
        let reloaded = NGramModel::from_json(&model.to_json()).unwrap();
        assert_eq!(model, reloaded);
        // The reloaded vocabulary must still resolve lookups.
        assert_eq!(reloaded.vocab().lookup("a"), model.vocab().lookup("a"));
    }

    #[test]
    fn backoff_uses_shorter_context_when_unseen() {
        let vocab = tiny_vocab();
        let model =
            NGramModel::train(vocab.clone(), &[(String::new(), "aab".into())], 2, 0.1).unwrap();
        let b = vocab.lookup("b").unwrap();
        // Context [b] was never observed at order 2: falls back to unigram.
        assert_eq!(model.log_scores(&[b]), model.log_scores(&[]));
        // Context [a] was observed: differs from the unigram distribution.
        let a = vocab.lookup("a").unwrap();
        assert_ne!(model.log_scores(&[a]), model.log_scores(&[]));
    }

    proptest::proptest! {
        #[test]
        fn smoothed_distributions_sum_to_one(
            answers in proptest::collection::vec("[ab]{1,6}", 1..5),
            ctx in "[ab]{0,3}",
        ) {
            let vocab = tiny_vocab();
            let examples: Vec<(String, String)> =
                answers.into_iter().map(|a| (String::new(), a)).collect();
            let model = NGramModel::train(vocab.clone(), &examples, 3, 0.3).unwrap();
            let ids: Vec<TokenId> = ctx.chars().map(|c| vocab.lookup(&c.to_string()).unwrap()).collect();
            let total: f64 = model.log_scores(&ids).iter().map(|s| s.exp()).sum();
            proptest::prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }
}
