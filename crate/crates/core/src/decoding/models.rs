//! Toy language models for tests, the CLI and the evaluation harness.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::LanguageModel;
use crate::vocab::{unescape, TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown model spec {0:?}")]
    Spec(String),
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("corpus line {line} cannot be tokenized")]
    Corpus { line: usize },
    #[error(transparent)]
    Format(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct Uniform {
    n: usize,
}

impl Uniform {
    pub fn new(n: usize) -> Uniform {
        Uniform { n }
    }
}

impl LanguageModel for Uniform {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn next_distribution(&self, _: &[TokenId]) -> Vec<f64> {
        vec![1.0 / self.n as f64; self.n]
    }
}

/// A fixed random distribution per context, derived from the seed and the
/// context by hashing.
pub struct RandomModel {
    n: usize,
    seed: u64,
}

impl RandomModel {
    pub fn new(n: usize, seed: u64) -> RandomModel {
        RandomModel { n, seed }
    }
}

impl LanguageModel for RandomModel {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for t in context {
            h.update(t.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        // cubing makes the distributions peaked
        let w: Vec<f64> = (0..self.n).map(|_| rng.random::<f64>().powi(3) + 1e-9).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

/// Interpolated trigram model. Contexts are padded with eos.
pub struct NGram {
    n: usize,
    eos: TokenId,
    unigram: Vec<f64>,
    bigram: HashMap<TokenId, (u32, HashMap<TokenId, u32>)>,
    trigram: HashMap<(TokenId, TokenId), (u32, HashMap<TokenId, u32>)>,
}

const LAMBDA: [f64; 3] = [0.1, 0.3, 0.6];

impl NGram {
    pub fn train<'a>(vocab: &Vocabulary, docs: impl IntoIterator<Item = &'a str>) -> Result<NGram, ModelError> {
        let n = vocab.len();
        let eos = vocab.eos();
        let mut counts = vec![0u32; n];
        let mut bigram: HashMap<TokenId, (u32, HashMap<TokenId, u32>)> = HashMap::new();
        let mut trigram: HashMap<(TokenId, TokenId), (u32, HashMap<TokenId, u32>)> = HashMap::new();
        for (i, doc) in docs.into_iter().enumerate() {
            let toks = vocab.tokenize(doc.as_bytes()).ok_or(ModelError::Corpus { line: i + 1 })?;
            let mut seq = vec![eos, eos];
            seq.extend(toks);
            seq.push(eos);
            for w in seq.windows(3) {
                counts[w[2] as usize] += 1;
                let b = bigram.entry(w[1]).or_default();
                b.0 += 1;
                *b.1.entry(w[2]).or_default() += 1;
                let t = trigram.entry((w[0], w[1])).or_default();
                t.0 += 1;
                *t.1.entry(w[2]).or_default() += 1;
            }
        }
        // add-one smoothing keeps every token possible
        let total: u32 = counts.iter().sum();
        let unigram = counts.iter().map(|c| (*c as f64 + 1.0) / (total as f64 + n as f64)).collect();
        Ok(NGram {
            n,
            eos,
            unigram,
            bigram,
            trigram,
        })
    }

    pub fn load(vocab: &Vocabulary, path: &std::path::Path) -> Result<NGram, ModelError> {
        let text = std::fs::read_to_string(path)?;
        NGram::train(vocab, text.lines().filter(|l| !l.trim().is_empty()))
    }
}

impl LanguageModel for NGram {
    fn vocab_size(&self) -> usize {
        self.n
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let at = |k: usize| {
            if context.len() >= k {
                context[context.len() - k]
            } else {
                self.eos
            }
        };
        let (a, b) = (at(2), at(1));
        let mut p: Vec<f64> = self.unigram.clone();
        let mut w_uni = LAMBDA[0];
        let mut spill = 0.0;
        let tri = self.trigram.get(&(a, b));
        let bi = self.bigram.get(&b);
        if tri.is_none() {
            spill += LAMBDA[2];
        }
        let w_bi = match bi {
            Some(_) => LAMBDA[1] + spill,
            None => {
                w_uni += LAMBDA[1] + spill;
                0.0
            }
        };
        for x in p.iter_mut() {
            *x *= w_uni;
        }
        if let Some((total, next)) = bi {
            for (t, c) in next {
                p[*t as usize] += w_bi * *c as f64 / *total as f64;
            }
        }
        if let Some((total, next)) = tri {
            for (t, c) in next {
                p[*t as usize] += LAMBDA[2] * *c as f64 / *total as f64;
            }
        }
        p
    }
}

/// Explicit distributions keyed by the decoded context text. Tokens not
/// listed share the leftover mass evenly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub contexts: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub default: Option<BTreeMap<String, f64>>,
}

pub struct Scripted {
    vocab: Arc<Vocabulary>,
    contexts: HashMap<Vec<u8>, Vec<f64>>,
    default: Vec<f64>,
}

impl Scripted {
    pub fn new(vocab: Arc<Vocabulary>, script: &Script) -> Result<Scripted, ModelError> {
        let dist = |m: &BTreeMap<String, f64>| -> Result<Vec<f64>, ModelError> {
            let n = vocab.len();
            let mut p = vec![f64::NAN; n];
            for (tok, w) in m {
                let id = if tok == "<eos>" {
                    vocab.eos()
                } else {
                    let bytes = unescape(tok).ok_or_else(|| ModelError::UnknownToken(tok.clone()))?;
                    vocab.find(&bytes).ok_or_else(|| ModelError::UnknownToken(tok.clone()))?
                };
                p[id as usize] = w.max(0.0);
            }
            let listed: f64 = p.iter().filter(|x| !x.is_nan()).sum();
            let rest = p.iter().filter(|x| x.is_nan()).count();
            let (scale, each) = if listed > 1.0 || rest == 0 {
                (1.0 / listed.max(f64::MIN_POSITIVE), 0.0)
            } else {
                (1.0, (1.0 - listed) / rest as f64)
            };
            Ok(p.into_iter().map(|x| if x.is_nan() { each } else { x * scale }).collect())
        };
        let mut contexts = HashMap::new();
        for (text, m) in &script.contexts {
            let key = unescape(text).ok_or_else(|| ModelError::UnknownToken(text.clone()))?;
            contexts.insert(key, dist(m)?);
        }
        let default = match &script.default {
            Some(m) => dist(m)?,
            None => vec![1.0 / vocab.len() as f64; vocab.len()],
        };
        Ok(Scripted {
            vocab,
            contexts,
            default,
        })
    }

    pub fn load(vocab: Arc<Vocabulary>, path: &std::path::Path) -> Result<Scripted, ModelError> {
        let script: Script = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Scripted::new(vocab, &script)
    }
}

impl LanguageModel for Scripted {
    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let text = self.vocab.decode(context).unwrap_or_default();
        self.contexts.get(&text).unwrap_or(&self.default).clone()
    }
}

/// Multiplies the mass of whitespace-only tokens by `factor`.
pub struct VerboseBias {
    base: Box<dyn LanguageModel>,
    whitespace: Vec<bool>,
    factor: f64,
}

impl VerboseBias {
    pub fn new(base: Box<dyn LanguageModel>, vocab: &Vocabulary, factor: f64) -> VerboseBias {
        let whitespace = (0..vocab.len() as TokenId)
            .map(|t| {
                let b = vocab.token(t);
                t != vocab.eos() && !b.is_empty() && b.iter().all(|c| c.is_ascii_whitespace())
            })
            .collect();
        VerboseBias {
            base,
            whitespace,
            factor,
        }
    }
}

impl LanguageModel for VerboseBias {
    fn vocab_size(&self) -> usize {
        self.base.vocab_size()
    }

    fn next_distribution(&self, context: &[TokenId]) -> Vec<f64> {
        let mut p = self.base.next_distribution(context);
        for (x, ws) in p.iter_mut().zip(&self.whitespace) {
            if *ws {
                *x *= self.factor;
            }
        }
        let z: f64 = p.iter().sum();
        p.into_iter().map(|x| x / z).collect()
    }
}

/// Builds a model from a spec string:
/// `uniform`, `random`, `ngram:<corpus>`, `scripted:<file>`, `verbose-bias:<factor>`.
/// `random` and the base of `verbose-bias` use `seed`.
pub fn load_model(spec: &str, vocab: Arc<Vocabulary>, seed: u64) -> Result<Box<dyn LanguageModel>, ModelError> {
    let n = vocab.len();
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match (kind, arg) {
        ("uniform", "") => Box::new(Uniform::new(n)),
        ("random", "") => Box::new(RandomModel::new(n, seed)),
        ("ngram", path) if !path.is_empty() => Box::new(NGram::load(&vocab, path.as_ref())?),
        ("scripted", path) if !path.is_empty() => Box::new(Scripted::load(vocab, path.as_ref())?),
        ("verbose-bias", f) => {
            let factor: f64 = f.parse().map_err(|_| ModelError::Spec(spec.into()))?;
            if !(factor > 0.0) {
                return Err(ModelError::Spec(spec.into()));
            }
            Box::new(VerboseBias::new(Box::new(RandomModel::new(n, seed)), &vocab, factor))
        }
        _ => return Err(ModelError::Spec(spec.into())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sums_to_one(p: &[f64]) {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9, "{p:?}");
    }

    #[test]
    fn distributions_normalized() {
        let v = Arc::new(Vocabulary::with_eos(["a", "b", " ", "ab", "\t"]).unwrap());
        let ng = NGram::train(&v, ["ab a", "b b", "a\tb"]).unwrap();
        let rnd = RandomModel::new(v.len(), 3);
        let vb = VerboseBias::new(Box::new(Uniform::new(v.len())), &v, 10.0);
        for ctx in [vec![], vec![0], vec![3, 2], vec![1, 1, 1], vec![4, 4]] {
            sums_to_one(&ng.next_distribution(&ctx));
            sums_to_one(&rnd.next_distribution(&ctx));
            sums_to_one(&vb.next_distribution(&ctx));
        }
        assert_eq!(rnd.next_distribution(&[1, 2]), RandomModel::new(v.len(), 3).next_distribution(&[1, 2]));
        assert_ne!(rnd.next_distribution(&[1, 2]), RandomModel::new(v.len(), 4).next_distribution(&[1, 2]));
        // whitespace tokens " " and "\t" get factor 10 over the others
        let p = vb.next_distribution(&[]);
        assert!((p[2] / p[0] - 10.0).abs() < 1e-9 && (p[4] / p[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn ngram_follows_corpus() {
        let v = Vocabulary::with_eos(["[", "]", "1", ","]).unwrap();
        let ng = NGram::train(&v, ["[1,1]", "[1]"]).unwrap();
        let p = ng.next_distribution(&[0, 2]);
        // unigram (c+1)/15, bigram after "1" is {",": 1, "]": 2},
        // trigram after "[1" is {",": 1, "]": 1}
        assert!((p[1] - (0.1 * 3.0 / 15.0 + 0.3 * 2.0 / 3.0 + 0.6 * 0.5)).abs() < 1e-12);
        assert!((p[3] - (0.1 * 2.0 / 15.0 + 0.3 / 3.0 + 0.6 * 0.5)).abs() < 1e-12);
        let start = ng.next_distribution(&[]);
        assert_eq!((0..4).max_by(|a, b| start[*a].total_cmp(&start[*b])), Some(0));
        assert!(matches!(NGram::train(&v, ["[x]"]), Err(ModelError::Corpus { line: 1 })));
    }

    #[test]
    fn scripted_contexts_and_leftover() {
        let v = Arc::new(Vocabulary::with_eos(["x", "(", ")"]).unwrap());
        let script: Script = serde_json::from_str(
            r#"{"contexts": {"(": {")": 0.5, "<eos>": 0.1}}, "default": {"x": 1.0}}"#,
        )
        .unwrap();
        let m = Scripted::new(v.clone(), &script).unwrap();
        assert_eq!(m.next_distribution(&[]), vec![1.0, 0.0, 0.0, 0.0]);
        let p = m.next_distribution(&[1]);
        assert_eq!(p[2], 0.5);
        assert_eq!(p[3], 0.1);
        assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
        let bad: Script = serde_json::from_str(r#"{"default": {"y": 1.0}}"#).unwrap();
        assert!(matches!(Scripted::new(v, &bad), Err(ModelError::UnknownToken(_))));
    }

    #[test]
    fn spec_strings() {
        let v = Arc::new(Vocabulary::with_eos(["x"]).unwrap());
        for ok in ["uniform", "random", "verbose-bias:3.5"] {
            assert_eq!(load_model(ok, v.clone(), 1).unwrap().vocab_size(), 2);
        }
        for bad in ["gpt", "verbose-bias:-1", "ngram:", "uniform:3"] {
            assert!(load_model(bad, v.clone(), 1).is_err(), "{bad}");
        }
    }
}
