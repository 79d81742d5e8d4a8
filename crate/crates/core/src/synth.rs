//! Synthetic template corpus with known sentence topics.
//!
//! Every instance describes one entity. Its summary has `n` sentences and
//! sentence `t` follows the template of topic `t`; the source holds one
//! paragraph per summary sentence carrying that sentence's instance-specific
//! words, plus unrelated noise paragraphs. Each sentence ends with one of a
//! few topic-independent tails, so the last tokens of a sentence never reveal
//! which topic comes next, and sentence lengths vary so absolute positions do
//! not reveal it either.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{build_example, CorpusConfig, EncodedExample, RawInstance, RawRecord, Vocab};
use crate::error::{Error, Result};
use crate::text::is_stopword;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub instances: usize,
    pub topics: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Instance-specific words each topic draws from.
    pub fillers_per_topic: usize,
    pub entities: usize,
    pub tails: usize,
    pub noise_paragraphs: usize,
    pub documents: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            instances: 50,
            topics: 5,
            min_sentences: 2,
            max_sentences: 5,
            fillers_per_topic: 10,
            entities: 20,
            tails: 6,
            noise_paragraphs: 3,
            documents: 8,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.instances == 0 || self.topics == 0 || self.entities == 0 {
            return bad("instances, topics and entities must be positive");
        }
        if self.min_sentences < 2 || self.min_sentences > self.max_sentences {
            return bad("need 2 <= min_sentences <= max_sentences");
        }
        if self.max_sentences > self.topics {
            return bad("max_sentences cannot exceed topics");
        }
        if self.tails < self.max_sentences {
            return bad("need at least one tail per sentence");
        }
        if self.fillers_per_topic < 3 {
            return bad("fillers_per_topic must be at least 3");
        }
        Ok(())
    }
}

const TEMPLATE_WORDS: usize = 4;
const OPTIONAL_WORDS: usize = 4;
const SOURCE_WORDS: usize = 3;
const TAIL_WORDS: usize = 5;
const NOISE_WORDS: usize = 40;

struct Topic {
    template: Vec<String>,
    fillers: Vec<String>,
    optional: Vec<String>,
    source: Vec<String>,
}

/// Word inventory, fixed by the configuration's sizes (not its seed).
struct Lexicon {
    entities: Vec<String>,
    species: Vec<String>,
    topics: Vec<Topic>,
    tails: Vec<Vec<String>>,
    noise: Vec<String>,
}

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: [&str; 5] = ["a", "e", "i", "o", "u"];

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let mut seen = HashSet::new();
        let mut word = |rng: &mut ChaCha8Rng| loop {
            let syllables = rng.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), NUCLEI.choose(rng).unwrap()))
                .collect();
            if !is_stopword(&w) && seen.insert(w.clone()) {
                return w;
            }
        };
        let mut words = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| word(rng)).collect::<Vec<_>>();
        let entities = words(&mut rng, cfg.entities);
        let species = words(&mut rng, 25);
        let topics = (0..cfg.topics)
            .map(|_| Topic {
                template: words(&mut rng, TEMPLATE_WORDS),
                fillers: words(&mut rng, cfg.fillers_per_topic),
                optional: words(&mut rng, OPTIONAL_WORDS),
                source: words(&mut rng, SOURCE_WORDS),
            })
            .collect();
        let tails = (0..cfg.tails).map(|_| words(&mut rng, TAIL_WORDS)).collect();
        let noise = words(&mut rng, NOISE_WORDS);
        Lexicon {
            entities,
            species,
            topics,
            tails,
            noise,
        }
    }
}

/// One generated sentence with the words its source paragraph must carry.
struct Sentence {
    tokens: Vec<String>,
    paragraph: Vec<String>,
}

fn sentence(lex: &Lexicon, t: usize, entity: &str, tail: &[String], rng: &mut ChaCha8Rng) -> Sentence {
    let topic = &lex.topics[t];
    let n_fillers = rng.random_range(1..=3);
    let fillers: Vec<String> = topic.fillers.choose_multiple(rng, n_fillers).cloned().collect();
    let optional = &topic.optional[..rng.random_range(0..=OPTIONAL_WORDS)];
    let mut tokens = vec![entity.to_string()];
    tokens.extend_from_slice(&topic.template[..2]);
    tokens.extend(fillers.iter().cloned());
    tokens.extend_from_slice(&topic.template[2..]);
    tokens.extend_from_slice(optional);
    tokens.extend_from_slice(tail);
    tokens.push(".".into());

    let mut paragraph = vec![entity.to_string(), topic.source[0].clone()];
    paragraph.extend(fillers);
    paragraph.push(topic.source[1].clone());
    paragraph.extend_from_slice(optional);
    paragraph.extend_from_slice(tail);
    paragraph.push(topic.source[2].clone());
    let n_noise = rng.random_range(2..=4);
    paragraph.extend(lex.noise.choose_multiple(rng, n_noise).cloned());
    paragraph.push(".".into());
    Sentence { tokens, paragraph }
}

/// Generates `cfg.instances` records, each carrying its true topic labels
/// (`0 .. n`, then the end-of-topic label `cfg.topics`).
pub fn generate_corpus(cfg: &SynthConfig) -> Result<Vec<RawRecord>> {
    cfg.validate()?;
    let lex = Lexicon::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let entity = lex.entities.choose(&mut rng).unwrap().clone();
        let species = lex.species.choose(&mut rng).unwrap();
        let n = rng.random_range(cfg.min_sentences..=cfg.max_sentences);
        let tails: Vec<&Vec<String>> = lex.tails.choose_multiple(&mut rng, n).collect();
        let sentences: Vec<Sentence> = (0..n).map(|t| sentence(&lex, t, &entity, tails[t], &mut rng)).collect();
        let mut paragraphs: Vec<String> = sentences.iter().map(|s| s.paragraph.join(" ")).collect();
        for _ in 0..cfg.noise_paragraphs {
            let len = rng.random_range(6..=12);
            let mut p: Vec<String> = (0..len).map(|_| lex.noise.choose(&mut rng).unwrap().clone()).collect();
            p.push(".".into());
            paragraphs.push(p.join(" "));
        }
        paragraphs.shuffle(&mut rng);
        let mut labels: Vec<u32> = (0..n as u32).collect();
        labels.push(cfg.topics as u32);
        out.push(RawRecord {
            title: format!("{entity} {species}"),
            paragraphs,
            lead: sentences.iter().map(|s| s.tokens.join(" ")).collect::<Vec<_>>().join(" "),
            documents: Some(cfg.documents),
            topic_labels: Some(labels),
        });
    }
    Ok(out)
}

/// Every generated instance encoded with a vocabulary over all of them, for
/// experiments that train and test on the same instances.
pub fn encoded_corpus(cfg: &SynthConfig) -> Result<(Vec<EncodedExample>, Vocab)> {
    let corpus_cfg = CorpusConfig::default();
    let mut examples = Vec::new();
    for rec in generate_corpus(cfg)? {
        let inst = RawInstance::from_record(&rec)?;
        let ex = build_example(&inst, &corpus_cfg)
            .map_err(|r| Error::InvalidInput(format!("synthetic instance rejected: {}", r.reason())))?;
        examples.push(ex);
    }
    let vocab = Vocab::build(
        examples.iter().flat_map(|e| std::iter::once(&e.source[..]).chain(e.summary.iter().map(|s| &s[..]))),
        corpus_cfg.vocab_size,
    );
    Ok((examples.iter().map(|e| e.encode(&vocab)).collect(), vocab))
}

/// Template words of every topic, for checking recovered topics.
pub fn topic_vocabularies(cfg: &SynthConfig) -> Vec<Vec<String>> {
    Lexicon::new(cfg)
        .topics
        .into_iter()
        .map(|t| t.template.into_iter().chain(t.fillers).chain(t.optional).collect())
        .collect()
}
