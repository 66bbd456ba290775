//! Deterministic synthetic corpora for smoke runs, examples and tests.
//!
//! Words are pronounceable nonsense built from syllables, so no document
//! accidentally matches English stopwords or stems.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document, QueryRecord};

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Distinct nonsense words ending in a vowel.
fn vocabulary(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn sentence(words: &[&str]) -> String {
    let mut s = words.join(" ");
    s = capitalize(&s);
    s.push('.');
    s
}

/// Builds `n_words` words mixing `required` terms into background noise.
fn mixed_sentence(
    rng: &mut ChaCha8Rng,
    required: &[&str],
    pool: &[&str],
    background: &[String],
    length: std::ops::RangeInclusive<usize>,
) -> String {
    let n_words = rng.gen_range(length);
    let mut words: Vec<&str> = required.to_vec();
    while words.len() < n_words {
        if !pool.is_empty() && rng.gen_bool(0.35) {
            words.push(pool.choose(rng).unwrap());
        } else {
            words.push(background.choose(rng).unwrap().as_str());
        }
    }
    words.shuffle(rng);
    sentence(&words)
}

#[derive(Clone, Copy, Debug)]
pub struct AdhocFixtureSpec {
    pub topics: usize,
    pub docs_per_topic: usize,
    pub seed: u64,
}

impl AdhocFixtureSpec {
    /// 500 documents, 20 queries.
    pub fn standard() -> Self {
        AdhocFixtureSpec {
            topics: 20,
            docs_per_topic: 25,
            seed: 20_240_501,
        }
    }

    /// 50 documents, 5 queries.
    pub fn small() -> Self {
        AdhocFixtureSpec {
            topics: 5,
            docs_per_topic: 10,
            seed: 50,
        }
    }
}

/// One query per topic. Per topic: two grade-3 and four grade-2 documents
/// that are long and use the query terms sparingly, four grade-1 documents,
/// and short unjudged documents that mostly mention query terms, so lexical
/// rankings interleave relevant and non-relevant documents.
pub fn adhoc_fixture(spec: AdhocFixtureSpec) -> (Corpus, Vec<QueryRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = BTreeSet::new();
    let background = vocabulary(&mut rng, 400, &mut taken);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    for t in 0..spec.topics {
        let topic = vocabulary(&mut rng, 8, &mut taken);
        let (qterms, rest) = topic.split_at(3);
        let qterms: Vec<&str> = qterms.iter().map(String::as_str).collect();
        let rest: Vec<&str> = rest.iter().map(String::as_str).collect();
        let qid = format!("q{:02}", t + 1);
        let mut q = QueryRecord::new(&qid, qterms.join(" "));
        for i in 0..spec.docs_per_topic {
            let doc_id = format!("t{:02}d{:02}", t + 1, i + 1);
            let (grade, sentences): (u8, Vec<String>) = match i {
                0..=5 => {
                    let grade = if i < 2 { 3 } else { 2 };
                    let n_sent = rng.gen_range(4..=7);
                    let s = (0..n_sent)
                        .map(|j| {
                            let req: Vec<&str> = if j == 0 || rng.gen_bool(0.25) {
                                vec![qterms[rng.gen_range(0..3)]]
                            } else {
                                vec![]
                            };
                            mixed_sentence(&mut rng, &req, &rest, &background, 8..=12)
                        })
                        .collect();
                    (grade, s)
                }
                6..=9 => {
                    let n_sent = rng.gen_range(3..=5);
                    let s = (0..n_sent)
                        .map(|j| {
                            let req: Vec<&str> = if j == 0 { vec![qterms[rng.gen_range(0..3)]] } else { vec![] };
                            mixed_sentence(&mut rng, &req, &rest, &background, 7..=11)
                        })
                        .collect();
                    (1, s)
                }
                _ => {
                    let n_sent = rng.gen_range(2..=4);
                    let mentions = rng.gen_bool(0.7);
                    let s = (0..n_sent)
                        .map(|j| {
                            let req: Vec<&str> = if mentions && (j == 0 || rng.gen_bool(0.3)) {
                                let n = rng.gen_range(1..=2);
                                qterms.choose_multiple(&mut rng, n).copied().collect()
                            } else {
                                vec![]
                            };
                            mixed_sentence(&mut rng, &req, &rest, &background, 6..=10)
                        })
                        .collect();
                    (0, s)
                }
            };
            if grade > 0 {
                q.qrels.insert(doc_id.clone(), grade);
            }
            docs.push(Document::new(doc_id, sentences.join(" ")));
        }
        queries.push(q);
    }
    let mut corpus = Corpus::from_documents("synthetic-adhoc", docs).expect("fixture ids are unique");
    corpus.register_queries(queries.iter().map(|q| q.query_id.as_str()));
    (corpus, queries)
}

/// Question-answering fixture: `n_questions` "capital city" questions over
/// invented countries. Each country gets passages that state the answer with
/// varying wording, passages about it that do not, and the corpus is padded
/// with unrelated passages.
pub fn qa_fixture(n_questions: usize, seed: u64) -> (Corpus, Vec<QueryRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = BTreeSet::new();
    let background = vocabulary(&mut rng, 300, &mut taken);
    let names = vocabulary(&mut rng, n_questions * 2, &mut taken);
    let mut docs = Vec::new();
    let mut queries = Vec::new();
    for i in 0..n_questions {
        let country = capitalize(&names[2 * i]);
        let capital = capitalize(&names[2 * i + 1]);
        let qid = format!("qa{:02}", i + 1);
        let mut q = QueryRecord::new(&qid, format!("What is the capital city of {country}?"));
        q.gold_answers.push(capital.clone());
        let answer_docs = rng.gen_range(3..=9);
        let other_docs = rng.gen_range(3..=6);
        for j in 0..answer_docs + other_docs {
            let filler = |rng: &mut ChaCha8Rng| mixed_sentence(rng, &[], &[], &background, 6..=10);
            let text = if j < answer_docs {
                let statement = match rng.gen_range(0..3) {
                    0 => format!("The capital city of {country} is {capital}."),
                    1 => format!("{capital} is the largest town in {country}."),
                    _ => format!("Travelers to {country} often visit {capital}."),
                };
                let mut parts = [filler(&mut rng), statement, filler(&mut rng)];
                parts.rotate_left(rng.gen_range(0..3));
                parts.join(" ")
            } else {
                let statement = match rng.gen_range(0..3) {
                    0 => format!("The city council of {country} meets each spring."),
                    1 => format!("{country} has a capital of culture award."),
                    _ => format!("The history of {country} is long."),
                };
                [filler(&mut rng), statement, filler(&mut rng)].join(" ")
            };
            let title = if rng.gen_bool(0.5) { country.clone() } else { capitalize(background.choose(&mut rng).unwrap()) };
            docs.push(Document::new(format!("{qid}p{:02}", j + 1), text).with_title(title));
        }
        queries.push(q);
    }
    for k in 0..n_questions * 4 {
        let text = (0..3)
            .map(|_| mixed_sentence(&mut rng, &[], &[], &background, 6..=10))
            .collect::<Vec<_>>()
            .join(" ");
        docs.push(Document::new(format!("bg{:03}", k + 1), text));
    }
    let mut corpus = Corpus::from_documents("synthetic-qa", docs).expect("fixture ids are unique");
    corpus.register_queries(queries.iter().map(|q| q.query_id.as_str()));
    (corpus, queries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let (c, q) = adhoc_fixture(AdhocFixtureSpec::standard());
        assert_eq!((c.len(), q.len()), (500, 20));
        assert!(q.iter().all(|q| q.relevant_ids().len() == 6));
        let (c2, q2) = adhoc_fixture(AdhocFixtureSpec::small());
        assert_eq!((c2.len(), q2.len()), (50, 5));
        let (qa, qq) = qa_fixture(20, 1);
        assert_eq!(qq.len(), 20);
        assert!(qa.len() > 200);
    }

    #[test]
    fn fixtures_are_deterministic() {
        let a = adhoc_fixture(AdhocFixtureSpec::small());
        let b = adhoc_fixture(AdhocFixtureSpec::small());
        assert_eq!(a.0.documents(), b.0.documents());
        assert_eq!(a.1, b.1);
    }
}
