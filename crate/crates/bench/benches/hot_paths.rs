use std::collections::BTreeMap;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use enrichkit::corpus::Document;
use enrichkit::faithfulness::build_kb;
use enrichkit::gateway::lexical_overlap;
use enrichkit::index::{Analyzer, Bm25Params, CorpusSearcher};
use enrichkit::metrics::{ndcg_at_k, permutation_test};
use enrichkit::segment::segment_sentences;
use enrichkit::synthetic::{adhoc_fixture, AdhocFixtureSpec};
use enrichkit::{RankedList, ScoredDoc};

fn bm25(c: &mut Criterion) {
    let (corpus, queries) = adhoc_fixture(AdhocFixtureSpec::standard());
    let searcher = CorpusSearcher::new(&corpus, Analyzer::default(), Bm25Params::default()).unwrap();
    c.bench_function("bm25_search/500docs/depth1000", |b| {
        b.iter(|| {
            for q in &queries {
                black_box(searcher.search(q, 1000).unwrap());
            }
        })
    });
}

fn ndcg(c: &mut Criterion) {
    let list = RankedList::new(
        "q",
        (0..1000)
            .map(|i| ScoredDoc {
                doc_id: format!("d{i}"),
                score: 1000.0 - i as f64,
            })
            .collect(),
    );
    let judgments: BTreeMap<String, u8> = (0..200).map(|i| (format!("d{}", i * 5), (i % 4) as u8)).collect();
    c.bench_function("ndcg_at_k/1000/k100", |b| b.iter(|| black_box(ndcg_at_k(&list, &judgments, 100))));
}

fn permutation(c: &mut Criterion) {
    let a: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin().abs()).collect();
    let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos().abs()).collect();
    c.bench_function("permutation_test/50pairs/10000", |bench| {
        bench.iter(|| black_box(permutation_test(&a, &b, 10_000, 7).unwrap()))
    });
}

fn greedy_kb(c: &mut Criterion) {
    let sample: Vec<Document> = (0..50)
        .map(|i| Document::new(format!("s{i:02}"), format!("solar panel output {i} varies with cloud cover and season")))
        .collect();
    let refs: Vec<&Document> = sample.iter().collect();
    let sentence = segment_sentences("Solar panel output drops under heavy cloud cover in winter.").remove(0);
    c.bench_function("build_kb/50docs/k3", |b| {
        b.iter(|| black_box(build_kb(&sentence, 3, &refs, &lexical_overlap).unwrap()))
    });
}

criterion_group!(benches, bm25, ndcg, permutation, greedy_kb);
criterion_main!(benches);
