use enrichkit::corpus::{Document, Method, QueryRecord};
use enrichkit::enrichment::{build_prompt, GenerationRequest};
use enrichkit::rag::build_qa_prompt;

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn query() -> QueryRecord {
    QueryRecord::new("q1", "how do solar panels work")
}

fn docs() -> Vec<Document> {
    vec![
        Document::new("a", "Photovoltaic cells turn light into current."),
        Document::new("b", "Inverters convert direct current."),
        Document::new("c", "Panels face the sun."),
    ]
}

#[test]
fn zero_shot_prompt() {
    let req = GenerationRequest::new(Method::ZeroShot, query(), vec![], "m").unwrap();
    assert_eq!(build_prompt(&req).text(), golden("zero_shot.txt"));
}

#[test]
fn modification_prompt() {
    let req = GenerationRequest::new(Method::DocModification, query(), docs()[..1].to_vec(), "m").unwrap();
    assert_eq!(build_prompt(&req).text(), golden("modification.txt"));
}

#[test]
fn summary_prompt() {
    let req = GenerationRequest::new(Method::ThreeDocSummary, query(), docs(), "m").unwrap();
    assert_eq!(build_prompt(&req).text(), golden("summary_three.txt"));
    let two = GenerationRequest::new(Method::TwoDocSummary, query(), docs()[..2].to_vec(), "m").unwrap();
    assert!(golden("summary_three.txt").starts_with(build_prompt(&two).text()));
}

#[test]
fn question_prompt() {
    assert_eq!(build_qa_prompt("who wrote the iliad", &[]).unwrap().text(), golden("question.txt"));
}

#[test]
fn question_with_passages_prompt() {
    let passages = [
        Document::new("p1", "An epic poem.").with_title("Iliad"),
        Document::new("p2", "Homer was a poet."),
        Document::new("p3", "Troy fell."),
        Document::new("p4", "Achilles sulked."),
        Document::new("p5", "Hector died."),
    ];
    let refs: Vec<&Document> = passages.iter().collect();
    assert_eq!(
        build_qa_prompt("who wrote the iliad", &refs).unwrap().text(),
        golden("question_with_passages.txt")
    );
}
