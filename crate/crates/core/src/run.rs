//! Ranked result lists and the TREC run format.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// An ordered list of scored documents for one query. Ranks are 1-based
/// positions in `entries`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<ScoredDoc>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, entries: Vec<ScoredDoc>) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.doc_id == doc_id)
            .map(|i| i + 1)
    }

    pub fn truncated(&self, depth: usize) -> RankedList {
        RankedList {
            query_id: self.query_id.clone(),
            entries: self.entries.iter().take(depth).cloned().collect(),
        }
    }

    /// Writes `query_id Q0 doc_id rank score run_tag` lines.
    pub fn write_trec(&self, run_tag: &str, out: &mut impl Write) -> io::Result<()> {
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                self.query_id,
                e.doc_id,
                i + 1,
                e.score,
                run_tag
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunParseError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Reads a TREC run file. Entries are ordered by the rank column.
pub fn read_trec_run(reader: impl BufRead) -> Result<BTreeMap<String, RankedList>, RunParseError> {
    let mut rows: BTreeMap<String, Vec<(usize, ScoredDoc)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let malformed = |reason: String| RunParseError::Malformed {
            line: i + 1,
            reason,
        };
        let [qid, _, doc_id, rank, score, _tag] = fields.as_slice() else {
            return Err(malformed(format!("expected 6 fields, got {}", fields.len())));
        };
        let rank: usize = rank
            .parse()
            .map_err(|_| malformed(format!("bad rank {rank:?}")))?;
        let score: f64 = score
            .parse()
            .map_err(|_| malformed(format!("bad score {score:?}")))?;
        rows.entry(qid.to_string()).or_default().push((
            rank,
            ScoredDoc {
                doc_id: doc_id.to_string(),
                score,
            },
        ));
    }
    Ok(rows
        .into_iter()
        .map(|(qid, mut entries)| {
            entries.sort_by_key(|(rank, _)| *rank);
            let list = RankedList::new(qid.clone(), entries.into_iter().map(|(_, e)| e).collect());
            (qid, list)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trec_round_trip() {
        let list = RankedList::new(
            "q1",
            vec![
                ScoredDoc { doc_id: "d2".into(), score: 3.5 },
                ScoredDoc { doc_id: "d1".into(), score: 1.25 },
            ],
        );
        let mut buf = Vec::new();
        list.write_trec("bm25", &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "q1 Q0 d2 1 3.500000 bm25\nq1 Q0 d1 2 1.250000 bm25\n");
        let runs = read_trec_run(&buf[..]).unwrap();
        assert_eq!(runs["q1"], list);
        assert_eq!(list.rank_of("d1"), Some(2));
        assert_eq!(list.rank_of("zz"), None);
    }

    #[test]
    fn malformed_run_line() {
        assert!(matches!(
            read_trec_run(&b"q1 Q0 d1 x 1.0 t\n"[..]),
            Err(RunParseError::Malformed { line: 1, .. })
        ));
    }
}
