use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::Verifier;
use crate::corpus::{CorpusRecord, LineError};
use crate::error::{Error, Result};
use crate::types::WatermarkId;
use crate::vocab::VocabModel;

/// One line of a scan report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScanEntry {
    pub record_id: String,
    pub mu: String,
    pub k_p: u64,
    pub q: Option<f64>,
    pub n_counted: Option<u64>,
    pub decision: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScanEntry {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scan entry serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSummary {
    pub records: usize,
    pub entries: usize,
    pub errors: usize,
    pub elapsed: Duration,
}

/// Verifies every record against every `(mu, k_p)` on `jobs` worker
/// threads. Entries reach `emit` in input order, then id order, whatever
/// the thread count. Records that fail to parse or tokenize produce error
/// entries and the scan continues.
pub fn scan_corpus(
    records: &[std::result::Result<CorpusRecord, LineError>],
    ids: &[(WatermarkId, u64)],
    verifier: &Verifier,
    vocab: Option<&VocabModel>,
    threshold: f64,
    jobs: usize,
    mut emit: impl FnMut(&ScanEntry),
) -> Result<ScanSummary> {
    if ids.is_empty() {
        return Err(Error::EmptyInput("watermark id list"));
    }
    if jobs == 0 {
        return Err(Error::InvalidParam {
            field: "jobs",
            reason: "must be at least 1".into(),
        });
    }
    for (_, k_p) in ids {
        verifier.basis().check_key(*k_p)?;
    }
    let start = Instant::now();
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::sync_channel::<(usize, Vec<ScanEntry>)>(jobs * 4);
    let mut entries = 0;
    let mut errors = 0;
    std::thread::scope(|s| {
        for _ in 0..jobs {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= records.len() {
                    break;
                }
                let out = scan_record(&records[i], ids, verifier, vocab, threshold);
                if tx.send((i, out)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut pending = BTreeMap::new();
        let mut cursor = 0;
        for (i, out) in rx {
            pending.insert(i, out);
            while let Some(out) = pending.remove(&cursor) {
                for e in &out {
                    entries += 1;
                    errors += e.error.is_some() as usize;
                    emit(e);
                }
                cursor += 1;
            }
        }
    });
    Ok(ScanSummary {
        records: records.len(),
        entries,
        errors,
        elapsed: start.elapsed(),
    })
}

fn scan_record(
    record: &std::result::Result<CorpusRecord, LineError>,
    ids: &[(WatermarkId, u64)],
    verifier: &Verifier,
    vocab: Option<&VocabModel>,
    threshold: f64,
) -> Vec<ScanEntry> {
    let failed = |record_id: &str, message: &str| -> Vec<ScanEntry> {
        ids.iter()
            .map(|(mu, k_p)| ScanEntry {
                record_id: record_id.to_string(),
                mu: mu.to_hex(),
                k_p: *k_p,
                q: None,
                n_counted: None,
                decision: None,
                error: Some(message.to_string()),
            })
            .collect()
    };
    let record = match record {
        Ok(r) => r,
        Err(e) => return failed(&format!("line:{}", e.line), &e.message),
    };
    let tokens = match (vocab, &record.content) {
        (Some(v), _) => record.token_ids(v),
        (None, crate::corpus::RecordContent::Tokens(t)) => Ok(t.clone()),
        (None, crate::corpus::RecordContent::Text(_)) => {
            Err(Error::Config("text record but no vocabulary to tokenize it".into()))
        }
    };
    let tokens = match tokens {
        Ok(t) => t,
        Err(e) => return failed(&record.id, &e.to_string()),
    };
    let mut out = Vec::with_capacity(ids.len());
    // Counting is per mu; reuse counts when the same mu appears with
    // several keys.
    let mut last: Option<(&WatermarkId, Result<super::CountVector>)> = None;
    for (mu, k_p) in ids {
        if last.as_ref().map_or(true, |(m, _)| *m != mu) {
            last = Some((mu, verifier.counts(&tokens, mu)));
        }
        let counts = &last.as_ref().expect("set above").1;
        let scored = match counts {
            Ok(c) => super::score(c, *k_p, verifier.basis()).map(|q| (q, c.n_counted)),
            Err(e) => Err(Error::Config(e.to_string())),
        };
        out.push(match scored {
            Ok((q, n)) => ScanEntry {
                record_id: record.id.clone(),
                mu: mu.to_hex(),
                k_p: *k_p,
                q: Some(q),
                n_counted: Some(n),
                decision: Some(q >= threshold),
                error: None,
            },
            Err(e) => ScanEntry {
                record_id: record.id.clone(),
                mu: mu.to_hex(),
                k_p: *k_p,
                q: None,
                n_counted: None,
                decision: None,
                error: Some(e.to_string()),
            },
        });
    }
    out
}
