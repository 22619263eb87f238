//! Streaming detection pipeline: chunk source -> render/classify worker
//! pool -> re-sequenced verdict stream.
//!
//! Ordering and delivery contract: exactly one verdict per well-formed
//! chunk, in source order, regardless of how many workers run. Malformed
//! chunks are quarantined and skipped, never fatal. Memory stays bounded:
//! a ticket pool caps the number of chunks admitted but not yet emitted at
//! `queue_capacity`, so a slow consumer stalls the producer instead of
//! growing buffers.

use crate::byteclass::{histogram, FeatureHistogram};
use crate::cnn::{encode_input, forward, CnnModel};
use crate::hilbert::layout;
use crate::label::Label;
use crate::pcap::{ChunkSource, PayloadChunk, SourceError};
use crossbeam_channel::{bounded, unbounded, Receiver};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use thiserror::Error;

/// Classification outcome for one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub source_id: String,
    pub seq_no: u64,
    pub label: Label,
    pub p_malicious: f64,
    pub histogram: FeatureHistogram,
    pub ts: f64,
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    source_id: &'a str,
    seq: u64,
    label: Label,
    p_malicious: f64,
    hist: [u64; 5],
}

impl Verdict {
    /// One JSON Lines record:
    /// `{"source_id":…,"seq":…,"label":…,"p_malicious":…,"hist":[n,p,c,e,f]}`.
    pub fn to_jsonl(&self) -> String {
        serde_json::to_string(&VerdictLine {
            source_id: &self.source_id,
            seq: self.seq_no,
            label: self.label,
            p_malicious: self.p_malicious,
            hist: self.histogram.counts,
        })
        .expect("verdict serializes")
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    /// Hilbert order images are laid out at; must match the model input (6).
    pub order: u32,
    pub threshold: f64,
    pub workers: usize,
    /// Bound on chunks admitted into the pipeline but not yet emitted.
    pub queue_capacity: usize,
    /// Where malformed chunks are written; `None` drops them after counting.
    pub reject_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            order: 6,
            threshold: 0.5,
            workers: std::thread::available_parallelism().map_or(2, |n| n.get().min(4)),
            queue_capacity: 256,
            reject_dir: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("source failed: {0}")]
    SourceFailure(#[from] SourceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineSummary {
    pub verdicts: u64,
    pub rejected: u64,
}

enum WorkItem {
    Ok(Box<Verdict>),
    Malformed { chunk: PayloadChunk, reason: String },
}

struct Shared {
    emitted: AtomicU64,
    rejected: AtomicU64,
    source_error: Mutex<Option<SourceError>>,
}

/// Ordered stream of verdicts; iterate it, then call [`finish`](Self::finish)
/// for the summary or the deferred source failure.
pub struct VerdictStream {
    out_rx: Receiver<Verdict>,
    handles: Vec<JoinHandle<()>>,
    shared: Arc<Shared>,
}

impl Iterator for VerdictStream {
    type Item = Verdict;

    fn next(&mut self) -> Option<Verdict> {
        self.out_rx.recv().ok()
    }
}

impl VerdictStream {
    /// Drain remaining verdicts, join the pipeline threads, and report the
    /// run. A source failure surfaces here, after in-flight work is done.
    pub fn finish(mut self) -> Result<PipelineSummary, PipelineError> {
        while self.next().is_some() {}
        for handle in self.handles.drain(..) {
            let _ = handle.join();
        }
        if let Some(err) = self.shared.source_error.lock().unwrap().take() {
            return Err(PipelineError::SourceFailure(err));
        }
        Ok(PipelineSummary {
            verdicts: self.shared.emitted.load(Ordering::SeqCst),
            rejected: self.shared.rejected.load(Ordering::SeqCst),
        })
    }
}

fn classify_chunk(chunk: &PayloadChunk, model: &CnnModel, cfg: &PipelineConfig) -> Result<Verdict, String> {
    let hist = histogram(&chunk.bytes).map_err(|e| e.to_string())?;
    let img = layout(chunk, cfg.order).map_err(|e| e.to_string())?;
    let x = encode_input(&img).map_err(|e| e.to_string())?;
    let (_, p_malicious) = forward(model, &x).map_err(|e| e.to_string())?;
    let label = if p_malicious >= cfg.threshold {
        Label::Malicious
    } else {
        Label::Benign
    };
    Ok(Verdict {
        source_id: chunk.source_id.clone(),
        seq_no: chunk.seq_no,
        label,
        p_malicious,
        histogram: hist,
        ts: chunk.ts,
    })
}

fn quarantine(chunk: &PayloadChunk, reason: &str, dir: &PathBuf) {
    let safe_id: String = chunk
        .source_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    let base = dir.join(format!("{safe_id}_{}", chunk.seq_no));
    let _ = std::fs::create_dir_all(dir);
    let _ = std::fs::write(base.with_extension("bin"), &chunk.bytes);
    let _ = std::fs::write(base.with_extension("reason"), reason);
}

/// Run the full detection pipeline over a chunk source.
pub fn run_pipeline<S>(mut source: S, model: Arc<CnnModel>, cfg: PipelineConfig) -> VerdictStream
where
    S: ChunkSource + 'static,
{
    assert!(cfg.workers >= 1, "need at least one worker");
    assert!(cfg.queue_capacity >= 1, "queue capacity must be >= 1");

    let (ticket_tx, ticket_rx) = bounded::<()>(cfg.queue_capacity);
    let (work_tx, work_rx) = bounded::<(u64, PayloadChunk)>(cfg.queue_capacity);
    let (done_tx, done_rx) = unbounded::<(u64, WorkItem)>();
    let (out_tx, out_rx) = bounded::<Verdict>(cfg.queue_capacity);

    let shared = Arc::new(Shared {
        emitted: AtomicU64::new(0),
        rejected: AtomicU64::new(0),
        source_error: Mutex::new(None),
    });

    let mut handles = Vec::with_capacity(cfg.workers + 2);

    // Producer: admission-controlled by the ticket pool.
    let producer_shared = Arc::clone(&shared);
    handles.push(std::thread::spawn(move || {
        let mut next_idx = 0u64;
        loop {
            match source.next_chunk() {
                Ok(Some(chunk)) => {
                    if ticket_tx.send(()).is_err() {
                        break;
                    }
                    if work_tx.send((next_idx, chunk)).is_err() {
                        break;
                    }
                    next_idx += 1;
                }
                Ok(None) => break,
                Err(err) => {
                    *producer_shared.source_error.lock().unwrap() = Some(err);
                    break;
                }
            }
        }
    }));

    // Stateless workers sharing the immutable model.
    for _ in 0..cfg.workers {
        let work_rx = work_rx.clone();
        let done_tx = done_tx.clone();
        let model = Arc::clone(&model);
        let cfg = cfg.clone();
        handles.push(std::thread::spawn(move || {
            for (idx, chunk) in work_rx.iter() {
                let item = match classify_chunk(&chunk, &model, &cfg) {
                    Ok(verdict) => WorkItem::Ok(Box::new(verdict)),
                    Err(reason) => WorkItem::Malformed { chunk, reason },
                };
                if done_tx.send((idx, item)).is_err() {
                    break;
                }
            }
        }));
    }
    drop(work_rx);
    drop(done_tx);

    // Emitter: re-sequence by admission index, release tickets as items
    // leave the reorder buffer.
    let emitter_shared = Arc::clone(&shared);
    let reject_dir = cfg.reject_dir.clone();
    handles.push(std::thread::spawn(move || {
        let mut buffer: BTreeMap<u64, WorkItem> = BTreeMap::new();
        let mut next_expected = 0u64;
        for (idx, item) in done_rx.iter() {
            buffer.insert(idx, item);
            while let Some(item) = buffer.remove(&next_expected) {
                next_expected += 1;
                let _ = ticket_rx.recv();
                match item {
                    WorkItem::Ok(verdict) => {
                        if out_tx.send(*verdict).is_err() {
                            return;
                        }
                        emitter_shared.emitted.fetch_add(1, Ordering::SeqCst);
                    }
                    WorkItem::Malformed { chunk, reason } => {
                        emitter_shared.rejected.fetch_add(1, Ordering::SeqCst);
                        if let Some(dir) = &reject_dir {
                            quarantine(&chunk, &reason, dir);
                        }
                    }
                }
            }
        }
    }));

    VerdictStream {
        out_rx,
        handles,
        shared,
    }
}
