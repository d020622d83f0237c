//! Labels, fixed-width chunking and speaker-disjoint splits.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::kv::KvFile;
use crate::rp::RespirationPattern;
use crate::{Error, Result};

/// A respiration pattern with one speech label per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSequence {
    pub rp: RespirationPattern,
    pub labels: Vec<u8>,
    pub speaker_id: String,
}

impl LabeledSequence {
    pub fn new(rp: RespirationPattern, labels: Vec<u8>, speaker_id: impl Into<String>) -> Result<Self> {
        if labels.len() != rp.len() {
            return Err(Error::ShapeMismatch {
                op: "labeled sequence",
                expected: format!("{} labels", rp.len()),
                found: format!("{} labels", labels.len()),
            });
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Precondition("labels must be 0 or 1".into()));
        }
        Ok(Self {
            rp,
            labels,
            speaker_id: speaker_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChunkMode {
    /// Stride 1; inference averages every window covering a sample.
    Overlap,
    /// Stride `w`; inference concatenates windows.
    NonOverlap,
}

impl ChunkMode {
    pub fn short_name(self) -> &'static str {
        match self {
            ChunkMode::Overlap => "O",
            ChunkMode::NonOverlap => "NO",
        }
    }
}

impl fmt::Display for ChunkMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChunkMode::Overlap => "overlap",
            ChunkMode::NonOverlap => "non_overlap",
        })
    }
}

impl FromStr for ChunkMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "overlap" | "o" => Ok(ChunkMode::Overlap),
            "non_overlap" | "nonoverlap" | "no" => Ok(ChunkMode::NonOverlap),
            _ => Err(Error::parse("chunk mode", format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub input: Vec<f64>,
    pub labels: Vec<u8>,
    pub source_offset: usize,
    /// Leading samples that come from the source; the rest is zero padding.
    pub valid: usize,
}

impl Chunk {
    /// 1 for source samples, 0 for padding.
    pub fn mask(&self) -> Vec<bool> {
        (0..self.input.len()).map(|i| i < self.valid).collect()
    }
}

/// Windows cut from one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkSet {
    pub chunks: Vec<Chunk>,
    pub width: usize,
    pub mode: ChunkMode,
    pub stride: usize,
    /// Zero samples appended to the final chunk.
    pub pad_count: usize,
    pub source_len: usize,
}

/// Start offsets and valid lengths of the windows for a length-`n` sequence.
pub fn window_layout(n: usize, w: usize, mode: ChunkMode) -> Vec<(usize, usize)> {
    if n < w {
        return vec![(0, n)];
    }
    match mode {
        ChunkMode::Overlap => (0..=n - w).map(|o| (o, w)).collect(),
        ChunkMode::NonOverlap => (0..n.div_ceil(w))
            .map(|k| (k * w, w.min(n - k * w)))
            .collect(),
    }
}

pub fn chunk(seq: &LabeledSequence, w: usize, mode: ChunkMode) -> Result<ChunkSet> {
    if w == 0 {
        return Err(Error::Precondition("chunk width must be at least 1".into()));
    }
    let n = seq.len();
    if n == 0 {
        return Err(Error::Precondition("cannot chunk an empty sequence".into()));
    }
    let layout = window_layout(n, w, mode);
    let chunks = layout
        .iter()
        .map(|&(offset, valid)| {
            let mut input = seq.rp.samples[offset..offset + valid].to_vec();
            let mut labels = seq.labels[offset..offset + valid].to_vec();
            input.resize(w, 0.0);
            labels.resize(w, 0);
            Chunk {
                input,
                labels,
                source_offset: offset,
                valid,
            }
        })
        .collect::<Vec<_>>();
    let pad_count = chunks.last().map_or(0, |c| w - c.valid);
    Ok(ChunkSet {
        chunks,
        width: w,
        mode,
        stride: match mode {
            ChunkMode::Overlap => 1,
            ChunkMode::NonOverlap => w,
        },
        pad_count,
        source_len: n,
    })
}

/// Reassemble the chunk inputs themselves.
pub fn reassemble(set: &ChunkSet, n: usize) -> Result<Vec<f64>> {
    let values: Vec<&[f64]> = set.chunks.iter().map(|c| c.input.as_slice()).collect();
    reassemble_values(set, &values, n)
}

/// Map per-chunk values back to a length-`n` sequence: concatenation for
/// non-overlapping chunks, per-sample mean over covering windows otherwise.
/// Padding positions are dropped.
pub fn reassemble_values<V: AsRef<[f64]>>(set: &ChunkSet, values: &[V], n: usize) -> Result<Vec<f64>> {
    if n != set.source_len {
        return Err(Error::InconsistentChunks(format!(
            "chunks were cut from {} samples, asked for {n}",
            set.source_len
        )));
    }
    if values.len() != set.chunks.len() {
        return Err(Error::InconsistentChunks(format!(
            "{} value windows for {} chunks",
            values.len(),
            set.chunks.len()
        )));
    }
    let expected = window_layout(n, set.width, set.mode);
    let actual: Vec<(usize, usize)> = set.chunks.iter().map(|c| (c.source_offset, c.valid)).collect();
    if expected != actual {
        return Err(Error::InconsistentChunks(
            "chunk offsets do not match the declared width and mode".into(),
        ));
    }
    // running mean in chunk order; exact when all covering values agree
    let mut mean = vec![0.0; n];
    let mut count = vec![0u32; n];
    for (c, v) in set.chunks.iter().zip(values) {
        let v = v.as_ref();
        if v.len() != set.width {
            return Err(Error::InconsistentChunks(format!(
                "value window of length {} for width {}",
                v.len(),
                set.width
            )));
        }
        for k in 0..c.valid {
            let i = c.source_offset + k;
            count[i] += 1;
            mean[i] += (v[k] - mean[i]) / count[i] as f64;
        }
    }
    Ok(mean)
}

/// `y_i = 1` iff `i / fps` falls in some `[start, end)`.
pub fn label_from_intervals(intervals: &[(f64, f64)], n: usize, fps: f64) -> Vec<u8> {
    (0..n)
        .map(|i| {
            let t = i as f64 / fps;
            intervals.iter().any(|&(a, b)| t >= a && t < b) as u8
        })
        .collect()
}

/// Speech intervals `[start, end)` in seconds from a binary label vector.
pub fn intervals_from_labels(labels: &[u8], fps: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, &y) in labels.iter().chain(std::iter::once(&0)).enumerate() {
        match (y, start) {
            (1, None) => start = Some(i),
            (0, Some(s)) => {
                out.push((s as f64 / fps, i as f64 / fps));
                start = None;
            }
            _ => {}
        }
    }
    out
}

/// Balanced inverse-frequency weights `N / (2 N_c)`, returned as
/// `(w_pos, w_neg)`.
pub fn class_weights<'a>(labels: impl IntoIterator<Item = &'a u8>) -> Result<(f64, f64)> {
    let (mut pos, mut total) = (0usize, 0usize);
    for &y in labels {
        pos += (y == 1) as usize;
        total += 1;
    }
    let neg = total - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    let t = total as f64;
    Ok((t / (2.0 * pos as f64), t / (2.0 * neg as f64)))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Speaker folds: distinct ids are sorted, shuffled with `seed`, and dealt
/// round-robin into `n_splits` folds (so earlier folds take the remainder).
/// Split `k` tests on fold `k` and trains on all others.
pub fn speaker_folds(ids: &[String], n_splits: usize, seed: u64) -> Result<Vec<Vec<String>>> {
    if n_splits < 2 {
        return Err(Error::Precondition(format!("need at least 2 splits, got {n_splits}")));
    }
    let mut distinct: Vec<String> = ids.to_vec();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < n_splits {
        return Err(Error::TooFewSpeakers {
            needed: n_splits,
            found: distinct.len(),
        });
    }
    distinct.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = vec![Vec::new(); n_splits];
    for (j, id) in distinct.into_iter().enumerate() {
        folds[j % n_splits].push(id);
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

pub fn splits_from_folds(folds: &[Vec<String>]) -> Vec<Split> {
    (0..folds.len())
        .map(|k| Split {
            test: folds[k].clone(),
            train: {
                let mut t: Vec<String> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .flat_map(|(_, f)| f.iter().cloned())
                    .collect();
                t.sort();
                t
            },
        })
        .collect()
}

pub fn split_speakers(sequences: &[LabeledSequence], n_splits: usize, seed: u64) -> Result<Vec<Split>> {
    let ids: Vec<String> = sequences.iter().map(|s| s.speaker_id.clone()).collect();
    Ok(splits_from_folds(&speaker_folds(&ids, n_splits, seed)?))
}

pub fn render_folds(folds: &[Vec<String>]) -> String {
    let mut kv = KvFile::default();
    kv.push("folds", folds.len());
    for (k, f) in folds.iter().enumerate() {
        kv.push(format!("fold_{k}"), f.join(","));
    }
    format!(
        "# speaker-disjoint folds; split k tests on fold_k and trains on the others\n{}",
        kv.render()
    )
}

pub fn parse_folds(text: &str) -> Result<Vec<Vec<String>>> {
    let kv = KvFile::parse(text, "split file")?;
    let n: usize = kv
        .get_parsed("folds")?
        .ok_or_else(|| Error::parse("split file", "missing `folds`"))?;
    (0..n)
        .map(|k| {
            let v = kv
                .get(&format!("fold_{k}"))
                .ok_or_else(|| Error::parse("split file", format!("missing fold_{k}")))?;
            Ok(v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        })
        .collect()
}

/// Per-sample dataset CSV: `speaker_id,index,rp_value,label`.
pub fn dataset_to_csv(sequences: &[LabeledSequence]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["speaker_id", "index", "rp_value", "label"])?;
    for s in sequences {
        for (i, (v, y)) in s.rp.samples.iter().zip(&s.labels).enumerate() {
            w.write_record([s.speaker_id.as_str(), &i.to_string(), &v.to_string(), &y.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::parse("dataset csv", e))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Parse a dataset CSV. Speakers keep their order of first appearance and
/// each speaker's rows must have consecutive indices from 0.
pub fn dataset_from_csv(text: &str, fps: f64, filtered: bool) -> Result<Vec<LabeledSequence>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["speaker_id", "index", "rp_value", "label"] {
        return Err(Error::parse("dataset csv", format!("unexpected header {headers:?}")));
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_speaker: BTreeMap<String, (Vec<f64>, Vec<u8>)> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ctx = || format!("dataset csv row {}", row + 1);
        let id = rec[0].to_string();
        let index: usize = rec[1].trim().parse().map_err(|e| Error::parse(ctx(), e))?;
        let value: f64 = rec[2].trim().parse().map_err(|e| Error::parse(ctx(), e))?;
        let label: u8 = rec[3].trim().parse().map_err(|e| Error::parse(ctx(), e))?;
        let entry = by_speaker.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (Vec::new(), Vec::new())
        });
        if index != entry.0.len() {
            return Err(Error::parse(
                ctx(),
                format!("speaker {id}: expected index {}, found {index}", entry.0.len()),
            ));
        }
        entry.0.push(value);
        entry.1.push(label);
    }
    order
        .into_iter()
        .map(|id| {
            let (samples, labels) = by_speaker.remove(&id).expect("speaker recorded");
            LabeledSequence::new(RespirationPattern { samples, fps, filtered }, labels, id)
        })
        .collect()
}

pub fn read_dataset(path: &Path, fps: f64, filtered: bool) -> Result<Vec<LabeledSequence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(&text, fps, filtered)
}
