//! Classification metrics, ROC / precision-recall curves, transition timing
//! errors and the text report format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::kv::KvFile;
use crate::{format_sig, Error, Result};

/// Largest onset/offset timing difference (seconds) that still counts as a match.
pub const DEFAULT_MATCH_WINDOW_S: f64 = 2.0;

/// Text used for metrics that are undefined (for example precision with no
/// positive predictions).
pub const UNDEFINED: &str = "undefined";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(a: usize, b: usize, op: &'static str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            expected: format!("{b} values"),
            found: format!("{a} values"),
        })
    }
}

pub fn confusion_counts(pred: &[u8], labels: &[u8]) -> Result<Confusion> {
    check_lengths(pred.len(), labels.len(), "confusion_counts")?;
    let mut c = Confusion::default();
    for (&p, &y) in pred.iter().zip(labels) {
        match (p != 0, y != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// `None` marks an undefined value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auroc: Option<f64>,
    pub counts: Confusion,
}

impl Metrics {
    pub const NAMES: [&'static str; 5] = ["accuracy", "precision", "recall", "f1", "auroc"];

    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.auroc,
        ]
    }

    pub fn from_counts(counts: Confusion, auroc: Option<f64>) -> Self {
        let Confusion { tp, fp, tn, fn_ } = counts;
        let ratio = |a: usize, b: usize| (b > 0).then(|| a as f64 / b as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(_), Some(_)) => Some(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64),
            _ => None,
        };
        Self {
            accuracy: ratio(tp + tn, counts.total()),
            precision,
            recall,
            f1,
            auroc,
            counts,
        }
    }
}

pub fn binarize(probs: &[f64], threshold: f64) -> Vec<u8> {
    probs.iter().map(|&p| u8::from(p >= threshold)).collect()
}

/// Thresholded metrics plus AuROC. AuROC is undefined when only one class is
/// present; the other metrics are still computed.
pub fn metrics(probs: &[f64], labels: &[u8], threshold: f64) -> Result<Metrics> {
    check_lengths(probs.len(), labels.len(), "metrics")?;
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Precondition(format!(
            "metrics: probability {p} outside [0, 1]"
        )));
    }
    let counts = confusion_counts(&binarize(probs, threshold), labels)?;
    let auroc = match auroc(probs, labels) {
        Ok(a) => Some(a),
        Err(Error::Precondition(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics::from_counts(counts, auroc))
}

/// Cumulative (false positives, true positives) after each group of tied
/// scores, walking from the highest score down.
fn roc_steps(scores: &[f64], labels: &[u8]) -> Result<(Vec<(usize, usize, f64)>, usize, usize)> {
    check_lengths(scores.len(), labels.len(), "roc")?;
    let pos = labels.iter().filter(|&&y| y != 0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Precondition(
            "roc: labels contain a single class".into(),
        ));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Precondition("roc: NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut steps = Vec::new();
    let (mut fp, mut tp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((fp, tp, s));
    }
    Ok((steps, pos, neg))
}

/// Area under the ROC curve by trapezoidal integration over tied-score groups.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (steps, pos, neg) = roc_steps(scores, labels)?;
    // twice the area in units of (1/neg)·(1/pos), kept integral
    let mut twice = 0u128;
    let (mut fp0, mut tp0) = (0usize, 0usize);
    for &(fp, tp, _) in &steps {
        twice += ((fp - fp0) * (tp + tp0)) as u128;
        fp0 = fp;
        tp0 = tp;
    }
    Ok(twice as f64 / (2.0 * pos as f64 * neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

/// ROC points in increasing false-positive rate, starting at (0, 0) with an
/// infinite threshold.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (steps, pos, neg) = roc_steps(scores, labels)?;
    let mut out = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    out.extend(steps.iter().map(|&(fp, tp, s)| RocPoint {
        fpr: fp as f64 / neg as f64,
        tpr: tp as f64 / pos as f64,
        threshold: s,
    }));
    Ok(out)
}

pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let (steps, pos, _) = roc_steps(scores, labels)?;
    Ok(steps
        .iter()
        .map(|&(fp, tp, s)| PrPoint {
            recall: tp as f64 / pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: s,
        })
        .collect())
}

/// Trapezoidal area under a sequence of (x, y) points.
pub fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write `roc.csv` (fpr,tpr,threshold) and `pr.csv` (recall,precision,threshold) into `dir`.
pub fn export_curves(scores: &[f64], labels: &[u8], dir: &Path) -> Result<()> {
    let roc = roc_curve(scores, labels)?;
    let pr = pr_curve(scores, labels)?;
    write_csv(
        &dir.join("roc.csv"),
        &["fpr", "tpr", "threshold"],
        roc.iter()
            .map(|p| vec![p.fpr.to_string(), p.tpr.to_string(), p.threshold.to_string()]),
    )?;
    write_csv(
        &dir.join("pr.csv"),
        &["recall", "precision", "threshold"],
        pr.iter().map(|p| {
            vec![
                p.recall.to_string(),
                p.precision.to_string(),
                p.threshold.to_string(),
            ]
        }),
    )
}

/// Onset (0→1) and offset (1→0) indices: the index of the first sample after the change.
pub fn transitions(labels: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let (mut on, mut off) = (Vec::new(), Vec::new());
    for i in 1..labels.len() {
        match (labels[i - 1] != 0, labels[i] != 0) {
            (false, true) => on.push(i),
            (true, false) => off.push(i),
            _ => {}
        }
    }
    (on, off)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransitionErrors {
    /// Signed `(predicted − true) / fps` per matched onset, in true-onset order.
    pub onset_errors_s: Vec<f64>,
    pub offset_errors_s: Vec<f64>,
    pub onset_misses: usize,
    pub offset_misses: usize,
    /// Matched pairs as (true index, predicted index).
    pub onset_pairs: Vec<(usize, usize)>,
    pub offset_pairs: Vec<(usize, usize)>,
}

/// Greedy matching: true transitions are visited in time order and each takes
/// the nearest still-unmatched predicted transition within `max_lag` samples
/// (earlier one on ties).
fn match_transitions(truth: &[usize], pred: &[usize], max_lag: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; pred.len()];
    truth
        .iter()
        .map(|&g| {
            let best = pred
                .iter()
                .enumerate()
                .filter(|&(j, &p)| !used[j] && (p as f64 - g as f64).abs() <= max_lag)
                .min_by_key(|&(_, &p)| (p.abs_diff(g), p))
                .map(|(j, _)| j);
            if let Some(j) = best {
                used[j] = true;
            }
            best.map(|j| pred[j])
        })
        .collect()
}

pub fn transition_errors(
    pred: &[u8],
    labels: &[u8],
    fps: f64,
    match_window_s: f64,
) -> Result<TransitionErrors> {
    check_lengths(pred.len(), labels.len(), "transition_errors")?;
    if !(fps > 0.0) || !(match_window_s >= 0.0) {
        return Err(Error::Precondition(
            "transition_errors: fps and match window must be positive".into(),
        ));
    }
    let max_lag = match_window_s * fps + 1e-9;
    let (gt_on, gt_off) = transitions(labels);
    let (p_on, p_off) = transitions(pred);
    let mut out = TransitionErrors::default();
    for (truth, cand, errs, pairs, misses) in [
        (
            &gt_on,
            &p_on,
            &mut out.onset_errors_s,
            &mut out.onset_pairs,
            &mut out.onset_misses,
        ),
        (
            &gt_off,
            &p_off,
            &mut out.offset_errors_s,
            &mut out.offset_pairs,
            &mut out.offset_misses,
        ),
    ] {
        for (&g, m) in truth.iter().zip(match_transitions(truth, cand, max_lag)) {
            match m {
                Some(p) => {
                    errs.push((p as f64 - g as f64) / fps);
                    pairs.push((g, p));
                }
                None => *misses += 1,
            }
        }
    }
    Ok(out)
}

/// Mean computed as a running average, exact when all values are equal.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut m = 0.0;
    for (k, v) in values.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    Some(m)
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
pub fn std_dev(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Some(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

/// Fixed-width histogram over `[lo, hi)`; values outside are dropped.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64, usize)> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v < hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (lo + i as f64 * width, lo + (i + 1) as f64 * width, c))
        .collect()
}

/// Write `transitions.csv` (one row per matched pair) and
/// `transition_hist.csv` (0.1 s bins across the match window).
pub fn export_transitions(
    errs: &TransitionErrors,
    fps: f64,
    match_window_s: f64,
    dir: &Path,
) -> Result<()> {
    let rows = errs
        .onset_pairs
        .iter()
        .map(|p| ("onset", p))
        .chain(errs.offset_pairs.iter().map(|p| ("offset", p)))
        .map(|(kind, &(g, p))| {
            vec![
                kind.to_string(),
                g.to_string(),
                p.to_string(),
                ((p as f64 - g as f64) / fps).to_string(),
            ]
        });
    write_csv(
        &dir.join("transitions.csv"),
        &["kind", "true_index", "pred_index", "error_s"],
        rows,
    )?;
    let bins = ((2.0 * match_window_s / 0.1).round() as usize).max(1);
    let hi = match_window_s + 1e-9;
    let on = histogram(&errs.onset_errors_s, -hi, hi, bins);
    let off = histogram(&errs.offset_errors_s, -hi, hi, bins);
    let rows = on
        .iter()
        .map(|b| ("onset", b))
        .chain(off.iter().map(|b| ("offset", b)))
        .map(|(kind, &(a, b, c))| {
            vec![
                kind.to_string(),
                format_sig(a, 6),
                format_sig(b, 6),
                c.to_string(),
            ]
        });
    write_csv(
        &dir.join("transition_hist.csv"),
        &["kind", "bin_start_s", "bin_end_s", "count"],
        rows,
    )
}

/// Per-run results for one (model, mode, split) combination.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportBlock {
    pub name: String,
    pub runs: Vec<[Option<f64>; 5]>,
    pub onset_errors_s: Vec<f64>,
    pub offset_errors_s: Vec<f64>,
}

fn opt_to_string(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |x| x.to_string())
}

impl ReportBlock {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn push(&mut self, m: &Metrics, t: Option<&TransitionErrors>) {
        self.runs.push(m.values());
        if let Some(t) = t {
            self.onset_errors_s.extend(&t.onset_errors_s);
            self.offset_errors_s.extend(&t.offset_errors_s);
        }
    }

    /// Defined values of metric `k` across runs.
    pub fn defined(&self, k: usize) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r[k]).collect()
    }

    fn summary(values: &[f64]) -> String {
        match (mean(values), std_dev(values)) {
            (Some(m), Some(s)) => format!("{} ± {}", format_sig(m, 4), format_sig(s, 2)),
            _ => UNDEFINED.to_string(),
        }
    }

    /// `key = value` lines: a readable `mean ± std` per metric, then the raw
    /// per-run values so reports can be merged later.
    fn render_into(&self, out: &mut String) {
        let _ = writeln!(out, "block = {}", self.name);
        let _ = writeln!(out, "runs = {}", self.runs.len());
        for (k, name) in Metrics::NAMES.iter().enumerate() {
            let _ = writeln!(out, "{name} = {}", Self::summary(&self.defined(k)));
        }
        for (label, v) in [("onset", &self.onset_errors_s), ("offset", &self.offset_errors_s)] {
            let _ = writeln!(out, "{label}_error_s = {}", Self::summary(v));
        }
        for (k, name) in Metrics::NAMES.iter().enumerate() {
            let vals: Vec<String> = self.runs.iter().map(|r| opt_to_string(r[k])).collect();
            let _ = writeln!(out, "{name}.runs = {}", vals.join(","));
        }
        for (label, v) in [("onset", &self.onset_errors_s), ("offset", &self.offset_errors_s)] {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{label}_error_s.values = {}", vals.join(","));
        }
    }
}

/// A report: blocks in first-seen order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub blocks: Vec<ReportBlock>,
}

fn parse_list(text: &str, key: &str) -> Result<Vec<Option<f64>>> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|s| match s.trim() {
            UNDEFINED => Ok(None),
            v => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse("report", format!("bad value {v:?} in `{key}`"))),
        })
        .collect()
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.blocks.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            b.render_into(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text, "report")?;
        let mut report = Report::default();
        for (k, v) in &kv.entries {
            if k == "block" {
                report.blocks.push(ReportBlock::new(v.clone()));
                continue;
            }
            let block = report
                .blocks
                .last_mut()
                .ok_or_else(|| Error::parse("report", format!("`{k}` before any block")))?;
            if let Some(name) = k.strip_suffix(".runs") {
                let idx = Metrics::NAMES
                    .iter()
                    .position(|n| *n == name)
                    .ok_or_else(|| Error::parse("report", format!("unknown metric `{name}`")))?;
                let vals = parse_list(v, k)?;
                if block.runs.is_empty() {
                    block.runs = vec![[None; 5]; vals.len()];
                }
                if block.runs.len() != vals.len() {
                    return Err(Error::parse("report", format!("`{k}` has the wrong run count")));
                }
                for (r, x) in block.runs.iter_mut().zip(vals) {
                    r[idx] = x;
                }
            } else if let Some(kind) = k.strip_suffix("_error_s.values") {
                let vals: Vec<f64> = parse_list(v, k)?.into_iter().flatten().collect();
                match kind {
                    "onset" => block.onset_errors_s = vals,
                    "offset" => block.offset_errors_s = vals,
                    _ => return Err(Error::parse("report", format!("unknown key `{k}`"))),
                }
            }
        }
        Ok(report)
    }

    /// Concatenate the runs of equally named blocks.
    pub fn merge(reports: &[Report]) -> Report {
        let mut order: Vec<String> = Vec::new();
        let mut by_name: BTreeMap<String, ReportBlock> = BTreeMap::new();
        for r in reports {
            for b in &r.blocks {
                let entry = by_name.entry(b.name.clone()).or_insert_with(|| {
                    order.push(b.name.clone());
                    ReportBlock::new(b.name.clone())
                });
                entry.runs.extend(b.runs.iter().copied());
                entry.onset_errors_s.extend(&b.onset_errors_s);
                entry.offset_errors_s.extend(&b.offset_errors_s);
            }
        }
        Report {
            blocks: order
                .into_iter()
                .map(|n| by_name.remove(&n).unwrap())
                .collect(),
        }
    }
}
