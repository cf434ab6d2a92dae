//! Speaker error rate, permutation-optimal WER, speaker-attributed WER and
//! speaker-counting confusion.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{SpeakerId, TokenId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("reference has no words")]
    NoReferenceWords,
    #[error("reference has no utterances")]
    NoReferenceUtterances,
    #[error("no results to score")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptUtterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<TokenId>,
}

impl TranscriptUtterance {
    pub fn new(speaker: impl Into<SpeakerId>, tokens: Vec<TokenId>) -> Self {
        Self { speaker: speaker.into(), tokens }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl ErrorCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Minimal Levenshtein alignment; ties prefer substitution, then deletion.
pub fn word_errors(hyp: &[TokenId], reference: &[TokenId]) -> ErrorCounts {
    let (n, m) = (reference.len(), hyp.len());
    // cell = (total, subs, ins, dels)
    let mut prev: Vec<(usize, usize, usize, usize)> = (0..=m).map(|j| (j, 0, j, 0)).collect();
    for i in 1..=n {
        let mut cur = vec![(i, 0, 0, i); m + 1];
        for j in 1..=m {
            let d = prev[j - 1];
            let same = reference[i - 1] == hyp[j - 1];
            let sub = if same { d } else { (d.0 + 1, d.1 + 1, d.2, d.3) };
            let del = {
                let u = prev[j];
                (u.0 + 1, u.1, u.2, u.3 + 1)
            };
            let ins = {
                let l = cur[j - 1];
                (l.0 + 1, l.1, l.2 + 1, l.3)
            };
            cur[j] = [sub, del, ins].into_iter().min_by_key(|c| c.0).unwrap();
        }
        prev = cur;
    }
    let c = prev[m];
    ErrorCounts { substitutions: c.1, insertions: c.2, deletions: c.3 }
}

/// Minimum-cost assignment of rows to distinct columns (rectangular allowed).
/// Returns each row's column, `None` for rows left over when there are
/// more rows than columns, and the total cost.
pub fn hungarian_min(cost: &[Vec<f64>]) -> (Vec<Option<usize>>, f64) {
    let rows = cost.len();
    if rows == 0 {
        return (vec![], 0.0);
    }
    let cols = cost[0].len();
    let n = rows.max(cols);
    let at = |i: usize, j: usize| {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            0.0
        }
    };
    // 1-based potentials formulation
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![None; rows];
    let mut total = 0.0;
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            assign[i - 1] = Some(j - 1);
            total += cost[i - 1][j - 1];
        }
    }
    (assign, total)
}

/// Square cost matrix over hypotheses and references, both padded with
/// empty utterances to the larger count.
fn padded_assignment<F>(h: usize, r: usize, cost: F) -> usize
where
    F: Fn(Option<usize>, Option<usize>) -> usize,
{
    let n = h.max(r);
    if n == 0 {
        return 0;
    }
    let m: Vec<Vec<f64>> =
        (0..n).map(|i| (0..n).map(|j| cost((i < h).then_some(i), (j < r).then_some(j)) as f64).collect()).collect();
    hungarian_min(&m).1.round() as usize
}

/// Word errors under the best utterance pairing, ignoring speaker labels.
pub fn wer_errors(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> usize {
    padded_assignment(hyp.len(), reference.len(), |i, j| {
        let h = i.map_or(&[][..], |i| &hyp[i].tokens);
        let r = j.map_or(&[][..], |j| &reference[j].tokens);
        word_errors(h, r).total()
    })
}

/// Misattributed, inserted and deleted utterances under the best pairing,
/// ignoring words.
pub fn ser_errors(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> usize {
    padded_assignment(hyp.len(), reference.len(), |i, j| match (i, j) {
        (Some(i), Some(j)) => usize::from(hyp[i].speaker != reference[j].speaker),
        (None, None) => 0,
        _ => 1,
    })
}

fn tokens_by_speaker(t: &[TranscriptUtterance]) -> BTreeMap<&SpeakerId, Vec<TokenId>> {
    let mut m: BTreeMap<&SpeakerId, Vec<TokenId>> = BTreeMap::new();
    for u in t {
        m.entry(&u.speaker).or_default().extend_from_slice(&u.tokens);
    }
    m
}

/// Per-speaker word errors without permutation; words attributed to a
/// speaker absent from the reference are all insertions.
pub fn sa_wer_errors(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> usize {
    let h = tokens_by_speaker(hyp);
    let r = tokens_by_speaker(reference);
    let mut errors = 0;
    for (spk, rt) in &r {
        errors += word_errors(h.get(spk).map_or(&[][..], |v| v), rt).total();
    }
    for (spk, ht) in &h {
        if !r.contains_key(spk) {
            errors += ht.len();
        }
    }
    errors
}

fn ref_words(reference: &[TranscriptUtterance]) -> usize {
    reference.iter().map(|u| u.tokens.len()).sum()
}

pub fn wer(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> Result<f64, MetricsError> {
    let n = ref_words(reference);
    if n == 0 {
        return Err(MetricsError::NoReferenceWords);
    }
    Ok(wer_errors(hyp, reference) as f64 / n as f64)
}

pub fn ser(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::NoReferenceUtterances);
    }
    Ok(ser_errors(hyp, reference) as f64 / reference.len() as f64)
}

pub fn sa_wer(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> Result<f64, MetricsError> {
    let n = ref_words(reference);
    if n == 0 {
        return Err(MetricsError::NoReferenceWords);
    }
    Ok(sa_wer_errors(hyp, reference) as f64 / n as f64)
}

/// Raw counts for one mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixtureScore {
    pub actual_speakers: usize,
    pub estimated_speakers: usize,
    pub ref_utterances: usize,
    pub ref_words: usize,
    pub ser_errors: usize,
    pub wer_errors: usize,
    pub sa_wer_errors: usize,
}

pub fn score_mixture(hyp: &[TranscriptUtterance], reference: &[TranscriptUtterance]) -> MixtureScore {
    let speakers = |t: &[TranscriptUtterance]| tokens_by_speaker(t).len();
    MixtureScore {
        actual_speakers: speakers(reference),
        estimated_speakers: speakers(hyp),
        ref_utterances: reference.len(),
        ref_words: ref_words(reference),
        ser_errors: ser_errors(hyp, reference),
        wer_errors: wer_errors(hyp, reference),
        sa_wer_errors: sa_wer_errors(hyp, reference),
    }
}

/// Estimated-count columns of the counting matrix.
pub const COUNT_COLUMNS: [&str; 5] = ["0", "1", "2", "3", ">=4"];

fn count_column(n: usize) -> usize {
    n.min(4)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountingRow {
    pub actual: usize,
    pub mixtures: usize,
    pub counts: [usize; 5],
    /// Row-normalized percentages over [`COUNT_COLUMNS`].
    pub percent: [f64; 5],
}

impl CountingRow {
    /// Share of mixtures whose count was estimated correctly.
    pub fn accuracy(&self) -> f64 {
        self.counts[count_column(self.actual)] as f64 / self.mixtures as f64
    }
}

/// Confusion of actual against estimated speaker counts, one row per actual count.
pub fn counting_accuracy(pairs: &[(usize, usize)]) -> Result<Vec<CountingRow>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut rows: BTreeMap<usize, [usize; 5]> = BTreeMap::new();
    for &(a, e) in pairs {
        rows.entry(a).or_default()[count_column(e)] += 1;
    }
    Ok(rows
        .into_iter()
        .map(|(actual, counts)| {
            let n: usize = counts.iter().sum();
            let percent = counts.map(|c| 100.0 * c as f64 / n as f64);
            CountingRow { actual, mixtures: n, counts, percent }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    /// Actual speaker count, or `None` for the total.
    pub speakers: Option<usize>,
    pub mixtures: usize,
    pub ser: f64,
    pub wer: f64,
    pub sa_wer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub buckets: Vec<BucketScore>,
    pub total: BucketScore,
    pub counting: Vec<CountingRow>,
}

fn bucket(speakers: Option<usize>, items: &[&MixtureScore]) -> BucketScore {
    let sum = |f: fn(&MixtureScore) -> usize| items.iter().map(|m| f(m)).sum::<usize>() as f64;
    let utts = sum(|m| m.ref_utterances);
    let words = sum(|m| m.ref_words);
    BucketScore {
        speakers,
        mixtures: items.len(),
        ser: sum(|m| m.ser_errors) / utts,
        wer: sum(|m| m.wer_errors) / words,
        sa_wer: sum(|m| m.sa_wer_errors) / words,
    }
}

impl ScoreReport {
    /// Corpus-level ratios by actual speaker count.
    pub fn from_scores(scores: &[MixtureScore]) -> Result<Self, MetricsError> {
        if scores.is_empty() {
            return Err(MetricsError::Empty);
        }
        if scores.iter().any(|s| s.ref_words == 0) {
            return Err(MetricsError::NoReferenceWords);
        }
        let mut by: BTreeMap<usize, Vec<&MixtureScore>> = BTreeMap::new();
        for s in scores {
            by.entry(s.actual_speakers).or_default().push(s);
        }
        let buckets = by.iter().map(|(&k, v)| bucket(Some(k), v)).collect();
        let all: Vec<&MixtureScore> = scores.iter().collect();
        let pairs: Vec<(usize, usize)> = scores.iter().map(|s| (s.actual_speakers, s.estimated_speakers)).collect();
        Ok(Self { buckets, total: bucket(None, &all), counting: counting_accuracy(&pairs)? })
    }

    /// Human-readable tables: error rates by bucket, then counting confusion.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<10} {:>8} {:>8} {:>8} {:>8}", "bucket", "mixtures", "SER%", "WER%", "SA-WER%");
        for b in self.buckets.iter().chain(std::iter::once(&self.total)) {
            let name = b.speakers.map_or("total".to_owned(), |k| format!("{k}-spk"));
            let _ = writeln!(
                s,
                "{:<10} {:>8} {:>8.2} {:>8.2} {:>8.2}",
                name,
                b.mixtures,
                100.0 * b.ser,
                100.0 * b.wer,
                100.0 * b.sa_wer
            );
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<10}", "actual");
        for c in COUNT_COLUMNS {
            let _ = write!(s, " {:>8}", format!("est {c}"));
        }
        let _ = writeln!(s);
        for r in &self.counting {
            let _ = write!(s, "{:<10}", format!("{}-spk", r.actual));
            for p in r.percent {
                let _ = write!(s, " {:>8.2}", p);
            }
            let _ = writeln!(s);
        }
        s
    }
}
