//! Serialized output training targets: FIFO concatenation of utterances with
//! speaker-change delimiters, and the inverse segmentation.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{is_delimiter, SpeakerId, TokenId, EOS, SC};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SotError {
    #[error("no utterances")]
    Empty,
    #[error("utterance for {0} has no tokens")]
    EmptyUtterance(SpeakerId),
    #[error("utterance for {speaker} has start {start} >= end {end}")]
    BadSpan { speaker: SpeakerId, start: usize, end: usize },
    #[error("utterance for {0} contains a delimiter token")]
    DelimiterInside(SpeakerId),
    #[error("speaker {0} appears in more than one utterance")]
    DuplicateSpeaker(SpeakerId),
    #[error("token sequence does not end with eos")]
    MissingEos,
    #[error("eos at position {0} is not final")]
    EarlyEos(usize),
    #[error("empty segment ending at position {0}")]
    EmptySegment(usize),
    #[error("token and speaker sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("speaker label of delimiter at {0} differs from preceding token")]
    DelimiterSpeaker(usize),
    #[error("speaker changes inside a segment at position {0}")]
    SegmentSpeaker(usize),
    #[error("reference manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<TokenId>,
    pub start: usize,
    pub end: usize,
}

impl Utterance {
    pub fn new(
        speaker: impl Into<SpeakerId>,
        tokens: Vec<TokenId>,
        start: usize,
        end: usize,
    ) -> Result<Self, SotError> {
        let u = Self { speaker: speaker.into(), tokens, start, end };
        u.validate()?;
        Ok(u)
    }

    pub fn validate(&self) -> Result<(), SotError> {
        if self.tokens.is_empty() {
            return Err(SotError::EmptyUtterance(self.speaker.clone()));
        }
        if self.start >= self.end {
            return Err(SotError::BadSpan { speaker: self.speaker.clone(), start: self.start, end: self.end });
        }
        if self.tokens.iter().any(|&t| is_delimiter(t)) {
            return Err(SotError::DelimiterInside(self.speaker.clone()));
        }
        Ok(())
    }
}

/// Token stream with one speaker label per position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializedTarget {
    pub tokens: Vec<TokenId>,
    pub speakers: Vec<SpeakerId>,
}

impl SerializedTarget {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of utterances, i.e. delimiters in the stream.
    pub fn utterance_count(&self) -> usize {
        self.tokens.iter().filter(|&&t| is_delimiter(t)).count()
    }

    pub fn validate(&self) -> Result<(), SotError> {
        if self.tokens.len() != self.speakers.len() {
            return Err(SotError::LengthMismatch(self.tokens.len(), self.speakers.len()));
        }
        let segments = split_segments(&self.tokens)?;
        for seg in &segments {
            let spk = &self.speakers[seg.start];
            for p in seg.start..seg.delimiter {
                if &self.speakers[p] != spk {
                    return Err(SotError::SegmentSpeaker(p));
                }
            }
            if self.speakers[seg.delimiter] != self.speakers[seg.delimiter - 1] {
                return Err(SotError::DelimiterSpeaker(seg.delimiter));
            }
        }
        Ok(())
    }

    /// Per-segment (speaker, tokens) pairs in stream order.
    pub fn utterances(&self) -> Result<Vec<(SpeakerId, Vec<TokenId>)>, SotError> {
        Ok(split_segments(&self.tokens)?.into_iter().map(|s| (self.speakers[s.start].clone(), s.tokens)).collect())
    }
}

/// Orders utterances by start time, ties by speaker id.
pub fn fifo_order(utterances: &[Utterance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.sort_by(|&a, &b| {
        let (ua, ub) = (&utterances[a], &utterances[b]);
        ua.start.cmp(&ub.start).then_with(|| ua.speaker.cmp(&ub.speaker))
    });
    order
}

pub fn serialize_fifo(utterances: &[Utterance]) -> Result<SerializedTarget, SotError> {
    if utterances.is_empty() {
        return Err(SotError::Empty);
    }
    let mut seen = HashSet::new();
    for u in utterances {
        u.validate()?;
        if !seen.insert(&u.speaker) {
            return Err(SotError::DuplicateSpeaker(u.speaker.clone()));
        }
    }
    let order = fifo_order(utterances);
    let total: usize = utterances.iter().map(|u| u.tokens.len() + 1).sum();
    let mut tokens = Vec::with_capacity(total);
    let mut speakers = Vec::with_capacity(total);
    for (i, &j) in order.iter().enumerate() {
        let u = &utterances[j];
        tokens.extend_from_slice(&u.tokens);
        tokens.push(if i + 1 == order.len() { EOS } else { SC });
        speakers.extend(std::iter::repeat_n(u.speaker.clone(), u.tokens.len() + 1));
    }
    Ok(SerializedTarget { tokens, speakers })
}

/// A delimiter-free run of tokens and where it sits in the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub tokens: Vec<TokenId>,
    /// Position of the first token.
    pub start: usize,
    /// Position of the trailing sc or eos.
    pub delimiter: usize,
}

impl Segment {
    /// Stream positions covered including the trailing delimiter.
    pub fn span(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.delimiter
    }
}

/// Strict segmentation: rejects adjacent delimiters and misplaced eos.
pub fn split_segments(tokens: &[TokenId]) -> Result<Vec<Segment>, SotError> {
    split(tokens, false)
}

/// Segmentation for decoder output: empty segments are dropped with a warning.
pub fn split_segments_lenient(tokens: &[TokenId]) -> Result<Vec<Segment>, SotError> {
    split(tokens, true)
}

fn split(tokens: &[TokenId], lenient: bool) -> Result<Vec<Segment>, SotError> {
    match tokens.iter().position(|&t| t == EOS) {
        None => return Err(SotError::MissingEos),
        Some(p) if p + 1 != tokens.len() => return Err(SotError::EarlyEos(p)),
        _ => {}
    }
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &t) in tokens.iter().enumerate() {
        if !is_delimiter(t) {
            continue;
        }
        if i == start {
            if !lenient {
                return Err(SotError::EmptySegment(i));
            }
            log::warn!("dropping empty segment at position {i}");
        } else {
            out.push(Segment { tokens: tokens[start..i].to_vec(), start, delimiter: i });
        }
        start = i + 1;
    }
    Ok(out)
}

/// One line of the reference manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceRecord {
    pub mixture: String,
    pub utterance: Utterance,
}

/// Writes `mixture speaker start end tok tok ...` lines.
pub fn write_references(mut w: impl Write, records: &[ReferenceRecord]) -> std::io::Result<()> {
    for r in records {
        let u = &r.utterance;
        write!(w, "{} {} {} {}", r.mixture, u.speaker, u.start, u.end)?;
        for t in &u.tokens {
            write!(w, " {t}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_references(r: impl BufRead) -> Result<Vec<ReferenceRecord>, SotError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| SotError::Manifest { line: n, msg: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| SotError::Manifest { line: n, msg: msg.to_owned() };
        let mut f = line.split_whitespace();
        let mixture = f.next().ok_or_else(|| bad("missing mixture id"))?.to_owned();
        let speaker = f.next().ok_or_else(|| bad("missing speaker id"))?;
        let start = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad start frame"))?;
        let end = f.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad end frame"))?;
        let tokens = f.map(|s| s.parse::<TokenId>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("bad token"))?;
        let utterance = Utterance::new(speaker, tokens, start, end).map_err(|e| bad(&e.to_string()))?;
        out.push(ReferenceRecord { mixture, utterance });
    }
    Ok(out)
}
