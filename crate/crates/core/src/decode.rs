//! Beam search over the joint model, recording the inventory attention at
//! every step, followed by per-segment speaker assignment and merging.

use std::cmp::Ordering;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureSequence, SpeakerId, TokenId, EOS};
use crate::metrics::hungarian_min;
use crate::model::{DecoderState, Graph, ModelError, ModelParams, SpeakerInventory};
use crate::sot::{split_segments_lenient, SotError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("beam width must be >= 1")]
    ZeroWidth,
    #[error("max steps must be >= 1")]
    ZeroSteps,
    #[error("hypothesis is not finished")]
    Unfinished,
    #[error("beta has {rows} rows for {tokens} tokens")]
    BetaShape { rows: usize, tokens: usize },
    #[error(transparent)]
    Segments(#[from] SotError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("hypothesis dump line {line}: {msg}")]
    Dump { line: usize, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BeamConfig {
    pub width: usize,
    /// `None` means twice the input frame count plus 10.
    pub max_steps: Option<usize>,
    /// Finished hypotheses are ranked by `score / len^alpha` when set.
    pub length_norm: Option<f64>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { width: 4, max_steps: None, length_norm: None }
    }
}

impl BeamConfig {
    pub fn greedy() -> Self {
        Self { width: 1, ..Default::default() }
    }

    pub fn max_steps_for(&self, frames: usize) -> usize {
        self.max_steps.unwrap_or(2 * frames + 10)
    }

    fn validate(&self, frames: usize) -> Result<(), DecodeError> {
        if self.width == 0 {
            return Err(DecodeError::ZeroWidth);
        }
        if self.max_steps_for(frames) == 0 {
            return Err(DecodeError::ZeroSteps);
        }
        Ok(())
    }

    fn rank(&self, h: &Hypothesis) -> f64 {
        match self.length_norm {
            Some(a) if !h.tokens.is_empty() => h.score / (h.tokens.len() as f64).powf(a),
            _ => h.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    /// Sum of the chosen tokens' log-probabilities.
    pub score: f64,
    /// One inventory-attention row per token.
    pub beta: Vec<Vec<f64>>,
    pub finished: bool,
    /// Set when eos was forced at the step limit.
    pub truncated: bool,
}

struct Live {
    hyp: Hypothesis,
    state: DecoderState,
}

fn cmp_desc(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Indices of the `n` largest values, ties to the lower index.
fn top_n(values: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

pub fn beam_search(
    params: &ModelParams,
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    cfg: &BeamConfig,
) -> Result<Hypothesis, DecodeError> {
    cfg.validate(x.frames())?;
    let max_steps = cfg.max_steps_for(x.frames());
    let mut g = Graph::new(params, false);
    let enc = g.encode(x)?;
    let inv = g.inventory(inventory)?;
    let start = g.initial_state(&enc)?;
    let sos = params.config().sos_row();

    let empty = Hypothesis { tokens: vec![], score: 0.0, beta: vec![], finished: false, truncated: false };
    let mut alive = vec![Live { hyp: empty, state: start }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_steps {
        let last = step + 1 == max_steps;
        let mut cands: Vec<(f64, usize, TokenId, Vec<f64>, DecoderState)> = Vec::new();
        let mut tokens_of = Vec::new();
        for (i, live) in alive.iter().enumerate() {
            let prev = live.hyp.tokens.last().copied().unwrap_or(sos);
            let out = g.decoder_step(prev, &live.state, &enc, &inv)?;
            let lp = g.value(out.log_probs).to_vec();
            let beta = g.value(out.speaker.beta).to_vec();
            let choices = if last { vec![EOS] } else { top_n(&lp, cfg.width) };
            for y in choices {
                cands.push((live.hyp.score + lp[y], i, y, beta.clone(), out.state.clone()));
                let mut t = live.hyp.tokens.clone();
                t.push(y);
                tokens_of.push(t);
            }
        }
        let mut order: Vec<usize> = (0..cands.len()).collect();
        order.sort_by(|&a, &b| cmp_desc((cands[a].0, &tokens_of[a]), (cands[b].0, &tokens_of[b])));
        if !last {
            order.truncate(cfg.width);
        }

        let mut next = Vec::new();
        for j in order {
            let (score, i, y, beta, state) = cands[j].clone();
            let mut hyp = alive[i].hyp.clone();
            hyp.tokens.push(y);
            hyp.beta.push(beta);
            hyp.score = score;
            if y == EOS {
                hyp.finished = true;
                hyp.truncated = last;
                finished.push(hyp);
            } else {
                next.push(Live { hyp, state });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
        // Scores only decrease, so without length normalization no live
        // hypothesis can overtake the best finished one.
        if cfg.length_norm.is_none() {
            let best_done = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            let best_live = alive.iter().map(|l| l.hyp.score).fold(f64::NEG_INFINITY, f64::max);
            if finished.len() >= cfg.width && best_done >= best_live {
                break;
            }
        }
    }
    finished
        .into_iter()
        .min_by(|a, b| cmp_desc((cfg.rank(a), &a.tokens), (cfg.rank(b), &b.tokens)))
        .ok_or(DecodeError::Unfinished)
}

/// Argmax decoding, eos forced at the step limit.
pub fn greedy(
    params: &ModelParams,
    x: &FeatureSequence,
    inventory: &SpeakerInventory,
    max_steps: Option<usize>,
) -> Result<Hypothesis, DecodeError> {
    let cfg = BeamConfig { width: 1, max_steps, length_norm: None };
    cfg.validate(x.frames())?;
    let limit = cfg.max_steps_for(x.frames());
    let mut g = Graph::new(params, false);
    let enc = g.encode(x)?;
    let inv = g.inventory(inventory)?;
    let mut state = g.initial_state(&enc)?;
    let mut prev = params.config().sos_row();
    let mut hyp = Hypothesis { tokens: vec![], score: 0.0, beta: vec![], finished: true, truncated: false };
    for step in 0..limit {
        let out = g.decoder_step(prev, &state, &enc, &inv)?;
        let lp = g.value(out.log_probs);
        let y = if step + 1 == limit { EOS } else { top_n(lp, 1)[0] };
        hyp.score += lp[y];
        hyp.beta.push(g.value(out.speaker.beta).to_vec());
        hyp.tokens.push(y);
        if y == EOS {
            hyp.truncated = step + 1 == limit;
            break;
        }
        state = out.state;
        prev = y;
    }
    Ok(hyp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedUtterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<TokenId>,
    pub mean_beta: Vec<f64>,
    /// Number of beta rows averaged into `mean_beta`.
    pub rows: usize,
}

/// Per-segment speaker choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignMode {
    /// Argmax of the mean weights; repeated speakers are merged afterwards.
    #[default]
    Merge,
    /// Each inventory entry is used at most once, maximizing total mean weight.
    Exclusive,
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Splits at delimiters and averages beta over each segment including its
/// trailing delimiter row.
pub fn assign_speakers(
    hyp: &Hypothesis,
    inventory: &SpeakerInventory,
    mode: AssignMode,
) -> Result<Vec<AttributedUtterance>, DecodeError> {
    if hyp.tokens.last() != Some(&EOS) {
        return Err(DecodeError::Unfinished);
    }
    if hyp.beta.len() != hyp.tokens.len() {
        return Err(DecodeError::BetaShape { rows: hyp.beta.len(), tokens: hyp.tokens.len() });
    }
    let k = inventory.len();
    if let Some(bad) = hyp.beta.iter().find(|r| r.len() != k) {
        return Err(DecodeError::BetaShape { rows: bad.len(), tokens: k });
    }
    let segments = split_segments_lenient(&hyp.tokens)?;
    let means: Vec<Vec<f64>> = segments
        .iter()
        .map(|s| {
            let mut m = vec![0.0; k];
            for row in &hyp.beta[s.start..=s.delimiter] {
                for (a, b) in m.iter_mut().zip(row) {
                    *a += b;
                }
            }
            let n = (s.delimiter - s.start + 1) as f64;
            m.iter_mut().for_each(|a| *a /= n);
            m
        })
        .collect();
    let mut choice: Vec<usize> = means.iter().map(|m| argmax(m)).collect();
    if mode == AssignMode::Exclusive && !means.is_empty() {
        let cost: Vec<Vec<f64>> = means.iter().map(|m| m.iter().map(|b| -b).collect()).collect();
        let (assign, _) = hungarian_min(&cost);
        for (c, a) in choice.iter_mut().zip(assign) {
            if let Some(a) = a {
                *c = a;
            }
        }
    }
    Ok(segments
        .into_iter()
        .zip(means)
        .zip(choice)
        .map(|((s, m), c)| AttributedUtterance {
            speaker: inventory.id(c).clone(),
            rows: s.delimiter - s.start + 1,
            tokens: s.tokens,
            mean_beta: m,
        })
        .collect())
}

/// Concatenates utterances of the same speaker, in first-appearance order.
pub fn merge_same_speaker(utts: Vec<AttributedUtterance>) -> Vec<AttributedUtterance> {
    let mut out: Vec<AttributedUtterance> = Vec::new();
    for u in utts {
        match out.iter_mut().find(|o| o.speaker == u.speaker) {
            Some(o) => {
                let total = (o.rows + u.rows) as f64;
                for (a, b) in o.mean_beta.iter_mut().zip(&u.mean_beta) {
                    *a = (*a * o.rows as f64 + b * u.rows as f64) / total;
                }
                o.rows += u.rows;
                o.tokens.extend(u.tokens);
            }
            None => out.push(u),
        }
    }
    out
}

/// Assignment followed by merging; the final speaker-attributed transcript.
pub fn attribute(
    hyp: &Hypothesis,
    inventory: &SpeakerInventory,
    mode: AssignMode,
) -> Result<Vec<AttributedUtterance>, DecodeError> {
    Ok(merge_same_speaker(assign_speakers(hyp, inventory, mode)?))
}

/// One mixture's decoding result as stored in the hypothesis dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpRecord {
    pub mixture: String,
    pub tokens: Vec<TokenId>,
    pub score: f64,
    pub truncated: bool,
    pub utterances: Vec<DumpUtterance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DumpUtterance {
    pub speaker: SpeakerId,
    pub tokens: Vec<TokenId>,
    pub mean_beta: Vec<f64>,
}

impl DumpRecord {
    pub fn new(mixture: impl Into<String>, hyp: &Hypothesis, utts: &[AttributedUtterance]) -> Self {
        Self {
            mixture: mixture.into(),
            tokens: hyp.tokens.clone(),
            score: hyp.score,
            truncated: hyp.truncated,
            utterances: utts
                .iter()
                .map(|u| DumpUtterance {
                    speaker: u.speaker.clone(),
                    tokens: u.tokens.clone(),
                    mean_beta: u.mean_beta.clone(),
                })
                .collect(),
        }
    }
}

pub fn write_dump(mut w: impl Write, records: &[DumpRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_dump(r: impl BufRead) -> Result<Vec<DumpRecord>, DecodeError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| DecodeError::Dump { line: i + 1, msg: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DecodeError::Dump { line: i + 1, msg: e.to_string() })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::SC;
    use crate::testutil::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn inv(k: usize) -> SpeakerInventory {
        random_inventory(k, 3, 0)
    }

    fn hyp(tokens: Vec<TokenId>, beta: Vec<Vec<f64>>) -> Hypothesis {
        Hypothesis { tokens, score: 0.0, beta, finished: true, truncated: false }
    }

    #[test]
    fn width_one_equals_greedy() {
        for seed in 0..5 {
            let p = ModelParams::init(&tiny_config(), seed).unwrap();
            let x = random_features(7, 2, seed);
            let i = random_inventory(3, 3, seed);
            let b = beam_search(&p, &x, &i, &BeamConfig { width: 1, max_steps: Some(12), length_norm: None }).unwrap();
            let g = greedy(&p, &x, &i, Some(12)).unwrap();
            assert_eq!(b.tokens, g.tokens);
            assert!((b.score - g.score).abs() < 1e-12);
            assert_eq!(b.beta.len(), b.tokens.len());
        }
    }

    #[test]
    fn forced_eos_first_gives_empty_transcript() {
        let cfg = crate::model::ModelConfig { vocab_size: 3, ..tiny_config() };
        let mut p = ModelParams::init(&cfg, 1).unwrap();
        p.set("decoder_out.b_out", &[50.0, 0.0, 0.0]).unwrap();
        let i = inv(2);
        let h = beam_search(&p, &random_features(5, 2, 1), &i, &BeamConfig::default()).unwrap();
        assert_eq!(h.tokens, vec![EOS]);
        assert!(attribute(&h, &i, AssignMode::Merge).unwrap().is_empty());
    }

    #[test]
    fn step_limit_truncates() {
        let cfg = crate::model::ModelConfig { vocab_size: 3, ..tiny_config() };
        let mut p = ModelParams::init(&cfg, 1).unwrap();
        p.set("decoder_out.b_out", &[-50.0, 0.0, 10.0]).unwrap();
        let h = beam_search(
            &p,
            &random_features(5, 2, 1),
            &inv(2),
            &BeamConfig { width: 2, max_steps: Some(4), length_norm: None },
        )
        .unwrap();
        assert!(h.truncated);
        assert_eq!(h.tokens.len(), 4);
        assert_eq!(h.beta.len(), 4);
        assert_eq!(*h.tokens.last().unwrap(), EOS);
    }

    #[test]
    fn constant_one_hot_beta_labels_every_segment() {
        let i = inv(3);
        let row = vec![0.0, 1.0, 0.0];
        let h = hyp(vec![2, SC, 3, 4, EOS], vec![row; 5]);
        let u = assign_speakers(&h, &i, AssignMode::Merge).unwrap();
        assert_eq!(u.len(), 2);
        assert!(u.iter().all(|u| &u.speaker == i.id(1)));
    }

    #[test]
    fn hand_averaged_example() {
        let i = inv(2);
        let h = hyp(vec![2, 3, EOS], vec![vec![0.6, 0.4], vec![0.2, 0.8], vec![0.5, 0.5]]);
        let u = assign_speakers(&h, &i, AssignMode::Merge).unwrap();
        assert!((u[0].mean_beta[0] - 0.4333).abs() < 1e-4);
        assert!((u[0].mean_beta[1] - 0.5667).abs() < 1e-4);
        assert_eq!(&u[0].speaker, i.id(1));
    }

    #[test]
    fn tie_goes_to_lowest_index() {
        let i = inv(3);
        let h = hyp(vec![2, EOS], vec![vec![0.2, 0.4, 0.4]; 2]);
        assert_eq!(&assign_speakers(&h, &i, AssignMode::Merge).unwrap()[0].speaker, i.id(1));
    }

    fn brute_force(h: &Hypothesis) -> Vec<(Vec<TokenId>, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for (p, &t) in h.tokens.iter().enumerate() {
            if t == SC || t == EOS {
                if p > start {
                    let k = h.beta[0].len();
                    let mean: Vec<f64> = (0..k)
                        .map(|c| (start..=p).map(|r| h.beta[r][c]).sum::<f64>() / (p - start + 1) as f64)
                        .collect();
                    let best = (0..k).fold(0, |b, c| if mean[c] > mean[b] { c } else { b });
                    out.push((h.tokens[start..p].to_vec(), best));
                }
                start = p + 1;
            }
        }
        out
    }

    fn random_hyp(rng: &mut ChaCha8Rng, k: usize) -> Hypothesis {
        let segs = rng.random_range(1..4);
        let mut tokens = Vec::new();
        for s in 0..segs {
            for _ in 0..rng.random_range(1..4) {
                tokens.push(rng.random_range(2..6));
            }
            tokens.push(if s + 1 == segs { EOS } else { SC });
        }
        let beta = tokens
            .iter()
            .map(|_| {
                let r: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let z: f64 = r.iter().sum();
                r.into_iter().map(|v| v / z).collect()
            })
            .collect();
        hyp(tokens, beta)
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let i = inv(3);
        for _ in 0..200 {
            let h = random_hyp(&mut rng, 3);
            let got = assign_speakers(&h, &i, AssignMode::Merge).unwrap();
            let want = brute_force(&h);
            assert_eq!(got.len(), want.len());
            for (g, (t, k)) in got.iter().zip(want) {
                assert_eq!(g.tokens, t);
                assert_eq!(&g.speaker, i.id(k));
            }
        }
    }

    #[test]
    fn assignment_follows_inventory_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let i = inv(3);
        let order = [1, 2, 0];
        let pi = i.permuted(&order);
        for _ in 0..50 {
            let h = random_hyp(&mut rng, 3);
            let mut hp = h.clone();
            for row in &mut hp.beta {
                *row = order.iter().map(|&o| row[o]).collect();
            }
            let a = assign_speakers(&h, &i, AssignMode::Merge).unwrap();
            let b = assign_speakers(&hp, &pi, AssignMode::Merge).unwrap();
            assert_eq!(
                a.iter().map(|u| &u.speaker).collect::<Vec<_>>(),
                b.iter().map(|u| &u.speaker).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn exclusive_mode_uses_distinct_speakers() {
        let i = inv(3);
        let h = hyp(
            vec![2, SC, 3, EOS],
            vec![vec![0.6, 0.3, 0.1], vec![0.6, 0.3, 0.1], vec![0.5, 0.4, 0.1], vec![0.5, 0.4, 0.1]],
        );
        let m = assign_speakers(&h, &i, AssignMode::Merge).unwrap();
        assert_eq!(m[0].speaker, m[1].speaker);
        let e = assign_speakers(&h, &i, AssignMode::Exclusive).unwrap();
        assert_ne!(e[0].speaker, e[1].speaker);
    }

    fn au(spk: &str, tokens: &[TokenId]) -> AttributedUtterance {
        AttributedUtterance {
            speaker: spk.into(),
            tokens: tokens.to_vec(),
            mean_beta: vec![1.0],
            rows: tokens.len() + 1,
        }
    }

    #[test]
    fn merge_examples() {
        let distinct = vec![au("a", &[2]), au("b", &[3])];
        assert_eq!(merge_same_speaker(distinct.clone()), distinct);
        let m = merge_same_speaker(vec![au("s1", &[2]), au("s2", &[3]), au("s1", &[4])]);
        assert_eq!(m.len(), 2);
        assert_eq!(m[0].tokens, vec![2, 4]);
        assert_eq!(m[1].tokens, vec![3]);
        let all = merge_same_speaker(vec![au("a", &[2]), au("a", &[3]), au("a", &[4])]);
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].tokens, vec![2, 3, 4]);
    }

    #[test]
    fn speaker_count_bounded_by_inventory_and_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..4 {
            let i = random_inventory(k, 3, k as u64);
            for _ in 0..50 {
                let h = random_hyp(&mut rng, k);
                let segs = split_segments_lenient(&h.tokens).unwrap().len();
                let n = attribute(&h, &i, AssignMode::Merge).unwrap().len();
                assert!(n <= k.min(segs));
            }
        }
    }

    #[test]
    fn dump_round_trip() {
        let i = inv(2);
        let h = hyp(vec![2, SC, 3, EOS], vec![vec![0.9, 0.1], vec![0.9, 0.1], vec![0.2, 0.8], vec![0.2, 0.8]]);
        let utts = attribute(&h, &i, AssignMode::Merge).unwrap();
        let recs = vec![DumpRecord::new("m0", &h, &utts)];
        let mut buf = Vec::new();
        write_dump(&mut buf, &recs).unwrap();
        assert_eq!(read_dump(buf.as_slice()).unwrap(), recs);
    }
}
