//! Synthetic speakers, feature rendering, mixing under the overlap and
//! start-gap constraints, and profile inventories.

mod dataset;

pub use dataset::{
    generate_dataset, load_split, write_dataset, Dataset, InventoryRecord, ManifestRecord, Mixture, Simulator,
    SplitConfig,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, FeatureSequence, SpeakerId, TokenId, FIRST_WORD};
use crate::model::{ModelError, SpeakerInventory};
use crate::sot::SotError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("token {0} has no rendering pattern")]
    UnknownToken(TokenId),
    #[error("nothing to render")]
    EmptyTokens,
    #[error("mixture constraint violated: {0}")]
    Constraint(String),
    #[error("inventory size {k} is smaller than speaker count {s}")]
    InventoryTooSmall { k: usize, s: usize },
    #[error("distractor pool exhausted: need {need}, have {have}")]
    PoolExhausted { need: usize, have: usize },
    #[error("could not place {0} utterances under the constraints")]
    Placement(usize),
    #[error("dataset: {0}")]
    Data(String),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sot(#[from] SotError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which mixture constraints apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// Start times at least `min_start_gap` apart, and every utterance overlaps another.
    Train,
    /// Overlap only; utterances may start together.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub feature_dim: usize,
    /// Including the two delimiter tokens.
    pub vocab_size: usize,
    pub frames_per_token: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    /// Per-dimension standard deviation of token patterns.
    pub pattern_scale: f64,
    /// Norm of the additive speaker signature.
    pub signature_scale: f64,
    pub min_signature_distance: f64,
    /// Per-speaker token gain is drawn uniformly from this range.
    pub gain_range: [f64; 2],
    /// Per-frame noise.
    pub noise_std: f64,
    /// Per-utterance channel offset, constant over the utterance's frames.
    pub session_std: f64,
    /// Speakers appearing in mixtures.
    pub speakers: usize,
    /// Further speakers that only ever appear as distractors.
    pub extra_distractors: usize,
    pub min_start_gap: usize,
    /// Delays are drawn from `0..=cap * first utterance length`.
    pub delay_cap: f64,
    /// Token script rendered for every profile utterance; empty means each word once.
    pub enrollment_script: Vec<TokenId>,
    pub max_placement_attempts: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            vocab_size: 14,
            frames_per_token: 3,
            tokens_min: 2,
            tokens_max: 5,
            pattern_scale: 1.0,
            signature_scale: 1.5,
            min_signature_distance: 0.5,
            gain_range: [0.8, 1.2],
            noise_std: 0.1,
            session_std: 0.2,
            speakers: 10,
            extra_distractors: 6,
            min_start_gap: 5,
            delay_cap: 1.5,
            enrollment_script: Vec::new(),
            max_placement_attempts: 10_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_owned()));
        if self.feature_dim == 0 || self.frames_per_token == 0 {
            return bad("feature_dim and frames_per_token must be >= 1");
        }
        if self.vocab_size < FIRST_WORD + 1 {
            return bad("vocab_size must leave at least one word token");
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return bad("need 1 <= tokens_min <= tokens_max");
        }
        if self.speakers == 0 {
            return bad("speakers must be >= 1");
        }
        for v in
            [self.pattern_scale, self.signature_scale, self.noise_std, self.session_std, self.min_signature_distance]
        {
            if !v.is_finite() || v < 0.0 {
                return bad("scales and noise levels must be finite and non-negative");
            }
        }
        if !(self.gain_range[0] > 0.0 && self.gain_range[0] <= self.gain_range[1]) {
            return bad("gain_range must be positive and ordered");
        }
        if self.delay_cap.is_nan() || self.delay_cap < 0.0 {
            return bad("delay_cap must be >= 0");
        }
        if self.min_signature_distance >= 2.0 {
            return bad("min_signature_distance must be < 2 for unit vectors");
        }
        if let Some(&t) = self.enrollment_script.iter().find(|&&t| t < FIRST_WORD || t >= self.vocab_size) {
            return Err(SimError::UnknownToken(t));
        }
        Ok(())
    }

    pub fn words(&self) -> std::ops::Range<TokenId> {
        FIRST_WORD..self.vocab_size
    }

    pub fn script(&self) -> Vec<TokenId> {
        if self.enrollment_script.is_empty() {
            self.words().collect()
        } else {
            self.enrollment_script.clone()
        }
    }
}

/// Deterministic child seed from a root seed and a path of tags.
pub fn sub_seed(seed: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(seed), |acc, &t| mix(acc ^ mix(t)))
}

pub(crate) fn rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, path))
}

fn sample_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian(rng: &mut impl Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * sample_normal(rng)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeaker {
    pub id: SpeakerId,
    /// Unit norm.
    pub signature: Vec<f64>,
    pub gain: f64,
}

/// Speakers plus the shared token patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerBank {
    pub speakers: Vec<SyntheticSpeaker>,
    /// Indexed by token id; delimiters have no pattern.
    patterns: Vec<Option<Vec<f64>>>,
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

impl SpeakerBank {
    /// Signatures drawn uniformly on the unit sphere with rejection below the
    /// minimum pairwise distance. Speaker `i` is the same for any bank size.
    pub fn generate(cfg: &SimConfig, seed: u64) -> Result<Self, SimError> {
        cfg.validate()?;
        let f = cfg.feature_dim;
        let total = cfg.speakers + cfg.extra_distractors;
        let mut sig_rng = rng(seed, &[1]);
        let mut speakers: Vec<SyntheticSpeaker> = Vec::with_capacity(total);
        let mut attempts = 0;
        while speakers.len() < total {
            attempts += 1;
            if attempts > 1_000_000 {
                return Err(SimError::Config(format!(
                    "cannot place {total} signatures at distance {}",
                    cfg.min_signature_distance
                )));
            }
            let v = gaussian(&mut sig_rng, f, 1.0);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-12 {
                continue;
            }
            let sig: Vec<f64> = v.iter().map(|x| x / norm).collect();
            if speakers.iter().any(|s| distance(&s.signature, &sig) < cfg.min_signature_distance) {
                continue;
            }
            let i = speakers.len();
            let gain = rng(seed, &[2, i as u64]).random_range(cfg.gain_range[0]..=cfg.gain_range[1]);
            let id = if i < cfg.speakers { format!("spk{i:03}") } else { format!("dis{:03}", i - cfg.speakers) };
            speakers.push(SyntheticSpeaker { id: SpeakerId::new(id), signature: sig, gain });
        }

        let mut pat_rng = rng(seed, &[3]);
        let words = cfg.words();
        let raw: Vec<Vec<f64>> = words.clone().map(|_| gaussian(&mut pat_rng, f, cfg.pattern_scale)).collect();
        let mut mean = vec![0.0; f];
        for p in &raw {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / raw.len() as f64;
            }
        }
        let mut patterns = vec![None; cfg.vocab_size];
        for (t, p) in words.zip(raw) {
            patterns[t] =
                Some(if cfg.words().len() > 1 { p.iter().zip(&mean).map(|(v, m)| v - m).collect() } else { p });
        }
        Ok(Self { speakers, patterns })
    }

    pub fn speaker(&self, id: &SpeakerId) -> Option<&SyntheticSpeaker> {
        self.speakers.iter().find(|s| &s.id == id)
    }

    pub fn pattern(&self, t: TokenId) -> Result<&[f64], SimError> {
        self.patterns.get(t).and_then(|p| p.as_deref()).ok_or(SimError::UnknownToken(t))
    }
}

/// Frames of `tokens` spoken by `speaker`: each token's pattern scaled by
/// the speaker gain, plus the scaled signature, a per-utterance offset and
/// per-frame noise drawn from `seed`.
pub fn render_utterance(
    tokens: &[TokenId],
    speaker: &SyntheticSpeaker,
    bank: &SpeakerBank,
    cfg: &SimConfig,
    seed: u64,
) -> Result<FeatureSequence, SimError> {
    if tokens.is_empty() {
        return Err(SimError::EmptyTokens);
    }
    let f = cfg.feature_dim;
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let session = gaussian(&mut r, f, cfg.session_std);
    let mut out = FeatureSequence::zeros(tokens.len() * cfg.frames_per_token, f);
    for (i, &t) in tokens.iter().enumerate() {
        let p = bank.pattern(t)?;
        for k in 0..cfg.frames_per_token {
            let frame = out.frame_mut(i * cfg.frames_per_token + k);
            for d in 0..f {
                let noise = if cfg.noise_std > 0.0 { cfg.noise_std * sample_normal(&mut r) } else { 0.0 };
                frame[d] = speaker.gain * p[d] + cfg.signature_scale * speaker.signature[d] + session[d] + noise;
            }
        }
    }
    Ok(out)
}

/// Additive superposition at unchanged scale.
pub fn mix(parts: &[FeatureSequence], delays: &[usize]) -> Result<FeatureSequence, SimError> {
    if parts.is_empty() || parts.len() != delays.len() {
        return Err(SimError::Constraint("need one delay per utterance".into()));
    }
    let dim = parts[0].dim();
    if parts.iter().any(|p| p.dim() != dim) {
        return Err(SimError::Constraint("feature widths differ".into()));
    }
    let len = parts.iter().zip(delays).map(|(p, d)| p.frames() + d).max().unwrap_or(0);
    let mut out = FeatureSequence::zeros(len, dim);
    for (p, &d) in parts.iter().zip(delays) {
        for t in 0..p.frames() {
            for (o, v) in out.frame_mut(d + t).iter_mut().zip(p.frame(t)) {
                *o += v;
            }
        }
    }
    Ok(out)
}

/// Checks the mixture constraints on `[start, start + len)` intervals.
pub fn validate_mixture(
    starts: &[usize],
    lengths: &[usize],
    mode: MixMode,
    min_start_gap: usize,
) -> Result<(), SimError> {
    if starts.len() != lengths.len() || starts.is_empty() {
        return Err(SimError::Constraint("need one start per utterance".into()));
    }
    let n = starts.len();
    if mode == MixMode::Train {
        for i in 0..n {
            for j in i + 1..n {
                if starts[i].abs_diff(starts[j]) < min_start_gap {
                    return Err(SimError::Constraint(format!(
                        "utterances {i} and {j} start {} frames apart, need {min_start_gap}",
                        starts[i].abs_diff(starts[j])
                    )));
                }
            }
        }
    }
    if n > 1 {
        for i in 0..n {
            let overlaps =
                (0..n).any(|j| j != i && starts[i] < starts[j] + lengths[j] && starts[j] < starts[i] + lengths[i]);
            if !overlaps {
                return Err(SimError::Constraint(format!("utterance {i} overlaps no other utterance")));
            }
        }
    }
    Ok(())
}

/// Rejection-samples delays: the first utterance starts at 0, the rest
/// within the delay cap, until the constraints hold.
pub fn sample_delays(
    lengths: &[usize],
    mode: MixMode,
    cfg: &SimConfig,
    rng: &mut impl Rng,
) -> Result<Vec<usize>, SimError> {
    if lengths.is_empty() {
        return Err(SimError::EmptyTokens);
    }
    let cap = (cfg.delay_cap * lengths[0] as f64).floor() as usize;
    for _ in 0..cfg.max_placement_attempts {
        let mut d = vec![0];
        d.extend((1..lengths.len()).map(|_| rng.random_range(0..=cap)));
        if validate_mixture(&d, lengths, mode, cfg.min_start_gap).is_ok() {
            return Ok(d);
        }
    }
    Err(SimError::Placement(lengths.len()))
}

/// A profile: the frame mean of each enrollment rendering, averaged over renderings.
pub fn extract_profile(renderings: &[FeatureSequence]) -> Result<Vec<f64>, SimError> {
    if renderings.is_empty() {
        return Err(SimError::EmptyTokens);
    }
    let dim = renderings[0].dim();
    let mut acc = vec![0.0; dim];
    for r in renderings {
        for (a, v) in acc.iter_mut().zip(r.mean_frame()) {
            *a += v / renderings.len() as f64;
        }
    }
    Ok(acc)
}

/// Profile of `speaker` from `count` enrollment renderings: rendering `j`
/// is seeded by `(seed, j)`, so smaller counts use a prefix of the same renderings.
pub fn speaker_profile(
    speaker: &SyntheticSpeaker,
    bank: &SpeakerBank,
    cfg: &SimConfig,
    seed: u64,
    count: usize,
) -> Result<Vec<f64>, SimError> {
    let script = cfg.script();
    let renders = (0..count)
        .map(|j| render_utterance(&script, speaker, bank, cfg, sub_seed(seed, &[j as u64])))
        .collect::<Result<Vec<_>, _>>()?;
    extract_profile(&renders)
}

/// Inventory of the target speakers plus `k - targets` distractors taken in
/// order from `pool`, shuffled by `order_seed`.
#[allow(clippy::too_many_arguments)]
pub fn build_inventory(
    targets: &[&SyntheticSpeaker],
    pool: &[&SyntheticSpeaker],
    profile_utterances: usize,
    k: usize,
    bank: &SpeakerBank,
    cfg: &SimConfig,
    profile_seed: impl Fn(&SpeakerId) -> u64,
    order_seed: u64,
) -> Result<SpeakerInventory, SimError> {
    if k < targets.len() {
        return Err(SimError::InventoryTooSmall { k, s: targets.len() });
    }
    let need = k - targets.len();
    let pool: Vec<&&SyntheticSpeaker> = pool.iter().filter(|p| !targets.iter().any(|t| t.id == p.id)).collect();
    if pool.len() < need {
        return Err(SimError::PoolExhausted { need, have: pool.len() });
    }
    let mut members: Vec<&SyntheticSpeaker> = targets.to_vec();
    members.extend(pool.into_iter().take(need).copied());
    let mut r = ChaCha8Rng::seed_from_u64(order_seed);
    rand::seq::SliceRandom::shuffle(members.as_mut_slice(), &mut r);
    let profiles = members
        .iter()
        .map(|s| speaker_profile(s, bank, cfg, profile_seed(&s.id), profile_utterances.max(1)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SpeakerInventory::new(members.iter().map(|s| s.id.clone()).collect(), profiles)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine_similarity;

    fn quiet() -> SimConfig {
        SimConfig { noise_std: 0.0, session_std: 0.0, ..Default::default() }
    }

    #[test]
    fn signatures_are_unit_and_separated() {
        let cfg = SimConfig::default();
        let bank = SpeakerBank::generate(&cfg, 1).unwrap();
        assert_eq!(bank.speakers.len(), cfg.speakers + cfg.extra_distractors);
        for (i, a) in bank.speakers.iter().enumerate() {
            let n = a.signature.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-10);
            for b in &bank.speakers[i + 1..] {
                assert!(distance(&a.signature, &b.signature) >= 0.5);
            }
        }
    }

    #[test]
    fn bank_prefix_is_stable() {
        let small = SpeakerBank::generate(&SimConfig { extra_distractors: 0, ..Default::default() }, 4).unwrap();
        let big = SpeakerBank::generate(&SimConfig { extra_distractors: 20, ..Default::default() }, 4).unwrap();
        assert_eq!(small.speakers[..], big.speakers[..small.speakers.len()]);
    }

    #[test]
    fn speaker_delta_appears_in_every_frame() {
        let cfg = quiet();
        let bank = SpeakerBank::generate(&cfg, 2).unwrap();
        let (a, b) = (&bank.speakers[0], &bank.speakers[1]);
        let b_same_gain = SyntheticSpeaker { gain: a.gain, ..b.clone() };
        let fa = render_utterance(&[2, 3], a, &bank, &cfg, 0).unwrap();
        let fb = render_utterance(&[2, 3], &b_same_gain, &bank, &cfg, 0).unwrap();
        for t in 0..fa.frames() {
            for d in 0..cfg.feature_dim {
                let want = cfg.signature_scale * (a.signature[d] - b.signature[d]);
                assert!((fa.frame(t)[d] - fb.frame(t)[d] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_frame_is_pattern_plus_signature() {
        let cfg = quiet();
        let bank = SpeakerBank::generate(&cfg, 3).unwrap();
        let s = &bank.speakers[0];
        let f = render_utterance(&[4], s, &bank, &cfg, 9).unwrap();
        assert_eq!(f.frames(), cfg.frames_per_token);
        let p = bank.pattern(4).unwrap();
        for (d, &x) in f.frame(0).iter().enumerate() {
            assert_eq!(x, s.gain * p[d] + cfg.signature_scale * s.signature[d]);
        }
    }

    #[test]
    fn rendering_is_deterministic_and_validates_tokens() {
        let cfg = SimConfig::default();
        let bank = SpeakerBank::generate(&cfg, 3).unwrap();
        let s = &bank.speakers[1];
        assert_eq!(
            render_utterance(&[2, 5], s, &bank, &cfg, 7).unwrap(),
            render_utterance(&[2, 5], s, &bank, &cfg, 7).unwrap()
        );
        assert!(matches!(render_utterance(&[1], s, &bank, &cfg, 7), Err(SimError::UnknownToken(1))));
        assert!(matches!(render_utterance(&[99], s, &bank, &cfg, 7), Err(SimError::UnknownToken(99))));
        assert!(matches!(render_utterance(&[], s, &bank, &cfg, 7), Err(SimError::EmptyTokens)));
    }

    #[test]
    fn mixing_examples() {
        let cfg = SimConfig::default();
        let bank = SpeakerBank::generate(&cfg, 5).unwrap();
        let a = render_utterance(&[2, 3], &bank.speakers[0], &bank, &cfg, 1).unwrap();
        let b = render_utterance(&[4, 5, 6], &bank.speakers[1], &bank, &cfg, 2).unwrap();
        assert_eq!(mix(std::slice::from_ref(&a), &[0]).unwrap(), a);

        let far = mix(&[a.clone(), b.clone()], &[0, 10]).unwrap();
        assert_eq!(far.frames(), 10 + b.frames());
        for t in 0..a.frames() {
            assert_eq!(far.frame(t), a.frame(t));
        }
        for t in 0..b.frames() {
            assert_eq!(far.frame(10 + t), b.frame(t));
        }

        let near = mix(&[a.clone(), b.clone()], &[0, 2]).unwrap();
        for t in 2..a.frames() {
            for d in 0..cfg.feature_dim {
                assert_eq!(near.frame(t)[d], a.frame(t)[d] + b.frame(t - 2)[d]);
            }
        }
    }

    #[test]
    fn validator_enforces_constraints() {
        assert!(validate_mixture(&[0, 5], &[10, 10], MixMode::Train, 5).is_ok());
        assert!(validate_mixture(&[0, 4], &[10, 10], MixMode::Train, 5).is_err());
        assert!(validate_mixture(&[0, 4], &[10, 10], MixMode::Eval, 5).is_ok());
        assert!(validate_mixture(&[0, 10], &[10, 10], MixMode::Eval, 5).is_err());
        assert!(validate_mixture(&[0, 0], &[10, 10], MixMode::Eval, 5).is_ok());
        assert!(validate_mixture(&[0], &[3], MixMode::Train, 5).is_ok());
    }

    #[test]
    fn sampled_delays_pass_validator() {
        let cfg = SimConfig::default();
        let mut r = ChaCha8Rng::seed_from_u64(0);
        for lens in [vec![6, 15], vec![15, 6, 9], vec![9, 9]] {
            for _ in 0..50 {
                let d = sample_delays(&lens, MixMode::Train, &cfg, &mut r).unwrap();
                assert_eq!(d[0], 0);
                assert!(d.iter().all(|&x| x as f64 <= 1.5 * lens[0] as f64));
                validate_mixture(&d, &lens, MixMode::Train, cfg.min_start_gap).unwrap();
            }
        }
    }

    #[test]
    fn inventory_composition() {
        let cfg = SimConfig::default();
        let bank = SpeakerBank::generate(&cfg, 6).unwrap();
        let all: Vec<&SyntheticSpeaker> = bank.speakers.iter().collect();
        let targets = vec![all[0], all[3]];
        let exact = build_inventory(&targets, &all, 2, 2, &bank, &cfg, |_| 1, 2).unwrap();
        assert_eq!(exact.len(), 2);
        let inv = build_inventory(&targets, &all, 2, 6, &bank, &cfg, |_| 1, 2).unwrap();
        assert_eq!(inv.len(), 6);
        assert!(targets.iter().all(|t| inv.contains(&t.id)));
        assert!(matches!(
            build_inventory(&targets, &all, 2, 1, &bank, &cfg, |_| 1, 2),
            Err(SimError::InventoryTooSmall { .. })
        ));
        assert!(matches!(
            build_inventory(&targets, &all[..4], 2, 5, &bank, &cfg, |_| 1, 2),
            Err(SimError::PoolExhausted { .. })
        ));
    }

    #[test]
    fn noiseless_profiles_ignore_count() {
        let cfg = quiet();
        let bank = SpeakerBank::generate(&cfg, 7).unwrap();
        let s = &bank.speakers[2];
        let one = speaker_profile(s, &bank, &cfg, 3, 1).unwrap();
        let ten = speaker_profile(s, &bank, &cfg, 3, 10).unwrap();
        for (a, b) in one.iter().zip(&ten) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn profile_variance_shrinks_with_count() {
        let cfg = SimConfig { noise_std: 0.0, session_std: 0.5, ..Default::default() };
        let bank = SpeakerBank::generate(&cfg, 8).unwrap();
        let s = &bank.speakers[0];
        let var_for = |n: usize| {
            let trials = 400;
            let profiles: Vec<Vec<f64>> =
                (0..trials).map(|i| speaker_profile(s, &bank, &cfg, 1000 + i, n).unwrap()).collect();
            let d = cfg.feature_dim;
            (0..d)
                .map(|k| {
                    let m = profiles.iter().map(|p| p[k]).sum::<f64>() / trials as f64;
                    profiles.iter().map(|p| (p[k] - m).powi(2)).sum::<f64>() / (trials - 1) as f64
                })
                .sum::<f64>()
                / d as f64
        };
        let (v1, v4) = (var_for(1), var_for(4));
        let expected = 0.25;
        assert!((v1 - expected).abs() < 0.1 * expected, "{v1}");
        assert!((v4 - expected / 4.0).abs() < 0.1 * expected / 4.0, "{v4}");
    }

    #[test]
    fn same_speaker_profiles_are_closer() {
        let cfg = SimConfig::default();
        let bank = SpeakerBank::generate(&cfg, 9).unwrap();
        let (mut same, mut diff, mut ns, mut nd) = (0.0, 0.0, 0, 0);
        for (i, a) in bank.speakers.iter().enumerate() {
            let pa = speaker_profile(a, &bank, &cfg, 11, 2).unwrap();
            let pa2 = speaker_profile(a, &bank, &cfg, 12, 2).unwrap();
            same += cosine_similarity(&pa, &pa2).unwrap();
            ns += 1;
            for b in &bank.speakers[i + 1..] {
                let pb = speaker_profile(b, &bank, &cfg, 13, 2).unwrap();
                diff += cosine_similarity(&pa, &pb).unwrap();
                nd += 1;
            }
        }
        assert!(same / ns as f64 > diff / nd as f64);
    }
}
