//! Seeded corpus generation and the on-disk dataset layout.
//!
//! ```text
//! <out>/<split>/manifest.jsonl     one ManifestRecord per mixture
//! <out>/<split>/refs.txt           reference manifest
//! <out>/<split>/inventories.jsonl  one InventoryRecord per mixture
//! <out>/<split>/feats/<id>.feat    mixture features
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_inventory, mix, render_utterance, rng, sample_delays, sub_seed, validate_mixture};
use super::{MixMode, SimConfig, SimError, SpeakerBank, SyntheticSpeaker};
use crate::features::{FeatureSequence, SpeakerId};
use crate::model::SpeakerInventory;
use crate::sot::{serialize_fifo, write_references, ReferenceRecord, SerializedTarget, Utterance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub name: String,
    /// Mixture count for one, two, three, ... speakers.
    pub mixtures: Vec<usize>,
    pub mode: MixMode,
    pub profile_utterances: usize,
    pub inventory_min: usize,
    pub inventory_max: usize,
}

impl SplitConfig {
    fn validate(&self, sim: &SimConfig) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(format!("split {}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return bad("invalid name".into());
        }
        if self.profile_utterances == 0 {
            return bad("profile_utterances must be >= 1".into());
        }
        if self.inventory_min > self.inventory_max {
            return bad("inventory_min > inventory_max".into());
        }
        let max_s = self.mixtures.len();
        if max_s > sim.speakers {
            return bad(format!("{max_s}-speaker mixtures need more than {} speakers", sim.speakers));
        }
        if self.inventory_max.max(max_s) > sim.speakers + sim.extra_distractors {
            return bad(format!("inventory of {} exceeds the bank", self.inventory_max));
        }
        if self.inventory_max < max_s && self.mixtures.last().copied().unwrap_or(0) > 0 {
            return bad("inventory_max smaller than the largest speaker count".into());
        }
        Ok(())
    }
}

/// One generated mixture with everything needed to train or score it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub id: String,
    pub features: FeatureSequence,
    /// In generation order; the first starts at frame 0.
    pub utterances: Vec<Utterance>,
    pub target: SerializedTarget,
    pub inventory: SpeakerInventory,
}

impl Mixture {
    pub fn speaker_count(&self) -> usize {
        self.utterances.len()
    }

    pub fn example(&self) -> crate::train::Example {
        crate::train::Example {
            features: self.features.clone(),
            target: self.target.clone(),
            inventory: self.inventory.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub splits: Vec<(String, Vec<Mixture>)>,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Mixture]> {
        self.splits.iter().find(|(n, _)| n == name).map(|(_, m)| m.as_slice())
    }
}

/// A speaker bank plus the split-independent generation rules.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: SimConfig,
    pub seed: u64,
    pub bank: SpeakerBank,
}

fn split_tag(name: &str) -> u64 {
    // FNV-1a, stable across platforms and releases
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

impl Simulator {
    pub fn new(cfg: SimConfig, seed: u64) -> Result<Self, SimError> {
        let bank = SpeakerBank::generate(&cfg, seed)?;
        Ok(Self { cfg, seed, bank })
    }

    fn speaker_index(&self, id: &SpeakerId) -> u64 {
        self.bank.speakers.iter().position(|s| &s.id == id).unwrap_or(usize::MAX) as u64
    }

    /// Distractor candidates for a mixture in a fixed per-mixture order, so
    /// larger inventories extend smaller ones.
    fn distractor_order(&self, split: &str, m: usize) -> Vec<&SyntheticSpeaker> {
        let mut pool: Vec<&SyntheticSpeaker> = self.bank.speakers.iter().collect();
        pool.shuffle(&mut rng(self.seed, &[12, split_tag(split), m as u64]));
        pool
    }

    /// Inventory of `k` profiles for a mixture's speakers, each profile from
    /// `profile_utterances` renderings. Renderings and distractors are seeded
    /// per mixture, so counts and sizes nest.
    pub fn inventory_for(
        &self,
        split: &str,
        m: usize,
        speakers: &[SpeakerId],
        k: usize,
        profile_utterances: usize,
    ) -> Result<SpeakerInventory, SimError> {
        let targets = speakers
            .iter()
            .map(|id| self.bank.speaker(id).ok_or_else(|| SimError::Data(format!("unknown speaker {id}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let pool = self.distractor_order(split, m);
        let tag = split_tag(split);
        build_inventory(
            &targets,
            &pool,
            profile_utterances,
            k,
            &self.bank,
            &self.cfg,
            |id| sub_seed(self.seed, &[13, tag, m as u64, self.speaker_index(id)]),
            sub_seed(self.seed, &[14, tag, m as u64]),
        )
    }

    pub fn mixture(&self, split: &SplitConfig, m: usize, speakers: usize) -> Result<Mixture, SimError> {
        let cfg = &self.cfg;
        let tag = split_tag(&split.name);
        let mut r = rng(self.seed, &[10, tag, m as u64]);
        let mut chosen: Vec<&SyntheticSpeaker> = self.bank.speakers[..cfg.speakers].iter().collect();
        chosen.shuffle(&mut r);
        chosen.truncate(speakers);

        let words = cfg.words();
        // Content is redrawn when no delays satisfy the constraints, e.g. a
        // short first utterance cannot host three gapped starts.
        let mut redraws = 0;
        let (tokens, parts, lengths, delays) = loop {
            let tokens: Vec<Vec<usize>> = chosen
                .iter()
                .map(|_| {
                    let n = r.random_range(cfg.tokens_min..=cfg.tokens_max);
                    (0..n).map(|_| r.random_range(words.clone())).collect()
                })
                .collect();
            let parts = chosen
                .iter()
                .zip(&tokens)
                .enumerate()
                .map(|(i, (s, t))| {
                    render_utterance(t, s, &self.bank, cfg, sub_seed(self.seed, &[11, tag, m as u64, i as u64]))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let lengths: Vec<usize> = parts.iter().map(|p| p.frames()).collect();
            match sample_delays(&lengths, split.mode, cfg, &mut r) {
                Ok(d) => break (tokens, parts, lengths, d),
                Err(SimError::Placement(_)) if redraws < 100 => redraws += 1,
                Err(e) => return Err(e),
            }
        };
        validate_mixture(&delays, &lengths, split.mode, cfg.min_start_gap)?;
        let features = mix(&parts, &delays)?;

        let utterances = chosen
            .iter()
            .zip(tokens)
            .zip(delays.iter().zip(&lengths))
            .map(|((s, t), (&d, &l))| Utterance::new(s.id.clone(), t, d, d + l))
            .collect::<Result<Vec<_>, _>>()?;
        let target = serialize_fifo(&utterances)?;

        let lo = split.inventory_min.max(speakers);
        let k = r.random_range(lo..=split.inventory_max.max(lo));
        let ids: Vec<SpeakerId> = chosen.iter().map(|s| s.id.clone()).collect();
        let inventory = self.inventory_for(&split.name, m, &ids, k, split.profile_utterances)?;
        Ok(Mixture { id: format!("{}-{m:05}", split.name), features, utterances, target, inventory })
    }

    pub fn split(&self, split: &SplitConfig) -> Result<Vec<Mixture>, SimError> {
        split.validate(&self.cfg)?;
        let mut out = Vec::new();
        for (s, &count) in split.mixtures.iter().enumerate() {
            for _ in 0..count {
                let m = out.len();
                out.push(self.mixture(split, m, s + 1)?);
            }
        }
        Ok(out)
    }
}

/// All splits, in memory.
pub fn generate_dataset(cfg: &SimConfig, splits: &[SplitConfig], seed: u64) -> Result<Dataset, SimError> {
    let sim = Simulator::new(cfg.clone(), seed)?;
    let mut names = std::collections::HashSet::new();
    for s in splits {
        if !names.insert(&s.name) {
            return Err(SimError::Config(format!("duplicate split {}", s.name)));
        }
    }
    let splits = splits.iter().map(|s| Ok((s.name.clone(), sim.split(s)?))).collect::<Result<_, SimError>>()?;
    Ok(Dataset { splits })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    pub features: String,
    pub frames: usize,
    pub speaker_count: usize,
    pub delays: Vec<usize>,
    pub utterances: Vec<Utterance>,
    pub reference: SerializedTarget,
    pub inventory: Vec<SpeakerId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InventoryRecord {
    pub mixture: String,
    pub speakers: Vec<SpeakerId>,
    pub profiles: Vec<Vec<f64>>,
}

fn write_jsonl<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), SimError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for it in items {
        serde_json::to_writer(&mut w, &it).map_err(|e| SimError::Data(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SimError> {
    let r = BufReader::new(fs::File::open(path).map_err(|e| SimError::Data(format!("{}: {e}", path.display())))?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| SimError::Data(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Writes every split under `out`. The parent of `out` must exist.
pub fn write_dataset(ds: &Dataset, out: &Path) -> Result<(), SimError> {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() && !p.is_dir() => {
            return Err(SimError::Data(format!("parent directory {} does not exist", p.display())));
        }
        _ => {}
    }
    fs::create_dir_all(out)?;
    for (name, mixtures) in &ds.splits {
        let dir = out.join(name);
        fs::create_dir_all(dir.join("feats"))?;
        for m in mixtures {
            m.features.save(&dir.join("feats").join(format!("{}.feat", m.id)))?;
        }
        write_jsonl(
            &dir.join("manifest.jsonl"),
            mixtures.iter().map(|m| ManifestRecord {
                id: m.id.clone(),
                features: format!("feats/{}.feat", m.id),
                frames: m.features.frames(),
                speaker_count: m.speaker_count(),
                delays: m.utterances.iter().map(|u| u.start).collect(),
                utterances: m.utterances.clone(),
                reference: m.target.clone(),
                inventory: m.inventory.ids().to_vec(),
            }),
        )?;
        write_jsonl(
            &dir.join("inventories.jsonl"),
            mixtures.iter().map(|m| InventoryRecord {
                mixture: m.id.clone(),
                speakers: m.inventory.ids().to_vec(),
                profiles: m.inventory.profiles().to_vec(),
            }),
        )?;
        let refs: Vec<ReferenceRecord> = mixtures
            .iter()
            .flat_map(|m| m.utterances.iter().map(|u| ReferenceRecord { mixture: m.id.clone(), utterance: u.clone() }))
            .collect();
        let mut w = BufWriter::new(fs::File::create(dir.join("refs.txt"))?);
        write_references(&mut w, &refs)?;
        w.flush()?;
    }
    Ok(())
}

/// Reads one split directory written by [`write_dataset`].
pub fn load_split(dir: &Path) -> Result<Vec<Mixture>, SimError> {
    let manifest: Vec<ManifestRecord> = read_jsonl(&dir.join("manifest.jsonl"))?;
    let inventories: Vec<InventoryRecord> = read_jsonl(&dir.join("inventories.jsonl"))?;
    if manifest.len() != inventories.len() {
        return Err(SimError::Data("manifest and inventory counts differ".into()));
    }
    manifest
        .into_iter()
        .zip(inventories)
        .map(|(rec, inv)| {
            if inv.mixture != rec.id || inv.speakers != rec.inventory {
                return Err(SimError::Data(format!("inventory record does not match mixture {}", rec.id)));
            }
            let features = FeatureSequence::load(&dir.join(&rec.features))?;
            if features.frames() != rec.frames {
                return Err(SimError::Data(format!("{}: frame count mismatch", rec.id)));
            }
            rec.reference.validate()?;
            let inventory = SpeakerInventory::new(inv.speakers, inv.profiles)?;
            Ok(Mixture { id: rec.id, features, utterances: rec.utterances, target: rec.reference, inventory })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_splits() -> Vec<SplitConfig> {
        vec![
            SplitConfig {
                name: "train".into(),
                mixtures: vec![3, 4, 2],
                mode: MixMode::Train,
                profile_utterances: 3,
                inventory_min: 1,
                inventory_max: 8,
            },
            SplitConfig {
                name: "test".into(),
                mixtures: vec![2, 2],
                mode: MixMode::Eval,
                profile_utterances: 2,
                inventory_min: 4,
                inventory_max: 4,
            },
        ]
    }

    #[test]
    fn bucket_counts_are_exact() {
        let ds = generate_dataset(&SimConfig::default(), &small_splits(), 1).unwrap();
        let train = ds.split("train").unwrap();
        for (s, n) in [(1, 3), (2, 4), (3, 2)] {
            assert_eq!(train.iter().filter(|m| m.speaker_count() == s).count(), n);
        }
        assert!(ds.split("test").unwrap().iter().all(|m| m.inventory.len() == 4));
    }

    #[test]
    fn training_mixtures_pass_validator_and_inventories_are_closed() {
        let cfg = SimConfig::default();
        let ds = generate_dataset(&cfg, &small_splits(), 2).unwrap();
        for m in ds.split("train").unwrap() {
            let starts: Vec<usize> = m.utterances.iter().map(|u| u.start).collect();
            let lens: Vec<usize> = m.utterances.iter().map(|u| u.end - u.start).collect();
            validate_mixture(&starts, &lens, MixMode::Train, cfg.min_start_gap).unwrap();
            assert!(m.utterances.iter().all(|u| m.inventory.contains(&u.speaker)));
            assert!(m.inventory.len() >= m.speaker_count() && m.inventory.len() <= 8);
            m.target.validate().unwrap();
        }
    }

    #[test]
    fn larger_inventories_extend_smaller_ones() {
        let sim = Simulator::new(SimConfig::default(), 3).unwrap();
        let ids = vec![sim.bank.speakers[0].id.clone(), sim.bank.speakers[4].id.clone()];
        let small = sim.inventory_for("test", 7, &ids, 4, 2).unwrap();
        let big = sim.inventory_for("test", 7, &ids, 8, 2).unwrap();
        for id in small.ids() {
            let a = small.profile(small.index_of(id).unwrap());
            let b = big.profile(big.index_of(id).unwrap());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let ds = generate_dataset(&SimConfig::default(), &small_splits(), 5).unwrap();
            write_dataset(&ds, &d.path().join("data")).unwrap();
        }
        for f in ["manifest.jsonl", "refs.txt", "inventories.jsonl", "feats/train-00000.feat"] {
            let x = fs::read(a.path().join("data/train").join(f)).unwrap();
            let y = fs::read(b.path().join("data/train").join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn written_split_loads_back() {
        let d = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&SimConfig::default(), &small_splits(), 6).unwrap();
        write_dataset(&ds, &d.path().join("data")).unwrap();
        let back = load_split(&d.path().join("data/test")).unwrap();
        assert_eq!(back, ds.split("test").unwrap());
    }

    #[test]
    fn missing_parent_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        let ds = generate_dataset(&SimConfig::default(), &small_splits()[1..], 6).unwrap();
        let out = d.path().join("nope/data");
        assert!(write_dataset(&ds, &out).is_err());
        assert!(!d.path().join("nope").exists());
    }
}
