//! Trains the toy model on a small synthetic corpus and reports held-out scores.

use std::time::Instant;

use sasr::decode::{attribute, beam_search, AssignMode, BeamConfig};
use sasr::metrics::{score_mixture, ScoreReport, TranscriptUtterance};
use sasr::model::{ModelConfig, ModelParams};
use sasr::simkit::{generate_dataset, MixMode, SimConfig, SplitConfig};
use sasr::train::{train_loop, Adam, Example, TrainConfig};

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let n_train: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let sim = SimConfig::default();
    let splits = vec![
        SplitConfig {
            name: "train".into(),
            mixtures: vec![n_train, n_train],
            mode: MixMode::Train,
            profile_utterances: 10,
            inventory_min: 4,
            inventory_max: 4,
        },
        SplitConfig {
            name: "test".into(),
            mixtures: vec![50, 50],
            mode: MixMode::Eval,
            profile_utterances: 2,
            inventory_min: 4,
            inventory_max: 4,
        },
        SplitConfig {
            name: "testgap".into(),
            mixtures: vec![0, 50],
            mode: MixMode::Train,
            profile_utterances: 2,
            inventory_min: 4,
            inventory_max: 4,
        },
    ];
    let t0 = Instant::now();
    let ds = generate_dataset(&sim, &splits, 1).unwrap();
    println!("generated in {:?}", t0.elapsed());
    let train: Vec<Example> = ds.split("train").unwrap().iter().map(|m| m.example()).collect();
    let mcfg = ModelConfig::default();
    let mut params = ModelParams::init(&mcfg, 7).unwrap();
    println!("params {}", params.num_scalars());
    let mut adam = Adam::new(&params);
    let tcfg = TrainConfig {
        steps,
        batch_size: 8,
        learning_rate: 2e-3,
        final_learning_rate: Some(1e-4),
        clip_norm: Some(5.0),
        ..Default::default()
    };
    let t0 = Instant::now();
    train_loop(&mut params, &mut adam, &train, &tcfg, 3, 0, 1, None, |r, _, _| {
        if r.step % 50 == 0 || r.step + 1 == steps {
            println!("{} {:.1}s", r.log_line(), t0.elapsed().as_secs_f64());
        }
        Ok::<(), sasr::train::TrainError>(())
    })
    .unwrap();
    for name in ["test", "testgap", "train"] {
        let t0 = Instant::now();
        let mut scores = Vec::new();
        for m in ds.split(name).unwrap().iter().rev().take(100) {
            let h = beam_search(&params, &m.features, &m.inventory, &BeamConfig { width: 4, ..Default::default() })
                .unwrap();
            let utts = attribute(&h, &m.inventory, AssignMode::Merge).unwrap();
            let hyp: Vec<TranscriptUtterance> =
                utts.iter().map(|u| TranscriptUtterance::new(u.speaker.clone(), u.tokens.clone())).collect();
            let r: Vec<TranscriptUtterance> =
                m.utterances.iter().map(|u| TranscriptUtterance::new(u.speaker.clone(), u.tokens.clone())).collect();
            scores.push(score_mixture(&hyp, &r));
        }
        println!("decode {:?}", t0.elapsed());
        println!("{name}\n{}", ScoreReport::from_scores(&scores).unwrap().table());
    }
}
