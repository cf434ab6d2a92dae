//! Central-difference checks of every tape primitive and of the full loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sasr::features::FeatureSequence;
use sasr::loss::{sa_mmi_gradients, sa_mmi_loss};
use sasr::model::{ModelConfig, ModelParams, SpeakerInventory};
use sasr::numerics::{lstm_step, LstmVars, NumericsError, Tape, Tensor, Var};
use sasr::sot::{serialize_fifo, Utterance};

pub const STEP: f64 = 1e-5;

/// Relative error with a floor on the denominator, so entries whose true
/// gradient is ~0 are compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

type Build = fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn loss_of(case: &OpCase, inputs: &[Tensor], probe: &[f64], grad: bool) -> (f64, Option<Vec<Vec<f64>>>) {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.leaf_as(x, grad)).collect();
    let y = (case.build)(&mut t, &vars).unwrap();
    let shape = t.shape(y).to_vec();
    let r = t.constant(shape, probe[..t.value(y).len()].to_vec()).unwrap();
    let p = t.mul(y, r).unwrap();
    let loss = t.sum(p).unwrap();
    let value = t.scalar(loss);
    if !grad {
        return (value, None);
    }
    let g = t.backward(loss).unwrap();
    (value, Some(vars.iter().zip(inputs).map(|(&v, x)| g.get_or_zeros(v, x.len())).collect()))
}

/// Max relative error between the tape gradient and central differences of
/// a random projection of the op output.
pub fn check_op(case: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probe: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, analytic) = loss_of(case, &case.inputs, &probe, true);
    let analytic = analytic.unwrap();
    let mut worst: f64 = 0.0;
    for (i, x) in case.inputs.iter().enumerate() {
        for j in 0..x.len() {
            let at = |d: f64| {
                let mut ins = case.inputs.clone();
                let mut data = x.data().to_vec();
                data[j] += d;
                ins[i] = Tensor::new(x.shape().to_vec(), data).unwrap();
                loss_of(case, &ins, &probe, false).0
            };
            let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// One case per primitive, with random inputs from `seed`.
pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut r;
    vec![
        OpCase {
            name: "matvec",
            inputs: vec![randn(r, &[3, 4], -1.0, 1.0), randn(r, &[4], -1.0, 1.0)],
            build: |t, v| t.matvec(v[0], v[1]),
        },
        OpCase {
            name: "matmul_t",
            inputs: vec![randn(r, &[2, 4], -1.0, 1.0), randn(r, &[3, 4], -1.0, 1.0)],
            build: |t, v| t.matmul_t(v[0], v[1]),
        },
        OpCase {
            name: "add",
            inputs: vec![randn(r, &[5], -1.0, 1.0), randn(r, &[5], -1.0, 1.0)],
            build: |t, v| t.add(v[0], v[1]),
        },
        OpCase {
            name: "sub",
            inputs: vec![randn(r, &[2, 3], -1.0, 1.0), randn(r, &[2, 3], -1.0, 1.0)],
            build: |t, v| t.sub(v[0], v[1]),
        },
        OpCase {
            name: "mul",
            inputs: vec![randn(r, &[5], -1.0, 1.0), randn(r, &[5], -1.0, 1.0)],
            build: |t, v| t.mul(v[0], v[1]),
        },
        OpCase { name: "scale", inputs: vec![randn(r, &[4], -1.0, 1.0)], build: |t, v| t.scale(v[0], -1.7) },
        OpCase {
            name: "add_rows",
            inputs: vec![randn(r, &[3, 2], -1.0, 1.0), randn(r, &[2], -1.0, 1.0)],
            build: |t, v| t.add_rows(v[0], v[1]),
        },
        OpCase { name: "sigmoid", inputs: vec![randn(r, &[6], -3.0, 3.0)], build: |t, v| t.sigmoid(v[0]) },
        OpCase { name: "tanh", inputs: vec![randn(r, &[6], -2.0, 2.0)], build: |t, v| t.tanh(v[0]) },
        OpCase { name: "exp", inputs: vec![randn(r, &[6], -2.0, 2.0)], build: |t, v| t.exp(v[0]) },
        OpCase { name: "log", inputs: vec![randn(r, &[6], 0.2, 3.0)], build: |t, v| t.log(v[0]) },
        OpCase { name: "softmax", inputs: vec![randn(r, &[5], -2.0, 2.0)], build: |t, v| t.softmax(v[0]) },
        OpCase { name: "log_softmax", inputs: vec![randn(r, &[5], -2.0, 2.0)], build: |t, v| t.log_softmax(v[0]) },
        OpCase {
            name: "concat",
            inputs: vec![randn(r, &[2], -1.0, 1.0), randn(r, &[2, 2], -1.0, 1.0)],
            build: |t, v| t.concat(&[v[0], v[1], v[0]]),
        },
        OpCase { name: "slice", inputs: vec![randn(r, &[6], -1.0, 1.0)], build: |t, v| t.slice(v[0], 2, 3) },
        OpCase { name: "pick", inputs: vec![randn(r, &[4], -1.0, 1.0)], build: |t, v| t.pick(v[0], 2) },
        OpCase {
            name: "dot",
            inputs: vec![randn(r, &[4], -1.0, 1.0), randn(r, &[4], -1.0, 1.0)],
            build: |t, v| t.dot(v[0], v[1]),
        },
        OpCase { name: "sum", inputs: vec![randn(r, &[2, 3], -1.0, 1.0)], build: |t, v| t.sum(v[0]) },
        OpCase { name: "row", inputs: vec![randn(r, &[3, 4], -1.0, 1.0)], build: |t, v| t.row(v[0], 1) },
        OpCase {
            name: "weighted_row_sum",
            inputs: vec![randn(r, &[3], -1.0, 1.0), randn(r, &[3, 4], -1.0, 1.0)],
            build: |t, v| t.weighted_row_sum(v[0], v[1]),
        },
        OpCase {
            name: "stack_rows",
            inputs: vec![randn(r, &[3], -1.0, 1.0), randn(r, &[3], -1.0, 1.0)],
            build: |t, v| t.stack_rows(&[v[0], v[1], v[0]]),
        },
        OpCase {
            name: "conv1d",
            inputs: vec![randn(r, &[7], -1.0, 1.0), randn(r, &[2, 3], -1.0, 1.0)],
            build: |t, v| t.conv1d(v[0], v[1]),
        },
        OpCase {
            name: "layer_norm",
            inputs: vec![randn(r, &[2, 4], -2.0, 2.0), randn(r, &[4], 0.5, 1.5), randn(r, &[4], -1.0, 1.0)],
            build: |t, v| t.layer_norm(v[0], v[1], v[2]),
        },
        OpCase {
            name: "cosine",
            inputs: vec![randn(r, &[4], -1.0, 1.0), randn(r, &[4], -1.0, 1.0)],
            build: |t, v| t.cosine(v[0], v[1]),
        },
        OpCase {
            name: "lstm_step",
            inputs: vec![
                randn(r, &[3], -1.0, 1.0),
                randn(r, &[2], -1.0, 1.0),
                randn(r, &[2], -1.0, 1.0),
                randn(r, &[8, 5], -1.0, 1.0),
                randn(r, &[8], -0.5, 0.5),
            ],
            build: |t, v| {
                let (h, c) = lstm_step(t, v[0], v[1], v[2], LstmVars { w: v[3], b: v[4] })?;
                t.concat(&[h, c])
            },
        },
    ]
}

/// A recognizer well under 2,000 parameters.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        feature_dim: 3,
        frame_stack: 2,
        encoder_layers: 1,
        encoder_hidden: 2,
        speaker_encoder_layers: 1,
        speaker_encoder_hidden: 2,
        speaker_embed_dim: 3,
        decoder_layers: 1,
        decoder_hidden: 4,
        embed_dim: 2,
        attention_dim: 3,
        attention_conv_channels: 2,
        attention_conv_width: 3,
        query_rnn_dim: 3,
        vocab_size: 5,
        ..Default::default()
    }
}

pub struct LossCase {
    pub params: ModelParams,
    pub x: FeatureSequence,
    pub target: sasr::sot::SerializedTarget,
    pub inventory: SpeakerInventory,
}

pub fn loss_case(seed: u64) -> LossCase {
    let cfg = tiny_model();
    let params = ModelParams::init(&cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let frames = 6;
    let x = FeatureSequence::new(frames, 3, (0..frames * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let ids: Vec<_> = (0..3).map(|k| format!("s{k}").into()).collect();
    let profiles = (0..3).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let inventory = SpeakerInventory::new(ids, profiles).unwrap();
    let target = serialize_fifo(&[
        Utterance::new(inventory.id(2).clone(), vec![2, 3], 0, 3).unwrap(),
        Utterance::new(inventory.id(0).clone(), vec![4, 2], 2, 5).unwrap(),
    ])
    .unwrap();
    LossCase { params, x, target, inventory }
}

/// Max relative error of the full objective's parameter gradient.
pub fn check_loss(case: &LossCase, gamma: f64) -> f64 {
    let LossCase { params, x, target, inventory } = case;
    let (_, grads) = sa_mmi_gradients(params, x, target, inventory, gamma, false).unwrap();
    let analytic: Vec<f64> = grads.into_iter().flatten().collect();
    let flat = params.to_flat();
    let mut worst: f64 = 0.0;
    let mut q = params.clone();
    for (j, &a) in analytic.iter().enumerate() {
        let mut at = |d: f64| {
            let mut v = flat.clone();
            v[j] += d;
            q.load_flat(&v).unwrap();
            sa_mmi_loss(&q, x, target, inventory, gamma).unwrap().loss()
        };
        let numeric = (at(STEP) - at(-STEP)) / (2.0 * STEP);
        worst = worst.max(rel_err(a, numeric));
    }
    worst
}
