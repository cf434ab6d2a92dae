use super::tape::{dot, Tape, Var};
use super::NumericsError;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    softmax_slice(v)
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, NumericsError> {
    if a.len() != b.len() {
        return Err(NumericsError::ShapeMismatch { op: "cosine", expected: vec![a.len()], got: vec![b.len()] });
    }
    cosine_parts(a, b).map(|(c, _, _)| c.clamp(-1.0, 1.0))
}

pub(crate) fn softmax_slice(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let max = checked_max("softmax", v)?;
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= z);
    Ok(out)
}

pub(crate) fn log_softmax_slice(v: &[f64]) -> Result<Vec<f64>, NumericsError> {
    let max = checked_max("log_softmax", v)?;
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|x| x - lse).collect())
}

fn checked_max(op: &'static str, v: &[f64]) -> Result<f64, NumericsError> {
    if v.is_empty() {
        return Err(NumericsError::Empty { op });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite { op });
    }
    Ok(v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}

/// Unclamped cosine with both norms.
pub(crate) fn cosine_parts(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), NumericsError> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(NumericsError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb), na, nb))
}

/// Weights of one LSTM layer on a tape: `w: [4H, in + H]`, `b: [4H]`, gate
/// blocks ordered input, forget, cell candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w: Var,
    pub b: Var,
}

/// One step of a standard LSTM cell. Returns `(h, c)`.
pub fn lstm_step(tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var, p: LstmVars) -> Result<(Var, Var), NumericsError> {
    let hidden = tape.value(h_prev).len();
    if tape.value(c_prev).len() != hidden || tape.value(p.b).len() != 4 * hidden {
        return Err(NumericsError::ShapeMismatch {
            op: "lstm_step",
            expected: vec![4 * hidden],
            got: vec![tape.value(p.b).len()],
        });
    }
    let xh = tape.concat(&[x, h_prev])?;
    let pre = tape.matvec(p.w, xh)?;
    let pre = tape.add(pre, p.b)?;
    let i = tape.slice(pre, 0, hidden)?;
    let f = tape.slice(pre, hidden, hidden)?;
    let g = tape.slice(pre, 2 * hidden, hidden)?;
    let o = tape.slice(pre, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_uniform_for_equal_logits() {
        let p = softmax(&[0.0, 0.0, 0.0]).unwrap();
        for v in p {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_single_element() {
        assert_eq!(softmax(&[5.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn softmax_two_logits() {
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0]).unwrap();
        assert!(close(p[0], e / (e + 1.0), 1e-12));
        assert!(close(p[0], 0.7311, 1e-4));
        assert!(close(p[1], 0.2689, 1e-4));
    }

    #[test]
    fn softmax_errors() {
        assert!(matches!(softmax(&[]), Err(NumericsError::Empty { .. })));
        assert!(matches!(softmax(&[1.0, f64::INFINITY]), Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax(&[1000.0, 999.0]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p[0] > p[1]);
    }

    #[test]
    fn cosine_examples() {
        assert!(close(cosine_similarity(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 1.0, 1e-15));
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!(close(cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), std::f64::consts::FRAC_1_SQRT_2, 1e-12));
        assert!(close(cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap(), 1.0 / 2f64.sqrt(), 1e-12));
    }

    #[test]
    fn cosine_rejects_zero_norm_and_mismatch() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(NumericsError::ZeroNorm)));
        assert!(cosine_similarity(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn zero_lstm_gives_zero_state() {
        let mut tape = Tape::new();
        let (hidden, input) = (3, 2);
        let x = tape.constant_vec(vec![0.4, -1.0]).unwrap();
        let h = tape.constant_vec(vec![0.0; hidden]).unwrap();
        let c = tape.constant_vec(vec![0.0; hidden]).unwrap();
        let w = tape.leaf(&Tensor::zeros(vec![4 * hidden, input + hidden]));
        let b = tape.leaf(&Tensor::zeros(vec![4 * hidden]));
        let (h1, c1) = lstm_step(&mut tape, x, h, c, LstmVars { w, b }).unwrap();
        assert_eq!(tape.value(h1), &[0.0; 3]);
        assert_eq!(tape.value(c1), &[0.0; 3]);
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(vec![0.4, -1.0]).unwrap();
        let h = tape.constant_vec(vec![0.0; 3]).unwrap();
        let c = tape.constant_vec(vec![0.0; 2]).unwrap();
        let w = tape.leaf(&Tensor::zeros(vec![12, 5]));
        let b = tape.leaf(&Tensor::zeros(vec![12]));
        assert!(lstm_step(&mut tape, x, h, c, LstmVars { w, b }).is_err());
    }
}
