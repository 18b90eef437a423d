use super::tensor::{dot, norm, Tensor};
use crate::error::{Error, Result};

/// `a·b / (‖a‖ ‖b‖)`. Zero-norm inputs are an error rather than NaN.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("cosine_similarity"));
    }
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine_similarity {} vs {}", a.len(), b.len())));
    }
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_similarity"));
    }
    Ok(dot(a, b) / (na * nb))
}

pub fn cosine_similarity_t(a: &Tensor, b: &Tensor) -> Result<f64> {
    cosine_similarity(a.data(), b.data())
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax"));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

/// `log Σ exp(x)` with max shift.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Index of the maximum entry; ties go to the lowest index.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in x.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Divides every row by its L2 norm; returns the normalized matrix and the norms.
pub(crate) fn normalize_rows(m: &Tensor, what: &'static str) -> Result<(Tensor, Vec<f64>)> {
    let (rows, _) = m.dims2()?;
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(rows);
    for i in 0..rows {
        let n = norm(out.row(i));
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm(what));
        }
        out.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}
