use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean epoch time on one worker and on `num_workers` workers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub epoch_seconds_single: f64,
    pub epoch_seconds_k: f64,
    pub num_workers: usize,
}

/// `100 · (T₁ / k) / T_k`, in percent.
pub fn scale_efficiency(record: &TimingRecord) -> Result<f64> {
    let TimingRecord { epoch_seconds_single: t1, epoch_seconds_k: tk, num_workers: k } = *record;
    if !(t1 > 0.0 && tk > 0.0) || !t1.is_finite() || !tk.is_finite() {
        return Err(Error::invalid(format!("epoch times must be positive, got T1={t1}, Tk={tk}")));
    }
    if k == 0 {
        return Err(Error::invalid("num_workers must be >= 1"));
    }
    Ok(100.0 * (t1 / (k as f64 * tk)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eff(t1: f64, tk: f64, k: usize) -> Result<f64> {
        scale_efficiency(&TimingRecord { epoch_seconds_single: t1, epoch_seconds_k: tk, num_workers: k })
    }

    #[test]
    fn perfect_scaling_is_100() {
        assert!((eff(367.21, 367.21 / 8.0, 8).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(eff(5.0, 5.0, 1).unwrap(), 100.0);
    }

    #[test]
    fn reported_rows() {
        assert!((eff(367.21, 112.30, 4).unwrap() - 81.75).abs() < 0.01);
        assert!((eff(367.21, 18.67, 32).unwrap() - 61.46).abs() < 0.01);
    }

    #[test]
    fn rejects_non_positive() {
        assert!(eff(0.0, 1.0, 2).is_err());
        assert!(eff(1.0, -1.0, 2).is_err());
        assert!(eff(1.0, f64::NAN, 2).is_err());
        assert!(eff(1.0, 1.0, 0).is_err());
    }
}
