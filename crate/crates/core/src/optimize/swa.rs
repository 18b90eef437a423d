use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Running average of end-of-epoch weights:
/// `w_swa ← (w_swa·n + w) / (n + 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwaState {
    averaged_weights: ParamVector,
    epochs_accumulated: usize,
    swa_epochs: usize,
}

impl SwaState {
    /// Empty state shaped like `template`.
    pub fn new(template: &ParamVector, swa_epochs: usize) -> Result<Self> {
        if swa_epochs == 0 {
            return Err(Error::Swa("swa_epochs must be >= 1".into()));
        }
        Ok(Self { averaged_weights: template.zeros_like(), epochs_accumulated: 0, swa_epochs })
    }

    pub fn averaged_weights(&self) -> &ParamVector {
        &self.averaged_weights
    }

    pub fn epochs_accumulated(&self) -> usize {
        self.epochs_accumulated
    }

    pub fn swa_epochs(&self) -> usize {
        self.swa_epochs
    }

    pub fn is_complete(&self) -> bool {
        self.epochs_accumulated == self.swa_epochs
    }

    pub fn update(&mut self, current: &ParamVector) -> Result<()> {
        if self.is_complete() {
            return Err(Error::Swa(format!(
                "already accumulated {} of {} epochs",
                self.epochs_accumulated, self.swa_epochs
            )));
        }
        self.averaged_weights.check_layout(current, "swa_update")?;
        let n = self.epochs_accumulated as f64;
        let flat_cur = current.flatten();
        let mut flat = self.averaged_weights.flatten();
        for (a, c) in flat.iter_mut().zip(&flat_cur) {
            *a = (*a * n + c) / (n + 1.0);
        }
        self.averaged_weights.assign_flat(&flat)?;
        self.epochs_accumulated += 1;
        Ok(())
    }

    /// Copies the averaged weights into `params`.
    pub fn finalize(&self, params: &mut ParamVector) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::Swa(format!(
                "only {} of {} epochs accumulated",
                self.epochs_accumulated, self.swa_epochs
            )));
        }
        params.assign(&self.averaged_weights)
    }
}

pub fn swa_update(mut state: SwaState, current: &ParamVector) -> Result<SwaState> {
    state.update(current)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::numerics::Tensor;

    fn pv(values: &[f64]) -> ParamVector {
        let mut p = ParamVector::new();
        p.push("w", Tensor::vector(values.to_vec()), true).unwrap();
        p
    }

    #[test]
    fn first_update_copies() {
        let w = pv(&[1.5, -2.0]);
        let s = swa_update(SwaState::new(&w, 3).unwrap(), &w).unwrap();
        assert_eq!(s.averaged_weights(), &w);
        assert_eq!(s.epochs_accumulated(), 1);
    }

    #[test]
    fn constant_sequence_stays_constant() {
        let c = pv(&[0.3, 0.7]);
        let mut s = SwaState::new(&c, 10).unwrap();
        for _ in 0..10 {
            s.update(&c).unwrap();
        }
        for (a, b) in s.averaged_weights().flatten().iter().zip(c.flatten()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn scalar_sequence_mean() {
        let mut s = SwaState::new(&pv(&[0.0]), 3).unwrap();
        for v in [1.0, 2.0, 3.0] {
            s.update(&pv(&[v])).unwrap();
        }
        assert_eq!(s.averaged_weights().flatten(), vec![2.0]);
    }

    #[test]
    fn overflow_and_incomplete_are_errors() {
        let w = pv(&[1.0]);
        let mut s = SwaState::new(&w, 1).unwrap();
        let mut target = pv(&[9.0]);
        assert!(s.finalize(&mut target).is_err());
        s.update(&w).unwrap();
        assert!(s.update(&w).is_err());
        s.finalize(&mut target).unwrap();
        assert_eq!(target, w);
        assert!(SwaState::new(&w, 0).is_err());
        assert!(SwaState::new(&w, 2).unwrap().update(&pv(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn finalized_average_is_frozen_against_later_training() {
        let mut s = SwaState::new(&pv(&[0.0]), 2).unwrap();
        s.update(&pv(&[1.0])).unwrap();
        s.update(&pv(&[3.0])).unwrap();
        let mut model = pv(&[3.0]);
        s.finalize(&mut model).unwrap();
        model.tensor_mut(0).data_mut()[0] -= 0.5;
        assert_eq!(s.averaged_weights().flatten(), vec![2.0]);
    }

    proptest! {
        #[test]
        fn running_mean_equals_batch_mean(
            seq in proptest::collection::vec(proptest::collection::vec(-100f64..100.0, 4), 1..12)
        ) {
            let mut s = SwaState::new(&pv(&seq[0]), seq.len()).unwrap();
            for w in &seq {
                s.update(&pv(w)).unwrap();
            }
            let avg = s.averaged_weights().flatten();
            for j in 0..4 {
                let mean = seq.iter().map(|w| w[j]).sum::<f64>() / seq.len() as f64;
                prop_assert!((avg[j] - mean).abs() < 1e-12);
            }
        }
    }
}
