//! Model combination: count-weighted FedAvg inside a cluster, the FedYogi
//! adaptive server step, and the uniform cross-cluster merge.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sign, Scalar};
use crate::weights::{linear_combine, WeightVector, WeightsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("no models to aggregate")]
    Empty,
    #[error("{models} models but {counts} sample counts")]
    CountMismatch { models: usize, counts: usize },
    #[error("sample count at position {0} is zero")]
    ZeroCount(usize),
    #[error("invalid FedYogi hyperparameters: {0}")]
    InvalidHyper(String),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

/// Σ (n_i / Σn) · w_i, summed in input order.
pub fn fedavg<T: Scalar>(models: &[WeightVector<T>], counts: &[usize]) -> Result<WeightVector<T>, AggregationError> {
    if models.is_empty() {
        return Err(AggregationError::Empty);
    }
    if models.len() != counts.len() {
        return Err(AggregationError::CountMismatch { models: models.len(), counts: counts.len() });
    }
    if let Some(i) = counts.iter().position(|&c| c == 0) {
        return Err(AggregationError::ZeroCount(i));
    }
    let total: usize = counts.iter().sum();
    let total = T::from_usize(total).expect("count fits in scalar");
    let terms: Vec<(&WeightVector<T>, T)> = models
        .iter()
        .zip(counts)
        .map(|(w, &c)| (w, T::from_usize(c).expect("count fits in scalar") / total))
        .collect();
    Ok(linear_combine(&terms)?)
}

/// Uniform average of `local` and every model in `selected`.
pub fn merge_global<T: Scalar>(local: &WeightVector<T>, selected: &[WeightVector<T>]) -> Result<WeightVector<T>, AggregationError> {
    if selected.is_empty() {
        return Ok(local.clone());
    }
    let share = T::one() / T::from_usize(selected.len() + 1).expect("count fits in scalar");
    let mut terms = vec![(local, share)];
    terms.extend(selected.iter().map(|w| (w, share)));
    Ok(linear_combine(&terms)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedYogiParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub tau: f64,
}

impl Default for FedYogiParams {
    fn default() -> Self {
        Self { eta: 0.01, beta1: 0.9, beta2: 0.99, tau: 1e-3 }
    }
}

impl FedYogiParams {
    pub fn validate(&self) -> Result<(), AggregationError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !(positive(self.eta) && positive(self.tau)) {
            return Err(AggregationError::InvalidHyper("eta and tau must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(AggregationError::InvalidHyper("beta1 and beta2 must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedYogiState<T> {
    pub m: WeightVector<T>,
    pub v: WeightVector<T>,
    pub params: FedYogiParams,
}

impl<T: Scalar> FedYogiState<T> {
    /// m = 0, v = τ².
    pub fn new(template: &WeightVector<T>, params: FedYogiParams) -> Self {
        let tau2 = T::from_wire(params.tau * params.tau);
        Self {
            m: template.scale(T::zero()),
            v: template.with_values(vec![tau2; template.len()]).expect("same shape"),
            params,
        }
    }

    /// Explicit moments, e.g. m = v = 0.
    pub fn with_moments(m: WeightVector<T>, v: WeightVector<T>, params: FedYogiParams) -> Result<Self, AggregationError> {
        m.check_shape(&v)?;
        Ok(Self { m, v, params })
    }

    /// m ← β1·m + (1−β1)·Δ;  v ← v − (1−β2)·Δ²·sign(v − Δ²);  x ← x + η·m/(√v + τ).
    pub fn step(&self, current: &WeightVector<T>, pseudo_grad: &WeightVector<T>) -> Result<(Self, WeightVector<T>), AggregationError> {
        current.check_shape(pseudo_grad)?;
        current.check_shape(&self.m)?;
        let p = &self.params;
        let (b1, b2) = (T::from_wire(p.beta1), T::from_wire(p.beta2));
        let (eta, tau) = (T::from_wire(p.eta), T::from_wire(p.tau));
        let n = current.len();
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let d = pseudo_grad.values()[i];
            let d2 = d * d;
            let mi = b1 * self.m.values()[i] + (T::one() - b1) * d;
            let vi_old = self.v.values()[i];
            let vi = vi_old - (T::one() - b2) * d2 * sign(vi_old - d2);
            x.push(current.values()[i] + eta * mi / (vi.sqrt() + tau));
            m.push(mi);
            v.push(vi);
        }
        let next = Self {
            m: current.with_values(m)?,
            v: current.with_values(v)?,
            params: *p,
        };
        let out = current.with_values(x)?;
        out.check_finite()?;
        Ok((next, out))
    }
}

pub fn fedyogi_step<T: Scalar>(
    state: &FedYogiState<T>,
    current: &WeightVector<T>,
    pseudo_grad: &WeightVector<T>,
) -> Result<(FedYogiState<T>, WeightVector<T>), AggregationError> {
    state.step(current, pseudo_grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(v: &[f64]) -> WeightVector<f64> {
        WeightVector::from_slice(v)
    }

    #[test]
    fn fedavg_examples() {
        let a = w(&[1.0, -2.0]);
        assert_eq!(fedavg(std::slice::from_ref(&a), &[5]).unwrap(), a);
        assert_eq!(fedavg(&[w(&[1.0, 1.0]), w(&[4.0, 4.0])], &[1, 3]).unwrap().values(), &[3.25, 3.25]);
        let same = vec![w(&[0.5, 0.25]); 4];
        assert_eq!(fedavg(&same, &[2; 4]).unwrap().values(), &[0.5, 0.25]);
    }

    #[test]
    fn fedavg_errors() {
        assert_eq!(fedavg::<f64>(&[], &[]), Err(AggregationError::Empty));
        assert!(matches!(fedavg(&[w(&[1.0])], &[1, 2]), Err(AggregationError::CountMismatch { .. })));
        assert_eq!(fedavg(&[w(&[1.0]), w(&[2.0])], &[1, 0]), Err(AggregationError::ZeroCount(1)));
        assert!(matches!(fedavg(&[w(&[1.0]), w(&[1.0, 2.0])], &[1, 1]), Err(AggregationError::Weights(_))));
    }

    #[test]
    fn merge_examples() {
        let local = w(&[0.0, 0.0]);
        assert_eq!(merge_global(&local, &[]).unwrap(), local);
        assert_eq!(merge_global(&local, &[w(&[2.0, 2.0])]).unwrap().values(), &[1.0, 1.0]);
        let x = w(&[0.5, -0.25]);
        assert_eq!(merge_global(&x, &[x.clone(), x.clone()]).unwrap(), x);
        assert!(merge_global(&local, &[w(&[1.0])]).is_err());
    }

    #[test]
    fn yogi_scalar_hand_evaluation() {
        // m = 0.9·0 + 0.1·1 = 0.1; v = 0 − 0.01·1·sign(0 − 1) = 0.01;
        // x = 0 + 0.01·0.1/(√0.01 + 0.001) = 0.001/0.101.
        let params = FedYogiParams::default();
        let zero = w(&[0.0]);
        let state = FedYogiState::with_moments(zero.clone(), zero.clone(), params).unwrap();
        let (next, x) = fedyogi_step(&state, &zero, &w(&[1.0])).unwrap();
        assert!((next.m.values()[0] - 0.1).abs() < 1e-15);
        assert!((next.v.values()[0] - 0.01).abs() < 1e-15);
        assert!((x.values()[0] - 0.001 / 0.101).abs() < 1e-15);
        assert!((x.values()[0] - 0.009901).abs() < 1e-6);
    }

    #[test]
    fn yogi_zero_delta_is_a_fixed_point() {
        let cur = w(&[0.3, -1.2, 4.0]);
        let state = FedYogiState::new(&cur, FedYogiParams::default());
        let zero = cur.scale(0.0);
        let (s1, x1) = state.step(&cur, &zero).unwrap();
        let (s2, x2) = s1.step(&x1, &zero).unwrap();
        assert_eq!(x1, cur);
        assert_eq!(x2, cur);
        assert_eq!(s1, state);
        assert_eq!(s2, state);
    }

    #[test]
    fn yogi_default_init_and_validation() {
        let s = FedYogiState::new(&w(&[1.0, 2.0]), FedYogiParams::default());
        assert!(s.v.values().iter().all(|&v| (v - 1e-6).abs() < 1e-20));
        assert!(FedYogiParams { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(FedYogiParams { beta1: 1.0, ..Default::default() }.validate().is_err());
        assert!(s.step(&w(&[1.0]), &w(&[1.0])).is_err());
    }
}
