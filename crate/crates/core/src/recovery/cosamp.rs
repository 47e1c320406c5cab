use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::transform::{top_k, top_k_indices, SensingOperator, Signal, SpectralVector};

/// One CoSaMP iterate: `estimate` is at most k-sparse and
/// `residual = y - A estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosampState {
    pub estimate: SpectralVector,
    pub residual: Signal,
    pub iteration: usize,
    /// |R| of the merged support used for the last estimation step.
    pub merged_support: usize,
}

impl CosampState {
    /// State at `x0` (pruned to `k` terms), with its residual.
    pub fn initial(y: &Signal, x0: &SpectralVector, op: &SensingOperator, k: usize) -> Result<Self> {
        check_len(op.m(), y.len())?;
        let estimate = top_k(x0, k);
        let residual = y.sub(&op.synthesize(&estimate)?)?;
        Ok(Self { estimate, residual, iteration: 0, merged_support: 0 })
    }
}

/// CoSaMP bound to one observation. Caches `A* y`, which is the least-squares
/// solution on any support when the operator is the full orthonormal one.
#[derive(Debug, Clone)]
pub struct Cosamp<'a> {
    y: &'a Signal,
    op: &'a SensingOperator,
    k: usize,
    y_proxy: Option<SpectralVector>,
}

impl<'a> Cosamp<'a> {
    pub fn new(y: &'a Signal, op: &'a SensingOperator, k: usize) -> Result<Self> {
        check_len(op.m(), y.len())?;
        if k == 0 || k > op.n() {
            return Err(Error::InvalidParameter(format!("k = {k} must satisfy 1 <= k <= {}", op.n())));
        }
        let y_proxy = if op.is_full() { Some(op.analyze(y)?) } else { None };
        Ok(Self { y, op, k, y_proxy })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Identification, support merger, estimation and pruning.
    pub fn step(&self, state: &CosampState) -> Result<CosampState> {
        let n = self.op.n();
        // identification: proxy of the residual, 2k largest entries
        let proxy = self.op.analyze(&state.residual)?;
        let mut in_merged = vec![false; n];
        for i in top_k_indices(proxy.as_slice(), 2 * self.k) {
            if proxy[i] != 0.0 {
                in_merged[i] = true;
            }
        }
        // support merger
        for i in state.estimate.support() {
            in_merged[i] = true;
        }
        let merged: Vec<usize> = (0..n).filter(|&i| in_merged[i]).collect();

        // estimation: least squares on the columns in `merged`
        let mut b = vec![0.0; n];
        match &self.y_proxy {
            Some(yp) => merged.iter().for_each(|&i| b[i] = yp[i]),
            None => {
                let sol = self.least_squares(&merged)?;
                merged.iter().zip(sol.iter()).for_each(|(&i, v)| b[i] = *v);
            }
        }

        // pruning
        let estimate = top_k(&SpectralVector::from_vec_unchecked(b), self.k);
        let residual = self.y.sub(&self.op.synthesize(&estimate)?)?;
        Ok(CosampState { estimate, residual, iteration: state.iteration + 1, merged_support: merged.len() })
    }

    /// Minimum-norm least squares `A_R† y` through an SVD of `A_R`.
    fn least_squares(&self, cols: &[usize]) -> Result<DVector<f64>> {
        if cols.is_empty() {
            return Ok(DVector::zeros(0));
        }
        let a_r = self.op.column_submatrix(cols);
        let rhs = DVector::from_column_slice(self.y.as_slice());
        let svd = a_r.svd(true, true);
        let smax = svd.singular_values.max();
        let eps = smax * 1e-12 * (self.op.m().max(cols.len()) as f64);
        svd.solve(&rhs, eps)
            .map_err(|e| Error::InvalidParameter(format!("least squares on support failed: {e}")))
    }

    /// Applies `n_iters` steps from `x0`, keeping every iterate.
    pub fn run(&self, x0: &SpectralVector, n_iters: usize) -> Result<CosampRun> {
        if n_iters == 0 {
            return Err(Error::InvalidParameter("n_iters must be >= 1".into()));
        }
        let mut state = CosampState::initial(self.y, x0, self.op, self.k)?;
        let mut history = Vec::with_capacity(n_iters);
        for _ in 0..n_iters {
            state = self.step(&state)?;
            history.push(state.estimate.clone());
        }
        Ok(CosampRun { state, history })
    }
}

/// Final state of a CoSaMP run plus the estimate after every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosampRun {
    pub state: CosampState,
    pub history: Vec<SpectralVector>,
}

pub fn cosamp_step(state: &CosampState, y: &Signal, op: &SensingOperator, k: usize) -> Result<CosampState> {
    Cosamp::new(y, op, k)?.step(state)
}

pub fn cosamp_run(y: &Signal, op: &SensingOperator, k: usize, n_iters: usize, x0: &SpectralVector) -> Result<CosampRun> {
    Cosamp::new(y, op, k)?.run(x0, n_iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack_sim::{make_clean_sparse, perturb, AttackSpec};

    #[test]
    fn one_step_recovers_noiseless_sparse() {
        let op = SensingOperator::dct(64).unwrap();
        let x = make_clean_sparse(64, 5, (1.0, 2.0), 11).unwrap();
        let y = op.synthesize(&x).unwrap();
        let state = CosampState::initial(&y, &SpectralVector::zeros(64), &op, 5).unwrap();
        let next = cosamp_step(&state, &y, &op, 5).unwrap();
        assert!(next.estimate.sub(&x).unwrap().l2() < 1e-12);
        assert!(next.residual.l2() < 1e-12);
        assert!(next.merged_support <= 15);
    }

    #[test]
    fn zero_observation_stays_zero() {
        let op = SensingOperator::dct(16).unwrap();
        let y = Signal::zeros(16);
        let run = cosamp_run(&y, &op, 3, 4, &SpectralVector::zeros(16)).unwrap();
        assert_eq!(run.state.estimate.nnz(), 0);
        assert_eq!(run.state.residual.l2(), 0.0);
        assert_eq!(run.history.len(), 4);
    }

    #[test]
    fn small_l2_noise_is_bounded() {
        let op = SensingOperator::dct(16).unwrap();
        for seed in 0..50 {
            let x = make_clean_sparse(16, 2, (1.0, 2.0), seed).unwrap();
            let inst = perturb(&x, &AttackSpec::l2(0.1).with_seed(seed + 100), &op).unwrap();
            let run = cosamp_run(&inst.observed, &op, 2, 10, &SpectralVector::zeros(16)).unwrap();
            assert!(run.state.estimate.sub(&x).unwrap().l2() <= 0.1 + 1e-12);
        }
    }

    #[test]
    fn partial_operator_uses_least_squares() {
        // 1-sparse signal, 6 of 8 rows
        let op = SensingOperator::dct_rows(8, vec![0, 1, 2, 4, 5, 7]).unwrap();
        let mut x = SpectralVector::zeros(8);
        x.as_mut_slice()[3] = 1.5;
        let y = op.synthesize(&x).unwrap();
        let run = cosamp_run(&y, &op, 1, 5, &SpectralVector::zeros(8)).unwrap();
        assert!(run.state.estimate.sub(&x).unwrap().l2() < 1e-8);
        assert!(run.state.residual.l2() < 1e-8);
    }

    #[test]
    fn rejects_zero_iterations() {
        let op = SensingOperator::dct(8).unwrap();
        assert!(cosamp_run(&Signal::zeros(8), &op, 1, 0, &SpectralVector::zeros(8)).is_err());
        assert!(Cosamp::new(&Signal::zeros(8), &op, 0).is_err());
    }
}
