//! A sample bound to the shape and adjusted-scale bases: the quantities both
//! inference engines need (block likelihood, score pulled back through the
//! basis, expected-information Gram matrix).

use nalgebra::{DMatrix, DVector};

use crate::basis::{BasisMatrix, BasisSpec, RoughnessMatrix};
use crate::error::{Error, Result};
use crate::gpd::{self, PeaksSample, PointwiseParams};
use crate::mle::CoefficientState;

/// Which coefficient block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Param {
    Xi,
    Nu,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Xi => "xi",
            Param::Nu => "nu",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Block {
    pub spec: BasisSpec,
    pub basis: BasisMatrix,
    pub roughness: RoughnessMatrix,
}

impl Block {
    pub fn new(spec: &BasisSpec, angles: &[f64]) -> Result<Self> {
        Ok(Block {
            spec: spec.clone(),
            basis: spec.evaluate(angles)?,
            roughness: spec.roughness()?,
        })
    }

    pub fn p(&self) -> usize {
        self.spec.p
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub sample: PeaksSample,
    pub xi: Block,
    pub nu: Block,
}

/// Block log-likelihood with its score and expected-information Gram matrix,
/// all with respect to that block's coefficients.
#[derive(Clone, Debug)]
pub struct BlockEval {
    pub loglik: f64,
    /// `Bᵀ ∂ℓ/∂η`.
    pub grad: DVector<f64>,
    /// `Bᵀ diag(E[−∂²ℓ/∂η²]) B`.
    pub gram: DMatrix<f64>,
}

impl Model {
    pub fn new(sample: PeaksSample, xi_spec: &BasisSpec, nu_spec: &BasisSpec) -> Result<Self> {
        let xi = Block::new(xi_spec, &sample.angles)?;
        let nu = Block::new(nu_spec, &sample.angles)?;
        Ok(Model { sample, xi, nu })
    }

    pub fn block(&self, which: Param) -> &Block {
        match which {
            Param::Xi => &self.xi,
            Param::Nu => &self.nu,
        }
    }

    pub fn n(&self) -> usize {
        self.sample.len()
    }

    /// The same model restricted to observations `index` (penalties reused).
    pub fn select(&self, index: &[usize]) -> Model {
        let sub = |b: &Block| Block {
            spec: b.spec.clone(),
            basis: b.basis.select_rows(index),
            roughness: b.roughness.clone(),
        };
        Model {
            sample: self.sample.select(index),
            xi: sub(&self.xi),
            nu: sub(&self.nu),
        }
    }

    pub fn check_dims(&self, state: &CoefficientState) -> Result<()> {
        if state.beta_xi.len() != self.xi.p() || state.beta_nu.len() != self.nu.p() {
            return Err(Error::Contract(format!(
                "state has ({}, {}) coefficients, model expects ({}, {})",
                state.beta_xi.len(),
                state.beta_nu.len(),
                self.xi.p(),
                self.nu.p()
            )));
        }
        Ok(())
    }

    pub fn pointwise(&self, state: &CoefficientState) -> PointwiseParams {
        PointwiseParams {
            xi: self.xi.basis.mul_vec(&state.beta_xi),
            nu: self.nu.basis.mul_vec(&state.beta_nu),
        }
    }

    /// Log-likelihood of the sample; `−∞` when infeasible.
    pub fn log_likelihood(&self, state: &CoefficientState) -> f64 {
        let pw = self.pointwise(state);
        -gpd::nll_slices(&self.sample.sizes, &pw.xi, &pw.nu)
    }

    /// Block log-likelihood at `beta`, with the other parameter's pointwise
    /// values held fixed. `−∞` when infeasible.
    pub fn block_loglik(&self, which: Param, beta: &[f64], other: &[f64]) -> f64 {
        let eta = self.block(which).basis.mul_vec(beta);
        let (xi, nu) = match which {
            Param::Xi => (&eta[..], other),
            Param::Nu => (other, &eta[..]),
        };
        -gpd::nll_slices(&self.sample.sizes, xi, nu)
    }

    /// Likelihood, score and expected-information Gram for one block, or
    /// `None` at an infeasible point.
    pub fn block_eval(&self, which: Param, beta: &[f64], other: &[f64]) -> Option<BlockEval> {
        let block = self.block(which);
        let eta = block.basis.mul_vec(beta);
        let n = self.n();
        let mut score = Vec::with_capacity(n);
        let mut weight = Vec::with_capacity(n);
        let mut loglik = 0.0;
        for i in 0..n {
            let (x, v) = match which {
                Param::Xi => (eta[i], other[i]),
                Param::Nu => (other[i], eta[i]),
            };
            let y = self.sample.sizes[i];
            let l = gpd::log_density(y, x, v);
            if l == f64::NEG_INFINITY {
                return None;
            }
            loglik += l;
            let (sx, sn) = gpd::score(y, x, v)?;
            let (wx, wn) = gpd::fisher_weights(x, v);
            match which {
                Param::Xi => {
                    score.push(sx);
                    weight.push(wx);
                }
                Param::Nu => {
                    score.push(sn);
                    weight.push(wn);
                }
            }
        }
        Some(BlockEval {
            loglik,
            grad: block.basis.tr_mul_vec(&score),
            gram: block.basis.weighted_gram(&weight),
        })
    }

    /// Pointwise values of the block not being updated.
    pub fn other_pointwise(&self, which: Param, state: &CoefficientState) -> Vec<f64> {
        match which {
            Param::Xi => self.nu.basis.mul_vec(&state.beta_nu),
            Param::Nu => self.xi.basis.mul_vec(&state.beta_xi),
        }
    }
}
