//! Dominant singular triplet by power iteration on the Gram operator `FᵀF`.
//!
//! The Gram matrix is applied implicitly (`Fᵀ(F v)`); with `N` frames and
//! `2P ≫ N` flattened pixels this costs two passes over `F` per iteration and
//! never allocates more than a few `N`- and `2P`-vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::flow::{dot, FlowMatrix};
use crate::{Error, Exec, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SingularTriplet {
    pub sigma: f64,
    /// Left singular vector, length `rows`.
    pub u: Vec<f64>,
    /// Right singular vector, length `cols`.
    pub v: Vec<f64>,
    pub iterations: usize,
    /// Final `‖FᵀF v − σ² v‖`.
    pub residual: f64,
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

pub(crate) fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        if normalize(&mut v) > 0.0 {
            return v;
        }
    }
}

pub fn top_singular_triplet(
    f: &FlowMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SingularTriplet> {
    top_singular_triplet_with(f, tol, max_iter, seed, Exec::default())
}

/// Power iteration from a seeded random start. Converged when
/// `‖FᵀF v − λ v‖ ≤ tol · λ` with `λ = vᵀFᵀF v = σ²`.
pub fn top_singular_triplet_with(
    f: &FlowMatrix,
    tol: f64,
    max_iter: usize,
    seed: u64,
    exec: Exec,
) -> Result<SingularTriplet> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Error::Precondition(format!(
            "need tol > 0 and max_iter >= 1, got tol={tol}, max_iter={max_iter}"
        )));
    }
    if f.is_zero() {
        return Err(Error::DegenerateInput("flow matrix is all zeros".into()));
    }
    let mut v = random_unit(f.cols(), seed);
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let mut w = f.gram_mul_vec(&v, exec);
        let lambda = dot(&v, &w);
        residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if lambda > 0.0 && residual <= tol * lambda {
            let mut u = f.mul_vec(&v, exec);
            let sigma = normalize(&mut u);
            return Ok(SingularTriplet {
                sigma,
                u,
                v,
                iterations: it,
                residual,
            });
        }
        if normalize(&mut w) == 0.0 {
            // started in the null space; reseed deterministically
            w = random_unit(f.cols(), seed.wrapping_add(it as u64));
        }
        v = w;
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual,
    })
}

/// Estimate `σ₂ / σ₁` by a short power iteration deflated against `v1`.
pub fn second_singular_ratio(
    f: &FlowMatrix,
    top: &SingularTriplet,
    iterations: usize,
    seed: u64,
    exec: Exec,
) -> f64 {
    if f.cols() < 2 || top.sigma == 0.0 {
        return 0.0;
    }
    let v1 = &top.v;
    let deflate = |x: &mut Vec<f64>| {
        let c = dot(x, v1);
        x.iter_mut().zip(v1).for_each(|(a, b)| *a -= c * b);
    };
    let mut v = random_unit(f.cols(), seed ^ 0x5eed);
    deflate(&mut v);
    if normalize(&mut v) == 0.0 {
        return 0.0;
    }
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let mut w = f.gram_mul_vec(&v, exec);
        deflate(&mut w);
        lambda = dot(&v, &w).max(0.0);
        if normalize(&mut w) == 0.0 {
            return 0.0;
        }
        v = w;
    }
    (lambda.sqrt() / top.sigma).min(1.0)
}
