//! Per-bin RTF vector estimators.
//!
//! Every estimator returns a vector normalized so the global reference entry
//! is exactly `1 + 0i`.
//!
//! - **biased**: principal eigenvector of `Ry`.
//! - **cw**: whiten `Ry` with the Cholesky factor of the full `Rv`, take the
//!   principal eigenvector, de-whiten.
//! - **cw_d**: as `cw`, but the whitening factor is built from the node-wise
//!   diagonal blocks of `Rv` only.
//! - **ods**: minimize `||S .* (Ry - h h^H)||_F^2` over `h`, where `S` keeps the
//!   inter-node blocks. There is no eigen-solution; L-BFGS over the stacked
//!   real/imaginary parts of `h` is used.
//!
//! The ODS gradient follows the Wirtinger convention: [`ods_gradient`]
//! returns `dJ/d conj(h) = -2 (S .* (Ry - h h^H)) h`, and the gradient over the
//! stacked real coordinates `[Re h, Im h]` is `[2 Re g, 2 Im g]`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::layout::{NodeLayout, SelectionMask};
use crate::linalg::{
    block_cholesky, block_lower_inverse, cholesky_with_loading, lower_inverse, principal_eigenpair,
    vec_norm, CMatrix, HermitianMatrix,
};
use crate::optim::{self, LbfgsOptions, Objective};
use crate::seed;

/// Relative diagonal loading applied once when a noise covariance (or one of
/// its blocks) fails the definiteness check.
pub const DIAGONAL_LOADING: f64 = 1e-8;
/// Reference entries below this fraction of the vector norm cannot be
/// normalized.
pub const REFERENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Biased,
    Cw,
    CwD,
    Ods,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Biased, Method::Cw, Method::CwD, Method::Ods];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Biased => "biased",
            Method::Cw => "cw",
            Method::CwD => "cw_d",
            Method::Ods => "ods",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "biased" => Ok(Method::Biased),
            "cw" => Ok(Method::Cw),
            "cw_d" => Ok(Method::CwD),
            "ods" => Ok(Method::Ods),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Principal eigenvalue of the (whitened) matrix for eigen-based methods.
    pub eigenvalue: Option<f64>,
    /// Final ODS cost, in the units of the input `Ry`.
    pub cost: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when diagonal loading was needed for the noise covariance.
    pub loaded: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RtfEstimate {
    pub h_hat: Vec<Complex64>,
    /// `None` for ground-truth vectors.
    pub method: Option<Method>,
    pub diagnostics: Diagnostics,
}

/// Divides by the reference entry and pins it to exactly one.
pub fn normalize_to_reference(v: &[Complex64], ref_index: usize) -> Result<Vec<Complex64>> {
    let r = v[ref_index];
    let nrm = vec_norm(v);
    if !(r.norm() >= REFERENCE_TOL * nrm) || nrm == 0.0 {
        return Err(Error::ZeroReference {
            magnitude: r.norm(),
        });
    }
    let mut out: Vec<Complex64> = v.iter().map(|z| z / r).collect();
    out[ref_index] = Complex64::new(1.0, 0.0);
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::ZeroReference {
            magnitude: r.norm(),
        });
    }
    Ok(out)
}

fn check_dim(a: &HermitianMatrix, layout: &NodeLayout, what: &str) -> Result<()> {
    if a.dim() != layout.num_mics() {
        return Err(Error::Shape(format!(
            "{what} is {}x{}, layout has {} microphones",
            a.dim(),
            a.dim(),
            layout.num_mics()
        )));
    }
    Ok(())
}

/// Principal eigenvector of `Ry`, normalized to the reference.
pub fn rtf_biased(ry: &HermitianMatrix, layout: &NodeLayout) -> Result<RtfEstimate> {
    check_dim(ry, layout, "Ry")?;
    let pair = principal_eigenpair(ry)?;
    Ok(RtfEstimate {
        h_hat: normalize_to_reference(&pair.vector, layout.ref_index())?,
        method: Some(Method::Biased),
        diagnostics: Diagnostics {
            eigenvalue: Some(pair.value),
            converged: true,
            ..Default::default()
        },
    })
}

/// Whiten with `W = L^{-1}`, take the principal eigenvector and de-whiten
/// with `L`.
fn whitened_rtf(
    ry: &HermitianMatrix,
    sqrt: &CMatrix,
    inv_sqrt: &CMatrix,
    ref_index: usize,
) -> Result<(Vec<Complex64>, f64)> {
    let white = ry.congruence(inv_sqrt);
    let pair = principal_eigenpair(&white)?;
    let h = sqrt.mul_vec(&pair.vector);
    Ok((normalize_to_reference(&h, ref_index)?, pair.value))
}

/// Covariance whitening with the full noise covariance.
pub fn rtf_cw(
    ry: &HermitianMatrix,
    rv: &HermitianMatrix,
    layout: &NodeLayout,
) -> Result<RtfEstimate> {
    check_dim(ry, layout, "Ry")?;
    check_dim(rv, layout, "Rv")?;
    let (l, loaded) = cholesky_with_loading(rv, DIAGONAL_LOADING)?;
    let w = lower_inverse(&l);
    let (h_hat, value) = whitened_rtf(ry, &l, &w, layout.ref_index())?;
    Ok(RtfEstimate {
        h_hat,
        method: Some(Method::Cw),
        diagnostics: Diagnostics {
            eigenvalue: Some(value),
            converged: true,
            loaded,
            ..Default::default()
        },
    })
}

/// Covariance whitening with only the node-wise diagonal blocks of `Rv`.
pub fn rtf_cw_d(
    ry: &HermitianMatrix,
    rv: &HermitianMatrix,
    layout: &NodeLayout,
) -> Result<RtfEstimate> {
    check_dim(ry, layout, "Ry")?;
    check_dim(rv, layout, "Rv")?;
    let l = block_cholesky(rv, layout, DIAGONAL_LOADING)?;
    let w = block_lower_inverse(&l, layout);
    let (h_hat, value) = whitened_rtf(ry, &l, &w, layout.ref_index())?;
    Ok(RtfEstimate {
        h_hat,
        method: Some(Method::CwD),
        diagnostics: Diagnostics {
            eigenvalue: Some(value),
            converged: true,
            ..Default::default()
        },
    })
}

/// `||S .* (Ry - h h^H)||_F^2`
pub fn ods_cost(h: &[Complex64], ry: &HermitianMatrix, s: &SelectionMask) -> f64 {
    let m = h.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            if s.get(i, j) {
                acc += (ry[(i, j)] - h[i] * h[j].conj()).norm_sqr();
            }
        }
    }
    acc
}

/// `-2 (S .* (Ry - h h^H)) h`
pub fn ods_gradient(h: &[Complex64], ry: &HermitianMatrix, s: &SelectionMask) -> Vec<Complex64> {
    let m = h.len();
    (0..m)
        .map(|i| {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..m {
                if s.get(i, j) {
                    acc += (ry[(i, j)] - h[i] * h[j].conj()) * h[j];
                }
            }
            acc * -2.0
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OdsInit {
    /// `sqrt(sigma_max) v_max` of `Ry`; further starts are seeded randomly.
    Biased,
    /// Every start drawn from a complex Gaussian with this seed.
    Random(u64),
}

impl fmt::Display for OdsInit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OdsInit::Biased => f.write_str("biased"),
            OdsInit::Random(seed) => write!(f, "random({seed})"),
        }
    }
}

impl FromStr for OdsInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "biased" {
            return Ok(OdsInit::Biased);
        }
        s.strip_prefix("random(")
            .and_then(|rest| rest.strip_suffix(')'))
            .and_then(|n| n.trim().parse().ok())
            .map(OdsInit::Random)
            .ok_or_else(|| format!("init must be `biased` or `random(<seed>)`, got `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdsOptions {
    pub max_iters: usize,
    /// Converged when `||grad|| <= tol * (1 + ||h||^3)` on the normalized problem.
    pub tol: f64,
    pub starts: usize,
    pub init: OdsInit,
    /// Seed for the random starts that follow a biased start.
    pub restart_seed: u64,
    pub memory: usize,
}

impl Default for OdsOptions {
    fn default() -> Self {
        OdsOptions {
            max_iters: 500,
            tol: 1e-9,
            starts: 4,
            init: OdsInit::Biased,
            restart_seed: 0,
            memory: 10,
        }
    }
}

impl OdsOptions {
    /// Same options with random streams decorrelated for bin `k`.
    pub fn for_bin(&self, k: usize) -> Self {
        let mut out = *self;
        out.restart_seed = seed::derive(self.restart_seed, k as u64);
        if let OdsInit::Random(s) = self.init {
            out.init = OdsInit::Random(seed::derive(s, k as u64));
        }
        out
    }
}

/// Unnormalized minimizer returned by [`ods_minimize`].
#[derive(Clone, Debug, PartialEq)]
pub struct OdsSolution {
    pub h_prime: Vec<Complex64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct OdsProblem<'a> {
    ry: &'a HermitianMatrix,
    mask: &'a SelectionMask,
    h: Vec<Complex64>,
}

impl OdsProblem<'_> {
    fn load(&mut self, x: &[f64]) {
        let m = self.h.len();
        for i in 0..m {
            self.h[i] = Complex64::new(x[i], x[m + i]);
        }
    }
}

impl Objective for OdsProblem<'_> {
    fn value_and_gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.load(x);
        let m = self.h.len();
        let mut cost = 0.0;
        for i in 0..m {
            let hi = self.h[i];
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..m {
                if self.mask.get(i, j) {
                    let e = self.ry[(i, j)] - hi * self.h[j].conj();
                    cost += e.norm_sqr();
                    acc += e * self.h[j];
                }
            }
            // real gradient = 2 * (-2 acc) stacked as [re, im]
            grad[i] = -4.0 * acc.re;
            grad[m + i] = -4.0 * acc.im;
        }
        cost
    }

    fn converged(&self, x: &[f64], grad: &[f64], tol: f64) -> bool {
        let h_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let g_norm = 0.5 * grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        g_norm <= tol * (1.0 + h_norm.powi(3))
    }
}

fn masked_norm(ry: &HermitianMatrix, mask: &SelectionMask) -> f64 {
    let m = ry.dim();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            if mask.get(i, j) {
                acc += ry[(i, j)].norm_sqr();
            }
        }
    }
    acc.sqrt()
}

/// Runs L-BFGS on the ODS cost from `start`. No identifiability check.
///
/// The problem is rescaled so the masked part of `Ry` has unit Frobenius norm
/// before optimizing; the returned vector and cost are in the original units.
pub fn ods_minimize(
    ry: &HermitianMatrix,
    mask: &SelectionMask,
    start: &[Complex64],
    opts: &OdsOptions,
) -> OdsSolution {
    let m = ry.dim();
    let scale = masked_norm(ry, mask);
    if scale == 0.0 {
        return OdsSolution {
            h_prime: start.to_vec(),
            cost: ods_cost(start, ry, mask),
            iterations: 0,
            converged: ods_gradient(start, ry, mask)
                .iter()
                .all(|g| *g == Complex64::new(0.0, 0.0)),
        };
    }
    let normalized = ry.scale(1.0 / scale);
    let amp = scale.sqrt();
    let mut x0 = vec![0.0; 2 * m];
    for (i, z) in start.iter().enumerate() {
        x0[i] = z.re / amp;
        x0[m + i] = z.im / amp;
    }
    let mut problem = OdsProblem {
        ry: &normalized,
        mask,
        h: vec![Complex64::new(0.0, 0.0); m],
    };
    let lbfgs = LbfgsOptions {
        max_iters: opts.max_iters,
        tol: opts.tol,
        memory: opts.memory,
        ..Default::default()
    };
    let result = optim::minimize(&mut problem, &x0, &lbfgs);
    let h_prime: Vec<Complex64> = (0..m)
        .map(|i| Complex64::new(result.x[i], result.x[m + i]) * amp)
        .collect();
    OdsSolution {
        cost: result.value * scale * scale,
        h_prime,
        iterations: result.iterations,
        converged: result.converged,
    }
}

fn random_start(m: usize, seed: u64, norm: f64) -> Vec<Complex64> {
    let mut rng = seed::rng(seed);
    let v: Vec<Complex64> = (0..m)
        .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let n = vec_norm(&v);
    v.into_iter().map(|z| z * (norm / n)).collect()
}

/// Starting points for the multi-start search, in start-index order.
pub fn ods_starts(
    ry: &HermitianMatrix,
    mask: &SelectionMask,
    opts: &OdsOptions,
) -> Result<Vec<Vec<Complex64>>> {
    let m = ry.dim();
    let norm = masked_norm(ry, mask).sqrt().max(f64::MIN_POSITIVE);
    let count = opts.starts.max(1);
    let mut starts = Vec::with_capacity(count);
    match opts.init {
        OdsInit::Biased => {
            let pair = principal_eigenpair(ry)?;
            let amp = pair.value.max(0.0).sqrt();
            starts.push(pair.vector.iter().map(|z| z * amp).collect());
            for i in 1..count {
                starts.push(random_start(
                    m,
                    seed::derive(opts.restart_seed, i as u64),
                    norm,
                ));
            }
        }
        OdsInit::Random(s) => {
            for i in 0..count {
                starts.push(random_start(m, seed::derive(s, i as u64), norm));
            }
        }
    }
    Ok(starts)
}

/// Best (lowest cost, lowest start index on ties) of several runs.
fn best_of(
    ry: &HermitianMatrix,
    mask: &SelectionMask,
    opts: &OdsOptions,
) -> Result<(OdsSolution, usize)> {
    let mut best: Option<OdsSolution> = None;
    let mut total_iters = 0;
    for start in ods_starts(ry, mask, opts)? {
        let sol = ods_minimize(ry, mask, &start, opts);
        total_iters += sol.iterations;
        if best.as_ref().is_none_or(|b| sol.cost < b.cost) {
            best = Some(sol);
        }
    }
    Ok((best.expect("at least one start"), total_iters))
}

/// Off-diagonal selection estimate. Requires at least three nodes: with two,
/// the inter-node block only fixes `h_1 h_2^H` and the relative scale of the
/// two node vectors is unidentifiable.
pub fn rtf_ods(
    ry: &HermitianMatrix,
    layout: &NodeLayout,
    opts: &OdsOptions,
) -> Result<RtfEstimate> {
    check_dim(ry, layout, "Ry")?;
    if layout.num_nodes() < 3 {
        return Err(Error::Identifiability {
            nodes: layout.num_nodes(),
        });
    }
    let mask = layout.selection_mask();
    let (best, _) = best_of(ry, &mask, opts)?;
    Ok(RtfEstimate {
        h_hat: normalize_to_reference(&best.h_prime, layout.ref_index())?,
        method: Some(Method::Ods),
        diagnostics: Diagnostics {
            cost: Some(best.cost),
            iterations: best.iterations,
            converged: best.converged,
            ..Default::default()
        },
    })
}

/// Two stationary points of the two-node ODS problem with equal cost.
#[derive(Clone, Debug)]
pub struct AmbiguityDemo {
    pub first: OdsSolution,
    pub second: OdsSolution,
    pub first_normalized: Vec<Complex64>,
    pub second_normalized: Vec<Complex64>,
    pub cost_difference: f64,
    /// Hermitian angle between the two normalized vectors.
    pub angle: f64,
}

/// Demonstrates the two-node scaling ambiguity: solves the ODS problem once,
/// then restarts from `(alpha h_1, h_2 / alpha)`, which leaves every
/// inter-node product unchanged. Both runs end at stationary points of equal
/// cost whose normalized vectors differ.
pub fn ods_ambiguity_demo(
    ry: &HermitianMatrix,
    layout: &NodeLayout,
    opts: &OdsOptions,
    alpha: f64,
) -> Result<AmbiguityDemo> {
    check_dim(ry, layout, "Ry")?;
    if layout.num_nodes() != 2 {
        return Err(Error::Parameter(format!(
            "ambiguity demonstration needs exactly 2 nodes, layout has {}",
            layout.num_nodes()
        )));
    }
    if !(alpha > 0.0) || alpha == 1.0 {
        return Err(Error::Parameter(
            "alpha must be positive and different from 1".into(),
        ));
    }
    let mask = layout.selection_mask();
    let single = OdsOptions { starts: 1, ..*opts };
    let start = ods_starts(ry, &mask, &single)?.remove(0);
    let first = ods_minimize(ry, &mask, &start, opts);
    let node0 = layout.node_range(0);
    let rescaled: Vec<Complex64> = first
        .h_prime
        .iter()
        .enumerate()
        .map(|(i, z)| {
            if node0.contains(&i) {
                z * alpha
            } else {
                z / alpha
            }
        })
        .collect();
    let second = ods_minimize(ry, &mask, &rescaled, opts);
    let first_normalized = normalize_to_reference(&first.h_prime, layout.ref_index())?;
    let second_normalized = normalize_to_reference(&second.h_prime, layout.ref_index())?;
    Ok(AmbiguityDemo {
        cost_difference: (first.cost - second.cost).abs(),
        angle: crate::metrics::hermitian_angle(&first_normalized, &second_normalized)?,
        first,
        second,
        first_normalized,
        second_normalized,
    })
}

/// Dispatches to the estimator selected by `method`.
pub fn estimate_rtf(
    method: Method,
    ry: &HermitianMatrix,
    rv: &HermitianMatrix,
    layout: &NodeLayout,
    ods: &OdsOptions,
) -> Result<RtfEstimate> {
    match method {
        Method::Biased => rtf_biased(ry, layout),
        Method::Cw => rtf_cw(ry, rv, layout),
        Method::CwD => rtf_cw_d(ry, rv, layout),
        Method::Ods => rtf_ods(ry, layout, ods),
    }
}
