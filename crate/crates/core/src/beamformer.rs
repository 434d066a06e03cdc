//! MVDR beamformer `w = Rv^{-1} h / (h^H Rv^{-1} h)`.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::estimators::DIAGONAL_LOADING;
use crate::linalg::{cholesky_solve, cholesky_with_loading, inner, HermitianMatrix};
use crate::stft::SpectrogramTensor;

/// Per-bin filter vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformerWeights {
    pub w: Vec<Vec<Complex64>>,
}

impl BeamformerWeights {
    pub fn bins(&self) -> usize {
        self.w.len()
    }

    /// Passes channel `c` through unchanged in every bin.
    pub fn selector(bins: usize, channels: usize, c: usize) -> Self {
        let mut e = vec![Complex64::new(0.0, 0.0); channels];
        e[c] = Complex64::new(1.0, 0.0);
        BeamformerWeights { w: vec![e; bins] }
    }
}

/// MVDR weights for one bin, via a Cholesky solve of `Rv x = h`.
pub fn mvdr_weights(h: &[Complex64], rv: &HermitianMatrix) -> Result<Vec<Complex64>> {
    if h.len() != rv.dim() {
        return Err(Error::Shape(format!(
            "RTF has {} entries, noise covariance is {}x{}",
            h.len(),
            rv.dim(),
            rv.dim()
        )));
    }
    let (l, _) = cholesky_with_loading(rv, DIAGONAL_LOADING)?;
    let x = cholesky_solve(&l, h);
    let denom = inner(h, &x);
    if !(denom.re > 0.0) || !denom.re.is_finite() {
        return Err(Error::DegenerateBeamformer(denom.re));
    }
    if denom.im.abs() > 1e-10 * denom.re {
        return Err(Error::DegenerateBeamformer(denom.re));
    }
    Ok(x.into_iter().map(|z| z / denom.re).collect())
}

/// One MVDR filter per bin from per-bin RTFs and noise covariances.
pub fn mvdr(h_hat: &[Vec<Complex64>], rv: &[HermitianMatrix]) -> Result<BeamformerWeights> {
    if h_hat.len() != rv.len() {
        return Err(Error::Shape(format!(
            "{} RTF bins vs {} covariance bins",
            h_hat.len(),
            rv.len()
        )));
    }
    let w = h_hat
        .iter()
        .zip(rv)
        .map(|(h, r)| mvdr_weights(h, r))
        .collect::<Result<_>>()?;
    Ok(BeamformerWeights { w })
}

/// `Z(k, l) = w(k)^H y(k, l)` as a single-channel tensor.
pub fn apply(weights: &BeamformerWeights, spec: &SpectrogramTensor) -> Result<SpectrogramTensor> {
    if weights.bins() != spec.bins() || weights.w.iter().any(|w| w.len() != spec.channels()) {
        return Err(Error::Shape(format!(
            "weights for {} bins do not match tensor {:?}",
            weights.bins(),
            spec.shape()
        )));
    }
    let mut out = SpectrogramTensor::zeros(1, spec.bins(), spec.frames(), spec.params());
    for (k, w) in weights.w.iter().enumerate() {
        for (c, wc) in w.iter().enumerate() {
            let wc = wc.conj();
            if wc == Complex64::new(0.0, 0.0) {
                continue;
            }
            let src = spec.series(c, k);
            for (z, y) in out.series_mut(0, k).iter_mut().zip(src) {
                *z += wc * y;
            }
        }
    }
    Ok(out)
}
