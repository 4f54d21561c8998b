//! Transmit-correlated frequency-selective MISO channels.
//!
//! Each of the `L` delay taps is an independent row vector `G_l = g · R^{1/2}`
//! with `g ~ CN(0, I)`, so every tap has covariance `R`. Taps are equal power
//! and sit on the integer sampling grid `l = 0..L-1`. Under this model every
//! subcarrier response `H_n = Σ_l G_l e^{-j2πnl/N_c}` is distributed as
//! `CN(0, L·R)` regardless of `n`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{self, CMatrix};
use crate::{Error, Result};

/// Oscillators per tap entry in the sum-of-sinusoids fading generator.
pub const JAKES_OSCILLATORS: usize = 32;

/// Exponential transmit correlation `R(m, n) = κ^|m-n|`.
pub fn exponential_correlation(kappa: f64, n_tx: usize) -> Result<CMatrix> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::invalid("kappa", format!("{kappa} is outside [0, 1)")));
    }
    if n_tx == 0 {
        return Err(Error::invalid("n_tx", "need at least one antenna"));
    }
    Ok(CMatrix::from_fn(n_tx, n_tx, |m, n| {
        Complex64::new(kappa.powi(m.abs_diff(n) as i32), 0.0)
    }))
}

/// Transmit correlation plus tap count; the tap correlation is the identity.
#[derive(Debug, Clone)]
pub struct CorrelationModel {
    kappa: f64,
    r0: CMatrix,
    tap_count: usize,
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
    sqrt: CMatrix,
}

impl CorrelationModel {
    /// Exponential correlation model with `tap_count` equal-power taps.
    pub fn exponential(kappa: f64, n_tx: usize, tap_count: usize) -> Result<Self> {
        let r0 = exponential_correlation(kappa, n_tx)?;
        let mut model = Self::from_matrix(r0, tap_count)?;
        model.kappa = kappa;
        Ok(model)
    }

    /// Arbitrary Hermitian PSD correlation matrix with unit diagonal.
    pub fn from_matrix(r0: CMatrix, tap_count: usize) -> Result<Self> {
        if tap_count == 0 {
            return Err(Error::invalid("tap_count", "need at least one tap"));
        }
        if r0.nrows() == 0 || r0.nrows() != r0.ncols() {
            return Err(Error::Dimension(format!(
                "correlation matrix must be square and non-empty, got {}x{}",
                r0.nrows(),
                r0.ncols()
            )));
        }
        if !linalg::is_psd(&r0) {
            return Err(Error::NotPositiveSemiDefinite("R_0"));
        }
        if r0.diagonal().iter().any(|d| (d.re - 1.0).abs() > 1e-9 || d.im.abs() > 1e-9) {
            return Err(Error::invalid("r0", "diagonal entries must equal one"));
        }
        let (eigenvalues, eigenvectors) = linalg::hermitian_eigen(&r0);
        let sqrt = linalg::psd_sqrt(&eigenvalues, &eigenvectors);
        Ok(Self {
            kappa: f64::NAN,
            r0,
            tap_count,
            eigenvalues,
            eigenvectors,
            sqrt,
        })
    }

    pub fn n_tx(&self) -> usize {
        self.r0.nrows()
    }

    /// Correlation coefficient; `NaN` when built from an explicit matrix.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn tap_count(&self) -> usize {
        self.tap_count
    }

    pub fn r0(&self) -> &CMatrix {
        &self.r0
    }

    /// Eigenvalues of `R_0`, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors of `R_0` as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    /// `R_0^{1/2}` with eigenvalues below 1e-12 clamped to zero.
    pub fn sqrt(&self) -> &CMatrix {
        &self.sqrt
    }

    /// Per-subcarrier covariance `L·R_0`, identical on every subcarrier.
    pub fn subcarrier_covariance(&self) -> CMatrix {
        &self.r0 * Complex64::new(self.tap_count as f64, 0.0)
    }

    /// Colour one white row `g ~ CN(0, I)` into `g · R^{1/2}`.
    pub fn colour(&self, white: &[Complex64]) -> Vec<Complex64> {
        linalg::row_times(white, &self.sqrt)
    }

    /// Draw `L` independent taps, each with covariance `R_0`.
    pub fn draw_taps<R: Rng + ?Sized>(&self, rng: &mut R) -> MultipathChannel {
        let n = self.n_tx();
        let taps = (0..self.tap_count)
            .map(|_| {
                let white: Vec<Complex64> =
                    (0..n).map(|_| linalg::complex_gaussian(rng)).collect();
                self.colour(&white)
            })
            .collect();
        MultipathChannel { taps }
    }
}

/// Time-domain taps `G_{0,l}`; tap `l` has delay `l` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    pub taps: Vec<Vec<Complex64>>,
}

/// Frequency response `H_{0,n}` of one subcarrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SubcarrierResponse {
    pub index: usize,
    pub h: Vec<Complex64>,
}

/// DFT weights `W_n = [e^{-j2πn·0/N_c}, ..., e^{-j2πn(L-1)/N_c}]`.
pub fn dft_weights(n: usize, n_c: usize, taps: usize) -> Vec<Complex64> {
    (0..taps)
        .map(|l| {
            // reduce before scaling so large n·l keeps full phase precision
            let k = (n as u128 * l as u128 % n_c as u128) as f64;
            Complex64::from_polar(1.0, -2.0 * PI * k / n_c as f64)
        })
        .collect()
}

impl MultipathChannel {
    pub fn tap_count(&self) -> usize {
        self.taps.len()
    }

    pub fn n_tx(&self) -> usize {
        self.taps.first().map_or(0, Vec::len)
    }

    /// `H_n = Σ_l G_l · e^{-j2πnl/N_c}`.
    pub fn frequency_response(&self, n: usize, n_c: usize) -> Result<SubcarrierResponse> {
        if n >= n_c {
            return Err(Error::invalid(
                "n",
                format!("subcarrier {n} is outside [0, {n_c})"),
            ));
        }
        let weights = dft_weights(n, n_c, self.tap_count());
        let mut h = vec![Complex64::new(0.0, 0.0); self.n_tx()];
        for (tap, w) in self.taps.iter().zip(&weights) {
            for (acc, g) in h.iter_mut().zip(tap) {
                *acc += g * w;
            }
        }
        Ok(SubcarrierResponse { index: n, h })
    }

    /// `α·self + β·other`, used to check linearity of the response.
    pub fn combine(&self, alpha: Complex64, other: &Self, beta: Complex64) -> Self {
        let taps = self
            .taps
            .iter()
            .zip(&other.taps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| alpha * x + beta * y).collect())
            .collect();
        Self { taps }
    }
}

#[derive(Debug, Clone, Copy)]
struct Oscillator {
    phasor: Complex64,
    /// Rotation applied per frame, `e^{j2π f_D cos(α) T_F}`.
    step: Complex64,
}

/// Sum-of-sinusoids inter-frame fading.
///
/// Every (tap, antenna) entry of the white channel is an independent
/// unit-power process built from [`JAKES_OSCILLATORS`] complex exponentials
/// with arrival angles `α_k = (2πk + θ)/K` and random initial phases; the
/// white row is then coloured by `R_0^{1/2}`. The channel is frozen within a
/// frame and only changes when [`JakesProcess::evolve`] is called.
#[derive(Debug, Clone)]
pub struct JakesProcess {
    doppler_hz: f64,
    frame_s: f64,
    model: CorrelationModel,
    // [tap][antenna][oscillator]
    state: Vec<Vec<Vec<Oscillator>>>,
}

impl JakesProcess {
    pub fn new<R: Rng + ?Sized>(
        model: &CorrelationModel,
        doppler_hz: f64,
        frame_s: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(doppler_hz >= 0.0 && doppler_hz.is_finite()) {
            return Err(Error::invalid("doppler_hz", "must be finite and non-negative"));
        }
        if !(frame_s > 0.0 && frame_s.is_finite()) {
            return Err(Error::invalid("frame_s", "must be finite and positive"));
        }
        let k = JAKES_OSCILLATORS as f64;
        let amp = 1.0 / k.sqrt();
        let state = (0..model.tap_count())
            .map(|_| {
                (0..model.n_tx())
                    .map(|_| {
                        let offset: f64 = rng.random::<f64>() * 2.0 * PI;
                        (0..JAKES_OSCILLATORS)
                            .map(|n| {
                                let angle = (2.0 * PI * n as f64 + offset) / k;
                                let phase = rng.random::<f64>() * 2.0 * PI;
                                let advance = 2.0 * PI * doppler_hz * angle.cos() * frame_s;
                                Oscillator {
                                    phasor: Complex64::from_polar(amp, phase),
                                    step: if doppler_hz == 0.0 {
                                        Complex64::new(1.0, 0.0)
                                    } else {
                                        Complex64::from_polar(1.0, advance)
                                    },
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            doppler_hz,
            frame_s,
            model: model.clone(),
            state,
        })
    }

    pub fn doppler_hz(&self) -> f64 {
        self.doppler_hz
    }

    pub fn frame_s(&self) -> f64 {
        self.frame_s
    }

    /// Channel of the current frame.
    pub fn current(&self) -> MultipathChannel {
        let taps = self
            .state
            .iter()
            .map(|tap| {
                let white: Vec<Complex64> = tap
                    .iter()
                    .map(|osc| osc.iter().map(|o| o.phasor).sum())
                    .collect();
                self.model.colour(&white)
            })
            .collect();
        MultipathChannel { taps }
    }

    /// Step to the next frame and return its channel.
    pub fn evolve(&mut self) -> MultipathChannel {
        for o in self.state.iter_mut().flatten().flatten() {
            o.phasor *= o.step;
        }
        self.current()
    }
}
