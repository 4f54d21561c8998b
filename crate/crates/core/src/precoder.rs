//! Statistical precoder design for orthogonal STFBC.
//!
//! With the EGC-combined channel `Φ = Σ_i H_{0,i} ~ CN(0, L·N_v·R_0)` the
//! Chernoff bound on the pairwise error probability averages in closed form
//! to
//!
//! ```text
//! P̄ = det(I + η·L·N_v · F A F^H R_0)^{-1}
//! ```
//!
//! For an OSTBC (`A = μ_0 I`) the bound is minimised by steering along the
//! top `M` eigenvectors of `R_0` and water-filling the power over the
//! corresponding eigenvalues. Two cheap allocation rules cover the extremes:
//! equal power when `Γ = η·L·N_v` is large, a single beam on the strongest
//! eigen-direction when it is small.

use nalgebra::DVector;
use num_complex::Complex64;
use rand::Rng;

use crate::channel::CorrelationModel;
use crate::linalg::{self, CMatrix};
use crate::{Error, Result};

/// Bisection stops once `|Σ d_i² - 1|` drops below this.
pub const WATERFILL_TOL: f64 = 1e-10;
/// Iteration cap of the water-level bisection.
pub const WATERFILL_MAX_ITER: usize = 200;

/// The leading `M` eigenpairs of a transmit correlation matrix.
#[derive(Debug, Clone)]
pub struct EigenSpectrum {
    values: Vec<f64>,
    basis: CMatrix,
}

impl EigenSpectrum {
    /// Leading `m` eigenpairs of the model's `R_0`.
    pub fn from_model(model: &CorrelationModel, m: usize) -> Result<Self> {
        if m == 0 || m > model.n_tx() {
            return Err(Error::invalid(
                "m",
                format!("stream count {m} must lie in 1..={}", model.n_tx()),
            ));
        }
        let values = model.eigenvalues()[..m].iter().map(|&v| v.max(0.0)).collect();
        let basis = model.eigenvectors().columns(0, m).into_owned();
        Ok(Self { values, basis })
    }

    /// Spectrum with a standard-basis eigenbasis, for allocation studies.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        let m = values.len();
        Self::new(values, CMatrix::identity(m, m))
    }

    pub fn new(values: Vec<f64>, basis: CMatrix) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("values", "empty spectrum"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("values", "eigenvalues must be finite and non-negative"));
        }
        if values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::invalid("values", "eigenvalues must be sorted descending"));
        }
        if basis.ncols() != values.len() || basis.nrows() < values.len() {
            return Err(Error::Dimension(format!(
                "basis is {}x{} for {} eigenvalues",
                basis.nrows(),
                basis.ncols(),
                values.len()
            )));
        }
        if orthonormality_defect(&basis) > 1e-9 {
            return Err(Error::invalid("basis", "columns are not orthonormal"));
        }
        Ok(Self { values, basis })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    pub fn m(&self) -> usize {
        self.values.len()
    }

    pub fn n_tx(&self) -> usize {
        self.basis.nrows()
    }
}

/// Codeword distance product matrix `A_0 = (X - X̂)(X - X̂)^H`.
#[derive(Debug, Clone)]
pub struct CodewordDistance {
    a0: CMatrix,
    mu0: f64,
    va: CMatrix,
    da: Vec<f64>,
}

impl CodewordDistance {
    /// `A_0 = μ_0 I_M`, the distance structure of any OSTBC pair.
    pub fn ostbc(mu0: f64, m: usize) -> Result<Self> {
        if !(mu0 > 0.0 && mu0.is_finite()) {
            return Err(Error::invalid("mu0", "distance factor must be positive"));
        }
        if m == 0 {
            return Err(Error::invalid("m", "need at least one stream"));
        }
        Ok(Self {
            a0: CMatrix::identity(m, m) * Complex64::new(mu0, 0.0),
            mu0,
            va: CMatrix::identity(m, m),
            da: vec![mu0; m],
        })
    }

    /// General Hermitian PSD distance matrix. `μ_0` is its smallest
    /// eigenvalue, which coincides with the common value for an OSTBC.
    pub fn new(a0: CMatrix) -> Result<Self> {
        if a0.nrows() == 0 || !linalg::is_psd(&a0) {
            return Err(Error::NotPositiveSemiDefinite("A_0"));
        }
        let (values, va) = linalg::hermitian_eigen(&a0);
        let da: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
        let mu0 = *da.last().expect("non-empty");
        Ok(Self { a0, mu0, va, da })
    }

    /// Distance matrix of a codeword pair.
    pub fn from_codewords(x: &CMatrix, x_hat: &CMatrix) -> Result<Self> {
        if x.shape() != x_hat.shape() {
            return Err(Error::Dimension("codewords differ in shape".into()));
        }
        let diff = x - x_hat;
        Self::new(&diff * diff.adjoint())
    }

    pub fn a0(&self) -> &CMatrix {
        &self.a0
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    /// Eigenvectors of `A_0`, descending eigenvalue order.
    pub fn va(&self) -> &CMatrix {
        &self.va
    }

    pub fn da(&self) -> &[f64] {
        &self.da
    }

    pub fn m(&self) -> usize {
        self.a0.nrows()
    }

    /// True when `A_0` is `μ_0 I` to machine precision.
    pub fn is_scaled_identity(&self) -> bool {
        let target = CMatrix::identity(self.m(), self.m()) * Complex64::new(self.mu0, 0.0);
        (&self.a0 - target).norm() <= 1e-12 * self.mu0.max(1.0)
    }
}

/// `F_0 = V_0 · diag(d) · U_0^H`.
#[derive(Debug, Clone)]
pub struct Precoder {
    v: CMatrix,
    d: Vec<f64>,
    u: CMatrix,
}

impl Precoder {
    /// Build from a direction matrix, a power vector `d²` summing to one, and
    /// a unitary `U_0`.
    pub fn new(v: CMatrix, powers: &[f64], u: CMatrix) -> Result<Self> {
        let m = powers.len();
        if v.ncols() != m || u.nrows() != m || u.ncols() != m || v.nrows() < m {
            return Err(Error::Dimension(format!(
                "V is {}x{}, U is {}x{}, {} powers",
                v.nrows(),
                v.ncols(),
                u.nrows(),
                u.ncols(),
                m
            )));
        }
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("powers", "must be finite and non-negative"));
        }
        let total: f64 = powers.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("powers", format!("sum to {total}, expected 1")));
        }
        if orthonormality_defect(&v) > 1e-9 {
            return Err(Error::invalid("v", "columns are not orthonormal"));
        }
        if orthonormality_defect(&u) > 1e-9 {
            return Err(Error::invalid("u", "not unitary"));
        }
        Ok(Self {
            v,
            d: powers.iter().map(|p| p.sqrt()).collect(),
            u,
        })
    }

    pub fn v(&self) -> &CMatrix {
        &self.v
    }

    pub fn u(&self) -> &CMatrix {
        &self.u
    }

    /// Amplitudes `d_i`.
    pub fn amplitudes(&self) -> &[f64] {
        &self.d
    }

    /// Powers `d_i²`.
    pub fn powers(&self) -> Vec<f64> {
        self.d.iter().map(|d| d * d).collect()
    }

    pub fn n_tx(&self) -> usize {
        self.v.nrows()
    }

    pub fn m(&self) -> usize {
        self.d.len()
    }

    /// The full `N_t × M` precoding matrix.
    pub fn matrix(&self) -> CMatrix {
        let diag = CMatrix::from_diagonal(&DVector::from_iterator(
            self.d.len(),
            self.d.iter().map(|&d| Complex64::new(d, 0.0)),
        ));
        &self.v * diag * self.u.adjoint()
    }
}

/// `η = ρ / (4(N_v σ_n² + σ_MUI²))` and `Γ = η L N_v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveSinr {
    pub eta: f64,
    pub gamma: f64,
}

impl EffectiveSinr {
    pub fn new(rho: f64, noise_var: f64, mui_var: f64, n_v: usize, taps: usize) -> Result<Self> {
        if !(rho >= 0.0 && noise_var >= 0.0 && mui_var >= 0.0) {
            return Err(Error::invalid("sinr", "powers and variances must be non-negative"));
        }
        let denom = 4.0 * (n_v as f64 * noise_var + mui_var);
        if denom <= 0.0 {
            return Err(Error::invalid("sinr", "noise plus interference must be positive"));
        }
        Self::from_eta(rho / denom, taps, n_v)
    }

    pub fn from_eta(eta: f64, taps: usize, n_v: usize) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid("eta", "must be finite and non-negative"));
        }
        Ok(Self {
            eta,
            gamma: scale(eta, taps, n_v),
        })
    }
}

#[inline]
fn scale(eta: f64, taps: usize, n_v: usize) -> f64 {
    eta * (taps * n_v) as f64
}

/// Average PEP bound `det(I + η L N_v F A F^H R_0)^{-1}`.
pub fn pep_bound(
    prec: &Precoder,
    dist: &CodewordDistance,
    model: &CorrelationModel,
    sinr: &EffectiveSinr,
    n_v: usize,
) -> Result<f64> {
    pep_bound_matrix(&prec.matrix(), dist, model, sinr.eta, n_v)
}

/// [`pep_bound`] for an arbitrary (possibly unnormalised) precoding matrix.
pub fn pep_bound_matrix(
    f: &CMatrix,
    dist: &CodewordDistance,
    model: &CorrelationModel,
    eta: f64,
    n_v: usize,
) -> Result<f64> {
    if f.nrows() != model.n_tx() || f.ncols() != dist.m() {
        return Err(Error::Dimension(format!(
            "precoder is {}x{}, expected {}x{}",
            f.nrows(),
            f.ncols(),
            model.n_tx(),
            dist.m()
        )));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::invalid("eta", "must be finite and non-negative"));
    }
    let c = scale(eta, model.tap_count(), n_v);
    let n = model.n_tx();
    let inner = f * dist.a0() * f.adjoint() * model.r0() * Complex64::new(c, 0.0);
    let det = (CMatrix::identity(n, n) + inner).determinant();
    Ok(1.0 / det.re)
}

/// Monte Carlo average of `exp(-η Φ F A F^H Φ^H)` over `Φ ~ CN(0, L N_v R_0)`,
/// the quantity [`pep_bound_matrix`] evaluates in closed form.
pub fn pep_bound_monte_carlo<R: Rng + ?Sized>(
    f: &CMatrix,
    dist: &CodewordDistance,
    model: &CorrelationModel,
    eta: f64,
    n_v: usize,
    draws: u64,
    rng: &mut R,
) -> Result<f64> {
    // validates dimensions and η
    pep_bound_matrix(f, dist, model, eta, n_v)?;
    if draws == 0 {
        return Err(Error::NoData("zero Monte Carlo draws".into()));
    }
    let amp = ((model.tap_count() * n_v) as f64).sqrt();
    let q = f * dist.a0() * f.adjoint();
    let mut acc = 0.0;
    for _ in 0..draws {
        let white: Vec<Complex64> = (0..model.n_tx())
            .map(|_| linalg::complex_gaussian(rng) * amp)
            .collect();
        let phi = model.colour(&white);
        let qphi = linalg::row_times(&phi, &q);
        let quad: f64 = qphi.iter().zip(&phi).map(|(a, x)| (a * x.conj()).re).sum();
        acc += (-eta * quad).exp();
    }
    Ok(acc / draws as f64)
}

/// Optimal direction: `V_0` = leading eigenvectors of `R_0`, `U_0 = V_A`.
pub fn design_direction(spectrum: &EigenSpectrum, dist: &CodewordDistance) -> (CMatrix, CMatrix) {
    (spectrum.basis().clone(), dist.va().clone())
}

/// Solution of the water-filling problem.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterFilling {
    /// `d_i²`, summing to one.
    pub powers: Vec<f64>,
    /// Water level `ν*`.
    pub level: f64,
    /// Per-direction gains `Γ·d_{A,i}·d_{R,i}`.
    pub gains: Vec<f64>,
}

fn check_dims(spectrum: &EigenSpectrum, dist: &CodewordDistance) -> Result<()> {
    if spectrum.m() != dist.m() {
        return Err(Error::Dimension(format!(
            "spectrum has {} directions, distance matrix {}",
            spectrum.m(),
            dist.m()
        )));
    }
    Ok(())
}

/// Water-filling power allocation maximising `Π (1 + a_i d_i²)` with
/// `a_i = Γ·d_{A,i}·d_{R,i}` under `Σ d_i² = 1`.
///
/// The water level `ν` is located by bisection on `(0, max a_i]`; once the
/// active set is known the allocation `d_i² = 1/ν - 1/a_i` is evaluated in
/// closed form so the powers sum to one to rounding.
pub fn waterfill(
    spectrum: &EigenSpectrum,
    dist: &CodewordDistance,
    sinr: &EffectiveSinr,
    n_v: usize,
    model: &CorrelationModel,
) -> Result<WaterFilling> {
    check_dims(spectrum, dist)?;
    let gamma = scale(sinr.eta, model.tap_count(), n_v);
    let gains: Vec<f64> = spectrum
        .values()
        .iter()
        .zip(dist.da())
        .map(|(r, a)| gamma * r * a)
        .collect();
    waterfill_gains(&gains)
}

/// Water-filling on raw gains `a_i`.
pub fn waterfill_gains(gains: &[f64]) -> Result<WaterFilling> {
    if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
        return Err(Error::invalid("gains", "must be finite and non-negative"));
    }
    let top = gains.iter().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err(Error::invalid("spectrum", "all eigen-directions have zero gain"));
    }
    let fill = |nu: f64| -> f64 {
        gains
            .iter()
            .filter(|&&a| a > 0.0)
            .map(|&a| (1.0 / nu - 1.0 / a).max(0.0))
            .sum()
    };

    // fill(ν) is continuous and strictly decreasing while positive:
    // fill(0+) = ∞, fill(top) = 0.
    let (mut lo, mut hi) = (0.0, top);
    let mut nu = 0.5 * top;
    let mut converged = false;
    for _ in 0..WATERFILL_MAX_ITER {
        nu = 0.5 * (lo + hi);
        let s = fill(nu);
        if (s - 1.0).abs() < WATERFILL_TOL || nu <= lo || nu >= hi {
            converged = true;
            break;
        }
        if s > 1.0 {
            lo = nu;
        } else {
            hi = nu;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations: WATERFILL_MAX_ITER,
        });
    }

    let mut active: Vec<usize> = (0..gains.len()).filter(|&i| gains[i] > nu).collect();
    if active.is_empty() {
        active.push(argmax_first(gains));
    }
    // Drop directions whose closed-form share turns negative (only at the
    // boundary of the active set, where bisection may land on either side).
    let powers = loop {
        let k = active.len() as f64;
        let mut p = vec![0.0; gains.len()];
        for &i in &active {
            let spread: f64 = active
                .iter()
                .map(|&j| (gains[i] - gains[j]) / (gains[i] * gains[j]))
                .sum();
            p[i] = (1.0 + spread) / k;
        }
        match active.iter().position(|&i| p[i] < 0.0) {
            Some(pos) if active.len() > 1 => {
                active.remove(pos);
            }
            _ => break p,
        }
    };
    let total: f64 = powers.iter().sum();
    let powers: Vec<f64> = powers.iter().map(|p| p.max(0.0) / total).collect();
    let k = active.len() as f64;
    let level = k / (1.0 + active.iter().map(|&i| 1.0 / gains[i]).sum::<f64>());
    Ok(WaterFilling {
        powers,
        level,
        gains: gains.to_vec(),
    })
}

/// `d_i² = 1/M`.
pub fn equal_power(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// All power on `m* = argmax_m d_{A,m} d_{R,m}`, lowest index on ties.
pub fn single_beam(spectrum: &EigenSpectrum, dist: &CodewordDistance) -> Result<Vec<f64>> {
    check_dims(spectrum, dist)?;
    let score: Vec<f64> = spectrum
        .values()
        .iter()
        .zip(dist.da())
        .map(|(r, a)| r * a)
        .collect();
    let mut p = vec![0.0; score.len()];
    p[argmax_first(&score)] = 1.0;
    Ok(p)
}

/// High-SNR coding gain `L N_v (Π_m d_m² d_{A,m} d_{R,m})^{1/N_t}`.
pub fn coding_gain(
    powers: &[f64],
    dist: &CodewordDistance,
    spectrum: &EigenSpectrum,
    taps: usize,
    n_v: usize,
) -> Result<f64> {
    check_dims(spectrum, dist)?;
    if powers.len() != spectrum.m() {
        return Err(Error::Dimension(format!(
            "{} powers for {} directions",
            powers.len(),
            spectrum.m()
        )));
    }
    let product: f64 = powers
        .iter()
        .zip(dist.da())
        .zip(spectrum.values())
        .map(|((p, a), r)| p * a * r)
        .product();
    if product <= 0.0 {
        return Ok(0.0);
    }
    let diversity = spectrum.n_tx() as f64;
    Ok((taps * n_v) as f64 * product.powf(1.0 / diversity))
}

/// Least-squares slope of `-ln P̄` against `ln η`.
///
/// Meaningful as a diversity estimate only on the high-SNR part of the
/// curve; below roughly `η = 10^3` the identity term bends the slope.
pub fn diversity_slope(curve: &[(f64, f64)]) -> Result<f64> {
    if curve.len() < 2 {
        return Err(Error::NoData("need at least two (eta, bound) samples".into()));
    }
    if curve.iter().any(|&(e, p)| !(e > 0.0 && p > 0.0)) {
        return Err(Error::invalid("curve", "eta and bound values must be positive"));
    }
    let n = curve.len() as f64;
    let xs: Vec<f64> = curve.iter().map(|(e, _)| e.ln()).collect();
    let ys: Vec<f64> = curve.iter().map(|(_, p)| -p.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("curve", "all eta values coincide"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Power allocation rule of a statistical precoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerRule {
    WaterFilling,
    EqualPower,
    SingleBeam,
}

/// Assemble the statistical precoder for a correlation model.
pub fn statistical_precoder(
    model: &CorrelationModel,
    dist: &CodewordDistance,
    sinr: &EffectiveSinr,
    n_v: usize,
    rule: PowerRule,
) -> Result<Precoder> {
    let spectrum = EigenSpectrum::from_model(model, dist.m())?;
    let (v, u) = design_direction(&spectrum, dist);
    let powers = match rule {
        PowerRule::WaterFilling => waterfill(&spectrum, dist, sinr, n_v, model)?.powers,
        PowerRule::EqualPower => equal_power(dist.m()),
        PowerRule::SingleBeam => single_beam(&spectrum, dist)?,
    };
    Precoder::new(v, &powers, u)
}

/// `max |V^H V - I|` entrywise.
pub(crate) fn orthonormality_defect(v: &CMatrix) -> f64 {
    let gram = v.adjoint() * v;
    let id = CMatrix::identity(v.ncols(), v.ncols());
    (gram - id).iter().map(|z| z.norm()).fold(0.0, f64::max)
}
