//! Alamouti-coded 16-QAM spread over Walsh-Hadamard code channels.
//!
//! Signal flow for one user and one subcarrier group:
//!
//! 1. two 16-QAM symbols form the Alamouti codeword
//!    `X = [[s1, -s2*], [s2, s1*]]` (rows are streams, columns time slots);
//! 2. on the `i`-th subcarrier of the group the user sends `F · c_i · X`;
//! 3. the receiver despreads with its own code, `Ȳ = Σ_i c_i Y_i`;
//! 4. ML detection runs on `Ȳ = h_eff X + noise`, `h_eff = √ρ Σ_i H_i F_i`.

use num_complex::Complex64;

use crate::linalg::CMatrix;
use crate::{Error, Result};

/// Streams and time slots of the Alamouti code.
pub const ALAMOUTI_M: usize = 2;
pub const ALAMOUTI_T: usize = 2;

/// Gray-mapped square 16-QAM with unit average energy.
///
/// Symbol index bits `b3 b2 b1 b0`: `b3 b2` select the in-phase level and
/// `b1 b0` the quadrature level, each through the Gray sequence
/// `00, 01, 11, 10 → -3, -1, +1, +3` (scaled by `1/√10`).
#[derive(Debug, Clone)]
pub struct Constellation {
    points: [Complex64; 16],
}

const GRAY_LEVEL: [u8; 4] = [0b00, 0b01, 0b11, 0b10];

impl Default for Constellation {
    fn default() -> Self {
        Self::qam16()
    }
}

impl Constellation {
    pub fn qam16() -> Self {
        let scale = 1.0 / 10f64.sqrt();
        let mut points = [Complex64::new(0.0, 0.0); 16];
        for (li, &gi) in GRAY_LEVEL.iter().enumerate() {
            for (lq, &gq) in GRAY_LEVEL.iter().enumerate() {
                let idx = ((gi << 2) | gq) as usize;
                points[idx] = Complex64::new(
                    (2.0 * li as f64 - 3.0) * scale,
                    (2.0 * lq as f64 - 3.0) * scale,
                );
            }
        }
        Self { points }
    }

    pub fn points(&self) -> &[Complex64; 16] {
        &self.points
    }

    pub fn len(&self) -> usize {
        16
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, index: usize) -> Complex64 {
        self.points[index]
    }

    /// Index of the nearest point; boundary ties go to the lower level.
    pub fn slice(&self, z: Complex64) -> usize {
        let scale = 10f64.sqrt();
        let level = |x: f64| -> usize {
            // levels -3,-1,1,3 with thresholds at -2, 0, 2
            let x = x * scale;
            if x <= -2.0 {
                0
            } else if x <= 0.0 {
                1
            } else if x <= 2.0 {
                2
            } else {
                3
            }
        };
        ((GRAY_LEVEL[level(z.re)] << 2) | GRAY_LEVEL[level(z.im)]) as usize
    }

    /// Squared minimum distance between distinct points.
    pub fn min_distance_sqr(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..16 {
            for j in (i + 1)..16 {
                best = best.min((self.points[i] - self.points[j]).norm_sqr());
            }
        }
        best
    }
}

/// An Alamouti codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct Codeword {
    pub symbols: [Complex64; 2],
    /// `M × T` matrix `[[s1, -s2*], [s2, s1*]]`.
    pub x: CMatrix,
}

pub fn encode(symbols: [Complex64; 2]) -> Codeword {
    let [s1, s2] = symbols;
    let x = CMatrix::from_row_slice(2, 2, &[s1, -s2.conj(), s2, s1.conj()]);
    Codeword { symbols, x }
}

/// Minimum `μ_0` over all distinct codeword pairs of a constellation.
///
/// For Alamouti, `(X - X̂)(X - X̂)^H = (|Δs1|² + |Δs2|²) I`, so the minimum
/// over pairs is the constellation's squared minimum distance.
pub fn min_distance_factor(constellation: &Constellation) -> f64 {
    constellation.min_distance_sqr()
}

/// Rows of a Sylvester-Hadamard matrix used as spreading codes.
#[derive(Debug, Clone)]
pub struct SpreadingCodeSet {
    codes: Vec<Vec<f64>>,
}

impl SpreadingCodeSet {
    /// First `n_u` rows of the `n_v × n_v` Walsh-Hadamard matrix.
    pub fn walsh(n_v: usize, n_u: usize) -> Result<Self> {
        if n_v == 0 || !n_v.is_power_of_two() {
            return Err(Error::invalid("n_v", format!("{n_v} is not a power of two")));
        }
        if n_u == 0 || n_u > n_v {
            return Err(Error::invalid("n_u", format!("{n_u} users do not fit {n_v} codes")));
        }
        let codes = (0..n_u)
            .map(|k| {
                (0..n_v)
                    .map(|i| if (k & i).count_ones() % 2 == 0 { 1.0 } else { -1.0 })
                    .collect()
            })
            .collect();
        Ok(Self { codes })
    }

    pub fn n_v(&self) -> usize {
        self.codes[0].len()
    }

    pub fn n_u(&self) -> usize {
        self.codes.len()
    }

    pub fn code(&self, user: usize) -> &[f64] {
        &self.codes[user]
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }
}

/// Subcarrier indices of group `g`: `{g + m·N_c/N_v}`, the widest spacing.
pub fn group_subcarriers(group: usize, n_c: usize, n_v: usize) -> Result<Vec<usize>> {
    if n_v == 0 || !n_c.is_multiple_of(n_v) {
        return Err(Error::invalid(
            "n_v",
            format!("N_c = {n_c} is not a multiple of N_v = {n_v}"),
        ));
    }
    let stride = n_c / n_v;
    if group >= stride {
        return Err(Error::invalid("group", format!("group {group} >= {stride}")));
    }
    Ok((0..n_v).map(|m| group + m * stride).collect())
}

/// Per-subcarrier transmit blocks `F · c_i · X` (each `N_t × T`).
///
/// `n_c` is checked against the code length so a group assignment exists.
pub fn spread_and_map(
    cw: &Codeword,
    code: &[f64],
    precoder: &CMatrix,
    n_c: usize,
) -> Result<Vec<CMatrix>> {
    if code.is_empty() || !n_c.is_multiple_of(code.len()) {
        return Err(Error::invalid(
            "n_v",
            format!("N_c = {n_c} is not a multiple of N_v = {}", code.len()),
        ));
    }
    if precoder.ncols() != cw.x.nrows() {
        return Err(Error::Dimension(format!(
            "precoder has {} columns for {} streams",
            precoder.ncols(),
            cw.x.nrows()
        )));
    }
    let fx = precoder * &cw.x;
    Ok(code.iter().map(|&c| &fx * Complex64::new(c, 0.0)).collect())
}

/// Equal-gain despreading `Ȳ = Σ_i c_i Y_i` over `1 × T` rows.
pub fn despread_egc(received: &[Vec<Complex64>], code: &[f64]) -> Result<Vec<Complex64>> {
    if received.len() != code.len() {
        return Err(Error::Dimension(format!(
            "{} received rows for a length-{} code",
            received.len(),
            code.len()
        )));
    }
    let t = received.first().map_or(0, Vec::len);
    let mut out = vec![Complex64::new(0.0, 0.0); t];
    for (row, &c) in received.iter().zip(code) {
        for (acc, y) in out.iter_mut().zip(row) {
            *acc += y * c;
        }
    }
    Ok(out)
}

/// `h · X` for a `1 × 2` row `h` and an Alamouti codeword, without
/// building the matrix.
#[inline]
pub fn alamouti_response(h: [Complex64; 2], s: [Complex64; 2]) -> [Complex64; 2] {
    [
        h[0] * s[0] + h[1] * s[1],
        -h[0] * s[1].conj() + h[1] * s[0].conj(),
    ]
}

/// Exhaustive ML detection over all 256 codewords.
///
/// `effective_channel` already includes `√ρ`. Returns symbol indices; ties
/// go to the lowest pair index `16·i1 + i2`.
pub fn ml_detect(
    combined: &[Complex64],
    effective_channel: &[Complex64],
    constellation: &Constellation,
) -> Result<[usize; 2]> {
    let (y, h) = alamouti_rows(combined, effective_channel)?;
    let mut best = ([0usize, 0usize], f64::INFINITY);
    for i1 in 0..16 {
        for i2 in 0..16 {
            let s = [constellation.point(i1), constellation.point(i2)];
            let r = alamouti_response(h, s);
            let metric = (y[0] - r[0]).norm_sqr() + (y[1] - r[1]).norm_sqr();
            if metric < best.1 {
                best = ([i1, i2], metric);
            }
        }
    }
    Ok(best.0)
}

/// Linear Alamouti decoupling followed by per-symbol slicing.
///
/// Same decisions as [`ml_detect`] away from decision boundaries; a zero
/// channel returns the all-zero index pair.
pub fn alamouti_detect(
    combined: &[Complex64],
    effective_channel: &[Complex64],
    constellation: &Constellation,
) -> Result<[usize; 2]> {
    let (y, h) = alamouti_rows(combined, effective_channel)?;
    Ok(alamouti_decide(y, h, constellation))
}

#[inline]
pub(crate) fn alamouti_decide(
    y: [Complex64; 2],
    h: [Complex64; 2],
    constellation: &Constellation,
) -> [usize; 2] {
    let gain = h[0].norm_sqr() + h[1].norm_sqr();
    if gain == 0.0 {
        return [0, 0];
    }
    let z1 = (h[0].conj() * y[0] + h[1] * y[1].conj()) / gain;
    let z2 = (h[1].conj() * y[0] - h[0] * y[1].conj()) / gain;
    [constellation.slice(z1), constellation.slice(z2)]
}

fn alamouti_rows(
    combined: &[Complex64],
    channel: &[Complex64],
) -> Result<([Complex64; 2], [Complex64; 2])> {
    if combined.len() != ALAMOUTI_T || channel.len() != ALAMOUTI_M {
        return Err(Error::Dimension(format!(
            "expected 1x{ALAMOUTI_T} signal and 1x{ALAMOUTI_M} channel, got {} and {}",
            combined.len(),
            channel.len()
        )));
    }
    Ok(([combined[0], combined[1]], [channel[0], channel[1]]))
}
