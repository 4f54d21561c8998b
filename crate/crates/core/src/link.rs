//! Monte Carlo link engine for one subcarrier group of the MC-CDMA downlink.
//!
//! Every frame carries one Alamouti codeword per user. All `N_u` users share
//! the `N_v` subcarriers of group 0 and are separated by Walsh codes; the
//! receiver of user 0 despreads with its own code, treats the residual
//! multiuser interference as noise and ML-detects its two symbols.
//!
//! Frames are grouped into blocks of [`BLOCK_FRAMES`]. A block owns its own
//! random stream, derived from the master seed and the block index, and a
//! fresh Jakes process for the desired user's channel, which evolves from
//! frame to frame within the block. Every scheme of a sweep is evaluated on
//! the same channel, symbol and noise draws.

use std::collections::HashMap;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{CorrelationModel, JakesProcess};
use crate::linalg::{self, CMatrix};
use crate::precoder::{self, CodewordDistance, EffectiveSinr, PowerRule, Precoder};
use crate::stfbc::{self, Constellation, SpreadingCodeSet, ALAMOUTI_M};
use crate::{Error, Result};

/// Frames sharing one random stream and one fading trajectory.
pub const BLOCK_FRAMES: u64 = 32;
/// Blocks evaluated between two checks of the stopping rule.
pub const BATCH_BLOCKS: u64 = 32;
/// Frames used to estimate the MUI variance.
pub const MUI_FRAMES: u64 = 10_000;

const MUI_SEED_SALT: u64 = 0x6d75_695f_7661_7221;

/// Link parameters. Defaults follow the system parameter table with the
/// subcarrier count reduced to 64 and a single delay tap.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_c: usize,
    pub n_v: usize,
    pub n_t: usize,
    pub n_u: usize,
    pub l_taps: usize,
    pub rho: f64,
    pub noise_var: f64,
    pub kappa: f64,
    pub doppler_hz: f64,
    pub frame_s: f64,
    pub seed: u64,
    /// Frame cap per SNR point.
    pub trials: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            n_c: 64,
            n_v: 8,
            n_t: 4,
            n_u: 4,
            l_taps: 1,
            rho: 1.0,
            noise_var: 0.1,
            kappa: 0.3,
            doppler_hz: 50.0,
            frame_s: 0.005,
            seed: 1,
            trials: 2_000_000,
        }
    }
}

impl SystemConfig {
    /// Check the invariants; the error names the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::invalid(name, reason));
        for (name, v) in [
            ("n_c", self.n_c),
            ("n_v", self.n_v),
            ("n_t", self.n_t),
            ("n_u", self.n_u),
            ("l_taps", self.l_taps),
        ] {
            if v == 0 {
                return bad(name, "must be at least 1".into());
            }
        }
        if !self.n_c.is_multiple_of(self.n_v) {
            return bad(
                "n_v",
                format!("N_c mod N_v != 0 ({} mod {})", self.n_c, self.n_v),
            );
        }
        if !self.n_v.is_power_of_two() {
            return bad("n_v", format!("{} is not a power of two", self.n_v));
        }
        if self.n_u > self.n_v {
            return bad("n_u", format!("{} users exceed N_v = {}", self.n_u, self.n_v));
        }
        if self.n_t < ALAMOUTI_M {
            return bad("n_t", format!("need at least {ALAMOUTI_M} antennas"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad("rho", "must be finite and non-negative".into());
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return bad("noise_var", "must be finite and positive".into());
        }
        if !(0.0..1.0).contains(&self.kappa) {
            return bad("kappa", format!("{} is outside [0, 1)", self.kappa));
        }
        if !(self.doppler_hz >= 0.0 && self.doppler_hz.is_finite()) {
            return bad("doppler_hz", "must be finite and non-negative".into());
        }
        if !(self.frame_s > 0.0 && self.frame_s.is_finite()) {
            return bad("frame_s", "must be finite and positive".into());
        }
        Ok(())
    }

    /// `ρ / σ_n²` in dB.
    pub fn snr_db(&self) -> f64 {
        10.0 * (self.rho / self.noise_var).log10()
    }

    /// Copy with `σ_n² = ρ / 10^{snr/10}`.
    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        Self {
            noise_var: self.rho / 10f64.powf(snr_db / 10.0),
            ..self.clone()
        }
    }

    pub fn model(&self) -> Result<CorrelationModel> {
        CorrelationModel::exponential(self.kappa, self.n_t, self.l_taps)
    }
}

/// Transmission scheme of every user in the group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    /// Alamouti straight onto the first two antennas.
    OpenLoop,
    /// Statistical precoder along the eigenvectors of `R_0`.
    Statistical(PowerRule),
    /// Best antenna pair per frame from instantaneous group CSI.
    AntennaSelection,
    /// Per-subcarrier precoder from instantaneous CSI.
    IdealPrecoding,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::OpenLoop,
        Scheme::Statistical(PowerRule::WaterFilling),
        Scheme::Statistical(PowerRule::EqualPower),
        Scheme::Statistical(PowerRule::SingleBeam),
        Scheme::AntennaSelection,
        Scheme::IdealPrecoding,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::OpenLoop => "open-loop",
            Scheme::Statistical(PowerRule::WaterFilling) => "statistical-waterfill",
            Scheme::Statistical(PowerRule::EqualPower) => "statistical-equal",
            Scheme::Statistical(PowerRule::SingleBeam) => "statistical-single-beam",
            Scheme::AntennaSelection => "antenna-selection",
            Scheme::IdealPrecoding => "ideal",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.label() == label)
    }

    fn uses_sinr(&self) -> bool {
        matches!(self, Scheme::Statistical(PowerRule::WaterFilling))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Gaussian model of the despread MUI.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuiModel {
    /// `σ_MUI²` per combined sample.
    pub variance: f64,
    pub sample_count: u64,
}

impl MuiModel {
    pub const NONE: MuiModel = MuiModel {
        variance: 0.0,
        sample_count: 0,
    };
}

/// Symbol error counts of the desired user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    pub scheme: Scheme,
    pub symbol_errors: u64,
    pub symbols_sent: u64,
}

impl TrialResult {
    pub fn empty(scheme: Scheme) -> Self {
        Self {
            scheme,
            symbol_errors: 0,
            symbols_sent: 0,
        }
    }

    fn absorb(&mut self, other: &TrialResult) {
        self.symbol_errors += other.symbol_errors;
        self.symbols_sent += other.symbols_sent;
    }
}

/// Random inputs of one frame, shared by every scheme.
#[derive(Debug, Clone)]
pub struct FrameDraws {
    /// Desired user's responses on the group subcarriers (`N_v` rows).
    pub desired: Vec<Vec<Complex64>>,
    /// Each interferer's own responses, used only to design its precoder
    /// under the instantaneous-CSI schemes.
    pub interferer_csi: Vec<Vec<Vec<Complex64>>>,
    /// Symbol indices per user.
    pub symbols: Vec<[usize; 2]>,
    /// Unit-variance noise per subcarrier and time slot.
    pub noise: Vec<[Complex64; 2]>,
}

/// Precoding state of one scheme at one operating point.
#[derive(Debug, Clone)]
pub enum SchemeState {
    /// Same precoder for every user and subcarrier.
    Fixed { scheme: Scheme, f: Precoder, beams: Beams },
    AntennaSelection,
    IdealPrecoding,
}

impl SchemeState {
    pub fn scheme(&self) -> Scheme {
        match self {
            SchemeState::Fixed { scheme, .. } => *scheme,
            SchemeState::AntennaSelection => Scheme::AntennaSelection,
            SchemeState::IdealPrecoding => Scheme::IdealPrecoding,
        }
    }
}

/// Everything observed about one frame under one scheme.
#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub result: TrialResult,
    /// Despread signal `Ȳ`.
    pub combined: [Complex64; 2],
    /// Despread MUI term alone.
    pub mui: [Complex64; 2],
    /// `√ρ Σ_i H_{0,i} F_{0,i}`.
    pub effective_channel: [Complex64; 2],
    /// `ρ` times the mean `‖F‖_F²` over users and subcarriers.
    pub tx_power: f64,
}

/// N_t rows of a 2-column precoder.
pub type Beams = Vec<[Complex64; 2]>;

fn fixed(scheme: Scheme, f: Precoder) -> SchemeState {
    let beams = beams_of(&f.matrix());
    SchemeState::Fixed { scheme, f, beams }
}

fn beams_of(f: &CMatrix) -> Beams {
    (0..f.nrows()).map(|a| [f[(a, 0)], f[(a, 1)]]).collect()
}

#[inline]
fn apply(h: &[Complex64], f: &Beams) -> [Complex64; 2] {
    let mut g = [Complex64::new(0.0, 0.0); 2];
    for (x, row) in h.iter().zip(f) {
        g[0] += x * row[0];
        g[1] += x * row[1];
    }
    g
}

fn beam_energy(f: &Beams) -> f64 {
    f.iter().map(|r| r[0].norm_sqr() + r[1].norm_sqr()).sum()
}

/// Link context for one configuration: correlation model, code tables and
/// the group's subcarrier indices.
#[derive(Debug, Clone)]
pub struct Link {
    cfg: SystemConfig,
    model: CorrelationModel,
    constellation: Constellation,
    codes: SpreadingCodeSet,
    subcarriers: Vec<usize>,
    dist: CodewordDistance,
}

impl Link {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let constellation = Constellation::qam16();
        let dist = CodewordDistance::ostbc(stfbc::min_distance_factor(&constellation), ALAMOUTI_M)?;
        Ok(Self {
            model: cfg.model()?,
            codes: SpreadingCodeSet::walsh(cfg.n_v, cfg.n_u)?,
            subcarriers: stfbc::group_subcarriers(0, cfg.n_c, cfg.n_v)?,
            constellation,
            dist,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn model(&self) -> &CorrelationModel {
        &self.model
    }

    pub fn codes(&self) -> &SpreadingCodeSet {
        &self.codes
    }

    pub fn distance(&self) -> &CodewordDistance {
        &self.dist
    }

    pub fn subcarriers(&self) -> &[usize] {
        &self.subcarriers
    }

    /// Desired user's fading process for a new block.
    pub fn fading<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<JakesProcess> {
        JakesProcess::new(&self.model, self.cfg.doppler_hz, self.cfg.frame_s, rng)
    }

    fn responses(&self, chan: &crate::channel::MultipathChannel) -> Vec<Vec<Complex64>> {
        self.subcarriers
            .iter()
            .map(|&n| {
                chan.frequency_response(n, self.cfg.n_c)
                    .expect("group subcarriers lie below N_c")
                    .h
            })
            .collect()
    }

    /// Draw one frame; the desired channel is the fading process's current
    /// frame.
    pub fn draw_frame<R: Rng + ?Sized>(&self, fading: &JakesProcess, rng: &mut R) -> FrameDraws {
        let desired = self.responses(&fading.current());
        let interferer_csi = (1..self.cfg.n_u)
            .map(|_| self.responses(&self.model.draw_taps(rng)))
            .collect();
        let symbols = (0..self.cfg.n_u)
            .map(|_| [rng.random_range(0..16), rng.random_range(0..16)])
            .collect();
        let noise = (0..self.cfg.n_v)
            .map(|_| [linalg::complex_gaussian(rng), linalg::complex_gaussian(rng)])
            .collect();
        FrameDraws {
            desired,
            interferer_csi,
            symbols,
            noise,
        }
    }

    /// Precoding state of `scheme`; `mui` feeds the effective SINR of the
    /// water-filling design.
    pub fn prepare(&self, scheme: Scheme, mui: &MuiModel) -> Result<SchemeState> {
        Ok(match scheme {
            Scheme::OpenLoop => fixed(scheme, scheme_open_loop(&self.cfg)?),
            Scheme::Statistical(rule) => {
                let sinr = EffectiveSinr::new(
                    self.cfg.rho,
                    self.cfg.noise_var,
                    mui.variance,
                    self.cfg.n_v,
                    self.cfg.l_taps,
                )?;
                let f = precoder::statistical_precoder(&self.model, &self.dist, &sinr, self.cfg.n_v, rule)?;
                fixed(scheme, f)
            }
            Scheme::AntennaSelection => SchemeState::AntennaSelection,
            Scheme::IdealPrecoding => SchemeState::IdealPrecoding,
        })
    }

    /// Per-subcarrier precoders of every user (`[user][subcarrier]`).
    fn precoders(&self, draws: &FrameDraws, state: &SchemeState) -> Vec<Vec<Beams>> {
        let n_v = self.cfg.n_v;
        let csi = |k: usize| -> &[Vec<Complex64>] {
            if k == 0 {
                &draws.desired
            } else {
                &draws.interferer_csi[k - 1]
            }
        };
        (0..self.cfg.n_u)
            .map(|k| match state {
                SchemeState::Fixed { beams, .. } => vec![beams.clone(); n_v],
                SchemeState::AntennaSelection => {
                    let (a, b) = selection_pair(csi(k));
                    vec![selection_beams(self.cfg.n_t, a, b); n_v]
                }
                SchemeState::IdealPrecoding => csi(k).iter().map(|h| mrt_beams(h)).collect(),
            })
            .collect()
    }

    /// Spread, transmit, despread and detect one frame.
    pub fn transmit(&self, draws: &FrameDraws, state: &SchemeState) -> FrameOutcome {
        let n_v = self.cfg.n_v;
        let sqrt_rho = self.cfg.rho.sqrt();
        let sigma = self.cfg.noise_var.sqrt();
        let precoders = self.precoders(draws, state);
        let q = &self.constellation;

        let zero = Complex64::new(0.0, 0.0);
        let mut rx = vec![[zero; 2]; n_v];
        let mut mui = [zero; 2];
        let mut h_eff = [zero; 2];
        let c0 = self.codes.code(0);
        for (k, user_f) in precoders.iter().enumerate() {
            let code = self.codes.code(k);
            let s = draws.symbols[k];
            let s = [q.point(s[0]), q.point(s[1])];
            for i in 0..n_v {
                let g = apply(&draws.desired[i], &user_f[i]);
                let r = stfbc::alamouti_response([g[0] * sqrt_rho, g[1] * sqrt_rho], s);
                let c = code[i];
                rx[i][0] += r[0] * c;
                rx[i][1] += r[1] * c;
                if k == 0 {
                    h_eff[0] += g[0] * sqrt_rho;
                    h_eff[1] += g[1] * sqrt_rho;
                } else {
                    mui[0] += r[0] * (c * c0[i]);
                    mui[1] += r[1] * (c * c0[i]);
                }
            }
        }
        for (row, n) in rx.iter_mut().zip(&draws.noise) {
            row[0] += n[0] * sigma;
            row[1] += n[1] * sigma;
        }
        let mut combined = [zero; 2];
        for (row, &c) in rx.iter().zip(c0) {
            combined[0] += row[0] * c;
            combined[1] += row[1] * c;
        }
        let got = stfbc::alamouti_decide(combined, h_eff, q);
        let sent = draws.symbols[0];
        let errors = (got[0] != sent[0]) as u64 + (got[1] != sent[1]) as u64;
        let energy: f64 = precoders.iter().flatten().map(beam_energy).sum::<f64>()
            / (self.cfg.n_u * n_v) as f64;
        FrameOutcome {
            result: TrialResult {
                scheme: state.scheme(),
                symbol_errors: errors,
                symbols_sent: 2,
            },
            combined,
            mui,
            effective_channel: h_eff,
            tx_power: self.cfg.rho * energy,
        }
    }

    /// Run `frames` frames of block `block` and accumulate one result per
    /// state. Frames past the first evolve the desired channel.
    fn run_block(
        &self,
        states: &[SchemeState],
        active: &[bool],
        block: u64,
        frames: u64,
        seed: u64,
    ) -> Result<Vec<TrialResult>> {
        let mut rng = block_rng(seed, block);
        let mut fading = self.fading(&mut rng)?;
        let mut acc: Vec<TrialResult> = states.iter().map(|s| TrialResult::empty(s.scheme())).collect();
        for frame in 0..frames {
            if frame > 0 {
                fading.evolve();
            }
            let draws = self.draw_frame(&fading, &mut rng);
            for ((a, s), _) in acc.iter_mut().zip(states).zip(active).filter(|(_, &on)| on) {
                a.absorb(&self.transmit(&draws, s).result);
            }
        }
        Ok(acc)
    }
}

/// Random stream of block `block` under master seed `seed`.
pub fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// One frame through the full pipeline under `state`.
pub fn simulate_frame(link: &Link, draws: &FrameDraws, state: &SchemeState) -> TrialResult {
    link.transmit(draws, state).result
}

/// Sample variance of the despread MUI over [`MUI_FRAMES`] frames.
///
/// The water-filling precoder used here is designed without interference;
/// the estimate only feeds the effective SINR.
pub fn estimate_mui_variance(cfg: &SystemConfig, scheme: Scheme) -> Result<MuiModel> {
    let link = Link::new(cfg)?;
    if cfg.n_u == 1 {
        return Ok(MuiModel {
            variance: 0.0,
            sample_count: MUI_FRAMES,
        });
    }
    let state = link.prepare(scheme, &MuiModel::NONE)?;
    let seed = cfg.seed ^ MUI_SEED_SALT;
    let blocks = MUI_FRAMES.div_ceil(BLOCK_FRAMES);
    let sums: Vec<f64> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            let frames = BLOCK_FRAMES.min(MUI_FRAMES - b * BLOCK_FRAMES);
            let mut rng = block_rng(seed, b);
            let mut fading = link.fading(&mut rng)?;
            let mut acc = 0.0;
            for frame in 0..frames {
                if frame > 0 {
                    fading.evolve();
                }
                let draws = link.draw_frame(&fading, &mut rng);
                let out = link.transmit(&draws, &state);
                acc += 0.5 * (out.mui[0].norm_sqr() + out.mui[1].norm_sqr());
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    Ok(MuiModel {
        variance: sums.iter().sum::<f64>() / MUI_FRAMES as f64,
        sample_count: MUI_FRAMES,
    })
}

type MuiKey = (usize, usize, usize, usize, u64, u64, u64, Scheme);

/// MUI estimates keyed by everything they depend on.
#[derive(Debug, Default)]
pub struct MuiCache {
    entries: HashMap<MuiKey, MuiModel>,
}

impl MuiCache {
    pub fn get(&mut self, cfg: &SystemConfig, scheme: Scheme) -> Result<MuiModel> {
        let key = (
            cfg.n_u,
            cfg.n_v,
            cfg.n_t,
            cfg.l_taps,
            cfg.rho.to_bits(),
            cfg.kappa.to_bits(),
            cfg.seed,
            scheme,
        );
        if let Some(m) = self.entries.get(&key) {
            return Ok(*m);
        }
        let m = estimate_mui_variance(cfg, scheme)?;
        self.entries.insert(key, m);
        Ok(m)
    }
}

/// Alamouti on antennas 1 and 2 with equal power, no channel knowledge.
pub fn scheme_open_loop(cfg: &SystemConfig) -> Result<Precoder> {
    let v = CMatrix::identity(cfg.n_t, ALAMOUTI_M);
    Precoder::new(v, &precoder::equal_power(ALAMOUTI_M), CMatrix::identity(2, 2))
}

/// Antenna pair maximising the group channel energy; lowest pair on ties.
fn selection_pair(channels: &[Vec<Complex64>]) -> (usize, usize) {
    let n_t = channels.first().map_or(0, Vec::len);
    let energy: Vec<f64> = (0..n_t)
        .map(|a| channels.iter().map(|h| h[a].norm_sqr()).sum())
        .collect();
    let mut best = ((0, 1), f64::NEG_INFINITY);
    for a in 0..n_t {
        for b in (a + 1)..n_t {
            let e = energy[a] + energy[b];
            if e > best.1 {
                best = ((a, b), e);
            }
        }
    }
    best.0
}

fn selection_beams(n_t: usize, a: usize, b: usize) -> Beams {
    let w = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let zero = Complex64::new(0.0, 0.0);
    let mut f = vec![[zero; 2]; n_t];
    f[a][0] = w;
    f[b][1] = w;
    f
}

/// Best two antennas over the group, equal power on the pair.
pub fn scheme_antenna_selection(cfg: &SystemConfig, group: &[Vec<Complex64>]) -> Result<Precoder> {
    if group.is_empty() || group.iter().any(|h| h.len() != cfg.n_t) {
        return Err(Error::Dimension(format!("group channels must have {} entries", cfg.n_t)));
    }
    let (a, b) = selection_pair(group);
    let mut v = CMatrix::zeros(cfg.n_t, 2);
    v[(a, 0)] = Complex64::new(1.0, 0.0);
    v[(b, 1)] = Complex64::new(1.0, 0.0);
    Precoder::new(v, &precoder::equal_power(2), CMatrix::identity(2, 2))
}

/// Unit vector along `h^H`, `e_1` for a zero channel.
fn matched_direction(h: &[Complex64]) -> Vec<Complex64> {
    let norm = linalg::norm_sqr(h).sqrt();
    if norm == 0.0 {
        let mut e = vec![Complex64::new(0.0, 0.0); h.len()];
        e[0] = Complex64::new(1.0, 0.0);
        return e;
    }
    h.iter().map(|z| z.conj() / norm).collect()
}

fn mrt_beams(h: &[Complex64]) -> Beams {
    let zero = Complex64::new(0.0, 0.0);
    matched_direction(h).into_iter().map(|v| [v, zero]).collect()
}

/// Direction `[v_1, v_2]` with `v_1` matched to `h` and `v_2` any unit
/// vector orthogonal to it.
fn ideal_direction(h: &[Complex64]) -> CMatrix {
    let n = h.len();
    let v1 = matched_direction(h);
    let mut v = CMatrix::zeros(n, 2);
    for (a, z) in v1.iter().enumerate() {
        v[(a, 0)] = *z;
    }
    // Gram-Schmidt on the standard basis until a usable vector appears.
    for e in 0..n {
        let dot = v1[e].conj();
        let mut w: Vec<Complex64> = v1.iter().map(|z| -z * dot).collect();
        w[e] += Complex64::new(1.0, 0.0);
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-6 {
            for (a, z) in w.iter().enumerate() {
                v[(a, 1)] = z / norm;
            }
            break;
        }
    }
    v
}

/// Per-subcarrier precoders from instantaneous CSI.
///
/// `H^H H` has rank one for a single receive antenna, so water-filling over
/// its eigenvalues puts all power on the matched beam.
pub fn scheme_ideal_precoding(cfg: &SystemConfig, group: &[Vec<Complex64>]) -> Result<Vec<Precoder>> {
    group
        .iter()
        .map(|h| {
            if h.len() != cfg.n_t {
                return Err(Error::Dimension(format!("channel must have {} entries", cfg.n_t)));
            }
            let v = ideal_direction(h);
            let energy = linalg::norm_sqr(h);
            let powers = if energy > 0.0 {
                precoder::waterfill_gains(&[energy, 0.0])?.powers
            } else {
                vec![1.0, 0.0]
            };
            Precoder::new(v, &powers, CMatrix::identity(2, 2))
        })
        .collect()
}

/// One point of an SER curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SerPoint {
    pub snr_db: f64,
    pub ser: f64,
    /// 95% normal-approximation binomial half-width.
    pub ci_half_width: f64,
    pub symbol_errors: u64,
    pub symbols_sent: u64,
    pub frames: u64,
}

impl SerPoint {
    fn new(snr_db: f64, r: &TrialResult, frames: u64) -> Self {
        let n = r.symbols_sent as f64;
        let ser = if n > 0.0 { r.symbol_errors as f64 / n } else { 0.0 };
        let ci = if n > 0.0 { 1.96 * (ser * (1.0 - ser) / n).sqrt() } else { 0.0 };
        Self {
            snr_db,
            ser,
            ci_half_width: ci,
            symbol_errors: r.symbol_errors,
            symbols_sent: r.symbols_sent,
            frames,
        }
    }

    pub fn ci_low(&self) -> f64 {
        self.ser - self.ci_half_width
    }

    pub fn ci_high(&self) -> f64 {
        self.ser + self.ci_half_width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerCurve {
    pub scheme: Scheme,
    pub kappa: f64,
    pub points: Vec<SerPoint>,
}

/// SER of every scheme on every grid point.
///
/// Frames are added in batches. A scheme stops once it has `min_errors`
/// symbol errors at the end of a batch or `cfg.trials` frames have run, so
/// frame counts differ between schemes; every scheme still sees the same
/// prefix of the per-block random streams, at every SNR point.
pub fn run_ser_sweep(
    cfg: &SystemConfig,
    schemes: &[Scheme],
    snr_grid_db: &[f64],
    min_errors: u64,
) -> Result<Vec<SerCurve>> {
    run_ser_sweep_cached(cfg, schemes, snr_grid_db, min_errors, &mut MuiCache::default())
}

pub fn run_ser_sweep_cached(
    cfg: &SystemConfig,
    schemes: &[Scheme],
    snr_grid_db: &[f64],
    min_errors: u64,
    cache: &mut MuiCache,
) -> Result<Vec<SerCurve>> {
    cfg.validate()?;
    if snr_grid_db.is_empty() {
        return Err(Error::NoData("empty SNR grid".into()));
    }
    if schemes.is_empty() {
        return Err(Error::NoData("no schemes".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::NoData("trial cap is zero".into()));
    }
    let mut mui = HashMap::new();
    for &s in schemes {
        let m = if s.uses_sinr() { cache.get(cfg, s)? } else { MuiModel::NONE };
        mui.insert(s, m);
    }

    let mut curves: Vec<SerCurve> = schemes
        .iter()
        .map(|&scheme| SerCurve {
            scheme,
            kappa: cfg.kappa,
            points: Vec::with_capacity(snr_grid_db.len()),
        })
        .collect();
    for &snr in snr_grid_db {
        let point_cfg = cfg.with_snr_db(snr);
        let link = Link::new(&point_cfg)?;
        let states: Vec<SchemeState> = schemes
            .iter()
            .map(|s| link.prepare(*s, &mui[s]))
            .collect::<Result<_>>()?;
        let mut totals: Vec<TrialResult> = schemes.iter().map(|&s| TrialResult::empty(s)).collect();
        let mut scheme_frames = vec![0u64; schemes.len()];
        let mut frames = 0u64;
        let mut block = 0u64;
        loop {
            let active: Vec<bool> = totals.iter().map(|t| t.symbol_errors < min_errors).collect();
            if frames >= cfg.trials || !active.contains(&true) {
                break;
            }
            let mut jobs = Vec::new();
            let mut batch_frames = 0;
            while jobs.len() < BATCH_BLOCKS as usize && frames < cfg.trials {
                let n = BLOCK_FRAMES.min(cfg.trials - frames);
                jobs.push((block, n));
                block += 1;
                frames += n;
                batch_frames += n;
            }
            let batch: Vec<Vec<TrialResult>> = jobs
                .par_iter()
                .map(|&(b, n)| link.run_block(&states, &active, b, n, cfg.seed))
                .collect::<Result<_>>()?;
            for r in &batch {
                for (t, x) in totals.iter_mut().zip(r) {
                    t.absorb(x);
                }
            }
            for (f, _) in scheme_frames.iter_mut().zip(&active).filter(|(_, &on)| on) {
                *f += batch_frames;
            }
        }
        for ((curve, t), &n) in curves.iter_mut().zip(&totals).zip(&scheme_frames) {
            curve.points.push(SerPoint::new(snr, t, n));
        }
    }
    Ok(curves)
}

/// SNR at which a curve crosses `target` SER, by log-SER linear
/// interpolation between the bracketing grid points.
pub fn snr_at_ser(curve: &SerCurve, target: f64) -> Option<f64> {
    curve.points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        if a.ser >= target && b.ser <= target && a.ser > 0.0 && b.ser > 0.0 {
            if a.ser == b.ser {
                return Some(a.snr_db);
            }
            let t = (a.ser.ln() - target.ln()) / (a.ser.ln() - b.ser.ln());
            Some(a.snr_db + t * (b.snr_db - a.snr_db))
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SystemConfig {
        SystemConfig::default()
    }

    #[test]
    fn defaults_validate() {
        cfg().validate().unwrap();
        let mut c = cfg();
        c.n_v = 7;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("N_c mod N_v"), "{err}");
        let mut c = cfg();
        c.n_u = 9;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.noise_var = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.n_t = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn snr_round_trip() {
        let c = cfg().with_snr_db(12.0);
        assert!((c.snr_db() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn scheme_labels_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(Scheme::from_label(s.label()), Some(s));
        }
        assert_eq!(Scheme::from_label("nope"), None);
    }

    #[test]
    fn open_loop_uses_first_two_antennas() {
        let p = scheme_open_loop(&cfg()).unwrap();
        let f = p.matrix();
        assert!((f.norm() - 1.0).abs() < 1e-15);
        for a in 0..4 {
            for m in 0..2 {
                let expect = if a == m { std::f64::consts::FRAC_1_SQRT_2 } else { 0.0 };
                assert!((f[(a, m)].re - expect).abs() < 1e-15 && f[(a, m)].im == 0.0);
            }
        }
    }

    #[test]
    fn selection_skips_dead_antenna_and_degenerates_for_two() {
        let mut rng = block_rng(3, 0);
        let c = cfg();
        for _ in 0..200 {
            let group: Vec<Vec<Complex64>> = (0..8)
                .map(|_| {
                    let mut h: Vec<Complex64> = (0..4).map(|_| linalg::complex_gaussian(&mut rng)).collect();
                    h[2] = Complex64::new(0.0, 0.0);
                    h
                })
                .collect();
            let (a, b) = selection_pair(&group);
            assert!(a != 2 && b != 2);
            let p = scheme_antenna_selection(&c, &group).unwrap();
            assert!((p.matrix().norm() - 1.0).abs() < 1e-15);
        }
        let two = SystemConfig { n_t: 2, ..cfg() };
        let group = vec![vec![Complex64::new(0.3, 0.1), Complex64::new(-1.0, 0.2)]; 8];
        let sel = scheme_antenna_selection(&two, &group).unwrap().matrix();
        let open = scheme_open_loop(&two).unwrap().matrix();
        assert!((sel - open).norm() < 1e-15);
    }

    #[test]
    fn ideal_precoder_is_matched_filter() {
        let mut rng = block_rng(4, 0);
        let c = cfg();
        let group: Vec<Vec<Complex64>> = (0..8)
            .map(|_| (0..4).map(|_| linalg::complex_gaussian(&mut rng)).collect())
            .collect();
        let precs = scheme_ideal_precoding(&c, &group).unwrap();
        for (h, p) in group.iter().zip(&precs) {
            let g = linalg::row_times(h, &p.matrix());
            let energy: f64 = h.iter().map(|z| z.norm_sqr()).sum();
            // all desired power lands on stream 1
            assert!((g[0].norm_sqr() - energy).abs() < 1e-12 * energy);
            assert!(g[1].norm() < 1e-12);
            assert_eq!(p.powers(), vec![1.0, 0.0]);
            assert!((p.matrix().norm() - 1.0).abs() < 1e-12);
            // hot-path beams agree with the public constructor
            let beams = mrt_beams(h);
            let f = p.matrix();
            for a in 0..4 {
                assert!((beams[a][0] - f[(a, 0)]).norm() < 1e-12);
                assert!((beams[a][1] - f[(a, 1)]).norm() < 1e-12);
            }
        }
        let zero = vec![vec![Complex64::new(0.0, 0.0); 4]];
        let p = scheme_ideal_precoding(&c, &zero).unwrap();
        assert!((p[0].matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_guards() {
        let mut c = cfg();
        c.trials = 0;
        assert!(matches!(
            run_ser_sweep(&c, &[Scheme::OpenLoop], &[10.0], 10),
            Err(Error::NoData(_))
        ));
        assert!(run_ser_sweep(&cfg(), &[Scheme::OpenLoop], &[], 10).is_err());
    }

    #[test]
    fn mui_vanishes_for_single_user_and_flat_channel() {
        let single = SystemConfig { n_u: 1, l_taps: 5, ..cfg() };
        assert_eq!(estimate_mui_variance(&single, Scheme::OpenLoop).unwrap().variance, 0.0);
        let flat = SystemConfig { l_taps: 1, ..cfg() };
        let m = estimate_mui_variance(&flat, Scheme::Statistical(PowerRule::WaterFilling)).unwrap();
        assert!(m.variance < 1e-20, "{}", m.variance);
        assert_eq!(m.sample_count, MUI_FRAMES);
    }

    #[test]
    fn snr_interpolation() {
        let curve = SerCurve {
            scheme: Scheme::OpenLoop,
            kappa: 0.3,
            points: [(0.0, 1e-1), (10.0, 1e-3)]
                .iter()
                .map(|&(snr_db, ser)| SerPoint {
                    snr_db,
                    ser,
                    ci_half_width: 0.0,
                    symbol_errors: 1,
                    symbols_sent: 1,
                    frames: 1,
                })
                .collect(),
        };
        assert!((snr_at_ser(&curve, 1e-2).unwrap() - 5.0).abs() < 1e-12);
        assert!(snr_at_ser(&curve, 1e-5).is_none());
    }
}
