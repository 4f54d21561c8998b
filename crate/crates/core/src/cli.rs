//! Experiment presets, configuration parsing and CSV emission.
//!
//! Configuration is flat `key=value` lines with `#` comments. Every output
//! file starts with a provenance header of `# key=value` lines holding the
//! fully resolved experiment, so [`replay`] can regenerate it exactly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::link::{self, MuiCache, Scheme, SystemConfig};
use crate::precoder::{self, CodewordDistance, EffectiveSinr, PowerRule};
use crate::stfbc::{self, Constellation, ALAMOUTI_M};
use crate::{Error, Result};

/// Format tag, first line of every output file.
pub const FORMAT_TAG: &str = "# stfbc-results v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Scheme comparison at κ = 0.3.
    Fig2Schemes,
    /// Power allocation rules at κ = 0.1.
    Fig3Power,
    /// Statistical precoding at κ = 0.1 and 0.4.
    Fig4Correlation,
    /// Closed-form PEP bound against its Monte Carlo average.
    BoundValidation,
    Custom,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Fig2Schemes,
        Preset::Fig3Power,
        Preset::Fig4Correlation,
        Preset::BoundValidation,
        Preset::Custom,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Preset::Fig2Schemes => "fig2-schemes",
            Preset::Fig3Power => "fig3-power",
            Preset::Fig4Correlation => "fig4-correlation",
            Preset::BoundValidation => "bound-validation",
            Preset::Custom => "custom",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.label() == s)
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub preset: Preset,
    /// Base link configuration; `kappa` is replaced by each sweep entry.
    pub config: SystemConfig,
    pub schemes: Vec<Scheme>,
    pub kappa_sweep: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    /// Grid of `η` in dB for the bound table.
    pub eta_grid_db: Vec<f64>,
    /// Stop a point once each scheme has this many symbol errors.
    pub min_errors: u64,
    /// Monte Carlo draws per bound-table row.
    pub bound_draws: u64,
    pub output_path: Option<PathBuf>,
}

fn grid(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|i| start + step * i as f64).collect()
}

impl ExperimentSpec {
    /// Defaults of a preset before any override.
    pub fn preset(preset: Preset) -> Self {
        let mut spec = Self {
            preset,
            config: SystemConfig::default(),
            schemes: vec![Scheme::OpenLoop, Scheme::Statistical(PowerRule::WaterFilling)],
            kappa_sweep: vec![SystemConfig::default().kappa],
            snr_grid_db: grid(0.0, 20.0, 4.0),
            eta_grid_db: grid(-30.0, -10.0, 5.0),
            min_errors: 300,
            bound_draws: 100_000,
            output_path: None,
        };
        match preset {
            Preset::Fig2Schemes => {
                spec.config.kappa = 0.3;
                spec.schemes = vec![
                    Scheme::OpenLoop,
                    Scheme::Statistical(PowerRule::WaterFilling),
                    Scheme::AntennaSelection,
                    Scheme::IdealPrecoding,
                ];
                spec.snr_grid_db = grid(0.0, 16.0, 2.0);
            }
            Preset::Fig3Power => {
                spec.config.kappa = 0.1;
                spec.schemes = vec![
                    Scheme::Statistical(PowerRule::WaterFilling),
                    Scheme::Statistical(PowerRule::EqualPower),
                    Scheme::Statistical(PowerRule::SingleBeam),
                ];
                spec.snr_grid_db = grid(0.0, 20.0, 2.0);
            }
            Preset::Fig4Correlation => {
                spec.config.kappa = 0.1;
                spec.schemes = vec![Scheme::Statistical(PowerRule::WaterFilling)];
                spec.kappa_sweep = vec![0.1, 0.4];
                spec.snr_grid_db = grid(0.0, 16.0, 2.0);
                return spec;
            }
            Preset::BoundValidation => {
                spec.config.kappa = 0.3;
                spec.config.l_taps = 5;
                spec.config.n_v = 8;
                spec.schemes = vec![Scheme::Statistical(PowerRule::WaterFilling)];
            }
            Preset::Custom => {}
        }
        spec.kappa_sweep = vec![spec.config.kappa];
        spec
    }

    /// Check cross-field invariants, naming the offending key.
    pub fn validate(&self) -> Result<()> {
        let sorted = |key: &str, g: &[f64]| -> Result<()> {
            if g.is_empty() {
                return Err(config_err(key, "must not be empty"));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(config_err(key, "entries must be finite"));
            }
            if g.windows(2).any(|w| w[0] > w[1]) {
                return Err(config_err(key, "must be sorted ascending"));
            }
            Ok(())
        };
        match self.preset {
            Preset::BoundValidation => sorted("eta_grid_db", &self.eta_grid_db)?,
            _ => sorted("snr_grid_db", &self.snr_grid_db)?,
        }
        if self.kappa_sweep.is_empty() {
            return Err(config_err("kappa_sweep", "must not be empty"));
        }
        if self.schemes.is_empty() {
            return Err(config_err("schemes", "must not be empty"));
        }
        if self.bound_draws == 0 {
            return Err(config_err("bound_draws", "must be at least 1"));
        }
        for &kappa in &self.kappa_sweep {
            let cfg = SystemConfig {
                kappa,
                ..self.config.clone()
            };
            cfg.validate().map_err(|e| match e {
                Error::InvalidParameter { name, reason } => {
                    let key = if name == "kappa" && self.kappa_sweep.len() > 1 {
                        "kappa_sweep"
                    } else {
                        name
                    };
                    config_err(key, reason)
                }
                other => other,
            })?;
        }
        Ok(())
    }

    /// Provenance header: format tag, then one `# key=value` line per
    /// resolved setting. Parsing these lines yields this spec again.
    pub fn provenance(&self) -> String {
        let c = &self.config;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let schemes = self.schemes.iter().map(|s| s.label()).collect::<Vec<_>>().join(",");
        let mut out = String::new();
        out.push_str(FORMAT_TAG);
        out.push('\n');
        let entries: Vec<(&str, String)> = vec![
            ("preset", self.preset.label().to_string()),
            ("n_c", c.n_c.to_string()),
            ("n_v", c.n_v.to_string()),
            ("n_t", c.n_t.to_string()),
            ("n_u", c.n_u.to_string()),
            ("l_taps", c.l_taps.to_string()),
            ("rho", c.rho.to_string()),
            ("noise_var", c.noise_var.to_string()),
            ("kappa", c.kappa.to_string()),
            ("doppler_hz", c.doppler_hz.to_string()),
            ("frame_s", c.frame_s.to_string()),
            ("seed", c.seed.to_string()),
            ("trials", c.trials.to_string()),
            ("schemes", schemes),
            ("kappa_sweep", list(&self.kappa_sweep)),
            ("snr_grid_db", list(&self.snr_grid_db)),
            ("eta_grid_db", list(&self.eta_grid_db)),
            ("min_errors", self.min_errors.to_string()),
            ("bound_draws", self.bound_draws.to_string()),
        ];
        for (k, v) in entries {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

fn config_err(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expected: &'static str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::TypeMismatch {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_num(key, s, "comma-separated numbers"))
        .collect()
}

/// Split `key=value` lines, dropping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::InvalidConfig {
            key: format!("line {}", n + 1),
            reason: format!("expected key=value, got `{line}`"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Resolve an experiment from config-file text followed by `overrides`;
/// later entries win. The preset is applied first, whatever its position.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentSpec> {
    let mut pairs = parse_pairs(text)?;
    pairs.extend(overrides.iter().cloned());

    let preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
        Some((_, v)) => Preset::from_label(v).ok_or_else(|| {
            config_err(
                "preset",
                format!(
                    "unknown preset `{v}` (expected one of {})",
                    Preset::ALL.map(|p| p.label()).join(", ")
                ),
            )
        })?,
        None => Preset::Custom,
    };
    let mut spec = ExperimentSpec::preset(preset);
    let mut sweep_given = false;
    let mut kappa_given = false;
    for (key, value) in &pairs {
        let k = key.as_str();
        let c = &mut spec.config;
        const UINT: &str = "unsigned integer";
        const REAL: &str = "real number";
        match k {
            "preset" => {}
            "n_c" => c.n_c = parse_num(k, value, UINT)?,
            "n_v" => c.n_v = parse_num(k, value, UINT)?,
            "n_t" => c.n_t = parse_num(k, value, UINT)?,
            "n_u" => c.n_u = parse_num(k, value, UINT)?,
            "l_taps" => c.l_taps = parse_num(k, value, UINT)?,
            "rho" => c.rho = parse_num(k, value, REAL)?,
            "noise_var" => c.noise_var = parse_num(k, value, REAL)?,
            "kappa" => {
                c.kappa = parse_num(k, value, REAL)?;
                kappa_given = true;
            }
            "doppler_hz" => c.doppler_hz = parse_num(k, value, REAL)?,
            "frame_s" => c.frame_s = parse_num(k, value, REAL)?,
            "seed" => c.seed = parse_num(k, value, UINT)?,
            "trials" => c.trials = parse_num(k, value, UINT)?,
            "min_errors" => spec.min_errors = parse_num(k, value, UINT)?,
            "bound_draws" => spec.bound_draws = parse_num(k, value, UINT)?,
            "snr_grid_db" => spec.snr_grid_db = parse_list(k, value)?,
            "eta_grid_db" => spec.eta_grid_db = parse_list(k, value)?,
            "kappa_sweep" => {
                spec.kappa_sweep = parse_list(k, value)?;
                sweep_given = true;
            }
            "schemes" => {
                spec.schemes = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        Scheme::from_label(s).ok_or_else(|| Error::TypeMismatch {
                            key: k.to_string(),
                            value: s.to_string(),
                            expected: "scheme label",
                        })
                    })
                    .collect::<Result<_>>()?;
            }
            "output" => spec.output_path = Some(PathBuf::from(value)),
            _ => return Err(Error::UnknownKey(key.clone())),
        }
    }
    if kappa_given && !sweep_given {
        spec.kappa_sweep = vec![spec.config.kappa];
    }
    spec.validate()?;
    Ok(spec)
}

/// One row of the bound table.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub eta_db: f64,
    pub eta: f64,
    pub closed_form: f64,
    pub monte_carlo: f64,
    pub rel_error: f64,
}

/// Closed-form bound of the water-filling precoder against its Monte Carlo
/// average, one row per `η`.
pub fn bound_table(spec: &ExperimentSpec) -> Result<Vec<BoundRow>> {
    let cfg = &spec.config;
    let model = cfg.model()?;
    let dist = CodewordDistance::ostbc(stfbc::min_distance_factor(&Constellation::qam16()), ALAMOUTI_M)?;
    spec.eta_grid_db
        .iter()
        .enumerate()
        .map(|(i, &eta_db)| {
            let eta = 10f64.powf(eta_db / 10.0);
            let sinr = EffectiveSinr::from_eta(eta, cfg.l_taps, cfg.n_v)?;
            let f = precoder::statistical_precoder(&model, &dist, &sinr, cfg.n_v, PowerRule::WaterFilling)?;
            let closed_form = precoder::pep_bound(&f, &dist, &model, &sinr, cfg.n_v)?;
            let mut rng = link::block_rng(cfg.seed, i as u64);
            let monte_carlo =
                precoder::pep_bound_monte_carlo(&f.matrix(), &dist, &model, eta, cfg.n_v, spec.bound_draws, &mut rng)?;
            Ok(BoundRow {
                eta_db,
                eta,
                closed_form,
                monte_carlo,
                rel_error: (monte_carlo - closed_form).abs() / closed_form,
            })
        })
        .collect()
}

/// Render the complete output file of an experiment.
pub fn render(spec: &ExperimentSpec) -> Result<String> {
    spec.validate()?;
    let mut out = spec.provenance();
    if spec.preset == Preset::BoundValidation {
        out.push_str("eta_db,eta,closed_form,monte_carlo,rel_error\n");
        for r in bound_table(spec)? {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.eta_db, r.eta, r.closed_form, r.monte_carlo, r.rel_error
            );
        }
        return Ok(out);
    }
    out.push_str("scheme,kappa,snr_db,ser,ci_half_width,symbol_errors,symbols,trials\n");
    let mut cache = MuiCache::default();
    for &kappa in &spec.kappa_sweep {
        let cfg = SystemConfig {
            kappa,
            ..spec.config.clone()
        };
        let curves = link::run_ser_sweep_cached(&cfg, &spec.schemes, &spec.snr_grid_db, spec.min_errors, &mut cache)?;
        for c in &curves {
            for p in &c.points {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.scheme, c.kappa, p.snr_db, p.ser, p.ci_half_width, p.symbol_errors, p.symbols_sent, p.frames
                );
            }
        }
    }
    Ok(out)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Run an experiment and write its file (stdout without an output path).
pub fn run(spec: &ExperimentSpec) -> Result<()> {
    // fail on an unwritable path before spending time on the simulation
    if let Some(p) = &spec.output_path {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?;
    }
    let text = render(spec)?;
    write_output(spec.output_path.as_deref(), &text)
}

/// Recover the experiment embedded in an output file's header.
pub fn spec_from_output(text: &str) -> Result<ExperimentSpec> {
    let header: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| l.strip_prefix("# "))
        .filter(|l| l.contains('='))
        .map(|l| format!("{l}\n"))
        .collect();
    if header.is_empty() {
        return Err(Error::NoData("no provenance header".into()));
    }
    parse_config(&header, &[])
}

/// Re-run the experiment recorded in `input`.
pub fn replay(input: &Path, output: Option<PathBuf>) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|source| Error::Io {
        path: input.display().to_string(),
        source,
    })?;
    let mut spec = spec_from_output(&text)?;
    spec.output_path = output;
    run(&spec)
}

#[derive(Debug, Parser)]
#[command(name = "stfbc", version, about = "Statistical STFBC precoding: MC-CDMA link simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a preset or custom experiment.
    Run(RunArgs),
    /// Regenerate an output file from its provenance header.
    Replay {
        input: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List presets.
    Presets,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Config file of key=value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. --set n_u=2; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Frame cap per SNR point.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl RunArgs {
    pub fn to_spec(&self) -> Result<ExperimentSpec> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|source| Error::Io {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        let mut overrides = Vec::new();
        if let Some(p) = &self.preset {
            overrides.push(("preset".to_string(), p.clone()));
        }
        for s in &self.set {
            let (k, v) = s.split_once('=').ok_or_else(|| Error::InvalidConfig {
                key: s.clone(),
                reason: "expected KEY=VALUE".into(),
            })?;
            overrides.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(seed) = self.seed {
            overrides.push(("seed".into(), seed.to_string()));
        }
        if let Some(t) = self.trials {
            overrides.push(("trials".into(), t.to_string()));
        }
        if let Some(o) = &self.output {
            overrides.push(("output".into(), o.display().to_string()));
        }
        parse_config(&text, &overrides)
    }
}

fn set_threads(n: Option<usize>) {
    if let Some(n) = n {
        // an already-initialised pool is fine: results do not depend on it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Execute parsed arguments.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            set_threads(args.threads);
            run(&args.to_spec()?)
        }
        Command::Replay { input, output, threads } => {
            set_threads(threads);
            replay(&input, output)
        }
        Command::Presets => {
            for p in Preset::ALL {
                println!("{}", p.label());
            }
            Ok(())
        }
    }
}

/// Entry point; returns the process exit code. Failures print one line
/// `error:<class>: <message>` to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error:cli.usage: {first}");
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error:{}: {}", e.class(), e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn empty_fig2_gets_table_defaults() {
        let spec = parse_config("", &[kv("preset", "fig2-schemes")]).unwrap();
        assert_eq!(spec.config.n_v, 8);
        assert_eq!(spec.config.n_t, 4);
        assert_eq!(spec.config.n_u, 4);
        assert_eq!(spec.config.kappa, 0.3);
        assert_eq!(spec.kappa_sweep, vec![0.3]);
        assert_eq!(spec.schemes.len(), 4);
    }

    #[test]
    fn bad_spreading_factor_names_key() {
        let err = parse_config("n_v=7", &[]).unwrap_err();
        match &err {
            Error::InvalidConfig { key, reason } => {
                assert_eq!(key, "n_v");
                assert!(reason.contains("N_c mod N_v"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.class(), "config.invariant");
    }

    #[test]
    fn fig4_sweeps_correlation() {
        let spec = parse_config("preset = fig4-correlation # comment\n", &[]).unwrap();
        assert_eq!(spec.kappa_sweep, vec![0.1, 0.4]);
        assert_eq!(spec.schemes, vec![Scheme::Statistical(PowerRule::WaterFilling)]);
    }

    #[test]
    fn fig3_has_three_power_rules() {
        let spec = parse_config("preset=fig3-power", &[]).unwrap();
        assert_eq!(spec.config.kappa, 0.1);
        assert_eq!(
            spec.schemes,
            vec![
                Scheme::Statistical(PowerRule::WaterFilling),
                Scheme::Statistical(PowerRule::EqualPower),
                Scheme::Statistical(PowerRule::SingleBeam),
            ]
        );
    }

    #[test]
    fn key_errors() {
        assert!(matches!(parse_config("bogus=1", &[]), Err(Error::UnknownKey(k)) if k == "bogus"));
        assert!(matches!(
            parse_config("n_t=four", &[]),
            Err(Error::TypeMismatch { key, .. }) if key == "n_t"
        ));
        assert!(matches!(
            parse_config("snr_grid_db=4,2", &[]),
            Err(Error::InvalidConfig { key, .. }) if key == "snr_grid_db"
        ));
        assert!(matches!(
            parse_config("preset=fig9", &[]),
            Err(Error::InvalidConfig { key, .. }) if key == "preset"
        ));
        assert!(matches!(
            parse_config("schemes=open-loop,magic", &[]),
            Err(Error::TypeMismatch { key, .. }) if key == "schemes"
        ));
        assert!(parse_config("no equals sign", &[]).is_err());
    }

    #[test]
    fn overrides_win_and_kappa_narrows_sweep() {
        let spec = parse_config("n_u=2\npreset=fig4-correlation", &[kv("n_u", "3"), kv("kappa", "0.2")]).unwrap();
        assert_eq!(spec.config.n_u, 3);
        assert_eq!(spec.kappa_sweep, vec![0.2]);
    }

    #[test]
    fn provenance_round_trips() {
        let spec = parse_config(
            "preset=fig2-schemes\nnoise_var=0.123456789\nsnr_grid_db=-1.5,0.1,3",
            &[],
        )
        .unwrap();
        let back = spec_from_output(&spec.provenance()).unwrap();
        assert_eq!(back, spec);
    }
}
