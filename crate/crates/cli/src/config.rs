//! Flat `key = value` run configuration shared by every command.
//!
//! Each option exists once as a config-file key (snake_case) and once as a
//! flag (kebab-case). Flags win over the file; the file wins over built-in
//! defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context};
use clap::Args;
use snswf::pipeline::{Method, PipelineConfig, SelectionPolicy};
use snswf::signals::{BackgroundModel, NoiseLevel, SimulationConfig};
use snswf::sobi::SobiConfig;
use snswf::spectral::{Band, FrequencyGrid, SpectralConfig};
use snswf::wiener::WienerConfig;

/// Comma-separated list value.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// `lo:hi` in cpm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandArg(pub Band);

impl FromStr for BandArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| format!("expected lo:hi, got '{s}'"))?;
        let lo: f64 = lo.trim().parse().map_err(|e| format!("'{lo}': {e}"))?;
        let hi: f64 = hi.trim().parse().map_err(|e| format!("'{hi}': {e}"))?;
        if !(lo < hi) {
            return Err(format!("band {lo}:{hi} needs lo < hi"));
        }
        Ok(BandArg(Band::new(lo, hi)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodArg(pub Method);

impl FromStr for MethodArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "classic" => Ok(MethodArg(Method::Classic)),
            "snswf" => Ok(MethodArg(Method::Snswf)),
            "both" => Ok(MethodArg(Method::Both)),
            _ => Err(format!("expected classic, snswf or both, got '{s}'")),
        }
    }
}

macro_rules! default_note {
    ("") => {
        ""
    };
    ($d:tt) => {
        concat!(" [default: ", $d, "]")
    };
}

/// Declares one group of options. `$default` is the documented default
/// shown in `--help`; an empty string means the default is described in the
/// help text instead.
macro_rules! option_group {
    ($name:ident, $heading:literal { $( $field:ident : $ty:ty = $default:tt, $help:literal; )* }) => {
        #[derive(Debug, Clone, Default, PartialEq, Args)]
        #[command(next_help_heading = $heading)]
        pub struct $name {
            $(
                #[arg(long, help = concat!($help, default_note!($default)))]
                pub $field: Option<$ty>,
            )*
        }

        impl $name {
            /// `None` when `key` is not part of this group.
            pub fn set(&mut self, key: &str, value: &str) -> Option<Result<(), String>> {
                match key {
                    $(
                        stringify!($field) => Some(
                            value
                                .parse::<$ty>()
                                .map(|v| self.$field = Some(v))
                                .map_err(|e| format!("{key}: {e}")),
                        ),
                    )*
                    _ => None,
                }
            }

            /// Fields of `self` take precedence over `base`.
            pub fn over(self, base: Self) -> Self {
                Self { $( $field: self.$field.or(base.$field), )* }
            }

            /// Every documented default, parsed as if given explicitly.
            #[cfg(test)]
            pub fn documented_defaults() -> Self {
                let mut s = Self::default();
                $(
                    if !$default.is_empty() {
                        s.set(stringify!($field), $default)
                            .expect("key of this group")
                            .expect("documented default parses");
                    }
                )*
                s
            }
        }
    };
}

option_group!(SimulationArgs, "Simulation" {
    f_signal_cpm: f64 = "3", "Signal tone frequency in cpm";
    f_noise_cpm: f64 = "0.3", "Interference tone frequency in cpm";
    signal_coupling: f64 = "0.1", "Coupling of the tones into the signal channel";
    magnetometer_coupling: f64 = "1", "Coupling of the tones into magnetometer references R1-R3";
    gradiometer_coupling: f64 = "0.1", "Coupling of the tones into tensor-gradiometer references R4-R8";
    duration_s: f64 = "120", "Record length in seconds";
    sample_rate_hz: f64 = "20", "Sample rate in Hz";
    seed: u64 = "0", "Background noise seed";
    signal_white_std: f64 = "0.02", "White background std of the signal channel";
    signal_pink_std: f64 = "0.05", "Pink background std of the signal channel";
    magnetometer_white_std: f64 = "0.2", "White background std of magnetometers";
    magnetometer_pink_std: f64 = "0.5", "Pink background std of magnetometers";
    tensor_white_std: f64 = "0.02", "White background std of tensor gradiometers";
    tensor_pink_std: f64 = "0.05", "Pink background std of tensor gradiometers";
    pink_exponent: f64 = "1", "Spectral exponent of the pink background (PSD ~ 1/f^exponent)";
});

option_group!(SobiArgs, "Separation" {
    n_lags: usize = "10", "Number of equally spaced SOBI lags";
    max_lag_s: f64 = "1", "Largest SOBI lag in seconds";
    lags_s: List<f64> = "", "Explicit comma-separated lags in seconds, replacing the n_lags/max_lag_s grid";
    n_sources: usize = "", "Number of separated components [default: one per input channel]";
    sobi_tol: f64 = "1e-8", "Joint-diagonalization stop threshold, relative to the total squared norm";
    max_sweeps: usize = "100", "Joint-diagonalization sweep limit";
});

option_group!(SpectralArgs, "Spectrum" {
    ar_order: usize = "30", "Burg AR model order";
    grid_lo_cpm: f64 = "0", "Lowest PSD grid frequency in cpm";
    grid_hi_cpm: f64 = "70", "Highest PSD grid frequency in cpm (clipped at Nyquist)";
    grid_step_cpm: f64 = "0.1", "PSD grid spacing in cpm";
});

option_group!(PolicyArgs, "Selection" {
    signal_band: BandArg = "2.5:3.5", "Signal band lo:hi in cpm";
    noise_bands: List<String> = "", "Comma-separated noise bands lo:hi in cpm [default: 0.05:2.5,3.5:<Nyquist>]";
    high_freq_threshold_cpm: f64 = "30", "Main-noise-peak frequency above which extra components may be selected";
    max_selected: usize = "2", "Most components fed to the Wiener filter";
    snr_ceiling_db: f64 = "0", "Extra components must have SNR at or below this";
});

option_group!(WienerArgs, "Wiener" {
    n_taps: usize = "40", "FIR length per reference";
    relative_lambda: f64 = "1e-6", "Tikhonov damping as a multiple of the largest reference power";
});

option_group!(OutputArgs, "Output" {
    out_dir: PathBuf = ".", "Output directory";
});

option_group!(ChannelArgs, "Channels" {
    signal_channel: String = "", "Primary channel [default: first channel]";
    reference_channels: List<String> = "", "Comma-separated reference channels [default: every channel except the primary]";
});

option_group!(PsdChannelArgs, "Channel" {
    channel: String = "", "Channel to analyse [default: first channel]";
});

option_group!(MethodArgs, "Method" {
    method: MethodArg = "both", "Denoising method: classic, snswf or both";
});

/// Everything a config file may set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    pub simulation: SimulationArgs,
    pub sobi: SobiArgs,
    pub spectral: SpectralArgs,
    pub policy: PolicyArgs,
    pub wiener: WienerArgs,
    pub output: OutputArgs,
    pub channels: ChannelArgs,
    pub psd: PsdChannelArgs,
    pub method: MethodArgs,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value", i + 1);
            };
            let key = key.trim().replace('-', "_");
            let value = value.trim();
            let outcome = cfg
                .simulation
                .set(&key, value)
                .or_else(|| cfg.sobi.set(&key, value))
                .or_else(|| cfg.spectral.set(&key, value))
                .or_else(|| cfg.policy.set(&key, value))
                .or_else(|| cfg.wiener.set(&key, value))
                .or_else(|| cfg.output.set(&key, value))
                .or_else(|| cfg.channels.set(&key, value))
                .or_else(|| cfg.psd.set(&key, value))
                .or_else(|| cfg.method.set(&key, value));
            match outcome {
                None => bail!("line {}: unknown key '{key}'", i + 1),
                Some(Err(e)) => bail!("line {}: {e}", i + 1),
                Some(Ok(())) => {}
            }
        }
        Ok(cfg)
    }
}

pub fn simulation(a: &SimulationArgs) -> anyhow::Result<SimulationConfig> {
    let d = SimulationConfig::default();
    let level = |white: Option<f64>, pink: Option<f64>, base: NoiseLevel| NoiseLevel {
        white_std: white.unwrap_or(base.white_std),
        pink_std: pink.unwrap_or(base.pink_std),
    };
    let cfg = SimulationConfig {
        f_signal_cpm: a.f_signal_cpm.unwrap_or(d.f_signal_cpm),
        f_noise_cpm: a.f_noise_cpm.unwrap_or(d.f_noise_cpm),
        signal_coupling: a.signal_coupling.unwrap_or(d.signal_coupling),
        magnetometer_coupling: a.magnetometer_coupling.unwrap_or(d.magnetometer_coupling),
        gradiometer_coupling: a.gradiometer_coupling.unwrap_or(d.gradiometer_coupling),
        duration_s: a.duration_s.unwrap_or(d.duration_s),
        sample_rate_hz: a.sample_rate_hz.unwrap_or(d.sample_rate_hz),
        seed: a.seed.unwrap_or(d.seed),
        background: BackgroundModel {
            signal_gradiometer: level(
                a.signal_white_std,
                a.signal_pink_std,
                d.background.signal_gradiometer,
            ),
            magnetometer: level(
                a.magnetometer_white_std,
                a.magnetometer_pink_std,
                d.background.magnetometer,
            ),
            tensor_gradiometer: level(
                a.tensor_white_std,
                a.tensor_pink_std,
                d.background.tensor_gradiometer,
            ),
            pink_exponent: a.pink_exponent.unwrap_or(d.background.pink_exponent),
        },
    };
    if !(cfg.duration_s > 0.0) {
        bail!("duration_s must be positive, got {}", cfg.duration_s);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sobi(a: &SobiArgs) -> SobiConfig {
    let d = SobiConfig::default();
    SobiConfig {
        lags_s: a.lags_s.clone().map(|l| l.0).unwrap_or(d.lags_s),
        n_lags: a.n_lags.unwrap_or(d.n_lags),
        max_lag_s: a.max_lag_s.unwrap_or(d.max_lag_s),
        n_sources: a.n_sources.or(d.n_sources),
        tol: a.sobi_tol.unwrap_or(d.tol),
        max_sweeps: a.max_sweeps.unwrap_or(d.max_sweeps),
    }
}

pub fn spectral(a: &SpectralArgs) -> SpectralConfig {
    let d = SpectralConfig::default();
    SpectralConfig {
        ar_order: a.ar_order.unwrap_or(d.ar_order),
        grid: FrequencyGrid {
            lo_cpm: a.grid_lo_cpm.unwrap_or(d.grid.lo_cpm),
            hi_cpm: a.grid_hi_cpm.unwrap_or(d.grid.hi_cpm),
            step_cpm: a.grid_step_cpm.unwrap_or(d.grid.step_cpm),
        },
    }
}

pub fn policy(a: &PolicyArgs, sample_rate_hz: f64) -> anyhow::Result<SelectionPolicy> {
    let d = SelectionPolicy::for_sample_rate(sample_rate_hz);
    let noise_bands_cpm = match &a.noise_bands {
        Some(list) => list
            .0
            .iter()
            .map(|b| b.parse::<BandArg>().map(|b| b.0))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| anyhow::anyhow!("noise_bands: {e}"))?,
        None => d.noise_bands_cpm,
    };
    Ok(SelectionPolicy {
        signal_band_cpm: a.signal_band.map(|b| b.0).unwrap_or(d.signal_band_cpm),
        noise_bands_cpm,
        high_freq_threshold_cpm: a
            .high_freq_threshold_cpm
            .unwrap_or(d.high_freq_threshold_cpm),
        max_selected: a.max_selected.unwrap_or(d.max_selected),
        snr_ceiling_db: a.snr_ceiling_db.unwrap_or(d.snr_ceiling_db),
    })
}

pub fn wiener(a: &WienerArgs) -> WienerConfig {
    let d = WienerConfig::default();
    WienerConfig {
        n_taps: a.n_taps.unwrap_or(d.n_taps),
        relative_lambda: a.relative_lambda.unwrap_or(d.relative_lambda),
    }
}

pub fn pipeline(
    policy_args: &PolicyArgs,
    wiener_args: &WienerArgs,
    spectral_args: &SpectralArgs,
    sobi_args: &SobiArgs,
    sample_rate_hz: f64,
) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig {
        policy: policy(policy_args, sample_rate_hz)?,
        wiener: wiener(wiener_args),
        spectral: spectral(spectral_args),
        sobi: sobi(sobi_args),
    })
}
