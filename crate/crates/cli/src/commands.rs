use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use nalgebra::DMatrix;
use serde::Serialize;
use snswf::pipeline::{
    run_denoise, DenoiseReport, Method, SelectionPolicy, StageError, REPORT_SCHEMA_VERSION,
};
use snswf::signals::{
    fmt_f64, load_csv, save_csv, synth_simulation, ChannelMeta, MultichannelRecord,
    SimulationConfig,
};
use snswf::sobi::{sobi_with, SobiConfig};
use snswf::spectral::{
    find_peaks, series_psd, Band, PsdEstimate, SnrMeasurement, SpectralConfig, SpectralPeak,
};
use snswf::Error;

use crate::config::{self, FileConfig};
use crate::Command;

/// A failed command with its exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

const USAGE: u8 = 2;
const RUNTIME: u8 = 3;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: USAGE,
        error: error.into(),
    }
}

fn runtime(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: RUNTIME,
        error: error.into(),
    }
}

fn library(e: Error) -> Failure {
    Failure {
        code: library_code(&e),
        error: e.into(),
    }
}

fn staged(e: StageError) -> Failure {
    Failure {
        code: library_code(&e.source),
        error: anyhow!(e),
    }
}

/// Argument, parse and input-file problems are usage errors; everything
/// numerical is a runtime failure.
fn library_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Format(_) | Error::Io(_) => USAGE,
        _ => RUNTIME,
    }
}

type Outcome = Result<Vec<String>, Failure>;

pub fn run(command: Command) -> Outcome {
    match command {
        Command::Simulate {
            config,
            simulation,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            simulate(
                &config::simulation(&simulation.over(file.simulation)).map_err(usage)?,
                &out_dir(output.over(file.output)),
            )
        }
        Command::Sobi {
            input,
            config,
            channels,
            sobi,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            let channels = channels.over(file.channels);
            let rec = load(&input)?;
            let (_, refs) = pick_channels(
                &rec,
                channels.signal_channel.as_deref(),
                channels.reference_channels.as_ref(),
            )?;
            separate(
                &input,
                &rec,
                &refs,
                &config::sobi(&sobi.over(file.sobi)),
                &out_dir(output.over(file.output)),
            )
        }
        Command::Psd {
            input,
            config,
            channel,
            spectral,
            policy,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            let rec = load(&input)?;
            let name = match channel.over(file.psd).channel {
                Some(c) => c,
                None => rec.channels()[0].name.clone(),
            };
            let policy =
                config::policy(&policy.over(file.policy), rec.sample_rate_hz()).map_err(usage)?;
            spectrum(
                &input,
                &rec,
                &name,
                &config::spectral(&spectral.over(file.spectral)),
                &policy,
                &out_dir(output.over(file.output)),
            )
        }
        Command::Denoise {
            input,
            config,
            method,
            channels,
            policy,
            wiener,
            spectral,
            sobi,
            output,
        } => {
            let file = load_config(config.as_deref())?;
            let rec = load(&input)?;
            let channels = channels.over(file.channels);
            let (signal, refs) = pick_channels(
                &rec,
                channels.signal_channel.as_deref(),
                channels.reference_channels.as_ref(),
            )?;
            let cfg = config::pipeline(
                &policy.over(file.policy),
                &wiener.over(file.wiener),
                &spectral.over(file.spectral),
                &sobi.over(file.sobi),
                rec.sample_rate_hz(),
            )
            .map_err(usage)?;
            let method = method
                .over(file.method)
                .method
                .map(|m| m.0)
                .unwrap_or(Method::Both);
            denoise(
                &input,
                &rec,
                &signal,
                &refs,
                &cfg,
                method,
                &out_dir(output.over(file.output)),
            )
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig, Failure> {
    match path {
        Some(p) => FileConfig::load(p).map_err(usage),
        None => Ok(FileConfig::default()),
    }
}

fn out_dir(args: config::OutputArgs) -> PathBuf {
    args.out_dir.unwrap_or_else(|| PathBuf::from("."))
}

fn load(path: &Path) -> Result<MultichannelRecord, Failure> {
    load_csv(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(usage)
}

/// Primary channel (default first) and references (default all others).
fn pick_channels(
    rec: &MultichannelRecord,
    signal: Option<&str>,
    refs: Option<&config::List<String>>,
) -> Result<(String, Vec<String>), Failure> {
    let signal = signal
        .map(str::to_string)
        .unwrap_or_else(|| rec.channels()[0].name.clone());
    if rec.channel(&signal).is_none() {
        return Err(usage(anyhow!("no channel named '{signal}'")));
    }
    let refs: Vec<String> = match refs {
        Some(list) => list.0.clone(),
        None => rec
            .channels()
            .iter()
            .map(|c| c.name.clone())
            .filter(|n| *n != signal)
            .collect(),
    };
    if let Some(missing) = refs.iter().find(|r| rec.channel(r).is_none()) {
        return Err(usage(anyhow!("no channel named '{missing}'")));
    }
    Ok((signal, refs))
}

fn prepare_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(runtime)
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    std::fs::write(&path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<PathBuf, Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_text(dir, name, &text)?;
    Ok(dir.join(name))
}

fn write_record(dir: &Path, name: &str, rec: &MultichannelRecord) -> Result<(), Failure> {
    let path = dir.join(name);
    save_csv(rec, &path)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(runtime)
}

/// CSV with a label column followed by one column per matrix column.
fn matrix_csv(
    corner: &str,
    row_labels: &[String],
    col_labels: &[String],
    m: &DMatrix<f64>,
) -> String {
    let mut out = String::new();
    out.push_str(corner);
    for c in col_labels {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for (i, label) in row_labels.iter().enumerate() {
        out.push_str(label);
        for j in 0..m.ncols() {
            let _ = write!(out, ",{}", fmt_f64(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

/// `freq_cpm` column followed by named spectra on the same grid; `None`
/// columns are left empty.
fn spectra_csv(freqs: &[f64], columns: &[(String, Option<&[f64]>)]) -> String {
    let mut out = String::from("freq_cpm");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, f) in freqs.iter().enumerate() {
        out.push_str(&fmt_f64(*f));
        for (_, col) in columns {
            out.push(',');
            if let Some(v) = col {
                out.push_str(&fmt_f64(v[i]));
            }
        }
        out.push('\n');
    }
    out
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Serialize)]
struct Truth<'a> {
    schema_version: u32,
    signal_channel: &'a str,
    reference_channels: &'a [&'a str],
    channels: &'a [ChannelMeta],
    n_samples: usize,
    config: &'a SimulationConfig,
    artifacts: BTreeMap<&'static str, &'static str>,
}

fn simulate(cfg: &SimulationConfig, dir: &Path) -> Outcome {
    let rec = synth_simulation(cfg).map_err(library)?;
    prepare_dir(dir)?;
    write_record(dir, "record.csv", &rec)?;
    let truth = Truth {
        schema_version: REPORT_SCHEMA_VERSION,
        signal_channel: snswf::signals::SIGNAL_CHANNEL,
        reference_channels: &snswf::signals::REFERENCE_CHANNELS,
        channels: rec.channels(),
        n_samples: rec.n_samples(),
        config: cfg,
        artifacts: BTreeMap::from([("record", "record.csv")]),
    };
    let path = write_json(dir, "truth.json", &truth)?;
    Ok(vec![
        format!(
            "simulate: {} channels x {} samples at {} Hz, seed {}",
            rec.n_channels(),
            rec.n_samples(),
            rec.sample_rate_hz(),
            cfg.seed
        ),
        path.display().to_string(),
    ])
}

#[derive(Serialize)]
struct SobiReport<'a> {
    schema_version: u32,
    input: String,
    channels: &'a [String],
    sample_rate_hz: f64,
    n_samples: usize,
    n_sources: usize,
    lags_s: &'a [f64],
    lags_samples: &'a [usize],
    noise_variance: f64,
    eigenvalues: &'a [f64],
    sweeps: usize,
    converged: bool,
    config: SobiConfig,
    artifacts: BTreeMap<&'static str, &'static str>,
}

fn separate(
    input: &Path,
    rec: &MultichannelRecord,
    channels: &[String],
    cfg: &SobiConfig,
    dir: &Path,
) -> Outcome {
    let rows: Vec<&[f64]> = channels
        .iter()
        .map(|c| rec.channel(c).expect("checked"))
        .collect();
    let x = DMatrix::from_fn(rows.len(), rec.n_samples(), |i, t| rows[i][t]);
    let sep = sobi_with(&x, rec.sample_rate_hz(), cfg).map_err(library)?;

    let names: Vec<String> = (0..sep.n_sources()).map(|i| format!("s{i}")).collect();
    let sources = MultichannelRecord::new(
        rec.sample_rate_hz(),
        names
            .iter()
            .map(|n| ChannelMeta::derived(n.clone()))
            .collect(),
        (0..sep.n_sources()).map(|i| sep.source(i)).collect(),
    )
    .map_err(runtime)?;

    prepare_dir(dir)?;
    write_record(dir, "sources.csv", &sources)?;
    write_text(
        dir,
        "mixing.csv",
        &matrix_csv("channel", channels, &names, &sep.mixing),
    )?;
    write_text(
        dir,
        "unmixing.csv",
        &matrix_csv("source", &names, channels, &sep.unmixing),
    )?;
    write_text(
        dir,
        "whitener.csv",
        &matrix_csv("row", &names, channels, &sep.whitener),
    )?;

    let mut resolved = cfg.clone();
    resolved.lags_s = sep.lags_s.clone();
    resolved.n_sources = Some(sep.n_sources());
    let report = SobiReport {
        schema_version: REPORT_SCHEMA_VERSION,
        input: file_name(input),
        channels,
        sample_rate_hz: rec.sample_rate_hz(),
        n_samples: rec.n_samples(),
        n_sources: sep.n_sources(),
        lags_s: &sep.lags_s,
        lags_samples: &sep.lags_samples,
        noise_variance: sep.noise_variance,
        eigenvalues: &sep.eigenvalues,
        sweeps: sep.sweeps,
        converged: sep.converged,
        config: resolved,
        artifacts: BTreeMap::from([
            ("sources", "sources.csv"),
            ("mixing", "mixing.csv"),
            ("unmixing", "unmixing.csv"),
            ("whitener", "whitener.csv"),
        ]),
    };
    let path = write_json(dir, "sobi.json", &report)?;
    Ok(vec![
        format!(
            "sobi: {} components from {} channels, {} sweeps{}",
            sep.n_sources(),
            channels.len(),
            sep.sweeps,
            if sep.converged {
                ""
            } else {
                " (not converged)"
            }
        ),
        path.display().to_string(),
    ])
}

#[derive(Serialize)]
struct PsdReport<'a> {
    schema_version: u32,
    input: String,
    channel: &'a str,
    sample_rate_hz: f64,
    n_samples: usize,
    ar_noise_variance: f64,
    peaks: Vec<SpectralPeak>,
    snr_convention: &'static str,
    snr_db: f64,
    signal_peak: SpectralPeak,
    noise_peak: SpectralPeak,
    spectral: &'a SpectralConfig,
    policy: &'a SelectionPolicy,
    artifacts: BTreeMap<&'static str, &'static str>,
}

fn spectrum(
    input: &Path,
    rec: &MultichannelRecord,
    channel: &str,
    spectral: &SpectralConfig,
    policy: &SelectionPolicy,
    dir: &Path,
) -> Outcome {
    let x = rec
        .channel(channel)
        .ok_or_else(|| usage(anyhow!("no channel named '{channel}'")))?;
    spectral.validate().map_err(library)?;
    policy.validate().map_err(library)?;
    let psd = series_psd(x, rec.sample_rate_hz(), spectral).map_err(library)?;
    let full = Band::new(
        psd.freqs_cpm[0],
        *psd.freqs_cpm.last().expect("non-empty grid"),
    );
    let peaks = if full.lo_cpm < full.hi_cpm {
        find_peaks(&psd, full).map_err(library)?
    } else {
        Vec::new()
    };
    let snr: SnrMeasurement = policy.measure(&psd).map_err(library)?;

    prepare_dir(dir)?;
    write_text(
        dir,
        "psd.csv",
        &spectra_csv(
            &psd.freqs_cpm,
            &[(channel.to_string(), Some(psd.psd.as_slice()))],
        ),
    )?;
    let report = PsdReport {
        schema_version: REPORT_SCHEMA_VERSION,
        input: file_name(input),
        channel,
        sample_rate_hz: rec.sample_rate_hz(),
        n_samples: rec.n_samples(),
        ar_noise_variance: psd.model.noise_variance,
        peaks,
        snr_convention: SNR_CONVENTION,
        snr_db: snr.snr_db,
        signal_peak: snr.signal_peak,
        noise_peak: snr.noise_peak,
        spectral,
        policy,
        artifacts: BTreeMap::from([("psd", "psd.csv")]),
    };
    let path = write_json(dir, "psd.json", &report)?;
    Ok(vec![
        format!(
            "psd: {channel} SNR {:.2} dB (signal peak {:.1} cpm, noise peak {:.1} cpm)",
            snr.snr_db, snr.signal_peak.freq_cpm, snr.noise_peak.freq_cpm
        ),
        path.display().to_string(),
    ])
}

const SNR_CONVENTION: &str = "20*log10(signal_peak_psd / noise_peak_psd)";

#[derive(Serialize)]
struct DenoiseFile<'a> {
    #[serde(flatten)]
    report: &'a DenoiseReport,
    input: String,
    artifacts: BTreeMap<&'static str, &'static str>,
}

fn single_channel(
    rec: &MultichannelRecord,
    name: String,
    data: Vec<f64>,
) -> Result<MultichannelRecord, Failure> {
    MultichannelRecord::new(
        rec.sample_rate_hz(),
        vec![ChannelMeta::derived(name)],
        vec![data],
    )
    .map_err(runtime)
}

fn denoise(
    input: &Path,
    rec: &MultichannelRecord,
    signal: &str,
    refs: &[String],
    cfg: &snswf::pipeline::PipelineConfig,
    method: Method,
    dir: &Path,
) -> Outcome {
    let ref_names: Vec<&str> = refs.iter().map(String::as_str).collect();
    let out = run_denoise(rec, signal, &ref_names, cfg, method).map_err(staged)?;
    prepare_dir(dir)?;
    let mut artifacts = BTreeMap::new();

    let mut spectra: Vec<(String, Option<&[f64]>)> =
        vec![("raw".into(), Some(out.raw_psd.psd.as_slice()))];
    if let Some(c) = &out.classic {
        write_record(
            dir,
            "denoised_classic.csv",
            &single_channel(rec, format!("{signal}_classic"), c.denoised.clone())?,
        )?;
        let taps = taps_matrix(c.design.filters.iter().map(|f| f.taps.as_slice()));
        write_text(
            dir,
            "taps_classic.csv",
            &matrix_csv("tap", &tap_labels(taps.nrows()), refs, &taps),
        )?;
        artifacts.insert("denoised_classic", "denoised_classic.csv");
        artifacts.insert("taps_classic", "taps_classic.csv");
        spectra.push(("classic".into(), Some(c.psd.psd.as_slice())));
    }
    if let Some(s) = &out.snswf {
        write_record(
            dir,
            "denoised_snswf.csv",
            &single_channel(rec, format!("{signal}_snswf"), s.denoised.clone())?,
        )?;
        let used: Vec<String> = s
            .analysis
            .selected()
            .iter()
            .map(|i| format!("s{i}"))
            .collect();
        let taps = taps_matrix(s.design.filters.iter().map(|f| f.taps.as_slice()));
        write_text(
            dir,
            "taps_snswf.csv",
            &matrix_csv("tap", &tap_labels(taps.nrows()), &used, &taps),
        )?;

        let sep = &s.separation;
        let names: Vec<String> = (0..sep.n_sources()).map(|i| format!("s{i}")).collect();
        write_text(
            dir,
            "mixing.csv",
            &matrix_csv("channel", refs, &names, &sep.mixing),
        )?;
        write_text(
            dir,
            "unmixing.csv",
            &matrix_csv("source", &names, refs, &sep.unmixing),
        )?;
        let grid = s.psd.freqs_cpm.clone();
        let cols: Vec<(String, Option<&[f64]>)> = names
            .iter()
            .zip(&s.analysis.spectra)
            .map(|(n, p)| {
                (
                    n.clone(),
                    p.as_ref().map(|p: &PsdEstimate| p.psd.as_slice()),
                )
            })
            .collect();
        write_text(dir, "component_psd.csv", &spectra_csv(&grid, &cols))?;
        artifacts.insert("denoised_snswf", "denoised_snswf.csv");
        artifacts.insert("taps_snswf", "taps_snswf.csv");
        artifacts.insert("mixing", "mixing.csv");
        artifacts.insert("unmixing", "unmixing.csv");
        artifacts.insert("component_psd", "component_psd.csv");
        spectra.push(("snswf".into(), Some(s.psd.psd.as_slice())));
    }
    write_text(
        dir,
        "spectra.csv",
        &spectra_csv(&out.raw_psd.freqs_cpm, &spectra),
    )?;
    artifacts.insert("spectra", "spectra.csv");

    let r = &out.report;
    let path = write_json(
        dir,
        "report.json",
        &DenoiseFile {
            report: r,
            input: file_name(input),
            artifacts,
        },
    )?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2} dB"));
    let mut summary = format!(
        "denoise: raw {:.2} dB, classic {}, snswf {}, improvement {}",
        r.raw_snr_db,
        fmt(r.classic_snr_db),
        fmt(r.snswf_snr_db),
        fmt(r.improvement_db)
    );
    if !r.warnings.is_empty() {
        let _ = write!(
            summary,
            " ({} warning{})",
            r.warnings.len(),
            if r.warnings.len() == 1 { "" } else { "s" }
        );
    }
    Ok(vec![summary, path.display().to_string()])
}

fn taps_matrix<'a>(filters: impl Iterator<Item = &'a [f64]>) -> DMatrix<f64> {
    let cols: Vec<&[f64]> = filters.collect();
    let n = cols.first().map_or(0, |c| c.len());
    DMatrix::from_fn(n, cols.len(), |k, j| cols[j][k])
}

fn tap_labels(n: usize) -> Vec<String> {
    (0..n).map(|k| k.to_string()).collect()
}
