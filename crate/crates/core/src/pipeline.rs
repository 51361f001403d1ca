//! Separation-based Wiener denoising and the classic baseline.
//!
//! The separated path runs SOBI on the reference channels, scores every
//! component by the peak-ratio SNR of its AR spectrum, keeps the
//! noise-dominant ones and cancels them from the signal channel. The classic
//! path feeds the raw references straight into the same Wiener design.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signals::{demean, MultichannelRecord};
use crate::sobi::{sobi_with, SeparationResult, SobiConfig};
use crate::spectral::{series_psd, snr_db, Band, PsdEstimate, SnrMeasurement, SpectralConfig};
use crate::units::nyquist_cpm;
use crate::wiener::{cancel, WienerConfig, WienerDesign};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub signal_band_cpm: Band,
    pub noise_bands_cpm: Vec<Band>,
    pub high_freq_threshold_cpm: f64,
    pub max_selected: usize,
    pub snr_ceiling_db: f64,
}

impl SelectionPolicy {
    /// Signal band 3 ± 0.5 cpm; noise searched at ≤ 2.5 cpm and ≥ 3.5 cpm up
    /// to the Nyquist frequency.
    pub fn for_sample_rate(sample_rate_hz: f64) -> Self {
        Self {
            signal_band_cpm: Band::new(2.5, 3.5),
            noise_bands_cpm: vec![
                Band::new(0.05, 2.5),
                Band::new(3.5, nyquist_cpm(sample_rate_hz)),
            ],
            high_freq_threshold_cpm: 30.0,
            max_selected: 2,
            snr_ceiling_db: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bands = std::iter::once(&self.signal_band_cpm).chain(&self.noise_bands_cpm);
        for b in bands {
            if !(b.lo_cpm < b.hi_cpm) {
                return invalid(format!("band [{}, {}] cpm has lo ≥ hi", b.lo_cpm, b.hi_cpm));
            }
        }
        if self.noise_bands_cpm.is_empty() {
            return invalid("at least one noise band is required");
        }
        if self.max_selected == 0 {
            return invalid("max_selected must be at least 1");
        }
        Ok(())
    }

    pub fn measure(&self, psd: &PsdEstimate) -> Result<SnrMeasurement> {
        snr_db(psd, self.signal_band_cpm, &self.noise_bands_cpm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionReason {
    LowestSnr,
    HighFrequencyNoise,
    NotSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentAssessment {
    pub component_index: usize,
    /// `None` when the component could not be assessed (e.g. constant).
    pub snr_db: Option<f64>,
    pub signal_peak_cpm: Option<f64>,
    pub signal_peak_value: Option<f64>,
    pub main_noise_peak_cpm: Option<f64>,
    pub main_noise_peak_value: Option<f64>,
    pub selected: bool,
    pub selection_reason: SelectionReason,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl ComponentAssessment {
    fn from_measurement(component_index: usize, m: &SnrMeasurement) -> Self {
        Self {
            component_index,
            snr_db: Some(m.snr_db),
            signal_peak_cpm: Some(m.signal_peak.freq_cpm),
            signal_peak_value: Some(m.signal_peak.psd_value),
            main_noise_peak_cpm: Some(m.noise_peak.freq_cpm),
            main_noise_peak_value: Some(m.noise_peak.psd_value),
            selected: false,
            selection_reason: SelectionReason::NotSelected,
            failure: None,
        }
    }

    fn unassessable(component_index: usize, why: String) -> Self {
        Self {
            component_index,
            snr_db: None,
            signal_peak_cpm: None,
            signal_peak_value: None,
            main_noise_peak_cpm: None,
            main_noise_peak_value: None,
            selected: false,
            selection_reason: SelectionReason::NotSelected,
            failure: Some(why),
        }
    }
}

/// Per-component spectra alongside the assessment table.
#[derive(Debug, Clone)]
pub struct ComponentAnalysis {
    pub assessments: Vec<ComponentAssessment>,
    pub spectra: Vec<Option<PsdEstimate>>,
    pub warning: Option<String>,
}

impl ComponentAnalysis {
    pub fn selected(&self) -> Vec<usize> {
        self.assessments
            .iter()
            .filter(|a| a.selected)
            .map(|a| a.component_index)
            .collect()
    }
}

/// Scores every row of `sources` and applies [`select_references`].
pub fn assess_sources(
    sources: &DMatrix<f64>,
    sample_rate_hz: f64,
    policy: &SelectionPolicy,
    spectral: &SpectralConfig,
) -> Result<ComponentAnalysis> {
    if sources.nrows() == 0 {
        return invalid("no components to assess");
    }
    policy.validate()?;
    spectral.validate()?;
    let mut assessments = Vec::with_capacity(sources.nrows());
    let mut spectra = Vec::with_capacity(sources.nrows());
    for (i, row) in sources.row_iter().enumerate() {
        let x: Vec<f64> = row.iter().copied().collect();
        let scored = series_psd(&x, sample_rate_hz, spectral).and_then(|psd| {
            let m = policy.measure(&psd)?;
            Ok((psd, m))
        });
        match scored {
            Ok((psd, m)) => {
                assessments.push(ComponentAssessment::from_measurement(i, &m));
                spectra.push(Some(psd));
            }
            Err(e @ (Error::DegenerateInput(_) | Error::UndefinedSnr(_))) => {
                assessments.push(ComponentAssessment::unassessable(i, e.to_string()));
                spectra.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let selection = select_references(&assessments, policy)?;
    for (idx, reason) in &selection.chosen {
        assessments[*idx].selected = true;
        assessments[*idx].selection_reason = *reason;
    }
    Ok(ComponentAnalysis {
        assessments,
        spectra,
        warning: selection.warning,
    })
}

pub fn assess_components(
    sep: &SeparationResult,
    sample_rate_hz: f64,
    policy: &SelectionPolicy,
    spectral: &SpectralConfig,
) -> Result<ComponentAnalysis> {
    assess_sources(&sep.sources, sample_rate_hz, policy, spectral)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Indices into the assessment list with the rule that picked them, in
    /// selection order.
    pub chosen: Vec<(usize, SelectionReason)>,
    pub warning: Option<String>,
}

impl Selection {
    pub fn indices(&self) -> Vec<usize> {
        self.chosen.iter().map(|(i, _)| *i).collect()
    }
}

/// Minimum-SNR component first, then components whose main noise peak sits
/// at or above the high-frequency threshold with SNR at or below the ceiling,
/// lowest SNR first, up to `max_selected`. Ties go to the lower index.
pub fn select_references(
    assessments: &[ComponentAssessment],
    policy: &SelectionPolicy,
) -> Result<Selection> {
    let mut ranked: Vec<(usize, f64)> = assessments
        .iter()
        .enumerate()
        .filter_map(|(pos, a)| a.snr_db.map(|s| (pos, s)))
        .collect();
    if ranked.is_empty() {
        return invalid("no component could be assessed");
    }
    ranked.sort_by(|a, b| {
        a.1.total_cmp(&b.1).then(
            assessments[a.0]
                .component_index
                .cmp(&assessments[b.0].component_index),
        )
    });

    let mut chosen = vec![(ranked[0].0, SelectionReason::LowestSnr)];
    for &(pos, snr) in &ranked[1..] {
        if chosen.len() >= policy.max_selected {
            break;
        }
        let peak = assessments[pos]
            .main_noise_peak_cpm
            .unwrap_or(f64::NEG_INFINITY);
        if peak >= policy.high_freq_threshold_cpm && snr <= policy.snr_ceiling_db {
            chosen.push((pos, SelectionReason::HighFrequencyNoise));
        }
    }

    let warning = if ranked.iter().all(|&(_, s)| s > policy.snr_ceiling_db) {
        Some(format!(
            "every component has SNR above {} dB; the lowest-SNR component was used anyway",
            policy.snr_ceiling_db
        ))
    } else {
        None
    };
    Ok(Selection { chosen, warning })
}

/// All knobs of a denoising run, resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub policy: SelectionPolicy,
    pub wiener: WienerConfig,
    pub spectral: SpectralConfig,
    pub sobi: SobiConfig,
}

impl PipelineConfig {
    pub fn for_sample_rate(sample_rate_hz: f64) -> Self {
        Self {
            policy: SelectionPolicy::for_sample_rate(sample_rate_hz),
            wiener: WienerConfig::default(),
            spectral: SpectralConfig::default(),
            sobi: SobiConfig::default(),
        }
    }

    /// Fills in the default lag grid so reports echo the lags used.
    pub fn resolved(mut self) -> Self {
        self.sobi.lags_s = self.sobi.resolved_lags_s();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Classic,
    Snswf,
    Both,
}

#[derive(Debug, Clone, Serialize)]
pub struct DenoiseReport {
    pub schema_version: u32,
    pub method: Method,
    pub signal_channel: String,
    pub reference_channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    /// Peak-ratio SNRs use 20·log10 of spectral-density ratios.
    pub snr_convention: String,
    /// First sample included in every SNR measurement.
    pub measured_from_sample: usize,
    pub raw: SnrMeasurement,
    pub raw_snr_db: f64,
    pub classic_snr_db: Option<f64>,
    pub snswf_snr_db: Option<f64>,
    pub improvement_db: Option<f64>,
    pub classic: Option<SnrMeasurement>,
    pub snswf: Option<SnrMeasurement>,
    pub assessments: Vec<ComponentAssessment>,
    pub selected_components: Vec<usize>,
    pub sobi_sweeps: Option<usize>,
    pub sobi_converged: Option<bool>,
    pub warnings: Vec<String>,
    pub config: PipelineConfig,
}

#[derive(Debug, Clone)]
pub struct ClassicOutcome {
    pub denoised: Vec<f64>,
    pub snr: SnrMeasurement,
    pub psd: PsdEstimate,
    pub design: WienerDesign,
}

#[derive(Debug, Clone)]
pub struct SnswfOutcome {
    pub denoised: Vec<f64>,
    pub snr: SnrMeasurement,
    pub psd: PsdEstimate,
    pub separation: SeparationResult,
    pub analysis: ComponentAnalysis,
    pub design: WienerDesign,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutcome {
    pub report: DenoiseReport,
    pub raw_psd: PsdEstimate,
    pub classic: Option<ClassicOutcome>,
    pub snswf: Option<SnswfOutcome>,
}

/// Failure of one pipeline stage.
#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: &'static str,
    #[source]
    pub source: Error,
}

fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|source| StageError {
        stage: name,
        source,
    })
}

struct Inputs {
    rate: f64,
    d: Vec<f64>,
    refs: Vec<Vec<f64>>,
}

fn gather(
    record: &MultichannelRecord,
    signal_channel: &str,
    reference_channels: &[&str],
) -> Result<Inputs> {
    if reference_channels.len() < 2 {
        return invalid("at least two reference channels are required");
    }
    if reference_channels.contains(&signal_channel) {
        return invalid(format!(
            "signal channel '{signal_channel}' is also listed as a reference"
        ));
    }
    let rec = demean(record);
    let d = rec
        .channel(signal_channel)
        .ok_or_else(|| Error::InvalidArgument(format!("no channel named '{signal_channel}'")))?
        .to_vec();
    let refs = reference_channels
        .iter()
        .map(|name| {
            rec.channel(name)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::InvalidArgument(format!("no channel named '{name}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Inputs {
        rate: rec.sample_rate_hz(),
        d,
        refs,
    })
}

/// Spectrum and SNR over the steady-state span. The first `N − 1` filter
/// outputs use a partial tap window, so every series (raw included) is
/// measured from sample `N − 1` on.
fn measure_series(
    x: &[f64],
    rate: f64,
    cfg: &PipelineConfig,
) -> Result<(PsdEstimate, SnrMeasurement)> {
    let skip = cfg.wiener.n_taps.saturating_sub(1).min(x.len());
    let psd = series_psd(&x[skip..], rate, &cfg.spectral)?;
    let snr = cfg.policy.measure(&psd)?;
    Ok((psd, snr))
}

fn classic_on(
    inputs: &Inputs,
    cfg: &PipelineConfig,
) -> std::result::Result<ClassicOutcome, StageError> {
    let refs: Vec<&[f64]> = inputs.refs.iter().map(Vec::as_slice).collect();
    let design = stage(
        "classic wiener",
        cfg.wiener.design(&refs, &inputs.d, inputs.rate),
    )?;
    let denoised = stage("classic wiener", cancel(&design, &refs, &inputs.d))?;
    let (psd, snr) = stage(
        "classic spectrum",
        measure_series(&denoised, inputs.rate, cfg),
    )?;
    Ok(ClassicOutcome {
        denoised,
        snr,
        psd,
        design,
    })
}

fn snswf_on(
    inputs: &Inputs,
    cfg: &PipelineConfig,
) -> std::result::Result<SnswfOutcome, StageError> {
    let x = DMatrix::from_fn(inputs.refs.len(), inputs.d.len(), |i, t| inputs.refs[i][t]);
    let separation = stage("sobi", sobi_with(&x, inputs.rate, &cfg.sobi))?;
    let analysis = stage(
        "assessment",
        assess_components(&separation, inputs.rate, &cfg.policy, &cfg.spectral),
    )?;
    let chosen: Vec<Vec<f64>> = analysis
        .selected()
        .iter()
        .map(|&i| separation.source(i))
        .collect();
    let refs: Vec<&[f64]> = chosen.iter().map(Vec::as_slice).collect();
    let design = stage(
        "snswf wiener",
        cfg.wiener.design(&refs, &inputs.d, inputs.rate),
    )?;
    let denoised = stage("snswf wiener", cancel(&design, &refs, &inputs.d))?;
    let (psd, snr) = stage(
        "snswf spectrum",
        measure_series(&denoised, inputs.rate, cfg),
    )?;
    Ok(SnswfOutcome {
        denoised,
        snr,
        psd,
        separation,
        analysis,
        design,
    })
}

/// Classic Wiener cancellation with the raw references.
pub fn run_classic(
    record: &MultichannelRecord,
    signal_channel: &str,
    reference_channels: &[&str],
    cfg: &PipelineConfig,
) -> std::result::Result<ClassicOutcome, StageError> {
    let inputs = stage("input", gather(record, signal_channel, reference_channels))?;
    stage("config", validate(cfg))?;
    classic_on(&inputs, cfg)
}

/// Full comparison: raw, classic and separation-based outputs in one report.
pub fn run_snswf(
    record: &MultichannelRecord,
    signal_channel: &str,
    reference_channels: &[&str],
    cfg: &PipelineConfig,
) -> std::result::Result<DenoiseOutcome, StageError> {
    run_denoise(
        record,
        signal_channel,
        reference_channels,
        cfg,
        Method::Both,
    )
}

pub fn run_denoise(
    record: &MultichannelRecord,
    signal_channel: &str,
    reference_channels: &[&str],
    cfg: &PipelineConfig,
    method: Method,
) -> std::result::Result<DenoiseOutcome, StageError> {
    let cfg = cfg.clone().resolved();
    stage("config", validate(&cfg))?;
    let inputs = stage("input", gather(record, signal_channel, reference_channels))?;
    let (raw_psd, raw) = stage("raw spectrum", measure_series(&inputs.d, inputs.rate, &cfg))?;

    let classic = match method {
        Method::Classic | Method::Both => Some(classic_on(&inputs, &cfg)?),
        Method::Snswf => None,
    };
    let snswf = match method {
        Method::Snswf | Method::Both => Some(snswf_on(&inputs, &cfg)?),
        Method::Classic => None,
    };

    let mut warnings = Vec::new();
    if let Some(s) = &snswf {
        if !s.separation.converged {
            warnings.push(format!(
                "joint diagonalization stopped after {} sweeps without converging",
                s.separation.sweeps
            ));
        }
        warnings.extend(s.analysis.warning.clone());
    }

    let classic_snr_db = classic.as_ref().map(|c| c.snr.snr_db);
    let snswf_snr_db = snswf.as_ref().map(|s| s.snr.snr_db);
    let improvement_db = match (snswf_snr_db, classic_snr_db) {
        (Some(s), Some(c)) => Some(s - c),
        _ => None,
    };

    let report = DenoiseReport {
        schema_version: REPORT_SCHEMA_VERSION,
        method,
        signal_channel: signal_channel.to_string(),
        reference_channels: reference_channels.iter().map(|s| s.to_string()).collect(),
        sample_rate_hz: inputs.rate,
        n_samples: inputs.d.len(),
        snr_convention: "20*log10(signal_peak_psd / noise_peak_psd)".into(),
        measured_from_sample: cfg.wiener.n_taps - 1,
        raw_snr_db: raw.snr_db,
        raw,
        classic_snr_db,
        snswf_snr_db,
        improvement_db,
        classic: classic.as_ref().map(|c| c.snr),
        snswf: snswf.as_ref().map(|s| s.snr),
        assessments: snswf
            .as_ref()
            .map(|s| s.analysis.assessments.clone())
            .unwrap_or_default(),
        selected_components: snswf
            .as_ref()
            .map(|s| s.analysis.selected())
            .unwrap_or_default(),
        sobi_sweeps: snswf.as_ref().map(|s| s.separation.sweeps),
        sobi_converged: snswf.as_ref().map(|s| s.separation.converged),
        warnings,
        config: cfg,
    };
    Ok(DenoiseOutcome {
        report,
        raw_psd,
        classic,
        snswf,
    })
}

fn validate(cfg: &PipelineConfig) -> Result<()> {
    cfg.policy.validate()?;
    cfg.wiener.validate()?;
    cfg.spectral.validate()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(idx: usize, snr: f64, peak: f64) -> ComponentAssessment {
        ComponentAssessment {
            component_index: idx,
            snr_db: Some(snr),
            signal_peak_cpm: Some(3.0),
            signal_peak_value: Some(1.0),
            main_noise_peak_cpm: Some(peak),
            main_noise_peak_value: Some(1.0),
            selected: false,
            selection_reason: SelectionReason::NotSelected,
            failure: None,
        }
    }

    fn policy() -> SelectionPolicy {
        SelectionPolicy::for_sample_rate(20.0)
    }

    #[test]
    fn selection_mirrors_measured_table() {
        let snrs = [-42.5, -0.6, -39.2, -13.7, -16.1, -22.5, -9.2, -22.2];
        let peaks = [0.6, 0.8, 0.5, 61.9, 1.1, 0.7, 1.5, 0.9];
        let rows: Vec<_> = (0..8).map(|i| row(i, snrs[i], peaks[i])).collect();
        let sel = select_references(&rows, &policy()).unwrap();
        assert_eq!(
            sel.chosen,
            vec![
                (0, SelectionReason::LowestSnr),
                (3, SelectionReason::HighFrequencyNoise)
            ]
        );
        assert!(sel.warning.is_none());
    }

    #[test]
    fn single_component_is_always_selected() {
        let sel = select_references(&[row(0, 35.0, 0.5)], &policy()).unwrap();
        assert_eq!(sel.indices(), vec![0]);
        assert!(sel.warning.is_some());
    }

    #[test]
    fn ties_go_to_lower_index() {
        let rows = vec![row(0, 5.0, 1.0), row(1, -10.0, 1.0), row(2, -10.0, 1.0)];
        assert_eq!(
            select_references(&rows, &policy()).unwrap().indices(),
            vec![1]
        );
    }

    #[test]
    fn high_frequency_rule_respects_ceiling_and_cap() {
        let rows = vec![
            row(0, -20.0, 0.5),
            row(1, 3.0, 60.0),
            row(2, -5.0, 45.0),
            row(3, -8.0, 31.0),
        ];
        let mut p = policy();
        assert_eq!(select_references(&rows, &p).unwrap().indices(), vec![0, 3]);
        p.max_selected = 3;
        assert_eq!(
            select_references(&rows, &p).unwrap().indices(),
            vec![0, 3, 2]
        );
        p.max_selected = 1;
        assert_eq!(select_references(&rows, &p).unwrap().indices(), vec![0]);
    }

    #[test]
    fn unassessable_components_are_skipped() {
        let mut rows = vec![row(0, 4.0, 1.0), row(1, 2.0, 1.0)];
        rows[1].snr_db = None;
        assert_eq!(
            select_references(&rows, &policy()).unwrap().indices(),
            vec![0]
        );
        rows[0].snr_db = None;
        assert!(select_references(&rows, &policy()).is_err());
    }

    #[test]
    fn policy_validation() {
        let mut p = policy();
        p.max_selected = 0;
        assert!(p.validate().is_err());
        let mut p = policy();
        p.signal_band_cpm = Band::new(3.5, 2.5);
        assert!(p.validate().is_err());
    }
}
