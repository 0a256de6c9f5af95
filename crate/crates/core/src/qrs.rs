//! Pan-Tompkins decision stage: adaptive dual thresholds on the integrated
//! and band-passed streams, RR-average tracking, search-back for missed
//! beats and T-wave discrimination.
//!
//! The detector works offline on a whole record. Candidates are the local
//! maxima of the integrated signal, thinned so that no two lie within the
//! refractory period, and are then classified in time order exactly as a
//! streaming detector would.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{
    derivative_filter, moving_window_integrate, ms_to_samples, square_signal, BandPass, EcgRecord,
};

/// Detector parameters. Defaults are the classic 5-15 Hz / 150 ms / 200 ms
/// values, converted to samples for whatever rate the record has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub integration_window_ms: f64,
    pub refractory_ms: f64,
    /// A gap longer than this multiple of the regular RR average triggers search-back.
    pub searchback_factor: f64,
    pub twave_window_ms: f64,
    pub twave_slope_ratio: f64,
    /// Half-width of the raw-signal window used to refine each R location.
    pub refine_window_ms: f64,
    /// Leading stretch used to initialise the peak levels.
    pub learning_period_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            low_hz: 5.0,
            high_hz: 15.0,
            integration_window_ms: 150.0,
            refractory_ms: 200.0,
            searchback_factor: 1.66,
            twave_window_ms: 360.0,
            twave_slope_ratio: 0.5,
            refine_window_ms: 40.0,
            learning_period_s: 2.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("integration_window_ms", self.integration_window_ms),
            ("refractory_ms", self.refractory_ms),
            ("searchback_factor", self.searchback_factor),
            ("twave_window_ms", self.twave_window_ms),
            ("twave_slope_ratio", self.twave_slope_ratio),
            ("refine_window_ms", self.refine_window_ms),
            ("learning_period_s", self.learning_period_s),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("detector.{name} must be positive")));
            }
        }
        if !(self.low_hz > 0.0 && self.low_hz < self.high_hz) {
            return Err(Error::Config(
                "detector band edges must satisfy 0 < low_hz < high_hz".into(),
            ));
        }
        Ok(())
    }
}

/// Running signal/noise peak estimates for one stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakLevels {
    pub spk: f64,
    pub npk: f64,
    pub threshold1: f64,
    pub threshold2: f64,
}

impl PeakLevels {
    pub fn new(spk: f64, npk: f64) -> Self {
        let mut levels = Self {
            spk,
            npk,
            threshold1: 0.0,
            threshold2: 0.0,
        };
        levels.recompute();
        levels
    }

    fn recompute(&mut self) {
        self.threshold1 = self.npk + 0.25 * (self.spk - self.npk);
        self.threshold2 = 0.5 * self.threshold1;
    }

    pub fn update(&mut self, peak: f64, is_signal_peak: bool) -> Result<()> {
        if !(peak >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "peak value must be non-negative, got {peak}"
            )));
        }
        if is_signal_peak {
            self.spk = 0.125 * peak + 0.875 * self.spk;
        } else {
            self.npk = 0.125 * peak + 0.875 * self.npk;
        }
        self.recompute();
        Ok(())
    }

    /// Beats recovered by search-back pull the signal level harder.
    fn searchback_update(&mut self, peak: f64) {
        self.spk = 0.25 * peak + 0.75 * self.spk;
        self.recompute();
    }
}

/// Applies one running-estimate update and returns the new levels.
pub fn update_thresholds(
    levels: PeakLevels,
    peak_value: f64,
    is_signal_peak: bool,
) -> Result<PeakLevels> {
    let mut next = levels;
    next.update(peak_value, is_signal_peak)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveKind {
    Qrs,
    TWave,
}

/// A candidate within the T-wave window of the last QRS whose maximal
/// slope is under the configured fraction of that QRS's slope is a T wave.
pub fn discriminate_twave(
    candidate_index: usize,
    last_qrs_index: usize,
    slope_candidate: f64,
    slope_last_qrs: f64,
    sample_rate: f64,
) -> WaveKind {
    let cfg = DetectorConfig::default();
    classify_twave(
        candidate_index,
        last_qrs_index,
        slope_candidate,
        slope_last_qrs,
        sample_rate,
        &cfg,
    )
}

fn classify_twave(
    candidate_index: usize,
    last_qrs_index: usize,
    slope_candidate: f64,
    slope_last_qrs: f64,
    sample_rate: f64,
    cfg: &DetectorConfig,
) -> WaveKind {
    let gap_ms = candidate_index.saturating_sub(last_qrs_index) as f64 * 1000.0 / sample_rate;
    if gap_ms <= cfg.twave_window_ms && slope_candidate < cfg.twave_slope_ratio * slope_last_qrs {
        WaveKind::TWave
    } else {
        WaveKind::Qrs
    }
}

/// Mutable state of one detection pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorState {
    pub integrated: PeakLevels,
    pub filtered: PeakLevels,
    /// Mean of the last eight RR intervals, in samples.
    pub rr_avg1: Option<f64>,
    /// Mean of the last eight RR intervals that fell inside the regular-rhythm limits.
    pub rr_avg2: Option<f64>,
    pub last_qrs_index: Option<usize>,
    pub refractory_samples: usize,
    recent_rr: VecDeque<f64>,
    selected_rr: VecDeque<f64>,
    irregular_run: usize,
}

impl DetectorState {
    fn new(integrated: PeakLevels, filtered: PeakLevels, refractory_samples: usize) -> Self {
        Self {
            integrated,
            filtered,
            rr_avg1: None,
            rr_avg2: None,
            last_qrs_index: None,
            refractory_samples,
            recent_rr: VecDeque::with_capacity(8),
            selected_rr: VecDeque::with_capacity(8),
            irregular_run: 0,
        }
    }

    fn record_rr(&mut self, rr: f64) {
        push_capped(&mut self.recent_rr, rr);
        self.rr_avg1 = Some(mean(&self.recent_rr));
        match self.rr_avg2 {
            None => {
                push_capped(&mut self.selected_rr, rr);
                self.rr_avg2 = Some(rr);
            }
            Some(avg2) if (0.92 * avg2..=1.16 * avg2).contains(&rr) => {
                push_capped(&mut self.selected_rr, rr);
                self.rr_avg2 = Some(mean(&self.selected_rr));
                self.irregular_run = 0;
            }
            Some(_) => {
                self.irregular_run += 1;
                // the rhythm has moved; adopt it
                if self.irregular_run >= 8 {
                    self.selected_rr = self.recent_rr.clone();
                    self.rr_avg2 = self.rr_avg1;
                    self.irregular_run = 0;
                }
            }
        }
    }
}

fn push_capped(q: &mut VecDeque<f64>, v: f64) {
    if q.len() == 8 {
        q.pop_front();
    }
    q.push_back(v);
}

fn mean(q: &VecDeque<f64>) -> f64 {
    q.iter().sum::<f64>() / q.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrsResult {
    pub r_indices: Vec<usize>,
    pub searchback_count: usize,
    pub rejected_twave_count: usize,
    pub refractory_samples: usize,
    /// State at the end of the pass.
    pub final_state: DetectorState,
}

/// Intermediate outputs of the pre-processing cascade, all the same length
/// as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct PanTompkinsStages {
    pub bandpassed: Vec<f64>,
    pub derivative: Vec<f64>,
    pub squared: Vec<f64>,
    pub integrated: Vec<f64>,
    /// Band-pass group delay at the band centre, in samples.
    pub bandpass_delay: usize,
    pub integration_window: usize,
}

/// Runs band-pass, derivative, squaring and integration. The record mean is
/// removed first so a DC offset does not ring through the zero-state filters.
pub fn preprocess(record: &EcgRecord, cfg: &DetectorConfig) -> Result<PanTompkinsStages> {
    let fs = record.sample_rate();
    let samples = record.samples();
    let m = samples.iter().sum::<f64>() / samples.len() as f64;
    let centered: Vec<f64> = samples.iter().map(|x| x - m).collect();

    let bp = BandPass::new(fs, cfg.low_hz, cfg.high_hz)?;
    let bandpassed = bp.apply(&centered);
    let derivative = derivative_filter(&bandpassed, fs)?;
    let squared = square_signal(&derivative);
    let window = ms_to_samples(cfg.integration_window_ms, fs);
    let integrated = moving_window_integrate(&squared, window)?;
    Ok(PanTompkinsStages {
        bandpassed,
        derivative,
        squared,
        integrated,
        bandpass_delay: bp.center_delay_samples(),
        integration_window: window,
    })
}

pub fn detect_qrs(record: &EcgRecord, cfg: &DetectorConfig) -> Result<QrsResult> {
    let stages = preprocess_checked(record, cfg)?;
    detect_from_stages(record, &stages, cfg)
}

/// Like [`detect_qrs`] but also returns the pre-processing stages.
pub fn detect_qrs_with_stages(
    record: &EcgRecord,
    cfg: &DetectorConfig,
) -> Result<(QrsResult, PanTompkinsStages)> {
    let stages = preprocess_checked(record, cfg)?;
    let result = detect_from_stages(record, &stages, cfg)?;
    Ok((result, stages))
}

fn preprocess_checked(record: &EcgRecord, cfg: &DetectorConfig) -> Result<PanTompkinsStages> {
    cfg.validate()?;
    let fs = record.sample_rate();
    let required = (cfg.learning_period_s * fs).ceil() as usize;
    let samples = record.samples();
    if samples.len() < required {
        return Err(Error::SignalTooShort {
            samples: samples.len(),
            required,
        });
    }
    let first = samples[0];
    if samples.iter().all(|&x| x == first) {
        return Err(Error::FlatLine {
            samples: samples.len(),
        });
    }
    preprocess(record, cfg)
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    /// Position of the integrated-signal peak.
    at: usize,
    integrated: f64,
    filtered: f64,
    slope: f64,
    /// Raw-signal R location.
    r_index: usize,
}

struct Decision<'a> {
    cfg: &'a DetectorConfig,
    fs: f64,
    state: DetectorState,
    last: Option<Candidate>,
    /// Candidates classified as noise since the last accepted beat.
    pending: Vec<Candidate>,
    accepted: Vec<usize>,
    searchback_count: usize,
    rejected_twave_count: usize,
}

impl Decision<'_> {
    fn twave(&self, c: &Candidate) -> WaveKind {
        match self.last {
            Some(last) => classify_twave(c.at, last.at, c.slope, last.slope, self.fs, self.cfg),
            None => WaveKind::Qrs,
        }
    }

    fn clears_refractory(&self, c: &Candidate) -> bool {
        self.last.is_none_or(|last| {
            c.at >= last.at + self.state.refractory_samples
                && c.r_index >= last.r_index + self.state.refractory_samples
        })
    }

    fn accept(&mut self, c: Candidate, via_searchback: bool) -> Result<()> {
        if via_searchback {
            self.state.integrated.searchback_update(c.integrated);
            self.state.filtered.searchback_update(c.filtered);
            self.searchback_count += 1;
        } else {
            self.state.integrated.update(c.integrated, true)?;
            self.state.filtered.update(c.filtered, true)?;
        }
        if let Some(last) = self.last {
            self.state.record_rr((c.r_index - last.r_index) as f64);
        }
        self.state.last_qrs_index = Some(c.r_index);
        self.last = Some(c);
        self.pending.retain(|p| p.at > c.at);
        self.accepted.push(c.r_index);
        Ok(())
    }

    fn reject(&mut self, c: Candidate) -> Result<()> {
        self.state.integrated.update(c.integrated, false)?;
        self.state.filtered.update(c.filtered, false)?;
        self.pending.push(c);
        Ok(())
    }

    /// Whether `c` would be accepted on the primary thresholds.
    fn primary(&self, c: &Candidate) -> bool {
        self.clears_refractory(c)
            && c.integrated > self.state.integrated.threshold1
            && c.filtered > self.state.filtered.threshold1
            && self.twave(c) == WaveKind::Qrs
    }

    /// If the stretch since the last beat is too long, accept the strongest
    /// skipped candidate that clears the lower threshold on either stream.
    /// Candidates inside the last beat's T-wave window, or within the
    /// refractory period of a beat about to be accepted, are not eligible.
    fn searchback(&mut self, upto: usize, next: Option<&Candidate>) -> Result<bool> {
        let (Some(last), Some(avg2)) = (self.last, self.state.rr_avg2) else {
            return Ok(false);
        };
        if ((upto - last.at) as f64) <= self.cfg.searchback_factor * avg2 {
            return Ok(false);
        }
        let thr_i = self.state.integrated.threshold2;
        let thr_f = self.state.filtered.threshold2;
        let twave_end = last.r_index + ms_to_samples(self.cfg.twave_window_ms, self.fs);
        let before = match next {
            Some(n) if self.primary(n) => n.r_index.saturating_sub(self.state.refractory_samples),
            _ => usize::MAX,
        };
        let best = self
            .pending
            .iter()
            .enumerate()
            .filter(|(_, c)| c.at < upto && c.r_index > twave_end && c.r_index <= before)
            .filter(|(_, c)| self.clears_refractory(c))
            .filter(|(_, c)| c.integrated > thr_i || c.filtered > thr_f)
            .max_by(|a, b| a.1.integrated.total_cmp(&b.1.integrated))
            .map(|(i, _)| i);
        match best {
            Some(i) => {
                let c = self.pending.remove(i);
                self.accept(c, true)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn process(&mut self, c: Candidate) -> Result<()> {
        while self.searchback(c.at, Some(&c))? {}
        if !self.clears_refractory(&c) {
            return Ok(());
        }
        let above = c.integrated > self.state.integrated.threshold1
            && c.filtered > self.state.filtered.threshold1;
        if !above {
            return self.reject(c);
        }
        if self.twave(&c) == WaveKind::TWave {
            self.rejected_twave_count += 1;
            return self.reject(c);
        }
        self.accept(c, false)
    }
}

fn detect_from_stages(
    record: &EcgRecord,
    stages: &PanTompkinsStages,
    cfg: &DetectorConfig,
) -> Result<QrsResult> {
    let fs = record.sample_rate();
    let raw = record.samples();
    let n = raw.len();
    let refractory = ms_to_samples(cfg.refractory_ms, fs);
    let refine = ms_to_samples(cfg.refine_window_ms, fs);
    let window = stages.integration_window;
    let delay = stages.bandpass_delay;

    let mwi = &stages.integrated;
    let abs_bp: Vec<f64> = stages.bandpassed.iter().map(|x| x.abs()).collect();
    let abs_der: Vec<f64> = stages.derivative.iter().map(|x| x.abs()).collect();

    let learn = ((cfg.learning_period_s * fs) as usize).clamp(1, n);
    let init = |xs: &[f64]| {
        let head = &xs[..learn];
        let max = head.iter().copied().fold(0.0, f64::max);
        let avg = head.iter().sum::<f64>() / learn as f64;
        PeakLevels::new(0.25 * max, 0.5 * avg)
    };
    let state = DetectorState::new(init(mwi), init(&abs_bp), refractory);

    let candidates: Vec<Candidate> = integrated_peaks(mwi, refractory)
        .into_iter()
        .map(|at| {
            let lo = at.saturating_sub(window);
            let (f_idx, filtered) = argmax(&abs_bp, lo, at + 1);
            let (_, slope) = argmax(&abs_der, lo, at + 1);
            let centre = f_idx.saturating_sub(delay);
            let (r_index, _) = argmax(raw, centre.saturating_sub(refine), (centre + refine + 1).min(n));
            Candidate {
                at,
                integrated: mwi[at],
                filtered,
                slope,
                r_index,
            }
        })
        .collect();

    let mut decision = Decision {
        cfg,
        fs,
        state,
        last: None,
        pending: Vec::new(),
        accepted: Vec::new(),
        searchback_count: 0,
        rejected_twave_count: 0,
    };
    for c in candidates {
        decision.process(c)?;
    }
    while decision.searchback(n, None)? {}

    debug_assert!(decision
        .accepted
        .windows(2)
        .all(|w| w[1] >= w[0] + refractory));
    Ok(QrsResult {
        r_indices: decision.accepted,
        searchback_count: decision.searchback_count,
        rejected_twave_count: decision.rejected_twave_count,
        refractory_samples: refractory,
        final_state: decision.state,
    })
}

/// First index of the maximum of `xs[lo..hi]`.
fn argmax(xs: &[f64], lo: usize, hi: usize) -> (usize, f64) {
    let mut best = (lo, xs[lo]);
    for (i, &x) in xs.iter().enumerate().take(hi).skip(lo + 1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Local maxima of the integrated signal, keeping only the largest within
/// any `min_distance` neighbourhood. Returned in time order.
fn integrated_peaks(mwi: &[f64], min_distance: usize) -> Vec<usize> {
    let n = mwi.len();
    let mut maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = i == 0 || mwi[i] > mwi[i - 1];
            let right = i + 1 == n || mwi[i] >= mwi[i + 1];
            left && right && mwi[i] > 0.0
        })
        .collect();
    maxima.sort_by(|&a, &b| mwi[b].total_cmp(&mwi[a]).then(a.cmp(&b)));

    let mut kept = BTreeSet::new();
    for i in maxima {
        let lo = i.saturating_sub(min_distance - 1);
        if kept.range(lo..i + min_distance).next().is_none() {
            kept.insert(i);
        }
    }
    kept.into_iter().collect()
}
