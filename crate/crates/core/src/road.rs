//! Road geometry: elevation samples, slope extraction and speed limits along
//! arc length.

use std::f64::consts::PI;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default moving-average window applied to elevation before differentiation.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;
/// Default spacing of the uniform arc-length grid [m].
pub const DEFAULT_GRID_SPACING: f64 = 2.5;

#[derive(Debug, Error, PartialEq)]
pub enum RoadError {
    #[error("road profile needs at least 2 samples, got {0}")]
    ProfileTooShort(usize),
    #[error("malformed road profile: {0}")]
    Malformed(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("arc length {s} m outside road [0, {s_f}] m")]
    OutOfRange { s: f64, s_f: f64 },
    #[error("invalid smoothing window {window} for {samples} samples (must be odd, >= 1 and <= sample count)")]
    BadWindow { window: usize, samples: usize },
    #[error("invalid speed limits: {0}")]
    SpeedLimits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationSample {
    /// Arc length along the road [m].
    pub s: f64,
    /// Elevation [m].
    pub elevation: f64,
}

impl ElevationSample {
    pub fn new(s: f64, elevation: f64) -> Self {
        Self { s, elevation }
    }
}

/// One piecewise-constant speed-limit segment, valid from `s_start` until the
/// next segment begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimit {
    pub s_start: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl SpeedLimit {
    pub fn new(s_start: f64, v_min: f64, v_max: f64) -> Self {
        Self { s_start, v_min, v_max }
    }
}

/// Breakpoint list of speed limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedLimits(Vec<SpeedLimit>);

impl SpeedLimits {
    pub fn new(mut segments: Vec<SpeedLimit>) -> Result<Self, RoadError> {
        if segments.is_empty() {
            return Err(RoadError::SpeedLimits("no segments".into()));
        }
        segments.sort_by(|a, b| a.s_start.total_cmp(&b.s_start));
        if segments[0].s_start > 0.0 {
            return Err(RoadError::SpeedLimits(
                "first segment must start at s = 0".into(),
            ));
        }
        for w in segments.windows(2) {
            if w[1].s_start <= w[0].s_start {
                return Err(RoadError::SpeedLimits(format!(
                    "duplicate breakpoint at s = {}",
                    w[1].s_start
                )));
            }
        }
        for seg in &segments {
            if !(seg.v_min > 0.0 && seg.v_min <= seg.v_max && seg.v_max.is_finite()) {
                return Err(RoadError::SpeedLimits(format!(
                    "segment at s = {} needs 0 < v_min <= v_max (got {}, {})",
                    seg.s_start, seg.v_min, seg.v_max
                )));
            }
        }
        Ok(Self(segments))
    }

    /// A single band over the whole road.
    pub fn uniform(v_min: f64, v_max: f64) -> Result<Self, RoadError> {
        Self::new(vec![SpeedLimit::new(0.0, v_min, v_max)])
    }

    pub fn segments(&self) -> &[SpeedLimit] {
        &self.0
    }

    /// Segment in force at `s` (the last one whose start is at or before `s`).
    pub fn at(&self, s: f64) -> SpeedLimit {
        let idx = self.0.partition_point(|seg| seg.s_start <= s);
        self.0[idx.saturating_sub(1)]
    }

    pub fn max_v_max(&self) -> f64 {
        self.0.iter().map(|seg| seg.v_max).fold(f64::MIN, f64::max)
    }

    pub fn min_v_min(&self) -> f64 {
        self.0.iter().map(|seg| seg.v_min).fold(f64::MAX, f64::min)
    }
}

impl Default for SpeedLimits {
    fn default() -> Self {
        Self(vec![SpeedLimit::new(0.0, 15.0, 32.0)])
    }
}

/// Settings used when turning raw elevation data into a [`RoadProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoadConfig {
    pub smoothing_window: usize,
    pub grid_spacing: f64,
    pub speed_limits: SpeedLimits,
}

impl Default for RoadConfig {
    fn default() -> Self {
        Self {
            smoothing_window: DEFAULT_SMOOTHING_WINDOW,
            grid_spacing: DEFAULT_GRID_SPACING,
            speed_limits: SpeedLimits::default(),
        }
    }
}

/// Discretized road: elevation, slope and speed limits over arc length.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadProfile {
    samples: Vec<ElevationSample>,
    slope: Vec<f64>,
    limits: SpeedLimits,
}

impl RoadProfile {
    /// Builds a profile from samples that are already on the desired grid.
    /// Arc length is shifted so the first sample sits at `s = 0`.
    pub fn new(
        samples: Vec<ElevationSample>,
        smoothing_window: usize,
        limits: SpeedLimits,
    ) -> Result<Self, RoadError> {
        validate_samples(&samples)?;
        let s0 = samples[0].s;
        let samples: Vec<_> = samples
            .into_iter()
            .map(|p| ElevationSample::new(p.s - s0, p.elevation))
            .collect();
        let slope = slope_from_elevation(&samples, smoothing_window)?;
        Ok(Self {
            samples,
            slope,
            limits,
        })
    }

    /// Resamples onto the configured uniform grid, then builds the profile.
    pub fn from_samples(samples: &[ElevationSample], config: &RoadConfig) -> Result<Self, RoadError> {
        let grid = resample_uniform(samples, config.grid_spacing)?;
        let window = config.smoothing_window.min(odd_floor(grid.len()));
        Self::new(grid, window, config.speed_limits.clone())
    }

    pub fn samples(&self) -> &[ElevationSample] {
        &self.samples
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slope
    }

    pub fn limits(&self) -> &SpeedLimits {
        &self.limits
    }

    pub fn with_limits(mut self, limits: SpeedLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total length `s_f` [m].
    pub fn length(&self) -> f64 {
        self.samples.last().map_or(0.0, |p| p.s)
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|p| p.s)
    }

    /// Linearly interpolated slope at `s` [rad]; exact at grid points.
    pub fn slope_at(&self, s: f64) -> Result<f64, RoadError> {
        let s_f = self.length();
        if !(0.0..=s_f).contains(&s) {
            return Err(RoadError::OutOfRange { s, s_f });
        }
        Ok(self.interp(s, &self.slope))
    }

    /// Slope at `s`, holding the end values outside `[0, s_f]`.
    pub fn slope_clamped(&self, s: f64) -> f64 {
        self.interp(s.clamp(0.0, self.length()), &self.slope)
    }

    pub fn elevation_at(&self, s: f64) -> Result<f64, RoadError> {
        let s_f = self.length();
        if !(0.0..=s_f).contains(&s) {
            return Err(RoadError::OutOfRange { s, s_f });
        }
        let elev: Vec<f64> = self.samples.iter().map(|p| p.elevation).collect();
        Ok(self.interp(s, &elev))
    }

    pub fn v_min_at(&self, s: f64) -> f64 {
        self.limits.at(s).v_min
    }

    pub fn v_max_at(&self, s: f64) -> f64 {
        self.limits.at(s).v_max
    }

    fn interp(&self, s: f64, values: &[f64]) -> f64 {
        let idx = self.samples.partition_point(|p| p.s <= s);
        if idx == 0 {
            return values[0];
        }
        if idx >= self.samples.len() {
            return values[values.len() - 1];
        }
        let (a, b) = (self.samples[idx - 1], self.samples[idx]);
        if s == a.s {
            return values[idx - 1];
        }
        let frac = (s - a.s) / (b.s - a.s);
        values[idx - 1] + frac * (values[idx] - values[idx - 1])
    }
}

fn odd_floor(n: usize) -> usize {
    if n.is_multiple_of(2) {
        n.saturating_sub(1).max(1)
    } else {
        n
    }
}

fn validate_samples(samples: &[ElevationSample]) -> Result<(), RoadError> {
    if samples.len() < 2 {
        return Err(RoadError::ProfileTooShort(samples.len()));
    }
    for (i, w) in samples.windows(2).enumerate() {
        if !(w[1].s > w[0].s) {
            return Err(RoadError::Malformed(format!(
                "arc length not strictly increasing at sample {} ({} -> {})",
                i + 1,
                w[0].s,
                w[1].s
            )));
        }
    }
    if samples.iter().any(|p| !p.s.is_finite() || !p.elevation.is_finite()) {
        return Err(RoadError::Malformed("non-finite sample".into()));
    }
    Ok(())
}

/// Road slope `asin(dE/ds)` at every sample.
///
/// The elevation is first smoothed by a centered moving average whose window
/// shrinks symmetrically near the ends (so linear profiles pass through
/// unchanged), then differentiated with central differences in the interior
/// and one-sided differences at the two endpoints.
pub fn slope_from_elevation(
    samples: &[ElevationSample],
    smoothing_window: usize,
) -> Result<Vec<f64>, RoadError> {
    validate_samples(samples)?;
    let n = samples.len();
    if smoothing_window == 0 || smoothing_window.is_multiple_of(2) || smoothing_window > n {
        return Err(RoadError::BadWindow {
            window: smoothing_window,
            samples: n,
        });
    }
    let half = smoothing_window / 2;
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let k = half.min(i).min(n - 1 - i);
            let window = &samples[i - k..=i + k];
            window.iter().map(|p| p.elevation).sum::<f64>() / window.len() as f64
        })
        .collect();

    let grad = |lo: usize, hi: usize| (smoothed[hi] - smoothed[lo]) / (samples[hi].s - samples[lo].s);
    let slope = (0..n)
        .map(|i| {
            let d = if i == 0 {
                grad(0, 1)
            } else if i == n - 1 {
                grad(n - 2, n - 1)
            } else {
                grad(i - 1, i + 1)
            };
            d.clamp(-1.0, 1.0).asin()
        })
        .collect::<Vec<_>>();
    debug_assert!(slope.iter().all(|p| p.abs() <= PI / 2.0));
    Ok(slope)
}

/// Linear resampling onto `s_0 + k * spacing` for every grid point not past
/// the last sample.
pub fn resample_uniform(
    samples: &[ElevationSample],
    spacing: f64,
) -> Result<Vec<ElevationSample>, RoadError> {
    validate_samples(samples)?;
    if !(spacing > 0.0) {
        return Err(RoadError::Malformed(format!("grid spacing {spacing} must be positive")));
    }
    let s0 = samples[0].s;
    let span = samples[samples.len() - 1].s - s0;
    // Tolerate floating error in a file that is already on the grid.
    let count = (span / spacing + 1e-9).floor() as usize + 1;
    if count < 2 {
        return Err(RoadError::ProfileTooShort(count));
    }
    let mut out = Vec::with_capacity(count);
    let mut j = 0;
    for k in 0..count {
        let s = s0 + k as f64 * spacing;
        while j + 2 < samples.len() && samples[j + 1].s < s {
            j += 1;
        }
        let (a, b) = (samples[j], samples[j + 1]);
        let frac = ((s - a.s) / (b.s - a.s)).clamp(0.0, 1.0);
        out.push(ElevationSample::new(s, a.elevation + frac * (b.elevation - a.elevation)));
    }
    Ok(out)
}

/// Parses a two-column `s,E` CSV (header row, meters).
pub fn parse_elevation_csv<R: Read>(reader: R) -> Result<Vec<ElevationSample>, RoadError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = idx + 2;
        let record = record.map_err(|e| RoadError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != 2 {
            return Err(RoadError::Parse {
                line,
                message: format!("expected 2 columns, found {}", record.len()),
            });
        }
        let field = |i: usize| {
            record[i].parse::<f64>().map_err(|e| RoadError::Parse {
                line,
                message: format!("column {}: {:?}: {e}", i + 1, &record[i]),
            })
        };
        out.push(ElevationSample::new(field(0)?, field(1)?));
    }
    Ok(out)
}

/// Reads an elevation CSV into a validated profile with slopes and the
/// configured speed limits.
pub fn ingest_elevation_csv<R: Read>(reader: R, config: &RoadConfig) -> Result<RoadProfile, RoadError> {
    let samples = parse_elevation_csv(reader)?;
    RoadProfile::from_samples(&samples, config)
}

pub fn write_elevation_csv<W: std::io::Write>(
    writer: W,
    samples: &[ElevationSample],
) -> Result<(), csv::Error> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["s", "E"])?;
    for p in samples {
        wtr.write_record([p.s.to_string(), p.elevation.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Synthetic elevation generators used by `gen-road` and the shipped
/// scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticRoad {
    Flat,
    SingleHill,
    TwoHill,
}

impl std::str::FromStr for SyntheticRoad {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flat" => Ok(Self::Flat),
            "single-hill" => Ok(Self::SingleHill),
            "two-hill" => Ok(Self::TwoHill),
            other => Err(format!("unknown road kind {other:?} (flat, single-hill, two-hill)")),
        }
    }
}

impl SyntheticRoad {
    /// Elevation samples over `[0, length]` at `spacing`, with hills of
    /// `height` meters.
    pub fn generate(self, length: f64, spacing: f64, height: f64) -> Vec<ElevationSample> {
        let count = (length / spacing + 1e-9).floor() as usize + 1;
        (0..count)
            .map(|k| {
                let s = k as f64 * spacing;
                ElevationSample::new(s, self.elevation(s / length, height))
            })
            .collect()
    }

    fn elevation(self, x: f64, height: f64) -> f64 {
        // Raised-cosine bumps keep the slope continuous.
        let bump = |x: f64, center: f64, width: f64| {
            let d = (x - center) / width;
            if d.abs() >= 1.0 {
                0.0
            } else {
                0.5 * (1.0 + (PI * d).cos())
            }
        };
        match self {
            Self::Flat => 0.0,
            Self::SingleHill => height * bump(x, 0.5, 0.3),
            // Second hill is lower and followed by a valley.
            Self::TwoHill => {
                height * bump(x, 0.25, 0.18) + 0.8 * height * bump(x, 0.62, 0.16)
                    - 0.4 * height * bump(x, 0.88, 0.1)
            }
        }
    }
}
