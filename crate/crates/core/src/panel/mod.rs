//! Irregularly sampled multivariate panels.
//!
//! A [`Panel`] holds one treated unit (always index 0) followed by the
//! control units. Units may be observed on their own time stamps; a shared
//! grid is just the special case where all units carry the same times.

mod csv;
mod spline;

pub use self::csv::{
    export_panel, export_series, load_panel, load_series, read_panel_file, read_series_file, write_panel_file, write_series_file,
};
pub use spline::{eval_spline, eval_spline_derivative, fit_spline, SplinePath};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape, validation, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UnitSeries {
    pub unit_id: String,
    pub times: Vec<f64>,
    /// One row of length `d` per time stamp.
    pub values: Vec<Vec<f64>>,
}

impl UnitSeries {
    pub fn new(unit_id: impl Into<String>, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        let series = Self { unit_id: unit_id.into(), times, values };
        series.validate()?;
        Ok(series)
    }

    /// Builds a one-dimensional series.
    pub fn scalar(unit_id: impl Into<String>, times: Vec<f64>, values: &[f64]) -> Result<Self> {
        Self::new(unit_id, times, values.iter().map(|&v| vec![v]).collect())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Values of channel `k` across all time stamps.
    pub fn channel(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    fn validate(&self) -> Result<()> {
        let id = &self.unit_id;
        if self.times.len() != self.values.len() {
            return Err(shape(format!("unit {id:?}: {} times but {} observations", self.times.len(), self.values.len())));
        }
        if self.times.is_empty() {
            return Err(validation(format!("unit {id:?} has no observations")));
        }
        let d = self.dims();
        if d == 0 {
            return Err(validation(format!("unit {id:?} has zero-dimensional observations")));
        }
        for (t, row) in self.times.iter().zip(&self.values) {
            if !t.is_finite() {
                return Err(validation(format!("unit {id:?}: non-finite time stamp")));
            }
            if row.len() != d {
                return Err(shape(format!("unit {id:?}: observation at t={t} has {} entries, expected {d}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(validation(format!("unit {id:?}: non-finite value at t={t}")));
            }
        }
        if let Some(w) = self.times.windows(2).find(|w| w[1] <= w[0]) {
            let what = if w[1] == w[0] { "duplicate" } else { "non-monotone" };
            return Err(validation(format!("unit {id:?}: {what} time stamps at t={}", w[1])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    /// Index 0 is the treated unit.
    pub units: Vec<UnitSeries>,
    pub treatment_time: f64,
    pub dims: usize,
    pub time_span: (f64, f64),
}

impl Panel {
    /// Validates and assembles a panel; the span covers every observation.
    pub fn new(units: Vec<UnitSeries>, treatment_time: f64) -> Result<Self> {
        let first = units.iter().map(|u| u.times.first().copied().unwrap_or(f64::INFINITY));
        let last = units.iter().map(|u| u.times.last().copied().unwrap_or(f64::NEG_INFINITY));
        let span = (first.fold(f64::INFINITY, f64::min), last.fold(f64::NEG_INFINITY, f64::max));
        Self::with_span(units, treatment_time, span)
    }

    pub fn with_span(units: Vec<UnitSeries>, treatment_time: f64, time_span: (f64, f64)) -> Result<Self> {
        if units.len() < 2 {
            return Err(validation("a panel needs a treated unit and at least one control"));
        }
        for u in &units {
            u.validate()?;
        }
        let dims = units[0].dims();
        if let Some(u) = units.iter().find(|u| u.dims() != dims) {
            return Err(shape(format!("unit {:?} has dimension {}, treated unit has {dims}", u.unit_id, u.dims())));
        }
        if !treatment_time.is_finite() {
            return Err(validation("treatment time must be finite"));
        }
        let (t0, tm) = time_span;
        if !(t0.is_finite() && tm.is_finite() && t0 < tm) {
            return Err(validation(format!("degenerate time span [{t0}, {tm}]")));
        }
        for u in &units {
            if u.times[0] < t0 || u.times[u.len() - 1] > tm {
                return Err(validation(format!("unit {:?} has observations outside [{t0}, {tm}]", u.unit_id)));
            }
        }
        let pre = units[0].times.iter().filter(|&&t| t < treatment_time).count();
        if pre < 2 {
            return Err(validation(format!(
                "treated unit {:?} has {pre} pre-treatment observations, at least 2 are required",
                units[0].unit_id
            )));
        }
        let mut ids: Vec<&str> = units.iter().map(|u| u.unit_id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(validation(format!("unit id {:?} appears twice", w[0])));
        }
        Ok(Self { units, treatment_time, dims, time_span })
    }

    pub fn treated(&self) -> &UnitSeries {
        &self.units[0]
    }

    pub fn controls(&self) -> &[UnitSeries] {
        &self.units[1..]
    }

    pub fn n_controls(&self) -> usize {
        self.units.len() - 1
    }

    /// Treatment indicator `D_{1,t}`.
    pub fn is_treated_at(&self, t: f64) -> bool {
        t >= self.treatment_time
    }

    /// Splines of every control unit, in panel order.
    pub fn control_splines(&self) -> Result<Vec<SplinePath>> {
        self.controls().iter().map(fit_spline).collect()
    }

    /// Smallest gap between adjacent observations of any single unit.
    pub fn min_observation_gap(&self) -> f64 {
        self.units.iter().flat_map(|u| u.times.windows(2).map(|w| w[1] - w[0])).fold(f64::INFINITY, f64::min)
    }

    /// Same panel with a replaced treatment time (revalidated).
    pub fn with_treatment_time(&self, treatment_time: f64) -> Result<Self> {
        Self::with_span(self.units.clone(), treatment_time, self.time_span)
    }
}

/// `n` evenly spaced points from `a` to `b`; both endpoints are hit exactly.
pub fn regular_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            let mut grid: Vec<f64> = (0..n).map(|k| a + step * k as f64).collect();
            grid[n - 1] = b;
            grid
        }
    }
}

/// Randomly removes `ceil(fraction * interior)` interior observations.
///
/// The first and last observations are always kept so the unit's span is
/// preserved. Deterministic for a fixed seed.
pub fn drop_observations(series: &UnitSeries, fraction: f64, seed: u64) -> Result<UnitSeries> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(validation(format!("drop fraction must lie in [0, 1), got {fraction}")));
    }
    let m = series.len();
    if m <= 2 || fraction == 0.0 {
        return Ok(series.clone());
    }
    let interior = m - 2;
    let n_drop = ((fraction * interior as f64).ceil() as usize).min(interior);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; m];
    for k in sample(&mut rng, interior, n_drop) {
        keep[k + 1] = false;
    }
    let (times, values) =
        series.times.iter().zip(&series.values).zip(&keep).filter(|(_, &k)| k).map(|((t, v), _)| (*t, v.clone())).unzip();
    UnitSeries::new(series.unit_id.clone(), times, values)
}

/// Replaces every unit by spline evaluations on a shared regular grid over the panel span.
pub fn resample_regular(panel: &Panel, n_points: usize) -> Result<Panel> {
    resample_on_span(panel, n_points, panel.time_span)
}

/// Like [`resample_regular`] but over an explicit span.
pub fn resample_on_span(panel: &Panel, n_points: usize, span: (f64, f64)) -> Result<Panel> {
    if n_points < 2 {
        return Err(validation(format!("resampling needs at least 2 points, got {n_points}")));
    }
    let (a, b) = span;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(validation(format!("degenerate resampling span [{a}, {b}]")));
    }
    let grid = regular_grid(a, b, n_points);
    let d = panel.dims;
    let units = panel
        .units
        .iter()
        .map(|u| {
            let path = fit_spline(u)?;
            let mut buf = vec![0.0; d + 1];
            let values = grid
                .iter()
                .map(|&t| {
                    path.eval_into(t, &mut buf)?;
                    Ok(buf[..d].to_vec())
                })
                .collect::<Result<Vec<_>>>()?;
            UnitSeries::new(u.unit_id.clone(), grid.clone(), values)
        })
        .collect::<Result<Vec<_>>>()?;
    Panel::with_span(units, panel.treatment_time, span)
}
