//! Natural cubic spline paths.
//!
//! Each interval `[x_j, x_{j+1}]` stores, per channel, the coefficients of
//! `a + b*s + c*s^2 + d*s^3` with `s = t - x_j`. Outside the knot range the
//! path continues linearly with the boundary slope, so values stay bounded
//! and the path remains C1.

use crate::error::{shape, validation, Error, Result};
use crate::panel::UnitSeries;

#[derive(Debug, Clone, PartialEq)]
pub struct SplinePath {
    knots: Vec<f64>,
    channels: usize,
    /// Knot values, row-major `(knots.len(), channels)`.
    values: Vec<f64>,
    /// Interval coefficients, row-major `(knots.len() - 1, channels)`.
    coeffs: Vec<[f64; 4]>,
}

impl SplinePath {
    /// Fits a natural cubic spline through `(times[j], values[j*channels..])`.
    ///
    /// Two knots give a straight segment.
    pub fn from_channels(times: &[f64], values: &[f64], channels: usize) -> Result<Self> {
        let m = times.len();
        if m < 2 {
            return Err(validation(format!("spline needs at least 2 knots, got {m}")));
        }
        if channels == 0 || values.len() != m * channels {
            return Err(shape(format!(
                "spline values have length {} but {} knots x {} channels were expected",
                values.len(),
                m,
                channels
            )));
        }
        if times.iter().chain(values).any(|v| !v.is_finite()) {
            return Err(validation("spline data must be finite"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(validation("spline knots must be strictly increasing"));
        }

        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mut coeffs = vec![[0.0; 4]; (m - 1) * channels];
        let mut column = vec![0.0; m];
        for ch in 0..channels {
            for (j, y) in column.iter_mut().enumerate() {
                *y = values[j * channels + ch];
            }
            let second = natural_second_derivatives(&h, &column);
            for j in 0..m - 1 {
                let slope = (column[j + 1] - column[j]) / h[j];
                coeffs[j * channels + ch] = [
                    column[j],
                    slope - h[j] * (2.0 * second[j] + second[j + 1]) / 6.0,
                    second[j] / 2.0,
                    (second[j + 1] - second[j]) / (6.0 * h[j]),
                ];
            }
        }
        Ok(Self { knots: times.to_vec(), channels, values: values.to_vec(), coeffs })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Coefficients `[a, b, c, d]` of `channel` on interval `j`.
    pub fn interval_coefficients(&self, j: usize, channel: usize) -> [f64; 4] {
        self.coeffs[j * self.channels + channel]
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        self.derivative_into(t, &mut out)?;
        Ok(out)
    }

    pub fn second_derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.channels];
        match self.locate(t)? {
            Location::Before | Location::After => {}
            Location::Knot(j) if j + 1 == self.knots.len() => {
                let s = self.knots[j] - self.knots[j - 1];
                for (ch, o) in out.iter_mut().enumerate() {
                    let [_, _, c, d] = self.coeffs[(j - 1) * self.channels + ch];
                    *o = 2.0 * c + 6.0 * d * s;
                }
            }
            Location::Knot(j) | Location::Inside(j) => {
                let s = t - self.knots[j];
                for (ch, o) in out.iter_mut().enumerate() {
                    let [_, _, c, d] = self.coeffs[j * self.channels + ch];
                    *o = 2.0 * c + 6.0 * d * s;
                }
            }
        }
        Ok(out)
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_out(out)?;
        match self.locate(t)? {
            Location::Knot(j) => {
                out.copy_from_slice(&self.values[j * self.channels..(j + 1) * self.channels]);
            }
            Location::Inside(j) => {
                let s = t - self.knots[j];
                for (ch, o) in out.iter_mut().enumerate() {
                    let [a, b, c, d] = self.coeffs[j * self.channels + ch];
                    *o = a + s * (b + s * (c + s * d));
                }
            }
            Location::Before => {
                let s = t - self.knots[0];
                for (ch, o) in out.iter_mut().enumerate() {
                    let [a, b, _, _] = self.coeffs[ch];
                    *o = a + b * s;
                }
            }
            Location::After => {
                let last = self.knots.len() - 1;
                let s = t - self.knots[last];
                let end_slope = self.end_slopes();
                for (ch, o) in out.iter_mut().enumerate() {
                    *o = self.values[last * self.channels + ch] + end_slope[ch] * s;
                }
            }
        }
        Ok(())
    }

    pub fn derivative_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.check_out(out)?;
        match self.locate(t)? {
            Location::Before => {
                for (ch, o) in out.iter_mut().enumerate() {
                    *o = self.coeffs[ch][1];
                }
            }
            Location::After => out.copy_from_slice(&self.end_slopes()),
            Location::Knot(j) if j + 1 == self.knots.len() => out.copy_from_slice(&self.end_slopes()),
            Location::Knot(j) | Location::Inside(j) => {
                let s = t - self.knots[j];
                for (ch, o) in out.iter_mut().enumerate() {
                    let [_, b, c, d] = self.coeffs[j * self.channels + ch];
                    *o = b + s * (2.0 * c + 3.0 * s * d);
                }
            }
        }
        Ok(())
    }

    fn end_slopes(&self) -> Vec<f64> {
        let j = self.knots.len() - 2;
        let s = self.knots[j + 1] - self.knots[j];
        (0..self.channels)
            .map(|ch| {
                let [_, b, c, d] = self.coeffs[j * self.channels + ch];
                b + s * (2.0 * c + 3.0 * s * d)
            })
            .collect()
    }

    fn check_out(&self, out: &[f64]) -> Result<()> {
        if out.len() != self.channels {
            return Err(shape(format!("output buffer has length {}, spline has {} channels", out.len(), self.channels)));
        }
        Ok(())
    }

    fn locate(&self, t: f64) -> Result<Location> {
        if !t.is_finite() {
            return Err(Error::Validation(format!("cannot evaluate spline at t = {t}")));
        }
        let last = self.knots.len() - 1;
        if t < self.knots[0] {
            return Ok(Location::Before);
        }
        if t > self.knots[last] {
            return Ok(Location::After);
        }
        // First knot strictly greater than t.
        let upper = self.knots.partition_point(|&k| k <= t);
        let j = upper - 1;
        if self.knots[j] == t {
            Ok(Location::Knot(j))
        } else {
            Ok(Location::Inside(j))
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Location {
    Before,
    Knot(usize),
    Inside(usize),
    After,
}

/// Second derivatives at the knots with `M_0 = M_m = 0`, via the Thomas algorithm.
fn natural_second_derivatives(h: &[f64], y: &[f64]) -> Vec<f64> {
    let m = y.len();
    let mut second = vec![0.0; m];
    if m < 3 {
        return second;
    }
    let n = m - 2;
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let j = i + 1;
        diag[i] = 2.0 * (h[j - 1] + h[j]);
        rhs[i] = 6.0 * ((y[j + 1] - y[j]) / h[j] - (y[j] - y[j - 1]) / h[j - 1]);
    }
    // Sub-diagonal entry of row i is h[i], super-diagonal is h[i + 1].
    for i in 1..n {
        let factor = h[i] / diag[i - 1];
        diag[i] -= factor * h[i];
        rhs[i] -= factor * rhs[i - 1];
    }
    second[n] = rhs[n - 1] / diag[n - 1];
    for i in (0..n - 1).rev() {
        second[i + 1] = (rhs[i] - h[i + 1] * second[i + 2]) / diag[i];
    }
    second
}

/// Fits the path `(Y_t, t)` of one unit: its `d` value channels plus a time channel.
pub fn fit_spline(series: &UnitSeries) -> Result<SplinePath> {
    let d = series.dims();
    let channels = d + 1;
    let mut values = Vec::with_capacity(series.len() * channels);
    for (t, row) in series.times.iter().zip(&series.values) {
        values.extend_from_slice(row);
        values.push(*t);
    }
    SplinePath::from_channels(&series.times, &values, channels).map_err(|e| match e {
        Error::Validation(msg) => validation(format!("unit {:?}: {msg}", series.unit_id)),
        other => other,
    })
}

pub fn eval_spline(path: &SplinePath, t: f64) -> Result<Vec<f64>> {
    path.eval(t)
}

pub fn eval_spline_derivative(path: &SplinePath, t: f64) -> Result<Vec<f64>> {
    path.derivative(t)
}
