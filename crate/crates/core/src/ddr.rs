//! Synthetic two-stage dispersion / dose-response simulator.
//!
//! f¹ maps (wind direction in degrees, wind speed in m/s, released mass in
//! kg) to the log dose ln(1 + d) at a fixed receptor. The release drifts
//! along a plume centred on `plume_center`, and dilution grows with wind
//! speed. f² maps log dose to a response probability through a logistic
//! curve, and h = f² ∘ f¹.

use nalgebra::{DMatrix, DVector};

/// Input box: wind direction, wind speed, mass.
pub const DDR_LOWER: [f64; 3] = [37.0, 1.0, 0.001];
pub const DDR_UPPER: [f64; 3] = [63.0, 150.0, 1.0];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticDDR {
    /// Dose per kg released with the receptor on the plume axis in still air.
    pub dose_per_kg: f64,
    /// Direction (degrees) pointing at the receptor.
    pub plume_center: f64,
    /// Angular half-width (degrees) of the plume.
    pub plume_width: f64,
    /// Wind speed (m/s) at which the dose halves.
    pub dilution_speed: f64,
    /// Log dose at which the response probability is one half.
    pub response_midpoint: f64,
    /// Logistic slope scale in log-dose units.
    pub response_scale: f64,
}

impl Default for SyntheticDDR {
    fn default() -> Self {
        Self {
            dose_per_kg: 2.0,
            plume_center: 48.0,
            plume_width: 9.0,
            dilution_speed: 40.0,
            response_midpoint: 1.0,
            response_scale: 0.25,
        }
    }
}

impl SyntheticDDR {
    pub fn dose(&self, wd: f64, ws: f64, sm: f64) -> f64 {
        let a = (wd - self.plume_center) / self.plume_width;
        self.dose_per_kg * sm * (-0.5 * a * a).exp() / (1.0 + ws / self.dilution_speed)
    }

    pub fn f1(&self, wd: f64, ws: f64, sm: f64) -> f64 {
        self.dose(wd, ws, sm).ln_1p()
    }

    pub fn f2(&self, log_dose: f64) -> f64 {
        1.0 / (1.0 + (-(log_dose - self.response_midpoint) / self.response_scale).exp())
    }

    pub fn h(&self, wd: f64, ws: f64, sm: f64) -> f64 {
        self.f2(self.f1(wd, ws, sm))
    }

    /// Smallest and largest f¹ over the input box. The dose is monotone in
    /// speed and mass and unimodal in direction.
    pub fn f1_range(&self) -> (f64, f64) {
        let far = if (DDR_LOWER[0] - self.plume_center).abs() > (DDR_UPPER[0] - self.plume_center).abs() {
            DDR_LOWER[0]
        } else {
            DDR_UPPER[0]
        };
        let near = self.plume_center.clamp(DDR_LOWER[0], DDR_UPPER[0]);
        (
            self.f1(far, DDR_UPPER[1], DDR_LOWER[2]),
            self.f1(near, DDR_LOWER[1], DDR_UPPER[2]),
        )
    }

    /// Maps points of [−1, 1]³ onto the input box.
    pub fn to_physical(unit: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(unit.nrows(), 3, |i, j| {
            DDR_LOWER[j] + (unit[(i, j)] + 1.0) * 0.5 * (DDR_UPPER[j] - DDR_LOWER[j])
        })
    }

    /// f¹ at each row.
    pub fn f1_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| self.f1(x[(i, 0)], x[(i, 1)], x[(i, 2)]))
    }

    pub fn h_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(x.nrows(), |i, _| self.h(x[(i, 0)], x[(i, 1)], x[(i, 2)]))
    }
}
