//! Smooth reflectance curves standing in for measured library spectra.

use nalgebra::DVector;

use crate::error::{Error, Result};

pub const BUILTIN_SPECTRA: &[&str] = &[
    "vegetation",
    "dry-soil",
    "wet-soil",
    "asphalt",
    "brick",
    "water",
    "red-paint",
    "blue-paint",
    "green-paint",
    "white-paint",
    "gray-metal",
];

/// `bands` wavelengths spread evenly over 400..2500 nm.
pub fn default_wavelengths(bands: usize) -> Vec<f64> {
    match bands {
        0 => Vec::new(),
        1 => vec![1450.0],
        _ => (0..bands).map(|i| 400.0 + 2100.0 * i as f64 / (bands - 1) as f64).collect(),
    }
}

fn bump(w: f64, c: f64, s: f64) -> f64 {
    (-(w - c).powi(2) / (2.0 * s * s)).exp()
}

fn rise(w: f64, c: f64, s: f64) -> f64 {
    1.0 / (1.0 + (-(w - c) / s).exp())
}

fn value(name: &str, w: f64) -> Option<f64> {
    let ramp = (w - 400.0) / 2100.0;
    let water_bands = 0.6 * bump(w, 1450.0, 50.0) + bump(w, 1950.0, 70.0);
    let v = match name {
        "vegetation" => {
            0.04 + 0.06 * bump(w, 550.0, 35.0) + 0.42 * rise(w, 715.0, 18.0) * (1.0 - 0.45 * rise(w, 1300.0, 90.0))
                - 0.12 * water_bands
        }
        "dry-soil" => 0.09 + 0.26 * rise(w, 800.0, 250.0) - 0.05 * water_bands - 0.03 * bump(w, 2200.0, 40.0),
        "wet-soil" => 0.6 * (0.09 + 0.26 * rise(w, 800.0, 250.0)) - 0.08 * water_bands,
        "asphalt" => 0.07 + 0.04 * ramp,
        "brick" => 0.1 + 0.25 * rise(w, 580.0, 30.0) - 0.05 * bump(w, 900.0, 80.0) - 0.02 * water_bands,
        "water" => 0.005 + 0.06 * (-(w - 400.0) / 200.0).exp(),
        "red-paint" => 0.05 + 0.45 * rise(w, 600.0, 15.0) - 0.1 * bump(w, 1700.0, 200.0),
        "blue-paint" => 0.05 + 0.3 * bump(w, 460.0, 40.0) + 0.35 * rise(w, 1000.0, 100.0),
        "green-paint" => 0.05 + 0.25 * bump(w, 530.0, 40.0) + 0.3 * rise(w, 900.0, 100.0),
        "white-paint" => 0.6 + 0.15 * rise(w, 450.0, 20.0) - 0.1 * bump(w, 2000.0, 150.0),
        "gray-metal" => 0.3 + 0.05 * ramp,
        _ => return None,
    };
    Some(v.max(0.005))
}

/// Evaluates the named built-in curve at `wavelengths` (nm).
pub fn builtin_spectrum(name: &str, wavelengths: &[f64]) -> Result<DVector<f64>> {
    let vals: Option<Vec<f64>> = wavelengths.iter().map(|&w| value(name, w)).collect();
    vals.map(DVector::from_vec).ok_or_else(|| {
        Error::InvalidArgument(format!("unknown built-in spectrum {name:?}; known: {}", BUILTIN_SPECTRA.join(", ")))
    })
}
