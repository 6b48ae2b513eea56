//! Least-squares fits of log error against log ε.

use serde::Serialize;

use crate::error::{HomogError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RateFit {
    Fitted { slope: f64, constant: f64, residual_max: f64 },
    /// Some error sits at or below zero: nothing to fit.
    ExactAgreement,
}

impl RateFit {
    pub fn slope(&self) -> Option<f64> {
        match self {
            RateFit::Fitted { slope, .. } => Some(*slope),
            RateFit::ExactAgreement => None,
        }
    }
}

/// Fits `log err = slope · log x + log constant`.
pub fn fit_rate(series: &[(f64, f64)]) -> Result<RateFit> {
    if series.len() < 3 {
        return Err(HomogError::InsufficientDecades(series.len()));
    }
    if series.iter().any(|&(_, e)| !(e > 0.0)) {
        return Ok(RateFit::ExactAgreement);
    }
    let n = series.len() as f64;
    let xs: Vec<f64> = series.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = series.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HomogError::InvalidInput("all abscissae coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let icept = my - slope * mx;
    let residual_max = xs.iter().zip(&ys).map(|(x, y)| (y - icept - slope * x).abs()).fold(0.0, f64::max);
    Ok(RateFit::Fitted { slope, constant: icept.exp(), residual_max })
}
