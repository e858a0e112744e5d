//! Error metrics.

use nalgebra::Vector3;

use crate::nav::{EarthModel, GeodeticPosition};
use crate::{Error, Result};

/// Root mean square of the vector error norm over aligned samples.
pub fn rmse(truth: &[Vector3<f64>], est: &[Vector3<f64>]) -> Result<f64> {
    if truth.len() != est.len() {
        return Err(Error::LengthMismatch(truth.len(), est.len()));
    }
    if truth.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = truth
        .iter()
        .zip(est)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok((sum / truth.len() as f64).sqrt())
}

pub fn vrmse(v_truth: &[Vector3<f64>], v_est: &[Vector3<f64>]) -> Result<f64> {
    rmse(v_truth, v_est)
}

/// Position RMSE in meters, both series expressed in the local tangent frame
/// anchored at the first truth sample.
pub fn prmse(p_truth: &[GeodeticPosition], p_est: &[GeodeticPosition]) -> Result<f64> {
    if p_truth.len() != p_est.len() {
        return Err(Error::LengthMismatch(p_truth.len(), p_est.len()));
    }
    let Some(origin) = p_truth.first() else {
        return Ok(0.0);
    };
    let frame = LocalTangent::new(*origin, &EarthModel::default());
    let a: Vec<_> = p_truth.iter().map(|p| frame.to_ned(p)).collect();
    let b: Vec<_> = p_est.iter().map(|p| frame.to_ned(p)).collect();
    rmse(&a, &b)
}

/// Flat-earth NED meters about an origin, using the curvature radii there.
#[derive(Debug, Clone, Copy)]
pub struct LocalTangent {
    origin: GeodeticPosition,
    m: f64,
    n: f64,
}

impl LocalTangent {
    pub fn new(origin: GeodeticPosition, earth: &EarthModel) -> Self {
        let (m, n) = earth.radii(origin.lat);
        Self { origin, m, n }
    }

    pub fn to_ned(&self, p: &GeodeticPosition) -> Vector3<f64> {
        let o = &self.origin;
        Vector3::new(
            (p.lat - o.lat) * (self.m + o.h),
            (p.lon - o.lon) * (self.n + o.h) * o.lat.cos(),
            -(p.h - o.h),
        )
    }
}

/// Running mean of a series.
pub fn cumulative_mean(values: &[f64]) -> Vec<f64> {
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
