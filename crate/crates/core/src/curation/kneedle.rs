//! Knee-point detection on a discrete curve.

use super::CurationError;

/// Locate the knee of the curve `(xs, ys)` and return its x, or `None`
/// when no point qualifies.
///
/// Both axes are min-max normalized (decreasing curves are flipped so
/// the knee reads as a point of diminishing returns either way), the
/// difference curve `d_i = y_norm_i - x_norm_i` is formed, and each
/// local maximum of `d` becomes a candidate. A candidate is confirmed
/// when `d` later drops below `d_candidate - sensitivity * mean_spacing`
/// before a new candidate appears; the first confirmed candidate wins.
pub fn kneedle(xs: &[f64], ys: &[f64], sensitivity: f64) -> Result<Option<f64>, CurationError> {
    if xs.len() != ys.len() {
        return Err(CurationError::Domain(format!(
            "xs and ys differ in length: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 3 {
        return Err(CurationError::TooFewPoints(xs.len()));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CurationError::Domain("xs must be strictly increasing".into()));
    }
    if sensitivity <= 0.0 {
        return Err(CurationError::Domain("sensitivity must be positive".into()));
    }

    let n = xs.len();
    let (x_min, x_max) = (xs[0], xs[n - 1]);
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if y_max - y_min == 0.0 {
        return Ok(None); // flat curve, no curvature anywhere
    }

    let decreasing = ys[n - 1] < ys[0];
    let x_norm: Vec<f64> = xs.iter().map(|&x| (x - x_min) / (x_max - x_min)).collect();
    let y_norm: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let v = (y - y_min) / (y_max - y_min);
            if decreasing {
                1.0 - v
            } else {
                v
            }
        })
        .collect();

    let diff: Vec<f64> = y_norm
        .iter()
        .zip(&x_norm)
        .map(|(&y, &x)| y - x)
        .collect();

    // Local maxima; a plateau counts once, at its first point.
    let mut candidates = Vec::new();
    for i in 1..n - 1 {
        if diff[i] > diff[i - 1] && diff[i] >= diff[i + 1] {
            candidates.push(i);
        }
    }
    if candidates.is_empty() {
        return Ok(None);
    }

    let mean_spacing = x_norm
        .windows(2)
        .map(|w| w[1] - w[0])
        .sum::<f64>()
        / (n - 1) as f64;

    for (c, &cand) in candidates.iter().enumerate() {
        let threshold = diff[cand] - sensitivity * mean_spacing;
        let scan_end = candidates.get(c + 1).copied().unwrap_or(n);
        for j in cand + 1..scan_end {
            if diff[j] < threshold {
                return Ok(Some(xs[cand]));
            }
        }
    }
    Ok(None)
}
