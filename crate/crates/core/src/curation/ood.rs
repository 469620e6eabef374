//! Out-of-distribution scoring from zero-shot classifier probabilities.

use super::{CurationError, OODTriple};
use crate::gateway::OODProbRow;

const SUM_TOLERANCE: f64 = 1e-6;
const DUST: f64 = 1e-9;

fn check_rows(p: &[f64], p_no: &[f64]) -> Result<(), CurationError> {
    if p.len() != p_no.len() {
        return Err(CurationError::Domain(format!(
            "probability vectors differ in length: {} vs {}",
            p.len(),
            p_no.len()
        )));
    }
    if p.is_empty() {
        return Err(CurationError::Domain("empty probability vectors".into()));
    }
    for &x in p.iter().chain(p_no) {
        if !(0.0..=1.0).contains(&x) {
            return Err(CurationError::Domain(format!(
                "probability {x} outside [0,1]"
            )));
        }
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(CurationError::Domain(format!(
            "p sums to {sum}, expected 1 within {SUM_TOLERANCE}"
        )));
    }
    Ok(())
}

/// OOD score of an image given the per-concept probabilities `p` that
/// it contains each concept and `p_no` that it does not:
/// `1 - sum_c (1 - p_no_c) * p_c`.
///
/// With `p` softmax-normalized the value lies in [0,1]; only float dust
/// up to 1e-9 outside that range is clamped.
pub fn ood_score(p: &[f64], p_no: &[f64]) -> Result<f64, CurationError> {
    check_rows(p, p_no)?;
    let score = 1.0 - p.iter().zip(p_no).map(|(&pc, &nc)| (1.0 - nc) * pc).sum::<f64>();
    if score < -DUST || score > 1.0 + DUST {
        return Err(CurationError::Domain(format!(
            "score {score} outside [0,1] beyond float dust"
        )));
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Assemble the three-metric triple for one image.
///
/// `blurred_bank_probs` must be present exactly when text was detected
/// in the image; without it the text delta is 0 exactly.
pub fn ood_triple(
    image_id: &str,
    bank_probs: &OODProbRow,
    general_probs: &OODProbRow,
    blurred_bank_probs: Option<&OODProbRow>,
) -> Result<OODTriple, CurationError> {
    let with_id = |e: CurationError| match e {
        CurationError::Domain(message) => CurationError::InvalidProbabilities {
            image_id: image_id.to_string(),
            message,
        },
        other => other,
    };
    let ood_primary = ood_score(&bank_probs.p, &bank_probs.p_no).map_err(with_id)?;
    let ood_general = ood_score(&general_probs.p, &general_probs.p_no).map_err(with_id)?;
    let ood_text_delta = match blurred_bank_probs {
        Some(blurred) => ood_score(&blurred.p, &blurred.p_no).map_err(with_id)? - ood_primary,
        None => 0.0,
    };
    Ok(OODTriple {
        image_id: image_id.to_string(),
        ood_primary,
        ood_general,
        ood_text_delta,
    })
}
