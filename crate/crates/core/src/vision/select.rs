use super::{Correspondence, PoseCandidate};
use crate::error::{Error, Result};
use crate::geometry::rotation_angle_between;

/// Radians of rotation distance counted as equivalent to one metre of
/// translation distance when comparing a candidate with the prior.
pub const PRIOR_TRANSLATION_WEIGHT: f64 = 10.0;

/// Picks one candidate from a P3P solution set.
///
/// With a fourth correspondence the candidate reprojecting it best wins;
/// otherwise the candidate closest to the prior; otherwise the one with the
/// smallest three-point residual. Candidates with a marker behind the camera
/// (infinite residual) are never chosen.
pub fn disambiguate(
    candidates: &[PoseCandidate],
    prior: Option<&PoseCandidate>,
    fourth: Option<&Correspondence>,
) -> Result<PoseCandidate> {
    let valid = candidates.iter().filter(|c| c.residual.is_finite());
    let score = |c: &PoseCandidate| -> f64 {
        if let Some(f) = fourth {
            c.reprojection_rms(std::slice::from_ref(f))
        } else if let Some(p) = prior {
            rotation_angle_between(&c.rotation, &p.rotation)
                + PRIOR_TRANSLATION_WEIGHT * (c.translation - p.translation).norm()
        } else {
            c.residual
        }
    };
    valid
        .map(|c| (score(c), c))
        .filter(|(s, _)| !s.is_nan())
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| *c)
        .ok_or(Error::NoValidPose)
}
