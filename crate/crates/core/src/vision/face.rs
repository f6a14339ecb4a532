//! Face identification from unlabeled feature triples.
//!
//! Each face carries a triangle with three distinct edge lengths. Seen
//! roughly head-on, the image of that triangle is similar to it, so the
//! sorted edge ratios identify the face and the rank of the edge opposite
//! each vertex identifies the marker.

use super::Correspondence;
use crate::error::{Error, Result};
use crate::sensors::{edge_signature, FeatureObservation, MarkerSet};

/// Largest signature mismatch accepted as a match.
pub const DEFAULT_FACE_TOLERANCE: f64 = 0.025;

/// Observed triangles whose edges differ by less than this fraction of the
/// longest edge cannot be labeled.
const LABEL_GAP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceMatch {
    pub face: usize,
    /// Correspondences in marker order (marker `k` of the face first).
    pub correspondences: [Correspondence; 3],
    /// Indices into the input feature list, in marker order.
    pub features: [usize; 3],
    /// Signature mismatch of the match.
    pub score: f64,
}

/// Identifies the best-matching face among all feature triples.
pub fn identify_face(features: &[FeatureObservation], markers: &MarkerSet) -> Result<FaceMatch> {
    identify_face_with_tolerance(features, markers, DEFAULT_FACE_TOLERANCE)
}

pub fn identify_face_with_tolerance(
    features: &[FeatureObservation],
    markers: &MarkerSet,
    tolerance: f64,
) -> Result<FaceMatch> {
    if features.len() < 3 {
        return Err(Error::NoFace);
    }
    let order = canonical_order(features);
    let mut best: Option<FaceMatch> = None;
    let mut ambiguous = false;
    for a in 0..order.len() {
        for b in a + 1..order.len() {
            for c in b + 1..order.len() {
                let idx = [order[a], order[b], order[c]];
                match match_triple(features, &idx, markers, tolerance) {
                    Ok(m) => {
                        if best.is_none_or(|b| m.score < b.score) {
                            best = Some(m);
                        }
                    }
                    Err(Error::AmbiguousFace) => ambiguous = true,
                    Err(_) => {}
                }
            }
        }
    }
    match best {
        Some(m) => Ok(m),
        None if ambiguous => Err(Error::AmbiguousFace),
        None => Err(Error::NoFace),
    }
}

/// Greedily identifies disjoint faces, best match first.
pub fn identify_all(features: &[FeatureObservation], markers: &MarkerSet) -> Vec<FaceMatch> {
    let mut remaining: Vec<usize> = (0..features.len()).collect();
    let mut out: Vec<FaceMatch> = Vec::new();
    loop {
        let subset: Vec<FeatureObservation> = remaining.iter().map(|&i| features[i]).collect();
        let Ok(mut m) = identify_face(&subset, markers) else {
            break;
        };
        if out.iter().any(|o| o.face == m.face) {
            break;
        }
        m.features = m.features.map(|i| remaining[i]);
        remaining.retain(|i| !m.features.contains(i));
        out.push(m);
    }
    out
}

/// Feature indices sorted by image position, so results do not depend on
/// the order features were reported in.
fn canonical_order(features: &[FeatureObservation]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..features.len()).collect();
    order.sort_by(|&i, &j| {
        features[i]
            .u
            .total_cmp(&features[j].u)
            .then(features[i].v.total_cmp(&features[j].v))
    });
    order
}

/// Ranks of the edges opposite each vertex, with edge `k` joining vertex
/// `k` and `k + 1`.
fn opposite_ranks(edges: &[f64; 3]) -> [usize; 3] {
    let mut rank = [0; 3];
    let mut sorted = [0, 1, 2];
    sorted.sort_by(|&a, &b| edges[a].total_cmp(&edges[b]));
    for (r, &e) in sorted.iter().enumerate() {
        rank[(e + 2) % 3] = r;
    }
    rank
}

fn match_triple(
    features: &[FeatureObservation],
    idx: &[usize; 3],
    markers: &MarkerSet,
    tolerance: f64,
) -> Result<FaceMatch> {
    let pts = idx.map(|i| features[i].rectified());
    if pts.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NoFace);
    }
    let edges = [
        (pts[0] - pts[1]).norm(),
        (pts[1] - pts[2]).norm(),
        (pts[2] - pts[0]).norm(),
    ];
    let mut sorted = edges;
    sorted.sort_by(f64::total_cmp);
    if sorted[2] <= 0.0 {
        return Err(Error::NoFace);
    }
    // a symmetric image triangle cannot be labeled, whatever face it is
    if sorted[1] - sorted[0] < LABEL_GAP * sorted[2] || sorted[2] - sorted[1] < LABEL_GAP * sorted[2] {
        return Err(Error::AmbiguousFace);
    }
    let sig = edge_signature(&edges);

    let mut scored: Vec<(f64, usize)> = markers
        .faces()
        .iter()
        .map(|f| {
            let s = edge_signature(&f.edge_lengths());
            ((s[0] - sig[0]).abs().max((s[1] - sig[1]).abs()), f.id)
        })
        .filter(|(score, _)| *score <= tolerance)
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let Some(&(score, face_id)) = scored.first() else {
        return Err(Error::NoFace);
    };
    if scored.len() > 1 {
        return Err(Error::AmbiguousFace);
    }

    let face = markers.face(face_id).ok_or(Error::NoFace)?;
    let observed = opposite_ranks(&edges);
    let model = opposite_ranks(&face.edge_lengths());
    let mut ordered = [0usize; 3];
    for (k, r) in model.iter().enumerate() {
        let v = observed.iter().position(|o| o == r).ok_or(Error::NoFace)?;
        ordered[k] = idx[v];
    }
    let correspondences = [0, 1, 2].map(|k| Correspondence {
        point: face.points[k],
        feature: features[ordered[k]].rectified(),
    });
    Ok(FaceMatch {
        face: face_id,
        correspondences,
        features: ordered,
        score,
    })
}
