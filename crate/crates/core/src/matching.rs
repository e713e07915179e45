//! Descriptor correspondence filtering: uniqueness ratio and married (mutual-best) matching.
//!
//! Descriptors are produced elsewhere and ingested as raw vectors.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::MatchingError;
use crate::geometry::PixelPoint;

/// Keypoints with one descriptor each.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorSet {
    descriptors: Vec<Vec<f64>>,
    keypoints: Vec<PixelPoint>,
}

impl DescriptorSet {
    pub fn new(descriptors: Vec<Vec<f64>>, keypoints: Vec<PixelPoint>) -> Result<Self, MatchingError> {
        if descriptors.len() != keypoints.len() {
            return Err(MatchingError::Inconsistent(format!(
                "{} descriptors for {} keypoints",
                descriptors.len(),
                keypoints.len()
            )));
        }
        if let Some(first) = descriptors.first() {
            let dim = first.len();
            if descriptors.iter().any(|d| d.len() != dim) {
                return Err(MatchingError::Inconsistent("descriptor dimensions differ".into()));
            }
        }
        Ok(Self { descriptors, keypoints })
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn dimension(&self) -> Option<usize> {
        self.descriptors.first().map(Vec::len)
    }

    pub fn descriptors(&self) -> &[Vec<f64>] {
        &self.descriptors
    }

    pub fn keypoints(&self) -> &[PixelPoint] {
        &self.keypoints
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateMatch {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// Best candidate for one query descriptor plus the distance to the runner-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPair {
    pub best: CandidateMatch,
    pub second_distance: f64,
}

impl NearestPair {
    fn passes_ratio(&self, tau: f64) -> bool {
        if self.second_distance == 0.0 {
            return self.best.distance == 0.0;
        }
        self.best.distance / self.second_distance < tau
    }
}

/// A pixel correspondence between two images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub x1: PixelPoint,
    pub x2: PixelPoint,
}

impl Correspondence {
    pub fn new(x1: PixelPoint, x2: PixelPoint) -> Self {
        Self { x1, x2 }
    }

    pub fn swapped(&self) -> Self {
        Self { x1: self.x2, x2: self.x1 }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Exact two nearest target descriptors for every query descriptor.
///
/// Ties resolve toward the lower target index.
pub fn nearest_two(query: &DescriptorSet, target: &DescriptorSet) -> Result<Vec<NearestPair>, MatchingError> {
    if target.len() < 2 {
        return Err(MatchingError::Underpopulated(target.len()));
    }
    if !query.is_empty() && query.dimension() != target.dimension() {
        return Err(MatchingError::Inconsistent("query and target dimensions differ".into()));
    }
    let rows = query
        .descriptors
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut best = (usize::MAX, f64::INFINITY);
            let mut second = f64::INFINITY;
            for (ti, t) in target.descriptors.iter().enumerate() {
                let d = euclidean(q, t);
                if d < best.1 {
                    second = best.1;
                    best = (ti, d);
                } else if d < second {
                    second = d;
                }
            }
            NearestPair {
                best: CandidateMatch { index_a: qi, index_b: best.0, distance: best.1 },
                second_distance: second,
            }
        })
        .collect();
    Ok(rows)
}

/// Keeps rows whose best-to-second distance ratio is below `tau`.
pub fn ratio_filter(matches: &[NearestPair], tau: f64) -> Result<Vec<NearestPair>, MatchingError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(MatchingError::InvalidTau(tau));
    }
    Ok(matches.iter().filter(|m| m.passes_ratio(tau)).copied().collect())
}

/// Keeps forward matches `(a, b)` for which `a` is also `b`'s best match in the backward direction.
pub fn married_filter(forward: &[NearestPair], backward: &[NearestPair]) -> Vec<CandidateMatch> {
    let back: HashMap<usize, usize> = backward.iter().map(|m| (m.best.index_a, m.best.index_b)).collect();
    forward
        .iter()
        .filter(|m| back.get(&m.best.index_b) == Some(&m.best.index_a))
        .map(|m| m.best)
        .collect()
}

/// Full filtering chain: nearest two in both directions, ratio test on both, married matching.
pub fn match_descriptors(a: &DescriptorSet, b: &DescriptorSet, tau: f64) -> Result<Vec<Correspondence>, MatchingError> {
    let forward = ratio_filter(&nearest_two(a, b)?, tau)?;
    let backward = ratio_filter(&nearest_two(b, a)?, tau)?;
    Ok(married_filter(&forward, &backward)
        .into_iter()
        .map(|m| Correspondence::new(a.keypoints[m.index_a], b.keypoints[m.index_b]))
        .collect())
}
