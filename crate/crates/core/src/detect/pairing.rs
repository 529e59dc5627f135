//! Symmetric light pairing with one-pair-per-proposal greedy resolution.

use serde::{Deserialize, Serialize};

use super::classify::ClassifiedProposal;

/// Pixel tolerances for pairing two lights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBounds {
    pub eps_y: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl PairBounds {
    /// `|dy| < eps_y` and `d_min <= |dx| <= d_max`.
    pub fn accepts(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let dy = (a[1] - b[1]).abs();
        let dx = (a[0] - b[0]).abs();
        dy < self.eps_y && dx >= self.d_min && dx <= self.d_max && dx > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightPair {
    pub left: ClassifiedProposal,
    pub right: ClassifiedProposal,
    /// Indices of `left` / `right` in the classified list.
    pub left_index: usize,
    pub right_index: usize,
    pub vertical_gap: f64,
    pub horizontal_gap: f64,
}

impl LightPair {
    pub fn center(&self) -> [f64; 2] {
        let (a, b) = (self.left.proposal.centroid, self.right.proposal.centroid);
        [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
    }

    pub fn width(&self) -> f64 {
        self.horizontal_gap
    }

    pub fn confidence(&self) -> f64 {
        (self.left.confidence + self.right.confidence) / 2.0
    }
}

/// Index pairs `(left, right)` that pass the geometric test, in greedy order.
pub fn candidate_pairs(points: &[[f64; 2]], eligible: &[bool], b: &PairBounds) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            if eligible[i] && eligible[j] && b.accepts(points[i], points[j]) {
                let (l, r) = if points[i][0] < points[j][0] { (i, j) } else { (j, i) };
                cands.push((l, r));
            }
        }
    }
    cands.sort_by(|&(l1, r1), &(l2, r2)| {
        let key = |l: usize, r: usize| {
            (
                (points[l][1] - points[r][1]).abs(),
                points[r][0] - points[l][0],
                points[l][0],
            )
        };
        let (a, c) = (key(l1, r1), key(l2, r2));
        a.0.total_cmp(&c.0)
            .then(a.1.total_cmp(&c.1))
            .then(a.2.total_cmp(&c.2))
            .then((l1, r1).cmp(&(l2, r2)))
    });
    cands
}

/// Greedy selection over [`candidate_pairs`]: ascending vertical gap, then
/// horizontal gap, then leftmost centroid. Returns index pairs.
pub fn greedy_pairs(points: &[[f64; 2]], eligible: &[bool], b: &PairBounds) -> Vec<(usize, usize)> {
    let mut used = vec![false; points.len()];
    let mut out = Vec::new();
    for (l, r) in candidate_pairs(points, eligible, b) {
        if !used[l] && !used[r] {
            used[l] = true;
            used[r] = true;
            out.push((l, r));
        }
    }
    out
}

/// Pair non-artifact proposals.
pub fn pair(classified: &[ClassifiedProposal], b: &PairBounds) -> Vec<LightPair> {
    let pts: Vec<[f64; 2]> = classified.iter().map(|c| c.proposal.centroid).collect();
    let eligible: Vec<bool> = classified.iter().map(|c| c.label.is_light()).collect();
    greedy_pairs(&pts, &eligible, b)
        .into_iter()
        .map(|(l, r)| LightPair {
            left: classified[l].clone(),
            right: classified[r].clone(),
            left_index: l,
            right_index: r,
            vertical_gap: (pts[l][1] - pts[r][1]).abs(),
            horizontal_gap: pts[r][0] - pts[l][0],
        })
        .collect()
}
