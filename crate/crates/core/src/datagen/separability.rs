//! Exact linear-separability test for labeled points on the Boolean cube.
//!
//! Runs an integer perceptron (with bias) and stops after the Novikoff mistake bound implied by
//! Muroga's bound on integer threshold-function weights. A labeling that is separable at all is
//! separable by some integer `(w, T)` with `|w_i| <= W = (k+1)^((k+1)/2) / 2^k`, so the
//! perceptron must converge within `(k+1) * ||v||^2` mistakes where `v = (2w, 1 - 2T)`.
//! Hitting the bound therefore certifies non-separability.

use std::collections::BTreeMap;

fn weight_bound(k: usize) -> i64 {
    let k = k as f64;
    ((k + 1.0).powf((k + 1.0) / 2.0) / 2f64.powf(k)).ceil() as i64
}

fn mistake_bound(k: usize) -> i64 {
    let w = weight_bound(k);
    let k = k as i64;
    let threshold = 2 * (k * w + 1) + 1;
    (k + 1) * (4 * k * w * w + threshold * threshold)
}

/// Whether a hyperplane separates the points labeled `true` from those labeled `false`.
/// Every point must have the same dimension; coordinates must be 0 or 1.
pub fn linearly_separable(points: &[Vec<u8>], labels: &[bool]) -> bool {
    assert_eq!(points.len(), labels.len(), "one label per point");
    let mut unique: BTreeMap<&[u8], bool> = BTreeMap::new();
    for (p, &y) in points.iter().zip(labels) {
        if *unique.entry(p.as_slice()).or_insert(y) != y {
            return false;
        }
    }
    if unique.values().all(|&y| y) || unique.values().all(|&y| !y) {
        return true;
    }
    let k = points[0].len();
    let bound = mistake_bound(k);
    let mut w = vec![0i64; k + 1];
    let mut mistakes = 0i64;
    loop {
        let mut clean = true;
        for (p, &y) in &unique {
            let s: i64 = p.iter().zip(&w).map(|(&x, &wi)| i64::from(x) * wi).sum::<i64>() + w[k];
            let sign = if y { 1 } else { -1 };
            if sign * s <= 0 {
                clean = false;
                mistakes += 1;
                if mistakes > bound {
                    return false;
                }
                for (wi, &x) in w.iter_mut().zip(p.iter()) {
                    *wi += sign * i64::from(x);
                }
                w[k] += sign;
            }
        }
        if clean {
            return true;
        }
    }
}
