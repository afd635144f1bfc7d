//! Farthest-point resampling to fixed cardinality (point-cloud losses need
//! equal-size sets).

use crate::geom::Vec3;

/// Indices of `n` points chosen by farthest-point sampling seeded at
/// index 0. When `n > len`, the FPS ordering repeats cyclically.
pub fn resample_indices(points: &[Vec3], n: usize) -> Vec<usize> {
    assert!(!points.is_empty() && n >= 1);
    let m = points.len();
    let mut order = Vec::with_capacity(m);
    let mut dist = vec![f64::INFINITY; m];
    let mut chosen = vec![false; m];
    let mut current = 0usize;
    for _ in 0..m {
        order.push(current);
        chosen[current] = true;
        let c = points[current];
        let mut best = None;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
            if d2 < dist[i] {
                dist[i] = d2;
            }
            if dist[i] > best_d {
                best_d = dist[i];
                best = Some(i);
            }
        }
        match best {
            Some(i) => current = i,
            None => break,
        }
    }
    (0..n).map(|i| order[i % m]).collect()
}

pub fn resample_points(points: &[Vec3], n: usize) -> Vec<Vec3> {
    resample_indices(points, n)
        .into_iter()
        .map(|i| points[i])
        .collect()
}
