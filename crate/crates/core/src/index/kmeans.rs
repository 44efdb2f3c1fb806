use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f32], c: &[f64]) -> f64 {
    a.iter().zip(c).map(|(&x, &y)| (x as f64 - y).powi(2)).sum()
}

fn nearest(point: &[f32], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations, stopping once no centroid
/// moves more than [`SHIFT_TOLERANCE`] or after [`MAX_ITERATIONS`].
pub fn kmeans(points: &[&[f32]], k: usize, seed: u64) -> KMeans {
    assert!(k >= 1 && k <= points.len(), "cluster count out of range");
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut chosen = vec![rng.gen_range(0..points.len())];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &to_f64(points[chosen[0]])))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive mass")
        } else {
            // every remaining point coincides with a centre
            (0..points.len()).find(|i| !chosen.contains(i)).expect("k <= n")
        };
        chosen.push(next);
        let c = to_f64(points[next]);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(sq_dist(p, &c));
        }
    }
    let mut centroids: Vec<Vec<f64>> = chosen.iter().map(|&i| to_f64(points[i])).collect();

    let mut assignments = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    loop {
        let mut j = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest(p, &centroids);
            *a = c;
            j += d;
        }
        objective.push(j);
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
                *s += x as f64;
            }
        }
        let mut shift = 0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its centre
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            let moved = next
                .iter()
                .zip(&centroids[c])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            shift = shift.max(moved);
            centroids[c] = next;
        }
        if shift < SHIFT_TOLERANCE {
            for (a, p) in assignments.iter_mut().zip(points) {
                *a = nearest(p, &centroids).0;
            }
            objective.push(assignments.iter().zip(points).map(|(&a, p)| sq_dist(p, &centroids[a])).sum());
            break;
        }
    }
    KMeans {
        assignments,
        centroids,
        objective,
        iterations,
    }
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}
