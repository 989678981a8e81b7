/// Euclidean projection onto `{w >= 0, sum w = 1}` by the sort-and-threshold rule.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            tau = candidate;
        }
    }
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Euclidean projection onto `{0 <= w <= upper, |sum w - 1| <= band}`.
///
/// The projection is `clip(v - mu, 0, upper)` for the shift `mu` that puts the
/// sum inside the band; `mu` is found by bisection.
pub fn project_box_band(v: &[f64], upper: f64, band: f64) -> Vec<f64> {
    let clipped_sum = |mu: f64| v.iter().map(|&x| (x - mu).clamp(0.0, upper)).sum::<f64>();
    let s0 = clipped_sum(0.0);
    let target = if s0 > 1.0 + band {
        1.0 + band
    } else if s0 < 1.0 - band {
        1.0 - band
    } else {
        return v.iter().map(|&x| x.clamp(0.0, upper)).collect();
    };
    let (min, max) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    // Sum is non-increasing in mu: upper * n at mu = min - upper, zero at mu = max.
    let (mut lo, mut hi) = (min - upper, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_sum(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * (1.0 + mid.abs()) {
            break;
        }
    }
    let mu = 0.5 * (lo + hi);
    v.iter().map(|&x| (x - mu).clamp(0.0, upper)).collect()
}
