//! Bucketed relative positions for the learned attention bias.

/// Maps `relative_position = key_pos - query_pos` to a bucket.
///
/// Half the buckets (per direction, when bidirectional) index small
/// distances exactly; the rest grow logarithmically up to `max_distance`,
/// beyond which everything shares the last bucket. Unidirectional buckets
/// only distinguish keys at or before the query.
pub fn relative_bucket(relative_position: i64, bidirectional: bool, num_buckets: usize, max_distance: usize) -> usize {
    let mut buckets = num_buckets as i64;
    let mut base = 0i64;
    let distance = if bidirectional {
        buckets /= 2;
        if relative_position > 0 {
            base = buckets;
        }
        relative_position.abs()
    } else {
        (-relative_position).max(0)
    };
    let max_exact = buckets / 2;
    if distance < max_exact {
        return (base + distance) as usize;
    }
    let scaled = (distance as f64 / max_exact as f64).ln() / (max_distance as f64 / max_exact as f64).ln()
        * (buckets - max_exact) as f64;
    let large = (max_exact + scaled as i64).min(buckets - 1);
    (base + large) as usize
}

/// Bucket ids for every `(query, key)` pair, row-major `[q_len × k_len]`.
pub fn bucket_grid(
    q_len: usize,
    k_len: usize,
    bidirectional: bool,
    num_buckets: usize,
    max_distance: usize,
) -> Vec<usize> {
    let mut out = Vec::with_capacity(q_len * k_len);
    for q in 0..q_len {
        for k in 0..k_len {
            out.push(relative_bucket(
                k as i64 - q as i64,
                bidirectional,
                num_buckets,
                max_distance,
            ));
        }
    }
    out
}
