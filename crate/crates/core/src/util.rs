use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic RNG for a (seed, stream) pair. Streams keep independent
/// consumers (shuffling, dropout, sampling) from perturbing each other.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` into integer parts proportional to `weights` using the
/// largest-remainder rule. Ties on the remainder go to the lower index.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || sum <= 0.0 {
        return vec![0; weights.len()];
    }
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut parts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = parts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        parts[i] += 1;
    }
    parts
}

/// Quotas `round(frac * size)` per stratum, adjusted by largest remainder so
/// the parts sum to `round(frac * sum(sizes))` and never exceed a stratum.
pub(crate) fn stratified_quotas(sizes: &[usize], target: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    let mut parts = apportion(target, &weights);
    for (p, &s) in parts.iter_mut().zip(sizes) {
        *p = (*p).min(s);
    }
    parts
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_exact_and_remainders() {
        assert_eq!(apportion(300, &[1.0, 1.0, 1.0]), vec![100, 100, 100]);
        assert_eq!(apportion(10, &[1.0, 1.0, 1.0]), vec![4, 3, 3]);
        assert_eq!(apportion(0, &[1.0, 2.0]), vec![0, 0]);
        let parts = apportion(1000, &[0.5, 0.3, 0.2]);
        assert_eq!(parts, vec![500, 300, 200]);
    }

    #[test]
    fn quotas_sum_to_target() {
        let q = stratified_quotas(&[60, 40], 50);
        assert_eq!(q, vec![30, 20]);
        let q = stratified_quotas(&[1, 3, 7], 5);
        assert_eq!(q.iter().sum::<usize>(), 5);
    }

    #[test]
    fn streams_differ() {
        use rand::Rng;
        let a: u64 = seeded_rng(1, 0).gen();
        let b: u64 = seeded_rng(1, 1).gen();
        let c: u64 = seeded_rng(1, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
