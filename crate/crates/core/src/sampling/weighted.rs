use rand::Rng;

/// Binary indexed tree over non-negative weights.
struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(w: &[f64]) -> Self {
        let n = w.len();
        let mut tree = vec![0.0; n + 1];
        for i in 1..=n {
            tree[i] += w[i - 1];
            let j = i + (i & i.wrapping_neg());
            if j <= n {
                tree[j] += tree[i];
            }
        }
        Fenwick { tree }
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut i = i + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos.min(n - 1)
    }
}

/// Draws `k` distinct indices one at a time, each with probability
/// proportional to its weight among those not yet drawn. Indices whose
/// weight is zero are drawn uniformly once all positive weight is used up.
/// Returns indices in draw order.
pub(crate) fn sample_without_replacement<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let n = weights.len();
    let k = k.min(n);
    let mut w: Vec<f64> = weights.iter().map(|&x| if x.is_finite() && x > 0.0 { x } else { 0.0 }).collect();
    let mut tree = Fenwick::new(&w);
    let mut remaining: f64 = w.iter().sum();
    let mut positive = w.iter().filter(|&&x| x > 0.0).count();
    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        if positive == 0 {
            let rest: Vec<usize> = (0..n).filter(|&i| !taken[i]).collect();
            let i = rest[rng.gen_range(0..rest.len())];
            taken[i] = true;
            out.push(i);
            continue;
        }
        let mut i = tree.find(rng.gen::<f64>() * remaining);
        // Rounding can land on a drawn or zero-weight slot; step to the
        // nearest live one.
        if w[i] <= 0.0 {
            i = (i..n).chain((0..i).rev()).find(|&j| w[j] > 0.0).expect("positive weight left");
        }
        tree.add(i, -w[i]);
        remaining -= w[i];
        w[i] = 0.0;
        positive -= 1;
        if positive == 0 || remaining <= 0.0 {
            remaining = w.iter().sum();
        }
        taken[i] = true;
        out.push(i);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;

    #[test]
    fn fenwick_find_matches_linear_scan() {
        let w = [0.5, 0.0, 2.0, 1.0, 0.25];
        let t = Fenwick::new(&w);
        for (target, want) in [(0.0, 0), (0.49, 0), (0.5, 2), (2.49, 2), (2.5, 3), (3.5, 4), (3.74, 4)] {
            assert_eq!(t.find(target), want, "target {target}");
        }
    }

    #[test]
    fn draws_are_distinct_and_exact() {
        let mut rng = seeded_rng(3, 0);
        let w: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let s = sample_without_replacement(&w, 50, &mut rng);
        let mut sorted = s.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        // Zero-weight ids come last.
        assert!(s[..s.len() - 8].iter().all(|&i| w[i] > 0.0));
    }
}
