/// Deterministic farthest-point traversal of all embeddings.
///
/// The first pick has the largest norm; each following pick maximizes the
/// distance to its nearest already-picked embedding. Ties go to the lowest index.
pub fn farthest_point_order(embeddings: &[Vec<f64>]) -> Vec<usize> {
    let n = embeddings.len();
    if n == 0 {
        return Vec::new();
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut first = 0;
    for i in 1..n {
        if norm(&embeddings[i]) > norm(&embeddings[first]) {
            first = i;
        }
    }
    let mut order = vec![first];
    let mut picked = vec![false; n];
    picked[first] = true;
    let mut nearest: Vec<f64> = embeddings.iter().map(|e| dist(e, &embeddings[first])).collect();
    while order.len() < n {
        let mut best: Option<usize> = None;
        for i in (0..n).filter(|&i| !picked[i]) {
            if best.map_or(true, |b| nearest[i] > nearest[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("unpicked embedding remains");
        picked[b] = true;
        order.push(b);
        for i in 0..n {
            nearest[i] = nearest[i].min(dist(&embeddings[i], &embeddings[b]));
        }
    }
    order
}

/// `w_d = (n − rank)/(n − 1)` with 1-based pick rank: the first pick scores 1, the last 0.
pub fn rank_weights(order: &[usize]) -> Vec<f64> {
    let n = order.len();
    let mut w = vec![1.0; n];
    if n > 1 {
        for (rank, &i) in order.iter().enumerate() {
            w[i] = (n - 1 - rank) as f64 / (n - 1) as f64;
        }
    }
    w
}

/// Frame embeddings `k̂_i · hidden_i`, scored by farthest-point rank.
pub fn diversity_from_embeddings(k_hat: &[f64], hidden: &[Vec<f64>]) -> Vec<f64> {
    let embeddings: Vec<Vec<f64>> = k_hat.iter().zip(hidden).map(|(&k, h)| h.iter().map(|x| k * x).collect()).collect();
    rank_weights(&farthest_point_order(&embeddings))
}
