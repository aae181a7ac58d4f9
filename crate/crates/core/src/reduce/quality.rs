use super::knn::euclidean;
use super::Layout;

/// Trustworthiness of a layout: 1 minus a normalized penalty for points that
/// enter a point's low-dimensional k-neighborhood while being ranked beyond
/// `k` in the original space. Ranks are 1-based over the other points with
/// ties broken by index.
pub fn trustworthiness(high: &[Vec<f64>], layout: &Layout, k: usize) -> f64 {
    let n = high.len();
    assert_eq!(n, layout.len(), "layout and input sizes differ");
    assert!(k >= 1 && 2 * k < n, "need 1 <= k < n/2");

    let mut penalty = 0.0;
    let mut rank = vec![0usize; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for i in 0..n {
        let hd: Vec<f64> = (0..n).map(|j| euclidean(&high[i], &high[j])).collect();
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_unstable_by(|a, b| hd[*a].total_cmp(&hd[*b]).then(a.cmp(b)));
        for (r, &j) in order.iter().enumerate() {
            rank[j] = r + 1;
        }

        let p = layout.coords[i];
        let ld: Vec<f64> = layout
            .coords
            .iter()
            .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
            .collect();
        order.clear();
        order.extend((0..n).filter(|&j| j != i));
        order.sort_unstable_by(|a, b| ld[*a].total_cmp(&ld[*b]).then(a.cmp(b)));
        for &j in &order[..k] {
            if rank[j] > k {
                penalty += (rank[j] - k) as f64;
            }
        }
    }
    let (n, k) = (n as f64, k as f64);
    1.0 - 2.0 / (n * k * (2.0 * n - 3.0 * k - 1.0)) * penalty
}
