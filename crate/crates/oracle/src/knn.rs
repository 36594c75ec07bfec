//! Exhaustive nearest-neighbor scan with the documented tie-break.

/// All-pairs kNN: squared Euclidean distance, ties by ascending index.
pub fn brute_knn(
    points: &[[f64; 3]],
    query: [f64; 3],
    k: usize,
    exclude: Option<usize>,
) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| exclude != Some(*i))
        .map(|(i, p)| {
            let d = [p[0] - query[0], p[1] - query[1], p[2] - query[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, i)| i).collect()
}
