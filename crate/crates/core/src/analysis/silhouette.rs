use super::dbscan::distance;

/// Mean silhouette coefficient over non-noise points.
///
/// For point `i`, `a` is its mean distance to the rest of its cluster and
/// `b` the smallest mean distance to another cluster; `s = (b − a)/max(a, b)`.
/// Members of singleton clusters score 0. Returns `None` when fewer than two
/// clusters are present.
pub fn silhouette<P: AsRef<[f64]>>(points: &[P], labels: &[Option<usize>]) -> Option<f64> {
    assert_eq!(points.len(), labels.len(), "one label per point");
    let k = labels.iter().flatten().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    labels.iter().flatten().for_each(|&c| sizes[c] += 1);
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return None;
    }
    let members: Vec<usize> = (0..points.len()).filter(|&i| labels[i].is_some()).collect();
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for &i in &members {
        let ci = labels[i].unwrap();
        if sizes[ci] == 1 {
            continue;
        }
        sums.fill(0.0);
        for &j in &members {
            if j != i {
                sums[labels[j].unwrap()] += distance(points[i].as_ref(), points[j].as_ref());
            }
        }
        let a = sums[ci] / (sizes[ci] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != ci && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Some(total / members.len() as f64)
}
