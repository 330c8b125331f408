/// Density-based clustering of `points` under Euclidean distance.
///
/// A point is core when at least `min_pts` points (itself included) lie
/// within `eps`. Clusters grow from cores in input order; a border point
/// reachable from several clusters joins the first one to reach it. Points
/// reachable from no core are noise (`None`). Cluster ids are assigned
/// `0, 1, ...` in discovery order.
pub fn dbscan<P: AsRef<[f64]>>(points: &[P], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0, "eps must be positive");
    assert!(min_pts >= 1, "min_pts must be at least 1");
    let n = points.len();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let p = points[i].as_ref();
        (0..n).filter(|&j| squared_distance(p, points[j].as_ref()) <= eps2).collect()
    };

    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Cluster(usize),
    }
    let mut state = vec![State::Unvisited; n];
    let mut next = 0;
    for i in 0..n {
        if state[i] != State::Unvisited {
            continue;
        }
        let seeds = neighbors(i);
        if seeds.len() < min_pts {
            state[i] = State::Noise;
            continue;
        }
        let c = next;
        next += 1;
        state[i] = State::Cluster(c);
        let mut queue = seeds;
        let mut head = 0;
        while head < queue.len() {
            let q = queue[head];
            head += 1;
            match state[q] {
                State::Noise => state[q] = State::Cluster(c),
                State::Unvisited => {
                    state[q] = State::Cluster(c);
                    let more = neighbors(q);
                    if more.len() >= min_pts {
                        queue.extend(more);
                    }
                }
                State::Cluster(_) => {}
            }
        }
    }
    state
        .into_iter()
        .map(|s| match s {
            State::Cluster(c) => Some(c),
            _ => None,
        })
        .collect()
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}
