//! Independent reference implementations and check routines shared by the
//! integration tests and the acceptance suite.

#![allow(dead_code)]

pub mod gradsuite;
pub mod scenarios;
pub mod training;

use emcomm::autodiff::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Naive evaluation of the supervised contrastive loss over trajectory
/// labelled messages. No stabilization, straight from the definition.
pub fn brute_force_cacl(trajectories: &[Vec<Vec<f64>>], tau: f64, mean: bool) -> f64 {
    let mut msgs: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    for (t, traj) in trajectories.iter().enumerate() {
        for m in traj {
            let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
            msgs.push(m.iter().map(|v| v / norm).collect());
            labels.push(t);
        }
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..msgs.len() {
        let positives: Vec<usize> = (0..msgs.len()).filter(|&p| p != i && labels[p] == labels[i]).collect();
        if positives.is_empty() {
            continue;
        }
        anchors += 1;
        let mut denom = 0.0;
        for a in 0..msgs.len() {
            if a != i {
                denom += (dot(&msgs[i], &msgs[a]) / tau).exp();
            }
        }
        let mut inner = 0.0;
        for &p in &positives {
            inner += dot(&msgs[i], &msgs[p]) / tau - denom.ln();
        }
        total += -inner / positives.len() as f64;
    }
    if mean && anchors > 0 {
        total / anchors as f64
    } else {
        total
    }
}

/// Random batch with `2..=8` trajectories of `2..=16` messages in (0, 1)⁴.
pub fn random_message_batch<R: Rng>(rng: &mut R) -> Vec<Vec<Vec<f64>>> {
    let k = rng.gen_range(2..=8);
    (0..k)
        .map(|_| {
            let m = rng.gen_range(2..=16);
            (0..m).map(|_| (0..4).map(|_| rng.gen_range(0.01..0.99)).collect()).collect()
        })
        .collect()
}

/// Reference DBSCAN: neighbor sets by exhaustive scan, clusters as connected
/// components of core points, border points given to the lowest-numbered
/// cluster that has a core within reach. Clusters are numbered by their
/// smallest core index.
pub fn brute_force_dbscan(points: &[Vec<f64>], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let adj: Vec<Vec<bool>> =
        (0..n).map(|i| (0..n).map(|j| dist(&points[i], &points[j]) <= eps).collect()).collect();
    let core: Vec<bool> = (0..n).map(|i| adj[i].iter().filter(|&&b| b).count() >= min_pts).collect();
    // union-find over cores
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut x = x;
        while p[x] != r {
            let nx = p[x];
            p[x] = r;
            x = nx;
        }
        r
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && adj[i][j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut root_to_cluster = std::collections::BTreeMap::new();
    let mut labels = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let next = root_to_cluster.len();
            let c = *root_to_cluster.entry(r).or_insert(next);
            labels[i] = Some(c);
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n).filter(|&j| core[j] && adj[i][j]).map(|j| labels[j].unwrap()).min();
        }
    }
    labels
}

/// Whether two labelings agree up to a bijective renaming of clusters.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::HashMap::new();
    let mut bwd = std::collections::HashMap::new();
    for (x, y) in a.iter().zip(b) {
        match (x, y) {
            (None, None) => {}
            (Some(x), Some(y)) => {
                if *fwd.entry(*x).or_insert(*y) != *y || *bwd.entry(*y).or_insert(*x) != *x {
                    return false;
                }
            }
            _ => return false,
        }
    }
    true
}

/// Silhouette straight from the formula, one point at a time.
pub fn brute_force_silhouette(points: &[Vec<f64>], labels: &[Option<usize>]) -> Option<f64> {
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut clusters: Vec<usize> = labels.iter().flatten().copied().collect();
    clusters.sort_unstable();
    clusters.dedup();
    if clusters.len() < 2 {
        return None;
    }
    let members = |c: usize| -> Vec<usize> { (0..points.len()).filter(|&j| labels[j] == Some(c)).collect() };
    let mut scores = Vec::new();
    for i in 0..points.len() {
        let Some(ci) = labels[i] else { continue };
        let own: Vec<usize> = members(ci).into_iter().filter(|&j| j != i).collect();
        if own.is_empty() {
            scores.push(0.0);
            continue;
        }
        let a = own.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / own.len() as f64;
        let mut b = f64::INFINITY;
        for &c in &clusters {
            if c == ci {
                continue;
            }
            let m = members(c);
            let d = m.iter().map(|&j| dist(&points[i], &points[j])).sum::<f64>() / m.len() as f64;
            b = b.min(d);
        }
        scores.push(if a.max(b) == 0.0 { 0.0 } else { (b - a) / a.max(b) });
    }
    Some(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Largest singular value via cyclic Jacobi eigendecomposition of WᵀW.
pub fn largest_singular_value(w: &Tensor) -> f64 {
    let [r, c] = w.shape();
    let mut a = vec![vec![0.0; c]; c];
    for i in 0..c {
        for j in 0..c {
            a[i][j] = (0..r).map(|k| w.get(k, i) * w.get(k, j)).sum();
        }
    }
    for _sweep in 0..100 {
        let off: f64 = (0..c).flat_map(|i| (0..c).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..c {
            for q in p + 1..c {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..c {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = cs * akp - sn * akq;
                    a[k][q] = sn * akp + cs * akq;
                }
                for k in 0..c {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = cs * apk - sn * aqk;
                    a[q][k] = sn * apk + cs * aqk;
                }
            }
        }
    }
    (0..c).map(|i| a[i][i]).fold(0.0, f64::max).sqrt()
}

/// Relative error between two gradient vectors, measured in L2 norm.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-7)
}

pub const FD_STEP: f64 = 1e-5;

/// Central finite-difference check of `build` with respect to every input.
///
/// `build` receives leaf variables for `inputs` and returns any output; a
/// fixed random projection reduces it to a scalar. Returns the worst
/// relative error over inputs.
pub fn fd_check_op(inputs: &[Tensor], seed: u64, build: &dyn Fn(&mut Tape<'_>, &[Var]) -> Var) -> f64 {
    let eval = |vals: &[Tensor], proj: Option<&Tensor>| -> (f64, Vec<Vec<f64>>, Tensor) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).shape();
        let p = match proj {
            Some(p) => p.clone(),
            None => random_tensor(shape[0], shape[1], 1.0, &mut rng(seed ^ 0x5eed)),
        };
        let pv = tape.constant(p.clone());
        let prod = tape.mul(out, pv);
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        let grads = tape.backward(loss).expect("backward");
        let g = vars.iter().zip(vals).map(|(v, t)| grads.get_or_zeros(*v, t.len())).collect();
        (value, g, p)
    };
    let (_, analytic, proj) = eval(inputs, None);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let mut numeric = vec![0.0; inputs[k].len()];
        for (idx, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[idx] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[idx] -= FD_STEP;
            let fp = eval(&plus, Some(&proj)).0;
            let fm = eval(&minus, Some(&proj)).0;
            *slot = (fp - fm) / (2.0 * FD_STEP);
        }
        worst = worst.max(rel_error(&analytic[k], &numeric));
    }
    worst
}

/// Central finite differences of a scalar function of a parameter vector.
pub fn numeric_gradient(x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut buf = x.to_vec();
    for i in 0..x.len() {
        buf[i] = x[i] + FD_STEP;
        let fp = f(&buf);
        buf[i] = x[i] - FD_STEP;
        let fm = f(&buf);
        buf[i] = x[i];
        g[i] = (fp - fm) / (2.0 * FD_STEP);
    }
    g
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// `n` points in [0, 1]⁴: a few tight blobs plus uniform background noise.
pub fn clustered_points<R: Rng>(rng: &mut R, n: usize) -> Vec<Vec<f64>> {
    let k = rng.gen_range(2..=5);
    let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..4).map(|_| rng.gen_range(0.15..0.85)).collect()).collect();
    let spread = rng.gen_range(0.02..0.08);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.15) {
                (0..4).map(|_| rng.gen_range(0.0..1.0)).collect()
            } else {
                let c = &centers[rng.gen_range(0..k)];
                c.iter().map(|v| (v + rng.gen_range(-spread..spread)).clamp(0.0, 1.0)).collect()
            }
        })
        .collect()
}
