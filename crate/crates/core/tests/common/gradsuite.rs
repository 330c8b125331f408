//! Finite-difference gradient checks for every differentiable building block.

use emcomm::autodiff::{ParamSet, Tape, Tensor, Var};
use emcomm::grounding::{cacl_agent_loss, CaclConfig, TrajectoryRecord, TrajectoryStep};
use emcomm::nets::{AgentNet, Bound, GruCell, NetConfig, MESSAGE_DIM};
use emcomm::trainer::{a2c_loss, RolloutSegment, SegmentStep, TrainConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{fd_check_op, numeric_gradient, random_tensor, rel_error, rng};

pub const TOLERANCE: f64 = 1e-4;

/// Minimum distance of any ReLU input from zero in a network instance.
pub const KINK_MARGIN: f64 = 1e-3;

type Case = fn(&mut ChaCha8Rng, u64) -> f64;

fn dims(r: &mut ChaCha8Rng) -> (usize, usize) {
    (r.gen_range(1..=4), r.gen_range(1..=5))
}

fn away_from_zero(t: Tensor) -> Tensor {
    t.map(|v| if v.abs() < 0.02 { v.signum() * 0.02 + v } else { v })
}

fn unary(r: &mut ChaCha8Rng, seed: u64, scale: f64, f: fn(&mut Tape<'_>, Var) -> Var) -> f64 {
    let (n, c) = dims(r);
    fd_check_op(&[random_tensor(n, c, scale, r)], seed, &|t, v| f(t, v[0]))
}

fn binary(r: &mut ChaCha8Rng, seed: u64, f: fn(&mut Tape<'_>, Var, Var) -> Var) -> f64 {
    let (n, c) = dims(r);
    let a = random_tensor(n, c, 1.5, r);
    let b = random_tensor(n, c, 1.5, r);
    fd_check_op(&[a, b], seed, &|t, v| f(t, v[0], v[1]))
}

pub const PRIMITIVES: &[(&str, Case)] = &[
    ("affine", |r, s| {
        let (n, i) = dims(r);
        let o = r.gen_range(1..=5);
        let ins = [random_tensor(n, i, 1.0, r), random_tensor(o, i, 1.0, r), random_tensor(1, o, 1.0, r)];
        fd_check_op(&ins, s, &|t, v| t.affine(v[0], v[1], Some(v[2])))
    }),
    ("affine_no_bias", |r, s| {
        let (n, i) = dims(r);
        let o = r.gen_range(1..=5);
        let ins = [random_tensor(n, i, 1.0, r), random_tensor(o, i, 1.0, r)];
        fd_check_op(&ins, s, &|t, v| t.affine(v[0], v[1], None))
    }),
    ("matmul_t", |r, s| {
        let (n, k) = dims(r);
        let m = r.gen_range(1..=4);
        let ins = [random_tensor(n, k, 1.0, r), random_tensor(m, k, 1.0, r)];
        fd_check_op(&ins, s, &|t, v| t.matmul_t(v[0], v[1]))
    }),
    ("matmul_t_self", |r, s| {
        let (n, k) = dims(r);
        fd_check_op(&[random_tensor(n, k, 1.0, r)], s, &|t, v| t.matmul_t(v[0], v[0]))
    }),
    ("add", |r, s| binary(r, s, |t, a, b| t.add(a, b))),
    ("sub", |r, s| binary(r, s, |t, a, b| t.sub(a, b))),
    ("mul", |r, s| binary(r, s, |t, a, b| t.mul(a, b))),
    ("row_dot", |r, s| binary(r, s, |t, a, b| t.row_dot(a, b))),
    ("mse", |r, s| binary(r, s, |t, a, b| t.mse(a, b))),
    ("scale", |r, s| {
        let c = r.gen_range(-3.0..3.0);
        let (n, k) = dims(r);
        fd_check_op(&[random_tensor(n, k, 1.0, r)], s, &move |t, v| t.scale(v[0], c))
    }),
    ("add_scalar", |r, s| {
        let c = r.gen_range(-3.0..3.0);
        let (n, k) = dims(r);
        fd_check_op(&[random_tensor(n, k, 1.0, r)], s, &move |t, v| t.add_scalar(v[0], c))
    }),
    ("one_minus", |r, s| unary(r, s, 1.0, |t, a| t.one_minus(a))),
    ("sigmoid", |r, s| unary(r, s, 4.0, |t, a| t.sigmoid(a))),
    ("tanh", |r, s| unary(r, s, 3.0, |t, a| t.tanh(a))),
    ("exp", |r, s| unary(r, s, 2.0, |t, a| t.exp(a))),
    ("square", |r, s| unary(r, s, 2.0, |t, a| t.square(a))),
    ("relu", |r, s| {
        let (n, c) = dims(r);
        fd_check_op(&[away_from_zero(random_tensor(n, c, 1.0, r))], s, &|t, v| t.relu(v[0]))
    }),
    ("concat_cols", |r, s| {
        let n = r.gen_range(1..=4);
        let ins = [random_tensor(n, r.gen_range(1..=3), 1.0, r), random_tensor(n, r.gen_range(1..=3), 1.0, r)];
        fd_check_op(&ins, s, &|t, v| t.concat_cols(&[v[0], v[1], v[0]]))
    }),
    ("concat_rows", |r, s| {
        let c = r.gen_range(1..=4);
        let ins = [random_tensor(r.gen_range(1..=3), c, 1.0, r), random_tensor(r.gen_range(1..=3), c, 1.0, r)];
        fd_check_op(&ins, s, &|t, v| t.concat_rows(&[v[1], v[0]]))
    }),
    ("log_softmax", |r, s| unary(r, s, 3.0, |t, a| t.log_softmax(a))),
    ("softmax", |r, s| unary(r, s, 3.0, |t, a| t.softmax(a))),
    ("log_sum_exp", |r, s| unary(r, s, 3.0, |t, a| t.log_sum_exp(a, None))),
    ("log_sum_exp_masked", |r, s| {
        let (n, c) = dims(r);
        let mut mask = Tensor::zeros(n, c);
        for i in 0..n {
            for j in 0..c {
                mask.set(i, j, if r.gen_bool(0.6) { 1.0 } else { 0.0 });
            }
            mask.set(i, r.gen_range(0..c), 1.0);
        }
        let x = random_tensor(n, c, 3.0, r);
        fd_check_op(&[x], s, &move |t, v| {
            let m = t.constant(mask.clone());
            t.log_sum_exp(v[0], Some(m))
        })
    }),
    ("sum_cols", |r, s| unary(r, s, 1.0, |t, a| t.sum_cols(a))),
    ("sum", |r, s| unary(r, s, 1.0, |t, a| t.sum(a))),
    ("mean", |r, s| unary(r, s, 1.0, |t, a| t.mean(a))),
    ("gather", |r, s| {
        let (n, c) = dims(r);
        let idx: Vec<usize> = (0..n).map(|_| r.gen_range(0..c)).collect();
        fd_check_op(&[random_tensor(n, c, 1.0, r)], s, &move |t, v| t.gather(v[0], &idx))
    }),
    ("l2_normalize", |r, s| {
        let (n, c) = dims(r);
        let x = random_tensor(n, c, 1.0, r).map(|v| v + 0.05 * v.signum());
        fd_check_op(&[x], s, &|t, v| t.l2_normalize(v[0]))
    }),
    ("contrastive", |r, s| {
        let n = r.gen_range(2..=12);
        let groups = r.gen_range(1..=4);
        let mut labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..groups)).collect();
        labels[1] = labels[0];
        let tau = r.gen_range(0.1..1.0);
        let mean = r.gen_bool(0.5);
        let z = random_tensor(n, MESSAGE_DIM, 1.0, r);
        fd_check_op(&[z], s, &move |t, v| {
            let zn = t.l2_normalize(v[0]);
            t.contrastive(zn, &labels, tau, mean)
        })
    }),
];

fn flat(params: &ParamSet) -> Vec<f64> {
    params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
}

fn set_flat(params: &mut ParamSet, x: &[f64]) {
    let mut k = 0;
    for p in params.iter_mut() {
        let d = p.value.data_mut();
        d.copy_from_slice(&x[k..k + d.len()]);
        k += d.len();
    }
}

fn analytic(bound: &Bound, grads: &emcomm::autodiff::Gradients, params: &ParamSet) -> Vec<f64> {
    bound.vars().iter().zip(params.iter()).flat_map(|(&v, p)| grads.get_or_zeros(v, p.value.len())).collect()
}

/// GRU step: gradient with respect to input, hidden state and every weight.
pub fn gru_case(r: &mut ChaCha8Rng, seed: u64) -> f64 {
    let (input, hidden, batch) = (r.gen_range(1..=6), r.gen_range(1..=5), r.gen_range(1..=3));
    let mut params = ParamSet::default();
    let gru = GruCell::new(&mut params, "gru", input, hidden, r);
    // larger weights than the default init to exercise the nonlinearities
    let base: Vec<f64> = flat(&params).iter().map(|v| v * 3.0).collect();
    set_flat(&mut params, &base);
    let x = random_tensor(batch, input, 1.0, r);
    let h = random_tensor(batch, hidden, 0.9, r);
    let proj = random_tensor(batch, hidden, 1.0, &mut rng(seed));
    let run = |params: &ParamSet, x: &Tensor, h: &Tensor, grads: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let b = Bound::new(params, &mut tape, true);
        let xv = tape.leaf(x.clone());
        let hv = tape.leaf(h.clone());
        let out = gru.step(&mut tape, &b, xv, hv);
        let p = tape.constant(proj.clone());
        let prod = tape.mul(out, p);
        let loss = tape.sum(prod);
        let value = tape.value(loss).item();
        if !grads {
            return (value, vec![]);
        }
        let g = tape.backward(loss).unwrap();
        let mut all = analytic(&b, &g, params);
        all.extend(g.get_or_zeros(xv, x.len()));
        all.extend(g.get_or_zeros(hv, h.len()));
        (value, all)
    };
    let (_, a) = run(&params, &x, &h, true);
    let nw = base.len();
    let mut joint = base.clone();
    joint.extend_from_slice(x.data());
    joint.extend_from_slice(h.data());
    let numeric = numeric_gradient(&joint, &mut |v| {
        let mut p = params.clone();
        set_flat(&mut p, &v[..nw]);
        let xt = Tensor::new(x.rows(), x.cols(), v[nw..nw + x.len()].to_vec());
        let ht = Tensor::new(h.rows(), h.cols(), v[nw + x.len()..].to_vec());
        run(&p, &xt, &ht, false).0
    });
    rel_error(&a, &numeric)
}

/// A deliberately small agent so that full finite differences stay cheap.
pub fn small_net(r: &mut ChaCha8Rng, n_agents: usize, decoder: bool) -> AgentNet {
    let mut c = NetConfig::new(r.gen_range(3..=6), r.gen_range(2..=4), n_agents);
    c.hidden = r.gen_range(3..=6);
    c.obs_embed = r.gen_range(3..=5);
    c.msg_embed = r.gen_range(2..=4);
    c.decoder = decoder;
    let mut net = AgentNet::new(c, r);
    let scaled: Vec<f64> = flat(&net.params).iter().map(|v| v * 2.0).collect();
    set_flat(&mut net.params, &scaled);
    net.refresh_spectral(30);
    net
}

pub fn random_segments(r: &mut ChaCha8Rng, net: &AgentNet) -> Vec<RolloutSegment> {
    let c = &net.config;
    let (w, len) = (r.gen_range(1..=3), r.gen_range(1..=5));
    let n = c.n_agents;
    let draw = |d: usize, r: &mut ChaCha8Rng| -> Vec<f64> { (0..d).map(|_| r.gen_range(-1.0..1.0)).collect() };
    (0..w)
        .map(|_| {
            let initial_hidden = (0..n).map(|_| draw(c.hidden, r).iter().map(|v| v * 0.5).collect()).collect();
            let steps = (0..len)
                .map(|_| SegmentStep {
                    observations: (0..n).map(|_| draw(c.obs_dim, r)).collect(),
                    received: (0..n).map(|_| draw(c.received_dim(), r).iter().map(|v| v.abs()).collect()).collect(),
                    active: (0..n).map(|_| r.gen_bool(0.8)).collect(),
                    actions: (0..n).map(|_| r.gen_range(0..c.n_actions)).collect(),
                    log_probs: vec![0.0; n],
                    entropies: vec![0.0; n],
                    values: vec![0.0; n],
                    reward: r.gen_range(-1.0..1.0),
                    done: r.gen_bool(0.2),
                })
                .collect();
            RolloutSegment { initial_hidden, steps, bootstrap: draw(n, r) }
        })
        .collect()
}

/// Value term of the actor-critic loss through the full unrolled network.
pub fn a2c_value_case(r: &mut ChaCha8Rng, _seed: u64) -> f64 {
    let cfg = TrainConfig::default();
    // redraw instances whose ReLU inputs sit within finite-difference reach of the kink
    let (net, agent, segments) = loop {
        let n_agents = r.gen_range(2..=3);
        let net = small_net(r, n_agents, false);
        let agent = r.gen_range(0..n_agents);
        let segments = random_segments(r, &net);
        let refs: Vec<&RolloutSegment> = segments.iter().collect();
        let mut tape = Tape::new();
        let b = net.bind(&mut tape, true);
        a2c_loss(&mut tape, &net, &b, agent, &refs, &cfg).unwrap();
        if tape.relu_margin().unwrap_or(f64::INFINITY) > KINK_MARGIN {
            break (net, agent, segments);
        }
    };
    let refs: Vec<&RolloutSegment> = segments.iter().collect();
    let value_of = |net: &AgentNet, grads: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let b = net.bind(&mut tape, true);
        let terms = a2c_loss(&mut tape, net, &b, agent, &refs, &cfg).unwrap();
        let v = tape.value(terms.value_term).item();
        if !grads {
            return (v, vec![]);
        }
        let g = tape.backward(terms.value_term).unwrap();
        (v, analytic(&b, &g, &net.params))
    };
    let (_, a) = value_of(&net, true);
    let x = flat(&net.params);
    let numeric = numeric_gradient(&x, &mut |v| {
        let mut n2 = net.clone();
        set_flat(&mut n2.params, v);
        value_of(&n2, false).0
    });
    rel_error(&a, &numeric)
}

pub fn random_records(r: &mut ChaCha8Rng, net: &AgentNet) -> Vec<TrajectoryRecord> {
    let c = &net.config;
    (0..r.gen_range(2..=4))
        .map(|id| {
            let mut rec = TrajectoryRecord::new(id as u64);
            for _ in 0..r.gen_range(1..=6) {
                let observation: Vec<f64> = (0..c.obs_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
                let own_message = net.produce_message(&observation);
                let received = (0..r.gen_range(0..c.n_agents))
                    .map(|_| {
                        let mut m = [0.0; MESSAGE_DIM];
                        m.iter_mut().for_each(|v| *v = r.gen_range(0.01..0.99));
                        m
                    })
                    .collect();
                rec.steps.push(TrajectoryStep { observation, own_message, received });
            }
            rec
        })
        .collect()
}

/// Names of the parameters the contrastive term may reach.
pub fn in_cacl_scope(name: &str) -> bool {
    name.starts_with("obs_encoder.") || name.starts_with("message.")
}

/// Contrastive term for one agent: finite differences on the observation
/// encoder and message head, exact zeros everywhere else.
pub fn cacl_scope_case(r: &mut ChaCha8Rng, seed: u64) -> f64 {
    let n_agents = r.gen_range(2..=3);
    let net = small_net(r, n_agents, false);
    let records = random_records(r, &net);
    let batch: Vec<&TrajectoryRecord> = records.iter().collect();
    let cfg = CaclConfig { temperature: r.gen_range(0.1..1.0), ..Default::default() };
    let loss_of = |net: &AgentNet, grads: bool| -> (f64, Vec<f64>) {
        let mut tape = Tape::new();
        let b = net.bind(&mut tape, true);
        let l = cacl_agent_loss(&mut tape, net, &b, &batch, &cfg, &mut rng(seed)).unwrap();
        let v = tape.value(l).item();
        if !grads {
            return (v, vec![]);
        }
        let g = tape.backward(l).unwrap();
        (v, analytic(&b, &g, &net.params))
    };
    let (_, a) = loss_of(&net, true);
    let mut offsets = Vec::new();
    let mut k = 0;
    for p in net.params.iter() {
        let len = p.value.len();
        if in_cacl_scope(&p.name) {
            offsets.extend(k..k + len);
        } else if a[k..k + len].iter().any(|&g| g != 0.0) {
            return f64::INFINITY;
        }
        k += len;
    }
    let x = flat(&net.params);
    let sub: Vec<f64> = offsets.iter().map(|&i| x[i]).collect();
    let numeric = numeric_gradient(&sub, &mut |v| {
        let mut full = x.clone();
        offsets.iter().zip(v).for_each(|(&i, &val)| full[i] = val);
        let mut n2 = net.clone();
        set_flat(&mut n2.params, &full);
        loss_of(&n2, false).0
    });
    let a_sub: Vec<f64> = offsets.iter().map(|&i| a[i]).collect();
    rel_error(&a_sub, &numeric)
}

pub fn all_cases() -> Vec<(&'static str, Case)> {
    let mut v: Vec<(&'static str, Case)> = PRIMITIVES.to_vec();
    v.push(("gru_step", gru_case));
    v.push(("a2c_value_term", a2c_value_case));
    v.push(("cacl_gradient_scope", cacl_scope_case));
    v
}

/// Worst relative error of `case` over `instances` random draws.
pub fn run_case(name: &str, case: Case, instances: usize) -> f64 {
    let seed = name.bytes().fold(17u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut r = rng(seed);
    (0..instances).map(|i| case(&mut r, seed.wrapping_add(i as u64))).fold(0.0, f64::max)
}
