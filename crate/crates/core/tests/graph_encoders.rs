use lgf_core::autodiff::{finite_diff_check, ParamStore, Tape, Tensor};
use lgf_core::data::{WindowOrigin, WindowedSample};
use lgf_core::graph::{build_snapshot, neighbor_sets, pearson};
use lgf_core::lstm::{encode_window, lstm_step, LstmParams};
use lgf_core::sage::{encode_spatial, mean_aggregator, sage_layer, Activation, SageLayerParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn window(segment: Tensor) -> WindowedSample {
    let w = segment.rows();
    WindowedSample {
        segment,
        label: 1,
        origin: WindowOrigin { run: 0, end: w - 1 },
    }
}

fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random symmetric adjacency with zero diagonal and roughly half the edges present.
fn random_adjacency(rng: &mut impl Rng, n: usize) -> Tensor {
    let mut a = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.5) {
                let v = rng.gen_range(-1.0..1.0);
                a.set(i, j, v);
                a.set(j, i, v);
            }
        }
    }
    a
}

fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&p| t.row(p).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

fn permute_sym(a: &Tensor, perm: &[usize]) -> Tensor {
    let n = perm.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, a.at(perm[i], perm[j]));
        }
    }
    out
}

// ---- graph builder ----

#[test]
fn pearson_swapped_arguments_are_bitwise_equal() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let w = rng.gen_range(2..64);
        let x: Vec<f64> = (0..w).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y: Vec<f64> = (0..w).map(|_| rng.gen_range(-5.0..5.0)).collect();
        assert_eq!(pearson(&x, &y).unwrap().to_bits(), pearson(&y, &x).unwrap().to_bits());
    }
}

#[test]
fn snapshot_invariants_on_random_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.gen_range(2..12);
        let w = rng.gen_range(2..30);
        let delta = rng.gen_range(0.0..1.0);
        let snap = build_snapshot(&window(random_matrix(&mut rng, w, n)), delta).unwrap();
        let a = &snap.adjacency;
        for i in 0..n {
            assert_eq!(a.at(i, i), 0.0);
            for j in 0..n {
                assert_eq!(a.at(i, j), a.at(j, i));
                let v = a.at(i, j);
                assert!(v == 0.0 || v.abs() >= delta);
            }
        }
        let sets = neighbor_sets(&snap);
        for i in 0..n {
            assert!(!sets[i].contains(&i));
            for &j in &sets[i] {
                assert!(sets[j].contains(&i));
            }
        }
    }
}

#[test]
fn zero_variance_node_is_disconnected() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut seg = random_matrix(&mut rng, 10, 4);
    for s in 0..10 {
        seg.set(s, 2, 0.7);
    }
    let snap = build_snapshot(&window(seg), 0.0).unwrap();
    assert!(neighbor_sets(&snap)[2].is_empty());
}

proptest! {
    #[test]
    fn pearson_is_bounded(xs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..40)) {
        let (x, y): (Vec<f64>, Vec<f64>) = xs.into_iter().unzip();
        let r = pearson(&x, &y).unwrap();
        prop_assert!(r.abs() <= 1.0);
    }

    #[test]
    fn raising_threshold_never_adds_edges(seed in 0u64..1000, lo in 0.0f64..0.99, gap in 0.0f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let win = window(random_matrix(&mut rng, 12, 6));
        let hi = (lo + gap).min(0.999);
        let a_lo = build_snapshot(&win, lo).unwrap().adjacency;
        let a_hi = build_snapshot(&win, hi).unwrap().adjacency;
        for (l, h) in a_lo.data().iter().zip(a_hi.data()) {
            prop_assert!(*h == 0.0 || *l != 0.0);
        }
    }
}

// ---- temporal encoder ----

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[test]
fn lstm_step_matches_scalar_unroll() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let f = 3;
    let p = LstmParams::register(&mut store, "lstm", f, 0.3, &mut rng).unwrap();
    for id in p.bias {
        *store.get_mut(id) = random_matrix(&mut rng, 1, f);
    }
    let x = 0.42;
    let h_prev = [0.1, -0.3, 0.5];
    let c_prev = [-0.2, 0.4, 0.05];

    // per-unit loops over the stored weights
    let pre = |gate: usize, k: usize| {
        let w = store.get(p.input_weight[gate]).at(0, k);
        let b = store.get(p.bias[gate]).at(0, k);
        let u = store.get(p.recurrent_weight[gate]);
        let rec: f64 = (0..f).map(|j| h_prev[j] * u.at(j, k)).sum();
        x * w + rec + b
    };
    let mut expect_h = [0.0; 3];
    let mut expect_c = [0.0; 3];
    for k in 0..f {
        let (i, fg, o, g) = (sigmoid(pre(0, k)), sigmoid(pre(1, k)), sigmoid(pre(2, k)), pre(3, k).tanh());
        expect_c[k] = fg * c_prev[k] + i * g;
        expect_h[k] = o * expect_c[k].tanh();
    }

    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let weights = p.bind(&mut tape, &bound).unwrap();
    let xv = tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap());
    let hv = tape.constant(Tensor::matrix(1, 3, h_prev.to_vec()).unwrap());
    let cv = tape.constant(Tensor::matrix(1, 3, c_prev.to_vec()).unwrap());
    let (h, c) = lstm_step(&mut tape, &weights, xv, hv, cv).unwrap();
    for k in 0..f {
        assert!((tape.value(h).at(0, k) - expect_h[k]).abs() < 1e-14);
        assert!((tape.value(c).at(0, k) - expect_c[k]).abs() < 1e-14);
    }
}

#[test]
fn lstm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "lstm", 3, 0.0, &mut rng).unwrap();
    for id in p.bias {
        *store.get_mut(id) = random_matrix(&mut rng, 1, 3);
    }
    let seg = random_matrix(&mut rng, 6, 2);
    let report = finite_diff_check(
        |tape, bound| {
            let w = p.bind(tape, bound)?;
            let h = encode_window(tape, &w, &seg)?;
            Ok(tape.sum_all(h))
        },
        &store,
        1e-5,
    )
    .unwrap();
    assert!(report.max_rel_error <= 1e-5, "{report:?}");
}

fn encode(store: &ParamStore, p: &LstmParams, seg: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let w = p.bind(&mut tape, &bound).unwrap();
    let h = encode_window(&mut tape, &w, seg).unwrap();
    tape.value(h).clone()
}

#[test]
fn lstm_shares_weights_across_nodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "lstm", 4, 1.0, &mut rng).unwrap();
    let mut seg = random_matrix(&mut rng, 7, 3);
    for s in 0..7 {
        let v = seg.at(s, 0);
        seg.set(s, 2, v);
    }
    let h = encode(&store, &p, &seg);
    assert_eq!(h.row(0), h.row(2));
    assert_eq!(h, encode(&store, &p, &seg));
}

#[test]
fn lstm_is_node_order_equivariant_for_every_permutation_of_4() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let p = LstmParams::register(&mut store, "lstm", 3, 1.0, &mut rng).unwrap();
    let seg = random_matrix(&mut rng, 5, 4);
    let base = encode(&store, &p, &seg);
    let mut perms = Vec::new();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                for d in 0..4 {
                    let perm = [a, b, c, d];
                    let mut sorted = perm;
                    sorted.sort();
                    if sorted == [0, 1, 2, 3] {
                        perms.push(perm);
                    }
                }
            }
        }
    }
    assert_eq!(perms.len(), 24);
    for perm in perms {
        let permuted = permute_rows(&seg.transpose(), &perm).transpose();
        assert_eq!(encode(&store, &p, &permuted), permute_rows(&base, &perm));
    }
}

proptest! {
    #[test]
    fn hidden_state_is_bounded(seed in 0u64..500, scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = LstmParams::register(&mut store, "lstm", 4, 1.0, &mut rng).unwrap();
        let seg = random_matrix(&mut rng, 12, 3).map(|v| v * scale);
        let h = encode(&store, &p, &seg);
        prop_assert!(h.data().iter().all(|v| v.abs() <= 1.0 + 1e-12));
    }
}

// ---- spatial encoder ----

fn sage_once(weight: Tensor, h: &Tensor, a: &Tensor, activation: Activation) -> Tensor {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (rows, cols) = weight.dims();
    let p = SageLayerParams::register(&mut store, "w", 0, rows / 2, cols, &mut rng).unwrap();
    *store.get_mut(p.weight) = weight;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let hv = tape.constant(h.clone());
    let m = tape.constant(mean_aggregator(a));
    let out = sage_layer(&mut tape, &bound, &p, hv, m, activation).unwrap();
    tape.value(out).clone()
}

fn stacked_identity(d: usize, own: bool, neigh: bool) -> Tensor {
    let mut w = Tensor::zeros(&[2 * d, d]);
    for k in 0..d {
        if own {
            w.set(k, k, 1.0);
        }
        if neigh {
            w.set(d + k, k, 1.0);
        }
    }
    w
}

#[test]
fn edgeless_graph_sees_only_itself() {
    let h = Tensor::from_rows(&[vec![1.0, -2.0], vec![-0.5, 3.0], vec![0.0, 0.25]]).unwrap();
    let out = sage_once(stacked_identity(2, true, true), &h, &Tensor::zeros(&[3, 3]), Activation::Relu);
    assert_eq!(out, h.map(|v| v.max(0.0)));
}

#[test]
fn single_neighbor_mean() {
    let h = Tensor::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
    let a = Tensor::from_rows(&[vec![0.0, 0.9], vec![0.9, 0.0]]).unwrap();
    let out = sage_once(stacked_identity(2, false, true), &h, &a, Activation::Relu);
    assert_eq!(out.row(0), &[3.0, 5.0]);
    assert_eq!(out.row(1), &[1.0, 3.0]);
}

#[test]
fn two_layers_on_a_path_match_per_node_unrolling() {
    // path 0-1-2-3, signed weights do not matter for the mean
    let mut a = Tensor::zeros(&[4, 4]);
    for (i, j, v) in [(0, 1, 0.8), (1, 2, -0.6), (2, 3, 0.7)] {
        a.set(i, j, v);
        a.set(j, i, v);
    }
    let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0], vec![3.0, -2.0]]).unwrap();
    let w1 = Tensor::from_rows(&[
        vec![1.0, 0.5],
        vec![-0.5, 1.0],
        vec![0.25, 0.0],
        vec![0.0, 0.75],
    ])
    .unwrap();
    let w2 = Tensor::from_rows(&[
        vec![0.5, -1.0],
        vec![1.0, 0.25],
        vec![-0.25, 0.5],
        vec![0.75, 1.0],
    ])
    .unwrap();

    let neighbors: [&[usize]; 4] = [&[1], &[0, 2], &[1, 3], &[2]];
    let layer = |h: &Vec<[f64; 2]>, w: &Tensor| -> Vec<[f64; 2]> {
        (0..4)
            .map(|v| {
                let nb = neighbors[v];
                let mut mean = [0.0; 2];
                for &u in nb {
                    mean[0] += h[u][0] / nb.len() as f64;
                    mean[1] += h[u][1] / nb.len() as f64;
                }
                let input = [h[v][0], h[v][1], mean[0], mean[1]];
                let mut out = [0.0; 2];
                for k in 0..2 {
                    out[k] = (0..4).map(|r| input[r] * w.at(r, k)).sum::<f64>().max(0.0);
                }
                out
            })
            .collect()
    };
    let h_rows: Vec<[f64; 2]> = (0..4).map(|v| [h.at(v, 0), h.at(v, 1)]).collect();
    let expect = layer(&layer(&h_rows, &w1), &w2);

    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let l1 = SageLayerParams::register(&mut store, "s0", 0, 2, 2, &mut rng).unwrap();
    let l2 = SageLayerParams::register(&mut store, "s1", 1, 2, 2, &mut rng).unwrap();
    *store.get_mut(l1.weight) = w1;
    *store.get_mut(l2.weight) = w2;
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let hv = tape.constant(h);
    let m = tape.constant(mean_aggregator(&a));
    let out = encode_spatial(&mut tape, &bound, &[l1, l2], hv, m).unwrap();
    for v in 0..4 {
        for k in 0..2 {
            assert!((tape.value(out).at(v, k) - expect[v][k]).abs() < 1e-14);
        }
    }
}

#[test]
fn zero_last_layer_gives_zero_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let l1 = SageLayerParams::register(&mut store, "s0", 0, 3, 4, &mut rng).unwrap();
    let l2 = SageLayerParams::register(&mut store, "s1", 1, 4, 4, &mut rng).unwrap();
    *store.get_mut(l2.weight) = Tensor::zeros(&[8, 4]);
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let hv = tape.constant(random_matrix(&mut rng, 5, 3));
    let m = tape.constant(mean_aggregator(&random_adjacency(&mut rng, 5)));
    let out = encode_spatial(&mut tape, &bound, &[l1, l2], hv, m).unwrap();
    assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
}

#[test]
fn chain_mismatch_is_config_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let l1 = SageLayerParams::register(&mut store, "s0", 0, 3, 4, &mut rng).unwrap();
    let l2 = SageLayerParams::register(&mut store, "s1", 1, 5, 4, &mut rng).unwrap();
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let hv = tape.constant(Tensor::zeros(&[2, 3]));
    let m = tape.constant(Tensor::zeros(&[2, 2]));
    let err = encode_spatial(&mut tape, &bound, &[l1, l2], hv, m).unwrap_err();
    assert!(matches!(err, lgf_core::Error::Config(_)));
}

#[test]
fn sage_is_permutation_equivariant_on_20_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let n = rng.gen_range(2..=8);
        let h = random_matrix(&mut rng, n, 3);
        let a = random_adjacency(&mut rng, n);
        let w = random_matrix(&mut rng, 6, 4);
        let mut perm: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        perm.shuffle(&mut rng);
        let base = sage_once(w.clone(), &h, &a, Activation::Relu);
        let moved = sage_once(w, &permute_rows(&h, &perm), &permute_sym(&a, &perm), Activation::Relu);
        let expect = permute_rows(&base, &perm);
        for (x, y) in moved.data().iter().zip(expect.data()) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn one_layer_is_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = 6;
        let h = random_matrix(&mut rng, n, 2);
        let a = random_adjacency(&mut rng, n);
        let w = random_matrix(&mut rng, 4, 3);
        let base = sage_once(w.clone(), &h, &a, Activation::Identity);
        for u in 0..n {
            let mut h2 = h.clone();
            h2.set(u, 0, h.at(u, 0) + 1.0);
            let out = sage_once(w.clone(), &h2, &a, Activation::Identity);
            for v in 0..n {
                let changed = out.row(v) != base.row(v);
                let reachable = u == v || a.at(v, u) != 0.0;
                assert!(!changed || reachable, "node {u} leaked into {v}");
            }
        }
    }
}
