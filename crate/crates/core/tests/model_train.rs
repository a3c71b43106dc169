use lgf_core::autodiff::{finite_diff_check, Tape, Tensor};
use lgf_core::checkpoint::{decode, encode, load_checkpoint, save_checkpoint};
use lgf_core::data::{make_windows, normalize, synth_generate, SynthConfig, WindowOrigin, WindowedSample};
use lgf_core::graph::{build_snapshot, pearson};
use lgf_core::model::{forward_sample, predict, window_adjacency};
use lgf_core::train::{sample_gradient, sample_loss, train, train_model};
use lgf_core::{Ablation, Error, ModelParameters, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Mat = Vec<Vec<f64>>;

fn tiny(ablation: Ablation) -> TrainConfig {
    TrainConfig {
        window_length: 8,
        lstm_hidden: 4,
        sage_dim: 4,
        gf_dim: 4,
        head_hidden: 6,
        supernodes: 2,
        corr_threshold: 0.3,
        batch: 4,
        ablation,
        seed: 5,
        ..TrainConfig::desk(0)
    }
}

fn random_window(rng: &mut impl Rng, w: usize, n: usize, label: usize) -> WindowedSample {
    let data = (0..w * n).map(|_| rng.gen_range(-1.5..1.5)).collect();
    WindowedSample {
        segment: Tensor::matrix(w, n, data).unwrap(),
        label,
        origin: WindowOrigin { run: 0, end: w - 1 },
    }
}

fn synth_windows(classes: usize, runs: usize, run_length: usize, w: usize, stride: usize) -> Vec<WindowedSample> {
    let ds = synth_generate(&SynthConfig {
        classes,
        variables: 6,
        runs_per_class: runs,
        run_length,
        window_length: w,
        ..SynthConfig::default()
    })
    .unwrap();
    let (ds, _) = normalize(&ds, None).unwrap();
    make_windows(&ds, w, stride).unwrap()
}

// ---- standalone forward pass over plain nested vectors ----

fn get(params: &ModelParameters, name: &str) -> Mat {
    let t = params.store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"));
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            for p in 0..k {
                out[i][j] += a[i][p] * b[p][j];
            }
        }
    }
    out
}

fn tr(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn oracle_lstm(params: &ModelParameters, seg: &Tensor) -> Mat {
    let f = params.config.lstm_hidden;
    let (w, n) = seg.dims();
    let gate = |g: &str| (get(params, &format!("lstm.w_{g}")), get(params, &format!("lstm.u_{g}")), get(params, &format!("lstm.b_{g}")));
    let gates = [gate("i"), gate("f"), gate("o"), gate("g")];
    let mut out = Vec::new();
    for node in 0..n {
        let (mut h, mut c) = (vec![0.0; f], vec![0.0; f]);
        for s in 0..w {
            let x = seg.at(s, node);
            let pre: Vec<Vec<f64>> = gates
                .iter()
                .map(|(wg, ug, bg)| (0..f).map(|k| x * wg[0][k] + (0..f).map(|j| h[j] * ug[j][k]).sum::<f64>() + bg[0][k]).collect())
                .collect();
            for k in 0..f {
                c[k] = sig(pre[1][k]) * c[k] + sig(pre[0][k]) * pre[3][k].tanh();
            }
            h = (0..f).map(|k| sig(pre[2][k]) * c[k].tanh()).collect();
        }
        out.push(h);
    }
    out
}

fn oracle_sage(h: &Mat, a: &Mat, w: &Mat, relu: bool) -> Mat {
    let n = h.len();
    let d = h[0].len();
    (0..n)
        .map(|v| {
            let nb: Vec<usize> = (0..n).filter(|&u| u != v && a[v][u] != 0.0).collect();
            let mut input = h[v].clone();
            for k in 0..d {
                let s: f64 = nb.iter().map(|&u| h[u][k]).sum();
                input.push(if nb.is_empty() { 0.0 } else { s / nb.len() as f64 });
            }
            (0..w[0].len())
                .map(|o| {
                    let z: f64 = input.iter().zip(w).map(|(x, row)| x * row[o]).sum();
                    if relu { z.max(0.0) } else { z }
                })
                .collect()
        })
        .collect()
}

fn oracle_mlp(params: &ModelParameters, prefix: &str, x: &Mat, layers: usize) -> Mat {
    let mut cur = x.clone();
    for l in 0..layers {
        let w = get(params, &format!("{prefix}.{l}.weight"));
        let b = get(params, &format!("{prefix}.{l}.bias"));
        cur = mm(&cur, &w);
        for row in cur.iter_mut() {
            for (v, bb) in row.iter_mut().zip(&b[0]) {
                *v += bb;
                if l + 1 < layers {
                    *v = v.max(0.0);
                }
            }
        }
    }
    cur
}

/// Independent evaluation of the full variant's logits.
fn oracle_logits(params: &ModelParameters, win: &WindowedSample) -> Vec<f64> {
    let n = win.num_vars();
    let delta = params.config.corr_threshold;
    let cols: Mat = (0..n).map(|j| win.variable(j)).collect();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let r = pearson(&cols[i], &cols[j]).unwrap();
                a[i][j] = if r.abs() >= delta { r } else { 0.0 };
            }
        }
    }
    let mut h = oracle_lstm(params, &win.segment);
    for g in 0..params.config.sage_layers {
        h = oracle_sage(&h, &a, &get(params, &format!("sage.{g}.weight")), true);
    }
    let h0 = h.clone();
    let logits = oracle_sage(&h0, &a, &get(params, "pool.0.assign.weight"), false);
    let s: Mat = logits
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            e.iter().map(|v| v / z).collect()
        })
        .collect();
    let hp = mm(&tr(&s), &h0);
    let ap = mm(&mm(&tr(&s), &a), &s);
    let hl = oracle_sage(&hp, &ap, &get(params, "pool.0.embed.weight"), true);
    let gf = oracle_mlp(params, "gf", &h0, 2);
    let fused: Vec<f64> = hl.iter().flatten().chain(gf.iter().flatten()).copied().collect();
    oracle_mlp(params, "head", &vec![fused], 2).remove(0)
}

#[test]
fn full_forward_matches_standalone_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParameters::init(&tiny(Ablation::Full), 6, 3).unwrap();
    for _ in 0..5 {
        let win = random_window(&mut rng, 8, 6, 1);
        let got = predict(&params, &win).unwrap().logits;
        let expect = oracle_logits(&params, &win);
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() <= 1e-12, "{got:?} vs {expect:?}");
        }
    }
}

#[test]
fn default_config_on_52_variables_gives_20_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = ModelParameters::init(&TrainConfig::with_epochs(1), 52, 20).unwrap();
    let win = random_window(&mut rng, 100, 52, 3);
    let p = predict(&params, &win).unwrap();
    assert_eq!(p.logits.len(), 20);
    assert_eq!(p.assignments[0].dims(), (52, 8));
}

#[test]
fn no_gf_head_sees_pooled_features_only() {
    let params = ModelParameters::init(&tiny(Ablation::NoGf), 6, 3).unwrap();
    assert_eq!(params.fused_width(), 2 * 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let win = random_window(&mut rng, 8, 6, 1);
    let mut tape = Tape::new();
    let bound = params.store.bind(&mut tape);
    let out = forward_sample(&mut tape, &bound, &params, &win).unwrap();
    assert_eq!(tape.value(out.fused).dims(), (1, 8));
}

#[test]
fn every_variant_passes_a_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let win = random_window(&mut rng, 8, 6, 2);
    for ablation in Ablation::ALL {
        let mut params = ModelParameters::init(&tiny(ablation), 6, 2).unwrap();
        params.randomize_biases(0.5, 1);
        let adjacency = window_adjacency(&params, &win).unwrap();
        let report = finite_diff_check(
            |tape, bound| Ok(sample_loss(tape, bound, &params, &win, &adjacency)?.total),
            &params.store,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{ablation}: {:?}", report.worst());
    }
}

#[test]
fn zero_epochs_return_the_initialization() {
    let windows = synth_windows(2, 1, 40, 8, 8);
    let config = TrainConfig { window_length: 8, ..tiny(Ablation::Full) };
    let (trained, history) = train(&config, &windows).unwrap();
    let fresh = ModelParameters::init(&config, 6, 2).unwrap();
    assert!(history.epochs.is_empty());
    assert_eq!(encode(&trained).unwrap(), encode(&fresh).unwrap());
}

#[test]
fn overfits_eight_separable_windows() {
    let mut windows = synth_windows(2, 1, 64, 16, 16);
    assert_eq!(windows.len(), 8);
    windows.truncate(8);
    let config = TrainConfig {
        window_length: 16,
        epochs: 200,
        lr: 0.01,
        ..tiny(Ablation::Full)
    };
    let (_, history) = train(&config, &windows).unwrap();
    assert_eq!(history.epochs.last().unwrap().train_accuracy, 1.0);
}

#[test]
fn training_is_deterministic_and_thread_count_independent() {
    let windows = synth_windows(3, 1, 40, 8, 4);
    let config = TrainConfig { epochs: 3, ..tiny(Ablation::Full) };
    let (p1, h1) = train(&config, &windows).unwrap();
    let (p2, h2) = train(&config, &windows).unwrap();
    assert!(h1.same_trajectory(&h2));
    assert_eq!(encode(&p1).unwrap(), encode(&p2).unwrap());

    let threaded = TrainConfig { threads: 3, ..config.clone() };
    let (p3, h3) = train(&threaded, &windows).unwrap();
    assert!(h1.same_trajectory(&h3));
    let mut p3 = p3;
    p3.config.threads = 1;
    assert_eq!(encode(&p1).unwrap(), encode(&p3).unwrap());
}

#[test]
fn one_adam_step_per_batch_and_loss_composition() {
    let windows = synth_windows(2, 1, 40, 8, 3);
    let n = windows.len();
    let config = TrainConfig { epochs: 4, batch: 5, ..tiny(Ablation::Full) };
    let (_, history) = train(&config, &windows).unwrap();
    assert_eq!(history.adam_steps, (4 * n.div_ceil(5)) as u64);
    for r in &history.epochs {
        assert!((r.total_loss - (r.ce_loss + config.alpha_pool * r.pool_loss)).abs() <= 1e-12);
    }
}

#[test]
fn pooling_loss_reaches_the_assignment_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let params = ModelParameters::init(&tiny(Ablation::Full), 6, 2).unwrap();
    let win = random_window(&mut rng, 8, 6, 1);
    let adjacency = window_adjacency(&params, &win).unwrap();
    let g = sample_gradient(&params, &win, &adjacency).unwrap();
    let assign = g.grads.get("pool.0.assign.weight").unwrap();
    assert!(assign.data().iter().any(|v| *v != 0.0));
}

#[test]
fn training_errors() {
    let config = tiny(Ablation::Full);
    assert!(matches!(train(&config, &[]), Err(Error::EmptyInput(_))));
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let only_two = vec![random_window(&mut rng, 8, 6, 2)];
    assert!(matches!(train(&config, &only_two), Err(Error::EmptyInput(_))));
    let mut params = ModelParameters::init(&config, 6, 2).unwrap();
    assert!(matches!(train_model(&mut params, &[]), Err(Error::EmptyInput(_))));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let windows = synth_windows(2, 1, 40, 8, 4);
    let config = TrainConfig { epochs: 2, ..tiny(Ablation::Full) };
    let (mut params, _) = train(&config, &windows).unwrap();
    params.norm = Some(lgf_core::data::NormStats {
        mean: vec![0.1, 1.0 / 3.0, 2.5e-17, 0.0, -4.2, 7.0],
        std: vec![1.0; 6],
    });
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.lgfm");
    let b = dir.path().join("b.lgfm");
    save_checkpoint(&params, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(loaded.norm, params.norm);
    assert_eq!(loaded.config, params.config);
    for win in windows.iter().take(10) {
        assert_eq!(predict(&params, win).unwrap(), predict(&loaded, win).unwrap());
    }
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let params = ModelParameters::init(&tiny(Ablation::Full), 6, 2).unwrap();
    let bytes = encode(&params).unwrap();
    for cut in [bytes.len() - 1, bytes.len() - 8, 20, 8] {
        assert!(matches!(decode(&bytes[..cut]), Err(Error::Integrity(_))), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode(&bad), Err(Error::Format(_))));
    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(decode(&bad), Err(Error::Format(_))));

    // manifest claiming a different shape for the first parameter
    let len = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
    let json = String::from_utf8(bytes[13..13 + len].to_vec()).unwrap();
    let edited = json.replacen("\"shape\":[1,4]", "\"shape\":[4,1]", 1);
    assert_ne!(edited, json);
    let mut out = bytes[..5].to_vec();
    out.extend_from_slice(&(edited.len() as u64).to_le_bytes());
    out.extend_from_slice(edited.as_bytes());
    out.extend_from_slice(&bytes[13 + len..]);
    assert!(matches!(decode(&out), Err(Error::Integrity(_))));
}

#[test]
fn snapshot_of_a_model_window_matches_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let params = ModelParameters::init(&tiny(Ablation::Full), 6, 2).unwrap();
    let win = random_window(&mut rng, 8, 6, 1);
    assert_eq!(window_adjacency(&params, &win).unwrap(), build_snapshot(&win, 0.3).unwrap().adjacency);
}
