use std::collections::BTreeSet;

use musegnn_autodiff::{gradcheck, Tape};
use musegnn_core::data::{DatasetMeta, Modality};
use musegnn_core::model::*;
use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn slot(id: &str, modality: Modality, input_dim: usize) -> DatasetSlot {
    DatasetSlot {
        meta: DatasetMeta {
            dataset_id: id.into(),
            tissue: "t".into(),
            modality,
            species: "s".into(),
        },
        input_dim,
    }
}

fn small_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 6,
        embed_dim: 4,
        heads: 2,
        decoder_hidden: 3,
        ..ModelConfig::default()
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(-1.0..1.0))
}

fn random_edges(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Vec<(usize, usize)> {
    let mut e = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if rng.random_bool(p) {
                e.push((a, b));
            }
        }
    }
    e
}

fn mish(x: f64) -> f64 {
    x * (1.0 + x.exp()).ln().tanh()
}

/// Scalar-loop version of one non-final attention layer.
fn layer_oracle(store: &ParamStore, prefix: &str, h: &Array2<f64>, edges: &[(usize, usize)], heads: usize) -> Array2<f64> {
    let p = |n: &str| store.get(&format!("{prefix}/{n}")).unwrap().clone();
    let n = h.nrows();
    let lin = |w: &Array2<f64>, b: &Array2<f64>| {
        let mut out = Array2::zeros((n, w.ncols()));
        for i in 0..n {
            for c in 0..w.ncols() {
                let mut s = b[[0, c]];
                for k in 0..w.nrows() {
                    s += h[[i, k]] * w[[k, c]];
                }
                out[[i, c]] = s;
            }
        }
        out
    };
    let (q, k, v) = (lin(&p("wq"), &p("bq")), lin(&p("wk"), &p("bk")), lin(&p("wv"), &p("bv")));
    let dout = q.ncols();
    let d = dout / heads;
    let mut nbrs: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for &(a, b) in edges {
        nbrs[a].insert(b);
        nbrs[b].insert(a);
    }
    let mut out = Array2::zeros((n, dout));
    for i in 0..n {
        for hd in 0..heads {
            let cols = hd * d..(hd + 1) * d;
            let score = |j: usize| cols.clone().map(|c| q[[i, c]] * k[[j, c]]).sum::<f64>() / (d as f64).sqrt();
            let z: f64 = nbrs[i].iter().map(|&j| score(j).exp()).sum();
            for &j in &nbrs[i] {
                let a = score(j).exp() / z;
                for c in cols.clone() {
                    out[[i, c]] += a * v[[j, c]];
                }
            }
        }
    }
    out += h;
    let (alpha, gamma, beta) = (p("norm_alpha"), p("norm_gamma"), p("norm_beta"));
    for c in 0..dout {
        let mean = (0..n).map(|i| out[[i, c]]).sum::<f64>() / n as f64;
        let centered: Vec<f64> = (0..n).map(|i| out[[i, c]] - alpha[[0, c]] * mean).collect();
        let var = centered.iter().map(|x| x * x).sum::<f64>() / n as f64;
        for i in 0..n {
            let y = gamma[[0, c]] * centered[i] / (var + GRAPHNORM_EPS).sqrt() + beta[[0, c]];
            out[[i, c]] = mish(y);
        }
    }
    out
}

fn layer_store(rng: &mut ChaCha8Rng, din: usize, heads: usize) -> ParamStore {
    let mut s = ParamStore::new();
    for m in ["q", "k", "v"] {
        s.insert(format!("l/w{m}"), random_matrix(rng, din, din));
        s.insert(format!("l/b{m}"), random_matrix(rng, 1, din));
    }
    s.insert("l/norm_alpha", random_matrix(rng, 1, din) + 1.0);
    s.insert("l/norm_gamma", random_matrix(rng, 1, din) + 1.0);
    s.insert("l/norm_beta", random_matrix(rng, 1, din));
    assert_eq!(din % heads, 0);
    s
}

#[test]
fn attention_layer_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, din, heads) = (9, 6, 3);
    let store = layer_store(&mut rng, din, heads);
    // Node 8 is isolated and only attends to itself.
    let edges: Vec<(usize, usize)> = random_edges(&mut rng, 8, 0.4);
    let h = random_matrix(&mut rng, n, din);
    let graph = GraphInput::new(Array2::zeros((n, 1)), &edges).unwrap();
    let mut tape = Tape::new();
    let mut binder = Binder::new(&store);
    let hv = tape.constant(h.clone()).unwrap();
    let trace = transformer_conv(&mut tape, &mut binder, "l", hv, &graph, heads, false).unwrap();
    let got = tape.value(trace.output);
    let want = layer_oracle(&store, "l", &h, &edges, heads);
    for (a, b) in got.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
    let att = tape.value(trace.attention);
    for i in 0..n {
        for hd in 0..heads {
            let s: f64 = (0..graph.n_messages()).filter(|&m| graph.dst[m] == i).map(|m| att[[m, hd]]).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
    let self_msg = (0..graph.n_messages()).find(|&m| graph.dst[m] == 8).unwrap();
    assert_eq!(graph.src[self_msg], 8);
    for hd in 0..heads {
        assert_eq!(att[[self_msg, hd]], 1.0);
    }
}

#[test]
fn encoder_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20;
    let model = Model::init(vec![slot("a", Modality::ScRna, 7)], ModelConfig::default(), 3).unwrap();
    let x = random_matrix(&mut rng, n, 7);
    let edges = random_edges(&mut rng, n, 0.2);
    let base = model.embed(0, &GraphInput::new(x.clone(), &edges).unwrap()).unwrap();
    assert_eq!(base.dim(), (n, 32));

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    // Node i of the permuted graph is node perm[i] of the original.
    let mut inv = vec![0; n];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    let xp = Array2::from_shape_fn((n, 7), |(i, c)| x[[perm[i], c]]);
    let ep: Vec<(usize, usize)> = edges.iter().map(|&(a, b)| (inv[a], inv[b])).collect();
    let permuted = model.embed(0, &GraphInput::new(xp, &ep).unwrap()).unwrap();
    for i in 0..n {
        for c in 0..32 {
            assert!((permuted[[i, c]] - base[[perm[i], c]]).abs() < 1e-10);
        }
    }
}

#[test]
fn decoder_is_symmetric_and_constant_on_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let model = Model::init(vec![slot("a", Modality::ScRna, 3)], ModelConfig::default(), 5).unwrap();
    let mut tape = Tape::new();
    let mut binder = Binder::new(&model.params);
    let e = tape.constant(random_matrix(&mut rng, 15, 32)).unwrap();
    let r = model.decode(&mut tape, &mut binder, 0, e).unwrap();
    let r = tape.value(r);
    assert_eq!(r, &r.t().to_owned());
    assert!(r.iter().all(|&v| v > 0.0 && v < 1.0));

    let z = tape.constant(Array2::zeros((6, 32))).unwrap();
    let r = model.decode(&mut tape, &mut binder, 0, z).unwrap();
    let r = tape.value(r);
    assert!(r.iter().all(|&v| v == r[[0, 0]]));
}

fn gradcheck_model(model: &Model, graph: &GraphInput, with_decoder: bool) -> f64 {
    let names: Vec<String> = model.params.names().map(String::from).collect();
    let inputs: Vec<Array2<f64>> = names.iter().map(|n| model.params.get(n).unwrap().clone()).collect();
    gradcheck(
        |tape, vars| {
            let mut binder = Binder::new(&model.params);
            for (n, &v) in names.iter().zip(vars) {
                binder.insert(n.clone(), v);
            }
            let e = model.encode(tape, &mut binder, 0, graph).map_err(|e| match e {
                musegnn_core::CoreError::Autodiff(a) => a,
                other => panic!("{other}"),
            })?;
            let out = if with_decoder {
                model.decode(tape, &mut binder, 0, e).unwrap()
            } else {
                e
            };
            // A fixed random projection makes every output coordinate matter.
            let (r, c) = tape.shape(out);
            let w = tape.constant(Array2::from_shape_fn((r, c), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0))?;
            let prod = tape.mul(out, w)?;
            tape.sum(prod)
        },
        &inputs,
        1e-6,
    )
    .unwrap()
}

#[test]
fn encoder_and_decoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let model = Model::init(vec![slot("a", Modality::ScRna, 5)], small_config(), 7).unwrap();
    let graph = GraphInput::new(random_matrix(&mut rng, 10, 5), &random_edges(&mut rng, 10, 0.3)).unwrap();
    let enc = gradcheck_model(&model, &graph, false);
    assert!(enc < 1e-5, "encoder {enc}");
    let dec = gradcheck_model(&model, &graph, true);
    assert!(dec < 1e-5, "decoder {dec}");
}

#[test]
fn edge_features_enter_keys_and_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = ModelConfig {
        edge_dim: 2,
        ..small_config()
    };
    let mut model = Model::init(vec![slot("a", Modality::ScRna, 5)], cfg, 9).unwrap();
    // Nonzero edge biases so that edge features are not a no-op at init.
    for name in model.params.names().map(String::from).collect::<Vec<_>>() {
        if name.ends_with("/be") {
            model.params.get_mut(&name).unwrap().fill(0.3);
        }
    }
    let plain = GraphInput::new(random_matrix(&mut rng, 8, 5), &random_edges(&mut rng, 8, 0.4)).unwrap();
    let ef = random_matrix(&mut rng, plain.n_messages(), 2);
    let with = plain.clone().with_edge_features(ef).unwrap();
    let zero = plain.clone().with_edge_features(Array2::zeros((plain.n_messages(), 2))).unwrap();
    let (a, b, c) = (model.embed(0, &plain).unwrap(), model.embed(0, &with).unwrap(), model.embed(0, &zero).unwrap());
    assert_ne!(a, b);
    assert_ne!(b, c);
    assert!(gradcheck_model(&model, &with, false) < 1e-5);
    assert!(plain.clone().with_edge_features(Array2::zeros((1, 2))).is_err());
}

#[test]
fn init_is_deterministic_with_kaiming_variance() {
    let slots = vec![slot("a", Modality::ScRna, 200), slot("b", Modality::Spatial, 30)];
    let m1 = Model::init(slots.clone(), ModelConfig::default(), 11).unwrap();
    let m2 = Model::init(slots.clone(), ModelConfig::default(), 11).unwrap();
    let m3 = Model::init(slots, ModelConfig::default(), 12).unwrap();
    assert_eq!(m1, m2);
    assert!(m1.params.iter().zip(m2.params.iter()).all(|(a, b)| a.1.iter().zip(b.1.iter()).all(|(x, y)| x.to_bits() == y.to_bits())));
    assert_ne!(m1, m3);
    for (name, v) in m1.params.iter() {
        let last = name.rsplit('/').next().unwrap();
        if last.starts_with('b') || last == "norm_beta" {
            assert!(v.iter().all(|&x| x == 0.0), "{name}");
        } else if last.starts_with("norm") {
            assert!(v.iter().all(|&x| x == 1.0), "{name}");
        } else {
            assert!(v.iter().all(|&x| x != 0.0), "{name}");
        }
    }
    let w = m1.params.get("input/a/w").unwrap();
    assert!(w.len() >= 10_000);
    let flat = Array1::from_iter(w.iter().copied());
    let var = flat.mapv(|x| x * x).mean().unwrap();
    let expect = 2.0 / 200.0;
    assert!((var / expect - 1.0).abs() < 0.2, "{var} vs {expect}");
}

#[test]
fn same_modality_datasets_share_layers() {
    let slots = vec![
        slot("a", Modality::ScRna, 4),
        slot("b", Modality::ScRna, 6),
        slot("c", Modality::Spatial, 5),
    ];
    let shared = Model::init(slots.clone(), ModelConfig::default(), 1).unwrap();
    let names = |m: &Model, i: usize| -> BTreeSet<String> {
        m.encoder_param_names(i).into_iter().filter(|n| n.starts_with("shared/")).collect()
    };
    assert_eq!(shared.shared_key(&slots[0]), shared.shared_key(&slots[1]));
    assert_eq!(names(&shared, 0), names(&shared, 1));
    assert!(names(&shared, 0).is_disjoint(&names(&shared, 2)));
    for n in names(&shared, 0) {
        assert!(std::ptr::eq(shared.params.get(&n).unwrap(), shared.params.get(&n).unwrap()));
    }

    let unshared = Model::init(slots.clone(), ModelConfig { weight_sharing: false, ..ModelConfig::default() }, 1).unwrap();
    assert!(names(&unshared, 0).is_disjoint(&names(&unshared, 1)));
    assert!(unshared.params.n_scalars() > shared.params.n_scalars());

    // Perturbing the shared stack through dataset a changes dataset b's forward pass.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ga = GraphInput::new(random_matrix(&mut rng, 7, 4), &[(0, 1), (2, 3)]).unwrap();
    let gb = GraphInput::new(random_matrix(&mut rng, 7, 6), &[(1, 4)]).unwrap();
    for model in [shared, unshared] {
        let before = model.embed(1, &gb).unwrap();
        let mut tweaked = model.clone();
        for n in names(&model, 0) {
            tweaked.params.get_mut(&n).unwrap().mapv_inplace(|x| x + 0.05);
        }
        assert_ne!(model.embed(0, &ga).unwrap(), tweaked.embed(0, &ga).unwrap());
        let after = tweaked.embed(1, &gb).unwrap();
        assert_eq!(before != after, model.config.weight_sharing);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let model = Model::init(vec![slot("a", Modality::ScRna, 4), slot("b", Modality::Spatial, 3)], small_config(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    model.save(&path).unwrap();
    let back = Model::load(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_bytes(), model.to_bytes());

    let bytes = model.to_bytes();
    assert!(Model::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut extra = bytes.clone();
    extra.extend_from_slice(&1.0f64.to_le_bytes());
    assert!(Model::from_bytes(&extra).is_err());
    assert!(Model::from_bytes(b"garbage").is_err());
}

#[test]
fn invalid_configs_and_inputs_are_rejected() {
    let bad = ModelConfig { heads: 5, ..ModelConfig::default() };
    assert!(Model::init(vec![slot("a", Modality::ScRna, 4)], bad, 0).is_err());
    assert!(Model::init(vec![slot("a", Modality::ScRna, 4), slot("a", Modality::ScRna, 4)], ModelConfig::default(), 0).is_err());
    let model = Model::init(vec![slot("a", Modality::ScRna, 4)], ModelConfig::default(), 0).unwrap();
    let g = GraphInput::new(Array2::zeros((3, 5)), &[]).unwrap();
    assert!(model.embed(0, &g).is_err());
    assert!(model.slot_index("zzz").is_err());
    assert!(GraphInput::new(Array2::zeros((3, 5)), &[(0, 3)]).is_err());
}
