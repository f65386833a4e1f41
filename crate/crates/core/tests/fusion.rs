use mmsurv_autodiff::{grad_check_coords, Graph, ParamId, ParamStore, Tensor};
use mmsurv_core::fusion::FusionRound;
use mmsurv_core::nn::{AttentionBlock, AttentionPool, MultiHeadAttention, Seq};
use mmsurv_core::{total_loss, Batch, ImagingSource, Modality, ModelConfig, SurvivalNet, TimeGrid};
use mmsurv_stats::EventRecord;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn identity_attention(store: &mut ParamStore, rng: &mut ChaCha8Rng, d: usize, heads: usize) -> MultiHeadAttention {
    let mha = MultiHeadAttention::new(store, rng, "mha", d, heads).unwrap();
    for lin in [&mha.query, &mha.key, &mha.value, &mha.output] {
        store.set(lin.weight, Tensor::identity(d));
    }
    store.set(mha.output.bias.unwrap(), Tensor::zeros(1, d));
    mha
}

fn attend(store: &ParamStore, mha: &MultiHeadAttention, alpha: &Tensor, beta: &[&Tensor]) -> Tensor {
    let mut g = Graph::new();
    let a = g.constant(alpha.clone());
    let sources: Vec<Seq> = beta.iter().map(|b| Seq::new(g.constant((*b).clone()), b.rows())).collect();
    let out = mha.forward(&mut g, store, Seq::new(a, alpha.rows()), &sources).unwrap();
    g.value(out).clone()
}

/// softmax(Q Kᵀ/√d) V for one head with identity projections.
fn attention_oracle(q: &Tensor, kv: &Tensor) -> Tensor {
    let d = q.cols();
    let mut out = vec![0.0; q.rows() * d];
    for i in 0..q.rows() {
        let scores: Vec<f64> = (0..kv.rows())
            .map(|j| (0..d).map(|c| q.get(i, c) * kv.get(j, c)).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = w.iter().sum();
        for j in 0..kv.rows() {
            for c in 0..d {
                out[i * d + c] += w[j] / z * kv.get(j, c);
            }
        }
    }
    Tensor::matrix(q.rows(), d, out).unwrap()
}

fn assert_close(a: &Tensor, b: &Tensor, tol: f64) {
    assert_eq!(a.shape(), b.shape());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < tol, "{x} vs {y}");
    }
}

#[test]
fn single_key_returns_its_value() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let mha = identity_attention(&mut store, &mut rng, 6, 1);
    let wv = random(&mut rng, 6, 6);
    store.set(mha.value.weight, wv.clone());
    let v = random(&mut rng, 1, 6);
    let out = attend(&store, &mha, &random(&mut rng, 3, 6), &[&v]);
    let vw = v.matmul(&wv).unwrap();
    for r in 0..3 {
        for c in 0..6 {
            assert!((out.get(r, c) - vw.get(0, c)).abs() < 1e-14);
        }
    }
}

#[test]
fn identical_keys_give_identical_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2).unwrap();
    let u = random(&mut rng, 1, 8);
    let beta = Tensor::from_rows(&vec![u.data().to_vec(); 4]).unwrap();
    let out = attend(&store, &mha, &random(&mut rng, 3, 8), &[&beta]);
    for r in 1..3 {
        assert_close(&Tensor::row(out.row_slice(r).to_vec()).unwrap(), &Tensor::row(out.row_slice(0).to_vec()).unwrap(), 1e-14);
    }
}

#[test]
fn cross_attention_matches_direct_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let mha = identity_attention(&mut store, &mut rng, 5, 1);
    let (alpha, beta) = (random(&mut rng, 2, 5), random(&mut rng, 3, 5));
    assert_close(&attend(&store, &mha, &alpha, &[&beta]), &attention_oracle(&alpha, &beta), 1e-12);
}

#[test]
fn final_attention_over_duplicated_keys() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let mha = identity_attention(&mut store, &mut rng, 5, 1);
    let c = random(&mut rng, 4, 5);
    let out = attend(&store, &mha, &c, &[&c, &c]);
    assert_eq!(out.rows(), 4);
    let doubled = Tensor::from_rows(&(0..8).map(|k| c.row_slice(k % 4).to_vec()).collect::<Vec<_>>()).unwrap();
    assert_close(&out, &attention_oracle(&c, &doubled), 1e-12);
    // duplicating every key leaves the softmax weights unchanged
    assert_close(&out, &attention_oracle(&c, &c), 1e-12);
}

#[test]
fn outputs_stay_in_the_value_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let mha = identity_attention(&mut store, &mut rng, 8, 2);
    for _ in 0..50 {
        let n = rng.random_range(1..=8);
        let (alpha, beta) = (random(&mut rng, 3, 8), random(&mut rng, n, 8));
        let out = attend(&store, &mha, &alpha, &[&beta]);
        for c in 0..8 {
            let col: Vec<f64> = (0..n).map(|j| beta.get(j, c)).collect();
            let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &x| (l.min(x), h.max(x)));
            for r in 0..3 {
                assert!(out.get(r, c) >= lo - 1e-12 && out.get(r, c) <= hi + 1e-12);
            }
        }
    }
}

#[test]
fn token_counts_are_preserved() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 4).unwrap();
    for nq in 1..=8 {
        for nk in 1..=8 {
            let out = attend(&store, &mha, &random(&mut rng, nq, 8), &[&random(&mut rng, nk, 8)]);
            assert_eq!(out.shape(), &[nq, 8]);
        }
    }
    let bad = MultiHeadAttention::new(&mut store, &mut rng, "other", 8, 4).unwrap();
    let mut g = Graph::new();
    let a = g.constant(random(&mut rng, 2, 8));
    let b = g.constant(random(&mut rng, 2, 6));
    assert!(bad.forward(&mut g, &store, Seq::new(a, 2), &[Seq::new(b, 2)]).is_err());
}

#[test]
fn key_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2).unwrap();
    let alpha = random(&mut rng, 3, 8);
    let beta = random(&mut rng, 5, 8);
    let perm = [3, 0, 4, 1, 2];
    let shuffled = Tensor::from_rows(&perm.iter().map(|&k| beta.row_slice(k).to_vec()).collect::<Vec<_>>()).unwrap();
    assert_close(&attend(&store, &mha, &alpha, &[&beta]), &attend(&store, &mha, &alpha, &[&shuffled]), 1e-12);
}

#[test]
fn batched_sequences_match_one_at_a_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut store, &mut rng, "mha", 8, 2).unwrap();
    let (a1, a2, b1, b2) = (random(&mut rng, 2, 8), random(&mut rng, 2, 8), random(&mut rng, 3, 8), random(&mut rng, 3, 8));
    let stack = |x: &Tensor, y: &Tensor| {
        let mut d = x.data().to_vec();
        d.extend_from_slice(y.data());
        Tensor::matrix(x.rows() + y.rows(), 8, d).unwrap()
    };
    let mut g = Graph::new();
    let a = g.constant(stack(&a1, &a2));
    let b = g.constant(stack(&b1, &b2));
    let out = mha.forward(&mut g, &store, Seq::new(a, 2), &[Seq::new(b, 3)]).unwrap();
    let out = g.value(out).clone();
    assert_close(&out, &stack(&attend(&store, &mha, &a1, &[&b1]), &attend(&store, &mha, &a2, &[&b2])), 1e-12);
}

#[test]
fn attention_pool_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::new();
    let pool = AttentionPool::new(&mut store, &mut rng, "pool", 4);
    let run = |store: &ParamStore, x: &Tensor| {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let out = pool.forward(&mut g, store, Seq::new(v, x.rows())).unwrap();
        g.value(out).clone()
    };
    let one = random(&mut rng, 1, 4);
    assert_eq!(run(&store, &one), one);
    let same = Tensor::from_rows(&vec![one.data().to_vec(); 3]).unwrap();
    assert_close(&run(&store, &same), &one, 1e-15);

    let x = random(&mut rng, 3, 4);
    let q = store.get(pool.query).clone();
    let s: Vec<f64> = (0..3).map(|r| (0..4).map(|c| x.get(r, c) * q.get(c, 0)).sum::<f64>() / 2.0).collect();
    let z: f64 = s.iter().map(|v| v.exp()).sum();
    let want: Vec<f64> = (0..4).map(|c| (0..3).map(|r| s[r].exp() / z * x.get(r, c)).sum()).collect();
    assert_close(&run(&store, &x), &Tensor::row(want).unwrap(), 1e-12);
}

#[test]
fn zero_imaging_leaves_layer_normed_clinical() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::new();
    let block = AttentionBlock::new(&mut store, &mut rng, "blk", 8, 2).unwrap();
    store.set(block.attention.value.weight, Tensor::zeros(8, 8));
    store.set(block.attention.output.bias.unwrap(), Tensor::zeros(1, 8));
    let clinical = random(&mut rng, 4, 8);
    let mut g = Graph::new();
    let c = g.constant(clinical.clone());
    let i = g.constant(Tensor::zeros(6, 8));
    let out = block.forward(&mut g, &store, Seq::new(c, 4), &[Seq::new(i, 6)]).unwrap();
    let got = g.value(out.var).clone();
    let (gain, bias) = (g.constant(Tensor::full(1, 8, 1.0)), g.constant(Tensor::zeros(1, 8)));
    let ln = g.layer_norm(c, gain, bias, 1e-5).unwrap();
    assert_eq!(&got, g.value(ln));
}

fn net_config() -> ModelConfig {
    ModelConfig {
        width: 8,
        heads: 2,
        clinical_tokens: 3,
        ..ModelConfig::default()
    }
}

/// A few coordinates from every parameter tensor.
fn coords(store: &ParamStore, rng: &mut ChaCha8Rng, per: usize) -> Vec<(ParamId, usize)> {
    store.ids().flat_map(|id| (0..per).map(|_| (id, rng.random_range(0..store.get(id).len()))).collect::<Vec<_>>()).collect()
}

#[test]
fn bidirectional_fuse_passes_gradient_to_both_modalities() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = net_config();
    let net = SurvivalNet::new(cfg, Modality::Multimodal, 3, Some(ImagingSource::Frozen { tokens: 2, width: 8 })).unwrap();
    let mut store = net.store.clone();
    let round = net.fusion[0].clone();
    let c_id = store.add("in.clinical", random(&mut rng, 3, 8));
    let i_id = store.add("in.imaging", random(&mut rng, 2, 8));
    let readout = random(&mut rng, 5, 8);
    let f = |g: &mut Graph, s: &ParamStore| -> mmsurv_core::Result<mmsurv_autodiff::Var> {
        let (c, i) = (g.param(s, c_id), g.param(s, i_id));
        let (c2, i2) = FusionRound::forward(&round, g, s, Seq::new(c, 3), Seq::new(i, 2))?;
        assert_eq!((g.shape(c2.var)[0], g.shape(i2.var)[0]), (3, 2));
        let both = g.concat_rows(&[c2.var, i2.var])?;
        let w = g.constant(readout.clone());
        let prod = g.mul(both, w)?;
        Ok(g.sum(prod)?)
    };
    let all: Vec<(ParamId, usize)> = (0..24).map(|k| (c_id, k)).chain((0..16).map(|k| (i_id, k))).collect();
    assert!(grad_check_coords(&store, &all, 1e-3, f).unwrap() < 1e-4);
    let mut g = Graph::new();
    let out = f(&mut g, &store).unwrap();
    let grads = g.backward(out).unwrap();
    assert!(grads.get(c_id).unwrap().max_abs() > 0.0);
    assert!(grads.get(i_id).unwrap().max_abs() > 0.0);
}

fn check_network(modality: Modality, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let imaging = modality.uses_imaging().then_some(ImagingSource::Frozen { tokens: 4, width: 6 });
    let net = SurvivalNet::new(ModelConfig { seed, ..net_config() }, modality, 3, imaging).unwrap();
    let clinical = random(&mut rng, 6, 3);
    let imgs: Vec<Tensor> = (0..6).map(|_| random(&mut rng, 4, 6)).collect();
    let refs: Vec<&Tensor> = imgs.iter().collect();
    let batch = Batch::new(
        modality.uses_clinical().then(|| clinical.clone()),
        modality.uses_imaging().then_some(&refs[..]),
    )
    .unwrap();
    let records: Vec<EventRecord> = (0..6).map(|i| EventRecord::new(3.0 + 7.0 * i as f64, i % 3 != 0).unwrap()).collect();
    let grid = TimeGrid::from_times(&records.iter().map(|r| r.time).collect::<Vec<_>>(), 5).unwrap();
    let probe = coords(&net.store, &mut rng, 2);
    grad_check_coords(&net.store, &probe, 1e-3, |g, s| {
        let logits = net.logits_with(g, s, &batch)?;
        total_loss(g, logits, &records, &grid, net.config.loss())
    })
    .unwrap()
}

#[test]
fn network_gradients_match_finite_differences() {
    for modality in [Modality::Clinical, Modality::Imaging, Modality::Multimodal] {
        for seed in 0..3 {
            let err = check_network(modality, seed);
            assert!(err < 1e-4, "{modality:?} seed {seed}: {err}");
        }
    }
}

#[test]
fn clinical_path_contracts() {
    let net = SurvivalNet::new(ModelConfig::default(), Modality::Clinical, 5, None).unwrap();
    let batch = Batch::new(Some(Tensor::full(1, 5, 0.2)), None).unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::full(1, 5, 0.2));
    let tokens = net.clinical.as_ref().unwrap().forward(&mut g, &net.store, x).unwrap();
    assert_eq!(g.shape(tokens.var), &[4, 64]);
    let pooled = net.pooled(&mut g, &batch).unwrap();
    assert_eq!(g.shape(pooled), &[1, 64]);
    let logits = net.logits(&mut g, &batch).unwrap();
    assert_eq!(g.shape(logits), &[1, 5]);

    let mut zeroed = net.clone();
    for lin in [&net.head.hidden, &net.head.output] {
        zeroed.store.set(lin.weight, Tensor::zeros(zeroed.store.get(lin.weight).rows(), zeroed.store.get(lin.weight).cols()));
    }
    let mut g = Graph::new();
    let logits = zeroed.logits(&mut g, &batch).unwrap();
    assert_eq!(g.value(logits), zeroed.store.get(net.head.output.bias.unwrap()));
}

#[test]
fn zero_weights_and_input_give_bias_tokens() {
    let mut net = SurvivalNet::new(net_config(), Modality::Clinical, 3, None).unwrap();
    let enc = net.clinical.clone().unwrap();
    for lin in [&enc.hidden, &enc.expand] {
        let shape = net.store.get(lin.weight).shape().to_vec();
        net.store.set(lin.weight, Tensor::zeros(shape[0], shape[1]));
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(1, 3));
    let tokens = enc.forward(&mut g, &net.store, x).unwrap();
    let bias = net.store.get(enc.expand.bias.unwrap());
    assert_eq!(g.value(tokens.var).data(), bias.data());
}

#[test]
fn forward_is_bit_reproducible() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = SurvivalNet::new(ModelConfig { seed: 4, ..ModelConfig::default() }, Modality::Multimodal, 7, Some(ImagingSource::Frozen { tokens: 8, width: 16 })).unwrap();
        let imgs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, 8, 16)).collect();
        let refs: Vec<&Tensor> = imgs.iter().collect();
        let batch = Batch::new(Some(random(&mut rng, 3, 7)), Some(&refs)).unwrap();
        let mut g = Graph::new();
        let l = net.logits(&mut g, &batch).unwrap();
        g.value(l).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn symmetric_final_is_optional() {
    let cfg = ModelConfig { symmetric_final: true, ..net_config() };
    let net = SurvivalNet::new(cfg, Modality::Multimodal, 3, Some(ImagingSource::Frozen { tokens: 2, width: 4 })).unwrap();
    assert!(net.imaging_final_attention.is_some());
    let img = Tensor::full(2, 4, 0.5);
    let batch = Batch::new(Some(Tensor::full(2, 3, 0.1)), Some(&[&img, &img])).unwrap();
    let mut g = Graph::new();
    let l = net.logits(&mut g, &batch).unwrap();
    assert_eq!(g.shape(l), &[2, 5]);
}
