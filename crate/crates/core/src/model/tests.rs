use super::*;
use crate::data::WindowBatch;
use crate::numerics::{grad_check, Activation, GradFault, Graph, Var};

type G = Graph<f64>;

fn model(cfg: ModelConfig, seed: u64) -> Model<f64> {
    let norm = toy_norm(&cfg);
    Model::new(cfg, norm, seed).unwrap()
}

/// Moves turbine `perm[i]` to slot `i` in every turbine-indexed buffer.
fn permute_turbines(batch: &WindowBatch, perm: &[usize]) -> WindowBatch {
    let mut out = batch.clone();
    let (n, c) = (batch.turbines, batch.exo);
    for row in 0..batch.x.len() / n {
        for (i, &j) in perm.iter().enumerate() {
            out.x[row * n + i] = batch.x[row * n + j];
            for k in 0..c {
                out.z_static[(row * n + i) * c + k] = batch.z_static[(row * n + j) * c + k];
            }
        }
    }
    for row in 0..batch.y.len() / n {
        for (i, &j) in perm.iter().enumerate() {
            out.y[row * n + i] = batch.y[row * n + j];
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Values of `v` for turbine `i`, where the turbine axis is axis 1.
fn turbine_slice(g: &G, v: Var, i: usize) -> Vec<f64> {
    let dims = g.dims(v);
    let n = dims[1];
    let inner: usize = dims[2..].iter().product();
    let data = g.value(v).data();
    (0..dims[0])
        .flat_map(|b| data[(b * n + i) * inner..(b * n + i + 1) * inner].to_vec())
        .collect()
}

fn small_default() -> ModelConfig {
    ModelConfig {
        turbines: 4,
        layers: 2,
        ..ModelConfig::default()
    }
}

#[test]
fn output_shape_and_units() {
    let cfg = ModelConfig {
        d_model: 64,
        ..ModelConfig::toy()
    };
    let m = model(cfg.clone(), 0);
    let y = m.predict(&toy_batch(&cfg, 3, 1)).unwrap();
    assert_eq!(y.dims(), &[3, 2, 3, 1]);
    // de-normalized: values sit around the power mean rather than zero
    let mean = y.data().iter().sum::<f64>() / y.numel() as f64;
    assert!(mean > 100.0, "{mean}");
}

#[test]
fn turbine_permutation_equivariance() {
    let perm = [2, 0, 3, 1];
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            ..small_default()
        };
        let m = model(cfg.clone(), 5);
        let batch = toy_batch(&cfg, 2, 9);
        let y = m.predict(&batch).unwrap();
        let yp = m.predict(&permute_turbines(&batch, &perm)).unwrap();
        let expect = {
            let shuffled = WindowBatch {
                x: y.data().to_vec(),
                y: y.data().to_vec(),
                ..batch.clone()
            };
            permute_turbines(&shuffled, &perm).y
        };
        let diff = max_abs_diff(yp.data(), &expect);
        assert!(diff <= 1e-5, "{variant}: {diff}");
    }
}

#[test]
fn endogenous_embedding_is_channel_independent() {
    let cfg = ModelConfig::toy();
    let m = model(cfg.clone(), 1);
    let batch = toy_batch(&cfg, 2, 2);
    let tokens = |x: &[f64]| {
        let mut g = G::new();
        let p = m.params.bind_frozen(&mut g);
        let xv = g.constant(Tensor::new(vec![2, cfg.lookback, cfg.turbines, 1], x.to_vec()).unwrap());
        let v = en_var_emb(&mut g, &p, &cfg, xv).unwrap();
        assert_eq!(g.dims(v), &[2, cfg.turbines, 1, cfg.d_model]);
        (0..cfg.turbines).map(|i| turbine_slice(&g, v, i)).collect::<Vec<_>>()
    };
    let base = tokens(&batch.x);
    let mut bumped = batch.x.clone();
    for t in 0..2 * cfg.lookback {
        bumped[t * cfg.turbines + 1] += 3.0;
    }
    let after = tokens(&bumped);
    assert_eq!(base[0], after[0]);
    assert_eq!(base[2], after[2]);
    assert_ne!(base[1], after[1]);

    // identical series map to identical tokens
    let mut same = batch.x.clone();
    for t in 0..2 * cfg.lookback {
        same[t * cfg.turbines + 2] = same[t * cfg.turbines];
    }
    let tok = tokens(&same);
    assert_eq!(tok[0], tok[2]);
}

#[test]
fn static_embedding_shared_across_variables() {
    let cfg = ModelConfig {
        exo: 9,
        ..ModelConfig::toy()
    };
    let m = model(cfg.clone(), 2);
    let batch = toy_batch(&cfg, 1, 3);
    let (h, n, c, d) = (cfg.lookback, cfg.turbines, cfg.exo, cfg.d_model);
    let run = |z: &[f64]| {
        let mut g = G::new();
        let p = m.params.bind_frozen(&mut g);
        let zv = g.constant(Tensor::new(vec![1, h, n, c], z.to_vec()).unwrap());
        let v = sex_var_emb(&mut g, &p, &cfg, zv).unwrap();
        assert_eq!(g.dims(v), &[1, n, 9, d]);
        g.value(v).data().to_vec()
    };
    let base = run(&batch.z_static);
    // reverse the variable axis
    let mut rev = batch.z_static.clone();
    for row in 0..h * n {
        rev[row * c..(row + 1) * c].reverse();
    }
    let out = run(&rev);
    for i in 0..n {
        for k in 0..c {
            let a = &base[(i * c + k) * d..(i * c + k + 1) * d];
            let b = &out[(i * c + (c - 1 - k)) * d..(i * c + (c - k)) * d];
            assert_eq!(a, b);
        }
    }
    // zero series → every token equals MLP(0)
    let zeros = run(&vec![0.0; h * n * c]);
    for tok in zeros.chunks(d) {
        assert_eq!(tok, &zeros[..d]);
    }
}

#[test]
fn dynamic_features_lookup_and_sparsity() {
    let cfg = ModelConfig::toy();
    let m = model(cfg.clone(), 3);
    let h = cfg.time_len();
    let mut t_idx = Vec::new();
    for _ in 0..2 {
        for k in 0..h {
            t_idx.extend([10 + k, 4, 100]);
        }
    }
    let mut g = G::new();
    let p = m.params.bind(&mut g);
    let z = build_dynamic_features(&mut g, &p, &cfg, &t_idx, 2).unwrap();
    assert_eq!(g.dims(z), &[2, h, cfg.turbines, cfg.dyn_channels()]);
    let half = g.value(z).numel() / 2;
    let data = g.value(z).data();
    assert_eq!(data[..half], data[half..]);
    // the same row is broadcast across turbines
    let cd = cfg.dyn_channels();
    assert_eq!(data[..cd], data[cd..2 * cd]);

    let s = g.sum(z);
    g.backward(s).unwrap();
    let monthly = g.grad(p.get("time.monthly").unwrap()).unwrap().to_vec();
    let width = cfg.time_emb;
    for (row, chunk) in monthly.chunks(width).enumerate() {
        let touched = chunk.iter().any(|&v| v != 0.0);
        assert_eq!(touched, row == 4, "month row {row}");
    }

    let mut bad = t_idx.clone();
    bad[1] = 12;
    let mut g = G::new();
    let p = m.params.bind(&mut g);
    let err = build_dynamic_features(&mut g, &p, &cfg, &bad, 2).unwrap_err();
    assert!(err.to_string().contains("time.monthly"), "{err}");
}

#[test]
fn exogenous_block_preserves_shape_and_no_esvc_isolates_turbines() {
    for variant in [Variant::Full, Variant::NoEsvc] {
        let cfg = ModelConfig {
            variant,
            ..ModelConfig::toy()
        };
        let m = model(cfg.clone(), 4);
        let batch = toy_batch(&cfg, 2, 5);
        let h_ex_last = |b: &WindowBatch| {
            let mut g = G::new();
            let p = m.params.bind_frozen(&mut g);
            let f = forward_detailed(&mut g, &p, &cfg, &m.norm.power, b, &mut ShapeLedger::silent()).unwrap();
            let h = f.h_ex[0];
            assert_eq!(g.dims(h), &[2, cfg.turbines, cfg.exo_tokens(), cfg.d_model]);
            (0..cfg.turbines).map(|i| turbine_slice(&g, h, i)).collect::<Vec<_>>()
        };
        let base = h_ex_last(&batch);
        let mut bumped = batch.clone();
        for row in 0..2 * cfg.lookback {
            for k in 0..cfg.exo {
                bumped.z_static[(row * cfg.turbines + 2) * cfg.exo + k] += 1.5;
            }
        }
        let after = h_ex_last(&bumped);
        if variant == Variant::NoEsvc {
            assert_eq!(base[0], after[0]);
            assert_eq!(base[1], after[1]);
        } else {
            assert!(max_abs_diff(&base[0], &after[0]) > 0.0);
        }
        assert_ne!(base[2], after[2]);
    }
}

#[test]
fn endogenous_fusion_is_live_and_per_turbine() {
    let cfg = ModelConfig::toy();
    let m = model(cfg.clone(), 6);
    let batch = toy_batch(&cfg, 2, 7);
    let (n, k, d) = (cfg.turbines, cfg.exo_tokens(), cfg.d_model);
    let run = |edit: &dyn Fn(&mut [f64])| {
        let mut g = G::new();
        let p = m.params.bind_frozen(&mut g);
        let f = forward_detailed(&mut g, &p, &cfg, &m.norm.power, &batch, &mut ShapeLedger::silent()).unwrap();
        let mut ex = g.value(f.h_ex[0]).clone();
        edit(ex.data_mut());
        let ex = g.constant(ex);
        let out = ent_block_forward(&mut g, &p, &cfg, 0, f.v_en, ex, &mut ShapeLedger::silent()).unwrap();
        (0..n).map(|i| turbine_slice(&g, out, i)).collect::<Vec<_>>()
    };
    let base = run(&|_| {});
    let zeroed = run(&|ex| ex.iter_mut().for_each(|v| *v = 0.0));
    let sensitivity: f64 = (0..n).map(|i| max_abs_diff(&base[i], &zeroed[i])).sum();
    assert!(sensitivity > 0.0);

    // perturb only turbine 1's exogenous tokens
    let one = run(&|ex| {
        for b in 0..2 {
            for v in &mut ex[(b * n + 1) * k * d..(b * n + 2) * k * d] {
                *v += 1.0;
            }
        }
    });
    assert_eq!(base[0], one[0]);
    assert_eq!(base[2], one[2]);
    assert_ne!(base[1], one[1]);
}

#[test]
fn no_edv_ignores_timestamps() {
    let cfg = ModelConfig {
        variant: Variant::NoEdv,
        ..ModelConfig::toy()
    };
    let m = model(cfg.clone(), 8);
    let batch = toy_batch(&cfg, 3, 9);
    let mut shifted = batch.clone();
    shifted.t_idx.iter_mut().for_each(|v| *v = (*v + 5) % 12);
    let a = m.predict(&batch).unwrap();
    let b = m.predict(&shifted).unwrap();
    assert_eq!(a.data(), b.data());

    // the full model does read them
    let full = model(ModelConfig::toy(), 8);
    assert_ne!(full.predict(&batch).unwrap().data(), full.predict(&shifted).unwrap().data());
}

#[test]
fn shape_ledger_covers_every_variant_at_default_size() {
    for variant in Variant::ALL {
        let cfg = ModelConfig {
            variant,
            ..ModelConfig::default()
        };
        let m = model(cfg.clone(), 0);
        let ledger = m.trace(&toy_batch(&cfg, 2, 1)).unwrap();
        let (n, d) = (cfg.turbines, cfg.d_model);
        let k = cfg.exo_tokens();
        assert_eq!(ledger.find("H_ex(0)"), Some(&[2, n, k, d][..]));
        for l in 0..cfg.layers {
            assert_eq!(ledger.find(&format!("layers.{l}.ext.H_s")), Some(&[2, n, k, d][..]));
            assert_eq!(ledger.find(&format!("layers.{l}.ent.H_s(transposed)")), Some(&[2, 1, n, d][..]));
            assert_eq!(ledger.find(&format!("layers.{l}.ent.H_en")), Some(&[2, n, 1, d][..]));
        }
        assert_eq!(ledger.find("Y_hat"), Some(&[2, 12, n, 1][..]));
        assert_eq!(ledger.checks(), ledger.entries().len());
    }
}

#[test]
fn mismatched_batch_is_a_shape_error() {
    let cfg = ModelConfig::toy();
    let m = model(cfg.clone(), 0);
    let other = ModelConfig {
        lookback: 9,
        ..cfg.clone()
    };
    let err = m.predict(&toy_batch(&other, 1, 0)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
}

#[test]
fn checkpoint_reproduces_forecast_bit_exactly() {
    let cfg = ModelConfig {
        variant: Variant::RepByAttn,
        ..ModelConfig::toy()
    };
    let m = model(cfg.clone(), 11);
    let batch = toy_batch(&cfg, 2, 12);
    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = Model::<f64>::load(dir.path()).unwrap();
    assert_eq!(back.config, m.config);
    assert_eq!(back.norm, m.norm);
    let bits = |t: Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(m.predict(&batch).unwrap()), bits(back.predict(&batch).unwrap()));
}

#[test]
fn ext_block_gradcheck_d8() {
    let cfg = ModelConfig {
        activation: Activation::Gelu,
        ..ModelConfig::toy()
    };
    let mut params = init_params::<f64>(&cfg, 13).unwrap();
    let input = toy_batch(&cfg, 1, 14);
    let k = cfg.exo_tokens();
    let h0: Vec<f64> = input.x.iter().cycle().take(cfg.turbines * k * cfg.d_model).copied().collect();
    params
        .insert("input", Tensor::new(vec![1, cfg.turbines, k, cfg.d_model], h0).unwrap())
        .unwrap();
    let only: Vec<String> = params.names().filter(|n| n.contains(".ext.") || *n == "input").map(String::from).collect();
    let only: Vec<&str> = only.iter().map(String::as_str).collect();
    let report = grad_check(&params, Some(&only), 1e-4, GradFault::None, |g, p| {
        let x = p.get("input")?;
        let y = ext_block_forward(g, p, &cfg, 0, x, &mut ShapeLedger::silent())?;
        let w = g.constant(Tensor::new(
            g.dims(y).to_vec(),
            // positive weights, so no per-channel sum cancels to an exact zero gradient
            (0..g.value(y).numel()).map(|i| ((i * 7919 % 23) as f64 + 1.0) / 23.0).collect(),
        )?);
        let prod = g.mul(y, w)?;
        Ok(g.sum(prod))
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert_eq!(report.params.len(), only.len());
}

fn end_to_end(activation: Activation, fault: GradFault) -> crate::numerics::GradReport {
    let mut check = crate::training::EndToEndCheck::default();
    check.config.activation = activation;
    crate::training::end_to_end_gradcheck(&check, fault).unwrap()
}

#[test]
fn end_to_end_gradcheck_toy_scale() {
    // GELU: central differences are not a valid oracle across ReLU kinks
    let report = end_to_end(Activation::Gelu, GradFault::None);
    assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    assert_eq!(report.params.len(), param_specs(&ModelConfig::toy()).len());
}

#[test]
fn end_to_end_gradcheck_catches_corrupted_backward() {
    let report = end_to_end(Activation::Gelu, GradFault::MatmulLhs);
    assert!(!report.passed());
}

