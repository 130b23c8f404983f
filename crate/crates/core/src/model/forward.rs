use crate::data::{ColumnStats, WindowBatch};
use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, Variant};
use crate::model::layers::{add_norm, attention, feed_forward, linear, residual_mlp};
use crate::numerics::{BoundParams, Graph, Scalar, Tensor, Var};

/// One recorded intermediate shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LedgerEntry {
    pub site: String,
    pub dims: Vec<usize>,
}

/// Checks every sublayer output against the dimensions the architecture
/// prescribes. Checks always run; recording is optional.
#[derive(Clone, Debug, Default)]
pub struct ShapeLedger {
    record: bool,
    entries: Vec<LedgerEntry>,
    checks: usize,
}

impl ShapeLedger {
    /// Checks without keeping entries.
    pub fn silent() -> Self {
        ShapeLedger::default()
    }

    pub fn recording() -> Self {
        ShapeLedger {
            record: true,
            ..ShapeLedger::default()
        }
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Number of assertions made so far.
    pub fn checks(&self) -> usize {
        self.checks
    }

    pub fn find(&self, site: &str) -> Option<&[usize]> {
        self.entries.iter().find(|e| e.site == site).map(|e| e.dims.as_slice())
    }

    fn check(&mut self, site: impl Into<String>, actual: &[usize], expected: &[usize]) -> Result<()> {
        self.checks += 1;
        let site = site.into();
        if actual != expected {
            return Err(Error::shape(
                "shape ledger",
                format!("{site}: got {actual:?}, expected {expected:?}"),
            ));
        }
        if self.record {
            self.entries.push(LedgerEntry {
                site,
                dims: actual.to_vec(),
            });
        }
        Ok(())
    }
}

/// Handles to the main intermediates of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub v_en: Var,
    pub v_sex: Var,
    pub v_dex: Option<Var>,
    /// `H_ex^(l)` for l = 1..=L.
    pub h_ex: Vec<Var>,
    /// `H_en^(l)` for l = 1..=L.
    pub h_en: Vec<Var>,
    /// `[B × P × N × 1]` in kW.
    pub y: Var,
}

struct Dims {
    b: usize,
    n: usize,
    k: usize,
    d: usize,
}

fn check_batch(cfg: &ModelConfig, batch: &WindowBatch) -> Result<()> {
    let pairs = [
        ("turbines", batch.turbines, cfg.turbines),
        ("exogenous columns", batch.exo, cfg.exo),
        ("lookback", batch.lookback, cfg.lookback),
        ("calendar length", batch.time_len, cfg.time_len()),
    ];
    for (what, got, want) in pairs {
        if got != want {
            return Err(Error::shape(
                "forward",
                format!("batch {what} is {got}, model expects {want}"),
            ));
        }
    }
    if batch.has_targets() && batch.horizon != cfg.horizon {
        return Err(Error::shape(
            "forward",
            format!("batch horizon is {}, model predicts {}", batch.horizon, cfg.horizon),
        ));
    }
    Ok(())
}

/// Endogenous tokens: each turbine's power series `[B × H × N × 1]` → `[B × N × 1 × D]`.
pub fn en_var_emb<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<'_, T>, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let dims = g.dims(x).to_vec();
    if dims.len() != 4 || dims[1] != cfg.lookback || dims[3] != 1 {
        return Err(Error::shape(
            "en_var_emb",
            format!("expected [B × {} × N × 1], got {dims:?}", cfg.lookback),
        ));
    }
    let series = g.permute(x, &[0, 2, 3, 1])?;
    residual_mlp(g, p, "emb.en", series, cfg.activation)
}

/// Static exogenous tokens: `[B × H × N × C]` → `[B × N × C × D]`, one map shared by all variables.
pub fn sex_var_emb<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<'_, T>, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let dims = g.dims(z).to_vec();
    if dims.len() != 4 || dims[1] != cfg.lookback || dims[3] != cfg.exo {
        return Err(Error::shape(
            "sex_var_emb",
            format!("expected [B × {} × N × {}], got {dims:?}", cfg.lookback, cfg.exo),
        ));
    }
    let series = g.permute(z, &[0, 2, 3, 1])?;
    residual_mlp(g, p, "emb.sex", series, cfg.activation)
}

/// Calendar features `Z_d = F_T ‖ F_M ‖ F_Y`, shape `[B × H' × N × C_d]`.
///
/// `t_idx` is `[B × H' × 3]` (slot, month, day of year); the same farm clock
/// is broadcast to every turbine.
pub fn build_dynamic_features<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    t_idx: &[usize],
    batch: usize,
) -> Result<Var> {
    let h = cfg.time_len();
    if t_idx.len() != batch * h * 3 {
        return Err(Error::shape(
            "build_dynamic_features",
            format!("{} calendar indices do not fill [{batch} × {h} × 3]", t_idx.len()),
        ));
    }
    let mut parts = Vec::with_capacity(3);
    for (col, table) in ["time.diurnal", "time.monthly", "time.yearly"].into_iter().enumerate() {
        let var = p.get(table)?;
        let rows = g.dims(var)[0];
        let idx: Vec<usize> = t_idx.iter().skip(col).step_by(3).copied().collect();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                table: table.into(),
                index: bad,
                len: rows,
            });
        }
        parts.push(g.gather_rows(var, &idx, &[batch, h, 1])?);
    }
    let z = g.concat(&parts, 3)?;
    g.repeat_axis(z, 2, cfg.turbines)
}

/// Dynamic exogenous tokens: `[B × H' × N × C_d]` → `[B × N × C_d × D]`.
pub fn dex_var_emb<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<'_, T>, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let dims = g.dims(z).to_vec();
    if dims.len() != 4 || dims[1] != cfg.time_len() || dims[3] != cfg.dyn_channels() {
        return Err(Error::shape(
            "dex_var_emb",
            format!(
                "expected [B × {} × N × {}], got {dims:?}",
                cfg.time_len(),
                cfg.dyn_channels()
            ),
        ));
    }
    let series = g.permute(z, &[0, 2, 3, 1])?;
    let family = if cfg.variant == Variant::NoDev { "emb.sex" } else { "emb.dex" };
    residual_mlp(g, p, family, series, cfg.activation)
}

fn block_dims(g: &Graph<impl Scalar>, cfg: &ModelConfig, h_ex: Var) -> Result<Dims> {
    let dims = g.dims(h_ex);
    let want_tail = [cfg.turbines, cfg.exo_tokens(), cfg.d_model];
    if dims.len() != 4 || dims[1..] != want_tail {
        return Err(Error::shape(
            "exogenous block",
            format!("expected [B × {want_tail:?}], got {dims:?}"),
        ));
    }
    Ok(Dims {
        b: dims[0],
        n: dims[1],
        k: dims[2],
        d: dims[3],
    })
}

/// Exogenous transformer block on `[B × N × K × D]`: attention across the
/// variable tokens of each turbine, attention across turbines for each
/// variable, then a feed-forward sublayer. Every sublayer is `LN(x + f(x))`.
pub fn ext_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    h_ex: Var,
    ledger: &mut ShapeLedger,
) -> Result<Var> {
    let Dims { b, n, k, d } = block_dims(g, cfg, h_ex)?;
    let pre = format!("layers.{layer}.ext");
    let mut h = h_ex;

    if cfg.variant.uses_variable_attention() {
        let x = g.reshape(h, &[b * n, k, d])?;
        let a = attention(g, p, &format!("{pre}.var_attn"), x, x, cfg.heads)?;
        let x = add_norm(g, p, &format!("{pre}.var_ln"), x, a)?;
        h = g.reshape(x, &[b, n, k, d])?;
    }
    ledger.check(format!("{pre}.H_v"), g.dims(h), &[b, n, k, d])?;

    if cfg.variant.uses_spatial_attention() {
        let t = g.permute(h, &[0, 2, 1, 3])?;
        let x = g.reshape(t, &[b * k, n, d])?;
        let a = attention(g, p, &format!("{pre}.spatial_attn"), x, x, cfg.heads)?;
        let x = add_norm(g, p, &format!("{pre}.spatial_ln"), x, a)?;
        let t = g.reshape(x, &[b, k, n, d])?;
        ledger.check(format!("{pre}.H_s(transposed)"), g.dims(t), &[b, k, n, d])?;
        h = g.permute(t, &[0, 2, 1, 3])?;
    }
    ledger.check(format!("{pre}.H_s"), g.dims(h), &[b, n, k, d])?;

    let f = feed_forward(g, p, &format!("{pre}.ffn"), h, cfg.activation)?;
    let out = add_norm(g, p, &format!("{pre}.ffn_ln"), h, f)?;
    ledger.check(format!("{pre}.H_ex"), g.dims(out), &[b, n, k, d])?;
    Ok(out)
}

/// Endogenous transformer block: spatial attention over the single power
/// token of each turbine, per-turbine fusion with that turbine's exogenous
/// tokens, then a feed-forward sublayer.
pub fn ent_block_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    layer: usize,
    h_en: Var,
    h_ex: Var,
    ledger: &mut ShapeLedger,
) -> Result<Var> {
    let Dims { b, n, k, d } = block_dims(g, cfg, h_ex)?;
    if g.dims(h_en) != [b, n, 1, d] {
        return Err(Error::shape(
            "ent_block_forward",
            format!("endogenous state {:?} does not pair with exogenous {:?}", g.dims(h_en), g.dims(h_ex)),
        ));
    }
    let pre = format!("layers.{layer}.ent");

    // [B, N, 1, D] and [B, 1, N, D] share one memory layout
    let x = g.reshape(h_en, &[b, n, d])?;
    let a = attention(g, p, &format!("{pre}.spatial_attn"), x, x, cfg.heads)?;
    let s = add_norm(g, p, &format!("{pre}.spatial_ln"), x, a)?;
    let st = g.reshape(s, &[b, 1, n, d])?;
    ledger.check(format!("{pre}.H_s(transposed)"), g.dims(st), &[b, 1, n, d])?;

    let v = if cfg.variant == Variant::RepByAttn {
        let q = g.reshape(s, &[b * n, 1, d])?;
        let kv = g.reshape(h_ex, &[b * n, k, d])?;
        let c = attention(g, p, &format!("{pre}.cross_attn"), q, kv, cfg.heads)?;
        let v = add_norm(g, p, &format!("{pre}.cross_ln"), q, c)?;
        g.reshape(v, &[b, n, d])?
    } else {
        let flat_ex = g.reshape(h_ex, &[b, n, k * d])?;
        let joined = g.concat(&[s, flat_ex], 2)?;
        ledger.check(format!("{pre}.fusion_in"), g.dims(joined), &[b, n, (1 + k) * d])?;
        residual_mlp(g, p, &format!("{pre}.fusion"), joined, cfg.activation)?
    };
    ledger.check(format!("{pre}.H_v"), g.dims(v), &[b, n, d])?;

    let f = feed_forward(g, p, &format!("{pre}.ffn"), v, cfg.activation)?;
    let out = add_norm(g, p, &format!("{pre}.ffn_ln"), v, f)?;
    let out = g.reshape(out, &[b, n, 1, d])?;
    ledger.check(format!("{pre}.H_en"), g.dims(out), &[b, n, 1, d])?;
    Ok(out)
}

/// Full network on one batch. Returns handles to the embeddings, every
/// layer state and the kW forecast.
pub fn forward_detailed<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    power: &ColumnStats,
    batch: &WindowBatch,
    ledger: &mut ShapeLedger,
) -> Result<ForwardVars> {
    check_batch(cfg, batch)?;
    let (b, h, n, c, d) = (batch.batch, cfg.lookback, cfg.turbines, cfg.exo, cfg.d_model);
    let k = cfg.exo_tokens();

    let x = g.constant(Tensor::from_f64(vec![b, h, n, 1], &batch.x)?);
    let zs = g.constant(Tensor::from_f64(vec![b, h, n, c], &batch.z_static)?);

    let v_en = en_var_emb(g, p, cfg, x)?;
    ledger.check("V_en", g.dims(v_en), &[b, n, 1, d])?;
    let v_sex = sex_var_emb(g, p, cfg, zs)?;
    ledger.check("V_sex", g.dims(v_sex), &[b, n, c, d])?;

    let (v_dex, mut h_ex) = if cfg.variant.uses_dynamic() {
        let zd = build_dynamic_features(g, p, cfg, &batch.t_idx, b)?;
        ledger.check("Z_d", g.dims(zd), &[b, cfg.time_len(), n, cfg.dyn_channels()])?;
        let v_dex = dex_var_emb(g, p, cfg, zd)?;
        ledger.check("V_dex", g.dims(v_dex), &[b, n, cfg.dyn_channels(), d])?;
        (Some(v_dex), g.concat(&[v_dex, v_sex], 2)?)
    } else {
        (None, v_sex)
    };
    ledger.check("H_ex(0)", g.dims(h_ex), &[b, n, k, d])?;

    let mut h_en = v_en;
    let mut ex_states = Vec::with_capacity(cfg.layers);
    let mut en_states = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        h_ex = ext_block_forward(g, p, cfg, l, h_ex, ledger)?;
        h_en = ent_block_forward(g, p, cfg, l, h_en, h_ex, ledger)?;
        ex_states.push(h_ex);
        en_states.push(h_en);
    }

    let y = head(g, p, cfg, power, h_en)?;
    ledger.check("Y_hat", g.dims(y), &[b, cfg.horizon, n, 1])?;
    Ok(ForwardVars {
        v_en,
        v_sex,
        v_dex,
        h_ex: ex_states,
        h_en: en_states,
        y,
    })
}

/// `[B × N × 1 × D]` → `[B × P × N × 1]`, de-normalized to kW.
fn head<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    power: &ColumnStats,
    h_en: Var,
) -> Result<Var> {
    let dims = g.dims(h_en).to_vec();
    let (b, n) = (dims[0], dims[1]);
    let x = g.reshape(h_en, &[b, n, cfg.d_model])?;
    let x = linear(g, p, "head.fc1", x)?;
    let x = g.activation(x, cfg.activation);
    let x = linear(g, p, "head.fc2", x)?;
    let x = g.permute(x, &[0, 2, 1])?;
    let x = g.reshape(x, &[b, cfg.horizon, n, 1])?;
    let x = g.scale(x, power.std);
    Ok(g.add_scalar(x, power.mean))
}

/// Forecast in kW, `[B × P × N × 1]`.
pub fn forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    cfg: &ModelConfig,
    power: &ColumnStats,
    batch: &WindowBatch,
) -> Result<Var> {
    Ok(forward_detailed(g, p, cfg, power, batch, &mut ShapeLedger::silent())?.y)
}
