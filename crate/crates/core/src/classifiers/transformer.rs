//! Transformer-encoder classifier: input embedding with fixed sinusoidal
//! positional encoding, post-norm encoder blocks (multi-head self-attention
//! plus a ReLU feed-forward of width 4 x d_model), masked-mean pooling and
//! per-head logit projections.
//!
//! Masked slots contribute zero input, are hidden from attention keys via a
//! large negative score bias and are excluded from pooling; when every slot
//! is masked the mask is ignored so the output stays defined.

use super::linalg::{dot, gemv, gemv_t_acc, outer_acc};
use super::{
    grad_seg, layout_of, ClassifierConfig, ClassifierError, InitKind, LayoutBuilder, LayoutSeg,
    Segments,
};

const LN_EPS: f64 = 1e-5;
const MASK_BIAS: f64 = -1e9;

const SEGS_PER_LAYER: usize = 16;

pub(crate) fn layout(cfg: &ClassifierConfig) -> Vec<LayoutSeg> {
    let d = cfg.n_hidden;
    let dff = 4 * d;
    let mut b = LayoutBuilder::new();
    b.seg("embed.weight".into(), d * cfg.input_dim, cfg.input_dim);
    b.seg("embed.bias".into(), d, cfg.input_dim);
    for l in 0..cfg.n_layers {
        b.seg(format!("block{l}.attn.wq"), d * d, d);
        b.seg(format!("block{l}.attn.bq"), d, d);
        b.seg(format!("block{l}.attn.wk"), d * d, d);
        b.seg(format!("block{l}.attn.bk"), d, d);
        b.seg(format!("block{l}.attn.wv"), d * d, d);
        b.seg(format!("block{l}.attn.bv"), d, d);
        b.seg(format!("block{l}.attn.wo"), d * d, d);
        b.seg(format!("block{l}.attn.bo"), d, d);
        b.seg_init(format!("block{l}.ln1.gain"), d, InitKind::Ones);
        b.seg_init(format!("block{l}.ln1.bias"), d, InitKind::Zeros);
        b.seg(format!("block{l}.ff.w1"), dff * d, d);
        b.seg(format!("block{l}.ff.b1"), dff, d);
        b.seg(format!("block{l}.ff.w2"), d * dff, dff);
        b.seg(format!("block{l}.ff.b2"), d, dff);
        b.seg_init(format!("block{l}.ln2.gain"), d, InitKind::Ones);
        b.seg_init(format!("block{l}.ln2.bias"), d, InitKind::Zeros);
    }
    for k in 0..cfg.head_count() {
        b.seg(format!("head{k}.weight"), 2 * d, d);
        b.seg(format!("head{k}.bias"), 2, d);
    }
    b.finish()
}

/// Fixed sinusoidal positional encoding for `t_slots` positions.
fn positional_encoding(t_slots: usize, d: usize) -> Vec<Vec<f64>> {
    let mut pe = vec![vec![0.0; d]; t_slots];
    for (pos, row) in pe.iter_mut().enumerate() {
        for i in 0..d / 2 {
            let freq = 1.0 / 10000f64.powf(2.0 * i as f64 / d as f64);
            row[2 * i] = (pos as f64 * freq).sin();
            if 2 * i + 1 < d {
                row[2 * i + 1] = (pos as f64 * freq).cos();
            }
        }
    }
    pe
}

struct LnCache {
    xhat: Vec<Vec<f64>>,
    inv_std: Vec<f64>,
}

struct LayerCache {
    h_in: Vec<Vec<f64>>,
    q: Vec<Vec<f64>>,
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    /// attn[head][t][u]
    attn: Vec<Vec<Vec<f64>>>,
    ctx: Vec<Vec<f64>>,
    ln1: LnCache,
    /// LN1 output (feed-forward input).
    y1: Vec<Vec<f64>>,
    /// Post-ReLU feed-forward hidden.
    f1: Vec<Vec<f64>>,
    ln2: LnCache,
}

pub(crate) struct Cache {
    /// Mask-zeroed input slots.
    x: Vec<Vec<f64>>,
    /// Effective mask (all-true fallback when every slot is masked).
    mask: Vec<bool>,
    layers: Vec<LayerCache>,
    pooled: Vec<f64>,
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], out: &mut [f64]) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mu = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    let mut xhat = vec![0.0; x.len()];
    for i in 0..x.len() {
        xhat[i] = (x[i] - mu) * inv_std;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    (xhat, inv_std)
}

fn layer_norm_backward(
    dy: &[f64],
    xhat: &[f64],
    inv_std: f64,
    gain: &[f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let d = dy.len();
    let mut dxhat = vec![0.0; d];
    let mut mean_dxhat = 0.0;
    let mut mean_dxhat_xhat = 0.0;
    for i in 0..d {
        dgain[i] += dy[i] * xhat[i];
        dbias[i] += dy[i];
        dxhat[i] = dy[i] * gain[i];
        mean_dxhat += dxhat[i];
        mean_dxhat_xhat += dxhat[i] * xhat[i];
    }
    mean_dxhat /= d as f64;
    mean_dxhat_xhat /= d as f64;
    (0..d)
        .map(|i| inv_std * (dxhat[i] - mean_dxhat - xhat[i] * mean_dxhat_xhat))
        .collect()
}

pub(crate) fn forward(
    cfg: &ClassifierConfig,
    params: &[f64],
    x: &[Vec<f64>],
    mask: &[bool],
) -> Result<(Vec<[f64; 2]>, Cache), ClassifierError> {
    let layout = layout_of(cfg);
    let p = Segments::new(&layout, params);
    let d = cfg.n_hidden;
    let dff = 4 * d;
    let t_slots = cfg.context_slots;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let effective_mask: Vec<bool> = if mask.iter().any(|m| *m) {
        mask.to_vec()
    } else {
        vec![true; t_slots]
    };

    let x_eff: Vec<Vec<f64>> = x
        .iter()
        .zip(mask)
        .map(|(v, m)| if *m { v.clone() } else { vec![0.0; cfg.input_dim] })
        .collect();

    // Embedding + positional encoding.
    let pe = positional_encoding(t_slots, d);
    let mut hs: Vec<Vec<f64>> = Vec::with_capacity(t_slots);
    for (t, xt) in x_eff.iter().enumerate() {
        let mut e = vec![0.0; d];
        gemv(&mut e, p.get(0), xt, d, cfg.input_dim);
        let bias = p.get(1);
        for i in 0..d {
            e[i] += bias[i] + pe[t][i];
        }
        hs.push(e);
    }

    let mut layer_caches = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let base = 2 + l * SEGS_PER_LAYER;
        let h_in = hs.clone();

        let project = |w_idx: usize, b_idx: usize| -> Vec<Vec<f64>> {
            let w = p.get(w_idx);
            let b = p.get(b_idx);
            h_in.iter()
                .map(|h| {
                    let mut out = vec![0.0; d];
                    gemv(&mut out, w, h, d, d);
                    for i in 0..d {
                        out[i] += b[i];
                    }
                    out
                })
                .collect()
        };
        let q = project(base, base + 1);
        let k = project(base + 2, base + 3);
        let v = project(base + 4, base + 5);

        // Masked multi-head attention.
        let mut attn = vec![vec![vec![0.0; t_slots]; t_slots]; heads];
        let mut ctx = vec![vec![0.0; d]; t_slots];
        for hd in 0..heads {
            let r = hd * dh..(hd + 1) * dh;
            for t in 0..t_slots {
                let qt = &q[t][r.clone()];
                let mut scores = vec![0.0; t_slots];
                let mut max_s = f64::NEG_INFINITY;
                for u in 0..t_slots {
                    let mut s = dot(qt, &k[u][r.clone()]) * scale;
                    if !effective_mask[u] {
                        s += MASK_BIAS;
                    }
                    scores[u] = s;
                    max_s = max_s.max(s);
                }
                let mut z = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max_s).exp();
                    z += *s;
                }
                for (u, s) in scores.iter().enumerate() {
                    let a = s / z;
                    attn[hd][t][u] = a;
                    if a != 0.0 {
                        let vu = &v[u][r.clone()];
                        for (c, vv) in ctx[t][r.clone()].iter_mut().zip(vu) {
                            *c += a * vv;
                        }
                    }
                }
            }
        }

        // Output projection, residual, LN1.
        let wo = p.get(base + 6);
        let bo = p.get(base + 7);
        let ln1_g = p.get(base + 8);
        let ln1_b = p.get(base + 9);
        let mut y1 = vec![vec![0.0; d]; t_slots];
        let mut ln1 = LnCache {
            xhat: Vec::with_capacity(t_slots),
            inv_std: Vec::with_capacity(t_slots),
        };
        for t in 0..t_slots {
            let mut o = vec![0.0; d];
            gemv(&mut o, wo, &ctx[t], d, d);
            for i in 0..d {
                o[i] += bo[i] + h_in[t][i];
            }
            let (xhat, inv_std) = layer_norm(&o, ln1_g, ln1_b, &mut y1[t]);
            ln1.xhat.push(xhat);
            ln1.inv_std.push(inv_std);
        }

        // Feed-forward, residual, LN2.
        let w1 = p.get(base + 10);
        let b1 = p.get(base + 11);
        let w2 = p.get(base + 12);
        let b2 = p.get(base + 13);
        let ln2_g = p.get(base + 14);
        let ln2_b = p.get(base + 15);
        let mut f1s = vec![vec![0.0; dff]; t_slots];
        let mut out = vec![vec![0.0; d]; t_slots];
        let mut ln2 = LnCache {
            xhat: Vec::with_capacity(t_slots),
            inv_std: Vec::with_capacity(t_slots),
        };
        for t in 0..t_slots {
            let f1 = &mut f1s[t];
            gemv(f1, w1, &y1[t], dff, d);
            for (fv, bv) in f1.iter_mut().zip(b1) {
                *fv = (*fv + bv).max(0.0);
            }
            let mut f2 = vec![0.0; d];
            gemv(&mut f2, w2, f1, d, dff);
            for i in 0..d {
                f2[i] += b2[i] + y1[t][i];
            }
            let (xhat, inv_std) = layer_norm(&f2, ln2_g, ln2_b, &mut out[t]);
            ln2.xhat.push(xhat);
            ln2.inv_std.push(inv_std);
        }

        layer_caches.push(LayerCache {
            h_in,
            q,
            k,
            v,
            attn,
            ctx,
            ln1,
            y1,
            f1: f1s,
            ln2,
        });
        hs = out;
    }

    // Mean pooling over unmasked slots.
    let pooled_count = effective_mask.iter().filter(|m| **m).count().max(1);
    let mut pooled = vec![0.0; d];
    for (t, h) in hs.iter().enumerate() {
        if effective_mask[t] {
            for i in 0..d {
                pooled[i] += h[i];
            }
        }
    }
    for v in pooled.iter_mut() {
        *v /= pooled_count as f64;
    }

    let head_base = 2 + cfg.n_layers * SEGS_PER_LAYER;
    let mut logits = Vec::with_capacity(cfg.head_count());
    for k in 0..cfg.head_count() {
        let (w, b) = (p.get(head_base + 2 * k), p.get(head_base + 2 * k + 1));
        let mut z = [0.0; 2];
        gemv(&mut z, w, &pooled, 2, d);
        z[0] += b[0];
        z[1] += b[1];
        logits.push(z);
    }

    Ok((
        logits,
        Cache {
            x: x_eff,
            mask: effective_mask,
            layers: layer_caches,
            pooled,
        },
    ))
}

pub(crate) fn backward(
    cfg: &ClassifierConfig,
    params: &[f64],
    cache: &Cache,
    dlogits: &[[f64; 2]],
    grad: &mut [f64],
) {
    let layout = layout_of(cfg);
    let p = Segments::new(&layout, params);
    let d = cfg.n_hidden;
    let dff = 4 * d;
    let t_slots = cfg.context_slots;
    let heads = cfg.n_heads;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let head_base = 2 + cfg.n_layers * SEGS_PER_LAYER;

    // Heads -> pooled gradient.
    let mut dpooled = vec![0.0; d];
    for (k, dz) in dlogits.iter().enumerate() {
        outer_acc(
            grad_seg(&layout, grad, head_base + 2 * k),
            dz,
            &cache.pooled,
            2,
            d,
        );
        let db = grad_seg(&layout, grad, head_base + 2 * k + 1);
        db[0] += dz[0];
        db[1] += dz[1];
        gemv_t_acc(&mut dpooled, p.get(head_base + 2 * k), dz, 2, d);
    }

    // Pooling -> per-slot output gradients.
    let pooled_count = cache.mask.iter().filter(|m| **m).count().max(1) as f64;
    let mut dhs: Vec<Vec<f64>> = (0..t_slots)
        .map(|t| {
            if cache.mask[t] {
                dpooled.iter().map(|v| v / pooled_count).collect()
            } else {
                vec![0.0; d]
            }
        })
        .collect();

    for l in (0..cfg.n_layers).rev() {
        let base = 2 + l * SEGS_PER_LAYER;
        let lc = &cache.layers[l];

        // LN2 backward.
        let ln2_g = p.get(base + 14);
        let mut dy1: Vec<Vec<f64>> = vec![vec![0.0; d]; t_slots];
        let mut df2s: Vec<Vec<f64>> = Vec::with_capacity(t_slots);
        for t in 0..t_slots {
            let dres2 = {
                let (dgain, dbias) = (base + 14, base + 15);
                let mut dg_tmp = vec![0.0; d];
                let mut db_tmp = vec![0.0; d];
                let out = layer_norm_backward(
                    &dhs[t],
                    &lc.ln2.xhat[t],
                    lc.ln2.inv_std[t],
                    ln2_g,
                    &mut dg_tmp,
                    &mut db_tmp,
                );
                let g = grad_seg(&layout, grad, dgain);
                for (gv, dv) in g.iter_mut().zip(&dg_tmp) {
                    *gv += dv;
                }
                let b = grad_seg(&layout, grad, dbias);
                for (bv, dv) in b.iter_mut().zip(&db_tmp) {
                    *bv += dv;
                }
                out
            };
            // res2 = y1 + f2
            for i in 0..d {
                dy1[t][i] += dres2[i];
            }
            df2s.push(dres2);
        }

        // Feed-forward backward.
        let w1 = p.get(base + 10);
        let w2 = p.get(base + 12);
        for t in 0..t_slots {
            let df2 = &df2s[t];
            outer_acc(grad_seg(&layout, grad, base + 12), df2, &lc.f1[t], d, dff);
            let db2 = grad_seg(&layout, grad, base + 13);
            for (g, dv) in db2.iter_mut().zip(df2) {
                *g += dv;
            }
            let mut df1 = vec![0.0; dff];
            gemv_t_acc(&mut df1, w2, df2, d, dff);
            for (dv, f) in df1.iter_mut().zip(&lc.f1[t]) {
                if *f <= 0.0 {
                    *dv = 0.0;
                }
            }
            outer_acc(grad_seg(&layout, grad, base + 10), &df1, &lc.y1[t], dff, d);
            let db1 = grad_seg(&layout, grad, base + 11);
            for (g, dv) in db1.iter_mut().zip(&df1) {
                *g += dv;
            }
            gemv_t_acc(&mut dy1[t], w1, &df1, dff, d);
        }

        // LN1 backward.
        let ln1_g = p.get(base + 8);
        let mut dres1: Vec<Vec<f64>> = Vec::with_capacity(t_slots);
        for t in 0..t_slots {
            let mut dg_tmp = vec![0.0; d];
            let mut db_tmp = vec![0.0; d];
            let out = layer_norm_backward(
                &dy1[t],
                &lc.ln1.xhat[t],
                lc.ln1.inv_std[t],
                ln1_g,
                &mut dg_tmp,
                &mut db_tmp,
            );
            let g = grad_seg(&layout, grad, base + 8);
            for (gv, dv) in g.iter_mut().zip(&dg_tmp) {
                *gv += dv;
            }
            let b = grad_seg(&layout, grad, base + 9);
            for (bv, dv) in b.iter_mut().zip(&db_tmp) {
                *bv += dv;
            }
            dres1.push(out);
        }

        // res1 = h_in + attn_out; attention output projection backward.
        let wo = p.get(base + 6);
        let mut dh_in: Vec<Vec<f64>> = dres1.clone();
        let mut dctx: Vec<Vec<f64>> = vec![vec![0.0; d]; t_slots];
        for t in 0..t_slots {
            outer_acc(grad_seg(&layout, grad, base + 6), &dres1[t], &lc.ctx[t], d, d);
            let dbo = grad_seg(&layout, grad, base + 7);
            for (g, dv) in dbo.iter_mut().zip(&dres1[t]) {
                *g += dv;
            }
            gemv_t_acc(&mut dctx[t], wo, &dres1[t], d, d);
        }

        // Attention backward.
        let mut dq = vec![vec![0.0; d]; t_slots];
        let mut dk = vec![vec![0.0; d]; t_slots];
        let mut dv = vec![vec![0.0; d]; t_slots];
        for hd in 0..heads {
            let r = hd * dh..(hd + 1) * dh;
            for t in 0..t_slots {
                let a_row = &lc.attn[hd][t];
                // dA and dV.
                let mut d_a = vec![0.0; t_slots];
                for u in 0..t_slots {
                    let a = a_row[u];
                    if a != 0.0 {
                        d_a[u] = dot(&dctx[t][r.clone()], &lc.v[u][r.clone()]);
                        for (dvv, dc) in dv[u][r.clone()].iter_mut().zip(&dctx[t][r.clone()]) {
                            *dvv += a * dc;
                        }
                    }
                }
                // Softmax backward.
                let dot_da_a: f64 = d_a.iter().zip(a_row).map(|(x, a)| x * a).sum();
                for u in 0..t_slots {
                    let ds = a_row[u] * (d_a[u] - dot_da_a);
                    if ds != 0.0 {
                        for (dqv, kv) in dq[t][r.clone()].iter_mut().zip(&lc.k[u][r.clone()]) {
                            *dqv += ds * kv * scale;
                        }
                        for (dkv, qv) in dk[u][r.clone()].iter_mut().zip(&lc.q[t][r.clone()]) {
                            *dkv += ds * qv * scale;
                        }
                    }
                }
            }
        }

        // Q/K/V projection backward.
        for (proj_idx, dmat) in [(0usize, &dq), (2, &dk), (4, &dv)] {
            let w = p.get(base + proj_idx);
            for t in 0..t_slots {
                outer_acc(
                    grad_seg(&layout, grad, base + proj_idx),
                    &dmat[t],
                    &lc.h_in[t],
                    d,
                    d,
                );
                let db = grad_seg(&layout, grad, base + proj_idx + 1);
                for (g, dvv) in db.iter_mut().zip(&dmat[t]) {
                    *g += dvv;
                }
                gemv_t_acc(&mut dh_in[t], w, &dmat[t], d, d);
            }
        }

        dhs = dh_in;
    }

    // Embedding backward.
    for (t, dxt) in dhs.iter().enumerate() {
        outer_acc(grad_seg(&layout, grad, 0), dxt, &cache.x[t], d, cfg.input_dim);
        let db = grad_seg(&layout, grad, 1);
        for (g, dv) in db.iter_mut().zip(dxt) {
            *g += dv;
        }
    }
}
