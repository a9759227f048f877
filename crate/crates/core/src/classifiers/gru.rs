//! Stacked gated-recurrent-unit classifier with mask skipping.
//!
//! Gate layout follows the classical double-bias convention: per layer the
//! input and recurrent projections each carry a bias, with the reset (r),
//! update (z) and candidate (n) gates stacked in that row order:
//!
//!   r = sigmoid(W_ir x + b_ir + W_hr h + b_hr)
//!   z = sigmoid(W_iz x + b_iz + W_hz h + b_hz)
//!   n = tanh(W_in x + b_in + r . (W_hn h + b_hn))
//!   h' = (1 - z) . n + z . h
//!
//! Slots whose presence mask is false are skipped entirely: they contribute
//! no state update and no gradient. The final top-layer hidden state feeds
//! the prediction heads.

use super::linalg::{gemv, gemv_t_acc, outer_acc, sigmoid};
use super::{grad_seg, layout_of, ClassifierConfig, ClassifierError, LayoutBuilder, LayoutSeg, Segments};

pub(crate) fn layout(cfg: &ClassifierConfig) -> Vec<LayoutSeg> {
    let h = cfg.n_hidden;
    let mut b = LayoutBuilder::new();
    for l in 0..cfg.n_layers {
        let x_dim = if l == 0 { cfg.input_dim } else { h };
        b.seg(format!("gru{l}.weight_ih"), 3 * h * x_dim, x_dim);
        b.seg(format!("gru{l}.weight_hh"), 3 * h * h, h);
        b.seg(format!("gru{l}.bias_ih"), 3 * h, h);
        b.seg(format!("gru{l}.bias_hh"), 3 * h, h);
    }
    for k in 0..cfg.head_count() {
        b.seg(format!("head{k}.weight"), 2 * h, h);
        b.seg(format!("head{k}.bias"), 2, h);
    }
    b.finish()
}

const SEGS_PER_LAYER: usize = 4;

pub(crate) struct Cache {
    /// Inputs of the processed (unmasked) slots, in order.
    xs: Vec<Vec<f64>>,
    /// h[l][j]: hidden state of layer l after the j-th processed slot.
    h: Vec<Vec<Vec<f64>>>,
    /// Gate activations per layer per processed slot.
    r: Vec<Vec<Vec<f64>>>,
    z: Vec<Vec<Vec<f64>>>,
    n: Vec<Vec<Vec<f64>>>,
    /// Recurrent candidate pre-activation W_hn h + b_hn.
    hn: Vec<Vec<Vec<f64>>>,
    final_hidden: Vec<f64>,
}

pub(crate) fn forward(
    cfg: &ClassifierConfig,
    params: &[f64],
    x: &[Vec<f64>],
    mask: &[bool],
) -> Result<(Vec<[f64; 2]>, Cache), ClassifierError> {
    let layout = layout_of(cfg);
    let p = Segments::new(&layout, params);
    let h_dim = cfg.n_hidden;
    let layers = cfg.n_layers;

    let mut cache = Cache {
        xs: Vec::new(),
        h: vec![Vec::new(); layers],
        r: vec![Vec::new(); layers],
        z: vec![Vec::new(); layers],
        n: vec![Vec::new(); layers],
        hn: vec![Vec::new(); layers],
        final_hidden: vec![0.0; h_dim],
    };

    let mut state: Vec<Vec<f64>> = vec![vec![0.0; h_dim]; layers];
    let mut a_ih = vec![0.0; 3 * h_dim];
    let mut a_hh = vec![0.0; 3 * h_dim];

    for (slot, input) in x.iter().enumerate() {
        if !mask[slot] {
            continue;
        }
        cache.xs.push(input.clone());
        let mut layer_in: Vec<f64> = input.clone();
        for l in 0..layers {
            let x_dim = if l == 0 { cfg.input_dim } else { h_dim };
            let base = l * SEGS_PER_LAYER;
            let (w_ih, w_hh) = (p.get(base), p.get(base + 1));
            let (b_ih, b_hh) = (p.get(base + 2), p.get(base + 3));
            let h_prev = &state[l];

            gemv(&mut a_ih, w_ih, &layer_in, 3 * h_dim, x_dim);
            gemv(&mut a_hh, w_hh, h_prev, 3 * h_dim, h_dim);

            let mut r = vec![0.0; h_dim];
            let mut zg = vec![0.0; h_dim];
            let mut n = vec![0.0; h_dim];
            let mut hn = vec![0.0; h_dim];
            let mut h_new = vec![0.0; h_dim];
            for i in 0..h_dim {
                r[i] = sigmoid(a_ih[i] + b_ih[i] + a_hh[i] + b_hh[i]);
                zg[i] = sigmoid(a_ih[h_dim + i] + b_ih[h_dim + i] + a_hh[h_dim + i] + b_hh[h_dim + i]);
                hn[i] = a_hh[2 * h_dim + i] + b_hh[2 * h_dim + i];
                n[i] = (a_ih[2 * h_dim + i] + b_ih[2 * h_dim + i] + r[i] * hn[i]).tanh();
                h_new[i] = (1.0 - zg[i]) * n[i] + zg[i] * h_prev[i];
            }

            cache.r[l].push(r);
            cache.z[l].push(zg);
            cache.n[l].push(n);
            cache.hn[l].push(hn);
            cache.h[l].push(h_new.clone());
            state[l] = h_new.clone();
            layer_in = h_new;
        }
    }

    cache.final_hidden = state[layers - 1].clone();

    let head_base = layers * SEGS_PER_LAYER;
    let mut logits = Vec::with_capacity(cfg.head_count());
    for k in 0..cfg.head_count() {
        let (w, b) = (p.get(head_base + 2 * k), p.get(head_base + 2 * k + 1));
        let mut zl = [0.0; 2];
        gemv(&mut zl, w, &cache.final_hidden, 2, h_dim);
        zl[0] += b[0];
        zl[1] += b[1];
        logits.push(zl);
    }
    Ok((logits, cache))
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
    let h_dim = cfg.n_hidden;
    let layers = cfg.n_layers;
    let head_base = layers * SEGS_PER_LAYER;

    // Heads.
    let mut dfinal = vec![0.0; h_dim];
    for (k, dz) in dlogits.iter().enumerate() {
        outer_acc(
            grad_seg(&layout, grad, head_base + 2 * k),
            dz,
            &cache.final_hidden,
            2,
            h_dim,
        );
        let db = grad_seg(&layout, grad, head_base + 2 * k + 1);
        db[0] += dz[0];
        db[1] += dz[1];
        gemv_t_acc(&mut dfinal, p.get(head_base + 2 * k), dz, 2, h_dim);
    }

    let steps = cache.xs.len();
    if steps == 0 {
        return;
    }

    // dh[l]: gradient wrt the hidden state of layer l after the slot
    // currently being processed.
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; h_dim]; layers];
    dh[layers - 1] = dfinal;

    let zeros = vec![0.0; h_dim];
    for j in (0..steps).rev() {
        for l in (0..layers).rev() {
            let x_dim = if l == 0 { cfg.input_dim } else { h_dim };
            let base = l * SEGS_PER_LAYER;
            let (w_ih, w_hh) = (p.get(base), p.get(base + 1));
            let h_prev: &[f64] = if j == 0 { &zeros } else { &cache.h[l][j - 1] };
            let x_in: &[f64] = if l == 0 { &cache.xs[j] } else { &cache.h[l - 1][j] };
            let (r, z, n, hn) = (
                &cache.r[l][j],
                &cache.z[l][j],
                &cache.n[l][j],
                &cache.hn[l][j],
            );
            let dh_l = std::mem::replace(&mut dh[l], vec![0.0; h_dim]);

            // Gate pre-activation gradients, stacked [r; z; n].
            let mut dpre_i = vec![0.0; 3 * h_dim]; // wrt W_ih x + b_ih rows
            let mut dpre_h = vec![0.0; 3 * h_dim]; // wrt W_hh h + b_hh rows
            let mut dh_prev = vec![0.0; h_dim];
            for i in 0..h_dim {
                let dzi = dh_l[i] * (h_prev[i] - n[i]);
                let dni = dh_l[i] * (1.0 - z[i]);
                dh_prev[i] = dh_l[i] * z[i];

                let dn_pre = dni * (1.0 - n[i] * n[i]);
                let dri = dn_pre * hn[i];
                let dz_pre = dzi * z[i] * (1.0 - z[i]);
                let dr_pre = dri * r[i] * (1.0 - r[i]);

                dpre_i[i] = dr_pre;
                dpre_i[h_dim + i] = dz_pre;
                dpre_i[2 * h_dim + i] = dn_pre;
                dpre_h[i] = dr_pre;
                dpre_h[h_dim + i] = dz_pre;
                dpre_h[2 * h_dim + i] = dn_pre * r[i];
            }

            outer_acc(grad_seg(&layout, grad, base), &dpre_i, x_in, 3 * h_dim, x_dim);
            outer_acc(grad_seg(&layout, grad, base + 1), &dpre_h, h_prev, 3 * h_dim, h_dim);
            let db_ih = grad_seg(&layout, grad, base + 2);
            for (g, d) in db_ih.iter_mut().zip(&dpre_i) {
                *g += d;
            }
            let db_hh = grad_seg(&layout, grad, base + 3);
            for (g, d) in db_hh.iter_mut().zip(&dpre_h) {
                *g += d;
            }

            gemv_t_acc(&mut dh_prev, w_hh, &dpre_h, 3 * h_dim, h_dim);
            dh[l] = dh_prev;

            if l > 0 {
                let mut dx = vec![0.0; x_dim];
                gemv_t_acc(&mut dx, w_ih, &dpre_i, 3 * h_dim, x_dim);
                for (g, d) in dh[l - 1].iter_mut().zip(&dx) {
                    *g += d;
                }
            }
        }
    }
}
