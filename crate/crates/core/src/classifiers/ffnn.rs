//! Feed-forward classifier over the flattened window.
//!
//! `n_layers` counts every affine layer including the output head, so a
//! 2-layer FFNN is input -> hidden (ReLU) -> 2 logits. Masked slots
//! contribute zero input.

use super::linalg::{gemv, gemv_t_acc, outer_acc};
use super::{grad_seg, layout_of, ClassifierConfig, ClassifierError, LayoutBuilder, LayoutSeg, Segments};

pub(crate) fn layout(cfg: &ClassifierConfig) -> Vec<LayoutSeg> {
    let d_in = cfg.input_dim * cfg.context_slots;
    let h = cfg.n_hidden;
    let mut b = LayoutBuilder::new();
    if cfg.n_layers == 1 {
        for k in 0..cfg.head_count() {
            b.seg(format!("head{k}.weight"), 2 * d_in, d_in);
            b.seg(format!("head{k}.bias"), 2, d_in);
        }
        return b.finish();
    }
    b.seg("layer0.weight".into(), h * d_in, d_in);
    b.seg("layer0.bias".into(), h, d_in);
    for l in 1..cfg.n_layers - 1 {
        b.seg(format!("layer{l}.weight"), h * h, h);
        b.seg(format!("layer{l}.bias"), h, h);
    }
    for k in 0..cfg.head_count() {
        b.seg(format!("head{k}.weight"), 2 * h, h);
        b.seg(format!("head{k}.bias"), 2, h);
    }
    b.finish()
}

pub(crate) struct Cache {
    /// Flattened (mask-zeroed) input.
    input: Vec<f64>,
    /// Post-ReLU activations per hidden layer.
    hidden: Vec<Vec<f64>>,
}

pub(crate) fn forward(
    cfg: &ClassifierConfig,
    params: &[f64],
    x: &[Vec<f64>],
    mask: &[bool],
) -> Result<(Vec<[f64; 2]>, Cache), ClassifierError> {
    let layout = layout_of(cfg);
    let p = Segments::new(&layout, params);
    let d_in = cfg.input_dim * cfg.context_slots;
    let h = cfg.n_hidden;

    let mut input = vec![0.0; d_in];
    for (i, slot) in x.iter().enumerate() {
        if mask[i] {
            input[i * cfg.input_dim..(i + 1) * cfg.input_dim].copy_from_slice(slot);
        }
    }

    let n_hidden_layers = cfg.n_layers - 1;
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_hidden_layers);
    let mut cur = &input;
    for l in 0..n_hidden_layers {
        let (w, b) = (p.get(2 * l), p.get(2 * l + 1));
        let cols = if l == 0 { d_in } else { h };
        let mut out = vec![0.0; h];
        gemv(&mut out, w, cur, h, cols);
        for (o, bias) in out.iter_mut().zip(b) {
            *o = (*o + bias).max(0.0);
        }
        hidden.push(out);
        cur = hidden.last().unwrap();
    }

    let head_base = 2 * n_hidden_layers;
    let last_dim = if n_hidden_layers == 0 { d_in } else { h };
    let mut logits = Vec::with_capacity(cfg.head_count());
    for k in 0..cfg.head_count() {
        let (w, b) = (p.get(head_base + 2 * k), p.get(head_base + 2 * k + 1));
        let mut z = [0.0; 2];
        gemv(&mut z, w, cur, 2, last_dim);
        z[0] += b[0];
        z[1] += b[1];
        logits.push(z);
    }

    Ok((logits, Cache { input, hidden }))
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
    let d_in = cfg.input_dim * cfg.context_slots;
    let h = cfg.n_hidden;
    let n_hidden_layers = cfg.n_layers - 1;
    let head_base = 2 * n_hidden_layers;
    let last_dim = if n_hidden_layers == 0 { d_in } else { h };
    let last: &[f64] = cache.hidden.last().unwrap_or(&cache.input);

    let mut dlast = vec![0.0; last_dim];
    for (k, dz) in dlogits.iter().enumerate() {
        outer_acc(
            grad_seg(&layout, grad, head_base + 2 * k),
            dz,
            last,
            2,
            last_dim,
        );
        let db = grad_seg(&layout, grad, head_base + 2 * k + 1);
        db[0] += dz[0];
        db[1] += dz[1];
        gemv_t_acc(&mut dlast, p.get(head_base + 2 * k), dz, 2, last_dim);
    }

    // Back through the hidden stack.
    let mut dcur = dlast;
    for l in (0..n_hidden_layers).rev() {
        let act = &cache.hidden[l];
        for (d, a) in dcur.iter_mut().zip(act) {
            if *a <= 0.0 {
                *d = 0.0;
            }
        }
        let below: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let cols = if l == 0 { d_in } else { h };
        outer_acc(grad_seg(&layout, grad, 2 * l), &dcur, below, h, cols);
        let db = grad_seg(&layout, grad, 2 * l + 1);
        for (g, d) in db.iter_mut().zip(&dcur) {
            *g += d;
        }
        let mut dbelow = vec![0.0; cols];
        gemv_t_acc(&mut dbelow, p.get(2 * l), &dcur, h, cols);
        dcur = dbelow;
    }
}
