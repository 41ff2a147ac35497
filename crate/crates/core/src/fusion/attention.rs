use ndarray::{s, Array2, Axis};

use super::params::{Init, ParamSpec, Tensors};

pub(crate) fn param<'a>(t: &'a Tensors, name: &str) -> &'a Array2<f64> {
    t.get(name).unwrap_or_else(|| panic!("missing parameter `{name}`"))
}

pub(crate) fn add_grad(g: &mut Tensors, name: &str, delta: &Array2<f64>) {
    match g.get_mut(name) {
        Some(m) => *m += delta,
        None => {
            g.insert(name.to_string(), delta.clone());
        }
    }
}

/// `x·w + b` with `b` a `1 × k` row.
pub(crate) fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Accumulates weight and bias gradients; returns the input gradient.
pub(crate) fn affine_backward(
    t: &Tensors,
    g: &mut Tensors,
    w: &str,
    b: &str,
    x: &Array2<f64>,
    dy: &Array2<f64>,
) -> Array2<f64> {
    add_grad(g, w, &x.t().dot(dy));
    add_grad(g, b, &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
    dy.dot(&param(t, w).t())
}

pub(crate) fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.axis_iter_mut(Axis(0)) {
        let mx = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - mx).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

const LN_EPS: f64 = 1e-5;

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.axis_iter_mut(Axis(0)) {
        let mu = row.sum() / d;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.mapv_inplace(|v| (v - mu) * is);
        inv_std.push(is);
    }
    let out = &xhat * gain + bias;
    (out, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    g: &mut Tensors,
    pre: &str,
    gain: &Array2<f64>,
    c: &LnCache,
    dy: &Array2<f64>,
) -> Array2<f64> {
    add_grad(g, &format!("{pre}.ln_g"), &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
    add_grad(g, &format!("{pre}.ln_b"), &dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
    let dxhat = dy * gain;
    let d = dy.ncols() as f64;
    let mut dx = Array2::zeros(dy.dim());
    for i in 0..dy.nrows() {
        let row = dxhat.row(i);
        let xh = c.xhat.row(i);
        let mean = row.sum() / d;
        let mean_x = row.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / d;
        for k in 0..dy.ncols() {
            dx[[i, k]] = c.inv_std[i] * (row[k] - mean - xh[k] * mean_x);
        }
    }
    dx
}

pub(crate) fn attention_specs(pre: &str, d: usize, layer_norm: bool) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    for p in ["q", "k", "v", "o"] {
        v.push(ParamSpec {
            name: format!("{pre}.w{p}"),
            shape: (d, d),
            init: Init::Uniform,
        });
        v.push(ParamSpec {
            name: format!("{pre}.b{p}"),
            shape: (1, d),
            init: Init::Zeros,
        });
    }
    if layer_norm {
        v.push(ParamSpec {
            name: format!("{pre}.ln_g"),
            shape: (1, d),
            init: Init::Ones,
        });
        v.push(ParamSpec {
            name: format!("{pre}.ln_b"),
            shape: (1, d),
            init: Init::Zeros,
        });
    }
    v
}

pub(crate) struct AttnCache {
    x: Array2<f64>,
    y: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    weights: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln: Option<LnCache>,
}

impl AttnCache {
    pub(crate) fn memory_shape(&self) -> (usize, usize) {
        self.y.dim()
    }

    /// Per-head attention weights, rows over queries.
    #[cfg(test)]
    pub(crate) fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }
}

/// `x + proj_o(softmax(Q Kᵀ/√d_h) V)` with Q from `x`, K and V from `y`,
/// optionally layer-normalised.
pub(crate) fn attention(
    t: &Tensors,
    pre: &str,
    heads: usize,
    x: &Array2<f64>,
    y: &Array2<f64>,
) -> (Array2<f64>, AttnCache) {
    let d = x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let n = |s: &str| format!("{pre}.{s}");
    let q = affine(x, param(t, &n("wq")), param(t, &n("bq")));
    let k = affine(y, param(t, &n("wk")), param(t, &n("bk")));
    let v = affine(y, param(t, &n("wv")), param(t, &n("bv")));
    let mut o = Array2::zeros((x.nrows(), d));
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut a = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut a);
        o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        weights.push(a);
    }
    let r = x + &affine(&o, param(t, &n("wo")), param(t, &n("bo")));
    let (out, ln) = match t.get(&n("ln_g")) {
        Some(gain) => {
            let (out, c) = layer_norm(&r, gain, param(t, &n("ln_b")));
            (out, Some(c))
        }
        None => (r, None),
    };
    let cache = AttnCache {
        x: x.clone(),
        y: y.clone(),
        q,
        k,
        v,
        weights,
        o,
        ln,
    };
    (out, cache)
}

/// Returns gradients for `x` and `y`.
pub(crate) fn attention_backward(
    t: &Tensors,
    g: &mut Tensors,
    pre: &str,
    c: &AttnCache,
    dout: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let n = |s: &str| format!("{pre}.{s}");
    let dr = match &c.ln {
        Some(lc) => layer_norm_backward(g, pre, param(t, &n("ln_g")), lc, dout),
        None => dout.clone(),
    };
    let heads = c.weights.len();
    let d = c.x.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();

    let d_o = affine_backward(t, g, &n("wo"), &n("bo"), &c.o, &dr);
    let mut dq = Array2::zeros(c.q.dim());
    let mut dk = Array2::zeros(c.k.dim());
    let mut dv = Array2::zeros(c.v.dim());
    for (h, a) in c.weights.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let doh = d_o.slice(cols);
        let da = doh.dot(&c.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&doh));
        let mut ds = &da * a;
        let row_dot = ds.sum_axis(Axis(1)).insert_axis(Axis(1));
        ds -= &(a * &row_dot);
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let dx = dr + affine_backward(t, g, &n("wq"), &n("bq"), &c.x, &dq);
    let dy = affine_backward(t, g, &n("wk"), &n("bk"), &c.y, &dk)
        + affine_backward(t, g, &n("wv"), &n("bv"), &c.y, &dv);
    (dx, dy)
}
