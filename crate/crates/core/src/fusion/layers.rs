use ndarray::{Array2, Axis};

use super::attention::{add_grad, affine, affine_backward, param};
use super::params::{Init, ParamSpec, Tensors};
use super::{DetectionSet, FusionError, MultiImage, ParamStore, TokenSet};

/// Fixed 2D sinusoidal term for a `gh × gw` token grid: the first half of
/// the width encodes the row, the second half the column.
pub fn positional_encoding(gh: usize, gw: usize, d: usize) -> Array2<f64> {
    let half_r = d / 2;
    let half_c = d - half_r;
    let enc = |pos: usize, j: usize, dim: usize| {
        let pair = (j / 2) as f64 * 2.0;
        let freq = 1.0 / 10000f64.powf(pair / dim.max(1) as f64);
        let a = pos as f64 * freq;
        if j % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    };
    Array2::from_shape_fn((gh * gw, d), |(i, k)| {
        let (r, c) = (i / gw, i % gw);
        if k < half_r {
            enc(r, k, half_r)
        } else {
            enc(c, k - half_r, half_c)
        }
    })
}

pub(crate) fn tokenizer_specs(pre: &str, channels: usize, patch: usize, d: usize) -> Vec<ParamSpec> {
    vec![
        ParamSpec {
            name: format!("{pre}.w"),
            shape: (channels * patch * patch, d),
            init: Init::Uniform,
        },
        ParamSpec {
            name: format!("{pre}.b"),
            shape: (1, d),
            init: Init::Zeros,
        },
    ]
}

/// Row per patch in raster order, zero-padded to a multiple of the patch
/// size. Returns the matrix and the grid size.
pub(crate) fn patchify(img: &MultiImage, patch: usize) -> (Array2<f64>, usize, usize) {
    let gh = img.height.div_ceil(patch);
    let gw = img.width.div_ceil(patch);
    let per = img.channels * patch * patch;
    let mut out = Array2::zeros((gh * gw, per));
    for gy in 0..gh {
        for gx in 0..gw {
            let mut row = out.row_mut(gy * gw + gx);
            let mut k = 0;
            for c in 0..img.channels {
                for py in 0..patch {
                    for px in 0..patch {
                        let (y, x) = (gy * patch + py, gx * patch + px);
                        if y < img.height && x < img.width {
                            row[k] = img.get(c, y, x);
                        }
                        k += 1;
                    }
                }
            }
        }
    }
    (out, gh, gw)
}

pub(crate) fn tokenize_raw(
    t: &Tensors,
    pre: &str,
    patch: usize,
    img: &MultiImage,
) -> Result<(Array2<f64>, Array2<f64>), FusionError> {
    let w = param(t, &format!("{pre}.w"));
    let expected = w.nrows() / (patch * patch);
    if img.channels != expected {
        return Err(FusionError::Shape(format!(
            "{pre} expects {expected} channels, image has {}",
            img.channels
        )));
    }
    if img.height == 0 || img.width == 0 {
        return Err(FusionError::Shape("empty image".into()));
    }
    let (p, gh, gw) = patchify(img, patch);
    let tokens = affine(&p, w, param(t, &format!("{pre}.b"))) + positional_encoding(gh, gw, w.ncols());
    Ok((tokens, p))
}

pub(crate) fn tokenize_backward(g: &mut Tensors, pre: &str, patches: &Array2<f64>, dt: &Array2<f64>) {
    add_grad(g, &format!("{pre}.w"), &patches.t().dot(dt));
    add_grad(g, &format!("{pre}.b"), &dt.sum_axis(Axis(0)).insert_axis(Axis(0)));
}

/// Linear patch embedding plus the positional term. `block` names the
/// tokenizer, `tok_ev` or `tok_rgb`.
pub fn tokenize(img: &MultiImage, params: &ParamStore, block: &str) -> Result<TokenSet, FusionError> {
    let (tokens, _) = tokenize_raw(&params.values, block, params.config().patch, img)?;
    TokenSet::new(tokens)
}

pub(crate) fn head_specs(d: usize) -> Vec<ParamSpec> {
    let spec = |name: &str, shape, init| ParamSpec {
        name: name.to_string(),
        shape,
        init,
    };
    vec![
        spec("head.cls.w", (d, 2), Init::Uniform),
        spec("head.cls.b", (1, 2), Init::Zeros),
        spec("head.box.w1", (d, d), Init::Uniform),
        spec("head.box.b1", (1, d), Init::Zeros),
        spec("head.box.w2", (d, d), Init::Uniform),
        spec("head.box.b2", (1, d), Init::Zeros),
        spec("head.box.w3", (d, 4), Init::Uniform),
        spec("head.box.b3", (1, 4), Init::Zeros),
    ]
}

pub(crate) struct HeadCache {
    e: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    boxes: Array2<f64>,
}

impl HeadCache {
    /// Smallest distance of a hidden pre-activation from the ReLU kink.
    pub(crate) fn min_relu_margin(&self) -> f64 {
        self.z1.iter().chain(self.z2.iter()).fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

pub(crate) fn heads_raw(t: &Tensors, e: &Array2<f64>) -> (DetectionSet, HeadCache) {
    let logits = affine(e, param(t, "head.cls.w"), param(t, "head.cls.b"));
    let z1 = affine(e, param(t, "head.box.w1"), param(t, "head.box.b1"));
    let h1 = relu(&z1);
    let z2 = affine(&h1, param(t, "head.box.w2"), param(t, "head.box.b2"));
    let h2 = relu(&z2);
    let boxes = affine(&h2, param(t, "head.box.w3"), param(t, "head.box.b3")).mapv(|v| 1.0 / (1.0 + (-v).exp()));
    let cache = HeadCache {
        e: e.clone(),
        z1,
        h1,
        z2,
        h2,
        boxes: boxes.clone(),
    };
    (DetectionSet::new(logits, boxes), cache)
}

pub(crate) fn heads_backward(
    t: &Tensors,
    g: &mut Tensors,
    c: &HeadCache,
    d_logits: &Array2<f64>,
    d_boxes: &Array2<f64>,
) -> Array2<f64> {
    let dz3 = d_boxes * &c.boxes.mapv(|s| s * (1.0 - s));
    let dh2 = affine_backward(t, g, "head.box.w3", "head.box.b3", &c.h2, &dz3);
    let dz2 = dh2 * &c.z2.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let dh1 = affine_backward(t, g, "head.box.w2", "head.box.b2", &c.h1, &dz2);
    let dz1 = dh1 * &c.z1.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    affine_backward(t, g, "head.box.w1", "head.box.b1", &c.e, &dz1)
        + affine_backward(t, g, "head.cls.w", "head.cls.b", &c.e, d_logits)
}

/// Class probabilities (softmax of a linear layer) and sigmoid boxes from a
/// three-layer MLP, one row per query. No suppression is applied.
pub fn predict_heads(embeddings: &Array2<f64>, params: &ParamStore) -> Result<DetectionSet, FusionError> {
    if embeddings.ncols() != params.config().d {
        return Err(FusionError::Shape(format!(
            "embeddings have width {}, heads expect {}",
            embeddings.ncols(),
            params.config().d
        )));
    }
    Ok(heads_raw(&params.values, embeddings).0)
}
