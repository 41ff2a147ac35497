use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{attention, attention_backward};
use super::layers::{heads_backward, heads_raw, tokenize_backward, tokenize_raw};
use super::network::{backward, decoder_backward, decoder_forward, forward_traced};
use super::params::{zeros_like, Tensors};
use super::{Cutoff, FusionConfig, FusionError, MultiImage, ParamStore, Strategy};
use crate::matching::{hungarian, match_cost, set_loss, Assignment, DetectionSet, LossWeights};

pub const GRAD_CHECK_OPS: [&str; 8] = [
    "tokenize",
    "self_attention_encode",
    "pool_fuse",
    "asymmetric_inject",
    "symmetric_fuse",
    "decode_queries",
    "predict_heads",
    "forward_detect",
];

const STEP: f64 = 1e-3;
/// Inputs are redrawn until every ReLU pre-activation in the box head, and
/// every matched box coordinate and edge, is at least this far from its
/// kink, so that no difference stencil straddles one.
const KINK_MARGIN: f64 = 10.0 * STEP;
/// Denominator floor so that all-zero gradient tensors compare as equal.
const FLOOR: f64 = 1e-6;
/// Image draws per parameter draw before the biases are redrawn instead.
const IMAGE_TRIES: usize = 200;

/// Small configuration with every block present: width 8, two heads,
/// 4-pixel patches on 8×12 images (6 tokens) and 5 queries.
fn small_config(strategy: Strategy, cutoff: Cutoff, layer_norm: bool) -> FusionConfig {
    FusionConfig {
        d: 8,
        heads: 2,
        patch: 4,
        n_queries: 5,
        strategy,
        cutoff,
        layer_norm,
        ..FusionConfig::default()
    }
}

fn random_image(rng: &mut ChaCha8Rng, channels: usize) -> MultiImage {
    let mut img = MultiImage::zeros(channels, 8, 12);
    for v in img.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    img
}

fn random(rng: &mut ChaCha8Rng, shape: (usize, usize), scale: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Parameters with biases and gains perturbed away from their initial
/// constants so that every term is exercised.
fn store(cfg: &FusionConfig, rng: &mut ChaCha8Rng, seed: u64) -> Result<ParamStore, FusionError> {
    let mut ps = ParamStore::new(cfg, seed)?;
    for (name, v) in ps.values.iter_mut() {
        let leaf = name.rsplit('.').next().unwrap_or("");
        if leaf.starts_with('b') || leaf.starts_with("ln_") {
            *v += &random(rng, v.dim(), 0.3);
        }
    }
    Ok(ps)
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

/// Worst per-tensor `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, floor)` over all entries of
/// `vars`.
fn compare(vars: &Tensors, eval: &dyn Fn(&Tensors) -> f64, analytic: &Tensors) -> f64 {
    let mut worst: f64 = 0.0;
    for (name, v) in vars {
        let a = &analytic[name];
        let mut num = Array2::zeros(v.dim());
        for idx in ndarray::indices(v.dim()) {
            let mut plus = vars.clone();
            plus.get_mut(name).unwrap()[idx] += STEP;
            let mut minus = vars.clone();
            minus.get_mut(name).unwrap()[idx] -= STEP;
            num[idx] = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        let inf = |m: &Array2<f64>| m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let diff = inf(&(a - &num));
        let denom = inf(a).max(inf(&num)).max(FLOOR);
        worst = worst.max(diff / denom);
    }
    worst
}

fn with_inputs(ps: &ParamStore, inputs: Vec<(&str, Array2<f64>)>) -> Tensors {
    let mut vars = ps.values.clone();
    for (k, v) in inputs {
        vars.insert(format!("input.{k}"), v);
    }
    vars
}

fn encode_stack(t: &Tensors, cfg: &FusionConfig, block: &str, x: &Array2<f64>) -> (Array2<f64>, Vec<super::attention::AttnCache>) {
    let mut x = x.clone();
    let mut cs = Vec::new();
    for l in 0..cfg.encoder_layers {
        let (y, c) = attention(t, &format!("{block}.{l}"), cfg.heads, &x, &x);
        x = y;
        cs.push(c);
    }
    (x, cs)
}

/// Worst relative error between analytic and central-difference gradients
/// for `op` (one of [`GRAD_CHECK_OPS`]) on seeded random inputs.
pub fn grad_check(op: &str, seed: u64) -> Result<f64, FusionError> {
    grad_check_with(op, seed, false)
}

pub(crate) fn grad_check_with(op: &str, seed: u64, layer_norm: bool) -> Result<f64, FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config(Strategy::Symmetric, Cutoff::Decoder, layer_norm);
    let ps = store(&cfg, &mut rng, seed)?;
    let (n, d, nq) = (6, cfg.d, cfg.n_queries);
    let heads = cfg.heads;
    let a = random(&mut rng, (n, d), 1.0);
    let b = random(&mut rng, (n, d), 1.0);
    let r = random(&mut rng, (n, d), 1.0);
    let rq = random(&mut rng, (nq, d), 1.0);

    let err = match op {
        "tokenize" => {
            let img = random_image(&mut rng, cfg.ev_channels);
            let vars = ps.values.clone();
            let f = |t: &Tensors| dot(&tokenize_raw(t, "tok_ev", cfg.patch, &img).unwrap().0, &r);
            let mut g = zeros_like(&vars);
            let (_, patches) = tokenize_raw(&vars, "tok_ev", cfg.patch, &img)?;
            tokenize_backward(&mut g, "tok_ev", &patches, &r);
            compare(&vars, &f, &g)
        }
        "self_attention_encode" => {
            let vars = with_inputs(&ps, vec![("a", a)]);
            let f = |t: &Tensors| dot(&encode_stack(t, &cfg, "enc_ev", &t["input.a"]).0, &r);
            let mut g = zeros_like(&vars);
            let (_, cs) = encode_stack(&vars, &cfg, "enc_ev", &vars["input.a"]);
            let mut dx = r.clone();
            for (l, c) in cs.iter().enumerate().rev() {
                let (p, q) = attention_backward(&vars, &mut g, &format!("enc_ev.{l}"), c, &dx);
                dx = p + q;
            }
            g.insert("input.a".into(), dx);
            compare(&vars, &f, &g)
        }
        "pool_fuse" => {
            let mut vars = Tensors::new();
            vars.insert("input.a".into(), a);
            vars.insert("input.b".into(), b);
            let f = |t: &Tensors| dot(&((&t["input.a"] + &t["input.b"]) * 0.5), &r);
            let mut g = Tensors::new();
            g.insert("input.a".into(), &r * 0.5);
            g.insert("input.b".into(), &r * 0.5);
            compare(&vars, &f, &g)
        }
        "asymmetric_inject" => {
            let vars = with_inputs(&ps, vec![("a", a), ("b", b)]);
            let f = |t: &Tensors| dot(&attention(t, "fuse_a", heads, &t["input.a"], &t["input.b"]).0, &r);
            let mut g = zeros_like(&vars);
            let (_, c) = attention(&vars, "fuse_a", heads, &vars["input.a"], &vars["input.b"]);
            let (dm, dc) = attention_backward(&vars, &mut g, "fuse_a", &c, &r);
            g.insert("input.a".into(), dm);
            g.insert("input.b".into(), dc);
            compare(&vars, &f, &g)
        }
        "symmetric_fuse" => {
            let vars = with_inputs(&ps, vec![("a", a), ("b", b)]);
            let fwd = |t: &Tensors| {
                let (fa, ca) = attention(t, "fuse_a", heads, &t["input.a"], &t["input.b"]);
                let (fb, cb) = attention(t, "fuse_b", heads, &t["input.b"], &t["input.a"]);
                ((fa + fb) * 0.5, ca, cb)
            };
            let f = |t: &Tensors| dot(&fwd(t).0, &r);
            let mut g = zeros_like(&vars);
            let (_, ca, cb) = fwd(&vars);
            let half = &r * 0.5;
            let (da1, db1) = attention_backward(&vars, &mut g, "fuse_a", &ca, &half);
            let (db2, da2) = attention_backward(&vars, &mut g, "fuse_b", &cb, &half);
            g.insert("input.a".into(), da1 + da2);
            g.insert("input.b".into(), db1 + db2);
            compare(&vars, &f, &g)
        }
        "decode_queries" => {
            let vars = with_inputs(&ps, vec![("a", a)]);
            let f = |t: &Tensors| dot(&decoder_forward(t, "dec", cfg.decoder_layers, heads, &t["input.a"]).0, &rq);
            let mut g = zeros_like(&vars);
            let (_, cs) = decoder_forward(&vars, "dec", cfg.decoder_layers, heads, &vars["input.a"]);
            let dm = decoder_backward(&vars, &mut g, "dec", &cs, &rq, (n, d));
            g.insert("input.a".into(), dm);
            compare(&vars, &f, &g)
        }
        "predict_heads" => {
            let e = loop {
                let e = random(&mut rng, (nq, d), 1.0);
                if heads_raw(&ps.values, &e).1.min_relu_margin() > KINK_MARGIN {
                    break e;
                }
            };
            let r1 = random(&mut rng, (nq, 2), 1.0);
            let r2 = random(&mut rng, (nq, 4), 1.0);
            let vars = with_inputs(&ps, vec![("e", e)]);
            let f = |t: &Tensors| {
                let (det, _) = heads_raw(t, &t["input.e"]);
                dot(&det.logits, &r1) + dot(&det.boxes, &r2)
            };
            let mut g = zeros_like(&vars);
            let (_, c) = heads_raw(&vars, &vars["input.e"]);
            let de = heads_backward(&vars, &mut g, &c, &r1, &r2);
            g.insert("input.e".into(), de);
            compare(&vars, &f, &g)
        }
        "forward_detect" => detect_loss_check(ps, &cfg, &mut rng, seed)?,
        other => {
            return Err(FusionError::Config(format!(
                "unknown op `{other}`; known: {}",
                GRAD_CHECK_OPS.join(", ")
            )))
        }
    };
    Ok(err)
}

/// Distance of the matched boxes from the non-smooth points of the box
/// loss: L1 zero crossings, coinciding edges, and touching boxes.
fn loss_kink_margin(det: &DetectionSet, gt: &[[f64; 4]], assignment: &Assignment) -> f64 {
    let mut m = f64::INFINITY;
    for &(q, j) in assignment.pairs() {
        let (b, g) = (det.box_at(q), gt[j]);
        let edges = |c: [f64; 4]| [c[0] - c[2] / 2.0, c[0] + c[2] / 2.0, c[1] - c[3] / 2.0, c[1] + c[3] / 2.0];
        let (e, f) = (edges(b), edges(g));
        let gaps = [e[1].min(f[1]) - e[0].max(f[0]), e[3].min(f[3]) - e[2].max(f[2])];
        for d in (0..4).map(|k| b[k] - g[k]).chain((0..4).map(|k| e[k] - f[k])).chain(gaps) {
            m = m.min(d.abs());
        }
    }
    m
}

/// Set loss after the full forward pass against two fixed targets.
fn detect_loss_check(mut ps: ParamStore, cfg: &FusionConfig, rng: &mut ChaCha8Rng, seed: u64) -> Result<f64, FusionError> {
    // some parameter draws keep a head unit near zero whatever the image
    let (ev, rgb) = 'draw: loop {
        for _ in 0..IMAGE_TRIES {
            let ev = random_image(rng, cfg.ev_channels);
            let rgb = random_image(rng, cfg.rgb_channels);
            if forward_traced(&ps, &ev, &rgb)?.1.head_margin() > KINK_MARGIN {
                break 'draw (ev, rgb);
            }
        }
        ps = store(cfg, rng, seed)?;
    };
    let ps = &ps;
    let (det, trace) = forward_traced(ps, &ev, &rgb)?;
    let w = LossWeights::default();
    // the predicted boxes hardly move with the images, so the targets are
    // what gets redrawn
    let (gt, assignment) = loop {
        let gt: Vec<[f64; 4]> = (0..2)
            .map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3)])
            .collect();
        let (assignment, _) = hungarian(&match_cost(&det, &gt, &w)?)?;
        if loss_kink_margin(&det, &gt, &assignment) > KINK_MARGIN {
            break (gt, assignment);
        }
    };
    let loss = set_loss(&det, &gt, &assignment, &w)?;
    let mut g = zeros_like(&ps.values);
    backward(ps, &trace, &loss.d_logits, &loss.d_boxes, &mut g);
    let f = |t: &Tensors| {
        let mut p = ps.clone();
        p.values = t.clone();
        let (det, _) = forward_traced(&p, &ev, &rgb).unwrap();
        set_loss(&det, &gt, &assignment, &w).unwrap().total
    };
    Ok(compare(&ps.values, &f, &g))
}

/// End-to-end check of one `(strategy, cutoff)` configuration.
pub fn detect_grad_check(strategy: Strategy, cutoff: Cutoff, seed: u64) -> Result<f64, FusionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = small_config(strategy, cutoff, false);
    let ps = store(&cfg, &mut rng, seed)?;
    detect_loss_check(ps, &cfg, &mut rng, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_gradients() {
        for op in GRAD_CHECK_OPS {
            let e = grad_check(op, 3).unwrap();
            let tol = match op {
                "pool_fuse" => 1e-10,
                "forward_detect" => 1e-3,
                _ => 1e-4,
            };
            assert!(e < tol, "{op}: {e}");
        }
    }

    #[test]
    fn layer_norm_gradients() {
        for op in ["self_attention_encode", "asymmetric_inject", "forward_detect"] {
            let e = grad_check_with(op, 5, true).unwrap();
            assert!(e < 1e-3, "{op}: {e}");
        }
    }

    #[test]
    fn every_configuration_end_to_end() {
        for (s, c) in crate::fusion::valid_pairs() {
            let e = detect_grad_check(s, c, 2).unwrap();
            assert!(e < 1e-3, "{s}@{c}: {e}");
        }
    }

    #[test]
    fn unknown_op() {
        assert!(grad_check("conv", 0).is_err());
    }
}
