use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{forward_detect, loss_and_grad};
use super::params::{zeros_like, Tensors};
use super::{FusionConfig, FusionError, MultiImage, ParamStore};
use crate::evaluation::{coco_map, BBox, Detection, EvalReport, FrameKey, GroundTruth};
use crate::matching::LossWeights;

/// One registered event/RGB image pair with normalised `(cx, cy, w, h)`
/// target boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySample {
    pub key: FrameKey,
    pub ev: MultiImage,
    pub rgb: MultiImage,
    pub boxes: Vec<[f64; 4]>,
}

impl ToySample {
    pub fn pixel_boxes(&self) -> Vec<BBox> {
        let (w, h) = (self.ev.width as f64, self.ev.height as f64);
        self.boxes
            .iter()
            .map(|b| BBox::from_cxcywh(b[0], b[1], b[2], b[3]).scaled(w, h))
            .collect()
    }
}

pub const TOY_SIZE: usize = 64;
pub const TOY_SAMPLES: usize = 10;

/// Ten 64×64 pairs with one or two square-ish targets each. Targets show up
/// as ON events on their leading half and OFF events on the trailing half,
/// and as dark blobs against a sky gradient in RGB, plus sensor noise.
pub fn toy_dataset(seed: u64) -> Vec<ToySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = TOY_SIZE;
    (0..TOY_SAMPLES)
        .map(|i| {
            let n_boxes = 1 + (i % 2);
            let mut boxes: Vec<(usize, usize, usize, usize)> = Vec::new();
            while boxes.len() < n_boxes {
                let w = rng.gen_range(10..=18);
                let h = rng.gen_range(8..=16);
                let x = rng.gen_range(2..s - w - 2);
                let y = rng.gen_range(2..s - h - 2);
                let clear = boxes
                    .iter()
                    .all(|&(bx, by, bw, bh)| x + w + 4 <= bx || bx + bw + 4 <= x || y + h + 4 <= by || by + bh + 4 <= y);
                if clear {
                    boxes.push((x, y, w, h));
                }
            }
            let mut ev = MultiImage::zeros(2, s, s);
            let mut rgb = MultiImage::zeros(3, s, s);
            for y in 0..s {
                for x in 0..s {
                    let sky = 0.55 + 0.35 * (y as f64 / s as f64);
                    rgb.set(0, y, x, sky * 0.7 + rng.gen_range(-0.03..0.03));
                    rgb.set(1, y, x, sky * 0.8 + rng.gen_range(-0.03..0.03));
                    rgb.set(2, y, x, sky + rng.gen_range(-0.03..0.03));
                    if rng.gen_bool(0.02) {
                        ev.set(rng.gen_range(0..2), y, x, rng.gen_range(0.1..0.3));
                    }
                }
            }
            for &(bx, by, bw, bh) in &boxes {
                for y in by..by + bh {
                    for x in bx..bx + bw {
                        let ch = if x < bx + bw / 2 { 0 } else { 1 };
                        ev.set(ch, y, x, rng.gen_range(0.7..1.0));
                        for c in 0..3 {
                            rgb.set(c, y, x, 0.15 + rng.gen_range(-0.05..0.05));
                        }
                    }
                }
            }
            let norm = |(x, y, w, h): (usize, usize, usize, usize)| {
                let f = s as f64;
                [
                    (x as f64 + w as f64 / 2.0) / f,
                    (y as f64 + h as f64 / 2.0) / f,
                    w as f64 / f,
                    h as f64 / f,
                ]
            };
            ToySample {
                key: FrameKey::new("toy", i as u32),
                ev,
                rgb,
                boxes: boxes.into_iter().map(norm).collect(),
            }
        })
        .collect()
}

/// Adam with decoupled weight decay; decay skips biases and norm parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Tensors,
    v: Tensors,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Tensors::new(),
            v: Tensors::new(),
        }
    }

    pub fn step(&mut self, ps: &mut ParamStore, grads: &Tensors) {
        if self.m.is_empty() {
            self.m = zeros_like(&ps.values);
            self.v = zeros_like(&ps.values);
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        for (name, p) in ps.values.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.get_mut(name).unwrap();
            let v = self.v.get_mut(name).unwrap();
            let leaf = name.rsplit('.').next().unwrap_or("");
            let decay = if leaf.starts_with('b') || leaf.starts_with("ln_") {
                0.0
            } else {
                self.weight_decay
            };
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let update = (*m / bc1) / ((*v / bc2).sqrt() + eps);
                *p -= lr * (update + decay * *p);
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub data_seed: u64,
    /// Cosine decay from `lr` down to `lr · final_lr_ratio` over `steps`.
    pub final_lr_ratio: f64,
    pub loss: LossWeights,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 500,
            lr: 3e-3,
            weight_decay: 1e-4,
            seed: 0,
            data_seed: 0,
            final_lr_ratio: 0.05,
            loss: LossWeights::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Mean set loss over the training set before each step.
    pub losses: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub eval: EvalReport,
    pub params: ParamStore,
}

impl TrainReport {
    pub fn loss_reduction(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

fn batch(ps: &ParamStore, data: &[ToySample], w: &LossWeights) -> Result<(f64, Tensors), FusionError> {
    let results: Vec<_> = data
        .par_iter()
        .map(|s| loss_and_grad(ps, &s.ev, &s.rgb, &s.boxes, w))
        .collect::<Result<_, _>>()?;
    let k = data.len() as f64;
    let mut total = zeros_like(&ps.values);
    let mut loss = 0.0;
    // fixed reduction order keeps runs bit-identical
    for (l, _, g) in &results {
        loss += l.total;
        for (name, acc) in total.iter_mut() {
            *acc += &g[name];
        }
    }
    for acc in total.values_mut() {
        *acc /= k;
    }
    Ok((loss / k, total))
}

/// Every query of every sample as a scored detection in pixel units.
pub fn detections_for(ps: &ParamStore, data: &[ToySample]) -> Result<Vec<Detection>, FusionError> {
    let mut out = Vec::new();
    for s in data {
        let det = forward_detect(&s.ev, &s.rgb, ps)?;
        let (w, h) = (s.ev.width as f64, s.ev.height as f64);
        for q in 0..det.n_queries() {
            let b = det.box_at(q);
            let bb = BBox::from_cxcywh(b[0], b[1], b[2], b[3]).scaled(w, h);
            out.push(Detection::new(&s.key, det.p_object(q), bb));
        }
    }
    Ok(out)
}

fn ground_truth(data: &[ToySample]) -> GroundTruth {
    let mut gt = GroundTruth::new();
    for s in data {
        for b in s.pixel_boxes() {
            gt.insert(s.key.clone(), b);
        }
    }
    gt
}

/// Full-batch training on the toy set, then AP on the same set.
/// `on_step(step, loss)` sees the mean loss before each update.
pub fn train_toy(
    cfg: &FusionConfig,
    opts: &TrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainReport, FusionError> {
    let data = toy_dataset(opts.data_seed);
    let mut ps = ParamStore::new(cfg, opts.seed)?;
    let mut opt = AdamW::new(opts.lr, opts.weight_decay);
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let (loss, grads) = batch(&ps, &data, &opts.loss)?;
        if !loss.is_finite() {
            return Err(FusionError::NonFinite(format!("loss at step {step}")));
        }
        on_step(step, loss);
        losses.push(loss);
        let progress = step as f64 / opts.steps.max(1) as f64;
        let floor = opts.final_lr_ratio;
        opt.lr = opts.lr * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        opt.step(&mut ps, &grads);
    }
    let (final_loss, _) = batch(&ps, &data, &opts.loss)?;
    let initial_loss = losses.first().copied().unwrap_or(final_loss);
    let eval = coco_map(&detections_for(&ps, &data)?, &ground_truth(&data)).expect("toy set has targets");
    ps.zero_grad();
    Ok(TrainReport {
        losses,
        initial_loss,
        final_loss,
        eval,
        params: ps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{Cutoff, Strategy};

    #[test]
    fn toy_set_is_seeded_and_well_formed() {
        let a = toy_dataset(3);
        assert_eq!(a, toy_dataset(3));
        assert_ne!(a, toy_dataset(4));
        assert_eq!(a.len(), TOY_SAMPLES);
        for s in &a {
            assert!((1..=2).contains(&s.boxes.len()));
            assert!(s.boxes.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!((s.ev.channels, s.rgb.channels, s.ev.height, s.rgb.width), (2, 3, TOY_SIZE, TOY_SIZE));
        }
    }

    #[test]
    fn adamw_first_step_is_sign_step_plus_decay() {
        let cfg = FusionConfig { d: 8, patch: 8, ..FusionConfig::default() };
        let mut ps = ParamStore::new(&cfg, 0).unwrap();
        let before = ps.values.clone();
        let mut grads = zeros_like(&ps.values);
        for (k, g) in grads.values_mut().enumerate() {
            g.iter_mut().enumerate().for_each(|(i, v)| *v = if (i + k) % 3 == 0 { -0.5 } else { 2.0 });
        }
        let (lr, wd) = (0.01, 0.1);
        AdamW::new(lr, wd).step(&mut ps, &grads);
        for (name, p0) in &before {
            let leaf = name.rsplit('.').next().unwrap();
            let decay = if leaf.starts_with('b') || leaf.starts_with("ln_") { 0.0 } else { wd };
            for ((&a, &b), &g) in p0.iter().zip(ps.values[name].iter()).zip(grads[name].iter()) {
                // bias-corrected moments equal g and g² after one step
                let want = a - lr * (g / (g.abs() + 1e-8) + decay * a);
                assert!((b - want).abs() < 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn short_runs_are_bit_identical() {
        let cfg = FusionConfig { d: 8, patch: 16, n_queries: 3, ..FusionConfig::default() }
            .with_strategy(Strategy::Symmetric, Cutoff::Decoder);
        let opts = TrainOptions { steps: 4, ..TrainOptions::default() };
        let a = train_toy(&cfg, &opts, |_, _| {}).unwrap();
        let b = train_toy(&cfg, &opts, |_, _| {}).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses.len(), 4);
        let c = train_toy(&cfg, &TrainOptions { seed: 1, ..opts }, |_, _| {}).unwrap();
        assert_ne!(a.losses, c.losses);
    }
}
