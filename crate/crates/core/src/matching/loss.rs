use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{Assignment, CostMatrix, MatchError};
use crate::evaluation::{giou, BBox};

/// Class 0 is the object class, class 1 is "no object".
pub const OBJECT: usize = 0;
pub const NO_OBJECT: usize = 1;

/// Head outputs for one image: per-query class logits and normalised
/// `(cx, cy, w, h)` boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionSet {
    pub logits: Array2<f64>,
    pub probs: Array2<f64>,
    pub boxes: Array2<f64>,
}

impl DetectionSet {
    pub fn new(logits: Array2<f64>, boxes: Array2<f64>) -> Self {
        let mut probs = logits.clone();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        Self { logits, probs, boxes }
    }

    pub fn n_queries(&self) -> usize {
        self.logits.nrows()
    }

    pub fn p_object(&self, q: usize) -> f64 {
        self.probs[[q, OBJECT]]
    }

    pub fn box_at(&self, q: usize) -> [f64; 4] {
        let r = self.boxes.row(q);
        [r[0], r[1], r[2], r[3]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    /// Weight of the no-object term for unmatched queries.
    pub no_object: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 1.0,
            l1: 5.0,
            giou: 2.0,
            no_object: 0.1,
        }
    }
}

fn to_bbox(b: &[f64; 4]) -> BBox {
    BBox::from_cxcywh(b[0], b[1], b[2], b[3])
}

fn check_targets(gt: &[[f64; 4]]) -> Result<(), MatchError> {
    for (index, g) in gt.iter().enumerate() {
        if g.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(MatchError::BoxRange { index, value: *g });
        }
    }
    Ok(())
}

/// `-w_cls·p(object) + w_l1·‖b − g‖₁ + w_giou·(1 − GIoU(b, g))`.
pub fn match_cost(pred: &DetectionSet, gt: &[[f64; 4]], w: &LossWeights) -> Result<CostMatrix, MatchError> {
    check_targets(gt)?;
    let nq = pred.n_queries();
    let mut data = Vec::with_capacity(nq * gt.len());
    for q in 0..nq {
        let b = pred.box_at(q);
        let bb = to_bbox(&b);
        for g in gt {
            let l1: f64 = b.iter().zip(g).map(|(x, y)| (x - y).abs()).sum();
            data.push(-w.class * pred.p_object(q) + w.l1 * l1 + w.giou * (1.0 - giou(&bb, &to_bbox(g))));
        }
    }
    CostMatrix::new(nq, gt.len(), data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SetLoss {
    pub total: f64,
    pub class: f64,
    pub l1: f64,
    pub giou: f64,
    /// d total / d logits, `n_q × 2`.
    pub d_logits: Array2<f64>,
    /// d total / d boxes, `n_q × 4`.
    pub d_boxes: Array2<f64>,
}

/// GIoU of two `(cx, cy, w, h)` boxes and its gradient with respect to the
/// first. Ties between edges take the one-sided derivative.
pub fn giou_grad(p: &[f64; 4], g: &[f64; 4]) -> (f64, [f64; 4]) {
    let (x1, x2) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0);
    let (y1, y2) = (p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (gx1, gx2) = (g[0] - g[2] / 2.0, g[0] + g[2] / 2.0);
    let (gy1, gy2) = (g[1] - g[3] / 2.0, g[1] + g[3] / 2.0);

    let iw_raw = x2.min(gx2) - x1.max(gx1);
    let ih_raw = y2.min(gy2) - y1.max(gy1);
    let (iw, ih) = (iw_raw.max(0.0), ih_raw.max(0.0));
    let inter = iw * ih;
    let ap = p[2] * p[3];
    let union = ap + g[2] * g[3] - inter;
    let cw = x2.max(gx2) - x1.min(gx1);
    let ch = y2.max(gy2) - y1.min(gy1);
    let c = cw * ch;
    if union <= 0.0 || c <= 0.0 {
        return (0.0, [0.0; 4]);
    }
    let value = inter / union + union / c - 1.0;

    let g_union = -inter / (union * union) + 1.0 / c;
    let g_inter = 1.0 / union - g_union;
    let g_area = g_union;
    let g_c = -union / (c * c);

    let (g_iw, g_ih) = if iw_raw > 0.0 && ih_raw > 0.0 {
        (g_inter * ih, g_inter * iw)
    } else {
        (0.0, 0.0)
    };
    let (g_cw, g_ch) = (g_c * ch, g_c * cw);

    // edge derivatives
    let dx2 = g_iw * f64::from(u8::from(x2 <= gx2)) + g_cw * f64::from(u8::from(x2 > gx2));
    let dx1 = -g_iw * f64::from(u8::from(x1 >= gx1)) - g_cw * f64::from(u8::from(x1 < gx1));
    let dy2 = g_ih * f64::from(u8::from(y2 <= gy2)) + g_ch * f64::from(u8::from(y2 > gy2));
    let dy1 = -g_ih * f64::from(u8::from(y1 >= gy1)) - g_ch * f64::from(u8::from(y1 < gy1));

    let grad = [
        dx1 + dx2,
        dy1 + dy2,
        (dx2 - dx1) / 2.0 + g_area * p[3],
        (dy2 - dy1) / 2.0 + g_area * p[2],
    ];
    (value, grad)
}

fn log_softmax_row(logits: &Array2<f64>, q: usize) -> Vec<f64> {
    let row = logits.row(q);
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Matched queries pay cross-entropy towards the object class plus box
/// terms; unmatched ones pay a down-weighted cross-entropy towards
/// "no object". The assignment is treated as a constant.
pub fn set_loss(
    pred: &DetectionSet,
    gt: &[[f64; 4]],
    assignment: &Assignment,
    w: &LossWeights,
) -> Result<SetLoss, MatchError> {
    check_targets(gt)?;
    let nq = pred.n_queries();
    if pred.boxes.dim() != (nq, 4) || pred.logits.ncols() != 2 {
        return Err(MatchError::Shape("detection set must be n_q×2 logits, n_q×4 boxes".into()));
    }
    if assignment.len() != nq.min(gt.len()) {
        return Err(MatchError::Contract(format!(
            "assignment has {} pairs, expected {}",
            assignment.len(),
            nq.min(gt.len())
        )));
    }
    if let Some(&(i, j)) = assignment.pairs().iter().find(|&&(i, j)| i >= nq || j >= gt.len()) {
        return Err(MatchError::Contract(format!("pair ({i}, {j}) out of range")));
    }

    let mut d_logits = Array2::zeros((nq, 2));
    let mut d_boxes = Array2::zeros((nq, 4));
    let (mut class, mut l1, mut giou_term) = (0.0, 0.0, 0.0);
    for q in 0..nq {
        let logp = log_softmax_row(&pred.logits, q);
        let (target, weight) = match assignment.target_of(q) {
            Some(_) => (OBJECT, w.class),
            None => (NO_OBJECT, w.no_object),
        };
        class += -weight * logp[target];
        for k in 0..2 {
            let indicator = if k == target { 1.0 } else { 0.0 };
            d_logits[[q, k]] = weight * (logp[k].exp() - indicator);
        }
        if let Some(j) = assignment.target_of(q) {
            let b = pred.box_at(q);
            let g = &gt[j];
            for k in 0..4 {
                let d = b[k] - g[k];
                l1 += w.l1 * d.abs();
                d_boxes[[q, k]] += w.l1 * if d == 0.0 { 0.0 } else { d.signum() };
            }
            let (gv, gg) = giou_grad(&b, g);
            giou_term += w.giou * (1.0 - gv);
            for k in 0..4 {
                d_boxes[[q, k]] -= w.giou * gg[k];
            }
        }
    }
    Ok(SetLoss {
        total: class + l1 + giou_term,
        class,
        l1,
        giou: giou_term,
        d_logits,
        d_boxes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::hungarian;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn set(logits: Array2<f64>, boxes: Array2<f64>) -> DetectionSet {
        DetectionSet::new(logits, boxes)
    }

    #[test]
    fn identical_prediction_costs_minus_one() {
        let d = set(array![[40.0, -40.0]], array![[0.5, 0.5, 0.2, 0.2]]);
        let c = match_cost(&d, &[[0.5, 0.5, 0.2, 0.2]], &LossWeights::default()).unwrap();
        assert!((c.get(0, 0) + 1.0).abs() < 1e-12);
        let far = set(array![[-40.0, 40.0]], array![[0.1, 0.1, 0.1, 0.1]]);
        let c = match_cost(&far, &[[0.9, 0.9, 0.1, 0.1]], &LossWeights::default()).unwrap();
        assert!(c.get(0, 0) > 0.0);
        assert!(match_cost(&far, &[], &LossWeights::default()).unwrap().is_empty());
        assert!(match_cost(&far, &[[1.2, 0.5, 0.1, 0.1]], &LossWeights::default()).is_err());
    }

    #[test]
    fn perfect_prediction_loss_vanishes() {
        let gt = [[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.1, 0.3]];
        let boxes = array![[0.3, 0.3, 0.2, 0.2], [0.5, 0.5, 0.5, 0.5], [0.7, 0.6, 0.1, 0.3]];
        let logits = array![[30.0, -30.0], [-30.0, 30.0], [30.0, -30.0]];
        let d = set(logits, boxes);
        let w = LossWeights::default();
        let good = Assignment::new(vec![(0, 0), (2, 1)]).unwrap();
        let swapped = Assignment::new(vec![(0, 1), (2, 0)]).unwrap();
        let l = set_loss(&d, &gt, &good, &w).unwrap();
        assert!(l.total < 1e-20);
        assert!(l.total < set_loss(&d, &gt, &swapped, &w).unwrap().total);
        let (h, _) = hungarian(&match_cost(&d, &gt, &w).unwrap()).unwrap();
        assert_eq!(h, good);
    }

    #[test]
    fn empty_scene_limit() {
        let d = set(array![[-30.0, 30.0], [-30.0, 30.0]], array![[0.5, 0.5, 0.1, 0.1], [0.2, 0.2, 0.1, 0.1]]);
        let l = set_loss(&d, &[], &Assignment::default(), &LossWeights::default()).unwrap();
        assert!(l.total >= 0.0 && l.total < 1e-20);
    }

    #[test]
    fn contract_errors() {
        let d = set(array![[0.0, 0.0]], array![[0.5, 0.5, 0.1, 0.1]]);
        let gt = [[0.5, 0.5, 0.1, 0.1]];
        assert!(set_loss(&d, &gt, &Assignment::default(), &LossWeights::default()).is_err());
        let bad = Assignment::new(vec![(0, 3)]).unwrap();
        assert!(set_loss(&d, &gt, &bad, &LossWeights::default()).is_err());
    }

    #[test]
    fn giou_grad_value_matches_geometry() {
        let p = [0.4, 0.5, 0.3, 0.2];
        let g = [0.5, 0.45, 0.2, 0.3];
        let (v, _) = giou_grad(&p, &g);
        assert!((v - giou(&to_bbox(&p), &to_bbox(&g))).abs() < 1e-14);
    }

    fn random_instance(seed: u64, nq: usize, m: usize) -> (DetectionSet, Vec<[f64; 4]>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let logits = Array2::from_shape_fn((nq, 2), |_| rng.gen_range(-2.0..2.0));
        let boxes = Array2::from_shape_fn((nq, 4), |(_, k)| {
            if k < 2 {
                rng.gen_range(0.2..0.8)
            } else {
                rng.gen_range(0.05..0.4)
            }
        });
        let gt = (0..m)
            .map(|_| {
                [
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.2..0.8),
                    rng.gen_range(0.05..0.4),
                    rng.gen_range(0.05..0.4),
                ]
            })
            .collect();
        (set(logits, boxes), gt)
    }

    /// Central differences on logits and boxes.
    fn fd_error(d: &DetectionSet, gt: &[[f64; 4]], a: &Assignment) -> f64 {
        let w = LossWeights::default();
        let l = set_loss(d, gt, a, &w).unwrap();
        let h = 1e-6;
        let f = |d: &DetectionSet| set_loss(d, gt, a, &w).unwrap().total;
        let mut worst: f64 = 0.0;
        let scale = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for idx in ndarray::indices((d.n_queries(), 2)) {
            let mut p = d.logits.clone();
            p[idx] += h;
            let mut m = d.logits.clone();
            m[idx] -= h;
            let num = (f(&set(p, d.boxes.clone())) - f(&set(m, d.boxes.clone()))) / (2.0 * h);
            worst = worst.max(scale(l.d_logits[idx], num));
        }
        for idx in ndarray::indices((d.n_queries(), 4)) {
            let mut p = d.boxes.clone();
            p[idx] += h;
            let mut m = d.boxes.clone();
            m[idx] -= h;
            let num = (f(&set(d.logits.clone(), p)) - f(&set(d.logits.clone(), m))) / (2.0 * h);
            worst = worst.max(scale(l.d_boxes[idx], num));
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let w = LossWeights::default();
        for seed in 0..20 {
            let (d, gt) = random_instance(seed, 5, 1 + seed as usize % 3);
            let (a, _) = hungarian(&match_cost(&d, &gt, &w).unwrap()).unwrap();
            let err = fd_error(&d, &gt, &a);
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hungarian_assignment_minimises_loss(seed in 0u64..10_000, m in 0usize..4) {
            // The matching cost scores classes by -p while the loss uses
            // -log p, so optimality is only guaranteed when every query
            // carries the same logits and the class terms cancel.
            let w = LossWeights::default();
            let (d, gt) = random_instance(seed, 4, m);
            let shared = d.logits.row(0).to_owned();
            let logits = Array2::from_shape_fn((4, 2), |(_, c)| shared[c]);
            let d = set(logits, d.boxes.clone());
            let cost = match_cost(&d, &gt, &w).unwrap();
            let (a, _) = hungarian(&cost).unwrap();
            let best = set_loss(&d, &gt, &a, &w).unwrap().total;
            // every injective alternative for 4 queries
            let mut others = vec![Vec::new()];
            for j in 0..m {
                let mut next = Vec::new();
                for partial in &others {
                    for q in 0..4 {
                        let p: &Vec<(usize, usize)> = partial;
                        if p.iter().all(|&(pq, _)| pq != q) {
                            let mut e = p.clone();
                            e.push((q, j));
                            next.push(e);
                        }
                    }
                }
                others = next;
            }
            for o in others {
                let alt = Assignment::new(o).unwrap();
                let l = set_loss(&d, &gt, &alt, &w).unwrap().total;
                prop_assert!(best <= l + 1e-9);
            }
        }

        #[test]
        fn loss_is_permutation_covariant(seed in 0u64..10_000, m in 0usize..4, rot in 1usize..5) {
            let w = LossWeights::default();
            let (d, gt) = random_instance(seed, 5, m);
            let (a, _) = hungarian(&match_cost(&d, &gt, &w).unwrap()).unwrap();
            let perm: Vec<usize> = (0..5).map(|q| (q + rot) % 5).collect();
            // new query k holds old query perm[k]
            let logits = Array2::from_shape_fn((5, 2), |(k, c)| d.logits[[perm[k], c]]);
            let boxes = Array2::from_shape_fn((5, 4), |(k, c)| d.boxes[[perm[k], c]]);
            let inv = |old: usize| perm.iter().position(|&p| p == old).unwrap();
            let pa = Assignment::new(a.pairs().iter().map(|&(q, j)| (inv(q), j)).collect()).unwrap();
            let l1 = set_loss(&d, &gt, &a, &w).unwrap().total;
            let l2 = set_loss(&set(logits, boxes), &gt, &pa, &w).unwrap().total;
            prop_assert!((l1 - l2).abs() < 1e-12);
        }
    }
}
