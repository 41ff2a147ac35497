//! Hungarian assignment between predicted slots and targets, and the set
//! loss built on it.

use ndarray::array;
use nerdd::matching::{hungarian, match_cost, set_loss, CostMatrix, DetectionSet, LossWeights};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let c = CostMatrix::from_rows(&[vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]])?;
    let (a, cost) = hungarian(&c)?;
    println!("assignment {:?}, cost {cost}", a.pairs());

    // three query slots, two targets in normalised (cx, cy, w, h)
    let pred = DetectionSet::new(
        array![[2.0, -1.0], [-1.0, 1.0], [1.5, -0.5]],
        array![[0.30, 0.30, 0.10, 0.10], [0.5, 0.5, 0.2, 0.2], [0.72, 0.70, 0.12, 0.10]],
    );
    let gt = [[0.3, 0.3, 0.1, 0.1], [0.7, 0.7, 0.1, 0.1]];
    let w = LossWeights::default();
    let (a, _) = hungarian(&match_cost(&pred, &gt, &w)?)?;
    let l = set_loss(&pred, &gt, &a, &w)?;
    println!("matched {:?}", a.pairs());
    println!("loss {:.4} = class {:.4} + l1 {:.4} + giou {:.4}", l.total, l.class, l.l1, l.giou);
    Ok(())
}
