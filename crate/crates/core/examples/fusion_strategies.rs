//! Every fusion strategy and cut-off on one event/RGB pair, plus the skip
//! identity of an injection block with zeroed value/output projections.

use nerdd::fusion::{
    asymmetric_inject, forward_detect, toy_dataset, valid_pairs, FusionConfig, ParamStore, TokenSet,
};
use ndarray::Array2;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sample = &toy_dataset(0)[0];
    for (s, c) in valid_pairs() {
        let cfg = FusionConfig { d: 16, patch: 8, ..FusionConfig::default() }.with_strategy(s, c);
        let ps = ParamStore::new(&cfg, 0)?;
        let det = forward_detect(&sample.ev, &sample.rgb, &ps)?;
        let best = (0..det.n_queries()).map(|q| det.p_object(q)).fold(0.0, f64::max);
        println!("{:<15} {:<9} {:>6} params, max p(object) {best:.3}", s.name(), c.name(), ps.num_scalars());
    }

    let cfg = FusionConfig { d: 8, heads: 2, ..FusionConfig::default() }
        .with_strategy(nerdd::fusion::Strategy::AsymRgbToEv, nerdd::fusion::Cutoff::Encoder);
    let mut ps = ParamStore::new(&cfg, 1)?;
    let block = "fuse_a";
    for p in ["wv", "bv", "wo", "bo"] {
        ps.get_mut(&format!("{block}.{p}")).unwrap().fill(0.0);
    }
    let main = TokenSet::new(Array2::from_shape_fn((6, 8), |(i, j)| (i * 8 + j) as f64 * 0.1))?;
    let comp = TokenSet::new(Array2::from_elem((6, 8), 0.5))?;
    let out = asymmetric_inject(&main, &comp, &ps, block)?;
    println!("zeroed `{block}` returns its main operand: {}", out == main);
    Ok(())
}
