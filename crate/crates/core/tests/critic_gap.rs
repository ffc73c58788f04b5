//! Long-running: full default benchmark, three seeds in parallel.

use sbp_core::bgan::{train_bgan, BganHyper, CorrectionSetup};
use sbp_core::bias::global_bias;
use sbp_core::classic::{train_classic, ClassicHyper};
use sbp_core::data::{generate, DatasetSpec};
use sbp_core::phi::{PhiEncoder, PhiVariant};
use sbp_core::rng::Rng;

fn gap_ends(seed: u64) -> (f64, f64) {
    let ds = generate(&DatasetSpec { seed, ..DatasetSpec::default() }).unwrap();
    let mut run = train_classic(&ds, &ClassicHyper::default(), seed).unwrap();
    run.model.freeze();
    let setup = CorrectionSetup {
        phi: PhiEncoder::new(PhiVariant::Trans1, ds.feature_dim(), ds.m_classes(), &mut Rng::new(seed).fork(30)).unwrap(),
        gb: global_bias(&ds.class_weights, 1.0, 1e-3).unwrap(),
        eps_c: 1e-4,
    };
    let b = train_bgan(&run.model, &setup, &ds, &BganHyper::default(), seed).unwrap();
    let n = b.trace.len();
    let q = n / 10;
    let mean = |r: &[sbp_core::bgan::IterationRecord]| r.iter().map(|x| x.critic_gap).sum::<f64>() / r.len() as f64;
    (mean(&b.trace[..q]), mean(&b.trace[n - q..]))
}

#[test]
fn critic_gap_shrinks_on_default_benchmark() {
    let ends: Vec<(f64, f64)> = std::thread::scope(|s| {
        let hs: Vec<_> = (1..=3).map(|seed| s.spawn(move || gap_ends(seed))).collect();
        hs.into_iter().map(|h| h.join().unwrap()).collect()
    });
    for (seed, (first, last)) in (1..=3).zip(&ends) {
        assert!(last < first, "seed {seed}: gap {first:.3e} -> {last:.3e}");
    }
}
