//! Long-running scenarios, run with `cargo test -- --ignored`.

use imprint_lab::runner::{self, bundled};

#[test]
#[ignore]
fn one_shot_at_sixteen_thousand() {
    let mut cfg = bundled("oneshot").unwrap();
    cfg.dataset = runner_batch(&cfg, 16384);
    cfg.trials = 40;
    // A centred interval differences two sums over half the batch, which 32-bit floats
    // cannot resolve to 1e-4 at this size.
    cfg.precision = imprint_lab::config::Precision::F64;
    let r = runner::run(&cfg, None).unwrap();
    assert!(r.summary.all_exact_equal_singletons);
    let want = r.theory.one_shot_probability.unwrap();
    // 40 Bernoulli trials: standard error about 0.076.
    assert!((r.summary.success_rate - want).abs() < 0.25, "{} vs {want}", r.summary.success_rate);
    for t in r.trials.iter().filter(|t| t.exact_count == 1) {
        assert!(t.mean_psnr_exact > 60.0);
    }
}

fn runner_batch(cfg: &imprint_lab::config::ScenarioConfig, n: usize) -> imprint_lab::dataio::DatasetSpec {
    let mut spec = cfg.dataset.clone();
    if let imprint_lab::dataio::DatasetKind::SyntheticGaussian { n: size, .. } = &mut spec.kind {
        *size = n;
    }
    spec
}
