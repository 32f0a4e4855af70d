use std::time::Instant;

use evinterp::cli::config::{AppConfig, Preset};
use evinterp::eval::{build_variant, evaluate, Aggregation};
use evinterp::event::simulate_events;
use evinterp::model::VariantKind;
use evinterp::scene::{make_skip_dataset, render, Dataset, InterpolationSample};
use evinterp::train::train;

fn split(ds: &Dataset) -> (Vec<InterpolationSample>, Vec<InterpolationSample>) {
    let mut tr = Vec::new();
    let mut va = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if ds.samples.len() >= 4 && i % 4 == 3 {
            va.push(s.clone());
        } else {
            tr.push(s.clone());
        }
    }
    (tr, va)
}

#[test]
fn probe_desk_margins() {
    let cfg = AppConfig::preset(Preset::Desk);
    let frames = render(&cfg.scene).unwrap();
    let events = simulate_events(&frames, &cfg.simulator).unwrap();
    println!("frames {} events {}", frames.len(), events.len());
    let samples = make_skip_dataset(&frames, &events, cfg.skip).unwrap();
    let ds = Dataset::new(cfg.skip, cfg.seed, samples).unwrap();
    println!("samples {}", ds.samples.len());
    let (tr, va) = split(&ds);
    let val_ds = Dataset::new(cfg.skip, cfg.seed, va.clone()).unwrap();

    for kind in VariantKind::all() {
        let t0 = Instant::now();
        let mut bv = build_variant(kind, &cfg.model, 7).unwrap();
        let ubv = build_variant(kind, &cfg.model, 7).unwrap();
        let uw = evaluate(ubv.model_fn(), &ds, Aggregation::Whole).unwrap();
        let uv = evaluate(ubv.model_fn(), &val_ds, Aggregation::Center).unwrap();
        let mut tc = cfg.train.clone();
        tc.seed = 7;
        let report = train(&bv.model, &mut bv.store, &tr, &va, &tc, None).unwrap();
        let whole = evaluate(bv.model_fn(), &ds, Aggregation::Whole).unwrap();
        let center = evaluate(bv.model_fn(), &ds, Aggregation::Center).unwrap();
        let tv = evaluate(bv.model_fn(), &val_ds, Aggregation::Center).unwrap();
        let peak = report
            .records
            .iter()
            .filter_map(|r| r.val_psnr)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{}: whole {:.3} center {:.3} cval {:.3} peak_cval {:.3} untrained_whole {:.3} untrained_cval {:.3} [{:.0}s]",
            kind.name(),
            whole.psnr,
            center.psnr,
            tv.psnr,
            peak,
            uw.psnr,
            uv.psnr,
            t0.elapsed().as_secs_f64()
        );
        for r in report.records.iter().filter(|r| r.epoch % 10 == 0 || r.epoch == 59) {
            println!(
                "  epoch {:2} total {:.5} cycle {:.5} val {:?}",
                r.epoch,
                r.total,
                r.cycle,
                r.val_psnr.map(|v| (v * 100.0).round() / 100.0)
            );
        }
    }
}
