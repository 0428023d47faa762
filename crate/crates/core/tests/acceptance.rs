//! Acceptance gate: every criterion at its stated tolerance, one PASS/FAIL
//! line each. Exits non-zero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use signmix_core::experiment::{run_on_corpus, Corpus, ExperimentConfig, Scenario};
use signmix_core::synth::SyntheticSpec;

mod common;
use common::checks::{self, Check};

fn directional_cotraining() -> Check {
    let start = Instant::now();
    let mut cfg = ExperimentConfig::new(Scenario::Cotrain, SyntheticSpec::default());
    cfg.target_shots = Some(3);
    let corpus = Corpus::load(&cfg).map_err(|e| e.to_string())?;
    let co = run_on_corpus(&cfg, Scenario::Cotrain, &corpus).map_err(|e| e.to_string())?;
    let lm = run_on_corpus(&cfg, Scenario::LabelMap, &corpus).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let get = |r: &signmix_core::experiment::Report, name: &str| {
        r.row(name)
            .map(|x| x.accuracy * 100.0)
            .ok_or(format!("missing row {name}"))
    };
    let (base, cot, map) = (
        get(&co, "baseline")?,
        get(&co, "cotrain")?,
        get(&lm, "label-map")?,
    );
    let same_test = co
        .rows
        .iter()
        .chain(&lm.rows)
        .all(|r| r.test_hash == co.rows[0].test_hash);
    let summary = format!("cotrain {cot:.2} baseline {base:.2} label-map {map:.2} in {secs:.1}s");
    if cot - base >= 5.0 && cot - map >= 10.0 && secs < 300.0 && same_test {
        Ok(summary)
    } else {
        Err(format!("{summary}, shared test set {same_test}"))
    }
}

fn grouped_vs_ungrouped() -> Check {
    let spec = SyntheticSpec {
        n_languages: 1,
        confusable_pairs: 5,
        ..SyntheticSpec::default()
    };
    let cfg = ExperimentConfig::new(Scenario::GroupedVsUngrouped, spec);
    let corpus = Corpus::load(&cfg).map_err(|e| e.to_string())?;
    let r =
        run_on_corpus(&cfg, Scenario::GroupedVsUngrouped, &corpus).map_err(|e| e.to_string())?;
    let acc = |name: &str| {
        r.row(name)
            .map(|x| x.accuracy * 100.0)
            .ok_or(format!("missing row {name}"))
    };
    let (grouped, ungrouped) = (acc("grouped")?, acc("ungrouped")?);
    let summary = format!("grouped {grouped:.2} vs ungrouped projected {ungrouped:.2}");
    if grouped >= ungrouped {
        Ok(summary)
    } else {
        Err(summary)
    }
}

type Criterion = (&'static str, fn() -> Check);

fn main() -> ExitCode {
    let criteria: Vec<Criterion> = vec![
        ("split optimality", || checks::split_optimality(100)),
        ("split balance", checks::split_balance),
        ("split descent and determinism", || {
            checks::split_descent_determinism(1000)
        }),
        ("grouping correctness", || {
            let a = checks::grouping_components(200)?;
            let b = checks::vote_patterns()?;
            Ok(format!("{a}, {b}"))
        }),
        ("gate losslessness and weights", || checks::gate(1000)),
        ("loss identity", || checks::loss_identity(100)),
        ("gradient check", || checks::gradient_check(50)),
        ("schedule exactness", checks::schedule_exactness),
        ("boundary targets", checks::boundary_target_properties),
        ("clip sampler", || checks::clip_sampler(10_000)),
        ("directional co-training", directional_cotraining),
        ("grouped vs ungrouped", grouped_vs_ungrouped),
        ("label-map oracle", || checks::label_map_oracle(100)),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name:<32} {msg} [{secs:.2}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name:<32} {msg} [{secs:.2}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
