use super::*;
use crate::data::{cv_split, split_folds, Dataset};
use crate::proto::Stage1Config;
use crate::seqmodel::Stage2Config;
use crate::synth::{block_dataset, BlockConfig};

fn block() -> Dataset {
    block_dataset(&BlockConfig::default()).unwrap()
}

fn spec() -> RunSpec {
    let stage1 = Stage1Config {
        d0: 8,
        hidden: vec![32],
        epochs: 40,
        pair_batch: 64,
        ..Stage1Config::default()
    };
    let stage2 = Stage2Config {
        d_w: 8,
        heads: 2,
        l_max: 8,
        head_hidden: vec![16],
        lr: 5e-3,
        epochs: 6,
        batch: 32,
        ..Stage2Config::default()
    };
    RunSpec {
        folds: 5,
        ..RunSpec::new(stage1, stage2, 3)
    }
}

#[test]
fn cv_is_deterministic_and_consistent() {
    let ds = block();
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let a = run_cv_folds(&ds, &spec, &protos, 1, Some(&[0, 1])).unwrap();
    let b = run_cv_folds(&ds, &spec, &protos, 1, Some(&[0, 1])).unwrap();
    assert_eq!(a.report.to_text(), b.report.to_text());
    assert_eq!(a.report.units.len(), 2);
    a.report.check_aggregate("overall", &[]).unwrap();
    a.report.check_aggregate("repeat=0", &[("repeat", "0")]).unwrap();
    let overall = a.report.aggregate("overall").unwrap();
    assert!(overall.auroc.mean > 0.9, "{}", a.report.to_text());
}

#[test]
fn one_point_sweep_matches_one_fold() {
    let ds = block();
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let cv = run_cv_folds(&ds, &spec, &protos, 1, Some(&[0])).unwrap();
    let sw = sweep(&ds, &spec, &[8], &[spec.stage2.temperature], None).unwrap();
    assert_eq!(cv.report.units[0].auroc, sw.report.units[0].auroc);
    assert_eq!(cv.report.units[0].auprc, sw.report.units[0].auprc);
    assert!(surface_text(&sw.report).starts_with("# d0 temperature auroc auprc\n8 2 "));
}

#[test]
fn full_lambda_matches_plain_fold() {
    let ds = block();
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let cv = run_cv_folds(&ds, &spec, &protos, 1, Some(&[0])).unwrap();
    let sp = run_sparse(&ds, &spec, &protos, &[1.0, 0.5]).unwrap();
    assert_eq!(sp.report.units.len(), 2);
    assert_eq!(sp.report.units[0].auroc, cv.report.units[0].auroc);
    assert_eq!(sp.report.units[0].field("lambda"), Some("1"));
    assert!(run_sparse(&ds, &spec, &protos, &[0.0]).is_err());
}

#[test]
fn coldstart_reports_units_and_exclusions() {
    let mut ds = block_dataset(&BlockConfig {
        in_block: 0.8,
        seed: 2,
        ..BlockConfig::default()
    })
    .unwrap();
    // drug 0 gets a full row so its AUROC is undefined
    for m in 0..ds.n_diseases() {
        ds = ds.with_label(crate::data::Cell::new(0, m), 1);
    }
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let exp = run_coldstart(&ds, &spec, &protos, &[0, 4]).unwrap();
    assert_eq!(exp.report.units.len(), 1);
    assert_eq!(exp.report.units[0].field("drug"), Some("4"));
    assert_eq!(
        exp.report.excluded,
        vec![("drug=0".to_string(), "single_class".to_string())]
    );
    assert_eq!(exp.report.extra("excluded"), Some(1.0));
    assert!(exp.report.extra("pooled_auroc").is_some());
    exp.report.check_aggregate("per_drug", &[]).unwrap();
}

#[test]
fn drug_subset_is_seeded_and_eligible() {
    let ds = block();
    let a = select_drugs(&ds, 5, 1);
    assert_eq!(a, select_drugs(&ds, 5, 1));
    assert_eq!(a.len(), 5);
    assert!(a.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(select_drugs(&ds, 100, 1).len(), 20);
}

#[test]
fn ranking_orders_candidates() {
    let ds = block();
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let plan = split_folds(&ds, 5, 1).unwrap();
    let split = cv_split(&plan, 0).unwrap();
    let (model, _) = evaluate_split(&ds, &split, &protos, &spec.stage2, 4).unwrap();
    let disease = 2;
    let all = rank_candidates(&model, &ds, &split, disease, ds.n_drugs()).unwrap();
    let candidates = (0..ds.n_drugs())
        .filter(|&d| {
            let c = crate::data::Cell::new(d, disease);
            !(split.train.contains(&c) && ds.is_positive(c))
        })
        .count();
    assert_eq!(all.entries.len(), candidates);
    assert_eq!(all.truncated, candidates < ds.n_drugs());
    let mut drugs: Vec<usize> = all.entries.iter().map(|e| e.drug).collect();
    assert!(all
        .entries
        .windows(2)
        .all(|w| w[0].logit > w[1].logit || (w[0].logit == w[1].logit && w[0].drug < w[1].drug)));
    drugs.sort_unstable();
    drugs.dedup();
    assert_eq!(drugs.len(), candidates);
    let top = rank_candidates(&model, &ds, &split, disease, 3).unwrap();
    assert_eq!(top.entries[..], all.entries[..3]);
    assert!(!top.truncated);
    assert_eq!(top.to_text().lines().count(), 3);
    assert!(rank_candidates(&model, &ds, &split, disease, 0).is_err());
}

#[test]
fn ranking_breaks_ties_by_drug_index() {
    let ds = block();
    let spec = spec();
    let protos = train_prototypes(&ds, &spec.stage1).unwrap();
    let plan = split_folds(&ds, 5, 1).unwrap();
    let split = cv_split(&plan, 0).unwrap();
    let (mut model, _) = evaluate_split(&ds, &split, &protos, &spec.stage2, 4).unwrap();
    // a zero output layer makes every logit equal to its bias
    let w = model.param_id("head1.weight").unwrap();
    let b = model.param_id("head1.bias").unwrap();
    model.params_mut().value_mut(w).data_mut().fill(0.0);
    model.params_mut().value_mut(b).data_mut().fill(1.5);
    let ranked = rank_candidates(&model, &ds, &split, 0, 20).unwrap();
    assert!(ranked.entries.windows(2).all(|p| p[0].drug < p[1].drug));
    assert!(ranked.entries.iter().all(|e| e.logit == 1.5));
}
