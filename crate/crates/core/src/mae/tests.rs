use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::Batch;
use super::*;
use crate::motifs::{motif_corpus, motif_pattern, Motif};
use crate::nn::ParamSet;
use crate::pattern::{patchify, select_mask, Scaling};

fn tiny() -> (MaeParams<f32>, Vec<PatchSet>, Vec<MaskSelection>) {
    let cfg = MaeConfig::tiny();
    let params = MaeParams::init(&cfg, 1).unwrap();
    let pats = motif_corpus(&Motif::ALL, 1, cfg.pattern_size, 5);
    let sets = prepare(&params, &pats).unwrap();
    let k = params.grid().num_patches();
    let masks = (0..sets.len()).map(|i| select_mask(k, cfg.mask_ratio, i as u64).unwrap()).collect();
    (params, sets, masks)
}

#[test]
fn init_is_deterministic_in_seed() {
    let cfg = MaeConfig::desk();
    let a = MaeParams::<f32>::init(&cfg, 4).unwrap();
    let b = MaeParams::<f32>::init(&cfg, 4).unwrap();
    assert_eq!(a, b);
    let c = MaeParams::<f32>::init(&cfg, 5).unwrap();
    assert_ne!(a.flat(), c.flat());
}

#[test]
fn full_preset_has_deep_wide_encoder() {
    let cfg = MaeConfig::full();
    cfg.validate().unwrap();
    assert_eq!(cfg.encoder.layers, 24);
    assert_eq!(cfg.encoder.width, 512);
    assert_eq!(cfg.decoder.layers, 8);
}

#[test]
fn init_weights_are_truncated() {
    let p = MaeParams::<f32>::init(&MaeConfig::desk(), 0).unwrap();
    assert!(p.patch_w.data.iter().all(|x| x.abs() <= 0.04 + 1e-6));
    assert!(p.all_finite());
}

#[test]
fn loss_zero_when_prediction_matches() {
    let (params, sets, masks) = tiny();
    let mut batch = Batch::<f32>::assemble(&params.config, &sets, &masks).unwrap();
    let fwd = params.forward(&batch);
    let k = params.grid().num_patches();
    let cells = params.grid().cells();
    let m = masks[0].masked.len();
    for (s, mask) in masks.iter().enumerate() {
        for (j, &p) in mask.masked.iter().enumerate() {
            batch.targets[(s * m + j) * cells..(s * m + j + 1) * cells]
                .copy_from_slice(&fwd.pred[(s * k + p) * cells..(s * k + p + 1) * cells]);
        }
    }
    let (loss, grads) = params.loss_and_grad(&batch);
    assert_eq!(loss, 0.0);
    assert!(grads.sq_norm().sqrt() <= 1e-8);
}

#[test]
fn unit_error_gives_unit_loss() {
    let (params, sets, masks) = tiny();
    let mut batch = Batch::<f32>::assemble(&params.config, &sets, &masks).unwrap();
    batch.targets.iter_mut().for_each(|t| *t = 1.0);
    let pred = vec![0.0f32; params.forward(&batch).pred.len()];
    let (loss, _) = params.loss(&batch, &pred);
    assert!((loss - 1.0).abs() < 1e-12);
}

#[test]
fn padded_cells_never_enter_the_loss() {
    let (params, sets, masks) = tiny();
    let batch = Batch::<f32>::assemble(&params.config, &sets, &masks).unwrap();
    let mut pred = params.forward(&batch).pred;
    let (base, _) = params.loss(&batch, &pred);
    let grid = params.grid();
    let validity = grid.validity();
    let cells = grid.cells();
    for (i, v) in pred.iter_mut().enumerate() {
        if !validity[i % (grid.num_patches() * cells)] {
            *v = 123.0;
        }
    }
    let (perturbed, _) = params.loss(&batch, &pred);
    assert_eq!(base, perturbed);
}

#[test]
fn loss_invariant_to_sample_order() {
    let (params, sets, masks) = tiny();
    let a = forward_train(&params, &sets, &masks).unwrap().loss;
    let mut rs = sets.clone();
    let mut rm = masks.clone();
    rs.reverse();
    rm.reverse();
    let b = forward_train(&params, &rs, &rm).unwrap().loss;
    assert!((a - b).abs() < 1e-6 * a.max(1e-12));
}

#[test]
fn raw_input_to_log_model_is_contract_error() {
    let cfg = MaeConfig::tiny();
    let params = MaeParams::<f32>::init(&cfg, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let raw = motif_pattern(Motif::Band, 8, 0, &mut rng);
    let set = patchify(&raw, 4).unwrap();
    let mask = select_mask(3, 0.5, 0).unwrap();
    let err = forward_train(&params, &[set], &[mask]).unwrap_err();
    assert!(matches!(err, crate::Error::Contract(_)));
}

#[test]
fn composite_keeps_visible_patches() {
    let (params, sets, masks) = tiny();
    let out = forward_train(&params, &sets, &masks).unwrap();
    for s in 0..sets.len() {
        assert_eq!(out.reconstructions[s].len(), masks[s].masked.len());
        let comp = composite(&sets[s], &masks[s], &out.reconstructions[s]);
        for &v in &masks[s].visible {
            assert_eq!(comp.patch(v), sets[s].patch(v));
        }
        for &m in &masks[s].masked {
            for (c, ok) in comp.patch_valid(m).iter().enumerate() {
                if !ok {
                    assert_eq!(comp.patch(m)[c], 0.0);
                }
            }
        }
    }
}

#[test]
fn embeddings_are_deterministic_and_sized() {
    let cfg = MaeConfig::tiny();
    let params = MaeParams::<f32>::init(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = motif_pattern(Motif::Blocks, 8, 0, &mut rng);
    let a = embed(&params, &p).unwrap();
    let b = embed(&params, &p.clone()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), cfg.encoder.width);
    let wrong = motif_pattern(Motif::Blocks, 16, 0, &mut rng);
    assert!(embed(&params, &wrong).is_err());
}

#[test]
fn identity_scaling_accepts_raw_patterns() {
    let mut cfg = MaeConfig::tiny();
    cfg.scaling = Scaling::Identity;
    let params = MaeParams::<f32>::init(&cfg, 2).unwrap();
    let pats = motif_corpus(&[Motif::Band], 2, 8, 0);
    assert!(evaluate(&params, &pats).unwrap().mean > 0.0);
}

#[test]
fn evaluate_is_deterministic_and_matches_cross_eval() {
    let cfg = MaeConfig::tiny();
    let params = MaeParams::<f32>::init(&cfg, 2).unwrap();
    let pats = motif_corpus(&Motif::ALL, 4, 8, 1);
    let a = evaluate(&params, &pats).unwrap();
    assert_eq!(a, evaluate(&params, &pats).unwrap());
    assert_eq!(a.count, 20);
    let models = [("m".to_string(), params)].into_iter().collect();
    let data = [("m".to_string(), pats)].into_iter().collect();
    let x = cross_evaluate(&models, &data).unwrap();
    assert_eq!(x.cells.len(), 1);
    assert_eq!(x.get("m", "m"), Some(a));
}

#[test]
fn cross_eval_requires_dataset_per_model() {
    let cfg = MaeConfig::tiny();
    let params = MaeParams::<f32>::init(&cfg, 2).unwrap();
    let models = [("a".to_string(), params)].into_iter().collect();
    let data = [("b".to_string(), motif_corpus(&[Motif::Band], 1, 8, 0))].into_iter().collect();
    assert!(matches!(cross_evaluate(&models, &data), Err(crate::Error::Data(_))));
}

#[test]
fn report_renders_in_thousandths() {
    let r = EvalReport {
        mean: 7.07e-3,
        std: 2.12e-3,
        count: 10,
    };
    assert_eq!(r.milli(), "7.07 (2.12)");
    let x = CrossEval {
        trained: vec!["3B".into()],
        evaluated: vec!["3B".into(), "7B".into()],
        cells: vec![vec![
            r,
            EvalReport {
                mean: 7.78e-3,
                std: 2.05e-3,
                count: 10,
            },
        ]],
    };
    let text = x.render();
    assert!(text.contains("7.07 (2.12)"));
    assert!(text.contains("7.78 (2.05)"));
    assert!(text.contains("3B Loss (x10^-3)"));
}

#[test]
fn training_is_bit_reproducible() {
    let mut cfg = MaeConfig::tiny();
    cfg.total_batches = 6;
    let pats = motif_corpus(&Motif::ALL, 4, 8, 1);
    let mut a = MaeParams::init(&cfg, 3).unwrap();
    let mut b = MaeParams::init(&cfg, 3).unwrap();
    let ca = train(&mut a, &pats).unwrap();
    let cb = train(&mut b, &pats).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a, b);
    assert_eq!(ca.len(), 6);
    assert!(ca.last().unwrap().lr.abs() < 1e-6);
}

#[test]
fn training_rejects_empty_and_filters_incorrect() {
    let cfg = MaeConfig::tiny();
    let mut p = MaeParams::init(&cfg, 3).unwrap();
    assert!(matches!(train(&mut p, &[]), Err(crate::Error::Data(_))));
    let mut pats = motif_corpus(&[Motif::Band], 2, 8, 1);
    pats.iter_mut().for_each(|x| x.meta.correct = Some(false));
    assert!(matches!(train(&mut p, &pats), Err(crate::Error::Data(_))));
}

#[test]
fn nan_loss_names_the_batch() {
    let cfg = MaeConfig::tiny();
    let mut p = MaeParams::init(&cfg, 3).unwrap();
    p.head_b.data[0] = f32::NAN;
    let pats = motif_corpus(&Motif::ALL, 2, 8, 1);
    match train(&mut p, &pats) {
        Err(crate::Error::Numerical(m)) => assert!(m.contains("batch 0"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn checkpoint_round_trip() {
    let cfg = MaeConfig::tiny();
    let p = MaeParams::<f32>::init(&cfg, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.apck");
    save_params(&path, &p).unwrap();
    assert_eq!(load_params(&path).unwrap(), p);
}
