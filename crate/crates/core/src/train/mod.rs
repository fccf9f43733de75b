//! Optimization, cross-validation protocols, metrics and significance tests.

mod metrics;
mod optim;
mod report;
mod splits;
mod trainer;
mod ttest;

pub use metrics::{class_scores, metrics_from_confusion, rmse_clamped, ClassScores, Confusion, Metrics};
pub use optim::{adamw_step, lr_at, AdamState, AdamWParams};
pub use report::{evaluation_table, metrics_table, report_json};
pub use splits::{holdout_split, make_splits, Protocol, SplitPlan};
pub use trainer::{
    cross_validate, evaluate, fit, fold_threads, train, EpochRecord, EvalReport, Evaluation, FoldResult, Prediction,
    SeedSummary, TrainConfig, TrainOutcome,
};
pub use ttest::{ln_gamma, paired_t_test, regularized_incomplete_beta, two_sided_p, TTestResult};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{AlignedPair, AlignedToken, Label, TokenKind};
    use crate::model::{FusionModel, FusionStrategy, ModelConfig, Task};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cohort(n: usize, shift: f32) -> Vec<AlignedPair> {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        (0..n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::HealthyControl } else { Label::Alzheimers };
                let s = if label == Label::Alzheimers { shift } else { -shift };
                let l = 4;
                let mut m = |off: f32| {
                    Tensor::new(vec![l, 8], (0..l * 8).map(|_| rng.random_range(-1.0f32..1.0) + off).collect()).unwrap()
                };
                let (a, t) = (m(s), m(0.0));
                let tokens = (0..l)
                    .map(|w| AlignedToken {
                        text: format!("w{w}"),
                        kind: TokenKind::Word,
                        word: Some(w),
                    })
                    .collect();
                let mmse = if label == Label::Alzheimers { 18.0 } else { 28.0 };
                AlignedPair::new(format!("s{i:03}"), Some(label), Some(mmse), tokens, a, t).unwrap()
            })
            .collect()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            input_dim: 8,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            max_len: 16,
            fusion: FusionStrategy::GatedCrossAttn,
            ..ModelConfig::desk()
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            lr_peak: 5e-3,
            warmup_epochs: 1,
            max_epochs: 8,
            batch_size: 4,
            loso_epochs: 3,
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn zero_lr_keeps_initial_weights() {
        let data = cohort(8, 1.0);
        let m = FusionModel::new(tiny()).unwrap();
        let cfg = TrainConfig {
            lr_peak: 0.0,
            ..quick()
        };
        let idx: Vec<usize> = (0..8).collect();
        let out = train(m.clone(), &data, &idx, &[], 3, &cfg).unwrap();
        assert_eq!(out.model, m);
    }

    #[test]
    fn same_seed_same_history() {
        let data = cohort(12, 1.0);
        let idx: Vec<usize> = (0..12).collect();
        let run = || train(FusionModel::new(tiny()).unwrap(), &data, &idx, &[], 4, &quick()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn separable_cohort_is_learned() {
        let data = cohort(24, 1.0);
        let idx: Vec<usize> = (0..24).collect();
        let out = train(FusionModel::new(tiny()).unwrap(), &data, &idx, &[], 8, &quick()).unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let ev = evaluate(&out.model, &data, &idx).unwrap();
        assert!(ev.metrics.accuracy >= 90.0, "{}", ev.metrics.accuracy);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let data = cohort(4, 1.0);
        assert!(train(FusionModel::new(tiny()).unwrap(), &data, &[], &[], 1, &quick()).is_err());
        assert!(evaluate(&FusionModel::new(tiny()).unwrap(), &data, &[]).is_err());
        assert!(train(FusionModel::new(tiny()).unwrap(), &data, &[0, 1], &[1], 1, &quick()).is_err());
    }

    #[test]
    fn early_stopping_returns_best_epoch() {
        let data = cohort(20, 1.0);
        let tr: Vec<usize> = (0..16).collect();
        let va: Vec<usize> = (16..20).collect();
        let cfg = TrainConfig {
            early_stop_patience: Some(2),
            max_epochs: 30,
            ..quick()
        };
        let out = train(FusionModel::new(tiny()).unwrap(), &data, &tr, &va, 30, &cfg).unwrap();
        let best = &out.history[out.best_epoch];
        for h in &out.history {
            assert!(h.val_accuracy.unwrap() <= best.val_accuracy.unwrap());
        }
        assert!(out.history.len() <= out.best_epoch + 3);
    }

    #[test]
    fn cross_validation_is_deterministic_and_isolated() {
        let data = cohort(12, 1.0);
        let run = || cross_validate(&data, &tiny(), &quick(), Protocol::KFold(3), &[1, 2]).unwrap();
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.folds.len(), 6);
        assert_eq!(a.per_seed.len(), 2);
        for f in &a.folds {
            assert_eq!(f.test_subjects.len(), 4);
        }
        let total: usize = a.folds.iter().map(|f| f.confusion.total()).sum();
        assert_eq!(total, a.aggregate.n);
        assert_eq!(a.accuracy_samples().len(), 6);
        let table = metrics_table(&a);
        assert_eq!(table.lines().count(), 2 + 6 + 1);
        assert!(report_json(&a).contains("\"aggregate\""));
    }

    #[test]
    fn loso_runs_fixed_schedule() {
        let data = cohort(4, 1.0);
        let r = cross_validate(&data, &tiny(), &quick(), Protocol::Loso, &[0]).unwrap();
        assert_eq!(r.folds.len(), 4);
        assert!(r.folds.iter().all(|f| f.epochs_run == 3 && f.test_subjects.len() == 1));
    }

    #[test]
    fn regression_reports_rmse() {
        let data = cohort(8, 1.0);
        let cfg = ModelConfig {
            task: Task::Regress,
            ..tiny()
        };
        let idx: Vec<usize> = (0..8).collect();
        let out = train(FusionModel::new(cfg).unwrap(), &data, &idx, &[], 2, &quick()).unwrap();
        let ev = evaluate(&out.model, &data, &idx).unwrap();
        let rmse = ev.metrics.rmse.unwrap();
        assert!(rmse.is_finite() && rmse >= 0.0);
        assert!(ev.predictions.iter().all(|p| (0.0..=30.0).contains(&p.mmse_pred.unwrap())));
    }
}
