use std::fmt::Write;

use super::trainer::{EvalReport, Evaluation};

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"))
}

/// One row per fold plus an aggregate row, tab-separated.
pub fn metrics_table(report: &EvalReport) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "# protocol={} fusion={} pooling={:?} task={:?}",
        report.protocol, report.model.fusion, report.model.pooling, report.model.task
    )
    .unwrap();
    s.push_str("seed\tfold\tn\taccuracy\tf1\tprecision\trecall\trmse\tepochs\tbest_epoch\n");
    for f in &report.folds {
        let m = &f.metrics;
        writeln!(
            s,
            "{}\t{}\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}\t{}",
            f.seed,
            f.fold,
            m.n,
            m.accuracy,
            m.f1,
            m.precision,
            m.recall,
            fmt_opt(m.rmse),
            f.epochs_run,
            f.best_epoch
        )
        .unwrap();
    }
    let a = &report.aggregate;
    writeln!(
        s,
        "all\tall\t{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t-\t-",
        a.n,
        a.accuracy,
        a.f1,
        a.precision,
        a.recall,
        fmt_opt(a.rmse)
    )
    .unwrap();
    s
}

/// Single-row table of one evaluation.
pub fn evaluation_table(ev: &Evaluation) -> String {
    let m = &ev.metrics;
    format!(
        "n\taccuracy\tf1\tprecision\trecall\trmse\tloss\n{}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{}\t{:.6}\n",
        m.n,
        m.accuracy,
        m.f1,
        m.precision,
        m.recall,
        fmt_opt(m.rmse),
        ev.loss
    )
}

pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}
