//! Comma-separated and aligned-text renderings of metric reports.

use std::fmt::Write as _;

use sbp_core::bgan::IterationRecord;
use sbp_core::metrics::MetricsReport;

fn metric_columns(r: &MetricsReport) -> Vec<String> {
    let mut cols = vec![];
    for k in &r.k_values {
        cols.extend([format!("R@{k}"), format!("mR@{k}"), format!("A@{k}")]);
    }
    cols.extend(r.top_t_values.iter().map(|t| format!("F-Acc@{t}")));
    cols
}

fn metric_values(r: &MetricsReport) -> Vec<f64> {
    let mut v = vec![];
    for i in 0..r.k_values.len() {
        v.extend([r.r_at_k[i], r.mr_at_k[i], r.a_at_k[i]]);
    }
    v.extend(&r.f_acc);
    v
}

/// Named metric values of one report, in column order.
pub fn named_metrics(r: &MetricsReport) -> Vec<(String, f64)> {
    metric_columns(r).into_iter().zip(metric_values(r)).collect()
}

/// One row per corrector; values printed with round-trip precision.
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut s = format!("corrector,{}\n", metric_columns(first).join(","));
    for r in reports {
        let vals: Vec<String> = metric_values(r).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{},{}", r.corrector, vals.join(","));
    }
    s
}

/// Same table in percent, padded for reading.
pub fn metrics_text(reports: &[MetricsReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let cols = metric_columns(first);
    let name_w = reports.iter().map(|r| r.corrector.len()).max().unwrap_or(0).max(9);
    let col_w = cols.iter().map(String::len).max().unwrap_or(0).max(7);
    let mut s = format!("{:<name_w$}", "corrector");
    for c in &cols {
        let _ = write!(s, "  {c:>col_w$}");
    }
    s.push('\n');
    for r in reports {
        let _ = write!(s, "{:<name_w$}", r.corrector);
        for v in metric_values(r) {
            let _ = write!(s, "  {:>col_w$.2}", 100.0 * v);
        }
        s.push('\n');
    }
    s
}

/// Per-class recall, head class first. Classes absent from the test split
/// have empty cells.
pub fn per_class_csv(reports: &[MetricsReport], train_freq: &[f64], test_counts: &[usize]) -> String {
    let mut s = String::from("class,train_freq,test_count");
    for r in reports {
        for k in &r.k_values {
            let _ = write!(s, ",{}@{k}", r.corrector);
        }
    }
    s.push('\n');
    for c in 0..train_freq.len() {
        let _ = write!(s, "{c},{},{}", train_freq[c], test_counts[c]);
        for r in reports {
            for per in &r.per_class_recall {
                match per[c] {
                    Some(v) => {
                        let _ = write!(s, ",{v}");
                    }
                    None => s.push(','),
                }
            }
        }
        s.push('\n');
    }
    s
}

pub fn classic_trace_csv(losses: &[f64], lr: f64) -> String {
    let mut s = String::from("iteration,loss,lr\n");
    for (i, l) in losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l},{lr}");
    }
    s
}

pub fn bgan_trace_csv(trace: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,L_G,L_D,lr_g,lr_d,critic_gap\n");
    for r in trace {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration, r.loss_g, r.loss_d, r.lr_g, r.lr_d, r.critic_gap
        );
    }
    s
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
