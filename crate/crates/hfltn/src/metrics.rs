//! Per-epoch metrics rows and their CSV rendering.

use std::fmt::Write;

pub const METRICS_HEADER: &str = "epoch,active_clients,total_flops,sim_time_ms,per_epoch_diversity,\
cumulative_diversity,train_loss,val_loss,test_location_accuracy,test_time_mse,generalization_gap_pct";

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub epoch: u64,
    pub active_clients: u64,
    pub total_flops: u64,
    pub sim_time_ms: f64,
    pub per_epoch_diversity: f64,
    pub cumulative_diversity: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub test_location_accuracy: f64,
    pub test_time_mse: f64,
    pub generalization_gap_pct: f64,
}

/// C `printf("%.6g")`.
pub fn fmt_g(v: f64) -> String {
    fmt_g_prec(v, 6)
}

pub fn fmt_g_prec(v: f64, precision: usize) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let p = precision.max(1);
    let sci = format!("{:.*e}", p - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        format!("{}e{}{:02}", strip_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.active_clients,
            self.total_flops,
            fmt_g(self.sim_time_ms),
            fmt_g(self.per_epoch_diversity),
            fmt_g(self.cumulative_diversity),
            fmt_g(self.train_loss),
            fmt_g(self.val_loss),
            fmt_g(self.test_location_accuracy),
            fmt_g(self.test_time_mse),
            fmt_g(self.generalization_gap_pct),
        );
        s
    }
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Percentage drop from `initial` to `last`.
pub fn loss_decrease_rate(initial: f64, last: f64) -> f64 {
    (initial - last) / initial * 100.0
}

/// `|test - train|` as a percentage of `train`.
pub fn generalization_gap_pct(train: f64, test: f64) -> f64 {
    (test - train).abs() / train * 100.0
}

/// End-of-run figures derived from the metrics rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub loss_decrease_rate_pct: f64,
    pub final_generalization_gap_pct: f64,
    pub final_test_location_accuracy: f64,
    pub final_test_time_mse: f64,
    pub total_flops: u64,
    pub total_sim_time_ms: f64,
}

pub const SUMMARY_HEADER: &str = "initial_train_loss,final_train_loss,loss_decrease_rate_pct,\
final_generalization_gap_pct,final_test_location_accuracy,final_test_time_mse,total_flops,total_sim_time_ms";

impl RunSummary {
    pub fn from_rows(initial_train_loss: f64, rows: &[RoundMetrics]) -> Option<Self> {
        let last = rows.last()?;
        Some(Self {
            initial_train_loss,
            final_train_loss: last.train_loss,
            loss_decrease_rate_pct: loss_decrease_rate(initial_train_loss, last.train_loss),
            final_generalization_gap_pct: last.generalization_gap_pct,
            final_test_location_accuracy: last.test_location_accuracy,
            final_test_time_mse: last.test_time_mse,
            total_flops: rows.iter().map(|r| r.total_flops).sum(),
            total_sim_time_ms: rows.iter().map(|r| r.sim_time_ms).sum(),
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            fmt_g(self.initial_train_loss),
            fmt_g(self.final_train_loss),
            fmt_g(self.loss_decrease_rate_pct),
            fmt_g(self.final_generalization_gap_pct),
            fmt_g(self.final_test_location_accuracy),
            fmt_g(self.final_test_time_mse),
            self.total_flops,
            fmt_g(self.total_sim_time_ms),
        )
    }
}
