use crate::record::RunResult;

/// `(1 / (t H)) sum_{i <= t} (opt_value - return_i)` for every `t`.
pub fn average_regret(run: &RunResult, opt_value: f64, horizon: usize) -> Vec<f64> {
    running_mean(run.episodes.iter().map(|e| opt_value - e.realized_return), horizon)
}

/// `(1 / (t H)) sum_{i <= t} return_i` for every `t`.
pub fn average_cumulative_reward(run: &RunResult, horizon: usize) -> Vec<f64> {
    running_mean(run.episodes.iter().map(|e| e.realized_return), horizon)
}

fn running_mean(values: impl Iterator<Item = f64>, horizon: usize) -> Vec<f64> {
    let h = horizon as f64;
    let mut total = 0.0;
    values
        .enumerate()
        .map(|(i, v)| {
            total += v;
            total / ((i + 1) as f64 * h)
        })
        .collect()
}

/// Formats like C's `%.9g`.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..9).contains(&exp) {
        return format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}
