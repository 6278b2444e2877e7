//! Report arithmetic. Percentages are rounded to two decimals, half up, in
//! integer arithmetic so reports are byte-stable.

/// `100 · num / den` rounded half-up to hundredths; `None` when `den == 0`.
pub fn percent(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        return None;
    }
    let hundredths = (num as u128 * 20_000 + den as u128) / (2 * den as u128);
    Some(hundredths as f64 / 100.0)
}

pub fn responsive_rate(responsive: u64, executions: u64) -> Option<f64> {
    percent(responsive, executions)
}

/// `100 · pruned / max(1, augmented)`.
pub fn pruning_rate(pruned: u64, augmented: u64) -> f64 {
    percent(pruned, augmented.max(1)).expect("denominator is at least 1")
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}
