use crate::error::{Error, Result};

/// Normal-consistency factor for the median absolute deviation.
pub const MAD_CONSISTENCY: f64 = 1.4826;

/// Sample median; even lengths return the midpoint of the two central order statistics.
pub fn median(data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("median of an empty sample".into()));
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidInput("sample contains NaN".into()));
    }
    let mut v = data.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Ok(upper)
    } else {
        let below = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(0.5 * (below + upper))
    }
}

/// `1.4826 · median |x_i − median(x)|`. Constant samples give 0.
pub fn mad_scale(data: &[f64]) -> Result<f64> {
    if data.len() < 2 {
        return Err(Error::InvalidInput(
            "scale estimate needs at least two observations".into(),
        ));
    }
    let m = median(data)?;
    let dev: Vec<f64> = data.iter().map(|x| (x - m).abs()).collect();
    Ok(MAD_CONSISTENCY * median(&dev)?)
}
