use crate::data::FarmSeries;
use crate::error::{Error, Result};

/// Imputes missing cells per turbine and channel: forward fill, then
/// backward fill for a leading gap.
///
/// Fails if some turbine has no observation at all in some channel. The
/// returned series has an all-false missing mask.
pub fn fill_missing(fs: &FarmSeries) -> Result<FarmSeries> {
    fs.check_consistent()?;
    let (t_len, n, c) = (fs.len(), fs.n_turbines(), fs.n_exo());
    let mut out = fs.clone();
    let mut empty = Vec::new();
    for turbine in 0..n {
        for ch in 0..=c {
            let observed: Vec<Option<f64>> = (0..t_len)
                .map(|t| {
                    if fs.is_missing(t, turbine, ch) {
                        None
                    } else {
                        Some(channel_value(fs, t, turbine, ch))
                    }
                })
                .collect();
            let Some(filled) = forward_backward(&observed) else {
                empty.push(format!("turbine {} / {}", fs.turbines[turbine], fs.channel_name(ch)));
                continue;
            };
            for (t, v) in filled.into_iter().enumerate() {
                if ch == 0 {
                    out.power[t * n + turbine] = v;
                } else {
                    out.exo[(t * n + turbine) * c + ch - 1] = v;
                }
            }
            if ch == 0 {
                let labels: Vec<Option<f64>> = (0..t_len)
                    .map(|t| {
                        let v = fs.target_kw[t * n + turbine];
                        (!fs.is_missing(t, turbine, 0) && !v.is_nan()).then_some(v)
                    })
                    .collect();
                if let Some(filled) = forward_backward(&labels) {
                    for (t, v) in filled.into_iter().enumerate() {
                        out.target_kw[t * n + turbine] = v;
                    }
                }
            }
        }
    }
    if !empty.is_empty() {
        return Err(Error::Data(format!(
            "no observed values to fill from for: {}",
            empty.join(", ")
        )));
    }
    out.missing.iter_mut().for_each(|m| *m = false);
    Ok(out)
}

fn channel_value(fs: &FarmSeries, t: usize, turbine: usize, ch: usize) -> f64 {
    if ch == 0 {
        fs.power_at(t, turbine)
    } else {
        fs.exo_at(t, turbine, ch - 1)
    }
}

/// `None` when nothing is observed.
fn forward_backward(values: &[Option<f64>]) -> Option<Vec<f64>> {
    let first = values.iter().flatten().next().copied()?;
    let mut last = None;
    let filled = values
        .iter()
        .map(|v| {
            if v.is_some() {
                last = *v;
            }
            // before the first observation only the backward fill applies
            last.unwrap_or(first)
        })
        .collect();
    Some(filled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testing::series;

    const M: f64 = f64::NAN;

    fn column(values: &[f64]) -> Vec<f64> {
        let fs = series(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        fill_missing(&fs).unwrap().power
    }

    #[test]
    fn forward_fill() {
        assert_eq!(column(&[1.0, M, M, 4.0]), vec![1.0, 1.0, 1.0, 4.0]);
    }

    #[test]
    fn backward_fill_of_leading_gap() {
        assert_eq!(column(&[M, M, 3.0]), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn forward_then_backward() {
        assert_eq!(column(&[M, 2.0, M]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn labels_filled_alongside_power() {
        let fs = series(&[vec![M], vec![5.0]]);
        let out = fill_missing(&fs).unwrap();
        assert_eq!(out.target_kw, vec![5.0, 5.0]);
        assert_eq!(out.missing_count(), 0);
    }

    #[test]
    fn entirely_missing_column_is_an_error() {
        let fs = series(&[vec![1.0, M], vec![2.0, M]]);
        let err = fill_missing(&fs).unwrap_err().to_string();
        assert!(err.contains("turbine T1 / power"), "{err}");
    }

    #[test]
    fn idempotent() {
        let fs = series(&[vec![M, 1.0], vec![2.0, M], vec![M, M], vec![4.0, 3.0]]);
        let once = fill_missing(&fs).unwrap();
        let twice = fill_missing(&once).unwrap();
        assert_eq!(once, twice);
    }
}
