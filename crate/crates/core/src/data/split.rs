use crate::data::FarmSeries;
use crate::error::{Error, Result};

/// Split points: train is `[0, train_end)`, val `[train_end, val_end)`, test the rest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitBounds {
    pub train_end: usize,
    pub val_end: usize,
    pub len: usize,
}

impl SplitBounds {
    /// 70/20/10 chronological split with floored boundaries.
    pub fn seven_two_one(len: usize) -> Self {
        SplitBounds {
            train_end: len * 7 / 10,
            val_end: len * 9 / 10,
            len,
        }
    }

    pub fn segment_lengths(&self) -> [usize; 3] {
        [
            self.train_end,
            self.val_end - self.train_end,
            self.len - self.val_end,
        ]
    }
}

/// Chronological 7:2:1 split. Each segment must hold at least one
/// `lookback + horizon` window.
pub fn split_7_2_1(
    fs: &FarmSeries,
    lookback: usize,
    horizon: usize,
) -> Result<(FarmSeries, FarmSeries, FarmSeries)> {
    let bounds = SplitBounds::seven_two_one(fs.len());
    let need = lookback + horizon;
    for (name, len) in ["train", "val", "test"].iter().zip(bounds.segment_lengths()) {
        if len < need || len == 0 {
            return Err(Error::Data(format!(
                "{name} split has {len} steps, fewer than lookback + horizon = {need} (T = {})",
                fs.len()
            )));
        }
    }
    Ok((
        fs.slice_time(0, bounds.train_end)?,
        fs.slice_time(bounds.train_end, bounds.val_end)?,
        fs.slice_time(bounds.val_end, bounds.len)?,
    ))
}
