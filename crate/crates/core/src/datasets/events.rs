use crate::error::{check_len, Result, SnnError};
use crate::snn::SimGrid;

/// Histogram of events into `steps × channels` counts. Event `i` lands in
/// bin `floor(times[i] / dt)`; events at or past the end of the grid are
/// dropped and counts saturate at 255.
pub fn bin_events(times: &[f64], channels_of: &[u32], grid: &SimGrid, channels: usize) -> Result<Vec<u8>> {
    check_len("event channels", times.len(), channels_of.len())?;
    let mut out = vec![0u8; grid.steps * channels];
    for (i, (&t, &c)) in times.iter().zip(channels_of).enumerate() {
        if !(t >= 0.0) {
            return Err(SnnError::Event {
                index: i,
                reason: format!("negative or NaN time {t}"),
            });
        }
        if c as usize >= channels {
            return Err(SnnError::Event {
                index: i,
                reason: format!("channel {c} outside [0, {channels})"),
            });
        }
        let bin = (t / grid.dt).floor();
        if bin >= grid.steps as f64 {
            continue;
        }
        let slot = &mut out[bin as usize * channels + c as usize];
        *slot = slot.saturating_add(1);
    }
    Ok(out)
}
