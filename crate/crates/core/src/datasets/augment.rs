use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Mean and standard deviation of the channel shift, in channels.
pub const SHIFT_MEAN: f64 = 10.0;
pub const SHIFT_STD: f64 = 5.0;

/// Draws a shift magnitude `round(N(10, 5))` with a random sign.
pub fn draw_shift<R: Rng + ?Sized>(rng: &mut R) -> i64 {
    let normal = Normal::new(SHIFT_MEAN, SHIFT_STD).expect("valid normal");
    let magnitude = normal.sample(rng).round() as i64;
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// Moves channel `c` to `c + shift` in every step of a row-major
/// `steps × channels` sample. Vacated channels are zero; channels pushed
/// past either edge are dropped.
pub fn shift_channels(sample: &[u8], channels: usize, shift: i64) -> Vec<u8> {
    let mut out = vec![0u8; sample.len()];
    if channels == 0 || shift.unsigned_abs() as usize >= channels {
        return out;
    }
    let s = shift.unsigned_abs() as usize;
    for (src, dst) in sample.chunks_exact(channels).zip(out.chunks_exact_mut(channels)) {
        if shift >= 0 {
            dst[s..].copy_from_slice(&src[..channels - s]);
        } else {
            dst[..channels - s].copy_from_slice(&src[s..]);
        }
    }
    out
}

/// Random frequency shift of one sample.
pub fn augment_freq_shift<R: Rng + ?Sized>(sample: &[u8], channels: usize, rng: &mut R) -> Vec<u8> {
    shift_channels(sample, channels, draw_shift(rng))
}
