use num_traits::Float;

use super::SpikeMode;

/// Ring buffer over the most recent input vectors of a convolution layer.
///
/// Holds the present input plus `capacity` past inputs. Slots that have not
/// been written yet read as zeros, which is the causal left padding.
#[derive(Clone, Debug, PartialEq)]
pub struct InputHistory<F> {
    width: usize,
    capacity: usize,
    head: usize,
    data: Vec<F>,
}

impl<F: Float> InputHistory<F> {
    pub fn new(capacity: usize, width: usize) -> Self {
        Self {
            width,
            capacity,
            head: 0,
            data: vec![F::zero(); (capacity + 1) * width],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Number of past inputs retained besides the present one.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, input: &[F]) {
        debug_assert_eq!(input.len(), self.width);
        self.head = (self.head + 1) % (self.capacity + 1);
        let start = self.head * self.width;
        self.data[start..start + self.width].copy_from_slice(input);
    }

    /// Input pushed `lag` steps ago; `lag == 0` is the latest push.
    pub fn lag(&self, lag: usize) -> &[F] {
        assert!(lag <= self.capacity, "lag {lag} beyond history {}", self.capacity);
        let slots = self.capacity + 1;
        let slot = (self.head + slots - lag) % slots;
        &self.data[slot * self.width..(slot + 1) * self.width]
    }

    pub fn clear(&mut self) {
        self.head = 0;
        self.data.iter_mut().for_each(|v| *v = F::zero());
    }
}

/// `out += x · W` for row-major `W` of shape `[x.len()][out.len()]`.
/// Zero inputs are skipped, which is the common case for spike vectors.
#[inline]
pub(crate) fn dense_accumulate<F: Float>(x: &[F], weights: &[F], out: &mut [F]) {
    let n = out.len();
    for (m, &xm) in x.iter().enumerate() {
        if xm == F::zero() {
            continue;
        }
        let row = &weights[m * n..(m + 1) * n];
        for (o, &w) in out.iter_mut().zip(row) {
            *o = *o + xm * w;
        }
    }
}

/// Convolution current from the history, with the present input already
/// pushed. Taps are accumulated in order `k = 0..K`, so `K = 1` performs
/// exactly the same floating-point operations as [`dense_accumulate`].
#[inline]
pub(crate) fn conv_accumulate<F: Float>(
    history: &InputHistory<F>,
    weights: &[F],
    taps: usize,
    dilation: usize,
    out: &mut [F],
) {
    let tap_len = history.width() * out.len();
    for k in 0..taps {
        let x = history.lag(k * dilation);
        dense_accumulate(x, &weights[k * tap_len..(k + 1) * tap_len], out);
    }
}

#[inline]
pub(crate) fn lif_update<F: Float>(
    u: &mut [F],
    s: &mut [F],
    current: &[F],
    alpha: &[F],
    mode: SpikeMode,
) {
    let th = F::from(super::U_TH).unwrap();
    for i in 0..u.len() {
        let a = alpha[i];
        let v = a * u[i] + (F::one() - a) * current[i] - th * s[i];
        u[i] = v;
        s[i] = mode.fire(v);
    }
}

#[inline]
pub(crate) fn leaky_update<F: Float>(u: &mut [F], current: &[F], alpha: &[F]) {
    for ((v, &c), &a) in u.iter_mut().zip(current).zip(alpha) {
        *v = a * *v + (F::one() - a) * c;
    }
}
