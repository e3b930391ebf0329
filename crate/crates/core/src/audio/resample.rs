use super::SpeedFactor;

/// Kaiser window shape parameter of the interpolation kernel.
pub const KAISER_BETA: f64 = 8.6;
/// Sinc zero-crossings kept on each side of the kernel centre.
pub const ZERO_CROSSINGS: usize = 32;

/// Polyphase windowed-sinc interpolator for a rational step `num / den`.
///
/// Output sample `n` is read at input position `n * num / den`; the integer
/// part selects the input window and the remainder selects one of `den`
/// precomputed phases.
#[derive(Debug, Clone)]
pub struct Resampler {
    num: u64,
    den: u64,
    /// Input-sample offset of the first tap relative to the integer position.
    first_tap: i64,
    width: usize,
    /// `den` rows of `width` taps.
    table: Vec<f64>,
}

impl Resampler {
    pub fn for_factor(factor: SpeedFactor) -> Self {
        let (num, den) = factor.as_rational();
        Self::new(num, den)
    }

    /// Reads the input at a step of `num / den` input samples per output sample.
    pub fn new(num: u64, den: u64) -> Self {
        assert!(num > 0 && den > 0, "resampling ratio must be positive");
        // Stepping faster than one input sample per output sample decimates,
        // so the passband shrinks to the output Nyquist.
        let cutoff = (den as f64 / num as f64).min(1.0);
        let half_width = ZERO_CROSSINGS as f64 / cutoff;
        let reach = half_width.ceil() as i64;
        let first_tap = -reach + 1;
        let width = (2 * reach) as usize;
        let norm = bessel_i0(KAISER_BETA);

        let mut table = Vec::with_capacity(den as usize * width);
        for phase in 0..den {
            let frac = phase as f64 / den as f64;
            let start = table.len();
            for k in 0..width as i64 {
                let x = (first_tap + k) as f64 - frac;
                let r = x / half_width;
                let tap = if r.abs() >= 1.0 {
                    0.0
                } else {
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm;
                    cutoff * sinc(cutoff * x) * window
                };
                table.push(tap);
            }
            let row = &mut table[start..];
            let gain: f64 = row.iter().sum();
            if gain != 1.0 {
                row.iter_mut().for_each(|t| *t /= gain);
            }
        }

        Self {
            num,
            den,
            first_tap,
            width,
            table,
        }
    }

    pub fn ratio(&self) -> (u64, u64) {
        (self.num, self.den)
    }

    /// Produces `out_len` samples; input outside its bounds reads as silence.
    pub fn process(&self, input: &[f64], out_len: usize) -> Vec<f64> {
        let n_in = input.len() as i64;
        (0..out_len as u64)
            .map(|n| {
                let pos = n * self.num;
                let base = (pos / self.den) as i64 + self.first_tap;
                let phase = (pos % self.den) as usize;
                let taps = &self.table[phase * self.width..(phase + 1) * self.width];
                let lo = (-base).clamp(0, self.width as i64) as usize;
                let hi = (n_in - base).clamp(0, self.width as i64) as usize;
                if lo >= hi {
                    return 0.0;
                }
                let src = &input[(base + lo as i64) as usize..(base + hi as i64) as usize];
                src.iter().zip(&taps[lo..hi]).map(|(x, t)| x * t).sum()
            })
            .collect()
    }
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    loop {
        term *= (half / k) * (half / k);
        sum += term;
        if term < sum * 1e-17 {
            return sum;
        }
        k += 1.0;
    }
}
