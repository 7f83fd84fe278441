//! One- and two-dimensional complex DFTs.
//!
//! Power-of-two lengths use an iterative radix-2 transform; every other
//! length falls back to the direct O(n²) sum, which also serves as the
//! reference the fast path is tested against. Transforms here are
//! unnormalized; the caller applies the unitary scale.

use num_complex::Complex64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// `e^{-2πi jk/n}`
    Forward,
    /// `e^{+2πi jk/n}`
    Inverse,
}

/// `e^{-2πi m/n}`, exact at multiples of a quarter turn.
pub fn twiddle(m: usize, n: usize) -> Complex64 {
    let m = m % n;
    if (4 * m).is_multiple_of(n) {
        return match 4 * m / n {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, -1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, 1.0),
        };
    }
    let theta = -2.0 * std::f64::consts::PI * m as f64 / n as f64;
    Complex64::new(theta.cos(), theta.sin())
}

/// Precomputed plan for a fixed length.
#[derive(Clone, Debug)]
pub struct Dft1 {
    n: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Dft1 {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "zero-length transform");
        let twiddles = (0..n).map(|m| twiddle(m, n)).collect();
        let bitrev = if n.is_power_of_two() {
            let bits = n.trailing_zeros();
            (0..n)
                .map(|i| {
                    if bits == 0 {
                        0
                    } else {
                        i.reverse_bits() >> (usize::BITS - bits)
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Dft1 {
            n,
            twiddles,
            bitrev,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    fn w(&self, m: usize, dir: Direction) -> Complex64 {
        let t = self.twiddles[m % self.n];
        match dir {
            Direction::Forward => t,
            Direction::Inverse => t.conj(),
        }
    }

    /// In-place unnormalized transform. `scratch` must hold `len()` values.
    pub fn process(&self, data: &mut [Complex64], scratch: &mut [Complex64], dir: Direction) {
        debug_assert_eq!(data.len(), self.n);
        if self.n == 1 {
            return;
        }
        if self.bitrev.is_empty() {
            self.direct(data, scratch, dir);
        } else {
            self.radix2(data, dir);
        }
    }

    fn direct(&self, data: &mut [Complex64], scratch: &mut [Complex64], dir: Direction) {
        let n = self.n;
        for (k, out) in scratch[..n].iter_mut().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, x) in data.iter().enumerate() {
                acc += x * self.w(j * k % n, dir);
            }
            *out = acc;
        }
        data.copy_from_slice(&scratch[..n]);
    }

    fn radix2(&self, data: &mut [Complex64], dir: Direction) {
        let n = self.n;
        for i in 0..n {
            let j = self.bitrev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.w(k * step, dir);
                    let a = data[start + k];
                    let b = data[start + k + half] * w;
                    data[start + k] = a + b;
                    data[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Direct O(n²) transform, independent of [`Dft1`]'s plan.
pub fn dft_naive(data: &[Complex64], dir: Direction) -> Vec<Complex64> {
    let n = data.len();
    (0..n)
        .map(|k| {
            data.iter()
                .enumerate()
                .map(|(j, x)| {
                    let w = twiddle(j * k % n, n);
                    x * match dir {
                        Direction::Forward => w,
                        Direction::Inverse => w.conj(),
                    }
                })
                .sum()
        })
        .collect()
}

/// Unitary 2D transform plan for an `height × width` grid.
#[derive(Clone, Debug)]
pub struct Dft2 {
    width: usize,
    height: usize,
    rows: Dft1,
    cols: Dft1,
}

impl Dft2 {
    pub fn new(width: usize, height: usize) -> Self {
        Dft2 {
            width,
            height,
            rows: Dft1::new(width),
            cols: Dft1::new(height),
        }
    }

    /// In-place unitary transform of a row-major grid: rows first, then
    /// columns, then the `1/√(HW)` scale.
    pub fn process(&self, data: &mut [Complex64], dir: Direction) {
        let (w, h) = (self.width, self.height);
        debug_assert_eq!(data.len(), w * h);
        let mut scratch = vec![Complex64::new(0.0, 0.0); w.max(h)];
        for row in data.chunks_exact_mut(w) {
            self.rows.process(row, &mut scratch, dir);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = data[y * w + x];
            }
            self.cols.process(&mut col, &mut scratch, dir);
            for y in 0..h {
                data[y * w + x] = col[y];
            }
        }
        let scale = 1.0 / ((w * h) as f64).sqrt();
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, input: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = input.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.process(&mut buf, Direction::Forward);
        buf
    }
}
