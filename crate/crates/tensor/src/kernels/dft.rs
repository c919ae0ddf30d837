//! 2-D discrete Fourier transform over the last two axes.
//!
//! Forward transform is unnormalized; the inverse carries the `1/(H·W)` factor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::real::Real;

/// In-place 2-D DFT of every `h×w` plane in `re`/`im`.
pub fn dft2_planes<T: Real>(re: &mut [T], im: &mut [T], h: usize, w: usize, inverse: bool) {
    debug_assert_eq!(re.len(), im.len());
    let plane = h * w;
    if plane == 0 {
        return;
    }
    let mut planner = FftPlanner::<T>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    let mut buf: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); plane];
    let mut col: Vec<Complex<T>> = vec![Complex::new(T::zero(), T::zero()); h];
    let norm = if inverse { T::one() / T::of(plane as f64) } else { T::one() };
    for p in 0..re.len() / plane {
        let r = &mut re[p * plane..(p + 1) * plane];
        let i = &mut im[p * plane..(p + 1) * plane];
        for (b, (&a, &c)) in buf.iter_mut().zip(r.iter().zip(i.iter())) {
            *b = Complex::new(a, c);
        }
        for row in buf.chunks_exact_mut(w) {
            row_fft.process(row);
        }
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            col_fft.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        for (b, (a, c)) in buf.iter().zip(r.iter_mut().zip(i.iter_mut())) {
            *a = b.re * norm;
            *c = b.im * norm;
        }
    }
}

/// Index of the element that lands at position `i` after an fftshift of extent `n`.
#[inline]
pub fn fftshift_source(i: usize, n: usize) -> usize {
    (i + n - n / 2) % n
}

/// Index of the element that lands at position `i` after an ifftshift of extent `n`.
#[inline]
pub fn ifftshift_source(i: usize, n: usize) -> usize {
    (i + n / 2) % n
}
