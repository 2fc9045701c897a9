//! Colored noise fields synthesized in the frequency domain.

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Zero-mean field of the given size whose spectral amplitude falls off as
/// `1 / f^exponent` (1 for pink, 2 for brown), with uniformly random phases,
/// rescaled to standard deviation `stddev`. Row-major, `width * height`.
pub fn colored_noise<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    exponent: f64,
    stddev: f64,
    rng: &mut R,
) -> Vec<f64> {
    let mut spectrum = Vec::with_capacity(width * height);
    for v in 0..height {
        let fy = v.min(height - v) as f64 / height as f64;
        for u in 0..width {
            let fx = u.min(width - u) as f64 / width as f64;
            let f = (fx * fx + fy * fy).sqrt();
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let amplitude = if f == 0.0 { 0.0 } else { f.powf(-exponent) };
            spectrum.push(Complex::from_polar(amplitude, phase));
        }
    }

    inverse_fft_2d(&mut spectrum, width, height);
    let field: Vec<f64> = spectrum.iter().map(|z| z.re).collect();

    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let sd = (field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.0; field.len()];
    }
    field.into_iter().map(|v| (v - mean) / sd * stddev).collect()
}

fn inverse_fft_2d(data: &mut [Complex<f64>], width: usize, height: usize) {
    let mut planner = FftPlanner::new();
    let rows = planner.plan_fft_inverse(width);
    for row in data.chunks_exact_mut(width) {
        rows.process(row);
    }
    let cols = planner.plan_fft_inverse(height);
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = data[y * width + x];
        }
        cols.process(&mut column);
        for y in 0..height {
            data[y * width + x] = column[y];
        }
    }
}
