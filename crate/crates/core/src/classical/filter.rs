use crate::error::{invalid, Result};
use crate::imagecore::Image2D;

/// Sum-normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian smoothing with replicated borders.
pub fn gaussian_blur(img: &Image2D, sigma: f32) -> Result<Image2D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(invalid!("blur sigma must be positive, got {sigma}"));
    }
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let (w, h) = img.dims();
    let src = img.data();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut horiz = vec![0f64; w * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut horiz[y * w..(y + 1) * w];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &t) in kernel.iter().enumerate() {
                acc += t * row[clamp(x as isize + k as isize - r, w)] as f64;
            }
            *o = acc;
        }
    }

    let mut out = vec![0f32; w * h];
    let mut acc = vec![0f64; w];
    for y in 0..h {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, &t) in kernel.iter().enumerate() {
            let sy = clamp(y as isize + k as isize - r, h);
            for (a, &v) in acc.iter_mut().zip(&horiz[sy * w..(sy + 1) * w]) {
                *a += t * v;
            }
        }
        for (o, &a) in out[y * w..(y + 1) * w].iter_mut().zip(&acc) {
            *o = (a as f32).clamp(0.0, 1.0);
        }
    }
    Ok(Image2D::new(w, h, out)?.with_pixel_size(img.pixel_size_nm()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_is_fixed() {
        let img = Image2D::filled(23, 17, 0.37);
        let out = gaussian_blur(&img, 1.0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn impulse_center_matches_direct_kernel() {
        // oracle: 2-D Gaussian evaluated on the 7x7 support, normalized
        let mut total = 0.0;
        for dy in -3i32..=3 {
            for dx in -3i32..=3 {
                total += (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            }
        }
        let center = 1.0 / total;
        assert!((center - 0.1592).abs() < 1e-4);

        let mut img = Image2D::filled(15, 15, 0.0);
        img.set(7, 7, 1.0);
        let out = gaussian_blur(&img, 1.0).unwrap();
        assert!((out.get(7, 7) as f64 - center).abs() < 1e-6);
        let sum: f64 = out.data().iter().map(|&v| v as f64).sum();
        assert!((sum - 1.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_positive_sigma() {
        let img = Image2D::filled(4, 4, 0.0);
        assert!(gaussian_blur(&img, 0.0).is_err());
        assert!(gaussian_blur(&img, -1.0).is_err());
        assert!(gaussian_blur(&img, f32::NAN).is_err());
    }

    #[test]
    fn tiny_images_use_replicated_borders() {
        let img = Image2D::from_fn(2, 1, |x, _| x as f32);
        let out = gaussian_blur(&img, 2.0).unwrap();
        assert!(out.get(0, 0) > 0.0 && out.get(0, 0) < 0.5);
        assert!((out.get(0, 0) + out.get(1, 0) - 1.0).abs() < 1e-6);
    }
}
