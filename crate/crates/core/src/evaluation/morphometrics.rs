use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::classical::{label_components, Connectivity};
use crate::error::{invalid, Result};
use crate::imagecore::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MorphometricsOptions {
    pub bin_width_nm: f64,
    /// Components at or above this equivalent circle diameter count as large.
    pub large_ecd_nm: f64,
    pub connectivity: Connectivity,
}

impl Default for MorphometricsOptions {
    fn default() -> Self {
        MorphometricsOptions {
            bin_width_nm: 50.0,
            large_ecd_nm: 500.0,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    /// Component label, from 1 in raster order.
    pub label: u32,
    pub pixel_area: usize,
    pub area_nm2: f64,
    /// Equivalent circle diameter `2 sqrt(A / pi)`.
    pub ecd_nm: f64,
    pub large: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo_nm: f64,
    pub hi_nm: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Morphometrics {
    pub pixel_size_nm: f64,
    pub field_area_nm2: f64,
    pub particles: Vec<Particle>,
    pub count: usize,
    pub large_count: usize,
    /// Particles per square micrometre of field.
    pub density_per_um2: f64,
    pub area_fraction: f64,
    pub histogram: Vec<HistogramBin>,
}

impl Morphometrics {
    /// Particles per square nanometre.
    pub fn density_per_nm2(&self) -> f64 {
        self.count as f64 / self.field_area_nm2
    }

    /// One row per particle: `label,pixel_area,area_nm2,ecd_nm,large`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,pixel_area,area_nm2,ecd_nm,large\n");
        for p in &self.particles {
            s.push_str(&format!("{},{},{},{},{}\n", p.label, p.pixel_area, p.area_nm2, p.ecd_nm, p.large as u8));
        }
        s
    }

    /// `lo_nm,hi_nm,count` rows.
    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("lo_nm,hi_nm,count\n");
        for b in &self.histogram {
            s.push_str(&format!("{},{},{}\n", b.lo_nm, b.hi_nm, b.count));
        }
        s
    }
}

pub fn equivalent_circle_diameter(area: f64) -> f64 {
    2.0 * (area / PI).sqrt()
}

pub fn morphometrics(mask: &BinaryMask, pixel_size_nm: f64, opts: &MorphometricsOptions) -> Result<Morphometrics> {
    if !(pixel_size_nm > 0.0 && pixel_size_nm.is_finite()) {
        return Err(invalid!("pixel size must be positive, got {pixel_size_nm}"));
    }
    if !(opts.bin_width_nm > 0.0 && opts.bin_width_nm.is_finite()) {
        return Err(invalid!("histogram bin width must be positive, got {}", opts.bin_width_nm));
    }
    if !(opts.large_ecd_nm >= 0.0) {
        return Err(invalid!("large-particle threshold must be non-negative"));
    }
    let labels = label_components(mask, opts.connectivity);
    let px_area = pixel_size_nm * pixel_size_nm;
    let particles: Vec<Particle> = labels
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let area = n as f64 * px_area;
            let ecd = equivalent_circle_diameter(area);
            Particle {
                label: i as u32 + 1,
                pixel_area: n,
                area_nm2: area,
                ecd_nm: ecd,
                large: ecd >= opts.large_ecd_nm,
            }
        })
        .collect();
    let mut histogram: Vec<HistogramBin> = Vec::new();
    for p in &particles {
        let k = (p.ecd_nm / opts.bin_width_nm).floor() as usize;
        while histogram.len() <= k {
            let j = histogram.len() as f64;
            histogram.push(HistogramBin {
                lo_nm: j * opts.bin_width_nm,
                hi_nm: (j + 1.0) * opts.bin_width_nm,
                count: 0,
            });
        }
        histogram[k].count += 1;
    }
    let (w, h) = mask.dims();
    let field = (w * h) as f64 * px_area;
    Ok(Morphometrics {
        pixel_size_nm,
        field_area_nm2: field,
        count: particles.len(),
        large_count: particles.iter().filter(|p| p.large).count(),
        density_per_um2: particles.len() as f64 / (field * 1e-6),
        area_fraction: mask.foreground_fraction(),
        particles,
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_mask() {
        let m = morphometrics(&BinaryMask::empty(10, 10), 7.0, &Default::default()).unwrap();
        assert_eq!((m.count, m.large_count), (0, 0));
        assert_eq!(m.density_per_um2, 0.0);
        assert!(m.histogram.is_empty());
    }

    #[test]
    fn square_component() {
        let mask = BinaryMask::from_fn(20, 20, |x, y| (5..15).contains(&x) && (5..15).contains(&y));
        let m = morphometrics(&mask, 10.0, &Default::default()).unwrap();
        assert_eq!(m.count, 1);
        let p = &m.particles[0];
        assert_eq!(p.area_nm2, 1e4);
        assert!((p.ecd_nm - 112.837_916_709_551_26).abs() < 1e-9);
        assert!(!p.large);
        assert_eq!(m.histogram.len(), 3);
        assert_eq!(m.histogram[2].count, 1);
        assert!((m.density_per_nm2() - 1.0 / 40_000.0).abs() < 1e-18);
        assert!((m.density_per_um2 - 25.0).abs() < 1e-9);
    }

    #[test]
    fn diagonal_connectivity() {
        let mask = BinaryMask::from_fn(2, 2, |x, y| x == y);
        let eight = morphometrics(&mask, 1.0, &Default::default()).unwrap();
        let four = morphometrics(
            &mask,
            1.0,
            &MorphometricsOptions {
                connectivity: Connectivity::Four,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((eight.count, four.count), (1, 2));
    }

    #[test]
    fn large_threshold_is_inclusive() {
        // area pi * 250^2 gives ECD 500 exactly when the pixel area matches
        let px = (PI * 250.0 * 250.0).sqrt();
        let m = morphometrics(&BinaryMask::from_fn(1, 1, |_, _| true), px, &Default::default()).unwrap();
        assert!((m.particles[0].ecd_nm - 500.0).abs() < 1e-9);
        let opts = MorphometricsOptions {
            large_ecd_nm: m.particles[0].ecd_nm,
            ..Default::default()
        };
        assert_eq!(morphometrics(&BinaryMask::from_fn(1, 1, |_, _| true), px, &opts).unwrap().large_count, 1);
    }

    #[test]
    fn bad_pixel_size() {
        assert!(morphometrics(&BinaryMask::empty(2, 2), 0.0, &Default::default()).is_err());
        assert!(morphometrics(&BinaryMask::empty(2, 2), -1.0, &Default::default()).is_err());
    }

    proptest! {
        #[test]
        fn area_is_conserved(
            (w, h, bits) in (1usize..16, 1usize..16).prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<bool>(), w * h))),
            px in 0.5f64..20.0,
        ) {
            let mask = BinaryMask::new(w, h, bits).unwrap();
            let m = morphometrics(&mask, px, &Default::default()).unwrap();
            let total: f64 = m.particles.iter().map(|p| p.area_nm2).sum();
            prop_assert!((total - mask.count() as f64 * px * px).abs() < 1e-9 * total.max(1.0));
            prop_assert_eq!(m.count, label_components(&mask, Connectivity::Eight).count());
            prop_assert_eq!(m.histogram.iter().map(|b| b.count).sum::<usize>(), m.count);
            prop_assert!(m.density_per_um2 >= 0.0);
        }
    }
}
