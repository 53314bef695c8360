//! Deterministic corruption bench with five severities per kind.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, PrngStreams, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    GaussianNoise,
    ImpulseNoise,
    BoxBlur,
    Rotation,
    Contrast,
    PixelDropout,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 6] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::BoxBlur,
        CorruptionKind::Rotation,
        CorruptionKind::Contrast,
        CorruptionKind::PixelDropout,
    ];

    /// Kinds that act on each feature independently and so also apply to
    /// non-image data.
    pub const PER_FEATURE: [CorruptionKind; 4] = [
        CorruptionKind::GaussianNoise,
        CorruptionKind::ImpulseNoise,
        CorruptionKind::Contrast,
        CorruptionKind::PixelDropout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::GaussianNoise => "gaussian_noise",
            CorruptionKind::ImpulseNoise => "impulse_noise",
            CorruptionKind::BoxBlur => "box_blur",
            CorruptionKind::Rotation => "rotation",
            CorruptionKind::Contrast => "contrast",
            CorruptionKind::PixelDropout => "pixel_dropout",
        }
    }

    pub fn needs_image(self) -> bool {
        matches!(self, CorruptionKind::BoxBlur | CorruptionKind::Rotation)
    }

    /// Distortion parameter per severity 1..=5: noise sd, flip probability,
    /// blur passes, degrees, contrast factor, drop fraction.
    pub fn table(self) -> [f64; 5] {
        match self {
            CorruptionKind::GaussianNoise => [0.05, 0.10, 0.15, 0.20, 0.25],
            CorruptionKind::ImpulseNoise => [0.02, 0.04, 0.07, 0.10, 0.15],
            CorruptionKind::BoxBlur => [1.0, 2.0, 3.0, 4.0, 5.0],
            CorruptionKind::Rotation => [5.0, 10.0, 15.0, 20.0, 25.0],
            CorruptionKind::Contrast => [0.75, 0.6, 0.5, 0.4, 0.3],
            CorruptionKind::PixelDropout => [0.05, 0.10, 0.15, 0.20, 0.25],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn param(&self) -> Result<f64> {
        if !(1..=5).contains(&self.severity) {
            return Err(Error::input(format!("severity {} outside 1..=5", self.severity)));
        }
        Ok(self.kind.table()[self.severity as usize - 1])
    }
}

pub fn corrupt(dataset: &Dataset, spec: &CorruptionSpec) -> Result<Dataset> {
    let p = spec.param()?;
    let side = match (spec.kind.needs_image(), dataset.side) {
        (true, None) => {
            return Err(Error::input(format!("{} needs image-shaped data", spec.kind.name())));
        }
        (_, s) => s.unwrap_or(0),
    };
    let mut rng = rng_from_seed(spec.seed);
    let d = dataset.n_features();
    let mut data = dataset.x.data().to_vec();
    for img in data.chunks_mut(d.max(1)) {
        match spec.kind {
            CorruptionKind::GaussianNoise => {
                for v in img.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += p * z;
                }
            }
            CorruptionKind::ImpulseNoise => {
                for v in img.iter_mut() {
                    if rng.random_bool(p) {
                        *v = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                    }
                }
            }
            CorruptionKind::BoxBlur => {
                for _ in 0..p as usize {
                    box_blur(img, side);
                }
            }
            CorruptionKind::Rotation => rotate(img, side, p),
            CorruptionKind::Contrast => {
                for v in img.iter_mut() {
                    *v = (*v - 0.5) * p + 0.5;
                }
            }
            CorruptionKind::PixelDropout => {
                let k = (p * d as f64).round() as usize;
                for i in rand::seq::index::sample(&mut rng, d, k) {
                    img[i] = 0.0;
                }
            }
        }
        for v in img.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Dataset::new(
        Tensor::from_vec(dataset.x.shape(), data)?,
        dataset.y.clone(),
        dataset.n_classes,
        dataset.split,
        dataset.side,
    )
}

/// One pass of a 3x3 mean filter; border pixels average their in-bounds
/// neighbours only.
fn box_blur(img: &mut [f64], side: usize) {
    let src = img.to_vec();
    for r in 0..side {
        for c in 0..side {
            let (mut s, mut n) = (0.0, 0u32);
            for rr in r.saturating_sub(1)..(r + 2).min(side) {
                for cc in c.saturating_sub(1)..(c + 2).min(side) {
                    s += src[rr * side + cc];
                    n += 1;
                }
            }
            img[r * side + c] = s / n as f64;
        }
    }
}

/// Rotation by `deg` degrees about the image centre using inverse-mapped
/// bilinear sampling; taps outside the image read as 0.
fn rotate(img: &mut [f64], side: usize, deg: f64) {
    let src = img.to_vec();
    let (sin, cos) = deg.to_radians().sin_cos();
    let centre = (side as f64 - 1.0) / 2.0;
    let tap = |r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
            0.0
        } else {
            src[r as usize * side + c as usize]
        }
    };
    for r in 0..side {
        for c in 0..side {
            let dx = c as f64 - centre;
            let dy = r as f64 - centre;
            let sx = cos * dx + sin * dy + centre;
            let sy = -sin * dx + cos * dy + centre;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            img[r * side + c] = (1.0 - fy) * ((1.0 - fx) * tap(y0, x0) + fx * tap(y0, x0 + 1))
                + fy * ((1.0 - fx) * tap(y0 + 1, x0) + fx * tap(y0 + 1, x0 + 1));
        }
    }
}

fn suite_of(dataset: &Dataset, seed: u64, kinds: &[CorruptionKind]) -> Result<Vec<(CorruptionSpec, Dataset)>> {
    let streams = PrngStreams::new(seed);
    let mut out = Vec::with_capacity(kinds.len() * 5);
    for &kind in kinds {
        let k = CorruptionKind::ALL.iter().position(|&c| c == kind).expect("known kind") as u64;
        for severity in 1..=5u8 {
            let spec = CorruptionSpec {
                kind,
                severity,
                seed: streams.derive_seed(Stream::Corruption, k * 5 + severity as u64 - 1),
            };
            out.push((spec, corrupt(dataset, &spec)?));
        }
    }
    Ok(out)
}

/// All six kinds at all five severities (30 members), ordered by kind then
/// severity, with per-member seeds from the corruption stream of `seed`.
pub fn ood_suite(dataset: &Dataset, seed: u64) -> Result<Vec<(CorruptionSpec, Dataset)>> {
    suite_of(dataset, seed, &CorruptionKind::ALL)
}

/// The 20-member suite of per-feature kinds, for non-image data.
pub fn feature_ood_suite(dataset: &Dataset, seed: u64) -> Result<Vec<(CorruptionSpec, Dataset)>> {
    suite_of(dataset, seed, &CorruptionKind::PER_FEATURE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;

    fn images(n: usize, side: usize, f: impl Fn(usize, usize) -> f64) -> Dataset {
        let d = side * side;
        let data = (0..n * d).map(|i| f(i / d, i % d)).collect();
        Dataset::new(
            Tensor::from_vec(&[n, d], data).unwrap(),
            (0..n).map(|i| i % 10).collect(),
            10,
            Split::Test,
            Some(side),
        )
        .unwrap()
    }

    fn spec(kind: CorruptionKind, severity: u8) -> CorruptionSpec {
        CorruptionSpec {
            kind,
            severity,
            seed: 99,
        }
    }

    #[test]
    fn gaussian_noise_on_black_is_clipped_normal() {
        let d = images(1, 8, |_, _| 0.0);
        let out = corrupt(&d, &spec(CorruptionKind::GaussianNoise, 3)).unwrap();
        let mut rng = rng_from_seed(99);
        for &v in out.x.data() {
            let z: f64 = StandardNormal.sample(&mut rng);
            assert_eq!(v, (0.15 * z).clamp(0.0, 1.0));
        }
    }

    #[test]
    fn dropout_zeroes_exact_count() {
        let d = images(5, 14, |_, _| 0.7);
        let out = corrupt(&d, &spec(CorruptionKind::PixelDropout, 5)).unwrap();
        let expected = (0.25f64 * 196.0).round() as usize;
        for i in 0..5 {
            assert_eq!(out.x.row(i).iter().filter(|&&v| v == 0.0).count(), expected);
        }
    }

    #[test]
    fn blur_keeps_constant_images() {
        let d = images(2, 6, |_, _| 0.5);
        for s in 1..=5 {
            assert_eq!(corrupt(&d, &spec(CorruptionKind::BoxBlur, s)).unwrap().x, d.x);
        }
        let d = images(1, 6, |_, _| 0.3);
        let out = corrupt(&d, &spec(CorruptionKind::BoxBlur, 5)).unwrap();
        assert!(out.x.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn rotation_keeps_centre_and_moves_offcentre_mass() {
        // 5x5 with a single lit pixel at the centre: unchanged by rotation.
        let d = images(1, 5, |_, p| if p == 12 { 1.0 } else { 0.0 });
        let out = corrupt(&d, &spec(CorruptionKind::Rotation, 5)).unwrap();
        assert!((out.x.data()[12] - 1.0).abs() < 1e-12);
        let d = images(1, 5, |_, p| if p == 14 { 1.0 } else { 0.0 });
        let out = corrupt(&d, &spec(CorruptionKind::Rotation, 5)).unwrap();
        assert!(out.x.data()[14] < 1.0);
    }

    #[test]
    fn contrast_pulls_towards_half() {
        let d = images(1, 4, |_, p| if p % 2 == 0 { 1.0 } else { 0.0 });
        let out = corrupt(&d, &spec(CorruptionKind::Contrast, 1)).unwrap();
        assert_eq!(out.x.data()[0], 0.875);
        assert_eq!(out.x.data()[1], 0.125);
    }

    #[test]
    fn image_kinds_reject_flat_features() {
        let d = Dataset::new(Tensor::zeros(&[2, 3]), vec![0, 1], 2, Split::Test, None).unwrap();
        assert!(matches!(corrupt(&d, &spec(CorruptionKind::BoxBlur, 1)), Err(Error::Input(_))));
        assert!(matches!(corrupt(&d, &spec(CorruptionKind::Rotation, 1)), Err(Error::Input(_))));
        assert!(corrupt(&d, &spec(CorruptionKind::Contrast, 1)).is_ok());
        assert_eq!(feature_ood_suite(&d, 0).unwrap().len(), 20);
        assert!(ood_suite(&d, 0).is_err());
    }

    #[test]
    fn severity_out_of_range_is_rejected() {
        let d = images(1, 4, |_, _| 0.5);
        assert!(corrupt(&d, &spec(CorruptionKind::Contrast, 0)).is_err());
        assert!(corrupt(&d, &spec(CorruptionKind::Contrast, 6)).is_err());
    }

    #[test]
    fn tables_are_strictly_monotone_in_distortion() {
        for kind in CorruptionKind::ALL {
            let t = kind.table();
            let increasing = t.windows(2).all(|w| w[1] > w[0]);
            let decreasing = t.windows(2).all(|w| w[1] < w[0]);
            assert!(increasing || (kind == CorruptionKind::Contrast && decreasing), "{kind:?}");
        }
    }

    #[test]
    fn suite_has_thirty_members_and_is_reproducible() {
        let d = images(3, 8, |i, p| ((i * 31 + p * 7) % 11) as f64 / 10.0);
        let a = ood_suite(&d, 5).unwrap();
        assert_eq!(a.len(), 30);
        let b = ood_suite(&d, 5).unwrap();
        assert_eq!(a, b);
        for (s, c) in &a {
            assert_eq!(c.y, d.y);
            assert_eq!(c.len(), d.len());
            assert!(c.x.data().iter().all(|v| (0.0..=1.0).contains(v)), "{s:?}");
        }
    }
}
