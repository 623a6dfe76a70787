//! Gaussian kernels and blurs, the five-scale Gaussian stack, the DoG
//! pyramid, and discrete gradient operators.
//!
//! All filtering uses replicate (edge-clamp) padding; with that padding a
//! separable Gaussian pass is exactly equal to the dense 2D convolution, so
//! the fast path is used everywhere.

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Real;

/// The five Gaussian scales the whole pipeline is built on (ratio √2).
pub const GAUSSIAN_SCALES: [f64; 5] = [1.6000, 2.2627, 3.2000, 4.5255, 6.4000];

/// Square kernel with odd side `2*radius + 1`, row-major.
#[derive(Debug, Clone)]
pub struct Kernel2 {
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl Kernel2 {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    #[inline]
    pub fn at(&self, m: isize, n: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((m + r) * self.side() as isize + (n + r)) as usize]
    }
}

/// Dense 2D cross-correlation with replicate padding. The reference path:
/// slow but obviously correct, used directly for small kernels (Sobel, LoG)
/// and as the oracle for the separable blur.
pub fn convolve2d<S: Real>(img: &Image<S>, kernel: &Kernel2) -> Image<S> {
    debug_assert_eq!(img.channels(), 1);
    let (h, w) = (img.height(), img.width());
    let r = kernel.radius as isize;
    let mut out = Image::new(h, w, 1);
    for u in 0..h {
        for v in 0..w {
            let mut acc = 0.0f64;
            for m in -r..=r {
                for n in -r..=r {
                    let x = img.get_clamped(u as isize + m, v as isize + n, 0);
                    acc += kernel.at(m, n) * x.to_f64_lossy();
                }
            }
            out[(u, v, 0)] = S::of(acc);
        }
    }
    out
}

/// Normalized 1-D Gaussian taps of radius ⌈3σ⌉, as used by the separable
/// blur; exposed so differentiable graphs can reproduce the blur exactly.
pub fn gaussian_taps_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(gaussian_taps(sigma))
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut taps: Vec<f64> = (-(radius as isize)..=radius as isize)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Normalized 2D Gaussian kernel of radius ⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Result<Kernel2> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    let taps = gaussian_taps(sigma);
    let side = taps.len();
    let mut weights = vec![0.0; side * side];
    for (i, a) in taps.iter().enumerate() {
        for (j, b) in taps.iter().enumerate() {
            weights[i * side + j] = a * b;
        }
    }
    // the outer product of normalized 1D taps already sums to 1; renormalize
    // anyway to absorb rounding
    let sum: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= sum;
    }
    Ok(Kernel2 {
        radius: side / 2,
        weights,
    })
}

fn blur_separable<S: Real>(img: &Image<S>, taps: &[f64]) -> Image<S> {
    let (h, w, ch) = (img.height(), img.width(), img.channels());
    let r = (taps.len() / 2) as isize;
    let mut mid = Image::<S>::new(h, w, ch);
    for u in 0..h {
        for v in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (i, t) in taps.iter().enumerate() {
                    let n = v as isize + i as isize - r;
                    acc += t * img.get_clamped(u as isize, n, c).to_f64_lossy();
                }
                mid[(u, v, c)] = S::of(acc);
            }
        }
    }
    let mut out = Image::<S>::new(h, w, ch);
    for u in 0..h {
        for v in 0..w {
            for c in 0..ch {
                let mut acc = 0.0f64;
                for (i, t) in taps.iter().enumerate() {
                    let m = u as isize + i as isize - r;
                    acc += t * mid.get_clamped(m, v as isize, c).to_f64_lossy();
                }
                out[(u, v, c)] = S::of(acc);
            }
        }
    }
    out
}

/// Gaussian blur of a grayscale image (separable, replicate padding).
pub fn gaussian_blur<S: Real>(img: &Image<S>, sigma: f64) -> Result<Image<S>> {
    if img.channels() != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            got: img.channels(),
        });
    }
    gaussian_blur_any(img, sigma)
}

/// Gaussian blur applied independently per channel.
pub fn gaussian_blur_any<S: Real>(img: &Image<S>, sigma: f64) -> Result<Image<S>> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(blur_separable(img, &gaussian_taps(sigma)))
}

/// Five Gaussian blurs of one base image, each computed independently
/// from the base at the fixed scale list.
#[derive(Debug, Clone)]
pub struct ScaleStack<S: Real> {
    pub scales: [f64; 5],
    pub levels: Vec<Image<S>>,
}

pub fn build_scale_stack<S: Real>(img: &Image<S>) -> Result<ScaleStack<S>> {
    if img.channels() != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            got: img.channels(),
        });
    }
    let levels = GAUSSIAN_SCALES
        .iter()
        .map(|&s| gaussian_blur(img, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScaleStack {
        scales: GAUSSIAN_SCALES,
        levels,
    })
}

impl<S: Real> ScaleStack<S> {
    /// Index of the level whose scale is nearest to `sigma`.
    pub fn nearest_level(&self, sigma: f64) -> usize {
        self.scales
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                ((*a - sigma).abs())
                    .partial_cmp(&(*b - sigma).abs())
                    .unwrap()
            })
            .map(|(i, _)| i)
            .unwrap()
    }
}

/// Four pixelwise differences of consecutive Gaussian levels (high − low).
#[derive(Debug, Clone)]
pub struct DoGStack<S: Real> {
    pub diffs: Vec<Image<S>>,
    pub scale_pairs: [(f64, f64); 4],
}

pub fn build_dog<S: Real>(stack: &ScaleStack<S>) -> DoGStack<S> {
    let diffs = (0..4)
        .map(|j| stack.levels[j + 1].subtract(&stack.levels[j]).expect("stack levels share dims"))
        .collect();
    let scale_pairs = [
        (stack.scales[0], stack.scales[1]),
        (stack.scales[1], stack.scales[2]),
        (stack.scales[2], stack.scales[3]),
        (stack.scales[3], stack.scales[4]),
    ];
    DoGStack { diffs, scale_pairs }
}

/// Discrete gradients plus derived magnitude and orientation in [0, 2π).
#[derive(Debug, Clone)]
pub struct GradientField<S: Real> {
    pub gx: Image<S>,
    pub gy: Image<S>,
    pub magnitude: Image<S>,
    pub orientation: Image<S>,
}

impl<S: Real> GradientField<S> {
    fn from_components(gx: Image<S>, gy: Image<S>) -> Self {
        let (h, w) = (gx.height(), gx.width());
        let mut magnitude = Image::new(h, w, 1);
        let mut orientation = Image::new(h, w, 1);
        let two_pi = S::of(std::f64::consts::TAU);
        for u in 0..h {
            for v in 0..w {
                let (x, y) = (gx[(u, v, 0)], gy[(u, v, 0)]);
                magnitude[(u, v, 0)] = (x * x + y * y).sqrt();
                let mut a = y.atan2(x);
                if a < S::zero() {
                    a += two_pi;
                }
                if a >= two_pi {
                    a -= two_pi;
                }
                orientation[(u, v, 0)] = a;
            }
        }
        GradientField {
            gx,
            gy,
            magnitude,
            orientation,
        }
    }
}

/// Forward differences: gx[u,v] = img[u,v+1] − img[u,v] (last column zero),
/// gy likewise down rows.
pub fn forward_diff_gradients<S: Real>(img: &Image<S>) -> Result<GradientField<S>> {
    if img.channels() != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            got: img.channels(),
        });
    }
    let (h, w) = (img.height(), img.width());
    let mut gx = Image::new(h, w, 1);
    let mut gy = Image::new(h, w, 1);
    for u in 0..h {
        for v in 0..w {
            if v + 1 < w {
                gx[(u, v, 0)] = img[(u, v + 1, 0)] - img[(u, v, 0)];
            }
            if u + 1 < h {
                gy[(u, v, 0)] = img[(u + 1, v, 0)] - img[(u, v, 0)];
            }
        }
    }
    Ok(GradientField::from_components(gx, gy))
}

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

fn sobel_kernel(k: &[[f64; 3]; 3]) -> Kernel2 {
    Kernel2 {
        radius: 1,
        weights: k.iter().flatten().copied().collect(),
    }
}

/// Standard 3×3 Sobel gradients with replicate padding.
pub fn sobel_gradients<S: Real>(img: &Image<S>) -> Result<GradientField<S>> {
    if img.channels() != 1 {
        return Err(Error::ChannelCount {
            expected: 1,
            got: img.channels(),
        });
    }
    let gx = convolve2d(img, &sobel_kernel(&SOBEL_X));
    let gy = convolve2d(img, &sobel_kernel(&SOBEL_Y));
    Ok(GradientField::from_components(gx, gy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = Image::new(h, w, 1);
        for v in img.data_mut() {
            *v = rng.gen_range(0.0..1.0);
        }
        img
    }

    #[test]
    fn kernel_sums_to_one() {
        for sigma in [0.5, 1.0, 1.6, 3.2, 6.4] {
            let k = gaussian_kernel(sigma).unwrap();
            let sum: f64 = k.weights.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "sigma={sigma}: {sum}");
        }
    }

    #[test]
    fn kernel_radius_is_three_sigma() {
        let k = gaussian_kernel(1.6).unwrap();
        assert_eq!(k.radius, 5);
        assert_eq!(k.side(), 11);
    }

    #[test]
    fn kernel_center_strictly_greatest() {
        let k = gaussian_kernel(2.0).unwrap();
        let center = k.at(0, 0);
        for m in -(k.radius as isize)..=k.radius as isize {
            for n in -(k.radius as isize)..=k.radius as isize {
                if (m, n) != (0, 0) {
                    assert!(k.at(m, n) < center);
                }
            }
        }
    }

    #[test]
    fn nonpositive_sigma_rejected() {
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_blur(&Image::<f64>::new(4, 4, 1), -1.0).is_err());
    }

    #[test]
    fn blur_preserves_constant() {
        let img = Image::<f64>::constant(12, 12, 1, 0.42);
        let out = gaussian_blur(&img, 2.3).unwrap();
        for &v in out.data() {
            assert!((v - 0.42).abs() < 1e-12);
        }
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut img = Image::<f64>::new(33, 33, 1);
        img[(16, 16, 0)] = 1.0;
        let sigma = 1.6;
        let out = gaussian_blur(&img, sigma).unwrap();
        let k = gaussian_kernel(sigma).unwrap();
        let r = k.radius as isize;
        for m in -r..=r {
            for n in -r..=r {
                let got = out[((16 + m) as usize, (16 + n) as usize, 0)];
                assert!((got - k.at(m, n)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separable_matches_dense_oracle() {
        let img = random_image(16, 16, 5);
        let sigma = 2.2627;
        let fast = gaussian_blur(&img, sigma).unwrap();
        let dense = convolve2d(&img, &gaussian_kernel(sigma).unwrap());
        for (a, b) in fast.data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn blur_is_linear() {
        let x = random_image(12, 12, 1);
        let y = random_image(12, 12, 2);
        let (a, b) = (0.7, -0.3);
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = gaussian_blur(&combo, 1.6).unwrap();
        let rhs = gaussian_blur(&x, 1.6)
            .unwrap()
            .scale(a)
            .add(&gaussian_blur(&y, 1.6).unwrap().scale(b))
            .unwrap();
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn blur_semigroup_in_interior() {
        let img = random_image(48, 48, 3);
        let (s1, s2) = (1.6, 1.6);
        let twice = gaussian_blur(&gaussian_blur(&img, s1).unwrap(), s2).unwrap();
        let once = gaussian_blur(&img, (s1 * s1 + s2 * s2).sqrt()).unwrap();
        for u in 12..36 {
            for v in 12..36 {
                assert!((twice[(u, v, 0)] - once[(u, v, 0)]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn scale_stack_uses_fixed_scales() {
        let img = random_image(24, 24, 8);
        let stack = build_scale_stack(&img).unwrap();
        assert_eq!(stack.scales, [1.6000, 2.2627, 3.2000, 4.5255, 6.4000]);
        for pair in stack.scales.windows(2) {
            assert!((pair[1] / pair[0] - std::f64::consts::SQRT_2).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_stack_and_zero_dog() {
        let img = Image::<f64>::constant(16, 16, 1, 0.3);
        let stack = build_scale_stack(&img).unwrap();
        for level in &stack.levels {
            for &v in level.data() {
                assert!((v - 0.3).abs() < 1e-12);
            }
        }
        let dog = build_dog(&stack);
        for d in &dog.diffs {
            for &v in d.data() {
                assert!(v.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dog_telescopes() {
        let img = random_image(20, 20, 11);
        let stack = build_scale_stack(&img).unwrap();
        let dog = build_dog(&stack);
        let total = dog.diffs[0]
            .add(&dog.diffs[1])
            .unwrap()
            .add(&dog.diffs[2])
            .unwrap()
            .add(&dog.diffs[3])
            .unwrap();
        let want = stack.levels[4].subtract(&stack.levels[0]).unwrap();
        for (a, b) in total.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dog_is_antisymmetric() {
        let img = random_image(16, 16, 13);
        let neg = img.scale(-1.0);
        let d1 = build_dog(&build_scale_stack(&img).unwrap());
        let d2 = build_dog(&build_scale_stack(&neg).unwrap());
        for (a, b) in d1.diffs.iter().zip(&d2.diffs) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x + y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dog_peaks_at_matched_blob() {
        // Gaussian blob of σ_b = 2.2627: the strongest |DoG| response over
        // all pixels and levels must sit at the blob center
        let (h, w) = (41, 41);
        let sb = 2.2627f64;
        let img = Image::from_fn(h, w, |u, v| {
            let d2 = (u as f64 - 20.0).powi(2) + (v as f64 - 20.0).powi(2);
            (-d2 / (2.0 * sb * sb)).exp()
        });
        let dog = build_dog(&build_scale_stack(&img).unwrap());
        let mut best = (0usize, 0usize, 0usize, 0.0f64);
        for (j, d) in dog.diffs.iter().enumerate() {
            for u in 0..h {
                for v in 0..w {
                    let r = d[(u, v, 0)].abs();
                    if r > best.3 {
                        best = (j, u, v, r);
                    }
                }
            }
        }
        assert_eq!((best.1, best.2), (20, 20));
    }

    #[test]
    fn forward_diff_on_ramp() {
        let w = 16usize;
        let img = Image::from_fn(8, w, |_, v| v as f64 / w as f64);
        let g = forward_diff_gradients(&img).unwrap();
        for u in 0..8 {
            for v in 0..w - 1 {
                assert!((g.gx[(u, v, 0)] - 1.0 / w as f64).abs() < 1e-12);
                assert!(g.gy[(u, v, 0)].abs() < 1e-12);
            }
            assert_eq!(g.gx[(u, w - 1, 0)], 0.0);
        }
    }

    #[test]
    fn forward_diff_matches_loop_oracle() {
        let img = random_image(8, 8, 17);
        let g = forward_diff_gradients(&img).unwrap();
        for u in 0..8 {
            for v in 0..8 {
                let ex = if v + 1 < 8 { img[(u, v + 1, 0)] - img[(u, v, 0)] } else { 0.0 };
                let ey = if u + 1 < 8 { img[(u + 1, v, 0)] - img[(u, v, 0)] } else { 0.0 };
                assert_eq!(g.gx[(u, v, 0)], ex);
                assert_eq!(g.gy[(u, v, 0)], ey);
            }
        }
    }

    #[test]
    fn constant_gradients_are_zero() {
        let img = Image::<f64>::constant(10, 10, 1, 0.5);
        for g in [forward_diff_gradients(&img).unwrap(), sobel_gradients(&img).unwrap()] {
            assert!(g.gx.data().iter().all(|&v| v.abs() < 1e-12));
            assert!(g.gy.data().iter().all(|&v| v.abs() < 1e-12));
            assert!(g.magnitude.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn sobel_step_edge() {
        let img: Image<f64> = Image::from_fn(9, 9, |_, v| if v >= 4 { 1.0 } else { 0.0 });
        let g = sobel_gradients(&img).unwrap();
        for u in 1..8 {
            for v in 1..8 {
                assert!(g.gy[(u, v, 0)].abs() < 1e-12);
            }
            // |gx| is maximal right at the edge columns
            assert!(g.gx[(u, 3, 0)].abs() >= g.gx[(u, 1, 0)].abs());
            assert!(g.gx[(u, 4, 0)].abs() >= g.gx[(u, 6, 0)].abs());
        }
    }

    #[test]
    fn sobel_matches_dense_oracle() {
        let img = random_image(8, 8, 23);
        let g = sobel_gradients(&img).unwrap();
        let kx = Kernel2 {
            radius: 1,
            weights: SOBEL_X.iter().flatten().copied().collect(),
        };
        let dense = convolve2d(&img, &kx);
        for (a, b) in g.gx.data().iter().zip(dense.data()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn orientation_in_range() {
        let img = random_image(12, 12, 29);
        let g = sobel_gradients(&img).unwrap();
        for &a in g.orientation.data() {
            assert!((0.0..std::f64::consts::TAU).contains(&a));
        }
    }
}
