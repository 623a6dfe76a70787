//! Additive synthetic rain: anti-aliased streak segments, optionally
//! blurred, superposed on a clean image.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Real;
use crate::scalespace::gaussian_blur_any;

/// Parameters of the synthetic rain generator. Angles are degrees away
/// from vertical; all sampling is driven by `seed` alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RainConfig {
    pub streak_count: usize,
    pub angle_deg_mean: f64,
    pub angle_deg_jitter: f64,
    pub length_px: (f64, f64),
    pub width_px: (f64, f64),
    pub intensity: (f64, f64),
    pub blur_sigma: f64,
    pub seed: u64,
}

impl Default for RainConfig {
    fn default() -> Self {
        RainConfig {
            streak_count: 120,
            angle_deg_mean: 12.0,
            angle_deg_jitter: 6.0,
            length_px: (8.0, 22.0),
            width_px: (0.7, 1.6),
            intensity: (0.15, 0.45),
            blur_sigma: 0.6,
            seed: 0,
        }
    }
}

impl RainConfig {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |r: (f64, f64)| r.0 <= r.1 && r.0.is_finite() && r.1.is_finite();
        if !range_ok(self.length_px) || !range_ok(self.width_px) || !range_ok(self.intensity) {
            return Err(Error::InvalidArgument("rain config has an empty range".into()));
        }
        if self.intensity.0 < 0.0 || self.intensity.1 > 1.0 {
            return Err(Error::InvalidArgument("rain intensity must lie in [0,1]".into()));
        }
        if self.blur_sigma < 0.0 {
            return Err(Error::InvalidArgument("blur_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn sample_range(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.gen_range(r.0..r.1)
    }
}

/// Superpose seeded rain streaks on `clean`. Returns the clamped rainy image
/// and the non-negative rain layer; identical seeds give identical output.
pub fn synth_rain<S: Real>(clean: &Image<S>, cfg: &RainConfig) -> Result<(Image<S>, Image<S>)> {
    cfg.validate()?;
    let (h, w) = (clean.height(), clean.width());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut layer = Image::<f64>::new(h, w, 1);

    for _ in 0..cfg.streak_count {
        let cu = rng.gen_range(0.0..h as f64);
        let cv = rng.gen_range(0.0..w as f64);
        let angle = (cfg.angle_deg_mean
            + if cfg.angle_deg_jitter > 0.0 {
                rng.gen_range(-cfg.angle_deg_jitter..cfg.angle_deg_jitter)
            } else {
                0.0
            })
        .to_radians();
        let len = sample_range(&mut rng, cfg.length_px);
        let half_width = sample_range(&mut rng, cfg.width_px) * 0.5;
        let intensity = sample_range(&mut rng, cfg.intensity);

        // direction: angle 0 falls straight down (+u)
        let (dv, du) = angle.sin_cos();
        let (au, av) = (cu - du * len * 0.5, cv - dv * len * 0.5);
        let (bu, bv) = (cu + du * len * 0.5, cv + dv * len * 0.5);

        let pad = half_width + 1.0;
        let u0 = (au.min(bu) - pad).floor().max(0.0) as usize;
        let u1 = (au.max(bu) + pad).ceil().min(h as f64 - 1.0) as usize;
        let v0 = (av.min(bv) - pad).floor().max(0.0) as usize;
        let v1 = (av.max(bv) + pad).ceil().min(w as f64 - 1.0) as usize;

        for u in u0..=u1 {
            for v in v0..=v1 {
                let d = point_segment_distance(u as f64, v as f64, au, av, bu, bv);
                // one-pixel anti-aliasing ramp around the streak edge
                let alpha = (half_width + 0.5 - d).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    layer[(u, v, 0)] += intensity * alpha;
                }
            }
        }
    }

    if cfg.blur_sigma > 0.0 && cfg.streak_count > 0 {
        layer = gaussian_blur_any(&layer, cfg.blur_sigma)?;
    }
    for v in layer.data_mut() {
        *v = v.max(0.0);
    }

    let mut rain = Image::<S>::new(h, w, clean.channels());
    for u in 0..h {
        for v in 0..w {
            let val = S::of(layer[(u, v, 0)]);
            for c in 0..clean.channels() {
                rain[(u, v, c)] = val;
            }
        }
    }
    let rainy = clean.add(&rain)?.clamp01();
    Ok((rainy, rain))
}

fn point_segment_distance(pu: f64, pv: f64, au: f64, av: f64, bu: f64, bv: f64) -> f64 {
    let (eu, ev) = (bu - au, bv - av);
    let len2 = eu * eu + ev * ev;
    let t = if len2 > 0.0 {
        (((pu - au) * eu + (pv - av) * ev) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qu, qv) = (au + t * eu, av + t * ev);
    ((pu - qu).powi(2) + (pv - qv).powi(2)).sqrt()
}
