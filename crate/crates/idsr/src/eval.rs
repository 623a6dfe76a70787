//! PSNR/SSIM metrics and the directory-level evaluation report.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagecore::{load_image, Image};
use crate::scalar::Real;
use crate::sift::{self, SiftParams};

pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// 10·log10(1/MSE) over all channels, peak 1.0, capped at 99 dB.
pub fn psnr<S: Real>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {}x{}x{} vs {}x{}x{}",
            a.height(),
            a.width(),
            a.channels(),
            b.height(),
            b.width(),
            b.channels()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| {
            let d = p.to_f64_lossy() - q.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        / a.data().len() as f64;
    if mse <= 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for u in 0..SSIM_WINDOW {
        for v in 0..SSIM_WINDOW {
            let r2 = (u as f64 - c).powi(2) + (v as f64 - c).powi(2);
            let g = (-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[u * SSIM_WINDOW + v] = g;
            sum += g;
        }
    }
    w.iter_mut().for_each(|g| *g /= sum);
    w
}

/// Gaussian-weighted SSIM on luminance, mean over valid window positions.
pub fn ssim<S: Real>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    if a.height() != b.height() || a.width() != b.width() || a.channels() != b.channels() {
        return Err(Error::DimensionMismatch("ssim: image sizes differ".into()));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let la = if a.channels() == 1 { a.clone() } else { a.luminance() };
    let lb = if b.channels() == 1 { b.clone() } else { b.luminance() };
    let win = ssim_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for u0 in 0..=(h - SSIM_WINDOW) {
        for v0 in 0..=(w - SSIM_WINDOW) {
            let (mut mx, mut my) = (0.0f64, 0.0f64);
            for u in 0..SSIM_WINDOW {
                for v in 0..SSIM_WINDOW {
                    let g = win[u * SSIM_WINDOW + v];
                    mx += g * la[(u0 + u, v0 + v, 0)].to_f64_lossy();
                    my += g * lb[(u0 + u, v0 + v, 0)].to_f64_lossy();
                }
            }
            let (mut sx, mut sy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
            for u in 0..SSIM_WINDOW {
                for v in 0..SSIM_WINDOW {
                    let g = win[u * SSIM_WINDOW + v];
                    let dx = la[(u0 + u, v0 + v, 0)].to_f64_lossy() - mx;
                    let dy = lb[(u0 + u, v0 + v, 0)].to_f64_lossy() - my;
                    sx += g * dx * dx;
                    sy += g * dy * dy;
                    sxy += g * dx * dy;
                }
            }
            total += ((2.0 * mx * my + c1) * (2.0 * sxy + c2))
                / ((mx * mx + my * my + c1) * (sx + sy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// MSE between the two images' DoG stacks (luminance), pooled over the four
/// levels. The ablation metric for the ALP-vs-L2 comparison.
pub fn dog_mse<S: Real>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    let la = if a.channels() == 1 { a.clone() } else { a.luminance() };
    let lb = if b.channels() == 1 { b.clone() } else { b.luminance() };
    let da = crate::scalespace::build_dog(&crate::scalespace::build_scale_stack(&la)?);
    let db = crate::scalespace::build_dog(&crate::scalespace::build_scale_stack(&lb)?);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in da.diffs.iter().zip(&db.diffs) {
        for (&p, &q) in x.data().iter().zip(y.data()) {
            let d = p.to_f64_lossy() - q.to_f64_lossy();
            sum += d * d;
        }
        n += x.data().len();
    }
    Ok(sum / n as f64)
}

/// MSE between the two images' Gaussian stacks (luminance), pooled over the
/// five levels. The ablation metric for the GAM and two-network comparisons.
pub fn gaussian_mse<S: Real>(a: &Image<S>, b: &Image<S>) -> Result<f64> {
    let la = if a.channels() == 1 { a.clone() } else { a.luminance() };
    let lb = if b.channels() == 1 { b.clone() } else { b.luminance() };
    let sa = crate::scalespace::build_scale_stack(&la)?;
    let sb = crate::scalespace::build_scale_stack(&lb)?;
    let mut sum = 0.0;
    let mut n = 0usize;
    for (x, y) in sa.levels.iter().zip(&sb.levels) {
        for (&p, &q) in x.data().iter().zip(y.data()) {
            let d = p.to_f64_lossy() - q.to_f64_lossy();
            sum += d * d;
        }
        n += x.data().len();
    }
    Ok(sum / n as f64)
}

/// One evaluated image pair. Rainy-baseline columns appear when a rainy
/// directory is supplied.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub sift_clean: usize,
    pub sift_derained: usize,
    pub recovered: usize,
    pub gate_pass_rate: f64,
    pub rainy_psnr_db: Option<f64>,
    pub rainy_recovered: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregates {
    pub psnr_db: f64,
    pub ssim: f64,
    pub sift_clean: f64,
    pub sift_derained: f64,
    pub recovered: f64,
    pub gate_pass_rate: f64,
    pub rainy_psnr_db: Option<f64>,
    pub rainy_recovered: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
    pub aggregates: Aggregates,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<MetricsRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("no rows to aggregate".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: &dyn Fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let with_rainy = rows.iter().all(|r| r.rainy_psnr_db.is_some());
        let aggregates = Aggregates {
            psnr_db: mean(&|r| r.psnr_db),
            ssim: mean(&|r| r.ssim),
            sift_clean: mean(&|r| r.sift_clean as f64),
            sift_derained: mean(&|r| r.sift_derained as f64),
            recovered: mean(&|r| r.recovered as f64),
            gate_pass_rate: mean(&|r| r.gate_pass_rate),
            rainy_psnr_db: with_rainy.then(|| mean(&|r| r.rainy_psnr_db.unwrap())),
            rainy_recovered: with_rainy.then(|| mean(&|r| r.rainy_recovered.unwrap() as f64)),
        };
        Ok(MetricsReport { rows, aggregates })
    }

    /// CSV with the row fields as columns; aggregate means in a final
    /// `mean` row.
    pub fn csv(&self) -> String {
        let with_rainy = self.aggregates.rainy_psnr_db.is_some();
        let mut out = String::from(
            "name,psnr_db,ssim,sift_clean,sift_derained,recovered,gate_pass_rate",
        );
        if with_rainy {
            out.push_str(",rainy_psnr_db,rainy_recovered");
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{},{},{},{:e}",
                r.name, r.psnr_db, r.ssim, r.sift_clean, r.sift_derained, r.recovered,
                r.gate_pass_rate
            ));
            if with_rainy {
                out.push_str(&format!(
                    ",{:e},{}",
                    r.rainy_psnr_db.unwrap(),
                    r.rainy_recovered.unwrap()
                ));
            }
            out.push('\n');
        }
        let a = &self.aggregates;
        out.push_str(&format!(
            "mean,{:e},{:e},{:e},{:e},{:e},{:e}",
            a.psnr_db, a.ssim, a.sift_clean, a.sift_derained, a.recovered, a.gate_pass_rate
        ));
        if with_rainy {
            out.push_str(&format!(
                ",{:e},{:e}",
                a.rainy_psnr_db.unwrap(),
                a.rainy_recovered.unwrap()
            ));
        }
        out.push('\n');
        out
    }

    /// JSON mirror of the CSV plus a configuration echo.
    pub fn json(&self, config_echo: serde_json::Value) -> String {
        serde_json::to_string_pretty(&serde_json::json!({
            "config": config_echo,
            "rows": self.rows,
            "aggregates": self.aggregates,
        }))
        .expect("report serializes")
    }
}

/// Sorted image file names (png/pgm/ppm) in a directory.
pub fn list_images(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| {
            let l = n.to_ascii_lowercase();
            l.ends_with(".png") || l.ends_with(".pgm") || l.ends_with(".ppm")
        })
        .collect();
    names.sort();
    Ok(names)
}

/// Evaluate aligned directories of derained vs clean images; with a rainy
/// directory the rainy baseline is reported alongside.
pub fn run_eval(
    derained_dir: impl AsRef<Path>,
    clean_dir: impl AsRef<Path>,
    rainy_dir: Option<&Path>,
    params: &SiftParams,
) -> Result<MetricsReport> {
    let derained_dir = derained_dir.as_ref();
    let clean_dir = clean_dir.as_ref();
    let names_d = list_images(derained_dir)?;
    let names_c = list_images(clean_dir)?;
    if names_d.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no image pairs found ({} and {} list 0 common files)",
            derained_dir.display(),
            clean_dir.display()
        )));
    }
    if names_d != names_c {
        let missing: Vec<&String> = names_d
            .iter()
            .filter(|n| !names_c.contains(n))
            .chain(names_c.iter().filter(|n| !names_d.contains(n)))
            .collect();
        return Err(Error::InvalidArgument(format!(
            "mismatched file sets between {} and {}: {:?}",
            derained_dir.display(),
            clean_dir.display(),
            missing
        )));
    }

    let mut rows = Vec::with_capacity(names_d.len());
    for name in &names_d {
        let derained: Image<f32> = load_image(derained_dir.join(name))?;
        let clean: Image<f32> = load_image(clean_dir.join(name))?;
        let (kps_d, descs_d) = sift::extract(&derained, None, params)?;
        let (kps_c, descs_c) = sift::extract(&clean, None, params)?;
        let ms = sift::match_descriptors(&descs_d, &descs_c, params.match_ratio)?;
        let (recovered, gated) = sift::gate_matches(&ms, &kps_d, &kps_c, params);
        let gate_pass_rate = if gated.matches.is_empty() {
            0.0
        } else {
            recovered as f64 / gated.matches.len() as f64
        };
        let (rainy_psnr_db, rainy_recovered) = match rainy_dir {
            Some(rd) => {
                let rainy_path: PathBuf = rd.join(name);
                let rainy: Image<f32> = load_image(&rainy_path)?;
                let (kr, dr) = sift::extract(&rainy, None, params)?;
                let msr = sift::match_descriptors(&dr, &descs_c, params.match_ratio)?;
                let (rec, _) = sift::gate_matches(&msr, &kr, &kps_c, params);
                (Some(psnr(&rainy, &clean)?), Some(rec))
            }
            None => (None, None),
        };
        rows.push(MetricsRow {
            name: name.clone(),
            psnr_db: psnr(&derained, &clean)?,
            ssim: ssim(&derained, &clean)?,
            sift_clean: descs_c.len(),
            sift_derained: descs_d.len(),
            recovered,
            gate_pass_rate,
            rainy_psnr_db,
            rainy_recovered,
        });
    }
    MetricsReport::from_rows(rows)
}
