//! Command-line surface: dataset synthesis, training, deraining, SIFT and
//! ALP tooling, evaluation, ablations, and report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use idsr::alp::{self, AlpBasis};
use idsr::eval::{self, list_images};
use idsr::imagecore::{load_image, save_image, synth_clean_scene, synth_rain, Image, PairDataset};
use idsr::networks::{derain_image, NetConfig, NetVariant};
use idsr::sift::{self, MotionModel, SiftParams};
use idsr::training::{
    history_csv, load_checkpoint, save_checkpoint, train, Checkpoint, Objective, TrainConfig,
};

#[derive(Parser)]
#[command(name = "idsr", version, about = "Task-driven deraining for SIFT keypoint recovery")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic rainy/clean pair dataset
    Synth(SynthArgs),
    /// Train one network on a pair dataset
    Train(TrainArgs),
    /// Run checkpointed networks over a directory of rainy images
    Derain(DerainArgs),
    /// SIFT tooling
    Sift {
        #[command(subcommand)]
        cmd: SiftCmd,
    },
    /// ALP basis and detector tooling
    Alp {
        #[command(subcommand)]
        cmd: AlpCmd,
    },
    /// PSNR/SSIM/recovered-keypoint report over aligned directories
    Eval(EvalArgs),
    /// Desk-scale ablation comparisons
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
    /// Render match-overlay PNGs for aligned directories
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset root (creates rainy/ and clean/)
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pairs: usize,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 120)]
    streaks: usize,
    #[arg(long, default_value_t = 12.0)]
    angle: f64,
    #[arg(long, default_value_t = 6.0)]
    angle_jitter: f64,
    #[arg(long, default_value_t = 0.6)]
    blur: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NetArg {
    Dprnet,
    Ggirnet,
    GgirnetNoGam,
}

impl From<NetArg> for NetVariant {
    fn from(n: NetArg) -> Self {
        match n {
            NetArg::Dprnet => NetVariant::Dprnet,
            NetArg::Ggirnet => NetVariant::Ggirnet,
            NetArg::GgirnetNoGam => NetVariant::GgirnetNoGam,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    /// the network's published objective
    Default,
    /// pixel L2 only (ablation)
    PixelL2,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    net: NetArg,
    /// Dataset root with rainy/ and clean/
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log (default: checkpoint path + .csv)
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Default)]
    objective: ObjectiveArg,
    /// ALP basis JSON (DPRNet default objective; fitted fresh when absent)
    #[arg(long)]
    basis: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr0: f64,
    /// Weight of the ALP term in the default DPRNet objective
    #[arg(long, default_value_t = 1.0)]
    lambda_alp: f64,
    /// Weight of the pixel L1 anchor (DPRNet default objective)
    #[arg(long, default_value_t = 1.0)]
    lambda_pixel: f64,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Resume from an existing checkpoint
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct DerainArgs {
    #[arg(long)]
    ckpt_dpr: Option<PathBuf>,
    #[arg(long)]
    ckpt_ggir: Option<PathBuf>,
    /// Directory of rainy images
    #[arg(long)]
    input: PathBuf,
    /// Output root (creates dpr/ and/or ggir/)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SiftCmd {
    /// Detect keypoints and dump them as JSON
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = sift::DEFAULT_CONTRAST_THRESHOLD)]
        contrast: f64,
        #[arg(long, default_value_t = sift::DEFAULT_EDGE_RATIO)]
        edge_ratio: f64,
    },
    /// Full pipeline: oriented keypoints plus 128-d descriptors as JSON
    Describe {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Match two images, optionally RANSAC-verify, dump JSON and overlay
    Match {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = sift::DEFAULT_MATCH_RATIO)]
        ratio: f64,
        #[arg(long, value_enum)]
        ransac: Option<ModelArg>,
        #[arg(long, default_value_t = 2.0)]
        tol: f64,
        #[arg(long, default_value_t = 200)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_json: Option<PathBuf>,
        #[arg(long)]
        overlay: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Translation,
    Similarity,
}

#[derive(Subcommand)]
enum AlpCmd {
    /// Fit the four-kernel basis and write it as JSON
    FitBasis {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = alp::DEFAULT_HALF_WIDTH)]
        half_width: usize,
        #[arg(long, default_value_t = alp::DEFAULT_GRID_SIZE)]
        grid: usize,
    },
    /// ALP keypoints of one image as JSON
    Detect {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, default_value_t = 0.15)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the ALP loss between two images
    Loss {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        derained: PathBuf,
        #[arg(long)]
        basis: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    derained: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    rainy: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long, default_value_t = sift::DEFAULT_MATCH_RATIO)]
    ratio: f64,
    #[arg(long, default_value_t = sift::DEFAULT_CONTRAST_THRESHOLD)]
    contrast: f64,
    /// Echoed into the JSON report for provenance
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset root with rainy/ and clean/
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 32)]
    patch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    channels: usize,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// CSV output (stdout when absent)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AblateCmd {
    /// DPRNet trained with ALP loss vs pixel L2: DoG-stack MSE
    AlpVsL2(AblateArgs),
    /// GGIRNet with vs without GAM: Gaussian-image MSE
    Gam(AblateArgs),
    /// Dedicated GGIRNet vs DPRNet doing both roles: Gaussian-image MSE
    OneTask(AblateArgs),
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    derained: PathBuf,
    #[arg(long)]
    clean: PathBuf,
    /// Output directory for overlay PNGs
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = sift::DEFAULT_MATCH_RATIO)]
    ratio: f64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(2);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Derain(a) => cmd_derain(a),
        Cmd::Sift { cmd } => cmd_sift(cmd),
        Cmd::Alp { cmd } => cmd_alp(cmd),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Ablate { cmd } => cmd_ablate(cmd),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(out: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            use std::io::Write as _;
            // tolerate a closed pipe (e.g. `| head`)
            let _ = writeln!(std::io::stdout(), "{text}");
            Ok(())
        }
    }
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let rainy_dir = a.out.join("rainy");
    let clean_dir = a.out.join("clean");
    std::fs::create_dir_all(&rainy_dir)?;
    std::fs::create_dir_all(&clean_dir)?;
    for i in 0..a.pairs {
        let clean = synth_clean_scene::<f32>(a.size, a.size, a.seed.wrapping_add(i as u64));
        let cfg = idsr::imagecore::RainConfig {
            streak_count: a.streaks,
            angle_deg_mean: a.angle,
            angle_deg_jitter: a.angle_jitter,
            blur_sigma: a.blur,
            seed: a.seed.wrapping_add(1_000_000 + i as u64),
            ..Default::default()
        };
        let (rainy, _) = synth_rain(&clean, &cfg)?;
        let name = format!("{i:04}.png");
        save_image(&clean, clean_dir.join(&name))?;
        save_image(&rainy, rainy_dir.join(&name))?;
    }
    println!("wrote {} pairs to {}", a.pairs, a.out.display());
    Ok(())
}

fn load_basis(path: Option<&Path>) -> anyhow::Result<AlpBasis> {
    match path {
        Some(p) => {
            let json = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(AlpBasis::from_json(&json)?)
        }
        None => Ok(AlpBasis::fit(
            alp::DEFAULT_XI,
            alp::DEFAULT_HALF_WIDTH,
            alp::DEFAULT_GRID_SIZE,
        )?),
    }
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let variant: NetVariant = a.net.into();
    let objective = match (a.objective, variant) {
        (ObjectiveArg::PixelL2, _) => Objective::PixelL2,
        (ObjectiveArg::Default, NetVariant::Dprnet) => Objective::PixelL1PlusAlp,
        (ObjectiveArg::Default, _) => Objective::Gradient,
    };
    let net = NetConfig {
        channels: a.channels,
        blocks: a.blocks,
        ..NetConfig::desk()
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        patch: a.patch,
        seed: a.seed,
        lr0: a.lr0,
        lambda_alp: a.lambda_alp,
        lambda_pixel_dpr: a.lambda_pixel,
        ..TrainConfig::desk()
    };
    let basis = match objective {
        Objective::PixelL1PlusAlp => Some(load_basis(a.basis.as_deref())?),
        _ => None,
    };
    let ds = PairDataset::from_dir(&a.data, a.patch, a.seed)?;
    let resume = match &a.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let result = train(&ds, &net, variant, objective, &cfg, basis.as_ref(), resume)?;
    if let Some(parent) = a.out.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_checkpoint(&result.checkpoint, &a.out)?;
    let log_path = a
        .log
        .unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&log_path, &history_csv(&result.history))?;
    let last = result.history.last().map(|e| e.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} for {} epochs; final loss {:e}; checkpoint {}",
        match variant {
            NetVariant::Dprnet => "dprnet",
            NetVariant::Ggirnet => "ggirnet",
            NetVariant::GgirnetNoGam => "ggirnet-no-gam",
        },
        a.epochs,
        last,
        a.out.display()
    );
    Ok(())
}

fn derain_dir(ckpt: &Checkpoint, input: &Path, out_dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out_dir)?;
    for name in list_images(input)? {
        let img: Image<f32> = load_image(input.join(&name))?;
        let (_, derained) = derain_image(&ckpt.params, &ckpt.net, ckpt.variant, &img)?;
        save_image(&derained, out_dir.join(&name))?;
    }
    Ok(())
}

fn cmd_derain(a: DerainArgs) -> anyhow::Result<()> {
    if a.ckpt_dpr.is_none() && a.ckpt_ggir.is_none() {
        bail!("at least one of --ckpt-dpr / --ckpt-ggir is required");
    }
    if let Some(p) = &a.ckpt_dpr {
        let ckpt = load_checkpoint(p)?;
        derain_dir(&ckpt, &a.input, &a.out.join("dpr"))?;
    }
    if let Some(p) = &a.ckpt_ggir {
        let ckpt = load_checkpoint(p)?;
        derain_dir(&ckpt, &a.input, &a.out.join("ggir"))?;
    }
    println!("derained {} into {}", a.input.display(), a.out.display());
    Ok(())
}

fn cmd_sift(cmd: SiftCmd) -> anyhow::Result<()> {
    match cmd {
        SiftCmd::Detect {
            input,
            out,
            contrast,
            edge_ratio,
        } => {
            let img: Image<f32> = load_image(&input)?;
            let lum = if img.channels() == 1 { img } else { img.luminance() };
            let stack = idsr::scalespace::build_scale_stack(&lum)?;
            let dog = idsr::scalespace::build_dog(&stack);
            let kps = sift::detect(&dog, contrast, edge_ratio)?;
            emit(out.as_deref(), &sift::keypoints_json(&kps, &[]))
        }
        SiftCmd::Describe { input, out } => {
            let img: Image<f32> = load_image(&input)?;
            let (kps, descs) = sift::extract(&img, None, &SiftParams::default())?;
            emit(out.as_deref(), &sift::keypoints_json(&kps, &descs))
        }
        SiftCmd::Match {
            a,
            b,
            ratio,
            ransac,
            tol,
            iters,
            seed,
            out_json,
            overlay,
        } => {
            let ia: Image<f32> = load_image(&a)?;
            let ib: Image<f32> = load_image(&b)?;
            let p = SiftParams {
                match_ratio: ratio,
                ..Default::default()
            };
            let (ka, da) = sift::extract(&ia, None, &p)?;
            let (kb, db) = sift::extract(&ib, None, &p)?;
            let mut ms = sift::match_descriptors(&da, &db, ratio)?;
            if let Some(model) = ransac {
                let model = match model {
                    ModelArg::Translation => MotionModel::Translation,
                    ModelArg::Similarity => MotionModel::Similarity,
                };
                ms = sift::verify_ransac(&ms, &ka, &kb, model, tol, iters, seed);
            }
            let doc = serde_json::json!({
                "keypoints_a": ka.len(),
                "keypoints_b": kb.len(),
                "matches": ms.matches,
                "inlier_mask": ms.inlier_mask,
                "inliers": ms.inlier_count(),
            });
            if let Some(path) = &overlay {
                let img = sift::match_overlay(&ia, &ib, &ka, &kb, &ms);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent)?;
                }
                save_image(&img, path)?;
            }
            emit(out_json.as_deref(), &serde_json::to_string_pretty(&doc)?)
        }
    }
}

fn cmd_alp(cmd: AlpCmd) -> anyhow::Result<()> {
    match cmd {
        AlpCmd::FitBasis {
            out,
            half_width,
            grid,
        } => {
            let basis = AlpBasis::fit(alp::DEFAULT_XI, half_width, grid)?;
            write_text(&out, &basis.to_json())?;
            println!(
                "basis fitted: residual {:e}, written to {}",
                basis.fit_residual(),
                out.display()
            );
            Ok(())
        }
        AlpCmd::Detect {
            input,
            basis,
            threshold,
            out,
        } => {
            let img: Image<f32> = load_image(&input)?;
            let lum = if img.channels() == 1 { img } else { img.luminance() };
            let basis = load_basis(basis.as_deref())?;
            let kps = alp::alp_detect(&lum, &basis, threshold)?;
            let doc: Vec<serde_json::Value> = kps
                .iter()
                .map(|k| {
                    serde_json::json!({
                        "u": k.u, "v": k.v, "xi_star": k.xi_star, "response": k.response,
                    })
                })
                .collect();
            emit(
                out.as_deref(),
                &serde_json::to_string_pretty(&serde_json::json!({ "keypoints": doc }))?,
            )
        }
        AlpCmd::Loss {
            clean,
            derained,
            basis,
        } => {
            let c: Image<f32> = load_image(&clean)?;
            let d: Image<f32> = load_image(&derained)?;
            let lc = if c.channels() == 1 { c } else { c.luminance() };
            let ld = if d.channels() == 1 { d } else { d.luminance() };
            let basis = load_basis(basis.as_deref())?;
            println!("{:e}", alp::alp_loss(&lc, &ld, &basis)?);
            Ok(())
        }
    }
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<()> {
    let p = SiftParams {
        match_ratio: a.ratio,
        contrast_threshold: a.contrast,
        ..Default::default()
    };
    let report = eval::run_eval(&a.derained, &a.clean, a.rainy.as_deref(), &p)?;
    if let Some(path) = &a.out_csv {
        write_text(path, &report.csv())?;
    }
    if let Some(path) = &a.out_json {
        let echo = serde_json::json!({
            "derained": a.derained, "clean": a.clean, "rainy": a.rainy,
            "ratio": a.ratio, "contrast": a.contrast, "seed": a.seed,
        });
        write_text(path, &report.json(echo))?;
    }
    let agg = &report.aggregates;
    println!(
        "pairs={} psnr={:.4} ssim={:.4} recovered={:.4}{}",
        report.rows.len(),
        agg.psnr_db,
        agg.ssim,
        agg.recovered,
        match (agg.rainy_psnr_db, agg.rainy_recovered) {
            (Some(p), Some(r)) => format!(" rainy_psnr={p:.4} rainy_recovered={r:.4}"),
            _ => String::new(),
        }
    );
    Ok(())
}

/// Train one variant and return the mean of `metric(derained, clean)` over
/// the dataset's rainy images.
fn ablation_arm(
    a: &AblateArgs,
    variant: NetVariant,
    objective: Objective,
    metric: &dyn Fn(&Image<f32>, &Image<f32>) -> idsr::Result<f64>,
) -> anyhow::Result<f64> {
    let net = NetConfig {
        channels: a.channels,
        blocks: a.blocks,
        ..NetConfig::desk()
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        patch: a.patch,
        seed: a.seed,
        ..TrainConfig::desk()
    };
    let basis = match objective {
        Objective::PixelL1PlusAlp => Some(load_basis(None)?),
        _ => None,
    };
    let ds = PairDataset::from_dir(&a.data, a.patch, a.seed)?;
    let result = train(&ds, &net, variant, objective, &cfg, basis.as_ref(), None)?;

    let rainy_dir = a.data.join("rainy");
    let clean_dir = a.data.join("clean");
    let names = list_images(&rainy_dir)?;
    let mut sum = 0.0;
    for name in &names {
        let rainy: Image<f32> = load_image(rainy_dir.join(name))?;
        let clean: Image<f32> = load_image(clean_dir.join(name))?;
        let (_, derained) = derain_image(&result.params, &net, variant, &rainy)?;
        sum += metric(&derained, &clean)?;
    }
    Ok(sum / names.len() as f64)
}

fn cmd_ablate(cmd: AblateCmd) -> anyhow::Result<()> {
    let (args, csv) = match cmd {
        AblateCmd::AlpVsL2(a) => {
            let alp_mse = ablation_arm(
                &a,
                NetVariant::Dprnet,
                Objective::PixelL1PlusAlp,
                &eval::dog_mse,
            )?;
            let l2_mse = ablation_arm(&a, NetVariant::Dprnet, Objective::PixelL2, &eval::dog_mse)?;
            (
                a,
                format!("variant,dog_mse\nalp,{alp_mse:e}\nl2,{l2_mse:e}\n"),
            )
        }
        AblateCmd::Gam(a) => {
            let with_gam =
                ablation_arm(&a, NetVariant::Ggirnet, Objective::Gradient, &eval::gaussian_mse)?;
            let without = ablation_arm(
                &a,
                NetVariant::GgirnetNoGam,
                Objective::Gradient,
                &eval::gaussian_mse,
            )?;
            (
                a,
                format!("variant,gaussian_mse\ngam,{with_gam:e}\nno_gam,{without:e}\n"),
            )
        }
        AblateCmd::OneTask(a) => {
            let two_net =
                ablation_arm(&a, NetVariant::Ggirnet, Objective::Gradient, &eval::gaussian_mse)?;
            let one_task = ablation_arm(
                &a,
                NetVariant::Dprnet,
                Objective::PixelL1PlusAlp,
                &eval::gaussian_mse,
            )?;
            (
                a,
                format!("variant,gaussian_mse\ntwo_net,{two_net:e}\none_task,{one_task:e}\n"),
            )
        }
    };
    emit(args.out.as_deref(), &csv)
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let p = SiftParams {
        match_ratio: a.ratio,
        ..Default::default()
    };
    std::fs::create_dir_all(&a.out)?;
    let names_d = list_images(&a.derained)?;
    let names_c = list_images(&a.clean)?;
    if names_d != names_c {
        bail!("mismatched file sets between derained and clean directories");
    }
    for name in &names_d {
        let d: Image<f32> = load_image(a.derained.join(name))?;
        let c: Image<f32> = load_image(a.clean.join(name))?;
        let (kd, dd) = sift::extract(&d, None, &p)?;
        let (kc, dc) = sift::extract(&c, None, &p)?;
        let ms = sift::match_descriptors(&dd, &dc, p.match_ratio)?;
        let (_, gated) = sift::gate_matches(&ms, &kd, &kc, &p);
        let overlay = sift::match_overlay(&d, &c, &kd, &kc, &gated);
        save_image(&overlay, a.out.join(name))?;
    }
    println!("wrote {} overlays to {}", names_d.len(), a.out.display());
    Ok(())
}
