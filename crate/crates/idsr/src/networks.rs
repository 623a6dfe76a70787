//! The two rain-estimation networks and their attention machinery: CAM and
//! SAM (CBAM-style pooled-statistics gates), the Sobel-driven GAM, the
//! residual blocks CSARB (conv trunk + CAM + SAM) and CGARB (conv trunk +
//! CAM + GAM), and the full DPRNet / GGIRNet assemblies
//! x → shallow conv → blocks → long skip → tail conv = rain estimate,
//! derained = x − rain.
//!
//! Parameters live in an ordered [`ModelParams`] map outside any tape and
//! are re-bound as leaves for every forward pass.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Padding, Shape, Tape, VarId};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::scalespace::{SOBEL_X, SOBEL_Y};

/// Network width/depth knobs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetConfig {
    pub blocks: usize,
    pub channels: usize,
    pub input_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            blocks: 4,
            channels: 32,
            input_channels: 3,
        }
    }
}

impl NetConfig {
    /// Small configuration sized for CPU desk runs.
    pub fn desk() -> Self {
        NetConfig {
            blocks: 2,
            channels: 8,
            input_channels: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::InvalidArgument("blocks must be >= 1".into()));
        }
        if self.channels < 8 || self.channels % CAM_REDUCTION != 0 {
            return Err(Error::InvalidArgument(format!(
                "channels must be >= 8 and divisible by {CAM_REDUCTION}, got {}",
                self.channels
            )));
        }
        if self.input_channels != 3 {
            return Err(Error::ChannelCount {
                expected: 3,
                got: self.input_channels,
            });
        }
        Ok(())
    }
}

/// CAM bottleneck ratio. CBAM's 16 starves narrow desk models; 4 keeps the
/// hidden layer ≥ 2 channels at the minimum width.
pub const CAM_REDUCTION: usize = 4;

/// Which block stack (and therefore which attention pair) a network uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NetVariant {
    /// CSARB blocks (CAM + SAM) — detection-oriented DPRNet.
    Dprnet,
    /// CGARB blocks (CAM + GAM) — description-oriented GGIRNet.
    Ggirnet,
    /// CGARB with the GAM stage removed (ablation).
    GgirnetNoGam,
}

impl NetVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            NetVariant::Dprnet => "dprnet",
            NetVariant::Ggirnet => "ggirnet",
            NetVariant::GgirnetNoGam => "ggirnet-nogam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dprnet" => Ok(NetVariant::Dprnet),
            "ggirnet" => Ok(NetVariant::Ggirnet),
            "ggirnet-nogam" => Ok(NetVariant::GgirnetNoGam),
            other => Err(Error::InvalidArgument(format!("unknown net variant '{other}'"))),
        }
    }
}

/// One named tensor of a model.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<S>,
    pub trainable: bool,
}

/// Ordered name → tensor map for one network.
#[derive(Debug, Clone, Default)]
pub struct ModelParams<S> {
    params: Vec<Param<S>>,
    index: HashMap<String, usize>,
}

impl<S: Real> ModelParams<S> {
    pub fn new() -> Self {
        ModelParams {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, shape: Shape, data: Vec<S>, trainable: bool) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter '{name}'")));
        }
        if shape.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "parameter '{name}': shape wants {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
            trainable,
        });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        self.index
            .get(name)
            .map(|&i| &self.params[i])
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    pub fn params(&self) -> &[Param<S>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<S>] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.data.len())
            .sum()
    }

    /// Register every parameter as a tape leaf (grad-requiring iff
    /// trainable) and return the name → VarId binding.
    pub fn bind(&self, tape: &mut Tape<S>) -> Result<Binding> {
        let mut vars = HashMap::with_capacity(self.params.len());
        for p in &self.params {
            let v = tape.leaf(p.shape, p.data.clone(), p.trainable)?;
            vars.insert(p.name.clone(), v);
        }
        Ok(Binding { vars })
    }
}

/// Tape-bound view of a parameter set.
#[derive(Debug)]
pub struct Binding {
    vars: HashMap<String, VarId>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<VarId> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unbound parameter '{name}'")))
    }
}

fn kaiming_uniform<S: Real>(rng: &mut ChaCha8Rng, shape: Shape) -> Vec<S> {
    let fan_in = (shape.c * shape.h * shape.w) as f64;
    let bound = (6.0 / fan_in).sqrt();
    (0..shape.len())
        .map(|_| S::of(rng.gen_range(-bound..bound)))
        .collect()
}

fn add_conv<S: Real>(
    params: &mut ModelParams<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
) -> Result<()> {
    let ws = Shape::new(c_out, c_in, k, k);
    let w = kaiming_uniform(rng, ws);
    params.add(&format!("{prefix}.weight"), ws, w, true)?;
    params.add(
        &format!("{prefix}.bias"),
        Shape::new(1, c_out, 1, 1),
        vec![S::zero(); c_out],
        true,
    )
}

/// Fresh parameters for one network, Kaiming-uniform weights and zero
/// biases, deterministic under `seed`.
pub fn init_params<S: Real>(cfg: &NetConfig, variant: NetVariant, seed: u64) -> Result<ModelParams<S>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ModelParams::new();
    let c = cfg.channels;
    add_conv(&mut p, &mut rng, "head", c, cfg.input_channels, 3)?;
    for i in 0..cfg.blocks {
        add_conv(&mut p, &mut rng, &format!("block{i}.conv1"), c, c, 3)?;
        add_conv(&mut p, &mut rng, &format!("block{i}.conv2"), c, c, 3)?;
        let hidden = c / CAM_REDUCTION;
        add_conv(&mut p, &mut rng, &format!("block{i}.cam.fc1"), hidden, c, 1)?;
        add_conv(&mut p, &mut rng, &format!("block{i}.cam.fc2"), c, hidden, 1)?;
        match variant {
            NetVariant::Dprnet => {
                add_conv(&mut p, &mut rng, &format!("block{i}.sam.conv"), 1, 2, 7)?;
            }
            NetVariant::Ggirnet => {
                let g = format!("block{i}.gam");
                add_conv(&mut p, &mut rng, &format!("{g}.w1"), 1, c, 1)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w2"), 1, 1, 5)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w3"), 1, 1, 5)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w4"), 1, c, 1)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w5"), 1, 1, 5)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w6"), 1, 1, 5)?;
                add_conv(&mut p, &mut rng, &format!("{g}.w7"), 1, 2, 5)?;
            }
            NetVariant::GgirnetNoGam => {}
        }
    }
    add_conv(&mut p, &mut rng, "tail", cfg.input_channels, c, 3)?;
    Ok(p)
}

/// Trainable-parameter count as a pure function of the configuration.
pub fn param_count(cfg: &NetConfig, variant: NetVariant) -> Result<usize> {
    Ok(init_params::<f32>(cfg, variant, 0)?.trainable_count())
}

fn conv(tape: &mut Tape<impl Real>, bind: &Binding, prefix: &str, x: VarId) -> Result<VarId> {
    let w = bind.var(&format!("{prefix}.weight"))?;
    let b = bind.var(&format!("{prefix}.bias"))?;
    tape.conv2d(x, w, Some(b), Padding::Replicate)
}

/// Channel attention: σ(MLP(avgpool) + MLP(maxpool)) gates each channel.
pub fn cam_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    prefix: &str,
    f: VarId,
) -> Result<VarId> {
    let avg = tape.global_mean(f);
    let max = tape.global_max(f);
    let mlp = |tape: &mut Tape<S>, v: VarId| -> Result<VarId> {
        let h = conv(tape, bind, &format!("{prefix}.fc1"), v)?;
        let h = tape.relu(h);
        conv(tape, bind, &format!("{prefix}.fc2"), h)
    };
    let a = mlp(tape, avg)?;
    let m = mlp(tape, max)?;
    let sum = tape.add(a, m)?;
    let gate = tape.sigmoid(sum);
    tape.mul_channel_gate(f, gate)
}

/// Spatial attention: σ(7×7 conv over [channel-avg, channel-max]) gates
/// every position.
pub fn sam_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    prefix: &str,
    f: VarId,
) -> Result<VarId> {
    let avg = tape.channel_mean(f);
    let max = tape.channel_max(f);
    let stats = tape.concat_channels(&[avg, max])?;
    let m = conv(tape, bind, &format!("{prefix}.conv"), stats)?;
    let map = tape.sigmoid(m);
    tape.mul_spatial_map(f, map)
}

fn sobel_taps<S: Real>(k: &[[f64; 3]; 3]) -> Vec<S> {
    k.iter().flatten().map(|&v| S::of(v)).collect()
}

/// Gradient attention: depthwise Sobel (fixed), a small conv branch per
/// direction, then a sigmoid map multiplied onto the features.
pub fn gam_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    prefix: &str,
    f: VarId,
) -> Result<VarId> {
    let gx = tape.depthwise_fixed(f, 3, 3, sobel_taps(&SOBEL_X), Padding::Replicate)?;
    let gy = tape.depthwise_fixed(f, 3, 3, sobel_taps(&SOBEL_Y), Padding::Replicate)?;
    let branch = |tape: &mut Tape<S>, g: VarId, w_first: &str| -> Result<VarId> {
        // 1×1 channel collapse, then two 5×5 conv-ReLU stages
        let (a, b, c) = match w_first {
            "x" => ("w1", "w2", "w3"),
            _ => ("w4", "w5", "w6"),
        };
        let t = conv(tape, bind, &format!("{prefix}.{a}"), g)?;
        let t = conv(tape, bind, &format!("{prefix}.{b}"), t)?;
        let t = tape.relu(t);
        let t = conv(tape, bind, &format!("{prefix}.{c}"), t)?;
        Ok(tape.relu(t))
    };
    let bx = branch(tape, gx, "x")?;
    let by = branch(tape, gy, "y")?;
    let cat = tape.concat_channels(&[bx, by])?;
    let m = conv(tape, bind, &format!("{prefix}.w7"), cat)?;
    let map = tape.sigmoid(m);
    tape.mul_spatial_map(f, map)
}

fn trunk<S: Real>(tape: &mut Tape<S>, bind: &Binding, prefix: &str, f: VarId) -> Result<VarId> {
    let t = conv(tape, bind, &format!("{prefix}.conv1"), f)?;
    let t = tape.relu(t);
    let t = conv(tape, bind, &format!("{prefix}.conv2"), t)?;
    Ok(tape.relu(t))
}

/// CSARB: conv-ReLU ×2 → CAM → SAM → identity skip.
pub fn csarb_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    prefix: &str,
    f: VarId,
) -> Result<VarId> {
    let t = trunk(tape, bind, prefix, f)?;
    let t = cam_forward(tape, bind, &format!("{prefix}.cam"), t)?;
    let t = sam_forward(tape, bind, &format!("{prefix}.sam"), t)?;
    tape.add(t, f)
}

/// CGARB: conv-ReLU ×2 → CAM → GAM → identity skip. The no-GAM ablation
/// skips the GAM stage exactly.
pub fn cgarb_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    prefix: &str,
    f: VarId,
    use_gam: bool,
) -> Result<VarId> {
    let t = trunk(tape, bind, prefix, f)?;
    let t = cam_forward(tape, bind, &format!("{prefix}.cam"), t)?;
    let t = if use_gam {
        gam_forward(tape, bind, &format!("{prefix}.gam"), t)?
    } else {
        t
    };
    tape.add(t, f)
}

/// Full network: returns (rain_estimate, derained) with derained = x − rain.
pub fn net_forward<S: Real>(
    tape: &mut Tape<S>,
    bind: &Binding,
    cfg: &NetConfig,
    variant: NetVariant,
    x: VarId,
) -> Result<(VarId, VarId)> {
    let xs = tape.shape(x);
    if xs.c != cfg.input_channels {
        return Err(Error::ChannelCount {
            expected: cfg.input_channels,
            got: xs.c,
        });
    }
    let shallow = conv(tape, bind, "head", x)?;
    let mut f = shallow;
    for i in 0..cfg.blocks {
        let prefix = format!("block{i}");
        f = match variant {
            NetVariant::Dprnet => csarb_forward(tape, bind, &prefix, f)?,
            NetVariant::Ggirnet => cgarb_forward(tape, bind, &prefix, f, true)?,
            NetVariant::GgirnetNoGam => cgarb_forward(tape, bind, &prefix, f, false)?,
        };
    }
    let f = tape.add(f, shallow)?; // long skip
    let rain = conv(tape, bind, "tail", f)?;
    let derained = tape.sub(x, rain)?;
    Ok((rain, derained))
}

/// Inference on a single RGB image: returns (rain_estimate, derained),
/// clamped to [0,1] on the derained side.
pub fn derain_image<S: Real>(
    params: &ModelParams<S>,
    cfg: &NetConfig,
    variant: NetVariant,
    img: &crate::imagecore::Image<S>,
) -> Result<(crate::imagecore::Image<S>, crate::imagecore::Image<S>)> {
    use crate::imagecore::Image;
    if img.channels() != cfg.input_channels {
        return Err(Error::ChannelCount {
            expected: cfg.input_channels,
            got: img.channels(),
        });
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let shape = Shape::new(1, c, h, w);
    let mut data = vec![S::zero(); shape.len()];
    for ch in 0..c {
        for u in 0..h {
            for v in 0..w {
                data[shape.at(0, ch, u, v)] = img[(u, v, ch)];
            }
        }
    }
    let mut tape = Tape::<S>::new();
    let bind = params.bind(&mut tape)?;
    let x = tape.leaf(shape, data, false)?;
    let (rain, derained) = net_forward(&mut tape, &bind, cfg, variant, x)?;
    let unpack = |tape: &Tape<S>, v: VarId, clamp: bool| {
        let vals = tape.value(v);
        let mut out = Image::new(h, w, c);
        for ch in 0..c {
            for u in 0..h {
                for vv in 0..w {
                    let px = vals[shape.at(0, ch, u, vv)];
                    out[(u, vv, ch)] = if clamp {
                        px.max(S::zero()).min(S::one())
                    } else {
                        px
                    };
                }
            }
        }
        out
    };
    Ok((unpack(&tape, rain, false), unpack(&tape, derained, true)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn rand_data(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// FD check of a module output (summed squared) w.r.t. the feature
    /// input, double precision, h = 1e-3. Coordinates whose h and h/2
    /// estimates disagree straddle a ReLU/argmax kink and are skipped
    /// (measure-zero inputs; the derivative is not defined there).
    fn fd_check_module(
        shape: Shape,
        build: impl Fn(&mut Tape<f64>, VarId) -> VarId,
        tol: f64,
    ) {
        let data = rand_data(shape.len(), 99);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(shape, data.clone(), true).unwrap();
        let loss = build(&mut tape, x);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads.get(x).unwrap().to_vec();
        let h = 1e-3;
        let mut max_rel: f64 = 0.0;
        let mut checked = 0usize;
        for k in 0..data.len() {
            let eval = |delta: f64| {
                let mut d = data.clone();
                d[k] += delta;
                let mut t = Tape::<f64>::new();
                let l = t.leaf(shape, d, false).unwrap();
                let out = build(&mut t, l);
                t.scalar_value(out)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let fd_half = (eval(h / 2.0) - eval(-h / 2.0)) / h;
            let scale = fd.abs().max(fd_half.abs()).max(1e-4);
            if (fd - fd_half).abs() / scale > 1e-5 {
                continue; // kink inside the stencil
            }
            checked += 1;
            let denom = analytic[k].abs().max(fd.abs()).max(1e-4);
            max_rel = max_rel.max((analytic[k] - fd).abs() / denom);
        }
        assert!(checked * 2 >= data.len(), "too few smooth coordinates ({checked})");
        assert!(max_rel < tol, "max rel err {max_rel}");
    }

    fn sq_sum(tape: &mut Tape<f64>, v: VarId) -> VarId {
        let s = tape.shape(v);
        let z = tape.leaf(s, vec![0.0; s.len()], false).unwrap();
        tape.l2_loss(v, z).unwrap()
    }

    #[test]
    fn cam_preserves_shape_and_gates_in_unit_interval() {
        let cfg = NetConfig::desk();
        let params = init_params::<f64>(&cfg, NetVariant::Dprnet, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let bind = params.bind(&mut tape).unwrap();
        let shape = Shape::new(1, cfg.channels, 6, 6);
        let x = tape.leaf(shape, rand_data(shape.len(), 2), false).unwrap();
        let y = cam_forward(&mut tape, &bind, "block0.cam", x).unwrap();
        assert_eq!(tape.shape(y), shape);
        // attended magnitude never exceeds the input's
        let inf_in = tape.value(x).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let inf_out = tape.value(y).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(inf_out <= inf_in + 1e-12);
    }

    #[test]
    fn sam_constant_input_gives_constant_map() {
        let cfg = NetConfig::desk();
        let params = init_params::<f64>(&cfg, NetVariant::Dprnet, 3).unwrap();
        let mut tape = Tape::<f64>::new();
        let bind = params.bind(&mut tape).unwrap();
        let shape = Shape::new(1, cfg.channels, 6, 6);
        let x = tape.leaf(shape, vec![0.4; shape.len()], false).unwrap();
        let y = sam_forward(&mut tape, &bind, "block0.sam", x).unwrap();
        // all outputs of any one channel equal (constant map × constant input)
        let v = tape.value(y);
        for c in 0..cfg.channels {
            let base = v[shape.at(0, c, 0, 0)];
            for k in 0..36 {
                assert!((v[shape.at(0, c, k / 6, k % 6)] - base).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gam_zero_input_gives_zero_output() {
        let cfg = NetConfig::desk();
        let params = init_params::<f64>(&cfg, NetVariant::Ggirnet, 4).unwrap();
        let mut tape = Tape::<f64>::new();
        let bind = params.bind(&mut tape).unwrap();
        let shape = Shape::new(1, cfg.channels, 6, 6);
        let x = tape.leaf(shape, vec![0.0; shape.len()], false).unwrap();
        let y = gam_forward(&mut tape, &bind, "block0.gam", x).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_modules_pass_gradient_checks() {
        let cfg = NetConfig::desk();
        let dpr = init_params::<f64>(&cfg, NetVariant::Dprnet, 5).unwrap();
        let ggir = init_params::<f64>(&cfg, NetVariant::Ggirnet, 6).unwrap();
        let shape = Shape::new(1, cfg.channels, 6, 6);
        fd_check_module(shape, |t, x| {
            let bind = dpr.bind(t).unwrap();
            let y = cam_forward(t, &bind, "block0.cam", x).unwrap();
            sq_sum(t, y)
        }, 1e-4);
        fd_check_module(shape, |t, x| {
            let bind = dpr.bind(t).unwrap();
            let y = sam_forward(t, &bind, "block0.sam", x).unwrap();
            sq_sum(t, y)
        }, 1e-4);
        fd_check_module(Shape::new(1, cfg.channels, 6, 6), |t, x| {
            let bind = ggir.bind(t).unwrap();
            let y = gam_forward(t, &bind, "block0.gam", x).unwrap();
            sq_sum(t, y)
        }, 1e-4);
    }

    #[test]
    fn residual_blocks_pass_gradient_checks() {
        let cfg = NetConfig::desk();
        let dpr = init_params::<f64>(&cfg, NetVariant::Dprnet, 7).unwrap();
        let ggir = init_params::<f64>(&cfg, NetVariant::Ggirnet, 8).unwrap();
        let shape = Shape::new(1, cfg.channels, 8, 8);
        fd_check_module(shape, |t, x| {
            let bind = dpr.bind(t).unwrap();
            let y = csarb_forward(t, &bind, "block1", x).unwrap();
            sq_sum(t, y)
        }, 1e-3);
        fd_check_module(shape, |t, x| {
            let bind = ggir.bind(t).unwrap();
            let y = cgarb_forward(t, &bind, "block1", x, true).unwrap();
            sq_sum(t, y)
        }, 1e-3);
    }

    #[test]
    fn zero_trunk_makes_blocks_identity() {
        let cfg = NetConfig::desk();
        let mut params = init_params::<f64>(&cfg, NetVariant::Dprnet, 9).unwrap();
        for p in params.params_mut() {
            if p.name.starts_with("block0.conv") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::<f64>::new();
        let bind = params.bind(&mut tape).unwrap();
        let shape = Shape::new(1, cfg.channels, 6, 6);
        let data = rand_data(shape.len(), 10);
        let x = tape.leaf(shape, data.clone(), false).unwrap();
        let y = csarb_forward(&mut tape, &bind, "block0", x).unwrap();
        for (a, b) in tape.value(y).iter().zip(&data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tail_makes_net_identity() {
        let cfg = NetConfig::desk();
        let mut params = init_params::<f32>(&cfg, NetVariant::Dprnet, 11).unwrap();
        for p in params.params_mut() {
            if p.name.starts_with("tail") {
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape = Tape::<f32>::new();
        let bind = params.bind(&mut tape).unwrap();
        let shape = Shape::new(1, 3, 16, 16);
        let data: Vec<f64> = rand_data(shape.len(), 12);
        let x = tape
            .leaf(shape, data.iter().map(|&v| v as f32).collect(), false)
            .unwrap();
        let (rain, derained) = net_forward(&mut tape, &bind, &cfg, NetVariant::Dprnet, x).unwrap();
        assert!(tape.value(rain).iter().all(|&v| v == 0.0));
        assert_eq!(tape.value(derained), tape.value(x));
    }

    #[test]
    fn rain_plus_derained_reconstructs_input() {
        let cfg = NetConfig::desk();
        for variant in [NetVariant::Dprnet, NetVariant::Ggirnet, NetVariant::GgirnetNoGam] {
            let params = init_params::<f64>(&cfg, variant, 13).unwrap();
            let mut tape = Tape::<f64>::new();
            let bind = params.bind(&mut tape).unwrap();
            let shape = Shape::new(2, 3, 16, 16);
            let data = rand_data(shape.len(), 14);
            let x = tape.leaf(shape, data.clone(), false).unwrap();
            let (rain, derained) = net_forward(&mut tape, &bind, &cfg, variant, x).unwrap();
            assert_eq!(tape.shape(derained), shape);
            for k in 0..shape.len() {
                let sum = tape.value(rain)[k] + tape.value(derained)[k];
                assert!((sum - data[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn every_trainable_parameter_receives_gradient() {
        let cfg = NetConfig::desk();
        for variant in [NetVariant::Dprnet, NetVariant::Ggirnet] {
            let params = init_params::<f64>(&cfg, variant, 3).unwrap();
            let mut tape = Tape::<f64>::new();
            let bind = params.bind(&mut tape).unwrap();
            let shape = Shape::new(1, 3, 12, 12);
            let x = tape.leaf(shape, rand_data(shape.len(), 16), false).unwrap();
            let (_, derained) = net_forward(&mut tape, &bind, &cfg, variant, x).unwrap();
            let target = tape.leaf(shape, rand_data(shape.len(), 17), false).unwrap();
            let loss = tape.l2_loss(derained, target).unwrap();
            let grads = tape.backward(loss).unwrap();
            for p in params.params() {
                let v = bind.var(&p.name).unwrap();
                let g = grads.get(v).unwrap();
                assert!(
                    g.iter().any(|&x| x != 0.0),
                    "{variant:?}: parameter '{}' got an all-zero gradient",
                    p.name
                );
            }
        }
    }

    #[test]
    fn param_count_is_config_pure_and_small() {
        let default = param_count(&NetConfig::default(), NetVariant::Dprnet).unwrap();
        assert!(default < 500_000, "{default}");
        let desk = param_count(&NetConfig::desk(), NetVariant::Ggirnet).unwrap();
        let again = param_count(&NetConfig::desk(), NetVariant::Ggirnet).unwrap();
        assert_eq!(desk, again);
        let nogam = param_count(&NetConfig::desk(), NetVariant::GgirnetNoGam).unwrap();
        assert!(nogam < desk);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = init_params::<f32>(&NetConfig::desk(), NetVariant::Dprnet, 42).unwrap();
        let b = init_params::<f32>(&NetConfig::desk(), NetVariant::Dprnet, 42).unwrap();
        for (x, y) in a.params().iter().zip(b.params()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.data, y.data);
        }
        let c = init_params::<f32>(&NetConfig::desk(), NetVariant::Dprnet, 43).unwrap();
        assert_ne!(a.params()[0].data, c.params()[0].data);
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = NetConfig::desk();
        cfg.blocks = 0;
        assert!(init_params::<f32>(&cfg, NetVariant::Dprnet, 0).is_err());
        let mut cfg = NetConfig::desk();
        cfg.channels = 6;
        assert!(init_params::<f32>(&cfg, NetVariant::Dprnet, 0).is_err());
    }

    #[test]
    fn derain_image_shapes_and_residual_identity() {
        let cfg = NetConfig::desk();
        let params = init_params::<f32>(&cfg, NetVariant::Dprnet, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut img = crate::imagecore::Image::<f32>::new(16, 16, 3);
        for u in 0..16 {
            for v in 0..16 {
                for c in 0..3 {
                    img[(u, v, c)] = rng.gen_range(0.0..1.0);
                }
            }
        }
        let (rain, derained) = derain_image(&params, &cfg, NetVariant::Dprnet, &img).unwrap();
        assert_eq!(derained.height(), 16);
        assert_eq!(derained.channels(), 3);
        // derained = clamp(x − rain)
        for u in 0..16 {
            for v in 0..16 {
                for c in 0..3 {
                    let want = (img[(u, v, c)] - rain[(u, v, c)]).clamp(0.0, 1.0);
                    assert!((derained[(u, v, c)] - want).abs() < 1e-6);
                }
            }
        }
        let (_, again) = derain_image(&params, &cfg, NetVariant::Dprnet, &img).unwrap();
        assert_eq!(derained.data(), again.data());
    }
}
