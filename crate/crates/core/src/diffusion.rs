//! Conditional denoising diffusion over flattened control sequences:
//! forward noising, classifier-free training with a learned null token, and
//! the iterative Gaussian reverse chain used for sampling.

use std::path::Path;

use rand::RngExt;
use rand_distr::StandardNormal;

use crate::codec::{Reader, Writer};
use crate::datagen::TrainData;
use crate::dynamics::SystemKind;
use crate::error::{Error, Result};
use crate::neural::{
    backward_batch, forward_batch, Activation, AdamState, MlpSpec, Parameters,
};
use crate::ocp::{ControlSequence, InputBox};
use crate::scalar::Real;
use crate::seeds::derive_rng;

const POLICY_MAGIC: &[u8; 4] = b"DDIF";
const POLICY_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl ScheduleKind {
    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            other => Err(Error::Config(format!("unknown schedule '{other}'"))),
        }
    }
}

/// Reverse-transition variance choice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReverseVariance {
    /// `Sigma_k = beta_k I`.
    Beta,
    /// `Sigma_k = (1 - alpha_{k-1}) / (1 - alpha_k) * beta_k I`.
    BetaTilde,
}

impl ReverseVariance {
    pub fn name(self) -> &'static str {
        match self {
            ReverseVariance::Beta => "beta",
            ReverseVariance::BetaTilde => "beta_tilde",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(ReverseVariance::Beta),
            "beta_tilde" => Ok(ReverseVariance::BetaTilde),
            other => Err(Error::Config(format!("unknown reverse variance '{other}'"))),
        }
    }
}

/// Scheduled variances and the derived reverse-step coefficients.
///
/// `alphas[k]` is the cumulative product of `(1 - beta_j)` up to step `k`
/// (1-based steps stored 0-based).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub betas: Vec<Real>,
    pub alphas: Vec<Real>,
    pub a: Vec<Real>,
    pub b: Vec<Real>,
    pub sigma2: Vec<Real>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<Real>, rv: ReverseVariance) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("need K >= 1 diffusion steps".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::InvalidArgument("betas must lie in (0, 1)".into()));
        }
        let mut alphas = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alphas.push(prod);
        }
        debug_assert!(alphas.windows(2).all(|w| w[1] < w[0]));
        let a: Vec<Real> = betas.iter().map(|b| 1.0 / (1.0 - b).sqrt()).collect();
        let b_coef: Vec<Real> = betas
            .iter()
            .zip(alphas.iter())
            .map(|(&beta, &alpha)| -beta / ((1.0 - beta).sqrt() * (1.0 - alpha).sqrt()))
            .collect();
        let sigma2: Vec<Real> = match rv {
            ReverseVariance::Beta => betas.clone(),
            ReverseVariance::BetaTilde => (0..betas.len())
                .map(|i| {
                    let alpha_prev = if i == 0 { 1.0 } else { alphas[i - 1] };
                    (1.0 - alpha_prev) / (1.0 - alphas[i]) * betas[i]
                })
                .collect(),
        };
        Ok(Self {
            betas,
            alphas,
            a,
            b: b_coef,
            sigma2,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Remaining signal fraction after the full forward process.
    pub fn terminal_alpha(&self) -> Real {
        *self.alphas.last().unwrap()
    }
}

/// Build a schedule of `k` steps.
pub fn make_schedule(
    k: usize,
    kind: ScheduleKind,
    beta_min: Real,
    beta_max: Real,
    rv: ReverseVariance,
) -> Result<NoiseSchedule> {
    if k == 0 {
        return Err(Error::InvalidArgument("need K >= 1 diffusion steps".into()));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidArgument(
            "need 0 < beta_min <= beta_max < 1".into(),
        ));
    }
    let betas = match kind {
        ScheduleKind::Linear => (0..k)
            .map(|i| {
                if k == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as Real / (k - 1) as Real
                }
            })
            .collect(),
        ScheduleKind::Cosine => {
            let s = 0.008;
            let f = |t: Real| ((t / k as Real + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2)
                .cos()
                .powi(2);
            let mut prev = 1.0;
            (1..=k)
                .map(|i| {
                    let alpha = f(i as Real) / f(0.0);
                    let beta = (1.0 - alpha / prev).clamp(1e-6, 0.999);
                    prev = alpha;
                    beta
                })
                .collect()
        }
    };
    NoiseSchedule::from_betas(betas, rv)
}

/// Default linear schedule: beta_min 0.02 and beta_max solved so the
/// terminal signal fraction is ~0.03 at any step count (0.35 at K = 25),
/// keeping the standard-normal prior valid for short chains too.
pub fn default_schedule(k: usize) -> Result<NoiseSchedule> {
    let beta_min = 0.02_f64.min(0.5);
    let target = 0.03;
    let terminal = |beta_max: Real| -> Real {
        (0..k)
            .map(|i| {
                let b = if k == 1 {
                    beta_max
                } else {
                    beta_min + (beta_max - beta_min) * i as Real / (k - 1) as Real
                };
                (1.0 - b).ln()
            })
            .sum::<Real>()
            .exp()
    };
    let (mut lo, mut hi) = (beta_min, 0.999);
    if terminal(lo) <= target {
        return make_schedule(k, ScheduleKind::Linear, beta_min, lo, ReverseVariance::Beta);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if terminal(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = make_schedule(k, ScheduleKind::Linear, beta_min, hi, ReverseVariance::Beta)?;
    debug_assert!(s.terminal_alpha() <= 0.05);
    Ok(s)
}

/// Closed-form forward noising to step `k` (1-based):
/// `u_k = sqrt(alpha_k) u0 + sqrt(1 - alpha_k) eps`.
pub fn forward_noising(s: &NoiseSchedule, u0: &[Real], k: usize, noise: &[Real]) -> Vec<Real> {
    assert!(k >= 1 && k <= s.steps(), "diffusion step out of range");
    assert_eq!(u0.len(), noise.len());
    let alpha = s.alphas[k - 1];
    let (sa, sn) = (alpha.sqrt(), (1.0 - alpha).sqrt());
    u0.iter()
        .zip(noise.iter())
        .map(|(&u, &e)| sa * u + sn * e)
        .collect()
}

/// Reverse-step mean `a_k u_k + b_k eps_hat` (the deterministic part of the
/// Gaussian transition).
pub fn reverse_step_mean(s: &NoiseSchedule, u_k: &[Real], k: usize, eps_hat: &[Real]) -> Vec<Real> {
    assert!(k >= 1 && k <= s.steps());
    let (a, b) = (s.a[k - 1], s.b[k - 1]);
    u_k.iter()
        .zip(eps_hat.iter())
        .map(|(&u, &e)| a * u + b * e)
        .collect()
}

/// Per-entry affine normalization for states and sequences, stored with
/// every checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub state_shift: Vec<Real>,
    pub state_scale: Vec<Real>,
    pub seq_shift: Vec<Real>,
    pub seq_scale: Vec<Real>,
}

impl Normalizer {
    /// Mean/std per entry over the data; scales floored to keep the map
    /// invertible on constant dimensions.
    pub fn from_train_data(data: &TrainData) -> Self {
        let n = data.len().max(1) as Real;
        let moments = |dim: usize, rows: &dyn Fn(usize, usize) -> Real| {
            let mut shift = vec![0.0; dim];
            let mut scale = vec![0.0; dim];
            for i in 0..data.len() {
                for d in 0..dim {
                    shift[d] += rows(i, d);
                }
            }
            for s in shift.iter_mut() {
                *s /= n;
            }
            for i in 0..data.len() {
                for d in 0..dim {
                    let c = rows(i, d) - shift[d];
                    scale[d] += c * c;
                }
            }
            for s in scale.iter_mut() {
                *s = (*s / n).sqrt().max(1e-8);
            }
            (shift, scale)
        };
        let (state_shift, state_scale) = moments(data.state_dim, &|i, d| data.state(i)[d]);
        let (seq_shift, seq_scale) = moments(data.seq_dim, &|i, d| data.seq(i)[d]);
        Self {
            state_shift,
            state_scale,
            seq_shift,
            seq_scale,
        }
    }

    pub fn identity(state_dim: usize, seq_dim: usize) -> Self {
        Self {
            state_shift: vec![0.0; state_dim],
            state_scale: vec![1.0; state_dim],
            seq_shift: vec![0.0; seq_dim],
            seq_scale: vec![1.0; seq_dim],
        }
    }

    pub fn normalize_state(&self, x: &[Real]) -> Vec<Real> {
        x.iter()
            .zip(self.state_shift.iter().zip(self.state_scale.iter()))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_seq(&self, u: &[Real]) -> Vec<Real> {
        u.iter()
            .zip(self.seq_shift.iter().zip(self.seq_scale.iter()))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize_seq(&self, u: &[Real]) -> Vec<Real> {
        u.iter()
            .zip(self.seq_shift.iter().zip(self.seq_scale.iter()))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }
}

/// Condition input to the denoiser.
#[derive(Clone, Copy, Debug)]
pub enum Cond<'a> {
    /// Normalized state.
    State(&'a [Real]),
    /// The learned null token.
    Null,
}

/// Noise-prediction network: MLP trunk over
/// `[noisy sequence | sinusoidal step embedding | condition embedding]`,
/// with a learned linear state embedding and a learned null token.
#[derive(Clone, Debug, PartialEq)]
pub struct Denoiser {
    pub trunk_spec: MlpSpec,
    pub trunk: Parameters,
    /// `cond_embed x state_dim`, row-major.
    pub cond_weight: Vec<Real>,
    pub cond_bias: Vec<Real>,
    pub null_token: Vec<Real>,
    pub step_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub seq_dim: usize,
    pub state_dim: usize,
}

/// Gradients for every learned tensor of a [`Denoiser`].
pub struct DenoiserGrads {
    pub trunk: Parameters,
    pub cond_weight: Vec<Real>,
    pub cond_bias: Vec<Real>,
    pub null_token: Vec<Real>,
}

impl Denoiser {
    pub fn new(
        state_dim: usize,
        seq_dim: usize,
        hidden: &[usize],
        step_embed_dim: usize,
        cond_embed_dim: usize,
        activation: Activation,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("denoiser needs hidden layers".into()));
        }
        let mut sizes = vec![seq_dim + step_embed_dim + cond_embed_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(seq_dim);
        let trunk_spec = MlpSpec::new(sizes, activation)?;
        let trunk = Parameters::init(&trunk_spec, rng);
        let bound = (1.0 / state_dim.max(1) as Real).sqrt();
        let cond_weight = (0..cond_embed_dim * state_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        let cond_bias = vec![0.0; cond_embed_dim];
        let null_token = (0..cond_embed_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Ok(Self {
            trunk_spec,
            trunk,
            cond_weight,
            cond_bias,
            null_token,
            step_embed_dim,
            cond_embed_dim,
            seq_dim,
            state_dim,
        })
    }

    pub fn zero_grads(&self) -> DenoiserGrads {
        DenoiserGrads {
            trunk: Parameters::zeros(&self.trunk_spec),
            cond_weight: vec![0.0; self.cond_weight.len()],
            cond_bias: vec![0.0; self.cond_bias.len()],
            null_token: vec![0.0; self.null_token.len()],
        }
    }

    /// Fixed sinusoidal embedding of the diffusion step index.
    pub fn step_embedding(&self, k: usize) -> Vec<Real> {
        sinusoidal_embedding(k, self.step_embed_dim)
    }

    fn cond_embedding(&self, cond: Cond) -> Vec<Real> {
        match cond {
            Cond::Null => self.null_token.clone(),
            Cond::State(x) => {
                debug_assert_eq!(x.len(), self.state_dim);
                let mut out = self.cond_bias.clone();
                for (r, o) in out.iter_mut().enumerate() {
                    let row = &self.cond_weight[r * self.state_dim..(r + 1) * self.state_dim];
                    for (w, xv) in row.iter().zip(x.iter()) {
                        *o += w * xv;
                    }
                }
                out
            }
        }
    }

    fn assemble_input(&self, u_k: &[Real], k: usize, cond: Cond) -> Vec<Real> {
        let mut input =
            Vec::with_capacity(self.seq_dim + self.step_embed_dim + self.cond_embed_dim);
        input.extend_from_slice(u_k);
        input.extend_from_slice(&self.step_embedding(k));
        input.extend_from_slice(&self.cond_embedding(cond));
        input
    }

    /// Predicted noise for a single normalized noisy sequence.
    pub fn predict(&self, u_k: &[Real], k: usize, cond: Cond) -> Result<Vec<Real>> {
        if u_k.len() != self.seq_dim {
            return Err(Error::DimensionMismatch {
                what: "denoiser input",
                expected: self.seq_dim,
                got: u_k.len(),
            });
        }
        let input = self.assemble_input(u_k, k, cond);
        crate::neural::forward(&self.trunk_spec, &self.trunk, &input)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [Real]> {
        let mut out = self.trunk.tensors_mut();
        out.push(self.cond_weight.as_mut_slice());
        out.push(self.cond_bias.as_mut_slice());
        out.push(self.null_token.as_mut_slice());
        out
    }
}

impl DenoiserGrads {
    pub fn tensors(&self) -> Vec<&[Real]> {
        let mut out = self.trunk.tensors();
        out.push(self.cond_weight.as_slice());
        out.push(self.cond_bias.as_slice());
        out.push(self.null_token.as_slice());
        out
    }
}

pub fn sinusoidal_embedding(k: usize, dim: usize) -> Vec<Real> {
    let mut out = vec![0.0; dim];
    let half = (dim / 2).max(1);
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as Real) / half as Real);
        let angle = k as Real * freq;
        out[2 * i] = angle.sin();
        if 2 * i + 1 < dim {
            out[2 * i + 1] = angle.cos();
        }
    }
    out
}

/// Per-sample stochastic draw used by the training loss.
#[derive(Clone, Debug)]
pub struct NoiseDraw {
    pub k: usize,
    pub eps: Vec<Real>,
    pub unconditioned: bool,
}

pub fn draw_noise(
    schedule: &NoiseSchedule,
    seq_dim: usize,
    p_uncond: Real,
    rng: &mut impl rand::Rng,
) -> NoiseDraw {
    let k = rng.random_range(1..=schedule.steps());
    let eps = (0..seq_dim)
        .map(|_| rng.sample::<Real, _>(StandardNormal))
        .collect();
    let unconditioned = rng.random_range(0.0..1.0) < p_uncond;
    NoiseDraw {
        k,
        eps,
        unconditioned,
    }
}

/// Counters reported by the loss: how many samples used the null token.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LossStats {
    pub n_null: usize,
    pub n_total: usize,
}

/// Loss evaluation against an arbitrary predictor; used for validation and
/// for oracle-injection tests. `pred(sample_index, u_k, k, cond)` must
/// return the predicted noise.
pub fn eval_loss_with(
    normalizer: &Normalizer,
    schedule: &NoiseSchedule,
    data: &TrainData,
    idx: &[usize],
    draws: &[NoiseDraw],
    pred: impl Fn(usize, &[Real], usize, Cond) -> Vec<Real>,
) -> Real {
    assert_eq!(idx.len(), draws.len());
    let mut total = 0.0;
    for (slot, (&i, draw)) in idx.iter().zip(draws.iter()).enumerate() {
        let u0 = normalizer.normalize_seq(data.seq(i));
        let u_k = forward_noising(schedule, &u0, draw.k, &draw.eps);
        let xn = normalizer.normalize_state(data.state(i));
        let cond = if draw.unconditioned {
            Cond::Null
        } else {
            Cond::State(&xn)
        };
        let p = pred(slot, &u_k, draw.k, cond);
        total += p
            .iter()
            .zip(draw.eps.iter())
            .map(|(a, e)| (a - e) * (a - e))
            .sum::<Real>();
    }
    total / idx.len().max(1) as Real
}

/// Mean squared noise-prediction error of a batch plus exact gradients for
/// every denoiser tensor.
pub fn training_loss(
    den: &Denoiser,
    normalizer: &Normalizer,
    schedule: &NoiseSchedule,
    data: &TrainData,
    idx: &[usize],
    draws: &[NoiseDraw],
) -> Result<(Real, DenoiserGrads, LossStats)> {
    let n = idx.len();
    if n == 0 {
        return Err(Error::InvalidArgument("empty training batch".into()));
    }
    let in_dim = den.trunk_spec.input_dim();
    let mut inputs = Vec::with_capacity(n * in_dim);
    let mut targets = Vec::with_capacity(n * den.seq_dim);
    let mut states_norm = Vec::with_capacity(n * den.state_dim);
    let mut stats = LossStats {
        n_null: 0,
        n_total: n,
    };
    for (&i, draw) in idx.iter().zip(draws.iter()) {
        let u0 = normalizer.normalize_seq(data.seq(i));
        let u_k = forward_noising(schedule, &u0, draw.k, &draw.eps);
        let xn = normalizer.normalize_state(data.state(i));
        let cond = if draw.unconditioned {
            stats.n_null += 1;
            Cond::Null
        } else {
            Cond::State(&xn)
        };
        inputs.extend_from_slice(&den.assemble_input(&u_k, draw.k, cond));
        targets.extend_from_slice(&draw.eps);
        states_norm.extend_from_slice(&xn);
    }

    let (out, cache) = forward_batch(&den.trunk_spec, &den.trunk, &inputs, n)?;
    let mut loss = 0.0;
    let mut gout = vec![0.0; out.len()];
    for (i, (o, t)) in out.iter().zip(targets.iter()).enumerate() {
        let d = o - t;
        loss += d * d;
        gout[i] = 2.0 * d / n as Real;
    }
    loss /= n as Real;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged(format!("loss became {loss}")));
    }

    let (trunk_grads, dinput) = backward_batch(&den.trunk_spec, &den.trunk, &cache, &gout)?;
    let mut grads = DenoiserGrads {
        trunk: trunk_grads,
        cond_weight: vec![0.0; den.cond_weight.len()],
        cond_bias: vec![0.0; den.cond_bias.len()],
        null_token: vec![0.0; den.null_token.len()],
    };
    let cond_off = den.seq_dim + den.step_embed_dim;
    for (row, draw) in draws.iter().enumerate().take(n) {
        let dcond = &dinput[row * in_dim + cond_off..row * in_dim + cond_off + den.cond_embed_dim];
        if draw.unconditioned {
            for (g, d) in grads.null_token.iter_mut().zip(dcond.iter()) {
                *g += d;
            }
        } else {
            let x = &states_norm[row * den.state_dim..(row + 1) * den.state_dim];
            for (r, d) in dcond.iter().enumerate() {
                grads.cond_bias[r] += d;
                let grow =
                    &mut grads.cond_weight[r * den.state_dim..(r + 1) * den.state_dim];
                for (g, xv) in grow.iter_mut().zip(x.iter()) {
                    *g += d * xv;
                }
            }
        }
    }
    Ok((loss, grads, stats))
}

/// One reverse transition `u_{k-1} ~ p(. | u_k)` with classifier-free
/// combination `(1+w) eps_cond - w eps_null`; deterministic at `k = 1`.
pub fn reverse_step(
    den: &Denoiser,
    schedule: &NoiseSchedule,
    u_k: &[Real],
    k: usize,
    cond: Cond,
    guidance_w: Real,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Real>> {
    let eps_hat = if guidance_w != 0.0 {
        let eps_c = den.predict(u_k, k, cond)?;
        let eps_n = den.predict(u_k, k, Cond::Null)?;
        eps_c
            .iter()
            .zip(eps_n.iter())
            .map(|(&c, &n)| (1.0 + guidance_w) * c - guidance_w * n)
            .collect()
    } else {
        den.predict(u_k, k, cond)?
    };
    let mut u = reverse_step_mean(schedule, u_k, k, &eps_hat);
    if k > 1 {
        let sd = schedule.sigma2[k - 1].sqrt();
        for v in u.iter_mut() {
            let z: Real = rng.sample(StandardNormal);
            *v += sd * z;
        }
    }
    Ok(u)
}

/// A trained sampling policy: denoiser, schedule, and normalization, bound
/// to one system/horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionPolicy {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub system: SystemKind,
    pub horizon: usize,
    pub input_dim: usize,
}

impl DiffusionPolicy {
    /// Draw one control sequence for `state`: full K-step reverse chain from
    /// a standard-normal start, denormalized and clamped into the box.
    pub fn sample_sequence(
        &self,
        state: &[Real],
        guidance_w: Real,
        boxc: &InputBox<Real>,
        rng: &mut impl rand::Rng,
    ) -> Result<ControlSequence<Real>> {
        let xn = self.normalizer.normalize_state(state);
        let mut u: Vec<Real> = (0..self.denoiser.seq_dim)
            .map(|_| rng.sample::<Real, _>(StandardNormal))
            .collect();
        for k in (1..=self.schedule.steps()).rev() {
            u = reverse_step(
                &self.denoiser,
                &self.schedule,
                &u,
                k,
                Cond::State(&xn),
                guidance_w,
                rng,
            )?;
        }
        let flat = self.normalizer.denormalize_seq(&u);
        let mut seq = ControlSequence::from_flat(
            flat.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect(),
            self.input_dim,
        )?;
        boxc.clamp_in_place(&mut seq);
        Ok(seq)
    }

    pub fn save(&self, meta: &str, path: &Path) -> Result<()> {
        let mut w = Writer::new();
        w.magic(POLICY_MAGIC);
        w.u32(POLICY_VERSION);
        w.str(meta);
        w.u8(match self.system {
            SystemKind::CartPole => 0,
            SystemKind::Pendubot => 1,
            SystemKind::DoubleCartPole => 2,
        });
        w.u32(self.horizon as u32);
        w.u32(self.input_dim as u32);
        w.u32(self.denoiser.state_dim as u32);
        w.u32(self.denoiser.seq_dim as u32);
        w.u32(self.denoiser.step_embed_dim as u32);
        w.u32(self.denoiser.cond_embed_dim as u32);
        w.f64_slice(&self.schedule.betas);
        w.f64_slice(&self.schedule.sigma2);
        w.f64_slice(&self.normalizer.state_shift);
        w.f64_slice(&self.normalizer.state_scale);
        w.f64_slice(&self.normalizer.seq_shift);
        w.f64_slice(&self.normalizer.seq_scale);
        w.str(self.denoiser.trunk_spec.activation.name());
        w.u32(self.denoiser.trunk_spec.layer_sizes.len() as u32);
        for s in &self.denoiser.trunk_spec.layer_sizes {
            w.u64(*s as u64);
        }
        w.bytes(&self.denoiser.trunk_spec.digest());
        for t in self.denoiser.trunk.tensors() {
            w.f64_slice(t);
        }
        w.f64_slice(&self.denoiser.cond_weight);
        w.f64_slice(&self.denoiser.cond_bias);
        w.f64_slice(&self.denoiser.null_token);
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let mut r = Reader::open(path)?;
        r.magic(POLICY_MAGIC)?;
        let version = r.u32()?;
        if version != POLICY_VERSION {
            return Err(Error::Version {
                expected: POLICY_VERSION,
                found: version,
            });
        }
        let meta = r.string()?;
        let system = match r.u8()? {
            0 => SystemKind::CartPole,
            1 => SystemKind::Pendubot,
            2 => SystemKind::DoubleCartPole,
            k => return Err(Error::Format(format!("unknown system tag {k}"))),
        };
        let horizon = r.u32()? as usize;
        let input_dim = r.u32()? as usize;
        let state_dim = r.u32()? as usize;
        let seq_dim = r.u32()? as usize;
        let step_embed_dim = r.u32()? as usize;
        let cond_embed_dim = r.u32()? as usize;
        let betas = r.f64_vec()?;
        let sigma2 = r.f64_vec()?;
        let mut schedule = NoiseSchedule::from_betas(betas, ReverseVariance::Beta)?;
        schedule.sigma2 = sigma2;
        let normalizer = Normalizer {
            state_shift: r.f64_vec()?,
            state_scale: r.f64_vec()?,
            seq_shift: r.f64_vec()?,
            seq_scale: r.f64_vec()?,
        };
        let activation = Activation::from_name(&r.string()?)?;
        let n_sizes = r.u32()? as usize;
        let mut layer_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            layer_sizes.push(r.u64()? as usize);
        }
        let trunk_spec = MlpSpec::new(layer_sizes, activation)?;
        let digest = r.byte_vec()?;
        if digest != trunk_spec.digest() {
            return Err(Error::DigestMismatch(
                "denoiser trunk digest mismatch".into(),
            ));
        }
        let mut trunk = Parameters::zeros(&trunk_spec);
        for l in 0..trunk_spec.n_layers() {
            trunk.weights[l] = r.f64_vec()?;
            trunk.biases[l] = r.f64_vec()?;
        }
        let denoiser = Denoiser {
            trunk_spec,
            trunk,
            cond_weight: r.f64_vec()?,
            cond_bias: r.f64_vec()?,
            null_token: r.f64_vec()?,
            step_embed_dim,
            cond_embed_dim,
            seq_dim,
            state_dim,
        };
        r.done()?;
        if denoiser.cond_weight.len() != cond_embed_dim * state_dim
            || denoiser.null_token.len() != cond_embed_dim
            || denoiser.trunk_spec.output_dim() != seq_dim
        {
            return Err(Error::Format("denoiser tensor shapes inconsistent".into()));
        }
        Ok((
            Self {
                denoiser,
                schedule,
                normalizer,
                system,
                horizon,
                input_dim,
            },
            meta,
        ))
    }
}

/// Training settings; defaults follow the cart-pole column of the training
/// table (batch 4096, 300 epochs, lr 3e-3, K 25, p_uncond 0.25, 5%
/// validation).
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: Real,
    pub p_uncond: Real,
    pub diffusion_steps: usize,
    pub seed: u64,
    pub validation_fraction: Real,
    pub schedule: ScheduleKind,
    pub beta_min: Real,
    /// None solves beta_max for the default terminal signal fraction.
    pub beta_max: Option<Real>,
    pub reverse_variance: ReverseVariance,
    pub hidden: Vec<usize>,
    pub step_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub activation: Activation,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 4096,
            epochs: 300,
            learning_rate: 3e-3,
            p_uncond: 0.25,
            diffusion_steps: 25,
            seed: 0,
            validation_fraction: 0.05,
            schedule: ScheduleKind::Linear,
            beta_min: 0.02,
            beta_max: None,
            reverse_variance: ReverseVariance::Beta,
            hidden: vec![256, 256, 256],
            step_embed_dim: 32,
            cond_embed_dim: 32,
            activation: Activation::SiLU,
        }
    }
}

impl DiffusionTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return Err(Error::InvalidArgument("p_uncond must lie in [0,1]".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidArgument(
                "validation_fraction must lie in (0,1)".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.diffusion_steps == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, epochs, diffusion_steps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Schedule implied by a training config.
pub fn schedule_from_config(cfg: &DiffusionTrainConfig) -> Result<NoiseSchedule> {
    match (cfg.schedule, cfg.beta_max) {
        (ScheduleKind::Cosine, _) => make_schedule(
            cfg.diffusion_steps,
            ScheduleKind::Cosine,
            cfg.beta_min.max(1e-6),
            0.999,
            cfg.reverse_variance,
        ),
        (ScheduleKind::Linear, Some(bm)) => make_schedule(
            cfg.diffusion_steps,
            ScheduleKind::Linear,
            cfg.beta_min,
            bm,
            cfg.reverse_variance,
        ),
        (ScheduleKind::Linear, None) => {
            let s = default_schedule(cfg.diffusion_steps)?;
            NoiseSchedule::from_betas(s.betas, cfg.reverse_variance)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: Real,
    pub val_loss: Real,
}

pub struct TrainOutcome {
    pub policy: DiffusionPolicy,
    pub log: Vec<TrainLogRow>,
    pub best_epoch: usize,
    pub best_val_loss: Real,
}

/// Train a conditional denoiser on (state, sequence) data; retains the
/// parameters with the best validation loss.
pub fn train(
    data: &TrainData,
    system: SystemKind,
    input_dim: usize,
    cfg: &DiffusionTrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training dataset".into()));
    }
    let schedule = schedule_from_config(cfg)?;

    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    shuffle(&mut order, &mut derive_rng(cfg.seed, &[0]));
    let n_val = ((n as Real * cfg.validation_fraction).round() as usize)
        .max(1)
        .min(n - 1);
    let (train_idx, val_idx) = order.split_at(n - n_val);
    let train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();

    let normalizer = Normalizer::from_train_data(data);
    let mut den = Denoiser::new(
        data.state_dim,
        data.seq_dim,
        &cfg.hidden,
        cfg.step_embed_dim,
        cfg.cond_embed_dim,
        cfg.activation,
        &mut derive_rng(cfg.seed, &[1]),
    )?;
    let sizes: Vec<usize> = den
        .zero_grads()
        .tensors()
        .iter()
        .map(|t| t.len())
        .collect();
    let mut adam = AdamState::new(cfg.learning_rate, &sizes);

    // Fixed validation draws keep epoch-to-epoch losses comparable.
    let mut val_rng = derive_rng(cfg.seed, &[2]);
    let val_draws: Vec<NoiseDraw> = val_idx
        .iter()
        .map(|_| draw_noise(&schedule, data.seq_dim, cfg.p_uncond, &mut val_rng))
        .collect();

    let val_loss_of = |den: &Denoiser| -> Result<Real> {
        let mut total = 0.0;
        let chunk = 4096;
        for (ci, chunk_idx) in val_idx.chunks(chunk).enumerate() {
            let draws = &val_draws[ci * chunk..ci * chunk + chunk_idx.len()];
            let loss = eval_loss_with(&normalizer, &schedule, data, chunk_idx, draws, |slot, u_k, k, cond| {
                let _ = slot;
                den.predict(u_k, k, cond).expect("shape checked")
            });
            total += loss * chunk_idx.len() as Real;
        }
        Ok(total / val_idx.len() as Real)
    };

    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0;
    let mut best_val = Real::INFINITY;
    let mut best_params: Option<Denoiser> = None;

    for epoch in 0..cfg.epochs {
        let mut idx = train_idx.clone();
        shuffle(&mut idx, &mut derive_rng(cfg.seed, &[3, epoch as u64]));
        let mut epoch_loss = 0.0;
        let mut n_seen = 0usize;
        for (bi, batch) in idx.chunks(cfg.batch_size).enumerate() {
            let mut rng = derive_rng(cfg.seed, &[4, epoch as u64, bi as u64]);
            let draws: Vec<NoiseDraw> = batch
                .iter()
                .map(|_| draw_noise(&schedule, data.seq_dim, cfg.p_uncond, &mut rng))
                .collect();
            let (loss, grads, _) =
                training_loss(&den, &normalizer, &schedule, data, batch, &draws)?;
            epoch_loss += loss * batch.len() as Real;
            n_seen += batch.len();
            let gt = grads.tensors();
            let mut pt = den.tensors_mut();
            adam.apply(&mut pt, &gt)?;
        }
        let train_loss = epoch_loss / n_seen.max(1) as Real;
        let val_loss = val_loss_of(&den)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::TrainingDiverged(format!(
                "epoch {epoch}: train {train_loss}, val {val_loss}"
            )));
        }
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = Some(den.clone());
        }
        log.push(TrainLogRow {
            epoch,
            train_loss,
            val_loss,
        });
    }

    Ok(TrainOutcome {
        policy: DiffusionPolicy {
            denoiser: best_params.unwrap_or(den),
            schedule,
            normalizer,
            system,
            horizon: data.seq_dim / input_dim.max(1),
            input_dim,
        },
        log,
        best_epoch,
        best_val_loss: best_val,
    })
}

/// Deterministic Fisher-Yates.
pub fn shuffle<T>(v: &mut [T], rng: &mut impl rand::Rng) {
    for i in (1..v.len()).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
}

/// Write the per-epoch training log as delimiter-separated text.
pub fn write_train_log(log: &[TrainLogRow], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for row in log {
        out.push_str(&format!("{},{},{}\n", row.epoch, row.train_loss, row.val_loss));
    }
    std::fs::write(path, out)?;
    Ok(())
}
