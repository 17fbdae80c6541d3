//! WGAN-WC and WGAN-GP training of a linear generator against a ReLU critic.
//!
//! Every generator iteration runs `critic_steps_per_gen` critic updates on
//! fresh minibatches, then one generator update. Real data is reshuffled at
//! the start of each pass and read in sequential batches; latents are always
//! fresh draws.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, NORM_EPS};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceModel, SampleSet};
use crate::linalg::{frobenius_distance, Matrix};
use crate::nn::{critic_forward, generator_forward, generator_forward_tape, glorot_init, CriticNet, LinearGenerator};
use crate::optim::{clip_weights, lr_at, LrSchedule, OptimizerState};
use crate::pca::empirical_pca;
use crate::rng::{GaussianSource, RngStream};
use crate::fmt_real;

/// Stream id of the training RNG; sub-streams are derived from it.
const TRAIN_STREAM: u64 = 0x5452_4149_4e;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Weight clipping, RMSProp.
    Wc,
    /// Gradient penalty, Adam.
    Gp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub d: usize,
    pub r: usize,
    pub n: usize,
    pub batch: usize,
    pub algorithm: Algorithm,
    pub lambda: f64,
    pub clip: f64,
    pub critic_steps_per_gen: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub rmsprop_rho: f64,
    pub lr: f64,
    /// Initial critic learning rate; `None` uses `lr`.
    pub critic_lr: Option<f64>,
    pub lr_decay: f64,
    pub decay_every_epochs: u64,
    pub decay_critic: bool,
    pub decay_generator: bool,
    pub max_gen_iters: usize,
    pub seed: u64,
    /// Hidden widths; the critic is `[d, hidden…, 1]`.
    pub critic_hidden: Vec<usize>,
    pub log_every: usize,
    /// When false every `wall_seconds` is logged as 0, which makes run logs
    /// byte-reproducible.
    pub log_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d: 16,
            r: 4,
            n: 50_000,
            batch: 200,
            algorithm: Algorithm::Gp,
            lambda: 0.1,
            clip: 0.01,
            critic_steps_per_gen: 5,
            adam_beta1: 0.5,
            adam_beta2: 0.9,
            rmsprop_rho: 0.9,
            lr: 1e-3,
            critic_lr: None,
            lr_decay: 0.1,
            decay_every_epochs: 5,
            decay_critic: true,
            decay_generator: true,
            max_gen_iters: 3000,
            seed: 0,
            critic_hidden: vec![64, 64, 64],
            log_every: 10,
            log_wall_time: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d == 0 || self.r == 0 || self.r > self.d {
            return fail(format!("need 1 <= r <= d, got d={} r={}", self.d, self.r));
        }
        if self.batch == 0 || self.batch > self.n {
            return fail(format!("need 1 <= batch <= n, got batch={} n={}", self.batch, self.n));
        }
        if !(self.lambda >= 0.0) || !(self.clip > 0.0) {
            return fail(format!("need lambda >= 0 and clip > 0, got {} and {}", self.lambda, self.clip));
        }
        if self.critic_steps_per_gen == 0 || self.log_every == 0 || self.max_gen_iters == 0 {
            return fail("critic_steps_per_gen, log_every and max_gen_iters must be >= 1".into());
        }
        if self.critic_hidden.contains(&0) {
            return fail("hidden widths must be nonzero".into());
        }
        if self.critic_lr.is_some_and(|l| !(l > 0.0)) {
            return fail("critic_lr must be positive".into());
        }
        self.schedule()?;
        self.optimizer(&[])?;
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.d];
        s.extend(&self.critic_hidden);
        s.push(1);
        s
    }

    /// One epoch is `⌈n / batch⌉` generator iterations.
    pub fn epoch_size_iters(&self) -> u64 {
        self.n.div_ceil(self.batch) as u64
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.lr_decay, self.decay_every_epochs, self.epoch_size_iters())
    }

    /// Adam for GP runs, RMSProp for WC runs; same family for both networks.
    pub fn optimizer(&self, shapes: &[(usize, usize)]) -> Result<OptimizerState> {
        match self.algorithm {
            Algorithm::Gp => OptimizerState::adam(self.adam_beta1, self.adam_beta2, shapes),
            Algorithm::Wc => OptimizerState::rmsprop(self.rmsprop_rho, shapes),
        }
    }
}

/// One logged generator iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub gen_iter: u64,
    pub wall_seconds: f64,
    pub frob_to_truth: f64,
    pub frob_to_empirical_pca: f64,
    pub critic_loss: f64,
    pub gen_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<LogRecord>,
}

pub const RUNLOG_HEADER: &str = "gen_iter,wall_seconds,frob_to_truth,frob_to_empirical_pca,critic_loss,gen_loss";

impl RunLog {
    pub fn last(&self) -> Option<&LogRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(RUNLOG_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.gen_iter,
                fmt_real(r.wall_seconds),
                fmt_real(r.frob_to_truth),
                fmt_real(r.frob_to_empirical_pca),
                fmt_real(r.critic_loss),
                fmt_real(r.gen_loss)
            );
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(RUNLOG_HEADER) {
            return Err(Error::Parse("run log header mismatch".into()));
        }
        let mut records = Vec::new();
        for (k, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 6 {
                return Err(Error::Parse(format!("line {}: expected 6 fields, got {}", k + 2, f.len())));
            }
            let real = |i: usize| {
                f[i].parse::<f64>().map_err(|e| Error::Parse(format!("line {}: field {}: {e}", k + 2, i + 1)))
            };
            records.push(LogRecord {
                gen_iter: f[0].parse().map_err(|e| Error::Parse(format!("line {}: gen_iter: {e}", k + 2)))?,
                wall_seconds: real(1)?,
                frob_to_truth: real(2)?,
                frob_to_empirical_pca: real(3)?,
                critic_loss: real(4)?,
                gen_loss: real(5)?,
            });
        }
        if records.windows(2).any(|w| w[1].gen_iter <= w[0].gen_iter) {
            return Err(Error::Parse("gen_iter must be strictly increasing".into()));
        }
        Ok(Self { records })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }
}

/// Critic dual objective and the gradient of `loss = −objective`.
#[derive(Debug, Clone)]
pub struct CriticObjective {
    /// `mean D(real) − mean D(fake) − λ · penalty`.
    pub objective: f64,
    /// `mean((‖∇D(x̂)‖ − 1)²)`, 0 when no penalty is requested.
    pub penalty: f64,
    /// One entry per critic parameter, in [`CriticNet::params`] order.
    pub loss_grads: Vec<Matrix>,
}

fn check_batches(net: &CriticNet, real: &Matrix, fake: &Matrix) -> Result<()> {
    if real.shape() != fake.shape() || real.cols() != net.input_dim() || real.rows() == 0 {
        return Err(Error::Dimension(format!(
            "batches {:?} and {:?} for a critic on R^{}",
            real.shape(),
            fake.shape(),
            net.input_dim()
        )));
    }
    Ok(())
}

/// `x̂_i = u_i y_i + (1 − u_i) ỹ_i`.
pub fn interpolate(real: &Matrix, fake: &Matrix, u: &[f64]) -> Result<Matrix> {
    if real.shape() != fake.shape() || u.len() != real.rows() {
        return Err(Error::Dimension("interpolation weights do not match batches".into()));
    }
    let mut out = fake.clone();
    for (i, &ui) in u.iter().enumerate() {
        let r = real.row(i);
        out.row_mut(i).iter_mut().zip(r).for_each(|(f, y)| *f = ui * y + (1.0 - ui) * *f);
    }
    Ok(out)
}

/// Objective and gradient for fixed interpolation weights `u` (ignored
/// when `lambda == 0`).
pub fn critic_objective_grad(
    net: &CriticNet,
    real: &Matrix,
    fake: &Matrix,
    lambda: f64,
    u: Option<&[f64]>,
) -> Result<CriticObjective> {
    check_batches(net, real, fake)?;
    let mut tape = Tape::new();
    let vars = net.record(&mut tape, true)?;
    let xr = tape.constant(real.clone())?;
    let xf = tape.constant(fake.clone())?;
    let dr = critic_forward(&mut tape, &vars, xr)?;
    let df = critic_forward(&mut tape, &vars, xf)?;
    let mr = tape.mean(dr)?;
    let mf = tape.mean(df)?;
    let mut obj = tape.sub(mr, mf)?;
    let mut pen_var = None;
    if lambda > 0.0 {
        let u = u.ok_or_else(|| Error::Config("gradient penalty needs interpolation weights".into()))?;
        let xh = tape.leaf(interpolate(real, fake, u)?)?;
        let dh = critic_forward(&mut tape, &vars, xh)?;
        let s = tape.sum(dh)?;
        let gx = tape.backward_graph(s, &[xh])?[0];
        let norms = tape.row_norms(gx, NORM_EPS)?;
        let t = tape.add_scalar(norms, -1.0)?;
        let t = tape.square(t)?;
        let pen = tape.mean(t)?;
        let scaled = tape.scale(pen, lambda)?;
        obj = tape.sub(obj, scaled)?;
        pen_var = Some(pen);
    }
    let loss = tape.neg(obj)?;
    tape.seal();
    let loss_grads = tape.gradients(loss, &vars.params())?;
    Ok(CriticObjective {
        objective: tape.scalar_value(obj),
        penalty: pen_var.map(|p| tape.scalar_value(p)).unwrap_or(0.0),
        loss_grads,
    })
}

fn apply(net: &mut CriticNet, opt: &mut OptimizerState, grads: &[Matrix], lr: f64) -> Result<()> {
    let mut params = net.params_mut();
    opt.step(&mut params, grads, lr)
}

/// RMSProp (or whatever `opt` holds) ascent step on the dual objective,
/// then clipping to `[−c, c]`. Returns the objective before the step.
pub fn critic_update_wc(
    net: &mut CriticNet,
    opt: &mut OptimizerState,
    real: &Matrix,
    fake: &Matrix,
    lr: f64,
    clip: f64,
) -> Result<f64> {
    let o = critic_objective_grad(net, real, fake, 0.0, None)?;
    apply(net, opt, &o.loss_grads, lr)?;
    clip_weights(&mut net.params_mut(), clip)?;
    Ok(o.objective)
}

/// Ascent step on the penalized objective with per-sample `u ~ U(0, 1)`
/// drawn from `rng`. Returns the objective before the step.
pub fn critic_update_gp(
    net: &mut CriticNet,
    opt: &mut OptimizerState,
    real: &Matrix,
    fake: &Matrix,
    lambda: f64,
    lr: f64,
    rng: &mut GaussianSource,
) -> Result<CriticObjective> {
    let u: Vec<f64> = (0..real.rows()).map(|_| rng.uniform()).collect();
    let o = critic_objective_grad(net, real, fake, lambda, Some(&u))?;
    apply(net, opt, &o.loss_grads, lr)?;
    Ok(o)
}

/// `−mean D(G x)` over a latent batch and its gradient with respect to `G`.
pub fn generator_loss_grad(gen: &LinearGenerator, critic: &CriticNet, latents: &Matrix) -> Result<(f64, Matrix)> {
    if latents.cols() != gen.latent_dim() || critic.input_dim() != gen.dim() {
        return Err(Error::Dimension(format!(
            "latents {:?}, generator {}x{}, critic on R^{}",
            latents.shape(),
            gen.dim(),
            gen.latent_dim(),
            critic.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let g = tape.leaf(gen.g.clone())?;
    let x = tape.constant(latents.clone())?;
    let vars = critic.record(&mut tape, false)?;
    let y = generator_forward_tape(&mut tape, g, x)?;
    let dv = critic_forward(&mut tape, &vars, y)?;
    let m = tape.mean(dv)?;
    let loss = tape.neg(m)?;
    tape.seal();
    let grad = tape.gradients(loss, &[g])?.pop().expect("one gradient");
    Ok((tape.scalar_value(loss), grad))
}

/// One optimizer step on `G` with the critic held fixed. Returns the loss
/// before the step.
pub fn generator_update(
    gen: &mut LinearGenerator,
    opt: &mut OptimizerState,
    critic: &CriticNet,
    latents: &Matrix,
    lr: f64,
) -> Result<f64> {
    let (loss, grad) = generator_loss_grad(gen, critic, latents)?;
    opt.step(&mut [&mut gen.g], &[grad], lr)?;
    Ok(loss)
}

/// Shuffled sequential minibatches over a fixed data set.
struct RealBatches<'a> {
    data: &'a SampleSet,
    order: Vec<usize>,
    cursor: usize,
    rng: GaussianSource,
}

impl<'a> RealBatches<'a> {
    fn new(data: &'a SampleSet, rng: GaussianSource) -> Self {
        let order: Vec<usize> = (0..data.n).collect();
        let cursor = order.len();
        Self { data, order, cursor, rng }
    }

    fn next(&mut self, batch: usize) -> Matrix {
        if self.cursor + batch > self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.cursor = 0;
        }
        let d = self.data.dim;
        let mut out = Vec::with_capacity(batch * d);
        for &i in &self.order[self.cursor..self.cursor + batch] {
            out.extend_from_slice(self.data.sample(i));
        }
        self.cursor += batch;
        Matrix::from_vec(batch, d, out).expect("finite data")
    }
}

fn latent_batch(g: &mut GaussianSource, n: usize, r: usize) -> Matrix {
    let mut m = Matrix::zeros(n, r);
    g.fill_normal(m.as_mut_slice());
    m
}

/// Why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub gen_iter: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: LinearGenerator,
    pub critic: CriticNet,
    pub log: RunLog,
    pub abort: Option<AbortInfo>,
}

impl TrainOutcome {
    pub fn aborted(&self) -> bool {
        self.abort.is_some()
    }
}

/// Initial generator: Glorot-uniform from the run's generator stream.
pub fn initial_generator(config: &TrainConfig) -> LinearGenerator {
    LinearGenerator::glorot(config.d, config.r, &RngStream::new(config.seed, TRAIN_STREAM).derive(1))
}

pub fn initial_critic(config: &TrainConfig) -> Result<CriticNet> {
    glorot_init(&config.layer_sizes(), &RngStream::new(config.seed, TRAIN_STREAM).derive(0))
}

pub fn train(config: &TrainConfig, cov: &CovarianceModel, data: &SampleSet) -> Result<TrainOutcome> {
    config.validate()?;
    if data.dim != config.d || data.n != config.n || cov.d != config.d {
        return Err(Error::Config(format!(
            "config d={} n={} does not match data {}x{} / covariance d={}",
            config.d, config.n, data.n, data.dim, cov.d
        )));
    }
    let start = Instant::now();
    let base = RngStream::new(config.seed, TRAIN_STREAM);
    let mut critic = initial_critic(config)?;
    let mut gen = initial_generator(config);
    let mut batches = RealBatches::new(data, base.derive(2).open());
    let mut latents = base.derive(3).open();
    let mut interp = base.derive(4).open();
    let schedule = config.schedule()?;
    let shapes: Vec<_> = critic.params().iter().map(|m| m.shape()).collect();
    let mut critic_opt = config.optimizer(&shapes)?;
    let mut gen_opt = config.optimizer(&[(config.d, config.r)])?;
    let emp_gram = empirical_pca(data, config.r)?.generator_gram;

    let record = |gen: &LinearGenerator, gen_iter: u64, critic_loss: f64, gen_loss: f64| -> Result<LogRecord> {
        let gram = gen.gram();
        Ok(LogRecord {
            gen_iter,
            wall_seconds: if config.log_wall_time { start.elapsed().as_secs_f64() } else { 0.0 },
            frob_to_truth: frobenius_distance(&cov.k_y, &gram)?,
            frob_to_empirical_pca: frobenius_distance(&emp_gram, &gram)?,
            critic_loss,
            gen_loss,
        })
    };

    // Initial losses on a batch from a separate stream, so evaluation does
    // not shift the training streams.
    let mut log = RunLog::default();
    {
        let mut eval = base.derive(5).open();
        let mut eval_batches = RealBatches::new(data, base.derive(6).open());
        let real = eval_batches.next(config.batch);
        let fake = generator_forward(&gen, &latent_batch(&mut eval, config.batch, config.r))?;
        let o = critic_objective_grad(&critic, &real, &fake, 0.0, None)?;
        let (gl, _) = generator_loss_grad(&gen, &critic, &latent_batch(&mut eval, config.batch, config.r))?;
        log.records.push(record(&gen, 0, -o.objective, gl)?);
    }

    let mut abort = None;
    for it in 0..config.max_gen_iters as u64 {
        let decay = lr_at(&schedule, it) / config.lr;
        let critic_lr = config.critic_lr.unwrap_or(config.lr);
        let lr_c = if config.decay_critic { critic_lr * decay } else { critic_lr };
        let lr_g = if config.decay_generator { config.lr * decay } else { config.lr };
        let mut critic_loss = 0.0;
        for _ in 0..config.critic_steps_per_gen {
            let real = batches.next(config.batch);
            let fake = generator_forward(&gen, &latent_batch(&mut latents, config.batch, config.r))?;
            let objective = match config.algorithm {
                Algorithm::Wc => critic_update_wc(&mut critic, &mut critic_opt, &real, &fake, lr_c, config.clip)?,
                Algorithm::Gp => {
                    critic_update_gp(&mut critic, &mut critic_opt, &real, &fake, config.lambda, lr_c, &mut interp)?
                        .objective
                }
            };
            critic_loss = -objective;
            if !critic_loss.is_finite() || !critic.is_finite() {
                break;
            }
        }
        let gen_iter = it + 1;
        let mut gen_loss = f64::NAN;
        if critic_loss.is_finite() && critic.is_finite() {
            let x = latent_batch(&mut latents, config.batch, config.r);
            gen_loss = generator_update(&mut gen, &mut gen_opt, &critic, &x, lr_g)?;
        }
        if !gen_loss.is_finite() || !critic_loss.is_finite() || !gen.g.is_finite() || !critic.is_finite() {
            log.records.push(record(&gen, gen_iter, critic_loss, gen_loss)?);
            abort = Some(AbortInfo {
                gen_iter,
                reason: format!("non-finite loss or parameters (critic_loss={critic_loss}, gen_loss={gen_loss})"),
            });
            break;
        }
        if gen_iter % config.log_every as u64 == 0 || gen_iter == config.max_gen_iters as u64 {
            log.records.push(record(&gen, gen_iter, critic_loss, gen_loss)?);
        }
    }
    Ok(TrainOutcome { generator: gen, critic, log, abort })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use crate::gaussian::{generate_covariance, sample_gaussian};

    fn batch(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        RngStream::new(seed, 99).open().fill_normal(m.as_mut_slice());
        m
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.layer_sizes(), vec![16, 64, 64, 64, 1]);
        assert_eq!(c.epoch_size_iters(), 250);
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            matches!(c.validate(), Err(Error::Config(_)))
        };
        assert!(bad(|c| c.batch = c.n + 1));
        assert!(bad(|c| c.clip = 0.0));
        assert!(bad(|c| c.lambda = -1.0));
        assert!(bad(|c| c.critic_steps_per_gen = 0));
        assert!(bad(|c| c.r = 17));
        assert!(bad(|c| c.lr = 0.0));
        assert!(bad(|c| c.adam_beta1 = 1.0));
    }

    #[test]
    fn config_json_uses_defaults_and_rejects_unknown_fields() {
        let c: TrainConfig = serde_json::from_str(r#"{"algorithm":"wc","n":1000}"#).unwrap();
        assert_eq!(c.algorithm, Algorithm::Wc);
        assert_eq!(c.batch, 200);
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn runlog_csv_round_trip() {
        let empty = RunLog::default();
        assert_eq!(empty.to_csv(), format!("{RUNLOG_HEADER}\n"));
        assert_eq!(RunLog::from_csv(&empty.to_csv()).unwrap(), empty);
        let log = RunLog {
            records: (0..3)
                .map(|i| LogRecord {
                    gen_iter: i * 10,
                    wall_seconds: 0.1 * i as f64,
                    frob_to_truth: std::f64::consts::PI / (i + 1) as f64,
                    frob_to_empirical_pca: 1.0 / 3.0,
                    critic_loss: -1e-300,
                    gen_loss: 123456.789012345678,
                })
                .collect(),
        };
        let back = RunLog::from_csv(&log.to_csv()).unwrap();
        for (a, b) in log.records.iter().zip(&back.records) {
            assert_eq!(a.frob_to_truth.to_bits(), b.frob_to_truth.to_bits());
            assert_eq!(a.gen_loss.to_bits(), b.gen_loss.to_bits());
        }
        assert_eq!(back, log);
        assert!(RunLog::from_csv("a,b\n").is_err());
        assert!(RunLog::from_csv(&format!("{RUNLOG_HEADER}\n1,2,3\n")).is_err());
        assert!(RunLog::from_csv(&format!("{RUNLOG_HEADER}\n2,0,0,0,0,0\n1,0,0,0,0,0\n")).is_err());
    }

    #[test]
    fn zero_critic_has_zero_loss_and_moves() {
        let mut net = CriticNet::zeros(&[3, 4, 1]).unwrap();
        let mut opt = OptimizerState::rmsprop(0.9, &net.params().iter().map(|m| m.shape()).collect::<Vec<_>>()).unwrap();
        let (real, fake) = (batch(6, 3, 1), batch(6, 3, 2));
        let obj = critic_update_wc(&mut net, &mut opt, &real, &fake, 1e-3, 0.01).unwrap();
        assert_eq!(obj, 0.0);
        // A constant critic has zero gradient everywhere.
        assert!(net.params().iter().all(|m| m.max_abs() == 0.0));

        // Active hidden units and a nonzero output layer give the input
        // layer a gradient.
        net.biases[0] = Matrix::filled(1, 4, 0.005);
        net.weights[1] = Matrix::filled(4, 1, 0.005);
        let before = net.clone();
        critic_update_wc(&mut net, &mut opt, &real, &fake, 1e-3, 0.01).unwrap();
        assert_ne!(net, before);
    }

    #[test]
    fn wc_weights_stay_clipped() {
        let mut net = glorot_init(&[3, 8, 8, 1], &RngStream::new(3, 0)).unwrap();
        let mut opt = OptimizerState::rmsprop(0.9, &net.params().iter().map(|m| m.shape()).collect::<Vec<_>>()).unwrap();
        for s in 0..5 {
            critic_update_wc(&mut net, &mut opt, &batch(10, 3, s), &batch(10, 3, s + 100), 1e-2, 0.01).unwrap();
            assert!(net.params().iter().all(|m| m.max_abs() <= 0.01));
        }
    }

    #[test]
    fn wc_ascent_on_fixed_batches() {
        let mut net = glorot_init(&[4, 16, 16, 1], &RngStream::new(4, 0)).unwrap();
        clip_weights(&mut net.params_mut(), 0.01).unwrap();
        let mut opt = OptimizerState::rmsprop(0.9, &net.params().iter().map(|m| m.shape()).collect::<Vec<_>>()).unwrap();
        let real = batch(50, 4, 5).scale(2.0);
        let fake = batch(50, 4, 6);
        let eval = |n: &CriticNet| critic_objective_grad(n, &real, &fake, 0.0, None).unwrap().objective;
        let mut prev = eval(&net);
        let mut up = 0;
        for _ in 0..50 {
            critic_update_wc(&mut net, &mut opt, &real, &fake, 1e-4, 0.01).unwrap();
            let now = eval(&net);
            up += (now >= prev) as usize;
            prev = now;
        }
        assert!(up >= 45, "{up} of 50 steps increased the objective");
    }

    #[test]
    fn gp_without_penalty_matches_dual_gradient() {
        let net = glorot_init(&[3, 8, 1], &RngStream::new(7, 0)).unwrap();
        let (real, fake) = (batch(12, 3, 7), batch(12, 3, 8));
        let a = critic_objective_grad(&net, &real, &fake, 0.0, None).unwrap();
        let u = vec![0.5; 12];
        let b = critic_objective_grad(&net, &real, &fake, 0.0, Some(&u)).unwrap();
        for (x, y) in a.loss_grads.iter().zip(&b.loss_grads) {
            assert!(x.sub(y).max_abs() <= 1e-10);
        }
        // And the λ=0 GP loop step equals an unclipped Adam-driven WC step.
        let shapes: Vec<_> = net.params().iter().map(|m| m.shape()).collect();
        let (mut n1, mut n2) = (net.clone(), net.clone());
        let mut o1 = OptimizerState::adam(0.5, 0.9, &shapes).unwrap();
        let mut o2 = OptimizerState::adam(0.5, 0.9, &shapes).unwrap();
        critic_update_gp(&mut n1, &mut o1, &real, &fake, 0.0, 1e-3, &mut RngStream::new(0, 0).open()).unwrap();
        critic_update_wc(&mut n2, &mut o2, &real, &fake, 1e-3, 1e9).unwrap();
        assert_eq!(n1, n2);
    }

    #[test]
    fn linear_critic_penalty_closed_form() {
        let mut net = CriticNet::zeros(&[3, 1]).unwrap();
        net.weights[0] = Matrix::column_vector(&[0.3, -1.2, 0.4]);
        let w = net.weights[0].clone();
        let norm = w.frobenius_norm();
        let y = batch(7, 3, 9);
        let u: Vec<f64> = (0..7).map(|i| i as f64 / 7.0).collect();
        let lambda = 0.1;
        let o = critic_objective_grad(&net, &y, &y, lambda, Some(&u)).unwrap();
        assert!((o.penalty - (norm - 1.0).powi(2)).abs() < 1e-12);
        let expected = w.scale(lambda * 2.0 * (norm - 1.0) / norm);
        assert!(o.loss_grads[0].sub(&expected).max_abs() < 1e-12);
        assert!(o.loss_grads[1].max_abs() < 1e-15);
    }

    #[test]
    fn gp_objective_gradient_matches_finite_differences() {
        let net = glorot_init(&[3, 6, 1], &RngStream::new(10, 0)).unwrap();
        let (real, fake) = (batch(8, 3, 10), batch(8, 3, 11));
        let u: Vec<f64> = (0..8).map(|i| (i as f64 + 0.5) / 8.0).collect();
        let rebuild = |p: &[Matrix]| {
            let mut n = net.clone();
            for (dst, src) in n.params_mut().into_iter().zip(p) {
                *dst = src.clone();
            }
            n
        };
        let params: Vec<Matrix> = net.params().into_iter().cloned().collect();
        let rep = gradcheck(
            |p| Ok(-critic_objective_grad(&rebuild(p), &real, &fake, 0.1, Some(&u))?.objective),
            |p| Ok(critic_objective_grad(&rebuild(p), &real, &fake, 0.1, Some(&u))?.loss_grads),
            &params,
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn penalty_is_nonnegative() {
        for s in 0..10 {
            let net = glorot_init(&[2, 5, 1], &RngStream::new(s, 0)).unwrap();
            let u = vec![0.3; 4];
            let o = critic_objective_grad(&net, &batch(4, 2, s), &batch(4, 2, s + 50), 0.1, Some(&u)).unwrap();
            assert!(o.penalty >= 0.0);
        }
    }

    #[test]
    fn generator_gradient_examples() {
        let mut lin = CriticNet::zeros(&[3, 1]).unwrap();
        lin.weights[0] = Matrix::column_vector(&[1.0, 0.0, 0.0]);
        let gen = LinearGenerator::glorot(3, 2, &RngStream::new(12, 0));
        let x = batch(5, 2, 12);
        let (_, grad) = generator_loss_grad(&gen, &lin, &x).unwrap();
        // −mean_i e₁ x_iᵀ.
        let mut expected = Matrix::zeros(3, 2);
        for i in 0..5 {
            for j in 0..2 {
                expected[(0, j)] -= x[(i, j)] / 5.0;
            }
        }
        assert!(grad.sub(&expected).max_abs() < 1e-15);

        let zero = CriticNet::zeros(&[3, 4, 1]).unwrap();
        let mut g2 = gen.clone();
        let mut opt = OptimizerState::adam(0.5, 0.9, &[(3, 2)]).unwrap();
        generator_update(&mut g2, &mut opt, &zero, &x, 1e-3).unwrap();
        assert_eq!(g2, gen);
    }

    #[test]
    fn generator_gradient_matches_finite_differences() {
        let critic = glorot_init(&[4, 8, 8, 1], &RngStream::new(13, 0)).unwrap();
        let gen = LinearGenerator::glorot(4, 2, &RngStream::new(13, 1));
        let x = batch(6, 2, 13);
        let rep = gradcheck(
            |p| Ok(generator_loss_grad(&LinearGenerator::new(p[0].clone())?, &critic, &x)?.0),
            |p| Ok(vec![generator_loss_grad(&LinearGenerator::new(p[0].clone())?, &critic, &x)?.1]),
            &[gen.g.clone()],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    fn tiny_config(algorithm: Algorithm, seed: u64) -> TrainConfig {
        TrainConfig {
            d: 4,
            r: 2,
            n: 400,
            batch: 40,
            algorithm,
            critic_hidden: vec![8],
            max_gen_iters: 25,
            log_every: 5,
            log_wall_time: false,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn train_logs_and_is_deterministic() {
        let cov = generate_covariance(4, &RngStream::new(20, 0)).unwrap();
        let data = sample_gaussian(&cov, 400, &RngStream::new(20, 1)).unwrap();
        for alg in [Algorithm::Gp, Algorithm::Wc] {
            let cfg = tiny_config(alg, 3);
            let a = train(&cfg, &cov, &data).unwrap();
            let b = train(&cfg, &cov, &data).unwrap();
            assert!(!a.aborted());
            assert_eq!(a.log.to_csv(), b.log.to_csv());
            let iters: Vec<u64> = a.log.records.iter().map(|r| r.gen_iter).collect();
            assert_eq!(iters, vec![0, 5, 10, 15, 20, 25]);
            let last = a.log.last().unwrap();
            let recomputed = frobenius_distance(&cov.k_y, &a.generator.gram()).unwrap();
            assert_eq!(last.frob_to_truth, recomputed);
            if alg == Algorithm::Wc {
                assert!(a.critic.params().iter().all(|m| m.max_abs() <= cfg.clip));
            }
        }
    }

    #[test]
    fn train_rejects_mismatched_data() {
        let cov = generate_covariance(4, &RngStream::new(21, 0)).unwrap();
        let data = sample_gaussian(&cov, 300, &RngStream::new(21, 1)).unwrap();
        assert!(matches!(train(&tiny_config(Algorithm::Gp, 0), &cov, &data), Err(Error::Config(_))));
    }

    #[test]
    fn divergent_run_aborts_with_record() {
        let cov = generate_covariance(4, &RngStream::new(22, 0)).unwrap();
        let data = sample_gaussian(&cov, 400, &RngStream::new(22, 1)).unwrap();
        let cfg = TrainConfig { lr: 1e300, lr_decay: 1e10, ..tiny_config(Algorithm::Wc, 1) };
        let out = train(&cfg, &cov, &data).unwrap();
        assert!(out.aborted(), "{:?}", out.log.last());
        let info = out.abort.unwrap();
        assert_eq!(out.log.last().unwrap().gen_iter, info.gen_iter);
    }
}
