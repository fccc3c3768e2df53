use rand::seq::SliceRandom;

use super::margin::{MarginPolicy, MarginState, PolicyParams};
use super::model::{disc_loss, gen_loss, Discriminator, GanArch, GanModel};
use super::{margin_policy_registry, GanError};
use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::metrics::{self, ModeHistogram};
use crate::rng::{Rng, Stream};
use crate::tensor::{Graph, Tensor};

/// One completed epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Margin in force during the epoch.
    pub margin: f64,
    /// `S_data / N_eff`.
    pub e_real: f64,
    /// `S_G / N_eff`.
    pub e_fake: f64,
    /// Whether the margin changed at the end of this epoch.
    pub margin_updated: bool,
    /// Per-batch sums of real energies, in batch order.
    pub batch_real_sums: Vec<f64>,
    /// Per-batch sums of synthetic energies, in batch order.
    pub batch_fake_sums: Vec<f64>,
    pub coverage: Option<ModeHistogram>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<EpochRecord>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn margins(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.margin).collect()
    }

    pub fn e_real(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.e_real).collect()
    }

    pub fn e_fake(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.e_fake).collect()
    }
}

fn check_finite(value: f64, phase: &'static str, epoch: usize, batch: usize) -> Result<(), GanError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(GanError::NonFinite {
            phase,
            epoch,
            batch,
            value,
        })
    }
}

fn shuffled_batches(n: usize, b: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks_exact(b).map(<[usize]>::to_vec).collect()
}

fn mean_energy(model: &GanModel, data: &Dataset) -> Result<f64, GanError> {
    let e = model.energy(&data.to_tensor()?)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

/// Discriminator-only auto-encoder fitting with `m = 0`, then one full pass
/// to measure the mean real energy, which is returned as `m_1`.
pub fn pretrain(
    model: &mut GanModel,
    data: &Dataset,
    epochs: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64, GanError> {
    if data.is_empty() {
        return Err(GanError::Data(crate::data::DataError::Empty));
    }
    for epoch in 1..=epochs {
        for (batch, idx) in shuffled_batches(data.len(), batch_size, rng).iter().enumerate() {
            let x = data.batch(idx)?;
            let mut g = Graph::new();
            let disc = Discriminator::bind(model, &mut g, true);
            let xv = g.constant(&x);
            let e = disc.energy(&mut g, xv)?;
            let loss = g.mean(e, None)?;
            check_finite(g.scalar(loss), "pre-training", epoch, batch)?;
            g.backward(loss)?;
            let grads = disc.grads(&g);
            let mut params = model.encoder.params_mut();
            params.extend(model.decoder.params_mut());
            model.disc_opt.step(&mut params, &grads)?;
        }
    }
    mean_energy(model, data)
}

/// Discriminator step on a fixed fake batch. Returns the per-sample real
/// energies from the forward pass.
fn disc_step(
    model: &mut GanModel,
    x: &Tensor,
    fake: &Tensor,
    margin: f64,
    epoch: usize,
    batch: usize,
) -> Result<Vec<f64>, GanError> {
    let mut g = Graph::new();
    let disc = Discriminator::bind(model, &mut g, true);
    let xv = g.constant(x);
    let fv = g.constant(fake);
    let e_real = disc.energy(&mut g, xv)?;
    let e_fake = disc.energy(&mut g, fv)?;
    let loss = disc_loss(&mut g, e_real, e_fake, margin)?;
    check_finite(g.scalar(loss), "discriminator", epoch, batch)?;
    g.backward(loss)?;
    let grads = disc.grads(&g);
    let mut params = model.encoder.params_mut();
    params.extend(model.decoder.params_mut());
    model.disc_opt.step(&mut params, &grads)?;
    Ok(g.value(e_real).to_vec())
}

/// Generator step with the discriminator frozen. Returns the per-sample
/// synthetic energies from the forward pass.
fn gen_step(model: &mut GanModel, z: &Tensor, epoch: usize, batch: usize) -> Result<Vec<f64>, GanError> {
    let mut g = Graph::new();
    let gen = model.generator.bind(&mut g, true);
    let disc = Discriminator::bind(model, &mut g, false);
    let zv = g.constant(z);
    let fake = gen.forward(&mut g, zv)?;
    let e_fake = disc.energy(&mut g, fake)?;
    let loss = gen_loss(&mut g, e_fake)?;
    check_finite(g.scalar(loss), "generator", epoch, batch)?;
    g.backward(loss)?;
    let grads = gen.grads(&g);
    model.gen_opt.step(&mut model.generator.params_mut(), &grads)?;
    Ok(g.value(e_fake).to_vec())
}

/// One pass of `floor(N / b)` alternating discriminator and generator steps,
/// followed by the policy's epoch-boundary margin check.
pub fn train_epoch(
    model: &mut GanModel,
    state: &mut MarginState,
    policy: &dyn MarginPolicy,
    data: &Dataset,
    batch_size: usize,
    epoch: usize,
    rng: &mut Rng,
) -> Result<EpochRecord, GanError> {
    let nz = model.latent_dim();
    let margin = state.margin;
    let batches = shuffled_batches(data.len(), batch_size, rng);
    let mut batch_real_sums = Vec::with_capacity(batches.len());
    let mut batch_fake_sums = Vec::with_capacity(batches.len());
    for (batch, idx) in batches.iter().enumerate() {
        let x = data.batch(idx)?;
        let b = idx.len();

        let z = Tensor::matrix(b, nz, rng.normals(b * nz))?;
        let fake = model.generate(&z)?;
        let real_sum: f64 = disc_step(model, &x, &fake, margin, epoch, batch)?.iter().sum();

        let z = Tensor::matrix(b, nz, rng.normals(b * nz))?;
        let fake_sum: f64 = gen_step(model, &z, epoch, batch)?.iter().sum();

        state.accumulate(real_sum, fake_sum, b);
        batch_real_sums.push(real_sum);
        batch_fake_sums.push(fake_sum);
    }
    let n_eff = state.samples_seen;
    let (e_real, e_fake) = if n_eff > 0 {
        (state.s_data / n_eff as f64, state.s_g / n_eff as f64)
    } else {
        (0.0, 0.0)
    };
    let margin_updated = policy.end_epoch(state, n_eff)?;
    Ok(EpochRecord {
        epoch,
        margin,
        e_real,
        e_fake,
        margin_updated,
        batch_real_sums,
        batch_fake_sums,
        coverage: None,
    })
}

/// A training run in progress. Owns the model, margin state, data, and rng
/// streams.
#[derive(Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: GanModel,
    pub state: MarginState,
    pub data: Dataset,
    policy: Box<dyn MarginPolicy>,
    rng: Rng,
    eval_rng: Rng,
    initial_margin: Option<f64>,
    epochs_done: usize,
}

impl Trainer {
    /// Validates the config and initializes the model. No training happens
    /// until [`Trainer::start`].
    pub fn new(config: TrainConfig, data: Dataset) -> Result<Self, GanError> {
        config.validate()?;
        if config.batch_size > data.len() {
            return Err(GanError::Architecture(format!(
                "batch size {} exceeds the {} available samples",
                config.batch_size,
                data.len()
            )));
        }
        let policy = margin_policy_registry().create(
            &config.mode,
            &PolicyParams {
                margin: config.margin,
            },
        )?;
        let arch = GanArch {
            data_dim: data.dim(),
            latent_dim: config.latent_dim,
            hidden: config.hidden,
            code_dim: config.code_dim,
            disc_activation: config.disc_activation,
            gen_activation: config.gen_activation,
            output_activation: config.output_activation,
        };
        let model = GanModel::new(&arch, config.adamax(), &mut Rng::for_stream(config.seed, Stream::Init))?;
        Ok(Trainer {
            rng: Rng::for_stream(config.seed, Stream::Train),
            eval_rng: Rng::for_stream(config.seed, Stream::Eval),
            config,
            model,
            state: MarginState::new(0.0),
            data,
            policy,
            initial_margin: None,
            epochs_done: 0,
        })
    }

    pub fn policy(&self) -> &dyn MarginPolicy {
        self.policy.as_ref()
    }

    /// `m_1`, once [`Trainer::start`] has run.
    pub fn initial_margin(&self) -> Option<f64> {
        self.initial_margin
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// Pre-trains when the policy asks for it and sets the first margin.
    pub fn start(&mut self) -> Result<f64, GanError> {
        let energy = if self.policy.needs_pretraining() {
            Some(pretrain(
                &mut self.model,
                &self.data,
                self.config.pretrain_epochs,
                self.config.batch_size,
                &mut self.rng,
            )?)
        } else {
            None
        };
        let m1 = self.policy.initial_margin(energy)?;
        self.state = MarginState::new(m1);
        self.initial_margin = Some(m1);
        Ok(m1)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord, GanError> {
        if self.initial_margin.is_none() {
            self.start()?;
        }
        let epoch = self.epochs_done + 1;
        let mut record = train_epoch(
            &mut self.model,
            &mut self.state,
            self.policy.as_ref(),
            &self.data,
            self.config.batch_size,
            epoch,
            &mut self.rng,
        )?;
        self.epochs_done = epoch;
        let every = self.config.eval_every;
        if every > 0 && epoch % every == 0 {
            record.coverage = self.coverage()?;
        }
        Ok(record)
    }

    pub fn run_epochs(&mut self, epochs: usize) -> Result<RunTrace, GanError> {
        let mut trace = RunTrace::default();
        for _ in 0..epochs {
            trace.records.push(self.run_epoch()?);
        }
        Ok(trace)
    }

    /// Mode coverage of `eval_samples` fresh generator samples, for
    /// mixture datasets.
    pub fn coverage(&mut self) -> Result<Option<ModeHistogram>, GanError> {
        let (Some(centers), Some(sigma)) = (&self.data.centers, self.data.sigma) else {
            return Ok(None);
        };
        let samples = self.model.sample(self.config.eval_samples, &mut self.eval_rng)?;
        Ok(metrics::mode_coverage(
            &samples,
            centers,
            sigma,
            metrics::DEFAULT_RADIUS_MULTIPLE,
            metrics::DEFAULT_MIN_FRACTION,
        )
        .ok())
    }

    pub fn sample(&mut self, n: usize) -> Result<Tensor, GanError> {
        Ok(self.model.sample(n, &mut self.eval_rng)?)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub trace: RunTrace,
    /// `m_1`: the pre-trained energy or the fixed margin.
    pub initial_margin: f64,
    pub trainer: Trainer,
}

/// Full run: start, then `t_max` epochs.
pub fn train(config: TrainConfig, data: Dataset) -> Result<TrainOutcome, GanError> {
    let mut trainer = Trainer::new(config, data)?;
    let initial_margin = trainer.start()?;
    let trace = trainer.run_epochs(trainer.config.t_max)?;
    Ok(TrainOutcome {
        trace,
        initial_margin,
        trainer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_dataset;
    use crate::nn::AdamaxConfig;

    fn small_config(mode: &str, margin: Option<f64>) -> TrainConfig {
        TrainConfig {
            n: 256,
            batch_size: 32,
            t_max: 3,
            mode: mode.into(),
            margin,
            hidden: 8,
            ..TrainConfig::default()
        }
    }

    fn ring(n: usize) -> Dataset {
        make_dataset("ring8", n, 0.1, 0).unwrap()
    }

    #[test]
    fn pretraining_fits_a_constant() {
        let data = Dataset::new("point", 2, [0.7, -1.3].repeat(128)).unwrap();
        let arch = GanArch {
            data_dim: 2,
            latent_dim: 2,
            hidden: 8,
            code_dim: 1,
            disc_activation: crate::nn::Activation::LeakyRelu(0.2),
            gen_activation: crate::nn::Activation::Relu,
            output_activation: crate::nn::Activation::Identity,
        };
        let mut rng = Rng::new(4);
        let mut model = GanModel::new(&arch, AdamaxConfig::default(), &mut rng).unwrap();
        let before = mean_energy(&model, &data).unwrap();
        let untouched = pretrain(&mut model.clone(), &data, 0, 32, &mut rng.clone()).unwrap();
        assert_eq!(untouched, before);
        let after = pretrain(&mut model, &data, 2, 32, &mut rng).unwrap();
        assert!(after < before, "{after} >= {before}");
        assert!(after >= 0.0);
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let a = train(small_config("magan", None), ring(256)).unwrap();
        let b = train(small_config("magan", None), ring(256)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trainer.model.param_bits(), b.trainer.model.param_bits());
    }

    #[test]
    fn fixed_margin_is_constant() {
        let out = train(small_config("ebgan", Some(10.0)), ring(256)).unwrap();
        assert!(out.trace.margins().iter().all(|&m| m == 10.0));
        assert!(out.trace.records.iter().all(|r| !r.margin_updated));
    }

    #[test]
    fn generator_step_draws_fresh_latents() {
        let cfg = small_config("ebgan", Some(1.0));
        let mut t = Trainer::new(cfg.clone(), ring(256)).unwrap();
        t.start().unwrap();
        let mut rng = Rng::new(0);
        let mut state = MarginState::new(1.0);
        let one_batch = Dataset::new("x", 2, ring(32).flat().to_vec()).unwrap();
        let policy = crate::gan::FixedMargin { margin: 1.0 };
        train_epoch(&mut t.model, &mut state, &policy, &one_batch, 32, 1, &mut rng).unwrap();
        assert_eq!(rng.normals_drawn(), 2 * 32 * cfg.latent_dim as u64);
    }

    #[test]
    fn accumulators_match_logged_batches() {
        let cfg = small_config("ebgan", Some(1.0));
        let mut t = Trainer::new(cfg, ring(256)).unwrap();
        t.start().unwrap();
        let mut state = t.state.clone();
        let policy = margin_policy_registry()
            .create("ebgan", &PolicyParams { margin: Some(1.0) })
            .unwrap();
        let mut rng = Rng::new(1);
        let mut model = t.model.clone();
        let rec = train_epoch(&mut model, &mut state, policy.as_ref(), &t.data, 32, 1, &mut rng).unwrap();
        // end_epoch rolled the accumulators into prev_s_g.
        let logged: f64 = rec.batch_fake_sums.iter().sum();
        assert_eq!(state.prev_s_g, logged);
        assert_eq!(rec.e_real, rec.batch_real_sums.iter().sum::<f64>() / 256.0);
        assert_eq!(rec.batch_real_sums.len(), 8);
    }

    #[test]
    fn discriminator_frozen_during_generator_step() {
        let t = Trainer::new(small_config("magan", None), ring(64)).unwrap();
        let mut g = Graph::new();
        let gen = t.model.generator.bind(&mut g, true);
        let disc = Discriminator::bind(&t.model, &mut g, false);
        let z = g.constant(&Tensor::matrix(4, 2, Rng::new(0).normals(8)).unwrap());
        let fake = gen.forward(&mut g, z).unwrap();
        let e = disc.energy(&mut g, fake).unwrap();
        let loss = gen_loss(&mut g, e).unwrap();
        g.backward(loss).unwrap();
        assert!(disc.grads(&g).iter().flatten().all(|&v| v == 0.0));
        assert!(gen.grads(&g).iter().flatten().any(|&v| v != 0.0));
    }

    #[test]
    fn zero_epochs_leave_pretrained_model() {
        let mut t = Trainer::new(small_config("magan", None), ring(256)).unwrap();
        t.start().unwrap();
        let bits = t.model.param_bits();
        let trace = t.run_epochs(0).unwrap();
        assert!(trace.is_empty());
        assert_eq!(t.model.param_bits(), bits);
    }

    #[test]
    fn adaptive_margin_never_increases() {
        let cfg = TrainConfig {
            t_max: 8,
            ..small_config("magan", None)
        };
        let out = train(cfg, ring(256)).unwrap();
        let ms = out.trace.margins();
        assert!(ms[0] == out.initial_margin);
        assert!(ms.windows(2).all(|w| w[1] <= w[0]));
        for r in &out.trace.records {
            assert!(r.e_real.is_finite() && r.e_real >= 0.0);
            assert!(r.e_fake.is_finite() && r.e_fake >= 0.0);
        }
    }

    #[test]
    fn non_finite_data_loss_aborts_with_location() {
        let mut t = Trainer::new(small_config("ebgan", Some(1.0)), ring(256)).unwrap();
        t.start().unwrap();
        t.model.encoder.params_mut()[0].data_mut()[0] = f64::INFINITY;
        match t.run_epoch() {
            Err(GanError::NonFinite { epoch: 1, batch: 0, .. }) => {}
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }
}
