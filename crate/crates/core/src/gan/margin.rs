//! Hinge-margin control.
//!
//! [`MarginState`] carries the per-epoch energy accumulators. A
//! [`MarginPolicy`] decides, at each epoch boundary, whether and how the
//! margin moves. Two policies are registered:
//!
//! * `magan` seeds the margin from the pre-trained real-data energy and lowers
//!   it to the epoch's mean real energy whenever
//!   `E_data < m`, `E_data < E_G` and `E_G(prev) <= E_G` all hold.
//! * `ebgan` keeps a fixed, user-supplied margin.

use std::fmt;

use super::GanError;
use crate::registry::Registry;

#[derive(Clone, Debug, PartialEq)]
pub struct MarginState {
    /// Margin in force for the current epoch.
    pub margin: f64,
    /// Sum of real-sample energies this epoch.
    pub s_data: f64,
    /// Sum of synthetic-sample energies this epoch.
    pub s_g: f64,
    /// `s_g` of the previous epoch; `+inf` before the first epoch ends.
    pub prev_s_g: f64,
    pub samples_seen: usize,
}

impl MarginState {
    pub fn new(margin: f64) -> Self {
        MarginState {
            margin,
            s_data: 0.0,
            s_g: 0.0,
            prev_s_g: f64::INFINITY,
            samples_seen: 0,
        }
    }

    /// Adds one batch's energy sums.
    pub fn accumulate(&mut self, real_sum: f64, fake_sum: f64, count: usize) {
        self.s_data += real_sum;
        self.s_g += fake_sum;
        self.samples_seen += count;
    }

    /// The three margin-update conditions, evaluated on the finished epoch.
    /// Sums are compared directly; both share the divisor `n_eff`.
    pub fn should_update(&self, n_eff: usize) -> Result<bool, GanError> {
        if n_eff == 0 {
            return Err(GanError::EmptyEpoch);
        }
        let mean_real = self.s_data / n_eff as f64;
        Ok(mean_real < self.margin && self.s_data < self.s_g && self.prev_s_g <= self.s_g)
    }

    /// Sets the margin to the epoch's mean real energy and rolls the epoch.
    pub fn apply_update(&mut self, n_eff: usize) -> Result<(), GanError> {
        if !self.should_update(n_eff)? {
            return Err(GanError::MarginPrecondition {
                margin: self.margin,
                mean_real: self.s_data / n_eff as f64,
            });
        }
        self.margin = self.s_data / n_eff as f64;
        self.roll_epoch();
        Ok(())
    }

    /// `prev_s_g <- s_g`, then zero the accumulators.
    pub fn roll_epoch(&mut self) {
        self.prev_s_g = self.s_g;
        self.s_data = 0.0;
        self.s_g = 0.0;
        self.samples_seen = 0;
    }
}

/// Strategy for setting and moving the hinge margin.
pub trait MarginPolicy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether training starts with auto-encoder pre-training.
    fn needs_pretraining(&self) -> bool;

    /// Whether the margin can change after initialization.
    fn adapts_margin(&self) -> bool;

    /// Margin for the first epoch. `pretrained_energy` is the mean real
    /// energy after pre-training, present iff [`Self::needs_pretraining`].
    fn initial_margin(&self, pretrained_energy: Option<f64>) -> Result<f64, GanError>;

    /// Epoch-boundary hook; returns whether the margin was updated. Always
    /// leaves the accumulators rolled for the next epoch.
    fn end_epoch(&self, state: &mut MarginState, n_eff: usize) -> Result<bool, GanError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AdaptiveMargin;

impl MarginPolicy for AdaptiveMargin {
    fn name(&self) -> &'static str {
        "magan"
    }

    fn needs_pretraining(&self) -> bool {
        true
    }

    fn adapts_margin(&self) -> bool {
        true
    }

    fn initial_margin(&self, pretrained_energy: Option<f64>) -> Result<f64, GanError> {
        pretrained_energy.ok_or(GanError::MissingPretraining)
    }

    fn end_epoch(&self, state: &mut MarginState, n_eff: usize) -> Result<bool, GanError> {
        if state.should_update(n_eff)? {
            state.apply_update(n_eff)?;
            Ok(true)
        } else {
            state.roll_epoch();
            Ok(false)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedMargin {
    pub margin: f64,
}

impl MarginPolicy for FixedMargin {
    fn name(&self) -> &'static str {
        "ebgan"
    }

    fn needs_pretraining(&self) -> bool {
        false
    }

    fn adapts_margin(&self) -> bool {
        false
    }

    fn initial_margin(&self, _: Option<f64>) -> Result<f64, GanError> {
        Ok(self.margin)
    }

    fn end_epoch(&self, state: &mut MarginState, n_eff: usize) -> Result<bool, GanError> {
        if n_eff == 0 {
            return Err(GanError::EmptyEpoch);
        }
        state.roll_epoch();
        Ok(false)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyParams {
    /// Fixed margin, required by non-adaptive policies.
    pub margin: Option<f64>,
}

pub type MarginPolicyRegistry = Registry<dyn MarginPolicy, PolicyParams>;

pub fn margin_policy_registry() -> MarginPolicyRegistry {
    let mut r = Registry::new("margin policy");
    r.register("magan", |_| Ok(Box::new(AdaptiveMargin) as Box<dyn MarginPolicy>))
        .register("ebgan", |p: &PolicyParams| match p.margin {
            Some(m) if m > 0.0 && m.is_finite() => Ok(Box::new(FixedMargin { margin: m }) as Box<dyn MarginPolicy>),
            Some(m) => Err(format!("fixed margin must be positive, got {m}")),
            None => Err("a fixed margin is required (--margin)".into()),
        });
    r
}
