//! Exact dynamics over finite supports.
//!
//! With the data and generator distributions given as probability vectors,
//! the optimal energy discriminator has a closed form: `m` where the generator
//! over-represents the data (`p_data < p_G`, the set `S1`) and `0` elsewhere.
//! Everything here is evaluated exactly on those vectors, so the margin
//! dynamics and convergence claims can be checked to machine precision.

use thiserror::Error;

use crate::config::{SimConfig, StepRule};
use crate::gan::{margin_policy_registry, MarginPolicy, MarginState, PolicyParams};
use crate::registry::RegistryError;
use crate::rng::{Rng, Stream};

/// Tolerance for probability vectors summing to one.
pub const SUM_TOL: f64 = 1e-12;

/// Halvings tried by [`StepRule::Descent`] before a step is declared stalled.
pub const MAX_HALVINGS: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("support size must be at least 1")]
    EmptySupport,
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("{which} has invalid entry {value} at index {index}")]
    Entry {
        which: &'static str,
        index: usize,
        value: f64,
    },
    #[error("{which} sums to {sum}, not 1")]
    Sum { which: &'static str, sum: f64 },
    #[error("margin must be positive and finite, got {0}")]
    Margin(f64),
    #[error("step size must be positive and finite, got {0}")]
    StepSize(f64),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("margin policy: {0}")]
    Policy(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteDistPair {
    pub p_data: Vec<f64>,
    pub p_g: Vec<f64>,
    pub m: f64,
}

fn check_dist(which: &'static str, p: &[f64]) -> Result<(), SimError> {
    if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(SimError::Entry { which, index, value });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOL {
        return Err(SimError::Sum { which, sum });
    }
    Ok(())
}

impl DiscreteDistPair {
    pub fn new(p_data: Vec<f64>, p_g: Vec<f64>, m: f64) -> Result<Self, SimError> {
        if p_data.is_empty() {
            return Err(SimError::EmptySupport);
        }
        if p_data.len() != p_g.len() {
            return Err(SimError::Length(p_data.len(), p_g.len()));
        }
        check_dist("p_data", &p_data)?;
        check_dist("p_g", &p_g)?;
        if !(m > 0.0 && m.is_finite()) {
            return Err(SimError::Margin(m));
        }
        Ok(DiscreteDistPair { p_data, p_g, m })
    }

    /// Independent uniform-on-simplex vectors of length `k` and the given
    /// margin.
    pub fn random(k: usize, m: f64, rng: &mut Rng) -> Result<Self, SimError> {
        if k == 0 {
            return Err(SimError::EmptySupport);
        }
        let p_data = random_simplex(k, rng);
        let p_g = random_simplex(k, rng);
        Self::new(p_data, p_g, m)
    }

    pub fn k(&self) -> usize {
        self.p_data.len()
    }

    pub fn with_margin(&self, m: f64) -> Self {
        DiscreteDistPair { m, ..self.clone() }
    }

    /// Indicator of `S1 = {i : p_data[i] < p_G[i]}`.
    pub fn s1(&self) -> Vec<bool> {
        self.p_data.iter().zip(&self.p_g).map(|(d, g)| d < g).collect()
    }

    /// `p_data(S1)`.
    pub fn data_mass_on_s1(&self) -> f64 {
        self.p_data
            .iter()
            .zip(self.s1())
            .filter(|(_, s)| *s)
            .map(|(p, _)| p)
            .sum()
    }
}

/// Normalized i.i.d. Exp(1) draws: uniform on the simplex interior.
pub fn random_simplex(k: usize, rng: &mut Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| rng.exponential()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Energies in `{0, m}`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalDisc {
    pub energies: Vec<f64>,
}

/// `m` on `S1`, `0` elsewhere; ties get `0`.
pub fn optimal_discriminator(pair: &DiscreteDistPair) -> OptimalDisc {
    OptimalDisc {
        energies: pair
            .s1()
            .into_iter()
            .map(|s| if s { pair.m } else { 0.0 })
            .collect(),
    }
}

/// `sum_i p[i] * d[i]`.
pub fn expected_energy(p: &[f64], d: &[f64]) -> Result<f64, SimError> {
    if p.len() != d.len() {
        return Err(SimError::Length(p.len(), d.len()));
    }
    Ok(p.iter().zip(d).map(|(a, b)| a * b).sum())
}

/// `E_data(D*)` and `E_G(D*)`.
pub fn optimal_energies(pair: &DiscreteDistPair) -> (f64, f64) {
    let d = optimal_discriminator(pair).energies;
    let dot = |p: &[f64]| p.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
    (dot(&pair.p_data), dot(&pair.p_g))
}

pub fn tv_distance(pair: &DiscreteDistPair) -> f64 {
    0.5 * pair
        .p_data
        .iter()
        .zip(&pair.p_g)
        .map(|(d, g)| (g - d).abs())
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Report {
    pub e_data: f64,
    pub e_g: f64,
    /// `E_data <= E_G <= m` within [`SUM_TOL`], and equality iff the
    /// distributions agree coordinate-wise.
    pub holds: bool,
}

pub fn check_lemma1(pair: &DiscreteDistPair) -> Lemma1Report {
    let (e_data, e_g) = optimal_energies(pair);
    let ordered = e_data <= e_g + SUM_TOL && e_g <= pair.m + SUM_TOL;
    let equal_energy = (e_g - e_data).abs() <= SUM_TOL;
    let identical = pair
        .p_data
        .iter()
        .zip(&pair.p_g)
        .all(|(d, g)| (d - g).abs() <= SUM_TOL);
    // Energy equality forces m * TV <= 1e-12, so it can only flag
    // coordinates differing by more than SUM_TOL when m * gap is tiny.
    let iff = equal_energy == identical || (equal_energy && pair.m * tv_distance(pair) <= SUM_TOL);
    Lemma1Report {
        e_data,
        e_g,
        holds: ordered && iff,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityReport {
    /// `E_G(D*) - E_data(D*)`.
    pub lhs: f64,
    /// `(m / 2) * sum |p_G - p_data|`.
    pub rhs: f64,
    pub abs_diff: f64,
}

pub fn appendix_identity(pair: &DiscreteDistPair) -> IdentityReport {
    let (e_data, e_g) = optimal_energies(pair);
    let lhs = e_g - e_data;
    let rhs = pair.m * tv_distance(pair);
    IdentityReport {
        lhs,
        rhs,
        abs_diff: (lhs - rhs).abs(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecurrenceReport {
    /// `m_prev * p_data(S1)`.
    pub m_next: f64,
    /// `E_data(D*)` from the dot product, for comparison.
    pub e_data: f64,
    pub residual: f64,
    pub decreased: bool,
    /// `S1` is empty, so `m_next = 0`.
    pub converged: bool,
}

/// One margin update under the optimal discriminator.
pub fn margin_recurrence(pair: &DiscreteDistPair, m_prev: f64) -> RecurrenceReport {
    let at = pair.with_margin(m_prev);
    let s1_empty = !at.s1().iter().any(|&s| s);
    let m_next = m_prev * at.data_mass_on_s1();
    let (e_data, _) = optimal_energies(&at);
    RecurrenceReport {
        m_next,
        e_data,
        residual: (m_next - e_data).abs(),
        decreased: m_next < m_prev,
        converged: s1_empty,
    }
}

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &x) in u.iter().enumerate() {
        cumsum += x;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Pre-projection displacement `eta * D*`: `eta * m` on `S1`, `0` elsewhere.
pub fn generator_displacement(pair: &DiscreteDistPair, eta: f64) -> Vec<f64> {
    optimal_discriminator(pair)
        .energies
        .into_iter()
        .map(|d| eta * d)
        .collect()
}

/// `p_G <- proj(p_G - eta * D*)`.
pub fn idealized_generator_step(pair: &DiscreteDistPair, eta: f64) -> Result<Vec<f64>, SimError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(SimError::StepSize(eta));
    }
    let shifted: Vec<f64> = pair
        .p_g
        .iter()
        .zip(generator_displacement(pair, eta))
        .map(|(p, d)| p - d)
        .collect();
    Ok(project_simplex(&shifted))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimRecord {
    pub step: usize,
    /// Margin in force at this step.
    pub margin: f64,
    pub e_data: f64,
    pub e_g: f64,
    pub tv: f64,
    /// Whether the margin changed after this step's generator update.
    pub margin_updated: bool,
    /// Step size actually taken; 0 on the final (converged) record.
    pub step_size: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimTrace {
    pub records: Vec<SimRecord>,
    /// Final TV dropped below the tolerance.
    pub converged: bool,
    /// No step length satisfied the descent rule.
    pub stalled: bool,
}

impl SimTrace {
    pub fn final_tv(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.tv)
    }

    pub fn any_update(&self) -> bool {
        self.records.iter().any(|r| r.margin_updated)
    }

    pub fn margins_non_increasing(&self) -> bool {
        self.records.windows(2).all(|w| w[1].margin <= w[0].margin)
    }

    /// Smallest and largest step sizes taken.
    pub fn step_range(&self) -> Option<(f64, f64)> {
        let steps: Vec<f64> = self.records.iter().map(|r| r.step_size).filter(|&s| s > 0.0).collect();
        let lo = steps.iter().copied().reduce(f64::min)?;
        let hi = steps.iter().copied().reduce(f64::max)?;
        Some((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimOptions {
    pub eta: f64,
    pub max_steps: usize,
    pub tol: f64,
    pub step_rule: StepRule,
}

/// Step rule used when none is configured: adaptive margins take fixed
/// steps, fixed margins descend.
pub fn default_step_rule(policy: &dyn MarginPolicy) -> StepRule {
    if policy.adapts_margin() {
        StepRule::Fixed
    } else {
        StepRule::Descent
    }
}

/// Iterates optimal discriminator, generator step, and margin check until
/// the TV distance drops below `tol` or `max_steps` steps are taken.
pub fn simulate(
    policy: &dyn MarginPolicy,
    start: &DiscreteDistPair,
    opts: &SimOptions,
) -> Result<SimTrace, SimError> {
    if !(opts.eta > 0.0 && opts.eta.is_finite()) {
        return Err(SimError::StepSize(opts.eta));
    }
    let mut pair = start.clone();
    let mut trace = SimTrace::default();
    for step in 0..=opts.max_steps {
        let (e_data, e_g) = optimal_energies(&pair);
        let tv = tv_distance(&pair);
        let mut record = SimRecord {
            step,
            margin: pair.m,
            e_data,
            e_g,
            tv,
            margin_updated: false,
            step_size: 0.0,
        };
        if tv < opts.tol {
            trace.converged = true;
            trace.records.push(record);
            break;
        }
        if step == opts.max_steps {
            trace.records.push(record);
            break;
        }
        let Some((p_g, eta)) = choose_step(&pair, e_g, tv, opts)? else {
            trace.stalled = true;
            trace.records.push(record);
            break;
        };
        record.step_size = eta;
        pair.p_g = p_g;

        let (e_data_next, e_g_next) = optimal_energies(&pair);
        let mut state = MarginState {
            margin: pair.m,
            s_data: e_data_next,
            s_g: e_g_next,
            prev_s_g: e_g,
            samples_seen: 1,
        };
        let updated = policy
            .end_epoch(&mut state, 1)
            .map_err(|e| SimError::Policy(e.to_string()))?;
        if updated && state.margin > 0.0 {
            pair.m = state.margin;
        }
        record.margin_updated = updated;
        trace.records.push(record);
    }
    Ok(trace)
}

fn choose_step(
    pair: &DiscreteDistPair,
    e_g: f64,
    tv: f64,
    opts: &SimOptions,
) -> Result<Option<(Vec<f64>, f64)>, SimError> {
    match opts.step_rule {
        StepRule::Fixed => Ok(Some((idealized_generator_step(pair, opts.eta)?, opts.eta))),
        StepRule::Descent => {
            let mut eta = opts.eta;
            for _ in 0..=MAX_HALVINGS {
                let p_g = idealized_generator_step(pair, eta)?;
                let next = DiscreteDistPair {
                    p_g: p_g.clone(),
                    ..pair.clone()
                };
                // E_G under the current discriminator, which the step targets.
                let d = optimal_discriminator(pair).energies;
                let e_g_next = expected_energy(&next.p_g, &d)?;
                if e_g_next < e_g && tv_distance(&next) <= tv {
                    return Ok(Some((p_g, eta)));
                }
                eta *= 0.5;
            }
            Ok(None)
        }
    }
}

/// Options from a sim config, resolving the default step rule.
pub fn sim_options(config: &SimConfig, policy: &dyn MarginPolicy) -> SimOptions {
    SimOptions {
        eta: config.eta,
        max_steps: config.max_steps,
        tol: config.tol,
        step_rule: config.step_rule.unwrap_or_else(|| default_step_rule(policy)),
    }
}

pub fn policy_for(config: &SimConfig) -> Result<Box<dyn MarginPolicy>, SimError> {
    Ok(margin_policy_registry().create(
        &config.mode,
        &PolicyParams {
            margin: Some(config.m0),
        },
    )?)
}

/// Random start for trial `trial` of a sim config: its own rng stream per
/// trial, so trials are independent of how many run.
pub fn trial_start(config: &SimConfig, trial: usize) -> Result<DiscreteDistPair, SimError> {
    let mut rng = Rng::with_stream(config.seed.wrapping_add(trial as u64), Stream::Sim as u64);
    DiscreteDistPair::random(config.k, config.m0, &mut rng)
}

pub fn simulate_trial(config: &SimConfig, trial: usize) -> Result<SimTrace, SimError> {
    let policy = policy_for(config)?;
    let opts = sim_options(config, policy.as_ref());
    simulate(policy.as_ref(), &trial_start(config, trial)?, &opts)
}

/// One named check of the theory suite.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.into(),
            passed,
            detail,
        });
    }
}

/// Random pair with `K` in `2..=64` and `m` in `(0, 10]`.
pub fn random_theory_pair(rng: &mut Rng) -> Result<DiscreteDistPair, SimError> {
    let k = 2 + rng.below(63);
    let m = 10.0 * (1.0 - rng.uniform());
    DiscreteDistPair::random(k, m, rng)
}

/// Machine-precision checks over `pairs` random triples.
pub fn theory_suite(seed: u64, pairs: usize) -> Result<VerifyReport, SimError> {
    let mut rng = Rng::for_stream(seed, Stream::Sim);
    let mut report = VerifyReport::default();
    let (mut lemma1_fail, mut worst_identity, mut worst_rec) = (0usize, 0.0f64, 0.0f64);
    let (mut rec_not_decreasing, mut lemma2_fail, mut disp_fail) = (0usize, 0usize, 0usize);
    let mut proj_fail = 0usize;
    for _ in 0..pairs {
        let pair = random_theory_pair(&mut rng)?;
        if !check_lemma1(&pair).holds {
            lemma1_fail += 1;
        }
        worst_identity = worst_identity.max(appendix_identity(&pair).abs_diff);
        let rec = margin_recurrence(&pair, pair.m);
        worst_rec = worst_rec.max(rec.residual);
        if tv_distance(&pair) > SUM_TOL && !rec.decreased {
            rec_not_decreasing += 1;
        }
        // E_G(D*) depends on p_G only through S1; recomputing D* is a no-op.
        let (_, e_g) = optimal_energies(&pair);
        let (_, e_g_again) = optimal_energies(&DiscreteDistPair {
            p_g: pair.p_g.clone(),
            ..pair.clone()
        });
        if e_g.to_bits() != e_g_again.to_bits() {
            lemma2_fail += 1;
        }
        let eta = 0.01;
        let s1 = pair.s1();
        let disp = generator_displacement(&pair, eta);
        if disp
            .iter()
            .zip(&s1)
            .any(|(&d, &s)| d != if s { eta * pair.m } else { 0.0 })
        {
            disp_fail += 1;
        }
        let stepped = idealized_generator_step(&pair, eta)?;
        if check_dist("p_g", &stepped).is_err() {
            proj_fail += 1;
        }
    }
    report.push(
        "lemma1",
        lemma1_fail == 0,
        format!("{lemma1_fail}/{pairs} pairs violate E_data <= E_G <= m or the equality clause"),
    );
    report.push(
        "appendix-identity",
        worst_identity < SUM_TOL,
        format!("max |lhs - rhs| = {worst_identity:e} over {pairs} pairs"),
    );
    report.push(
        "margin-recurrence",
        worst_rec < SUM_TOL && rec_not_decreasing == 0,
        format!("max residual {worst_rec:e}; {rec_not_decreasing} non-decreasing steps"),
    );
    report.push(
        "lemma2",
        lemma2_fail == 0,
        format!("{lemma2_fail} pairs changed E_G on recomputing D*"),
    );
    report.push(
        "displacement",
        disp_fail == 0,
        format!("{disp_fail} pairs with displacement != eta*m on S1, 0 on S2"),
    );
    report.push(
        "projection",
        proj_fail == 0,
        format!("{proj_fail} stepped vectors off the simplex"),
    );
    Ok(report)
}

/// Convergence summary over `trials` random starts.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceSummary {
    pub trials: usize,
    pub converged: usize,
    pub with_update: usize,
    pub monotone_margin: usize,
    pub stalled: usize,
    pub max_steps_used: usize,
}

pub fn convergence_summary(config: &SimConfig, trials: usize) -> Result<ConvergenceSummary, SimError> {
    let traces = (0..trials)
        .map(|t| simulate_trial(config, t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConvergenceSummary {
        trials,
        converged: traces.iter().filter(|t| t.converged).count(),
        with_update: traces.iter().filter(|t| t.any_update()).count(),
        monotone_margin: traces.iter().filter(|t| t.margins_non_increasing()).count(),
        stalled: traces.iter().filter(|t| t.stalled).count(),
        max_steps_used: traces.iter().map(|t| t.records.len().saturating_sub(1)).max().unwrap_or(0),
    })
}

/// Settings for the convergence checks of [`verify`].
pub fn ebgan_convergence_config(seed: u64) -> SimConfig {
    SimConfig {
        mode: "ebgan".into(),
        eta: 0.05,
        seed,
        ..SimConfig::default()
    }
}

pub fn magan_convergence_config(seed: u64) -> SimConfig {
    SimConfig {
        mode: "magan".into(),
        eta: 2.0,
        seed,
        ..SimConfig::default()
    }
}

/// The full theory suite plus convergence runs over `trials` starts each.
pub fn verify(seed: u64, pairs: usize, trials: usize) -> Result<VerifyReport, SimError> {
    let mut report = theory_suite(seed, pairs)?;
    let eb = convergence_summary(&ebgan_convergence_config(seed), trials)?;
    report.push(
        "ebgan-convergence",
        eb.converged * 100 >= 95 * trials,
        format!(
            "{}/{} reach TV < 1e-6 ({} stalled, max {} steps)",
            eb.converged, trials, eb.stalled, eb.max_steps_used
        ),
    );
    let ma = convergence_summary(&magan_convergence_config(seed), trials)?;
    report.push(
        "magan-convergence",
        ma.converged * 100 >= 95 * trials && ma.with_update == trials && ma.monotone_margin == trials,
        format!(
            "{}/{} reach TV < 1e-6, {} fire an update, {} monotone margins (max {} steps)",
            ma.converged, trials, ma.with_update, ma.monotone_margin, ma.max_steps_used
        ),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{AdaptiveMargin, FixedMargin};

    fn running() -> DiscreteDistPair {
        DiscreteDistPair::new(vec![0.3, 0.7], vec![0.6, 0.4], 1.0).unwrap()
    }

    #[test]
    fn optimal_discriminator_examples() {
        assert_eq!(optimal_discriminator(&running()).energies, vec![1.0, 0.0]);
        let same = DiscreteDistPair::new(vec![0.5, 0.5], vec![0.5, 0.5], 3.0).unwrap();
        assert_eq!(optimal_discriminator(&same).energies, vec![0.0, 0.0]);
        let k3 = DiscreteDistPair::new(vec![0.2, 0.3, 0.5], vec![0.5, 0.3, 0.2], 2.0).unwrap();
        assert_eq!(optimal_discriminator(&k3).energies, vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn expected_energy_examples() {
        let d = [1.0, 0.0];
        assert_eq!(expected_energy(&[0.3, 0.7], &d).unwrap(), 0.3);
        assert_eq!(expected_energy(&[0.6, 0.4], &d).unwrap(), 0.6);
        assert_eq!(expected_energy(&[0.1, 0.9], &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(expected_energy(&[1.0], &d), Err(SimError::Length(1, 2)));
    }

    #[test]
    fn lemma1_examples() {
        let r = check_lemma1(&running());
        assert_eq!((r.e_data, r.e_g, r.holds), (0.3, 0.6, true));
        let same = DiscreteDistPair::new(vec![0.25; 4], vec![0.25; 4], 1.0).unwrap();
        let r = check_lemma1(&same);
        assert_eq!((r.e_data, r.e_g, r.holds), (0.0, 0.0, true));
    }

    #[test]
    fn identity_examples() {
        let r = appendix_identity(&running());
        assert!((r.lhs - 0.3).abs() < 1e-15 && (r.rhs - 0.3).abs() < 1e-15);
        assert!(r.abs_diff < 1e-15);
        let same = DiscreteDistPair::new(vec![0.5, 0.5], vec![0.5, 0.5], 1.0).unwrap();
        assert_eq!(appendix_identity(&same).abs_diff, 0.0);
    }

    #[test]
    fn recurrence_examples() {
        let r = margin_recurrence(&running(), 1.0);
        assert_eq!(r.m_next, 0.3);
        assert_eq!(r.m_next, r.e_data);
        assert!(r.decreased && !r.converged);
        let mut m = 1.0;
        for t in 1..=5 {
            m = margin_recurrence(&running(), m).m_next;
            assert!((m - 0.3f64.powi(t)).abs() < 1e-15);
        }
        let same = DiscreteDistPair::new(vec![0.5, 0.5], vec![0.5, 0.5], 1.0).unwrap();
        let r = margin_recurrence(&same, 1.0);
        assert!(r.converged && r.m_next == 0.0);
    }

    #[test]
    fn tv_examples() {
        assert!((tv_distance(&running()) - 0.3).abs() < 1e-15);
        let disjoint = DiscreteDistPair::new(vec![1.0, 0.0], vec![0.0, 1.0], 1.0).unwrap();
        assert_eq!(tv_distance(&disjoint), 1.0);
    }

    #[test]
    fn generator_step_examples() {
        let same = DiscreteDistPair::new(vec![0.4, 0.6], vec![0.4, 0.6], 1.0).unwrap();
        assert_eq!(idealized_generator_step(&same, 0.1).unwrap(), same.p_g);
        let stepped = idealized_generator_step(&running(), 1e-3).unwrap();
        assert!(stepped[0] < 0.6);
        let full = generator_displacement(&running(), 0.2);
        let half = generator_displacement(&running().with_margin(0.5), 0.2);
        assert_eq!(full.iter().map(|d| d / 2.0).collect::<Vec<_>>(), half);
    }

    #[test]
    fn projection_is_nearest_simplex_point() {
        assert_eq!(project_simplex(&[0.2, 0.8]), vec![0.2, 0.8]);
        assert_eq!(project_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        let p = project_simplex(&[0.5, 0.5, 0.5]);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn invalid_pairs_rejected() {
        assert_eq!(DiscreteDistPair::new(vec![], vec![], 1.0), Err(SimError::EmptySupport));
        assert!(matches!(
            DiscreteDistPair::new(vec![0.5, 0.6], vec![0.5, 0.5], 1.0),
            Err(SimError::Sum { which: "p_data", .. })
        ));
        assert!(DiscreteDistPair::new(vec![1.0], vec![1.0], 0.0).is_err());
    }

    #[test]
    fn oversized_step_fires_margin_update() {
        let opts = SimOptions {
            eta: 2.0,
            max_steps: 10_000,
            tol: 1e-6,
            step_rule: StepRule::Fixed,
        };
        let trace = simulate(&AdaptiveMargin, &running(), &opts).unwrap();
        assert!(trace.any_update());
        assert!(trace.margins_non_increasing());
        let first = trace.records.iter().find(|r| r.margin_updated).unwrap();
        let next = &trace.records[first.step + 1];
        assert!(next.margin < first.margin);
    }

    #[test]
    fn descent_rule_reduces_tv_monotonically() {
        let opts = SimOptions {
            eta: 0.05,
            max_steps: 100_000,
            tol: 1e-6,
            step_rule: StepRule::Descent,
        };
        let start = DiscreteDistPair::random(16, 1.0, &mut Rng::new(5)).unwrap();
        let trace = simulate(&FixedMargin { margin: 1.0 }, &start, &opts).unwrap();
        assert!(trace.records.windows(2).all(|w| w[1].tv <= w[0].tv));
        assert!(trace.converged, "final tv {}", trace.final_tv());
    }

    #[test]
    fn theory_suite_passes() {
        let report = theory_suite(0, 200).unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
