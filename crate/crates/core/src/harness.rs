//! Closed-loop episode: reference, plant and adaptive controller wired
//! together, one record per sampling step.
//!
//! The controller ([`AdaptiveController`]) only ever receives output and
//! reference samples. Plant matrices live behind the [`Process`] trait.

use std::collections::VecDeque;

use thiserror::Error;

use crate::config::{ConfigError, Experiment, ExperimentConfig, LoopSettings, Quadrature};
use crate::log::{LogMeta, StepRecord, TerminalStatus, TrajectoryLog};
use crate::mrac::{
    check_convergence, critic_target, greedy_gains, policy, update_actor, update_critic, utility,
    value, ActorGains, ControlError, CostWeights, CriticWeights, ErrorWindow, LearningRule,
};
use crate::plant::{
    discretize_zoh, DiscretePlant, DisturbanceSchedule, PlantError, PlantModel, PlantState,
};
use crate::reference::{ReferenceError, ReferenceSignal};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
    #[error("controller: {0}")]
    Control(#[from] ControlError),
    #[error("process returned {got} output samples, expected {expected}")]
    Samples { got: usize, expected: usize },
}

/// Something the controller can drive: it takes a held control and reports
/// its output.
pub trait Process {
    fn output(&self) -> f64;

    /// Holds `u` for one sampling interval and returns the output at the end
    /// of each of `substeps` equal sub-intervals (the last entry is the
    /// output at the end of the interval).
    fn advance(&mut self, u: f64, substeps: usize) -> Result<Vec<f64>, PlantError>;
}

/// Exact-ZOH simulation of a [`PlantModel`] under a disturbance schedule.
#[derive(Debug, Clone)]
pub struct SimulatedPlant {
    model: PlantModel,
    schedule: DisturbanceSchedule,
    dt: f64,
    state: PlantState,
    step: usize,
    cache: Option<(usize, usize, DiscretePlant)>,
}

impl SimulatedPlant {
    pub fn new(
        model: PlantModel,
        schedule: DisturbanceSchedule,
        dt: f64,
        initial: PlantState,
    ) -> Result<Self, PlantError> {
        schedule.check_order(model.order())?;
        if initial.x.len() != model.order() {
            return Err(PlantError::Dimension("initial state size".into()));
        }
        Ok(Self {
            model,
            schedule,
            dt,
            state: initial,
            step: 0,
            cache: None,
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    fn discrete(&mut self, substeps: usize) -> Result<&DiscretePlant, PlantError> {
        let segment = self.schedule.segment_index(self.step);
        let stale = !matches!(&self.cache, Some((s, n, _)) if *s == segment && *n == substeps);
        if stale {
            let disc = discretize_zoh(
                &self.model,
                &self.schedule.segments()[segment].disturbance,
                self.dt / substeps as f64,
            )?;
            self.cache = Some((segment, substeps, disc));
        }
        Ok(&self.cache.as_ref().expect("cache filled above").2)
    }
}

impl Process for SimulatedPlant {
    fn output(&self) -> f64 {
        self.model.output(&self.state)
    }

    fn advance(&mut self, u: f64, substeps: usize) -> Result<Vec<f64>, PlantError> {
        let disc = self.discrete(substeps)?.clone();
        let mut outputs = Vec::with_capacity(substeps);
        let mut state = self.state.clone();
        for _ in 0..substeps {
            state = disc.step(&state, u)?;
            outputs.push(self.model.output(&state));
        }
        self.state = state;
        self.step += 1;
        Ok(outputs)
    }
}

/// Learning-loop settings seen by the controller.
#[derive(Debug, Clone, Copy)]
pub struct LearnerSettings {
    pub dt: f64,
    pub actor_rate: f64,
    pub critic_rate: f64,
    pub rule: LearningRule,
    pub cost: CostWeights,
    pub tolerance: f64,
    pub window: usize,
    pub quadrature: Quadrature,
    pub substeps: usize,
}

impl LearnerSettings {
    pub fn from_loop(settings: &LoopSettings, cost: CostWeights) -> Self {
        Self {
            dt: settings.dt,
            actor_rate: settings.actor_rate,
            critic_rate: settings.critic_rate,
            rule: LearningRule {
                mode: settings.mode,
                normalize: settings.normalize,
            },
            cost,
            tolerance: settings.tolerance,
            window: settings.window,
            quadrature: settings.quadrature,
            substeps: settings.substeps,
        }
    }

    /// Output samples the controller expects per interval.
    pub fn samples_per_step(&self) -> usize {
        match self.quadrature {
            Quadrature::Rectangle => 1,
            Quadrature::Trapezoid => self.substeps,
        }
    }
}

/// What one adaptation step produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub value: f64,
    pub utility: f64,
    /// `V(t) - (int U + V(t + dt))` under the critic before the update.
    pub bellman_residual: f64,
    pub critic_change: f64,
    /// Set on the step at which convergence was detected.
    pub converged_now: bool,
}

/// The online actor-critic learner. Its inputs are output and reference
/// samples only.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    settings: LearnerSettings,
    critic: CriticWeights,
    actor: ActorGains,
    window: ErrorWindow,
    /// Fine error samples covering the last two intervals plus the current
    /// instant (trapezoid quadrature only).
    fine_errors: VecDeque<f64>,
    recent: VecDeque<CriticWeights>,
    step: usize,
    converged_at: Option<usize>,
}

impl AdaptiveController {
    pub fn new(settings: LearnerSettings, critic: CriticWeights, actor: ActorGains) -> Self {
        Self {
            settings,
            critic,
            actor,
            window: ErrorWindow::default(),
            fine_errors: VecDeque::new(),
            recent: VecDeque::with_capacity(settings.window + 2),
            step: 0,
            converged_at: None,
        }
    }

    /// Initializes the error window from the first measurement; earlier
    /// errors are taken as zero.
    pub fn start(&mut self, y: f64, y_ref: f64) {
        let e = y - y_ref;
        self.window = ErrorWindow::starting_at(e);
        if self.settings.quadrature == Quadrature::Trapezoid {
            let s = self.settings.substeps;
            self.fine_errors = std::iter::repeat_n(0.0, 2 * s).chain([e]).collect();
        }
    }

    pub fn control(&self) -> f64 {
        policy(&self.actor, &self.window)
    }

    /// Changes the adaptation rates from the next step on.
    pub fn set_rates(&mut self, actor_rate: f64, critic_rate: f64) {
        self.settings.actor_rate = actor_rate;
        self.settings.critic_rate = critic_rate;
    }

    pub fn critic(&self) -> &CriticWeights {
        &self.critic
    }

    pub fn actor(&self) -> &ActorGains {
        &self.actor
    }

    pub fn window(&self) -> &ErrorWindow {
        &self.window
    }

    pub fn converged_at(&self) -> Option<usize> {
        self.converged_at
    }

    pub fn greedy(&self) -> Result<ActorGains, ControlError> {
        greedy_gains(&self.critic)
    }

    fn trapezoid_integral(&mut self, errors: &[f64], u: f64) -> f64 {
        let s = self.settings.substeps;
        self.fine_errors.extend(errors.iter().copied());
        let cost = &self.settings.cost;
        let at = |buf: &VecDeque<f64>, j: usize| {
            let w = ErrorWindow::new(buf[2 * s + j], buf[s + j], buf[j]);
            utility(&w, u, cost)
        };
        let h = self.settings.dt / s as f64;
        let integral = (0..s)
            .map(|j| 0.5 * (at(&self.fine_errors, j) + at(&self.fine_errors, j + 1)) * h)
            .sum();
        self.fine_errors.drain(..s);
        integral
    }

    /// Consumes the output and reference samples of the interval that just
    /// ended, then adapts critic and actor unless already converged.
    pub fn observe(&mut self, y: &[f64], y_ref: &[f64]) -> Result<Transition, HarnessError> {
        let expected = self.settings.samples_per_step();
        if y.len() != expected || y_ref.len() != expected {
            return Err(HarnessError::Samples {
                got: y.len().min(y_ref.len()),
                expected,
            });
        }
        let u = self.control();
        let current = self.window;
        let errors: Vec<f64> = y.iter().zip(y_ref).map(|(a, b)| a - b).collect();
        let next = current.push(*errors.last().expect("at least one sample"));

        let v = value(&self.critic, &current, u);
        let cost = utility(&current, u, &self.settings.cost);
        let integral = match self.settings.quadrature {
            Quadrature::Rectangle => cost * self.settings.dt,
            Quadrature::Trapezoid => self.trapezoid_integral(&errors, u),
        };
        let u_next = policy(&self.actor, &next);
        let v_next = value(&self.critic, &next, u_next);
        let target = critic_target(integral, v_next);
        let residual = v - target;

        let mut change = 0.0;
        let mut converged_now = false;
        if self.converged_at.is_none() {
            let s = &self.settings;
            let critic = update_critic(&self.critic, &current, u, target, s.critic_rate, s.rule)?;
            let actor = update_actor(&self.actor, u, &current, &critic, s.actor_rate, s.rule)?;
            change = (critic.matrix() - self.critic.matrix()).norm();
            self.critic = critic;
            self.actor = actor;

            if self.recent.len() == s.window + 2 {
                self.recent.pop_front();
            }
            self.recent.push_back(critic);
            if check_convergence(self.recent.make_contiguous(), s.window, s.tolerance) {
                self.converged_at = Some(self.step);
                converged_now = true;
            }
        }

        self.window = next;
        self.step += 1;
        Ok(Transition {
            value: v,
            utility: cost,
            bellman_residual: residual,
            critic_change: change,
            converged_now,
        })
    }
}

fn meta_for(settings: &LoopSettings, schedule: &DisturbanceSchedule) -> LogMeta {
    LogMeta {
        dt: settings.dt,
        window: settings.window,
        tolerance: settings.tolerance,
        segment_starts: schedule.segments().iter().map(|s| s.start_step).collect(),
    }
}

/// Runs the loop against any [`Process`]. `state_of` supplies the plant
/// state to log (it is never shown to the controller).
pub fn run_loop<P: Process>(
    process: &mut P,
    reference: &mut ReferenceSignal,
    controller: &mut AdaptiveController,
    steps: usize,
    divergence_limit: f64,
    meta: LogMeta,
    state_of: impl Fn(&P) -> Vec<f64>,
) -> Result<TrajectoryLog, HarnessError> {
    let dt = meta.dt;
    let samples = controller.settings.samples_per_step();
    let h = dt / samples as f64;

    let mut y = process.output();
    let mut y_ref = reference.sample(0.0)?;
    controller.start(y, y_ref);

    let mut records = Vec::with_capacity(steps);
    let mut status = TerminalStatus::MaxSteps;
    for k in 0..steps {
        let u = controller.control();
        let gains = controller.actor().as_array();
        let greedy = controller.greedy()?.as_array();
        let mut record = StepRecord {
            k,
            t: k as f64 * dt,
            y_ref,
            y,
            e: y - y_ref,
            u,
            gains,
            greedy_gains: greedy,
            value: f64::NAN,
            utility: f64::NAN,
            bellman_residual: f64::NAN,
            critic_change: f64::NAN,
            state: state_of(process),
        };

        let outcome = (|| -> Result<(Vec<f64>, Vec<f64>, Transition), HarnessError> {
            let ys = process.advance(u, samples)?;
            let refs = (1..=samples)
                .map(|j| reference.sample((k * samples + j) as f64 * h))
                .collect::<Result<Vec<_>, _>>()?;
            let tr = controller.observe(&ys, &refs)?;
            Ok((ys, refs, tr))
        })();

        match outcome {
            Ok((ys, refs, tr)) => {
                record.value = tr.value;
                record.utility = tr.utility;
                record.bellman_residual = tr.bellman_residual;
                record.critic_change = tr.critic_change;
                y = *ys.last().expect("non-empty samples");
                y_ref = *refs.last().expect("non-empty samples");
                let bad = record.max_magnitude() > divergence_limit;
                records.push(record);
                if bad {
                    status = TerminalStatus::Diverged(k);
                    break;
                }
                if tr.converged_now {
                    status = TerminalStatus::ConvergedAt(k);
                }
            }
            Err(HarnessError::Plant(PlantError::Diverged { .. }))
            | Err(HarnessError::Control(ControlError::Diverged)) => {
                records.push(record);
                status = TerminalStatus::Diverged(k);
                break;
            }
            Err(other) => return Err(other),
        }
    }
    Ok(TrajectoryLog {
        records,
        status,
        meta,
    })
}

/// Builds every component of a validated experiment and runs it.
pub fn run_experiment(exp: &Experiment) -> Result<TrajectoryLog, HarnessError> {
    let s = &exp.settings;
    let mut plant = SimulatedPlant::new(
        exp.model.clone(),
        exp.schedule.clone(),
        s.dt,
        exp.initial_state.clone(),
    )?;
    let mut reference = ReferenceSignal::new(exp.reference.clone())?;
    let mut controller = AdaptiveController::new(
        LearnerSettings::from_loop(s, exp.cost),
        exp.critic,
        exp.actor,
    );
    run_loop(
        &mut plant,
        &mut reference,
        &mut controller,
        s.steps,
        s.divergence_limit,
        meta_for(s, &exp.schedule),
        |p| p.state().x.iter().copied().collect(),
    )
}

/// Validates `cfg` and runs one episode.
pub fn run_episode(cfg: &ExperimentConfig) -> Result<TrajectoryLog, HarnessError> {
    let exp = cfg.validate()?;
    run_experiment(&exp)
}
