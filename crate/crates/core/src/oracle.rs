//! Reference computations that share no numerics with the production path:
//! fixed-step RK4 instead of the matrix exponential, fine-grid cost sums
//! instead of the learned critic, and central differences for gradients.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::mrac::{utility, ActorGains, CostWeights, ErrorWindow};
use crate::plant::{Disturbance, PlantModel, PlantState};
use crate::reference::{ReferenceError, ReferenceSignal, ReferenceSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("rollout cost became unbounded at t = {t}")]
    Unbounded { t: f64 },
    #[error("fine step {fine} must divide the sampling step {coarse} into at least 10 parts")]
    Step { coarse: f64, fine: f64 },
    #[error("prior error history has {got} samples, expected {expected}")]
    History { got: usize, expected: usize },
    #[error("reference: {0}")]
    Reference(#[from] ReferenceError),
}

const BLOWUP: f64 = 1e12;

fn rk4_step(a: &DMatrix<f64>, bu: &DVector<f64>, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let f = |x: &DVector<f64>| a * x + bu;
    let k1 = f(x);
    let k2 = f(&(x + &k1 * (h / 2.0)));
    let k3 = f(&(x + &k2 * (h / 2.0)));
    let k4 = f(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Integrates `x' = A_eff x + B_eff u` over `dt` with classical RK4 at
/// (roughly) `substep`, the control held constant.
pub fn rk4_propagate(
    model: &PlantModel,
    disturbance: &Disturbance,
    x0: &PlantState,
    u: f64,
    dt: f64,
    substep: f64,
) -> PlantState {
    let (a, b) = model.effective(disturbance);
    let n = (dt / substep).round().max(1.0) as usize;
    let h = dt / n as f64;
    let bu = b * u;
    let mut x = x0.x.clone();
    for _ in 0..n {
        x = rk4_step(&a, &bu, &x, h);
    }
    PlantState { x, t: x0.t + dt }
}

/// Fine-grid closed-loop trajectory under fixed 3-tap gains.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Fine step.
    pub h: f64,
    /// Fine steps per sampling interval.
    pub per_step: usize,
    /// `e(i h)` for `i = -2 per_step ..= end`, oldest first.
    pub errors: Vec<f64>,
    /// Plant state at each sampling instant.
    pub states: Vec<PlantState>,
    /// Control held over each sampling interval.
    pub controls: Vec<f64>,
}

impl Rollout {
    fn offset(&self) -> usize {
        2 * self.per_step
    }

    /// `e(i h)` for fine index `i` (may be negative down to `-2 per_step`).
    pub fn error(&self, i: isize) -> f64 {
        self.errors[(i + self.offset() as isize) as usize]
    }

    /// Error window `[e(t), e(t - dt), e(t - 2 dt)]` at fine index `i`.
    pub fn window(&self, i: isize) -> ErrorWindow {
        let m = self.per_step as isize;
        ErrorWindow::new(self.error(i), self.error(i - m), self.error(i - 2 * m))
    }

    /// The `2 per_step` fine errors preceding sampling instant `k`, oldest
    /// first: the history needed to restart a rollout there.
    pub fn history_before(&self, k: usize) -> Vec<f64> {
        let i = k * self.per_step;
        self.errors[i..i + self.offset()].to_vec()
    }
}

/// Closed-loop settings for [`simulate`].
#[derive(Debug, Clone)]
pub struct RolloutSpec<'a> {
    pub model: &'a PlantModel,
    pub disturbance: &'a Disturbance,
    pub gains: ActorGains,
    pub reference: &'a ReferenceSpec,
    /// Sampling step at which the control is recomputed.
    pub dt: f64,
    /// Integration and cost-summation step.
    pub dt_fine: f64,
}

impl RolloutSpec<'_> {
    fn per_step(&self) -> Result<usize, OracleError> {
        let m = (self.dt / self.dt_fine).round();
        if !(m >= 10.0) || ((m * self.dt_fine - self.dt).abs() > 1e-9 * self.dt) {
            return Err(OracleError::Step {
                coarse: self.dt,
                fine: self.dt_fine,
            });
        }
        Ok(m as usize)
    }
}

/// Fine-grid closed loop advanced one sampling interval at a time.
struct Stepper<'a> {
    spec: &'a RolloutSpec<'a>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    m: usize,
    h: f64,
    reference: ReferenceSignal,
    x: DVector<f64>,
    t0: f64,
    k: usize,
    errors: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a RolloutSpec<'a>, x0: &PlantState, prior: &[f64]) -> Result<Self, OracleError> {
        let m = spec.per_step()?;
        let mut errors = match prior.len() {
            0 => vec![0.0; 2 * m],
            n if n == 2 * m => prior.to_vec(),
            n => {
                return Err(OracleError::History {
                    got: n,
                    expected: 2 * m,
                })
            }
        };
        let (a, b) = spec.model.effective(spec.disturbance);
        let mut reference = ReferenceSignal::new(spec.reference.clone())?;
        // a stateful reference must be advanced from zero to the start time
        if x0.t > 0.0 {
            reference.sample(0.0)?;
        }
        errors.push((spec.model.c() * &x0.x)[0] - reference.sample(x0.t)?);
        Ok(Self {
            spec,
            a,
            b,
            m,
            h: spec.dt / m as f64,
            reference,
            x: x0.x.clone(),
            t0: x0.t,
            k: 0,
            errors,
        })
    }

    fn window_at(&self, i: usize) -> ErrorWindow {
        let m = self.m;
        ErrorWindow::new(self.errors[i], self.errors[i - m], self.errors[i - 2 * m])
    }

    /// Advances one interval; returns the held control.
    fn advance(&mut self) -> Result<f64, OracleError> {
        let now = self.errors.len() - 1;
        let u = (self.spec.gains.0 * self.window_at(now).vector())[0];
        let bu = &self.b * u;
        let c = self.spec.model.c();
        for j in 1..=self.m {
            self.x = rk4_step(&self.a, &bu, &self.x, self.h);
            let t = self.t0 + (self.k * self.m + j) as f64 * self.h;
            let e = (c * &self.x)[0] - self.reference.sample(t)?;
            if !e.is_finite() || e.abs() > BLOWUP {
                return Err(OracleError::Unbounded { t });
            }
            self.errors.push(e);
        }
        self.k += 1;
        Ok(u)
    }

    fn state(&self) -> PlantState {
        PlantState {
            x: self.x.clone(),
            t: self.t0 + self.k as f64 * self.spec.dt,
        }
    }
}

/// Simulates `steps` sampling intervals starting at time `x0.t` (the
/// reference is sampled from that time on). `prior` holds the `2 dt /
/// dt_fine` fine errors before the start, oldest first; empty means zero.
pub fn simulate(
    spec: &RolloutSpec<'_>,
    x0: &PlantState,
    prior: &[f64],
    steps: usize,
) -> Result<Rollout, OracleError> {
    let mut stepper = Stepper::new(spec, x0, prior)?;
    let mut states = vec![stepper.state()];
    let mut controls = Vec::with_capacity(steps);
    for _ in 0..steps {
        controls.push(stepper.advance()?);
        states.push(stepper.state());
    }
    Ok(Rollout {
        h: stepper.h,
        per_step: stepper.m,
        errors: stepper.errors,
        states,
        controls,
    })
}

/// Longest horizon a rollout sums over.
pub const MAX_HORIZON: f64 = 60.0;

/// Utility below which a whole quiet interval ends the sum.
pub const NEGLIGIBLE_UTILITY: f64 = 1e-10;

/// Truncated cost-to-go `J = sum U(E(t_i), u(t_i)) dt_fine`, with the error
/// window built from fine samples at `t_i`, `t_i - dt`, `t_i - 2 dt` and the
/// control recomputed every `dt`. The sum runs over `min(horizon, 60 s)`
/// and stops early after a sampling interval in which `U` stays below
/// 1e-10 throughout.
pub fn rollout_cost_from(
    spec: &RolloutSpec<'_>,
    weights: &CostWeights,
    x0: &PlantState,
    prior: &[f64],
    horizon: f64,
) -> Result<f64, OracleError> {
    let steps = (horizon.min(MAX_HORIZON) / spec.dt - 1e-9).ceil().max(0.0) as usize;
    let mut stepper = Stepper::new(spec, x0, prior)?;
    let m = stepper.m;
    let mut total = 0.0;
    for k in 0..steps {
        let u = stepper.advance()?;
        let mut quiet = true;
        for j in 0..m {
            let cost = utility(&stepper.window_at(2 * m + k * m + j), u, weights);
            quiet &= cost < NEGLIGIBLE_UTILITY;
            total += cost * stepper.h;
        }
        if !total.is_finite() || total > BLOWUP {
            return Err(OracleError::Unbounded {
                t: x0.t + k as f64 * spec.dt,
            });
        }
        if quiet {
            break;
        }
    }
    Ok(total)
}

/// [`rollout_cost_from`] with no disturbance and a zero error history.
#[allow(clippy::too_many_arguments)]
pub fn rollout_cost(
    model: &PlantModel,
    gains: ActorGains,
    reference: &ReferenceSpec,
    x0: &PlantState,
    horizon: f64,
    dt: f64,
    dt_fine: f64,
    weights: &CostWeights,
) -> Result<f64, OracleError> {
    let disturbance = Disturbance::identity(model.order());
    let spec = RolloutSpec {
        model,
        disturbance: &disturbance,
        gains,
        reference,
        dt,
        dt_fine,
    };
    rollout_cost_from(&spec, weights, x0, &[], horizon)
}

/// Central-difference gradient of `loss` at `w`.
pub fn fd_gradient(loss: impl Fn(&[f64]) -> f64, w: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = w.to_vec();
    (0..w.len())
        .map(|i| {
            probe[i] = w[i] + eps;
            let up = loss(&probe);
            probe[i] = w[i] - eps;
            let down = loss(&probe);
            probe[i] = w[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// Cosine of the angle between two equally long vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::discretize_zoh;
    use nalgebra::{Matrix3, RowDVector};

    fn scalar_decay() -> PlantModel {
        PlantModel::from_rows(&[vec![-1.0]], &[1.0], &[1.0]).unwrap()
    }

    #[test]
    fn zero_everything_costs_nothing() {
        let model = PlantModel::aircraft();
        let j = rollout_cost(
            &model,
            ActorGains::zeros(),
            &ReferenceSpec::constant(0.0),
            &PlantState::zeros(2),
            5.0,
            0.1,
            0.01,
            &CostWeights::identity(),
        )
        .unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn scalar_decay_matches_closed_form() {
        let w = CostWeights::semidefinite(Matrix3::from_diagonal(&[1.0, 0.0, 0.0].into()), 1.0)
            .unwrap();
        let x0 = PlantState::new(DVector::from_vec(vec![1.0]));
        for horizon in [1.0, 3.0] {
            let j = rollout_cost(
                &scalar_decay(),
                ActorGains::zeros(),
                &ReferenceSpec::constant(0.0),
                &x0,
                horizon,
                0.1,
                1e-4,
                &w,
            )
            .unwrap();
            let exact = 0.25 * (1.0 - (-2.0 * horizon).exp());
            // left sums overestimate a decaying integrand by about h
            assert!(j > exact && j - exact < 2e-4 * exact, "{j} vs {exact}");
        }
    }

    #[test]
    fn unstable_loop_is_reported() {
        let err = rollout_cost(
            &scalar_decay(),
            ActorGains::new(50.0, 0.0, 0.0),
            &ReferenceSpec::constant(1.0),
            &PlantState::zeros(1),
            60.0,
            0.1,
            0.01,
            &CostWeights::identity(),
        );
        assert!(matches!(err, Err(OracleError::Unbounded { .. })));
    }

    #[test]
    fn coarse_fine_ratio_is_checked() {
        let err = rollout_cost(
            &scalar_decay(),
            ActorGains::zeros(),
            &ReferenceSpec::constant(0.0),
            &PlantState::zeros(1),
            1.0,
            0.1,
            0.05,
            &CostWeights::identity(),
        );
        assert!(matches!(err, Err(OracleError::Step { .. })));
    }

    #[test]
    fn history_restart_reproduces_the_tail() {
        let model = PlantModel::aircraft();
        let dist = Disturbance::identity(2);
        let reference = ReferenceSpec::constant(0.0);
        let spec = RolloutSpec {
            model: &model,
            disturbance: &dist,
            gains: ActorGains::new(-0.01, 0.004, 0.0),
            reference: &reference,
            dt: 0.1,
            dt_fine: 0.01,
        };
        let x0 = PlantState::new(DVector::from_vec(vec![0.1, -0.3]));
        let full = simulate(&spec, &x0, &[], 30).unwrap();
        let restarted = simulate(&spec, &full.states[12], &full.history_before(12), 18).unwrap();
        assert_eq!(restarted.controls[..], full.controls[12..]);
        assert_eq!(restarted.states.last(), full.states.last());
    }

    #[test]
    fn cost_grows_with_horizon() {
        let model = PlantModel::aircraft();
        let x0 = PlantState::new(DVector::from_vec(vec![0.4, -2.0]));
        let cost = |horizon: f64| {
            rollout_cost(
                &model,
                ActorGains::new(-0.2, 0.1, 0.05),
                &ReferenceSpec::filtered_square(30.0, 6.0, 0.5),
                &x0,
                horizon,
                0.1,
                0.01,
                &CostWeights::identity(),
            )
            .unwrap()
        };
        let costs: Vec<f64> = [0.0, 0.1, 0.5, 1.0, 3.0, 7.0]
            .into_iter()
            .map(cost)
            .collect();
        assert_eq!(costs[0], 0.0);
        assert!(costs.windows(2).all(|w| w[1] >= w[0]), "{costs:?}");
    }

    #[test]
    fn quiet_tail_is_truncated() {
        let model = scalar_decay();
        let x0 = PlantState::new(DVector::from_vec(vec![1.0]));
        let reference = ReferenceSpec::constant(0.0);
        let cost = |horizon| {
            rollout_cost(
                &model,
                ActorGains::zeros(),
                &reference,
                &x0,
                horizon,
                0.1,
                0.01,
                &CostWeights::identity(),
            )
            .unwrap()
        };
        // e^-2t falls below the threshold long before 60 s
        assert_eq!(cost(40.0), cost(1000.0));
    }

    #[test]
    fn rk4_without_drift_is_exact() {
        let model =
            PlantModel::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]], &[1.0, -2.0], &[1.0, 0.0])
                .unwrap();
        let x0 = PlantState::new(DVector::from_vec(vec![0.5, 0.25]));
        let x = rk4_propagate(&model, &Disturbance::identity(2), &x0, 3.0, 0.1, 0.01);
        assert!((x.x[0] - 0.8).abs() < 1e-14);
        assert!((x.x[1] - (-0.35)).abs() < 1e-14);
    }

    #[test]
    fn rk4_diagonal_decay() {
        let model = PlantModel::from_rows(
            &[vec![-1.0, 0.0], vec![0.0, -2.0]],
            &[0.0, 0.0],
            &[1.0, 0.0],
        )
        .unwrap();
        let x0 = PlantState::new(DVector::from_vec(vec![1.0, 1.0]));
        let x = rk4_propagate(&model, &Disturbance::identity(2), &x0, 0.0, 0.1, 1e-3);
        assert!((x.x[0] - (-0.1f64).exp()).abs() < 1e-10);
        assert!((x.x[1] - (-0.2f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let model = PlantModel::aircraft();
        let dist = Disturbance::identity(2);
        let x0 = PlantState::new(DVector::from_vec(vec![0.2, -0.1]));
        let exact = discretize_zoh(&model, &dist, 0.1)
            .unwrap()
            .step(&x0, 1.0)
            .unwrap();
        let err = |sub: f64| (rk4_propagate(&model, &dist, &x0, 1.0, 0.1, sub).x - &exact.x).norm();
        let ratio = err(0.01) / err(0.005);
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rk4_matches_zoh_with_disturbance() {
        let model = PlantModel::aircraft();
        let dist = Disturbance {
            rho: 0.5693,
            xi: RowDVector::from_vec(vec![-0.1959, -0.0028]),
        };
        let x0 = PlantState::new(DVector::from_vec(vec![0.3, 1.0]));
        let exact = discretize_zoh(&model, &dist, 0.1)
            .unwrap()
            .step(&x0, -2.0)
            .unwrap();
        let x = rk4_propagate(&model, &dist, &x0, -2.0, 0.1, 1e-4);
        assert!((&x.x - &exact.x).norm() <= 1e-10 * exact.x.norm());
    }

    #[test]
    fn fd_gradient_of_constant_and_quadratic() {
        let w = [0.3, -1.2, 4.0];
        assert_eq!(fd_gradient(|_| 7.0, &w, 1e-6), vec![0.0; 3]);
        let g = fd_gradient(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>(), &w, 1e-5);
        for (gi, wi) in g.iter().zip(w) {
            assert!((gi - wi).abs() < 1e-9);
        }
    }

    #[test]
    fn cosine_of_parallel_vectors() {
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-15);
        assert!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]).abs() < 1e-15);
    }
}
