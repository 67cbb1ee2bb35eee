//! Controller mathematics: the three-tap error window, quadratic utility,
//! the quadratic critic over `z = [E; u]`, the linear actor, greedy gain
//! extraction and the critic/actor adaptation laws.
//!
//! Everything here is a pure function of plant outputs and reference
//! samples; no plant matrices appear anywhere in this module.

use nalgebra::{Matrix3, Matrix4, RowVector3, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default floor for the `uu` entry of the critic.
pub const DEFAULT_H_MIN: f64 = 1e-6;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("critic H_uu = {h_uu} is below the floor {h_min}")]
    SingularCritic { h_uu: f64, h_min: f64 },
    #[error("invalid critic weights: {0}")]
    InvalidCritic(String),
    #[error("invalid cost weights: {0}")]
    InvalidCost(String),
    #[error("adaptation produced non-finite weights")]
    Diverged,
}

/// `E(t) = [e(t), e(t - dt), e(t - 2 dt)]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorWindow {
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
}

impl ErrorWindow {
    pub fn new(e0: f64, e1: f64, e2: f64) -> Self {
        Self { e0, e1, e2 }
    }

    /// Window at start-up: earlier samples are taken as zero.
    pub fn starting_at(e0: f64) -> Self {
        Self::new(e0, 0.0, 0.0)
    }

    /// Shifts in a new current error, dropping the oldest sample.
    #[must_use]
    pub fn push(self, e_new: f64) -> Self {
        Self::new(e_new, self.e0, self.e1)
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.e0, self.e1, self.e2)
    }

    pub fn is_finite(&self) -> bool {
        self.e0.is_finite() && self.e1.is_finite() && self.e2.is_finite()
    }
}

/// `z = [E; u]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackedInput(pub Vector4<f64>);

impl StackedInput {
    pub fn new(window: &ErrorWindow, u: f64) -> Self {
        Self(Vector4::new(window.e0, window.e1, window.e2, u))
    }
}

/// `Q` (3x3, symmetric positive definite) and `R > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    q: Matrix3<f64>,
    r: f64,
}

impl CostWeights {
    pub fn new(q: Matrix3<f64>, r: f64) -> Result<Self, ControlError> {
        Self::checked(q, r, true)
    }

    /// Accepts positive semidefinite `Q` and `R >= 0`. Meant for evaluating
    /// costs (e.g. weighting a single tap); the learner requires [`Self::new`].
    pub fn semidefinite(q: Matrix3<f64>, r: f64) -> Result<Self, ControlError> {
        Self::checked(q, r, false)
    }

    fn checked(q: Matrix3<f64>, r: f64, strict: bool) -> Result<Self, ControlError> {
        if q.iter().any(|v| !v.is_finite()) || !r.is_finite() {
            return Err(ControlError::InvalidCost("non-finite entry".into()));
        }
        if (q - q.transpose()).abs().max() > SYMMETRY_TOLERANCE * (1.0 + q.abs().max()) {
            return Err(ControlError::InvalidCost("Q is not symmetric".into()));
        }
        let min_eig = SymmetricEigen::new(q).eigenvalues.min();
        if strict && min_eig <= 0.0 {
            return Err(ControlError::InvalidCost(format!(
                "Q must be positive definite (min eigenvalue {min_eig})"
            )));
        }
        if min_eig < -SYMMETRY_TOLERANCE * (1.0 + q.abs().max()) {
            return Err(ControlError::InvalidCost(format!(
                "Q must be positive semidefinite (min eigenvalue {min_eig})"
            )));
        }
        if r < 0.0 || (strict && r == 0.0) {
            return Err(ControlError::InvalidCost(format!(
                "R must be positive, got {r}"
            )));
        }
        Ok(Self { q, r })
    }

    pub fn identity() -> Self {
        Self {
            q: Matrix3::identity(),
            r: 1.0,
        }
    }

    pub fn q(&self) -> &Matrix3<f64> {
        &self.q
    }

    pub fn r(&self) -> f64 {
        self.r
    }
}

/// Symmetric 4x4 critic matrix, blocks `H_EE`, `H_Eu`, `H_uE`, `H_uu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticWeights {
    h: Matrix4<f64>,
    h_min: f64,
}

impl CriticWeights {
    pub fn new(h: Matrix4<f64>, h_min: f64) -> Result<Self, ControlError> {
        if !(h_min > 0.0) || !h_min.is_finite() {
            return Err(ControlError::InvalidCritic(format!(
                "floor must be positive, got {h_min}"
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::InvalidCritic("non-finite entry".into()));
        }
        if (h - h.transpose()).abs().max() > SYMMETRY_TOLERANCE * (1.0 + h.abs().max()) {
            return Err(ControlError::InvalidCritic(
                "matrix is not symmetric".into(),
            ));
        }
        if h[(3, 3)] < h_min {
            return Err(ControlError::SingularCritic {
                h_uu: h[(3, 3)],
                h_min,
            });
        }
        Ok(Self { h, h_min })
    }

    pub fn identity() -> Self {
        Self {
            h: Matrix4::identity(),
            h_min: DEFAULT_H_MIN,
        }
    }

    pub fn matrix(&self) -> &Matrix4<f64> {
        &self.h
    }

    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn h_uu(&self) -> f64 {
        self.h[(3, 3)]
    }

    pub fn h_ue(&self) -> RowVector3<f64> {
        self.h.fixed_view::<1, 3>(3, 0).into_owned()
    }

    /// Symmetrizes and applies the `H_uu` floor.
    fn project(mut h: Matrix4<f64>, h_min: f64) -> Result<Self, ControlError> {
        h = (h + h.transpose()) * 0.5;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(ControlError::Diverged);
        }
        if h[(3, 3)] < h_min {
            h[(3, 3)] = h_min;
        }
        Ok(Self { h, h_min })
    }
}

/// Row of control gains `[K0, K_dt, K_2dt]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorGains(pub RowVector3<f64>);

impl ActorGains {
    pub fn new(k0: f64, k1: f64, k2: f64) -> Self {
        Self(RowVector3::new(k0, k1, k2))
    }

    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Shape of the adaptation error that drives both update laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Signed residual: the gradient of the half squared adaptation error.
    #[default]
    Residual,
    /// The half squared adaptation error itself multiplies the regressor.
    AsPrinted,
}

impl std::str::FromStr for UpdateMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "residual" => Ok(Self::Residual),
            "as_printed" => Ok(Self::AsPrinted),
            other => Err(format!(
                "unknown update mode {other:?} (residual | as_printed)"
            )),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Residual => "residual",
            Self::AsPrinted => "as_printed",
        })
    }
}

/// How an adaptation error is turned into a weight step.
///
/// With `normalize` set, the critic step is divided by `(1 + |z|^2)^2` and
/// the actor step by `1 + |E|^2`, which keeps a fixed rate stable whatever
/// the signal magnitudes are.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LearningRule {
    pub mode: UpdateMode,
    pub normalize: bool,
}

impl LearningRule {
    fn shape(&self, residual: f64) -> f64 {
        match self.mode {
            UpdateMode::Residual => residual,
            UpdateMode::AsPrinted => 0.5 * residual * residual,
        }
    }
}

/// `U = 1/2 (E' Q E + u R u)`.
pub fn utility(window: &ErrorWindow, u: f64, weights: &CostWeights) -> f64 {
    let e = window.vector();
    0.5 * (e.dot(&(weights.q * e)) + u * weights.r * u)
}

/// `V = 1/2 z' H z` with `z = [E; u]`.
pub fn value(critic: &CriticWeights, window: &ErrorWindow, u: f64) -> f64 {
    let z = StackedInput::new(window, u).0;
    0.5 * z.dot(&(critic.h * z))
}

/// `u = K E`.
pub fn policy(actor: &ActorGains, window: &ErrorWindow) -> f64 {
    actor.0.dot(&window.vector().transpose())
}

/// Gains minimizing the critic over `u`: `K* = -H_uu^-1 H_uE`.
pub fn greedy_gains(critic: &CriticWeights) -> Result<ActorGains, ControlError> {
    let h_uu = critic.h_uu();
    if !(h_uu >= critic.h_min) {
        return Err(ControlError::SingularCritic {
            h_uu,
            h_min: critic.h_min,
        });
    }
    Ok(ActorGains(-critic.h_ue() / h_uu))
}

/// Integral Bellman target `V~ = int U + V(next)`.
pub fn critic_target(utility_integral: f64, next_value: f64) -> f64 {
    utility_integral + next_value
}

/// One critic adaptation step towards `target`.
///
/// The residual is `V(E, u) - target`; the step is along `-z z'`. The
/// result is symmetrized and its `H_uu` entry floored.
pub fn update_critic(
    critic: &CriticWeights,
    window: &ErrorWindow,
    u: f64,
    target: f64,
    rate: f64,
    rule: LearningRule,
) -> Result<CriticWeights, ControlError> {
    let z = StackedInput::new(window, u).0;
    let residual = value(critic, window, u) - target;
    let mut gain = rate * rule.shape(residual);
    if rule.normalize {
        let n = 1.0 + z.norm_squared();
        gain /= n * n;
    }
    if !gain.is_finite() {
        return Err(ControlError::Diverged);
    }
    if gain == 0.0 {
        return Ok(*critic);
    }
    CriticWeights::project(critic.h - z * z.transpose() * gain, critic.h_min)
}

/// One actor adaptation step pulling the applied control `u_hat` towards
/// the greedy control of the (already updated) critic.
pub fn update_actor(
    actor: &ActorGains,
    u_hat: f64,
    window: &ErrorWindow,
    critic: &CriticWeights,
    rate: f64,
    rule: LearningRule,
) -> Result<ActorGains, ControlError> {
    let target = policy(&greedy_gains(critic)?, window);
    let e = window.vector();
    let mut gain = rate * rule.shape(u_hat - target);
    if rule.normalize {
        gain /= 1.0 + e.norm_squared();
    }
    let next = ActorGains(actor.0 - e.transpose() * gain);
    if !next.is_finite() {
        return Err(ControlError::Diverged);
    }
    Ok(next)
}

/// True once the last `window + 1` successive critic changes are all within
/// `tolerance` (Frobenius norm); needs at least `window + 2` entries.
pub fn check_convergence(history: &[CriticWeights], window: usize, tolerance: f64) -> bool {
    if window < 1 || history.len() < window + 2 {
        return false;
    }
    history[history.len() - (window + 2)..]
        .windows(2)
        .all(|w| (w[1].h - w[0].h).norm() <= tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const PLAIN: LearningRule = LearningRule {
        mode: UpdateMode::Residual,
        normalize: false,
    };

    fn critic(h: Matrix4<f64>) -> CriticWeights {
        CriticWeights::new(h, DEFAULT_H_MIN).unwrap()
    }

    #[test]
    fn push_shifts() {
        let w = ErrorWindow::default().push(1.0);
        assert_eq!(w, ErrorWindow::new(1.0, 0.0, 0.0));
        let w = w.push(2.0);
        assert_eq!(w, ErrorWindow::new(2.0, 1.0, 0.0));
        assert_eq!(w.push(3.0), ErrorWindow::new(3.0, 2.0, 1.0));
    }

    #[test]
    fn utility_examples() {
        let w = CostWeights::identity();
        assert_eq!(utility(&ErrorWindow::default(), 0.0, &w), 0.0);
        assert_eq!(utility(&ErrorWindow::new(1.0, 0.0, 0.0), 0.0, &w), 0.5);
        assert_eq!(utility(&ErrorWindow::new(1.0, 1.0, 1.0), 2.0, &w), 3.5);
    }

    #[test]
    fn value_examples() {
        let id = critic(Matrix4::identity());
        assert_eq!(value(&id, &ErrorWindow::default(), 0.0), 0.0);
        assert_eq!(value(&id, &ErrorWindow::new(1.0, 0.0, 0.0), 1.0), 1.0);
        let two = critic(Matrix4::identity() * 2.0);
        assert_eq!(value(&two, &ErrorWindow::new(1.0, 2.0, 0.0), 0.0), 5.0);
    }

    #[test]
    fn policy_examples() {
        let w = ErrorWindow::new(3.0, -1.0, 4.0);
        assert_eq!(policy(&ActorGains::zeros(), &w), 0.0);
        assert_eq!(
            policy(
                &ActorGains::new(1.0, 2.0, 3.0),
                &ErrorWindow::new(1.0, 1.0, 1.0)
            ),
            6.0
        );
        assert_eq!(
            policy(
                &ActorGains::new(-1.5, 0.0, 0.0),
                &ErrorWindow::new(2.0, 5.0, 7.0)
            ),
            -3.0
        );
    }

    #[test]
    fn greedy_examples() {
        assert_eq!(
            greedy_gains(&CriticWeights::identity()).unwrap(),
            ActorGains::zeros()
        );
        let mut h = Matrix4::identity();
        h[(3, 3)] = 2.0;
        h[(3, 0)] = 1.0;
        h[(0, 3)] = 1.0;
        assert_eq!(
            greedy_gains(&critic(h)).unwrap(),
            ActorGains::new(-0.5, 0.0, 0.0)
        );
    }

    #[test]
    fn greedy_rejects_floor_violation() {
        let mut h = Matrix4::identity();
        h[(3, 3)] = 1e-9;
        assert!(matches!(
            CriticWeights::new(h, DEFAULT_H_MIN),
            Err(ControlError::SingularCritic { .. })
        ));
        // bypass the constructor to exercise the runtime guard
        let c = CriticWeights {
            h,
            h_min: DEFAULT_H_MIN,
        };
        assert!(matches!(
            greedy_gains(&c),
            Err(ControlError::SingularCritic { .. })
        ));
        let a = update_actor(
            &ActorGains::zeros(),
            0.0,
            &ErrorWindow::default(),
            &c,
            0.5,
            PLAIN,
        );
        assert!(matches!(a, Err(ControlError::SingularCritic { .. })));
    }

    #[test]
    fn target_examples() {
        assert_eq!(critic_target(0.0, 0.0), 0.0);
        assert_eq!(critic_target(0.05, 1.0), 1.05);
    }

    #[test]
    fn critic_hand_step() {
        let c = CriticWeights::identity();
        let next =
            update_critic(&c, &ErrorWindow::new(1.0, 0.0, 0.0), 0.0, 0.0, 0.5, PLAIN).unwrap();
        let mut expected = Matrix4::identity();
        expected[(0, 0)] = 0.75;
        assert_eq!(*next.matrix(), expected);
    }

    #[test]
    fn critic_as_printed_step() {
        // residual 0.5 -> squared error 0.125 -> H00 = 1 - 0.5 * 0.125
        let rule = LearningRule {
            mode: UpdateMode::AsPrinted,
            normalize: false,
        };
        let next = update_critic(
            &CriticWeights::identity(),
            &ErrorWindow::new(1.0, 0.0, 0.0),
            0.0,
            0.0,
            0.5,
            rule,
        )
        .unwrap();
        assert_eq!(next.matrix()[(0, 0)], 0.9375);
    }

    #[test]
    fn critic_normalized_step() {
        let rule = LearningRule {
            mode: UpdateMode::Residual,
            normalize: true,
        };
        let next = update_critic(
            &CriticWeights::identity(),
            &ErrorWindow::new(1.0, 0.0, 0.0),
            0.0,
            0.0,
            0.5,
            rule,
        )
        .unwrap();
        assert_eq!(next.matrix()[(0, 0)], 1.0 - 0.25 / 4.0);
    }

    #[test]
    fn critic_floor_and_symmetry() {
        // large positive residual along u pushes H_uu below the floor
        let next = update_critic(
            &CriticWeights::identity(),
            &ErrorWindow::new(0.0, 0.0, 0.0),
            2.0,
            -10.0,
            0.5,
            PLAIN,
        )
        .unwrap();
        assert_eq!(next.h_uu(), DEFAULT_H_MIN);
        assert_eq!(*next.matrix(), next.matrix().transpose());
    }

    #[test]
    fn actor_hand_step() {
        let mut h = Matrix4::identity();
        h[(3, 0)] = -1.0;
        h[(0, 3)] = -1.0;
        let c = CriticWeights {
            h,
            h_min: DEFAULT_H_MIN,
        };
        // greedy gains [1, 0, 0] give target control 1 at E = [1, 0, 0]
        let next = update_actor(
            &ActorGains::zeros(),
            0.0,
            &ErrorWindow::new(1.0, 0.0, 0.0),
            &c,
            0.5,
            PLAIN,
        )
        .unwrap();
        assert_eq!(next, ActorGains::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn updates_are_noops_at_zero_rate_or_residual() {
        let c = CriticWeights::identity();
        let w = ErrorWindow::new(1.0, -2.0, 0.5);
        let v = value(&c, &w, 0.3);
        assert_eq!(update_critic(&c, &w, 0.3, v, 0.5, PLAIN).unwrap(), c);
        assert_eq!(update_critic(&c, &w, 0.3, v + 7.0, 0.0, PLAIN).unwrap(), c);
        let k = ActorGains::new(0.1, 0.2, 0.3);
        // identity critic has zero greedy gains, so u_hat = 0 has zero residual
        assert_eq!(update_actor(&k, 0.0, &w, &c, 0.5, PLAIN).unwrap(), k);
        assert_eq!(update_actor(&k, 4.0, &w, &c, 0.0, PLAIN).unwrap(), k);
        assert_eq!(
            update_actor(&k, 4.0, &ErrorWindow::default(), &c, 0.5, PLAIN).unwrap(),
            k
        );
    }

    #[test]
    fn convergence_examples() {
        let c = CriticWeights::identity();
        let l = 10;
        assert!(check_convergence(&vec![c; l + 2], l, 1e-8));
        assert!(!check_convergence(&vec![c; l + 1], l, 1e-8));
        assert!(!check_convergence(&[], l, 1e-8));
        let mut jumped = vec![c; l + 5];
        let mut h = Matrix4::identity();
        h[(0, 0)] += 2e-8;
        jumped[l] = critic(h);
        assert!(!check_convergence(&jumped, l, 1e-8));
        // jump older than the window is ignored
        jumped.extend(vec![c; l + 2]);
        assert!(check_convergence(&jumped, l, 1e-8));
    }

    #[test]
    fn cost_weight_validation() {
        assert!(CostWeights::new(Matrix3::identity(), 0.0).is_err());
        assert!(CostWeights::new(Matrix3::identity() * -1.0, 1.0).is_err());
        let mut q = Matrix3::identity();
        q[(0, 1)] = 0.3;
        assert!(CostWeights::new(q, 1.0).is_err());
        q[(1, 0)] = 0.3;
        assert!(CostWeights::new(q, 1.0).is_ok());
    }

    fn window() -> impl Strategy<Value = ErrorWindow> {
        prop::array::uniform3(-50.0f64..50.0).prop_map(|e| ErrorWindow::new(e[0], e[1], e[2]))
    }

    fn spd_critic() -> impl Strategy<Value = CriticWeights> {
        prop::array::uniform16(-1.0f64..1.0).prop_map(|v| {
            let m = Matrix4::from_row_slice(&v);
            critic(m * m.transpose() + Matrix4::identity() * 0.1)
        })
    }

    proptest! {
        #[test]
        fn utility_positive_definite(w in window(), u in -50.0f64..50.0) {
            let val = utility(&w, u, &CostWeights::identity());
            prop_assert!(val >= 0.0);
            prop_assert_eq!(val == 0.0, w == ErrorWindow::default() && u == 0.0);
        }

        #[test]
        fn value_positive_definite(c in spd_critic(), w in window(), u in -50.0f64..50.0) {
            let v = value(&c, &w, u);
            prop_assert!(v > 0.0 || (w == ErrorWindow::default() && u == 0.0));
            prop_assert_eq!(value(&c, &ErrorWindow::default(), 0.0), 0.0);
        }

        #[test]
        fn greedy_scale_invariant(c in spd_critic(), s in 0.01f64..100.0) {
            let scaled = critic(c.matrix() * s);
            let a = greedy_gains(&c).unwrap().0;
            let b = greedy_gains(&scaled).unwrap().0;
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + a.norm()));
        }

        #[test]
        fn policy_linear(k in prop::array::uniform3(-5.0f64..5.0), w in window(), s in -10.0f64..10.0) {
            let k = ActorGains::new(k[0], k[1], k[2]);
            let scaled = ErrorWindow::new(w.e0 * s, w.e1 * s, w.e2 * s);
            let lhs = policy(&k, &scaled);
            let rhs = s * policy(&k, &w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn updates_keep_invariants(c in spd_critic(), w in window(), u in -20.0f64..20.0,
                                   target in -100.0f64..100.0, rate in 0.0f64..1.0,
                                   normalize: bool, printed: bool) {
            let rule = LearningRule {
                mode: if printed { UpdateMode::AsPrinted } else { UpdateMode::Residual },
                normalize,
            };
            if let Ok(next) = update_critic(&c, &w, u, target, rate, rule) {
                prop_assert_eq!(*next.matrix(), next.matrix().transpose());
                prop_assert!(next.h_uu() >= next.h_min());
                prop_assert!(update_actor(&ActorGains::zeros(), u, &w, &next, rate, rule).is_ok());
            }
        }
    }
}
