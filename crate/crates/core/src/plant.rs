//! Continuous-time LTI plant, matched input disturbances and exact
//! zero-order-hold discretization.
//!
//! The plant is single-input single-output: `x' = A x + B u`, `y = C x`.
//! A matched disturbance `(rho, xi)` turns the dynamics into
//! `x' = A x + B (rho u + xi x)`, i.e. the effective pair
//! `(A + B xi, rho B)`.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

use crate::linalg::expm;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("inconsistent plant dimensions: {0}")]
    Dimension(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
    #[error("disturbance schedule: {0}")]
    Schedule(String),
    #[error("discretization produced non-finite matrices")]
    NumericFailure,
    #[error("plant state diverged at t = {t}")]
    Diverged { t: f64 },
}

fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}

/// State-space triple `(A, B, C)` of a SISO plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: RowDVector<f64>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, c: RowDVector<f64>) -> Result<Self, PlantError> {
        if !a.is_square() {
            return Err(PlantError::Dimension(format!(
                "A is {}x{}, expected square",
                a.nrows(),
                a.ncols()
            )));
        }
        let n = a.nrows();
        if n == 0 {
            return Err(PlantError::Dimension("empty state".into()));
        }
        if b.len() != n {
            return Err(PlantError::Dimension(format!(
                "B has {} rows, A has {n}",
                b.len()
            )));
        }
        if c.len() != n {
            return Err(PlantError::Dimension(format!(
                "C has {} columns, A has {n}",
                c.len()
            )));
        }
        if !all_finite(a.iter()) {
            return Err(PlantError::NonFinite("A"));
        }
        if !all_finite(b.iter()) {
            return Err(PlantError::NonFinite("B"));
        }
        if !all_finite(c.iter()) {
            return Err(PlantError::NonFinite("C"));
        }
        Ok(Self { a, b, c })
    }

    /// Builds a model from row-major slices.
    pub fn from_rows(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<Self, PlantError> {
        let n = a.len();
        if a.iter().any(|row| row.len() != n) {
            return Err(PlantError::Dimension("A rows have unequal length".into()));
        }
        let flat: Vec<f64> = a.iter().flatten().copied().collect();
        Self::new(
            DMatrix::from_row_slice(n, n, &flat),
            DVector::from_column_slice(b),
            RowDVector::from_row_slice(c),
        )
    }

    /// Linearized longitudinal aircraft model: states are angle of attack
    /// (rad) and pitch rate (rad/s), the input is elevator deflection and the
    /// output is vertical acceleration (m/s^2).
    pub fn aircraft() -> Self {
        Self::from_rows(
            &[vec![-8.76, 0.954], vec![-177.0, -9.92]],
            &[-0.697, -168.0],
            &[-0.8, -0.04],
        )
        .expect("aircraft preset is well formed")
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &RowDVector<f64> {
        &self.c
    }

    /// `y = C x`.
    pub fn output(&self, state: &PlantState) -> f64 {
        self.c.dot(&state.x.transpose())
    }

    /// Effective drift and input map under a matched disturbance.
    pub fn effective(&self, disturbance: &Disturbance) -> (DMatrix<f64>, DVector<f64>) {
        let a_eff = &self.a + &self.b * &disturbance.xi;
        let b_eff = &self.b * disturbance.rho;
        (a_eff, b_eff)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub x: DVector<f64>,
    /// Seconds since the start of the run.
    pub t: f64,
}

impl PlantState {
    pub fn new(x: DVector<f64>) -> Self {
        Self { x, t: 0.0 }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }
}

/// Matched input disturbance: the plant sees `rho u + xi x` instead of `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Disturbance {
    pub rho: f64,
    pub xi: RowDVector<f64>,
}

impl Disturbance {
    pub fn identity(n: usize) -> Self {
        Self {
            rho: 1.0,
            xi: RowDVector::zeros(n),
        }
    }

    pub fn new(rho: f64, xi: &[f64]) -> Self {
        Self {
            rho,
            xi: RowDVector::from_row_slice(xi),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSegment {
    pub start_step: usize,
    pub disturbance: Disturbance,
}

/// Piecewise-constant disturbance indexed by controller step.
///
/// Segments are ordered by start step and the first one starts at step 0,
/// so every step maps to exactly one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSchedule {
    segments: Vec<DisturbanceSegment>,
}

impl DisturbanceSchedule {
    pub fn new(segments: Vec<DisturbanceSegment>) -> Result<Self, PlantError> {
        let first = segments
            .first()
            .ok_or_else(|| PlantError::Schedule("schedule is empty".into()))?;
        if first.start_step != 0 {
            return Err(PlantError::Schedule(format!(
                "first segment starts at step {}, expected 0",
                first.start_step
            )));
        }
        for pair in segments.windows(2) {
            if pair[1].start_step <= pair[0].start_step {
                return Err(PlantError::Schedule(format!(
                    "segment starts must increase ({} then {})",
                    pair[0].start_step, pair[1].start_step
                )));
            }
        }
        for seg in &segments {
            let d = &seg.disturbance;
            if d.rho == 0.0 || !d.rho.is_finite() || !all_finite(d.xi.iter()) {
                return Err(PlantError::Schedule(format!(
                    "segment at step {} has invalid gain (rho = {})",
                    seg.start_step, d.rho
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            segments: vec![DisturbanceSegment {
                start_step: 0,
                disturbance: Disturbance::identity(n),
            }],
        }
    }

    /// Matched disturbance of the aircraft test with switches at steps 60
    /// and 120.
    pub fn aircraft_case2() -> Self {
        Self::new(vec![
            DisturbanceSegment {
                start_step: 0,
                disturbance: Disturbance::new(0.8052, &[-0.2760, -0.0858]),
            },
            DisturbanceSegment {
                start_step: 60,
                disturbance: Disturbance::new(0.5693, &[-0.1959, -0.0028]),
            },
            DisturbanceSegment {
                start_step: 120,
                disturbance: Disturbance::new(0.4187, &[-0.5324, -0.0002]),
            },
        ])
        .expect("case 2 schedule is well formed")
    }

    pub fn segments(&self) -> &[DisturbanceSegment] {
        &self.segments
    }

    pub fn segment_index(&self, k: usize) -> usize {
        self.segments.partition_point(|s| s.start_step <= k) - 1
    }

    /// Disturbance in effect at step `k`; a switch takes effect at its
    /// start step.
    pub fn disturbance_at(&self, k: usize) -> &Disturbance {
        &self.segments[self.segment_index(k)].disturbance
    }

    pub fn check_order(&self, n: usize) -> Result<(), PlantError> {
        for seg in &self.segments {
            if seg.disturbance.xi.len() != n {
                return Err(PlantError::Dimension(format!(
                    "disturbance at step {} has {} gains for a plant of order {n}",
                    seg.start_step,
                    seg.disturbance.xi.len()
                )));
            }
        }
        Ok(())
    }
}

/// Exact sampled-data form of the plant for a fixed hold interval.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePlant {
    pub ad: DMatrix<f64>,
    pub bd: DVector<f64>,
    pub dt: f64,
}

/// Zero-order-hold discretization of the disturbed plant.
///
/// `exp([[A_eff, B_eff], [0, 0]] dt)` holds `Ad` in its top-left block and
/// `Bd` in its top-right column, so `A_eff` is never inverted.
pub fn discretize_zoh(
    model: &PlantModel,
    disturbance: &Disturbance,
    dt: f64,
) -> Result<DiscretePlant, PlantError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PlantError::InvalidStep(dt));
    }
    let n = model.order();
    if disturbance.xi.len() != n {
        return Err(PlantError::Dimension(format!(
            "disturbance has {} gains for a plant of order {n}",
            disturbance.xi.len()
        )));
    }
    let (a_eff, b_eff) = model.effective(disturbance);

    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_eff * dt));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b_eff * dt));
    let e = expm(&aug);

    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, 1)).column(0).into_owned();
    if !all_finite(ad.iter()) || !all_finite(bd.iter()) {
        return Err(PlantError::NumericFailure);
    }
    Ok(DiscretePlant { ad, bd, dt })
}

impl DiscretePlant {
    /// One hold interval: `x+ = Ad x + Bd u`, `t+ = t + dt`.
    pub fn step(&self, state: &PlantState, u: f64) -> Result<PlantState, PlantError> {
        let t = state.t + self.dt;
        if !u.is_finite() {
            return Err(PlantError::Diverged { t });
        }
        let x = &self.ad * &state.x + &self.bd * u;
        if !all_finite(x.iter()) {
            return Err(PlantError::Diverged { t });
        }
        Ok(PlantState { x, t })
    }
}
