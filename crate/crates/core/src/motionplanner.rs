//! Reference-velocity synthesis: a CLF-CBF QP around nominal dynamical
//! systems, a time-varying CBF QP for reach tasks, and linear mixing between
//! successive behaviors.

use nalgebra::{DMatrix, DVector, Matrix3};
use thiserror::Error;

use crate::dslib::{NominalDs, ReferenceState, Vec3, DEFAULT_SNAP_RADIUS};
use crate::qpsolver::{QpError, QpProblem, QpSolver, QpStatus};

pub const DEFAULT_LAMBDA: f64 = 100.0;
pub const DEFAULT_CLF_GAIN: f64 = 2.0;
pub const DEFAULT_CBF_GAIN: f64 = 5.0;
pub const DEFAULT_REACH_GAIN: f64 = 1.0;
pub const DEFAULT_MIX_DURATION: f64 = 0.67;
pub const DEFAULT_BOX_SHARPNESS: f64 = 50.0;
const BETA_SNAP: f64 = 1e-12;
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MotionError {
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("CLF matrix must be symmetric positive definite")]
    ClfNotPositiveDefinite,
    #[error("no behavior is bound to atom {0}")]
    UnknownBehavior(usize),
    #[error(transparent)]
    Qp(#[from] QpError),
}

fn positive(name: &'static str, value: f64) -> Result<f64, MotionError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(MotionError::InvalidParameter { name, value })
    }
}

/// Quadratic Lyapunov function `V(e) = eᵀPe` with `α(V) = c_V·V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfSpec {
    p: Matrix3<f64>,
    pub alpha_gain: f64,
}

impl ClfSpec {
    pub fn new(p: Matrix3<f64>, alpha_gain: f64) -> Result<Self, MotionError> {
        positive("alpha_gain", alpha_gain)?;
        if (p - p.transpose()).amax() > 1e-12 * p.amax().max(1.0) || p.symmetric_eigenvalues().min() <= 0.0 {
            return Err(MotionError::ClfNotPositiveDefinite);
        }
        Ok(ClfSpec { p, alpha_gain })
    }

    pub fn identity(alpha_gain: f64) -> Result<Self, MotionError> {
        Self::new(Matrix3::identity(), alpha_gain)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.p
    }

    pub fn value(&self, e: &Vec3) -> f64 {
        e.dot(&(self.p * e))
    }

    pub fn gradient(&self, e: &Vec3) -> Vec3 {
        self.p * e * 2.0
    }
}

impl Default for ClfSpec {
    fn default() -> Self {
        ClfSpec { p: Matrix3::identity(), alpha_gain: DEFAULT_CLF_GAIN }
    }
}

/// Static barrier shapes; the safe set is `B(x) ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum Barrier {
    /// `nᵀx − d`
    Halfspace { normal: Vec3, offset: f64 },
    /// `‖x − c‖² − r²`
    SphereKeepout { center: Vec3, radius: f64 },
    /// Smooth minimum of the six face distances of an axis-aligned box.
    Box { lower: Vec3, upper: Vec3, sharpness: f64 },
}

impl Barrier {
    pub fn value(&self, x: &Vec3) -> f64 {
        match self {
            Barrier::Halfspace { normal, offset } => normal.dot(x) - offset,
            Barrier::SphereKeepout { center, radius } => (x - center).norm_squared() - radius * radius,
            Barrier::Box { lower, upper, sharpness } => {
                let faces = box_faces(x, lower, upper);
                let m = faces.iter().copied().fold(f64::INFINITY, f64::min);
                let sum: f64 = faces.iter().map(|h| (-sharpness * (h - m)).exp()).sum();
                m - sum.ln() / sharpness
            }
        }
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        match self {
            Barrier::Halfspace { normal, .. } => *normal,
            Barrier::SphereKeepout { center, .. } => (x - center) * 2.0,
            Barrier::Box { lower, upper, sharpness } => {
                let faces = box_faces(x, lower, upper);
                let m = faces.iter().copied().fold(f64::INFINITY, f64::min);
                let weights: Vec<f64> = faces.iter().map(|h| (-sharpness * (h - m)).exp()).collect();
                let total: f64 = weights.iter().sum();
                let mut g = Vec3::zeros();
                for axis in 0..3 {
                    g[axis] = (weights[2 * axis] - weights[2 * axis + 1]) / total;
                }
                g
            }
        }
    }
}

fn box_faces(x: &Vec3, lower: &Vec3, upper: &Vec3) -> [f64; 6] {
    [x[0] - lower[0], upper[0] - x[0], x[1] - lower[1], upper[1] - x[1], x[2] - lower[2], upper[2] - x[2]]
}

/// A static barrier with its linear class-K gain `γ(B) = c_B·B`.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticCbf {
    pub name: String,
    pub barrier: Barrier,
    pub gamma_gain: f64,
}

impl StaticCbf {
    pub fn new(name: impl Into<String>, barrier: Barrier, gamma_gain: f64) -> Result<Self, MotionError> {
        positive("gamma_gain", gamma_gain)?;
        match &barrier {
            Barrier::Halfspace { normal, .. } if normal.norm() == 0.0 => {
                return Err(MotionError::InvalidParameter { name: "halfspace normal", value: 0.0 });
            }
            Barrier::SphereKeepout { radius, .. } => {
                positive("keep-out radius", *radius)?;
            }
            Barrier::Box { lower, upper, sharpness } => {
                positive("box sharpness", *sharpness)?;
                for axis in 0..3 {
                    positive("box extent", upper[axis] - lower[axis])?;
                }
            }
            _ => {}
        }
        Ok(StaticCbf { name: name.into(), barrier, gamma_gain })
    }

    pub fn value(&self, x: &Vec3) -> f64 {
        self.barrier.value(x)
    }

    /// Constraint row on `v` for drift `f`: `∇Bᵀv ≥ −c_B·B − ∇Bᵀf`.
    fn row(&self, x: &Vec3, drift: &Vec3) -> (Vec3, f64) {
        let g = self.barrier.gradient(x);
        (g, -self.gamma_gain * self.barrier.value(x) - g.dot(drift))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaProfile {
    Linear,
    Exponential,
}

impl GammaProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            GammaProfile::Linear => "linear",
            GammaProfile::Exponential => "exponential",
        }
    }
}

/// Reach barrier `B(x,t) = ε² − ‖x−x*‖² + γ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingCbf {
    pub target: Vec3,
    pub epsilon: f64,
    pub t_start: f64,
    pub t_deadline: f64,
    pub profile: GammaProfile,
    /// `‖x0 − x*‖²`; zero for a degenerate (already satisfied) task.
    pub initial_sq: f64,
}

/// Builds the reach barrier for a task starting at `x0` at time `t_start`,
/// with deadline `t_start + ‖x0−x*‖/v_u`.
pub fn make_reach_cbf(x0: &Vec3, target: &Vec3, epsilon: f64, v_u: f64, profile: GammaProfile, t_start: f64) -> Result<TimeVaryingCbf, MotionError> {
    positive("epsilon", epsilon)?;
    positive("v_u", v_u)?;
    let dist = (x0 - target).norm();
    if dist <= epsilon {
        return Ok(TimeVaryingCbf { target: *target, epsilon, t_start, t_deadline: t_start, profile, initial_sq: 0.0 });
    }
    Ok(TimeVaryingCbf { target: *target, epsilon, t_start, t_deadline: t_start + dist / v_u, profile, initial_sq: dist * dist })
}

impl TimeVaryingCbf {
    pub fn is_degenerate(&self) -> bool {
        self.initial_sq == 0.0
    }

    fn span(&self) -> f64 {
        self.t_deadline - self.t_start
    }

    /// Moves the deadline down to the last multiple of `dt` after `t_start`
    /// so that it falls on a simulation tick.
    pub fn snapped(mut self, dt: f64) -> Self {
        if self.is_degenerate() || dt <= 0.0 {
            return self;
        }
        let steps = (self.span() / dt + 1e-9).floor().max(1.0);
        self.t_deadline = self.t_start + steps * dt;
        self
    }

    pub fn gamma(&self, t: f64) -> f64 {
        if self.is_degenerate() || t >= self.t_deadline {
            return 0.0;
        }
        let t = t.max(self.t_start);
        let span = self.span();
        let g = match self.profile {
            GammaProfile::Linear => self.initial_sq * (self.t_deadline - t) / span,
            GammaProfile::Exponential => {
                let tail = (-span).exp();
                self.initial_sq * ((-(t - self.t_start)).exp() - tail) / (1.0 - tail)
            }
        };
        g.max(0.0)
    }

    /// `dγ/dt`, zero outside `[t_start, t_deadline]`. At the deadline itself
    /// the left limit is returned so that integrator stages landing on the
    /// kink still see the ramp.
    pub fn gamma_rate(&self, t: f64) -> f64 {
        if self.is_degenerate() || t > self.t_deadline + TIME_EPS || t < self.t_start {
            return 0.0;
        }
        let span = self.span();
        match self.profile {
            GammaProfile::Linear => -self.initial_sq / span,
            GammaProfile::Exponential => -self.initial_sq * (-(t - self.t_start)).exp() / (1.0 - (-span).exp()),
        }
    }

    pub fn value(&self, x: &Vec3, t: f64) -> f64 {
        self.epsilon * self.epsilon - (x - self.target).norm_squared() + self.gamma(t)
    }

    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        (self.target - x) * 2.0
    }

    pub fn partial_t(&self, t: f64) -> f64 {
        self.gamma_rate(t)
    }

    pub fn satisfied_at(&self, x: &Vec3) -> bool {
        (x - self.target).norm() <= self.epsilon
    }
}

/// Linear blend from a frozen velocity to the incoming behavior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixState {
    pub frozen_ref: Vec3,
    pub switch_time: f64,
    pub duration: f64,
}

impl MixState {
    pub fn beta(&self, t: f64) -> f64 {
        let b = ((t - self.switch_time) / self.duration).clamp(0.0, 1.0);
        if 1.0 - b <= BETA_SNAP {
            1.0
        } else {
            b
        }
    }

    pub fn mix(&self, t: f64, incoming: &Vec3) -> Vec3 {
        let b = self.beta(t);
        if b == 1.0 {
            *incoming
        } else {
            self.frozen_ref * (1.0 - b) + incoming * b
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClfCbfOutput {
    pub u: Vec3,
    pub eta: f64,
    pub clf_value: f64,
    pub barrier_values: Vec<f64>,
    pub status: QpStatus,
}

/// Solves `min ‖v‖² + λη²` subject to the static CBF rows and the relaxed
/// CLF row around the reference.
pub fn clf_cbf_step(
    solver: &mut QpSolver,
    x: &Vec3,
    reference: &ReferenceState,
    ds: &NominalDs,
    barriers: &[StaticCbf],
    clf: &ClfSpec,
    lambda: f64,
) -> Result<ClfCbfOutput, MotionError> {
    positive("lambda", lambda)?;
    let f = ds.eval(x);
    let e = x - reference.x_star;
    let v_val = clf.value(&e);
    let grad_v = clf.gradient(&e);
    let m = barriers.len() + 1;
    let mut a = DMatrix::zeros(m, 4);
    let mut b = DVector::zeros(m);
    for (i, cbf) in barriers.iter().enumerate() {
        let (g, rhs) = cbf.row(x, &f);
        a.view_mut((i, 0), (1, 3)).copy_from(&g.transpose());
        b[i] = rhs;
    }
    let k = barriers.len();
    a.view_mut((k, 0), (1, 3)).copy_from(&(-grad_v).transpose());
    a[(k, 3)] = 1.0;
    b[k] = grad_v.dot(&(f - reference.xdot_star)) + clf.alpha_gain * v_val;
    let hessian = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 2.0, 2.0, 2.0 * lambda]));
    let sol = solver.solve(&QpProblem::new(hessian, DVector::zeros(4), a, b))?;
    Ok(ClfCbfOutput {
        u: Vec3::new(sol.z[0], sol.z[1], sol.z[2]),
        eta: sol.z[3],
        clf_value: v_val,
        barrier_values: barriers.iter().map(|c| c.value(x)).collect(),
        status: sol.status,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TvCbfOutput {
    pub u: Vec3,
    pub barrier_value: f64,
    pub status: QpStatus,
}

/// Solves `min ‖v‖²` subject to the reach row
/// `∇ₓBᵀ(f + v) + ∂B/∂t ≥ −c·B`, plus optional static rows.
pub fn tv_cbf_step(
    solver: &mut QpSolver,
    x: &Vec3,
    t: f64,
    field: Option<&NominalDs>,
    cbf: &TimeVaryingCbf,
    gamma_gain: f64,
    statics: &[StaticCbf],
) -> Result<TvCbfOutput, MotionError> {
    positive("gamma_gain", gamma_gain)?;
    let f = field.map(|ds| ds.eval(x)).unwrap_or_else(Vec3::zeros);
    let grad = cbf.gradient(x);
    let bval = cbf.value(x, t);
    if grad.norm() == 0.0 && statics.is_empty() {
        return Ok(TvCbfOutput { u: Vec3::zeros(), barrier_value: bval, status: QpStatus::Optimal });
    }
    let m = statics.len() + 1;
    let mut a = DMatrix::zeros(m, 3);
    let mut b = DVector::zeros(m);
    a.view_mut((0, 0), (1, 3)).copy_from(&grad.transpose());
    b[0] = -gamma_gain * bval - cbf.partial_t(t) - grad.dot(&f);
    if grad.norm() == 0.0 {
        b[0] = b[0].min(0.0);
    }
    for (i, s) in statics.iter().enumerate() {
        let (g, rhs) = s.row(x, &f);
        a.view_mut((i + 1, 0), (1, 3)).copy_from(&g.transpose());
        b[i + 1] = rhs;
    }
    let sol = solver.solve(&QpProblem::new(DMatrix::identity(3, 3) * 2.0, DVector::zeros(3), a, b))?;
    Ok(TvCbfOutput { u: Vec3::new(sol.z[0], sol.z[1], sol.z[2]), barrier_value: bval, status: sol.status })
}

/// Projects `desired` onto the static CBF constraints with zero drift.
fn safety_filter(solver: &mut QpSolver, x: &Vec3, desired: &Vec3, statics: &[StaticCbf]) -> Result<(Vec3, QpStatus), MotionError> {
    let rows: Vec<(Vec3, f64)> = statics.iter().map(|s| s.row(x, &Vec3::zeros())).collect();
    if rows.iter().all(|(g, rhs)| g.dot(desired) >= *rhs) {
        return Ok((*desired, QpStatus::Optimal));
    }
    let mut a = DMatrix::zeros(rows.len(), 3);
    let mut b = DVector::zeros(rows.len());
    for (i, (g, rhs)) in rows.iter().enumerate() {
        a.view_mut((i, 0), (1, 3)).copy_from(&g.transpose());
        b[i] = *rhs;
    }
    let g = DVector::from_iterator(3, desired.iter().map(|v| -2.0 * v));
    let sol = solver.solve(&QpProblem::new(DMatrix::identity(3, 3) * 2.0, g, a, b))?;
    Ok((Vec3::new(sol.z[0], sol.z[1], sol.z[2]), sol.status))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReachTask {
    pub target: Vec3,
    pub epsilon: f64,
    pub v_u: f64,
    pub profile: GammaProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Behavior {
    Nominal(NominalDs),
    Reach(ReachTask),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionConfig {
    pub lambda: f64,
    pub clf: ClfSpec,
    pub barriers: Vec<StaticCbf>,
    pub reach_gain: f64,
    pub mix_duration: f64,
    pub snap_radius: f64,
    /// Also enforce the static barriers in reach-task QPs.
    pub reach_static_barriers: bool,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig {
            lambda: DEFAULT_LAMBDA,
            clf: ClfSpec::default(),
            barriers: Vec::new(),
            reach_gain: DEFAULT_REACH_GAIN,
            mix_duration: DEFAULT_MIX_DURATION,
            snap_radius: DEFAULT_SNAP_RADIUS,
            reach_static_barriers: false,
        }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<(), MotionError> {
        positive("lambda", self.lambda)?;
        positive("reach_gain", self.reach_gain)?;
        positive("mix_duration", self.mix_duration)?;
        positive("snap_radius", self.snap_radius)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Mode {
    Idle,
    Nominal { behavior: usize, reference: ReferenceState },
    /// `provisional` while mixing in; the barrier is re-anchored when the
    /// blend completes.
    Reach { behavior: usize, cbf: TimeVaryingCbf, provisional: bool },
}

/// Diagnostics for one motion tick, evaluated at the start of the tick.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSample {
    pub velocity: Vec3,
    pub eta: f64,
    /// CLF value, NaN outside nominal behaviors.
    pub clf_value: f64,
    pub barrier_values: Vec<f64>,
    /// Reach barrier value, NaN unless an anchored reach task is active.
    pub reach_value: f64,
    pub reach_deadline: f64,
    pub status: QpStatus,
    /// Set when some QP of the tick failed and the previous velocity was held.
    pub fallback: bool,
    pub beta: f64,
}

struct Eval {
    velocity: Vec3,
    eta: f64,
    clf_value: f64,
    status: QpStatus,
}

/// Motion planner state for one robot.
#[derive(Debug, Clone)]
pub struct MotionPlanner {
    config: MotionConfig,
    behaviors: Vec<Option<Behavior>>,
    active: Option<usize>,
    mode: Mode,
    mix: Option<MixState>,
    last_velocity: Vec3,
    solver: QpSolver,
    started: bool,
}

impl MotionPlanner {
    /// `behaviors[i]` is the binding of atom `i` (None for atoms without one).
    pub fn new(config: MotionConfig, behaviors: Vec<Option<Behavior>>) -> Result<Self, MotionError> {
        config.validate()?;
        Ok(MotionPlanner { config, behaviors, active: None, mode: Mode::Idle, mix: None, last_velocity: Vec3::zeros(), solver: QpSolver::new(), started: false })
    }

    pub fn config(&self) -> &MotionConfig {
        &self.config
    }

    pub fn active(&self) -> Option<usize> {
        self.active
    }

    pub fn behavior(&self, atom: usize) -> Option<&Behavior> {
        self.behaviors.get(atom).and_then(|b| b.as_ref())
    }

    pub fn mix_state(&self) -> Option<&MixState> {
        self.mix.as_ref()
    }

    pub fn reference(&self) -> Option<&ReferenceState> {
        match &self.mode {
            Mode::Nominal { reference, .. } => Some(reference),
            _ => None,
        }
    }

    /// The reach barrier of the active behavior, once anchored.
    pub fn reach_cbf(&self) -> Option<&TimeVaryingCbf> {
        match &self.mode {
            Mode::Reach { cbf, provisional: false, .. } => Some(cbf),
            _ => None,
        }
    }

    pub fn last_velocity(&self) -> Vec3 {
        self.last_velocity
    }

    /// Starts following `behavior` at `(x, t)`. The outgoing reference
    /// velocity is frozen and blended out over the mixing duration; the very
    /// first activation starts without a blend.
    pub fn switch_to(&mut self, behavior: Option<usize>, x: &Vec3, t: f64, dt: f64) -> Result<(), MotionError> {
        if behavior == self.active {
            return Ok(());
        }
        let frozen = if self.active.is_some() || self.mix.is_some() {
            let reference = self.reference().cloned();
            self.compose(x, t, reference.as_ref())?.0.velocity
        } else {
            Vec3::zeros()
        };
        self.mode = match behavior {
            None => Mode::Idle,
            Some(i) => match self.behavior(i).ok_or(MotionError::UnknownBehavior(i))? {
                Behavior::Nominal(ds) => Mode::Nominal { behavior: i, reference: ds.project(x) },
                Behavior::Reach(task) => {
                    let cbf = make_reach_cbf(x, &task.target, task.epsilon, task.v_u, task.profile, t)?.snapped(dt);
                    Mode::Reach { behavior: i, cbf, provisional: self.started }
                }
            },
        };
        self.active = behavior;
        self.mix = self.started.then_some(MixState { frozen_ref: frozen, switch_time: t, duration: self.config.mix_duration });
        self.started = true;
        Ok(())
    }

    fn behavior_velocity(&mut self, x: &Vec3, t: f64, reference: Option<&ReferenceState>) -> Result<Eval, MotionError> {
        match &self.mode {
            Mode::Idle => Ok(Eval { velocity: Vec3::zeros(), eta: 0.0, clf_value: f64::NAN, status: QpStatus::Optimal }),
            Mode::Nominal { behavior, reference: own } => {
                let Some(Behavior::Nominal(ds)) = self.behaviors[*behavior].as_ref() else { unreachable!("nominal mode bound to a nominal behavior") };
                let reference = reference.unwrap_or(own);
                let out = clf_cbf_step(&mut self.solver, x, reference, ds, &self.config.barriers, &self.config.clf, self.config.lambda)?;
                Ok(Eval { velocity: ds.eval(x) + out.u, eta: out.eta, clf_value: out.clf_value, status: out.status })
            }
            Mode::Reach { cbf, .. } => {
                let statics: &[StaticCbf] = if self.config.reach_static_barriers { &self.config.barriers } else { &[] };
                let out = tv_cbf_step(&mut self.solver, x, t, None, cbf, self.config.reach_gain, statics)?;
                Ok(Eval { velocity: out.u, eta: 0.0, clf_value: f64::NAN, status: out.status })
            }
        }
    }

    /// Reference velocity at `(x, t)`; returns the evaluation and β.
    fn compose(&mut self, x: &Vec3, t: f64, reference: Option<&ReferenceState>) -> Result<(Eval, f64), MotionError> {
        let mut eval = self.behavior_velocity(x, t, reference)?;
        let Some(mix) = self.mix else { return Ok((eval, 1.0)) };
        let beta = mix.beta(t);
        if beta < 1.0 {
            eval.velocity = mix.mix(t, &eval.velocity);
            if !self.config.barriers.is_empty() {
                let (v, status) = safety_filter(&mut self.solver, x, &eval.velocity, &self.config.barriers)?;
                eval.velocity = v;
                if status != QpStatus::Optimal {
                    eval.status = status;
                }
            }
        }
        Ok((eval, beta))
    }

    fn stage_velocity(&mut self, x: &Vec3, t: f64, reference: Option<&ReferenceState>, fallback: &mut bool) -> Result<Vec3, MotionError> {
        let (eval, _) = self.compose(x, t, reference)?;
        if eval.status == QpStatus::Optimal {
            Ok(eval.velocity)
        } else {
            *fallback = true;
            Ok(self.last_velocity)
        }
    }

    /// Advances one motion tick of length `dt` from `(x, t)` with RK4,
    /// integrating the robot and the nominal reference jointly. With
    /// `held` the robot does not move but the controller keeps running.
    pub fn tick(&mut self, x: &Vec3, t: f64, dt: f64, held: bool) -> Result<(Vec3, MotionSample), MotionError> {
        self.start_of_tick(x, t, dt)?;
        let reference = self.reference().cloned();
        let (eval, beta) = self.compose(x, t, reference.as_ref())?;
        let mut fallback = eval.status != QpStatus::Optimal;
        let v1 = if fallback { self.last_velocity } else { eval.velocity };
        let barrier_values = self.config.barriers.iter().map(|c| c.value(x)).collect();
        let (reach_value, reach_deadline) = match self.reach_cbf() {
            Some(cbf) => (cbf.value(x, t), cbf.t_deadline),
            None => (f64::NAN, f64::NAN),
        };

        let ds = match &self.mode {
            Mode::Nominal { behavior, .. } => match &self.behaviors[*behavior] {
                Some(Behavior::Nominal(ds)) => Some(ds.clone()),
                _ => None,
            },
            _ => None,
        };
        let stage_ref = |p: Vec3| ds.as_ref().map(|ds| ReferenceState { x_star: p, xdot_star: ds.eval(&p), phase: 0.0 });
        let p1 = reference.as_ref().map(|r| r.x_star).unwrap_or_else(Vec3::zeros);
        let r1 = reference.as_ref().map(|r| r.xdot_star).unwrap_or_else(Vec3::zeros);
        let p2 = p1 + r1 * (dt / 2.0);
        let ref2 = stage_ref(p2);
        let r2 = ref2.as_ref().map(|r| r.xdot_star).unwrap_or_else(Vec3::zeros);
        let p3 = p1 + r2 * (dt / 2.0);
        let ref3 = stage_ref(p3);
        let r3 = ref3.as_ref().map(|r| r.xdot_star).unwrap_or_else(Vec3::zeros);
        let p4 = p1 + r3 * dt;
        let ref4 = stage_ref(p4);
        let r4 = ref4.as_ref().map(|r| r.xdot_star).unwrap_or_else(Vec3::zeros);

        let x_next = if held {
            *x
        } else {
            let k1 = v1;
            let k2 = self.stage_velocity(&(x + k1 * (dt / 2.0)), t + dt / 2.0, ref2.as_ref(), &mut fallback)?;
            let k3 = self.stage_velocity(&(x + k2 * (dt / 2.0)), t + dt / 2.0, ref3.as_ref(), &mut fallback)?;
            let k4 = self.stage_velocity(&(x + k3 * dt), t + dt, ref4.as_ref(), &mut fallback)?;
            x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        };
        if let (Mode::Nominal { reference, .. }, Some(ds)) = (&mut self.mode, ds.as_ref()) {
            let x_star = p1 + (r1 + r2 * 2.0 + r3 * 2.0 + r4) * (dt / 6.0);
            *reference = ReferenceState { x_star, xdot_star: ds.eval(&x_star), phase: reference.phase };
        }
        self.last_velocity = v1;
        let sample = MotionSample {
            velocity: v1,
            eta: eval.eta,
            clf_value: eval.clf_value,
            barrier_values,
            reach_value,
            reach_deadline,
            status: eval.status,
            fallback,
            beta,
        };
        Ok((x_next, sample))
    }

    /// Re-projects a drifted reference, ends a finished blend and anchors a
    /// provisional reach barrier.
    fn start_of_tick(&mut self, x: &Vec3, t: f64, dt: f64) -> Result<(), MotionError> {
        let snap = self.config.snap_radius;
        if let Mode::Nominal { behavior, reference } = &mut self.mode {
            if let Some(Behavior::Nominal(ds)) = &self.behaviors[*behavior] {
                if (x - reference.x_star).norm() > snap {
                    *reference = ds.project(x);
                }
            }
        }
        if let Some(mix) = self.mix {
            if mix.beta(t) >= 1.0 {
                self.mix = None;
            }
        }
        if self.mix.is_none() {
            if let Mode::Reach { behavior, cbf, provisional } = &mut self.mode {
                if *provisional {
                    let Some(Behavior::Reach(task)) = &self.behaviors[*behavior] else { unreachable!("reach mode bound to a reach task") };
                    *cbf = make_reach_cbf(x, &task.target, task.epsilon, task.v_u, task.profile, t)?.snapped(dt);
                    *provisional = false;
                }
            }
        }
        Ok(())
    }
}
