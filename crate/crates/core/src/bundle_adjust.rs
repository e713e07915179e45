//! Sparse Levenberg–Marquardt bundle adjustment over camera poses and 3D points.
//!
//! Intrinsics are held fixed. Each free camera contributes six parameters, a
//! rotation increment `ω` applied on the left (`R ← exp(ω) R`) followed by a
//! translation increment (`t ← t + δt`); each point contributes three. Point
//! blocks are eliminated with the Schur complement before solving for the
//! camera update.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, SMatrix, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::BaError;
use crate::geometry::{distortion_factor, nearest_rotation, orthonormality_error, rotation_exp, skew, CameraModel, RigidTransform};
use crate::triangulation::Observation;

pub type Matrix2x6 = SMatrix<f64, 2, 6>;

const DAMPING_FAILURE_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaCamera {
    pub model: CameraModel,
    pub pose: RigidTransform,
    /// Gauge-fixed cameras keep their pose and contribute no parameters.
    pub fixed: bool,
}

/// How the global scale freedom is handled.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ScaleGauge {
    #[default]
    Free,
    /// After every accepted step the reconstruction is rescaled so that the
    /// optical center of `camera` lies at `length` from the origin. Fixed
    /// cameras must sit at the origin for this to be a pure gauge action.
    FixedBaseline { camera: usize, length: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaProblem {
    pub cameras: Vec<BaCamera>,
    pub points: Vec<Vector3<f64>>,
    pub observations: Vec<Observation>,
    pub scale_gauge: ScaleGauge,
}

impl BaProblem {
    pub fn validate(&self) -> Result<(), BaError> {
        let mut seen = vec![0usize; self.points.len()];
        for (i, o) in self.observations.iter().enumerate() {
            if o.camera >= self.cameras.len() || o.point >= self.points.len() {
                return Err(BaError::InvalidProblem(format!("observation {i} has out-of-range indices")));
            }
            seen[o.point] += 1;
        }
        if let Some(p) = seen.iter().position(|&n| n < 2) {
            return Err(BaError::InvalidProblem(format!("point {p} is observed fewer than twice")));
        }
        if let ScaleGauge::FixedBaseline { camera, length } = self.scale_gauge {
            let cam = self
                .cameras
                .get(camera)
                .ok_or_else(|| BaError::InvalidProblem("scale gauge camera out of range".into()))?;
            if cam.fixed || !(length > 0.0) {
                return Err(BaError::InvalidProblem("scale gauge needs a free camera and a positive length".into()));
            }
            if self.cameras.iter().any(|c| c.fixed && c.pose.translation.norm() > 1e-12) {
                return Err(BaError::InvalidProblem("scale gauge requires fixed cameras at the origin".into()));
            }
        }
        Ok(())
    }

    /// Column offset of each camera's parameter block (`None` for fixed cameras).
    pub fn camera_offsets(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.cameras
            .iter()
            .map(|c| {
                if c.fixed {
                    None
                } else {
                    next += 6;
                    Some(next - 6)
                }
            })
            .collect()
    }

    pub fn free_camera_count(&self) -> usize {
        self.cameras.iter().filter(|c| !c.fixed).count()
    }

    pub fn parameter_count(&self) -> usize {
        6 * self.free_camera_count() + 3 * self.points.len()
    }

    /// `Σ ‖residual‖²`.
    pub fn cost(&self) -> Result<f64, BaError> {
        Ok(residual_vector(self)?.norm_squared())
    }

    pub fn mean_reprojection_error(&self) -> Result<f64, BaError> {
        let r = residual_vector(self)?;
        if self.observations.is_empty() {
            return Ok(0.0);
        }
        Ok(r.as_slice().chunks(2).map(|c| c[0].hypot(c[1])).sum::<f64>() / self.observations.len() as f64)
    }

    /// Applies a parameter increment laid out as in [`BaProblem::camera_offsets`], points last.
    pub fn apply_update(&self, delta: &DVector<f64>) -> BaProblem {
        let mut out = self.clone();
        let offsets = self.camera_offsets();
        for (cam, off) in out.cameras.iter_mut().zip(&offsets) {
            if let Some(o) = off {
                let omega = Vector3::new(delta[*o], delta[o + 1], delta[o + 2]);
                let dt = Vector3::new(delta[o + 3], delta[o + 4], delta[o + 5]);
                let mut r = rotation_exp(&omega) * cam.pose.rotation;
                if orthonormality_error(&r) > 1e-12 {
                    r = nearest_rotation(&r);
                }
                cam.pose = RigidTransform { rotation: r, translation: cam.pose.translation + dt };
            }
        }
        let base = 6 * self.free_camera_count();
        for (j, p) in out.points.iter_mut().enumerate() {
            *p += Vector3::new(delta[base + 3 * j], delta[base + 3 * j + 1], delta[base + 3 * j + 2]);
        }
        out
    }

    /// Rescales all free translations and all points by `s`.
    pub fn rescale(&mut self, s: f64) {
        for c in self.cameras.iter_mut().filter(|c| !c.fixed) {
            c.pose.translation *= s;
        }
        for p in self.points.iter_mut() {
            *p *= s;
        }
    }

    fn apply_scale_gauge(&mut self) {
        if let ScaleGauge::FixedBaseline { camera, length } = self.scale_gauge {
            let current = self.cameras[camera].pose.translation.norm();
            if current > 0.0 {
                self.rescale(length / current);
            }
        }
    }

    fn state_norm(&self) -> f64 {
        let t: f64 = self.cameras.iter().filter(|c| !c.fixed).map(|c| c.pose.translation.norm_squared()).sum();
        let p: f64 = self.points.iter().map(|p| p.norm_squared()).sum();
        (t + p).sqrt()
    }
}

/// Projection of `x` and its derivatives with respect to the camera chart and the point.
fn project_with_jacobian(
    cam: &CameraModel,
    pose: &RigidTransform,
    x: &Vector3<f64>,
) -> Option<(Vector2<f64>, Matrix2x6, Matrix2x3<f64>)> {
    let rx = pose.rotation * x;
    let pc = rx + pose.translation;
    if pc.z <= 1e-12 {
        return None;
    }
    let iz = 1.0 / pc.z;
    let (u, v) = (pc.x * iz, pc.y * iz);
    let r2 = u * u + v * v;
    let k = &cam.kappa;
    let f = distortion_factor(r2, k);
    let df = k[0] + r2 * (2.0 * k[1] + 3.0 * k[2] * r2);
    let pixel = Vector2::new(cam.fx * f * u + cam.cx, cam.fy * f * v + cam.cy);

    let d_norm = Matrix2x3::new(iz, 0.0, -u * iz, 0.0, iz, -v * iz);
    let d_dist = nalgebra::Matrix2::new(f + 2.0 * u * u * df, 2.0 * u * v * df, 2.0 * u * v * df, f + 2.0 * v * v * df);
    let d_pix = nalgebra::Matrix2::new(cam.fx, 0.0, 0.0, cam.fy);
    let a = d_pix * d_dist * d_norm;

    let mut jc = Matrix2x6::zeros();
    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(a * -skew(&rx)));
    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&a);
    Some((pixel, jc, a * pose.rotation))
}

/// Stacked residuals `P̂ⁱ(X̂ⱼ) − xⁱⱼ`, two rows per observation.
pub fn residual_vector(problem: &BaProblem) -> Result<DVector<f64>, BaError> {
    let mut r = DVector::zeros(2 * problem.observations.len());
    for (i, o) in problem.observations.iter().enumerate() {
        let cam = &problem.cameras[o.camera];
        let pc = cam.pose.transform_point(&problem.points[o.point]);
        if pc.z <= 1e-12 {
            return Err(BaError::BehindCamera { observation: i });
        }
        let px = crate::geometry::project(&cam.model, &cam.pose, &problem.points[o.point])
            .map_err(|_| BaError::BehindCamera { observation: i })?;
        r[2 * i] = px.x - o.pixel.x;
        r[2 * i + 1] = px.y - o.pixel.y;
    }
    Ok(r)
}

/// One observation's two Jacobian rows: a camera block (absent when gauge-fixed) and a point block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservationBlock {
    pub camera_column: Option<usize>,
    pub camera: Matrix2x6,
    pub point_column: usize,
    pub point: Matrix2x3<f64>,
}

/// Block-sparse Jacobian, one [`ObservationBlock`] per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub blocks: Vec<ObservationBlock>,
    pub columns: usize,
}

impl SparseJacobian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(2 * self.blocks.len(), self.columns);
        for (i, b) in self.blocks.iter().enumerate() {
            if let Some(c) = b.camera_column {
                j.view_mut((2 * i, c), (2, 6)).copy_from(&b.camera);
            }
            j.view_mut((2 * i, b.point_column), (2, 3)).copy_from(&b.point);
        }
        j
    }

    /// `Jᵀ r`.
    pub fn gradient(&self, residuals: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.columns);
        for (i, b) in self.blocks.iter().enumerate() {
            let r = Vector2::new(residuals[2 * i], residuals[2 * i + 1]);
            if let Some(c) = b.camera_column {
                let gc = b.camera.transpose() * r;
                for k in 0..6 {
                    g[c + k] += gc[k];
                }
            }
            let gp = b.point.transpose() * r;
            for k in 0..3 {
                g[b.point_column + k] += gp[k];
            }
        }
        g
    }
}

/// Analytic Jacobian of [`residual_vector`].
pub fn jacobian(problem: &BaProblem) -> Result<SparseJacobian, BaError> {
    let offsets = problem.camera_offsets();
    let base = 6 * problem.free_camera_count();
    let blocks = problem
        .observations
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let cam = &problem.cameras[o.camera];
            let (_, jc, jp) = project_with_jacobian(&cam.model, &cam.pose, &problem.points[o.point])
                .ok_or(BaError::BehindCamera { observation: i })?;
            Ok(ObservationBlock {
                camera_column: offsets[o.camera],
                camera: jc,
                point_column: base + 3 * o.point,
                point: jp,
            })
        })
        .collect::<Result<Vec<_>, BaError>>()?;
    Ok(SparseJacobian { blocks, columns: problem.parameter_count() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LinearSolver {
    #[default]
    Schur,
    /// Full normal equations; for cross-checking the Schur path.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub function_tolerance: f64,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    pub linear_solver: LinearSolver,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            function_tolerance: 1e-10,
            initial_damping: 1e-3,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            linear_solver: LinearSolver::Schur,
        }
    }
}

impl SolverConfig {
    fn validate(&self) -> Result<(), BaError> {
        let ok = self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0
            && self.function_tolerance >= 0.0
            && self.initial_damping > 0.0
            && self.damping_increase > 1.0
            && self.damping_decrease > 1.0;
        if ok {
            Ok(())
        } else {
            Err(BaError::InvalidProblem("solver tolerances and damping factors must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    GradientTolerance,
    StepTolerance,
    FunctionTolerance,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    /// Linear solves performed, accepted or not.
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub initial_mean_error: f64,
    pub final_mean_error: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub final_gradient_norm: f64,
    pub termination: Termination,
}

struct NormalEquations {
    gradient: DVector<f64>,
    camera_blocks: Vec<Matrix6<f64>>,
    point_blocks: Vec<Matrix3<f64>>,
    // Per point: (free camera index, Jcᵀ Jp) couplings.
    couplings: Vec<Vec<(usize, Matrix6x3<f64>)>>,
}

fn build_normal_equations(problem: &BaProblem, jac: &SparseJacobian, residuals: &DVector<f64>) -> NormalEquations {
    let nc = problem.free_camera_count();
    let mut ne = NormalEquations {
        gradient: jac.gradient(residuals),
        camera_blocks: vec![Matrix6::zeros(); nc],
        point_blocks: vec![Matrix3::zeros(); problem.points.len()],
        couplings: vec![Vec::new(); problem.points.len()],
    };
    for (b, o) in jac.blocks.iter().zip(&problem.observations) {
        ne.point_blocks[o.point] += b.point.transpose() * b.point;
        if let Some(col) = b.camera_column {
            let c = col / 6;
            ne.camera_blocks[c] += b.camera.transpose() * b.camera;
            let w = b.camera.transpose() * b.point;
            let list = &mut ne.couplings[o.point];
            match list.iter_mut().find(|(ci, _)| *ci == c) {
                Some((_, acc)) => *acc += w,
                None => list.push((c, w)),
            }
        }
    }
    ne
}

fn solve_schur(ne: &NormalEquations, lambda: f64) -> Option<DVector<f64>> {
    let nc = ne.camera_blocks.len();
    let np = ne.point_blocks.len();
    let base = 6 * nc;
    let mut s = DMatrix::<f64>::zeros(base, base);
    let mut rhs = DVector::<f64>::zeros(base);
    for (c, u) in ne.camera_blocks.iter().enumerate() {
        s.view_mut((6 * c, 6 * c), (6, 6)).copy_from(&(u + Matrix6::identity() * lambda));
        rhs.rows_mut(6 * c, 6).copy_from(&(-ne.gradient.rows(6 * c, 6)));
    }
    let mut v_inv = Vec::with_capacity(np);
    for (p, v) in ne.point_blocks.iter().enumerate() {
        let inv = (v + Matrix3::identity() * lambda).try_inverse()?;
        let gp: Vector3<f64> = ne.gradient.fixed_rows::<3>(base + 3 * p).into_owned();
        for (c1, w1) in &ne.couplings[p] {
            let wv = w1 * inv;
            let add: Vector6<f64> = wv * gp;
            let mut seg = rhs.fixed_rows_mut::<6>(6 * c1);
            seg += add;
            for (c2, w2) in &ne.couplings[p] {
                let mut blk = s.view_mut((6 * c1, 6 * c2), (6, 6));
                blk -= wv * w2.transpose();
            }
        }
        v_inv.push(inv);
    }
    let dc = if base > 0 { s.cholesky()?.solve(&rhs) } else { DVector::zeros(0) };
    let mut delta = DVector::zeros(base + 3 * np);
    delta.rows_mut(0, base).copy_from(&dc);
    for (p, inv) in v_inv.iter().enumerate() {
        let mut b: Vector3<f64> = -ne.gradient.fixed_rows::<3>(base + 3 * p).into_owned();
        for (c, w) in &ne.couplings[p] {
            let dcc: Vector6<f64> = dc.fixed_rows::<6>(6 * c).into_owned();
            b -= w.transpose() * dcc;
        }
        delta.fixed_rows_mut::<3>(base + 3 * p).copy_from(&(inv * b));
    }
    if delta.iter().all(|v| v.is_finite()) {
        Some(delta)
    } else {
        None
    }
}

fn solve_dense(jac: &SparseJacobian, gradient: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let j = jac.to_dense();
    let mut h = j.transpose() * &j;
    for i in 0..h.nrows() {
        h[(i, i)] += lambda;
    }
    let delta = h.cholesky()?.solve(&(-gradient));
    delta.iter().all(|v| v.is_finite()).then_some(delta)
}

/// Runs Levenberg–Marquardt from the problem's current state.
pub fn solve(problem: &BaProblem, cfg: &SolverConfig) -> Result<(BaProblem, BaReport), BaError> {
    cfg.validate()?;
    problem.validate()?;
    let mut state = problem.clone();
    let mut residuals = residual_vector(&state)?;
    let mut cost = residuals.norm_squared();
    if !cost.is_finite() {
        return Err(BaError::InvalidProblem("initial cost is not finite".into()));
    }
    let initial_cost = cost;
    let initial_mean_error = state.mean_reprojection_error()?;
    let mut history = vec![cost];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;
    let mut accepted = 0;
    let mut jac = jacobian(&state)?;
    let mut ne = build_normal_equations(&state, &jac, &residuals);
    let termination = loop {
        let grad_norm = ne.gradient.amax();
        if grad_norm < cfg.gradient_tolerance {
            break Termination::GradientTolerance;
        }
        if iterations >= cfg.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let delta = match cfg.linear_solver {
            LinearSolver::Schur => solve_schur(&ne, lambda),
            LinearSolver::Dense => solve_dense(&jac, &ne.gradient, lambda),
        };
        let Some(delta) = delta else {
            if lambda >= DAMPING_FAILURE_LIMIT {
                return Err(BaError::NumericalFailure);
            }
            lambda *= cfg.damping_increase;
            continue;
        };
        if delta.norm() <= cfg.step_tolerance * (state.state_norm() + cfg.step_tolerance) {
            break Termination::StepTolerance;
        }
        let mut trial = state.apply_update(&delta);
        // Points pushed behind a camera make the trial infeasible.
        let trial_cost = residual_vector(&trial).map(|r| r.norm_squared()).unwrap_or(f64::INFINITY);
        if trial_cost < cost {
            trial.apply_scale_gauge();
            state = trial;
            residuals = residual_vector(&state)?;
            let previous = cost;
            cost = residuals.norm_squared();
            history.push(cost);
            accepted += 1;
            lambda = (lambda / cfg.damping_decrease).max(1e-15);
            jac = jacobian(&state)?;
            ne = build_normal_equations(&state, &jac, &residuals);
            if previous - cost < cfg.function_tolerance * previous {
                break Termination::FunctionTolerance;
            }
        } else {
            lambda *= cfg.damping_increase;
        }
    };
    let final_gradient_norm = ne.gradient.amax();
    if accepted == 0 && lambda >= DAMPING_FAILURE_LIMIT && final_gradient_norm >= cfg.gradient_tolerance {
        return Err(BaError::NoDescent);
    }
    let final_mean_error = state.mean_reprojection_error()?;
    let report = BaReport {
        iterations,
        accepted_steps: accepted,
        initial_cost,
        final_cost: cost,
        initial_mean_error,
        final_mean_error,
        cost_history: history,
        final_gradient_norm,
        termination,
    };
    Ok((state, report))
}
