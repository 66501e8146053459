//! Analytic nominal dynamical systems and reference tracking along them.
//!
//! Three families cover the behaviors used by the bundled scenarios:
//! a point attractor, a planar limit cycle and a line patrol. The line patrol
//! is an elongated elliptic cycle whose major axis spans the segment, so the
//! reference sweeps back and forth along it without needing internal state.

use nalgebra::Vector3;

pub type Vec3 = Vector3<f64>;

/// Default distance beyond which the reference is re-projected onto the
/// attractor instead of being integrated.
pub const DEFAULT_SNAP_RADIUS: f64 = 0.10;

/// Planar elliptic cycle `c + a cos(θ) u + b sin(θ) w` with `w = n × u`,
/// traversed at angular rate ω and attracting at rate `gain`.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipticCycle {
    pub center: Vec3,
    pub u: Vec3,
    pub w: Vec3,
    pub normal: Vec3,
    pub semi_major: f64,
    pub semi_minor: f64,
    pub rate: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NominalDs {
    PointAttractor { target: Vec3, gain: f64 },
    Cycle(EllipticCycle),
}

/// Reference point flowing along the nominal field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub x_star: Vec3,
    pub xdot_star: Vec3,
    /// Orbit angle for cycles, 0 for attractors.
    pub phase: f64,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DsError {
    #[error("{0} must be positive")]
    NonPositive(&'static str),
    #[error("{0} must be a nonzero vector")]
    ZeroVector(&'static str),
    #[error("segment endpoints must span a direction orthogonal to the plane normal")]
    DegenerateSegment,
}

fn positive(value: f64, name: &'static str) -> Result<f64, DsError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DsError::NonPositive(name))
    }
}

/// In-plane unit vector closest to `hint`, falling back to other axes when
/// `hint` is nearly normal to the plane.
fn in_plane_axis(normal: &Vec3, hint: Vec3) -> Vec3 {
    for candidate in [hint, Vec3::x(), Vec3::y()] {
        let v = candidate - normal * normal.dot(&candidate);
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
    unreachable!("x and y cannot both be parallel to a unit normal")
}

impl NominalDs {
    pub fn point_attractor(target: Vec3, gain: f64) -> Result<Self, DsError> {
        Ok(NominalDs::PointAttractor { target, gain: positive(gain, "gain")? })
    }

    /// Circular orbit of `radius` around `center` in the plane with `normal`,
    /// counter-clockwise about the normal at `rate` rad/s.
    pub fn planar_limit_cycle(center: Vec3, radius: f64, rate: f64, normal: Vec3, gain: f64) -> Result<Self, DsError> {
        if normal.norm() < 1e-12 {
            return Err(DsError::ZeroVector("normal"));
        }
        let n = normal.normalize();
        let u = in_plane_axis(&n, Vec3::x());
        let radius = positive(radius, "radius")?;
        Ok(NominalDs::Cycle(EllipticCycle {
            center,
            u,
            w: n.cross(&u),
            normal: n,
            semi_major: radius,
            semi_minor: radius,
            rate,
            gain: positive(gain, "gain")?,
        }))
    }

    /// Back-and-forth sweep between `start` and `end` at peak speed `speed`,
    /// with lateral half-width `sweep` in the plane with `normal`.
    pub fn line_patrol(start: Vec3, end: Vec3, speed: f64, sweep: f64, normal: Vec3, gain: f64) -> Result<Self, DsError> {
        if normal.norm() < 1e-12 {
            return Err(DsError::ZeroVector("normal"));
        }
        let n = normal.normalize();
        let axis = end - start;
        let axis = axis - n * n.dot(&axis);
        if axis.norm() < 1e-9 {
            return Err(DsError::DegenerateSegment);
        }
        let half = axis.norm() / 2.0;
        let u = axis.normalize();
        Ok(NominalDs::Cycle(EllipticCycle {
            center: (start + end) / 2.0,
            u,
            w: n.cross(&u),
            normal: n,
            semi_major: half,
            semi_minor: positive(sweep, "sweep")?,
            rate: positive(speed, "speed")? / half,
            gain: positive(gain, "gain")?,
        }))
    }

    /// Nominal velocity at `x`.
    pub fn eval(&self, x: &Vec3) -> Vec3 {
        match self {
            NominalDs::PointAttractor { target, gain } => (target - x) * *gain,
            NominalDs::Cycle(c) => c.eval(x),
        }
    }

    /// Global Lipschitz constant of [`NominalDs::eval`].
    ///
    /// Attractor: the gain. Cycle: in normalized orbit coordinates the
    /// rotation contributes ω and the radial contraction at most the gain;
    /// the anisotropic scaling back to metres multiplies by the axis ratio.
    pub fn lipschitz(&self) -> f64 {
        match self {
            NominalDs::PointAttractor { gain, .. } => *gain,
            NominalDs::Cycle(c) => {
                let ratio = c.semi_major.max(c.semi_minor) / c.semi_major.min(c.semi_minor);
                ratio * (c.rate.abs() + c.gain)
            }
        }
    }

    /// Nearest attractor point to `x` with its nominal velocity.
    pub fn project(&self, x: &Vec3) -> ReferenceState {
        match self {
            NominalDs::PointAttractor { target, .. } => {
                ReferenceState { x_star: *target, xdot_star: Vec3::zeros(), phase: 0.0 }
            }
            NominalDs::Cycle(c) => {
                let phase = c.nearest_phase(x);
                let x_star = c.point(phase);
                ReferenceState { x_star, xdot_star: c.eval(&x_star), phase }
            }
        }
    }

    /// Moves the reference along the field by `dt` with one RK4 step, or
    /// re-projects it when the robot at `x` has drifted farther than
    /// `snap_radius` from it.
    pub fn advance(&self, r: &ReferenceState, dt: f64, x: &Vec3, snap_radius: f64) -> ReferenceState {
        if (x - r.x_star).norm() > snap_radius {
            return self.project(x);
        }
        let p = r.x_star;
        let k1 = self.eval(&p);
        let k2 = self.eval(&(p + k1 * (dt / 2.0)));
        let k3 = self.eval(&(p + k2 * (dt / 2.0)));
        let k4 = self.eval(&(p + k3 * dt));
        let x_star = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let phase = match self {
            NominalDs::PointAttractor { .. } => 0.0,
            NominalDs::Cycle(c) => c.phase_of(&x_star),
        };
        ReferenceState { x_star, xdot_star: self.eval(&x_star), phase }
    }
}

impl EllipticCycle {
    /// Orbit point at angle `phase`.
    pub fn point(&self, phase: f64) -> Vec3 {
        self.center + self.u * (self.semi_major * phase.cos()) + self.w * (self.semi_minor * phase.sin())
    }

    /// Normalized in-plane coordinates and height above the plane.
    fn coords(&self, x: &Vec3) -> (f64, f64, f64) {
        let d = x - self.center;
        (d.dot(&self.u) / self.semi_major, d.dot(&self.w) / self.semi_minor, d.dot(&self.normal))
    }

    fn phase_of(&self, x: &Vec3) -> f64 {
        let (p, q, _) = self.coords(x);
        if p == 0.0 && q == 0.0 {
            0.0
        } else {
            q.atan2(p)
        }
    }

    fn eval(&self, x: &Vec3) -> Vec3 {
        let (p, q, h) = self.coords(x);
        let rho = (p * p + q * q).sqrt();
        // Radial term pulls the normalized radius to 1; inside rho < 1/2 it is
        // replaced by its linear continuation to stay Lipschitz at the center.
        let radial = if rho >= 0.5 { (rho - 1.0) / rho } else { -1.0 };
        let dp = -self.rate * q - self.gain * radial * p;
        let dq = self.rate * p - self.gain * radial * q;
        self.u * (self.semi_major * dp) + self.w * (self.semi_minor * dq) - self.normal * (self.gain * h)
    }

    fn distance_sq(&self, x: &Vec3, phase: f64) -> f64 {
        (self.point(phase) - x).norm_squared()
    }

    fn nearest_phase(&self, x: &Vec3) -> f64 {
        let (p, q, _) = self.coords(x);
        if p == 0.0 && q == 0.0 {
            return 0.0;
        }
        if self.semi_major == self.semi_minor {
            return q.atan2(p);
        }
        // Coarse scan then golden-section refinement around the best sample.
        const SAMPLES: usize = 720;
        let step = std::f64::consts::TAU / SAMPLES as f64;
        let best = (0..SAMPLES)
            .map(|i| i as f64 * step - std::f64::consts::PI)
            .min_by(|a, b| self.distance_sq(x, *a).total_cmp(&self.distance_sq(x, *b)))
            .expect("samples are nonempty");
        let (mut lo, mut hi) = (best - step, best + step);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = hi - inv_phi * (hi - lo);
        let mut d = lo + inv_phi * (hi - lo);
        while hi - lo > 1e-12 {
            if self.distance_sq(x, c) < self.distance_sq(x, d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - inv_phi * (hi - lo);
            d = lo + inv_phi * (hi - lo);
        }
        let phase = (lo + hi) / 2.0;
        (phase.sin()).atan2(phase.cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle() -> NominalDs {
        NominalDs::planar_limit_cycle(Vec3::new(0.1, -0.2, 0.3), 0.1, 2.0, Vec3::z(), 3.0).unwrap()
    }

    #[test]
    fn attractor_has_equilibrium_at_target() {
        let target = Vec3::new(0.3, 0.2, 0.0);
        let ds = NominalDs::point_attractor(target, 2.0).unwrap();
        assert_eq!(ds.eval(&target), Vec3::zeros());
        assert_eq!(ds.eval(&Vec3::zeros()), target * 2.0);
    }

    #[test]
    fn on_orbit_speed_is_radius_times_rate() {
        let ds = circle();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        for k in 0..16 {
            let x = c.point(k as f64 * 0.4);
            let v = ds.eval(&x);
            assert!((v.norm() - 0.2).abs() < 1e-12);
            assert!(v.dot(&(x - c.center)).abs() < 1e-12);
        }
    }

    #[test]
    fn off_orbit_radial_pull_is_gain_times_radius() {
        let ds = circle();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        let x = c.center + c.u * 0.2;
        let radial = ds.eval(&x).dot(&c.u);
        assert!((radial + 3.0 * 0.1).abs() < 1e-12);
    }

    #[test]
    fn center_projects_to_phase_zero() {
        let ds = circle();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        let r = ds.project(&c.center);
        assert_eq!(r.phase, 0.0);
        assert!((r.x_star - c.point(0.0)).norm() < 1e-15);
        // points on the orbit project to themselves
        let on = c.point(1.3);
        assert!((ds.project(&on).x_star - on).norm() < 1e-12);
    }

    #[test]
    fn reference_advances_by_rate_times_dt() {
        let ds = circle();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        let r = ds.project(&c.point(0.5));
        let next = ds.advance(&r, 1e-3, &r.x_star, DEFAULT_SNAP_RADIUS);
        assert!((next.phase - (0.5 + 2.0e-3)).abs() < 1e-9);
        assert_eq!(next.xdot_star, ds.eval(&next.x_star));
    }

    #[test]
    fn far_robot_snaps_reference() {
        let ds = circle();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        let r = ds.project(&c.point(0.0));
        let x = r.x_star + Vec3::new(0.0, 0.0, 3.0 * DEFAULT_SNAP_RADIUS);
        assert_eq!(ds.advance(&r, 1e-3, &x, DEFAULT_SNAP_RADIUS), ds.project(&x));
    }

    #[test]
    fn line_patrol_spans_segment() {
        let a = Vec3::new(0.0, 0.0, 0.0);
        let b = Vec3::new(0.2, 0.0, 0.0);
        let ds = NominalDs::line_patrol(a, b, 0.1, 0.02, Vec3::z(), 2.0).unwrap();
        let NominalDs::Cycle(c) = &ds else { unreachable!() };
        assert!((c.point(0.0) - b).norm() < 1e-12);
        assert!((c.point(std::f64::consts::PI) - a).norm() < 1e-12);
        // peak speed crossing the middle of the segment
        let mid = c.point(std::f64::consts::FRAC_PI_2);
        assert!((ds.eval(&mid).norm() - 0.1).abs() < 1e-12);
        assert_eq!(NominalDs::line_patrol(a, a, 0.1, 0.02, Vec3::z(), 2.0), Err(DsError::DegenerateSegment));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert_eq!(NominalDs::point_attractor(Vec3::zeros(), 0.0), Err(DsError::NonPositive("gain")));
        assert_eq!(
            NominalDs::planar_limit_cycle(Vec3::zeros(), 0.1, 1.0, Vec3::zeros(), 1.0),
            Err(DsError::ZeroVector("normal"))
        );
    }
}
