//! Continuous-time models of the three benchmark systems and their RK4
//! discretization, `x_{t+1} = f(x_t, u_t)`.
//!
//! Frictionless Lagrangian models with point-mass poles/links:
//! - cart-pole: state `[x, dx, theta, dtheta]`, pole angle measured from the
//!   downward vertical, so the upright target sits at `theta = pi`;
//! - pendubot: state `[theta1, theta2, dtheta1, dtheta2]`, first joint
//!   actuated, `theta1` from the downward vertical, `theta2` relative to the
//!   first link (upright target `theta1 = pi`, `theta2 = 0`);
//! - double cart-pole: state `[x, dx, theta1, dtheta1, theta2, dtheta2]`,
//!   both pole angles absolute from the upward vertical (target `theta = 0`).
//!
//! Angles are never wrapped during integration.

use crate::dual::{Dual, Smooth};
use crate::error::{Error, Result};
use crate::ocp::ControlSequence;
use crate::scalar::Scalar;

/// Benchmark system selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    CartPole,
    Pendubot,
    DoubleCartPole,
}

impl SystemKind {
    pub fn state_dim(self) -> usize {
        match self {
            SystemKind::CartPole => 4,
            SystemKind::Pendubot => 4,
            SystemKind::DoubleCartPole => 6,
        }
    }

    pub fn input_dim(self) -> usize {
        1
    }

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::CartPole => "cart_pole",
            SystemKind::Pendubot => "pendubot",
            SystemKind::DoubleCartPole => "double_cart_pole",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "cart_pole" | "cartpole" | "cart-pole" => Ok(SystemKind::CartPole),
            "pendubot" => Ok(SystemKind::Pendubot),
            "double_cart_pole" | "double-cart-pole" => Ok(SystemKind::DoubleCartPole),
            other => Err(Error::Config(format!("unknown system kind '{other}'"))),
        }
    }
}

/// Physical parameters plus sampling interval for one benchmark system.
///
/// `link_masses`/`link_lengths` hold the two pole (or link) parameters; the
/// cart-pole only uses the first entry of each.
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel<T> {
    kind: SystemKind,
    pub cart_mass: T,
    pub link_masses: [T; 2],
    pub link_lengths: [T; 2],
    pub gravity: T,
    pub dt: T,
}

impl<T: Scalar> SystemModel<T> {
    /// Model with conventional defaults: cart 1 kg, poles 0.1 kg, lengths
    /// 0.5 m, g = 9.81, dt = 0.01 s.
    pub fn new(kind: SystemKind) -> Self {
        Self {
            kind,
            cart_mass: T::lit(1.0),
            link_masses: [T::lit(0.1); 2],
            link_lengths: [T::lit(0.5); 2],
            gravity: T::lit(9.81),
            dt: T::lit(0.01),
        }
    }

    pub fn cart_pole() -> Self {
        Self::new(SystemKind::CartPole)
    }

    pub fn pendubot() -> Self {
        Self::new(SystemKind::Pendubot)
    }

    pub fn double_cart_pole() -> Self {
        Self::new(SystemKind::DoubleCartPole)
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T, what: &'static str| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be positive")))
            }
        };
        pos(self.dt, "dt")?;
        pos(self.cart_mass, "cart mass")?;
        for m in self.link_masses {
            pos(m, "link mass")?;
        }
        for l in self.link_lengths {
            pos(l, "link length")?;
        }
        pos(self.gravity, "gravity")?;
        Ok(())
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.kind.input_dim()
    }

    fn check_dims(&self, x: &[T], u: &[T]) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::DimensionMismatch {
                what: "state",
                expected: self.state_dim(),
                got: x.len(),
            });
        }
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input",
                expected: self.input_dim(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// Continuous-time state derivative `xdot = g(x, u)`.
    pub fn continuous_derivative(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_dims(x, u)?;
        let mut dx = vec![T::zero(); x.len()];
        derivative_smooth(self, x, u[0], &mut dx);
        Ok(dx)
    }

    /// One RK4 step of length `dt` with zero-order-hold input.
    pub fn step(&self, x: &[T], u: &[T]) -> Result<Vec<T>> {
        self.check_dims(x, u)?;
        let next = rk4_step(self, x, u[0], self.dt);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("integration step"));
        }
        Ok(next)
    }

    /// States `[x0, x1, ..., xH]` under the input sequence.
    pub fn rollout_states(&self, x0: &[T], u_seq: &ControlSequence<T>) -> Result<Vec<Vec<T>>> {
        if u_seq.input_dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "sequence input width",
                expected: self.input_dim(),
                got: u_seq.input_dim(),
            });
        }
        let mut states = Vec::with_capacity(u_seq.horizon() + 1);
        states.push(x0.to_vec());
        for i in 0..u_seq.horizon() {
            let next = self.step(states.last().unwrap(), u_seq.step(i))?;
            states.push(next);
        }
        Ok(states)
    }

    /// Exact Jacobians `(A, B)` of the RK4 one-step map, row-major
    /// `n_x * n_x` and `n_x * n_u`. Computed with forward-mode duals through
    /// the discretization itself, so they are consistent with [`Self::step`]
    /// to machine precision.
    pub fn step_jacobian(&self, x: &[T], u: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_dims(x, u)?;
        match self.kind {
            SystemKind::CartPole | SystemKind::Pendubot => self.step_jacobian_n::<5>(x, u),
            SystemKind::DoubleCartPole => self.step_jacobian_n::<7>(x, u),
        }
    }

    fn step_jacobian_n<const N: usize>(&self, x: &[T], u: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let n_x = self.state_dim();
        debug_assert_eq!(N, n_x + 1);
        let xd: Vec<Dual<T, N>> = x
            .iter()
            .enumerate()
            .map(|(j, &v)| Dual::variable(v, j))
            .collect();
        let ud = Dual::variable(u[0], n_x);
        let next = rk4_step_smooth(self, &xd, ud, Dual::constant(self.dt));
        let mut a = vec![T::zero(); n_x * n_x];
        let mut b = vec![T::zero(); n_x];
        for (i, v) in next.iter().enumerate() {
            if !v.re.is_finite() {
                return Err(Error::NonFinite("step jacobian"));
            }
            for j in 0..n_x {
                a[i * n_x + j] = v.eps[j];
            }
            b[i] = v.eps[n_x];
        }
        Ok((a, b))
    }

    /// Total mechanical energy (kinetic + potential); conserved by the
    /// frictionless models under u = 0.
    pub fn mechanical_energy(&self, x: &[T]) -> T {
        let half = T::lit(0.5);
        match self.kind {
            SystemKind::CartPole => {
                let (mc, mp, l, g) = (
                    self.cart_mass,
                    self.link_masses[0],
                    self.link_lengths[0],
                    self.gravity,
                );
                let (dx, th, dth) = (x[1], x[2], x[3]);
                let kin = half * (mc + mp) * dx * dx
                    + mp * l * dx * dth * num_traits::Float::cos(th)
                    + half * mp * l * l * dth * dth;
                let pot = -mp * g * l * num_traits::Float::cos(th);
                kin + pot
            }
            SystemKind::Pendubot => {
                let (m1, m2) = (self.link_masses[0], self.link_masses[1]);
                let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
                let g = self.gravity;
                let (t1, t2, d1, d2) = (x[0], x[1], x[2], x[3]);
                let kin = half * (m1 + m2) * l1 * l1 * d1 * d1
                    + half * m2 * l2 * l2 * (d1 + d2) * (d1 + d2)
                    + m2 * l1 * l2 * d1 * (d1 + d2) * num_traits::Float::cos(t2);
                let pot = -(m1 + m2) * g * l1 * num_traits::Float::cos(t1)
                    - m2 * g * l2 * num_traits::Float::cos(t1 + t2);
                kin + pot
            }
            SystemKind::DoubleCartPole => {
                let m0 = self.cart_mass;
                let (m1, m2) = (self.link_masses[0], self.link_masses[1]);
                let (l1, l2) = (self.link_lengths[0], self.link_lengths[1]);
                let g = self.gravity;
                let (dx, t1, d1, t2, d2) = (x[1], x[2], x[3], x[4], x[5]);
                let v1x = dx + l1 * d1 * num_traits::Float::cos(t1);
                let v1y = -(l1 * d1 * num_traits::Float::sin(t1));
                let v2x = v1x + l2 * d2 * num_traits::Float::cos(t2);
                let v2y = v1y - l2 * d2 * num_traits::Float::sin(t2);
                let kin = half * m0 * dx * dx
                    + half * m1 * (v1x * v1x + v1y * v1y)
                    + half * m2 * (v2x * v2x + v2y * v2y);
                let pot = m1 * g * l1 * num_traits::Float::cos(t1)
                    + m2 * g
                        * (l1 * num_traits::Float::cos(t1) + l2 * num_traits::Float::cos(t2));
                kin + pot
            }
        }
    }
}

/// Classical RK4 update for an arbitrary right-hand side, input held
/// constant over the step.
pub(crate) fn rk4_general<S: Smooth>(
    x: &[S],
    u: S,
    dt: S,
    f: impl Fn(&[S], S, &mut [S]),
) -> Vec<S> {
    let n = x.len();
    let half = S::lit(0.5);
    let sixth = S::lit(1.0 / 6.0);
    let two = S::lit(2.0);

    let mut k1 = vec![S::lit(0.0); n];
    f(x, u, &mut k1);

    let x2: Vec<S> = (0..n).map(|i| x[i] + half * dt * k1[i]).collect();
    let mut k2 = vec![S::lit(0.0); n];
    f(&x2, u, &mut k2);

    let x3: Vec<S> = (0..n).map(|i| x[i] + half * dt * k2[i]).collect();
    let mut k3 = vec![S::lit(0.0); n];
    f(&x3, u, &mut k3);

    let x4: Vec<S> = (0..n).map(|i| x[i] + dt * k3[i]).collect();
    let mut k4 = vec![S::lit(0.0); n];
    f(&x4, u, &mut k4);

    (0..n)
        .map(|i| x[i] + dt * sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]))
        .collect()
}

/// RK4 step over any smooth scalar (plain or dual).
pub(crate) fn rk4_step_smooth<T: Scalar, S: Smooth<Base = T>>(
    model: &SystemModel<T>,
    x: &[S],
    u: S,
    dt: S,
) -> Vec<S> {
    rk4_general(x, u, dt, |x, u, dx| derivative_smooth(model, x, u, dx))
}

/// RK4 step with a caller-supplied dt; used by tests to run the
/// time-reversed field.
pub fn rk4_step<T: Scalar>(model: &SystemModel<T>, x: &[T], u: T, dt: T) -> Vec<T> {
    rk4_step_smooth(model, x, u, dt)
}

fn derivative_smooth<T: Scalar, S: Smooth<Base = T>>(
    model: &SystemModel<T>,
    x: &[S],
    u: S,
    dx: &mut [S],
) {
    match model.kind {
        SystemKind::CartPole => cart_pole_deriv(model, x, u, dx),
        SystemKind::Pendubot => pendubot_deriv(model, x, u, dx),
        SystemKind::DoubleCartPole => double_cart_pole_deriv(model, x, u, dx),
    }
}

fn cart_pole_deriv<T: Scalar, S: Smooth<Base = T>>(
    model: &SystemModel<T>,
    x: &[S],
    u: S,
    dx: &mut [S],
) {
    let mc = S::from_base(model.cart_mass);
    let mp = S::from_base(model.link_masses[0]);
    let l = S::from_base(model.link_lengths[0]);
    let g = S::from_base(model.gravity);

    let (v, th, w) = (x[1], x[2], x[3]);
    let (s, c) = (th.sin(), th.cos());

    // (mc + mp) xdd + mp l thdd cos - mp l w^2 sin = u
    // xdd cos + l thdd + g sin = 0
    let denom = mc + mp * s * s;
    let xdd = (u + mp * s * (g * c + l * w * w)) / denom;
    let thdd = -(xdd * c + g * s) / l;

    dx[0] = v;
    dx[1] = xdd;
    dx[2] = w;
    dx[3] = thdd;
}

fn pendubot_deriv<T: Scalar, S: Smooth<Base = T>>(
    model: &SystemModel<T>,
    x: &[S],
    u: S,
    dx: &mut [S],
) {
    let m1 = S::from_base(model.link_masses[0]);
    let m2 = S::from_base(model.link_masses[1]);
    let l1 = S::from_base(model.link_lengths[0]);
    let l2 = S::from_base(model.link_lengths[1]);
    let g = S::from_base(model.gravity);
    let two = S::lit(2.0);

    let (t1, t2, d1, d2) = (x[0], x[1], x[2], x[3]);
    let (s2, c2) = (t2.sin(), t2.cos());

    let m11 = (m1 + m2) * l1 * l1 + m2 * l2 * l2 + two * m2 * l1 * l2 * c2;
    let m12 = m2 * l2 * l2 + m2 * l1 * l2 * c2;
    let m22 = m2 * l2 * l2;
    let h = m2 * l1 * l2 * s2;

    let g1 = (m1 + m2) * g * l1 * t1.sin() + m2 * g * l2 * (t1 + t2).sin();
    let g2 = m2 * g * l2 * (t1 + t2).sin();

    let r1 = u + h * (two * d1 * d2 + d2 * d2) - g1;
    let r2 = -(h * d1 * d1) - g2;

    // 2x2 symmetric solve
    let det = m11 * m22 - m12 * m12;
    let a1 = (m22 * r1 - m12 * r2) / det;
    let a2 = (m11 * r2 - m12 * r1) / det;

    dx[0] = d1;
    dx[1] = d2;
    dx[2] = a1;
    dx[3] = a2;
}

fn double_cart_pole_deriv<T: Scalar, S: Smooth<Base = T>>(
    model: &SystemModel<T>,
    x: &[S],
    u: S,
    dx: &mut [S],
) {
    let m0 = S::from_base(model.cart_mass);
    let m1 = S::from_base(model.link_masses[0]);
    let m2 = S::from_base(model.link_masses[1]);
    let l1 = S::from_base(model.link_lengths[0]);
    let l2 = S::from_base(model.link_lengths[1]);
    let g = S::from_base(model.gravity);

    let (v, t1, d1, t2, d2) = (x[1], x[2], x[3], x[4], x[5]);
    let (s1, c1) = (t1.sin(), t1.cos());
    let (s2, c2) = (t2.sin(), t2.cos());
    let (s12, c12) = ((t1 - t2).sin(), (t1 - t2).cos());

    let m12sum = m1 + m2;
    // Mass matrix (symmetric) in coordinates (x, theta1, theta2),
    // angles absolute from the upward vertical.
    let a11 = m0 + m1 + m2;
    let a12 = m12sum * l1 * c1;
    let a13 = m2 * l2 * c2;
    let a22 = m12sum * l1 * l1;
    let a23 = m2 * l1 * l2 * c12;
    let a33 = m2 * l2 * l2;

    let r1 = u + m12sum * l1 * d1 * d1 * s1 + m2 * l2 * d2 * d2 * s2;
    let r2 = -(m2 * l1 * l2 * d2 * d2 * s12) + m12sum * g * l1 * s1;
    let r3 = m2 * l1 * l2 * d1 * d1 * s12 + m2 * g * l2 * s2;

    // 3x3 symmetric solve via cofactors (mass matrices are well conditioned
    // for physical parameters).
    let c11 = a22 * a33 - a23 * a23;
    let c12m = a13 * a23 - a12 * a33;
    let c13 = a12 * a23 - a13 * a22;
    let c22 = a11 * a33 - a13 * a13;
    let c23 = a13 * a12 - a11 * a23;
    let c33 = a11 * a22 - a12 * a12;
    let det = a11 * c11 + a12 * c12m + a13 * c13;

    let q1 = (c11 * r1 + c12m * r2 + c13 * r3) / det;
    let q2 = (c12m * r1 + c22 * r2 + c23 * r3) / det;
    let q3 = (c13 * r1 + c23 * r2 + c33 * r3) / det;

    dx[0] = v;
    dx[1] = q1;
    dx[2] = d1;
    dx[3] = q2;
    dx[4] = d2;
    dx[5] = q3;
}
