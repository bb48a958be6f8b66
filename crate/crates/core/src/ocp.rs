//! The finite-horizon optimal control problem: quadratic cost on a nonlinear
//! state transform, evaluated over an RK4 rollout, with an exact adjoint
//! gradient through the discretization.

use crate::dynamics::{SystemKind, SystemModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Flat, step-major sequence of `horizon` input vectors of width `n_u`;
/// the OCP decision variable.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSequence<T> {
    n_u: usize,
    data: Vec<T>,
}

impl<T: Scalar> ControlSequence<T> {
    pub fn zeros(horizon: usize, n_u: usize) -> Self {
        assert!(n_u >= 1, "input width must be at least 1");
        Self {
            n_u,
            data: vec![T::zero(); horizon * n_u],
        }
    }

    /// Wrap a flat `horizon * n_u` buffer. All entries must be finite.
    pub fn from_flat(data: Vec<T>, n_u: usize) -> Result<Self> {
        if n_u == 0 || data.len() % n_u != 0 {
            return Err(Error::DimensionMismatch {
                what: "control sequence",
                expected: n_u.max(1),
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("control sequence"));
        }
        Ok(Self { n_u, data })
    }

    pub fn horizon(&self) -> usize {
        if self.n_u == 0 {
            0
        } else {
            self.data.len() / self.n_u
        }
    }

    pub fn input_dim(&self) -> usize {
        self.n_u
    }

    pub fn step(&self, i: usize) -> &[T] {
        &self.data[i * self.n_u..(i + 1) * self.n_u]
    }

    pub fn step_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.n_u..(i + 1) * self.n_u]
    }

    pub fn as_flat(&self) -> &[T] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn l2_distance(&self, other: &Self) -> T {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }

    /// Receding-horizon warm start: drop the first input, repeat the last.
    pub fn shifted(&self) -> Self {
        let h = self.horizon();
        let mut out = self.clone();
        if h >= 2 {
            out.data.copy_within(self.n_u.., 0);
            let last = (h - 1) * self.n_u;
            let (head, tail) = out.data.split_at_mut(last);
            tail.copy_from_slice(&head[last - self.n_u..]);
        }
        out
    }
}

/// Componentwise input bounds, the compact set the inputs live in.
#[derive(Clone, Debug, PartialEq)]
pub struct InputBox<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> InputBox<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "input box",
                expected: lower.len().max(1),
                got: upper.len(),
            });
        }
        for (lo, hi) in lower.iter().zip(upper.iter()) {
            if !lo.is_finite() || !hi.is_finite() || !(*lo < *hi) {
                return Err(Error::InvalidArgument(
                    "input box bounds must be finite with lower < upper".into(),
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Symmetric box `[-mag, mag]^n`.
    pub fn symmetric(mag: T, n_u: usize) -> Result<Self> {
        Self::new(vec![-mag; n_u], vec![mag; n_u])
    }

    pub fn input_dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> T {
        self.upper[j] - self.lower[j]
    }

    pub fn clamp_in_place(&self, seq: &mut ControlSequence<T>) {
        let n_u = self.lower.len();
        for (i, v) in seq.as_flat_mut().iter_mut().enumerate() {
            let j = i % n_u;
            *v = num_traits::clamp(*v, self.lower[j], self.upper[j]);
        }
    }

    pub fn contains(&self, seq: &ControlSequence<T>) -> bool {
        let n_u = self.lower.len();
        seq.as_flat()
            .iter()
            .enumerate()
            .all(|(i, v)| *v >= self.lower[i % n_u] && *v <= self.upper[i % n_u])
    }
}

/// Componentwise clamp of a sequence into the box.
pub fn project_box<T: Scalar>(u: &ControlSequence<T>, boxc: &InputBox<T>) -> ControlSequence<T> {
    let mut out = u.clone();
    boxc.clamp_in_place(&mut out);
    out
}

/// OCP definition: horizon, diagonal quadratic weights on the transformed
/// state, input weight, transform selector, and input box.
#[derive(Clone, Debug, PartialEq)]
pub struct OcpSpec<T> {
    pub horizon: usize,
    pub transform: SystemKind,
    pub q_diag: Vec<T>,
    pub r_diag: Vec<T>,
    pub p_diag: Vec<T>,
    pub input_box: InputBox<T>,
}

impl<T: Scalar> OcpSpec<T> {
    pub fn new(
        horizon: usize,
        transform: SystemKind,
        q_diag: Vec<T>,
        r_diag: Vec<T>,
        p_diag: Vec<T>,
        input_box: InputBox<T>,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        let n_nl = transform.state_dim();
        for (name, d) in [("Q", &q_diag), ("P", &p_diag)] {
            if d.len() != n_nl {
                return Err(Error::DimensionMismatch {
                    what: "weight diagonal",
                    expected: n_nl,
                    got: d.len(),
                });
            }
            if d.iter().any(|v| *v < T::zero() || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} diagonal entries must be finite and >= 0"
                )));
            }
        }
        if r_diag.len() != transform.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "R diagonal",
                expected: transform.input_dim(),
                got: r_diag.len(),
            });
        }
        if r_diag.iter().any(|v| *v <= T::zero() || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "R diagonal entries must be finite and > 0".into(),
            ));
        }
        if input_box.input_dim() != r_diag.len() {
            return Err(Error::DimensionMismatch {
                what: "input box width",
                expected: r_diag.len(),
                got: input_box.input_dim(),
            });
        }
        Ok(Self {
            horizon,
            transform,
            q_diag,
            r_diag,
            p_diag,
            input_box,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.r_diag.len()
    }

    pub fn seq_dim(&self) -> usize {
        self.horizon * self.input_dim()
    }
}

/// The per-system nonlinear state transform the quadratic weights act on.
///
/// Zero exactly at each system's swing-up target.
pub fn nonlinear_transform<T: Scalar>(kind: SystemKind, x: &[T]) -> Result<Vec<T>> {
    if x.len() != kind.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "transform input",
            expected: kind.state_dim(),
            got: x.len(),
        });
    }
    let pi = T::PI();
    Ok(match kind {
        SystemKind::CartPole => {
            let d = x[2] - pi;
            vec![x[0], x[1], -(d * d) / pi, x[3]]
        }
        SystemKind::Pendubot => vec![
            T::one() + num_traits::Float::cos(x[0]),
            T::one() - num_traits::Float::cos(x[1]),
            x[2],
            x[3],
        ],
        SystemKind::DoubleCartPole => {
            let half = T::lit(0.5);
            vec![
                x[0],
                x[1],
                num_traits::Float::sin(x[2] * half),
                x[3],
                num_traits::Float::sin(x[4] * half),
                x[5],
            ]
        }
    })
}

/// Diagonal of the transform Jacobian; each transformed entry depends on
/// exactly one state entry for all three systems.
fn transform_jacobian_diag<T: Scalar>(kind: SystemKind, x: &[T]) -> Vec<T> {
    let pi = T::PI();
    let two = T::lit(2.0);
    let half = T::lit(0.5);
    match kind {
        SystemKind::CartPole => vec![T::one(), T::one(), -two * (x[2] - pi) / pi, T::one()],
        SystemKind::Pendubot => vec![
            -num_traits::Float::sin(x[0]),
            num_traits::Float::sin(x[1]),
            T::one(),
            T::one(),
        ],
        SystemKind::DoubleCartPole => vec![
            T::one(),
            T::one(),
            half * num_traits::Float::cos(x[2] * half),
            T::one(),
            half * num_traits::Float::cos(x[4] * half),
            T::one(),
        ],
    }
}

fn check_problem<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    u: &ControlSequence<T>,
) -> Result<()> {
    if spec.transform != model.kind() {
        return Err(Error::InvalidArgument(format!(
            "spec transform {} does not match model {}",
            spec.transform.name(),
            model.kind().name()
        )));
    }
    if x0.len() != model.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "initial state",
            expected: model.state_dim(),
            got: x0.len(),
        });
    }
    if u.horizon() != spec.horizon || u.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "sequence horizon",
            expected: spec.horizon,
            got: u.horizon(),
        });
    }
    Ok(())
}

fn stage_state_cost<T: Scalar>(kind: SystemKind, w: &[T], x: &[T]) -> Result<T> {
    let z = nonlinear_transform(kind, x)?;
    Ok(z.iter().zip(w.iter()).map(|(&zi, &wi)| wi * zi * zi).sum())
}

/// Rollout cost `sum_i [x_nl' Q x_nl + u' R u] + x_nl(x_H)' P x_nl(x_H)`.
pub fn total_cost<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    u: &ControlSequence<T>,
) -> Result<T> {
    check_problem(spec, model, x0, u)?;
    let mut cost = T::zero();
    let mut x = x0.to_vec();
    for i in 0..spec.horizon {
        cost = cost + stage_state_cost(spec.transform, &spec.q_diag, &x)?;
        let ui = u.step(i);
        cost = cost
            + ui.iter()
                .zip(spec.r_diag.iter())
                .map(|(&v, &r)| r * v * v)
                .sum::<T>();
        x = model.step(&x, ui)?;
    }
    cost = cost + stage_state_cost(spec.transform, &spec.p_diag, &x)?;
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    Ok(cost)
}

/// Exact gradient of [`total_cost`] with respect to every input entry, by
/// the backward adjoint recursion through the RK4 one-step Jacobians.
pub fn cost_gradient<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    u: &ControlSequence<T>,
) -> Result<Vec<T>> {
    cost_and_gradient(spec, model, x0, u).map(|(_, g)| g)
}

/// Cost and gradient in one pass (shared rollout).
pub fn cost_and_gradient<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    u: &ControlSequence<T>,
) -> Result<(T, Vec<T>)> {
    check_problem(spec, model, x0, u)?;
    let h = spec.horizon;
    let n_x = model.state_dim();
    let n_u = model.input_dim();
    let states = model.rollout_states(x0, u)?;

    let mut cost = T::zero();
    for (i, x) in states.iter().enumerate().take(h) {
        cost = cost + stage_state_cost(spec.transform, &spec.q_diag, x)?;
        let ui = u.step(i);
        cost = cost
            + ui.iter()
                .zip(spec.r_diag.iter())
                .map(|(&v, &r)| r * v * v)
                .sum::<T>();
    }
    cost = cost + stage_state_cost(spec.transform, &spec.p_diag, &states[h])?;
    if !cost.is_finite() {
        return Err(Error::NonFiniteCost);
    }

    let two = T::lit(2.0);
    // d/dx (x_nl' W x_nl) = 2 * Jdiag * W * x_nl  (diagonal transform Jacobian)
    let state_grad = |w: &[T], x: &[T]| -> Result<Vec<T>> {
        let z = nonlinear_transform(spec.transform, x)?;
        let jd = transform_jacobian_diag(spec.transform, x);
        Ok((0..n_x).map(|i| two * jd[i] * w[i] * z[i]).collect())
    };

    let mut lambda = state_grad(&spec.p_diag, &states[h])?;
    let mut grad = vec![T::zero(); h * n_u];
    for i in (0..h).rev() {
        let (a, b) = model.step_jacobian(&states[i], u.step(i))?;
        // grad_u_i = 2 R u_i + B' lambda
        for j in 0..n_u {
            let mut gj = two * spec.r_diag[j] * u.step(i)[j];
            for r in 0..n_x {
                gj = gj + b[r * n_u + j] * lambda[r];
            }
            grad[i * n_u + j] = gj;
        }
        // lambda_i = dl/dx_i + A' lambda_{i+1}
        let mut next = state_grad(&spec.q_diag, &states[i])?;
        for (c, nc) in next.iter_mut().enumerate() {
            let mut acc = *nc;
            for r in 0..n_x {
                acc = acc + a[r * n_x + c] * lambda[r];
            }
            *nc = acc;
        }
        lambda = next;
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("adjoint state"));
        }
    }
    Ok((cost, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn cart_pole_spec(horizon: usize) -> OcpSpec<f64> {
        OcpSpec::new(
            horizon,
            SystemKind::CartPole,
            vec![0.01, 0.01, 1000.0, 0.01],
            vec![0.001],
            vec![0.01, 0.1, 1000.0, 0.1],
            InputBox::symmetric(100.0, 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn transform_vanishes_at_targets() {
        let pi = std::f64::consts::PI;
        let z = nonlinear_transform(SystemKind::CartPole, &[0.0, 0.0, pi, 0.0]).unwrap();
        assert_eq!(z[2], 0.0);
        let z = nonlinear_transform(SystemKind::Pendubot, &[pi, 0.0, 0.0, 0.0]).unwrap();
        assert!(z[0].abs() < 1e-15 && z[1].abs() == 0.0);
        let z = nonlinear_transform(SystemKind::DoubleCartPole, &[0.0; 6]).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cost_is_zero_at_target_with_zero_input() {
        let pi = std::f64::consts::PI;
        let spec = cart_pole_spec(16);
        let model = SystemModel::cart_pole();
        let u = ControlSequence::zeros(16, 1);
        let j = total_cost(&spec, &model, &[0.0, 0.0, pi, 0.0], &u).unwrap();
        assert!(j.abs() < 1e-20, "cost at target was {j}");
    }

    // By-hand oracle: with P = 0 and H = 1 the cost is a single stage term,
    // computable directly from the Table-style weights.
    #[test]
    fn single_stage_cost_matches_hand_computation() {
        let spec = OcpSpec::new(
            1,
            SystemKind::CartPole,
            vec![0.01, 0.01, 1000.0, 0.01],
            vec![0.001],
            vec![0.0; 4],
            InputBox::symmetric(100.0, 1).unwrap(),
        )
        .unwrap();
        let model = SystemModel::cart_pole();
        let x0 = [0.5, -0.2, 1.0, 0.3];
        let u = ControlSequence::from_flat(vec![2.0], 1).unwrap();
        let pi = std::f64::consts::PI;
        let znl3 = -((1.0f64 - pi).powi(2)) / pi;
        let expected = 0.01 * 0.5f64.powi(2)
            + 0.01 * 0.2f64.powi(2)
            + 1000.0 * znl3.powi(2)
            + 0.01 * 0.3f64.powi(2)
            + 0.001 * 4.0;
        let j = total_cost(&spec, &model, &x0, &u).unwrap();
        assert!((j - expected).abs() < 1e-12 * expected, "{j} vs {expected}");
    }

    // Scaling all weights by a power of two scales the cost exactly.
    #[test]
    fn cost_is_exactly_linear_in_weights() {
        let model = SystemModel::cart_pole();
        let spec = cart_pole_spec(8);
        let mut scaled = spec.clone();
        for w in scaled
            .q_diag
            .iter_mut()
            .chain(scaled.r_diag.iter_mut())
            .chain(scaled.p_diag.iter_mut())
        {
            *w *= 4.0;
        }
        let x0 = [0.3, 0.1, 2.0, -0.5];
        let mut u = ControlSequence::zeros(8, 1);
        for i in 0..8 {
            u.step_mut(i)[0] = (i as f64).cos() * 10.0;
        }
        let j = total_cost(&spec, &model, &x0, &u).unwrap();
        let js = total_cost(&scaled, &model, &x0, &u).unwrap();
        assert_eq!(js, 4.0 * j);
    }

    #[test]
    fn gradient_is_zero_at_target_equilibrium() {
        let pi = std::f64::consts::PI;
        let spec = cart_pole_spec(12);
        let model = SystemModel::cart_pole();
        let u = ControlSequence::zeros(12, 1);
        let g = cost_gradient(&spec, &model, &[0.0, 0.0, pi, 0.0], &u).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-12), "{g:?}");
    }

    // Finite-difference oracle for the adjoint gradient, all entries.
    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for kind in [
            SystemKind::CartPole,
            SystemKind::Pendubot,
            SystemKind::DoubleCartPole,
        ] {
            let model = SystemModel::new(kind);
            let n_nl = kind.state_dim();
            let spec = OcpSpec::new(
                12,
                kind,
                vec![1.0; n_nl],
                vec![0.01],
                vec![2.0; n_nl],
                InputBox::symmetric(50.0, 1).unwrap(),
            )
            .unwrap();
            for _ in 0..5 {
                let x0: Vec<f64> = (0..kind.state_dim())
                    .map(|_| rng.random_range(-0.5..0.5))
                    .collect();
                let mut u = ControlSequence::zeros(12, 1);
                for i in 0..12 {
                    u.step_mut(i)[0] = rng.random_range(-2.0..2.0);
                }
                let g = cost_gradient(&spec, &model, &x0, &u).unwrap();
                let h = 1e-5;
                for e in 0..12 {
                    let mut up = u.clone();
                    let mut um = u.clone();
                    up.as_flat_mut()[e] += h;
                    um.as_flat_mut()[e] -= h;
                    let jp = total_cost(&spec, &model, &x0, &up).unwrap();
                    let jm = total_cost(&spec, &model, &x0, &um).unwrap();
                    let fd = (jp - jm) / (2.0 * h);
                    if fd.abs() > 1e-8 {
                        let rel = (g[e] - fd).abs() / fd.abs();
                        assert!(
                            rel < 1e-6,
                            "{kind:?} entry {e}: adjoint {} vs fd {} (rel {rel:.2e})",
                            g[e],
                            fd
                        );
                    }
                }
            }
        }
    }

    // Analytic weight-perturbation oracle: doubling R adds exactly 2 R u.
    #[test]
    fn doubling_r_shifts_gradient_by_two_r_u() {
        let model = SystemModel::cart_pole();
        let spec = cart_pole_spec(10);
        let mut doubled = spec.clone();
        doubled.r_diag[0] *= 2.0;
        let x0 = [0.1, 0.0, 0.5, 0.0];
        let mut u = ControlSequence::zeros(10, 1);
        for i in 0..10 {
            u.step_mut(i)[0] = (i as f64 * 0.3).sin() * 5.0;
        }
        let g1 = cost_gradient(&spec, &model, &x0, &u).unwrap();
        let g2 = cost_gradient(&doubled, &model, &x0, &u).unwrap();
        for i in 0..10 {
            let expected = 2.0 * spec.r_diag[0] * u.step(i)[0];
            assert!(
                (g2[i] - g1[i] - expected).abs() < 1e-12,
                "step {i}: {} vs {}",
                g2[i] - g1[i],
                expected
            );
        }
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let model = SystemModel::cart_pole();
        let spec = cart_pole_spec(20);
        let x0 = [1.0, 0.2, 0.7, -0.1];
        let mut u = ControlSequence::zeros(20, 1);
        for i in 0..20 {
            u.step_mut(i)[0] = ((i * 13 % 7) as f64) - 3.0;
        }
        let a = total_cost(&spec, &model, &x0, &u).unwrap();
        let b = total_cost(&spec, &model, &x0, &u).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn shifted_warm_start_drops_first_and_repeats_last() {
        let u = ControlSequence::from_flat(vec![1.0, 2.0, 3.0, 4.0], 1).unwrap();
        let s = u.shifted();
        assert_eq!(s.as_flat(), &[2.0, 3.0, 4.0, 4.0]);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            // PSD/PD weights keep the cost nonnegative for any bounded input.
            #[test]
            fn cost_is_nonnegative(
                x0 in proptest::collection::vec(-1.0f64..1.0, 4),
                us in proptest::collection::vec(-20.0f64..20.0, 8),
            ) {
                let model = SystemModel::cart_pole();
                let spec = cart_pole_spec(8);
                let u = ControlSequence::from_flat(us, 1).unwrap();
                let j = total_cost(&spec, &model, &x0, &u).unwrap();
                prop_assert!(j >= 0.0);
            }

            // Projection is idempotent and always lands inside the box.
            #[test]
            fn projection_is_idempotent(
                us in proptest::collection::vec(-1e9f64..1e9, 6),
            ) {
                let boxc = InputBox::symmetric(7.0, 1).unwrap();
                let u = ControlSequence::from_flat(us, 1).unwrap();
                let p1 = project_box(&u, &boxc);
                let p2 = project_box(&p1, &boxc);
                prop_assert!(boxc.contains(&p1));
                prop_assert_eq!(p1, p2);
            }
        }
    }
}
