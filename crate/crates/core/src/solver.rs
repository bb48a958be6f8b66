//! Box-constrained local solver: projected gradient with Armijo
//! backtracking along the projection arc, accelerated by a limited-memory
//! quasi-Newton direction. This is the solution operator that maps
//! `(cost, initial guess)` to a locally optimal control sequence.

use std::collections::VecDeque;
use std::time::Instant;

use crate::dynamics::SystemModel;
use crate::error::{Error, Result};
use crate::ocp::{self, ControlSequence, OcpSpec};
use crate::scalar::Scalar;

/// Solver settings. Defaults are sized so that dataset generation over a
/// few thousand OCPs finishes in minutes.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig<T> {
    pub max_iterations: usize,
    /// Stationarity tolerance on the projected-gradient sup-norm.
    pub tolerance: T,
    pub initial_step: T,
    pub armijo_c: T,
    pub backtrack: T,
    /// Quasi-Newton history length; 0 disables the acceleration.
    pub memory: usize,
}

impl<T: Scalar> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            tolerance: T::lit(1e-4),
            initial_step: T::lit(1.0),
            armijo_c: T::lit(1e-4),
            backtrack: T::lit(0.5),
            memory: 10,
        }
    }
}

impl<T: Scalar> SolverConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > T::zero()) || !self.tolerance.is_finite() {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        if !(self.initial_step > T::zero()) {
            return Err(Error::InvalidArgument("initial_step must be > 0".into()));
        }
        let unit = |v: T| v > T::zero() && v < T::one();
        if !unit(self.armijo_c) || !unit(self.backtrack) {
            return Err(Error::InvalidArgument(
                "armijo_c and backtrack must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Differentiable objective over a flat decision vector.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;
    fn value(&self, u: &[T]) -> Result<T>;
    fn value_grad(&self, u: &[T]) -> Result<(T, Vec<T>)>;
}

/// Outcome of a box-constrained minimization over a flat vector.
#[derive(Clone, Debug)]
pub struct MinimizeResult<T> {
    pub point: Vec<T>,
    pub value: T,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: T,
    pub wall_time_s: f64,
    /// Objective value at the start and after each accepted step.
    pub value_trace: Vec<T>,
}

/// A locally optimal solve of the OCP.
#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    pub sequence: ControlSequence<T>,
    pub cost: T,
    pub iterations: usize,
    pub converged: bool,
    pub projected_gradient_norm: T,
    pub wall_time_s: f64,
    pub cost_trace: Vec<T>,
}

fn clamp_vec<T: Scalar>(u: &mut [T], lower: &[T], upper: &[T]) {
    for (i, v) in u.iter_mut().enumerate() {
        *v = num_traits::clamp(*v, lower[i], upper[i]);
    }
}

fn pg_sup_norm<T: Scalar>(u: &[T], g: &[T], lower: &[T], upper: &[T]) -> T {
    let mut norm = T::zero();
    for i in 0..u.len() {
        let stepped = num_traits::clamp(u[i] - g[i], lower[i], upper[i]);
        let d = (u[i] - stepped).abs();
        if d > norm {
            norm = d;
        }
    }
    norm
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// Two-loop L-BFGS recursion; returns an approximation of `H * g`.
fn two_loop<T: Scalar>(g: &[T], history: &VecDeque<(Vec<T>, Vec<T>, T)>) -> Vec<T> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = *rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y.iter()) {
            *qi = *qi - a * *yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi = *qi * gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
        let b = *rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s.iter()) {
            *qi = *qi + (a - b) * *si;
        }
    }
    q
}

/// Minimize `obj` over the box `[lower, upper]` starting from `guess`.
///
/// Accepted iterates are monotone non-increasing in the objective and always
/// feasible. Terminates when the projected-gradient sup-norm drops below
/// `cfg.tolerance`, the iteration cap is reached, or no acceptable step
/// exists (returned with `converged = false`).
pub fn minimize_box<T: Scalar>(
    obj: &dyn Objective<T>,
    lower: &[T],
    upper: &[T],
    guess: &[T],
    cfg: &SolverConfig<T>,
) -> Result<MinimizeResult<T>> {
    cfg.validate()?;
    let n = obj.dim();
    if guess.len() != n || lower.len() != n || upper.len() != n {
        return Err(Error::DimensionMismatch {
            what: "minimize_box guess",
            expected: n,
            got: guess.len(),
        });
    }
    let started = Instant::now();

    let mut u = guess.to_vec();
    clamp_vec(&mut u, lower, upper);
    let (mut j, mut g) = obj.value_grad(&u)?;
    if !j.is_finite() {
        return Err(Error::NonFiniteCost);
    }
    let mut trace = vec![j];
    let mut history: VecDeque<(Vec<T>, Vec<T>, T)> = VecDeque::new();
    let mut grad_step_seed = cfg.initial_step;
    let mut iterations = 0usize;
    let mut converged = false;

    for _ in 0..cfg.max_iterations {
        let pg = pg_sup_norm(&u, &g, lower, upper);
        if pg <= cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Quasi-Newton direction when history exists, steepest descent
        // otherwise or as fallback.
        let mut tried_fallback = history.is_empty() || cfg.memory == 0;
        let mut d: Vec<T> = if tried_fallback {
            g.iter().map(|&v| -v).collect()
        } else {
            two_loop(&g, &history).iter().map(|&v| -v).collect()
        };

        let mut accepted: Option<(Vec<T>, T)> = None;
        loop {
            let mut alpha = if tried_fallback { grad_step_seed } else { T::one() };
            for _ in 0..60 {
                let mut u_try = vec![T::zero(); n];
                for i in 0..n {
                    u_try[i] = num_traits::clamp(u[i] + alpha * d[i], lower[i], upper[i]);
                }
                let s: Vec<T> = (0..n).map(|i| u_try[i] - u[i]).collect();
                let decrease = dot(&g, &s);
                if s.iter().all(|v| *v == T::zero()) || decrease >= T::zero() {
                    // Projection annihilated the step or bent it uphill;
                    // shrinking alpha cannot fix a non-descent arc.
                    break;
                }
                match obj.value(&u_try) {
                    Ok(j_try) if j_try.is_finite() && j_try <= j + cfg.armijo_c * decrease => {
                        if tried_fallback {
                            grad_step_seed = alpha / cfg.backtrack;
                        }
                        accepted = Some((u_try, j_try));
                        break;
                    }
                    // Non-finite cost during the line search: reject the
                    // step and keep backtracking.
                    _ => alpha = alpha * cfg.backtrack,
                }
            }
            if accepted.is_some() || tried_fallback {
                break;
            }
            tried_fallback = true;
            d = g.iter().map(|&v| -v).collect();
        }

        let Some((u_new, j_new)) = accepted else {
            // Stalled: no acceptable step in any direction.
            break;
        };

        let (j_check, g_new) = obj.value_grad(&u_new)?;
        debug_assert!((j_check - j_new).abs() <= T::lit(1e-9) * j_new.abs().max(T::one()));

        if cfg.memory > 0 {
            let s: Vec<T> = (0..n).map(|i| u_new[i] - u[i]).collect();
            let y: Vec<T> = (0..n).map(|i| g_new[i] - g[i]).collect();
            let sy = dot(&s, &y);
            let threshold = T::lit(1e-12) * dot(&s, &s).sqrt() * dot(&y, &y).sqrt();
            if sy > threshold && sy > T::zero() {
                history.push_back((s, y, T::one() / sy));
                while history.len() > cfg.memory {
                    history.pop_front();
                }
            }
        }

        u = u_new;
        j = j_new;
        g = g_new;
        trace.push(j);
    }

    let pg = pg_sup_norm(&u, &g, lower, upper);
    if !converged && pg <= cfg.tolerance {
        converged = true;
    }
    Ok(MinimizeResult {
        point: u,
        value: j,
        iterations,
        converged,
        projected_gradient_norm: pg,
        wall_time_s: started.elapsed().as_secs_f64(),
        value_trace: trace,
    })
}

struct OcpObjective<'a, T> {
    spec: &'a OcpSpec<T>,
    model: &'a SystemModel<T>,
    x0: &'a [T],
}

impl<T: Scalar> Objective<T> for OcpObjective<'_, T> {
    fn dim(&self) -> usize {
        self.spec.seq_dim()
    }

    fn value(&self, u: &[T]) -> Result<T> {
        let seq = ControlSequence::from_flat(u.to_vec(), self.spec.input_dim())?;
        ocp::total_cost(self.spec, self.model, self.x0, &seq)
    }

    fn value_grad(&self, u: &[T]) -> Result<(T, Vec<T>)> {
        let seq = ControlSequence::from_flat(u.to_vec(), self.spec.input_dim())?;
        ocp::cost_and_gradient(self.spec, self.model, self.x0, &seq)
    }
}

fn expand_bounds<T: Scalar>(spec: &OcpSpec<T>) -> (Vec<T>, Vec<T>) {
    let n_u = spec.input_dim();
    let dim = spec.seq_dim();
    let lower: Vec<T> = (0..dim).map(|i| spec.input_box.lower()[i % n_u]).collect();
    let upper: Vec<T> = (0..dim).map(|i| spec.input_box.upper()[i % n_u]).collect();
    (lower, upper)
}

/// Run the local solver on the OCP from `guess`. The guess is projected
/// into the input box first; the returned sequence is always feasible.
pub fn solve_local<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    guess: &ControlSequence<T>,
    cfg: &SolverConfig<T>,
) -> Result<SolveResult<T>> {
    if guess.horizon() != spec.horizon || guess.input_dim() != spec.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "solver guess",
            expected: spec.horizon,
            got: guess.horizon(),
        });
    }
    let obj = OcpObjective { spec, model, x0 };
    let (lower, upper) = expand_bounds(spec);
    let res = minimize_box(&obj, &lower, &upper, guess.as_flat(), cfg)?;
    Ok(SolveResult {
        sequence: ControlSequence::from_flat(res.point, spec.input_dim())?,
        cost: res.value,
        iterations: res.iterations,
        converged: res.converged,
        projected_gradient_norm: res.projected_gradient_norm,
        wall_time_s: res.wall_time_s,
        cost_trace: res.value_trace,
    })
}

/// All local solves of a multistart run; `results[i]` is `None` when start
/// `i` diverged.
#[derive(Clone, Debug)]
pub struct MultistartOutcome<T> {
    pub best: usize,
    pub results: Vec<Option<SolveResult<T>>>,
}

impl<T: Scalar> MultistartOutcome<T> {
    pub fn best_result(&self) -> &SolveResult<T> {
        self.results[self.best].as_ref().expect("best solve exists")
    }
}

/// Run the local solver from every guess (sequentially, in order) and pick
/// the minimum-cost result; ties break to the first index.
pub fn solve_multistart<T: Scalar>(
    spec: &OcpSpec<T>,
    model: &SystemModel<T>,
    x0: &[T],
    guesses: &[ControlSequence<T>],
    cfg: &SolverConfig<T>,
) -> Result<MultistartOutcome<T>> {
    if guesses.is_empty() {
        return Err(Error::InvalidArgument("multistart needs >= 1 guess".into()));
    }
    let mut results: Vec<Option<SolveResult<T>>> = Vec::with_capacity(guesses.len());
    let mut best: Option<usize> = None;
    for (i, guess) in guesses.iter().enumerate() {
        match solve_local(spec, model, x0, guess, cfg) {
            Ok(res) => {
                let better = match best {
                    None => true,
                    Some(b) => res.cost < results[b].as_ref().unwrap().cost,
                };
                if better {
                    best = Some(i);
                }
                results.push(Some(res));
            }
            Err(Error::NonFiniteCost) | Err(Error::NonFinite(_)) => results.push(None),
            Err(e) => return Err(e),
        }
    }
    match best {
        Some(b) => Ok(MultistartOutcome { best: b, results }),
        None => Err(Error::AllSolvesDiverged),
    }
}
