//! Brute-force reference computations used to cross-check the learned and
//! closed-form machinery: exhaustive grid search, central differences, a
//! loop-based network forward pass, an iterative halfspace projection, RK4
//! dynamics, and the planning-span bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::approximator::{HiddenActivation, Mlp, MlpSpec, OutputActivation};
use crate::envs::{speedlimit, stabilization::Stabilization, EnvKind};
use crate::error::{Error, Result};
use crate::projection::safe_project;
use crate::usl::{psi, unroll, ActionCost, QuadraticCost, UslConfig};

pub const MAX_GRID_POINTS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    /// `(lo, hi, points)` per dimension.
    pub axes: Vec<(f64, f64, usize)>,
}

impl GridSpec {
    pub fn new(axes: Vec<(f64, f64, usize)>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&(lo, hi, n)| !(lo < hi) || n < 2) {
            return Err(Error::Oracle("grid axes need lo < hi and at least 2 points".into()));
        }
        let total = axes.iter().try_fold(1usize, |acc, &(_, _, n)| acc.checked_mul(n));
        if total.map_or(true, |t| t > MAX_GRID_POINTS) {
            return Err(Error::Oracle(format!("grid exceeds {MAX_GRID_POINTS} points")));
        }
        Ok(Self { axes })
    }

    /// `dims` copies of `[lo, hi]` sampled at `points` each.
    pub fn uniform(dims: usize, lo: f64, hi: f64, points: usize) -> Result<Self> {
        Self::new(vec![(lo, hi, points); dims])
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.2).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest spacing over all axes.
    pub fn spacing(&self) -> f64 {
        self.axes.iter().map(|&(lo, hi, n)| (hi - lo) / (n - 1) as f64).fold(0.0, f64::max)
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi, n) = self.axes[axis];
        if i == n - 1 {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    }

    /// Visits points in lexicographic order.
    pub fn for_each(&self, mut f: impl FnMut(&[f64])) {
        let dims = self.axes.len();
        let mut idx = vec![0usize; dims];
        let mut point: Vec<f64> = (0..dims).map(|d| self.coord(d, 0)).collect();
        loop {
            f(&point);
            let mut d = dims;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < self.axes[d].2 {
                    point[d] = self.coord(d, idx[d]);
                    break;
                }
                idx[d] = 0;
                point[d] = self.coord(d, 0);
            }
        }
    }
}

/// Exhaustive `argmax q(a)` over grid points with `qc(a) ≤ δ`. Ties go to the
/// lexicographically smallest point.
pub fn grid_constrained_argmax(
    q: &dyn Fn(&[f64]) -> f64,
    qc: &dyn Fn(&[f64]) -> f64,
    delta: f64,
    grid: &GridSpec,
) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    grid.for_each(|a| {
        if qc(a) <= delta {
            let v = q(a);
            if best.as_ref().map_or(true, |(_, b)| v > *b) {
                best = Some((a.to_vec(), v));
            }
        }
    });
    best.ok_or_else(|| Error::Oracle("infeasible on grid".into()))
}

/// Unconstrained grid argmax, same tie rule.
pub fn grid_argmax(f: &dyn Fn(&[f64]) -> f64, grid: &GridSpec) -> (Vec<f64>, f64) {
    grid_constrained_argmax(f, &|_| 0.0, 0.0, grid).expect("unconstrained grid is never infeasible")
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    finite_diff_coords(f, x, h, 0..x.len())
}

/// Central differences restricted to the listed coordinates.
pub fn finite_diff_coords(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64, coords: impl IntoIterator<Item = usize>) -> Vec<f64> {
    let mut p = x.to_vec();
    coords
        .into_iter()
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn hidden_fn(a: HiddenActivation, z: f64) -> f64 {
    match a {
        HiddenActivation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
        HiddenActivation::Tanh => z.tanh(),
    }
}

fn output_fn(a: OutputActivation, z: f64) -> f64 {
    match a {
        OutputActivation::Identity => z,
        OutputActivation::Tanh => z.tanh(),
        OutputActivation::Softplus => {
            if z > 30.0 {
                z + (-z).exp()
            } else {
                (1.0 + z.exp()).ln()
            }
        }
    }
}

/// Straight-line forward pass over a flat parameter vector: per layer a
/// row-major `fan_in x fan_out` weight block followed by `fan_out` biases.
pub fn reference_forward(spec: &MlpSpec, params: &[f64], input: &[f64]) -> Vec<f64> {
    let widths = &spec.layer_widths;
    let mut x = input.to_vec();
    let mut off = 0;
    for l in 0..widths.len() - 1 {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let w = &params[off..off + fi * fo];
        let b = &params[off + fi * fo..off + fi * fo + fo];
        off += fi * fo + fo;
        let last = l == widths.len() - 2;
        let mut y = vec![0.0; fo];
        for j in 0..fo {
            let mut z = b[j];
            for i in 0..fi {
                z += x[i] * w[i * fo + j];
            }
            y[j] = if last {
                output_fn(spec.output_activation, z)
            } else {
                hidden_fn(spec.hidden_activation, z)
            };
        }
        x = y;
    }
    x
}

/// `argmin ½‖a - μ‖²` subject to `gᵀa + c_prev ≤ ε`, solved by projected
/// gradient ascent on the scalar dual `λ ≥ 0`.
pub fn qp_halfspace_project(mu: &[f64], g: &[f64], c_prev: f64, eps: f64) -> Result<Vec<f64>> {
    let gg: f64 = g.iter().map(|x| x * x).sum();
    if !(gg > 1e-16) {
        return Err(Error::Oracle("degenerate constraint normal".into()));
    }
    let primal = |lambda: f64| -> Vec<f64> { mu.iter().zip(g).map(|(m, gi)| m - lambda * gi).collect() };
    let slack = |a: &[f64]| -> f64 { a.iter().zip(g).map(|(x, gi)| x * gi).sum::<f64>() + c_prev - eps };
    let step = 0.5 / gg;
    let mut lambda = 0.0_f64;
    for _ in 0..10_000 {
        let next = (lambda + step * slack(&primal(lambda))).max(0.0);
        let moved = (next - lambda).abs() * gg.sqrt();
        lambda = next;
        if moved <= 1e-12 {
            let a = primal(lambda);
            let s = slack(&a);
            if s <= 1e-10 && (lambda == 0.0 || s.abs() <= 1e-10) {
                return Ok(a);
            }
        }
    }
    Err(Error::Oracle("halfspace projection did not converge".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanningSpanInput {
    pub delta: f64,
    pub eps: f64,
    pub gamma: f64,
}

impl PlanningSpanInput {
    pub fn new(delta: f64, eps: f64, gamma: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= eps && gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Oracle(format!(
                "planning span needs 0 < delta <= eps and 0 < gamma < 1, got {delta}, {eps}, {gamma}"
            )));
        }
        Ok(Self { delta, eps, gamma })
    }

    /// `δ ≤ ε γ^T`.
    pub fn holds(&self, t: u32) -> bool {
        self.delta <= self.eps * self.gamma.powi(t as i32)
    }

    /// Largest `T` with `δ ≤ ε γ^T`.
    pub fn span(&self) -> u32 {
        let mut t = ((self.delta / self.eps).ln() / self.gamma.ln()).floor().max(0.0) as u32;
        while t > 0 && !self.holds(t) {
            t -= 1;
        }
        while self.holds(t + 1) {
            t += 1;
        }
        t
    }
}

pub fn planning_span(delta: f64, eps: f64, gamma: f64) -> Result<u32> {
    Ok(PlanningSpanInput::new(delta, eps, gamma)?.span())
}

/// Classic fourth-order Runge-Kutta step.
pub fn rk4_step(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], dt: f64) -> Vec<f64> {
    let shifted = |k: &[f64], s: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(x);
    let k2 = f(&shifted(&k1, dt / 2.0));
    let k3 = f(&shifted(&k2, dt / 2.0));
    let k4 = f(&shifted(&k3, dt));
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

pub fn rk4_integrate(f: &dyn Fn(&[f64]) -> Vec<f64>, x0: &[f64], duration: f64, substeps: usize) -> Vec<f64> {
    let dt = duration / substeps as f64;
    (0..substeps).fold(x0.to_vec(), |x, _| rk4_step(f, &x, dt))
}

/// `[ẋ, v̇]` of the speed-limit car under constant throttle.
pub fn speedlimit_ode(action: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    move |s: &[f64]| vec![s[1], speedlimit::MAX_ACCEL * action - speedlimit::DRAG * s[1]]
}

/// Continuous-time cart-pole vector field `[ẋ, ẍ, θ̇, θ̈]` for a constant
/// applied force.
pub fn cartpole_ode(force: f64) -> impl Fn(&[f64]) -> Vec<f64> {
    const G: f64 = 9.8;
    const MC: f64 = 1.0;
    const MP: f64 = 0.1;
    const L: f64 = 0.5;
    move |s: &[f64]| {
        let (th, thd) = (s[2], s[3]);
        let (sn, cs) = (th.sin(), th.cos());
        let m = MC + MP;
        let thdd = (G * sn - cs * (force + MP * L * thd * thd * sn) / m) / (L * (4.0 / 3.0 - MP * cs * cs / m));
        let xdd = (force + MP * L * (thd * thd * sn - thdd * cs)) / m;
        vec![s[1], xdd, thd, thdd]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollReport {
    pub grid_optimum: Vec<f64>,
    pub grid_value: f64,
    pub action: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    /// `q(grid optimum) - q(unrolled action)`.
    pub value_gap: f64,
    /// `‖unrolled action - grid optimum‖∞`.
    pub action_gap: f64,
}

pub fn unroll_vs_grid(
    q: &dyn Fn(&[f64]) -> f64,
    qc: &dyn ActionCost,
    cfg: &UslConfig,
    a0: &[f64],
    grid: &GridSpec,
) -> Result<UnrollReport> {
    let qc_value = |a: &[f64]| qc.value(a).unwrap_or(f64::INFINITY);
    let (grid_optimum, grid_value) = grid_constrained_argmax(q, &qc_value, cfg.delta, grid)?;
    let u = unroll(qc, a0, cfg)?;
    let value = q(&u.action);
    let action_gap = u.action.iter().zip(&grid_optimum).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(UnrollReport {
        feasible: qc.value(&u.action)? <= cfg.delta + 1e-6,
        grid_optimum,
        grid_value,
        value,
        value_gap: grid_value - value,
        action_gap,
        iterations: u.iterations,
        converged: u.converged,
        action: u.action,
    })
}

/// Outcome of one verification suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub cases: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl std::fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "[{}] {}: {} cases, max deviation {:.3e} (tolerance {:.1e}){}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.max_deviation,
            self.tolerance,
            if self.detail.is_empty() { String::new() } else { format!("; {}", self.detail) }
        )
    }
}

/// Every network shape instantiated by the algorithms across all environments.
pub fn architectures_in_use() -> Vec<MlpSpec> {
    let mut specs: Vec<MlpSpec> = Vec::new();
    for kind in EnvKind::ALL {
        let spec = kind.make(1).spec();
        let (o, a) = (spec.obs_dim, spec.act_dim);
        let candidates = [
            MlpSpec::two_hidden(o, a, OutputActivation::Tanh),
            MlpSpec::two_hidden(o + a, 1, OutputActivation::Identity),
            MlpSpec::two_hidden(o, 1, OutputActivation::Softplus),
            MlpSpec::two_hidden(o, a, OutputActivation::Identity),
        ];
        for s in candidates.into_iter().map(|s| s.expect("valid widths")) {
            if !specs.contains(&s) {
                specs.push(s);
            }
        }
    }
    specs
}

pub const GRAD_STEP: f64 = 1e-6;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Gradients below this magnitude are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

/// Analytic parameter and input gradients against central differences on
/// `nets_per_arch` random networks per architecture. Each network checks
/// every input coordinate and `param_coords` sampled parameter coordinates.
pub fn gradient_suite(nets_per_arch: usize, param_coords: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut forward_worst = 0.0_f64;
    let mut cases = 0;
    for spec in architectures_in_use() {
        for _ in 0..nets_per_arch {
            let net = Mlp::new(spec.clone(), rng.gen())?;
            let x: Vec<f64> = (0..spec.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..spec.output_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dot = |y: Vec<f64>| -> f64 { y.iter().zip(&up).map(|(a, b)| a * b).sum() };

            let reference = reference_forward(&spec, net.params(), &x);
            for (a, b) in net.forward(&x)?.iter().zip(&reference) {
                forward_worst = forward_worst.max((a - b).abs());
            }

            let gi = net.grad_input(&x, &up)?;
            let fd_in = finite_diff_grad(&|xx| dot(reference_forward(&spec, net.params(), xx)), &x, GRAD_STEP);
            for (a, b) in gi.iter().zip(&fd_in) {
                worst = worst.max(relative_error(*a, *b, GRAD_FLOOR));
            }

            let gp = net.grad_params(&x, &up)?;
            let coords: Vec<usize> = if param_coords >= gp.len() {
                (0..gp.len()).collect()
            } else {
                (0..param_coords).map(|_| rng.gen_range(0..gp.len())).collect()
            };
            let fd_p = finite_diff_coords(&|p| dot(reference_forward(&spec, p, &x)), net.params(), GRAD_STEP, coords.iter().copied());
            for (&k, b) in coords.iter().zip(&fd_p) {
                worst = worst.max(relative_error(gp[k], *b, GRAD_FLOOR));
            }
            cases += 1;
        }
    }
    Ok(SuiteReport {
        name: "network gradients vs central differences",
        passed: worst <= GRAD_TOLERANCE && forward_worst <= 1e-12,
        cases,
        max_deviation: worst,
        tolerance: GRAD_TOLERANCE,
        detail: format!("forward vs reference max |diff| {forward_worst:.1e}"),
    })
}

/// Closed-form projection against the iterative QP on random instances,
/// comparing the pre-clamp solutions.
pub fn projection_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut projected = 0;
    for _ in 0..instances {
        let m = rng.gen_range(1..=4);
        let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = loop {
            let g: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            if g.iter().map(|x| x * x).sum::<f64>() > 1e-3 {
                break g;
            }
        };
        let c_prev = rng.gen_range(0.0..1.0);
        let eps = rng.gen_range(0.0..0.5);
        let closed = safe_project(&mu, &g, c_prev, eps);
        let qp = qp_halfspace_project(&mu, &g, c_prev, eps)?;
        if closed.unclamped != mu {
            projected += 1;
        }
        for (a, b) in closed.unclamped.iter().zip(&qp) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(SuiteReport {
        name: "closed-form halfspace projection vs iterative QP",
        passed: worst <= 1e-6,
        cases: instances,
        max_deviation: worst,
        tolerance: 1e-6,
        detail: format!("{projected} instances needed projection"),
    })
}

/// Random convex quadratic `(a - c)ᵀ H (a - c)` in two dimensions with
/// eigenvalues in `[lo, hi]`.
pub fn random_convex_quadratic(rng: &mut ChaCha8Rng, lo: f64, hi: f64, center_range: f64) -> QuadraticCost {
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
    let (s, c) = angle.sin_cos();
    let (l1, l2) = (rng.gen_range(lo..hi), rng.gen_range(lo..hi));
    let h = vec![
        l1 * c * c + l2 * s * s,
        (l1 - l2) * c * s,
        (l1 - l2) * c * s,
        l1 * s * s + l2 * c * c,
    ];
    let center = vec![rng.gen_range(-center_range..center_range), rng.gen_range(-center_range..center_range)];
    QuadraticCost::new(h, center).expect("2x2 hessian")
}

/// Mechanics of the unrolling operator on synthetic quadratics:
/// identity on feasible actions, per-coordinate step bound, and feasibility
/// after unrolling from starts within Euclidean distance `η K` of the
/// feasible set. Costs have condition number at most 2.
pub fn unroll_mechanics_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let cfg = UslConfig::default();
    let reach = cfg.eta * cfg.k_max as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst_step = 0.0_f64;
    let mut worst_violation = 0.0_f64;
    let mut checked = 0;
    let fine = GridSpec::uniform(2, -1.0, 1.0, 201)?;
    while checked < instances {
        let cost = random_convex_quadratic(&mut rng, 0.5, 1.0, 0.5);
        let a0 = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let v0 = cost.value(&a0)?;

        let step = psi(&cost, &a0, &cfg)?;
        if v0 <= cfg.delta && step.action != a0 {
            failures.push(format!("psi moved a feasible action {a0:?}"));
        }
        for (x, y) in a0.iter().zip(&step.action) {
            worst_step = worst_step.max((x - y).abs());
        }

        let mut dist = f64::INFINITY;
        fine.for_each(|p| {
            if cost.value(p).unwrap() <= cfg.delta {
                dist = dist.min((p[0] - a0[0]).hypot(p[1] - a0[1]));
            }
        });
        if dist > reach {
            continue;
        }
        let u = unroll(&cost, &a0, &cfg)?;
        let violation = (cost.value(&u.action)? - cfg.delta).max(0.0);
        worst_violation = worst_violation.max(violation);
        if violation > 1e-6 {
            failures.push(format!("a0 {a0:?} at distance {dist:.3} ended with violation {violation:.3e}"));
        }
        checked += 1;
    }
    let step_ok = worst_step <= cfg.eta + 1e-12;
    Ok(SuiteReport {
        name: "unrolling mechanics on convex quadratics",
        passed: failures.is_empty() && step_ok,
        cases: checked,
        max_deviation: worst_violation,
        tolerance: 1e-6,
        detail: format!(
            "max per-coordinate step {worst_step:.4} (bound {}){}",
            cfg.eta,
            failures.first().map(|f| format!(", first failure: {f}")).unwrap_or_default()
        ),
    })
}

/// Unrolling from the grid optimum of the penalized objective ends feasible
/// with an optimality gap of at most two grid spacings, measured in value
/// units as `gap / (‖∇q(a*)‖₁ h)`. Instances are concave rewards
/// `-‖a - t‖²` against convex costs, kept where the penalty factor exceeds
/// the constraint's multiplier at the optimum.
pub fn penalty_unroll_suite(instances: usize, seed: u64) -> Result<SuiteReport> {
    let cfg = UslConfig::default();
    let grid = GridSpec::uniform(2, -1.0, 1.0, 81)?;
    let spacing = grid.spacing();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    let mut infeasible = 0;
    let mut checked = 0;
    let mut worst_case = String::new();
    while checked < instances {
        let cost = random_convex_quadratic(&mut rng, 0.5, 5.0, 0.4);
        let target = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let q = move |a: &[f64]| -((a[0] - target[0]).powi(2) + (a[1] - target[1]).powi(2));
        let qc = |a: &[f64]| cost.value(a).unwrap();
        let Ok((opt, _)) = grid_constrained_argmax(&q, &qc, cfg.delta, &grid) else {
            continue;
        };
        let grad_q = finite_diff_grad(&q, &opt, 1e-6);
        let grad_c = finite_diff_grad(&qc, &opt, 1e-6);
        if qc(&opt) < cfg.delta - 0.05 {
            continue;
        }
        // Multiplier of the active constraint at the optimum.
        let lambda = grad_q[0].hypot(grad_q[1]) / grad_c[0].hypot(grad_c[1]).max(1e-12);
        if lambda >= cfg.kappa {
            continue;
        }
        let penalized = |a: &[f64]| q(a) - cfg.kappa * (qc(a) - cfg.delta).max(0.0);
        let (a0, _) = grid_argmax(&penalized, &grid);
        let report = unroll_vs_grid(&q, &cost, &cfg, &a0, &grid)?;
        if !report.feasible {
            infeasible += 1;
        }
        let slope = grad_q.iter().map(|g| g.abs()).sum::<f64>().max(1e-12);
        let gap = report.value_gap.max(0.0) / (slope * spacing);
        if gap > worst {
            worst = gap;
            worst_case = format!("a0 {a0:?}, optimum {:?}, unrolled {:?}", report.grid_optimum, report.action);
        }
        checked += 1;
    }
    Ok(SuiteReport {
        name: "penalty optimum then unrolling vs grid optimum",
        passed: worst <= 2.0 && infeasible == 0,
        cases: checked,
        max_deviation: worst,
        tolerance: 2.0,
        detail: format!(
            "gap in grid spacings, {infeasible} infeasible endpoints{}",
            if worst > 0.0 { format!("; worst: {worst_case}") } else { String::new() }
        ),
    })
}

pub fn planning_span_suite() -> Result<SuiteReport> {
    let input = PlanningSpanInput::new(0.1, 1.0, 0.99)?;
    let t = input.span();
    let predicate = input.holds(229) && !input.holds(230);
    let boundary = planning_span(1.0, 1.0, 0.99)? == 0 && planning_span(0.5, 1.0, 0.5)? == 1;
    Ok(SuiteReport {
        name: "planning span",
        passed: t == 229 && predicate && boundary && t >= 100,
        cases: 3,
        max_deviation: (t as f64 - 229.0).abs(),
        tolerance: 0.0,
        detail: format!("T(0.1, 1, 0.99) = {t}; 0.99^229 = {:.6}, 0.99^230 = {:.6}", 0.99f64.powi(229), 0.99f64.powi(230)),
    })
}

/// Environment integrators against RK4 on the continuous dynamics.
pub fn dynamics_suite() -> Result<SuiteReport> {
    let mut worst = 0.0_f64;
    // Speed-limit car: a fine Euler step converges to the ODE.
    for &action in &[-1.0, -0.3, 0.4, 1.0] {
        let (mut p, mut v) = (0.0, 0.5);
        let dt = 1e-4;
        for _ in 0..10_000 {
            (p, v) = speedlimit::SpeedLimit::integrate(p, v, action, dt);
        }
        let exact = rk4_integrate(&speedlimit_ode(action), &[0.0, 0.5], 1.0, 1000);
        worst = worst.max((p - exact[0]).abs()).max((v - exact[1]).abs());
    }
    let speed_ok = worst <= 1e-3;
    // Cart-pole: the 20 ms step stays close to RK4 over a short horizon.
    let mut cart_worst = 0.0_f64;
    for &force in &[-10.0, 0.0, 5.0] {
        let mut s = [0.0, 0.0, 0.05, -0.05];
        let mut r = s.to_vec();
        for _ in 0..10 {
            s = Stabilization::integrate(s, force);
            r = rk4_integrate(&cartpole_ode(force), &r, 0.02, 20);
        }
        for (a, b) in s.iter().zip(&r) {
            cart_worst = cart_worst.max((a - b).abs());
        }
    }
    Ok(SuiteReport {
        name: "environment integrators vs RK4",
        passed: speed_ok && cart_worst <= 0.05,
        cases: 7,
        max_deviation: worst.max(cart_worst),
        tolerance: 0.05,
        detail: format!("speed-limit max |diff| {worst:.2e}, cart-pole max |diff| {cart_worst:.2e}"),
    })
}

/// Everything the `verify` command runs.
pub fn run_all() -> Result<Vec<SuiteReport>> {
    Ok(vec![
        gradient_suite(100, 128, 1)?,
        projection_suite(1000, 2)?,
        unroll_mechanics_suite(500, 3)?,
        penalty_unroll_suite(200, 4)?,
        planning_span_suite()?,
        dynamics_suite()?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_unconstrained_optimum() {
        let grid = GridSpec::uniform(1, -1.0, 1.0, 201).unwrap();
        let (a, _) = grid_constrained_argmax(&|a| -a[0] * a[0], &|_| 0.0, 0.1, &grid).unwrap();
        assert!(a[0].abs() < 1e-12);
    }

    #[test]
    fn grid_constrained_optimum_on_boundary() {
        let grid = GridSpec::uniform(1, -1.0, 1.0, 20_001).unwrap();
        let (a, _) = grid_constrained_argmax(&|a| a[0], &|a| a[0] * a[0], 0.1, &grid).unwrap();
        assert!((a[0] - 0.1f64.sqrt()).abs() <= grid.spacing());
        assert!(a[0] * a[0] <= 0.1);
    }

    #[test]
    fn grid_infeasible() {
        let grid = GridSpec::uniform(2, -1.0, 1.0, 11).unwrap();
        let err = grid_constrained_argmax(&|_| 0.0, &|_| 1.0, 0.1, &grid).unwrap_err();
        assert!(err.to_string().contains("infeasible on grid"));
    }

    #[test]
    fn grid_ties_break_lexicographically() {
        let grid = GridSpec::uniform(2, -1.0, 1.0, 3).unwrap();
        let (a, _) = grid_argmax(&|_| 1.0, &grid);
        assert_eq!(a, vec![-1.0, -1.0]);
        let (a, _) = grid_argmax(&|a| a[0].abs(), &grid);
        assert_eq!(a, vec![-1.0, -1.0]);
    }

    #[test]
    fn grid_rejects_bad_axes() {
        assert!(GridSpec::new(vec![(1.0, 0.0, 5)]).is_err());
        assert!(GridSpec::new(vec![(0.0, 1.0, 1)]).is_err());
        assert!(GridSpec::uniform(3, 0.0, 1.0, 1000).is_err());
    }

    #[test]
    fn refining_grid_keeps_optimum_within_lipschitz_bound() {
        let q = |a: &[f64]| (3.0 * a[0]).sin() + a[1];
        let qc = |a: &[f64]| a[0] * a[0] + a[1] * a[1];
        let coarse = GridSpec::uniform(2, -1.0, 1.0, 21).unwrap();
        let fine = GridSpec::uniform(2, -1.0, 1.0, 201).unwrap();
        let (_, vc) = grid_constrained_argmax(&q, &qc, 0.3, &coarse).unwrap();
        let (_, vf) = grid_constrained_argmax(&q, &qc, 0.3, &fine).unwrap();
        assert!(vf >= vc - 4.0 * coarse.spacing());
    }

    #[test]
    fn finite_differences_on_simple_functions() {
        let g = finite_diff_grad(&|x| x[0] * x[0], &[3.0], 1e-6);
        assert!((g[0] - 6.0).abs() < 1e-6);
        assert_eq!(finite_diff_grad(&|_| 4.0, &[1.0, 2.0], 1e-6), vec![0.0, 0.0]);
    }

    #[test]
    fn reference_forward_agrees_with_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for spec in architectures_in_use() {
            let net = Mlp::new(spec.clone(), rng.gen()).unwrap();
            let x: Vec<f64> = (0..spec.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let a = net.forward(&x).unwrap();
            let b = reference_forward(&spec, net.params(), &x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn qp_examples() {
        assert_eq!(qp_halfspace_project(&[0.0, 0.0], &[1.0, 1.0], 0.0, 0.1).unwrap(), vec![0.0, 0.0]);
        let a = qp_halfspace_project(&[1.0, 0.0], &[2.0, 0.0], 0.0, 0.1).unwrap();
        assert!((a[0] - 0.05).abs() < 1e-9 && a[1].abs() < 1e-12);
        assert!(qp_halfspace_project(&[1.0], &[0.0], 0.5, 0.1).is_err());
    }

    #[test]
    fn planning_span_examples() {
        assert_eq!(planning_span(0.1, 1.0, 0.99).unwrap(), 229);
        assert!(0.99f64.powi(229) >= 0.1 && 0.99f64.powi(230) < 0.1);
        assert_eq!(planning_span(0.3, 0.3, 0.9).unwrap(), 0);
        assert_eq!(planning_span(0.5, 1.0, 0.5).unwrap(), 1);
        assert!(planning_span(2.0, 1.0, 0.99).is_err());
        assert!(planning_span(0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn unroll_from_grid_optimum_is_a_no_op() {
        let cfg = UslConfig::default();
        let grid = GridSpec::uniform(1, -1.0, 1.0, 201).unwrap();
        let cost = QuadraticCost::new(vec![1.0], vec![0.0]).unwrap();
        let q = |a: &[f64]| a[0];
        let (opt, _) = grid_constrained_argmax(&q, &|a| a[0] * a[0], cfg.delta, &grid).unwrap();
        let r = unroll_vs_grid(&q, &cost, &cfg, &opt, &grid).unwrap();
        assert_eq!((r.iterations, r.value_gap, r.action_gap), (0, 0.0, 0.0));
    }

    #[test]
    fn unreachable_start_is_flagged() {
        let cfg = UslConfig {
            k_max: 2,
            ..UslConfig::default()
        };
        let grid = GridSpec::uniform(1, -1.0, 1.0, 201).unwrap();
        let cost = QuadraticCost::new(vec![1.0], vec![0.0]).unwrap();
        let r = unroll_vs_grid(&|a| a[0], &cost, &cfg, &[1.0], &grid).unwrap();
        assert!(!r.converged && !r.feasible);
        assert_eq!(r.iterations, 2);
    }

    #[test]
    fn cheap_suites_pass() {
        for r in [
            planning_span_suite().unwrap(),
            dynamics_suite().unwrap(),
            projection_suite(200, 9).unwrap(),
            unroll_mechanics_suite(50, 9).unwrap(),
            penalty_unroll_suite(30, 9).unwrap(),
            gradient_suite(2, 32, 9).unwrap(),
        ] {
            assert!(r.passed, "{r}");
        }
    }
}
