//! Constrained CES demand solver.
//!
//! Solves `max (sum_j (w_j x_j)^(1/r))^r` subject to a budget constraint
//! `q . x <= B`, a total-quantity constraint `sum x <= R`, per-good upper
//! bounds `x_j <= cap_j`, and non-negativity. This is the demand problem every
//! client solves when preparing its crowdsourced request bundle and its
//! per-iteration purchase.
//!
//! The main path is an active-set method over the cap constraints: on the
//! free coordinates the optimum has a closed form when only the budget or
//! only the total binds, and reduces to a one-dimensional monotone root find
//! when both bind. If the active set ever cycles, a projected-gradient ascent
//! with backtracking takes over. A brute-force lattice search
//! ([`grid_oracle`]) serves as an independent check.

use std::collections::BTreeSet;
use std::error::Error;
use std::fmt;

use crate::scalar::{num, Scalar};

/// Feasibility tolerance on bundle coordinates (Mbps).
pub const FEASIBILITY_TOL: f64 = 1e-8;
/// Relative tolerance on achieved utility.
pub const UTILITY_REL_TOL: f64 = 1e-9;
/// Tolerance on the projected-gradient (KKT) residual.
pub const KKT_TOL: f64 = 1e-7;

const MAX_ORACLE_GOODS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum SolverError {
    NegativeComponent { index: usize },
    NonPositive { name: &'static str, index: usize },
    NonFinite { name: &'static str },
    DimensionMismatch { left: usize, right: usize },
    TooManyGoods { goods: usize, max: usize },
    BadGrid { points: usize },
}

impl fmt::Display for SolverError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SolverError::NegativeComponent { index } => {
                write!(f, "bundle component {index} is negative")
            }
            SolverError::NonPositive { name, index } => {
                write!(f, "{name}[{index}] must be positive")
            }
            SolverError::NonFinite { name } => write!(f, "{name} must be finite"),
            SolverError::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
            SolverError::TooManyGoods { goods, max } => {
                write!(f, "refusing exhaustive search over {goods} goods (max {max})")
            }
            SolverError::BadGrid { points } => {
                write!(f, "grid must have at least 2 points per axis, got {points}")
            }
        }
    }
}

impl Error for SolverError {}

/// Which constraints are tight at a returned solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ConstraintTag {
    Budget,
    Total,
    Cap(usize),
    NonNeg(usize),
}

/// One CES maximization instance.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProblem<S> {
    weights: Vec<S>,
    exponent: S,
    prices: Vec<S>,
    budget: S,
    total_cap: S,
    per_good_caps: Vec<S>,
}

impl<S: Scalar> DemandProblem<S> {
    /// `total_cap` and individual `per_good_caps` entries may be infinite;
    /// the budget must be finite (it is what keeps the problem bounded).
    pub fn new(
        weights: Vec<S>,
        exponent: S,
        prices: Vec<S>,
        budget: S,
        total_cap: S,
        per_good_caps: Vec<S>,
    ) -> Result<Self, SolverError> {
        if weights.len() != prices.len() {
            return Err(SolverError::DimensionMismatch {
                left: weights.len(),
                right: prices.len(),
            });
        }
        if per_good_caps.len() != weights.len() {
            return Err(SolverError::DimensionMismatch {
                left: per_good_caps.len(),
                right: weights.len(),
            });
        }
        for (i, w) in weights.iter().enumerate() {
            if !(*w > S::zero()) || !w.is_finite() {
                return Err(SolverError::NonPositive {
                    name: "weights",
                    index: i,
                });
            }
        }
        for (i, q) in prices.iter().enumerate() {
            if !(*q > S::zero()) || !q.is_finite() {
                return Err(SolverError::NonPositive {
                    name: "prices",
                    index: i,
                });
            }
        }
        if !(exponent > S::one()) || !exponent.is_finite() {
            return Err(SolverError::NonFinite { name: "exponent" });
        }
        if !(budget >= S::zero()) || !budget.is_finite() {
            return Err(SolverError::NonFinite { name: "budget" });
        }
        if !(total_cap >= S::zero()) || total_cap.is_nan() {
            return Err(SolverError::NonFinite { name: "total_cap" });
        }
        for (i, c) in per_good_caps.iter().enumerate() {
            if !(*c >= S::zero()) || c.is_nan() {
                return Err(SolverError::NonPositive {
                    name: "per_good_caps",
                    index: i,
                });
            }
        }
        Ok(DemandProblem {
            weights,
            exponent,
            prices,
            budget,
            total_cap,
            per_good_caps,
        })
    }

    pub fn goods(&self) -> usize {
        self.weights.len()
    }
    pub fn weights(&self) -> &[S] {
        &self.weights
    }
    pub fn exponent(&self) -> S {
        self.exponent
    }
    pub fn prices(&self) -> &[S] {
        &self.prices
    }
    pub fn budget(&self) -> S {
        self.budget
    }
    pub fn total_cap(&self) -> S {
        self.total_cap
    }
    pub fn per_good_caps(&self) -> &[S] {
        &self.per_good_caps
    }
}

/// Result of a demand solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandSolution<S> {
    pub bundle: Vec<S>,
    pub utility: S,
    pub active_constraints: BTreeSet<ConstraintTag>,
}

/// Diagnostics from [`solve_demand_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveStats {
    pub active_set_iterations: u32,
    pub used_fallback: bool,
}

/// CES utility `(sum_j (w_j x_j)^(1/r))^r`; zero bundle evaluates to zero.
pub fn ces_utility<S: Scalar>(bundle: &[S], weights: &[S], exponent: S) -> Result<S, SolverError> {
    if bundle.len() != weights.len() {
        return Err(SolverError::DimensionMismatch {
            left: bundle.len(),
            right: weights.len(),
        });
    }
    let inv = exponent.recip();
    let mut acc = S::zero();
    for (i, (&x, &w)) in bundle.iter().zip(weights).enumerate() {
        if x < S::zero() {
            return Err(SolverError::NegativeComponent { index: i });
        }
        if x > S::zero() {
            acc = acc + (w * x).powf(inv);
        }
    }
    Ok(acc.powf(exponent))
}

/// Closed-form optimum when only the budget constraint binds:
/// `x_j = B * a_j / (q . a)` with `a_j = w_j^(1/(r-1)) * q_j^(-r/(r-1))`,
/// so the budget is spent exactly.
pub fn solve_budget_only<S: Scalar>(
    weights: &[S],
    exponent: S,
    prices: &[S],
    budget: S,
) -> DemandSolution<S> {
    let n = weights.len();
    let idx: Vec<usize> = (0..n).collect();
    let mut bundle = vec![S::zero(); n];
    let mut tags = BTreeSet::new();
    if budget > S::zero() {
        let (x, _lambda) = budget_split(weights, exponent, prices, budget, &idx);
        for (slot, v) in idx.iter().zip(x) {
            bundle[*slot] = v;
        }
        tags.insert(ConstraintTag::Budget);
    } else {
        tags.insert(ConstraintTag::Budget);
        for j in 0..n {
            tags.insert(ConstraintTag::NonNeg(j));
        }
    }
    let utility = ces_utility(&bundle, weights, exponent).expect("bundle is non-negative");
    DemandSolution {
        bundle,
        utility,
        active_constraints: tags,
    }
}

/// Solve the full constrained problem. The zero bundle is always feasible, so
/// this cannot fail on a valid [`DemandProblem`].
pub fn solve_demand<S: Scalar>(problem: &DemandProblem<S>) -> DemandSolution<S> {
    solve_demand_with_stats(problem).0
}

/// As [`solve_demand`], also reporting iteration counts and whether the
/// projected-gradient fallback was taken.
pub fn solve_demand_with_stats<S: Scalar>(
    problem: &DemandProblem<S>,
) -> (DemandSolution<S>, SolveStats) {
    let n = problem.goods();
    let mut stats = SolveStats::default();
    if n == 0 {
        return (
            DemandSolution {
                bundle: vec![],
                utility: S::zero(),
                active_constraints: BTreeSet::new(),
            },
            stats,
        );
    }
    let tiny = num::<S>(1e-300);
    if problem.budget <= tiny || problem.total_cap <= tiny {
        let mut tags = BTreeSet::new();
        tags.insert(if problem.budget <= tiny {
            ConstraintTag::Budget
        } else {
            ConstraintTag::Total
        });
        for j in 0..n {
            tags.insert(ConstraintTag::NonNeg(j));
        }
        return (
            DemandSolution {
                bundle: vec![S::zero(); n],
                utility: S::zero(),
                active_constraints: tags,
            },
            stats,
        );
    }

    match active_set_solve(problem, &mut stats) {
        Some(sol) => (sol, stats),
        None => {
            stats.used_fallback = true;
            (projected_gradient(problem), stats)
        }
    }
}

// ---------------------------------------------------------------------------
// Active-set machinery
// ---------------------------------------------------------------------------

/// Per-coordinate optimum proportions for the budget-only case, with the
/// shared multiplier of the budget constraint.
fn budget_split<S: Scalar>(
    weights: &[S],
    exponent: S,
    prices: &[S],
    budget: S,
    idx: &[usize],
) -> (Vec<S>, S) {
    let r = exponent;
    let e = (r - S::one()).recip(); // 1/(r-1)
    let er = r * e; // r/(r-1)
    let mut coeff = Vec::with_capacity(idx.len());
    let mut denom = S::zero();
    for &j in idx {
        let a = weights[j].powf(e) * prices[j].powf(-er);
        denom = denom + prices[j] * a;
        coeff.push(a);
    }
    let x: Vec<S> = coeff.iter().map(|&a| budget * a / denom).collect();
    let j0 = idx[0];
    let lambda = grad_term(weights[j0], r, x[0]) / prices[j0];
    (x, lambda)
}

/// Proportional split when only the total-quantity constraint binds:
/// `x_j = R * b_j / sum(b)` with `b_j = w_j^(1/(r-1))` (price-independent).
fn total_split<S: Scalar>(weights: &[S], exponent: S, total: S, idx: &[usize]) -> (Vec<S>, S) {
    let r = exponent;
    let e = (r - S::one()).recip();
    let mut coeff = Vec::with_capacity(idx.len());
    let mut denom = S::zero();
    for &j in idx {
        let b = weights[j].powf(e);
        denom = denom + b;
        coeff.push(b);
    }
    let x: Vec<S> = coeff.iter().map(|&b| total * b / denom).collect();
    let mu = grad_term(weights[idx[0]], r, x[0]);
    (x, mu)
}

/// d/dx (w x)^(1/r) = (1/r) w^(1/r) x^(1/r - 1).
fn grad_term<S: Scalar>(weight: S, exponent: S, x: S) -> S {
    let inv = exponent.recip();
    inv * weight.powf(inv) * x.powf(inv - S::one())
}

/// Free-coordinate optimum when budget and total bind simultaneously.
///
/// With multipliers `lambda` (budget) and `mu = t * lambda` (total), the
/// stationary bundle is `x_j proportional to psi_j(t)` where
/// `psi_j(t) = (w_j^(1/r) / (r (q_j + t)))^(r/(r-1))`. The psi-weighted mean
/// price is increasing in `t`, so `t` solves `mean price = B'/R'` by
/// bisection.
fn both_bind_split<S: Scalar>(
    weights: &[S],
    exponent: S,
    prices: &[S],
    budget: S,
    total: S,
    idx: &[usize],
) -> (Vec<S>, S, S) {
    let r = exponent;
    let inv = r.recip();
    let er = r * (r - S::one()).recip();
    let target = budget / total;

    let psi = |t: S| -> Vec<S> {
        idx.iter()
            .map(|&j| (weights[j].powf(inv) / (r * (prices[j] + t))).powf(er))
            .collect()
    };
    let avg_price = |t: S| -> S {
        let p = psi(t);
        let mut wsum = S::zero();
        let mut psum = S::zero();
        for (k, &j) in idx.iter().enumerate() {
            wsum = wsum + prices[j] * p[k];
            psum = psum + p[k];
        }
        wsum / psum
    };

    let mut lo = S::zero();
    let mut hi = S::one();
    let mut grow = 0;
    while avg_price(hi) < target && grow < 200 {
        lo = hi;
        hi = hi * num::<S>(4.0);
        grow += 1;
    }
    for _ in 0..200 {
        let mid = (lo + hi) * num::<S>(0.5);
        if avg_price(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= hi.abs().max(S::one()) * num::<S>(1e-16) {
            break;
        }
    }
    let t = (lo + hi) * num::<S>(0.5);
    let p = psi(t);
    let psum = p.iter().fold(S::zero(), |acc, &v| acc + v);
    let x: Vec<S> = p.iter().map(|&v| total * v / psum).collect();

    // Recover multipliers from stationarity, averaged over coordinates.
    let mut lambda = S::zero();
    for (k, &j) in idx.iter().enumerate() {
        lambda = lambda + grad_term(weights[j], r, x[k]) / (prices[j] + t);
    }
    lambda = lambda / num::<S>(idx.len() as f64);
    (x, lambda, lambda * t)
}

struct FreeSolution<S> {
    x: Vec<S>,
    lambda: S,
    mu: S,
}

/// Optimum over the free coordinates `idx` with remaining budget/total.
fn solve_free<S: Scalar>(
    weights: &[S],
    exponent: S,
    prices: &[S],
    rem_budget: S,
    rem_total: S,
    idx: &[usize],
) -> FreeSolution<S> {
    let slack = num::<S>(1.0 + 1e-12);
    if rem_budget <= S::zero() || rem_total <= S::zero() {
        return FreeSolution {
            x: vec![S::zero(); idx.len()],
            lambda: S::infinity(),
            mu: S::zero(),
        };
    }

    let (xb, lambda) = budget_split(weights, exponent, prices, rem_budget, idx);
    let total_b = xb.iter().fold(S::zero(), |acc, &v| acc + v);
    if total_b <= rem_total * slack {
        return FreeSolution {
            x: xb,
            lambda,
            mu: S::zero(),
        };
    }

    // rem_total is finite here, otherwise the branch above always returns.
    let (xt, mu) = total_split(weights, exponent, rem_total, idx);
    let cost_t = idx
        .iter()
        .zip(&xt)
        .fold(S::zero(), |acc, (&j, &v)| acc + prices[j] * v);
    if cost_t <= rem_budget * slack {
        return FreeSolution {
            x: xt,
            lambda: S::zero(),
            mu,
        };
    }

    let (x, lambda, mu) = both_bind_split(weights, exponent, prices, rem_budget, rem_total, idx);
    FreeSolution { x, lambda, mu }
}

fn active_set_solve<S: Scalar>(
    problem: &DemandProblem<S>,
    stats: &mut SolveStats,
) -> Option<DemandSolution<S>> {
    let n = problem.goods();
    let w = &problem.weights;
    let q = &problem.prices;
    let r = problem.exponent;
    let caps = &problem.per_good_caps;

    let mut capped: Vec<bool> = caps.iter().map(|&c| c <= S::zero()).collect();
    let mut seen: BTreeSet<Vec<bool>> = BTreeSet::new();

    let max_iters = 4 * n + 16;
    for _ in 0..max_iters {
        stats.active_set_iterations += 1;
        if !seen.insert(capped.clone()) {
            return None; // cycled
        }

        let mut rem_budget = problem.budget;
        let mut rem_total = problem.total_cap;
        for j in 0..n {
            if capped[j] && caps[j] > S::zero() {
                rem_budget = rem_budget - q[j] * caps[j];
                rem_total = rem_total - caps[j];
            }
        }
        rem_budget = rem_budget.max(S::zero());
        rem_total = rem_total.max(S::zero());

        let free: Vec<usize> = (0..n).filter(|&j| !capped[j]).collect();
        let sub = if free.is_empty() {
            FreeSolution {
                x: vec![],
                lambda: S::zero(),
                mu: S::zero(),
            }
        } else {
            solve_free(w, r, q, rem_budget, rem_total, &free)
        };

        let mut x = vec![S::zero(); n];
        for j in 0..n {
            if capped[j] {
                x[j] = caps[j].max(S::zero());
            }
        }
        for (k, &j) in free.iter().enumerate() {
            x[j] = sub.x[k];
        }

        // Entry: cap the most violated coordinate (ties to the lowest index).
        let mut worst: Option<(usize, S)> = None;
        for &j in &free {
            let tol = caps[j].max(S::one()) * num::<S>(1e-10);
            if caps[j].is_finite() && x[j] > caps[j] + tol {
                let excess = x[j] - caps[j];
                match worst {
                    Some((_, e)) if excess <= e => {}
                    _ => worst = Some((j, excess)),
                }
            }
        }
        if let Some((j, _)) = worst {
            capped[j] = true;
            continue;
        }

        // Release: a capped coordinate whose multiplier went negative.
        let mut release: Option<usize> = None;
        for j in 0..n {
            if capped[j] && caps[j] > S::zero() {
                let eta = grad_term(w[j], r, caps[j]) - sub.lambda * q[j] - sub.mu;
                let scale = (sub.lambda * q[j] + sub.mu).abs().max(S::one());
                if eta < -scale * num::<S>(1e-9) {
                    release = Some(j);
                    break; // lowest index
                }
            }
        }
        if let Some(j) = release {
            capped[j] = false;
            continue;
        }

        for j in 0..n {
            x[j] = x[j].min(caps[j]).max(S::zero());
        }
        return Some(finish_solution(problem, x, &capped));
    }
    None
}

fn finish_solution<S: Scalar>(
    problem: &DemandProblem<S>,
    bundle: Vec<S>,
    capped: &[bool],
) -> DemandSolution<S> {
    let mut tags = BTreeSet::new();
    let n = problem.goods();
    let spend = bundle
        .iter()
        .zip(&problem.prices)
        .fold(S::zero(), |acc, (&x, &q)| acc + x * q);
    let total = bundle.iter().fold(S::zero(), |acc, &x| acc + x);
    let btol = problem.budget.max(S::one()) * num::<S>(1e-9);
    if (problem.budget - spend).abs() <= btol {
        tags.insert(ConstraintTag::Budget);
    }
    if problem.total_cap.is_finite() {
        let ttol = problem.total_cap.max(S::one()) * num::<S>(1e-9);
        if (problem.total_cap - total).abs() <= ttol {
            tags.insert(ConstraintTag::Total);
        }
    }
    for j in 0..n {
        if capped[j] {
            tags.insert(ConstraintTag::Cap(j));
        } else if bundle[j] <= num::<S>(FEASIBILITY_TOL) {
            tags.insert(ConstraintTag::NonNeg(j));
        }
    }
    let utility =
        ces_utility(&bundle, &problem.weights, problem.exponent).expect("bundle non-negative");
    DemandSolution {
        bundle,
        utility,
        active_constraints: tags,
    }
}

// ---------------------------------------------------------------------------
// Projected-gradient fallback
// ---------------------------------------------------------------------------

/// Projection onto `{0 <= x <= cap, q.x <= B, sum x <= R}` by Dykstra's
/// alternating scheme.
fn project_feasible<S: Scalar>(z: &[S], problem: &DemandProblem<S>) -> Vec<S> {
    let n = z.len();
    let q = &problem.prices;
    let qq = q.iter().fold(S::zero(), |acc, &v| acc + v * v);
    let nn = num::<S>(n as f64);

    let mut x = z.to_vec();
    let mut p_box = vec![S::zero(); n];
    let mut p_bud = vec![S::zero(); n];
    let mut p_tot = vec![S::zero(); n];

    for _ in 0..64 {
        let prev = x.clone();

        for j in 0..n {
            let y = x[j] + p_box[j];
            let clamped = y.max(S::zero()).min(problem.per_good_caps[j]);
            p_box[j] = y - clamped;
            x[j] = clamped;
        }

        let mut dot = S::zero();
        for j in 0..n {
            x[j] = x[j] + p_bud[j];
            dot = dot + q[j] * x[j];
        }
        let over = (dot - problem.budget).max(S::zero()) / qq;
        for j in 0..n {
            let proj = x[j] - over * q[j];
            p_bud[j] = x[j] - proj;
            x[j] = proj;
        }

        if problem.total_cap.is_finite() {
            let mut sum = S::zero();
            for j in 0..n {
                x[j] = x[j] + p_tot[j];
                sum = sum + x[j];
            }
            let over = (sum - problem.total_cap).max(S::zero()) / nn;
            for j in 0..n {
                let proj = x[j] - over;
                p_tot[j] = x[j] - proj;
                x[j] = proj;
            }
        }

        let drift = x
            .iter()
            .zip(&prev)
            .fold(S::zero(), |acc, (&a, &b)| acc + (a - b).abs());
        if drift <= num::<S>(1e-14) {
            break;
        }
    }
    // Final cleanup so the result is strictly feasible.
    for j in 0..n {
        x[j] = x[j].max(S::zero()).min(problem.per_good_caps[j]);
    }
    let spend = x
        .iter()
        .zip(q)
        .fold(S::zero(), |acc, (&v, &p)| acc + v * p);
    if spend > problem.budget && spend > S::zero() {
        let shrink = problem.budget / spend;
        for v in &mut x {
            *v = *v * shrink;
        }
    }
    let total = x.iter().fold(S::zero(), |acc, &v| acc + v);
    if problem.total_cap.is_finite() && total > problem.total_cap && total > S::zero() {
        let shrink = problem.total_cap / total;
        for v in &mut x {
            *v = *v * shrink;
        }
    }
    x
}

/// Projected-gradient ascent with backtracking; used only when the active-set
/// loop cycles, and directly exercised by tests.
pub fn projected_gradient<S: Scalar>(problem: &DemandProblem<S>) -> DemandSolution<S> {
    let n = problem.goods();
    let w = &problem.weights;
    let r = problem.exponent;
    let inv = r.recip();
    let nn = num::<S>(n as f64);

    // Interior-ish start.
    let mut x: Vec<S> = (0..n)
        .map(|j| {
            let mut hi = problem.budget / (nn * problem.prices[j]);
            if problem.total_cap.is_finite() {
                hi = hi.min(problem.total_cap / nn);
            }
            hi.min(problem.per_good_caps[j]) * num::<S>(0.9)
        })
        .collect();
    x = project_feasible(&x, problem);

    let value = |x: &[S]| -> S {
        x.iter()
            .zip(w)
            .fold(S::zero(), |acc, (&xi, &wi)| {
                if xi > S::zero() {
                    acc + (wi * xi).powf(inv)
                } else {
                    acc
                }
            })
    };

    let floor = num::<S>(1e-12);
    let mut fx = value(&x);
    for _ in 0..400 {
        let grad: Vec<S> = x
            .iter()
            .zip(w)
            .map(|(&xi, &wi)| grad_term(wi, r, xi.max(floor)))
            .collect();
        let gnorm = grad.iter().fold(S::zero(), |acc, &g| acc + g * g).sqrt();
        if gnorm <= S::zero() {
            break;
        }

        let mut step = S::one() / gnorm.max(S::one());
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<S> = x
                .iter()
                .zip(&grad)
                .map(|(&xi, &gi)| xi + step * gi)
                .collect();
            let trial = project_feasible(&trial, problem);
            let ft = value(&trial);
            if ft > fx {
                let moved = trial
                    .iter()
                    .zip(&x)
                    .fold(S::zero(), |acc, (&a, &b)| acc + (a - b).abs());
                x = trial;
                let gain = ft - fx;
                fx = ft;
                improved = true;
                if moved <= num::<S>(1e-13) || gain <= fx * num::<S>(1e-15) {
                    improved = false;
                }
                break;
            }
            step = step * num::<S>(0.5);
        }
        if !improved {
            break;
        }
    }

    let capped: Vec<bool> = x
        .iter()
        .zip(&problem.per_good_caps)
        .map(|(&xi, &c)| c.is_finite() && xi >= c - c.max(S::one()) * num::<S>(1e-9))
        .collect();
    finish_solution(problem, x, &capped)
}

// ---------------------------------------------------------------------------
// Brute-force oracle and KKT residual
// ---------------------------------------------------------------------------

/// Exhaustive lattice search over the feasible box; independent check for the
/// solver. Refuses more than four goods.
pub fn grid_oracle<S: Scalar>(
    problem: &DemandProblem<S>,
    points_per_axis: usize,
) -> Result<DemandSolution<S>, SolverError> {
    let n = problem.goods();
    if n > MAX_ORACLE_GOODS {
        return Err(SolverError::TooManyGoods {
            goods: n,
            max: MAX_ORACLE_GOODS,
        });
    }
    if points_per_axis < 2 {
        return Err(SolverError::BadGrid {
            points: points_per_axis,
        });
    }

    let hi: Vec<S> = (0..n)
        .map(|j| {
            let mut h = problem.budget / problem.prices[j];
            if problem.total_cap.is_finite() {
                h = h.min(problem.total_cap);
            }
            h.min(problem.per_good_caps[j])
        })
        .collect();

    let slack = num::<S>(1.0 + 1e-12);
    let mut best = vec![S::zero(); n];
    let mut best_u = S::zero();
    let mut x = vec![S::zero(); n];

    // Depth-first walk over the lattice, pruning by budget and total as soon
    // as either is exceeded (coordinates are enumerated in increasing order).
    fn walk<S: Scalar>(
        axis: usize,
        x: &mut Vec<S>,
        spent: S,
        used: S,
        hi: &[S],
        points: usize,
        problem: &DemandProblem<S>,
        slack: S,
        best: &mut Vec<S>,
        best_u: &mut S,
    ) {
        let n = x.len();
        if axis == n {
            let u = ces_utility(x, problem.weights(), problem.exponent())
                .expect("lattice points are non-negative");
            if u > *best_u {
                *best_u = u;
                best.clone_from(x);
            }
            return;
        }
        let steps = if hi[axis] > S::zero() { points } else { 1 };
        let denom = num::<S>((points - 1) as f64);
        for k in 0..steps {
            let xi = hi[axis] * num::<S>(k as f64) / denom;
            let spent2 = spent + problem.prices()[axis] * xi;
            let used2 = used + xi;
            if spent2 > problem.budget() * slack {
                break;
            }
            if problem.total_cap().is_finite() && used2 > problem.total_cap() * slack {
                break;
            }
            x[axis] = xi;
            walk(
                axis + 1,
                x,
                spent2,
                used2,
                hi,
                points,
                problem,
                slack,
                best,
                best_u,
            );
        }
        x[axis] = S::zero();
    }

    walk(
        0,
        &mut x,
        S::zero(),
        S::zero(),
        &hi,
        points_per_axis,
        problem,
        slack,
        &mut best,
        &mut best_u,
    );

    let capped: Vec<bool> = best
        .iter()
        .zip(&problem.per_good_caps)
        .map(|(&xi, &c)| c.is_finite() && xi >= c - c.max(S::one()) * num::<S>(1e-9))
        .collect();
    Ok(finish_solution(problem, best, &capped))
}

/// Norm of the utility gradient projected onto the nullspace of the active
/// constraints at `solution`. Near zero at a KKT point.
pub fn kkt_residual<S: Scalar>(problem: &DemandProblem<S>, solution: &DemandSolution<S>) -> S {
    let n = problem.goods();
    let tol = num::<S>(FEASIBILITY_TOL);

    // Coordinates pinned by caps or non-negativity contribute no free
    // direction; restrict to the rest.
    let free: Vec<usize> = (0..n)
        .filter(|&j| {
            let x = solution.bundle[j];
            let at_zero = x <= tol;
            let at_cap = problem.per_good_caps[j].is_finite()
                && x >= problem.per_good_caps[j] - problem.per_good_caps[j].max(S::one()) * tol;
            !(at_zero || at_cap)
        })
        .collect();
    if free.is_empty() {
        return S::zero();
    }

    let g: Vec<S> = free
        .iter()
        .map(|&j| grad_term(problem.weights[j], problem.exponent, solution.bundle[j]))
        .collect();

    let mut rows: Vec<Vec<S>> = Vec::new();
    if solution.active_constraints.contains(&ConstraintTag::Budget) {
        rows.push(free.iter().map(|&j| problem.prices[j]).collect());
    }
    if solution.active_constraints.contains(&ConstraintTag::Total) {
        rows.push(vec![S::one(); free.len()]);
    }
    if rows.is_empty() {
        return g.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt();
    }

    // Project g off the span of the rows: residual = g - A^T (A A^T)^-1 A g.
    let k = rows.len();
    let mut m = vec![vec![S::zero(); k]; k];
    let mut rhs = vec![S::zero(); k];
    for a in 0..k {
        for b in 0..k {
            m[a][b] = rows[a]
                .iter()
                .zip(&rows[b])
                .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
        }
        rhs[a] = rows[a]
            .iter()
            .zip(&g)
            .fold(S::zero(), |acc, (&x, &y)| acc + x * y);
    }
    let y = solve_small(&mut m, &mut rhs);
    let mut resid = g;
    for a in 0..k {
        for (v, &row) in resid.iter_mut().zip(&rows[a]) {
            *v = *v - y[a] * row;
        }
    }
    resid.iter().fold(S::zero(), |acc, &v| acc + v * v).sqrt()
}

/// Gaussian elimination with partial pivoting for the tiny normal systems in
/// [`kkt_residual`]. Near-singular pivots are regularized.
fn solve_small<S: Scalar>(m: &mut [Vec<S>], rhs: &mut [S]) -> Vec<S> {
    let k = rhs.len();
    for col in 0..k {
        let mut piv = col;
        for row in col + 1..k {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        m.swap(col, piv);
        rhs.swap(col, piv);
        if m[col][col].abs() < num::<S>(1e-30) {
            m[col][col] = m[col][col] + num::<S>(1e-30);
        }
        for row in col + 1..k {
            let f = m[row][col] / m[col][col];
            for c in col..k {
                let sub = f * m[col][c];
                m[row][c] = m[row][c] - sub;
            }
            let sub = f * rhs[col];
            rhs[row] = rhs[row] - sub;
        }
    }
    let mut y = vec![S::zero(); k];
    for col in (0..k).rev() {
        let mut acc = rhs[col];
        for c in col + 1..k {
            acc = acc - m[col][c] * y[c];
        }
        y[col] = acc / m[col][col];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn problem(
        w: &[f64],
        r: f64,
        q: &[f64],
        b: f64,
        total: f64,
        caps: &[f64],
    ) -> DemandProblem<f64> {
        DemandProblem::new(w.to_vec(), r, q.to_vec(), b, total, caps.to_vec()).unwrap()
    }

    #[test]
    fn utility_of_zero_bundle_is_zero() {
        assert_eq!(ces_utility(&[0.0, 0.0], &[1.0, 1.0], 2.0).unwrap(), 0.0);
    }

    #[test]
    fn utility_hand_values() {
        assert_relative_eq!(
            ces_utility(&[1.0, 1.0], &[1.0, 1.0], 2.0).unwrap(),
            4.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            ces_utility(&[1.0, 4.0], &[4.0, 1.0], 2.0).unwrap(),
            16.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn utility_rejects_negative_component() {
        assert!(matches!(
            ces_utility(&[-0.1, 1.0], &[1.0, 1.0], 2.0),
            Err(SolverError::NegativeComponent { index: 0 })
        ));
    }

    #[test]
    fn budget_only_symmetric() {
        let sol = solve_budget_only(&[1.0, 1.0], 2.0, &[1.0, 1.0], 10.0);
        assert_relative_eq!(sol.bundle[0], 5.0, max_relative = 1e-12);
        assert_relative_eq!(sol.bundle[1], 5.0, max_relative = 1e-12);
    }

    #[test]
    fn budget_only_weighted() {
        let sol = solve_budget_only(&[4.0, 1.0], 2.0, &[1.0, 1.0], 10.0);
        assert_relative_eq!(sol.bundle[0], 8.0, max_relative = 1e-12);
        assert_relative_eq!(sol.bundle[1], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn budget_only_price_sensitive() {
        let sol = solve_budget_only(&[1.0, 1.0], 2.0, &[2.0, 1.0], 12.0);
        assert_relative_eq!(sol.bundle[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(sol.bundle[1], 8.0, max_relative = 1e-12);
        let spend = 2.0 * sol.bundle[0] + sol.bundle[1];
        assert_relative_eq!(spend, 12.0, max_relative = 1e-12);
    }

    #[test]
    fn demand_total_cap_binds() {
        let p = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            6.0,
            &[f64::INFINITY, f64::INFINITY],
        );
        let sol = solve_demand(&p);
        assert_relative_eq!(sol.bundle[0], 4.8, max_relative = 1e-10);
        assert_relative_eq!(sol.bundle[1], 1.2, max_relative = 1e-10);
        assert!(sol.active_constraints.contains(&ConstraintTag::Total));
    }

    #[test]
    fn demand_cap_binds_and_budget_spent() {
        let p = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            f64::INFINITY,
            &[3.0, f64::INFINITY],
        );
        let sol = solve_demand(&p);
        assert_relative_eq!(sol.bundle[0], 3.0, max_relative = 1e-10);
        assert_relative_eq!(sol.bundle[1], 7.0, max_relative = 1e-10);
        assert!(sol.active_constraints.contains(&ConstraintTag::Cap(0)));
        assert!(sol.active_constraints.contains(&ConstraintTag::Budget));
    }

    #[test]
    fn demand_zero_budget_gives_zero_bundle() {
        let p = problem(
            &[1.0, 2.0],
            2.0,
            &[1.0, 1.0],
            0.0,
            5.0,
            &[f64::INFINITY, f64::INFINITY],
        );
        let sol = solve_demand(&p);
        assert!(sol.bundle.iter().all(|&x| x == 0.0));
        assert_eq!(sol.utility, 0.0);
    }

    #[test]
    fn demand_agrees_with_budget_only_when_unconstrained() {
        let w = [2.5, 0.7, 1.3];
        let q = [3.0, 1.2, 0.8];
        let p = problem(
            &w,
            2.0,
            &q,
            20.0,
            f64::INFINITY,
            &[f64::INFINITY, f64::INFINITY, f64::INFINITY],
        );
        let sol = solve_demand(&p);
        let fast = solve_budget_only(&w, 2.0, &q, 20.0);
        for j in 0..3 {
            assert_relative_eq!(sol.bundle[j], fast.bundle[j], epsilon = 1e-8);
        }
    }

    #[test]
    fn grid_oracle_symmetric_and_near_closed_form() {
        let p = problem(
            &[1.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            f64::INFINITY,
            &[f64::INFINITY, f64::INFINITY],
        );
        let sol = grid_oracle(&p, 101).unwrap();
        assert_relative_eq!(sol.bundle[0], 5.0, max_relative = 1e-9);
        assert_relative_eq!(sol.bundle[1], 5.0, max_relative = 1e-9);

        let p2 = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            f64::INFINITY,
            &[f64::INFINITY, f64::INFINITY],
        );
        let sol2 = grid_oracle(&p2, 201).unwrap();
        let step = 10.0 / 200.0;
        assert!((sol2.bundle[0] - 8.0).abs() <= step + 1e-12);
        assert!((sol2.bundle[1] - 2.0).abs() <= step + 1e-12);
    }

    #[test]
    fn grid_oracle_never_beats_solver() {
        let p = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            6.0,
            &[f64::INFINITY, f64::INFINITY],
        );
        let solver = solve_demand(&p);
        let oracle = grid_oracle(&p, 301).unwrap();
        assert!(solver.utility >= oracle.utility * (1.0 - 1e-9));
    }

    #[test]
    fn grid_oracle_refuses_high_dimensions() {
        let p = problem(
            &[1.0; 5],
            2.0,
            &[1.0; 5],
            10.0,
            f64::INFINITY,
            &[f64::INFINITY; 5],
        );
        assert!(matches!(
            grid_oracle(&p, 11),
            Err(SolverError::TooManyGoods { goods: 5, max: 4 })
        ));
    }

    #[test]
    fn projected_gradient_matches_active_set() {
        let p = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            6.0,
            &[f64::INFINITY, f64::INFINITY],
        );
        let pg = projected_gradient(&p);
        let asol = solve_demand(&p);
        assert_relative_eq!(pg.utility, asol.utility, max_relative = 1e-6);

        let p2 = problem(
            &[4.0, 1.0],
            2.0,
            &[1.0, 1.0],
            10.0,
            f64::INFINITY,
            &[3.0, f64::INFINITY],
        );
        let pg2 = projected_gradient(&p2);
        let asol2 = solve_demand(&p2);
        assert_relative_eq!(pg2.utility, asol2.utility, max_relative = 1e-6);
    }

    #[test]
    fn kkt_residual_small_at_optimum() {
        let p = problem(
            &[4.0, 1.0, 2.0],
            2.0,
            &[1.0, 1.5, 0.7],
            25.0,
            30.0,
            &[f64::INFINITY, 4.0, f64::INFINITY],
        );
        let sol = solve_demand(&p);
        let resid = kkt_residual(&p, &sol);
        assert!(resid <= KKT_TOL, "residual {resid} too large");
    }

    #[test]
    fn exponent_validation() {
        assert!(DemandProblem::new(
            vec![1.0],
            1.0,
            vec![1.0],
            1.0,
            f64::INFINITY,
            vec![f64::INFINITY]
        )
        .is_err());
        assert!(DemandProblem::new(
            vec![1.0],
            2.0,
            vec![0.0],
            1.0,
            f64::INFINITY,
            vec![f64::INFINITY]
        )
        .is_err());
    }

    #[test]
    fn works_at_f32() {
        let p = DemandProblem::<f32>::new(
            vec![4.0, 1.0],
            2.0,
            vec![1.0, 1.0],
            10.0,
            f32::INFINITY,
            vec![f32::INFINITY, f32::INFINITY],
        )
        .unwrap();
        let sol = solve_demand(&p);
        assert!((sol.bundle[0] - 8.0).abs() < 1e-3);
        assert!((sol.bundle[1] - 2.0).abs() < 1e-3);
    }
}
