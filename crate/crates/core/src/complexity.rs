//! Problem complexity: `H_MAB`, `H_LB` and its optimal design, the oracle
//! sample complexity `N*`, and the direction-discarding quantities `eps*` and
//! `M*`.

use serde::Serialize;

use crate::design::{solve_design, ArmGram, DesignSolution, SolverOptions, Targets};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::problem::{build_directions, ConfidenceParams, ProblemInstance};
use crate::scalar::{dot, sub, Scalar};

/// `1/Delta_min^2 + sum_{x != x*} 1/Delta(x)^2`; the best arm counts with
/// gap `Delta_min`.
pub fn h_mab<T: Scalar>(instance: &ProblemInstance<T>) -> T {
    let best = instance.best_arm();
    let k = instance.num_arms();
    if k == 1 {
        return T::zero();
    }
    let dmin = instance.delta_min();
    (0..k)
        .filter(|&i| i != best)
        .map(|i| instance.gap(best, i))
        .fold((dmin * dmin).recip(), |acc, g| acc + (g * g).recip())
}

/// `min_lambda max_{y in Y*} ||y||^2_{Lambda^-1} / Delta(y)^2` and the design
/// reaching it.
pub fn h_lb<T: Scalar>(
    instance: &ProblemInstance<T>,
    opts: SolverOptions<T>,
) -> Result<(T, DesignSolution<T>)> {
    if instance.num_arms() == 1 {
        return Err(Error::InvalidInstance(
            "a single arm has no directions to discriminate".into(),
        ));
    }
    let star = build_directions(instance, true);
    let ys = star.vectors(instance);
    let weights: Vec<T> = star
        .gaps(instance)
        .iter()
        .map(|&g| (g * g).recip())
        .collect();
    let sol = solve_design(instance.arms(), &ys, Some(&weights), opts)?;
    Ok((sol.objective, sol))
}

/// Range of `H_LB`: `max_{y in Y*} ||y||^2 / (L Delta_min^2)` below and
/// `4 d / Delta_min^2` above, with `L` the largest arm norm.
pub fn h_lb_bounds<T: Scalar>(instance: &ProblemInstance<T>) -> (T, T) {
    let star = build_directions(instance, true);
    let dmin = instance.delta_min();
    let d2 = dmin * dmin;
    let ymax = star
        .vectors(instance)
        .iter()
        .map(|y| dot(y, y))
        .fold(T::zero(), T::max);
    let lower = ymax / (instance.max_arm_norm() * d2);
    let upper = T::lit(4.0) * T::from_count(instance.dim()) / d2;
    (lower, upper)
}

/// Starting point and iteration cap of the `N*` fixed point.
const N_STAR_START: f64 = 100.0;
const N_STAR_MAX_ITER: usize = 100;

/// Solves `N = c^2 h_lb log(c' N^2 K^2 / delta)` by iteration from 100 and
/// rounds up. Without noise (`c = 0`) the answer is 0.
pub fn n_star<T: Scalar>(params: &ConfidenceParams<T>, h_lb: T, k: usize) -> Result<u64> {
    if !(h_lb > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "h_lb must be positive, got {h_lb}"
        )));
    }
    let scale = params.c * params.c * h_lb;
    if scale == T::zero() {
        log::warn!("zero noise level: n_star is degenerate and set to 0");
        return Ok(0);
    }
    let kk = T::from_count(k);
    let f = |n: T| -> Result<T> {
        let arg = params.c_prime * n * n * kk * kk / params.delta;
        if !(arg > T::one()) {
            return Err(Error::LogArgument(arg.to_f64_lossy()));
        }
        Ok(scale * arg.ln())
    };
    let mut n = T::lit(N_STAR_START);
    let mut step = T::infinity();
    for _ in 0..N_STAR_MAX_ITER {
        let next = f(n)?;
        step = (next - n).abs();
        n = next;
        if step < T::one() {
            return Ok(n.ceil().to_f64_lossy() as u64);
        }
    }
    Err(Error::NoConvergence {
        iterations: N_STAR_MAX_ITER,
        last_step: step.to_f64_lossy(),
    })
}

const SUBGRADIENT_ITERS: usize = 10_000;

/// Smallest uniform half-width `t` such that the box
/// `{theta : |y^T (theta - theta*)| <= t for all y in Y}` reaches a hyperplane
/// `(x - x')^T theta = 0` between two suboptimal arms. `+inf` with fewer than
/// two suboptimal arms.
///
/// Each pair is a convex piecewise-linear problem over an affine set, solved
/// by projected subgradient descent with steps `r / sqrt(k)`, where `r` is the
/// norm of the minimum-norm feasible point. Stops after 10^4 iterations or
/// when the best value improved by less than `tol` (relative) over the last
/// 1000 iterations.
pub fn epsilon_star<T: Scalar>(instance: &ProblemInstance<T>, tol: T) -> T {
    let best = instance.best_arm();
    let sub_arms: Vec<usize> = (0..instance.num_arms()).filter(|&i| i != best).collect();
    let ys = build_directions(instance, false).unsigned_vectors(instance);
    let mut eps = T::infinity();
    for (p, &i) in sub_arms.iter().enumerate() {
        for &j in &sub_arms[p + 1..] {
            let a = sub(instance.arm(i), instance.arm(j));
            let rhs = -dot(&a, instance.theta_star());
            match pair_box_radius(&ys, &a, rhs, tol) {
                Some(v) => eps = eps.min(v),
                None => log::warn!("arms {i} and {j}: hyperplane unreachable along Y, skipped"),
            }
        }
    }
    eps
}

/// `min_z max_y |y^T z|` subject to `a^T z = rhs`, or `None` when `a` has no
/// component in the span of `ys`.
fn pair_box_radius<T: Scalar>(ys: &[Vec<T>], a: &[T], rhs: T, tol: T) -> Option<T> {
    let aa = dot(a, a);
    let reach = ys.iter().map(|y| dot(y, a).abs()).fold(T::zero(), T::max);
    if !(aa > T::zero()) || reach <= T::lit(1e-12) * aa {
        return None;
    }
    let f = |z: &[T]| ys.iter().map(|y| dot(y, z).abs()).fold(T::zero(), T::max);
    let project_dir = |g: &mut Vec<T>| {
        let s = dot(g, a) / aa;
        for (gi, &ai) in g.iter_mut().zip(a) {
            *gi = *gi - s * ai;
        }
    };
    let mut z: Vec<T> = a.iter().map(|&ai| rhs / aa * ai).collect();
    let r = dot(&z, &z).sqrt();
    let mut best = f(&z);
    if r == T::zero() || best == T::zero() {
        return Some(best);
    }
    let mut mark = best;
    for k in 1..=SUBGRADIENT_ITERS {
        let (arg, _) = ys.iter().enumerate().map(|(t, y)| (t, dot(y, &z))).fold(
            (0, T::neg_infinity()),
            |m, (t, v)| if v.abs() > m.1 { (t, v.abs()) } else { m },
        );
        let sign = if dot(&ys[arg], &z) >= T::zero() {
            T::one()
        } else {
            -T::one()
        };
        let mut g: Vec<T> = ys[arg].iter().map(|&v| sign * v).collect();
        project_dir(&mut g);
        let gn = dot(&g, &g).sqrt();
        if gn == T::zero() {
            break;
        }
        let step = r / T::lit(k as f64).sqrt() / gn;
        for (zi, &gi) in z.iter_mut().zip(&g) {
            *zi = *zi - step * gi;
        }
        // Re-project to undo drift off the affine set.
        let s = (dot(&z, a) - rhs) / aa;
        for (zi, &ai) in z.iter_mut().zip(a) {
            *zi = *zi - s * ai;
        }
        best = best.min(f(&z));
        if k % 1000 == 0 {
            if mark - best <= tol * best {
                break;
            }
            mark = best;
        }
    }
    Some(best)
}

/// Number of greedy XY steps after which
/// `c sqrt(rho_n log(c' n^2 K^2 / delta) / n) < eps*`, where
/// `rho_n = n max_{y in Y} ||y||^2_{A_n^-1}`. 0 when `eps*` is infinite.
pub fn m_star<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    eps_star: T,
    max_steps: u64,
) -> Result<u64> {
    if eps_star.is_infinite() {
        return Ok(0);
    }
    if !(eps_star > T::zero()) {
        return Err(Error::BudgetExhausted {
            budget: 0,
            detail: format!("eps* = {eps_star}: two suboptimal arms tie under theta*, so the condition never holds"),
        });
    }
    let k = instance.num_arms();
    let d = instance.dim();
    let targets: Targets<T> = Targets::among(&(0..k).collect::<Vec<_>>());
    let mut scoring = ArmGram::new(instance.arms().to_vec(), Matrix::identity(d))?;
    let mut pure: Option<ArmGram<T>> = None;
    let mut a = Matrix::zeros(d);
    let mut last = T::infinity();
    for n in 1..=max_steps {
        let arm = targets.greedy(&scoring);
        scoring.pull(arm)?;
        match pure.as_mut() {
            Some(g) => g.pull(arm)?,
            None => {
                a.add_outer(instance.arm(arm), T::one());
                if let Ok(g) = ArmGram::new(instance.arms().to_vec(), a.clone()) {
                    pure = Some(g);
                }
            }
        }
        let Some(g) = pure.as_ref() else { continue };
        let width = params.c * (targets.max_variance(g) * params.log_term(n, k)?).sqrt();
        last = width / eps_star;
        if width < eps_star {
            return Ok(n);
        }
    }
    Err(Error::BudgetExhausted {
        budget: max_steps,
        detail: format!("width / eps* still {:.4e}", last.to_f64_lossy()),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ComplexityReport {
    pub h_mab: f64,
    pub h_lb: f64,
    /// Weights of the design attaining `h_lb`, one per arm.
    pub rho_star_design: Vec<f64>,
    pub n_star: u64,
    /// `null` stands for `+inf`.
    pub epsilon_star: Option<f64>,
    /// `null` when the condition is unreachable within the step cap.
    pub m_star: Option<u64>,
    pub bounds_check: (f64, f64),
    pub bounds_hold: bool,
}

/// Cap on greedy steps when evaluating `M*` for a report.
pub const M_STAR_MAX_STEPS: u64 = 10_000_000;

/// Every quantity above for one instance.
pub fn report<T: Scalar>(
    instance: &ProblemInstance<T>,
    params: &ConfidenceParams<T>,
    opts: SolverOptions<T>,
) -> Result<ComplexityReport> {
    let (h, sol) = h_lb(instance, opts)?;
    let (lo, hi) = h_lb_bounds(instance);
    let slack = T::one() + opts.tol;
    let n = n_star(params, h, instance.num_arms())?;
    let eps = epsilon_star(instance, opts.tol);
    let m = match m_star(instance, params, eps, M_STAR_MAX_STEPS) {
        Ok(m) => Some(m),
        Err(e) => {
            log::warn!("m_star: {e}");
            None
        }
    };
    Ok(ComplexityReport {
        h_mab: h_mab(instance).to_f64_lossy(),
        h_lb: h.to_f64_lossy(),
        rho_star_design: sol
            .design
            .weights()
            .iter()
            .map(|w| w.to_f64_lossy())
            .collect(),
        n_star: n,
        epsilon_star: eps.is_finite().then(|| eps.to_f64_lossy()),
        m_star: m,
        bounds_check: (lo.to_f64_lossy(), hi.to_f64_lossy()),
        bounds_hold: lo <= h * slack && h <= hi * slack,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::NoiseModel;

    fn inst(arms: Vec<Vec<f64>>, theta: Vec<f64>) -> ProblemInstance<f64> {
        ProblemInstance::new(arms, theta, 1.0, NoiseModel::Gaussian, 0.05).unwrap()
    }

    fn e(d: usize, i: usize) -> Vec<f64> {
        (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn h_mab_sums_inverse_squared_gaps() {
        // Gaps 0.5 and 1.0: 1/0.25 + 1/0.25 + 1.
        let p = inst(
            vec![e(2, 0), vec![0.5, 0.0], vec![0.0, 0.0]],
            vec![1.0, 0.0],
        );
        assert!((h_mab(&p) - 9.0).abs() < 1e-12);
        let q = inst(vec![e(2, 0), e(2, 1)], vec![1.0, 0.0]);
        assert!((h_mab(&q) - 2.0).abs() < 1e-12);
        let r = inst(vec![e(2, 0), e(2, 1)], vec![3.0, 0.0]);
        assert!((h_mab(&r) - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn h_lb_two_arm_basis() {
        let p = inst(vec![e(2, 0), e(2, 1)], vec![1.0, 0.0]);
        let (h, sol) = h_lb(&p, SolverOptions::default()).unwrap();
        assert!((h - 4.0).abs() < 1e-6, "{h}");
        assert!((sol.design.weights()[0] - 0.5).abs() < 1e-3);
        // Grid over the simplex as an independent check.
        let grid = (1..10_000)
            .map(|i| {
                let l = i as f64 / 10_000.0;
                1.0 / l + 1.0 / (1.0 - l)
            })
            .fold(f64::INFINITY, f64::min);
        assert!((h - grid).abs() < 1e-4);
        assert!(h_mab(&p) <= h + 1e-9 && h <= 2.0 * h_mab(&p) + 1e-6);
    }

    #[test]
    fn bounds_on_small_experiment_instance() {
        let w: f64 = 0.3;
        let p = inst(
            vec![e(3, 0), e(3, 1), e(3, 2), vec![w.cos(), w.sin(), 0.0]],
            vec![2.0, 0.0, 0.0],
        );
        let (h, _) = h_lb(&p, SolverOptions::default()).unwrap();
        let (lo, hi) = h_lb_bounds(&p);
        assert!(h <= hi, "{h} {hi}");
        // Pairing the longest direction with the smallest gap overshoots
        // here: the longest directions have gap 2, the shortest has gap
        // Delta_min.
        assert!(lo > h, "{lo} {h}");
        // Per-direction bound ||y||^2 / (L^2 Delta(y)^2) does hold.
        let l2 = p.max_arm_norm().powi(2);
        let star = build_directions(&p, true);
        let sound = star
            .vectors(&p)
            .iter()
            .zip(star.gaps(&p))
            .map(|(y, g)| dot(y, y) / (l2 * g * g))
            .fold(0.0, f64::max);
        assert!(sound <= h, "{sound} {h}");
        // Random search over the simplex as an independent upper estimate.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut best = f64::INFINITY;
        for _ in 0..20_000 {
            let mut w: Vec<f64> = (0..4).map(|_| -rng.random::<f64>().ln()).collect();
            let tot: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= tot);
            if let Ok(dsg) = crate::design::Design::new(p.arms(), w) {
                let ws: Vec<f64> = star.gaps(&p).iter().map(|g| 1.0 / (g * g)).collect();
                if let Ok(v) = dsg.objective(&star.vectors(&p), Some(&ws)) {
                    best = best.min(v);
                }
            }
        }
        assert!(h <= best * (1.0 + 1e-4), "{h} {best}");
    }

    #[test]
    fn n_star_fixed_point() {
        let params = ConfidenceParams::new(1.0, 0.05);
        let n = n_star(&params, 4.0, 2).unwrap();
        assert!(n.abs_diff(525) <= 1, "{n}");
        let resid = |n: f64| 8.0 * 4.0 * (params.c_prime * n * n * 4.0 / 0.05).ln() - n;
        assert!(resid(n as f64).abs() <= 1.0);
        let looser = ConfidenceParams::new(1.0, 0.1);
        assert!(n_star(&looser, 4.0, 2).unwrap() < n);
        assert_eq!(
            n_star(&ConfidenceParams::new(0.0, 0.05), 4.0, 2).unwrap(),
            0
        );
    }

    #[test]
    fn epsilon_star_two_arms_is_infinite() {
        let p = inst(vec![e(2, 0), e(2, 1)], vec![1.0, 0.0]);
        assert!(epsilon_star(&p, 1e-6).is_infinite());
        let params = ConfidenceParams::for_instance(&p);
        assert_eq!(m_star(&p, &params, f64::INFINITY, 10).unwrap(), 0);
    }

    #[test]
    fn epsilon_star_tied_suboptimal_arms_is_zero() {
        let p = inst(vec![e(2, 0), e(2, 1), vec![0.0, 0.9]], vec![1.0, 0.0]);
        assert!(epsilon_star(&p, 1e-6).abs() < 1e-12);
    }

    /// Dense scan along the feasible line in two dimensions.
    fn grid_radius(p: &ProblemInstance<f64>, i: usize, j: usize) -> f64 {
        let ys = build_directions(p, false).unsigned_vectors(p);
        let a = sub(p.arm(i), p.arm(j));
        let rhs = -dot(&a, p.theta_star());
        let aa = dot(&a, &a);
        let z0 = [rhs / aa * a[0], rhs / aa * a[1]];
        let dir = [-a[1], a[0]];
        (-200_000..=200_000)
            .map(|s| {
                let s = s as f64 * 1e-5;
                let z = [z0[0] + s * dir[0], z0[1] + s * dir[1]];
                ys.iter().map(|y| dot(y, &z).abs()).fold(0.0, f64::max)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn epsilon_star_matches_grid() {
        let p = inst(vec![e(2, 0), e(2, 1), vec![0.5, 0.5]], vec![1.0, 0.2]);
        let eps = epsilon_star(&p, 1e-9);
        let grid = grid_radius(&p, 1, 2);
        assert!((eps - grid).abs() < 1e-3 * grid, "{eps} {grid}");
    }

    #[test]
    fn epsilon_star_scales_with_theta() {
        let arms = vec![e(2, 0), e(2, 1), vec![0.5, 0.5], vec![-0.3, 0.8]];
        let a = epsilon_star(&inst(arms.clone(), vec![1.0, 0.2]), 1e-9);
        let b = epsilon_star(&inst(arms, vec![3.0, 0.6]), 1e-9);
        assert!((b - 3.0 * a).abs() < 1e-3 * b, "{a} {b}");
    }

    #[test]
    fn m_star_boundary_and_monotonicity() {
        let w: f64 = 0.01;
        let p = inst(
            vec![e(2, 0), e(2, 1), vec![w.cos(), w.sin()]],
            vec![2.0, 0.0],
        );
        let params = ConfidenceParams::for_instance(&p);
        let eps = epsilon_star(&p, 1e-9);
        assert!(eps.is_finite() && eps > 0.0);
        let m = m_star(&p, &params, eps, 1_000_000).unwrap();
        assert!(m >= 1);
        // Condition fails one step earlier.
        assert!(m == 1 || m_star(&p, &params, eps, m - 1).is_err());
        let m2 = m_star(&p, &params, 2.0 * eps, 1_000_000).unwrap();
        assert!(m2 <= m);
    }
}
