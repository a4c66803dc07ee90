//! Design matrices, least squares, rank-one inverse updates and optimal-design
//! solvers (Frank-Wolfe relaxation, efficient rounding, greedy selection).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{span_rank, weighted_outer_sum, Matrix};
use crate::scalar::{dot, Scalar};

/// Full re-inversion interval for maintained inverses.
pub const REINVERT_EVERY: usize = 1000;

/// Simplex feasibility tolerance.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// `A^-1 - (A^-1 x x^T A^-1) / (1 + x^T A^-1 x)`: the inverse of `A + x x^T`.
pub fn rank_one_update<T: Scalar>(a_inv: &Matrix<T>, x: &[T]) -> Result<Matrix<T>> {
    let mut out = a_inv.clone();
    rank_one_update_in_place(&mut out, x)?;
    Ok(out)
}

pub fn rank_one_update_in_place<T: Scalar>(a_inv: &mut Matrix<T>, x: &[T]) -> Result<()> {
    let u = a_inv.mul_vec(x);
    let den = T::one() + dot(x, &u);
    if !(den > T::lit(1e-12)) {
        return Err(Error::DegenerateUpdate(den.to_f64_lossy()));
    }
    a_inv.add_outer(&u, -den.recip());
    Ok(())
}

/// Accumulated pulls: counts, `A = A0 + sum x x^T`, its inverse and `b = sum x r`.
#[derive(Clone, Debug)]
pub struct DesignState<T> {
    counts: Vec<u64>,
    a: Matrix<T>,
    a_inv: Option<Matrix<T>>,
    b: Vec<T>,
    n: u64,
    since_reinvert: usize,
}

impl<T: Scalar> DesignState<T> {
    /// Empty state with `A0 = 0`; the inverse becomes available once the
    /// pulls span the space.
    pub fn new(dim: usize, num_arms: usize) -> Self {
        Self {
            counts: vec![0; num_arms],
            a: Matrix::zeros(dim),
            a_inv: None,
            b: vec![T::zero(); dim],
            n: 0,
            since_reinvert: 0,
        }
    }

    /// State with `A0 = eta I` (ridge regularized).
    pub fn regularized(dim: usize, num_arms: usize, eta: T) -> Self {
        let mut s = Self::new(dim, num_arms);
        s.a = Matrix::scaled_identity(dim, eta);
        if eta > T::zero() {
            s.a_inv = Some(Matrix::scaled_identity(dim, eta.recip()));
        }
        s
    }

    /// State with a given matrix and response, e.g. for replaying a
    /// recorded allocation.
    pub fn from_parts(counts: Vec<u64>, a: Matrix<T>, b: Vec<T>) -> Result<Self> {
        if a.dim() != b.len() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.len(),
            });
        }
        let a_inv = a.inverse().ok();
        Ok(Self {
            n: counts.iter().sum(),
            counts,
            a,
            a_inv,
            b,
            since_reinvert: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn inverse(&self) -> Option<&Matrix<T>> {
        self.a_inv.as_ref()
    }

    pub fn response(&self) -> &[T] {
        &self.b
    }

    /// Empirical design `T_n(x) / n`.
    pub fn empirical_design(&self) -> Vec<T> {
        let n = T::lit(self.n.max(1) as f64);
        self.counts.iter().map(|&c| T::lit(c as f64) / n).collect()
    }

    /// Records one pull of `arm` with feature vector `x` and observed reward.
    pub fn pull(&mut self, arm: usize, x: &[T], reward: T) -> Result<()> {
        self.counts[arm] += 1;
        self.n += 1;
        self.a.add_outer(x, T::one());
        for (bi, &xi) in self.b.iter_mut().zip(x) {
            *bi = *bi + xi * reward;
        }
        match self.a_inv.as_mut() {
            Some(inv) => {
                self.since_reinvert += 1;
                if self.since_reinvert >= REINVERT_EVERY {
                    self.reinvert()?;
                } else {
                    rank_one_update_in_place(inv, x)?;
                }
            }
            None => {
                if self.n as usize >= self.dim() {
                    if let Ok(inv) = self.a.inverse() {
                        self.a_inv = Some(inv);
                        self.since_reinvert = 0;
                    }
                }
            }
        }
        Ok(())
    }

    fn reinvert(&mut self) -> Result<()> {
        let mut inv = self.a.inverse()?;
        inv.symmetrize();
        self.a_inv = Some(inv);
        self.since_reinvert = 0;
        Ok(())
    }

    fn require_inverse(&self) -> Result<&Matrix<T>> {
        self.a_inv.as_ref().ok_or_else(|| Error::Singular {
            dim: self.dim(),
            deficiency: self.dim() - self.a.rank(),
        })
    }

    /// `y^T A^-1 y`.
    pub fn quad_form_inv(&self, y: &[T]) -> Result<T> {
        Ok(self.require_inverse()?.quad_form(y).max(T::zero()))
    }

    /// Least-squares estimate `A^-1 b`.
    pub fn ols(&self) -> Result<Vec<T>> {
        Ok(self.require_inverse()?.mul_vec(&self.b))
    }
}

/// Probability weights over arms together with `Lambda = sum lambda_x x x^T`.
#[derive(Clone, Debug)]
pub struct Design<T> {
    weights: Vec<T>,
    lambda: Matrix<T>,
    lambda_inv: Option<Matrix<T>>,
}

impl<T: Scalar> Design<T> {
    pub fn new(arms: &[Vec<T>], weights: Vec<T>) -> Result<Self> {
        if arms.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: arms.len(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::InvalidArgument(
                "design weights must be non-negative".into(),
            ));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidArgument(format!(
                "design weights sum to {total}, not 1"
            )));
        }
        let weights: Vec<T> = weights.into_iter().map(|w| w / total).collect();
        let dim = arms.first().map_or(0, Vec::len);
        let lambda = weighted_outer_sum(dim, arms, &weights);
        let lambda_inv = lambda.inverse().ok();
        Ok(Self {
            weights,
            lambda,
            lambda_inv,
        })
    }

    pub fn uniform(arms: &[Vec<T>]) -> Result<Self> {
        let k = arms.len();
        Self::new(arms, vec![T::from_count(k).recip(); k])
    }

    /// Design induced by integer pull counts, `T(x) / n`.
    pub fn from_counts(arms: &[Vec<T>], counts: &[u64]) -> Result<Self> {
        let n: u64 = counts.iter().sum();
        if n == 0 {
            return Err(Error::InvalidArgument("no pulls".into()));
        }
        let w = counts
            .iter()
            .map(|&c| T::lit(c as f64) / T::lit(n as f64))
            .collect();
        Self::new(arms, w)
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.lambda
    }

    pub fn dim(&self) -> usize {
        self.lambda.dim()
    }

    /// Support size `p`.
    pub fn support(&self) -> usize {
        self.weights.iter().filter(|&&w| w > T::zero()).count()
    }

    pub fn support_indices(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > T::zero())
            .map(|(i, _)| i)
            .collect()
    }

    fn require_inverse(&self) -> Result<&Matrix<T>> {
        self.lambda_inv.as_ref().ok_or_else(|| Error::Singular {
            dim: self.dim(),
            deficiency: self.dim() - self.lambda.rank(),
        })
    }

    pub fn inverse(&self) -> Result<&Matrix<T>> {
        self.require_inverse()
    }

    /// `y^T Lambda^-1 y`.
    pub fn quad_form_inv(&self, y: &[T]) -> Result<T> {
        Ok(self.require_inverse()?.quad_form(y).max(T::zero()))
    }

    /// `max_t w_t t^T Lambda^-1 t`; unit weights when `weights` is `None`.
    pub fn objective(&self, targets: &[Vec<T>], weights: Option<&[T]>) -> Result<T> {
        let inv = self.require_inverse()?;
        Ok(max_weighted_quad(inv, targets, weights))
    }
}

fn max_weighted_quad<T: Scalar>(inv: &Matrix<T>, targets: &[Vec<T>], weights: Option<&[T]>) -> T {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| weights.map_or(T::one(), |w| w[i]) * inv.quad_form(t))
        .fold(T::neg_infinity(), T::max)
}

/// Kiefer-Wolfowitz gap `max_x x^T Lambda^-1 x - d`; zero exactly at a
/// G-optimal design.
pub fn kw_gap<T: Scalar>(design: &Design<T>, arms: &[Vec<T>]) -> Result<T> {
    let inv = design.require_inverse()?;
    let m = arms
        .iter()
        .map(|x| inv.quad_form(x))
        .fold(T::neg_infinity(), T::max);
    Ok(m - T::from_count(design.dim()))
}

/// Which target set a design solve uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Criterion {
    /// Targets are the arms themselves with unit weights (G-optimality).
    G,
    General,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions<T> {
    pub tol: T,
    pub max_iter: usize,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::lit(1e-4),
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DesignSolution<T> {
    pub design: Design<T>,
    pub objective: T,
    pub iterations: usize,
    /// For G problems: KW gap within `tol * d`. Otherwise: the relative
    /// improvement window fell below `tol`.
    pub certified: bool,
}

/// Approximately solves `min_lambda max_t w_t ||t||^2_{Lambda^-1}` by
/// Frank-Wolfe over the simplex, starting from the uniform design.
///
/// When the targets are exactly the arms with unit weights this is the
/// G-optimal problem: FW moves toward `argmax_x x^T Lambda^-1 x` with the exact
/// D-optimal (Fedorov) step and stops once the Kiefer-Wolfowitz gap is at
/// most `tol * d`.
///
/// Otherwise FW runs on the smoothed objective
/// `s log sum_t exp(w_t ||t||^2_{Lambda^-1} / s)`, which overestimates the max
/// by at most `s log T`. Its duality gap plus `s log T` bounds the
/// suboptimality of the true objective, `s` is halved whenever the smoothing
/// dominates, and the run stops once that bound is at most `tol` times the
/// objective.
pub fn solve_design<T: Scalar>(
    arms: &[Vec<T>],
    targets: &[Vec<T>],
    weights: Option<&[T]>,
    opts: SolverOptions<T>,
) -> Result<DesignSolution<T>> {
    if arms.is_empty() {
        return Err(Error::InvalidArgument("no arms".into()));
    }
    if targets.is_empty() {
        return Err(Error::InvalidArgument("no targets".into()));
    }
    if let Some(w) = weights {
        if w.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                found: w.len(),
            });
        }
    }
    let d = arms[0].len();
    let rank = span_rank(d, arms);
    if rank < d {
        return Err(Error::Singular {
            dim: d,
            deficiency: d - rank,
        });
    }
    let criterion = if weights.map_or(true, |w| w.iter().all(|&v| v == T::one()))
        && targets.len() == arms.len()
        && targets.iter().zip(arms).all(|(t, a)| t == a)
    {
        Criterion::G
    } else {
        Criterion::General
    };

    let k = arms.len();
    let (weights_best, iterations, mut certified) = match criterion {
        Criterion::G => solve_g(arms, opts)?,
        Criterion::General => solve_smoothed(arms, targets, weights, opts)?,
    };
    let pruned = caratheodory_reduce(arms, clean_simplex(weights_best));
    debug_assert_eq!(pruned.len(), k);
    let design = Design::new(arms, pruned)?;
    let objective = design.objective(targets, weights)?;
    if criterion == Criterion::G && !certified {
        certified = kw_gap(&design, arms)? <= opts.tol * T::from_count(d);
    }
    Ok(DesignSolution {
        design,
        objective,
        iterations,
        certified,
    })
}

fn solve_g<T: Scalar>(arms: &[Vec<T>], opts: SolverOptions<T>) -> Result<(Vec<T>, usize, bool)> {
    let k = arms.len();
    let d = arms[0].len();
    let dd = T::from_count(d);
    let mut lam = vec![T::from_count(k).recip(); k];
    let mut inv = weighted_outer_sum(d, arms, &lam).inverse()?;
    let kw_target = opts.tol * dd;
    let mut best = (lam.clone(), T::infinity());
    for it in 0..opts.max_iter {
        let scores: Vec<T> = arms.iter().map(|x| inv.quad_form(x)).collect();
        let vertex = crate::problem::argmax_first(&scores);
        let obj = scores[vertex];
        if obj < best.1 {
            best = (lam.clone(), obj);
        }
        if obj - dd <= kw_target {
            return Ok((lam, it + 1, true));
        }
        // Away step from the least informative support point when it lies
        // further below d than the best vertex lies above it. Clipped away
        // steps drop the point, so stray weights vanish exactly.
        let away = (0..k)
            .filter(|&j| lam[j] > T::zero() && lam[j] < T::one())
            .min_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite scores"));
        lam = match away {
            Some(j) if dd - scores[j] > obj - dd => {
                let m = scores[j];
                let limit = -lam[j] / (T::one() - lam[j]);
                let tau = if m > T::one() {
                    ((m - dd) / (dd * (m - T::one()))).max(limit)
                } else {
                    limit
                };
                let mut next = step_toward(&lam, j, tau);
                if tau == limit {
                    next[j] = T::zero();
                    next = clean_simplex(next);
                }
                next
            }
            _ => step_toward(&lam, vertex, fedorov_step(&inv, &arms[vertex], d)),
        };
        inv = match design_inverse(d, arms, &lam) {
            Some((_, i)) => i,
            None => break,
        };
    }
    Ok((best.0, opts.max_iter, false))
}

/// `log sum exp(q_t / s)` scaled by `s`, with the softmax weights.
fn soft_max<T: Scalar>(q: &[T], s: T) -> (T, Vec<T>) {
    let m = q.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = q.iter().map(|&v| ((v - m) / s).exp()).collect();
    let z: T = e.iter().copied().sum();
    (m + s * z.ln(), e.into_iter().map(|v| v / z).collect())
}

/// Full re-inversion period of the smoothed solver's running inverse.
const SMOOTH_REINVERT: usize = 50;

fn solve_smoothed<T: Scalar>(
    arms: &[Vec<T>],
    targets: &[Vec<T>],
    weights: Option<&[T]>,
    opts: SolverOptions<T>,
) -> Result<(Vec<T>, usize, bool)> {
    let k = arms.len();
    let d = arms[0].len();
    let nt = targets.len();
    let w: Vec<T> = (0..nt)
        .map(|i| weights.map_or(T::one(), |w| w[i]))
        .collect();
    let log_t = T::from_count(nt).ln();
    let drop_tol = T::lit(SIMPLEX_TOL);
    let mut lam = vec![T::from_count(k).recip(); k];
    let mut inv = weighted_outer_sum(d, arms, &lam).inverse()?;
    let mut s: Option<T> = None;
    let mut best = (lam.clone(), T::infinity());
    let mut z = vec![vec![T::zero(); d]; nt];
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        if it > 0 && it % SMOOTH_REINVERT == 0 {
            inv = weighted_outer_sum(d, arms, &lam).inverse()?;
        }
        for (zt, t) in z.iter_mut().zip(targets) {
            inv.mul_vec_into(t, zt);
        }
        let qu: Vec<T> = (0..nt).map(|i| dot(&targets[i], &z[i])).collect();
        let q: Vec<T> = (0..nt).map(|i| w[i] * qu[i]).collect();
        let f = q.iter().copied().fold(T::neg_infinity(), T::max);
        if f < best.1 {
            best = (lam.clone(), f);
        }
        let floor = T::lit(1e-3) * opts.tol * f / log_t.max(T::one());
        let sm = *s.get_or_insert_with(|| T::lit(0.1) * f / log_t.max(T::one()));
        let smoothing = if nt == 1 { T::zero() } else { sm * log_t };
        let (_, pi) = soft_max(&q, sm);
        let phi: T = pi.iter().zip(&q).map(|(&p, &v)| p * v).sum();
        let scores: Vec<T> = arms
            .iter()
            .map(|x| {
                (0..nt)
                    .map(|i| {
                        let c = dot(x, &z[i]);
                        pi[i] * w[i] * c * c
                    })
                    .sum()
            })
            .collect();
        let vertex = crate::problem::argmax_first(&scores);
        let gap = (scores[vertex] - phi).max(T::zero());
        if gap + smoothing <= opts.tol * f {
            return Ok((lam, it + 1, true));
        }
        let halve = |s: &mut Option<T>| -> bool {
            if sm > floor {
                *s = Some(sm * T::lit(0.5));
                true
            } else {
                false
            }
        };
        if gap <= T::lit(0.5) * smoothing && halve(&mut s) {
            continue;
        }
        let f0 = soft_max(&q, sm).0;
        let smooth_of = |qs: &[T]| -> T {
            if qs.iter().any(|v| !(*v > T::zero())) {
                T::infinity()
            } else {
                soft_max(qs, sm).0
            }
        };
        let xv = &arms[vertex];
        let iv = inv.mul_vec(xv);
        let mvv = dot(xv, &iv);
        let pv: Vec<T> = z.iter().map(|zt| dot(xv, zt)).collect();

        // Pairwise step: move mass `g` from the support arm with the lowest
        // score to `vertex`. Along Lambda + g (v v^T - a a^T) the quadratic
        // forms follow from Woodbury with a 2x2 core.
        let away = (0..k).filter(|&i| lam[i] > T::zero() && i != vertex).fold(
            None,
            |acc: Option<usize>, i| match acc {
                Some(j) if scores[j] <= scores[i] => Some(j),
                _ => Some(i),
            },
        );
        if let Some(away) = away {
            let xa = &arms[away];
            let ia = inv.mul_vec(xa);
            let (mva, maa) = (dot(xv, &ia), dot(xa, &ia));
            let pa: Vec<T> = z.iter().map(|zt| dot(xa, zt)).collect();
            // Inverse of [[1/g + mvv, mva], [mva, maa - 1/g]].
            let core = |g: T| -> Option<(T, T, T)> {
                let (c11, c12, c22) = (g.recip() + mvv, mva, maa - g.recip());
                let det = c11 * c22 - c12 * c12;
                (det != T::zero() && det.is_finite()).then(|| (c22 / det, -c12 / det, c11 / det))
            };
            let along = |g: T| -> T {
                let Some((i11, i12, i22)) = core(g) else {
                    return T::infinity();
                };
                let qs: Vec<T> = (0..nt)
                    .map(|i| {
                        let r = i11 * pv[i] * pv[i]
                            + T::lit(2.0) * i12 * pv[i] * pa[i]
                            + i22 * pa[i] * pa[i];
                        w[i] * (qu[i] - r)
                    })
                    .collect();
                smooth_of(&qs)
            };
            let gmax = lam[away];
            let mut gamma = golden_section(T::zero(), gmax, along);
            if gmax - gamma <= drop_tol {
                gamma = gmax;
            }
            if gamma > T::zero() && along(gamma) < f0 {
                if let Some((i11, i12, i22)) = core(gamma) {
                    inv.add_outer(&iv, -i11);
                    inv.add_outer(&ia, -i22);
                    for r in 0..d {
                        for c in 0..d {
                            inv[(r, c)] = inv[(r, c)] - i12 * (iv[r] * ia[c] + ia[r] * iv[c]);
                        }
                    }
                    inv.symmetrize();
                    lam[vertex] = lam[vertex] + gamma;
                    lam[away] = if gamma >= gmax {
                        T::zero()
                    } else {
                        lam[away] - gamma
                    };
                    continue;
                }
            }
        }

        // Plain FW step along (1 - g) Lambda + g v v^T by Sherman-Morrison.
        let along = |g: T| -> T {
            let gp = g / (T::one() - g);
            let scale = (T::one() - g).recip();
            let qs: Vec<T> = (0..nt)
                .map(|i| w[i] * scale * (qu[i] - gp * pv[i] * pv[i] / (T::one() + gp * mvv)))
                .collect();
            smooth_of(&qs)
        };
        let gamma = golden_section(T::zero(), T::one() - T::lit(1e-9), along);
        if gamma > T::zero() && along(gamma) < f0 {
            let gp = gamma / (T::one() - gamma);
            let scale = (T::one() - gamma).recip();
            inv.add_outer(&iv, -gp / (T::one() + gp * mvv));
            let mut next = Matrix::zeros(d);
            next.add_scaled(&inv, scale);
            inv = next;
            inv.symmetrize();
            lam = step_toward(&lam, vertex, gamma);
            // step_toward may clip tiny weights; keep the inverse exact.
            inv = weighted_outer_sum(d, arms, &lam).inverse()?;
            continue;
        }
        if !halve(&mut s) {
            break;
        }
    }
    Ok((best.0, iterations, false))
}

fn step_toward<T: Scalar>(lam: &[T], vertex: usize, gamma: T) -> Vec<T> {
    let keep = T::one() - gamma;
    let mut out: Vec<T> = lam.iter().map(|&w| w * keep).collect();
    out[vertex] = out[vertex] + gamma;
    clean_simplex(out)
}

/// Clips tiny negatives and renormalizes onto the simplex.
fn clean_simplex<T: Scalar>(mut w: Vec<T>) -> Vec<T> {
    let tol = T::lit(SIMPLEX_TOL);
    for v in w.iter_mut() {
        if *v < tol {
            *v = T::zero();
        }
    }
    let total: T = w.iter().copied().sum();
    for v in w.iter_mut() {
        *v = *v / total;
    }
    w
}

fn design_inverse<T: Scalar>(d: usize, arms: &[Vec<T>], w: &[T]) -> Option<(Matrix<T>, Matrix<T>)> {
    let m = weighted_outer_sum(d, arms, w);
    let inv = m.inverse().ok()?;
    Some((m, inv))
}

/// Exact line search for `log det` along `(1-g) Lambda + g x x^T`.
fn fedorov_step<T: Scalar>(inv: &Matrix<T>, x: &[T], d: usize) -> T {
    let m = inv.quad_form(x);
    let dd = T::from_count(d);
    if m <= dd {
        return T::zero();
    }
    ((m / dd - T::one()) / (m - T::one())).min(T::one())
}

/// Minimizes a unimodal function on `[lo, hi]`.
fn golden_section<T: Scalar, F: Fn(T) -> T>(mut lo: T, mut hi: T, f: F) -> T {
    let ratio = T::lit(0.618_033_988_749_894_8);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..40 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Removes support points while keeping `Lambda` fixed until at most
/// `d(d+1)/2 + 1` remain.
fn caratheodory_reduce<T: Scalar>(arms: &[Vec<T>], mut w: Vec<T>) -> Vec<T> {
    let d = arms[0].len();
    let max_support = d * (d + 1) / 2 + 1;
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > T::zero()).collect();
        if support.len() <= max_support {
            return w;
        }
        // Rows: upper-triangular entries of x x^T plus a row of ones.
        let rows = d * (d + 1) / 2 + 1;
        let cols = support.len();
        let mut m = vec![T::zero(); rows * cols];
        for (c, &i) in support.iter().enumerate() {
            let x = &arms[i];
            let mut r = 0;
            for a in 0..d {
                for b in a..d {
                    m[r * cols + c] = x[a] * x[b];
                    r += 1;
                }
            }
            m[r * cols + c] = T::one();
        }
        let Some(null) = null_vector(&mut m, rows, cols) else {
            return w;
        };
        // Move along -null until a weight hits zero.
        let mut t = T::infinity();
        let mut hit = None;
        for (c, &i) in support.iter().enumerate() {
            if null[c] > T::zero() {
                let s = w[i] / null[c];
                if s < t {
                    t = s;
                    hit = Some(i);
                }
            }
        }
        let Some(hit) = hit else {
            return w;
        };
        for (c, &i) in support.iter().enumerate() {
            w[i] = w[i] - t * null[c];
        }
        w[hit] = T::zero();
        w = clean_simplex(w);
    }
}

/// A nonzero vector in the null space of a `rows x cols` matrix with
/// `cols > rows`, via reduced row echelon form.
fn null_vector<T: Scalar>(m: &mut [T], rows: usize, cols: usize) -> Option<Vec<T>> {
    let scale = m.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let tol = T::singular_tol() * scale.max(T::one());
    let mut pivot_cols = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let (piv, pv) = (r..rows)
            .map(|i| (i, m[i * cols + c].abs()))
            .fold((r, T::neg_infinity()), |a, b| if b.1 > a.1 { b } else { a });
        if pv <= tol {
            continue;
        }
        for j in 0..cols {
            m.swap(piv * cols + j, r * cols + j);
        }
        let p = m[r * cols + c];
        for j in 0..cols {
            m[r * cols + j] = m[r * cols + j] / p;
        }
        for i in 0..rows {
            if i != r {
                let f = m[i * cols + c];
                if f != T::zero() {
                    for j in 0..cols {
                        m[i * cols + j] = m[i * cols + j] - f * m[r * cols + j];
                    }
                }
            }
        }
        pivot_cols.push(c);
        r += 1;
    }
    let free = (0..cols).find(|c| !pivot_cols.contains(c))?;
    let mut v = vec![T::zero(); cols];
    v[free] = T::one();
    for (row, &pc) in pivot_cols.iter().enumerate() {
        v[pc] = -m[row * cols + free];
    }
    Some(v)
}

/// Efficient rounding of a design into integer counts summing to `n`.
///
/// Starts from `ceil((n - p/2) lambda_i)` on the support, then repeatedly
/// increments the arm minimizing `n_i / lambda_i` or decrements the arm
/// maximizing `(n_i - 1) / lambda_i`. Ties go to the lowest arm index.
pub fn round_design<T: Scalar>(design: &Design<T>, n: u64) -> Result<Vec<u64>> {
    let support = design.support_indices();
    let p = support.len() as u64;
    if n < p {
        return Err(Error::InvalidArgument(format!(
            "cannot round a design with support {p} into {n} pulls"
        )));
    }
    let w = design.weights();
    let mut counts = vec![0u64; w.len()];
    let base = n as f64 - 0.5 * p as f64;
    for &i in &support {
        let v = base * w[i].to_f64_lossy();
        // Guard against v = 2.0000000000004 style representation error.
        let c = (v - 1e-9 * v.abs().max(1.0)).ceil().max(1.0);
        counts[i] = c as u64;
    }
    let mut total: u64 = counts.iter().sum();
    while total < n {
        let j = pick(&support, |i| counts[i] as f64 / w[i].to_f64_lossy(), false);
        counts[j] += 1;
        total += 1;
    }
    while total > n {
        let k = pick(
            &support,
            |i| (counts[i] as f64 - 1.0) / w[i].to_f64_lossy(),
            true,
        );
        counts[k] -= 1;
        total -= 1;
    }
    Ok(counts)
}

fn pick(support: &[usize], key: impl Fn(usize) -> f64, maximize: bool) -> usize {
    let mut best = support[0];
    let mut best_v = key(best);
    for &i in &support[1..] {
        let v = key(i);
        let better = if maximize {
            v > best_v * (1.0 + 1e-12) + 1e-300
        } else {
            v < best_v * (1.0 - 1e-12)
        };
        if better {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Relative slack under which two greedy scores count as tied.
const TIE_TOL: f64 = 1e-9;

/// `argmin_x max_t w_t t^T (A + x x^T)^-1 t`, evaluated with the rank-one
/// formula and without touching `a_inv`.
///
/// When the current maximum is shared by several targets no single pull can
/// lower all of them, and the min-max score then only rewards arms that
/// shave a negligible amount off every tied target. In that case the arm
/// minimizing the sum of the tied targets' values is taken instead. Remaining
/// ties go to the lowest index.
pub fn greedy_step<T: Scalar>(
    a_inv: &Matrix<T>,
    arms: &[Vec<T>],
    targets: &[Vec<T>],
    weights: Option<&[T]>,
) -> Result<usize> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument(
            "greedy step needs at least one target".into(),
        ));
    }
    let w = |t: usize| weights.map_or(T::one(), |w| w[t]);
    let inv_t: Vec<Vec<T>> = targets.iter().map(|t| a_inv.mul_vec(t)).collect();
    let var: Vec<T> = targets.iter().zip(&inv_t).map(|(t, z)| dot(t, z)).collect();
    let dens: Vec<T> = arms
        .iter()
        .map(|x| T::one() + dot(x, &a_inv.mul_vec(x)))
        .collect();
    let cross: Vec<Vec<T>> = arms
        .iter()
        .map(|x| inv_t.iter().map(|z| dot(z, x)).collect())
        .collect();
    Ok(select_greedy(
        arms.len(),
        targets.len(),
        |t| w(t) * var[t],
        |x, t| {
            let c = cross[x][t];
            w(t) * (var[t] - c * c / dens[x])
        },
    ))
}

/// Greedy choice given each target's current value and its value after a
/// hypothetical pull of each candidate. See [`greedy_step`].
pub(crate) fn select_greedy<T: Scalar>(
    candidates: usize,
    targets: usize,
    current: impl Fn(usize) -> T,
    score: impl Fn(usize, usize) -> T,
) -> usize {
    let tol = T::lit(TIE_TOL);
    let now: Vec<T> = (0..targets).map(&current).collect();
    let top = now.iter().copied().fold(T::neg_infinity(), T::max);
    let floor = top - tol * top.abs();
    let tied: Vec<usize> = (0..targets).filter(|&t| now[t] >= floor).collect();
    let keys: Vec<T> = if tied.len() > 1 {
        (0..candidates)
            .map(|x| tied.iter().map(|&t| score(x, t)).sum())
            .collect()
    } else {
        (0..candidates)
            .map(|x| {
                (0..targets)
                    .map(|t| score(x, t))
                    .fold(T::neg_infinity(), T::max)
            })
            .collect()
    };
    let m = keys.iter().copied().fold(T::infinity(), T::min);
    let cut = m + tol * m.abs();
    keys.iter()
        .position(|&k| k <= cut)
        .expect("minimum is attained")
}

/// Incremental greedy selector. Keeps `t^T A^-1 t`, `t^T A^-1 x` and
/// `x^T A^-1 x'` up to date under rank-one updates so one selection costs
/// `O(|targets| K)` instead of `O(|targets| K d^2)`.
#[derive(Clone, Debug)]
pub struct GreedySelector<T> {
    arms: Vec<Vec<T>>,
    targets: Vec<Vec<T>>,
    weights: Vec<T>,
    a: Matrix<T>,
    a_inv: Matrix<T>,
    /// `t^T A^-1 t` per target.
    var: Vec<T>,
    /// Row-major `|targets| x K`: `t^T A^-1 x`.
    cross: Vec<T>,
    /// Row-major `K x K`: `x^T A^-1 x'`.
    gram: Vec<T>,
    since_reinvert: usize,
}

impl<T: Scalar> GreedySelector<T> {
    /// Starts from an invertible `A0`.
    pub fn new(
        arms: Vec<Vec<T>>,
        targets: Vec<Vec<T>>,
        weights: Option<Vec<T>>,
        a0: Matrix<T>,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::InvalidArgument(
                "greedy step needs at least one target".into(),
            ));
        }
        let weights = weights.unwrap_or_else(|| vec![T::one(); targets.len()]);
        if weights.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                found: weights.len(),
            });
        }
        let a_inv = a0.inverse()?;
        let mut s = Self {
            arms,
            targets,
            weights,
            a: a0,
            a_inv,
            var: Vec::new(),
            cross: Vec::new(),
            gram: Vec::new(),
            since_reinvert: 0,
        };
        s.refresh_caches();
        Ok(s)
    }

    fn refresh_caches(&mut self) {
        let k = self.arms.len();
        let u: Vec<Vec<T>> = self.arms.iter().map(|x| self.a_inv.mul_vec(x)).collect();
        self.var = self
            .targets
            .iter()
            .map(|t| self.a_inv.quad_form(t))
            .collect();
        self.cross = Vec::with_capacity(self.targets.len() * k);
        for t in &self.targets {
            for ux in &u {
                self.cross.push(dot(t, ux));
            }
        }
        self.gram = Vec::with_capacity(k * k);
        for x in &self.arms {
            for ux in &u {
                self.gram.push(dot(x, ux));
            }
        }
    }

    pub fn inverse(&self) -> &Matrix<T> {
        &self.a_inv
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.a
    }

    /// Current `max_t w_t t^T A^-1 t`.
    pub fn objective(&self) -> T {
        self.var
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * v)
            .fold(T::neg_infinity(), T::max)
    }

    /// Unweighted `max_t t^T A^-1 t`.
    pub fn max_variance(&self) -> T {
        self.var.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn variances(&self) -> &[T] {
        &self.var
    }

    /// Score of candidate `x` for target `t` after a hypothetical pull.
    fn score(&self, x: usize, t: usize) -> T {
        let k = self.arms.len();
        let den = T::one() + self.gram[x * k + x];
        let c = self.cross[t * k + x];
        self.weights[t] * (self.var[t] - c * c / den)
    }

    pub fn select(&self) -> usize {
        select_greedy(
            self.arms.len(),
            self.targets.len(),
            |t| self.weights[t] * self.var[t],
            |x, t| self.score(x, t),
        )
    }

    /// Applies `A <- A + x x^T` for arm `arm`.
    pub fn update(&mut self, arm: usize) -> Result<()> {
        let k = self.arms.len();
        let x = self.arms[arm].clone();
        self.a.add_outer(&x, T::one());
        self.since_reinvert += 1;
        if self.since_reinvert >= REINVERT_EVERY {
            self.a_inv = self.a.inverse()?;
            self.a_inv.symmetrize();
            self.since_reinvert = 0;
            self.refresh_caches();
            return Ok(());
        }
        let den = T::one() + self.gram[arm * k + arm];
        if !(den > T::lit(1e-12)) {
            return Err(Error::DegenerateUpdate(den.to_f64_lossy()));
        }
        let inv_den = den.recip();
        rank_one_update_in_place(&mut self.a_inv, &x)?;
        let col: Vec<T> = (0..k).map(|j| self.gram[arm * k + j]).collect();
        for t in 0..self.targets.len() {
            let ct = self.cross[t * k + arm];
            self.var[t] = (self.var[t] - ct * ct * inv_den).max(T::zero());
            for (j, &g) in col.iter().enumerate() {
                self.cross[t * k + j] = self.cross[t * k + j] - ct * g * inv_den;
            }
        }
        for i in 0..k {
            let gi = col[i];
            for j in 0..k {
                self.gram[i * k + j] = self.gram[i * k + j] - gi * col[j] * inv_den;
            }
        }
        Ok(())
    }
}

/// `G = X A^-1 X^T` over a fixed arm list, kept current under pulls.
///
/// Every quantity the strategies need is an entry or a difference of entries
/// of `G`: `||x - x'||^2_{A^-1} = G_xx + G_x'x' - 2 G_xx'`, and the greedy
/// score of a candidate only needs its column. One pull costs `O(K^2 + d^2)`.
#[derive(Clone, Debug)]
pub struct ArmGram<T> {
    arms: Vec<Vec<T>>,
    a: Matrix<T>,
    a_inv: Matrix<T>,
    g: Vec<T>,
    since_reinvert: usize,
}

impl<T: Scalar> ArmGram<T> {
    pub fn new(arms: Vec<Vec<T>>, a0: Matrix<T>) -> Result<Self> {
        let a_inv = a0.inverse()?;
        let mut s = Self {
            arms,
            a: a0,
            a_inv,
            g: Vec::new(),
            since_reinvert: 0,
        };
        s.refresh();
        Ok(s)
    }

    fn refresh(&mut self) {
        let k = self.arms.len();
        let u: Vec<Vec<T>> = self.arms.iter().map(|x| self.a_inv.mul_vec(x)).collect();
        self.g = Vec::with_capacity(k * k);
        for x in &self.arms {
            for ux in &u {
                self.g.push(dot(x, ux));
            }
        }
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn arms(&self) -> &[Vec<T>] {
        &self.arms
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.a
    }

    pub fn inverse(&self) -> &Matrix<T> {
        &self.a_inv
    }

    /// `x_i^T A^-1 x_j`.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.g[i * self.arms.len() + j]
    }

    /// `||x_i - x_j||^2_{A^-1}`.
    #[inline]
    pub fn diff_sq(&self, i: usize, j: usize) -> T {
        (self.get(i, i) + self.get(j, j) - T::lit(2.0) * self.get(i, j)).max(T::zero())
    }

    /// `A <- A + x x^T` for arm `arm`.
    pub fn pull(&mut self, arm: usize) -> Result<()> {
        let k = self.arms.len();
        let x = self.arms[arm].clone();
        self.a.add_outer(&x, T::one());
        self.since_reinvert += 1;
        if self.since_reinvert >= REINVERT_EVERY {
            self.a_inv = self.a.inverse()?;
            self.a_inv.symmetrize();
            self.since_reinvert = 0;
            self.refresh();
            return Ok(());
        }
        rank_one_update_in_place(&mut self.a_inv, &x)?;
        let den = T::one() + self.get(arm, arm);
        let inv_den = den.recip();
        let col: Vec<T> = (0..k).map(|j| self.get(arm, j)).collect();
        for i in 0..k {
            let gi = col[i] * inv_den;
            if gi == T::zero() {
                continue;
            }
            let row = &mut self.g[i * k..(i + 1) * k];
            for (r, &cj) in row.iter_mut().zip(&col) {
                *r = *r - gi * cj;
            }
        }
        Ok(())
    }
}

/// What a greedy selection minimizes the worst case over.
#[derive(Clone, Debug)]
pub enum Targets<T> {
    /// The arms themselves (G-allocation).
    Arms,
    /// Arm differences `x_i - x_j`, each with a weight.
    Pairs(Vec<(usize, usize)>, Vec<T>),
}

impl<T: Scalar> Targets<T> {
    /// Unit-weight pairs.
    pub fn pairs(pairs: Vec<(usize, usize)>) -> Self {
        let w = vec![T::one(); pairs.len()];
        Self::Pairs(pairs, w)
    }

    /// Unit-weight unordered pairs over `arms`.
    pub fn among(arms: &[usize]) -> Self {
        let mut p = Vec::new();
        for (a, &i) in arms.iter().enumerate() {
            for &j in &arms[a + 1..] {
                p.push((i, j));
            }
        }
        Self::pairs(p)
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Pairs(p, _) if p.is_empty())
    }

    /// Unweighted `max_t t^T A^-1 t`.
    pub fn max_variance(&self, gram: &ArmGram<T>) -> T {
        match self {
            Self::Arms => (0..gram.num_arms())
                .map(|i| gram.get(i, i))
                .fold(T::neg_infinity(), T::max),
            Self::Pairs(p, _) => p
                .iter()
                .map(|&(i, j)| gram.diff_sq(i, j))
                .fold(T::neg_infinity(), T::max),
        }
    }

    /// `argmin_x max_t w_t t^T (A + x x^T)^-1 t`, with the tie rules of
    /// [`greedy_step`].
    pub fn greedy(&self, gram: &ArmGram<T>) -> usize {
        let k = gram.num_arms();
        let dens: Vec<T> = (0..k).map(|x| T::one() + gram.get(x, x)).collect();
        match self {
            Self::Arms => select_greedy(
                k,
                k,
                |t| gram.get(t, t),
                |x, t| {
                    let c = gram.get(t, x);
                    gram.get(t, t) - c * c / dens[x]
                },
            ),
            Self::Pairs(p, w) => {
                let var: Vec<T> = p.iter().map(|&(i, j)| gram.diff_sq(i, j)).collect();
                select_greedy(
                    k,
                    p.len(),
                    |t| w[t] * var[t],
                    |x, t| {
                        let (i, j) = p[t];
                        let c = gram.get(i, x) - gram.get(j, x);
                        w[t] * (var[t] - c * c / dens[x])
                    },
                )
            }
        }
    }
}

/// G/XY value summary printed by the `design` command.
#[derive(Clone, Debug, Serialize)]
pub struct DesignReport {
    pub method: String,
    pub target: String,
    pub weights: Vec<f64>,
    pub counts: Vec<u64>,
    pub objective: f64,
    pub kw_gap: f64,
    pub support: usize,
    pub certified: bool,
}
