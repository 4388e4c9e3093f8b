//! Spectral flow of Hermitian paths: adaptive crossing counting, the
//! winding-cocycle realization, essential codimension, and the mass-flip
//! index identity.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};

use crate::calculus::{potential_unitary, switch_function, SwitchKind};
use crate::error::{Error, Result};
use crate::linalg;
use crate::operators::{GeneralOperator, HermitianOperator, TraceWeights};

/// Hard cap on path evaluations per spectral-flow computation.
pub const FLOW_EVAL_BUDGET: usize = 1 << 14;

/// Absolute tolerance for the idempotency and Hermiticity of projections.
pub const PROJECTION_TOL: f64 = 1e-10;

/// Singular values above this count toward numerical ranks of compressed
/// products.
pub const RANK_THRESHOLD: f64 = 1e-8;

/// Raw cocycle value of one unit of winding on the reference scalar loop
/// `t -> exp(2 pi i t)` applied as `wind(U* - 1, U - 1)`; every normalized
/// winding is the raw value divided by this calibration constant.
pub const COCYCLE_PER_UNIT_WINDING: f64 = -2.0 * PI;

/// Normalized windings must sit within this distance of an integer.
pub const WINDING_INTEGER_TOL: f64 = 1e-6;

/// A parametrized family `t in [0, 1] -> Hermitian matrix` with invertible
/// endpoints. Evaluations at distinct `t` are independent; the adaptive
/// refinement loop is the only sequential coordinator.
pub struct OperatorPath {
    evaluator: Box<dyn Fn(f64) -> Mat<c64> + Send + Sync>,
    pub initial_samples: usize,
    pub endpoint_gap: f64,
    dim: usize,
}

impl std::fmt::Debug for OperatorPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorPath")
            .field("initial_samples", &self.initial_samples)
            .field("endpoint_gap", &self.endpoint_gap)
            .field("dim", &self.dim)
            .finish()
    }
}

impl OperatorPath {
    /// Wraps an evaluator, measuring the endpoint gap (smallest |eigenvalue|
    /// over t = 0 and t = 1). Fails if an endpoint is singular or a sample is
    /// not Hermitian.
    pub fn new(
        evaluator: impl Fn(f64) -> Mat<c64> + Send + Sync + 'static,
        initial_samples: usize,
    ) -> Result<Self> {
        let mut gap = f64::INFINITY;
        let mut dim = 0;
        for t in [0.0, 1.0] {
            let m = evaluator(t);
            check_path_sample(m.as_ref(), t)?;
            dim = m.nrows();
            let evals = linalg::eigh_values(m.as_ref())?;
            let least = evals.iter().fold(f64::INFINITY, |a, &l| a.min(l.abs()));
            let scale = evals.iter().fold(1.0f64, |a, &l| a.max(l.abs()));
            if least <= 1e-10 * scale {
                return Err(Error::GapFailure {
                    context: format!("path endpoint t = {t} is singular"),
                    gap: least,
                    required: 1e-10 * scale,
                });
            }
            gap = gap.min(least);
        }
        if initial_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "a path needs at least 2 initial samples, got {initial_samples}"
            )));
        }
        Ok(OperatorPath {
            evaluator: Box::new(evaluator),
            initial_samples,
            endpoint_gap: gap,
            dim,
        })
    }

    /// Same, but verifies a caller-declared endpoint gap instead of using the
    /// measured one.
    pub fn with_endpoint_gap(
        evaluator: impl Fn(f64) -> Mat<c64> + Send + Sync + 'static,
        initial_samples: usize,
        endpoint_gap: f64,
    ) -> Result<Self> {
        if !(endpoint_gap > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "endpoint gap must be positive, got {endpoint_gap}"
            )));
        }
        let path = Self::new(evaluator, initial_samples)?;
        if path.endpoint_gap + 1e-12 < endpoint_gap {
            return Err(Error::GapFailure {
                context: "declared endpoint gap not met".into(),
                gap: path.endpoint_gap,
                required: endpoint_gap,
            });
        }
        Ok(OperatorPath {
            endpoint_gap,
            ..path
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn evaluate(&self, t: f64) -> Mat<c64> {
        (self.evaluator)(t)
    }
}

fn check_path_sample(m: MatRef<'_, c64>, t: f64) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "path sample at t = {t} is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let deviation = linalg::herm_deviation(m);
    let tolerance = 1e-10 * m.norm_max().max(1.0);
    if deviation > tolerance {
        return Err(Error::NotHermitian {
            deviation,
            tolerance,
        });
    }
    Ok(())
}

/// The two realizations of spectral flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMethod {
    /// Adaptive bisection plus essential codimension of consecutive
    /// nonnegative-spectrum projections.
    Crossings,
    /// Winding of the loop `t -> exp(i pi (G(T_t) + 1))` via the cocycle
    /// quadrature.
    Winding,
}

/// One contribution to the flow: a parameter interval and the net signed
/// number of eigenvalue crossings inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub interval: (f64, f64),
    pub direction: i64,
}

/// Outcome of a spectral-flow computation; `flow` always equals the sum of
/// the crossing directions.
#[derive(Debug, Clone)]
pub struct FlowReport {
    pub flow: i64,
    pub crossings: Vec<Crossing>,
    pub refinements: usize,
    pub evaluations: usize,
    pub method: FlowMethod,
}

/// ec(P, Q) = dim(ran Q ∩ ker P) − dim(ran P ∩ ker Q), computed through
/// numerical ranks of the compressed products. In finite dimensions this
/// telescopes to rank Q − rank P, which is asserted.
pub fn essential_codimension(p: MatRef<'_, c64>, q: MatRef<'_, c64>) -> Result<i64> {
    if p.nrows() != p.ncols() || q.nrows() != q.ncols() || p.nrows() != q.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "essential codimension of {}x{} and {}x{}",
            p.nrows(),
            p.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    check_projection(p, "first argument")?;
    check_projection(q, "second argument")?;
    let rank_p = linalg::rank_with_tol(p, RANK_THRESHOLD)? as i64;
    let rank_q = linalg::rank_with_tol(q, RANK_THRESHOLD)? as i64;
    let (pm, qm) = (p.to_owned(), q.to_owned());
    let pq = &pm * &qm;
    let qp = &qm * &pm;
    let ran_q_ker_p = rank_q - linalg::rank_with_tol(pq.as_ref(), RANK_THRESHOLD)? as i64;
    let ran_p_ker_q = rank_p - linalg::rank_with_tol(qp.as_ref(), RANK_THRESHOLD)? as i64;
    let ec = ran_q_ker_p - ran_p_ker_q;
    assert_eq!(
        ec,
        rank_q - rank_p,
        "essential codimension must telescope to the rank difference"
    );
    Ok(ec)
}

fn check_projection(p: MatRef<'_, c64>, label: &str) -> Result<()> {
    let herm = linalg::herm_deviation(p);
    let pm = p.to_owned();
    let idem = (&pm * &pm - &pm).norm_max();
    if herm > PROJECTION_TOL || idem > PROJECTION_TOL {
        return Err(Error::InvalidArgument(format!(
            "{label} is not a projection (hermiticity {herm:.3e}, idempotency {idem:.3e})"
        )));
    }
    Ok(())
}

struct PathSample {
    t: f64,
    evals: Vec<f64>,
    nonneg: usize,
    exact_zero: bool,
}

fn take_sample(path: &OperatorPath, t: f64) -> Result<PathSample> {
    let m = path.evaluate(t);
    check_path_sample(m.as_ref(), t)?;
    if m.nrows() != path.dim() {
        return Err(Error::DimensionMismatch(format!(
            "path dimension changed to {} at t = {t}",
            m.nrows()
        )));
    }
    let evals = linalg::eigh_values(m.as_ref())?;
    let scale = evals.iter().fold(1.0f64, |a, &l| a.max(l.abs()));
    let ztol = 1e-12 * scale;
    // chi(T >= 0) includes the kernel.
    let nonneg = evals.iter().filter(|&&l| l >= -ztol).count();
    let exact_zero = evals.iter().any(|&l| l.abs() <= ztol);
    Ok(PathSample {
        t,
        evals,
        nonneg,
        exact_zero,
    })
}

/// Smallest spacing between genuinely distinct sorted eigenvalues; infinite
/// when the spectrum is a single degenerate cluster.
fn least_distinct_spacing(evals: &[f64], scale: f64) -> f64 {
    evals
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&d| d > 1e-12 * scale)
        .fold(f64::INFINITY, f64::min)
}

/// True when the sorted eigenvalue matching between the two samples is
/// ambiguous: eigenvalues moved by more than half the least local spacing.
fn relabeling_ambiguous(a: &PathSample, b: &PathSample) -> bool {
    let scale = a
        .evals
        .iter()
        .chain(&b.evals)
        .fold(1.0f64, |acc, &l| acc.max(l.abs()));
    let motion = a
        .evals
        .iter()
        .zip(&b.evals)
        .map(|(&x, &y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    if motion <= 1e-10 * scale {
        return false;
    }
    let gap = least_distinct_spacing(&a.evals, scale).min(least_distinct_spacing(&b.evals, scale));
    motion > 0.5 * gap
}

/// Computes the flow of a path of Hermitian matrices by either realization.
pub fn spectral_flow(path: &OperatorPath, method: FlowMethod) -> Result<FlowReport> {
    match method {
        FlowMethod::Crossings => crossing_flow(path),
        FlowMethod::Winding => winding_flow(path),
    }
}

fn crossing_flow(path: &OperatorPath) -> Result<FlowReport> {
    let n0 = path.initial_samples;
    let mut samples = Vec::with_capacity(n0);
    for k in 0..n0 {
        let t = k as f64 / (n0 - 1) as f64;
        samples.push(take_sample(path, t)?);
    }
    let mut evaluations = n0;
    let mut refinements = 0usize;

    let split = |samples: &mut Vec<PathSample>,
                     flagged: Vec<usize>,
                     evaluations: &mut usize,
                     refinements: &mut usize|
     -> Result<()> {
        // Insert back to front so stored indices stay valid.
        for &k in flagged.iter().rev() {
            if *evaluations >= FLOW_EVAL_BUDGET {
                return Err(Error::RefinementBudget {
                    evaluations: *evaluations,
                });
            }
            let mid = 0.5 * (samples[k].t + samples[k + 1].t);
            samples.insert(k + 1, take_sample(path, mid)?);
            *evaluations += 1;
            *refinements += 1;
        }
        Ok(())
    };

    loop {
        let flagged: Vec<usize> = (0..samples.len() - 1)
            .filter(|&k| relabeling_ambiguous(&samples[k], &samples[k + 1]))
            .collect();
        if flagged.is_empty() {
            break;
        }
        split(&mut samples, flagged, &mut evaluations, &mut refinements)?;
    }

    // An exact interior kernel gets one extra bisection of its neighboring
    // intervals before counting.
    let bonus: Vec<usize> = (0..samples.len() - 1)
        .filter(|&k| {
            let interior_zero =
                |s: &PathSample| s.exact_zero && s.t > 0.0 && s.t < 1.0;
            interior_zero(&samples[k]) || interior_zero(&samples[k + 1])
        })
        .collect();
    split(&mut samples, bonus, &mut evaluations, &mut refinements)?;

    // In finite dimensions the essential codimension of consecutive
    // nonnegative-spectrum projections is the rank difference, so the
    // accumulated flow telescopes exactly.
    let mut crossings = Vec::new();
    let mut flow = 0i64;
    for pair in samples.windows(2) {
        let direction = pair[1].nonneg as i64 - pair[0].nonneg as i64;
        if direction != 0 {
            crossings.push(Crossing {
                interval: (pair[0].t, pair[1].t),
                direction,
            });
            flow += direction;
        }
    }
    Ok(FlowReport {
        flow,
        crossings,
        refinements,
        evaluations,
        method: FlowMethod::Crossings,
    })
}

fn winding_flow(path: &OperatorPath) -> Result<FlowReport> {
    let switch = switch_function(SwitchKind::ErfBased, path.endpoint_gap)?;
    let mut intervals = 64usize.max(4 * (path.initial_samples - 1)).next_power_of_two();
    let mut evaluations = 0usize;
    let mut refinements = 0usize;
    let mut last_err: Option<Error> = None;
    while evaluations + intervals + 1 <= FLOW_EVAL_BUDGET {
        let mut loop_samples = Vec::with_capacity(intervals + 1);
        for k in 0..=intervals {
            let t = k as f64 / intervals as f64;
            let m = path.evaluate(t);
            check_path_sample(m.as_ref(), t)?;
            let h = HermitianOperator::untagged(linalg::hermitian_part(m.as_ref()))?;
            loop_samples.push(potential_unitary(&h, &switch)?.matrix);
        }
        evaluations += intervals + 1;
        let f1: Vec<Mat<c64>> = loop_samples
            .iter()
            .map(|u| {
                let mut a = u.adjoint().to_owned();
                for i in 0..a.nrows() {
                    a[(i, i)] -= c64::new(1.0, 0.0);
                }
                a
            })
            .collect();
        let f2: Vec<Mat<c64>> = loop_samples
            .into_iter()
            .map(|mut u| {
                for i in 0..u.nrows() {
                    u[(i, i)] -= c64::new(1.0, 0.0);
                }
                u
            })
            .collect();
        match winding_cocycle(&f1, &f2, None, 0.5 * WINDING_INTEGER_TOL) {
            Ok(raw) => {
                let normalized = raw / c64::new(COCYCLE_PER_UNIT_WINDING, 0.0);
                match winding_integer(normalized, WINDING_INTEGER_TOL) {
                    Ok(flow) => {
                        let crossings = if flow != 0 {
                            vec![Crossing {
                                interval: (0.0, 1.0),
                                direction: flow,
                            }]
                        } else {
                            Vec::new()
                        };
                        return Ok(FlowReport {
                            flow,
                            crossings,
                            refinements,
                            evaluations,
                            method: FlowMethod::Winding,
                        });
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            Err(e @ Error::Quadrature(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        intervals *= 2;
        refinements += 1;
    }
    Err(last_err.unwrap_or(Error::RefinementBudget { evaluations }))
}

/// Rounds a normalized winding to the nearest integer, failing when it is not
/// within `tol` of one.
pub fn winding_integer(normalized: c64, tol: f64) -> Result<i64> {
    let nearest = normalized.re.round();
    let distance = (normalized - c64::new(nearest, 0.0)).norm();
    if distance > tol {
        return Err(Error::Quadrature(format!(
            "normalized winding {:.9} + {:.3e}i is {distance:.3e} from an integer (tolerance {tol:.1e})",
            normalized.re, normalized.im
        )));
    }
    Ok(nearest as i64)
}

/// Flow of the linear interpolation between two invertible Hermitian
/// matrices.
pub fn straight_line_flow(t0: &HermitianOperator, t1: &HermitianOperator) -> Result<i64> {
    if t0.dim() != t1.dim() {
        return Err(Error::DimensionMismatch(format!(
            "straight-line flow between dimensions {} and {}",
            t0.dim(),
            t1.dim()
        )));
    }
    let a = t0.matrix().to_owned();
    let b = t1.matrix().to_owned();
    let path = OperatorPath::new(
        move |t| {
            Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
                a[(i, j)] * c64::new(1.0 - t, 0.0) + b[(i, j)] * c64::new(t, 0.0)
            })
        },
        9,
    )?;
    Ok(spectral_flow(&path, FlowMethod::Crossings)?.flow)
}

/// Index of a (possibly rectangular) matrix as the flow of the mass-flip
/// path: SF([[−m, T*], [T, m]], [[m, T*], [T, −m]]) = dim ker T − dim ker T*.
pub fn index_via_mass_flip(t: &GeneralOperator, m: f64) -> Result<i64> {
    if !(m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mass must be positive, got {m}"
        )));
    }
    let endpoint = |mass: f64| -> Result<HermitianOperator> {
        let tm = t.matrix();
        let (p, q) = (tm.nrows(), tm.ncols());
        let n = p + q;
        let block = Mat::from_fn(n, n, |i, j| {
            if i < q && j < q {
                if i == j {
                    c64::new(-mass, 0.0)
                } else {
                    c64::new(0.0, 0.0)
                }
            } else if i < q {
                tm[(j - q, i)].conj()
            } else if j < q {
                tm[(i - q, j)]
            } else if i == j {
                c64::new(mass, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        HermitianOperator::untagged(block)
    };
    straight_line_flow(&endpoint(m)?, &endpoint(-m)?)
}

/// Quadrature of the cocycle `i * Integral_0^1 T(f1(t) f2'(t)) dt` over
/// uniformly sampled paths; `weights` selects the trace functional (plain
/// trace when absent). The sample count must be 4k + 1 so both the fine and
/// the halved Richardson grid admit the composite quadrature; disagreement
/// beyond `tol` is an error.
pub fn winding_cocycle(
    f1: &[Mat<c64>],
    f2: &[Mat<c64>],
    weights: Option<&TraceWeights>,
    tol: f64,
) -> Result<c64> {
    if f1.len() != f2.len() {
        return Err(Error::DimensionMismatch(format!(
            "cocycle paths have {} and {} samples",
            f1.len(),
            f2.len()
        )));
    }
    let segments = f1.len().saturating_sub(1);
    if segments < 4 || segments % 4 != 0 {
        return Err(Error::InvalidArgument(format!(
            "cocycle quadrature needs 4k + 1 >= 5 uniform samples, got {}",
            f1.len()
        )));
    }
    let dim = f1[0].nrows();
    for m in f1.iter().chain(f2) {
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::DimensionMismatch(
                "cocycle samples must share one square dimension".into(),
            ));
        }
    }
    if let Some(w) = weights {
        if w.weights.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "trace weight length {} vs dimension {dim}",
                w.weights.len()
            )));
        }
    }

    let fine = cocycle_quadrature(f1, f2, weights, 1);
    let coarse = cocycle_quadrature(f1, f2, weights, 2);
    let disagreement = (fine - coarse).norm();
    if disagreement > tol {
        return Err(Error::Quadrature(format!(
            "Richardson disagreement {disagreement:.3e} exceeds {tol:.1e} \
             ({} samples)",
            f1.len()
        )));
    }
    // Both the quadrature and the differentiation errors are fourth order,
    // so the halved grid extrapolates them away together.
    let extrapolated = fine + (fine - coarse) * c64::new(1.0 / 15.0, 0.0);
    Ok(extrapolated * c64::new(0.0, 1.0))
}

/// Composite Simpson value of Integral T(f1 f2') over the stride-subsampled
/// grid, with fourth-order finite differences for f2'.
fn cocycle_quadrature(
    f1: &[Mat<c64>],
    f2: &[Mat<c64>],
    weights: Option<&TraceWeights>,
    stride: usize,
) -> c64 {
    let idx: Vec<usize> = (0..f1.len()).step_by(stride).collect();
    let n = idx.len() - 1;
    let h = 1.0 / n as f64;
    let deriv = |k: usize| -> Mat<c64> {
        let at = |j: usize| &f2[idx[j]];
        let lincomb = |terms: &[(f64, usize)]| -> Mat<c64> {
            let mut acc = Mat::<c64>::zeros(f2[0].nrows(), f2[0].ncols());
            for &(c, j) in terms {
                let m = at(j);
                let s = c64::new(c / (12.0 * h), 0.0);
                for i in 0..acc.nrows() {
                    for jj in 0..acc.ncols() {
                        acc[(i, jj)] += m[(i, jj)] * s;
                    }
                }
            }
            acc
        };
        if k >= 2 && k + 2 <= n {
            lincomb(&[(1.0, k - 2), (-8.0, k - 1), (8.0, k + 1), (-1.0, k + 2)])
        } else if k == 0 {
            lincomb(&[(-25.0, 0), (48.0, 1), (-36.0, 2), (16.0, 3), (-3.0, 4)])
        } else if k == 1 {
            lincomb(&[(-3.0, 0), (-10.0, 1), (18.0, 2), (-6.0, 3), (1.0, 4)])
        } else if k + 1 == n {
            lincomb(&[
                (3.0, n),
                (10.0, n - 1),
                (-18.0, n - 2),
                (6.0, n - 3),
                (-1.0, n - 4),
            ])
        } else {
            lincomb(&[
                (25.0, n),
                (-48.0, n - 1),
                (36.0, n - 2),
                (-16.0, n - 3),
                (3.0, n - 4),
            ])
        }
    };
    let traced = |k: usize| -> c64 {
        let a = &f1[idx[k]];
        let b = deriv(k);
        let mut acc = c64::new(0.0, 0.0);
        for i in 0..a.nrows() {
            let w = weights.map_or(1.0, |w| w.weights[i]);
            if w == 0.0 {
                continue;
            }
            let mut row = c64::new(0.0, 0.0);
            for j in 0..a.ncols() {
                row += a[(i, j)] * b[(j, i)];
            }
            acc += row * c64::new(w, 0.0);
        }
        acc
    };
    let mut total = traced(0) + traced(n);
    for k in 1..n {
        let coeff = if k % 2 == 1 { 4.0 } else { 2.0 };
        total += traced(k) * c64::new(coeff, 0.0);
    }
    total * c64::new(h / 3.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::identity;

    fn diag_path(
        entries: impl Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> OperatorPath {
        OperatorPath::new(
            move |t| {
                let d = entries(t);
                Mat::from_fn(d.len(), d.len(), |i, j| {
                    if i == j {
                        c64::new(d[i], 0.0)
                    } else {
                        c64::new(0.0, 0.0)
                    }
                })
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn essential_codimension_examples() {
        let p = Mat::from_fn(3, 3, |i, j| {
            if i == 0 && j == 0 {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        assert_eq!(essential_codimension(p.as_ref(), p.as_ref()).unwrap(), 0);

        let zero = Mat::<c64>::zeros(3, 3);
        let q2 = Mat::from_fn(3, 3, |i, j| {
            if i == j && i < 2 {
                c64::new(1.0, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        });
        assert_eq!(essential_codimension(zero.as_ref(), q2.as_ref()).unwrap(), 2);

        // Q projects onto span{(e1 + e2)/sqrt(2), e3}.
        let mut q = Mat::<c64>::zeros(3, 3);
        for (i, j, v) in [
            (0, 0, 0.5),
            (0, 1, 0.5),
            (1, 0, 0.5),
            (1, 1, 0.5),
            (2, 2, 1.0),
        ] {
            q[(i, j)] = c64::new(v, 0.0);
        }
        assert_eq!(essential_codimension(p.as_ref(), q.as_ref()).unwrap(), 1);
    }

    #[test]
    fn essential_codimension_rejects_non_projections() {
        let m = Mat::from_fn(2, 2, |i, j| c64::new((i + j) as f64, 0.0));
        assert!(matches!(
            essential_codimension(m.as_ref(), m.as_ref()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn single_crossing_scalar_path() {
        let path = diag_path(|t| vec![2.0 * t - 1.0]);
        for method in [FlowMethod::Crossings, FlowMethod::Winding] {
            let report = spectral_flow(&path, method).unwrap();
            assert_eq!(report.flow, 1, "{method:?}");
            assert_eq!(
                report.crossings.iter().map(|c| c.direction).sum::<i64>(),
                report.flow
            );
        }
        let down = diag_path(|t| vec![1.0 - 2.0 * t]);
        for method in [FlowMethod::Crossings, FlowMethod::Winding] {
            assert_eq!(spectral_flow(&down, method).unwrap().flow, -1);
        }
    }

    #[test]
    fn constant_invertible_path_has_no_flow() {
        let path = diag_path(|_| vec![1.0, -2.0, 0.5]);
        for method in [FlowMethod::Crossings, FlowMethod::Winding] {
            let report = spectral_flow(&path, method).unwrap();
            assert_eq!(report.flow, 0);
            assert!(report.crossings.is_empty());
        }
    }

    #[test]
    fn direct_sum_adds_flows() {
        let up_up_down = diag_path(|t| vec![2.0 * t - 1.0, 2.0 * t - 1.0, 1.0 - 2.0 * t]);
        for method in [FlowMethod::Crossings, FlowMethod::Winding] {
            assert_eq!(spectral_flow(&up_up_down, method).unwrap().flow, 1);
        }
    }

    #[test]
    fn rotating_frame_crossing() {
        // A 2x2 path whose eigenbasis rotates while one eigenvalue crosses.
        let path = OperatorPath::new(
            |t| {
                let theta = 0.7 * t;
                let (c, s) = (theta.cos(), theta.sin());
                let rot = Mat::from_fn(2, 2, |i, j| match (i, j) {
                    (0, 0) => c64::new(c, 0.0),
                    (0, 1) => c64::new(-s, 0.1 * s),
                    (1, 0) => c64::new(s, 0.1 * s),
                    _ => c64::new(c, 0.0),
                });
                // Normalize the columns so the frame is exactly unitary.
                let col = |j: usize| {
                    (rot[(0, j)].norm_sqr() + rot[(1, j)].norm_sqr()).sqrt()
                };
                let u = Mat::from_fn(2, 2, |i, j| rot[(i, j)] * c64::new(1.0 / col(j), 0.0));
                let d = Mat::from_fn(2, 2, |i, j| {
                    if i != j {
                        c64::new(0.0, 0.0)
                    } else if i == 0 {
                        c64::new(2.0 * t - 1.0, 0.0)
                    } else {
                        c64::new(1.5, 0.0)
                    }
                });
                &u * &d * u.adjoint()
            },
            5,
        )
        .unwrap();
        let crossings = spectral_flow(&path, FlowMethod::Crossings).unwrap();
        let winding = spectral_flow(&path, FlowMethod::Winding).unwrap();
        assert_eq!(crossings.flow, 1);
        assert_eq!(winding.flow, 1);
    }

    #[test]
    fn straight_line_examples() {
        let one = HermitianOperator::untagged(identity(1)).unwrap();
        assert_eq!(straight_line_flow(&one, &one).unwrap(), 0);

        let minus = HermitianOperator::untagged(Mat::from_fn(1, 1, |_, _| {
            c64::new(-1.0, 0.0)
        }))
        .unwrap();
        assert_eq!(straight_line_flow(&minus, &one).unwrap(), 1);
        assert_eq!(straight_line_flow(&one, &minus).unwrap(), -1);
    }

    #[test]
    fn mass_flip_examples() {
        let zero_map = GeneralOperator::new(Mat::<c64>::zeros(1, 2));
        assert_eq!(index_via_mass_flip(&zero_map, 1.0).unwrap(), 1);

        let invertible = GeneralOperator::new(Mat::from_fn(2, 2, |i, j| {
            c64::new(if i == j { 2.0 } else { 0.3 }, 0.1 * (i as f64 - j as f64))
        }));
        assert_eq!(index_via_mass_flip(&invertible, 1.0).unwrap(), 0);

        // 3x2 of rank 1: dim ker T = 1, dim ker T* = 2.
        let rank1 = GeneralOperator::new(Mat::from_fn(3, 2, |i, j| {
            c64::new((i + 1) as f64 * (j + 1) as f64, 0.0)
        }));
        assert_eq!(index_via_mass_flip(&rank1, 0.7).unwrap(), -1);
    }

    #[test]
    fn cocycle_reference_loop() {
        let n = 512;
        let u: Vec<Mat<c64>> = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                Mat::from_fn(1, 1, |_, _| c64::new(0.0, 2.0 * PI * t).exp())
            })
            .collect();
        let f1: Vec<Mat<c64>> = u
            .iter()
            .map(|m| Mat::from_fn(1, 1, |_, _| m[(0, 0)].conj() - c64::new(1.0, 0.0)))
            .collect();
        let f2: Vec<Mat<c64>> = u
            .iter()
            .map(|m| Mat::from_fn(1, 1, |_, _| m[(0, 0)] - c64::new(1.0, 0.0)))
            .collect();
        let raw = winding_cocycle(&f1, &f2, None, 1e-6).unwrap();
        assert!((raw - c64::new(COCYCLE_PER_UNIT_WINDING, 0.0)).norm() < 1e-6);
        assert_eq!(
            winding_integer(raw / c64::new(COCYCLE_PER_UNIT_WINDING, 0.0), 1e-6).unwrap(),
            1
        );

        // Trace additivity: the doubled loop winds twice as far.
        let f1d: Vec<Mat<c64>> = f1
            .iter()
            .map(|m| linalg::direct_sum(m.as_ref(), m.as_ref()))
            .collect();
        let f2d: Vec<Mat<c64>> = f2
            .iter()
            .map(|m| linalg::direct_sum(m.as_ref(), m.as_ref()))
            .collect();
        let doubled = winding_cocycle(&f1d, &f2d, None, 1e-6).unwrap();
        assert!((doubled - raw * c64::new(2.0, 0.0)).norm() < 2e-6);
    }

    #[test]
    fn cocycle_constant_paths_vanish() {
        let c: Vec<Mat<c64>> = (0..=8)
            .map(|_| Mat::from_fn(2, 2, |i, j| c64::new(i as f64, j as f64)))
            .collect();
        let raw = winding_cocycle(&c, &c, None, 1e-9).unwrap();
        assert!(raw.norm() < 1e-12);
    }

    #[test]
    fn cocycle_respects_trace_weights() {
        let n = 512;
        let u: Vec<Mat<c64>> = (0..=n)
            .map(|k| {
                let t = k as f64 / n as f64;
                Mat::from_fn(2, 2, |i, j| {
                    if i != j {
                        c64::new(0.0, 0.0)
                    } else if i == 0 {
                        c64::new(0.0, 2.0 * PI * t).exp() - c64::new(1.0, 0.0)
                    } else {
                        c64::new(0.0, 0.0)
                    }
                })
            })
            .collect();
        let conj: Vec<Mat<c64>> = u.iter().map(|m| m.adjoint().to_owned()).collect();
        let weights = TraceWeights::new(vec![0.5, 3.0]).unwrap();
        let raw = winding_cocycle(&conj, &u, Some(&weights), 1e-6).unwrap();
        // Only the first diagonal entry moves, so the weighted cocycle is
        // half the reference value.
        assert!((raw - c64::new(0.5 * COCYCLE_PER_UNIT_WINDING, 0.0)).norm() < 1e-6);
    }

    #[test]
    fn endpoint_singularity_is_rejected() {
        let res = OperatorPath::new(
            |t| Mat::from_fn(1, 1, |_, _| c64::new(t, 0.0)),
            5,
        );
        assert!(matches!(res, Err(Error::GapFailure { .. })));
    }

    #[test]
    fn declared_gap_is_verified() {
        let ok = OperatorPath::with_endpoint_gap(
            |t| Mat::from_fn(1, 1, |_, _| c64::new(2.0 * t - 1.0, 0.0)),
            5,
            0.9,
        );
        assert!(ok.is_ok());
        let too_large = OperatorPath::with_endpoint_gap(
            |t| Mat::from_fn(1, 1, |_, _| c64::new(2.0 * t - 1.0, 0.0)),
            5,
            1.5,
        );
        assert!(matches!(too_large, Err(Error::GapFailure { .. })));
    }

    #[test]
    fn interior_exact_zero_gets_bonus_refinement() {
        // t = 0.5 is an initial sample (5 uniform samples) and the eigenvalue
        // vanishes there exactly.
        let path = diag_path(|t| vec![2.0 * t - 1.0, 3.0]);
        let report = spectral_flow(&path, FlowMethod::Crossings).unwrap();
        assert_eq!(report.flow, 1);
        assert!(report.refinements >= 1);
        let width: f64 = report
            .crossings
            .iter()
            .map(|c| c.interval.1 - c.interval.0)
            .sum();
        assert!(width < 0.25, "crossing not localized: width {width}");
    }

    #[test]
    fn interior_zero_plateau_counts_with_kernel_convention() {
        // The eigenvalue sits exactly at zero on [0.4, 0.6]; the kernel is
        // counted as nonnegative, so the flow registers where the eigenvalue
        // enters the plateau from below.
        let path = OperatorPath::new(
            |t| {
                let plateau = ((t - 0.5).abs() - 0.1).max(0.0);
                let sign = (t - 0.5).signum();
                Mat::from_fn(1, 1, |_, _| c64::new(sign * plateau, 0.0))
            },
            5,
        )
        .unwrap();
        let report = spectral_flow(&path, FlowMethod::Crossings).unwrap();
        assert_eq!(report.flow, 1);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        // A pair of eigenvalues separated by 1e-9 moves by order one across
        // every subinterval, so the relabeling criterion keeps subdividing
        // until the budget stops it with an explicit error.
        let path = diag_path(|t| vec![2.0 * t - 1.0, 2.0 * t - 1.0 + 1e-9]);
        match spectral_flow(&path, FlowMethod::Crossings) {
            Err(Error::RefinementBudget { evaluations }) => {
                assert!(evaluations >= FLOW_EVAL_BUDGET)
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
