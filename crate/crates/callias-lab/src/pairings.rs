//! K-theoretic pairings: the odd index pairing through localizer signatures,
//! noncommutative winding traces, Chern numbers, boundary invariants, chiral
//! projections, skew-corner indices and the even pairing.

use std::f64::consts::PI;

use faer::{c64, Mat, MatRef};

use crate::calculus::{
    apply_function, check_asymptotic_invertibility, potential_unitary, SwitchFunction,
};
use crate::error::{Error, Result};
use crate::flow::COCYCLE_PER_UNIT_WINDING;
use crate::linalg;
use crate::localizer::{
    compress_matrix_to_window, signature_index_odd, window_basis_indices, OddCalliasSetup,
    SignatureDiagnostics,
};
use crate::operators::{
    displacement_commutator, weighted_trace, GeneralOperator, HermitianOperator, LatticeModel,
    TraceWeights,
};

/// Entries classified as "supported" or "leaking" against this threshold.
pub const SUPPORT_TOL: f64 = 1e-8;

/// Unitarity and idempotency tolerance for pairing inputs.
pub const PAIRING_INPUT_TOL: f64 = 1e-10;

/// Chirality-compatibility tolerance: J H J must equal -H this closely.
pub const CHIRALITY_TOL: f64 = 1e-10;

/// Minimal spectral gap of compressed even-pairing endpoints.
pub const EVEN_ENDPOINT_GAP_FLOOR: f64 = 1e-8;

/// S = J e^{i pi G(H)} together with P = (1 - S)/2 and the grading.
#[derive(Debug, Clone)]
pub struct ChiralProjectionData {
    pub s: HermitianOperator,
    pub p: Mat<c64>,
    pub j: Mat<c64>,
}

impl ChiralProjectionData {
    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

/// Builds the self-adjoint unitary S two ways — J e^{i pi G(H)} and the
/// conjugation e^{-i pi G(H)/2} J e^{i pi G(H)/2} — and returns P = (1-S)/2
/// after checking that both agree.
pub fn chiral_projection(
    h: &HermitianOperator,
    j: &HermitianOperator,
    g: &SwitchFunction,
) -> Result<ChiralProjectionData> {
    let n = h.dim();
    if j.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "grading dimension {} vs operator dimension {n}",
            j.dim()
        )));
    }
    let jm = j.matrix().to_owned();
    let jsq = (&jm * &jm - linalg::identity(n)).norm_max();
    if jsq > PAIRING_INPUT_TOL {
        return Err(Error::InvalidArgument(format!(
            "grading is not a Hermitian unitary (J^2 deviation {jsq:.3e})"
        )));
    }
    let hm = h.matrix().to_owned();
    let anti = (&jm * &hm * &jm + &hm).norm_max();
    if anti > CHIRALITY_TOL * hm.norm_max().max(1.0) {
        return Err(Error::Precondition(format!(
            "operator is not chiral: ||J H J + H|| = {anti:.3e}"
        )));
    }
    let full = apply_function(h, |l| c64::new(0.0, PI * g.eval(l)).exp())?;
    let half = apply_function(h, |l| c64::new(0.0, 0.5 * PI * g.eval(l)).exp())?;
    let s_product = &jm * &full.matrix;
    let s_conjugated = half.matrix.adjoint() * &jm * &half.matrix;
    let disagreement = (&s_product - &s_conjugated).norm_max();
    if disagreement > PAIRING_INPUT_TOL {
        return Err(Error::Precondition(format!(
            "the two chiral-unitary formulas disagree by {disagreement:.3e}"
        )));
    }
    let s = HermitianOperator::untagged(linalg::hermitian_part(s_product.as_ref()))?;
    let s_unitary = (s.matrix() * s.matrix() - linalg::identity(n)).norm_max();
    if s_unitary > PAIRING_INPUT_TOL {
        return Err(Error::Precondition(format!(
            "S fails to square to the identity by {s_unitary:.3e}"
        )));
    }
    let p = Mat::from_fn(n, n, |r, c| {
        let id = if r == c { 1.0 } else { 0.0 };
        (c64::new(id, 0.0) - s.matrix()[(r, c)]) * c64::new(0.5, 0.0)
    });
    let idem = (&p * &p - &p).norm_max();
    if idem > PAIRING_INPUT_TOL {
        return Err(Error::Precondition(format!(
            "P = (1 - S)/2 fails idempotency by {idem:.3e}"
        )));
    }
    Ok(ChiralProjectionData {
        s,
        p,
        j: jm,
    })
}

/// Mass scale handed to the signature engine by the odd pairing.
pub const ODD_PAIRING_MASS: f64 = 0.05;

/// The switch exponential of the witness must reproduce U this closely.
pub const WITNESS_TOL: f64 = 1e-8;

/// Outcome of the odd localizer pairing.
#[derive(Debug, Clone)]
pub struct OddPairingReport {
    pub index: i64,
    pub partner_signature: i64,
    pub smallness: f64,
    pub witness_deviation: f64,
    pub kappa_used: f64,
    pub diagnostics: SignatureDiagnostics,
}

/// Index pairing of a unitary U with the half-space projection of D.
///
/// The literal two-by-two pairing matrix [[kappa D, U*], [U, -kappa D]] has
/// identically zero signature after any window compression whenever D has
/// purely imaginary entries and U is a site-diagonal phase: conjugation by
/// (sigma_2 tensor 1) composed with entrywise conjugation sends the matrix to
/// its negative transpose, so its spectrum is symmetric. A finite-volume
/// evaluation therefore has to go through the logarithm of U. The caller
/// supplies the Hermitian witness potential whose switch exponential
/// e^{i pi (G(H) + 1)} equals U; the relation is verified entrywise and the
/// index is the mass-flip signature of the localizer built on (D, H), which
/// is the functional that survives truncation. The preconditions are checked
/// on U itself: unitarity, support of U - 1 inside half the window, the
/// smallness bound kappa ||[D, U]|| < 1, and vanishing of the signature of
/// the trivial partner (U replaced by the identity). The caller's kappa
/// enters only those preconditions: the signature engine runs pinned at half
/// the critical coupling of the witness setup, where the window resolves the
/// localized mode at any wall sharpness, and the result is independent of
/// the coupling by flow invariance.
pub fn odd_index_pairing(
    d: &HermitianOperator,
    u: &GeneralOperator,
    witness: &HermitianOperator,
    g: &SwitchFunction,
    model: &LatticeModel,
    kappa: f64,
    window_radius: i64,
) -> Result<OddPairingReport> {
    let n = model.hilbert_dim();
    if d.dim() != n || u.row_dim() != n || u.col_dim() != n || witness.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "pairing inputs must act on the model space of dimension {n}"
        )));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kappa must be positive, got {kappa}"
        )));
    }
    let um = u.matrix();
    let unitarity = (um.adjoint() * um - linalg::identity(n)).norm_max();
    if unitarity > PAIRING_INPUT_TOL {
        return Err(Error::InvalidArgument(format!(
            "U is not unitary (deviation {unitarity:.3e})"
        )));
    }
    // U - 1 must live strictly inside the window.
    let interior = window_radius / 2;
    let mut leak = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let outside = model.site_radius(model.site_of_basis(i)) > interior
                || model.site_radius(model.site_of_basis(j)) > interior;
            if !outside {
                continue;
            }
            let mut v = um[(i, j)];
            if i == j {
                v -= c64::new(1.0, 0.0);
            }
            leak = leak.max(v.norm());
        }
    }
    if leak > SUPPORT_TOL {
        return Err(Error::WindowTooSmall(format!(
            "U - 1 leaks outside the window interior (radius {interior}) by {leak:.3e}"
        )));
    }
    let dm = d.matrix();
    let comm = dm * um - um * dm;
    let smallness = kappa * linalg::operator_norm(comm.as_ref());
    if smallness >= 1.0 {
        return Err(Error::Precondition(format!(
            "kappa * ||[D, U]|| = {smallness:.3} must stay below 1"
        )));
    }
    let rebuilt = potential_unitary(witness, g)?;
    let witness_deviation = (rebuilt.matrix() - um).norm_max();
    if witness_deviation > WITNESS_TOL {
        return Err(Error::Precondition(format!(
            "witness potential does not generate U: deviation {witness_deviation:.3e}"
        )));
    }

    // Structural check of the window: the pairing matrix with U set to the
    // identity must have signature zero.
    let dw = compress_matrix_to_window(dm, model, window_radius)?;
    let nk = dw.matrix.nrows();
    let kd = Mat::from_fn(nk, nk, |i, j| dw.matrix[(i, j)] * c64::new(kappa, 0.0));
    let neg_kd = Mat::from_fn(nk, nk, |i, j| -kd[(i, j)]);
    let partner = linalg::block2(
        kd.as_ref(),
        linalg::identity(nk).as_ref(),
        linalg::identity(nk).as_ref(),
        neg_kd.as_ref(),
    );
    let zero_tol = 1e-10 * partner.norm_max().max(1.0);
    let (partner_counts, _) = linalg::inertia(partner.as_ref(), zero_tol)?;
    let partner_signature = partner_counts.signature();
    if partner_signature != 0 {
        return Err(Error::Precondition(format!(
            "trivial partner localizer has signature {partner_signature}, expected 0"
        )));
    }

    let mask: Vec<usize> = (0..model.n_sites())
        .filter(|&s| model.site_radius(s) <= interior)
        .collect();
    let cert = check_asymptotic_invertibility(witness, model, &mask, 2)?;
    let setup = OddCalliasSetup::new(
        d.clone(),
        witness.clone(),
        model.clone(),
        kappa,
        cert,
        0.0,
    )?;
    // Half the critical coupling, capped at a lattice-scale value for the
    // degenerate case of a witness commuting with D (constant potential).
    let kappa_used = (0.5 * setup.kappa0_bounded()).min(10.0 / model.spacing.max(1e-12));
    let setup = setup.with_kappa(kappa_used)?;
    let (index, diagnostics) = signature_index_odd(&setup, window_radius, ODD_PAIRING_MASS)?;
    Ok(OddPairingReport {
        index,
        partner_signature,
        smallness,
        witness_deviation,
        kappa_used,
        diagnostics,
    })
}

/// Outcome of the noncommutative winding trace.
#[derive(Debug, Clone)]
pub struct NcWindingReport {
    pub raw: c64,
    pub normalized: c64,
    pub integer: i64,
    pub distance: f64,
}

/// Weighted trace of (1 - U*)[D, U], normalized by the same calibration
/// constant as the flow cocycle.
///
/// The plain matrix trace of a commutator expression vanishes identically by
/// cyclicity, so the trace functional has to break cyclicity the same way the
/// underlying semifinite trace does. Two realizations are provided, selected
/// by the tags of D:
///
/// * derivative mode (untagged axis): U must be a multiplication-type
///   (site-block-diagonal) unitary; the row sums of [D, U] recover the
///   derivative of the symbol of U, and the functional integrates the fiber
///   trace of (1 - u*) u' over the lattice. With weights equal to the
///   spacing this reproduces the flow cocycle on the reference loop.
/// * position mode (D tagged with an axis): [D, U] is taken as the wrapped
///   displacement commutator on a periodic axis, and the functional is the
///   literal weighted diagonal sum, which the wrapping keeps from collapsing.
pub fn nc_winding(
    u: &GeneralOperator,
    d: &HermitianOperator,
    model: &LatticeModel,
    weights: &TraceWeights,
) -> Result<NcWindingReport> {
    let n = model.hilbert_dim();
    if u.row_dim() != n || u.col_dim() != n || d.dim() != n {
        return Err(Error::DimensionMismatch(format!(
            "winding inputs must act on the model space of dimension {n}"
        )));
    }
    let um = u.matrix();
    let unitarity = (um.adjoint() * um - linalg::identity(n)).norm_max();
    if unitarity > PAIRING_INPUT_TOL {
        return Err(Error::InvalidArgument(format!(
            "U is not unitary (deviation {unitarity:.3e})"
        )));
    }
    let one_minus_ua = Mat::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        c64::new(id, 0.0) - um[(j, i)].conj()
    });

    let integrand = if let Some(axis) = d.tags.axis {
        let comm = if model.axis_periodic(axis) {
            displacement_commutator(model, axis, um)
        } else {
            let dm = d.matrix();
            dm * um - um * dm
        };
        &one_minus_ua * &comm
    } else {
        // Multiplication-type U: fiber blocks off the site diagonal must
        // vanish for the symbol calculus to apply.
        let f = model.fiber_dim;
        let sites = model.n_sites();
        let mut off_site = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                if i / f != j / f {
                    off_site = off_site.max(um[(i, j)].norm());
                }
            }
        }
        if off_site > SUPPORT_TOL {
            return Err(Error::Precondition(format!(
                "derivative-mode winding needs a multiplication-type unitary; \
                 off-site entries reach {off_site:.3e}"
            )));
        }
        let dm = d.matrix();
        let comm = dm * um - um * dm;
        // Row sums of the commutator blocks recover the derivative of the
        // symbol; (1 - u*) is block diagonal, so the integrand closes to a
        // block-diagonal matrix.
        let mut deriv = Mat::<c64>::zeros(n, n);
        for site in 0..sites {
            for a in 0..f {
                for b in 0..f {
                    let mut row_sum = c64::new(0.0, 0.0);
                    for other in 0..sites {
                        row_sum += comm[(site * f + a, other * f + b)];
                    }
                    deriv[(site * f + a, site * f + b)] = row_sum;
                }
            }
        }
        let mut m = Mat::<c64>::zeros(n, n);
        for site in 0..sites {
            for a in 0..f {
                for b in 0..f {
                    let mut full = c64::new(0.0, 0.0);
                    for c in 0..f {
                        full += one_minus_ua[(site * f + a, site * f + c)]
                            * deriv[(site * f + c, site * f + b)];
                    }
                    m[(site * f + a, site * f + b)] = full;
                }
            }
        }
        m
    };

    // The integrand must have decayed before the open-boundary truncation.
    let mut edge_leak = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if on_truncation_edge(model, i) || on_truncation_edge(model, j) {
                edge_leak = edge_leak.max(integrand[(i, j)].norm());
            }
        }
    }
    if edge_leak > SUPPORT_TOL {
        return Err(Error::Precondition(format!(
            "winding integrand reaches the truncation edge at {edge_leak:.3e}"
        )));
    }

    let raw = weighted_trace(integrand.as_ref(), weights)?;
    let normalized = raw / c64::new(COCYCLE_PER_UNIT_WINDING, 0.0);
    let integer = normalized.re.round() as i64;
    let distance = (normalized - c64::new(integer as f64, 0.0)).norm();
    Ok(NcWindingReport {
        raw,
        normalized,
        integer,
        distance,
    })
}

fn on_truncation_edge(model: &LatticeModel, basis: usize) -> bool {
    let raw = model.site_raw(model.site_of_basis(basis));
    (0..model.dim).any(|axis| {
        !model.axis_periodic(axis) && (raw[axis] == 0 || raw[axis] + 1 == model.extents[axis])
    })
}

/// Outcome of the Chern trace formula.
#[derive(Debug, Clone)]
pub struct ChernReport {
    pub value: f64,
    pub integer: i64,
    pub distance: f64,
    pub imaginary: f64,
}

/// 2 pi i times the weighted trace of P [[X1, P], [X2, P]]. Position
/// commutators use the minimum-image displacement when the position operator
/// is tagged with a periodic model, and the literal commutator otherwise.
pub fn chern_number(
    p: &GeneralOperator,
    x1: &HermitianOperator,
    x2: &HermitianOperator,
    weights: &TraceWeights,
) -> Result<ChernReport> {
    let n = p.row_dim();
    if p.col_dim() != n || x1.dim() != n || x2.dim() != n {
        return Err(Error::DimensionMismatch(
            "Chern inputs must share one square dimension".into(),
        ));
    }
    let pm = p.matrix();
    let herm = linalg::herm_deviation(pm);
    let idem = (pm * pm - pm.to_owned()).norm_max();
    if herm > 1e-8 || idem > 1e-8 {
        return Err(Error::InvalidArgument(format!(
            "P is not a projection (hermiticity {herm:.3e}, idempotency {idem:.3e})"
        )));
    }
    let c1 = position_commutator(x1, pm)?;
    let c2 = position_commutator(x2, pm)?;
    let bracket = &c1 * &c2 - &c2 * &c1;
    let k = pm * bracket.as_ref();
    let tau = weighted_trace(k.as_ref(), weights)?;
    let value = tau * c64::new(0.0, 2.0 * PI);
    let integer = value.re.round() as i64;
    Ok(ChernReport {
        value: value.re,
        integer,
        distance: (value.re - integer as f64).abs(),
        imaginary: value.im,
    })
}

fn position_commutator(x: &HermitianOperator, a: MatRef<'_, c64>) -> Result<Mat<c64>> {
    if let (Some(model), Some(axis)) = (&x.tags.model, x.tags.axis) {
        if model.hilbert_dim() == a.nrows() && model.axis_periodic(axis) {
            return Ok(displacement_commutator(model, axis, a));
        }
    }
    let xm = x.matrix();
    Ok(xm * a - a * xm)
}

/// Boundary data for the two invariant modes.
pub enum BoundaryData<'a> {
    /// Two invertible Hermitian fiber matrices at the ends of a line.
    Endpoints1d {
        minus: MatRef<'a, c64>,
        plus: MatRef<'a, c64>,
    },
    /// A closed loop of invertible chiral-symmetric fiber matrices, sampled
    /// uniformly without repeating the start, plus the grading.
    Loop2d {
        samples: &'a [Mat<c64>],
        grading: MatRef<'a, c64>,
    },
}

/// Signature jump across a line (half the endpoint signature difference) or
/// the phase winding of the off-diagonal block around a loop.
pub fn boundary_invariant(data: BoundaryData<'_>) -> Result<i64> {
    match data {
        BoundaryData::Endpoints1d { minus, plus } => {
            let sig = |m: MatRef<'_, c64>, label: &str| -> Result<i64> {
                let dev = linalg::herm_deviation(m);
                if dev > PAIRING_INPUT_TOL * m.norm_max().max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "{label} boundary matrix is not Hermitian (deviation {dev:.3e})"
                    )));
                }
                let vals = linalg::eigh_values(m)?;
                let scale = vals.iter().fold(1.0f64, |a, &l| a.max(l.abs()));
                if vals.iter().any(|&l| l.abs() <= 1e-10 * scale) {
                    return Err(Error::Precondition(format!(
                        "{label} boundary matrix is singular"
                    )));
                }
                Ok(vals.iter().map(|&l| if l > 0.0 { 1 } else { -1 }).sum())
            };
            let delta = sig(plus, "right")? - sig(minus, "left")?;
            debug_assert_eq!(delta % 2, 0);
            Ok(delta / 2)
        }
        BoundaryData::Loop2d { samples, grading } => loop_winding(samples, grading),
    }
}

fn loop_winding(samples: &[Mat<c64>], grading: MatRef<'_, c64>) -> Result<i64> {
    if samples.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a loop needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    let n = grading.nrows();
    let gm = grading.to_owned();
    if (&gm * &gm - linalg::identity(n)).norm_max() > PAIRING_INPUT_TOL
        || linalg::herm_deviation(grading) > PAIRING_INPUT_TOL
    {
        return Err(Error::InvalidArgument(
            "loop grading must be a Hermitian unitary".into(),
        ));
    }
    let (jvals, jvecs) = linalg::eigh(grading)?;
    let n_minus = jvals.iter().filter(|&&l| l < 0.0).count();
    let n_plus = n - n_minus;
    if n_plus != n_minus {
        return Err(Error::InvalidArgument(format!(
            "loop grading must balance: {n_plus} positive vs {n_minus} negative directions"
        )));
    }
    // Columns of jvecs are ordered by ascending eigenvalue: the negative
    // chirality block comes first.
    let v_minus = Mat::from_fn(n, n_minus, |i, j| jvecs[(i, j)]);
    let v_plus = Mat::from_fn(n, n_plus, |i, j| jvecs[(i, j + n_minus)]);

    let mut dets = Vec::with_capacity(samples.len());
    for (k, q) in samples.iter().enumerate() {
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "loop sample {k} has shape {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        let anti = (&gm * q * &gm + q).norm_max();
        if anti > CHIRALITY_TOL * q.norm_max().max(1.0) {
            return Err(Error::Precondition(format!(
                "loop sample {k} is not chiral-symmetric (deviation {anti:.3e})"
            )));
        }
        let off = v_minus.adjoint() * q * &v_plus;
        let det = det_dense(off.as_ref());
        if det.norm() <= 1e-12 {
            return Err(Error::Precondition(format!(
                "loop sample {k} is singular"
            )));
        }
        dets.push(det);
    }
    let mut total = 0.0f64;
    for k in 0..dets.len() {
        let next = dets[(k + 1) % dets.len()];
        let step = (next / dets[k]).arg();
        if step.abs() > 0.5 * PI {
            return Err(Error::Precondition(format!(
                "loop sampling too coarse: phase step {step:.3} at sample {k}"
            )));
        }
        total += step;
    }
    let winding = total / (2.0 * PI);
    let nearest = winding.round();
    if (winding - nearest).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "loop phase accumulation {winding:.9} is not an integer"
        )));
    }
    Ok(nearest as i64)
}

/// Determinant by Gaussian elimination with partial pivoting; boundary fiber
/// matrices are small, so dense elimination is exact enough.
fn det_dense(a: MatRef<'_, c64>) -> c64 {
    let n = a.nrows();
    let mut m = a.to_owned();
    let mut det = c64::new(1.0, 0.0);
    for k in 0..n {
        let mut piv = k;
        for r in k + 1..n {
            if m[(r, k)].norm() > m[(piv, k)].norm() {
                piv = r;
            }
        }
        if m[(piv, k)].norm() == 0.0 {
            return c64::new(0.0, 0.0);
        }
        if piv != k {
            for c in 0..n {
                let tmp = m[(k, c)];
                m[(k, c)] = m[(piv, c)];
                m[(piv, c)] = tmp;
            }
            det = -det;
        }
        det *= m[(k, k)];
        for r in k + 1..n {
            let f = m[(r, k)] / m[(k, k)];
            for c in k..n {
                let sub = f * m[(k, c)];
                m[(r, c)] -= sub;
            }
        }
    }
    det
}

/// dim(Ker T ∩ ran Q) − dim(Ker T* ∩ ran P) for a corner element T = P T Q,
/// through numerical ranks at the given threshold.
pub fn skew_corner_index(
    t: &GeneralOperator,
    p: MatRef<'_, c64>,
    q: MatRef<'_, c64>,
    tol: f64,
) -> Result<i64> {
    let n = t.row_dim();
    if t.col_dim() != n || p.nrows() != n || p.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch(
            "skew-corner inputs must share one square dimension".into(),
        ));
    }
    for (m, label) in [(p, "P"), (q, "Q")] {
        let mm = m.to_owned();
        let herm = linalg::herm_deviation(m);
        let idem = (&mm * &mm - &mm).norm_max();
        if herm > PAIRING_INPUT_TOL || idem > PAIRING_INPUT_TOL {
            return Err(Error::InvalidArgument(format!(
                "{label} is not a projection (hermiticity {herm:.3e}, idempotency {idem:.3e})"
            )));
        }
    }
    let tm = t.matrix();
    let corner = (p * tm * q - tm.to_owned()).norm_max();
    if corner > tol.max(PAIRING_INPUT_TOL) * tm.norm_max().max(1.0) {
        return Err(Error::Precondition(format!(
            "T is not a P-Q corner element: ||P T Q - T|| = {corner:.3e}"
        )));
    }
    let rank_p = linalg::rank_with_tol(p, tol)? as i64;
    let rank_q = linalg::rank_with_tol(q, tol)? as i64;
    let tq = tm * q;
    let tap = tm.adjoint() * p;
    let ker_t_in_q = rank_q - linalg::rank_with_tol(tq.as_ref(), tol)? as i64;
    let ker_ta_in_p = rank_p - linalg::rank_with_tol(tap.as_ref(), tol)? as i64;
    Ok(ker_t_in_q - ker_ta_in_p)
}

/// Outcome of the even pairing.
#[derive(Debug, Clone)]
pub struct EvenPairingReport {
    pub index: i64,
    pub endpoint_gap: f64,
    pub window_dim: usize,
}

/// Even pairing of the chiral projections against the phase F of the Dirac
/// factor: the flow between the compressed involutions 1 - 2 P_minus and
/// Sigma (1 - 2 P_plus) Sigma with Sigma = [[0, F*], [F, 0]]. The flow of
/// the straight line between them telescopes to the difference of
/// nonnegative eigenvalue counts, which is evaluated directly.
pub fn even_pairing(
    p_plus: &ChiralProjectionData,
    p_minus: &ChiralProjectionData,
    f: &GeneralOperator,
    model: &LatticeModel,
    window_radius: i64,
) -> Result<EvenPairingReport> {
    let m = f.row_dim();
    if f.col_dim() != m {
        return Err(Error::DimensionMismatch("phase F must be square".into()));
    }
    let fm = f.matrix();
    let unitarity = (fm.adjoint() * fm - linalg::identity(m)).norm_max();
    if unitarity > PAIRING_INPUT_TOL {
        return Err(Error::Precondition(format!(
            "F is not unitary (deviation {unitarity:.3e}); take the polar phase of an invertible Dirac factor"
        )));
    }
    let two_m = 2 * m;
    if p_plus.dim() != two_m || p_minus.dim() != two_m {
        return Err(Error::DimensionMismatch(format!(
            "chiral projections act on dimension {} but F doubles to {two_m}",
            p_plus.dim()
        )));
    }
    let n = model.hilbert_dim();
    if m % n != 0 {
        return Err(Error::DimensionMismatch(format!(
            "phase dimension {m} is not a multiple of the model dimension {n}"
        )));
    }
    let blocks = two_m / n;

    let involution = |p: &Mat<c64>| {
        Mat::from_fn(two_m, two_m, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            c64::new(id, 0.0) - p[(i, j)] * c64::new(2.0, 0.0)
        })
    };
    let a = involution(&p_minus.p);
    let inner = involution(&p_plus.p);
    // Sigma (1 - 2P) Sigma with Sigma = [[0, F*], [F, 0]] in m x m blocks.
    let block = |r: usize, c: usize| -> Mat<c64> {
        Mat::from_fn(m, m, |i, j| inner[(r * m + i, c * m + j)])
    };
    let (i00, i01, i10, i11) = (block(0, 0), block(0, 1), block(1, 0), block(1, 1));
    let fa = fm.adjoint().to_owned();
    let b00 = &fa * &i11 * fm;
    let b01 = &fa * &i10 * &fa;
    let b10 = fm * &i01 * fm;
    let b11 = fm * &i00 * &fa;
    let b = linalg::block2(b00.as_ref(), b01.as_ref(), b10.as_ref(), b11.as_ref());

    let kept = window_basis_indices(model, window_radius);
    let nk = kept.len();
    if nk == 0 {
        return Err(Error::WindowTooSmall(format!(
            "window radius {window_radius} keeps no sites"
        )));
    }
    let gather: Vec<usize> = (0..blocks)
        .flat_map(|blk| kept.iter().map(move |&i| blk * n + i))
        .collect();
    let compress = |m2: &Mat<c64>| {
        Mat::from_fn(gather.len(), gather.len(), |i, j| m2[(gather[i], gather[j])])
    };
    let a_hat = compress(&a);
    let b_hat = compress(&b);

    let count_nonneg = |mat: &Mat<c64>, label: &str| -> Result<(usize, f64)> {
        let vals = linalg::eigh_values(mat.as_ref())?;
        let gap = vals.iter().fold(f64::INFINITY, |acc, &l| acc.min(l.abs()));
        if gap < EVEN_ENDPOINT_GAP_FLOOR {
            return Err(Error::GapFailure {
                context: format!("compressed even-pairing endpoint {label}"),
                gap,
                required: EVEN_ENDPOINT_GAP_FLOOR,
            });
        }
        Ok((vals.iter().filter(|&&l| l >= 0.0).count(), gap))
    };
    let (na, gap_a) = count_nonneg(&a_hat, "1 - 2 P_minus")?;
    let (nb, gap_b) = count_nonneg(&b_hat, "Sigma (1 - 2 P_plus) Sigma")?;
    Ok(EvenPairingReport {
        index: nb as i64 - na as i64,
        endpoint_gap: gap_a.min(gap_b),
        window_dim: gather.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::{switch_function, SwitchKind};
    use crate::operators::{build_lattice, dirac_operator, Boundary, DiracMode, OperatorTags};

    fn pauli(k: usize) -> Mat<c64> {
        let z = c64::new(0.0, 0.0);
        let one = c64::new(1.0, 0.0);
        let i = c64::new(0.0, 1.0);
        let rows = match k {
            1 => [[z, one], [one, z]],
            2 => [[z, -i], [i, z]],
            _ => [[one, z], [z, -one]],
        };
        Mat::from_fn(2, 2, |r, c| rows[r][c])
    }

    #[test]
    fn chiral_projection_pauli_example() {
        let h = HermitianOperator::untagged(pauli(1)).unwrap();
        let j = HermitianOperator::untagged(pauli(3)).unwrap();
        let g = switch_function(SwitchKind::ErfBased, 2.0).unwrap();
        let data = chiral_projection(&h, &j, &g).unwrap();
        let minus_j = Mat::from_fn(2, 2, |r, c| -pauli(3)[(r, c)]);
        assert!((data.s.matrix().to_owned() - &minus_j).norm_max() < 1e-12);
        assert!((data.p[(0, 0)] - c64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(data.p[(1, 1)].norm() < 1e-12);

        // A gapped chiral operator always gives S = -J.
        let h2 = HermitianOperator::untagged(Mat::from_fn(2, 2, |r, c| {
            pauli(1)[(r, c)] * c64::new(3.0, 0.0)
        }))
        .unwrap();
        let data2 = chiral_projection(&h2, &j, &g).unwrap();
        assert!((data2.s.matrix().to_owned() - &minus_j).norm_max() < 1e-12);

        // Chirality violation is rejected.
        let bad = HermitianOperator::untagged(pauli(3)).unwrap();
        assert!(chiral_projection(&bad, &j, &g).is_err());
    }

    fn wall_model() -> (LatticeModel, HermitianOperator) {
        let mut model = build_lattice(1, &[101], 1, Boundary::Open).unwrap();
        model.spacing = 0.4;
        let (d, _) = dirac_operator(&model, DiracMode::Slac1d).unwrap();
        (model, d)
    }

    fn wall_switch() -> SwitchFunction {
        switch_function(SwitchKind::ErfBased, 2.0).unwrap()
    }

    fn wall_potential_scaled(
        model: &LatticeModel,
        center: f64,
        up: bool,
        scale: f64,
    ) -> HermitianOperator {
        let n = model.hilbert_dim();
        let h = Mat::from_fn(n, n, |i, j| {
            if i != j {
                return c64::new(0.0, 0.0);
            }
            let x = model.site_coords(model.site_of_basis(i))[0] as f64 * model.spacing;
            let s = if up { 1.0 } else { -1.0 };
            c64::new(1.5 * s * ((x - center) / scale).tanh(), 0.0)
        });
        HermitianOperator::untagged(h).unwrap()
    }

    fn wall_unitary(model: &LatticeModel, center: f64, up: bool) -> GeneralOperator {
        wall_unitary_scaled(model, center, up, 1.2)
    }

    fn wall_unitary_scaled(
        model: &LatticeModel,
        center: f64,
        up: bool,
        scale: f64,
    ) -> GeneralOperator {
        let h = wall_potential_scaled(model, center, up, scale);
        crate::calculus::potential_unitary(&h, &wall_switch()).unwrap()
    }

    #[test]
    fn odd_pairing_trivial_unitary() {
        let (model, d) = wall_model();
        let n = model.hilbert_dim();
        let u = GeneralOperator::new(linalg::identity(n));
        let witness = HermitianOperator::untagged(Mat::from_fn(n, n, |i, j| {
            if i == j {
                c64::new(-1.5, 0.0)
            } else {
                c64::new(0.0, 0.0)
            }
        }))
        .unwrap();
        let g = wall_switch();
        let report = odd_index_pairing(&d, &u, &witness, &g, &model, 0.05, 40).unwrap();
        assert_eq!(report.index, 0);
        assert_eq!(report.partner_signature, 0);
        assert!(report.witness_deviation < 1e-12);
    }

    #[test]
    fn odd_pairing_single_crossing_walls() {
        let (model, d) = wall_model();
        let g = wall_switch();
        for (up, want) in [(true, 1), (false, -1)] {
            let h = wall_potential_scaled(&model, 0.0, up, 1.2);
            let u = crate::calculus::potential_unitary(&h, &g).unwrap();
            for kappa in [0.01, 0.05] {
                let report = odd_index_pairing(&d, &u, &h, &g, &model, kappa, 40).unwrap();
                assert_eq!(report.index, want, "up {up} kappa {kappa}");
                assert_eq!(report.partner_signature, 0);
                assert!(report.witness_deviation < 1e-10);
                assert!(report.smallness < 1.0);
                if report.diagnostics.flagged {
                    println!("warnings: {:?} residual {:.3}", report.diagnostics.warnings, report.diagnostics.mass_residual);
                }
            }
        }
    }

    #[test]
    fn odd_pairing_rejects_bad_inputs() {
        let (model, d) = wall_model();
        let g = wall_switch();
        let h = wall_potential_scaled(&model, 0.0, true, 1.2);
        let u = crate::calculus::potential_unitary(&h, &g).unwrap();
        // Witness generating a different unitary.
        let other = wall_potential_scaled(&model, 0.0, false, 1.2);
        assert!(odd_index_pairing(&d, &u, &other, &g, &model, 0.05, 40).is_err());
        // Coupling violating the smallness bound.
        assert!(odd_index_pairing(&d, &u, &h, &g, &model, 0.2, 40).is_err());
        // Wall shifted outside the window interior.
        let far_h = wall_potential_scaled(&model, 12.0, true, 1.2);
        let far_u = crate::calculus::potential_unitary(&far_h, &g).unwrap();
        assert!(odd_index_pairing(&d, &far_u, &far_h, &g, &model, 0.05, 40).is_err());
    }

    #[test]
    fn probe_nc_winding_single_crossing() {
        let (model, slac) = wall_model();
        let (central, _) = dirac_operator(&model, DiracMode::Derivative1d).unwrap();
        let n = model.hilbert_dim();
        let weights = TraceWeights::new(vec![model.spacing; n]).unwrap();
        for scale in [1.2, 3.0] {
            let u = wall_unitary_scaled(&model, 0.0, true, scale);
            for (label, d) in [("central", &central), ("slac", &slac)] {
                match nc_winding(&u, d, &model, &weights) {
                    Ok(r) => println!(
                        "scale {scale} {label}: normalized {:.6}+{:.2e}i distance {:.3e}",
                        r.normalized.re, r.normalized.im, r.distance
                    ),
                    Err(e) => println!("scale {scale} {label}: {e}"),
                }
            }
        }
        let down = wall_unitary(&model, 0.0, false);
        let rd = nc_winding(&down, &slac, &model, &weights).unwrap();
        println!("down-wall slac normalized {:.6}", rd.normalized.re);
    }

    #[test]
    fn probe_chern_harper() {
        let theta = 2.0 * PI / 3.0;
        let model = build_lattice(2, &[12, 12], 1, Boundary::Periodic).unwrap();
        let (v1, v2) = crate::operators::magnetic_shifts(&model, theta).unwrap();
        let hm = v1.matrix().to_owned() + v1.matrix().adjoint() + v2.matrix().to_owned()
            + v2.matrix().adjoint();
        let h = HermitianOperator::untagged(hm).unwrap();
        let (vals, vecs) = linalg::eigh(h.matrix()).unwrap();
        let ef = -1.366;
        let occ: Vec<usize> = (0..vals.len()).filter(|&k| vals[k] < ef).collect();
        let n = model.hilbert_dim();
        println!("occupied {} of {n}", occ.len());
        let p = Mat::from_fn(n, n, |i, j| {
            occ.iter()
                .map(|&k| vecs[(i, k)] * vecs[(j, k)].conj())
                .fold(c64::new(0.0, 0.0), |a, b| a + b)
        });
        let arc = std::sync::Arc::new(model.clone());
        let x = |axis: usize| {
            HermitianOperator::new(
                crate::operators::position_operator(&model, axis)
                    .unwrap()
                    .into_matrix(),
                OperatorTags {
                    model: Some(arc.clone()),
                    axis: Some(axis),
                    symbol: None,
                },
            )
            .unwrap()
        };
        let weights = TraceWeights::new(vec![1.0 / n as f64; n]).unwrap();
        let report = chern_number(&GeneralOperator::new(p), &x(0), &x(1), &weights).unwrap();
        println!(
            "chern value {:.6} integer {} distance {:.3e} imag {:.3e}",
            report.value, report.integer, report.distance, report.imaginary
        );
    }

    #[test]
    fn boundary_endpoint_examples() {
        let plus = Mat::from_fn(1, 1, |_, _| c64::new(1.0, 0.0));
        let minus = Mat::from_fn(1, 1, |_, _| c64::new(-1.0, 0.0));
        assert_eq!(
            boundary_invariant(BoundaryData::Endpoints1d {
                minus: minus.as_ref(),
                plus: plus.as_ref(),
            })
            .unwrap(),
            1
        );
        let singular = Mat::<c64>::zeros(1, 1);
        assert!(boundary_invariant(BoundaryData::Endpoints1d {
            minus: minus.as_ref(),
            plus: singular.as_ref(),
        })
        .is_err());
    }

    #[test]
    fn boundary_loop_examples() {
        let j = pauli(3);
        for w in [-2i64, -1, 0, 1, 2] {
            let samples: Vec<Mat<c64>> = (0..64)
                .map(|k| {
                    let phi = 2.0 * PI * k as f64 / 64.0;
                    let z = c64::new(0.0, w as f64 * phi).exp();
                    Mat::from_fn(2, 2, |r, c| match (r, c) {
                        (0, 1) => z.conj(),
                        (1, 0) => z,
                        _ => c64::new(0.0, 0.0),
                    })
                })
                .collect();
            assert_eq!(
                boundary_invariant(BoundaryData::Loop2d {
                    samples: &samples,
                    grading: j.as_ref(),
                })
                .unwrap(),
                w,
                "winding {w}"
            );
        }
    }

    #[test]
    fn skew_corner_examples() {
        let n = 3;
        let e = |k: usize| {
            Mat::from_fn(n, n, |i, j| {
                if i == k && j == k {
                    c64::new(1.0, 0.0)
                } else {
                    c64::new(0.0, 0.0)
                }
            })
        };
        let p = e(0);
        let q = &e(0) + &e(1);
        let zero = GeneralOperator::new(Mat::<c64>::zeros(n, n));
        assert_eq!(
            skew_corner_index(&zero, p.as_ref(), q.as_ref(), 1e-8).unwrap(),
            1
        );
        let id = GeneralOperator::new(linalg::identity(n));
        let full = linalg::identity(n);
        assert_eq!(
            skew_corner_index(&id, full.as_ref(), full.as_ref(), 1e-8).unwrap(),
            0
        );
        let t = GeneralOperator::new(e(0));
        assert_eq!(
            skew_corner_index(&t, p.as_ref(), q.as_ref(), 1e-8).unwrap(),
            1
        );
        // Corner-condition violation.
        let off = GeneralOperator::new(e(2));
        assert!(skew_corner_index(&off, p.as_ref(), q.as_ref(), 1e-8).is_err());
    }

    #[test]
    fn probe_even_pairing_vortex() {
        let l = 25usize;
        let mut model = build_lattice(2, &[l, l], 1, Boundary::Open).unwrap();
        model.spacing = 0.25;
        let n = model.hilbert_dim();
        // D0 = Dx + i Dy from the doubler-free axis derivatives.
        let dx = axis_slac(&model, 0);
        let dy = axis_slac(&model, 1);
        let d0 = Mat::from_fn(n, n, |i, j| dx[(i, j)] + dy[(i, j)] * c64::new(0.0, 1.0));
        for w in [1i32, 0, -1] {
            let t = Mat::from_fn(n, n, |i, j| {
                if i != j {
                    return c64::new(0.0, 0.0);
                }
                let c = model.site_coords(model.site_of_basis(i));
                let z = c64::new(
                    c[0] as f64 * model.spacing,
                    c[1] as f64 * model.spacing,
                );
                let zw = if w >= 0 {
                    z.powi(w)
                } else {
                    z.conj().powi(-w)
                };
                zw * c64::new(0.4, 0.0)
            });
            let h = {
                let mut m = Mat::<c64>::zeros(2 * n, 2 * n);
                for i in 0..n {
                    for j in 0..n {
                        m[(i, n + j)] = t[(j, i)].conj();
                        m[(n + i, j)] = t[(i, j)];
                    }
                }
                HermitianOperator::untagged(m).unwrap()
            };
            let j = {
                let m = Mat::from_fn(2 * n, 2 * n, |i, jj| {
                    if i != jj {
                        c64::new(0.0, 0.0)
                    } else if i < n {
                        c64::new(1.0, 0.0)
                    } else {
                        c64::new(-1.0, 0.0)
                    }
                });
                HermitianOperator::untagged(m).unwrap()
            };
            let g = switch_function(SwitchKind::ErfBased, 0.4).unwrap();
            let data = chiral_projection(&h, &j, &g).unwrap();
            let f = linalg::phase_unitary(d0.as_ref());
            match f {
                Ok(fm) => {
                    let report = even_pairing(
                        &data,
                        &data,
                        &GeneralOperator::new(fm),
                        &model,
                        6,
                    );
                    println!("w {w}: {report:?}");
                }
                Err(e) => println!("w {w}: phase failed: {e}"),
            }
        }
    }

    fn axis_slac(model: &LatticeModel, axis: usize) -> Mat<c64> {
        let n = model.hilbert_dim();
        let mut m = Mat::<c64>::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                let sa = model.site_raw(model.site_of_basis(a));
                let sb = model.site_raw(model.site_of_basis(b));
                let other = 1 - axis;
                if sa[other] != sb[other] || sa[axis] == sb[axis] {
                    continue;
                }
                let diff = sa[axis] as i64 - sb[axis] as i64;
                let sign = if diff % 2 == 0 { 1.0 } else { -1.0 };
                m[(a, b)] = c64::new(0.0, -sign / (model.spacing * diff as f64));
            }
        }
        m
    }
}
