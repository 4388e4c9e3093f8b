//! Lattice models and the operators living on them: positions, Dirac-type
//! derivative operators (with and without doublers), gradings, magnetic
//! translations and weighted traces.

use std::f64::consts::PI;
use std::sync::Arc;

use faer::{c64, Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
    /// Open along axis 0, periodic along axis 1 (2D only). Used by interface
    /// models that keep a translation-invariant transverse direction.
    Cylinder,
}

/// Geometry descriptor: dimension, per-axis extents, fiber dimension and
/// boundary convention. Site ordering is lexicographic in the coordinates
/// (last axis fastest) with the fiber index fastest overall, so every
/// operator built from the same model is reproducible entry for entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeModel {
    pub dim: usize,
    pub extents: Vec<usize>,
    pub fiber_dim: usize,
    pub boundary: Boundary,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    1.0
}

pub fn build_lattice(
    dim: usize,
    extents: &[usize],
    fiber_dim: usize,
    boundary: Boundary,
) -> Result<LatticeModel> {
    if dim != 1 && dim != 2 {
        return Err(Error::InvalidLattice(format!(
            "dimension must be 1 or 2, got {dim}"
        )));
    }
    if extents.len() != dim {
        return Err(Error::InvalidLattice(format!(
            "expected {dim} extents, got {}",
            extents.len()
        )));
    }
    if let Some(&bad) = extents.iter().find(|&&e| e < 3) {
        return Err(Error::InvalidLattice(format!(
            "extent {bad} below minimum 3"
        )));
    }
    if fiber_dim < 1 {
        return Err(Error::InvalidLattice("fiber dimension must be >= 1".into()));
    }
    if boundary == Boundary::Cylinder && dim != 2 {
        return Err(Error::InvalidLattice(
            "cylinder boundary requires a 2D model".into(),
        ));
    }
    Ok(LatticeModel {
        dim,
        extents: extents.to_vec(),
        fiber_dim,
        boundary,
        spacing: 1.0,
    })
}

impl LatticeModel {
    pub fn n_sites(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn hilbert_dim(&self) -> usize {
        self.n_sites() * self.fiber_dim
    }

    pub fn axis_periodic(&self, axis: usize) -> bool {
        match self.boundary {
            Boundary::Open => false,
            Boundary::Periodic => true,
            Boundary::Cylinder => axis == 1,
        }
    }

    /// Centered integer coordinate along `axis` for raw index `i`.
    pub fn centered(&self, axis: usize, i: usize) -> i64 {
        i as i64 - (self.extents[axis] / 2) as i64
    }

    /// Raw per-axis indices of a site.
    pub fn site_raw(&self, site: usize) -> [usize; 2] {
        match self.dim {
            1 => [site, 0],
            _ => {
                let l2 = self.extents[1];
                [site / l2, site % l2]
            }
        }
    }

    pub fn site_of_raw(&self, raw: [usize; 2]) -> usize {
        match self.dim {
            1 => raw[0],
            _ => raw[0] * self.extents[1] + raw[1],
        }
    }

    /// Centered coordinates of a site.
    pub fn site_coords(&self, site: usize) -> [i64; 2] {
        let raw = self.site_raw(site);
        let mut out = [0i64; 2];
        for a in 0..self.dim {
            out[a] = self.centered(a, raw[a]);
        }
        out
    }

    /// Signed coordinate difference along `axis` between two sites, using the
    /// minimum-image convention on periodic axes (value in (-L/2, L/2]).
    pub fn wrapped_delta(&self, axis: usize, site_a: usize, site_b: usize) -> f64 {
        let ca = self.centered(axis, self.site_raw(site_a)[axis]) as f64;
        let cb = self.centered(axis, self.site_raw(site_b)[axis]) as f64;
        let mut d = ca - cb;
        if self.axis_periodic(axis) {
            let l = self.extents[axis] as f64;
            while d > l / 2.0 {
                d -= l;
            }
            while d <= -l / 2.0 {
                d += l;
            }
        }
        d * self.spacing
    }

    /// Chebyshev distance between sites (wrapped on periodic axes), in units
    /// of the lattice spacing.
    pub fn site_distance(&self, site_a: usize, site_b: usize) -> i64 {
        let mut dist = 0i64;
        for a in 0..self.dim {
            let mut d = (self.centered(a, self.site_raw(site_a)[a])
                - self.centered(a, self.site_raw(site_b)[a]))
            .abs();
            if self.axis_periodic(a) {
                let l = self.extents[a] as i64;
                d = d.min(l - d);
            }
            dist = dist.max(d);
        }
        dist
    }

    /// Chebyshev distance of a site from the lattice center.
    pub fn site_radius(&self, site: usize) -> i64 {
        let c = self.site_coords(site);
        (0..self.dim).map(|a| c[a].abs()).max().unwrap_or(0)
    }

    /// Basis index of (site, fiber component); the fiber index runs fastest.
    pub fn basis_index(&self, site: usize, fiber: usize) -> usize {
        site * self.fiber_dim + fiber
    }

    pub fn site_of_basis(&self, basis: usize) -> usize {
        basis / self.fiber_dim
    }
}

/// Optional provenance metadata carried by operators; pairings use the model
/// reference and axis to realize position commutators with the right boundary
/// convention.
#[derive(Debug, Clone, Default)]
pub struct OperatorTags {
    pub model: Option<Arc<LatticeModel>>,
    pub axis: Option<usize>,
    pub symbol: Option<String>,
}

/// A complex square matrix certified Hermitian at construction.
#[derive(Debug, Clone)]
pub struct HermitianOperator {
    matrix: Mat<c64>,
    pub tags: OperatorTags,
}

/// Tolerance factor of the Hermiticity certificate (relative to max(1, max
/// entry magnitude)).
pub const HERMITICITY_TOL: f64 = 1e-12;

impl HermitianOperator {
    pub fn new(matrix: Mat<c64>, tags: OperatorTags) -> Result<Self> {
        let deviation = linalg::herm_deviation(matrix.as_ref());
        let tolerance = HERMITICITY_TOL * matrix.norm_max().max(1.0);
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        Ok(HermitianOperator { matrix, tags })
    }

    pub fn untagged(matrix: Mat<c64>) -> Result<Self> {
        Self::new(matrix, OperatorTags::default())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn into_matrix(self) -> Mat<c64> {
        self.matrix
    }
}

/// A complex matrix, possibly rectangular.
#[derive(Debug, Clone)]
pub struct GeneralOperator {
    pub matrix: Mat<c64>,
}

impl GeneralOperator {
    pub fn new(matrix: Mat<c64>) -> Self {
        GeneralOperator { matrix }
    }

    pub fn row_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn col_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> MatRef<'_, c64> {
        self.matrix.as_ref()
    }

    pub fn adjoint(&self) -> GeneralOperator {
        GeneralOperator::new(self.matrix.adjoint().to_owned())
    }
}

/// Nonnegative weight per basis vector; models trace functionals from the
/// plain matrix trace (all ones) to traces per unit volume.
#[derive(Debug, Clone)]
pub struct TraceWeights {
    pub weights: Vec<f64>,
}

impl TraceWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::InvalidArgument(
                "trace weights must be nonnegative".into(),
            ));
        }
        Ok(TraceWeights { weights })
    }

    pub fn ones(dim: usize) -> Self {
        TraceWeights {
            weights: vec![1.0; dim],
        }
    }

    /// Uniform weights summing to 1: the normalized trace with tau(1) = 1.
    pub fn per_volume(dim: usize) -> Self {
        TraceWeights {
            weights: vec![1.0 / dim as f64; dim],
        }
    }
}

pub fn weighted_trace(a: MatRef<'_, c64>, w: &TraceWeights) -> Result<c64> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "weighted trace of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if w.weights.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "weight length {} vs dimension {}",
            w.weights.len(),
            a.nrows()
        )));
    }
    let mut acc = c64::new(0.0, 0.0);
    for (k, &wk) in w.weights.iter().enumerate() {
        acc += a[(k, k)] * wk;
    }
    Ok(acc)
}

pub fn position_operator(model: &LatticeModel, axis: usize) -> Result<HermitianOperator> {
    if axis >= model.dim {
        return Err(Error::InvalidArgument(format!(
            "axis {axis} out of range for a {}D model",
            model.dim
        )));
    }
    let n = model.hilbert_dim();
    let matrix = Mat::from_fn(n, n, |i, j| {
        if i != j {
            return c64::new(0.0, 0.0);
        }
        let site = model.site_of_basis(i);
        c64::new(model.site_coords(site)[axis] as f64 * model.spacing, 0.0)
    });
    HermitianOperator::new(
        matrix,
        OperatorTags {
            model: Some(Arc::new(model.clone())),
            axis: Some(axis),
            symbol: Some(format!("X{}", axis + 1)),
        },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiracMode {
    /// Antisymmetric central-difference discretization of -i d/dx (1D).
    Derivative1d,
    /// D1 (x) sigma1 + D2 (x) sigma2 from central differences, graded by
    /// 1 (x) sigma3.
    Dirac2d,
    /// Position operator along the given axis.
    Position(usize),
    /// Nonlocal antiperiodic-sign derivative -i(-1)^(x-y)/(h(x-y)): exactly
    /// Hermitian, a single Dirac point (no doublers). Open boundary only.
    Slac1d,
    /// Two-dimensional Dirac operator built from the doubler-free derivative
    /// on each axis, graded by 1 (x) sigma3. Open boundary only.
    SlacDirac2d,
}

/// 1D central-difference matrix of -i d/dx on `l` sites.
fn central_difference(l: usize, spacing: f64, periodic: bool) -> Mat<c64> {
    let c = 1.0 / (2.0 * spacing);
    Mat::from_fn(l, l, |i, j| {
        let forward = j == i + 1 || (periodic && i == l - 1 && j == 0);
        let backward = i == j + 1 || (periodic && j == l - 1 && i == 0);
        if forward {
            c64::new(0.0, -c)
        } else if backward {
            c64::new(0.0, c)
        } else {
            c64::new(0.0, 0.0)
        }
    })
}

/// Doubler-free derivative on `l` open sites.
fn slac_difference(l: usize, spacing: f64) -> Mat<c64> {
    Mat::from_fn(l, l, |i, j| {
        if i == j {
            return c64::new(0.0, 0.0);
        }
        let d = i as f64 - j as f64;
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        c64::new(0.0, -sign / (spacing * d))
    })
}

fn spin_matrices() -> (Mat<c64>, Mat<c64>, Mat<c64>) {
    let sigma1 = Mat::from_fn(2, 2, |i, j| {
        if i != j {
            c64::new(1.0, 0.0)
        } else {
            c64::new(0.0, 0.0)
        }
    });
    let sigma2 = Mat::from_fn(2, 2, |i, j| match (i, j) {
        (0, 1) => c64::new(0.0, -1.0),
        (1, 0) => c64::new(0.0, 1.0),
        _ => c64::new(0.0, 0.0),
    });
    let sigma3 = Mat::from_fn(2, 2, |i, j| {
        if i != j {
            c64::new(0.0, 0.0)
        } else if i == 0 {
            c64::new(1.0, 0.0)
        } else {
            c64::new(-1.0, 0.0)
        }
    });
    (sigma1, sigma2, sigma3)
}

/// Builds the Dirac-type operator for the model; 2D modes also return the
/// grading that anticommutes with it. The fiber is ordered with the spinor
/// factor fastest: fiber index = rest * 2 + spin.
pub fn dirac_operator(
    model: &LatticeModel,
    mode: DiracMode,
) -> Result<(HermitianOperator, Option<HermitianOperator>)> {
    let tags = |symbol: &str| OperatorTags {
        model: Some(Arc::new(model.clone())),
        axis: None,
        symbol: Some(symbol.into()),
    };
    match mode {
        DiracMode::Derivative1d | DiracMode::Slac1d => {
            if model.dim != 1 {
                return Err(Error::InvalidArgument(
                    "1D derivative mode on a non-1D model".into(),
                ));
            }
            let l = model.extents[0];
            let site = match mode {
                DiracMode::Derivative1d => {
                    central_difference(l, model.spacing, model.axis_periodic(0))
                }
                _ => {
                    if model.axis_periodic(0) {
                        return Err(Error::InvalidArgument(
                            "doubler-free derivative is implemented for open boundaries".into(),
                        ));
                    }
                    slac_difference(l, model.spacing)
                }
            };
            let full = linalg::kron(site.as_ref(), linalg::identity(model.fiber_dim).as_ref());
            Ok((HermitianOperator::new(full, tags("D"))?, None))
        }
        DiracMode::Dirac2d | DiracMode::SlacDirac2d => {
            if model.dim != 2 {
                return Err(Error::InvalidArgument("2D Dirac mode on a 1D model".into()));
            }
            if model.fiber_dim % 2 != 0 {
                return Err(Error::InvalidArgument(
                    "2D Dirac mode needs an even fiber dimension for the spinor factor".into(),
                ));
            }
            let (l1, l2) = (model.extents[0], model.extents[1]);
            let (d1_site, d2_site) = match mode {
                DiracMode::Dirac2d => (
                    central_difference(l1, model.spacing, model.axis_periodic(0)),
                    central_difference(l2, model.spacing, model.axis_periodic(1)),
                ),
                _ => {
                    if model.axis_periodic(0) || model.axis_periodic(1) {
                        return Err(Error::InvalidArgument(
                            "doubler-free derivative is implemented for open boundaries".into(),
                        ));
                    }
                    (
                        slac_difference(l1, model.spacing),
                        slac_difference(l2, model.spacing),
                    )
                }
            };
            let id1 = linalg::identity(l1);
            let id2 = linalg::identity(l2);
            let d1 = linalg::kron(d1_site.as_ref(), id2.as_ref());
            let d2 = linalg::kron(id1.as_ref(), d2_site.as_ref());
            let rest = linalg::identity(model.fiber_dim / 2);
            let (sigma1, sigma2, sigma3) = spin_matrices();
            let f1 = linalg::kron(rest.as_ref(), sigma1.as_ref());
            let f2 = linalg::kron(rest.as_ref(), sigma2.as_ref());
            let f3 = linalg::kron(rest.as_ref(), sigma3.as_ref());
            let d = linalg::kron(d1.as_ref(), f1.as_ref()) + linalg::kron(d2.as_ref(), f2.as_ref());
            let n_sites = model.n_sites();
            let grading = linalg::kron(linalg::identity(n_sites).as_ref(), f3.as_ref());
            Ok((
                HermitianOperator::new(d, tags("D"))?,
                Some(HermitianOperator::new(grading, tags("gamma"))?),
            ))
        }
        DiracMode::Position(axis) => Ok((position_operator(model, axis)?, None)),
    }
}

/// Recognizes theta = 2 pi p/q with small denominator; returns (p, q).
fn rational_flux(theta: f64) -> Option<(i64, u64)> {
    let x = theta / (2.0 * PI);
    for q in 1..=64u64 {
        let p = (x * q as f64).round();
        if (x * q as f64 - p).abs() < 1e-9 {
            return Some((p as i64, q));
        }
    }
    None
}

/// Magnetic translation unitaries in Landau gauge: v1 shifts along axis 0,
/// v2 shifts along axis 1 with phase exp(-i theta x1), so that
/// v1 v2 = exp(i theta) v2 v1 on periodic models and on the interior of open
/// ones. Open axes drop the wrap-around hoppings.
pub fn magnetic_shifts(
    model: &LatticeModel,
    theta: f64,
) -> Result<(GeneralOperator, GeneralOperator)> {
    if model.dim != 2 {
        return Err(Error::InvalidArgument(
            "magnetic shifts need a 2D model".into(),
        ));
    }
    if model.boundary == Boundary::Periodic {
        match rational_flux(theta) {
            Some((_, q)) => {
                if model.extents.iter().any(|&l| l as u64 % q != 0) {
                    return Err(Error::InvalidArgument(format!(
                        "flux denominator {q} must divide the extents {:?}",
                        model.extents
                    )));
                }
            }
            None => {
                return Err(Error::InvalidArgument(
                    "periodic boundary requires rational flux theta = 2 pi p/q".into(),
                ));
            }
        }
    }
    let n = model.hilbert_dim();
    let fiber = model.fiber_dim;
    let build = |axis: usize| -> Mat<c64> {
        let mut m = Mat::<c64>::zeros(n, n);
        for site in 0..model.n_sites() {
            let raw = model.site_raw(site);
            let mut dest = raw;
            dest[axis] += 1;
            if dest[axis] == model.extents[axis] {
                if !model.axis_periodic(axis) {
                    continue;
                }
                dest[axis] = 0;
            }
            let target = model.site_of_raw(dest);
            let phase = if axis == 1 {
                let x1 = model.centered(0, raw[0]) as f64;
                c64::new(0.0, -theta * x1).exp()
            } else {
                c64::new(1.0, 0.0)
            };
            for f in 0..fiber {
                m[(model.basis_index(target, f), model.basis_index(site, f))] = phase;
            }
        }
        m
    };
    Ok((
        GeneralOperator::new(build(0)),
        GeneralOperator::new(build(1)),
    ))
}

/// Largest singular value of DH - HD. Dense below the norm limit, implicit
/// power iteration (three products per application) above it.
pub fn commutator_norm(d: &HermitianOperator, h: &HermitianOperator) -> Result<f64> {
    if d.dim() != h.dim() {
        return Err(Error::DimensionMismatch(format!(
            "commutator of {}x{} with {}x{}",
            d.dim(),
            d.dim(),
            h.dim(),
            h.dim()
        )));
    }
    let (dm, hm) = (d.matrix(), h.matrix());
    if d.dim() <= linalg::DENSE_NORM_LIMIT {
        let comm = &dm * &hm - &hm * &dm;
        return Ok(linalg::operator_norm(comm.as_ref()));
    }
    Ok(linalg::operator_norm_implicit(
        d.dim(),
        |x| &dm * (&hm * x) - &hm * (&dm * x),
        |y| &hm * (&dm * y) - &dm * (&hm * y),
    ))
}

/// Entrywise displacement-weighted matrix realizing [X_axis, A] with the
/// minimum-image convention on periodic axes. This is the correct lattice
/// realization of the position derivation on tori, where the literal
/// commutator with a coordinate diagonal has an O(L) branch-cut artifact.
pub fn displacement_commutator(model: &LatticeModel, axis: usize, a: MatRef<'_, c64>) -> Mat<c64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| {
        let si = model.site_of_basis(i);
        let sj = model.site_of_basis(j);
        a[(i, j)] * model.wrapped_delta(axis, si, sj)
    })
}
