//! Domain types for extended-type populations.
//!
//! Agents carry a type from `S = {1..K}` and are either matched to a partner
//! or unmatched. The extended type of an agent is the pair (own type,
//! partner's type), with the marker `J` standing for "unmatched". All vectors
//! and matrices over the extended type space use one canonical ordering: the
//! K² matched cells (k, l) in row-major order, followed by the K unmatched
//! cells (k, J).

use crate::error::{Error, Result, ValidationReport, ViolationKind};

/// Default tolerance for algebraic identities (row sums, symmetry).
pub const ALGEBRAIC_TOL: f64 = 1e-12;

/// Default tolerance for quantities subject to accumulated iteration drift.
pub const DRIFT_TOL: f64 = 1e-9;

/// Index of a type in `S`, 0-based internally. Reports and file formats use
/// 1-based labels.
pub type TypeId = usize;

/// Partner coordinate of an extended type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partner {
    Matched(TypeId),
    Unmatched,
}

/// An extended type: own type plus partner coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExtendedType {
    pub own: TypeId,
    pub partner: Partner,
}

impl ExtendedType {
    pub fn matched(own: TypeId, partner: TypeId) -> Self {
        ExtendedType {
            own,
            partner: Partner::Matched(partner),
        }
    }

    pub fn unmatched(own: TypeId) -> Self {
        ExtendedType {
            own,
            partner: Partner::Unmatched,
        }
    }
}

/// The finite type space `S = {1..K}` together with the canonical ordering of
/// the extended type space of size K·(K+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TypeSpace {
    types: usize,
}

impl TypeSpace {
    pub fn new(types: usize) -> Result<Self> {
        if types == 0 {
            return Err(Error::InvalidInputs(ValidationReport::single(
                ViolationKind::Config,
                "type count must be at least 1",
            )));
        }
        Ok(TypeSpace { types })
    }

    /// Number of types K.
    pub fn types(&self) -> usize {
        self.types
    }

    /// Size of the extended type space, K·(K+1).
    pub fn extended_len(&self) -> usize {
        self.types * (self.types + 1)
    }

    /// Canonical index of a matched cell (k, l).
    pub fn matched_index(&self, k: TypeId, l: TypeId) -> usize {
        debug_assert!(k < self.types && l < self.types);
        k * self.types + l
    }

    /// Canonical index of an unmatched cell (k, J).
    pub fn unmatched_index(&self, k: TypeId) -> usize {
        debug_assert!(k < self.types);
        self.types * self.types + k
    }

    /// Canonical index of any extended type.
    pub fn index(&self, ext: ExtendedType) -> usize {
        match ext.partner {
            Partner::Matched(l) => self.matched_index(ext.own, l),
            Partner::Unmatched => self.unmatched_index(ext.own),
        }
    }

    /// Extended type at a canonical index.
    pub fn extended_type(&self, index: usize) -> ExtendedType {
        debug_assert!(index < self.extended_len());
        if index < self.types * self.types {
            ExtendedType::matched(index / self.types, index % self.types)
        } else {
            ExtendedType::unmatched(index - self.types * self.types)
        }
    }

    /// Iterate over all extended types in canonical order.
    pub fn extended_types(&self) -> impl Iterator<Item = ExtendedType> + '_ {
        (0..self.extended_len()).map(move |i| self.extended_type(i))
    }

    /// Iterate over type ids 0..K.
    pub fn type_ids(&self) -> std::ops::Range<TypeId> {
        0..self.types
    }
}

/// Render a partner coordinate with 1-based type labels, `J` for unmatched.
pub fn partner_label(partner: Partner) -> String {
    match partner {
        Partner::Matched(l) => (l + 1).to_string(),
        Partner::Unmatched => "J".to_string(),
    }
}

/// A probability distribution over the extended type space, symmetric on the
/// matched block: p(k,l) = p(l,k).
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedTypeDistribution {
    space: TypeSpace,
    mass: Vec<f64>,
}

impl ExtendedTypeDistribution {
    /// Build a distribution from raw mass entries in canonical order,
    /// enforcing validity at the algebraic tolerance.
    pub fn from_mass(space: TypeSpace, mass: Vec<f64>) -> Result<Self> {
        let report = validate_distribution(space, &mass, ALGEBRAIC_TOL);
        if !report.is_valid() {
            return Err(Error::InvalidInputs(report));
        }
        Ok(ExtendedTypeDistribution { space, mass })
    }

    /// Build without validation. Used internally where validity is
    /// guaranteed by construction.
    pub fn from_mass_unchecked(space: TypeSpace, mass: Vec<f64>) -> Self {
        assert_eq!(mass.len(), space.extended_len(), "mass length mismatch");
        ExtendedTypeDistribution { space, mass }
    }

    pub fn space(&self) -> TypeSpace {
        self.space
    }

    /// Mass on the matched cell (k, l).
    pub fn matched(&self, k: TypeId, l: TypeId) -> f64 {
        self.mass[self.space.matched_index(k, l)]
    }

    /// Mass on the unmatched cell (k, J).
    pub fn unmatched(&self, k: TypeId) -> f64 {
        self.mass[self.space.unmatched_index(k)]
    }

    pub fn get(&self, ext: ExtendedType) -> f64 {
        self.mass[self.space.index(ext)]
    }

    /// Raw entries in canonical order.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn total(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Validate against the distribution invariants at the given tolerance.
    pub fn validate(&self, tol: f64) -> ValidationReport {
        validate_distribution(self.space, &self.mass, tol)
    }
}

/// Check raw entries against the extended-type distribution invariants:
/// finite, nonnegative, total mass 1 within `tol`, matched block symmetric
/// within `tol`. The report lists every violation found.
pub fn validate_distribution(space: TypeSpace, mass: &[f64], tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new();
    if mass.len() != space.extended_len() {
        report.push(
            ViolationKind::Shape,
            format!(
                "expected {} entries for K={}, got {}",
                space.extended_len(),
                space.types(),
                mass.len()
            ),
        );
        return report;
    }
    for (i, &m) in mass.iter().enumerate() {
        let ext = space.extended_type(i);
        if !m.is_finite() {
            report.push(
                ViolationKind::NotFinite,
                format!("p({},{}) = {m}", ext.own + 1, partner_label(ext.partner)),
            );
        } else if m < 0.0 {
            report.push(
                ViolationKind::Negative,
                format!("p({},{}) = {m}", ext.own + 1, partner_label(ext.partner)),
            );
        }
    }
    let total: f64 = mass.iter().sum();
    if total.is_finite() && (total - 1.0).abs() > tol {
        report.push(
            ViolationKind::SumNotOne,
            format!("total mass {total} differs from 1 by more than {tol}"),
        );
    }
    for k in space.type_ids() {
        for l in (k + 1)..space.types() {
            let a = mass[space.matched_index(k, l)];
            let b = mass[space.matched_index(l, k)];
            if a.is_finite() && b.is_finite() && (a - b).abs() > tol {
                report.push(
                    ViolationKind::Asymmetric,
                    format!("p({},{}) = {a} but p({},{}) = {b}", k + 1, l + 1, l + 1, k + 1),
                );
            }
        }
    }
    report
}

/// Dense square matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::InvalidInputs(ValidationReport::single(
                ViolationKind::Shape,
                format!("expected {} entries for a {dim}x{dim} matrix, got {}", dim * dim, data.len()),
            )));
        }
        Ok(SquareMatrix { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::InvalidInputs(ValidationReport::single(
                    ViolationKind::Shape,
                    format!("matrix row has {} entries, expected {dim}", row.len()),
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(SquareMatrix { dim, data })
    }

    pub fn zeros(dim: usize) -> Self {
        SquareMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_vec()).collect()
    }
}

/// Joint new-type law for a persisting pair: sigma[k][l][k'][l'] is the
/// probability that a matched (k, l) pair becomes a (k', l') pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairKernel {
    types: usize,
    data: Vec<f64>,
}

impl PairKernel {
    pub fn new(types: usize, data: Vec<f64>) -> Result<Self> {
        let expected = types * types * types * types;
        if data.len() != expected {
            return Err(Error::InvalidInputs(ValidationReport::single(
                ViolationKind::Shape,
                format!("expected {expected} pair-kernel entries for K={types}, got {}", data.len()),
            )));
        }
        Ok(PairKernel { types, data })
    }

    pub fn from_nested(nested: &[Vec<Vec<Vec<f64>>>]) -> Result<Self> {
        let types = nested.len();
        let mut data = Vec::with_capacity(types * types * types * types);
        for per_k in nested {
            if per_k.len() != types {
                return Err(shape_err("pair kernel", types));
            }
            for per_kl in per_k {
                if per_kl.len() != types {
                    return Err(shape_err("pair kernel", types));
                }
                for row in per_kl {
                    if row.len() != types {
                        return Err(shape_err("pair kernel", types));
                    }
                    data.extend_from_slice(row);
                }
            }
        }
        Ok(PairKernel { types, data })
    }

    /// Point mass: every pair keeps its current types.
    pub fn keep_types(types: usize) -> Self {
        let mut data = vec![0.0; types * types * types * types];
        for k in 0..types {
            for l in 0..types {
                let idx = ((k * types + l) * types + k) * types + l;
                data[idx] = 1.0;
            }
        }
        PairKernel { types, data }
    }

    pub fn types(&self) -> usize {
        self.types
    }

    pub fn at(&self, k: TypeId, l: TypeId, new_k: TypeId, new_l: TypeId) -> f64 {
        self.data[((k * self.types + l) * self.types + new_k) * self.types + new_l]
    }

    pub fn set(&mut self, k: TypeId, l: TypeId, new_k: TypeId, new_l: TypeId, v: f64) {
        self.data[((k * self.types + l) * self.types + new_k) * self.types + new_l] = v;
    }

    /// The K×K table of new-type probabilities for a given pair, row-major.
    pub fn table(&self, k: TypeId, l: TypeId) -> &[f64] {
        let base = (k * self.types + l) * self.types * self.types;
        &self.data[base..base + self.types * self.types]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        let k = self.types;
        (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| {
                        (0..k)
                            .map(|c| (0..k).map(|d| self.at(a, b, c, d)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// New-type law for one side of a dissolving pair: varsigma[k][l][k'] is the
/// probability that the k-side of a dissolving (k, l) pair becomes type k'.
#[derive(Debug, Clone, PartialEq)]
pub struct SideKernel {
    types: usize,
    data: Vec<f64>,
}

impl SideKernel {
    pub fn new(types: usize, data: Vec<f64>) -> Result<Self> {
        let expected = types * types * types;
        if data.len() != expected {
            return Err(Error::InvalidInputs(ValidationReport::single(
                ViolationKind::Shape,
                format!("expected {expected} side-kernel entries for K={types}, got {}", data.len()),
            )));
        }
        Ok(SideKernel { types, data })
    }

    pub fn from_nested(nested: &[Vec<Vec<f64>>]) -> Result<Self> {
        let types = nested.len();
        let mut data = Vec::with_capacity(types * types * types);
        for per_k in nested {
            if per_k.len() != types {
                return Err(shape_err("side kernel", types));
            }
            for row in per_k {
                if row.len() != types {
                    return Err(shape_err("side kernel", types));
                }
                data.extend_from_slice(row);
            }
        }
        Ok(SideKernel { types, data })
    }

    /// Point mass: each side keeps its current type on dissolution.
    pub fn keep_types(types: usize) -> Self {
        let mut data = vec![0.0; types * types * types];
        for k in 0..types {
            for l in 0..types {
                data[(k * types + l) * types + k] = 1.0;
            }
        }
        SideKernel { types, data }
    }

    pub fn types(&self) -> usize {
        self.types
    }

    pub fn at(&self, k: TypeId, l: TypeId, new_k: TypeId) -> f64 {
        self.data[(k * self.types + l) * self.types + new_k]
    }

    pub fn set(&mut self, k: TypeId, l: TypeId, new_k: TypeId, v: f64) {
        self.data[(k * self.types + l) * self.types + new_k] = v;
    }

    /// Length-K draw row for the k-side of a dissolving (k, l) pair.
    pub fn row(&self, k: TypeId, l: TypeId) -> &[f64] {
        let base = (k * self.types + l) * self.types;
        &self.data[base..base + self.types]
    }

    pub fn to_nested(&self) -> Vec<Vec<Vec<f64>>> {
        let k = self.types;
        (0..k)
            .map(|a| {
                (0..k)
                    .map(|b| (0..k).map(|c| self.at(a, b, c)).collect())
                    .collect()
            })
            .collect()
    }
}

fn shape_err(what: &str, types: usize) -> Error {
    Error::InvalidInputs(ValidationReport::single(
        ViolationKind::Shape,
        format!("{what} must be K-deep nested with K={types} in every dimension"),
    ))
}

/// One period's realized intensities evaluated at a given distribution and
/// environment state: mutation kernel eta, matching probabilities theta with
/// leftover vector b, break-up probabilities xi, and the post-break-up
/// new-type kernels sigma (persisting pairs) and varsigma (dissolving sides).
#[derive(Debug, Clone, PartialEq)]
pub struct InputMatrices {
    space: TypeSpace,
    eta: SquareMatrix,
    theta: SquareMatrix,
    b: Vec<f64>,
    xi: SquareMatrix,
    sigma: PairKernel,
    varsigma: SideKernel,
}

impl InputMatrices {
    /// Assemble and validate a full set of intensity tables. `b` is derived
    /// as 1 − Σ_l theta[k][l].
    pub fn new(
        space: TypeSpace,
        eta: SquareMatrix,
        theta: SquareMatrix,
        xi: SquareMatrix,
        sigma: PairKernel,
        varsigma: SideKernel,
    ) -> Result<Self> {
        let m = Self::new_unchecked(space, eta, theta, xi, sigma, varsigma)?;
        let report = validate_inputs(&m, ALGEBRAIC_TOL);
        if !report.is_valid() {
            return Err(Error::InvalidInputs(report));
        }
        Ok(m)
    }

    /// Assemble with shape checks only; numeric invariants are not enforced.
    pub fn new_unchecked(
        space: TypeSpace,
        eta: SquareMatrix,
        theta: SquareMatrix,
        xi: SquareMatrix,
        sigma: PairKernel,
        varsigma: SideKernel,
    ) -> Result<Self> {
        let k = space.types();
        if eta.dim() != k || theta.dim() != k || xi.dim() != k {
            return Err(shape_err("eta/theta/xi", k));
        }
        if sigma.types() != k || varsigma.types() != k {
            return Err(shape_err("sigma/varsigma", k));
        }
        let b = (0..k)
            .map(|i| 1.0 - theta.row(i).iter().sum::<f64>())
            .collect();
        Ok(InputMatrices {
            space,
            eta,
            theta,
            b,
            xi,
            sigma,
            varsigma,
        })
    }

    /// The do-nothing intensities: identity mutation, no matching, no
    /// break-up, type-keeping kernels. A fixed point of the period map.
    pub fn identity(space: TypeSpace) -> Self {
        let k = space.types();
        InputMatrices {
            space,
            eta: SquareMatrix::identity(k),
            theta: SquareMatrix::zeros(k),
            b: vec![1.0; k],
            xi: SquareMatrix::zeros(k),
            sigma: PairKernel::keep_types(k),
            varsigma: SideKernel::keep_types(k),
        }
    }

    pub fn space(&self) -> TypeSpace {
        self.space
    }

    pub fn eta(&self) -> &SquareMatrix {
        &self.eta
    }

    pub fn theta(&self) -> &SquareMatrix {
        &self.theta
    }

    /// Stay-unmatched probabilities b[k] = 1 − Σ_l theta[k][l].
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn xi(&self) -> &SquareMatrix {
        &self.xi
    }

    pub fn sigma(&self) -> &PairKernel {
        &self.sigma
    }

    pub fn varsigma(&self) -> &SideKernel {
        &self.varsigma
    }
}

/// Check intensity tables against the InputMatrices invariants at tolerance
/// `tol`: eta rows stochastic, theta rows summing to at most 1 with entries in
/// [0,1], xi symmetric in [0,1], sigma tables normalized with pair symmetry
/// sigma[k][l][k'][l'] = sigma[l][k][l'][k'], varsigma rows normalized.
pub fn validate_inputs(m: &InputMatrices, tol: f64) -> ValidationReport {
    let mut report = ValidationReport::new();
    let k_count = m.space.types();

    for k in 0..k_count {
        check_unit_interval(&mut report, m.eta.row(k), tol, |j| format!("eta[{},{}]", k + 1, j + 1));
        let sum: f64 = m.eta.row(k).iter().sum();
        if sum.is_finite() && (sum - 1.0).abs() > tol {
            report.push(
                ViolationKind::SumNotOne,
                format!("eta row {} sums to {sum}", k + 1),
            );
        }
    }

    for k in 0..k_count {
        check_unit_interval(&mut report, m.theta.row(k), tol, |j| {
            format!("theta[{},{}]", k + 1, j + 1)
        });
        let sum: f64 = m.theta.row(k).iter().sum();
        if sum.is_finite() && sum > 1.0 + tol {
            report.push(
                ViolationKind::RowSumExceedsOne,
                format!("theta row {} sums to {sum}, leaving b[{}] = {}", k + 1, k + 1, 1.0 - sum),
            );
        }
    }

    for k in 0..k_count {
        check_unit_interval(&mut report, m.xi.row(k), tol, |j| format!("xi[{},{}]", k + 1, j + 1));
        for l in (k + 1)..k_count {
            let a = m.xi.get(k, l);
            let b = m.xi.get(l, k);
            if a.is_finite() && b.is_finite() && (a - b).abs() > tol {
                report.push(
                    ViolationKind::Asymmetric,
                    format!("xi[{},{}] = {a} but xi[{},{}] = {b}", k + 1, l + 1, l + 1, k + 1),
                );
            }
        }
    }

    for k in 0..k_count {
        for l in 0..k_count {
            let table = m.sigma.table(k, l);
            check_unit_interval(&mut report, table, tol, |j| {
                format!("sigma[{},{}][{},{}]", k + 1, l + 1, j / k_count + 1, j % k_count + 1)
            });
            let sum: f64 = table.iter().sum();
            if sum.is_finite() && (sum - 1.0).abs() > tol {
                report.push(
                    ViolationKind::SumNotOne,
                    format!("sigma[{},{}] table sums to {sum}", k + 1, l + 1),
                );
            }
        }
    }
    for k in 0..k_count {
        for l in k..k_count {
            for nk in 0..k_count {
                for nl in 0..k_count {
                    let a = m.sigma.at(k, l, nk, nl);
                    let b = m.sigma.at(l, k, nl, nk);
                    if a.is_finite() && b.is_finite() && (a - b).abs() > tol {
                        report.push(
                            ViolationKind::Asymmetric,
                            format!(
                                "sigma[{},{}][{},{}] = {a} but sigma[{},{}][{},{}] = {b}",
                                k + 1, l + 1, nk + 1, nl + 1, l + 1, k + 1, nl + 1, nk + 1
                            ),
                        );
                    }
                }
            }
        }
    }

    for k in 0..k_count {
        for l in 0..k_count {
            let row = m.varsigma.row(k, l);
            check_unit_interval(&mut report, row, tol, |j| {
                format!("varsigma[{},{}][{}]", k + 1, l + 1, j + 1)
            });
            let sum: f64 = row.iter().sum();
            if sum.is_finite() && (sum - 1.0).abs() > tol {
                report.push(
                    ViolationKind::SumNotOne,
                    format!("varsigma[{},{}] row sums to {sum}", k + 1, l + 1),
                );
            }
        }
    }

    report
}

fn check_unit_interval(
    report: &mut ValidationReport,
    entries: &[f64],
    tol: f64,
    label: impl Fn(usize) -> String,
) {
    for (j, &v) in entries.iter().enumerate() {
        if !v.is_finite() {
            report.push(ViolationKind::NotFinite, format!("{} = {v}", label(j)));
        } else if v < -tol || v > 1.0 + tol {
            report.push(ViolationKind::OutOfRange, format!("{} = {v}", label(j)));
        }
    }
}
