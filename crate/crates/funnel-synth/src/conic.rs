//! Backend-agnostic conic program representation and the Clarabel backend.
//!
//! A [`ConicProgram`] owns a flat pool of scalar decision variables and a list
//! of cone memberships over affine expressions of those variables:
//!
//! - zero cone (affine equalities),
//! - nonnegative orthant,
//! - second-order cone `rows[0] >= |rows[1..]|`,
//! - PSD cone of packed symmetric matrices.
//!
//! Symmetric matrix variables store only their distinct upper-triangle
//! entries; the PSD rows use the scaled packing from [`crate::linalg::svec`]
//! (off-diagonals times sqrt(2)), which is also what the backend consumes.
//! The objective is linear. Minimization is the only sense.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::error::SynthError;
use crate::linalg::svec_index;

/// Index of one scalar decision variable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// Sparse affine scalar expression `constant + sum coeff_v x_v`.
#[derive(Clone, Debug, Default)]
pub struct LinExpr {
    pub coeffs: BTreeMap<usize, f64>,
    pub constant: f64,
}

impl LinExpr {
    pub fn constant(c: f64) -> Self {
        LinExpr { coeffs: BTreeMap::new(), constant: c }
    }

    pub fn variable(v: VarId) -> Self {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(v.0, 1.0);
        LinExpr { coeffs, constant: 0.0 }
    }

    pub fn add_term(&mut self, v: VarId, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.coeffs.entry(v.0).or_insert(0.0);
        *slot += c;
        if *slot == 0.0 {
            self.coeffs.remove(&v.0);
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        LinExpr {
            coeffs: self.coeffs.iter().map(|(&v, &c)| (v, c * s)).collect(),
            constant: self.constant * s,
        }
    }

    pub fn plus(&self, other: &LinExpr) -> Self {
        let mut out = self.clone();
        out.constant += other.constant;
        for (&v, &c) in &other.coeffs {
            out.add_term(VarId(v), c);
        }
        out
    }

    pub fn minus(&self, other: &LinExpr) -> Self {
        self.plus(&other.scaled(-1.0))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.coeffs.iter().map(|(&v, &c)| c * x[v]).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.coeffs.is_empty()
    }
}

/// Affine matrix-valued expression `constant + sum x_v * coeff_v` with dense
/// coefficient matrices, ordered by variable index for determinism.
#[derive(Clone, Debug)]
pub struct MatExpr {
    nrows: usize,
    ncols: usize,
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl MatExpr {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        MatExpr { nrows, ncols, constant: DMatrix::zeros(nrows, ncols), terms: BTreeMap::new() }
    }

    pub fn from_const(m: DMatrix<f64>) -> Self {
        MatExpr { nrows: m.nrows(), ncols: m.ncols(), constant: m, terms: BTreeMap::new() }
    }

    /// Scalar expression times a constant matrix.
    pub fn from_scalar_expr(e: &LinExpr, m: &DMatrix<f64>) -> Self {
        let mut out = MatExpr::from_const(m * e.constant);
        for (&v, &c) in &e.coeffs {
            out.terms.insert(v, m * c);
        }
        out
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    fn insert_term(&mut self, v: usize, m: DMatrix<f64>) {
        match self.terms.entry(v) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(m);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                *e.get_mut() += m;
            }
        }
    }

    pub fn plus(&self, other: &MatExpr) -> MatExpr {
        assert_eq!(self.shape(), other.shape(), "MatExpr shape mismatch in plus");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (&v, m) in &other.terms {
            out.insert_term(v, m.clone());
        }
        out
    }

    pub fn minus(&self, other: &MatExpr) -> MatExpr {
        self.plus(&other.scaled(-1.0))
    }

    pub fn scaled(&self, s: f64) -> MatExpr {
        MatExpr {
            nrows: self.nrows,
            ncols: self.ncols,
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(&v, m)| (v, m * s)).collect(),
        }
    }

    /// Left multiplication by a constant matrix: `a * self`.
    pub fn lmul(&self, a: &DMatrix<f64>) -> MatExpr {
        assert_eq!(a.ncols(), self.nrows, "lmul shape mismatch");
        MatExpr {
            nrows: a.nrows(),
            ncols: self.ncols,
            constant: a * &self.constant,
            terms: self.terms.iter().map(|(&v, m)| (v, a * m)).collect(),
        }
    }

    /// Right multiplication by a constant matrix: `self * a`.
    pub fn rmul(&self, a: &DMatrix<f64>) -> MatExpr {
        assert_eq!(self.ncols, a.nrows(), "rmul shape mismatch");
        MatExpr {
            nrows: self.nrows,
            ncols: a.ncols(),
            constant: &self.constant * a,
            terms: self.terms.iter().map(|(&v, m)| (v, m * a)).collect(),
        }
    }

    /// Reinterpret the entries column-major in a new shape with the same
    /// total size.
    pub fn reshape(&self, nrows: usize, ncols: usize) -> MatExpr {
        assert_eq!(self.nrows * self.ncols, nrows * ncols, "reshape size mismatch");
        let re = |m: &DMatrix<f64>| m.clone().reshape_generic(nalgebra::Dyn(nrows), nalgebra::Dyn(ncols));
        MatExpr {
            nrows,
            ncols,
            constant: re(&self.constant),
            terms: self.terms.iter().map(|(&v, m)| (v, re(m))).collect(),
        }
    }

    pub fn transpose(&self) -> MatExpr {
        MatExpr {
            nrows: self.ncols,
            ncols: self.nrows,
            constant: self.constant.transpose(),
            terms: self.terms.iter().map(|(&v, m)| (v, m.transpose())).collect(),
        }
    }

    /// `self + self^T`, defined for square expressions.
    pub fn plus_transpose(&self) -> MatExpr {
        self.plus(&self.transpose())
    }

    /// Assemble from a dense grid of blocks; `blocks[i][j]` fills block row
    /// `i`, block column `j`. All rows in a block row must agree in height,
    /// all columns in a block column in width.
    pub fn from_blocks(blocks: &[Vec<MatExpr>]) -> MatExpr {
        assert!(!blocks.is_empty() && !blocks[0].is_empty());
        let row_heights: Vec<usize> = blocks.iter().map(|r| r[0].nrows).collect();
        let col_widths: Vec<usize> = blocks[0].iter().map(|b| b.ncols).collect();
        let nrows: usize = row_heights.iter().sum();
        let ncols: usize = col_widths.iter().sum();
        let mut out = MatExpr::zeros(nrows, ncols);
        let mut roff = 0;
        for (bi, row) in blocks.iter().enumerate() {
            assert_eq!(row.len(), col_widths.len(), "ragged block row {bi}");
            let mut coff = 0;
            for (bj, b) in row.iter().enumerate() {
                assert_eq!(b.nrows, row_heights[bi], "block ({bi},{bj}) height");
                assert_eq!(b.ncols, col_widths[bj], "block ({bi},{bj}) width");
                out.constant
                    .view_mut((roff, coff), (b.nrows, b.ncols))
                    .copy_from(&b.constant);
                for (&v, m) in &b.terms {
                    let slot = out
                        .terms
                        .entry(v)
                        .or_insert_with(|| DMatrix::zeros(nrows, ncols));
                    slot.view_mut((roff, coff), (b.nrows, b.ncols)).copy_from(m);
                }
                coff += col_widths[bj];
            }
            roff += row_heights[bi];
        }
        out
    }

    /// Scalar affine expression at entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> LinExpr {
        let mut e = LinExpr::constant(self.constant[(i, j)]);
        for (&v, m) in &self.terms {
            e.add_term(VarId(v), m[(i, j)]);
        }
        e
    }

    /// Trace as a scalar affine expression (square only).
    pub fn trace(&self) -> LinExpr {
        assert_eq!(self.nrows, self.ncols, "trace of non-square MatExpr");
        let mut e = LinExpr::constant(self.constant.trace());
        for (&v, m) in &self.terms {
            e.add_term(VarId(v), m.trace());
        }
        e
    }

    /// Numeric value at a variable assignment.
    pub fn eval(&self, x: &[f64]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (&v, m) in &self.terms {
            out += m * x[v];
        }
        out
    }

    /// Largest symmetry violation across the constant and all coefficients.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = crate::linalg::asymmetry(&self.constant);
        for m in self.terms.values() {
            worst = worst.max(crate::linalg::asymmetry(m));
        }
        worst
    }
}

/// Handle to a symmetric matrix variable: the `dim (dim + 1) / 2` distinct
/// entries live at consecutive scalar indices in svec entry order.
#[derive(Clone, Copy, Debug)]
pub struct SymMatVar {
    base: usize,
    pub dim: usize,
}

impl SymMatVar {
    pub fn entry_id(&self, i: usize, j: usize) -> VarId {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        VarId(self.base + svec_index(i, j))
    }

    pub fn ids(&self) -> Vec<VarId> {
        (0..crate::linalg::svec_len(self.dim)).map(|k| VarId(self.base + k)).collect()
    }

    /// The `dim x dim` matrix expression with symmetric coefficient bases.
    pub fn expr(&self) -> MatExpr {
        let d = self.dim;
        let mut out = MatExpr::zeros(d, d);
        for j in 0..d {
            for i in 0..=j {
                let mut m = DMatrix::zeros(d, d);
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
                out.terms.insert(self.entry_id(i, j).0, m);
            }
        }
        out
    }

    /// Column-stacked `dim^2 x 1` expression of the full (unfolded) matrix.
    pub fn vec_expr(&self) -> MatExpr {
        let d = self.dim;
        let mut out = MatExpr::zeros(d * d, 1);
        for j in 0..d {
            for i in 0..=j {
                let mut m = DMatrix::zeros(d * d, 1);
                m[(j * d + i, 0)] = 1.0;
                m[(i * d + j, 0)] = 1.0;
                out.terms.insert(self.entry_id(i, j).0, m);
            }
        }
        out
    }

    /// Numeric matrix value at a variable assignment.
    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| x[self.entry_id(i, j).0])
    }
}

/// Handle to a general (rectangular) matrix variable stored column-major.
#[derive(Clone, Copy, Debug)]
pub struct MatVar {
    base: usize,
    pub nrows: usize,
    pub ncols: usize,
}

impl MatVar {
    pub fn entry_id(&self, i: usize, j: usize) -> VarId {
        assert!(i < self.nrows && j < self.ncols);
        VarId(self.base + j * self.nrows + i)
    }

    pub fn ids(&self) -> Vec<VarId> {
        (0..self.nrows * self.ncols).map(|k| VarId(self.base + k)).collect()
    }

    pub fn expr(&self) -> MatExpr {
        let mut out = MatExpr::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for i in 0..self.nrows {
                let mut m = DMatrix::zeros(self.nrows, self.ncols);
                m[(i, j)] = 1.0;
                out.terms.insert(self.entry_id(i, j).0, m);
            }
        }
        out
    }

    /// Column-stacked `nrows ncols x 1` expression.
    pub fn vec_expr(&self) -> MatExpr {
        let n = self.nrows * self.ncols;
        let mut out = MatExpr::zeros(n, 1);
        for k in 0..n {
            let mut m = DMatrix::zeros(n, 1);
            m[(k, 0)] = 1.0;
            out.terms.insert(self.base + k, m);
        }
        out
    }

    pub fn value(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows, self.ncols, |i, j| x[self.entry_id(i, j).0])
    }
}

/// Cone families understood by the program representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeKind {
    /// All rows equal zero.
    Zero,
    /// All rows nonnegative.
    Nonneg,
    /// `rows[0] >= |rows[1..]|` in the Euclidean norm.
    SecondOrder,
    /// Rows are the scaled upper-triangle packing of a PSD matrix of the
    /// given side length.
    PsdTriangle(usize),
}

/// One cone membership over a group of affine rows.
#[derive(Clone, Debug)]
pub struct ConeBlock {
    pub kind: ConeKind,
    pub rows: Vec<LinExpr>,
}

/// Solver-facing feature set of a backend.
#[derive(Clone, Copy, Debug)]
pub struct BackendCaps {
    pub psd: bool,
    pub soc: bool,
    pub logdet: bool,
}

/// Outcome classification of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Optimal,
    AlmostOptimal,
    PrimalInfeasible,
    DualInfeasible,
    MaxIterations,
    NumericalTrouble,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal)
    }

    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveStatus::PrimalInfeasible | SolveStatus::DualInfeasible)
    }
}

/// Primal solution and solve metadata.
#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: u32,
    pub solve_time: f64,
}

impl ConicSolution {
    pub fn value_of(&self, v: VarId) -> f64 {
        self.x[v.0]
    }
}

/// Numeric tolerances and iteration limits handed to the backend.
#[derive(Clone, Copy, Debug)]
pub struct SolveSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings { feas_tol: 1e-8, gap_tol: 1e-8, max_iter: 200, verbose: false }
    }
}

/// A conic program in the form: minimize a linear objective subject to
/// affine expressions lying in cones.
#[derive(Clone, Debug, Default)]
pub struct ConicProgram {
    n_vars: usize,
    objective: BTreeMap<usize, f64>,
    objective_constant: f64,
    pub blocks: Vec<ConeBlock>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.n_vars
    }

    pub fn num_rows(&self) -> usize {
        self.blocks.iter().map(|b| b.rows.len()).sum()
    }

    pub fn add_scalar(&mut self) -> VarId {
        let id = VarId(self.n_vars);
        self.n_vars += 1;
        id
    }

    pub fn add_scalars(&mut self, n: usize) -> Vec<VarId> {
        (0..n).map(|_| self.add_scalar()).collect()
    }

    pub fn add_sym_matrix(&mut self, dim: usize) -> SymMatVar {
        let base = self.n_vars;
        self.n_vars += crate::linalg::svec_len(dim);
        SymMatVar { base, dim }
    }

    pub fn add_matrix(&mut self, nrows: usize, ncols: usize) -> MatVar {
        let base = self.n_vars;
        self.n_vars += nrows * ncols;
        MatVar { base, nrows, ncols }
    }

    /// Add `expr = 0`.
    pub fn add_eq(&mut self, expr: LinExpr) {
        self.blocks.push(ConeBlock { kind: ConeKind::Zero, rows: vec![expr] });
    }

    /// Add a group of equality rows.
    pub fn add_eq_rows(&mut self, rows: Vec<LinExpr>) {
        if !rows.is_empty() {
            self.blocks.push(ConeBlock { kind: ConeKind::Zero, rows });
        }
    }

    /// Add `expr >= 0`.
    pub fn add_nonneg(&mut self, expr: LinExpr) {
        self.blocks.push(ConeBlock { kind: ConeKind::Nonneg, rows: vec![expr] });
    }

    /// Add `rows[0] >= |rows[1..]|`.
    pub fn add_soc(&mut self, rows: Vec<LinExpr>) {
        assert!(rows.len() >= 2, "second-order cone needs at least two rows");
        self.blocks.push(ConeBlock { kind: ConeKind::SecondOrder, rows });
    }

    /// Add the epigraph constraint `t >= sum_i exprs[i]^2` as one
    /// second-order cone: `|(t - 1, 2 e)| <= t + 1`.
    pub fn add_sq_norm_epigraph(&mut self, t: VarId, exprs: &[LinExpr]) {
        let tvar = LinExpr::variable(t);
        let mut rows = Vec::with_capacity(exprs.len() + 2);
        rows.push(tvar.plus(&LinExpr::constant(1.0)));
        rows.push(tvar.minus(&LinExpr::constant(1.0)));
        for e in exprs {
            rows.push(e.scaled(2.0));
        }
        self.add_soc(rows);
    }

    /// Add `m(x)` positive semidefinite. The expression must be symmetric to
    /// within `1e-9`; it is symmetrized before packing so that roundoff in
    /// block assembly cannot leak into the cone.
    pub fn add_psd(&mut self, m: &MatExpr) -> Result<(), SynthError> {
        let (r, c) = m.shape();
        if r != c {
            return Err(SynthError::dims("psd block", format!("{r}x{r}"), format!("{r}x{c}")));
        }
        let asym = m.asymmetry();
        if asym > 1e-9 {
            return Err(SynthError::InvalidSetup(format!(
                "psd block is asymmetric by {asym:.3e}"
            )));
        }
        let s2 = std::f64::consts::SQRT_2;
        let mut rows = Vec::with_capacity(crate::linalg::svec_len(r));
        for j in 0..r {
            for i in 0..=j {
                let mut e = if i == j {
                    m.entry(i, j)
                } else {
                    // Average the two mirror entries, then apply the packing scale.
                    m.entry(i, j).plus(&m.entry(j, i)).scaled(0.5 * s2)
                };
                e.coeffs.retain(|_, c| *c != 0.0);
                rows.push(e);
            }
        }
        self.blocks.push(ConeBlock { kind: ConeKind::PsdTriangle(r), rows });
        Ok(())
    }

    /// Add a linear term to the (minimized) objective.
    pub fn add_objective_term(&mut self, v: VarId, c: f64) {
        if c != 0.0 {
            *self.objective.entry(v.0).or_insert(0.0) += c;
        }
    }

    /// Add a scalar affine expression to the objective.
    pub fn add_objective_expr(&mut self, e: &LinExpr) {
        self.objective_constant += e.constant;
        for (&v, &c) in &e.coeffs {
            self.add_objective_term(VarId(v), c);
        }
    }

    pub fn objective_expr(&self) -> LinExpr {
        LinExpr {
            coeffs: self.objective.clone(),
            constant: self.objective_constant,
        }
    }

    /// Deterministic plain-text dump of the standard form: variable count,
    /// objective triplets, then each cone block with its rows as
    /// `(row, var, coeff)` triplets plus constants.
    pub fn export_standard_form(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "conic-program");
        let _ = writeln!(out, "vars {}", self.n_vars);
        let _ = writeln!(out, "objective-constant {:?}", self.objective_constant);
        let _ = writeln!(out, "objective-nnz {}", self.objective.len());
        for (&v, &c) in &self.objective {
            let _ = writeln!(out, "obj {} {:?}", v, c);
        }
        let _ = writeln!(out, "blocks {}", self.blocks.len());
        for (bi, b) in self.blocks.iter().enumerate() {
            let kind = match b.kind {
                ConeKind::Zero => "zero".to_string(),
                ConeKind::Nonneg => "nonneg".to_string(),
                ConeKind::SecondOrder => "soc".to_string(),
                ConeKind::PsdTriangle(d) => format!("psd {d}"),
            };
            let _ = writeln!(out, "block {} {} rows {}", bi, kind, b.rows.len());
            for (ri, row) in b.rows.iter().enumerate() {
                let _ = writeln!(out, "  const {} {:?}", ri, row.constant);
                for (&v, &c) in &row.coeffs {
                    let _ = writeln!(out, "  a {} {} {:?}", ri, v, c);
                }
            }
        }
        out
    }
}

/// A conic solver able to consume [`ConicProgram`].
pub trait ConicBackend {
    fn name(&self) -> &'static str;
    fn capabilities(&self) -> BackendCaps;
    fn solve(&self, prog: &ConicProgram, settings: &SolveSettings) -> Result<ConicSolution, SynthError>;
}

/// Look up a backend by its CLI name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ConicBackend>, SynthError> {
    match name {
        "clarabel" => Ok(Box::new(ClarabelBackend)),
        other => Err(SynthError::InvalidSetup(format!(
            "unknown backend '{other}' (available: clarabel)"
        ))),
    }
}

/// Interior-point backend built on the Clarabel solver.
pub struct ClarabelBackend;

impl ConicBackend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn capabilities(&self) -> BackendCaps {
        BackendCaps { psd: true, soc: true, logdet: false }
    }

    fn solve(&self, prog: &ConicProgram, settings: &SolveSettings) -> Result<ConicSolution, SynthError> {
        use clarabel::algebra::CscMatrix;
        use clarabel::solver::{
            DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
        };

        let n = prog.num_vars();
        let m = prog.num_rows();

        // Constraint sense is A x + s = b with s in the cone product, so a
        // row `constant + coeffs . x in K` maps to b = constant, A = -coeffs.
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut b = Vec::with_capacity(m);
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row_idx = 0usize;
        for block in &prog.blocks {
            if block.rows.is_empty() {
                continue;
            }
            for row in &block.rows {
                for (&v, &c) in &row.coeffs {
                    cols[v].push((row_idx, -c));
                }
                b.push(row.constant);
                row_idx += 1;
            }
            let dim = block.rows.len();
            cones.push(match block.kind {
                ConeKind::Zero => SupportedConeT::ZeroConeT(dim),
                ConeKind::Nonneg => SupportedConeT::NonnegativeConeT(dim),
                ConeKind::SecondOrder => SupportedConeT::SecondOrderConeT(dim),
                ConeKind::PsdTriangle(d) => {
                    debug_assert_eq!(dim, crate::linalg::svec_len(d));
                    SupportedConeT::PSDTriangleConeT(d)
                }
            });
        }

        let mut colptr = Vec::with_capacity(n + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for col in &cols {
            // Rows were appended in increasing order per column.
            for &(r, v) in col {
                rowval.push(r);
                nzval.push(v);
            }
            colptr.push(rowval.len());
        }
        let a = CscMatrix::new(m, n, colptr, rowval, nzval);
        let p = CscMatrix::zeros((n, n));

        let mut q = vec![0.0; n];
        for (&v, &c) in &prog.objective {
            q[v] = c;
        }

        let clarabel_settings = DefaultSettings {
            verbose: settings.verbose,
            max_iter: settings.max_iter,
            tol_gap_abs: settings.gap_tol,
            tol_gap_rel: settings.gap_tol,
            tol_feas: settings.feas_tol,
            ..DefaultSettings::default()
        };

        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, clarabel_settings)
            .map_err(|e| SynthError::SolverFailure(format!("clarabel setup: {e:?}")))?;
        solver.solve();

        let status = match solver.solution.status {
            SolverStatus::Solved => SolveStatus::Optimal,
            SolverStatus::AlmostSolved => SolveStatus::AlmostOptimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::PrimalInfeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::DualInfeasible
            }
            SolverStatus::MaxIterations => SolveStatus::MaxIterations,
            _ => SolveStatus::NumericalTrouble,
        };

        Ok(ConicSolution {
            status,
            x: solver.solution.x.clone(),
            objective: solver.solution.obj_val + prog.objective_constant,
            iterations: solver.info.iterations,
            solve_time: solver.info.solve_time,
        })
    }
}
