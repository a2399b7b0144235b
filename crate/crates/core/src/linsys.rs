//! Linear time-invariant plant, its Jordan form, and reception-masked
//! observability matrices.

use nalgebra::{ComplexField, DMatrix, DVector, Schur};
use num_complex::Complex64;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::channel::ReceptionMatrix;
use crate::dkf::Topology;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{
    condition_number, inf_norm, is_symmetric_psd, numerical_rank, rank_with_tol, to_complex,
};

pub type C64 = Complex64;

/// Eigenvalues closer than this (relative to `|A|_inf`) share a Jordan cluster.
pub const EIG_CLUSTER_TOL: f64 = 1e-6;
/// Largest accepted condition number of the Jordan transform.
pub const COND_LIMIT: f64 = 1e12;
/// Relative reconstruction tolerance for `P J P^-1 = A`.
pub const JORDAN_TOL: f64 = 1e-8;
/// Relative threshold below which eigenvalues and singular values are zero.
pub const SINGULAR_TOL: f64 = 1e-12;
/// Rank threshold for powers of the nilpotent part, scaled by `|A|^j`.
const NILPOTENT_TOL: f64 = 1e-8;
const PSD_TOL: f64 = 1e-12;

/// Plant `x' = A x + w`, `y_i = G_i x + v_i` with Gaussian noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    g: DMatrix<f64>,
    q: DMatrix<f64>,
    u_noise: Vec<f64>,
    x0_mean: DVector<f64>,
    gamma0: DMatrix<f64>,
    zeta: usize,
}

impl LtiSystem {
    pub fn new(
        a: DMatrix<f64>,
        g: DMatrix<f64>,
        q: DMatrix<f64>,
        u_noise: Vec<f64>,
        x0_mean: DVector<f64>,
        gamma0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() {
            return Err(dim_mismatch("A", "nonempty square", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if g.ncols() != d || g.nrows() == 0 {
            return Err(dim_mismatch("G", format!("n x {d}"), format!("{}x{}", g.nrows(), g.ncols())));
        }
        if q.shape() != (d, d) {
            return Err(dim_mismatch("Q", format!("{d}x{d}"), format!("{:?}", q.shape())));
        }
        if gamma0.shape() != (d, d) {
            return Err(dim_mismatch("Gamma0", format!("{d}x{d}"), format!("{:?}", gamma0.shape())));
        }
        if x0_mean.len() != d {
            return Err(dim_mismatch("x0 mean", d, x0_mean.len()));
        }
        if u_noise.len() != g.nrows() {
            return Err(dim_mismatch("observation noise", g.nrows(), u_noise.len()));
        }
        if let Some(sensor) = u_noise.iter().position(|&u| !(u > 0.0) || !u.is_finite()) {
            return Err(Error::ZeroNoiseVariance { sensor });
        }
        let sv = a.clone().singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(min > SINGULAR_TOL * max) {
            return Err(Error::SingularTransition { ratio: min / max });
        }
        if !is_symmetric_psd(&q, PSD_TOL) {
            return Err(Error::NotSymmetricPsd("process noise covariance"));
        }
        if !is_symmetric_psd(&gamma0, PSD_TOL) {
            return Err(Error::NotSymmetricPsd("initial covariance"));
        }
        let zeta = observability_index_of(&a, &g)?;
        Ok(Self {
            a,
            g,
            q,
            u_noise,
            x0_mean,
            gamma0,
            zeta,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn observation_noise(&self) -> &[f64] {
        &self.u_noise
    }
    pub fn x0_mean(&self) -> &DVector<f64> {
        &self.x0_mean
    }
    pub fn gamma0(&self) -> &DMatrix<f64> {
        &self.gamma0
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn sensor_count(&self) -> usize {
        self.g.nrows()
    }
    /// Smallest `L` for which `[G; GA; ...; GA^(L-1)]` has full column rank.
    pub fn observability_index(&self) -> usize {
        self.zeta
    }
}

pub fn observability_index(sys: &LtiSystem) -> usize {
    sys.observability_index()
}

/// Rank sweep over stacked observability matrices of `(a, g)`.
pub fn observability_index_of<T>(a: &DMatrix<T>, g: &DMatrix<T>) -> Result<usize>
where
    T: ComplexField<RealField = f64>,
{
    let d = a.nrows();
    let n = g.nrows();
    let mut stacked = DMatrix::<T>::zeros(n * d, d);
    let mut block = g.clone();
    let mut rank = 0;
    for l in 1..=d {
        stacked.rows_mut((l - 1) * n, n).copy_from(&block);
        rank = numerical_rank(&stacked.rows(0, l * n).into_owned());
        if rank == d {
            return Ok(l);
        }
        block = &block * a;
    }
    Err(Error::NotObservable { rank, dim: d })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JordanBlock {
    pub start: usize,
    pub size: usize,
    pub eigenvalue: C64,
}

/// `A = P J P^-1` with `J` block diagonal in Jordan blocks, and `G~ = G P`.
#[derive(Debug, Clone)]
pub struct JordanForm {
    p: DMatrix<C64>,
    p_inv: DMatrix<C64>,
    j: DMatrix<C64>,
    blocks: Vec<JordanBlock>,
    g_tilde: DMatrix<C64>,
    zeta: usize,
    rank_g_tilde: usize,
    cond: f64,
    residual: f64,
}

impl JordanForm {
    pub fn transform(&self) -> &DMatrix<C64> {
        &self.p
    }
    pub fn transform_inverse(&self) -> &DMatrix<C64> {
        &self.p_inv
    }
    pub fn jordan(&self) -> &DMatrix<C64> {
        &self.j
    }
    pub fn blocks(&self) -> &[JordanBlock] {
        &self.blocks
    }
    pub fn g_tilde(&self) -> &DMatrix<C64> {
        &self.g_tilde
    }
    pub fn state_dim(&self) -> usize {
        self.j.nrows()
    }
    pub fn sensor_count(&self) -> usize {
        self.g_tilde.nrows()
    }
    /// Observability index of `(J, G~)`.
    pub fn observability_index(&self) -> usize {
        self.zeta
    }
    pub fn rank_g_tilde(&self) -> usize {
        self.rank_g_tilde
    }
    pub fn condition_number(&self) -> f64 {
        self.cond
    }
    /// `|P J P^-1 - A|_inf / |A|_inf`.
    pub fn relative_residual(&self) -> f64 {
        self.residual
    }
    /// `G~ J^t` for `t = 0..len`.
    pub fn observation_powers(&self, len: usize) -> Vec<DMatrix<C64>> {
        let mut out = Vec::with_capacity(len);
        let mut cur = self.g_tilde.clone();
        for _ in 0..len {
            let next = &cur * &self.j;
            out.push(cur);
            cur = next;
        }
        out
    }
}

pub fn jordanize(sys: &LtiSystem) -> Result<JordanForm> {
    let dec = jordan_decomposition(sys.a())?;
    let g_tilde = to_complex(sys.g()) * &dec.p;
    let zeta = observability_index_of(&dec.j, &g_tilde)?;
    let rank_g_tilde = numerical_rank(&g_tilde);
    Ok(JordanForm {
        p: dec.p,
        p_inv: dec.p_inv,
        j: dec.j,
        blocks: dec.blocks,
        g_tilde,
        zeta,
        rank_g_tilde,
        cond: dec.cond,
        residual: dec.residual,
    })
}

#[derive(Debug, Clone)]
pub struct JordanDecomposition {
    pub p: DMatrix<C64>,
    pub p_inv: DMatrix<C64>,
    pub j: DMatrix<C64>,
    pub blocks: Vec<JordanBlock>,
    pub cond: f64,
    pub residual: f64,
}

/// Jordan decomposition of a real matrix.
///
/// The matrix is permuted to block upper-triangular form along the strongly
/// connected components of its sparsity graph, each diagonal block is reduced
/// by a complex Schur decomposition, and the clustered invariant subspaces of
/// the resulting triangular matrix are found by back substitution. Chains are
/// then built inside each cluster from the kernels of powers of its nilpotent
/// part. Dense defective matrices usually fail the conditioning check.
pub fn jordan_decomposition(a: &DMatrix<f64>) -> Result<JordanDecomposition> {
    let d = a.nrows();
    if d == 0 || !a.is_square() {
        return Err(dim_mismatch("A", "nonempty square", format!("{:?}", a.shape())));
    }
    let norm = inf_norm(a);
    if norm == 0.0 {
        return Err(Error::ZeroEigenvalue { magnitude: 0.0 });
    }

    let (perm, comps) = block_triangular_order(a);
    let ap = DMatrix::from_fn(d, d, |r, c| C64::new(a[(perm[r], perm[c])], 0.0));
    let mut u = DMatrix::<C64>::zeros(d, d);
    for &(start, len) in &comps {
        if len == 1 {
            u[(start, start)] = C64::new(1.0, 0.0);
            continue;
        }
        let blk = ap.view((start, start), (len, len)).into_owned();
        let schur = Schur::try_new(blk, f64::EPSILON, 1000 * len)
            .ok_or(Error::NoConvergence("Schur decomposition"))?;
        let (z, _) = schur.unpack();
        u.view_mut((start, start), (len, len)).copy_from(&z);
    }
    let mut t = u.adjoint() * &ap * &u;
    for r in 0..d {
        for c in 0..r {
            t[(r, c)] = C64::new(0.0, 0.0);
        }
    }

    let clusters = cluster_diagonal(&t, EIG_CLUSTER_TOL * norm);
    for cl in &clusters {
        let mean = cl.iter().map(|&i| t[(i, i)]).sum::<C64>() / cl.len() as f64;
        if mean.norm() <= SINGULAR_TOL * norm {
            return Err(Error::ZeroEigenvalue { magnitude: mean.norm() });
        }
        for &i in cl {
            t[(i, i)] = mean;
        }
    }

    let mut cols: Vec<DVector<C64>> = Vec::with_capacity(d);
    let mut blocks = Vec::new();
    for cl in &clusters {
        let lambda = t[(cl[0], cl[0])];
        let (phi, t_lambda) = invariant_subspace(&t, cl)?;
        let k = cl.len();
        let nil = &t_lambda - DMatrix::<C64>::identity(k, k) * lambda;
        for chain in jordan_chains(&nil, norm)? {
            let mapped: Vec<DVector<C64>> = chain.iter().map(|v| &u * (&phi * v)).collect();
            let scale = mapped[0].norm();
            if scale == 0.0 {
                return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
            }
            blocks.push(JordanBlock {
                start: cols.len(),
                size: mapped.len(),
                eigenvalue: lambda,
            });
            for v in mapped {
                let mut full = DVector::<C64>::zeros(d);
                for (r, val) in v.iter().enumerate() {
                    full[perm[r]] = *val / scale;
                }
                cols.push(full);
            }
        }
    }
    if cols.len() != d {
        return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
    }

    let p = DMatrix::from_columns(&cols);
    let mut j = DMatrix::<C64>::zeros(d, d);
    for b in &blocks {
        for i in 0..b.size {
            j[(b.start + i, b.start + i)] = b.eigenvalue;
            if i + 1 < b.size {
                j[(b.start + i, b.start + i + 1)] = C64::new(1.0, 0.0);
            }
        }
    }
    let cond = condition_number(&p);
    if !(cond <= COND_LIMIT) {
        return Err(Error::IllConditionedTransform { cond });
    }
    let p_inv = p
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditionedTransform { cond })?;
    let recon = &p * &j * &p_inv - to_complex(a);
    let residual = inf_norm(&recon) / norm;
    if !(residual <= JORDAN_TOL) {
        return Err(Error::InaccurateDecomposition { residual });
    }
    Ok(JordanDecomposition {
        p,
        p_inv,
        j,
        blocks,
        cond,
        residual,
    })
}

/// Permutation that makes `a` block upper triangular, with the diagonal
/// blocks as `(start, len)` in the permuted order.
fn block_triangular_order(a: &DMatrix<f64>) -> (Vec<usize>, Vec<(usize, usize)>) {
    let d = a.nrows();
    let mut graph = DiGraph::<usize, ()>::with_capacity(d, d * d);
    let nodes: Vec<_> = (0..d).map(|i| graph.add_node(i)).collect();
    for r in 0..d {
        for c in 0..d {
            if r != c && a[(r, c)] != 0.0 {
                graph.add_edge(nodes[r], nodes[c], ());
            }
        }
    }
    // Tarjan emits components in reverse topological order.
    let mut sccs = tarjan_scc(&graph);
    sccs.reverse();
    let mut perm = Vec::with_capacity(d);
    let mut comps = Vec::with_capacity(sccs.len());
    for scc in sccs {
        let mut members: Vec<usize> = scc.iter().map(|n| graph[*n]).collect();
        members.sort_unstable();
        comps.push((perm.len(), members.len()));
        perm.extend(members);
    }
    (perm, comps)
}

/// Groups diagonal positions whose values are transitively within `tol`.
fn cluster_diagonal(t: &DMatrix<C64>, tol: f64) -> Vec<Vec<usize>> {
    let d = t.nrows();
    let mut parent: Vec<usize> = (0..d).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (t[(i, i)] - t[(j, j)]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut index_of_root = vec![usize::MAX; d];
    for i in 0..d {
        let r = find(&mut parent, i);
        if index_of_root[r] == usize::MAX {
            index_of_root[r] = clusters.len();
            clusters.push(Vec::new());
        }
        clusters[index_of_root[r]].push(i);
    }
    clusters
}

/// Basis `Phi` (d x k) of the invariant subspace of upper-triangular `t`
/// belonging to the diagonal positions `s`, with `t Phi = Phi T_s`.
///
/// Row `r` of `Phi` is the unit vector of its slot when `r` is in `s`, and is
/// otherwise the solution of `Phi[r] (T_s - t[r,r]) = sum_{c>r} t[r,c] Phi[c]`.
fn invariant_subspace(t: &DMatrix<C64>, s: &[usize]) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    let d = t.nrows();
    let k = s.len();
    let mut slot = vec![usize::MAX; d];
    for (i, &r) in s.iter().enumerate() {
        slot[r] = i;
    }
    let zero = C64::new(0.0, 0.0);
    let mut phi = DMatrix::<C64>::zeros(d, k);
    let mut ts = DMatrix::<C64>::zeros(k, k);
    for r in (0..d).rev() {
        let mut rhs = vec![zero; k];
        for c in (r + 1)..d {
            let trc = t[(r, c)];
            if trc == zero {
                continue;
            }
            for (q, acc) in rhs.iter_mut().enumerate() {
                *acc += trc * phi[(c, q)];
            }
        }
        if slot[r] != usize::MAX {
            let q = slot[r];
            phi[(r, q)] = C64::new(1.0, 0.0);
            for (col, v) in rhs.iter().enumerate() {
                ts[(q, col)] = *v;
            }
            ts[(q, q)] += t[(r, r)];
        } else {
            let trr = t[(r, r)];
            let mut x = vec![zero; k];
            for col in 0..k {
                let mut acc = rhs[col];
                for (i, xi) in x.iter().enumerate().take(col) {
                    acc -= *xi * ts[(i, col)];
                }
                let diag = ts[(col, col)] - trr;
                if diag == zero {
                    if acc != zero {
                        return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
                    }
                    x[col] = zero;
                } else {
                    x[col] = acc / diag;
                }
            }
            for (col, v) in x.into_iter().enumerate() {
                phi[(r, col)] = v;
            }
        }
    }
    Ok((phi, ts))
}

/// Orthonormal basis of the numerical kernel of square `m`, singular values
/// at or below `abs_tol` treated as zero.
fn kernel_basis(m: &DMatrix<C64>, abs_tol: f64) -> Vec<DVector<C64>> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested");
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= abs_tol)
        .map(|(i, _)| vt.row(i).adjoint())
        .collect()
}

/// Orthonormal basis of the column span of `vs`.
fn span_basis(vs: &[DVector<C64>], dim: usize) -> Vec<DVector<C64>> {
    if vs.is_empty() {
        return Vec::new();
    }
    let m = DMatrix::from_columns(vs);
    let svd = m.svd(true, false);
    let u = svd.u.expect("requested");
    let max = svd.singular_values.max();
    let mut out = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s > 1e-10 * max && i < u.ncols() {
            out.push(u.column(i).into_owned());
        }
    }
    debug_assert!(out.len() <= dim);
    out
}

/// Jordan chains `[N^(s-1) x, ..., N x, x]` of a nilpotent `nil`, longest first.
fn jordan_chains(nil: &DMatrix<C64>, norm: f64) -> Result<Vec<Vec<DVector<C64>>>> {
    let k = nil.nrows();
    let mut ranks = vec![k];
    let mut powers = vec![DMatrix::<C64>::identity(k, k)];
    while *ranks.last().unwrap() > 0 {
        let j = ranks.len();
        if j > k {
            return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
        }
        let next = &powers[j - 1] * nil;
        let tol = NILPOTENT_TOL * norm.powi(j as i32);
        let sv = next.clone().singular_values();
        ranks.push(sv.iter().filter(|&&s| s > tol).count());
        powers.push(next);
    }
    let top = ranks.len() - 1;
    let rank_at = |s: usize| if s <= top { ranks[s] } else { 0 };
    let mut chains: Vec<Vec<DVector<C64>>> = Vec::new();
    for size in (1..=top).rev() {
        let at_least = rank_at(size - 1) - rank_at(size);
        let longer = rank_at(size) - rank_at(size + 1);
        if at_least < longer {
            return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
        }
        let count = at_least - longer;
        if count == 0 {
            continue;
        }
        let tol = |s: usize| NILPOTENT_TOL * norm.powi(s as i32);
        let ker_s = kernel_basis(&powers[size], tol(size));
        let mut avoid: Vec<DVector<C64>> = if size > 1 {
            kernel_basis(&powers[size - 1], tol(size - 1))
        } else {
            Vec::new()
        };
        for ch in &chains {
            avoid.push(ch[size - 1].clone());
        }
        let q = span_basis(&avoid, k);
        let mut proj_cols = Vec::with_capacity(ker_s.len());
        for v in &ker_s {
            let mut p = v.clone();
            for b in &q {
                let c = b.dotc(&p);
                p -= b * c;
            }
            proj_cols.push(p);
        }
        if proj_cols.is_empty() {
            return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
        }
        let proj = DMatrix::from_columns(&proj_cols);
        let svd = proj.svd(true, false);
        let u = svd.u.expect("requested");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
        if order.len() < count {
            return Err(Error::IllConditionedTransform { cond: f64::INFINITY });
        }
        for &idx in order.iter().take(count) {
            let x = u.column(idx).into_owned();
            let mut chain = vec![x];
            for _ in 1..size {
                let next = nil * chain.last().unwrap();
                chain.push(next);
            }
            chain.reverse();
            chains.push(chain);
        }
    }
    Ok(chains)
}

/// Reception-masked observability matrix of ECU `j` over the window
/// `receptions`: block `t` stacks `C_(i,t) G~ J^t` for every ECU `i` in the
/// closed neighborhood of `j`, in ascending ECU order.
pub fn observability_matrix(
    jf: &JordanForm,
    receptions: &[ReceptionMatrix],
    topo: &Topology,
    j: usize,
) -> Result<DMatrix<C64>> {
    check_window(jf, receptions, topo, j)?;
    let n = jf.sensor_count();
    let d = jf.state_dim();
    let hood = topo.closed_neighborhood(j);
    let powers = jf.observation_powers(receptions.len());
    let rows_per_slot = hood.len() * n;
    let mut o = DMatrix::<C64>::zeros(rows_per_slot * receptions.len(), d);
    for (t, (rec, gj)) in receptions.iter().zip(&powers).enumerate() {
        for (h, &ecu) in hood.iter().enumerate() {
            for s in 0..n {
                if rec.get(ecu, s) {
                    o.row_mut(t * rows_per_slot + h * n + s).copy_from(&gj.row(s));
                }
            }
        }
    }
    Ok(o)
}

pub fn is_l_step_observable(
    jf: &JordanForm,
    receptions: &[ReceptionMatrix],
    topo: &Topology,
    j: usize,
) -> Result<bool> {
    let o = observability_matrix(jf, receptions, topo, j)?;
    Ok(numerical_rank(&o) == jf.state_dim())
}

fn check_window(
    jf: &JordanForm,
    receptions: &[ReceptionMatrix],
    topo: &Topology,
    j: usize,
) -> Result<()> {
    if receptions.is_empty() {
        return Err(dim_mismatch("reception window", ">= 1 slot", 0));
    }
    if j >= topo.ecu_count() {
        return Err(dim_mismatch("ECU index", format!("< {}", topo.ecu_count()), j));
    }
    for r in receptions {
        if r.ecus() != topo.ecu_count() || r.sensors() != jf.sensor_count() {
            return Err(dim_mismatch(
                "reception matrix",
                format!("{}x{}", topo.ecu_count(), jf.sensor_count()),
                format!("{}x{}", r.ecus(), r.sensors()),
            ));
        }
    }
    Ok(())
}

/// Rank tests over many windows of one length, reusing `G~ J^t`.
///
/// Only distinct received rows enter the factorization; duplicates and zero
/// rows of the full observability matrix do not change its rank.
#[derive(Debug, Clone)]
pub struct ObservabilityChecker {
    powers: Vec<DMatrix<C64>>,
    d: usize,
    n: usize,
}

impl ObservabilityChecker {
    pub fn new(jf: &JordanForm, window: usize) -> Self {
        Self {
            powers: jf.observation_powers(window),
            d: jf.state_dim(),
            n: jf.sensor_count(),
        }
    }

    pub fn window(&self) -> usize {
        self.powers.len()
    }

    pub fn rank(&self, receptions: &[ReceptionMatrix], topo: &Topology, j: usize) -> usize {
        let hood = topo.closed_neighborhood(j);
        let mut rows: Vec<(usize, usize)> = Vec::new();
        for (t, rec) in receptions.iter().enumerate().take(self.powers.len()) {
            for s in 0..self.n {
                if hood.iter().any(|&e| rec.get(e, s)) {
                    rows.push((t, s));
                }
            }
        }
        if rows.is_empty() {
            return 0;
        }
        let m = DMatrix::from_fn(rows.len(), self.d, |r, c| {
            let (t, s) = rows[r];
            self.powers[t][(s, c)]
        });
        rank_with_tol(&m, crate::linalg::RANK_TOL)
    }

    pub fn is_observable(&self, receptions: &[ReceptionMatrix], topo: &Topology, j: usize) -> bool {
        self.rank(receptions, topo, j) == self.d
    }
}
