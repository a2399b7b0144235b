//! Reception-count conditions for windowed observability, the probability
//! bounds they induce, and the compressed action interval derived from them.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::channel::{sample_receptions, ReceptionMatrix, TransmissionPlan};
use crate::dkf::Topology;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::numerical_rank;
use crate::linsys::{JordanForm, ObservabilityChecker, C64};
use crate::rng::stream;

/// Largest number of slot subsets the lower bound may enumerate.
pub const SUBSET_BUDGET: u128 = 1 << 20;
/// Entries of `G~` below this fraction of its largest entry count as zero.
pub const M_THRESHOLD: f64 = 1e-9;
const SOLVE_VALUE_TOL: f64 = 1e-10;
const SOLVE_WIDTH_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Lower,
    Upper,
}

/// The compressed action interval `[mu_lo, mu_hi]` for target `p0` and window `window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub p0: f64,
    pub window: usize,
}

impl ActionBounds {
    pub fn new(mu_lo: f64, mu_hi: f64, p0: f64, window: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu_lo) {
            return Err(Error::InvalidProbability(mu_lo));
        }
        if !(0.0..=1.0).contains(&mu_hi) {
            return Err(Error::InvalidProbability(mu_hi));
        }
        if mu_lo > mu_hi {
            return Err(Error::EmptyActionSpace { lo: mu_lo, hi: mu_hi });
        }
        Ok(Self {
            mu_lo,
            mu_hi,
            p0,
            window,
        })
    }

    /// The unconstrained interval `[0, 1]`.
    pub fn full() -> Self {
        Self {
            mu_lo: 0.0,
            mu_hi: 1.0,
            p0: 0.0,
            window: 0,
        }
    }

    pub fn width(&self) -> f64 {
        self.mu_hi - self.mu_lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.mu_lo + self.mu_hi)
    }
}

/// Quantities the bounds need for one ECU and window length.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundContext {
    zeta: usize,
    rank_g_tilde: usize,
    m_set: Vec<usize>,
    window: usize,
    neighborhood: usize,
    sensors: usize,
}

impl BoundContext {
    pub fn new(
        zeta: usize,
        rank_g_tilde: usize,
        m_set: Vec<usize>,
        window: usize,
        neighborhood: usize,
        sensors: usize,
    ) -> Result<Self> {
        if zeta == 0 || zeta > window {
            return Err(Error::InvalidBoundContext(format!(
                "window {window} shorter than observability index {zeta}"
            )));
        }
        if m_set.is_empty() {
            return Err(Error::InvalidBoundContext("empty covering sensor set".into()));
        }
        if let Some(&bad) = m_set.iter().find(|&&i| i >= sensors) {
            return Err(Error::InvalidBoundContext(format!("sensor {bad} out of range")));
        }
        if neighborhood == 0 {
            return Err(Error::InvalidBoundContext("empty neighborhood".into()));
        }
        let ctx = Self {
            zeta,
            rank_g_tilde,
            m_set,
            window,
            neighborhood,
            sensors,
        };
        if ctx.varrho() > ctx.varpi() {
            return Err(Error::InvalidBoundContext(format!(
                "success threshold {} exceeds opportunities {}",
                ctx.varrho(),
                ctx.varpi()
            )));
        }
        Ok(ctx)
    }

    /// Context of ECU `j`, with the covering set completed to ζ-step observability.
    pub fn for_ecu(jf: &JordanForm, topo: &Topology, j: usize, window: usize) -> Result<Self> {
        if j >= topo.ecu_count() {
            return Err(dim_mismatch("ECU index", format!("< {}", topo.ecu_count()), j));
        }
        let m = compute_m(jf, M_THRESHOLD)?;
        let m = complete_m_set(jf, &m);
        Self::new(
            jf.observability_index(),
            jf.rank_g_tilde(),
            m,
            window,
            topo.neighbors(j).len() + 1,
            jf.sensor_count(),
        )
    }

    pub fn zeta(&self) -> usize {
        self.zeta
    }
    pub fn rank_g_tilde(&self) -> usize {
        self.rank_g_tilde
    }
    pub fn m_set(&self) -> &[usize] {
        &self.m_set
    }
    pub fn window(&self) -> usize {
        self.window
    }
    pub fn neighborhood_size(&self) -> usize {
        self.neighborhood
    }
    pub fn sensors(&self) -> usize {
        self.sensors
    }
    /// Transmission opportunities in the window: `(|N_j| + 1) n L`.
    pub fn varpi(&self) -> usize {
        self.neighborhood * self.sensors * self.window
    }
    /// Successes required by the necessary condition: `(ζ - 1) rank(G~) + 1`.
    pub fn varrho(&self) -> usize {
        (self.zeta - 1) * self.rank_g_tilde + 1
    }
}

/// Rows of `G~` that see the first column of some Jordan block, keeping the
/// lowest such row per block.
pub fn compute_m(jf: &JordanForm, threshold: f64) -> Result<Vec<usize>> {
    let gt = jf.g_tilde();
    let scale = gt.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut out = Vec::new();
    for (b, blk) in jf.blocks().iter().enumerate() {
        let row = (0..gt.nrows()).find(|&i| gt[(i, blk.start)].norm() > threshold * scale);
        match row {
            Some(i) => out.push(i),
            None => return Err(Error::UncoveredBlock { block: b }),
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Extends `m` with further rows, lowest index first and only when they raise
/// the rank, until `(J, G~_m)` is observable within ζ steps.
pub fn complete_m_set(jf: &JordanForm, m: &[usize]) -> Vec<usize> {
    let zeta = jf.observability_index();
    let d = jf.state_dim();
    let powers = jf.observation_powers(zeta);
    let stacked = |rows: &[usize]| -> DMatrix<C64> {
        let mut out = DMatrix::<C64>::zeros(rows.len() * zeta, d);
        for (t, p) in powers.iter().enumerate() {
            for (r, &i) in rows.iter().enumerate() {
                out.row_mut(t * rows.len() + r).copy_from(&p.row(i));
            }
        }
        out
    };
    let mut set: Vec<usize> = m.to_vec();
    let mut rank = numerical_rank(&stacked(&set));
    for i in 0..jf.sensor_count() {
        if rank == d {
            break;
        }
        if set.contains(&i) {
            continue;
        }
        let mut trial = set.clone();
        trial.push(i);
        let r = numerical_rank(&stacked(&trial));
        if r > rank {
            set = trial;
            rank = r;
        }
    }
    set.sort_unstable();
    set
}

fn check_receptions(receptions: &[ReceptionMatrix], topo: &Topology, ctx: &BoundContext) -> bool {
    receptions.len() == ctx.window
        && receptions
            .iter()
            .all(|r| r.ecus() == topo.ecu_count() && r.sensors() == ctx.sensors)
}

/// Total receptions in the closed neighborhood of `j` reach `varrho`.
pub fn necessary_condition(receptions: &[ReceptionMatrix], topo: &Topology, j: usize, ctx: &BoundContext) -> bool {
    debug_assert!(check_receptions(receptions, topo, ctx));
    let hood = topo.closed_neighborhood(j);
    let count: usize = receptions
        .iter()
        .map(|r| hood.iter().map(|&i| r.row(i).iter().filter(|b| **b).count()).sum::<usize>())
        .sum();
    count >= ctx.varrho()
}

/// Some run of at least ζ consecutive slots in which every covering sensor
/// reaches at least one ECU of the closed neighborhood of `j`.
pub fn sufficient_condition(receptions: &[ReceptionMatrix], topo: &Topology, j: usize, ctx: &BoundContext) -> bool {
    debug_assert!(check_receptions(receptions, topo, ctx));
    let hood = topo.closed_neighborhood(j);
    let mut run = 0;
    for r in receptions {
        let covered = ctx
            .m_set
            .iter()
            .all(|&s| hood.iter().any(|&i| r.get(i, s)));
        run = if covered { run + 1 } else { 0 };
        if run >= ctx.zeta {
            return true;
        }
    }
    false
}

/// `mu_hat[(r, k)] = 1 - prod_i (1 - mu_(i, s, k))` over the closed
/// neighborhood, for each covering sensor `s = m_set[r]` and slot `k`.
pub fn effective_rates(plans: &[TransmissionPlan], topo: &Topology, j: usize, m_set: &[usize]) -> DMatrix<f64> {
    let hood = topo.closed_neighborhood(j);
    DMatrix::from_fn(m_set.len(), plans.len(), |r, k| {
        let miss: f64 = hood.iter().map(|&i| 1.0 - plans[k].get(i, m_set[r])).product();
        1.0 - miss
    })
}

/// Per-transmission success rates seen by ECU `j` over the window, slot-major.
pub fn transmission_rates(plans: &[TransmissionPlan], topo: &Topology, j: usize) -> Vec<f64> {
    let hood = topo.closed_neighborhood(j);
    let mut out = Vec::new();
    for p in plans {
        for &i in &hood {
            for s in 0..p.sensors() {
                out.push(p.get(i, s));
            }
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut c = 1.0_f64;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    // Exact integers below 2^53 survive rounding of the accumulated quotient.
    if c < 9.0e15 {
        c.round()
    } else {
        c
    }
}

fn subset_terms(window: usize, zeta: usize) -> u128 {
    let mut total: u128 = 0;
    for i in zeta..=window {
        let mut c: u128 = 1;
        let k = i.min(window - i);
        for t in 0..k {
            c = c.saturating_mul((window - t) as u128) / (t as u128 + 1);
        }
        total = total.saturating_add(c);
    }
    total
}

/// Lower bound from the subset formula: the sum over slot subsets of size at
/// least ζ of the probability that every covering sensor succeeds exactly on
/// that subset.
pub fn lower_bound_phi(ctx: &BoundContext, mu_hat: &DMatrix<f64>) -> Result<f64> {
    let l = ctx.window;
    if mu_hat.shape() != (ctx.m_set.len(), l) {
        return Err(dim_mismatch(
            "effective rates",
            format!("{}x{l}", ctx.m_set.len()),
            format!("{:?}", mu_hat.shape()),
        ));
    }
    if let Some(&bad) = mu_hat.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidProbability(bad));
    }
    let terms = subset_terms(l, ctx.zeta);
    if terms > SUBSET_BUDGET || l >= 64 {
        return Err(Error::EnumerationTooLarge {
            terms,
            budget: SUBSET_BUDGET,
        });
    }
    let rows = mu_hat.nrows();
    let mut total = 0.0;
    for size in ctx.zeta..=l {
        for_each_subset(l, size, |mask| {
            let mut prod = 1.0;
            for r in 0..rows {
                for k in 0..l {
                    let m = mu_hat[(r, k)];
                    prod *= if mask >> k & 1 == 1 { m } else { 1.0 - m };
                }
            }
            total += prod;
        });
    }
    Ok(total)
}

/// Calls `f` with every `size`-element subset of `0..n` as a bitmask (Gosper's hack).
fn for_each_subset(n: usize, size: usize, mut f: impl FnMut(u64)) {
    if size == 0 {
        f(0);
        return;
    }
    let limit: u64 = 1u64 << n;
    let mut s: u64 = (1u64 << size) - 1;
    while s < limit {
        f(s);
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
    }
}

/// Lower bound with the same effective rate on every covering sensor and slot.
pub fn lower_bound_phi_uniform(ctx: &BoundContext, mu_hat: f64) -> f64 {
    let l = ctx.window;
    let rows = ctx.m_set.len() as i32;
    (ctx.zeta..=l)
        .map(|i| {
            let single = mu_hat.powi(i as i32) * (1.0 - mu_hat).powi((l - i) as i32);
            binomial(l, i) * single.powi(rows)
        })
        .sum()
}

/// Probability that at least `varrho` of independent transmissions with the
/// given rates succeed (Poisson-binomial tail by dynamic programming).
pub fn upper_bound_phi(ctx: &BoundContext, rates: &[f64]) -> Result<f64> {
    if rates.len() != ctx.varpi() {
        return Err(dim_mismatch("transmission rates", ctx.varpi(), rates.len()));
    }
    if let Some(&bad) = rates.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidProbability(bad));
    }
    Ok(poisson_binomial_tail(rates, ctx.varrho()))
}

/// `P[successes >= threshold]` for independent Bernoulli trials.
pub fn poisson_binomial_tail(rates: &[f64], threshold: usize) -> f64 {
    if threshold == 0 {
        return 1.0;
    }
    if threshold > rates.len() {
        return 0.0;
    }
    // dist[c] = P[c successes so far] for c < threshold; `done` absorbs the rest.
    let mut dist = vec![0.0; threshold];
    dist[0] = 1.0;
    let mut done = 0.0;
    for &p in rates {
        done += dist[threshold - 1] * p;
        for c in (1..threshold).rev() {
            dist[c] = dist[c] * (1.0 - p) + dist[c - 1] * p;
        }
        dist[0] *= 1.0 - p;
    }
    done
}

/// `P[Bin(trials, mu) >= threshold]`, summed in log space from the far tail inward.
pub fn binomial_tail(trials: usize, mu: f64, threshold: usize) -> f64 {
    if threshold == 0 {
        return 1.0;
    }
    if threshold > trials || mu <= 0.0 {
        return 0.0;
    }
    if mu >= 1.0 {
        return 1.0;
    }
    let mut ln_fact = vec![0.0; trials + 1];
    for i in 2..=trials {
        ln_fact[i] = ln_fact[i - 1] + (i as f64).ln();
    }
    let (ln_mu, ln_miss) = (mu.ln(), (-mu).ln_1p());
    let term = |k: usize| {
        (ln_fact[trials] - ln_fact[k] - ln_fact[trials - k] + k as f64 * ln_mu + (trials - k) as f64 * ln_miss).exp()
    };
    // Sum whichever side lies away from the mode so that tails near one
    // come from a small complement.
    if (threshold as f64) <= trials as f64 * mu {
        let lower: f64 = (0..threshold).map(term).sum();
        (1.0 - lower).clamp(0.0, 1.0)
    } else {
        (threshold..=trials).rev().map(term).sum::<f64>().min(1.0)
    }
}

/// Upper bound with the same rate on every transmission.
pub fn upper_bound_phi_uniform(ctx: &BoundContext, mu: f64) -> f64 {
    binomial_tail(ctx.varpi(), mu, ctx.varrho())
}

/// Bound value when every link uses success rate `mu`.
pub fn bound_at(kind: BoundKind, ctx: &BoundContext, mu: f64) -> f64 {
    match kind {
        BoundKind::Lower => {
            let mu_hat = 1.0 - (1.0 - mu).powi(ctx.neighborhood as i32);
            lower_bound_phi_uniform(ctx, mu_hat)
        }
        BoundKind::Upper => upper_bound_phi_uniform(ctx, mu),
    }
}

/// Uniform success rate at which the bound reaches `p0`, by bisection.
pub fn solve_rate_for_target(kind: BoundKind, ctx: &BoundContext, p0: f64) -> Result<f64> {
    if !(p0 > 0.0 && p0 <= 1.0) {
        return Err(Error::InvalidProbability(p0));
    }
    let sup = bound_at(kind, ctx, 1.0);
    if sup < p0 {
        return Err(Error::TargetUnreachable {
            target: p0,
            supremum: sup,
        });
    }
    if p0 == 1.0 {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let (mut best, mut best_err) = (1.0, (sup - p0).abs());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = bound_at(kind, ctx, mid);
        let err = (f - p0).abs();
        if err < best_err {
            best = mid;
            best_err = err;
        }
        if err <= SOLVE_VALUE_TOL {
            return Ok(mid);
        }
        if f < p0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= SOLVE_WIDTH_TOL {
            break;
        }
    }
    Ok(best)
}

/// Interval endpoints: the largest per-ECU rate solving the lower bound gives
/// `mu_hi`, the largest solving the upper bound gives `mu_lo`.
pub fn action_bounds(ctxs: &[BoundContext], p0: f64) -> Result<ActionBounds> {
    let first = ctxs
        .first()
        .ok_or_else(|| Error::InvalidBoundContext("no ECU contexts".into()))?;
    let mut hi: f64 = 0.0;
    let mut lo: f64 = 0.0;
    for ctx in ctxs {
        hi = hi.max(solve_rate_for_target(BoundKind::Lower, ctx, p0)?);
        lo = lo.max(solve_rate_for_target(BoundKind::Upper, ctx, p0)?);
    }
    if lo > hi {
        return Err(Error::EmptyActionSpace { lo, hi });
    }
    Ok(ActionBounds {
        mu_lo: lo,
        mu_hi: hi,
        p0,
        window: first.window,
    })
}

/// Bound contexts of every ECU for one window length.
pub fn contexts_for(jf: &JordanForm, topo: &Topology, window: usize) -> Result<Vec<BoundContext>> {
    (0..topo.ecu_count())
        .map(|j| BoundContext::for_ecu(jf, topo, j, window))
        .collect()
}

/// Monte Carlo estimate of the probability that a window of `window` slots
/// under the constant `plan` leaves ECU `j` observable, with its standard error.
pub fn mc_observability<R: Rng + ?Sized>(
    jf: &JordanForm,
    topo: &Topology,
    j: usize,
    plan: &TransmissionPlan,
    window: usize,
    trials: usize,
    rng: &mut R,
) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 0.0);
    }
    let base: u64 = rng.random();
    let checker = ObservabilityChecker::new(jf, window);
    let hits: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut r = stream(base, t as u64);
            let seq: Vec<ReceptionMatrix> = (0..window).map(|_| sample_receptions(plan, &mut r)).collect();
            usize::from(checker.is_observable(&seq, topo, j))
        })
        .sum();
    let p = hits as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// `1 - 1 / a^(2L)` for the spectral norm `a` of the transition matrix; only
/// meaningful when `a > 1`.
pub fn stability_threshold(a: &DMatrix<f64>, window: usize) -> f64 {
    let norm = a.clone().singular_values().max();
    1.0 - 1.0 / norm.powi(2 * window as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ctx(zeta: usize, rank: usize, m: usize, window: usize, hood: usize, sensors: usize) -> BoundContext {
        BoundContext::new(zeta, rank, (0..m).collect(), window, hood, sensors).unwrap()
    }

    fn slots(window: usize, ecus: usize, sensors: usize, bits: &[&[bool]]) -> Vec<ReceptionMatrix> {
        (0..window)
            .map(|k| ReceptionMatrix::new(ecus, sensors, bits[k].to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn context_invariants() {
        assert!(BoundContext::new(3, 1, vec![0], 2, 1, 1).is_err());
        assert!(BoundContext::new(1, 1, vec![], 2, 1, 1).is_err());
        assert!(BoundContext::new(2, 5, vec![0], 2, 1, 1).is_err());
        let c = ctx(3, 10, 10, 10, 2, 10);
        assert_eq!(c.varpi(), 200);
        assert_eq!(c.varrho(), 21);
    }

    #[test]
    fn necessary_condition_examples() {
        let c = ctx(3, 1, 1, 3, 1, 3);
        let topo = Topology::isolated(1);
        let all = vec![ReceptionMatrix::filled(1, 3, true); 3];
        assert!(necessary_condition(&all, &topo, 0, &c));
        let none = vec![ReceptionMatrix::filled(1, 3, false); 3];
        assert!(!necessary_condition(&none, &topo, 0, &c));
        let three = slots(3, 1, 3, &[&[true, true, false], &[false, false, false], &[true, false, false]]);
        assert!(necessary_condition(&three, &topo, 0, &c));
        let two = slots(3, 1, 3, &[&[true, false, false], &[false, false, false], &[true, false, false]]);
        assert!(!necessary_condition(&two, &topo, 0, &c));
    }

    #[test]
    fn sufficient_condition_examples() {
        let c = ctx(2, 1, 1, 4, 1, 2);
        let topo = Topology::isolated(1);
        assert!(sufficient_condition(&vec![ReceptionMatrix::filled(1, 2, true); 4], &topo, 0, &c));
        let early = slots(4, 1, 2, &[&[true, false], &[true, false], &[false, false], &[false, false]]);
        assert!(sufficient_condition(&early, &topo, 0, &c));
        let alternating = slots(4, 1, 2, &[&[true, true], &[false, true], &[true, true], &[false, true]]);
        assert!(!sufficient_condition(&alternating, &topo, 0, &c));
    }

    #[test]
    fn neighbors_cover_for_each_other() {
        let c = BoundContext::new(1, 1, vec![0], 1, 2, 1).unwrap();
        let topo = Topology::complete(2);
        let r = vec![ReceptionMatrix::new(2, 1, vec![false, true]).unwrap()];
        assert!(sufficient_condition(&r, &topo, 0, &c));
        assert!(!sufficient_condition(&r, &Topology::isolated(2), 0, &c));
    }

    #[test]
    fn lower_bound_examples() {
        let c = ctx(1, 1, 1, 1, 1, 1);
        assert!((lower_bound_phi_uniform(&c, 0.6) - 0.6).abs() < 1e-15);
        assert!((lower_bound_phi(&c, &DMatrix::from_element(1, 1, 0.6)).unwrap() - 0.6).abs() < 1e-15);
        let c = ctx(2, 1, 2, 3, 1, 2);
        assert_eq!(lower_bound_phi_uniform(&c, 1.0), 1.0);
        // Subsets {0,1}, {0,2}, {1,2}, {0,1,2} with two covering rows.
        let one = 0.7f64 * 0.7 * 0.3;
        let want = 3.0 * one * one + 0.343f64.powi(2);
        assert!((lower_bound_phi_uniform(&c, 0.7) - want).abs() < 1e-15);
        let enumerated = lower_bound_phi(&c, &DMatrix::from_element(2, 3, 0.7)).unwrap();
        assert!((enumerated - want).abs() < 1e-15);
    }

    #[test]
    fn lower_bound_rejects_large_enumeration() {
        let c = ctx(1, 1, 1, 30, 1, 1);
        assert!(matches!(
            lower_bound_phi(&c, &DMatrix::from_element(1, 30, 0.5)),
            Err(Error::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn upper_bound_examples() {
        let c = ctx(1, 1, 1, 1, 1, 1);
        assert!((upper_bound_phi(&c, &[0.7]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(poisson_binomial_tail(&[0.2, 0.3], 0), 1.0);
        assert!((poisson_binomial_tail(&[0.5; 4], 2) - 11.0 / 16.0).abs() < 1e-15);
        assert!((binomial_tail(4, 0.5, 2) - 11.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn solver_examples() {
        let c = ctx(1, 1, 1, 1, 1, 1);
        assert!((solve_rate_for_target(BoundKind::Lower, &c, 0.95).unwrap() - 0.95).abs() < 1e-9);
        assert!((solve_rate_for_target(BoundKind::Upper, &c, 0.5).unwrap() - 0.5).abs() < 1e-9);
        let c4 = ctx(2, 1, 1, 4, 1, 1);
        assert!((solve_rate_for_target(BoundKind::Upper, &c4, 11.0 / 16.0).unwrap() - 0.5).abs() < 1e-9);
        let b = action_bounds(&[c.clone()], 0.9).unwrap();
        assert!((b.mu_lo - 0.9).abs() < 1e-9 && (b.mu_hi - 0.9).abs() < 1e-9);
        assert!(b.width().abs() < 1e-9);
        let one = action_bounds(&[c], 1.0).unwrap();
        assert_eq!((one.mu_lo, one.mu_hi), (1.0, 1.0));
    }

    #[test]
    fn effective_rate_combines_neighbors() {
        let plan = TransmissionPlan::from_row_major(2, 1, &[0.5, 0.4]).unwrap();
        let r = effective_rates(&[plan.clone()], &Topology::complete(2), 0, &[0]);
        assert!((r[(0, 0)] - 0.7).abs() < 1e-15);
        let r = effective_rates(&[plan.clone()], &Topology::isolated(2), 1, &[0]);
        assert!((r[(0, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(transmission_rates(&[plan], &Topology::complete(2), 1), vec![0.5, 0.4]);
    }

    proptest! {
        #[test]
        fn dp_matches_binomial(trials in 1usize..120, mu in 0.0f64..1.0, frac in 0.0f64..1.0) {
            let threshold = (frac * trials as f64) as usize;
            let dp = poisson_binomial_tail(&vec![mu; trials], threshold);
            prop_assert!((dp - binomial_tail(trials, mu, threshold)).abs() < 1e-12);
        }

        #[test]
        fn binomial_tail_monotone(trials in 1usize..80, mu in 0.0f64..0.99, d in 0.0f64..0.01, t in 1usize..80) {
            let t = t.min(trials);
            prop_assert!(binomial_tail(trials, mu + d, t) >= binomial_tail(trials, mu, t) - 1e-15);
            if t < trials {
                prop_assert!(binomial_tail(trials, mu, t + 1) <= binomial_tail(trials, mu, t) + 1e-15);
            }
        }

        #[test]
        fn uniform_lower_matches_enumeration(zeta in 1usize..4, extra in 0usize..4, m in 1usize..3, mu in 0.0f64..1.0) {
            let window = zeta + extra;
            let c = ctx(zeta, 1, m, window, 1, m);
            let e = lower_bound_phi(&c, &DMatrix::from_element(m, window, mu)).unwrap();
            prop_assert!((e - lower_bound_phi_uniform(&c, mu)).abs() < 1e-12);
        }

        #[test]
        fn solver_is_right_inverse(p0 in 0.05f64..0.999, zeta in 1usize..4, extra in 0usize..6) {
            let c = ctx(zeta, 2, 2, zeta + extra, 2, 3);
            for kind in [BoundKind::Lower, BoundKind::Upper] {
                let mu = solve_rate_for_target(kind, &c, p0).unwrap();
                prop_assert!((bound_at(kind, &c, mu) - p0).abs() <= 1e-9);
            }
        }
    }
}
