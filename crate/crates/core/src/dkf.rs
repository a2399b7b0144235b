//! Distributed Kalman filtering in information form with one neighbor
//! exchange per slot.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::channel::ReceptionMatrix;
use crate::error::{dim_mismatch, Error, Result};
use crate::linalg::{spd_inverse, symmetrize, trace};
use crate::linsys::LtiSystem;

/// Undirected ECU graph without self loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<Vec<bool>>,
    neighbors: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(adjacency: Vec<Vec<bool>>) -> Result<Self> {
        let m = adjacency.len();
        if m == 0 {
            return Err(Error::InvalidTopology("no ECUs".into()));
        }
        for (i, row) in adjacency.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidTopology(format!("row {i} has {} entries, expected {m}", row.len())));
            }
            if row[i] {
                return Err(Error::InvalidTopology(format!("self loop at ECU {i}")));
            }
            for (j, &v) in row.iter().enumerate() {
                if adjacency[j][i] != v {
                    return Err(Error::InvalidTopology(format!("edge ({i}, {j}) is not symmetric")));
                }
            }
        }
        let neighbors = adjacency
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j).collect())
            .collect();
        Ok(Self {
            adjacency,
            neighbors,
        })
    }

    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![vec![false; m]; m];
        for &(a, b) in edges {
            if a >= m || b >= m {
                return Err(Error::InvalidTopology(format!("edge ({a}, {b}) out of range")));
            }
            adj[a][b] = true;
            adj[b][a] = true;
        }
        Self::new(adj)
    }

    pub fn complete(m: usize) -> Self {
        let adj = (0..m).map(|i| (0..m).map(|j| i != j).collect()).collect();
        Self::new(adj).expect("complete graph is valid")
    }

    pub fn isolated(m: usize) -> Self {
        Self::new(vec![vec![false; m]; m]).expect("empty graph is valid")
    }

    pub fn ring(m: usize) -> Self {
        let mut adj = vec![vec![false; m]; m];
        if m > 1 {
            for i in 0..m {
                let j = (i + 1) % m;
                if i != j {
                    adj[i][j] = true;
                    adj[j][i] = true;
                }
            }
        }
        Self::new(adj).expect("ring is valid")
    }

    pub fn ecu_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn adjacency(&self) -> &[Vec<bool>] {
        &self.adjacency
    }

    pub fn neighbors(&self, j: usize) -> &[usize] {
        &self.neighbors[j]
    }

    /// Neighbors of `j` together with `j`, ascending.
    pub fn closed_neighborhood(&self, j: usize) -> Vec<usize> {
        let mut v = self.neighbors[j].clone();
        v.push(j);
        v.sort_unstable();
        v
    }

    /// Row `j` of `I + H` as a mask.
    pub fn theta(&self, j: usize) -> Vec<bool> {
        (0..self.ecu_count()).map(|i| i == j || self.adjacency[j][i]).collect()
    }
}

/// One ECU's covariances and estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct EcuBelief {
    pub p_pred: DMatrix<f64>,
    pub p_post: DMatrix<f64>,
    pub x_hat: DVector<f64>,
}

impl EcuBelief {
    pub fn initial(x0_mean: &DVector<f64>, gamma0: &DMatrix<f64>) -> Self {
        Self {
            p_pred: gamma0.clone(),
            p_post: gamma0.clone(),
            x_hat: x0_mean.clone(),
        }
    }
}

/// Information matrix and vector contributed by received observations.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoPair {
    pub info: DMatrix<f64>,
    pub vector: DVector<f64>,
}

impl InfoPair {
    pub fn zeros(d: usize) -> Self {
        Self {
            info: DMatrix::zeros(d, d),
            vector: DVector::zeros(d),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.info.iter().all(|v| *v == 0.0) && self.vector.iter().all(|v| *v == 0.0)
    }

    fn add_assign(&mut self, other: &InfoPair) {
        self.info += &other.info;
        self.vector += &other.vector;
    }
}

/// Information from the sensors ECU `received` marks, `G_i^T G_i / U_i` and
/// `G_i^T y_i / U_i` summed over them; unreceived readings are ignored.
pub fn local_preprocess(sys: &LtiSystem, received: &[bool], y_obs: &DVector<f64>) -> Result<InfoPair> {
    let n = sys.sensor_count();
    let d = sys.state_dim();
    if received.len() != n {
        return Err(dim_mismatch("reception row", n, received.len()));
    }
    if y_obs.len() != n {
        return Err(dim_mismatch("observation vector", n, y_obs.len()));
    }
    let mut pair = InfoPair::zeros(d);
    for (i, &got) in received.iter().enumerate() {
        if !got {
            continue;
        }
        let u = sys.observation_noise()[i];
        if !(u > 0.0) {
            return Err(Error::ZeroNoiseVariance { sensor: i });
        }
        let gi = sys.g().row(i).transpose();
        pair.info.ger(1.0 / u, &gi, &gi, 1.0);
        pair.vector.axpy(y_obs[i] / u, &gi, 1.0);
    }
    Ok(pair)
}

/// Sum of the pairs of `j` and its neighbors.
pub fn fuse_neighbors(pairs: &[InfoPair], topo: &Topology, j: usize) -> Result<InfoPair> {
    if pairs.len() != topo.ecu_count() {
        return Err(dim_mismatch("information pairs", topo.ecu_count(), pairs.len()));
    }
    let mut fused = pairs[j].clone();
    for &i in topo.neighbors(j) {
        fused.add_assign(&pairs[i]);
    }
    Ok(fused)
}

/// Time update `P = A P A^T + Q`, `x = A x - u`.
pub fn predict(belief: &EcuBelief, sys: &LtiSystem, input: Option<&DVector<f64>>) -> EcuBelief {
    let a = sys.a();
    let mut p_pred = a * &belief.p_post * a.transpose() + sys.process_noise();
    symmetrize(&mut p_pred);
    let mut x = a * &belief.x_hat;
    if let Some(u) = input {
        x -= u;
    }
    EcuBelief {
        p_pred: p_pred.clone(),
        p_post: p_pred,
        x_hat: x,
    }
}

/// Measurement update `P = (P_pred^-1 + S)^-1`, `x = P (P_pred^-1 x + y)`.
pub fn update(belief: &EcuBelief, fused: &InfoPair) -> Result<EcuBelief> {
    if fused.is_zero() {
        return Ok(EcuBelief {
            p_pred: belief.p_pred.clone(),
            p_post: belief.p_pred.clone(),
            x_hat: belief.x_hat.clone(),
        });
    }
    let prior_info = spd_inverse(&belief.p_pred)?;
    let mut total = &prior_info + &fused.info;
    symmetrize(&mut total);
    let p_post = spd_inverse(&total)?;
    let x_hat = &p_post * (&prior_info * &belief.x_hat + &fused.vector);
    Ok(EcuBelief {
        p_pred: belief.p_pred.clone(),
        p_post,
        x_hat,
    })
}

/// All ECUs' beliefs advanced together, one slot at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct DkfNetwork {
    beliefs: Vec<EcuBelief>,
}

impl DkfNetwork {
    pub fn new(sys: &LtiSystem, ecus: usize) -> Self {
        Self::from_beliefs(vec![EcuBelief::initial(sys.x0_mean(), sys.gamma0()); ecus])
    }

    pub fn from_beliefs(beliefs: Vec<EcuBelief>) -> Self {
        Self { beliefs }
    }

    pub fn beliefs(&self) -> &[EcuBelief] {
        &self.beliefs
    }

    pub fn into_beliefs(self) -> Vec<EcuBelief> {
        self.beliefs
    }

    pub fn step(
        &mut self,
        sys: &LtiSystem,
        topo: &Topology,
        receptions: &ReceptionMatrix,
        y_obs: &DVector<f64>,
        input: Option<&DVector<f64>>,
    ) -> Result<()> {
        let m = topo.ecu_count();
        if self.beliefs.len() != m || receptions.ecus() != m || receptions.sensors() != sys.sensor_count() {
            return Err(dim_mismatch(
                "DKF slot",
                format!("{m} ECUs x {} sensors", sys.sensor_count()),
                format!("{} beliefs, {}x{} receptions", self.beliefs.len(), receptions.ecus(), receptions.sensors()),
            ));
        }
        let pairs = (0..m)
            .map(|j| local_preprocess(sys, receptions.row(j), y_obs))
            .collect::<Result<Vec<_>>>()?;
        let mut next = Vec::with_capacity(m);
        for j in 0..m {
            let fused = fuse_neighbors(&pairs, topo, j)?;
            let prior = predict(&self.beliefs[j], sys, input);
            next.push(update(&prior, &fused)?);
        }
        self.beliefs = next;
        Ok(())
    }
}

/// One row of a filter trajectory dump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DkfRecord {
    pub k: usize,
    pub ecu: usize,
    pub trace: f64,
    pub receptions: String,
}

impl DkfRecord {
    pub fn collect(k: usize, beliefs: &[EcuBelief], receptions: &ReceptionMatrix) -> Vec<Self> {
        beliefs
            .iter()
            .enumerate()
            .map(|(ecu, b)| Self {
                k,
                ecu,
                trace: trace(&b.p_post),
                receptions: receptions.row_bits(ecu),
            })
            .collect()
    }
}

pub fn write_trajectory<W: Write>(records: &[DkfRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::min_symmetric_eigenvalue;
    use proptest::prelude::*;

    fn system(a: DMatrix<f64>, g: DMatrix<f64>, q: DMatrix<f64>, u: f64) -> LtiSystem {
        let d = a.nrows();
        let n = g.nrows();
        LtiSystem::new(a, g, q, vec![u; n], DVector::zeros(d), DMatrix::identity(d, d)).unwrap()
    }

    fn small() -> LtiSystem {
        let a = DMatrix::from_row_slice(3, 3, &[0.9, 0.1, 0.0, 0.0, 0.8, 0.2, 0.1, 0.0, 0.7]);
        system(a, DMatrix::identity(3, 3), DMatrix::identity(3, 3) * 0.1, 0.01)
    }

    #[test]
    fn topology_validation() {
        assert!(Topology::new(vec![vec![false, true], vec![false, false]]).is_err());
        assert!(Topology::new(vec![vec![true]]).is_err());
        let t = Topology::ring(3);
        assert_eq!(t.neighbors(0), &[1, 2]);
        assert_eq!(t.closed_neighborhood(1), vec![0, 1, 2]);
        assert_eq!(Topology::complete(2).theta(0), vec![true, true]);
        assert_eq!(Topology::isolated(2).theta(1), vec![false, true]);
    }

    #[test]
    fn no_receptions_give_zero_information() {
        let s = small();
        let p = local_preprocess(&s, &[false; 3], &DVector::from_element(3, 5.0)).unwrap();
        assert!(p.is_zero());
    }

    #[test]
    fn single_sensor_information() {
        let a = DMatrix::identity(2, 2) * 0.9;
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let s = system(a, g, DMatrix::identity(2, 2), 0.01);
        let p = local_preprocess(&s, &[true, false], &DVector::from_vec(vec![2.0, 7.0])).unwrap();
        assert!((p.info[(0, 0)] - 100.0).abs() < 1e-12);
        assert_eq!(p.info[(1, 1)], 0.0);
        assert!((p.vector[0] - 200.0).abs() < 1e-10);
        assert_eq!(p.vector[1], 0.0);
    }

    #[test]
    fn full_reception_matches_dense_product() {
        let s = small();
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let p = local_preprocess(&s, &[true; 3], &y).unwrap();
        let r_inv = DMatrix::identity(3, 3) * 100.0;
        let want = s.g().transpose() * &r_inv * s.g();
        assert!((p.info - want).amax() < 1e-12);
        let want_v = s.g().transpose() * &r_inv * &y;
        assert!((p.vector - want_v).amax() < 1e-12);
    }

    #[test]
    fn fusion_examples() {
        let mk = |v: f64| InfoPair {
            info: DMatrix::identity(2, 2) * v,
            vector: DVector::from_element(2, v),
        };
        let pairs = vec![mk(1.0), mk(2.0), mk(4.0)];
        let iso = fuse_neighbors(&pairs, &Topology::isolated(3), 1).unwrap();
        assert_eq!(iso, pairs[1]);
        let line = Topology::from_edges(3, &[(0, 1)]).unwrap();
        let f = fuse_neighbors(&pairs, &line, 0).unwrap();
        assert_eq!(f.info[(0, 0)], 3.0);
        let ring = fuse_neighbors(&pairs, &Topology::ring(3), 0).unwrap();
        assert_eq!(ring.vector[1], 7.0);
        let c = Topology::complete(2);
        assert_eq!(fuse_neighbors(&pairs[..2], &c, 0).unwrap(), fuse_neighbors(&pairs[..2], &c, 1).unwrap());
    }

    #[test]
    fn predict_examples() {
        let s = system(DMatrix::identity(2, 2), DMatrix::identity(2, 2), DMatrix::zeros(2, 2), 1.0);
        let b = EcuBelief::initial(&DVector::zeros(2), &(DMatrix::identity(2, 2) * 3.0));
        assert_eq!(predict(&b, &s, None).p_pred, b.p_post);
        let s = system(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2), DMatrix::zeros(2, 2), 1.0);
        let b = EcuBelief::initial(&DVector::from_vec(vec![1.0, 1.0]), &DMatrix::identity(2, 2));
        let p = predict(&b, &s, Some(&DVector::from_vec(vec![0.5, 0.0])));
        assert_eq!(p.p_pred, DMatrix::identity(2, 2) * 4.0);
        assert_eq!(p.x_hat, DVector::from_vec(vec![1.5, 2.0]));
    }

    #[test]
    fn update_examples() {
        let b = EcuBelief::initial(&DVector::from_vec(vec![1.0, 2.0]), &DMatrix::identity(2, 2));
        let same = update(&b, &InfoPair::zeros(2)).unwrap();
        assert_eq!(same.p_post, b.p_pred);
        assert_eq!(same.x_hat, b.x_hat);
        let half = update(
            &b,
            &InfoPair {
                info: DMatrix::identity(2, 2),
                vector: DVector::zeros(2),
            },
        )
        .unwrap();
        assert!((half.p_post - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
        assert!((half.x_hat - DVector::from_vec(vec![0.5, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn singular_prior_with_information_fails() {
        let b = EcuBelief::initial(&DVector::zeros(2), &DMatrix::zeros(2, 2));
        let r = update(
            &b,
            &InfoPair {
                info: DMatrix::identity(2, 2),
                vector: DVector::zeros(2),
            },
        );
        assert!(matches!(r, Err(Error::SingularCovariance)));
    }

    #[test]
    fn complete_graph_consensus() {
        let s = small();
        let topo = Topology::complete(2);
        let mut net = DkfNetwork::new(&s, 2);
        let rec = ReceptionMatrix::new(2, 3, vec![true, false, true, false, true, false]).unwrap();
        for _ in 0..5 {
            net.step(&s, &topo, &rec, &DVector::from_element(3, 1.0), None).unwrap();
        }
        let b = net.beliefs();
        assert!((&b[0].p_post - &b[1].p_post).amax() <= 1e-12);
    }

    #[test]
    fn trajectory_dump_layout() {
        let s = small();
        let mut net = DkfNetwork::new(&s, 1);
        let rec = ReceptionMatrix::new(1, 3, vec![true, false, true]).unwrap();
        net.step(&s, &Topology::isolated(1), &rec, &DVector::zeros(3), None).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&DkfRecord::collect(1, net.beliefs(), &rec), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,ecu,trace,receptions\n1,0,"));
        assert!(text.trim_end().ends_with(",101"));
    }

    proptest! {
        #[test]
        fn more_sensors_never_increase_trace(mask in 0u8..8, extra in 0usize..3) {
            let s = small();
            let prior = predict(&EcuBelief::initial(&DVector::zeros(3), &DMatrix::identity(3, 3)), &s, None);
            let base: Vec<bool> = (0..3).map(|i| mask >> i & 1 == 1).collect();
            let mut more = base.clone();
            more[extra] = true;
            let y = DVector::zeros(3);
            let p1 = update(&prior, &local_preprocess(&s, &base, &y).unwrap()).unwrap();
            let p2 = update(&prior, &local_preprocess(&s, &more, &y).unwrap()).unwrap();
            prop_assert!(trace(&p2.p_post) <= trace(&p1.p_post) + 1e-12);
        }

        #[test]
        fn posterior_below_prior_and_symmetric(mask in 0u8..8, scale in 0.1f64..10.0) {
            let s = small();
            let b = EcuBelief::initial(&DVector::zeros(3), &(DMatrix::identity(3, 3) * scale));
            let prior = predict(&b, &s, None);
            let rec: Vec<bool> = (0..3).map(|i| mask >> i & 1 == 1).collect();
            let post = update(&prior, &local_preprocess(&s, &rec, &DVector::zeros(3)).unwrap()).unwrap();
            prop_assert_eq!(post.p_post.clone(), post.p_post.transpose());
            prop_assert!(min_symmetric_eigenvalue(&(&prior.p_pred - &post.p_post)) >= -1e-10 * scale);
        }
    }
}
