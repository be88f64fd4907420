//! Hierarchical structure learning over prototypes.
//!
//! Data prototypes are flattened (class labels ignored) and grouped into
//! triplets `(i, j, k)` with `j` among the `K` nearest neighbours of `i` and
//! `k` outside that neighbourhood. For each triplet an ancestor `ρ_ij` of the
//! pair and a higher ancestor `ρ_ijk` of `ρ_ij` and `p_k` are picked among the
//! top prototypes, and a margin loss makes `ρ_ij` the closer ancestor for
//! `i` and `j` while `ρ_ijk` is closer for `k`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, distance_with_grad, GeometryConfig, PoincarePoint};
use crate::grad::Loss;
use crate::linalg::axpy;
use crate::prototypes::PrototypeBank;
use crate::rng::gumbel;

/// Number of triplets sampled by [`lca_consistency_report`].
pub const REPORT_TRIPLETS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HslConfig {
    /// Neighbourhood size for positive pairs.
    pub k: usize,
    /// Hinge margin.
    pub delta: f64,
    /// Triplets per optimizer step; `None` means one per data prototype.
    pub triplets_per_step: Option<usize>,
    pub gumbel_enabled: bool,
}

impl Default for HslConfig {
    fn default() -> Self {
        Self {
            k: 3,
            delta: 0.1,
            triplets_per_step: None,
            gumbel_enabled: true,
        }
    }
}

impl HslConfig {
    pub fn validate(&self, num_data: usize) -> Result<()> {
        if self.k == 0 || self.k + 1 >= num_data {
            return Err(Error::Config(format!(
                "neighbour count {} must satisfy 1 <= K < {} - 1",
                self.k, num_data
            )));
        }
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be >= 0, got {}",
                self.delta
            )));
        }
        if self.triplets_per_step == Some(0) {
            return Err(Error::Config("triplets_per_step must be positive".into()));
        }
        Ok(())
    }

    pub fn triplet_count(&self, num_data: usize) -> usize {
        self.triplets_per_step.unwrap_or(num_data)
    }
}

/// Indices into the flattened data prototypes plus the selected ancestors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub lca_ij: usize,
    pub lca_ijk: usize,
}

/// For every data prototype, the indices of its `k` nearest other prototypes
/// (closest first, ties by index).
pub fn knn_neighbors(bank: &PrototypeBank, k: usize) -> Vec<Vec<usize>> {
    let pts = bank.materialize().data;
    knn_of_points(&pts, k, bank.geometry().c)
}

fn knn_of_points(pts: &[PoincarePoint], k: usize, c: f64) -> Vec<Vec<usize>> {
    (0..pts.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&r| r != i)
                .map(|r| (distance(&pts[i], &pts[r], c), r))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, r)| r).collect()
        })
        .collect()
}

/// Draws `(anchor, positive, negative)` index triples. Anchors run through
/// shuffled passes over all prototypes.
pub fn sample_triplets<R: Rng + ?Sized>(
    bank: &PrototypeBank,
    cfg: &HslConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize, usize)>> {
    let n = bank.num_data();
    cfg.validate(n)?;
    let neighbors = knn_neighbors(bank, cfg.k);
    let count = cfg.triplet_count(n);

    let mut anchors: Vec<usize> = Vec::with_capacity(count);
    let mut pass: Vec<usize> = (0..n).collect();
    while anchors.len() < count {
        pass.shuffle(rng);
        anchors.extend(pass.iter().take(count - anchors.len()));
    }

    let mut out = Vec::with_capacity(count);
    for i in anchors {
        let nb = &neighbors[i];
        let j = nb[rng.random_range(0..nb.len())];
        let complement: Vec<usize> = (0..n).filter(|r| *r != i && !nb.contains(r)).collect();
        if complement.is_empty() {
            return Err(Error::Config(format!(
                "no negatives available for anchor {i}"
            )));
        }
        let k = complement[rng.random_range(0..complement.len())];
        out.push((i, j, k));
    }
    Ok(out)
}

/// Picks the ancestor of `a` and `b` among `tops`:
/// `argmax_ρ exp(−max(d(a, ρ), d(b, ρ))) + g_ρ` with `g_ρ ~ Gumbel(0, 1)`.
/// Without noise this is the minimizer of the larger distance, ties to the
/// lowest index.
pub fn select_lca<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    tops: &[PoincarePoint],
    g: &GeometryConfig,
    rng: &mut R,
    gumbel_enabled: bool,
) -> usize {
    assert!(!tops.is_empty(), "at least one top prototype is required");
    if !gumbel_enabled {
        return nearest_common_ancestor(a, b, tops, g);
    }
    let reach = |rho: &PoincarePoint| distance(a, rho, g.c).max(distance(b, rho, g.c));
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (r, rho) in tops.iter().enumerate() {
        let score = (-reach(rho)).exp() + gumbel(rng);
        if score > best_score {
            best = r;
            best_score = score;
        }
    }
    best
}

/// Noise-free ancestor: the top prototype minimizing `max(d(a, ρ), d(b, ρ))`,
/// lowest index on ties.
pub fn nearest_common_ancestor(
    a: &[f64],
    b: &[f64],
    tops: &[PoincarePoint],
    g: &GeometryConfig,
) -> usize {
    assert!(!tops.is_empty(), "at least one top prototype is required");
    let mut best = 0;
    let mut best_reach = f64::INFINITY;
    for (r, rho) in tops.iter().enumerate() {
        let m = distance(a, rho, g.c).max(distance(b, rho, g.c));
        if m < best_reach {
            best = r;
            best_reach = m;
        }
    }
    best
}

/// Attaches both ancestors to each index triple. `ρ_ijk` is the ancestor of
/// `ρ_ij` and `p_k`.
pub fn select_ancestors<R: Rng + ?Sized>(
    triples: &[(usize, usize, usize)],
    bank: &PrototypeBank,
    rng: &mut R,
    gumbel_enabled: bool,
) -> Vec<Triplet> {
    let m = bank.materialize();
    let g = bank.geometry();
    triples
        .iter()
        .map(|&(i, j, k)| {
            let lca_ij = select_lca(&m.data[i], &m.data[j], &m.top, g, rng, gumbel_enabled);
            let lca_ijk = select_lca(&m.top[lca_ij], &m.data[k], &m.top, g, rng, gumbel_enabled);
            Triplet {
                i,
                j,
                k,
                lca_ij,
                lca_ijk,
            }
        })
        .collect()
}

/// Sum over triplets of three hinge terms:
/// `[d(p_i,ρ_ij) − d(p_i,ρ_ijk) + δ]₊ + [d(p_j,ρ_ij) − d(p_j,ρ_ijk) + δ]₊ + [d(p_k,ρ_ijk) − d(p_k,ρ_ij) + δ]₊`.
///
/// Ancestors are fixed inputs; no gradient flows through their selection.
pub fn loss_hsl(triplets: &[Triplet], bank: &PrototypeBank, cfg: &HslConfig) -> Result<Loss> {
    let m = bank.materialize();
    let c = bank.geometry().c;
    let (nd, nt) = (bank.num_data(), bank.num_top());
    if let Some(t) = triplets
        .iter()
        .find(|t| t.i >= nd || t.j >= nd || t.k >= nd || t.lca_ij >= nt || t.lca_ijk >= nt)
    {
        return Err(Error::InvalidInput(format!("triplet {t:?} out of range")));
    }
    let mut pg = bank.point_grad(0);
    let mut value = 0.0;
    for t in triplets {
        // (point, closer ancestor, farther ancestor)
        let terms = [
            (t.i, t.lca_ij, t.lca_ijk),
            (t.j, t.lca_ij, t.lca_ijk),
            (t.k, t.lca_ijk, t.lca_ij),
        ];
        for (p, near, far) in terms {
            let (dn, gn) = distance_with_grad(&m.data[p], &m.top[near], c);
            let (df, gf) = distance_with_grad(&m.data[p], &m.top[far], c);
            let hinge = dn - df + cfg.delta;
            if hinge <= 0.0 {
                continue;
            }
            value += hinge;
            if let Some((gp, gt)) = gn {
                axpy(pg.data.row_mut(p), 1.0, &gp);
                axpy(pg.top.row_mut(near), 1.0, &gt);
            }
            if let Some((gp, gt)) = gf {
                axpy(pg.data.row_mut(p), -1.0, &gp);
                axpy(pg.top.row_mut(far), -1.0, &gt);
            }
        }
    }
    Ok(Loss {
        value,
        grad: bank.pull_back(pg),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcaReport {
    pub triplets: usize,
    pub consistent: usize,
    /// Fraction of triplets with `d(p_i, ρ_ij) < d(p_i, ρ_ijk)`.
    pub fraction: f64,
}

/// Samples [`REPORT_TRIPLETS`] triplets, selects ancestors without Gumbel
/// noise, and counts how often the pair ancestor is strictly closer to the
/// anchor than the triplet ancestor.
pub fn lca_consistency_report<R: Rng + ?Sized>(
    bank: &PrototypeBank,
    cfg: &HslConfig,
    rng: &mut R,
) -> Result<LcaReport> {
    let sample_cfg = HslConfig {
        triplets_per_step: Some(REPORT_TRIPLETS),
        ..*cfg
    };
    let triples = sample_triplets(bank, &sample_cfg, rng)?;
    let triplets = select_ancestors(&triples, bank, rng, false);
    let m = bank.materialize();
    let c = bank.geometry().c;
    let consistent = triplets
        .iter()
        .filter(|t| {
            distance(&m.data[t.i], &m.top[t.lca_ij], c)
                < distance(&m.data[t.i], &m.top[t.lca_ijk], c)
        })
        .count();
    Ok(LcaReport {
        triplets: triplets.len(),
        consistent,
        fraction: consistent as f64 / triplets.len() as f64,
    })
}

/// The same consistency test applied to arbitrary ball points, for example
/// embedded samples with known subcluster membership. Each `(i, j, k)` indexes
/// `points`; ancestors are chosen among `tops` without Gumbel noise.
pub fn lca_consistency_on_points(
    points: &[PoincarePoint],
    triples: &[(usize, usize, usize)],
    tops: &[PoincarePoint],
    g: &GeometryConfig,
) -> Result<LcaReport> {
    if triples.is_empty() || tops.is_empty() {
        return Err(Error::InvalidInput(
            "need at least one triple and one top prototype".into(),
        ));
    }
    if let Some(t) = triples
        .iter()
        .find(|(i, j, k)| [*i, *j, *k].iter().any(|x| *x >= points.len()))
    {
        return Err(Error::InvalidInput(format!(
            "triple {t:?} indexes past {} points",
            points.len()
        )));
    }
    let consistent = triples
        .iter()
        .filter(|&&(i, j, k)| {
            let ij = nearest_common_ancestor(&points[i], &points[j], tops, g);
            let ijk = nearest_common_ancestor(&tops[ij], &points[k], tops, g);
            distance(&points[i], &tops[ij], g.c) < distance(&points[i], &tops[ijk], g.c)
        })
        .count();
    Ok(LcaReport {
        triplets: triples.len(),
        consistent,
        fraction: consistent as f64 / triples.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{log_map0, pairwise_distances};
    use crate::gradcheck::{max_relative_error, numeric_gradient};
    use crate::linalg::Matrix;
    use crate::prototypes::tests::random_bank;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geo(c: f64, dim: usize) -> GeometryConfig {
        GeometryConfig::new(c, dim).unwrap()
    }

    fn bank_at(data: &[[f64; 2]], tops: &[[f64; 2]], kb: usize) -> PrototypeBank {
        let g = geo(1.0, 2);
        let tangent = |pts: &[[f64; 2]]| {
            Matrix::from_rows(
                &pts.iter()
                    .map(|p| log_map0(p, &g).unwrap().into_inner())
                    .collect::<Vec<_>>(),
            )
        };
        PrototypeBank::from_parts(tangent(data), tangent(tops), kb, data.len() - kb, g).unwrap()
    }

    #[test]
    fn knn_examples() {
        let bank = bank_at(&[[0.1, 0.0], [0.2, 0.0], [0.8, 0.0]], &[[0.0, 0.0]], 2);
        assert_eq!(knn_neighbors(&bank, 1), vec![vec![1], vec![0], vec![1]]);
        let all = knn_neighbors(&bank, 2);
        for (i, nb) in all.iter().enumerate() {
            let mut s = nb.clone();
            s.sort();
            assert_eq!(s, (0..3).filter(|r| *r != i).collect::<Vec<_>>());
        }
        let pair = bank_at(
            &[
                [0.6, 0.6],
                [0.61, 0.6],
                [-0.3, 0.0],
                [-0.3, 0.1],
                [-0.2, -0.1],
            ],
            &[[0.0, 0.0]],
            2,
        );
        let nb = knn_neighbors(&pair, 1);
        assert_eq!((nb[0][0], nb[1][0]), (1, 0));
    }

    #[test]
    fn sampled_triplets_satisfy_predicate() {
        let bank = random_bank(4, 10, 6, 8, geo(0.01, 5));
        let cfg = HslConfig {
            triplets_per_step: Some(16),
            ..HslConfig::default()
        };
        let neighbors = knn_neighbors(&bank, cfg.k);
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let t1 = sample_triplets(&bank, &cfg, &mut r1).unwrap();
        let t2 = sample_triplets(&bank, &cfg, &mut r2).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.len(), 16);
        for &(i, j, k) in &t1 {
            assert!(neighbors[i].contains(&j));
            assert!(!neighbors[i].contains(&k));
            assert!(i != j && j != k && i != k);
        }
        // default: one triplet per anchor, each anchor exactly once
        let mut anchors: Vec<usize> = sample_triplets(&bank, &HslConfig::default(), &mut r1)
            .unwrap()
            .iter()
            .map(|t| t.0)
            .collect();
        anchors.sort();
        assert_eq!(anchors, (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn invalid_neighbourhood_is_a_config_error() {
        let bank = random_bank(4, 2, 2, 2, geo(1.0, 2));
        let cfg = HslConfig {
            k: 3,
            ..HslConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_triplets(&bank, &cfg, &mut rng),
            Err(Error::Config(_))
        ));
    }

    fn brute_force_lca(a: &[f64], b: &[f64], tops: &[PoincarePoint], g: &GeometryConfig) -> usize {
        let ends = [
            PoincarePoint::new(a.to_vec(), g).unwrap(),
            PoincarePoint::new(b.to_vec(), g).unwrap(),
        ];
        let d = pairwise_distances(&ends, tops, g).unwrap();
        let scores: Vec<f64> = (0..tops.len())
            .map(|r| (-d.get(0, r).max(d.get(1, r))).exp())
            .collect();
        let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        scores.iter().position(|s| *s == top).unwrap()
    }

    #[test]
    fn lca_examples() {
        let g = geo(1.0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let one = vec![PoincarePoint::new(vec![0.5, 0.5], &g).unwrap()];
        for noisy in [false, true] {
            assert_eq!(
                select_lca(&[0.1, 0.0], &[0.0, 0.1], &one, &g, &mut rng, noisy),
                0
            );
        }
        let tops: Vec<PoincarePoint> = [[0.9, 0.0], [0.3, 0.3], [-0.9, 0.0], [0.0, -0.9]]
            .iter()
            .map(|p| PoincarePoint::new(p.to_vec(), &g).unwrap())
            .collect();
        assert_eq!(
            select_lca(&[0.6, 0.0], &[0.0, 0.6], &tops, &g, &mut rng, false),
            1
        );
    }

    #[test]
    fn noiseless_lca_matches_exhaustive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for s in 0..100 {
            let g = geo(if s % 2 == 0 { 1.0 } else { 0.01 }, 4);
            let bank = random_bank(s, 2, 2, 64, g);
            let m = bank.materialize();
            let a = &m.data[0];
            let b = &m.data[3];
            assert_eq!(
                select_lca(a, b, &m.top, &g, &mut rng, false),
                brute_force_lca(a, b, &m.top, &g)
            );
        }
    }

    #[test]
    fn gumbel_noise_explores_other_ancestors() {
        let g = geo(1.0, 2);
        let tops: Vec<PoincarePoint> = [[0.1, 0.0], [0.0, 0.1], [-0.1, 0.0]]
            .iter()
            .map(|p| PoincarePoint::new(p.to_vec(), &g).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let picks: std::collections::HashSet<usize> = (0..200)
            .map(|_| select_lca(&[0.2, 0.0], &[0.2, 0.05], &tops, &g, &mut rng, true))
            .collect();
        assert_eq!(picks.len(), 3);
    }

    fn hsl_oracle(triplets: &[Triplet], bank: &PrototypeBank, delta: f64) -> f64 {
        let m = bank.materialize();
        let g = bank.geometry();
        let d = |a: &PoincarePoint, b: &PoincarePoint| {
            crate::geometry::hyperbolic_distance(a, b, g).unwrap()
        };
        triplets
            .iter()
            .map(|t| {
                let (pi, pj, pk) = (&m.data[t.i], &m.data[t.j], &m.data[t.k]);
                let (rij, rijk) = (&m.top[t.lca_ij], &m.top[t.lca_ijk]);
                (d(pi, rij) - d(pi, rijk) + delta).max(0.0)
                    + (d(pj, rij) - d(pj, rijk) + delta).max(0.0)
                    + (d(pk, rijk) - d(pk, rij) + delta).max(0.0)
            })
            .sum()
    }

    #[test]
    fn hsl_loss_examples() {
        let cfg = HslConfig::default();
        // all six distances equal: every point at the origin, ancestors on a circle
        let bank = bank_at(
            &[[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]],
            &[[0.5, 0.0], [0.0, 0.5]],
            2,
        );
        let t = Triplet {
            i: 0,
            j: 1,
            k: 2,
            lca_ij: 0,
            lca_ijk: 1,
        };
        let l = loss_hsl(&[t, t], &bank, &cfg).unwrap();
        assert!((l.value - 6.0 * cfg.delta).abs() < 1e-12);

        // i, j sit on ρ_ij and k sits on ρ_ijk
        let tree = bank_at(
            &[
                [0.5, 0.0],
                [0.5, 0.01],
                [-0.5, 0.0],
                [0.0, 0.3],
                [0.0, -0.3],
            ],
            &[[0.5, 0.005], [-0.5, 0.0]],
            2,
        );
        let t = Triplet {
            i: 0,
            j: 1,
            k: 2,
            lca_ij: 0,
            lca_ijk: 1,
        };
        assert_eq!(loss_hsl(&[t], &tree, &cfg).unwrap().value, 0.0);
    }

    fn random_triplets(bank: &PrototypeBank, seed: u64) -> Vec<Triplet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = HslConfig {
            k: 2,
            triplets_per_step: Some(6),
            ..HslConfig::default()
        };
        let triples = sample_triplets(bank, &cfg, &mut rng).unwrap();
        select_ancestors(&triples, bank, &mut rng, true)
    }

    #[test]
    fn hsl_loss_matches_scratch_oracle_and_gradients() {
        for s in 0..30 {
            let c = if s % 2 == 0 { 1.0 } else { 0.01 };
            let bank = random_bank(s, 3, 2, 4, geo(c, 3));
            let cfg = HslConfig {
                delta: 0.5,
                ..HslConfig::default()
            };
            let triplets = random_triplets(&bank, s + 77);
            let l = loss_hsl(&triplets, &bank, &cfg).unwrap();
            let oracle = hsl_oracle(&triplets, &bank, cfg.delta);
            assert!((l.value - oracle).abs() < 1e-9 * oracle.max(1.0));

            let h = 1e-5 / c.sqrt();
            for top in [false, true] {
                let base = if top {
                    &bank.theta_top
                } else {
                    &bank.theta_data
                };
                let num = numeric_gradient(
                    |x| {
                        let mut b = bank.clone();
                        let m = if top {
                            &mut b.theta_top
                        } else {
                            &mut b.theta_data
                        };
                        m.as_mut_slice().copy_from_slice(x);
                        loss_hsl(&triplets, &b, &cfg).unwrap().value
                    },
                    base.as_slice(),
                    h,
                );
                let analytic = if top {
                    &l.grad.theta_top
                } else {
                    &l.grad.theta_data
                };
                let err = max_relative_error(analytic.as_slice(), &num);
                assert!(err < 1e-4, "seed {s} top={top}: {err}");
            }

            let used: std::collections::HashSet<usize> = triplets
                .iter()
                .flat_map(|t| [t.lca_ij, t.lca_ijk])
                .collect();
            for r in (0..bank.num_top()).filter(|r| !used.contains(r)) {
                assert!(l.grad.theta_top.row(r).iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn perfect_tree_is_fully_consistent() {
        // two tight pairs under their own ancestors, joined by a root at the origin
        let bank = bank_at(
            &[[0.6, 0.0], [0.6, 0.02], [-0.6, 0.0], [-0.6, 0.02]],
            &[[0.6, 0.01], [-0.6, 0.01], [0.0, 0.01]],
            2,
        );
        let cfg = HslConfig {
            k: 1,
            ..HslConfig::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let report = lca_consistency_report(&bank, &cfg, &mut r1).unwrap();
        assert_eq!(report.fraction, 1.0);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            report,
            lca_consistency_report(&bank, &cfg, &mut r2).unwrap()
        );

        let random = random_bank(3, 3, 3, 8, geo(1.0, 3));
        let f = lca_consistency_report(&random, &HslConfig::default(), &mut r1)
            .unwrap()
            .fraction;
        assert!((0.0..=1.0).contains(&f));
    }

    proptest! {
        #[test]
        fn hsl_permutation_and_margin_monotonicity(seed in 0u64..500, extra in 0.0f64..1.0) {
            let bank = random_bank(seed, 3, 2, 4, geo(1.0, 3));
            let triplets = random_triplets(&bank, seed);
            let cfg = HslConfig::default();
            let base = loss_hsl(&triplets, &bank, &cfg).unwrap().value;
            let mut rev = triplets.clone();
            rev.reverse();
            let reversed = loss_hsl(&rev, &bank, &cfg).unwrap().value;
            prop_assert!((base - reversed).abs() <= 1e-12 * base.max(1.0));
            let wider = HslConfig { delta: cfg.delta + extra, ..cfg };
            prop_assert!(loss_hsl(&triplets, &bank, &wider).unwrap().value >= base);
            prop_assert!(base >= 0.0);
        }
    }
}
