//! Exact measure metrics.
//!
//! The bounded-Lipschitz (flat) norm takes test functions with
//! `|phi| <= 1` and `|phi(a) - phi(b)| <= dist(a, b)`; by LP duality its value
//! equals a transport problem with a waste node (unit create/destroy cost,
//! pairwise cost capped at 2). Wasserstein-1 is the plain balanced transport
//! cost. Both are solved exactly by the internal network-flow solver; closed
//! forms exist for special cases but live only in the test suites.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::measures::{
    euclidean_dist, euclidean_norm, AgentState, DiscreteSpatialMeasure, EmpiricalMeasure,
    LabelSpace, SignedLabelMeasure,
};
use crate::transport;

/// Exact metrics are only attempted below this combined atom count.
pub const TRANSPORT_ATOM_CAP: usize = 2100;

/// Test functions are bounded by one, so moving mass further than this can
/// never beat destroying and recreating it.
const WASTE_CAP: f64 = 2.0;

/// Bounded-Lipschitz norm of a signed measure on the label set.
///
/// Solved as an exact transport problem between the positive and negative
/// parts, extended by a waste node: unit cost to create or destroy mass,
/// `min(dist, 2)` to move it.
pub fn bl_norm(space: &LabelSpace, xi: &SignedLabelMeasure) -> Result<f64> {
    if xi.len() != space.count() {
        return Err(Error::Dimension(format!(
            "signed measure has {} entries on a {}-label space",
            xi.len(),
            space.count()
        )));
    }
    if xi.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signed label measure".into()));
    }
    let h = space.count();
    let mut pos_mass = 0.0;
    let mut neg_mass = 0.0;
    for v in xi.values() {
        if *v > 0.0 {
            pos_mass += v;
        } else {
            neg_mass -= v;
        }
    }
    if pos_mass + neg_mass == 0.0 {
        return Ok(0.0);
    }
    // Sources: positive part plus a waste atom matching the negative mass.
    // Sinks: negative part plus a waste atom matching the positive mass.
    let mut supply = vec![0.0; h + 1];
    let mut demand = vec![0.0; h + 1];
    for (k, v) in xi.values().iter().enumerate() {
        if *v > 0.0 {
            supply[k] = *v;
        } else {
            demand[k] = -*v;
        }
    }
    supply[h] = neg_mass;
    demand[h] = pos_mass;
    transport::solve_dense(&supply, &demand, |i, j| match (i == h, j == h) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => space.dist(i, j).min(WASTE_CAP),
    })
}

/// Norm of a state `(x, lambda)`: `|x| + bl_norm(lambda)`.
/// For any probability vector the BL part equals one.
pub fn state_norm(space: &LabelSpace, y: &AgentState) -> Result<f64> {
    Ok(euclidean_norm(&y.x) + bl_norm(space, &y.lambda.as_signed())?)
}

/// First moment of an empirical measure: average state norm of its agents.
pub fn first_moment(space: &LabelSpace, p: &EmpiricalMeasure) -> Result<f64> {
    let mut acc = 0.0;
    for a in p.agents() {
        acc += state_norm(space, a)?;
    }
    Ok(acc / p.len() as f64)
}

/// Exact Wasserstein-1 distance between equal-mass spatial measures with
/// ground cost `|x - x'|`. Masses must agree within `1e-10` absolute.
pub fn w1_spatial(mu: &DiscreteSpatialMeasure, nu: &DiscreteSpatialMeasure) -> Result<f64> {
    check_cap(mu.len() + nu.len())?;
    let (ma, mb) = (mu.mass(), nu.mass());
    if (ma - mb).abs() > 1e-10 {
        return Err(Error::UnequalMasses(ma, mb));
    }
    if ma == 0.0 {
        return Ok(0.0);
    }
    transport::solve_dense(mu.weights(), nu.weights(), |i, j| {
        euclidean_dist(mu.point(i), nu.point(j))
    })
}

/// Exact Wasserstein-1 distance between empirical measures on the product
/// state space, ground cost `|x - x'| + bl_norm(lambda - lambda')`.
pub fn w1_product(space: &LabelSpace, p: &EmpiricalMeasure, q: &EmpiricalMeasure) -> Result<f64> {
    w1_product_with(space, p, q, ExecMode::default())
}

pub fn w1_product_with(
    space: &LabelSpace,
    p: &EmpiricalMeasure,
    q: &EmpiricalMeasure,
    mode: ExecMode,
) -> Result<f64> {
    check_cap(p.len() + q.len())?;
    if p.dim() != q.dim() || p.label_count() != q.label_count() {
        return Err(Error::Dimension(
            "empirical measures live on different state spaces".into(),
        ));
    }
    let (n, m) = (p.len(), q.len());
    let rows: Vec<Result<Vec<f64>>> = map_indexed(n, mode, |i| {
        let a = p.agent(i);
        let mut row = Vec::with_capacity(m);
        for j in 0..m {
            let b = q.agent(j);
            let label_cost = bl_norm(space, &a.lambda.diff(&b.lambda))?;
            row.push(euclidean_dist(&a.x, &b.x) + label_cost);
        }
        Ok(row)
    });
    let mut cost = Vec::with_capacity(n * m);
    for row in rows {
        cost.extend(row?);
    }
    transport::solve(&transport::TransportInstance {
        supply: vec![1.0 / n as f64; n],
        demand: vec![1.0 / m as f64; m],
        cost,
    })
}

/// Bounded-Lipschitz distance between spatial measures of possibly different
/// total mass: test functions bounded by one with Lipschitz constant one on
/// the merged support. Solved exactly via the waste-node transport problem.
pub fn bl_distance(mu: &DiscreteSpatialMeasure, nu: &DiscreteSpatialMeasure) -> Result<f64> {
    bl_distance_with(mu, nu, ExecMode::default())
}

pub fn bl_distance_with(
    mu: &DiscreteSpatialMeasure,
    nu: &DiscreteSpatialMeasure,
    mode: ExecMode,
) -> Result<f64> {
    check_cap(mu.len() + nu.len())?;
    let (ma, mb) = (mu.mass(), nu.mass());
    if ma == 0.0 && mb == 0.0 {
        return Ok(0.0);
    }
    // Drop zero atoms up front so the dense cost matrix stays small.
    let src: Vec<usize> = (0..mu.len()).filter(|&i| mu.weight(i) > 0.0).collect();
    let snk: Vec<usize> = (0..nu.len()).filter(|&j| nu.weight(j) > 0.0).collect();
    let (n, m) = (src.len(), snk.len());

    let mut supply: Vec<f64> = src.iter().map(|&i| mu.weight(i)).collect();
    let mut demand: Vec<f64> = snk.iter().map(|&j| nu.weight(j)).collect();
    supply.push(mb);
    demand.push(ma);

    let rows: Vec<Vec<f64>> = map_indexed(n + 1, mode, |r| {
        let mut row = Vec::with_capacity(m + 1);
        if r < n {
            let pi = mu.point(src[r]);
            for &j in &snk {
                row.push(euclidean_dist(pi, nu.point(j)).min(WASTE_CAP));
            }
            row.push(1.0);
        } else {
            row.extend(std::iter::repeat(1.0).take(m));
            row.push(0.0);
        }
        row
    });
    let mut cost = Vec::with_capacity((n + 1) * (m + 1));
    for row in rows {
        cost.extend(row);
    }
    transport::solve(&transport::TransportInstance {
        supply,
        demand,
        cost,
    })
}

fn check_cap(atoms: usize) -> Result<()> {
    if atoms > TRANSPORT_ATOM_CAP {
        Err(Error::AtomCap(atoms, TRANSPORT_ATOM_CAP))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::SimplexVector;

    fn spatial(points: &[f64], weights: &[f64]) -> DiscreteSpatialMeasure {
        DiscreteSpatialMeasure::new(
            points.iter().map(|p| vec![*p]).collect(),
            weights.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn bl_norm_point_mass() {
        let u = LabelSpace::line(2);
        let v = bl_norm(&u, &SignedLabelMeasure::new(vec![1.0, 0.0])).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bl_norm_zero_mass_two_labels() {
        let u = LabelSpace::line(2);
        let v = bl_norm(&u, &SignedLabelMeasure::new(vec![0.3, -0.3])).unwrap();
        assert!((v - 0.3).abs() < 1e-12);
    }

    #[test]
    fn bl_norm_zero_measure() {
        let u = LabelSpace::line(5);
        assert_eq!(bl_norm(&u, &SignedLabelMeasure::new(vec![0.0; 5])).unwrap(), 0.0);
    }

    #[test]
    fn bl_norm_distant_labels_capped() {
        // Mass exchanged between labels more than two apart is capped by the
        // create/destroy route.
        let u = LabelSpace::line(6);
        let mut vals = vec![0.0; 6];
        vals[0] = 1.0;
        vals[5] = -1.0;
        let v = bl_norm(&u, &SignedLabelMeasure::new(vals)).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn bl_norm_of_any_simplex_vector_is_one() {
        let u = LabelSpace::line(4);
        for lam in [
            SimplexVector::uniform(4),
            SimplexVector::delta(2, 4),
            SimplexVector::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
        ] {
            let v = bl_norm(&u, &lam.as_signed()).unwrap();
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn state_norm_examples() {
        let u1 = LabelSpace::line(1);
        let y = AgentState::new(vec![3.0, 4.0], SimplexVector::delta(0, 1)).unwrap();
        assert!((state_norm(&u1, &y).unwrap() - 6.0).abs() < 1e-12);

        let u2 = LabelSpace::line(2);
        let y0 = AgentState::new(vec![0.0], SimplexVector::new(vec![0.5, 0.5]).unwrap()).unwrap();
        let bl = bl_norm(&u2, &SimplexVector::new(vec![0.5, 0.5]).unwrap().as_signed()).unwrap();
        assert!((state_norm(&u2, &y0).unwrap() - bl).abs() < 1e-15);
        assert!(bl <= 1.0 + 1e-12);
    }

    #[test]
    fn first_moment_examples() {
        let u = LabelSpace::line(1);
        let single = EmpiricalMeasure::new(vec![AgentState::new(
            vec![0.0],
            SimplexVector::delta(0, 1),
        )
        .unwrap()])
        .unwrap();
        assert!((first_moment(&u, &single).unwrap() - 1.0).abs() < 1e-12);

        let two = EmpiricalMeasure::new(vec![
            AgentState::new(vec![1.0], SimplexVector::delta(0, 1)).unwrap(),
            AgentState::new(vec![-3.0], SimplexVector::delta(0, 1)).unwrap(),
        ])
        .unwrap();
        assert!((first_moment(&u, &two).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn w1_single_atoms() {
        let a = spatial(&[0.0], &[1.0]);
        let b = spatial(&[1.0], &[1.0]);
        assert!((w1_spatial(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_split_mass() {
        let a = spatial(&[0.0, 2.0], &[0.5, 0.5]);
        let b = spatial(&[1.0], &[1.0]);
        assert!((w1_spatial(&a, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_rejects_unequal_mass() {
        let a = spatial(&[0.0], &[1.0]);
        let b = spatial(&[0.0], &[0.5]);
        match w1_spatial(&a, &b) {
            Err(Error::UnequalMasses(_, _)) => {}
            other => panic!("expected unequal-mass error, got {other:?}"),
        }
    }

    #[test]
    fn w1_product_on_identical_measures_is_zero() {
        let u = LabelSpace::line(2);
        let p = EmpiricalMeasure::new(vec![
            AgentState::new(vec![0.4], SimplexVector::new(vec![0.2, 0.8]).unwrap()).unwrap(),
            AgentState::new(vec![-1.0], SimplexVector::new(vec![0.9, 0.1]).unwrap()).unwrap(),
        ])
        .unwrap();
        assert!(w1_product(&u, &p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn w1_product_position_only() {
        let u = LabelSpace::line(2);
        let lam = SimplexVector::new(vec![0.3, 0.7]).unwrap();
        let p = EmpiricalMeasure::new(vec![AgentState::new(vec![0.0], lam.clone()).unwrap()])
            .unwrap();
        let q =
            EmpiricalMeasure::new(vec![AgentState::new(vec![1.0], lam).unwrap()]).unwrap();
        assert!((w1_product(&u, &p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn w1_product_label_only() {
        let u = LabelSpace::line(2);
        let p = EmpiricalMeasure::new(vec![
            AgentState::new(vec![0.5], SimplexVector::delta(0, 2)).unwrap(),
        ])
        .unwrap();
        let q = EmpiricalMeasure::new(vec![
            AgentState::new(vec![0.5], SimplexVector::delta(1, 2)).unwrap(),
        ])
        .unwrap();
        assert!((w1_product(&u, &p, &q).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bl_distance_identical_and_empty() {
        let a = spatial(&[0.0, 1.0], &[0.4, 0.6]);
        assert!(bl_distance(&a, &a).unwrap().abs() < 1e-12);

        let d = bl_distance(&spatial(&[0.0], &[1.0]), &DiscreteSpatialMeasure::empty()).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bl_distance_saturates_at_two() {
        for s in [2.0, 5.0, 100.0] {
            let d = bl_distance(&spatial(&[0.0], &[1.0]), &spatial(&[s], &[1.0])).unwrap();
            assert!((d - 2.0).abs() < 1e-12, "s = {s}: got {d}");
        }
        // Below the cap it is plain transport.
        let d = bl_distance(&spatial(&[0.0], &[1.0]), &spatial(&[0.5], &[1.0])).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
    }

    #[test]
    fn atom_cap_enforced() {
        let many: Vec<f64> = (0..1200).map(|i| i as f64).collect();
        let w = vec![1.0 / 1200.0; 1200];
        let a = spatial(&many, &w);
        assert!(matches!(
            w1_spatial(&a, &a),
            Err(Error::AtomCap(2400, TRANSPORT_ATOM_CAP))
        ));
    }
}
