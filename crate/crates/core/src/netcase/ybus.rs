use std::fmt;

use nalgebra::DMatrix;

use super::{BranchId, BranchStatus, BusId, BusKind, Case, CaseError};
use crate::Complex;

/// A row/column of an admittance matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Node {
    Bus(BusId),
    /// Internal EMF node of the generator with this id.
    Internal(u32),
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Node::Bus(id) => write!(f, "bus {id}"),
            Node::Internal(id) => write!(f, "gen {id} internal"),
        }
    }
}

/// Dense nodal admittance matrix with its node ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct YbusMatrix {
    pub nodes: Vec<Node>,
    pub y: DMatrix<Complex>,
}

impl YbusMatrix {
    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn index_of(&self, node: Node) -> Option<usize> {
        self.nodes.iter().position(|n| *n == node)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0_f64;
        for i in 0..n {
            for j in 0..i {
                worst = worst.max((self.y[(i, j)] - self.y[(j, i)]).norm());
            }
        }
        worst
    }

    /// Stamps a series admittance between two nodes.
    pub fn add_series(&mut self, a: usize, b: usize, y: Complex) {
        self.y[(a, a)] += y;
        self.y[(b, b)] += y;
        self.y[(a, b)] -= y;
        self.y[(b, a)] -= y;
    }
}

/// Switching actions and extra shunts applied on top of the case topology.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TopologyOverlay {
    pub opened_branches: Vec<BranchId>,
    pub shunts: Vec<(BusId, Complex)>,
}

/// Assembles the bus admittance matrix (nodes in case bus order).
pub fn build_ybus(case: &Case, overlay: &TopologyOverlay) -> Result<YbusMatrix, CaseError> {
    let idx = case.bus_index_map();
    for id in &overlay.opened_branches {
        if case.branch(*id).is_none() {
            return Err(CaseError::UnknownBranch(*id));
        }
    }
    let n = case.buses.len();
    let mut ybus = YbusMatrix {
        nodes: case.buses.iter().map(|b| Node::Bus(b.id)).collect(),
        y: DMatrix::zeros(n, n),
    };
    let mut attached = vec![false; n];
    for br in &case.branches {
        if br.status == BranchStatus::Open || overlay.opened_branches.contains(&br.id) {
            continue;
        }
        let a = *idx.get(&br.from_bus).ok_or(CaseError::UnknownBus(br.from_bus))?;
        let b = *idx.get(&br.to_bus).ok_or(CaseError::UnknownBus(br.to_bus))?;
        ybus.add_series(a, b, br.series_admittance());
        let half_b = Complex::new(0.0, 0.5 * br.b_shunt);
        ybus.y[(a, a)] += half_b;
        ybus.y[(b, b)] += half_b;
        attached[a] = true;
        attached[b] = true;
    }
    for (bus, y) in &overlay.shunts {
        let i = *idx.get(bus).ok_or(CaseError::UnknownBus(*bus))?;
        ybus.y[(i, i)] += *y;
        attached[i] = true;
    }
    for g in &case.gens {
        if let Some(&i) = idx.get(&g.bus) {
            attached[i] = true;
        }
    }
    for (i, b) in case.buses.iter().enumerate() {
        if b.kind == BusKind::Slack {
            attached[i] = true;
        }
    }
    if let Some(i) = attached.iter().position(|a| !a) {
        return Err(CaseError::IsolatedNode(case.buses[i].id));
    }
    Ok(ybus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn single_branch_stamp() {
        let case = cases::bundled("smib").unwrap();
        let y = build_ybus(&case, &TopologyOverlay::default()).unwrap();
        let ys = case.branches[0].series_admittance();
        assert_eq!(y.y[(0, 0)], ys);
        assert_eq!(y.y[(1, 1)], ys);
        assert_eq!(y.y[(0, 1)], -ys);
        assert_eq!(y.y[(1, 0)], -ys);
    }

    #[test]
    fn fault_shunt_lands_on_diagonal() {
        let case = cases::bundled("smib").unwrap();
        let base = build_ybus(&case, &TopologyOverlay::default()).unwrap();
        let yf = Complex::new(3.0, -4.0);
        let bus = case.buses[0].id;
        let faulted = build_ybus(
            &case,
            &TopologyOverlay {
                opened_branches: vec![],
                shunts: vec![(bus, yf)],
            },
        )
        .unwrap();
        let mut expect = base.y.clone();
        expect[(0, 0)] += yf;
        assert_eq!(faulted.y, expect);
    }

    #[test]
    fn opening_the_only_branch_isolates_load_bus() {
        let mut case = cases::bundled("smib").unwrap();
        case.gens.retain(|g| g.bus != case.buses[1].id);
        let id = case.branches[0].id;
        let err = build_ybus(
            &case,
            &TopologyOverlay {
                opened_branches: vec![id],
                shunts: vec![],
            },
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::IsolatedNode(_)));
        let err = build_ybus(
            &case,
            &TopologyOverlay {
                opened_branches: vec![999],
                shunts: vec![],
            },
        )
        .unwrap_err();
        assert!(matches!(err, CaseError::UnknownBranch(999)));
    }

    #[test]
    fn bundled_matrices_are_symmetric() {
        for name in cases::BUNDLED {
            let case = cases::bundled(name).unwrap();
            let y = build_ybus(&case, &TopologyOverlay::default()).unwrap();
            assert_eq!(y.max_asymmetry(), 0.0, "{name}");
        }
    }
}
