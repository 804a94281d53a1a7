use nalgebra::DMatrix;

use super::{CaseError, Node, YbusMatrix};
use crate::Complex;

/// Relative pivot size below which the eliminated block counts as singular.
const PIVOT_RTOL: f64 = 1e-13;

/// Result of eliminating nodes from a nodal matrix.
#[derive(Debug, Clone)]
pub struct KronReduction {
    pub reduced: YbusMatrix,
    pub eliminated: Vec<Node>,
    /// `V_e = recovery * V_r`, rows in `eliminated` order.
    pub recovery: DMatrix<Complex>,
}

/// Schur complement `Y_rr - Y_re Y_ee^-1 Y_er` over `retained` (in that order).
pub fn kron_reduce(y: &YbusMatrix, retained: &[Node]) -> Result<YbusMatrix, CaseError> {
    kron_reduce_with_recovery(y, retained).map(|k| k.reduced)
}

pub fn kron_reduce_with_recovery(y: &YbusMatrix, retained: &[Node]) -> Result<KronReduction, CaseError> {
    let r_idx: Vec<usize> = retained
        .iter()
        .map(|n| y.index_of(*n).ok_or_else(|| missing(*n)))
        .collect::<Result<_, _>>()?;
    let e_idx: Vec<usize> = (0..y.dim()).filter(|i| !r_idx.contains(i)).collect();
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| y.y[(rows[i], cols[j])])
    };
    let y_rr = pick(&r_idx, &r_idx);
    let eliminated: Vec<Node> = e_idx.iter().map(|&i| y.nodes[i]).collect();
    if e_idx.is_empty() {
        return Ok(KronReduction {
            reduced: YbusMatrix {
                nodes: retained.to_vec(),
                y: y_rr,
            },
            eliminated,
            recovery: DMatrix::zeros(0, r_idx.len()),
        });
    }
    let y_re = pick(&r_idx, &e_idx);
    let y_er = pick(&e_idx, &r_idx);
    let y_ee = pick(&e_idx, &e_idx);

    let lu = y_ee.clone().lu();
    let solved = if is_well_conditioned(&lu.u()) { lu.solve(&y_er) } else { None };
    let Some(x) = solved else {
        return Err(CaseError::SingularReduction {
            nodes: singular_components(&y_ee, &eliminated),
        });
    };
    let reduced = y_rr - &y_re * &x;
    Ok(KronReduction {
        reduced: YbusMatrix {
            nodes: retained.to_vec(),
            y: reduced,
        },
        eliminated,
        recovery: -x,
    })
}

fn missing(node: Node) -> CaseError {
    match node {
        Node::Bus(b) => CaseError::UnknownBus(b),
        Node::Internal(g) => CaseError::SingularReduction {
            nodes: vec![format!("gen {g} internal (not in matrix)")],
        },
    }
}

fn is_well_conditioned(u: &DMatrix<Complex>) -> bool {
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    max > 0.0 && diag.iter().all(|d| d.is_finite() && *d > PIVOT_RTOL * max)
}

/// Names of eliminated nodes in connected sub-blocks that are singular.
fn singular_components(y_ee: &DMatrix<Complex>, nodes: &[Node]) -> Vec<String> {
    let n = nodes.len();
    let mut comp = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut stack = vec![start];
        let mut members = Vec::new();
        comp[start] = id;
        while let Some(i) = stack.pop() {
            members.push(i);
            for j in 0..n {
                if comp[j] == usize::MAX && (y_ee[(i, j)].norm() > 0.0 || y_ee[(j, i)].norm() > 0.0) {
                    comp[j] = id;
                    stack.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    let mut out = Vec::new();
    for g in &groups {
        let block = DMatrix::from_fn(g.len(), g.len(), |i, j| y_ee[(g[i], g[j])]);
        if !is_well_conditioned(&block.lu().u()) {
            out.extend(g.iter().map(|&i| nodes[i].to_string()));
        }
    }
    if out.is_empty() {
        out.extend(nodes.iter().map(|n| n.to_string()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    fn star() -> YbusMatrix {
        // nodes 1, 2 tied to centre 3 through -j10 each
        let y = -c(0.0, 10.0);
        let mut m = YbusMatrix {
            nodes: vec![Node::Bus(1), Node::Bus(2), Node::Bus(3)],
            y: DMatrix::zeros(3, 3),
        };
        m.add_series(0, 2, y);
        m.add_series(1, 2, y);
        m
    }

    #[test]
    fn star_reduces_to_series_combination() {
        let r = kron_reduce(&star(), &[Node::Bus(1), Node::Bus(2)]).unwrap();
        let close = |a: Complex, b: Complex| (a - b).norm() < 1e-12;
        assert!(close(r.y[(0, 0)], c(0.0, -5.0)));
        assert!(close(r.y[(1, 1)], c(0.0, -5.0)));
        assert!(close(r.y[(0, 1)], c(0.0, 5.0)));
        assert!(close(r.y[(1, 0)], c(0.0, 5.0)));
    }

    #[test]
    fn retaining_everything_is_identity() {
        let s = star();
        let r = kron_reduce(&s, &s.nodes).unwrap();
        assert_eq!(r, s);
    }

    #[test]
    fn singular_block_names_nodes() {
        // node 3 floats once nothing ties it to ground or to the retained set
        let mut m = star();
        m.y[(0, 2)] = c(0.0, 0.0);
        m.y[(2, 0)] = c(0.0, 0.0);
        m.y[(1, 2)] = c(0.0, 0.0);
        m.y[(2, 1)] = c(0.0, 0.0);
        m.y[(2, 2)] = c(0.0, 0.0);
        let err = kron_reduce(&m, &[Node::Bus(1), Node::Bus(2)]).unwrap_err();
        match err {
            CaseError::SingularReduction { nodes } => assert_eq!(nodes, vec!["bus 3".to_string()]),
            e => panic!("{e}"),
        }
    }
}
