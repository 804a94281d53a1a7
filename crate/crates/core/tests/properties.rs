use mgstab::cases;
use mgstab::cctstudy::{find_cct_bisect, find_cct_sweep, fault_current_probe, find_cct, with_pv_layout, SearchMethod, StudyConfig};
use mgstab::machine::{electrical_power, InternalSource};
use mgstab::netcase::{
    build_ybus, case_from_str, case_to_string, kron_reduce_with_recovery, powerflow_mismatch, run_powerflow, Branch,
    BranchStatus, Bus, BusKind, Case, GenUnit, Node, StaticLoad, TopologyOverlay, YbusMatrix, PF_TOLERANCE,
};
use mgstab::simengine::{relative_angle_deviation, stage_matrices, CoiGroup};
use mgstab::{simulate, Complex, Scenario, SimConfig, Verdict};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

/// Radial-plus-ring network with a slack machine, one more generator and
/// loads everywhere else.
fn arb_case() -> impl Strategy<Value = Case> {
    (4usize..8)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((0.001f64..0.05, 0.02f64..0.3, 0.0f64..0.1), n),
                prop::collection::vec((0.0f64..0.3, 0.0f64..0.1), n),
                (1.0f64..10.0, 0.05f64..0.4, 0.1f64..0.8, 0.95f64..1.05),
            )
        })
        .prop_map(|(n, lines, loads, (h, xdp, pm, v))| {
            let buses = (1..=n as u32)
                .map(|id| Bus {
                    id,
                    name: format!("bus {id}"),
                    base_kv: 115.0,
                    kind: match id {
                        1 => BusKind::Slack,
                        2 => BusKind::PvGen,
                        _ => BusKind::Pq,
                    },
                    v_set: if id <= 2 { v } else { 1.0 },
                })
                .collect();
            let branches = lines
                .iter()
                .enumerate()
                .map(|(k, &(r, x, b))| Branch {
                    id: k as u32 + 1,
                    from_bus: k as u32 + 1,
                    to_bus: ((k + 1) % n) as u32 + 1,
                    r,
                    x,
                    b_shunt: b,
                    status: BranchStatus::Closed,
                })
                .collect();
            let loads = loads
                .iter()
                .enumerate()
                .skip(2)
                .map(|(k, &(p, q))| StaticLoad {
                    bus: k as u32 + 1,
                    p,
                    q,
                    representation: Default::default(),
                })
                .collect();
            let gen = |id: u32, bus, pm| GenUnit {
                id,
                name: format!("G{id}"),
                bus,
                h: h * 2.0,
                h_rated: h,
                d: 0.0,
                xdp,
                s_rating: 200.0,
                pm,
            };
            Case {
                base_mva: 100.0,
                f_nom: 60.0,
                buses,
                branches,
                loads,
                gens: vec![gen(1, 1, 0.0), gen(2, 2, pm)],
                pvs: vec![],
                scenario: None,
            }
        })
}

fn arb_complex(scale: f64) -> impl Strategy<Value = Complex> {
    (-scale..scale, -scale..scale).prop_map(|(a, b)| Complex::new(a, b))
}

/// Random symmetric, strictly diagonally dominant nodal matrix.
fn arb_nodal(n: usize) -> impl Strategy<Value = YbusMatrix> {
    prop::collection::vec((0.1f64..5.0, 1.0f64..20.0), n * (n - 1) / 2).prop_map(move |series| {
        let mut y = YbusMatrix {
            nodes: (1..=n as u32).map(Node::Bus).collect(),
            y: DMatrix::zeros(n, n),
        };
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                y.add_series(a, b, Complex::new(series[k].0, -series[k].1));
                k += 1;
            }
            y.y[(a, a)] += Complex::new(0.05, 0.1);
        }
        y
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn case_text_round_trips(case in arb_case()) {
        let loaded = case_from_str(&case_to_string(&case)).unwrap();
        let text = case_to_string(&loaded);
        prop_assert_eq!(&case_from_str(&text).unwrap(), &loaded);
        prop_assert_eq!(case_to_string(&case_from_str(&text).unwrap()), text);
        prop_assert_eq!(&loaded.buses, &case.buses);
        prop_assert_eq!(&loaded.branches, &case.branches);
    }

    #[test]
    fn ybus_is_symmetric(case in arb_case()) {
        let y = build_ybus(&case, &TopologyOverlay::default()).unwrap();
        prop_assert_eq!(y.max_asymmetry(), 0.0);
        // Row sums reduce to the shunt terms alone.
        let shunt: Complex = (0..y.dim()).map(|i| (0..y.dim()).map(|j| y.y[(i, j)]).sum::<Complex>()).sum();
        let charging: f64 = case.branches.iter().map(|b| b.b_shunt).sum();
        prop_assert!((shunt - Complex::new(0.0, charging)).norm() < 1e-9);
    }

    #[test]
    fn kron_reduction_is_exact(y in arb_nodal(5), v in prop::collection::vec(arb_complex(1.5), 2)) {
        let retained = [Node::Bus(2), Node::Bus(5)];
        let k = kron_reduce_with_recovery(&y, &retained).unwrap();
        let v_r = DVector::from_vec(v);
        let v_e = &k.recovery * &v_r;
        let mut full = DVector::zeros(5);
        for (i, n) in retained.iter().enumerate() {
            full[y.index_of(*n).unwrap()] = v_r[i];
        }
        for (i, n) in k.eliminated.iter().enumerate() {
            full[y.index_of(*n).unwrap()] = v_e[i];
        }
        let i_full = &y.y * &full;
        let i_red = &k.reduced.y * &v_r;
        for n in &k.eliminated {
            prop_assert!(i_full[y.index_of(*n).unwrap()].norm() < 1e-10);
        }
        for (i, n) in retained.iter().enumerate() {
            prop_assert!((i_full[y.index_of(*n).unwrap()] - i_red[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn powerflow_meets_its_residual(scale in 0.2f64..1.3) {
        let mut case = cases::bundled("nine").unwrap();
        for l in &mut case.loads {
            l.p *= scale;
            l.q *= scale;
        }
        let pf = run_powerflow(&case).unwrap();
        prop_assert!(pf.converged);
        prop_assert!(powerflow_mismatch(&case, &pf.v).unwrap() <= PF_TOLERANCE);
    }

    #[test]
    fn angle_reference_does_not_matter(shift in -10.0f64..10.0, d in prop::collection::vec(-1.0f64..1.0, 3)) {
        let case = cases::bundled("nine").unwrap();
        let m = stage_matrices(&case, &Scenario::from_case(&case).unwrap()).unwrap();
        let sources: Vec<InternalSource> = [1.05, 1.1, 1.02]
            .iter()
            .map(|&e| InternalSource { emf_mag: e, emf_angle0: 0.0 })
            .collect();
        let moved: Vec<f64> = d.iter().map(|x| x + shift).collect();
        let a = electrical_power(&d, &sources, &m.post).unwrap();
        let b = electrical_power(&moved, &sources, &m.post).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        let group = [CoiGroup { gens: vec![0, 1, 2], infinite_angle: None }];
        let dev_a = relative_angle_deviation(&group, &case.gens, &d);
        let dev_b = relative_angle_deviation(&group, &case.gens, &moved);
        prop_assert!((dev_a - dev_b).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn simulation_is_deterministic(duration in 0.01f64..0.4) {
        let case = cases::bundled("micro4").unwrap();
        let tpl = case.pvs[0].params.clone();
        let case = with_pv_layout(&case, &tpl, &[(4, 8.0), (5, 8.0)]).unwrap();
        let sc = Scenario::from_case(&case).unwrap();
        let sc = sc.with_clearing(sc.t_fault + duration);
        let cfg = SimConfig::for_case(&case);
        prop_assert_eq!(simulate(&case, &sc, &cfg).unwrap(), simulate(&case, &sc, &cfg).unwrap());
    }

    #[test]
    fn unit_order_does_not_change_a_study(layout in Just(vec![(4u32, 6.0), (5, 8.0), (6, 10.0)]).prop_shuffle()) {
        let case = cases::bundled("micro4").unwrap();
        let tpl = case.pvs[0].params.clone();
        let sc = Scenario::from_case(&case).unwrap();
        let study = StudyConfig { sim: SimConfig::for_case(&case), ..StudyConfig::default() };
        let canonical = with_pv_layout(&case, &tpl, &[(4, 6.0), (5, 8.0), (6, 10.0)]).unwrap();
        let shuffled = with_pv_layout(&case, &tpl, &layout).unwrap();
        let a = find_cct(&canonical, &sc, &study).unwrap();
        let b = find_cct(&shuffled, &sc, &study).unwrap();
        prop_assert_eq!(a.bracket, b.bracket);
        let pa = fault_current_probe(&canonical, &sc, 1e-3).unwrap().peak;
        let pb = fault_current_probe(&shuffled, &sc, 1e-3).unwrap().peak;
        prop_assert!((pa - pb).abs() <= 1e-12 * pa);
    }

    #[test]
    fn pv_adds_to_fault_current(bus in 3u32..7, mw in 1.0f64..30.0) {
        let case = cases::bundled("micro4").unwrap();
        let tpl = case.pvs[0].params.clone();
        let sc = Scenario::from_case(&case).unwrap();
        let with = with_pv_layout(&case, &tpl, &[(bus, mw)]).unwrap();
        let base = fault_current_probe(&case, &sc, 1e-3).unwrap().peak;
        prop_assert!(fault_current_probe(&with, &sc, 1e-3).unwrap().peak >= base);
    }
}

#[test]
fn sweep_and_bisect_agree_on_every_bundled_case() {
    for name in cases::BUNDLED {
        let case = cases::bundled(name).unwrap();
        let sc = Scenario::from_case(&case).unwrap();
        let cfg = SimConfig::for_case(&case);
        let sweep = find_cct_sweep(&case, &sc, &cfg, 0.1).unwrap().cct().unwrap();
        let bisect = find_cct_bisect(&case, &sc, &cfg, 0.01).unwrap().cct().unwrap();
        assert!((sweep - bisect).abs() <= 0.1, "{name}: {sweep} vs {bisect}");
    }
}

#[test]
fn smib_verdicts_switch_once() {
    let case = cases::bundled("smib").unwrap();
    let cfg = SimConfig {
        v_recover: 0.0,
        ..SimConfig::for_case(&case)
    };
    let verdicts: Vec<Verdict> = (1..=40)
        .map(|k| simulate(&case, &Scenario::new(2, 1.0, 1.0 + 0.02 * k as f64), &cfg).unwrap().verdict)
        .collect();
    let first_unstable = verdicts.iter().position(|v| *v == Verdict::Unstable).unwrap();
    assert!(first_unstable > 0);
    assert!(verdicts[first_unstable..].iter().all(|v| *v == Verdict::Unstable));
}

#[test]
fn bisect_method_is_selectable() {
    let case = cases::bundled("smib").unwrap();
    let sc = Scenario::from_case(&case).unwrap();
    let study = StudyConfig {
        sim: SimConfig { v_recover: 0.0, ..SimConfig::for_case(&case) },
        method: SearchMethod::Bisect,
        resolution: 0.01,
        ..StudyConfig::default()
    };
    let r = find_cct(&case, &sc, &study).unwrap();
    assert!((r.cct().unwrap() - 0.27).abs() < 1e-9);
}
