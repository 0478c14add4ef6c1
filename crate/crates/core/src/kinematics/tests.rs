use std::f64::consts::FRAC_PI_2;

use proptest::prelude::*;

use super::fixtures::*;
use super::*;

fn planar() -> KinematicChain<f64> {
    parse_urdf(PLANAR2_URDF).unwrap()
}

/// Closed-form planar two-link position.
fn planar_oracle(q: [f64; 2]) -> ([f64; 2], [f64; 2]) {
    let elbow = [q[0].cos(), q[0].sin()];
    let tip = [elbow[0] + (q[0] + q[1]).cos(), elbow[1] + (q[0] + q[1]).sin()];
    (elbow, tip)
}

#[test]
fn minimal_document() {
    let c: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
    assert_eq!(c.dof(), 1);
    assert_eq!(c.joints[0].kind, JointKind::Revolute);
    assert_eq!(c.joints[0].limits, Some([-1.0, 1.0]));
    assert!(c.warnings.is_empty());
}

#[test]
fn planar_fixture_structure() {
    let c = planar();
    assert_eq!(c.dof(), 2);
    for k in 0..2 {
        assert_eq!(c.movable_joint(k).axis, [0.0, 0.0, 1.0]);
    }
    assert_eq!(c.joints.iter().map(|j| j.name.as_str()).collect::<Vec<_>>(), ["shoulder", "elbow", "tool"]);
    assert!(c.gripper_indices.is_empty());
}

#[test]
fn gripper_and_warnings() {
    let c: KinematicChain<f64> = parse_urdf(ARM_WITH_GRIPPER_URDF).unwrap();
    assert_eq!(c.dof(), 2);
    assert_eq!(c.gripper_indices, vec![1]);
    assert_eq!(c.default_mask(), vec![true, false]);
    assert_eq!(c.warnings.len(), 3, "{:?}", c.warnings);
    let opts = UrdfOptions {
        gripper_pattern: "finger".into(),
    };
    let c: KinematicChain<f64> = parse_urdf_with(ARM_WITH_GRIPPER_URDF, &opts).unwrap();
    assert_eq!(c.gripper_indices, vec![1]);
    let opts = UrdfOptions {
        gripper_pattern: "claw".into(),
    };
    let c: KinematicChain<f64> = parse_urdf_with(ARM_WITH_GRIPPER_URDF, &opts).unwrap();
    assert!(c.gripper_indices.is_empty());
}

#[test]
fn cycle_is_rejected() {
    let doc = r#"<robot name="loop">
      <link name="a"/><link name="b"/><link name="c"/>
      <joint name="j1" type="revolute"><parent link="a"/><child link="b"/><axis xyz="0 0 1"/></joint>
      <joint name="j2" type="revolute"><parent link="b"/><child link="c"/><axis xyz="0 0 1"/></joint>
      <joint name="j3" type="revolute"><parent link="c"/><child link="b"/><axis xyz="0 0 1"/></joint>
    </robot>"#;
    assert!(matches!(
        parse_urdf::<f64>(doc),
        Err(KinematicsError::CycleDetected { .. })
    ));
}

#[test]
fn structural_errors() {
    let missing = r#"<robot name="m"><link name="a"/>
      <joint name="j" type="fixed"><parent link="a"/><child link="ghost"/></joint></robot>"#;
    assert_eq!(
        parse_urdf::<f64>(missing).unwrap_err(),
        KinematicsError::MissingLink {
            joint: "j".into(),
            link: "ghost".into()
        }
    );
    let roots = r#"<robot name="r"><link name="a"/><link name="b"/></robot>"#;
    assert!(matches!(
        parse_urdf::<f64>(roots),
        Err(KinematicsError::MultipleRoots { .. })
    ));
    assert!(matches!(
        parse_urdf::<f64>("<robot><link"),
        Err(KinematicsError::MalformedXml(_))
    ));
    assert!(matches!(
        parse_urdf::<f64>("<robo/>"),
        Err(KinematicsError::MalformedXml(_))
    ));
}

#[test]
fn planar_fk_examples() {
    let c = planar();
    let p = forward_kinematics(&c, &[0.0, 0.0]).unwrap();
    assert_eq!(p[0].position, [1.0, 0.0, 0.0]);
    assert_eq!(p[1].position, [2.0, 0.0, 0.0]);

    let tip = forward_kinematics(&c, &[FRAC_PI_2, 0.0]).unwrap()[1].position;
    assert!((tip[0] - 0.0).abs() < 1e-12 && (tip[1] - 2.0).abs() < 1e-12);

    let tip = forward_kinematics(&c, &[FRAC_PI_2, -FRAC_PI_2]).unwrap()[1].position;
    assert!((tip[0] - 1.0).abs() < 1e-12 && (tip[1] - 1.0).abs() < 1e-12);

    assert_eq!(
        forward_kinematics(&c, &[0.0]).unwrap_err(),
        KinematicsError::DimensionMismatch { expected: 2, got: 1 }
    );
}

#[test]
fn out_of_limit_is_not_an_error() {
    let c: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
    assert!(forward_kinematics(&c, &[5.0]).is_ok());
}

#[test]
fn prismatic_translates() {
    let c: KinematicChain<f64> = parse_urdf(ARM_WITH_GRIPPER_URDF).unwrap();
    let p = forward_kinematics(&c, &[0.0, 0.03]).unwrap();
    // finger is a leaf: its link frame
    assert!((p[1].position[1] - 0.03).abs() < 1e-15);
    assert!((p[1].position[0] - 0.1).abs() < 1e-15);
    assert!((p[1].position[2] - 0.5).abs() < 1e-15);
}

#[test]
fn jacobian_matches_central_differences() {
    for doc in [PLANAR2_URDF, SERIAL3_URDF, ARM_WITH_GRIPPER_URDF, BRANCHED_URDF] {
        let c: KinematicChain<f64> = parse_urdf(doc).unwrap();
        let q: Vec<f64> = (0..c.dof()).map(|k| 0.3 + 0.17 * k as f64).collect();
        let (poses, jac) = forward_kinematics_with_jacobian(&c, &q).unwrap();
        let h = 1e-6;
        for k in 0..c.dof() {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += h;
            qm[k] -= h;
            let pp = forward_kinematics(&c, &qp).unwrap();
            let pm = forward_kinematics(&c, &qm).unwrap();
            for i in 0..c.dof() {
                let a = pp[i].to_array();
                let mut b = pm[i].to_array();
                if pp[i].orientation.dot(pm[i].orientation) < 0.0 {
                    for v in &mut b[3..] {
                        *v = -*v;
                    }
                }
                let base = poses[i].to_array();
                let sign = if pp[i].orientation.dot(poses[i].orientation) < 0.0 { -1.0 } else { 1.0 };
                for e in 0..7 {
                    let s = if e >= 3 { sign } else { 1.0 };
                    let fd = s * (a[e] - b[e]) / (2.0 * h);
                    assert!(
                        (fd - jac[i][k][e]).abs() < 1e-7,
                        "{} pose {i} coord {k} elem {e}: fd {fd} analytic {} (base {:?})",
                        c.name,
                        jac[i][k][e],
                        base
                    );
                }
            }
        }
    }
}

#[test]
fn adjacency_examples() {
    let one: KinematicChain<f64> = parse_urdf(ONE_JOINT_URDF).unwrap();
    assert_eq!(joint_graph_adjacency(&one), vec![vec![true]]);

    let s: KinematicChain<f64> = parse_urdf(SERIAL3_URDF).unwrap();
    assert_eq!(
        joint_graph_adjacency(&s),
        vec![
            vec![true, true, false],
            vec![true, true, true],
            vec![false, true, true]
        ]
    );

    let b: KinematicChain<f64> = parse_urdf(BRANCHED_URDF).unwrap();
    // order: waist, left_arm, right_arm
    assert_eq!(b.movable_joint(1).name, "left_arm");
    let adj = joint_graph_adjacency(&b);
    assert!(adj.iter().all(|row| row.iter().all(|&v| v)));
}

#[test]
fn fixed_joints_fuse_bodies_for_adjacency() {
    // planar: shoulder and elbow share `upper`
    let adj = joint_graph_adjacency(&planar());
    assert_eq!(adj, vec![vec![true, true], vec![true, true]]);
    let doc = r#"<robot name="f">
      <link name="a"/><link name="b"/><link name="c"/><link name="d"/>
      <joint name="j1" type="revolute"><parent link="a"/><child link="b"/><axis xyz="0 0 1"/></joint>
      <joint name="j2" type="fixed"><parent link="b"/><child link="c"/></joint>
      <joint name="j3" type="revolute"><parent link="c"/><child link="d"/><axis xyz="0 0 1"/></joint>
    </robot>"#;
    let c: KinematicChain<f64> = parse_urdf(doc).unwrap();
    assert_eq!(joint_graph_adjacency(&c), vec![vec![true, true], vec![true, true]]);
}

#[test]
fn summary_is_json() {
    let s = serde_json::to_value(planar().summary()).unwrap();
    assert_eq!(s["dof"], 2);
    assert_eq!(s["joints"][1]["parent"], "upper");
    assert_eq!(s["joints"][2]["kind"], "fixed");
}

#[test]
fn hash_is_stable_and_structural() {
    let a = planar().structure_hash();
    assert_eq!(a, planar().structure_hash());
    assert_ne!(a, parse_urdf::<f64>(SERIAL3_URDF).unwrap().structure_hash());
}

#[test]
fn single_precision_chain() {
    let c: KinematicChain<f32> = parse_urdf(PLANAR2_URDF).unwrap();
    let p = forward_kinematics(&c, &[0.5f32, 0.25]).unwrap();
    let (_, tip) = planar_oracle([0.5, 0.25]);
    assert!((p[1].position[0] as f64 - tip[0]).abs() < 1e-5);
}

fn same_structure(a: &KinematicChain<f64>, b: &KinematicChain<f64>) -> bool {
    a.links == b.links
        && a.movable == b.movable
        && a.gripper_indices == b.gripper_indices
        && a.joints.len() == b.joints.len()
        && a.joints.iter().zip(&b.joints).all(|(x, y)| {
            x.name == y.name
                && x.kind == y.kind
                && x.parent == y.parent
                && x.child == y.child
                && x.limits == y.limits
                && norm3(sub3(x.axis, y.axis)) < 1e-12
                && norm3(sub3(x.origin.position, y.origin.position)) < 1e-12
                && (x.origin.orientation.dot(y.origin.orientation).abs() - 1.0).abs() < 1e-12
        })
}

proptest! {
    #[test]
    fn fk_matches_trigonometry(a in -3.1f64..3.1, b in -3.1f64..3.1) {
        let c = planar();
        let p = forward_kinematics(&c, &[a, b]).unwrap();
        let (elbow, tip) = planar_oracle([a, b]);
        prop_assert!((p[0].position[0] - elbow[0]).abs() < 1e-9);
        prop_assert!((p[0].position[1] - elbow[1]).abs() < 1e-9);
        prop_assert!((p[1].position[0] - tip[0]).abs() < 1e-9);
        prop_assert!((p[1].position[1] - tip[1]).abs() < 1e-9);
        let expect = UnitQuaternion::from_axis_angle([0.0, 0.0, 1.0], a + b);
        prop_assert!(1.0 - p[1].orientation.dot(expect).abs() < 1e-9);
    }

    #[test]
    fn urdf_round_trip(
        xyz in prop::array::uniform3(-2.0f64..2.0),
        rpy in prop::array::uniform3(-1.5f64..1.5),
        axis in prop::array::uniform3(-1.0f64..1.0),
        lo in -3.0f64..0.0,
        hi in 0.0f64..3.0,
    ) {
        prop_assume!(norm3(axis) > 1e-3);
        let doc = format!(r#"<robot name="gen">
          <link name="base"/><link name="a"/><link name="b"/><link name="c"/>
          <joint name="j1" type="revolute"><origin xyz="{} {} {}" rpy="{} {} {}"/><parent link="base"/><child link="a"/><axis xyz="{} {} {}"/><limit lower="{lo}" upper="{hi}"/></joint>
          <joint name="j2" type="prismatic"><origin xyz="0.1 0 0"/><parent link="a"/><child link="b"/><axis xyz="0 1 0"/><limit lower="0" upper="0.5"/></joint>
          <joint name="j0" type="continuous"><parent link="a"/><child link="c"/><axis xyz="1 0 0"/></joint>
        </robot>"#, xyz[0], xyz[1], xyz[2], rpy[0], rpy[1], rpy[2], axis[0], axis[1], axis[2]);
        let first: KinematicChain<f64> = parse_urdf(&doc).unwrap();
        let second: KinematicChain<f64> = parse_urdf(&to_urdf(&first)).unwrap();
        prop_assert!(same_structure(&first, &second));
        let third: KinematicChain<f64> = parse_urdf(&to_urdf(&second)).unwrap();
        prop_assert!(same_structure(&second, &third));
    }

    #[test]
    fn adjacency_symmetric(pick in 0usize..4) {
        let doc = [PLANAR2_URDF, SERIAL3_URDF, ARM_WITH_GRIPPER_URDF, BRANCHED_URDF][pick];
        let c: KinematicChain<f64> = parse_urdf(doc).unwrap();
        let adj = joint_graph_adjacency(&c);
        for i in 0..adj.len() {
            prop_assert!(adj[i][i]);
            for k in 0..adj.len() {
                prop_assert_eq!(adj[i][k], adj[k][i]);
            }
        }
    }
}
