mod common;

use common::{oracle_fk, random_chain, random_vec, rng};
use lexispray_core::chain_file::{ChainFile, FrameEntry};
use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};

#[test]
fn fk_matches_homogeneous_product_oracle() {
    let mut r = rng(11);
    for _ in 0..100 {
        let raw = random_chain(&mut r, 6);
        let chain = raw.chain();
        let q = random_vec(&mut r, 6, -3.0, 3.0);
        for frame in raw.frame_names() {
            let pose = chain.forward_kinematics(&q, &frame).unwrap();
            let m = oracle_fk(&raw, &q, &frame);
            let p = Vector3::new(m[(0, 3)], m[(1, 3)], m[(2, 3)]);
            let rot: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into_owned();
            assert!((pose.position - p).amax() < 1e-12, "{frame}: {} vs {}", pose.position, p);
            assert!((pose.rotation_matrix() - rot).amax() < 1e-12);
        }
    }
}

#[test]
fn fk_composes_across_a_split() {
    // Splitting after joint k: pose(tool) = pose(frame at joint k) · pose of the
    // remaining sub-chain mounted at the origin.
    let mut r = rng(12);
    for _ in 0..50 {
        let raw = random_chain(&mut r, 6);
        let q = random_vec(&mut r, 6, -3.0, 3.0);
        let k = 2;

        let mut head = raw.file.clone();
        head.joints.truncate(k + 1);
        head.frames.clear();
        head.frames.insert(
            "cut".into(),
            FrameEntry {
                parent_joint: k,
                xyz: [0.0; 3],
                rpy: [0.0; 3],
            },
        );
        let tail = ChainFile {
            joints: raw.file.joints[k + 1..].to_vec(),
            frames: [("tool".to_string(), {
                let mut f = raw.file.frames["tool"].clone();
                f.parent_joint -= k + 1;
                f
            })]
            .into(),
        };

        let full = raw.chain().forward_kinematics(&q, "tool").unwrap().to_isometry();
        let a = head
            .into_chain()
            .unwrap()
            .forward_kinematics(&q.rows(0, k + 1).into_owned(), "cut")
            .unwrap()
            .to_isometry();
        let b = tail
            .into_chain()
            .unwrap()
            .forward_kinematics(&q.rows(k + 1, 6 - k - 1).into_owned(), "tool")
            .unwrap()
            .to_isometry();
        let composed = a * b;
        assert!((composed.translation.vector - full.translation.vector).amax() < 1e-12);
        assert!(composed.rotation.angle_to(&full.rotation) < 1e-12);
    }
}

fn fd_twist(raw: &common::RawChain, q: &DVector<f64>, dir: &DVector<f64>, frame: &str) -> (Vector3<f64>, Vector3<f64>) {
    let h = 1e-6;
    let chain = raw.chain();
    let plus = chain.forward_kinematics(&(q + dir * h), frame).unwrap();
    let minus = chain.forward_kinematics(&(q - dir * h), frame).unwrap();
    let lin = (plus.position - minus.position) / (2.0 * h);
    // Base-frame angular velocity from the quaternion logarithm.
    let rel: UnitQuaternion<f64> = plus.rotation * minus.rotation.inverse();
    let ang = rel.scaled_axis() / (2.0 * h);
    (lin, ang)
}

#[test]
fn jacobian_matches_finite_differences() {
    let mut r = rng(13);
    for _ in 0..100 {
        let raw = random_chain(&mut r, 6);
        let chain = raw.chain();
        let q = random_vec(&mut r, 6, -3.0, 3.0);
        for frame in raw.frame_names() {
            let jac = chain.geometric_jacobian(&q, &frame).unwrap();
            for i in 0..6 {
                let mut e = DVector::zeros(6);
                e[i] = 1.0;
                let (lin, ang) = fd_twist(&raw, &q, &e, &frame);
                let col = jac.column(i);
                assert!((col.rows(0, 3) - lin).amax() < 1e-5, "{frame} col {i} linear");
                assert!((col.rows(3, 3) - ang).amax() < 1e-5, "{frame} col {i} angular");
            }
            // Random directions, relative tolerance.
            let d = random_vec(&mut r, 6, -1.0, 1.0);
            let (lin, ang) = fd_twist(&raw, &q, &d, &frame);
            let jd = &jac * &d;
            let scale = jd.norm().max(1e-3);
            assert!((jd.rows(0, 3) - lin).norm() / scale < 1e-5);
            assert!((jd.rows(3, 3) - ang).norm() / scale < 1e-5);
        }
    }
}

#[test]
fn local_rotational_rows_round_trip() {
    let mut r = rng(14);
    for _ in 0..100 {
        let raw = random_chain(&mut r, 6);
        let chain = raw.chain();
        let q = random_vec(&mut r, 6, -3.0, 3.0);
        let pose = chain.forward_kinematics(&q, "tool").unwrap();
        let jac = chain.geometric_jacobian(&q, "tool").unwrap();
        let local = chain.local_rotational_rows(&q, "tool").unwrap();
        let rot = pose.rotation_matrix();
        let z_row = rot.column(2).transpose() * jac.rows(3, 3);
        let mut stacked = nalgebra::DMatrix::zeros(3, 6);
        stacked.rows_mut(0, 2).copy_from(&local);
        stacked.row_mut(2).copy_from(&z_row);
        let back = rot * stacked;
        assert!((back - jac.rows(3, 3)).amax() < 1e-12);
    }
}
