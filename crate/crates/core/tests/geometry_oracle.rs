//! Geometry checked against nalgebra and closed forms.

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use proptest::prelude::*;

use ugcl::geometry::{
    compose_projection, project_stereo, reconstruct_3d, rotation_residuals, vanishing_points, world_center,
    CameraParams, Point3, DEHOMOGENIZE_EPS,
};

fn oracle_p(c: &CameraParams) -> Matrix3x4<f64> {
    let k = Matrix3::new(c.f_x, 0.0, c.p_x, 0.0, c.f_y, c.p_y, 0.0, 0.0, 1.0);
    let r = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), c.theta_p).into_inner();
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &Vector3::new(c.t_x, c.t_y, c.t_z));
    k * rt
}

fn project(p: &Matrix3x4<f64>, h: Vector4<f64>) -> Option<[f64; 2]> {
    let x = p * h;
    (x[2].abs() >= DEHOMOGENIZE_EPS).then(|| [x[0] / x[2], x[1] / x[2]])
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

prop_compose! {
    fn camera()(
        f_x in 20.0..2000.0f64,
        f_y in 20.0..2000.0f64,
        p_x in -100.0..300.0f64,
        p_y in -100.0..300.0f64,
        b in 0.05..2.0f64,
        d in 0.1..50.0f64,
        theta_p in -3.1..3.1f64,
        t_x in -20.0..20.0f64,
        t_y in -20.0..20.0f64,
        t_z in -20.0..20.0f64,
    ) -> CameraParams {
        CameraParams { f_x, f_y, p_x, p_y, b, d, theta_p, t_x, t_y, t_z }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn projection_matches_matrix_product(c in camera()) {
        let p = compose_projection(&c).unwrap().p;
        let o = oracle_p(&c);
        for i in 0..3 {
            for j in 0..4 {
                prop_assert!(close(p.0[i][j], o[(i, j)], 1e-12), "P[{i}][{j}] {} vs {}", p.0[i][j], o[(i, j)]);
            }
        }
    }

    #[test]
    fn vanishing_points_are_projected_directions(c in camera()) {
        let p = compose_projection(&c).unwrap().p;
        let o = oracle_p(&c);
        for (j, v) in vanishing_points(&p).iter().enumerate() {
            let mut dir = Vector4::zeros();
            dir[j] = 1.0;
            match (v, project(&o, dir)) {
                (Some(a), Some(b)) => {
                    prop_assert!(close(a[0], b[0], 1e-9) && close(a[1], b[1], 1e-9));
                }
                (None, None) => {}
                (a, b) => prop_assert!(false, "finiteness differs: {a:?} vs {b:?}"),
            }
        }
        let origin = project(&o, Vector4::new(0.0, 0.0, 0.0, 1.0));
        match (world_center(&p), origin) {
            (Some(a), Some(b)) => prop_assert!(close(a[0], b[0], 1e-9) && close(a[1], b[1], 1e-9)),
            (None, None) => {}
            (a, b) => prop_assert!(false, "finiteness differs: {a:?} vs {b:?}"),
        }
    }

    #[test]
    fn pitch_only_closed_forms(c in camera()) {
        prop_assume!(c.theta_p.sin().abs() > 1e-3 && c.theta_p.cos().abs() > 1e-3);
        let p = compose_projection(&c).unwrap().p;
        let [v_x, v_y, v_z] = vanishing_points(&p);
        let v_x = v_x.unwrap();
        let v_z = v_z.unwrap();
        prop_assert!(v_y.is_none());
        prop_assert!(close(v_x[0], c.p_x - c.f_x / c.theta_p.tan(), 1e-9));
        prop_assert!(close(v_z[0], c.p_x + c.f_x * c.theta_p.tan(), 1e-9));
        prop_assert!(close(v_x[1], c.p_y, 1e-9) && close(v_z[1], c.p_y, 1e-9));
    }

    #[test]
    fn pitch_rotation_is_orthonormal(c in camera()) {
        let r = compose_projection(&c).unwrap().r;
        for v in rotation_residuals(&r) {
            prop_assert!(v.abs() < 1e-12, "{v}");
        }
    }

    #[test]
    fn stereo_round_trip(
        c in camera(),
        fwd in 1.0..80.0f64,
        lat in -30.0..30.0f64,
        up in -30.0..30.0f64,
    ) {
        // A point placed in front of the camera, expressed in world coordinates.
        let (s, co) = (c.theta_p.sin(), c.theta_p.cos());
        let q = Point3::new(fwd * co + up * s + c.t_x, lat + c.t_y, -fwd * s + up * co + c.t_z);
        let obs = project_stereo(&c, &q).unwrap();
        prop_assert!((obs.left.x - obs.right.x - obs.disparity).abs() < 1e-9);
        let back = reconstruct_3d(&CameraParams { d: obs.disparity, ..c }, &obs.left).unwrap();
        for (a, b) in back.to_array().iter().zip(q.to_array()) {
            prop_assert!(close(*a, b, 1e-10), "{a} vs {b}");
        }
    }
}

#[test]
fn canonical_camera() {
    let c = CameraParams::from_array([1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let p = compose_projection(&c).unwrap().p;
    let [v_x, v_y, v_z] = vanishing_points(&p);
    assert!(v_x.is_none() && v_y.is_none());
    assert_eq!(v_z, Some([0.0, 0.0]));
    assert!(world_center(&p).is_none());
}
