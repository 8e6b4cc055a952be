//! Rigid transforms: relative actions between poses, chained reconstruction,
//! camera-frame readout and rotation charts.

use se3policy::geometry::{
    apply_action, camera_to_world, exp_so3, relative_action, rotation_convert, world_to_camera, AxisAngle,
    CameraExtrinsic, RelativeAction, Rotation, RotationChart, SE3Transform, Vector3,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let a = SE3Transform::new(exp_so3(&AxisAngle::new(0.0, 0.0, 0.4))?, Vector3::new(0.1, -0.2, 0.3));
    let b = SE3Transform::new(exp_so3(&AxisAngle::new(0.1, -0.3, 0.9))?, Vector3::new(0.15, -0.1, 0.25));

    let m = relative_action(&a, &b)?;
    println!("dp = {:?}", m.dp.as_slice());
    println!("dtheta = {:?} (|dtheta| = {:.4} rad)", m.dtheta.to_array(), m.dtheta.angle());
    let rebuilt = apply_action(&a, &RelativeAction::from_motion(m, 1.0))?;
    println!("closure error = {:.2e}", (rebuilt.to_homogeneous() - b.to_homogeneous()).amax());

    let ext = CameraExtrinsic::look_at(Vector3::new(0.6, 0.0, 0.6), Vector3::zeros(), Vector3::z())?;
    let cam = world_to_camera(&b, &ext);
    println!("camera-frame position = {:?}", cam.translation.as_slice());
    let back = camera_to_world(&cam, &ext);
    println!("camera round trip error = {:.2e}", (back.to_homogeneous() - b.to_homogeneous()).amax());

    let r = Rotation::AxisAngle(m.dtheta);
    for chart in [RotationChart::Quaternion, RotationChart::Euler] {
        println!("{chart:?}: {:?}", rotation_convert(&r, chart)?);
    }
    Ok(())
}
