use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitSphere};
use serde::Serialize;

use super::HarnessResult;
use crate::datasets::{make_windows, record_demonstrations, RecordConfig, SupervisionVariant, TrajTarget};
use crate::geometry::{
    apply_action, camera_to_world, exp_so3, log_so3, relative_action, se3_compose, se3_inverse, world_to_camera,
    AxisAngle, CameraExtrinsic, RelativeAction, SE3Transform,
};
use crate::policy::{build_variant, FeatureNormalizer, PolicyConfig, PolicyError, TrainBatch};
use crate::simworld::{DepthMode, ExpertConfig, FeatureLayout, NoiseConfig, SceneDocument, TaskFamily};
use crate::tensornet::{grad_check, grad_check_params, Tape, Tensor, TensorError, TensorResult, Var, GRAD_CHECK_STEP};

/// One named measurement compared against a bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckLine {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub lines: Vec<CheckLine>,
}

impl CheckOutcome {
    fn push(&mut self, name: impl Into<String>, value: f64, bound: f64) {
        let passed = value.is_finite() && value < bound;
        self.lines.push(CheckLine { name: name.into(), value, bound, passed });
    }

    pub fn passed(&self) -> bool {
        !self.lines.is_empty() && self.lines.iter().all(|l| l.passed)
    }

    pub fn line(&self, name: &str) -> Option<&CheckLine> {
        self.lines.iter().find(|l| l.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let tag = if l.passed { "ok  " } else { "FAIL" };
            s.push_str(&format!("{tag} {:<28} {:.3e} < {:.0e}\n", l.name, l.value, l.bound));
        }
        s
    }
}

fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> AxisAngle {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    AxisAngle(Vector3::from(axis) * rng.random_range(0.0..max_angle))
}

fn random_pose(rng: &mut ChaCha8Rng) -> HarnessResult<SE3Transform> {
    let r = exp_so3(&random_rotation(rng, std::f64::consts::PI - 1e-3))?;
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    Ok(SE3Transform::new(r, t))
}

fn hom_diff(a: &Matrix4<f64>, b: &Matrix4<f64>) -> f64 {
    (a - b).amax()
}

/// Geometry self-test over `samples` seeded random draws: exp/log round
/// trips, group-law residuals, relative-action closure, chained
/// reconstruction and camera-frame alignment. Reference values come from
/// plain 4x4 homogeneous products.
pub fn run_geomtest(samples: usize, seed: u64) -> HarnessResult<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome { lines: Vec::new() };

    let mut roundtrip = 0.0_f64;
    for _ in 0..samples {
        let th = random_rotation(&mut rng, std::f64::consts::PI - 1e-3);
        let back = log_so3(&exp_so3(&th)?)?;
        roundtrip = roundtrip.max((back.0 - th.0).amax());
    }
    out.push("exp_log_roundtrip", roundtrip, 1e-9);

    let (mut assoc, mut ident, mut inv) = (0.0_f64, 0.0_f64, 0.0_f64);
    let eye = Matrix4::identity();
    for _ in 0..samples {
        let (a, b, c) = (random_pose(&mut rng)?, random_pose(&mut rng)?, random_pose(&mut rng)?);
        let left = se3_compose(&se3_compose(&a, &b), &c).to_homogeneous();
        let right = se3_compose(&a, &se3_compose(&b, &c)).to_homogeneous();
        assoc = assoc.max(hom_diff(&left, &right));
        ident = ident.max(hom_diff(&se3_compose(&a, &SE3Transform::identity()).to_homogeneous(), &a.to_homogeneous()));
        inv = inv.max(hom_diff(&se3_compose(&a, &se3_inverse(&a)).to_homogeneous(), &eye));
        let mat = a.to_homogeneous() * b.to_homogeneous();
        assoc = assoc.max(hom_diff(&se3_compose(&a, &b).to_homogeneous(), &mat));
    }
    out.push("group_associativity", assoc, 1e-12);
    out.push("group_identity", ident, 1e-12);
    out.push("group_inverse", inv, 1e-12);

    let mut closure = 0.0_f64;
    for _ in 0..samples {
        let (a, b) = (random_pose(&mut rng)?, random_pose(&mut rng)?);
        let m = relative_action(&a, &b)?;
        let rebuilt = apply_action(&a, &RelativeAction::from_motion(m, 0.0))?;
        closure = closure.max(hom_diff(&rebuilt.to_homogeneous(), &b.to_homogeneous()));
    }
    out.push("action_closure", closure, 1e-9);

    // A smooth horizon-64 path with small steps, rebuilt by chaining.
    let mut chained = 0.0_f64;
    for _ in 0..samples.div_ceil(100) {
        let mut poses = vec![random_pose(&mut rng)?];
        for _ in 0..64 {
            let step = SE3Transform::new(
                exp_so3(&random_rotation(&mut rng, 0.2))?,
                Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            );
            poses.push(se3_compose(poses.last().expect("non-empty"), &step));
        }
        let mut t = poses[0];
        for w in poses.windows(2) {
            t = apply_action(&t, &RelativeAction::from_motion(relative_action(&w[0], &w[1])?, 0.0))?;
        }
        chained = chained.max(hom_diff(&t.to_homogeneous(), &poses[64].to_homogeneous()));
    }
    out.push("chained_reconstruction_h64", chained, 1e-8);

    let (mut align, mut align_rt) = (0.0_f64, 0.0_f64);
    for _ in 0..samples {
        let ext = CameraExtrinsic::new(random_pose(&mut rng)?);
        let t = random_pose(&mut rng)?;
        let inv = ext.t_cam_to_world.to_homogeneous().try_inverse().expect("rigid transforms are invertible");
        let cam = world_to_camera(&t, &ext);
        align = align.max(hom_diff(&cam.to_homogeneous(), &(inv * t.to_homogeneous())));
        align_rt = align_rt.max(hom_diff(&camera_to_world(&cam, &ext).to_homogeneous(), &t.to_homogeneous()));
    }
    out.push("camera_alignment", align, 1e-12);
    out.push("camera_roundtrip", align_rt, 1e-12);
    Ok(out)
}

fn randn(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

/// Contracts a matrix output with a fixed weight so every output entry gets a
/// distinct upstream gradient.
fn probe(tape: &mut Tape, y: Var, seed: u64) -> TensorResult<Var> {
    let t = tape.value(y);
    let w = randn(&mut ChaCha8Rng::seed_from_u64(seed), t.rows(), t.cols());
    let w = tape.constant(w)?;
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type OpCase = (&'static str, Vec<Tensor>, Box<dyn Fn(&mut Tape, &[Var]) -> TensorResult<Var>>);

fn op_cases(rng: &mut ChaCha8Rng) -> Vec<OpCase> {
    let positions = [0.0, 1.0, 2.0, 5.0];
    // l1 inputs are kept away from pred == target so no coordinate sits on the kink.
    let target = randn(rng, 3, 4);
    let mut pred = target.clone();
    pred.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v += if i % 2 == 0 { 0.3 } else { -0.4 });
    vec![
        ("matmul", vec![randn(rng, 3, 4), randn(rng, 4, 2)], Box::new(|t, v| { let y = t.matmul(v[0], v[1])?; probe(t, y, 1) })),
        ("add", vec![randn(rng, 3, 4), randn(rng, 3, 4)], Box::new(|t, v| { let y = t.add(v[0], v[1])?; probe(t, y, 2) })),
        ("sub", vec![randn(rng, 3, 4), randn(rng, 3, 4)], Box::new(|t, v| { let y = t.sub(v[0], v[1])?; probe(t, y, 3) })),
        ("mul", vec![randn(rng, 3, 4), randn(rng, 3, 4)], Box::new(|t, v| { let y = t.mul(v[0], v[1])?; probe(t, y, 4) })),
        ("add_row", vec![randn(rng, 3, 4), randn(rng, 1, 4)], Box::new(|t, v| { let y = t.add_row(v[0], v[1])?; probe(t, y, 5) })),
        ("scale", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.scale(v[0], -1.7)?; probe(t, y, 6) })),
        ("concat_cols", vec![randn(rng, 3, 2), randn(rng, 3, 3)], Box::new(|t, v| { let y = t.concat_cols(&[v[0], v[1]])?; probe(t, y, 7) })),
        ("slice_cols", vec![randn(rng, 3, 5)], Box::new(|t, v| { let y = t.slice_cols(v[0], 1, 4)?; probe(t, y, 8) })),
        ("concat_groups", vec![randn(rng, 4, 3), randn(rng, 2, 3)], Box::new(|t, v| { let y = t.concat_groups(&[(v[0], 2), (v[1], 1)], 2)?; probe(t, y, 9) })),
        ("tile_rows", vec![randn(rng, 2, 3)], Box::new(|t, v| { let y = t.tile_rows(v[0], 3)?; probe(t, y, 10) })),
        ("gelu", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.gelu(v[0])?; probe(t, y, 11) })),
        ("sigmoid", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.sigmoid(v[0])?; probe(t, y, 12) })),
        ("softmax", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.softmax(v[0])?; probe(t, y, 13) })),
        ("layer_norm", vec![randn(rng, 3, 6), randn(rng, 1, 6), randn(rng, 1, 6)], Box::new(|t, v| { let y = t.layer_norm(v[0], v[1], v[2])?; probe(t, y, 14) })),
        ("normalize_rows", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.normalize_rows(v[0])?; probe(t, y, 15) })),
        ("rope", vec![randn(rng, 4, 8)], Box::new(move |t, v| { let y = t.rope(v[0], &positions, 2, 100.0)?; probe(t, y, 16) })),
        ("attention", vec![randn(rng, 4, 4), randn(rng, 6, 4), randn(rng, 6, 4)], Box::new(|t, v| { let y = t.attention(v[0], v[1], v[2], 2, 2, 3)?; probe(t, y, 17) })),
        ("relu", vec![randn(rng, 3, 4)], Box::new(|t, v| { let y = t.relu(v[0])?; probe(t, y, 18) })),
        ("l1_loss", vec![pred, target], Box::new(|t, v| t.l1_loss(v[0], v[1]))),
        ("sum", vec![randn(rng, 3, 4)], Box::new(|t, v| t.sum(v[0]))),
    ]
}

fn policy_err(e: PolicyError) -> TensorError {
    match e {
        PolicyError::Tensor(t) => t,
        other => TensorError::Config(other.to_string()),
    }
}

/// Central-difference checks of every tape op (bound 1e-6 each) and of the
/// tiny policy's total loss for every supervision variant (bound 1e-5), in
/// 64-bit arithmetic.
pub fn run_gradcheck(seed: u64) -> HarnessResult<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = CheckOutcome { lines: Vec::new() };
    for (name, inputs, f) in op_cases(&mut rng) {
        let r = grad_check(f, &inputs, GRAD_CHECK_STEP)?;
        out.push(format!("op.{name}"), if r.checked == 0 { f64::NAN } else { r.max_rel_error }, 1e-6);
    }

    let doc = SceneDocument::preset(TaskFamily::Goal);
    let rc = RecordConfig { episodes: 1, seed, expert: ExpertConfig::default(), noise: NoiseConfig::none(), depth_mode: DepthMode::Metric };
    let set = record_demonstrations(&doc.scene, &doc.tasks[0], &rc)?;
    let layout = FeatureLayout::for_scene(&doc.scene, DepthMode::Metric);
    for target in TrajTarget::ALL {
        let cfg = PolicyConfig { seed, ..PolicyConfig::tiny(SupervisionVariant::new(target)) };
        let windows = make_windows(&set.demos[0], cfg.horizon)?;
        let policy = build_variant(&cfg, &layout, FeatureNormalizer::identity(&layout))?;
        let refs = [&windows[0], &windows[windows.len() / 2]];
        let batch = TrainBatch::from_windows(&cfg, &layout, policy.normalizer(), &doc.scene.camera, &refs)?;
        let r = grad_check_params(
            policy.params(),
            |tape, ps| policy.loss_with(tape, ps, &batch).map(|l| l.total).map_err(policy_err),
            GRAD_CHECK_STEP,
        )?;
        out.push(format!("policy.{}", cfg.variant.label()), r.max_rel_error, 1e-5);
    }
    Ok(out)
}
