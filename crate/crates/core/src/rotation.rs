//! ZYX (yaw-pitch-roll) Euler angles. Angles are stored as `[roll, pitch, yaw]`
//! and `R = Rz(yaw) Ry(pitch) Rx(roll)` maps body-frame vectors to the world
//! frame.

use nalgebra::{Matrix3, Vector3};

use crate::dynamics::ModelError;

/// Distance from ±π/2 pitch at which the Euler-rate map is refused.
pub const GIMBAL_MARGIN: f64 = 1e-3;

fn rx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn ry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drx(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn dry(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drz(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// World-from-body rotation.
pub fn rotation_matrix(euler: &Vector3<f64>) -> Matrix3<f64> {
    rz(euler[2]) * ry(euler[1]) * rx(euler[0])
}

/// Partial derivatives of [`rotation_matrix`] with respect to roll, pitch
/// and yaw.
pub fn rotation_derivatives(euler: &Vector3<f64>) -> [Matrix3<f64>; 3] {
    let (x, y, z) = (rx(euler[0]), ry(euler[1]), rz(euler[2]));
    [
        z * y * drx(euler[0]),
        z * dry(euler[1]) * x,
        drz(euler[2]) * y * x,
    ]
}

fn check_pitch(euler: &Vector3<f64>) -> Result<(), ModelError> {
    let pitch = euler[1];
    if (pitch.abs() - std::f64::consts::FRAC_PI_2).abs() < GIMBAL_MARGIN
        || pitch.abs() > std::f64::consts::FRAC_PI_2
    {
        return Err(ModelError::GimbalLock { pitch });
    }
    Ok(())
}

/// Map from body angular velocity to Euler-angle rates, `θ̇ = T(θ) ω`.
pub fn euler_rate_matrix(euler: &Vector3<f64>) -> Result<Matrix3<f64>, ModelError> {
    check_pitch(euler)?;
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let tp = sp / cp;
    Ok(Matrix3::new(
        1.0,
        sr * tp,
        cr * tp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    ))
}

/// `∂(T(θ) ω)/∂θ`, a 3×3 matrix whose columns are the roll, pitch and yaw
/// partials.
pub fn euler_rate_jacobian(
    euler: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> Result<Matrix3<f64>, ModelError> {
    check_pitch(euler)?;
    let (sr, cr) = euler[0].sin_cos();
    let (sp, cp) = euler[1].sin_cos();
    let tp = sp / cp;
    let a = sr * omega[1] + cr * omega[2];
    let b = cr * omega[1] - sr * omega[2];
    Ok(Matrix3::new(
        tp * b,
        a / (cp * cp),
        0.0,
        -a,
        0.0,
        0.0,
        b / cp,
        a * sp / (cp * cp),
        0.0,
    ))
}
