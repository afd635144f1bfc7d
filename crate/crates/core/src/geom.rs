//! Small numeric 3-vector / quaternion helpers used outside the tape.
//! Quaternions are (w, x, y, z), kept unit-norm.

pub type Vec3 = [f64; 3];
pub type Quat = [f64; 4];

pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

pub fn normalize3(a: Vec3) -> Vec3 {
    let n = norm3(a);
    scale3(a, 1.0 / n)
}

pub fn quat_identity() -> Quat {
    [1.0, 0.0, 0.0, 0.0]
}

pub fn quat_norm(q: Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn quat_mul(a: Quat, b: Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_from_axis_angle(axis: Vec3, angle: f64) -> Quat {
    let axis = normalize3(axis);
    let h = 0.5 * angle;
    let s = h.sin();
    [h.cos(), axis[0] * s, axis[1] * s, axis[2] * s]
}

pub fn quat_about_z(angle: f64) -> Quat {
    quat_from_axis_angle([0.0, 0.0, 1.0], angle)
}

/// Row-major 3x3 rotation matrix of a unit quaternion.
pub fn quat_to_mat(q: Quat) -> [f64; 9] {
    let [w, x, y, z] = q;
    [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ]
}

pub fn quat_rotate(q: Quat, v: Vec3) -> Vec3 {
    let m = quat_to_mat(q);
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

/// Rotation of the x-axis about z encoded by `q`, i.e. the planar heading
/// of a rigid body whose local axis is +x.
pub fn quat_heading_z(q: Quat) -> f64 {
    let m = quat_to_mat(q);
    m[3].atan2(m[0])
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a % two_pi;
    if x <= -std::f64::consts::PI {
        x += two_pi;
    } else if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quat_rotation_matches_axis_angle() {
        let q = quat_from_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let v = quat_rotate(q, [1.0, 0.0, 0.0]);
        assert!((v[0]).abs() < 1e-12 && (v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heading_roundtrip() {
        for &a in &[-2.5, -0.7, 0.0, 0.4, 1.9, 3.0] {
            let q = quat_about_z(a);
            assert!((quat_heading_z(q) - a).abs() < 1e-12);
        }
    }

    #[test]
    fn wrap_into_half_open_interval() {
        assert!((wrap_angle(std::f64::consts::PI + 0.1) + std::f64::consts::PI - 0.1).abs() < 1e-12);
        assert_eq!(wrap_angle(0.3), 0.3);
    }
}
