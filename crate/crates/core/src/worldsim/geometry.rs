//! Planar ray and distance queries.

use super::Rect;

/// Entry distance of the ray `origin + t·dir` (`dir` unit length) into
/// `rect`, or `None` if it misses. An origin inside the rectangle hits at 0.
pub fn ray_rect(origin: [f64; 2], dir: [f64; 2], rect: &Rect) -> Option<f64> {
    let mut t_min = 0.0f64;
    let mut t_max = f64::INFINITY;
    let lo = [rect.min_x, rect.min_y];
    let hi = [rect.max_x, rect.max_y];
    for axis in 0..2 {
        if dir[axis].abs() < 1e-15 {
            if origin[axis] < lo[axis] || origin[axis] > hi[axis] {
                return None;
            }
        } else {
            let inv = 1.0 / dir[axis];
            let mut t0 = (lo[axis] - origin[axis]) * inv;
            let mut t1 = (hi[axis] - origin[axis]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_min = t_min.max(t0);
            t_max = t_max.min(t1);
            if t_min > t_max {
                return None;
            }
        }
    }
    Some(t_min)
}

/// Distance along the ray from a point inside `rect` to its boundary.
pub fn ray_exit(origin: [f64; 2], dir: [f64; 2], rect: &Rect) -> f64 {
    let mut t = f64::INFINITY;
    if dir[0] > 1e-15 {
        t = t.min((rect.max_x - origin[0]) / dir[0]);
    } else if dir[0] < -1e-15 {
        t = t.min((rect.min_x - origin[0]) / dir[0]);
    }
    if dir[1] > 1e-15 {
        t = t.min((rect.max_y - origin[1]) / dir[1]);
    } else if dir[1] < -1e-15 {
        t = t.min((rect.min_y - origin[1]) / dir[1]);
    }
    t.max(0.0)
}

/// Nearest nonnegative hit of the ray against a disc.
pub fn ray_circle(origin: [f64; 2], dir: [f64; 2], center: [f64; 2], radius: f64) -> Option<f64> {
    let oc = [origin[0] - center[0], origin[1] - center[1]];
    let b = oc[0] * dir[0] + oc[1] * dir[1];
    let c = oc[0] * oc[0] + oc[1] * oc[1] - radius * radius;
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let t = -b - disc.sqrt();
    (t >= 0.0).then_some(t)
}

/// Euclidean distance from a point to a rectangle (0 inside).
pub fn point_rect_distance(p: [f64; 2], rect: &Rect) -> f64 {
    let dx = (rect.min_x - p[0]).max(0.0).max(p[0] - rect.max_x);
    let dy = (rect.min_y - p[1]).max(0.0).max(p[1] - rect.max_y);
    dx.hypot(dy)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn ray_rect_hits_and_misses() {
        assert_eq!(ray_rect([-2.0, 0.5], [1.0, 0.0], &unit()), Some(2.0));
        assert_eq!(ray_rect([-2.0, 1.5], [1.0, 0.0], &unit()), None);
        assert_eq!(ray_rect([2.0, 0.5], [1.0, 0.0], &unit()), None);
        assert_eq!(ray_rect([0.5, 0.5], [1.0, 0.0], &unit()), Some(0.0));
    }

    #[test]
    fn ray_exit_from_inside() {
        assert!((ray_exit([0.25, 0.5], [1.0, 0.0], &unit()) - 0.75).abs() < 1e-15);
        assert!((ray_exit([0.5, 0.5], [0.0, -1.0], &unit()) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ray_circle_cases() {
        let t = ray_circle([0.0, 0.0], [1.0, 0.0], [5.0, 0.0], 1.0).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(ray_circle([0.0, 0.0], [-1.0, 0.0], [5.0, 0.0], 1.0).is_none());
        assert!(ray_circle([0.0, 0.0], [1.0, 0.0], [5.0, 2.0], 1.0).is_none());
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
        assert!(wrap_angle(-PI) > 0.0);
    }
}
