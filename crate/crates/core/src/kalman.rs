//! Constant-velocity Kalman filter in (cx, cy, aspect, height) space.
//!
//! State is `[cx, cy, a, h, vcx, vcy, va, vh]` where `a = w / h`. Noise
//! standard deviations scale with the box height.

use nalgebra::{SMatrix, SVector};

use crate::error::{MotsError, Result};
use crate::types::BoundingBox;

pub type StateVector = SVector<f64, 8>;
pub type StateCovariance = SMatrix<f64, 8, 8>;
type Measurement = SVector<f64, 4>;
type MeasurementMatrix = SMatrix<f64, 4, 8>;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;
const ASPECT_STD_INIT: f64 = 1e-2;
const ASPECT_VEL_STD_INIT: f64 = 1e-5;
const ASPECT_STD_PROCESS: f64 = 1e-2;
const ASPECT_VEL_STD_PROCESS: f64 = 1e-5;
const ASPECT_STD_MEASUREMENT: f64 = 1e-1;
// Keeps the height positive when an update or a shrinking velocity would push it to zero.
const MIN_HEIGHT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub covariance: StateCovariance,
}

fn transition() -> StateCovariance {
    let mut f = StateCovariance::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn observation() -> MeasurementMatrix {
    let mut h = MeasurementMatrix::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn bbox_to_measurement(b: &BoundingBox) -> Measurement {
    let (cx, cy) = b.center();
    Measurement::new(cx, cy, b.w() / b.h(), b.h())
}

fn symmetrize(p: &StateCovariance) -> StateCovariance {
    (p + p.transpose()) * 0.5
}

/// Creates a track state from an unassociated box, with zero velocity.
pub fn initiate(bbox: &BoundingBox) -> KalmanState {
    let z = bbox_to_measurement(bbox);
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<4>(0).copy_from(&z);
    let h = bbox.h();
    let std = [
        2.0 * STD_WEIGHT_POSITION * h,
        2.0 * STD_WEIGHT_POSITION * h,
        ASPECT_STD_INIT,
        2.0 * STD_WEIGHT_POSITION * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        10.0 * STD_WEIGHT_VELOCITY * h,
        ASPECT_VEL_STD_INIT,
        10.0 * STD_WEIGHT_VELOCITY * h,
    ];
    let covariance = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
    KalmanState { mean, covariance }
}

/// Advances the state one frame.
pub fn predict(state: &KalmanState) -> KalmanState {
    let h = state.mean[3];
    let std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        ASPECT_STD_PROCESS,
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_VELOCITY * h,
        STD_WEIGHT_VELOCITY * h,
        ASPECT_VEL_STD_PROCESS,
        STD_WEIGHT_VELOCITY * h,
    ];
    let q = StateCovariance::from_diagonal(&StateVector::from_iterator(std.iter().map(|s| s * s)));
    let f = transition();
    let mut mean = f * state.mean;
    mean[3] = mean[3].max(MIN_HEIGHT);
    mean[2] = mean[2].max(MIN_HEIGHT);
    let covariance = symmetrize(&(f * state.covariance * f.transpose() + q));
    KalmanState { mean, covariance }
}

/// Corrects the state with an observed box.
pub fn update(state: &KalmanState, measurement: &BoundingBox) -> KalmanState {
    let hm = observation();
    let h = state.mean[3];
    let r_std = [
        STD_WEIGHT_POSITION * h,
        STD_WEIGHT_POSITION * h,
        ASPECT_STD_MEASUREMENT,
        STD_WEIGHT_POSITION * h,
    ];
    let r = SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::from_iterator(r_std.iter().map(|s| s * s)));
    let projected_mean = hm * state.mean;
    let projected_cov = hm * state.covariance * hm.transpose() + r;
    let pht = state.covariance * hm.transpose();
    // S is symmetric positive definite (R > 0), so Cholesky always succeeds for finite inputs.
    let gain = match projected_cov.cholesky() {
        Some(chol) => chol.solve(&pht.transpose()).transpose(),
        None => pht * projected_cov.try_inverse().unwrap_or_else(SMatrix::<f64, 4, 4>::zeros),
    };
    let innovation = bbox_to_measurement(measurement) - projected_mean;
    let mut mean = state.mean + gain * innovation;
    mean[3] = mean[3].max(MIN_HEIGHT);
    mean[2] = mean[2].max(MIN_HEIGHT);
    let covariance = symmetrize(&(state.covariance - gain * projected_cov * gain.transpose()));
    KalmanState { mean, covariance }
}

/// Converts the positional part of the state back to a box.
pub fn state_to_bbox(state: &KalmanState) -> Result<BoundingBox> {
    let (cx, cy, aspect, height) = (state.mean[0], state.mean[1], state.mean[2], state.mean[3]);
    if !(height > 0.0 && aspect > 0.0) {
        return Err(MotsError::DegenerateState { height, aspect });
    }
    let w = aspect * height;
    BoundingBox::new(cx - w / 2.0, cy - height / 2.0, w, height)
}

impl KalmanState {
    pub fn center(&self) -> (f64, f64) {
        (self.mean[0], self.mean[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn min_eigenvalue(p: &StateCovariance) -> f64 {
        p.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    fn is_symmetric(p: &StateCovariance) -> bool {
        (p - p.transpose()).abs().max() <= 1e-9
    }

    #[test]
    fn initiate_examples() {
        let s = initiate(&bb(0., 0., 10., 20.));
        assert_eq!(s.mean.as_slice(), &[5., 10., 0.5, 20., 0., 0., 0., 0.]);
        let s = initiate(&bb(100., 50., 40., 80.));
        assert_eq!(s.mean.as_slice(), &[120., 90., 0.5, 80., 0., 0., 0., 0.]);
        assert!(min_eigenvalue(&s.covariance) > 0.0);
        assert!(is_symmetric(&s.covariance));
    }

    #[test]
    fn predict_examples() {
        let s = initiate(&bb(0., 0., 10., 20.));
        let p = predict(&s);
        assert_eq!(p.center(), (5.0, 10.0));
        assert!(p.covariance.trace() > s.covariance.trace());

        let mut moving = s.clone();
        moving.mean = StateVector::from_column_slice(&[5., 10., 0.5, 20., 2., 1., 0., 0.]);
        assert_eq!(predict(&moving).center(), (7.0, 11.0));
    }

    #[test]
    fn update_with_predicted_box_keeps_mean() {
        let s = predict(&initiate(&bb(10., 10., 20., 40.)));
        let b = state_to_bbox(&s).unwrap();
        let u = update(&s, &b);
        for i in 0..4 {
            assert!((u.mean[i] - s.mean[i]).abs() < 1e-9);
        }
        for i in 0..4 {
            assert!(u.covariance[(i, i)] <= s.covariance[(i, i)]);
        }
        assert!(is_symmetric(&u.covariance));
        assert!(min_eigenvalue(&u.covariance) >= -1e-9);
    }

    #[test]
    fn state_to_bbox_examples() {
        let s = initiate(&bb(0., 0., 10., 20.));
        let b = state_to_bbox(&s).unwrap();
        assert!((b.x() - 0.).abs() < 1e-9 && (b.y() - 0.).abs() < 1e-9);
        assert!((b.w() - 10.).abs() < 1e-9 && (b.h() - 20.).abs() < 1e-9);

        let mut wide = s.clone();
        wide.mean[2] = 2.0;
        wide.mean[3] = 10.0;
        assert!((state_to_bbox(&wide).unwrap().w() - 20.0).abs() < 1e-12);

        let mut bad = s;
        bad.mean[3] = 0.0;
        assert!(matches!(state_to_bbox(&bad), Err(MotsError::DegenerateState { .. })));
    }

    /// Independent two-state (position, velocity) filter for one axis. Every
    /// matrix of the full filter is block diagonal per axis, so the cx
    /// component must evolve exactly like this.
    struct ScalarKf {
        x: [f64; 2],
        p: [[f64; 2]; 2],
    }

    impl ScalarKf {
        fn new(pos: f64, h: f64) -> Self {
            let sp = 2.0 * h / 20.0;
            let sv = 10.0 * h / 160.0;
            ScalarKf {
                x: [pos, 0.0],
                p: [[sp * sp, 0.0], [0.0, sv * sv]],
            }
        }

        fn predict(&mut self, h: f64) {
            let qp = (h / 20.0).powi(2);
            let qv = (h / 160.0).powi(2);
            self.x = [self.x[0] + self.x[1], self.x[1]];
            let p = self.p;
            // F P F^T with F = [[1,1],[0,1]]
            self.p = [
                [p[0][0] + p[0][1] + p[1][0] + p[1][1] + qp, p[0][1] + p[1][1]],
                [p[1][0] + p[1][1], p[1][1] + qv],
            ];
        }

        fn update(&mut self, z: f64, h: f64) {
            let r = (h / 20.0).powi(2);
            let s = self.p[0][0] + r;
            let k = [self.p[0][0] / s, self.p[1][0] / s];
            let y = z - self.x[0];
            self.x = [self.x[0] + k[0] * y, self.x[1] + k[1] * y];
            let p = self.p;
            self.p = [
                [p[0][0] - k[0] * p[0][0], p[0][1] - k[0] * p[0][1]],
                [p[1][0] - k[1] * p[0][0], p[1][1] - k[1] * p[0][1]],
            ];
        }
    }

    #[test]
    fn two_updates_then_predict_matches_scalar_oracle() {
        let h = 20.0;
        let mut s = initiate(&BoundingBox::from_center(0.0, 50.0, 10.0, h).unwrap());
        s = predict(&s);
        s = update(&s, &BoundingBox::from_center(2.0, 50.0, 10.0, h).unwrap());
        s = predict(&s);

        let mut o = ScalarKf::new(0.0, h);
        o.predict(h);
        o.update(2.0, h);
        o.predict(h);

        let cx = s.mean[0];
        assert!((cx - o.x[0]).abs() < 1e-9, "{cx} vs oracle {}", o.x[0]);
        assert!(cx > 2.0 && cx <= 4.0, "predicted cx {cx}");
    }

    #[test]
    fn covariance_stays_psd_along_a_track() {
        let mut s = initiate(&bb(100., 100., 30., 60.));
        for t in 1..200 {
            s = predict(&s);
            assert!(is_symmetric(&s.covariance));
            assert!(min_eigenvalue(&s.covariance) >= -1e-9);
            let wobble = if t % 2 == 0 { 1.5 } else { -1.5 };
            s = update(&s, &bb(100. + 3. * t as f64 + wobble, 100., 30., 60.));
            assert!(is_symmetric(&s.covariance));
            assert!(min_eigenvalue(&s.covariance) >= -1e-9);
        }
    }

    #[test]
    fn prediction_error_converges_on_linear_motion() {
        // Fixed trajectory: (4, -2) px/frame, constant size.
        let pos = |t: usize| (50.0 + 4.0 * t as f64, 300.0 - 2.0 * t as f64);
        let (x0, y0) = pos(0);
        let mut s = initiate(&BoundingBox::from_center(x0, y0, 20.0, 40.0).unwrap());
        let mut errors = Vec::new();
        for t in 1..40 {
            s = predict(&s);
            let (px, py) = s.center();
            let (tx, ty) = pos(t);
            errors.push(((px - tx).powi(2) + (py - ty).powi(2)).sqrt());
            s = update(&s, &BoundingBox::from_center(tx, ty, 20.0, 40.0).unwrap());
        }
        for w in errors[3..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "error grew: {:?}", w);
        }
        assert!(*errors.last().unwrap() < 0.05);
    }
}
