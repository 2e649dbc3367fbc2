//! Constant-velocity Kalman filter over (cx, cy, aspect, height) with
//! confidence-scaled measurement noise, plus gating and overlap helpers.

use nalgebra::{Matrix4, SMatrix, SVector, Vector4};

use crate::error::{Error, Result};
use crate::model::BoundingBox;

type Matrix4x8<T> = SMatrix<T, 4, 8>;
pub type Mean8 = SVector<f64, 8>;
pub type Cov8 = SMatrix<f64, 8, 8>;

/// 0.95 quantile of the chi-square distribution with 4 degrees of freedom.
pub const CHI2_095_4DOF: f64 = 9.4877;

const STD_WEIGHT_POSITION: f64 = 1.0 / 20.0;
const STD_WEIGHT_VELOCITY: f64 = 1.0 / 160.0;

pub fn chi2_gate_095_4dof() -> f64 {
    CHI2_095_4DOF
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: Mean8,
    pub covariance: Cov8,
}

fn motion_matrix() -> Cov8 {
    let mut f = Cov8::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    f
}

fn update_matrix() -> Matrix4x8<f64> {
    let mut h = Matrix4x8::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

/// Baseline measurement noise, scaled by box height.
fn measurement_noise(h: f64) -> Matrix4<f64> {
    let p = STD_WEIGHT_POSITION * h;
    Matrix4::from_diagonal(&Vector4::new(p * p, p * p, 1e-1 * 1e-1, p * p))
}

fn symmetrize(m: &mut Cov8) {
    let t = m.transpose();
    *m = (*m + t) * 0.5;
}

fn measurement(b: &BoundingBox) -> Result<Vector4<f64>> {
    b.validate()?;
    Ok(Vector4::from(b.to_xyah()))
}

impl KalmanState {
    pub fn initiate(b: &BoundingBox) -> Result<Self> {
        let z = measurement(b)?;
        let mut mean = Mean8::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let h = z[3];
        let p = 2.0 * STD_WEIGHT_POSITION * h;
        let v = 10.0 * STD_WEIGHT_VELOCITY * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        let covariance = Cov8::from_diagonal(&Mean8::from_iterator(std.iter().map(|s| s * s)));
        Ok(KalmanState { mean, covariance })
    }

    pub fn predict(&self) -> KalmanState {
        let h = self.mean[3];
        let p = STD_WEIGHT_POSITION * h;
        let v = STD_WEIGHT_VELOCITY * h;
        let std = [p, p, 1e-2, p, v, v, 1e-5, v];
        let q = Cov8::from_diagonal(&Mean8::from_iterator(std.iter().map(|s| s * s)));
        let f = motion_matrix();
        let mut mean = f * self.mean;
        // Keep shape positive if a long coast extrapolates past zero.
        for i in [2, 3] {
            if mean[i] <= 0.0 {
                mean[i] = self.mean[i];
                mean[i + 4] = 0.0;
            }
        }
        let mut covariance = f * self.covariance * f.transpose() + q;
        symmetrize(&mut covariance);
        KalmanState { mean, covariance }
    }

    /// Projects into measurement space using measurement noise `r`.
    fn project(&self, r: &Matrix4<f64>) -> (Vector4<f64>, Matrix4<f64>) {
        let h = update_matrix();
        let mean = h * self.mean;
        let cov = h * self.covariance * h.transpose() + r;
        (mean, cov)
    }

    /// Kalman update with measurement noise `(1 - confidence) * R`.
    pub fn update_nsa(&self, b: &BoundingBox, confidence: f64) -> Result<KalmanState> {
        if !confidence.is_finite() {
            return Err(Error::NonFinite("detection confidence"));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfidence(confidence));
        }
        let z = measurement(b)?;
        let r = measurement_noise(self.mean[3]) * (1.0 - confidence);
        let (proj_mean, s) = self.project(&r);
        let s_inv = s
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| s.try_inverse())
            .ok_or(Error::SingularCovariance)?;
        let h = update_matrix();
        let gain = self.covariance * h.transpose() * s_inv;
        let mean = self.mean + gain * (z - proj_mean);
        // Joseph form keeps the posterior symmetric PSD.
        let i_kh = Cov8::identity() - gain * h;
        let mut covariance =
            i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        symmetrize(&mut covariance);
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("kalman posterior"));
        }
        Ok(KalmanState { mean, covariance })
    }

    /// Squared Mahalanobis distance between the projected state and a box.
    pub fn mahalanobis(&self, b: &BoundingBox) -> Result<f64> {
        let z = measurement(b)?;
        let (proj_mean, s) = self.project(&measurement_noise(self.mean[3]));
        let y = z - proj_mean;
        let chol = s.cholesky().ok_or(Error::SingularCovariance)?;
        let x = chol.solve(&y);
        Ok(y.dot(&x).max(0.0))
    }

    pub fn to_box(&self) -> BoundingBox {
        BoundingBox::from_xyah([self.mean[0], self.mean[1], self.mean[2], self.mean[3]])
    }
}

pub fn kf_initiate(b: &BoundingBox) -> Result<KalmanState> {
    KalmanState::initiate(b)
}

pub fn kf_predict(state: &KalmanState) -> KalmanState {
    state.predict()
}

pub fn kf_update_nsa(state: &KalmanState, b: &BoundingBox, confidence: f64) -> Result<KalmanState> {
    state.update_nsa(b, confidence)
}

pub fn mahalanobis(state: &KalmanState, b: &BoundingBox) -> Result<f64> {
    state.mahalanobis(b)
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.right().min(b.right()) - a.left.max(b.left)).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top.max(b.top)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
