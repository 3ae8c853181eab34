//! Observation lifts: invertible maps from the latent state to the
//! observation space, together with their exact inverses.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gaussian, orthonormal_columns, Mat, Vector};

/// Residual above which an observation is rejected as off-manifold.
pub const MANIFOLD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LiftSpec {
    LinearOrthonormal,
    MlpBijective {
        #[serde(default = "default_coupling_hidden")]
        hidden: usize,
        #[serde(default = "default_coupling_scale")]
        scale: f64,
    },
    GraphManifold {
        omega: f64,
    },
}

fn default_coupling_hidden() -> usize {
    16
}

fn default_coupling_scale() -> f64 {
    1.0
}

impl LiftSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LiftSpec::LinearOrthonormal => "linear-orthonormal",
            LiftSpec::MlpBijective { .. } => "mlp-bijective",
            LiftSpec::GraphManifold { .. } => "graph-manifold",
        }
    }

    pub fn validate(&self, latent_dim: usize, obs_dim: usize) -> Result<()> {
        match self {
            LiftSpec::LinearOrthonormal => {
                if obs_dim < latent_dim {
                    return Err(Error::InvalidSpec(format!(
                        "linear-orthonormal lift needs obs_dim >= latent_dim, got {obs_dim} < {latent_dim}"
                    )));
                }
            }
            LiftSpec::MlpBijective { hidden, scale } => {
                if latent_dim < 2 {
                    return Err(Error::InvalidSpec(
                        "mlp-bijective lift needs latent_dim >= 2 to split coordinates".into(),
                    ));
                }
                if obs_dim < latent_dim {
                    return Err(Error::InvalidSpec(format!(
                        "mlp-bijective lift needs obs_dim >= latent_dim, got {obs_dim} < {latent_dim}"
                    )));
                }
                if *hidden == 0 || !(scale.is_finite() && *scale >= 0.0) {
                    return Err(Error::InvalidSpec("mlp-bijective lift needs hidden > 0 and finite scale >= 0".into()));
                }
            }
            LiftSpec::GraphManifold { omega } => {
                if obs_dim != 2 * latent_dim {
                    return Err(Error::InvalidSpec(format!(
                        "graph-manifold lift needs obs_dim = 2 * latent_dim = {}, got {obs_dim}",
                        2 * latent_dim
                    )));
                }
                if !(omega.is_finite() && *omega > 0.0) {
                    return Err(Error::InvalidSpec(format!("graph-manifold frequency must be positive, got {omega}")));
                }
            }
        }
        Ok(())
    }
}

/// One additive coupling layer `y_dst = x_dst + tanh(x_src W1 + b1) W2`.
#[derive(Debug, Clone, PartialEq)]
struct Coupling {
    src: Vec<usize>,
    dst: Vec<usize>,
    w1: Mat,
    b1: Vector,
    w2: Mat,
}

impl Coupling {
    fn shift(&self, x: &Vector) -> Vector {
        let src = Vector::from_iterator(self.src.len(), self.src.iter().map(|&i| x[i]));
        let h = (self.w1.transpose() * src + &self.b1).map(f64::tanh);
        self.w2.transpose() * h
    }

    fn forward(&self, x: &mut Vector) {
        let s = self.shift(x);
        for (k, &i) in self.dst.iter().enumerate() {
            x[i] += s[k];
        }
    }

    fn inverse(&self, x: &mut Vector) {
        let s = self.shift(x);
        for (k, &i) in self.dst.iter().enumerate() {
            x[i] -= s[k];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LiftKind {
    Linear,
    Coupled([Coupling; 2]),
    Graph { omega: f64 },
}

/// The decoder `φ⁻¹` (latent → observation) and its exact inverse `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationLift {
    latent_dim: usize,
    obs_dim: usize,
    /// Orthonormal embedding `d × ℓ` (linear and coupling lifts).
    basis: Option<Mat>,
    kind: LiftKind,
}

impl ObservationLift {
    pub fn build(spec: &LiftSpec, latent_dim: usize, obs_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        spec.validate(latent_dim, obs_dim)?;
        let lift = match spec {
            LiftSpec::LinearOrthonormal => ObservationLift {
                latent_dim,
                obs_dim,
                basis: Some(orthonormal_columns(rng, obs_dim, latent_dim)),
                kind: LiftKind::Linear,
            },
            LiftSpec::MlpBijective { hidden, scale } => {
                let half = latent_dim / 2;
                let first: Vec<usize> = (0..half).collect();
                let second: Vec<usize> = (half..latent_dim).collect();
                let mut layer = |src: &[usize], dst: &[usize]| Coupling {
                    src: src.to_vec(),
                    dst: dst.to_vec(),
                    w1: gaussian(rng, src.len(), *hidden) * (2.0 / (src.len() as f64).sqrt()),
                    b1: Vector::from_iterator(*hidden, gaussian(rng, *hidden, 1).iter().copied()),
                    w2: gaussian(rng, *hidden, dst.len()) * (*scale / (*hidden as f64).sqrt()),
                };
                let c1 = layer(&first, &second);
                let c2 = layer(&second, &first);
                ObservationLift {
                    latent_dim,
                    obs_dim,
                    basis: Some(orthonormal_columns(rng, obs_dim, latent_dim)),
                    kind: LiftKind::Coupled([c1, c2]),
                }
            }
            LiftSpec::GraphManifold { omega } => {
                ObservationLift { latent_dim, obs_dim, basis: None, kind: LiftKind::Graph { omega: *omega } }
            }
        };
        Ok(lift)
    }

    /// Linear lift with an explicit basis (columns must be orthonormal).
    pub fn linear(basis: Mat) -> Self {
        ObservationLift {
            latent_dim: basis.ncols(),
            obs_dim: basis.nrows(),
            basis: Some(basis),
            kind: LiftKind::Linear,
        }
    }

    /// The identity lift `d = ℓ`.
    pub fn identity(latent_dim: usize) -> Self {
        Self::linear(Mat::identity(latent_dim, latent_dim))
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn basis(&self) -> Option<&Mat> {
        self.basis.as_ref()
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            LiftKind::Linear => "linear-orthonormal",
            LiftKind::Coupled(_) => "mlp-bijective",
            LiftKind::Graph { .. } => "graph-manifold",
        }
    }

    /// `φ⁻¹(s)`.
    pub fn decode(&self, s: &Vector) -> Vector {
        debug_assert_eq!(s.len(), self.latent_dim);
        match &self.kind {
            LiftKind::Linear => self.basis.as_ref().expect("linear lift has a basis") * s,
            LiftKind::Coupled(layers) => {
                let mut z = s.clone();
                for c in layers {
                    c.forward(&mut z);
                }
                self.basis.as_ref().expect("coupling lift has a basis") * z
            }
            LiftKind::Graph { omega } => {
                let l = self.latent_dim;
                Vector::from_fn(2 * l, |i, _| if i < l { s[i] } else { (omega * s[i - l]).sin() })
            }
        }
    }

    /// `φ(o)`; errors if `o` is farther than [`MANIFOLD_TOL`] from the image.
    pub fn encode(&self, o: &Vector) -> Result<Vector> {
        if o.len() != self.obs_dim {
            return Err(Error::Shape(format!("observation has {} coords, lift expects {}", o.len(), self.obs_dim)));
        }
        if !o.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("observation".into()));
        }
        match &self.kind {
            LiftKind::Linear | LiftKind::Coupled(_) => {
                let q = self.basis.as_ref().expect("basis present");
                let z = q.transpose() * o;
                let residual = (o - q * &z).norm();
                if residual > MANIFOLD_TOL {
                    return Err(Error::OffManifold { residual });
                }
                let mut s = z;
                if let LiftKind::Coupled(layers) = &self.kind {
                    for c in layers.iter().rev() {
                        c.inverse(&mut s);
                    }
                }
                Ok(s)
            }
            LiftKind::Graph { omega } => {
                let l = self.latent_dim;
                let s = Vector::from_iterator(l, o.iter().take(l).copied());
                let residual = (0..l).map(|i| (o[l + i] - (omega * s[i]).sin()).powi(2)).sum::<f64>().sqrt();
                if residual > MANIFOLD_TOL {
                    return Err(Error::OffManifold { residual });
                }
                Ok(s)
            }
        }
    }

    /// Row-wise decode of an `n × ℓ` latent matrix.
    pub fn decode_rows(&self, latents: &Mat) -> Mat {
        let mut out = Mat::zeros(latents.nrows(), self.obs_dim);
        for i in 0..latents.nrows() {
            let s = latents.row(i).transpose();
            out.row_mut(i).copy_from(&self.decode(&s).transpose());
        }
        out
    }

    /// Row-wise encode of an `n × d` observation matrix.
    pub fn encode_rows(&self, obs: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(obs.nrows(), self.latent_dim);
        for i in 0..obs.nrows() {
            let o = obs.row(i).transpose();
            out.row_mut(i).copy_from(&self.encode(&o)?.transpose());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{ball, stream};

    fn round_trip_error(spec: &LiftSpec, l: usize, d: usize) -> f64 {
        let mut rng = stream(11, &["lift"]);
        let lift = ObservationLift::build(spec, l, d, &mut rng).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let s = Vector::from_vec(ball(&mut rng, l, 1.0));
            let back = lift.encode(&lift.decode(&s)).unwrap();
            worst = worst.max((back - s).norm());
        }
        worst
    }

    #[test]
    fn round_trip_all_kinds() {
        assert!(round_trip_error(&LiftSpec::LinearOrthonormal, 4, 32) < 1e-9);
        assert!(round_trip_error(&LiftSpec::MlpBijective { hidden: 16, scale: 1.0 }, 4, 32) < 1e-9);
        assert!(round_trip_error(&LiftSpec::GraphManifold { omega: 8.0 }, 4, 8) < 1e-9);
    }

    #[test]
    fn linear_basis_is_orthonormal() {
        let mut rng = stream(0, &["lift"]);
        let lift = ObservationLift::build(&LiftSpec::LinearOrthonormal, 2, 16, &mut rng).unwrap();
        let q = lift.basis().unwrap();
        assert!((q.transpose() * q - Mat::identity(2, 2)).amax() < 1e-9);
    }

    #[test]
    fn graph_manifold_requires_double_width() {
        let mut rng = stream(0, &["lift"]);
        let err = ObservationLift::build(&LiftSpec::GraphManifold { omega: 8.0 }, 4, 32, &mut rng);
        assert!(matches!(err, Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn graph_manifold_decode_matches_formula() {
        let mut rng = stream(7, &["lift"]);
        let lift = ObservationLift::build(&LiftSpec::GraphManifold { omega: 8.0 }, 4, 8, &mut rng).unwrap();
        let e1 = Vector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        let o = lift.decode(&e1);
        for i in 0..4 {
            assert_eq!(o[i], e1[i]);
            assert_eq!(o[4 + i], (8.0 * e1[i]).sin());
        }
        assert_eq!(lift.encode(&o).unwrap(), e1);
    }

    #[test]
    fn off_manifold_observation_is_rejected() {
        let mut rng = stream(0, &["lift"]);
        let lift = ObservationLift::build(&LiftSpec::LinearOrthonormal, 2, 8, &mut rng).unwrap();
        let mut o = lift.decode(&Vector::from_vec(vec![0.3, -0.2]));
        let q = lift.basis().unwrap().clone();
        // perturb along a direction orthogonal to the basis
        let mut v = Vector::from_element(8, 1.0);
        v -= &q * (q.transpose() * &v);
        o += v.normalize() * 1e-3;
        assert!(matches!(lift.encode(&o), Err(Error::OffManifold { .. })));
    }
}
