//! Latent task contexts and their distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{haar_rotation, Mat, Vector};
use crate::rng::ball;

#[derive(Debug, Clone, PartialEq)]
pub enum ContextVariant {
    Goal(Vector),
    Discrete { id: usize, goal: Vector },
    Rotation(Mat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub variant: ContextVariant,
    /// Whether the initial observation distribution depends on the context.
    pub inferrable: bool,
}

impl Context {
    pub fn goal(g: Vector) -> Self {
        Context { variant: ContextVariant::Goal(g), inferrable: false }
    }

    pub fn rotation(r: Mat) -> Self {
        Context { variant: ContextVariant::Rotation(r), inferrable: false }
    }

    pub fn target_goal(&self) -> Option<&Vector> {
        match &self.variant {
            ContextVariant::Goal(g) | ContextVariant::Discrete { goal: g, .. } => Some(g),
            ContextVariant::Rotation(_) => None,
        }
    }

    pub fn rotation_matrix(&self) -> Option<&Mat> {
        match &self.variant {
            ContextVariant::Rotation(r) => Some(r),
            _ => None,
        }
    }

    pub fn validate(&self, latent_dim: usize, action_dim: usize, arena_radius: f64) -> Result<()> {
        match &self.variant {
            ContextVariant::Goal(g) | ContextVariant::Discrete { goal: g, .. } => {
                if g.len() != latent_dim {
                    return Err(Error::Shape(format!("goal has {} coords, latent has {latent_dim}", g.len())));
                }
                if g.norm() > arena_radius * (1.0 + 1e-12) {
                    return Err(Error::InvalidSpec(format!(
                        "goal norm {} exceeds arena radius {arena_radius}",
                        g.norm()
                    )));
                }
            }
            ContextVariant::Rotation(r) => {
                if r.nrows() != action_dim || r.ncols() != action_dim {
                    return Err(Error::Shape(format!("rotation must be {action_dim}x{action_dim}")));
                }
                let ortho = (r.transpose() * r - Mat::identity(action_dim, action_dim)).amax();
                if ortho > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidSpec("rotation context is not special orthogonal".into()));
                }
            }
        }
        Ok(())
    }
}

/// The context distribution `P_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContextSpec {
    /// Goals uniform in a ball of `radius` (absolute latent units).
    Goal {
        radius: f64,
        #[serde(default)]
        inferrable: bool,
    },
    /// A fixed goal table; trajectories cycle through `allowed` ids.
    Discrete {
        goals: Vec<Vec<f64>>,
        allowed: Vec<usize>,
        #[serde(default)]
        inferrable: bool,
    },
    /// Haar-uniform rotations of the action space.
    Rotation,
}

impl ContextSpec {
    pub fn inferrable(&self) -> bool {
        match self {
            ContextSpec::Goal { inferrable, .. } | ContextSpec::Discrete { inferrable, .. } => *inferrable,
            ContextSpec::Rotation => false,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ContextSpec::Goal { .. } => "goal",
            ContextSpec::Discrete { .. } => "discrete",
            ContextSpec::Rotation => "rotation",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ContextSpec::Goal { radius, .. } if !(radius.is_finite() && *radius >= 0.0) => {
                Err(Error::InvalidSpec(format!("goal radius must be finite and >= 0, got {radius}")))
            }
            ContextSpec::Discrete { goals, allowed, .. } => {
                if allowed.is_empty() {
                    return Err(Error::InvalidSpec("context spec excludes every context".into()));
                }
                if let Some(bad) = allowed.iter().find(|&&i| i >= goals.len()) {
                    return Err(Error::InvalidSpec(format!(
                        "context id {bad} not in goal table of size {}",
                        goals.len()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Draws the context for trajectory `index`. Continuous variants draw a
    /// fresh context from `rng`; discrete contexts go round-robin over the
    /// allowed ids.
    pub fn sample(&self, index: usize, latent_dim: usize, action_dim: usize, rng: &mut impl Rng) -> Result<Context> {
        self.validate()?;
        let ctx = match self {
            ContextSpec::Goal { radius, inferrable } => Context {
                variant: ContextVariant::Goal(Vector::from_vec(ball(rng, latent_dim, *radius))),
                inferrable: *inferrable,
            },
            ContextSpec::Discrete { goals, allowed, inferrable } => {
                let id = allowed[index % allowed.len()];
                Context {
                    variant: ContextVariant::Discrete { id, goal: Vector::from_vec(goals[id].clone()) },
                    inferrable: *inferrable,
                }
            }
            ContextSpec::Rotation => Context::rotation(haar_rotation(rng, action_dim)),
        };
        Ok(ctx)
    }

    /// Same distribution with one discrete id removed (held-out finetuning
    /// context) or added back (in-distribution regime).
    pub fn with_allowed(&self, allowed: Vec<usize>) -> Result<ContextSpec> {
        match self {
            ContextSpec::Discrete { goals, inferrable, .. } => {
                let spec = ContextSpec::Discrete { goals: goals.clone(), allowed, inferrable: *inferrable };
                spec.validate()?;
                Ok(spec)
            }
            _ => Err(Error::InvalidSpec("only discrete context specs have an allowed set".into())),
        }
    }
}
