//! Turns a parsed config into core objects.

use saddlescape_core::center_stable::{
    spectral_split, AbstractConfig, ConstructedSystem, DeltaSpec, ResidualSpec, SpectralSplit,
};
use saddlescape_core::functions::{builtin, BuiltinParams, Piece, PiecewiseSmoothFunction, Polynomial, Region};
use saddlescape_core::geometry::{AffineManifold, Manifold};
use saddlescape_core::linalg::orthonormal_basis;
use saddlescape_core::sgd::{NoiseModel, SgdConfig, StepSchedule};
use saddlescape_core::{Matrix, Vector};

use crate::config::{polynomial, ExperimentConfig, FunctionSpec, ManifoldSpec, NoiseKind, ResidualKind};
use crate::error::LabError;

fn invalid(msg: impl Into<String>) -> LabError {
    LabError::InvalidArgument(msg.into())
}

fn rows_to_columns(rows: &[Vec<f64>], d: usize) -> Matrix {
    Matrix::from_fn(d, rows.len(), |i, j| rows[j][i])
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<Matrix, LabError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(invalid(format!("{what} must be square")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn function(cfg: &ExperimentConfig) -> Result<PiecewiseSmoothFunction, LabError> {
    match &cfg.function {
        FunctionSpec::Builtin { name, a, b } => {
            builtin(name, &BuiltinParams { a: a.clone(), b: b.clone() }).map_err(|e| invalid(e.to_string()))
        }
        FunctionSpec::Custom { dim, pieces, representative } => {
            let pieces = pieces
                .iter()
                .enumerate()
                .map(|(id, p)| Piece {
                    id,
                    region: Region::from_coordinate_signs(&p.signs),
                    poly: polynomial(*dim, &p.terms),
                })
                .collect();
            let mut f = PiecewiseSmoothFunction::new("custom", *dim, pieces).map_err(|e| invalid(e.to_string()))?;
            if let Some(rep) = representative {
                f = f.with_representative(polynomial(*dim, rep));
            }
            Ok(f)
        }
    }
}

pub fn manifold(cfg: &ExperimentConfig, f: &PiecewiseSmoothFunction) -> Result<Manifold, LabError> {
    let d = f.dim();
    let check = |n: usize, what: &str| {
        if n == d {
            Ok(())
        } else {
            Err(invalid(format!("{what} has dimension {n}, the function has {d}")))
        }
    };
    match &cfg.manifold {
        ManifoldSpec::Builtin => f
            .manifold()
            .cloned()
            .ok_or_else(|| invalid(format!("`{}` has no manifold annotation; set manifold.kind", f.name()))),
        ManifoldSpec::Affine { base, basis } => {
            check(base.len(), "manifold.base")?;
            let spanning = rows_to_columns(basis, d);
            Ok(Manifold::Affine(
                AffineManifold::from_spanning(Vector::from_row_slice(base), &spanning)
                    .map_err(|e| invalid(e.to_string()))?,
            ))
        }
        ManifoldSpec::Circle { validity_radius } => {
            check(2, "the unit circle")?;
            Ok(Manifold::unit_circle(*validity_radius))
        }
        ManifoldSpec::Full => Ok(Manifold::full(d)),
        ManifoldSpec::Point { base } => {
            check(base.len(), "manifold.base")?;
            Ok(Manifold::point(Vector::from_row_slice(base)))
        }
    }
}

pub fn x_star(cfg: &ExperimentConfig, f: &PiecewiseSmoothFunction) -> Result<Vector, LabError> {
    let x = match &cfg.x_star {
        Some(v) => Vector::from_row_slice(v),
        None => f
            .critical_point()
            .cloned()
            .ok_or_else(|| invalid(format!("`{}` has no critical point annotation; set point.x_star", f.name())))?,
    };
    if x.len() != f.dim() {
        return Err(invalid(format!("point.x_star has dimension {}, the function has {}", x.len(), f.dim())));
    }
    Ok(x)
}

pub fn schedule(cfg: &ExperimentConfig) -> Result<StepSchedule, LabError> {
    StepSchedule::new(cfg.c, cfg.alpha).map_err(|e| invalid(e.to_string()))
}

pub fn noise(cfg: &ExperimentConfig, d: usize) -> Result<NoiseModel, LabError> {
    let spec = &cfg.noise;
    let base = match spec.kind {
        NoiseKind::Zero => NoiseModel::Zero,
        NoiseKind::Sphere => NoiseModel::SphereUniform { sigma: spec.sigma },
        NoiseKind::Rademacher => NoiseModel::Rademacher { sigma: spec.sigma },
        NoiseKind::TruncGaussian => NoiseModel::TruncGaussian { sigma: spec.sigma, bound: spec.bound },
    };
    let model = match &spec.restrict {
        None => base,
        Some(rows) => {
            if rows.iter().any(|r| r.len() != d) {
                return Err(invalid(format!("noise.restrict rows must have {d} entries")));
            }
            let basis = orthonormal_basis(&rows_to_columns(rows, d), 1e-12);
            NoiseModel::SubspaceRestricted { inner: Box::new(base), basis }
        }
    };
    model.validate(d).map_err(|e| invalid(e.to_string()))?;
    Ok(model)
}

/// Everything the SGD-based subcommands need.
pub fn sgd_config(cfg: &ExperimentConfig) -> Result<SgdConfig, LabError> {
    let f = function(cfg)?;
    let m = manifold(cfg, &f)?;
    let xs = x_star(cfg, &f)?;
    let x0 = cfg.x0.as_ref().ok_or_else(|| invalid("point.x0 is required"))?;
    let d = f.dim();
    let sgd = SgdConfig {
        noise: noise(cfg, d)?,
        manifold: m,
        x_star: xs,
        x0: Vector::from_row_slice(x0),
        schedule: schedule(cfg)?,
        rule: cfg.rule,
        horizon: cfg.horizon,
        radius: cfg.radius,
        seed: cfg.seed,
        function: f,
    };
    sgd.validate().map_err(|e| invalid(e.to_string()))?;
    Ok(sgd)
}

/// Constructed system, the split it came from (if a full `J` was given) and
/// the abstract run settings.
pub struct CenterStableSetup {
    pub system: ConstructedSystem,
    pub split: Option<SpectralSplit>,
    pub run: AbstractConfig,
}

fn residual(kind: ResidualKind, scale: f64) -> ResidualSpec {
    match kind {
        ResidualKind::Zero => ResidualSpec::Zero,
        ResidualKind::Decaying => ResidualSpec::Decaying { scale },
        ResidualKind::Persistent => ResidualSpec::Persistent { scale },
    }
}

pub fn center_stable(cfg: &ExperimentConfig) -> Result<CenterStableSetup, LabError> {
    let cs = &cfg.centerstable;
    let (j_plus, j_minus, split) = match (&cs.j, &cs.j_plus, &cs.j_minus) {
        (Some(j), _, _) => {
            let s = spectral_split(&square(j, "centerstable.j")?)?;
            (s.j_plus.clone(), s.j_minus.clone(), Some(s))
        }
        (None, jp, Some(jm)) => {
            let jp = match jp {
                Some(rows) => square(rows, "centerstable.j_plus")?,
                None => Matrix::zeros(0, 0),
            };
            (jp, square(jm, "centerstable.j_minus")?, None)
        }
        _ => return Err(invalid("set centerstable.j or centerstable.j_minus")),
    };
    let (dp, dm) = (j_plus.nrows(), j_minus.nrows());
    let g = match &cs.g {
        Some(g) => g.iter().map(|terms| Polynomial { dim: dp, terms: terms.clone() }).collect(),
        None => vec![Polynomial::zero(dp); dm],
    };
    let delta = DeltaSpec { scale: cs.delta_scale, cap: cs.delta_cap };
    let system = ConstructedSystem::new(j_plus, j_minus, g, delta)?;
    let d = dp + dm;
    let base = NoiseModel::SphereUniform { sigma: cs.sigma };
    let noise = if cs.restricted {
        if dp == 0 {
            NoiseModel::Zero
        } else {
            NoiseModel::SubspaceRestricted { inner: Box::new(base), basis: Matrix::identity(d, dp) }
        }
    } else {
        base
    };
    let y0 = match &cs.y0 {
        Some(v) if v.len() == d => Vector::from_row_slice(v),
        Some(v) => return Err(invalid(format!("centerstable.y0 has dimension {}, the system has {d}", v.len()))),
        None => Vector::zeros(d),
    };
    let run = AbstractConfig {
        schedule: schedule(cfg)?,
        noise,
        rho: residual(cs.rho, cs.rho_scale),
        rho_tilde: residual(cs.rho_tilde, cs.rho_tilde_scale),
        horizon: cs.horizon,
        y0,
    };
    Ok(CenterStableSetup { system, split, run })
}
