//! The experiment configuration: one JSON document per study. Physical
//! fields carry explicit unit strings, which are checked (never converted).

use serde::{Deserialize, Serialize};
use std::path::Path;

use bondlab::forms::{LimitCoefficients, ThinQuintuple, TimeProfile};
use bondlab::material::{DissipationKind, DissipationSpec, ElasticLaw, RhoStar};
use bondlab::mesh::{DomainConfig, PatchSelector, Side};
use bondlab::thin::{BodyForce, ForcePiece};
use bondlab::{Error, Result};

/// A number with its unit annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Qty {
    pub value: f64,
    pub unit: String,
}

impl Qty {
    pub fn new(value: f64, unit: &str) -> Self {
        Qty {
            value,
            unit: unit.to_string(),
        }
    }

    fn expect(&self, unit: &str, what: &str) -> Result<f64> {
        if self.unit != unit {
            return Err(Error::Invalid(format!(
                "{what}: unit '{}' does not match expected '{unit}'",
                self.unit
            )));
        }
        Ok(self.value)
    }
}

/// Finite number or the symbol "inf".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtReal {
    Finite(f64),
    Symbol(String),
}

impl ExtReal {
    pub fn to_f64(&self) -> Result<f64> {
        match self {
            ExtReal::Finite(v) => Ok(*v),
            ExtReal::Symbol(s) if s == "inf" => Ok(f64::INFINITY),
            ExtReal::Symbol(s) => Err(Error::Invalid(format!(
                "expected a number or \"inf\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchCfg {
    pub axis: usize,
    /// "min" or "max"
    pub side: String,
    /// Per-axis coordinate windows; null bounds mean unbounded.
    pub window: Vec<[Option<f64>; 2]>,
}

impl PatchCfg {
    pub fn to_selector(&self, dim: usize) -> Result<PatchSelector> {
        let side = match self.side.as_str() {
            "min" => Side::Min,
            "max" => Side::Max,
            other => return Err(Error::Invalid(format!("patch side '{other}'"))),
        };
        if self.window.len() != dim {
            return Err(Error::Invalid(
                "patch window needs one entry per axis".into(),
            ));
        }
        Ok(PatchSelector {
            axis: self.axis,
            side,
            window: self
                .window
                .iter()
                .map(|w| {
                    [
                        w[0].unwrap_or(f64::NEG_INFINITY),
                        w[1].unwrap_or(f64::INFINITY),
                    ]
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainCfg {
    pub dim: usize,
    pub extents: Vec<Qty>,
    pub eps0: Qty,
    pub h_bulk: Qty,
    pub m_layer: usize,
    pub m_refbox: usize,
    pub dirichlet: Vec<PatchCfg>,
    pub neumann: Vec<PatchCfg>,
}

impl DomainCfg {
    pub fn to_domain_config(&self, eps: f64) -> Result<DomainConfig> {
        Ok(DomainConfig {
            dim: self.dim,
            extents: self
                .extents
                .iter()
                .map(|q| q.expect("m", "domain extent"))
                .collect::<Result<_>>()?,
            eps0: self.eps0.expect("m", "eps0")?,
            eps,
            h_bulk: self.h_bulk.expect("m", "h_bulk")?,
            m_layer: self.m_layer,
            m_refbox: self.m_refbox,
            dirichlet: self
                .dirichlet
                .iter()
                .map(|p| p.to_selector(self.dim))
                .collect::<Result<_>>()?,
            neumann: self
                .neumann
                .iter()
                .map(|p| p.to_selector(self.dim))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LamePair {
    pub lambda: Qty,
    pub mu: Qty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialCfg {
    pub bulk_law: LamePair,
    /// Optional different law below the interface.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bulk_law_minus: Option<LamePair>,
    pub rho_star: Qty,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_star_minus: Option<Qty>,
}

impl MaterialCfg {
    pub fn to_law(&self) -> Result<ElasticLaw> {
        let plus = (
            self.bulk_law.lambda.expect("Pa", "bulk lambda")?,
            self.bulk_law.mu.expect("Pa", "bulk mu")?,
        );
        Ok(match &self.bulk_law_minus {
            None => ElasticLaw::Homogeneous {
                lambda: plus.0,
                mu: plus.1,
            },
            Some(m) => ElasticLaw::PerBody {
                plus,
                minus: (
                    m.lambda.expect("Pa", "lower-body lambda")?,
                    m.mu.expect("Pa", "lower-body mu")?,
                ),
            },
        })
    }

    pub fn to_rho_star(&self) -> Result<RhoStar> {
        let plus = self.rho_star.expect("kg/m^3", "rho_star")?;
        Ok(match &self.rho_star_minus {
            None => RhoStar::Constant(plus),
            Some(m) => RhoStar::PerBody {
                plus,
                minus: m.expect("kg/m^3", "lower-body rho_star")?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DissipationCfg {
    pub p: f64,
    pub c_d: Qty,
    pub eta: Qty,
    /// "power_law" or {"power_sum": [[coef, exponent], ...]}
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_sum: Option<Vec<(f64, f64)>>,
}

impl DissipationCfg {
    pub fn to_spec(&self) -> Result<DissipationSpec> {
        Ok(DissipationSpec {
            p: self.p,
            c_d: self.c_d.expect("Pa.s", "c_d")?,
            eta: self.eta.expect("1", "eta")?,
            kind: match &self.power_sum {
                None => DissipationKind::PowerLaw,
                Some(terms) => DissipationKind::PowerSum(terms.clone()),
            },
        })
    }
}

/// Power-law coefficient map c(eps) = scale * eps^exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoeffMap {
    pub scale: Qty,
    pub exponent: f64,
}

impl CoeffMap {
    pub fn at(&self, eps: f64) -> f64 {
        self.scale.value * eps.powf(self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsCfg {
    pub lambda_bar: Qty,
    pub mu_bar: Qty,
    pub b_bar: ExtReal,
    pub rho_bar: Qty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceCfg {
    pub eps_init: Qty,
    pub ratio: f64,
    pub count: usize,
    pub lambda: CoeffMap,
    pub mu: CoeffMap,
    pub b: CoeffMap,
    pub rho: CoeffMap,
    pub targets: TargetsCfg,
}

impl SequenceCfg {
    pub fn eps_at(&self, n: usize) -> f64 {
        self.eps_init.value * self.ratio.powi(n as i32)
    }

    pub fn quintuple_at(&self, n: usize) -> ThinQuintuple {
        let eps = self.eps_at(n);
        ThinQuintuple {
            eps,
            lambda: self.lambda.at(eps),
            mu: self.mu.at(eps),
            b: self.b.at(eps),
            rho: self.rho.at(eps),
        }
    }

    pub fn limit_coefficients(&self, p: f64) -> Result<LimitCoefficients> {
        Ok(LimitCoefficients {
            lambda_bar: self.targets.lambda_bar.expect("Pa", "lambda_bar")?,
            mu_bar: self.targets.mu_bar.expect("Pa", "mu_bar")?,
            b_bar: self.targets.b_bar.to_f64()?,
            rho_bar: self.targets.rho_bar.expect("kg/m^2", "rho_bar")?,
            p,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileCfg {
    /// "constant" | "polynomial" | "sine"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
}

impl ProfileCfg {
    pub fn to_profile(&self) -> Result<TimeProfile> {
        match self.kind.as_str() {
            "constant" => Ok(TimeProfile::Constant(self.value.unwrap_or(1.0))),
            "polynomial" => {
                Ok(TimeProfile::Polynomial(self.coeffs.clone().ok_or_else(
                    || Error::Invalid("polynomial profile needs coeffs".into()),
                )?))
            }
            "sine" => Ok(TimeProfile::Sine {
                amp: self.amp.unwrap_or(1.0),
                omega: self
                    .omega
                    .ok_or_else(|| Error::Invalid("sine profile needs omega".into()))?,
                phase: self.phase.unwrap_or(0.0),
            }),
            other => Err(Error::Invalid(format!("unknown profile kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacePart {
    pub patch: PatchCfg,
    /// Constant traction vector on the patch.
    pub value: Vec<Qty>,
}

/// One spatial traction pattern scaled by one time profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceLoadCfg {
    pub parts: Vec<SurfacePart>,
    pub profile: ProfileCfg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyForceCfg {
    pub t_end: Qty,
    pub value: Vec<Qty>,
    #[serde(default)]
    pub outside_collar_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadsCfg {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<SurfaceLoadCfg>,
    pub f: Vec<BodyForceCfg>,
}

impl LoadsCfg {
    /// Assemble the surface load on a mesh (bulk or split bulk).
    pub fn surface_load(
        &self,
        mesh: &bondlab::mesh::TensorMesh,
        eps0: f64,
    ) -> Result<Option<bondlab::forms::LoadPattern>> {
        let Some(g) = &self.g else {
            return Ok(None);
        };
        let d = mesh.dim;
        let profile = g.profile.to_profile()?;
        let mut spatial = vec![0.0; mesh.n_dofs()];
        for part in &g.parts {
            if part.value.len() != d {
                return Err(Error::Invalid("traction needs dim components".into()));
            }
            let value: Vec<f64> = part
                .value
                .iter()
                .map(|q| q.expect("Pa", "traction"))
                .collect::<Result<_>>()?;
            let patch = part.patch.to_selector(d)?;
            let pat = bondlab::forms::assemble_load(
                mesh,
                std::slice::from_ref(&patch),
                &|_| value.clone(),
                bondlab::forms::TimeProfile::Constant(1.0),
                eps0,
                mesh.n_dofs(),
            )?;
            for (o, v) in spatial.iter_mut().zip(&pat.spatial) {
                *o += v;
            }
        }
        Ok(Some(bondlab::forms::LoadPattern { spatial, profile }))
    }
    pub fn body_force(&self, dim: usize) -> Result<BodyForce> {
        let mut pieces = Vec::new();
        for p in &self.f {
            if p.value.len() != dim {
                return Err(Error::Invalid("body force needs dim components".into()));
            }
            pieces.push(ForcePiece {
                t_end: p.t_end.expect("s", "body force t_end")?,
                value: p
                    .value
                    .iter()
                    .map(|q| q.expect("N/m^3", "body force"))
                    .collect::<Result<_>>()?,
                outside_collar_only: p.outside_collar_only,
            });
        }
        Ok(BodyForce { pieces })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialCfg {
    /// "zero" (start from the stationary lift) or "random"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeCfg {
    pub t_final: Qty,
    pub tau: Qty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverCfg {
    pub tol_min: f64,
    pub cg_tol: f64,
    pub max_newton: usize,
    pub max_cg: usize,
}

impl SolverCfg {
    pub fn to_opts(&self) -> bondlab::forms::SolverOpts {
        bondlab::forms::SolverOpts {
            tol_min: self.tol_min,
            cg_tol: self.cg_tol,
            max_newton: self.max_newton,
            max_cg: self.max_cg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub domain: DomainCfg,
    pub material: MaterialCfg,
    pub dissipation: DissipationCfg,
    pub sequence: SequenceCfg,
    pub loads: LoadsCfg,
    pub initial: InitialCfg,
    pub time: TimeCfg,
    pub solver: SolverCfg,
    pub rng_seed: u64,
}

impl StudyConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Invalid(format!("config parse: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn tau(&self) -> Result<f64> {
        let tau = self.time.tau.expect("s", "tau")?;
        let t_final = self.time.t_final.expect("s", "t_final")?;
        if !(tau > 0.0 && t_final >= tau) {
            return Err(Error::Invalid("need tau > 0 and t_final >= tau".into()));
        }
        Ok(tau)
    }

    pub fn t_final(&self) -> Result<f64> {
        self.time.t_final.expect("s", "t_final")
    }

    /// The desk-scale default study: a unit-wide bar clamped on the outer
    /// parts of its left edge, pulled on its top face by a smooth ramp,
    /// five matched layer thicknesses.
    pub fn default_desk() -> Self {
        StudyConfig {
            domain: DomainCfg {
                dim: 2,
                extents: vec![Qty::new(1.0, "m"), Qty::new(1.0, "m")],
                eps0: Qty::new(0.5, "m"),
                h_bulk: Qty::new(0.25, "m"),
                m_layer: 2,
                m_refbox: 2,
                dirichlet: vec![
                    PatchCfg {
                        axis: 0,
                        side: "min".into(),
                        window: vec![[None, None], [Some(0.6), Some(1.0)]],
                    },
                    PatchCfg {
                        axis: 0,
                        side: "min".into(),
                        window: vec![[None, None], [Some(-1.0), Some(-0.6)]],
                    },
                ],
                neumann: vec![PatchCfg {
                    axis: 1,
                    side: "max".into(),
                    window: vec![[None, None], [None, None]],
                }],
            },
            material: MaterialCfg {
                bulk_law: LamePair {
                    lambda: Qty::new(1.0, "Pa"),
                    mu: Qty::new(1.0, "Pa"),
                },
                bulk_law_minus: None,
                rho_star: Qty::new(1.0, "kg/m^3"),
                rho_star_minus: None,
            },
            dissipation: DissipationCfg {
                p: 2.0,
                c_d: Qty::new(1.0, "Pa.s"),
                eta: Qty::new(1e-6, "1"),
                power_sum: None,
            },
            sequence: SequenceCfg {
                eps_init: Qty::new(0.25, "m"),
                ratio: 0.5,
                count: 5,
                lambda: CoeffMap {
                    scale: Qty::new(1.0, "Pa/m"),
                    exponent: 1.0,
                },
                mu: CoeffMap {
                    scale: Qty::new(1.0, "Pa/m"),
                    exponent: 1.0,
                },
                b: CoeffMap {
                    scale: Qty::new(1.0, "Pa.s/m"),
                    exponent: 1.0,
                },
                rho: CoeffMap {
                    scale: Qty::new(1.0, "kg/m^2"),
                    exponent: -1.0,
                },
                targets: TargetsCfg {
                    lambda_bar: Qty::new(1.0, "Pa"),
                    mu_bar: Qty::new(1.0, "Pa"),
                    b_bar: ExtReal::Finite(1.0),
                    rho_bar: Qty::new(1.0, "kg/m^2"),
                },
            },
            loads: LoadsCfg {
                g: Some(SurfaceLoadCfg {
                    parts: vec![SurfacePart {
                        patch: PatchCfg {
                            axis: 1,
                            side: "max".into(),
                            window: vec![[None, None], [None, None]],
                        },
                        value: vec![Qty::new(0.05, "Pa"), Qty::new(-0.1, "Pa")],
                    }],
                    profile: ProfileCfg {
                        kind: "polynomial".into(),
                        value: None,
                        coeffs: Some(vec![0.0, 1.0]),
                        amp: None,
                        omega: None,
                        phase: None,
                    },
                }),
                f: vec![],
            },
            initial: InitialCfg {
                kind: "zero".into(),
                amplitude: None,
            },
            time: TimeCfg {
                t_final: Qty::new(0.5, "s"),
                tau: Qty::new(1.0 / 64.0, "s"),
            },
            solver: SolverCfg {
                tol_min: 1e-10,
                cg_tol: 1e-13,
                max_newton: 60,
                max_cg: 20000,
            },
            rng_seed: 20260808,
        }
    }
}
