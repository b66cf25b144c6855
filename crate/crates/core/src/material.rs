//! Material laws: the bulk elastic tensor, the layer Lamé energy, the layer
//! dissipation potential with its smoothed evaluator, and the recession
//! function that survives the thin-layer rescaling.

use crate::error::{Error, Result};
use crate::fem::{tensor_norm2, trace, SymTensor};
use crate::rng::Rng;

/// Bulk elastic tensor a(x), isotropic per body (or homogeneous).
#[derive(Debug, Clone, PartialEq)]
pub enum ElasticLaw {
    Homogeneous {
        lambda: f64,
        mu: f64,
    },
    /// Different Lamé pairs above and below the interface plane.
    PerBody {
        plus: (f64, f64),
        minus: (f64, f64),
    },
}

impl ElasticLaw {
    pub fn lame_at(&self, z: f64) -> (f64, f64) {
        match self {
            ElasticLaw::Homogeneous { lambda, mu } => (*lambda, *mu),
            ElasticLaw::PerBody { plus, minus } => {
                if z >= 0.0 {
                    *plus
                } else {
                    *minus
                }
            }
        }
    }

    /// Coercivity bounds alpha |e|^2 <= a e . e <= beta |e|^2.
    pub fn coercivity_bounds(&self, dim: usize) -> (f64, f64) {
        let pairs: Vec<(f64, f64)> = match self {
            ElasticLaw::Homogeneous { lambda, mu } => vec![(*lambda, *mu)],
            ElasticLaw::PerBody { plus, minus } => vec![*plus, *minus],
        };
        let alpha = pairs
            .iter()
            .map(|&(_, mu)| 2.0 * mu)
            .fold(f64::INFINITY, f64::min);
        let beta = pairs
            .iter()
            .map(|&(l, mu)| dim as f64 * l.max(0.0) + 2.0 * mu)
            .fold(0.0, f64::max);
        (alpha, beta)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let pairs: Vec<(f64, f64)> = match self {
            ElasticLaw::Homogeneous { lambda, mu } => vec![(*lambda, *mu)],
            ElasticLaw::PerBody { plus, minus } => vec![*plus, *minus],
        };
        for (l, mu) in &pairs {
            if *mu <= 0.0 {
                return Err(Error::Material("elastic mu must be positive".into()));
            }
            if *l < 0.0 {
                return Err(Error::Material("elastic lambda must be nonnegative".into()));
            }
        }
        // spot-check the bounds on random symmetric tensors
        let (alpha, beta) = self.coercivity_bounds(dim);
        let mut rng = Rng::new(0x5eed);
        for (l, mu) in pairs {
            for _ in 0..32 {
                let mut e = [[0.0; 3]; 3];
                for i in 0..dim {
                    for j in 0..=i {
                        let v = rng.symmetric();
                        e[i][j] = v;
                        e[j][i] = v;
                    }
                }
                let n2 = tensor_norm2(&e, dim);
                let tr = trace(&e, dim);
                let aee = l * tr * tr + 2.0 * mu * n2;
                if aee < alpha * n2 - 1e-12 || aee > beta * n2 + 1e-12 {
                    return Err(Error::Material("coercivity bounds violated".into()));
                }
            }
        }
        Ok(())
    }
}

/// Structure density away from the layer.
#[derive(Debug, Clone, PartialEq)]
pub enum RhoStar {
    Constant(f64),
    PerBody { plus: f64, minus: f64 },
}

impl RhoStar {
    pub fn at(&self, z: f64) -> f64 {
        match self {
            RhoStar::Constant(r) => *r,
            RhoStar::PerBody { plus, minus } => {
                if z >= 0.0 {
                    *plus
                } else {
                    *minus
                }
            }
        }
    }

    pub fn bounds(&self) -> (f64, f64) {
        match self {
            RhoStar::Constant(r) => (*r, *r),
            RhoStar::PerBody { plus, minus } => (plus.min(*minus), plus.max(*minus)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, _) = self.bounds();
        if lo <= 0.0 {
            return Err(Error::Material("density must be positive".into()));
        }
        Ok(())
    }
}

/// DW_{lambda,mu}(e) = lambda tr(e) I + 2 mu e.
pub fn dw_lame(e: &SymTensor, lambda: f64, mu: f64, dim: usize) -> SymTensor {
    let tr = trace(e, dim);
    let mut out = [[0.0; 3]; 3];
    for i in 0..dim {
        for j in 0..dim {
            out[i][j] = 2.0 * mu * e[i][j];
        }
        out[i][i] += lambda * tr;
    }
    out
}

/// DW_{lambda,mu}(q x_S e_d) . (q' x_S e_d) contracted in closed form:
/// mu (q_hat . q_hat') + (lambda + 2 mu) q_d q_d'.
pub fn fiber_dw_dot(q: &[f64; 3], qp: &[f64; 3], lambda: f64, mu: f64, dim: usize) -> f64 {
    let d = dim - 1;
    let mut lat = 0.0;
    for i in 0..d {
        lat += q[i] * qp[i];
    }
    mu * lat + (lambda + 2.0 * mu) * q[d] * qp[d]
}

/// Symmetrized tensor product q x_S e_d.
pub fn sym_outer_normal(q: &[f64; 3], dim: usize) -> SymTensor {
    let d = dim - 1;
    let mut m = [[0.0; 3]; 3];
    for i in 0..dim {
        m[i][d] += 0.5 * q[i];
        m[d][i] += 0.5 * q[i];
    }
    m
}

/// How the dissipation potential is evaluated.
#[derive(Debug, Clone, PartialEq)]
pub enum DissipationKind {
    /// D(e) = (c_d / p) |e|^p — the default; its recession function is D
    /// itself.
    PowerLaw,
    /// Radial profile D(e) = sum_i coef_i |e|^{expo_i}, used for recession
    /// experiments. Not admitted by the solvers.
    PowerSum(Vec<(f64, f64)>),
}

/// Dissipation potential with growth exponent p in [1,2] and smoothing
/// parameter eta for the regularized evaluator
/// D_eta(e) = (c_d / p) ((|e|^2 + eta^2)^{p/2} - eta^p).
#[derive(Debug, Clone, PartialEq)]
pub struct DissipationSpec {
    pub p: f64,
    pub c_d: f64,
    pub eta: f64,
    pub kind: DissipationKind,
}

impl DissipationSpec {
    pub fn power_law(p: f64, c_d: f64, eta: f64) -> Self {
        DissipationSpec {
            p,
            c_d,
            eta,
            kind: DissipationKind::PowerLaw,
        }
    }

    pub fn validate_for_solver(&self) -> Result<()> {
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Material(format!("p = {} outside [1,2]", self.p)));
        }
        if self.c_d <= 0.0 {
            return Err(Error::Material("c_d must be positive".into()));
        }
        if self.p < 2.0 && self.eta <= 0.0 {
            return Err(Error::Material(
                "eta must be positive for p < 2 (smoothed evaluator)".into(),
            ));
        }
        match &self.kind {
            DissipationKind::PowerLaw => Ok(()),
            DissipationKind::PowerSum(_) => Err(Error::Material(
                "table-defined dissipation is for recession diagnostics only".into(),
            )),
        }
    }

    /// Raw (unsmoothed) value at radius r = |e|.
    pub fn radial_value(&self, r: f64) -> f64 {
        match &self.kind {
            DissipationKind::PowerLaw => self.c_d / self.p * r.powf(self.p),
            DissipationKind::PowerSum(terms) => terms.iter().map(|&(c, q)| c * r.powf(q)).sum(),
        }
    }

    /// Smoothed value and gradient at a symmetric tensor.
    pub fn value_grad(&self, e: &SymTensor, dim: usize) -> Result<(f64, SymTensor)> {
        if !(1.0..=2.0).contains(&self.p) {
            return Err(Error::Material(format!("p = {} outside [1,2]", self.p)));
        }
        let n2 = tensor_norm2(e, dim);
        let s = n2 + self.eta * self.eta;
        let value = self.c_d / self.p * (s.powf(self.p / 2.0) - self.eta.powf(self.p));
        let factor = if s == 0.0 {
            0.0
        } else {
            self.c_d * s.powf((self.p - 2.0) / 2.0)
        };
        let mut grad = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                grad[i][j] = factor * e[i][j];
            }
        }
        Ok((value, grad))
    }

    /// Smoothed value, gradient and Hessian coefficients at |e|^2 = n2:
    /// hess = f1 * I_sym + f2 * e (x) e.
    pub fn hess_coeffs(&self, n2: f64) -> (f64, f64) {
        let s = n2 + self.eta * self.eta;
        if s == 0.0 {
            // quadratic case stays smooth at the origin; below p = 2 the
            // solvers guarantee eta > 0 so this point is never reached
            return if self.p == 2.0 {
                (self.c_d, 0.0)
            } else {
                (0.0, 0.0)
            };
        }
        let f1 = self.c_d * s.powf((self.p - 2.0) / 2.0);
        let f2 = self.c_d * (self.p - 2.0) * s.powf((self.p - 4.0) / 2.0);
        (f1, f2)
    }

    /// Spot-check convexity, growth and the smoothing limit on sampled
    /// tensors; returns a list of violated properties (empty = all good).
    pub fn spot_check(&self, dim: usize) -> Vec<String> {
        let mut bad = Vec::new();
        let mut rng = Rng::new(0xd155);
        let sample = |rng: &mut Rng| {
            let mut e = [[0.0; 3]; 3];
            for i in 0..dim {
                for j in 0..=i {
                    let v = rng.symmetric();
                    e[i][j] = v;
                    e[j][i] = v;
                }
            }
            e
        };
        let radial = |spec: &Self, e: &SymTensor| spec.radial_value(tensor_norm2(e, dim).sqrt());
        // D(0) = 0
        if self.radial_value(0.0).abs() > 1e-14 {
            bad.push("D(0) != 0".into());
        }
        // midpoint convexity on segments, including collinear pairs (the
        // discriminating case for radial profiles)
        'conv: for k in 0..64 {
            let a = sample(&mut rng);
            let b = if k % 2 == 0 {
                sample(&mut rng)
            } else {
                let t = 4.0 * rng.uniform();
                let mut b = a;
                for row in b.iter_mut() {
                    for v in row.iter_mut() {
                        *v *= t;
                    }
                }
                b
            };
            let mut mid = [[0.0; 3]; 3];
            for i in 0..dim {
                for j in 0..dim {
                    mid[i][j] = 0.5 * (a[i][j] + b[i][j]);
                }
            }
            let lhs = radial(self, &mid);
            let rhs = 0.5 * (radial(self, &a) + radial(self, &b));
            if lhs > rhs + 1e-10 * (1.0 + rhs.abs()) {
                bad.push("convexity violated".into());
                break 'conv;
            }
        }
        // growth bounds alpha'|e|^p <= D <= beta'(|e|^p + 1) for fitted constants
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for k in 0..40 {
            let r = 10f64.powf(-2.0 + 4.0 * k as f64 / 39.0);
            let v = self.radial_value(r);
            lo = lo.min(v / r.powf(self.p));
            hi = hi.max(v / (r.powf(self.p) + 1.0));
        }
        if !(lo > 0.0 && hi.is_finite()) {
            bad.push("growth bounds not satisfiable".into());
        }
        // pointwise smoothing limit: D_eta -> D as eta -> 0 (power law only)
        if matches!(self.kind, DissipationKind::PowerLaw) {
            let e = sample(&mut rng);
            let exact = radial(self, &e);
            let mut prev = f64::INFINITY;
            for eta in [1e-2, 1e-4, 1e-6] {
                let spec = DissipationSpec {
                    eta,
                    ..self.clone()
                };
                let (v, _) = spec.value_grad(&e, dim).unwrap();
                let err = (v - exact).abs();
                if err > prev * 1.01 + 1e-15 {
                    bad.push("smoothed evaluator does not approach D".into());
                }
                prev = err;
            }
        }
        bad
    }
}

/// Recession estimate D^{inf,p}(e) = limsup_{t -> inf} D(t e) / t^p.
///
/// Exact for the homogeneous power law; otherwise a numeric limsup over
/// t in {2^10, 2^12, 2^14} with Aitken extrapolation when the ratio
/// sequence decays geometrically.
pub fn recession(spec: &DissipationSpec, e: &SymTensor, dim: usize) -> Result<f64> {
    let r = tensor_norm2(e, dim).sqrt();
    match &spec.kind {
        DissipationKind::PowerLaw => Ok(spec.c_d / spec.p * r.powf(spec.p)),
        DissipationKind::PowerSum(_) => {
            let ts = [1024.0f64, 4096.0, 16384.0];
            let mut ratios = [0.0f64; 3];
            for (k, &t) in ts.iter().enumerate() {
                let v = spec.radial_value(t * r);
                if !v.is_finite() {
                    return Err(Error::Material(
                        "dissipation table overflows at large arguments".into(),
                    ));
                }
                ratios[k] = v / t.powf(spec.p);
            }
            let d1 = ratios[1] - ratios[0];
            let d2 = ratios[2] - ratios[1];
            let denom = d2 - d1;
            let est = if denom.abs() > 1e-14 * (1.0 + ratios[2].abs()) {
                ratios[2] - d2 * d2 / denom
            } else {
                ratios.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            Ok(est.max(0.0))
        }
    }
}

/// Fit (delta, theta) with theta < p such that
/// |D(e) - D^{inf,p}(e)| <= delta (1 + |e|^theta) on sampled magnitudes.
/// theta is estimated from the log-log slope of the defect at large |e|.
pub fn recession_defect_fit(spec: &DissipationSpec, dim: usize) -> Result<(f64, f64)> {
    let dir = {
        let mut e = [[0.0; 3]; 3];
        e[0][0] = 1.0;
        e
    };
    let mags: Vec<f64> = (0..25)
        .map(|k| 10f64.powf(-2.0 + 6.0 * k as f64 / 24.0))
        .collect();
    let mut defects = Vec::with_capacity(mags.len());
    for &r in &mags {
        let mut e = dir;
        e[0][0] = r;
        let rec = recession(spec, &e, dim)?;
        let d = (spec.radial_value(r) - rec).abs();
        defects.push(d);
    }
    // slope over the largest decade
    let n = mags.len();
    let (r1, r2) = (mags[n - 5], mags[n - 1]);
    let (g1, g2) = (defects[n - 5].max(1e-300), defects[n - 1].max(1e-300));
    let mut theta = ((g2 / g1).ln() / (r2 / r1).ln()).clamp(0.05 * spec.p, 0.95 * spec.p);
    if defects[n - 1] < 1e-12 {
        // exact recession (homogeneous potential): any theta works
        theta = 0.5 * spec.p;
    }
    let mut delta: f64 = 0.0;
    for (&r, &g) in mags.iter().zip(&defects) {
        delta = delta.max(g / (1.0 + r.powf(theta)));
    }
    Ok((delta, theta))
}
