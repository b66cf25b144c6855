//! The parameter-sequence and data gate: every run first passes the scaling
//! conditions on (eps, lambda, mu, b, rho)_n, the main-path restriction on
//! the targets, and the load-support conditions.

use crate::config::StudyConfig;
use bondlab::mesh::build_domain;
use bondlab::{Error, Result};

#[derive(Debug, Clone)]
pub struct ValidationItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for item in &self.items {
            out.push_str(&format!(
                "[{}] {} - {}\n",
                if item.passed { "pass" } else { "FAIL" },
                item.name,
                item.detail
            ));
        }
        out
    }
}

/// Symbolic limit of scale * eps^exponent as eps -> 0 (eps > 0).
fn power_limit(scale: f64, exponent: f64) -> f64 {
    if scale == 0.0 || exponent > 0.0 {
        0.0
    } else if exponent == 0.0 {
        scale
    } else {
        f64::INFINITY * scale.signum()
    }
}

fn close(a: f64, b: f64) -> bool {
    if a.is_infinite() || b.is_infinite() {
        return a == b;
    }
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

/// Check the declared parameter sequence, targets, and load supports.
pub fn validate_hypotheses(cfg: &StudyConfig) -> Result<ValidationReport> {
    let mut items = Vec::new();
    let seq = &cfg.sequence;
    let p = cfg.dissipation.p;
    let lam_bar = seq.targets.lambda_bar.value;
    let mu_bar = seq.targets.mu_bar.value;
    let b_bar = seq.targets.b_bar.to_f64()?;
    let rho_bar = seq.targets.rho_bar.value;

    // 1. geometric generator decreasing to zero
    let gen_ok = seq.eps_init.value > 0.0 && seq.ratio > 0.0 && seq.ratio < 1.0 && seq.count >= 1;
    items.push(ValidationItem {
        name: "eps sequence".into(),
        passed: gen_ok,
        detail: format!(
            "eps_n = {} * {}^n strictly decreasing to 0, {} terms",
            seq.eps_init.value, seq.ratio, seq.count
        ),
    });

    // positivity of every declared term
    let mut positive = true;
    for n in 0..seq.count {
        let q = seq.quintuple_at(n);
        if !(q.eps > 0.0 && q.lambda > 0.0 && q.mu > 0.0 && q.b > 0.0 && q.rho > 0.0) {
            positive = false;
        }
    }
    items.push(ValidationItem {
        name: "positivity of q_n".into(),
        passed: positive,
        detail: "all declared terms have positive (eps, lambda, mu, b, rho)".into(),
    });

    // unit annotations on the coefficient maps are present
    let units_ok = [
        &seq.lambda.scale.unit,
        &seq.mu.scale.unit,
        &seq.b.scale.unit,
        &seq.rho.scale.unit,
    ]
    .iter()
    .all(|u| !u.is_empty());
    items.push(ValidationItem {
        name: "unit annotations".into(),
        passed: units_ok,
        detail: "coefficient maps carry unit strings".into(),
    });

    // 2. lambda_n / eps_n -> lambda_bar in [0, inf)
    let lam_lim = power_limit(seq.lambda.scale.value, seq.lambda.exponent - 1.0);
    let lam_ok = lam_lim.is_finite() && lam_lim >= 0.0 && close(lam_lim, lam_bar);
    items.push(ValidationItem {
        name: "lambda_n/eps_n -> lambda_bar".into(),
        passed: lam_ok,
        detail: format!("symbolic limit {lam_lim:.6e}, declared {lam_bar:.6e}"),
    });

    // 3. mu_n / eps_n -> mu_bar in (0, inf): the main path
    let mu_lim = power_limit(seq.mu.scale.value, seq.mu.exponent - 1.0);
    let mu_ok = mu_lim.is_finite() && mu_lim > 0.0 && close(mu_lim, mu_bar);
    items.push(ValidationItem {
        name: "mu_n/eps_n -> mu_bar in (0, inf) (main path)".into(),
        passed: mu_ok,
        detail: format!("symbolic limit {mu_lim:.6e}, declared {mu_bar:.6e}"),
    });

    // 4. b_n eps_n -> 0
    let be_lim = power_limit(seq.b.scale.value, seq.b.exponent + 1.0);
    let be_ok = be_lim == 0.0;
    items.push(ValidationItem {
        name: "b_n eps_n -> 0".into(),
        passed: be_ok,
        detail: format!("symbolic limit {be_lim:.6e}"),
    });

    // 5. b_n / eps_n^{p-1} -> b_bar in [0, inf]
    let bb_lim = power_limit(seq.b.scale.value, seq.b.exponent - (p - 1.0));
    let bb_ok = (bb_lim >= 0.0 || bb_lim.is_infinite()) && close(bb_lim, b_bar);
    items.push(ValidationItem {
        name: "b_n/eps_n^{p-1} -> b_bar".into(),
        passed: bb_ok,
        detail: format!("symbolic limit {bb_lim:.6e}, declared {b_bar:.6e}"),
    });

    // 6. eps_n^2 / mu_n bounded
    let stiff_ok = 2.0 - seq.mu.exponent >= 0.0 && seq.mu.scale.value > 0.0;
    items.push(ValidationItem {
        name: "eps_n^2/mu_n bounded".into(),
        passed: stiff_ok,
        detail: format!(
            "eps^({})/{}; bounded iff exponent >= 0",
            2.0 - seq.mu.exponent,
            seq.mu.scale.value
        ),
    });

    // clamping layout of the domain (needed by items 7 and 9)
    let eps0 = cfg.domain.eps0.value;
    let domain0 = cfg.domain.to_domain_config(seq.eps_at(0))?;
    let meshes = build_domain(&domain0)?;
    let d = domain0.dim;
    let mut clamped_plus = false;
    let mut clamped_minus = false;
    for (node, &is_d) in meshes.bulk_dirichlet.iter().enumerate() {
        if is_d {
            let z = meshes.bulk.node_coord(node)[d - 1];
            if z > 0.0 {
                clamped_plus = true;
            }
            if z < 0.0 {
                clamped_minus = true;
            }
        }
    }

    // 7. mu_bar > 0 mandatory when one of the bodies is unclamped
    let one_unclamped = !(clamped_plus && clamped_minus);
    let item7_ok = !one_unclamped || mu_bar > 0.0;
    items.push(ValidationItem {
        name: "mu_bar > 0 when a body is unclamped".into(),
        passed: item7_ok,
        detail: format!("clamped: upper {clamped_plus}, lower {clamped_minus}; mu_bar = {mu_bar}"),
    });

    // 8. rho_n eps_n -> rho_bar in (0, inf)
    let re_lim = power_limit(seq.rho.scale.value, seq.rho.exponent + 1.0);
    let re_ok = re_lim.is_finite() && re_lim > 0.0 && close(re_lim, rho_bar);
    items.push(ValidationItem {
        name: "rho_n eps_n -> rho_bar in (0, inf) (heavy layer)".into(),
        passed: re_ok,
        detail: format!("symbolic limit {re_lim:.6e}, declared {rho_bar:.6e}"),
    });

    // 9. load support: g keeps clear of the closed collar, and of the
    // unclamped body's boundary altogether
    let mut g_ok = true;
    let mut g_detail = String::from("supports clear of the collar");
    if let Some(g) = &cfg.loads.g {
        for (gi, part) in g.parts.iter().enumerate() {
            let patch = part.patch.to_selector(d)?;
            let active = part.value.iter().any(|q| q.value != 0.0);
            if !active {
                continue;
            }
            for face in meshes.bulk.select_faces(&patch) {
                for &node in &face.nodes {
                    let z = meshes.bulk.node_coord(node)[d - 1];
                    if z.abs() <= eps0 * (1.0 + 1e-12) {
                        g_ok = false;
                        g_detail = format!("g part {gi} support intersects the collar closure");
                    }
                    if !clamped_minus && z < 0.0 {
                        g_ok = false;
                        g_detail = format!("g part {gi} loads the unclamped lower body");
                    }
                    if !clamped_plus && z > 0.0 {
                        g_ok = false;
                        g_detail = format!("g part {gi} loads the unclamped upper body");
                    }
                }
            }
        }
    }
    items.push(ValidationItem {
        name: "load support (g)".into(),
        passed: g_ok,
        detail: g_detail,
    });

    // 10. main-path restriction on the targets
    let main_ok = lam_bar >= 0.0 && lam_bar.is_finite() && mu_bar > 0.0 && mu_bar.is_finite();
    items.push(ValidationItem {
        name: "(lambda_bar, mu_bar) in [0,inf) x (0,inf)".into(),
        passed: main_ok,
        detail: format!("({lam_bar}, {mu_bar})"),
    });

    Ok(ValidationReport { items })
}

/// Ratio table reported alongside the study (the exact values the gate
/// checked, no recomputation drift).
pub fn ratio_row(cfg: &StudyConfig, n: usize) -> Result<(f64, f64, f64, f64, f64)> {
    let seq = &cfg.sequence;
    let p = cfg.dissipation.p;
    let q = seq.quintuple_at(n);
    Ok((
        q.eps,
        q.lambda / q.eps,
        q.mu / q.eps,
        q.b / q.eps.powf(p - 1.0),
        q.rho * q.eps,
    ))
}

pub fn ensure_valid(cfg: &StudyConfig) -> Result<ValidationReport> {
    let report = validate_hypotheses(cfg)?;
    if !report.passed() {
        return Err(Error::Invalid(format!(
            "hypothesis gate failed:\n{}",
            report.render()
        )));
    }
    Ok(report)
}
