//! Built-in invariant battery on tiny configurations; every released
//! binary must pass it unchanged.

use bondlab::fem::{scaled_strain_energy, strain_energy};
use bondlab::field::{scale_to_reference, NodalField};
use bondlab::forms::{assemble_limit_forms, assemble_thin_forms, SolverOpts};
use bondlab::limit::velocity_sizes;
use bondlab::material::{
    dw_lame, fiber_dw_dot, recession, sym_outer_normal, DissipationKind, DissipationSpec,
};
use bondlab::rng::Rng;
use bondlab::thin::{resolvent_step, BodyForce, ThinProblem, ThinState};
use bondlab::trotter::cutoff_xi;
use bondlab::Result;

use crate::config::{ExtReal, StudyConfig};
use crate::validate::validate_hypotheses;

#[derive(Debug, Clone, Copy, Default)]
pub struct SelftestOptions {
    /// Debug hook: corrupt the assembled stiffness symmetry so the
    /// symmetry invariant must fail.
    pub corrupt_symmetry: bool,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

pub fn selftest(options: &SelftestOptions) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut check = |name: &str, passed: bool, detail: String| {
        out.push(CheckResult {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    let cfg = StudyConfig::default_desk();
    let eps = cfg.sequence.eps_at(1);
    let domain = cfg.domain.to_domain_config(eps)?;
    let meshes = bondlab::mesh::build_domain(&domain)?;
    let law = cfg.material.to_law()?;
    let rho_star = cfg.material.to_rho_star()?;
    let q = cfg.sequence.quintuple_at(1);
    let lp = cfg.sequence.limit_coefficients(cfg.dissipation.p)?;
    let spec = cfg.dissipation.to_spec()?;
    let opts = SolverOpts::default();

    // mesh determinism
    let meshes2 = bondlab::mesh::build_domain(&domain)?;
    check(
        "mesh determinism",
        meshes.bulk == meshes2.bulk && meshes.split_bulk == meshes2.split_bulk,
        "identical config produces bit-identical meshes".into(),
    );

    // scaling identity
    let mut rng = Rng::new(cfg.rng_seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mut f = NodalField::zeros(&meshes.layer);
        rng.fill_symmetric(&mut f.values);
        let lhs = strain_energy(&meshes.layer, &f.values);
        let mapped = scale_to_reference(&f, &meshes.layer, &meshes.ref_layer)?;
        let rhs = scaled_strain_energy(&meshes.ref_layer, eps, &mapped.values) / eps;
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    check(
        "layer rescaling identity",
        worst <= 1e-12,
        format!("max relative defect {worst:.3e}"),
    );

    // assembled form symmetry (with the optional corruption hook)
    let mut tf = assemble_thin_forms(&q, &meshes, &law, &rho_star)?;
    if options.corrupt_symmetry {
        for i in 0..tf.phi.val.len() {
            if tf.phi.col[i] as usize != i {
                tf.phi.val[i] += 1e-3;
                break;
            }
        }
    }
    let lf = assemble_limit_forms(&lp, &meshes, &law, &rho_star)?;
    let sym = tf
        .phi
        .symmetry_error()
        .max(tf.k.symmetry_error())
        .max(tf.visc.symmetry_error())
        .max(lf.phi.symmetry_error())
        .max(lf.k.symmetry_error());
    check(
        "form symmetry",
        sym == 0.0,
        format!("max |A - A^T| entry {sym:.3e}"),
    );

    // coercivity probes
    let mut coercive = true;
    for _ in 0..100 {
        let mut v = vec![0.0; tf.n];
        rng.fill_symmetric(&mut v);
        let vm = tf.masked_copy(&v);
        if tf.phi.quad(&vm, &vm) < -1e-12 || tf.k.quad(&v, &v) <= 0.0 {
            coercive = false;
        }
    }
    check(
        "energy and mass coercivity",
        coercive,
        "phi psd on free dofs, k positive definite".into(),
    );

    // dissipation gradient against central differences
    let mut gworst: f64 = 0.0;
    for _ in 0..20 {
        let p = 1.0 + rng.uniform();
        let sp = DissipationSpec::power_law(p, 0.5 + rng.uniform(), 1e-4 + 1e-2 * rng.uniform());
        let mut e = [[0.0; 3]; 3];
        #[allow(clippy::needless_range_loop)]
        for i in 0..2 {
            for j in 0..=i {
                let v = rng.symmetric();
                e[i][j] = v;
                e[j][i] = v;
            }
        }
        let (_, g) = sp.value_grad(&e, 2)?;
        let h = 1e-6;
        for i in 0..2 {
            let mut ep = e;
            let mut em = e;
            ep[i][i] += h;
            em[i][i] -= h;
            let fd = (sp.value_grad(&ep, 2)?.0 - sp.value_grad(&em, 2)?.0) / (2.0 * h);
            gworst = gworst.max((fd - g[i][i]).abs() / (1.0 + g[i][i].abs()));
        }
    }
    check(
        "dissipation gradient",
        gworst <= 1e-6,
        format!("max relative defect {gworst:.3e}"),
    );

    // fiber identity
    let mut fworst: f64 = 0.0;
    for _ in 0..200 {
        let qv = [rng.symmetric(), rng.symmetric(), rng.symmetric()];
        let qw = [rng.symmetric(), rng.symmetric(), rng.symmetric()];
        let (l, m) = (rng.uniform() * 2.0, 0.1 + rng.uniform());
        let dense = bondlab::fem::tensor_dot(
            &dw_lame(&sym_outer_normal(&qv, 3), l, m, 3),
            &sym_outer_normal(&qw, 3),
            3,
        );
        let closed = fiber_dw_dot(&qv, &qw, l, m, 3);
        fworst = fworst.max((dense - closed).abs());
    }
    check(
        "fiber contraction identity",
        fworst <= 1e-14 * 10.0,
        format!("max defect {fworst:.3e}"),
    );

    // recession cases
    let e1 = {
        let mut e = [[0.0; 3]; 3];
        e[0][0] = 1.0;
        e
    };
    let rec_pl = recession(&DissipationSpec::power_law(2.0, 1.0, 0.0), &e1, 3)?;
    let rec_sum = recession(
        &DissipationSpec {
            p: 2.0,
            c_d: 1.0,
            eta: 0.0,
            kind: DissipationKind::PowerSum(vec![(1.0, 2.0), (1.0, 1.0)]),
        },
        &e1,
        3,
    )?;
    check(
        "recession function",
        (rec_pl - 0.5).abs() < 1e-14 && (rec_sum - 1.0).abs() < 1e-6,
        format!("power law {rec_pl:.6}, lower-order table {rec_sum:.6}"),
    );

    // cut-off plateaus
    let eps0 = domain.eps0;
    check(
        "cut-off profile",
        cutoff_xi(0.0, eps0) == 1.0
            && cutoff_xi(eps0, eps0) == 0.0
            && (cutoff_xi(eps0 / 2.0, eps0) - 0.5).abs() < 1e-15,
        "plateaus and midpoint".into(),
    );

    // resolvent non-expansiveness (cheap probe)
    let mut contract = true;
    for _ in 0..5 {
        let mut p1 = vec![0.0; tf.n];
        let mut p2 = vec![0.0; tf.n];
        let mut q1 = vec![0.0; tf.n];
        let mut q2 = vec![0.0; tf.n];
        rng.fill_symmetric(&mut p1);
        rng.fill_symmetric(&mut p2);
        rng.fill_symmetric(&mut q1);
        rng.fill_symmetric(&mut q2);
        let p1 = tf.masked_copy(&p1);
        let q1 = tf.masked_copy(&q1);
        let (ua, va, _) = resolvent_step(&tf, &spec, q.b, 0.5, &p1, &p2, &opts)?;
        let (ub, vb, _) = resolvent_step(&tf, &spec, q.b, 0.5, &q1, &q2, &opts)?;
        let du: Vec<f64> = ua.iter().zip(&ub).map(|(a, b)| a - b).collect();
        let dv: Vec<f64> = va.iter().zip(&vb).map(|(a, b)| a - b).collect();
        let o = (tf.phi_quad(&du, &du) + tf.k_quad(&dv, &dv)).sqrt();
        let d1: Vec<f64> = p1.iter().zip(&q1).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = p2.iter().zip(&q2).map(|(a, b)| a - b).collect();
        let i = (tf.phi_quad(&d1, &d1) + tf.k_quad(&d2, &d2)).sqrt();
        if o > (1.0 + 1e-8) * i {
            contract = false;
        }
    }
    check(
        "resolvent non-expansiveness",
        contract,
        "5 random pairs".into(),
    );

    // unforced energy decay
    let problem = ThinProblem {
        forms: &tf,
        mesh: &meshes.bulk,
        eps0,
        spec: &spec,
        b: q.b,
        load: None,
        body_force: BodyForce::zero(),
    };
    let mut x0 = ThinState::zeros(&tf);
    rng.fill_symmetric(&mut x0.u);
    rng.fill_symmetric(&mut x0.v);
    x0.u = tf.masked_copy(&x0.u);
    let traj = problem.simulate(&x0, 0.25, 1.0 / 32.0, &opts)?;
    let decay = traj
        .energies
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-10 * traj.energies[0]);
    check(
        "unforced energy decay",
        decay,
        format!(
            "E_0 = {:.3e} -> E_T = {:.3e}",
            traj.energies[0],
            traj.energies.last().unwrap()
        ),
    );

    // hypothesis gate on the three reference sequences
    let gate_all = validate_hypotheses(&cfg)?.passed();
    let mut cfg_rho = cfg.clone();
    cfg_rho.sequence.rho.exponent = 0.0;
    let gate_rho = !validate_hypotheses(&cfg_rho)?.passed();
    let mut cfg_mu = cfg.clone();
    cfg_mu.sequence.mu.exponent = 2.0;
    let gate_mu = !validate_hypotheses(&cfg_mu)?.passed();
    check(
        "hypothesis gate",
        gate_all && gate_rho && gate_mu,
        format!("matched pass {gate_all}, light-layer reject {gate_rho}, degenerate-mu reject {gate_mu}"),
    );

    // frozen-jump target parses and validates
    let mut cfg_inf = cfg.clone();
    cfg_inf.sequence.b.exponent = -0.5;
    cfg_inf.sequence.targets.b_bar = ExtReal::Symbol("inf".into());
    check(
        "frozen-jump targets",
        validate_hypotheses(&cfg_inf)?.passed(),
        "b_bar = inf sequence validates".into(),
    );

    // config round trip
    let rt = StudyConfig::from_json(&cfg.to_json())? == cfg;
    check(
        "config round trip",
        rt,
        "parse(serialize(cfg)) == cfg".into(),
    );

    // limit forms exist and couple traces structurally
    let (nb, nl) = velocity_sizes(&lf);
    check(
        "limit space sizes",
        nb == meshes.split_bulk.n_dofs() && nl == meshes.ref_layer.n_dofs(),
        format!("bulk velocity dofs {nb}, layer velocity dofs {nl}"),
    );

    Ok(out)
}

pub fn render(results: &[CheckResult]) -> String {
    let mut s = String::new();
    for r in results {
        s.push_str(&format!(
            "[{}] {} - {}\n",
            if r.passed { "pass" } else { "FAIL" },
            r.name,
            r.detail
        ));
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    s.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    s
}
