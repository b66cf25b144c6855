//! Projection machinery: the rescaling identity, the auxiliary layer solve,
//! linearity and boundedness of the projection pair, norm consistency along
//! a parameter sequence, and the zero-distance characterization.

mod common;

use bondlab::fem::{scaled_strain_energy, strain_energy};
use bondlab::field::{scale_to_reference, NodalField};
use bondlab::forms::{Forms, LimitCoefficients, SolverOpts};
use bondlab::limit::{velocity_sizes, LimitState};
use bondlab::material::DissipationSpec;
use bondlab::rng::Rng;
use bondlab::thin::ThinState;
use bondlab::trotter::{norm_consistency_probe, ProjectionContext};
use common::*;

fn lp_default() -> LimitCoefficients {
    LimitCoefficients {
        lambda_bar: 1.0,
        mu_bar: 1.0,
        b_bar: 1.0,
        rho_bar: 1.0,
        p: 2.0,
    }
}

/// eps_n = 0.25 * 2^{-n} with matched coefficients.
fn sequence(n_terms: usize) -> Vec<f64> {
    (0..n_terms).map(|n| 0.25 * 0.5f64.powi(n as i32)).collect()
}

#[test]
fn rescaling_identity_on_random_fields() {
    // int_{B_eps} |e(u)|^2 = (1/eps) int_B |e(eps, S_eps u)|^2, exactly up
    // to roundoff (same quadrature points under the affine map)
    for eps in [0.25, 0.0625] {
        let meshes = desk_meshes(eps);
        let mut rng = Rng::new(2718);
        for _ in 0..100 {
            let mut field = NodalField::zeros(&meshes.layer);
            rng.fill_symmetric(&mut field.values);
            let lhs = strain_energy(&meshes.layer, &field.values);
            let mapped = scale_to_reference(&field, &meshes.layer, &meshes.ref_layer).unwrap();
            let rhs = scaled_strain_energy(&meshes.ref_layer, eps, &mapped.values) / eps;
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "eps={eps}: {lhs} vs {rhs}"
            );
        }
    }
}

fn random_limit_state(forms: &Forms, rng: &mut Rng) -> LimitState {
    let (nb, nl) = velocity_sizes(forms);
    let mut u = vec![0.0; forms.n];
    rng.fill_symmetric(&mut u);
    let u = forms.masked_copy(&u);
    let mut vb = vec![0.0; nb];
    let mut vl = vec![0.0; nl];
    rng.fill_symmetric(&mut vb);
    rng.fill_symmetric(&mut vl);
    LimitState {
        u,
        v_bulk: vb,
        v_layer: vl,
    }
}

#[test]
fn projection_is_linear() {
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let mut rng = Rng::new(404);
    let x = random_limit_state(&lforms, &mut rng);
    let y = random_limit_state(&lforms, &mut rng);
    let (a, b) = (0.7, -1.3);
    let comb = LimitState {
        u: x.u.iter().zip(&y.u).map(|(p, q)| a * p + b * q).collect(),
        v_bulk: x
            .v_bulk
            .iter()
            .zip(&y.v_bulk)
            .map(|(p, q)| a * p + b * q)
            .collect(),
        v_layer: x
            .v_layer
            .iter()
            .zip(&y.v_layer)
            .map(|(p, q)| a * p + b * q)
            .collect(),
    };
    let px = ctx.project_state(&x, &lforms);
    let py = ctx.project_state(&y, &lforms);
    let pc = ctx.project_state(&comb, &lforms);
    let scale =
        pc.u.iter()
            .chain(pc.v.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
    for i in 0..pc.u.len() {
        assert!(
            (pc.u[i] - (a * px.u[i] + b * py.u[i])).abs() <= 1e-12 * scale.max(1.0),
            "u dof {i}"
        );
        assert!(
            (pc.v[i] - (a * px.v[i] + b * py.v[i])).abs() <= 1e-12 * scale.max(1.0),
            "v dof {i}"
        );
    }
}

#[test]
fn matched_affine_layer_solves_auxiliary_exactly() {
    // with lambda_n/eps = lambda_bar, mu_n/eps = mu_bar and a fiber-affine
    // layer field without lateral variation, u_{B,n} = u_B
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let map = lforms.coupled_map().unwrap();
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();

    // u_B(x, z) = c + z * g (constant laterally), bulk rigid per body to
    // honor the trace coupling
    let c = [0.2, -0.1];
    let g = [0.5, 0.3];
    let mut u = vec![0.0; lforms.n];
    let (_, hi) = limit_meshes.split_sheet;
    for node in 0..limit_meshes.split_bulk.n_nodes() {
        let s = if limit_meshes.split_bulk.node_multi(node)[1] >= hi {
            1.0
        } else {
            -1.0
        };
        for k in 0..2 {
            u[node * 2 + k] = c[k] + s * g[k];
        }
    }
    for node in 0..limit_meshes.ref_layer.n_nodes() {
        let base = map.layer_node_base[node];
        if base >= map.n_split_dofs {
            let z = limit_meshes.ref_layer.node_coord(node)[1];
            for k in 0..2 {
                u[base + k] = c[k] + z * g[k];
            }
        }
    }
    // Dirichlet mask conflicts with the rigid bulk motion; that is fine for
    // the auxiliary solve, which only sees the layer field
    let u_bn = ctx.layer_auxiliary(&u, &lforms);
    let rl = &limit_meshes.ref_layer;
    for node in 0..rl.n_nodes() {
        let z = rl.node_coord(node)[1];
        for k in 0..2 {
            let want = c[k] + z * g[k];
            assert!(
                (u_bn[node * 2 + k] - want).abs() <= 1e-12,
                "node {node} comp {k}: {} vs {want}",
                u_bn[node * 2 + k]
            );
        }
    }
}

#[test]
fn velocity_projection_zones_and_constants() {
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.0625;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();

    // constants project to constants
    let (nb, nl) = velocity_sizes(&lforms);
    let c = [1.5, -2.5];
    let vb: Vec<f64> = (0..nb / 2).flat_map(|_| c).collect();
    let vl: Vec<f64> = (0..nl / 2).flat_map(|_| c).collect();
    let pv = ctx.project_velocity(&vb, &vl);
    for chunk in pv.chunks(2) {
        assert!((chunk[0] - c[0]).abs() < 1e-14 && (chunk[1] - c[1]).abs() < 1e-14);
    }

    // v_bulk = 0, v_layer = z -> projects to z/eps inside the layer, 0 out
    let vb0 = vec![0.0; nb];
    let mut vlz = vec![0.0; nl];
    for node in 0..limit_meshes.ref_layer.n_nodes() {
        vlz[node * 2 + 1] = limit_meshes.ref_layer.node_coord(node)[1];
    }
    let pv = ctx.project_velocity(&vb0, &vlz);
    let bulk = &thin_meshes.bulk;
    for node in 0..bulk.n_nodes() {
        let z = bulk.node_coord(node)[1];
        let want = if z.abs() <= eps * (1.0 + 1e-12) {
            z / eps
        } else {
            0.0
        };
        assert!(
            (pv[node * 2 + 1] - want).abs() < 1e-13,
            "z={z}: {} vs {want}",
            pv[node * 2 + 1]
        );
    }
}

#[test]
fn zero_distance_at_projected_state_and_norm_of_xn() {
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let tforms = thin_forms(&thin_meshes, &q);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let mut rng = Rng::new(31337);
    let x = random_limit_state(&lforms, &mut rng);
    let px = ctx.project_state(&x, &lforms);
    let d = ctx.trotter_distance(&tforms, &lforms, &x, &px);
    assert_eq!(d.distance, 0.0);

    // X = 0: distance equals |X_n|_n
    let zero = LimitState::zeros(&lforms);
    let mut xn = ThinState::zeros(&tforms);
    rng.fill_symmetric(&mut xn.u);
    xn.u = tforms.masked_copy(&xn.u);
    rng.fill_symmetric(&mut xn.v);
    let d = ctx.trotter_distance(&tforms, &lforms, &zero, &xn);
    assert!((d.distance - d.norm_thin).abs() <= 1e-12 * d.norm_thin);
}

#[test]
fn trace_compatibility_of_projected_displacement() {
    // the layer part of P^u at the sheets +-eps equals the bulk traces
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let mut rng = Rng::new(99);
    let x = random_limit_state(&lforms, &mut rng);
    let pu = ctx.project_displacement(&x.u, &lforms);
    let (lo, hi) = limit_meshes.split_sheet;
    let lv = thin_meshes.bulk_levels;
    for lat in 0..thin_meshes.bulk.lat_nodes() {
        for c in 0..2 {
            let minus = pu[thin_meshes.bulk.node_at_level(lat, lv.minus_eps) * 2 + c];
            let plus = pu[thin_meshes.bulk.node_at_level(lat, lv.plus_eps) * 2 + c];
            let want_minus = x.u[limit_meshes.split_bulk.node_at_level(lat, lo) * 2 + c];
            let want_plus = x.u[limit_meshes.split_bulk.node_at_level(lat, hi) * 2 + c];
            assert!((minus - want_minus).abs() < 1e-12);
            assert!((plus - want_plus).abs() < 1e-12);
        }
    }
}

#[test]
fn norm_consistency_along_the_default_sequence() {
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps_seq = sequence(5);
    let mut ctxs = Vec::new();
    let mut forms_n = Vec::new();
    for &eps in &eps_seq {
        let meshes_n = desk_meshes(eps);
        let q = matched_quintuple(eps, &lp);
        forms_n.push(thin_forms(&meshes_n, &q));
        ctxs.push(ProjectionContext::new(&meshes_n, &limit_meshes, q, lp).unwrap());
    }
    let entries: Vec<(&ProjectionContext, &Forms)> = ctxs.iter().zip(forms_n.iter()).collect();

    let mut rng = Rng::new(60601);
    for trial in 0..10 {
        let x = random_limit_state(&lforms, &mut rng);
        let (rows, norm_limit, flags) = norm_consistency_probe(&entries, &lforms, &x, 10.0);
        assert!(flags.is_empty(), "trial {trial}: {flags:?}");
        for r in &rows {
            assert!(r.norm_proj <= 10.0 * norm_limit);
        }
        let first = rows.first().unwrap().gap;
        let last = rows.last().unwrap().gap;
        assert!(
            last <= 0.5 * first,
            "trial {trial}: gap {first:.3e} -> {last:.3e} did not halve"
        );
    }
}

#[test]
fn constant_velocity_norm_gap_closed_form() {
    // X = (0, (c, c)), rho* = 1 constant:
    // |P_n X|_n^2 = |c|^2 (|Omega| - |B_eps| + rho_n eps_n |B|),
    // |X|^2 = |c|^2 (|Omega| + rho_bar |B|)
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let c = [0.8, -0.6];
    let c2 = c[0] * c[0] + c[1] * c[1];
    let (nb, nl) = velocity_sizes(&lforms);
    let x = LimitState {
        u: vec![0.0; lforms.n],
        v_bulk: (0..nb / 2).flat_map(|_| c).collect(),
        v_layer: (0..nl / 2).flat_map(|_| c).collect(),
    };
    let area_omega = 2.0;
    let area_b = 2.0;
    let norm_limit2 = c2 * (area_omega + lp.rho_bar * area_b);
    assert!((x.norm2(&lforms) - norm_limit2).abs() < 1e-12);

    for &eps in &sequence(5) {
        let meshes_n = desk_meshes(eps);
        let q = matched_quintuple(eps, &lp);
        let tforms = thin_forms(&meshes_n, &q);
        let ctx = ProjectionContext::new(&meshes_n, &limit_meshes, q, lp).unwrap();
        let pv = ctx.project_velocity(&x.v_bulk, &x.v_layer);
        let got = tforms.k_quad(&pv, &pv);
        let want = c2 * ((area_omega - 2.0 * eps) + q.rho * eps * area_b);
        assert!(
            (got - want).abs() <= 1e-10 * want,
            "eps={eps}: {got} vs {want}"
        );
    }
}

#[test]
fn compatible_initial_data_reduces_to_lift_for_stationary_start() {
    // X0 = X^e(0) -> X_n^0 = X_n^e(0)
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let tforms = thin_forms(&thin_meshes, &q);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let spec = DissipationSpec::power_law(2.0, 1.0, 0.0);
    let opts = SolverOpts::default();

    let mut rng = Rng::new(7);
    let mut xe_limit = LimitState::zeros(&lforms);
    rng.fill_symmetric(&mut xe_limit.u);
    xe_limit.u = lforms.masked_copy(&xe_limit.u);
    let mut xe_thin = ThinState::zeros(&tforms);
    rng.fill_symmetric(&mut xe_thin.u);
    xe_thin.u = tforms.masked_copy(&xe_thin.u);

    let x0 = xe_limit.clone();
    let built = ctx
        .build_initial_data(
            &tforms, &lforms, &spec, &x0, &xe_limit, &xe_thin, None, &opts,
        )
        .unwrap();
    for i in 0..tforms.n {
        assert!((built.u[i] - xe_thin.u[i]).abs() < 1e-12);
        assert!(built.v[i].abs() < 1e-12);
    }
}

#[test]
fn compatible_initial_data_matches_direct_resolvent_composition() {
    // zero lifts: X_n^0 = (I+A_n)^{-1} P_n (I+A)^{-1} X^0
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let tforms = thin_forms(&thin_meshes, &q);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let spec = DissipationSpec::power_law(2.0, 1.0, 0.0);
    let opts = SolverOpts::default();
    let mut rng = Rng::new(11);
    let x0 = random_limit_state(&lforms, &mut rng);
    let built = ctx
        .build_initial_data(
            &tforms,
            &lforms,
            &spec,
            &x0,
            &LimitState::zeros(&lforms),
            &ThinState::zeros(&tforms),
            None,
            &opts,
        )
        .unwrap();
    // direct composition
    let (u1, v1, _) = bondlab::limit::resolvent_step_limit(
        &lforms,
        &lp,
        &spec,
        1.0,
        &x0.u,
        (&x0.v_bulk, &x0.v_layer),
        None,
        &opts,
    )
    .unwrap();
    let (v1b, v1l) = bondlab::limit::split_velocity(&lforms, &v1);
    let y = LimitState {
        u: u1,
        v_bulk: v1b,
        v_layer: v1l,
    };
    let py = ctx.project_state(&y, &lforms);
    let (un, vn, _) =
        bondlab::thin::resolvent_step(&tforms, &spec, q.b, 1.0, &py.u, &py.v, &opts).unwrap();
    let scale = un.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    for i in 0..tforms.n {
        assert!((built.u[i] - un[i]).abs() <= 1e-10 * scale);
        assert!((built.v[i] - vn[i]).abs() <= 1e-10 * scale);
    }
}

#[test]
fn auxiliary_solve_matches_dense_oracle() {
    // re-derive the auxiliary weak form in the test and solve it densely:
    // (1/eps) int DW_{l_n,m_n}(e(eps, u)) : e(eps, psi) with traces of u_B
    use bondlab::fem::{
        cell_quadrature, normal_derivative_at, scaled_strain_at, tensor_dot, trace,
    };
    use bondlab::material::{dw_lame, sym_outer_normal};

    let lp = LimitCoefficients {
        lambda_bar: 0.8,
        mu_bar: 1.4,
        b_bar: 1.0,
        rho_bar: 1.0,
        p: 2.0,
    };
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.0625;
    let thin_meshes = desk_meshes(eps);
    // deliberately unmatched coefficients so the solve is nontrivial
    let q = bondlab::forms::ThinQuintuple {
        eps,
        lambda: 0.5 * eps + 0.3 * eps * eps,
        mu: 1.1 * eps,
        b: 1.0,
        rho: 1.0 / eps,
    };
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let mut rng = Rng::new(2025);
    let x = random_limit_state(&lforms, &mut rng);
    let got = ctx.layer_auxiliary(&x.u, &lforms);

    // dense assembly over the reference box
    let rl = &limit_meshes.ref_layer;
    let d = 2;
    let n = rl.n_dofs();
    let mut a = vec![0.0; n * n];
    let mut ell = vec![0.0; n];
    let u_b = lforms.coupled_map().unwrap().extract_layer(&x.u);
    for cell in rl.cells() {
        for qp in cell_quadrature(d, &cell) {
            // basis strains via unit nodal perturbations
            let nsh = cell.nodes.len();
            let mut bases = Vec::with_capacity(nsh * d);
            for ai in 0..nsh {
                for c in 0..d {
                    let mut vals = vec![0.0; nsh * d];
                    vals[ai * d + c] = 1.0;
                    bases.push(scaled_strain_at(d, eps, &qp, &vals));
                }
            }
            for (ai, &na) in cell.nodes.iter().enumerate() {
                for ca in 0..d {
                    let ea = &bases[ai * d + ca];
                    for (bi, &nb) in cell.nodes.iter().enumerate() {
                        for cb in 0..d {
                            let eb = &bases[bi * d + cb];
                            let v = (q.lambda * (trace(ea, d) * trace(eb, d))
                                + 2.0 * q.mu * tensor_dot(ea, eb, d))
                                / eps;
                            a[(na * d + ca) * n + (nb * d + cb)] += qp.weight * v;
                        }
                    }
                }
            }
            let vals: Vec<f64> = cell
                .nodes
                .iter()
                .flat_map(|&nd| u_b[nd * d..(nd + 1) * d].iter().copied())
                .collect();
            let qdir = normal_derivative_at(d, &qp, &vals);
            let t = dw_lame(&sym_outer_normal(&qdir, d), lp.lambda_bar, lp.mu_bar, d);
            for (ai, &na) in cell.nodes.iter().enumerate() {
                for c in 0..d {
                    ell[na * d + c] += qp.weight * tensor_dot(&t, &bases[ai * d + c], d);
                }
            }
        }
    }
    // Dirichlet rows: traces of u_B on both sheets
    let nz = rl.axes[1].len() - 1;
    let mut fixed = vec![false; n];
    for l in 0..rl.lat_nodes() {
        for c in 0..d {
            fixed[rl.node_at_level(l, 0) * d + c] = true;
            fixed[rl.node_at_level(l, nz) * d + c] = true;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let nf = free.len();
    assert!(nf <= 100);
    let mut af = vec![0.0; nf * nf];
    let mut rf = vec![0.0; nf];
    for (i, &gi) in free.iter().enumerate() {
        let mut r = ell[gi];
        for (j, &gj) in free.iter().enumerate() {
            af[i * nf + j] = a[gi * n + gj];
        }
        for (gj, &ub) in u_b.iter().enumerate() {
            if fixed[gj] {
                r -= a[gi * n + gj] * ub;
            }
        }
        rf[i] = r;
    }
    let lu = DenseLu::factor(&af, nf).unwrap();
    let sol = lu.solve(&rf);
    let scale = got.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-300);
    for (i, &gi) in free.iter().enumerate() {
        assert!(
            (got[gi] - sol[i]).abs() <= 1e-9 * scale,
            "dof {gi}: {} vs {}",
            got[gi],
            sol[i]
        );
    }
    for (gi, &f) in fixed.iter().enumerate() {
        if f {
            assert_eq!(got[gi], u_b[gi], "trace row {gi} must carry u_B");
        }
    }
}

#[test]
fn trotter_distance_matches_dense_quadratic_forms() {
    let lp = lp_default();
    let limit_meshes = desk_meshes(0.25);
    let lforms = limit_forms(&limit_meshes, &lp);
    let eps = 0.125;
    let thin_meshes = desk_meshes(eps);
    let q = matched_quintuple(eps, &lp);
    let tforms = thin_forms(&thin_meshes, &q);
    let ctx = ProjectionContext::new(&thin_meshes, &limit_meshes, q, lp).unwrap();
    let mut rng = Rng::new(71);
    let x = random_limit_state(&lforms, &mut rng);
    let mut xn = ThinState::zeros(&tforms);
    rng.fill_symmetric(&mut xn.u);
    xn.u = tforms.masked_copy(&xn.u);
    rng.fill_symmetric(&mut xn.v);
    let eval = ctx.trotter_distance(&tforms, &lforms, &x, &xn);

    // direct dense evaluation of the quadratic forms
    let px = ctx.project_state(&x, &lforms);
    let phi_d = tforms.phi.to_dense();
    let k_d = tforms.k.to_dense();
    let nn = tforms.n;
    let quad = |m: &[f64], a: &[f64], b: &[f64]| {
        let mut s = 0.0;
        for i in 0..nn {
            for j in 0..nn {
                s += a[i] * m[i * nn + j] * b[j];
            }
        }
        s
    };
    let du: Vec<f64> = px.u.iter().zip(&xn.u).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = px.v.iter().zip(&xn.v).map(|(a, b)| a - b).collect();
    let want = (quad(&phi_d, &du, &du) + quad(&k_d, &dv, &dv)).sqrt();
    assert!(
        (eval.distance - want).abs() <= 1e-10 * want.max(1.0),
        "{} vs {want}",
        eval.distance
    );
    let want_norm = (quad(&phi_d, &xn.u, &xn.u) + quad(&k_d, &xn.v, &xn.v)).sqrt();
    assert!((eval.norm_thin - want_norm).abs() <= 1e-10 * want_norm.max(1.0));
}

#[test]
fn limit_trajectory_steps_satisfy_weak_form() {
    // re-derive (psi1, psi2) of every accepted step from the stored
    // trajectory and check the discrete weak form with the reconstructed
    // dissipation stress against random test fields
    use bondlab::forms::{assemble_load, TimeProfile};
    use bondlab::limit::{weak_form_residual, LimitProblem};
    use bondlab::mesh::{PatchSelector, Side};
    use bondlab::thin::BodyForce;

    let meshes = desk_meshes(0.25);
    let lp = LimitCoefficients {
        lambda_bar: 0.9,
        mu_bar: 1.1,
        b_bar: 0.6,
        rho_bar: 1.3,
        p: 1.5,
    };
    let forms = limit_forms(&meshes, &lp);
    let spec = DissipationSpec::power_law(1.5, 1.0, 1e-6);
    let load = assemble_load(
        &meshes.split_bulk,
        &[PatchSelector::whole_plane(2, 1, Side::Max)],
        &|_| vec![0.1, -0.2],
        TimeProfile::Polynomial(vec![0.4, 1.0]),
        0.5,
        meshes.split_bulk.n_dofs(),
    )
    .unwrap();
    let problem = LimitProblem {
        forms: &forms,
        meshes: &meshes,
        lp,
        spec: &spec,
        load: Some(&load),
        body_force: BodyForce::zero(),
    };
    let mut rng = Rng::new(424242);
    let mut x0 = LimitState::zeros(&forms);
    rng.fill_symmetric(&mut x0.u);
    x0.u = forms.masked_copy(&x0.u);
    let tau = 1.0 / 8.0;
    let traj = problem
        .simulate(&x0, 0.5, tau, &SolverOpts::default())
        .unwrap();

    for k in 1..traj.times.len() {
        let lift_now = traj.lift_at(k);
        let lift_prev = traj.lift_at(k - 1);
        let prev = &traj.residual_states[k - 1];
        let cur = &traj.residual_states[k];
        let psi1: Vec<f64> = (0..forms.n)
            .map(|i| prev.u[i] - (lift_now[i] - lift_prev[i]))
            .collect();
        // v_bar as a coupled vector: residual velocities are the expansion
        // of the accepted coupled minimizer, recombine through the map
        let map = forms.coupled_map().unwrap();
        let v_bar = map
            .combine(&cur.v_bulk, &cur.v_layer, 1e-12)
            .expect("velocity pair of an accepted step lies in the coupled space");
        let scale = (forms.k.quad(&v_bar, &v_bar)).sqrt().max(1.0);
        for _ in 0..20 {
            let mut w = vec![0.0; forms.n];
            rng.fill_symmetric(&mut w);
            w = forms.masked_copy(&w);
            let wn = (forms.k.quad(&w, &w) + forms.phi.quad(&w, &w))
                .sqrt()
                .max(1.0);
            let r = weak_form_residual(
                &forms,
                &lp,
                &spec,
                tau,
                &psi1,
                (&prev.v_bulk, &prev.v_layer),
                &v_bar,
                &w,
            );
            assert!(
                r.abs() <= 1e-8 * scale * wn,
                "step {k}: weak residual {r:.3e}"
            );
        }
    }
}
