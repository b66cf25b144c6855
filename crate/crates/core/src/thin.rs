//! The positive-thickness model: states on the layer-resolving bulk mesh,
//! the stationary lift carrying the surface load, and backward-Euler
//! stepping through the resolvent minimization.

use std::io::Write;
use std::path::Path;

use crate::cg::pcg;
use crate::error::{Error, Result};
use crate::forms::{Forms, LoadPattern, SolverOpts, StepDiag, StepProblem, TimeProfile};
use crate::material::DissipationSpec;
use crate::mesh::TensorMesh;

pub use crate::forms::ThinQuintuple as QuintupleParams;

/// One element of the thin energy space: displacement (zero on the clamped
/// boundary) and velocity, both on the bulk mesh.
#[derive(Debug, Clone)]
pub struct ThinState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ThinState {
    pub fn zeros(forms: &Forms) -> Self {
        ThinState {
            u: vec![0.0; forms.n],
            v: vec![0.0; forms.n],
        }
    }

    /// |X|^2 = phi(u, u) + k(v, v).
    pub fn norm2(&self, forms: &Forms) -> f64 {
        forms.phi_quad(&self.u, &self.u) + forms.k_quad(&self.v, &self.v)
    }

    pub fn check(&self, forms: &Forms) -> Result<()> {
        if self.u.len() != forms.n || self.v.len() != forms.n {
            return Err(Error::Shape("state size disagrees with forms".into()));
        }
        for (i, &m) in forms.mask.iter().enumerate() {
            if m && self.u[i] != 0.0 {
                return Err(Error::Invalid(
                    "displacement violates the Dirichlet mask".into(),
                ));
            }
        }
        if !self.norm2(forms).is_finite() {
            return Err(Error::Invalid("state has infinite energy".into()));
        }
        Ok(())
    }
}

/// Stationary lift u^e(t) = profile(t) * unit, with PHI unit = spatial.
#[derive(Debug, Clone)]
pub struct Lift {
    pub unit: Vec<f64>,
    pub profile: TimeProfile,
}

impl Lift {
    pub fn zero(n: usize) -> Self {
        Lift {
            unit: vec![0.0; n],
            profile: TimeProfile::Constant(0.0),
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let s = self.profile.value(t);
        self.unit.iter().map(|&x| s * x).collect()
    }

    /// Exact time derivative (by linearity of the load map).
    pub fn rate(&self, t: f64) -> Vec<f64> {
        let s = self.profile.derivative(t);
        self.unit.iter().map(|&x| s * x).collect()
    }
}

/// Solve the elastostatic problem phi(u^e, v) = L(v) for the unit load
/// pattern. The lift at any time is the profile-scaled unit solution.
pub fn stationary_lift(forms: &Forms, load: &LoadPattern, opts: &SolverOpts) -> Result<Lift> {
    let rhs = forms.masked_copy(&load.spatial);
    let mut unit = vec![0.0; forms.n];
    let diag: Vec<f64> = forms
        .phi
        .diag()
        .iter()
        .zip(&forms.mask)
        .map(|(&d, &m)| if m { 1.0 } else { d })
        .collect();
    let apply = |x: &[f64], y: &mut [f64]| forms.apply_masked(&forms.phi, x, y);
    pcg(apply, &rhs, &mut unit, &diag, 1e-14, 40 * forms.n + 2000).map_err(|e| {
        Error::Singular(format!(
            "stationary lift failed (empty or insufficient clamping?): {e}"
        ))
    })?;
    // residual certificate
    let mut r = vec![0.0; forms.n];
    forms.apply_masked(&forms.phi, &unit, &mut r);
    let mut err2 = 0.0;
    let mut rhs2 = 0.0;
    for i in 0..forms.n {
        err2 += (r[i] - rhs[i]) * (r[i] - rhs[i]);
        rhs2 += rhs[i] * rhs[i];
    }
    if rhs2 > 0.0 && err2.sqrt() > 1e-10 * rhs2.sqrt() {
        return Err(Error::NoConvergence(format!(
            "stationary lift residual {:.3e} above 1e-10 relative",
            err2.sqrt() / rhs2.sqrt()
        )));
    }
    let _ = opts;
    Ok(Lift {
        unit,
        profile: load.profile.clone(),
    })
}

/// One backward-Euler step: v_bar minimizes
/// J(v) = k(v,v)/2 - k(psi2,v) + tau^2 phi(v,v)/2 + tau phi(psi1,v)
///        + tau b int_layer D_eta(e(v)),
/// and u_bar = psi1 + tau v_bar. With tau = 1 this is the resolvent of the
/// governing operator at (psi1, psi2).
pub fn resolvent_step(
    forms: &Forms,
    spec: &DissipationSpec,
    b: f64,
    tau: f64,
    psi1: &[f64],
    psi2: &[f64],
    opts: &SolverOpts,
) -> Result<(Vec<f64>, Vec<f64>, StepDiag)> {
    if !(tau > 0.0) {
        return Err(Error::Invalid("tau must be positive".into()));
    }
    spec.validate_for_solver()?;
    let mut rhs = vec![0.0; forms.n];
    forms.k.matvec(psi2, &mut rhs);
    let mut tmp = vec![0.0; forms.n];
    forms.phi.matvec(psi1, &mut tmp);
    for i in 0..forms.n {
        rhs[i] -= tau * tmp[i];
    }
    let problem = StepProblem {
        forms,
        spec,
        tau,
        bcoef: b,
        rhs,
        condense: None,
    };
    let (v_bar, diag) = problem.solve(opts)?;
    let u_bar: Vec<f64> = psi1
        .iter()
        .zip(&v_bar)
        .map(|(&p, &v)| p + tau * v)
        .collect();
    Ok((u_bar, v_bar, diag))
}

/// Piecewise-constant-in-time body force (finitely many jumps).
#[derive(Debug, Clone, PartialEq)]
pub struct BodyForce {
    pub pieces: Vec<ForcePiece>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForcePiece {
    /// Piece is active for t <= t_end (pieces sorted by t_end).
    pub t_end: f64,
    pub value: Vec<f64>,
    pub outside_collar_only: bool,
}

impl BodyForce {
    pub fn zero() -> Self {
        BodyForce { pieces: Vec::new() }
    }

    pub fn is_zero(&self) -> bool {
        self.pieces
            .iter()
            .all(|p| p.value.iter().all(|&v| v == 0.0))
    }

    /// Nodal values on a mesh at time t.
    pub fn nodal(&self, mesh: &TensorMesh, eps0: f64, t: f64) -> Vec<f64> {
        let d = mesh.dim;
        let mut out = vec![0.0; mesh.n_dofs()];
        let Some(piece) = self.pieces.iter().find(|p| t <= p.t_end + 1e-14) else {
            return out;
        };
        for node in 0..mesh.n_nodes() {
            let z = mesh.node_coord(node)[d - 1];
            if piece.outside_collar_only && z.abs() <= eps0 * (1.0 + 1e-12) {
                continue;
            }
            for c in 0..d {
                out[node * d + c] = piece.value[c];
            }
        }
        out
    }
}

/// Backward-Euler trajectory of the thin model.
#[derive(Debug, Clone)]
pub struct ThinTrajectory {
    pub times: Vec<f64>,
    /// Full states X_k = X^r_k + (u^e(t_k), 0).
    pub states: Vec<ThinState>,
    /// Residual states X^r_k.
    pub residual_states: Vec<ThinState>,
    /// (1/2) |X^r_k|^2.
    pub energies: Vec<f64>,
    /// (1/2) |X^r_{k-1} + tau F_k|^2 (index k; entry 0 repeats energies[0]).
    pub pre_energies: Vec<f64>,
    /// tau * b * int D_eta(e(v_k)) accepted at step k.
    pub dissipation: Vec<f64>,
    pub iterations: Vec<usize>,
    pub grad_norms: Vec<f64>,
}

impl ThinTrajectory {
    /// Stationary lift u^e(t_k) carried by the full state at step k.
    pub fn lift_at(&self, k: usize) -> Vec<f64> {
        self.states[k]
            .u
            .iter()
            .zip(&self.residual_states[k].u)
            .map(|(a, b)| a - b)
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,t,energy,dissipation_increment,solver_iters,grad_norm")?;
        for k in 0..self.times.len() {
            writeln!(
                f,
                "{},{:.12e},{:.12e},{:.12e},{},{:.12e}",
                k,
                self.times[k],
                self.energies[k],
                self.dissipation[k],
                self.iterations[k],
                self.grad_norms[k]
            )?;
        }
        Ok(())
    }
}

/// Everything fixed along one thin trajectory.
pub struct ThinProblem<'a> {
    pub forms: &'a Forms,
    pub mesh: &'a TensorMesh,
    pub eps0: f64,
    pub spec: &'a DissipationSpec,
    pub b: f64,
    pub load: Option<&'a LoadPattern>,
    pub body_force: BodyForce,
}

impl<'a> ThinProblem<'a> {
    /// Run backward Euler from the full initial state `x0` up to `t_final`.
    ///
    /// The forcing is F_k = (-(u^e(t_k) - u^e(t_{k-1}))/tau, f(t_k)/gamma):
    /// the lift rate enters as its backward difference quotient, which keeps
    /// the full-displacement update exactly u_k = u_{k-1} + tau v_k.
    pub fn simulate(
        &self,
        x0: &ThinState,
        t_final: f64,
        tau: f64,
        opts: &SolverOpts,
    ) -> Result<ThinTrajectory> {
        if !(tau > 0.0 && t_final >= tau) {
            return Err(Error::Invalid("need tau > 0 and t_final >= tau".into()));
        }
        let forms = self.forms;
        let lift = match self.load {
            Some(load) => stationary_lift(forms, load, opts)?,
            None => Lift::zero(forms.n),
        };
        let n_steps = (t_final / tau).round() as usize;

        let lift0 = lift.at(0.0);
        let mut xr = ThinState {
            u: x0.u.iter().zip(&lift0).map(|(&a, &b)| a - b).collect(),
            v: x0.v.clone(),
        };
        xr.check(forms)?;

        let mut traj = ThinTrajectory {
            times: vec![0.0],
            states: vec![x0.clone()],
            residual_states: vec![xr.clone()],
            energies: vec![0.5 * xr.norm2(forms)],
            pre_energies: vec![0.5 * xr.norm2(forms)],
            dissipation: vec![0.0],
            iterations: vec![0],
            grad_norms: vec![0.0],
        };

        let f_zero = self.body_force.is_zero();
        let mut lift_prev = lift0;
        for k in 1..=n_steps {
            let t = k as f64 * tau;
            let lift_now = lift.at(t);
            // psi1 = u^r + tau F_u, F_u = -(lift_now - lift_prev)/tau
            let psi1: Vec<f64> = (0..forms.n)
                .map(|i| xr.u[i] - (lift_now[i] - lift_prev[i]))
                .collect();
            let psi2: Vec<f64> = if f_zero {
                xr.v.clone()
            } else {
                let f_nodal = self.body_force.nodal(self.mesh, self.eps0, t);
                let d = forms.dim;
                (0..forms.n)
                    .map(|i| xr.v[i] + tau * f_nodal[i] / forms.density_nodes[i / d])
                    .collect()
            };
            let pre = 0.5 * (forms.phi_quad(&psi1, &psi1) + forms.k_quad(&psi2, &psi2));
            let (u_bar, v_bar, diag) =
                resolvent_step(forms, self.spec, self.b, tau, &psi1, &psi2, opts)?;
            xr = ThinState { u: u_bar, v: v_bar };
            let full = ThinState {
                u: xr.u.iter().zip(&lift_now).map(|(&a, &b)| a + b).collect(),
                v: xr.v.clone(),
            };
            traj.times.push(t);
            traj.energies.push(0.5 * xr.norm2(forms));
            traj.pre_energies.push(pre);
            traj.dissipation.push(tau * diag.dissipation);
            traj.iterations.push(diag.iterations);
            traj.grad_norms.push(diag.grad_norm);
            traj.residual_states.push(xr.clone());
            traj.states.push(full);
            lift_prev = lift_now;
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{assemble_load, assemble_thin_forms};
    use crate::material::{ElasticLaw, RhoStar};
    use crate::mesh::{build_domain, DomainConfig, PatchSelector, Side};
    use crate::rng::Rng;

    fn setup() -> (crate::mesh::DomainMeshes, Forms) {
        let meshes = build_domain(&DomainConfig {
            dim: 2,
            extents: vec![1.0, 1.0],
            eps0: 0.5,
            eps: 0.25,
            h_bulk: 0.25,
            m_layer: 2,
            m_refbox: 2,
            dirichlet: vec![
                PatchSelector {
                    axis: 0,
                    side: Side::Min,
                    window: vec![[f64::NEG_INFINITY, f64::INFINITY], [0.6, 1.0]],
                },
                PatchSelector {
                    axis: 0,
                    side: Side::Min,
                    window: vec![[f64::NEG_INFINITY, f64::INFINITY], [-1.0, -0.6]],
                },
            ],
            neumann: vec![PatchSelector::whole_plane(2, 1, Side::Max)],
        })
        .unwrap();
        let q = QuintupleParams {
            eps: 0.25,
            lambda: 0.25,
            mu: 0.25,
            b: 1.0,
            rho: 4.0,
        };
        let forms = assemble_thin_forms(
            &q,
            &meshes,
            &ElasticLaw::Homogeneous {
                lambda: 1.0,
                mu: 1.0,
            },
            &RhoStar::Constant(1.0),
        )
        .unwrap();
        (meshes, forms)
    }

    #[test]
    fn lift_is_linear_in_the_load() {
        let (meshes, forms) = setup();
        let opts = SolverOpts::default();
        let load = assemble_load(
            &meshes.bulk,
            &[PatchSelector::whole_plane(2, 1, Side::Max)],
            &|_| vec![0.0, 1.0],
            TimeProfile::Polynomial(vec![0.0, 1.0]), // L(t) = t L0
            0.5,
            forms.n,
        )
        .unwrap();
        let lift = stationary_lift(&forms, &load, &opts).unwrap();
        let u1 = lift.at(1.0);
        let u2 = lift.at(2.0);
        for i in 0..forms.n {
            assert!((u2[i] - 2.0 * u1[i]).abs() < 1e-12);
        }
        let r = lift.rate(0.3);
        for i in 0..forms.n {
            assert!((r[i] - u1[i]).abs() < 1e-12);
        }
        // L = 0 -> zero lift
        let zero = assemble_load(
            &meshes.bulk,
            &[],
            &|_| vec![0.0, 0.0],
            TimeProfile::Constant(0.0),
            0.5,
            forms.n,
        )
        .unwrap();
        let l0 = stationary_lift(&forms, &zero, &opts).unwrap();
        assert!(l0.unit.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resolvent_of_zero_is_zero() {
        let (_, forms) = setup();
        let spec = DissipationSpec::power_law(2.0, 1.0, 0.0);
        let z = vec![0.0; forms.n];
        let (u, v, _) =
            resolvent_step(&forms, &spec, 1.0, 1.0, &z, &z, &SolverOpts::default()).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_data_trajectory_stays_zero() {
        let (meshes, forms) = setup();
        let spec = DissipationSpec::power_law(2.0, 1.0, 0.0);
        let problem = ThinProblem {
            forms: &forms,
            mesh: &meshes.bulk,
            eps0: 0.5,
            spec: &spec,
            b: 1.0,
            load: None,
            body_force: BodyForce::zero(),
        };
        let x0 = ThinState::zeros(&forms);
        let traj = problem
            .simulate(&x0, 0.25, 1.0 / 16.0, &SolverOpts::default())
            .unwrap();
        for s in &traj.states {
            assert!(s.u.iter().all(|&v| v == 0.0));
            assert!(s.v.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn unforced_energy_is_non_increasing() {
        let (meshes, forms) = setup();
        for p in [2.0, 1.5, 1.0] {
            let spec = DissipationSpec::power_law(p, 1.0, 1e-6);
            let problem = ThinProblem {
                forms: &forms,
                mesh: &meshes.bulk,
                eps0: 0.5,
                spec: &spec,
                b: 1.0,
                load: None,
                body_force: BodyForce::zero(),
            };
            let mut rng = Rng::new(17);
            let mut x0 = ThinState::zeros(&forms);
            rng.fill_symmetric(&mut x0.u);
            rng.fill_symmetric(&mut x0.v);
            x0.u = forms.masked_copy(&x0.u);
            let traj = problem
                .simulate(&x0, 1.0, 1.0 / 16.0, &SolverOpts::default())
                .unwrap();
            let e0 = traj.energies[0];
            for k in 1..traj.energies.len() {
                assert!(
                    traj.energies[k] <= traj.energies[k - 1] + 1e-10 * e0,
                    "p={p}: energy rose at step {k}"
                );
                assert!(
                    traj.energies[k] <= traj.pre_energies[k] + 1e-10 * e0,
                    "p={p}: step inequality violated at {k}"
                );
            }
        }
    }

    #[test]
    fn tau_consistency_first_order() {
        // smooth run: unforced dynamics from data smoothed by two resolvent
        // applications, measured in the fine-step regime where the stiffest
        // bulk modes are resolved
        let (meshes, forms) = setup();
        let spec = DissipationSpec::power_law(2.0, 1.0, 0.0);
        let opts = SolverOpts::default();
        let problem = ThinProblem {
            forms: &forms,
            mesh: &meshes.bulk,
            eps0: 0.5,
            spec: &spec,
            b: 1.0,
            load: None,
            body_force: BodyForce::zero(),
        };
        let mut rng = Rng::new(123);
        let mut u = vec![0.0; forms.n];
        let mut v = vec![0.0; forms.n];
        rng.fill_symmetric(&mut u);
        rng.fill_symmetric(&mut v);
        u = forms.masked_copy(&u);
        for _ in 0..2 {
            let (uu, vv, _) = resolvent_step(&forms, &spec, 1.0, 1.0, &u, &v, &opts).unwrap();
            u = uu;
            v = vv;
        }
        let x0 = ThinState { u, v };
        let t_final = 0.5;
        let run = |tau: f64| {
            problem
                .simulate(&x0, t_final, tau, &opts)
                .unwrap()
                .states
                .last()
                .unwrap()
                .clone()
        };
        let diff = |a: &ThinState, b: &ThinState| {
            let du: Vec<f64> = a.u.iter().zip(&b.u).map(|(x, y)| x - y).collect();
            let dv: Vec<f64> = a.v.iter().zip(&b.v).map(|(x, y)| x - y).collect();
            (forms.phi_quad(&du, &du) + forms.k_quad(&dv, &dv)).sqrt()
        };
        let states: Vec<ThinState> = [2048.0, 4096.0, 8192.0]
            .iter()
            .map(|&m| run(1.0 / m))
            .collect();
        let d12 = diff(&states[0], &states[1]);
        let d23 = diff(&states[1], &states[2]);
        assert!(d23 < d12);
        let order = (d12 / d23).log2();
        assert!(order >= 0.9, "observed order {order}");
    }
}
