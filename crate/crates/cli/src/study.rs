//! The convergence laboratory: solve the limit trajectory once, then for
//! every declared layer thickness build the thin problem with compatible
//! initial data, run it on the same time grid, and measure the projected
//! distance and the norm gap at every step.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use bondlab::forms::{assemble_limit_forms, assemble_thin_forms, Forms, SolverOpts};
use bondlab::limit::{
    resolvent_step_limit, split_velocity, LimitProblem, LimitState, LimitTrajectory,
};
use bondlab::rng::Rng;
use bondlab::thin::{stationary_lift, Lift, ThinProblem, ThinState, ThinTrajectory};
use bondlab::trotter::{ProjectionContext, TrotterReport, TrotterRow};
use bondlab::{Error, Result};

use crate::config::StudyConfig;
use crate::validate::{ensure_valid, ratio_row};

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub threads: usize,
    /// Zero out wall-clock columns so repeated runs are byte-identical.
    pub deterministic: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            threads: 1,
            deterministic: false,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StudyRow {
    pub n: usize,
    pub eps: f64,
    pub lam_ratio: f64,
    pub mu_ratio: f64,
    pub b_ratio: f64,
    pub rho_eps: f64,
    pub sup_trotter: f64,
    pub sup_normgap: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct Verdicts {
    /// Distances non-increasing across n up to 10% wiggle.
    pub distance_monotone: bool,
    /// Final distance at most half the first.
    pub distance_halved: bool,
    pub normgap_monotone: bool,
    pub normgap_halved: bool,
}

impl Verdicts {
    pub fn passed(&self) -> bool {
        self.distance_monotone
            && self.distance_halved
            && self.normgap_monotone
            && self.normgap_halved
    }
}

#[derive(Debug, Clone)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
    pub verdicts: Verdicts,
    pub per_n: Vec<TrotterReport>,
}

pub const STUDY_CSV_HEADER: &str =
    "n,eps,lam_ratio,mu_ratio,b_ratio,rho_eps,sup_trotter,sup_normgap,wall_ms";

impl StudyReport {
    pub fn csv(&self) -> String {
        let mut out = String::from(STUDY_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{}\n",
                r.n,
                r.eps,
                r.lam_ratio,
                r.mu_ratio,
                r.b_ratio,
                r.rho_eps,
                r.sup_trotter,
                r.sup_normgap,
                r.wall_ms
            ));
        }
        out
    }
}

fn verdict(values: &[f64]) -> (bool, bool) {
    let mut monotone = true;
    for w in values.windows(2) {
        if w[1] > 1.1 * w[0] + 1e-300 {
            monotone = false;
        }
    }
    let halved = match (values.first(), values.last()) {
        (Some(&f), Some(&l)) => l <= 0.5 * f || f == 0.0,
        _ => true,
    };
    (monotone, halved)
}

/// Everything shared by the per-thickness sub-runs.
struct LimitSide {
    forms: Forms,
    meshes: bondlab::mesh::DomainMeshes,
    xe0: LimitState,
    /// Raw residual seed Y: the limit run starts from (I+A)^{-2} Y while
    /// each thin run receives (I+A_n)^{-1} P_n (I+A)^{-1} Y, the pairing
    /// the resolvent-consistency property controls.
    seed: LimitState,
    trajectory: LimitTrajectory,
}

fn limit_side(cfg: &StudyConfig, opts: &SolverOpts) -> Result<LimitSide> {
    let seq = &cfg.sequence;
    let lp = seq.limit_coefficients(cfg.dissipation.p)?;
    let spec = cfg.dissipation.to_spec()?;
    let law = cfg.material.to_law()?;
    let rho_star = cfg.material.to_rho_star()?;
    let domain = cfg.domain.to_domain_config(seq.eps_at(0))?;
    let meshes = bondlab::mesh::build_domain(&domain)?;
    let forms = assemble_limit_forms(&lp, &meshes, &law, &rho_star)?;
    let eps0 = domain.eps0;

    let load = cfg.loads.surface_load(&meshes.split_bulk, eps0)?;
    let lift = match &load {
        Some(l) => bondlab::limit::stationary_lift_limit(&forms, l, opts)?,
        None => Lift::zero(forms.n),
    };
    let mut xe0 = LimitState::zeros(&forms);
    xe0.u = lift.at(0.0);

    // raw seed
    let (nb, nl) = bondlab::limit::velocity_sizes(&forms);
    let mut seed = LimitState::zeros(&forms);
    if cfg.initial.kind == "random" {
        let amp = cfg.initial.amplitude.unwrap_or(0.1);
        let mut rng = Rng::new(cfg.rng_seed);
        let mut u = vec![0.0; forms.n];
        rng.fill_symmetric(&mut u);
        let mut vb = vec![0.0; nb];
        rng.fill_symmetric(&mut vb);
        let mut vl = vec![0.0; nl];
        rng.fill_symmetric(&mut vl);
        for x in u.iter_mut().chain(vb.iter_mut()).chain(vl.iter_mut()) {
            *x *= amp;
        }
        seed.u = forms.masked_copy(&u);
        seed.v_bulk = vb;
        seed.v_layer = vl;
    } else if cfg.initial.kind != "zero" {
        return Err(Error::Invalid(format!(
            "unknown initial state kind '{}'",
            cfg.initial.kind
        )));
    }

    let problem = LimitProblem {
        forms: &forms,
        meshes: &meshes,
        lp,
        spec: &spec,
        load: None,
        body_force: bondlab::thin::BodyForce::zero(),
    };
    let cond = problem.condensation();
    let smooth = |s: &LimitState| -> Result<LimitState> {
        let (u, v, _) = resolvent_step_limit(
            &forms,
            &lp,
            &spec,
            1.0,
            &s.u,
            (&s.v_bulk, &s.v_layer),
            cond.as_ref(),
            opts,
        )?;
        let (vb, vl) = split_velocity(&forms, &v);
        Ok(LimitState {
            u,
            v_bulk: vb,
            v_layer: vl,
        })
    };
    let start_res = smooth(&smooth(&seed)?)?;
    let x0_full = LimitState {
        u: start_res.u.iter().zip(&xe0.u).map(|(a, b)| a + b).collect(),
        v_bulk: start_res.v_bulk.clone(),
        v_layer: start_res.v_layer.clone(),
    };

    let problem = LimitProblem {
        forms: &forms,
        meshes: &meshes,
        lp,
        spec: &spec,
        load: load.as_ref(),
        body_force: cfg.loads.body_force(cfg.domain.dim)?,
    };
    let trajectory = problem.simulate(&x0_full, cfg.t_final()?, cfg.tau()?, opts)?;

    Ok(LimitSide {
        forms,
        meshes,
        xe0,
        seed,
        trajectory,
    })
}

/// Output of one per-thickness sub-run.
pub struct SubRun {
    pub row: StudyRow,
    pub report: TrotterReport,
    pub trajectory: ThinTrajectory,
}

fn run_single_n(
    cfg: &StudyConfig,
    limit: &LimitSide,
    n: usize,
    opts: &SolverOpts,
    deterministic: bool,
) -> Result<SubRun> {
    let start = Instant::now();
    let seq = &cfg.sequence;
    let lp = seq.limit_coefficients(cfg.dissipation.p)?;
    let spec = cfg.dissipation.to_spec()?;
    let law = cfg.material.to_law()?;
    let rho_star = cfg.material.to_rho_star()?;
    let q = seq.quintuple_at(n);
    let domain = cfg.domain.to_domain_config(q.eps)?;
    let meshes = bondlab::mesh::build_domain(&domain)?;
    let forms = assemble_thin_forms(&q, &meshes, &law, &rho_star)?;
    let eps0 = domain.eps0;

    let load = cfg.loads.surface_load(&meshes.bulk, eps0)?;
    let lift = match &load {
        Some(l) => stationary_lift(&forms, l, opts)?,
        None => Lift::zero(forms.n),
    };
    let xe0 = ThinState {
        u: lift.at(0.0),
        v: vec![0.0; forms.n],
    };

    let ctx = ProjectionContext::new(&meshes, &limit.meshes, q, lp)?;
    let cond = if lp.b_bar.is_infinite() {
        Some(bondlab::forms::Condensation::build(
            &limit.meshes,
            limit.forms.coupled_map().expect("limit forms"),
        ))
    } else {
        None
    };

    // X_n^0 = X_n^e(0) + (I+A_n)^{-1} P_n (I+A)^{-1} (X0 - X^e(0)) with
    // X0 - X^e(0) the raw seed
    let x0_op_input = LimitState {
        u: limit
            .seed
            .u
            .iter()
            .zip(&limit.xe0.u)
            .map(|(a, b)| a + b)
            .collect(),
        v_bulk: limit.seed.v_bulk.clone(),
        v_layer: limit.seed.v_layer.clone(),
    };
    let x0 = ctx.build_initial_data(
        &forms,
        &limit.forms,
        &spec,
        &x0_op_input,
        &limit.xe0,
        &xe0,
        cond.as_ref(),
        opts,
    )?;

    let problem = ThinProblem {
        forms: &forms,
        mesh: &meshes.bulk,
        eps0,
        spec: &spec,
        b: q.b,
        load: load.as_ref(),
        body_force: cfg.loads.body_force(cfg.domain.dim)?,
    };
    let trajectory = problem.simulate(&x0, cfg.t_final()?, cfg.tau()?, opts)?;

    // distances at every shared time node
    let mut rows = Vec::with_capacity(trajectory.times.len());
    for (k, (xn, x)) in trajectory
        .states
        .iter()
        .zip(&limit.trajectory.states)
        .enumerate()
    {
        let eval = ctx.trotter_distance(&forms, &limit.forms, x, xn);
        rows.push(TrotterRow {
            k,
            t: trajectory.times[k],
            distance: eval.distance,
            norm_thin: eval.norm_thin,
            norm_limit: x.norm2(&limit.forms).max(0.0).sqrt(),
        });
    }
    let report = TrotterReport::from_rows(rows);
    let (eps, lam_ratio, mu_ratio, b_ratio, rho_eps) = ratio_row(cfg, n)?;
    let wall_ms = if deterministic {
        0
    } else {
        start.elapsed().as_millis() as u64
    };
    Ok(SubRun {
        row: StudyRow {
            n,
            eps,
            lam_ratio,
            mu_ratio,
            b_ratio,
            rho_eps,
            sup_trotter: report.sup_distance,
            sup_normgap: report.sup_norm_gap,
            wall_ms,
        },
        report,
        trajectory,
    })
}

pub fn run_convergence_study(cfg: &StudyConfig, options: &StudyOptions) -> Result<StudyReport> {
    ensure_valid(cfg)?;
    let opts = cfg.solver.to_opts();
    let limit = limit_side(cfg, &opts)?;
    let count = cfg.sequence.count;

    let results: Vec<Option<Result<SubRun>>> = {
        let slots: Mutex<Vec<Option<Result<SubRun>>>> =
            Mutex::new((0..count).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        let workers = options.threads.clamp(1, count.max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let n = next.fetch_add(1, Ordering::SeqCst);
                    if n >= count {
                        break;
                    }
                    let out = run_single_n(cfg, &limit, n, &opts, options.deterministic);
                    slots.lock().expect("study worker poisoned").as_mut_slice()[n] = Some(out);
                });
            }
        });
        slots.into_inner().expect("study workers finished")
    };

    let mut rows = Vec::new();
    let mut per_n = Vec::new();
    let mut trajectories = Vec::new();
    let mut failure: Option<Error> = None;
    for slot in results {
        match slot {
            Some(Ok(sub)) => {
                if failure.is_none() {
                    rows.push(sub.row);
                    per_n.push(sub.report);
                    trajectories.push(sub.trajectory);
                }
            }
            Some(Err(e)) => {
                failure.get_or_insert(e);
            }
            None => {
                failure.get_or_insert(Error::Invalid("sub-run did not report".into()));
            }
        }
    }

    let distances: Vec<f64> = rows.iter().map(|r| r.sup_trotter).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.sup_normgap).collect();
    let (dm, dh) = verdict(&distances);
    let (gm, gh) = verdict(&gaps);
    let report = StudyReport {
        rows,
        verdicts: Verdicts {
            distance_monotone: dm,
            distance_halved: dh,
            normgap_monotone: gm,
            normgap_halved: gh,
        },
        per_n,
    };

    if let Some(dir) = &options.out_dir {
        write_outputs(cfg, dir, &report, &limit, &trajectories)?;
    }
    if let Some(e) = failure {
        // the partial CSV above is already flushed
        return Err(e);
    }
    Ok(report)
}

fn write_outputs(
    cfg: &StudyConfig,
    dir: &Path,
    report: &StudyReport,
    limit: &LimitSide,
    trajectories: &[ThinTrajectory],
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("study.csv"), report.csv())?;

    // companion discretization table so layer-parameter decay is not read
    // as mesh refinement
    let mut refinement = String::from("n,eps,bulk_nodes,bulk_cells,bulk_dofs,h_layer,tau\n");
    for row in &report.rows {
        let domain = cfg.domain.to_domain_config(row.eps)?;
        let meshes = bondlab::mesh::build_domain(&domain)?;
        refinement.push_str(&format!(
            "{},{:.12e},{},{},{},{:.12e},{:.12e}\n",
            row.n,
            row.eps,
            meshes.bulk.n_nodes(),
            meshes.bulk.n_cells(),
            meshes.bulk.n_dofs(),
            2.0 * row.eps / cfg.domain.m_layer as f64,
            cfg.tau()?,
        ));
    }
    std::fs::write(dir.join("refinement.csv"), refinement)?;

    limit.trajectory.write_csv(&dir.join("limit.csv"))?;
    for (n, traj) in trajectories.iter().enumerate() {
        traj.write_csv(&dir.join(format!("thin_{n}.csv")))?;
    }
    for (n, rep) in report.per_n.iter().enumerate() {
        let mut f =
            std::io::BufWriter::new(std::fs::File::create(dir.join(format!("trotter_{n}.csv")))?);
        writeln!(f, "k,t,distance,norm_thin,norm_limit,norm_gap")?;
        for r in &rep.rows {
            writeln!(
                f,
                "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
                r.k,
                r.t,
                r.distance,
                r.norm_thin,
                r.norm_limit,
                (r.norm_thin - r.norm_limit).abs()
            )?;
        }
    }
    Ok(())
}

/// One thin trajectory run for the CLI (`simulate-thin`): index n of the
/// declared sequence, started from compatible initial data.
pub fn run_thin_single(
    cfg: &StudyConfig,
    n: usize,
    out: Option<&Path>,
    deterministic: bool,
) -> Result<StudyRow> {
    if n >= cfg.sequence.count {
        return Err(Error::Invalid(format!(
            "sequence index {n} out of range (count = {})",
            cfg.sequence.count
        )));
    }
    ensure_valid(cfg)?;
    let opts = cfg.solver.to_opts();
    let limit = limit_side(cfg, &opts)?;
    let sub = run_single_n(cfg, &limit, n, &opts, deterministic)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        sub.trajectory
            .write_csv(&dir.join(format!("thin_{n}.csv")))?;
        // final displacement snapshot in the field-dump format
        let meshes = bondlab::mesh::build_domain(&cfg.domain.to_domain_config(sub.row.eps)?)?;
        let last = sub.trajectory.states.last().expect("nonempty trajectory");
        let field = bondlab::NodalField {
            mesh_id: meshes.bulk.id.clone(),
            ncomp: cfg.domain.dim,
            values: last.u.clone(),
        };
        bondlab::field::dump_field(
            &dir.join(format!("thin_{n}_u_final.csv")),
            &meshes.bulk,
            &field,
        )?;
    }
    Ok(sub.row)
}

/// The limit trajectory alone (`simulate-limit`).
pub fn run_limit_single(cfg: &StudyConfig, out: Option<&Path>) -> Result<()> {
    ensure_valid(cfg)?;
    let opts = cfg.solver.to_opts();
    let limit = limit_side(cfg, &opts)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        limit.trajectory.write_csv(&dir.join("limit.csv"))?;
    }
    Ok(())
}

/// Norm-consistency probe across the declared sequence (`project`):
/// random states plus the constant-velocity closed-form case.
pub fn run_projection_probe(cfg: &StudyConfig, out: Option<&Path>) -> Result<String> {
    ensure_valid(cfg)?;
    let opts = cfg.solver.to_opts();
    let _ = &opts;
    let seq = &cfg.sequence;
    let lp = seq.limit_coefficients(cfg.dissipation.p)?;
    let law = cfg.material.to_law()?;
    let rho_star = cfg.material.to_rho_star()?;
    let domain0 = cfg.domain.to_domain_config(seq.eps_at(0))?;
    let limit_meshes = bondlab::mesh::build_domain(&domain0)?;
    let limit_forms = assemble_limit_forms(&lp, &limit_meshes, &law, &rho_star)?;

    let mut ctxs = Vec::new();
    let mut forms_n = Vec::new();
    for n in 0..seq.count {
        let q = seq.quintuple_at(n);
        let domain = cfg.domain.to_domain_config(q.eps)?;
        let meshes = bondlab::mesh::build_domain(&domain)?;
        forms_n.push(assemble_thin_forms(&q, &meshes, &law, &rho_star)?);
        ctxs.push(ProjectionContext::new(&meshes, &limit_meshes, q, lp)?);
    }
    let entries: Vec<(&ProjectionContext, &Forms)> = ctxs.iter().zip(forms_n.iter()).collect();

    let mut csv = String::from("case,n,eps,norm_proj,norm_limit,gap\n");
    let mut rng = Rng::new(cfg.rng_seed);
    let (nb, nl) = bondlab::limit::velocity_sizes(&limit_forms);
    for case in 0..10 {
        let mut u = vec![0.0; limit_forms.n];
        rng.fill_symmetric(&mut u);
        let u = limit_forms.masked_copy(&u);
        let mut vb = vec![0.0; nb];
        let mut vl = vec![0.0; nl];
        rng.fill_symmetric(&mut vb);
        rng.fill_symmetric(&mut vl);
        let x = LimitState {
            u,
            v_bulk: vb,
            v_layer: vl,
        };
        let (rows, norm_limit, _flags) =
            bondlab::trotter::norm_consistency_probe(&entries, &limit_forms, &x, 10.0);
        for r in &rows {
            csv.push_str(&format!(
                "random{case},{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
                r.n, r.eps, r.norm_proj, norm_limit, r.gap
            ));
        }
    }
    // constant-velocity closed-form case
    let c = [1.0, 0.5];
    let x = LimitState {
        u: vec![0.0; limit_forms.n],
        v_bulk: (0..nb / 2).flat_map(|_| c).collect(),
        v_layer: (0..nl / 2).flat_map(|_| c).collect(),
    };
    let (rows, norm_limit, _) =
        bondlab::trotter::norm_consistency_probe(&entries, &limit_forms, &x, 10.0);
    for r in &rows {
        csv.push_str(&format!(
            "constant,{},{:.12e},{:.12e},{:.12e},{:.12e}\n",
            r.n, r.eps, r.norm_proj, norm_limit, r.gap
        ));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("projection.csv"), &csv)?;
    }
    Ok(csv)
}
