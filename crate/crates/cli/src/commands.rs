//! The six subcommands. Each reads its inputs from the output directory,
//! writes its artifacts there and records itself in the manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use lorentz_ot::instance::generate;
use lorentz_ot::io::{
    read_duals, read_json, write_curve_samples, write_duals, write_field, write_json, CouplingFile, InstanceFile,
    InterpolantFile, MeasureFile,
};
use lorentz_ot::pipeline::{one_sided_diagnostics, ONE_SIDED_RATIO, regularize_stage, LadderReport, OneSidedReport, Regularizer};
use lorentz_ot::semigroup::CandidateSet;
use lorentz_ot::transport::{
    check_chronological_support, displacement_interpolation, dynamical_coupling, solve_kantorovich, Coupling,
    DualPair, KantorovichSolution,
};
use lorentz_ot::verify::{
    check_duality, hamiltonian_check, interpolation_check, semigroup_suite, cost_gradient_check, C11Report,
    CalibrationReport, RandomFieldSpec,
};
use lorentz_ot::{GeometrySpec, Minkowski};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::manifest::record;

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// A hard check failed or no `tau` passed.
    VerificationFailed,
}

pub const INSTANCE: &str = "instance.json";
pub const COUPLING: &str = "coupling.json";
pub const SOLVE_REPORT: &str = "solve_report.json";
pub const CURVES: &str = "curves.csv";
pub const REGULARIZE_REPORT: &str = "regularize_report.json";
pub const VERIFY_REPORT: &str = "verify_report.json";
pub const REPORT: &str = "report.json";
pub const REPORT_TABLE: &str = "report.txt";

/// Tolerance on coupling marginals.
const MARGINAL_TOL: f64 = 1e-9;

fn missing(path: &Path, stage: &str) -> anyhow::Error {
    anyhow::anyhow!("missing artifact {}; run `{stage}` first", path.display())
}

fn require(path: PathBuf, stage: &str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(missing(&path, stage))
    }
}

fn build(spec: GeometrySpec) -> Result<Minkowski> {
    Ok(spec.build()?)
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    let inst = generate(&cfg.instance_spec())?;
    let file = InstanceFile {
        geometry: inst.geometry,
        mu0: MeasureFile::from_measure(&inst.mu0),
        mu1: MeasureFile::from_measure(&inst.mu1),
    };
    write_json(&out.join(INSTANCE), &file)?;
    let summary = json!({ "sources": inst.mu0.len(), "targets": inst.mu1.len(), "mode": cfg.gen.mode });
    record(out, cfg, "gen", vec![INSTANCE.into()], true, summary, start.elapsed().as_secs_f64())?;
    println!("wrote {} ({} sources, {} targets)", INSTANCE, inst.mu0.len(), inst.mu1.len());
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub primal_cost: f64,
    pub dual_value: f64,
    pub duality_gap: f64,
    pub pivots: usize,
    pub anchors: Vec<usize>,
    pub marginal_error: f64,
    pub chronological_fraction: f64,
    pub chronological: bool,
    pub calibration: CalibrationReport,
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    let ipath = cfg.instance.clone().unwrap_or_else(|| out.join(INSTANCE));
    let ipath = require(ipath, "gen")?;
    let inst: InstanceFile = read_json(&ipath)?;
    let g = build(inst.geometry)?;
    let mu0 = inst.mu0.to_measure()?;
    let mu1 = inst.mu1.to_measure()?;
    let sol = solve_kantorovich(&g, &mu0, &mu1)?;
    write_json(&out.join(COUPLING), &CouplingFile::new(inst.geometry, &sol.coupling))?;
    write_duals(out, &sol.duals)?;
    let chrono = check_chronological_support(&g, &sol.coupling)?;
    let calibration = check_duality(&g, &sol.coupling, &sol.duals)?;
    let rep = SolveReport {
        primal_cost: sol.primal_cost,
        dual_value: sol.dual_value,
        duality_gap: sol.duality_gap(),
        pivots: sol.pivots,
        anchors: sol.duals.anchors.clone(),
        marginal_error: sol.coupling.marginal_error(),
        chronological_fraction: chrono.fraction,
        chronological: chrono.pass,
        calibration,
    };
    write_json(&out.join(SOLVE_REPORT), &rep)?;
    let pass = rep.calibration.pass() && rep.marginal_error <= MARGINAL_TOL;
    let artifacts = [COUPLING, "phi.csv", "psi.csv", SOLVE_REPORT].map(String::from).to_vec();
    let summary = json!({ "total_cost": rep.primal_cost, "duality_gap": rep.duality_gap, "chronological_fraction": rep.chronological_fraction });
    record(out, cfg, "solve", artifacts, pass, summary, start.elapsed().as_secs_f64())?;
    println!(
        "total cost {} (dual {}, gap {:e}, {} pivots, pi(I+) = {})",
        rep.primal_cost, rep.dual_value, rep.duality_gap, rep.pivots, rep.chronological_fraction
    );
    Ok(if pass { Status::Ok } else { Status::VerificationFailed })
}

struct Solved {
    g: Minkowski,
    sol: KantorovichSolution,
    report: SolveReport,
}

fn load_solved(out: &Path) -> Result<Solved> {
    let cf: CouplingFile = read_json(&require(out.join(COUPLING), "solve")?)?;
    let report: SolveReport = read_json(&require(out.join(SOLVE_REPORT), "solve")?)?;
    require(out.join("phi.csv"), "solve")?;
    require(out.join("psi.csv"), "solve")?;
    let duals: DualPair = read_duals(out, report.anchors.clone())?;
    let coupling: Coupling = cf.to_coupling()?;
    let g = build(cf.geometry)?;
    let dual_value = duals.value(&coupling.source, &coupling.target);
    let sol = KantorovichSolution {
        coupling,
        duals,
        primal_cost: report.primal_cost,
        dual_value,
        time: 1.0,
        pivots: report.pivots,
    };
    Ok(Solved {
        g,
        sol,
        report,
    })
}

pub fn interpolate(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    cfg.validate_times()?;
    let s = load_solved(out)?;
    let dc = dynamical_coupling(&s.g, &s.sol.coupling)?;
    let dir = out.join("interp");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut artifacts = Vec::new();
    for (k, &t) in cfg.interpolate_times.iter().enumerate() {
        let mu = displacement_interpolation(&dc, t)?;
        let name = format!("interp/mu_{k:02}.json");
        write_json(&out.join(&name), &InterpolantFile { t, measure: MeasureFile::from_measure(&mu) })?;
        artifacts.push(name);
    }
    write_curve_samples(&out.join(CURVES), &dc, cfg.curve_samples)?;
    artifacts.push(CURVES.into());
    let summary = json!({ "times": cfg.interpolate_times, "curves": dc.curves.len() });
    record(out, cfg, "interpolate", artifacts, true, summary, start.elapsed().as_secs_f64())?;
    println!("wrote {} interpolants and {} curve traces", cfg.interpolate_times.len(), dc.curves.len());
    Ok(Status::Ok)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauEntry {
    pub tau: f64,
    pub pass: bool,
    pub ladder: LadderReport,
    pub c11_phi: C11Report,
    pub c11_psi: C11Report,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizeReport {
    pub s: f64,
    pub t: f64,
    pub schedule: Vec<f64>,
    pub selected: Option<f64>,
    pub forced: bool,
    pub results: Vec<TauEntry>,
    /// One-sided diagnostics at the selected `tau`; non-fatal.
    pub one_sided: Option<OneSidedReport>,
}

/// `K` per evaluation box, for plotting.
fn write_kmap(path: &Path, tau: f64, rep: &C11Report, first: bool) -> Result<()> {
    use std::io::Write;
    let mut f = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(!first)
        .truncate(first)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if first {
        let dim = rep.boxes.first().map_or(0, |b| b.center.len());
        let coords: Vec<String> = (0..dim).map(|k| format!("x{k}")).collect();
        writeln!(f, "tau,support_index,{},k_upper,k_lower,k_upper_fine,k_lower_fine,gradient_lipschitz,pass", coords.join(","))?;
    }
    for b in &rep.boxes {
        let c: Vec<String> = b.center.iter().map(f64::to_string).collect();
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{}",
            tau,
            b.support_index,
            c.join(","),
            b.k_upper,
            b.k_lower,
            b.k_upper_fine,
            b.k_lower_fine,
            b.gradient_lipschitz.max(b.gradient_lipschitz_fine),
            b.pass
        )?;
    }
    Ok(())
}

pub fn regularize(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    cfg.validate_times()?;
    let s = load_solved(out)?;
    let rc = &cfg.regularize;
    let outcome = regularize_stage(&s.g, &s.sol, rc)?;
    let dir = out.join("regularize");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut artifacts = Vec::new();
    let mut put_field = |name: String, f: &lorentz_ot::semigroup::PotentialField| -> Result<()> {
        write_field(&out.join(&name), f)?;
        artifacts.push(name.clone());
        artifacts.push(name.replace(".csv", ".json"));
        Ok(())
    };
    put_field("regularize/phi_s.csv".into(), &outcome.phi_s)?;
    put_field("regularize/psi_t.csv".into(), &outcome.psi_t)?;
    for (k, r) in outcome.results.iter().enumerate() {
        put_field(format!("regularize/tau_{k:02}_Phi_s.csv"), &r.pair.phi_s)?;
        put_field(format!("regularize/tau_{k:02}_Psi_t.csv"), &r.pair.psi_t)?;
    }
    for (k, r) in outcome.results.iter().enumerate() {
        write_kmap(&dir.join("kmap_phi.csv"), r.tau, &r.c11_phi, k == 0)?;
        write_kmap(&dir.join("kmap_psi.csv"), r.tau, &r.c11_psi, k == 0)?;
    }
    if !outcome.results.is_empty() {
        artifacts.push("regularize/kmap_phi.csv".into());
        artifacts.push("regularize/kmap_psi.csv".into());
    }
    let one_sided = match outcome.selected {
        Some(tau) => {
            let reg = Regularizer::new(&s.g, &s.sol, rc.s, rc.t, rc.candidate_grid)?;
            Some(one_sided_diagnostics(&reg, tau, &outcome.a_t, rc.eval_box)?)
        }
        None => None,
    };
    let rep = RegularizeReport {
        s: rc.s,
        t: rc.t,
        schedule: rc.schedule(),
        selected: outcome.selected,
        forced: rc.force,
        results: outcome
            .results
            .iter()
            .map(|r| TauEntry {
                tau: r.tau,
                pass: r.pass(),
                ladder: r.ladder.clone(),
                c11_phi: r.c11_phi.clone(),
                c11_psi: r.c11_psi.clone(),
            })
            .collect(),
        one_sided,
    };
    write_json(&out.join(REGULARIZE_REPORT), &rep)?;
    artifacts.push(REGULARIZE_REPORT.into());
    let pass = rep.selected.is_some();
    let summary = json!({ "selected_tau": rep.selected, "schedule": rep.schedule });
    record(out, cfg, "regularize", artifacts, pass, summary, start.elapsed().as_secs_f64())?;
    for r in &rep.results {
        println!(
            "tau {:<10} ladder {:.2e}  phi K+ {:.3} K- {:.3}  psi K+ {:.3} K- {:.3}  {}",
            r.tau,
            r.ladder.max(),
            r.c11_phi.k_upper,
            r.c11_phi.k_lower,
            r.c11_psi.k_upper,
            r.c11_psi.k_lower,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    match rep.selected {
        Some(tau) => {
            println!("selected tau = {tau}");
            Ok(Status::Ok)
        }
        None => {
            eprintln!("tau schedule exhausted: no tau passed the C11 check");
            Ok(Status::VerificationFailed)
        }
    }
}

/// JSON has no infinities; they are written as null.
fn nullable_f64<'de, D: serde::Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    #[serde(deserialize_with = "nullable_f64")]
    pub value: f64,
    #[serde(deserialize_with = "nullable_f64")]
    pub threshold: f64,
    pub pass: bool,
    /// Hard checks decide the exit code.
    pub hard: bool,
}

impl Check {
    fn hard(name: &str, value: f64, threshold: f64, pass: bool) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass,
            hard: true,
        }
    }

    fn soft(name: &str, value: f64, threshold: f64, pass: bool) -> Self {
        Self {
            hard: false,
            ..Self::hard(name, value, threshold, pass)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn table(checks: &[Check]) -> String {
    let mut s = format!("{:<34} {:>14} {:>12} {:>6} {}\n", "check", "value", "threshold", "kind", "result");
    for c in checks {
        s.push_str(&format!(
            "{:<34} {:>14.6e} {:>12.3e} {:>6} {}\n",
            c.name,
            c.value,
            c.threshold,
            if c.hard { "hard" } else { "diag" },
            if c.pass { "PASS" } else { "FAIL" }
        ));
    }
    s
}

pub fn verify(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    cfg.validate_times()?;
    let s = load_solved(out)?;
    let (g, pi) = (&s.g, &s.sol.coupling);
    let mut checks = Vec::new();

    let cal = check_duality(g, pi, &s.sol.duals)?;
    let gap_scale = 1.0 + cal.primal.abs();
    checks.push(Check::hard("duality gap / (1+|primal|)", cal.duality_gap.abs() / gap_scale, 1e-9, cal.gap_pass));
    checks.push(Check::hard("support residual", cal.max_support_residual, 1e-9, cal.support_pass));
    checks.push(Check::hard("subsolution violation", cal.max_subsolution_violation, 1e-9, cal.subsolution_pass));
    let me = pi.marginal_error();
    checks.push(Check::hard("marginal error", me, MARGINAL_TOL, me <= MARGINAL_TOL));
    let chrono = check_chronological_support(g, pi)?;
    checks.push(Check::soft("pi(I+)", chrono.fraction, 1.0, chrono.pass));

    let triples: Vec<_> = pi
        .entries
        .iter()
        .filter_map(|e| {
            let (x, y) = (&pi.source.points()[e.source], &pi.target.points()[e.target]);
            use lorentz_ot::Geometry;
            let chronological = g.causal_relation(x, y).map(|r| r.is_chronological()).unwrap_or(false);
            chronological.then(|| (1.0, x.clone(), y.clone()))
        })
        .collect();
    if !triples.is_empty() {
        let ta = cost_gradient_check(g, &triples)?;
        checks.push(Check::hard("cost gradient rel. error", ta.max_rel_error, 1e-5, ta.pass));
        checks.push(Check::hard("time-derivative identity", ta.dt_identity_error, 1e-12, ta.dt_pass));
    }

    let cands = CandidateSet::from_measures(&[&pi.source, &pi.target]);
    let spec = RandomFieldSpec {
        count: cfg.random_fields,
        seed: cfg.seed,
        amplitude: 1.0,
    };
    let (rs, rt) = (cfg.regularize.s, cfg.regularize.t);
    let sg = semigroup_suite(g, &cands, spec, rs, rt)?;
    checks.push(Check::hard("semigroup laws", sg.enriched_defect, 1e-9, sg.pass));

    let ham = hamiltonian_check(g, 1000, 20, 100, cfg.seed)?;
    let young = ham.young_violations as f64;
    checks.push(Check::hard("Legendre round-trip", ham.max_roundtrip_error, 1e-9, ham.max_roundtrip_error <= 1e-9));
    checks.push(Check::hard("Young violations", young, 0.0, ham.young_violations == 0));
    checks.push(Check::hard("energy drift", ham.max_energy_drift, 1e-10, ham.max_energy_drift <= 1e-10));

    if chrono.pass {
        let dc = dynamical_coupling(g, pi)?;
        let ic = interpolation_check(g, &dc, s.report.primal_cost, rs, rt)?;
        checks.push(Check::hard("interpolation cost identity", ic.error, 1e-8, ic.pass));
    }

    let rpath = out.join(REGULARIZE_REPORT);
    if rpath.exists() {
        let rep: Value = read_json(&rpath)?;
        let selected = rep["selected"].as_f64();
        checks.push(Check::hard("regularize selected tau", selected.unwrap_or(0.0), 0.0, selected.is_some()));
        if let Some(tau) = selected {
            let entry = rep["results"].as_array().and_then(|rs| rs.iter().find(|r| r["tau"].as_f64() == Some(tau)));
            if let Some(e) = entry {
                let ladder: LadderReport = serde_json::from_value(e["ladder"].clone())?;
                checks.push(Check::hard("ladder identities", ladder.max(), 1e-8, ladder.pass()));
            }
        }
        if let Some(os) = rep.get("one_sided").filter(|v| !v.is_null()) {
            // Non-finite values are stored as null.
            let num = |k: &str| os[k].as_f64().unwrap_or(f64::INFINITY);
            let ratio = if num("psi_t_k_upper").is_finite() {
                num("big_psi_t_k_upper") / num("psi_t_k_upper").max(f64::MIN_POSITIVE)
            } else {
                0.0
            };
            let ok = os["pass"].as_bool().unwrap_or(false);
            checks.push(Check::soft("psi_t K_lower", num("psi_t_k_lower"), f64::INFINITY, num("psi_t_k_lower").is_finite()));
            checks.push(Check::soft("K_upper(Psi_t) / K_upper(psi_t)", ratio, ONE_SIDED_RATIO, ok));
        }
    }

    let pass = checks.iter().filter(|c| c.hard).all(|c| c.pass);
    let rep = VerifyReport { checks, pass };
    write_json(&out.join(VERIFY_REPORT), &rep)?;
    let summary = json!({ "hard_failures": rep.checks.iter().filter(|c| c.hard && !c.pass).count() });
    record(out, cfg, "verify", vec![VERIFY_REPORT.into()], pass, summary, start.elapsed().as_secs_f64())?;
    print!("{}", table(&rep.checks));
    Ok(if pass { Status::Ok } else { Status::VerificationFailed })
}

pub fn report(cfg: &RunConfig, out: &Path) -> Result<Status> {
    let start = Instant::now();
    let read_opt = |name: &str| -> Result<Value> {
        let p = out.join(name);
        if p.exists() {
            read_json(&p).map_err(Into::into)
        } else {
            Ok(Value::Null)
        }
    };
    let manifest = read_opt(crate::manifest::MANIFEST)?;
    if manifest.is_null() {
        return Err(missing(&out.join(crate::manifest::MANIFEST), "gen"));
    }
    let verify: Value = read_opt(VERIFY_REPORT)?;
    let reg: Value = read_opt(REGULARIZE_REPORT)?;
    let solve: Value = read_opt(SOLVE_REPORT)?;
    let stages: Vec<(String, bool)> = manifest["stages"]
        .as_object()
        .map(|m| m.iter().map(|(k, v)| (k.clone(), v["pass"].as_bool().unwrap_or(false))).collect())
        .unwrap_or_default();
    let mut text = String::from("stage        result\n");
    for (k, p) in &stages {
        text.push_str(&format!("{k:<12} {}\n", if *p { "PASS" } else { "FAIL" }));
    }
    if let Some(c) = solve["primal_cost"].as_f64() {
        text.push_str(&format!("\ntotal cost   {c}\n"));
    }
    if !reg.is_null() {
        text.push_str(&format!("selected tau {}\n", reg["selected"]));
    }
    if let Ok(v) = serde_json::from_value::<VerifyReport>(verify.clone()) {
        text.push('\n');
        text.push_str(&table(&v.checks));
    }
    let all = json!({
        "manifest": manifest,
        "solve": solve,
        "regularize": reg,
        "verify": verify,
    });
    write_json(&out.join(REPORT), &all)?;
    fs::write(out.join(REPORT_TABLE), &text).with_context(|| "writing report table")?;
    let pass = stages.iter().all(|(_, p)| *p);
    record(
        out,
        cfg,
        "report",
        vec![REPORT.into(), REPORT_TABLE.into()],
        pass,
        json!({ "stages": stages.len() }),
        start.elapsed().as_secs_f64(),
    )?;
    print!("{text}");
    Ok(Status::Ok)
}
