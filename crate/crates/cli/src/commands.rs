use std::fmt::Write as _;
use std::path::PathBuf;

use lorenz_lab::conditions::{check_condition_a, check_condition_b, condition_b_sample, sweep_condition_a, SampleVerdict, Verdict};
use lorenz_lab::config::{EncloseStart, OutputFormat, RunConfig, StartKind};
use lorenz_lab::dynamics::{equilibria, Geometry, Params, State};
use lorenz_lab::integrator::{integrate, EventSpec, Trajectory};
use lorenz_lab::manifold::{branch_checkpoints, find_r_star, nested_diagnostics, seed_gamma_plus};
use lorenz_lab::sequence::{endpoint_behaviors, prepare, shoot_word, TargetWord};
use lorenz_lab::trace::summarize;
use lorenz_lab::validated::{certify_condition_b_segment, enclose_flow, IBox, Interval, SegmentVerdict};
use serde_json::{json, Value};

use crate::output::{CliError, Outcome, Status, EXIT_USAGE};
use crate::Command;

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serializes")
}

fn has_csv(command: &Command) -> bool {
    matches!(
        command,
        Command::Integrate { .. } | Command::Rstar { .. } | Command::CondASweep { .. } | Command::CondB { .. } | Command::Enclose { .. }
    )
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::new("USAGE", message, EXIT_USAGE)
}

pub fn run(command: &Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.output.format == OutputFormat::Csv && !has_csv(command) {
        return Err(usage(format!("{} has no CSV output", command.name())));
    }
    let mut cfg = cfg.clone();
    match command {
        Command::Integrate { start, point, backward } => {
            if let Some(s) = start {
                cfg.integrate.start = match s.as_str() {
                    "gamma-plus" => StartKind::GammaPlus,
                    "p0" => StartKind::P0,
                    "point" => StartKind::Point,
                    other => return Err(usage(format!("unknown start {other:?}; use gamma-plus, p0 or point"))),
                };
            }
            if let Some(p) = point {
                cfg.integrate.point = [p[0], p[1], p[2]];
                if start.is_none() {
                    cfg.integrate.start = StartKind::Point;
                }
            }
            cfg.integrate.backward |= *backward;
            cmd_integrate(&cfg)
        }
        Command::Rstar { lo, hi, width } => {
            cfg.rstar.lo = lo.unwrap_or(cfg.rstar.lo);
            cfg.rstar.hi = hi.unwrap_or(cfg.rstar.hi);
            cfg.rstar.width_tol = width.unwrap_or(cfg.rstar.width_tol);
            cmd_rstar(&cfg)
        }
        Command::Checkpoints => cmd_checkpoints(&cfg),
        Command::CondA => cmd_cond_a(&cfg),
        Command::CondASweep { r_min, r_max, r_step } => {
            cfg.sweep.r_min = r_min.unwrap_or(cfg.sweep.r_min);
            cfg.sweep.r_max = r_max.unwrap_or(cfg.sweep.r_max);
            cfg.sweep.r_step = r_step.unwrap_or(cfg.sweep.r_step);
            cmd_cond_a_sweep(&cfg)
        }
        Command::CondB { samples } => {
            cfg.cond_b.n_samples = samples.unwrap_or(cfg.cond_b.n_samples);
            cmd_cond_b(&cfg)
        }
        Command::Shoot { word } => {
            if let Some(w) = word {
                cfg.shoot.word = w.clone();
            }
            cmd_shoot(&cfg)
        }
        Command::Enclose { start, center, width, step } => {
            if let Some(s) = start {
                cfg.enclose.start = match s.as_str() {
                    "gamma-plus" => EncloseStart::GammaPlus,
                    "p0" => EncloseStart::P0,
                    "point" => EncloseStart::Point,
                    other => return Err(usage(format!("unknown start {other:?}; use gamma-plus, p0 or point"))),
                };
            }
            if let Some(c) = center {
                cfg.enclose.center = [c[0], c[1], c[2]];
                if start.is_none() {
                    cfg.enclose.start = EncloseStart::Point;
                }
            }
            cfg.enclose.width = width.unwrap_or(cfg.enclose.width);
            cfg.enclose.step = step.unwrap_or(cfg.enclose.step);
            cmd_enclose(&cfg)
        }
        Command::Config => {
            print!("{}", cfg.to_flat());
            std::process::exit(0);
        }
    }
}

fn trajectory_csv(tr: &Trajectory, per_step: usize) -> String {
    let mut out = String::from("t,x,y,z\n");
    for (t, s) in tr.samples(per_step) {
        let _ = writeln!(out, "{t:e},{:e},{:e},{:e}", s.x, s.y, s.z);
    }
    out
}

fn cmd_integrate(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.params;
    params.validate()?;
    let start = match cfg.integrate.start {
        StartKind::GammaPlus => seed_gamma_plus(&params, &cfg.seed)?,
        StartKind::P0 => equilibria(&params)?.p0,
        StartKind::Point => State::from_array(cfg.integrate.point),
    };
    let horizon = cfg.horizon.unwrap_or(20.0);
    let mut icfg = cfg.integrator.with_horizon(horizon).forward();
    if cfg.integrate.backward {
        icfg = icfg.backward();
    }
    let events = [EventSpec::x_zero(), EventSpec::xprime(), EventSpec::plane_xy()];
    let tr = integrate(start, &params, &icfg, &events)?;
    let dir = PathBuf::from(cfg.output.path.clone().unwrap_or_else(|| "lorenz-lab-integrate".into()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("trajectory.csv"), trajectory_csv(&tr, cfg.integrate.samples_per_step))?;
    let mut events_buf = Vec::new();
    tr.write_events_jsonl(&mut events_buf)?;
    std::fs::write(dir.join("events.jsonl"), events_buf)?;
    let summary = summarize(&tr);
    let x_zeros = summary.x_zeros.len();
    let report = json!({
        "params": params,
        "start": start,
        "direction": icfg.direction,
        "horizon": horizon,
        "end_time": tr.end_time(),
        "final_state": tr.final_state(),
        "termination": tr.termination,
        "accepted_steps": tr.dense.len(),
        "rejected_steps": tr.rejected_steps,
        "events": tr.events.len(),
        "trace": summary,
        "files": { "trajectory": dir.join("trajectory.csv"), "events": dir.join("events.jsonl") },
    });
    let mut out = Outcome::new(Status::Ok, report)
        .line("start", format!("{start:?}"))
        .line("end time", tr.end_time())
        .line("events", tr.events.len())
        .line("x zeros", x_zeros)
        .line("output", dir.display());
    out.report_file = Some(dir.join("report.json"));
    Ok(out)
}

fn cmd_rstar(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let p = cfg.params;
    let ccfg = cfg.classify_config();
    let bracket0 = (cfg.rstar.lo, cfg.rstar.hi);
    let res = find_r_star(p.s, p.q, bracket0, cfg.rstar.width_tol, &ccfg)?;
    let diagnostics = nested_diagnostics(p.s, p.q, bracket0, &cfg.rstar.diagnostic_widths, &ccfg)?;
    let approaches: Vec<f64> = diagnostics.iter().map(|d| d.diagnostics.closest_approach).collect();
    let decreasing = approaches.windows(2).all(|w| w[1] < w[0]);
    let status = if res.resolved { Status::Ok } else { Status::Inconclusive };
    let mut csv = String::from("R,class\n");
    for (r, c) in &res.probe {
        let _ = writeln!(csv, "{r},{c:?}");
    }
    let mut out = Outcome::new(
        status,
        json!({ "result": res, "midpoint": res.midpoint(), "diagnostics": diagnostics, "closest_approach_decreasing": decreasing }),
    )
    .line("bracket", format!("({:.10}, {:.10})", res.bracket.0, res.bracket.1))
    .line("width", format!("{:e}", res.width))
    .line("iterations", res.iterations)
    .line("resolved", res.resolved)
    .line("non-monotone", res.non_monotone)
    .line("closest approach", format!("{approaches:?}"));
    out.csv = Some(csv);
    Ok(out)
}

fn cmd_checkpoints(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rep = branch_checkpoints(&cfg.params, &cfg.seed, &cfg.integrator)?;
    let status = if rep.all_pass { Status::Holds } else { Status::Fails };
    let mut out = Outcome::new(status, to_json(&rep));
    for cp in rep.checkpoints() {
        for c in &cp.checks {
            out = out.line(&c.label, format!("{} ({})", c.value, if c.pass { "pass" } else { "FAIL" }));
        }
    }
    Ok(out.line("monotone start", rep.monotone_initial))
}

fn verdict_status(v: Verdict) -> Status {
    match v {
        Verdict::Holds => Status::Holds,
        Verdict::Fails => Status::Fails,
        Verdict::Inconclusive => Status::Inconclusive,
    }
}

fn cmd_cond_a(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let rep = check_condition_a(&cfg.params, &cfg.condition_a_config())?;
    let ordering: Vec<String> = rep.ordering.iter().map(|e| format!("{}={:.4}", e.label, e.t)).collect();
    Ok(Outcome::new(verdict_status(rep.verdict()), to_json(&rep))
        .line("ordering", ordering.join(" < "))
        .line("failure", format!("{:?}", rep.failure_reason)))
}

fn cmd_cond_a_sweep(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let grid = cfg.sweep.grid()?;
    let p = cfg.params;
    let res = sweep_condition_a(p.s, p.q, &grid, &cfg.condition_a_config())?;
    let status = if res.estimated_range.is_some() { Status::Ok } else { Status::Fails };
    let mut csv = Vec::new();
    res.write_csv(&mut csv)?;
    let range = res.estimated_range.map(|(a, b)| format!("({a:.4}, {b:.4})")).unwrap_or_else(|| "none".into());
    let mut out = Outcome::new(status, to_json(&res)).line("grid points", res.grid.len()).line("holds range", range);
    out.csv = Some(String::from_utf8(csv).expect("utf-8 csv"));
    Ok(out)
}

fn cmd_cond_b(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.params;
    let bcfg = cfg.condition_b_config();
    let rep = check_condition_b(&params, &bcfg)?;
    let geometry = Geometry::new(params, rep.p1)?;
    // Certify around the samples that leave E fastest; those have the
    // shortest backward enclosures.
    let mut candidates: Vec<_> = rep.samples.iter().filter(|s| s.verdict == SampleVerdict::LeavesEBeforeL).collect();
    candidates.sort_by(|a, b| {
        let ta = a.t_exit.map_or(f64::INFINITY, f64::abs);
        let tb = b.t_exit.map_or(f64::INFINITY, f64::abs);
        ta.total_cmp(&tb).then(a.xi.total_cmp(&b.xi))
    });
    let ccfg = cfg.certify_config();
    let half = 0.5 * cfg.cond_b.certify_width;
    let mut certificates = Vec::new();
    let mut certified = 0;
    for s in candidates.into_iter().take(cfg.cond_b.certify_count) {
        let xi = Interval::new(s.xi - half, s.xi + half);
        let cert = certify_condition_b_segment(xi, &geometry, &ccfg)?;
        let mid = condition_b_sample(&geometry, xi.mid(), &bcfg);
        if cert.verdict == SegmentVerdict::Certified2a {
            certified += 1;
        }
        certificates.push(json!({ "certificate": cert, "midpoint_verdict": mid.verdict }));
    }
    let status = if rep.counts.violation > 0 {
        Status::Fails
    } else if rep.counts.inconclusive > 0 {
        Status::Inconclusive
    } else {
        Status::Holds
    };
    let mut csv = Vec::new();
    rep.write_csv(&mut csv)?;
    let c = rep.counts;
    let mut out = Outcome::new(status, json!({ "sampling": rep, "certificates": certificates }))
        .line("samples", rep.samples.len())
        .line("2a", c.leaves_e_before_l)
        .line("2b", c.four_changes_local)
        .line("violations", c.violation)
        .line("inconclusive", c.inconclusive)
        .line("certified", format!("{certified} of {}", certificates.len()));
    out.csv = Some(String::from_utf8(csv).expect("utf-8 csv"));
    Ok(out)
}

fn cmd_shoot(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let target: TargetWord = cfg.shoot.word.parse()?;
    let scfg = cfg.shoot_config();
    let params = cfg.params;
    let endpoints = endpoint_behaviors(&params, &scfg, cfg.shoot.endpoint_near_p0, cfg.shoot.endpoint_near_p1, cfg.shoot.endpoint_horizon)?;
    let res = shoot_word(&target, &params, &scfg)?;
    let ok = res.achieved_word == target.letters() && res.halved_tolerance_word == target.letters();
    if let Some(path) = &cfg.shoot.witness_csv {
        let geometry = prepare(&params, &scfg)?;
        let icfg = cfg.integrator.with_horizon(res.horizon_used);
        let tr = integrate(geometry.point_on_l(res.witness_alpha), &params, &icfg, &[])?;
        std::fs::write(path, trajectory_csv(&tr, 4))?;
    }
    let status = if ok { Status::Ok } else { Status::Fails };
    Ok(Outcome::new(status, json!({ "endpoints": endpoints, "result": res }))
        .line("target", &target)
        .line("witness alpha", format!("{:.17}", res.witness_alpha))
        .line("achieved", format!("{:?}", res.achieved_word))
        .line("halved tol", format!("{:?}", res.halved_tolerance_word))
        .line("interval width", format!("{:e}", res.final_width))
        .line("endpoints", if endpoints.pass { "pass" } else { "FAIL" }))
}

fn enclose_start(cfg: &RunConfig) -> Result<State, CliError> {
    let params: Params = cfg.params;
    Ok(match cfg.enclose.start {
        EncloseStart::GammaPlus => seed_gamma_plus(&params, &cfg.seed)?,
        EncloseStart::P0 => equilibria(&params)?.p0,
        EncloseStart::Point => State::from_array(cfg.enclose.center),
    })
}

fn cmd_enclose(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let params = cfg.params;
    let center = enclose_start(cfg)?;
    let start = IBox::around(&center, 0.5 * cfg.enclose.width);
    let span = cfg.horizon.unwrap_or(cfg.enclose.t_span);
    let run = enclose_flow(&start, &params, span, cfg.enclose.step)?;
    // Cross-check against the point integrator from the box centre.
    let icfg = if span < 0.0 { cfg.integrator.with_horizon(-span).backward() } else { cfg.integrator.with_horizon(span).forward() };
    let tr = integrate(center, &params, &icfg, &[])?;
    let contained = run.steps.iter().all(|s| tr.evaluate(s.t).map(|p| s.enclosure.contains(&p)).unwrap_or(false));
    let mut csv = String::from("t,x_lo,x_hi,y_lo,y_hi,z_lo,z_hi,width\n");
    for (t, b) in run.boxes() {
        let _ = writeln!(csv, "{t:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}", b.x.lo, b.x.hi, b.y.lo, b.y.hi, b.z.lo, b.z.hi, b.width());
    }
    let digits = run.digits_lost_per_unit;
    let mut out = Outcome::new(Status::Ok, json!({ "run": run, "center_trajectory_contained": contained }))
        .line("start width", format!("{:e}", start.width()))
        .line("final width", format!("{:e}", run.final_box().width()))
        .line("steps", run.steps.len())
        .line(
            "digits lost/unit",
            digits.map_or("n/a (point start)".to_string(), |d| format!("{d:.3} (reference figure for older methods: about 10)")),
        )
        .line("centre contained", contained);
    out.csv = Some(csv);
    Ok(out)
}
