use std::fs;
use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use plrnn_dyn::dynamics::{
    basin_grid, bifurcation_sweep, detect_period, regime_changes, simulate, Attractor, BasinSpec, InitPolicy, SweepSpec,
};
use plrnn_dyn::io::model_from_json;
use plrnn_dyn::manifold::{build_manifold, build_manifold_fallback, manifold_csv, manifold_metadata, ManifoldConfig, ManifoldSide};
use plrnn_dyn::metrics::{d_stsp, prediction_error};
use plrnn_dyn::pl2d::{homoclinic_analysis, saddle_2d, Side};
use plrnn_dyn::scyfi::{find_cycles, solve_cycle_candidate, CyclePoint, Stability};
use plrnn_dyn::{Error, PlModel, RegionCode};

use crate::output::{Artifacts, Provenance};
use crate::{Command, Common, SaddleArg, SideArg};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_PARSE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_USAGE, message: msg.into() }
}

fn parse(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_PARSE, message: msg.into() }
}

fn numerical(e: Error) -> CliError {
    let code = match e {
        Error::Parse(_) => EXIT_PARSE,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    };
    CliError { code, message: e.to_string() }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Loaded {
    model: PlModel<f64>,
    prov: Provenance,
}

fn load(common: &Common) -> CliResult<Loaded> {
    let bytes = fs::read(&common.model).map_err(|e| parse(format!("{}: {e}", common.model.display())))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| parse(format!("{}: {e}", common.model.display())))?;
    let model = model_from_json::<f64>(text).map_err(|e| parse(format!("{}: {e}", common.model.display())))?;
    Ok(Loaded { model, prov: Provenance::new(&bytes, common.seed) })
}

fn commit(art: Artifacts, dir: &Path) -> CliResult<()> {
    let paths = art.commit(dir).map_err(|e| CliError { code: EXIT_NUMERICAL, message: format!("writing output: {e}") })?;
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn floats(text: &str, sep: char, what: &str) -> CliResult<Vec<f64>> {
    text.split(sep)
        .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("{what}: '{s}' is not a number"))))
        .collect()
}

fn vec_json(v: &DVector<f64>) -> Value {
    json!(v.as_slice())
}

pub fn cycle_json(id: usize, c: &CyclePoint<f64>) -> Value {
    json!({
        "id": id,
        "period": c.period(),
        "regions": c.regions.iter().map(|r| r.to_string()).collect::<Vec<_>>(),
        "points": c.points.iter().map(vec_json).collect::<Vec<_>>(),
        "eigenvalues": c.eigen.eigenvalues.iter().map(|l| [l.re, l.im]).collect::<Vec<_>>(),
        "moduli": c.eigen.moduli(),
        "stability": c.stability,
        "virtual": c.is_virtual,
    })
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::FixedPoints { common, max_period, budget } => fixed_points(&common, max_period, budget),
        Command::Manifold {
            common,
            side,
            regions,
            cycles,
            id,
            max_period,
            bounds,
            max_iters,
            max_segments,
            samples,
            local_extent,
            bitflip_depth,
            fallback,
            seeds,
            horizon,
        } => {
            let l = load(&common)?;
            let cycle = select_cycle(&l.model, regions.as_deref(), cycles.as_deref(), id, max_period, common.seed)?;
            let n = l.model.dim();
            let b = floats(&bounds, ':', "--box")?;
            let (lower, upper) = match b.len() {
                2 => (vec![b[0]; n], vec![b[1]; n]),
                k if k == 2 * n => ((0..n).map(|i| b[2 * i]).collect(), (0..n).map(|i| b[2 * i + 1]).collect()),
                _ => return Err(usage(format!("--box needs 2 or {} values", 2 * n))),
            };
            let mut cfg = ManifoldConfig::new(lower, upper);
            cfg.max_iters = max_iters;
            cfg.max_segments = max_segments;
            cfg.samples = samples;
            cfg.local_extent = local_extent;
            cfg.bitflip_depth = bitflip_depth;
            let side = match side {
                SideArg::Stable => ManifoldSide::Stable,
                SideArg::Unstable => ManifoldSide::Unstable,
            };
            let man = if fallback {
                build_manifold_fallback(&l.model, &cycle, side, seeds, horizon, common.seed, &cfg)
            } else {
                build_manifold(&l.model, &cycle, side, &cfg)
            }
            .map_err(numerical)?;
            let mut art = Artifacts::default();
            let mut csv = manifold_csv(&man);
            csv.push_str(&l.prov.csv_footer());
            art.add("manifold.csv", csv);
            let mut meta = manifold_metadata(&man);
            meta["provenance"] = l.prov.json();
            art.add_json("segments.json", &meta);
            commit(art, &common.out)
        }
        Command::Homoclinic { common, saddle, max_return_time } => homoclinic(&common, saddle, max_return_time),
        Command::Sweep { common, sweep, transient, record, init, follow } => {
            let l = load(&common)?;
            let parts: Vec<&str> = sweep.split(':').collect();
            if parts.len() != 4 {
                return Err(usage("--sweep must be param:lo:hi:count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| usage(format!("--sweep: '{s}' is not a number")));
            let count = parts[3].parse::<usize>().map_err(|_| usage("--sweep: count must be a non-negative integer"))?;
            let n = l.model.dim();
            let init = match init {
                Some(s) => {
                    let v = floats(&s, ',', "--init")?;
                    if v.len() != n {
                        return Err(usage(format!("--init needs {n} values")));
                    }
                    if follow {
                        InitPolicy::FollowAttractor(v)
                    } else {
                        InitPolicy::Fixed(v)
                    }
                }
                None if follow => return Err(usage("--follow requires --init")),
                None => InitPolicy::Random { lo: -1.0, hi: 1.0 },
            };
            let spec = SweepSpec {
                param: parts[0].to_string(),
                lo: num(parts[1])?,
                hi: num(parts[2])?,
                count,
                transient,
                record,
                init,
                seed: common.seed,
            };
            let cols = bifurcation_sweep(&l.model, &spec).map_err(numerical)?;
            let mut csv = String::from("value");
            for i in 0..n {
                csv.push_str(&format!(",x{i}"));
            }
            csv.push('\n');
            for c in &cols {
                for s in &c.samples {
                    csv.push_str(&c.value.to_string());
                    for x in s.iter() {
                        csv.push_str(&format!(",{x}"));
                    }
                    csv.push('\n');
                }
            }
            csv.push_str(&l.prov.csv_footer());
            let summary: Vec<Value> = cols
                .iter()
                .map(|c| json!({ "value": c.value, "period": c.period, "largest_le": c.largest_le, "diverged": c.diverged }))
                .collect();
            let mut art = Artifacts::default();
            art.add("sweep.csv", csv);
            art.add_json(
                "sweep.json",
                &json!({ "spec": spec, "columns": summary, "regime_changes": regime_changes(&cols), "provenance": l.prov.json() }),
            );
            commit(art, &common.out)
        }
        Command::Basin { common, grid, max_iters, max_period, trials, threads, tol_basin, tol_radius } => {
            basin(&common, &grid, max_iters, max_period, trials, threads, tol_basin, tol_radius)
        }
        Command::Metrics { common, true_traj, generated, bins, horizons } => {
            let l = load(&common)?;
            let obs = read_trajectory(&true_traj)?;
            if obs.is_empty() {
                return Err(parse(format!("{}: no states", true_traj.display())));
            }
            let gen = match generated {
                Some(p) => read_trajectory(&p)?,
                None => simulate(&l.model, &obs[0], obs.len(), 0).map_err(numerical)?.states,
            };
            let d = d_stsp(&obs, &gen, bins).map_err(|e| match e {
                Error::Dimension { .. } => parse(e.to_string()),
                e => numerical(e),
            })?;
            let mut pe = Vec::new();
            for h in horizons.split(',') {
                let n = h.trim().parse::<usize>().map_err(|_| usage(format!("--horizons: '{h}' is not a count")))?;
                let e = prediction_error(&obs, &l.model, n).map_err(|e| match e {
                    Error::Dimension { .. } => parse(e.to_string()),
                    e => numerical(e),
                })?;
                pe.push(json!({ "n": n, "pe": e }));
            }
            let mut art = Artifacts::default();
            art.add_json(
                "metrics.json",
                &json!({ "d_stsp": d, "bins": bins, "prediction_error": pe, "states": obs.len(), "provenance": l.prov.json() }),
            );
            commit(art, &common.out)
        }
    }
}

fn fixed_points(common: &Common, max_period: usize, budget: usize) -> CliResult<()> {
    let l = load(common)?;
    let cycles = find_cycles(&l.model, max_period, budget, common.seed);
    let list: Vec<Value> = cycles.iter().enumerate().map(|(i, c)| cycle_json(i, c)).collect();
    let mut art = Artifacts::default();
    art.add_json(
        "cycles.json",
        &json!({ "max_period": max_period, "budget": budget, "cycles": list, "provenance": l.prov.json() }),
    );
    commit(art, &common.out)
}

fn parse_regions(text: &str) -> CliResult<Vec<RegionCode>> {
    text.split(',')
        .map(|s| s.trim().parse::<RegionCode>().map_err(|_| usage(format!("invalid region code '{s}'"))))
        .collect()
}

fn select_cycle(
    model: &PlModel<f64>,
    regions: Option<&str>,
    cycles: Option<&Path>,
    id: usize,
    max_period: usize,
    seed: u64,
) -> CliResult<CyclePoint<f64>> {
    if let Some(r) = regions {
        return solve_cycle_candidate(model, &parse_regions(r)?).map_err(numerical);
    }
    if let Some(path) = cycles {
        let text = fs::read_to_string(path).map_err(|e| parse(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| parse(format!("{}: {e}", path.display())))?;
        let entry = v["cycles"]
            .as_array()
            .and_then(|a| a.get(id))
            .ok_or_else(|| usage(format!("{}: no cycle with id {id}", path.display())))?;
        let codes = entry["regions"]
            .as_array()
            .ok_or_else(|| parse(format!("{}: cycle {id} has no regions", path.display())))?
            .iter()
            .map(|r| r.as_str().unwrap_or_default().to_string())
            .collect::<Vec<_>>()
            .join(",");
        return solve_cycle_candidate(model, &parse_regions(&codes)?).map_err(numerical);
    }
    let saddles: Vec<_> = find_cycles(model, max_period, 100_000, seed).into_iter().filter(|c| c.is_saddle()).collect();
    let n = saddles.len();
    saddles
        .into_iter()
        .nth(id)
        .ok_or_else(|| CliError { code: EXIT_NUMERICAL, message: format!("saddle {id} not found ({n} saddles up to period {max_period})") })
}

fn homoclinic(common: &Common, saddle: SaddleArg, max_return_time: usize) -> CliResult<()> {
    let l = load(common)?;
    let map = l
        .model
        .as_map2d()
        .ok_or_else(|| usage(format!("homoclinic needs a general-2d model, got {}", l.model.variant())))?;
    let side = match saddle {
        SaddleArg::Left => Some(Side::Left),
        SaddleArg::Right => Some(Side::Right),
        SaddleArg::Auto => [Side::Left, Side::Right].into_iter().find(|s| saddle_2d(map, *s).is_ok()),
    };
    let mut v = match side {
        Some(side) => {
            let report = homoclinic_analysis(map, side, max_return_time).map_err(numerical)?;
            serde_json::to_value(&report).expect("report serializes")
        }
        // without a saddle there is nothing to intersect
        None => json!({ "verdict": "none-within-budget", "reason": "neither fixed point is an admissible saddle" }),
    };
    v["provenance"] = l.prov.json();
    let mut art = Artifacts::default();
    art.add_json("homoclinic.json", &v);
    commit(art, &common.out)
}

#[allow(clippy::too_many_arguments)]
fn basin(
    common: &Common,
    grid: &str,
    max_iters: usize,
    max_period: usize,
    trials: usize,
    threads: Option<usize>,
    tol_basin: f64,
    tol_radius: f64,
) -> CliResult<()> {
    let l = load(common)?;
    let g = floats(grid, ':', "--grid")?;
    if g.len() != 5 || g[4] < 1.0 || g[4].fract() != 0.0 {
        return Err(usage("--grid must be x0:x1:y0:y1:res with an integer res >= 1"));
    }
    if !(g[0] < g[1] && g[2] < g[3]) {
        return Err(usage("--grid requires x0 < x1 and y0 < y1"));
    }
    let res = g[4] as usize;
    let n = l.model.dim();
    let mut attractors: Vec<Attractor<f64>> = find_cycles(&l.model, max_period, 100_000, common.seed)
        .into_iter()
        .filter(|c| c.stability == Some(Stability::Attractor) && !c.is_virtual)
        .map(Attractor::Cycle)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    for _ in 0..trials {
        let mut z0 = DVector::zeros(n);
        z0[0] = rng.random_range(g[0]..g[1]);
        z0[1] = rng.random_range(g[2]..g[3]);
        let Ok(tr) = simulate(&l.model, &z0, 22_000, 2_000) else { continue };
        if tr.diverged_at.is_some() || tr.states.is_empty() {
            continue;
        }
        let last = tr.states.last().unwrap();
        let known = attractors.iter().any(|a| match a {
            Attractor::Cycle(c) => c.distance_to(last) < tol_basin,
            Attractor::Sampled { points, radius } => points.iter().any(|p| (p - last).norm() < *radius),
        });
        if known {
            continue;
        }
        let points = match detect_period(&tr.states, 64) {
            Some(k) => tr.states[tr.states.len() - k..].to_vec(),
            None => tr.states,
        };
        attractors.push(Attractor::Sampled { points, radius: tol_radius });
    }
    if attractors.is_empty() {
        return Err(CliError { code: EXIT_NUMERICAL, message: "no attractor found".into() });
    }
    let mut spec = BasinSpec::new([g[0], g[2]], [g[1], g[3]], [res, res], max_iters);
    spec.tol = tol_basin;
    spec.threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map(|t| t.get()).unwrap_or(1)).max(1);
    let grid = basin_grid(&l.model, &attractors, &spec).map_err(numerical)?;
    let described: Vec<Value> = attractors
        .iter()
        .enumerate()
        .map(|(i, a)| match a {
            Attractor::Cycle(c) => json!({ "label": i, "kind": "cycle", "cycle": cycle_json(i, c) }),
            Attractor::Sampled { points, radius } => json!({
                "label": i, "kind": "sampled", "samples": points.len(), "radius": radius,
                "first": vec_json(&points[0]),
            }),
        })
        .collect();
    let mut csv = grid.to_csv();
    csv.push_str(&l.prov.csv_footer());
    let labels: Vec<String> = grid.distinct_labels().iter().map(|b| b.to_string()).collect();
    let mut art = Artifacts::default();
    art.add("basin.csv", csv);
    art.add_json(
        "basin.json",
        &json!({
            "grid": { "lower": [g[0], g[2]], "upper": [g[1], g[3]], "resolution": res, "max_iters": max_iters },
            "attractors": described,
            "labels_present": labels,
            "boundary_cells": grid.boundary_cells().len(),
            "provenance": l.prov.json(),
        }),
    );
    commit(art, &common.out)
}

/// Trajectory CSV: one header row, one state per line, `#` comments.
fn read_trajectory(path: &Path) -> CliResult<Vec<DVector<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| parse(format!("{}: {e}", path.display())))?;
        let v = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| parse(format!("{}: row {} is not numeric", path.display(), i + 1)))?;
        out.push(DVector::from_vec(v));
    }
    Ok(out)
}
