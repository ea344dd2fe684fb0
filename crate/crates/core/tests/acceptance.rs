//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Eigenstates go through the same disk cache as the CLI, rooted at
//! `$ATOMION_CACHE` or under the cargo target directory, so a rerun only
//! repeats the observables.

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use atomion::cache::{Cache, StateSet, CACHE_ENV};
use atomion::config::{Point, RunConfig};
use atomion::eigensolve::solve_1d;
use atomion::grid::make_grid;
use atomion::hamiltonians::{build_h1b, cm_solution};
use atomion::meanfield::{smf_solve_if, SmfOptions};
use atomion::observables::{
    bunching_probability, contact_density, fidelity, lab_energy_components,
    lab_energy_components_if, mean_separations, number_state_overlaps, two_body_density,
    EnergyBreakdown,
};
use atomion::pipeline::StateStore;
use atomion::Result;

struct Ctx {
    coarse: StateStore,
    fine: StateStore,
}

impl Ctx {
    fn new() -> Self {
        let root = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache"));
        let cfg = RunConfig::default();
        let mut fine_cfg = cfg.clone();
        fine_cfg.grids.cmf = make_grid(cfg.grids.cmf.extent(), 2 * cfg.grids.cmf.len()).unwrap();
        Ctx {
            coarse: StateStore::new(&cfg, Cache::new(&root)),
            fine: StateStore::new(&fine_cfg, Cache::new(&root)),
        }
    }

    fn cfg(&self) -> &RunConfig {
        self.coarse.config()
    }

    fn rel(&self, beta: f64, g: f64) -> Result<Arc<StateSet>> {
        self.coarse.relative_states(Point { beta, g }, &mut Vec::new())
    }

    fn ion(&self, beta: f64, g: f64) -> Result<Arc<StateSet>> {
        self.coarse.ion_frame_ground(Point { beta, g }, &mut Vec::new())
    }

    fn e_r(&self, beta: f64) -> Result<f64> {
        if beta > 0.0 {
            Ok(cm_solution(&self.cfg().model.with_beta(beta))?.energy)
        } else {
            Ok(0.0)
        }
    }

    fn orbital_energies(&self) -> Result<Vec<f64>> {
        let p = self.cfg().model.with_beta(0.0).with_g(0.0);
        Ok(solve_1d(&build_h1b(self.cfg().grids.cmf, &p)?)?.0)
    }
}

type Outcome = Result<(bool, String)>;

fn bound_states(ctx: &Ctx) -> Outcome {
    let grid = ctx.cfg().grids.cmf;
    let p = ctx.cfg().model.with_beta(0.0).with_g(0.0);
    let (e, v) = solve_1d(&build_h1b(grid, &p)?)?;
    let negative = e.iter().filter(|&&x| x < 0.0).count();
    let fine = make_grid(grid.extent(), 32 * grid.len())?;
    let z = fine.points();
    let mut peaks = Vec::new();
    for orb in &v[..2] {
        let f = grid.resample_onto(orb, &fine)?;
        let k = (0..z.len())
            .filter(|&k| z[k] > 0.0)
            .max_by(|&a, &b| f[a].abs().total_cmp(&f[b].abs()))
            .unwrap();
        peaks.push(z[k]);
    }
    let ok = negative == 2 && peaks.iter().all(|z| (z - 0.3).abs() <= 0.05);
    Ok((
        ok,
        format!("{negative} negative levels, |φ0|² peak at {:.4}, |φ1|² peak at {:.4}", peaks[0], peaks[1]),
    ))
}

fn separable_limit(ctx: &Ctx) -> Outcome {
    let eps = ctx.orbital_energies()?;
    let mut expected = [
        2.0 * eps[0],
        eps[0] + eps[1],
        2.0 * eps[1],
        eps[0] + eps[2],
        eps[0] + eps[3],
    ];
    expected.sort_by(f64::total_cmp);
    let set = ctx.rel(0.0, 0.0)?;
    let err = set
        .energies
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((err < 1e-8, format!("max deviation {err:.2e}")))
}

fn tonks_limit(ctx: &Ctx) -> Outcome {
    let eps = ctx.orbital_energies()?;
    let tg = eps[0] + eps[1];
    let set = ctx.rel(0.0, 80.0)?;
    let rel = (set.energies[0] - tg).abs() / tg.abs();
    let (d_aa, _) = mean_separations(&two_body_density(&set.states[0])?)?;
    Ok((
        rel < 0.02 && (d_aa - 0.6).abs() <= 0.05,
        format!(
            "E0 = {:.5} vs ε0+ε1 = {tg:.5} ({:.2}%), d_AA = {d_aa:.4}",
            set.energies[0],
            100.0 * rel
        ),
    ))
}

fn monotonicity(ctx: &Ctx) -> Outcome {
    let gs = &ctx.cfg().sweep.g;
    let mut prev: Option<(f64, Vec<f64>)> = None;
    let mut bad = Vec::new();
    for &g in gs {
        let e = ctx.rel(0.0, g)?.energies.clone();
        if let Some((g0, e0)) = &prev {
            for k in 0..e.len() {
                if e[k] < e0[k] - 1e-9 {
                    bad.push(format!("state {k} drops from g={g0} to g={g}"));
                }
            }
        }
        prev = Some((g, e));
    }
    let h = 1e-2;
    let mut worst: f64 = 0.0;
    for g in [1.0, 5.0, 10.0] {
        let (lo, mid, hi) = (ctx.rel(0.0, g - h)?, ctx.rel(0.0, g)?, ctx.rel(0.0, g + h)?);
        let p = ctx.cfg().model.with_beta(0.0).with_g(g);
        for k in 0..mid.energies.len() {
            let slope = (hi.energies[k] - lo.energies[k]) / (2.0 * h);
            let c = contact_density(&mid.states[k], &p)?;
            worst = worst.max((slope - c).abs() / c.abs());
        }
    }
    let ok = bad.is_empty() && worst < 0.05;
    let mut detail = format!(
        "{} sweep points, worst Hellmann-Feynman mismatch {:.3}%",
        gs.len(),
        100.0 * worst
    );
    if !bad.is_empty() {
        detail.push_str(&format!("; {}", bad.join(", ")));
    }
    Ok((ok, detail))
}

fn mobility_shift(ctx: &Ctx) -> Outcome {
    let e_r = ctx.e_r(1.0)?;
    let mut min_shift = f64::INFINITY;
    for &g in &ctx.cfg().sweep.g {
        let (s, m) = (ctx.rel(0.0, g)?, ctx.rel(1.0, g)?);
        for k in 0..s.energies.len() {
            min_shift = min_shift.min(m.energies[k] + e_r - s.energies[k]);
        }
    }
    Ok((min_shift > 0.0, format!("smallest total-energy shift {min_shift:.4}")))
}

fn frame_equivalence(ctx: &Ctx) -> Outcome {
    let e_r = ctx.e_r(1.0)?;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for g in [0.0, 1.0] {
        let cmf = ctx.rel(1.0, g)?.energies[0] + e_r;
        let ion = ctx.ion(1.0, g)?.energies[0];
        let rel = (ion - cmf).abs() / cmf.abs();
        worst = worst.max(rel);
        parts.push(format!("g={g}: IF {ion:.6} vs {cmf:.6}"));
    }
    Ok((worst < 0.01, format!("{}, worst {:.2e}", parts.join(", "), worst)))
}

fn energy_identity(ctx: &Ctx) -> Outcome {
    let mut worst: f64 = 0.0;
    for beta in [0.0, 1.0] {
        let e_r = ctx.e_r(beta)?;
        for g in [0.0, 1.0, 10.0] {
            let set = ctx.rel(beta, g)?;
            let p = ctx.cfg().model.with_beta(beta).with_g(g);
            for (k, psi) in set.states.iter().enumerate() {
                let b = lab_energy_components(psi, &p)?;
                worst = worst.max((b.total - set.energies[k] - e_r).abs());
            }
        }
    }
    let g = 1.0;
    let p = ctx.cfg().model.with_beta(1.0).with_g(g);
    let cmf = lab_energy_components(&ctx.rel(1.0, g)?.states[0], &p)?;
    let ifr = lab_energy_components_if(&ctx.ion(1.0, g)?.states[0], &p)?;
    let route = component_mismatch(&cmf, &ifr);
    Ok((
        worst < 1e-6 && route.0 < 0.01,
        format!(
            "max |ΣE_c - E| = {worst:.2e}; worst route mismatch {:.3}% in {}",
            100.0 * route.0,
            route.1
        ),
    ))
}

fn component_mismatch(a: &EnergyBreakdown, b: &EnergyBreakdown) -> (f64, &'static str) {
    a.components()
        .iter()
        .zip(b.components())
        .map(|((name, x), (_, y))| {
            let scale = x.abs().max(y.abs());
            let rel = if scale > 0.0 { (x - y).abs() / scale } else { 0.0 };
            (rel, *name)
        })
        .fold((0.0, "-"), |acc, c| if c.0 > acc.0 { c } else { acc })
}

fn bunching(ctx: &Ctx) -> Outcome {
    let free = ctx.rel(0.0, 0.0)?;
    let p0 = bunching_probability(&two_body_density(&free.states[0])?)?;
    let p1 = bunching_probability(&two_body_density(&free.states[1])?)?;
    let strong = ctx.rel(0.0, 10.0)?;
    let p10 = bunching_probability(&two_body_density(&strong.states[0])?)?;
    Ok((
        (p0 - 0.5).abs() <= 1e-3 && p1 > 0.99 && p10 < 0.05,
        format!("ground g=0 {p0:.5}, first excited g=0 {p1:.5}, ground g=10 {p10:.5}"),
    ))
}

fn number_states(ctx: &Ctx) -> Outcome {
    let orbitals = ctx.coarse.orbitals()?;
    let ground = number_state_overlaps(&ctx.rel(0.0, 0.0)?.states[0], orbitals)?;
    let w2000 = ground.weight([2, 0, 0, 0]).unwrap_or(0.0);
    let mut w = Vec::new();
    for g in [0.0, 10.0, 40.0] {
        let o = number_state_overlaps(&ctx.rel(1.0, g)?.states[1], orbitals)?;
        w.push(o.weight([0, 1, 1, 0]).unwrap_or(0.0));
    }
    let spread = w.iter().cloned().fold(f64::MIN, f64::max) - w.iter().cloned().fold(f64::MAX, f64::min);
    let ok = (w2000 - 1.0).abs() <= 1e-6
        && w.iter().all(|x| (x - 0.10).abs() <= 0.04)
        && spread <= 0.03;
    Ok((
        ok,
        format!(
            "|2,0,0,0⟩ weight {w2000:.8}; |0,1,1,0⟩ weight at g=0,10,40: {:.4}, {:.4}, {:.4}",
            w[0], w[1], w[2]
        ),
    ))
}

fn ion_localisation(ctx: &Ctx) -> Outcome {
    let mut k_i = Vec::new();
    let mut p_i = Vec::new();
    for g in [0.0, 1.0, 3.0, 10.0] {
        let p = ctx.cfg().model.with_beta(1.0).with_g(g);
        let b = lab_energy_components(&ctx.rel(1.0, g)?.states[0], &p)?;
        k_i.push(b.k_i);
        p_i.push(b.p_i);
    }
    let ok = k_i.windows(2).all(|w| w[1] > w[0]) && p_i.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" ");
    Ok((ok, format!("K_I {}; P_I {}", fmt(&k_i), fmt(&p_i))))
}

fn smf_invariance(ctx: &Ctx) -> Outcome {
    let cfg = ctx.cfg();
    let opts = SmfOptions::default();
    let mut ion_factor: Option<Vec<f64>> = None;
    let mut drift: f64 = 0.0;
    let mut gap = f64::INFINITY;
    for g in [0.0, 1.0, 10.0] {
        let p = cfg.model.with_beta(1.0).with_g(g);
        let smf = smf_solve_if(cfg.grids.ion, cfg.grids.ion_rel, &p, &opts)?;
        match &ion_factor {
            Some(f) => {
                drift = drift.max(f.iter().zip(&smf.ion).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            }
            None => ion_factor = Some(smf.ion.clone()),
        }
        gap = gap.min(smf.total - ctx.ion(1.0, g)?.energies[0]);
    }
    Ok((
        drift < 1e-10 && gap >= 0.0,
        format!("ion factor drift {drift:.1e}; smallest E_SMF - E_IF {gap:.5}"),
    ))
}

fn fidelity_ordering(ctx: &Ctx) -> Outcome {
    let g = 12.0;
    let psi = &ctx.rel(1.0, g)?.states[0];
    let refs = [
        ("mobile free", ctx.rel(1.0, 0.0)?),
        ("static free", ctx.rel(0.0, 0.0)?),
        ("static same g", ctx.rel(0.0, g)?),
    ];
    let mut f = Vec::new();
    for (name, set) in &refs {
        f.push((*name, fidelity(psi, &set.states[0])?));
    }
    let best = f.iter().cloned().fold(("", f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let detail = f
        .iter()
        .map(|(n, x)| format!("{n} {x:.4}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((best.0 == "static same g", detail))
}

fn grid_convergence(ctx: &Ctx) -> Outcome {
    let mut worst: (f64, f64, f64) = (0.0, 0.0, 0.0);
    for beta in [0.0, 1.0] {
        for g in [0.0, 1.0, 5.0, 10.0] {
            let pt = Point { beta, g };
            let a = ctx.coarse.relative_states(pt, &mut Vec::new())?;
            let b = ctx.fine.relative_states(pt, &mut Vec::new())?;
            for (x, y) in a.energies.iter().zip(&b.energies) {
                if (x - y).abs() > worst.0 {
                    worst = ((x - y).abs(), beta, g);
                }
            }
        }
    }
    Ok((
        worst.0 < 1e-4,
        format!(
            "largest change {:.2e} (beta={}, g={}) from {} to {} points",
            worst.0,
            worst.1,
            worst.2,
            ctx.cfg().grids.cmf.len(),
            ctx.fine.config().grids.cmf.len()
        ),
    ))
}

fn main() -> ExitCode {
    // Accept and ignore the libtest arguments cargo passes through.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let ctx = Ctx::new();
    let criteria: [(&str, fn(&Ctx) -> Outcome); 13] = [
        ("bound-state structure", bound_states),
        ("separable limit", separable_limit),
        ("Tonks-Girardeau limit", tonks_limit),
        ("monotonicity and Hellmann-Feynman", monotonicity),
        ("mobility shift", mobility_shift),
        ("frame equivalence", frame_equivalence),
        ("energy decomposition", energy_identity),
        ("bunching anchors", bunching),
        ("number-state anchors", number_states),
        ("ion localisation", ion_localisation),
        ("species mean field", smf_invariance),
        ("fidelity ordering", fidelity_ordering),
        ("grid convergence", grid_convergence),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = match f(&ctx) {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name}: {detail} [{:.1?}]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed()
        );
    }
    println!(
        "acceptance: {failed} failed; {} eigensolves, {} cache hits",
        ctx.coarse.solves() + ctx.fine.solves(),
        ctx.coarse.cache_hits() + ctx.fine.cache_hits()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
