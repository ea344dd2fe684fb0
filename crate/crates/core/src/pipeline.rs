//! Sweep driver behind the command-line frontend: solves or loads the
//! eigenstates of every `(β, g)` point, evaluates the requested observables
//! and writes one CSV per target plus a JSON manifest.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{sha256_hex, Cache, CacheKey, StateSet};
use crate::config::{CachePolicy, Emit, Point, RunConfig, MAX_STATE};
use crate::eigensolve::{
    ground_state_3d, lowest_eigenstates, solve_1d, StateDiagnostics, DEGENERACY_TOL,
};
use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::hamiltonians::{build_h1b, build_if_hamiltonian, build_relative_cmf, cm_solution, Frame};
use crate::meanfield::{
    effective_atom_potential, effective_ground_orbital, effective_ion_potential, smf_solve_if,
    Density1D, DensitySource, SmfOptions,
};
use crate::observables::{
    bunching_probability, contact_density, fidelity, lab_densities_from_if,
    lab_energy_components, mean_separations, number_state_overlaps, two_body_density,
    LabDensities, NumberState,
};
use crate::potentials::ModelParams;

pub const SOFTWARE: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

/// States solved per relative-frame point, independent of the rows emitted.
pub const RELATIVE_STATES: usize = MAX_STATE + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateSource {
    Solved,
    /// Loaded from the on-disk cache.
    Cache,
    /// Already in memory from earlier in the same run.
    Memory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEvent {
    pub frame: String,
    pub beta: f64,
    pub g: f64,
    pub hash: String,
    pub source: StateSource,
    /// Set when a cache file existed but could not be used.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Eigenstates by point, memoised in memory and backed by the disk cache.
pub struct StateStore {
    cfg: RunConfig,
    cache: Cache,
    memo: Mutex<HashMap<String, Arc<StateSet>>>,
    orbitals: OnceLock<std::result::Result<Vec<Vec<f64>>, String>>,
    solves: AtomicUsize,
    hits: AtomicUsize,
    verbose: bool,
}

impl StateStore {
    pub fn new(cfg: &RunConfig, cache: Cache) -> Self {
        StateStore {
            cfg: cfg.clone(),
            cache,
            memo: Mutex::new(HashMap::new()),
            orbitals: OnceLock::new(),
            solves: AtomicUsize::new(0),
            hits: AtomicUsize::new(0),
            verbose: false,
        }
    }

    pub fn verbose(mut self, on: bool) -> Self {
        self.verbose = on;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn params(&self, pt: Point) -> ModelParams {
        self.cfg.model.with_beta(pt.beta).with_g(pt.g)
    }

    /// Eigensolves performed so far.
    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Sets loaded from disk so far.
    pub fn cache_hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    fn fetch<S: Serialize>(
        &self,
        key: CacheKey<S>,
        pt: Point,
        events: &mut Vec<CacheEvent>,
        solve: impl FnOnce() -> Result<StateSet>,
    ) -> Result<Arc<StateSet>> {
        let hash = key.hash();
        let mut event = CacheEvent {
            frame: key.frame.tag().to_string(),
            beta: pt.beta,
            g: pt.g,
            hash: hash.clone(),
            source: StateSource::Memory,
            note: None,
        };
        if let Some(set) = self.memo.lock().unwrap().get(&hash) {
            events.push(event);
            return Ok(set.clone());
        }
        if self.cfg.cache_policy == CachePolicy::Reuse {
            match self.cache.load(&key) {
                Ok(Some(set)) => {
                    self.hits.fetch_add(1, Ordering::Relaxed);
                    let set = Arc::new(set);
                    self.memo.lock().unwrap().insert(hash, set.clone());
                    event.source = StateSource::Cache;
                    events.push(event);
                    return Ok(set);
                }
                Ok(None) => {}
                Err(e) => event.note = Some(e.to_string()),
            }
        }
        let t = Instant::now();
        let set = solve()?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        if self.verbose {
            eprintln!(
                "solved {} at beta={} g={} in {:.1?}",
                key.frame.tag(),
                pt.beta,
                pt.g,
                t.elapsed()
            );
        }
        if let Err(e) = self.cache.store(&key, &set) {
            let note = format!("not cached: {e}");
            event.note = Some(match event.note.take() {
                Some(n) => format!("{n}; {note}"),
                None => note,
            });
        }
        let set = Arc::new(set);
        self.memo.lock().unwrap().insert(hash, set.clone());
        event.source = StateSource::Solved;
        events.push(event);
        Ok(set)
    }

    /// The five lowest relative-frame eigenstates at `pt`.
    pub fn relative_states(&self, pt: Point, events: &mut Vec<CacheEvent>) -> Result<Arc<StateSet>> {
        let p = self.params(pt);
        let grid = self.cfg.grids.cmf;
        let opts = self.cfg.solver.relative;
        let key = CacheKey::new(Frame::CmfRelative, p, vec![grid, grid], RELATIVE_STATES, opts);
        self.fetch(key, pt, events, || {
            let op = build_relative_cmf(grid, &p)?;
            let (rec, states) = lowest_eigenstates(&op, RELATIVE_STATES, &opts)?;
            Ok(StateSet {
                frame: Frame::CmfRelative,
                grids: rec.grids,
                energies: rec.eigenvalues,
                diagnostics: rec.diagnostics,
                states,
            })
        })
    }

    /// Ion-frame ground state at `pt` (needs `β > 0`).
    pub fn ion_frame_ground(&self, pt: Point, events: &mut Vec<CacheEvent>) -> Result<Arc<StateSet>> {
        let p = self.params(pt);
        let (gi, gr) = (self.cfg.grids.ion, self.cfg.grids.ion_rel);
        let opts = self.cfg.solver.ion_frame;
        let key = CacheKey::new(Frame::IonFrame, p, vec![gi, gr, gr], 1, opts);
        self.fetch(key, pt, events, || {
            let op = build_if_hamiltonian(gi, gr, &p)?;
            let (psi, rep) = ground_state_3d(&op, &opts)?;
            Ok(StateSet {
                frame: Frame::IonFrame,
                grids: psi.grids.clone(),
                energies: vec![rep.energy],
                diagnostics: vec![StateDiagnostics {
                    residual: rep.residual,
                    iterations: rep.relaxation_steps + rep.polish_matvecs,
                }],
                states: vec![psi],
            })
        })
    }

    /// The four lowest single-particle orbitals next to a static ion, on the
    /// relative-frame grid.
    pub fn orbitals(&self) -> Result<&[Vec<f64>]> {
        let out = self.orbitals.get_or_init(|| {
            let p = self.cfg.model.with_beta(0.0).with_g(0.0);
            build_h1b(self.cfg.grids.cmf, &p)
                .and_then(|op| solve_1d(&op))
                .map(|(_, mut v)| {
                    v.truncate(4);
                    v
                })
                .map_err(|e| e.to_string())
        });
        out.as_deref()
            .map_err(|e| Error::Unsupported(format!("single-particle orbitals: {e}")))
    }
}

/// Shortest round-trip decimal form; empty for missing values.
fn num(x: f64) -> String {
    if x.is_finite() {
        serde_json::to_string(&x).unwrap()
    } else {
        x.to_string()
    }
}

/// Column layout of one emit target.
pub fn header(emit: Emit) -> Vec<String> {
    let mut h: Vec<String> = vec!["point.beta".into(), "point.g".into()];
    let per_state = !matches!(emit, Emit::Effective | Emit::Densities);
    if per_state {
        h.push("state".into());
    }
    let cols: Vec<String> = match emit {
        Emit::Spectrum => [
            "spectrum.relative",
            "spectrum.total",
            "spectrum.parity",
            "spectrum.cluster",
            "solver.residual",
            "solver.iterations",
        ]
        .map(String::from)
        .to_vec(),
        Emit::Separations => [
            "separation.d_aa",
            "separation.d_ai",
            "separation.bunching",
            "separation.contact",
        ]
        .map(String::from)
        .to_vec(),
        Emit::Energies => [
            "energy.K_A",
            "energy.P_A",
            "energy.V_AA",
            "energy.V_AI",
            "energy.K_I",
            "energy.P_I",
            "energy.sum",
            "energy.eigenvalue",
        ]
        .map(String::from)
        .to_vec(),
        Emit::Overlaps => NumberState::two_boson_basis()
            .iter()
            .map(|s| format!("overlap.{}{}{}{}", s.0[0], s.0[1], s.0[2], s.0[3]))
            .chain(std::iter::once("overlap.total".to_string()))
            .collect(),
        Emit::Fidelity => [
            "fidelity.mobile_free",
            "fidelity.static_free",
            "fidelity.static_same_g",
        ]
        .map(String::from)
        .to_vec(),
        Emit::Effective => [
            "effective.source",
            "effective.species",
            "grid.z",
            "effective.potential",
            "effective.orbital",
            "effective.orbital_energy",
        ]
        .map(String::from)
        .to_vec(),
        Emit::Densities => ["density.source", "density.species", "grid.z", "density.value"]
            .map(String::from)
            .to_vec(),
    };
    h.extend(cols);
    h.push("status".into());
    h
}

fn status_of(e: &Error) -> String {
    format!("error: {e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IonFrameSummary {
    pub energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Per-point entry of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub beta: f64,
    pub g: f64,
    pub params_sha256: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
    pub eigenvalues: Vec<f64>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ion_frame: Option<IonFrameSummary>,
    pub cache: Vec<CacheEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Software {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub software: Software,
    pub command: String,
    pub config_sha256: String,
    pub config: RunConfig,
    pub cache_root: PathBuf,
    pub eigensolves: usize,
    pub cache_hits: usize,
    pub points: Vec<PointRecord>,
    pub files: Vec<FileRecord>,
}

impl Manifest {
    pub fn convergence_failures(&self) -> usize {
        self.points
            .iter()
            .filter(|p| p.error.as_deref().is_some_and(|e| e.starts_with("no convergence")))
            .count()
    }

    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }
}

/// What one point contributes: its manifest record and rows per target.
struct PointOutput {
    record: PointRecord,
    rows: Vec<(Emit, Vec<String>)>,
}

struct PointContext<'a> {
    store: &'a StateStore,
    pt: Point,
    p: ModelParams,
    events: Vec<CacheEvent>,
}

impl PointContext<'_> {
    fn prefix(&self) -> Vec<String> {
        vec![num(self.pt.beta), num(self.pt.g)]
    }

    fn state_row(&self, k: usize, values: Result<Vec<String>>, width: usize) -> Vec<String> {
        let mut row = self.prefix();
        row.push(k.to_string());
        match values {
            Ok(v) => {
                row.extend(v);
                row.push("ok".into());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), width));
                row.push(status_of(&e));
            }
        }
        row
    }
}

fn failed_rows(emit: Emit, pt: Point, e: &Error) -> Vec<String> {
    let h = header(emit);
    let mut row = vec![num(pt.beta), num(pt.g)];
    row.extend(std::iter::repeat_n(String::new(), h.len() - 3));
    row.push(status_of(e));
    row
}

fn normalised(grid: Grid1D, mut values: Vec<f64>) -> Result<Density1D> {
    let s = values.iter().sum::<f64>() * grid.spacing();
    if !(s > 0.0) {
        return Err(Error::ZeroNorm("empty density".into()));
    }
    values.iter_mut().for_each(|v| *v /= s);
    Density1D::new(grid, values)
}

fn density_rows(ctx: &PointContext, source: &str, d: &LabDensities) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (species, grid, values) in [("atom", d.atom_grid, &d.atom), ("ion", d.ion_grid, &d.ion)] {
        for (z, v) in grid.points().into_iter().zip(values.iter()) {
            let mut row = ctx.prefix();
            row.extend([source.into(), species.into(), num(z), num(*v), "ok".into()]);
            rows.push(row);
        }
    }
    rows
}

fn effective_rows(ctx: &PointContext, source: DensitySource, d: &LabDensities) -> Result<Vec<Vec<String>>> {
    let tag = match source {
        DensitySource::Smf => "smf",
        DensitySource::ExactIf => "exact-if",
        DensitySource::Supplied => "supplied",
    };
    let rho_ion = normalised(d.ion_grid, d.ion.clone())?;
    let rho_atom = normalised(d.atom_grid, d.atom.clone())?;
    let pots = [
        ("atom", effective_atom_potential(&rho_ion, d.atom_grid, &ctx.p, source)?),
        ("ion", effective_ion_potential(&rho_atom, d.ion_grid, &ctx.p, source)?),
    ];
    let mut rows = Vec::new();
    for (species, pot) in pots {
        let (orbital, energy) = effective_ground_orbital(&pot, &ctx.p)?;
        for ((z, v), o) in pot.grid.points().into_iter().zip(&pot.values).zip(&orbital) {
            let mut row = ctx.prefix();
            row.extend([
                tag.into(),
                species.into(),
                num(z),
                num(*v),
                num(*o),
                num(energy),
                "ok".into(),
            ]);
            rows.push(row);
        }
    }
    Ok(rows)
}

fn compute_point(store: &StateStore, pt: Point) -> PointOutput {
    let cfg = store.config();
    let p = store.params(pt);
    let mut ctx = PointContext {
        store,
        pt,
        p,
        events: Vec::new(),
    };
    let mut record = PointRecord {
        beta: pt.beta,
        g: pt.g,
        params_sha256: sha256_hex(&serde_json::to_vec(&p).unwrap()),
        status: "ok".into(),
        error: None,
        eigenvalues: Vec::new(),
        residuals: Vec::new(),
        iterations: Vec::new(),
        ion_frame: None,
        cache: Vec::new(),
    };
    let mut rows: Vec<(Emit, Vec<String>)> = Vec::new();
    let fail = |record: &mut PointRecord, rows: &mut Vec<(Emit, Vec<String>)>, e: &Error| {
        record.status = "error".into();
        record.error.get_or_insert_with(|| e.to_string());
        for &emit in &cfg.emit {
            if !rows.iter().any(|(t, _)| *t == emit) {
                rows.push((emit, failed_rows(emit, pt, e)));
            }
        }
    };

    let set = match store.relative_states(pt, &mut ctx.events) {
        Ok(s) => s,
        Err(e) => {
            fail(&mut record, &mut rows, &e);
            record.cache = ctx.events;
            return PointOutput { record, rows };
        }
    };
    record.eigenvalues = set.energies.clone();
    record.residuals = set.diagnostics.iter().map(|d| d.residual).collect();
    record.iterations = set.diagnostics.iter().map(|d| d.iterations).collect();
    let shift = if pt.beta > 0.0 {
        cm_solution(&p).map(|c| c.energy).unwrap_or(f64::NAN)
    } else {
        0.0
    };

    let wants = |e: Emit| cfg.emit.contains(&e);
    let refs = if wants(Emit::Fidelity) {
        let r = [
            Point { beta: 1.0, g: 0.0 },
            Point { beta: 0.0, g: 0.0 },
            Point { beta: 0.0, g: pt.g },
        ]
        .map(|q| store.relative_states(q, &mut ctx.events));
        Some(r)
    } else {
        None
    };

    for &k in &cfg.sweep.states {
        let psi = &set.states[k];
        for &emit in &cfg.emit {
            let width = header(emit).len() - 4;
            let values: Result<Vec<String>> = match emit {
                Emit::Spectrum => {
                    let cluster = cluster_index(&set.energies, k);
                    Ok(vec![
                        num(set.energies[k]),
                        num(set.energies[k] + shift),
                        psi.parity.to_string(),
                        cluster.to_string(),
                        num(set.diagnostics[k].residual),
                        set.diagnostics[k].iterations.to_string(),
                    ])
                }
                Emit::Separations => two_body_density(psi).and_then(|rho2| {
                    let (d_aa, d_ai) = mean_separations(&rho2)?;
                    Ok(vec![
                        num(d_aa),
                        num(d_ai),
                        num(bunching_probability(&rho2)?),
                        num(contact_density(psi, &p)?),
                    ])
                }),
                Emit::Energies => lab_energy_components(psi, &p).map(|b| {
                    let mut v: Vec<String> = b.components().iter().map(|(_, x)| num(*x)).collect();
                    v.push(num(b.total));
                    v.push(num(set.energies[k] + shift));
                    v
                }),
                Emit::Overlaps => store
                    .orbitals()
                    .and_then(|orb| number_state_overlaps(psi, orb))
                    .map(|ov| {
                        let mut v: Vec<String> = ov.entries.iter().map(|(_, w)| num(*w)).collect();
                        v.push(num(ov.total()));
                        v
                    }),
                Emit::Fidelity => {
                    let refs = refs.as_ref().unwrap();
                    refs.iter()
                        .map(|r| match r {
                            Ok(s) => fidelity(psi, &s.states[0]).map(|f| num(f)),
                            Err(e) => Err(Error::Unsupported(format!("reference state: {e}"))),
                        })
                        .collect()
                }
                Emit::Effective | Emit::Densities => continue,
            };
            rows.push((emit, ctx.state_row(k, values, width)));
        }
    }

    if cfg.needs_ion_frame() {
        match ion_frame_rows(&mut ctx) {
            Ok((summary, extra)) => {
                record.ion_frame = Some(summary);
                rows.extend(extra);
            }
            Err(e) => {
                record.status = "error".into();
                record.error = Some(e.to_string());
                for &emit in cfg.emit.iter().filter(|e| e.needs_ion_frame()) {
                    rows.push((emit, failed_rows(emit, pt, &e)));
                }
            }
        }
    }
    record.cache = ctx.events;
    PointOutput { record, rows }
}

fn ion_frame_rows(ctx: &mut PointContext) -> Result<(IonFrameSummary, Vec<(Emit, Vec<String>)>)> {
    let cfg = ctx.store.config();
    let set = ctx.store.ion_frame_ground(ctx.pt, &mut ctx.events)?;
    let summary = IonFrameSummary {
        energy: set.energies[0],
        residual: set.diagnostics[0].residual,
        iterations: set.diagnostics[0].iterations,
    };
    let exact = lab_densities_from_if(&set.states[0])?;
    let smf_opts = SmfOptions {
        solver: cfg.solver.relative,
        ..SmfOptions::default()
    };
    let smf = smf_solve_if(cfg.grids.ion, cfg.grids.ion_rel, &ctx.p, &smf_opts)?;
    let smf_d = lab_densities_from_if(&smf.product())?;
    let mut rows = Vec::new();
    if cfg.emit.contains(&Emit::Densities) {
        for (src, d) in [("exact-if", &exact), ("smf", &smf_d)] {
            rows.extend(density_rows(ctx, src, d).into_iter().map(|r| (Emit::Densities, r)));
        }
    }
    if cfg.emit.contains(&Emit::Effective) {
        for (src, d) in [(DensitySource::ExactIf, &exact), (DensitySource::Smf, &smf_d)] {
            rows.extend(effective_rows(ctx, src, d)?.into_iter().map(|r| (Emit::Effective, r)));
        }
    }
    Ok((summary, rows))
}

fn cluster_index(energies: &[f64], k: usize) -> usize {
    let mut c = 0;
    for i in 1..=k {
        if (energies[i] - energies[i - 1]).abs() >= DEGENERACY_TOL {
            c += 1;
        }
    }
    c
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(r).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    fs::write(path, &bytes)?;
    Ok(bytes)
}

/// Runs every point, writes `<emit>.csv` files and the manifest into the
/// output directory. Per-point failures become error rows; only invalid
/// configuration and I/O errors abort the run.
pub fn run(cfg: &RunConfig, points: &[Point], cache: Cache, command: &str, verbose: bool) -> Result<Manifest> {
    cfg.validate(points)?;
    let cache_root = cache.root().to_path_buf();
    let store = StateStore::new(cfg, cache).verbose(verbose);
    let outputs: Vec<PointOutput> = points.par_iter().map(|&pt| compute_point(&store, pt)).collect();

    fs::create_dir_all(&cfg.output_dir)?;
    let mut files = Vec::new();
    let mut emits = cfg.emit.clone();
    emits.dedup();
    for emit in emits {
        let rows: Vec<Vec<String>> = outputs
            .iter()
            .flat_map(|o| o.rows.iter().filter(|(e, _)| *e == emit).map(|(_, r)| r.clone()))
            .collect();
        let name = format!("{}.csv", emit.name());
        let bytes = write_csv(&cfg.output_dir.join(&name), &header(emit), &rows)?;
        files.push(FileRecord {
            path: name,
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            rows: rows.len(),
        });
    }
    let config_text = cfg.to_toml_string()?;
    let manifest = Manifest {
        software: Software {
            name: SOFTWARE.into(),
            version: VERSION.into(),
        },
        command: command.into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: cfg.clone(),
        cache_root,
        eigensolves: store.solves(),
        cache_hits: store.cache_hits(),
        points: outputs.into_iter().map(|o| o.record).collect(),
        files,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(cfg.output_dir.join(MANIFEST), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn small_config(dir: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        c.grids.cmf = make_grid(4.0, 64).unwrap();
        c.output_dir = dir.join("out");
        c.sweep.g = vec![0.0, 2.0];
        c.sweep.beta = vec![0.0];
        c
    }

    #[test]
    fn headers_are_namespaced_and_unique() {
        for e in Emit::ALL {
            let h = header(e);
            assert_eq!(h[0], "point.beta");
            assert_eq!(h.last().unwrap(), "status");
            let mut s = h.clone();
            s.sort();
            s.dedup();
            assert_eq!(s.len(), h.len());
            for c in &h[2..h.len() - 1] {
                assert!(c == "state" || c.contains('.'), "{c}");
            }
        }
        assert_eq!(header(Emit::Overlaps)[3], "overlap.2000");
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, -25.564506529811005, 1e-300, 3.0, 0.1 + 0.2] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn sweep_writes_csv_and_reuses_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        let cache = Cache::new(dir.path().join("cache"));
        let m1 = run(&cfg, &cfg.sweep_points(), cache.clone(), "test", false).unwrap();
        // two points plus the (β=1, g=0) fidelity reference
        assert_eq!(m1.eigensolves, 3);
        assert_eq!(m1.cache_hits, 0);
        assert_eq!(m1.files.len(), 5);
        let spectrum = fs::read_to_string(cfg.output_dir.join("spectrum.csv")).unwrap();
        assert_eq!(spectrum.lines().count(), 1 + 2 * 5);
        let before: Vec<Vec<u8>> = m1
            .files
            .iter()
            .map(|f| fs::read(cfg.output_dir.join(&f.path)).unwrap())
            .collect();
        for (f, b) in m1.files.iter().zip(&before) {
            assert_eq!(f.sha256, sha256_hex(b));
        }
        let m2 = run(&cfg, &cfg.sweep_points(), cache, "test", false).unwrap();
        assert_eq!(m2.eigensolves, 0);
        assert_eq!(m2.cache_hits, 3);
        for (f, b) in m2.files.iter().zip(&before) {
            assert_eq!(&fs::read(cfg.output_dir.join(&f.path)).unwrap(), b);
        }
        assert_eq!(m1.files, m2.files);
    }

    #[test]
    fn empty_emit_list_writes_manifest_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.emit.clear();
        cfg.sweep.g = vec![0.0];
        let m = run(&cfg, &cfg.sweep_points(), Cache::new(dir.path().join("c")), "t", false).unwrap();
        assert!(m.files.is_empty());
        let names: Vec<_> = fs::read_dir(&cfg.output_dir)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names, vec![std::ffi::OsString::from(MANIFEST)]);
    }

    #[test]
    fn non_convergence_becomes_an_error_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.solver.relative.lanczos.max_matvecs = 30;
        cfg.sweep.g = vec![1.0];
        cfg.emit = vec![Emit::Spectrum, Emit::Separations];
        let m = run(&cfg, &cfg.sweep_points(), Cache::new(dir.path().join("c")), "t", false).unwrap();
        assert_eq!(m.convergence_failures(), 1);
        let text = fs::read_to_string(cfg.output_dir.join("spectrum.csv")).unwrap();
        let mut lines = text.lines();
        lines.next();
        let row = lines.next().unwrap();
        assert!(row.starts_with("0.0,1.0,,"), "{row}");
        assert!(row.contains("error: no convergence"), "{row}");
    }

    #[test]
    fn config_errors_abort_before_solving() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path());
        cfg.emit.push(Emit::Effective);
        let e = run(&cfg, &cfg.sweep_points(), Cache::new(dir.path().join("c")), "t", false).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(!cfg.output_dir.exists());
    }
}
