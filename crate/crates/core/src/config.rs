//! Run configuration for the command-line frontend.
//!
//! A config is a TOML document; every table is optional and falls back to the
//! defaults below. Individual fields can be overridden after loading with
//! dotted keys (`model.g=3`, `grids.cmf.points=512`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::eigensolve::{ImaginaryTimeOptions, SolverOptions};
use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid1D};
use crate::potentials::ModelParams;

/// Highest state index a run can ask for.
pub const MAX_STATE: usize = 4;

/// Data products a run can write, one CSV each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    Spectrum,
    Separations,
    Energies,
    Overlaps,
    Fidelity,
    Effective,
    Densities,
}

impl Emit {
    pub const ALL: [Emit; 7] = [
        Emit::Spectrum,
        Emit::Separations,
        Emit::Energies,
        Emit::Overlaps,
        Emit::Fidelity,
        Emit::Effective,
        Emit::Densities,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Emit::Spectrum => "spectrum",
            Emit::Separations => "separations",
            Emit::Energies => "energies",
            Emit::Overlaps => "overlaps",
            Emit::Fidelity => "fidelity",
            Emit::Effective => "effective",
            Emit::Densities => "densities",
        }
    }

    pub fn parse(s: &str) -> Option<Emit> {
        Emit::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Targets computed from the three-dimensional ion-frame ground state.
    pub fn needs_ion_frame(&self) -> bool {
        matches!(self, Emit::Effective | Emit::Densities)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    #[default]
    Reuse,
    Recompute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Relative coordinates `(r_1, r_2)`; the single-particle orbitals live
    /// on the same grid.
    pub cmf: Grid1D,
    /// Ion coordinate of the ion frame.
    pub ion: Grid1D,
    /// Atom-ion coordinates of the ion frame.
    pub ion_rel: Grid1D,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            cmf: make_grid(4.0, 256).unwrap(),
            ion: make_grid(2.0, 32).unwrap(),
            ion_rel: make_grid(3.0, 96).unwrap(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub g: Vec<f64>,
    pub beta: Vec<f64>,
    pub states: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            g: vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0, 10.0, 15.0, 20.0, 40.0, 80.0],
            beta: vec![0.0, 0.034, 1.0],
            states: (0..=MAX_STATE).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub relative: SolverOptions,
    pub ion_frame: ImaginaryTimeOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Physical parameters; `g` and `beta` here select the point for
    /// single-point commands and are replaced by the sweep axes otherwise.
    pub model: ModelParams,
    pub grids: GridConfig,
    pub sweep: SweepConfig,
    pub solver: SolverConfig,
    pub output_dir: PathBuf,
    pub cache_policy: CachePolicy,
    pub emit: Vec<Emit>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelParams::default(),
            grids: GridConfig::default(),
            sweep: SweepConfig::default(),
            solver: SolverConfig::default(),
            output_dir: PathBuf::from("atomion-out"),
            cache_policy: CachePolicy::Reuse,
            emit: vec![
                Emit::Spectrum,
                Emit::Separations,
                Emit::Energies,
                Emit::Overlaps,
                Emit::Fidelity,
            ],
        }
    }
}

/// A `(β, g)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub beta: f64,
    pub g: f64,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Sets the field at a dotted `key` to `value`, which is read as a TOML
    /// value and, failing that, as a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot
                .as_table_mut()
                .and_then(|t| t.get_mut(part))
                .ok_or_else(|| Error::Config(format!("unknown config field `{key}`")))?;
        }
        *slot = parsed;
        *self = root
            .try_into()
            .map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))?;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn needs_ion_frame(&self) -> bool {
        self.emit.iter().any(|e| e.needs_ion_frame())
    }

    /// Checks the config against the points it will run.
    pub fn validate(&self, points: &[Point]) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {}", strip_prefix(&e)));
        self.model.validate().map_err(|e| field("model", e))?;
        if self.model.n_atoms != 2 {
            return Err(Error::Config(format!(
                "model.n_atoms: only two atoms are supported, got {}",
                self.model.n_atoms
            )));
        }
        if self.sweep.g.is_empty() {
            return Err(Error::Config("sweep.g: list is empty".into()));
        }
        if let Some(g) = self.sweep.g.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(Error::Config(format!(
                "sweep.g: values must be finite and non-negative, got {g}"
            )));
        }
        if self.sweep.beta.is_empty() {
            return Err(Error::Config("sweep.beta: list is empty".into()));
        }
        if let Some(b) = self.sweep.beta.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return Err(Error::Config(format!(
                "sweep.beta: values must be finite and non-negative, got {b}"
            )));
        }
        if self.sweep.states.is_empty() {
            return Err(Error::Config("sweep.states: list is empty".into()));
        }
        if let Some(s) = self.sweep.states.iter().find(|s| **s > MAX_STATE) {
            return Err(Error::Config(format!(
                "sweep.states: indices must lie in 0..={MAX_STATE}, got {s}"
            )));
        }
        for pt in points {
            let p = self.model.with_beta(pt.beta).with_g(pt.g);
            p.validate().map_err(|e| field("point", e))?;
            if pt.beta > 0.0 && p.eta != 1.0 {
                return Err(Error::Config(format!(
                    "model.eta: the relative-frame solver needs eta = 1 for a mobile ion, got {}",
                    p.eta
                )));
            }
            if pt.beta == 0.0 {
                if let Some(e) = self.emit.iter().find(|e| e.needs_ion_frame()) {
                    return Err(Error::Config(format!(
                        "emit: `{}` needs the ion frame, which requires beta > 0 (got beta = 0)",
                        e.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The single point selected by `model.g` and `model.beta`.
    pub fn single_point(&self) -> Vec<Point> {
        vec![Point {
            beta: self.model.beta,
            g: self.model.g,
        }]
    }

    /// All sweep points, `β` outermost, in config order.
    pub fn sweep_points(&self) -> Vec<Point> {
        self.sweep
            .beta
            .iter()
            .flat_map(|&beta| self.sweep.g.iter().map(move |&g| Point { beta, g }))
            .collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    let s = e.to_string();
    s.strip_prefix("config error: ")
        .or_else(|| s.strip_prefix("invalid parameters: "))
        .unwrap_or(&s)
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.sweep.g.len(), 12);
        assert_eq!(c.sweep.beta, vec![0.0, 0.034, 1.0]);
        c.validate(&c.sweep_points()).unwrap();
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.emit = vec![Emit::Spectrum, Emit::Densities];
        c.sweep.beta = vec![1.0];
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_tables() {
        let c = RunConfig::from_toml_str(
            r#"
            emit = ["spectrum"]
            [model]
            g = 2.5
            [grids.cmf]
            extent = 3.0
            points = 128
            [solver.relative.lanczos]
            max_basis = 40
            "#,
        )
        .unwrap();
        assert_eq!(c.model.g, 2.5);
        assert_eq!(c.model.kappa, 80.0);
        assert_eq!(c.grids.cmf.len(), 128);
        assert_eq!(c.solver.relative.lanczos.max_basis, 40);
        assert_eq!(c.solver.relative.lanczos.keep, 24);
    }

    #[test]
    fn errors_name_line_and_field() {
        let e = RunConfig::from_toml_str("[model]\ng = 1.0\nkapa = 3\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("line 3") && msg.contains("kapa"), "{msg}");
        let e = RunConfig::from_toml_str("[grids.cmf]\nextent = 4.0\npoints = 7\n").unwrap_err();
        assert!(e.to_string().contains("odd point count"), "{e}");
        let e = RunConfig::from_toml_str("emit = [\"spectra\"]").unwrap_err();
        assert!(e.to_string().contains("spectra"), "{e}");
    }

    #[test]
    fn overrides() {
        let mut c = RunConfig::default();
        c.apply_overrides(&[
            "model.g=3",
            "grids.cmf.points = 128",
            "sweep.beta=[1.0]",
            "emit=[\"energies\"]",
            "output_dir=/tmp/x",
            "cache_policy=recompute",
        ])
        .unwrap();
        assert_eq!(c.model.g, 3.0);
        assert_eq!(c.grids.cmf.len(), 128);
        assert_eq!(c.sweep.beta, vec![1.0]);
        assert_eq!(c.emit, vec![Emit::Energies]);
        assert_eq!(c.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.cache_policy, CachePolicy::Recompute);
        assert!(c.set("model.gg", "1").unwrap_err().to_string().contains("model.gg"));
        assert!(c.set("model.g", "\"x\"").is_err());
        assert!(c.apply_overrides(&["model.g"]).is_err());
    }

    #[test]
    fn validation() {
        let mut c = RunConfig::default();
        let pts = c.sweep_points();
        c.validate(&pts).unwrap();
        c.emit.push(Emit::Densities);
        let e = c.validate(&pts).unwrap_err().to_string();
        assert!(e.contains("emit") && e.contains("beta"), "{e}");
        c.sweep.beta = vec![1.0];
        c.validate(&c.sweep_points()).unwrap();
        c.sweep.states = vec![0, 5];
        assert!(c.validate(&c.sweep_points()).unwrap_err().to_string().contains("sweep.states"));
        c.sweep.states = vec![0];
        c.sweep.g = vec![];
        assert!(c.validate(&c.sweep_points()).unwrap_err().to_string().contains("sweep.g"));
        c.sweep.g = vec![-1.0];
        assert!(c.validate(&c.sweep_points()).is_err());
        c.sweep.g = vec![1.0];
        c.model.eta = 2.0;
        assert!(c.validate(&c.sweep_points()).unwrap_err().to_string().contains("eta"));
    }

    #[test]
    fn sweep_order() {
        let mut c = RunConfig::default();
        c.sweep.g = vec![0.0, 1.0];
        c.sweep.beta = vec![0.0, 1.0];
        let pts = c.sweep_points();
        assert_eq!(pts.len(), 4);
        assert_eq!((pts[1].beta, pts[1].g), (0.0, 1.0));
        assert_eq!((pts[2].beta, pts[2].g), (1.0, 0.0));
    }

    proptest::proptest! {
        #[test]
        fn sweep_g_validation(g in proptest::collection::vec(-5.0f64..80.0, 0..6)) {
            let mut c = RunConfig::default();
            c.sweep.g = g.clone();
            let ok = !g.is_empty() && g.iter().all(|x| *x >= 0.0);
            proptest::prop_assert_eq!(c.validate(&c.sweep_points()).is_ok(), ok);
        }
    }
}
