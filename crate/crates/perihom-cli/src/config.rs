//! Run configuration: a flat key=value format with `[section]` headers.
//!
//! The full schema (every key, with defaults) is documented in the crate
//! README. Parsing is strict: unknown sections or keys are errors, and every
//! diagnostic carries the offending line number. Writing then re-reading a
//! config reproduces identical solver inputs; the text itself is
//! canonicalized (shared radii expanded, defaults filled in).

use perihom::conductivity::{detect_proportionality, ConductivityProfile, ContrastFamily,
    PROPORTIONALITY_TOL};
use perihom::geometry::{CellGeometry, Inclusion};
use perihom::num_complex::Complex64;
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError { line, message: message.into() })
}

/// A conductivity profile as written in the config.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileSpec {
    /// `trapezoid x1 x2 y_lo y_hi`: y_lo outside [x1, x2], peak y_hi at the
    /// midpoint, linear flanks
    Trapezoid { x1: f64, x2: f64, y_lo: f64, y_hi: f64 },
    /// `piecewise b1 b2 ... / v1 v2 ...`: values at breakpoints, linear
    /// between, constant tails
    Piecewise { breakpoints: Vec<f64>, values: Vec<f64> },
}

impl ProfileSpec {
    pub fn build(&self) -> Result<ConductivityProfile, String> {
        match self {
            ProfileSpec::Trapezoid { x1, x2, y_lo, y_hi } => {
                if !(x2 > x1) || !(*y_lo > 0.0) || !(*y_hi > 0.0) {
                    return Err(format!(
                        "trapezoid needs x1 < x2 and positive values (got {x1} {x2} {y_lo} {y_hi})"
                    ));
                }
                Ok(ConductivityProfile::trapezoid(*x1, *x2, *y_lo, *y_hi))
            }
            ProfileSpec::Piecewise { breakpoints, values } => {
                ConductivityProfile::new(breakpoints.clone(), values.clone())
                    .map_err(|e| e.to_string())
            }
        }
    }

    fn write(&self, out: &mut String) {
        match self {
            ProfileSpec::Trapezoid { x1, x2, y_lo, y_hi } => {
                let _ = write!(out, "trapezoid {x1} {x2} {y_lo} {y_hi}");
            }
            ProfileSpec::Piecewise { breakpoints, values } => {
                out.push_str("piecewise ");
                out.push_str(&join(breakpoints));
                out.push_str(" / ");
                out.push_str(&join(values));
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeometrySection {
    pub centers: Vec<(f64, f64)>,
    /// one radius per center
    pub radii: Vec<f64>,
    /// inclusion-profile index per center
    pub profile_ids: Vec<usize>,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection { centers: Vec::new(), radii: Vec::new(), profile_ids: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfilesSection {
    pub matrix: ProfileSpec,
    pub inclusions: Vec<ProfileSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluxSection {
    pub intensity: f64,
    pub angle: f64,
}

impl Default for FluxSection {
    fn default() -> Self {
        FluxSection { intensity: -1.0, angle: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub truncation_order: usize,
    pub residual_tol: f64,
    pub max_order: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { truncation_order: 6, residual_tol: 1e-6, max_order: 40 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    /// None: derive from the profile breakpoints and the cell's u spread
    pub c_range: Option<(f64, f64)>,
    pub n_samples: usize,
    /// default (m1, m2) ranges for the cell sweep; `--cells` overrides
    pub cells: Option<((i32, i32), (i32, i32))>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { c_range: None, n_samples: 81, cells: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySection {
    pub grid: usize,
    /// tolerance on the FD effective-tensor diagonal vs the series tensor
    pub fd_diag_tol: f64,
    /// tolerance on the mean gradient deviation over the bulk (pixels more
    /// than a fixed margin away from every interface)
    pub bulk_mean_tol: f64,
    /// acceptance band for the 128/256 nonlinear residual ratio
    pub residual_ratio: (f64, f64),
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            grid: 512,
            fd_diag_tol: 1e-2,
            bulk_mean_tol: 5e-3,
            residual_ratio: (3.5, 4.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputsSection {
    pub directory: PathBuf,
    pub svg: bool,
}

impl Default for OutputsSection {
    fn default() -> Self {
        OutputsSection { directory: PathBuf::from("out"), svg: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub profiles: ProfilesSection,
    pub flux: FluxSection,
    pub solver: SolverSection,
    pub sweep: SweepSection,
    pub verify: VerifySection,
    pub outputs: OutputsSection,
}

/// Everything the solver pipelines take, assembled from a config.
pub struct ModelInputs {
    pub geometry: CellGeometry,
    pub family: ContrastFamily,
    /// contrast rho = 1/C per disk, from the proportionality constants
    pub contrasts: Vec<f64>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut section: Option<&str> = None;
        let mut geometry = GeometrySection::default();
        let mut geometry_lines = (0usize, 0usize, 0usize); // centers, radii, ids
        let mut matrix: Option<ProfileSpec> = None;
        let mut inclusions: Vec<ProfileSpec> = Vec::new();
        let mut flux = FluxSection::default();
        let mut solver = SolverSection::default();
        let mut sweep = SweepSection::default();
        let mut verify = VerifySection::default();
        let mut outputs = OutputsSection::default();
        let mut shared_radius: Option<f64> = None;

        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return err(ln, "unterminated section header");
                };
                section = Some(match name {
                    "geometry" => "geometry",
                    "profiles" => "profiles",
                    "flux" => "flux",
                    "solver" => "solver",
                    "sweep" => "sweep",
                    "verify" => "verify",
                    "outputs" => "outputs",
                    other => return err(ln, format!("unknown section [{other}]")),
                });
                continue;
            }
            let Some(eq) = line.find('=') else {
                return err(ln, "expected `key = value` or a [section] header");
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            let Some(section) = section else {
                return err(ln, format!("key `{key}` before any [section] header"));
            };
            match (section, key) {
                ("geometry", "centers") => {
                    geometry.centers = parse_pairs(value).map_err(|m| ConfigError {
                        line: ln,
                        message: format!("centers: {m}"),
                    })?;
                    geometry_lines.0 = ln;
                }
                ("geometry", "radii") => {
                    let vals = parse_floats(value)
                        .map_err(|m| ConfigError { line: ln, message: format!("radii: {m}") })?;
                    if vals.len() == 1 {
                        shared_radius = Some(vals[0]);
                    }
                    geometry.radii = vals;
                    geometry_lines.1 = ln;
                }
                ("geometry", "profile_ids") => {
                    geometry.profile_ids = value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>().map_err(|_| t))
                        .collect::<Result<_, _>>()
                        .map_err(|t| ConfigError {
                            line: ln,
                            message: format!("profile_ids: `{t}` is not a nonnegative integer"),
                        })?;
                    geometry_lines.2 = ln;
                }
                ("profiles", "matrix") => {
                    matrix = Some(parse_profile(value).map_err(|m| ConfigError {
                        line: ln,
                        message: format!("matrix profile: {m}"),
                    })?);
                }
                ("profiles", "inclusion") => {
                    inclusions.push(parse_profile(value).map_err(|m| ConfigError {
                        line: ln,
                        message: format!("inclusion profile: {m}"),
                    })?);
                }
                ("flux", "intensity") => flux.intensity = parse_one(value, ln, "intensity")?,
                ("flux", "angle") => flux.angle = parse_one(value, ln, "angle")?,
                ("solver", "truncation_order") => {
                    solver.truncation_order = parse_usize(value, ln, "truncation_order")?
                }
                ("solver", "residual_tol") => {
                    solver.residual_tol = parse_one(value, ln, "residual_tol")?
                }
                ("solver", "max_order") => solver.max_order = parse_usize(value, ln, "max_order")?,
                ("sweep", "c_range") => {
                    sweep.c_range = if value == "auto" {
                        None
                    } else {
                        let v = parse_floats(value).map_err(|m| ConfigError {
                            line: ln,
                            message: format!("c_range: {m}"),
                        })?;
                        let [lo, hi] = v[..] else {
                            return err(ln, "c_range: expected `auto` or two numbers `lo hi`");
                        };
                        if !(hi > lo) {
                            return err(ln, format!("c_range: need lo < hi (got {lo} {hi})"));
                        }
                        Some((lo, hi))
                    }
                }
                ("sweep", "n_samples") => sweep.n_samples = parse_usize(value, ln, "n_samples")?,
                ("sweep", "cells") => {
                    let v: Vec<i32> = value
                        .split_whitespace()
                        .map(|t| t.parse::<i32>().map_err(|_| t))
                        .collect::<Result<_, _>>()
                        .map_err(|t| ConfigError {
                            line: ln,
                            message: format!("cells: `{t}` is not an integer"),
                        })?;
                    let [a, b, c, d] = v[..] else {
                        return err(ln, "cells: expected `m1_lo m1_hi m2_lo m2_hi`");
                    };
                    if a > b || c > d {
                        return err(ln, "cells: each range needs lo <= hi");
                    }
                    sweep.cells = Some(((a, b), (c, d)));
                }
                ("verify", "grid") => verify.grid = parse_usize(value, ln, "grid")?,
                ("verify", "fd_diag_tol") => {
                    verify.fd_diag_tol = parse_one(value, ln, "fd_diag_tol")?
                }
                ("verify", "bulk_mean_tol") => {
                    verify.bulk_mean_tol = parse_one(value, ln, "bulk_mean_tol")?
                }
                ("verify", "residual_ratio") => {
                    let v = parse_floats(value).map_err(|m| ConfigError {
                        line: ln,
                        message: format!("residual_ratio: {m}"),
                    })?;
                    let [lo, hi] = v[..] else {
                        return err(ln, "residual_ratio: expected two numbers `lo hi`");
                    };
                    verify.residual_ratio = (lo, hi);
                }
                ("outputs", "directory") => outputs.directory = PathBuf::from(value),
                ("outputs", "svg") => {
                    outputs.svg = match value {
                        "true" => true,
                        "false" => false,
                        other => return err(ln, format!("svg: expected true/false, got `{other}`")),
                    }
                }
                (section, key) => {
                    return err(ln, format!("unknown key `{key}` in section [{section}]"))
                }
            }
        }

        let Some(matrix) = matrix else {
            return err(0, "missing required key `matrix` in section [profiles]");
        };
        let n = geometry.centers.len();
        if let Some(r) = shared_radius {
            if n > 0 {
                geometry.radii = vec![r; n];
            }
        }
        if geometry.radii.len() != n {
            return err(
                geometry_lines.1.max(geometry_lines.0),
                format!(
                    "radii: expected one radius (shared) or {} (one per center), got {}",
                    n,
                    geometry.radii.len()
                ),
            );
        }
        if geometry.profile_ids.is_empty() {
            geometry.profile_ids = vec![0; n];
        }
        if geometry.profile_ids.len() != n {
            return err(
                geometry_lines.2,
                format!("profile_ids: expected {} entries, got {}", n, geometry.profile_ids.len()),
            );
        }
        if let Some(&bad) = geometry.profile_ids.iter().find(|&&id| id >= inclusions.len().max(1)) {
            return err(
                geometry_lines.2.max(geometry_lines.0),
                format!(
                    "profile_ids: id {bad} out of range ({} inclusion profiles defined)",
                    inclusions.len()
                ),
            );
        }
        if n > 0 && inclusions.is_empty() {
            return err(
                geometry_lines.0,
                "geometry has disks but [profiles] defines no `inclusion` entries",
            );
        }
        Ok(RunConfig {
            geometry,
            profiles: ProfilesSection { matrix, inclusions },
            flux,
            solver,
            sweep,
            verify,
            outputs,
        })
    }

    /// Canonical text form; `parse` of the result reproduces the same config.
    pub fn write(&self) -> String {
        let mut s = String::new();
        s.push_str("[geometry]\ncenters = ");
        s.push_str(
            &self
                .geometry
                .centers
                .iter()
                .map(|(x, y)| format!("{x} {y}"))
                .collect::<Vec<_>>()
                .join(", "),
        );
        s.push_str("\nradii = ");
        s.push_str(&join(&self.geometry.radii));
        if self.geometry.profile_ids.iter().any(|&id| id != 0) {
            let _ = write!(
                s,
                "\nprofile_ids = {}",
                self.geometry
                    .profile_ids
                    .iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
        s.push_str("\n\n[profiles]\nmatrix = ");
        self.profiles.matrix.write(&mut s);
        for inc in &self.profiles.inclusions {
            s.push_str("\ninclusion = ");
            inc.write(&mut s);
        }
        let _ = write!(
            s,
            "\n\n[flux]\nintensity = {}\nangle = {}\n",
            self.flux.intensity, self.flux.angle
        );
        let _ = write!(
            s,
            "\n[solver]\ntruncation_order = {}\nresidual_tol = {}\nmax_order = {}\n",
            self.solver.truncation_order, self.solver.residual_tol, self.solver.max_order
        );
        s.push_str("\n[sweep]\nc_range = ");
        match self.sweep.c_range {
            None => s.push_str("auto"),
            Some((lo, hi)) => {
                let _ = write!(s, "{lo} {hi}");
            }
        }
        let _ = write!(s, "\nn_samples = {}", self.sweep.n_samples);
        if let Some(((a, b), (c, d))) = self.sweep.cells {
            let _ = write!(s, "\ncells = {a} {b} {c} {d}");
        }
        let _ = write!(
            s,
            "\n\n[verify]\ngrid = {}\nfd_diag_tol = {}\nbulk_mean_tol = {}\nresidual_ratio = {} {}\n",
            self.verify.grid,
            self.verify.fd_diag_tol,
            self.verify.bulk_mean_tol,
            self.verify.residual_ratio.0,
            self.verify.residual_ratio.1
        );
        let _ = write!(
            s,
            "\n[outputs]\ndirectory = {}\nsvg = {}\n",
            self.outputs.directory.display(),
            self.outputs.svg
        );
        s
    }

    /// Geometry, profile family, and per-disk contrasts. Errors name the
    /// failing condition; proportionality failures identify the profile.
    pub fn model(&self) -> Result<ModelInputs, String> {
        let matrix = self.profiles.matrix.build().map_err(|m| format!("matrix profile: {m}"))?;
        let mut inclusion_profiles = Vec::with_capacity(self.profiles.inclusions.len());
        for (i, spec) in self.profiles.inclusions.iter().enumerate() {
            inclusion_profiles
                .push(spec.build().map_err(|m| format!("inclusion profile {i}: {m}"))?);
        }
        let inclusions: Vec<Inclusion> = self
            .geometry
            .centers
            .iter()
            .zip(&self.geometry.radii)
            .zip(&self.geometry.profile_ids)
            .map(|(((x, y), &radius), &contrast_id)| Inclusion {
                center: Complex64::new(*x, *y),
                radius,
                contrast_id,
            })
            .collect();
        let geometry = CellGeometry::new(inclusions);
        let report = geometry.validate();
        if !report.is_ok() {
            return Err(format!(
                "invalid geometry: {}",
                report
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            ));
        }
        for (i, inc) in inclusion_profiles.iter().enumerate() {
            if detect_proportionality(&matrix, inc, PROPORTIONALITY_TOL).is_none() {
                return Err(format!(
                    "inclusion profile {i} is not proportional to the matrix: \
                     lambda(T) = C lambda_{i}(T) fails at a breakpoint, so the \
                     Kirchhoff-transformed problem would stay nonlinear"
                ));
            }
        }
        let family = ContrastFamily::new(matrix, inclusion_profiles);
        let constants = family.constants.as_ref().expect("checked per profile above");
        let contrasts =
            self.geometry.profile_ids.iter().map(|&id| 1.0 / constants[id]).collect();
        Ok(ModelInputs { geometry, family, contrasts })
    }
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_floats(value: &str) -> Result<Vec<f64>, String> {
    value
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("`{t}` is not a number")))
        .collect()
}

fn parse_pairs(value: &str) -> Result<Vec<(f64, f64)>, String> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|chunk| {
            let v = parse_floats(chunk)?;
            let [x, y] = v[..] else {
                return Err(format!("`{}` is not an `x y` pair", chunk.trim()));
            };
            Ok((x, y))
        })
        .collect()
}

fn parse_one(value: &str, line: usize, key: &str) -> Result<f64, ConfigError> {
    value
        .parse::<f64>()
        .map_err(|_| ConfigError { line, message: format!("{key}: `{value}` is not a number") })
}

fn parse_usize(value: &str, line: usize, key: &str) -> Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError {
        line,
        message: format!("{key}: `{value}` is not a nonnegative integer"),
    })
}

fn parse_profile(value: &str) -> Result<ProfileSpec, String> {
    if let Some(rest) = value.strip_prefix("trapezoid") {
        let v = parse_floats(rest.trim())?;
        let [x1, x2, y_lo, y_hi] = v[..] else {
            return Err("trapezoid takes four numbers: x1 x2 y_lo y_hi".into());
        };
        return Ok(ProfileSpec::Trapezoid { x1, x2, y_lo, y_hi });
    }
    if let Some(rest) = value.strip_prefix("piecewise") {
        let Some((b, v)) = rest.split_once('/') else {
            return Err("piecewise takes `b1 b2 ... / v1 v2 ...`".into());
        };
        let breakpoints = parse_floats(b.trim())?;
        let values = parse_floats(v.trim())?;
        return Ok(ProfileSpec::Piecewise { breakpoints, values });
    }
    Err(format!("`{value}` is neither `trapezoid ...` nor `piecewise ...`"))
}
