use std::path::{Path, PathBuf};

use qg3d_core::kernel::KernelConfig;
use qg3d_core::nonlinear::NonlinearConfig;
use qg3d_core::profile::Profile;
use serde::{Deserialize, Serialize};

use crate::output::Failure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

/// Everything a run depends on. Missing keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `sphere`, `spheroid:<a>` or `file:<path>` (CSV with header `phi,r0`).
    pub profile: String,
    pub phi_nodes: usize,
    pub theta_nodes: usize,
    pub de_level: u32,
    /// Largest accepted discrepancy between the two operator representations.
    pub quad_tol: f64,
    pub eig_tol: f64,
    pub newton_tol: f64,
    /// Relative guard: every `Ω` must stay below `κ (1 − guard)`.
    pub guard: f64,
    pub modes: Vec<usize>,
    pub omegas: Vec<f64>,
    pub branch_mode: usize,
    pub s_max: f64,
    pub steps: usize,
    pub theta_modes: usize,
    /// Tanh-sinh level of both angular rules in the nonlinear functional.
    pub nonlinear_level: u32,
    /// Number of `θ` samples per surface row in branch output.
    pub surface_thetas: usize,
    pub output: PathBuf,
    pub format: Format,
}

impl Default for RunConfig {
    fn default() -> Self {
        let k = KernelConfig::default();
        let nl = NonlinearConfig::default();
        Self {
            profile: "sphere".into(),
            phi_nodes: k.phi_nodes,
            theta_nodes: k.theta_nodes,
            de_level: k.de_level,
            quad_tol: 1e-5,
            eig_tol: 1e-10,
            newton_tol: nl.newton_tol,
            guard: qg3d_core::kernel::GUARD_FRACTION,
            modes: vec![2, 3, 4, 5, 6],
            omegas: vec![-1.0, -0.5, 0.0],
            branch_mode: 2,
            s_max: 0.03,
            steps: 10,
            theta_modes: nl.theta_modes,
            nonlinear_level: nl.eta_level,
            surface_thetas: 64,
            output: PathBuf::from("qg3d-out"),
            format: Format::Csv,
        }
    }
}

/// Command-line values that replace the matching config keys.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct Overrides {
    /// JSON config file; flags given alongside it win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub profile: Option<String>,
    #[arg(long, global = true)]
    pub phi_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub theta_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub de_level: Option<u32>,
    #[arg(long, global = true)]
    pub quad_tol: Option<f64>,
    #[arg(long, global = true)]
    pub eig_tol: Option<f64>,
    #[arg(long, global = true)]
    pub newton_tol: Option<f64>,
    #[arg(long, global = true)]
    pub guard: Option<f64>,
    /// Comma-separated mode numbers, e.g. `1,2,3`
    #[arg(long, global = true)]
    pub modes: Option<String>,
    /// Comma-separated angular velocities or `lo:hi:count`; empty for none
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub omegas: Option<String>,
    #[arg(long, global = true)]
    pub branch_mode: Option<usize>,
    #[arg(long, global = true)]
    pub s_max: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    #[arg(long, global = true)]
    pub theta_modes: Option<usize>,
    #[arg(long, global = true)]
    pub nonlinear_level: Option<u32>,
    #[arg(long, global = true)]
    pub surface_thetas: Option<usize>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Worker threads; defaults to QG3D_THREADS, then to all cores
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Failure::parse(format!("{}: {e}", path.display())))
    }

    pub fn resolve(o: &Overrides) -> Result<Self, Failure> {
        let mut c = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {
                $(if let Some(v) = &o.$f { c.$f = v.clone(); })*
            };
        }
        set!(
            profile,
            phi_nodes,
            theta_nodes,
            de_level,
            quad_tol,
            eig_tol,
            newton_tol,
            guard,
            branch_mode,
            s_max,
            steps,
            theta_modes,
            nonlinear_level,
            surface_thetas,
            output,
            format
        );
        if let Some(s) = &o.modes {
            c.modes = parse_list(s, "modes")?;
        }
        if let Some(s) = &o.omegas {
            c.omegas = parse_omegas(s)?;
        }
        c.check()?;
        Ok(c)
    }

    /// Checks that do not need `κ`.
    pub fn check(&self) -> Result<(), Failure> {
        let sizes = [
            ("phi_nodes", self.phi_nodes),
            ("theta_nodes", self.theta_nodes),
            ("de_level", self.de_level as usize),
            ("steps", self.steps),
            ("theta_modes", self.theta_modes),
            ("nonlinear_level", self.nonlinear_level as usize),
            ("surface_thetas", self.surface_thetas),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Failure::config(format!("{name} must be positive")));
            }
        }
        let tols = [
            ("quad_tol", self.quad_tol),
            ("eig_tol", self.eig_tol),
            ("newton_tol", self.newton_tol),
            ("guard", self.guard),
        ];
        for (name, v) in tols {
            if !(v > 0.0 && v < 1e-2) {
                return Err(Failure::config(format!("{name} = {v} is outside (0, 1e-2)")));
            }
        }
        if self.modes.contains(&0) {
            return Err(Failure::config("modes must be >= 1".into()));
        }
        if let Some(w) = self.omegas.iter().find(|w| !w.is_finite()) {
            return Err(Failure::config(format!("omega = {w} is not finite")));
        }
        if !(self.s_max >= 0.0 && self.s_max.is_finite()) {
            return Err(Failure::config(format!("s_max = {} must be finite and >= 0", self.s_max)));
        }
        Ok(())
    }

    /// Rejects any `Ω ≥ κ (1 − guard)`.
    pub fn check_omegas(&self, kappa: f64) -> Result<(), Failure> {
        let limit = kappa * (1.0 - self.guard);
        match self.omegas.iter().find(|&&w| w >= limit) {
            Some(w) => Err(Failure::config(format!(
                "omega = {w} is not below kappa - guard = {limit:.10} (kappa = {kappa:.10})"
            ))),
            None => Ok(()),
        }
    }

    pub fn kernel_config(&self) -> KernelConfig {
        KernelConfig {
            phi_nodes: self.phi_nodes,
            de_level: self.de_level,
            theta_nodes: self.theta_nodes,
        }
    }

    pub fn nonlinear_config(&self) -> NonlinearConfig {
        NonlinearConfig {
            theta_modes: self.theta_modes,
            eta_level: self.nonlinear_level,
            phi_level: self.nonlinear_level,
            newton_tol: self.newton_tol,
            ..NonlinearConfig::default()
        }
    }

    pub fn load_profile(&self) -> Result<Profile, Failure> {
        parse_profile(&self.profile)
    }
}

pub fn parse_profile(spec: &str) -> Result<Profile, Failure> {
    let spec = spec.trim();
    if spec == "sphere" {
        return Ok(Profile::sphere());
    }
    if let Some(a) = spec.strip_prefix("spheroid:") {
        let a: f64 = a
            .trim()
            .parse()
            .map_err(|e| Failure::parse(format!("profile `{spec}`: {e}")))?;
        return Ok(Profile::spheroid(a)?);
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(Profile::from_csv(Path::new(path))?);
    }
    Err(Failure::parse(format!(
        "profile `{spec}`: expected sphere, spheroid:<a> or file:<path>"
    )))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| Failure::parse(format!("{what}: `{t}`: {e}"))))
        .collect()
}

/// `a,b,c` or `lo:hi:count` (inclusive, evenly spaced).
pub fn parse_omegas(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 1 {
        return parse_list(s, "omegas");
    }
    if parts.len() != 3 {
        return Err(Failure::parse(format!("omegas: `{s}` is not lo:hi:count")));
    }
    let num = |t: &str| {
        t.trim()
            .parse::<f64>()
            .map_err(|e| Failure::parse(format!("omegas: `{t}`: {e}")))
    };
    let (lo, hi) = (num(parts[0])?, num(parts[1])?);
    let count: usize = parts[2]
        .trim()
        .parse()
        .map_err(|e| Failure::parse(format!("omegas: `{}`: {e}", parts[2])))?;
    Ok(match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn omega_ranges() {
        assert_eq!(parse_omegas("-1,0, 0.2").unwrap(), vec![-1.0, 0.0, 0.2]);
        assert_eq!(parse_omegas("").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_omegas("0:1:3").unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_omegas("0:1:0").unwrap(), Vec::<f64>::new());
        assert_eq!(parse_omegas("x").unwrap_err().code, 1);
        assert_eq!(parse_omegas("0:1").unwrap_err().code, 1);
    }

    #[test]
    fn overrides_win() {
        let o = Overrides {
            phi_nodes: Some(32),
            modes: Some("1,2".into()),
            ..Overrides::default()
        };
        let c = RunConfig::resolve(&o).unwrap();
        assert_eq!(c.phi_nodes, 32);
        assert_eq!(c.modes, vec![1, 2]);
        assert_eq!(c.theta_nodes, RunConfig::default().theta_nodes);
    }

    #[test]
    fn invariants() {
        let mut c = RunConfig::default();
        c.eig_tol = 0.5;
        assert_eq!(c.check().unwrap_err().code, 2);
        let mut c = RunConfig::default();
        c.phi_nodes = 0;
        assert_eq!(c.check().unwrap_err().code, 2);
        let mut c = RunConfig::default();
        c.omegas = vec![0.0, 0.34];
        assert!(c.check().is_ok());
        assert_eq!(c.check_omegas(1.0 / 3.0).unwrap_err().code, 2);
    }

    #[test]
    fn profiles() {
        assert!(parse_profile("sphere").is_ok());
        assert!(parse_profile("spheroid:2").is_ok());
        assert_eq!(parse_profile("spheroid:-1").unwrap_err().code, 2);
        assert_eq!(parse_profile("spheroid:x").unwrap_err().code, 1);
        assert_eq!(parse_profile("cube").unwrap_err().code, 1);
        assert_eq!(parse_profile("file:/nonexistent/p.csv").unwrap_err().code, 1);
    }

    #[test]
    fn config_json_roundtrip() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"phi_nodes": 48}"#).unwrap();
        assert_eq!(partial.phi_nodes, 48);
        assert!(serde_json::from_str::<RunConfig>(r#"{"phi_node": 48}"#).is_err());
    }
}
