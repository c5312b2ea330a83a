//! `key = value` configuration files with `[section]` headers.
//!
//! Parsing is strict: unknown sections and keys, duplicates and malformed
//! lines are errors carrying the line number. Missing keys keep their
//! defaults. [`RunConfig::to_ini`] writes every key, and the same text is
//! echoed (behind `# `) at the top of each output file, so any output can be
//! traced back to the exact configuration that produced it.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use tic_core::model::LqrParams;

use crate::error::{CliError, Context, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub ode_steps: usize,
    pub sim_steps: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

/// `n_t = 0` picks the smallest stable number of time steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pde {
    pub n_t: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub x_lo: f64,
    pub x_hi: f64,
    pub tol: f64,
    pub max_iter: usize,
}

/// `gamma_steps` is the number of sweep points, end points included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sweep {
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub gamma_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Output {
    pub directory: String,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: LqrParams,
    pub numerics: Numerics,
    pub pde: Pde,
    pub sweep: Sweep,
    pub output: Output,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: LqrParams::reference(),
            numerics: Numerics {
                ode_steps: 1000,
                sim_steps: 1000,
                n_paths: 100_000,
                seed: 42,
                antithetic: false,
            },
            pde: Pde {
                n_t: 0,
                n_x: 160,
                n_y: 160,
                x_lo: -3.0,
                x_hi: 5.0,
                tol: 1e-10,
                max_iter: 200,
            },
            sweep: Sweep {
                gamma_min: 0.0,
                gamma_max: 10.0,
                gamma_steps: 20,
            },
            output: Output {
                directory: "out".into(),
                formats: vec![Format::Csv],
            },
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| CliError::at_line(line, format!("cannot parse `{raw}` as the value of `{key}`")))
}

fn formats(line: usize, raw: &str) -> Result<Vec<Format>> {
    let mut out = Vec::new();
    for item in raw.split(',').map(str::trim) {
        let f = match item {
            "csv" => Format::Csv,
            "json" => Format::Json,
            other => return Err(CliError::at_line(line, format!("unknown output format `{other}` (expected csv or json)"))),
        };
        if out.contains(&f) {
            return Err(CliError::at_line(line, format!("output format `{item}` listed twice")));
        }
        out.push(f);
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        let mut seen: Vec<(String, String)> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::at_line(line, format!("unterminated section header `{trimmed}`")))?
                    .trim();
                if !matches!(name, "model" | "numerics" | "pde" | "sweep" | "output") {
                    return Err(CliError::at_line(line, format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, raw_value) = trimmed
                .split_once('=')
                .ok_or_else(|| CliError::at_line(line, format!("expected `key = value`, found `{trimmed}`")))?;
            let (key, v) = (key.trim(), raw_value.trim());
            let sec = section
                .as_deref()
                .ok_or_else(|| CliError::at_line(line, format!("key `{key}` appears before any [section] header")))?;
            if seen.iter().any(|(s, k)| s == sec && k == key) {
                return Err(CliError::at_line(line, format!("duplicate key `{key}` in [{sec}]")));
            }
            seen.push((sec.to_string(), key.to_string()));
            cfg.set(line, sec, key, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            action: "read",
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    fn set(&mut self, line: usize, section: &str, key: &str, v: &str) -> Result<()> {
        let m = &mut self.model;
        let n = &mut self.numerics;
        let p = &mut self.pde;
        let s = &mut self.sweep;
        match (section, key) {
            ("model", "a_bar") => m.a_bar = value(line, key, v)?,
            ("model", "b_bar") => m.b_bar = value(line, key, v)?,
            ("model", "sigma") => m.sigma = value(line, key, v)?,
            ("model", "gamma") => m.gamma = value(line, key, v)?,
            ("model", "horizon") => m.horizon = value(line, key, v)?,
            ("model", "x0") => m.x0 = value(line, key, v)?,
            ("numerics", "ode_steps") => n.ode_steps = value(line, key, v)?,
            ("numerics", "sim_steps") => n.sim_steps = value(line, key, v)?,
            ("numerics", "n_paths") => n.n_paths = value(line, key, v)?,
            ("numerics", "seed") => n.seed = value(line, key, v)?,
            ("numerics", "antithetic") => n.antithetic = value(line, key, v)?,
            ("pde", "n_t") => p.n_t = value(line, key, v)?,
            ("pde", "n_x") => p.n_x = value(line, key, v)?,
            ("pde", "n_y") => p.n_y = value(line, key, v)?,
            ("pde", "x_lo") => p.x_lo = value(line, key, v)?,
            ("pde", "x_hi") => p.x_hi = value(line, key, v)?,
            ("pde", "tol") => p.tol = value(line, key, v)?,
            ("pde", "max_iter") => p.max_iter = value(line, key, v)?,
            ("sweep", "gamma_min") => s.gamma_min = value(line, key, v)?,
            ("sweep", "gamma_max") => s.gamma_max = value(line, key, v)?,
            ("sweep", "gamma_steps") => s.gamma_steps = value(line, key, v)?,
            ("output", "directory") => {
                if v.is_empty() {
                    return Err(CliError::at_line(line, "`directory` must not be empty"));
                }
                self.output.directory = v.to_string();
            }
            ("output", "formats") => self.output.formats = formats(line, v)?,
            _ => return Err(CliError::at_line(line, format!("unknown key `{key}` in [{section}]"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().context("config [model]")?;
        let n = &self.numerics;
        if n.ode_steps == 0 || n.sim_steps == 0 || n.n_paths == 0 {
            return Err(CliError::config("ode_steps, sim_steps and n_paths must be positive"));
        }
        if n.ode_steps % n.sim_steps != 0 {
            return Err(CliError::config(format!(
                "ode_steps ({}) must be a multiple of sim_steps ({})",
                n.ode_steps, n.sim_steps
            )));
        }
        if n.antithetic && n.n_paths % 2 != 0 {
            return Err(CliError::config("antithetic sampling needs an even n_paths"));
        }
        let p = &self.pde;
        if !(p.x_lo.is_finite() && p.x_hi.is_finite() && p.x_lo < p.x_hi) {
            return Err(CliError::config(format!("pde range [{}, {}] is empty", p.x_lo, p.x_hi)));
        }
        if !(p.tol > 0.0 && p.tol.is_finite()) || p.max_iter == 0 {
            return Err(CliError::config("pde tol must be positive and max_iter at least 1"));
        }
        let s = &self.sweep;
        if !(s.gamma_min >= 0.0 && s.gamma_max >= s.gamma_min && s.gamma_max.is_finite()) {
            return Err(CliError::config(format!(
                "sweep range [{}, {}] must satisfy 0 <= gamma_min <= gamma_max",
                s.gamma_min, s.gamma_max
            )));
        }
        if s.gamma_steps == 0 {
            return Err(CliError::config("gamma_steps must be at least 1"));
        }
        if self.output.formats.is_empty() {
            return Err(CliError::config("at least one output format is required"));
        }
        Ok(())
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Every key, one per line; `parse(to_ini())` gives back `self`.
    pub fn to_ini(&self) -> String {
        let m = &self.model;
        let n = &self.numerics;
        let p = &self.pde;
        let s = &self.sweep;
        let fmts: Vec<&str> = self
            .output
            .formats
            .iter()
            .map(|f| match f {
                Format::Csv => "csv",
                Format::Json => "json",
            })
            .collect();
        let mut out = String::new();
        let _ = write!(
            out,
            "[model]\na_bar = {:?}\nb_bar = {:?}\nsigma = {:?}\ngamma = {:?}\nhorizon = {:?}\nx0 = {:?}\n\n",
            m.a_bar, m.b_bar, m.sigma, m.gamma, m.horizon, m.x0
        );
        let _ = write!(
            out,
            "[numerics]\node_steps = {}\nsim_steps = {}\nn_paths = {}\nseed = {}\nantithetic = {}\n\n",
            n.ode_steps, n.sim_steps, n.n_paths, n.seed, n.antithetic
        );
        let _ = write!(
            out,
            "[pde]\nn_t = {}\nn_x = {}\nn_y = {}\nx_lo = {:?}\nx_hi = {:?}\ntol = {:?}\nmax_iter = {}\n\n",
            p.n_t, p.n_x, p.n_y, p.x_lo, p.x_hi, p.tol, p.max_iter
        );
        let _ = write!(
            out,
            "[sweep]\ngamma_min = {:?}\ngamma_max = {:?}\ngamma_steps = {}\n\n",
            s.gamma_min, s.gamma_max, s.gamma_steps
        );
        let _ = write!(
            out,
            "[output]\ndirectory = {}\nformats = {}\n",
            self.output.directory,
            fmts.join(",")
        );
        out
    }

    /// Comment block placed at the top of every output file.
    pub fn header(&self) -> String {
        let mut out = format!("# tic {VERSION}\n");
        for line in self.to_ini().lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("# ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out
    }

    /// Recovers the configuration from the leading comment block of an
    /// output file written by [`RunConfig::header`].
    pub fn from_header(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(first) if first.starts_with("# tic ") => {}
            _ => return Err(CliError::config("missing `# tic <version>` header line")),
        }
        let mut ini = String::new();
        for line in lines.take_while(|l| l.starts_with('#')) {
            ini.push_str(line.strip_prefix("# ").unwrap_or(""));
            ini.push('\n');
        }
        Self::parse(&ini)
    }
}
