//! Run configuration: a flat `key=value` file overlaid by command-line
//! flags, resolved into a fully explicit [`RunConfig`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use fqvi::mesh::{default_gamma, gamma_floor};
use fqvi::obstacle::{DEFAULT_DELTA, DEFAULT_NU};
use fqvi::{Backend, MassTreatment, ObstacleMapSpec, PcgConfig, QVIConfig, SsnConfig, TauRule};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Linear,
    Vi,
    Qvi,
    Oracle,
    Truncation,
    PaperExample,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Linear => "linear",
            Mode::Vi => "vi",
            Mode::Qvi => "qvi",
            Mode::Oracle => "oracle",
            Mode::Truncation => "truncation",
            Mode::PaperExample => "paper-example",
        }
    }
}

/// Right-hand side `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Bump,
    One,
    Eigenfunction(usize, usize),
    /// Nodal values read from a file, one per base vertex.
    File {
        path: PathBuf,
        values: Vec<f64>,
        sha256: String,
    },
}

impl Source {
    pub fn render(&self) -> String {
        match self {
            Source::Bump => "bump".into(),
            Source::One => "one".into(),
            Source::Eigenfunction(k, l) => format!("eigenfunction:{k},{l}"),
            Source::File { path, .. } => format!("file:{}", path.display()),
        }
    }
}

/// Every key accepted in config files and as `--flag`.
pub const KEYS: &[&str] = &[
    "s",
    "n_dim",
    "m",
    "layers",
    "gamma",
    "tau",
    "tail_per_unit",
    "obstacle",
    "f",
    "eps1",
    "n_max",
    "eps2",
    "theta0",
    "theta_ratio",
    "theta_max",
    "k_max",
    "mu_bar",
    "backend",
    "pcg_tol",
    "mass",
    "oracle",
    "oracle_k_max",
    "psor_tol",
    "psor_max_sweeps",
    "seed",
    "paper_example",
];

/// Values of the s-sweep run by `paper-example`.
pub const SWEEP: [f64; 4] = [0.2, 0.4, 0.6, 0.8];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mode: Mode,
    pub paper_example: Option<u8>,
    pub s: f64,
    pub n_dim: usize,
    pub m: usize,
    pub layers: usize,
    pub gamma: f64,
    /// One entry, or the increasing list for `truncation`.
    pub tau: Vec<f64>,
    pub tail_per_unit: usize,
    pub obstacle: Option<ObstacleMapSpec>,
    pub f: Source,
    pub qvi: QVIConfig,
    pub backend: Backend,
    pub mass: MassTreatment,
    pub oracle: bool,
    pub oracle_k_max: usize,
    pub psor_tol: f64,
    pub psor_max_sweeps: usize,
    pub seed: u64,
    pub out: PathBuf,
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid value for `{key}`: {reason}"))
}

pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

/// Parses a `key=value` file; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        let k = normalize_key(k);
        if !KEYS.contains(&k.as_str()) {
            return Err(CliError::Config(format!(
                "{}:{}: unknown key `{k}`",
                path.display(),
                i + 1
            )));
        }
        map.insert(k, v.trim().to_string());
    }
    Ok(map)
}

/// Settings implied by `paper_example = n`.
pub fn preset(n: u8) -> Result<BTreeMap<String, String>, CliError> {
    let (obstacle, f) = match n {
        1 => ("example1", "bump"),
        2 => ("example2", "bump"),
        3 => ("example3", "bump"),
        4 => ("example4", "one"),
        _ => return Err(bad("paper_example", "must be 1, 2, 3 or 4")),
    };
    Ok([
        ("n_dim", "2"),
        ("m", "16"),
        ("layers", "43"),
        ("obstacle", obstacle),
        ("f", f),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect())
}

/// Layers `preset <- file <- flags` into one map.
pub fn merge(
    file: BTreeMap<String, String>,
    flags: BTreeMap<String, String>,
) -> Result<BTreeMap<String, String>, CliError> {
    let example = flags
        .get("paper_example")
        .or_else(|| file.get("paper_example"))
        .map(|v| parse_num::<u8>("paper_example", v))
        .transpose()?;
    let mut map = match example {
        Some(n) => preset(n)?,
        None => BTreeMap::new(),
    };
    map.extend(file);
    map.extend(flags);
    Ok(map)
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| bad(key, format!("`{v}`: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').map(|x| parse_num(key, x)).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(f64, f64), CliError> {
    match parse_list(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(bad(key, "expected two comma-separated numbers")),
    }
}

fn parse_obstacle(v: &str) -> Result<Option<ObstacleMapSpec>, CliError> {
    let key = "obstacle";
    let (name, args) = match v.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a)),
        None => (v.trim(), None),
    };
    let spec = match (name, args) {
        ("none", None) => return Ok(None),
        ("constant", Some(a)) => ObstacleMapSpec::constant(parse_num(key, a)?),
        ("constant", None) => return Err(bad(key, "constant needs a value, e.g. constant:0.01")),
        ("example1", a) => {
            let (scale, delta) = a.map_or(Ok((5.0, DEFAULT_DELTA)), |a| parse_pair(key, a))?;
            ObstacleMapSpec::Example1 { scale, delta }
        }
        ("example2", a) => {
            let (scale, delta) = a.map_or(Ok((2.0, DEFAULT_DELTA)), |a| parse_pair(key, a))?;
            ObstacleMapSpec::Example2 { scale, delta }
        }
        ("example3", a) => ObstacleMapSpec::Example3Impulse {
            nu: a.map_or(Ok(DEFAULT_NU), |a| parse_num(key, a))?,
        },
        ("example4", a) => {
            let (scale, delta) = a.map_or(Ok((1.45, DEFAULT_DELTA)), |a| parse_pair(key, a))?;
            ObstacleMapSpec::Example4 { scale, delta }
        }
        _ => return Err(bad(key, format!("unknown obstacle `{v}`"))),
    };
    spec.validate().map_err(|e| bad(key, e))?;
    Ok(Some(spec))
}

fn render_obstacle(spec: Option<ObstacleMapSpec>) -> String {
    match spec {
        None => "none".into(),
        Some(ObstacleMapSpec::Constant { value }) => format!("constant:{value:?}"),
        Some(ObstacleMapSpec::Example1 { scale, delta }) => format!("example1:{scale:?},{delta:?}"),
        Some(ObstacleMapSpec::Example2 { scale, delta }) => format!("example2:{scale:?},{delta:?}"),
        Some(ObstacleMapSpec::Example3Impulse { nu }) => format!("example3:{nu:?}"),
        Some(ObstacleMapSpec::Example4 { scale, delta }) => format!("example4:{scale:?},{delta:?}"),
    }
}

fn num_vertices(n_dim: usize, m: usize) -> usize {
    (m + 1).pow(n_dim as u32)
}

fn num_elements(n_dim: usize, m: usize) -> usize {
    if n_dim == 1 {
        m
    } else {
        2 * m * m
    }
}

fn parse_source(v: &str, n_dim: usize, m: usize) -> Result<Source, CliError> {
    let key = "f";
    let v = v.trim();
    if let Some(path) = v.strip_prefix("file:") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(key, format!("cannot read {path}: {e}")))?;
        let values: Vec<f64> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| parse_num(key, l))
            .collect::<Result<_, _>>()?;
        let expected = num_vertices(n_dim, m);
        if values.len() != expected {
            return Err(bad(
                key,
                format!(
                    "{path} holds {} values, the mesh has {expected} vertices",
                    values.len()
                ),
            ));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(bad(key, format!("{path} contains non-finite values")));
        }
        return Ok(Source::File {
            path: PathBuf::from(path),
            values,
            sha256: hex::encode(Sha256::digest(text.as_bytes())),
        });
    }
    if let Some(idx) = v.strip_prefix("eigenfunction:") {
        let parts: Vec<usize> = idx
            .split(',')
            .map(|x| parse_num(key, x))
            .collect::<Result<_, _>>()?;
        let (k, l) = match (n_dim, parts.as_slice()) {
            (1, [k]) => (*k, 0),
            (_, [k, l]) => (*k, *l),
            _ => {
                return Err(bad(
                    key,
                    "expected eigenfunction:k,l (eigenfunction:k in 1D)",
                ))
            }
        };
        if k == 0 || (n_dim == 2 && l == 0) {
            return Err(bad(key, "eigenfunction indices start at 1"));
        }
        return Ok(Source::Eigenfunction(k, if n_dim == 1 { 0 } else { l }));
    }
    match v {
        "bump" => Ok(Source::Bump),
        "one" => Ok(Source::One),
        _ => Err(bad(
            key,
            format!("`{v}`: expected bump, one, eigenfunction:k,l or file:path"),
        )),
    }
}

fn check(ok: bool, key: &str, reason: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(bad(key, reason))
    }
}

impl RunConfig {
    /// Validates and expands every default. Nothing mesh-sized is allocated
    /// here apart from reading a nodal `f` file.
    pub fn resolve(
        mode: Mode,
        map: &BTreeMap<String, String>,
        out: PathBuf,
    ) -> Result<Self, CliError> {
        for k in map.keys() {
            if !KEYS.contains(&k.as_str()) {
                return Err(CliError::Config(format!("unknown key `{k}`")));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        macro_rules! num {
            ($k:literal, $default:expr) => {
                match get($k) {
                    Some(v) => parse_num($k, v)?,
                    None => $default,
                }
            };
        }

        let paper_example: Option<u8> = get("paper_example")
            .map(|v| parse_num("paper_example", v))
            .transpose()?;
        if let Some(n) = paper_example {
            check(
                (1..=4).contains(&n),
                "paper_example",
                "must be 1, 2, 3 or 4",
            )?;
        }
        if mode == Mode::PaperExample && paper_example.is_none() {
            return Err(bad(
                "paper_example",
                "paper-example needs an example number 1..4",
            ));
        }

        let s: f64 = num!("s", 0.5);
        check(s > 0.0 && s < 1.0, "s", "must lie in (0,1)")?;
        let n_dim: usize = num!("n_dim", 2);
        check(n_dim == 1 || n_dim == 2, "n_dim", "must be 1 or 2")?;
        let m: usize = num!("m", 16);
        check(m >= 2, "m", "must be at least 2")?;
        check(m <= 4096, "m", "must be at most 4096")?;
        let layers: usize = num!("layers", 43);
        check(layers >= 1, "layers", "must be at least 1")?;

        let floor = gamma_floor(s).map_err(|e| bad("s", e))?;
        let gamma = match get("gamma") {
            None | Some("auto") => default_gamma(s).map_err(|e| bad("gamma", e))?,
            Some(v) => parse_num("gamma", v)?,
        };
        check(
            gamma.is_finite() && gamma > floor,
            "gamma",
            &format!("must exceed 3/(2s) = {floor}"),
        )?;

        let tau = match (get("tau"), mode) {
            (None | Some("auto"), Mode::Truncation) => vec![1.0, 2.0, 3.0, 4.0],
            (None | Some("auto"), _) => {
                vec![1.0 + (num_elements(n_dim, m) as f64).ln() / 3.0]
            }
            (Some(v), _) => parse_list("tau", v)?,
        };
        check(
            tau.iter().all(|t| t.is_finite() && *t > 0.0),
            "tau",
            "must be finite and positive",
        )?;
        if mode == Mode::Truncation {
            check(
                tau.windows(2).all(|w| w[1] > w[0]),
                "tau",
                "truncation values must be strictly increasing",
            )?;
            check(
                tau[0] >= 1.0,
                "tau",
                "truncation values must be at least 1 (the graded part spans [0,1])",
            )?;
        } else {
            check(
                tau.len() == 1,
                "tau",
                "a single value is expected outside truncation",
            )?;
        }
        let tail_per_unit: usize = num!("tail_per_unit", 8);
        check(tail_per_unit >= 1, "tail_per_unit", "must be at least 1")?;

        let obstacle = match get("obstacle") {
            Some(v) => parse_obstacle(v)?,
            None => None,
        };
        let f = parse_source(get("f").unwrap_or("bump"), n_dim, m)?;

        let ssn = SsnConfig {
            mu_bar: num!("mu_bar", 0.0),
            theta0: num!("theta0", 10.0),
            theta_ratio: num!("theta_ratio", 1.5),
            theta_max: num!("theta_max", 1e10),
            eps2: num!("eps2", 1e-2),
            k_max: num!("k_max", 10),
        };
        let qvi = QVIConfig {
            eps1: num!("eps1", 5e-4),
            n_max: num!("n_max", 150),
            tau_rule: TauRule::Fixed(tau[0]),
            ssn,
        };
        qvi.validate()
            .map_err(|e| CliError::Config(e.to_string()))?;

        let backend = match get("backend").unwrap_or("condensed") {
            "condensed" => Backend::Condensed,
            "pcg" => {
                let cfg = PcgConfig {
                    rel_tol: num!("pcg_tol", 1e-10),
                    ..PcgConfig::default()
                };
                cfg.validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
                Backend::Pcg(cfg)
            }
            v => return Err(bad("backend", format!("`{v}`: expected condensed or pcg"))),
        };
        let mass = match get("mass").unwrap_or("lumped") {
            "lumped" => MassTreatment::Lumped,
            "consistent" => MassTreatment::Consistent,
            v => return Err(bad("mass", format!("`{v}`: expected lumped or consistent"))),
        };

        let oracle: bool = num!("oracle", false);
        let oracle_k_max: usize = num!("oracle_k_max", 99);
        check(oracle_k_max >= 1, "oracle_k_max", "must be at least 1")?;
        let psor_tol: f64 = num!("psor_tol", 1e-12);
        check(
            psor_tol > 0.0 && psor_tol < 1.0,
            "psor_tol",
            "must lie in (0,1)",
        )?;
        let psor_max_sweeps: usize = num!("psor_max_sweeps", 100_000);
        check(
            psor_max_sweeps >= 1,
            "psor_max_sweeps",
            "must be at least 1",
        )?;
        let seed: u64 = num!("seed", 0);

        match mode {
            Mode::Vi | Mode::Oracle if obstacle.is_some() => check(
                matches!(obstacle, Some(ObstacleMapSpec::Constant { .. })),
                "obstacle",
                "vi and oracle accept only a constant obstacle",
            )?,
            Mode::Vi => return Err(bad("obstacle", "vi needs an obstacle, e.g. constant:0.01")),
            Mode::Qvi | Mode::Truncation | Mode::PaperExample => check(
                obstacle.is_some(),
                "obstacle",
                "an obstacle map is required",
            )?,
            _ => {}
        }
        if mode == Mode::Oracle && obstacle.is_none() {
            check(
                !matches!(f, Source::File { .. }),
                "f",
                "the spectral oracle needs an analytic f",
            )?;
        }
        if oracle {
            check(
                matches!(mode, Mode::Linear | Mode::Vi),
                "oracle",
                "the oracle comparison is available for linear and vi",
            )?;
            let psor = mode == Mode::Vi;
            let dense = (m - 1).pow(n_dim as u32);
            check(
                !psor || dense <= 4096,
                "oracle",
                "the dense VI oracle is limited to 4096 interior nodes",
            )?;
            check(
                psor || !matches!(f, Source::File { .. }),
                "oracle",
                "the spectral oracle needs an analytic f",
            )?;
        }

        Ok(RunConfig {
            mode,
            paper_example,
            s,
            n_dim,
            m,
            layers,
            gamma,
            tau,
            tail_per_unit,
            obstacle,
            f,
            qvi,
            backend,
            mass,
            oracle,
            oracle_k_max,
            psor_tol,
            psor_max_sweeps,
            seed,
            out,
        })
    }

    /// Canonical `key=value` listing of the resolved configuration; the
    /// output directory is excluded so that runs are comparable across
    /// locations.
    pub fn render(&self) -> String {
        let ssn = &self.qvi.ssn;
        let float = |x: f64| format!("{x:?}");
        let tau: Vec<String> = self.tau.iter().map(|t| float(*t)).collect();
        let mut pairs: Vec<(&str, String)> = vec![
            ("mode", self.mode.name().into()),
            (
                "paper_example",
                self.paper_example.map_or("none".into(), |n| n.to_string()),
            ),
            ("s", float(self.s)),
            ("n_dim", self.n_dim.to_string()),
            ("m", self.m.to_string()),
            ("layers", self.layers.to_string()),
            ("gamma", float(self.gamma)),
            ("tau", tau.join(",")),
        ];
        if self.mode == Mode::Truncation {
            pairs.push(("tail_per_unit", self.tail_per_unit.to_string()));
        }
        pairs.extend([
            ("obstacle", render_obstacle(self.obstacle)),
            ("f", self.f.render()),
        ]);
        if let Source::File { sha256, .. } = &self.f {
            pairs.push(("f_sha256", sha256.clone()));
        }
        pairs.extend([
            ("eps1", float(self.qvi.eps1)),
            ("n_max", self.qvi.n_max.to_string()),
            ("eps2", float(ssn.eps2)),
            ("theta0", float(ssn.theta0)),
            ("theta_ratio", float(ssn.theta_ratio)),
            ("theta_max", float(ssn.theta_max)),
            ("k_max", ssn.k_max.to_string()),
            ("mu_bar", float(ssn.mu_bar)),
        ]);
        match self.backend {
            Backend::Condensed => pairs.push(("backend", "condensed".into())),
            Backend::Pcg(cfg) => {
                pairs.push(("backend", "pcg".into()));
                pairs.push(("pcg_tol", float(cfg.rel_tol)));
            }
        }
        pairs.extend([
            ("mass", self.mass.name().into()),
            ("oracle", self.oracle.to_string()),
            ("oracle_k_max", self.oracle_k_max.to_string()),
            ("psor_tol", float(self.psor_tol)),
            ("psor_max_sweeps", self.psor_max_sweeps.to_string()),
            ("seed", self.seed.to_string()),
        ]);
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.render().as_bytes()))
    }
}
