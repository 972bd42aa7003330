//! Run configuration: space and scale-function specs shared by every
//! subcommand, optional TOML config files whose values back-fill flags,
//! and loaders for the small file formats (presentations, edge lists,
//! matrices, vertex maps, index matchings).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;
use subatlas_core::kappa::SublinearFunction;
use subatlas_core::space::{GroupPresentation, PointedSpace, Word};

/// Failure that should stop the run before any experiment output is
/// produced: bad flags, unreadable files, malformed config. Mapped to
/// exit code 2 by main.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type CliResult<T> = Result<T, ConfigError>;

pub fn err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(ConfigError(msg.into()))
}

/// `[space]` section of a config file. Field names mirror the CLI flags.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub spec: Option<String>,
    pub radius: Option<u32>,
    pub margin: Option<u32>,
    pub basepoint: Option<u32>,
}

/// `[kappa]` section of a config file.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KappaSection {
    pub family: Option<String>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    pub quad_tol: Option<f64>,
    pub floor: Option<f64>,
}

/// Parsed TOML config file. Every field is optional; explicit CLI flags
/// always win over config values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub space: SpaceSection,
    #[serde(default)]
    pub kappa: KappaSection,
    #[serde(default)]
    pub params: toml::Table,
}

impl FileConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| ConfigError(format!("config {}: {e}", path.display())))
    }

    fn param(&self, name: &str) -> Option<&toml::Value> {
        self.params.get(name)
    }

    pub fn param_f64(&self, name: &str) -> CliResult<Option<f64>> {
        match self.param(name) {
            None => Ok(None),
            Some(toml::Value::Float(x)) => Ok(Some(*x)),
            Some(toml::Value::Integer(x)) => Ok(Some(*x as f64)),
            Some(v) => err(format!("config params.{name}: expected a number, got {v}")),
        }
    }

    pub fn param_u64(&self, name: &str) -> CliResult<Option<u64>> {
        match self.param(name) {
            None => Ok(None),
            Some(toml::Value::Integer(x)) if *x >= 0 => Ok(Some(*x as u64)),
            Some(v) => err(format!(
                "config params.{name}: expected a nonnegative integer, got {v}"
            )),
        }
    }

    pub fn param_str(&self, name: &str) -> CliResult<Option<String>> {
        match self.param(name) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => err(format!("config params.{name}: expected a string, got {v}")),
        }
    }
}

/// Resolved global context handed to every subcommand.
pub struct Ctx {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub cfg: FileConfig,
}

impl Ctx {
    /// Flag value if given, else `params.<name>` from the config file.
    pub fn f64_param(&self, flag: Option<f64>, name: &str) -> CliResult<Option<f64>> {
        match flag {
            Some(x) => Ok(Some(x)),
            None => self.cfg.param_f64(name),
        }
    }

    pub fn u64_param(&self, flag: Option<u64>, name: &str) -> CliResult<Option<u64>> {
        match flag {
            Some(x) => Ok(Some(x)),
            None => self.cfg.param_u64(name),
        }
    }

    pub fn str_param(&self, flag: Option<String>, name: &str) -> CliResult<Option<String>> {
        match flag {
            Some(x) => Ok(Some(x)),
            None => self.cfg.param_str(name),
        }
    }
}

/// Space selection flags shared by the graph-based subcommands.
#[derive(Debug, Clone, Default, Args)]
pub struct SpaceArgs {
    /// Space spec: free2 | free3 | z2 | free2-ab, a presentation file, or
    /// an edge-list CSV (rows `u,v,weight`)
    #[arg(long)]
    pub space: Option<String>,
    /// Ball radius for presentation-based spaces
    #[arg(long)]
    pub radius: Option<u32>,
    /// Override the boundary margin (default: radius / 4)
    #[arg(long)]
    pub margin: Option<u32>,
    /// Basepoint vertex id for edge-list spaces
    #[arg(long)]
    pub basepoint: Option<u32>,
}

/// Second space for two-space subcommands; same spec grammar.
#[derive(Debug, Clone, Default, Args)]
pub struct CodomainArgs {
    /// Codomain space spec (same grammar as --space)
    #[arg(long)]
    pub codomain: Option<String>,
    /// Codomain ball radius
    #[arg(long)]
    pub codomain_radius: Option<u32>,
    /// Codomain margin override
    #[arg(long)]
    pub codomain_margin: Option<u32>,
    /// Codomain basepoint for edge-list spaces
    #[arg(long)]
    pub codomain_basepoint: Option<u32>,
}

/// Fully resolved space spec, echoed into the manifest.
#[derive(Debug, Clone)]
pub struct ResolvedSpace {
    pub spec: String,
    pub radius: u32,
    pub margin: Option<u32>,
    pub basepoint: u32,
}

pub fn resolve_space(ctx: &Ctx, args: &SpaceArgs) -> CliResult<ResolvedSpace> {
    let spec = match args.space.clone().or_else(|| ctx.cfg.space.spec.clone()) {
        Some(s) => s,
        None => return err("no space given: pass --space or set [space] spec in the config"),
    };
    Ok(ResolvedSpace {
        spec,
        radius: args.radius.or(ctx.cfg.space.radius).unwrap_or(6),
        margin: args.margin.or(ctx.cfg.space.margin),
        basepoint: args.basepoint.or(ctx.cfg.space.basepoint).unwrap_or(0),
    })
}

/// Codomain never falls back to the `[space]` config section: a missing
/// codomain spec is an error, not a silent self-map.
pub fn resolve_codomain(args: &CodomainArgs) -> CliResult<ResolvedSpace> {
    let spec = match args.codomain.clone() {
        Some(s) => s,
        None => return err("no codomain given: pass --codomain"),
    };
    Ok(ResolvedSpace {
        spec,
        radius: args.codomain_radius.unwrap_or(6),
        margin: args.codomain_margin,
        basepoint: args.codomain_basepoint.unwrap_or(0),
    })
}

pub fn build_space(rs: &ResolvedSpace) -> CliResult<PointedSpace> {
    let space = match rs.spec.as_str() {
        "free2" => ball(GroupPresentation::free(2), rs)?,
        "free3" => ball(GroupPresentation::free(3), rs)?,
        "z2" => ball(GroupPresentation::z2(), rs)?,
        "free2-ab" => ball(GroupPresentation::free2_with_ab(), rs)?,
        path => {
            let p = Path::new(path);
            if !p.exists() {
                return err(format!("space file not found: {path}"));
            }
            let text = fs::read_to_string(p)
                .map_err(|e| ConfigError(format!("space file {path}: {e}")))?;
            if looks_like_presentation(&text) {
                ball(parse_presentation(&text, path)?, rs)?
            } else {
                let edges = parse_edge_list(&text, path)?;
                PointedSpace::from_edges(&edges, rs.basepoint)
                    .map_err(|e| ConfigError(format!("space file {path}: {e}")))?
            }
        }
    };
    Ok(match rs.margin {
        Some(m) => space.with_margin(m),
        None => space,
    })
}

/// Builds the space for a command that probes to an explicit depth. With
/// no radius given the ball is sized to that depth; on trees an unset
/// margin then shrinks so the probed depth stays trusted (every distance
/// inside a tree ball is exact, truncation only hides deeper vertices).
/// `keep_margin` disables the shrink for commands that need the
/// truncation guard itself.
pub fn build_space_for_depth(
    ctx: &Ctx,
    args: &SpaceArgs,
    depth: Option<u32>,
    keep_margin: bool,
) -> CliResult<(ResolvedSpace, PointedSpace)> {
    let mut rs = resolve_space(ctx, args)?;
    let radius_given = args.radius.or(ctx.cfg.space.radius).is_some();
    if let Some(d) = depth {
        if !radius_given && d > rs.radius {
            rs.radius = d;
        }
    }
    let mut s = build_space(&rs)?;
    if let Some(d) = depth {
        let shrinkable = !keep_margin
            && rs.margin.is_none()
            && s.is_tree()
            && d <= s.radius();
        if shrinkable && s.trusted_radius() < d {
            let m = s.radius() - d;
            s = s.with_margin(m);
        }
    }
    Ok((rs, s))
}

fn ball(g: GroupPresentation, rs: &ResolvedSpace) -> CliResult<PointedSpace> {
    PointedSpace::cayley_ball(&g, rs.radius)
        .map_err(|e| ConfigError(format!("space {}: {e}", rs.spec)))
}

fn looks_like_presentation(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.starts_with("gens:") || l.starts_with("rel:"))
}

/// Presentation text: one `gens: a b c` line naming consecutive letters
/// from `a`, then any number of `rel: abAB` lines (capitals are inverses).
fn parse_presentation(text: &str, path: &str) -> CliResult<GroupPresentation> {
    let mut rank = 0usize;
    let mut relators: Vec<Word> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| ConfigError(format!("{path}:{}: {msg}", lineno + 1));
        if let Some(rest) = line.strip_prefix("gens:") {
            let names: Vec<&str> = rest.split_whitespace().collect();
            for (i, name) in names.iter().enumerate() {
                let want = (b'a' + i as u8) as char;
                if name.len() != 1 || name.chars().next() != Some(want) {
                    return Err(fail(format!(
                        "generators must be consecutive letters from `a`; expected `{want}`, got `{name}`"
                    )));
                }
            }
            rank = names.len();
        } else if let Some(rest) = line.strip_prefix("rel:") {
            if rank == 0 {
                return Err(fail("rel: before gens:".into()));
            }
            let mut word: Word = Vec::new();
            for ch in rest.trim().chars() {
                let (base, sign) = if ch.is_ascii_lowercase() {
                    (ch as u8 - b'a', 1)
                } else if ch.is_ascii_uppercase() {
                    (ch as u8 - b'A', -1)
                } else {
                    return Err(fail(format!("bad relator letter `{ch}`")));
                };
                if base as usize >= rank {
                    return Err(fail(format!("relator letter `{ch}` outside the generators")));
                }
                word.push(sign * (base as i32 + 1));
            }
            relators.push(word);
        } else {
            return Err(fail("expected `gens:` or `rel:`".into()));
        }
    }
    if rank == 0 {
        return err(format!("{path}: no gens: line"));
    }
    GroupPresentation::new(rank, relators).map_err(|e| ConfigError(format!("{path}: {e}")))
}

/// Edge-list CSV: rows `u,v` or `u,v,weight`; an optional header line and
/// `#` comments are skipped.
fn parse_edge_list(text: &str, path: &str) -> CliResult<Vec<(u32, u32, u32)>> {
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields.iter().any(|f| f.parse::<u32>().is_err()) {
            continue; // header
        }
        let fail = |msg: String| ConfigError(format!("{path}:{}: {msg}", lineno + 1));
        if fields.len() != 2 && fields.len() != 3 {
            return Err(fail(format!("expected u,v[,weight], got {} fields", fields.len())));
        }
        let num = |s: &str| -> Result<u32, ConfigError> {
            s.parse::<u32>().map_err(|_| fail(format!("bad integer `{s}`")))
        };
        let u = num(fields[0])?;
        let v = num(fields[1])?;
        let w = if fields.len() == 3 { num(fields[2])? } else { 1 };
        edges.push((u, v, w));
    }
    if edges.is_empty() {
        return err(format!("{path}: no edges"));
    }
    Ok(edges)
}

/// Scale-function flags shared by every subcommand that integrates kappa.
#[derive(Debug, Clone, Default, Args)]
pub struct KappaArgs {
    /// Scale family: constant | log | power | power-over-log | table:<path>
    #[arg(long)]
    pub kappa: Option<String>,
    /// Multiplicative constant of the family
    #[arg(long)]
    pub kappa_c: Option<f64>,
    /// Exponent for the power families
    #[arg(long)]
    pub kappa_p: Option<f64>,
    /// Quadrature tolerance for the scale antiderivative
    #[arg(long)]
    pub quad_tol: Option<f64>,
    /// Lower clamp on the scale function
    #[arg(long)]
    pub kappa_floor: Option<f64>,
}

/// Resolved scale spec, echoed into the manifest.
#[derive(Debug, Clone)]
pub struct ResolvedKappa {
    pub family: String,
    pub c: f64,
    pub p: f64,
    pub quad_tol: Option<f64>,
    pub floor: Option<f64>,
}

pub fn resolve_kappa(ctx: &Ctx, args: &KappaArgs) -> CliResult<ResolvedKappa> {
    Ok(ResolvedKappa {
        family: args
            .kappa
            .clone()
            .or_else(|| ctx.cfg.kappa.family.clone())
            .unwrap_or_else(|| "constant".into()),
        c: args.kappa_c.or(ctx.cfg.kappa.c).unwrap_or(1.0),
        p: args.kappa_p.or(ctx.cfg.kappa.p).unwrap_or(0.5),
        quad_tol: args.quad_tol.or(ctx.cfg.kappa.quad_tol),
        floor: args.kappa_floor.or(ctx.cfg.kappa.floor),
    })
}

pub fn build_kappa(rk: &ResolvedKappa) -> CliResult<SublinearFunction> {
    let mut f = match rk.family.as_str() {
        "constant" => SublinearFunction::constant(rk.c),
        "log" => Ok(SublinearFunction::log()),
        "power" => SublinearFunction::power(rk.p),
        "power-over-log" => Ok(SublinearFunction::power_over_log()),
        other => match other.strip_prefix("table:") {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| ConfigError(format!("kappa table {path}: {e}")))?;
                SublinearFunction::from_table(&parse_table(&text, path)?)
            }
            None => {
                return err(format!(
                    "unknown kappa family `{other}` (constant | log | power | power-over-log | table:<path>)"
                ))
            }
        },
    }
    .map_err(|e| ConfigError(format!("kappa {}: {e}", rk.family)))?;
    if let Some(floor) = rk.floor {
        f = f
            .with_floor(floor)
            .map_err(|e| ConfigError(format!("kappa floor {floor}: {e}")))?;
    }
    if let Some(tol) = rk.quad_tol {
        f = f
            .with_quad_tol(tol)
            .map_err(|e| ConfigError(format!("quad tol {tol}: {e}")))?;
    }
    Ok(f)
}

/// Scale table CSV: rows `t,value`, strictly increasing in `t`.
fn parse_table(text: &str, path: &str) -> CliResult<Vec<(f64, f64)>> {
    let mut rows = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fail = |msg: String| ConfigError(format!("{path}:{}: {msg}", lineno + 1));
        let (t, v) = line
            .split_once(',')
            .ok_or_else(|| fail("expected t,value".into()))?;
        let parse = |s: &str| -> Result<f64, ConfigError> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| fail(format!("bad number `{s}`")))
        };
        rows.push((parse(t)?, parse(v)?));
    }
    if rows.is_empty() {
        return err(format!("{path}: empty table"));
    }
    Ok(rows)
}

/// Square matrix CSV: n rows of n comma-separated floats.
pub fn load_matrix(path: &str) -> CliResult<(usize, Vec<f64>)> {
    let text =
        fs::read_to_string(path).map_err(|e| ConfigError(format!("matrix {path}: {e}")))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        match row {
            Ok(r) => rows.push(r),
            Err(_) => {
                return err(format!("{path}:{}: bad matrix row", lineno + 1));
            }
        }
    }
    let n = rows.len();
    if n == 0 {
        return err(format!("{path}: empty matrix"));
    }
    let mut entries = Vec::with_capacity(n * n);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return err(format!(
                "{path}: row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            ));
        }
        entries.extend_from_slice(row);
    }
    Ok((n, entries))
}

/// Vertex map CSV: rows `x_id,y_id`, one per domain vertex id 0..n.
pub fn load_vertex_map(path: &str, domain_len: usize) -> CliResult<Vec<u32>> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError(format!("map {path}: {e}")))?;
    let mut table = vec![None; domain_len];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("x_id") {
            continue;
        }
        let fail = |msg: String| ConfigError(format!("{path}:{}: {msg}", lineno + 1));
        let (x, y) = line
            .split_once(',')
            .ok_or_else(|| fail("expected x_id,y_id".into()))?;
        let x: usize = x
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad x_id `{x}`")))?;
        let y: u32 = y
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad y_id `{y}`")))?;
        if x >= domain_len {
            return Err(fail(format!("x_id {x} outside the domain (n = {domain_len})")));
        }
        if table[x].replace(y).is_some() {
            return Err(fail(format!("duplicate x_id {x}")));
        }
    }
    let missing = table.iter().filter(|e| e.is_none()).count();
    if missing > 0 {
        return err(format!("map {path}: {missing} domain vertices have no image"));
    }
    Ok(table.into_iter().map(Option::unwrap).collect())
}

/// Atlas matching CSV: rows `i,j` pairing direction indices.
pub fn load_matching(path: &str, len: usize) -> CliResult<Vec<usize>> {
    let text =
        fs::read_to_string(path).map_err(|e| ConfigError(format!("matching {path}: {e}")))?;
    let mut table = vec![None; len];
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("i,") {
            continue;
        }
        let fail = |msg: String| ConfigError(format!("{path}:{}: {msg}", lineno + 1));
        let (i, j) = line
            .split_once(',')
            .ok_or_else(|| fail("expected i,j".into()))?;
        let i: usize = i
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad index `{i}`")))?;
        let j: usize = j
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad index `{j}`")))?;
        if i >= len {
            return Err(fail(format!("index {i} outside the atlas (n = {len})")));
        }
        if table[i].replace(j).is_some() {
            return Err(fail(format!("duplicate index {i}")));
        }
    }
    let missing = table.iter().filter(|e| e.is_none()).count();
    if missing > 0 {
        return err(format!("matching {path}: {missing} directions unmatched"));
    }
    Ok(table.into_iter().map(Option::unwrap).collect())
}

/// Comma-separated float list flag, e.g. `--grid 0.5,0.25,0.125`.
pub fn parse_f64_list(s: &str, what: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| ConfigError(format!("bad {what} entry `{p}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> Ctx {
        Ctx {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 1,
            cfg: FileConfig::default(),
        }
    }

    #[test]
    fn presets_build_with_flag_overrides() {
        let rs = resolve_space(
            &ctx(),
            &SpaceArgs {
                space: Some("free2".into()),
                radius: Some(3),
                margin: Some(0),
                basepoint: None,
            },
        )
        .unwrap();
        let s = build_space(&rs).unwrap();
        assert_eq!(s.radius(), 3);
        assert_eq!(s.margin(), 0);
        assert_eq!(s.vertex_count(), 53);
    }

    #[test]
    fn config_values_back_fill_missing_flags() {
        let cfg: FileConfig = toml::from_str(
            "seed = 9\n[space]\nspec = \"z2\"\nradius = 4\n[kappa]\nfamily = \"log\"\nc = 2.0\n[params]\nepsilon = 0.5\n",
        )
        .unwrap();
        let ctx = Ctx {
            seed: cfg.seed.unwrap(),
            out: PathBuf::from("out"),
            threads: 1,
            cfg,
        };
        let rs = resolve_space(&ctx, &SpaceArgs::default()).unwrap();
        assert_eq!((rs.spec.as_str(), rs.radius), ("z2", 4));
        let rk = resolve_kappa(&ctx, &KappaArgs::default()).unwrap();
        assert_eq!((rk.family.as_str(), rk.c), ("log", 2.0));
        assert_eq!(ctx.f64_param(None, "epsilon").unwrap(), Some(0.5));
        assert_eq!(ctx.f64_param(Some(0.7), "epsilon").unwrap(), Some(0.7));
    }

    #[test]
    fn bad_config_reports_the_offending_field() {
        let e = toml::from_str::<FileConfig>("[kappa]\nfamily = 3\n").unwrap_err();
        assert!(e.to_string().contains("family"));
    }

    #[test]
    fn presentation_text_round_trips_through_a_ball() {
        let rs = ResolvedSpace {
            spec: "unused".into(),
            radius: 2,
            margin: None,
            basepoint: 0,
        };
        let g = parse_presentation("gens: a b\nrel: abAB\n", "inline").unwrap();
        let s = PointedSpace::cayley_ball(&g, rs.radius).unwrap();
        assert_eq!(s.sphere_sizes(), vec![1, 4, 8]);
        assert!(parse_presentation("gens: a c\n", "inline").is_err());
        assert!(parse_presentation("rel: ab\n", "inline").is_err());
    }

    #[test]
    fn edge_lists_accept_headers_and_default_weights() {
        let edges = parse_edge_list("u,v,w\n0,1\n1,2,5\n", "inline").unwrap();
        assert_eq!(edges, vec![(0, 1, 1), (1, 2, 5)]);
        assert!(parse_edge_list("0,1,2,3\n", "inline").is_err());
    }

    #[test]
    fn vertex_maps_must_cover_the_domain() {
        let dir = std::env::temp_dir().join("subatlas_cfg_test");
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("map.csv");
        fs::write(&p, "x_id,y_id\n0,3\n1,2\n2,1\n").unwrap();
        let path = p.to_str().unwrap();
        assert_eq!(load_vertex_map(path, 3).unwrap(), vec![3, 2, 1]);
        assert!(load_vertex_map(path, 4).is_err());
    }
}
