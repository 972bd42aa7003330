//! Deterministic artifact emission: every float printed with 12
//! significant digits, JSON objects with fixed key order, CSV tables,
//! and a run manifest carrying the resolved config, its hash, and a
//! content hash per artifact.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

/// Render `x` with 12 significant digits, shortest-form style: plain
/// decimal for moderate exponents, scientific otherwise, trailing zeros
/// trimmed. The output is a valid JSON numeral.
pub fn sig12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let sci = format!("{:.11e}", x);
    let (mant, exp) = sci.split_once('e').expect("float format");
    let exp: i32 = exp.parse().expect("float exponent");
    let neg = mant.starts_with('-');
    let all: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    let trimmed = all.trim_end_matches('0');
    let digits = if trimmed.is_empty() { "0" } else { trimmed };
    let mut out = String::new();
    if neg {
        out.push('-');
    }
    if (-4..12).contains(&exp) {
        if exp >= 0 {
            let ip = exp as usize + 1;
            if digits.len() <= ip {
                out.push_str(digits);
                for _ in digits.len()..ip {
                    out.push('0');
                }
            } else {
                out.push_str(&digits[..ip]);
                out.push('.');
                out.push_str(&digits[ip..]);
            }
        } else {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(digits);
        }
    } else {
        out.push_str(&digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        out.push('e');
        out.push_str(&exp.to_string());
    }
    out
}

/// JSON value with insertion-ordered object keys, so that equal inputs
/// serialize to equal bytes.
#[derive(Debug, Clone)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Num(f64),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    pub fn obj() -> Self {
        Json::Obj(Vec::new())
    }

    /// Append a key; panics on non-objects, which is a programming error.
    pub fn push(&mut self, key: &str, value: Json) -> &mut Self {
        match self {
            Json::Obj(entries) => entries.push((key.into(), value)),
            _ => panic!("push on non-object"),
        }
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        self.write(&mut out, 0);
        out.push('\n');
        out
    }

    fn write(&self, out: &mut String, depth: usize) {
        match self {
            Json::Null => out.push_str("null"),
            Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            Json::Int(i) => out.push_str(&i.to_string()),
            Json::Num(x) => {
                let s = sig12(*x);
                // JSON has no nan/inf literals; quote them instead.
                if s.chars().any(|c| c.is_ascii_alphabetic() && c != 'e') {
                    out.push('"');
                    out.push_str(&s);
                    out.push('"');
                } else {
                    out.push_str(&s);
                }
            }
            Json::Str(s) => {
                out.push('"');
                for ch in s.chars() {
                    match ch {
                        '"' => out.push_str("\\\""),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        '\r' => out.push_str("\\r"),
                        c if (c as u32) < 0x20 => {
                            out.push_str(&format!("\\u{:04x}", c as u32));
                        }
                        c => out.push(c),
                    }
                }
                out.push('"');
            }
            Json::Arr(items) => {
                if items.is_empty() {
                    out.push_str("[]");
                    return;
                }
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    indent(out, depth + 1);
                    item.write(out, depth + 1);
                }
                out.push('\n');
                indent(out, depth);
                out.push(']');
            }
            Json::Obj(entries) => {
                if entries.is_empty() {
                    out.push_str("{}");
                    return;
                }
                out.push('{');
                for (i, (k, v)) in entries.iter().enumerate() {
                    if i > 0 {
                        out.push(',');
                    }
                    out.push('\n');
                    indent(out, depth + 1);
                    Json::Str(k.clone()).write(out, depth + 1);
                    out.push_str(": ");
                    v.write(out, depth + 1);
                }
                out.push('\n');
                indent(out, depth);
                out.push('}');
            }
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

pub fn jstr(s: impl Into<String>) -> Json {
    Json::Str(s.into())
}

pub fn jnums(xs: &[f64]) -> Json {
    Json::Arr(xs.iter().map(|&x| Json::Num(x)).collect())
}

/// CSV table with a fixed header; all floats go through `sig12`.
pub struct Table {
    header: String,
    rows: Vec<String>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            header: columns.join(","),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        self.rows.push(fields.join(","));
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.rows.len() + 1) * 16);
        out.push_str(&self.header);
        out.push('\n');
        for row in &self.rows {
            out.push_str(row);
            out.push('\n');
        }
        out
    }
}

/// Everything a subcommand produced: stdout lines, named artifacts, an
/// echo of the resolved configuration, and the overall verdict. `ok =
/// false` means a checked property failed and the process should exit 1.
pub struct RunOutput {
    pub command: String,
    pub lines: Vec<String>,
    pub artifacts: Vec<(String, String)>,
    pub config_echo: Json,
    pub ok: bool,
}

impl RunOutput {
    pub fn new(command: &str, config_echo: Json) -> Self {
        RunOutput {
            command: command.into(),
            lines: Vec::new(),
            artifacts: Vec::new(),
            config_echo,
            ok: true,
        }
    }

    pub fn line(&mut self, s: impl Into<String>) {
        self.lines.push(s.into());
    }

    pub fn artifact(&mut self, name: &str, contents: String) {
        self.artifacts.push((name.into(), contents));
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Write the artifacts and a manifest under `dir`, then print the run
/// summary. The manifest repeats the resolved config, hashes it, and
/// hashes every artifact; apart from `wall_ms` it is deterministic in
/// the config and seed.
pub fn emit(dir: &Path, run: &RunOutput, seed: u64, wall_ms: u128) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let config_text = run.config_echo.render();
    let mut manifest = Json::obj();
    manifest.push("tool", jstr("subatlas"));
    manifest.push(
        "versions",
        {
            let mut v = Json::obj();
            v.push("cli", jstr(env!("CARGO_PKG_VERSION")));
            v.push("core", jstr(subatlas_core::VERSION));
            v
        },
    );
    manifest.push("command", jstr(&run.command));
    manifest.push("seed", Json::Int(seed as i64));
    manifest.push("config", run.config_echo.clone());
    manifest.push("config_sha256", jstr(sha256_hex(config_text.as_bytes())));
    manifest.push("ok", Json::Bool(run.ok));
    let mut listed = Vec::new();
    for (name, contents) in &run.artifacts {
        fs::write(dir.join(name), contents)?;
        let mut entry = Json::obj();
        entry.push("file", jstr(name));
        entry.push("bytes", Json::Int(contents.len() as i64));
        entry.push("sha256", jstr(sha256_hex(contents.as_bytes())));
        listed.push(entry);
    }
    manifest.push("artifacts", Json::Arr(listed));
    manifest.push("wall_ms", Json::Int(wall_ms as i64));
    fs::write(dir.join("manifest.json"), manifest.render())?;
    // A closed pipe must not kill the run: the artifacts are the output.
    let stdout = io::stdout();
    let mut out = stdout.lock();
    for line in &run.lines {
        let _ = writeln!(out, "{line}");
    }
    for (name, _) in &run.artifacts {
        let _ = writeln!(out, "wrote {}", dir.join(name).display());
    }
    let _ = writeln!(out, "wrote {}", dir.join("manifest.json").display());
    Ok(())
}
