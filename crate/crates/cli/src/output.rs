//! Artifact writing and the pass/fail report shared by every command.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::Config;

/// Directory receiving a command's artifacts.
pub struct OutDir {
    root: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let p = self.path(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p.clone());
        Ok(p)
    }

    /// CSV with two `#` header lines carrying the command, seed and config.
    pub fn write_csv<R: Serialize>(&mut self, name: &str, command: &str, cfg: &Config, rows: &[R]) -> Result<PathBuf> {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let body = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        let mut out = header_lines(command, cfg, "# ").into_bytes();
        out.extend(body);
        self.write_bytes(name, &out)
    }

    /// CSV with a header row built at run time.
    pub fn write_records(
        &mut self,
        name: &str,
        command: &str,
        cfg: &Config,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let body = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        let mut out = header_lines(command, cfg, "# ").into_bytes();
        out.extend(body);
        self.write_bytes(name, &out)
    }

    pub fn write_json<V: Serialize>(&mut self, name: &str, command: &str, cfg: &Config, value: &V) -> Result<PathBuf> {
        let doc = serde_json::json!({
            "command": command,
            "seed": cfg.seed,
            "config": cfg,
            "result": value,
        });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    pub fn into_files(self) -> Vec<PathBuf> {
        self.written
    }
}

pub fn header_lines(command: &str, cfg: &Config, prefix: &str) -> String {
    format!("{prefix}mqlab {command} seed={}\n{prefix}config={}\n", cfg.seed, cfg.header_json())
}

/// Reads a CSV written by [`OutDir::write_csv`].
pub fn read_csv<R: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub label: String,
    pub measured: String,
    pub threshold: String,
    pub pass: bool,
}

impl Check {
    pub fn new(label: impl Into<String>, measured: impl Into<String>, threshold: impl Into<String>, pass: bool) -> Self {
        Check { label: label.into(), measured: measured.into(), threshold: threshold.into(), pass }
    }
}

#[derive(Debug)]
pub struct CommandReport {
    pub command: &'static str,
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl CommandReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self, cfg: &Config) -> String {
        header_lines(self.command, cfg, "# ") + &self.render_checks()
    }

    /// Check lines and the overall verdict, without the header.
    pub fn render_checks(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let _ = writeln!(
                s,
                "{} {}: measured {} (threshold {})",
                if c.pass { "PASS" } else { "FAIL" },
                c.label,
                c.measured,
                c.threshold
            );
        }
        let _ = writeln!(s, "{}", if self.passed() { "overall: PASS" } else { "overall: FAIL" });
        s
    }
}

/// Writes the text report and returns the finished [`CommandReport`].
pub fn finish(command: &'static str, cfg: &Config, mut out: OutDir, checks: Vec<Check>) -> Result<CommandReport> {
    let mut report = CommandReport { command, checks, files: Vec::new() };
    let text = report.render(cfg);
    out.write_bytes(&format!("{command}_report.txt"), text.as_bytes())?;
    report.files = out.into_files();
    Ok(report)
}

/// `inf` for `None`, the number otherwise.
pub fn opt_field(v: Option<usize>) -> String {
    v.map_or_else(|| "inf".to_string(), |t| t.to_string())
}
