//! Output files. Each file carries the resolved configuration and a SHA-256
//! digest of its content, and contains nothing that varies between runs.
//!
//! * CSV: `#` comment lines with the command, the configuration as one-line
//!   JSON and the digest, then the table. The digest covers the
//!   configuration line and the table.
//! * JSON: `{"sha256", "command", "config", "data"}`; the digest covers the
//!   compact serialization of the object without the `sha256` key.
//! * SVG: the configuration and digest sit in a `<metadata>` element; the
//!   digest covers the configuration and the rest of the document.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::{CliError, RunConfig};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Shortest round-trip representation, in exponent form.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:e}")
    } else {
        v.to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One file written by a command.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

pub struct OutputDir {
    dir: PathBuf,
    command: &'static str,
    config: Value,
    config_line: String,
    written: Vec<Artifact>,
}

impl OutputDir {
    pub fn new(dir: &Path, command: &'static str, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let config = serde_json::to_value(cfg).map_err(|e| CliError::Config(e.to_string()))?;
        let config_line = config.to_string();
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config,
            config_line,
            written: Vec::new(),
        })
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.written
    }

    /// Digest of the configuration alone, used to tie checkpoints to a run.
    pub fn config_digest(&self) -> String {
        sha256_hex(self.config_line.as_bytes())
    }

    fn record(&mut self, name: &str, bytes: &[u8], sha256: String) -> Result<&Artifact, CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(Artifact { path, sha256 });
        Ok(self.written.last().expect("just pushed"))
    }

    pub fn json<T: Serialize>(&mut self, name: &str, data: &T) -> Result<&Artifact, CliError> {
        let data = serde_json::to_value(data).map_err(|e| CliError::Config(e.to_string()))?;
        let body = json!({ "command": self.command, "config": self.config, "data": data });
        let digest = sha256_hex(body.to_string().as_bytes());
        let mut doc = body;
        doc["sha256"] = Value::String(digest.clone());
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
        text.push('\n');
        self.record(name, text.as_bytes(), digest)
    }

    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<&Artifact, CliError>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = String>,
    {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        let table = w.into_inner().map_err(|e| CliError::Io(e.into_error()))?;
        let digest = csv_digest(&self.config_line, &table);
        let mut text = format!(
            "# srl {}\n# config: {}\n# sha256: {}\n",
            self.command, self.config_line, digest
        )
        .into_bytes();
        text.extend_from_slice(&table);
        self.record(name, &text, digest)
    }

    /// `document` must start with an `<svg ...>` tag.
    pub fn svg(&mut self, name: &str, document: &str) -> Result<&Artifact, CliError> {
        let digest = sha256_hex(format!("{}\n{}", self.config_line, document).as_bytes());
        let open_end = document.find('>').ok_or_else(|| CliError::Config("malformed svg".into()))? + 1;
        let meta = format!(
            "\n<metadata><![CDATA[srl {}\nconfig: {}\nsha256: {}]]></metadata>",
            self.command,
            self.config_line.replace("]]>", "]]]]><![CDATA[>"),
            digest
        );
        let text = format!("{}{}{}", &document[..open_end], meta, &document[open_end..]);
        self.record(name, text.as_bytes(), digest)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

fn csv_digest(config_line: &str, table: &[u8]) -> String {
    let mut bytes = config_line.as_bytes().to_vec();
    bytes.push(b'\n');
    bytes.extend_from_slice(table);
    sha256_hex(&bytes)
}

/// Recomputes the digest of a file written by [`OutputDir`] and compares it
/// with the embedded one.
pub fn verify(path: &Path) -> Result<bool, CliError> {
    let text = fs::read_to_string(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
    match ext {
        "json" => {
            let mut doc: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            let Some(Value::String(claimed)) = doc.as_object_mut().and_then(|o| o.remove("sha256")) else {
                return Ok(false);
            };
            Ok(sha256_hex(doc.to_string().as_bytes()) == claimed)
        }
        "csv" => {
            let mut lines = text.splitn(4, '\n');
            let (_, cfg, sha, table) = (lines.next(), lines.next(), lines.next(), lines.next());
            let (Some(cfg), Some(sha), Some(table)) = (
                cfg.and_then(|l| l.strip_prefix("# config: ")),
                sha.and_then(|l| l.strip_prefix("# sha256: ")),
                table,
            ) else {
                return Ok(false);
            };
            Ok(csv_digest(cfg, table.as_bytes()) == sha)
        }
        "svg" => {
            let (Some(start), Some(end)) = (text.find("\n<metadata>"), text.find("</metadata>")) else {
                return Ok(false);
            };
            let meta = &text[start..end];
            let field = |key: &str| meta.lines().find_map(|l| l.strip_prefix(key)).map(str::to_string);
            let (Some(cfg), Some(sha)) = (field("config: "), field("sha256: ")) else {
                return Ok(false);
            };
            let sha = sha.trim_end_matches("]]>");
            let cfg = cfg.replace("]]]]><![CDATA[>", "]]>");
            let document = format!("{}{}", &text[..start], &text[end + "</metadata>".len()..]);
            Ok(sha256_hex(format!("{cfg}\n{document}").as_bytes()) == sha)
        }
        _ => Ok(false),
    }
}

/// Table rows of a CSV artifact, without the comment header.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(csv_err)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
