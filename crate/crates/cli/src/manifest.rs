//! Run manifests: what was run, on which inputs, and what it produced.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use centipede_qre::Error;
use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Cli;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Files written by one command, relative to its output directory.
pub struct Outputs {
    dir: PathBuf,
    pub files: Vec<FileDigest>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), Error> {
        let bytes = contents.as_ref();
        fs::write(self.dir.join(name), bytes)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileDigest {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    /// Arguments after the program name.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    pub seed: u64,
    pub threads: usize,
    /// Parsed arguments, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

impl Manifest {
    pub fn new(
        cli: &Cli,
        argv: &[String],
        inputs: &[PathBuf],
        out: &Outputs,
    ) -> Result<Self, Error> {
        let config = serde_json::to_value(cli)?;
        let command = config["command"]
            .as_object()
            .and_then(|o| o.keys().next().cloned())
            .unwrap_or_default();
        let inputs = inputs
            .iter()
            .map(|p| {
                Ok(FileDigest {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&fs::read(p)?),
                })
            })
            .collect::<Result<_, Error>>()?;
        Ok(Manifest {
            command: command.to_lowercase(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            argv: argv.to_vec(),
            cwd: std::env::current_dir()?,
            seed: cli.seed,
            threads: cli.threads,
            config,
            inputs,
            outputs: out.files.clone(),
        })
    }

    pub fn file_name(&self) -> String {
        format!("manifest-{}.json", self.command)
    }

    pub fn write(&self, dir: &Path) -> Result<(), Error> {
        fs::write(
            dir.join(self.file_name()),
            serde_json::to_string_pretty(self)? + "\n",
        )?;
        Ok(())
    }
}

/// `argv` with every `--out-dir` replaced by `dir`.
fn redirect(argv: &[String], dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out-dir" {
            skip = true;
        } else if !a.starts_with("--out-dir=") {
            out.push(a.clone());
        }
    }
    out.push("--out-dir".into());
    out.push(dir.display().to_string());
    out
}

/// Reruns the recorded command into `out_dir` and compares every output digest.
pub fn replay(path: &Path, out_dir: &Path) -> Result<ExitCode, Error> {
    let m: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if m.command == "replay" {
        return Err(Error::Usage("cannot replay a replay".into()));
    }
    if m.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, running {}",
            m.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    fs::create_dir_all(out_dir)?;
    let out_dir = fs::canonicalize(out_dir)?;
    std::env::set_current_dir(&m.cwd)?;
    for input in &m.inputs {
        let now = sha256_hex(&fs::read(&input.path)?);
        if now != input.sha256 {
            return Err(Error::Domain(format!(
                "input {} changed since the recorded run",
                input.path
            )));
        }
    }
    let argv = redirect(&m.argv, &out_dir);
    let cli =
        Cli::try_parse_from(std::iter::once("centipede".to_string()).chain(argv.iter().cloned()))
            .map_err(|e| Error::Usage(e.to_string()))?;
    let code = crate::run(&cli, &argv)?;
    let mut same = true;
    for f in &m.outputs {
        let now = fs::read(out_dir.join(&f.path))
            .map(|b| sha256_hex(&b))
            .unwrap_or_default();
        let ok = now == f.sha256;
        same &= ok;
        println!("{} {}", if ok { "identical" } else { "DIFFERS  " }, f.path);
    }
    if !same {
        return Ok(ExitCode::from(1));
    }
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn redirect_replaces_every_form() {
        let argv: Vec<String> = ["--out-dir", "a", "fit", "--out-dir=b", "--all"]
            .map(String::from)
            .to_vec();
        assert_eq!(
            redirect(&argv, Path::new("/x")),
            ["fit", "--all", "--out-dir", "/x"]
        );
    }
}
