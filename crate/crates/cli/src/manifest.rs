//! Run directories and the manifest every command writes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cotfm_core::error::{Error, Result};
use cotfm_core::io;
use cotfm_core::pipeline::{ExperimentConfig, Method, Seeds};
use serde::Serialize;
use serde_json::Value;

/// Epoch counts actually spent, so runs with different budgets are not
/// compared blindly.
#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct Budget {
    pub pretrain_epochs: usize,
    pub finetune_epochs_per_round: usize,
    pub rounds: usize,
    pub total_epochs: usize,
}

impl Budget {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let (rounds, per_round) = match cfg.method {
            Method::RectifiedFlow | Method::OtCfm => (0, 0),
            Method::CotFm => (cfg.alternations, cfg.finetune_epochs),
            Method::Reflow => (1, cfg.finetune_epochs * cfg.alternations.max(1)),
        };
        Budget {
            pretrain_epochs: cfg.epochs,
            finetune_epochs_per_round: per_round,
            rounds,
            total_epochs: cfg.epochs + rounds * per_round,
        }
    }
}

#[derive(Serialize, Debug)]
pub struct Manifest {
    pub tool: String,
    pub verb: String,
    pub run_id: String,
    pub args: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Seeds>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    pub rng: String,
    /// SHA-256 of every input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every output file, keyed by name inside the run directory.
    pub outputs: BTreeMap<String, String>,
    /// Wall-clock time; the only field that differs between identical runs.
    pub wall_ms: f64,
}

/// One command invocation writing into its own directory.
pub struct Run {
    pub dir: PathBuf,
    manifest: Manifest,
    manifest_path: PathBuf,
    /// Set when the run writes into a directory it does not own.
    only: Option<Vec<PathBuf>>,
    started: Instant,
}

impl Run {
    /// `<out>/<verb>-<hash>` where the hash covers the verb, its arguments
    /// and the resolved config.
    pub fn create(out: &Path, verb: &str, args: Value, cfg: Option<(&ExperimentConfig, &[String])>) -> Result<Run> {
        let key = serde_json::json!({ "verb": verb, "args": args, "config": cfg.map(|(c, _)| c.hash()) });
        let run_id = io::hex_digest(key.to_string().as_bytes())[..16].to_string();
        let dir = out.join(format!("{verb}-{run_id}"));
        std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        Ok(Run {
            manifest_path: dir.join("manifest.json"),
            dir,
            manifest: Self::blank(verb, run_id, args, cfg),
            only: None,
            started: Instant::now(),
        })
    }

    /// A run producing the single file `output`, with its manifest written
    /// next to it as `<stem>.manifest.json`.
    pub fn beside(output: &Path, verb: &str, args: Value) -> Result<Run> {
        let run_id = io::hex_digest(serde_json::json!({ "verb": verb, "args": args }).to_string().as_bytes())[..16].to_string();
        let dir = output.parent().map(Path::to_path_buf).unwrap_or_default();
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        }
        Ok(Run {
            manifest_path: output.with_extension("manifest.json"),
            dir,
            manifest: Self::blank(verb, run_id, args, None),
            only: Some(vec![output.to_path_buf()]),
            started: Instant::now(),
        })
    }

    fn blank(verb: &str, run_id: String, args: Value, cfg: Option<(&ExperimentConfig, &[String])>) -> Manifest {
        Manifest {
            tool: format!("cotfm {}", env!("CARGO_PKG_VERSION")),
            verb: verb.to_string(),
            run_id,
            args,
            config_hash: cfg.map(|(c, _)| c.hash()),
            overrides: cfg.map(|(_, o)| o.to_vec()).unwrap_or_default(),
            seeds: cfg.map(|(c, _)| c.seeds),
            budget: cfg.map(|(c, _)| Budget::of(c)),
            rng: cotfm_core::rng::ALGORITHM.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            wall_ms: 0.0,
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let h = io::file_sha256(path)?;
        self.manifest.inputs.insert(path.display().to_string(), h);
        Ok(())
    }

    /// Hash the outputs (every file under the run directory except the
    /// manifest, unless the run was created with [`Run::beside`]) and write
    /// the manifest. Returns a summary to print.
    pub fn finish(mut self, extra: Value) -> Result<Value> {
        match &self.only {
            Some(paths) => {
                for p in paths {
                    let name = p.file_name().unwrap().to_string_lossy().into_owned();
                    self.manifest.outputs.insert(name, io::file_sha256(p)?);
                }
            }
            None => {
                let mut files = Vec::new();
                collect(&self.dir, &self.dir, &mut files)?;
                for rel in files {
                    if self.dir.join(&rel) == self.manifest_path {
                        continue;
                    }
                    let h = io::file_sha256(&self.dir.join(&rel))?;
                    self.manifest.outputs.insert(rel, h);
                }
            }
        }
        self.manifest.wall_ms = self.started.elapsed().as_secs_f64() * 1e3;
        io::write_json(&self.manifest_path, &self.manifest)?;
        let mut summary = serde_json::json!({
            "verb": self.manifest.verb,
            "run_dir": self.dir.display().to_string(),
            "manifest": self.manifest_path.display().to_string(),
        });
        if let (Value::Object(s), Value::Object(e)) = (&mut summary, extra) {
            s.extend(e);
        }
        Ok(summary)
    }
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::file(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}
