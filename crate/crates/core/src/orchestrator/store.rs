//! Append-only JSONL record store, one file per (model, run).
//!
//! Layout under the output directory:
//!
//! ```text
//! plan.json                                  grid description, merged across invocations
//! records/{model}/run_{k:02}.jsonl           one ResultRecord per line
//! records/{model}/voided.jsonl               items that produced no record
//! transcripts/{model}/run_{k:02}/{qs_id}.json
//! sandboxes/{model}/run_{k:02}/{qs_id}/
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::EndState;
use crate::score::Reason;
use crate::orchestrator::OrchestratorError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model: String,
    pub run_id: u32,
    pub question_id: u32,
    pub sample_index: u32,
    pub qs_id: String,
    pub correct: bool,
    pub reason: Reason,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
    pub wall_time: f64,
    pub request_latency: f64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub steps: u32,
    pub tool_calls: u32,
    /// Absent when the item failed before a conversation started.
    pub end_state: Option<EndState>,
    pub seed: u64,
    pub expected_digest: String,
    /// Relative to the output directory; empty when no transcript exists.
    pub transcript: String,
}

impl ResultRecord {
    pub fn key(&self) -> (u32, u32) {
        (self.question_id, self.sample_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoidRecord {
    pub model: String,
    pub run_id: u32,
    pub question_id: u32,
    pub sample_index: u32,
    pub reason: String,
}

/// What a store is expected to contain.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridManifest {
    pub master_seed: u64,
    /// Samples per question id.
    pub samples: BTreeMap<u32, u32>,
    /// Run ids per model id.
    pub runs: BTreeMap<String, BTreeSet<u32>>,
}

/// File-system name for a model id.
pub fn model_slug(model: &str) -> String {
    let s: String = model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with('.') { format!("_{s}") } else { s }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Store {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("plan.json")
    }

    pub fn run_file(&self, model: &str, run: u32) -> PathBuf {
        self.root.join("records").join(model_slug(model)).join(format!("run_{run:02}.jsonl"))
    }

    pub fn voided_file(&self, model: &str) -> PathBuf {
        self.root.join("records").join(model_slug(model)).join("voided.jsonl")
    }

    pub fn transcript_rel(&self, model: &str, run: u32, qs_id: &str) -> PathBuf {
        Path::new("transcripts").join(model_slug(model)).join(format!("run_{run:02}")).join(format!("{qs_id}.json"))
    }

    pub fn sandbox_root(&self, model: &str, run: u32) -> PathBuf {
        self.root.join("sandboxes").join(model_slug(model)).join(format!("run_{run:02}"))
    }

    pub fn load_manifest(&self) -> Result<Option<GridManifest>, OrchestratorError> {
        let p = self.manifest_path();
        match fs::read_to_string(&p) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| OrchestratorError::Store(format!("{}: {e}", p.display()))),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io_err(&p)(e)),
        }
    }

    /// Merge `m` into the stored manifest. The master seed and per-question
    /// sample counts must agree with what is already there.
    pub fn merge_manifest(&self, m: &GridManifest) -> Result<GridManifest, OrchestratorError> {
        let merged = match self.load_manifest()? {
            None => m.clone(),
            Some(mut old) => {
                if old.master_seed != m.master_seed {
                    return Err(OrchestratorError::Config(format!(
                        "output directory was created with seed {}, not {}",
                        old.master_seed, m.master_seed
                    )));
                }
                for (q, n) in &m.samples {
                    match old.samples.get(q) {
                        Some(have) if have != n => {
                            return Err(OrchestratorError::Config(format!(
                                "question {q} has {have} samples in this output directory, not {n}"
                            )))
                        }
                        _ => {
                            old.samples.insert(*q, *n);
                        }
                    }
                }
                for (model, runs) in &m.runs {
                    old.runs.entry(model.clone()).or_default().extend(runs);
                }
                old
            }
        };
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let p = self.manifest_path();
        let tmp = p.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(&merged).expect("manifest serializes");
        fs::write(&tmp, text).map_err(io_err(&tmp))?;
        fs::rename(&tmp, &p).map_err(io_err(&p))?;
        Ok(merged)
    }

    /// Read a run file. With `repair`, a partial trailing line left by a
    /// crash is cut off; otherwise it is ignored.
    pub fn read_run(&self, model: &str, run: u32, repair: bool) -> Result<Vec<ResultRecord>, OrchestratorError> {
        read_jsonl(&self.run_file(model, run), repair)
    }

    pub fn read_voided(&self, model: &str) -> Result<Vec<VoidRecord>, OrchestratorError> {
        read_jsonl(&self.voided_file(model), false)
    }

    pub fn writer(&self, model: &str, run: u32) -> Result<RecordWriter, OrchestratorError> {
        RecordWriter::open(&self.run_file(model, run))
    }

    pub fn append_void(&self, v: &VoidRecord) -> Result<(), OrchestratorError> {
        let mut w = RecordWriter::open(&self.voided_file(&v.model))?;
        w.append(v)
    }

    /// Model ids with at least one run file, as recorded in the manifest.
    pub fn models(&self) -> Result<Vec<String>, OrchestratorError> {
        Ok(self.load_manifest()?.map(|m| m.runs.keys().cloned().collect()).unwrap_or_default())
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path, repair: bool) -> Result<Vec<T>, OrchestratorError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut good_len: u64 = 0;
    let mut line = Vec::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader.read_until(b'\n', &mut line).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        let complete = line.ends_with(b"\n");
        let last = reader.fill_buf().map_err(io_err(path))?.is_empty();
        match serde_json::from_slice::<T>(line.strip_suffix(b"\n").unwrap_or(&line)) {
            Ok(v) if complete => {
                out.push(v);
                good_len += n as u64;
            }
            // Only the final line may be damaged: that is where a crash
            // mid-append leaves its mark.
            _ if last => {
                log::warn!("{}: dropping partial line {lineno}", path.display());
                if repair {
                    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
                    f.set_len(good_len).map_err(io_err(path))?;
                }
                break;
            }
            Err(e) => return Err(OrchestratorError::Store(format!("{}:{lineno}: {e}", path.display()))),
            // read_until returns an unterminated line only at end of file.
            Ok(_) => unreachable!(),
        }
    }
    Ok(out)
}

/// Single appender for one JSONL file. Each record goes out in one write.
pub struct RecordWriter {
    file: File,
    path: PathBuf,
}

impl RecordWriter {
    pub fn open(path: &Path) -> Result<RecordWriter, OrchestratorError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
        Ok(RecordWriter { file, path: path.to_path_buf() })
    }

    pub fn append<T: Serialize>(&mut self, record: &T) -> Result<(), OrchestratorError> {
        let mut line = serde_json::to_vec(record).map_err(|e| OrchestratorError::Store(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))
    }
}
