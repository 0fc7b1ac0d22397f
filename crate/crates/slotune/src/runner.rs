//! Durable execution of single studies and of the (optimizer, seed) matrix.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use slotune_core::sim::ServingBackend;
use slotune_core::study::ReplayError;
use slotune_core::{OptimizerKind, Study, StudySpec, TrialRecord};

use crate::error::{Error, Result};
use crate::log::{log_file_name, TrialLog};

pub const INDEX_FILE: &str = "index.json";

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// A fresh study that has observed `persisted`, ready for the next trial.
pub fn resume_replay(spec: &StudySpec, persisted: &[TrialRecord]) -> Result<Study, ReplayError> {
    let mut study = Study::new(spec.clone());
    study.replay(persisted)?;
    Ok(study)
}

/// A study bound to its log file.
#[derive(Debug)]
pub struct StudyRunner {
    study: Study,
    log: TrialLog,
    resumed: u32,
}

impl StudyRunner {
    /// Opens or creates the log at `path` and replays what it holds.
    pub fn open(spec: &StudySpec, path: &Path) -> Result<Self> {
        spec.validate().map_err(|m| Error::InvalidSettings(m.to_string()))?;
        let (log, persisted) = TrialLog::open(path)?;
        let study = resume_replay(spec, &persisted).map_err(|source| Error::Replay {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            study,
            log,
            resumed: persisted.len() as u32,
        })
    }

    pub fn study(&self) -> &Study {
        &self.study
    }

    pub fn path(&self) -> &Path {
        self.log.path()
    }

    /// Trials found in the log when it was opened.
    pub fn resumed(&self) -> u32 {
        self.resumed
    }

    pub fn is_complete(&self) -> bool {
        self.study.is_complete()
    }

    /// Runs the next trial. The record is on disk before the optimizer sees
    /// it, so an interruption at any point leaves a log that replays.
    pub fn step<B: ServingBackend>(&mut self, backend: &mut B) -> Result<TrialRecord> {
        let record = self.study.execute_trial(backend, now_ms());
        self.log.append(&record)?;
        self.study
            .commit(&record)
            .expect("a freshly executed trial always commits");
        Ok(record)
    }
}

/// Runs one study to completion, resuming from its log.
pub fn run_study<B: ServingBackend>(spec: &StudySpec, path: &Path, backend: &mut B) -> Result<StudyStatus> {
    let mut runner = StudyRunner::open(spec, path)?;
    while !runner.is_complete() {
        runner.step(backend)?;
    }
    Ok(StudyStatus::of(&runner, spec.optimizer, spec.seed, None))
}

/// The study matrix: every optimizer on every seed, sharing one template.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub seeds: Vec<u64>,
    pub optimizers: Vec<OptimizerKind>,
    /// Settings for every study; its optimizer and seed are replaced.
    pub template: StudySpec,
}

impl Matrix {
    pub fn spec(&self, optimizer: OptimizerKind, seed: u64) -> StudySpec {
        StudySpec {
            optimizer,
            seed,
            ..self.template.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Seeds executed in parallel.
    pub jobs: usize,
    /// Stop after this many new trials across the whole matrix.
    pub max_new_trials: Option<u64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            jobs: 1,
            max_new_trials: None,
        }
    }
}

/// One entry of the summary index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudyStatus {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub file: String,
    pub trials: u32,
    pub budget: u32,
    pub complete: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl StudyStatus {
    fn of(runner: &StudyRunner, optimizer: OptimizerKind, seed: u64, error: Option<String>) -> Self {
        Self {
            optimizer,
            seed,
            file: file_name(runner.path()),
            trials: runner.study().completed(),
            budget: runner.study().spec().budget,
            complete: runner.is_complete(),
            error,
        }
    }

    fn failed(matrix: &Matrix, optimizer: OptimizerKind, seed: u64, error: &Error) -> Self {
        Self {
            optimizer,
            seed,
            file: log_file_name(optimizer, seed),
            trials: 0,
            budget: matrix.template.budget,
            complete: false,
            error: Some(error.to_string()),
        }
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixOutcome {
    /// Seed-major, then in the matrix's optimizer order.
    pub studies: Vec<StudyStatus>,
    pub new_trials: u64,
}

impl MatrixOutcome {
    pub fn failures(&self) -> usize {
        self.studies.iter().filter(|s| s.error.is_some()).count()
    }

    pub fn is_complete(&self) -> bool {
        self.studies.iter().all(|s| s.complete)
    }
}

/// Shared allowance of new trials.
struct Allowance(Option<AtomicU64>);

impl Allowance {
    fn take(&self) -> bool {
        match &self.0 {
            None => true,
            Some(left) => left
                .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                .is_ok(),
        }
    }
}

/// Runs all optimizers of one seed. Trials alternate: the study with the
/// fewest completed trials goes next, earlier optimizers first on ties, so
/// no study leads another by more than one trial. A failing study is
/// recorded and dropped; the others continue.
fn run_seed<B: ServingBackend>(
    dir: &Path,
    matrix: &Matrix,
    seed: u64,
    backend: &mut B,
    allowance: &Allowance,
    new_trials: &AtomicU64,
) -> Vec<StudyStatus> {
    let mut slots: Vec<(OptimizerKind, std::result::Result<StudyRunner, StudyStatus>)> = matrix
        .optimizers
        .iter()
        .map(|&opt| {
            let path = dir.join(log_file_name(opt, seed));
            let opened = StudyRunner::open(&matrix.spec(opt, seed), &path)
                .map_err(|e| StudyStatus::failed(matrix, opt, seed, &e));
            (opt, opened)
        })
        .collect();

    loop {
        let next = slots
            .iter()
            .enumerate()
            .filter_map(|(i, (_, slot))| slot.as_ref().ok().map(|r| (i, r)))
            .filter(|(_, r)| !r.is_complete())
            .min_by_key(|(_, r)| r.study().completed())
            .map(|(i, _)| i);
        let Some(i) = next else { break };
        if !allowance.take() {
            break;
        }
        let (opt, slot) = &mut slots[i];
        let runner = slot.as_mut().expect("only open studies are picked");
        match runner.step(backend) {
            Ok(_) => {
                new_trials.fetch_add(1, Ordering::SeqCst);
            }
            Err(e) => {
                let status = StudyStatus::of(runner, *opt, seed, Some(e.to_string()));
                *slot = Err(status);
            }
        }
    }

    slots
        .into_iter()
        .map(|(opt, slot)| match slot {
            Ok(runner) => StudyStatus::of(&runner, opt, seed, None),
            Err(status) => status,
        })
        .collect()
}

/// Executes the matrix into `dir`, skipping finished studies and resuming
/// partial ones, then rewrites the derived index. Seeds are independent
/// units of parallelism.
pub fn run_multiseed<B>(dir: &Path, matrix: &Matrix, backend: &B, options: RunOptions) -> Result<MatrixOutcome>
where
    B: ServingBackend + Clone + Send + Sync,
{
    matrix
        .template
        .validate()
        .map_err(|m| Error::InvalidSettings(m.to_string()))?;
    if matrix.seeds.is_empty() || matrix.optimizers.is_empty() {
        return Err(Error::InvalidSettings(
            "the matrix needs at least one seed and one optimizer".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|source| Error::Write {
        path: dir.to_path_buf(),
        source,
    })?;

    let allowance = Allowance(options.max_new_trials.map(AtomicU64::new));
    let new_trials = AtomicU64::new(0);
    let next_seed = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Vec<StudyStatus>)>> = Mutex::new(Vec::new());
    let workers = options.jobs.clamp(1, matrix.seeds.len());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut backend = backend.clone();
                loop {
                    let i = next_seed.fetch_add(1, Ordering::SeqCst);
                    let Some(&seed) = matrix.seeds.get(i) else { break };
                    let statuses = run_seed(dir, matrix, seed, &mut backend, &allowance, &new_trials);
                    results
                        .lock()
                        .expect("no worker panics while holding the lock")
                        .push((i, statuses));
                }
            });
        }
    });

    let mut results = results.into_inner().expect("workers finished");
    results.sort_by_key(|(i, _)| *i);
    let outcome = MatrixOutcome {
        studies: results.into_iter().flat_map(|(_, s)| s).collect(),
        new_trials: new_trials.into_inner(),
    };
    write_index(dir, &outcome.studies)?;
    Ok(outcome)
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    studies: Vec<StudyStatus>,
}

/// Replaces the index atomically. It is a convenience view; logs are the
/// source of truth.
fn write_index(dir: &Path, studies: &[StudyStatus]) -> Result<()> {
    let path = dir.join(INDEX_FILE);
    let tmp: PathBuf = dir.join(format!("{INDEX_FILE}.tmp"));
    let text = serde_json::to_string_pretty(&Index {
        studies: studies.to_vec(),
    })
    .expect("index serializes");
    let write_err = |source| Error::Write {
        path: path.clone(),
        source,
    };
    fs::write(&tmp, text + "\n").map_err(write_err)?;
    fs::rename(&tmp, &path).map_err(write_err)
}

pub fn read_index(dir: &Path) -> Result<Vec<StudyStatus>> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(|source| Error::Read {
        path: path.clone(),
        source,
    })?;
    let index: Index = serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path,
        line: e.line(),
        message: e.to_string(),
    })?;
    Ok(index.studies)
}
