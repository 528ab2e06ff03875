//! The supervisor: owns the event log, checkpoints and commits, fetches
//! acquisition windows, fans records out to stage workers, and resolves
//! their outcomes strictly in source order.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::RunConfig;
use super::item::{self, Accepted, ItemContext, ItemOutcome, Step};
use super::PipelineError;
use crate::acquisition::{open_source, Batch, ImageRecord, QuotaState, UnreadableEntry};
use crate::dataset_spec::{DatasetSpec, TaskKind};
use crate::gateway::Gateway;
use crate::intake::ExistingDatasetMeta;
use crate::metrics::MetricReport;
use crate::prompts::PromptSet;
use crate::supervision::{
    diagnose, fold_state, install, load_checkpoint, manifest_hash, read_events, recover_staging, schedule, stage_bytes,
    write_checkpoint, Agent, Checkpoint, Counts, CrashPlan, Event, EventLog, FailureCategory, FailureRecord, Level,
    ManifestVerifier, Resolution, RunState, Stage, StagedArtifact, SupervisionError,
};

pub const RUN_META: &str = "run.json";
pub const RUN_LOG: &str = "run.log";
pub const OUT_DIR: &str = "out";
const ANALYSES_DIR: &str = "analyses";

/// Everything needed to resume a run, written once at start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub run_id: String,
    pub spec: DatasetSpec,
    pub config: RunConfig,
    pub existing: Option<ExistingDatasetMeta>,
}

/// Backends and control hooks supplied by the caller.
#[derive(Clone)]
pub struct RunOptions {
    pub gateway: Gateway,
    pub prompts: PromptSet,
    pub crash: Arc<CrashPlan>,
    pub stop: Arc<AtomicBool>,
}

impl RunOptions {
    pub fn new(gateway: Gateway, prompts: PromptSet) -> Self {
        Self { gateway, prompts, crash: Arc::new(CrashPlan::never()), stop: Arc::new(AtomicBool::new(false)) }
    }

    /// Sidecar-backed mocks with the offline text model and no retry delay.
    pub fn mock() -> Self {
        Self::new(Gateway::mock(crate::gateway::RetryPolicy::none()), PromptSet::builtin())
    }

    pub fn with_crash(mut self, plan: CrashPlan) -> Self {
        self.crash = Arc::new(plan);
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub name: String,
    pub task_kind: TaskKind,
    pub counts: Counts,
    /// Images in the dataset before the run (Expand only).
    pub original: u64,
    pub new_total: u64,
    pub manifest_hash: String,
    pub report: Option<MetricReport>,
    /// True when resume found the run already complete.
    pub already_complete: bool,
}

impl RunSummary {
    pub fn added(&self) -> u64 {
        self.new_total - self.original
    }

    /// The frozen one-line summary.
    pub fn summary_line(&self) -> String {
        let (verb, n) = match self.task_kind {
            TaskKind::Build => ("built", self.counts.accepted),
            TaskKind::Expand => ("expanded", self.added()),
        };
        format!("DatasetAgent: successfully {verb} {} with {n} high-quality images.", self.name)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)
}

fn fresh_quota(meta: &RunMeta) -> QuotaState {
    QuotaState::new(meta.spec.classes.iter().map(|c| (c.name.clone(), c.target_count)), meta.config.overcollect_factor)
}

/// Reads the metadata of the run held in `ws`.
pub fn read_meta(ws: &Path) -> Result<RunMeta, PipelineError> {
    let text = std::fs::read_to_string(ws.join(RUN_META)).map_err(|_| SupervisionError::NoCheckpoint)?;
    serde_json::from_str(&text).map_err(|e| SupervisionError::WorkspaceCorrupt(format!("{RUN_META}: {e}")).into())
}

/// Starts a fresh run in `ws`, which must not hold one already.
pub fn start_run(
    ws: &Path,
    run_id: &str,
    spec: DatasetSpec,
    existing: Option<ExistingDatasetMeta>,
    cfg: RunConfig,
    opts: RunOptions,
) -> Result<RunSummary, PipelineError> {
    cfg.check()?;
    if ws.join(RUN_META).exists() {
        return Err(PipelineError::WorkspaceInUse(ws.to_path_buf()));
    }
    if spec.source.corpus.is_none() {
        return Err(PipelineError::Config("spec has no candidate source".into()));
    }
    std::fs::create_dir_all(ws)?;
    let meta = RunMeta { run_id: run_id.to_string(), spec, config: cfg, existing };
    write_atomic(&ws.join(RUN_META), &serde_json::to_vec_pretty(&meta).expect("meta serializes"))?;
    let log = EventLog::open(&ws.join(RUN_LOG))?;
    let state = RunState::new(fresh_quota(&meta));
    let mut sup = Supervisor::new(ws, meta, log, state, opts);
    sup.emit(
        Agent::Supervisor,
        Level::Info,
        "run_started",
        json!({"run_id": sup.meta.run_id, "dataset": sup.meta.spec.name, "seed": sup.meta.config.seed}),
    )?;
    sup.checkpoint(Stage::Collect)?;
    sup.drive()
}

/// Continues the run in `ws` from its last checkpoint. With `run_id`, the
/// workspace must hold that run.
pub fn resume_run(ws: &Path, run_id: Option<&str>, opts: RunOptions) -> Result<RunSummary, PipelineError> {
    let meta = read_meta(ws)?;
    if run_id.is_some_and(|id| id != meta.run_id) {
        return Err(SupervisionError::NoCheckpoint.into());
    }
    let events = read_events(&ws.join(RUN_LOG))?;
    let (base, from) = match load_checkpoint(ws) {
        Ok(cp) if cp.run_id == meta.run_id => (RunState::from_checkpoint(&cp), cp.cursor()),
        Ok(_) => return Err(SupervisionError::NoCheckpoint.into()),
        // stopped before the first checkpoint: replay the whole log
        Err(SupervisionError::NoCheckpoint) => (RunState::new(fresh_quota(&meta)), 0),
        Err(e) => return Err(e.into()),
    };
    recover_staging(ws, &events)?;
    let state = fold_state(base, &events);
    let mut verifier = ManifestVerifier::default();
    verifier.verify(ws, &state.manifest, true)?;
    let log = EventLog::open(&ws.join(RUN_LOG))?;
    let mut sup = Supervisor::new(ws, meta, log, state, opts);
    sup.verifier = verifier;
    if sup.state.completed {
        let mut s = sup.summary(None);
        s.report = read_report(ws);
        s.already_complete = true;
        return Ok(s);
    }
    let cursor = sup.state.cursor;
    sup.emit(
        Agent::Supervisor,
        Level::Info,
        "resumed",
        json!({"from_checkpoint": from, "cursor": cursor, "next_index": cursor + 1}),
    )?;
    sup.drive()
}

fn read_report(ws: &Path) -> Option<MetricReport> {
    let text = std::fs::read_to_string(ws.join(OUT_DIR).join("report.json")).ok()?;
    serde_json::from_str(&text).ok()
}

/// The metric report of a finished run.
pub fn run_report(ws: &Path) -> Option<MetricReport> {
    read_report(ws)
}

pub(super) struct Supervisor {
    pub ws: PathBuf,
    pub meta: RunMeta,
    pub ctx: ItemContext,
    log: EventLog,
    pub state: RunState,
    verifier: ManifestVerifier,
    pub crash: Arc<CrashPlan>,
    stop: Arc<AtomicBool>,
    text_backend: bool,
    commits_since_cp: u64,
    last_cp: Instant,
}

enum Slot {
    Record(Arc<ImageRecord>),
    Unreadable(UnreadableEntry),
    PassOver(u64),
}

impl Supervisor {
    fn new(ws: &Path, meta: RunMeta, log: EventLog, state: RunState, opts: RunOptions) -> Self {
        let mut prompts = opts.prompts;
        if let Some(dir) = &meta.config.prompts_dir {
            match PromptSet::with_overrides(dir) {
                Ok(p) => prompts = p,
                Err(e) => log::warn!("prompt overrides in {} unreadable: {e}", dir.display()),
            }
        }
        let ctx = ItemContext::new(meta.spec.clone(), opts.gateway, prompts, meta.config.clone());
        Self {
            ws: ws.to_path_buf(),
            meta,
            ctx,
            log,
            state,
            verifier: ManifestVerifier::default(),
            crash: opts.crash,
            stop: opts.stop,
            text_backend: true,
            commits_since_cp: 0,
            last_cp: Instant::now(),
        }
    }

    pub fn emit(&mut self, agent: Agent, level: Level, kind: &str, payload: Value) -> Result<u64, PipelineError> {
        let seq = self.log.record(agent, level, kind, payload.clone())?;
        self.state.apply(&Event { seq, wall_ms: 0, agent, level, kind: kind.to_string(), payload });
        Ok(seq)
    }

    pub fn checkpoint(&mut self, stage: Stage) -> Result<(), PipelineError> {
        self.crash.hook("checkpoint")?;
        let cp = Checkpoint::capture(&self.meta.run_id, stage, &self.state);
        write_checkpoint(&self.ws, &cp, &mut self.verifier)?;
        self.commits_since_cp = 0;
        self.last_cp = Instant::now();
        let cursor = self.state.cursor;
        self.emit(Agent::Supervisor, Level::Info, "checkpoint_saved", json!({"cursor": cursor, "stage": stage}))?;
        Ok(())
    }

    fn maybe_checkpoint(&mut self) -> Result<(), PipelineError> {
        let cfg = &self.meta.config;
        if self.commits_since_cp >= cfg.checkpoint_every || self.last_cp.elapsed() >= Duration::from_secs(cfg.checkpoint_secs) {
            self.checkpoint(Stage::Label)?;
        }
        Ok(())
    }

    fn check_stop(&mut self) -> Result<(), PipelineError> {
        if self.stop.load(Ordering::SeqCst) {
            self.checkpoint(Stage::Label)?;
            let cursor = self.state.cursor;
            self.emit(Agent::Supervisor, Level::Warn, "interrupted", json!({"cursor": cursor}))?;
            return Err(PipelineError::Interrupted);
        }
        Ok(())
    }

    pub fn summary(&self, report: Option<MetricReport>) -> RunSummary {
        let original = self.meta.existing.as_ref().map_or(0, |m| m.image_count);
        RunSummary {
            run_id: self.meta.run_id.clone(),
            name: self.meta.spec.name.clone(),
            task_kind: self.meta.spec.task_kind,
            counts: self.state.counts.clone(),
            original,
            new_total: original + self.state.counts.accepted,
            manifest_hash: manifest_hash(&self.state.manifest),
            report,
            already_complete: false,
        }
    }

    fn drive(mut self) -> Result<RunSummary, PipelineError> {
        let desc = self.meta.spec.source.corpus.clone().expect("checked at start");
        let mut source = open_source(&desc)?;
        source.skip_through(self.state.cursor);
        if !self.state.finalized {
            loop {
                self.check_stop()?;
                if self.state.quota.is_satisfied() || source.is_exhausted() {
                    break;
                }
                let batch = source.next_batch(&mut self.state.quota, self.meta.config.window)?;
                if batch.records.is_empty() && batch.unreadable.is_empty() && batch.passed_over.is_empty() {
                    break;
                }
                self.resolve_window(batch)?;
            }
            self.checkpoint(Stage::Label)?;
            super::finalize::finalize(&mut self)?;
        }
        let report = read_report(&self.ws);
        if !self.state.completed {
            let c = self.state.counts.clone();
            let summary = self.summary(None).summary_line();
            self.emit(Agent::Supervisor, Level::Info, "run_completed", json!({"counts": c, "summary": summary}))?;
        }
        Ok(self.summary(report))
    }

    fn resolve_window(&mut self, batch: Batch) -> Result<(), PipelineError> {
        let mut slots: Vec<(u64, Slot)> = Vec::new();
        let records: Vec<Arc<ImageRecord>> = batch.records.into_iter().map(Arc::new).collect();
        for r in &records {
            slots.push((r.index, Slot::Record(r.clone())));
        }
        slots.extend(batch.unreadable.into_iter().map(|u| (u.index, Slot::Unreadable(u))));
        slots.extend(batch.passed_over.into_iter().map(|i| (i, Slot::PassOver(i))));
        slots.sort_by_key(|s| s.0);
        let mut results = process_window(&self.ctx, &records, self.meta.config.workers);
        for (index, slot) in slots {
            if self.state.quota.is_satisfied() {
                break;
            }
            self.check_stop()?;
            match slot {
                Slot::PassOver(i) => {
                    self.emit(Agent::Supervisor, Level::Info, "pass_over", json!({"index": i}))?;
                }
                Slot::Unreadable(u) => {
                    let ctx = format!("Image #{}: format decode failed ({})", u.index, u.reason);
                    let res = self.failure(u.index, &u.id, &u.origin_uri, Stage::Collect, FailureCategory::DecodeFailure, &ctx, 1)?;
                    match res {
                        Resolution::Abort => return Err(self.abort(u.index, &ctx)?),
                        // nothing to re-read: a retried decode fails the same way
                        _ => self.skip(u.index, &u.id, "unreadable")?,
                    }
                }
                Slot::Record(rec) => {
                    let outcome = results.remove(&index).expect("every record has an outcome");
                    self.resolve_record(rec.clone(), outcome)?;
                    if let Some(class) = &rec.class_hint {
                        self.state.quota.release(class);
                    }
                }
            }
            self.maybe_checkpoint()?;
        }
        for r in &records {
            if results.contains_key(&r.index) {
                if let Some(class) = &r.class_hint {
                    self.state.quota.release(class);
                }
            }
        }
        Ok(())
    }

    fn resolve_record(&mut self, rec: Arc<ImageRecord>, mut outcome: ItemOutcome) -> Result<(), PipelineError> {
        let mut attempts: HashMap<FailureCategory, u32> = HashMap::new();
        loop {
            if let Some(doc) = outcome.analysis() {
                self.write_analysis(rec.index, doc)?;
            }
            match outcome {
                ItemOutcome::Accept(acc) => return self.commit(&rec, *acc),
                ItemOutcome::Reject { class, gate, reason, .. } => {
                    self.emit(
                        Agent::Process,
                        Level::Info,
                        "reject",
                        json!({"index": rec.index, "id": rec.id, "class": class, "gate": gate, "reason": reason}),
                    )?;
                    return Ok(());
                }
                ItemOutcome::Fail { stage, category, context, .. } => {
                    let attempt = attempts.entry(category).or_insert(0);
                    *attempt += 1;
                    let attempt = *attempt;
                    match self.failure(rec.index, &rec.id, &rec.origin_uri, stage, category, &context, attempt)? {
                        Resolution::Skip => return self.skip(rec.index, &rec.id, &context),
                        Resolution::Abort => return Err(self.abort(rec.index, &context)?),
                        Resolution::Retry | Resolution::Restart => {
                            outcome = item::process_item(&self.ctx, rec.clone());
                        }
                    }
                }
            }
        }
    }

    /// Logs a failure, checkpoints the last good state and resolves it.
    #[allow(clippy::too_many_arguments)]
    fn failure(
        &mut self,
        index: u64,
        id: &str,
        origin: &str,
        stage: Stage,
        category: FailureCategory,
        context: &str,
        attempt: u32,
    ) -> Result<Resolution, PipelineError> {
        let kind = match category {
            FailureCategory::DecodeFailure => "decode_failure",
            _ => "item_failure",
        };
        let seq = self.emit(
            Agent::Supervisor,
            Level::Error,
            kind,
            json!({"index": index, "id": id, "origin_uri": origin, "stage": stage, "category": category,
                   "context": context, "attempt": attempt}),
        )?;
        self.checkpoint(Stage::Label)?;
        let record = FailureRecord { event_seq: seq, category, context: context.to_string(), attempt };
        let backend = self.text_backend.then_some((&self.ctx.gateway.text, self.ctx.prompts.as_ref()));
        let resolution = diagnose(&record, backend);
        let cursor = self.state.cursor;
        let message = match (category, resolution) {
            (FailureCategory::DecodeFailure, Resolution::Skip) => {
                format!("Skip corrupted image, restore from checkpoint #{cursor}")
            }
            (_, r) => format!("{r:?} image #{index} after {category:?}, restore from checkpoint #{cursor}"),
        };
        self.emit(
            Agent::Supervisor,
            Level::Warn,
            "resolution",
            json!({"index": index, "failure_seq": seq, "resolution": resolution, "message": message}),
        )?;
        self.crash.hook("resolved")?;
        Ok(resolution)
    }

    fn skip(&mut self, index: u64, id: &str, reason: &str) -> Result<(), PipelineError> {
        self.emit(Agent::Supervisor, Level::Info, "skip", json!({"index": index, "id": id, "reason": reason}))?;
        let next = index + 1;
        self.emit(
            Agent::Supervisor,
            Level::Info,
            "continue",
            json!({"next_index": next, "message": format!("Continue analysis from image #{next}")}),
        )?;
        self.crash.hook("skipped")?;
        Ok(())
    }

    fn abort(&mut self, index: u64, reason: &str) -> Result<PipelineError, PipelineError> {
        self.checkpoint(Stage::Label)?;
        self.emit(Agent::Supervisor, Level::Error, "run_aborted", json!({"index": index, "reason": reason}))?;
        Ok(PipelineError::Aborted(format!("image #{index}: {reason}")))
    }

    fn write_analysis(&self, index: u64, doc: &Value) -> Result<(), PipelineError> {
        let path = self.ws.join(ANALYSES_DIR).join(format!("{index:08}.json"));
        let mut bytes = serde_json::to_vec_pretty(doc).expect("json serializes");
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(())
    }

    fn commit(&mut self, rec: &ImageRecord, acc: Accepted) -> Result<(), PipelineError> {
        match self.state.quota.remaining(&acc.class) {
            Some(0) | None => {
                let gate = if self.state.quota.remaining(&acc.class).is_none() { "class" } else { "quota-full" };
                self.emit(
                    Agent::Process,
                    Level::Info,
                    "reject",
                    json!({"index": rec.index, "id": rec.id, "class": acc.class, "gate": gate,
                           "reason": format!("{} needs no more images", acc.class)}),
                )?;
                return Ok(());
            }
            Some(_) => {}
        }
        let staged = self.stage_files(&format!("{:08}", rec.index), &acc.files)?;
        self.crash.hook("staged")?;
        self.emit(
            Agent::Label,
            Level::Info,
            "commit",
            json!({"index": rec.index, "id": rec.id, "class": acc.class, "artifacts": staged}),
        )?;
        self.crash.hook("logged")?;
        install(&self.ws, &staged)?;
        self.crash.hook("installed")?;
        self.commits_since_cp += 1;
        Ok(())
    }

    pub fn stage_files(&self, key: &str, files: &[(String, Vec<u8>)]) -> Result<Vec<StagedArtifact>, PipelineError> {
        files
            .iter()
            .enumerate()
            .map(|(n, (rel, bytes))| stage_bytes(&self.ws, &format!("{key}-{n}"), rel, bytes).map_err(Into::into))
            .collect()
    }

    pub fn install_logged(&mut self, kind: &str, staged: Vec<StagedArtifact>, extra: Value) -> Result<(), PipelineError> {
        self.crash.hook("staged")?;
        let mut payload = json!({"artifacts": staged});
        if let (Some(p), Some(e)) = (payload.as_object_mut(), extra.as_object()) {
            p.extend(e.clone());
        }
        self.emit(Agent::Supervisor, Level::Info, kind, payload)?;
        self.crash.hook("logged")?;
        install(&self.ws, &staged)?;
        self.crash.hook("installed")?;
        Ok(())
    }
}

/// Runs the stage pools over one window. With fewer than three workers
/// each worker carries a record through every stage.
fn process_window(ctx: &ItemContext, records: &[Arc<ImageRecord>], budget: usize) -> BTreeMap<u64, ItemOutcome> {
    if records.is_empty() {
        return BTreeMap::new();
    }
    let n = records.len();
    let (tx_r, rx_r) = mpsc::channel::<(u64, ItemOutcome)>();
    std::thread::scope(|s| {
        if budget < 3 {
            let (tx_in, rx_in) = mpsc::sync_channel::<Arc<ImageRecord>>(n);
            for r in records {
                tx_in.send(r.clone()).expect("queue open");
            }
            drop(tx_in);
            let rx_in = Arc::new(Mutex::new(rx_in));
            for _ in 0..budget.max(1) {
                let (rx, tx) = (rx_in.clone(), tx_r.clone());
                s.spawn(move || loop {
                    let Ok(r) = rx.lock().expect("queue lock").recv() else { break };
                    let _ = tx.send((r.index, item::process_item(ctx, r)));
                });
            }
            return;
        }
        let alloc = schedule(&[n, n, n], budget);
        let (tx_a, rx_a) = mpsc::sync_channel::<Arc<ImageRecord>>(n);
        let (tx_o, rx_o) = mpsc::sync_channel::<item::Analyzed>(n);
        let (tx_l, rx_l) = mpsc::sync_channel::<item::Optimized>(n);
        for r in records {
            tx_a.send(r.clone()).expect("queue open");
        }
        drop(tx_a);
        let (rx_a, rx_o, rx_l) = (Arc::new(Mutex::new(rx_a)), Arc::new(Mutex::new(rx_o)), Arc::new(Mutex::new(rx_l)));
        for _ in 0..alloc[0] {
            let (rx, tx, done) = (rx_a.clone(), tx_o.clone(), tx_r.clone());
            s.spawn(move || loop {
                let Ok(r) = rx.lock().expect("queue lock").recv() else { break };
                let index = r.index;
                match item::analyze(ctx, r) {
                    Step::Next(a) => tx.send(a).expect("optimize queue open"),
                    Step::Done(o) => done.send((index, o)).expect("result queue open"),
                }
            });
        }
        drop(tx_o);
        for _ in 0..alloc[1] {
            let (rx, tx, done) = (rx_o.clone(), tx_l.clone(), tx_r.clone());
            s.spawn(move || loop {
                let Ok(a) = rx.lock().expect("queue lock").recv() else { break };
                let index = a.record.index;
                match item::optimize(ctx, a) {
                    Step::Next(o) => tx.send(o).expect("label queue open"),
                    Step::Done(o) => done.send((index, o)).expect("result queue open"),
                }
            });
        }
        drop(tx_l);
        for _ in 0..alloc[2] {
            let (rx, done) = (rx_l.clone(), tx_r.clone());
            s.spawn(move || loop {
                let Ok(o) = rx.lock().expect("queue lock").recv() else { break };
                let index = o.analyzed.record.index;
                done.send((index, item::label(ctx, o))).expect("result queue open");
            });
        }
    });
    drop(tx_r);
    rx_r.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_line_shapes() {
        let mut s = RunSummary {
            run_id: "r".into(),
            name: "CIFAR-10".into(),
            task_kind: TaskKind::Expand,
            counts: Counts { accepted: 48912, ..Default::default() },
            original: 60000,
            new_total: 108912,
            manifest_hash: String::new(),
            report: None,
            already_complete: false,
        };
        assert_eq!(s.summary_line(), "DatasetAgent: successfully expanded CIFAR-10 with 48912 high-quality images.");
        s.task_kind = TaskKind::Build;
        s.counts.accepted = 7;
        assert_eq!(s.summary_line(), "DatasetAgent: successfully built CIFAR-10 with 7 high-quality images.");
    }
}
