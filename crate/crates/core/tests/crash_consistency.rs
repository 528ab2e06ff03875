//! Killing a run at any hook and resuming yields the uninterrupted output.

mod common;

use common::criteria::{self, tempdir, CLASSES};
use datasetagent::dataset_spec::TaskType;
use datasetagent::pipeline::synth::{build_spec, write_corpus, CorpusPlan};
use datasetagent::pipeline::{resume_run, start_run, RunConfig, RunOptions};
use datasetagent::supervision::CrashPlan;

#[test]
fn sampled_kill_points_resume_to_the_control_hash() {
    let c = criteria::crash_consistency(tempdir().path(), 20, 4);
    assert!(c.pass, "{}", c.line());
}

#[test]
fn every_named_hook_is_recoverable() {
    let dir = tempdir();
    let src = dir.path().join("corpus");
    let mut plan = CorpusPlan::new(&CLASSES, 4, 9);
    plan.corrupt = vec![1];
    write_corpus(&src, &plan).unwrap();
    let spec = build_spec("hooks", TaskType::Detection, &CLASSES, 2, &src);
    let cfg = RunConfig { checkpoint_every: 2, ..RunConfig::default() };
    let control = start_run(&dir.path().join("control"), "hooks", spec.clone(), None, cfg.clone(), RunOptions::mock()).unwrap();
    for point in ["checkpoint", "resolved", "skipped", "staged", "logged", "installed"] {
        let ws = dir.path().join(point);
        let opts = RunOptions::mock().with_crash(CrashPlan::at_point(point, 1));
        assert!(start_run(&ws, "hooks", spec.clone(), None, cfg.clone(), opts).is_err(), "{point} never fired");
        let s = resume_run(&ws, None, RunOptions::mock()).unwrap();
        assert_eq!(s.manifest_hash, control.manifest_hash, "{point}");
    }
}

#[test]
fn double_crash_still_converges() {
    let dir = tempdir();
    let src = dir.path().join("corpus");
    write_corpus(&src, &CorpusPlan::new(&CLASSES, 4, 10)).unwrap();
    let spec = build_spec("twice", TaskType::Classification, &CLASSES, 3, &src);
    let cfg = RunConfig { checkpoint_every: 2, ..RunConfig::default() };
    let control = start_run(&dir.path().join("control"), "twice", spec.clone(), None, cfg.clone(), RunOptions::mock()).unwrap();
    let ws = dir.path().join("ws");
    assert!(start_run(&ws, "twice", spec, None, cfg, RunOptions::mock().with_crash(CrashPlan::at(5))).is_err());
    assert!(resume_run(&ws, None, RunOptions::mock().with_crash(CrashPlan::at(4))).is_err());
    let s = resume_run(&ws, None, RunOptions::mock()).unwrap();
    assert_eq!(s.manifest_hash, control.manifest_hash);
}
