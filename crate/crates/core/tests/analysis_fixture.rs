//! The worked fox analysis from the write-up, with its syntax repaired.

use datasetagent::analysis::{decide, parse_analysis, plan_tools};
use datasetagent::dataset_spec::TaskType;
use datasetagent::labeling::assign_class_label;
use datasetagent::pipeline::synth::build_spec;
use datasetagent::tools::ToolCall;
use serde_json::Value;

fn fixture() -> Value {
    serde_json::from_str(include_str!("fixtures/wild_fox_analysis.json")).unwrap()
}

#[test]
fn fox_document_parses() {
    let a = parse_analysis(&fixture()).unwrap();
    assert_eq!(a.image_id, "wild_fox_03821.jpg");
    assert_eq!(a.image_quality.sharpness_score, 0.94);
    assert_eq!(a.image_quality.detail_completeness, 98.7);
    assert_eq!(a.image_quality.resolution, (1024, 768));
    assert_eq!(a.semantic_alignment.similarity_score, 0.931);
    assert_eq!(a.quality_risks.total_risk_score, Some(0.07));
    let pose = &a.fine_grained_attributes["pose"];
    assert_eq!(pose.region.unwrap().to_array(), [0.22, 0.35, 0.75, 0.65]);
}

#[test]
fn fox_document_is_accepted_under_strict_gates() {
    let a = parse_analysis(&fixture()).unwrap();
    let mut spec = build_spec("foxes", TaskType::Classification, &["fox"], 10, std::path::Path::new("."));
    spec.quality_constraints.min_alignment_score = 0.9;
    spec.quality_constraints.max_risk_score = 0.1;
    let d = decide(&a, &spec);
    assert!(d.accept, "{}", d.reason);
    assert_eq!(d.alignment, 0.931);
    assert_eq!(d.risk, 0.07);
    assert_eq!(d.confidence, 0.982);
    assert_eq!(assign_class_label(&a, &spec).unwrap(), "fox");

    spec.quality_constraints.min_alignment_score = 0.95;
    assert!(!decide(&a, &spec).accept);
}

#[test]
fn fox_document_survives_canonical_round_trip() {
    let a = parse_analysis(&fixture()).unwrap();
    let again = parse_analysis(&a.to_value()).unwrap();
    assert_eq!(a, again);
}

#[test]
fn fox_regions_trigger_a_padded_crop() {
    let a = parse_analysis(&fixture()).unwrap();
    let spec = build_spec("foxes", TaskType::Classification, &["fox"], 10, std::path::Path::new("."));
    let plan = plan_tools(&a, &spec);
    let crop = plan.steps.iter().find_map(|s| match s.call {
        ToolCall::Crop { region } => Some(region),
        _ => None,
    });
    let region = crop.expect("subject covers under 40% of the frame");
    // union of the attribute regions is [0.22, 0.35, 0.75, 0.72]
    assert!(region.x1() <= 0.22 && region.y1() <= 0.35 && region.x2() >= 0.75 && region.y2() >= 0.72, "{region:?}");
}
