//! Prompt templates. The defaults are compiled in from `prompts/*.txt`; a
//! directory with same-named files overrides them at run time.

use std::collections::BTreeMap;
use std::path::Path;

pub const DEMAND_BLOCK: &str = "DEMAND";
pub const FAILURE_BLOCK: &str = "FAILURE";

pub const TEMPLATE_NAMES: &[&str] =
    &["demand_extraction", "schema_repair", "image_analysis", "failure_diagnosis", "tool_plan"];

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: BTreeMap<String, String>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        let pairs = [
            ("demand_extraction", include_str!("../prompts/demand_extraction.txt")),
            ("schema_repair", include_str!("../prompts/schema_repair.txt")),
            ("image_analysis", include_str!("../prompts/image_analysis.txt")),
            ("failure_diagnosis", include_str!("../prompts/failure_diagnosis.txt")),
            ("tool_plan", include_str!("../prompts/tool_plan.txt")),
        ];
        Self { templates: pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }

    /// Builtins overridden by any `<name>.txt` found in `dir`.
    pub fn with_overrides(dir: &Path) -> std::io::Result<Self> {
        let mut set = Self::builtin();
        for name in TEMPLATE_NAMES {
            let p = dir.join(format!("{name}.txt"));
            if p.is_file() {
                set.templates.insert(name.to_string(), std::fs::read_to_string(p)?);
            }
        }
        Ok(set)
    }

    pub fn render(&self, name: &str, vars: &[(&str, &str)]) -> String {
        let mut out = self.templates.get(name).cloned().unwrap_or_default();
        for (k, v) in vars {
            out = out.replace(&format!("{{{{{k}}}}}"), v);
        }
        out
    }

    pub fn demand_extraction(&self, demand: &str, answers: &[(String, String)], context_docs: &[String]) -> String {
        self.render(
            "demand_extraction",
            &[("demand", demand), ("answers", &answers_block(answers)), ("context", &context_block(context_docs))],
        )
    }

    pub fn schema_repair(&self, demand: &str, answers: &[(String, String)], reply: &str, violations: &[String]) -> String {
        let v: String = violations.iter().map(|s| format!("- {s}\n")).collect();
        self.render(
            "schema_repair",
            &[("demand", demand), ("answers", &answers_block(answers)), ("reply", reply), ("violations", v.trim_end())],
        )
    }

    pub fn image_analysis(&self, image_id: &str, classes: &[String]) -> String {
        self.render("image_analysis", &[("image_id", image_id), ("classes", &classes.join(", "))])
    }

    pub fn failure_diagnosis(&self, failure: &str) -> String {
        self.render("failure_diagnosis", &[("failure", failure)])
    }

    pub fn tool_plan(&self, analysis: &str, target: Option<(u32, u32)>) -> String {
        let t = match target {
            Some((w, h)) => format!("The plan must end with resize to {w}x{h}."),
            None => String::new(),
        };
        self.render("tool_plan", &[("analysis", analysis), ("target", &t)])
    }
}

fn answers_block(answers: &[(String, String)]) -> String {
    if answers.is_empty() {
        return String::new();
    }
    let mut s = String::from("Answers to earlier clarification questions:\n");
    for (k, v) in answers {
        s += &format!("  {k}: {v}\n");
    }
    s
}

fn context_block(docs: &[String]) -> String {
    if docs.is_empty() {
        return String::new();
    }
    let mut s = String::from("Reference material supplied with the request:\n");
    for (i, d) in docs.iter().enumerate() {
        s += &format!("<<<CONTEXT {}\n{}\nCONTEXT>>>\n", i + 1, d.trim());
    }
    s
}

/// Name from the template's `#task:` header line.
pub fn task_of(prompt: &str) -> Option<String> {
    prompt.lines().next()?.strip_prefix("#task:").map(|t| t.trim().to_string())
}

/// Text between `<<<NAME` and `NAME>>>`.
pub fn section(prompt: &str, name: &str) -> Option<String> {
    let open = format!("<<<{name}\n");
    let close = format!("\n{name}>>>");
    let start = prompt.find(&open)? + open.len();
    let end = prompt[start..].find(&close)? + start;
    Some(prompt[start..end].to_string())
}
