//! Versioned prompt templates.
//!
//! Templates are plain text assets with `{SLOT}` placeholders. Rendering
//! requires a value for every declared slot and leaves any other braces (the
//! JSON schema in the evaluator prompt, for instance) untouched.

use alloc::string::String;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub version: u32,
    pub slots: &'static [&'static str],
    pub text: &'static str,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("template {template} has no value for slot {slot}")]
pub struct MissingSlot {
    pub template: &'static str,
    pub slot: &'static str,
}

impl PromptTemplate {
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, MissingSlot> {
        let mut out = String::from(self.text);
        for slot in self.slots {
            let value = values
                .iter()
                .find(|(name, _)| name == slot)
                .map(|(_, v)| *v)
                .ok_or(MissingSlot {
                    template: self.name,
                    slot,
                })?;
            let mut pattern = String::with_capacity(slot.len() + 2);
            pattern.push('{');
            pattern.push_str(slot);
            pattern.push('}');
            out = out.replace(&pattern, value);
        }
        Ok(out)
    }
}

pub const PROGRESS_REPORT: PromptTemplate = PromptTemplate {
    name: "progress_report",
    version: 1,
    slots: &["SOLUTION"],
    text: include_str!("../assets/prompts/progress_report.v1.txt"),
};

pub const DYNAMIC_STRATEGY: PromptTemplate = PromptTemplate {
    name: "dynamic_strategy",
    version: 1,
    slots: &["PROGRESS_REPORT"],
    text: include_str!("../assets/prompts/dynamic_strategy.v1.txt"),
};

pub const COT_GENERATION: PromptTemplate = PromptTemplate {
    name: "cot_generation",
    version: 1,
    slots: &["TASK_DESCRIPTION", "CURRENT_STEP", "META_REASONER_FEEDBACK"],
    text: include_str!("../assets/prompts/cot_generation.v1.txt"),
};

pub const PROGRESS_EVALUATION: PromptTemplate = PromptTemplate {
    name: "progress_evaluation",
    version: 1,
    slots: &[
        "TASK_OBJECTIVE",
        "CURRENT_PROGRESS",
        "NUM_STEPS",
        "W1",
        "W2",
        "ALPHA",
        "BETA",
    ],
    text: include_str!("../assets/prompts/progress_evaluation.v1.txt"),
};

pub const PROGRESS_SCORE_ONLY: PromptTemplate = PromptTemplate {
    name: "progress_score_only",
    version: 1,
    slots: &["TASK_OBJECTIVE", "CURRENT_PROGRESS", "NUM_STEPS"],
    text: include_str!("../assets/prompts/progress_score_only.v1.txt"),
};

pub const TRAINING_EVALUATION: PromptTemplate = PromptTemplate {
    name: "training_evaluation",
    version: 1,
    slots: &["TASK_OBJECTIVE", "STRATEGY", "CURRENT_PROGRESS", "NUM_STEPS"],
    text: include_str!("../assets/prompts/training_evaluation.v1.txt"),
};

pub const DIRECT_ARM_SELECTION: PromptTemplate = PromptTemplate {
    name: "direct_arm_selection",
    version: 1,
    slots: &["ARM_COUNT", "CONTEXT", "HISTORY", "MAX_INDEX"],
    text: include_str!("../assets/prompts/direct_arm_selection.v1.txt"),
};
