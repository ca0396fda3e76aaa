use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    SummarizeChunk,
    ConsolidateSummaries,
    ClassifySentiment,
}

impl TemplateName {
    fn slot(self) -> &'static str {
        match self {
            TemplateName::ConsolidateSummaries => "{partial_summaries}",
            _ => "{input_text}",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub system_text: &'static str,
    pub user_template: &'static str,
}

pub const SUMMARIZE_CHUNK: PromptTemplate = PromptTemplate {
    name: TemplateName::SummarizeChunk,
    system_text: include_str!("../../resources/prompts/summarize_chunk.system.txt"),
    user_template: include_str!("../../resources/prompts/summarize_chunk.user.txt"),
};

pub const CONSOLIDATE_SUMMARIES: PromptTemplate = PromptTemplate {
    name: TemplateName::ConsolidateSummaries,
    system_text: include_str!("../../resources/prompts/consolidate.system.txt"),
    user_template: include_str!("../../resources/prompts/consolidate.user.txt"),
};

pub const CLASSIFY_SENTIMENT: PromptTemplate = PromptTemplate {
    name: TemplateName::ClassifySentiment,
    system_text: include_str!("../../resources/prompts/classify.system.txt"),
    user_template: include_str!("../../resources/prompts/classify.user.txt"),
};

/// Appended to the classification prompt when the first answer was not a
/// category word.
pub const CLASSIFY_REPAIR: &str = include_str!("../../resources/prompts/classify.repair.txt");

/// What was substituted into the template slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptInput {
    Text(String),
    Partials(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub template: TemplateName,
    pub system: String,
    pub user: String,
    pub input: PromptInput,
    /// Set on the second classification attempt.
    pub repair: bool,
}

impl PromptTemplate {
    pub fn render_text(&self, input_text: &str) -> RenderedPrompt {
        RenderedPrompt {
            template: self.name,
            system: self.system_text.trim_end().to_string(),
            user: self.user_template.trim_end().replace(self.name.slot(), input_text),
            input: PromptInput::Text(input_text.to_string()),
            repair: false,
        }
    }

    pub fn render_partials(&self, partials: &[String]) -> RenderedPrompt {
        let joined = partials.join("\n");
        RenderedPrompt {
            template: self.name,
            system: self.system_text.trim_end().to_string(),
            user: self.user_template.trim_end().replace(self.name.slot(), &joined),
            input: PromptInput::Partials(partials.to_vec()),
            repair: false,
        }
    }
}

impl RenderedPrompt {
    pub fn with_repair(&self) -> RenderedPrompt {
        let mut repaired = self.clone();
        repaired.user = format!("{}\n{}", self.user, CLASSIFY_REPAIR.trim_end());
        repaired.repair = true;
        repaired
    }

    pub fn input_text(&self) -> String {
        match &self.input {
            PromptInput::Text(t) => t.clone(),
            PromptInput::Partials(p) => p.join("\n"),
        }
    }
}
