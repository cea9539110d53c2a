//! Zero-shot prompt designs A–E, the imaging amendment, and response parsing.
//!
//! | design | steering | CoT | multiple choice | "explain your reasoning" |
//! |--------|----------|-----|-----------------|--------------------------|
//! | A      | yes      | yes | yes             | yes                      |
//! | B      | yes      | yes |                 | yes                      |
//! | C      | yes      | yes |                 |                          |
//! | D      | yes      |     | yes             | yes                      |
//! | E      | yes      |     |                 | yes                      |

mod parse;
mod template;

pub use parse::{parse_answer, parse_response, Decision, SnippetVerdict};
pub use template::{
    amendment_text, render_prompt, AnyPositiveTemplate, Design, PromptTemplate, SteeringPolarity,
    ANY_POSITIVE_TEMPLATE, COT_PHRASE, DISREGARD_IMAGING, SNIPPET_TEMPLATE,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt amendment `{0}`")]
    UnknownAmendment(String),
    #[error("snippet text is empty")]
    EmptySnippet,
    #[error("template: {0}")]
    Config(String),
}
