use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Annotator answers: a list (voting datasets) or a single label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answers {
    Many(Vec<String>),
    One(String),
}

impl Answers {
    pub fn to_vec(&self) -> Vec<String> {
        match self {
            Answers::Many(v) => v.clone(),
            Answers::One(s) => vec![s.clone()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaExample {
    pub question_id: String,
    pub image_id: String,
    pub question: String,
    pub answers: Answers,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    #[serde(default = "default_type")]
    pub question_type: String,
}

fn default_type() -> String {
    "other".into()
}

impl VqaExample {
    pub fn answer_list(&self) -> Vec<String> {
        self.answers.to_vec()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.answer_list().is_empty() {
            return Err("answers must be non-empty".into());
        }
        if self.choices.as_ref().is_some_and(Vec::is_empty) {
            return Err("choices, when present, must be non-empty".into());
        }
        Ok(())
    }
}

pub fn parse_vqa_jsonl(text: &str, context: &str) -> Result<Vec<VqaExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ex: VqaExample =
            serde_json::from_str(line).map_err(|e| CoreError::json(format!("{context} line {}", i + 1), e))?;
        ex.validate()
            .map_err(|reason| CoreError::Input(format!("{context} line {}: {reason}", i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

pub fn load_vqa_jsonl(path: &Path) -> Result<Vec<VqaExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_vqa_jsonl(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answers_accept_string_or_list() {
        let text = concat!(
            r#"{"question_id":"1","image_id":"i","question":"q?","answers":["a","b"],"question_type":"yes/no"}"#,
            "\n",
            r#"{"question_id":"2","image_id":"i","question":"q?","answers":"white","choices":["white","red"]}"#,
        );
        let ex = parse_vqa_jsonl(text, "t").unwrap();
        assert_eq!(ex[0].answer_list(), vec!["a", "b"]);
        assert_eq!(ex[1].answer_list(), vec!["white"]);
        assert_eq!(ex[1].question_type, "other");
        let back: VqaExample = serde_json::from_str(&serde_json::to_string(&ex[1]).unwrap()).unwrap();
        assert_eq!(back, ex[1]);
    }

    #[test]
    fn empty_answers_or_choices_rejected() {
        assert!(parse_vqa_jsonl(r#"{"question_id":"1","image_id":"i","question":"q","answers":[]}"#, "t").is_err());
        assert!(parse_vqa_jsonl(
            r#"{"question_id":"1","image_id":"i","question":"q","answers":"a","choices":[]}"#,
            "t"
        )
        .is_err());
    }
}
