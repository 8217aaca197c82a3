use serde::{Deserialize, Serialize};

/// Lowercase, trim, collapse internal whitespace.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Voting accuracy `min(1, votes / 3)` over annotator answers.
pub fn vqa_accuracy(predicted: &str, annotator_answers: &[String]) -> f64 {
    let p = normalize_answer(predicted);
    let votes = annotator_answers.iter().filter(|a| normalize_answer(a) == p).count();
    (votes as f64 / 3.0).min(1.0)
}

pub fn exact_match(predicted: &str, labeled: &str) -> f64 {
    f64::from(u8::from(normalize_answer(predicted) == normalize_answer(labeled)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    VqaVote,
    ExactMatch,
}

impl Metric {
    /// Per-example score. Exact match compares against the first answer.
    pub fn score(self, predicted: &str, answers: &[String]) -> f64 {
        match self {
            Metric::VqaVote => vqa_accuracy(predicted, answers),
            Metric::ExactMatch => answers.first().map_or(0.0, |a| exact_match(predicted, a)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(matching: usize) -> Vec<String> {
        (0..10)
            .map(|i| if i < matching { "yes".into() } else { format!("other{i}") })
            .collect()
    }

    #[test]
    fn voting_examples() {
        assert_eq!(vqa_accuracy("yes", &answers(3)), 1.0);
        assert!((vqa_accuracy("yes", &answers(2)) - 0.6667).abs() < 1e-4);
        assert_eq!(vqa_accuracy("yes", &answers(2)), 2.0 / 3.0);
        assert_eq!(vqa_accuracy("yes", &answers(0)), 0.0);
        assert_eq!(vqa_accuracy(" YES ", &answers(1)), 1.0 / 3.0);
    }

    #[test]
    fn exact_match_examples() {
        assert_eq!(exact_match("white", "white"), 1.0);
        assert_eq!(exact_match("white", "White "), 1.0);
        assert_eq!(exact_match("two", "2"), 0.0);
        assert_eq!(normalize_answer("  a   red\tcar "), "a red car");
    }
}
