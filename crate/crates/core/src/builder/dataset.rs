use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rvqa_nn::RngState;
use serde::{Deserialize, Serialize};

use crate::builder::facts::{template_facts, FactTriple, ImageAnnotation};
use crate::builder::scorer::RelevanceScorer;
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// A QA pair with its best-scoring fact, before split assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedExample {
    pub id: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    pub fact: FactTriple,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RvqaExample {
    pub id: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    pub fact: FactTriple,
    pub score: f64,
    pub split: Split,
}

/// Highest-scoring candidate at or above `threshold`; ties keep the earliest.
pub fn select_fact(candidates: &[(FactTriple, f64)], threshold: f64) -> Option<(FactTriple, f64)> {
    let mut best: Option<&(FactTriple, f64)> = None;
    for c in candidates.iter().filter(|c| c.1 >= threshold) {
        if best.is_none_or(|b| c.1 > b.1) {
            best = Some(c);
        }
    }
    best.cloned()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentReport {
    pub images: usize,
    pub images_without_semantics: usize,
    pub qa_pairs: usize,
    pub skipped_fact_entries: usize,
}

/// Every QA pair of every usable image with its best candidate and score,
/// whatever the score. Thresholding happens afterwards so one scoring pass
/// serves any number of thresholds.
#[derive(Debug, Clone)]
pub struct ScoredCorpus {
    pub examples: Vec<AlignedExample>,
    pub report: AlignmentReport,
}

impl ScoredCorpus {
    pub fn score(annotations: &[ImageAnnotation], scorer: &dyn RelevanceScorer) -> Self {
        let mut report = AlignmentReport {
            images: annotations.len(),
            ..Default::default()
        };
        let per_image: Vec<(Vec<AlignedExample>, usize, bool)> = annotations
            .par_iter()
            .map(|img| {
                if !img.has_semantics() {
                    return (Vec::new(), 0, false);
                }
                let (facts, skipped) = template_facts(img);
                let mut out = Vec::new();
                for (qi, qa) in img.qa.iter().enumerate() {
                    let text = format!("{} {}", qa.question, qa.answer);
                    let scored: Vec<(FactTriple, f64)> = facts
                        .iter()
                        .map(|f| (f.clone(), scorer.score(&text, f)))
                        .collect();
                    if let Some((fact, score)) = select_fact(&scored, f64::NEG_INFINITY) {
                        out.push(AlignedExample {
                            id: format!("{}_{}", img.image_id, qi),
                            image_id: img.image_id.clone(),
                            question: qa.question.clone(),
                            answer: qa.answer.clone(),
                            fact,
                            score,
                        });
                    }
                }
                (out, skipped, true)
            })
            .collect();
        let mut examples = Vec::new();
        for (img, (ex, skipped, usable)) in annotations.iter().zip(per_image) {
            if usable {
                report.qa_pairs += img.qa.len();
            } else {
                report.images_without_semantics += 1;
            }
            report.skipped_fact_entries += skipped;
            examples.extend(ex);
        }
        Self { examples, report }
    }

    pub fn above(&self, threshold: f64) -> Vec<AlignedExample> {
        self.examples
            .iter()
            .filter(|e| e.score >= threshold)
            .cloned()
            .collect()
    }

    /// Example and image counts per threshold.
    pub fn sweep(&self, thresholds: &[f64]) -> Vec<ThresholdRow> {
        thresholds
            .iter()
            .map(|&t| {
                let kept: Vec<&AlignedExample> =
                    self.examples.iter().filter(|e| e.score >= t).collect();
                ThresholdRow {
                    threshold: t,
                    examples: kept.len(),
                    images: kept.iter().map(|e| &e.image_id).collect::<BTreeSet<_>>().len(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub examples: usize,
    pub images: usize,
}

/// Seeded shuffle, then the first round(0.6n) go to train, the next
/// round(0.2n) to dev and the remainder to test, so every split is within
/// one example of its share. Output keeps the input order.
///
/// With `image_disjoint`, images are shuffled instead and whole images are
/// assigned until each split reaches its quota, so split sizes may deviate
/// from the ratio by up to one image's examples.
pub fn split_dataset(examples: Vec<AlignedExample>, seed: u64, image_disjoint: bool) -> Vec<RvqaExample> {
    let n = examples.len();
    let n_train = (6 * n + 5) / 10;
    let n_dev = (2 * n + 5) / 10;
    let mut rng = RngState::new(seed).rng();
    let mut splits = vec![Split::Test; n];
    if image_disjoint {
        let mut images: Vec<&str> = examples
            .iter()
            .map(|e| e.image_id.as_str())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        images.shuffle(&mut rng);
        let mut by_image: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, e) in examples.iter().enumerate() {
            by_image.entry(e.image_id.as_str()).or_default().push(i);
        }
        let (mut train, mut dev) = (0, 0);
        for img in images {
            let idx = &by_image[img];
            let split = if train < n_train {
                train += idx.len();
                Split::Train
            } else if dev < n_dev {
                dev += idx.len();
                Split::Dev
            } else {
                Split::Test
            };
            for &i in idx {
                splits[i] = split;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (pos, &i) in order.iter().enumerate() {
            splits[i] = if pos < n_train {
                Split::Train
            } else if pos < n_train + n_dev {
                Split::Dev
            } else {
                Split::Test
            };
        }
    }
    examples
        .into_iter()
        .zip(splits)
        .map(|(e, split)| RvqaExample {
            id: e.id,
            image_id: e.image_id,
            question: e.question,
            answer: e.answer,
            fact: e.fact,
            score: e.score,
            split,
        })
        .collect()
}

/// Surface form → canonical form, one map per element role.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasTable {
    #[serde(default)]
    pub subject: HashMap<String, String>,
    #[serde(default)]
    pub relation: HashMap<String, String>,
    #[serde(default)]
    pub object: HashMap<String, String>,
}

impl AliasTable {
    /// Checks that every canonical form maps to itself (or is absent).
    pub fn validate(&self) -> Result<()> {
        for (role, map) in [
            ("subject", &self.subject),
            ("relation", &self.relation),
            ("object", &self.object),
        ] {
            for (from, to) in map {
                if let Some(next) = map.get(to) {
                    if next != to {
                        return Err(CoreError::Config(format!(
                            "{role} alias `{from}` → `{to}` is not canonical (`{to}` → `{next}`)"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn canonical<'a>(map: &'a HashMap<String, String>, s: &'a str) -> &'a str {
        map.get(s).map(String::as_str).unwrap_or(s)
    }

    /// Loads per-role JSON map files; any role may be omitted.
    pub fn load(subject: Option<&Path>, relation: Option<&Path>, object: Option<&Path>) -> Result<Self> {
        let read = |p: Option<&Path>| -> Result<HashMap<String, String>> {
            match p {
                None => Ok(HashMap::new()),
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| CoreError::io(p, e))?;
                    serde_json::from_str(&text).map_err(|e| CoreError::json(p.display().to_string(), e))
                }
            }
        };
        let t = Self {
            subject: read(subject)?,
            relation: read(relation)?,
            object: read(object)?,
        };
        t.validate()?;
        Ok(t)
    }
}

pub fn merge_aliases(examples: &mut [RvqaExample], table: &AliasTable) {
    for e in examples {
        e.fact.subject = AliasTable::canonical(&table.subject, &e.fact.subject).to_string();
        e.fact.relation = AliasTable::canonical(&table.relation, &e.fact.relation).to_string();
        e.fact.object = AliasTable::canonical(&table.object, &e.fact.object).to_string();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCount {
    pub element: String,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub subjects: usize,
    pub relations: usize,
    pub objects: usize,
}

impl Default for VocabSizes {
    fn default() -> Self {
        Self {
            subjects: 2000,
            relations: 256,
            objects: 2000,
        }
    }
}

/// Frequency-ranked candidate elements for the detector's three heads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementVocabulary {
    pub subjects: Vec<ElementCount>,
    pub relations: Vec<ElementCount>,
    pub objects: Vec<ElementCount>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Subject,
    Relation,
    Object,
}

impl ElementVocabulary {
    /// Vocabulary from plain element lists, with zero counts.
    pub fn from_lists(subjects: Vec<String>, relations: Vec<String>, objects: Vec<String>) -> Self {
        let wrap = |v: Vec<String>| v.into_iter().map(|element| ElementCount { element, count: 0 }).collect();
        Self {
            subjects: wrap(subjects),
            relations: wrap(relations),
            objects: wrap(objects),
        }
    }

    pub fn list(&self, role: Role) -> &[ElementCount] {
        match role {
            Role::Subject => &self.subjects,
            Role::Relation => &self.relations,
            Role::Object => &self.objects,
        }
    }

    pub fn sizes(&self) -> VocabSizes {
        VocabSizes {
            subjects: self.subjects.len(),
            relations: self.relations.len(),
            objects: self.objects.len(),
        }
    }

    pub fn index(&self, role: Role) -> HashMap<&str, usize> {
        self.list(role)
            .iter()
            .enumerate()
            .map(|(i, e)| (e.element.as_str(), i))
            .collect()
    }

    pub fn element(&self, role: Role, index: usize) -> Option<&str> {
        self.list(role).get(index).map(|e| e.element.as_str())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CoreError::json(path.display().to_string(), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    pub subject: f64,
    pub relation: f64,
    pub object: f64,
    pub warnings: Vec<String>,
}

fn rank(items: impl Iterator<Item = String>) -> Vec<ElementCount> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in items {
        *counts.entry(s).or_default() += 1;
    }
    let mut v: Vec<ElementCount> = counts
        .into_iter()
        .map(|(element, count)| ElementCount { element, count })
        .collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.element.cmp(&b.element)));
    v
}

/// Top-N elements per role over the training split, with coverage.
pub fn build_vocabulary(train: &[RvqaExample], sizes: VocabSizes) -> Result<(ElementVocabulary, Coverage)> {
    if train.is_empty() {
        return Err(CoreError::Input("cannot build a vocabulary from no training examples".into()));
    }
    let mut warnings = Vec::new();
    let mut take = |role: &str, ranked: Vec<ElementCount>, n: usize| {
        if n > ranked.len() {
            warnings.push(format!(
                "{role} vocabulary size {n} exceeds {} unique elements; using {}",
                ranked.len(),
                ranked.len()
            ));
        }
        ranked.into_iter().take(n).collect::<Vec<_>>()
    };
    let vocab = ElementVocabulary {
        subjects: take("subject", rank(train.iter().map(|e| e.fact.subject.clone())), sizes.subjects),
        relations: take("relation", rank(train.iter().map(|e| e.fact.relation.clone())), sizes.relations),
        objects: take("object", rank(train.iter().map(|e| e.fact.object.clone())), sizes.objects),
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let frac = |role: Role, get: fn(&FactTriple) -> &str| {
        let index = vocab.index(role);
        train.iter().filter(|e| index.contains_key(get(&e.fact))).count() as f64 / train.len() as f64
    };
    let coverage = Coverage {
        subject: frac(Role::Subject, |f| &f.subject),
        relation: frac(Role::Relation, |f| &f.relation),
        object: frac(Role::Object, |f| &f.object),
        warnings,
    };
    Ok((vocab, coverage))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyRow {
    pub item: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub total: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unique_images: usize,
    pub unique_subjects: usize,
    pub unique_relations: usize,
    pub unique_objects: usize,
    pub unique_facts: usize,
    pub top_subjects: Vec<FrequencyRow>,
    pub top_relations: Vec<FrequencyRow>,
    pub top_objects: Vec<FrequencyRow>,
    pub top_facts: Vec<FrequencyRow>,
}

pub fn dataset_stats(examples: &[RvqaExample]) -> DatasetStats {
    let total = examples.len();
    let top = |items: Vec<String>| -> (usize, Vec<FrequencyRow>) {
        let ranked = rank(items.into_iter());
        let unique = ranked.len();
        let rows = ranked
            .into_iter()
            .take(10)
            .map(|e| FrequencyRow {
                percent: 100.0 * e.count as f64 / total.max(1) as f64,
                item: e.element,
                count: e.count,
            })
            .collect();
        (unique, rows)
    };
    let count = |s: Split| examples.iter().filter(|e| e.split == s).count();
    let (unique_subjects, top_subjects) = top(examples.iter().map(|e| e.fact.subject.clone()).collect());
    let (unique_relations, top_relations) = top(examples.iter().map(|e| e.fact.relation.clone()).collect());
    let (unique_objects, top_objects) = top(examples.iter().map(|e| e.fact.object.clone()).collect());
    let (unique_facts, top_facts) = top(
        examples
            .iter()
            .map(|e| format!("{}, {}, {}", e.fact.subject, e.fact.relation, e.fact.object))
            .collect(),
    );
    DatasetStats {
        total,
        train: count(Split::Train),
        dev: count(Split::Dev),
        test: count(Split::Test),
        unique_images: examples.iter().map(|e| &e.image_id).collect::<BTreeSet<_>>().len(),
        unique_subjects,
        unique_relations,
        unique_objects,
        unique_facts,
        top_subjects,
        top_relations,
        top_objects,
        top_facts,
    }
}

pub fn to_jsonl(examples: &[RvqaExample]) -> String {
    let mut out = String::new();
    for e in examples {
        out.push_str(&serde_json::to_string(e).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(text: &str, context: &str) -> Result<Vec<RvqaExample>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CoreError::json(format!("{context}:{}", i + 1), e)))
        .collect()
}

pub fn load_jsonl(path: &Path) -> Result<Vec<RvqaExample>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    parse_jsonl(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(id: usize, image: &str, s: &str, r: &str, o: &str, split: Split) -> RvqaExample {
        RvqaExample {
            id: format!("e{id}"),
            image_id: image.into(),
            question: "q".into(),
            answer: "a".into(),
            fact: FactTriple::relation(s, r, o),
            score: 1.0,
            split,
        }
    }

    #[test]
    fn select_fact_examples() {
        let f = |i: usize| FactTriple::concept(&format!("c{i}"));
        let cands: Vec<(FactTriple, f64)> = [0.10, 0.25, 0.31, 0.35, 0.29]
            .iter()
            .enumerate()
            .map(|(i, s)| (f(i), *s))
            .collect();
        assert_eq!(select_fact(&cands, 0.30).unwrap(), (f(3), 0.35));
        assert!(select_fact(&cands, 0.36).is_none());
        assert_eq!(select_fact(&cands[..1], 0.0).unwrap().0, f(0));
        let tied = vec![(f(0), 0.5), (f(1), 0.5)];
        assert_eq!(select_fact(&tied, 0.3).unwrap().0, f(0));
    }

    #[test]
    fn split_ten_examples() {
        let aligned: Vec<AlignedExample> = (0..10)
            .map(|i| AlignedExample {
                id: format!("e{i}"),
                image_id: format!("img{}", i / 2),
                question: "q".into(),
                answer: "a".into(),
                fact: FactTriple::concept("x"),
                score: 0.5,
            })
            .collect();
        let out = split_dataset(aligned.clone(), 3, false);
        let c = |s| out.iter().filter(|e| e.split == s).count();
        assert_eq!((c(Split::Train), c(Split::Dev), c(Split::Test)), (6, 2, 2));
        assert_eq!(out, split_dataset(aligned.clone(), 3, false));
        assert_eq!(out.iter().map(|e| &e.id).collect::<Vec<_>>(), aligned.iter().map(|e| &e.id).collect::<Vec<_>>());

        let disjoint = split_dataset(aligned, 3, true);
        let mut owner: HashMap<&str, Split> = HashMap::new();
        for e in &disjoint {
            assert_eq!(*owner.entry(&e.image_id).or_insert(e.split), e.split);
        }
    }

    #[test]
    fn alias_table_rejects_chains() {
        let mut t = AliasTable::default();
        t.relation.insert("is on".into(), "on".into());
        t.relation.insert("on".into(), "on".into());
        t.validate().unwrap();
        t.relation.insert("on".into(), "upon".into());
        assert!(t.validate().is_err());
    }

    #[test]
    fn toy_vocabulary_and_stats() {
        let train: Vec<RvqaExample> = ["a", "a", "a", "b", "b"]
            .iter()
            .enumerate()
            .map(|(i, s)| ex(i, if i < 2 { "i0" } else { "i1" }, s, "r", "o", Split::Train))
            .collect();
        let sizes = VocabSizes {
            subjects: 1,
            relations: 5,
            objects: 1,
        };
        let (v, cov) = build_vocabulary(&train, sizes).unwrap();
        assert_eq!(v.subjects, vec![ElementCount { element: "a".into(), count: 3 }]);
        assert_eq!(cov.subject, 0.6);
        assert_eq!(cov.relation, 1.0);
        assert_eq!(v.relations.len(), 1);
        assert_eq!(cov.warnings.len(), 1);
        assert!(build_vocabulary(&[], sizes).is_err());

        let stats = dataset_stats(&train[..4]);
        assert_eq!(stats.unique_images, 2);
        assert_eq!(stats.top_subjects[0].item, "a");
        assert_eq!(stats.top_subjects[0].percent, 75.0);
    }

    #[test]
    fn jsonl_schema() {
        let e = ex(1, "img", "man", "on", "bike", Split::Dev);
        let line = to_jsonl(std::slice::from_ref(&e));
        let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(keys, ["answer", "fact", "id", "image_id", "question", "score", "split"]);
        assert_eq!(v["fact"], serde_json::json!({"s": "man", "r": "on", "o": "bike"}));
        assert_eq!(v["split"], "dev");
        assert_eq!(parse_jsonl(&line, "t").unwrap(), vec![e]);
    }
}
