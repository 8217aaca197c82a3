use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactKind {
    Concept,
    Attribute,
    Relation,
}

/// A `(subject, relation, object)` triple over raw element strings.
///
/// Serialized as `{"s": …, "r": …, "o": …}`; the kind is recovered from
/// the template shape on load.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RawTriple", into = "RawTriple")]
pub struct FactTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
    pub kind: FactKind,
}

#[derive(Serialize, Deserialize)]
struct RawTriple {
    s: String,
    r: String,
    o: String,
}

impl From<RawTriple> for FactTriple {
    fn from(t: RawTriple) -> Self {
        let kind = FactTriple::infer_kind(&t.s, &t.r);
        FactTriple {
            subject: t.s,
            relation: t.r,
            object: t.o,
            kind,
        }
    }
}

impl From<FactTriple> for RawTriple {
    fn from(t: FactTriple) -> Self {
        RawTriple {
            s: t.subject,
            r: t.relation,
            o: t.object,
        }
    }
}

impl FactTriple {
    pub fn concept(object: &str) -> Self {
        Self {
            subject: "there".into(),
            relation: "is".into(),
            object: object.into(),
            kind: FactKind::Concept,
        }
    }

    pub fn attribute(subject: &str, attribute: &str) -> Self {
        Self {
            subject: subject.into(),
            relation: "is".into(),
            object: attribute.into(),
            kind: FactKind::Attribute,
        }
    }

    pub fn relation(subject: &str, relation: &str, object: &str) -> Self {
        Self {
            subject: subject.into(),
            relation: relation.into(),
            object: object.into(),
            kind: FactKind::Relation,
        }
    }

    pub fn infer_kind(subject: &str, relation: &str) -> FactKind {
        match (subject, relation) {
            ("there", "is") => FactKind::Concept,
            (_, "is") => FactKind::Attribute,
            _ => FactKind::Relation,
        }
    }

    /// Space-joined elements, the text a relevance scorer compares against.
    pub fn text(&self) -> String {
        format!("{} {} {}", self.subject, self.relation, self.object)
    }

    pub fn is_valid(&self) -> bool {
        !self.subject.trim().is_empty()
            && !self.relation.trim().is_empty()
            && !self.object.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
}

/// One image's QA pairs and semantic annotations.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub qa: Vec<QaPair>,
    #[serde(default)]
    pub concepts: Vec<String>,
    #[serde(default)]
    pub attributes: Vec<Vec<String>>,
    #[serde(default)]
    pub relationships: Vec<Vec<String>>,
}

impl ImageAnnotation {
    pub fn has_semantics(&self) -> bool {
        !(self.concepts.is_empty() && self.attributes.is_empty() && self.relationships.is_empty())
    }
}

/// Parse outcome for an annotation JSONL corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnnotationLoad {
    pub records: usize,
    pub skipped_records: usize,
}

/// Parses annotation JSONL. Lines lacking `image_id` or `qa`, or otherwise
/// not matching the schema, are skipped and counted.
pub fn parse_annotations(text: &str) -> (Vec<ImageAnnotation>, AnnotationLoad) {
    let mut out = Vec::new();
    let mut load = AnnotationLoad::default();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<Value>(line)
            .ok()
            .filter(|v| v.get("image_id").is_some_and(Value::is_string) && v.get("qa").is_some())
            .and_then(|v| serde_json::from_value::<ImageAnnotation>(v).ok());
        match parsed {
            Some(a) => {
                load.records += 1;
                out.push(a);
            }
            None => {
                log::warn!("annotation line {} skipped: missing or malformed fields", lineno + 1);
                load.skipped_records += 1;
            }
        }
    }
    (out, load)
}

/// Instantiates the three fact templates for one image. Malformed entries
/// (wrong arity, empty parts) are skipped and counted in the second value.
pub fn template_facts(annotation: &ImageAnnotation) -> (Vec<FactTriple>, usize) {
    let mut facts = Vec::new();
    let mut skipped = 0;
    let mut push = |f: FactTriple| {
        if f.is_valid() {
            facts.push(f);
        } else {
            skipped += 1;
        }
    };
    for c in &annotation.concepts {
        push(FactTriple::concept(c));
    }
    for a in &annotation.attributes {
        match a.as_slice() {
            [s, attr] => push(FactTriple::attribute(s, attr)),
            _ => push(FactTriple::attribute("", "")),
        }
    }
    for r in &annotation.relationships {
        match r.as_slice() {
            [s, rel, o] => push(FactTriple::relation(s, rel, o)),
            _ => push(FactTriple::relation("", "", "")),
        }
    }
    (facts, skipped)
}
