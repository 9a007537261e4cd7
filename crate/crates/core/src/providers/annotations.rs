//! Screen-annotation records returned by the annotator role.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::outermost_list;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationKind {
    Functionality,
    Data,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "type")]
    pub kind: AnnotationKind,
    pub label: String,
    pub description: String,
}

impl AnnotationRecord {
    pub fn is_valid(&self) -> bool {
        !self.label.trim().is_empty() && !self.description.trim().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no parseable annotation list: {reason}")]
pub struct AnnotationParseError {
    pub reason: String,
    pub raw: String,
}

/// Parses the outermost bracketed list in `raw`. Entries with an unknown type
/// or an empty label or description are dropped.
pub fn parse_annotations(raw: &str) -> Result<Vec<AnnotationRecord>, AnnotationParseError> {
    let err = |reason: String| AnnotationParseError {
        reason,
        raw: raw.to_string(),
    };
    let span = outermost_list(raw).ok_or_else(|| err("no bracketed list".into()))?;
    let items: Vec<serde_json::Value> =
        serde_json::from_str(span).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::with_capacity(items.len());
    for item in items {
        match serde_json::from_value::<AnnotationRecord>(item) {
            Ok(rec) if rec.is_valid() => out.push(rec),
            Ok(rec) => log::debug!("dropping annotation with empty fields: {rec:?}"),
            Err(e) => log::debug!("dropping malformed annotation: {e}"),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_parse() {
        let recs = parse_annotations(
            r#"[{"type":"functionality","label":"WiFi toggle","description":"Turns wifi on."}]"#,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].kind, AnnotationKind::Functionality);
    }

    #[test]
    fn prose_is_stripped() {
        let raw =
            r#"Here you go: [{"type":"data","label":"Battery","description":"Shows 80%."}] thanks"#;
        assert_eq!(parse_annotations(raw).unwrap()[0].label, "Battery");
    }

    #[test]
    fn empty_list_and_failures() {
        assert!(parse_annotations("[]").unwrap().is_empty());
        assert!(parse_annotations("nothing here").is_err());
        assert!(parse_annotations("[not json]").is_err());
    }

    fn record() -> impl Strategy<Value = AnnotationRecord> {
        (
            prop_oneof![
                Just(AnnotationKind::Functionality),
                Just(AnnotationKind::Data)
            ],
            "[ -~]*[a-z][ -~]*",
            "[ -~]*[a-z][ -~]*",
        )
            .prop_map(|(kind, label, description)| AnnotationRecord {
                kind,
                label,
                description,
            })
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(recs in proptest::collection::vec(record(), 0..6)) {
            let raw = serde_json::to_string(&recs).unwrap();
            prop_assert_eq!(parse_annotations(&raw).unwrap(), recs);
        }
    }
}
