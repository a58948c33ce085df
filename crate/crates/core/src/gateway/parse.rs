use super::{GatewayError, PromptTemplate};
use crate::model::ConflictLabel;

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedVerdict {
    pub label: ConflictLabel,
    pub conformant: bool,
    pub explanation: Option<String>,
    pub recommendation: Option<String>,
}

/// Value of a `key:` line, matched case-insensitively.
fn field<'a>(raw: &'a str, key: &str) -> Option<&'a str> {
    raw.lines().find_map(|line| {
        let line = line.trim_start();
        let (k, v) = line.split_once(':')?;
        k.trim().eq_ignore_ascii_case(key).then_some(v)
    })
}

fn non_empty(v: Option<&str>) -> Option<String> {
    v.map(str::trim).filter(|v| !v.is_empty()).map(str::to_string)
}

/// Lenient reading: lowercase, first token of the first non-empty line,
/// surrounding punctuation stripped.
fn normalize(text: &str) -> Option<ConflictLabel> {
    let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
    let token = line.split_whitespace().next()?.to_lowercase();
    PromptTemplate::lexicon(token.trim_matches(|c: char| !c.is_alphanumeric()))
}

/// Read a verdict from raw model text.
///
/// A reply that is exactly `yes` or `no` (or a `verdict:` line whose value is
/// exactly that) is conformant. Anything else recoverable by normalization is
/// accepted but flagged non-conformant.
pub fn parse_verdict(raw: &str) -> Result<ParsedVerdict, GatewayError> {
    let unparseable = || GatewayError::Unparseable { raw: raw.to_string() };
    if let Some(label) = PromptTemplate::lexicon(raw) {
        return Ok(ParsedVerdict { label, conformant: true, explanation: None, recommendation: None });
    }
    let explanation = non_empty(field(raw, "explanation"));
    let recommendation = non_empty(field(raw, "recommendation"));
    let (label, conformant) = match field(raw, "verdict") {
        Some(v) => {
            let exact = v.strip_prefix(' ').unwrap_or(v);
            match PromptTemplate::lexicon(exact) {
                Some(l) => (l, true),
                None => (normalize(v).ok_or_else(unparseable)?, false),
            }
        }
        None => (normalize(raw).ok_or_else(unparseable)?, false),
    };
    Ok(ParsedVerdict { label, conformant, explanation, recommendation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parsed(raw: &str) -> (ConflictLabel, bool) {
        let p = parse_verdict(raw).unwrap();
        (p.label, p.conformant)
    }

    #[test]
    fn exact_and_lenient() {
        assert_eq!(parsed("yes"), (ConflictLabel::Conflict, true));
        assert_eq!(parsed("no"), (ConflictLabel::NoConflict, true));
        assert_eq!(parsed("No."), (ConflictLabel::NoConflict, false));
        assert_eq!(parsed(" yes\n"), (ConflictLabel::Conflict, false));
        assert_eq!(parsed("YES"), (ConflictLabel::Conflict, false));
        assert_eq!(parsed("\"no\""), (ConflictLabel::NoConflict, false));
        assert_eq!(parsed("Yes, the bus and the car will meet."), (ConflictLabel::Conflict, false));
    }

    #[test]
    fn unparseable_outside_lexicon() {
        assert!(matches!(parse_verdict("maybe a conflict"), Err(GatewayError::Unparseable { .. })));
        assert!(parse_verdict("").is_err());
        assert!(parse_verdict("yesterday").is_err());
        assert!(parse_verdict("verdict: unclear").is_err());
    }

    #[test]
    fn rationale_layout() {
        let p = parse_verdict("verdict: yes\nexplanation: the van turns across the bus\nrecommendation: the van should wait").unwrap();
        assert_eq!((p.label, p.conformant), (ConflictLabel::Conflict, true));
        assert_eq!(p.explanation.as_deref(), Some("the van turns across the bus"));
        assert_eq!(p.recommendation.as_deref(), Some("the van should wait"));

        let p = parse_verdict("Verdict: No.\nExplanation: clear").unwrap();
        assert_eq!((p.label, p.conformant), (ConflictLabel::NoConflict, false));
        assert_eq!(p.explanation.as_deref(), Some("clear"));
        assert_eq!(p.recommendation, None);
    }

    proptest! {
        #[test]
        fn arbitrary_text_never_panics(s in ".{0,80}") {
            if let Ok(p) = parse_verdict(&s) {
                prop_assert!(!p.conformant || s == "yes" || s == "no" || s.contains(':'));
            }
        }
    }
}
