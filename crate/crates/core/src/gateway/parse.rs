//! Parsing chat replies into concept lists and boolean verdicts.

/// Extract concept strings from a model reply.
///
/// Handles numbered lists, bulleted lists, comma-separated lines, and
/// one-per-line formats; list markers are stripped, empty entries
/// dropped, and duplicates collapsed to their first appearance. An
/// empty result signals an empty reply to the caller.
pub fn parse_concept_list(reply: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for line in reply.lines() {
        let line = strip_list_marker(line.trim());
        if line.is_empty() {
            continue;
        }
        for piece in line.split(',') {
            let piece = piece.trim();
            if piece.is_empty() {
                continue;
            }
            if seen.insert(piece.to_string()) {
                out.push(piece.to_string());
            }
        }
    }
    out
}

/// Remove a leading list marker: `1.`, `12)`, `-`, `*`, `•`.
pub(crate) fn strip_list_marker(line: &str) -> &str {
    let trimmed = line.trim_start();
    let digits = trimmed.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &trimmed[digits..];
        if let Some(rest) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return rest.trim_start();
        }
        return trimmed;
    }
    trimmed
        .strip_prefix("- ")
        .or_else(|| trimmed.strip_prefix("* "))
        .or_else(|| trimmed.strip_prefix("• "))
        .or_else(|| trimmed.strip_prefix('-').filter(|_| trimmed.len() > 1))
        .or_else(|| trimmed.strip_prefix('•'))
        .map(str::trim_start)
        .unwrap_or(trimmed)
}

/// Outcome of verdict extraction; `Unparseable` is a value, not an
/// error — the caller decides what a non-answer means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Yes,
    No,
    Unparseable,
}

impl Verdict {
    pub fn as_bool(self) -> Option<bool> {
        match self {
            Verdict::Yes => Some(true),
            Verdict::No => Some(false),
            Verdict::Unparseable => None,
        }
    }
}

/// Case-insensitive scan for the first decisive token: `true`/`yes`
/// against `false`/`no`. Anything else is unparseable.
pub fn parse_bool_verdict(reply: &str) -> Verdict {
    for token in reply
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        match token.to_ascii_lowercase().as_str() {
            "true" | "yes" => return Verdict::Yes,
            "false" | "no" => return Verdict::No,
            _ => {}
        }
    }
    Verdict::Unparseable
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_list_formats() {
        assert_eq!(
            parse_concept_list("1. Paella\n2. Sushi\n- Ramen"),
            vec!["Paella", "Sushi", "Ramen"]
        );
    }

    #[test]
    fn empty_reply_gives_empty_list() {
        assert!(parse_concept_list("").is_empty());
        assert!(parse_concept_list("  \n \n").is_empty());
    }

    #[test]
    fn comma_separated_line() {
        assert_eq!(
            parse_concept_list("Crow, Canada Goose"),
            vec!["Crow", "Canada Goose"]
        );
    }

    #[test]
    fn bullets_and_numbers_with_parens() {
        assert_eq!(
            parse_concept_list("* Falafel\n3) Hummus\n• Shakshuka\n- Tabbouleh"),
            vec!["Falafel", "Hummus", "Shakshuka", "Tabbouleh"]
        );
    }

    #[test]
    fn duplicates_keep_first_appearance() {
        assert_eq!(
            parse_concept_list("Crow\nRaven\nCrow"),
            vec!["Crow", "Raven"]
        );
    }

    #[test]
    fn plain_lines_kept_whole() {
        assert_eq!(
            parse_concept_list("Imperial Eagle\nBald Eagle"),
            vec!["Imperial Eagle", "Bald Eagle"]
        );
    }

    #[test]
    fn verdict_true_with_punctuation() {
        assert_eq!(parse_bool_verdict("True."), Verdict::Yes);
    }

    #[test]
    fn verdict_leading_no_with_explanation() {
        assert_eq!(
            parse_bool_verdict("no, that is a dish not a bird"),
            Verdict::No
        );
    }

    #[test]
    fn verdict_indecisive_is_unparseable() {
        assert_eq!(parse_bool_verdict("it depends"), Verdict::Unparseable);
        assert_eq!(parse_bool_verdict(""), Verdict::Unparseable);
    }

    #[test]
    fn verdict_first_decisive_token_wins() {
        assert_eq!(parse_bool_verdict("I would say yes, not no"), Verdict::Yes);
        assert_eq!(parse_bool_verdict("Yes... actually false"), Verdict::Yes);
    }
}
