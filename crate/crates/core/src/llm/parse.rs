//! Extraction of structured values from free-form completions.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no number found in completion")]
    NoNumber,
    #[error("completion names no item")]
    EmptyAction,
}

static VALUE_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bvalue\s*[:=]\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)").expect("regex"));
static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("regex"));
static ACTION_MARKER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(?:action(?:\s*\d+)?|recommend)\s*:\s*(.*)").expect("regex"));

/// A number after a `VALUE:` marker, else the last standalone number.
/// The result is clamped to `[0, max_value]`.
pub fn parse_value(text: &str, max_value: f64) -> Result<f64, ParseError> {
    let raw = match VALUE_MARKER.captures_iter(text).last() {
        Some(c) => c[1].parse::<f64>().ok(),
        None => None,
    };
    let raw = match raw {
        Some(v) => v,
        None => standalone_numbers(text).last().copied().ok_or(ParseError::NoNumber)?,
    };
    if !raw.is_finite() {
        return Err(ParseError::NoNumber);
    }
    Ok(raw.clamp(0.0, max_value))
}

fn standalone_numbers(text: &str) -> Vec<f64> {
    NUMBER
        .find_iter(text)
        .filter(|m| {
            let before = text[..m.start()].chars().next_back();
            let after = text[m.end()..].chars().next();
            !before.is_some_and(|c| c.is_alphabetic() || c == '_') && !after.is_some_and(|c| c.is_alphabetic() || c == '_')
        })
        .filter_map(|m| m.as_str().parse::<f64>().ok())
        .collect()
}

/// The item text after the last `ACTION:` or `Recommend:` marker, or the
/// whole completion when no marker is present. Quotes, brackets and a
/// trailing full stop are stripped.
pub fn parse_action(text: &str) -> Result<String, ParseError> {
    let span = match ACTION_MARKER.captures_iter(text).last() {
        Some(c) => c.get(1).map_or("", |m| m.as_str()).to_string(),
        None => text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string(),
    };
    let cleaned = clean_title(&span);
    if cleaned.is_empty() {
        Err(ParseError::EmptyAction)
    } else {
        Ok(cleaned)
    }
}

fn clean_title(s: &str) -> String {
    const STRIP: &[char] = &['"', '\'', '`', '[', ']', '<', '>', '*', '“', '”', '‘', '’'];
    let mut t = s.trim();
    loop {
        let next = t.trim_matches(STRIP).trim();
        let next = next.strip_suffix('.').map(str::trim_end).unwrap_or(next);
        if next == t {
            break;
        }
        t = next;
    }
    t.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn value_marker_wins() {
        assert_eq!(parse_value("I think 3 rounds. VALUE: 7.5", 500.0), Ok(7.5));
        assert_eq!(parse_value("value = 12 then 99", 500.0), Ok(12.0));
        assert_eq!(parse_value("Value:\n4e1", 500.0), Ok(40.0));
    }

    #[test]
    fn value_fallback_and_clamp() {
        assert_eq!(parse_value("roughly 3 or maybe 4.25", 500.0), Ok(4.25));
        assert_eq!(parse_value("item42 gets 6", 500.0), Ok(6.0));
        assert_eq!(parse_value("VALUE: -3", 500.0), Ok(0.0));
        assert_eq!(parse_value("VALUE: 9000", 500.0), Ok(500.0));
        assert_eq!(parse_value("no idea", 500.0), Err(ParseError::NoNumber));
        assert_eq!(parse_value("abc7def", 500.0), Err(ParseError::NoNumber));
    }

    #[test]
    fn action_marker_forms() {
        assert_eq!(parse_action("Thought: x\nACTION: \"Half-Life 2\"").unwrap(), "Half-Life 2");
        assert_eq!(parse_action("Recommend: [Portal]").unwrap(), "Portal");
        assert_eq!(parse_action("Action 3: <Stardew Valley>.").unwrap(), "Stardew Valley");
        assert_eq!(parse_action("  Celeste  \nbecause it is good").unwrap(), "Celeste");
        assert_eq!(parse_action("ACTION: ''"), Err(ParseError::EmptyAction));
        assert_eq!(parse_action("   "), Err(ParseError::EmptyAction));
    }

    proptest! {
        #[test]
        fn value_always_in_range(text in ".{0,60}", max in 1.0f64..1000.0) {
            if let Ok(v) = parse_value(&text, max) {
                prop_assert!((0.0..=max).contains(&v));
            }
        }

        #[test]
        fn marked_value_round_trips(v in 0.0f64..500.0, noise in "[a-z ]{0,20}") {
            let text = format!("{noise} VALUE: {v}");
            prop_assert_eq!(parse_value(&text, 500.0).unwrap(), v);
        }
    }
}
