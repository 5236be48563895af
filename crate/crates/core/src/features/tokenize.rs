use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

// Basic Latin, Latin-1, Latin Extended-A/B and Latin Extended Additional.
fn is_latin(c: char) -> bool {
    c.is_ascii_alphabetic()
        || ('\u{00C0}'..='\u{024F}').contains(&c)
        || ('\u{1E00}'..='\u{1EFF}').contains(&c)
}

fn lower_latin(s: &str, out: &mut String) {
    for c in s.chars() {
        if is_latin(c) {
            out.extend(c.to_lowercase());
        } else {
            out.push(c);
        }
    }
}

/// NFC-normalizes, lowercases Latin letters, splits on Unicode whitespace and
/// strips leading/trailing punctuation (Ethiopic `። ፣ ፤` included) from each
/// token. Empty tokens are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let normalized: String = text.nfc().collect();
    normalized
        .split_whitespace()
        .filter_map(|piece| {
            let core = piece.trim_matches(is_punctuation);
            if core.is_empty() {
                return None;
            }
            let mut tok = String::with_capacity(core.len());
            lower_latin(core, &mut tok);
            Some(tok)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn whitespace_split() {
        assert_eq!(tokenize("ሰበር ዜና ነው"), vec!["ሰበር", "ዜና", "ነው"]);
    }

    #[test]
    fn empty_input() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  \n\t ").is_empty());
        assert!(tokenize(" !!! ። ").is_empty());
    }

    #[test]
    fn strips_edge_punctuation() {
        assert_eq!(tokenize("ዜና!!!"), vec!["ዜና"]);
        assert_eq!(tokenize("«ዜና»። ነው፣"), vec!["ዜና", "ነው"]);
        // interior punctuation is kept
        assert_eq!(tokenize("e.g."), vec!["e.g"]);
    }

    #[test]
    fn lowercases_latin_only() {
        assert_eq!(tokenize("BBC ÉTÉ ሰበር"), vec!["bbc", "été", "ሰበር"]);
        // Greek stays as is
        assert_eq!(tokenize("ΣΟΦΙΑ"), vec!["ΣΟΦΙΑ"]);
    }

    #[test]
    fn splits_on_unicode_whitespace() {
        assert_eq!(tokenize("ሰበር\u{00A0}ዜና\u{3000}ነው"), vec!["ሰበር", "ዜና", "ነው"]);
    }

    #[test]
    fn nfc_applied() {
        assert_eq!(tokenize("Cafe\u{0301}"), vec!["caf\u{e9}"]);
    }

    proptest! {
        #[test]
        fn idempotent_on_rejoined_tokens(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn tokens_have_no_edge_punctuation_or_space(s in "\\PC{0,40}") {
            for t in tokenize(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert!(!is_punctuation(t.chars().next().unwrap()));
                prop_assert!(!is_punctuation(t.chars().last().unwrap()));
            }
        }
    }
}
