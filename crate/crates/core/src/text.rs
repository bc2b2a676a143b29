//! Character classes and tokenisation shared by cleansing and annotation.

use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

/// Unicode punctuation (P*) or symbol (S*).
pub fn is_punct_or_symbol(c: char) -> bool {
    matches!(
        c.general_category_group(),
        GeneralCategoryGroup::Punctuation | GeneralCategoryGroup::Symbol
    )
}

/// Case folding used for gazetteer lookups.
///
/// Per-character lowercase mapping; for the scripts found in the corpora this
/// coincides with Unicode simple case folding.
pub fn case_fold(s: &str) -> String {
    s.to_lowercase()
}

/// Case-folded whitespace tokens of `s` with punctuation and symbols treated
/// as separators. Used to normalise gazetteer surface forms so that
/// "Hanson-Young" is keyed as `["hanson", "young"]`.
pub fn normalized_tokens(s: &str) -> Vec<String> {
    let spaced: String = s
        .chars()
        .map(|c| if is_punct_or_symbol(c) { ' ' } else { c })
        .collect();
    case_fold(&spaced)
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}
