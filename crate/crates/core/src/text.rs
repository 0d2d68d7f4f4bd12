//! Label normalization shared by taxonomy lookup and response parsing.

/// Case-fold, trim and collapse internal whitespace runs to a single space.
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for word in raw.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Remove a leading list marker (`-`, `*`, `+`, `•`, or `12.` / `12)`) and
/// surrounding whitespace. Case is preserved.
pub fn strip_list_marker(raw: &str) -> &str {
    let s = raw.trim();
    if let Some(rest) = s
        .strip_prefix('-')
        .or_else(|| s.strip_prefix('*'))
        .or_else(|| s.strip_prefix('+'))
        .or_else(|| s.strip_prefix('•'))
    {
        return rest.trim_start();
    }
    let digits = s.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &s[digits..];
        if let Some(after) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            // "2.5 GB" is not a marker
            if after.is_empty() || after.starts_with(char::is_whitespace) {
                return after.trim_start();
            }
        }
    }
    s
}

/// Normalization applied to raw labels pulled out of model output.
pub fn normalize_label(raw: &str) -> String {
    normalize_name(strip_list_marker(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalizes_case_and_whitespace() {
        assert_eq!(normalize_name("  usage   data "), "usage data");
        assert_eq!(normalize_name("APP INTERACTIONS"), "app interactions");
        assert_eq!(normalize_name("\tApp\nInteractions"), "app interactions");
    }

    #[test]
    fn label_examples() {
        assert_eq!(normalize_label("- Usage Data "), "usage data");
        assert_eq!(normalize_label("1. Location"), "location");
        assert_eq!(normalize_label(""), "");
        assert_eq!(normalize_label("* Email Address"), "email address");
        assert_eq!(normalize_label("12) Contacts"), "contacts");
    }

    #[test]
    fn marker_requires_separator_after_digits() {
        assert_eq!(strip_list_marker("2.5 GB"), "2.5 GB");
        assert_eq!(strip_list_marker("3D Models"), "3D Models");
    }

    #[test]
    fn normalize_label_is_idempotent_on_plain_text() {
        for s in ["Usage Data", "  a  b ", "- x", "1. y"] {
            let once = normalize_label(s);
            assert_eq!(normalize_label(&once), once);
        }
    }
}
