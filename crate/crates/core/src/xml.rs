//! Small XML helpers shared by the document builders.

/// Escapes text for use in element content or a double-quoted attribute.
pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn check_well_formed(content: &str) -> Result<(), String> {
    roxmltree::Document::parse(content)
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Text of the first descendant element named `name`.
pub fn child_text<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Option<&'a str> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
        .and_then(|c| c.text())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping() {
        assert_eq!(escape(r#"a<b & "c""#), "a&lt;b &amp; &quot;c&quot;");
        assert!(check_well_formed(&format!("<a x=\"{}\">{}</a>", escape("\"<>"), escape("&"))).is_ok());
        assert!(check_well_formed("<a>").is_err());
    }
}
