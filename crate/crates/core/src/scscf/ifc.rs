//! Initial filter criteria: the per-subscriber trigger rules the S-CSCF
//! evaluates to pick application servers.
//!
//! Trigger points are in disjunctive normal form: SPTs sharing a `Group`
//! value are AND'ed, and the rule fires when any group is fully satisfied.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::sip::{SipMessage, SipUri};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefaultHandling {
    SessionContinued = 0,
    SessionTerminated = 1,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPattern {
    /// `*`: the header only has to be present.
    Any,
    /// Equal (ignoring ASCII case) to the whole trimmed value or to its
    /// first `;`-separated component.
    Literal(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SptKind {
    SipHeader { name: String, content: ContentPattern },
    SessionCase(u8),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServicePointTrigger {
    pub negated: bool,
    pub kind: SptKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IfcRule {
    pub priority: i32,
    pub trigger_groups: BTreeMap<u32, Vec<ServicePointTrigger>>,
    pub application_server: SipUri,
    pub default_handling: DefaultHandling,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IfcDocument {
    /// Sorted by ascending priority.
    pub rules: Vec<IfcRule>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IfcError {
    #[error("not well-formed XML: {0}")]
    Xml(String),
    #[error("iFC schema error at <{element}>: {reason}")]
    Schema { element: String, reason: String },
}

fn schema(element: &str, reason: impl Into<String>) -> IfcError {
    IfcError::Schema {
        element: element.to_string(),
        reason: reason.into(),
    }
}

type XmlNode<'a, 'i> = roxmltree::Node<'a, 'i>;

fn elements<'a, 'i>(n: XmlNode<'a, 'i>) -> impl Iterator<Item = XmlNode<'a, 'i>> {
    n.children().filter(|c| c.is_element())
}

fn text_of(n: XmlNode<'_, '_>) -> Result<String, IfcError> {
    if elements(n).next().is_some() {
        return Err(schema(n.tag_name().name(), "expected text content"));
    }
    Ok(n.text().unwrap_or_default().trim().to_string())
}

fn int_of<T: std::str::FromStr>(n: XmlNode<'_, '_>) -> Result<T, IfcError> {
    let t = text_of(n)?;
    t.parse()
        .map_err(|_| schema(n.tag_name().name(), format!("not an integer: {t:?}")))
}

fn bool_of(n: XmlNode<'_, '_>) -> Result<bool, IfcError> {
    match text_of(n)?.as_str() {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(schema(n.tag_name().name(), format!("not a boolean: {other:?}"))),
    }
}

/// Parses one `<InitialFilterCriteria>` element, or a `<ServiceProfile>`
/// holding several.
pub fn parse_ifc(xml: &str) -> Result<IfcDocument, IfcError> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| IfcError::Xml(e.to_string()))?;
    let root = doc.root_element();
    let mut rules = match root.tag_name().name() {
        "InitialFilterCriteria" => vec![parse_rule(root)?],
        "ServiceProfile" => elements(root)
            .map(|c| match c.tag_name().name() {
                "InitialFilterCriteria" => parse_rule(c),
                other => Err(schema(other, "unknown element")),
            })
            .collect::<Result<_, _>>()?,
        other => return Err(schema(other, "unknown root element")),
    };
    rules.sort_by_key(|r| r.priority);
    if let Some(w) = rules.windows(2).find(|w| w[0].priority == w[1].priority) {
        return Err(schema("Priority", format!("duplicate priority {}", w[0].priority)));
    }
    Ok(IfcDocument { rules })
}

fn parse_rule(n: XmlNode<'_, '_>) -> Result<IfcRule, IfcError> {
    let (mut priority, mut groups, mut server) = (None, None, None);
    for c in elements(n) {
        match c.tag_name().name() {
            "Priority" if priority.is_none() => priority = Some(int_of(c)?),
            "TriggerPoint" if groups.is_none() => groups = Some(parse_trigger_point(c)?),
            "ApplicationServer" if server.is_none() => server = Some(parse_server(c)?),
            other @ ("Priority" | "TriggerPoint" | "ApplicationServer") => {
                return Err(schema(other, "duplicate element"))
            }
            other => return Err(schema(other, "unknown element")),
        }
    }
    let priority = priority.ok_or_else(|| schema("InitialFilterCriteria", "missing <Priority>"))?;
    let trigger_groups =
        groups.ok_or_else(|| schema("InitialFilterCriteria", "missing <TriggerPoint>"))?;
    let (application_server, default_handling) =
        server.ok_or_else(|| schema("InitialFilterCriteria", "missing <ApplicationServer>"))?;
    Ok(IfcRule {
        priority,
        trigger_groups,
        application_server,
        default_handling,
    })
}

fn parse_trigger_point(
    n: XmlNode<'_, '_>,
) -> Result<BTreeMap<u32, Vec<ServicePointTrigger>>, IfcError> {
    let mut groups: BTreeMap<u32, Vec<ServicePointTrigger>> = BTreeMap::new();
    for c in elements(n) {
        if c.tag_name().name() != "SPT" {
            return Err(schema(c.tag_name().name(), "unknown element"));
        }
        let (group, spt) = parse_spt(c)?;
        groups.entry(group).or_default().push(spt);
    }
    if groups.is_empty() {
        return Err(schema("TriggerPoint", "no <SPT>"));
    }
    Ok(groups)
}

fn parse_spt(n: XmlNode<'_, '_>) -> Result<(u32, ServicePointTrigger), IfcError> {
    let (mut negated, mut group, mut kind) = (None, None, None);
    for c in elements(n) {
        let name = c.tag_name().name();
        match name {
            "ConditionNegated" if negated.is_none() => negated = Some(bool_of(c)?),
            "Group" if group.is_none() => group = Some(int_of(c)?),
            "SIPHeader" if kind.is_none() => kind = Some(parse_sip_header(c)?),
            "SessionCase" if kind.is_none() => kind = Some(SptKind::SessionCase(int_of(c)?)),
            "ConditionNegated" | "Group" | "SIPHeader" | "SessionCase" => {
                return Err(schema(name, "duplicate or conflicting element"))
            }
            other => return Err(schema(other, "unknown element")),
        }
    }
    let kind = kind.ok_or_else(|| schema("SPT", "missing <SIPHeader> or <SessionCase>"))?;
    Ok((
        group.unwrap_or(0),
        ServicePointTrigger {
            negated: negated.unwrap_or(false),
            kind,
        },
    ))
}

fn parse_sip_header(n: XmlNode<'_, '_>) -> Result<SptKind, IfcError> {
    let (mut name, mut content) = (None, None);
    for c in elements(n) {
        match c.tag_name().name() {
            "Header" if name.is_none() => name = Some(text_of(c)?),
            "Content" if content.is_none() => content = Some(text_of(c)?),
            other => return Err(schema(other, "unknown or duplicate element")),
        }
    }
    let name = name
        .filter(|s| !s.is_empty())
        .ok_or_else(|| schema("SIPHeader", "missing <Header>"))?;
    let content = match content.as_deref() {
        None | Some("*") => ContentPattern::Any,
        Some(lit) => ContentPattern::Literal(lit.to_string()),
    };
    Ok(SptKind::SipHeader { name, content })
}

fn parse_server(n: XmlNode<'_, '_>) -> Result<(SipUri, DefaultHandling), IfcError> {
    let (mut server, mut handling) = (None, None);
    for c in elements(n) {
        match c.tag_name().name() {
            "ServerName" if server.is_none() => {
                let t = text_of(c)?;
                server = Some(
                    t.parse::<SipUri>()
                        .map_err(|e| schema("ServerName", e.to_string()))?,
                );
            }
            "DefaultHandling" if handling.is_none() => {
                handling = Some(match int_of::<u8>(c)? {
                    0 => DefaultHandling::SessionContinued,
                    1 => DefaultHandling::SessionTerminated,
                    v => return Err(schema("DefaultHandling", format!("unknown value {v}"))),
                })
            }
            other => return Err(schema(other, "unknown or duplicate element")),
        }
    }
    let server = server.ok_or_else(|| schema("ApplicationServer", "missing <ServerName>"))?;
    Ok((server, handling.unwrap_or(DefaultHandling::SessionContinued)))
}

impl ServicePointTrigger {
    pub fn holds(&self, msg: &SipMessage, session_case: u8) -> bool {
        let raw = match &self.kind {
            SptKind::SessionCase(code) => *code == session_case,
            SptKind::SipHeader { name, content } => {
                let mut values = msg
                    .headers
                    .iter()
                    .filter(|h| h.name().eq_ignore_ascii_case(name))
                    .map(|h| h.value());
                match content {
                    ContentPattern::Any => values.next().is_some(),
                    ContentPattern::Literal(lit) => values.any(|v| {
                        let v = v.trim();
                        let first = v.split(';').next().unwrap_or_default().trim();
                        v.eq_ignore_ascii_case(lit) || first.eq_ignore_ascii_case(lit)
                    }),
                }
            }
        };
        raw != self.negated
    }
}

impl IfcRule {
    pub fn matches(&self, msg: &SipMessage, session_case: u8) -> bool {
        self.trigger_groups
            .values()
            .any(|group| group.iter().all(|spt| spt.holds(msg, session_case)))
    }
}

/// Application servers whose rules match `msg`, in priority order.
pub fn evaluate_ifc(
    doc: &IfcDocument,
    msg: &SipMessage,
    session_case: u8,
) -> Vec<(SipUri, DefaultHandling)> {
    doc.rules
        .iter()
        .filter(|r| r.matches(msg, session_case))
        .map(|r| (r.application_server.clone(), r.default_handling))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const PROFILE: &str = include_str!("../../fixtures/service_profile.xml");

    #[test]
    fn parses_trigger_rule_fixture() {
        let doc = parse_ifc(PROFILE).unwrap();
        assert_eq!(doc.rules.len(), 1);
        let r = &doc.rules[0];
        assert_eq!(r.priority, 1);
        assert_eq!(r.trigger_groups.len(), 1);
        assert_eq!(
            r.trigger_groups[&1],
            vec![
                ServicePointTrigger {
                    negated: false,
                    kind: SptKind::SipHeader {
                        name: "Sensor-type".into(),
                        content: ContentPattern::Any
                    }
                },
                ServicePointTrigger {
                    negated: false,
                    kind: SptKind::SessionCase(0)
                },
            ]
        );
        assert_eq!(r.application_server.to_string(), "sip:issee@192.168.130.76:5050");
        assert_eq!(r.default_handling, DefaultHandling::SessionContinued);
    }

    #[test]
    fn empty_criteria_rejected() {
        assert!(matches!(
            parse_ifc("<InitialFilterCriteria></InitialFilterCriteria>"),
            Err(IfcError::Schema { .. })
        ));
    }

    #[test]
    fn unknown_element_rejected() {
        let xml = PROFILE.replace("<Group>1</Group>\n<SessionCase>", "<Group>1</Group>\n<Method>REGISTER</Method>\n<SessionCase>");
        let err = parse_ifc(&xml).unwrap_err();
        assert_eq!(
            err,
            IfcError::Schema {
                element: "Method".into(),
                reason: "unknown element".into()
            }
        );
        assert!(matches!(parse_ifc("<InitialFilterCriteria>"), Err(IfcError::Xml(_))));
    }

    #[test]
    fn service_profile_sorted_by_priority() {
        let two = PROFILE.replace("<Priority>1</Priority>", "<Priority>2</Priority>")
            .replace("sip:issee@", "sip:other@");
        let xml = format!("<ServiceProfile>{two}{PROFILE}</ServiceProfile>");
        let doc = parse_ifc(&xml).unwrap();
        assert_eq!(doc.rules.iter().map(|r| r.priority).collect::<Vec<_>>(), vec![1, 2]);

        let dup = format!("<ServiceProfile>{PROFILE}{PROFILE}</ServiceProfile>");
        assert!(matches!(parse_ifc(&dup), Err(IfcError::Schema { .. })));
    }
}
