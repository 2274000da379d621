use html_escape::{encode_double_quoted_attribute, encode_text};

use crate::attributes::AttributeBundle;

const CONSENT_TEMPLATE: &str = include_str!("../../templates/consent.html");

pub(crate) struct ConsentPage<'a> {
    pub bundle: &'a AttributeBundle,
    pub action: &'a str,
    pub challenge: &'a str,
    pub csrf_token: &'a str,
    pub return_url: &'a str,
}

impl ConsentPage<'_> {
    pub fn render(&self) -> String {
        let entitlements: String = self
            .bundle
            .entitlements
            .iter()
            .map(|e| format!("<li>{}</li>\n", encode_text(e)))
            .collect();
        let mail = self.bundle.mail.as_deref().unwrap_or("(not released)");
        CONSENT_TEMPLATE
            .replace("{{identifier}}", &encode_text(&self.bundle.identifier))
            .replace("{{mail}}", &encode_text(mail))
            .replace("{{entitlements}}", &entitlements)
            .replace("{{action}}", &encode_double_quoted_attribute(self.action))
            .replace("{{challenge}}", &encode_double_quoted_attribute(self.challenge))
            .replace("{{csrf_token}}", &encode_double_quoted_attribute(self.csrf_token))
            .replace("{{return_url}}", &encode_double_quoted_attribute(self.return_url))
    }
}
