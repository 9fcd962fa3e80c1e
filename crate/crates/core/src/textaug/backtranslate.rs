use serde::{Deserialize, Serialize};

use super::TextAugError;
use crate::backend::{BackendError, HttpJson};
use crate::util::KeyHasher;

/// Pivot languages for back-translation. The source language is always English.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    En,
    Es,
    Fr,
    De,
    It,
}

impl Language {
    pub const PIVOTS: [Language; 4] = [Language::Es, Language::Fr, Language::De, Language::It];

    pub fn code(self) -> &'static str {
        match self {
            Language::En => "en",
            Language::Es => "es",
            Language::Fr => "fr",
            Language::De => "de",
            Language::It => "it",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "en" => Ok(Language::En),
            "es" => Ok(Language::Es),
            "fr" => Ok(Language::Fr),
            "de" => Ok(Language::De),
            "it" => Ok(Language::It),
            other => Err(format!("unsupported language {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationRequest {
    pub text: String,
    pub source: Language,
    pub target: Language,
}

impl TranslationRequest {
    pub fn id(&self) -> String {
        let h = KeyHasher::new(0)
            .str(&self.text)
            .str(self.source.code())
            .str(self.target.code())
            .finish();
        format!("tr-{h:016x}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResponse {
    pub text: String,
}

/// Implementations must tolerate concurrent calls.
pub trait TranslationBackend: Send + Sync {
    fn translate(&self, request: &TranslationRequest) -> Result<TranslationResponse, BackendError>;
}

/// Returns its input verbatim.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityTranslator;

impl TranslationBackend for IdentityTranslator {
    fn translate(&self, request: &TranslationRequest) -> Result<TranslationResponse, BackendError> {
        Ok(TranslationResponse {
            text: request.text.clone(),
        })
    }
}

/// Uppercases its input; idempotent.
#[derive(Debug, Default, Clone, Copy)]
pub struct UppercaseTranslator;

impl TranslationBackend for UppercaseTranslator {
    fn translate(&self, request: &TranslationRequest) -> Result<TranslationResponse, BackendError> {
        Ok(TranslationResponse {
            text: request.text.to_uppercase(),
        })
    }
}

/// POSTs `{text, source, target}` to an HTTP endpoint and expects `{text}` back.
#[derive(Debug, Clone)]
pub struct HttpTranslator {
    http: HttpJson,
}

impl HttpTranslator {
    pub const ENDPOINT_VAR: &'static str = "TRANSLATE_ENDPOINT";

    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            http: HttpJson::new(endpoint, None),
        }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(Self::ENDPOINT_VAR).ok().map(Self::new)
    }
}

impl TranslationBackend for HttpTranslator {
    fn translate(&self, request: &TranslationRequest) -> Result<TranslationResponse, BackendError> {
        self.http.post(&request.id(), request)
    }
}

/// English to `language` and back again; the result is trimmed.
pub fn back_translate(
    sentence: &str,
    language: Language,
    client: &dyn TranslationBackend,
) -> Result<String, TextAugError> {
    if sentence.trim().is_empty() {
        return Err(TextAugError::EmptyInput);
    }
    let forward = client.translate(&TranslationRequest {
        text: sentence.to_string(),
        source: Language::En,
        target: language,
    })?;
    let back = client.translate(&TranslationRequest {
        text: forward.text,
        source: language,
        target: Language::En,
    })?;
    let text = back.text.trim();
    if text.is_empty() {
        return Err(TextAugError::EmptyTranslation(language.code().to_string()));
    }
    Ok(text.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Unreachable;

    impl TranslationBackend for Unreachable {
        fn translate(&self, request: &TranslationRequest) -> Result<TranslationResponse, BackendError> {
            Err(BackendError::new(request.id(), "connection refused"))
        }
    }

    struct Blank;

    impl TranslationBackend for Blank {
        fn translate(&self, _: &TranslationRequest) -> Result<TranslationResponse, BackendError> {
            Ok(TranslationResponse { text: "  ".into() })
        }
    }

    #[test]
    fn identity_round_trip() {
        assert_eq!(back_translate("a cat", Language::Fr, &IdentityTranslator).unwrap(), "a cat");
    }

    #[test]
    fn uppercase_round_trip() {
        assert_eq!(back_translate("cat", Language::De, &UppercaseTranslator).unwrap(), "CAT");
    }

    #[test]
    fn unreachable_carries_request_id() {
        let err = back_translate("cat", Language::Es, &Unreachable).unwrap_err();
        let expected = TranslationRequest {
            text: "cat".into(),
            source: Language::En,
            target: Language::Es,
        }
        .id();
        match err {
            TextAugError::Backend(e) => assert_eq!(e.request_id, expected),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_round_trip() {
        assert_eq!(
            back_translate("cat", Language::It, &Blank),
            Err(TextAugError::EmptyTranslation("it".into()))
        );
    }

    #[test]
    fn http_translator_unreachable_endpoint() {
        let client = HttpTranslator::new("http://127.0.0.1:9/translate");
        assert!(matches!(
            back_translate("cat", Language::Es, &client),
            Err(TextAugError::Backend(_))
        ));
    }
}
