use serde::{Deserialize, Serialize};

use super::{GenerationError, GenerationRequest, Generator, DEFAULT_TEMPERATURE};
use crate::http::{EndpointConfig, HttpError, JsonClient};

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

/// Chat-completion model behind an HTTP endpoint.
#[derive(Debug, Clone)]
pub struct RemoteChat {
    name: String,
    client: JsonClient,
    temperature: f64,
}

impl RemoteChat {
    pub fn new(name: impl Into<String>, endpoint: EndpointConfig) -> Result<Self, HttpError> {
        Ok(RemoteChat {
            name: name.into(),
            client: JsonClient::new(endpoint)?,
            temperature: DEFAULT_TEMPERATURE,
        })
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

impl Generator for RemoteChat {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &GenerationRequest<'_>) -> Result<String, GenerationError> {
        let prompt = request.prompt().render()?;
        let body = ChatRequest {
            model: self.client.model(),
            temperature: self.temperature,
            messages: [ChatMessage {
                role: "user",
                content: &prompt,
            }],
        };
        let reply: ChatResponse = self.client.post(&body)?;
        let text = reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(GenerationError::EmptyOutput);
        }
        Ok(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Query;
    use crate::generation::Task;
    use mockito::Matcher;

    #[test]
    fn sends_chat_schema_with_temperature() {
        let mut server = mockito::Server::new();
        let m = server
            .mock("POST", "/")
            .match_body(Matcher::PartialJson(serde_json::json!({
                "model": "m1",
                "temperature": 0.7,
                "messages": [{"role": "user"}]
            })))
            .with_body(r#"{"choices":[{"message":{"role":"assistant","content":"Hamlet was written by Shakespeare."}}]}"#)
            .create();
        let mut cfg = EndpointConfig::new(server.url());
        cfg.model = Some("m1".into());
        let gen = RemoteChat::new("m1", cfg).unwrap();
        let q = Query::new("q", "who wrote hamlet", vec!["Shakespeare".into()]);
        let out = gen.generate(&GenerationRequest::new(&q, 1, Task::ZeroShot)).unwrap();
        assert_eq!(out, "Hamlet was written by Shakespeare.");
        m.assert();
    }

    #[test]
    fn empty_reply_is_an_error() {
        let mut server = mockito::Server::new();
        let _m = server
            .mock("POST", "/")
            .with_body(r#"{"choices":[{"message":{"content":"  "}}]}"#)
            .create();
        let gen = RemoteChat::new("m", EndpointConfig::new(server.url())).unwrap();
        let q = Query::new("q", "x", vec!["y".into()]);
        assert!(matches!(
            gen.generate(&GenerationRequest::new(&q, 1, Task::ZeroShot)),
            Err(GenerationError::EmptyOutput)
        ));
    }
}
