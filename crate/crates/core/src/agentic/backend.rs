//! Where agent decisions come from: the built-in scripted rules, an external
//! completion service over HTTP, or a fixed list of canned replies.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use crate::config::SimConfig;
use crate::error::BackendError;

static HTTP_CALLS: AtomicU64 = AtomicU64::new(0);

/// Completion requests sent to external services by this process.
pub fn http_calls() -> u64 {
    HTTP_CALLS.load(Ordering::Relaxed)
}

/// Text in, text out.
pub trait CompletionBackend: Send {
    fn name(&self) -> &str;
    fn complete(&mut self, prompt: &str) -> Result<String, BackendError>;
}

pub const ENV_URL: &str = "EDGELLM_PLANNER_URL";
pub const ENV_TOKEN: &str = "EDGELLM_PLANNER_TOKEN";
pub const ENV_TIMEOUT: &str = "EDGELLM_PLANNER_TIMEOUT_S";

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalSettings {
    pub url: String,
    pub token: Option<String>,
    /// Overrides the scenario's agent timeout when set.
    pub timeout: Option<Duration>,
}

impl ExternalSettings {
    /// Reads `EDGELLM_PLANNER_URL`, `_TOKEN` and `_TIMEOUT_S`.
    pub fn from_env() -> Result<Self, BackendError> {
        let url = std::env::var(ENV_URL)
            .ok()
            .filter(|u| !u.trim().is_empty())
            .ok_or_else(|| BackendError::NotConfigured(format!("{ENV_URL} is not set")))?;
        let token = std::env::var(ENV_TOKEN).ok().filter(|t| !t.is_empty());
        let timeout = match std::env::var(ENV_TIMEOUT) {
            Ok(v) => {
                let secs: f64 = v.trim().parse().map_err(|_| {
                    BackendError::NotConfigured(format!("{ENV_TIMEOUT}={v:?} is not a number"))
                })?;
                if !(secs > 0.0 && secs.is_finite()) {
                    return Err(BackendError::NotConfigured(format!(
                        "{ENV_TIMEOUT} must be positive"
                    )));
                }
                Some(Duration::from_secs_f64(secs))
            }
            Err(_) => None,
        };
        Ok(Self { url, token, timeout })
    }
}

/// POSTs `{"role": .., "prompt": ..}` as JSON and takes the response body as
/// the completion. A JSON body with a string `completion` field is unwrapped.
pub struct ExternalBackend {
    role: &'static str,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl ExternalBackend {
    pub fn new(role: &'static str, settings: &ExternalSettings, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            role,
            url: settings.url.clone(),
            token: settings.token.clone(),
            agent,
        }
    }
}

impl CompletionBackend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn complete(&mut self, prompt: &str) -> Result<String, BackendError> {
        HTTP_CALLS.fetch_add(1, Ordering::Relaxed);
        let body = serde_json::json!({ "role": self.role, "prompt": prompt });
        let mut req = self
            .agent
            .post(&self.url)
            .header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(unwrap_completion(&text))
    }
}

fn unwrap_completion(text: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(text) {
        Ok(serde_json::Value::Object(map)) => match map.get("completion") {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => text.to_string(),
        },
        _ => text.to_string(),
    }
}

/// Replays fixed replies in order, repeating the last one; for tests and
/// offline what-if runs.
pub struct CannedBackend {
    replies: VecDeque<String>,
    last: Option<String>,
}

impl CannedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        Self {
            replies: replies.into(),
            last: None,
        }
    }
}

impl CompletionBackend for CannedBackend {
    fn name(&self) -> &str {
        "canned"
    }

    fn complete(&mut self, _prompt: &str) -> Result<String, BackendError> {
        if let Some(next) = self.replies.pop_front() {
            self.last = Some(next);
        }
        self.last
            .clone()
            .ok_or_else(|| BackendError::NotConfigured("no canned replies".into()))
    }
}

/// Which backend the agentic strategies use.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum BackendChoice {
    /// Deterministic built-in rules; never touches the network.
    #[default]
    Scripted,
    External(ExternalSettings),
    Canned {
        planner: Vec<String>,
        deployer: Vec<String>,
    },
}

impl BackendChoice {
    pub fn name(&self) -> &'static str {
        match self {
            BackendChoice::Scripted => "scripted",
            BackendChoice::External(_) => "external",
            BackendChoice::Canned { .. } => "canned",
        }
    }

    fn make(
        &self,
        role: &'static str,
        config: &SimConfig,
        canned: impl FnOnce() -> Option<Vec<String>>,
    ) -> Option<Box<dyn CompletionBackend>> {
        match self {
            BackendChoice::Scripted => None,
            BackendChoice::External(s) => {
                let timeout = s.timeout.unwrap_or_else(|| {
                    Duration::from_secs_f64(config.agents.external_timeout_seconds.max(0.001))
                });
                Some(Box::new(ExternalBackend::new(role, s, timeout)))
            }
            BackendChoice::Canned { .. } => {
                canned().map(|r| Box::new(CannedBackend::new(r)) as Box<dyn CompletionBackend>)
            }
        }
    }

    /// Completion source for the epoch planner; `None` means scripted.
    pub fn planner(&self, config: &SimConfig) -> Option<Box<dyn CompletionBackend>> {
        self.make("planner", config, || match self {
            BackendChoice::Canned { planner, .. } if !planner.is_empty() => Some(planner.clone()),
            _ => None,
        })
    }

    /// Completion source for the node deployers; `None` means scripted.
    pub fn deployer(&self, config: &SimConfig) -> Option<Box<dyn CompletionBackend>> {
        self.make("deployer", config, || match self {
            BackendChoice::Canned { deployer, .. } if !deployer.is_empty() => {
                Some(deployer.clone())
            }
            _ => None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canned_repeats_last_reply() {
        let mut b = CannedBackend::new(vec!["a".into(), "b".into()]);
        assert_eq!(b.complete("").unwrap(), "a");
        assert_eq!(b.complete("").unwrap(), "b");
        assert_eq!(b.complete("").unwrap(), "b");
        assert!(CannedBackend::new(vec![]).complete("").is_err());
    }

    #[test]
    fn completion_field_is_unwrapped() {
        assert_eq!(unwrap_completion(r#"{"completion":"{}"}"#), "{}");
        assert_eq!(unwrap_completion("plain"), "plain");
        let policy = r#"{"routing_probabilities":{}}"#;
        assert_eq!(unwrap_completion(policy), policy);
    }

    #[test]
    fn scripted_builds_no_backend() {
        let c = SimConfig::paper_default();
        assert!(BackendChoice::Scripted.planner(&c).is_none());
        assert!(BackendChoice::Scripted.deployer(&c).is_none());
        let canned = BackendChoice::Canned {
            planner: vec!["x".into()],
            deployer: vec![],
        };
        assert!(canned.planner(&c).is_some());
        assert!(canned.deployer(&c).is_none());
    }

    #[test]
    fn unreachable_service_is_a_transport_error() {
        let c = SimConfig::paper_default();
        let choice = BackendChoice::External(ExternalSettings {
            url: "http://127.0.0.1:9/complete".into(),
            token: None,
            timeout: Some(Duration::from_millis(500)),
        });
        let mut b = choice.planner(&c).unwrap();
        let before = http_calls();
        assert!(matches!(b.complete("hi"), Err(BackendError::Transport(_))));
        assert!(http_calls() > before);
    }
}
