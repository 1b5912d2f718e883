use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasynth::record::NumericRecord;
use crate::error::{Error, Result};
use crate::numerics::RngStream;
use crate::perception::ExtractedStats;

use super::surrogate::{surrogate_llm_text, surrogate_vlm_text};

/// Environment variable holding the remote endpoint URL.
pub const ENDPOINT_ENV: &str = "ASEMM_TEXT_ENDPOINT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextRole {
    Vlm,
    Llm,
}

impl TextRole {
    pub fn as_str(self) -> &'static str {
        match self {
            TextRole::Vlm => "vlm",
            TextRole::Llm => "llm",
        }
    }
}

/// One generation request. The describer sees perceived image statistics,
/// the reasoner sees the numeric record.
#[derive(Clone, Debug)]
pub struct TextRequest<'a> {
    pub role: TextRole,
    pub prompt: &'a str,
    pub sample_id: u32,
    pub stats: &'a ExtractedStats,
    pub record: &'a NumericRecord,
    pub ring_edges: &'a [f64],
}

pub trait TextSource: Send + Sync {
    /// `surrogate` or the endpoint URL.
    fn identity(&self) -> String;
    fn generate(&self, req: &TextRequest<'_>) -> Result<String>;
}

pub struct SurrogateSource {
    pub seed: u64,
}

impl TextSource for SurrogateSource {
    fn identity(&self) -> String {
        "surrogate".into()
    }

    fn generate(&self, req: &TextRequest<'_>) -> Result<String> {
        let mut rng = RngStream::labeled(self.seed, req.role.as_str(), req.sample_id as u64);
        Ok(match req.role {
            TextRole::Vlm => surrogate_vlm_text(req.stats, &mut rng),
            TextRole::Llm => surrogate_llm_text(req.record, req.ring_edges, &mut rng),
        })
    }
}

#[derive(Clone, Debug)]
pub struct RemoteSource {
    pub endpoint: String,
    pub timeout: Duration,
    pub attempts: u32,
    pub backoff: Duration,
}

impl RemoteSource {
    pub fn new(endpoint: &str) -> Self {
        RemoteSource {
            endpoint: endpoint.to_string(),
            timeout: Duration::from_secs(30),
            attempts: 3,
            backoff: Duration::from_millis(200),
        }
    }

    pub fn from_env() -> Result<Self> {
        std::env::var(ENDPOINT_ENV)
            .map(|e| Self::new(&e))
            .map_err(|_| Error::Config(format!("{ENDPOINT_ENV} is not set")))
    }
}

/// Request body sent to a remote text backend.
pub fn request_payload(req: &TextRequest<'_>) -> serde_json::Value {
    let stats = match req.role {
        TextRole::Vlm => json!({
            "mean": req.stats.mean,
            "std": req.stats.std,
            "ring_counts": req.stats.ring_counts,
            "lit_pixels": req.stats.lit_pixels,
        }),
        TextRole::Llm => json!({
            "mean": req.record.mean,
            "std": req.record.std,
            "ring_counts": req.record.ring_counts,
            "out_of_range": req.record.out_of_range,
            "total_points": req.record.total_points,
        }),
    };
    json!({ "role": req.role.as_str(), "prompt": req.prompt, "sample_id": req.sample_id, "stats": stats })
}

#[derive(Deserialize)]
struct RemoteReply {
    text: String,
}

/// One POST with retries and exponential backoff.
pub fn remote_generate(source: &RemoteSource, payload: &serde_json::Value) -> Result<String> {
    let agent = ureq::AgentBuilder::new().timeout(source.timeout).build();
    let mut last = String::new();
    for attempt in 0..source.attempts.max(1) {
        if attempt > 0 {
            std::thread::sleep(source.backoff * 2u32.pow(attempt - 1));
        }
        match agent.post(&source.endpoint).send_json(payload.clone()) {
            Ok(resp) => {
                return resp
                    .into_json::<RemoteReply>()
                    .map(|r| r.text)
                    .map_err(|e| Error::Remote(format!("{}: malformed reply: {e}", source.endpoint)));
            }
            Err(ureq::Error::Status(code, _)) if code < 500 && code != 429 => {
                return Err(Error::Remote(format!("{}: status {code}", source.endpoint)));
            }
            Err(e) => last = e.to_string(),
        }
        log::debug!("remote attempt {} failed: {last}", attempt + 1);
    }
    Err(Error::Remote(format!("{}: {last}", source.endpoint)))
}

impl TextSource for RemoteSource {
    fn identity(&self) -> String {
        self.endpoint.clone()
    }

    fn generate(&self, req: &TextRequest<'_>) -> Result<String> {
        remote_generate(self, &request_payload(req))
    }
}

/// Uses `fallback` whenever `primary` fails, if one is configured.
pub struct FallbackSource {
    pub primary: Box<dyn TextSource>,
    pub fallback: Option<Box<dyn TextSource>>,
}

impl TextSource for FallbackSource {
    fn identity(&self) -> String {
        self.primary.identity()
    }

    fn generate(&self, req: &TextRequest<'_>) -> Result<String> {
        match (self.primary.generate(req), &self.fallback) {
            (Ok(t), _) => Ok(t),
            (Err(e), Some(fb)) => {
                log::warn!("text source {} failed for sample {}: {e}; using {}", self.primary.identity(), req.sample_id, fb.identity());
                fb.generate(req)
            }
            (Err(e), None) => Err(e),
        }
    }
}

/// Runs requests with at most `max_in_flight` concurrent calls; results keep
/// request order. Stops handing out work after the first error.
pub fn generate_all(source: &dyn TextSource, requests: &[TextRequest<'_>], max_in_flight: usize) -> Result<Vec<String>> {
    let next = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<String>>>> = Mutex::new((0..requests.len()).map(|_| None).collect());
    let workers = max_in_flight.max(1).min(requests.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if failed.load(Ordering::Relaxed) > 0 {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let r = source.generate(&requests[i]);
                if r.is_err() {
                    failed.fetch_add(1, Ordering::Relaxed);
                }
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    let mut results = results.into_inner().expect("result lock");
    if let Some(pos) = results.iter().position(|r| matches!(r, Some(Err(_)))) {
        return Err(results.swap_remove(pos).expect("present").unwrap_err());
    }
    results
        .into_iter()
        .map(|r| r.ok_or_else(|| Error::Remote("request was not issued".into()))?)
        .collect()
}
