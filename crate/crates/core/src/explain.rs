//! Explanation distillation: prompt a teacher model for why each target is
//! bought with its input, cache the replies, and build explanation-augmented
//! training lines.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::concept::ConceptId;
use crate::dataset::{read_jsonl, Dataset};
use crate::error::{Error, Result};
use crate::serialize::{sanitize_explanation, Grammar, SerializedExample};

pub const MOCK_TEACHER_ID: &str = "mock";

pub fn teacher_prompt(x: &str, y: &str) -> String {
    format!("Explain why one product is purchased with the other product.\n\n Q: Why are {y} purchased with {x}?\n A:")
}

/// Recovers `(x, y)` from a prompt built by [`teacher_prompt`].
pub fn parse_teacher_prompt(prompt: &str) -> Option<(String, String)> {
    let q = prompt.split("Q: Why are ").nth(1)?;
    let q = q.split("?\n A:").next()?;
    let (y, x) = q.split_once(" purchased with ")?;
    Some((x.to_string(), y.to_string()))
}

pub fn mock_teacher(x: &str, y: &str) -> String {
    format!("{y} are used together with {x} because {y} support the primary function of {x}.")
}

// ---------------------------------------------------------------------------
// transport

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: usize,
    pub temperature: f64,
}

#[derive(Clone, Debug, Deserialize)]
struct CompletionReply {
    text: String,
}

/// Sends one completion request and returns the raw reply text.
pub trait Transport: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherEndpoint {
    pub base_url: String,
    pub completion_path: String,
    /// Environment variable holding a bearer token, if any.
    pub auth_env: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub max_tokens: usize,
    pub temperature: f64,
    pub retry_backoff_ms: u64,
}

impl Default for TeacherEndpoint {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8080".into(),
            completion_path: "/v1/completions".into(),
            auth_env: None,
            timeout_secs: 60,
            max_retries: 3,
            max_in_flight: 4,
            max_tokens: 64,
            temperature: 0.0,
            retry_backoff_ms: 250,
        }
    }
}

impl TeacherEndpoint {
    pub fn validate(&self) -> Result<()> {
        if self.timeout_secs == 0 {
            return Err(Error::invalid("teacher timeout must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(Error::invalid("max_in_flight must be positive"));
        }
        if self.base_url.is_empty() {
            return Err(Error::invalid("teacher base_url is empty"));
        }
        Ok(())
    }

    pub fn url(&self) -> String {
        format!(
            "{}/{}",
            self.base_url.trim_end_matches('/'),
            self.completion_path.trim_start_matches('/')
        )
    }
}

/// JSON over HTTP POST.
pub struct HttpTransport {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(endpoint: &TeacherEndpoint) -> Result<Self> {
        endpoint.validate()?;
        let token = match &endpoint.auth_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::invalid(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(endpoint.timeout_secs)))
            .build()
            .into();
        Ok(Self {
            url: endpoint.url(),
            token,
            agent,
        })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        let mut req = self.agent.post(&self.url);
        if let Some(t) = &self.token {
            req = req.header("Authorization", &format!("Bearer {t}"));
        }
        let mut resp = req.send_json(request).map_err(|e| e.to_string())?;
        let reply: CompletionReply = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("malformed reply: {e}"))?;
        Ok(reply.text)
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        (**self).complete(request)
    }
}

/// Answers prompts with [`mock_teacher`] without any network access.
pub struct MockTransport;

impl Transport for MockTransport {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        let (x, y) = parse_teacher_prompt(&request.prompt).ok_or("unrecognized prompt")?;
        Ok(mock_teacher(&x, &y))
    }
}

/// Counts calls through an inner transport.
pub struct CountingTransport<T> {
    pub inner: T,
    pub calls: AtomicUsize,
}

impl<T> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn complete(&self, request: &CompletionRequest) -> std::result::Result<String, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

/// A named teacher: its id keys the cache so different teachers produce
/// separate corpora.
pub struct Teacher<'a> {
    pub id: String,
    pub transport: &'a dyn Transport,
    pub max_tokens: usize,
    pub temperature: f64,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub retry_backoff: Duration,
}

impl<'a> Teacher<'a> {
    pub fn new(id: impl Into<String>, transport: &'a dyn Transport) -> Self {
        let d = TeacherEndpoint::default();
        Self {
            id: id.into(),
            transport,
            max_tokens: d.max_tokens,
            temperature: d.temperature,
            max_retries: 0,
            max_in_flight: d.max_in_flight,
            retry_backoff: Duration::ZERO,
        }
    }

    pub fn from_endpoint(id: impl Into<String>, transport: &'a dyn Transport, endpoint: &TeacherEndpoint) -> Self {
        Self {
            id: id.into(),
            transport,
            max_tokens: endpoint.max_tokens,
            temperature: endpoint.temperature,
            max_retries: endpoint.max_retries,
            max_in_flight: endpoint.max_in_flight,
            retry_backoff: Duration::from_millis(endpoint.retry_backoff_ms),
        }
    }

    /// Sanitized explanation straight from the teacher, retrying failures.
    fn fetch(&self, x: &str, y: &str) -> Result<String> {
        let request = CompletionRequest {
            prompt: teacher_prompt(x, y),
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        };
        let err = |message: String| Error::Teacher {
            x: x.to_string(),
            y: y.to_string(),
            message,
        };
        let mut attempt = 0;
        let raw = loop {
            match self.transport.complete(&request) {
                Ok(text) => break text,
                Err(e) if e.starts_with("malformed reply") => return Err(err(e)),
                Err(e) if attempt >= self.max_retries => {
                    return Err(err(format!("{e} (after {} attempts)", attempt + 1)));
                }
                Err(_) => {
                    std::thread::sleep(self.retry_backoff * (1 << attempt.min(6)));
                    attempt += 1;
                }
            }
        };
        let text = sanitize_explanation(&raw);
        if text.is_empty() {
            return Err(err(format!("empty explanation after sanitizing {raw:?}")));
        }
        Ok(text)
    }
}

// ---------------------------------------------------------------------------
// cache

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub x: String,
    pub y: String,
    pub teacher_id: String,
    pub explanation: String,
}

type CacheKey = (String, String, String);

/// Explanations keyed by `(x, y, teacher)`, optionally backed by an
/// append-only file. The first entry for a key wins.
#[derive(Debug, Default)]
pub struct ExplanationCache {
    entries: BTreeMap<CacheKey, String>,
    path: Option<PathBuf>,
    writer: Mutex<()>,
}

impl ExplanationCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the cache file at `path`.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cache = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        if path.exists() {
            for e in read_jsonl::<CacheEntry>(path)? {
                cache.entries.entry((e.x, e.y, e.teacher_id)).or_insert(e.explanation);
            }
        }
        Ok(cache)
    }

    pub fn get(&self, x: &str, y: &str, teacher_id: &str) -> Option<&str> {
        self.entries
            .get(&(x.to_string(), y.to_string(), teacher_id.to_string()))
            .map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stores a new entry; existing entries are left untouched.
    pub fn insert(&mut self, entry: CacheEntry) -> Result<()> {
        let key = (entry.x.clone(), entry.y.clone(), entry.teacher_id.clone());
        if self.entries.contains_key(&key) {
            return Ok(());
        }
        self.append(&entry)?;
        self.entries.insert(key, entry.explanation);
        Ok(())
    }

    fn append(&self, entry: &CacheEntry) -> Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let _guard = self.writer.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(entry)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }
}

/// Cache-first explanation for one pair.
pub fn query_teacher(teacher: &Teacher<'_>, x: &str, y: &str, cache: &mut ExplanationCache) -> Result<String> {
    if let Some(e) = cache.get(x, y, &teacher.id) {
        return Ok(e.to_string());
    }
    let explanation = teacher.fetch(x, y)?;
    cache.insert(CacheEntry {
        x: x.into(),
        y: y.into(),
        teacher_id: teacher.id.clone(),
        explanation: explanation.clone(),
    })?;
    Ok(explanation)
}

/// Fetches every uncached pair with at most `max_in_flight` requests in
/// flight. Successful replies are cached even when another pair fails, so an
/// interrupted build resumes where it stopped.
pub fn fill_cache(teacher: &Teacher<'_>, pairs: &[(String, String)], cache: &mut ExplanationCache) -> Result<()> {
    let missing: Vec<&(String, String)> = pairs
        .iter()
        .filter(|(x, y)| cache.get(x, y, &teacher.id).is_none())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<String>)>> = Mutex::new(Vec::with_capacity(missing.len()));
    let workers = teacher.max_in_flight.max(1).min(missing.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((x, y)) = missing.get(i) else { break };
                let r = teacher.fetch(x, y);
                results.lock().unwrap_or_else(|p| p.into_inner()).push((i, r));
            });
        }
    });
    let mut results = results.into_inner().unwrap_or_else(|p| p.into_inner());
    results.sort_by_key(|(i, _)| *i);
    let mut first_err = None;
    for (i, r) in results {
        match r {
            Ok(explanation) => {
                let (x, y) = missing[i];
                cache.insert(CacheEntry {
                    x: x.clone(),
                    y: y.clone(),
                    teacher_id: teacher.id.clone(),
                    explanation,
                })?;
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

/// Explanation-augmented lines for `split`, plus the explanation of every
/// `(x, y)` target pair.
pub struct ExplainedCorpus {
    pub lines: Vec<SerializedExample>,
    pub explanations: BTreeMap<(ConceptId, ConceptId), String>,
}

pub fn build_explained_corpus(
    ds: &Dataset,
    split: &[ConceptId],
    grammar: &Grammar,
    teacher: &Teacher<'_>,
    cache: &mut ExplanationCache,
) -> Result<ExplainedCorpus> {
    let pairs: Vec<(ConceptId, ConceptId)> = split
        .iter()
        .flat_map(|&x| ds.targets(x).into_iter().map(move |y| (x, y)))
        .collect();
    let surfaces: Vec<(String, String)> = pairs
        .iter()
        .map(|&(x, y)| (ds.surface(x).to_string(), ds.surface(y).to_string()))
        .collect();
    fill_cache(teacher, &surfaces, cache)?;
    let mut explanations = BTreeMap::new();
    for (&(x, y), (xs, ys)) in pairs.iter().zip(&surfaces) {
        let e = query_teacher(teacher, xs, ys, cache)?;
        explanations.insert((x, y), e);
    }
    let lines = crate::listlm::Corpora::explained(ds, grammar, split, &explanations)?;
    Ok(ExplainedCorpus { lines, explanations })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(&'static str);

    impl Transport for Fixed {
        fn complete(&self, _: &CompletionRequest) -> std::result::Result<String, String> {
            Ok(self.0.to_string())
        }
    }

    struct Flaky {
        fail_first: usize,
        calls: AtomicUsize,
    }

    impl Transport for Flaky {
        fn complete(&self, r: &CompletionRequest) -> std::result::Result<String, String> {
            if self.calls.fetch_add(1, Ordering::SeqCst) < self.fail_first {
                Err("connection refused".into())
            } else {
                MockTransport.complete(r)
            }
        }
    }

    #[test]
    fn prompt_is_exact() {
        let p = teacher_prompt("Digital Cameras", "Memory Cards");
        assert_eq!(
            p,
            "Explain why one product is purchased with the other product.\n\n Q: Why are Memory Cards purchased with Digital Cameras?\n A:"
        );
        assert_eq!(
            parse_teacher_prompt(&p),
            Some(("Digital Cameras".into(), "Memory Cards".into()))
        );
    }

    #[test]
    fn mock_is_deterministic_and_marker_free() {
        let a = mock_teacher("A", "B");
        assert_eq!(a, mock_teacher("A", "B"));
        assert_eq!(sanitize_explanation(&a), a);
        assert!(!a.contains(": "));
    }

    #[test]
    fn cache_hit_skips_transport() {
        let t = CountingTransport::new(MockTransport);
        let teacher = Teacher::new("m", &t);
        let mut cache = ExplanationCache::in_memory();
        let a = query_teacher(&teacher, "X", "Y", &mut cache).unwrap();
        let b = query_teacher(&teacher, "X", "Y", &mut cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.count(), 1);
    }

    #[test]
    fn replies_are_sanitized() {
        let t = Fixed("  because 1) they fit 2) together [EOS]\n\nQ: next question");
        let teacher = Teacher::new("f", &t);
        let mut cache = ExplanationCache::in_memory();
        assert_eq!(
            query_teacher(&teacher, "X", "Y", &mut cache).unwrap(),
            "because they fit together"
        );
        let empty = Fixed(" 3) \n");
        let teacher = Teacher::new("e", &empty);
        assert!(matches!(
            query_teacher(&teacher, "X", "Y", &mut cache),
            Err(Error::Teacher { .. })
        ));
    }

    #[test]
    fn retries_then_reports_the_pair() {
        let flaky = Flaky {
            fail_first: 2,
            calls: AtomicUsize::new(0),
        };
        let mut teacher = Teacher::new("f", &flaky);
        teacher.max_retries = 2;
        let mut cache = ExplanationCache::in_memory();
        assert!(query_teacher(&teacher, "X", "Y", &mut cache).is_ok());

        let down = Flaky {
            fail_first: usize::MAX,
            calls: AtomicUsize::new(0),
        };
        let mut teacher = Teacher::new("d", &down);
        teacher.max_retries = 1;
        match query_teacher(&teacher, "X", "Y", &mut cache) {
            Err(Error::Teacher { x, y, .. }) => assert_eq!((x.as_str(), y.as_str()), ("X", "Y")),
            other => panic!("{other:?}"),
        }
        assert_eq!(down.calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn file_cache_persists_and_first_entry_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let mut c = ExplanationCache::open(&path).unwrap();
        let e = |text: &str| CacheEntry {
            x: "X".into(),
            y: "Y".into(),
            teacher_id: "t".into(),
            explanation: text.into(),
        };
        c.insert(e("first")).unwrap();
        c.insert(e("second")).unwrap();
        let c = ExplanationCache::open(&path).unwrap();
        assert_eq!(c.get("X", "Y", "t"), Some("first"));
        assert_eq!(c.get("X", "Y", "other"), None);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn concurrent_fill_queries_each_pair_once() {
        let t = CountingTransport::new(MockTransport);
        let teacher = Teacher::new("m", &t);
        let pairs: Vec<(String, String)> = (0..37).map(|i| (format!("x{i}"), format!("y{i}"))).collect();
        let mut cache = ExplanationCache::in_memory();
        fill_cache(&teacher, &pairs, &mut cache).unwrap();
        assert_eq!(t.count(), 37);
        fill_cache(&teacher, &pairs, &mut cache).unwrap();
        assert_eq!(t.count(), 37);
        assert_eq!(cache.get("x5", "y5", "m"), Some(mock_teacher("x5", "y5").as_str()));
    }
}
