//! Live source backed by a public radiology reference site.
//!
//! Searches hit `{base_url}/search?lang=us&q=<keyword>&scope=articles|cases`
//! and collect result links under `/articles/` or `/cases/`. Each linked page
//! is fetched and reduced to plain text by [`html_to_text`]. Requests are
//! spaced by at least one second and every response body is cached on disk by
//! URL digest, so repeated runs do not touch the network.

use std::collections::HashSet;
use std::fs;
use std::path::PathBuf;
use std::sync::{LazyLock, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use regex::Regex;
use reqwest::blocking::Client;
use reqwest::Url;

use super::source::{DocumentSource, SearchHit, SourceError};
use crate::chunking::{Document, Section};
use crate::provider::short_digest;

pub const DEFAULT_BASE_URL: &str = "https://radiopaedia.org";
pub const MIN_DELAY_MS: u64 = 1000;

#[derive(Debug, Clone)]
pub struct LiveSourceSettings {
    pub base_url: String,
    pub delay_ms: u64,
    pub cache_dir: Option<PathBuf>,
    pub timeout: Duration,
}

impl Default for LiveSourceSettings {
    fn default() -> Self {
        Self {
            base_url: DEFAULT_BASE_URL.to_string(),
            delay_ms: MIN_DELAY_MS,
            cache_dir: None,
            timeout: Duration::from_secs(30),
        }
    }
}

pub struct LiveSource {
    base: Url,
    delay: Duration,
    cache_dir: Option<PathBuf>,
    client: Client,
    last_request: Mutex<Option<Instant>>,
    id: String,
}

impl LiveSource {
    /// Delays below one second are raised to one second.
    pub fn new(settings: LiveSourceSettings) -> Result<Self, SourceError> {
        let delay = Duration::from_millis(settings.delay_ms.max(MIN_DELAY_MS));
        Self::with_delay(settings, delay)
    }

    fn with_delay(settings: LiveSourceSettings, delay: Duration) -> Result<Self, SourceError> {
        let base = Url::parse(&settings.base_url)
            .map_err(|e| SourceError::Config(format!("base_url {:?}: {e}", settings.base_url)))?;
        if let Some(dir) = &settings.cache_dir {
            fs::create_dir_all(dir)
                .map_err(|e| SourceError::Config(format!("cache dir {}: {e}", dir.display())))?;
        }
        let client = Client::builder()
            .timeout(settings.timeout)
            .user_agent(concat!("radar-kb/", env!("CARGO_PKG_VERSION")))
            .build()
            .map_err(|e| SourceError::Config(format!("building HTTP client: {e}")))?;
        Ok(Self {
            id: format!("live:{}", base),
            base,
            delay,
            cache_dir: settings.cache_dir,
            client,
            last_request: Mutex::new(None),
        })
    }

    fn get(&self, url: &Url) -> Result<String, SourceError> {
        let cache_path = self
            .cache_dir
            .as_ref()
            .map(|d| d.join(format!("{}.html", short_digest(url.as_str().as_bytes()))));
        if let Some(p) = &cache_path {
            if let Ok(cached) = fs::read_to_string(p) {
                return Ok(cached);
            }
        }
        {
            let mut last = self.last_request.lock().expect("politeness lock poisoned");
            if let Some(prev) = *last {
                let since = prev.elapsed();
                if since < self.delay {
                    thread::sleep(self.delay - since);
                }
            }
            *last = Some(Instant::now());
        }
        let resp = self
            .client
            .get(url.clone())
            .send()
            .map_err(|e| SourceError::Transport(format!("{url}: {e}")))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(SourceError::Transport(format!("{url}: HTTP {status}")));
        }
        if !status.is_success() {
            return Err(SourceError::Parse(format!("{url}: HTTP {status}")));
        }
        let body = resp
            .text()
            .map_err(|e| SourceError::Transport(format!("{url}: reading body: {e}")))?;
        if let Some(p) = &cache_path {
            if let Err(e) = fs::write(p, &body) {
                log::warn!("could not cache {url}: {e}");
            }
        }
        Ok(body)
    }
}

fn scope(section: Section) -> &'static str {
    match section {
        Section::Article => "articles",
        Section::Case => "cases",
    }
}

static RESULT_LINK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"href="(/(articles|cases)/[A-Za-z0-9][^"?#]*)"#).unwrap());
static H1: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<h1[^>]*>(.*?)</h1>").unwrap());
static TITLE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<title[^>]*>(.*?)</title>").unwrap());

const RESERVED_SLUGS: &[&str] = &["new", "search", "edit"];

impl DocumentSource for LiveSource {
    fn id(&self) -> &str {
        &self.id
    }

    fn search(&self, keyword: &str, section: Section) -> Result<Vec<SearchHit>, SourceError> {
        let mut url = self
            .base
            .join("/search")
            .map_err(|e| SourceError::Config(e.to_string()))?;
        url.query_pairs_mut()
            .append_pair("lang", "us")
            .append_pair("q", keyword)
            .append_pair("scope", scope(section));
        let html = self.get(&url)?;
        let mut seen = HashSet::new();
        let mut hits = Vec::new();
        for cap in RESULT_LINK.captures_iter(&html) {
            let path = &cap[1];
            if &cap[2] != scope(section) {
                continue;
            }
            let slug = path.rsplit('/').next().unwrap_or_default();
            if RESERVED_SLUGS.contains(&slug) || !seen.insert(path.to_string()) {
                continue;
            }
            let url = self
                .base
                .join(path)
                .map_err(|e| SourceError::Parse(format!("result link {path}: {e}")))?;
            hits.push(SearchHit {
                section,
                title: slug.replace('-', " "),
                url: url.to_string(),
            });
        }
        Ok(hits)
    }

    fn fetch(&self, keyword: &str, hit: &SearchHit) -> Result<Document, SourceError> {
        let url = Url::parse(&hit.url).map_err(|e| SourceError::Parse(format!("{}: {e}", hit.url)))?;
        let html = self.get(&url)?;
        let title = H1
            .captures(&html)
            .or_else(|| TITLE.captures(&html))
            .map(|c| html_to_text(&c[1]).replace('\n', " "))
            .filter(|t| !t.is_empty())
            .unwrap_or_else(|| hit.title.clone());
        Ok(Document {
            doc_id: format!("rp:{}", url.path()),
            keyword: keyword.to_string(),
            section: hit.section,
            title,
            body: html_to_text(&html),
            source_url: hit.url.clone(),
        })
    }
}

static DROPPED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?is)<!--.*?-->|<script\b[^>]*>.*?</script>|<style\b[^>]*>.*?</style>|<noscript\b[^>]*>.*?</noscript>|<head\b[^>]*>.*?</head>").unwrap()
});
static MAIN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<main\b[^>]*>(.*)</main>").unwrap());
static BODY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?is)<body\b[^>]*>(.*)</body>").unwrap());
static BLOCK: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)</?(h[1-6]|p|div|br|li|ul|ol|tr|td|th|table|section|article|header|footer|nav|blockquote|pre|figure|figcaption|dd|dt)\b[^>]*>").unwrap()
});
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<[^>]*>").unwrap());
static ENTITY: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"&(#[0-9]+|#[xX][0-9a-fA-F]+|[a-zA-Z]+);").unwrap());

/// Reduces an HTML page to plain text:
///
/// 1. comments and `<head>`, `<script>`, `<style>`, `<noscript>` elements are dropped;
/// 2. only the contents of `<main>` are kept when present, else of `<body>`;
/// 3. block-level tags (headings, paragraphs, list items, table cells, …)
///    become line breaks, so headings end up on their own lines;
/// 4. all remaining tags are removed and character entities decoded;
/// 5. whitespace inside each line collapses to single spaces, lines are
///    trimmed and empty lines removed.
pub fn html_to_text(html: &str) -> String {
    let cleaned = DROPPED.replace_all(html, " ");
    let scoped = MAIN
        .captures(&cleaned)
        .or_else(|| BODY.captures(&cleaned))
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| cleaned.to_string());
    let broken = BLOCK.replace_all(&scoped, "\n");
    let stripped = TAG.replace_all(&broken, "");
    let decoded = ENTITY.replace_all(&stripped, |c: &regex::Captures| decode_entity(&c[1]).unwrap_or_else(|| c[0].to_string()));
    decoded
        .lines()
        .map(|l| l.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn decode_entity(name: &str) -> Option<String> {
    if let Some(num) = name.strip_prefix('#') {
        let code = match num.strip_prefix(['x', 'X']) {
            Some(hex) => u32::from_str_radix(hex, 16).ok()?,
            None => num.parse().ok()?,
        };
        return char::from_u32(code).map(String::from);
    }
    let c = match name {
        "amp" => '&',
        "lt" => '<',
        "gt" => '>',
        "quot" => '"',
        "apos" => '\'',
        "nbsp" => ' ',
        "ndash" => '–',
        "mdash" => '—',
        "hellip" => '…',
        "deg" => '°',
        "times" => '×',
        _ => return None,
    };
    Some(c.to_string())
}
