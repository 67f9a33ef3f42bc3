//! Registry HTTP JSON endpoints.
//!
//! The document parsers are plain functions over `serde_json::Value` so they
//! can be exercised against captured responses; the HTTP client itself is
//! behind the `live` feature.

use super::{DeclaredDep, DepKind, IngestError, PackageCoordinate, PackageMetadata};
use chrono::{DateTime, Utc};
use serde_json::Value;

/// Metadata plus the URL of the distributable archive, when the registry
/// reports one.
#[derive(Debug, Clone, PartialEq)]
pub struct FetchedPackage {
    pub metadata: PackageMetadata,
    pub archive_url: Option<String>,
}

pub fn npm_document_url(base: &str, name: &str) -> String {
    // Scoped names keep the `@` but encode the slash.
    format!("{}/{}", base.trim_end_matches('/'), name.replace('/', "%2f"))
}

pub fn npm_downloads_url(base: &str, name: &str) -> String {
    format!("{}/downloads/point/last-month/{}", base.trim_end_matches('/'), name)
}

pub fn pypi_release_url(base: &str, name: &str, version: &str) -> String {
    format!("{}/pypi/{}/{}/json", base.trim_end_matches('/'), name, version)
}

pub fn rubygems_version_url(base: &str, name: &str, version: &str) -> String {
    format!("{}/api/v2/rubygems/{}/versions/{}.json", base.trim_end_matches('/'), name, version)
}

fn parse_time(value: Option<&Value>, location: &str) -> Result<DateTime<Utc>, IngestError> {
    let raw = value.and_then(Value::as_str).ok_or_else(|| IngestError::schema(location, "missing release time"))?;
    DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| {
            // PyPI omits the offset on `upload_time`.
            chrono::NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S%.f").map(|t| t.and_utc())
        })
        .map_err(|e| IngestError::schema(location, format!("bad timestamp `{raw}`: {e}")))
}

fn finish(
    coordinate: PackageCoordinate,
    mut authors: Vec<String>,
    release_time: DateTime<Utc>,
    downloads: Option<u64>,
    declared_deps: Vec<DeclaredDep>,
) -> PackageMetadata {
    authors.retain(|a| !a.trim().is_empty());
    authors.sort();
    authors.dedup();
    let mut provenance = Vec::new();
    let downloads = downloads.unwrap_or_else(|| {
        provenance.push("downloads not reported by registry API; recorded as 0".to_string());
        0
    });
    let mut meta = PackageMetadata {
        subject_language: coordinate.registry.language(),
        coordinate,
        authors,
        release_time,
        downloads,
        provenance,
        declared_deps,
        file_inventory: Vec::new(),
        import_name: None,
        archive: None,
        traces: Vec::new(),
    };
    meta.normalize_deps();
    meta
}

/// Parses an npm packument (`GET /<name>`) for one version.
pub fn parse_npm_document(
    coord: &PackageCoordinate,
    doc: &Value,
    downloads: Option<u64>,
) -> Result<FetchedPackage, IngestError> {
    let loc = coord.to_string();
    let versions = doc.get("versions").and_then(Value::as_object).ok_or_else(|| IngestError::schema(&loc, "no `versions` object"))?;
    let v = versions.get(&coord.version).ok_or_else(|| IngestError::NotFound(loc.clone()))?;
    let mut authors = Vec::new();
    for people in [v.get("maintainers"), doc.get("maintainers")].into_iter().flatten() {
        if let Some(list) = people.as_array() {
            authors.extend(list.iter().filter_map(person_name));
        }
    }
    if let Some(a) = v.get("author").and_then(person_name) {
        authors.push(a);
    }
    if let Some(a) = v.pointer("/_npmUser/name").and_then(Value::as_str) {
        authors.push(a.to_string());
    }
    let release_time = parse_time(doc.pointer(&format!("/time/{}", coord.version)), &loc)?;
    let mut deps = Vec::new();
    for (field, kind) in
        [("dependencies", DepKind::Runtime), ("optionalDependencies", DepKind::Runtime), ("devDependencies", DepKind::Dev)]
    {
        if let Some(map) = v.get(field).and_then(Value::as_object) {
            for (name, constraint) in map {
                let constraint = constraint.as_str().unwrap_or("*").to_string();
                deps.push(DeclaredDep { name: name.clone(), constraint, kind });
            }
        }
    }
    let archive_url = v.pointer("/dist/tarball").and_then(Value::as_str).map(str::to_string);
    Ok(FetchedPackage { metadata: finish(coord.clone(), authors, release_time, downloads, deps), archive_url })
}

fn person_name(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.split('<').next().unwrap_or(s).trim().to_string()),
        Value::Object(o) => o.get("name").and_then(Value::as_str).map(str::to_string),
        _ => None,
    }
}

/// Parses the npm downloads API point response.
pub fn parse_npm_downloads(doc: &Value) -> Option<u64> {
    doc.get("downloads").and_then(Value::as_u64)
}

/// Parses a PyPI release document (`GET /pypi/<name>/<version>/json`).
pub fn parse_pypi_document(coord: &PackageCoordinate, doc: &Value) -> Result<FetchedPackage, IngestError> {
    let loc = coord.to_string();
    let info = doc.get("info").ok_or_else(|| IngestError::schema(&loc, "no `info` object"))?;
    let mut authors = Vec::new();
    for field in ["author", "author_email", "maintainer", "maintainer_email"] {
        if let Some(s) = info.get(field).and_then(Value::as_str) {
            authors.extend(s.split(',').map(|a| a.trim().to_string()));
        }
    }
    let urls = doc.get("urls").and_then(Value::as_array).cloned().unwrap_or_default();
    let first = urls.first();
    let release_time = parse_time(
        first.and_then(|u| u.get("upload_time_iso_8601").or_else(|| u.get("upload_time"))),
        &loc,
    )?;
    let mut deps = Vec::new();
    if let Some(reqs) = info.get("requires_dist").and_then(Value::as_array) {
        for req in reqs.iter().filter_map(Value::as_str) {
            if let Some(dep) = parse_requirement(req) {
                deps.push(dep);
            }
        }
    }
    // PyPI reports -1 when download statistics are disabled.
    let downloads = info.pointer("/downloads/last_month").and_then(Value::as_i64).filter(|d| *d >= 0).map(|d| d as u64);
    let archive_url = urls
        .iter()
        .find(|u| u.get("packagetype").and_then(Value::as_str) == Some("sdist"))
        .or(first)
        .and_then(|u| u.get("url"))
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok(FetchedPackage { metadata: finish(coord.clone(), authors, release_time, downloads, deps), archive_url })
}

/// Parses one PEP 508 requirement; requirements gated on an extra are not
/// runtime dependencies and are skipped.
pub fn parse_requirement(req: &str) -> Option<DeclaredDep> {
    let (spec, marker) = match req.split_once(';') {
        Some((s, m)) => (s.trim(), m.trim()),
        None => (req.trim(), ""),
    };
    if marker.replace(' ', "").contains("extra==") {
        return None;
    }
    let end = spec.find(|c: char| !(c.is_ascii_alphanumeric() || "._-".contains(c))).unwrap_or(spec.len());
    let name = &spec[..end];
    if name.is_empty() {
        return None;
    }
    let mut rest = spec[end..].trim();
    if rest.starts_with('[') {
        rest = rest.split_once(']').map(|(_, r)| r.trim()).unwrap_or("");
    }
    let constraint = rest.trim_start_matches('(').trim_end_matches(')').trim();
    Some(DeclaredDep {
        name: name.to_string(),
        constraint: if constraint.is_empty() { "*".to_string() } else { constraint.to_string() },
        kind: DepKind::Runtime,
    })
}

/// Parses a RubyGems v2 version document.
pub fn parse_rubygems_document(coord: &PackageCoordinate, doc: &Value) -> Result<FetchedPackage, IngestError> {
    let loc = coord.to_string();
    let authors = doc
        .get("authors")
        .and_then(Value::as_str)
        .map(|s| s.split(',').map(|a| a.trim().to_string()).collect())
        .unwrap_or_default();
    let release_time = parse_time(doc.get("version_created_at").or_else(|| doc.get("created_at")), &loc)?;
    let mut deps = Vec::new();
    for (field, kind) in [("runtime", DepKind::Runtime), ("development", DepKind::Dev)] {
        if let Some(list) = doc.pointer(&format!("/dependencies/{field}")).and_then(Value::as_array) {
            for d in list {
                let Some(name) = d.get("name").and_then(Value::as_str) else {
                    return Err(IngestError::schema(&loc, "dependency without name"));
                };
                let constraint = d.get("requirements").and_then(Value::as_str).unwrap_or(">= 0").to_string();
                deps.push(DeclaredDep { name: name.to_string(), constraint, kind });
            }
        }
    }
    let downloads = doc.get("downloads").and_then(Value::as_u64);
    let archive_url = doc.get("gem_uri").and_then(Value::as_str).map(str::to_string);
    Ok(FetchedPackage { metadata: finish(coord.clone(), authors, release_time, downloads, deps), archive_url })
}

#[cfg(feature = "live")]
pub use client::{LiveClient, LiveConfig};

#[cfg(feature = "live")]
mod client {
    use super::*;
    use crate::registry::Registry;
    use std::collections::HashMap;
    use std::path::{Path, PathBuf};
    use std::sync::Arc;
    use std::time::{Duration, Instant};
    use tokio::sync::{Mutex, Semaphore};

    #[derive(Debug, Clone)]
    pub struct LiveConfig {
        pub npm_base: String,
        pub npm_downloads_base: String,
        pub pypi_base: String,
        pub rubygems_base: String,
        /// Requests in flight across all registries.
        pub parallelism: usize,
        /// Minimum spacing between requests to the same registry.
        pub min_interval: Duration,
        pub timeout: Duration,
    }

    impl Default for LiveConfig {
        fn default() -> Self {
            LiveConfig {
                npm_base: "https://registry.npmjs.org".to_string(),
                npm_downloads_base: "https://api.npmjs.org".to_string(),
                pypi_base: "https://pypi.org".to_string(),
                rubygems_base: "https://rubygems.org".to_string(),
                parallelism: 8,
                min_interval: Duration::from_millis(100),
                timeout: Duration::from_secs(30),
            }
        }
    }

    pub struct LiveClient {
        http: reqwest::Client,
        config: LiveConfig,
        permits: Arc<Semaphore>,
        last_call: HashMap<Registry, Mutex<Option<Instant>>>,
    }

    impl LiveClient {
        pub fn new(config: LiveConfig) -> Result<Self, IngestError> {
            let http = reqwest::Client::builder()
                .timeout(config.timeout)
                .user_agent(concat!("pkgvet/", env!("CARGO_PKG_VERSION")))
                .build()
                .map_err(|e| IngestError::Http(e.to_string()))?;
            let permits = Arc::new(Semaphore::new(config.parallelism.max(1)));
            let last_call = Registry::ALL.iter().map(|r| (*r, Mutex::new(None))).collect();
            Ok(LiveClient { http, config, permits, last_call })
        }

        async fn throttle(&self, registry: Registry) {
            let mut last = self.last_call[&registry].lock().await;
            if let Some(prev) = *last {
                let wait = self.config.min_interval.saturating_sub(prev.elapsed());
                if !wait.is_zero() {
                    tokio::time::sleep(wait).await;
                }
            }
            *last = Some(Instant::now());
        }

        async fn get_json(&self, registry: Registry, url: &str) -> Result<Value, IngestError> {
            let _permit = self.permits.acquire().await.expect("semaphore never closed");
            self.throttle(registry).await;
            let resp = self.http.get(url).send().await.map_err(|e| IngestError::Http(e.to_string()))?;
            if resp.status() == reqwest::StatusCode::NOT_FOUND {
                return Err(IngestError::NotFound(url.to_string()));
            }
            let resp = resp.error_for_status().map_err(|e| IngestError::Http(e.to_string()))?;
            resp.json::<Value>().await.map_err(|e| IngestError::schema(url, e))
        }

        pub async fn fetch(&self, coord: &PackageCoordinate) -> Result<FetchedPackage, IngestError> {
            let cfg = &self.config;
            match coord.registry {
                Registry::Npm => {
                    let doc = self.get_json(Registry::Npm, &npm_document_url(&cfg.npm_base, &coord.name)).await?;
                    let downloads = match self
                        .get_json(Registry::Npm, &npm_downloads_url(&cfg.npm_downloads_base, &coord.name))
                        .await
                    {
                        Ok(d) => parse_npm_downloads(&d),
                        Err(err) => {
                            tracing::warn!(%coord, %err, "download counts unavailable");
                            None
                        }
                    };
                    parse_npm_document(coord, &doc, downloads)
                }
                Registry::Pypi => {
                    let url = pypi_release_url(&cfg.pypi_base, &coord.name, &coord.version);
                    parse_pypi_document(coord, &self.get_json(Registry::Pypi, &url).await?)
                }
                Registry::Rubygems => {
                    let url = rubygems_version_url(&cfg.rubygems_base, &coord.name, &coord.version);
                    parse_rubygems_document(coord, &self.get_json(Registry::Rubygems, &url).await?)
                }
            }
        }

        /// Fetches every coordinate concurrently, bounded by `parallelism`.
        pub async fn fetch_many(
            &self,
            coords: &[PackageCoordinate],
        ) -> Vec<(PackageCoordinate, Result<FetchedPackage, IngestError>)> {
            let futures = coords.iter().map(|c| async move { (c.clone(), self.fetch(c).await) });
            futures::future::join_all(futures).await
        }

        pub async fn download_archive(&self, url: &str, dest_dir: &Path) -> Result<PathBuf, IngestError> {
            let _permit = self.permits.acquire().await.expect("semaphore never closed");
            let name = url.rsplit('/').next().filter(|n| !n.is_empty()).unwrap_or("package.tgz");
            let resp = self.http.get(url).send().await.map_err(|e| IngestError::Http(e.to_string()))?;
            let bytes = resp
                .error_for_status()
                .map_err(|e| IngestError::Http(e.to_string()))?
                .bytes()
                .await
                .map_err(|e| IngestError::Http(e.to_string()))?;
            std::fs::create_dir_all(dest_dir).map_err(|e| IngestError::io(dest_dir, e))?;
            let path = dest_dir.join(name);
            std::fs::write(&path, &bytes).map_err(|e| IngestError::io(&path, e))?;
            Ok(path)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;
    use serde_json::json;

    #[test]
    fn npm_packument() {
        let coord = PackageCoordinate::new(Registry::Npm, "event-stream", "3.3.6").unwrap();
        let doc = json!({
            "name": "event-stream",
            "maintainers": [{"name": "dominictarr"}],
            "time": {"3.3.6": "2018-09-09T10:00:00.000Z"},
            "versions": {"3.3.6": {
                "dependencies": {"flatmap-stream": "^0.1.0", "through": "~2.3.1"},
                "devDependencies": {"tape": "*"},
                "author": "Dominic Tarr <dominic.tarr@gmail.com>",
                "dist": {"tarball": "https://registry.npmjs.org/event-stream/-/event-stream-3.3.6.tgz"}
            }}
        });
        let got = parse_npm_document(&coord, &doc, Some(1000)).unwrap();
        let m = &got.metadata;
        assert_eq!(m.runtime_deps().count(), 2);
        assert!(m.declared_deps.iter().any(|d| d.name == "tape" && d.kind == DepKind::Dev));
        assert!(m.authors.contains(&"Dominic Tarr".to_string()));
        assert_eq!(m.downloads, 1000);
        assert!(got.archive_url.unwrap().ends_with(".tgz"));

        let missing = PackageCoordinate::new(Registry::Npm, "event-stream", "9.9.9").unwrap();
        assert!(matches!(parse_npm_document(&missing, &doc, None), Err(IngestError::NotFound(_))));
        assert!(matches!(parse_npm_document(&coord, &json!({}), None), Err(IngestError::Schema { .. })));
    }

    #[test]
    fn pypi_release_without_downloads() {
        let coord = PackageCoordinate::new(Registry::Pypi, "requests", "2.31.0").unwrap();
        let doc = json!({
            "info": {"author": "Kenneth Reitz", "downloads": {"last_month": -1},
                     "requires_dist": ["urllib3 (<3,>=1.21.1)", "idna<4,>=2.5", "PySocks!=1.5.7,>=1.5.6; extra == \"socks\""]},
            "urls": [{"packagetype": "sdist", "url": "https://files.pythonhosted.org/r.tar.gz",
                      "upload_time_iso_8601": "2023-05-22T15:12:44.175000Z"}]
        });
        let got = parse_pypi_document(&coord, &doc).unwrap();
        assert_eq!(got.metadata.downloads, 0);
        assert!(!got.metadata.provenance.is_empty());
        let names: Vec<&str> = got.metadata.declared_deps.iter().map(|d| d.name.as_str()).collect();
        assert_eq!(names, ["idna", "urllib3"]);
        assert_eq!(got.metadata.declared_deps[1].constraint, "<3,>=1.21.1");
    }

    #[test]
    fn rubygems_version() {
        let coord = PackageCoordinate::new(Registry::Rubygems, "rest-client", "1.6.13").unwrap();
        let doc = json!({
            "authors": "REST Client Team, someone",
            "version_created_at": "2019-08-13T00:00:00.000Z",
            "downloads": 12345,
            "dependencies": {"runtime": [{"name": "mime-types", "requirements": "~> 1.16"}],
                              "development": [{"name": "rspec", "requirements": ">= 0"}]},
            "gem_uri": "https://rubygems.org/gems/rest-client-1.6.13.gem"
        });
        let got = parse_rubygems_document(&coord, &doc).unwrap();
        assert_eq!(got.metadata.authors.len(), 2);
        assert_eq!(got.metadata.runtime_deps().next().unwrap().constraint, "~> 1.16");
    }

    #[test]
    fn requirement_parsing() {
        assert_eq!(parse_requirement("six").unwrap().constraint, "*");
        assert_eq!(parse_requirement("requests[socks] >=2.0").unwrap().constraint, ">=2.0");
        assert!(parse_requirement("pytest; extra == 'test'").is_none());
        assert_eq!(parse_requirement("colorama; sys_platform == 'win32'").unwrap().name, "colorama");
    }

    #[test]
    fn endpoint_urls() {
        assert_eq!(npm_document_url("https://registry.npmjs.org/", "@babel/core"), "https://registry.npmjs.org/@babel%2fcore");
        assert_eq!(pypi_release_url("https://pypi.org", "six", "1.16.0"), "https://pypi.org/pypi/six/1.16.0/json");
        assert_eq!(
            rubygems_version_url("https://rubygems.org", "rake", "13.0.6"),
            "https://rubygems.org/api/v2/rubygems/rake/versions/13.0.6.json"
        );
    }
}
