//! Directory of courier instances used for discovery by courier apps and
//! requesters.
//!
//! A registry is either an embedded, read-only file or a mutable service.
//! Both share one JSON document format: `{"version": n, "records": [...]}`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::error::{Error, ErrorCode, FieldErrors, Result};
use crate::geo::{Area, LonLat, Polygon};

pub const MAX_DESCRIPTION_CHARS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InstanceRecord {
    pub instance_name: String,
    pub admin: String,
    pub contact: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logo_url: Option<String>,
    pub domain_name: String,
    pub terms_of_service_url: String,
    pub privacy_policy_url: String,
    pub location: Area,
    pub languages: Vec<String>,
    pub description: String,
    /// Retired entries stay in the document but are hidden from queries.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tombstone: bool,
}

fn valid_url(s: &str) -> bool {
    url::Url::parse(s).is_ok_and(|u| matches!(u.scheme(), "http" | "https") && u.host().is_some())
}

fn valid_domain(s: &str) -> bool {
    let labels: Vec<&str> = s.split('.').collect();
    s.len() <= 253
        && labels.len() >= 2
        && labels.iter().all(|l| {
            !l.is_empty()
                && l.len() <= 63
                && !l.starts_with('-')
                && !l.ends_with('-')
                && l.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        })
}

/// Structural BCP-47 check: a 2-3 (or 5-8) letter primary subtag followed by
/// alphanumeric subtags of 1-8 characters.
pub fn valid_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or("");
    let primary_ok = matches!(primary.len(), 2..=3 | 5..=8) && primary.bytes().all(|b| b.is_ascii_alphabetic());
    primary_ok && parts.all(|p| (1..=8).contains(&p.len()) && p.bytes().all(|b| b.is_ascii_alphanumeric()))
}

impl InstanceRecord {
    pub fn validate(&self) -> Result<()> {
        let mut errs = FieldErrors::new();
        errs.check(!self.instance_name.trim().is_empty(), "instanceName", "must not be empty");
        errs.check(!self.admin.trim().is_empty(), "admin", "must not be empty");
        errs.check(!self.contact.trim().is_empty(), "contact", "must not be empty");
        if let Some(logo) = &self.logo_url {
            errs.check(valid_url(logo), "logoUrl", "must be an http(s) URL");
        }
        errs.check(
            valid_domain(&self.domain_name),
            "domainName",
            "must be a lowercase DNS name",
        );
        errs.check(valid_url(&self.terms_of_service_url), "termsOfServiceUrl", "must be an http(s) URL");
        errs.check(valid_url(&self.privacy_policy_url), "privacyPolicyUrl", "must be an http(s) URL");
        errs.absorb("location", self.location.validate());
        errs.check(!self.languages.is_empty(), "languages", "must not be empty");
        for tag in &self.languages {
            errs.check(valid_language_tag(tag), "languages", &format!("'{tag}' is not a BCP-47 tag"));
        }
        errs.check(!self.description.trim().is_empty(), "description", "must not be empty");
        errs.check(
            self.description.chars().count() <= MAX_DESCRIPTION_CHARS,
            "description",
            "longer than 2000 characters",
        );
        errs.into_result(&format!("instance record {}", self.domain_name))
    }

    fn speaks(&self, wanted: &str) -> bool {
        self.languages.iter().any(|tag| {
            tag.eq_ignore_ascii_case(wanted)
                || (tag.len() > wanted.len()
                    && tag.as_bytes()[wanted.len()] == b'-'
                    && tag[..wanted.len()].eq_ignore_ascii_case(wanted))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SourceKind {
    EmbeddedFile,
    Service,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    records: Vec<InstanceRecord>,
    source_kind: SourceKind,
    version: u64,
}

#[derive(Serialize, Deserialize)]
struct Document {
    version: u64,
    records: Vec<InstanceRecord>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceFilter {
    pub point: Option<LonLat>,
    pub region: Option<Polygon>,
    pub language: Option<String>,
    pub text: Option<String>,
}

impl Registry {
    pub fn empty(source_kind: SourceKind) -> Self {
        Self {
            records: Vec::new(),
            source_kind,
            version: 0,
        }
    }

    pub fn records(&self) -> &[InstanceRecord] {
        &self.records
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source_kind
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn find(&self, domain: &str) -> Option<&InstanceRecord> {
        self.records.iter().find(|r| r.domain_name == domain && !r.tombstone)
    }

    /// Parses and validates a registry document. The whole document is
    /// rejected if any record is invalid.
    pub fn from_json(text: &str, source_kind: SourceKind) -> Result<Self> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| Error::new(ErrorCode::ParseError, format!("registry document: {e}")))?;
        let mut seen = HashSet::new();
        for (i, rec) in doc.records.iter().enumerate() {
            rec.validate().map_err(|e| {
                Error::validation(format!("record {i}: {}", e.message))
                    .with_details(serde_json::json!({ "record": i, "domainName": rec.domain_name, "errors": e.details }))
            })?;
            if !seen.insert(rec.domain_name.as_str()) {
                return Err(Error::validation(format!("record {i}: duplicate domainName {}", rec.domain_name))
                    .with_details(serde_json::json!({ "record": i, "domainName": rec.domain_name, "field": "domainName" })));
            }
        }
        Ok(Self {
            records: doc.records,
            source_kind,
            version: doc.version,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Document {
            version: self.version,
            records: self.records.clone(),
        })
        .expect("registry document serializes")
    }

    /// Appends a record. Re-submitting an identical record is a no-op.
    pub fn register_instance(&mut self, rec: InstanceRecord) -> Result<()> {
        self.ensure_writable()?;
        rec.validate()?;
        if let Some(existing) = self.records.iter().find(|r| r.domain_name == rec.domain_name) {
            if *existing == rec {
                return Ok(());
            }
            return Err(Error::new(
                ErrorCode::DuplicateDomain,
                format!("{} is already registered", rec.domain_name),
            ));
        }
        self.records.push(rec);
        self.version += 1;
        Ok(())
    }

    /// Replaces the record with the same domainName. Setting `tombstone`
    /// retires it.
    pub fn replace_instance(&mut self, rec: InstanceRecord) -> Result<()> {
        self.ensure_writable()?;
        rec.validate()?;
        let slot = self
            .records
            .iter_mut()
            .find(|r| r.domain_name == rec.domain_name)
            .ok_or_else(|| Error::not_found("instance", &rec.domain_name))?;
        if *slot != rec {
            *slot = rec;
            self.version += 1;
        }
        Ok(())
    }

    fn ensure_writable(&self) -> Result<()> {
        match self.source_kind {
            SourceKind::Service => Ok(()),
            SourceKind::EmbeddedFile => Err(Error::new(
                ErrorCode::ReadOnlyRegistry,
                "embedded registries cannot be modified",
            )),
        }
    }

    /// Records matching every supplied filter, ordered by instanceName then domainName.
    pub fn query_instances(&self, filter: &InstanceFilter) -> Result<Vec<InstanceRecord>> {
        if filter.point.is_some() && filter.region.is_some() {
            return Err(Error::new(
                ErrorCode::InvalidGeometry,
                "supply at most one of point and region",
            ));
        }
        if let Some(p) = filter.point {
            p.validate()
                .map_err(|e| Error::new(ErrorCode::InvalidGeometry, e.message))?;
        }
        if let Some(region) = &filter.region {
            region.validate()?;
        }
        let text = filter.text.as_ref().map(|t| t.to_lowercase());
        let mut out: Vec<InstanceRecord> = self
            .records
            .iter()
            .filter(|r| !r.tombstone)
            .filter(|r| filter.point.is_none_or(|p| r.location.contains(p)))
            .filter(|r| filter.region.as_ref().is_none_or(|g| r.location.intersects(g)))
            .filter(|r| filter.language.as_deref().is_none_or(|l| r.speaks(l)))
            .filter(|r| {
                text.as_deref().is_none_or(|t| {
                    r.instance_name.to_lowercase().contains(t)
                        || r.description.to_lowercase().contains(t)
                        || r.domain_name.contains(t)
                })
            })
            .cloned()
            .collect();
        out.sort_by(|a, b| {
            a.instance_name
                .cmp(&b.instance_name)
                .then_with(|| a.domain_name.cmp(&b.domain_name))
        });
        Ok(out)
    }

    /// Combines several registries into one read-only view; on a domainName
    /// collision the earliest registry wins.
    pub fn merge(registries: impl IntoIterator<Item = Registry>) -> Registry {
        let mut merged = Registry::empty(SourceKind::EmbeddedFile);
        let mut seen = HashSet::new();
        for reg in registries {
            for rec in reg.records {
                if seen.insert(rec.domain_name.clone()) {
                    merged.records.push(rec);
                }
            }
        }
        merged
    }
}

fn unavailable(source: &str, e: impl std::fmt::Display) -> Error {
    Error::new(ErrorCode::SourceUnavailable, format!("{source}: {e}"))
}

/// Loads a registry from a file path (read-only) or an `http(s)://` URL
/// serving the registry document.
pub fn load_registry(source: &str) -> Result<Registry> {
    if source.starts_with("http://") || source.starts_with("https://") {
        let body = ureq::get(source)
            .call()
            .map_err(|e| unavailable(source, e))?
            .body_mut()
            .read_to_string()
            .map_err(|e| unavailable(source, e))?;
        return Registry::from_json(&body, SourceKind::Service);
    }
    let text = std::fs::read_to_string(source).map_err(|e| unavailable(source, e))?;
    Registry::from_json(&text, SourceKind::EmbeddedFile)
}

/// Shared, mutable registry for the registry service: snapshot reads and a
/// single serialized writer that persists each new version to disk.
pub struct RegistryService {
    current: RwLock<Arc<Registry>>,
    writer: Mutex<()>,
    persist_to: Option<PathBuf>,
}

impl RegistryService {
    pub fn new(mut registry: Registry, persist_to: Option<PathBuf>) -> Self {
        registry.source_kind = SourceKind::Service;
        Self {
            current: RwLock::new(Arc::new(registry)),
            writer: Mutex::new(()),
            persist_to,
        }
    }

    /// Opens (or creates) a file-backed service registry.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let registry = if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| unavailable(&path.display().to_string(), e))?;
            Registry::from_json(&text, SourceKind::Service)?
        } else {
            Registry::empty(SourceKind::Service)
        };
        Ok(Self::new(registry, Some(path.to_path_buf())))
    }

    pub fn snapshot(&self) -> Arc<Registry> {
        self.current.read().clone()
    }

    pub fn register(&self, rec: InstanceRecord) -> Result<Arc<Registry>> {
        self.mutate(|r| r.register_instance(rec))
    }

    pub fn replace(&self, rec: InstanceRecord) -> Result<Arc<Registry>> {
        self.mutate(|r| r.replace_instance(rec))
    }

    fn mutate(&self, f: impl FnOnce(&mut Registry) -> Result<()>) -> Result<Arc<Registry>> {
        let _guard = self.writer.lock();
        let mut next = (*self.snapshot()).clone();
        let before = next.version;
        f(&mut next)?;
        if next.version == before {
            return Ok(self.snapshot());
        }
        if let Some(path) = &self.persist_to {
            let tmp = path.with_extension("tmp");
            std::fs::write(&tmp, next.to_json()).map_err(|e| Error::internal(e.to_string()))?;
            std::fs::rename(&tmp, path).map_err(|e| Error::internal(e.to_string()))?;
        }
        let next = Arc::new(next);
        *self.current.write() = next.clone();
        Ok(next)
    }
}
