//! Vetting pipeline for packages published to PyPI, npm and RubyGems.
//!
//! Packages flow through three analyzers (registry metadata, static source
//! analysis and classification of captured system-call traces). Their reports
//! are cached by content digest and evaluated against a declarative rule set
//! that produces a ranked suspicion queue for analyst triage. Analyst labels
//! feed back into the rules as exclusions and into the known-malware list.

pub mod cache;
pub mod config;
pub mod dynamic;
pub mod exec;
pub mod graph;
pub mod heuristics;
pub mod metadata;
pub mod pipeline;
pub mod registry;
pub mod static_analysis;
pub mod version;

pub use registry::{
    DeclaredDep, DepKind, FileEntry, FileKind, PackageCoordinate, PackageMetadata, Registry,
    SubjectLanguage,
};
