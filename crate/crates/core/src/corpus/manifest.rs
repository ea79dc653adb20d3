use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The six source categories used when curating the crawl list.
pub const CATEGORIES: [&str; 6] = [
    "Encyclopedia",
    "News",
    "Blogs",
    "E-books/Stories",
    "Social Media/Forums",
    "Miscellaneous",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteEntry {
    pub source: String,
    pub category: String,
}

/// Declared list of corpus sources. Documents whose `source` is absent from
/// the manifest are flagged during validation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SiteManifest {
    pub sites: Vec<SiteEntry>,
}

impl SiteManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: SiteManifest = serde_json::from_str(&text)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        for entry in &self.sites {
            if !CATEGORIES.contains(&entry.category.as_str()) {
                return Err(Error::Corpus(format!(
                    "site {} has unknown category {} (expected one of {:?})",
                    entry.source, entry.category, CATEGORIES
                )));
            }
            if entry.source.is_empty() {
                return Err(Error::Corpus("manifest entry with empty source".into()));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> HashSet<&str> {
        self.sites.iter().map(|e| e.source.as_str()).collect()
    }

    /// Sources seen in the corpus but not declared in the manifest.
    pub fn undeclared_sources<'a, I>(&self, doc_sources: I) -> Vec<String>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let declared = self.sources();
        let mut missing: Vec<String> = doc_sources
            .into_iter()
            .filter(|s| !declared.contains(s))
            .map(str::to_string)
            .collect();
        missing.sort();
        missing.dedup();
        missing
    }
}
