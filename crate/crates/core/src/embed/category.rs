use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbedError, Result};
use crate::diag::{codes, Warning};

/// The nine factor categories, in reporting order.
pub const CATEGORIES: [&str; 9] = [
    "Mobility",
    "Race",
    "Education",
    "Age and Gender",
    "Family",
    "Income",
    "Occupation",
    "Household",
    "General Demographics",
];

/// Default feature-to-category assignment, keyed by the canonical feature
/// names the synthetic generator emits.
pub const DEFAULT_CATEGORY_MAP: &str = include_str!("../../data/category_map.json");

/// Validated category assignment restricted to the selected features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMap {
    /// All nine categories in canonical order; a category may be empty.
    pub categories: Vec<(String, Vec<String>)>,
    /// Selected features that no category claims.
    pub uncategorized: Vec<String>,
    /// Mapped features that were not selected and are therefore excluded.
    pub unselected: Vec<String>,
}

impl CategoryMap {
    pub fn features(&self, category: &str) -> Option<&[String]> {
        self.categories
            .iter()
            .find(|(c, _)| c == category)
            .map(|(_, f)| f.as_slice())
    }

    pub fn category_of(&self, feature: &str) -> Option<&str> {
        self.categories
            .iter()
            .find(|(_, fs)| fs.iter().any(|f| f == feature))
            .map(|(c, _)| c.as_str())
    }
}

/// `"Age and Gender"` -> `"age_and_gender"`.
pub fn category_slug(category: &str) -> String {
    category
        .split_whitespace()
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Parses a `{ "<category>": ["feature", ...] }` document and restricts it to
/// `selected`. Feature lists are reordered to follow `selected`.
pub fn parse_category_map(json: &str, selected: &[String]) -> Result<(CategoryMap, Vec<Warning>)> {
    let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
    for cat in raw.keys() {
        if !CATEGORIES.contains(&cat.as_str()) {
            return Err(EmbedError::UnknownCategory(cat.clone()));
        }
    }
    let mut owner: HashMap<&str, &str> = HashMap::new();
    for cat in CATEGORIES {
        for f in raw.get(cat).into_iter().flatten() {
            if let Some(first) = owner.insert(f.as_str(), cat) {
                return Err(EmbedError::DuplicateAssignment {
                    feature: f.clone(),
                    first: first.to_string(),
                    second: cat.to_string(),
                });
            }
        }
    }
    let selected_set: HashSet<&str> = selected.iter().map(String::as_str).collect();
    let categories = CATEGORIES
        .iter()
        .map(|cat| {
            let feats = selected
                .iter()
                .filter(|f| owner.get(f.as_str()) == Some(cat))
                .cloned()
                .collect();
            (cat.to_string(), feats)
        })
        .collect();
    let uncategorized: Vec<String> = selected
        .iter()
        .filter(|f| !owner.contains_key(f.as_str()))
        .cloned()
        .collect();
    let mut unselected: Vec<String> = owner
        .keys()
        .filter(|f| !selected_set.contains(*f))
        .map(|f| f.to_string())
        .collect();
    unselected.sort();

    let mut warnings = Vec::new();
    if !uncategorized.is_empty() {
        warnings.push(Warning::global(
            codes::UNCATEGORIZED,
            format!("{} selected features belong to no category", uncategorized.len()),
        ));
    }
    if !unselected.is_empty() {
        warnings.push(Warning::global(
            codes::UNSELECTED_MAPPED,
            format!("{} mapped features were not selected", unselected.len()),
        ));
    }
    Ok((
        CategoryMap {
            categories,
            uncategorized,
            unselected,
        },
        warnings,
    ))
}

/// Loads a category map file, or the bundled default when `path` is `None`.
pub fn load_category_map(path: Option<&Path>, selected: &[String]) -> Result<(CategoryMap, Vec<Warning>)> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| EmbedError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            parse_category_map(&text, selected)
        }
        None => parse_category_map(DEFAULT_CATEGORY_MAP, selected),
    }
}
