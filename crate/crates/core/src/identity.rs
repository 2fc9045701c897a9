use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

/// One identity with its canonical gallery image.
#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    id: String,
    image: Arc<ImageBuffer>,
    source: Option<PathBuf>,
}

impl Identity {
    pub fn new(id: impl Into<String>, image: ImageBuffer) -> Self {
        Self {
            id: id.into(),
            image: Arc::new(image),
            source: None,
        }
    }

    /// Identity whose image was decoded from `path`. External shepherds are
    /// handed this path instead of a re-encoded copy.
    pub fn with_source(id: impl Into<String>, image: ImageBuffer, path: impl Into<PathBuf>) -> Self {
        Self {
            id: id.into(),
            image: Arc::new(image),
            source: Some(path.into()),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn image(&self) -> &ImageBuffer {
        &self.image
    }

    pub fn source(&self) -> Option<&Path> {
        self.source.as_deref()
    }

    /// Same identity with a replacement image and no source file.
    pub fn with_image(&self, image: ImageBuffer) -> Self {
        Self {
            id: self.id.clone(),
            image: Arc::new(image),
            source: None,
        }
    }
}

/// Ordered identities. Row and column `i` of every derived matrix refer to
/// `members[i]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdentitySet {
    members: Vec<Identity>,
}

impl IdentitySet {
    pub fn new(members: Vec<Identity>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(members.len());
        for m in &members {
            if m.id.is_empty() {
                return Err(Error::Input("identity id must not be empty".into()));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Input(format!("duplicate identity id '{}'", m.id)));
            }
        }
        Ok(Self { members })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[Identity] {
        &self.members
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Identity> {
        self.members.iter()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.id.clone()).collect()
    }

    /// Members at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> IdentitySet {
        IdentitySet {
            members: indices.iter().map(|&i| self.members[i].clone()).collect(),
        }
    }

    /// Members whose ids appear in `ids`, in the order of `ids`.
    pub fn select_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<IdentitySet> {
        let members = ids
            .iter()
            .map(|id| {
                let id = id.as_ref();
                self.members
                    .iter()
                    .find(|m| m.id == id)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("identity '{id}' not present in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        IdentitySet::new(members)
    }
}

impl<'a> IntoIterator for &'a IdentitySet {
    type Item = &'a Identity;
    type IntoIter = std::slice::Iter<'a, Identity>;

    fn into_iter(self) -> Self::IntoIter {
        self.members.iter()
    }
}
