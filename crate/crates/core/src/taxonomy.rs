use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::LabelId;

const EIGEN13: &str = include_str!("../data/eigen13.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelClass {
    pub id: LabelId,
    pub name: String,
    pub color: [u8; 3],
}

/// Ordered set of classes; id 0 is always void/unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LabelClass>", into = "Vec<LabelClass>")]
pub struct LabelTaxonomy {
    classes: Vec<LabelClass>,
}

impl LabelTaxonomy {
    pub fn new(mut classes: Vec<LabelClass>) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        for (i, c) in classes.iter().enumerate() {
            if c.id as usize != i {
                return Err(Error::Invalid(format!(
                    "taxonomy ids must be unique and contiguous from 0; found {} at position {i}",
                    c.id
                )));
            }
        }
        if classes.is_empty() {
            return Err(Error::Invalid("taxonomy has no classes".into()));
        }
        let mut colors = HashSet::new();
        for c in &classes {
            if !colors.insert(c.color) {
                return Err(Error::Invalid(format!("duplicate palette color {:?}", c.color)));
            }
        }
        Ok(Self { classes })
    }

    /// The shipped eigen13-style taxonomy (void plus 11 indoor classes).
    pub fn eigen13() -> Self {
        Self::from_json(EIGEN13).expect("bundled taxonomy is valid")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    pub fn classes(&self) -> &[LabelClass] {
        &self.classes
    }

    /// Classes other than void.
    pub fn labeled_classes(&self) -> &[LabelClass] {
        &self.classes[1..]
    }

    /// Number of non-void classes.
    pub fn class_count(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn max_id(&self) -> LabelId {
        (self.classes.len() - 1) as LabelId
    }

    pub fn contains(&self, id: LabelId) -> bool {
        (id as usize) < self.classes.len()
    }

    pub fn check(&self, id: u32) -> Result<LabelId> {
        if (id as usize) < self.classes.len() {
            Ok(id as LabelId)
        } else {
            Err(Error::UnknownLabel(id))
        }
    }

    pub fn get(&self, id: LabelId) -> Option<&LabelClass> {
        self.classes.get(id as usize)
    }

    pub fn color(&self, id: LabelId) -> [u8; 3] {
        self.get(id).map(|c| c.color).unwrap_or([0, 0, 0])
    }
}

impl TryFrom<Vec<LabelClass>> for LabelTaxonomy {
    type Error = Error;
    fn try_from(v: Vec<LabelClass>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<LabelTaxonomy> for Vec<LabelClass> {
    fn from(t: LabelTaxonomy) -> Self {
        t.classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen13_has_void_plus_eleven() {
        let t = LabelTaxonomy::eigen13();
        assert_eq!(t.class_count(), 11);
        assert_eq!(t.get(0).unwrap().name, "void");
        assert_eq!(t.get(11).unwrap().name, "Window");
    }

    #[test]
    fn rejects_gaps_and_duplicate_colors() {
        let c = |id, color| LabelClass { id, name: format!("c{id}"), color };
        assert!(LabelTaxonomy::new(vec![c(0, [0, 0, 0]), c(2, [1, 1, 1])]).is_err());
        assert!(LabelTaxonomy::new(vec![c(0, [0, 0, 0]), c(1, [0, 0, 0])]).is_err());
        assert!(LabelTaxonomy::new(vec![c(1, [1, 0, 0]), c(0, [0, 0, 0])]).is_ok());
    }
}
