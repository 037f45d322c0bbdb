use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One input channel of evidence. Declaration order is the canonical
/// fusion order: face, body, text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Face,
    Body,
    Text,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Face, Modality::Body, Modality::Text];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Face => "face",
            Modality::Body => "body",
            Modality::Text => "text",
        }
    }

    /// Default raw feature length.
    pub fn default_dim(self) -> usize {
        match self {
            Modality::Face | Modality::Body => 2048,
            Modality::Text => 768,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "face" => Ok(Modality::Face),
            "body" => Ok(Modality::Body),
            "text" => Ok(Modality::Text),
            other => Err(Error::Config(format!("unknown modality `{other}`"))),
        }
    }
}

/// Nonempty, duplicate-free set of modalities kept in canonical order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<Modality>", into = "Vec<Modality>")]
pub struct ModalitySet(Vec<Modality>);

impl ModalitySet {
    pub fn new(mods: impl IntoIterator<Item = Modality>) -> Result<Self> {
        let mut v: Vec<Modality> = mods.into_iter().collect();
        v.sort();
        v.dedup();
        if v.is_empty() {
            return Err(Error::Config("modality set must not be empty".into()));
        }
        Ok(Self(v))
    }

    pub fn all() -> Self {
        Self(Modality::ALL.to_vec())
    }

    /// The seven nonempty subsets: unimodal, then bimodal, then trimodal.
    pub fn nonempty_subsets() -> Vec<ModalitySet> {
        use Modality::*;
        [
            &[Face][..],
            &[Body],
            &[Text],
            &[Face, Body],
            &[Face, Text],
            &[Body, Text],
            &[Face, Body, Text],
        ]
        .iter()
        .map(|m| Self(m.to_vec()))
        .collect()
    }

    /// Canonical `+`-joined key, e.g. `face+text`.
    pub fn key(&self) -> String {
        self.0.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
    }

    /// Parses a `+`- or `,`-separated list in any order.
    pub fn parse(s: &str) -> Result<Self> {
        let mods = s
            .split(['+', ','])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        let set = Self::new(mods)?;
        let parts = s.split(['+', ',']).filter(|p| !p.trim().is_empty()).count();
        if parts != set.len() {
            return Err(Error::Config(format!("duplicate modality in `{s}`")));
        }
        Ok(set)
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0.contains(&m)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = Modality> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[Modality] {
        &self.0
    }
}

impl TryFrom<Vec<Modality>> for ModalitySet {
    type Error = Error;

    fn try_from(v: Vec<Modality>) -> Result<Self> {
        let n = v.len();
        let set = Self::new(v)?;
        if set.len() != n {
            return Err(Error::Config("duplicate modality".into()));
        }
        Ok(set)
    }
}

impl From<ModalitySet> for Vec<Modality> {
    fn from(s: ModalitySet) -> Self {
        s.0
    }
}

impl fmt::Display for ModalitySet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_keys() {
        assert_eq!(ModalitySet::parse("text,face").unwrap().key(), "face+text");
        assert_eq!(ModalitySet::parse("face").unwrap().key(), "face");
        assert_eq!(ModalitySet::all().key(), "face+body+text");
        assert!(ModalitySet::parse("").is_err());
        assert!(ModalitySet::parse("face,face").is_err());
        assert!(ModalitySet::parse("audio").is_err());
    }

    #[test]
    fn seven_subsets_round_trip() {
        let subsets = ModalitySet::nonempty_subsets();
        let keys: Vec<_> = subsets.iter().map(ModalitySet::key).collect();
        assert_eq!(
            keys,
            [
                "face",
                "body",
                "text",
                "face+body",
                "face+text",
                "body+text",
                "face+body+text"
            ]
        );
        for s in subsets {
            assert_eq!(ModalitySet::parse(&s.key()).unwrap(), s);
        }
    }
}
