//! The five detection classes and subsets of them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Detection class of an event. The two digits count the detected third
/// photons and annihilation photons respectively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClassTag {
    /// One annihilation photon, as a Compton cone.
    C01,
    /// The 1157 keV third photon only, as a Compton cone.
    C10,
    /// Both annihilation photons, as a line of response.
    C02,
    /// One annihilation cone plus one third-photon cone.
    C11,
    /// Line of response plus a third-photon cone.
    C12,
}

impl ClassTag {
    pub const ALL: [ClassTag; 5] = [
        ClassTag::C01,
        ClassTag::C10,
        ClassTag::C02,
        ClassTag::C11,
        ClassTag::C12,
    ];

    pub const fn index(self) -> usize {
        match self {
            ClassTag::C01 => 0,
            ClassTag::C10 => 1,
            ClassTag::C02 => 2,
            ClassTag::C11 => 3,
            ClassTag::C12 => 4,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            ClassTag::C01 => "C01",
            ClassTag::C10 => "C10",
            ClassTag::C02 => "C02",
            ClassTag::C11 => "C11",
            ClassTag::C12 => "C12",
        }
    }

    pub const fn has_lor(self) -> bool {
        matches!(self, ClassTag::C02 | ClassTag::C12)
    }

    pub const fn cone_count(self) -> usize {
        match self {
            ClassTag::C01 | ClassTag::C10 | ClassTag::C12 => 1,
            ClassTag::C11 => 2,
            ClassTag::C02 => 0,
        }
    }
}

impl fmt::Display for ClassTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassTag::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

impl Serialize for ClassTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ClassTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A set of detection classes, iterated in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassSet(u8);

impl ClassSet {
    pub const fn empty() -> Self {
        ClassSet(0)
    }

    pub const fn all() -> Self {
        ClassSet(0b11111)
    }

    pub fn single(class: ClassTag) -> Self {
        ClassSet(1 << class.index())
    }

    pub fn insert(&mut self, class: ClassTag) {
        self.0 |= 1 << class.index();
    }

    pub fn contains(self, class: ClassTag) -> bool {
        self.0 & (1 << class.index()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = ClassTag> {
        ClassTag::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

impl FromIterator<ClassTag> for ClassSet {
    fn from_iter<I: IntoIterator<Item = ClassTag>>(iter: I) -> Self {
        let mut set = ClassSet::empty();
        for c in iter {
            set.insert(c);
        }
        set
    }
}

impl FromStr for ClassSet {
    type Err = Error;

    /// Parses `all` or a comma-separated list such as `C12,C02`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(ClassSet::all());
        }
        let set: ClassSet = s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        if set.is_empty() {
            return Err(Error::EmptySubset);
        }
        Ok(set)
    }
}

impl fmt::Display for ClassSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.iter().map(ClassTag::as_str).collect();
        f.write_str(&names.join(","))
    }
}

impl Serialize for ClassSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for ClassSet {
    /// Accepts either `"all"`, a comma list, or an array of class names.
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            List(Vec<String>),
        }
        let set = match Repr::deserialize(d)? {
            Repr::Text(s) => s.parse::<ClassSet>(),
            Repr::List(v) => v
                .iter()
                .map(|s| s.parse::<ClassTag>())
                .collect::<Result<ClassSet>>(),
        }
        .map_err(serde::de::Error::custom)?;
        if set.is_empty() {
            return Err(serde::de::Error::custom("empty class subset"));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        assert_eq!("c12".parse::<ClassTag>().unwrap(), ClassTag::C12);
        let set: ClassSet = "C12, C01".parse().unwrap();
        assert_eq!(set.to_string(), "C01,C12");
        assert_eq!("all".parse::<ClassSet>().unwrap().len(), 5);
    }

    #[test]
    fn unknown_class_is_rejected() {
        let err = "C33".parse::<ClassTag>().unwrap_err();
        assert!(err.to_string().contains("unknown class"));
        assert!(matches!("".parse::<ClassSet>(), Err(Error::EmptySubset)));
    }

    #[test]
    fn indices_follow_canonical_order() {
        for (i, c) in ClassTag::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
        }
    }
}
