use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Input modalities in their canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Text,
    Graph,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Image, Modality::Text, Modality::Graph];

    /// Single-letter code: W (whole-slide image), T, G.
    pub fn letter(self) -> char {
        match self {
            Modality::Image => 'W',
            Modality::Text => 'T',
            Modality::Graph => 'G',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Image => "img",
            Modality::Text => "text",
            Modality::Graph => "graph",
        }
    }
}

/// Non-empty modality subset, e.g. `WTG`, `WG`, `W`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Variant(Vec<Modality>);

impl Variant {
    pub fn new(mut modalities: Vec<Modality>) -> Result<Self> {
        modalities.sort();
        modalities.dedup();
        if modalities.is_empty() {
            return Err(invalid("a variant needs at least one modality"));
        }
        Ok(Self(modalities))
    }

    pub fn full() -> Self {
        Self(Modality::ALL.to_vec())
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, m: Modality) -> bool {
        self.0.contains(&m)
    }

    pub fn position(&self, m: Modality) -> Option<usize> {
        self.0.iter().position(|&x| x == m)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for m in &self.0 {
            write!(f, "{}", m.letter())?;
        }
        Ok(())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut mods = Vec::new();
        for c in s.trim().chars() {
            let m = match c.to_ascii_uppercase() {
                'W' => Modality::Image,
                'T' => Modality::Text,
                'G' => Modality::Graph,
                other => return Err(invalid(format!("unknown modality letter {other:?} in variant {s:?}"))),
            };
            if mods.contains(&m) {
                return Err(invalid(format!("modality {c} repeated in variant {s:?}")));
            }
            mods.push(m);
        }
        Variant::new(mods)
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
