//! Capability-approach vocabulary shared by every other module.
//!
//! Everything here is an immutable value type. Enumerations are closed and
//! parse case-insensitively from configuration (underscores, dashes, spaces
//! and commas are ignored), and always serialize to their canonical
//! `snake_case` name.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scenario::ConversionTerm;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("unknown central capability `{0}`")]
    UnknownCapability(String),
    #[error("unknown value dimension `{0}`")]
    UnknownValue(String),
    #[error("unknown housing category `{0}`")]
    UnknownHousing(String),
    #[error("unknown registration state `{0}`")]
    UnknownRegistration(String),
    #[error("unknown payer `{0}`")]
    UnknownPayer(String),
    #[error("health level {0} outside 0..=4")]
    HealthOutOfRange(i64),
    #[error("invalid need name `{0}`")]
    InvalidNeed(String),
    #[error("{what} = {value} outside [0, 1]")]
    WeightOutOfRange { what: String, value: f64 },
}

fn normalize(tag: &str) -> String {
    tag.chars()
        .filter(|c| !matches!(c, '_' | '-' | ' ' | ','))
        .flat_map(char::to_lowercase)
        .collect()
}

/// Declares a closed enumeration with canonical names, aliases, and
/// string-based serde in both directions.
macro_rules! closed_enum {
    (
        $(#[$meta:meta])*
        $name:ident, $err:ident {
            $($variant:ident => $canon:literal $(| $alias:literal)*),+ $(,)?
        }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $canon),+
                }
            }
        }

        impl FromStr for $name {
            type Err = DomainError;

            fn from_str(tag: &str) -> Result<Self, Self::Err> {
                let key = normalize(tag);
                $(
                    if key == normalize($canon) $(|| key == normalize($alias))* {
                        return Ok($name::$variant);
                    }
                )+
                Err(DomainError::$err(tag.to_string()))
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.name())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

closed_enum! {
    /// The ten central capabilities used as evaluation ends and long-term goals.
    CentralCapability, UnknownCapability {
        Life => "life",
        BodilyHealth => "bodily_health" | "health",
        BodilyIntegrity => "bodily_integrity" | "integrity",
        SensesImaginationThought => "senses_imagination_thought" | "senses" | "senses_imagination_and_thought",
        Emotions => "emotions",
        PracticalReason => "practical_reason" | "reason",
        Affiliation => "affiliation",
        OtherSpecies => "other_species",
        Play => "play",
        ControlOverEnvironment => "control_over_environment" | "control_over_ones_environment" | "control",
    }
}

closed_enum! {
    /// Schwartz basic values; preference weights over them drive long-term rewards.
    ValueDimension, UnknownValue {
        SelfDirection => "self_direction",
        Stimulation => "stimulation",
        Hedonism => "hedonism",
        Achievement => "achievement",
        Power => "power",
        Security => "security",
        Conformity => "conformity",
        Tradition => "tradition",
        Benevolence => "benevolence",
        Universalism => "universalism",
    }
}

closed_enum! {
    /// ETHOS conceptual categories plus `Housed`.
    Housing, UnknownHousing {
        Roofless => "roofless",
        Houseless => "houseless",
        Insecure => "insecure",
        Inadequate => "inadequate",
        Housed => "housed",
    }
}

closed_enum! {
    Registration, UnknownRegistration {
        Registered => "registered",
        InProcess => "in_process",
        NonRegistered => "non_registered" | "unregistered",
    }
}

closed_enum! {
    /// Who pays for a consumed resource.
    Payer, UnknownPayer {
        Healthcare => "healthcare",
        SocialServices => "social_services",
    }
}

/// Parses a capability tag from configuration.
pub fn central_capability_of(tag: &str) -> Result<CentralCapability, DomainError> {
    tag.parse()
}

/// A need dimension. The set is declared per scenario on top of the
/// baseline members; names are stored in canonical `snake_case`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Need(String);

impl Need {
    pub const SHELTER: &'static str = "shelter";
    pub const FOOD: &'static str = "food";
    pub const PAIN_RELIEF: &'static str = "pain_relief";
    pub const SAFETY: &'static str = "safety";

    pub fn new(name: &str) -> Result<Self, DomainError> {
        let canon: String = name
            .trim()
            .chars()
            .map(|c| if c == '-' || c == ' ' { '_' } else { c.to_ascii_lowercase() })
            .collect();
        if canon.is_empty() || !canon.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(DomainError::InvalidNeed(name.to_string()));
        }
        Ok(Need(canon))
    }

    pub fn baseline() -> Vec<Need> {
        [Self::SHELTER, Self::FOOD, Self::PAIN_RELIEF, Self::SAFETY]
            .into_iter()
            .map(|n| Need(n.to_string()))
            .collect()
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Need {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Need {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Need {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Need::new(&raw).map_err(serde::de::Error::custom)
    }
}

/// Ordinal health level, 0 = critical through 4 = healthy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct HealthLevel(u8);

impl HealthLevel {
    pub const MIN: HealthLevel = HealthLevel(0);
    pub const MAX: HealthLevel = HealthLevel(4);

    pub fn new(level: i64) -> Result<Self, DomainError> {
        if (0..=4).contains(&level) {
            Ok(HealthLevel(level as u8))
        } else {
            Err(DomainError::HealthOutOfRange(level))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// Adds `delta` and clamps to the ordinal bounds.
    pub fn shifted(self, delta: i64) -> Self {
        HealthLevel((self.0 as i64 + delta).clamp(0, 4) as u8)
    }

    pub fn all() -> impl Iterator<Item = HealthLevel> {
        (0..=4).map(HealthLevel)
    }
}

impl fmt::Display for HealthLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<'de> Deserialize<'de> for HealthLevel {
    // Accepts integers and their string form; TOML table keys are always strings.
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct Visitor;
        impl serde::de::Visitor<'_> for Visitor {
            type Value = HealthLevel;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a health level 0..=4")
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<HealthLevel, E> {
                HealthLevel::new(v).map_err(E::custom)
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<HealthLevel, E> {
                HealthLevel::new(v.min(i64::MAX as u64) as i64).map_err(E::custom)
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<HealthLevel, E> {
                let n: i64 = v.trim().parse().map_err(|_| E::custom(format!("invalid health level `{v}`")))?;
                HealthLevel::new(n).map_err(E::custom)
            }
        }
        d.deserialize_any(Visitor)
    }
}

/// A personal attribute value. Numeric values compare and hash by their
/// total ordering so states can key hash maps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Number(f64),
    Category(String),
}

impl AttrValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            AttrValue::Number(n) => Some(*n),
            AttrValue::Category(_) => None,
        }
    }
}

impl PartialEq for AttrValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for AttrValue {}

impl PartialOrd for AttrValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AttrValue {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (AttrValue::Number(a), AttrValue::Number(b)) => a.total_cmp(b),
            (AttrValue::Number(_), AttrValue::Category(_)) => Ordering::Less,
            (AttrValue::Category(_), AttrValue::Number(_)) => Ordering::Greater,
            (AttrValue::Category(a), AttrValue::Category(b)) => a.cmp(b),
        }
    }
}

impl Hash for AttrValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        match self {
            AttrValue::Number(n) => {
                0u8.hash(state);
                // -0.0 and 0.0 compare unequal under total_cmp, so hashing bits is consistent.
                n.to_bits().hash(state);
            }
            AttrValue::Category(c) => {
                1u8.hash(state);
                c.hash(state);
            }
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Number(n) => write!(f, "{n}"),
            AttrValue::Category(c) => f.write_str(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PersonalState {
    pub health: HealthLevel,
    pub housing: Housing,
    pub registration: Registration,
    #[serde(default)]
    pub attributes: BTreeMap<String, AttrValue>,
}

impl PersonalState {
    pub fn new(health: HealthLevel, housing: Housing, registration: Registration) -> Self {
        PersonalState { health, housing, registration, attributes: BTreeMap::new() }
    }
}

/// Need urgencies (short-term weights) and value preferences (long-term
/// weights). Every stored entry lies in `[0, 1]`; absent entries read as 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChoiceFactors")]
pub struct ChoiceFactors {
    #[serde(default)]
    value_prefs: BTreeMap<ValueDimension, f64>,
    #[serde(default)]
    need_urgencies: BTreeMap<Need, f64>,
}

#[derive(Deserialize)]
struct RawChoiceFactors {
    #[serde(default)]
    value_prefs: BTreeMap<ValueDimension, f64>,
    #[serde(default)]
    need_urgencies: BTreeMap<Need, f64>,
}

impl TryFrom<RawChoiceFactors> for ChoiceFactors {
    type Error = DomainError;

    fn try_from(raw: RawChoiceFactors) -> Result<Self, Self::Error> {
        ChoiceFactors::new(raw.value_prefs, raw.need_urgencies)
    }
}

fn check_unit(what: impl fmt::Display, value: f64) -> Result<(), DomainError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(DomainError::WeightOutOfRange { what: what.to_string(), value })
    }
}

impl ChoiceFactors {
    /// Rejects any weight outside `[0, 1]` (including NaN).
    pub fn new(
        value_prefs: BTreeMap<ValueDimension, f64>,
        need_urgencies: BTreeMap<Need, f64>,
    ) -> Result<Self, DomainError> {
        for (v, w) in &value_prefs {
            check_unit(format!("value preference {v}"), *w)?;
        }
        for (n, u) in &need_urgencies {
            check_unit(format!("urgency {n}"), *u)?;
        }
        Ok(ChoiceFactors { value_prefs, need_urgencies })
    }

    pub fn value_pref(&self, value: ValueDimension) -> f64 {
        self.value_prefs.get(&value).copied().unwrap_or(0.0)
    }

    pub fn urgency(&self, need: &Need) -> f64 {
        self.need_urgencies.get(need).copied().unwrap_or(0.0)
    }

    pub fn value_prefs(&self) -> &BTreeMap<ValueDimension, f64> {
        &self.value_prefs
    }

    pub fn need_urgencies(&self) -> &BTreeMap<Need, f64> {
        &self.need_urgencies
    }

    pub fn shift_urgency(&mut self, need: &Need, delta: f64) {
        let next = (self.urgency(need) + delta).clamp(0.0, 1.0);
        self.need_urgencies.insert(need.clone(), next);
    }

    pub fn shift_value_pref(&mut self, value: ValueDimension, delta: f64) {
        let next = (self.value_pref(value) + delta).clamp(0.0, 1.0);
        self.value_prefs.insert(value, next);
    }

    /// Stable digest of the stored weights, used as a cache key component.
    pub fn fingerprint(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(2 * (self.value_prefs.len() + self.need_urgencies.len()));
        for (v, w) in &self.value_prefs {
            out.push(*v as u64);
            out.push(w.to_bits());
        }
        out.push(u64::MAX);
        for (n, u) in &self.need_urgencies {
            out.extend(n.as_str().bytes().map(u64::from));
            out.push(u.to_bits());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentProfile {
    pub id: AgentId,
    pub state: PersonalState,
    pub choice: ChoiceFactors,
    #[serde(default)]
    pub personal_factors: Vec<ConversionTerm>,
}
