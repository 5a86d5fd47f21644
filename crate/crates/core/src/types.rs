use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One conductor of the three-phase supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    L1,
    L2,
    L3,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::L1, Phase::L2, Phase::L3];

    pub fn index(self) -> usize {
        match self {
            Phase::L1 => 0,
            Phase::L2 => 1,
            Phase::L3 => 2,
        }
    }

    /// Angle of the fundamental source phasor, in radians.
    pub fn angle(self) -> f64 {
        use std::f64::consts::PI;
        match self {
            Phase::L1 => 0.0,
            Phase::L2 => -2.0 * PI / 3.0,
            Phase::L3 => 2.0 * PI / 3.0,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::L1 => "L1",
            Phase::L2 => "L2",
            Phase::L3 => "L3",
        };
        f.write_str(s)
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "L1" | "l1" => Ok(Phase::L1),
            "L2" | "l2" => Ok(Phase::L2),
            "L3" | "l3" => Ok(Phase::L3),
            other => Err(format!("unknown phase '{other}'")),
        }
    }
}

/// A measured channel: one phase voltage at one supply point.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ChannelId {
    pub point: String,
    pub phase: Phase,
}

impl ChannelId {
    pub fn new(point: impl Into<String>, phase: Phase) -> Self {
        Self {
            point: point.into(),
            phase,
        }
    }
}

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.point, self.phase)
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (point, phase) = s
            .split_once('/')
            .ok_or_else(|| format!("channel '{s}' is not of the form POINT/PHASE"))?;
        Ok(ChannelId::new(point, phase.parse()?))
    }
}

// Channels are used as JSON map keys in reports, so they serialize as "P3/L1".
pub(crate) mod channel_map {
    use std::collections::BTreeMap;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::ChannelId;

    pub fn serialize<S, V>(map: &BTreeMap<ChannelId, V>, s: S) -> Result<S::Ok, S::Error>
    where
        S: Serializer,
        V: Serialize,
    {
        let keyed: BTreeMap<String, &V> = map.iter().map(|(k, v)| (k.to_string(), v)).collect();
        keyed.serialize(s)
    }

    pub fn deserialize<'de, D, V>(d: D) -> Result<BTreeMap<ChannelId, V>, D::Error>
    where
        D: Deserializer<'de>,
        V: Deserialize<'de>,
    {
        let keyed = BTreeMap::<String, V>::deserialize(d)?;
        keyed
            .into_iter()
            .map(|(k, v)| k.parse().map(|c| (c, v)).map_err(D::Error::custom))
            .collect()
    }
}
