use serde::{Deserialize, Serialize};

/// Transformer short-circuit impedance seen from the LV busbar.
///
/// The reactance is given at the carrier frequency and scales linearly with
/// harmonic order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceImpedance {
    pub resistance_mohm: f64,
    pub reactance_mohm: f64,
}

/// One line section between two nodes of the radial feeder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSection {
    pub id: String,
    #[serde(rename = "from")]
    pub from_node: String,
    #[serde(rename = "to")]
    pub to_node: String,
    pub resistance_mohm: f64,
    pub inductance_uh: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
}

/// A radial network rooted at the LV busbar (`source_node`).
///
/// The busbar is fed from an ideal source through `source_impedance`; it is
/// normally also the first supply point (P1), the point that stands in for
/// the MV side when attributing fluctuations upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub source_node: String,
    pub source_impedance: SourceImpedance,
    pub sections: Vec<LineSection>,
    pub supply_points: Vec<String>,
}

impl Topology {
    /// The seven-point branched feeder used throughout the benchmarks, with
    /// the reference line parameters (impedances evaluated at 50 Hz).
    ///
    /// ```text
    /// source ─T─ P1 ─I─ P2 ─II─ P3 ─III─ P4
    ///                    │        └──V─ P6 ─VI─ P7
    ///                    └──IV─ P5
    /// ```
    pub fn reference_feeder() -> Self {
        // (id, from, to, R mΩ, L µH); L chosen so that X = 2π·50·L matches the
        // reference reactances 31.4, 69.1 and 2.1 mΩ.
        let spec = [
            ("I", "P1", "P2", 150.0, 100.0),
            ("II", "P2", "P3", 150.0, 100.0),
            ("III", "P3", "P4", 100.0, 220.0),
            ("IV", "P2", "P5", 50.0, 6.7),
            ("V", "P3", "P6", 100.0, 220.0),
            ("VI", "P6", "P7", 50.0, 6.7),
        ];
        let sections = spec
            .iter()
            .map(|&(id, from, to, r, l)| LineSection {
                id: id.to_string(),
                from_node: from.to_string(),
                to_node: to.to_string(),
                resistance_mohm: r,
                inductance_uh: l,
                length_m: None,
            })
            .collect();
        Topology {
            source_node: "P1".to_string(),
            source_impedance: SourceImpedance {
                resistance_mohm: 3.8,
                reactance_mohm: 10.8,
            },
            sections,
            supply_points: (1..=7).map(|i| format!("P{i}")).collect(),
        }
    }

    pub fn section(&self, id: &str) -> Option<&LineSection> {
        self.sections.iter().find(|s| s.id == id)
    }

    pub fn section_mut(&mut self, id: &str) -> Option<&mut LineSection> {
        self.sections.iter_mut().find(|s| s.id == id)
    }

    /// Parses a bare topology, or the `[topology]` table of a scenario file.
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        let mut table: toml::Table = toml::from_str(text)?;
        match table.remove("topology") {
            Some(inner) => inner.try_into(),
            None => table.try_into(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology is always representable as TOML")
    }
}
