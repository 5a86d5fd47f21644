use std::collections::{BTreeMap, HashMap, VecDeque};
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GridError, LoadSpec, Topology};
use crate::Phase;

/// Tree-indexed impedance model of a [`Topology`] at a given carrier frequency.
///
/// Node 0 is the busbar. Every other node has exactly one parent and the
/// impedance of the section feeding it. Impedances are stored in ohms as
/// resistance and carrier-frequency reactance so that the same model can be
/// solved at harmonic frequencies.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    carrier_frequency: f64,
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    section_ids: Vec<Option<String>>,
    resistance: Vec<f64>,
    reactance: Vec<f64>,
    children: Vec<Vec<usize>>,
    // Breadth-first order from the busbar.
    order: Vec<usize>,
    distance_mohm: Vec<f64>,
    supply_points: Vec<usize>,
}

/// Builds the tree model. Fails on cycles, duplicate feeds, unreachable
/// supply points, and non-physical section parameters.
pub fn build_network(topology: &Topology, carrier_frequency: f64) -> Result<NetworkModel, GridError> {
    if !(carrier_frequency > 0.0) {
        return Err(GridError::Topology(format!(
            "carrier frequency must be positive, got {carrier_frequency}"
        )));
    }
    let src = &topology.source_impedance;
    if !(src.resistance_mohm >= 0.0 && src.reactance_mohm >= 0.0) {
        return Err(GridError::Topology("source impedance must be non-negative".into()));
    }
    let omega = 2.0 * PI * carrier_frequency;

    let mut adjacency: HashMap<&str, Vec<usize>> = HashMap::new();
    for (k, s) in topology.sections.iter().enumerate() {
        if !(s.resistance_mohm > 0.0) {
            return Err(GridError::Topology(format!(
                "section {} has non-positive resistance {}",
                s.id, s.resistance_mohm
            )));
        }
        if !(s.inductance_uh >= 0.0) {
            return Err(GridError::Topology(format!(
                "section {} has negative inductance {}",
                s.id, s.inductance_uh
            )));
        }
        if s.from_node == s.to_node {
            return Err(GridError::Topology(format!("section {} is a self-loop", s.id)));
        }
        adjacency.entry(s.from_node.as_str()).or_default().push(k);
        adjacency.entry(s.to_node.as_str()).or_default().push(k);
    }

    let root = topology.source_node.clone();
    let mut node_ids = vec![root.clone()];
    let mut index = HashMap::from([(root.clone(), 0usize)]);
    let mut parent = vec![None];
    let mut section_ids = vec![None];
    let mut resistance = vec![src.resistance_mohm * 1e-3];
    let mut reactance = vec![src.reactance_mohm * 1e-3];
    let mut children = vec![Vec::new()];
    let mut order = vec![0usize];
    let mut used = vec![false; topology.sections.len()];

    let mut queue = VecDeque::from([0usize]);
    while let Some(n) = queue.pop_front() {
        let name = node_ids[n].clone();
        for &k in adjacency.get(name.as_str()).map(Vec::as_slice).unwrap_or(&[]) {
            if used[k] {
                continue;
            }
            used[k] = true;
            let s = &topology.sections[k];
            let other = if s.from_node == name { &s.to_node } else { &s.from_node };
            if index.contains_key(other) {
                return Err(GridError::Topology(format!(
                    "cycle detected: section {} closes a loop at node {}",
                    s.id, other
                )));
            }
            let c = node_ids.len();
            node_ids.push(other.clone());
            index.insert(other.clone(), c);
            parent.push(Some(n));
            section_ids.push(Some(s.id.clone()));
            resistance.push(s.resistance_mohm * 1e-3);
            reactance.push(omega * s.inductance_uh * 1e-6);
            children.push(Vec::new());
            children[n].push(c);
            order.push(c);
            queue.push_back(c);
        }
    }

    if let Some(k) = used.iter().position(|u| !u) {
        return Err(GridError::Topology(format!(
            "section {} is disconnected from source node {}",
            topology.sections[k].id, root
        )));
    }

    let mut supply_points = Vec::with_capacity(topology.supply_points.len());
    for p in &topology.supply_points {
        match index.get(p) {
            Some(&i) => supply_points.push(i),
            None => {
                return Err(GridError::Topology(format!(
                    "supply point {p} is not connected to source node {root}"
                )))
            }
        }
    }

    let mut distance_mohm = vec![0.0; node_ids.len()];
    for &n in &order {
        let z = Complex64::new(resistance[n], reactance[n]).norm() * 1e3;
        distance_mohm[n] = z + parent[n].map_or(0.0, |p| distance_mohm[p]);
    }

    Ok(NetworkModel {
        carrier_frequency,
        node_ids,
        index,
        parent,
        section_ids,
        resistance,
        reactance,
        children,
        order,
        distance_mohm,
        supply_points,
    })
}

impl NetworkModel {
    pub fn carrier_frequency(&self) -> f64 {
        self.carrier_frequency
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    /// Supply point node indices, in topology order.
    pub fn supply_points(&self) -> &[usize] {
        &self.supply_points
    }

    /// Impedance (ohm) of the branch feeding `node` at harmonic order `h`;
    /// for the busbar this is the source impedance.
    pub fn branch_impedance(&self, node: usize, h: u32) -> Complex64 {
        Complex64::new(self.resistance[node], self.reactance[node] * h as f64)
    }

    /// Section impedance in milliohm at the carrier frequency.
    pub fn section_impedance_mohm(&self, section_id: &str) -> Option<Complex64> {
        self.section_ids
            .iter()
            .position(|s| s.as_deref() == Some(section_id))
            .map(|n| self.branch_impedance(n, 1) * 1e3)
    }

    /// Cumulative |Z| from the ideal source to `node`, in milliohm.
    pub fn distance_mohm(&self, node: usize) -> f64 {
        self.distance_mohm[node]
    }

    pub fn distances(&self) -> BTreeMap<String, f64> {
        self.node_ids
            .iter()
            .cloned()
            .zip(self.distance_mohm.iter().copied())
            .collect()
    }

    /// Impedance (ohm) from the ideal source to `node` at the carrier
    /// frequency, source impedance included.
    pub fn impedance_to(&self, node: usize) -> Complex64 {
        self.path_to(node).into_iter().map(|n| self.branch_impedance(n, 1)).sum()
    }

    /// Deepest node shared by the busbar paths of `a` and `b`.
    pub fn common_ancestor(&self, a: usize, b: usize) -> usize {
        let pa = self.path_to(a);
        let pb = self.path_to(b);
        pa.iter().zip(&pb).take_while(|(x, y)| x == y).last().map(|(x, _)| *x).unwrap_or(0)
    }

    /// Nodes on the path from the busbar down to `node`, busbar first.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut n = node;
        while let Some(p) = self.parent[n] {
            path.push(p);
            n = p;
        }
        path.reverse();
        path
    }

    /// Solves one phase for node voltages given the shunt admittance (siemens)
    /// connected at each node and the source EMF phasor.
    ///
    /// Subtree admittances are folded bottom-up, then voltages are divided
    /// top-down, which is exact for a tree of linear impedances.
    pub fn solve_phase(
        &self,
        shunt: &[Complex64],
        emf: Complex64,
        h: u32,
    ) -> Result<Vec<Complex64>, GridError> {
        let n = self.node_count();
        assert_eq!(shunt.len(), n, "one shunt admittance per node");
        let mut subtree = shunt.to_vec();
        let mut divider = vec![Complex64::new(1.0, 0.0); n];
        for &node in self.order.iter().rev() {
            let z = self.branch_impedance(node, h);
            let d = Complex64::new(1.0, 0.0) + z * subtree[node];
            if d.norm() < 1e-300 {
                return Err(GridError::Singular(self.node_ids[node].clone()));
            }
            divider[node] = d;
            if let Some(p) = self.parent[node] {
                let y = subtree[node] / d;
                subtree[p] += y;
            }
        }
        let mut v = vec![Complex64::new(0.0, 0.0); n];
        for &node in &self.order {
            let upstream = self.parent[node].map_or(emf, |p| v[p]);
            v[node] = upstream / divider[node];
        }
        Ok(v)
    }

    /// Largest Kirchhoff current-law mismatch over all nodes, relative to the
    /// current drawn from the source. Absolute when no current flows.
    pub fn kcl_residual(&self, voltages: &[Complex64], shunt: &[Complex64], emf: Complex64, h: u32) -> f64 {
        let inflow = |node: usize| {
            let upstream = self.parent[node].map_or(emf, |p| voltages[p]);
            (upstream - voltages[node]) / self.branch_impedance(node, h)
        };
        let source_current = inflow(0).norm();
        let scale = if source_current > 0.0 { source_current } else { 1.0 };
        (0..self.node_count())
            .map(|node| {
                let out: Complex64 = self.children[node].iter().map(|&c| inflow(c)).sum();
                (inflow(node) - voltages[node] * shunt[node] - out).norm() / scale
            })
            .fold(0.0, f64::max)
    }

    /// Per-node shunt admittance for `phase`, given which loads are on.
    pub(crate) fn shunt_for_phase(
        &self,
        loads: &[(&LoadSpec, bool)],
        phase: Phase,
        nominal_voltage: f64,
    ) -> Result<Vec<Complex64>, GridError> {
        let mut shunt = vec![Complex64::new(0.0, 0.0); self.node_count()];
        for (load, on) in loads {
            let node = self
                .node_index(&load.supply_point)
                .ok_or_else(|| GridError::UnknownNode(load.supply_point.clone()))?;
            if *on && load.phases.contains(&phase) {
                shunt[node] += Complex64::new(1.0 / load.resistance_per_phase(nominal_voltage), 0.0);
            }
        }
        Ok(shunt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadCurrent {
    pub load_id: String,
    pub phase: Phase,
    pub current: Complex64,
}

/// Node voltages (volt rms) per phase and the current of every on-load.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasorSolution {
    pub node_ids: Vec<String>,
    /// `voltages[node][phase.index()]`.
    pub voltages: Vec<[Complex64; 3]>,
    pub load_currents: Vec<LoadCurrent>,
    /// Largest relative KCL mismatch over nodes and phases.
    pub kcl_residual: f64,
}

impl PhasorSolution {
    pub fn voltage(&self, node: &str, phase: Phase) -> Option<Complex64> {
        let i = self.node_ids.iter().position(|n| n == node)?;
        Some(self.voltages[i][phase.index()])
    }
}

/// Solves the fundamental-frequency network for a given on/off state of the
/// loads, each phase independently, with a balanced nominal source.
pub fn solve_state(
    model: &NetworkModel,
    loads: &[(&LoadSpec, bool)],
    nominal_voltage: f64,
) -> Result<PhasorSolution, GridError> {
    let n = model.node_count();
    let mut voltages = vec![[Complex64::new(0.0, 0.0); 3]; n];
    let mut kcl_residual: f64 = 0.0;
    for phase in Phase::ALL {
        let shunt = model.shunt_for_phase(loads, phase, nominal_voltage)?;
        let emf = Complex64::from_polar(nominal_voltage, phase.angle());
        let v = model.solve_phase(&shunt, emf, 1)?;
        kcl_residual = kcl_residual.max(model.kcl_residual(&v, &shunt, emf, 1));
        for (node, value) in v.into_iter().enumerate() {
            voltages[node][phase.index()] = value;
        }
    }
    let mut load_currents = Vec::new();
    for (load, on) in loads {
        if !on {
            continue;
        }
        let node = model.node_index(&load.supply_point).expect("checked by shunt_for_phase");
        let r = load.resistance_per_phase(nominal_voltage);
        for &phase in &load.phases {
            load_currents.push(LoadCurrent {
                load_id: load.id.clone(),
                phase,
                current: voltages[node][phase.index()] / r,
            });
        }
    }
    Ok(PhasorSolution {
        node_ids: model.node_ids().to_vec(),
        voltages,
        load_currents,
        kcl_residual,
    })
}
