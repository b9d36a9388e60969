//! Grid description and admittance matrix construction.
//!
//! A [`NetworkModel`] is a connected graph of buses joined by series
//! branches. Branch impedances are kept in ohms, exactly as listed by public
//! feeder datasets, and converted to per-unit admittances on the system-wide
//! base when the [`AdmittanceMatrix`] is assembled.

use std::collections::{HashSet, VecDeque};
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pq,
}

/// A node of the grid. Loads are consumption (positive means drawn from the grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(rename = "p_mw")]
    pub nominal_p_mw: f64,
    #[serde(rename = "q_mvar")]
    pub nominal_q_mvar: f64,
    #[serde(rename = "shunt_g_pu", default)]
    pub shunt_g: f64,
    #[serde(rename = "shunt_b_pu", default)]
    pub shunt_b: f64,
}

impl Bus {
    pub fn pq(id: usize, p_mw: f64, q_mvar: f64) -> Self {
        Bus {
            id,
            kind: BusKind::Pq,
            nominal_p_mw: p_mw,
            nominal_q_mvar: q_mvar,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }

    pub fn slack(id: usize) -> Self {
        Bus {
            id,
            kind: BusKind::Slack,
            nominal_p_mw: 0.0,
            nominal_q_mvar: 0.0,
            shunt_g: 0.0,
            shunt_b: 0.0,
        }
    }
}

/// Series line between two buses, impedance in ohms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r_ohm: f64,
    pub x_ohm: f64,
}

impl Branch {
    pub fn new(from: usize, to: usize, r_ohm: f64, x_ohm: f64) -> Self {
        Branch {
            from,
            to,
            r_ohm,
            x_ohm,
        }
    }

    /// Series admittance in per-unit for the given base impedance.
    pub fn admittance_pu(&self, z_base: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r_ohm / z_base, self.x_ohm / z_base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    #[serde(rename = "base_mva")]
    pub base_power_mva: f64,
    #[serde(rename = "base_kv")]
    pub base_voltage_kv: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl NetworkModel {
    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn z_base(&self) -> f64 {
        self.base_voltage_kv * self.base_voltage_kv / self.base_power_mva
    }

    /// Zero-based index of the slack bus.
    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .unwrap_or(0)
    }

    /// Checks every structural invariant. Buses must be listed in id order 1..n.
    pub fn validate(&self) -> Result<()> {
        if !(self.base_power_mva > 0.0 && self.base_voltage_kv > 0.0) {
            return Err(GridError::InvalidNetwork(format!(
                "bases must be positive (base_mva = {}, base_kv = {})",
                self.base_power_mva, self.base_voltage_kv
            )));
        }
        let n = self.buses.len();
        if n == 0 {
            return Err(GridError::InvalidNetwork("no buses".into()));
        }
        for (i, bus) in self.buses.iter().enumerate() {
            if bus.id != i + 1 {
                return Err(GridError::InvalidNetwork(format!(
                    "bus ids must be contiguous 1..{n}; found id {} at position {}",
                    bus.id,
                    i + 1
                )));
            }
            let values = [bus.nominal_p_mw, bus.nominal_q_mvar, bus.shunt_g, bus.shunt_b];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(GridError::InvalidNetwork(format!(
                    "bus {} has non-finite data",
                    bus.id
                )));
            }
            if bus.shunt_g < 0.0 {
                return Err(GridError::InvalidNetwork(format!(
                    "bus {} has negative shunt conductance",
                    bus.id
                )));
            }
        }
        let slacks: Vec<&Bus> = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .collect();
        if slacks.len() != 1 {
            return Err(GridError::InvalidNetwork(format!(
                "exactly one slack bus required, found {}",
                slacks.len()
            )));
        }
        if slacks[0].nominal_p_mw != 0.0 || slacks[0].nominal_q_mvar != 0.0 {
            return Err(GridError::InvalidNetwork(format!(
                "slack bus {} must carry no nominal load",
                slacks[0].id
            )));
        }

        let mut seen = HashSet::new();
        for br in &self.branches {
            if br.from == br.to {
                return Err(GridError::InvalidBranch {
                    from: br.from,
                    to: br.to,
                    reason: "self loop".into(),
                });
            }
            if br.from == 0 || br.to == 0 || br.from > n || br.to > n {
                return Err(GridError::InvalidBranch {
                    from: br.from,
                    to: br.to,
                    reason: format!("endpoint outside 1..{n}"),
                });
            }
            if !(br.r_ohm.is_finite() && br.x_ohm.is_finite()) || br.r_ohm <= 0.0 {
                return Err(GridError::InvalidBranch {
                    from: br.from,
                    to: br.to,
                    reason: format!(
                        "resistance must be positive (r = {}, x = {})",
                        br.r_ohm, br.x_ohm
                    ),
                });
            }
            let key = (br.from.min(br.to), br.from.max(br.to));
            if !seen.insert(key) {
                return Err(GridError::DuplicateBranch(key.0, key.1));
            }
        }

        // breadth-first reachability from bus 1
        let mut adjacency = vec![Vec::new(); n];
        for br in &self.branches {
            adjacency[br.from - 1].push(br.to - 1);
            adjacency[br.to - 1].push(br.from - 1);
        }
        let mut reached = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        reached[0] = true;
        while let Some(h) = queue.pop_front() {
            for &k in &adjacency[h] {
                if !reached[k] {
                    reached[k] = true;
                    queue.push_back(k);
                }
            }
        }
        if let Some(missing) = reached.iter().position(|r| !r) {
            return Err(GridError::Disconnected(missing + 1));
        }
        Ok(())
    }

    /// Nominal injections in per-unit (loads enter with a negative sign).
    pub fn nominal_injections_pu(&self) -> (Vec<f64>, Vec<f64>) {
        let s = self.base_power_mva;
        self.buses
            .iter()
            .map(|b| (-b.nominal_p_mw / s, -b.nominal_q_mvar / s))
            .unzip()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.buses.iter().map(|b| b.nominal_p_mw).sum()
    }

    pub fn total_load_mvar(&self) -> f64 {
        self.buses.iter().map(|b| b.nominal_q_mvar).sum()
    }
}

/// Complex bus admittance matrix stored as its real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl AdmittanceMatrix {
    pub fn zeros(n: usize) -> Self {
        AdmittanceMatrix {
            g: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.g.nrows()
    }

    pub fn from_complex(y: &DMatrix<Complex64>) -> Self {
        AdmittanceMatrix {
            g: y.map(|z| z.re),
            b: y.map(|z| z.im),
        }
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        self.g.zip_map(&self.b, Complex64::new)
    }

    pub fn get(&self, h: usize, k: usize) -> Complex64 {
        Complex64::new(self.g[(h, k)], self.b[(h, k)])
    }

    pub fn is_symmetric(&self) -> bool {
        self.g == self.g.transpose() && self.b == self.b.transpose()
    }
}

/// Assembles `Y` with `Y_hk = -y_hk` off the diagonal and
/// `Y_hh = y_h0 + sum_k y_hk` on it.
pub fn build_admittance(network: &NetworkModel) -> Result<AdmittanceMatrix> {
    network.validate()?;
    let n = network.bus_count();
    let z_base = network.z_base();
    let mut y = AdmittanceMatrix::zeros(n);
    for (h, bus) in network.buses.iter().enumerate() {
        y.g[(h, h)] = bus.shunt_g;
        y.b[(h, h)] = bus.shunt_b;
    }
    for br in &network.branches {
        let (h, k) = (br.from - 1, br.to - 1);
        let yl = br.admittance_pu(z_base);
        if !(yl.re > 0.0) {
            return Err(GridError::InvalidBranch {
                from: br.from,
                to: br.to,
                reason: format!("series conductance {} is not positive", yl.re),
            });
        }
        y.g[(h, k)] = -yl.re;
        y.g[(k, h)] = -yl.re;
        y.b[(h, k)] = -yl.im;
        y.b[(k, h)] = -yl.im;
        y.g[(h, h)] += yl.re;
        y.g[(k, k)] += yl.re;
        y.b[(h, h)] += yl.im;
        y.b[(k, k)] += yl.im;
    }
    Ok(y)
}

/// Reads a JSON network file and validates it.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GridError::io(path, e))?;
    parse_network(&text, path)
}

pub fn parse_network(text: &str, origin: &Path) -> Result<NetworkModel> {
    let model: NetworkModel = serde_json::from_str(text).map_err(|e| GridError::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    model.validate()?;
    Ok(model)
}

pub fn save_network(network: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(network)
        .map_err(|e| GridError::InvalidNetwork(e.to_string()))?;
    fs::write(path, text).map_err(|e| GridError::io(path, e))
}

/// Baran-Wu 33-bus radial feeder (10 MVA, 12.66 kV).
pub fn ieee33() -> NetworkModel {
    parse_network(
        include_str!("../data/ieee33.json"),
        Path::new("data/ieee33.json"),
    )
    .expect("bundled feeder data is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(y_line: Complex64) -> NetworkModel {
        // choose the base so that z_base = 1 and ohms equal per-unit
        let z = Complex64::new(1.0, 0.0) / y_line;
        NetworkModel {
            base_power_mva: 1.0,
            base_voltage_kv: 1.0,
            buses: vec![Bus::slack(1), Bus::pq(2, 0.1, 0.0)],
            branches: vec![Branch::new(1, 2, z.re, z.im)],
        }
    }

    fn assert_close(a: Complex64, b: Complex64) {
        assert!((a - b).norm() < 1e-12, "{a} != {b}");
    }

    #[test]
    fn two_bus_matrix() {
        let y = build_admittance(&two_bus(Complex64::new(1.0, -2.0))).unwrap();
        assert_close(y.get(0, 0), Complex64::new(1.0, -2.0));
        assert_close(y.get(1, 1), Complex64::new(1.0, -2.0));
        assert_close(y.get(0, 1), Complex64::new(-1.0, 2.0));
        assert_close(y.get(1, 0), Complex64::new(-1.0, 2.0));
    }

    #[test]
    fn shunt_only_touches_its_diagonal() {
        let mut net = two_bus(Complex64::new(1.0, -2.0));
        let base = build_admittance(&net).unwrap();
        net.buses[0].shunt_b = 0.1;
        let y = build_admittance(&net).unwrap();
        assert_close(y.get(0, 0), Complex64::new(1.0, -1.9));
        assert_eq!(y.get(0, 1), base.get(0, 1));
        assert_eq!(y.get(1, 0), base.get(1, 0));
        assert_eq!(y.get(1, 1), base.get(1, 1));
    }

    #[test]
    fn ieee33_structure() {
        let net = ieee33();
        assert_eq!(net.bus_count(), 33);
        assert_eq!(net.branches.len(), 32);
        assert!((net.total_load_mw() - 3.715).abs() < 1e-9);
        assert!((net.total_load_mvar() - 2.3).abs() < 1e-9);
        let y = build_admittance(&net).unwrap();
        assert!(y.is_symmetric());
        // nonzero pattern counted independently against the branch list
        let mut pairs = 0;
        for h in 0..33 {
            for k in (h + 1)..33 {
                if y.get(h, k).norm() != 0.0 {
                    pairs += 1;
                    let listed = net.branches.iter().any(|b| {
                        (b.from - 1 == h && b.to - 1 == k) || (b.from - 1 == k && b.to - 1 == h)
                    });
                    assert!(listed, "unexpected nonzero at ({h}, {k})");
                }
            }
        }
        assert_eq!(pairs, 32);
        for h in 0..33 {
            assert!(y.g.row(h).sum().abs() < 1e-12);
            assert!(y.b.row(h).sum().abs() < 1e-12);
            for k in 0..33 {
                if h != k {
                    assert!(y.g[(h, k)] <= 0.0);
                }
            }
        }
    }

    #[test]
    fn rejects_duplicate_reversed_branch() {
        let mut net = two_bus(Complex64::new(1.0, -2.0));
        net.branches.push(Branch::new(2, 1, 1.0, 1.0));
        assert!(matches!(
            net.validate(),
            Err(GridError::DuplicateBranch(1, 2))
        ));
    }

    #[test]
    fn rejects_disconnected() {
        let mut net = two_bus(Complex64::new(1.0, -2.0));
        net.buses.push(Bus::pq(3, 0.0, 0.0));
        assert!(matches!(
            build_admittance(&net),
            Err(GridError::Disconnected(3))
        ));
    }

    #[test]
    fn rejects_non_positive_resistance() {
        let mut net = two_bus(Complex64::new(1.0, -2.0));
        net.branches[0].r_ohm = 0.0;
        net.branches[0].x_ohm = 0.0;
        assert!(matches!(
            build_admittance(&net),
            Err(GridError::InvalidBranch { .. })
        ));
    }

    #[test]
    fn rejects_second_slack() {
        let mut net = two_bus(Complex64::new(1.0, -2.0));
        net.buses[1] = Bus::slack(2);
        assert!(net.validate().is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_network("{\n  \"base_mva\": 10,\n  oops\n}", Path::new("x.json"))
            .unwrap_err();
        match err {
            GridError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn loads_two_bus_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        std::fs::write(
            &path,
            r#"{"base_mva": 1.0, "base_kv": 1.0,
                "buses": [
                  {"id": 1, "kind": "slack", "p_mw": 0.0, "q_mvar": 0.0, "shunt_g_pu": 0.0, "shunt_b_pu": 0.0},
                  {"id": 2, "kind": "pq", "p_mw": 0.1, "q_mvar": 0.05, "shunt_g_pu": 0.0, "shunt_b_pu": 0.0}
                ],
                "branches": [{"from": 1, "to": 2, "r_ohm": 0.2, "x_ohm": 0.4}]}"#,
        )
        .unwrap();
        let net = load_network(&path).unwrap();
        assert_eq!(net.bus_count(), 2);
        assert_eq!(net.slack_index(), 0);
    }
}
