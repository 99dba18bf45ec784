//! Regions and origin-destination commuting demand.
//!
//! Rates are held in users/min. Files carry daily user counts which are
//! divided by the operating window on load.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::netmodel::{Layer, Network, NodeId};
use crate::FORMAT_VERSION;

pub type RegionId = u32;

pub const DEFAULT_OPERATING_WINDOW_MIN: f64 = 1440.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub id: RegionId,
    pub population: f64,
    /// Upper bound on the mean cost of one trip of a demand from this region.
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demand {
    pub id: usize,
    pub origin: NodeId,
    pub destination: NodeId,
    /// users/min
    pub rate: f64,
    pub region: RegionId,
    pub bike_capable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandSet {
    pub regions: Vec<Region>,
    pub demands: Vec<Demand>,
    pub operating_window_min: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum DemandError {
    #[error("demand schema error: {0}")]
    Schema(String),
    #[error("region {region}: demand {origin}->{destination} (bike_capable={bike_capable}) listed twice")]
    Partition {
        region: RegionId,
        origin: NodeId,
        destination: NodeId,
        bike_capable: bool,
    },
    #[error("demand {demand}: {reason}")]
    Reference { demand: usize, reason: String },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandFile {
    #[serde(default)]
    format: Option<String>,
    operating_window_min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    total_population: Option<f64>,
    regions: Vec<Region>,
    demands: Vec<DemandRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DemandRecord {
    origin: NodeId,
    destination: NodeId,
    daily_users: f64,
    region: RegionId,
    bike_capable: bool,
}

/// Parses a demand document. Zero-rate entries are dropped and demand ids are
/// assigned in file order over the surviving entries.
pub fn load_demand(text: &str) -> Result<DemandSet, DemandError> {
    let file: DemandFile =
        serde_json::from_str(text).map_err(|e| DemandError::Schema(e.to_string()))?;
    if let Some(fmt) = &file.format {
        if fmt != FORMAT_VERSION {
            return Err(DemandError::Schema(format!("unsupported format {fmt:?}")));
        }
    }
    let window = file.operating_window_min;
    if !(window > 0.0 && window.is_finite()) {
        return Err(DemandError::Schema("operating_window_min must be > 0".into()));
    }
    let mut ids = HashSet::new();
    for r in &file.regions {
        if !ids.insert(r.id) {
            return Err(DemandError::Schema(format!("duplicate region {}", r.id)));
        }
        if !(r.population >= 0.0 && r.population.is_finite()) {
            return Err(DemandError::Schema(format!("region {}: population must be >= 0", r.id)));
        }
        if !(r.budget >= 0.0) {
            return Err(DemandError::Schema(format!("region {}: budget must be >= 0", r.id)));
        }
    }
    if let Some(declared) = file.total_population {
        let total: f64 = file.regions.iter().map(|r| r.population).sum();
        if (total - declared).abs() > 1e-9 * declared.abs().max(1.0) {
            return Err(DemandError::Schema(format!(
                "regional populations sum to {total}, declared total_population {declared}"
            )));
        }
    }

    let mut seen = HashSet::new();
    let mut demands = Vec::new();
    for rec in file.demands {
        if !(rec.daily_users >= 0.0 && rec.daily_users.is_finite()) {
            return Err(DemandError::Schema("daily_users must be >= 0".into()));
        }
        if !ids.contains(&rec.region) {
            return Err(DemandError::Schema(format!("unknown region {}", rec.region)));
        }
        if !seen.insert((rec.region, rec.origin, rec.destination, rec.bike_capable)) {
            return Err(DemandError::Partition {
                region: rec.region,
                origin: rec.origin,
                destination: rec.destination,
                bike_capable: rec.bike_capable,
            });
        }
        let rate = rec.daily_users / window;
        if rate > 0.0 {
            demands.push(Demand {
                id: demands.len(),
                origin: rec.origin,
                destination: rec.destination,
                rate,
                region: rec.region,
                bike_capable: rec.bike_capable,
            });
        }
    }
    Ok(DemandSet {
        regions: file.regions,
        demands,
        operating_window_min: window,
    })
}

impl DemandSet {
    pub fn to_json(&self) -> String {
        let file = DemandFile {
            format: Some(FORMAT_VERSION.to_string()),
            operating_window_min: self.operating_window_min,
            total_population: Some(self.total_population()),
            regions: self.regions.clone(),
            demands: self
                .demands
                .iter()
                .map(|d| DemandRecord {
                    origin: d.origin,
                    destination: d.destination,
                    daily_users: d.rate * self.operating_window_min,
                    region: d.region,
                    bike_capable: d.bike_capable,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("demand serializes")
    }

    pub fn total_population(&self) -> f64 {
        self.regions.iter().map(|r| r.population).sum()
    }

    pub fn total_rate(&self) -> f64 {
        self.demands.iter().map(|d| d.rate).sum()
    }

    pub fn region(&self, id: RegionId) -> Option<&Region> {
        self.regions.iter().find(|r| r.id == id)
    }

    /// Demand rate per region, summed over both bike classes.
    pub fn region_rates(&self) -> BTreeMap<RegionId, f64> {
        let mut out = BTreeMap::new();
        for d in &self.demands {
            *out.entry(d.region).or_insert(0.0) += d.rate;
        }
        out
    }

    /// Checks that every demand references an origin node of its own region
    /// and an existing destination node.
    pub fn check_against(&self, net: &Network) -> Result<(), DemandError> {
        for d in &self.demands {
            let fail = |reason: String| DemandError::Reference { demand: d.id, reason };
            match net.node(d.origin) {
                Some(n) if n.layer == Layer::Origin => {
                    if n.region != Some(d.region) {
                        return Err(fail(format!(
                            "origin {} lies in region {:?}, demand says {}",
                            d.origin, n.region, d.region
                        )));
                    }
                }
                _ => return Err(fail(format!("{} is not an origin node", d.origin))),
            }
            match net.node(d.destination) {
                Some(n) if n.layer == Layer::Destination => {}
                _ => return Err(fail(format!("{} is not a destination node", d.destination))),
            }
            if self.region(d.region).is_none() {
                return Err(fail(format!("unknown region {}", d.region)));
            }
        }
        Ok(())
    }
}

/// Splits every bike-capable demand into a bike-capable part and a
/// bike-incapable part using the region's incapable share. Demands that are
/// already bike-incapable pass through unchanged. Ids are reassigned.
pub fn split_by_bike_share(set: &DemandSet, share_incapable: &BTreeMap<RegionId, f64>) -> DemandSet {
    let mut demands = Vec::with_capacity(set.demands.len() * 2);
    let mut push = |d: &Demand, rate: f64, bike_capable: bool| {
        if rate > 0.0 {
            demands.push(Demand {
                id: demands.len(),
                rate,
                bike_capable,
                ..d.clone()
            });
        }
    };
    for d in &set.demands {
        if !d.bike_capable {
            push(d, d.rate, false);
            continue;
        }
        let share = share_incapable.get(&d.region).copied().unwrap_or(0.0).clamp(0.0, 1.0);
        let incapable = share * d.rate;
        push(d, d.rate - incapable, true);
        push(d, incapable, false);
    }
    DemandSet {
        regions: set.regions.clone(),
        demands,
        operating_window_min: set.operating_window_min,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(pop: &str, daily: f64) -> String {
        format!(
            r#"{{"operating_window_min": 1440, {pop}
               "regions": [{{"id": 1, "population": 3, "budget": 5}}, {{"id": 2, "population": 7, "budget": 5}}],
               "demands": [{{"origin": 10, "destination": 20, "daily_users": {daily}, "region": 1, "bike_capable": true}}]}}"#
        )
    }

    #[test]
    fn daily_counts_become_rates() {
        let set = load_demand(&doc("", 1440.0)).unwrap();
        assert_eq!(set.demands[0].rate, 1.0);
    }

    #[test]
    fn aggregate_daily_rate() {
        let set = load_demand(&doc("", 445851.0)).unwrap();
        assert!((set.total_rate() - 309.6187).abs() < 1e-3);
    }

    #[test]
    fn declared_population_must_match() {
        assert!(load_demand(&doc(r#""total_population": 10,"#, 1.0)).is_ok());
        assert!(matches!(
            load_demand(&doc(r#""total_population": 11,"#, 1.0)),
            Err(DemandError::Schema(_))
        ));
    }

    #[test]
    fn zero_rate_demands_are_dropped() {
        assert!(load_demand(&doc("", 0.0)).unwrap().demands.is_empty());
    }

    #[test]
    fn duplicate_class_entry_is_partition_error() {
        let text = r#"{"operating_window_min": 1440,
            "regions": [{"id": 1, "population": 3, "budget": 5}],
            "demands": [
              {"origin": 10, "destination": 20, "daily_users": 5, "region": 1, "bike_capable": false},
              {"origin": 10, "destination": 20, "daily_users": 5, "region": 1, "bike_capable": true},
              {"origin": 10, "destination": 20, "daily_users": 7, "region": 1, "bike_capable": false}]}"#;
        assert!(matches!(load_demand(text), Err(DemandError::Partition { .. })));
    }

    #[test]
    fn malformed_documents() {
        assert!(load_demand("{").is_err());
        let unknown = doc("\"bogus\": 1,", 1.0);
        assert!(matches!(load_demand(&unknown), Err(DemandError::Schema(_))));
    }

    fn single(rate: f64) -> DemandSet {
        DemandSet {
            regions: vec![Region { id: 0, population: 1.0, budget: 1.0 }],
            demands: vec![Demand {
                id: 0,
                origin: 1,
                destination: 2,
                rate,
                region: 0,
                bike_capable: true,
            }],
            operating_window_min: 1440.0,
        }
    }

    #[test]
    fn split_arithmetic() {
        let out = split_by_bike_share(&single(2.0), &BTreeMap::from([(0, 0.25)]));
        let rates: Vec<(f64, bool)> = out.demands.iter().map(|d| (d.rate, d.bike_capable)).collect();
        assert_eq!(rates, vec![(1.5, true), (0.5, false)]);

        let none = split_by_bike_share(&single(2.0), &BTreeMap::from([(0, 0.0)]));
        assert_eq!(none, single(2.0));

        let all = split_by_bike_share(&single(2.0), &BTreeMap::from([(0, 1.0)]));
        assert_eq!(all.demands.len(), 1);
        assert!(!all.demands[0].bike_capable);
        assert_eq!(all.demands[0].rate, 2.0);
    }

    proptest! {
        #[test]
        fn split_conserves_total_rate(rates in prop::collection::vec(1e-6f64..1e3, 1..20), share in 0.0f64..=1.0) {
            let mut set = single(1.0);
            set.demands = rates.iter().enumerate().map(|(i, &r)| Demand {
                id: i, origin: i as u64, destination: 1000, rate: r, region: 0, bike_capable: i % 3 != 0,
            }).collect();
            let out = split_by_bike_share(&set, &BTreeMap::from([(0, share)]));
            let before = set.total_rate();
            prop_assert!((out.total_rate() - before).abs() <= 1e-12 * before);
        }
    }
}
