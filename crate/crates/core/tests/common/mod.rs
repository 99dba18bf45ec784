#![allow(dead_code)]

use equiflow::demand::{Demand, DemandSet, Region};
use equiflow::netmodel::{Arc, ArcKind, Layer, Network, Node, NodeId};

fn node(id: NodeId, layer: Layer, x: f64) -> Node {
    Node { id, layer, x, y: 0.0, region: (layer == Layer::Origin).then_some(0) }
}

/// One demand of 1 user/min choosing between a free 30-minute walk and a
/// 10-minute AMoD ride priced 3 at boarding. Vehicles return over 4 -> 3.
pub fn two_route(budget: f64) -> (Network, DemandSet) {
    let net = Network::new(
        f64::INFINITY,
        vec![
            node(0, Layer::Origin, 0.0),
            node(1, Layer::Walk, 0.0),
            node(2, Layer::Walk, 1000.0),
            node(3, Layer::Road, 0.0),
            node(4, Layer::Road, 1000.0),
            node(5, Layer::Destination, 1000.0),
        ],
        vec![
            Arc::new(0, 1, ArcKind::Switch, 0.0, 0.0),
            Arc::new(1, 2, ArcKind::Walk, 30.0, 0.0),
            Arc::new(2, 5, ArcKind::Switch, 0.0, 0.0),
            Arc::new(0, 3, ArcKind::Switch, 0.0, 3.0),
            Arc::new(3, 4, ArcKind::Road, 10.0, 0.0),
            Arc::new(4, 5, ArcKind::Switch, 0.0, 0.0),
            Arc::new(4, 3, ArcKind::Road, 10.0, 0.0),
        ],
    );
    let dem = DemandSet {
        regions: vec![Region { id: 0, population: 1.0, budget }],
        demands: vec![Demand { id: 0, origin: 0, destination: 5, rate: 1.0, region: 0, bike_capable: true }],
        operating_window_min: 1440.0,
    };
    (net, dem)
}
