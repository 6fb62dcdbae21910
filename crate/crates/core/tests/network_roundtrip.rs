use proptest::prelude::*;
use roadfl::network::{load_network, Link, RoadNetwork, DEFAULT_JAM_SPACING};

/// A random weakly connected network: link `i > 0` always has some earlier
/// link as an in-link, plus a few random extra connections.
fn arb_network() -> impl Strategy<Value = RoadNetwork> {
    (2usize..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((10.0f64..900.0, 1u32..4, 20.0f64..120.0), n),
                prop::collection::vec(0usize..1000, n),
                prop::collection::vec(prop::collection::vec(0usize..n, 0..3), n),
                prop::collection::vec(prop::bool::ANY, n),
                prop::collection::vec(prop::option::of(5.0f64..9.0), n),
            )
        })
        .prop_map(|(n, dims, parents, extra, cover, jam)| {
            let id = |i: usize| format!("L{i}");
            let links: Vec<Link> = (0..n)
                .map(|i| {
                    let mut in_links: std::collections::BTreeSet<String> =
                        extra[i].iter().filter(|&&j| j != i).map(|&j| id(j)).collect();
                    if i > 0 {
                        in_links.insert(id(parents[i] % i));
                    }
                    let (length, lanes, limit) = dims[i];
                    Link {
                        id: id(i),
                        length,
                        lanes,
                        speed_limit: limit,
                        in_links,
                        jam_spacing: jam[i].unwrap_or(DEFAULT_JAM_SPACING),
                    }
                })
                .collect();
            let mut covered: Vec<String> = (0..n).filter(|&i| cover[i]).map(id).collect();
            if covered.is_empty() {
                covered.push(id(0));
            }
            let refs: Vec<&str> = covered.iter().map(String::as_str).collect();
            RoadNetwork::new(links, &refs).expect("generated network is valid")
        })
}

proptest! {
    #[test]
    fn emit_then_load_is_identity(net in arb_network()) {
        let text = net.emit();
        let back = load_network(&text).unwrap();
        prop_assert_eq!(&back, &net);
        prop_assert_eq!(back.emit(), text);
    }
}

#[test]
fn reference_network_round_trips() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/reference.net"))
        .unwrap();
    let net = load_network(&text).unwrap();
    assert_eq!(net.len(), 6);
    assert_eq!(load_network(&net.emit()).unwrap(), net);
    let covered: Vec<&str> = net.coverage().map(|i| net.link(i).id.as_str()).collect();
    assert_eq!(covered, ["A", "B", "C", "D"]);
}
