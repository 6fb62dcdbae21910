use std::collections::VecDeque;

use super::AdversaryError;
use crate::network::RoadNetwork;
use crate::traffic::{Route, RouteKind};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackRoute {
    pub route: Route,
    /// No covered cycle exists, so the attacker shuttles instead of looping.
    pub fallback: bool,
}

/// Shortest cycle through `start` that stays on covered links; when there is
/// none, the longest simple covered path from `start`, driven as a shuttle.
pub fn attacker_route_policy(net: &RoadNetwork, start: usize) -> Result<AttackRoute, AdversaryError> {
    if start >= net.len() || !net.covers(start) {
        return Err(AdversaryError::Config(format!(
            "attacker start link {} is not covered",
            net.links().get(start).map_or("?", |l| l.id.as_str())
        )));
    }
    if let Some(cycle) = shortest_covered_cycle(net, start) {
        return Ok(AttackRoute { route: Route { links: cycle, kind: RouteKind::Loop }, fallback: false });
    }
    let path = longest_covered_path(net, start);
    Ok(AttackRoute { route: Route { links: path, kind: RouteKind::Shuttle }, fallback: true })
}

fn shortest_covered_cycle(net: &RoadNetwork, start: usize) -> Option<Vec<usize>> {
    let mut parent: Vec<Option<usize>> = vec![None; net.len()];
    let mut seen = vec![false; net.len()];
    let mut queue = VecDeque::new();
    seen[start] = true;
    queue.push_back(start);
    while let Some(u) = queue.pop_front() {
        for &w in net.out_link_indices(u) {
            if !net.covers(w) {
                continue;
            }
            if w == start {
                let mut cycle = vec![u];
                let mut cur = u;
                while let Some(p) = parent[cur] {
                    cycle.push(p);
                    cur = p;
                }
                cycle.reverse();
                return Some(cycle);
            }
            if !seen[w] {
                seen[w] = true;
                parent[w] = Some(u);
                queue.push_back(w);
            }
        }
    }
    None
}

fn longest_covered_path(net: &RoadNetwork, start: usize) -> Vec<usize> {
    fn extend(net: &RoadNetwork, path: &mut Vec<usize>, best: &mut Vec<usize>) {
        if path.len() > best.len() {
            *best = path.clone();
        }
        let last = *path.last().expect("path starts nonempty");
        for &w in net.out_link_indices(last) {
            if net.covers(w) && !path.contains(&w) {
                path.push(w);
                extend(net, path, best);
                path.pop();
            }
        }
    }
    let mut best = vec![start];
    extend(net, &mut vec![start], &mut best);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::load_network;

    fn ids(net: &RoadNetwork, r: &Route) -> Vec<String> {
        r.links.iter().map(|&i| net.link(i).id.clone()).collect()
    }

    #[test]
    fn two_link_loop() {
        let net = load_network(
            "link A length=100 lanes=1 limit=50 in=B\n\
             link B length=100 lanes=1 limit=50 in=A\n\
             coverage A,B\n",
        )
        .unwrap();
        let r = attacker_route_policy(&net, 0).unwrap();
        assert!(!r.fallback);
        assert_eq!(r.route.kind, RouteKind::Loop);
        assert_eq!(ids(&net, &r.route), ["A", "B"]);
        assert!(r.route.check(&net).is_ok());
    }

    #[test]
    fn dead_end_coverage_shuttles() {
        let net = load_network(
            "link A length=100 lanes=1 limit=50 in=\n\
             link B length=100 lanes=1 limit=50 in=A\n\
             coverage B\n",
        )
        .unwrap();
        let r = attacker_route_policy(&net, 1).unwrap();
        assert!(r.fallback);
        assert_eq!(r.route.kind, RouteKind::Shuttle);
        assert_eq!(ids(&net, &r.route), ["B"]);
        assert!(attacker_route_policy(&net, 0).is_err());
    }

    #[test]
    fn picks_shortest_cycle_inside_coverage() {
        // A-B-C-D-A is covered; the shortcut B-E-C leaves coverage.
        let net = load_network(
            "link A length=450 lanes=1 limit=80 in=D\n\
             link B length=400 lanes=1 limit=60 in=A\n\
             link C length=350 lanes=1 limit=50 in=B,E\n\
             link D length=450 lanes=1 limit=80 in=C\n\
             link E length=300 lanes=1 limit=40 in=B\n\
             link F length=300 lanes=1 limit=80 in=D\n\
             coverage A,B,C,D\n",
        )
        .unwrap();
        let r = attacker_route_policy(&net, 0).unwrap();
        assert_eq!(ids(&net, &r.route), ["A", "B", "C", "D"]);
        let from_c = attacker_route_policy(&net, 2).unwrap();
        assert_eq!(ids(&net, &from_c.route), ["C", "D", "A", "B"]);
        assert!(from_c.route.links.iter().all(|&l| net.covers(l)));
    }
}
