//! Road graph, lane capacities and the roadside-unit coverage set.
//!
//! Networks are authored as a small line-oriented document:
//!
//! ```text
//! # comment
//! link A length=450 lanes=1 limit=80 in=D
//! link B length=400 lanes=1 limit=60 in=A
//! coverage A,B
//! ```
//!
//! An optional `jam=<m>` key overrides the default jam spacing of a link.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use thiserror::Error;

/// Jam spacing used for capacity when a link does not declare one (m/vehicle).
pub const DEFAULT_JAM_SPACING: f64 = 7.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("line {line}: malformed record `{record}`: {reason}")]
    Malformed {
        line: usize,
        record: String,
        reason: String,
    },
    #[error("referential integrity: {0}")]
    Referential(String),
    #[error("link `{link}`: {reason}")]
    Domain { link: String, reason: String },
    #[error("unknown link `{0}`")]
    UnknownLink(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub id: String,
    /// Meters.
    pub length: f64,
    pub lanes: u32,
    /// km/h.
    pub speed_limit: f64,
    pub in_links: BTreeSet<String>,
    /// Meters per vehicle at jam.
    pub jam_spacing: f64,
}

impl Link {
    /// `floor(lanes * length / jam_spacing)`.
    pub fn capacity(&self) -> usize {
        (self.lanes as f64 * self.length / self.jam_spacing).floor() as usize
    }

    /// Speed limit in m/s.
    pub fn limit_mps(&self) -> f64 {
        self.speed_limit / 3.6
    }

    /// Jam density in veh/km/lane.
    pub fn jam_density(&self) -> f64 {
        1000.0 / self.jam_spacing
    }
}

/// Links are stored in declaration order; simulation code addresses them by index.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadNetwork {
    links: Vec<Link>,
    index: HashMap<String, usize>,
    out_links: Vec<Vec<usize>>,
    coverage: BTreeSet<usize>,
}

impl RoadNetwork {
    /// Builds and validates a network from already-constructed links.
    pub fn new(links: Vec<Link>, coverage: &[&str]) -> Result<Self, NetworkError> {
        Self::build(links, coverage.iter().map(|s| s.to_string()).collect())
    }

    fn build(links: Vec<Link>, coverage: Vec<String>) -> Result<Self, NetworkError> {
        if links.is_empty() {
            return Err(NetworkError::Referential(
                "network has no links, coverage set cannot be satisfied".into(),
            ));
        }
        let mut index = HashMap::with_capacity(links.len());
        for (i, link) in links.iter().enumerate() {
            validate_link(link)?;
            if index.insert(link.id.clone(), i).is_some() {
                return Err(NetworkError::Referential(format!(
                    "duplicate link id `{}`",
                    link.id
                )));
            }
        }
        let mut out_links = vec![Vec::new(); links.len()];
        for (i, link) in links.iter().enumerate() {
            for upstream in &link.in_links {
                let &u = index.get(upstream).ok_or_else(|| {
                    NetworkError::Referential(format!(
                        "link `{}` lists unknown in-link `{upstream}`",
                        link.id
                    ))
                })?;
                out_links[u].push(i);
            }
        }
        if coverage.is_empty() {
            return Err(NetworkError::Referential("coverage set is empty".into()));
        }
        let mut cov = BTreeSet::new();
        for id in &coverage {
            let &i = index.get(id).ok_or_else(|| {
                NetworkError::Referential(format!("coverage lists unknown link `{id}`"))
            })?;
            cov.insert(i);
        }
        let net = RoadNetwork {
            links,
            index,
            out_links,
            coverage: cov,
        };
        net.check_connected()?;
        Ok(net)
    }

    fn check_connected(&self) -> Result<(), NetworkError> {
        let n = self.links.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            let ups = self.links[i].in_links.iter().map(|id| self.index[id]);
            for j in ups.chain(self.out_links[i].iter().copied()) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(NetworkError::Referential(format!(
                "link `{}` is disconnected from `{}`",
                self.links[i].id, self.links[0].id
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, idx: usize) -> &Link {
        &self.links[idx]
    }

    pub fn index_of(&self, id: &str) -> Result<usize, NetworkError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| NetworkError::UnknownLink(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<&Link, NetworkError> {
        Ok(&self.links[self.index_of(id)?])
    }

    /// Declared upstream links of `id`; empty for source links.
    pub fn in_links(&self, id: &str) -> Result<&BTreeSet<String>, NetworkError> {
        Ok(&self.get(id)?.in_links)
    }

    /// Upstream link indices of `idx`.
    pub fn in_link_indices(&self, idx: usize) -> impl Iterator<Item = usize> + '_ {
        self.links[idx].in_links.iter().map(|id| self.index[id])
    }

    /// Downstream link indices of `idx`, derived from the in-link declarations.
    pub fn out_link_indices(&self, idx: usize) -> &[usize] {
        &self.out_links[idx]
    }

    pub fn coverage_contains(&self, id: &str) -> Result<bool, NetworkError> {
        Ok(self.coverage.contains(&self.index_of(id)?))
    }

    pub fn covers(&self, idx: usize) -> bool {
        self.coverage.contains(&idx)
    }

    pub fn coverage(&self) -> impl Iterator<Item = usize> + '_ {
        self.coverage.iter().copied()
    }

    /// Largest jam density over all links, veh/km/lane.
    pub fn max_jam_density(&self) -> f64 {
        self.links
            .iter()
            .map(Link::jam_density)
            .fold(0.0, f64::max)
    }

    /// Serializes back to the document format accepted by [`load_network`].
    pub fn emit(&self) -> String {
        let mut out = String::new();
        for link in &self.links {
            let _ = write!(
                out,
                "link {} length={} lanes={} limit={} in={}",
                link.id,
                link.length,
                link.lanes,
                link.speed_limit,
                link.in_links.iter().cloned().collect::<Vec<_>>().join(",")
            );
            if link.jam_spacing != DEFAULT_JAM_SPACING {
                let _ = write!(out, " jam={}", link.jam_spacing);
            }
            out.push('\n');
        }
        let cov: Vec<&str> = self
            .coverage
            .iter()
            .map(|&i| self.links[i].id.as_str())
            .collect();
        let _ = writeln!(out, "coverage {}", cov.join(","));
        out
    }
}

impl fmt::Display for RoadNetwork {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.emit())
    }
}

fn validate_link(link: &Link) -> Result<(), NetworkError> {
    let domain = |reason: &str| NetworkError::Domain {
        link: link.id.clone(),
        reason: reason.to_string(),
    };
    if !(link.length > 0.0 && link.length.is_finite()) {
        return Err(domain("length must be positive"));
    }
    if link.lanes < 1 {
        return Err(domain("lanes must be at least 1"));
    }
    if !(link.speed_limit > 0.0 && link.speed_limit.is_finite()) {
        return Err(domain("speed limit must be positive"));
    }
    if !(link.jam_spacing > 0.0 && link.jam_spacing.is_finite()) {
        return Err(domain("jam spacing must be positive"));
    }
    if link.capacity() < 1 {
        return Err(domain("capacity must hold at least one vehicle"));
    }
    Ok(())
}

fn split_ids(list: &str) -> Vec<String> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Parses and validates a network document.
pub fn load_network(source: &str) -> Result<RoadNetwork, NetworkError> {
    let mut links = Vec::new();
    let mut coverage: Option<Vec<String>> = None;

    for (n, raw) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: String| NetworkError::Malformed {
            line: line_no,
            record: line.to_string(),
            reason,
        };
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("link") => {
                let id = tokens
                    .next()
                    .ok_or_else(|| malformed("missing link id".into()))?;
                if id.contains('=') || id.contains(',') {
                    return Err(malformed(format!("invalid link id `{id}`")));
                }
                let mut length = None;
                let mut lanes = None;
                let mut limit = None;
                let mut in_links = None;
                let mut jam = None;
                for tok in tokens {
                    let (key, value) = tok
                        .split_once('=')
                        .ok_or_else(|| malformed(format!("expected key=value, got `{tok}`")))?;
                    let num = |v: &str| {
                        v.parse::<f64>()
                            .map_err(|_| malformed(format!("`{key}` is not a number: `{v}`")))
                    };
                    match key {
                        "length" => length = Some(num(value)?),
                        "limit" => limit = Some(num(value)?),
                        "jam" => jam = Some(num(value)?),
                        "lanes" => {
                            let l = value.parse::<i64>().map_err(|_| {
                                malformed(format!("`lanes` is not an integer: `{value}`"))
                            })?;
                            if l < 1 {
                                return Err(NetworkError::Domain {
                                    link: id.to_string(),
                                    reason: "lanes must be at least 1".into(),
                                });
                            }
                            lanes = Some(l as u32);
                        }
                        "in" => in_links = Some(split_ids(value)),
                        other => return Err(malformed(format!("unknown key `{other}`"))),
                    }
                }
                let missing = |k: &str| malformed(format!("missing `{k}`"));
                links.push(Link {
                    id: id.to_string(),
                    length: length.ok_or_else(|| missing("length"))?,
                    lanes: lanes.ok_or_else(|| missing("lanes"))?,
                    speed_limit: limit.ok_or_else(|| missing("limit"))?,
                    in_links: in_links.unwrap_or_default().into_iter().collect(),
                    jam_spacing: jam.unwrap_or(DEFAULT_JAM_SPACING),
                });
            }
            Some("coverage") => {
                if coverage.is_some() {
                    return Err(malformed("duplicate coverage record".into()));
                }
                let rest: Vec<&str> = tokens.collect();
                coverage = Some(split_ids(&rest.join("")));
            }
            Some(other) => return Err(malformed(format!("unknown record type `{other}`"))),
            None => unreachable!("blank lines are skipped"),
        }
    }

    RoadNetwork::build(links, coverage.unwrap_or_default())
}
