//! Line-oriented scenario files.
//!
//! ```text
//! # comment
//! param <key> <value>
//! piconet P<n> master <id> slaves <id,...>   (`-` for none)
//! flow <src> <dst> start <ms> stop <ms> rate <pps> size <bytes>
//! migrate <node> to P<n> at <ms>
//! leave <node> from P<n> at <ms>
//! static <node> dest <id> via <id> at <ms>
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::baseband::MAX_PAYLOAD;
use crate::simkernel::{Engine, LinkModel, SimConfig, StaticRoute, TrafficFlow};
use crate::topology::{NodeId, Piconet, PiconetId, Scatternet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}: syntax error: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    Semantic { line: usize, msg: String },
}

impl ScenarioError {
    pub fn line(&self) -> usize {
        match self {
            ScenarioError::Syntax { line, .. } | ScenarioError::Semantic { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Flow(TrafficFlow),
    Migrate {
        node: NodeId,
        pid: PiconetId,
        at_ms: u64,
    },
    Leave {
        node: NodeId,
        pid: PiconetId,
        at_ms: u64,
    },
    Static(StaticRoute, u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SimConfig,
    pub piconets: Vec<Piconet>,
    /// Everything that is not a piconet, in file order.
    pub directives: Vec<Directive>,
}

pub const PAPER_SCATTERNET: &str = "\
# 20 nodes in three piconets. Node 1 joins P3 and P2 as a slave at 500 ms,
# which connects the scatternet; a flow from 13 to 18 starts at the same time.
param num_nodes 20
param area 500x400
param queue_length 50
param routing AODV
param basic_rate 5MB
param data_rate 10MB
piconet P1 master 1 slaves 2,3,4,5,6,7,8
piconet P2 master 12 slaves 13,14,15,16
piconet P3 master 17 slaves 9,10,11,18,19,20
migrate 1 to P3 at 500
migrate 1 to P2 at 500
flow 13 18 start 500 stop 1900 rate 20 size 128
";

pub const FIG3_LOOP: &str = "\
# Three routers in a cycle, network 10 behind router 3, host 4 behind router 1.
# The static tables send traffic for 10 around 1 -> 2 -> 3 -> 1 forever.
piconet P1 master 1 slaves 2,4
piconet P2 master 2 slaves 3
piconet P3 master 3 slaves 1,10
flow 4 10 start 0 stop 1000 rate 20 size 64
static 4 dest 10 via 1 at 0
static 1 dest 10 via 2 at 0
static 2 dest 10 via 3 at 0
static 3 dest 10 via 1 at 0
";

pub const BUILTINS: &[(&str, &str)] = &[
    ("paper-scatternet", PAPER_SCATTERNET),
    ("fig3-loop", FIG3_LOOP),
];

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

fn syntax(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn semantic(line: usize, msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Semantic {
        line,
        msg: msg.into(),
    }
}

fn num<T: FromStr>(line: usize, what: &str, s: &str) -> Result<T, ScenarioError> {
    s.parse()
        .map_err(|_| syntax(line, format!("bad {what} `{s}`")))
}

fn node(line: usize, s: &str) -> Result<NodeId, ScenarioError> {
    num(line, "node id", s).map(NodeId)
}

fn pid(line: usize, s: &str) -> Result<PiconetId, ScenarioError> {
    s.strip_prefix('P')
        .and_then(|n| n.parse().ok())
        .map(PiconetId)
        .ok_or_else(|| syntax(line, format!("bad piconet id `{s}`")))
}

/// Checks `words` against a pattern where `_` marks a value slot and
/// returns the values.
fn shape<'a>(
    line: usize,
    words: &[&'a str],
    pattern: &[&str],
) -> Result<Vec<&'a str>, ScenarioError> {
    if words.len() != pattern.len() {
        return Err(syntax(line, format!("expected `{}`", pattern.join(" "))));
    }
    let mut vals = Vec::new();
    for (w, p) in words.iter().zip(pattern) {
        if *p == "_" {
            vals.push(*w);
        } else if w != p {
            return Err(syntax(line, format!("expected `{p}`, found `{w}`")));
        }
    }
    Ok(vals)
}

fn set_param(cfg: &mut SimConfig, line: usize, key: &str, v: &str) -> Result<(), ScenarioError> {
    let ms = |s: &str| num::<u64>(line, key, s).map(|x| x * 1000);
    match key {
        "num_nodes" => cfg.num_nodes = num(line, key, v)?,
        "area" => {
            let (w, h) = v
                .split_once('x')
                .ok_or_else(|| syntax(line, "area must look like 500x400"))?;
            cfg.area = (num(line, key, w)?, num(line, key, h)?);
        }
        "queue_length" => {
            cfg.queue_length = num(line, key, v)?;
            if cfg.queue_length == 0 {
                return Err(semantic(line, "queue_length must be positive"));
            }
        }
        "routing" => {
            if v != "AODV" {
                return Err(semantic(line, format!("unsupported routing `{v}`")));
            }
            cfg.routing = v.into();
        }
        "basic_rate" => cfg.basic_rate = v.into(),
        "data_rate" => cfg.data_rate = v.into(),
        "seed" => cfg.seed = num(line, key, v)?,
        "until" => cfg.until_ms = num(line, key, v)?,
        "route_lifetime" => cfg.aodv.route_lifetime = ms(v)?,
        "reverse_timeout" => cfg.aodv.reverse_timeout = ms(v)?,
        "active_timeout" => cfg.aodv.active_timeout = ms(v)?,
        "rreq_retries" => cfg.aodv.rreq_retries = num(line, key, v)?,
        "rreq_retry_interval" => cfg.aodv.rreq_retry_interval = ms(v)?,
        "buffer_capacity" => cfg.aodv.buffer_capacity = num(line, key, v)?,
        "hop_limit" => cfg.hop_limit = num(line, key, v)?,
        "bridge_window" => {
            cfg.bridge_window = num(line, key, v)?;
            if cfg.bridge_window < 2 || !cfg.bridge_window.is_multiple_of(2) {
                return Err(semantic(line, "bridge_window must be an even number >= 2"));
            }
        }
        "link_model" => {
            cfg.link_model = match v.split_once(':') {
                None if v == "baseband" => LinkModel::Baseband,
                Some(("ideal", us)) => LinkModel::Ideal {
                    latency: num(line, key, us)?,
                },
                _ => return Err(syntax(line, "link_model is `baseband` or `ideal:<us>`")),
            }
        }
        "jitter_us" => cfg.jitter = num(line, key, v)?,
        _ => return Err(semantic(line, format!("unknown param `{key}`"))),
    }
    Ok(())
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        let mut config = SimConfig::default();
        let mut num_nodes_line = None;
        let mut piconets: Vec<(usize, Piconet)> = Vec::new();
        let mut directives: Vec<(usize, Directive)> = Vec::new();
        let mut last_line = 0;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            last_line = line;
            let content = raw.split('#').next().unwrap_or("");
            let words: Vec<&str> = content.split_whitespace().collect();
            let Some(&head) = words.first() else {
                continue;
            };
            match head {
                "param" => {
                    let v = shape(line, &words, &["param", "_", "_"])?;
                    if v[0] == "num_nodes" {
                        num_nodes_line = Some(line);
                    }
                    set_param(&mut config, line, v[0], v[1])?;
                }
                "piconet" => {
                    let v = shape(
                        line,
                        &words,
                        &["piconet", "_", "master", "_", "slaves", "_"],
                    )?;
                    let slaves = match v[2] {
                        "-" => Vec::new(),
                        list => list
                            .split(',')
                            .map(|s| node(line, s))
                            .collect::<Result<Vec<_>, _>>()?,
                    };
                    piconets.push((
                        line,
                        Piconet {
                            pid: pid(line, v[0])?,
                            master: node(line, v[1])?,
                            slaves,
                        },
                    ));
                }
                "flow" => {
                    let v = shape(
                        line,
                        &words,
                        &[
                            "flow", "_", "_", "start", "_", "stop", "_", "rate", "_", "size", "_",
                        ],
                    )?;
                    let flow = TrafficFlow {
                        src: node(line, v[0])?,
                        dst: node(line, v[1])?,
                        start_ms: num(line, "start", v[2])?,
                        stop_ms: num(line, "stop", v[3])?,
                        rate_pps: num(line, "rate", v[4])?,
                        payload: num(line, "size", v[5])?,
                    };
                    directives.push((line, Directive::Flow(flow)));
                }
                "migrate" => {
                    let v = shape(line, &words, &["migrate", "_", "to", "_", "at", "_"])?;
                    directives.push((
                        line,
                        Directive::Migrate {
                            node: node(line, v[0])?,
                            pid: pid(line, v[1])?,
                            at_ms: num(line, "time", v[2])?,
                        },
                    ));
                }
                "leave" => {
                    let v = shape(line, &words, &["leave", "_", "from", "_", "at", "_"])?;
                    directives.push((
                        line,
                        Directive::Leave {
                            node: node(line, v[0])?,
                            pid: pid(line, v[1])?,
                            at_ms: num(line, "time", v[2])?,
                        },
                    ));
                }
                "static" => {
                    let v = shape(
                        line,
                        &words,
                        &["static", "_", "dest", "_", "via", "_", "at", "_"],
                    )?;
                    let route = StaticRoute {
                        node: node(line, v[0])?,
                        dest: node(line, v[1])?,
                        next_hop: node(line, v[2])?,
                    };
                    directives.push((line, Directive::Static(route, num(line, "time", v[3])?)));
                }
                other => return Err(syntax(line, format!("unknown directive `{other}`"))),
            }
        }
        if piconets.is_empty() {
            return Err(syntax(last_line.max(1), "no piconets declared"));
        }

        let mut topology = Scatternet::new();
        for (line, p) in &piconets {
            topology
                .insert_piconet(p.pid, p.master, &p.slaves)
                .map_err(|e| semantic(*line, e.to_string()))?;
        }
        let count = topology.node_count();
        match num_nodes_line {
            Some(line) if config.num_nodes != count => {
                return Err(semantic(
                    line,
                    format!(
                        "num_nodes {} but piconets declare {count} nodes",
                        config.num_nodes
                    ),
                ))
            }
            _ => config.num_nodes = count,
        }

        let known = |line: usize, n: NodeId| {
            if topology.contains_node(n) {
                Ok(())
            } else {
                Err(semantic(line, format!("unknown node {n}")))
            }
        };
        let known_pid = |line: usize, p: PiconetId| {
            if topology.piconet(p).is_some() {
                Ok(())
            } else {
                Err(semantic(line, format!("unknown piconet {p}")))
            }
        };
        for (line, d) in &directives {
            let line = *line;
            match d {
                Directive::Flow(f) => {
                    known(line, f.src)?;
                    known(line, f.dst)?;
                    if f.src == f.dst {
                        return Err(semantic(line, "flow source and destination are equal"));
                    }
                    if f.start_ms >= f.stop_ms {
                        return Err(semantic(line, "flow start must be before stop"));
                    }
                    if !(f.rate_pps.is_finite() && f.rate_pps > 0.0) {
                        return Err(semantic(line, "flow rate must be positive"));
                    }
                    if f.payload as usize > MAX_PAYLOAD || f.payload == 0 {
                        return Err(semantic(
                            line,
                            format!("flow size must be 1..={MAX_PAYLOAD} bytes"),
                        ));
                    }
                }
                Directive::Migrate { node, pid, .. } | Directive::Leave { node, pid, .. } => {
                    known(line, *node)?;
                    known_pid(line, *pid)?;
                }
                Directive::Static(r, _) => {
                    known(line, r.node)?;
                    known(line, r.dest)?;
                    known(line, r.next_hop)?;
                }
            }
        }

        // Scenarios may start partitioned and be joined by migrations, so
        // connectivity is judged once every migration has been applied.
        let mut joined = topology.clone();
        let mut migrations: Vec<_> = directives
            .iter()
            .filter_map(|(_, d)| match d {
                Directive::Migrate { node, pid, at_ms } => Some((*at_ms, *node, *pid)),
                _ => None,
            })
            .collect();
        migrations.sort_by_key(|m| m.0);
        for (_, n, p) in migrations {
            let _ = joined.migrate_as_slave(n, p);
        }
        if !joined.is_connected().unwrap_or(false) {
            return Err(semantic(
                piconets.last().map_or(1, |p| p.0),
                "scatternet is not connected even after all migrations",
            ));
        }

        Ok(Scenario {
            config,
            piconets: piconets.into_iter().map(|p| p.1).collect(),
            directives: directives.into_iter().map(|d| d.1).collect(),
        })
    }

    /// Scenario text that parses back to an equal value.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let ms = |us: u64| us / 1000;
        let link = match c.link_model {
            LinkModel::Baseband => "baseband".to_string(),
            LinkModel::Ideal { latency } => format!("ideal:{latency}"),
        };
        let params: Vec<(&str, String)> = vec![
            ("num_nodes", c.num_nodes.to_string()),
            ("area", format!("{}x{}", c.area.0, c.area.1)),
            ("queue_length", c.queue_length.to_string()),
            ("routing", c.routing.clone()),
            ("basic_rate", c.basic_rate.clone()),
            ("data_rate", c.data_rate.clone()),
            ("seed", c.seed.to_string()),
            ("until", c.until_ms.to_string()),
            ("route_lifetime", ms(c.aodv.route_lifetime).to_string()),
            ("reverse_timeout", ms(c.aodv.reverse_timeout).to_string()),
            ("active_timeout", ms(c.aodv.active_timeout).to_string()),
            ("rreq_retries", c.aodv.rreq_retries.to_string()),
            (
                "rreq_retry_interval",
                ms(c.aodv.rreq_retry_interval).to_string(),
            ),
            ("buffer_capacity", c.aodv.buffer_capacity.to_string()),
            ("hop_limit", c.hop_limit.to_string()),
            ("bridge_window", c.bridge_window.to_string()),
            ("link_model", link),
            ("jitter_us", c.jitter.to_string()),
        ];
        for (k, v) in params {
            let _ = writeln!(out, "param {k} {v}");
        }
        for p in &self.piconets {
            let mut slaves: Vec<String> = p.slaves.iter().map(|s| s.to_string()).collect();
            if slaves.is_empty() {
                slaves.push("-".into());
            }
            let _ = writeln!(
                out,
                "piconet {} master {} slaves {}",
                p.pid,
                p.master,
                slaves.join(",")
            );
        }
        for d in &self.directives {
            let _ = match d {
                Directive::Flow(f) => writeln!(
                    out,
                    "flow {} {} start {} stop {} rate {} size {}",
                    f.src, f.dst, f.start_ms, f.stop_ms, f.rate_pps, f.payload
                ),
                Directive::Migrate { node, pid, at_ms } => {
                    writeln!(out, "migrate {node} to {pid} at {at_ms}")
                }
                Directive::Leave { node, pid, at_ms } => {
                    writeln!(out, "leave {node} from {pid} at {at_ms}")
                }
                Directive::Static(r, at) => {
                    writeln!(
                        out,
                        "static {} dest {} via {} at {at}",
                        r.node, r.dest, r.next_hop
                    )
                }
            };
        }
        out
    }

    /// The initial scatternet, before any scheduled migration.
    pub fn topology(&self) -> Scatternet {
        let mut t = Scatternet::new();
        for p in &self.piconets {
            t.insert_piconet(p.pid, p.master, &p.slaves)
                .expect("validated at parse time");
        }
        t
    }

    pub fn flows(&self) -> impl Iterator<Item = &TrafficFlow> {
        self.directives.iter().filter_map(|d| match d {
            Directive::Flow(f) => Some(f),
            _ => None,
        })
    }

    /// Same scenario with every static route removed, so AODV handles all
    /// traffic.
    pub fn without_static_routes(&self) -> Scenario {
        let mut s = self.clone();
        s.directives.retain(|d| !matches!(d, Directive::Static(..)));
        s
    }

    /// Builds an engine with every directive scheduled. Topology events go
    /// in before flows so a flow starting at a migration instant already
    /// sees the new links.
    pub fn build_engine(&self) -> Engine {
        let mut engine = Engine::new(self.topology(), self.config.clone());
        for d in &self.directives {
            let r = match d {
                Directive::Migrate { node, pid, at_ms } => {
                    engine.apply_migration(*node, *pid, *at_ms)
                }
                Directive::Leave { node, pid, at_ms } => engine.apply_leave(*node, *pid, *at_ms),
                Directive::Static(r, at) => engine.inject_static_routes(vec![*r], *at),
                Directive::Flow(_) => Ok(()),
            };
            r.expect("engine starts at time zero");
        }
        for f in self.flows() {
            engine.attach_flow(*f).expect("validated at parse time");
        }
        engine
    }
}
