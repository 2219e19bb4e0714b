//! Edge streams, half-open time windows, train/test splitting, shifted test
//! variants and a synthetic generator with drifting community preferences.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// One weighted interaction `src -> dst` at `timestamp`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub timestamp: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamMeta {
    pub name: String,
    pub allow_self_loops: bool,
}

/// Time-ordered event list. Ties keep input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeStream {
    events: Vec<EdgeEvent>,
    num_nodes: usize,
    meta: StreamMeta,
}

impl EdgeStream {
    /// Validates and stably sorts `events`. `num_nodes` is raised to cover every id.
    pub fn new(mut events: Vec<EdgeEvent>, num_nodes: usize, meta: StreamMeta) -> Result<Self> {
        for (i, e) in events.iter().enumerate() {
            validate_event(e, meta.allow_self_loops)
                .map_err(|msg| Error::Parse { line: i + 1, msg })?;
        }
        events.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        let max_id = events
            .iter()
            .map(|e| e.src.max(e.dst) + 1)
            .max()
            .unwrap_or(0);
        Ok(Self {
            events,
            num_nodes: num_nodes.max(max_id),
            meta,
        })
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.meta
    }

    pub fn first_time(&self) -> Option<f64> {
        self.events.first().map(|e| e.timestamp)
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.timestamp)
    }

    /// Exclusive upper bound covering the last event.
    pub fn end_bound(&self) -> f64 {
        self.last_time().map_or(0.0, f64::next_up)
    }

    /// Index of the first event with `timestamp >= t`.
    fn lower_bound(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.timestamp < t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("src,dst,t,w\n");
        for e in &self.events {
            let _ = writeln!(out, "{},{},{},{}", e.src, e.dst, e.timestamp, e.weight);
        }
        out
    }
}

fn validate_event(e: &EdgeEvent, allow_self_loops: bool) -> std::result::Result<(), String> {
    if !e.timestamp.is_finite() {
        return Err("timestamp is not finite".into());
    }
    if e.timestamp < 0.0 {
        return Err(format!("negative timestamp {}", e.timestamp));
    }
    if !(e.weight.is_finite() && e.weight > 0.0) {
        return Err(format!("non-positive weight {}", e.weight));
    }
    if !allow_self_loops && e.src == e.dst {
        return Err(format!("self-loop on node {}", e.src));
    }
    Ok(())
}

/// Parse `src,dst,timestamp,weight` records. A leading header line is optional.
pub fn parse_edge_stream(text: &str, meta: StreamMeta) -> Result<EdgeStream> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 && is_header(line) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let bad = |what: &str, v: &str| Error::Parse {
            line: line_no,
            msg: format!("invalid {what} `{v}`"),
        };
        let event = EdgeEvent {
            src: fields[0].parse().map_err(|_| bad("src", fields[0]))?,
            dst: fields[1].parse().map_err(|_| bad("dst", fields[1]))?,
            timestamp: fields[2].parse().map_err(|_| bad("timestamp", fields[2]))?,
            weight: fields[3].parse().map_err(|_| bad("weight", fields[3]))?,
        };
        validate_event(&event, meta.allow_self_loops)
            .map_err(|msg| Error::Parse { line: line_no, msg })?;
        events.push(event);
    }
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    EdgeStream::new(events, 0, meta)
}

fn is_header(line: &str) -> bool {
    line.split(',')
        .next()
        .is_some_and(|f| f.trim().parse::<f64>().is_err())
}

/// A half-open time window `[t_start, t_end)` over a parent stream.
///
/// `context` is the time whose model state a replay of this slice starts
/// from. It equals `t_start` unless set earlier with [`GraphSlice::with_context`],
/// which leaves the events in `[context, t_start)` unseen (a time gap).
#[derive(Debug, Clone)]
pub struct GraphSlice {
    parent: Arc<EdgeStream>,
    t_start: f64,
    t_end: f64,
    context: f64,
    lo: usize,
    hi: usize,
}

impl PartialEq for GraphSlice {
    fn eq(&self, other: &Self) -> bool {
        self.t_start == other.t_start
            && self.t_end == other.t_end
            && self.context == other.context
            && self.num_nodes() == other.num_nodes()
            && self.events() == other.events()
    }
}

/// Events `e` of `stream` with `t_start <= e.timestamp < t_end`.
pub fn window(stream: &Arc<EdgeStream>, t_start: f64, t_end: f64) -> Result<GraphSlice> {
    if !(t_start <= t_end) {
        return Err(Error::invalid(format!(
            "inverted window bounds [{t_start}, {t_end})"
        )));
    }
    let lo = stream.lower_bound(t_start);
    let hi = stream.lower_bound(t_end).max(lo);
    Ok(GraphSlice {
        parent: Arc::clone(stream),
        t_start,
        t_end,
        context: t_start,
        lo,
        hi,
    })
}

impl GraphSlice {
    /// The whole stream as one slice.
    pub fn full(stream: &Arc<EdgeStream>) -> Self {
        let t0 = stream.first_time().unwrap_or(0.0);
        window(stream, t0, stream.end_bound()).expect("ordered bounds")
    }

    /// Wrap an already-filtered event list into its own stream and slice it
    /// with the given bounds.
    pub fn from_events(
        events: Vec<EdgeEvent>,
        num_nodes: usize,
        meta: StreamMeta,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self> {
        let stream = Arc::new(EdgeStream::new(events, num_nodes, meta)?);
        window(&stream, t_start, t_end)
    }

    pub fn parent(&self) -> &Arc<EdgeStream> {
        &self.parent
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn context_time(&self) -> f64 {
        self.context
    }

    pub fn with_context(mut self, context: f64) -> Result<Self> {
        if !(context <= self.t_start) {
            return Err(Error::invalid(format!(
                "replay context {context} is after slice start {}",
                self.t_start
            )));
        }
        self.context = context;
        Ok(self)
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn events(&self) -> &[EdgeEvent] {
        &self.parent.events[self.lo..self.hi]
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    pub fn num_nodes(&self) -> usize {
        self.parent.num_nodes
    }

    pub fn meta(&self) -> &StreamMeta {
        &self.parent.meta
    }

    /// Sub-window; bounds are intersected with this slice's own.
    pub fn window(&self, t_start: f64, t_end: f64) -> Result<GraphSlice> {
        if !(t_start <= t_end) {
            return Err(Error::invalid(format!(
                "inverted window bounds [{t_start}, {t_end})"
            )));
        }
        let a = self.t_start.max(t_start);
        let b = self.t_end.min(t_end).max(a);
        window(&self.parent, a, b)
    }

    pub fn last_timestamp(&self) -> Option<f64> {
        self.events().last().map(|e| e.timestamp)
    }

    /// Sorted list of nodes appearing as source or destination.
    pub fn active_nodes(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.num_nodes()];
        for e in self.events() {
            seen[e.src] = true;
            seen[e.dst] = true;
        }
        seen.iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    /// Sorted list of nodes that appear as a source.
    pub fn active_sources(&self) -> Vec<NodeId> {
        let mut seen = vec![false; self.num_nodes()];
        for e in self.events() {
            seen[e.src] = true;
        }
        seen.iter()
            .enumerate()
            .filter_map(|(i, &s)| s.then_some(i))
            .collect()
    }

    /// Event count per node, both endpoints.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.num_nodes()];
        for e in self.events() {
            deg[e.src] += 1.0;
            deg[e.dst] += 1.0;
        }
        deg
    }

    pub fn to_stream(&self) -> EdgeStream {
        EdgeStream {
            events: self.events().to_vec(),
            num_nodes: self.parent.num_nodes,
            meta: self.parent.meta.clone(),
        }
    }
}

/// Split at a timestamp boundary so that the train side holds (as close as the
/// timestamps allow) `ceil(train_fraction * n)` events.
pub fn split_train_test(
    stream: &Arc<EdgeStream>,
    train_fraction: f64,
) -> Result<(GraphSlice, GraphSlice)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train_fraction {train_fraction} not in (0,1)"
        )));
    }
    let events = stream.events();
    if events.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = events.len();
    let target = ((train_fraction * n as f64).ceil() as usize).clamp(1, n);
    // Boundaries are indices where the timestamp changes.
    let boundaries: Vec<usize> = (1..n)
        .filter(|&i| events[i].timestamp > events[i - 1].timestamp)
        .collect();
    let Some(&last) = boundaries.last() else {
        return Err(Error::DegenerateSplit(
            "all events share a single timestamp".into(),
        ));
    };
    let cut_idx = boundaries
        .iter()
        .copied()
        .find(|&b| b >= target)
        .unwrap_or(last);
    let t_cut = events[cut_idx].timestamp;
    let t0 = events[0].timestamp;
    let train = window(stream, t0, t_cut)?;
    let test = window(stream, t_cut, stream.end_bound())?;
    Ok((train, test))
}

/// `g_0` is the unmodified test window; `g_j` starts `offsets[j]` later.
#[derive(Debug, Clone)]
pub struct TteVariantSet {
    pub variants: Vec<GraphSlice>,
    pub offsets: Vec<f64>,
}

pub const TTE_VARIANTS: usize = 8;

/// Seven evenly spaced fractions 1/8..7/8 of the window length.
pub fn default_tte_offsets(length: f64) -> Vec<f64> {
    (1..TTE_VARIANTS)
        .map(|j| length * j as f64 / TTE_VARIANTS as f64)
        .collect()
}

pub fn make_tte_variants(test: &GraphSlice, offsets: &[f64]) -> Result<TteVariantSet> {
    if offsets.len() != TTE_VARIANTS - 1 {
        return Err(Error::invalid(format!(
            "expected {} offsets, got {}",
            TTE_VARIANTS - 1,
            offsets.len()
        )));
    }
    let length = test.length();
    let mut prev = 0.0;
    for &o in offsets {
        if !(o > prev) {
            return Err(Error::invalid(format!(
                "offsets must be positive and strictly increasing (at {o})"
            )));
        }
        if o >= length {
            return Err(Error::OffsetOutOfRange { offset: o, length });
        }
        prev = o;
    }
    let mut variants = Vec::with_capacity(TTE_VARIANTS);
    variants.push(test.clone());
    for &o in offsets {
        variants.push(test.window(test.t_start() + o, test.t_end())?);
    }
    let mut all = Vec::with_capacity(TTE_VARIANTS);
    all.push(0.0);
    all.extend_from_slice(offsets);
    Ok(TteVariantSet {
        variants,
        offsets: all,
    })
}

/// Configuration for the synthetic drifting-community generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub num_nodes: usize,
    pub num_communities: usize,
    pub horizon: f64,
    /// Radians per time unit by which every source's community preference rotates.
    pub drift_rate: f64,
    /// Expected events per node per time unit.
    pub base_rate: f64,
    pub rng_seed: u64,
    /// Timestamps are floored to multiples of `tick`; 0 keeps them continuous.
    pub tick: f64,
    /// Concentration of the preference profile over the community ring.
    pub sharpness: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            num_nodes: 48,
            num_communities: 6,
            horizon: 100.0,
            drift_rate: 0.05,
            base_rate: 0.8,
            rng_seed: 7,
            tick: 1.0,
            sharpness: 3.0,
        }
    }
}

impl DriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 2 {
            return Err(Error::invalid("num_nodes must be at least 2"));
        }
        if self.num_communities == 0 || self.num_communities > self.num_nodes {
            return Err(Error::invalid("num_communities must be in 1..=num_nodes"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::invalid("horizon must be positive"));
        }
        if !(self.drift_rate.is_finite() && self.drift_rate >= 0.0) {
            return Err(Error::invalid("drift_rate must be >= 0"));
        }
        if !(self.base_rate.is_finite() && self.base_rate > 0.0) {
            return Err(Error::invalid("base_rate must be > 0"));
        }
        if !(self.tick.is_finite() && self.tick >= 0.0) {
            return Err(Error::invalid("tick must be >= 0"));
        }
        if !(self.sharpness.is_finite() && self.sharpness >= 0.0) {
            return Err(Error::invalid("sharpness must be >= 0"));
        }
        Ok(())
    }

    pub fn community_of(&self, node: NodeId) -> usize {
        node % self.num_communities
    }
}

/// Each source prefers communities near a phase on the community ring; the
/// phase advances by `drift_rate` per time unit. Inside a community,
/// destinations follow a fixed Zipf-like popularity.
pub fn synth_drift_stream(cfg: &DriftConfig) -> Result<EdgeStream> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let c = cfg.num_communities;
    // Popularity rank inside a community is a seeded permutation of its members.
    let members: Vec<Vec<NodeId>> = (0..c)
        .map(|k| {
            let mut m: Vec<NodeId> = (0..cfg.num_nodes).filter(|&n| n % c == k).collect();
            m.shuffle(&mut rng);
            m
        })
        .collect();
    let popularity: Vec<Vec<f64>> = members
        .iter()
        .map(|m| {
            (0..m.len())
                .map(|r| 1.0 / (r as f64 + 1.0).powf(1.2))
                .collect()
        })
        .collect();
    let phases: Vec<f64> = (0..cfg.num_nodes)
        .map(|n| TAU * cfg.community_of(n) as f64 / c as f64 + rng.gen_range(-0.3..0.3))
        .collect();

    let total_rate = cfg.base_rate * cfg.num_nodes as f64;
    let mut events = Vec::new();
    let mut t = 0.0_f64;
    let mut comm_w = vec![0.0; c];
    loop {
        let u: f64 = rng.gen_range(f64::EPSILON..1.0);
        t += -u.ln() / total_rate;
        if t >= cfg.horizon {
            break;
        }
        let src = rng.gen_range(0..cfg.num_nodes);
        let angle = phases[src] + cfg.drift_rate * t;
        for (k, w) in comm_w.iter_mut().enumerate() {
            *w = (cfg.sharpness * (TAU * k as f64 / c as f64 - angle).cos()).exp();
        }
        let dst = loop {
            let k = sample_weighted(&comm_w, &mut rng);
            let r = sample_weighted(&popularity[k], &mut rng);
            let d = members[k][r];
            if d != src {
                break d;
            }
        };
        let ts = if cfg.tick > 0.0 {
            (t / cfg.tick).floor() * cfg.tick
        } else {
            t
        };
        events.push(EdgeEvent {
            src,
            dst,
            timestamp: ts,
            weight: rng.gen_range(0.5..1.5),
        });
    }
    EdgeStream::new(
        events,
        cfg.num_nodes,
        StreamMeta {
            name: format!("synthetic-drift-{}", cfg.rng_seed),
            allow_self_loops: false,
        },
    )
}

fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// A test slice handed to estimators. It wraps only graph data, so anything
/// taking it has no route to ground-truth labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledSlice(GraphSlice);

impl UnlabeledSlice {
    pub fn new(slice: GraphSlice) -> Self {
        Self(slice)
    }

    pub fn slice(&self) -> &GraphSlice {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> StreamMeta {
        StreamMeta::default()
    }

    fn stream_at(times: &[f64]) -> Arc<EdgeStream> {
        let events = times
            .iter()
            .enumerate()
            .map(|(i, &t)| EdgeEvent {
                src: i % 3,
                dst: (i % 3) + 1,
                timestamp: t,
                weight: 1.0,
            })
            .collect();
        Arc::new(EdgeStream::new(events, 0, meta()).unwrap())
    }

    #[test]
    fn parse_two_events() {
        let s = parse_edge_stream("0,1,0.0,1.0\n1,2,1.0,2.0", meta()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.num_nodes(), 3);
    }

    #[test]
    fn parse_sorts_by_time() {
        let s = parse_edge_stream("1,2,5.0,1.0\n0,1,1.0,1.0", meta()).unwrap();
        let ts: Vec<f64> = s.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![1.0, 5.0]);
    }

    #[test]
    fn parse_rejects_negative_timestamp() {
        match parse_edge_stream("0,1,-1.0,1.0", meta()) {
            Err(Error::Parse { line: 1, msg }) => assert!(msg.contains("negative timestamp")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            parse_edge_stream("", meta()),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            parse_edge_stream("src,dst,t,w\n", meta()),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            parse_edge_stream("0,1,1.0,0.0", meta()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_edge_stream("src,dst,t,w\n0,1,1.0,1.0\n0,1,x,1.0", meta()),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_edge_stream("0,1,1.0", meta()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(parse_edge_stream("2,2,1.0,1.0", meta()).is_err());
        let loops = StreamMeta {
            allow_self_loops: true,
            ..meta()
        };
        assert!(parse_edge_stream("2,2,1.0,1.0", loops).is_ok());
    }

    #[test]
    fn header_is_optional() {
        let a = parse_edge_stream("src,dst,t,w\n0,1,0.5,1.0\n", meta()).unwrap();
        let b = parse_edge_stream("0,1,0.5,1.0\n", meta()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_counts() {
        let s = stream_at(&(0..10).map(f64::from).collect::<Vec<_>>());
        let (train, test) = split_train_test(&s, 0.7).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
    }

    #[test]
    fn split_respects_timestamp_boundaries() {
        let s = stream_at(&[1.0, 1.0, 2.0, 3.0]);
        let (train, test) = split_train_test(&s, 0.5).unwrap();
        let tt: Vec<f64> = train.events().iter().map(|e| e.timestamp).collect();
        let te: Vec<f64> = test.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(tt, vec![1.0, 1.0]);
        assert_eq!(te, vec![2.0, 3.0]);
        // Never bisects: a fraction that would land inside the t=1 batch moves the cut.
        let (train, _) = split_train_test(&s, 0.25).unwrap();
        assert_eq!(train.len(), 2);
    }

    #[test]
    fn split_single_timestamp_is_an_error() {
        let s = stream_at(&[4.0, 4.0, 4.0]);
        assert!(matches!(
            split_train_test(&s, 0.5),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn window_examples() {
        let s = stream_at(&[0.5, 1.0, 1.9, 2.0]);
        assert_eq!(window(&s, 1.0, 2.0).unwrap().len(), 2);
        assert!(window(&s, 5.0, 5.0).unwrap().is_empty());
        assert_eq!(GraphSlice::full(&s).len(), 4);
        assert!(window(&s, 2.0, 1.0).is_err());
    }

    #[test]
    fn tte_window_arithmetic() {
        let s = stream_at(&(0..25).map(f64::from).collect::<Vec<_>>());
        let test = window(&s, 10.0, 20.0).unwrap();
        let set = make_tte_variants(&test, &[2.0, 4.0, 6.0, 8.0, 9.0, 9.5, 9.9]).unwrap();
        assert_eq!(set.variants.len(), 8);
        assert_eq!(set.offsets[0], 0.0);
        assert_eq!(set.variants[0], test);
        let g7 = &set.variants[7];
        assert!((g7.t_start() - 19.9).abs() < 1e-12);
        assert_eq!(g7.t_end(), 20.0);
        assert!(Arc::ptr_eq(g7.parent(), test.parent()));
    }

    #[test]
    fn tte_tiny_offsets_keep_nearly_everything() {
        let s = stream_at(&[10.5, 11.0, 12.0, 15.0]);
        let test = window(&s, 10.0, 20.0).unwrap();
        let eps: Vec<f64> = (1..8).map(|j| j as f64 * 1e-6).collect();
        let set = make_tte_variants(&test, &eps).unwrap();
        for v in &set.variants {
            assert_eq!(v.len(), test.len());
        }
    }

    #[test]
    fn tte_rejects_bad_offsets() {
        let s = stream_at(&[10.5, 11.0]);
        let test = window(&s, 10.0, 20.0).unwrap();
        match make_tte_variants(&test, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 10.0]) {
            Err(Error::OffsetOutOfRange { offset, .. }) => assert_eq!(offset, 10.0),
            other => panic!("unexpected {other:?}"),
        }
        assert!(make_tte_variants(&test, &[1.0, 1.0, 3.0, 4.0, 5.0, 6.0, 7.0]).is_err());
        assert!(make_tte_variants(&test, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let cfg = DriftConfig {
            horizon: 20.0,
            ..DriftConfig::default()
        };
        let a = synth_drift_stream(&cfg).unwrap();
        let b = synth_drift_stream(&cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.len() > 100);
        assert!(a
            .events()
            .iter()
            .all(|e| e.src != e.dst && e.dst < cfg.num_nodes));
        assert!(a.events().iter().all(|e| e.timestamp.fract() == 0.0));
        let other = synth_drift_stream(&DriftConfig { rng_seed: 8, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn synth_validates() {
        let bad = DriftConfig {
            num_communities: 100,
            ..DriftConfig::default()
        };
        assert!(synth_drift_stream(&bad).is_err());
        let bad = DriftConfig {
            drift_rate: -1.0,
            ..DriftConfig::default()
        };
        assert!(synth_drift_stream(&bad).is_err());
    }
}
