//! Time-varying communication schedules.
//!
//! A [`MixingSchedule`] hands out one doubly stochastic matrix `P_t` per
//! iteration `t ≥ 1`. Every generator records the connectivity window `B` and
//! the entry floor `ζ` it was built with, so [`validate_assumption1`] checks a
//! claim rather than searching for one.

use std::borrow::Cow;
use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Row/column-sum tolerance for a single mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    entries: DMatrix<f64>,
}

/// Largest row-sum and column-sum deviation from 1, and the most negative entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticDeviation {
    pub row: f64,
    pub column: f64,
    pub min_entry: f64,
}

impl StochasticDeviation {
    pub fn within(&self, tol: f64) -> bool {
        self.row <= tol && self.column <= tol && self.min_entry >= 0.0
    }
}

pub fn stochastic_deviation(p: &DMatrix<f64>) -> StochasticDeviation {
    let row = p
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let column = p
        .column_iter()
        .map(|c| (c.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let min_entry = p.iter().copied().fold(f64::INFINITY, f64::min);
    StochasticDeviation {
        row,
        column,
        min_entry,
    }
}

impl MixingMatrix {
    /// Checks squareness, nonnegativity and double stochasticity.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let m = MixingMatrix { entries };
        m.ensure_doubly_stochastic()?;
        Ok(m)
    }

    /// Wraps a matrix without checking it. Used for hand-built schedules that
    /// are meant to be run through [`validate_assumption1`].
    pub fn from_raw(entries: DMatrix<f64>) -> Self {
        MixingMatrix { entries }
    }

    pub fn ensure_doubly_stochastic(&self) -> Result<()> {
        let p = &self.entries;
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::BadMixingMatrix(format!(
                "matrix is {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        let dev = stochastic_deviation(p);
        if !dev.within(STOCHASTIC_TOL) || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadMixingMatrix(format!(
                "row deviation {:.3e}, column deviation {:.3e}, min entry {:.3e}",
                dev.row, dev.column, dev.min_entry
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.entries.row(i).iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    StaticRing,
    PeriodicEdgeCycle,
    RandomRingSplit,
    CustomList,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::StaticRing => "static-ring",
            ScheduleKind::PeriodicEdgeCycle => "periodic-edge-cycle",
            ScheduleKind::RandomRingSplit => "random-ring-split",
            ScheduleKind::CustomList => "custom-list",
        })
    }
}

#[derive(Debug, Clone)]
enum Source {
    /// `P_t = list[(t - 1) mod len]`.
    Cycle(Vec<MixingMatrix>),
    /// Ring edges reshuffled into `B` phases in every window.
    RandomRing,
}

#[derive(Debug, Clone)]
pub struct MixingSchedule {
    kind: ScheduleKind,
    m: usize,
    b: usize,
    zeta: f64,
    seed: u64,
    source: Source,
}

fn ring_edges(m: usize) -> Vec<(usize, usize)> {
    match m {
        2 => vec![(0, 1)],
        _ => (0..m).map(|i| (i, (i + 1) % m)).collect(),
    }
}

/// Symmetric Metropolis weights `1 / (1 + max(deg_i, deg_j))` on the given
/// undirected edges, with the remainder on the diagonal.
pub fn metropolis_weights(m: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut degree = vec![0usize; m];
    for &(i, j) in edges {
        degree[i] += 1;
        degree[j] += 1;
    }
    let mut p = DMatrix::zeros(m, m);
    for &(i, j) in edges {
        let w = 1.0 / (1.0 + degree[i].max(degree[j]) as f64);
        p[(i, j)] += w;
        p[(j, i)] += w;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| p[(i, j)]).sum();
        p[(i, i)] = 1.0 - off;
    }
    p
}

fn min_positive_entry(matrices: &[MixingMatrix]) -> f64 {
    matrices
        .iter()
        .flat_map(|p| p.entries.iter().copied())
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min)
}

/// Static ring: self weight and weight to each ring neighbor all `1/3`
/// (`1/2` for two agents). `B = 1`.
pub fn ring_schedule(m: usize) -> Result<MixingSchedule> {
    if m < 2 {
        return Err(Error::TooFewAgents(m));
    }
    let (p, zeta) = if m == 2 {
        (DMatrix::from_element(2, 2, 0.5), 0.5)
    } else {
        let third = 1.0 / 3.0;
        let mut p = DMatrix::zeros(m, m);
        for i in 0..m {
            p[(i, i)] = third;
            p[(i, (i + 1) % m)] = third;
            p[(i, (i + m - 1) % m)] = third;
        }
        (p, third)
    };
    Ok(MixingSchedule {
        kind: ScheduleKind::StaticRing,
        m,
        b: 1,
        zeta,
        seed: 0,
        source: Source::Cycle(vec![MixingMatrix::new(p)?]),
    })
}

/// Cycles through the given undirected edge sets, one per iteration, with
/// Metropolis weights. `ζ` is read off the generated matrices.
pub fn periodic_edge_cycle(
    m: usize,
    phases: &[Vec<(usize, usize)>],
    b: usize,
) -> Result<MixingSchedule> {
    if m < 2 {
        return Err(Error::TooFewAgents(m));
    }
    if phases.is_empty() || b == 0 {
        return Err(Error::InvalidParameter(
            "edge cycle needs at least one phase and B >= 1".into(),
        ));
    }
    let mut matrices = Vec::with_capacity(phases.len());
    for edges in phases {
        if let Some(&(i, j)) = edges.iter().find(|(i, j)| *i >= m || *j >= m || i == j) {
            return Err(Error::InvalidParameter(format!(
                "bad edge ({i}, {j}) for {m} agents"
            )));
        }
        matrices.push(MixingMatrix::new(metropolis_weights(m, edges))?);
    }
    let zeta = min_positive_entry(&matrices);
    Ok(MixingSchedule {
        kind: ScheduleKind::PeriodicEdgeCycle,
        m,
        b,
        zeta,
        seed: 0,
        source: Source::Cycle(matrices),
    })
}

/// Four agents alternating the matchings {0-1, 2-3} and {1-2, 3-0}.
pub fn matching_alternation(b: usize) -> Result<MixingSchedule> {
    periodic_edge_cycle(4, &[vec![(0, 1), (2, 3)], vec![(1, 2), (3, 0)]], b)
}

/// Time-varying ring: in every window of `B` iterations the ring edges are
/// shuffled (seeded per window) and dealt round-robin into `B` phases. The
/// union over each window is the full ring. Degrees never exceed 2, so the
/// Metropolis entries are at least `1/3`.
pub fn random_ring_split(m: usize, b: usize, seed: u64) -> Result<MixingSchedule> {
    if m < 2 {
        return Err(Error::TooFewAgents(m));
    }
    if b == 0 {
        return Err(Error::InvalidParameter("B must be at least 1".into()));
    }
    Ok(MixingSchedule {
        kind: ScheduleKind::RandomRingSplit,
        m,
        b,
        zeta: if m == 2 { 0.5 } else { 1.0 / 3.0 },
        seed,
        source: Source::RandomRing,
    })
}

impl MixingSchedule {
    /// A schedule that repeats the given matrices with period `len`. Nothing is
    /// checked; run [`validate_assumption1`] on the result.
    pub fn custom(matrices: Vec<MixingMatrix>, b: usize, zeta: f64) -> Result<Self> {
        let m = matrices
            .first()
            .ok_or_else(|| Error::InvalidParameter("custom schedule is empty".into()))?
            .size();
        if matrices
            .iter()
            .any(|p| p.size() != m || !p.entries.is_square())
        {
            return Err(Error::InvalidParameter(
                "custom schedule matrices differ in size".into(),
            ));
        }
        Ok(MixingSchedule {
            kind: ScheduleKind::CustomList,
            m,
            b: b.max(1),
            zeta,
            seed: 0,
            source: Source::Cycle(matrices),
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn agents(&self) -> usize {
        self.m
    }

    pub fn window(&self) -> usize {
        self.b
    }

    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Overrides the declared entry floor (e.g. from a config file).
    pub fn with_zeta(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    pub fn with_window(mut self, b: usize) -> Self {
        self.b = b;
        self
    }

    /// `P_t` for `t ≥ 1`.
    pub fn matrix(&self, t: usize) -> Cow<'_, MixingMatrix> {
        assert!(t >= 1, "schedules are indexed from t = 1");
        match &self.source {
            Source::Cycle(list) => Cow::Borrowed(&list[(t - 1) % list.len()]),
            Source::RandomRing => Cow::Owned(self.random_ring_matrix(t)),
        }
    }

    fn random_ring_matrix(&self, t: usize) -> MixingMatrix {
        let window = (t - 1) / self.b;
        let phase = (t - 1) % self.b;
        let mut rng = ChaCha20Rng::seed_from_u64(
            self.seed ^ (window as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut edges = ring_edges(self.m);
        edges.shuffle(&mut rng);
        let active: Vec<_> = edges
            .into_iter()
            .enumerate()
            .filter(|(k, _)| k % self.b == phase)
            .map(|(_, e)| e)
            .collect();
        MixingMatrix::from_raw(metropolis_weights(self.m, &active))
    }

    pub fn mixing_bound_params(&self) -> MixingBoundParams {
        MixingBoundParams::new(self.m, self.zeta, self.b)
    }
}

/// `ω = (1 − ζ/(4m²))^{−2}`, `γ = (1 − ζ/(4m²))^{1/B}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingBoundParams {
    pub omega: f64,
    pub gamma: f64,
}

impl MixingBoundParams {
    pub fn new(m: usize, zeta: f64, b: usize) -> Self {
        let base = 1.0 - zeta / (4.0 * (m * m) as f64);
        MixingBoundParams {
            omega: base.powi(-2),
            gamma: base.powf(1.0 / b as f64),
        }
    }

    pub fn bound(&self, gap: usize) -> f64 {
        self.omega * self.gamma.powi(gap as i32)
    }
}

/// `ω γ^k`: bound on `|[Q(t,s)]_{ij} − 1/m|` for `k = t − s`.
pub fn mixing_bound(m: usize, zeta: f64, b: usize, k: usize) -> f64 {
    MixingBoundParams::new(m, zeta, b).bound(k)
}

/// `Q(t, s) = P_t P_{t−1} ⋯ P_s`.
pub fn transition(schedule: &MixingSchedule, t: usize, s: usize) -> Result<DMatrix<f64>> {
    if s < 1 || t < s {
        return Err(Error::BadWindow { t, s });
    }
    let mut q = schedule.matrix(s).entries.clone();
    for k in (s + 1)..=t {
        q = schedule.matrix(k).entries() * q;
    }
    Ok(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    RowSum,
    ColumnSum,
    Negative,
    EntryFloor,
    Connectivity,
}

impl ViolationKind {
    pub fn code(self) -> &'static str {
        match self {
            ViolationKind::RowSum => "row-sum",
            ViolationKind::ColumnSum => "column-sum",
            ViolationKind::Negative => "negative-entry",
            ViolationKind::EntryFloor => "entry-floor",
            ViolationKind::Connectivity => "connectivity",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Iteration for per-matrix checks.
    pub t: Option<usize>,
    /// Window index `k` for connectivity checks (covers `kB+1..=(k+1)B`).
    pub window: Option<usize>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind.code())?;
        if let Some(t) = self.t {
            write!(f, " at t={t}")?;
        }
        if let Some(k) = self.window {
            write!(f, " in window k={k}")?;
        }
        write!(f, ": {}", self.detail)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub horizon: usize,
    pub window: usize,
    pub zeta: f64,
    pub max_row_deviation: f64,
    pub max_column_deviation: f64,
    pub windows_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "horizon={} B={} zeta={} windows={} max_row_dev={:.3e} max_col_dev={:.3e}: {}",
            self.horizon,
            self.window,
            self.zeta,
            self.windows_checked,
            self.max_row_deviation,
            self.max_column_deviation,
            if self.passes() { "pass" } else { "FAIL" }
        )?;
        for v in &self.violations {
            writeln!(f, "  {v}")?;
        }
        Ok(())
    }
}

/// All nodes reachable from node 0 along `adj`, and along the reversed edges.
fn strongly_connected(m: usize, adj: &[Vec<bool>]) -> bool {
    let reach = |forward: bool| {
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..m {
                let edge = if forward { adj[u][v] } else { adj[v][u] };
                if edge && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Checks double stochasticity and the entry floor of every `P_t`, `t ≤ T`,
/// and strong connectivity of the union graph of every full window.
pub fn validate_assumption1(schedule: &MixingSchedule, horizon: usize) -> ValidationReport {
    let m = schedule.agents();
    let b = schedule.window().max(1);
    let zeta = schedule.zeta();
    let mut violations = Vec::new();
    let mut max_row = 0.0f64;
    let mut max_col = 0.0f64;

    if !(zeta > 0.0 && zeta < 1.0) {
        violations.push(Violation {
            kind: ViolationKind::EntryFloor,
            t: None,
            window: None,
            detail: format!("declared floor zeta={zeta} is outside (0, 1)"),
        });
    }
    if horizon < b {
        violations.push(Violation {
            kind: ViolationKind::Connectivity,
            t: None,
            window: None,
            detail: format!("horizon {horizon} is shorter than the window B={b}"),
        });
    }

    let mut union = vec![vec![false; m]; m];
    let mut windows_checked = 0;
    for t in 1..=horizon {
        let p = schedule.matrix(t);
        let e = p.entries();
        let dev = stochastic_deviation(e);
        max_row = max_row.max(dev.row);
        max_col = max_col.max(dev.column);
        if dev.row > STOCHASTIC_TOL {
            violations.push(Violation {
                kind: ViolationKind::RowSum,
                t: Some(t),
                window: None,
                detail: format!("max |row sum - 1| = {:.3e}", dev.row),
            });
        }
        if dev.column > STOCHASTIC_TOL {
            violations.push(Violation {
                kind: ViolationKind::ColumnSum,
                t: Some(t),
                window: None,
                detail: format!("max |column sum - 1| = {:.3e}", dev.column),
            });
        }
        if dev.min_entry < 0.0 {
            violations.push(Violation {
                kind: ViolationKind::Negative,
                t: Some(t),
                window: None,
                detail: format!("entry {:.3e}", dev.min_entry),
            });
        }
        if zeta > 0.0 {
            for i in 0..m {
                for j in 0..m {
                    let v = e[(i, j)];
                    let required = i == j || v > 0.0;
                    if required && v < zeta {
                        violations.push(Violation {
                            kind: ViolationKind::EntryFloor,
                            t: Some(t),
                            window: None,
                            detail: format!("[P]_({i},{j}) = {v} < zeta = {zeta}"),
                        });
                    }
                }
            }
        }
        // Edge (j, i) is active when agent i listens to j.
        for i in 0..m {
            for j in 0..m {
                if i != j && e[(i, j)] > 0.0 {
                    union[j][i] = true;
                }
            }
        }
        if t % b == 0 {
            let k = t / b - 1;
            windows_checked += 1;
            if !strongly_connected(m, &union) {
                violations.push(Violation {
                    kind: ViolationKind::Connectivity,
                    t: None,
                    window: Some(k),
                    detail: format!(
                        "union graph over t={}..={} is not strongly connected",
                        k * b + 1,
                        t
                    ),
                });
            }
            union.iter_mut().for_each(|r| r.fill(false));
        }
    }

    ValidationReport {
        horizon,
        window: b,
        zeta,
        max_row_deviation: max_row,
        max_column_deviation: max_col,
        windows_checked,
        violations,
    }
}

/// Outcome of checking `max_ij |[Q(t,s)]_ij − 1/m| ≤ ω γ^{t−s}` on every pair
/// `1 ≤ s ≤ t ≤ horizon`.
#[derive(Debug, Clone)]
pub struct MixingCheck {
    pub pairs: usize,
    pub violations: usize,
    /// Largest observed deviation divided by the bound.
    pub worst_ratio: f64,
    /// Largest row/column deviation of any `Q(t,s)` from 1.
    pub max_stochastic_deviation: f64,
}

pub fn check_mixing_bound(schedule: &MixingSchedule, horizon: usize) -> MixingCheck {
    let m = schedule.agents();
    let params = schedule.mixing_bound_params();
    let target = 1.0 / m as f64;
    let mut out = MixingCheck {
        pairs: 0,
        violations: 0,
        worst_ratio: 0.0,
        max_stochastic_deviation: 0.0,
    };
    for s in 1..=horizon {
        let mut q = schedule.matrix(s).entries().clone();
        for t in s..=horizon {
            if t > s {
                q = schedule.matrix(t).entries() * q;
            }
            let dev = q.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
            let bound = params.bound(t - s);
            out.pairs += 1;
            if dev > bound {
                out.violations += 1;
            }
            out.worst_ratio = out.worst_ratio.max(dev / bound);
            let sd = stochastic_deviation(&q);
            out.max_stochastic_deviation = out.max_stochastic_deviation.max(sd.row.max(sd.column));
        }
    }
    out
}

/// Parses the matrix-list format: a first line `m T`, then `T` blocks of `m`
/// rows of `m` whitespace-separated reals. Blank lines and `#` comments are
/// skipped.
pub fn parse_schedule(text: &str) -> Result<(usize, Vec<MixingMatrix>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header 'm T'".into(),
    })?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let parse_usize = |s: &str, what: &str| {
        s.parse::<usize>().map_err(|_| Error::Parse {
            line: hline,
            message: format!("{what} must be a positive integer, got '{s}'"),
        })
    };
    if fields.len() != 2 {
        return Err(Error::Parse {
            line: hline,
            message: format!("header must be 'm T', got '{header}'"),
        });
    }
    let m = parse_usize(fields[0], "m")?;
    let t = parse_usize(fields[1], "T")?;
    if m == 0 || t == 0 {
        return Err(Error::Parse {
            line: hline,
            message: "m and T must be positive".into(),
        });
    }
    let mut matrices = Vec::with_capacity(t);
    for block in 0..t {
        let mut p = DMatrix::zeros(m, m);
        for i in 0..m {
            let (lno, line) = lines.next().ok_or(Error::Parse {
                line: hline,
                message: format!("file ends inside matrix {} (row {})", block + 1, i + 1),
            })?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| Error::Parse {
                        line: lno,
                        message: format!("'{s}' is not a real number"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != m {
                return Err(Error::Parse {
                    line: lno,
                    message: format!("expected {m} entries, found {}", row.len()),
                });
            }
            for (j, v) in row.into_iter().enumerate() {
                p[(i, j)] = v;
            }
        }
        matrices.push(MixingMatrix::from_raw(p));
    }
    if let Some((lno, _)) = lines.next() {
        return Err(Error::Parse {
            line: lno,
            message: format!("trailing data after {t} matrices"),
        });
    }
    Ok((m, matrices))
}

pub fn format_schedule(matrices: &[MixingMatrix]) -> String {
    let m = matrices.first().map_or(0, |p| p.size());
    let mut out = format!("{m} {}\n", matrices.len());
    for p in matrices {
        for i in 0..m {
            let row: Vec<String> = (0..m).map(|j| format!("{:e}", p.get(i, j))).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Builds and validates a custom schedule. `ζ` is the smallest positive entry
/// in the file; `B`, when not given, is the smallest window under which the
/// list passes. The list repeats with period `T`.
pub fn schedule_from_text(text: &str, b: Option<usize>) -> Result<MixingSchedule> {
    let (_, matrices) = parse_schedule(text)?;
    let horizon = matrices.len();
    let zeta = min_positive_entry(&matrices);
    let candidates: Vec<usize> = match b {
        Some(b) => vec![b],
        None => (1..=horizon).collect(),
    };
    let mut last = None;
    for b in candidates {
        let schedule = MixingSchedule::custom(matrices.clone(), b, zeta)?;
        let report = validate_assumption1(&schedule, horizon);
        if report.passes() {
            return Ok(schedule);
        }
        last = Some(report);
    }
    let report = last.expect("at least one candidate window");
    Err(Error::BadMixingMatrix(format!(
        "custom schedule fails validation: {}",
        report.to_string().trim_end()
    )))
}

pub fn load_schedule_file(path: &Path, b: Option<usize>) -> Result<MixingSchedule> {
    let text = std::fs::read_to_string(path)?;
    schedule_from_text(&text, b)
}
