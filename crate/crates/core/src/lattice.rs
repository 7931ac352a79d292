//! Stacked triangular/honeycomb lattice of the tricolored gauge theory.
//!
//! The stack has `M` measurement rounds. Round `r` contributes one triangular
//! layer `T_r` followed by one honeycomb layer `H_r`, so the time direction
//! reads `T_0 H_0 T_1 H_1 ... T_{M-1} H_{M-1}` and wraps periodically.
//!
//! # Coordinates and indices
//!
//! Triangular vertices carry `(x, y) ∈ [0, L)²` with lattice vectors
//! `a1 = (1, 0)` and `a2 = (1/2, √3/2)`. Their color is `(x + 2y) mod 3`
//! (0 = red, 1 = green, 2 = blue), a proper coloring whenever `L ≡ 0 mod 3`.
//! Cell `(x, y)` owns two triangles:
//!
//! * up (sublattice 0): `(x, y)`, `(x+1, y)`, `(x, y+1)`
//! * down (sublattice 1): `(x+1, y)`, `(x+1, y+1)`, `(x, y+1)`
//!
//! The honeycomb vertices are the duals of these triangles and each hexagon
//! surrounds one triangular vertex, whose color it inherits.
//!
//! Dense indices, with `A = L²` and `c = y·L + x`:
//!
//! | object                         | index                          |
//! |--------------------------------|--------------------------------|
//! | `T` site `(r, x, y)`           | `3A·r + c`                     |
//! | `H` site `(r, x, y, s)`        | `3A·r + A + 2c + s`            |
//! | five-body term `(r, x, y, s)`  | `2A·r + 2c + s`                |
//! | hexagon term `(r, x, y)`       | `N_5 + A·r + c`                |
//! | gauge generator `(r, x, y)`    | `A·r + c`                      |
//!
//! A five-body term lists the three triangle corners in `T_r`, then the dual
//! `H` vertex in `H_r` (above) and in `H_{r-1}` (below). A hexagon term lists
//! its six `H_r` vertices counter-clockwise starting from the up triangle of
//! the center's cell. A gauge generator is the hexagon plus the center vertex
//! in `T_r` (below) and `T_{r+1}` (above).
//!
//! With `M = 1` (test geometry only) the layers above and below coincide and
//! the duplicated entries are kept as multiset members.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// In-layer linear size.
    pub l: usize,
    /// Number of measurement rounds.
    pub m: usize,
    /// Admit `M = 1` (exact-enumeration geometry).
    #[serde(default)]
    pub degenerate_ok: bool,
}

impl LatticeSpec {
    pub fn new(l: usize, m: usize) -> Result<Self> {
        let spec = Self {
            l,
            m,
            degenerate_ok: false,
        };
        spec.check()?;
        Ok(spec)
    }

    /// Single-round stack used by the enumeration oracle.
    pub fn degenerate(l: usize) -> Result<Self> {
        let spec = Self {
            l,
            m: 1,
            degenerate_ok: true,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.l < 3 || self.l % 3 != 0 {
            return Err(Error::Lattice(format!(
                "L must be a multiple of 3 (got L={})",
                self.l
            )));
        }
        let m_ok = (self.m >= 2 && self.m % 2 == 0) || (self.degenerate_ok && self.m == 1);
        if !m_ok {
            return Err(Error::Lattice(format!(
                "M must be an even number of rounds >= 2 (got M={})",
                self.m
            )));
        }
        Ok(())
    }

    pub fn layer_area(&self) -> usize {
        self.l * self.l
    }

    pub fn n_sites(&self) -> usize {
        3 * self.layer_area() * self.m
    }

    pub fn n_five_body(&self) -> usize {
        2 * self.layer_area() * self.m
    }

    pub fn n_hexagons(&self) -> usize {
        self.layer_area() * self.m
    }
}

impl fmt::Display for LatticeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L={} M={}", self.l, self.m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    T,
    H,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Color {
    pub fn from_index(i: usize) -> Self {
        match i % 3 {
            0 => Color::Red,
            1 => Color::Green,
            _ => Color::Blue,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "red" => Some(Color::Red),
            "green" => Some(Color::Green),
            "blue" => Some(Color::Blue),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Site {
    pub kind: LayerKind,
    pub round: usize,
    pub x: usize,
    pub y: usize,
    /// `H` sites only.
    pub sublattice: Option<Sublattice>,
    /// `T` sites only.
    pub color: Option<Color>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TermKind {
    FiveBody,
    Hexagon,
}

/// Compressed adjacency lists (`offsets.len() == rows + 1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Csr {
    offsets: Vec<u32>,
    items: Vec<u32>,
}

impl Csr {
    fn from_rows(rows: &[Vec<u32>]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut items = Vec::new();
        offsets.push(0);
        for row in rows {
            items.extend_from_slice(row);
            offsets.push(items.len() as u32);
        }
        Self { offsets, items }
    }

    #[inline]
    pub(crate) fn row(&self, i: usize) -> &[u32] {
        &self.items[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }
}

/// Immutable site, term and incidence tables.
#[derive(Clone, Debug)]
pub struct LatticeGeometry {
    spec: LatticeSpec,
    sites: Vec<Site>,
    five_body: Vec<[u32; 5]>,
    hexagons: Vec<[u32; 6]>,
    hexagon_colors: Vec<Color>,
    /// Terms containing each site, with multiplicity.
    incidence: Csr,
    /// Five-body terms whose product changes sign when the site flips.
    flip_five: Csr,
    /// Hexagon terms whose product changes sign when the site flips.
    flip_hex: Csr,
    gauge_generators: Vec<[u32; 8]>,
}

fn wrap(v: isize, n: usize) -> usize {
    v.rem_euclid(n as isize) as usize
}

/// Index helpers shared by construction and validation.
struct Indexer {
    l: usize,
    m: usize,
}

impl Indexer {
    fn area(&self) -> usize {
        self.l * self.l
    }

    fn cell(&self, x: isize, y: isize) -> usize {
        wrap(y, self.l) * self.l + wrap(x, self.l)
    }

    fn round(&self, r: isize) -> usize {
        wrap(r, self.m)
    }

    fn t_site(&self, r: isize, x: isize, y: isize) -> u32 {
        (3 * self.area() * self.round(r) + self.cell(x, y)) as u32
    }

    fn h_site(&self, r: isize, x: isize, y: isize, s: usize) -> u32 {
        (3 * self.area() * self.round(r) + self.area() + 2 * self.cell(x, y) + s) as u32
    }

    /// Corners of triangle `(x, y, s)`.
    fn triangle(&self, x: isize, y: isize, s: usize) -> [(isize, isize); 3] {
        if s == 0 {
            [(x, y), (x + 1, y), (x, y + 1)]
        } else {
            [(x + 1, y), (x + 1, y + 1), (x, y + 1)]
        }
    }

    /// Triangles around vertex `(x, y)`, counter-clockwise from the up
    /// triangle of its own cell.
    fn ring(&self, x: isize, y: isize) -> [(isize, isize, usize); 6] {
        [
            (x, y, 0),
            (x - 1, y, 1),
            (x - 1, y, 0),
            (x - 1, y - 1, 1),
            (x, y - 1, 0),
            (x, y - 1, 1),
        ]
    }
}

pub fn build_lattice(spec: LatticeSpec) -> Result<LatticeGeometry> {
    spec.check()?;
    let ix = Indexer { l: spec.l, m: spec.m };
    let (l, m) = (spec.l, spec.m);

    let mut sites = Vec::with_capacity(spec.n_sites());
    for r in 0..m {
        for y in 0..l {
            for x in 0..l {
                sites.push(Site {
                    kind: LayerKind::T,
                    round: r,
                    x,
                    y,
                    sublattice: None,
                    color: Some(Color::from_index(x + 2 * y)),
                });
            }
        }
        for y in 0..l {
            for x in 0..l {
                for sub in [Sublattice::Up, Sublattice::Down] {
                    sites.push(Site {
                        kind: LayerKind::H,
                        round: r,
                        x,
                        y,
                        sublattice: Some(sub),
                        color: None,
                    });
                }
            }
        }
    }

    let mut five_body = Vec::with_capacity(spec.n_five_body());
    for r in 0..m as isize {
        for y in 0..l as isize {
            for x in 0..l as isize {
                for s in 0..2 {
                    let [a, b, c] = ix.triangle(x, y, s);
                    five_body.push([
                        ix.t_site(r, a.0, a.1),
                        ix.t_site(r, b.0, b.1),
                        ix.t_site(r, c.0, c.1),
                        ix.h_site(r, x, y, s),
                        ix.h_site(r - 1, x, y, s),
                    ]);
                }
            }
        }
    }

    let mut hexagons = Vec::with_capacity(spec.n_hexagons());
    let mut hexagon_colors = Vec::with_capacity(spec.n_hexagons());
    let mut gauge_generators = Vec::with_capacity(spec.n_hexagons());
    for r in 0..m as isize {
        for y in 0..l as isize {
            for x in 0..l as isize {
                let ring = ix.ring(x, y).map(|(tx, ty, s)| ix.h_site(r, tx, ty, s));
                hexagons.push(ring);
                hexagon_colors.push(Color::from_index((x + 2 * y) as usize));
                let mut g = [0u32; 8];
                g[..6].copy_from_slice(&ring);
                g[6] = ix.t_site(r, x, y);
                g[7] = ix.t_site(r + 1, x, y);
                gauge_generators.push(g);
            }
        }
    }

    let n5 = five_body.len();
    let term_lists = five_body
        .iter()
        .map(|t| &t[..])
        .chain(hexagons.iter().map(|h| &h[..]));
    let (incidence, flip_five, flip_hex) = incidence_tables(sites.len(), n5, term_lists);

    Ok(LatticeGeometry {
        spec,
        sites,
        five_body,
        hexagons,
        hexagon_colors,
        incidence,
        flip_five,
        flip_hex,
        gauge_generators,
    })
}

fn incidence_tables<'a>(
    n_sites: usize,
    n5: usize,
    terms: impl Iterator<Item = &'a [u32]>,
) -> (Csr, Csr, Csr) {
    let mut inc: Vec<Vec<u32>> = vec![Vec::new(); n_sites];
    for (t, members) in terms.enumerate() {
        for &s in members {
            inc[s as usize].push(t as u32);
        }
    }
    let mut five = Vec::with_capacity(n_sites);
    let mut hex = Vec::with_capacity(n_sites);
    for row in &inc {
        let (mut f, mut h) = (Vec::new(), Vec::new());
        let mut sorted = row.clone();
        sorted.sort_unstable();
        let mut i = 0;
        while i < sorted.len() {
            let t = sorted[i];
            let mut j = i;
            while j < sorted.len() && sorted[j] == t {
                j += 1;
            }
            if (j - i) % 2 == 1 {
                if (t as usize) < n5 {
                    f.push(t);
                } else {
                    h.push(t);
                }
            }
            i = j;
        }
        five.push(f);
        hex.push(h);
    }
    (Csr::from_rows(&inc), Csr::from_rows(&five), Csr::from_rows(&hex))
}

impl LatticeGeometry {
    pub fn spec(&self) -> LatticeSpec {
        self.spec
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_five_body(&self) -> usize {
        self.five_body.len()
    }

    pub fn n_hexagons(&self) -> usize {
        self.hexagons.len()
    }

    pub fn n_terms(&self) -> usize {
        self.five_body.len() + self.hexagons.len()
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn site(&self, i: usize) -> &Site {
        &self.sites[i]
    }

    pub fn five_body_terms(&self) -> &[[u32; 5]] {
        &self.five_body
    }

    pub fn hexagon_terms(&self) -> &[[u32; 6]] {
        &self.hexagons
    }

    pub fn hexagon_colors(&self) -> &[Color] {
        &self.hexagon_colors
    }

    pub fn gauge_generators(&self) -> &[[u32; 8]] {
        &self.gauge_generators
    }

    pub fn term_kind(&self, term: usize) -> TermKind {
        if term < self.five_body.len() {
            TermKind::FiveBody
        } else {
            TermKind::Hexagon
        }
    }

    /// Member sites of a term by unified id.
    pub fn term_sites(&self, term: usize) -> &[u32] {
        let n5 = self.five_body.len();
        if term < n5 {
            &self.five_body[term]
        } else {
            &self.hexagons[term - n5]
        }
    }

    /// Terms containing `site`, repeated according to multiplicity.
    pub fn incident_terms(&self, site: usize) -> &[u32] {
        self.incidence.row(site)
    }

    #[inline]
    pub(crate) fn flip_five(&self, site: usize) -> &[u32] {
        self.flip_five.row(site)
    }

    #[inline]
    pub(crate) fn flip_hex(&self, site: usize) -> &[u32] {
        self.flip_hex.row(site)
    }

    /// Write the line-oriented debug dump described in [`write_dump`].
    pub fn dump<W: Write>(&self, out: W) -> Result<()> {
        write_dump(self, out)
    }
}

/// The elementary horizontal Wilson loops: one six-site set per hexagon.
pub fn wilson_plaquettes(g: &LatticeGeometry) -> Vec<[u32; 6]> {
    g.hexagons.clone()
}

/// One named invariant check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct GeometryReport {
    pub checks: Vec<Check>,
}

impl GeometryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    fn push(&mut self, name: &'static str, failure: Option<String>) {
        self.checks.push(Check {
            name,
            passed: failure.is_none(),
            detail: failure.unwrap_or_else(|| "ok".into()),
        });
    }
}

impl fmt::Display for GeometryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {}: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

pub const CHECK_COUNTS: &str = "counts";
pub const CHECK_T_DEGREE: &str = "T-site degree";
pub const CHECK_H_DEGREE: &str = "H-site degree";
pub const CHECK_INCIDENCE: &str = "incidence consistency";
pub const CHECK_FIVE_BODY: &str = "five-body structure";
pub const CHECK_HEXAGON: &str = "hexagon structure";
pub const CHECK_COLORING: &str = "coloring";
pub const CHECK_GAUGE: &str = "gauge even overlap";

/// Re-derive every structural invariant from the stored tables.
pub fn validate_geometry(g: &LatticeGeometry) -> GeometryReport {
    let mut report = GeometryReport::default();
    let spec = g.spec;
    let ix = Indexer { l: spec.l, m: spec.m };
    let n5 = g.five_body.len();

    let counts = (g.sites.len(), n5, g.hexagons.len());
    let expected = (spec.n_sites(), spec.n_five_body(), spec.n_hexagons());
    report.push(
        CHECK_COUNTS,
        (counts != expected || g.gauge_generators.len() != spec.n_hexagons()).then(|| {
            format!("(sites, five-body, hexagons) = {counts:?}, expected {expected:?}")
        }),
    );

    let degree = |site: usize| {
        let row = g.incidence.row(site);
        let five = row.iter().filter(|&&t| (t as usize) < n5).count();
        (five, row.len() - five)
    };
    for (kind, name, want) in [
        (LayerKind::T, CHECK_T_DEGREE, (6, 0)),
        (LayerKind::H, CHECK_H_DEGREE, (2, 3)),
    ] {
        let bad = (0..g.sites.len())
            .filter(|&s| g.sites[s].kind == kind)
            .find(|&s| degree(s) != want);
        report.push(
            name,
            bad.map(|s| format!("site {s} has degree {:?}, expected {want:?}", degree(s))),
        );
    }

    let term_lists = g
        .five_body
        .iter()
        .map(|t| &t[..])
        .chain(g.hexagons.iter().map(|h| &h[..]));
    let (inc, f5, fh) = incidence_tables(g.sites.len(), n5, term_lists);
    let mut sorted_ok = None;
    for s in 0..g.sites.len() {
        let mut a = g.incidence.row(s).to_vec();
        let mut b = inc.row(s).to_vec();
        a.sort_unstable();
        b.sort_unstable();
        if a != b || f5.row(s) != g.flip_five.row(s) || fh.row(s) != g.flip_hex.row(s) {
            sorted_ok = Some(format!("incidence of site {s} disagrees with term tables"));
            break;
        }
    }
    report.push(CHECK_INCIDENCE, sorted_ok);

    let mut five_fail = None;
    'outer: for r in 0..spec.m as isize {
        for y in 0..spec.l as isize {
            for x in 0..spec.l as isize {
                for s in 0..2 {
                    let id = 2 * spec.layer_area() * r as usize + 2 * ix.cell(x, y) + s;
                    let corners = ix.triangle(x, y, s).map(|(a, b)| ix.t_site(r, a, b));
                    let mut want = vec![
                        corners[0],
                        corners[1],
                        corners[2],
                        ix.h_site(r, x, y, s),
                        ix.h_site(r - 1, x, y, s),
                    ];
                    let mut got = g.five_body.get(id).map(|t| t.to_vec()).unwrap_or_default();
                    want.sort_unstable();
                    got.sort_unstable();
                    if want != got {
                        five_fail = Some(format!("five-body term {id} has sites {got:?}"));
                        break 'outer;
                    }
                }
            }
        }
    }
    report.push(CHECK_FIVE_BODY, five_fail);

    let mut hex_fail = None;
    for (h, members) in g.hexagons.iter().enumerate() {
        let first = g.sites[members[0] as usize];
        let same_layer = members.iter().all(|&s| {
            let site = g.sites[s as usize];
            site.kind == LayerKind::H && site.round == first.round
        });
        let mut distinct = members.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if !same_layer || distinct.len() != 6 {
            hex_fail = Some(format!("hexagon {h} is not six distinct sites of one H layer"));
            break;
        }
        let center = h % spec.layer_area();
        let (cx, cy) = ((center % spec.l) as isize, (center / spec.l) as isize);
        let mut want: Vec<u32> = ix
            .ring(cx, cy)
            .iter()
            .map(|&(x, y, s)| ix.h_site(first.round as isize, x, y, s))
            .collect();
        want.sort_unstable();
        if want != distinct {
            hex_fail = Some(format!("hexagon {h} does not surround its center vertex"));
            break;
        }
    }
    report.push(CHECK_HEXAGON, hex_fail);

    let mut color_fail = None;
    'color: for (i, site) in g.sites.iter().enumerate() {
        if site.kind != LayerKind::T {
            continue;
        }
        let (x, y, r) = (site.x as isize, site.y as isize, site.round as isize);
        for (dx, dy) in [(1, 0), (0, 1), (1, -1)] {
            let j = ix.t_site(r, x + dx, y + dy) as usize;
            if site.color.is_none() || site.color == g.sites[j].color {
                color_fail = Some(format!("adjacent T sites {i} and {j} share a color"));
                break 'color;
            }
        }
    }
    if color_fail.is_none() {
        for (h, &c) in g.hexagon_colors.iter().enumerate() {
            let r = h / spec.layer_area();
            let center = h % spec.layer_area();
            let t = 3 * spec.layer_area() * r + center;
            if g.sites[t].color != Some(c) {
                color_fail = Some(format!("hexagon {h} color differs from its center"));
                break;
            }
        }
    }
    report.push(CHECK_COLORING, color_fail);

    let mut gauge_fail = None;
    let mut mult = vec![0u8; g.sites.len()];
    'gauge: for (gi, gen) in g.gauge_generators.iter().enumerate() {
        for &s in gen {
            mult[s as usize] += 1;
        }
        for t in 0..g.n_terms() {
            let overlap: u32 = g.term_sites(t).iter().map(|&s| mult[s as usize] as u32).sum();
            if overlap % 2 != 0 {
                gauge_fail = Some(format!("generator {gi} overlaps term {t} in {overlap} sites"));
                break 'gauge;
            }
        }
        for &s in gen {
            mult[s as usize] = 0;
        }
    }
    report.push(CHECK_GAUGE, gauge_fail);

    report
}

/// Text dump, format `tricolor-geometry 1`:
///
/// ```text
/// # tricolor-geometry 1 L=<L> M=<M> degenerate=<bool>
/// site <id> <T|H> <round> <x> <y> <up|down|-> <red|green|blue|->
/// term <id> <five|hex> <site ids...>
/// gauge <id> <site ids...>
/// ```
pub fn write_dump<W: Write>(g: &LatticeGeometry, mut out: W) -> Result<()> {
    let spec = g.spec;
    writeln!(
        out,
        "# tricolor-geometry 1 L={} M={} degenerate={}",
        spec.l, spec.m, spec.degenerate_ok
    )?;
    for (i, s) in g.sites.iter().enumerate() {
        let kind = match s.kind {
            LayerKind::T => "T",
            LayerKind::H => "H",
        };
        let sub = match s.sublattice {
            Some(Sublattice::Up) => "up",
            Some(Sublattice::Down) => "down",
            None => "-",
        };
        let color = s.color.map_or("-", Color::name);
        writeln!(out, "site {i} {kind} {} {} {} {sub} {color}", s.round, s.x, s.y)?;
    }
    for t in 0..g.n_terms() {
        let kind = match g.term_kind(t) {
            TermKind::FiveBody => "five",
            TermKind::Hexagon => "hex",
        };
        write!(out, "term {t} {kind}")?;
        for s in g.term_sites(t) {
            write!(out, " {s}")?;
        }
        writeln!(out)?;
    }
    for (i, gen) in g.gauge_generators.iter().enumerate() {
        write!(out, "gauge {i}")?;
        for s in gen {
            write!(out, " {s}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Rebuild a geometry from a dump. Incidence is recomputed from the term
/// lines; hexagon colors are taken from their center vertices.
pub fn read_dump<R: BufRead>(input: R) -> Result<LatticeGeometry> {
    let err = |line: usize, msg: String| Error::Parse {
        what: "geometry dump",
        line,
        msg,
    };
    let mut spec = None;
    let mut sites = Vec::new();
    let mut five_body = Vec::<[u32; 5]>::new();
    let mut hexagons = Vec::<[u32; 6]>::new();
    let mut gauge_generators = Vec::<[u32; 8]>::new();

    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = n + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let num = |i: usize| -> Result<usize> {
            fields
                .get(i)
                .ok_or_else(|| err(lineno, format!("missing field {i}")))?
                .parse::<usize>()
                .map_err(|e| err(lineno, format!("field {i}: {e}")))
        };
        match fields[0] {
            "#" => {
                if fields.get(1) != Some(&"tricolor-geometry") || fields.get(2) != Some(&"1") {
                    return Err(err(lineno, "unsupported header".into()));
                }
                let kv = |key: &str| -> Result<&str> {
                    fields[3..]
                        .iter()
                        .find_map(|f| f.strip_prefix(key))
                        .ok_or_else(|| err(lineno, format!("header lacks {key}")))
                };
                spec = Some(LatticeSpec {
                    l: kv("L=")?.parse().map_err(|_| err(lineno, "bad L".into()))?,
                    m: kv("M=")?.parse().map_err(|_| err(lineno, "bad M".into()))?,
                    degenerate_ok: kv("degenerate=")? == "true",
                });
            }
            "site" => {
                if num(1)? != sites.len() {
                    return Err(err(lineno, "site ids must be dense and ordered".into()));
                }
                let kind = match fields.get(2) {
                    Some(&"T") => LayerKind::T,
                    Some(&"H") => LayerKind::H,
                    _ => return Err(err(lineno, "site kind must be T or H".into())),
                };
                let sublattice = match fields.get(6) {
                    Some(&"up") => Some(Sublattice::Up),
                    Some(&"down") => Some(Sublattice::Down),
                    Some(&"-") => None,
                    _ => return Err(err(lineno, "bad sublattice".into())),
                };
                let color = match fields.get(7) {
                    Some(&"-") => None,
                    Some(c) => Some(Color::parse(c).ok_or_else(|| err(lineno, "bad color".into()))?),
                    None => return Err(err(lineno, "missing color".into())),
                };
                sites.push(Site {
                    kind,
                    round: num(3)?,
                    x: num(4)?,
                    y: num(5)?,
                    sublattice,
                    color,
                });
            }
            "term" => {
                let id = num(1)?;
                let members: Vec<u32> = (3..fields.len())
                    .map(|i| num(i).map(|v| v as u32))
                    .collect::<Result<_>>()?;
                match fields.get(2) {
                    Some(&"five") => {
                        if id != five_body.len() || members.len() != 5 {
                            return Err(err(lineno, "five-body term out of order or wrong size".into()));
                        }
                        five_body.push(members.try_into().unwrap());
                    }
                    Some(&"hex") => {
                        if id != five_body.len() + hexagons.len() || members.len() != 6 {
                            return Err(err(lineno, "hexagon term out of order or wrong size".into()));
                        }
                        hexagons.push(members.try_into().unwrap());
                    }
                    _ => return Err(err(lineno, "term kind must be five or hex".into())),
                }
            }
            "gauge" => {
                let members: Vec<u32> = (2..fields.len())
                    .map(|i| num(i).map(|v| v as u32))
                    .collect::<Result<_>>()?;
                let arr: [u32; 8] = members
                    .try_into()
                    .map_err(|_| err(lineno, "gauge generator needs 8 sites".into()))?;
                gauge_generators.push(arr);
            }
            other => return Err(err(lineno, format!("unknown record '{other}'"))),
        }
    }
    let spec = spec.ok_or_else(|| err(1, "missing header".into()))?;
    let n = sites.len();
    if let Some(bad) = five_body
        .iter()
        .flat_map(|t| t.iter())
        .chain(hexagons.iter().flat_map(|h| h.iter()))
        .chain(gauge_generators.iter().flat_map(|g| g.iter()))
        .find(|&&s| s as usize >= n)
    {
        return Err(Error::Shape(format!("site id {bad} out of range")));
    }
    let hexagon_colors = hexagons
        .iter()
        .enumerate()
        .map(|(h, _)| {
            let area = spec.layer_area();
            let t = 3 * area * (h / area) + h % area;
            sites.get(t).and_then(|s| s.color).unwrap_or(Color::Red)
        })
        .collect();
    let n5 = five_body.len();
    let term_lists = five_body
        .iter()
        .map(|t| &t[..])
        .chain(hexagons.iter().map(|h| &h[..]));
    let (incidence, flip_five, flip_hex) = incidence_tables(n, n5, term_lists);
    Ok(LatticeGeometry {
        spec,
        sites,
        five_body,
        hexagons,
        hexagon_colors,
        incidence,
        flip_five,
        flip_hex,
        gauge_generators,
    })
}
