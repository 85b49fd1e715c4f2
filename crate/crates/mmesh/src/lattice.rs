//! Lattice geometry and scene storage.
//!
//! Nodes of an m x n lattice are addressed (i, j) with 1 <= i <= m, row 1 at the
//! top. The raster key n*i + j orders nodes left-to-right, top-to-bottom; a node
//! u is a predecessor of v exactly when its key is smaller. Template offsets are
//! restricted to the strict past half-plane psi = {row < 0} U {row = 0, col < 0},
//! so every translated neighborhood lies among a node's predecessors and the
//! joint density factorizes in raster order.
//!
//! Scenes carry a value bit and an observed flag per cell. Unobserved cells still
//! hold a value: it is the sampler's current fill-in. Cells outside the lattice
//! count as 0 wherever a neighborhood sticks out over the boundary.

use std::fmt;
use std::path::Path;

use thiserror::Error;

/// A relative lattice displacement (row, col), row positive downwards.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Offset {
    pub row: i32,
    pub col: i32,
}

impl Offset {
    pub fn new(row: i32, col: i32) -> Self {
        Offset { row, col }
    }

    /// Membership in the strict past half-plane psi.
    pub fn in_psi(self) -> bool {
        self.row < 0 || (self.row == 0 && self.col < 0)
    }

    pub fn norm(self) -> f64 {
        ((self.row as f64).powi(2) + (self.col as f64).powi(2)).sqrt()
    }

    pub fn negate(self) -> Self {
        Offset::new(-self.row, -self.col)
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Lattice shape. Zero dims are allowed and denote the empty lattice.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LatticeDims {
    pub m: usize,
    pub n: usize,
}

impl LatticeDims {
    pub fn new(m: usize, n: usize) -> Self {
        LatticeDims { m, n }
    }

    pub fn len(&self) -> usize {
        self.m * self.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Whether (i, j) in signed coordinates lies on the lattice.
    pub fn contains(&self, i: i64, j: i64) -> bool {
        i >= 1 && j >= 1 && i <= self.m as i64 && j <= self.n as i64
    }
}

/// A lattice node, 1-based: i in [1, m], j in [1, n].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NodeId {
    pub i: usize,
    pub j: usize,
}

impl NodeId {
    pub fn new(i: usize, j: usize) -> Self {
        NodeId { i, j }
    }
}

/// Raster-order key n*i + j; predecessors are exactly the nodes with smaller key.
pub fn lex_key(v: NodeId, dims: LatticeDims) -> usize {
    assert!(
        dims.contains(v.i as i64, v.j as i64),
        "node ({},{}) out of bounds for {}x{} lattice",
        v.i,
        v.j,
        dims.m,
        dims.n
    );
    dims.n * v.i + v.j
}

/// Elementwise translation of an offset set to node v; results may leave the lattice.
pub fn translate(offsets: &[Offset], v: NodeId) -> Vec<(i64, i64)> {
    offsets
        .iter()
        .map(|t| (v.i as i64 + t.row as i64, v.j as i64 + t.col as i64))
        .collect()
}

/// The in-lattice translated template at v. Always empty at (1, 1).
pub fn sequential_neighborhood(tau: &[Offset], v: NodeId, dims: LatticeDims) -> Vec<NodeId> {
    for t in tau {
        assert!(
            t.in_psi(),
            "template offset {t} is not in the past half-plane"
        );
    }
    let mut out: Vec<NodeId> = translate(tau, v)
        .into_iter()
        .filter(|&(i, j)| dims.contains(i, j))
        .map(|(i, j)| NodeId::new(i as usize, j as usize))
        .collect();
    out.sort();
    out
}

/// All nodes u whose neighborhood contains v: the negated-template translation.
pub fn reverse_dependents(tau: &[Offset], v: NodeId, dims: LatticeDims) -> Vec<NodeId> {
    let negated: Vec<Offset> = tau.iter().map(|t| t.negate()).collect();
    let mut out: Vec<NodeId> = translate(&negated, v)
        .into_iter()
        .filter(|&(i, j)| dims.contains(i, j))
        .map(|(i, j)| NodeId::new(i as usize, j as usize))
        .collect();
    out.sort();
    out
}

/// All past-half-plane offsets strictly inside the disk of radius r, sorted.
pub fn disk_template(r: f64) -> Vec<Offset> {
    assert!(r > 0.0, "disk radius must be positive");
    let reach = r.ceil() as i32;
    let mut out = Vec::new();
    for row in -reach..=0 {
        for col in -reach..=reach {
            let t = Offset::new(row, col);
            if t.in_psi() && t.norm() < r {
                out.push(t);
            }
        }
    }
    out.sort();
    out
}

/// The offsets of tau whose translated cell is on-lattice and currently 1.
/// Off-lattice neighbors count as 0.
pub fn active_offsets(scene: &Scene, tau: &[Offset], v: NodeId) -> Vec<Offset> {
    let mut out = Vec::new();
    for t in tau {
        debug_assert!(
            t.in_psi(),
            "template offset {t} is not in the past half-plane"
        );
        let (i, j) = (v.i as i64 + t.row as i64, v.j as i64 + t.col as i64);
        if scene.dims().contains(i, j) && scene.value(NodeId::new(i as usize, j as usize)) == 1 {
            out.push(*t);
        }
    }
    out.sort();
    out
}

#[derive(Error, Debug)]
pub enum SceneError {
    #[error("scene header must be `MMM-SCENE v1 <m> <n>`, got {0:?}")]
    BadHeader(String),
    #[error("scene row {row} has {got} cells, expected {want}")]
    BadRowLength { row: usize, got: usize, want: usize },
    #[error("scene has {got} rows, expected {want}")]
    BadRowCount { got: usize, want: usize },
    #[error("invalid cell character {ch:?} at row {row}, col {col}")]
    BadCell { ch: char, row: usize, col: usize },
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

/// A binary scene: per-cell value bit plus observed flag.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Scene {
    dims: LatticeDims,
    values: Vec<u8>,
    observed: Vec<bool>,
}

impl Scene {
    /// Scene with every cell set to `value` and the given observed flag.
    pub fn filled(dims: LatticeDims, value: u8, observed: bool) -> Self {
        assert!(value <= 1, "cell values are bits");
        Scene {
            dims,
            values: vec![value; dims.len()],
            observed: vec![observed; dims.len()],
        }
    }

    /// The 0 x 0 scene: no cells, no likelihood factors.
    pub fn empty() -> Self {
        Scene::filled(LatticeDims::new(0, 0), 0, true)
    }

    pub fn dims(&self) -> LatticeDims {
        self.dims
    }

    #[inline]
    pub fn idx(&self, v: NodeId) -> usize {
        debug_assert!(self.dims.contains(v.i as i64, v.j as i64));
        (v.i - 1) * self.dims.n + (v.j - 1)
    }

    #[inline]
    pub fn value(&self, v: NodeId) -> u8 {
        self.values[self.idx(v)]
    }

    #[inline]
    pub fn value_at(&self, idx: usize) -> u8 {
        self.values[idx]
    }

    pub fn set_value(&mut self, v: NodeId, value: u8) {
        assert!(value <= 1, "cell values are bits");
        let idx = self.idx(v);
        self.values[idx] = value;
    }

    pub fn set_value_at(&mut self, idx: usize, value: u8) {
        self.values[idx] = value;
    }

    #[inline]
    pub fn is_observed(&self, v: NodeId) -> bool {
        self.observed[self.idx(v)]
    }

    pub fn set_observed(&mut self, v: NodeId, flag: bool) {
        let idx = self.idx(v);
        self.observed[idx] = flag;
    }

    /// All nodes in raster order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        let n = self.dims.n;
        (0..self.dims.len()).map(move |k| NodeId::new(k / n + 1, k % n + 1))
    }

    pub fn unobserved_nodes(&self) -> Vec<NodeId> {
        self.nodes().filter(|&v| !self.is_observed(v)).collect()
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&b| b == 1).count()
    }

    /// Grow the scene by `margin` unobserved zero cells on every side.
    pub fn extend(&self, margin: usize) -> Scene {
        let dims = LatticeDims::new(self.dims.m + 2 * margin, self.dims.n + 2 * margin);
        let mut out = Scene::filled(dims, 0, false);
        for v in self.nodes() {
            let w = NodeId::new(v.i + margin, v.j + margin);
            out.set_value(w, self.value(v));
            out.set_observed(w, self.is_observed(v));
        }
        out
    }

    /// Drop a uniform border of `margin` cells; inverse of `extend`.
    pub fn crop(&self, margin: usize) -> Scene {
        assert!(
            self.dims.m >= 2 * margin && self.dims.n >= 2 * margin,
            "crop margin {margin} exceeds scene size {}x{}",
            self.dims.m,
            self.dims.n
        );
        let dims = LatticeDims::new(self.dims.m - 2 * margin, self.dims.n - 2 * margin);
        let mut out = Scene::filled(dims, 0, false);
        for v in out.clone().nodes() {
            let w = NodeId::new(v.i + margin, v.j + margin);
            out.set_value(v, self.value(w));
            out.set_observed(v, self.is_observed(w));
        }
        out
    }

    /// Parse the `MMM-SCENE v1` text format. `?` cells load as unobserved zeros.
    pub fn parse(text: &str) -> Result<Scene, SceneError> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").to_string();
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (m, n) = match parts.as_slice() {
            ["MMM-SCENE", "v1", m, n] => match (m.parse::<usize>(), n.parse::<usize>()) {
                (Ok(m), Ok(n)) => (m, n),
                _ => return Err(SceneError::BadHeader(header)),
            },
            _ => return Err(SceneError::BadHeader(header)),
        };
        let mut scene = Scene::filled(LatticeDims::new(m, n), 0, true);
        let mut rows = 0;
        for (r, line) in lines.enumerate() {
            if r >= m {
                if line.trim().is_empty() {
                    continue;
                }
                return Err(SceneError::BadRowCount {
                    got: r + 1,
                    want: m,
                });
            }
            let cells: Vec<char> = line.chars().collect();
            if cells.len() != n {
                return Err(SceneError::BadRowLength {
                    row: r + 1,
                    got: cells.len(),
                    want: n,
                });
            }
            for (c, ch) in cells.into_iter().enumerate() {
                let v = NodeId::new(r + 1, c + 1);
                match ch {
                    '0' => scene.set_value(v, 0),
                    '1' => scene.set_value(v, 1),
                    '?' => {
                        scene.set_value(v, 0);
                        scene.set_observed(v, false);
                    }
                    _ => {
                        return Err(SceneError::BadCell {
                            ch,
                            row: r + 1,
                            col: c + 1,
                        })
                    }
                }
            }
            rows += 1;
        }
        if rows != m {
            return Err(SceneError::BadRowCount { got: rows, want: m });
        }
        Ok(scene)
    }

    /// Render in the text format: observed cells as their bit, unobserved as `?`.
    pub fn render(&self) -> String {
        self.render_with(|v| {
            if self.is_observed(v) {
                if self.value(v) == 1 {
                    '1'
                } else {
                    '0'
                }
            } else {
                '?'
            }
        })
    }

    /// Render every cell's current value bit, dropping observedness. Used for
    /// complete realizations such as a chain's final fill-in state.
    pub fn render_realization(&self) -> String {
        self.render_with(|v| if self.value(v) == 1 { '1' } else { '0' })
    }

    fn render_with(&self, cell: impl Fn(NodeId) -> char) -> String {
        let mut out = format!("MMM-SCENE v1 {} {}\n", self.dims.m, self.dims.n);
        for i in 1..=self.dims.m {
            for j in 1..=self.dims.n {
                out.push(cell(NodeId::new(i, j)));
            }
            out.push('\n');
        }
        out
    }

    pub fn read_file(path: &Path) -> Result<Scene, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Scene::parse(&text)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), SceneError> {
        std::fs::write(path, self.render()).map_err(|source| SceneError::Write {
            path: path.display().to_string(),
            source,
        })
    }
}
