//! Uniform cell-centred lattices with node masks for Ω and the exterior windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `[lo, hi]` (only the first `dim` components are used).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Window {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self { lo: [lo, 0.0], hi: [hi, 0.0] }
    }

    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { lo, hi }
    }

    fn contains(&self, x: &[f64; 2], dim: usize) -> bool {
        (0..dim).all(|d| x[d] >= self.lo[d] && x[d] <= self.hi[d])
    }
}

/// Classification of a lattice node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    Omega,
    Window1,
    Window2,
    /// Exterior node inside `B_{3r}(0)`.
    ExteriorCollar,
    Far,
}

/// Geometry description: the serializable half of a [`SpaceGrid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// The computational box is `[-half_width, half_width]^dim`.
    pub half_width: f64,
    pub cells_per_axis: usize,
    /// Ω is the open ball `B_r(0)`.
    pub r_omega: f64,
    pub w1: Window,
    pub w2: Window,
    /// Enforce the windows-outside-`B_{3r}` hypothesis needed for magnetic recovery.
    #[serde(default)]
    pub magnetic: bool,
}

impl GridSpec {
    /// Default 1D layout: box `[-1, 1]`, `r = 1/4`, both windows right of `B_{3r}`.
    pub fn default_1d(cells: usize) -> Self {
        Self {
            dim: 1,
            half_width: 1.0,
            cells_per_axis: cells,
            r_omega: 0.25,
            w1: Window::interval(0.76, 0.875),
            w2: Window::interval(0.885, 1.0),
            magnetic: true,
        }
    }

    /// 1D layout for potential-only problems: wide windows on opposite sides of Ω.
    /// The magnetic hypotheses are not required there and are not enforced.
    pub fn potential_1d(cells: usize) -> Self {
        Self {
            dim: 1,
            half_width: 1.0,
            cells_per_axis: cells,
            r_omega: 0.25,
            w1: Window::interval(0.35, 0.85),
            w2: Window::interval(-0.85, -0.35),
            magnetic: false,
        }
    }

    /// Default 2D layout: windows in the two upper corners.
    pub fn default_2d(cells: usize) -> Self {
        Self {
            dim: 2,
            half_width: 1.0,
            cells_per_axis: cells,
            r_omega: 0.25,
            w1: Window::rect([0.6, 0.6], [1.0, 1.0]),
            w2: Window::rect([-1.0, 0.6], [-0.6, 1.0]),
            magnetic: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceGrid {
    spec: GridSpec,
    h: f64,
    coords: Vec<[f64; 2]>,
    classes: Vec<NodeClass>,
    omega: Vec<usize>,
    w1: Vec<usize>,
    w2: Vec<usize>,
    omega_slot: Vec<Option<usize>>,
}

impl SpaceGrid {
    pub fn new(spec: GridSpec) -> Result<Self> {
        let dim = spec.dim;
        if !(dim == 1 || dim == 2) {
            return Err(Error::Geometry(format!("dimension must be 1 or 2, got {dim}")));
        }
        if !(spec.half_width > 0.0) || spec.cells_per_axis < 4 {
            return Err(Error::Geometry("box must be nonempty with at least 4 cells per axis".into()));
        }
        let l = spec.half_width;
        let r = spec.r_omega;
        if !(r > 0.0 && r < l) {
            return Err(Error::Geometry(format!(
                "Omega radius {r} must lie strictly inside the box half-width {l}"
            )));
        }
        let n = spec.cells_per_axis;
        let h = 2.0 * l / n as f64;
        let total = n.pow(dim as u32);
        let mut coords = Vec::with_capacity(total);
        for idx in 0..total {
            let ix = idx % n;
            let iy = idx / n;
            let x = -l + (ix as f64 + 0.5) * h;
            let y = if dim == 2 { -l + (iy as f64 + 0.5) * h } else { 0.0 };
            coords.push([x, y]);
        }
        let mut classes = Vec::with_capacity(total);
        let (mut omega, mut w1, mut w2) = (Vec::new(), Vec::new(), Vec::new());
        let mut omega_slot = vec![None; total];
        for (i, x) in coords.iter().enumerate() {
            let norm = norm(x);
            let in_w1 = spec.w1.contains(x, dim);
            let in_w2 = spec.w2.contains(x, dim);
            let class = if norm < r {
                if in_w1 || in_w2 {
                    return Err(Error::Geometry(format!(
                        "window overlaps Omega at node {i} (|x| = {norm:.4} < r = {r})"
                    )));
                }
                omega_slot[i] = Some(omega.len());
                omega.push(i);
                NodeClass::Omega
            } else if in_w1 && in_w2 {
                return Err(Error::Geometry(format!("windows W1 and W2 overlap at node {i}")));
            } else if in_w1 {
                w1.push(i);
                NodeClass::Window1
            } else if in_w2 {
                w2.push(i);
                NodeClass::Window2
            } else if norm < 3.0 * r {
                NodeClass::ExteriorCollar
            } else {
                NodeClass::Far
            };
            classes.push(class);
        }
        if omega.is_empty() {
            return Err(Error::Geometry("Omega contains no lattice nodes".into()));
        }
        if w1.is_empty() || w2.is_empty() {
            return Err(Error::Geometry("windows W1 and W2 must each contain lattice nodes".into()));
        }
        let grid = Self { spec, h, coords, classes, omega, w1, w2, omega_slot };
        if grid.spec.magnetic {
            grid.check_magnetic_hypotheses()?;
        }
        Ok(grid)
    }

    /// Windows outside `B_{3r}(0)` and a midpoint of `W1 × W2` outside Ω.
    pub fn check_magnetic_hypotheses(&self) -> Result<()> {
        let r = self.spec.r_omega;
        for &i in self.w1.iter().chain(&self.w2) {
            if norm(&self.coords[i]) <= 3.0 * r {
                return Err(Error::Geometry(format!(
                    "window node {i} lies in B_3r(0) (|x| = {:.4}, 3r = {:.4}); the magnetic \
                     recovery hypothesis W_j ∩ B_3r(0) = ∅ is violated",
                    norm(&self.coords[i]),
                    3.0 * r
                )));
            }
        }
        let witness = self.w1.iter().any(|&i| {
            self.w2.iter().any(|&j| {
                let m = midpoint(&self.coords[i], &self.coords[j]);
                norm(&m) >= r
            })
        });
        if !witness {
            return Err(Error::Geometry(
                "every midpoint of W1 × W2 lies in Omega; need W^(1,2) \\ Omega ≠ ∅".into(),
            ));
        }
        Ok(())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Cell volume `h^n`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.spec.dim as i32)
    }

    pub fn half_width(&self) -> f64 {
        self.spec.half_width
    }

    pub fn r_omega(&self) -> f64 {
        self.spec.r_omega
    }

    pub fn cells_per_axis(&self) -> usize {
        self.spec.cells_per_axis
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coord(&self, i: usize) -> [f64; 2] {
        self.coords[i]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn class(&self, i: usize) -> NodeClass {
        self.classes[i]
    }

    pub fn omega(&self) -> &[usize] {
        &self.omega
    }

    pub fn w1(&self) -> &[usize] {
        &self.w1
    }

    pub fn w2(&self) -> &[usize] {
        &self.w2
    }

    /// Position of node `i` in the Ω ordering, if it is an Ω node.
    pub fn omega_slot(&self, i: usize) -> Option<usize> {
        self.omega_slot[i]
    }

    pub fn in_omega_point(&self, x: &[f64; 2]) -> bool {
        norm(x) < self.spec.r_omega
    }

    /// Lattice index of the node with integer coordinates, if inside the box.
    pub fn node_at(&self, ix: isize, iy: isize) -> Option<usize> {
        let n = self.spec.cells_per_axis as isize;
        if ix < 0 || ix >= n {
            return None;
        }
        if self.spec.dim == 1 {
            return (iy == 0).then_some(ix as usize);
        }
        if iy < 0 || iy >= n {
            return None;
        }
        Some((iy * n + ix) as usize)
    }

    /// Integer lattice coordinates of node `i`.
    pub fn lattice(&self, i: usize) -> (isize, isize) {
        let n = self.spec.cells_per_axis;
        ((i % n) as isize, (i / n) as isize)
    }

    /// Stable digest of the geometry, used to tie artifacts together.
    pub fn fingerprint(&self) -> String {
        crate::io::sha256_hex(serde_json::to_string(&self.spec).unwrap_or_default().as_bytes())
    }
}

pub(crate) fn norm(x: &[f64; 2]) -> f64 {
    x[0].hypot(x[1])
}

pub(crate) fn midpoint(x: &[f64; 2], y: &[f64; 2]) -> [f64; 2] {
    [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])]
}
