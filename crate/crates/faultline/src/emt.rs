//! Fixed-step nodal EMT solver.
//!
//! Every dynamic element is replaced by its trapezoidal companion model: a
//! conductance in parallel with a history current source. Branch current is
//! always `i = g * v_branch + j`, with `v_branch = v_from - v_to` and `j`
//! the Norton injection (history current for storage elements, `-g * emf`
//! for sources). Kirchhoff's current law then gives the symmetric
//! positive-definite system `G v = i_ext - sum(j)`, factorized once with a
//! dense Cholesky decomposition and re-factorized only when a conductance
//! changes (switch toggles).
//!
//! Companion updates after each solve:
//!
//! * inductor: `g = h / (2 L)`, `j' = i + g v`
//! * capacitor: `g = 2 C / h`, `j' = -i - g v`
//!
//! Mutually coupled multi-conductor elements (transmission-line sections,
//! transformer winding pairs, filter banks) use the same construction with
//! matrices: a series block `v = R i + L di/dt` becomes `i' = G v' + hist`
//! with `G = (h/2) (L + (h/2) R)^-1` and
//! `hist = G v + (L + (h/2) R)^-1 (L - (h/2) R) i`; a shunt capacitance
//! block becomes `G = (2/h) C`, `hist' = -i - G v`. Both keep the nodal
//! matrix symmetric positive definite.
//!
//! The solver is deliberately single-threaded and allocation-free per step;
//! identical inputs reproduce bit-identical trajectories.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

/// Node handle. `NodeId::GROUND` is the reference node and carries no
/// equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const GROUND: NodeId = NodeId(usize::MAX);

    pub fn is_ground(self) -> bool {
        self == Self::GROUND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BranchId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupId(pub usize);

/// Scalar branch element kinds.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchKind {
    Resistor { ohms: f64 },
    /// `i_init`/`v_init` seed the trapezoidal history with the element
    /// current and branch voltage at t = 0+ (snapshot initialization).
    /// Leaving them zero starts from rest; a drive that jumps at t = 0 then
    /// carries a one-step startup artifact, as in any trapezoidal EMT code.
    Inductor { henries: f64, i_init: f64, v_init: f64 },
    Capacitor { farads: f64, v_init: f64 },
    /// Ideal EMF in series with a source resistance. The EMF is updated by
    /// the caller each step; changing it does not touch the matrix.
    VoltageSourceBehindR { ohms: f64, emf: f64 },
    /// Fixed current forced from `from` to `to` regardless of voltage.
    ControlledCurrentSource { amps: f64 },
    /// Resistive switch; `closed` selects between the two resistances and a
    /// toggle forces a matrix restamp.
    Switch { r_on: f64, r_off: f64, closed: bool },
}

/// Scalar companion branch between two nodes.
#[derive(Debug, Clone)]
pub struct CompanionBranch {
    pub from: NodeId,
    pub to: NodeId,
    pub kind: BranchKind,
    conductance: f64,
    history: f64,
    current: f64,
}

impl CompanionBranch {
    pub fn new(from: NodeId, to: NodeId, kind: BranchKind) -> Self {
        Self { from, to, kind, conductance: 0.0, history: 0.0, current: 0.0 }
    }

    /// Stamped companion conductance in siemens.
    pub fn conductance(&self) -> f64 {
        self.conductance
    }

    /// History current source (storage elements only).
    pub fn history_current(&self) -> f64 {
        self.history
    }

    /// Branch current solved at the most recent step, `from` to `to`.
    pub fn current(&self) -> f64 {
        self.current
    }

    fn init(&mut self, h: f64) -> Result<(), SolverError> {
        let g = match &self.kind {
            BranchKind::Resistor { ohms } => {
                require_positive(*ohms, "resistor ohms")?;
                1.0 / ohms
            }
            BranchKind::Inductor { henries, i_init, v_init } => {
                require_positive(*henries, "inductor henries")?;
                let g = h / (2.0 * henries);
                self.history = *i_init + g * v_init;
                g
            }
            BranchKind::Capacitor { farads, v_init } => {
                require_positive(*farads, "capacitor farads")?;
                let g = 2.0 * farads / h;
                self.history = -g * v_init;
                g
            }
            BranchKind::VoltageSourceBehindR { ohms, .. } => {
                require_positive(*ohms, "source ohms")?;
                1.0 / ohms
            }
            BranchKind::ControlledCurrentSource { .. } => 0.0,
            BranchKind::Switch { r_on, r_off, closed } => {
                require_positive(*r_on, "switch r_on")?;
                require_positive(*r_off, "switch r_off")?;
                1.0 / if *closed { *r_on } else { *r_off }
            }
        };
        self.conductance = g;
        Ok(())
    }

    /// Norton injection for the next solve.
    fn injection(&self) -> f64 {
        match &self.kind {
            BranchKind::Resistor { .. } | BranchKind::Switch { .. } => 0.0,
            BranchKind::Inductor { .. } | BranchKind::Capacitor { .. } => self.history,
            BranchKind::VoltageSourceBehindR { emf, .. } => -self.conductance * emf,
            BranchKind::ControlledCurrentSource { amps } => *amps,
        }
    }

    fn update_after_solve(&mut self, v_branch: f64) {
        let g = self.conductance;
        match &self.kind {
            BranchKind::Inductor { .. } => {
                let i = g * v_branch + self.history;
                self.history = i + g * v_branch;
                self.current = i;
            }
            BranchKind::Capacitor { .. } => {
                let i = g * v_branch + self.history;
                self.history = -i - g * v_branch;
                self.current = i;
            }
            BranchKind::Resistor { .. } | BranchKind::Switch { .. } => {
                self.current = g * v_branch;
            }
            BranchKind::VoltageSourceBehindR { emf, .. } => {
                self.current = g * (v_branch - emf);
            }
            BranchKind::ControlledCurrentSource { amps } => {
                self.current = *amps;
            }
        }
    }
}

#[derive(Debug, Clone)]
enum GroupKind {
    /// Series `v = R i + L di/dt` block. `hist_update` caches
    /// `(L + (h/2) R)^-1 (L - (h/2) R)`.
    SeriesRl { hist_update: DMatrix<f64> },
    /// Shunt `i = C dv/dt` block.
    ShuntC,
}

/// Mutually coupled multi-conductor companion element. Conductor `k` runs
/// from `from[k]` to `to[k]`; the conductance coupling is the full matrix
/// `g`.
#[derive(Debug, Clone)]
pub struct CoupledGroup {
    pub from: Vec<NodeId>,
    pub to: Vec<NodeId>,
    kind: GroupKind,
    g: DMatrix<f64>,
    history: DVector<f64>,
    current: DVector<f64>,
    v_scratch: DVector<f64>,
}

impl CoupledGroup {
    /// Series resistance/inductance block. `r` and `l` are symmetric
    /// per-conductor matrices (ohms, henries).
    pub fn series_rl(
        from: Vec<NodeId>,
        to: Vec<NodeId>,
        r: DMatrix<f64>,
        l: DMatrix<f64>,
        h: f64,
    ) -> Result<Self, SolverError> {
        let n = from.len();
        check_group_shape(n, &to, &r)?;
        check_group_shape(n, &to, &l)?;
        let a = &l + &r * (h / 2.0);
        let a_inv = a
            .try_inverse()
            .ok_or_else(|| SolverError::NonPhysical("singular series R-L block".into()))?;
        let g = &a_inv * (h / 2.0);
        let hist_update = &a_inv * (&l - &r * (h / 2.0));
        Ok(Self {
            from,
            to,
            kind: GroupKind::SeriesRl { hist_update },
            g,
            history: DVector::zeros(n),
            current: DVector::zeros(n),
            v_scratch: DVector::zeros(n),
        })
    }

    /// Shunt capacitance block (farads).
    pub fn shunt_c(
        from: Vec<NodeId>,
        to: Vec<NodeId>,
        c: DMatrix<f64>,
        h: f64,
    ) -> Result<Self, SolverError> {
        let n = from.len();
        check_group_shape(n, &to, &c)?;
        let g = c * (2.0 / h);
        Ok(Self {
            from,
            to,
            kind: GroupKind::ShuntC,
            g,
            history: DVector::zeros(n),
            current: DVector::zeros(n),
            v_scratch: DVector::zeros(n),
        })
    }

    pub fn len(&self) -> usize {
        self.from.len()
    }

    pub fn is_empty(&self) -> bool {
        self.from.is_empty()
    }

    /// Conductor current at the most recent step, `from[k]` to `to[k]`.
    pub fn current(&self, k: usize) -> f64 {
        self.current[k]
    }

    pub fn conductance(&self) -> &DMatrix<f64> {
        &self.g
    }

    fn update_after_solve(&mut self) {
        // v_scratch holds the fresh branch voltages.
        let i = &self.g * &self.v_scratch + &self.history;
        match &self.kind {
            GroupKind::SeriesRl { hist_update } => {
                self.history = &self.g * &self.v_scratch + hist_update * &i;
            }
            GroupKind::ShuntC => {
                self.history = -&i - &self.g * &self.v_scratch;
            }
        }
        self.current = i;
    }
}

fn check_group_shape(n: usize, to: &[NodeId], m: &DMatrix<f64>) -> Result<(), SolverError> {
    if to.len() != n || m.nrows() != n || m.ncols() != n || n == 0 {
        return Err(SolverError::NonPhysical(format!(
            "coupled group shape mismatch: {} conductors, {} returns, {}x{} matrix",
            n,
            to.len(),
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn require_positive(x: f64, what: &str) -> Result<(), SolverError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(SolverError::NonPhysical(format!("{what} must be positive and finite, got {x}")))
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("branch {branch} references node {node}, but the system has {node_count} nodes")]
    InvalidNode { branch: usize, node: usize, node_count: usize },
    #[error("nodes {nodes:?} have no conductive path to ground")]
    FloatingNodes { nodes: Vec<usize> },
    #[error("conductance matrix is singular or not positive definite")]
    Singular,
    #[error("non-physical element: {0}")]
    NonPhysical(String),
    #[error("non-finite solution at t = {t:.6e} s, worst node {node} = {value:.3e}")]
    NonFinite { t: f64, node: usize, value: f64 },
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("branch {0} is not a switch")]
    NotASwitch(usize),
    #[error("branch {0} is not a source")]
    NotASource(usize),
}

/// Incremental system description. Allocate nodes, add elements, then
/// [`SystemBuilder::build`].
#[derive(Debug, Default)]
pub struct SystemBuilder {
    node_count: usize,
    branches: Vec<CompanionBranch>,
    groups: Vec<CoupledGroup>,
}

impl SystemBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc_node(&mut self) -> NodeId {
        let id = NodeId(self.node_count);
        self.node_count += 1;
        id
    }

    pub fn alloc_triple(&mut self) -> [NodeId; 3] {
        [self.alloc_node(), self.alloc_node(), self.alloc_node()]
    }

    pub fn add_branch(&mut self, from: NodeId, to: NodeId, kind: BranchKind) -> BranchId {
        let id = BranchId(self.branches.len());
        self.branches.push(CompanionBranch::new(from, to, kind));
        id
    }

    pub fn add_group(&mut self, group: CoupledGroup) -> GroupId {
        let id = GroupId(self.groups.len());
        self.groups.push(group);
        id
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn build(self, h: f64) -> Result<SolverSystem, SolverError> {
        SolverSystem::new(self.branches, self.groups, self.node_count, h)
    }
}

/// Builds a solver from scalar branches only.
pub fn build_system(
    branches: Vec<CompanionBranch>,
    node_count: usize,
    h: f64,
) -> Result<SolverSystem, SolverError> {
    SolverSystem::new(branches, Vec::new(), node_count, h)
}

/// Factorized nodal system ready for time stepping.
#[derive(Debug)]
pub struct SolverSystem {
    branches: Vec<CompanionBranch>,
    groups: Vec<CoupledGroup>,
    node_count: usize,
    h: f64,
    t: f64,
    matrix: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    voltages: DVector<f64>,
    rhs: DVector<f64>,
}

impl SolverSystem {
    fn new(
        mut branches: Vec<CompanionBranch>,
        groups: Vec<CoupledGroup>,
        node_count: usize,
        h: f64,
    ) -> Result<Self, SolverError> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(SolverError::NonPhysical(format!("timestep must be positive, got {h}")));
        }
        for (idx, b) in branches.iter().enumerate() {
            validate_node(b.from, idx, node_count)?;
            validate_node(b.to, idx, node_count)?;
        }
        for (idx, g) in groups.iter().enumerate() {
            for n in g.from.iter().chain(g.to.iter()) {
                validate_node(*n, idx, node_count)?;
            }
        }
        for b in branches.iter_mut() {
            b.init(h)?;
        }
        check_connectivity(&branches, &groups, node_count)?;

        let mut sys = Self {
            branches,
            groups,
            node_count,
            h,
            t: 0.0,
            matrix: DMatrix::zeros(node_count, node_count),
            // Placeholder; restamp() installs the real factorization.
            chol: Cholesky::new(DMatrix::identity(1, 1)).unwrap(),
            voltages: DVector::zeros(node_count),
            rhs: DVector::zeros(node_count),
        };
        sys.restamp()?;
        Ok(sys)
    }

    fn restamp(&mut self) -> Result<(), SolverError> {
        self.matrix.fill(0.0);
        for b in &self.branches {
            stamp_pair(&mut self.matrix, b.from, b.to, b.from, b.to, b.conductance);
        }
        for grp in &self.groups {
            let n = grp.len();
            for r in 0..n {
                for c in 0..n {
                    stamp_pair(
                        &mut self.matrix,
                        grp.from[r],
                        grp.to[r],
                        grp.from[c],
                        grp.to[c],
                        grp.g[(r, c)],
                    );
                }
            }
        }
        self.chol = Cholesky::new(self.matrix.clone()).ok_or(SolverError::Singular)?;
        Ok(())
    }

    /// Advances one step. `injections` are external nodal current sources
    /// (amperes into the node) applied over this step.
    pub fn step(&mut self, injections: &[(NodeId, f64)]) -> Result<(), SolverError> {
        self.rhs.fill(0.0);
        for (node, amps) in injections {
            if !amps.is_finite() {
                return Err(SolverError::NonFiniteInput(format!(
                    "injection at node {:?}",
                    node
                )));
            }
            if !node.is_ground() {
                self.rhs[node.0] += amps;
            }
        }
        for b in &self.branches {
            let j = b.injection();
            if !b.from.is_ground() {
                self.rhs[b.from.0] -= j;
            }
            if !b.to.is_ground() {
                self.rhs[b.to.0] += j;
            }
        }
        for grp in &self.groups {
            for k in 0..grp.len() {
                let j = grp.history[k];
                if !grp.from[k].is_ground() {
                    self.rhs[grp.from[k].0] -= j;
                }
                if !grp.to[k].is_ground() {
                    self.rhs[grp.to[k].0] += j;
                }
            }
        }

        let solution = self.chol.solve(&self.rhs);
        self.t += self.h;
        for (idx, v) in solution.iter().enumerate() {
            if !v.is_finite() {
                return Err(SolverError::NonFinite { t: self.t, node: idx, value: *v });
            }
        }
        self.voltages = solution;

        for b in &mut self.branches {
            let v = branch_voltage_of(&self.voltages, b.from, b.to);
            b.update_after_solve(v);
        }
        for grp in &mut self.groups {
            for k in 0..grp.len() {
                grp.v_scratch[k] = branch_voltage_of(&self.voltages, grp.from[k], grp.to[k]);
            }
            grp.update_after_solve();
        }
        Ok(())
    }

    /// Toggles a switch. The matrix is restamped from scratch and
    /// refactorized, so the same sequence of states reproduces bit-identical
    /// matrices.
    pub fn set_switch(&mut self, id: BranchId, want_closed: bool) -> Result<(), SolverError> {
        let b = self
            .branches
            .get_mut(id.0)
            .ok_or(SolverError::NotASwitch(id.0))?;
        match &mut b.kind {
            BranchKind::Switch { r_on, r_off, closed } => {
                if *closed == want_closed {
                    return Ok(());
                }
                *closed = want_closed;
                b.conductance = 1.0 / if want_closed { *r_on } else { *r_off };
            }
            _ => return Err(SolverError::NotASwitch(id.0)),
        }
        self.restamp()
    }

    /// Updates a source EMF for the next step. O(1); no refactorization.
    pub fn set_source_emf(&mut self, id: BranchId, emf: f64) -> Result<(), SolverError> {
        if !emf.is_finite() {
            return Err(SolverError::NonFiniteInput(format!("emf on branch {}", id.0)));
        }
        let b = self
            .branches
            .get_mut(id.0)
            .ok_or(SolverError::NotASource(id.0))?;
        match &mut b.kind {
            BranchKind::VoltageSourceBehindR { emf: e, .. } => {
                *e = emf;
                Ok(())
            }
            _ => Err(SolverError::NotASource(id.0)),
        }
    }

    /// Updates a controlled current source for the next step.
    pub fn set_source_current(&mut self, id: BranchId, amps: f64) -> Result<(), SolverError> {
        if !amps.is_finite() {
            return Err(SolverError::NonFiniteInput(format!("current on branch {}", id.0)));
        }
        let b = self
            .branches
            .get_mut(id.0)
            .ok_or(SolverError::NotASource(id.0))?;
        match &mut b.kind {
            BranchKind::ControlledCurrentSource { amps: a } => {
                *a = amps;
                Ok(())
            }
            _ => Err(SolverError::NotASource(id.0)),
        }
    }

    pub fn node_voltage(&self, node: NodeId) -> f64 {
        if node.is_ground() {
            0.0
        } else {
            self.voltages[node.0]
        }
    }

    pub fn branch(&self, id: BranchId) -> &CompanionBranch {
        &self.branches[id.0]
    }

    pub fn branch_current(&self, id: BranchId) -> f64 {
        self.branches[id.0].current()
    }

    pub fn branch_voltage(&self, id: BranchId) -> f64 {
        let b = &self.branches[id.0];
        branch_voltage_of(&self.voltages, b.from, b.to)
    }

    pub fn group(&self, id: GroupId) -> &CoupledGroup {
        &self.groups[id.0]
    }

    pub fn group_current(&self, id: GroupId, conductor: usize) -> f64 {
        self.groups[id.0].current(conductor)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn timestep(&self) -> f64 {
        self.h
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn voltages(&self) -> &DVector<f64> {
        &self.voltages
    }

    /// Stamped (unfactorized) nodal conductance matrix.
    pub fn conductance_matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Total energy stored in inductors and capacitors (scalar branches
    /// only; coupled groups are excluded).
    pub fn stored_energy(&self) -> f64 {
        let mut e = 0.0;
        for b in &self.branches {
            match &b.kind {
                BranchKind::Inductor { henries, .. } => {
                    e += 0.5 * henries * b.current * b.current;
                }
                BranchKind::Capacitor { farads, .. } => {
                    let v = branch_voltage_of(&self.voltages, b.from, b.to);
                    e += 0.5 * farads * v * v;
                }
                _ => {}
            }
        }
        e
    }
}

fn validate_node(node: NodeId, branch: usize, node_count: usize) -> Result<(), SolverError> {
    if node.is_ground() || node.0 < node_count {
        Ok(())
    } else {
        Err(SolverError::InvalidNode { branch, node: node.0, node_count })
    }
}

fn branch_voltage_of(v: &DVector<f64>, from: NodeId, to: NodeId) -> f64 {
    let vf = if from.is_ground() { 0.0 } else { v[from.0] };
    let vt = if to.is_ground() { 0.0 } else { v[to.0] };
    vf - vt
}

fn stamp_pair(
    m: &mut DMatrix<f64>,
    row_from: NodeId,
    row_to: NodeId,
    col_from: NodeId,
    col_to: NodeId,
    g: f64,
) {
    if g == 0.0 {
        return;
    }
    if !row_from.is_ground() && !col_from.is_ground() {
        m[(row_from.0, col_from.0)] += g;
    }
    if !row_from.is_ground() && !col_to.is_ground() {
        m[(row_from.0, col_to.0)] -= g;
    }
    if !row_to.is_ground() && !col_from.is_ground() {
        m[(row_to.0, col_from.0)] -= g;
    }
    if !row_to.is_ground() && !col_to.is_ground() {
        m[(row_to.0, col_to.0)] += g;
    }
}

/// Union-find over nodes plus a virtual ground; any element with nonzero
/// conductance provides a path. Current sources do not.
fn check_connectivity(
    branches: &[CompanionBranch],
    groups: &[CoupledGroup],
    node_count: usize,
) -> Result<(), SolverError> {
    let ground = node_count;
    let mut parent: Vec<usize> = (0..=node_count).collect();

    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let union = |parent: &mut Vec<usize>, a: usize, b: usize| {
        let ra = find(parent, a);
        let rb = find(parent, b);
        if ra != rb {
            parent[ra] = rb;
        }
    };
    let idx = |n: NodeId| if n.is_ground() { ground } else { n.0 };

    for b in branches {
        if b.conductance != 0.0 {
            union(&mut parent, idx(b.from), idx(b.to));
        }
    }
    for grp in groups {
        let n = grp.len();
        for r in 0..n {
            if grp.g[(r, r)] != 0.0 {
                union(&mut parent, idx(grp.from[r]), idx(grp.to[r]));
            }
            for c in 0..n {
                if r != c && grp.g[(r, c)] != 0.0 {
                    union(&mut parent, idx(grp.from[r]), idx(grp.from[c]));
                }
            }
        }
    }

    let ground_root = find(&mut parent, ground);
    let floating: Vec<usize> = (0..node_count)
        .filter(|&n| find(&mut parent, n) != ground_root)
        .collect();
    if floating.is_empty() {
        Ok(())
    } else {
        Err(SolverError::FloatingNodes { nodes: floating })
    }
}
