//! Assembly of the block kernel
//! `𝒜(θ, g)_{ij} = p_ji ∫₀ᵀ exp((A_j(θ) + gI)τ) f_ji(τ) dτ`.
//!
//! Assembly is split in two stages so that root finding in `g` is cheap:
//! a [`KernelAssembler`] fixes the quadrature nodes of every edge of the
//! chain, and a [`KernelPlan`] caches `exp(A_j(θ)τ)` at those nodes for one
//! parameter point. Evaluating a plan at `g` is then a weighted sum.
//!
//! Blocks whose coarse and fine rules disagree are refined by node doubling.
//! The assembler remembers the finest rule each block has needed so far and
//! never goes back to a coarser one, which keeps `log ρ` smooth along an
//! optimization path instead of jumping whenever the refinement level flips.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::ParametrizedSystem;
use super::sojourn::{SojournDistribution, SojournNode};
use crate::error::{Error, Result};
use crate::numlin::{matrix_exp, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelOptions {
    /// Gauss–Legendre nodes per panel of the coarse rule; the reported value
    /// uses twice as many.
    pub panel_nodes: usize,
    /// Relative Frobenius tolerance between the coarse and fine rule.
    pub check_tol: f64,
    /// Node doubling stops here and reports a quadrature error.
    pub max_panel_nodes: usize,
}

impl Default for KernelOptions {
    fn default() -> Self {
        Self {
            panel_nodes: 8,
            check_tol: 1e-6,
            max_panel_nodes: 256,
        }
    }
}

/// Assembled kernel together with its `N x N` grid of `n x n` blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    state_dim: usize,
    modes: usize,
    matrix: DenseMatrix,
}

impl KernelMatrix {
    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> DenseMatrix {
        self.matrix
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    /// Block `(i, j)`, mapping mode-`j` states into mode-`i` states.
    pub fn block(&self, i: usize, j: usize) -> DenseMatrix {
        let n = self.state_dim;
        self.matrix.block(i * n, j * n, n, n)
    }
}

#[derive(Debug, Clone)]
struct Edge {
    /// Block row: the mode being entered.
    to: usize,
    /// Block column: the mode being left.
    from: usize,
    prob: f64,
    sojourn: SojournDistribution,
    coarse: Vec<SojournNode>,
    fine: Vec<SojournNode>,
}

/// Quadrature layout for every edge of a system's chain.
#[derive(Debug, Clone)]
pub struct KernelAssembler<'a> {
    system: &'a ParametrizedSystem,
    opts: KernelOptions,
    edges: Vec<Edge>,
    /// Per edge, the node count per panel the next check starts from.
    floors: Arc<Vec<AtomicUsize>>,
}

impl<'a> KernelAssembler<'a> {
    pub fn new(system: &'a ParametrizedSystem, opts: KernelOptions) -> Result<Self> {
        if opts.panel_nodes < 2 || opts.max_panel_nodes < 2 * opts.panel_nodes {
            return Err(Error::InvalidArgument(format!(
                "invalid quadrature node counts {} / {}",
                opts.panel_nodes, opts.max_panel_nodes
            )));
        }
        if !(opts.check_tol > 0.0) {
            return Err(Error::InvalidArgument(
                "quadrature check tolerance must be positive".into(),
            ));
        }
        let chain = system.chain();
        let modes = chain.modes();
        let mut edges = Vec::new();
        for from in 0..modes {
            for to in 0..modes {
                let prob = chain.probability(from, to);
                if prob == 0.0 {
                    continue;
                }
                let sojourn = *chain.sojourn(from, to);
                edges.push(Edge {
                    to,
                    from,
                    prob,
                    sojourn,
                    coarse: sojourn.nodes(opts.panel_nodes)?,
                    fine: sojourn.nodes(2 * opts.panel_nodes)?,
                });
            }
        }
        let floors = Arc::new(edges.iter().map(|_| AtomicUsize::new(2 * opts.panel_nodes)).collect());
        Ok(Self {
            system,
            opts,
            edges,
            floors,
        })
    }

    pub fn system(&self) -> &'a ParametrizedSystem {
        self.system
    }

    pub fn options(&self) -> KernelOptions {
        self.opts
    }

    /// Caches `exp(A_j(θ)τ)` at every node for the parameter point `θ`.
    pub fn plan(&self, theta: &[f64]) -> Result<KernelPlan> {
        let mats = self.system.mode_matrices(theta)?;
        let expand = |nodes: &[SojournNode], a: &DenseMatrix| -> Result<Vec<(SojournNode, DenseMatrix)>> {
            nodes.iter().map(|&nd| Ok((nd, matrix_exp(a, nd.tau)?))).collect()
        };
        let extra_levels = (self.opts.max_panel_nodes / (2 * self.opts.panel_nodes)).ilog2() as usize;
        let blocks = self
            .edges
            .par_iter()
            .map(|e| {
                let a = &mats[e.from];
                Ok(BlockPlan {
                    to: e.to,
                    from: e.from,
                    prob: e.prob,
                    sojourn: e.sojourn,
                    coarse: expand(&e.coarse, a)?,
                    fine: expand(&e.fine, a)?,
                    refined: (0..extra_levels).map(|_| OnceLock::new()).collect(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelPlan {
            state_dim: self.system.state_dim(),
            modes: self.system.num_modes(),
            opts: self.opts,
            mats,
            blocks,
            floors: Arc::clone(&self.floors),
        })
    }
}

#[derive(Debug, Clone)]
struct BlockPlan {
    to: usize,
    from: usize,
    prob: f64,
    sojourn: SojournDistribution,
    coarse: Vec<(SojournNode, DenseMatrix)>,
    fine: Vec<(SojournNode, DenseMatrix)>,
    /// Rules with 4, 8, ... times `panel_nodes`, expanded on first use.
    refined: Vec<OnceLock<Vec<(SojournNode, DenseMatrix)>>>,
}

/// Kernel at a fixed parameter point, ready to be evaluated at any `g`.
#[derive(Debug, Clone)]
pub struct KernelPlan {
    state_dim: usize,
    modes: usize,
    opts: KernelOptions,
    mats: Vec<DenseMatrix>,
    blocks: Vec<BlockPlan>,
    floors: Arc<Vec<AtomicUsize>>,
}

impl KernelPlan {
    pub fn mode_matrices(&self) -> &[DenseMatrix] {
        &self.mats
    }

    /// Kernel at rate `g`, with the node-doubling self-check on every block.
    pub fn kernel(&self, g: f64) -> Result<KernelMatrix> {
        Ok(self.kernel_and_rules(g)?.0)
    }

    /// [`kernel`](Self::kernel) together with the nodes per panel each
    /// block ended up using, in the order expected by
    /// [`kernel_with_rules`](Self::kernel_with_rules).
    pub fn kernel_and_rules(&self, g: f64) -> Result<(KernelMatrix, Vec<usize>)> {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("kernel rate {g}")));
        }
        let mut rules = Vec::with_capacity(self.blocks.len());
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (k, b) in self.blocks.iter().enumerate() {
            let (block, m) = self.block_integral(k, b, g)?;
            blocks.push(block);
            rules.push(m);
        }
        Ok((self.assemble(blocks, g)?, rules))
    }

    /// Kernel at rate `g` with prescribed rules and no self-check. Used to
    /// difference kernels at nearby points on identical quadrature.
    pub fn kernel_with_rules(&self, g: f64, rules: &[usize]) -> Result<KernelMatrix> {
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("kernel rate {g}")));
        }
        if rules.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "{} quadrature rules for {} kernel blocks",
                rules.len(),
                self.blocks.len()
            )));
        }
        let blocks = self
            .blocks
            .iter()
            .zip(rules)
            .map(|(b, &m)| Ok(weighted_sum(self.rule(b, m)?, g)))
            .collect::<Result<Vec<_>>>()?;
        self.assemble(blocks, g)
    }

    fn assemble(&self, blocks: Vec<DenseMatrix>, g: f64) -> Result<KernelMatrix> {
        let n = self.state_dim;
        let mut matrix = DenseMatrix::zeros(n * self.modes, n * self.modes);
        for (b, mut block) in self.blocks.iter().zip(blocks) {
            block.scale_mut(b.prob);
            matrix.set_block(b.to * n, b.from * n, &block);
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite(format!("kernel overflowed at g = {g}")));
        }
        Ok(KernelMatrix {
            state_dim: n,
            modes: self.modes,
            matrix,
        })
    }

    /// Nodes and `exp(A τ)` of the rule with `m` nodes per panel.
    fn rule<'p>(&'p self, b: &'p BlockPlan, m: usize) -> Result<&'p [(SojournNode, DenseMatrix)]> {
        let p = self.opts.panel_nodes;
        if m == p {
            return Ok(&b.coarse);
        }
        if m == 2 * p {
            return Ok(&b.fine);
        }
        let level = (m / (2 * p)).ilog2() as usize;
        let slot = b
            .refined
            .get(level.wrapping_sub(1))
            .filter(|_| m.is_multiple_of(p) && (m / p).is_power_of_two())
            .ok_or_else(|| Error::InvalidArgument(format!("no quadrature rule with {m} nodes per panel")))?;
        if slot.get().is_none() {
            let a = &self.mats[b.from];
            let expanded = b
                .sojourn
                .nodes(m)?
                .into_iter()
                .map(|nd| Ok((nd, matrix_exp(a, nd.tau)?)))
                .collect::<Result<Vec<_>>>()?;
            let _ = slot.set(expanded);
        }
        Ok(slot.get().map(Vec::as_slice).unwrap_or_default())
    }

    fn block_integral(&self, k: usize, b: &BlockPlan, g: f64) -> Result<(DenseMatrix, usize)> {
        let p = self.opts.panel_nodes;
        if b.sojourn.is_dirac() {
            return Ok((weighted_sum(&b.fine, g), 2 * p));
        }
        let floor = &self.floors[k];
        let mut m = floor.load(Ordering::Relaxed).max(2 * p);
        let mut prev = weighted_sum(self.rule(b, m / 2)?, g);
        loop {
            let next = weighted_sum(self.rule(b, m)?, g);
            if agrees(&prev, &next, self.opts.check_tol) {
                if m > 2 * p {
                    log::trace!("kernel block ({}, {}) needed {m} nodes per panel", b.to, b.from);
                }
                floor.fetch_max(m, Ordering::Relaxed);
                return Ok((next, m));
            }
            prev = next;
            m *= 2;
            if m > self.opts.max_panel_nodes {
                return Err(Error::Quadrature(format!(
                    "kernel block ({}, {}) at g = {g} did not settle with {} nodes per panel",
                    b.to, b.from, self.opts.max_panel_nodes
                )));
            }
        }
    }
}

fn weighted_sum(nodes: &[(SojournNode, DenseMatrix)], g: f64) -> DenseMatrix {
    let n = nodes[0].1.rows();
    let mut acc = DenseMatrix::zeros(n, n);
    for (nd, e) in nodes {
        acc.add_scaled(nd.weight * (g * nd.tau).exp(), e);
    }
    acc
}

fn agrees(a: &DenseMatrix, b: &DenseMatrix, tol: f64) -> bool {
    // both rules overflowing is reported by the caller
    !b.is_finite() || a.rel_diff(b) <= tol
}

/// One-shot kernel assembly.
pub fn assemble_kernel(
    system: &ParametrizedSystem,
    theta: &[f64],
    g: f64,
    opts: KernelOptions,
) -> Result<KernelMatrix> {
    KernelAssembler::new(system, opts)?.plan(theta)?.kernel(g)
}
