//! Loss assembly for the three model variants.
//!
//! Network evaluations run through the batched kernel. Their outputs and the
//! per-slice moments become leaves of a scalar tape on which the loss head
//! (projection, residual, penalty) is recorded; the leaf adjoints are then
//! pulled back through the kernel's vector-Jacobian product.
//!
//! Slice moments are the mean `M` and the centered second moment
//! `Q = Σ(uᵢ − M)²` of the network over a spatial slice. When the residual
//! differentiates through the projection in `t`, their time derivatives are
//! carried as jet lanes: `Q′ = 2Σ eᵢeᵢ′` and `Q″ = 2Σ(eᵢ′² + eᵢeᵢ″)` with
//! `eᵢ = uᵢ − M`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{compensated_sum, Jet, Objective, Scalar, Tape, Var};
use crate::mlp::{backprop_points, eval_points, LaneOrders, Network, PointJets, MAX_INPUTS};
use crate::par;
use crate::pde::{Grid, PdeSpec};
use crate::projection::{
    affine_map, targets_and_slopes, ConservedKind, ConservedSet, ProjectionKind, ProjectionSpec, SliceStats, Targets,
};
use crate::sampling::TrainingSet;
use crate::Error;

use super::{ModelVariant, ResidualMode, TrainingError, VariantTag};

/// Loss terms at one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub data: f64,
    pub residual: f64,
    pub conservation: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.data + self.residual + self.conservation
    }
}

/// Slices evaluated on the full spatial grid at the given times.
#[derive(Debug, Clone)]
struct SliceBatch {
    times: Vec<f64>,
    /// Highest time-derivative lane carried in the moments.
    order: usize,
    targets: Vec<(Targets<f64>, Targets<f64>)>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    mean: [f64; 3],
    centered: [f64; 3],
}

/// Full loss of one variant on one training set, as an [`Objective`].
pub struct PinnObjective<'a> {
    network: &'a Network,
    pde: PdeSpec,
    grid: Grid,
    variant: ModelVariant,
    mode: ResidualMode,
    eps: f64,
    data_points: Vec<[f64; MAX_INPUTS]>,
    data_values: Vec<f64>,
    /// Position of each data point's slice in `grid_slices`.
    data_slice: Vec<usize>,
    colloc: Vec<[f64; MAX_INPUTS]>,
    orders: LaneOrders,
    lanes: Vec<(usize, usize)>,
    grid_slices: Option<SliceBatch>,
    colloc_slices: Option<SliceBatch>,
    /// `c(t)` on grid times for the penalty.
    penalty_targets: Vec<Targets<f64>>,
}

fn lane_list(orders: LaneOrders, n_inputs: usize) -> Vec<(usize, usize)> {
    let mut lanes = vec![(0, 0)];
    for axis in 0..n_inputs {
        for k in 1..=orders.order(axis) as usize {
            lanes.push((axis, k));
        }
    }
    lanes
}

impl<'a> PinnObjective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        network: &'a Network,
        pde: &PdeSpec,
        grid: &Grid,
        set: &TrainingSet,
        series: &ConservedSet,
        variant: ModelVariant,
        mode: ResidualMode,
        eps: f64,
    ) -> Result<Self, Error> {
        variant.validate()?;
        if network.n_inputs() != grid.n_inputs() || grid.dims != pde.kind.spatial_dims() {
            return Err(TrainingError::Inconsistent(format!(
                "network with {} inputs, {}-D grid, {}",
                network.n_inputs(),
                grid.dims,
                pde.kind
            ))
            .into());
        }
        ProjectionSpec::new(variant.kind, grid.cell_volume(), grid.n_space())?;
        let kind = variant.kind;
        let t_axis = pde.time_axis();
        let orders = pde.lane_orders();

        let mut grid_times: Vec<usize> = Vec::new();
        let mut data_slice = Vec::with_capacity(set.data.len());
        let mut penalty_targets = Vec::new();
        match variant.tag {
            VariantTag::PinnProj => {
                let mut ks: Vec<usize> = set.data.iter().map(|d| d.slice).collect();
                ks.sort_unstable();
                ks.dedup();
                for d in &set.data {
                    data_slice.push(ks.binary_search(&d.slice).unwrap());
                }
                grid_times = ks;
            }
            VariantTag::PinnSc if variant.lambda > 0.0 => {
                grid_times = (0..grid.nt).collect();
                for k in 0..grid.nt {
                    penalty_targets.push(targets_and_slopes(kind, series, grid.t(k))?.0);
                }
            }
            VariantTag::Pinn | VariantTag::PinnSc => {}
        }
        let batch = |times: Vec<f64>, order: usize| -> Result<SliceBatch, Error> {
            let targets = times
                .iter()
                .map(|&t| targets_and_slopes(kind, series, t))
                .collect::<Result<_, _>>()?;
            Ok(SliceBatch { times, order, targets })
        };
        let grid_slices = if grid_times.is_empty() {
            None
        } else {
            let order = 0;
            let times = grid_times.iter().map(|&k| grid.t(k)).collect();
            Some(if variant.tag == VariantTag::PinnProj {
                batch(times, order)?
            } else {
                SliceBatch {
                    targets: Vec::new(),
                    times,
                    order,
                }
            })
        };

        let needs_colloc_moments = variant.tag == VariantTag::PinnProj
            && !set.collocation.is_empty()
            && match mode {
                ResidualMode::Raw => false,
                ResidualMode::Frozen => !(kind == ProjectionKind::Linear && !pde.residual_uses_value()),
                ResidualMode::Full => true,
            };
        let colloc_slices = if needs_colloc_moments {
            let order = if mode == ResidualMode::Full {
                orders.order(t_axis) as usize
            } else {
                0
            };
            Some(batch(set.collocation.iter().map(|p| p[t_axis]).collect(), order)?)
        } else {
            None
        };

        Ok(PinnObjective {
            network,
            pde: *pde,
            grid: *grid,
            variant,
            mode,
            eps,
            data_points: set.data.iter().map(|d| d.point).collect(),
            data_values: set.data.iter().map(|d| d.u).collect(),
            data_slice,
            colloc: set.collocation.clone(),
            orders,
            lanes: lane_list(orders, pde.n_inputs()),
            grid_slices,
            colloc_slices,
            penalty_targets,
        })
    }

    /// Slices evaluated per kernel call.
    fn group(&self) -> usize {
        (8192 / self.grid.n_space()).max(1)
    }

    fn slice_orders(&self, order: usize) -> LaneOrders {
        LaneOrders::value_only().with(self.pde.time_axis(), order as u8)
    }

    fn group_points(&self, times: &[f64]) -> Vec<[f64; MAX_INPUTS]> {
        times.iter().flat_map(|&t| self.grid.slice_points(t)).collect()
    }

    fn moments(&self, params: &[f64], batch: &SliceBatch) -> Vec<Moments> {
        let n = self.grid.n_space();
        let orders = self.slice_orders(batch.order);
        let t_axis = self.pde.time_axis();
        let groups: Vec<&[f64]> = batch.times.chunks(self.group()).collect();
        par::map_indexed(groups.len(), |g| {
            let jets = eval_points(self.network, params, &self.group_points(groups[g]), orders);
            jets.chunks(n)
                .map(|slice| {
                    let mut m = Moments::default();
                    for k in 0..=batch.order {
                        m.mean[k] = compensated_sum(slice.iter().map(|j| j.deriv(t_axis, k))) / n as f64;
                    }
                    let e = |j: &PointJets, k: usize| j.deriv(t_axis, k) - m.mean[k];
                    m.centered[0] = compensated_sum(slice.iter().map(|j| e(j, 0) * e(j, 0)));
                    if batch.order >= 1 {
                        m.centered[1] = 2.0 * compensated_sum(slice.iter().map(|j| e(j, 0) * e(j, 1)));
                    }
                    if batch.order >= 2 {
                        m.centered[2] =
                            2.0 * compensated_sum(slice.iter().map(|j| e(j, 1) * e(j, 1) + e(j, 0) * e(j, 2)));
                    }
                    m
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Pulls moment adjoints `(M̄, Q̄)` back to the parameters.
    fn moments_backward(
        &self,
        params: &[f64],
        batch: &SliceBatch,
        moms: &[Moments],
        bars: &[Moments],
        grad: &mut [f64],
    ) {
        let n = self.grid.n_space();
        let orders = self.slice_orders(batch.order);
        let t_axis = self.pde.time_axis();
        let group = self.group();
        for (g, times) in batch.times.chunks(group).enumerate() {
            let points = self.group_points(times);
            backprop_points(
                self.network,
                params,
                &points,
                orders,
                |i, jets| {
                    let s = g * group + i / n;
                    let (m, b) = (&moms[s], &bars[s]);
                    let mut e = [0.0; 3];
                    for (k, ek) in e.iter_mut().enumerate().take(batch.order + 1) {
                        *ek = jets.deriv(t_axis, k) - m.mean[k];
                    }
                    let q = &b.centered;
                    let d = [
                        2.0 * (e[0] * q[0] + e[1] * q[1] + e[2] * q[2]),
                        2.0 * e[0] * q[1] + 4.0 * e[1] * q[2],
                        2.0 * e[0] * q[2],
                    ];
                    let mut bar = PointJets::default();
                    #[allow(clippy::needless_range_loop)]
                    for k in 0..=batch.order {
                        *bar.deriv_mut(t_axis, k) = b.mean[k] / n as f64 + d[k];
                    }
                    bar
                },
                grad,
            );
        }
    }
}

fn jet_leaves<'t>(tape: &'t Tape, lanes: [f64; 3]) -> Jet<Var<'t>> {
    Jet::new(
        tape.var(lanes[0]),
        tape.var(lanes[1]),
        tape.var(lanes[2]),
        tape.var(0.0),
    )
}

struct SliceLeaves<'t> {
    mean: Jet<Var<'t>>,
    centered: Jet<Var<'t>>,
}

impl<'t> SliceLeaves<'t> {
    fn new(tape: &'t Tape, m: &Moments) -> Self {
        SliceLeaves {
            mean: jet_leaves(tape, m.mean),
            centered: jet_leaves(tape, m.centered),
        }
    }

    fn bars(&self, adj: &crate::autodiff::Adjoints) -> Moments {
        let lanes = |j: &Jet<Var<'t>>| [adj.wrt(&j.v), adj.wrt(&j.d1), adj.wrt(&j.d2)];
        Moments {
            mean: lanes(&self.mean),
            centered: lanes(&self.centered),
        }
    }

    /// `(α, β)` of the projection as jets in `t`.
    fn affine(
        &self,
        tape: &'t Tape,
        kind: ProjectionKind,
        n: usize,
        cell_volume: f64,
        targets: &(Targets<f64>, Targets<f64>),
        eps: f64,
    ) -> Result<(Jet<Var<'t>>, Jet<Var<'t>>), Error> {
        let (c, dc) = targets;
        let t = Targets {
            linear: jet_leaves(tape, [c.linear, dc.linear, 0.0]),
            quadratic: jet_leaves(tape, [c.quadratic, dc.quadratic, 0.0]),
        };
        let stats = SliceStats {
            n,
            mean: self.mean,
            centered_sq: self.centered,
        };
        Ok(affine_map(kind, &stats, &t, cell_volume, eps)?)
    }
}

const BINOMIAL: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 2.0, 1.0]];

impl Objective for PinnObjective<'_> {
    type Info = LossParts;

    fn dim(&self) -> usize {
        self.network.param_count()
    }

    fn evaluate(&self, params: &[f64], grad: &mut [f64]) -> Result<(f64, LossParts), Error> {
        if params.len() != self.dim() || grad.len() != self.dim() {
            return Err(crate::autodiff::AutodiffError::ShapeMismatch {
                expected: self.dim(),
                got: params.len(),
            }
            .into());
        }
        grad.fill(0.0);
        let net = self.network;
        let kind = self.variant.kind;
        let n_space = self.grid.n_space();
        let dv = self.grid.cell_volume();
        let t_axis = self.pde.time_axis();

        let data_jets = eval_points(net, params, &self.data_points, LaneOrders::value_only());
        let colloc_jets = eval_points(net, params, &self.colloc, self.orders);
        let grid_moms = self.grid_slices.as_ref().map(|b| self.moments(params, b));
        let colloc_moms = self.colloc_slices.as_ref().map(|b| self.moments(params, b));

        let n_lanes = self.lanes.len();
        let tape = Tape::with_capacity(16 * (self.colloc.len() * n_lanes + self.data_points.len()) + 1024);
        let zero = tape.var(0.0);

        let grid_leaves: Vec<SliceLeaves> = grid_moms.iter().flatten().map(|m| SliceLeaves::new(&tape, m)).collect();
        let colloc_leaves: Vec<SliceLeaves> = colloc_moms
            .iter()
            .flatten()
            .map(|m| SliceLeaves::new(&tape, m))
            .collect();

        // data term
        let data_leaves: Vec<Var> = data_jets.iter().map(|j| tape.var(j.value)).collect();
        let mut data_sum = zero;
        if !data_leaves.is_empty() {
            let proj = if self.variant.tag == VariantTag::PinnProj {
                let batch = self.grid_slices.as_ref().unwrap();
                grid_leaves
                    .iter()
                    .zip(&batch.targets)
                    .map(|(l, t)| l.affine(&tape, kind, n_space, dv, t, self.eps))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                Vec::new()
            };
            for (i, u) in data_leaves.iter().enumerate() {
                let pred = if proj.is_empty() {
                    *u
                } else {
                    let (a, b) = &proj[self.data_slice[i]];
                    a.v * *u + b.v
                };
                data_sum = data_sum + pred.shift(-self.data_values[i]).square();
            }
        }
        let data_term = data_sum.scale(1.0 / self.data_points.len().max(1) as f64);

        // residual term
        let colloc_leaf_vars: Vec<Var> = colloc_jets
            .iter()
            .flat_map(|j| self.lanes.iter().map(move |&(a, k)| j.deriv(a, k)))
            .map(|v| tape.var(v))
            .collect();
        let full = self.mode == ResidualMode::Full;
        let mut res_sum = zero;
        for (i, _) in self.colloc.iter().enumerate() {
            let leaves = &colloc_leaf_vars[i * n_lanes..(i + 1) * n_lanes];
            let raw = |axis: usize, k: usize| -> Var {
                if k == 0 {
                    return leaves[0];
                }
                self.lanes
                    .iter()
                    .position(|&l| l == (axis, k))
                    .map(|p| leaves[p])
                    .unwrap_or(zero)
            };
            let f = if let Some(l) = colloc_leaves.get(i) {
                let targets = &self.colloc_slices.as_ref().unwrap().targets[i];
                let (a, b) = l.affine(&tape, kind, n_space, dv, targets, self.eps)?;
                let al = [a.v, a.d1, a.d2];
                let be = [b.v, b.d1, b.d2];
                self.pde.residual_with(|axis, k| {
                    if k == 0 {
                        al[0] * raw(axis, 0) + be[0]
                    } else if axis == t_axis && full {
                        let mut s = be[k];
                        for j in 0..=k {
                            s = s + (al[j] * raw(t_axis, k - j)).scale(BINOMIAL[k][j]);
                        }
                        s
                    } else {
                        al[0] * raw(axis, k)
                    }
                })
            } else {
                self.pde.residual_with(raw)
            };
            res_sum = res_sum + f.square();
        }
        let res_term = res_sum.scale(1.0 / self.colloc.len().max(1) as f64);

        // soft penalty
        let mut pen_term = zero;
        if self.variant.tag == VariantTag::PinnSc {
            let mut s = zero;
            for (l, c) in grid_leaves.iter().zip(&self.penalty_targets) {
                let m0 = l.mean.v;
                if kind.uses(ConservedKind::Linear) {
                    let chat = m0.scale(n_space as f64 * dv);
                    s = s + chat.shift(-c.linear).square();
                }
                if kind.uses(ConservedKind::Quadratic) {
                    let chat = (l.centered.v + m0.square().scale(n_space as f64)).scale(dv);
                    s = s + chat.shift(-c.quadratic).square();
                }
            }
            pen_term = s.scale(self.variant.lambda / self.grid.nt as f64);
        }

        let loss = data_term + res_term + pen_term;
        let parts = LossParts {
            data: data_term.value(),
            residual: res_term.value(),
            conservation: pen_term.value(),
        };
        let adj = tape.gradient(loss)?;

        let data_bar: Vec<f64> = data_leaves.iter().map(|v| adj.wrt(v)).collect();
        backprop_points(
            net,
            params,
            &self.data_points,
            LaneOrders::value_only(),
            |i, _| PointJets {
                value: data_bar[i],
                ..Default::default()
            },
            grad,
        );
        let colloc_bar: Vec<f64> = colloc_leaf_vars.iter().map(|v| adj.wrt(v)).collect();
        backprop_points(
            net,
            params,
            &self.colloc,
            self.orders,
            |i, _| {
                let mut bar = PointJets::default();
                for (l, &(a, k)) in self.lanes.iter().enumerate() {
                    *bar.deriv_mut(a, k) = colloc_bar[i * n_lanes + l];
                }
                bar
            },
            grad,
        );
        if let (Some(b), Some(m)) = (&self.grid_slices, &grid_moms) {
            let bars: Vec<Moments> = grid_leaves.iter().map(|l| l.bars(&adj)).collect();
            self.moments_backward(params, b, m, &bars, grad);
        }
        if let (Some(b), Some(m)) = (&self.colloc_slices, &colloc_moms) {
            let bars: Vec<Moments> = colloc_leaves.iter().map(|l| l.bars(&adj)).collect();
            self.moments_backward(params, b, m, &bars, grad);
        }
        Ok((loss.value(), parts))
    }
}
