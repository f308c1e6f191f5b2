//! Batched evaluation of the network with input-derivative lanes, and the
//! matching vector-Jacobian product with respect to the parameters.
//!
//! Every activation carries a value lane plus, for each input axis with a
//! requested order `K`, lanes for the first `K` derivatives along that axis.
//! Points are processed in blocks laid out `[lane][neuron][point]` so the
//! innermost loops run over contiguous points.

use super::Network;
use crate::par;

pub const MAX_INPUTS: usize = 3;
const BLOCK: usize = 32;
const CHUNK: usize = 8 * BLOCK;

/// Highest derivative order requested along each input axis (at most 3).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct LaneOrders(pub [u8; MAX_INPUTS]);

impl LaneOrders {
    pub fn value_only() -> Self {
        LaneOrders([0; MAX_INPUTS])
    }

    pub fn with(mut self, axis: usize, order: u8) -> Self {
        assert!(order <= 3, "derivative order above 3");
        self.0[axis] = self.0[axis].max(order);
        self
    }

    pub fn order(&self, axis: usize) -> u8 {
        self.0[axis]
    }
}

/// Output value and its derivatives at one point; `d[axis][k - 1]` is the
/// `k`-th derivative along `axis`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PointJets {
    pub value: f64,
    pub d: [[f64; 3]; MAX_INPUTS],
}

impl PointJets {
    pub fn deriv(&self, axis: usize, order: usize) -> f64 {
        if order == 0 {
            self.value
        } else {
            self.d[axis][order - 1]
        }
    }

    pub fn deriv_mut(&mut self, axis: usize, order: usize) -> &mut f64 {
        if order == 0 {
            &mut self.value
        } else {
            &mut self.d[axis][order - 1]
        }
    }
}

#[derive(Debug, Clone)]
struct AxisLanes {
    order: usize,
    lane: [usize; 3],
}

#[derive(Debug, Clone)]
struct LanePlan {
    /// `(axis, order)` per lane; lane 0 is the value.
    lanes: Vec<(usize, usize)>,
    groups: Vec<AxisLanes>,
}

impl LanePlan {
    fn new(n_inputs: usize, orders: LaneOrders) -> Self {
        let mut lanes = vec![(0, 0)];
        let mut groups = Vec::new();
        for axis in 0..n_inputs {
            let order = orders.0[axis] as usize;
            if order == 0 {
                continue;
            }
            let mut lane = [0; 3];
            for (k, slot) in lane.iter_mut().enumerate().take(order) {
                *slot = lanes.len();
                lanes.push((axis, k + 1));
            }
            groups.push(AxisLanes { order, lane });
        }
        LanePlan { lanes, groups }
    }

    fn n(&self) -> usize {
        self.lanes.len()
    }
}

struct Workspace {
    /// `pre[l]`: pre-activations of layer `l`.
    pre: Vec<Vec<f64>>,
    /// `post[l]`: inputs to layer `l` (`post[0]` is the scaled input).
    post: Vec<Vec<f64>>,
    abar: Vec<f64>,
    abar_prev: Vec<f64>,
    hbar: Vec<f64>,
}

impl Workspace {
    fn new(net: &Network, plan: &LanePlan) -> Self {
        let s = net.layer_sizes();
        let nl = plan.n();
        let max_w = *s.iter().max().unwrap();
        Workspace {
            pre: (0..net.n_layers()).map(|l| vec![0.0; nl * s[l + 1] * BLOCK]).collect(),
            post: (0..net.n_layers()).map(|l| vec![0.0; nl * s[l] * BLOCK]).collect(),
            abar: vec![0.0; nl * max_w * BLOCK],
            abar_prev: vec![0.0; nl * max_w * BLOCK],
            hbar: vec![0.0; nl * max_w * BLOCK],
        }
    }
}

#[inline(always)]
fn at(lane: usize, width: usize, i: usize) -> usize {
    (lane * width + i) * BLOCK
}

fn forward_block(net: &Network, params: &[f64], plan: &LanePlan, ws: &mut Workspace, pts: &[[f64; MAX_INPUTS]]) {
    let bn = pts.len();
    let sizes = net.layer_sizes();
    let n_in0 = sizes[0];
    let scaling = net.scaling();
    {
        let input = &mut ws.post[0];
        for j in 0..n_in0 {
            let row = &mut input[at(0, n_in0, j)..][..bn];
            for (p, slot) in row.iter_mut().enumerate() {
                *slot = scaling.apply(j, pts[p][j]);
            }
        }
        for (lane, &(axis, order)) in plan.lanes.iter().enumerate().skip(1) {
            for j in 0..n_in0 {
                let v = if order == 1 && j == axis {
                    scaling.scale[axis]
                } else {
                    0.0
                };
                input[at(lane, n_in0, j)..][..bn].fill(v);
            }
        }
    }
    let n_layers = net.n_layers();
    let nl = plan.n();
    for l in 0..n_layers {
        let (w, b) = net.layer(params, l);
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let (post_l, rest) = ws.post.split_at_mut(l + 1);
        let hin = &post_l[l];
        let pre = &mut ws.pre[l];
        for lane in 0..nl {
            for i in 0..n_out {
                let out = &mut pre[at(lane, n_out, i)..][..bn];
                out.fill(if lane == 0 { b[i] } else { 0.0 });
                let wrow = &w[i * n_in..(i + 1) * n_in];
                for (j, &wij) in wrow.iter().enumerate() {
                    let h = &hin[at(lane, n_in, j)..][..bn];
                    for (o, hv) in out.iter_mut().zip(h) {
                        *o += wij * hv;
                    }
                }
            }
        }
        if l + 1 == n_layers {
            break;
        }
        let post = &mut rest[0];
        for i in 0..n_out {
            for p in 0..bn {
                let t = pre[at(0, n_out, i) + p].tanh();
                post[at(0, n_out, i) + p] = t;
                if plan.groups.is_empty() {
                    continue;
                }
                let t2 = t * t;
                let g1 = 1.0 - t2;
                let g2 = -2.0 * t * g1;
                let g3 = g1 * (6.0 * t2 - 2.0);
                for g in &plan.groups {
                    let a1 = pre[at(g.lane[0], n_out, i) + p];
                    post[at(g.lane[0], n_out, i) + p] = g1 * a1;
                    if g.order >= 2 {
                        let a2 = pre[at(g.lane[1], n_out, i) + p];
                        post[at(g.lane[1], n_out, i) + p] = g2 * a1 * a1 + g1 * a2;
                        if g.order >= 3 {
                            let a3 = pre[at(g.lane[2], n_out, i) + p];
                            post[at(g.lane[2], n_out, i) + p] = g3 * a1 * a1 * a1 + 3.0 * g2 * a1 * a2 + g1 * a3;
                        }
                    }
                }
            }
        }
    }
}

fn read_output(plan: &LanePlan, ws: &Workspace, p: usize) -> PointJets {
    let out = ws.pre.last().unwrap();
    let mut pj = PointJets {
        value: out[at(0, 1, 0) + p],
        ..Default::default()
    };
    for (lane, &(axis, order)) in plan.lanes.iter().enumerate().skip(1) {
        pj.d[axis][order - 1] = out[at(lane, 1, 0) + p];
    }
    pj
}

fn backward_block(net: &Network, params: &[f64], plan: &LanePlan, ws: &mut Workspace, bn: usize, grad: &mut [f64]) {
    let sizes = net.layer_sizes();
    let nl = plan.n();
    let Workspace {
        pre,
        post,
        abar,
        abar_prev,
        hbar,
    } = ws;
    for l in (0..net.n_layers()).rev() {
        let (w, _) = net.layer(params, l);
        let (n_in, n_out) = (sizes[l], sizes[l + 1]);
        let off = net.offset(l);
        let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
        let hin = &post[l];
        for lane in 0..nl {
            for i in 0..n_out {
                let ab = &abar[at(lane, n_out, i)..][..bn];
                if lane == 0 {
                    gb[i] += ab.iter().sum::<f64>();
                }
                let grow = &mut gw[i * n_in..(i + 1) * n_in];
                for (j, g) in grow.iter_mut().enumerate() {
                    let h = &hin[at(lane, n_in, j)..][..bn];
                    *g += ab.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        if l == 0 {
            break;
        }
        // hbar = Wᵀ abar
        for lane in 0..nl {
            for j in 0..n_in {
                hbar[at(lane, n_in, j)..][..bn].fill(0.0);
            }
            for i in 0..n_out {
                let ab = &abar[at(lane, n_out, i)..][..bn];
                let wrow = &w[i * n_in..(i + 1) * n_in];
                for (j, &wij) in wrow.iter().enumerate() {
                    let hb = &mut hbar[at(lane, n_in, j)..][..bn];
                    for (h, a) in hb.iter_mut().zip(ab) {
                        *h += wij * a;
                    }
                }
            }
        }
        // through tanh lanes of layer l - 1
        let pre_prev = &pre[l - 1];
        let act = &post[l];
        let width = n_in;
        for j in 0..width {
            for p in 0..bn {
                let t = act[at(0, width, j) + p];
                let t2 = t * t;
                let g1 = 1.0 - t2;
                let hb0 = hbar[at(0, width, j) + p];
                let mut a0bar = hb0 * g1;
                if !plan.groups.is_empty() {
                    let g2 = -2.0 * t * g1;
                    let g3 = g1 * (6.0 * t2 - 2.0);
                    let g4 = 8.0 * t * g1 * (2.0 - 3.0 * t2);
                    for g in &plan.groups {
                        let mut a = [0.0; 3];
                        let mut hb = [0.0; 3];
                        for k in 0..g.order {
                            a[k] = pre_prev[at(g.lane[k], width, j) + p];
                            hb[k] = hbar[at(g.lane[k], width, j) + p];
                        }
                        let [a1, a2, a3] = a;
                        let [hb1, hb2, hb3] = hb;
                        a0bar += hb1 * g2 * a1
                            + hb2 * (g3 * a1 * a1 + g2 * a2)
                            + hb3 * (g4 * a1 * a1 * a1 + 3.0 * g3 * a1 * a2 + g2 * a3);
                        let ab = [
                            hb1 * g1 + hb2 * 2.0 * g2 * a1 + hb3 * (3.0 * g3 * a1 * a1 + 3.0 * g2 * a2),
                            hb2 * g1 + hb3 * 3.0 * g2 * a1,
                            hb3 * g1,
                        ];
                        for k in 0..g.order {
                            abar_prev[at(g.lane[k], width, j) + p] = ab[k];
                        }
                    }
                }
                abar_prev[at(0, width, j) + p] = a0bar;
            }
        }
        std::mem::swap(abar, abar_prev);
    }
}

/// Output jets at every point, in input order.
pub fn eval_points(net: &Network, params: &[f64], points: &[[f64; MAX_INPUTS]], orders: LaneOrders) -> Vec<PointJets> {
    assert_eq!(params.len(), net.param_count(), "parameter length");
    let plan = LanePlan::new(net.n_inputs(), orders);
    par::map_chunks(points, CHUNK, |_, chunk| {
        let mut ws = Workspace::new(net, &plan);
        let mut out = Vec::with_capacity(chunk.len());
        for block in chunk.chunks(BLOCK) {
            forward_block(net, params, &plan, &mut ws, block);
            out.extend((0..block.len()).map(|p| read_output(&plan, &ws, p)));
        }
        out
    })
    .into_iter()
    .flatten()
    .collect()
}

/// Accumulates `Σ_p ⟨adjoint_p, ∂jets_p/∂θ⟩` into `grad`.
///
/// `adjoint(i, jets)` receives the global point index and the recomputed
/// output jets at that point and returns the cotangent of every lane.
pub fn backprop_points<F>(
    net: &Network,
    params: &[f64],
    points: &[[f64; MAX_INPUTS]],
    orders: LaneOrders,
    adjoint: F,
    grad: &mut [f64],
) where
    F: Fn(usize, &PointJets) -> PointJets + Sync + Send,
{
    assert_eq!(params.len(), net.param_count(), "parameter length");
    assert_eq!(grad.len(), net.param_count(), "gradient length");
    if points.is_empty() {
        return;
    }
    let plan = LanePlan::new(net.n_inputs(), orders);
    let partials = par::map_chunks(points, CHUNK, |offset, chunk| {
        let mut ws = Workspace::new(net, &plan);
        let mut g = vec![0.0; grad.len()];
        for (b, block) in chunk.chunks(BLOCK).enumerate() {
            forward_block(net, params, &plan, &mut ws, block);
            for p in 0..block.len() {
                let jets = read_output(&plan, &ws, p);
                let bar = adjoint(offset + b * BLOCK + p, &jets);
                for (lane, &(axis, order)) in plan.lanes.iter().enumerate() {
                    ws.abar[at(lane, 1, 0) + p] = bar.deriv(axis, order);
                }
            }
            backward_block(net, params, &plan, &mut ws, block.len(), &mut g);
        }
        g
    });
    for g in partials {
        for (acc, v) in grad.iter_mut().zip(g) {
            *acc += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Jet, Scalar, Tape};
    use crate::mlp::{InputScaling, MlpParams};

    fn net(sizes: Vec<usize>) -> Network {
        let bounds: Vec<(f64, f64)> = (0..sizes[0]).map(|i| (0.0, 1.0 + i as f64)).collect();
        Network::new(sizes, InputScaling::unit_box(&bounds))
    }

    fn points(n: usize, dim: usize) -> Vec<[f64; 3]> {
        (0..n)
            .map(|i| {
                let mut p = [0.0; 3];
                for (d, slot) in p.iter_mut().enumerate().take(dim) {
                    *slot = ((i * 7 + d * 13) % 29) as f64 / 29.0 * (1.0 + d as f64);
                }
                p
            })
            .collect()
    }

    #[test]
    fn lanes_match_reference_jets() {
        let net = net(vec![3, 7, 6, 1]);
        let p = MlpParams::init(net.layer_sizes(), 11).values;
        let pts = points(70, 3);
        let orders = LaneOrders([3, 1, 2]);
        let jets = eval_points(&net, &p, &pts, orders);
        for (pt, pj) in pts.iter().zip(&jets) {
            assert!((pj.value - net.forward(&p, pt)).abs() < 1e-14);
            for axis in 0..3 {
                let r = net.forward_jets(&p, pt, axis);
                for k in 1..=orders.order(axis) as usize {
                    let want = r.lanes()[k];
                    assert!((pj.deriv(axis, k) - want).abs() < 1e-12 * (1.0 + want.abs()));
                }
            }
        }
    }

    #[test]
    fn vjp_matches_taped_jets() {
        // loss = Σ_p (c0 u + c1 u_x + c2 u_xx + c3 u_xxx + c4 u_t)
        let net = net(vec![2, 5, 4, 1]);
        let p = MlpParams::init(net.layer_sizes(), 5).values;
        let pts = points(41, 2);
        let orders = LaneOrders([3, 1, 0]);
        let c = [0.3, -1.1, 0.7, 0.25, 1.9];
        let mut g = vec![0.0; p.len()];
        backprop_points(
            &net,
            &p,
            &pts,
            orders,
            |i, _| {
                let s = 1.0 + i as f64 * 0.01;
                let mut bar = PointJets {
                    value: c[0] * s,
                    ..Default::default()
                };
                bar.d[0] = [c[1] * s, c[2] * s, c[3] * s];
                bar.d[1][0] = c[4] * s;
                bar
            },
            &mut g,
        );

        let tape = Tape::new();
        let w = tape.vars(&p);
        let wj: Vec<Jet<_>> = w.iter().map(|&v| Jet::constant(v)).collect();
        let mut loss = w[0].lift(0.0);
        for (i, pt) in pts.iter().enumerate() {
            let s = 1.0 + i as f64 * 0.01;
            let x = Jet::variable(w[0].lift(pt[0]));
            let t = Jet::constant(w[0].lift(pt[1]));
            let jx = net.forward_generic(&wj, &[x, t]);
            let xt = Jet::constant(w[0].lift(pt[0]));
            let tt = Jet::variable(w[0].lift(pt[1]));
            let jt = net.forward_generic(&wj, &[xt, tt]);
            let term = jx.v.scale(c[0]) + jx.d1.scale(c[1]) + jx.d2.scale(c[2]) + jx.d3.scale(c[3]) + jt.d1.scale(c[4]);
            loss = loss + term.scale(s);
        }
        let adj = tape.gradient(loss).unwrap();
        for (k, wk) in w.iter().enumerate() {
            let r = adj.wrt(wk);
            assert!(
                (g[k] - r).abs() < 1e-11 * (1.0 + r.abs()),
                "param {k}: {} vs {}",
                g[k],
                r
            );
        }
    }

    #[test]
    fn empty_batch_is_noop() {
        let net = net(vec![2, 3, 1]);
        let p = MlpParams::init(net.layer_sizes(), 1).values;
        let mut g = vec![0.0; p.len()];
        backprop_points(
            &net,
            &p,
            &[],
            LaneOrders::value_only(),
            |_, _| PointJets::default(),
            &mut g,
        );
        assert!(g.iter().all(|&x| x == 0.0));
        assert!(eval_points(&net, &p, &[], LaneOrders::value_only()).is_empty());
    }
}
