//! Central finite-difference verification of analytic gradients.
//!
//! The numeric side never touches the backward pass: it only re-runs the
//! forward computation with one scalar nudged by `±eps` and differences the
//! loss, accumulated in `f64`.

use std::fmt;

use rand::seq::index::sample;
use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, NormMode, Var};
use crate::model::ConViViT;
use crate::params::{Ctx, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    /// Denominator floor of the relative error, per unit of `max(|loss|, 1)`.
    /// The `f32` forward rounds the loss to a relative precision, so the
    /// numeric derivative's absolute noise grows with the loss magnitude;
    /// gradients below the floor are effectively compared absolutely.
    pub floor: f64,
    /// Scalars checked per group; `None` checks every element.
    pub samples_per_group: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-3,
            tolerance: 1e-2,
            floor: 1e-2,
            samples_per_group: None,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Anything with a scalar loss over a list of tensors and an analytic gradient.
pub trait Objective {
    fn loss(&self, params: &[Tensor]) -> Result<f64>;
    fn loss_and_grads(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>;
}

#[derive(Clone, Debug)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(param name, flat index, analytic, numeric)` at the worst element.
    pub worst: Option<(String, usize, f64, f64)>,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    /// Floor actually used: `config.floor * max(|loss|, 1)`.
    pub floor: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.groups.iter().map(|g| g.checked).sum()
    }

    pub fn failing(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| !g.passed)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# central differences eps={:e}, rel_err=|a-n|/max(|a|,|n|,{:e}), tolerance={:e}",
            self.config.eps, self.floor, self.config.tolerance
        )?;
        writeln!(f, "{:<40} {:>8} {:>12}  status  worst (param[index] analytic numeric)", "group", "checked", "max_rel_err")?;
        for g in &self.groups {
            write!(
                f,
                "{:<40} {:>8} {:>12.3e}  {:<6}",
                g.name,
                g.checked,
                g.max_rel_err,
                if g.passed { "ok" } else { "FAIL" }
            )?;
            match &g.worst {
                Some((name, i, a, n)) => writeln!(f, "  {name}[{i}] {a:.6e} {n:.6e}")?,
                None => writeln!(f)?,
            }
        }
        write!(f, "overall: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Checks `objective` at `params`, grouping tensors by `groups[i]`.
pub fn grad_check<R: Rng + ?Sized>(
    objective: &dyn Objective,
    params: &[Tensor],
    names: &[String],
    groups: &[String],
    config: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    assert_eq!(params.len(), names.len());
    assert_eq!(params.len(), groups.len());
    let (loss, analytic) = objective.loss_and_grads(params)?;
    let floor = config.floor * loss.abs().max(1.0);
    let mut order: Vec<String> = Vec::new();
    for g in groups {
        if !order.contains(g) {
            order.push(g.clone());
        }
    }
    let mut reports = Vec::new();
    let mut work = params.to_vec();
    for group in order {
        let members: Vec<usize> = (0..params.len()).filter(|&i| groups[i] == group).collect();
        let total: usize = members.iter().map(|&i| params[i].numel()).sum();
        let picks: Vec<usize> = match config.samples_per_group {
            Some(n) if n < total => {
                let mut v = sample(rng, total, n).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..total).collect(),
        };
        let mut report = GroupReport { name: group.clone(), checked: 0, max_rel_err: 0.0, worst: None, passed: true };
        for flat in picks {
            let (mut which, mut elem) = (0, flat);
            for &i in &members {
                if elem < params[i].numel() {
                    which = i;
                    break;
                }
                elem -= params[i].numel();
            }
            let numeric = central_difference(objective, &mut work, which, elem, config.eps)?;
            let a = analytic[which].data()[elem] as f64;
            let mut err = relative_error(a, numeric, floor);
            if err.is_nan() {
                err = f64::INFINITY;
            }
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((names[which].clone(), elem, a, numeric));
            }
        }
        report.passed = report.max_rel_err < config.tolerance;
        reports.push(report);
    }
    Ok(GradCheckReport { config: config.clone(), floor, groups: reports })
}

fn central_difference(objective: &dyn Objective, work: &mut [Tensor], which: usize, elem: usize, eps: f64) -> Result<f64> {
    let original = work[which].clone();
    let x = original.data()[elem];
    let mut eval = |delta: f64| -> Result<(f64, f32)> {
        let mut data = original.to_vec();
        let moved = (x as f64 + delta) as f32;
        data[elem] = moved;
        work[which] = Tensor::from_parts(original.shape().to_vec(), data);
        Ok((objective.loss(work)?, moved))
    };
    let (lp, xp) = eval(eps)?;
    let (lm, xm) = eval(-eps)?;
    work[which] = original;
    // Divide by the step actually representable in f32.
    Ok((lp - lm) / (xp as f64 - xm as f64))
}

/// Objective wrapping a single tape expression: `loss = sum(out * probe)`
/// with a fixed random `probe`, so every output element carries weight.
pub struct OpObjective<F> {
    build: F,
    probe: Tensor,
}

impl<F> OpObjective<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    pub fn new<R: Rng + ?Sized>(build: F, inputs: &[Tensor], rng: &mut R) -> Result<Self> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        let probe = Tensor::uniform(g.shape(out), -1.0, 1.0, rng);
        Ok(OpObjective { build, probe })
    }
}

impl<F> Objective for OpObjective<F>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        let mut g = Graph::no_grad();
        let vars: Vec<Var> = params.iter().map(|t| g.constant(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        Ok(g.value(out).data().iter().zip(self.probe.data()).map(|(&a, &b)| a as f64 * b as f64).sum())
    }

    fn loss_and_grads(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
        let out = (self.build)(&mut g, &vars)?;
        let probe = g.constant(self.probe.clone());
        let weighted = g.mul(out, probe)?;
        let loss = g.sum_all(weighted)?;
        let grads = g.backward(loss)?;
        let value = g.value(loss).item()? as f64;
        let grads = vars
            .iter()
            .zip(params)
            .map(|(&v, p)| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((value, grads))
    }
}

/// Gradient-checks a single tape expression against every input element.
pub fn check_op<R: Rng + ?Sized>(
    build: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
    inputs: &[Tensor],
    config: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let objective = OpObjective::new(build, inputs, rng)?;
    let names: Vec<String> = (0..inputs.len()).map(|i| format!("input{i}")).collect();
    grad_check(&objective, inputs, &names, &names, config, rng)
}

/// Objective over the trainable tensors of a parameter store.
///
/// `forward` must build a scalar loss; it runs in a training-mode context so
/// batch norm uses batch statistics on both the analytic and numeric side.
pub struct StoreObjective<'a, F> {
    store: &'a ParamStore,
    ids: Vec<ParamId>,
    forward: F,
}

impl<'a, F> StoreObjective<'a, F>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    pub fn new(store: &'a ParamStore, forward: F) -> Self {
        StoreObjective { store, ids: store.trainable_ids().collect(), forward }
    }

    pub fn values(&self) -> Vec<Tensor> {
        self.ids.iter().map(|&id| self.store.get(id).clone()).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.ids.iter().map(|&id| self.store.entry(id).name.clone()).collect()
    }

    /// Parameter names with the last dotted component dropped, so a layer's
    /// weight and bias form one group.
    pub fn layer_groups(&self) -> Vec<String> {
        self.names()
            .into_iter()
            .map(|n| match n.rfind('.') {
                Some(i) => n[..i].to_string(),
                None => n,
            })
            .collect()
    }

    fn with_values(&self, params: &[Tensor]) -> Result<ParamStore> {
        let mut store = self.store.clone();
        for (&id, t) in self.ids.iter().zip(params) {
            store.set(id, t.clone())?;
        }
        Ok(store)
    }
}

impl<F> Objective for StoreObjective<'_, F>
where
    F: Fn(&mut Ctx) -> Result<Var>,
{
    fn loss(&self, params: &[Tensor]) -> Result<f64> {
        let store = self.with_values(params)?;
        let mut ctx = Ctx::no_grad(&store, NormMode::Train);
        let loss = (self.forward)(&mut ctx)?;
        ctx.graph.scalar_f64(loss)
    }

    fn loss_and_grads(&self, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
        let store = self.with_values(params)?;
        let mut ctx = Ctx::new(&store, NormMode::Train);
        let loss = (self.forward)(&mut ctx)?;
        let grads = ctx.graph.backward(loss)?;
        let mut by_id: Vec<Option<Tensor>> = vec![None; store.len()];
        for (id, g) in ctx.param_grads(&grads) {
            by_id[id.index()] = Some(g);
        }
        let out = self
            .ids
            .iter()
            .zip(params)
            .map(|(id, p)| by_id[id.index()].take().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        Ok((ctx.value(loss).item()? as f64, out))
    }
}

/// Gradient-checks every trainable tensor in `store`, grouped by layer.
pub fn check_store<R: Rng + ?Sized>(
    store: &ParamStore,
    forward: impl Fn(&mut Ctx) -> Result<Var>,
    config: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let objective = StoreObjective::new(store, forward);
    let (values, names, groups) = (objective.values(), objective.names(), objective.layer_groups());
    grad_check(&objective, &values, &names, &groups, config, rng)
}

/// Cross-entropy gradient check of a whole model on one batch, every
/// trainable tensor grouped by layer.
pub fn check_model<R: Rng + ?Sized>(
    model: &ConViViT,
    store: &ParamStore,
    clips: &Tensor,
    labels: &[usize],
    config: &GradCheckConfig,
    rng: &mut R,
) -> Result<GradCheckReport> {
    check_store(
        store,
        |ctx| {
            let x = ctx.input(clips.clone());
            let logits = model.forward(ctx, x)?;
            ctx.graph.cross_entropy(logits, labels)
        },
        config,
        rng,
    )
}
