//! Structural and parameter mutations over testcases.
//!
//! Every operator returns a well-formed testcase or an error; whether the
//! result executes without bailing is left to the search. Structural
//! operators work on a [`Graph`] and synthesize producer instances when a
//! needed input type has no free object.

pub mod graph;
pub mod params;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::outcome::OutcomeKind;
use crate::spec::{BlockId, Specification, TypeId};
use crate::testcase::{ParamKind, ParamRecord, ParamValue, Testcase};

pub use graph::{Graph, Link, Node};

#[derive(Debug, Clone, PartialEq)]
pub struct MutationConfig {
    /// Chance that a string/file value is drawn from its block's hints.
    pub p_hint: f64,
    /// Chance of wiring an input to an existing free object rather than
    /// synthesizing a new producer, when one is available.
    pub p_reuse: f64,
    pub max_depth: usize,
    pub max_instances: usize,
    /// Retries for operators that pick something at random and may fail.
    pub retries: usize,
}

impl Default for MutationConfig {
    fn default() -> Self {
        MutationConfig {
            p_hint: 0.1,
            p_reuse: 0.85,
            max_depth: 8,
            max_instances: 32,
            retries: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MutationError {
    #[error("no block has constructable inputs")]
    NoConstructableSeed,
    #[error("block {0} has an unconstructable input type")]
    UnconstructableSeed(BlockId),
    #[error("crossover needs a non-empty corpus")]
    EmptyCorpus,
    #[error("operator needs a non-empty testcase")]
    EmptyTestcase,
    /// The operator could not produce a different testcase.
    #[error("no-op: {0}")]
    NoOp(&'static str),
}

/// A mutated testcase plus the positions of instances the operator added.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mutation {
    pub testcase: Testcase,
    pub stitched: Vec<usize>,
}

/// Read-only access to candidate donor testcases.
pub trait CorpusView {
    fn len(&self) -> usize;
    fn get(&self, i: usize) -> &Testcase;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CorpusView for [Testcase] {
    fn len(&self) -> usize {
        <[Testcase]>::len(self)
    }
    fn get(&self, i: usize) -> &Testcase {
        &self[i]
    }
}

impl CorpusView for Vec<Testcase> {
    fn len(&self) -> usize {
        Vec::len(self)
    }
    fn get(&self, i: usize) -> &Testcase {
        &self[i]
    }
}

/// Per-call inputs: the random source, donor testcases, and the outcome of
/// the testcase being mutated (for frontier selection).
pub struct MutationContext<'a, R: Rng> {
    pub rng: &'a mut R,
    pub corpus: &'a dyn CorpusView,
    pub outcome: Option<&'a OutcomeKind>,
}

impl<'a, R: Rng> MutationContext<'a, R> {
    pub fn new(rng: &'a mut R, corpus: &'a dyn CorpusView, outcome: Option<&'a OutcomeKind>) -> Self {
        MutationContext { rng, corpus, outcome }
    }
}

/// Last observed parameter shape of each block.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ShapeCache {
    shapes: HashMap<BlockId, Vec<ParamKind>>,
}

impl ShapeCache {
    pub fn get(&self, b: BlockId) -> &[ParamKind] {
        self.shapes.get(&b).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Records a shape; returns `true` if it differs from what was known.
    pub fn learn(&mut self, b: BlockId, shape: &[ParamKind]) -> bool {
        match self.shapes.get(&b) {
            Some(s) if s.len() >= shape.len() && s[..shape.len()] == *shape => false,
            _ => {
                self.shapes.insert(b, shape.to_vec());
                true
            }
        }
    }
}

/// Producer/consumer tables restricted to blocks whose inputs are all
/// constructable.
#[derive(Debug, Clone)]
struct SpecIndex {
    usable: Vec<BlockId>,
    is_usable: Vec<bool>,
    producers: Vec<Vec<BlockId>>,
    consumers: Vec<Vec<BlockId>>,
}

impl SpecIndex {
    fn new(spec: &Specification) -> Self {
        let ok = spec.constructable_types();
        let is_usable: Vec<bool> = spec
            .blocks
            .iter()
            .map(|b| b.inputs.iter().all(|p| ok[p.ty.index()]))
            .collect();
        let usable: Vec<BlockId> = spec.block_ids().filter(|b| is_usable[b.index()]).collect();
        let mut producers = vec![Vec::new(); spec.types.len()];
        let mut consumers = vec![Vec::new(); spec.types.len()];
        for &b in &usable {
            let blk = spec.block(b);
            for p in &blk.outputs {
                if producers[p.ty.index()].last() != Some(&b) {
                    producers[p.ty.index()].push(b);
                }
            }
            for p in &blk.inputs {
                if consumers[p.ty.index()].last() != Some(&b) {
                    consumers[p.ty.index()].push(b);
                }
            }
        }
        SpecIndex {
            usable,
            is_usable,
            producers,
            consumers,
        }
    }
}

/// Owns the per-spec tables every operator needs.
#[derive(Debug, Clone)]
pub struct Mutator {
    spec: Arc<Specification>,
    index: SpecIndex,
    pub config: MutationConfig,
    pub shapes: ShapeCache,
}

/// Remaining instance budget while synthesizing producers.
struct Synth {
    budget: usize,
}

impl Mutator {
    pub fn new(spec: Arc<Specification>, config: MutationConfig) -> Self {
        let index = SpecIndex::new(&spec);
        Mutator {
            spec,
            index,
            config,
            shapes: ShapeCache::default(),
        }
    }

    pub fn spec(&self) -> &Specification {
        &self.spec
    }

    /// Blocks that can appear in generated testcases.
    pub fn usable_blocks(&self) -> &[BlockId] {
        &self.index.usable
    }

    /// Random parameter record for a block, following its known shape.
    pub fn fresh_params<R: Rng>(&self, rng: &mut R, b: BlockId) -> ParamRecord {
        let hints = self.spec.hints_for(b);
        ParamRecord::new(
            self.shapes
                .get(b)
                .iter()
                .map(|&k| params::random_value(rng, k, hints, self.config.p_hint))
                .collect(),
        )
    }

    fn new_node<R: Rng>(&self, rng: &mut R, b: BlockId) -> Node {
        Node {
            block: b,
            inputs: vec![None; self.spec.block(b).inputs.len()],
            params: self.fresh_params(rng, b),
            fresh: true,
        }
    }

    /// Fills every input of the node about to be inserted at `*pos`, reusing
    /// free objects before `*pos` or inserting producers at `*pos` (which
    /// advances it). `claimed` holds links already promised to the node.
    #[allow(clippy::too_many_arguments)]
    fn satisfy<R: Rng>(
        &self,
        s: &mut Synth,
        rng: &mut R,
        g: &mut Graph,
        pos: &mut usize,
        needs: &[TypeId],
        claimed: &mut Vec<Link>,
        depth: usize,
    ) -> Option<Vec<Link>> {
        let mut links: Vec<Option<Link>> = vec![None; needs.len()];
        let mut order: Vec<usize> = (0..needs.len()).collect();
        order.shuffle(rng);
        for j in order {
            let ty = needs[j];
            let free: Vec<Link> = g
                .unconsumed_before(&self.spec, *pos, claimed)
                .into_iter()
                .filter(|&(_, t)| t == ty)
                .map(|(l, _)| l)
                .collect();
            let producers = &self.index.producers[ty.index()];
            let can_build = depth < self.config.max_depth && !producers.is_empty();
            let link = if !free.is_empty() && (!can_build || rng.gen_bool(self.config.p_reuse)) {
                *free.choose(rng).expect("non-empty")
            } else if can_build {
                if s.budget == 0 {
                    return None;
                }
                s.budget -= 1;
                let p = *producers.choose(rng).expect("non-empty");
                let mut node = self.new_node(rng, p);
                let p_inputs: Vec<TypeId> = self.spec.block(p).inputs.iter().map(|x| x.ty).collect();
                let mut inner_claimed = claimed.clone();
                let inner = self.satisfy(s, rng, g, pos, &p_inputs, &mut inner_claimed, depth + 1)?;
                node.inputs = inner.into_iter().map(Some).collect();
                let slots: Vec<usize> = self
                    .spec
                    .block(p)
                    .outputs
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| o.ty == ty)
                    .map(|(q, _)| q)
                    .collect();
                g.insert(*pos, node);
                // links claimed earlier all point before *pos and are unaffected
                let l = Link {
                    node: *pos,
                    slot: *slots.choose(rng).expect("producer outputs the type"),
                };
                *pos += 1;
                l
            } else {
                return None;
            };
            claimed.push(link);
            links[j] = Some(link);
        }
        Some(links.into_iter().map(|l| l.expect("every input assigned")).collect())
    }

    fn synth(&self, current: usize) -> Synth {
        Synth {
            budget: self.config.max_instances.saturating_sub(current),
        }
    }

    /// Inserts an instance of `b` at `pos` (with `preset` inputs already
    /// fixed) and wires the remaining inputs. Returns the node's final
    /// position.
    fn stitch<R: Rng>(
        &self,
        rng: &mut R,
        g: &mut Graph,
        mut pos: usize,
        mut node: Node,
        preset: &[(usize, Link)],
    ) -> Option<usize> {
        if g.len() >= self.config.max_instances {
            return None;
        }
        let mut s = self.synth(g.len() + 1);
        let blk = self.spec.block(node.block);
        let mut claimed: Vec<Link> = preset.iter().map(|&(_, l)| l).collect();
        let open: Vec<usize> = (0..blk.inputs.len())
            .filter(|j| !preset.iter().any(|(pj, _)| pj == j))
            .collect();
        let needs: Vec<TypeId> = open.iter().map(|&j| blk.inputs[j].ty).collect();
        let links = self.satisfy(&mut s, rng, g, &mut pos, &needs, &mut claimed, 0)?;
        for &(j, l) in preset {
            node.inputs[j] = Some(l);
        }
        for (j, l) in open.into_iter().zip(links) {
            node.inputs[j] = Some(l);
        }
        g.insert(pos, node);
        Some(pos)
    }

    fn finish(&self, g: &Graph) -> Mutation {
        let testcase = g.to_testcase(&self.spec);
        debug_assert!(testcase.is_well_formed(&self.spec), "{testcase:?}");
        Mutation {
            stitched: g
                .nodes
                .iter()
                .enumerate()
                .filter(|(_, n)| n.fresh)
                .map(|(i, _)| i)
                .collect(),
            testcase,
        }
    }

    /// A fresh testcase built around a randomly chosen seed block.
    pub fn regenerate<R: Rng>(&self, ctx: &mut MutationContext<R>) -> Result<Mutation, MutationError> {
        let seed = *self
            .index
            .usable
            .choose(ctx.rng)
            .ok_or(MutationError::NoConstructableSeed)?;
        self.regenerate_from(ctx, seed)
    }

    /// A fresh testcase ending in an instance of `seed`, with producers
    /// prepended for its inputs.
    pub fn regenerate_from<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        seed: BlockId,
    ) -> Result<Mutation, MutationError> {
        if !self.index.is_usable[seed.index()] {
            return Err(MutationError::UnconstructableSeed(seed));
        }
        for _ in 0..self.config.retries.max(1) {
            let mut g = Graph::default();
            let node = self.new_node(ctx.rng, seed);
            if self.stitch(ctx.rng, &mut g, 0, node, &[]).is_some() {
                return Ok(self.finish(&g));
            }
        }
        Err(MutationError::NoOp("producer synthesis exceeded the size caps"))
    }

    /// Stitches one instance taken from a random corpus testcase into `t`.
    pub fn crossover<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
    ) -> Result<Mutation, MutationError> {
        if ctx.corpus.is_empty() {
            return Err(MutationError::EmptyCorpus);
        }
        let host = Graph::from_testcase(&self.spec, t);
        let limit = match ctx.outcome {
            Some(OutcomeKind::Bail { index }) | Some(OutcomeKind::Crash { index, .. }) => {
                (*index).min(host.len())
            }
            _ => host.len(),
        };
        for _ in 0..self.config.retries.max(1) {
            let donor = ctx.corpus.get(ctx.rng.gen_range(0..ctx.corpus.len()));
            if donor.is_empty() {
                continue;
            }
            let inst = &donor.instances[ctx.rng.gen_range(0..donor.len())];
            if inst.block.index() >= self.spec.blocks.len() || !self.index.is_usable[inst.block.index()] {
                continue;
            }
            let mut g = host.clone();
            let node = Node {
                block: inst.block,
                inputs: vec![None; inst.refs.len()],
                params: inst.params.clone(),
                fresh: true,
            };
            let pos = ctx.rng.gen_range(0..=limit);
            if self.stitch(ctx.rng, &mut g, pos, node, &[]).is_some() {
                return Ok(self.finish(&g));
            }
        }
        Err(MutationError::NoOp("no donor instance could be stitched"))
    }

    fn frontier_target<R: Rng>(&self, ctx: &mut MutationContext<R>, len: usize) -> usize {
        match ctx.outcome {
            Some(OutcomeKind::Bail { index }) if *index >= 1 && *index <= len => index - 1,
            _ => ctx.rng.gen_range(0..len),
        }
    }

    /// Attaches a new instance to the frontier: either consuming one of its
    /// outputs or producing one of its inputs.
    pub fn frontier_extend<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
    ) -> Result<Mutation, MutationError> {
        if t.is_empty() {
            return Err(MutationError::EmptyTestcase);
        }
        let target = self.frontier_target(ctx, t.len());
        let base = Graph::from_testcase(&self.spec, t);
        let tblock = self.spec.block(base.nodes[target].block);

        #[derive(Clone, Copy)]
        enum Plan {
            Consume { slot: usize, block: BlockId },
            Produce { input: usize, block: BlockId },
        }
        let mut plans = Vec::new();
        for (q, out) in tblock.outputs.iter().enumerate() {
            let taken = base.consumer_of(Link { node: target, slot: q }).is_some();
            for &b in &self.index.consumers[out.ty.index()] {
                let passes_on = self.spec.block(b).outputs.iter().any(|o| o.ty == out.ty);
                if !taken || passes_on {
                    plans.push(Plan::Consume { slot: q, block: b });
                }
            }
        }
        for (j, inp) in tblock.inputs.iter().enumerate() {
            for &b in &self.index.producers[inp.ty.index()] {
                plans.push(Plan::Produce { input: j, block: b });
            }
        }
        if plans.is_empty() {
            return Err(MutationError::NoOp("nothing attaches to the frontier"));
        }

        for _ in 0..self.config.retries.max(1) {
            let plan = *plans.choose(ctx.rng).expect("non-empty");
            let mut g = base.clone();
            match plan {
                Plan::Consume { slot, block } => {
                    let src = Link { node: target, slot };
                    let ty = g.output_type(&self.spec, src);
                    let prev = g.consumer_of(src);
                    let blk = self.spec.block(block);
                    let js: Vec<usize> = (0..blk.inputs.len()).filter(|&j| blk.inputs[j].ty == ty).collect();
                    let j = *js.choose(ctx.rng).expect("consumer takes the type");
                    if let Some((c, cj)) = prev {
                        // free the output for the new instance; re-linked below
                        g.nodes[c].inputs[cj] = None;
                    }
                    let node = self.new_node(ctx.rng, block);
                    let Some(at) = self.stitch(ctx.rng, &mut g, target + 1, node, &[(j, src)]) else {
                        continue;
                    };
                    if let Some((c, cj)) = prev {
                        let c = if c > target { c + (g.len() - base.len()) } else { c };
                        let outs: Vec<usize> = blk
                            .outputs
                            .iter()
                            .enumerate()
                            .filter(|(_, o)| o.ty == ty)
                            .map(|(q, _)| q)
                            .collect();
                        let q = *outs.choose(ctx.rng).expect("checked when planning");
                        g.nodes[c].inputs[cj] = Some(Link { node: at, slot: q });
                    }
                    return Ok(self.finish(&g));
                }
                Plan::Produce { input, block } => {
                    let node = self.new_node(ctx.rng, block);
                    let ty = tblock.inputs[input].ty;
                    // the old source becomes free once the target is rewired
                    g.nodes[target].inputs[input] = None;
                    let Some(at) = self.stitch(ctx.rng, &mut g, target, node, &[]) else {
                        continue;
                    };
                    let tpos = target + (g.len() - base.len());
                    let outs: Vec<usize> = self
                        .spec
                        .block(block)
                        .outputs
                        .iter()
                        .enumerate()
                        .filter(|(_, o)| o.ty == ty)
                        .map(|(q, _)| q)
                        .collect();
                    let q = *outs.choose(ctx.rng).expect("producer outputs the type");
                    g.nodes[tpos].inputs[input] = Some(Link { node: at, slot: q });
                    return Ok(self.finish(&g));
                }
            }
        }
        Err(MutationError::NoOp("frontier attachment exceeded the size caps"))
    }

    /// Drops every instance from the bail point (or a random point) onward.
    pub fn frontier_trim_repair<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
    ) -> Result<Mutation, MutationError> {
        if t.is_empty() {
            return Err(MutationError::EmptyTestcase);
        }
        let cut = match ctx.outcome {
            Some(OutcomeKind::Bail { index }) if *index < t.len() => *index,
            _ => ctx.rng.gen_range(0..t.len()),
        };
        let testcase = Testcase::new(t.instances[..cut].to_vec());
        debug_assert!(testcase.is_well_formed(&self.spec));
        Ok(Mutation {
            testcase,
            stitched: Vec::new(),
        })
    }

    /// Mutates one or more parameter values; structure is untouched.
    pub fn mutate_params<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
    ) -> Result<Mutation, MutationError> {
        let slots: Vec<(usize, usize)> = t
            .instances
            .iter()
            .enumerate()
            .flat_map(|(i, inst)| (0..inst.params.values.len()).map(move |j| (i, j)))
            .collect();
        if slots.is_empty() {
            return Err(MutationError::NoOp("no parameters to mutate"));
        }
        let mut out = t.clone();
        let rounds = 1 + (ctx.rng.gen::<u32>().trailing_ones() as usize).min(3);
        for _ in 0..rounds {
            let (i, j) = *slots.choose(ctx.rng).expect("non-empty");
            let kind = out.instances[i].params.values[j].kind;
            let hints = self.spec.hints_for(out.instances[i].block);
            if kind.is_variable() && !hints.is_empty() && ctx.rng.gen_bool(self.config.p_hint) {
                let h = hints.choose(ctx.rng).expect("non-empty").clone();
                out.instances[i].params.values[j] = ParamValue { kind, bytes: h };
                continue;
            }
            let donor = self.splice_donor(ctx, &out, kind, (i, j));
            params::mutate_bytes(ctx.rng, &mut out.instances[i].params.values[j], donor.as_deref());
        }
        Ok(Mutation {
            testcase: out,
            stitched: Vec::new(),
        })
    }

    fn splice_donor<R: Rng>(
        &self,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
        kind: ParamKind,
        skip: (usize, usize),
    ) -> Option<Vec<u8>> {
        let same_kind = |v: &ParamValue| match (v.kind, kind) {
            (ParamKind::Fixed(_), ParamKind::Fixed(_)) => true,
            (a, b) => a == b,
        };
        let mut pool: Vec<&[u8]> = t
            .instances
            .iter()
            .enumerate()
            .flat_map(|(i, inst)| {
                inst.params
                    .values
                    .iter()
                    .enumerate()
                    .filter(move |(j, _)| (i, *j) != skip)
                    .map(|(_, v)| v)
            })
            .filter(|v| same_kind(v))
            .map(|v| v.bytes.as_slice())
            .collect();
        if !ctx.corpus.is_empty() {
            let other = ctx.corpus.get(ctx.rng.gen_range(0..ctx.corpus.len()));
            pool.extend(
                other
                    .instances
                    .iter()
                    .flat_map(|inst| inst.params.values.iter())
                    .filter(|v| same_kind(v))
                    .map(|v| v.bytes.as_slice()),
            );
        }
        pool.choose(ctx.rng).map(|b| b.to_vec())
    }
}

impl Mutator {
    /// Baseline sampler: `len` blocks drawn uniformly from the whole spec,
    /// each input wired to a uniformly chosen free earlier output of the
    /// right type. Returns `None` when some input has no candidate, i.e.
    /// the sample is ill-formed and must be discarded.
    pub fn uniform_sequence<R: Rng>(&self, rng: &mut R, len: usize) -> Option<Testcase> {
        if self.spec.blocks.is_empty() {
            return None;
        }
        let mut g = Graph::default();
        for pos in 0..len {
            let b = BlockId(rng.gen_range(0..self.spec.blocks.len()) as u32);
            let mut node = self.new_node(rng, b);
            let mut claimed = Vec::new();
            for (j, p) in self.spec.block(b).inputs.iter().enumerate() {
                let free: Vec<Link> = g
                    .unconsumed_before(&self.spec, pos, &claimed)
                    .into_iter()
                    .filter(|&(_, t)| t == p.ty)
                    .map(|(l, _)| l)
                    .collect();
                let l = *free.choose(rng)?;
                claimed.push(l);
                node.inputs[j] = Some(l);
            }
            g.nodes.push(node);
        }
        Some(g.to_testcase(&self.spec))
    }
}

/// The five operators, for scheduling and testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operator {
    Params,
    Regenerate,
    Crossover,
    FrontierExtend,
    FrontierTrimRepair,
}

impl Operator {
    pub const STRUCTURAL: [Operator; 4] = [
        Operator::Regenerate,
        Operator::Crossover,
        Operator::FrontierExtend,
        Operator::FrontierTrimRepair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operator::Params => "params",
            Operator::Regenerate => "regenerate",
            Operator::Crossover => "crossover",
            Operator::FrontierExtend => "frontier_extend",
            Operator::FrontierTrimRepair => "frontier_trim_repair",
        }
    }
}

impl Mutator {
    pub fn apply<R: Rng>(
        &self,
        op: Operator,
        ctx: &mut MutationContext<R>,
        t: &Testcase,
    ) -> Result<Mutation, MutationError> {
        match op {
            Operator::Params => self.mutate_params(ctx, t),
            Operator::Regenerate => self.regenerate(ctx),
            Operator::Crossover => self.crossover(ctx, t),
            Operator::FrontierExtend => self.frontier_extend(ctx, t),
            Operator::FrontierTrimRepair => self.frontier_trim_repair(ctx, t),
        }
    }
}
