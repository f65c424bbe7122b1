//! The graph network: lookup-table initialization, `t_max` rounds of
//! entity/fact message passing with layer-norm LSTM updates, and a voting
//! MLP that decodes the fake fact's final embedding into relation logits.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BatchedGraph;
use crate::tensor::tape::DEFAULT_LN_EPS;
use crate::tensor::{Groups, Index, ParamStore, Scalar, Tape, Tensor, Var};

/// How entity embeddings are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One shared learned vector for every entity.
    Relation,
    /// Mean of the entity's type embeddings.
    Mean,
    /// Sum of the entity's type embeddings.
    Sum,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relation" => Ok(Variant::Relation),
            "mean" => Ok(Variant::Mean),
            "sum" => Ok(Variant::Sum),
            _ => Err(Error::Config(format!(
                "unknown variant `{s}` (expected relation, mean or sum)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Relation => "relation",
            Variant::Mean => "mean",
            Variant::Sum => "sum",
        })
    }
}

/// Order of the two refinements inside a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateOrder {
    /// Both updates read the embeddings from the start of the round.
    Jacobi,
    /// Facts read the freshly updated entity embeddings.
    GaussSeidel,
}

impl std::str::FromStr for UpdateOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(UpdateOrder::Jacobi),
            "gauss-seidel" => Ok(UpdateOrder::GaussSeidel),
            _ => Err(Error::Config(format!("unknown update order `{s}`"))),
        }
    }
}

impl std::fmt::Display for UpdateOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateOrder::Jacobi => "jacobi",
            UpdateOrder::GaussSeidel => "gauss-seidel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width for entities, facts and the LSTM states.
    pub dim: usize,
    /// Message-passing rounds.
    pub t_max: usize,
    /// Output classes, null included.
    pub classes: usize,
    pub variant: Variant,
    /// Layer widths of the four message MLPs (last = message width).
    pub msg_layers: Vec<usize>,
    /// Hidden widths of the vote MLP; a final layer of width `classes` is appended.
    pub vote_hidden: Vec<usize>,
    pub update_order: UpdateOrder,
    pub ln_eps: f64,
    /// Rows of the relation table.
    pub num_relations: usize,
    /// Rows of the type table.
    pub num_types: usize,
}

impl ModelConfig {
    /// Widths follow `dim`: message MLPs `(d, d, d)`, vote MLP `(d, d, d, C)`.
    pub fn new(dim: usize, t_max: usize, classes: usize, variant: Variant) -> Self {
        Self {
            dim,
            t_max,
            classes,
            variant,
            msg_layers: vec![dim; 3],
            vote_hidden: vec![dim; 3],
            update_order: UpdateOrder::Jacobi,
            ln_eps: DEFAULT_LN_EPS,
            num_relations: 0,
            num_types: 0,
        }
    }

    pub fn with_vocab(mut self, num_relations: usize, num_types: usize) -> Self {
        self.num_relations = num_relations;
        self.num_types = num_types;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_owned()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.t_max == 0 {
            return bad("t_max must be >= 1");
        }
        if self.classes < 2 {
            return bad("at least 2 classes are required");
        }
        if self.msg_layers.is_empty() || self.msg_layers.contains(&0) {
            return bad("message MLP needs at least one non-empty layer");
        }
        if self.vote_hidden.contains(&0) {
            return bad("vote MLP layers must be non-empty");
        }
        if self.ln_eps <= 0.0 {
            return bad("ln_eps must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Mlp {
    layers: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
struct LstmCell {
    w: usize,
    // input, candidate, forget, output, cell
    ln: [(usize, usize); 5],
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    type_emb: Option<usize>,
    rel_emb: usize,
    entity_vec: Option<usize>,
    msg_es: Mlp,
    msg_et: Mlp,
    msg_fs: Mlp,
    msg_ft: Mlp,
    lstm_e: LstmCell,
    lstm_f: LstmCell,
    vote: Mlp,
}

/// Model configuration plus its trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f64> {
    config: ModelConfig,
    params: ParamStore<T>,
    layout: Layout,
}

/// Per-round values recorded by [`Model::forward_trace`].
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Scalar = f64> {
    /// `E^(1) ..= E^(t_max+1)`.
    pub entities: Vec<Tensor<T>>,
    /// `F^(1) ..= F^(t_max+1)`.
    pub facts: Vec<Tensor<T>>,
    pub entity_cells: Vec<Tensor<T>>,
    pub fact_cells: Vec<Tensor<T>>,
    /// Aggregated entity-update inputs `[Sᵀ·msg_s(F) | Tᵀ·msg_t(F)]`, one per round.
    pub entity_inputs: Vec<Tensor<T>>,
    /// Aggregated fact-update inputs `[S·msg_s(E) | T·msg_t(E)]`, one per round.
    pub fact_inputs: Vec<Tensor<T>>,
    pub logits: Tensor<T>,
}

/// A class ranking by descending logit, ties broken by ascending class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub ranking: Vec<usize>,
    pub argmax: usize,
}

pub fn predict<T: Scalar>(logits: &[T]) -> Prediction {
    let mut ranking: Vec<usize> = (0..logits.len()).collect();
    ranking.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let argmax = ranking.first().copied().unwrap_or(0);
    Prediction { ranking, argmax }
}

/// Training objective: softmax cross-entropy averaged over the batch.
pub fn loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.softmax_cross_entropy_classes(logits, labels)
}

fn glorot<T: Scalar>(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], bound, rng)
}

fn add_mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    input: usize,
    widths: &[usize],
    rng: &mut impl Rng,
) -> Mlp {
    let mut layers = Vec::with_capacity(widths.len());
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        let wid = store.insert(format!("{name}.W{i}"), glorot(fan_in, w, rng));
        let bid = store.insert(format!("{name}.b{i}"), Tensor::zeros(&[1, w]));
        layers.push((wid, bid));
        fan_in = w;
    }
    Mlp { layers }
}

fn add_lstm<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    input: usize,
    d: usize,
    rng: &mut impl Rng,
) -> LstmCell {
    let bound = (6.0 / (input + 2 * d) as f64).sqrt();
    let w = store.insert(format!("{name}.W"), Tensor::uniform(&[input + d, 4 * d], bound, rng));
    let mut ln = [(0, 0); 5];
    for (k, gate) in ["i", "j", "f", "o", "c"].iter().enumerate() {
        let g = store.insert(format!("{name}.ln_{gate}.gain"), Tensor::filled(&[1, d], T::one()));
        let bias = if *gate == "f" { T::one() } else { T::zero() };
        let b = store.insert(format!("{name}.ln_{gate}.bias"), Tensor::filled(&[1, d], bias));
        ln[k] = (g, b);
    }
    LstmCell { w, ln }
}

/// Index structures of a batch, shared across rounds.
struct BatchIndex {
    edge_relations: Groups,
    node_types: Groups,
    shared_entity: Groups,
    edge_source: Index,
    edge_target: Index,
    node_out: Groups,
    node_in: Groups,
    fake_rows: Index,
}

impl BatchIndex {
    fn new(b: &BatchedGraph) -> Self {
        Self {
            edge_relations: b
                .edge_relation
                .iter()
                .map(|r| r.map(|r| vec![r.0]).unwrap_or_default())
                .collect::<Vec<_>>()
                .into(),
            node_types: b
                .node_types
                .iter()
                .map(|ts| ts.iter().map(|t| t.0).collect())
                .collect::<Vec<_>>()
                .into(),
            shared_entity: vec![vec![0]; b.num_nodes()].into(),
            edge_source: Arc::from(b.edge_source.as_slice()),
            edge_target: Arc::from(b.edge_target.as_slice()),
            node_out: Arc::from(b.node_out.as_slice()),
            node_in: Arc::from(b.node_in.as_slice()),
            fake_rows: Arc::from(b.fake_rows()),
        }
    }
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters: embedding tables ~ U(±1/√d), Glorot-uniform weights,
    /// zero biases, layer-norm gains 1, forget-gate bias 1.
    pub fn init(config: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let table_bound = 1.0 / (d as f64).sqrt();
        let mut store = ParamStore::new();
        let (type_emb, entity_vec) = match config.variant {
            Variant::Relation => (
                None,
                Some(store.insert("entity_vec", Tensor::uniform(&[1, d], table_bound, rng))),
            ),
            Variant::Mean | Variant::Sum => (
                Some(store.insert(
                    "type_emb",
                    Tensor::uniform(&[config.num_types, d], table_bound, rng),
                )),
                None,
            ),
        };
        let rel_emb = store.insert(
            "rel_emb",
            Tensor::uniform(&[config.num_relations, d], table_bound, rng),
        );
        let msg_w = *config.msg_layers.last().unwrap();
        let msg_es = add_mlp(&mut store, "msg_es", d, &config.msg_layers, rng);
        let msg_et = add_mlp(&mut store, "msg_et", d, &config.msg_layers, rng);
        let msg_fs = add_mlp(&mut store, "msg_fs", d, &config.msg_layers, rng);
        let msg_ft = add_mlp(&mut store, "msg_ft", d, &config.msg_layers, rng);
        let lstm_e = add_lstm(&mut store, "lstm_e", 2 * msg_w, d, rng);
        let lstm_f = add_lstm(&mut store, "lstm_f", 2 * msg_w, d, rng);
        let mut vote_widths = config.vote_hidden.clone();
        vote_widths.push(config.classes);
        let vote = add_mlp(&mut store, "vote", d, &vote_widths, rng);
        Ok(Self {
            config,
            params: store,
            layout: Layout {
                type_emb,
                rel_emb,
                entity_vec,
                msg_es,
                msg_et,
                msg_fs,
                msg_ft,
                lstm_e,
                lstm_f,
                vote,
            },
        })
    }

    /// Rebuilds a model from stored parameters; every tensor must match the
    /// shape a fresh init would produce.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::init(config, &mut rng)?;
        if params.len() != model.params.len() {
            return Err(Error::Mismatch(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for i in 0..model.params.len() {
            let name = model.params.name(i).to_owned();
            let Some(t) = params.get(&name) else {
                return Err(Error::Mismatch(format!("missing parameter `{name}`")));
            };
            if t.shape() != model.params.tensor(i).shape() {
                return Err(Error::Mismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.tensor(i).shape()
                )));
            }
            *model.params.tensor_mut(i) = t.clone();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn new_tape(&self, checked: bool) -> Tape<T> {
        Tape::new().checked(checked).with_ln_eps(self.config.ln_eps)
    }

    fn mlp(&self, tape: &mut Tape<T>, vars: &[Var], mlp: &Mlp, x: Var) -> Result<Var> {
        let mut h = x;
        let last = mlp.layers.len() - 1;
        for (i, &(w, b)) in mlp.layers.iter().enumerate() {
            h = tape.matmul(h, vars[w])?;
            h = tape.add_row(h, vars[b])?;
            if i != last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Layer-norm LSTM step with ReLU candidate and output activations.
    fn lstm(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        cell: &LstmCell,
        input: Var,
        hidden: Var,
        state: Var,
    ) -> Result<(Var, Var)> {
        let d = self.config.dim;
        let xh = tape.concat(&[input, hidden])?;
        let z = tape.matmul(xh, vars[cell.w])?;
        let mut gates = [z; 4];
        for (k, gate) in gates.iter_mut().enumerate() {
            let s = tape.slice_cols(z, k * d, d)?;
            let (g, b) = cell.ln[k];
            *gate = tape.layer_norm(s, vars[g], vars[b])?;
        }
        let [i, j, f, o] = gates;
        let i = tape.sigmoid(i)?;
        let j = tape.relu(j)?;
        let f = tape.sigmoid(f)?;
        let o = tape.sigmoid(o)?;
        let keep = tape.mul(f, state)?;
        let write = tape.mul(i, j)?;
        let c = tape.add(keep, write)?;
        let (g, b) = cell.ln[4];
        let c = tape.layer_norm(c, vars[g], vars[b])?;
        let act = tape.relu(c)?;
        let h = tape.mul(act, o)?;
        Ok((h, c))
    }

    /// Builds `E^(1)` and `F^(1)` from the lookup tables. The fake fact and
    /// untyped entities start at zero.
    pub fn init_embeddings(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        batch: &BatchedGraph,
    ) -> Result<(Var, Var)> {
        let idx = BatchIndex::new(batch);
        self.init_embeddings_idx(tape, vars, &idx)
    }

    fn init_embeddings_idx(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        idx: &BatchIndex,
    ) -> Result<(Var, Var)> {
        let l = &self.layout;
        let facts = tape.sum_rows(vars[l.rel_emb], &idx.edge_relations)?;
        let entities = match self.config.variant {
            Variant::Relation => {
                tape.sum_rows(vars[l.entity_vec.unwrap()], &idx.shared_entity)?
            }
            Variant::Mean => tape.mean_rows(vars[l.type_emb.unwrap()], &idx.node_types)?,
            Variant::Sum => tape.sum_rows(vars[l.type_emb.unwrap()], &idx.node_types)?,
        };
        Ok((entities, facts))
    }

    /// Registers every parameter on `tape`, indexed by parameter id.
    pub fn register(&self, tape: &mut Tape<T>) -> Vec<Var> {
        (0..self.params.len()).map(|i| tape.param(&self.params, i)).collect()
    }

    /// Runs the whole network on `tape`, returning the `B×C` logits.
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], batch: &BatchedGraph) -> Result<Var> {
        self.run(tape, vars, batch, None)
    }

    fn run(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        batch: &BatchedGraph,
        mut trace: Option<&mut Vec<[Var; 6]>>,
    ) -> Result<Var> {
        let idx = BatchIndex::new(batch);
        let l = &self.layout;
        let d = self.config.dim;
        let (mut e, mut f) = self.init_embeddings_idx(tape, vars, &idx)?;
        let mut ec = tape.constant(Tensor::zeros(&[batch.num_nodes(), d]));
        let mut fc = tape.constant(Tensor::zeros(&[batch.num_edges(), d]));
        for _ in 0..self.config.t_max {
            // entities hear from incident facts: Sᵀ·msg_es(F), Tᵀ·msg_et(F)
            let to_src = self.mlp(tape, vars, &l.msg_es, f)?;
            let to_src = tape.sum_rows(to_src, &idx.node_out)?;
            let to_tgt = self.mlp(tape, vars, &l.msg_et, f)?;
            let to_tgt = tape.sum_rows(to_tgt, &idx.node_in)?;
            let e_in = tape.concat(&[to_src, to_tgt])?;
            let (e_next, ec_next) = self.lstm(tape, vars, &l.lstm_e, e_in, e, ec)?;

            // facts hear from their endpoints: S·msg_fs(E), T·msg_ft(E)
            let e_read = match self.config.update_order {
                UpdateOrder::Jacobi => e,
                UpdateOrder::GaussSeidel => e_next,
            };
            let from_src = self.mlp(tape, vars, &l.msg_fs, e_read)?;
            let from_src = tape.gather_rows(from_src, &idx.edge_source)?;
            let from_tgt = self.mlp(tape, vars, &l.msg_ft, e_read)?;
            let from_tgt = tape.gather_rows(from_tgt, &idx.edge_target)?;
            let f_in = tape.concat(&[from_src, from_tgt])?;
            let (f_next, fc_next) = self.lstm(tape, vars, &l.lstm_f, f_in, f, fc)?;

            if let Some(tr) = trace.as_deref_mut() {
                tr.push([e, f, ec, fc, e_in, f_in]);
            }
            (e, f, ec, fc) = (e_next, f_next, ec_next, fc_next);
        }
        if let Some(tr) = trace {
            tr.push([e, f, ec, fc, e, f]);
        }
        let fake = tape.gather_rows(f, &idx.fake_rows)?;
        self.mlp(tape, vars, &l.vote, fake)
    }

    /// Logits for a batch without recording gradients for later use.
    pub fn logits(&self, batch: &BatchedGraph) -> Result<Tensor<T>> {
        let mut tape = self.new_tape(false);
        let vars = self.register(&mut tape);
        let out = self.forward(&mut tape, &vars, batch)?;
        Ok(tape.value(out).clone())
    }

    /// Forward pass keeping every round's embeddings.
    pub fn forward_trace(&self, batch: &BatchedGraph) -> Result<ForwardTrace<T>> {
        let mut tape = self.new_tape(false);
        let vars = self.register(&mut tape);
        let mut rounds = Vec::new();
        let out = self.run(&mut tape, &vars, batch, Some(&mut rounds))?;
        let take = |k: usize, all: bool| -> Vec<Tensor<T>> {
            let n = if all { rounds.len() } else { rounds.len() - 1 };
            rounds[..n].iter().map(|r| tape.value(r[k]).clone()).collect()
        };
        Ok(ForwardTrace {
            entities: take(0, true),
            facts: take(1, true),
            entity_cells: take(2, true),
            fact_cells: take(3, true),
            entity_inputs: take(4, false),
            fact_inputs: take(5, false),
            logits: tape.value(out).clone(),
        })
    }

    /// Loss and parameter gradients for a labelled batch.
    pub fn loss_and_grads(
        &self,
        batch: &BatchedGraph,
        labels: &[usize],
        checked: bool,
    ) -> Result<(T, Vec<Tensor<T>>)> {
        let mut tape = self.new_tape(checked);
        let vars = self.register(&mut tape);
        let logits = self.forward(&mut tape, &vars, batch)?;
        let l = loss(&mut tape, logits, labels)?;
        let value = tape.value(l).data()[0];
        tape.backward(l)?;
        Ok((value, tape.param_grads(&self.params)))
    }

    /// Loss only.
    pub fn loss_value(&self, batch: &BatchedGraph, labels: &[usize]) -> Result<T> {
        let mut tape = self.new_tape(false);
        let vars = self.register(&mut tape);
        let logits = self.forward(&mut tape, &vars, batch)?;
        let l = loss(&mut tape, logits, labels)?;
        Ok(tape.value(l).data()[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{batch_graphs, GraphEdge, GraphNode, QueryGraph};
    use crate::kb::{EntityId, RelationId, TypeId};
    use rand_chacha::ChaCha8Rng;

    fn node(e: usize, types: &[usize]) -> GraphNode {
        GraphNode {
            entity: EntityId(e),
            types: types.iter().map(|&t| TypeId(t)).collect(),
        }
    }

    fn edge(s: usize, t: usize, r: Option<usize>) -> GraphEdge {
        GraphEdge {
            source: s,
            target: t,
            relation: r.map(RelationId),
            fact: None,
        }
    }

    fn model(variant: Variant, seed: u64) -> Model {
        let cfg = ModelConfig::new(6, 2, 5, variant).with_vocab(4, 3);
        Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn ranking_breaks_ties_by_class_index() {
        let p = predict(&[0.1, 0.9, 0.3]);
        assert_eq!(p.ranking, [1, 2, 0]);
        assert_eq!(p.argmax, 1);
        assert_eq!(predict(&[0.5; 4]).ranking, [0, 1, 2, 3]);
    }

    #[test]
    fn init_embeddings_mean_sum_and_fake_row() {
        let g = QueryGraph::from_parts(
            vec![node(0, &[0, 2]), node(1, &[1]), node(2, &[])],
            vec![edge(0, 1, None), edge(0, 2, Some(3)), edge(2, 1, Some(1))],
        )
        .unwrap();
        let b = batch_graphs(&[&g]).unwrap();
        for variant in [Variant::Mean, Variant::Sum] {
            let m = model(variant, 1);
            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            let (e, f) = m.init_embeddings(&mut tape, &vars, &b).unwrap();
            let types = m.params().get("type_emb").unwrap();
            let rels = m.params().get("rel_emb").unwrap();
            let (e, f) = (tape.value(e), tape.value(f));
            for j in 0..6 {
                let s = types.get(0, j) + types.get(2, j);
                let want = if variant == Variant::Mean { s / 2.0 } else { s };
                assert!((e.get(0, j) - want).abs() < 1e-15);
                assert_eq!(e.get(1, j), types.get(1, j));
                assert_eq!(e.get(2, j), 0.0);
                assert_eq!(f.get(0, j), 0.0);
                assert_eq!(f.get(1, j), rels.get(3, j));
            }
        }
        let m = model(Variant::Relation, 1);
        let mut tape = Tape::new();
        let vars = m.register(&mut tape);
        let (e, f) = m.init_embeddings(&mut tape, &vars, &b).unwrap();
        let shared = m.params().get("entity_vec").unwrap();
        for i in 0..3 {
            assert_eq!(tape.value(e).row(i), shared.row(0));
        }
        assert!(tape.value(f).row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_range_relation_is_an_error() {
        let g = QueryGraph::from_parts(
            vec![node(0, &[]), node(1, &[])],
            vec![edge(0, 1, None), edge(0, 1, Some(9))],
        )
        .unwrap();
        let b = batch_graphs(&[&g]).unwrap();
        assert!(model(Variant::Sum, 0).logits(&b).is_err());
    }

    #[test]
    fn isolated_node_receives_zero_message() {
        let g = QueryGraph::from_parts(
            vec![node(0, &[0]), node(1, &[1]), node(2, &[2])],
            vec![edge(0, 1, None), edge(0, 1, Some(0))],
        )
        .unwrap();
        let b = batch_graphs(&[&g]).unwrap();
        let tr = model(Variant::Sum, 2).forward_trace(&b).unwrap();
        for round in &tr.entity_inputs {
            assert!(round.row(2).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn duplicated_parallel_edge_doubles_its_contribution() {
        let nodes = vec![node(0, &[0]), node(1, &[1]), node(2, &[2])];
        let base = vec![edge(0, 1, None), edge(0, 2, Some(1)), edge(2, 1, Some(2))];
        let mut dup = base.clone();
        dup.push(edge(0, 2, Some(1)));
        let m = model(Variant::Sum, 3);
        let t1 = m
            .forward_trace(&batch_graphs(&[QueryGraph::from_parts(nodes.clone(), base).unwrap()]).unwrap())
            .unwrap();
        let t2 = m
            .forward_trace(&batch_graphs(&[QueryGraph::from_parts(nodes, dup).unwrap()]).unwrap())
            .unwrap();
        // round 1: node 2 is the target of the duplicated edge, so its
        // target-side aggregate doubles; node 0's source-side aggregate gains
        // the same message again
        let (a, b) = (&t1.entity_inputs[0], &t2.entity_inputs[0]);
        let w = a.cols() / 2;
        for j in 0..w {
            assert!((b.get(2, w + j) - 2.0 * a.get(2, w + j)).abs() < 1e-12);
        }
        // node 0 sends the fake edge (zero embedding) and the r1 edge; the
        // duplicate adds the r1 message once more
        let tr_only_fake = {
            let g = QueryGraph::from_parts(
                vec![node(0, &[0]), node(1, &[1]), node(2, &[2])],
                vec![edge(0, 1, None), edge(2, 1, Some(2))],
            )
            .unwrap();
            m.forward_trace(&batch_graphs(&[g]).unwrap()).unwrap()
        };
        let c = &tr_only_fake.entity_inputs[0];
        for j in 0..w {
            let edge_msg = a.get(0, j) - c.get(0, j);
            assert!((b.get(0, j) - (c.get(0, j) + 2.0 * edge_msg)).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_forward_matches_single_forwards() {
        let g1 = QueryGraph::from_parts(
            vec![node(0, &[0]), node(1, &[1, 2])],
            vec![edge(0, 1, None), edge(1, 0, Some(2))],
        )
        .unwrap();
        let g2 = QueryGraph::from_parts(
            vec![node(0, &[2]), node(1, &[]), node(2, &[0])],
            vec![edge(2, 0, None), edge(2, 1, Some(0)), edge(1, 0, Some(3))],
        )
        .unwrap();
        let m = model(Variant::Mean, 4);
        let both = m.logits(&batch_graphs(&[&g1, &g2]).unwrap()).unwrap();
        let a = m.logits(&batch_graphs(&[&g1]).unwrap()).unwrap();
        let b = m.logits(&batch_graphs(&[&g2]).unwrap()).unwrap();
        assert_eq!(both.shape(), &[2, 5]);
        for j in 0..5 {
            assert!((both.get(0, j) - a.get(0, j)).abs() < 1e-9);
            assert!((both.get(1, j) - b.get(0, j)).abs() < 1e-9);
        }
    }

    #[test]
    fn unused_type_table_gets_zero_gradient_in_relation_variant() {
        let cfg = ModelConfig::new(4, 2, 3, Variant::Relation).with_vocab(2, 2);
        let m: Model = Model::init(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(m.params().get("type_emb").is_none());
        let g = QueryGraph::from_parts(
            vec![node(0, &[]), node(1, &[])],
            vec![edge(0, 1, None), edge(0, 1, Some(0))],
        )
        .unwrap();
        let (_, grads) = m.loss_and_grads(&batch_graphs(&[g]).unwrap(), &[1], true).unwrap();
        let rel = m.params().id("rel_emb").unwrap();
        // relation row 1 never appears in the graph
        assert!(grads[rel].row(1).iter().all(|&v| v == 0.0));
        assert!(grads[rel].row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::new(0, 1, 2, Variant::Sum).validate().is_err());
        assert!(ModelConfig::new(4, 0, 2, Variant::Sum).validate().is_err());
        assert!(ModelConfig::new(4, 1, 1, Variant::Sum).validate().is_err());
        assert!("median".parse::<Variant>().is_err());
    }
}
