//! Multilinear mean functions `M(y₁, …, y_N)` of the class-conditional prior.
//!
//! Every variant is a sum of per-attribute linear maps `W⁽ⁱ⁾yᵢ` plus, for
//! the multilinear variants, interaction terms `𝓦^[S] ×₂ y_{s₁} ×₃ …` over
//! attribute subsets `S`. Interaction tensors are never materialized during
//! training: a CP term evaluates as `U_out((U_{s₁}ᵀy_{s₁}) ∗ (U_{s₂}ᵀy_{s₂}) ∗ …)`
//! and a Tucker term as `U_out G₍₁₎(… ⊗ U_{s₂}ᵀy_{s₂} ⊗ U_{s₁}ᵀy_{s₁})`.
//! Since the factors are shared by all combinations, the mean exists for
//! every combination, seen in training or not.

use std::fmt;

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{normal_init, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{CpFactors, DenseTensor, TuckerFactors};

pub const FACTOR_INIT_STD: f64 = 0.02;
pub const DEFAULT_RANK: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub classes: Vec<String>,
}

impl Attribute {
    pub fn new(name: &str, classes: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            classes: classes.iter().map(|c| c.to_string()).collect(),
        }
    }

    pub fn cardinality(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }
}

/// Ordered attributes with their class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    attributes: Vec<Attribute>,
}

impl AttributeSpec {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Config("at least one attribute is required".into()));
        }
        for (i, a) in attributes.iter().enumerate() {
            if a.cardinality() < 2 {
                return Err(Error::Config(format!("attribute {:?} needs at least 2 classes", a.name)));
            }
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(Error::Config(format!("attribute name {:?} is repeated", a.name)));
            }
        }
        Ok(Self { attributes })
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::cardinality).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn num_combos(&self) -> usize {
        self.cardinalities().iter().product()
    }

    /// Every combination, the last attribute varying fastest.
    pub fn combos(&self) -> Vec<LabelCombo> {
        let dims = self.cardinalities();
        let mut out = Vec::with_capacity(self.num_combos());
        let mut idx = vec![0; dims.len()];
        loop {
            out.push(LabelCombo(idx.clone()));
            let mut t = dims.len();
            loop {
                if t == 0 {
                    return out;
                }
                t -= 1;
                idx[t] += 1;
                if idx[t] < dims[t] {
                    break;
                }
                idx[t] = 0;
            }
        }
    }

    pub fn validate(&self, combo: &LabelCombo) -> Result<()> {
        if combo.0.len() != self.len() {
            return Err(Error::label(format!(
                "combination has {} labels, {} attributes expected",
                combo.0.len(),
                self.len()
            )));
        }
        for (a, &j) in self.attributes.iter().zip(&combo.0) {
            if j >= a.cardinality() {
                return Err(Error::label(format!(
                    "class index {j} out of range for attribute {:?} with {} classes",
                    a.name,
                    a.cardinality()
                )));
            }
        }
        Ok(())
    }

    /// Looks up a combination by class names, one per attribute.
    pub fn parse_combo<S: AsRef<str>>(&self, names: &[S]) -> Result<LabelCombo> {
        if names.len() != self.len() {
            return Err(Error::label(format!(
                "combination {:?} needs {} labels",
                names.iter().map(AsRef::as_ref).collect::<Vec<_>>(),
                self.len()
            )));
        }
        let idx = self
            .attributes
            .iter()
            .zip(names)
            .map(|(a, n)| {
                a.class_index(n.as_ref())
                    .ok_or_else(|| Error::label(format!("{:?} is not a class of attribute {:?}", n.as_ref(), a.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(LabelCombo(idx))
    }

    pub fn combo_names(&self, combo: &LabelCombo) -> Vec<String> {
        self.attributes
            .iter()
            .zip(&combo.0)
            .map(|(a, &j)| a.classes.get(j).cloned().unwrap_or_else(|| format!("#{j}")))
            .collect()
    }

    /// One-hot rows (`B × D_i`) per attribute for a batch of combinations.
    pub fn one_hot_batch(&self, combos: &[LabelCombo]) -> Result<Vec<Array2<f64>>> {
        for c in combos {
            self.validate(c)?;
        }
        Ok(self
            .attributes
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut m = Array2::zeros((combos.len(), a.cardinality()));
                for (r, c) in combos.iter().enumerate() {
                    m[[r, c.0[i]]] = 1.0;
                }
                m
            })
            .collect())
    }
}

/// One class index per attribute, 0-based (class `j` here is `j + 1` in
/// 1-based notation).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabelCombo(pub Vec<usize>);

impl LabelCombo {
    pub fn new(idx: Vec<usize>) -> Self {
        Self(idx)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }
}

impl fmt::Display for LabelCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|j| j.to_string()).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// The `j`-th standard basis vector of length `d` (0-based `j`).
pub fn one_hot(j: usize, d: usize) -> Result<Array1<f64>> {
    if j >= d {
        return Err(Error::label(format!("class index {j} out of range for cardinality {d}")));
    }
    let mut v = Array1::zeros(d);
    v[j] = 1.0;
    Ok(v)
}

/// How a single interaction tensor is parameterized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum InteractionForm {
    Cp { rank: usize },
    Tucker { rank: usize },
}

/// Which mean function the prior uses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// `Σ W⁽ⁱ⁾yᵢ` only.
    Linear,
    /// Two attributes with an unconstrained `d × D₁D₂` interaction table.
    FullTable,
    /// Two attributes with a rank-R CP interaction tensor.
    Cp { rank: usize },
    /// Two attributes with a Tucker interaction tensor of ranks
    /// `(R₁, R₂, R₃)` for the latent and the two label modes.
    Tucker { ranks: [usize; 3] },
    /// Any number of attributes: all interaction terms of order
    /// `2..=max_order`, each with its own factors.
    General { form: InteractionForm, max_order: usize },
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Variant::Linear => "linear",
            Variant::FullTable => "full_table",
            Variant::Cp { .. } => "cp",
            Variant::Tucker { .. } => "tucker",
            Variant::General { .. } => "general",
        }
    }

    /// Tucker with the default ranks, clipped to `min(d, 4·D_i)`.
    pub fn default_tucker(latent_dim: usize, cards: &[usize]) -> Self {
        let r = |cap: usize| DEFAULT_RANK.min(cap);
        Variant::Tucker {
            ranks: [r(latent_dim), r(4 * cards[0]), r(4 * cards[1])],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TermKind {
    Cp { rank: usize },
    Tucker { out_rank: usize, ranks: Vec<usize> },
    Table,
}

/// One interaction term over a subset of attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    attrs: Vec<usize>,
    prefix: String,
    kind: TermKind,
}

impl Interaction {
    pub fn attrs(&self) -> &[usize] {
        &self.attrs
    }

    fn out_name(&self) -> String {
        format!("{}.out", self.prefix)
    }

    fn factor_name(&self, attr: usize) -> String {
        format!("{}.u{attr}", self.prefix)
    }

    fn core_name(&self) -> String {
        format!("{}.core", self.prefix)
    }
}

/// Parameter layout of a mean function. The values themselves live in a
/// [`ParamStore`] under the `cond.` prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningParams {
    variant: Variant,
    cards: Vec<usize>,
    latent_dim: usize,
    terms: Vec<Interaction>,
}

fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, size, &mut Vec::new(), &mut out);
    out
}

impl ConditioningParams {
    pub fn new(variant: Variant, spec: &AttributeSpec, latent_dim: usize) -> Result<Self> {
        let cards = spec.cardinalities();
        let n = cards.len();
        if latent_dim == 0 {
            return Err(Error::Config("latent dimension must be positive".into()));
        }
        let pair_only = |v: &str| -> Result<()> {
            if n != 2 {
                return Err(Error::Config(format!("the {v} variant needs exactly 2 attributes, got {n}")));
            }
            Ok(())
        };
        let terms = match &variant {
            Variant::Linear => vec![],
            Variant::FullTable => {
                pair_only("full_table")?;
                vec![Interaction {
                    attrs: vec![0, 1],
                    prefix: "cond.table".into(),
                    kind: TermKind::Table,
                }]
            }
            Variant::Cp { rank } => {
                pair_only("cp")?;
                check_rank(*rank)?;
                vec![Interaction {
                    attrs: vec![0, 1],
                    prefix: "cond.cp".into(),
                    kind: TermKind::Cp { rank: *rank },
                }]
            }
            Variant::Tucker { ranks } => {
                pair_only("tucker")?;
                for &r in ranks {
                    check_rank(r)?;
                }
                vec![Interaction {
                    attrs: vec![0, 1],
                    prefix: "cond.tucker".into(),
                    kind: TermKind::Tucker {
                        out_rank: ranks[0],
                        ranks: ranks[1..].to_vec(),
                    },
                }]
            }
            Variant::General { form, max_order } => {
                if n < 2 {
                    return Err(Error::Config("the general variant needs at least 2 attributes".into()));
                }
                if *max_order < 2 {
                    return Err(Error::Config("max_order must be at least 2".into()));
                }
                let mut terms = Vec::new();
                for order in 2..=(*max_order).min(n) {
                    for attrs in subsets(n, order) {
                        let tag: Vec<String> = attrs.iter().map(|a| a.to_string()).collect();
                        let prefix = format!("cond.w{}", tag.join("_"));
                        let kind = match *form {
                            InteractionForm::Cp { rank } => {
                                check_rank(rank)?;
                                TermKind::Cp { rank }
                            }
                            InteractionForm::Tucker { rank } => {
                                check_rank(rank)?;
                                TermKind::Tucker {
                                    out_rank: rank.min(latent_dim),
                                    ranks: attrs.iter().map(|&a| rank.min(4 * cards[a])).collect(),
                                }
                            }
                        };
                        terms.push(Interaction { attrs, prefix, kind });
                    }
                }
                terms
            }
        };
        Ok(Self {
            variant,
            cards,
            latent_dim,
            terms,
        })
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn num_attributes(&self) -> usize {
        self.cards.len()
    }

    pub fn terms(&self) -> &[Interaction] {
        &self.terms
    }

    pub fn linear_name(attr: usize) -> String {
        format!("cond.w{attr}")
    }

    /// Names of every parameter this mean function owns.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.cards.len()).map(Self::linear_name).collect();
        for t in &self.terms {
            match &t.kind {
                TermKind::Table => names.push(t.prefix.clone()),
                TermKind::Cp { .. } => {
                    names.push(t.out_name());
                    names.extend(t.attrs.iter().map(|&a| t.factor_name(a)));
                }
                TermKind::Tucker { .. } => {
                    names.push(t.out_name());
                    names.extend(t.attrs.iter().map(|&a| t.factor_name(a)));
                    names.push(t.core_name());
                }
            }
        }
        names
    }

    /// Registers all parameters, drawn from `N(0, 0.02²)`.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let d = self.latent_dim;
        for (i, &card) in self.cards.iter().enumerate() {
            store.insert(&Self::linear_name(i), normal_init(rng, (d, card), FACTOR_INIT_STD))?;
        }
        for t in &self.terms {
            match &t.kind {
                TermKind::Table => {
                    let cols = t.attrs.iter().map(|&a| self.cards[a]).product();
                    store.insert(&t.prefix, normal_init(rng, (d, cols), FACTOR_INIT_STD))?;
                }
                TermKind::Cp { rank } => {
                    store.insert(&t.out_name(), normal_init(rng, (d, *rank), FACTOR_INIT_STD))?;
                    for &a in &t.attrs {
                        store.insert(&t.factor_name(a), normal_init(rng, (self.cards[a], *rank), FACTOR_INIT_STD))?;
                    }
                }
                TermKind::Tucker { out_rank, ranks } => {
                    store.insert(&t.out_name(), normal_init(rng, (d, *out_rank), FACTOR_INIT_STD))?;
                    for (&a, &r) in t.attrs.iter().zip(ranks) {
                        store.insert(&t.factor_name(a), normal_init(rng, (self.cards[a], r), FACTOR_INIT_STD))?;
                    }
                    let cols = ranks.iter().product();
                    store.insert(&t.core_name(), normal_init(rng, (*out_rank, cols), FACTOR_INIT_STD))?;
                }
            }
        }
        Ok(())
    }

    /// Records the batched mean `B × d` on `tape`; `ys[i]` holds one row per
    /// sample for attribute `i` (one-hot, or a point on the simplex).
    pub fn build(&self, tape: &mut Tape, ys: &[Var]) -> Result<Var> {
        if ys.len() != self.cards.len() {
            return Err(Error::contract(format!(
                "mean function takes {} label vectors, got {}",
                self.cards.len(),
                ys.len()
            )));
        }
        for (i, (&y, &card)) in ys.iter().zip(&self.cards).enumerate() {
            if tape.shape(y).1 != card {
                return Err(Error::dim(format!(
                    "labels for attribute {i} have width {}, expected {card}",
                    tape.shape(y).1
                )));
            }
        }
        let mut acc: Option<Var> = None;
        let mut push = |tape: &mut Tape, v: Var| -> Result<()> {
            acc = Some(match acc {
                None => v,
                Some(a) => tape.add(a, v)?,
            });
            Ok(())
        };
        for (i, &y) in ys.iter().enumerate() {
            let w = tape.param(&Self::linear_name(i))?;
            let term = tape.matmul_bt(y, w)?;
            push(tape, term)?;
        }
        for t in &self.terms {
            let term = match &t.kind {
                TermKind::Table => {
                    // y₂ ⊙ y₁: the joint one-hot, first attribute fastest
                    let joint = tape.row_kron(ys[t.attrs[1]], ys[t.attrs[0]])?;
                    let table = tape.param(&t.prefix)?;
                    tape.matmul_bt(joint, table)?
                }
                TermKind::Cp { .. } => {
                    let mut prod: Option<Var> = None;
                    for &a in &t.attrs {
                        let u = tape.param(&t.factor_name(a))?;
                        let proj = tape.matmul(ys[a], u)?;
                        prod = Some(match prod {
                            None => proj,
                            Some(p) => tape.mul(p, proj)?,
                        });
                    }
                    let out = tape.param(&t.out_name())?;
                    tape.matmul_bt(prod.expect("terms have at least two attributes"), out)?
                }
                TermKind::Tucker { .. } => {
                    // Kronecker chain with later modes outer, matching the
                    // column order of the mode-1 unfolded core.
                    let mut kron: Option<Var> = None;
                    for &a in &t.attrs {
                        let u = tape.param(&t.factor_name(a))?;
                        let proj = tape.matmul(ys[a], u)?;
                        kron = Some(match kron {
                            None => proj,
                            Some(k) => tape.row_kron(proj, k)?,
                        });
                    }
                    let core = tape.param(&t.core_name())?;
                    let reduced = tape.matmul_bt(kron.expect("terms have at least two attributes"), core)?;
                    let out = tape.param(&t.out_name())?;
                    tape.matmul_bt(reduced, out)?
                }
            };
            push(tape, term)?;
        }
        Ok(acc.expect("at least one attribute"))
    }

    /// Means for a batch of combinations, `B × d`.
    pub fn mean_batch(&self, store: &ParamStore, combos: &[LabelCombo]) -> Result<Array2<f64>> {
        for c in combos {
            if c.0.len() != self.cards.len() {
                return Err(Error::contract(format!(
                    "mean function takes {} labels, combination {c} has {}",
                    self.cards.len(),
                    c.0.len()
                )));
            }
            for (&j, &card) in c.0.iter().zip(&self.cards) {
                if j >= card {
                    return Err(Error::label(format!("class index {j} out of range for cardinality {card}")));
                }
            }
        }
        let mut tape = Tape::with_params(store);
        let ys: Vec<Var> = (0..self.cards.len())
            .map(|i| {
                let mut m = Array2::zeros((combos.len(), self.cards[i]));
                for (r, c) in combos.iter().enumerate() {
                    m[[r, c.0[i]]] = 1.0;
                }
                tape.constant(m)
            })
            .collect();
        let m = self.build(&mut tape, &ys)?;
        Ok(tape.value(m).clone())
    }

    /// The mean for label vectors given directly (one-hot or soft).
    pub fn mean_vectors(&self, store: &ParamStore, ys: &[Array1<f64>]) -> Result<Array1<f64>> {
        let mut tape = Tape::with_params(store);
        let vars: Vec<Var> = ys
            .iter()
            .map(|y| tape.constant(y.clone().insert_axis(ndarray::Axis(0))))
            .collect();
        let m = self.build(&mut tape, &vars)?;
        Ok(tape.value(m).row(0).to_owned())
    }

    pub fn mean(&self, store: &ParamStore, combo: &LabelCombo) -> Result<Array1<f64>> {
        Ok(self.mean_batch(store, std::slice::from_ref(combo))?.row(0).to_owned())
    }

    fn expect_variant(&self, want: &str, ok: bool) -> Result<()> {
        if !ok {
            return Err(Error::contract(format!(
                "{want} mean requested from a {} conditioning",
                self.variant.name()
            )));
        }
        Ok(())
    }

    pub fn mean_linear(&self, store: &ParamStore, y1: &Array1<f64>, y2: &Array1<f64>) -> Result<Array1<f64>> {
        self.expect_variant("linear", self.variant == Variant::Linear)?;
        self.mean_vectors(store, &[y1.clone(), y2.clone()])
    }

    pub fn mean_full(&self, store: &ParamStore, y1: &Array1<f64>, y2: &Array1<f64>) -> Result<Array1<f64>> {
        self.expect_variant("full-table", self.variant == Variant::FullTable)?;
        self.mean_vectors(store, &[y1.clone(), y2.clone()])
    }

    pub fn mean_cp(&self, store: &ParamStore, y1: &Array1<f64>, y2: &Array1<f64>) -> Result<Array1<f64>> {
        self.expect_variant("CP", matches!(self.variant, Variant::Cp { .. }))?;
        self.mean_vectors(store, &[y1.clone(), y2.clone()])
    }

    pub fn mean_tucker(&self, store: &ParamStore, y1: &Array1<f64>, y2: &Array1<f64>) -> Result<Array1<f64>> {
        self.expect_variant("Tucker", matches!(self.variant, Variant::Tucker { .. }))?;
        self.mean_vectors(store, &[y1.clone(), y2.clone()])
    }

    pub fn mean_general(&self, store: &ParamStore, ys: &[Array1<f64>]) -> Result<Array1<f64>> {
        self.expect_variant("general", matches!(self.variant, Variant::General { .. }))?;
        if ys.len() != self.cards.len() {
            return Err(Error::contract(format!(
                "general mean over {} attributes got {} label vectors",
                self.cards.len(),
                ys.len()
            )));
        }
        self.mean_vectors(store, ys)
    }

    /// The interaction tensor of `term`, materialized as a dense tensor of
    /// shape `d × D_{s₁} × D_{s₂} × …` through the tensor-core reconstructions.
    pub fn interaction_tensor(&self, store: &ParamStore, term: &Interaction) -> Result<DenseTensor> {
        let get = |name: &str| -> Result<Array2<f64>> {
            store
                .get(name)
                .cloned()
                .ok_or_else(|| Error::contract(format!("parameter {name:?} is not registered")))
        };
        match &term.kind {
            TermKind::Table => {
                // columns of the table are the mode-1 unfolding
                let mut shape = vec![self.latent_dim];
                shape.extend(term.attrs.iter().map(|&a| self.cards[a]));
                DenseTensor::fold(get(&term.prefix)?.view(), 0, &shape)
            }
            TermKind::Cp { .. } => {
                let mut factors = vec![get(&term.out_name())?];
                for &a in &term.attrs {
                    factors.push(get(&term.factor_name(a))?);
                }
                Ok(CpFactors::new(factors)?.reconstruct())
            }
            TermKind::Tucker { out_rank, ranks } => {
                let mut core_shape = vec![*out_rank];
                core_shape.extend(ranks);
                let core = DenseTensor::fold(get(&term.core_name())?.view(), 0, &core_shape)?;
                let mut factors = vec![get(&term.out_name())?];
                for &a in &term.attrs {
                    factors.push(get(&term.factor_name(a))?);
                }
                Ok(TuckerFactors::new(core, factors)?.reconstruct())
            }
        }
    }
}

fn check_rank(r: usize) -> Result<()> {
    if r == 0 {
        return Err(Error::Config("ranks must be at least 1".into()));
    }
    Ok(())
}
