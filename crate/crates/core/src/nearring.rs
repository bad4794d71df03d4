//! The symbolic layer: activation trees (sums of linear framing-loop maps and
//! activation symbols), the algorithm-expression parser with block typing,
//! and the tree differential whose node-indexed summands drive
//! backpropagation.

use std::fmt::Write as _;

use num_complex::Complex;
use thiserror::Error;

use crate::quiver::Quiver;
use crate::scalar::{rc, Real, C};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NearRingError {
    #[error("parse error at position {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("type error: {msg}")]
    Type { msg: String },
    #[error("unknown symbol: {msg}")]
    UnknownSymbol { msg: String },
}

fn perr<T>(pos: usize, msg: impl Into<String>) -> Result<T, NearRingError> {
    Err(NearRingError::Parse {
        pos,
        msg: msg.into(),
    })
}

fn terr<T>(msg: impl Into<String>) -> Result<T, NearRingError> {
    Err(NearRingError::Type { msg: msg.into() })
}

// ---- labels ---------------------------------------------------------------

/// Primitive linear factor in a framing-loop word.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    /// Arrow matrix w_a: V_{t(a)} -> V_{h(a)}.
    Arrow(u32),
    /// Framing map e^{(v)}: F_v -> V_v.
    Frame(u32),
    /// Metric adjoint e^{(v) *_h}: V_v -> F_v.
    FrameAdj(u32),
}

/// Typing slot: abstract state space at a vertex or its framing block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    V(u32),
    F(u32),
}

impl Slot {
    fn describe(self) -> String {
        match self {
            Slot::V(v) => format!("V({v})"),
            Slot::F(v) => format!("F({v})"),
        }
    }
}

impl Atom {
    pub fn slots(self, q: &Quiver) -> Result<(Slot, Slot), NearRingError> {
        match self {
            Atom::Arrow(a) => {
                let arrow = q.arrow(a).ok_or_else(|| NearRingError::UnknownSymbol {
                    msg: format!("arrow a{a}"),
                })?;
                Ok((Slot::V(arrow.src), Slot::V(arrow.dst)))
            }
            Atom::Frame(v) => {
                q.vertex(v).map_err(|_| NearRingError::UnknownSymbol {
                    msg: format!("vertex {v}"),
                })?;
                Ok((Slot::F(v), Slot::V(v)))
            }
            Atom::FrameAdj(v) => {
                q.vertex(v).map_err(|_| NearRingError::UnknownSymbol {
                    msg: format!("vertex {v}"),
                })?;
                Ok((Slot::V(v), Slot::F(v)))
            }
        }
    }
}

/// One weighted word: coefficient times a composition of atoms, listed in
/// application order (first entry acts first).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTerm<R: Real> {
    pub coeff: C<R>,
    pub atoms: Vec<Atom>,
}

/// A formal sum of weighted framing-loop words, all with the same source and
/// target blocks. Edge labels of activation trees.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeLabel<R: Real> {
    pub dom: Slot,
    pub cod: Slot,
    pub terms: Vec<LabelTerm<R>>,
}

impl<R: Real> EdgeLabel<R> {
    fn identity(slot: Slot) -> Self {
        EdgeLabel {
            dom: slot,
            cod: slot,
            terms: vec![LabelTerm {
                coeff: Complex::new(R::one(), R::zero()),
                atoms: vec![],
            }],
        }
    }

    fn compose_after(&self, inner: &EdgeLabel<R>) -> Result<EdgeLabel<R>, NearRingError> {
        if self.dom != inner.cod {
            return terr(format!(
                "cannot compose {} after {}",
                self.dom.describe(),
                inner.cod.describe()
            ));
        }
        let mut terms = Vec::with_capacity(self.terms.len() * inner.terms.len());
        for ot in &self.terms {
            for it in &inner.terms {
                let mut atoms = it.atoms.clone();
                atoms.extend(ot.atoms.iter().copied());
                terms.push(LabelTerm {
                    coeff: ot.coeff * it.coeff,
                    atoms,
                });
            }
        }
        Ok(EdgeLabel {
            dom: inner.dom,
            cod: self.cod,
            terms,
        })
    }

    fn add(&mut self, other: &EdgeLabel<R>) {
        debug_assert_eq!(self.dom, other.dom);
        debug_assert_eq!(self.cod, other.cod);
        self.terms.extend(other.terms.iter().cloned());
    }

    fn scale(&mut self, c: C<R>) {
        for t in &mut self.terms {
            t.coeff *= c;
        }
    }

    fn is_plain_identity(&self) -> bool {
        self.terms.len() == 1
            && self.terms[0].atoms.is_empty()
            && self.terms[0].coeff == Complex::new(R::one(), R::zero())
    }
}

// ---- trees ----------------------------------------------------------------

/// A branch `a_k . sigma_{l(k)} . child` of a tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<R: Real> {
    pub label: EdgeLabel<R>,
    /// Index into the activation catalog.
    pub activation: usize,
    /// Framing block (vertex id) the activation acts on.
    pub block: u32,
    pub child: TreeNode<R>,
}

/// One node of an activation tree. Its near-ring element is
/// `leaf_label + sum_k branch_label_k . sigma_k . child_k`, where the leaf
/// label (when present) is the edge to a unit leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode<R: Real> {
    pub id: usize,
    pub leaf_label: Option<EdgeLabel<R>>,
    pub branches: Vec<Branch<R>>,
}

impl<R: Real> TreeNode<R> {
    fn in_slot_consistent(&self, dom: Slot) -> bool {
        let leaf_ok = self.leaf_label.iter().all(|l| l.dom == dom);
        let br_ok = self
            .branches
            .iter()
            .all(|b| b.child.in_slot_consistent(dom));
        leaf_ok && br_ok
    }

    fn assign_ids(&mut self, next: &mut usize) {
        self.id = *next;
        *next += 1;
        for b in &mut self.branches {
            b.child.assign_ids(next);
        }
    }

    fn count_nodes(&self) -> usize {
        1 + self
            .branches
            .iter()
            .map(|b| b.child.count_nodes())
            .sum::<usize>()
    }

    fn count_leaves(&self) -> usize {
        usize::from(self.leaf_label.is_some())
            + self
                .branches
                .iter()
                .map(|b| b.child.count_leaves())
                .sum::<usize>()
    }

    fn depth(&self) -> usize {
        self.branches
            .iter()
            .map(|b| 1 + b.child.depth())
            .max()
            .unwrap_or(0)
    }
}

/// A parsed, type-checked algorithm: a near-ring element presented as a
/// rooted tree typed `F_in -> F_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTree<R: Real> {
    pub root: TreeNode<R>,
    /// Input framing block (vertex id).
    pub in_block: u32,
    /// Output framing block (vertex id).
    pub out_block: u32,
    node_count: usize,
    leaf_count: usize,
}

impl<R: Real> ActivationTree<R> {
    fn finalize(mut root: TreeNode<R>, in_block: u32, out_block: u32) -> Self {
        let mut next = 0usize;
        root.assign_ids(&mut next);
        let node_count = root.count_nodes();
        let leaf_count = root.count_leaves();
        ActivationTree {
            root,
            in_block,
            out_block,
            node_count,
            leaf_count,
        }
    }

    /// Number of internal tree nodes (root and activation nodes).
    pub fn node_count(&self) -> usize {
        self.node_count
    }

    /// Number of unit leaves.
    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    /// Nodes other than the root, counting unit leaves; the differential has
    /// exactly one summand per such node.
    pub fn non_root_node_count(&self) -> usize {
        self.node_count - 1 + self.leaf_count
    }

    /// Generation: maximal activation nesting depth.
    pub fn grade(&self) -> usize {
        self.root.depth()
    }

    /// Canonical text form; reparses to a structurally identical tree.
    pub fn pretty(&self) -> String {
        let mut s = String::new();
        pretty_node(&self.root, &mut s);
        s
    }

    /// Adds two trees of the same type (near-ring addition).
    pub fn add(&self, other: &ActivationTree<R>) -> Result<ActivationTree<R>, NearRingError> {
        if self.in_block != other.in_block || self.out_block != other.out_block {
            return terr("cannot add algorithms of different types");
        }
        let mut root = self.root.clone();
        merge_nodes(&mut root, other.root.clone());
        Ok(ActivationTree::finalize(
            root,
            self.in_block,
            self.out_block,
        ))
    }
}

fn merge_nodes<R: Real>(into: &mut TreeNode<R>, from: TreeNode<R>) {
    match (&mut into.leaf_label, from.leaf_label) {
        (Some(a), Some(b)) => a.add(&b),
        (slot @ None, Some(b)) => *slot = Some(b),
        _ => {}
    }
    into.branches.extend(from.branches);
}

fn pretty_label<R: Real>(label: &EdgeLabel<R>, out: &mut String) {
    let many = label.terms.len() > 1;
    if many {
        out.push('(');
    }
    for (i, t) in label.terms.iter().enumerate() {
        if i > 0 {
            out.push_str(" + ");
        }
        let one = Complex::new(R::one(), R::zero());
        if t.coeff != one {
            debug_assert!(t.coeff.im == R::zero(), "grammar coefficients are real");
            let _ = write!(out, "{} * ", t.coeff.re);
        }
        let factors: Vec<String> = t
            .atoms
            .iter()
            .rev()
            .map(|a| match a {
                Atom::Arrow(id) => format!("a{id}"),
                Atom::Frame(v) => format!("e{v}"),
                Atom::FrameAdj(v) => format!("e{v}*"),
            })
            .collect();
        let _ = write!(out, "{}", factors.join(" . "));
    }
    if many {
        out.push(')');
    }
}

fn pretty_node<R: Real>(node: &TreeNode<R>, out: &mut String) {
    let mut first = true;
    if let Some(l) = &node.leaf_label {
        pretty_label(l, out);
        first = false;
    }
    for b in &node.branches {
        if !first {
            out.push_str(" + ");
        }
        first = false;
        // a scaled identity label prints as a scalar weight on the whole
        // branch; the grammar has no bare-identity factor
        let scaled_identity = b.label.terms.len() == 1 && b.label.terms[0].atoms.is_empty();
        if scaled_identity && !b.label.is_plain_identity() {
            let c = b.label.terms[0].coeff;
            debug_assert!(c.im == R::zero());
            let _ = write!(out, "{} * (", c.re);
            let _ = write!(out, "s{} . (", b.activation + 1);
            pretty_node(&b.child, out);
            out.push_str("))");
            continue;
        }
        if !b.label.is_plain_identity() {
            pretty_label(&b.label, out);
            out.push_str(" . ");
        }
        let _ = write!(out, "s{}", b.activation + 1);
        out.push_str(" . (");
        pretty_node(&b.child, out);
        out.push(')');
    }
}

// ---- differential ----------------------------------------------------------

/// One step of a backbone chain: an edge label followed by the first
/// derivative of an activation, evaluated at the stored output of `at_node`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrefixStep<R: Real> {
    pub label: EdgeLabel<R>,
    pub activation: usize,
    pub block: u32,
    /// Node whose stored output is the evaluation point of the derivative.
    pub at_node: usize,
}

/// What the differentiated edge feeds into.
#[derive(Debug, Clone, PartialEq)]
pub enum Suffix {
    /// The unit leaf (evaluates to the input).
    Unit,
    /// An activation applied to the stored output of `at_node`.
    Activation { activation: usize, at_node: usize },
}

/// One summand of the differential: prefix chain, differentiated edge label,
/// and the subtree value it multiplies.
#[derive(Debug, Clone, PartialEq)]
pub struct FormSummand<R: Real> {
    pub prefix: Vec<PrefixStep<R>>,
    pub dlabel: EdgeLabel<R>,
    pub suffix: Suffix,
}

/// The degree-1 differential of an activation tree: a sum over the non-root
/// nodes of the source tree.
#[derive(Debug, Clone, PartialEq)]
pub struct FormTree<R: Real> {
    pub summands: Vec<FormSummand<R>>,
}

/// Differential of a tree: for each non-root node, the backbone chain from
/// the root down to its edge, the differentiated edge label, and the node's
/// output as suffix.
pub fn differentiate<R: Real>(t: &ActivationTree<R>) -> FormTree<R> {
    let mut summands = Vec::new();
    walk(&t.root, &[], &mut summands);
    FormTree { summands }
}

fn walk<R: Real>(node: &TreeNode<R>, prefix: &[PrefixStep<R>], out: &mut Vec<FormSummand<R>>) {
    if let Some(l) = &node.leaf_label {
        out.push(FormSummand {
            prefix: prefix.to_vec(),
            dlabel: l.clone(),
            suffix: Suffix::Unit,
        });
    }
    for b in &node.branches {
        out.push(FormSummand {
            prefix: prefix.to_vec(),
            dlabel: b.label.clone(),
            suffix: Suffix::Activation {
                activation: b.activation,
                at_node: b.child.id,
            },
        });
        let mut deeper = prefix.to_vec();
        deeper.push(PrefixStep {
            label: b.label.clone(),
            activation: b.activation,
            block: b.block,
            at_node: b.child.id,
        });
        walk(&b.child, &deeper, out);
    }
}

// ---- lexer ----------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Plus,
    Dot,
    Star,
    LPar,
    RPar,
    Ein,
    EoutStar,
    E(u32),
    EStar(u32),
    A(u32),
    S(u32),
    Num(f64),
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>, NearRingError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '.' => {
                toks.push((i, Tok::Dot));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '(' => {
                toks.push((i, Tok::LPar));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RPar));
                i += 1;
            }
            'e' | 'a' | 's' => {
                let start = i;
                // keywords ein / eout*
                if text[i..].starts_with("ein") {
                    toks.push((start, Tok::Ein));
                    i += 3;
                    continue;
                }
                if text[i..].starts_with("eout*") {
                    toks.push((start, Tok::EoutStar));
                    i += 5;
                    continue;
                }
                i += 1;
                let num_start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if num_start == i {
                    return perr(start, format!("expected an id after '{c}'"));
                }
                let id: u32 = text[num_start..i]
                    .parse()
                    .map_err(|_| NearRingError::Parse {
                        pos: start,
                        msg: "id out of range".into(),
                    })?;
                match c {
                    'e' => {
                        if i < bytes.len() && bytes[i] as char == '*' {
                            i += 1;
                            toks.push((start, Tok::EStar(id)));
                        } else {
                            toks.push((start, Tok::E(id)));
                        }
                    }
                    'a' => toks.push((start, Tok::A(id))),
                    's' => toks.push((start, Tok::S(id))),
                    _ => unreachable!(),
                }
            }
            d if d.is_ascii_digit() || d == '-' => {
                let start = i;
                i += 1;
                while i < bytes.len() {
                    let ch = bytes[i] as char;
                    if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' {
                        // lookahead: 'e' only continues a number when followed
                        // by a digit or sign (exponent), not an identifier
                        if ch == 'e' || ch == 'E' {
                            let next = bytes.get(i + 1).map(|&b| b as char);
                            match next {
                                Some(n) if n.is_ascii_digit() || n == '+' || n == '-' => {}
                                _ => break,
                            }
                        }
                        i += 1;
                    } else {
                        break;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| NearRingError::Parse {
                    pos: start,
                    msg: format!("bad number literal {lit:?}"),
                })?;
                toks.push((start, Tok::Num(v)));
            }
            other => return perr(i, format!("unexpected character {other:?}")),
        }
    }
    Ok(toks)
}

// ---- parser to AST ---------------------------------------------------------

#[derive(Debug, Clone)]
enum Ast {
    Sum(Vec<Ast>),
    Comp(Vec<Ast>),
    Scale(f64, Box<Ast>),
    Ein,
    EoutStar,
    E(u32),
    EStar(u32),
    A(u32),
    S(u32),
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Ast, NearRingError> {
        let mut terms = vec![self.term()?];
        while matches!(self.peek(), Some(Tok::Plus)) {
            self.bump();
            terms.push(self.term()?);
        }
        Ok(if terms.len() == 1 {
            terms.pop().unwrap()
        } else {
            Ast::Sum(terms)
        })
    }

    fn term(&mut self) -> Result<Ast, NearRingError> {
        let mut factors = vec![self.factor()?];
        while matches!(self.peek(), Some(Tok::Dot)) {
            self.bump();
            factors.push(self.factor()?);
        }
        Ok(if factors.len() == 1 {
            factors.pop().unwrap()
        } else {
            Ast::Comp(factors)
        })
    }

    fn factor(&mut self) -> Result<Ast, NearRingError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Ein) => Ok(Ast::Ein),
            Some(Tok::EoutStar) => Ok(Ast::EoutStar),
            Some(Tok::E(i)) => Ok(Ast::E(i)),
            Some(Tok::EStar(i)) => Ok(Ast::EStar(i)),
            Some(Tok::A(i)) => Ok(Ast::A(i)),
            Some(Tok::S(i)) => Ok(Ast::S(i)),
            Some(Tok::Num(v)) => match self.bump() {
                Some(Tok::Star) => Ok(Ast::Scale(v, Box::new(self.factor()?))),
                _ => perr(pos, "a number must be followed by '*' and a factor"),
            },
            Some(Tok::LPar) => {
                let inner = self.expr()?;
                match self.bump() {
                    Some(Tok::RPar) => Ok(inner),
                    _ => perr(pos, "unclosed parenthesis"),
                }
            }
            other => perr(pos, format!("expected a factor, found {other:?}")),
        }
    }
}

// ---- elaboration -----------------------------------------------------------

/// Near-ring value during elaboration: either purely linear or a tree, with
/// explicit slot typing (V-ends are legal mid-expression).
#[derive(Debug, Clone)]
enum Elab<R: Real> {
    Lin(EdgeLabel<R>),
    Tree {
        dom: Slot,
        cod: Slot,
        node: TreeNode<R>,
    },
}

impl<R: Real> Elab<R> {
    fn dom(&self) -> Slot {
        match self {
            Elab::Lin(l) => l.dom,
            Elab::Tree { dom, .. } => *dom,
        }
    }

    fn cod(&self) -> Slot {
        match self {
            Elab::Lin(l) => l.cod,
            Elab::Tree { cod, .. } => *cod,
        }
    }

    fn into_node(self) -> TreeNode<R> {
        match self {
            Elab::Lin(l) => TreeNode {
                id: 0,
                leaf_label: Some(l),
                branches: vec![],
            },
            Elab::Tree { node, .. } => node,
        }
    }

    fn scale(&mut self, c: C<R>) {
        match self {
            Elab::Lin(l) => l.scale(c),
            Elab::Tree { node, .. } => {
                if let Some(l) = &mut node.leaf_label {
                    l.scale(c);
                }
                for b in &mut node.branches {
                    b.label.scale(c);
                }
            }
        }
    }
}

fn premultiply_node<R: Real>(
    lin: &EdgeLabel<R>,
    node: &mut TreeNode<R>,
) -> Result<(), NearRingError> {
    if let Some(l) = &node.leaf_label {
        node.leaf_label = Some(lin.compose_after(l)?);
    }
    for b in &mut node.branches {
        b.label = lin.compose_after(&b.label)?;
    }
    Ok(())
}

fn postcompose_node<R: Real>(node: &mut TreeNode<R>, inner: &Elab<R>) -> Result<(), NearRingError> {
    // recurse only into the branches present before any merge below, so the
    // inner tree is composed exactly once along every path
    let original = node.branches.len();
    for k in 0..original {
        postcompose_node(&mut node.branches[k].child, inner)?;
    }
    if let Some(l) = node.leaf_label.take() {
        match inner {
            Elab::Lin(g) => node.leaf_label = Some(l.compose_after(g)?),
            Elab::Tree {
                node: inner_node, ..
            } => {
                // leaf . tree: premultiply a copy of the inner tree and merge
                let mut copy = inner_node.clone();
                premultiply_node(&l, &mut copy)?;
                merge_nodes(node, copy);
            }
        }
    }
    Ok(())
}

fn compose<R: Real>(outer: Elab<R>, inner: Elab<R>) -> Result<Elab<R>, NearRingError> {
    if outer.dom() != inner.cod() {
        return terr(format!(
            "type mismatch in composition: {} . {}",
            outer.dom().describe(),
            inner.cod().describe()
        ));
    }
    let dom = inner.dom();
    let cod = outer.cod();
    match outer {
        Elab::Lin(l) => match inner {
            Elab::Lin(g) => Ok(Elab::Lin(l.compose_after(&g)?)),
            Elab::Tree { mut node, .. } => {
                premultiply_node(&l, &mut node)?;
                Ok(Elab::Tree { dom, cod, node })
            }
        },
        Elab::Tree { mut node, .. } => {
            postcompose_node(&mut node, &inner)?;
            Ok(Elab::Tree { dom, cod, node })
        }
    }
}

fn add_elab<R: Real>(a: Elab<R>, b: Elab<R>) -> Result<Elab<R>, NearRingError> {
    if a.dom() != b.dom() || a.cod() != b.cod() {
        return terr(format!(
            "cannot add values of different types: {} -> {} vs {} -> {}",
            a.dom().describe(),
            a.cod().describe(),
            b.dom().describe(),
            b.cod().describe()
        ));
    }
    match (a, b) {
        (Elab::Lin(mut x), Elab::Lin(y)) => {
            x.add(&y);
            Ok(Elab::Lin(x))
        }
        (x, y) => {
            let dom = x.dom();
            let cod = x.cod();
            let mut node = x.into_node();
            merge_nodes(&mut node, y.into_node());
            Ok(Elab::Tree { dom, cod, node })
        }
    }
}

/// A factor before slot resolution: everything is concrete except bare
/// activations, whose framing block is inferred from neighbors.
enum PreFactor<R: Real> {
    Done(Elab<R>),
    Act { index: usize, block: Option<u32> },
}

struct Ctx<'a> {
    quiver: &'a Quiver,
    in_vertex: u32,
    out_vertex: u32,
    activation_count: usize,
}

fn atom_label<R: Real>(atom: Atom, q: &Quiver) -> Result<EdgeLabel<R>, NearRingError> {
    let (dom, cod) = atom.slots(q)?;
    Ok(EdgeLabel {
        dom,
        cod,
        terms: vec![LabelTerm {
            coeff: Complex::new(R::one(), R::zero()),
            atoms: vec![atom],
        }],
    })
}

fn elaborate<R: Real>(ast: &Ast, ctx: &Ctx) -> Result<Elab<R>, NearRingError> {
    match ast {
        Ast::Sum(terms) => {
            let mut acc: Option<Elab<R>> = None;
            for t in terms {
                let v = elaborate(t, ctx)?;
                acc = Some(match acc {
                    None => v,
                    Some(a) => add_elab(a, v)?,
                });
            }
            Ok(acc.unwrap())
        }
        Ast::Comp(factors) => {
            let mut pre: Vec<PreFactor<R>> = factors
                .iter()
                .map(|f| prefactor(f, ctx))
                .collect::<Result<_, _>>()?;
            resolve_blocks(&mut pre)?;
            // fold right-to-left (the rightmost factor applies first)
            let mut acc: Option<Elab<R>> = None;
            for f in pre.into_iter().rev() {
                let v = match f {
                    PreFactor::Done(e) => e,
                    PreFactor::Act { index, block } => {
                        let block = block.ok_or_else(|| NearRingError::Type {
                            msg: format!("cannot infer the framing block of s{}", index + 1),
                        })?;
                        activation_elab(index, block)
                    }
                };
                acc = Some(match acc {
                    None => v,
                    Some(inner) => compose(v, inner)?,
                });
            }
            Ok(acc.unwrap())
        }
        Ast::Scale(c, f) => {
            let mut v = elaborate(f, ctx)?;
            v.scale(Complex::new(rc::<R>(*c), R::zero()));
            Ok(v)
        }
        Ast::Ein => Ok(Elab::Lin(atom_label(
            Atom::Frame(ctx.in_vertex),
            ctx.quiver,
        )?)),
        Ast::EoutStar => Ok(Elab::Lin(atom_label(
            Atom::FrameAdj(ctx.out_vertex),
            ctx.quiver,
        )?)),
        Ast::E(v) => Ok(Elab::Lin(atom_label(Atom::Frame(*v), ctx.quiver)?)),
        Ast::EStar(v) => Ok(Elab::Lin(atom_label(Atom::FrameAdj(*v), ctx.quiver)?)),
        Ast::A(a) => Ok(Elab::Lin(atom_label(Atom::Arrow(*a), ctx.quiver)?)),
        Ast::S(j) => {
            let index = *j as usize;
            if index == 0 || index > ctx.activation_count {
                return Err(NearRingError::UnknownSymbol {
                    msg: format!(
                        "activation s{j} (catalog has {} entries)",
                        ctx.activation_count
                    ),
                });
            }
            // a bare activation outside a composition chain has no block anchor
            terr(format!("cannot infer the framing block of s{j}"))
        }
    }
}

fn prefactor<R: Real>(ast: &Ast, ctx: &Ctx) -> Result<PreFactor<R>, NearRingError> {
    match ast {
        Ast::S(j) => {
            let index = *j as usize;
            if index == 0 || index > ctx.activation_count {
                return Err(NearRingError::UnknownSymbol {
                    msg: format!(
                        "activation s{j} (catalog has {} entries)",
                        ctx.activation_count
                    ),
                });
            }
            Ok(PreFactor::Act {
                index: index - 1,
                block: None,
            })
        }
        Ast::Scale(c, inner) => {
            // scaling distributes onto the factor, including activations:
            // c * s . x elaborates as (c id) . s . x
            match prefactor::<R>(inner, ctx)? {
                PreFactor::Done(mut e) => {
                    e.scale(Complex::new(rc::<R>(*c), R::zero()));
                    Ok(PreFactor::Done(e))
                }
                PreFactor::Act { .. } => {
                    terr("scaling a bare activation is ambiguous; scale the composite instead")
                }
            }
        }
        other => Ok(PreFactor::Done(elaborate(other, ctx)?)),
    }
}

fn activation_elab<R: Real>(index: usize, block: u32) -> Elab<R> {
    let slot = Slot::F(block);
    let child = TreeNode {
        id: 0,
        leaf_label: Some(EdgeLabel::identity(slot)),
        branches: vec![],
    };
    Elab::Tree {
        dom: slot,
        cod: slot,
        node: TreeNode {
            id: 0,
            leaf_label: None,
            branches: vec![Branch {
                label: EdgeLabel::identity(slot),
                activation: index,
                block,
                child,
            }],
        },
    }
}

/// Infers activation blocks from typed neighbors in a composition chain.
fn resolve_blocks<R: Real>(pre: &mut [PreFactor<R>]) -> Result<(), NearRingError> {
    loop {
        let mut changed = false;
        for i in 0..pre.len() {
            if let PreFactor::Act { block: None, .. } = pre[i] {
                // right neighbor applies first: its cod must be our block
                let mut inferred: Option<Slot> = None;
                if i + 1 < pre.len() {
                    inferred = pre_slot_cod(&pre[i + 1]);
                }
                if inferred.is_none() && i > 0 {
                    inferred = pre_slot_dom(&pre[i - 1]);
                }
                if let Some(slot) = inferred {
                    match slot {
                        Slot::F(v) => {
                            if let PreFactor::Act { block, .. } = &mut pre[i] {
                                *block = Some(v);
                                changed = true;
                            }
                        }
                        Slot::V(v) => {
                            return terr(format!(
                                "activation applied at a state space V({v}); activations act on framing blocks"
                            ));
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(())
}

fn pre_slot_cod<R: Real>(p: &PreFactor<R>) -> Option<Slot> {
    match p {
        PreFactor::Done(e) => Some(e.cod()),
        PreFactor::Act { block, .. } => block.map(Slot::F),
    }
}

fn pre_slot_dom<R: Real>(p: &PreFactor<R>) -> Option<Slot> {
    match p {
        PreFactor::Done(e) => Some(e.dom()),
        PreFactor::Act { block, .. } => block.map(Slot::F),
    }
}

/// Parses an algorithm expression against a quiver and activation catalog
/// size, returning the type-checked tree `F_in -> F_out`.
pub fn parse_algorithm<R: Real>(
    text: &str,
    quiver: &Quiver,
    activation_count: usize,
) -> Result<ActivationTree<R>, NearRingError> {
    let in_vertex = quiver
        .input_vertex()
        .ok_or_else(|| NearRingError::UnknownSymbol {
            msg: "the quiver needs exactly one input-role vertex".into(),
        })?;
    let out_vertex = quiver
        .output_vertex()
        .ok_or_else(|| NearRingError::UnknownSymbol {
            msg: "the quiver needs exactly one output-role vertex".into(),
        })?;
    let toks = lex(text)?;
    if toks.is_empty() {
        return perr(0, "empty algorithm expression");
    }
    let mut parser = Parser {
        toks: &toks,
        pos: 0,
        end: text.len(),
    };
    let ast = parser.expr()?;
    if parser.pos != toks.len() {
        return perr(parser.here(), "trailing input after expression");
    }
    let ctx = Ctx {
        quiver,
        in_vertex,
        out_vertex,
        activation_count,
    };
    let elab: Elab<R> = match &ast {
        // a bare activation chain has no anchor; report it as a type error
        Ast::S(_) => return terr("cannot infer the framing block of a bare activation"),
        _ => elaborate(&ast, &ctx)?,
    };
    if elab.dom() != Slot::F(in_vertex) || elab.cod() != Slot::F(out_vertex) {
        return terr(format!(
            "algorithm must be typed F({in_vertex}) -> F({out_vertex}); found {} -> {}",
            elab.dom().describe(),
            elab.cod().describe()
        ));
    }
    let node = elab.into_node();
    if !node.in_slot_consistent(Slot::F(in_vertex)) {
        return terr("internal typing inconsistency at the leaves");
    }
    Ok(ActivationTree::finalize(node, in_vertex, out_vertex))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quiver::{a2_quiver, diamond_quiver};

    const DIAMOND_ALGO: &str =
        "eout* . ( a4 . e3 . s2 . e3* . a2 + a3 . e2 . s3 . e2* . a1 ) . ein";

    #[test]
    fn parse_diamond_algorithm() {
        let q = diamond_quiver([2; 4], [1; 4]);
        let t = parse_algorithm::<f64>(DIAMOND_ALGO, &q, 4).unwrap();
        assert_eq!(t.root.branches.len(), 2);
        assert!(t.root.leaf_label.is_none());
        assert_eq!(t.grade(), 1);
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.leaf_count(), 2);
        assert_eq!(t.non_root_node_count(), 4);
        // branch structure: labels are single framing-loop words
        let b0 = &t.root.branches[0];
        assert_eq!(b0.block, 3);
        assert_eq!(b0.activation, 1); // s2
        assert_eq!(b0.label.terms.len(), 1);
        assert_eq!(
            b0.label.terms[0].atoms,
            vec![Atom::Frame(3), Atom::Arrow(4), Atom::FrameAdj(4)]
        );
        let leaf = b0.child.leaf_label.as_ref().unwrap();
        assert_eq!(
            leaf.terms[0].atoms,
            vec![Atom::Frame(1), Atom::Arrow(2), Atom::FrameAdj(3)]
        );
    }

    #[test]
    fn parse_linear_tree() {
        let q = a2_quiver((2, 2), (1, 1));
        let t = parse_algorithm::<f64>("eout* . a1 . ein", &q, 4).unwrap();
        assert_eq!(t.grade(), 0);
        assert_eq!(t.node_count(), 1);
        assert_eq!(t.leaf_count(), 1);
        let label = t.root.leaf_label.as_ref().unwrap();
        assert_eq!(
            label.terms[0].atoms,
            vec![Atom::Frame(1), Atom::Arrow(1), Atom::FrameAdj(2)]
        );
    }

    #[test]
    fn type_error_on_misplaced_activation() {
        let q = a2_quiver((2, 2), (1, 1));
        let err = parse_algorithm::<f64>("eout* . s1 . ein", &q, 4).unwrap_err();
        assert!(matches!(err, NearRingError::Type { .. }), "{err}");
    }

    #[test]
    fn unknown_symbols_reported() {
        let q = a2_quiver((2, 2), (1, 1));
        assert!(matches!(
            parse_algorithm::<f64>("eout* . a7 . ein", &q, 4),
            Err(NearRingError::UnknownSymbol { .. })
        ));
        assert!(matches!(
            parse_algorithm::<f64>("eout* . e2 . s9 . e2* . a1 . ein", &q, 4),
            Err(NearRingError::UnknownSymbol { .. })
        ));
    }

    #[test]
    fn parse_error_position() {
        let q = a2_quiver((2, 2), (1, 1));
        let err = parse_algorithm::<f64>("eout* . a1 . !", &q, 4).unwrap_err();
        match err {
            NearRingError::Parse { pos, .. } => assert_eq!(pos, 13),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn grade_nested_two_levels() {
        let q = a2_quiver((2, 2), (1, 1));
        let t = parse_algorithm::<f64>(
            "eout* . e2 . s1 . ( e2* . a1 . ein + e2* . a1 . e1 . s2 . e1* . ein )",
            &q,
            4,
        )
        .unwrap();
        assert_eq!(t.grade(), 2);
    }

    #[test]
    fn differential_linear_tree_single_summand() {
        let q = a2_quiver((2, 2), (1, 1));
        let t = parse_algorithm::<f64>("eout* . a1 . ein", &q, 4).unwrap();
        let d = differentiate(&t);
        assert_eq!(d.summands.len(), 1);
        assert!(d.summands[0].prefix.is_empty());
        assert_eq!(d.summands[0].suffix, Suffix::Unit);
    }

    #[test]
    fn differential_worked_example_has_five_summands() {
        // Tree shape a_0 + a_1 s1 . (a_{1,0} + a_{1,1} s2 . a_{1,1,0}):
        // one summand per non-root node, five in total.
        let q = a2_quiver((2, 2), (1, 1));
        let text = "eout* . a1 . ein + eout* . e2 . s1 . ( e2* . a1 . ein + e2* . a1 . e1 . s2 . e1* . ein )";
        let t = parse_algorithm::<f64>(text, &q, 4).unwrap();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.leaf_count(), 3);
        assert_eq!(t.non_root_node_count(), 5);
        let d = differentiate(&t);
        assert_eq!(d.summands.len(), 5);
    }

    #[test]
    fn differential_diamond_summands_match_node_count() {
        let q = diamond_quiver([2; 4], [1; 4]);
        let t = parse_algorithm::<f64>(DIAMOND_ALGO, &q, 4).unwrap();
        let d = differentiate(&t);
        assert_eq!(d.summands.len(), t.non_root_node_count());
        assert_eq!(d.summands.len(), 4);
        // deepest summands carry the branch prefix
        let with_prefix = d.summands.iter().filter(|s| !s.prefix.is_empty()).count();
        assert_eq!(with_prefix, 2);
    }

    #[test]
    fn pretty_print_round_trip() {
        let q = diamond_quiver([2; 4], [1; 4]);
        for text in [
            DIAMOND_ALGO,
            "eout* . a4 . a2 . ein",
            "eout* . ( a4 . a2 + 2.5 * a3 . a1 ) . ein",
            "eout* . a4 . e3 . s4 . s1 . e3* . a2 . ein",
            "eout* . a4 . e3 . 2 * ( s2 . e3* . a2 ) . ein",
        ] {
            let t = parse_algorithm::<f64>(text, &q, 4).unwrap();
            let printed = t.pretty();
            let t2 = parse_algorithm::<f64>(&printed, &q, 4)
                .unwrap_or_else(|e| panic!("reparse of {printed:?} failed: {e}"));
            assert_eq!(t, t2, "round trip changed structure for {text:?}");
        }
    }

    #[test]
    fn addition_distributes_against_parsing() {
        let q = diamond_quiver([2; 4], [1; 4]);
        let a = parse_algorithm::<f64>("eout* . a4 . a2 . ein", &q, 4).unwrap();
        let b = parse_algorithm::<f64>("eout* . a3 . a1 . ein", &q, 4).unwrap();
        let sum = a.add(&b).unwrap();
        let direct =
            parse_algorithm::<f64>("eout* . a4 . a2 . ein + eout* . a3 . a1 . ein", &q, 4).unwrap();
        assert_eq!(sum, direct);
    }

    #[test]
    fn scalar_weight_scales_label() {
        let q = a2_quiver((2, 2), (1, 1));
        let t = parse_algorithm::<f64>("eout* . 2 * a1 . ein", &q, 4).unwrap();
        let label = t.root.leaf_label.as_ref().unwrap();
        assert_eq!(label.terms[0].coeff, Complex::new(2.0, 0.0));
    }
}
