//! A SMILES subset: organic-subset atoms `C N O F P S Cl Br I`, bonds
//! `- = # :`, branches and ring-closure digits `1`–`9`. No brackets,
//! charges, stereo, isotopes or lowercase aromatic atoms.

use thiserror::Error;

use super::{BondOrder, Element, MolGraph};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SmilesErrorKind {
    Empty,
    UnknownAtom(String),
    UnexpectedCharacter(char),
    UnbalancedParenthesis,
    EmptyBranch,
    UnmatchedRingClosure(u8),
    RingClosureSelfLoop(u8),
    DuplicateBond,
    BondWithoutAtom,
    MissingAtom,
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
#[error("SMILES error at position {position}: {kind:?}")]
pub struct SmilesError {
    pub position: usize,
    pub kind: SmilesErrorKind,
}

fn err<T>(position: usize, kind: SmilesErrorKind) -> Result<T, SmilesError> {
    Err(SmilesError { position, kind })
}

fn bond_of(c: char) -> Option<BondOrder> {
    match c {
        '-' => Some(BondOrder::Single),
        '=' => Some(BondOrder::Double),
        '#' => Some(BondOrder::Triple),
        ':' => Some(BondOrder::Aromatic),
        _ => None,
    }
}

#[derive(Default)]
struct Builder {
    elements: Vec<Element>,
    bonds: Vec<(usize, usize, BondOrder)>,
}

impl Builder {
    fn connect(&mut self, u: usize, v: usize, b: BondOrder, pos: usize) -> Result<(), SmilesError> {
        if self.bonds.iter().any(|&(a, c, _)| (a == u && c == v) || (a == v && c == u)) {
            return err(pos, SmilesErrorKind::DuplicateBond);
        }
        self.bonds.push((u, v, b));
        Ok(())
    }
}

/// Parses the supported subset. Atoms are numbered in order of appearance;
/// bonds default to single; a ring digit pairs its first occurrence with the
/// next occurrence of the same digit.
pub fn parse_smiles(text: &str) -> Result<MolGraph, SmilesError> {
    let chars: Vec<char> = text.chars().collect();
    if chars.is_empty() {
        return err(0, SmilesErrorKind::Empty);
    }
    let mut b = Builder::default();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(BondOrder, usize)> = None;
    let mut rings: [Option<(usize, Option<BondOrder>, usize)>; 10] = [None; 10];
    let mut just_opened = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let pos = i;
        i += 1;
        let element = match c {
            'C' if chars.get(i) == Some(&'l') => {
                i += 1;
                Some(Element::Cl)
            }
            'B' if chars.get(i) == Some(&'r') => {
                i += 1;
                Some(Element::Br)
            }
            'C' => Some(Element::C),
            'N' => Some(Element::N),
            'O' => Some(Element::O),
            'F' => Some(Element::F),
            'P' => Some(Element::P),
            'S' => Some(Element::S),
            'I' => Some(Element::I),
            _ => None,
        };
        if let Some(el) = element {
            let idx = b.elements.len();
            b.elements.push(el);
            if let Some(p) = prev {
                let order = pending.take().map_or(BondOrder::Single, |(o, _)| o);
                b.connect(p, idx, order, pos)?;
            }
            prev = Some(idx);
            just_opened = false;
            continue;
        }
        if let Some(order) = bond_of(c) {
            if prev.is_none() || pending.is_some() {
                return err(pos, SmilesErrorKind::BondWithoutAtom);
            }
            pending = Some((order, pos));
            continue;
        }
        match c {
            '(' => {
                let Some(p) = prev else { return err(pos, SmilesErrorKind::MissingAtom) };
                if let Some((_, bp)) = pending {
                    return err(bp, SmilesErrorKind::BondWithoutAtom);
                }
                branches.push((p, pos));
                just_opened = true;
            }
            ')' => {
                if let Some((_, bp)) = pending {
                    return err(bp, SmilesErrorKind::BondWithoutAtom);
                }
                if just_opened {
                    return err(pos, SmilesErrorKind::EmptyBranch);
                }
                let Some((p, _)) = branches.pop() else { return err(pos, SmilesErrorKind::UnbalancedParenthesis) };
                prev = Some(p);
            }
            '1'..='9' => {
                let d = c as u8 - b'0';
                let Some(here) = prev else { return err(pos, SmilesErrorKind::MissingAtom) };
                if just_opened {
                    return err(pos, SmilesErrorKind::MissingAtom);
                }
                let bond = pending.take().map(|(o, _)| o);
                match rings[d as usize].take() {
                    Some((open_atom, open_bond, _)) => {
                        if open_atom == here {
                            return err(pos, SmilesErrorKind::RingClosureSelfLoop(d));
                        }
                        let order = bond.or(open_bond).unwrap_or(BondOrder::Single);
                        b.connect(open_atom, here, order, pos)?;
                    }
                    None => rings[d as usize] = Some((here, bond, pos)),
                }
            }
            c if c.is_ascii_alphabetic() || c == '[' => {
                let mut sym = c.to_string();
                if let Some(&n) = chars.get(i) {
                    if n.is_ascii_lowercase() && c.is_ascii_uppercase() {
                        sym.push(n);
                    }
                }
                return err(pos, SmilesErrorKind::UnknownAtom(sym));
            }
            other => return err(pos, SmilesErrorKind::UnexpectedCharacter(other)),
        }
    }
    if let Some((_, bp)) = pending {
        return err(bp, SmilesErrorKind::BondWithoutAtom);
    }
    if let Some(&(_, p)) = branches.last() {
        return err(p, SmilesErrorKind::UnbalancedParenthesis);
    }
    if let Some((d, (_, _, p))) = rings.iter().enumerate().find_map(|(d, r)| r.map(|r| (d, r))) {
        return err(p, SmilesErrorKind::UnmatchedRingClosure(d as u8));
    }
    Ok(MolGraph::new(b.elements, b.bonds).expect("parser emits well-formed graphs"))
}

/// Writes a connected graph as SMILES by depth-first traversal from node 0,
/// visiting neighbors in ascending index order. Returns `None` for graphs that
/// are disconnected or need more than nine simultaneously open rings.
///
/// When the graph's numbering already is this traversal's preorder (true for
/// anything produced by [`parse_smiles`] on this writer's output), parsing the
/// result reproduces the graph exactly, edge order included.
pub fn to_smiles(g: &MolGraph) -> Option<String> {
    let n = g.node_count();
    if n == 0 || g.component_count() != 1 {
        return None;
    }
    let adj = g.adjacency();
    let bond = |u: usize, v: usize| {
        let k = g.edges().iter().position(|&(a, b)| (a == u && b == v) || (a == v && b == u)).unwrap();
        g.bonds()[k]
    };
    // discovery order and tree parents
    let mut order = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut children = vec![Vec::new(); n];
    let mut counter = 0;
    fn dfs(
        u: usize,
        adj: &[Vec<usize>],
        order: &mut [usize],
        parent: &mut [usize],
        children: &mut [Vec<usize>],
        counter: &mut usize,
    ) {
        order[u] = *counter;
        *counter += 1;
        for &v in &adj[u] {
            if order[v] == usize::MAX {
                parent[v] = u;
                children[u].push(v);
                dfs(v, adj, order, parent, children, counter);
            }
        }
    }
    dfs(0, &adj, &mut order, &mut parent, &mut children, &mut counter);
    // ring bonds open at the earlier-discovered endpoint
    let mut opens: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut ring_bonds = Vec::new();
    for &(u, v) in g.edges() {
        if parent[v] == u || parent[u] == v {
            continue;
        }
        let (a, b) = if order[u] < order[v] { (u, v) } else { (v, u) };
        let id = ring_bonds.len();
        ring_bonds.push((a, b));
        opens[a].push(id);
        closes[b].push(id);
    }
    for o in &mut opens {
        o.sort_by_key(|&id| order[ring_bonds[id].1]);
    }
    let mut digit_of = vec![0u8; ring_bonds.len()];
    let mut free = [true; 10];
    let mut out = String::new();
    struct Ctx<'a> {
        g: &'a MolGraph,
        children: &'a [Vec<usize>],
        opens: &'a [Vec<usize>],
        closes: &'a [Vec<usize>],
        ring_bonds: &'a [(usize, usize)],
        order: &'a [usize],
    }
    fn emit(
        u: usize,
        ctx: &Ctx,
        bond: &dyn Fn(usize, usize) -> BondOrder,
        digit_of: &mut [u8],
        free: &mut [bool; 10],
        out: &mut String,
    ) -> Option<()> {
        out.push_str(ctx.g.elements()[u].symbol());
        // closings in the order their openings were written
        let mut closing = ctx.closes[u].clone();
        closing.sort_by_key(|&id| ctx.order[ctx.ring_bonds[id].0]);
        for id in closing {
            let d = digit_of[id];
            out.push((b'0' + d) as char);
            free[d as usize] = true;
        }
        for &id in &ctx.opens[u] {
            let d = (1..=9u8).find(|&d| free[d as usize])?;
            free[d as usize] = false;
            digit_of[id] = d;
            let (a, b) = ctx.ring_bonds[id];
            let o = bond(a, b);
            if o != BondOrder::Single {
                out.push(o.symbol());
            }
            out.push((b'0' + d) as char);
        }
        let kids = &ctx.children[u];
        for (k, &c) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                out.push('(');
            }
            let o = bond(u, c);
            if o != BondOrder::Single {
                out.push(o.symbol());
            }
            emit(c, ctx, bond, digit_of, free, out)?;
            if !last {
                out.push(')');
            }
        }
        Some(())
    }
    let ctx = Ctx { g, children: &children, opens: &opens, closes: &closes, ring_bonds: &ring_bonds, order: &order };
    emit(0, &ctx, &bond, &mut digit_of, &mut free, &mut out)?;
    Some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kind(s: &str) -> SmilesErrorKind {
        parse_smiles(s).unwrap_err().kind
    }

    #[test]
    fn ethane() {
        let g = parse_smiles("CC").unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.bonds(), &[BondOrder::Single]);
    }

    #[test]
    fn cyclopropane_ring_closure() {
        let g = parse_smiles("C1CC1").unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (0, 2)]);
        assert!(g.bonds().iter().all(|&b| b == BondOrder::Single));
    }

    #[test]
    fn acetic_acid_branch() {
        let g = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (1, 3)]);
        assert_eq!(g.bonds(), &[BondOrder::Single, BondOrder::Double, BondOrder::Single]);
        assert_eq!(g.elements(), &[Element::C, Element::C, Element::O, Element::O]);
    }

    #[test]
    fn two_letter_atoms_and_ring_bond_orders() {
        let g = parse_smiles("ClC1=CC=C1Br").unwrap();
        assert_eq!(g.elements()[0], Element::Cl);
        assert_eq!(*g.elements().last().unwrap(), Element::Br);
        assert_eq!(g.cyclomatic_number(), 1);
        let g = parse_smiles("C=1CC1").unwrap();
        assert_eq!(g.bonds()[2], BondOrder::Double);
    }

    #[test]
    fn ring_digits_are_reusable() {
        let g = parse_smiles("C1CC1C1CC1").unwrap();
        assert_eq!(g.node_count(), 6);
        assert_eq!(g.cyclomatic_number(), 2);
    }

    #[test]
    fn grammar_errors_carry_positions() {
        assert_eq!(kind("C1CC"), SmilesErrorKind::UnmatchedRingClosure(1));
        assert_eq!(parse_smiles("C1CC").unwrap_err().position, 1);
        assert_eq!(kind("CX"), SmilesErrorKind::UnknownAtom("X".into()));
        assert_eq!(kind("cc"), SmilesErrorKind::UnknownAtom("c".into()));
        assert_eq!(kind("C[NH4+]"), SmilesErrorKind::UnknownAtom("[".into()));
        assert_eq!(kind("C(C"), SmilesErrorKind::UnbalancedParenthesis);
        assert_eq!(kind("CC)"), SmilesErrorKind::UnbalancedParenthesis);
        assert_eq!(kind("CC="), SmilesErrorKind::BondWithoutAtom);
        assert_eq!(kind("C=(C)"), SmilesErrorKind::BondWithoutAtom);
        assert_eq!(kind("=C"), SmilesErrorKind::BondWithoutAtom);
        assert_eq!(kind("C=#C"), SmilesErrorKind::BondWithoutAtom);
        assert_eq!(kind("C()C"), SmilesErrorKind::EmptyBranch);
        assert_eq!(kind("C11"), SmilesErrorKind::RingClosureSelfLoop(1));
        assert_eq!(kind("C1C1"), SmilesErrorKind::DuplicateBond);
        assert_eq!(kind("C.C"), SmilesErrorKind::UnexpectedCharacter('.'));
        assert_eq!(kind(""), SmilesErrorKind::Empty);
    }

    #[test]
    fn writer_round_trips_its_own_output() {
        for s in ["CC(=O)O", "C1CC1", "ClC1=CC(Br)=C1", "C1CC2CC1CC2N", "C(C)(C)(C)C", "C#N"] {
            let g = parse_smiles(s).unwrap();
            let w = to_smiles(&g).unwrap();
            let h = parse_smiles(&w).unwrap();
            assert_eq!(to_smiles(&h).unwrap(), w, "{s}");
            assert_eq!(h.node_count(), g.node_count());
            assert_eq!(h.cyclomatic_number(), g.cyclomatic_number());
        }
    }

    #[test]
    fn writer_refuses_disconnected_graphs() {
        let g = MolGraph::skeleton(4, &[(0, 1), (2, 3)]).unwrap();
        assert!(to_smiles(&g).is_none());
    }
}
