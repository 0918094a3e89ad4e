//! Unary-chain collapsing, head binarization, and the inverse transform.

use super::heads::HeadTable;
use super::tree::{Token, Tree};
use super::TreebankError;

/// Tree with every unary chain folded into one node.
///
/// `chain` is bottom-up: `[VP, S]` means S dominates VP dominates the children.
/// Internal nodes always have at least one label and two or more children;
/// a leaf chain may be empty (a bare preterminal).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollapsedTree {
    Node {
        chain: Vec<String>,
        children: Vec<CollapsedTree>,
    },
    Leaf {
        chain: Vec<String>,
        token: Token,
    },
}

impl CollapsedTree {
    pub fn chain(&self) -> &[String] {
        match self {
            CollapsedTree::Node { chain, .. } | CollapsedTree::Leaf { chain, .. } => chain,
        }
    }

    /// The label visible to the parent: top of the chain, or the POS tag.
    pub fn outer_label(&self) -> &str {
        match self {
            CollapsedTree::Node { chain, .. } => {
                chain.last().expect("internal chains are non-empty")
            }
            CollapsedTree::Leaf { chain, token } => chain.last().unwrap_or(&token.pos),
        }
    }

    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        fn walk(t: &CollapsedTree, out: &mut Vec<Token>) {
            match t {
                CollapsedTree::Leaf { token, .. } => out.push(token.clone()),
                CollapsedTree::Node { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        walk(self, &mut out);
        out
    }

    pub fn len(&self) -> usize {
        match self {
            CollapsedTree::Leaf { .. } => 1,
            CollapsedTree::Node { children, .. } => children.iter().map(CollapsedTree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Visits every node in pre-order.
    pub fn for_each(&self, f: &mut impl FnMut(&CollapsedTree)) {
        f(self);
        if let CollapsedTree::Node { children, .. } = self {
            children.iter().for_each(|c| c.for_each(f));
        }
    }
}

/// Folds unary productions into label chains, failing if one exceeds `cap`.
pub fn collapse_unary(tree: &Tree, cap: usize) -> Result<CollapsedTree, TreebankError> {
    fn go(tree: &Tree, start: usize, cap: usize) -> Result<CollapsedTree, TreebankError> {
        let out = match tree {
            Tree::Leaf { pos, word } => {
                return Ok(CollapsedTree::Leaf {
                    chain: Vec::new(),
                    token: Token::new(word.clone(), pos.clone()),
                })
            }
            Tree::Node { label, children } if children.len() == 1 => {
                let mut inner = go(&children[0], start, cap)?;
                match &mut inner {
                    CollapsedTree::Node { chain, .. } | CollapsedTree::Leaf { chain, .. } => {
                        chain.push(label.clone())
                    }
                }
                inner
            }
            Tree::Node { label, children } => {
                let mut offset = start;
                let mut kids = Vec::with_capacity(children.len());
                for c in children {
                    kids.push(go(c, offset, cap)?);
                    offset += c.len();
                }
                CollapsedTree::Node {
                    chain: vec![label.clone()],
                    children: kids,
                }
            }
        };
        let len = out.chain().len();
        if len > cap {
            let span = (start, start + tree.len() - 1);
            return Err(TreebankError::ChainTooLong { span, length: len });
        }
        Ok(out)
    }
    go(tree, 0, cap)
}

/// Suffix marking labels introduced by binarization.
pub const INTERMEDIATE_MARK: char = '*';

pub fn intermediate_label(label: &str) -> String {
    format!("{}{}", label, INTERMEDIATE_MARK)
}

pub fn is_intermediate(label: &str) -> bool {
    label.len() > 1 && label.ends_with(INTERMEDIATE_MARK)
}

/// Binary tree over word positions with per-node label chains.
///
/// Spans are inclusive. Unlabeled trees (decoder output) have empty chains.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryTree {
    pub start: usize,
    pub end: usize,
    pub chain: Vec<String>,
    pub children: Option<Box<(BinaryTree, BinaryTree)>>,
}

impl BinaryTree {
    pub fn leaf(i: usize) -> Self {
        BinaryTree {
            start: i,
            end: i,
            chain: Vec::new(),
            children: None,
        }
    }

    pub fn join(left: BinaryTree, right: BinaryTree) -> Self {
        assert_eq!(left.end + 1, right.start, "children must be adjacent");
        BinaryTree {
            start: left.start,
            end: right.end,
            chain: Vec::new(),
            children: Some(Box::new((left, right))),
        }
    }

    pub fn with_chain(mut self, chain: Vec<String>) -> Self {
        self.chain = chain;
        self
    }

    pub fn span(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// Split point `k`: the left child covers `[start, k]`.
    pub fn split(&self) -> Option<usize> {
        self.children.as_ref().map(|c| c.0.end)
    }

    /// Number of words covered.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn left(&self) -> Option<&BinaryTree> {
        self.children.as_ref().map(|c| &c.0)
    }

    pub fn right(&self) -> Option<&BinaryTree> {
        self.children.as_ref().map(|c| &c.1)
    }

    /// Nodes in pre-order.
    pub fn nodes(&self) -> Vec<&BinaryTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            if let Some(c) = &n.children {
                stack.push(&c.1);
                stack.push(&c.0);
            }
        }
        out
    }

    /// Nodes in post-order: left subtree, right subtree, then the node.
    pub fn nodes_postorder(&self) -> Vec<&BinaryTree> {
        fn go<'a>(t: &'a BinaryTree, out: &mut Vec<&'a BinaryTree>) {
            if let Some(c) = &t.children {
                go(&c.0, out);
                go(&c.1, out);
            }
            out.push(t);
        }
        let mut out = Vec::new();
        go(self, &mut out);
        out
    }

    pub fn internal_nodes(&self) -> Vec<&BinaryTree> {
        self.nodes().into_iter().filter(|n| !n.is_leaf()).collect()
    }

    pub fn internal_count(&self) -> usize {
        self.internal_nodes().len()
    }

    /// Leaf positions left to right.
    pub fn leaves(&self) -> Vec<usize> {
        self.nodes()
            .into_iter()
            .filter(|n| n.is_leaf())
            .map(|n| n.start)
            .collect()
    }

    /// Spans of all internal nodes.
    pub fn internal_spans(&self) -> Vec<(usize, usize)> {
        self.internal_nodes()
            .into_iter()
            .map(BinaryTree::span)
            .collect()
    }

    /// Copy with every chain removed.
    pub fn unlabeled(&self) -> BinaryTree {
        BinaryTree {
            start: self.start,
            end: self.end,
            chain: Vec::new(),
            children: self
                .children
                .as_ref()
                .map(|c| Box::new((c.0.unlabeled(), c.1.unlabeled()))),
        }
    }

    /// Bracketed rendering of the structure, e.g. `((0 1) 2)`.
    pub fn shape(&self) -> String {
        match &self.children {
            None => self.start.to_string(),
            Some(c) => format!("({} {})", c.0.shape(), c.1.shape()),
        }
    }

    /// Applies `f` to every node, children first.
    pub fn map_chains(&mut self, f: &mut impl FnMut((usize, usize), &mut Vec<String>)) {
        if let Some(c) = &mut self.children {
            c.0.map_chains(f);
            c.1.map_chains(f);
        }
        f((self.start, self.end), &mut self.chain);
    }
}

/// Head-binarizes a collapsed tree.
///
/// Siblings are attached to the head nearest-first, right siblings before
/// left ones; every introduced node is labeled `X*` where `X` is the label
/// directly above the original children.
pub fn binarize(tree: &CollapsedTree, heads: &HeadTable) -> Result<BinaryTree, TreebankError> {
    fn go(t: &CollapsedTree, start: usize, heads: &HeadTable) -> Result<BinaryTree, TreebankError> {
        match t {
            CollapsedTree::Leaf { chain, .. } => {
                Ok(BinaryTree::leaf(start).with_chain(chain.clone()))
            }
            CollapsedTree::Node { chain, children } => {
                let mut offset = start;
                let mut kids = Vec::with_capacity(children.len());
                for c in children {
                    kids.push(go(c, offset, heads)?);
                    offset += c.len();
                }
                if kids.len() == 1 {
                    // Only reachable for hand-built trees; collapse_unary never emits it.
                    let mut only = kids.pop().unwrap();
                    let mut merged = only.chain.clone();
                    merged.extend(chain.iter().cloned());
                    only.chain = merged;
                    return Ok(only);
                }
                let parent = &chain[0];
                let labels: Vec<&str> = children.iter().map(CollapsedTree::outer_label).collect();
                let head = heads.find_head(parent, &labels)?;
                let inter = intermediate_label(parent);
                let mut kids: Vec<Option<BinaryTree>> = kids.into_iter().map(Some).collect();
                let mut current = kids[head].take().unwrap();
                let total = kids.len();
                let mut attached = 1;
                let order = (head + 1..total).chain((0..head).rev());
                for idx in order {
                    let sib = kids[idx].take().unwrap();
                    current = if idx > head {
                        BinaryTree::join(current, sib)
                    } else {
                        BinaryTree::join(sib, current)
                    };
                    attached += 1;
                    current.chain = if attached == total {
                        chain.clone()
                    } else {
                        vec![inter.clone()]
                    };
                }
                Ok(current)
            }
        }
    }
    go(tree, 0, heads)
}

/// Rebuilds an n-ary tree: `X*` and unlabeled internal nodes are spliced out,
/// and label chains are expanded into unary spines.
///
/// # Panics
/// If `tokens` does not cover the tree's span.
pub fn debinarize(tree: &BinaryTree, tokens: &[Token]) -> Tree {
    assert!(
        tree.end < tokens.len(),
        "token list shorter than the tree span"
    );

    fn wrap(mut base: Tree, chain: &[String]) -> Tree {
        for label in chain {
            base = Tree::node(label.clone(), vec![base]);
        }
        base
    }

    fn go(t: &BinaryTree, tokens: &[Token], out: &mut Vec<Tree>) {
        let splice = t.chain.first().is_none_or(|l| is_intermediate(l));
        match &t.children {
            None => {
                let tok = &tokens[t.start];
                let leaf = Tree::leaf(tok.pos.clone(), tok.word.clone());
                out.push(if splice { leaf } else { wrap(leaf, &t.chain) });
            }
            Some(c) => {
                let mut kids = Vec::new();
                go(&c.0, tokens, &mut kids);
                go(&c.1, tokens, &mut kids);
                if splice {
                    out.extend(kids);
                } else {
                    let base = Tree::node(t.chain[0].clone(), kids);
                    out.push(wrap(base, &t.chain[1..]));
                }
            }
        }
    }

    let mut out = Vec::new();
    go(tree, tokens, &mut out);
    if out.len() == 1 {
        out.pop().unwrap()
    } else {
        let label = tree
            .chain
            .first()
            .map(|l| l.trim_end_matches(INTERMEDIATE_MARK).to_string())
            .filter(|l| !l.is_empty())
            .unwrap_or_else(|| "X".to_string());
        Tree::node(label, out)
    }
}
