use std::fmt;

use super::TreebankError;

/// A word together with its part-of-speech tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    pub word: String,
    pub pos: String,
}

impl Token {
    pub fn new(word: impl Into<String>, pos: impl Into<String>) -> Self {
        Token {
            word: word.into(),
            pos: pos.into(),
        }
    }
}

/// An n-ary labeled constituency tree. Preterminals are `Leaf`s.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Leaf { pos: String, word: String },
}

impl Tree {
    pub fn node(label: impl Into<String>, children: Vec<Tree>) -> Self {
        Tree::Node {
            label: label.into(),
            children,
        }
    }

    pub fn leaf(pos: impl Into<String>, word: impl Into<String>) -> Self {
        Tree::Leaf {
            pos: pos.into(),
            word: word.into(),
        }
    }

    /// Constituent label, or the POS tag for a leaf.
    pub fn label(&self) -> &str {
        match self {
            Tree::Node { label, .. } => label,
            Tree::Leaf { pos, .. } => pos,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn children(&self) -> &[Tree] {
        match self {
            Tree::Node { children, .. } => children,
            Tree::Leaf { .. } => &[],
        }
    }

    /// Tokens in left-to-right order.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::new();
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens(&self, out: &mut Vec<Token>) {
        match self {
            Tree::Leaf { pos, word } => out.push(Token::new(word.clone(), pos.clone())),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_tokens(out)),
        }
    }

    /// Number of words.
    pub fn len(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Single-line Penn bracketing.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { pos, word } => write!(f, "({} {})", pos, word),
            Tree::Node { label, children } => {
                write!(f, "({}", label)?;
                for c in children {
                    write!(f, " {}", c)?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Reader switches for corpus conventions that vary between treebank files.
#[derive(Debug, Clone)]
pub struct ReadOptions {
    /// Drop a unary `TOP`/`ROOT`/unlabeled wrapper around the real root.
    pub strip_top: bool,
    /// Cut `-FUNC` and `=N` suffixes from labels (`NP-SBJ-1` becomes `NP`).
    pub strip_functional: bool,
    /// Remove `-NONE-` leaves and the constituents left empty by that.
    pub strip_traces: bool,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            strip_top: true,
            strip_functional: true,
            strip_traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok<'a> {
    Open(usize),
    Close(usize),
    Atom(usize, &'a str),
}

fn tokenize(text: &str) -> Vec<Tok<'_>> {
    let mut toks = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c == '(' || c == ')' || c.is_whitespace() {
            if let Some(s) = start.take() {
                toks.push(Tok::Atom(s, &text[s..i]));
            }
            if c == '(' {
                toks.push(Tok::Open(i));
            } else if c == ')' {
                toks.push(Tok::Close(i));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        toks.push(Tok::Atom(s, &text[s..]));
    }
    toks
}

/// Reads every bracketed tree in `text` with default [`ReadOptions`].
pub fn parse_bracketed(text: &str) -> Result<Vec<Tree>, TreebankError> {
    parse_bracketed_with(text, &ReadOptions::default())
}

pub fn parse_bracketed_with(text: &str, opts: &ReadOptions) -> Result<Vec<Tree>, TreebankError> {
    let toks = tokenize(text);
    let mut pos = 0;
    let mut trees = Vec::new();
    while pos < toks.len() {
        match toks[pos] {
            Tok::Open(at) => {
                let raw = parse_node(&toks, &mut pos, true)?;
                let tree = finish_root(raw, opts).ok_or(TreebankError::EmptyNode(at))?;
                trees.push(tree);
            }
            Tok::Close(at) => return Err(TreebankError::UnbalancedBrackets(at)),
            Tok::Atom(at, _) => return Err(TreebankError::UnexpectedToken(at)),
        }
    }
    Ok(trees)
}

/// Parses one bracket starting at `toks[*pos]`, which must be `Open`.
fn parse_node(toks: &[Tok<'_>], pos: &mut usize, is_root: bool) -> Result<Tree, TreebankError> {
    let open_at = match toks[*pos] {
        Tok::Open(at) => at,
        _ => unreachable!("caller checked for an opening bracket"),
    };
    *pos += 1;
    let end_err = || TreebankError::UnbalancedBrackets(open_at);
    let label = match toks.get(*pos).ok_or_else(end_err)? {
        Tok::Atom(_, s) => {
            *pos += 1;
            s.to_string()
        }
        Tok::Open(_) if is_root => String::new(),
        Tok::Open(at) => return Err(TreebankError::EmptyNode(*at)),
        Tok::Close(_) => return Err(TreebankError::EmptyNode(open_at)),
    };
    let mut children = Vec::new();
    let mut word: Option<&str> = None;
    loop {
        match toks.get(*pos).ok_or_else(end_err)? {
            Tok::Close(_) => {
                *pos += 1;
                break;
            }
            Tok::Open(_) => {
                if word.is_some() {
                    return Err(TreebankError::UnexpectedToken(open_at));
                }
                children.push(parse_node(toks, pos, false)?);
            }
            Tok::Atom(at, s) => {
                if word.is_some() || !children.is_empty() {
                    return Err(TreebankError::UnexpectedToken(*at));
                }
                word = Some(s);
                *pos += 1;
            }
        }
    }
    match word {
        Some(w) => Ok(Tree::leaf(label, w)),
        None if children.is_empty() => Err(TreebankError::EmptyNode(open_at)),
        None => Ok(Tree::node(label, children)),
    }
}

fn finish_root(mut tree: Tree, opts: &ReadOptions) -> Option<Tree> {
    if opts.strip_traces {
        tree = remove_traces(tree)?;
    }
    if opts.strip_functional {
        strip_functional_tags(&mut tree);
    }
    loop {
        match tree {
            Tree::Node {
                ref label,
                ref children,
            } if opts.strip_top && children.len() == 1 && is_top_label(label) => {
                let Tree::Node { mut children, .. } = tree else {
                    unreachable!()
                };
                tree = children.pop().unwrap();
            }
            Tree::Node { ref mut label, .. } if label.is_empty() => {
                *label = "TOP".to_string();
                break;
            }
            _ => break,
        }
    }
    Some(tree)
}

fn is_top_label(label: &str) -> bool {
    label.is_empty() || label == "TOP" || label == "ROOT"
}

fn remove_traces(tree: Tree) -> Option<Tree> {
    match tree {
        Tree::Leaf { ref pos, .. } if pos == "-NONE-" => None,
        Tree::Leaf { .. } => Some(tree),
        Tree::Node { label, children } => {
            let children: Vec<Tree> = children.into_iter().filter_map(remove_traces).collect();
            (!children.is_empty()).then(|| Tree::node(label, children))
        }
    }
}

/// `NP-SBJ-1` → `NP`, `PP=2` → `PP`; labels starting with `-` are kept.
pub fn strip_functional(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) if i > 0 => &label[..i],
        _ => label,
    }
}

fn strip_functional_tags(tree: &mut Tree) {
    match tree {
        Tree::Leaf { pos, .. } => *pos = strip_functional(pos).to_string(),
        Tree::Node { label, children } => {
            *label = strip_functional(label).to_string();
            children.iter_mut().for_each(strip_functional_tags);
        }
    }
}
