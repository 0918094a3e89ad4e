use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::binarize::{intermediate_label, CollapsedTree};
use super::unk::{unk_class, Language, UNK};
use super::TreebankError;

/// Stop symbol closing every label chain.
pub const STOP_LABEL: &str = "</L>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const UNK_CHAR: &str = "<unk>";

/// Bidirectional string ↔ dense id map.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Interner {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        self.items.push(s.to_string());
        self.index.insert(s.to_string(), self.items.len() - 1);
        self.items.len() - 1
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(String::as_str)
    }
}

impl From<Vec<String>> for Interner {
    fn from(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Interner { items, index }
    }
}

impl From<Interner> for Vec<String> {
    fn from(i: Interner) -> Self {
        i.items
    }
}

/// Word, character, POS and label inventories plus training frequencies.
///
/// Word ids share one embedding table: the boundary symbols and unknown
/// classes come first, followed by training words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    pub language: Language,
    /// Words seen fewer times than this resolve to their unknown class.
    pub min_count: u32,
    specials: Interner,
    words: Interner,
    word_counts: Vec<u32>,
    chars: Interner,
    pos: Interner,
    labels: Interner,
    /// Occurrences of each label as the outermost root label.
    root_counts: Vec<u32>,
}

impl Vocab {
    pub fn build(
        corpus: &[CollapsedTree],
        min_count: u32,
        language: Language,
    ) -> Result<Self, TreebankError> {
        if corpus.is_empty() {
            return Err(TreebankError::EmptyCorpus);
        }
        let mut specials = Interner::default();
        specials.intern(BOS);
        specials.intern(EOS);
        specials.intern(UNK);
        let mut words = Interner::default();
        let mut word_counts = Vec::new();
        let mut chars = Interner::default();
        chars.intern(UNK_CHAR);
        let mut pos = Interner::default();
        pos.intern(BOS);
        pos.intern(EOS);
        let mut labels = Interner::default();
        labels.intern(STOP_LABEL);
        let mut root_counts = vec![0u32];

        for tree in corpus {
            for (i, tok) in tree.tokens().iter().enumerate() {
                let id = words.intern(&tok.word);
                if id == word_counts.len() {
                    word_counts.push(0);
                }
                word_counts[id] += 1;
                for c in tok.word.chars() {
                    chars.intern(c.encode_utf8(&mut [0; 4]));
                }
                pos.intern(&tok.pos);
                specials.intern(&unk_class(&tok.word, i == 0, language));
            }
            tree.for_each(&mut |node| {
                for l in node.chain() {
                    labels.intern(l);
                }
                if let CollapsedTree::Node { chain, children } = node {
                    if children.len() > 2 {
                        labels.intern(&intermediate_label(&chain[0]));
                    }
                }
            });
            root_counts.resize(labels.len(), 0);
            if let Some(root) = tree.chain().last() {
                root_counts[labels.get(root).unwrap()] += 1;
            }
        }
        root_counts.resize(labels.len(), 0);
        Ok(Vocab {
            language,
            min_count: min_count.max(1),
            specials,
            words,
            word_counts,
            chars,
            pos,
            labels,
            root_counts,
        })
    }

    /// Rows of the word embedding table.
    pub fn num_words(&self) -> usize {
        self.specials.len() + self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn num_pos(&self) -> usize {
        self.pos.len()
    }

    /// Label inventory size, `</L>` included.
    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn num_unk_classes(&self) -> usize {
        self.specials.len() - 2
    }

    pub fn bos_word(&self) -> usize {
        0
    }

    pub fn eos_word(&self) -> usize {
        1
    }

    pub fn bos_pos(&self) -> usize {
        0
    }

    pub fn eos_pos(&self) -> usize {
        1
    }

    pub fn stop_label(&self) -> usize {
        0
    }

    /// Training frequency `#w`; zero for unseen words.
    pub fn word_count(&self, word: &str) -> u32 {
        self.words.get(word).map_or(0, |i| self.word_counts[i])
    }

    /// Evaluation-time lookup: frequent-enough training words keep their id,
    /// everything else maps to its unknown class.
    pub fn word_id(&self, word: &str, sentence_initial: bool) -> usize {
        match self.words.get(word) {
            Some(i) if self.word_counts[i] >= self.min_count => self.specials.len() + i,
            _ => self.class_id(word, sentence_initial),
        }
    }

    pub fn class_id(&self, word: &str, sentence_initial: bool) -> usize {
        let class = unk_class(word, sentence_initial, self.language);
        self.specials
            .get(&class)
            .or_else(|| self.specials.get(UNK))
            .expect("UNK is always registered")
    }

    pub fn is_class_id(&self, id: usize) -> bool {
        (2..self.specials.len()).contains(&id)
    }

    pub fn word_name(&self, id: usize) -> &str {
        if id < self.specials.len() {
            self.specials.name(id)
        } else {
            self.words.name(id - self.specials.len())
        }
    }

    pub fn char_id(&self, c: char) -> usize {
        self.chars.get(c.encode_utf8(&mut [0; 4])).unwrap_or(0)
    }

    pub fn pos_id(&self, tag: &str) -> Option<usize> {
        self.pos.get(tag)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.labels.get(label)
    }

    pub fn label(&self, id: usize) -> &str {
        self.labels.name(id)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter()
    }

    /// Most frequent outermost root label; ties go to the earliest seen.
    pub fn most_frequent_root(&self) -> Option<&str> {
        let (best, count) = self
            .root_counts
            .iter()
            .enumerate()
            .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
        (count > 0).then(|| self.labels.name(best))
    }

    /// Training words with their frequencies, in id order.
    pub fn word_frequencies(&self) -> impl Iterator<Item = (&str, u32)> {
        self.words.iter().zip(self.word_counts.iter().copied())
    }

    /// Loads pretrained vectors for known words: `word v1 ... vd` per line.
    /// Returns `(word id, vector)` pairs; lines with the wrong width are errors.
    pub fn read_pretrained(
        &self,
        text: &str,
        dim: usize,
    ) -> Result<Vec<(usize, Vec<f32>)>, TreebankError> {
        let mut out = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            let Some(word) = fields.next() else { continue };
            let values: Result<Vec<f32>, _> = fields.map(str::parse::<f32>).collect();
            let values = values.map_err(|_| TreebankError::BadEmbedding(lineno + 1))?;
            if values.len() != dim {
                return Err(TreebankError::BadEmbedding(lineno + 1));
            }
            if let Some(i) = self.words.get(word) {
                out.push((self.specials.len() + i, values));
            }
        }
        Ok(out)
    }
}
