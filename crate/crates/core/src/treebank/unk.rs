//! Unknown-word classes and the stochastic replacement rule.
//!
//! English classes are built from surface features, joined with `-`:
//!
//! | feature | tag |
//! |---|---|
//! | all letters upper-case, more than one letter | `AC` |
//! | initial capital, sentence-initial | `SC` |
//! | initial capital elsewhere | `C` |
//! | otherwise contains a lower-case letter | `L` |
//! | contains a digit | `N` |
//! | contains a hyphen | `H` |
//! | lower-case word of length ≥ 3 ending in a listed suffix | the suffix |
//! | ... or else ending in `s` | `s` |
//!
//! `Falling` becomes `UNK-C-ng`, `1990s` becomes `UNK-L-N-s`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::Vocab;

/// Class used for every word in Chinese mode, and as the catch-all class.
pub const UNK: &str = "UNK";

const SUFFIXES: [&str; 14] = [
    "ed", "ng", "ly", "er", "on", "al", "ty", "ic", "es", "ve", "nt", "le", "st", "ry",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Language {
    #[default]
    English,
    Chinese,
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "english" | "en" => Ok(Language::English),
            "chinese" | "zh" => Ok(Language::Chinese),
            other => Err(format!("unknown language `{other}`")),
        }
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Language::English => "english",
            Language::Chinese => "chinese",
        })
    }
}

pub fn unk_class(word: &str, sentence_initial: bool, language: Language) -> String {
    if language == Language::Chinese || word.is_empty() {
        return UNK.to_string();
    }
    let chars: Vec<char> = word.chars().collect();
    let letters = chars.iter().filter(|c| c.is_alphabetic()).count();
    let has_lower = chars.iter().any(|c| c.is_lowercase());
    let has_upper = chars.iter().any(|c| c.is_uppercase());

    let mut class = String::from(UNK);
    if has_upper && !has_lower && letters > 1 {
        class.push_str("-AC");
    } else if chars[0].is_uppercase() {
        class.push_str(if sentence_initial { "-SC" } else { "-C" });
    } else if has_lower {
        class.push_str("-L");
    }
    if chars.iter().any(|c| c.is_ascii_digit()) {
        class.push_str("-N");
    }
    if chars.contains(&'-') {
        class.push_str("-H");
    }
    if has_lower && chars.len() >= 3 {
        let lower = word.to_lowercase();
        if let Some(s) = SUFFIXES.iter().find(|s| lower.ends_with(*s)) {
            class.push('-');
            class.push_str(s);
        } else if lower.ends_with('s') {
            class.push_str("-s");
        }
    }
    class
}

/// `P(w → unk_w) = γ / (γ + #w)`.
pub fn replacement_probability(gamma: f64, count: u32) -> f64 {
    gamma / (gamma + count as f64)
}

/// Training-time word ids: each token is independently swapped for its
/// unknown class with [`replacement_probability`]. In Chinese mode only
/// singletons are swapped, with probability 0.5.
pub fn stochastic_unk(
    words: &[String],
    vocab: &Vocab,
    gamma: f64,
    rng: &mut impl Rng,
) -> Vec<usize> {
    words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let count = vocab.word_count(w);
            let p = match vocab.language {
                Language::English => replacement_probability(gamma, count),
                Language::Chinese if count <= 1 => 0.5,
                Language::Chinese => 0.0,
            };
            // One draw per token keeps the random stream aligned with the sentence.
            let draw: f64 = rng.gen();
            if count == 0 || draw < p {
                vocab.class_id(w, i == 0)
            } else {
                vocab.word_id(w, i == 0)
            }
        })
        .collect()
}
