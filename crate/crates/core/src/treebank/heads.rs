//! Head-percolation tables.
//!
//! One rule per line: `CATEGORY left|right CAT1 CAT2 ...`. The priority list
//! is scanned in order; for each entry the children are searched in the rule's
//! direction. If nothing matches, the first child in that direction is the
//! head. `#` starts a comment.

use std::collections::HashMap;

use super::TreebankError;

const PTB_TABLE: &str = include_str!("ptb_heads.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadRule {
    pub direction: Direction,
    pub priority: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadTable {
    rules: HashMap<String, HeadRule>,
    /// Used for categories without a rule; `None` makes them an error.
    pub fallback: Option<Direction>,
}

impl HeadTable {
    /// Collins-style table for Penn Treebank categories.
    pub fn ptb() -> Self {
        Self::parse(PTB_TABLE).expect("bundled head table parses")
    }

    pub fn parse(text: &str) -> Result<Self, TreebankError> {
        let mut rules = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let category = fields.next().unwrap();
            let direction = match fields.next() {
                Some("left") => Direction::Left,
                Some("right") => Direction::Right,
                _ => return Err(TreebankError::BadHeadRule(lineno + 1, line.to_string())),
            };
            let priority = fields.map(str::to_string).collect();
            rules.insert(
                category.to_string(),
                HeadRule {
                    direction,
                    priority,
                },
            );
        }
        Ok(HeadTable {
            rules,
            fallback: Some(Direction::Right),
        })
    }

    pub fn rule(&self, category: &str) -> Option<&HeadRule> {
        self.rules.get(category)
    }

    /// Index of the head among `children` (their labels) of `parent`.
    pub fn find_head(&self, parent: &str, children: &[&str]) -> Result<usize, TreebankError> {
        assert!(!children.is_empty());
        let (direction, priority): (Direction, &[String]) = match self.rules.get(parent) {
            Some(rule) => (rule.direction, &rule.priority),
            None => match self.fallback {
                Some(d) => (d, &[]),
                None => return Err(TreebankError::UnknownCategory(parent.to_string())),
            },
        };
        let order: Vec<usize> = match direction {
            Direction::Left => (0..children.len()).collect(),
            Direction::Right => (0..children.len()).rev().collect(),
        };
        for cat in priority {
            if let Some(&i) = order.iter().find(|&&i| children[i] == cat) {
                return Ok(i);
            }
        }
        Ok(order[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ptb_rules() {
        let t = HeadTable::ptb();
        assert_eq!(t.find_head("NP", &["DT", "NN", "NN"]).unwrap(), 2);
        assert_eq!(t.find_head("VP", &["VBZ", "NP", "PP"]).unwrap(), 0);
        assert_eq!(t.find_head("PP", &["IN", "NP"]).unwrap(), 0);
        assert_eq!(t.find_head("S", &["NP", "VP", "."]).unwrap(), 1);
    }

    #[test]
    fn unlisted_category_falls_back_to_rightmost() {
        let t = HeadTable::ptb();
        assert_eq!(t.find_head("MADEUP", &["A", "B", "C"]).unwrap(), 2);
        let mut strict = t;
        strict.fallback = None;
        assert_eq!(
            strict.find_head("MADEUP", &["A"]),
            Err(TreebankError::UnknownCategory("MADEUP".into()))
        );
    }

    #[test]
    fn custom_table_and_errors() {
        let t = HeadTable::parse("# comment\nXP left B A\n\nYP right\n").unwrap();
        assert_eq!(t.find_head("XP", &["A", "B", "A"]).unwrap(), 1);
        assert_eq!(t.find_head("XP", &["C", "A"]).unwrap(), 1);
        assert_eq!(t.find_head("XP", &["C", "D"]).unwrap(), 0);
        assert_eq!(t.find_head("YP", &["C", "D"]).unwrap(), 1);
        assert!(matches!(
            HeadTable::parse("ZP up A"),
            Err(TreebankError::BadHeadRule(1, _))
        ));
    }
}
