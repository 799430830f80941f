use std::collections::{BTreeMap, BTreeSet};

use super::Token;
use crate::labels::{PosTag, WordClass};

/// A gold caption with one tag per token.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggedCaption {
    pub tokens: Vec<Token>,
    pub tags: Vec<PosTag>,
}

/// Percentage of gold words of `class` that also occur in the prediction for
/// the same image, pooled over the corpus. `None` when the class never occurs.
pub fn pos_recall(predictions: &[Vec<Token>], gold: &[Vec<TaggedCaption>], class: WordClass) -> Option<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (pred, captions) in predictions.iter().zip(gold) {
        let words: BTreeSet<Token> = pred.iter().copied().collect();
        for c in captions {
            for (t, &tag) in c.tokens.iter().zip(&c.tags) {
                if WordClass::of(tag) == Some(class) {
                    total += 1;
                    hit += usize::from(words.contains(t));
                }
            }
        }
    }
    (total > 0).then(|| 100.0 * hit as f64 / total as f64)
}

pub fn pos_recall_all(predictions: &[Vec<Token>], gold: &[Vec<TaggedCaption>]) -> BTreeMap<WordClass, Option<f64>> {
    WordClass::ALL
        .iter()
        .map(|&c| (c, pos_recall(predictions, gold, c)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold() -> Vec<Vec<TaggedCaption>> {
        // "a cat and a dog"
        vec![vec![TaggedCaption {
            tokens: vec![1, 2, 3, 1, 4],
            tags: vec![PosTag::DT, PosTag::NN, PosTag::CC, PosTag::DT, PosTag::NN],
        }]]
    }

    #[test]
    fn identical_is_full() {
        let g = gold();
        assert_eq!(pos_recall(&[g[0][0].tokens.clone()], &g, WordClass::Noun), Some(100.0));
    }

    #[test]
    fn half_the_nouns() {
        assert_eq!(pos_recall(&[vec![1, 2]], &gold(), WordClass::Noun), Some(50.0));
        assert_eq!(pos_recall(&[vec![]], &gold(), WordClass::Noun), Some(0.0));
    }

    #[test]
    fn absent_class_is_undefined() {
        assert_eq!(pos_recall(&[vec![1]], &gold(), WordClass::Verb), None);
    }
}
