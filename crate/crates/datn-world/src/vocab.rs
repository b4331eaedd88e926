//! Vocabulary construction: dense token ids, the concept-word subset
//! (most frequent non-stopword caption tokens) and the answer class list.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::WorldError;
use crate::text::STOPWORDS;
use crate::Result;

pub const START_ID: usize = 0;
pub const END_ID: usize = 1;
pub const UNK_ID: usize = 2;
pub const PAD_ID: usize = 3;

pub const START_TOKEN: &str = "<s>";
pub const END_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    concept_ids: Vec<usize>,
    answers: Vec<String>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn concept_count(&self) -> usize {
        self.concept_ids.len()
    }

    pub fn answer_count(&self) -> usize {
        self.answers.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    /// Vocabulary ids of the concept words, in concept-index order.
    pub fn concept_ids(&self) -> &[usize] {
        &self.concept_ids
    }

    pub fn concept_word(&self, concept_index: usize) -> &str {
        &self.tokens[self.concept_ids[concept_index]]
    }

    /// Concept index of a vocabulary id, if that token is a concept.
    pub fn concept_index_of(&self, token_id: usize) -> Option<usize> {
        self.concept_ids.iter().position(|&id| id == token_id)
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn answer_id(&self, word: &str) -> Option<usize> {
        self.answers.iter().position(|a| a == word)
    }

    pub fn encode(&self, token_words: &[String]) -> Vec<usize> {
        token_words.iter().map(|w| self.id_or_unk(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_owned())
            .collect()
    }

    /// Serializes to the sectioned text format: one token per line under
    /// `#tokens`, concept words under `#concepts`, answer words under
    /// `#answers`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("#tokens\n");
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out.push_str("#concepts\n");
        for &id in &self.concept_ids {
            let _ = writeln!(out, "{}", self.tokens[id]);
        }
        out.push_str("#answers\n");
        for a in &self.answers {
            let _ = writeln!(out, "{a}");
        }
        out
    }

    pub fn from_text(text: &str, path: &str) -> Result<Vocabulary> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Tokens,
            Concepts,
            Answers,
        }
        let mut section = Section::None;
        let mut tokens: Vec<String> = Vec::new();
        let mut concepts: Vec<String> = Vec::new();
        let mut answers: Vec<String> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            match line {
                "#tokens" => section = Section::Tokens,
                "#concepts" => section = Section::Concepts,
                "#answers" => section = Section::Answers,
                _ => match section {
                    Section::None => {
                        return Err(WorldError::parse(
                            path,
                            lineno + 1,
                            "token before any section header",
                        ))
                    }
                    Section::Tokens => tokens.push(line.to_owned()),
                    Section::Concepts => concepts.push(line.to_owned()),
                    Section::Answers => answers.push(line.to_owned()),
                },
            }
        }
        if tokens.len() < 4 {
            return Err(WorldError::parse(path, 1, "missing reserved tokens"));
        }
        let index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if index.len() != tokens.len() {
            return Err(WorldError::parse(path, 1, "duplicate token in vocabulary"));
        }
        let mut concept_ids = Vec::with_capacity(concepts.len());
        for c in &concepts {
            match index.get(c) {
                Some(&id) => concept_ids.push(id),
                None => {
                    return Err(WorldError::parse(
                        path,
                        1,
                        format!("concept word '{c}' not in token list"),
                    ))
                }
            }
        }
        for a in &answers {
            if !index.contains_key(a) {
                return Err(WorldError::parse(
                    path,
                    1,
                    format!("answer word '{a}' not in token list"),
                ));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            concept_ids,
            answers,
        })
    }
}

/// Builds a vocabulary from caption corpora alone: words with corpus
/// frequency below `min_count` are dropped, the concept subset is the
/// `concept_count` most frequent non-stopword tokens (frequency ties
/// break lexicographically).
pub fn build_vocab(
    captions: &[Vec<String>],
    min_count: usize,
    concept_count: usize,
) -> Result<Vocabulary> {
    build_vocab_with_extras(captions, &[], &[], min_count, concept_count)
}

/// `build_vocab` plus fixed extra tokens (question-only words, answer
/// words) appended after the caption vocabulary so they always have ids.
pub fn build_vocab_with_extras(
    captions: &[Vec<String>],
    extra_tokens: &[&str],
    answer_words: &[&str],
    min_count: usize,
    concept_count: usize,
) -> Result<Vocabulary> {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for caption in captions {
        for word in caption {
            *freq.entry(word.as_str()).or_insert(0) += 1;
        }
    }

    let mut kept: Vec<(&str, usize)> = freq
        .iter()
        .filter(|(_, &n)| n >= min_count)
        .map(|(&w, &n)| (w, n))
        .collect();
    // Frequency descending, lexicographic ascending on ties.
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let eligible: Vec<&str> = kept
        .iter()
        .map(|&(w, _)| w)
        .filter(|w| !STOPWORDS.contains(w))
        .collect();
    if concept_count > eligible.len() {
        return Err(WorldError::ConceptCountTooLarge {
            requested: concept_count,
            eligible: eligible.len(),
        });
    }

    let mut tokens: Vec<String> = vec![
        START_TOKEN.to_owned(),
        END_TOKEN.to_owned(),
        UNK_TOKEN.to_owned(),
        PAD_TOKEN.to_owned(),
    ];
    tokens.extend(kept.iter().map(|&(w, _)| w.to_owned()));
    for &extra in extra_tokens.iter().chain(answer_words) {
        if !tokens.iter().any(|t| t == extra) {
            tokens.push(extra.to_owned());
        }
    }

    let index: HashMap<String, usize> = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let concept_ids: Vec<usize> = eligible[..concept_count]
        .iter()
        .map(|w| index[*w])
        .collect();
    let answers: Vec<String> = answer_words.iter().map(|&w| w.to_owned()).collect();

    Ok(Vocabulary {
        tokens,
        index,
        concept_ids,
        answers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(entries: &[(&str, usize)]) -> Vec<Vec<String>> {
        // One caption per word occurrence keeps counting transparent.
        let mut caps = Vec::new();
        for &(word, n) in entries {
            for _ in 0..n {
                caps.push(vec![word.to_owned()]);
            }
        }
        caps
    }

    #[test]
    fn words_below_min_count_are_excluded() {
        let caps = corpus(&[("circle", 10), ("zebra", 1)]);
        let vocab = build_vocab(&caps, 5, 1).unwrap();
        assert!(vocab.id("circle").is_some());
        assert!(vocab.id("zebra").is_none());
        assert_eq!(vocab.id_or_unk("zebra"), UNK_ID);
    }

    #[test]
    fn degenerate_concept_set_is_entire_eligible_vocabulary() {
        let caps = corpus(&[("red", 3), ("circle", 2), ("is", 9), ("square", 2)]);
        let vocab = build_vocab(&caps, 1, 3).unwrap();
        let mut concepts: Vec<&str> = (0..3).map(|i| vocab.concept_word(i)).collect();
        concepts.sort_unstable();
        assert_eq!(concepts, vec!["circle", "red", "square"]);
    }

    #[test]
    fn concept_subset_matches_frequency_count_oracle() {
        let caps = corpus(&[
            ("red", 7),
            ("blue", 7),
            ("circle", 9),
            ("square", 2),
            ("the", 50),
            ("alone", 2),
        ]);
        // Oracle: count, filter stopwords, sort by (freq desc, lex asc).
        let expected = vec!["circle", "blue", "red"]; // 9, 7, 7 (blue < red)
        let vocab = build_vocab(&caps, 1, 3).unwrap();
        let got: Vec<&str> = (0..3).map(|i| vocab.concept_word(i)).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn concept_count_larger_than_eligible_is_rejected() {
        let caps = corpus(&[("red", 3)]);
        let err = build_vocab(&caps, 1, 2).unwrap_err();
        assert!(matches!(
            err,
            WorldError::ConceptCountTooLarge {
                requested: 2,
                eligible: 1
            }
        ));
    }

    #[test]
    fn text_round_trip() {
        let caps = corpus(&[("red", 3), ("circle", 2)]);
        let vocab =
            build_vocab_with_extras(&caps, &["what"], &["red"], 1, 2).unwrap();
        let text = vocab.to_text();
        let reloaded = Vocabulary::from_text(&text, "vocab.txt").unwrap();
        assert_eq!(vocab, reloaded);
        assert_eq!(reloaded.answer_id("red"), Some(0));
    }
}
