//! Caption templates and question candidates. All text is lowercase,
//! whitespace-tokenized, and built from a small closed vocabulary.

use crate::scene::{Color, Scene, SceneObject, Shape, Zone};

/// Glue words excluded from concept candidacy.
pub const STOPWORDS: [&str; 6] = ["a", "is", "the", "on", "of", "in"];

/// Tokens that only occur in questions, appended to the vocabulary after
/// the caption words.
pub const QUESTION_WORDS: [&str; 8] = [
    "what", "color", "where", "how", "many", "objects", "are", "picture",
];

pub fn count_word(n: usize) -> &'static str {
    match n {
        1 => "one",
        2 => "two",
        3 => "three",
        4 => "four",
        _ => unreachable!("scenes hold 1..=4 objects"),
    }
}

/// The closed set of single-word answers: shapes, colors, counts, zones.
pub fn answer_words() -> Vec<&'static str> {
    let mut words: Vec<&'static str> = Vec::new();
    words.extend(Shape::ALL.iter().map(|s| s.word()));
    words.extend(Color::ALL.iter().map(|c| c.word()));
    words.extend([1, 2, 3, 4].iter().map(|&n| count_word(n)));
    words.extend(Zone::ALL.iter().map(|z| z.word()));
    words
}

fn relation_word(a: &SceneObject, b: &SceneObject) -> &'static str {
    if a.row != b.row {
        if a.row < b.row {
            "above"
        } else {
            "below"
        }
    } else if a.col < b.col {
        "left-of"
    } else {
        "right-of"
    }
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Caption set for a scene:
/// - the first object gets a location caption carrying the object count
///   ("... is one of three"; "... is alone" for single-object scenes),
/// - every further object gets a plain location caption,
/// - the first two objects get a spatial-relation caption.
pub fn captions_for(scene: &Scene) -> Vec<Vec<String>> {
    let mut captions = Vec::new();
    let n = scene.objects.len();
    let first = &scene.objects[0];
    let first_zone = scene.zone_of(first).word();
    let head = format!(
        "a {} {} {} in the {}",
        first.size.word(),
        first.color.word(),
        first.shape.word(),
        first_zone
    );
    if n == 1 {
        captions.push(words(&format!("{head} is alone")));
    } else {
        captions.push(words(&format!("{head} is one of {}", count_word(n))));
    }
    for obj in &scene.objects[1..] {
        captions.push(words(&format!(
            "a {} {} {} is in the {}",
            obj.size.word(),
            obj.color.word(),
            obj.shape.word(),
            scene.zone_of(obj).word()
        )));
    }
    if n >= 2 {
        let (a, b) = (&scene.objects[0], &scene.objects[1]);
        captions.push(words(&format!(
            "a {} {} {} is {} a {} {} {}",
            a.size.word(),
            a.color.word(),
            a.shape.word(),
            relation_word(a, b),
            b.size.word(),
            b.color.word(),
            b.shape.word()
        )));
    }
    captions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateKind {
    Object,
    Number,
    Color,
    Location,
}

/// An askable question: its token words, the single-word answer and the
/// question type.
#[derive(Debug, Clone)]
pub struct QuestionCandidate {
    pub kind: CandidateKind,
    pub words: Vec<String>,
    pub answer: &'static str,
}

/// Enumerates every unambiguous question for a scene, grouped by type in
/// the fixed order object, number, color, location.
pub fn question_candidates(scene: &Scene) -> [Vec<QuestionCandidate>; 4] {
    let mut object = Vec::new();
    let mut number = Vec::new();
    let mut color = Vec::new();
    let mut location = Vec::new();

    // Object: a zone holding exactly one object identifies its shape.
    for zone in Zone::ALL {
        let mut hits = scene.objects.iter().filter(|o| scene.zone_of(o) == zone);
        if let (Some(obj), None) = (hits.next(), hits.next()) {
            object.push(QuestionCandidate {
                kind: CandidateKind::Object,
                words: words(&format!("what is in the {}", zone.word())),
                answer: obj.shape.word(),
            });
        }
    }

    number.push(QuestionCandidate {
        kind: CandidateKind::Number,
        words: words("how many objects are in the picture"),
        answer: count_word(scene.objects.len()),
    });

    // Color: a shape occurring exactly once identifies its color.
    for shape in Shape::ALL {
        let mut hits = scene.objects.iter().filter(|o| o.shape == shape);
        if let (Some(obj), None) = (hits.next(), hits.next()) {
            color.push(QuestionCandidate {
                kind: CandidateKind::Color,
                words: words(&format!("what color is the {}", shape.word())),
                answer: obj.color.word(),
            });
        }
    }

    // Location: a unique (color, shape) pair identifies its zone.
    for shape in Shape::ALL {
        for col in Color::ALL {
            let mut hits = scene
                .objects
                .iter()
                .filter(|o| o.shape == shape && o.color == col);
            if let (Some(obj), None) = (hits.next(), hits.next()) {
                location.push(QuestionCandidate {
                    kind: CandidateKind::Location,
                    words: words(&format!("where is the {} {}", col.word(), shape.word())),
                    answer: scene.zone_of(obj).word(),
                });
            }
        }
    }

    [object, number, color, location]
}
