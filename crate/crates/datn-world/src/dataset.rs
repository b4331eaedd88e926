//! Dataset generation and persistence. Train and test splits draw from
//! disjoint scene-seed sets; question types are balanced against the
//! configured proportions by a deficit scheduler.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::WorldError;
use crate::scene::{Scene, SceneObject, CELL_PIXELS};
use crate::text::{answer_words, captions_for, question_candidates, CandidateKind, QUESTION_WORDS};
use crate::vocab::{build_vocab_with_extras, Vocabulary, END_ID, START_ID};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionType {
    Object,
    Number,
    Color,
    Location,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::Object,
        QuestionType::Number,
        QuestionType::Color,
        QuestionType::Location,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QuestionType::Object => "object",
            QuestionType::Number => "number",
            QuestionType::Color => "color",
            QuestionType::Location => "location",
        }
    }

    fn from_kind(kind: CandidateKind) -> Self {
        match kind {
            CandidateKind::Object => QuestionType::Object,
            CandidateKind::Number => QuestionType::Number,
            CandidateKind::Color => QuestionType::Color,
            CandidateKind::Location => QuestionType::Location,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaRecord {
    pub question: Vec<usize>,
    pub answer: usize,
    pub qtype: QuestionType,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub scene: Scene,
    /// Binary concept labels, one per concept word.
    pub labels: Vec<u8>,
    /// Token-id captions, each framed by the start and end tokens.
    pub captions: Vec<Vec<usize>>,
    pub qa: Vec<QaRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    /// Canvas side in pixels; the grid is `canvas_side / 4` cells across.
    pub canvas_side: usize,
    pub max_objects: usize,
    pub questions_per_sample: usize,
    /// Target share of object / number / color / location questions.
    pub type_proportions: [f64; 4],
    pub min_count: usize,
    pub concept_count: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            canvas_side: 16,
            max_objects: 4,
            questions_per_sample: 2,
            type_proportions: [0.25, 0.25, 0.25, 0.25],
            min_count: 1,
            concept_count: 24,
        }
    }
}

impl WorldConfig {
    pub fn grid(&self) -> usize {
        self.canvas_side / CELL_PIXELS
    }

    pub fn validate(&self) -> Result<()> {
        if self.canvas_side < 16 || self.canvas_side % (2 * CELL_PIXELS) != 0 {
            return Err(WorldError::InvalidConfig(format!(
                "canvas_side must be a multiple of {} and at least 16, got {}",
                2 * CELL_PIXELS,
                self.canvas_side
            )));
        }
        let cells = self.grid() * self.grid();
        if self.max_objects == 0 || self.max_objects > cells.min(4) {
            return Err(WorldError::TooManyObjects {
                requested: self.max_objects,
                cells: cells.min(4),
            });
        }
        if self.questions_per_sample == 0 {
            return Err(WorldError::InvalidConfig(
                "questions_per_sample must be positive".into(),
            ));
        }
        let total: f64 = self.type_proportions.iter().sum();
        if self.type_proportions.iter().any(|&p| p < 0.0) || total <= 0.0 {
            return Err(WorldError::InvalidConfig(
                "type_proportions must be non-negative and sum to a positive value".into(),
            ));
        }
        if self.min_count == 0 || self.concept_count == 0 {
            return Err(WorldError::InvalidConfig(
                "min_count and concept_count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: WorldConfig,
    pub seed: u64,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: Vocabulary,
}

/// Tracks how far each question type lags its target share and always
/// serves the most-lagging type that the scene can answer.
struct TypeScheduler {
    targets: [f64; 4],
    emitted: [usize; 4],
    total: usize,
}

impl TypeScheduler {
    fn new(proportions: [f64; 4]) -> Self {
        let sum: f64 = proportions.iter().sum();
        let mut targets = proportions;
        for t in &mut targets {
            *t /= sum;
        }
        TypeScheduler {
            targets,
            emitted: [0; 4],
            total: 0,
        }
    }

    fn pick(&mut self, available: [bool; 4]) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..4 {
            if !available[i] {
                continue;
            }
            let deficit = self.targets[i] * (self.total + 1) as f64 - self.emitted[i] as f64;
            match best {
                Some((_, d)) if d >= deficit => {}
                _ => best = Some((i, deficit)),
            }
        }
        let (idx, _) = best?;
        self.emitted[idx] += 1;
        self.total += 1;
        Some(idx)
    }
}

struct RawSample {
    scene: Scene,
    captions: Vec<Vec<String>>,
    qa: Vec<(Vec<String>, &'static str, QuestionType)>,
}

fn generate_raw(
    scene_seed: u64,
    config: &WorldConfig,
    scheduler: &mut TypeScheduler,
) -> RawSample {
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed);
    let scene = Scene::generate(&mut rng, scene_seed, config.canvas_side, config.max_objects);
    let captions = captions_for(&scene);

    let mut pools = question_candidates(&scene);
    let mut qa = Vec::with_capacity(config.questions_per_sample);
    for _ in 0..config.questions_per_sample {
        let available = [
            !pools[0].is_empty(),
            !pools[1].is_empty(),
            !pools[2].is_empty(),
            !pools[3].is_empty(),
        ];
        let Some(idx) = scheduler.pick(available) else {
            break;
        };
        let pool = &mut pools[idx];
        let at = rng.gen_range(0..pool.len());
        let candidate = pool.swap_remove(at);
        qa.push((
            candidate.words,
            candidate.answer,
            QuestionType::from_kind(candidate.kind),
        ));
    }
    RawSample {
        scene,
        captions,
        qa,
    }
}

fn encode_sample(raw: RawSample, vocab: &Vocabulary) -> Sample {
    let mut labels = vec![0u8; vocab.concept_count()];
    let mut captions = Vec::with_capacity(raw.captions.len());
    for words in &raw.captions {
        let mut ids = Vec::with_capacity(words.len() + 2);
        ids.push(START_ID);
        for w in words {
            let id = vocab.id_or_unk(w);
            ids.push(id);
            if let Some(concept) = vocab.concept_index_of(id) {
                labels[concept] = 1;
            }
        }
        ids.push(END_ID);
        captions.push(ids);
    }
    let qa = raw
        .qa
        .into_iter()
        .map(|(words, answer, qtype)| QaRecord {
            question: vocab.encode(&words),
            answer: vocab.answer_id(answer).expect("answer word in closed set"),
            qtype,
        })
        .collect();
    Sample {
        scene: raw.scene,
        labels,
        captions,
        qa,
    }
}

/// Generates disjoint train/test splits plus the vocabulary built from
/// the training captions.
pub fn generate_dataset(
    seed: u64,
    n_train: usize,
    n_test: usize,
    config: &WorldConfig,
) -> Result<Dataset> {
    config.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(WorldError::InvalidConfig(
            "n_train and n_test must be at least 1".into(),
        ));
    }

    let mut seed_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut draw_seed = |used: &mut HashSet<u64>| loop {
        let s: u64 = seed_rng.gen();
        if used.insert(s) {
            return s;
        }
    };
    let train_seeds: Vec<u64> = (0..n_train).map(|_| draw_seed(&mut used)).collect();
    let test_seeds: Vec<u64> = (0..n_test).map(|_| draw_seed(&mut used)).collect();

    let mut scheduler = TypeScheduler::new(config.type_proportions);
    let train_raw: Vec<RawSample> = train_seeds
        .iter()
        .map(|&s| generate_raw(s, config, &mut scheduler))
        .collect();
    let test_raw: Vec<RawSample> = test_seeds
        .iter()
        .map(|&s| generate_raw(s, config, &mut scheduler))
        .collect();

    let train_captions: Vec<Vec<String>> = train_raw
        .iter()
        .flat_map(|r| r.captions.iter().cloned())
        .collect();
    let answers = answer_words();
    let vocab = build_vocab_with_extras(
        &train_captions,
        &QUESTION_WORDS,
        &answers,
        config.min_count,
        config.concept_count,
    )?;

    let train = train_raw
        .into_iter()
        .map(|r| encode_sample(r, &vocab))
        .collect();
    let test = test_raw
        .into_iter()
        .map(|r| encode_sample(r, &vocab))
        .collect();

    Ok(Dataset {
        config: config.clone(),
        seed,
        train,
        test,
        vocab,
    })
}

// ── persistence ─────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct QaJson {
    q: Vec<usize>,
    a: usize,
    #[serde(rename = "type")]
    qtype: QuestionType,
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    seed: u64,
    objects: Vec<SceneObject>,
    captions: Vec<Vec<usize>>,
    qa: Vec<QaJson>,
    y: Vec<u8>,
}

#[derive(Serialize, Deserialize)]
struct MetaJson {
    seed: u64,
    canvas_side: usize,
    max_objects: usize,
    questions_per_sample: usize,
    type_proportions: [f64; 4],
    min_count: usize,
    concept_count: usize,
}

fn sample_to_json(sample: &Sample) -> SampleJson {
    SampleJson {
        seed: sample.scene.seed,
        objects: sample.scene.objects.clone(),
        captions: sample.captions.clone(),
        qa: sample
            .qa
            .iter()
            .map(|r| QaJson {
                q: r.question.clone(),
                a: r.answer,
                qtype: r.qtype,
            })
            .collect(),
        y: sample.labels.clone(),
    }
}

fn samples_to_jsonl(samples: &[Sample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(&sample_to_json(s)).expect("serializable"));
        out.push('\n');
    }
    out
}

fn samples_from_jsonl(text: &str, path: &str, vocab: &Vocabulary, side: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: SampleJson = serde_json::from_str(line)
            .map_err(|e| WorldError::parse(path, lineno + 1, e.to_string()))?;
        for caption in &parsed.captions {
            for &id in caption {
                if id >= vocab.size() {
                    return Err(WorldError::parse(
                        path,
                        lineno + 1,
                        format!(
                            "caption token id {id} not in vocabulary of {} tokens",
                            vocab.size()
                        ),
                    ));
                }
            }
        }
        for qa in &parsed.qa {
            for &id in &qa.q {
                if id >= vocab.size() {
                    return Err(WorldError::parse(
                        path,
                        lineno + 1,
                        format!(
                            "question token id {id} not in vocabulary of {} tokens",
                            vocab.size()
                        ),
                    ));
                }
            }
            if qa.a >= vocab.answer_count() {
                return Err(WorldError::parse(
                    path,
                    lineno + 1,
                    format!(
                        "answer id {} not in answer class list of {}",
                        qa.a,
                        vocab.answer_count()
                    ),
                ));
            }
        }
        if parsed.y.len() != vocab.concept_count() {
            return Err(WorldError::parse(
                path,
                lineno + 1,
                format!(
                    "label vector has {} entries, expected {}",
                    parsed.y.len(),
                    vocab.concept_count()
                ),
            ));
        }
        samples.push(Sample {
            scene: Scene::from_objects(parsed.seed, side, parsed.objects),
            labels: parsed.y,
            captions: parsed.captions,
            qa: parsed
                .qa
                .into_iter()
                .map(|r| QaRecord {
                    question: r.q,
                    answer: r.a,
                    qtype: r.qtype,
                })
                .collect(),
        });
    }
    Ok(samples)
}

impl Dataset {
    /// Writes `train.jsonl`, `test.jsonl`, `vocab.txt` and `meta.json`
    /// under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let io = |e| WorldError::io(dir.display().to_string(), e);
        fs::create_dir_all(dir).map_err(io)?;
        let write = |name: &str, contents: &str| -> Result<()> {
            let path = dir.join(name);
            let mut file =
                fs::File::create(&path).map_err(|e| WorldError::io(path.display().to_string(), e))?;
            file.write_all(contents.as_bytes())
                .map_err(|e| WorldError::io(path.display().to_string(), e))
        };
        let meta = MetaJson {
            seed: self.seed,
            canvas_side: self.config.canvas_side,
            max_objects: self.config.max_objects,
            questions_per_sample: self.config.questions_per_sample,
            type_proportions: self.config.type_proportions,
            min_count: self.config.min_count,
            concept_count: self.config.concept_count,
        };
        write(
            "meta.json",
            &format!("{}\n", serde_json::to_string_pretty(&meta).expect("serializable")),
        )?;
        write("vocab.txt", &self.vocab.to_text())?;
        write("train.jsonl", &samples_to_jsonl(&self.train))?;
        write("test.jsonl", &samples_to_jsonl(&self.test))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Dataset> {
        let read = |name: &str| -> Result<String> {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| WorldError::io(path.display().to_string(), e))
        };
        let meta: MetaJson = serde_json::from_str(&read("meta.json")?)
            .map_err(|e| WorldError::parse(dir.join("meta.json").display().to_string(), 1, e.to_string()))?;
        let config = WorldConfig {
            canvas_side: meta.canvas_side,
            max_objects: meta.max_objects,
            questions_per_sample: meta.questions_per_sample,
            type_proportions: meta.type_proportions,
            min_count: meta.min_count,
            concept_count: meta.concept_count,
        };
        config.validate()?;
        let vocab = Vocabulary::from_text(
            &read("vocab.txt")?,
            &dir.join("vocab.txt").display().to_string(),
        )?;
        let train = samples_from_jsonl(
            &read("train.jsonl")?,
            &dir.join("train.jsonl").display().to_string(),
            &vocab,
            config.canvas_side,
        )?;
        let test = samples_from_jsonl(
            &read("test.jsonl")?,
            &dir.join("test.jsonl").display().to_string(),
            &vocab,
            config.canvas_side,
        )?;
        Ok(Dataset {
            config,
            seed: meta.seed,
            train,
            test,
            vocab,
        })
    }
}
