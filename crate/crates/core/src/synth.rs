//! Templated synthetic product corpus with known attribute structure.
//!
//! Every product belongs to a category with a fixed set of relevant
//! attributes. The description states a random subset of them; questions
//! ask mostly about the unstated ones. The per-product metadata records
//! which attributes were stated, so "asks about something the description
//! already says" can be measured exactly.

use std::collections::BTreeSet;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;
use crate::textproc::{lemma, RawRecord, TokenSequence};

pub const ATTRIBUTES: [&str; 6] = ["color", "size", "voltage", "material", "capacity", "brand"];

struct Category {
    noun: &'static str,
    attributes: &'static [&'static str],
    filler: &'static [&'static str],
}

const CATEGORIES: &[Category] = &[
    Category {
        noun: "kettle",
        attributes: &["color", "size", "voltage", "material", "capacity", "brand"],
        filler: &["boils water in minutes", "has an automatic shut off", "plugs into a wall outlet"],
    },
    Category {
        noun: "lamp",
        attributes: &["color", "size", "voltage", "material", "brand"],
        filler: &["gives a warm soft light", "has a touch dimmer", "plugs into a wall outlet"],
    },
    Category {
        noun: "blender",
        attributes: &["color", "voltage", "capacity", "material", "brand"],
        filler: &["crushes ice easily", "has three speed settings", "plugs into a wall outlet"],
    },
    Category {
        noun: "fan",
        attributes: &["color", "size", "voltage", "brand"],
        filler: &["keeps the room cool", "oscillates quietly", "plugs into a wall outlet"],
    },
    Category {
        noun: "toaster",
        attributes: &["color", "size", "voltage", "brand"],
        filler: &["toasts bread evenly", "has a crumb tray", "plugs into a wall outlet"],
    },
    Category {
        noun: "mug",
        attributes: &["color", "size", "material", "capacity", "brand"],
        filler: &["keeps coffee hot", "has a comfortable handle", "is great for tea"],
    },
    Category {
        noun: "pillow",
        attributes: &["color", "size", "material", "brand"],
        filler: &["supports your neck", "is soft and fluffy", "is great for sleeping"],
    },
    Category {
        noun: "knife",
        attributes: &["size", "material", "brand"],
        filler: &["cuts vegetables cleanly", "stays sharp", "has a balanced grip"],
    },
];

const COLORS: &[&str] = &["red", "blue", "black", "white", "green", "silver"];
const MATERIALS: &[&str] = &["steel", "glass", "plastic", "ceramic", "cotton", "bamboo"];
const BRANDS: &[&str] = &["acme", "northwind", "contoso", "globex", "initech", "umbrella"];
const ADJECTIVES: &[&str] = &["modern", "compact", "classic", "sturdy", "elegant", "handy"];

/// Description sentence stating `attribute`. Each phrase trips the
/// bundled blacklist entry for that attribute.
fn stated_phrase(attribute: &str, rng: &mut ChaCha8Rng) -> String {
    match attribute {
        "color" => format!("it has a {} color finish", COLORS.choose(rng).unwrap()),
        "size" => format!("it measures {} inches across", rng.gen_range(6..=20)),
        "voltage" => format!("it runs on {} volts with a voltage adapter plug", [110, 120, 220, 240].choose(rng).unwrap()),
        "material" => format!("it is made of {}", MATERIALS.choose(rng).unwrap()),
        "capacity" => format!("it holds {} liters", rng.gen_range(1..=4)),
        "brand" => format!("it is made by {}", BRANDS.choose(rng).unwrap()),
        _ => unreachable!("unknown attribute {attribute}"),
    }
}

/// Question about `attribute`. Apart from the attribute name and the
/// product noun every template word is a stopword, so a question's
/// keywords are exactly its attribute (and possibly the noun). Templates
/// of different attributes share few words, which keeps them apart under
/// Jaccard deduplication.
fn question_about(attribute: &str, noun: &str, rng: &mut ChaCha8Rng) -> String {
    let templates: &[&str] = match attribute {
        "color" => &["what color is it ?", "is there another color for this {n} ?"],
        "size" => &["how about the size ?", "could i get the size of the {n} ?"],
        "voltage" => &["which voltage does this {n} have ?", "what voltage should it be on ?"],
        "material" => &["what is the material of the {n} ?", "the material , what is it ?"],
        "capacity" => &["how much capacity does it have ?", "what about the capacity of this {n} ?"],
        "brand" => &["who is the brand ?", "which brand is the {n} by ?"],
        _ => unreachable!("unknown attribute {attribute}"),
    };
    templates.choose(rng).unwrap().replace("{n}", noun)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub products: usize,
    pub seed: u64,
    pub min_questions: usize,
    pub max_questions: usize,
    /// Probability that a relevant attribute is stated in the description.
    pub stated_prob: f64,
    /// Sampling weight of a stated attribute relative to an unstated one.
    pub stated_weight: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            products: 500,
            seed: 1,
            min_questions: 4,
            max_questions: 7,
            stated_prob: 0.5,
            stated_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductMeta {
    pub id: String,
    pub category: String,
    pub stated: BTreeSet<String>,
    /// Attribute asked by each question.
    pub asked: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthProduct {
    pub record: RawRecord,
    pub meta: ProductMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub products: Vec<SynthProduct>,
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    if cfg.products == 0 || cfg.min_questions == 0 || cfg.min_questions > cfg.max_questions {
        return Err(Error::InvalidArgument(
            "need at least one product and 1 ≤ min_questions ≤ max_questions".into(),
        ));
    }
    if cfg.stated_weight.is_nan() || cfg.stated_weight <= 0.0 || !(0.0..=1.0).contains(&cfg.stated_prob) {
        return Err(Error::InvalidArgument("stated_weight must be positive and stated_prob in [0, 1]".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let width = cfg.products.to_string().len();
    let products = (0..cfg.products)
        .map(|i| {
            let cat = CATEGORIES.choose(&mut rng).unwrap();
            let stated: BTreeSet<String> = cat
                .attributes
                .iter()
                .filter(|_| rng.gen_bool(cfg.stated_prob))
                .map(|a| a.to_string())
                .collect();

            let mut sentences: Vec<String> = stated.iter().map(|a| stated_phrase(a, &mut rng)).collect();
            sentences.extend(cat.filler.iter().filter(|_| rng.gen_bool(0.7)).map(|f| format!("it {f}")));
            sentences.shuffle(&mut rng);
            sentences.insert(0, format!("this {} {} is a great addition to your home", ADJECTIVES.choose(&mut rng).unwrap(), cat.noun));
            let context = sentences.join(" . ") + " .";

            let weights: Vec<f64> = cat
                .attributes
                .iter()
                .map(|a| if stated.contains(*a) { cfg.stated_weight } else { 1.0 })
                .collect();
            let n = rng.gen_range(cfg.min_questions..=cfg.max_questions);
            let mut questions = Vec::with_capacity(n);
            let mut asked = Vec::with_capacity(n);
            let pick = WeightedIndex::new(&weights).expect("positive attribute weights");
            for _ in 0..n {
                let attr = cat.attributes[pick.sample(&mut rng)];
                questions.push(question_about(attr, cat.noun, &mut rng));
                asked.push(attr.to_string());
            }
            let id = format!("p{i:0width$}");
            SynthProduct {
                record: RawRecord {
                    id: id.clone(),
                    context,
                    questions,
                },
                meta: ProductMeta {
                    id,
                    category: cat.noun.to_string(),
                    stated,
                    asked,
                },
            }
        })
        .collect();
    Ok(SynthCorpus { products })
}

/// Whether `question` mentions `attribute` (lemma match on its name).
pub fn asks_attribute(question: &TokenSequence, attribute: &str) -> bool {
    let target = lemma(attribute);
    question.iter().any(|t| lemma(t) == target)
}

/// Whether `question` asks about any attribute in `stated`.
pub fn asks_stated(question: &TokenSequence, stated: &BTreeSet<String>) -> bool {
    stated.iter().any(|a| asks_attribute(question, a))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(&row)?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl SynthCorpus {
    /// 80/10/10 train/valid/test split in generation order.
    pub fn split(&self) -> (&[SynthProduct], &[SynthProduct], &[SynthProduct]) {
        let n = self.products.len();
        let train = n * 8 / 10;
        let valid = train + n / 10;
        (&self.products[..train], &self.products[train..valid], &self.products[valid..])
    }

    /// Writes `train.jsonl`, `valid.jsonl`, `test.jsonl` and `meta.jsonl`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (train, valid, test) = self.split();
        for (name, part) in [("train.jsonl", train), ("valid.jsonl", valid), ("test.jsonl", test)] {
            write_jsonl(&dir.join(name), part.iter().map(|p| &p.record))?;
        }
        write_jsonl(&dir.join("meta.jsonl"), self.products.iter().map(|p| &p.meta))
    }
}
