//! Seeded toy recipe corpus.
//!
//! Every class has a background color and a signature set of ingredients;
//! each pair adds a few extra ingredients so that no two pairs share the
//! same set. An ingredient is drawn as a square mark of its own palette
//! color in a randomly chosen grid cell, so the image shows exactly the
//! ingredients the recipe lists.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Image, RecipePair};
use crate::error::{invalid, Result};
use crate::ste::StructuredDocument;

pub const INGREDIENT_NAMES: [&str; 27] = [
    "tomato", "basil", "garlic", "onion", "carrot", "potato", "lemon", "ginger", "pepper", "cheese", "butter",
    "rice", "bean", "mushroom", "spinach", "apple", "honey", "almond", "chicken", "salmon", "egg", "cream",
    "corn", "pea", "lime", "olive", "cabbage",
];

const CLASS_NAMES: [&str; 8] = ["soup", "salad", "curry", "tart", "stew", "noodle", "risotto", "omelette"];

pub const SIGNATURE_SIZE: usize = 4;
pub const EXTRAS: usize = 2;
const CELL: usize = 8;
const MARK: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub pairs_per_class: usize,
    /// Number of distinct ingredients (at most 27, one palette color each).
    pub ingredient_vocab_size: usize,
    pub image_size: usize,
    /// Standard deviation of per-pixel Gaussian noise.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { num_classes: 4, pairs_per_class: 16, ingredient_vocab_size: 24, image_size: 32, noise_level: 0.02, seed: 1 }
    }
}

fn class_name(c: usize) -> String {
    CLASS_NAMES.get(c).map_or_else(|| format!("dish{c}"), |s| s.to_string())
}

/// Ingredient `i`'s mark color: a point of the `{0, ½, 1}³` grid.
fn ingredient_color(i: usize) -> [f64; 3] {
    [(i % 3) as f64 / 2.0, (i / 3 % 3) as f64 / 2.0, (i / 9) as f64 / 2.0]
}

/// Mid-tone backgrounds that sit between palette points.
fn background_color(c: usize) -> [f64; 3] {
    let level = |bit: usize| if (c >> bit) & 1 == 1 { 0.75 } else { 0.25 };
    let shift = (c / 8) as f64 * 0.05;
    [level(0) + shift, level(1), level(2) - shift].map(|v: f64| v.clamp(0.0, 1.0))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    c.next().map_or_else(String::new, |f| f.to_uppercase().chain(c).collect())
}

/// One-sentence caption naming the dish and its ingredients.
pub fn caption_for(doc: &StructuredDocument) -> String {
    let ings = &doc.local_entities;
    let list = match ings.len() {
        0 => return format!("A {}.", doc.title.to_lowercase()),
        1 => ings[0].clone(),
        n => format!("{} and {}", ings[..n - 1].join(", "), ings[n - 1]),
    };
    format!("A {} with {list}.", doc.title.to_lowercase())
}

fn instructions(dish: &str, ings: &[String]) -> Vec<String> {
    let verbs = ["Prepare", "Add", "Stir in", "Top with"];
    let mut out: Vec<String> = ings
        .chunks(2)
        .zip(verbs.iter().cycle())
        .map(|(chunk, verb)| format!("{verb} the {}.", chunk.join(" and the ")))
        .collect();
    out.push(format!("Serve the {dish}."));
    out
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    if spec.num_classes == 0 {
        return Err(invalid("synthetic corpus needs at least one class"));
    }
    if spec.pairs_per_class == 0 {
        return Err(invalid("synthetic corpus needs at least one pair per class"));
    }
    let v = spec.ingredient_vocab_size;
    if !(SIGNATURE_SIZE + EXTRAS..=INGREDIENT_NAMES.len()).contains(&v) {
        return Err(invalid(format!(
            "ingredient_vocab_size must be in {}..={}, got {v}",
            SIGNATURE_SIZE + EXTRAS,
            INGREDIENT_NAMES.len()
        )));
    }
    let pool = v - SIGNATURE_SIZE;
    if pool * (pool - 1) / 2 < spec.pairs_per_class {
        return Err(invalid(format!("{v} ingredients cannot give {} distinct recipes per class", spec.pairs_per_class)));
    }
    let s = spec.image_size;
    if s % CELL != 0 || (s / CELL).pow(2) < SIGNATURE_SIZE + EXTRAS {
        return Err(invalid(format!("image_size must be a multiple of {CELL} with room for every mark, got {s}")));
    }
    if !(spec.noise_level >= 0.0 && spec.noise_level.is_finite()) {
        return Err(invalid("noise_level must be finite and non-negative"));
    }
    Ok(())
}

fn draw_image<R: Rng>(spec: &SyntheticSpec, class: usize, ingredients: &[usize], rng: &mut R) -> Image {
    let s = spec.image_size;
    let mut img = Image::filled(s, s, background_color(class));
    let grid = s / CELL;
    let cells = sample(rng, grid * grid, ingredients.len()).into_vec();
    for (&ing, cell) in ingredients.iter().zip(cells) {
        let (oy, ox) = (rng.gen_range(0..=CELL - MARK), rng.gen_range(0..=CELL - MARK));
        let (y0, x0) = ((cell / grid) * CELL + oy, (cell % grid) * CELL + ox);
        for y in y0..y0 + MARK {
            for x in x0..x0 + MARK {
                img.set_pixel(y, x, ingredient_color(ing));
            }
        }
    }
    if spec.noise_level > 0.0 {
        let noise = Normal::new(0.0, spec.noise_level).expect("validated noise level");
        for y in 0..s {
            for x in 0..s {
                let p = img.pixel(y, x).map(|v| (v + noise.sample(rng)).clamp(0.0, 1.0));
                img.set_pixel(y, x, p);
            }
        }
    }
    img.quantize();
    img
}

/// `num_classes × pairs_per_class` pairs, class-major, fully determined by
/// the `SyntheticSpec`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec) -> Result<Vec<RecipePair>> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let v = spec.ingredient_vocab_size;
    let mut order: Vec<usize> = (0..v).collect();
    order.shuffle(&mut rng);
    let mut pairs = Vec::with_capacity(spec.num_classes * spec.pairs_per_class);
    for class in 0..spec.num_classes {
        let signature: Vec<usize> = (0..SIGNATURE_SIZE).map(|j| order[(class * SIGNATURE_SIZE + j) % v]).collect();
        let pool: Vec<usize> = (0..v).filter(|i| !signature.contains(i)).collect();
        let mut used = HashSet::new();
        let dish = class_name(class);
        for n in 0..spec.pairs_per_class {
            let extras = loop {
                let mut e: Vec<usize> = sample(&mut rng, pool.len(), EXTRAS).into_iter().map(|i| pool[i]).collect();
                e.sort_unstable();
                if used.insert(e.clone()) {
                    break e;
                }
            };
            let mut ings: Vec<usize> = signature.iter().chain(&extras).copied().collect();
            ings.shuffle(&mut rng);
            let names: Vec<String> = ings.iter().map(|&i| INGREDIENT_NAMES[i].to_string()).collect();
            let image = draw_image(spec, class, &ings, &mut rng);
            let image_id = format!("c{class:02}-{n:03}");
            let document = StructuredDocument::new(capitalize(&dish), names.clone(), instructions(&dish, &names))?;
            pairs.push(RecipePair {
                image_path: format!("images/{image_id}.png"),
                image_id,
                image: Some(image),
                document,
                class_id: Some(class),
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_shape() {
        let pairs = generate_synthetic_corpus(&SyntheticSpec::default()).unwrap();
        assert_eq!(pairs.len(), 64);
        assert_eq!(pairs[0].image().unwrap().height(), 32);
        assert_eq!(pairs, generate_synthetic_corpus(&SyntheticSpec::default()).unwrap());
        let sets: HashSet<Vec<String>> = pairs
            .iter()
            .map(|p| {
                let mut v = p.document.local_entities.clone();
                v.sort();
                v
            })
            .collect();
        assert_eq!(sets.len(), 64);
    }

    #[test]
    fn zero_classes_rejected() {
        assert!(generate_synthetic_corpus(&SyntheticSpec { num_classes: 0, ..Default::default() }).is_err());
    }

    #[test]
    fn noiseless_pixels_are_background_or_ingredient_colors() {
        let spec = SyntheticSpec { noise_level: 0.0, pairs_per_class: 3, ..Default::default() };
        for p in generate_synthetic_corpus(&spec).unwrap() {
            let img = p.image().unwrap();
            let mut allowed: Vec<[f64; 3]> = p
                .document
                .local_entities
                .iter()
                .map(|n| {
                    let mut c = Image::filled(1, 1, ingredient_color(INGREDIENT_NAMES.iter().position(|x| x == n).unwrap()));
                    c.quantize();
                    c.pixel(0, 0)
                })
                .collect();
            let mut bg = Image::filled(1, 1, background_color(p.class_id.unwrap()));
            bg.quantize();
            allowed.push(bg.pixel(0, 0));
            let marked = (0..32 * 32).filter(|&i| img.pixel(i / 32, i % 32) != bg.pixel(0, 0)).count();
            assert_eq!(marked, 6 * MARK * MARK);
            for i in 0..32 * 32 {
                assert!(allowed.contains(&img.pixel(i / 32, i % 32)));
            }
        }
    }

    #[test]
    fn caption_lists_ingredients() {
        let d = StructuredDocument::new("Soup", vec!["tomato".into(), "basil".into(), "rice".into()], vec![]).unwrap();
        assert_eq!(caption_for(&d), "A soup with tomato, basil and rice.");
    }
}
