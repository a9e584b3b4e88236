//! Object extraction from free-text captions.
//!
//! The default extractor is a deterministic stand-in for a scene-graph
//! parser: it lower-cases tokens for matching, drops stopwords and
//! participle-looking verbs, and keeps each maximal run of remaining tokens
//! as one object phrase ("chest radiograph").

/// Pulls object phrases out of a caption.
pub trait ObjectExtractor: Send + Sync {
    /// Object phrases in caption order, deduplicated case-insensitively
    /// (first occurrence wins), with display casing applied.
    fn objects(&self, text: &str) -> Vec<String>;
}

/// Stopword + verb-suffix heuristic.
///
/// Casing: when the caption is sentence-cased, the first object and the two
/// arguments of the first verb (the phrase just before it and the phrase
/// just after it) get an upper-case initial. Nothing is ever lower-cased, so
/// re-extracting from a produced title returns the same title.
#[derive(Clone, Copy, Debug, Default)]
pub struct HeuristicExtractor;

const STOPWORDS: &[&str] = &[
    // articles and determiners
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "no", "another",
    "other", "such", "all", "both", "either", "neither", "several", "many", "few", "much", "more", "most",
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    // prepositions
    "of", "in", "on", "at", "by", "for", "with", "without", "from", "to", "into", "onto", "over", "under",
    "above", "below", "near", "beside", "besides", "between", "behind", "through", "across", "along",
    "around", "up", "down", "off", "out", "about", "against", "among", "before", "after", "during", "inside",
    "outside", "upon", "within", "beneath", "next", "towards", "toward", "via", "like", "per",
    // conjunctions
    "and", "or", "but", "nor", "so", "yet", "while", "as", "than", "then", "if", "because",
    // pronouns
    "i", "me", "my", "mine", "you", "your", "yours", "he", "him", "his", "she", "her", "hers", "it", "its",
    "we", "us", "our", "ours", "they", "them", "their", "theirs", "who", "whom", "whose", "which", "what",
    "itself", "himself", "herself", "themselves", "someone", "something",
    // auxiliaries and modals
    "is", "am", "are", "was", "were", "be", "been", "being", "has", "have", "had", "do", "does", "did",
    "will", "would", "can", "could", "shall", "should", "may", "might", "must",
    // adverbs that never name objects
    "there", "here", "very", "too", "also", "just", "not", "very", "together", "where", "when",
];

/// Nouns that look like participles.
const SUFFIX_EXCEPTIONS: &[&str] = &[
    "pudding", "dressing", "stuffing", "icing", "frosting", "filling", "topping", "seasoning", "dumpling",
    "ring", "king", "thing", "wing", "string", "spring", "swing", "ceiling", "building", "wedding", "evening",
    "morning", "painting", "clothing", "sibling", "ping", "bing", "seed", "need", "weed", "feed", "shed",
    "sled", "speed", "steed", "breed", "reed", "tweed", "bed", "red", "bread",
];

fn is_stopword(w: &str) -> bool {
    STOPWORDS.contains(&w)
}

/// `-ing` / `-ed` forms, minus a short list of common nouns.
pub fn looks_like_verb(w: &str) -> bool {
    if SUFFIX_EXCEPTIONS.contains(&w) || !w.chars().all(|c| c.is_ascii_alphabetic()) {
        return false;
    }
    (w.len() >= 5 && w.ends_with("ing")) || (w.len() >= 4 && w.ends_with("ed"))
}

#[derive(Debug)]
enum Piece {
    Word { surface: String, breaks_after: bool },
    Verb,
    Break,
}

fn lex(text: &str) -> Vec<Piece> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric());
        let breaks_after = raw.ends_with(|c: char| matches!(c, ',' | ';' | ':' | '.' | '!' | '?'));
        if trimmed.is_empty() {
            out.push(Piece::Break);
            continue;
        }
        let lower = trimmed.to_lowercase();
        if is_stopword(&lower) {
            out.push(Piece::Break);
        } else if looks_like_verb(&lower) {
            out.push(Piece::Verb);
        } else {
            out.push(Piece::Word { surface: trimmed.to_string(), breaks_after });
            continue;
        }
        if breaks_after {
            out.push(Piece::Break);
        }
    }
    out
}

struct Run {
    words: Vec<String>,
    /// A verb occurred somewhere before this run started.
    after_verb: bool,
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl ObjectExtractor for HeuristicExtractor {
    fn objects(&self, text: &str) -> Vec<String> {
        let mut runs: Vec<Run> = Vec::new();
        let mut current: Vec<String> = Vec::new();
        let mut seen_verb = false;
        // number of runs completed before the first verb
        let mut first_verb_run: Option<usize> = None;
        let mut current_after_verb = false;

        let flush = |current: &mut Vec<String>, runs: &mut Vec<Run>, after_verb: bool| {
            if !current.is_empty() {
                runs.push(Run { words: std::mem::take(current), after_verb });
            }
        };
        for piece in lex(text) {
            match piece {
                Piece::Word { surface, breaks_after } => {
                    if current.is_empty() {
                        current_after_verb = seen_verb;
                    }
                    current.push(surface);
                    if breaks_after {
                        flush(&mut current, &mut runs, current_after_verb);
                    }
                }
                Piece::Verb => {
                    flush(&mut current, &mut runs, current_after_verb);
                    if !seen_verb {
                        seen_verb = true;
                        first_verb_run = Some(runs.len());
                    }
                }
                Piece::Break => flush(&mut current, &mut runs, current_after_verb),
            }
        }
        flush(&mut current, &mut runs, current_after_verb);

        let sentence_cased = text.chars().find(|c| c.is_alphabetic()).is_some_and(char::is_uppercase);
        let mut emphasised = vec![false; runs.len()];
        if sentence_cased && !runs.is_empty() {
            emphasised[0] = true;
            if let Some(split) = first_verb_run {
                if split > 0 {
                    emphasised[split - 1] = true;
                }
                if let Some(i) = (split..runs.len()).find(|&i| runs[i].after_verb) {
                    emphasised[i] = true;
                }
            }
        }

        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for (run, emph) in runs.iter().zip(emphasised) {
            let phrase = run.words.join(" ");
            if !seen.insert(phrase.to_lowercase()) {
                continue;
            }
            out.push(if emph { capitalize(&phrase) } else { phrase });
        }
        out
    }
}

/// Lower-case object phrases, as stored in an entity database.
pub fn object_keys(extractor: &dyn ObjectExtractor, text: &str) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    extractor
        .objects(text)
        .into_iter()
        .map(|o| o.to_lowercase())
        .filter(|o| seen.insert(o.clone()))
        .collect()
}

/// Splits text on `.`, `!` and `?` followed by whitespace or end of text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for (i, &(pos, c)) in chars.iter().enumerate() {
        if matches!(c, '.' | '!' | '?') {
            let at_boundary = chars.get(i + 1).is_none_or(|&(_, n)| n.is_whitespace());
            if at_boundary {
                let end = pos + c.len_utf8();
                let s = text[start..end].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = end;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objects(t: &str) -> Vec<String> {
        HeuristicExtractor.objects(t)
    }

    #[test]
    fn noun_runs_and_verbs() {
        assert_eq!(objects("A woman playing piano on stage"), ["Woman", "Piano", "stage"]);
        assert_eq!(objects("a dog chasing a dog near a tree"), ["dog", "tree"]);
        assert_eq!(objects("chest radiograph showing effusion"), ["chest radiograph", "effusion"]);
        assert!(objects("it is there").is_empty());
    }

    #[test]
    fn punctuation_breaks_runs() {
        assert_eq!(objects("salt, pepper and oil."), ["salt", "pepper", "oil"]);
    }

    #[test]
    fn verb_filter_respects_exceptions() {
        assert!(looks_like_verb("cooking"));
        assert!(looks_like_verb("baked"));
        assert!(!looks_like_verb("pudding"));
        assert!(!looks_like_verb("red"));
        assert!(!looks_like_verb("seed"));
    }

    #[test]
    fn sentences() {
        assert_eq!(split_sentences("Mix well. Bake 3.5 hours! Serve"), ["Mix well.", "Bake 3.5 hours!", "Serve"]);
        assert_eq!(split_sentences("   "), Vec::<String>::new());
    }
}
