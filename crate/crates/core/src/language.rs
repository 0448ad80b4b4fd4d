//! Language tags and a small character-trigram language detector.
//!
//! The detector is deliberately tiny: it compares the trigram profile of the
//! input against profiles built from a short reference text per language and
//! falls back to [`DEFAULT_LANGUAGE`] when the match is weak.

use std::collections::HashMap;
use std::sync::OnceLock;

pub const DEFAULT_LANGUAGE: &str = "en";

/// Minimum cosine similarity for the best profile.
const MIN_SIMILARITY: f64 = 0.12;
/// Minimum gap between the best and the runner-up profile.
const MIN_MARGIN: f64 = 0.02;
/// Below this many trigrams the input is too short to judge.
const MIN_TRIGRAMS: usize = 8;

const REFERENCE_TEXTS: &[(&str, &str)] = &[
    (
        "en",
        "the government announced that the new vaccine is safe and effective for \
         all children and adults. scientists have shown that there is no evidence \
         of a link between the treatment and the reported side effects. this claim \
         was shared widely on social media, but the experts who reviewed the study \
         said it was not true and that people should check the facts before they \
         share what they read with their friends and family.",
    ),
    (
        "fr",
        "le gouvernement a annoncé que le nouveau vaccin est sûr et efficace pour \
         tous les enfants et les adultes. les scientifiques ont montré qu'il n'y a \
         aucune preuve d'un lien entre le traitement et les effets secondaires \
         signalés. cette affirmation a été largement partagée sur les réseaux \
         sociaux, mais les experts qui ont examiné l'étude ont dit que ce n'était \
         pas vrai et qu'il faut vérifier les faits avant de partager ce que l'on lit.",
    ),
    (
        "es",
        "el gobierno anunció que la nueva vacuna es segura y eficaz para todos los \
         niños y los adultos. los científicos han demostrado que no hay ninguna \
         prueba de una relación entre el tratamiento y los efectos secundarios \
         informados. esta afirmación se compartió ampliamente en las redes sociales, \
         pero los expertos que revisaron el estudio dijeron que no era cierto y que \
         la gente debe comprobar los hechos antes de compartir lo que lee.",
    ),
    (
        "de",
        "die regierung hat angekündigt, dass der neue impfstoff für alle kinder und \
         erwachsenen sicher und wirksam ist. wissenschaftler haben gezeigt, dass es \
         keinen beweis für einen zusammenhang zwischen der behandlung und den \
         gemeldeten nebenwirkungen gibt. diese behauptung wurde in den sozialen \
         medien weit verbreitet, aber die experten, die die studie geprüft haben, \
         sagten, dass sie nicht wahr ist und dass man die fakten prüfen sollte.",
    ),
];

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub language: String,
    /// Cosine similarity of the winning profile, 0 when defaulted.
    pub confidence: f64,
    pub defaulted: bool,
}

/// Normalizes a BCP-47-style tag: 2–3 letter primary subtag, then 1–8
/// character alphanumeric subtags. The primary subtag is lowercased, 2-letter
/// region subtags are uppercased. Returns `None` for malformed tags.
pub fn normalize_tag(tag: &str) -> Option<String> {
    let tag = tag.trim().replace('_', "-");
    let mut parts = tag.split('-');
    let primary = parts.next()?;
    if !(2..=3).contains(&primary.len()) || !primary.chars().all(|c| c.is_ascii_alphabetic()) {
        return None;
    }
    let mut out = primary.to_ascii_lowercase();
    for part in parts {
        if part.is_empty() || part.len() > 8 || !part.chars().all(|c| c.is_ascii_alphanumeric()) {
            return None;
        }
        out.push('-');
        if part.len() == 2 && part.chars().all(|c| c.is_ascii_alphabetic()) {
            out.push_str(&part.to_ascii_uppercase());
        } else {
            out.push_str(&part.to_ascii_lowercase());
        }
    }
    Some(out)
}

/// Primary language subtag of a tag, e.g. `fr` for `fr-CA`.
pub fn primary_subtag(tag: &str) -> &str {
    tag.split('-').next().unwrap_or(tag)
}

type Profile = HashMap<String, f64>;

fn trigrams(text: &str) -> Profile {
    let mut counts = Profile::new();
    let lowered = text.to_lowercase();
    for word in lowered.split(|c: char| !c.is_alphabetic() && c != '\'') {
        if word.is_empty() {
            continue;
        }
        let padded: Vec<char> = format!(" {word} ").chars().collect();
        for window in padded.windows(3) {
            *counts.entry(window.iter().collect()).or_insert(0.0) += 1.0;
        }
    }
    counts
}

fn norm(profile: &Profile) -> f64 {
    profile.values().map(|v| v * v).sum::<f64>().sqrt()
}

fn cosine(a: &Profile, b: &Profile) -> f64 {
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, v)| large.get(k).map(|w| v * w))
        .sum();
    let denom = norm(a) * norm(b);
    if denom == 0.0 { 0.0 } else { dot / denom }
}

fn profiles() -> &'static [(&'static str, Profile)] {
    static PROFILES: OnceLock<Vec<(&'static str, Profile)>> = OnceLock::new();
    PROFILES.get_or_init(|| {
        REFERENCE_TEXTS
            .iter()
            .map(|(lang, text)| (*lang, trigrams(text)))
            .collect()
    })
}

pub fn detect(text: &str) -> Detection {
    let fallback = Detection {
        language: DEFAULT_LANGUAGE.to_string(),
        confidence: 0.0,
        defaulted: true,
    };
    let input = trigrams(text);
    if input.values().sum::<f64>() < MIN_TRIGRAMS as f64 {
        return fallback;
    }
    let mut scored: Vec<(&str, f64)> = profiles()
        .iter()
        .map(|(lang, profile)| (*lang, cosine(&input, profile)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    let (best_lang, best) = scored[0];
    let runner_up = scored.get(1).map_or(0.0, |s| s.1);
    if best < MIN_SIMILARITY || best - runner_up < MIN_MARGIN {
        return fallback;
    }
    Detection {
        language: best_lang.to_string(),
        confidence: best,
        defaulted: false,
    }
}
