//! Deterministic suffix-stripping lemmatizer.
//!
//! Handles plural `-s`/`-es`/`-ies`, and verbal `-ing`/`-ed` with consonant
//! undoubling. Irregular forms and silent-e stems go through an exception
//! table. The function is applied to a fixed point, so it is idempotent.

const EXCEPTIONS: &[(&str, &str)] = &[
    ("children", "child"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("men", "man"),
    ("women", "woman"),
    ("mice", "mouse"),
    ("knives", "knife"),
    ("shelves", "shelf"),
    ("leaves", "leaf"),
    ("halves", "half"),
    ("loaves", "loaf"),
    ("lives", "life"),
    ("wives", "wife"),
    ("series", "series"),
    ("species", "species"),
    ("clothes", "clothes"),
    ("scissors", "scissors"),
    ("pants", "pants"),
    ("glasses", "glasses"),
    ("news", "news"),
    ("was", "be"),
    ("were", "be"),
    ("been", "be"),
    ("being", "be"),
    ("is", "be"),
    ("are", "be"),
    ("has", "have"),
    ("had", "have"),
    ("having", "have"),
    ("does", "do"),
    ("did", "do"),
    ("done", "do"),
    ("doing", "do"),
    ("made", "make"),
    ("making", "make"),
    ("makes", "make"),
    ("used", "use"),
    ("using", "use"),
    ("uses", "use"),
    ("baked", "bake"),
    ("baking", "bake"),
    ("stored", "store"),
    ("storing", "store"),
    ("included", "include"),
    ("including", "include"),
    ("came", "come"),
    ("coming", "come"),
    ("comes", "come"),
    ("took", "take"),
    ("taking", "take"),
    ("taken", "take"),
    ("bought", "buy"),
    ("got", "get"),
    ("gotten", "get"),
    ("went", "go"),
    ("gone", "go"),
    ("goes", "go"),
    ("heated", "heat"),
    ("heating", "heat"),
    ("seated", "seat"),
    ("rated", "rate"),
    ("sized", "size"),
    ("zippered", "zipper"),
    ("assembled", "assemble"),
    ("assembling", "assemble"),
    ("machine", "machine"),
    ("ceiling", "ceiling"),
    ("thing", "thing"),
    ("things", "thing"),
    ("string", "string"),
    ("bedding", "bedding"),
    ("setting", "setting"),
    ("settings", "setting"),
    ("during", "during"),
    ("morning", "morning"),
    ("lighting", "lighting"),
    ("king", "king"),
    ("ring", "ring"),
    ("spring", "spring"),
    ("wing", "wing"),
    ("need", "need"),
    ("speed", "speed"),
    ("bed", "bed"),
    ("shed", "shed"),
    ("red", "red"),
];

fn exception(word: &str) -> Option<&'static str> {
    EXCEPTIONS
        .iter()
        .find_map(|&(from, to)| (from == word).then_some(to))
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn has_vowel(s: &str) -> bool {
    s.bytes().any(|c| is_vowel(c) || c == b'y')
}

fn undouble(stem: &str) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 3 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z')
    {
        stem[..n - 1].to_string()
    } else {
        stem.to_string()
    }
}

fn step(word: &str) -> String {
    if let Some(to) = exception(word) {
        return to.to_string();
    }
    if !word.is_ascii() || word.len() <= 3 || !word.bytes().all(|c| c.is_ascii_lowercase()) {
        return word.to_string();
    }

    if let Some(stem) = word.strip_suffix("ies") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    for suffix in ["sses", "shes", "ches", "xes", "zes"] {
        if word.ends_with(suffix) {
            return word[..word.len() - 2].to_string();
        }
    }
    if word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
        && !word.ends_with("'s")
    {
        return word[..word.len() - 1].to_string();
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if stem.len() >= 3 && has_vowel(stem) {
            return undouble(stem);
        }
    }
    if let Some(stem) = word.strip_suffix("ied") {
        if stem.len() >= 2 {
            return format!("{stem}y");
        }
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if stem.len() >= 3 && has_vowel(stem) && !stem.ends_with('e') {
            return undouble(stem);
        }
    }
    word.to_string()
}

/// Normal form of a single lowercase token. `lemma(lemma(t)) == lemma(t)`.
pub fn lemma(token: &str) -> String {
    let mut current = token.to_string();
    // Every non-exception rule shortens the word and exception targets are
    // fixed points, so this loop is bounded by the token length.
    for _ in 0..=token.len() + 1 {
        let next = step(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plural_stripping() {
        assert_eq!(lemma("dimensions"), "dimension");
        assert_eq!(lemma("sleepers"), "sleeper");
        assert_eq!(lemma("batteries"), "battery");
        assert_eq!(lemma("boxes"), "box");
        assert_eq!(lemma("inches"), "inch");
        assert_eq!(lemma("volts"), "volt");
    }

    #[test]
    fn fixed_points() {
        for w in ["chair", "glass", "bus", "gas", "this", "cooker", "rice", "size", "voltage"] {
            assert_eq!(lemma(w), w);
        }
    }

    #[test]
    fn verbal_forms() {
        assert_eq!(lemma("cooking"), "cook");
        assert_eq!(lemma("running"), "run");
        assert_eq!(lemma("washed"), "wash");
        assert_eq!(lemma("stopped"), "stop");
        assert_eq!(lemma("made"), "make");
        assert_eq!(lemma("zippered"), "zipper");
    }

    #[test]
    fn exception_targets_are_fixed_points() {
        for &(_, to) in EXCEPTIONS {
            assert_eq!(step(to), to, "{to}");
        }
    }

    #[test]
    fn non_ascii_untouched() {
        assert_eq!(lemma("été"), "été");
        assert_eq!(lemma("120v"), "120v");
    }

    proptest! {
        #[test]
        fn idempotent(word in "[a-z]{1,14}") {
            let once = lemma(&word);
            prop_assert_eq!(lemma(&once), once);
        }
    }
}
