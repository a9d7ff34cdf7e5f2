//! English inflection lexicon: lemma+POS to surface forms and back.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};

static BUNDLED_TSV: &str = include_str!("../data/en_inflections.tsv");

/// Lemma/POS ↔ inflected forms.
///
/// Text format, one entry per line: `lemma<TAB>POS<TAB>form1,form2,...`.
/// The lemma itself is always added to its own form set.
#[derive(Debug, Clone, Default)]
pub struct InflectionLexicon {
    entries: BTreeMap<(String, String), BTreeSet<String>>,
    reverse: HashMap<String, BTreeSet<(String, String)>>,
}

/// Map long POS names onto the short tags the lexicon uses.
pub fn normalize_pos(pos: &str) -> &str {
    match pos {
        "verb" | "V" | "VERB" => "v",
        "noun" | "N" | "NOUN" => "n",
        "adj" | "A" | "ADJ" | "adjective" => "a",
        other => other,
    }
}

impl InflectionLexicon {
    pub fn new() -> Self {
        Self::default()
    }

    /// The lexicon shipped with the crate (~10k English lemmas).
    pub fn bundled() -> &'static InflectionLexicon {
        static LEXICON: OnceLock<InflectionLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| Self::parse(BUNDLED_TSV).expect("bundled lexicon parses"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(lemma), Some(pos)) = (cols.next(), cols.next()) else {
                return Err(Error::format("lexicon", format!("line {}: expected 3 columns", lineno + 1)));
            };
            let forms = cols.next().unwrap_or("");
            if cols.next().is_some() || lemma.is_empty() || pos.is_empty() {
                return Err(Error::format("lexicon", format!("line {}: expected 3 columns", lineno + 1)));
            }
            lex.insert(lemma, pos, forms.split(',').filter(|f| !f.is_empty()));
        }
        Ok(lex)
    }

    pub fn insert<'a>(&mut self, lemma: &str, pos: &str, forms: impl IntoIterator<Item = &'a str>) {
        let key = (lemma.to_string(), normalize_pos(pos).to_string());
        let set = self.entries.entry(key.clone()).or_default();
        set.insert(lemma.to_string());
        set.extend(forms.into_iter().map(str::to_string));
        for form in set.iter() {
            self.reverse.entry(form.clone()).or_default().insert(key.clone());
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Forms of `lemma` under `pos`, including the lemma.
    pub fn forms(&self, lemma: &str, pos: &str) -> Option<&BTreeSet<String>> {
        self.entries
            .get(&(lemma.to_string(), normalize_pos(pos).to_string()))
    }

    /// (lemma, POS) entries whose form set contains `form`.
    pub fn analyses(&self, form: &str) -> impl Iterator<Item = &(String, String)> {
        self.reverse.get(form).into_iter().flatten()
    }

    /// Every form of every lemma that `form` (lowercased) inflects, across
    /// all POS tags. Empty for unknown forms.
    pub fn variants(&self, form: &str) -> BTreeSet<String> {
        let lower = form.to_lowercase();
        self.analyses(&lower)
            .filter_map(|key| self.entries.get(key))
            .flatten()
            .cloned()
            .collect()
    }

    /// Lemma of `form` under `pos`, or the lowercased form when unknown.
    /// Ambiguous forms resolve to the alphabetically first lemma.
    pub fn lemmatize(&self, form: &str, pos: &str) -> String {
        let lower = form.to_lowercase();
        let pos = normalize_pos(pos);
        self.analyses(&lower)
            .find(|(_, p)| p == pos)
            .map(|(lemma, _)| lemma.clone())
            .unwrap_or(lower)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(String, String), &BTreeSet<String>)> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lemmatize_examples() {
        let lex = InflectionLexicon::bundled();
        assert_eq!(lex.lemmatize("sold", "v"), "sell");
        assert_eq!(lex.lemmatize("sell", "verb"), "sell");
        assert_eq!(lex.lemmatize("zzz", "n"), "zzz");
        assert_eq!(lex.lemmatize("Sold", "v"), "sell");
    }

    #[test]
    fn bundled_lexicon_has_irregulars_and_modals() {
        let lex = InflectionLexicon::bundled();
        assert!(lex.len() > 10_000);
        let confirm = lex.forms("confirm", "v").unwrap();
        for f in ["confirm", "confirms", "confirmed", "confirming"] {
            assert!(confirm.contains(f), "{f}");
        }
        assert!(lex.forms("will", "v").unwrap().contains("would"));
        assert!(lex.forms("be", "v").unwrap().contains("were"));
    }

    #[test]
    fn reverse_is_exact_inverse() {
        let lex = InflectionLexicon::parse("go\tv\twent,gone,goes\nwent\tn\t\n").unwrap();
        for (key, forms) in lex.iter() {
            assert!(forms.contains(&key.0));
            for f in forms {
                assert!(lex.analyses(f).any(|k| k == key));
            }
        }
        for (form, keys) in &lex.reverse {
            for key in keys {
                assert!(lex.entries[key].contains(form));
            }
        }
        assert_eq!(lex.variants("Went").len(), 4);
    }

    #[test]
    fn lemmatize_inverts_inflection() {
        let lex = InflectionLexicon::bundled();
        for ((lemma, pos), forms) in lex.iter().take(2000) {
            for f in forms {
                // Forms shared between lemmas may resolve elsewhere; the
                // lemma itself must come back to some lemma of this form.
                let back = lex.lemmatize(f, pos);
                assert!(lex.forms(&back, pos).is_some_and(|s| s.contains(f)), "{f} -> {back}");
            }
            let shared = lex.analyses(lemma).filter(|(_, p)| p == pos).count() > 1;
            if !shared {
                assert_eq!(&lex.lemmatize(lemma, pos), lemma);
            }
        }
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(InflectionLexicon::parse("onlyone\n").is_err());
        assert!(InflectionLexicon::parse("a\tv\tb\textra\n").is_err());
    }
}
