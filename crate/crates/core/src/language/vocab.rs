use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::tokenize::{join_pieces, placeholder, split_pieces, Piece};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const IMG_OPEN: u32 = 4;
pub const IMG_CLOSE: u32 = 5;
pub const PLACEHOLDER_BASE: u32 = 6;

const RESERVED_NAMES: [&str; 6] = ["<pad>", "<bos>", "<eos>", "<unk>", "<image>", "</image>"];

/// Word-level vocabulary. Ids `0..6` are the fixed specials, the next
/// `max_images` ids are `<image-1>..<image-K>`, and induced words follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    max_images: usize,
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Induces a vocabulary from every word and punctuation mark in `texts`,
    /// sorted so the result does not depend on input order.
    pub fn induce<'a>(texts: impl IntoIterator<Item = &'a str>, max_images: usize) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            for p in split_pieces(t) {
                if let Piece::Word(w) = p {
                    set.insert(w);
                }
            }
        }
        Self::from_words(set.into_iter().collect(), max_images)
    }

    fn from_words(words: Vec<String>, max_images: usize) -> Self {
        let base = PLACEHOLDER_BASE + max_images as u32;
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), base + i as u32)).collect();
        Vocabulary { max_images, words, index }
    }

    pub fn len(&self) -> usize {
        PLACEHOLDER_BASE as usize + self.max_images + self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_images(&self) -> usize {
        self.max_images
    }

    pub fn placeholder_id(&self, image: usize) -> Option<u32> {
        (1..=self.max_images).contains(&image).then(|| PLACEHOLDER_BASE + image as u32 - 1)
    }

    /// 1-based image index of a placeholder id.
    pub fn placeholder_index(&self, id: u32) -> Option<usize> {
        let end = PLACEHOLDER_BASE + self.max_images as u32;
        (PLACEHOLDER_BASE..end).contains(&id).then(|| (id - PLACEHOLDER_BASE) as usize + 1)
    }

    pub fn word_id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> String {
        if let Some(name) = RESERVED_NAMES.get(id as usize) {
            return (*name).to_string();
        }
        if let Some(i) = self.placeholder_index(id) {
            return placeholder(i);
        }
        let base = PLACEHOLDER_BASE as usize + self.max_images;
        self.words.get(id as usize - base).cloned().unwrap_or_else(|| "<unk>".to_string())
    }

    /// Ids of `text` without BOS/EOS. Unknown words and out-of-range
    /// placeholders map to UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        split_pieces(text)
            .into_iter()
            .map(|p| match p {
                Piece::Word(w) => self.word_id(&w),
                Piece::Placeholder(i) => self.placeholder_id(i).unwrap_or(UNK),
            })
            .collect()
    }

    /// `[BOS] ++ encode(text) ++ [EOS]`.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::with_capacity(8);
        ids.push(BOS);
        ids.extend(self.encode(text));
        ids.push(EOS);
        ids
    }

    /// Text of `ids`, skipping PAD/BOS/EOS.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let pieces: Vec<String> = ids
            .iter()
            .filter(|&&id| !matches!(id, PAD | BOS | EOS))
            .map(|&id| self.token(id))
            .collect();
        join_pieces(&pieces)
    }

    /// One token per line: the placeholders first, then the words. Line `n`
    /// holds the token with id `6 + n`.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        for i in 1..=self.max_images {
            out.push_str(&placeholder(i));
            out.push('\n');
        }
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        let mut lines = s.lines().peekable();
        let mut max_images = 0;
        while let Some(line) = lines.peek() {
            if *line == placeholder(max_images + 1) {
                max_images += 1;
                lines.next();
            } else {
                break;
            }
        }
        let words: Vec<String> = lines.map(str::to_string).collect();
        let mut seen = BTreeSet::new();
        for w in &words {
            if w.is_empty() || w.chars().any(char::is_whitespace) {
                return Err(Error::format(format!("invalid vocabulary entry {w:?}")));
            }
            if !seen.insert(w) {
                return Err(Error::format(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Self::from_words(words, max_images))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file_string(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::induce(["Scan shows edema.", "the scan, shows"], 4)
    }

    #[test]
    fn reserved_ids_are_fixed() {
        let v = vocab();
        assert_eq!(v.placeholder_id(1), Some(6));
        assert_eq!(v.placeholder_id(4), Some(9));
        assert_eq!(v.placeholder_id(5), None);
        // First induced word sits right after the placeholders.
        assert!(v.word_id(",") >= 10);
        assert!((10..v.len() as u32).contains(&v.word_id("scan")));
        assert_eq!(v.word_id("pneumothorax"), UNK);
    }

    #[test]
    fn tokenize_examples() {
        let v = vocab();
        assert_eq!(v.tokenize(""), vec![BOS, EOS]);
        let ids = v.tokenize("scan <image-1> shows edema");
        assert_eq!(ids, vec![BOS, v.word_id("scan"), 6, v.word_id("shows"), v.word_id("edema"), EOS]);
        assert_eq!(v.detokenize(&ids), "scan <image-1> shows edema");
    }

    #[test]
    fn file_round_trip() {
        let v = vocab();
        let s = v.to_file_string();
        assert!(s.starts_with("<image-1>\n<image-2>\n<image-3>\n<image-4>\n"));
        assert_eq!(Vocabulary::from_file_string(&s).unwrap(), v);
        assert!(Vocabulary::from_file_string("a\na\n").is_err());
    }

    proptest! {
        #[test]
        fn detokenize_then_tokenize_is_identity(picks in proptest::collection::vec(0usize..8, 0..12)) {
            let v = Vocabulary::induce(["the left lung shows edema , nodule ( mass ) ."], 2);
            let pool: Vec<u32> = ["the", "left", "lung", "edema", ",", "nodule", "(", "."]
                .iter()
                .map(|w| v.word_id(w))
                .collect();
            let mut ids = vec![BOS];
            ids.extend(picks.iter().map(|&i| pool[i]));
            ids.push(EOS);
            prop_assert_eq!(v.tokenize(&v.detokenize(&ids)), ids);
        }
    }
}
