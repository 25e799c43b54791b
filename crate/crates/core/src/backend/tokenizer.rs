use crate::error::{Error, Result};

pub type TokenId = u32;

pub trait Tokenizer: Send + Sync {
    /// Stable identifier recorded in manifests.
    fn id(&self) -> String;
    fn encode(&self, text: &str) -> Vec<TokenId>;
    /// Maps ids back to text, dropping padding and end-of-sequence markers.
    fn decode(&self, ids: &[TokenId]) -> String;
    fn vocab_size(&self) -> usize;
    fn eos_id(&self) -> TokenId;
    fn pad_id(&self) -> TokenId;

    /// The id of `text` when it encodes to exactly one token.
    fn single_token(&self, text: &str) -> Result<TokenId> {
        match self.encode(text).as_slice() {
            [id] => Ok(*id),
            ids => Err(Error::Tokenizer(format!(
                "{text:?} encodes to {} tokens, expected 1",
                ids.len()
            ))),
        }
    }
}

const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Word-level tokenizer with no fitted vocabulary.
///
/// Layout: `0` pad, `1` eos, `2` unk, then the 26 capital letters, then
/// ASCII punctuation, then hash buckets for everything else. Single capital
/// letters always get their dedicated id, so option letters are one token.
#[derive(Debug, Clone)]
pub struct ToyTokenizer {
    vocab_size: usize,
}

pub const PAD: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
const LETTER_BASE: TokenId = 3;
const PUNCT_BASE: TokenId = LETTER_BASE + 26;
const BUCKET_BASE: TokenId = PUNCT_BASE + PUNCTUATION.len() as TokenId;

impl ToyTokenizer {
    pub const MIN_VOCAB: usize = BUCKET_BASE as usize + 64;

    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size < Self::MIN_VOCAB {
            return Err(Error::Config(format!(
                "toy vocabulary needs at least {} entries",
                Self::MIN_VOCAB
            )));
        }
        Ok(Self { vocab_size })
    }

    fn buckets(&self) -> u64 {
        (self.vocab_size - BUCKET_BASE as usize) as u64
    }

    fn word_id(&self, word: &str) -> TokenId {
        let mut chars = word.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            if c.is_ascii_uppercase() {
                return LETTER_BASE + (c as u8 - b'A') as TokenId;
            }
        }
        let lower = word.to_lowercase();
        BUCKET_BASE + (fnv1a(lower.as_bytes()) % self.buckets()) as TokenId
    }

    pub fn letter_id(letter: char) -> Option<TokenId> {
        letter
            .is_ascii_uppercase()
            .then(|| LETTER_BASE + (letter as u8 - b'A') as TokenId)
    }
}

impl Tokenizer for ToyTokenizer {
    fn id(&self) -> String {
        format!("toy-word-hash-{}", self.vocab_size)
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        let mut word = String::new();
        let flush = |word: &mut String, out: &mut Vec<TokenId>| {
            if !word.is_empty() {
                out.push(self.word_id(word));
                word.clear();
            }
        };
        for c in text.chars() {
            if c.is_whitespace() {
                flush(&mut word, &mut out);
            } else if let Some(p) = PUNCTUATION.find(c) {
                flush(&mut word, &mut out);
                out.push(PUNCT_BASE + p as TokenId);
            } else {
                word.push(c);
            }
        }
        flush(&mut word, &mut out);
        out
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        let pieces: Vec<String> = ids
            .iter()
            .filter(|&&id| id != PAD && id != EOS)
            .map(|&id| match id {
                UNK => "<unk>".to_string(),
                id if (LETTER_BASE..PUNCT_BASE).contains(&id) => {
                    ((b'A' + (id - LETTER_BASE) as u8) as char).to_string()
                }
                id if (PUNCT_BASE..BUCKET_BASE).contains(&id) => {
                    PUNCTUATION[(id - PUNCT_BASE) as usize..][..1].to_string()
                }
                id => format!("<w{id}>"),
            })
            .collect();
        pieces.join(" ")
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn eos_id(&self) -> TokenId {
        EOS
    }

    fn pad_id(&self) -> TokenId {
        PAD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters_are_single_tokens() {
        let tok = ToyTokenizer::new(1024).unwrap();
        for c in 'A'..='Z' {
            let id = tok.single_token(&c.to_string()).unwrap();
            assert_eq!(Some(id), ToyTokenizer::letter_id(c));
            assert_eq!(tok.decode(&[id]), c.to_string());
        }
        assert!(tok.single_token("AB").is_ok());
        assert!(tok.single_token("A B").is_err());
    }

    #[test]
    fn punctuation_splits() {
        let tok = ToyTokenizer::new(1024).unwrap();
        let ids = tok.encode("category: card_arrival");
        assert_eq!(ids.len(), 5);
        assert_eq!(tok.decode(&ids[1..2]), ":");
        assert_eq!(tok.encode("###").len(), 3);
        assert_eq!(tok.encode("  "), Vec::<TokenId>::new());
    }

    #[test]
    fn ids_in_range_and_case_folded() {
        let tok = ToyTokenizer::new(200).unwrap();
        for id in tok.encode("The quick brown fox, jumps over 13 lazy dogs! Über") {
            assert!((id as usize) < tok.vocab_size());
        }
        assert_eq!(tok.encode("Headline"), tok.encode("headline"));
        assert!(ToyTokenizer::new(10).is_err());
    }

    #[test]
    fn decode_skips_control() {
        let tok = ToyTokenizer::new(1024).unwrap();
        assert_eq!(tok.decode(&[PAD, 3, EOS]), "A");
    }
}
