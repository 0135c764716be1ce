//! Token counting for budget accounting.

pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Runs of alphanumeric characters count as one token each; every other
/// non-whitespace character counts as one token.
#[derive(Debug, Clone, Copy, Default)]
pub struct DefaultTokenizer;

impl Tokenizer for DefaultTokenizer {
    fn count(&self, text: &str) -> usize {
        count_tokens(text)
    }
}

pub fn count_tokens(text: &str) -> usize {
    let mut n = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                n += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                n += 1;
            }
        }
    }
    n
}

/// Scales another tokenizer's count, rounding up, to approximate a real
/// model's tokenizer.
pub struct ScaledTokenizer<T> {
    pub inner: T,
    pub factor: f64,
}

impl<T: Tokenizer> Tokenizer for ScaledTokenizer<T> {
    fn count(&self, text: &str) -> usize {
        (self.inner.count(text) as f64 * self.factor).ceil() as usize
    }
}

/// Longest prefix of `text` (on a character boundary) whose count is at
/// most `cap`. Relies on counts being monotone in prefix length.
pub fn truncate_to_tokens<'a>(tokenizer: &dyn Tokenizer, text: &'a str, cap: usize) -> &'a str {
    if tokenizer.count(text) <= cap {
        return text;
    }
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let (mut lo, mut hi) = (0usize, bounds.len() - 1);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if tokenizer.count(&text[..bounds[mid]]) <= cap {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    &text[..bounds[lo]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_segmentation() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("a b c"), 3);
        assert_eq!(count_tokens("f(x) := 2+3"), 9);
        assert_eq!(count_tokens("  \n\t "), 0);
    }

    #[test]
    fn scaled_rounds_up() {
        let t = ScaledTokenizer {
            inner: DefaultTokenizer,
            factor: 1.5,
        };
        assert_eq!(t.count("a b c"), 5);
    }

    #[test]
    fn truncation_fits_cap() {
        let text = "one two three four five";
        let cut = truncate_to_tokens(&DefaultTokenizer, text, 3);
        assert_eq!(cut, "one two three ");
        assert_eq!(truncate_to_tokens(&DefaultTokenizer, text, 10), text);
    }
}
