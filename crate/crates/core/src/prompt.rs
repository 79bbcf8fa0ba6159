//! Annotated prompt specifications: sub-prompt token ranges and per-token
//! classes.
//!
//! Tokenization is not performed here. A prompt file declares the token
//! count and the `[start, end)` range each sub-prompt occupies, exactly as a
//! fixed tokenizer would have produced them. The grammar is line oriented:
//!
//! ```text
//! # comments start with '#'
//! d_c = 7
//! sub = "Red cube" 0 3
//! sub = "in a forest" 3 7 background
//! tok 2 instance          # explicit class for token 2, beats the lexicon
//! lex red attribute       # lexicon entry carried with the prompt
//! allow_multiple_background = true
//! ```
//!
//! Words of a label are laid onto the tokens of its range in order. When a
//! range has more tokens than its label has words, the extra tokens continue
//! the last word (sub-word pieces); surplus words beyond the range are
//! dropped.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TokenClass {
    Attribute,
    Instance,
    Background,
    Filler,
}

impl TokenClass {
    pub const ALL: [TokenClass; 4] = [
        TokenClass::Attribute,
        TokenClass::Instance,
        TokenClass::Background,
        TokenClass::Filler,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Attribute => "attribute",
            TokenClass::Instance => "instance",
            TokenClass::Background => "background",
            TokenClass::Filler => "filler",
        }
    }
}

impl fmt::Display for TokenClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenClass {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "attribute" | "attr" | "a" => Ok(TokenClass::Attribute),
            "instance" | "inst" | "i" => Ok(TokenClass::Instance),
            "background" | "bg" | "b" => Ok(TokenClass::Background),
            "filler" | "f" => Ok(TokenClass::Filler),
            other => Err(PromptError::Syntax {
                line: 0,
                msg: format!("unknown token class `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PromptError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("sub-prompt ranges [{a_start},{a_end}) and [{b_start},{b_end}) overlap")]
    Overlap {
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("range [{start},{end}) lies outside [0,{d_c})")]
    Range { start: usize, end: usize, d_c: usize },
    #[error("sub-prompt `{label}` has an empty token range")]
    EmptySubPrompt { label: String },
    #[error("{count} sub-prompts are flagged background; set allow_multiple_background to permit")]
    MultipleBackground { count: usize },
    #[error("word `{word}` is not in the lexicon")]
    UnknownWord { word: String },
}

impl PromptError {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Syntax { .. } => "SyntaxError",
            Self::Overlap { .. } => "OverlapError",
            Self::Range { .. } => "RangeError",
            Self::EmptySubPrompt { .. } => "EmptySubPrompt",
            Self::MultipleBackground { .. } => "MultipleBackground",
            Self::UnknownWord { .. } => "UnknownWord",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubPrompt {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub is_background: bool,
}

impl SubPrompt {
    pub fn contains(&self, token: usize) -> bool {
        (self.start..self.end).contains(&token)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }
}

/// Maps lower-cased surface words to token classes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, TokenClass>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, class: TokenClass) {
        self.entries.insert(normalize_word(word), class);
    }

    pub fn get(&self, word: &str) -> Option<TokenClass> {
        self.entries.get(&normalize_word(word)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: &Lexicon) {
        for (w, c) in &other.entries {
            self.entries.insert(w.clone(), *c);
        }
    }

    /// Parses `word class` lines; `#` starts a comment.
    pub fn parse(source: &str) -> Result<Self, PromptError> {
        let mut lex = Lexicon::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = strip_comment(raw);
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (Some(word), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(syntax(idx + 1, "expected `<word> <class>`"));
            };
            lex.insert(word, parse_class(class, idx + 1)?);
        }
        Ok(lex)
    }
}

impl FromIterator<(&'static str, TokenClass)> for Lexicon {
    fn from_iter<I: IntoIterator<Item = (&'static str, TokenClass)>>(iter: I) -> Self {
        let mut lex = Lexicon::new();
        for (w, c) in iter {
            lex.insert(w, c);
        }
        lex
    }
}

fn normalize_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    d_c: usize,
    sub_prompts: Vec<SubPrompt>,
    token_classes: Vec<TokenClass>,
    overrides: BTreeMap<usize, TokenClass>,
    lexicon: Lexicon,
}

impl PromptSpec {
    /// Validates ranges and derives parse-time classes: background ranges
    /// are `Background`, everything else `Filler`, then overrides apply.
    pub fn new(
        d_c: usize,
        mut sub_prompts: Vec<SubPrompt>,
        overrides: BTreeMap<usize, TokenClass>,
        allow_multiple_background: bool,
    ) -> Result<Self, PromptError> {
        for sp in &sub_prompts {
            if sp.is_empty() {
                return Err(PromptError::EmptySubPrompt {
                    label: sp.label.clone(),
                });
            }
            if sp.end > d_c {
                return Err(PromptError::Range {
                    start: sp.start,
                    end: sp.end,
                    d_c,
                });
            }
        }
        sub_prompts.sort_by_key(|sp| sp.start);
        for pair in sub_prompts.windows(2) {
            if pair[1].start < pair[0].end {
                return Err(PromptError::Overlap {
                    a_start: pair[0].start,
                    a_end: pair[0].end,
                    b_start: pair[1].start,
                    b_end: pair[1].end,
                });
            }
        }
        let n_bg = sub_prompts.iter().filter(|s| s.is_background).count();
        if n_bg > 1 && !allow_multiple_background {
            return Err(PromptError::MultipleBackground { count: n_bg });
        }
        if let Some(&tok) = overrides.keys().find(|&&t| t >= d_c) {
            return Err(PromptError::Range {
                start: tok,
                end: tok + 1,
                d_c,
            });
        }
        let mut spec = Self {
            d_c,
            sub_prompts,
            token_classes: vec![TokenClass::Filler; d_c],
            overrides,
            lexicon: Lexicon::new(),
        };
        spec.token_classes = spec.default_classes();
        Ok(spec)
    }

    fn default_classes(&self) -> Vec<TokenClass> {
        let mut classes = vec![TokenClass::Filler; self.d_c];
        for sp in self.sub_prompts.iter().filter(|s| s.is_background) {
            classes[sp.start..sp.end].fill(TokenClass::Background);
        }
        for (&tok, &class) in &self.overrides {
            classes[tok] = class;
        }
        classes
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn sub_prompts(&self) -> &[SubPrompt] {
        &self.sub_prompts
    }

    pub fn token_classes(&self) -> &[TokenClass] {
        &self.token_classes
    }

    pub fn class_of(&self, token: usize) -> TokenClass {
        self.token_classes[token]
    }

    /// Lexicon entries declared inside the prompt file.
    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn overrides(&self) -> &BTreeMap<usize, TokenClass> {
        &self.overrides
    }

    /// Index of the sub-prompt whose range holds `token`.
    pub fn sub_prompt_of(&self, token: usize) -> Option<usize> {
        self.sub_prompts.iter().position(|sp| sp.contains(token))
    }

    pub fn tokens_of_class(&self, class: TokenClass) -> Vec<usize> {
        (0..self.d_c)
            .filter(|&t| self.token_classes[t] == class)
            .collect()
    }

    pub fn class_counts(&self) -> BTreeMap<TokenClass, usize> {
        let mut counts = BTreeMap::new();
        for &c in &self.token_classes {
            *counts.entry(c).or_insert(0) += 1;
        }
        counts
    }

    /// Surface word laid onto each token, with the token's offset inside
    /// that word's span. Tokens outside every sub-prompt get `None`.
    pub fn token_words(&self) -> Vec<Option<(String, usize)>> {
        let mut out = vec![None; self.d_c];
        for sp in &self.sub_prompts {
            let words: Vec<String> = sp
                .label
                .split_whitespace()
                .map(normalize_word)
                .filter(|w| !w.is_empty())
                .collect();
            if words.is_empty() {
                continue;
            }
            for (offset, tok) in (sp.start..sp.end).enumerate() {
                let wi = offset.min(words.len() - 1);
                let piece = offset - wi;
                out[tok] = Some((words[wi].clone(), piece));
            }
        }
        out
    }

    /// True when both prompts have the same token count and class layout.
    pub fn same_layout(&self, other: &PromptSpec) -> bool {
        self.d_c == other.d_c && self.token_classes == other.token_classes
    }
}

/// Parses the line-oriented prompt format described in the module docs.
pub fn parse_prompt_spec(source: &str) -> Result<PromptSpec, PromptError> {
    let mut d_c = None;
    let mut subs = Vec::new();
    let mut overrides = BTreeMap::new();
    let mut lexicon = Lexicon::new();
    let mut allow_multi = false;

    for (idx, raw) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("tok ").or_else(|| line.strip_prefix("tok\t")) {
            let mut parts = rest.split_whitespace();
            let (Some(tok), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(syntax(line_no, "expected `tok <index> <class>`"));
            };
            let tok: usize = parse_num(tok, line_no)?;
            overrides.insert(tok, parse_class(class, line_no)?);
            continue;
        }
        if let Some(rest) = line.strip_prefix("lex ").or_else(|| line.strip_prefix("lex\t")) {
            let mut parts = rest.split_whitespace();
            let (Some(word), Some(class), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(syntax(line_no, "expected `lex <word> <class>`"));
            };
            lexicon.insert(word, parse_class(class, line_no)?);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(syntax(line_no, "expected `key = value`"));
        };
        match key.trim() {
            "d_c" => d_c = Some(parse_num(value.trim(), line_no)?),
            "sub" => subs.push(parse_sub(value.trim(), line_no)?),
            "allow_multiple_background" => {
                allow_multi = match value.trim() {
                    "true" => true,
                    "false" => false,
                    other => return Err(syntax(line_no, &format!("expected bool, got `{other}`"))),
                }
            }
            other => return Err(syntax(line_no, &format!("unknown key `{other}`"))),
        }
    }
    let d_c = d_c.ok_or_else(|| syntax(0, "missing `d_c`"))?;
    let mut spec = PromptSpec::new(d_c, subs, overrides, allow_multi)?;
    spec.lexicon = lexicon;
    Ok(spec)
}

fn parse_sub(value: &str, line: usize) -> Result<SubPrompt, PromptError> {
    let rest = value
        .strip_prefix('"')
        .ok_or_else(|| syntax(line, "sub label must be double-quoted"))?;
    let (label, rest) = rest
        .split_once('"')
        .ok_or_else(|| syntax(line, "unterminated sub label"))?;
    let parts: Vec<&str> = rest.split_whitespace().collect();
    let is_background = match parts.as_slice() {
        [_, _] => false,
        [_, _, "background"] => true,
        _ => return Err(syntax(line, "expected `sub = \"<label>\" <start> <end> [background]`")),
    };
    Ok(SubPrompt {
        label: label.to_string(),
        start: parse_num(parts[0], line)?,
        end: parse_num(parts[1], line)?,
        is_background,
    })
}

/// Assigns classes from the lexicon. Background sub-prompts default to
/// `Background` for unknown words; elsewhere unknown words become `Filler`,
/// or fail with `UnknownWord` when `strict` is set. Explicit `tok`
/// overrides always win. The lexicon embedded in the spec is consulted
/// after `lexicon`.
pub fn classify_tokens(
    spec: &PromptSpec,
    lexicon: &Lexicon,
    strict: bool,
) -> Result<PromptSpec, PromptError> {
    let words = spec.token_words();
    let mut classes = vec![TokenClass::Filler; spec.d_c];
    for sp in &spec.sub_prompts {
        for tok in sp.start..sp.end {
            let word = words[tok].as_ref().map(|(w, _)| w.as_str());
            let known = word.and_then(|w| lexicon.get(w).or_else(|| spec.lexicon.get(w)));
            classes[tok] = match (known, sp.is_background) {
                (Some(c), _) => c,
                (None, true) => TokenClass::Background,
                (None, false) if strict && !spec.overrides.contains_key(&tok) => {
                    return Err(PromptError::UnknownWord {
                        word: word.unwrap_or("").to_string(),
                    })
                }
                (None, false) => TokenClass::Filler,
            };
        }
    }
    for (&tok, &class) in &spec.overrides {
        classes[tok] = class;
    }
    let mut out = spec.clone();
    out.token_classes = classes;
    Ok(out)
}

fn strip_comment(raw: &str) -> &str {
    // '#' inside a quoted label is kept.
    let mut in_quotes = false;
    for (i, c) in raw.char_indices() {
        match c {
            '"' => in_quotes = !in_quotes,
            '#' if !in_quotes => return raw[..i].trim(),
            _ => {}
        }
    }
    raw.trim()
}

fn syntax(line: usize, msg: &str) -> PromptError {
    PromptError::Syntax {
        line,
        msg: msg.to_string(),
    }
}

fn parse_num(s: &str, line: usize) -> Result<usize, PromptError> {
    s.parse()
        .map_err(|_| syntax(line, &format!("expected a non-negative integer, got `{s}`")))
}

fn parse_class(s: &str, line: usize) -> Result<TokenClass, PromptError> {
    s.parse().map_err(|e| match e {
        PromptError::Syntax { msg, .. } => PromptError::Syntax { line, msg },
        other => other,
    })
}
