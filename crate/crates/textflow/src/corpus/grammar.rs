//! Three synthetic grammars, each with a binary validity oracle.

use crate::rng::Rng;

const DETERMINERS: &[&str] = &["the", "a"];
const ADJECTIVES: &[&str] = &["red", "big", "old", "shy"];
const NOUNS: &[&str] = &["cat", "dog", "bird", "fox", "owl"];
const VERBS: &[&str] = &["sees", "likes", "finds", "chases"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grammar {
    /// Infix integer arithmetic over `+ - *` with optional parentheses.
    Arithmetic,
    /// Balanced `()` and `[]` bracket strings.
    BalancedParens,
    /// Determiner/adjective/noun/verb sentences from fixed word lists.
    TemplatedSentences,
}

impl Grammar {
    pub fn charset(&self) -> Vec<char> {
        match self {
            Grammar::Arithmetic => "0123456789+-*()".chars().collect(),
            Grammar::BalancedParens => "()[]".chars().collect(),
            Grammar::TemplatedSentences => {
                let mut chars: Vec<char> = ('a'..='z').collect();
                chars.push(' ');
                chars.push('.');
                chars
            }
        }
    }

    /// Shortest string the generator can emit.
    pub fn min_len(&self) -> usize {
        match self {
            Grammar::Arithmetic => 1,
            Grammar::BalancedParens => 2,
            // "a cat sees a cat."
            Grammar::TemplatedSentences => 17,
        }
    }

    /// Emits one valid string of at most `max_len` characters.
    pub fn generate(&self, max_len: usize, rng: &mut Rng) -> String {
        match self {
            Grammar::Arithmetic => gen_arithmetic(max_len, rng),
            Grammar::BalancedParens => gen_parens(max_len, rng),
            Grammar::TemplatedSentences => gen_sentence(max_len, rng),
        }
    }

    /// The validity oracle.
    pub fn is_valid(&self, text: &str) -> bool {
        match self {
            Grammar::Arithmetic => eval_arithmetic(text).is_some(),
            Grammar::BalancedParens => check_balanced(text),
            Grammar::TemplatedSentences => check_sentence(text),
        }
    }
}

// ── arithmetic ───────────────────────────────────────────────────────────

fn gen_number(rng: &mut Rng) -> String {
    if rng.bernoulli(0.5) {
        rng.below(10).to_string()
    } else {
        (10 + rng.below(90)).to_string()
    }
}

fn gen_expr(depth: usize, rng: &mut Rng) -> String {
    if depth == 0 || rng.bernoulli(0.35) {
        return gen_number(rng);
    }
    let op = ['+', '-', '*'][rng.below(3)];
    let left = gen_expr(depth - 1, rng);
    let right = gen_expr(depth - 1, rng);
    let wrap = |s: String, rng: &mut Rng| {
        if s.len() > 1 && rng.bernoulli(0.4) {
            format!("({s})")
        } else {
            s
        }
    };
    format!("{}{}{}", wrap(left, rng), op, wrap(right, rng))
}

fn gen_arithmetic(max_len: usize, rng: &mut Rng) -> String {
    for depth in [3usize, 2, 1, 0] {
        for _ in 0..8 {
            let s = gen_expr(depth, rng);
            if s.len() <= max_len {
                return s;
            }
        }
    }
    gen_number(rng)
}

/// Recursive-descent evaluation; `None` means the string is not a
/// well-formed expression.
pub fn eval_arithmetic(text: &str) -> Option<i128> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0usize;
    let value = parse_expr(&chars, &mut pos)?;
    if pos == chars.len() {
        Some(value)
    } else {
        None
    }
}

fn parse_expr(chars: &[char], pos: &mut usize) -> Option<i128> {
    let mut value = parse_term(chars, pos)?;
    while *pos < chars.len() && (chars[*pos] == '+' || chars[*pos] == '-') {
        let op = chars[*pos];
        *pos += 1;
        let rhs = parse_term(chars, pos)?;
        value = if op == '+' {
            value.checked_add(rhs)?
        } else {
            value.checked_sub(rhs)?
        };
    }
    Some(value)
}

fn parse_term(chars: &[char], pos: &mut usize) -> Option<i128> {
    let mut value = parse_factor(chars, pos)?;
    while *pos < chars.len() && chars[*pos] == '*' {
        *pos += 1;
        let rhs = parse_factor(chars, pos)?;
        value = value.checked_mul(rhs)?;
    }
    Some(value)
}

fn parse_factor(chars: &[char], pos: &mut usize) -> Option<i128> {
    if *pos >= chars.len() {
        return None;
    }
    if chars[*pos] == '(' {
        *pos += 1;
        let value = parse_expr(chars, pos)?;
        if *pos >= chars.len() || chars[*pos] != ')' {
            return None;
        }
        *pos += 1;
        return Some(value);
    }
    let start = *pos;
    while *pos < chars.len() && chars[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if *pos == start {
        return None;
    }
    chars[start..*pos].iter().collect::<String>().parse().ok()
}

// ── balanced brackets ────────────────────────────────────────────────────

fn gen_parens(max_len: usize, rng: &mut Rng) -> String {
    // Budget counts characters; every unit consumes an even number.
    fn gen_units(budget: usize, rng: &mut Rng, out: &mut String) {
        let mut remaining = budget;
        while remaining >= 2 {
            let (open, close) = if rng.bernoulli(0.5) {
                ('(', ')')
            } else {
                ('[', ']')
            };
            let inner_budget = if remaining >= 4 && rng.bernoulli(0.45) {
                rng.below((remaining - 2) / 2 + 1) * 2
            } else {
                0
            };
            out.push(open);
            gen_units(inner_budget, rng, out);
            out.push(close);
            remaining -= 2 + inner_budget;
            if rng.bernoulli(0.4) {
                break;
            }
        }
    }
    let budget = 2 + rng.below(max_len / 2) * 2;
    let mut out = String::new();
    gen_units(budget.min(max_len), rng, &mut out);
    if out.is_empty() {
        out.push('(');
        out.push(')');
    }
    out
}

pub fn check_balanced(text: &str) -> bool {
    if text.is_empty() {
        return false;
    }
    let mut stack = Vec::new();
    for c in text.chars() {
        match c {
            '(' | '[' => stack.push(c),
            ')' => {
                if stack.pop() != Some('(') {
                    return false;
                }
            }
            ']' => {
                if stack.pop() != Some('[') {
                    return false;
                }
            }
            _ => return false,
        }
    }
    stack.is_empty()
}

// ── templated sentences ──────────────────────────────────────────────────

fn gen_sentence(max_len: usize, rng: &mut Rng) -> String {
    loop {
        let mut words = Vec::new();
        words.push(DETERMINERS[rng.below(DETERMINERS.len())]);
        if rng.bernoulli(0.4) {
            words.push(ADJECTIVES[rng.below(ADJECTIVES.len())]);
        }
        words.push(NOUNS[rng.below(NOUNS.len())]);
        words.push(VERBS[rng.below(VERBS.len())]);
        words.push(DETERMINERS[rng.below(DETERMINERS.len())]);
        if rng.bernoulli(0.4) {
            words.push(ADJECTIVES[rng.below(ADJECTIVES.len())]);
        }
        words.push(NOUNS[rng.below(NOUNS.len())]);
        let sentence = format!("{}.", words.join(" "));
        if sentence.len() <= max_len {
            return sentence;
        }
    }
}

pub fn check_sentence(text: &str) -> bool {
    let Some(body) = text.strip_suffix('.') else {
        return false;
    };
    let words: Vec<&str> = body.split(' ').collect();
    if words.iter().any(|w| w.is_empty()) {
        return false;
    }
    // DET [ADJ] NOUN VERB DET [ADJ] NOUN
    fn noun_phrase(words: &[&str], idx: &mut usize) -> bool {
        if *idx >= words.len() || !DETERMINERS.contains(&words[*idx]) {
            return false;
        }
        *idx += 1;
        if *idx < words.len() && ADJECTIVES.contains(&words[*idx]) {
            *idx += 1;
        }
        if *idx >= words.len() || !NOUNS.contains(&words[*idx]) {
            return false;
        }
        *idx += 1;
        true
    }
    let mut idx = 0usize;
    if !noun_phrase(&words, &mut idx) {
        return false;
    }
    if idx >= words.len() || !VERBS.contains(&words[idx]) {
        return false;
    }
    idx += 1;
    noun_phrase(&words, &mut idx) && idx == words.len()
}
