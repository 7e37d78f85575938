//! Lenient reader for the JSON / Python-literal hybrids chat models emit.
//!
//! Accepts bare or quoted keys, single, double, backtick and typographic
//! quotes, trailing commas, and `True`/`False`/`None`. A single quote closes
//! a string only when the next non-space character ends a value
//! (`,` `:` `]` `}` or end of input); otherwise it is read as an apostrophe,
//! so `'the dog's bowl'` stays one string.

use serde_json::{Map, Number, Value};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message} at byte {offset}")]
pub struct LiteralError {
    pub offset: usize,
    pub message: String,
}

pub fn parse(text: &str) -> Result<Value, LiteralError> {
    let mut p = Reader { src: text, pos: 0 };
    p.skip_ws();
    let v = p.value()?;
    p.skip_ws();
    if p.pos < text.len() {
        return Err(p.err("trailing characters after value"));
    }
    Ok(v)
}

struct Reader<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, message: &str) -> LiteralError {
        LiteralError {
            offset: self.pos,
            message: message.to_string(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn value(&mut self) -> Result<Value, LiteralError> {
        match self.peek() {
            None => Err(self.err("unexpected end of input")),
            Some('{') => self.object(),
            Some('[') | Some('(') => self.array(),
            Some(c) if is_open_quote(c) => self.string().map(Value::String),
            Some(c) if c == '-' || c == '+' || c == '.' || c.is_ascii_digit() => self.number(),
            Some(_) => self.bare(),
        }
    }

    fn object(&mut self) -> Result<Value, LiteralError> {
        self.bump();
        let mut map = Map::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some('}') => {
                    self.bump();
                    return Ok(Value::Object(map));
                }
                None => return Err(self.err("unterminated object")),
                _ => {}
            }
            let key = match self.peek() {
                Some(c) if is_open_quote(c) => self.string()?,
                _ => self.bare_key()?,
            };
            self.skip_ws();
            if self.bump() != Some(':') {
                return Err(self.err("expected ':' after key"));
            }
            self.skip_ws();
            let v = self.value()?;
            map.insert(key, v);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some('}') => {}
                None => return Err(self.err("unterminated object")),
                Some(_) => return Err(self.err("expected ',' or '}'")),
            }
        }
    }

    fn array(&mut self) -> Result<Value, LiteralError> {
        let close = if self.bump() == Some('(') { ')' } else { ']' };
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c == close => {
                    self.bump();
                    return Ok(Value::Array(items));
                }
                None => return Err(self.err("unterminated list")),
                _ => {}
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                None => return Err(self.err("unterminated list")),
                Some(_) => return Err(self.err("expected ',' or end of list")),
            }
        }
    }

    fn string(&mut self) -> Result<String, LiteralError> {
        let start = self.pos;
        let open = self.bump().expect("caller checked quote");
        let mut out = String::new();
        loop {
            let Some(c) = self.bump() else {
                self.pos = start;
                return Err(self.err("unterminated string"));
            };
            if c == '\\' {
                match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some('r') => out.push('\r'),
                    Some('u') => {
                        let hex: String = (0..4).filter_map(|_| self.bump()).collect();
                        let ch = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| self.err("bad unicode escape"))?;
                        out.push(ch);
                    }
                    Some(other) => out.push(other),
                    None => return Err(self.err("unterminated escape")),
                }
                continue;
            }
            if closes(open, c) {
                if is_single(c) && !self.at_value_end() {
                    out.push(c);
                    continue;
                }
                return Ok(out);
            }
            out.push(c);
        }
    }

    /// True when only whitespace separates the cursor from a value terminator.
    fn at_value_end(&self) -> bool {
        let rest = self.src[self.pos..].trim_start();
        matches!(rest.chars().next(), None | Some(',' | ':' | ']' | '}' | ')'))
    }

    fn number(&mut self) -> Result<Value, LiteralError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() || matches!(c, '-' | '+' | '.' | 'e' | 'E') {
                self.bump();
            } else {
                break;
            }
        }
        let text = &self.src[start..self.pos];
        let text = text.strip_prefix('+').unwrap_or(text);
        if let Ok(i) = text.parse::<i64>() {
            return Ok(Value::Number(i.into()));
        }
        text.parse::<f64>()
            .ok()
            .and_then(Number::from_f64)
            .map(Value::Number)
            .ok_or_else(|| LiteralError {
                offset: start,
                message: format!("invalid number {text:?}"),
            })
    }

    fn bare_key(&mut self) -> Result<String, LiteralError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c == ':' || c == ',' || c == '}' || c == '\n' {
                break;
            }
            self.bump();
        }
        let key = self.src[start..self.pos].trim();
        if key.is_empty() {
            self.pos = start;
            return Err(self.err("expected key"));
        }
        Ok(key.to_string())
    }

    fn bare(&mut self) -> Result<Value, LiteralError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_alphanumeric() || c == '_' {
                self.bump();
            } else {
                break;
            }
        }
        match &self.src[start..self.pos] {
            "true" | "True" => Ok(Value::Bool(true)),
            "false" | "False" => Ok(Value::Bool(false)),
            "null" | "None" => Ok(Value::Null),
            _ => {
                self.pos = start;
                Err(self.err("unexpected token"))
            }
        }
    }
}

fn is_open_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '`' | '\u{2018}' | '\u{201C}')
}

fn is_single(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '`')
}

fn closes(open: char, c: char) -> bool {
    match open {
        '"' => c == '"',
        '\u{201C}' => c == '\u{201D}' || c == '"',
        // backtick and typographic openers are closed by any single quote
        _ => is_single(c),
    }
}
