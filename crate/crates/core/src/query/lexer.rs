use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// `$R`, stored without the dollar sign.
    RelVar(String),
    Number(f64),
    Str(String),
    Comma,
    Dot,
    LParen,
    RParen,
    Star,
    Minus,
    Semicolon,
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub column: usize,
}

pub(crate) fn syntax(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Split a statement into tokens with 1-based positions. String literals
/// use `'...'` (with `''` as an escaped quote) or the typeset form
/// `` `...' ``; `--` starts a line comment.
pub fn tokenize(src: &str) -> Result<Vec<Spanned>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '-' && chars.get(i + 1) == Some(&'-') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '-' {
            bump!();
            out.push(Spanned {
                tok: Tok::Minus,
                line: l0,
                column: c0,
            });
            continue;
        }
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: l0,
                column: c0,
            })
        };
        match c {
            ',' | '.' | '(' | ')' | '*' | ';' | '=' => {
                // a dot directly followed by a digit starts a number
                if c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit) {
                    let (tok, n) = number(&chars[i..], l0, c0)?;
                    (0..n).for_each(|_| bump!());
                    push(&mut out, tok);
                    continue;
                }
                let tok = match c {
                    ',' => Tok::Comma,
                    '.' => Tok::Dot,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '*' => Tok::Star,
                    ';' => Tok::Semicolon,
                    _ => Tok::Eq,
                };
                bump!();
                push(&mut out, tok);
            }
            '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (tok, n) = match (c, next) {
                    ('!', Some('=')) => (Tok::Ne, 2),
                    ('<', Some('>')) => (Tok::Ne, 2),
                    ('<', Some('=')) => (Tok::Le, 2),
                    ('>', Some('=')) => (Tok::Ge, 2),
                    ('<', _) => (Tok::Lt, 1),
                    ('>', _) => (Tok::Gt, 1),
                    _ => return Err(syntax(l0, c0, "unexpected `!`")),
                };
                (0..n).for_each(|_| bump!());
                push(&mut out, tok);
            }
            '\'' | '`' => {
                bump!();
                let mut s = String::new();
                loop {
                    let Some(&d) = chars.get(i) else {
                        return Err(syntax(l0, c0, "unterminated string literal"));
                    };
                    if d == '\'' {
                        if c == '\'' && chars.get(i + 1) == Some(&'\'') {
                            s.push('\'');
                            bump!();
                            bump!();
                            continue;
                        }
                        bump!();
                        break;
                    }
                    if c == '`' && d == '`' {
                        bump!();
                        break;
                    }
                    s.push(d);
                    bump!();
                }
                push(&mut out, Tok::Str(s));
            }
            '$' => {
                bump!();
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                if start == i {
                    return Err(syntax(l0, c0, "expected a name after `$`"));
                }
                push(&mut out, Tok::RelVar(chars[start..i].iter().collect()));
            }
            c if c.is_ascii_digit() => {
                let (tok, n) = number(&chars[i..], l0, c0)?;
                (0..n).for_each(|_| bump!());
                push(&mut out, tok);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    bump!();
                }
                push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(syntax(l0, c0, format!("unexpected character `{other}`"))),
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

fn number(chars: &[char], line: usize, column: usize) -> Result<(Tok, usize)> {
    let mut n = 0;
    while n < chars.len() && (chars[n].is_ascii_digit() || chars[n] == '.') {
        n += 1;
    }
    if n < chars.len() && matches!(chars[n], 'e' | 'E') {
        let mut m = n + 1;
        if m < chars.len() && matches!(chars[m], '+' | '-') {
            m += 1;
        }
        if m < chars.len() && chars[m].is_ascii_digit() {
            n = m;
            while n < chars.len() && chars[n].is_ascii_digit() {
                n += 1;
            }
        }
    }
    let text: String = chars[..n].iter().collect();
    let x: f64 = text
        .parse()
        .map_err(|_| syntax(line, column, format!("bad number `{text}`")))?;
    Ok((Tok::Number(x), n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        tokenize(s).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn quotes_and_operators() {
        assert_eq!(
            toks("x.a <> `Frozen Goods' AND y != 'it''s' -- c\n>= 0.5"),
            vec![
                Tok::Ident("x".into()),
                Tok::Dot,
                Tok::Ident("a".into()),
                Tok::Ne,
                Tok::Str("Frozen Goods".into()),
                Tok::Ident("AND".into()),
                Tok::Ident("y".into()),
                Tok::Ne,
                Tok::Str("it's".into()),
                Tok::Ge,
                Tok::Number(0.5),
                Tok::Eof,
            ]
        );
        assert_eq!(toks("$R.X")[0], Tok::RelVar("R".into()));
    }

    #[test]
    fn positions_and_errors() {
        let t = tokenize("SELECT\n  a").unwrap();
        assert_eq!((t[1].line, t[1].column), (2, 3));
        assert!(matches!(
            tokenize("'open"),
            Err(Error::Syntax {
                line: 1,
                column: 1,
                ..
            })
        ));
        assert!(matches!(
            tokenize("a # b"),
            Err(Error::Syntax { column: 3, .. })
        ));
    }
}
